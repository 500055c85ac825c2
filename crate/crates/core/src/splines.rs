//! Polyharmonic splines: interpolation by shifts of the zonal kernel with
//! spectral density `(λ² + ρ²)^{−2k}`, and the deconvolving variant for
//! samples of `m(−Δ) f`.

use std::sync::{Arc, OnceLock};

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bandlimited::{synthesize, BandlimitedFunction};
use crate::geometry::{distance, Point, RHO};
use crate::lattice::Lattice;
use crate::quadrature::{dot2, gauss_legendre, two_sum};
use crate::sampling::{check_multiplier, synthesize_point_vectors, synthesize_point_vectors_many, SampleSet, SamplingError};
use crate::spectral::{
    harish_chandra_density, spherical_functions, GridSpec, Multiplier, SpectralCoeffs, SpectralError, SpectralGrid,
    ZonalKernel,
};

/// Upper end of the spline spectral grid.
pub const SPLINE_LAMBDA_MAX: f64 = 28.0;
/// Default order schedule for iterated reconstruction.
pub const DEFAULT_SCHEDULE: [u32; 3] = [2, 4, 8];

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SplineError {
    #[error("spline order must be at least 1, got {0}")]
    InvalidOrder(u32),
    #[error("kernel of order {k}: spectral tail beyond Λ = {lambda_max} is {relative:e} of K(0), above {tol:e}")]
    TailTooLarge { k: u32, lambda_max: f64, relative: f64, tol: f64 },
    #[error("kernel matrix of order {k} is not positive definite")]
    SingularKernel { k: u32 },
    #[error("multiplier |m({lambda})| = {value:e} vanishes on the band")]
    MultiplierVanishes { lambda: f64, value: f64 },
    #[error("samples do not match the spline system: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Sampling(SamplingError),
}

impl From<SamplingError> for SplineError {
    fn from(e: SamplingError) -> Self {
        match e {
            SamplingError::MultiplierVanishes { lambda, value } => Self::MultiplierVanishes { lambda, value },
            SamplingError::Spectral(s) => Self::Spectral(s),
            other => Self::Sampling(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineOptions {
    /// Largest tolerated `∫_Λ^∞` kernel density relative to `K(0)`.
    pub tail_tol: f64,
    /// Chebyshev truncation tolerance of the kernel table, relative to `K(0)`.
    pub table_tol: f64,
    /// Condition number at which order escalation stops.
    pub condition_guard: f64,
}

impl Default for SplineOptions {
    fn default() -> Self {
        Self { tail_tol: 1e-10, table_tol: 1e-14, condition_guard: 1e12 }
    }
}

/// Spectral grid for splines: the band panel `[0, ω]` plus a tail panel to
/// [`SPLINE_LAMBDA_MAX`].
pub fn spline_grid(omega: f64, plancherel_scale: f64) -> Result<Arc<SpectralGrid>, SpectralError> {
    spline_grid_to(omega, plancherel_scale, SPLINE_LAMBDA_MAX)
}

/// Spline grid reaching `lambda_max`, with the tail panel sized to resolve
/// `φ_λ` oscillations.
pub fn spline_grid_to(omega: f64, plancherel_scale: f64, lambda_max: f64) -> Result<Arc<SpectralGrid>, SpectralError> {
    let n_tail = ((12.0 * (lambda_max - omega)).ceil() as usize).max(256);
    let spec = GridSpec { omega, lambda_max, n_band: 128, n_tail, n_b: 128 };
    Ok(Arc::new(SpectralGrid::new(spec, plancherel_scale)?))
}

fn order_weight(k: u32, lambda: f64) -> f64 {
    (lambda * lambda + RHO * RHO).powi(-2 * k as i32)
}

/// Bound on `∫_Λ^∞ |m|² (λ²+ρ²)^{−2k} dμ`: Gauss–Legendre on `[Λ, 8Λ]` plus
/// the closed-form tail of `λ (λ²+ρ²)^{−2k}` beyond, scaled by the largest
/// sampled `|m|²`.
fn tail_estimate(k: u32, lambda_max: f64, scale: f64, m: Option<&Multiplier>) -> Result<f64, SpectralError> {
    let m2 = |l: f64| m.map_or(1.0, |m| m.eval(l).norm_sqr());
    let far = 8.0 * lambda_max;
    let (nodes, weights) = gauss_legendre(512, lambda_max, far);
    let mut near = 0.0;
    let mut peak: f64 = 0.0;
    for (&l, &w) in nodes.iter().zip(&weights) {
        let q = m2(l);
        peak = peak.max(q);
        near += w * q * order_weight(k, l) * harish_chandra_density(l)? * scale;
    }
    let e = 2.0 * k as f64 - 1.0;
    let rest = scale * peak * (far * far + RHO * RHO).powf(-e) / (2.0 * e);
    Ok(near + rest)
}

/// Zonal kernel `K(t) = ∫₀^Λ |m(λ)|² (λ²+ρ²)^{−2k} φ_λ(t) dμ(λ)`.
#[derive(Debug, Clone)]
pub struct PolyharmonicKernel {
    pub k: u32,
    pub grid: Arc<SpectralGrid>,
    pub multiplier: Option<Multiplier>,
    table: ZonalKernel,
    lambdas: Vec<f64>,
    weights: Vec<f64>,
    relative_tail: f64,
}

impl PolyharmonicKernel {
    /// Tabulates the kernel on `[0, d_max]`; larger arguments are summed directly.
    pub fn new(
        k: u32,
        grid: Arc<SpectralGrid>,
        m: Option<&Multiplier>,
        d_max: f64,
        options: &SplineOptions,
    ) -> Result<Self, SplineError> {
        if k == 0 {
            return Err(SplineError::InvalidOrder(k));
        }
        let meas = grid.measure();
        let lambdas = grid.lambda_nodes.clone();
        let weights: Vec<f64> = lambdas
            .iter()
            .zip(&meas)
            .map(|(&l, &mu)| mu * order_weight(k, l) * m.map_or(1.0, |m| m.eval(l).norm_sqr()))
            .collect();
        let k0: f64 = weights.iter().sum();
        let relative_tail = tail_estimate(k, grid.lambda_max(), grid.plancherel_scale, m)? / k0;
        if !(relative_tail <= options.tail_tol) {
            return Err(SplineError::TailTooLarge {
                k,
                lambda_max: grid.lambda_max(),
                relative: relative_tail,
                tol: options.tail_tol,
            });
        }
        let cw: Vec<Complex64> = weights.iter().map(|&w| Complex64::new(w, 0.0)).collect();
        let table = ZonalKernel::build(&lambdas, &cw, d_max, options.table_tol)?;
        Ok(Self { k, grid, multiplier: m.cloned(), table, lambdas, weights, relative_tail })
    }

    /// `|m(λ)|² (λ²+ρ²)^{−2k}`.
    pub fn spectral_weight(&self, lambda: f64) -> f64 {
        order_weight(self.k, lambda) * self.multiplier.as_ref().map_or(1.0, |m| m.eval(lambda).norm_sqr())
    }

    pub fn eval(&self, t: f64) -> Result<f64, SpectralError> {
        if t == 0.0 {
            return Ok(self.at_origin());
        }
        if t <= self.table.range() {
            return Ok(self.table.eval_re(t));
        }
        self.eval_direct(t)
    }

    /// Quadrature sum without the table.
    pub fn eval_direct(&self, t: f64) -> Result<f64, SpectralError> {
        let phi = spherical_functions(&self.lambdas, t)?;
        Ok(phi.iter().zip(&self.weights).map(|(p, w)| p * w).sum())
    }

    pub fn at_origin(&self) -> f64 {
        self.table.at_origin().re
    }

    /// Estimated spectral mass beyond `Λ` relative to `K(0)`.
    pub fn relative_tail(&self) -> f64 {
        self.relative_tail
    }

    pub fn range(&self) -> f64 {
        self.table.range()
    }
}

/// `K_{2k}(t)` on the default spline grid at band 2 with the calibrated
/// Plancherel constant.
pub fn polyharmonic_kernel(k: u32, t: f64) -> Result<f64, SplineError> {
    let grid = spline_grid(2.0, crate::spectral::calibrated_scale())?;
    PolyharmonicKernel::new(k, grid, None, t.max(1.0), &SplineOptions::default())?.eval(t).map_err(Into::into)
}

/// Interpolating splines of one order on a lattice.
#[derive(Debug, Clone)]
pub struct SplineSystem {
    pub lattice: Arc<Lattice>,
    pub k: u32,
    pub omega: f64,
    pub kernel: PolyharmonicKernel,
    pub kernel_matrix: DMatrix<f64>,
    /// Lagrangian coefficients, computed on first use.
    coeffs: OnceLock<(DMatrix<f64>, DMatrix<f64>)>,
    pub condition: f64,
    pub deconv_multiplier: Option<Multiplier>,
    /// `∫ conj(m) (λ²+ρ²)^{−2k} φ_λ dμ`, present when deconvolving.
    synthesis: Option<ZonalKernel>,
    cholesky: Cholesky<f64, Dyn>,
}

/// Largest eigenvalue of a symmetric positive operator by power iteration.
fn power_max(n: usize, apply: impl Fn(&DVector<f64>) -> DVector<f64>) -> f64 {
    let mut x = DVector::from_fn(n, |j, _| 1.0 + (j as f64 * 0.618_033_988_75).fract());
    x /= x.norm();
    let mut est = 0.0;
    for _ in 0..2000 {
        let y = apply(&x);
        let next = y.norm();
        if next == 0.0 {
            return 0.0;
        }
        x = y / next;
        if (next - est).abs() <= 1e-7 * next {
            return next;
        }
        est = next;
    }
    est
}

/// Factorizes the kernel matrix of order `k` on `lat`. With `m`, the kernel
/// carries `|m|²` and the splines deconvolve samples of `m(−Δ) f`.
pub fn build_splines(
    lat: Arc<Lattice>,
    grid: Arc<SpectralGrid>,
    k: u32,
    m: Option<&Multiplier>,
    options: &SplineOptions,
) -> Result<SplineSystem, SplineError> {
    let omega = grid.omega();
    if let Some(m) = m {
        check_multiplier(&grid, omega, m)?;
    }
    let radius = lat.points.iter().fold(0.0f64, |a, p| a.max(p.polar().0));
    let kernel = PolyharmonicKernel::new(k, grid, m, 2.0 * radius + 1.0, options)?;
    let n = lat.len();
    let pts = &lat.points;
    let diag = kernel.at_origin();
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| (j + 1..n).map(|i| kernel.eval(distance(pts[j], pts[i]))).collect::<Result<Vec<f64>, SpectralError>>())
        .collect::<Result<_, _>>()?;
    let kernel_matrix = DMatrix::from_fn(n, n, |j, i| match j.cmp(&i) {
        std::cmp::Ordering::Equal => diag,
        std::cmp::Ordering::Less => upper[j][i - j - 1],
        std::cmp::Ordering::Greater => upper[i][j - i - 1],
    });
    let cholesky = Cholesky::new(kernel_matrix.clone()).ok_or(SplineError::SingularKernel { k })?;
    let condition = power_max(n, |x| &kernel_matrix * x) * power_max(n, |x| cholesky.solve(x));
    if !condition.is_finite() {
        return Err(SplineError::SingularKernel { k });
    }
    let synthesis = match m {
        Some(m) => Some(ZonalKernel::on_grid(
            &kernel.grid,
            f64::INFINITY,
            |l| m.eval(l).conj() * order_weight(k, l),
            kernel.range(),
            options.table_tol,
        )?),
        None => None,
    };
    Ok(SplineSystem {
        lattice: lat,
        k,
        omega,
        kernel,
        kernel_matrix,
        coeffs: OnceLock::new(),
        condition,
        deconv_multiplier: m.cloned(),
        synthesis,
        cholesky,
    })
}

const REFINEMENT_STEPS: usize = 3;

/// Solves `K X = B` by Cholesky with iterative refinement; residuals are
/// formed in doubled precision and `X = hi + lo`.
fn refined_solve(kmat: &DMatrix<f64>, chol: &Cholesky<f64, Dyn>, rhs: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, m) = rhs.shape();
    let mut hi = chol.solve(rhs);
    let mut lo = DMatrix::zeros(n, m);
    for _ in 0..REFINEMENT_STEPS {
        let cols: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|c| {
                let h = hi.column(c);
                let l = lo.column(c);
                (0..n)
                    .map(|r| -dot2(-rhs[(r, c)], kmat.column(r).as_slice(), h.as_slice(), l.as_slice()))
                    .collect()
            })
            .collect();
        let resid = DMatrix::from_fn(n, m, |r, c| cols[c][r]);
        let d = chol.solve(&resid);
        for ((h, l), dv) in hi.iter_mut().zip(lo.iter_mut()).zip(d.iter()) {
            let (s, e) = two_sum(*h, *l + dv);
            *h = s;
            *l = e;
        }
    }
    (hi, lo)
}

/// Kernel-expansion coefficients `hi + lo`.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub hi: Vec<Complex64>,
    pub lo: Vec<Complex64>,
}

impl Expansion {
    pub fn zeros(n: usize) -> Self {
        Self { hi: vec![Complex64::new(0.0, 0.0); n], lo: vec![Complex64::new(0.0, 0.0); n] }
    }

    /// Coefficients rounded to double precision.
    pub fn combined(&self) -> Vec<Complex64> {
        self.hi.iter().zip(&self.lo).map(|(h, l)| h + l).collect()
    }

    fn parts(&self) -> [(Vec<f64>, Vec<f64>); 2] {
        [
            (self.hi.iter().map(|c| c.re).collect(), self.lo.iter().map(|c| c.re).collect()),
            (self.hi.iter().map(|c| c.im).collect(), self.lo.iter().map(|c| c.im).collect()),
        ]
    }
}

impl SplineSystem {
    pub fn len(&self) -> usize {
        self.lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lattice.is_empty()
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.kernel.grid
    }

    /// Column `ν` of the first matrix holds the Lagrangian coefficients
    /// `α_{·,ν}`; the second carries their refinement below double precision.
    pub fn coeffs(&self) -> &(DMatrix<f64>, DMatrix<f64>) {
        self.coeffs.get_or_init(|| {
            refined_solve(&self.kernel_matrix, &self.cholesky, &DMatrix::identity(self.len(), self.len()))
        })
    }

    /// `max_{ν,μ} |L_ν(x_μ) − δ_{νμ}|`, evaluated in doubled precision.
    pub fn lagrange_defect(&self) -> f64 {
        let n = self.len();
        let (hi, lo) = self.coeffs();
        (0..n)
            .into_par_iter()
            .map(|nu| {
                let h = hi.column(nu);
                let l = lo.column(nu);
                (0..n)
                    .map(|mu| {
                        let target = if mu == nu { 1.0 } else { 0.0 };
                        dot2(-target, self.kernel_matrix.column(mu).as_slice(), h.as_slice(), l.as_slice()).abs()
                    })
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Lagrangian `L_ν` as an expansion.
    pub fn lagrangian(&self, nu: usize) -> Expansion {
        let c = |m: &DMatrix<f64>| m.column(nu).iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let (hi, lo) = self.coeffs();
        Expansion { hi: c(hi), lo: c(lo) }
    }

    /// Expansion with `Σ_ν β_ν K(d(x_μ, x_ν)) = values_μ`.
    pub fn solve(&self, values: &[Complex64]) -> Expansion {
        let n = self.len();
        let rhs = DMatrix::from_fn(n, 2, |j, c| if c == 0 { values[j].re } else { values[j].im });
        let (hi, lo) = refined_solve(&self.kernel_matrix, &self.cholesky, &rhs);
        let pack = |m: &DMatrix<f64>| (0..n).map(|j| Complex64::new(m[(j, 0)], m[(j, 1)])).collect();
        Expansion { hi: pack(&hi), lo: pack(&lo) }
    }

    /// `Σ_ν β_ν K(d(x, x_ν))` at each point.
    pub fn eval_expansion(&self, beta: &Expansion, points: &[Point]) -> Result<Vec<Complex64>, SpectralError> {
        let pts = &self.lattice.points;
        let [(rh, rl), (ih, il)] = beta.parts();
        points
            .par_iter()
            .map(|&x| {
                let kv = pts.iter().map(|&p| self.kernel.eval(distance(x, p))).collect::<Result<Vec<f64>, _>>()?;
                Ok(Complex64::new(dot2(0.0, &kv, &rh, &rl), dot2(0.0, &kv, &ih, &il)))
            })
            .collect()
    }

    /// Deconvolved spline `Σ_ν β_ν K̃(d(x, x_ν))`, `K̃` the kernel with
    /// spectral weight `conj(m) (λ²+ρ²)^{−2k}`, without band projection.
    pub fn eval_deconvolved(&self, beta: &Expansion, points: &[Point]) -> Result<Vec<Complex64>, SpectralError> {
        let Some(syn) = &self.synthesis else {
            return self.eval_expansion(beta, points);
        };
        if let Some(&x) = points.iter().find(|x| self.lattice.points.iter().any(|&p| distance(**x, p) > syn.range())) {
            return Err(SpectralError::InvalidGrid(format!("point ({}, {}) beyond the kernel table", x.u, x.v)));
        }
        let pts = &self.lattice.points;
        let [(rh, rl), (ih, il)] = beta.parts();
        Ok(points
            .par_iter()
            .map(|&x| {
                let (kr, ki): (Vec<f64>, Vec<f64>) = pts
                    .iter()
                    .map(|&p| {
                        let d = distance(x, p);
                        let v = if d == 0.0 { syn.at_origin() } else { syn.eval(d) };
                        (v.re, v.im)
                    })
                    .unzip();
                let nki: Vec<f64> = ki.iter().map(|v| -v).collect();
                let re = dot2(dot2(0.0, &kr, &rh, &rl), &nki, &ih, &il);
                let im = dot2(dot2(0.0, &kr, &ih, &il), &ki, &rh, &rl);
                Complex64::new(re, im)
            })
            .collect())
    }

    /// Spectral representation of `Σ_ν β_ν K(·, x_ν)` divided by `m` (the
    /// plain spline when there is no multiplier), on `λ ≤ cutoff`.
    pub fn spectral(&self, beta: &[Complex64], cutoff: f64) -> SpectralCoeffs {
        let k = self.k;
        let m = self.deconv_multiplier.clone();
        synthesize_point_vectors(self.grid(), cutoff, &self.lattice.points, beta, move |l| {
            let w = order_weight(k, l);
            m.as_ref().map_or(Complex64::new(w, 0.0), |m| m.eval(l).conj() * w)
        })
    }

    fn check_samples(&self, s: &SampleSet) -> Result<(), SplineError> {
        if s.values.len() != self.len() || s.lattice.points != self.lattice.points {
            return Err(SplineError::Mismatch("samples are taken on a different lattice".into()));
        }
        let expected = self.deconv_multiplier.as_ref().map_or("none", |m| m.label());
        if s.multiplier_label() != expected {
            return Err(SplineError::Mismatch(format!(
                "sample multiplier {} but splines built for {}",
                s.multiplier_label(),
                expected
            )));
        }
        Ok(())
    }
}

/// Spline interpolant `Σ_j s_j L_j` in kernel form.
#[derive(Debug, Clone)]
pub struct SplineInterpolant<'a> {
    pub system: &'a SplineSystem,
    pub beta: Expansion,
}

impl SplineInterpolant<'_> {
    pub fn eval(&self, points: &[Point]) -> Result<Vec<Complex64>, SpectralError> {
        self.system.eval_expansion(&self.beta, points)
    }

    /// Spectral representation projected to `[0, ω]`.
    pub fn band_projection(&self) -> BandlimitedFunction {
        let omega = self.system.omega;
        BandlimitedFunction {
            omega,
            coeffs: self.system.spectral(&self.beta.combined(), omega),
            label: format!("spline(k={})", self.system.k),
        }
    }
}

pub fn spline_interpolate<'a>(sys: &'a SplineSystem, s: &SampleSet) -> Result<SplineInterpolant<'a>, SplineError> {
    sys.check_samples(s)?;
    Ok(SplineInterpolant { system: sys, beta: sys.solve(&s.values) })
}

/// One order of an iterated spline reconstruction.
#[derive(Debug, Clone)]
pub struct SplineStage {
    pub k: u32,
    pub condition: f64,
    /// Escalation stopped here: the kernel matrix failed the condition guard
    /// or could not be factorized.
    pub guarded: bool,
    /// Band-projected reconstruction.
    pub function: Option<BandlimitedFunction>,
    pub system: Option<Arc<SplineSystem>>,
    pub beta: Option<Expansion>,
}

impl SplineStage {
    fn stopped(k: u32, condition: f64) -> Self {
        Self { k, condition, guarded: true, function: None, system: None, beta: None }
    }

    /// Deconvolved spline before band projection; `None` for guarded stages.
    pub fn eval_unprojected(&self, points: &[Point]) -> Option<Result<Vec<Complex64>, SpectralError>> {
        Some(self.system.as_ref()?.eval_deconvolved(self.beta.as_ref()?, points))
    }
}

/// Deconvolving spline reconstructions for each order in `schedule`,
/// stopping at the first order that trips the condition guard.
pub fn spline_reconstruct_deconvolve(
    grid: Arc<SpectralGrid>,
    schedule: &[u32],
    s: &SampleSet,
    options: &SplineOptions,
) -> Result<Vec<SplineStage>, SplineError> {
    if let Some(m) = &s.multiplier {
        check_multiplier(&grid, grid.omega(), m)?;
    }
    let mut stages = Vec::with_capacity(schedule.len());
    for &k in schedule {
        let sys = match build_splines(s.lattice.clone(), grid.clone(), k, s.multiplier.as_ref(), options) {
            Ok(sys) => sys,
            Err(SplineError::SingularKernel { k }) => {
                stages.push(SplineStage::stopped(k, f64::INFINITY));
                break;
            }
            Err(e) => return Err(e),
        };
        if !(sys.condition <= options.condition_guard) {
            stages.push(SplineStage::stopped(k, sys.condition));
            break;
        }
        let interp = spline_interpolate(&sys, s)?;
        let mut f = interp.band_projection();
        f.label = format!("deconvolving-spline(k={k})");
        let beta = interp.beta;
        stages.push(SplineStage {
            k,
            condition: sys.condition,
            guarded: false,
            function: Some(f),
            system: Some(Arc::new(sys)),
            beta: Some(beta),
        });
    }
    Ok(stages)
}

/// Geometric rate `q` of a least-squares fit `error ≈ C q^k`.
pub fn decay_rate(orders: &[u32], errors: &[f64]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = orders
        .iter()
        .zip(errors)
        .filter(|(_, &e)| e > 0.0)
        .map(|(&k, &e)| (k as f64, e.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some((sxy / sxx).exp())
}

/// `∫ (λ²+ρ²)^{2k} a conj(b) dμ db`, the inner product of `Δ^k a` and `Δ^k b`.
pub fn native_inner(a: &SpectralCoeffs, b: &SpectralCoeffs, k: u32) -> Complex64 {
    let meas = a.grid.measure();
    let nb = a.grid.n_b() as f64;
    let mut acc = Complex64::new(0.0, 0.0);
    for (((ra, rb), &mu), &l) in a.values.outer_iter().zip(b.values.outer_iter()).zip(&meas).zip(&a.grid.lambda_nodes) {
        let s: Complex64 = ra.iter().zip(rb.iter()).map(|(x, y)| x * y.conj()).sum();
        acc += s * (mu / nb / order_weight(k, l));
    }
    acc
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariationalReport {
    pub index: usize,
    /// `‖Δ^k L_ν‖`.
    pub base_norm: f64,
    /// Smallest `‖Δ^k (L_ν + h)‖` over the perturbations.
    pub min_perturbed: f64,
    /// Largest `|⟨Δ^k L_ν, Δ^k h⟩| / (‖Δ^k L_ν‖ ‖Δ^k h‖)`.
    pub max_orthogonality: f64,
    /// Largest `|h(x_μ)| / max|h|` over lattice points, relative to the
    /// perturbation's sup on the lattice ball.
    pub max_lattice_value: f64,
}

/// Compares `L_ν` with `L_ν + h` for perturbations `h = g − S g` vanishing on
/// the lattice, `g` random band-limited and `S` the spline interpolation.
pub fn variational_check(sys: &SplineSystem, nu: usize, count: usize, seed: u64) -> Result<VariationalReport, SplineError> {
    if sys.deconv_multiplier.is_some() {
        return Err(SplineError::Mismatch("variational check needs plain splines".into()));
    }
    let grid = sys.grid().clone();
    let pts = &sys.lattice.points;
    let gs: Vec<BandlimitedFunction> = (0..count as u64).map(|i| synthesize(grid.clone(), sys.omega, seed + i, 3)).collect();
    let mut betas = vec![sys.lagrangian(nu).combined()];
    let mut lattice_values = Vec::with_capacity(count);
    for g in &gs {
        let vals = g.eval(pts)?;
        let beta = sys.solve(&vals);
        let back = sys.eval_expansion(&beta, pts)?;
        let defect = back.iter().zip(&vals).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let scale = vals.iter().map(|v| v.norm()).fold(0.0, f64::max);
        lattice_values.push(defect / scale);
        betas.push(beta.combined());
    }
    let k = sys.k;
    let mut spectra = synthesize_point_vectors_many(&grid, f64::INFINITY, pts, &betas, move |l| {
        Complex64::new(order_weight(k, l), 0.0)
    });
    let lag = spectra.remove(0);
    let base_norm = native_inner(&lag, &lag, k).re.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_perturbed = f64::INFINITY;
    let mut max_orthogonality: f64 = 0.0;
    for (g, spline) in gs.iter().zip(&spectra) {
        let h = g.coeffs.sub(spline);
        let hn = native_inner(&h, &h, k).re.sqrt();
        let orth = native_inner(&lag, &h, k).norm() / (base_norm * hn);
        max_orthogonality = max_orthogonality.max(orth);
        let eps = rng.random_range(0.05..2.0) * base_norm / hn;
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let perturbed = lag.add(&h.scaled(Complex64::new(sign * eps, 0.0)));
        min_perturbed = min_perturbed.min(native_inner(&perturbed, &perturbed, k).re.sqrt());
    }
    Ok(VariationalReport {
        index: nu,
        base_norm,
        min_perturbed,
        max_orthogonality,
        max_lattice_value: lattice_values.into_iter().fold(0.0, f64::max),
    })
}

/// Both sides of `‖Δ^s f‖ ≤ a^m ‖Δ^{mσ+s} f‖` with `a = ‖f‖ / ‖Δ^σ f‖`,
/// the smallest constant satisfying the hypothesis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerInequality {
    pub a: f64,
    pub lhs: f64,
    pub rhs: f64,
}

fn power_norm(f: &SpectralCoeffs, p: f64) -> f64 {
    let meas = f.grid.measure();
    let nb = f.grid.n_b() as f64;
    f.values
        .outer_iter()
        .zip(&meas)
        .zip(&f.grid.lambda_nodes)
        .map(|((row, &mu), &l)| row.iter().map(|c| c.norm_sqr()).sum::<f64>() * mu / nb * (l * l + RHO * RHO).powf(2.0 * p))
        .sum::<f64>()
        .sqrt()
}

pub fn power_inequality(f: &SpectralCoeffs, sigma: f64, m: u32, s: f64) -> PowerInequality {
    let a = power_norm(f, 0.0) / power_norm(f, sigma);
    PowerInequality { a, lhs: power_norm(f, s), rhs: a.powi(m as i32) * power_norm(f, m as f64 * sigma + s) }
}

/// One row of the spline report.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineRow {
    pub omega: f64,
    pub r: f64,
    pub k: u32,
    pub condition: f64,
    pub rel_error_l2: Option<f64>,
    pub rel_error_max: Option<f64>,
    pub runtime: Option<f64>,
}

pub const SPLINE_HEADER: &str = "omega,r,k,condition_number,rel_error_L2,rel_error_max,runtime";

impl SplineRow {
    pub fn to_csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:e}"));
        format!(
            "{},{},{},{:e},{},{},{}",
            self.omega,
            self.r,
            self.k,
            self.condition,
            opt(self.rel_error_l2),
            opt(self.rel_error_max),
            self.runtime.map_or("NA".to_string(), |t| format!("{t:.3}"))
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandlimited::QuadBall;
    use crate::lattice::build_lattice;
    use crate::sampling::{ball_error, convolution_samples, point_samples};
    use crate::spectral::{calibrated_scale, spherical_function};
    use std::sync::OnceLock;

    fn grid() -> Arc<SpectralGrid> {
        static G: OnceLock<Arc<SpectralGrid>> = OnceLock::new();
        G.get_or_init(|| spline_grid(2.0, calibrated_scale()).unwrap()).clone()
    }

    fn lattice(r: f64, radius: f64) -> Arc<Lattice> {
        Arc::new(build_lattice(r, radius, 3).unwrap())
    }

    #[test]
    fn kernel_peaks_at_origin_and_flattens_with_order() {
        let relaxed = SplineOptions { tail_tol: 1e-3, ..Default::default() };
        let k1 = PolyharmonicKernel::new(1, grid(), None, 3.0, &relaxed).unwrap();
        let k2 = PolyharmonicKernel::new(2, grid(), None, 3.0, &SplineOptions::default()).unwrap();
        for kern in [&k1, &k2] {
            let k0 = kern.at_origin();
            for j in 1..=60 {
                let t = 0.05 * j as f64;
                assert!(kern.eval(t).unwrap() <= k0);
            }
        }
        let r1 = k1.eval(1.0).unwrap() / k1.at_origin();
        let r2 = k2.eval(1.0).unwrap() / k2.at_origin();
        assert!(r2 > r1, "{r2} vs {r1}");
    }

    #[test]
    fn first_order_tail_is_rejected() {
        let err = PolyharmonicKernel::new(1, grid(), None, 3.0, &SplineOptions::default()).unwrap_err();
        assert!(matches!(err, SplineError::TailTooLarge { k: 1, .. }));
        assert!(matches!(PolyharmonicKernel::new(0, grid(), None, 3.0, &SplineOptions::default()), Err(SplineError::InvalidOrder(0))));
    }

    #[test]
    fn kernel_table_matches_direct_sum() {
        let kern = PolyharmonicKernel::new(2, grid(), None, 3.0, &SplineOptions::default()).unwrap();
        for t in [0.013, 0.37, 1.1, 2.9] {
            let a = kern.eval(t).unwrap();
            let b = kern.eval_direct(t).unwrap();
            assert!((a - b).abs() < 1e-13 * kern.at_origin(), "{t}: {a} vs {b}");
        }
    }

    #[test]
    fn kernel_pairs_with_iterated_laplacian_to_point_value() {
        // ⟨Δ^{2k} g, K(d(·, o))⟩ = g(o) through the spectral quadrature.
        for k in [2u32, 3] {
            let kern = synthesize_point_vectors(&grid(), f64::INFINITY, &[Point::origin()], &[Complex64::new(1.0, 0.0)], |l| {
                Complex64::new(order_weight(k, l), 0.0)
            });
            for seed in [5, 6] {
                let g = synthesize(grid(), 2.0, seed, 3);
                let lifted = g.apply(&Multiplier::neg_laplacian_power(2.0 * k as f64));
                let pairing = lifted.coeffs.inner(&kern);
                let g0 = g.eval(&[Point::origin()]).unwrap()[0];
                assert!((pairing - g0).norm() < 1e-4 * g0.norm(), "{pairing} vs {g0}");
            }
        }
    }

    #[test]
    fn lagrangian_interpolation_and_minimization() {
        let sys = build_splines(lattice(0.3, 0.8), grid(), 2, None, &SplineOptions::default()).unwrap();
        assert!((&sys.kernel_matrix - sys.kernel_matrix.transpose()).amax() <= 1e-12 * sys.kernel.at_origin());
        assert!(sys.lagrange_defect() < 1e-8, "{}", sys.lagrange_defect());
        for nu in [0, sys.len() / 2] {
            let rep = variational_check(&sys, nu, 20, 11).unwrap();
            assert!(rep.min_perturbed >= rep.base_norm - 1e-8, "{rep:?}");
            assert!(rep.max_orthogonality < 1e-6, "{rep:?}");
            assert!(rep.max_lattice_value < 1e-8, "{rep:?}");
        }
    }

    #[test]
    fn interpolation_reproduces_splines_and_zero() {
        let lat = lattice(0.3, 0.8);
        let sys = build_splines(lat.clone(), grid(), 2, None, &SplineOptions::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let beta = Expansion {
            hi: (0..sys.len()).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect(),
            lo: vec![Complex64::new(0.0, 0.0); sys.len()],
        };
        let data = sys.eval_expansion(&beta, &lat.points).unwrap();
        let f = synthesize(grid(), 2.0, 1, 3);
        let s = point_samples(&f, lat.clone()).unwrap().with_values(data.clone());
        let interp = spline_interpolate(&sys, &s).unwrap();
        let probe: Vec<Point> = (0..40).map(|j| Point::from_polar(0.02 * j as f64, 0.7 * j as f64)).collect();
        let a = interp.eval(&probe).unwrap();
        let b = sys.eval_expansion(&beta, &probe).unwrap();
        let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-10 * scale.max(1.0), "{worst}");
        let zero = spline_interpolate(&sys, &s.with_values(vec![Complex64::new(0.0, 0.0); sys.len()])).unwrap();
        assert!(zero.eval(&probe).unwrap().iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn identity_deconvolution_reduces_to_interpolation() {
        let lat = lattice(0.3, 0.8);
        let f = synthesize(grid(), 2.0, 4, 3);
        let plain = point_samples(&f, lat.clone()).unwrap();
        let sys = build_splines(lat.clone(), grid(), 2, None, &SplineOptions::default()).unwrap();
        let interp = spline_interpolate(&sys, &plain).unwrap();
        let s = convolution_samples(&f, lat, &Multiplier::identity()).unwrap();
        let stages = spline_reconstruct_deconvolve(grid(), &[2], &s, &SplineOptions::default()).unwrap();
        let probe: Vec<Point> = (0..30).map(|j| Point::from_polar(0.025 * j as f64, 1.3 * j as f64)).collect();
        let a = interp.eval(&probe).unwrap();
        let b = stages[0].eval_unprojected(&probe).unwrap().unwrap();
        let worst = a.iter().zip(&b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        assert!(worst < 1e-10, "{worst}");
        let direct = interp.band_projection();
        let via = stages[0].function.as_ref().unwrap();
        assert!(via.coeffs.sub(&direct.coeffs).norm() < 1e-10 * direct.norm());
    }

    #[test]
    fn averaged_samples_are_deconvolved() {
        let g = spline_grid(1.0, calibrated_scale()).unwrap();
        let lat = lattice(0.5, 1.2);
        let f = synthesize(g.clone(), 1.0, 6, 3);
        let m = Multiplier::real("sphere(0.2)", |l| spherical_function(l, 0.2).unwrap());
        let s = convolution_samples(&f, lat, &m).unwrap();
        let stages = spline_reconstruct_deconvolve(g, &[2], &s, &SplineOptions::default()).unwrap();
        assert!(!stages[0].guarded);
        let ball = QuadBall::new(Point::origin(), 0.6, 32, 64);
        let pts = ball.points();
        let err = ball_error(&f.eval(&pts).unwrap(), &stages[0].eval_unprojected(&pts).unwrap().unwrap(), &ball);
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn condition_guard_stops_escalation() {
        let lat = lattice(0.5, 1.2);
        let f = synthesize(grid(), 2.0, 6, 3);
        let s = point_samples(&f, lat).unwrap();
        let stages = spline_reconstruct_deconvolve(grid(), &DEFAULT_SCHEDULE, &s, &SplineOptions::default()).unwrap();
        assert!(!stages[0].guarded && stages[0].condition < 1e12);
        assert_eq!(stages.len(), 2);
        assert!(stages[1].guarded && stages[1].function.is_none());
    }

    #[test]
    fn vanishing_multiplier_rejected() {
        let lat = lattice(0.4, 0.6);
        let f = synthesize(grid(), 2.0, 6, 3);
        let m = Multiplier::real("notch", |l| l - 1.0);
        let s = convolution_samples(&f, lat, &m).unwrap();
        let err = spline_reconstruct_deconvolve(grid(), &[2], &s, &SplineOptions::default()).unwrap_err();
        assert!(matches!(err, SplineError::MultiplierVanishes { .. }));
    }

    #[test]
    fn decay_rate_of_geometric_sequence() {
        let q = decay_rate(&[2, 4, 8], &[0.25, 0.0625, 0.00390625]).unwrap();
        assert!((q - 0.5).abs() < 1e-12);
        assert!(decay_rate(&[2], &[1.0]).is_none());
    }

    #[test]
    fn csv_row_marks_missing_values() {
        let row = SplineRow { omega: 2.0, r: 0.1, k: 4, condition: 3e12, rel_error_l2: None, rel_error_max: None, runtime: None };
        assert_eq!(row.to_csv_row(), "2,0.1,4,3e12,NA,NA,NA");
    }

    mod props {
        use super::*;
        use crate::bandlimited::{synthesize_profile, SpectralProfile};
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(24))]
            #[test]
            fn iterated_power_inequality(seed in 0u64..1000, center in 1.0f64..20.0, width in 0.3f64..4.0,
                                         sigma in 0.25f64..2.0, s_half in 0u32..2) {
                let f = synthesize_profile(grid(), SpectralProfile::bump(center, width.min(center)), seed, 2);
                for m in [1u32, 2, 4] {
                    let p = power_inequality(&f, sigma, m, s_half as f64);
                    prop_assert!(p.lhs <= p.rhs * (1.0 + 1e-8), "{p:?}");
                }
            }
        }
    }
}
