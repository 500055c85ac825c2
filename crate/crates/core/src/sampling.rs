//! Point and convolution samples on a lattice, the Gram system of the
//! point-evaluation frame vectors in the band, and reconstruction.
//!
//! The frame vector of `x_j` is `h_j(λ, b) = conj(m(λ)) P(x_j, b)^{1/2 − iλ}`
//! restricted to `λ ≤ ω`, with `m ≡ 1` for point samples. Its Gram matrix is
//! the zonal kernel `∫ |m|² φ_λ(d(x_j, x_k)) dμ(λ)`, real and symmetric. The
//! minimum-norm solution of `⟨F, h_j⟩ = s_j` is `F = Σ β_j h_j` with
//! `β = G⁺ s`.

use std::fmt::Write as _;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::bandlimited::{BandlimitedFunction, QuadBall};
use crate::geometry::{busemann, distance, BoundaryPoint, Point, RHO};
use crate::lattice::Lattice;
use crate::spectral::{Multiplier, SpectralCoeffs, SpectralError, SpectralGrid, ZonalKernel};

const KERNEL_TOL: f64 = 1e-15;
const BOUNDARY_RESOLUTION: f64 = 1e-15;
/// Smallest `|m(λ)|` on the band accepted for deconvolution.
pub const MULTIPLIER_FLOOR: f64 = 1e-12;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SamplingError {
    #[error("lattice too sparse for the band: r·(ω² + ρ²)^(1/2) = {density} exceeds {limit}")]
    NotAFrame { density: f64, limit: f64 },
    #[error("Gram matrix has no positive spectrum")]
    DegenerateGram,
    #[error("multiplier |m({lambda})| = {value:e} vanishes on the band")]
    MultiplierVanishes { lambda: f64, value: f64 },
    #[error("boundary grid of {n_b} nodes cannot resolve frame vectors at |x| = {radius}; need {needed}")]
    BoundaryUnderresolved { n_b: usize, radius: f64, needed: usize },
    #[error("band {omega} exceeds grid band {grid_omega}")]
    BandExceedsGrid { omega: f64, grid_omega: f64 },
    #[error("samples do not match the frame: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error("sample csv: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Point,
    Convolution,
}

impl SampleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SampleKind::Point => "point",
            SampleKind::Convolution => "convolution",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SampleSet {
    pub lattice: Arc<Lattice>,
    pub values: Vec<Complex64>,
    pub kind: SampleKind,
    pub multiplier: Option<Multiplier>,
}

impl SampleSet {
    /// Same lattice and kind with replaced values.
    pub fn with_values(&self, values: Vec<Complex64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self { values, ..self.clone() }
    }

    pub fn multiplier_label(&self) -> &str {
        self.multiplier.as_ref().map_or("none", |m| m.label())
    }

    /// `index,u,v,value_re,value_im,kind,multiplier`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("index,u,v,value_re,value_im,kind,multiplier\n");
        for (j, (p, v)) in self.lattice.points.iter().zip(&self.values).enumerate() {
            let _ = writeln!(
                s,
                "{j},{:?},{:?},{:?},{:?},{},{}",
                p.u,
                p.v,
                v.re,
                v.im,
                self.kind.as_str(),
                self.multiplier_label()
            );
        }
        s
    }

    /// Reads values written by [`SampleSet::to_csv`] back onto `lattice`.
    /// The multiplier itself is not serializable and must be supplied.
    pub fn from_csv(text: &str, lattice: Arc<Lattice>, multiplier: Option<Multiplier>) -> Result<Self, SamplingError> {
        let bad = |m: String| SamplingError::Format(m);
        let mut values = Vec::with_capacity(lattice.len());
        let mut kind = SampleKind::Point;
        for (row, line) in text.lines().skip(1).enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 7 {
                return Err(bad(format!("row {row}: expected 7 fields")));
            }
            let p = lattice.points.get(row).ok_or_else(|| bad(format!("row {row}: beyond lattice")))?;
            let u: f64 = f[1].parse().map_err(|_| bad(format!("row {row}: u")))?;
            let v: f64 = f[2].parse().map_err(|_| bad(format!("row {row}: v")))?;
            if u.to_bits() != p.u.to_bits() || v.to_bits() != p.v.to_bits() {
                return Err(bad(format!("row {row}: point differs from lattice")));
            }
            let re: f64 = f[3].parse().map_err(|_| bad(format!("row {row}: value_re")))?;
            let im: f64 = f[4].parse().map_err(|_| bad(format!("row {row}: value_im")))?;
            kind = match f[5] {
                "point" => SampleKind::Point,
                "convolution" => SampleKind::Convolution,
                k => return Err(bad(format!("row {row}: kind {k}"))),
            };
            values.push(Complex64::new(re, im));
        }
        if values.len() != lattice.len() {
            return Err(bad(format!("{} rows for {} lattice points", values.len(), lattice.len())));
        }
        if (kind == SampleKind::Convolution) != multiplier.is_some() {
            return Err(bad("multiplier presence does not match kind".into()));
        }
        Ok(Self { lattice, values, kind, multiplier })
    }
}

/// `f(x_j)` at every lattice point.
pub fn point_samples(f: &BandlimitedFunction, lat: Arc<Lattice>) -> Result<SampleSet, SamplingError> {
    let values = f.eval(&lat.points)?;
    Ok(SampleSet { lattice: lat, values, kind: SampleKind::Point, multiplier: None })
}

/// `(m(−Δ) f)(x_j)` at every lattice point.
pub fn convolution_samples(
    f: &BandlimitedFunction,
    lat: Arc<Lattice>,
    m: &Multiplier,
) -> Result<SampleSet, SamplingError> {
    let values = f.apply(m).eval(&lat.points)?;
    Ok(SampleSet { lattice: lat, values, kind: SampleKind::Convolution, multiplier: Some(m.clone()) })
}

#[derive(Debug, Clone, Copy)]
pub struct FrameOptions {
    /// Relative eigenvalue cutoff of the pseudo-inverse.
    pub pinv_cutoff: f64,
    /// Largest accepted `r·(ω² + ρ²)^{1/2}`.
    pub density_limit: f64,
    /// Condition number above which the system is flagged.
    pub ill_conditioned: f64,
}

impl Default for FrameOptions {
    fn default() -> Self {
        Self { pinv_cutoff: 1e-14, density_limit: 1.0, ill_conditioned: 1e10 }
    }
}

#[derive(Debug, Clone)]
pub struct FrameSystem {
    pub lattice: Arc<Lattice>,
    pub omega: f64,
    pub grid: Arc<SpectralGrid>,
    pub multiplier: Option<Multiplier>,
    pub gram: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    /// Smallest retained and largest eigenvalue.
    pub frame_bounds: (f64, f64),
    /// Smallest eigenvalue before truncation.
    pub lambda_min_raw: f64,
    pub rank: usize,
    /// `λ_max / λ_min` of the raw spectrum (infinite when `λ_min ≤ 0`).
    pub condition: f64,
    pub ill_conditioned: bool,
    pub options: FrameOptions,
    /// `∫ conj(m) φ_λ(d) dμ` over the band, for kernel-side evaluation.
    synthesis_kernel: ZonalKernel,
}

/// Boundary resolution needed so `|x|^{n_b/2}` is negligible.
fn needed_nb(radius: f64) -> usize {
    if radius <= 0.0 {
        return 16;
    }
    let half = (BOUNDARY_RESOLUTION.ln() / radius.ln()).ceil() as usize;
    (2 * half).next_power_of_two().max(16)
}

const MULTIPLIER_SCAN: usize = 8192;

/// Checks `|m| > MULTIPLIER_FLOOR` on the band nodes of `grid` and on a
/// uniform scan of `[0, ω]`; a sign change of a real multiplier between
/// scan points also counts as a zero.
pub fn check_multiplier(grid: &SpectralGrid, omega: f64, m: &Multiplier) -> Result<(), SamplingError> {
    let scan = (0..=MULTIPLIER_SCAN).map(|k| omega * k as f64 / MULTIPLIER_SCAN as f64);
    let mut lambdas: Vec<f64> = grid.lambda_nodes.iter().copied().filter(|&l| l <= omega).chain(scan).collect();
    lambdas.sort_by(f64::total_cmp);
    let mut prev: Option<(f64, Complex64)> = None;
    for l in lambdas {
        let v = m.eval(l);
        if !(v.norm() > MULTIPLIER_FLOOR) {
            return Err(SamplingError::MultiplierVanishes { lambda: l, value: v.norm() });
        }
        if let Some((lp, vp)) = prev {
            if v.im == 0.0 && vp.im == 0.0 && v.re.signum() != vp.re.signum() {
                return Err(SamplingError::MultiplierVanishes { lambda: 0.5 * (l + lp), value: 0.0 });
            }
        }
        prev = Some((l, v));
    }
    Ok(())
}

/// Assembles and factorizes the Gram system of the lattice in the band `[0, ω]`.
pub fn build_frame(
    lat: Arc<Lattice>,
    grid: Arc<SpectralGrid>,
    omega: f64,
    m: Option<&Multiplier>,
    options: FrameOptions,
) -> Result<FrameSystem, SamplingError> {
    if omega > grid.omega() * (1.0 + 1e-15) {
        return Err(SamplingError::BandExceedsGrid { omega, grid_omega: grid.omega() });
    }
    if let Some(m) = m {
        check_multiplier(&grid, omega, m)?;
    }
    let density = lat.r * (omega * omega + RHO * RHO).sqrt();
    if density > options.density_limit {
        return Err(SamplingError::NotAFrame { density, limit: options.density_limit });
    }
    let radius = lat.points.iter().fold(0.0f64, |a, p| a.max(p.norm_sqr().sqrt()));
    let needed = needed_nb(radius);
    if grid.n_b() < needed {
        return Err(SamplingError::BoundaryUnderresolved { n_b: grid.n_b(), radius, needed });
    }
    let d_max = 2.0 * lat.points.iter().fold(0.0f64, |a, p| a.max(p.polar().0)) + 1e-3;
    let mm = m.cloned();
    let gram_kernel = ZonalKernel::on_grid(
        &grid,
        omega,
        |l| Complex64::new(mm.as_ref().map_or(1.0, |m| m.eval(l).norm_sqr()), 0.0),
        d_max,
        KERNEL_TOL,
    )?;
    let mc = m.cloned();
    let synthesis_kernel = ZonalKernel::on_grid(
        &grid,
        omega,
        |l| mc.as_ref().map_or(Complex64::new(1.0, 0.0), |m| m.eval(l).conj()),
        d_max,
        KERNEL_TOL,
    )?;
    let n = lat.len();
    let pts = &lat.points;
    let diag = gram_kernel.at_origin().re;
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            (0..n)
                .map(|k| if j == k { diag } else { gram_kernel.eval_re(distance(pts[j], pts[k])) })
                .collect()
        })
        .collect();
    let mut gram = DMatrix::from_fn(n, n, |j, k| rows[j][k]);
    // Symmetrize against Chebyshev evaluation asymmetries in d(x, y).
    gram = (&gram + gram.transpose()) * 0.5;
    let eig = SymmetricEigen::new(gram.clone());
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if !(lmax > 0.0) {
        return Err(SamplingError::DegenerateGram);
    }
    let cut = options.pinv_cutoff * lmax;
    let retained: Vec<f64> = eig.eigenvalues.iter().copied().filter(|&e| e > cut).collect();
    let a = retained.iter().copied().fold(f64::INFINITY, f64::min);
    let condition = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
    Ok(FrameSystem {
        lattice: lat,
        omega,
        grid,
        multiplier: m.cloned(),
        gram,
        frame_bounds: (a, lmax),
        lambda_min_raw: lmin,
        rank: retained.len(),
        condition,
        ill_conditioned: condition > options.ill_conditioned,
        options,
        eigenvalues: eig.eigenvalues,
        eigenvectors: eig.eigenvectors,
        synthesis_kernel,
    })
}

fn real_matvec(a: &DMatrix<f64>, x: &[Complex64]) -> Vec<Complex64> {
    let re = a * DVector::from_iterator(x.len(), x.iter().map(|v| v.re));
    let im = a * DVector::from_iterator(x.len(), x.iter().map(|v| v.im));
    re.iter().zip(im.iter()).map(|(&r, &i)| Complex64::new(r, i)).collect()
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

impl FrameSystem {
    pub fn len(&self) -> usize {
        self.lattice.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lattice.is_empty()
    }

    pub fn eigenvalues(&self) -> &DVector<f64> {
        &self.eigenvalues
    }

    /// `G⁺ s` with eigenvalues below `pinv_cutoff · λ_max` discarded.
    pub fn pseudo_solve(&self, s: &[Complex64]) -> Vec<Complex64> {
        let cut = self.options.pinv_cutoff * self.frame_bounds.1;
        let v = &self.eigenvectors;
        let vt_s = real_matvec(&v.transpose(), s);
        let scaled: Vec<Complex64> = vt_s
            .iter()
            .zip(self.eigenvalues.iter())
            .map(|(c, &e)| if e > cut { c / e } else { Complex64::new(0.0, 0.0) })
            .collect();
        real_matvec(v, &scaled)
    }

    /// Conjugate gradients on `G β = s` from zero with full
    /// reorthogonalization of the residuals; stops at relative residual
    /// `tol` or after `max_iter` steps.
    pub fn cg_solve(&self, s: &[Complex64], tol: f64, max_iter: usize) -> (Vec<Complex64>, usize) {
        let n = s.len();
        let mut x = vec![Complex64::new(0.0, 0.0); n];
        let mut r = s.to_vec();
        let mut p = r.clone();
        let s_norm = dot(s, s).re.sqrt();
        let mut rr = dot(&r, &r).re;
        let mut basis: Vec<Vec<Complex64>> = Vec::new();
        if s_norm == 0.0 {
            return (x, 0);
        }
        for it in 0..max_iter.min(n) {
            if rr.sqrt() <= tol * s_norm {
                return (x, it);
            }
            basis.push(r.iter().map(|v| v / rr.sqrt()).collect());
            let ap = real_matvec(&self.gram, &p);
            let pap = dot(&p, &ap).re;
            if !(pap > 0.0) {
                return (x, it);
            }
            let alpha = rr / pap;
            for k in 0..n {
                x[k] += p[k] * alpha;
                r[k] -= ap[k] * alpha;
            }
            for _ in 0..2 {
                for q in &basis {
                    let c = dot(q, &r);
                    r.iter_mut().zip(q).for_each(|(a, b)| *a -= c * b);
                }
            }
            let rr_new = dot(&r, &r).re;
            let beta = rr_new / rr;
            for k in 0..n {
                p[k] = r[k] + p[k] * beta;
            }
            rr = rr_new;
        }
        (x, max_iter.min(n))
    }

    /// `(β* G β)^{1/2}`, the norm of `Σ β_j h_j`.
    pub fn synthesis_norm(&self, beta: &[Complex64]) -> f64 {
        dot(beta, &real_matvec(&self.gram, beta)).re.max(0.0).sqrt()
    }

    /// Spectral coefficients of `Σ_j β_j h_j` on the frame grid.
    pub fn synthesize(&self, beta: &[Complex64]) -> SpectralCoeffs {
        let m = self.multiplier.clone();
        synthesize_point_vectors(&self.grid, self.omega, &self.lattice.points, beta, move |l| {
            m.as_ref().map_or(Complex64::new(1.0, 0.0), |m| m.eval(l).conj())
        })
    }

    /// `Σ_j β_j K(d(x, x_j))` with the synthesis kernel; the same function
    /// as [`FrameSystem::synthesize`] evaluated without the boundary grid.
    pub fn eval_kernel(&self, beta: &[Complex64], points: &[Point]) -> Vec<Complex64> {
        let pts = &self.lattice.points;
        let k0 = self.synthesis_kernel.at_origin();
        points
            .par_iter()
            .map(|&x| {
                pts.iter()
                    .zip(beta)
                    .map(|(&p, b)| {
                        let d = distance(x, p);
                        b * if d == 0.0 { k0 } else { self.synthesis_kernel.eval(d) }
                    })
                    .sum()
            })
            .collect()
    }

    fn check_samples(&self, s: &SampleSet) -> Result<(), SamplingError> {
        if s.values.len() != self.len() {
            return Err(SamplingError::Mismatch(format!("{} samples for {} points", s.values.len(), self.len())));
        }
        if !Arc::ptr_eq(&s.lattice, &self.lattice) && s.lattice.points != self.lattice.points {
            return Err(SamplingError::Mismatch("different lattices".into()));
        }
        let frame_label = self.multiplier.as_ref().map(|m| m.label());
        let sample_label = s.multiplier.as_ref().map(|m| m.label());
        if frame_label != sample_label {
            return Err(SamplingError::Mismatch(format!(
                "frame multiplier {frame_label:?}, samples {sample_label:?}"
            )));
        }
        Ok(())
    }
}

/// Coefficients `w(λ) Σ_j β_j P(x_j, b)^{1/2 − iλ}` on `grid` for `λ ≤ cutoff`,
/// zero above.
pub fn synthesize_point_vectors(
    grid: &Arc<SpectralGrid>,
    cutoff: f64,
    points: &[Point],
    beta: &[Complex64],
    w: impl Fn(f64) -> Complex64 + Sync,
) -> SpectralCoeffs {
    synthesize_point_vectors_many(grid, cutoff, points, &[beta.to_vec()], w).pop().expect("one vector")
}

/// [`synthesize_point_vectors`] for several coefficient vectors, sharing the
/// exponentials.
pub fn synthesize_point_vectors_many(
    grid: &Arc<SpectralGrid>,
    cutoff: f64,
    points: &[Point],
    betas: &[Vec<Complex64>],
    w: impl Fn(f64) -> Complex64 + Sync,
) -> Vec<SpectralCoeffs> {
    assert!(betas.iter().all(|b| b.len() == points.len()));
    let nb = grid.n_b();
    let nv = betas.len();
    let logs: Vec<Vec<f64>> = (0..nb)
        .map(|l| {
            let b = BoundaryPoint::new(grid.boundary_angle(l));
            points.iter().map(|&p| busemann(p, b)).collect()
        })
        .collect();
    let half: Vec<Vec<f64>> = logs.iter().map(|row| row.iter().map(|&a| (RHO * a).exp()).collect()).collect();
    let rows: Vec<(usize, Vec<Complex64>)> = grid
        .lambda_nodes
        .par_iter()
        .enumerate()
        .filter(|(_, &l)| l <= cutoff)
        .map(|(i, &l)| {
            let wl = w(l);
            let mut row = vec![Complex64::new(0.0, 0.0); nb * nv];
            for k in 0..nb {
                for (j, (&a, &p)) in logs[k].iter().zip(&half[k]).enumerate() {
                    let e = Complex64::from_polar(p, -l * a);
                    for (v, beta) in betas.iter().enumerate() {
                        row[v * nb + k] += beta[j] * e;
                    }
                }
            }
            row.iter_mut().for_each(|x| *x *= wl);
            (i, row)
        })
        .collect();
    let mut out: Vec<Array2<Complex64>> = (0..nv).map(|_| Array2::zeros((grid.n_lambda(), nb))).collect();
    for (i, row) in rows {
        for (v, values) in out.iter_mut().enumerate() {
            for k in 0..nb {
                values[(i, k)] = row[v * nb + k];
            }
        }
    }
    out.into_iter().map(|values| SpectralCoeffs { grid: grid.clone(), values }).collect()
}

/// Frame coefficients and the reconstructed band-limited function.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub beta: Vec<Complex64>,
    pub function: BandlimitedFunction,
}

/// Minimum-norm band-limited function consistent with the samples.
pub fn reconstruct(frame: &FrameSystem, s: &SampleSet) -> Result<Reconstruction, SamplingError> {
    frame.check_samples(s)?;
    let beta = frame.pseudo_solve(&s.values);
    let coeffs = frame.synthesize(&beta);
    let function = BandlimitedFunction { omega: frame.omega, coeffs, label: "reconstruction".into() };
    Ok(Reconstruction { beta, function })
}

/// Relative sample residual `‖G β − s‖ / ‖s‖`.
pub fn sample_residual(frame: &FrameSystem, beta: &[Complex64], s: &[Complex64]) -> f64 {
    let gb = real_matvec(&frame.gram, beta);
    let num: f64 = gb.iter().zip(s).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = s.iter().map(|v| v.norm_sqr()).sum();
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverAgreement {
    /// Relative L² distance of the two reconstructions over the ball.
    pub distance: f64,
    pub eigen_residual: f64,
    pub cg_residual: f64,
    pub cg_iterations: usize,
}

/// Compares the eigen solution with conjugate gradients stopped at the
/// same sample residual.
pub fn solver_agreement(frame: &FrameSystem, s: &SampleSet, ball: &QuadBall) -> Result<SolverAgreement, SamplingError> {
    frame.check_samples(s)?;
    let direct = frame.pseudo_solve(&s.values);
    let eigen_residual = sample_residual(frame, &direct, &s.values);
    let (cg, cg_iterations) = frame.cg_solve(&s.values, eigen_residual.max(1e-14), frame.len());
    let pts = ball.points();
    Ok(SolverAgreement {
        distance: ball_error(&frame.eval_kernel(&direct, &pts), &frame.eval_kernel(&cg, &pts), ball),
        eigen_residual,
        cg_residual: sample_residual(frame, &cg, &s.values),
        cg_iterations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub noise_levels: Vec<f64>,
    /// `‖f_rec(s + ε) − f_rec(s)‖` per level.
    pub output_norms: Vec<f64>,
    /// `output_norm / ε` per level.
    pub ratios: Vec<f64>,
    /// `max/min − 1` of the ratios.
    pub ratio_spread: f64,
    /// `1 / √A`, the operator bound from the retained frame bound.
    pub c_stab: f64,
    /// Largest gain over power iteration on the pseudo-inverse.
    pub c_measured: f64,
}

/// Reconstruction response to seeded Gaussian noise of ℓ² size `ε`.
pub fn stability_probe(
    frame: &FrameSystem,
    s: &SampleSet,
    noise_levels: &[f64],
    seed: u64,
) -> Result<StabilityReport, SamplingError> {
    frame.check_samples(s)?;
    let n = frame.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut dir: Vec<Complex64> = (0..n)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im)
        })
        .collect();
    let dn = dot(&dir, &dir).re.sqrt();
    dir.iter_mut().for_each(|v| *v /= dn);
    let base = frame.pseudo_solve(&s.values);
    let mut output_norms = Vec::with_capacity(noise_levels.len());
    for &eps in noise_levels {
        let noisy: Vec<Complex64> = s.values.iter().zip(&dir).map(|(v, d)| v + d * eps).collect();
        let b = frame.pseudo_solve(&noisy);
        let diff: Vec<Complex64> = b.iter().zip(&base).map(|(x, y)| x - y).collect();
        output_norms.push(frame.synthesis_norm(&diff));
    }
    let ratios: Vec<f64> =
        output_norms.iter().zip(noise_levels).map(|(o, &e)| if e > 0.0 { o / e } else { 0.0 }).collect();
    let positive: Vec<f64> = ratios.iter().copied().filter(|&r| r > 0.0).collect();
    let ratio_spread = if positive.is_empty() {
        0.0
    } else {
        positive.iter().copied().fold(f64::MIN, f64::max) / positive.iter().copied().fold(f64::MAX, f64::min) - 1.0
    };
    // Power iteration on G⁺: the gain of s ↦ f is ‖G⁺‖^{1/2}.
    let mut v = dir.clone();
    let mut gain2 = 0.0;
    for _ in 0..60 {
        let w = frame.pseudo_solve(&v);
        let wn = dot(&w, &w).re.sqrt();
        if wn == 0.0 {
            break;
        }
        gain2 = dot(&v, &w).re;
        v = w.iter().map(|x| x / wn).collect();
    }
    Ok(StabilityReport {
        noise_levels: noise_levels.to_vec(),
        output_norms,
        ratios,
        ratio_spread,
        c_stab: 1.0 / frame.frame_bounds.0.sqrt(),
        c_measured: gain2.max(0.0).sqrt(),
    })
}

/// Relative L² distance of two functions over a quadrature ball.
pub fn ball_error(reference: &[Complex64], approx: &[Complex64], ball: &QuadBall) -> f64 {
    let w = ball.weights();
    let (num, den) = reference.iter().zip(approx).zip(&w).fold((0.0, 0.0), |(n, d), ((a, b), &w)| {
        (n + (a - b).norm_sqr() * w, d + a.norm_sqr() * w)
    });
    if den > 0.0 {
        (num / den).sqrt()
    } else {
        num.sqrt()
    }
}

/// Relative L² reconstruction error over `ball`.
pub fn reconstruction_error(f: &BandlimitedFunction, rec: &BandlimitedFunction, ball: &QuadBall) -> Result<f64, SpectralError> {
    let pts = ball.points();
    Ok(ball_error(&f.eval(&pts)?, &rec.eval(&pts)?, ball))
}

/// Sample-energy ratios `(V/N) Σ |f(x_j)|² / ‖f‖²_ball` over test functions,
/// `V` the ball volume; returns `min/max`, which tends to 1 as the lattice refines.
pub fn sampling_tightness(lat: &Lattice, funcs: &[BandlimitedFunction], ball: &QuadBall) -> Result<f64, SpectralError> {
    let vol: f64 = ball.weights().iter().sum();
    let pts = ball.points();
    let w = ball.weights();
    let ratios = funcs
        .iter()
        .map(|f| {
            let s: f64 = f.eval(&lat.points)?.iter().map(|v| v.norm_sqr()).sum();
            let b: f64 = f.eval(&pts)?.iter().zip(&w).map(|(v, w)| v.norm_sqr() * w).sum();
            Ok(vol / lat.len() as f64 * s / b)
        })
        .collect::<Result<Vec<f64>, SpectralError>>()?;
    let max = ratios.iter().copied().fold(f64::MIN, f64::max);
    let min = ratios.iter().copied().fold(f64::MAX, f64::min);
    Ok(min / max)
}

/// One row of the reconstruction report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReconstructionRow {
    pub experiment: String,
    pub omega: f64,
    pub r: f64,
    pub lattice_size: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub rel_error: f64,
    /// Seconds, or `None` when timing is disabled.
    pub runtime: Option<f64>,
}

pub const RECONSTRUCTION_HEADER: &str = "experiment,omega,r,lattice_size,lambda_min,lambda_max,rel_error,runtime";

impl ReconstructionRow {
    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{:e},{:e},{:e},{}",
            self.experiment,
            self.omega,
            self.r,
            self.lattice_size,
            self.lambda_min,
            self.lambda_max,
            self.rel_error,
            self.runtime.map_or("NA".to_string(), |t| format!("{t:.3}"))
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandlimited::synthesize;
    use crate::lattice::build_lattice;
    use crate::spectral::{calibrated_scale, inverse_transform_direct, GridSpec};
    use std::sync::OnceLock;

    fn grid() -> Arc<SpectralGrid> {
        static G: OnceLock<Arc<SpectralGrid>> = OnceLock::new();
        G.get_or_init(|| Arc::new(SpectralGrid::new(GridSpec::for_band(2.0), calibrated_scale()).unwrap())).clone()
    }

    fn lattice(r: f64) -> Arc<Lattice> {
        Arc::new(build_lattice(r, 1.0, 3).unwrap())
    }

    fn ball() -> QuadBall {
        QuadBall::new(Point::origin(), 1.0, 32, 64)
    }

    #[test]
    fn point_samples_match_direct_quadrature() {
        let f = synthesize(grid(), 2.0, 9, 4);
        let lat = lattice(0.4);
        let s = point_samples(&f, lat.clone()).unwrap();
        let idx = [0, 3, 7, 11, lat.len() - 1];
        let pts: Vec<Point> = idx.iter().map(|&j| lat.points[j]).collect();
        let direct = inverse_transform_direct(&f.coeffs, &pts, 512);
        for (k, &j) in idx.iter().enumerate() {
            assert!((s.values[j] - direct[k]).norm() < 1e-10);
        }
        let zero = point_samples(&BandlimitedFunction::zero(grid(), 2.0), lat).unwrap();
        assert!(zero.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn identity_convolution_equals_point_samples() {
        let f = synthesize(grid(), 2.0, 1, 3);
        let lat = lattice(0.4);
        let a = point_samples(&f, lat.clone()).unwrap();
        let b = convolution_samples(&f, lat, &Multiplier::identity()).unwrap();
        assert_eq!(a.values, b.values);
        assert_eq!(b.kind, SampleKind::Convolution);
    }

    #[test]
    fn single_point_frame() {
        let lat = Arc::new(build_lattice(0.4, 0.1, 1).unwrap());
        let fr = build_frame(lat, grid(), 2.0, None, FrameOptions::default()).unwrap();
        assert_eq!(fr.gram.shape(), (1, 1));
        assert!(fr.gram[(0, 0)] > 0.0);
        assert_eq!(fr.frame_bounds.0, fr.frame_bounds.1);
    }

    #[test]
    fn gram_matches_spectral_inner_products() {
        let lat = lattice(0.4);
        let fr = build_frame(lat.clone(), grid(), 2.0, None, FrameOptions::default()).unwrap();
        // Oracle: inner products of explicit frame vectors on the (λ, b) grid.
        let unit = |j: usize| {
            let mut e = vec![Complex64::new(0.0, 0.0); lat.len()];
            e[j] = Complex64::new(1.0, 0.0);
            fr.synthesize(&e)
        };
        for &(j, k) in &[(0, 1), (2, 9), (5, 5), (3, lat.len() - 1)] {
            let ip = unit(k).inner(&unit(j));
            assert!(ip.im.abs() < 1e-10 * fr.gram[(j, j)]);
            assert!((ip.re - fr.gram[(j, k)]).abs() < 1e-8 * fr.gram[(j, j)], "{} vs {}", ip.re, fr.gram[(j, k)]);
        }
        assert!((&fr.gram - fr.gram.transpose()).abs().max() < 1e-12 * fr.gram[(0, 0)]);
    }

    #[test]
    fn sparse_lattice_rejected() {
        let lat = Arc::new(build_lattice(0.8, 1.0, 2).unwrap());
        let e = build_frame(lat, grid(), 2.0, None, FrameOptions::default()).unwrap_err();
        assert!(matches!(e, SamplingError::NotAFrame { .. }));
    }

    #[test]
    fn vanishing_multiplier_rejected() {
        let lat = lattice(0.4);
        let m = Multiplier::real("notch", |l| l - 1.0);
        let e = build_frame(lat, grid(), 2.0, Some(&m), FrameOptions::default()).unwrap_err();
        assert!(matches!(e, SamplingError::MultiplierVanishes { .. }));
    }

    #[test]
    fn reconstruction_closed_loop_and_projection() {
        let f = synthesize(grid(), 2.0, 4, 4);
        let lat = lattice(0.2);
        let fr = build_frame(lat.clone(), grid(), 2.0, None, FrameOptions::default()).unwrap();
        let s = point_samples(&f, lat.clone()).unwrap();
        let rec = reconstruct(&fr, &s).unwrap();
        let b = ball();
        let err = reconstruction_error(&f, &rec.function, &b).unwrap();
        assert!(err < 1e-4, "error {err}");
        // Coefficient path and kernel path describe the same function.
        let pts: Vec<Point> = (0..7).map(|j| Point::from_polar(0.12 * j as f64, 0.9 * j as f64)).collect();
        let via_coeffs = rec.function.eval(&pts).unwrap();
        let via_kernel = fr.eval_kernel(&rec.beta, &pts);
        let sup = via_kernel.iter().fold(0.0f64, |m, v| m.max(v.norm()));
        for (a, k) in via_coeffs.iter().zip(&via_kernel) {
            assert!((a - k).norm() < 1e-7 * sup, "{a} vs {k}");
        }
        // Reconstruct ∘ sample is idempotent.
        let s2 = point_samples(&rec.function, lat.clone()).unwrap();
        let rec2 = reconstruct(&fr, &s2).unwrap();
        let d = reconstruction_error(&rec.function, &rec2.function, &b).unwrap();
        assert!(d < 1e-8, "projection defect {d}");
        // Kernel representation: no boundary-grid roundoff.
        let s3 = s.with_values(fr.eval_kernel(&rec.beta, &lat.points));
        let beta3 = fr.pseudo_solve(&s3.values);
        let pts = b.points();
        let d3 = ball_error(&fr.eval_kernel(&rec.beta, &pts), &fr.eval_kernel(&beta3, &pts), &b);
        assert!(d3 < 1e-9, "kernel projection defect {d3}");
        let zero = reconstruct(&fr, &s.with_values(vec![Complex64::new(0.0, 0.0); s.values.len()])).unwrap();
        assert!(zero.function.coeffs.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn cg_agrees_with_eigen_solve() {
        let f = synthesize(grid(), 2.0, 6, 4);
        let lat = lattice(0.2);
        let fr = build_frame(lat.clone(), grid(), 2.0, None, FrameOptions::default()).unwrap();
        let s = point_samples(&f, lat).unwrap();
        let agree = solver_agreement(&fr, &s, &ball()).unwrap();
        assert!(agree.distance < 1e-6, "{agree:?}");
    }

    #[test]
    fn identity_multiplier_deconvolution_matches_point_path() {
        let f = synthesize(grid(), 2.0, 2, 3);
        let lat = lattice(0.4);
        let m = Multiplier::identity();
        let a = reconstruct(&build_frame(lat.clone(), grid(), 2.0, None, FrameOptions::default()).unwrap(), &point_samples(&f, lat.clone()).unwrap()).unwrap();
        let fm = build_frame(lat.clone(), grid(), 2.0, Some(&m), FrameOptions::default()).unwrap();
        let b = reconstruct(&fm, &convolution_samples(&f, lat, &m).unwrap()).unwrap();
        let d = a.function.coeffs.sub(&b.function.coeffs).norm() / a.function.norm();
        assert!(d < 1e-12, "{d}");
    }

    #[test]
    fn mismatched_samples_rejected() {
        let f = synthesize(grid(), 2.0, 2, 3);
        let lat = lattice(0.4);
        let fr = build_frame(lat.clone(), grid(), 2.0, None, FrameOptions::default()).unwrap();
        let s = convolution_samples(&f, lat, &Multiplier::laplacian()).unwrap();
        assert!(matches!(reconstruct(&fr, &s), Err(SamplingError::Mismatch(_))));
    }

    #[test]
    fn stability_is_linear_and_bounded() {
        let f = synthesize(grid(), 2.0, 3, 3);
        let lat = lattice(0.4);
        let fr = build_frame(lat.clone(), grid(), 2.0, None, FrameOptions::default()).unwrap();
        let s = point_samples(&f, lat).unwrap();
        let rep = stability_probe(&fr, &s, &[0.0, 1e-4, 1e-3, 3e-3, 1e-2], 5).unwrap();
        assert_eq!(rep.output_norms[0], 0.0);
        assert!(rep.ratio_spread < 0.05);
        assert!(rep.ratios.iter().all(|&r| r <= rep.c_stab * (1.0 + 1e-8)));
        assert!(rep.c_measured <= rep.c_stab * (1.0 + 1e-6) && rep.c_measured >= 0.5 * rep.c_stab);
    }

    #[test]
    fn sample_csv_roundtrip() {
        let f = synthesize(grid(), 2.0, 2, 3);
        let lat = lattice(0.4);
        let m = Multiplier::laplacian();
        let s = convolution_samples(&f, lat.clone(), &m).unwrap();
        let back = SampleSet::from_csv(&s.to_csv(), lat.clone(), Some(m)).unwrap();
        assert!(back.values.iter().zip(&s.values).all(|(a, b)| a.re.to_bits() == b.re.to_bits() && a.im.to_bits() == b.im.to_bits()));
        assert!(SampleSet::from_csv(&s.to_csv(), lat, None).is_err());
    }
}
