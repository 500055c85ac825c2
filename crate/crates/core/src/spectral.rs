//! Discretized Fourier analysis on the hyperbolic plane.
//!
//! Spectral data live on a tensor grid of Gauss–Legendre nodes in `λ` and
//! uniform nodes on the boundary circle. Evaluation goes through the
//! boundary Fourier modes: with `f̂(λ, β) = Σ_m F_m(λ) e^{imβ}`,
//!
//! ```text
//! f(r, θ) = Σ_i w_i ρ(λ_i) Σ_m F_m(λ_i) G_m(λ_i, r) e^{imθ}
//! G_m(λ, r) = (1/2π) ∫ cos(mψ) P(r, ψ)^{1/2 + iλ} dψ
//! ```
//!
//! where `ρ(λ)` is the calibrated Plancherel density. `G_0` is the
//! spherical function.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::fmt;
use std::io::{Read, Write};
use std::sync::{Arc, OnceLock};

use ndarray::{Array2, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::geometry::{Point, RHO};
use crate::quadrature::{compensated_sum, gauss_legendre, Chebyshev};

const MODE_TOL: f64 = 1e-14;
const UNIFORM_ROUTE_MAX_R: f64 = 3.0;
const UNIFORM_MAX_NODES: usize = 1 << 17;
const IMAG_RESIDUE_TOL: f64 = 1e-10;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SpectralError {
    #[error("invalid spectral grid: {0}")]
    InvalidGrid(String),
    #[error("Plancherel density requested at λ = {0}; only λ > 0 is allowed")]
    NonPositiveLambda(f64),
    #[error("radial quadrature did not converge at λ = {lambda}, r = {r}")]
    QuadratureFailed { lambda: f64, r: f64 },
    #[error("spherical function at λ = {lambda}, r = {r} has imaginary residue {residue:e}")]
    ImaginaryResidue { lambda: f64, r: f64, residue: f64 },
    #[error("calibration inconsistent: implied scales spread by {spread:e}")]
    CalibrationInconsistent { spread: f64 },
    #[error("calibration needs at least 3 test functions, got {0}")]
    TooFewTestFunctions(usize),
    #[error("outer-shell mass fraction {fraction:e} exceeds tail tolerance {tol:e}")]
    TailMassExceeded { fraction: f64, tol: f64 },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("serialization: {0}")]
    Format(String),
}

/// Plancherel density up to its global constant:
/// `|Γ(iλ+1/2)/Γ(iλ)|² = λ tanh(πλ)`.
pub fn harish_chandra_density(lambda: f64) -> Result<f64, SpectralError> {
    if !(lambda > 0.0) {
        return Err(SpectralError::NonPositiveLambda(lambda));
    }
    Ok(lambda * (PI * lambda).tanh())
}

/// Layout of a spectral grid: one Gauss–Legendre panel on `[0, ω]` and one on `[ω, Λ]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub omega: f64,
    pub lambda_max: f64,
    pub n_band: usize,
    pub n_tail: usize,
    pub n_b: usize,
}

impl GridSpec {
    /// Band of `ω` with `Λ = max(4ω, 20ρ)`.
    pub fn for_band(omega: f64) -> Self {
        Self { omega, lambda_max: (4.0 * omega).max(20.0 * RHO), n_band: 128, n_tail: 128, n_b: 128 }
    }

    pub fn with_nb(mut self, n_b: usize) -> Self {
        self.n_b = n_b;
        self
    }

    pub fn refined(self) -> Self {
        Self { n_band: 2 * self.n_band, n_tail: 2 * self.n_tail, ..self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralGrid {
    pub spec: GridSpec,
    pub lambda_nodes: Vec<f64>,
    pub lambda_weights: Vec<f64>,
    /// Scaled density `plancherel_scale · |c(λ)|^{-2}` at the nodes.
    pub density: Vec<f64>,
    pub plancherel_scale: f64,
}

impl SpectralGrid {
    pub fn new(spec: GridSpec, plancherel_scale: f64) -> Result<Self, SpectralError> {
        if !(spec.omega > 0.0) || !(spec.lambda_max >= spec.omega) {
            return Err(SpectralError::InvalidGrid(format!(
                "need 0 < ω ≤ Λ, got ω = {}, Λ = {}",
                spec.omega, spec.lambda_max
            )));
        }
        if spec.n_b < 16 || spec.n_b % 2 != 0 {
            return Err(SpectralError::InvalidGrid(format!("n_b must be even and ≥ 16, got {}", spec.n_b)));
        }
        if spec.n_band == 0 || !(plancherel_scale > 0.0) {
            return Err(SpectralError::InvalidGrid("empty band panel or non-positive scale".into()));
        }
        let (mut nodes, mut weights) = gauss_legendre(spec.n_band, 0.0, spec.omega);
        if spec.lambda_max > spec.omega && spec.n_tail > 0 {
            let (n2, w2) = gauss_legendre(spec.n_tail, spec.omega, spec.lambda_max);
            nodes.extend(n2);
            weights.extend(w2);
        }
        let density = nodes
            .iter()
            .map(|&l| harish_chandra_density(l).map(|d| d * plancherel_scale))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self { spec, lambda_nodes: nodes, lambda_weights: weights, density, plancherel_scale })
    }

    pub fn n_lambda(&self) -> usize {
        self.lambda_nodes.len()
    }

    pub fn n_b(&self) -> usize {
        self.spec.n_b
    }

    pub fn omega(&self) -> f64 {
        self.spec.omega
    }

    pub fn lambda_max(&self) -> f64 {
        self.spec.lambda_max
    }

    /// Number of nodes inside the band `[0, ω]`.
    pub fn n_band(&self) -> usize {
        self.spec.n_band
    }

    pub fn boundary_angle(&self, j: usize) -> f64 {
        2.0 * PI * j as f64 / self.spec.n_b as f64
    }

    /// `w_i · density_i`, the full λ-measure at each node.
    pub fn measure(&self) -> Vec<f64> {
        self.lambda_weights.iter().zip(&self.density).map(|(w, d)| w * d).collect()
    }

    pub fn with_scale(&self, plancherel_scale: f64) -> Result<Self, SpectralError> {
        Self::new(self.spec, plancherel_scale)
    }
}

/// Values `f̂(λ_i, b_j)` on a spectral grid, row-major in `(λ, b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs {
    pub grid: Arc<SpectralGrid>,
    pub values: Array2<Complex64>,
}

impl SpectralCoeffs {
    pub fn zeros(grid: Arc<SpectralGrid>) -> Self {
        let shape = (grid.n_lambda(), grid.n_b());
        Self { grid, values: Array2::zeros(shape) }
    }

    pub fn new(grid: Arc<SpectralGrid>, values: Array2<Complex64>) -> Result<Self, SpectralError> {
        if values.dim() != (grid.n_lambda(), grid.n_b()) {
            return Err(SpectralError::ShapeMismatch(format!(
                "values {:?} vs grid ({}, {})",
                values.dim(),
                grid.n_lambda(),
                grid.n_b()
            )));
        }
        Ok(Self { grid, values })
    }

    /// Weighted inner product `Σ w_i ρ_i (1/n_b) Σ_j f̂ conj(ĝ)`.
    pub fn inner(&self, other: &SpectralCoeffs) -> Complex64 {
        let meas = self.grid.measure();
        let nb = self.grid.n_b() as f64;
        let terms: Vec<Complex64> = self
            .values
            .outer_iter()
            .zip(other.values.outer_iter())
            .zip(&meas)
            .map(|((a, b), &m)| {
                let s: Complex64 = a.iter().zip(b.iter()).map(|(x, y)| x * y.conj()).sum();
                s * (m / nb)
            })
            .collect();
        Complex64::new(
            compensated_sum(terms.iter().map(|c| c.re)),
            compensated_sum(terms.iter().map(|c| c.im)),
        )
    }

    pub fn norm_sqr(&self) -> f64 {
        let meas = self.grid.measure();
        let nb = self.grid.n_b() as f64;
        compensated_sum(
            self.values
                .outer_iter()
                .zip(&meas)
                .map(|(row, &m)| compensated_sum(row.iter().map(|c| c.norm_sqr())) * m / nb),
        )
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scaled(&self, a: Complex64) -> Self {
        Self { grid: self.grid.clone(), values: self.values.mapv(|v| v * a) }
    }

    pub fn add(&self, other: &SpectralCoeffs) -> Self {
        Self { grid: self.grid.clone(), values: &self.values + &other.values }
    }

    pub fn sub(&self, other: &SpectralCoeffs) -> Self {
        Self { grid: self.grid.clone(), values: &self.values - &other.values }
    }

    /// Boundary Fourier modes `F_m(λ_i)`, column `m` for `m ≥ 0`, column
    /// `n_b + m` for `m < 0`.
    pub fn modes(&self) -> Array2<Complex64> {
        let nb = self.grid.n_b();
        let fft = with_planner(|p| p.plan_fft_forward(nb));
        let mut out = self.values.clone();
        for mut row in out.outer_iter_mut() {
            let mut buf: Vec<Complex64> = row.to_vec();
            fft.process(&mut buf);
            for (o, b) in row.iter_mut().zip(buf) {
                *o = b / nb as f64;
            }
        }
        out
    }

    /// Inverse of [`SpectralCoeffs::modes`].
    pub fn from_modes(grid: Arc<SpectralGrid>, modes: &Array2<Complex64>) -> Self {
        let nb = grid.n_b();
        let ifft = with_planner(|p| p.plan_fft_inverse(nb));
        let mut out = modes.clone();
        for mut row in out.outer_iter_mut() {
            let mut buf: Vec<Complex64> = row.to_vec();
            ifft.process(&mut buf);
            for (o, b) in row.iter_mut().zip(buf) {
                *o = b;
            }
        }
        Self { grid, values: out }
    }

    /// Binary layout: magic, header `(n_λ, n_b, Λ, ω, ρ, scale, n_band)`, then
    /// interleaved little-endian `re, im` in row-major order.
    pub fn write_binary<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let g = &self.grid;
        w.write_all(b"HBSC")?;
        w.write_all(&(g.n_lambda() as u64).to_le_bytes())?;
        w.write_all(&(g.n_b() as u64).to_le_bytes())?;
        for x in [g.lambda_max(), g.omega(), RHO, g.plancherel_scale] {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&(g.n_band() as u64).to_le_bytes())?;
        for v in self.values.iter() {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self, SpectralError> {
        let io = |e: std::io::Error| SpectralError::Format(e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != b"HBSC" {
            return Err(SpectralError::Format("bad magic".into()));
        }
        let mut u = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64, SpectralError> {
            r.read_exact(&mut u).map_err(io)?;
            Ok(u64::from_le_bytes(u))
        };
        let n_lambda = next_u64(&mut r)? as usize;
        let n_b = next_u64(&mut r)? as usize;
        let mut f = [0f64; 4];
        for x in f.iter_mut() {
            *x = f64::from_bits(next_u64(&mut r)?);
        }
        let n_band = next_u64(&mut r)? as usize;
        let [lambda_max, omega, _rho, scale] = f;
        let spec = GridSpec { omega, lambda_max, n_band, n_tail: n_lambda.saturating_sub(n_band), n_b };
        let grid = Arc::new(SpectralGrid::new(spec, scale)?);
        let mut values = Array2::zeros((n_lambda, n_b));
        for v in values.iter_mut() {
            let re = f64::from_bits(next_u64(&mut r)?);
            let im = f64::from_bits(next_u64(&mut r)?);
            *v = Complex64::new(re, im);
        }
        SpectralCoeffs::new(grid, values)
    }

    /// CSV layout: `#`-prefixed header line, then `i,j,re,im` rows with
    /// shortest round-trip float formatting.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut s = format!(
            "# n_lambda={},n_b={},lambda_max={:?},omega={:?},rho={:?},plancherel_scale={:?},n_band={}\ni,j,re,im\n",
            g.n_lambda(),
            g.n_b(),
            g.lambda_max(),
            g.omega(),
            RHO,
            g.plancherel_scale,
            g.n_band()
        );
        for ((i, j), v) in self.values.indexed_iter() {
            s.push_str(&format!("{},{},{:?},{:?}\n", i, j, v.re, v.im));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, SpectralError> {
        let bad = |m: &str| SpectralError::Format(m.to_string());
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let header = header.strip_prefix("# ").ok_or_else(|| bad("missing header"))?;
        let field = |name: &str| -> Result<String, SpectralError> {
            header
                .split(',')
                .find_map(|kv| kv.strip_prefix(name).and_then(|r| r.strip_prefix('=')))
                .map(str::to_string)
                .ok_or_else(|| bad(name))
        };
        let num = |s: String| s.parse::<f64>().map_err(|e| bad(&e.to_string()));
        let int = |s: String| s.parse::<usize>().map_err(|e| bad(&e.to_string()));
        let n_lambda = int(field("n_lambda")?)?;
        let n_b = int(field("n_b")?)?;
        let lambda_max = num(field("lambda_max")?)?;
        let omega = num(field("omega")?)?;
        let scale = num(field("plancherel_scale")?)?;
        let n_band = int(field("n_band")?)?;
        let spec = GridSpec { omega, lambda_max, n_band, n_tail: n_lambda - n_band, n_b };
        let grid = Arc::new(SpectralGrid::new(spec, scale)?);
        let mut values = Array2::zeros((n_lambda, n_b));
        lines.next();
        for line in lines {
            let p: Vec<&str> = line.split(',').collect();
            if p.len() != 4 {
                return Err(bad("row width"));
            }
            let i: usize = p[0].parse().map_err(|_| bad("row index"))?;
            let j: usize = p[1].parse().map_err(|_| bad("column index"))?;
            let re: f64 = p[2].parse().map_err(|_| bad("re"))?;
            let im: f64 = p[3].parse().map_err(|_| bad("im"))?;
            *values.get_mut((i, j)).ok_or_else(|| bad("index out of range"))? = Complex64::new(re, im);
        }
        SpectralCoeffs::new(grid, values)
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn with_planner<T>(f: impl FnOnce(&mut FftPlanner<f64>) -> T) -> T {
    PLANNER.with(|p| f(&mut p.borrow_mut()))
}

/// Radial mode integrals `G_m(λ, r)` for `m = 0..=m_max`; row per `λ`.
pub fn radial_modes(lambdas: &[f64], r: f64, m_max: usize) -> Result<Array2<Complex64>, SpectralError> {
    let mut out = Array2::zeros((lambdas.len(), m_max + 1));
    if r == 0.0 {
        out.column_mut(0).fill(Complex64::new(1.0, 0.0));
        return Ok(out);
    }
    for (i, &l) in lambdas.iter().enumerate() {
        let row = if r <= UNIFORM_ROUTE_MAX_R {
            match modes_uniform(l, r, m_max) {
                Some(v) => v,
                None => modes_sinh(l, r, m_max).ok_or(SpectralError::QuadratureFailed { lambda: l, r })?,
            }
        } else {
            modes_sinh(l, r, m_max).ok_or(SpectralError::QuadratureFailed { lambda: l, r })?
        };
        out.row_mut(i).assign(&ndarray::ArrayView1::from(&row));
    }
    Ok(out)
}

/// Stable `−log(cosh r − sinh r cos ψ)`.
fn log_poisson(r: f64, psi: f64) -> f64 {
    let c = (0.5 * psi).cos();
    let s = (0.5 * psi).sin();
    -((-r).exp() * c * c + r.exp() * s * s).ln()
}

fn max_diff(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

/// Uniform trapezoid in the angle, all modes at once by FFT, node doubling.
fn modes_uniform(lambda: f64, r: f64, m_max: usize) -> Option<Vec<Complex64>> {
    let s = Complex64::new(0.5, lambda);
    let eval = |n: usize| -> Vec<Complex64> {
        let fft: Arc<dyn Fft<f64>> = with_planner(|p| p.plan_fft_forward(n));
        let mut buf: Vec<Complex64> = (0..n)
            .map(|l| (s * log_poisson(r, 2.0 * PI * l as f64 / n as f64)).exp())
            .collect();
        fft.process(&mut buf);
        buf.truncate(m_max + 1);
        buf.iter_mut().for_each(|v| *v /= n as f64);
        buf
    };
    let mut n = (4 * (m_max + 1)).next_power_of_two().max(64);
    let mut prev = eval(n);
    while n < UNIFORM_MAX_NODES {
        n *= 2;
        let cur = eval(n);
        if max_diff(&prev, &cur) < MODE_TOL {
            return Some(cur);
        }
        prev = cur;
    }
    None
}

/// Trapezoid in `u` after `tan(ψ/2) = e^{−r} sinh u`, which unfolds the
/// Poisson peak of width `e^{−r}`; step halving until converged.
fn modes_sinh(lambda: f64, r: f64, m_max: usize) -> Option<Vec<Complex64>> {
    let s = Complex64::new(0.5, lambda);
    let er = (-r).exp();
    let u_max = r + 40.0;
    let node = |u: f64, acc: &mut [Complex64], w: f64| {
        let tau = er * u.sinh();
        let t2 = tau * tau;
        let lncosh = u.abs() + (0.5 * (1.0 + (-2.0 * u.abs()).exp())).ln();
        let log_p = t2.ln_1p() + r - 2.0 * lncosh;
        let dpsi = 2.0 * (lncosh - r).exp() / (1.0 + t2);
        let cos_psi = (1.0 - t2) / (1.0 + t2);
        let g = (s * log_p).exp() * (dpsi * w);
        let (mut c0, mut c1) = (1.0, cos_psi);
        acc[0] += g;
        for a in acc.iter_mut().skip(1) {
            *a += g * c1;
            let c2 = 2.0 * cos_psi * c1 - c0;
            c0 = c1;
            c1 = c2;
        }
    };
    // Sum over u ≥ 0 only; the integrand is even in u.
    let mut h = (1.5 / (m_max as f64 + 1.0)).min(0.25);
    let mut sum = vec![Complex64::new(0.0, 0.0); m_max + 1];
    node(0.0, &mut sum, 0.5);
    let mut j = 1;
    while j as f64 * h <= u_max {
        node(j as f64 * h, &mut sum, 1.0);
        j += 1;
    }
    let mut prev: Vec<Complex64> = sum.iter().map(|v| v * (h / PI)).collect();
    for _ in 0..12 {
        h *= 0.5;
        let mut j = 1;
        while j as f64 * h <= u_max {
            node(j as f64 * h, &mut sum, 1.0);
            j += 2;
        }
        let cur: Vec<Complex64> = sum.iter().map(|v| v * (h / PI)).collect();
        if max_diff(&prev, &cur) < MODE_TOL {
            return Some(cur);
        }
        prev = cur;
    }
    None
}

/// Spherical function `φ_λ(r)`.
pub fn spherical_function(lambda: f64, r: f64) -> Result<f64, SpectralError> {
    let g = radial_modes(&[lambda], r, 0)?[(0, 0)];
    if g.im.abs() > IMAG_RESIDUE_TOL {
        return Err(SpectralError::ImaginaryResidue { lambda, r, residue: g.im.abs() });
    }
    Ok(g.re)
}

/// `φ_λ(r)` for many `λ` at one radius.
pub fn spherical_functions(lambdas: &[f64], r: f64) -> Result<Vec<f64>, SpectralError> {
    let g = radial_modes(lambdas, r, 0)?;
    lambdas
        .iter()
        .zip(g.column(0))
        .map(|(&lambda, v)| {
            if v.im.abs() > IMAG_RESIDUE_TOL {
                Err(SpectralError::ImaginaryResidue { lambda, r, residue: v.im.abs() })
            } else {
                Ok(v.re)
            }
        })
        .collect()
}

/// Scalar function of `λ` acting as a convolution.
#[derive(Clone)]
pub struct Multiplier {
    label: String,
    eval: Arc<dyn Fn(f64) -> Complex64 + Send + Sync>,
}

impl fmt::Debug for Multiplier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Multiplier").field("label", &self.label).finish()
    }
}

impl Multiplier {
    pub fn new(label: impl Into<String>, eval: impl Fn(f64) -> Complex64 + Send + Sync + 'static) -> Self {
        Self { label: label.into(), eval: Arc::new(eval) }
    }

    pub fn real(label: impl Into<String>, eval: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Self::new(label, move |l| Complex64::new(eval(l), 0.0))
    }

    pub fn identity() -> Self {
        Self::real("identity", |_| 1.0)
    }

    /// Multiplier of the Laplacian, `−(λ² + ρ²)`.
    pub fn laplacian() -> Self {
        Self::real("laplacian", |l| -(l * l + RHO * RHO))
    }

    /// Multiplier of `(−Δ)^σ`, `(λ² + ρ²)^σ`.
    pub fn neg_laplacian_power(sigma: f64) -> Self {
        Self::real(format!("neg_laplacian_pow_{sigma}"), move |l| (l * l + RHO * RHO).powf(sigma))
    }

    pub fn eval(&self, lambda: f64) -> Complex64 {
        (self.eval)(lambda)
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Values at the given nodes.
    pub fn tabulated(&self, nodes: &[f64]) -> Vec<Complex64> {
        nodes.iter().map(|&l| self.eval(l)).collect()
    }

    pub fn product(&self, other: &Multiplier) -> Self {
        let a = self.clone();
        let b = other.clone();
        Self::new(format!("{}*{}", self.label, other.label), move |l| a.eval(l) * b.eval(l))
    }
}

/// Pointwise product `f̂(λ_i, b_j) m(λ_i)`.
pub fn apply_multiplier(coeffs: &SpectralCoeffs, m: &Multiplier) -> SpectralCoeffs {
    let mut values = coeffs.values.clone();
    for (mut row, &l) in values.outer_iter_mut().zip(&coeffs.grid.lambda_nodes) {
        let ml = m.eval(l);
        row.mapv_inplace(|v| v * ml);
    }
    SpectralCoeffs { grid: coeffs.grid.clone(), values }
}

/// Geodesic polar quadrature over `B(o, r_max)`: Gauss–Legendre in `r`
/// weighted by `sinh r`, trapezoid in angle.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarGrid {
    pub r_max: f64,
    pub radii: Vec<f64>,
    /// `w_r · sinh r · 2π / n_θ`.
    pub weights: Vec<f64>,
    pub n_theta: usize,
}

impl PolarGrid {
    pub fn new(r_max: f64, n_r: usize, n_theta: usize) -> Self {
        let (radii, w) = gauss_legendre(n_r, 0.0, r_max);
        let weights = radii
            .iter()
            .zip(&w)
            .map(|(&r, &w)| w * r.sinh() * 2.0 * PI / n_theta as f64)
            .collect();
        Self { r_max, radii, weights, n_theta }
    }

    pub fn angle(&self, l: usize) -> f64 {
        2.0 * PI * l as f64 / self.n_theta as f64
    }

    pub fn point(&self, i: usize, l: usize) -> Point {
        Point::from_polar(self.radii[i], self.angle(l))
    }

    pub fn sample(&self, f: impl Fn(Point) -> Complex64 + Sync) -> SpatialSamples {
        let mut values = Array2::zeros((self.radii.len(), self.n_theta));
        values
            .axis_iter_mut(Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut row)| {
                for (l, v) in row.iter_mut().enumerate() {
                    *v = f(self.point(i, l));
                }
            });
        SpatialSamples { grid: self.clone(), values }
    }

    pub fn inner(&self, a: &Array2<Complex64>, b: &Array2<Complex64>) -> Complex64 {
        let terms: Vec<Complex64> = a
            .outer_iter()
            .zip(b.outer_iter())
            .zip(&self.weights)
            .map(|((x, y), &w)| x.iter().zip(y.iter()).map(|(p, q)| p * q.conj()).sum::<Complex64>() * w)
            .collect();
        Complex64::new(
            compensated_sum(terms.iter().map(|c| c.re)),
            compensated_sum(terms.iter().map(|c| c.im)),
        )
    }

    pub fn norm_sqr(&self, a: &Array2<Complex64>) -> f64 {
        compensated_sum(
            a.outer_iter()
                .zip(&self.weights)
                .map(|(x, &w)| compensated_sum(x.iter().map(|p| p.norm_sqr())) * w),
        )
    }
}

/// A function sampled on a [`PolarGrid`], rows by radius.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSamples {
    pub grid: PolarGrid,
    pub values: Array2<Complex64>,
}

impl SpatialSamples {
    pub fn norm_sqr(&self) -> f64 {
        self.grid.norm_sqr(&self.values)
    }
}

/// Options for [`forward_transform`].
#[derive(Debug, Clone, Copy)]
pub struct ForwardOptions {
    /// Largest allowed fraction of `‖f‖²` in the outer tenth of the radius.
    pub tail_tol: f64,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self { tail_tol: 1e-5 }
    }
}

/// Quadrature of `∫ f(x) P(x, b)^{1/2 − iλ} dx` over the working ball.
pub fn forward_transform(
    samples: &SpatialSamples,
    grid: Arc<SpectralGrid>,
    opts: ForwardOptions,
) -> Result<SpectralCoeffs, SpectralError> {
    let pg = &samples.grid;
    let total = samples.norm_sqr();
    if total > 0.0 {
        let shell: f64 = samples
            .values
            .outer_iter()
            .zip(&pg.weights)
            .zip(&pg.radii)
            .filter(|(_, &r)| r > 0.9 * pg.r_max)
            .map(|((row, &w), _)| row.iter().map(|v| v.norm_sqr()).sum::<f64>() * w)
            .sum();
        let fraction = shell / total;
        if fraction > opts.tail_tol {
            return Err(SpectralError::TailMassExceeded { fraction, tol: opts.tail_tol });
        }
    }
    let nt = pg.n_theta;
    let nb = grid.n_b();
    let m_max = (nt / 2 - 1).min(nb / 2 - 1);
    let fft = with_planner(|p| p.plan_fft_forward(nt));
    // Angular modes f_m(r) per radius.
    let ang: Vec<Vec<Complex64>> = samples
        .values
        .outer_iter()
        .map(|row| {
            let mut buf = row.to_vec();
            fft.process(&mut buf);
            buf.iter().map(|v| v / nt as f64).collect()
        })
        .collect();
    let nl = grid.n_lambda();
    let per_radius: Vec<Array2<Complex64>> = pg
        .radii
        .par_iter()
        .enumerate()
        .map(|(k, &r)| {
            let g = radial_modes(&grid.lambda_nodes, r, m_max)?;
            let scale = pg.weights[k] * nt as f64;
            let mut contrib = Array2::zeros((nl, nb));
            for i in 0..nl {
                for m in 0..=m_max {
                    let gm = g[(i, m)].conj() * scale;
                    contrib[(i, m)] = ang[k][m] * gm;
                    if m > 0 {
                        contrib[(i, nb - m)] = ang[k][nt - m] * gm;
                    }
                }
            }
            Ok(contrib)
        })
        .collect::<Result<_, SpectralError>>()?;
    let mut modes = Array2::zeros((nl, nb));
    for c in per_radius {
        modes += &c;
    }
    Ok(SpectralCoeffs::from_modes(grid, &modes))
}

/// Angular modes of the coefficients with the λ-measure folded in, plus the
/// highest boundary mode that carries energy and the active λ rows.
struct ModePlan {
    lambdas: Vec<f64>,
    weighted: Vec<Vec<Complex64>>,
    m_eff: usize,
}

fn mode_plan(coeffs: &SpectralCoeffs) -> ModePlan {
    let grid = &coeffs.grid;
    let nb = grid.n_b();
    let modes = coeffs.modes();
    let meas = grid.measure();
    let peak = modes.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let cut = peak * 1e-14;
    let mut m_eff = 0;
    let mut lambdas = Vec::new();
    let mut weighted = Vec::new();
    for (i, row) in modes.outer_iter().enumerate() {
        if row.iter().all(|v| v.norm() <= cut) {
            continue;
        }
        for m in 1..=nb / 2 {
            if row[m].norm() > cut || row[(nb - m) % nb].norm() > cut {
                m_eff = m_eff.max(m);
            }
        }
        lambdas.push(grid.lambda_nodes[i]);
        // Signed order m ∈ [−m_eff, m_eff] is stored at offset m + nb/2.
        let mut w = vec![Complex64::new(0.0, 0.0); nb + 1];
        for m in 0..nb {
            let signed = if m <= nb / 2 { m as isize } else { m as isize - nb as isize };
            let v = row[m] * meas[i];
            if signed == (nb / 2) as isize {
                // Nyquist column split evenly between ±nb/2.
                w[nb] += v * 0.5;
                w[0] += v * 0.5;
            } else {
                w[(signed + (nb / 2) as isize) as usize] += v;
            }
        }
        weighted.push(w);
    }
    ModePlan { lambdas, weighted, m_eff }
}

impl ModePlan {
    /// Angular coefficients `c_m(r)` for `m ∈ [−m_eff, m_eff]` at one radius.
    fn angular(&self, r: f64, nb: usize) -> Result<Vec<Complex64>, SpectralError> {
        let me = self.m_eff;
        let mut c = vec![Complex64::new(0.0, 0.0); 2 * me + 1];
        if self.lambdas.is_empty() {
            return Ok(c);
        }
        let g = radial_modes(&self.lambdas, r, me)?;
        let half = nb / 2;
        for (i, w) in self.weighted.iter().enumerate() {
            for m in -(me as isize)..=(me as isize) {
                let gm = g[(i, m.unsigned_abs())];
                c[(m + me as isize) as usize] += w[(m + half as isize) as usize] * gm;
            }
        }
        Ok(c)
    }
}

fn synth_angle(c: &[Complex64], theta: f64) -> Complex64 {
    let me = (c.len() - 1) / 2;
    let e = Complex64::from_polar(1.0, theta);
    let mut z = Complex64::from_polar(1.0, -(me as f64) * theta);
    let mut acc = Complex64::new(0.0, 0.0);
    for v in c {
        acc += v * z;
        z *= e;
    }
    acc
}

/// Chebyshev tables of `c_m(r)` on `[0, r_hi]`, real and imaginary parts.
struct RadialTable {
    re: Vec<Chebyshev>,
    im: Vec<Chebyshev>,
}

impl RadialTable {
    fn build(plan: &ModePlan, nb: usize, r_hi: f64) -> Result<Option<Self>, SpectralError> {
        let width = 2 * plan.m_eff + 1;
        let mut n = 32;
        while n <= RADIAL_TABLE_MAX_NODES {
            let nodes = Chebyshev::nodes(n, 0.0, r_hi);
            let vals: Vec<Vec<Complex64>> =
                nodes.par_iter().map(|&r| plan.angular(r, nb)).collect::<Result<_, SpectralError>>()?;
            let peak = vals.iter().flatten().fold(0.0f64, |m, v| m.max(v.norm()));
            let part = |k: usize, f: fn(&Complex64) -> f64| {
                Chebyshev::from_values(0.0, r_hi, &vals.iter().map(|row| f(&row[k])).collect::<Vec<_>>())
            };
            let re: Vec<Chebyshev> = (0..width).map(|k| part(k, |c| c.re)).collect();
            let im: Vec<Chebyshev> = (0..width).map(|k| part(k, |c| c.im)).collect();
            let tail = re.iter().chain(&im).fold(0.0f64, |m, c| m.max(c.tail(4)));
            if tail <= 1e-13 * peak.max(f64::MIN_POSITIVE) {
                return Ok(Some(Self { re, im }));
            }
            n *= 2;
        }
        Ok(None)
    }

    fn angular(&self, r: f64) -> Vec<Complex64> {
        self.re.iter().zip(&self.im).map(|(a, b)| Complex64::new(a.eval(r), b.eval(r))).collect()
    }
}

const RADIAL_TABLE_MIN_POINTS: usize = 256;
const RADIAL_TABLE_MAX_NODES: usize = 512;

/// Evaluates the inversion formula at arbitrary points.
///
/// Large point sets go through a Chebyshev table of the angular
/// coefficients in `r`; small ones are evaluated directly.
pub fn inverse_transform(coeffs: &SpectralCoeffs, points: &[Point]) -> Result<Vec<Complex64>, SpectralError> {
    let plan = mode_plan(coeffs);
    let nb = coeffs.grid.n_b();
    let table = if points.len() >= RADIAL_TABLE_MIN_POINTS {
        let r_hi = points.iter().fold(0.0f64, |m, p| m.max(p.polar().0));
        if r_hi > 0.0 {
            RadialTable::build(&plan, nb, r_hi)?
        } else {
            None
        }
    } else {
        None
    };
    points
        .par_iter()
        .map(|p| {
            let (r, theta) = p.polar();
            let c = match &table {
                Some(t) => t.angular(r),
                None => plan.angular(r, nb)?,
            };
            Ok(synth_angle(&c, theta))
        })
        .collect()
}

/// Evaluates the inversion formula on a polar grid, sharing radial work per ring.
pub fn evaluate_polar(coeffs: &SpectralCoeffs, grid: &PolarGrid) -> Result<Array2<Complex64>, SpectralError> {
    let plan = mode_plan(coeffs);
    let nb = coeffs.grid.n_b();
    let rows: Vec<Vec<Complex64>> = grid
        .radii
        .par_iter()
        .map(|&r| {
            let c = plan.angular(r, nb)?;
            Ok((0..grid.n_theta).map(|l| synth_angle(&c, grid.angle(l))).collect())
        })
        .collect::<Result<_, SpectralError>>()?;
    let mut out = Array2::zeros((grid.radii.len(), grid.n_theta));
    for (i, row) in rows.into_iter().enumerate() {
        for (l, v) in row.into_iter().enumerate() {
            out[(i, l)] = v;
        }
    }
    Ok(out)
}

/// Direct quadrature of the inversion formula on a boundary grid of
/// `n_fine` nodes, the coefficients being trigonometrically interpolated
/// onto it. Used as an independent check of [`inverse_transform`].
pub fn inverse_transform_direct(coeffs: &SpectralCoeffs, points: &[Point], n_fine: usize) -> Vec<Complex64> {
    let grid = &coeffs.grid;
    let nb = grid.n_b();
    assert!(n_fine >= nb && n_fine % 2 == 0);
    let modes = coeffs.modes();
    let ifft = with_planner(|p| p.plan_fft_inverse(n_fine));
    let fine: Vec<Vec<Complex64>> = modes
        .outer_iter()
        .map(|row| {
            let mut buf = vec![Complex64::new(0.0, 0.0); n_fine];
            for m in 0..nb {
                if m < nb / 2 {
                    buf[m] = row[m];
                } else if m > nb / 2 {
                    buf[n_fine - (nb - m)] = row[m];
                } else {
                    buf[nb / 2] += row[m] * 0.5;
                    buf[n_fine - nb / 2] += row[m] * 0.5;
                }
            }
            ifft.process(&mut buf);
            buf
        })
        .collect();
    let meas = grid.measure();
    points
        .par_iter()
        .map(|&x| {
            let mut acc = Complex64::new(0.0, 0.0);
            let logs: Vec<f64> = (0..n_fine)
                .map(|k| crate::geometry::busemann(x, crate::geometry::BoundaryPoint::new(2.0 * PI * k as f64 / n_fine as f64)))
                .collect();
            for (i, &l) in grid.lambda_nodes.iter().enumerate() {
                let s = Complex64::new(RHO, l);
                let row = &fine[i];
                if row.iter().all(|v| *v == Complex64::new(0.0, 0.0)) {
                    continue;
                }
                let sum: Complex64 = row.iter().zip(&logs).map(|(v, &a)| v * (s * a).exp()).sum();
                acc += sum * (meas[i] / n_fine as f64);
            }
            acc
        })
        .collect()
}

/// Chebyshev table of a zonal kernel `K(d) = Σ_i μ_i w_i φ_{λ_i}(d)` on
/// `[0, d_max]`, with `μ_i` the λ-measure and `w_i` complex weights.
#[derive(Debug, Clone)]
pub struct ZonalKernel {
    re: Chebyshev,
    im: Option<Chebyshev>,
    at_origin: Complex64,
    nodes: usize,
}

const ZONAL_MIN_NODES: usize = 32;
const ZONAL_MAX_NODES: usize = 4096;

impl ZonalKernel {
    /// Builds the table by node doubling until the trailing coefficients
    /// fall below `rel_tol · |K(0)|`.
    pub fn build(lambdas: &[f64], weights: &[Complex64], d_max: f64, rel_tol: f64) -> Result<Self, SpectralError> {
        if lambdas.len() != weights.len() {
            return Err(SpectralError::ShapeMismatch(format!("{} nodes vs {} weights", lambdas.len(), weights.len())));
        }
        if !(d_max > 0.0) {
            return Err(SpectralError::InvalidGrid(format!("kernel range must be positive, got {d_max}")));
        }
        let at_origin: Complex64 = weights.iter().sum();
        let has_im = weights.iter().any(|w| w.im != 0.0);
        let scale = at_origin.norm().max(f64::MIN_POSITIVE);
        let mut n = ZONAL_MIN_NODES;
        loop {
            let ds = Chebyshev::nodes(n, 0.0, d_max);
            let vals: Vec<Complex64> = ds
                .par_iter()
                .map(|&d| {
                    let phi = spherical_functions(lambdas, d)?;
                    Ok(phi.iter().zip(weights).map(|(p, w)| w * *p).sum())
                })
                .collect::<Result<_, SpectralError>>()?;
            let re = Chebyshev::from_values(0.0, d_max, &vals.iter().map(|v| v.re).collect::<Vec<_>>());
            let im = has_im.then(|| Chebyshev::from_values(0.0, d_max, &vals.iter().map(|v| v.im).collect::<Vec<_>>()));
            let tail = re.tail(4).max(im.as_ref().map_or(0.0, |c| c.tail(4)));
            if tail <= rel_tol * scale {
                return Ok(Self { re, im, at_origin, nodes: n });
            }
            if n >= ZONAL_MAX_NODES {
                return Err(SpectralError::QuadratureFailed { lambda: lambdas.last().copied().unwrap_or(0.0), r: d_max });
            }
            n *= 2;
        }
    }

    /// Kernel for the λ-measure of `grid` restricted to `λ ≤ cutoff`, with
    /// weights `w(λ)`.
    pub fn on_grid(
        grid: &SpectralGrid,
        cutoff: f64,
        w: impl Fn(f64) -> Complex64,
        d_max: f64,
        rel_tol: f64,
    ) -> Result<Self, SpectralError> {
        let meas = grid.measure();
        let (lambdas, weights): (Vec<f64>, Vec<Complex64>) = grid
            .lambda_nodes
            .iter()
            .zip(&meas)
            .filter(|(&l, _)| l <= cutoff)
            .map(|(&l, &m)| (l, w(l) * m))
            .unzip();
        Self::build(&lambdas, &weights, d_max, rel_tol)
    }

    pub fn eval(&self, d: f64) -> Complex64 {
        Complex64::new(self.re.eval(d), self.im.as_ref().map_or(0.0, |c| c.eval(d)))
    }

    pub fn eval_re(&self, d: f64) -> f64 {
        self.re.eval(d)
    }

    /// Exact quadrature value at `d = 0`.
    pub fn at_origin(&self) -> Complex64 {
        self.at_origin
    }

    pub fn range(&self) -> f64 {
        self.re.domain().1
    }

    pub fn nodes(&self) -> usize {
        self.nodes
    }
}

/// Outcome of a Plancherel calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub scale: f64,
    pub implied: Vec<f64>,
    pub spread: f64,
}

/// Least-squares Plancherel constant from test functions given on `grid`.
///
/// Each function is evaluated with unit scale; the scale `s` making
/// `s²‖f₁‖²_spatial = s·‖f̂‖²_unit` is formed per function and the relative
/// residuals are minimized jointly.
pub fn calibrate_plancherel(
    test_functions: &[SpectralCoeffs],
    polar: &PolarGrid,
) -> Result<Calibration, SpectralError> {
    if test_functions.len() < 3 {
        return Err(SpectralError::TooFewTestFunctions(test_functions.len()));
    }
    let implied = test_functions
        .iter()
        .map(|f| {
            let unit = Arc::new(f.grid.with_scale(1.0)?);
            let fu = SpectralCoeffs { grid: unit, values: f.values.clone() };
            let spectral = fu.norm_sqr();
            let spatial = polar.norm_sqr(&evaluate_polar(&fu, polar)?);
            Ok(spectral / spatial)
        })
        .collect::<Result<Vec<f64>, SpectralError>>()?;
    let a: f64 = implied.iter().map(|s| 1.0 / s).sum();
    let b: f64 = implied.iter().map(|s| 1.0 / (s * s)).sum();
    let scale = a / b;
    let max = implied.iter().cloned().fold(f64::MIN, f64::max);
    let min = implied.iter().cloned().fold(f64::MAX, f64::min);
    let spread = max / min - 1.0;
    if !(spread < 1e-3) {
        return Err(SpectralError::CalibrationInconsistent { spread });
    }
    Ok(Calibration { scale, implied, spread })
}

/// Polar grid used for calibration and global norm checks at band `ω`.
pub fn default_polar_grid(omega: f64) -> PolarGrid {
    let r_max = 16.0_f64.max(8.0 * omega);
    PolarGrid::new(r_max, (12.0 * r_max * omega.max(1.0)).ceil() as usize, 64)
}

static CALIBRATED: OnceLock<f64> = OnceLock::new();

/// Plancherel constant calibrated once per process on the default ω = 2 setup.
pub fn calibrated_scale() -> f64 {
    *CALIBRATED.get_or_init(|| {
        let omega = 2.0;
        let grid = Arc::new(SpectralGrid::new(GridSpec::for_band(omega), 1.0).expect("default grid"));
        let funcs: Vec<SpectralCoeffs> = (0..3)
            .map(|seed| crate::bandlimited::synthesize(grid.clone(), omega, seed, 3).coeffs)
            .collect();
        calibrate_plancherel(&funcs, &default_polar_grid(omega))
            .expect("default Plancherel calibration")
            .scale
    })
}
