//! Band-limited functions: spectral synthesis, Bernstein checks, and an
//! empirical density probe.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::Array2;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::geometry::{transport, Point, RHO};
use crate::spectral::{
    apply_multiplier, evaluate_polar, inverse_transform, Multiplier, PolarGrid, SpectralCoeffs, SpectralError,
    SpectralGrid,
};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum BandlimitedError {
    #[error("coefficients are nonzero above the band limit {omega} (at λ = {lambda})")]
    NotBandlimited { omega: f64, lambda: f64 },
    #[error("band limit {omega} exceeds the grid band {grid_omega}")]
    BandExceedsGrid { omega: f64, grid_omega: f64 },
    #[error(transparent)]
    Spectral(#[from] SpectralError),
}

/// Smooth compactly supported profile in `λ`:
/// `exp(β(√(1−s²) − 1))` times a C^∞ taper, `s = (λ − center)/half_width`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralProfile {
    pub center: f64,
    pub half_width: f64,
    pub beta: f64,
    pub flat: f64,
}

impl SpectralProfile {
    /// Default profile filling `(0.025ω, 0.975ω)`.
    pub fn standard(omega: f64) -> Self {
        Self { center: 0.5 * omega, half_width: 0.475 * omega, beta: 9.0, flat: 0.93 }
    }

    pub fn bump(center: f64, half_width: f64) -> Self {
        Self { center, half_width, beta: 9.0, flat: 0.93 }
    }

    pub fn eval(&self, lambda: f64) -> f64 {
        let s = ((lambda - self.center) / self.half_width).abs();
        if s >= 1.0 {
            return 0.0;
        }
        (self.beta * ((1.0 - s * s).sqrt() - 1.0)).exp() * smooth_cutoff(s, self.flat)
    }

    pub fn support(&self) -> (f64, f64) {
        (self.center - self.half_width, self.center + self.half_width)
    }
}

/// 1 on `[0, a]`, 0 at 1, C^∞ in between.
fn smooth_cutoff(s: f64, a: f64) -> f64 {
    if s <= a {
        return 1.0;
    }
    let t = (s - a) / (1.0 - a);
    if t >= 1.0 {
        return 0.0;
    }
    let f1 = (-1.0 / (1.0 - t)).exp();
    let f2 = (-1.0 / t).exp();
    f1 / (f1 + f2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandlimitedFunction {
    pub omega: f64,
    pub coeffs: SpectralCoeffs,
    pub label: String,
}

impl BandlimitedFunction {
    /// Wraps coefficients after checking they vanish above `omega`.
    pub fn new(omega: f64, coeffs: SpectralCoeffs, label: impl Into<String>) -> Result<Self, BandlimitedError> {
        for (row, &l) in coeffs.values.outer_iter().zip(&coeffs.grid.lambda_nodes) {
            if l > omega && row.iter().any(|v| v.norm() != 0.0) {
                return Err(BandlimitedError::NotBandlimited { omega, lambda: l });
            }
        }
        Ok(Self { omega, coeffs, label: label.into() })
    }

    /// Zeroes every coefficient above `omega`.
    pub fn project(omega: f64, mut coeffs: SpectralCoeffs, label: impl Into<String>) -> Self {
        let nodes = coeffs.grid.lambda_nodes.clone();
        for (mut row, &l) in coeffs.values.outer_iter_mut().zip(&nodes) {
            if l > omega {
                row.fill(Complex64::new(0.0, 0.0));
            }
        }
        Self { omega, coeffs, label: label.into() }
    }

    pub fn zero(grid: Arc<SpectralGrid>, omega: f64) -> Self {
        Self { omega, coeffs: SpectralCoeffs::zeros(grid), label: "zero".into() }
    }

    pub fn grid(&self) -> &Arc<SpectralGrid> {
        &self.coeffs.grid
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.norm()
    }

    pub fn eval(&self, points: &[Point]) -> Result<Vec<Complex64>, SpectralError> {
        inverse_transform(&self.coeffs, points)
    }

    pub fn eval_polar(&self, grid: &PolarGrid) -> Result<Array2<Complex64>, SpectralError> {
        evaluate_polar(&self.coeffs, grid)
    }

    pub fn scaled(&self, a: Complex64) -> Self {
        Self { omega: self.omega, coeffs: self.coeffs.scaled(a), label: self.label.clone() }
    }

    pub fn apply(&self, m: &Multiplier) -> Self {
        Self { omega: self.omega, coeffs: apply_multiplier(&self.coeffs, m), label: format!("{}|{}", self.label, m.label()) }
    }
}

/// Coefficients `profile(λ) Σ_{|m|≤n_modes} a_m e^{imβ}` with seeded complex
/// normal amplitudes, scaled to unit norm. Not band-checked.
pub fn synthesize_profile(
    grid: Arc<SpectralGrid>,
    profile: SpectralProfile,
    seed: u64,
    n_modes: usize,
) -> SpectralCoeffs {
    let nb = grid.n_b();
    assert!(n_modes < nb / 2, "n_modes must be below n_b/2");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let amps: Vec<Complex64> = (0..2 * n_modes + 1)
        .map(|_| {
            let re: f64 = StandardNormal.sample(&mut rng);
            let im: f64 = StandardNormal.sample(&mut rng);
            Complex64::new(re, im)
        })
        .collect();
    let angular: Vec<Complex64> = (0..nb)
        .map(|j| {
            let beta = grid.boundary_angle(j);
            amps.iter()
                .enumerate()
                .map(|(k, a)| a * Complex64::from_polar(1.0, (k as f64 - n_modes as f64) * beta))
                .sum()
        })
        .collect();
    let mut values = Array2::zeros((grid.n_lambda(), nb));
    for (i, &l) in grid.lambda_nodes.iter().enumerate() {
        let p = profile.eval(l);
        if p != 0.0 {
            for j in 0..nb {
                values[(i, j)] = angular[j] * p;
            }
        }
    }
    let c = SpectralCoeffs { grid, values };
    let n = c.norm();
    if n > 0.0 {
        c.scaled(Complex64::new(1.0 / n, 0.0))
    } else {
        c
    }
}

/// Seeded random element of the band `[0, omega]` with unit norm.
pub fn synthesize(grid: Arc<SpectralGrid>, omega: f64, seed: u64, n_modes: usize) -> BandlimitedFunction {
    assert!(omega > 0.0 && omega <= grid.omega() + 1e-15, "band must fit the grid band");
    let coeffs = synthesize_profile(grid, SpectralProfile::standard(omega), seed, n_modes);
    BandlimitedFunction { omega, coeffs, label: format!("synth(omega={omega},seed={seed},modes={n_modes})") }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BernsteinReport {
    pub sigma: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

/// Compares `‖(−Δ)^σ f‖` with `(ω² + ρ²)^σ ‖f‖`.
pub fn bernstein_check(f: &BandlimitedFunction, sigma: f64) -> BernsteinReport {
    let lhs = apply_multiplier(&f.coeffs, &Multiplier::neg_laplacian_power(sigma)).norm();
    let rhs = (f.omega * f.omega + RHO * RHO).powf(sigma) * f.norm();
    BernsteinReport { sigma, lhs, rhs, pass: lhs <= rhs * (1.0 + 1e-10) }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConverseReport {
    pub sigmas: Vec<f64>,
    /// `None` when `f = 0`.
    pub ratios: Vec<Option<f64>>,
}

/// Ratios `‖(−Δ)^σ f‖ / ((ω² + ρ²)^σ ‖f‖)` along `sigmas`.
pub fn converse_bernstein_probe(f: &SpectralCoeffs, omega: f64, sigmas: &[f64]) -> ConverseReport {
    let n = f.norm();
    let ratios = sigmas
        .iter()
        .map(|&s| {
            if n == 0.0 {
                return None;
            }
            let lhs = apply_multiplier(f, &Multiplier::neg_laplacian_power(s)).norm();
            Some(lhs / ((omega * omega + RHO * RHO).powf(s) * n))
        })
        .collect();
    ConverseReport { sigmas: sigmas.to_vec(), ratios }
}

/// Geodesic ball with a polar quadrature about its center.
#[derive(Debug, Clone)]
pub struct QuadBall {
    pub center: Point,
    pub polar: PolarGrid,
}

impl QuadBall {
    pub fn new(center: Point, radius: f64, n_r: usize, n_theta: usize) -> Self {
        Self { center, polar: PolarGrid::new(radius, n_r, n_theta) }
    }

    pub fn radius(&self) -> f64 {
        self.polar.r_max
    }

    /// Quadrature nodes in row-major `(r, θ)` order.
    pub fn points(&self) -> Vec<Point> {
        let p = &self.polar;
        (0..p.radii.len())
            .flat_map(|i| (0..p.n_theta).map(move |l| (i, l)))
            .map(|(i, l)| transport(self.center, p.point(i, l)))
            .collect()
    }

    /// Quadrature weights matching [`QuadBall::points`].
    pub fn weights(&self) -> Vec<f64> {
        let p = &self.polar;
        p.weights.iter().flat_map(|&w| std::iter::repeat(w).take(p.n_theta)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityReport {
    pub counts: Vec<usize>,
    pub errors: Vec<f64>,
    /// Condition number of the ball Gram matrix of the full basis.
    pub condition: f64,
    pub ill_conditioned: bool,
    /// Basis functions dropped as numerically dependent.
    pub dependent: usize,
}

/// Relative least-squares error of `target` (values at `ball.points()`) on
/// the span of the first `n` basis functions, for each `n` in `counts`.
pub fn density_probe(
    basis: &[BandlimitedFunction],
    ball: &QuadBall,
    target: &[Complex64],
    counts: &[usize],
) -> Result<DensityReport, SpectralError> {
    let pts = ball.points();
    assert_eq!(pts.len(), target.len());
    let sw: Vec<f64> = ball.weights().iter().map(|w| w.sqrt()).collect();
    let cols: Vec<Vec<Complex64>> = basis
        .iter()
        .map(|b| Ok(b.eval(&pts)?.iter().zip(&sw).map(|(v, w)| v * *w).collect()))
        .collect::<Result<_, SpectralError>>()?;
    let t: Vec<Complex64> = target.iter().zip(&sw).map(|(v, w)| v * *w).collect();
    let dot = |a: &[Complex64], b: &[Complex64]| -> Complex64 { a.iter().zip(b).map(|(x, y)| x.conj() * y).sum() };
    let norm = |a: &[Complex64]| dot(a, a).re.sqrt();

    let n = basis.len();
    let gram = DMatrix::from_fn(n, n, |p, q| dot(&cols[p], &cols[q]));
    let ev = SymmetricEigen::new(gram).eigenvalues;
    let (lo, hi) = ev.iter().fold((f64::MAX, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };

    // Modified Gram–Schmidt with reorthogonalization; residual norms are
    // nonincreasing in n by construction.
    let t_norm = norm(&t);
    let mut q: Vec<Vec<Complex64>> = Vec::new();
    let mut resid = t.clone();
    let mut errs_by_n = vec![1.0; n + 1];
    let mut dependent = 0;
    for (k, c) in cols.iter().enumerate() {
        let mut v = c.clone();
        let c_norm = norm(&v);
        for _ in 0..2 {
            for e in &q {
                let a = dot(e, &v);
                v.iter_mut().zip(e).for_each(|(x, y)| *x -= a * y);
            }
        }
        let vn = norm(&v);
        if vn > 1e-10 * c_norm && vn > 0.0 {
            v.iter_mut().for_each(|x| *x /= vn);
            let a = dot(&v, &resid);
            resid.iter_mut().zip(&v).for_each(|(x, y)| *x -= a * y);
            q.push(v);
        } else {
            dependent += 1;
        }
        errs_by_n[k + 1] = if t_norm > 0.0 { norm(&resid) / t_norm } else { 0.0 };
    }
    let errors = counts.iter().map(|&c| errs_by_n[c.min(n)]).collect();
    Ok(DensityReport { counts: counts.to_vec(), errors, condition, ill_conditioned: condition > 1e12, dependent })
}
