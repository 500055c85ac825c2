//! Euclidean band-limited signals on the line: oversampled sinc series and
//! exponential frames on `[−ω, ω]`.
//!
//! Conventions: `f(t) = (1/2π) ∫_{−ω}^{ω} f̂(ξ) e^{itξ} dξ` and
//! `‖f‖² = (1/2π) ∫ |f̂|²`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::quadrature::gauss_legendre;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum BaselineError {
    #[error("invalid parameter: {0}")]
    Invalid(String),
    /// Largest gap between consecutive points exceeds the Nyquist spacing `π/ω`.
    #[error("points do not sample the band: gap {gap} exceeds {limit}")]
    NotAFrame { gap: f64, limit: f64 },
    #[error("Gram matrix has no positive eigenvalue")]
    DegenerateGram,
}

/// Nodes per Gauss–Legendre panel.
const PANEL_NODES: usize = 24;
/// Largest `half_width · t_max` per panel.
const PANEL_PHASE: f64 = 8.0;

/// `sin x / x` with the removable singularity filled in.
pub fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 + x2 * x2 / 120.0
    } else {
        x.sin() / x
    }
}

/// A band-limited signal given by its spectrum on a composite quadrature
/// grid over `[−ω, ω]`, resolved for evaluation at `|t| ≤ t_max`.
#[derive(Debug, Clone)]
pub struct Signal1D {
    pub omega: f64,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub modes: Vec<Complex64>,
    pub t_max: f64,
}

impl Signal1D {
    /// Samples `fhat` on an even number of panels, so `ξ = 0` is a panel edge.
    pub fn from_spectrum(
        omega: f64,
        t_max: f64,
        fhat: impl Fn(f64) -> Complex64,
    ) -> Result<Self, BaselineError> {
        Self::on_support(omega, omega, 2, t_max, fhat)
    }

    /// As [`Signal1D::from_spectrum`] with the quadrature on `[−support, support]`
    /// and the panel count a multiple of `multiple`.
    fn on_support(
        omega: f64,
        support: f64,
        multiple: usize,
        t_max: f64,
        fhat: impl Fn(f64) -> Complex64,
    ) -> Result<Self, BaselineError> {
        if !(omega > 0.0) || !(t_max > 0.0) || !(support > 0.0 && support <= omega) {
            return Err(BaselineError::Invalid(format!("omega = {omega}, support = {support}, t_max = {t_max}")));
        }
        let panels = ((support * t_max / PANEL_PHASE / multiple as f64).ceil() as usize).max(1) * multiple;
        let h = 2.0 * support / panels as f64;
        let mut nodes = Vec::with_capacity(panels * PANEL_NODES);
        let mut weights = Vec::with_capacity(panels * PANEL_NODES);
        for p in 0..panels {
            let a = -support + p as f64 * h;
            let (x, w) = gauss_legendre(PANEL_NODES, a, a + h);
            nodes.extend(x);
            weights.extend(w);
        }
        let modes = nodes.iter().map(|&x| fhat(x)).collect();
        Ok(Self { omega, nodes, weights, modes, t_max })
    }

    /// `(sin(a t)/t)³`, band `3a`. The spectrum is `π/4` times the threefold
    /// convolution of the indicator of `[−a, a]`: `3a² − ξ²` for `|ξ| ≤ a`,
    /// `(3a − |ξ|)²/2` for `a ≤ |ξ| ≤ 3a`.
    pub fn cubed_sinc(a: f64, omega: f64, t_max: f64) -> Result<Self, BaselineError> {
        if !(a > 0.0) || 3.0 * a > omega {
            return Err(BaselineError::Invalid(format!("band 3a = {} must lie in (0, {omega}]", 3.0 * a)));
        }
        // Six panels per unit keep the kinks at ±a on panel edges.
        Self::on_support(omega, 3.0 * a, 6, t_max, |x| {
            let x = x.abs();
            let b = if x <= a { 3.0 * a * a - x * x } else { 0.5 * (3.0 * a - x).max(0.0).powi(2) };
            Complex64::new(0.25 * PI * b, 0.0)
        })
    }

    /// `(sin(a t)/t)³` in closed form.
    pub fn cubed_sinc_exact(a: f64, t: f64) -> f64 {
        (a * sinc(a * t)).powi(3)
    }

    /// Sum of `count` Kaiser-windowed pulses with seeded complex amplitudes,
    /// centered uniformly in `[−spread, spread]`; unit norm.
    pub fn random(omega: f64, t_max: f64, seed: u64, count: usize, spread: f64) -> Result<Self, BaselineError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pulses: Vec<(f64, Complex64)> = (0..count)
            .map(|_| {
                let c = rng.random_range(-spread..=spread);
                let a = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                (c, a)
            })
            .collect();
        let s = Self::from_spectrum(omega, t_max, |x| {
            let w = kaiser(x / omega);
            pulses.iter().map(|(c, a)| a * Complex64::from_polar(w, -c * x)).sum()
        })?;
        let n = s.norm();
        Ok(s.scaled(1.0 / n))
    }

    pub fn scaled(mut self, a: f64) -> Self {
        self.modes.iter_mut().for_each(|m| *m *= a);
        self
    }

    pub fn norm(&self) -> f64 {
        (self.weights.iter().zip(&self.modes).map(|(w, m)| w * m.norm_sqr()).sum::<f64>() / (2.0 * PI)).sqrt()
    }

    pub fn eval(&self, t: &[f64]) -> Vec<Complex64> {
        t.par_iter()
            .map(|&t| {
                self.nodes
                    .iter()
                    .zip(&self.weights)
                    .zip(&self.modes)
                    .map(|((&x, &w), &m)| m * Complex64::from_polar(w, t * x))
                    .sum::<Complex64>()
                    / (2.0 * PI)
            })
            .collect()
    }
}

/// Kaiser window `exp(β(√(1−s²) − 1))` on `|s| ≤ 1`.
fn kaiser(s: f64) -> f64 {
    const BETA: f64 = 24.0;
    if s.abs() >= 1.0 {
        0.0
    } else {
        (BETA * ((1.0 - s * s).sqrt() - 1.0)).exp()
    }
}

/// Sampling step `γπ/ω`.
pub fn sinc_step(omega: f64, gamma: f64) -> f64 {
    gamma * PI / omega
}

/// `γ Σ_{|n| ≤ N} f(nT) sinc(ω(t − nT))` with `T = γπ/ω`.
///
/// The sinc kernel has band `ω ≤ π/T`, so the series is exact for signals in
/// the band; the `γ` factor is the step `T` times the kernel height `ω/π`.
pub fn sinc_reconstruct(
    f: &Signal1D,
    gamma: f64,
    n_trunc: usize,
    t_eval: &[f64],
) -> Result<Vec<Complex64>, BaselineError> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(BaselineError::Invalid(format!("oversampling factor must be in (0, 1), got {gamma}")));
    }
    let step = sinc_step(f.omega, gamma);
    let n = n_trunc as i64;
    let times: Vec<f64> = (-n..=n).map(|j| j as f64 * step).collect();
    if times.last().copied().unwrap_or(0.0) > f.t_max * (1.0 + 1e-12) {
        return Err(BaselineError::Invalid("signal is not resolved over the sampling window".into()));
    }
    let samples = f.eval(&times);
    Ok(sinc_series(&samples, &times, f.omega, gamma, t_eval))
}

fn sinc_series(samples: &[Complex64], times: &[f64], omega: f64, gamma: f64, t_eval: &[f64]) -> Vec<Complex64> {
    t_eval
        .par_iter()
        .map(|&t| gamma * samples.iter().zip(times).map(|(s, &x)| s * sinc(omega * (t - x))).sum::<Complex64>())
        .collect()
}

/// Upper bound on the neglected terms at `t` for a signal with
/// `|f(s)| ≤ c / |s|³` beyond the window: each side contributes at most
/// `γ c Σ_{n>N} (nT)^{−3} · min(1, 1/(ω(nT − |t|)))`.
pub fn sinc_tail_bound(c: f64, omega: f64, gamma: f64, n_trunc: usize, t: f64) -> f64 {
    let step = sinc_step(omega, gamma);
    let gap = n_trunc as f64 * step - t.abs();
    assert!(gap > 0.0, "evaluation point outside the window");
    // Σ_{n>N} n^{−3} ≤ 1/(2N²).
    2.0 * gamma * c / (2.0 * (n_trunc as f64).powi(2) * step.powi(3)) / (omega * gap).max(1.0)
}

/// `G_{jk} = ∫_{−ω}^{ω} e^{i(x_j − x_k)ξ} dξ = 2ω sinc(ω(x_j − x_k))`.
pub fn exp_frame_gram(points: &[f64], omega: f64) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |j, k| 2.0 * omega * sinc(omega * (points[j] - points[k])))
}

/// [`exp_frame_gram`] for `x_j = x_0 + j·step`, built from index differences
/// so that the Toeplitz structure is exact.
pub fn exp_frame_gram_uniform(n: usize, step: f64, omega: f64) -> DMatrix<f64> {
    let diag: Vec<f64> = (0..n).map(|d| 2.0 * omega * sinc(omega * d as f64 * step)).collect();
    DMatrix::from_fn(n, n, |j, k| diag[j.abs_diff(k)])
}

/// Largest `|G_{jk} − G_{j+1,k+1}|` and `|G_{jk} − conj(G_{kj})|`.
pub fn toeplitz_defect(g: &DMatrix<f64>) -> f64 {
    let n = g.nrows();
    let mut worst: f64 = 0.0;
    for j in 0..n {
        for k in 0..n {
            worst = worst.max((g[(j, k)] - g[(k, j)]).abs());
            if j + 1 < n && k + 1 < n {
                worst = worst.max((g[(j, k)] - g[(j + 1, k + 1)]).abs());
            }
        }
    }
    worst
}

#[derive(Debug, Clone, Copy)]
pub struct ExpFrameOptions {
    /// Relative eigenvalue cutoff of the pseudo-inverse.
    pub pinv_cutoff: f64,
}

impl Default for ExpFrameOptions {
    fn default() -> Self {
        Self { pinv_cutoff: 1e-14 }
    }
}

/// Eigen-decomposed Gram of the exponentials `e^{i x_j ξ}` on `[−ω, ω]`.
#[derive(Debug, Clone)]
pub struct ExpFrame {
    pub points: Vec<f64>,
    pub omega: f64,
    pub gram: DMatrix<f64>,
    pub eigen: SymmetricEigen<f64, nalgebra::Dyn>,
    pub cutoff: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Smallest retained eigenvalue: the lower frame bound on the span.
    pub lower_bound: f64,
    pub rank: usize,
}

/// Rejects point sets with a gap wider than `π/ω`, then factorizes the Gram.
pub fn build_exp_frame(points: &[f64], omega: f64, options: ExpFrameOptions) -> Result<ExpFrame, BaselineError> {
    if points.is_empty() || !(omega > 0.0) {
        return Err(BaselineError::Invalid("need points and a positive band".into()));
    }
    let mut sorted = points.to_vec();
    sorted.sort_by(f64::total_cmp);
    let gap = sorted.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    let limit = PI / omega;
    if gap > limit {
        return Err(BaselineError::NotAFrame { gap, limit });
    }
    let gram = exp_frame_gram(points, omega);
    let eigen = SymmetricEigen::new(gram.clone());
    let lambda_max = eigen.eigenvalues.max();
    let lambda_min = eigen.eigenvalues.min();
    if !(lambda_max > 0.0) {
        return Err(BaselineError::DegenerateGram);
    }
    let cutoff = options.pinv_cutoff * lambda_max;
    let kept: Vec<f64> = eigen.eigenvalues.iter().copied().filter(|&l| l > cutoff).collect();
    let lower_bound = kept.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(ExpFrame { points: points.to_vec(), omega, rank: kept.len(), gram, eigen, cutoff, lambda_min, lambda_max, lower_bound })
}

impl ExpFrame {
    /// Minimum-norm coefficients `c` with `(1/2π) G c = s` on the retained span.
    pub fn solve(&self, samples: &[Complex64]) -> Vec<Complex64> {
        let v = &self.eigen.eigenvectors;
        let re = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.re));
        let im = DVector::from_iterator(samples.len(), samples.iter().map(|s| s.im));
        let apply = |b: &DVector<f64>| {
            let mut proj = v.transpose() * b;
            for (p, &l) in proj.iter_mut().zip(self.eigen.eigenvalues.iter()) {
                *p = if l > self.cutoff { 2.0 * PI * *p / l } else { 0.0 };
            }
            v * proj
        };
        let (cr, ci) = (apply(&re), apply(&im));
        cr.iter().zip(ci.iter()).map(|(&a, &b)| Complex64::new(a, b)).collect()
    }

    /// `Σ_j c_j (ω/π) sinc(ω(t − x_j))`.
    pub fn eval(&self, coeffs: &[Complex64], t_eval: &[f64]) -> Vec<Complex64> {
        let h = self.omega / PI;
        t_eval
            .par_iter()
            .map(|&t| {
                coeffs.iter().zip(&self.points).map(|(c, &x)| c * (h * sinc(self.omega * (t - x)))).sum::<Complex64>()
            })
            .collect()
    }

    pub fn reconstruct(&self, samples: &[Complex64], t_eval: &[f64]) -> Vec<Complex64> {
        self.eval(&self.solve(samples), t_eval)
    }
}

/// `‖a − b‖₂ / ‖a‖₂` over evaluation points.
pub fn relative_error(reference: &[Complex64], approx: &[Complex64]) -> f64 {
    let num: f64 = reference.iter().zip(approx).map(|(a, b)| (a - b).norm_sqr()).sum();
    let den: f64 = reference.iter().map(|a| a.norm_sqr()).sum();
    (num / den).sqrt()
}

/// `count` equispaced points covering `[−h, h]`, `h` the central half of
/// the sampling window `[−N T, N T]`.
pub fn central_points(omega: f64, gamma: f64, n_trunc: usize, count: usize) -> Vec<f64> {
    let h = 0.5 * n_trunc as f64 * sinc_step(omega, gamma);
    (0..count).map(|i| -h + 2.0 * h * (i as f64 + 0.5) / count as f64).collect()
}

/// Outcome of the two reconstruction routes on one uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct BaselineReport {
    pub omega: f64,
    pub gamma: f64,
    pub n_trunc: usize,
    pub sinc_error: f64,
    pub gram_error: f64,
    /// Relative difference between the sinc and Gram reconstructions.
    pub route_difference: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
}

/// Samples `f` at `nT`, `|n| ≤ N`, and compares the sinc series and the Gram
/// solve against `f` at `count` central points.
pub fn compare_routes(f: &Signal1D, gamma: f64, n_trunc: usize, count: usize) -> Result<BaselineReport, BaselineError> {
    let step = sinc_step(f.omega, gamma);
    let n = n_trunc as i64;
    let times: Vec<f64> = (-n..=n).map(|j| j as f64 * step).collect();
    let t_eval = central_points(f.omega, gamma, n_trunc, count);
    let truth = f.eval(&t_eval);
    let via_sinc = sinc_reconstruct(f, gamma, n_trunc, &t_eval)?;
    let frame = build_exp_frame(&times, f.omega, ExpFrameOptions::default())?;
    let via_gram = frame.reconstruct(&f.eval(&times), &t_eval);
    Ok(BaselineReport {
        omega: f.omega,
        gamma,
        n_trunc,
        sinc_error: relative_error(&truth, &via_sinc),
        gram_error: relative_error(&truth, &via_gram),
        route_difference: relative_error(&via_sinc, &via_gram),
        lambda_min: frame.lambda_min,
        lambda_max: frame.lambda_max,
    })
}

impl BaselineReport {
    /// Rows in the reconstruction schema; `r` carries the sampling step.
    pub fn to_rows(&self) -> Vec<crate::sampling::ReconstructionRow> {
        let step = sinc_step(self.omega, self.gamma);
        let size = 2 * self.n_trunc + 1;
        [("sinc1d", self.sinc_error), ("gram1d", self.gram_error)]
            .into_iter()
            .map(|(name, e)| crate::sampling::ReconstructionRow {
                experiment: name.into(),
                omega: self.omega,
                r: step,
                lattice_size: size,
                lambda_min: self.lambda_min,
                lambda_max: self.lambda_max,
                rel_error: e,
                runtime: None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const OMEGA: f64 = 1.0;

    fn window(gamma: f64, n: usize) -> f64 {
        n as f64 * sinc_step(OMEGA, gamma)
    }

    #[test]
    fn quadrature_matches_closed_form_signal() {
        let a = 0.3 * OMEGA;
        let f = Signal1D::cubed_sinc(a, OMEGA, 800.0).unwrap();
        let ts = [0.0, 0.3, -7.1, 55.5, 640.0];
        let vals = f.eval(&ts);
        for (t, v) in ts.iter().zip(vals) {
            let exact = Signal1D::cubed_sinc_exact(a, *t);
            assert!((v.re - exact).abs() < 1e-14 && v.im.abs() < 1e-14, "t = {t}: {v} vs {exact}");
        }
    }

    #[test]
    fn sample_point_terms_are_exact() {
        let gamma = 0.8;
        let f = Signal1D::cubed_sinc(0.3, OMEGA, window(gamma, 500)).unwrap();
        let step = sinc_step(OMEGA, gamma);
        let t: Vec<f64> = (-3..=3).map(|j| j as f64 * step).collect();
        let rec = sinc_reconstruct(&f, gamma, 500, &t).unwrap();
        let truth = f.eval(&t);
        for (a, b) in rec.iter().zip(&truth) {
            assert!((a - b).norm() < 1e-8 * b.norm().max(1e-3), "{a} vs {b}");
        }
        assert_eq!(sinc(0.0), 1.0);
    }

    #[test]
    fn sinc_series_reproduces_cubed_sinc() {
        let gamma = 0.8;
        let f = Signal1D::cubed_sinc(0.3 * OMEGA, OMEGA, window(gamma, 500)).unwrap();
        let t = central_points(OMEGA, gamma, 500, 50);
        let err = relative_error(&f.eval(&t), &sinc_reconstruct(&f, gamma, 500, &t).unwrap());
        assert!(err < 1e-6, "{err}");
        // |f| ≤ 1/|t|³; the bound is relative to ‖f‖.
        let bound = sinc_tail_bound(1.0, OMEGA, gamma, 500, t[0]) / f.norm();
        assert!(bound < 1e-8, "{bound}");
    }

    #[test]
    fn sinc_rejects_critical_sampling() {
        let f = Signal1D::cubed_sinc(0.3, OMEGA, 100.0).unwrap();
        assert!(sinc_reconstruct(&f, 1.0, 10, &[0.0]).is_err());
        assert!(sinc_reconstruct(&f, 0.0, 10, &[0.0]).is_err());
    }

    #[test]
    fn critical_oversampling_degrades() {
        let f = Signal1D::cubed_sinc(0.3, OMEGA, window(0.99, 500)).unwrap();
        let t = central_points(OMEGA, 0.8, 500, 50);
        let e80 = relative_error(&f.eval(&t), &sinc_reconstruct(&f, 0.8, 500, &t).unwrap());
        let e99 = relative_error(&f.eval(&t), &sinc_reconstruct(&f, 0.99, 500, &t).unwrap());
        eprintln!("sinc error at gamma 0.8: {e80:e}, at 0.99: {e99:e}");
        assert!(e99 > e80, "{e99} vs {e80}");
    }

    #[test]
    fn single_point_gram_is_band_length() {
        let g = exp_frame_gram(&[0.7], 1.3);
        assert_eq!(g[(0, 0)], 2.6);
    }

    #[test]
    fn gram_matches_quadrature() {
        let omega = 1.7;
        let pts = [-2.3, 0.0, 0.4, 5.9];
        let g = exp_frame_gram(&pts, omega);
        let (x, w) = gauss_legendre(64, -omega, omega);
        for j in 0..pts.len() {
            for k in 0..pts.len() {
                let q: Complex64 =
                    x.iter().zip(&w).map(|(&xi, &wi)| Complex64::from_polar(wi, (pts[j] - pts[k]) * xi)).sum();
                assert!((q.re - g[(j, k)]).abs() < 1e-10 && q.im.abs() < 1e-10);
            }
        }
    }

    #[test]
    fn uniform_gram_is_exactly_toeplitz() {
        let step = sinc_step(OMEGA, 0.8);
        let g = exp_frame_gram_uniform(64, step, OMEGA);
        assert_eq!(toeplitz_defect(&g), 0.0);
        let pts: Vec<f64> = (0..64).map(|j| j as f64 * step).collect();
        let direct = exp_frame_gram(&pts, OMEGA);
        assert!((direct - &g).abs().max() < 1e-13);
    }

    #[test]
    fn sparse_points_are_not_a_frame() {
        let pts: Vec<f64> = (0..10).map(|j| j as f64 * 1.1 * PI).collect();
        assert!(matches!(build_exp_frame(&pts, OMEGA, ExpFrameOptions::default()), Err(BaselineError::NotAFrame { .. })));
    }

    #[test]
    fn gram_solve_reconstructs_localized_signal() {
        let gamma = 0.8;
        let step = sinc_step(OMEGA, gamma);
        let pts: Vec<f64> = (-32..32).map(|j| j as f64 * step).collect();
        let f = Signal1D::random(OMEGA, 200.0, 5, 3, 15.0).unwrap();
        let frame = build_exp_frame(&pts, OMEGA, ExpFrameOptions::default()).unwrap();
        assert!(frame.lambda_min > 0.0 || frame.lower_bound > 0.0);
        let t: Vec<f64> = (0..50).map(|i| -20.0 + 40.0 * i as f64 / 49.0).collect();
        let err = relative_error(&f.eval(&t), &frame.reconstruct(&f.eval(&pts), &t));
        assert!(err < 1e-6, "{err}");
    }

    #[test]
    fn gram_and_sinc_routes_agree() {
        let gamma = 0.8;
        let f = Signal1D::cubed_sinc(0.3, OMEGA, window(gamma, 500)).unwrap();
        let rep = compare_routes(&f, gamma, 500, 50).unwrap();
        assert!(rep.sinc_error < 1e-6, "{rep:?}");
        assert!(rep.route_difference < 1e-5, "{rep:?}");
        let rows = rep.to_rows();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].to_csv_row().ends_with(",NA"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn gram_is_symmetric_with_band_diagonal(pts in proptest::collection::vec(-50.0f64..50.0, 1..20), omega in 0.1f64..4.0) {
            let g = exp_frame_gram(&pts, omega);
            for j in 0..pts.len() {
                prop_assert_eq!(g[(j, j)], 2.0 * omega);
                for k in 0..pts.len() {
                    prop_assert_eq!(g[(j, k)], g[(k, j)]);
                    prop_assert!(g[(j, k)].abs() <= 2.0 * omega);
                }
            }
        }
    }
}
