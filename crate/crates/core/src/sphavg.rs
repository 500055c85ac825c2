//! Spherical averages: direct circle quadrature, the multiplier
//! `(λ²+ρ²)ⁿ φ_λ(τ)`, and reconstruction from averaged samples.

use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex64;
use thiserror::Error;

use crate::bandlimited::{synthesize, BandlimitedFunction, QuadBall};
use crate::geometry::{circle_points, GeometryError, Point, RHO};
use crate::lattice::Lattice;
use crate::sampling::{
    ball_error, build_frame, convolution_samples, point_samples, reconstruct, FrameOptions, SamplingError,
};
use crate::spectral::{spherical_function, Multiplier, SpectralError, SpectralGrid};
use crate::splines::{spline_grid, spline_reconstruct_deconvolve, SplineError, SplineOptions};

pub const MIN_CIRCLE_NODES: usize = 16;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum AverageError {
    #[error("invalid average: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Spectral(#[from] SpectralError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Spline(#[from] SplineError),
}

/// Sphere radius `τ`, Laplacian power `n`, and circle quadrature size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AverageSpec {
    pub tau: f64,
    pub n: u32,
    pub m_circle: usize,
}

impl AverageSpec {
    pub fn new(tau: f64, n: u32, m_circle: usize) -> Result<Self, AverageError> {
        if !(tau >= 0.0) || !tau.is_finite() {
            return Err(AverageError::InvalidSpec(format!("radius must be finite and ≥ 0, got {tau}")));
        }
        if m_circle < MIN_CIRCLE_NODES {
            return Err(AverageError::InvalidSpec(format!("need at least {MIN_CIRCLE_NODES} circle nodes, got {m_circle}")));
        }
        Ok(Self { tau, n, m_circle })
    }

    /// Largest admissible radius `(ω² + ρ²)^{−(n+1)/2}` for band `ω`.
    pub fn admissible_threshold(omega: f64, n: u32) -> f64 {
        (omega * omega + RHO * RHO).powf(-(n as f64 + 1.0) / 2.0)
    }

    pub fn is_admissible(&self, omega: f64) -> bool {
        self.tau < Self::admissible_threshold(omega, self.n)
    }
}

/// Mean of `f` over the geodesic circle of radius `τ` about `y`.
pub fn spherical_average_direct(f: &BandlimitedFunction, y: Point, spec: &AverageSpec) -> Result<Complex64, AverageError> {
    Ok(spherical_averages_direct(f, &[y], spec)?[0])
}

/// [`spherical_average_direct`] at many centers, sharing one evaluation pass.
pub fn spherical_averages_direct(
    f: &BandlimitedFunction,
    centers: &[Point],
    spec: &AverageSpec,
) -> Result<Vec<Complex64>, AverageError> {
    if spec.tau == 0.0 {
        return Ok(f.eval(centers)?);
    }
    let m = spec.m_circle;
    let mut pts = Vec::with_capacity(centers.len() * m);
    for &y in centers {
        pts.extend(circle_points(y, spec.tau, m)?);
    }
    let vals = f.eval(&pts)?;
    Ok(vals.chunks(m).map(|c| c.iter().sum::<Complex64>() / m as f64).collect())
}

/// `m(λ) = (λ² + ρ²)ⁿ φ_λ(τ)`.
pub fn average_multiplier(spec: &AverageSpec) -> Multiplier {
    let (tau, n) = (spec.tau, spec.n);
    Multiplier::real(format!("average(tau={tau},n={n})"), move |l| {
        let phi = if tau == 0.0 { 1.0 } else { spherical_function(l, tau).expect("spherical function") };
        (l * l + RHO * RHO).powi(n as i32) * phi
    })
}

/// `(−Δ)ⁿ f`.
pub fn neg_laplacian_power(f: &BandlimitedFunction, n: u32) -> BandlimitedFunction {
    if n == 0 {
        return f.clone();
    }
    f.apply(&Multiplier::neg_laplacian_power(n as f64))
}

/// Relative agreement of the multiplier path and the circle quadrature at `y`.
pub fn two_path_difference(f: &BandlimitedFunction, y: Point, spec: &AverageSpec) -> Result<f64, AverageError> {
    let via_multiplier = f.apply(&average_multiplier(spec)).eval(&[y])?[0];
    let direct = spherical_average_direct(&neg_laplacian_power(f, spec.n), y, spec)?;
    Ok((via_multiplier - direct).norm() / direct.norm().max(via_multiplier.norm()).max(f64::MIN_POSITIVE))
}

/// Near-identity estimate on the spectral nodes of `grid`, with `μ = λ² + ρ²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearIdentityReport {
    pub nodes: usize,
    /// Nodes violating `|m − μⁿ| ≤ min{2μⁿ, τ²μ^{n+1}}`.
    pub violations: usize,
    /// Largest `|m − μⁿ| / min{2μⁿ, τ²μ^{n+1}}`.
    pub worst_ratio: f64,
    /// Nodes violating the uncorrected form `|m − 1| ≤ min{2μⁿ, τ²μ^{n+1}}`.
    pub uncorrected_violations: usize,
}

pub fn near_identity_check(spec: &AverageSpec, grid: &SpectralGrid) -> NearIdentityReport {
    let m = average_multiplier(spec);
    let mut violations = 0;
    let mut uncorrected_violations = 0;
    let mut worst_ratio: f64 = 0.0;
    for &l in &grid.lambda_nodes {
        let mu = l * l + RHO * RHO;
        let mun = mu.powi(spec.n as i32);
        let v = m.eval(l).re;
        let bound = (2.0 * mun).min(spec.tau * spec.tau * mun * mu);
        let dev = (v - mun).abs();
        // Relative slack for rounding in m.
        let slack = 1e-12 * mun;
        if dev > bound + slack {
            violations += 1;
        }
        if (v - 1.0).abs() > bound + slack {
            uncorrected_violations += 1;
        }
        if bound > 0.0 {
            worst_ratio = worst_ratio.max(dev / bound);
        }
    }
    NearIdentityReport { nodes: grid.n_lambda(), violations, worst_ratio, uncorrected_violations }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionReport {
    pub tau: f64,
    /// `‖M^τ f‖ / ‖f‖`.
    pub ratio: f64,
    pub pass: bool,
}

/// `‖M^τ f‖ ≤ ‖f‖` through the spectral norm.
pub fn contraction_check(f: &BandlimitedFunction, spec: &AverageSpec) -> Result<ContractionReport, AverageError> {
    if spec.n != 0 {
        return Err(AverageError::InvalidSpec("contraction is stated for n = 0".into()));
    }
    let ratio = f.apply(&average_multiplier(spec)).norm() / f.norm();
    Ok(ContractionReport { tau: spec.tau, ratio, pass: ratio <= 1.0 + 1e-8 })
}

#[derive(Debug, Clone)]
pub struct ExperimentOptions {
    pub frame: FrameOptions,
    pub splines: SplineOptions,
    /// Spline orders; empty skips the spline path.
    pub schedule: Vec<u32>,
    /// Radius of the error ball about the origin; defaults to the lattice
    /// domain radius.
    pub ball_radius: Option<f64>,
    pub timing: bool,
}

impl Default for ExperimentOptions {
    fn default() -> Self {
        Self {
            frame: FrameOptions::default(),
            splines: SplineOptions::default(),
            schedule: crate::splines::DEFAULT_SCHEDULE.to_vec(),
            ball_radius: None,
            timing: false,
        }
    }
}

/// Spline-path outcome for one order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplineOutcome {
    pub k: u32,
    pub condition: f64,
    /// Unprojected and band-projected relative errors; `None` when guarded.
    pub error: Option<f64>,
    pub projected_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AveragedReport {
    pub omega: f64,
    pub r: f64,
    pub tau: f64,
    pub n: u32,
    pub lattice_size: usize,
    pub frame_error: f64,
    pub splines: Vec<SplineOutcome>,
    pub admissible: bool,
    pub runtime: Option<f64>,
}

pub const AVERAGED_HEADER: &str = "omega,r,tau,n,lattice_size,frame_error,spline_error_per_k,admissible,runtime";

impl AveragedReport {
    pub fn to_csv_row(&self) -> String {
        let splines: Vec<String> = self
            .splines
            .iter()
            .map(|s| match s.error {
                Some(e) => format!("{}:{e:e}", s.k),
                None => format!("{}:guard", s.k),
            })
            .collect();
        format!(
            "{},{},{},{},{},{:e},{},{},{}",
            self.omega,
            self.r,
            self.tau,
            self.n,
            self.lattice_size,
            self.frame_error,
            if splines.is_empty() { "NA".to_string() } else { splines.join(";") },
            self.admissible,
            self.runtime.map_or("NA".to_string(), |t| format!("{t:.3}"))
        )
    }
}

/// Synthesizes `f` on `grid`, samples `(−Δ)ⁿ M^τ f` on `lat`, and reconstructs
/// through the frame and the deconvolving splines; errors are relative L²
/// over the error ball.
pub fn averaged_sampling_experiment(
    grid: Arc<SpectralGrid>,
    lat: Arc<Lattice>,
    spec: &AverageSpec,
    seed: u64,
    options: &ExperimentOptions,
) -> Result<AveragedReport, AverageError> {
    let start = Instant::now();
    let omega = grid.omega();
    let f = synthesize(grid.clone(), omega, seed, 3);
    let m = average_multiplier(spec);
    let samples = convolution_samples(&f, lat.clone(), &m)?;
    let ball = QuadBall::new(Point::origin(), options.ball_radius.unwrap_or(lat.domain_radius), 32, 64);
    let pts = ball.points();
    let truth = f.eval(&pts)?;
    let frame = build_frame(lat.clone(), grid.clone(), omega, Some(&m), options.frame)?;
    let rec = reconstruct(&frame, &samples)?;
    let frame_error = ball_error(&truth, &rec.function.eval(&pts)?, &ball);
    let mut splines = Vec::new();
    if !options.schedule.is_empty() {
        let sgrid = spline_grid(omega, grid.plancherel_scale)?;
        let stages = spline_reconstruct_deconvolve(sgrid, &options.schedule, &samples, &options.splines)?;
        for st in stages {
            let error = match st.eval_unprojected(&pts) {
                Some(v) => Some(ball_error(&truth, &v?, &ball)),
                None => None,
            };
            let projected_error = match &st.function {
                Some(g) => Some(ball_error(&truth, &g.eval(&pts)?, &ball)),
                None => None,
            };
            splines.push(SplineOutcome { k: st.k, condition: st.condition, error, projected_error });
        }
    }
    Ok(AveragedReport {
        omega,
        r: lat.r,
        tau: spec.tau,
        n: spec.n,
        lattice_size: lat.len(),
        frame_error,
        splines,
        admissible: spec.is_admissible(omega),
        runtime: options.timing.then(|| start.elapsed().as_secs_f64()),
    })
}

/// Frame reconstruction error from plain point samples, for comparison with
/// the `τ = 0, n = 0` average.
pub fn point_sampling_error(
    grid: Arc<SpectralGrid>,
    lat: Arc<Lattice>,
    seed: u64,
    options: &ExperimentOptions,
) -> Result<f64, AverageError> {
    let omega = grid.omega();
    let f = synthesize(grid.clone(), omega, seed, 3);
    let samples = point_samples(&f, lat.clone())?;
    let ball = QuadBall::new(Point::origin(), options.ball_radius.unwrap_or(lat.domain_radius), 32, 64);
    let pts = ball.points();
    let frame = build_frame(lat, grid, omega, None, options.frame)?;
    let rec = reconstruct(&frame, &samples)?;
    Ok(ball_error(&f.eval(&pts)?, &rec.function.eval(&pts)?, &ball))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandlimited::{synthesize_profile, SpectralProfile};
    use crate::lattice::build_lattice;
    use crate::spectral::{calibrated_scale, GridSpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn grid() -> Arc<SpectralGrid> {
        static G: OnceLock<Arc<SpectralGrid>> = OnceLock::new();
        G.get_or_init(|| Arc::new(SpectralGrid::new(GridSpec::for_band(2.0), calibrated_scale()).unwrap())).clone()
    }

    fn spec(tau: f64, n: u32) -> AverageSpec {
        AverageSpec::new(tau, n, 64).unwrap()
    }

    #[test]
    fn spec_validation_and_admissibility() {
        assert!(AverageSpec::new(-0.1, 0, 64).is_err());
        assert!(AverageSpec::new(0.1, 0, 8).is_err());
        let t0 = AverageSpec::admissible_threshold(2.0, 0);
        let t1 = AverageSpec::admissible_threshold(2.0, 1);
        let t2 = AverageSpec::admissible_threshold(2.0, 2);
        assert!(t0 > t1 && t1 > t2);
        assert!((t0 - 4.25f64.powf(-0.5)).abs() < 1e-15);
        assert!(spec(0.3, 0).is_admissible(2.0));
        assert!(!spec(0.3, 1).is_admissible(2.0));
    }

    #[test]
    fn zero_radius_is_identity() {
        let f = synthesize(grid(), 2.0, 3, 3);
        let y = Point::new(0.2, -0.1).unwrap();
        let s = spec(0.0, 0);
        assert_eq!(spherical_average_direct(&f, y, &s).unwrap(), f.eval(&[y]).unwrap()[0]);
        let m = average_multiplier(&s);
        assert!(grid().lambda_nodes.iter().all(|&l| m.eval(l) == Complex64::new(1.0, 0.0)));
        let c = contraction_check(&f, &s).unwrap();
        assert!((c.ratio - 1.0).abs() < 1e-14);
    }

    #[test]
    fn circle_quadrature_converges() {
        let f = synthesize(grid(), 2.0, 8, 4);
        let y = Point::new(-0.3, 0.25).unwrap();
        for tau in [0.2, 0.6] {
            let a = spherical_average_direct(&f, y, &spec(tau, 0)).unwrap();
            let b = spherical_average_direct(&f, y, &AverageSpec::new(tau, 0, 128).unwrap()).unwrap();
            assert!((a - b).norm() < 1e-10, "{tau}: {}", (a - b).norm());
        }
    }

    #[test]
    fn multiplier_and_circle_paths_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for case in 0..10 {
            let f = synthesize(grid(), 2.0, 100 + case, 4);
            let y = Point::from_polar(rng.random_range(0.0..0.6), rng.random_range(0.0..6.3));
            let tau = rng.random_range(0.05..0.8);
            let n = (case % 2) as u32;
            let d = two_path_difference(&f, y, &spec(tau, n)).unwrap();
            assert!(d < 1e-6, "case {case}: {d}");
        }
    }

    #[test]
    fn zonal_function_average_matches_spherical_function() {
        // A single spectral line is averaged exactly by φ_λ(τ).
        let f = synthesize_profile(grid(), SpectralProfile::bump(1.0, 0.3), 2, 0);
        let f = BandlimitedFunction { omega: 2.0, coeffs: f, label: "zonal".into() };
        let y = Point::origin();
        let tau = 0.4;
        let d = two_path_difference(&f, y, &spec(tau, 0)).unwrap();
        assert!(d < 1e-6, "{d}");
    }

    #[test]
    fn near_identity_bound_holds_on_grid() {
        for n in 0..=2 {
            for tau in [0.05, 0.2] {
                let rep = near_identity_check(&spec(tau, n), &grid());
                assert_eq!(rep.violations, 0, "{rep:?}");
                assert!(rep.worst_ratio <= 1.0);
            }
        }
        // For n = 0 both forms coincide; for n ≥ 1 the uncorrected form fails near λ = 0.
        assert_eq!(near_identity_check(&spec(0.2, 0), &grid()).uncorrected_violations, 0);
        assert!(near_identity_check(&spec(0.2, 1), &grid()).uncorrected_violations > 0);
    }

    #[test]
    fn averaging_contracts_more_with_radius() {
        let f = synthesize(grid(), 2.0, 5, 3);
        let ratios: Vec<f64> = [0.1, 0.5, 1.0].iter().map(|&t| contraction_check(&f, &spec(t, 0)).unwrap().ratio).collect();
        assert!(ratios.iter().all(|&r| r <= 1.0 + 1e-8));
        assert!(ratios[0] > ratios[1] && ratios[1] > ratios[2], "{ratios:?}");
        let low = synthesize_profile(grid(), SpectralProfile::bump(0.3, 0.25), 5, 3);
        let low = BandlimitedFunction { omega: 2.0, coeffs: low, label: "low".into() };
        let lr = contraction_check(&low, &spec(0.5, 0)).unwrap().ratio;
        assert!(lr > ratios[1], "{lr} vs {}", ratios[1]);
    }

    #[test]
    fn zero_radius_experiment_matches_point_sampling() {
        let lat = Arc::new(build_lattice(0.3, 1.0, 3).unwrap());
        let opts = ExperimentOptions { schedule: vec![], ..Default::default() };
        let rep = averaged_sampling_experiment(grid(), lat.clone(), &spec(0.0, 0), 7, &opts).unwrap();
        let base = point_sampling_error(grid(), lat, 7, &opts).unwrap();
        assert!((rep.frame_error - base).abs() < 1e-10, "{} vs {base}", rep.frame_error);
        assert!(rep.admissible);
    }

    #[test]
    fn overlapping_spheres_reconstruct() {
        let lat = Arc::new(build_lattice(0.2, 1.0, 3).unwrap());
        let opts = ExperimentOptions { schedule: vec![2], ..Default::default() };
        let rep = averaged_sampling_experiment(grid(), lat, &spec(0.3, 0), 2, &opts).unwrap();
        assert!(rep.frame_error < 1e-4, "{rep:?}");
        assert_eq!(rep.splines.len(), 1);
        assert!(rep.splines[0].error.is_none(), "k = 2 at r = 0.2 trips the guard: {rep:?}");
        assert!(rep.to_csv_row().contains("2:guard"));
    }

    #[test]
    fn derivative_averages_track_laplacian_deconvolution() {
        // With n = 1 the error is set by undoing the Laplacian factor on a
        // finite lattice, not by the averaging.
        let lat = Arc::new(build_lattice(0.2, 1.0, 3).unwrap());
        let s = spec(0.2, 1);
        assert!(s.is_admissible(2.0));
        let opts = ExperimentOptions { schedule: vec![], ..Default::default() };
        let rep = averaged_sampling_experiment(grid(), lat.clone(), &s, 4, &opts).unwrap();
        let f = synthesize(grid(), 2.0, 4, 3);
        let lap = Multiplier::neg_laplacian_power(1.0);
        let samples = convolution_samples(&f, lat.clone(), &lap).unwrap();
        let frame = build_frame(lat.clone(), grid(), 2.0, Some(&lap), FrameOptions::default()).unwrap();
        let ball = QuadBall::new(Point::origin(), lat.domain_radius, 32, 64);
        let pts = ball.points();
        let base = ball_error(&f.eval(&pts).unwrap(), &reconstruct(&frame, &samples).unwrap().function.eval(&pts).unwrap(), &ball);
        assert!(rep.frame_error < 3.0 * base && rep.frame_error > base / 3.0, "{} vs {base}", rep.frame_error);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn near_identity_bound_pointwise(l in 0.0f64..30.0, tau in 0.0f64..1.0, n in 0u32..3) {
                let mu = l * l + RHO * RHO;
                let mun = mu.powi(n as i32);
                let m = average_multiplier(&AverageSpec::new(tau, n, 64).unwrap()).eval(l).re;
                let bound = (2.0 * mun).min(tau * tau * mun * mu);
                prop_assert!((m - mun).abs() <= bound + 1e-12 * mun, "{} {}", (m - mun).abs(), bound);
            }

            #[test]
            fn admissible_radius_shrinks_with_band_and_power(omega in 0.1f64..4.0, n in 0u32..3) {
                let t = AverageSpec::admissible_threshold(omega, n);
                prop_assert!(t > AverageSpec::admissible_threshold(omega * 1.1, n));
                prop_assert!(t >= AverageSpec::admissible_threshold(omega, n + 1) || omega * omega + RHO * RHO < 1.0);
            }
        }
    }
}
