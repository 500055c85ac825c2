//! Experiment configuration, scenario execution, and report files.
//!
//! A configuration is an INI file with the sections `experiment`,
//! `parameters`, `grid`, and `tolerances`. Every key has a per-scenario
//! default; unknown sections or keys are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ini::Ini;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::bandlimited::{bernstein_check, synthesize, BandlimitedFunction, QuadBall};
use crate::baseline1d::{build_exp_frame, compare_routes, relative_error, sinc_step, ExpFrameOptions, Signal1D};
use crate::geometry::Point;
use crate::lattice::{build_lattice, certify_multiplicity, Lattice};
use crate::sampling::{
    ball_error, build_frame, convolution_samples, point_samples, reconstruct, stability_probe, FrameOptions,
    ReconstructionRow, SampleSet, RECONSTRUCTION_HEADER,
};
use crate::spectral::{calibrate_plancherel, calibrated_scale, default_polar_grid, GridSpec, Multiplier, SpectralGrid};
use crate::sphavg::{
    average_multiplier, averaged_sampling_experiment, contraction_check, near_identity_check, two_path_difference,
    AverageSpec, ExperimentOptions, AVERAGED_HEADER,
};
use crate::splines::{
    decay_rate, spline_grid, spline_reconstruct_deconvolve, variational_check, SplineOptions, SplineRow,
    SPLINE_HEADER,
};

/// Environment variable naming the output root.
pub const OUT_ENV: &str = "HYPERBAND_OUT";
pub const DEFAULT_OUT: &str = "hyperband-out";

#[derive(Error, Debug, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(String),
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("unknown section [{0}]")]
    UnknownSection(String),
    #[error("unknown key {section}.{key}")]
    UnknownKey { section: String, key: String },
    #[error("missing key {0}")]
    Missing(String),
    #[error("invalid value for {key}: {reason}")]
    Invalid { key: String, reason: String },
    #[error("bad override {0:?}: expected key=value or section.key=value")]
    Override(String),
}

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.into(), reason: reason.into() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    Plancherel,
    Bernstein,
    Lattice,
    FrameReconstruct,
    SplineReconstruct,
    SphericalAvg,
    AveragedReconstruct,
    Baseline1d,
}

impl Scenario {
    pub const ALL: [Scenario; 8] = [
        Scenario::Plancherel,
        Scenario::Bernstein,
        Scenario::Lattice,
        Scenario::FrameReconstruct,
        Scenario::SplineReconstruct,
        Scenario::SphericalAvg,
        Scenario::AveragedReconstruct,
        Scenario::Baseline1d,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Plancherel => "plancherel",
            Scenario::Bernstein => "bernstein",
            Scenario::Lattice => "lattice",
            Scenario::FrameReconstruct => "frame_reconstruct",
            Scenario::SplineReconstruct => "spline_reconstruct",
            Scenario::SphericalAvg => "spherical_avg",
            Scenario::AveragedReconstruct => "averaged_reconstruct",
            Scenario::Baseline1d => "baseline1d",
        }
    }

    pub fn parse(s: &str) -> Result<Self, ConfigError> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| invalid("experiment.scenario", format!("unknown scenario {s:?}")))
    }
}

/// What the lattice observes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleModel {
    Point,
    /// `−Δ f`.
    Laplacian,
    /// `(−Δ)ⁿ` of the spherical average of radius `tau[0]`.
    Average,
}

impl SampleModel {
    fn name(self) -> &'static str {
        match self {
            SampleModel::Point => "point",
            SampleModel::Laplacian => "laplacian",
            SampleModel::Average => "average",
        }
    }

    fn parse(s: &str) -> Result<Self, ConfigError> {
        match s {
            "point" => Ok(SampleModel::Point),
            "laplacian" => Ok(SampleModel::Laplacian),
            "average" => Ok(SampleModel::Average),
            _ => Err(invalid("parameters.samples", format!("expected point, laplacian or average, got {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tolerances {
    pub plancherel: f64,
    pub bernstein: f64,
    pub frame: f64,
    pub deconvolution: f64,
    pub linearity: f64,
    pub two_path: f64,
    pub averaged: f64,
    pub flatness: f64,
    pub lagrange: f64,
    pub sinc: f64,
    pub routes: f64,
    pub pinv_cutoff: f64,
    pub density_limit: f64,
    pub condition_guard: f64,
    pub tail: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            plancherel: 1e-4,
            bernstein: 1e-10,
            frame: 1e-6,
            deconvolution: 1e-4,
            linearity: 0.05,
            two_path: 1e-6,
            averaged: 1e-4,
            flatness: 10.0,
            lagrange: 1e-8,
            sinc: 1e-6,
            routes: 1e-5,
            pinv_cutoff: 1e-14,
            density_limit: 1.0,
            condition_guard: 1e12,
            tail: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub seeds: Vec<u64>,
    /// Output directory below the output root.
    pub output: String,
    /// Record wall-clock runtimes; breaks byte-identical reruns.
    pub timing: bool,
    pub omega: f64,
    pub r: Vec<f64>,
    pub domain_radius: f64,
    /// Radius of the error ball about the origin.
    pub error_radius: f64,
    pub tau: Vec<f64>,
    pub n: u32,
    pub k_schedule: Vec<u32>,
    pub sigma: Vec<f64>,
    pub samples: SampleModel,
    pub cases: usize,
    pub gamma: f64,
    pub n_trunc: usize,
    pub m_circle: usize,
    pub n_band: usize,
    pub n_tail: usize,
    pub n_b: usize,
    /// Factor applied to the calibrated Plancherel constant (fault injection).
    pub scale_factor: f64,
    pub tol: Tolerances,
}

impl ExperimentConfig {
    pub fn defaults(scenario: Scenario) -> Self {
        let mut c = Self {
            scenario,
            seeds: vec![1],
            output: scenario.name().into(),
            timing: false,
            omega: 2.0,
            r: vec![0.4, 0.2, 0.1],
            domain_radius: 1.2,
            error_radius: 1.2,
            tau: vec![0.2],
            n: 0,
            k_schedule: vec![2, 4, 8],
            sigma: vec![0.5, 1.0, 2.0, 4.0],
            samples: SampleModel::Point,
            cases: 10,
            gamma: 0.8,
            n_trunc: 500,
            m_circle: 64,
            n_band: 128,
            n_tail: 128,
            n_b: 128,
            scale_factor: 1.0,
            tol: Tolerances::default(),
        };
        match scenario {
            Scenario::Plancherel => c.seeds = (1..=5).collect(),
            Scenario::Bernstein => c.seeds = (1..=10).collect(),
            Scenario::Lattice => c.r = vec![0.1, 0.2, 0.4],
            Scenario::FrameReconstruct => c.seeds = vec![4],
            Scenario::SplineReconstruct => {
                c.omega = 0.5;
                c.r = vec![1.0];
                c.domain_radius = 1.8;
                c.error_radius = 0.9;
            }
            Scenario::SphericalAvg => c.tau = vec![0.05, 0.2, 0.5],
            Scenario::AveragedReconstruct => {
                c.r = vec![0.1];
                c.tau = vec![0.0, 0.1, 0.3];
                c.k_schedule = vec![2];
                c.samples = SampleModel::Average;
            }
            Scenario::Baseline1d => c.omega = 1.0,
        }
        c
    }

    /// `(section, key, value)` in canonical order.
    pub fn entries(&self) -> Vec<(&'static str, &'static str, String)> {
        let t = &self.tol;
        vec![
            ("experiment", "scenario", self.scenario.name().into()),
            ("experiment", "seeds", join(&self.seeds, |s| s.to_string())),
            ("experiment", "output", self.output.clone()),
            ("experiment", "timing", self.timing.to_string()),
            ("parameters", "omega", num(self.omega)),
            ("parameters", "r", join(&self.r, |&x| num(x))),
            ("parameters", "domain_radius", num(self.domain_radius)),
            ("parameters", "error_radius", num(self.error_radius)),
            ("parameters", "tau", join(&self.tau, |&x| num(x))),
            ("parameters", "n", self.n.to_string()),
            ("parameters", "k_schedule", join(&self.k_schedule, |k| k.to_string())),
            ("parameters", "sigma", join(&self.sigma, |&x| num(x))),
            ("parameters", "samples", self.samples.name().into()),
            ("parameters", "cases", self.cases.to_string()),
            ("parameters", "gamma", num(self.gamma)),
            ("parameters", "n_trunc", self.n_trunc.to_string()),
            ("parameters", "m_circle", self.m_circle.to_string()),
            ("grid", "n_band", self.n_band.to_string()),
            ("grid", "n_tail", self.n_tail.to_string()),
            ("grid", "n_b", self.n_b.to_string()),
            ("grid", "scale_factor", num(self.scale_factor)),
            ("tolerances", "plancherel", num(t.plancherel)),
            ("tolerances", "bernstein", num(t.bernstein)),
            ("tolerances", "frame", num(t.frame)),
            ("tolerances", "deconvolution", num(t.deconvolution)),
            ("tolerances", "linearity", num(t.linearity)),
            ("tolerances", "two_path", num(t.two_path)),
            ("tolerances", "averaged", num(t.averaged)),
            ("tolerances", "flatness", num(t.flatness)),
            ("tolerances", "lagrange", num(t.lagrange)),
            ("tolerances", "sinc", num(t.sinc)),
            ("tolerances", "routes", num(t.routes)),
            ("tolerances", "pinv_cutoff", num(t.pinv_cutoff)),
            ("tolerances", "density_limit", num(t.density_limit)),
            ("tolerances", "condition_guard", num(t.condition_guard)),
            ("tolerances", "tail", num(t.tail)),
        ]
    }

    fn set(&mut self, section: &str, key: &str, v: &str) -> Result<(), ConfigError> {
        let full = format!("{section}.{key}");
        let k = full.as_str();
        let t = &mut self.tol;
        match (section, key) {
            ("experiment", "scenario") => {
                if Scenario::parse(v)? != self.scenario {
                    return Err(invalid(k, "scenario cannot be overridden"));
                }
            }
            ("experiment", "seeds") => self.seeds = parse_list(k, v)?,
            ("experiment", "output") => self.output = v.to_string(),
            ("experiment", "timing") => self.timing = parse_one(k, v)?,
            ("parameters", "omega") => self.omega = parse_one(k, v)?,
            ("parameters", "r") => self.r = parse_list(k, v)?,
            ("parameters", "domain_radius") => self.domain_radius = parse_one(k, v)?,
            ("parameters", "error_radius") => self.error_radius = parse_one(k, v)?,
            ("parameters", "tau") => self.tau = parse_list(k, v)?,
            ("parameters", "n") => self.n = parse_one(k, v)?,
            ("parameters", "k_schedule") => self.k_schedule = parse_list(k, v)?,
            ("parameters", "sigma") => self.sigma = parse_list(k, v)?,
            ("parameters", "samples") => self.samples = SampleModel::parse(v)?,
            ("parameters", "cases") => self.cases = parse_one(k, v)?,
            ("parameters", "gamma") => self.gamma = parse_one(k, v)?,
            ("parameters", "n_trunc") => self.n_trunc = parse_one(k, v)?,
            ("parameters", "m_circle") => self.m_circle = parse_one(k, v)?,
            ("grid", "n_band") => self.n_band = parse_one(k, v)?,
            ("grid", "n_tail") => self.n_tail = parse_one(k, v)?,
            ("grid", "n_b") => self.n_b = parse_one(k, v)?,
            ("grid", "scale_factor") => self.scale_factor = parse_one(k, v)?,
            ("tolerances", "plancherel") => t.plancherel = parse_one(k, v)?,
            ("tolerances", "bernstein") => t.bernstein = parse_one(k, v)?,
            ("tolerances", "frame") => t.frame = parse_one(k, v)?,
            ("tolerances", "deconvolution") => t.deconvolution = parse_one(k, v)?,
            ("tolerances", "linearity") => t.linearity = parse_one(k, v)?,
            ("tolerances", "two_path") => t.two_path = parse_one(k, v)?,
            ("tolerances", "averaged") => t.averaged = parse_one(k, v)?,
            ("tolerances", "flatness") => t.flatness = parse_one(k, v)?,
            ("tolerances", "lagrange") => t.lagrange = parse_one(k, v)?,
            ("tolerances", "sinc") => t.sinc = parse_one(k, v)?,
            ("tolerances", "routes") => t.routes = parse_one(k, v)?,
            ("tolerances", "pinv_cutoff") => t.pinv_cutoff = parse_one(k, v)?,
            ("tolerances", "density_limit") => t.density_limit = parse_one(k, v)?,
            ("tolerances", "condition_guard") => t.condition_guard = parse_one(k, v)?,
            ("tolerances", "tail") => t.tail = parse_one(k, v)?,
            ("experiment" | "parameters" | "grid" | "tolerances", _) => {
                return Err(ConfigError::UnknownKey { section: section.into(), key: key.into() })
            }
            _ => return Err(ConfigError::UnknownSection(section.into())),
        }
        Ok(())
    }

    /// Parses INI text, applies `overrides` (`key=value` or
    /// `section.key=value`), then validates.
    pub fn from_ini_str(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let ini = Ini::load_from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        if let Some(general) = ini.section(None::<String>) {
            if let Some((k, _)) = general.iter().next() {
                return Err(ConfigError::Parse(format!("key {k:?} outside any section")));
            }
        }
        let scenario = ini
            .section(Some("experiment"))
            .and_then(|s| s.get("scenario"))
            .ok_or_else(|| ConfigError::Missing("experiment.scenario".into()))?;
        let mut cfg = Self::defaults(Scenario::parse(scenario.trim())?);
        for (section, props) in ini.iter() {
            let Some(section) = section else { continue };
            for (key, value) in props.iter() {
                cfg.set(section, key, value.trim())?;
            }
        }
        for o in overrides {
            let (key, value) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            let (section, key) = cfg.resolve(key.trim())?;
            cfg.set(section, key, value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io(format!("{}: {e}", path.display())))?;
        Self::from_ini_str(&text, overrides)
    }

    fn resolve<'k>(&self, key: &'k str) -> Result<(&'static str, &'static str), ConfigError> {
        let entries = self.entries();
        let found: Vec<_> = match key.split_once('.') {
            Some((s, k)) => entries.iter().filter(|e| e.0 == s && e.1 == k).collect(),
            None => entries.iter().filter(|e| e.1 == key).collect(),
        };
        match found.as_slice() {
            [e] => Ok((e.0, e.1)),
            _ => Err(ConfigError::Override(key.to_string())),
        }
    }

    pub fn to_ini(&self) -> Ini {
        let mut ini = Ini::new();
        for (s, k, v) in self.entries() {
            ini.with_section(Some(s)).set(k, v);
        }
        ini
    }

    pub fn to_ini_string(&self) -> String {
        ini_string(&self.to_ini())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let pos = |k: &str, x: f64| if x > 0.0 && x.is_finite() { Ok(()) } else { Err(invalid(k, "must be positive")) };
        if self.seeds.is_empty() {
            return Err(invalid("experiment.seeds", "need at least one seed"));
        }
        if self.output.is_empty() || self.output.contains("..") || Path::new(&self.output).is_absolute() {
            return Err(invalid("experiment.output", "must be a relative directory name"));
        }
        pos("parameters.omega", self.omega)?;
        pos("parameters.domain_radius", self.domain_radius)?;
        pos("parameters.error_radius", self.error_radius)?;
        for &r in &self.r {
            pos("parameters.r", r)?;
        }
        for &t in &self.tau {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(invalid("parameters.tau", "radii must be ≥ 0"));
            }
        }
        for &s in &self.sigma {
            pos("parameters.sigma", s)?;
        }
        if self.k_schedule.iter().any(|&k| k == 0) {
            return Err(invalid("parameters.k_schedule", "orders must be ≥ 1"));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(invalid("parameters.gamma", "must lie in (0, 1)"));
        }
        if self.n_trunc == 0 || self.cases == 0 {
            return Err(invalid("parameters", "n_trunc and cases must be ≥ 1"));
        }
        if self.m_circle < crate::sphavg::MIN_CIRCLE_NODES {
            return Err(invalid("parameters.m_circle", "must be ≥ 16"));
        }
        if self.n_band == 0 || self.n_b < 16 || self.n_b % 2 != 0 {
            return Err(invalid("grid", "n_band ≥ 1 and even n_b ≥ 16 required"));
        }
        pos("grid.scale_factor", self.scale_factor)?;
        for (_, k, v) in self.entries().into_iter().filter(|e| e.0 == "tolerances") {
            pos(k, v.parse().expect("own number format"))?;
        }
        let needs = |what: &str, ok: bool| if ok { Ok(()) } else { Err(ConfigError::Missing(format!("{what} for {}", self.scenario.name()))) };
        match self.scenario {
            Scenario::Lattice | Scenario::FrameReconstruct | Scenario::SplineReconstruct => needs("parameters.r", !self.r.is_empty())?,
            Scenario::AveragedReconstruct => {
                needs("parameters.r", !self.r.is_empty())?;
                needs("parameters.tau", !self.tau.is_empty())?;
            }
            Scenario::SphericalAvg => needs("parameters.tau", !self.tau.is_empty())?,
            Scenario::Bernstein => needs("parameters.sigma", !self.sigma.is_empty())?,
            Scenario::Plancherel | Scenario::Baseline1d => {}
        }
        if self.scenario == Scenario::SplineReconstruct {
            needs("parameters.k_schedule", !self.k_schedule.is_empty())?;
        }
        if self.samples == SampleModel::Average && self.tau.is_empty() {
            return Err(ConfigError::Missing("parameters.tau for averaged samples".into()));
        }
        Ok(())
    }

    fn grid(&self, scale: f64) -> Result<Arc<SpectralGrid>, RunError> {
        let spec = GridSpec { n_band: self.n_band, n_tail: self.n_tail, n_b: self.n_b, ..GridSpec::for_band(self.omega) };
        Ok(Arc::new(SpectralGrid::new(spec, scale).map_err(run_err)?))
    }

    fn frame_options(&self) -> FrameOptions {
        FrameOptions { pinv_cutoff: self.tol.pinv_cutoff, density_limit: self.tol.density_limit, ..Default::default() }
    }

    fn spline_options(&self) -> SplineOptions {
        SplineOptions { tail_tol: self.tol.tail, condition_guard: self.tol.condition_guard, ..Default::default() }
    }
}

fn num(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || (1e-3..1e6).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn join<T>(xs: &[T], f: impl Fn(&T) -> String) -> String {
    xs.iter().map(f).collect::<Vec<_>>().join(",")
}

fn parse_one<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.trim().parse().map_err(|_| invalid(key, format!("cannot parse {v:?}")))
}

fn parse_list<T: std::str::FromStr>(key: &str, v: &str) -> Result<Vec<T>, ConfigError> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse_one(key, p)).collect()
}

fn ini_string(ini: &Ini) -> String {
    let mut buf = Vec::new();
    ini.write_to(&mut buf).expect("write to memory");
    String::from_utf8(buf).expect("ini output is UTF-8")
}

/// Library failure while executing a scenario.
#[derive(Error, Debug, Clone, PartialEq)]
#[error("{0}")]
pub struct RunError(pub String);

fn run_err(e: impl std::fmt::Display) -> RunError {
    RunError(e.to_string())
}

/// One named invariant of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Self { name: name.into(), pass, detail }
    }
}

/// Files and checks produced by a scenario.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Outcome {
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
}

impl Outcome {
    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.pass)
    }

    fn csv(&mut self, name: &str, header: &str, rows: impl IntoIterator<Item = String>) {
        let mut s = String::from(header);
        s.push('\n');
        for r in rows {
            s.push_str(&r);
            s.push('\n');
        }
        self.files.push((name.into(), s));
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(Check::new(name, pass, detail));
    }
}

fn e(x: f64) -> String {
    format!("{x:e}")
}

fn opt_e(x: Option<f64>) -> String {
    x.map_or("NA".into(), e)
}

fn runtime(cfg: &ExperimentConfig, start: Instant) -> Option<f64> {
    cfg.timing.then(|| start.elapsed().as_secs_f64())
}

/// Runs the scenario with Plancherel constant `scale` (already including
/// the configured factor).
pub fn run_scenario(cfg: &ExperimentConfig, scale: f64) -> Result<Outcome, RunError> {
    match cfg.scenario {
        Scenario::Plancherel => run_plancherel(cfg, scale),
        Scenario::Bernstein => run_bernstein(cfg, scale),
        Scenario::Lattice => run_lattice(cfg),
        Scenario::FrameReconstruct => run_frames(cfg, scale),
        Scenario::SplineReconstruct => run_splines(cfg, scale),
        Scenario::SphericalAvg => run_spherical(cfg, scale),
        Scenario::AveragedReconstruct => run_averaged(cfg, scale),
        Scenario::Baseline1d => run_baseline(cfg),
    }
}

fn run_plancherel(cfg: &ExperimentConfig, scale: f64) -> Result<Outcome, RunError> {
    let grid = cfg.grid(scale)?;
    let polar = default_polar_grid(cfg.omega);
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for &seed in &cfg.seeds {
        let f = synthesize(grid.clone(), cfg.omega, seed, 3);
        let spectral = f.coeffs.norm_sqr();
        let spatial = polar.norm_sqr(&f.eval_polar(&polar).map_err(run_err)?);
        let rel = (spatial - spectral).abs() / spectral;
        worst = worst.max(rel);
        rows.push(format!("{seed},{},{},{}", e(spectral), e(spatial), e(rel)));
    }
    out.csv("plancherel.csv", "seed,spectral_norm_sq,spatial_norm_sq,rel_error", rows);
    out.check("plancherel_identity", worst < cfg.tol.plancherel, format!("worst relative error {worst:e}"));
    Ok(out)
}

fn run_bernstein(cfg: &ExperimentConfig, scale: f64) -> Result<Outcome, RunError> {
    let grid = cfg.grid(scale)?;
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    let mut worst = f64::NEG_INFINITY;
    for &seed in &cfg.seeds {
        let f = synthesize(grid.clone(), cfg.omega, seed, 3);
        for &s in &cfg.sigma {
            let rep = bernstein_check(&f, s);
            let slack = rep.lhs / rep.rhs - 1.0;
            worst = worst.max(slack);
            rows.push(format!("{seed},{},{},{},{}", num(s), e(rep.lhs), e(rep.rhs), e(slack)));
        }
    }
    out.csv("bernstein.csv", "seed,sigma,lhs,rhs,slack", rows);
    out.check("bernstein_inequality", worst <= cfg.tol.bernstein, format!("largest relative slack {worst:e}"));
    Ok(out)
}

fn run_lattice(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    let (mut packing, mut cover, mut mult) = (Ok(()), Ok(()), Ok(()));
    for &r in &cfg.r {
        let lat = build_lattice(r, cfg.domain_radius, cfg.seeds[0]).map_err(run_err)?;
        let sep = lat.check_packing();
        let gap = lat.check_cover(cfg.seeds[0]);
        let m = certify_multiplicity(&lat);
        for (slot, res) in [(&mut packing, sep.as_ref().err()), (&mut cover, gap.as_ref().err()), (&mut mult, m.as_ref().err())] {
            if let (Ok(()), Some(err)) = (&*slot, res) {
                *slot = Err(format!("r = {r}: {err}"));
            }
        }
        rows.push(format!(
            "{},{},{},{},{},{},{},{}",
            num(r),
            num(cfg.domain_radius),
            lat.len(),
            opt_e(sep.ok()),
            gap.as_ref().map_or("NA".into(), |g| g.0.to_string()),
            opt_e(gap.ok().map(|g| g.1)),
            m.map_or("NA".into(), |m| m.to_string()),
            lat.n_mult
        ));
        out.files.push((format!("lattice_r{}.csv", num(r)), lat.to_csv()));
    }
    out.csv(
        "lattice_summary.csv",
        "r,domain_radius,points,min_separation,cover_probes,max_probe_gap,multiplicity,multiplicity_bound",
        rows,
    );
    for (name, res) in [("lattice_packing", packing), ("lattice_cover", cover), ("lattice_multiplicity", mult)] {
        let detail = res.clone().err().unwrap_or_else(|| format!("all of r = {:?}", cfg.r));
        out.check(name, res.is_ok(), detail);
    }
    Ok(out)
}

fn sample_multiplier(cfg: &ExperimentConfig) -> Result<Option<Multiplier>, RunError> {
    Ok(match cfg.samples {
        SampleModel::Point => None,
        SampleModel::Laplacian => Some(Multiplier::neg_laplacian_power(1.0)),
        SampleModel::Average => {
            let spec = AverageSpec::new(cfg.tau[0], cfg.n, cfg.m_circle).map_err(run_err)?;
            Some(average_multiplier(&spec))
        }
    })
}

fn take_samples(f: &BandlimitedFunction, lat: Arc<Lattice>, m: Option<&Multiplier>) -> Result<SampleSet, RunError> {
    match m {
        None => point_samples(f, lat),
        Some(m) => convolution_samples(f, lat, m),
    }
    .map_err(run_err)
}

fn error_ball(radius: f64) -> QuadBall {
    QuadBall::new(Point::origin(), radius, 32, 64)
}

fn run_frames(cfg: &ExperimentConfig, scale: f64) -> Result<Outcome, RunError> {
    let grid = cfg.grid(scale)?;
    let m = sample_multiplier(cfg)?;
    let seed = cfg.seeds[0];
    let f = synthesize(grid.clone(), cfg.omega, seed, 3);
    let ball = error_ball(cfg.error_radius);
    let pts = ball.points();
    let truth = f.eval(&pts).map_err(run_err)?;
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    let mut results = Vec::new();
    let mut linearity = Vec::new();
    let label = format!("frame_{}", cfg.samples.name());
    for &r in &cfg.r {
        let start = Instant::now();
        let lat = Arc::new(build_lattice(r, cfg.domain_radius, seed).map_err(run_err)?);
        let frame = build_frame(lat.clone(), grid.clone(), cfg.omega, m.as_ref(), cfg.frame_options()).map_err(run_err)?;
        let s = take_samples(&f, lat.clone(), m.as_ref())?;
        let rec = reconstruct(&frame, &s).map_err(run_err)?;
        let err = ball_error(&truth, &rec.function.eval(&pts).map_err(run_err)?, &ball);
        if m.is_some() {
            let st = stability_probe(&frame, &s, &[1e-8, 1e-6, 1e-4], seed).map_err(run_err)?;
            linearity.push((r, st.ratio_spread));
        }
        results.push((r, err));
        rows.push(
            ReconstructionRow {
                experiment: label.clone(),
                omega: cfg.omega,
                r,
                lattice_size: lat.len(),
                lambda_min: frame.lambda_min_raw,
                lambda_max: frame.frame_bounds.1,
                rel_error: err,
                runtime: runtime(cfg, start),
            }
            .to_csv_row(),
        );
    }
    out.csv("reconstruction.csv", RECONSTRUCTION_HEADER, rows);
    let (r_min, err_min) = results.iter().copied().fold((f64::INFINITY, f64::NAN), |a, b| if b.0 < a.0 { b } else { a });
    let tol = if m.is_some() { cfg.tol.deconvolution } else { cfg.tol.frame };
    out.check("frame_error", err_min < tol, format!("relative error {err_min:e} at r = {r_min} (tolerance {tol:e})"));
    let mut by_r = results.clone();
    by_r.sort_by(|a, b| b.0.total_cmp(&a.0));
    let monotone = by_r.windows(2).all(|w| w[1].1 < w[0].1);
    out.check("frame_error_monotone", monotone, format!("errors by decreasing r: {by_r:?}"));
    if !linearity.is_empty() {
        let worst = linearity.iter().map(|l| l.1).fold(0.0, f64::max);
        out.check("deconvolution_linearity", worst <= cfg.tol.linearity, format!("largest gain spread {worst:e}"));
    }
    Ok(out)
}

fn run_splines(cfg: &ExperimentConfig, scale: f64) -> Result<Outcome, RunError> {
    let grid = cfg.grid(scale)?;
    let sgrid = spline_grid(cfg.omega, scale).map_err(run_err)?;
    let m = sample_multiplier(cfg)?;
    let seed = cfg.seeds[0];
    let f = synthesize(grid, cfg.omega, seed, 3);
    let opts = cfg.spline_options();
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    let mut decay_rows = Vec::new();
    let mut defects = Vec::new();
    let mut decreasing = Vec::new();
    let mut reachable = 0usize;
    let mut variational = None;
    for &r in &cfg.r {
        let lat = Arc::new(build_lattice(r, cfg.domain_radius, seed).map_err(run_err)?);
        let ball = error_ball(cfg.error_radius);
        let pts = ball.points();
        let truth = f.eval(&pts).map_err(run_err)?;
        let s = take_samples(&f, lat.clone(), m.as_ref())?;
        let start = Instant::now();
        let stages = spline_reconstruct_deconvolve(sgrid.clone(), &cfg.k_schedule, &s, &opts).map_err(run_err)?;
        let mut orders = Vec::new();
        let mut errors = Vec::new();
        for st in &stages {
            let (l2, max) = match st.eval_unprojected(&pts) {
                Some(v) => {
                    let v = v.map_err(run_err)?;
                    let scale = truth.iter().map(|t| t.norm()).fold(0.0, f64::max);
                    let worst = truth.iter().zip(&v).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
                    (Some(ball_error(&truth, &v, &ball)), Some(worst / scale))
                }
                None => (None, None),
            };
            if let (Some(sys), Some(err)) = (&st.system, l2) {
                reachable += 1;
                orders.push(st.k);
                errors.push(err);
                if m.is_none() {
                    defects.push((r, st.k, sys.lagrange_defect()));
                    if variational.is_none() {
                        variational = Some((r, st.k, variational_check(sys, 0, 20, seed).map_err(run_err)?));
                    }
                }
            }
            rows.push(
                SplineRow { omega: cfg.omega, r, k: st.k, condition: st.condition, rel_error_l2: l2, rel_error_max: max, runtime: runtime(cfg, start) }
                    .to_csv_row(),
            );
        }
        decreasing.push((r, errors.windows(2).all(|w| w[1] < w[0]), errors.clone()));
        let guard = stages.iter().find(|s| s.guarded).map_or("none".to_string(), |s| s.k.to_string());
        decay_rows.push(format!(
            "{},{},{},{},{}",
            num(cfg.omega),
            num(r),
            join(&orders, |k| k.to_string()),
            opt_e(decay_rate(&orders, &errors)),
            guard
        ));
    }
    out.csv("splines.csv", SPLINE_HEADER, rows);
    out.csv("spline_decay.csv", "omega,r,orders,decay_rate,guarded_at", decay_rows);
    out.check("spline_stage_available", reachable > 0, format!("{reachable} order(s) below the condition guard"));
    let worst_defect = defects.iter().map(|d| d.2).fold(0.0, f64::max);
    if m.is_none() {
        out.check("lagrange_property", worst_defect < cfg.tol.lagrange, format!("largest defect {worst_defect:e} over {defects:?}"));
        if let Some((r, k, v)) = variational {
            let pass = v.min_perturbed >= v.base_norm * (1.0 - 1e-10) && v.max_lattice_value < cfg.tol.lagrange;
            out.check("variational_inequality", pass, format!("r = {r}, k = {k}: {v:?}"));
        }
    }
    let dec = decreasing.iter().all(|d| d.1);
    out.check("spline_error_decreasing", dec, format!("{decreasing:?}"));
    Ok(out)
}

fn run_spherical(cfg: &ExperimentConfig, scale: f64) -> Result<Outcome, RunError> {
    let grid = cfg.grid(scale)?;
    let seed = cfg.seeds[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for case in 0..cfg.cases {
        let f = synthesize(grid.clone(), cfg.omega, seed.wrapping_add(100 + case as u64), 4);
        let y = Point::from_polar(rng.random_range(0.0..0.6), rng.random_range(0.0..std::f64::consts::TAU));
        let tau = rng.random_range(0.05..0.8);
        let n = (case % 2) as u32;
        let spec = AverageSpec::new(tau, n, cfg.m_circle).map_err(run_err)?;
        let d = two_path_difference(&f, y, &spec).map_err(run_err)?;
        worst = worst.max(d);
        rows.push(format!("{case},{},{},{},{n},{}", e(y.u), e(y.v), e(tau), e(d)));
    }
    out.csv("two_path.csv", "case,y_u,y_v,tau,n,rel_difference", rows);
    out.check("two_path_agreement", worst < cfg.tol.two_path, format!("largest relative difference {worst:e}"));

    let mut rows = Vec::new();
    let mut violations = 0;
    for &tau in &cfg.tau {
        for n in 0..=2 {
            let rep = near_identity_check(&AverageSpec::new(tau, n, cfg.m_circle).map_err(run_err)?, &grid);
            violations += rep.violations;
            rows.push(format!("{},{n},{},{},{},{}", num(tau), rep.nodes, rep.violations, e(rep.worst_ratio), rep.uncorrected_violations));
        }
    }
    out.csv("near_identity.csv", "tau,n,nodes,violations,worst_ratio,uncorrected_violations", rows);
    out.check("near_identity_bound", violations == 0, format!("{violations} node violations"));

    let f = synthesize(grid, cfg.omega, seed, 3);
    let mut rows = Vec::new();
    let mut ratios = Vec::new();
    for &tau in &cfg.tau {
        let c = contraction_check(&f, &AverageSpec::new(tau, 0, cfg.m_circle).map_err(run_err)?).map_err(run_err)?;
        ratios.push(c);
        rows.push(format!("{},{},{}", num(tau), e(c.ratio), c.pass));
    }
    out.csv("contraction.csv", "tau,norm_ratio,pass", rows);
    let pass = ratios.iter().all(|c| c.pass);
    out.check("average_contraction", pass, format!("{:?}", ratios.iter().map(|c| c.ratio).collect::<Vec<_>>()));
    Ok(out)
}

fn run_averaged(cfg: &ExperimentConfig, scale: f64) -> Result<Outcome, RunError> {
    let grid = cfg.grid(scale)?;
    let seed = cfg.seeds[0];
    let opts = ExperimentOptions {
        frame: cfg.frame_options(),
        splines: cfg.spline_options(),
        schedule: cfg.k_schedule.clone(),
        ball_radius: Some(cfg.error_radius),
        timing: cfg.timing,
    };
    let mut out = Outcome::default();
    let mut rows = Vec::new();
    let mut admissible = Vec::new();
    for &r in &cfg.r {
        let lat = Arc::new(build_lattice(r, cfg.domain_radius, seed).map_err(run_err)?);
        for &tau in &cfg.tau {
            let spec = AverageSpec::new(tau, cfg.n, cfg.m_circle).map_err(run_err)?;
            let rep = averaged_sampling_experiment(grid.clone(), lat.clone(), &spec, seed, &opts).map_err(run_err)?;
            if rep.admissible {
                admissible.push((r, tau, rep.frame_error));
            }
            rows.push(rep.to_csv_row());
        }
    }
    out.csv("averaged.csv", AVERAGED_HEADER, rows);
    let worst = admissible.iter().map(|a| a.2).fold(0.0, f64::max);
    out.check(
        "averaged_frame_error",
        worst < cfg.tol.averaged,
        format!("largest error {worst:e} over {} admissible case(s)", admissible.len()),
    );
    let mut flat = true;
    for &r in &cfg.r {
        let errs: Vec<f64> = admissible.iter().filter(|a| a.0 == r).map(|a| a.2).collect();
        if errs.len() > 1 {
            let hi = errs.iter().copied().fold(f64::MIN, f64::max);
            let lo = errs.iter().copied().fold(f64::MAX, f64::min);
            flat &= hi <= cfg.tol.flatness * lo;
        }
    }
    out.check("averaged_error_flat", flat, format!("{admissible:?}"));
    Ok(out)
}

fn run_baseline(cfg: &ExperimentConfig) -> Result<Outcome, RunError> {
    let omega = cfg.omega;
    let window = cfg.n_trunc as f64 * sinc_step(omega, cfg.gamma);
    let f = Signal1D::cubed_sinc(0.3 * omega, omega, window).map_err(run_err)?;
    let rep = compare_routes(&f, cfg.gamma, cfg.n_trunc, 50).map_err(run_err)?;
    let mut out = Outcome::default();
    let mut rows: Vec<String> = rep.to_rows().iter().map(|r| r.to_csv_row()).collect();
    // Short uniform windows with localized random signals.
    let step = sinc_step(omega, cfg.gamma);
    let pts: Vec<f64> = (-32..32).map(|j| j as f64 * step).collect();
    let frame = build_exp_frame(&pts, omega, ExpFrameOptions { pinv_cutoff: cfg.tol.pinv_cutoff }).map_err(run_err)?;
    let t: Vec<f64> = (0..50).map(|i| (-20.0 + 40.0 * i as f64 / 49.0) / omega).collect();
    let mut worst: f64 = 0.0;
    for &seed in &cfg.seeds {
        let g = Signal1D::random(omega, 200.0 / omega, seed, 3, 15.0 / omega).map_err(run_err)?;
        let err = relative_error(&g.eval(&t), &frame.reconstruct(&g.eval(&pts), &t));
        worst = worst.max(err);
        rows.push(
            ReconstructionRow {
                experiment: format!("gram1d_window(seed={seed})"),
                omega,
                r: step,
                lattice_size: pts.len(),
                lambda_min: frame.lambda_min,
                lambda_max: frame.lambda_max,
                rel_error: err,
                runtime: None,
            }
            .to_csv_row(),
        );
    }
    out.csv("baseline1d.csv", RECONSTRUCTION_HEADER, rows);
    out.check("sinc_reconstruction", rep.sinc_error < cfg.tol.sinc, format!("relative error {:e}", rep.sinc_error));
    out.check("gram_sinc_agreement", rep.route_difference < cfg.tol.routes, format!("relative difference {:e}", rep.route_difference));
    out.check("gram_window_reconstruction", worst < cfg.tol.sinc, format!("largest error {worst:e}"));
    Ok(out)
}

/// Renderer for the CSVs of one scenario: `(file, x column, y column)`.
fn plot_targets(s: Scenario) -> &'static [(&'static str, &'static str, &'static str)] {
    match s {
        Scenario::Plancherel => &[("plancherel.csv", "seed", "rel_error")],
        Scenario::Bernstein => &[("bernstein.csv", "sigma", "lhs")],
        Scenario::Lattice => &[("lattice_summary.csv", "r", "points")],
        Scenario::FrameReconstruct => &[("reconstruction.csv", "r", "rel_error")],
        Scenario::SplineReconstruct => &[("splines.csv", "k", "rel_error_L2")],
        Scenario::SphericalAvg => &[("two_path.csv", "tau", "rel_difference"), ("contraction.csv", "tau", "norm_ratio")],
        Scenario::AveragedReconstruct => &[("averaged.csv", "tau", "frame_error")],
        Scenario::Baseline1d => &[("baseline1d.csv", "r", "rel_error")],
    }
}

pub fn plot_script(s: Scenario) -> String {
    let mut py = String::from(
        "#!/usr/bin/env python3\n\
         \"\"\"Render error curves from the CSVs in this directory.\"\"\"\n\
         import csv\nimport os\n\nimport matplotlib\nmatplotlib.use(\"Agg\")\nimport matplotlib.pyplot as plt\n\n\
         HERE = os.path.dirname(os.path.abspath(__file__))\nPLOTS = [\n",
    );
    for (file, x, y) in plot_targets(s) {
        let _ = writeln!(py, "    ({file:?}, {x:?}, {y:?}),");
    }
    py.push_str(
        "]\n\n\
         def column(rows, name):\n    out = []\n    for r in rows:\n        try:\n            out.append(float(r[name]))\n        except ValueError:\n            out.append(float(\"nan\"))\n    return out\n\n\
         for name, x, y in PLOTS:\n    with open(os.path.join(HERE, name)) as fh:\n        rows = list(csv.DictReader(fh))\n\
         \x20   xs, ys = column(rows, x), column(rows, y)\n    fig, ax = plt.subplots()\n    ax.plot(xs, ys, \"o-\")\n\
         \x20   if all(v > 0 for v in ys if v == v):\n        ax.set_yscale(\"log\")\n\
         \x20   ax.set_xlabel(x)\n    ax.set_ylabel(y)\n    ax.set_title(name)\n\
         \x20   fig.savefig(os.path.join(HERE, name.replace(\".csv\", \".png\")), dpi=120)\n    plt.close(fig)\n",
    );
    py
}

/// Manifest: library version, Plancherel constant, check results, and the
/// full configuration including every tolerance.
pub fn manifest(cfg: &ExperimentConfig, scale: f64, outcome: &Outcome) -> String {
    let mut ini = Ini::new();
    let files: Vec<&str> = outcome.files.iter().map(|f| f.0.as_str()).chain(["plot.py"]).collect();
    ini.with_section(Some("manifest"))
        .set("version", env!("CARGO_PKG_VERSION"))
        .set("plancherel_scale", format!("{scale:e}"))
        .set("status", if outcome.first_failure().is_none() { "pass" } else { "fail" })
        .set("first_failure", outcome.first_failure().map_or("none", |c| c.name.as_str()))
        .set("files", files.join(","));
    for c in &outcome.checks {
        ini.with_section(Some("checks")).set(c.name.clone(), if c.pass { "pass" } else { "fail" });
    }
    for (s, k, v) in cfg.entries() {
        ini.with_section(Some(s)).set(k, v);
    }
    ini_string(&ini)
}

/// Output root from [`OUT_ENV`], else [`DEFAULT_OUT`].
pub fn output_root() -> PathBuf {
    std::env::var_os(OUT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

pub fn write_outputs(dir: &Path, cfg: &ExperimentConfig, scale: f64, outcome: &Outcome) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    for (name, body) in &outcome.files {
        fs::write(dir.join(name), body)?;
    }
    fs::write(dir.join("plot.py"), plot_script(cfg.scenario))?;
    fs::write(dir.join("manifest.ini"), manifest(cfg, scale, outcome))
}

/// Process exit status of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    AssertionFailed = 1,
    ConfigError = 2,
}

/// Runs a configured scenario and writes its outputs under `root`.
pub fn execute(cfg: &ExperimentConfig, root: &Path) -> (Status, Outcome) {
    let scale = calibrated_scale() * cfg.scale_factor;
    let outcome = match run_scenario(cfg, scale) {
        Ok(o) => o,
        Err(err) => Outcome { files: Vec::new(), checks: vec![Check::new(&format!("{}_execution", cfg.scenario.name()), false, err.0)] },
    };
    let dir = root.join(&cfg.output);
    if let Err(err) = write_outputs(&dir, cfg, scale, &outcome) {
        let mut o = outcome;
        o.checks.push(Check::new("write_outputs", false, format!("{}: {err}", dir.display())));
        return (Status::AssertionFailed, o);
    }
    let status = if outcome.first_failure().is_some() { Status::AssertionFailed } else { Status::Ok };
    (status, outcome)
}

/// Runs each scenario with its defaults, writing under `root/verify`.
pub fn verify(root: &Path, scenarios: &[Scenario], scale_factor: f64) -> Vec<(Scenario, Status, Outcome)> {
    scenarios
        .iter()
        .map(|&s| {
            let cfg = ExperimentConfig { output: format!("verify/{}", s.name()), scale_factor, ..ExperimentConfig::defaults(s) };
            let (status, outcome) = execute(&cfg, root);
            (s, status, outcome)
        })
        .collect()
}

/// Least-squares Plancherel calibration on seeded test functions.
pub fn calibrate(omega: f64, seeds: &[u64], root: &Path) -> Result<(f64, String), RunError> {
    let grid = Arc::new(SpectralGrid::new(GridSpec::for_band(omega), 1.0).map_err(run_err)?);
    let funcs: Vec<_> = seeds.iter().map(|&s| synthesize(grid.clone(), omega, s, 3).coeffs).collect();
    let cal = calibrate_plancherel(&funcs, &default_polar_grid(omega)).map_err(run_err)?;
    let mut csv = String::from("seed,implied_scale\n");
    for (s, v) in seeds.iter().zip(&cal.implied) {
        let _ = writeln!(csv, "{s},{}", e(*v));
    }
    let dir = root.join("calibrate");
    fs::create_dir_all(&dir).map_err(run_err)?;
    fs::write(dir.join("calibration.csv"), &csv).map_err(run_err)?;
    let mut ini = Ini::new();
    ini.with_section(Some("manifest"))
        .set("version", env!("CARGO_PKG_VERSION"))
        .set("plancherel_scale", format!("{:e}", cal.scale))
        .set("spread", format!("{:e}", cal.spread))
        .set("omega", num(omega))
        .set("seeds", join(seeds, |s| s.to_string()));
    fs::write(dir.join("manifest.ini"), ini_string(&ini)).map_err(run_err)?;
    Ok((cal.scale, csv))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trips_exactly() {
        for s in Scenario::ALL {
            let mut cfg = ExperimentConfig::defaults(s);
            cfg.tol.frame = 1.234567890123e-7;
            cfg.omega = 0.1 + 0.2;
            let back = ExperimentConfig::from_ini_str(&cfg.to_ini_string(), &[]).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.to_ini_string(), cfg.to_ini_string());
        }
    }

    #[test]
    fn overrides_and_errors() {
        let text = "[experiment]\nscenario = frame_reconstruct\n[parameters]\nr = 0.3\n";
        let cfg = ExperimentConfig::from_ini_str(text, &["omega=1.5".into(), "tolerances.frame=1e-3".into()]).unwrap();
        assert_eq!((cfg.omega, cfg.r.clone(), cfg.tol.frame), (1.5, vec![0.3], 1e-3));
        let bad = |t: &str, o: &[&str]| {
            ExperimentConfig::from_ini_str(t, &o.iter().map(|s| s.to_string()).collect::<Vec<_>>()).unwrap_err()
        };
        assert!(matches!(bad("[parameters]\nomega = 1\n", &[]), ConfigError::Missing(_)));
        assert!(matches!(bad("[experiment]\nscenario = nope\n", &[]), ConfigError::Invalid { .. }));
        assert!(matches!(bad(text, &["bogus=1"]), ConfigError::Override(_)));
        assert!(matches!(bad(text, &["omega"]), ConfigError::Override(_)));
        assert!(matches!(bad(text, &["omega=-1"]), ConfigError::Invalid { .. }));
        assert!(matches!(bad(&format!("{text}extra = 1\n"), &[]), ConfigError::UnknownKey { .. }));
        assert!(matches!(bad(&format!("{text}[misc]\na = 1\n"), &[]), ConfigError::UnknownSection(_)));
        assert!(matches!(bad(text, &["gamma=1.0"]), ConfigError::Invalid { .. }));
        assert!(matches!(bad(text, &["r="]), ConfigError::Missing(_)));
    }

    #[test]
    fn manifest_lists_every_tolerance() {
        let cfg = ExperimentConfig::defaults(Scenario::Plancherel);
        let m = manifest(&cfg, 0.159, &Outcome::default());
        let ini = Ini::load_from_str(&m).unwrap();
        let tol = ini.section(Some("tolerances")).unwrap();
        for (s, k, _) in cfg.entries() {
            if s == "tolerances" {
                assert!(tol.get(k).is_some(), "{k}");
            }
        }
        assert_eq!(ini.section(Some("manifest")).unwrap().get("plancherel_scale"), Some("1.59e-1"));
    }

    #[test]
    fn plot_script_names_scenario_csvs() {
        let py = plot_script(Scenario::FrameReconstruct);
        assert!(py.contains("\"reconstruction.csv\", \"r\", \"rel_error\""));
    }

    #[test]
    fn plancherel_scenario_detects_scale_fault() {
        let cfg = ExperimentConfig { seeds: vec![1], ..ExperimentConfig::defaults(Scenario::Plancherel) };
        let ok = run_scenario(&cfg, calibrated_scale()).unwrap();
        assert!(ok.first_failure().is_none(), "{ok:?}");
        let bad = run_scenario(&cfg, calibrated_scale() * 1.01).unwrap();
        assert_eq!(bad.first_failure().unwrap().name, "plancherel_identity");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn positive_floats_round_trip(omega in 1e-6f64..1e7, tol in 1e-300f64..1.0, r in proptest::collection::vec(1e-3f64..10.0, 1..5)) {
                let cfg = ExperimentConfig { omega, r, tol: Tolerances { frame: tol, ..Tolerances::default() }, ..ExperimentConfig::defaults(Scenario::FrameReconstruct) };
                let back = ExperimentConfig::from_ini_str(&cfg.to_ini_string(), &[]).unwrap();
                prop_assert_eq!(back, cfg);
            }
        }
    }
}
