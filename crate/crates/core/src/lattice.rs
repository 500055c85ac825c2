//! Separated point sets whose half-scale balls cover a geodesic ball.
//!
//! A lattice at scale `r` has pairwise distances at least `r/2` (so the
//! `r/4`-balls are disjoint) and every point of the domain lies within
//! `r/2` of a lattice point. Construction is a greedy maximal packing over
//! a shuffled candidate grid, refined by a finer grid and random gap
//! filling so that the continuum cover holds, not just the cover of the
//! candidates.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::bandlimited::{BandlimitedFunction, QuadBall};
use crate::geometry::{distance, multiplicity_ratio, Point};
use crate::spectral::{apply_multiplier, Multiplier, SpectralError};

pub const COVER_PROBES: usize = 10_000;
const REPAIR_QUIET: usize = 20;
pub const MULTIPLICITY_PROBES: usize = 10_000;
const GAP_FILL_PROBES: usize = 40_000;
const GAP_FILL_QUIET: usize = 400_000;
const GAP_FILL_ROUNDS: usize = 200;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum LatticeError {
    #[error("invalid lattice parameters: r = {r}, domain radius = {domain_radius}")]
    InvalidParameters { r: f64, domain_radius: f64 },
    #[error("cover check failed: {uncovered} of {probes} probes farther than r/2 from the lattice")]
    CertificationFailed { uncovered: usize, probes: usize },
    #[error("points {0} and {1} are closer than r/2")]
    PackingViolated(usize, usize),
    #[error("measured multiplicity {measured} exceeds bound {bound}")]
    MultiplicityExceeded { measured: usize, bound: usize },
    #[error("lattice csv: {0}")]
    Format(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatticeCertificate {
    pub min_separation: f64,
    pub cover_probes: usize,
    pub max_probe_gap: f64,
    pub multiplicity: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    pub points: Vec<Point>,
    pub r: f64,
    pub n_mult: usize,
    pub domain_radius: f64,
    pub seed: u64,
    pub certificate: LatticeCertificate,
}

/// Uniform hash of disk coordinates into square cells.
struct CellIndex {
    cell: f64,
    map: HashMap<(i64, i64), Vec<usize>>,
}

impl CellIndex {
    fn new(cell: f64) -> Self {
        Self { cell, map: HashMap::new() }
    }

    fn key(&self, p: Point) -> (i64, i64) {
        ((p.u / self.cell).floor() as i64, (p.v / self.cell).floor() as i64)
    }

    fn insert(&mut self, p: Point, idx: usize) {
        let k = self.key(p);
        self.map.entry(k).or_default().push(idx);
    }

    fn near(&self, p: Point, reach: i64) -> impl Iterator<Item = usize> + '_ {
        let (a, b) = self.key(p);
        (-reach..=reach)
            .flat_map(move |i| (-reach..=reach).map(move |j| (a + i, b + j)))
            .filter_map(move |k| self.map.get(&k))
            .flatten()
            .copied()
    }
}

/// Hyperbolic `r`-ball about any point lies in a euclidean disk of radius
/// `tanh(r/2)`, so a cell of side `tanh(r/4)` needs reach 1 for radius `r/2`
/// and reach 2 for radius `r`.
fn cell_side(r: f64) -> f64 {
    (0.25 * r).tanh()
}

/// Random point uniform in hyperbolic area within `B(o, radius)`.
fn random_in_ball<R: Rng>(rng: &mut R, radius: f64) -> Point {
    let u: f64 = rng.random();
    let a: f64 = rng.random::<f64>() * 2.0 * PI;
    let rho = (1.0 + u * (radius.cosh() - 1.0)).acosh();
    Point::from_polar(rho, a)
}

fn grid_candidates(step_hyp: f64, radius: f64) -> Vec<Point> {
    let t = (0.5 * radius).tanh();
    let e = step_hyp * (1.0 - t * t) / 2.0;
    let n = (t / e).ceil() as i64;
    let mut out = Vec::new();
    for i in -n..=n {
        for j in -n..=n {
            let (u, v) = (i as f64 * e, j as f64 * e);
            if u * u + v * v <= t * t {
                out.push(Point { u, v });
            }
        }
    }
    out
}

struct Packer {
    half_r: f64,
    points: Vec<Point>,
    index: CellIndex,
}

impl Packer {
    fn try_insert(&mut self, p: Point) -> bool {
        let ok = self.index.near(p, 1).all(|k| distance(self.points[k], p) >= self.half_r);
        if ok {
            self.index.insert(p, self.points.len());
            self.points.push(p);
        }
        ok
    }
}

/// Greedy maximal `r/2`-separated set in `B(o, domain_radius)`.
pub fn build_lattice(r: f64, domain_radius: f64, seed: u64) -> Result<Lattice, LatticeError> {
    if !(r > 0.0) || !(domain_radius > 0.0) {
        return Err(LatticeError::InvalidParameters { r, domain_radius });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut packer = Packer { half_r: 0.5 * r, points: Vec::new(), index: CellIndex::new(cell_side(r)) };
    packer.try_insert(Point::origin());
    for step in [r / 8.0, r / 32.0] {
        let mut cands = grid_candidates(step, domain_radius);
        cands.shuffle(&mut rng);
        for p in cands {
            packer.try_insert(p);
        }
    }
    // Random gap filling until GAP_FILL_QUIET consecutive candidates are rejected.
    let mut quiet = 0;
    for _ in 0..GAP_FILL_ROUNDS {
        let added = (0..GAP_FILL_PROBES)
            .filter(|_| {
                let p = random_in_ball(&mut rng, domain_radius);
                packer.try_insert(p)
            })
            .count();
        quiet = if added == 0 { quiet + GAP_FILL_PROBES } else { 0 };
        if quiet >= GAP_FILL_QUIET {
            break;
        }
    }
    // Uncovered probes are r/2-separated from every point, so inserting them
    // keeps the packing; stop after REPAIR_QUIET clean rounds.
    let mut clean = 0;
    while clean < REPAIR_QUIET {
        let inner = domain_radius - r;
        let added = (0..COVER_PROBES)
            .filter(|_| {
                let p = random_in_ball(&mut rng, if inner > 0.0 { inner } else { domain_radius });
                packer.try_insert(p)
            })
            .count();
        clean = if added == 0 { clean + 1 } else { 0 };
    }
    let n_mult = multiplicity_ratio(r).map(|b| b.ceil() as usize).unwrap_or(usize::MAX);
    let mut lat = Lattice {
        points: packer.points,
        r,
        n_mult,
        domain_radius,
        seed,
        certificate: LatticeCertificate { min_separation: f64::INFINITY, cover_probes: 0, max_probe_gap: 0.0, multiplicity: 0 },
    };
    lat.certificate.min_separation = lat.check_packing()?;
    let (probes, gap) = lat.check_cover(seed ^ 0x5eed_c0de)?;
    lat.certificate.cover_probes = probes;
    lat.certificate.max_probe_gap = gap;
    lat.certificate.multiplicity = certify_multiplicity(&lat)?;
    Ok(lat)
}

impl Lattice {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn index(&self) -> CellIndex {
        let mut idx = CellIndex::new(cell_side(self.r));
        for (k, &p) in self.points.iter().enumerate() {
            idx.insert(p, k);
        }
        idx
    }

    /// Smallest pairwise distance; error if below `r/2`.
    pub fn check_packing(&self) -> Result<f64, LatticeError> {
        let idx = self.index();
        let mut min = f64::INFINITY;
        for (j, &p) in self.points.iter().enumerate() {
            for k in idx.near(p, 1) {
                if k > j {
                    let d = distance(p, self.points[k]);
                    if d < 0.5 * self.r {
                        return Err(LatticeError::PackingViolated(j, k));
                    }
                    min = min.min(d);
                }
            }
        }
        Ok(min)
    }

    /// Nearest-point distance from each of [`COVER_PROBES`] seeded probes in
    /// `B(o, domain_radius − r)`; returns the probe count and largest gap.
    pub fn check_cover(&self, seed: u64) -> Result<(usize, f64), LatticeError> {
        let inner = self.domain_radius - self.r;
        if inner <= 0.0 {
            return Ok((0, 0.0));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let probes: Vec<Point> = (0..COVER_PROBES).map(|_| random_in_ball(&mut rng, inner)).collect();
        let idx = self.index();
        let gaps: Vec<f64> = probes
            .par_iter()
            .map(|&p| idx.near(p, 1).map(|k| distance(p, self.points[k])).fold(f64::INFINITY, f64::min))
            .collect();
        let uncovered = gaps.iter().filter(|&&g| g >= 0.5 * self.r).count();
        if uncovered > 0 {
            return Err(LatticeError::CertificationFailed { uncovered, probes: COVER_PROBES });
        }
        Ok((COVER_PROBES, gaps.iter().cloned().fold(0.0, f64::max)))
    }

    /// CSV with a `#` header carrying `r, domain_radius, n_mult, seed`.
    pub fn to_csv(&self) -> String {
        let mut s = format!(
            "# r={:?},domain_radius={:?},n_mult={},seed={}\nu,v\n",
            self.r, self.domain_radius, self.n_mult, self.seed
        );
        for p in &self.points {
            let _ = writeln!(s, "{:?},{:?}", p.u, p.v);
        }
        s
    }

    /// Parses [`Lattice::to_csv`] output and re-certifies the point set.
    pub fn from_csv(text: &str) -> Result<Self, LatticeError> {
        let bad = |m: &str| LatticeError::Format(m.to_string());
        let mut lines = text.lines();
        let header = lines.next().and_then(|h| h.strip_prefix("# ")).ok_or_else(|| bad("missing header"))?;
        let field = |name: &str| -> Result<&str, LatticeError> {
            header
                .split(',')
                .find_map(|kv| kv.strip_prefix(name).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| bad(name))
        };
        let r: f64 = field("r")?.parse().map_err(|_| bad("r"))?;
        let domain_radius: f64 = field("domain_radius")?.parse().map_err(|_| bad("domain_radius"))?;
        let n_mult: usize = field("n_mult")?.parse().map_err(|_| bad("n_mult"))?;
        let seed: u64 = field("seed")?.parse().map_err(|_| bad("seed"))?;
        lines.next();
        let points = lines
            .map(|l| {
                let (u, v) = l.split_once(',').ok_or_else(|| bad("row"))?;
                let u: f64 = u.parse().map_err(|_| bad("u"))?;
                let v: f64 = v.parse().map_err(|_| bad("v"))?;
                Point::new(u, v).map_err(|e| bad(&e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut lat = Lattice {
            points,
            r,
            n_mult,
            domain_radius,
            seed,
            certificate: LatticeCertificate { min_separation: f64::INFINITY, cover_probes: 0, max_probe_gap: 0.0, multiplicity: 0 },
        };
        lat.certificate.min_separation = lat.check_packing()?;
        lat.certificate.multiplicity = certify_multiplicity(&lat)?;
        Ok(lat)
    }
}

/// Largest number of lattice `r`-balls containing any of
/// [`MULTIPLICITY_PROBES`] seeded probes; error above `⌈B(3r)/B(r/4)⌉`.
pub fn certify_multiplicity(lat: &Lattice) -> Result<usize, LatticeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(lat.seed ^ 0x00a1_1ce5);
    let mut probes: Vec<Point> = (0..MULTIPLICITY_PROBES).map(|_| random_in_ball(&mut rng, lat.domain_radius)).collect();
    // Lattice points themselves are where overlaps concentrate.
    probes.extend(lat.points.iter().copied());
    let idx = lat.index();
    let measured = probes
        .par_iter()
        .map(|&p| idx.near(p, 2).filter(|&k| distance(p, lat.points[k]) < lat.r).count())
        .max()
        .unwrap_or(0);
    if measured > lat.n_mult {
        return Err(LatticeError::MultiplicityExceeded { measured, bound: lat.n_mult });
    }
    Ok(measured)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplingInequalityReport {
    /// `‖f‖` over the quadrature ball.
    pub norm: f64,
    /// Global `‖f‖` from the spectral side.
    pub norm_global: f64,
    /// `(Σ |f(x_j)|²)^{1/2}`.
    pub sample_norm: f64,
    /// `r^k ‖Δ^{k/2} f‖`.
    pub smoothness_term: f64,
    /// `norm / (r^{d/2} · sample_norm)`.
    pub residual_ratio: f64,
    /// `sample_norm / ‖f‖_{H^k}`.
    pub upper_ratio: f64,
}

/// Both sides of the sampling inequality for one function.
pub fn sampling_inequality_probe(
    lat: &Lattice,
    f: &BandlimitedFunction,
    k: u32,
    ball: &QuadBall,
) -> Result<SamplingInequalityReport, SpectralError> {
    let vals = f.eval(&lat.points)?;
    let sample_norm = vals.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
    let bv: Vec<Complex64> = f.eval(&ball.points())?;
    let norm = bv.iter().zip(ball.weights()).map(|(v, w)| v.norm_sqr() * w).sum::<f64>().sqrt();
    let smooth = apply_multiplier(&f.coeffs, &Multiplier::neg_laplacian_power(0.5 * k as f64)).norm();
    let sobolev = apply_multiplier(
        &f.coeffs,
        &Multiplier::real("bessel", move |l| (1.0 + l * l + 0.25).powf(0.5 * k as f64)),
    )
    .norm();
    let ratio = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(SamplingInequalityReport {
        norm,
        norm_global: f.norm(),
        sample_norm,
        smoothness_term: lat.r.powi(k as i32) * smooth,
        residual_ratio: ratio(norm, lat.r * sample_norm),
        upper_ratio: ratio(sample_norm, sobolev),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ball_volume;

    #[test]
    fn tiny_domain_gives_origin_only() {
        let lat = build_lattice(0.4, 0.1, 3).unwrap();
        assert_eq!(lat.points, vec![Point::origin()]);
        assert_eq!(certify_multiplicity(&lat).unwrap(), 1);
    }

    #[test]
    fn lattice_properties() {
        for &r in &[0.2, 0.4] {
            let lat = build_lattice(r, 1.2, 7).unwrap();
            assert!(lat.certificate.min_separation >= 0.5 * r);
            assert_eq!(lat.certificate.cover_probes, COVER_PROBES);
            assert!(lat.certificate.max_probe_gap < 0.5 * r);
            let bound = (ball_volume(3.0 * r).unwrap() / ball_volume(0.25 * r).unwrap()).ceil() as usize;
            assert!(lat.certificate.multiplicity <= bound);
        }
    }

    #[test]
    fn deterministic_and_growing() {
        let a = build_lattice(0.4, 1.0, 11).unwrap();
        let b = build_lattice(0.4, 1.0, 11).unwrap();
        assert_eq!(a.points, b.points);
        let c = build_lattice(0.2, 1.0, 11).unwrap();
        assert!(c.len() > a.len());
    }

    #[test]
    fn multiplicity_relabel_invariant() {
        let mut lat = build_lattice(0.4, 1.0, 5).unwrap();
        let m = certify_multiplicity(&lat).unwrap();
        lat.points.reverse();
        assert_eq!(certify_multiplicity(&lat).unwrap(), m);
    }

    #[test]
    fn csv_roundtrip() {
        let lat = build_lattice(0.4, 1.0, 2).unwrap();
        let back = Lattice::from_csv(&lat.to_csv()).unwrap();
        assert_eq!(back.points, lat.points);
        assert_eq!((back.r, back.domain_radius, back.n_mult, back.seed), (lat.r, lat.domain_radius, lat.n_mult, lat.seed));
    }

    #[test]
    fn packing_violation_detected() {
        let mut lat = build_lattice(0.4, 1.0, 2).unwrap();
        let p = lat.points[1];
        lat.points.push(Point { u: p.u + 1e-3, v: p.v });
        assert!(lat.check_packing().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(8))]
            #[test]
            fn built_lattices_are_certified(r in 0.25f64..0.6, seed in 0u64..1000) {
                let lat = build_lattice(r, 0.9, seed).unwrap();
                prop_assert!(lat.check_packing().unwrap() >= 0.5 * r);
                prop_assert!(lat.check_cover(seed).is_ok());
                prop_assert!(certify_multiplicity(&lat).unwrap() <= lat.n_mult);
            }
        }
    }
}
