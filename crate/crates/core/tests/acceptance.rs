//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. INFO lines carry measured quantities that are reported, not
//! asserted.

use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use hyperband::cli::{execute, run_scenario, ExperimentConfig, Outcome, SampleModel, Scenario, Status};
use hyperband::spectral::calibrated_scale;

struct Verdict {
    pass: bool,
    detail: String,
}

fn summarize(outcomes: &[(&str, Outcome)]) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, o) in outcomes {
        for c in &o.checks {
            pass &= c.pass;
            parts.push(format!("{label}{}={} ({})", c.name, if c.pass { "ok" } else { "FAILED" }, c.detail));
        }
    }
    Verdict { pass, detail: parts.join("; ") }
}

fn run(cfg: &ExperimentConfig) -> Outcome {
    match run_scenario(cfg, calibrated_scale()) {
        Ok(o) => o,
        Err(e) => Outcome {
            files: Vec::new(),
            checks: vec![hyperband::cli::Check { name: "execution".into(), pass: false, detail: e.0 }],
        },
    }
}

fn file<'a>(o: &'a Outcome, name: &str) -> &'a str {
    o.files.iter().find(|f| f.0 == name).map_or("", |f| f.1.as_str())
}

fn defaults(s: Scenario) -> ExperimentConfig {
    ExperimentConfig::defaults(s)
}

fn plancherel() -> Verdict {
    summarize(&[("", run(&defaults(Scenario::Plancherel)))])
}

fn bernstein() -> Verdict {
    summarize(&[("", run(&defaults(Scenario::Bernstein)))])
}

fn lattices() -> Verdict {
    summarize(&[("", run(&defaults(Scenario::Lattice)))])
}

fn frames() -> Verdict {
    summarize(&[("", run(&defaults(Scenario::FrameReconstruct)))])
}

fn deconvolution() -> Verdict {
    let base = ExperimentConfig { r: vec![0.1], ..defaults(Scenario::FrameReconstruct) };
    let lap = run(&ExperimentConfig { samples: SampleModel::Laplacian, ..base.clone() });
    let avg = run(&ExperimentConfig { samples: SampleModel::Average, tau: vec![0.2], n: 0, ..base });
    summarize(&[("laplacian:", lap), ("average(tau=0.2):", avg)])
}

fn spherical_averages() -> Verdict {
    summarize(&[("", run(&defaults(Scenario::SphericalAvg)))])
}

fn overlapping_spheres() -> Verdict {
    let o = run(&defaults(Scenario::AveragedReconstruct));
    for line in file(&o, "averaged.csv").lines().skip(1) {
        println!("INFO  averaged row: {line}");
    }
    summarize(&[("", o)])
}

fn splines() -> Verdict {
    let cfg = defaults(Scenario::SplineReconstruct);
    let o = run(&cfg);
    for line in file(&o, "spline_decay.csv").lines().skip(1) {
        println!("INFO  spline decay (omega,r,orders,rate,guarded_at): {line}");
    }
    for seed in [2u64, 3] {
        let other = run(&ExperimentConfig { seeds: vec![seed], ..cfg.clone() });
        for line in file(&other, "splines.csv").lines().skip(1) {
            println!("INFO  spline seed {seed} (omega,r,k,cond,L2,max,runtime): {line}");
        }
    }
    let dense = run(&ExperimentConfig {
        omega: 2.0,
        r: vec![0.1],
        domain_radius: 1.2,
        error_radius: 0.6,
        ..cfg.clone()
    });
    for line in file(&dense, "splines.csv").lines().skip(1) {
        println!("INFO  spline omega=2 r=0.1 (omega,r,k,cond,L2,max,runtime): {line}");
    }
    summarize(&[("", o)])
}

fn baseline() -> Verdict {
    summarize(&[("", run(&defaults(Scenario::Baseline1d)))])
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).expect("read output dir") {
            let p = entry.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("prefix").display().to_string();
                out.push((rel, fs::read(&p).expect("read output file")));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Verdict {
    let configs = [
        defaults(Scenario::Lattice),
        ExperimentConfig { r: vec![0.4, 0.2], ..defaults(Scenario::FrameReconstruct) },
        defaults(Scenario::SphericalAvg),
        defaults(Scenario::SplineReconstruct),
        defaults(Scenario::Baseline1d),
    ];
    let roots = [tempfile::tempdir().expect("tempdir"), tempfile::tempdir().expect("tempdir")];
    for root in &roots {
        for cfg in &configs {
            let (status, o) = execute(cfg, root.path());
            if status != Status::Ok {
                return Verdict { pass: false, detail: format!("{} did not pass: {:?}", cfg.scenario.name(), o.first_failure()) };
            }
        }
    }
    let (a, b) = (tree(roots[0].path()), tree(roots[1].path()));
    let names: Vec<&str> = a.iter().map(|f| f.0.as_str()).collect();
    let differing: Vec<&str> = a.iter().zip(&b).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    Verdict {
        pass: a.len() == b.len() && differing.is_empty() && !a.is_empty(),
        detail: format!("{} files compared, differing: {differing:?}; {names:?}", a.len()),
    }
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Verdict); 10] = [
        ("plancherel identity, 5 seeds", plancherel),
        ("bernstein inequality, 4 orders x 10 seeds", bernstein),
        ("lattice packing, cover, multiplicity", lattices),
        ("frame reconstruction and error trend in r", frames),
        ("deconvolution from laplacian and averaged samples", deconvolution),
        ("spherical average two paths and near-identity bound", spherical_averages),
        ("overlapping spheres and flat error in tau", overlapping_spheres),
        ("splines: lagrangian, variational, error decrease", splines),
        ("one-dimensional sinc and gram routes", baseline),
        ("byte-identical reruns", determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let v = f();
        if !v.pass {
            failed += 1;
        }
        println!(
            "{} {:>2} {name} [{:.1}s] {}",
            if v.pass { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64(),
            v.detail
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
