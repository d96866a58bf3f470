//! Experiment dispatch: turn a validated config into artifact files.
//!
//! Every run writes its CSV artifacts plus a `manifest.json` echoing the
//! config, the seed actually used, the tool version, and wall time. Numeric
//! CSV content is deterministic for a fixed config and seed; the manifest's
//! timing fields are the only thing allowed to differ between reruns.
//!
//! A `reversal` run exits 0 even when the symmetry test rejects — the
//! verdict is the experiment's output, recorded in `reversal.csv`. Only
//! `report-all` treats failing rows as a process failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use alphasde::error::Result;
use alphasde::export;
use alphasde::fpe::{self, Boundary};
use alphasde::integrate;
use alphasde::model::{Alpha, Grid, GridDensity};
use alphasde::stats;
use alphasde::steady;

use crate::config::{invalid, Experiment, RunConfig, SteadyMethod};
use crate::report;

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "ALPHASDE_OUT";

/// Command-line overrides that win over config values.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub artifacts: Vec<String>,
    /// Failing rows of a `report-all` battery; zero for other experiments.
    pub checks_failed: usize,
    pub warnings: Vec<String>,
}

struct RunContext<'a> {
    cfg: &'a RunConfig,
    alpha: Alpha,
    seed: u64,
    out_dir: PathBuf,
    artifacts: Vec<String>,
    warnings: Vec<String>,
}

impl RunContext<'_> {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out_dir.join(name);
        let file = File::create(&path)?;
        self.artifacts.push(name.to_string());
        Ok(BufWriter::new(file))
    }
}

/// Execute one experiment and write its artifacts.
pub fn run(cfg: &RunConfig, overrides: &Overrides) -> Result<RunOutcome> {
    let started = Instant::now();
    let alpha = Alpha::new(cfg.alpha)?;
    let seed = overrides
        .seed
        .or(cfg.sim.as_ref().and_then(|s| s.seed))
        .unwrap_or(1);
    let out_dir = resolve_out_dir(cfg, overrides);
    std::fs::create_dir_all(&out_dir)?;

    let mut ctx = RunContext {
        cfg,
        alpha,
        seed,
        out_dir,
        artifacts: Vec::new(),
        warnings: Vec::new(),
    };
    let checks_failed = match cfg.experiment {
        Experiment::Simulate => run_simulate(&mut ctx)?,
        Experiment::Wdw => run_wdw(&mut ctx)?,
        Experiment::FpeEvolve => run_fpe_evolve(&mut ctx)?,
        Experiment::Operators => run_operators(&mut ctx)?,
        Experiment::Steady => run_steady(&mut ctx)?,
        Experiment::Reversal => run_reversal(&mut ctx)?,
        Experiment::ReportAll => run_report_all(&mut ctx)?,
    };
    write_manifest(&mut ctx, started)?;
    Ok(RunOutcome {
        out_dir: ctx.out_dir,
        artifacts: ctx.artifacts,
        checks_failed,
        warnings: ctx.warnings,
    })
}

fn resolve_out_dir(cfg: &RunConfig, overrides: &Overrides) -> PathBuf {
    if let Some(out) = &overrides.out {
        return out.clone();
    }
    if let Some(dir) = cfg.output.as_ref().and_then(|o| o.dir.as_ref()) {
        return PathBuf::from(dir);
    }
    if let Ok(dir) = std::env::var(OUT_ENV) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    PathBuf::from("alphasde-out")
}

fn write_manifest(ctx: &mut RunContext<'_>, started: Instant) -> Result<()> {
    let started_unix_ms = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0);
    let manifest = serde_json::json!({
        "tool": "alphasde",
        "version": env!("CARGO_PKG_VERSION"),
        "experiment": ctx.cfg.experiment.label(),
        "seed_used": ctx.seed,
        "threads": rayon::current_num_threads(),
        "wall_time_ms": started.elapsed().as_millis() as u64,
        "written_unix_ms": started_unix_ms,
        "artifacts": ctx.artifacts,
        "warnings": ctx.warnings,
        "config": ctx.cfg,
    });
    let path = ctx.out_dir.join("manifest.json");
    let mut file = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut file, &manifest)
        .map_err(|e| invalid("manifest", e.to_string()))?;
    file.write_all(b"\n")?;
    ctx.artifacts.push("manifest.json".to_string());
    Ok(())
}

/// Center of the box the model naturally lives in.
fn default_x0(cfg: &RunConfig) -> Result<Vec<f64>> {
    if let Some(g) = &cfg.grid {
        let grid = g.build()?;
        return Ok((0..grid.dim())
            .map(|d| {
                let ax = grid.axis(d);
                0.5 * (ax.lo + ax.hi)
            })
            .collect());
    }
    let mc = cfg
        .model
        .as_ref()
        .ok_or_else(|| invalid("x0", "no grid, model, or explicit start point"))?;
    let info = alphasde::presets::info(&mc.preset)?;
    Ok(info
        .default_domain
        .iter()
        .map(|(lo, hi)| 0.5 * (lo + hi))
        .collect())
}

fn require(value: Option<f64>, name: &'static str) -> Result<f64> {
    value.ok_or_else(|| invalid(name, "required by this experiment"))
}

fn run_simulate(ctx: &mut RunContext<'_>) -> Result<usize> {
    let cfg = ctx.cfg;
    let model = cfg.build_model()?;
    let sim = cfg.sim()?;
    let dt = require(sim.dt, "sim.dt")?;
    let n_paths = sim
        .n_paths
        .ok_or_else(|| invalid("sim.n_paths", "required by this experiment"))?;
    let x0 = match &sim.x0 {
        Some(x) => x.clone(),
        None => default_x0(cfg)?,
    };
    let scheme = cfg.scheme()?;
    let ens = integrate::simulate_ensemble(
        &model, &x0, sim.t, dt, ctx.alpha, scheme, n_paths, ctx.seed,
    )?;
    if !ens.failures.is_empty() {
        ctx.warnings
            .push(format!("{} of {} paths diverged", ens.failures.len(), n_paths));
    }
    let mut out = ctx.create("endpoints.csv")?;
    export::write_endpoints_csv(&mut out, &ens)?;

    if cfg.output.as_ref().is_some_and(|o| o.paths_binary) {
        let paths = integrate::simulate_paths(
            &model, &x0, sim.t, dt, ctx.alpha, scheme, n_paths, ctx.seed,
        )?;
        let mut bin = ctx.create("paths.bin")?;
        export::write_paths_binary(&mut bin, &paths)?;
    }
    Ok(0)
}

fn run_wdw(ctx: &mut RunContext<'_>) -> Result<usize> {
    let sim = ctx.cfg.sim()?;
    let dt = require(sim.dt, "sim.dt")?;
    if !(dt > 0.0) {
        return Err(invalid("sim.dt", "must be positive"));
    }
    let steps = (sim.t / dt).round() as usize;
    let n = sim
        .n_paths
        .ok_or_else(|| invalid("sim.n_paths", "required by this experiment"))?;
    let samples = integrate::wdw_samples(ctx.seed, sim.t, steps, ctx.alpha, n)?;
    let mut out = ctx.create("wdw_samples.csv")?;
    export::write_samples_csv(&mut out, &samples)?;
    Ok(0)
}

/// Gaussian bump used as the default initial condition.
fn gaussian_density(grid: &Grid, center: &[f64], sigma: f64) -> Result<GridDensity> {
    if !(sigma > 0.0) {
        return Err(invalid("evolve.initial_sigma", "must be positive"));
    }
    if center.len() != grid.dim() {
        return Err(invalid(
            "evolve.initial_center",
            "dimension does not match the grid",
        ));
    }
    let values: Vec<f64> = (0..grid.len())
        .map(|i| {
            let x = grid.coord(i);
            let r2: f64 = x
                .iter()
                .zip(center)
                .map(|(a, c)| (a - c) * (a - c))
                .sum();
            (-r2 / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    GridDensity::from_unnormalized(grid.clone(), values, 0.0)
}

fn run_fpe_evolve(ctx: &mut RunContext<'_>) -> Result<usize> {
    let cfg = ctx.cfg;
    let model = cfg.build_model()?;
    let grid = cfg.build_grid(256)?;
    let sim = cfg.sim()?;
    let ev = cfg.evolve.clone().unwrap_or_default();

    let center = match &ev.initial_center {
        Some(c) => c.clone(),
        None => (0..grid.dim())
            .map(|d| {
                let ax = grid.axis(d);
                0.5 * (ax.lo + ax.hi)
            })
            .collect(),
    };
    let sigma = ev.initial_sigma.unwrap_or_else(|| {
        let ax = grid.axis(0);
        (ax.hi - ax.lo) / 16.0
    });
    let w0 = gaussian_density(&grid, &center, sigma)?;
    let dt = match sim.dt {
        Some(dt) => dt,
        None => fpe::default_dt(&model, &grid)?,
    };
    let evo = fpe::evolve_density(
        &model,
        &w0,
        sim.t,
        dt,
        ctx.alpha,
        ev.boundary.into(),
        ev.snapshots,
    )?;
    ctx.warnings.extend(evo.warnings.iter().cloned());
    let mut out = ctx.create("density.csv")?;
    export::write_density_csv(&mut out, &evo.snapshots)?;
    Ok(0)
}

fn run_operators(ctx: &mut RunContext<'_>) -> Result<usize> {
    let cfg = ctx.cfg;
    let model = cfg.build_model()?;
    let grid = cfg.build_grid(256)?;
    let forward = fpe::build_forward(&model, &grid, ctx.alpha, Boundary::NoFlux)?;
    let backward = fpe::build_backward(&model, &grid, ctx.alpha)?;
    let gap = fpe::operator_gap(&model, &grid, ctx.alpha)?;
    for (name, op) in [
        ("operator_forward.csv", &forward),
        ("operator_backward.csv", &backward),
        ("operator_gap.csv", &gap),
    ] {
        let mut out = ctx.create(name)?;
        export::write_operator_csv(&mut out, op)?;
    }
    Ok(0)
}

fn run_steady(ctx: &mut RunContext<'_>) -> Result<usize> {
    let cfg = ctx.cfg;
    let model = cfg.build_model()?;
    let grid = cfg.build_grid(512)?;
    let opts = cfg.steady.clone().unwrap_or_default();
    let use_quadrature = match opts.method {
        SteadyMethod::Quadrature => true,
        SteadyMethod::Nullspace => false,
        SteadyMethod::Auto => grid.dim() == 1,
    };
    let w = if use_quadrature {
        steady::steady_1d_zero_current(&model, &grid, ctx.alpha)?
    } else {
        let op = fpe::build_forward(&model, &grid, ctx.alpha, Boundary::NoFlux)?;
        steady::steady_nullspace(&op)?
    };
    let phi = steady::quasipotential(&w, opts.epsilon)?;
    if !phi.is_finite_everywhere() {
        ctx.warnings.push(format!(
            "{} empty cells mapped to an infinite quasipotential",
            phi.infinite_nodes().len()
        ));
    }
    let mut out = ctx.create("steady.csv")?;
    export::write_steady_csv(&mut out, &w, &phi)?;
    Ok(0)
}

fn run_reversal(ctx: &mut RunContext<'_>) -> Result<usize> {
    let cfg = ctx.cfg;
    let model = cfg.build_model()?;
    let sim = cfg.sim()?;
    let dt = require(sim.dt, "sim.dt")?;
    let n_paths = sim
        .n_paths
        .ok_or_else(|| invalid("sim.n_paths", "required by this experiment"))?;
    let rv = cfg
        .reversal
        .as_ref()
        .ok_or_else(|| invalid("reversal", "this experiment needs a `reversal` section"))?;
    let probe = stats::kernel_symmetry(
        &model,
        &rv.x,
        &rv.y,
        sim.t,
        rv.delta,
        n_paths,
        dt,
        ctx.alpha,
        cfg.scheme()?,
        ctx.seed,
    )?;
    let min_hits = probe.hits_forward.min(probe.hits_reverse) as f64;
    let rows = vec![
        export::ReversalRow {
            test_name: "kernel-symmetry-z".into(),
            statistic: probe.z,
            threshold: 4.0,
            pass: !probe.inconclusive && probe.z.abs() <= 4.0,
        },
        export::ReversalRow {
            test_name: "kernel-min-hits".into(),
            statistic: min_hits,
            threshold: 1.0,
            pass: !probe.inconclusive,
        },
    ];
    let mut out = ctx.create("reversal.csv")?;
    export::write_reversal_csv(&mut out, &rows)?;
    Ok(0)
}

fn run_report_all(ctx: &mut RunContext<'_>) -> Result<usize> {
    let mut rows = report::standard_battery(ctx.seed)?;
    let failed = rows.iter().filter(|r| !r.pass).count();
    let mut out = ctx.create("report.csv")?;
    report::emit_report(&mut out, &mut rows)?;
    Ok(failed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;
    use std::path::Path;

    fn run_json(json: &str, dir: &Path) -> Result<RunOutcome> {
        let cfg = RunConfig::from_json(json)?;
        run(
            &cfg,
            &Overrides {
                out: Some(dir.to_path_buf()),
                seed: None,
            },
        )
    }

    #[test]
    fn wdw_run_writes_samples_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_json(
            r#"{"schema_version":1,"experiment":"wdw","alpha":1.0,
                "sim":{"t":1.0,"dt":0.001,"n_paths":200,"seed":7}}"#,
            dir.path(),
        )
        .unwrap();
        assert!(outcome.artifacts.contains(&"wdw_samples.csv".to_string()));
        assert!(outcome.artifacts.contains(&"manifest.json".to_string()));
        let text = std::fs::read_to_string(dir.path().join("wdw_samples.csv")).unwrap();
        assert!(text.starts_with("sample_id,value\n"));
        assert_eq!(text.lines().count(), 201);
        let manifest: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("manifest.json")).unwrap())
                .unwrap();
        assert_eq!(manifest["seed_used"], 7);
        assert_eq!(manifest["experiment"], "wdw");
    }

    #[test]
    fn alpha_out_of_range_is_a_validation_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_json(
            r#"{"schema_version":1,"experiment":"wdw","alpha":1.5,
                "sim":{"t":1.0,"dt":0.001,"n_paths":100}}"#,
            dir.path(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("0 <= alpha <= 1"), "{err}");
    }

    #[test]
    fn simulate_writes_endpoints_with_default_start() {
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_json(
            r#"{"schema_version":1,"experiment":"simulate","alpha":0.5,
                "model":{"preset":"tanh-diffusion"},
                "sim":{"t":0.05,"dt":0.005,"n_paths":50,"seed":3},
                "output":{"paths_binary":true}}"#,
            dir.path(),
        )
        .unwrap();
        assert!(outcome.artifacts.contains(&"endpoints.csv".to_string()));
        assert!(outcome.artifacts.contains(&"paths.bin".to_string()));
        let bin = std::fs::read(dir.path().join("paths.bin")).unwrap();
        let dump = export::read_paths_binary(&mut bin.as_slice()).unwrap();
        assert_eq!(dump.n_paths, 50);
        // Endpoints in the CSV match the final states in the binary dump.
        let text = std::fs::read_to_string(dir.path().join("endpoints.csv")).unwrap();
        let first_endpoint: f64 = text
            .lines()
            .nth(1)
            .unwrap()
            .rsplit(',')
            .next()
            .unwrap()
            .parse()
            .unwrap();
        let last_state = dump.times.len() - 1;
        assert_eq!(first_endpoint.to_bits(), dump.data[last_state].to_bits());
    }

    #[test]
    fn steady_run_produces_the_table() {
        let dir = tempfile::tempdir().unwrap();
        run_json(
            r#"{"schema_version":1,"experiment":"steady","alpha":1.0,
                "model":{"preset":"double-well"},
                "grid":{"lo":-2.0,"hi":2.0,"n":128},
                "steady":{"epsilon":0.05,"method":"auto"}}"#,
            dir.path(),
        )
        .unwrap();
        let text = std::fs::read_to_string(dir.path().join("steady.csv")).unwrap();
        assert!(text.starts_with("x,w,phi\n"));
        assert_eq!(text.lines().count(), 129);
    }

    #[test]
    fn evolve_run_warns_nothing_and_snapshots_density() {
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_json(
            r#"{"schema_version":1,"experiment":"fpe-evolve","alpha":1.0,
                "model":{"preset":"tanh-diffusion"},
                "grid":{"lo":-4.0,"hi":4.0,"n":64},
                "sim":{"t":0.05},
                "evolve":{"snapshots":3}}"#,
            dir.path(),
        )
        .unwrap();
        assert!(outcome.warnings.is_empty(), "{:?}", outcome.warnings);
        let text = std::fs::read_to_string(dir.path().join("density.csv")).unwrap();
        assert!(text.starts_with("t,node_index,x,w\n"));
        assert_eq!(text.lines().count(), 1 + 3 * 64);
    }

    #[test]
    fn operators_run_dumps_three_matrices() {
        let dir = tempfile::tempdir().unwrap();
        let outcome = run_json(
            r#"{"schema_version":1,"experiment":"operators","alpha":0.5,
                "model":{"preset":"sin-diffusion"},
                "grid":{"lo":-3.0,"hi":3.0,"n":32}}"#,
            dir.path(),
        )
        .unwrap();
        for name in ["operator_forward.csv", "operator_backward.csv", "operator_gap.csv"] {
            assert!(outcome.artifacts.contains(&name.to_string()));
        }
    }

    #[test]
    fn reversal_run_records_the_verdict_without_failing() {
        let dir = tempfile::tempdir().unwrap();
        // Ito convention: the kernel is asymmetric, the row says fail, the
        // run itself still succeeds.
        let outcome = run_json(
            r#"{"schema_version":1,"experiment":"reversal","alpha":0.0,
                "model":{"preset":"tanh-diffusion","parameters":{"c":0.5}},
                "sim":{"t":0.25,"dt":0.005,"n_paths":20000,"seed":11},
                "reversal":{"x":[-0.8],"y":[0.8],"delta":0.1}}"#,
            dir.path(),
        )
        .unwrap();
        assert_eq!(outcome.checks_failed, 0);
        let text = std::fs::read_to_string(dir.path().join("reversal.csv")).unwrap();
        assert!(text.starts_with("test_name,statistic,threshold,pass\n"));
        assert!(text.lines().count() == 3);
    }
}
