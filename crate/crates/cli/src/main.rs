//! Experiment runner for the exit-probability importance sampler.
//!
//! Subcommands:
//!
//! * `estimate`: run a single (eps, T) cell and print the report.
//! * `table`: run the full grid of a spec and write estimates/rel-errors
//!   CSVs (eps-rows by T-columns), a long-format per-cell CSV, and a JSON
//!   manifest echoing everything needed to re-run bit-identically.
//! * `verify`: certify the region lemmas and evaluate the second-moment
//!   bound for the spec's first cell.
//! * `selfcheck`: seed-reproducibility, worker-count independence, and
//!   dt-halving sanity checks.
//!
//! Exit codes: 0 success, 1 configuration error, 2 assertion failure,
//! 3 numerical failure.

mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use exitprob::sampler::{estimate, experiment_grid};
use exitprob::subsolution::SchemeKind;
use exitprob::verify::{certify_with_shrink, theorem_bound, AnalysisParams};
use exitprob::{report, SchemeSpec, SimConfig};

use config::{ExperimentSpec, ResolvedSpec};

#[derive(Parser)]
#[command(name = "exitprob", version, about = "Importance sampling for exit probabilities")]
struct Cli {
    /// Size of the worker pool (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct SpecArgs {
    /// Experiment spec (TOML).
    #[arg(long)]
    spec: PathBuf,

    /// Override the spec's seed.
    #[arg(long)]
    seed: Option<u64>,

    /// Override the spec's step size.
    #[arg(long)]
    dt: Option<f64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one (eps, T) cell and print the estimator report.
    Estimate {
        #[command(flatten)]
        spec: SpecArgs,
        /// Noise level (default: first entry of the spec's eps list).
        #[arg(long)]
        eps: Option<f64>,
        /// Horizon (default: first entry of the spec's horizon list).
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Run the full grid and write CSVs plus a JSON manifest.
    Table {
        #[command(flatten)]
        spec: SpecArgs,
        /// Output directory (default: the spec's `out`, else `results`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Certify the region lemmas and the second-moment bound.
    Verify {
        #[command(flatten)]
        spec: SpecArgs,
        /// Shrink factor eta used by the analysis.
        #[arg(long, default_value_t = 0.25)]
        eta: f64,
    },
    /// Reproducibility and discretization sanity checks.
    Selfcheck {
        /// Experiment spec (TOML); a built-in linear config when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
    },
}

/// An error carrying the process exit code.
struct Failure {
    code: i32,
    err: anyhow::Error,
}

type CmdResult = std::result::Result<(), Failure>;

fn config_fail(err: anyhow::Error) -> Failure {
    Failure { code: 1, err }
}

fn assert_fail(err: anyhow::Error) -> Failure {
    Failure { code: 2, err }
}

fn core_fail(err: exitprob::Error) -> Failure {
    use exitprob::Error::*;
    let code = match &err {
        LemmaViolation { .. } | HypothesisViolation(_) => 2,
        QuadratureFailure { .. } | ComplexRoots { .. } | NonFiniteState { .. } | ZeroHits => 3,
        _ => 1,
    };
    Failure {
        code,
        err: err.into(),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };
    if let Some(k) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global() {
            eprintln!("error: building worker pool: {e}");
            std::process::exit(1);
        }
    }
    let result = match cli.cmd {
        Cmd::Estimate { spec, eps, horizon } => cmd_estimate(&spec, eps, horizon),
        Cmd::Table { spec, out } => cmd_table(&spec, out),
        Cmd::Verify { spec, eta } => cmd_verify(&spec, eta),
        Cmd::Selfcheck { spec } => cmd_selfcheck(spec.as_deref()),
    };
    if let Err(f) = result {
        eprintln!("error: {:#}", f.err);
        std::process::exit(f.code);
    }
}

fn load(spec: &SpecArgs) -> std::result::Result<ResolvedSpec, Failure> {
    let parsed = ExperimentSpec::load(&spec.spec).map_err(config_fail)?;
    let mut resolved = parsed.resolve().map_err(config_fail)?;
    if let Some(seed) = spec.seed {
        resolved.grid.seed = seed;
    }
    if let Some(dt) = spec.dt {
        if !(dt > 0.0) {
            return Err(config_fail(anyhow!("--dt must be positive, got {dt}")));
        }
        resolved.grid.dt = dt;
    }
    Ok(resolved)
}

fn cmd_estimate(spec: &SpecArgs, eps: Option<f64>, horizon: Option<f64>) -> CmdResult {
    let r = load(spec)?;
    let eps = eps.unwrap_or(r.grid.eps[0]);
    let horizon = horizon.unwrap_or(r.grid.horizons[0]);
    let set = r
        .scheme
        .build(&r.model, &r.domain, eps, horizon)
        .map_err(core_fail)?;
    let config = SimConfig {
        eps,
        horizon,
        dt: r.grid.dt,
        n: r.grid.n,
        seed: r.grid.seed,
        cell: 0,
    };
    let t0 = Instant::now();
    let report = estimate(&set, &config).map_err(core_fail)?;
    println!(
        "scheme   : {}\neps      : {eps}\nT        : {horizon}\nN        : {}\ndt       : {}\nestimate : {:e}\nrel error: {:.3}\nstd error: {:e}\nhits     : {}\nwall     : {:.2}s",
        set.kind(),
        report.n,
        r.grid.dt,
        report.estimate,
        report.rel_error_per_sample,
        report.std_error,
        report.hits,
        t0.elapsed().as_secs_f64()
    );
    Ok(())
}

fn cmd_table(spec: &SpecArgs, out: Option<PathBuf>) -> CmdResult {
    let r = load(spec)?;
    let out_dir = out
        .or_else(|| r.out.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("results"));
    std::fs::create_dir_all(&out_dir)
        .with_context(|| format!("creating {}", out_dir.display()))
        .map_err(config_fail)?;

    let t0 = Instant::now();
    let results = experiment_grid(&r.model, &r.domain, &r.scheme, &r.grid);
    let wall = t0.elapsed().as_secs_f64();

    let scheme_name = r.scheme.kind.to_string();
    let estimates = report::estimates_csv(&r.grid.eps, &r.grid.horizons, &results);
    let rel_errors = report::rel_errors_csv(&r.grid.eps, &r.grid.horizons, &results);
    let cells = report::cells_csv(&results, &scheme_name);

    let parsed = ExperimentSpec::load(&spec.spec).map_err(config_fail)?;
    let cell_status: Vec<serde_json::Value> = results
        .iter()
        .map(|c| {
            serde_json::json!({
                "eps": c.eps,
                "T": c.horizon,
                "cell": c.cell,
                "ok": c.report.is_ok(),
                "error": c.report.as_ref().err().map(|e| e.to_string()),
                "wall_time_s": c.wall_time_s,
            })
        })
        .collect();
    let manifest = serde_json::json!({
        "name": r.name,
        "version": env!("CARGO_PKG_VERSION"),
        "spec": parsed,
        "effective": {
            "seed": r.grid.seed,
            "dt": r.grid.dt,
            "n": r.grid.n,
            "eps": r.grid.eps,
            "horizons": r.grid.horizons,
            "scheme": scheme_name,
        },
        "wall_time_s": wall,
        "cells": cell_status,
    });

    write_file(&out_dir.join("estimates.csv"), &estimates)?;
    write_file(&out_dir.join("rel_errors.csv"), &rel_errors)?;
    write_file(&out_dir.join("cells.csv"), &cells)?;
    write_file(
        &out_dir.join("manifest.json"),
        &format!("{:#}\n", manifest),
    )?;

    let failed = results.iter().filter(|c| c.report.is_err()).count();
    println!(
        "wrote {} cells ({} failed) to {} in {:.1}s",
        results.len(),
        failed,
        out_dir.display(),
        wall
    );
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> CmdResult {
    std::fs::write(path, contents)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(config_fail)
}

fn cmd_verify(spec: &SpecArgs, eta: f64) -> CmdResult {
    let r = load(spec)?;
    let eps = r.grid.eps[0];
    let horizon = r.grid.horizons[0];
    match r.scheme.kind {
        SchemeKind::MollifiedLinear | SchemeKind::MollifiedNonlinear => {}
        other => {
            return Err(config_fail(anyhow!(
                "verify needs a mollified scheme, got {other}"
            )))
        }
    }
    let analysis = AnalysisParams::new(eta, &r.domain, horizon);
    // Certification always uses the canonical delta = 2 eps so the eps/2
    // shrink pass is well defined.
    let scheme = SchemeSpec {
        delta: None,
        ..r.scheme
    };
    let cert = certify_with_shrink(
        |e| scheme.build(&r.model, &r.domain, e, horizon),
        eps,
        &analysis,
    )
    .map_err(core_fail)?;

    let mut text = String::new();
    writeln!(text, "region lemmas at eps = {eps}, T = {horizon}, eta = {eta}:").unwrap();
    for w in &cert.at_eps.hypothesis_warnings {
        writeln!(text, "  warning: {w}").unwrap();
    }
    for reg in &cert.at_eps.regions {
        if reg.empty {
            writeln!(text, "  region {}: empty (pass)", reg.region).unwrap();
        } else {
            writeln!(
                text,
                "  region {}: worst margin {:+.3e} at (t, x) = ({:.4}, {:.4}) [{}]",
                reg.region,
                reg.worst_margin,
                reg.worst_t,
                reg.worst_x,
                if reg.pass { "pass" } else { "below slack" }
            )
            .unwrap();
        }
    }
    if let Some(half) = &cert.at_half_eps {
        writeln!(text, "  shrink pass at eps = {}:", half.eps).unwrap();
        for reg in &half.regions {
            if !reg.empty {
                writeln!(
                    text,
                    "    region {}: worst margin {:+.3e}",
                    reg.region, reg.worst_margin
                )
                .unwrap();
            }
        }
    }
    writeln!(
        text,
        "  certification: {}",
        if cert.pass { "PASS" } else { "FAIL" }
    )
    .unwrap();

    let set = scheme
        .build(&r.model, &r.domain, eps, horizon)
        .map_err(core_fail)?;
    let bound = theorem_bound(&set, &analysis).map_err(core_fail)?;
    writeln!(text, "second-moment bound: -eps log E[Gamma^2] >= {:.6}", bound.bound).unwrap();
    writeln!(text, "  Ubar_delta(0, x0) = {:.6} (lower bound {:.6})", bound.ubar00, bound.ubar00_lower).unwrap();
    writeln!(text, "  decay rate -> {:.6} (2L = {})", bound.decay_rate, 2.0 * r.domain.level()).unwrap();
    for (name, ok) in &bound.hypotheses {
        writeln!(text, "  hypothesis: {name}: {}", if *ok { "ok" } else { "NOT SATISFIED" }).unwrap();
    }
    print!("{text}");

    if !cert.pass {
        return Err(assert_fail(anyhow!("region lemma certification failed")));
    }
    Ok(())
}

const SELFCHECK_SPEC: &str = r#"
name = "selfcheck"

[model]
kind = "linear"
c = 1.0
sigma_bar = 1.0

[domain]
kind = "two-sided"
a1 = -1.0
a2 = 1.0

[scheme]
kind = "mollified-linear"
m = 4.0
xhat = 1.0

[grid]
eps = [0.2]
horizons = [1.5]
n = 20000
dt = 1e-3
seed = 20260824
"#;

fn cmd_selfcheck(spec_path: Option<&Path>) -> CmdResult {
    let parsed = match spec_path {
        Some(p) => ExperimentSpec::load(p).map_err(config_fail)?,
        None => toml::from_str(SELFCHECK_SPEC)
            .map_err(|e| config_fail(anyhow!("built-in spec: {e}")))?,
    };
    let r = parsed.resolve().map_err(config_fail)?;
    let eps = r.grid.eps[0];
    let horizon = r.grid.horizons[0];
    let n = r.grid.n.min(20_000);
    let set = r
        .scheme
        .build(&r.model, &r.domain, eps, horizon)
        .map_err(core_fail)?;
    let config = SimConfig {
        eps,
        horizon,
        dt: r.grid.dt,
        n,
        seed: r.grid.seed,
        cell: 0,
    };

    // Worker-count independence: bit-identical estimates under pools of
    // 1, 2, and 8 threads.
    let mut bits = Vec::new();
    for k in [1usize, 2, 8] {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| config_fail(anyhow!("worker pool: {e}")))?;
        let rep = pool
            .install(|| estimate(&set, &config))
            .map_err(core_fail)?;
        bits.push((k, rep.estimate.to_bits(), rep.second_moment.to_bits()));
    }
    let reproducible = bits.iter().all(|b| (b.1, b.2) == (bits[0].1, bits[0].2));
    println!(
        "worker independence (1, 2, 8 threads): {}",
        if reproducible { "pass" } else { "FAIL" }
    );

    // Seed reproducibility: the same configuration twice.
    let a = estimate(&set, &config).map_err(core_fail)?;
    let b = estimate(&set, &config).map_err(core_fail)?;
    let same_seed = a.estimate.to_bits() == b.estimate.to_bits();
    println!(
        "seed reproducibility: {}",
        if same_seed { "pass" } else { "FAIL" }
    );

    // dt halving: the estimate moves by less than a few standard errors
    // plus a small discretization allowance.
    let half = SimConfig {
        dt: config.dt / 2.0,
        ..config
    };
    let c = estimate(&set, &half).map_err(core_fail)?;
    let tol = 5.0 * (a.std_error + c.std_error) + 0.05 * a.estimate.max(c.estimate);
    let dt_ok = (a.estimate - c.estimate).abs() <= tol;
    println!(
        "dt halving: |{:e} - {:e}| <= {tol:e}: {}",
        a.estimate,
        c.estimate,
        if dt_ok { "pass" } else { "FAIL" }
    );

    if reproducible && same_seed && dt_ok {
        Ok(())
    } else {
        Err(assert_fail(anyhow!("selfcheck failed")))
    }
}
