use std::fmt;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bpre_core::acceptance::{self, CriterionResult};
use bpre_core::engine::{batch, simulate_many, with_threads};
use bpre_core::environment::CriticalAlpha;
use bpre_core::estimate::{power_moment_verdict_on, tail_report, weighted_moment, MomentReport, TailReport};
use bpre_core::output::{json_document, trajectories_csv, Meta};
use bpre_core::scenario::{Experiment, Format, Scenario};
use serde_json::json;

use crate::{Cli, Command, FormatArg};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Runtime(m) => write!(f, "{m}"),
        }
    }
}

fn runtime(e: impl fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn load(cli: &Cli) -> Result<Scenario, CliError> {
    let path = cli.config.as_deref().ok_or_else(|| CliError::Config("--config <FILE> is required".into()))?;
    let mut scenario = Scenario::load(path).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(seed) = cli.seed {
        scenario.seed = seed;
        scenario.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(scenario)
}

pub fn execute(cli: &Cli) -> Result<ExitCode, CliError> {
    if cli.threads == Some(0) {
        return Err(CliError::Config("--threads must be at least 1".into()));
    }
    if let Command::Verify { criteria } = &cli.command {
        return verify(cli, criteria);
    }
    let scenario = load(cli)?;
    let experiment = match cli.command {
        Command::Criteria => Experiment::Criteria,
        Command::Simulate => Experiment::Simulate,
        Command::Moments => Experiment::Moments,
        Command::Tail => Experiment::Tail,
        Command::Fncheck => Experiment::Fncheck,
        Command::Run => {
            scenario.experiment.ok_or_else(|| CliError::Config("`run` needs `experiment` in the scenario".into()))?
        }
        Command::Verify { .. } => unreachable!("handled above"),
    };
    let format = match (cli.format, scenario.output.format) {
        (Some(FormatArg::Csv), _) | (None, Some(Format::Csv)) => Format::Csv,
        (Some(FormatArg::Json), _) | (None, Some(Format::Json)) => Format::Json,
        (None, None) if experiment == Experiment::Simulate => Format::Csv,
        (None, None) => Format::Json,
    };
    if format == Format::Csv && experiment != Experiment::Simulate {
        return Err(CliError::Config(format!("csv output is only available for simulate, not {}", name(experiment))));
    }
    let out_dir = cli.out.clone().or_else(|| scenario.output.dir.as_ref().map(PathBuf::from));
    let meta = Meta::new(scenario.hash(), scenario.seed, name(experiment));
    let body = in_pool(cli.threads, || render(experiment, format, &scenario, &meta))?;
    emit(out_dir.as_deref(), name(experiment), format, &body)?;
    Ok(ExitCode::SUCCESS)
}

fn in_pool<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(t) => with_threads(t, f),
        None => f(),
    }
}

fn name(e: Experiment) -> &'static str {
    match e {
        Experiment::Criteria => "criteria",
        Experiment::Simulate => "simulate",
        Experiment::Moments => "moments",
        Experiment::Tail => "tail",
        Experiment::Fncheck => "fncheck",
        Experiment::Verify => "verify",
    }
}

fn render(experiment: Experiment, format: Format, sc: &Scenario, meta: &Meta) -> Result<String, CliError> {
    match experiment {
        Experiment::Criteria => Ok(json_document(meta, &sc.env.kesten_stigum_report().map_err(runtime)?)),
        Experiment::Simulate => {
            let trajectories = simulate_many(&sc.env, &sc.sim_config(), sc.batch.trajectories).map_err(runtime)?;
            Ok(match format {
                Format::Csv => trajectories_csv(meta, &trajectories),
                Format::Json => json_document(meta, &trajectories),
            })
        }
        Experiment::Moments => Ok(json_document(meta, &moments(sc)?)),
        Experiment::Tail => Ok(json_document(meta, &tail(sc)?)),
        Experiment::Fncheck => Ok(json_document(meta, &fncheck(sc))),
        Experiment::Verify => Err(CliError::Config("use the `verify` subcommand for the acceptance suite".into())),
    }
}

/// `E φ(Wₙ)` and `E φ(W*ₙ)` at every collected generation, plus prediction
/// against observation at `n_max` (absent for `α = 1`).
fn moments(sc: &Scenario) -> Result<serde_json::Value, CliError> {
    let spec = sc.weight.ok_or_else(|| CliError::Config("the moments experiment needs a [weight] section".into()))?;
    let weight = sc.weight_fn().expect("weight present");
    let n = sc.sim.n_max;
    let mut collect = sc.collect_at();
    collect.extend([(n / 2).max(1), n]);
    collect.sort_unstable();
    collect.dedup();
    let samples = batch(&sc.env, &sc.sim_config(), sc.batch.trajectories, &collect).map_err(runtime)?;
    let report = |xs: &[f64], g: usize| {
        let mut r = weighted_moment(xs, &weight, &sc.moment);
        r.generation = Some(g);
        r
    };
    let gens = sc.collect_at();
    let comparison = if spec.alpha > 1.0 && sc.env.is_supercritical() {
        Some(power_moment_verdict_on(&sc.env, spec.alpha, &spec.ell, &samples, n, &sc.moment).map_err(runtime)?)
    } else {
        None
    };
    let w: Vec<MomentReport<f64>> = gens.iter().map(|&g| report(samples.w_at(g), g)).collect();
    let w_star: Vec<MomentReport<f64>> = gens.iter().map(|&g| report(samples.w_star_at(g), g)).collect();
    Ok(json!({ "w": w, "w_star": w_star, "comparison": comparison }))
}

fn tail(sc: &Scenario) -> Result<serde_json::Value, CliError> {
    let n = *sc.collect_at().iter().max().expect("nonempty");
    let samples = batch(&sc.env, &sc.sim_config(), sc.batch.trajectories, &[n]).map_err(runtime)?;
    let critical_alpha: Option<CriticalAlpha<f64>> = sc.env.critical_alpha(1e-13).ok();
    let tail: TailReport<f64> = tail_report(&samples.w[0], &sc.tail).map_err(runtime)?;
    Ok(json!({ "generation": n, "critical_alpha": critical_alpha, "tail": tail }))
}

fn fncheck(sc: &Scenario) -> serde_json::Value {
    let f = &sc.fncheck;
    let or = |given: &Vec<f64>, default: &[f64]| if given.is_empty() { default.to_vec() } else { given.clone() };
    let ells = if f.ells.is_empty() { acceptance::convex_menu() } else { f.ells.clone() };
    let concave = if f.concave.is_empty() { acceptance::concave_menu() } else { f.concave.clone() };
    let convex = acceptance::convexification_checks(
        &ells,
        &or(&f.alphas, &acceptance::CONVEX_ALPHAS),
        &or(&f.betas, &acceptance::CONVEX_BETAS),
    );
    let concave = acceptance::concave_correction_checks(&concave);
    let passed = convex.iter().chain(&concave).all(|c| c.passed);
    json!({ "passed": passed, "convexification": convex, "concave_correction": concave })
}

fn emit(dir: Option<&Path>, stem: &str, format: Format, body: &str) -> Result<(), CliError> {
    match dir {
        None => {
            use std::io::Write;
            match std::io::stdout().lock().write_all(body.as_bytes()) {
                Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => {
                    Err(runtime(format!("cannot write output: {e}")))
                }
                _ => Ok(()),
            }
        }
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| runtime(format!("cannot create {}: {e}", dir.display())))?;
            let ext = match format {
                Format::Csv => "csv",
                Format::Json => "json",
            };
            let path = dir.join(format!("{stem}.{ext}"));
            std::fs::write(&path, body).map_err(|e| runtime(format!("cannot write {}: {e}", path.display())))?;
            eprintln!("wrote {}", path.display());
            Ok(())
        }
    }
}

fn verify(cli: &Cli, selected: &[u8]) -> Result<ExitCode, CliError> {
    if cli.format == Some(FormatArg::Csv) {
        return Err(CliError::Config("verify writes JSON only".into()));
    }
    let golden = Scenario::from_toml_str(acceptance::GOLDEN_SCENARIO_TOML).expect("golden scenario parses");
    let ids: Vec<u8> = if selected.is_empty() { (1..=11).collect() } else { selected.to_vec() };
    let results: Vec<CriterionResult> = in_pool(cli.threads, || {
        ids.iter()
            .map(|&id| {
                let r = acceptance::criterion(id).expect("id range checked by the parser");
                println!("{}", r.line());
                r
            })
            .collect()
    });
    let passed = results.iter().filter(|r| r.passed).count();
    println!("{passed}/{} criteria passed", results.len());
    if let Some(dir) = &cli.out {
        let meta = Meta::new(golden.hash(), acceptance::ACCEPTANCE_SEED, "verify");
        emit(Some(dir), "verify", Format::Json, &json_document(&meta, &results))?;
    }
    Ok(if passed == results.len() { ExitCode::SUCCESS } else { ExitCode::from(3) })
}
