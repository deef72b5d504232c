//! `groupdp` command line.
//!
//! Every JSON artifact is an envelope: the command, its inputs, the fully
//! resolved run config and seed, the result, and a `metadata` block that
//! holds everything that varies between identical runs (wall-clock times,
//! thread count). Errors go to stderr as `{"error": {"kind", "message"}}`
//! with a nonzero exit code.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use groupdp::bellman::StructuralParams;
use groupdp::config::RunConfig;
use groupdp::counterfactual::{channel_decomposition, nodes_from_panel, run_scenarios, Scenario, ScenarioKind};
use groupdp::estimate::inference::{asymptotic_se, refit_config};
use groupdp::estimate::{
    block_bootstrap, fit_mle, likelihood_surface, lr_test, EstimationResult, GridAxis, LikelihoodContext, ModelKind,
    Restriction,
};
use groupdp::kernel::validate_kernel;
use groupdp::oracle::{bench, verify_batch, OracleOptions, DEFAULT_MAX_JOINT};
use groupdp::panel::{derive_neighbor_vars, load_panel, validate_panel, Panel, PanelSchema};
use groupdp::statespace::{Binning, StateSpace, StateSpec};
use groupdp::synth::generate_synthetic;
use groupdp::transitions::Transitions;
use groupdp::Error;

#[derive(Parser)]
#[command(name = "groupdp", version, about = "Dynamic replacement models with group-local interactions")]
struct Cli {
    /// Worker threads; defaults to the available cores. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic panel from the configured truth.
    Gen(GenArgs),
    /// Estimate the failure hazard and neighbor process, write the sparse kernels.
    Transitions(TransitionsArgs),
    /// Maximum likelihood fit with asymptotic standard errors.
    Estimate(EstimateArgs),
    /// Cage-block bootstrap standard errors for an existing fit.
    Bootstrap(BootstrapArgs),
    /// Likelihood ratio test between two nested fits.
    Lrtest(LrArgs),
    /// NLL grid over the two interaction coefficients.
    Surface(SurfaceArgs),
    /// Forward-simulate counterfactual scenarios from a fit.
    Simulate(SimulateArgs),
    /// Per-iteration timing of joint versus decomposed Bellman updates.
    Bench(BenchArgs),
    /// Check the decomposition against the brute-force joint solver on random instances.
    VerifyDecomposition(VerifyArgs),
}

#[derive(Args)]
struct GenArgs {
    /// JSON run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Panel CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Override `synthetic.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct TransitionsArgs {
    /// Panel CSV.
    #[arg(long)]
    panel: PathBuf,
    /// JSON run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Sparse kernel CSV to write (`state_id,next_state_id,action,prob`).
    #[arg(long)]
    out: PathBuf,
    /// State binning for the kernel.
    #[arg(long, default_value = "spatial")]
    model: ModelKind,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EstimateArgs {
    /// Panel CSV.
    #[arg(long)]
    panel: PathBuf,
    /// JSON run config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Fit JSON to write; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// baseline, spatial or intensity.
    #[arg(long, default_value = "spatial")]
    model: ModelKind,
    /// Interaction channels held at zero: full, lag_only, fail_only or no_gamma.
    #[arg(long, default_value = "full", value_parser = parse_restriction)]
    restriction: Restriction,
    /// Skip the finite-difference Hessian.
    #[arg(long)]
    no_se: bool,
}

#[derive(Args)]
struct BootstrapArgs {
    /// Panel CSV the fit was estimated on.
    #[arg(long)]
    panel: PathBuf,
    /// Fit JSON from `estimate`.
    #[arg(long)]
    fit: PathBuf,
    /// Replicates; defaults to `bootstrap.replicates` of the fit's config.
    #[arg(long = "B")]
    replicates: Option<usize>,
    /// Resampling seed; defaults to `bootstrap.seed` of the fit's config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output fit JSON; defaults to overwriting `--fit`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LrArgs {
    /// Fit JSON of the restricted model (or any object with `nll` and `k`).
    #[arg(long)]
    restricted: PathBuf,
    /// Fit JSON of the full model.
    #[arg(long)]
    full: PathBuf,
    /// Degrees of freedom; defaults to the difference in free parameters.
    #[arg(long)]
    df: Option<usize>,
}

#[derive(Args)]
struct SurfaceArgs {
    /// Fit JSON from `estimate` (one lag and one fail coefficient).
    #[arg(long)]
    fit: PathBuf,
    /// Panel CSV; defaults to the panel recorded in the fit.
    #[arg(long)]
    panel: Option<PathBuf>,
    /// `lag_lo:lag_hi:n,fail_lo:fail_hi:n`; defaults to the config's
    /// half-width and point count around the estimate.
    #[arg(long)]
    grid: Option<String>,
    /// Grid CSV to write (`gamma_lag,gamma_fail,delta_nll`).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// Fit JSON from `estimate`.
    #[arg(long)]
    fit: PathBuf,
    /// Panel CSV; defaults to the panel recorded in the fit. Supplies the
    /// transitions, topology and starting states.
    #[arg(long)]
    panel: Option<PathBuf>,
    /// Comma-separated scenario names (full, lag_only, fail_only, none,
    /// scale=F) or a JSON file with a scenario list; defaults to the config's list.
    #[arg(long)]
    scenarios: Option<String>,
    /// Horizon in periods.
    #[arg(long = "T")]
    periods: Option<u32>,
    /// Shock seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replications per scenario.
    #[arg(long)]
    replications: Option<usize>,
    /// Per-period series CSV to write.
    #[arg(long)]
    out: PathBuf,
    /// Summary JSON; stdout when omitted.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Largest number of groups.
    #[arg(long, default_value_t = 3)]
    groups: usize,
    /// States per group.
    #[arg(long, default_value_t = 8)]
    group_size: usize,
    /// Discount factor used in the timed updates.
    #[arg(long, default_value_t = 0.9)]
    beta: f64,
    /// Seed for the random instances.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Joint problems above this many states are timed only in decomposed form.
    #[arg(long, default_value_t = DEFAULT_MAX_JOINT)]
    max_joint: usize,
    /// Timing budget per configuration in seconds.
    #[arg(long, default_value_t = 0.5)]
    min_seconds: f64,
}

#[derive(Args)]
struct VerifyArgs {
    /// Number of random instances.
    #[arg(long, default_value_t = 50)]
    instances: usize,
    /// Seed for the instance generator.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Joint-state cap for the brute-force solver.
    #[arg(long, default_value_t = DEFAULT_MAX_JOINT)]
    max_joint: usize,
    /// Value tolerance.
    #[arg(long, default_value_t = 1e-9)]
    tol: f64,
}

fn parse_restriction(s: &str) -> Result<Restriction, String> {
    serde_json::from_value(Value::String(s.into())).map_err(|_| format!("unknown restriction `{s}`"))
}

/// Error type of the binary: library errors plus usage problems.
#[derive(Debug)]
struct CliError {
    kind: &'static str,
    message: String,
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self {
            kind: e.kind(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Error::from(e).into()
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Error::from(e).into()
    }
}

fn usage(message: impl Into<String>) -> CliError {
    CliError {
        kind: "usage",
        message: message.into(),
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Reproducible artifact wrapper.
#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    command: String,
    inputs: Value,
    config: RunConfig,
    seed: Option<u64>,
    result: T,
    metadata: Value,
}

struct Run {
    threads: usize,
    start: Instant,
}

impl Run {
    fn metadata(&self, extra: Value) -> Value {
        let mut m = json!({
            "unix_time": SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            "seconds": self.start.elapsed().as_secs_f64(),
            "threads": self.threads,
            "version": env!("CARGO_PKG_VERSION"),
        });
        if let (Value::Object(m), Value::Object(extra)) = (&mut m, extra) {
            m.extend(extra);
        }
        m
    }

    #[allow(clippy::too_many_arguments)]
    fn envelope<T: Serialize>(&self, command: &str, inputs: Value, config: &RunConfig, seed: Option<u64>, result: T, extra: Value) -> Envelope<T> {
        Envelope {
            command: command.into(),
            inputs,
            config: config.clone(),
            seed,
            result,
            metadata: self.metadata(extra),
        }
    }
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Config(format!("{}: {e}", path.display())).into()
    })
}

fn write_json<T: Serialize>(value: &T, path: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => {
            let mut out = std::io::stdout().lock();
            if let Err(e) = writeln!(out, "{text}").and_then(|_| out.flush()) {
                // a closed pipe (`| head`) is not an error
                if e.kind() != std::io::ErrorKind::BrokenPipe {
                    return Err(e.into());
                }
            }
        }
    }
    Ok(())
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

/// Load a panel and derive the neighbor columns when the file has none.
fn read_panel(path: &Path) -> CliResult<Panel> {
    let panel = load_panel(path, PanelSchema::default())?;
    if panel.neighbors_derived() {
        Ok(panel)
    } else {
        Ok(derive_neighbor_vars(&panel, &panel.topology())?)
    }
}

fn model_spec(cfg: &RunConfig, model: ModelKind) -> StateSpec {
    cfg.state.with_binning(model.binning())
}

fn default_truth(binning: Binning) -> CliResult<StructuralParams> {
    match binning {
        Binning::None => Ok(StructuralParams::reference_baseline()),
        Binning::Binary => Ok(StructuralParams::reference_spatial()),
        Binning::Bins012Plus => Ok(StructuralParams::reference_intensity()),
        other => Err(usage(format!("no reference truth for binning `{}`; set `truth` in the config", other.name()))),
    }
}

fn path_string(p: &Path) -> String {
    p.display().to_string()
}

fn cmd_gen(run: &Run, a: &GenArgs) -> CliResult<()> {
    let mut cfg = load_config(a.config.as_deref())?;
    if let Some(s) = a.seed {
        cfg.synthetic.seed = s;
    }
    let truth = match &cfg.truth {
        Some(t) => t.clone(),
        None => StructuralParams {
            beta: cfg.beta,
            ..default_truth(cfg.state.binning)?
        },
    };
    let data = generate_synthetic(&truth, &cfg.state, &cfg.synthetic)?;
    data.panel.write_csv(create(&a.out)?)?;
    let (cont, rep) = data.panel.choice_counts();
    let failures = data.panel.rows().iter().filter(|r| r.fail).count();
    let result = json!({
        "panel": path_string(&a.out),
        "rows": data.panel.len(),
        "continue": cont,
        "replace": rep,
        "failures": failures,
        "truth": truth,
        "hazard": data.hazard,
        "neighbors": data.neighbors,
    });
    let inputs = json!({ "config": a.config.as_deref().map(path_string) });
    write_json(&run.envelope("gen", inputs, &cfg, Some(cfg.synthetic.seed), result, json!({})), None)
}

fn cmd_transitions(run: &Run, a: &TransitionsArgs) -> CliResult<bool> {
    let cfg = load_config(a.config.as_deref())?;
    let panel = read_panel(&a.panel)?;
    let spec = model_spec(&cfg, a.model);
    let space = StateSpace::new(spec)?;
    let panel_report = validate_panel(&panel, Some(&spec));
    let tr = Transitions::estimate(&panel, &space, cfg.hazard_smoothing)?;
    let kernels = tr.kernels(&space)?;
    kernels.write_csv(create(&a.out)?)?;
    let k0 = validate_kernel(&kernels.continue_);
    let k1 = validate_kernel(&kernels.replace);
    let valid = panel_report.is_clean() && k0.valid && k1.valid;
    let result = json!({
        "model": a.model,
        "n_states": space.size(),
        "valid": valid,
        "panel_report": panel_report,
        "kernel_continue": k0,
        "kernel_replace": k1,
        "hazard": tr.hazard,
        "neighbors": tr.neighbors,
    });
    let inputs = json!({
        "panel": path_string(&a.panel),
        "config": a.config.as_deref().map(path_string),
        "out": path_string(&a.out),
    });
    write_json(&run.envelope("transitions", inputs, &cfg, None, result, json!({})), a.report.as_deref())?;
    Ok(valid)
}

fn estimate_fit(cfg: &RunConfig, panel: &Panel, model: ModelKind, restriction: Restriction, with_se: bool) -> CliResult<EstimationResult> {
    let space = StateSpace::new(model_spec(cfg, model))?;
    let ctx = LikelihoodContext::from_panel(panel, &space, cfg.hazard_smoothing, cfg.vfi)?;
    let arity = space.binning().levels() - 1;
    let init = match &cfg.init {
        Some(p) => p.clone(),
        None => StructuralParams::default_start(space.spec().n_cages as usize, arity, cfg.beta),
    };
    if (init.beta - cfg.beta).abs() > 0.0 {
        return Err(usage(format!("init.beta = {} differs from beta = {}", init.beta, cfg.beta)));
    }
    let mut fit = fit_mle(&ctx, model, restriction, &init, &cfg.optimizer)?;
    if with_se {
        match asymptotic_se(&ctx, &fit.params_hat, &fit.free) {
            Ok(s) => fit.se_asymptotic = Some(s.se),
            Err(e) => fit.se_asymptotic_error = Some(e.to_string()),
        }
    }
    Ok(fit)
}

fn cmd_estimate(run: &Run, a: &EstimateArgs) -> CliResult<()> {
    let cfg = load_config(a.config.as_deref())?;
    let panel = read_panel(&a.panel)?;
    let fit = estimate_fit(&cfg, &panel, a.model, a.restriction, !a.no_se)?;
    let inputs = json!({
        "panel": path_string(&a.panel),
        "config": a.config.as_deref().map(path_string),
        "model": a.model,
        "restriction": a.restriction,
    });
    let extra = json!({ "fit_seconds": fit.timing.seconds, "seconds_per_eval": fit.timing.seconds_per_eval });
    write_json(&run.envelope("estimate", inputs, &cfg, None, fit, extra), a.out.as_deref())
}

fn cmd_bootstrap(run: &Run, a: &BootstrapArgs) -> CliResult<()> {
    let env: Envelope<EstimationResult> = read_json(&a.fit)?;
    let mut cfg = env.config.clone();
    if let Some(b) = a.replicates {
        cfg.bootstrap.replicates = b;
    }
    if let Some(s) = a.seed {
        cfg.bootstrap.seed = s;
    }
    let panel = read_panel(&a.panel)?;
    let mut fit = env.result;
    let space = StateSpace::new(model_spec(&cfg, fit.model))?;
    let boot = block_bootstrap(&panel, &space, cfg.hazard_smoothing, cfg.vfi, &fit, &refit_config(&fit), &cfg.bootstrap)?;
    fit.se_bootstrap = Some(boot);
    let mut inputs = env.inputs;
    if let Value::Object(m) = &mut inputs {
        m.insert("bootstrap_panel".into(), json!(path_string(&a.panel)));
        m.insert("bootstrap_fit".into(), json!(path_string(&a.fit)));
    }
    let mut metadata = run.metadata(json!({}));
    if let Value::Object(m) = &mut metadata {
        m.insert("estimate".into(), env.metadata);
    }
    let out = Envelope {
        command: "bootstrap".into(),
        inputs,
        seed: Some(cfg.bootstrap.seed),
        config: cfg,
        result: fit,
        metadata,
    };
    write_json(&out, Some(a.out.as_deref().unwrap_or(&a.fit)))
}

/// `(nll, k)` from a fit envelope or a bare object.
fn nll_and_k(path: &Path) -> CliResult<(f64, usize)> {
    let v: Value = read_json(path)?;
    let body = v.get("result").unwrap_or(&v);
    let nll = body.get("nll").and_then(Value::as_f64);
    let k = body.get("k").and_then(Value::as_u64);
    match (nll, k) {
        (Some(nll), Some(k)) => Ok((nll, k as usize)),
        _ => Err(usage(format!("{}: expected numeric `nll` and `k`", path.display()))),
    }
}

fn cmd_lrtest(run: &Run, a: &LrArgs) -> CliResult<()> {
    let (nll_r, k_r) = nll_and_k(&a.restricted)?;
    let (nll_f, k_f) = nll_and_k(&a.full)?;
    let df = match a.df {
        Some(d) => d,
        None if k_f > k_r => k_f - k_r,
        None => return Err(usage(format!("full model has k = {k_f}, restricted k = {k_r}; nothing to test"))),
    };
    let lr = lr_test(nll_r, nll_f, df)?;
    let inputs = json!({
        "restricted": path_string(&a.restricted),
        "full": path_string(&a.full),
        "nll_restricted": nll_r,
        "nll_full": nll_f,
        "k_restricted": k_r,
        "k_full": k_f,
    });
    write_json(&run.envelope("lrtest", inputs, &RunConfig::default(), None, lr, json!({})), None)
}

fn parse_axis(s: &str) -> CliResult<GridAxis> {
    let parts: Vec<&str> = s.split(':').collect();
    let bad = || usage(format!("grid axis `{s}` is not lo:hi:n"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let n: usize = parts[2].trim().parse().map_err(|_| bad())?;
    if n == 0 || !(hi >= lo) {
        return Err(bad());
    }
    Ok(GridAxis { lo, hi, n })
}

/// Panel path from the flag or the fit's recorded inputs.
fn fit_panel(flag: Option<&Path>, inputs: &Value) -> CliResult<PathBuf> {
    match flag {
        Some(p) => Ok(p.to_path_buf()),
        None => inputs
            .get("panel")
            .and_then(Value::as_str)
            .map(PathBuf::from)
            .ok_or_else(|| usage("no --panel given and the fit records none")),
    }
}

fn cmd_surface(run: &Run, a: &SurfaceArgs) -> CliResult<()> {
    let env: Envelope<EstimationResult> = read_json(&a.fit)?;
    let cfg = env.config;
    let fit = env.result;
    let panel_path = fit_panel(a.panel.as_deref(), &env.inputs)?;
    let panel = read_panel(&panel_path)?;
    let space = StateSpace::new(model_spec(&cfg, fit.model))?;
    let ctx = LikelihoodContext::from_panel(&panel, &space, cfg.hazard_smoothing, cfg.vfi)?;
    let hat = &fit.params_hat;
    let (lag, fail) = match &a.grid {
        Some(g) => {
            let (l, f) = g.split_once(',').ok_or_else(|| usage("grid needs two axes separated by a comma"))?;
            (parse_axis(l)?, parse_axis(f)?)
        }
        None => {
            if hat.gamma_arity() != 1 {
                return Err(usage("the surface needs a fit with one lag and one fail coefficient"));
            }
            let (w, n) = (cfg.surface.half_width, cfg.surface.points);
            (GridAxis::centered(hat.gamma_lag[0], w, n), GridAxis::centered(hat.gamma_fail[0], w, n))
        }
    };
    let grid = likelihood_surface(&ctx, hat, &lag, &fail)?;
    grid.write_csv(create(&a.out)?)?;
    let result = json!({
        "out": path_string(&a.out),
        "gamma_lag_axis": lag,
        "gamma_fail_axis": fail,
        "estimate": [hat.gamma_lag[0], hat.gamma_fail[0]],
        "fit_nll": fit.nll,
        "min_nll": grid.min_nll,
        "min_cell": grid.min_cell,
        "min_point": [grid.gamma_lag[grid.min_cell.0], grid.gamma_fail[grid.min_cell.1]],
        "contour_level": grid.contour_level,
        "failed_cells": grid.nll.iter().filter(|v| v.is_none()).count(),
    });
    let inputs = json!({ "fit": path_string(&a.fit), "panel": path_string(&panel_path), "grid": a.grid });
    write_json(&run.envelope("surface", inputs, &cfg, None, result, json!({})), None)
}

fn parse_scenarios(spec: &str) -> CliResult<Vec<Scenario>> {
    let path = Path::new(spec);
    if path.is_file() {
        return read_json(path);
    }
    spec.split(',')
        .map(|name| {
            let name = name.trim();
            let kind = match name {
                "full" => ScenarioKind::Full,
                "lag_only" => ScenarioKind::LagOnly,
                "fail_only" => ScenarioKind::FailOnly,
                "none" => ScenarioKind::None,
                other => match other.strip_prefix("scale=").map(str::parse::<f64>) {
                    Some(Ok(factor)) => ScenarioKind::GammaScale { factor },
                    _ => return Err(usage(format!("unknown scenario `{other}`"))),
                },
            };
            Ok(Scenario::new(name, kind))
        })
        .collect()
}

fn cmd_simulate(run: &Run, a: &SimulateArgs) -> CliResult<()> {
    let env: Envelope<EstimationResult> = read_json(&a.fit)?;
    let mut cfg = env.config;
    let fit = env.result;
    if let Some(s) = &a.scenarios {
        cfg.scenarios = parse_scenarios(s)?;
    }
    if let Some(t) = a.periods {
        cfg.simulation.periods = t;
    }
    if let Some(s) = a.seed {
        cfg.simulation.seed = s;
    }
    if let Some(r) = a.replications {
        cfg.simulation.replications = r;
    }
    let panel_path = fit_panel(a.panel.as_deref(), &env.inputs)?;
    let panel = read_panel(&panel_path)?;
    let space = StateSpace::new(model_spec(&cfg, fit.model))?;
    let tr = Transitions::estimate(&panel, &space, cfg.hazard_smoothing)?;
    let kernels = tr.kernels(&space)?;
    let (nodes, start) = nodes_from_panel(&panel, space.spec().age_max)?;
    let cmp = run_scenarios(&fit.params_hat, &space, &kernels, &tr.hazard, &nodes, start, &cfg.scenarios, &cfg.simulation)?;
    cmp.write_series_csv(create(&a.out)?)?;
    let channels = channel_decomposition(&cmp).ok();
    let result = json!({
        "series": path_string(&a.out),
        "comparison": cmp,
        "channel_effects": channels,
    });
    let inputs = json!({ "fit": path_string(&a.fit), "panel": path_string(&panel_path) });
    let seed = Some(cfg.simulation.seed);
    write_json(&run.envelope("simulate", inputs, &cfg, seed, result, json!({})), a.summary.as_deref())
}

fn cmd_bench(run: &Run, a: &BenchArgs) -> CliResult<()> {
    if a.groups == 0 || a.group_size == 0 {
        return Err(usage("--groups and --group-size must be positive"));
    }
    if !(0.0..1.0).contains(&a.beta) {
        return Err(usage("--beta must lie in [0, 1)"));
    }
    let rows = bench(a.groups, a.group_size, a.beta, a.seed, a.max_joint, a.min_seconds)?;
    let shape: Vec<Value> = rows
        .iter()
        .map(|r| json!({ "groups": r.groups, "group_size": r.group_size, "joint_states": r.joint_states, "decomposed_states": r.decomposed_states }))
        .collect();
    let inputs = json!({
        "groups": a.groups, "group_size": a.group_size, "beta": a.beta,
        "max_joint": a.max_joint, "min_seconds": a.min_seconds,
    });
    // timings are wall-clock, so they live in metadata
    write_json(&run.envelope("bench", inputs, &RunConfig::default(), Some(a.seed), shape, json!({ "timings": rows })), None)
}

fn cmd_verify(run: &Run, a: &VerifyArgs) -> CliResult<bool> {
    let opts = OracleOptions {
        max_joint: a.max_joint,
        ..Default::default()
    };
    let mut batch = verify_batch(a.instances, a.seed, a.tol, &opts)?;
    let timings: Vec<Value> = batch
        .reports
        .iter_mut()
        .map(|r| {
            let t = json!({ "joint_seconds": r.joint_seconds, "decomposed_seconds": r.decomposed_seconds });
            r.joint_seconds = 0.0;
            r.decomposed_seconds = 0.0;
            t
        })
        .collect();
    let ok = batch.passed == batch.instances;
    let inputs = json!({ "instances": a.instances, "max_joint": a.max_joint, "tol": a.tol });
    write_json(&run.envelope("verify-decomposition", inputs, &RunConfig::default(), Some(a.seed), batch, json!({ "timings": timings })), None)?;
    Ok(ok)
}

fn dispatch(run: &Run, cmd: &Command) -> CliResult<()> {
    let check = |ok: bool, what: &str| if ok { Ok(()) } else { Err(CliError { kind: "validation", message: format!("{what} failed") }) };
    match cmd {
        Command::Gen(a) => cmd_gen(run, a),
        Command::Transitions(a) => cmd_transitions(run, a).and_then(|ok| check(ok, "panel or kernel validation")),
        Command::Estimate(a) => cmd_estimate(run, a),
        Command::Bootstrap(a) => cmd_bootstrap(run, a),
        Command::Lrtest(a) => cmd_lrtest(run, a),
        Command::Surface(a) => cmd_surface(run, a),
        Command::Simulate(a) => cmd_simulate(run, a),
        Command::Bench(a) => cmd_bench(run, a),
        Command::VerifyDecomposition(a) => cmd_verify(run, a).and_then(|ok| check(ok, "decomposition check")),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let threads = cli.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads.max(1)).build_global();
    let run = Run {
        threads,
        start: Instant::now(),
    };
    let outcome = match pool {
        Ok(()) => dispatch(&run, &cli.command),
        Err(e) => Err(usage(format!("thread pool: {e}"))),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let body = json!({ "error": { "kind": e.kind, "message": e.message } });
            let _ = writeln!(std::io::stderr(), "{body}");
            ExitCode::FAILURE
        }
    }
}
