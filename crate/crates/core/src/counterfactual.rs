//! Counterfactual forward simulation with channel shutdowns.
//!
//! Every scenario in a comparison is simulated on the same topology, hazard,
//! horizon and shock streams; only the replacement probabilities differ. A
//! comparison runs several replications with independent seeds so paired
//! differences come with Monte Carlo standard errors.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bellman::{solve_vfi, StructuralParams, VfiOptions};
use crate::engine::{keyed_rng, mix64, run, EngineConfig, NodeInit, Policy};
use crate::error::{Error, Result};
use crate::kernel::KernelPair;
use crate::panel::{Panel, PanelRow, Topology};
use crate::statespace::StateSpace;
use crate::transitions::{next_age, FailureHazard};
use crate::kernel::Action;

use rand::Rng;

/// Unit cost used to express utilities in currency.
pub const UNIT_REPLACEMENT_COST: f64 = 7699.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnitCosts {
    pub replace: f64,
    /// Failure cost as a multiple of the replacement cost. Not reported by
    /// the source data; an assumption.
    pub fail_multiplier: f64,
}

impl Default for UnitCosts {
    fn default() -> Self {
        Self {
            replace: UNIT_REPLACEMENT_COST,
            fail_multiplier: 1.0,
        }
    }
}

impl UnitCosts {
    pub fn fail(&self) -> f64 {
        self.replace * self.fail_multiplier
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum ScenarioKind {
    Full,
    /// Failure channel shut down.
    LagOnly,
    /// Lag channel shut down.
    FailOnly,
    /// Both channels shut down.
    None,
    /// Both channels multiplied by `factor`.
    GammaScale { factor: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub label: String,
    #[serde(flatten)]
    pub kind: ScenarioKind,
}

impl Scenario {
    pub fn new(label: &str, kind: ScenarioKind) -> Self {
        Self {
            label: label.into(),
            kind,
        }
    }

    /// `full`, `lag_only`, `fail_only`, `none`.
    pub fn standard() -> Vec<Scenario> {
        vec![
            Scenario::new("full", ScenarioKind::Full),
            Scenario::new("lag_only", ScenarioKind::LagOnly),
            Scenario::new("fail_only", ScenarioKind::FailOnly),
            Scenario::new("none", ScenarioKind::None),
        ]
    }

    pub fn params(&self, base: &StructuralParams) -> StructuralParams {
        let mut p = base.clone();
        let zero = |v: &mut Vec<f64>| v.iter_mut().for_each(|x| *x = 0.0);
        match self.kind {
            ScenarioKind::Full => {}
            ScenarioKind::LagOnly => zero(&mut p.gamma_fail),
            ScenarioKind::FailOnly => zero(&mut p.gamma_lag),
            ScenarioKind::None => {
                zero(&mut p.gamma_lag);
                zero(&mut p.gamma_fail);
            }
            ScenarioKind::GammaScale { factor } => {
                p.gamma_lag.iter_mut().chain(p.gamma_fail.iter_mut()).for_each(|x| *x *= factor);
            }
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub start_period: u32,
    pub replacements: Vec<u64>,
    pub failures: Vec<u64>,
    pub mean_age: Vec<f64>,
    pub cumulative_replacements: u64,
    pub cumulative_failures: u64,
    /// Per-node event log; empty when not retained.
    #[serde(skip)]
    pub events: Vec<PanelRow>,
}

impl SimResult {
    fn from_rows(rows: Vec<PanelRow>, periods: u32, start_period: u32, keep_events: bool) -> Self {
        let t = periods as usize;
        let mut replacements = vec![0u64; t];
        let mut failures = vec![0u64; t];
        let mut age_sum = vec![0u64; t];
        let mut nodes = vec![0u64; t];
        for r in &rows {
            let k = (r.period - start_period) as usize;
            replacements[k] += r.decision as u64;
            failures[k] += r.fail as u64;
            age_sum[k] += r.age as u64;
            nodes[k] += 1;
        }
        let mean_age = age_sum
            .iter()
            .zip(&nodes)
            .map(|(&a, &n)| if n == 0 { 0.0 } else { a as f64 / n as f64 })
            .collect();
        Self {
            start_period,
            cumulative_replacements: replacements.iter().sum(),
            cumulative_failures: failures.iter().sum(),
            replacements,
            failures,
            mean_age,
            events: if keep_events { rows } else { Vec::new() },
        }
    }

    pub fn periods(&self) -> usize {
        self.replacements.len()
    }
}

/// Simulate `periods` periods under `policy` from `nodes`.
pub fn simulate(
    policy: &Policy,
    nodes: &[NodeInit],
    hazard: &FailureHazard,
    periods: u32,
    start_period: u32,
    seed: u64,
) -> Result<SimResult> {
    if periods == 0 {
        return Err(Error::Config("simulation horizon must be at least 1".into()));
    }
    let cfg = EngineConfig {
        periods,
        start_period,
        seed,
    };
    let rows = run(nodes, hazard, policy, &cfg)?;
    Ok(SimResult::from_rows(rows, periods, start_period, true))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub replacement_cost: f64,
    pub failure_cost: f64,
    pub total: f64,
    pub unit_replace: f64,
    pub unit_fail: f64,
    pub beta: f64,
    /// The failure unit cost is an assumption, not an estimate.
    pub failure_cost_assumed: bool,
}

/// `sum_t beta^t (c_r R_t + c_f F_t)` with `t` counted from the first
/// simulated period.
pub fn discounted_cost(sim: &SimResult, costs: &UnitCosts, beta: f64) -> Result<CostReport> {
    if costs.replace < 0.0 || costs.fail() < 0.0 {
        return Err(Error::Config("unit costs must be non-negative".into()));
    }
    let mut rep = 0.0;
    let mut fail = 0.0;
    let mut disc = 1.0;
    for (r, f) in sim.replacements.iter().zip(&sim.failures) {
        rep += disc * costs.replace * *r as f64;
        fail += disc * costs.fail() * *f as f64;
        disc *= beta;
    }
    Ok(CostReport {
        replacement_cost: rep,
        failure_cost: fail,
        total: rep + fail,
        unit_replace: costs.replace,
        unit_fail: costs.fail(),
        beta,
        failure_cost_assumed: true,
    })
}

/// Start from each node's last observed row, advanced by one period with
/// the age law. Returns the nodes and the first simulated period label.
pub fn nodes_from_panel(panel: &Panel, age_max: u32) -> Result<(Vec<NodeInit>, u32)> {
    if panel.is_empty() {
        return Err(Error::Config("cannot initialize from an empty panel".into()));
    }
    let mut last_period = 0;
    let nodes = panel
        .node_runs()
        .map(|run| {
            let r = run.last().unwrap();
            last_period = last_period.max(r.period);
            let action = if r.decision { Action::Replace } else { Action::Continue };
            NodeInit {
                node_id: r.node_id,
                group_id: r.group_id,
                cage: r.cage,
                age: next_age(r.age.min(age_max), action, age_max),
                prev_decision: r.decision,
            }
        })
        .collect();
    Ok((nodes, last_period + 1))
}

/// Panel-free start: uniform ages, group `g` in cage `cage_of_group(g)`.
pub fn uniform_nodes(topology: &Topology, age_max: u32, n_cages: u32, seed: u64) -> Vec<NodeInit> {
    let init_seed = mix64(seed ^ 0x0A6E_0000);
    topology
        .groups()
        .iter()
        .flat_map(|(&g, members)| {
            members.iter().map(move |&node| NodeInit {
                node_id: node,
                group_id: g,
                cage: g % n_cages,
                age: keyed_rng(init_seed, node as u64).random_range(0..=age_max),
                prev_decision: false,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulationConfig {
    pub periods: u32,
    pub seed: u64,
    /// Independent replications; replication `r` uses the seed keyed by
    /// `(seed, r)` in every scenario.
    pub replications: usize,
    pub costs: UnitCosts,
    /// Cost discount factor; defaults to the model's beta.
    pub cost_beta: Option<f64>,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            periods: 36,
            seed: 11,
            replications: 10,
            costs: UnitCosts::default(),
            cost_beta: None,
        }
    }
}

impl SimulationConfig {
    pub fn replication_seed(&self, r: usize) -> u64 {
        mix64(self.seed ^ mix64(0x5EED_0000 + r as u64))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub label: String,
    pub kind: ScenarioKind,
    pub params: StructuralParams,
    /// One result per replication.
    pub runs: Vec<SimResult>,
    pub costs: Vec<CostReport>,
}

impl ScenarioOutcome {
    pub fn mean_cumulative_replacements(&self) -> f64 {
        self.runs.iter().map(|r| r.cumulative_replacements as f64).sum::<f64>() / self.runs.len() as f64
    }
}

/// Mean of per-replication values with its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McStat {
    pub mean: f64,
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
}

impl McStat {
    pub fn from_values(v: &[f64]) -> Self {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let se = if v.len() > 1 {
            (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            se,
            lo: mean - 1.96 * se,
            hi: mean + 1.96 * se,
        }
    }

    pub fn covers(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Scenario minus the first (reference) scenario, paired by replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedDifference {
    pub label: String,
    pub replacements: McStat,
    pub failures: McStat,
    pub total_cost: McStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioComparison {
    pub periods: u32,
    pub start_period: u32,
    pub seed: u64,
    pub replications: usize,
    pub costs: UnitCosts,
    pub cost_beta: f64,
    /// Shock streams are shared across scenarios.
    pub common_random_numbers: bool,
    pub outcomes: Vec<ScenarioOutcome>,
    pub differences: Vec<PairedDifference>,
}

impl ScenarioComparison {
    pub fn outcome(&self, label: &str) -> Option<&ScenarioOutcome> {
        self.outcomes.iter().find(|o| o.label == label)
    }

    /// Long CSV: `scenario,replication,period,replacements,failures,mean_age`.
    pub fn write_series_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["scenario", "replication", "period", "replacements", "failures", "mean_age"])?;
        for o in &self.outcomes {
            for (r, run) in o.runs.iter().enumerate() {
                for k in 0..run.periods() {
                    w.write_record([
                        o.label.clone(),
                        r.to_string(),
                        (run.start_period as usize + k).to_string(),
                        run.replacements[k].to_string(),
                        run.failures[k].to_string(),
                        run.mean_age[k].to_string(),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Simulate every scenario from `base`. The first scenario is the reference
/// for paired differences.
#[allow(clippy::too_many_arguments)]
pub fn run_scenarios(
    base: &StructuralParams,
    space: &StateSpace,
    kernels: &KernelPair,
    hazard: &FailureHazard,
    nodes: &[NodeInit],
    start_period: u32,
    scenarios: &[Scenario],
    cfg: &SimulationConfig,
) -> Result<ScenarioComparison> {
    if scenarios.is_empty() {
        return Err(Error::Config("no scenarios given".into()));
    }
    if cfg.replications == 0 || cfg.periods == 0 {
        return Err(Error::Config("need at least one replication and one period".into()));
    }
    let cost_beta = cfg.cost_beta.unwrap_or(base.beta);
    let vfi = VfiOptions::default();
    let mut outcomes = Vec::with_capacity(scenarios.len());
    for sc in scenarios {
        let params = sc.params(base);
        params
            .check(space)
            .map_err(|e| Error::Config(format!("scenario `{}`: {e}", sc.label)))?;
        let policy = Policy::from_solution(space, &solve_vfi(space, kernels, &params, &vfi)?);
        let mut runs = Vec::with_capacity(cfg.replications);
        let mut costs = Vec::with_capacity(cfg.replications);
        for r in 0..cfg.replications {
            let engine = EngineConfig {
                periods: cfg.periods,
                start_period,
                seed: cfg.replication_seed(r),
            };
            let sim = SimResult::from_rows(run(nodes, hazard, &policy, &engine)?, cfg.periods, start_period, false);
            costs.push(discounted_cost(&sim, &cfg.costs, cost_beta)?);
            runs.push(sim);
        }
        outcomes.push(ScenarioOutcome {
            label: sc.label.clone(),
            kind: sc.kind,
            params,
            runs,
            costs,
        });
    }
    let reference = &outcomes[0];
    let differences = outcomes
        .iter()
        .map(|o| {
            let diff = |f: &dyn Fn(&ScenarioOutcome, usize) -> f64| -> McStat {
                let v: Vec<f64> = (0..cfg.replications).map(|r| f(o, r) - f(reference, r)).collect();
                McStat::from_values(&v)
            };
            PairedDifference {
                label: o.label.clone(),
                replacements: diff(&|s, r| s.runs[r].cumulative_replacements as f64),
                failures: diff(&|s, r| s.runs[r].cumulative_failures as f64),
                total_cost: diff(&|s, r| s.costs[r].total),
            }
        })
        .collect();
    Ok(ScenarioComparison {
        periods: cfg.periods,
        start_period,
        seed: cfg.seed,
        replications: cfg.replications,
        costs: cfg.costs,
        cost_beta,
        common_random_numbers: true,
        outcomes,
        differences,
    })
}

/// Change in one outcome from shutting channels down, per replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEffect {
    /// `fail_only - full`: removing the lag channel.
    pub lag: McStat,
    /// `lag_only - full`: removing the failure channel.
    pub fail: McStat,
    /// `none - full`.
    pub total: McStat,
    /// `total - lag - fail`.
    pub residual: McStat,
    /// `|residual| / |total|` of the means; `None` when the total is 0.
    pub residual_share: Option<f64>,
    /// Sums over replications, in integer units for count outcomes.
    pub lag_sum: i64,
    pub fail_sum: i64,
    pub total_sum: i64,
    pub residual_sum: i64,
}

impl ChannelEffect {
    /// `lag + fail + residual == total`, exactly.
    pub fn identity_holds(&self) -> bool {
        self.lag_sum + self.fail_sum + self.residual_sum == self.total_sum
    }

    fn from_counts(full: &[i64], lag_only: &[i64], fail_only: &[i64], none: &[i64]) -> Self {
        let r = full.len();
        let lag: Vec<i64> = (0..r).map(|i| fail_only[i] - full[i]).collect();
        let fail: Vec<i64> = (0..r).map(|i| lag_only[i] - full[i]).collect();
        let total: Vec<i64> = (0..r).map(|i| none[i] - full[i]).collect();
        let residual: Vec<i64> = (0..r).map(|i| total[i] - lag[i] - fail[i]).collect();
        let stat = |v: &[i64]| McStat::from_values(&v.iter().map(|&x| x as f64).collect::<Vec<_>>());
        let (t, res) = (stat(&total), stat(&residual));
        Self {
            lag: stat(&lag),
            fail: stat(&fail),
            residual_share: (t.mean != 0.0).then(|| res.mean.abs() / t.mean.abs()),
            total: t,
            residual: res,
            lag_sum: lag.iter().sum(),
            fail_sum: fail.iter().sum(),
            total_sum: total.iter().sum(),
            residual_sum: residual.iter().sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelEffects {
    pub replacements: ChannelEffect,
    pub failures: ChannelEffect,
    /// Discounted total cost in whole currency units.
    pub total_cost: ChannelEffect,
}

/// Lag, failure and residual effects from the four standard scenarios.
pub fn channel_decomposition(cmp: &ScenarioComparison) -> Result<ChannelEffects> {
    let get = |label: &str| {
        cmp.outcome(label)
            .ok_or_else(|| Error::Config(format!("channel decomposition needs scenario `{label}`")))
    };
    let (full, lag_only, fail_only, none) = (get("full")?, get("lag_only")?, get("fail_only")?, get("none")?);
    let series = |f: &dyn Fn(&ScenarioOutcome, usize) -> i64| -> [Vec<i64>; 4] {
        [full, lag_only, fail_only, none].map(|o| (0..o.runs.len()).map(|r| f(o, r)).collect())
    };
    let effect = |s: [Vec<i64>; 4]| ChannelEffect::from_counts(&s[0], &s[1], &s[2], &s[3]);
    Ok(ChannelEffects {
        replacements: effect(series(&|o, r| o.runs[r].cumulative_replacements as i64)),
        failures: effect(series(&|o, r| o.runs[r].cumulative_failures as i64)),
        total_cost: effect(series(&|o, r| o.costs[r].total.round() as i64)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statespace::{Binning, StateSpec};
    use crate::transitions::{assemble_kernels, NeighborProcess};

    fn sim_with(replacements: Vec<u64>, failures: Vec<u64>) -> SimResult {
        SimResult {
            start_period: 0,
            cumulative_replacements: replacements.iter().sum(),
            cumulative_failures: failures.iter().sum(),
            mean_age: vec![0.0; replacements.len()],
            replacements,
            failures,
            events: vec![],
        }
    }

    #[test]
    fn discounted_cost_cases() {
        let costs = UnitCosts::default();
        let c = discounted_cost(&sim_with(vec![1, 0, 0], vec![0, 0, 0]), &costs, 0.9).unwrap();
        assert_eq!(c.total, 7699.0);
        let c = discounted_cost(&sim_with(vec![], vec![]), &costs, 0.9).unwrap();
        assert_eq!(c.total, 0.0);
        let hundred = UnitCosts {
            replace: 100.0,
            fail_multiplier: 1.0,
        };
        let c = discounted_cost(&sim_with(vec![0, 0, 1], vec![0, 0, 0]), &hundred, 0.9).unwrap();
        assert!((c.total - 81.0).abs() < 1e-12);
        assert_eq!(c.total, c.replacement_cost + c.failure_cost);
    }

    #[test]
    fn scenario_params() {
        let base = StructuralParams::reference_spatial();
        assert_eq!(Scenario::new("x", ScenarioKind::LagOnly).params(&base).gamma_fail, vec![0.0]);
        assert_eq!(Scenario::new("x", ScenarioKind::FailOnly).params(&base).gamma_lag, vec![0.0]);
        let s = Scenario::new("x", ScenarioKind::GammaScale { factor: 2.0 }).params(&base);
        assert_eq!(s.gamma_lag, vec![-0.8628]);
    }

    fn setup() -> (StateSpace, KernelPair, FailureHazard, Vec<NodeInit>) {
        let spec = StateSpec {
            age_max: 20,
            n_cages: 3,
            binning: Binning::Binary,
        };
        let space = StateSpace::new(spec).unwrap();
        let hz = FailureHazard::from_fn(20, 3, |a, c| 0.01 + 0.002 * a as f64 + 0.01 * c as f64);
        let kernels = assemble_kernels(&hz, &NeighborProcess::absorbing_zero(2, 3), &space).unwrap();
        let topo = Topology::uniform(6, 5);
        let nodes = uniform_nodes(&topo, 20, 3, 1);
        (space, kernels, hz, nodes)
    }

    #[test]
    fn self_comparison_is_exactly_zero() {
        let (space, kernels, hz, nodes) = setup();
        let scen = vec![Scenario::new("full", ScenarioKind::Full), Scenario::new("full_again", ScenarioKind::Full)];
        let cfg = SimulationConfig {
            periods: 12,
            replications: 3,
            ..Default::default()
        };
        let cmp = run_scenarios(&StructuralParams::reference_spatial(), &space, &kernels, &hz, &nodes, 0, &scen, &cfg).unwrap();
        for d in &cmp.differences {
            assert_eq!(d.replacements.mean, 0.0);
            assert_eq!(d.failures.mean, 0.0);
            assert_eq!(d.total_cost.mean, 0.0);
        }
        assert_eq!(cmp.outcomes[0].runs, cmp.outcomes[1].runs);
    }

    #[test]
    fn never_replacing_marches_to_cap() {
        let (space, _, _, nodes) = setup();
        let hz = FailureHazard::from_fn(20, 3, |_, _| 0.0);
        let sim = simulate(&Policy::never(&space), &nodes, &hz, 25, 0, 3).unwrap();
        assert_eq!(sim.cumulative_replacements, 0);
        assert_eq!(sim.cumulative_failures, 0);
        assert_eq!(*sim.mean_age.last().unwrap(), 20.0);
        assert_eq!(sim.periods(), 25);
        let again = simulate(&Policy::never(&space), &nodes, &hz, 25, 0, 3).unwrap();
        assert_eq!(sim.events, again.events);
    }

    #[test]
    fn decomposition_identity_and_missing_scenario() {
        let (space, kernels, hz, nodes) = setup();
        let cfg = SimulationConfig {
            periods: 10,
            replications: 4,
            ..Default::default()
        };
        let cmp = run_scenarios(&StructuralParams::reference_spatial(), &space, &kernels, &hz, &nodes, 0, &Scenario::standard(), &cfg)
            .unwrap();
        let fx = channel_decomposition(&cmp).unwrap();
        assert!(fx.replacements.identity_holds());
        assert!(fx.failures.identity_holds());
        assert!(fx.total_cost.identity_holds());
        let partial = ScenarioComparison {
            outcomes: cmp.outcomes[..3].to_vec(),
            ..cmp
        };
        assert!(matches!(channel_decomposition(&partial), Err(Error::Config(_))));
    }

    #[test]
    fn mismatched_scenario_space_is_config_error() {
        let (space, kernels, hz, nodes) = setup();
        let cfg = SimulationConfig {
            periods: 2,
            replications: 1,
            ..Default::default()
        };
        let r = run_scenarios(&StructuralParams::reference_intensity(), &space, &kernels, &hz, &nodes, 0, &Scenario::standard(), &cfg);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn panel_initialization_applies_age_law() {
        let rows = vec![
            PanelRow {
                node_id: 0,
                group_id: 0,
                period: 4,
                age: 7,
                cage: 1,
                fail: false,
                decision: true,
                nbr_lag: 0,
                nbr_fail: 0,
            },
            PanelRow {
                node_id: 1,
                group_id: 0,
                period: 4,
                age: 30,
                cage: 1,
                fail: false,
                decision: false,
                nbr_lag: 0,
                nbr_fail: 0,
            },
        ];
        let (nodes, start) = nodes_from_panel(&Panel::new(rows, false).unwrap(), 20).unwrap();
        assert_eq!(start, 5);
        assert_eq!((nodes[0].age, nodes[0].prev_decision), (0, true));
        assert_eq!((nodes[1].age, nodes[1].prev_decision), (20, false));
    }
}
