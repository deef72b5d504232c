//! Nonparametric transition estimates and per-action kernel assembly.
//!
//! The kernel factorizes into a deterministic age law, a failure draw at the
//! post-decision age, and a cage-conditioned Markov chain over the pair of
//! neighbor levels that is exogenous to the focal unit's own action.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Action, ControlledKernel, CsrMatrix, KernelPair};
use crate::panel::Panel;
use crate::statespace::{Binning, StateSpace, UnitState};

pub const DEFAULT_SMOOTHING: f64 = 0.5;

/// `P(fail = 1 | age, cage)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureHazard {
    pub age_max: u32,
    pub n_cages: u32,
    /// Indexed `age * n_cages + cage`.
    pub prob: Vec<f64>,
    pub failures: Vec<u64>,
    pub exposures: Vec<u64>,
    pub alpha: f64,
    pub empty_cells: usize,
}

impl FailureHazard {
    pub fn from_fn(age_max: u32, n_cages: u32, f: impl Fn(u32, u32) -> f64) -> Self {
        let mut prob = Vec::with_capacity(((age_max + 1) * n_cages) as usize);
        for age in 0..=age_max {
            for cage in 0..n_cages {
                prob.push(f(age, cage).clamp(0.0, 1.0));
            }
        }
        let cells = prob.len();
        Self {
            age_max,
            n_cages,
            prob,
            failures: vec![0; cells],
            exposures: vec![0; cells],
            alpha: 0.0,
            empty_cells: 0,
        }
    }

    #[inline]
    fn cell(&self, age: u32, cage: u32) -> usize {
        (age.min(self.age_max) * self.n_cages + cage) as usize
    }

    /// Failure probability; ages above the cap saturate.
    #[inline]
    pub fn get(&self, age: u32, cage: u32) -> f64 {
        self.prob[self.cell(age, cage)]
    }
}

/// Cell frequency `(failures + alpha) / (exposures + 2 alpha)`. Empty cells
/// take the prior mean 1/2 when `alpha > 0` and 0 when `alpha == 0`.
pub fn estimate_failure_hazard(panel: &Panel, space: &StateSpace, alpha: f64) -> Result<FailureHazard> {
    if panel.is_empty() {
        return Err(Error::Estimation("cannot estimate a hazard from an empty panel".into()));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("smoothing weight must be >= 0, got {alpha}")));
    }
    let spec = space.spec();
    let mut hz = FailureHazard::from_fn(spec.age_max, spec.n_cages, |_, _| 0.0);
    hz.alpha = alpha;
    for r in panel.rows() {
        if r.cage >= spec.n_cages {
            return Err(Error::Config(format!("panel cage {} outside n_cages {}", r.cage, spec.n_cages)));
        }
        let c = hz.cell(r.age, r.cage);
        hz.exposures[c] += 1;
        hz.failures[c] += r.fail as u64;
    }
    for c in 0..hz.prob.len() {
        let (f, n) = (hz.failures[c] as f64, hz.exposures[c] as f64);
        if hz.exposures[c] == 0 {
            hz.empty_cells += 1;
        }
        hz.prob[c] = if hz.exposures[c] == 0 && alpha == 0.0 {
            0.0
        } else {
            (f + alpha) / (n + 2.0 * alpha)
        };
    }
    Ok(hz)
}

/// Cage-conditioned transition of the neighbor-level pair
/// `(nbr_lag, nbr_fail) -> (nbr_lag', nbr_fail')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborProcess {
    pub levels: usize,
    pub n_cages: u32,
    /// Indexed `[cage][from pair][to pair]`, pairs flattened as `lag * L + fail`.
    pub table: Vec<f64>,
    /// Observed transitions per `[cage][from pair]`.
    pub counts: Vec<u64>,
}

impl NeighborProcess {
    /// Neighbor levels stay at zero forever.
    pub fn absorbing_zero(levels: usize, n_cages: u32) -> Self {
        let pairs = levels * levels;
        let mut table = vec![0.0; n_cages as usize * pairs * pairs];
        for c in 0..n_cages as usize {
            for from in 0..pairs {
                table[(c * pairs + from) * pairs] = 1.0;
            }
        }
        Self {
            levels,
            n_cages,
            table,
            counts: vec![0; n_cages as usize * pairs],
        }
    }

    fn pairs(&self) -> usize {
        self.levels * self.levels
    }

    /// Distribution over next pairs given the current pair in `cage`.
    pub fn row(&self, cage: u32, lag: u8, fail: u8) -> &[f64] {
        let p = self.pairs();
        let from = lag as usize * self.levels + fail as usize;
        let start = (cage as usize * p + from) * p;
        &self.table[start..start + p]
    }

    pub fn prob(&self, cage: u32, from: (u8, u8), to: (u8, u8)) -> f64 {
        self.row(cage, from.0, from.1)[to.0 as usize * self.levels + to.1 as usize]
    }

    /// Marginal distribution of the next lag level.
    pub fn lag_marginal(&self, cage: u32, lag: u8, fail: u8) -> Vec<f64> {
        let row = self.row(cage, lag, fail);
        (0..self.levels).map(|l| row[l * self.levels..(l + 1) * self.levels].iter().sum()).collect()
    }

    /// Marginal distribution of the next failure level.
    pub fn fail_marginal(&self, cage: u32, lag: u8, fail: u8) -> Vec<f64> {
        let row = self.row(cage, lag, fail);
        (0..self.levels)
            .map(|f| (0..self.levels).map(|l| row[l * self.levels + f]).sum())
            .collect()
    }
}

/// Empirical conditional frequencies of next-period neighbor levels, from
/// consecutive observations of the same node. Unobserved conditioning cells
/// fall back to the cage's pooled next-level distribution, and cages with no
/// transitions at all stay at level zero.
pub fn estimate_neighbor_process(panel: &Panel, space: &StateSpace) -> Result<NeighborProcess> {
    let spec = *space.spec();
    let levels = space.levels();
    if spec.binning != Binning::None && !panel.neighbors_derived() {
        return Err(Error::Config(format!(
            "state space uses `{}` neighbor binning but the panel has no neighbor columns",
            spec.binning
        )));
    }
    let pairs = levels * levels;
    let cages = spec.n_cages as usize;
    let mut counts = vec![0u64; cages * pairs * pairs];
    for run in panel.node_runs() {
        for w in run.windows(2) {
            if w[1].period != w[0].period + 1 {
                continue;
            }
            let a = w[0].state(&spec);
            let b = w[1].state(&spec);
            if a.cage as usize >= cages {
                return Err(Error::Config(format!("panel cage {} outside n_cages {}", a.cage, cages)));
            }
            let from = a.nbr_lag as usize * levels + a.nbr_fail as usize;
            let to = b.nbr_lag as usize * levels + b.nbr_fail as usize;
            counts[(a.cage as usize * pairs + from) * pairs + to] += 1;
        }
    }
    let mut out = NeighborProcess::absorbing_zero(levels, spec.n_cages);
    for c in 0..cages {
        let block = &counts[c * pairs * pairs..(c + 1) * pairs * pairs];
        let mut pooled = vec![0u64; pairs];
        for from in 0..pairs {
            for to in 0..pairs {
                pooled[to] += block[from * pairs + to];
            }
        }
        let pooled_total: u64 = pooled.iter().sum();
        for from in 0..pairs {
            let row = &block[from * pairs..(from + 1) * pairs];
            let total: u64 = row.iter().sum();
            out.counts[c * pairs + from] = total;
            let dest = &mut out.table[(c * pairs + from) * pairs..(c * pairs + from + 1) * pairs];
            let (src, n) = if total > 0 {
                (row, total)
            } else if pooled_total > 0 {
                (&pooled[..], pooled_total)
            } else {
                continue;
            };
            for (d, &k) in dest.iter_mut().zip(src) {
                *d = k as f64 / n as f64;
            }
        }
    }
    Ok(out)
}

/// Estimated transition components for one state space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transitions {
    pub hazard: FailureHazard,
    pub neighbors: NeighborProcess,
}

impl Transitions {
    pub fn estimate(panel: &Panel, space: &StateSpace, alpha: f64) -> Result<Self> {
        Ok(Self {
            hazard: estimate_failure_hazard(panel, space, alpha)?,
            neighbors: estimate_neighbor_process(panel, space)?,
        })
    }

    pub fn kernels(&self, space: &StateSpace) -> Result<KernelPair> {
        assemble_kernels(&self.hazard, &self.neighbors, space)
    }
}

/// Next age under `action`.
#[inline]
pub fn next_age(age: u32, action: Action, age_max: u32) -> u32 {
    match action {
        Action::Continue => (age + 1).min(age_max),
        Action::Replace => 0,
    }
}

/// Build the transition matrix for one action as the product of the age
/// law, the failure draw at the post-decision age, and the neighbor chain.
pub fn assemble_kernel(
    hazard: &FailureHazard,
    nbr: &NeighborProcess,
    space: &StateSpace,
    action: Action,
) -> Result<ControlledKernel> {
    let spec = space.spec();
    if hazard.age_max != spec.age_max || hazard.n_cages != spec.n_cages {
        return Err(Error::Config("hazard table does not match the state space".into()));
    }
    if nbr.levels != space.levels() || nbr.n_cages != spec.n_cages {
        return Err(Error::Config("neighbor process does not match the state space".into()));
    }
    let levels = space.levels();
    let mut rows = Vec::with_capacity(space.size());
    for (id, s) in space.states().enumerate() {
        let age = next_age(s.age, action, spec.age_max);
        let h = hazard.get(age, s.cage);
        let nrow = nbr.row(s.cage, s.nbr_lag, s.nbr_fail);
        let mut row = Vec::with_capacity(2 * nrow.len());
        let mut sum = 0.0;
        for (fail, pf) in [(0u8, 1.0 - h), (1u8, h)] {
            for (pair, &pn) in nrow.iter().enumerate() {
                let p = pf * pn;
                if p == 0.0 {
                    continue;
                }
                let next = UnitState {
                    age,
                    cage: s.cage,
                    fail,
                    nbr_lag: (pair / levels) as u8,
                    nbr_fail: (pair % levels) as u8,
                };
                row.push((space.encode(&next)?.idx(), p));
                sum += p;
            }
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Assembly(format!("row {id} sums to {sum}")));
        }
        rows.push(row);
    }
    Ok(ControlledKernel {
        action,
        matrix: CsrMatrix::from_rows(space.size(), rows)?,
    })
}

pub fn assemble_kernels(hazard: &FailureHazard, nbr: &NeighborProcess, space: &StateSpace) -> Result<KernelPair> {
    Ok(KernelPair {
        continue_: assemble_kernel(hazard, nbr, space, Action::Continue)?,
        replace: assemble_kernel(hazard, nbr, space, Action::Replace)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::validate_kernel;
    use crate::panel::{derive_neighbor_vars, PanelRow};
    use crate::statespace::StateSpec;

    fn row(node: u32, period: u32, age: u32, cage: u32, fail: bool) -> PanelRow {
        PanelRow {
            node_id: node,
            group_id: node,
            period,
            age,
            cage,
            fail,
            decision: false,
            nbr_lag: 0,
            nbr_fail: 0,
        }
    }

    fn space(age_max: u32, cages: u32, binning: Binning) -> StateSpace {
        StateSpace::new(StateSpec {
            age_max,
            n_cages: cages,
            binning,
        })
        .unwrap()
    }

    #[test]
    fn no_failures_gives_zero_hazard() {
        let sp = space(2, 1, Binning::None);
        let rows = (0..3).map(|t| row(0, t, t, 0, false)).collect();
        let p = Panel::new(rows, false).unwrap();
        let hz = estimate_failure_hazard(&p, &sp, 0.0).unwrap();
        assert!(hz.prob.iter().all(|&x| x == 0.0));
        assert_eq!(hz.empty_cells, 0);
    }

    #[test]
    fn cell_frequency_and_laplace_prior() {
        // 10 exposures at (age 4, cage 0) with 3 failures; a 5-row toy
        // panel leaves (age 0, cage 1) empty.
        let sp = space(5, 2, Binning::None);
        let rows: Vec<_> = (0..10).map(|n| row(n, 0, 4, 0, n < 3)).collect();
        let p = Panel::new(rows, false).unwrap();
        let hz = estimate_failure_hazard(&p, &sp, 0.0).unwrap();
        assert!((hz.get(4, 0) - 0.3).abs() < 1e-15);

        let toy: Vec<_> = (0..5).map(|t| row(0, t, t, 0, t == 2)).collect();
        let p = Panel::new(toy, false).unwrap();
        let hz = estimate_failure_hazard(&p, &sp, 0.5).unwrap();
        // hand count: (age 2, cage 0) saw one failure in one exposure
        assert_eq!(hz.get(2, 0), (1.0 + 0.5) / (1.0 + 1.0));
        assert_eq!(hz.get(1, 0), 0.5 / 2.0);
        assert_eq!(hz.get(0, 1), 0.5);
        assert_eq!(hz.empty_cells, 12 - 5);
    }

    #[test]
    fn empty_panel_is_an_error() {
        let sp = space(2, 1, Binning::None);
        let p = Panel::new(vec![], false).unwrap();
        assert!(matches!(estimate_failure_hazard(&p, &sp, 0.5), Err(Error::Estimation(_))));
    }

    #[test]
    fn neighbor_process_requires_derived_columns() {
        let sp = space(2, 1, Binning::Binary);
        let p = Panel::new(vec![row(0, 0, 0, 0, false)], false).unwrap();
        assert!(matches!(estimate_neighbor_process(&p, &sp), Err(Error::Config(_))));
    }

    #[test]
    fn no_replacements_means_lag_stays_zero() {
        let sp = space(10, 1, Binning::Binary);
        let mut rows = Vec::new();
        for n in 0..3 {
            for t in 0..6 {
                let mut r = row(n, t, t, 0, (n + t) % 4 == 0);
                r.group_id = 0;
                rows.push(r);
            }
        }
        let p = derive_neighbor_vars(&Panel::new(rows, false).unwrap(), &Topology::uniform(1, 3)).unwrap();
        let np = estimate_neighbor_process(&p, &sp).unwrap();
        for lag in 0..2 {
            for fail in 0..2 {
                assert_eq!(np.lag_marginal(0, lag, fail), vec![1.0, 0.0]);
            }
        }
    }

    use crate::panel::Topology;

    #[test]
    fn symmetric_toy_gives_half_half_rows() {
        // 20 rows: 2 nodes x 10 periods in a 2-node group; node 1 fails on
        // odd periods, so node 0's failure level alternates 0,1,0,1,...
        let sp = space(20, 1, Binning::Binary);
        let mut rows = Vec::new();
        for n in 0..2 {
            for t in 0..10 {
                let mut r = row(n, t, t, 0, n == 1 && t % 2 == 1);
                r.group_id = 0;
                rows.push(r);
            }
        }
        let p = derive_neighbor_vars(&Panel::new(rows, false).unwrap(), &Topology::uniform(1, 2)).unwrap();
        let np = estimate_neighbor_process(&p, &sp).unwrap();
        // brute-force count of node 0 fail-level transitions
        let mut counts = [[0u32; 2]; 2];
        let node0: Vec<_> = p.rows().iter().filter(|r| r.node_id == 0).collect();
        for w in node0.windows(2) {
            counts[w[0].nbr_fail.min(1) as usize][w[1].nbr_fail.min(1) as usize] += 1;
        }
        assert_eq!(counts, [[0, 5], [4, 0]]);
        // node 1 stays at level 0 (9 transitions 0 -> 0), pooled with node 0:
        // from level 0 the next level is 0 w.p. 9/14 and 1 w.p. 5/14
        assert_eq!(np.fail_marginal(0, 0, 1), vec![1.0, 0.0]);
        let m = np.fail_marginal(0, 0, 0);
        assert!((m[0] - 9.0 / 14.0).abs() < 1e-15);

        // single node view: only node 0 rows
        let only0 = Panel::new(node0.into_iter().copied().collect(), true).unwrap();
        let np0 = estimate_neighbor_process(&only0, &sp).unwrap();
        assert_eq!(np0.fail_marginal(0, 0, 0), vec![0.0, 1.0]);
        assert_eq!(np0.fail_marginal(0, 0, 1), vec![1.0, 0.0]);
        // the pooled next-level distribution over all 9 transitions
        let pooled_from_unseen = np0.fail_marginal(0, 1, 1);
        assert!((pooled_from_unseen[0] - 4.0 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn half_half_rows_from_balanced_panel() {
        // 20-row toy (2 nodes x 10 periods). Each node's failure level is the
        // other node's failure sequence; by hand, the 18 transitions split
        // 5/5 out of level 0 and 4/4 out of level 1.
        let sp = space(30, 1, Binning::Binary);
        let fails = [[1u8, 1, 0, 0, 1, 1, 0, 0, 1, 1], [0, 0, 0, 0, 1, 0, 1, 0, 1, 1]];
        let mut rows = Vec::new();
        for (n, seq) in fails.iter().enumerate() {
            for t in 0..10u32 {
                let mut r = row(n as u32, t, t, 0, seq[t as usize] == 1);
                r.group_id = 0;
                rows.push(r);
            }
        }
        let p = derive_neighbor_vars(&Panel::new(rows, false).unwrap(), &Topology::uniform(1, 2)).unwrap();
        let np = estimate_neighbor_process(&p, &sp).unwrap();
        assert_eq!(np.fail_marginal(0, 0, 0), vec![0.5, 0.5]);
        assert_eq!(np.fail_marginal(0, 0, 1), vec![0.5, 0.5]);
        assert_eq!(np.counts[0], 10);
        assert_eq!(np.counts[1], 8);
    }

    #[test]
    fn single_node_groups_absorb_at_zero() {
        let sp = space(10, 2, Binning::Binary);
        let rows = (0..4)
            .flat_map(|n| (0..5).map(move |t| row(n, t, t, n % 2, t == n)))
            .collect();
        let p = derive_neighbor_vars(&Panel::new(rows, false).unwrap(), &Topology::uniform(4, 1)).unwrap();
        let np = estimate_neighbor_process(&p, &sp).unwrap();
        for cage in 0..2 {
            for lag in 0..2 {
                for fail in 0..2 {
                    assert_eq!(np.prob(cage, (lag, fail), (0, 0)), 1.0);
                }
            }
        }
    }

    fn toy_components(sp: &StateSpace, h: f64) -> (FailureHazard, NeighborProcess) {
        let spec = sp.spec();
        (
            FailureHazard::from_fn(spec.age_max, spec.n_cages, |_, _| h),
            NeighborProcess::absorbing_zero(sp.levels(), spec.n_cages),
        )
    }

    #[test]
    fn replace_resets_age() {
        let sp = space(10, 2, Binning::Binary);
        let (hz, np) = toy_components(&sp, 0.1);
        let k = assemble_kernel(&hz, &np, &sp, Action::Replace).unwrap();
        let from = sp
            .encode(&UnitState {
                age: 5,
                cage: 1,
                ..Default::default()
            })
            .unwrap();
        for (c, _) in k.matrix.row(from.idx()) {
            assert_eq!(sp.decode(crate::StateId(c as u32)).unwrap().age, 0);
        }
    }

    #[test]
    fn continue_saturates_at_cap() {
        let sp = space(10, 1, Binning::None);
        let (hz, np) = toy_components(&sp, 0.1);
        let k = assemble_kernel(&hz, &np, &sp, Action::Continue).unwrap();
        let from = sp
            .encode(&UnitState {
                age: 10,
                ..Default::default()
            })
            .unwrap();
        let total: f64 = k
            .matrix
            .row(from.idx())
            .filter(|&(c, _)| sp.decode(crate::StateId(c as u32)).unwrap().age == 10)
            .map(|(_, p)| p)
            .sum();
        assert_eq!(total, 1.0);
    }

    #[test]
    fn two_age_toy_continue_row() {
        // ages {0, 1}, one cage, hazard 0.25: continuing from age 0 lands on
        // age 1 with fail' ~ (0.75, 0.25)
        let sp = space(1, 1, Binning::None);
        let (hz, np) = toy_components(&sp, 0.25);
        let k = assemble_kernel(&hz, &np, &sp, Action::Continue).unwrap();
        let row: Vec<_> = k.matrix.row(0).collect();
        assert_eq!(row, vec![(2, 0.75), (3, 0.25)]);
    }

    #[test]
    fn assembled_cells_are_products_of_marginals() {
        let sp = space(4, 2, Binning::Binary);
        let hz = FailureHazard::from_fn(4, 2, |a, c| 0.05 + 0.02 * a as f64 + 0.1 * c as f64);
        let mut np = NeighborProcess::absorbing_zero(2, 2);
        for (i, v) in np.table.iter_mut().enumerate() {
            *v = ((i % 4) + 1) as f64 / 10.0;
        }
        for action in Action::ALL {
            let k = assemble_kernel(&hz, &np, &sp, action).unwrap();
            let rep = validate_kernel(&k);
            assert!(rep.valid && rep.max_row_deviation <= 1e-12);
            for (id, s) in sp.states().enumerate() {
                for (c, p) in k.matrix.row(id) {
                    let t = sp.decode(crate::StateId(c as u32)).unwrap();
                    assert_eq!(t.cage, s.cage);
                    assert_eq!(t.age, next_age(s.age, action, 4));
                    let h = hz.get(t.age, t.cage);
                    let pf = if t.fail == 1 { h } else { 1.0 - h };
                    let pn = np.prob(s.cage, (s.nbr_lag, s.nbr_fail), (t.nbr_lag, t.nbr_fail));
                    assert_eq!(p, pf * pn);
                }
            }
        }
    }

    #[test]
    fn mismatched_components_rejected() {
        let sp = space(4, 2, Binning::Binary);
        let (hz, _) = toy_components(&sp, 0.1);
        let np = NeighborProcess::absorbing_zero(3, 2);
        assert!(assemble_kernel(&hz, &np, &sp, Action::Continue).is_err());
    }
}
