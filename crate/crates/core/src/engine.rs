//! Group-level forward simulation shared by the synthetic generator and the
//! counterfactual runner.
//!
//! Within a period every node first draws its failure, then observes its
//! group-mates' replacements from the previous period and failures from the
//! current one, then decides, then ages. Each node owns a random stream keyed
//! by `(seed, node_id)` that yields exactly two uniforms per period (failure
//! first, decision second), so two runs with the same seed see the same
//! shocks event by event regardless of the policy or thread schedule.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bellman::SolveResult;
use crate::error::{Error, Result};
use crate::panel::PanelRow;
use crate::statespace::{StateSpace, UnitState};
use crate::transitions::FailureHazard;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random stream for one `(seed, key)` pair.
pub fn keyed_rng(seed: u64, key: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(key)))
}

/// Replacement probabilities over a state space.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub space: StateSpace,
    pub p_replace: Vec<f64>,
}

impl Policy {
    pub fn from_solution(space: &StateSpace, solution: &SolveResult) -> Self {
        Self {
            space: space.clone(),
            p_replace: (0..solution.ev.len()).map(|s| solution.p_replace(s)).collect(),
        }
    }

    /// Never replaces.
    pub fn never(space: &StateSpace) -> Self {
        Self {
            space: space.clone(),
            p_replace: vec![0.0; space.size()],
        }
    }

    fn p(&self, s: &UnitState) -> Result<f64> {
        let id = self
            .space
            .encode(s)
            .map_err(|e| Error::Simulation(format!("state outside the policy domain: {e}")))?;
        Ok(self.p_replace[id.idx()])
    }
}

/// Starting condition of one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeInit {
    pub node_id: u32,
    pub group_id: u32,
    pub cage: u32,
    pub age: u32,
    /// Decision in the period before the first simulated one.
    pub prev_decision: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EngineConfig {
    pub periods: u32,
    /// Period label of the first simulated period.
    pub start_period: u32,
    pub seed: u64,
}

/// Simulate every group; rows come back grouped by group id (ascending),
/// then by node in input order, then by period.
pub fn run(nodes: &[NodeInit], hazard: &FailureHazard, policy: &Policy, cfg: &EngineConfig) -> Result<Vec<PanelRow>> {
    let age_max = policy.space.spec().age_max;
    for n in nodes {
        if n.cage >= hazard.n_cages || n.cage >= policy.space.spec().n_cages {
            return Err(Error::Simulation(format!("node {} has cage {} outside the model", n.node_id, n.cage)));
        }
    }
    let mut groups: std::collections::BTreeMap<u32, Vec<NodeInit>> = Default::default();
    for n in nodes {
        groups.entry(n.group_id).or_default().push(*n);
    }
    let groups: Vec<Vec<NodeInit>> = groups.into_values().collect();
    let per_group: Vec<Result<Vec<PanelRow>>> = groups
        .par_iter()
        .map(|members| simulate_group(members, hazard, policy, cfg, age_max))
        .collect();
    let mut rows = Vec::with_capacity(nodes.len() * cfg.periods as usize);
    for g in per_group {
        rows.extend(g?);
    }
    Ok(rows)
}

fn simulate_group(
    members: &[NodeInit],
    hazard: &FailureHazard,
    policy: &Policy,
    cfg: &EngineConfig,
    age_max: u32,
) -> Result<Vec<PanelRow>> {
    let n = members.len();
    let mut rngs: Vec<ChaCha8Rng> = members.iter().map(|m| keyed_rng(cfg.seed, m.node_id as u64)).collect();
    let mut age: Vec<u32> = members.iter().map(|m| m.age.min(age_max)).collect();
    let mut prev: Vec<bool> = members.iter().map(|m| m.prev_decision).collect();
    let mut out = vec![Vec::with_capacity(cfg.periods as usize); n];
    let mut fail = vec![false; n];
    let mut u_dec = vec![0.0; n];
    for k in 0..cfg.periods {
        for i in 0..n {
            let u_fail: f64 = rngs[i].random();
            u_dec[i] = rngs[i].random();
            fail[i] = u_fail < hazard.get(age[i], members[i].cage);
        }
        let prev_total = prev.iter().filter(|&&d| d).count() as u32;
        let fail_total = fail.iter().filter(|&&f| f).count() as u32;
        for i in 0..n {
            let nbr_lag = prev_total - prev[i] as u32;
            let nbr_fail = fail_total - fail[i] as u32;
            let s = UnitState::from_observation(policy.space.spec(), age[i], members[i].cage, fail[i], nbr_lag, nbr_fail);
            let decision = u_dec[i] < policy.p(&s)?;
            out[i].push(PanelRow {
                node_id: members[i].node_id,
                group_id: members[i].group_id,
                period: cfg.start_period + k,
                age: age[i],
                cage: members[i].cage,
                fail: fail[i],
                decision,
                nbr_lag,
                nbr_fail,
            });
        }
        for i in 0..n {
            let d = out[i].last().unwrap().decision;
            age[i] = if d { 0 } else { (age[i] + 1).min(age_max) };
            prev[i] = d;
        }
    }
    Ok(out.into_iter().flatten().collect())
}
