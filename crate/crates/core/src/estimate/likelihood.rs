//! Observation-count likelihood.

use crate::bellman::{solve_vfi, SolveResult, StructuralParams, VfiOptions};
use crate::error::{Error, Result};
use crate::kernel::{Action, KernelPair};
use crate::panel::{encode_observations, Panel};
use crate::statespace::StateSpace;
use crate::transitions::Transitions;

/// Everything the likelihood needs besides the parameters. Observations are
/// collapsed to `(state, action)` counts once, so an evaluation costs one
/// Bellman solve plus a pass over the state space.
#[derive(Debug, Clone)]
pub struct LikelihoodContext {
    pub space: StateSpace,
    pub kernels: KernelPair,
    /// `[continue, replace]` counts per state id.
    pub counts: Vec<[u64; 2]>,
    pub n_obs: usize,
    pub vfi: VfiOptions,
}

impl LikelihoodContext {
    pub fn new(panel: &Panel, space: &StateSpace, kernels: KernelPair, vfi: VfiOptions) -> Result<Self> {
        if kernels.size() != space.size() {
            return Err(Error::Config(format!(
                "kernels cover {} states, space has {}",
                kernels.size(),
                space.size()
            )));
        }
        let ids = encode_observations(panel, space)?;
        let mut counts = vec![[0u64; 2]; space.size()];
        for (id, r) in ids.iter().zip(panel.rows()) {
            counts[id.idx()][r.decision as usize] += 1;
        }
        Ok(Self {
            space: space.clone(),
            kernels,
            counts,
            n_obs: panel.len(),
            vfi,
        })
    }

    /// Estimate transitions from `panel` (smoothing `alpha`) and build the context.
    pub fn from_panel(panel: &Panel, space: &StateSpace, alpha: f64, vfi: VfiOptions) -> Result<Self> {
        let kernels = Transitions::estimate(panel, space, alpha)?.kernels(space)?;
        Self::new(panel, space, kernels, vfi)
    }

    pub fn with_vfi(&self, vfi: VfiOptions) -> Self {
        Self { vfi, ..self.clone() }
    }

    pub fn solve(&self, params: &StructuralParams) -> Result<SolveResult> {
        params.check(&self.space)?;
        solve_vfi(&self.space, &self.kernels, params, &self.vfi)
    }

    /// Intercept-only static logit: `-n1 ln p - n0 ln(1 - p)` at `p = n1 / n`.
    pub fn null_nll(&self) -> f64 {
        let n1: u64 = self.counts.iter().map(|c| c[1]).sum();
        let n0: u64 = self.counts.iter().map(|c| c[0]).sum();
        let n = (n0 + n1) as f64;
        let term = |k: u64| if k == 0 { 0.0 } else { -(k as f64) * (k as f64 / n).ln() };
        term(n0) + term(n1)
    }
}

/// `-sum_s sum_d counts[s][d] * log P(d | s)`, accumulated in state order.
pub fn nll_from_solution(counts: &[[u64; 2]], solution: &SolveResult) -> f64 {
    let mut total = 0.0;
    for (s, c) in counts.iter().enumerate() {
        if c[0] > 0 {
            total -= c[0] as f64 * solution.log_prob(s, Action::Continue);
        }
        if c[1] > 0 {
            total -= c[1] as f64 * solution.log_prob(s, Action::Replace);
        }
    }
    total
}

pub fn negative_log_likelihood(ctx: &LikelihoodContext, params: &StructuralParams) -> Result<f64> {
    Ok(nll_from_solution(&ctx.counts, &ctx.solve(params)?))
}
