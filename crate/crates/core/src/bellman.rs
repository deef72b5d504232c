//! Structural parameters, flow utilities and the logsum Bellman solver.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{Action, KernelPair};
use crate::statespace::{StateId, StateSpace, UnitState};

/// Per-period utility parameters plus the (calibrated) discount factor.
///
/// `gamma_lag[k - 1]` and `gamma_fail[k - 1]` apply when the corresponding
/// neighbor level equals `k`, so binary binning has one coefficient per
/// channel and the 0/1/2+ binning has two. Both are empty for the
/// non-spatial model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StructuralParams {
    /// Utility per month of age, one slope per cage.
    pub theta_age: Vec<f64>,
    pub theta_fail: f64,
    pub theta_rc: f64,
    #[serde(default)]
    pub gamma_lag: Vec<f64>,
    #[serde(default)]
    pub gamma_fail: Vec<f64>,
    pub beta: f64,
}

impl StructuralParams {
    /// Spatial (binary) estimates at beta = 0.90.
    pub fn reference_spatial() -> Self {
        Self {
            theta_age: vec![-0.0060, -0.0085, -0.0183],
            theta_fail: -8.7453,
            theta_rc: -9.3352,
            gamma_lag: vec![-0.4314],
            gamma_fail: vec![-0.4184],
            beta: 0.90,
        }
    }

    /// Non-spatial estimates at beta = 0.90.
    pub fn reference_baseline() -> Self {
        Self {
            theta_age: vec![-0.0063, -0.0089, -0.0198],
            theta_fail: -8.7718,
            theta_rc: -9.3384,
            gamma_lag: vec![],
            gamma_fail: vec![],
            beta: 0.90,
        }
    }

    /// Spatial parameters with intensity-binned interaction effects
    /// `(gamma_r1, gamma_r2plus, gamma_f1, gamma_f2plus)`.
    pub fn reference_intensity() -> Self {
        Self {
            gamma_lag: vec![-0.252, -0.887],
            gamma_fail: vec![-0.375, -0.479],
            ..Self::reference_spatial()
        }
    }

    /// Default optimizer start: flat age slopes, gamma at zero.
    pub fn default_start(n_cages: usize, gamma_arity: usize, beta: f64) -> Self {
        Self {
            theta_age: vec![-0.01; n_cages],
            theta_fail: -5.0,
            theta_rc: -8.0,
            gamma_lag: vec![0.0; gamma_arity],
            gamma_fail: vec![0.0; gamma_arity],
            beta,
        }
    }

    /// Number of interaction coefficients per channel.
    pub fn gamma_arity(&self) -> usize {
        self.gamma_lag.len()
    }

    pub fn check(&self, space: &StateSpace) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(Error::Config(format!("discount factor must lie in [0, 1), got {}", self.beta)));
        }
        let cages = space.spec().n_cages as usize;
        if self.theta_age.len() != cages {
            return Err(Error::Config(format!(
                "{} age slopes for {} cages",
                self.theta_age.len(),
                cages
            )));
        }
        let arity = space.levels() - 1;
        if self.gamma_lag.len() != arity || self.gamma_fail.len() != arity {
            return Err(Error::Config(format!(
                "gamma arity ({}, {}) does not match `{}` binning (expected {arity})",
                self.gamma_lag.len(),
                self.gamma_fail.len(),
                space.binning()
            )));
        }
        Ok(())
    }

    /// Free-parameter vector in the order of [`StructuralParams::names`].
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.theta_age.clone();
        v.push(self.theta_fail);
        v.push(self.theta_rc);
        v.extend(&self.gamma_lag);
        v.extend(&self.gamma_fail);
        v
    }

    /// Inverse of [`StructuralParams::to_vec`], keeping this value's shape and beta.
    pub fn with_vec(&self, v: &[f64]) -> Self {
        let c = self.theta_age.len();
        let g = self.gamma_lag.len();
        assert_eq!(v.len(), c + 2 + 2 * g, "parameter vector length");
        Self {
            theta_age: v[..c].to_vec(),
            theta_fail: v[c],
            theta_rc: v[c + 1],
            gamma_lag: v[c + 2..c + 2 + g].to_vec(),
            gamma_fail: v[c + 2 + g..].to_vec(),
            beta: self.beta,
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.theta_age.len()).map(|c| format!("theta_age_{c}")).collect();
        names.push("theta_fail".into());
        names.push("theta_rc".into());
        let g = self.gamma_lag.len();
        let suffix = |k: usize| -> String {
            if g == 1 {
                String::new()
            } else if k + 1 == g {
                format!("_{}plus", k + 1)
            } else {
                format!("_{}", k + 1)
            }
        };
        for k in 0..g {
            names.push(format!("gamma_lag{}", suffix(k)));
        }
        for k in 0..g {
            names.push(format!("gamma_fail{}", suffix(k)));
        }
        names
    }

    /// Utility of `action` in `state`. Does not check the parameter shape.
    #[inline]
    pub fn utility(&self, s: &UnitState, action: Action) -> f64 {
        match action {
            Action::Replace => self.theta_rc,
            Action::Continue => {
                let mut u = self.theta_age[s.cage as usize] * s.age as f64 + self.theta_fail * s.fail as f64;
                if s.nbr_lag > 0 {
                    u += self.gamma_lag[s.nbr_lag as usize - 1];
                }
                if s.nbr_fail > 0 {
                    u += self.gamma_fail[s.nbr_fail as usize - 1];
                }
                u
            }
        }
    }
}

/// Flow utility with shape checks against the state.
pub fn flow_utility(state: &UnitState, action: Action, params: &StructuralParams) -> Result<f64> {
    if state.cage as usize >= params.theta_age.len()
        || state.nbr_lag as usize > params.gamma_lag.len()
        || state.nbr_fail as usize > params.gamma_fail.len()
    {
        return Err(Error::Config(format!("parameters do not cover state {state:?}")));
    }
    Ok(params.utility(state, action))
}

/// Per-action flow utility vectors over a state space.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowTables {
    pub continue_: Vec<f64>,
    pub replace: Vec<f64>,
}

impl FlowTables {
    pub fn build(space: &StateSpace, params: &StructuralParams) -> Result<Self> {
        params.check(space)?;
        let mut continue_ = Vec::with_capacity(space.size());
        let mut replace = Vec::with_capacity(space.size());
        for s in space.states() {
            continue_.push(params.utility(&s, Action::Continue));
            replace.push(params.utility(&s, Action::Replace));
        }
        Ok(Self { continue_, replace })
    }

    /// Add `c` to both actions' utilities.
    pub fn shifted(&self, c: f64) -> Self {
        Self {
            continue_: self.continue_.iter().map(|u| u + c).collect(),
            replace: self.replace.iter().map(|u| u + c).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.continue_.len()
    }

    pub fn is_empty(&self) -> bool {
        self.continue_.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VfiOptions {
    /// Sup-norm tolerance on successive EV iterates.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for VfiOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveResult {
    /// Integrated value per state.
    pub ev: Vec<f64>,
    /// Choice-specific values `u + beta * E[EV']` for continue.
    pub v_continue: Vec<f64>,
    pub v_replace: Vec<f64>,
    pub iterations: usize,
    pub final_sup_norm: f64,
    /// Sup-norm gap after each Bellman application.
    pub gaps: Vec<f64>,
}

#[inline]
pub fn logsumexp2(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + (-(a - b).abs()).exp().ln_1p()
}

impl SolveResult {
    /// `P(replace | s)`.
    #[inline]
    pub fn p_replace(&self, s: usize) -> f64 {
        1.0 / (1.0 + (self.v_continue[s] - self.v_replace[s]).exp())
    }

    #[inline]
    pub fn log_prob(&self, s: usize, action: Action) -> f64 {
        let lse = logsumexp2(self.v_continue[s], self.v_replace[s]);
        match action {
            Action::Continue => self.v_continue[s] - lse,
            Action::Replace => self.v_replace[s] - lse,
        }
    }

    /// Choice probabilities `[continue, replace]` per state.
    pub fn ccp(&self) -> Vec<[f64; 2]> {
        ccp_table(self)
    }

    /// Replacement is the strictly better choice-specific value.
    pub fn policy(&self, s: usize) -> Action {
        if self.v_replace[s] > self.v_continue[s] {
            Action::Replace
        } else {
            Action::Continue
        }
    }

    /// CSV keyed by state id with decoded state columns.
    pub fn write_csv<W: Write>(&self, space: &StateSpace, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "state_id",
            "age",
            "cage",
            "fail",
            "nbr_lag",
            "nbr_fail",
            "ev",
            "v_continue",
            "v_replace",
            "p_replace",
        ])?;
        for (i, s) in space.states().enumerate() {
            w.write_record([
                i.to_string(),
                s.age.to_string(),
                s.cage.to_string(),
                s.fail.to_string(),
                s.nbr_lag.to_string(),
                s.nbr_fail.to_string(),
                self.ev[i].to_string(),
                self.v_continue[i].to_string(),
                self.v_replace[i].to_string(),
                self.p_replace(i).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// `[P(continue | s), P(replace | s)]` from the logit formula.
pub fn ccp_table(result: &SolveResult) -> Vec<[f64; 2]> {
    (0..result.ev.len())
        .map(|s| {
            let d = result.v_continue[s] - result.v_replace[s];
            [1.0 / (1.0 + (-d).exp()), 1.0 / (1.0 + d.exp())]
        })
        .collect()
}

/// Logsum value function iteration on explicit flow tables.
///
/// Jacobi sweeps in state-id order from `EV = 0`. On convergence the choice
/// values are recomputed from the final iterate and `ev` is their logsum, so
/// the returned `ev` and CCPs are mutually consistent.
pub fn solve_logsum(flows: &FlowTables, kernels: &KernelPair, beta: f64, opts: &VfiOptions) -> Result<SolveResult> {
    let n = flows.len();
    if kernels.size() != n || kernels.replace.size() != n {
        return Err(Error::Config(format!(
            "kernel size {} does not match {} flow entries",
            kernels.size(),
            n
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Config("VFI tolerance must be positive".into()));
    }
    if !(0.0..1.0).contains(&beta) {
        return Err(Error::Config(format!("discount factor must lie in [0, 1), got {beta}")));
    }
    let k0 = &kernels.continue_.matrix;
    let k1 = &kernels.replace.matrix;
    let mut ev = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut v0 = vec![0.0; n];
    let mut v1 = vec![0.0; n];
    let mut gaps = Vec::new();
    // assembled kernels repeat rows heavily (replacement forgets the age),
    // so expectations are computed once per distinct row
    let (of0, reps0) = k0.distinct_rows();
    let (of1, reps1) = k1.distinct_rows();
    let mut e0 = vec![0.0; reps0.len()];
    let mut e1 = vec![0.0; reps1.len()];

    let mut sweep = |ev: &[f64], v0: &mut [f64], v1: &mut [f64], out: &mut [f64]| -> f64 {
        for (e, &r) in e0.iter_mut().zip(&reps0) {
            *e = k0.row_dot(r, ev);
        }
        for (e, &r) in e1.iter_mut().zip(&reps1) {
            *e = k1.row_dot(r, ev);
        }
        let mut gap = 0.0f64;
        for s in 0..n {
            let a = flows.continue_[s] + beta * e0[of0[s]];
            let b = flows.replace[s] + beta * e1[of1[s]];
            v0[s] = a;
            v1[s] = b;
            let e = logsumexp2(a, b);
            gap = gap.max((e - ev[s]).abs());
            out[s] = e;
        }
        gap
    };

    if beta == 0.0 {
        // the operator is constant: one application is exact
        let gap = sweep(&ev, &mut v0, &mut v1, &mut next);
        return Ok(SolveResult {
            ev: next,
            v_continue: v0,
            v_replace: v1,
            iterations: 1,
            final_sup_norm: gap,
            gaps: vec![gap],
        });
    }

    for it in 1..=opts.max_iter {
        let gap = sweep(&ev, &mut v0, &mut v1, &mut next);
        std::mem::swap(&mut ev, &mut next);
        gaps.push(gap);
        if !gap.is_finite() {
            return Err(Error::Convergence { iterations: it, gap });
        }
        if gap <= opts.tol {
            sweep(&ev, &mut v0, &mut v1, &mut next);
            return Ok(SolveResult {
                ev: next,
                v_continue: v0,
                v_replace: v1,
                iterations: it,
                final_sup_norm: gap,
                gaps,
            });
        }
    }
    Err(Error::Convergence {
        iterations: opts.max_iter,
        gap: *gaps.last().unwrap_or(&f64::INFINITY),
    })
}

/// One Bellman application `out = T(ev)`; returns the sup-norm change.
pub fn apply_operator(flows: &FlowTables, kernels: &KernelPair, beta: f64, ev: &[f64], out: &mut [f64]) -> f64 {
    let k0 = &kernels.continue_.matrix;
    let k1 = &kernels.replace.matrix;
    let mut gap = 0.0f64;
    for s in 0..flows.len() {
        let a = flows.continue_[s] + beta * k0.row_dot(s, ev);
        let b = flows.replace[s] + beta * k1.row_dot(s, ev);
        let e = logsumexp2(a, b);
        gap = gap.max((e - ev[s]).abs());
        out[s] = e;
    }
    gap
}

/// Solve the per-unit dynamic program for `params` on `space`.
pub fn solve_vfi(
    space: &StateSpace,
    kernels: &KernelPair,
    params: &StructuralParams,
    opts: &VfiOptions,
) -> Result<SolveResult> {
    let flows = FlowTables::build(space, params)?;
    solve_logsum(&flows, kernels, params.beta, opts)
}

/// Look up the state id of an observation-level state.
pub fn state_index(space: &StateSpace, s: &UnitState) -> Result<StateId> {
    space.encode(s)
}
