//! Brute-force joint solver used to check the group decomposition.
//!
//! A joint problem is a collection of group-level problems. The joint state
//! is the Cartesian product of group states, the joint action is the tuple of
//! group actions, utilities add across groups and the joint kernel is the
//! product of group kernels. The joint logsum is taken over all joint
//! actions. Under those conditions the joint value function equals the sum
//! of the group value functions; an optional cross-group utility term breaks
//! additive separability and with it the identity.
//!
//! The joint solver deliberately works on dense joint matrices and is capped
//! in size.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bellman::{apply_operator, solve_logsum, FlowTables, VfiOptions};
use crate::error::{Error, Result};
use crate::kernel::{Action, ControlledKernel, CsrMatrix, KernelPair};
use crate::statespace::JointSpace;

pub const DEFAULT_MAX_JOINT: usize = 4096;

/// One group's dynamic program with dense per-action kernels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupProblem {
    pub n_states: usize,
    /// `[action][state]`, actions ordered continue, replace.
    pub utility: [Vec<f64>; 2],
    /// `[action]` row-major `n_states x n_states`.
    pub kernels: [Vec<f64>; 2],
}

impl GroupProblem {
    fn check(&self, g: usize) -> Result<()> {
        let n = self.n_states;
        if n == 0 {
            return Err(Error::Config(format!("group {g} has no states")));
        }
        for a in 0..2 {
            if self.utility[a].len() != n || self.kernels[a].len() != n * n {
                return Err(Error::Config(format!("group {g}: table shapes do not match {n} states")));
            }
        }
        Ok(())
    }

    pub fn flows(&self) -> FlowTables {
        FlowTables {
            continue_: self.utility[0].clone(),
            replace: self.utility[1].clone(),
        }
    }

    pub fn kernel_pair(&self) -> Result<KernelPair> {
        Ok(KernelPair {
            continue_: ControlledKernel {
                action: Action::Continue,
                matrix: CsrMatrix::from_dense(self.n_states, &self.kernels[0])?,
            },
            replace: ControlledKernel {
                action: Action::Replace,
                matrix: CsrMatrix::from_dense(self.n_states, &self.kernels[1])?,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointGroupSpec {
    pub groups: Vec<GroupProblem>,
    /// Utility added when every group replaces in the same period. Nonzero
    /// values violate additive separability across groups.
    #[serde(default)]
    pub coupling: f64,
}

impl JointGroupSpec {
    pub fn new(groups: Vec<GroupProblem>) -> Self {
        Self { groups, coupling: 0.0 }
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.n_states).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub vfi: VfiOptions,
    pub max_joint: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            vfi: VfiOptions {
                tol: 1e-12,
                max_iter: 100_000,
            },
            max_joint: DEFAULT_MAX_JOINT,
        }
    }
}

/// Joint problem with materialized dense product kernels.
pub struct JointProblem {
    space: JointSpace,
    n_actions: usize,
    /// `[joint action][state]`.
    utility: Vec<Vec<f64>>,
    /// `[joint action]` row-major `N x N`.
    kernels: Vec<Vec<f64>>,
}

/// Joint action index of per-group actions; group 0 is the slowest digit.
pub fn joint_action_index(actions: &[usize]) -> usize {
    actions.iter().fold(0, |acc, &a| acc * 2 + a)
}

impl JointProblem {
    pub fn build(spec: &JointGroupSpec, max_joint: usize) -> Result<Self> {
        for (g, p) in spec.groups.iter().enumerate() {
            p.check(g)?;
        }
        let space = JointSpace::new(&spec.sizes())?;
        let n = space.size();
        let n_groups = spec.groups.len();
        if n > max_joint {
            return Err(Error::Size { states: n, cap: max_joint });
        }
        let n_actions = 1usize
            .checked_shl(n_groups as u32)
            .filter(|&a| a <= 1 << 20)
            .ok_or(Error::Size { states: n, cap: max_joint })?;
        // memory guard: as many dense entries as a single group at the cap
        let entries = n.saturating_mul(n).saturating_mul(n_actions);
        if entries > max_joint.saturating_mul(max_joint).saturating_mul(2) {
            return Err(Error::Size { states: n, cap: max_joint });
        }
        let coords: Vec<Vec<usize>> = (0..n).map(|s| space.decode(s)).collect();
        let group_actions = |a: usize| -> Vec<usize> {
            (0..n_groups).map(|g| (a >> (n_groups - 1 - g)) & 1).collect()
        };
        let mut utility = Vec::with_capacity(n_actions);
        let mut kernels = Vec::with_capacity(n_actions);
        for a in 0..n_actions {
            let acts = group_actions(a);
            let all_replace = acts.iter().all(|&d| d == 1);
            let u: Vec<f64> = coords
                .iter()
                .map(|c| {
                    let mut total: f64 = (0..n_groups).map(|g| spec.groups[g].utility[acts[g]][c[g]]).sum();
                    if all_replace {
                        total += spec.coupling;
                    }
                    total
                })
                .collect();
            let mut k = vec![0.0; n * n];
            for (s, cs) in coords.iter().enumerate() {
                for (t, ct) in coords.iter().enumerate() {
                    let mut p = 1.0;
                    for g in 0..n_groups {
                        let grp = &spec.groups[g];
                        p *= grp.kernels[acts[g]][cs[g] * grp.n_states + ct[g]];
                    }
                    k[s * n + t] = p;
                }
            }
            utility.push(u);
            kernels.push(k);
        }
        Ok(Self {
            space,
            n_actions,
            utility,
            kernels,
        })
    }

    pub fn space(&self) -> &JointSpace {
        &self.space
    }

    pub fn n_states(&self) -> usize {
        self.space.size()
    }

    /// Choice values at `s` given `ev`.
    fn choice_values(&self, s: usize, ev: &[f64], beta: f64, out: &mut [f64]) {
        let n = self.n_states();
        for a in 0..self.n_actions {
            let row = &self.kernels[a][s * n..(s + 1) * n];
            let cont: f64 = row.iter().zip(ev).map(|(p, v)| p * v).sum();
            out[a] = self.utility[a][s] + beta * cont;
        }
    }

    /// One joint Bellman application; returns the sup-norm change.
    pub fn apply(&self, ev: &[f64], out: &mut [f64], beta: f64) -> f64 {
        let mut vals = vec![0.0; self.n_actions];
        let mut gap = 0.0f64;
        for s in 0..self.n_states() {
            self.choice_values(s, ev, beta, &mut vals);
            let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e = m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            gap = gap.max((e - ev[s]).abs());
            out[s] = e;
        }
        gap
    }

    pub fn solve(&self, beta: f64, opts: &VfiOptions) -> Result<JointSolution> {
        let n = self.n_states();
        let mut ev = vec![0.0; n];
        let mut next = vec![0.0; n];
        for it in 1..=opts.max_iter {
            let gap = self.apply(&ev, &mut next, beta);
            std::mem::swap(&mut ev, &mut next);
            if !gap.is_finite() {
                return Err(Error::Convergence { iterations: it, gap });
            }
            if gap <= opts.tol {
                let mut vals = vec![0.0; self.n_actions];
                let mut policy = Vec::with_capacity(n);
                for s in 0..n {
                    self.choice_values(s, &ev, beta, &mut vals);
                    let best = (0..self.n_actions).fold(0, |b, a| if vals[a] > vals[b] { a } else { b });
                    policy.push(best);
                }
                self.apply(&ev, &mut next, beta);
                return Ok(JointSolution {
                    ev: next,
                    policy,
                    iterations: it,
                });
            }
        }
        Err(Error::Convergence {
            iterations: opts.max_iter,
            gap: f64::NAN,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSolution {
    pub ev: Vec<f64>,
    /// Maximizing joint action per joint state.
    pub policy: Vec<usize>,
    pub iterations: usize,
}

/// Exact logsum VFI on the joint product space.
pub fn solve_joint_oracle(spec: &JointGroupSpec, beta: f64, opts: &OracleOptions) -> Result<JointSolution> {
    JointProblem::build(spec, opts.max_joint)?.solve(beta, &opts.vfi)
}

/// Group-by-group solution mapped back onto the joint space.
#[derive(Debug, Clone, PartialEq)]
pub struct DecomposedSolution {
    pub group_ev: Vec<Vec<f64>>,
    /// Per group, per group state: replace is strictly better.
    pub group_policy: Vec<Vec<usize>>,
}

impl DecomposedSolution {
    pub fn joint_value(&self, space: &JointSpace, s: usize) -> f64 {
        (0..space.n_groups()).map(|g| self.group_ev[g][space.coord(s, g)]).sum()
    }

    pub fn joint_policy(&self, space: &JointSpace, s: usize) -> usize {
        let acts: Vec<usize> = (0..space.n_groups())
            .map(|g| self.group_policy[g][space.coord(s, g)])
            .collect();
        joint_action_index(&acts)
    }
}

pub fn solve_decomposed(spec: &JointGroupSpec, beta: f64, opts: &VfiOptions) -> Result<DecomposedSolution> {
    let mut group_ev = Vec::with_capacity(spec.groups.len());
    let mut group_policy = Vec::with_capacity(spec.groups.len());
    for (g, p) in spec.groups.iter().enumerate() {
        p.check(g)?;
        let r = solve_logsum(&p.flows(), &p.kernel_pair()?, beta, opts)?;
        group_policy.push((0..p.n_states).map(|s| r.policy(s).index()).collect());
        group_ev.push(r.ev);
    }
    Ok(DecomposedSolution { group_ev, group_policy })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub group_sizes: Vec<usize>,
    pub joint_states: usize,
    pub beta: f64,
    pub max_abs_value_gap: f64,
    /// Share of joint states where joint and decomposed argmax actions agree.
    pub policy_agreement: f64,
    pub joint_seconds: f64,
    pub decomposed_seconds: f64,
    pub tol: f64,
    pub passed: bool,
}

/// Compare the joint oracle with the sum of group solutions.
pub fn verify_decomposition(
    spec: &JointGroupSpec,
    beta: f64,
    tol: f64,
    opts: &OracleOptions,
) -> Result<DecompositionReport> {
    let t0 = Instant::now();
    let problem = JointProblem::build(spec, opts.max_joint)?;
    let joint = problem.solve(beta, &opts.vfi)?;
    let joint_seconds = t0.elapsed().as_secs_f64();
    let t1 = Instant::now();
    let dec = solve_decomposed(spec, beta, &opts.vfi)?;
    let decomposed_seconds = t1.elapsed().as_secs_f64();

    let space = problem.space();
    let mut gap = 0.0f64;
    let mut agree = 0usize;
    for s in 0..space.size() {
        gap = gap.max((joint.ev[s] - dec.joint_value(space, s)).abs());
        agree += (joint.policy[s] == dec.joint_policy(space, s)) as usize;
    }
    let agreement = agree as f64 / space.size() as f64;
    Ok(DecompositionReport {
        group_sizes: spec.sizes(),
        joint_states: space.size(),
        beta,
        max_abs_value_gap: gap,
        policy_agreement: agreement,
        joint_seconds,
        decomposed_seconds,
        tol,
        passed: gap <= tol && agree == space.size(),
    })
}

/// Random row-stochastic dense matrix.
fn random_stochastic(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let mut m = Vec::with_capacity(n * n);
    for _ in 0..n {
        let row: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
        let total: f64 = row.iter().sum();
        m.extend(row.iter().map(|x| x / total));
    }
    m
}

pub fn random_group(rng: &mut impl Rng, n_states: usize) -> GroupProblem {
    let u = |rng: &mut dyn rand::RngCore| -> Vec<f64> { (0..n_states).map(|_| rng.random_range(-3.0..1.0)).collect() };
    GroupProblem {
        n_states,
        utility: [u(rng), u(rng)],
        kernels: [random_stochastic(rng, n_states), random_stochastic(rng, n_states)],
    }
}

/// Random conforming instance with `groups` groups of `sizes` states each.
pub fn random_instance(rng: &mut impl Rng, groups: std::ops::RangeInclusive<usize>, sizes: std::ops::RangeInclusive<usize>) -> JointGroupSpec {
    let g = rng.random_range(groups);
    let groups = (0..g)
        .map(|_| {
            let n = rng.random_range(sizes.clone());
            random_group(rng, n)
        })
        .collect();
    JointGroupSpec::new(groups)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchReport {
    pub seed: u64,
    pub instances: usize,
    pub passed: usize,
    pub max_abs_value_gap: f64,
    pub min_policy_agreement: f64,
    pub reports: Vec<DecompositionReport>,
}

/// Verify `n` random conforming instances (2-4 groups, 2-6 states each,
/// beta uniform in [0.5, 0.95]) at value tolerance `tol`.
pub fn verify_batch(n: usize, seed: u64, tol: f64, opts: &OracleOptions) -> Result<BatchReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::with_capacity(n);
    for _ in 0..n {
        let spec = random_instance(&mut rng, 2..=4, 2..=6);
        let beta = rng.random_range(0.5..=0.95);
        reports.push(verify_decomposition(&spec, beta, tol, opts)?);
    }
    Ok(BatchReport {
        seed,
        instances: n,
        passed: reports.iter().filter(|r| r.passed).count(),
        max_abs_value_gap: reports.iter().map(|r| r.max_abs_value_gap).fold(0.0, f64::max),
        min_policy_agreement: reports.iter().map(|r| r.policy_agreement).fold(1.0, f64::min),
        reports,
    })
}

/// Block-diagonal matrix-vector product computed two ways: densely over the
/// full matrix with explicit zero blocks, and block by block on the stacked
/// vector. Blocks are row-major square matrices.
pub fn block_matvec_both(blocks: &[Vec<f64>], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let dims: Vec<usize> = blocks.iter().map(|b| (b.len() as f64).sqrt() as usize).collect();
    let n: usize = dims.iter().sum();
    assert_eq!(v.len(), n, "vector length");
    let mut full = vec![0.0; n * n];
    let mut off = 0;
    for (b, &d) in blocks.iter().zip(&dims) {
        for i in 0..d {
            for j in 0..d {
                full[(off + i) * n + off + j] = b[i * d + j];
            }
        }
        off += d;
    }
    let joint = (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for j in 0..n {
                acc += full[i * n + j] * v[j];
            }
            acc
        })
        .collect();
    let mut stacked = Vec::with_capacity(n);
    let mut off = 0;
    for (b, &d) in blocks.iter().zip(&dims) {
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..d {
                acc += b[i * d + j] * v[off + j];
            }
            stacked.push(acc);
        }
        off += d;
    }
    (joint, stacked)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub groups: usize,
    pub group_size: usize,
    pub joint_states: usize,
    pub decomposed_states: usize,
    /// `None` when the joint problem exceeds the cap.
    pub joint_seconds_per_iter: Option<f64>,
    pub decomposed_seconds_per_iter: f64,
    pub ratio: Option<f64>,
}

/// Best-of-batches seconds per call of `f`.
fn time_per_call(mut f: impl FnMut(), min_seconds: f64) -> f64 {
    let mut best = f64::INFINITY;
    for _ in 0..5 {
        let mut calls = 0usize;
        let t = Instant::now();
        loop {
            f();
            calls += 1;
            let el = t.elapsed().as_secs_f64();
            if el >= min_seconds / 5.0 {
                best = best.min(el / calls as f64);
                break;
            }
        }
    }
    best
}

/// Per-iteration cost of one Bellman application, joint vs decomposed, for
/// 1..=`max_groups` groups of `group_size` states.
pub fn bench(max_groups: usize, group_size: usize, beta: f64, seed: u64, max_joint: usize, min_seconds: f64) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(max_groups);
    for g in 1..=max_groups {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (g as u64) << 32);
        let spec = JointGroupSpec::new((0..g).map(|_| random_group(&mut rng, group_size)).collect());
        let parts: Vec<(FlowTables, KernelPair)> = spec
            .groups
            .iter()
            .map(|p| Ok((p.flows(), p.kernel_pair()?)))
            .collect::<Result<_>>()?;
        let mut evs: Vec<(Vec<f64>, Vec<f64>)> = (0..g).map(|_| (vec![0.5; group_size], vec![0.0; group_size])).collect();
        let dec = time_per_call(
            || {
                for ((flows, k), (ev, out)) in parts.iter().zip(evs.iter_mut()) {
                    std::hint::black_box(apply_operator(flows, k, beta, ev, out));
                }
            },
            min_seconds,
        );
        let joint = match JointProblem::build(&spec, max_joint) {
            Ok(problem) => {
                let ev = vec![0.5; problem.n_states()];
                let mut out = vec![0.0; problem.n_states()];
                Some(time_per_call(
                    || {
                        std::hint::black_box(problem.apply(&ev, &mut out, beta));
                    },
                    min_seconds,
                ))
            }
            Err(Error::Size { .. }) => None,
            Err(e) => return Err(e),
        };
        rows.push(BenchRow {
            groups: g,
            group_size,
            joint_states: group_size.pow(g as u32),
            decomposed_states: g * group_size,
            joint_seconds_per_iter: joint,
            decomposed_seconds_per_iter: dec,
            ratio: joint.map(|j| j / dec),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn two_by_two_block_matvec_identity_is_exact() {
        let mut r = rng(3);
        let blocks = vec![random_stochastic(&mut r, 2), random_stochastic(&mut r, 2)];
        let v: Vec<f64> = (0..4).map(|_| r.random_range(-5.0..5.0)).collect();
        let (joint, stacked) = block_matvec_both(&blocks, &v);
        assert_eq!(joint, stacked);
    }

    #[test]
    fn single_group_joint_equals_group_solve() {
        let spec = JointGroupSpec::new(vec![random_group(&mut rng(1), 5)]);
        let opts = OracleOptions::default();
        let joint = solve_joint_oracle(&spec, 0.9, &opts).unwrap();
        let dec = solve_decomposed(&spec, 0.9, &opts.vfi).unwrap();
        for s in 0..5 {
            assert!((joint.ev[s] - dec.group_ev[0][s]).abs() < 1e-10);
            assert_eq!(joint.policy[s], dec.group_policy[0][s]);
        }
    }

    #[test]
    fn three_group_joint_value_is_sum_of_groups() {
        let mut r = rng(7);
        let spec = JointGroupSpec::new(vec![random_group(&mut r, 4), random_group(&mut r, 5), random_group(&mut r, 6)]);
        let rep = verify_decomposition(&spec, 0.9, 1e-9, &OracleOptions::default()).unwrap();
        assert_eq!(rep.joint_states, 120);
        assert!(rep.max_abs_value_gap <= 1e-9, "{}", rep.max_abs_value_gap);
        assert_eq!(rep.policy_agreement, 1.0);
        assert!(rep.passed);
    }

    #[test]
    fn cross_group_coupling_breaks_the_identity() {
        let mut r = rng(11);
        let mut spec = JointGroupSpec::new(vec![random_group(&mut r, 3), random_group(&mut r, 3)]);
        spec.coupling = 2.0;
        let rep = verify_decomposition(&spec, 0.9, 1e-9, &OracleOptions::default()).unwrap();
        assert!(rep.max_abs_value_gap > 1e-3);
        assert!(!rep.passed);
    }

    #[test]
    fn zero_utility_fixed_point() {
        let mut r = rng(5);
        let mut spec = JointGroupSpec::new(vec![random_group(&mut r, 2), random_group(&mut r, 3)]);
        for g in &mut spec.groups {
            g.utility = [vec![0.0; g.n_states], vec![0.0; g.n_states]];
        }
        let beta = 0.8;
        let opts = OracleOptions::default();
        let joint = solve_joint_oracle(&spec, beta, &opts).unwrap();
        let dec = solve_decomposed(&spec, beta, &opts.vfi).unwrap();
        let per_group = std::f64::consts::LN_2 / (1.0 - beta);
        for v in &joint.ev {
            assert!((v - 2.0 * per_group).abs() < 1e-10);
        }
        for g in &dec.group_ev {
            for v in g {
                assert!((v - per_group).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cap_is_enforced() {
        let mut r = rng(2);
        let spec = JointGroupSpec::new((0..3).map(|_| random_group(&mut r, 6)).collect());
        let opts = OracleOptions {
            max_joint: 100,
            ..Default::default()
        };
        assert!(matches!(
            solve_joint_oracle(&spec, 0.9, &opts),
            Err(Error::Size { states: 216, cap: 100 })
        ));
    }

    #[test]
    fn joint_action_index_is_mixed_radix() {
        assert_eq!(joint_action_index(&[1, 0]), 2);
        assert_eq!(joint_action_index(&[0, 1, 1]), 3);
    }
}
