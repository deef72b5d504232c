//! Asymptotic and cage-block bootstrap standard errors.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::likelihood::{negative_log_likelihood, LikelihoodContext};
use super::optimizer::OptimizerConfig;
use super::{fit_mle, EstimationResult};
use crate::bellman::{StructuralParams, VfiOptions};
use crate::engine::keyed_rng;
use crate::error::{Error, Result};
use crate::panel::{derive_neighbor_vars, Panel, PanelRow};
use crate::statespace::StateSpace;

/// Relative finite-difference step: `h_i = REL_STEP * max(1, |x_i|)`.
pub const REL_STEP: f64 = 1e-4;

/// Inner tolerance for Hessian evaluations.
pub const HESSIAN_VFI_TOL: f64 = 1e-12;

/// Central-difference Hessian of `f` at `x` with steps `h`.
pub fn hessian(mut f: impl FnMut(&[f64]) -> Result<f64>, x: &[f64], h: &[f64]) -> Result<DMatrix<f64>> {
    let n = x.len();
    let f0 = f(x)?;
    let mut at = |moves: &[(usize, f64)]| -> Result<f64> {
        let mut y = x.to_vec();
        for &(i, d) in moves {
            y[i] += d;
        }
        f(&y)
    };
    let mut hm = DMatrix::zeros(n, n);
    for i in 0..n {
        let fp = at(&[(i, h[i])])?;
        let fm = at(&[(i, -h[i])])?;
        hm[(i, i)] = (fp - 2.0 * f0 + fm) / (h[i] * h[i]);
        for j in 0..i {
            let pp = at(&[(i, h[i]), (j, h[j])])?;
            let pm = at(&[(i, h[i]), (j, -h[j])])?;
            let mp = at(&[(i, -h[i]), (j, h[j])])?;
            let mm = at(&[(i, -h[i]), (j, -h[j])])?;
            let v = (pp - pm - mp + mm) / (4.0 * h[i] * h[j]);
            hm[(i, j)] = v;
            hm[(j, i)] = v;
        }
    }
    Ok(hm)
}

pub fn default_steps(x: &[f64], rel: f64) -> Vec<f64> {
    x.iter().map(|v| rel * v.abs().max(1.0)).collect()
}

/// `sqrt(diag(H^-1))`, requiring `H` positive definite.
pub fn se_from_hessian(h: &DMatrix<f64>) -> Result<(Vec<f64>, Vec<f64>)> {
    let eig = SymmetricEigen::new(h.clone());
    let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    if eigenvalues.iter().any(|&e| !(e > 0.0)) {
        return Err(Error::NotPositiveDefinite { eigenvalues });
    }
    let inv = h
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite {
            eigenvalues: eigenvalues.clone(),
        })?
        .inverse();
    Ok(((0..h.nrows()).map(|i| inv[(i, i)].sqrt()).collect(), eigenvalues))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticSe {
    /// One entry per parameter; `None` for fixed coordinates.
    pub se: Vec<Option<f64>>,
    pub eigenvalues: Vec<f64>,
    pub rel_step: f64,
}

/// Standard errors from the inverse finite-difference Hessian of the NLL
/// over the free coordinates.
pub fn asymptotic_se(ctx: &LikelihoodContext, params_hat: &StructuralParams, free: &[bool]) -> Result<AsymptoticSe> {
    asymptotic_se_with_step(ctx, params_hat, free, REL_STEP)
}

pub fn asymptotic_se_with_step(
    ctx: &LikelihoodContext,
    params_hat: &StructuralParams,
    free: &[bool],
    rel_step: f64,
) -> Result<AsymptoticSe> {
    let full = params_hat.to_vec();
    if free.len() != full.len() {
        return Err(Error::Config("free mask does not match the parameter vector".into()));
    }
    let idx: Vec<usize> = (0..full.len()).filter(|&i| free[i]).collect();
    let tight = ctx.with_vfi(VfiOptions {
        tol: HESSIAN_VFI_TOL,
        max_iter: ctx.vfi.max_iter.max(100_000),
    });
    let x: Vec<f64> = idx.iter().map(|&i| full[i]).collect();
    let h = default_steps(&x, rel_step);
    let hm = hessian(
        |y| {
            let mut v = full.clone();
            for (&i, &val) in idx.iter().zip(y) {
                v[i] = val;
            }
            negative_log_likelihood(&tight, &params_hat.with_vec(&v))
        },
        &x,
        &h,
    )?;
    let (se_free, eigenvalues) = se_from_hessian(&hm)?;
    let mut se = vec![None; full.len()];
    for (&i, s) in idx.iter().zip(se_free) {
        se[i] = Some(s);
    }
    Ok(AsymptoticSe {
        se,
        eigenvalues,
        rel_step,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub seed: u64,
    /// Largest tolerated share of failed replicates.
    pub max_drop_share: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            replicates: 100,
            seed: 7,
            max_drop_share: 0.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReplicate {
    pub index: usize,
    pub n_obs: usize,
    /// Full parameter vector, or `None` if the replicate was dropped.
    pub estimate: Option<Vec<f64>>,
    pub nll: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub seed: u64,
    pub replicates: usize,
    pub dropped: usize,
    pub names: Vec<String>,
    /// Sample standard deviation across kept replicates; `None` for fixed
    /// coordinates.
    pub se: Vec<Option<f64>>,
    pub draws: Vec<BootstrapReplicate>,
}

/// Draw groups with replacement up to the original group count. Each draw
/// becomes a new group with fresh node ids, and neighbor variables are
/// re-derived within the resampled groups.
pub fn resample_groups(panel: &Panel, rng: &mut impl Rng) -> Result<Panel> {
    let mut by_group: BTreeMap<u32, Vec<&PanelRow>> = BTreeMap::new();
    for r in panel.rows() {
        by_group.entry(r.group_id).or_default().push(r);
    }
    let groups: Vec<&Vec<&PanelRow>> = by_group.values().collect();
    let g = groups.len();
    let mut rows = Vec::with_capacity(panel.len());
    let mut next_node = 0u32;
    for new_group in 0..g {
        let src = groups[rng.random_range(0..g)];
        let mut ids: BTreeMap<u32, u32> = BTreeMap::new();
        for r in src {
            let id = *ids.entry(r.node_id).or_insert_with(|| {
                next_node += 1;
                next_node - 1
            });
            rows.push(PanelRow {
                node_id: id,
                group_id: new_group as u32,
                ..**r
            });
        }
    }
    let resampled = Panel::new(rows, panel.neighbors_derived())?;
    if panel.neighbors_derived() {
        derive_neighbor_vars(&resampled, &resampled.topology())
    } else {
        Ok(resampled)
    }
}

/// Initial simplex steps for refits started at `fit`: twice the asymptotic
/// SE where one exists, the model defaults elsewhere.
pub fn refit_steps(fit: &EstimationResult) -> Vec<f64> {
    let mut steps = super::default_steps(&fit.params_hat);
    if let Some(se) = &fit.se_asymptotic {
        for (s, e) in steps.iter_mut().zip(se) {
            if let Some(e) = e.filter(|e| e.is_finite() && *e > 0.0) {
                *s = 2.0 * e;
            }
        }
    }
    steps
}

/// Optimizer settings for refits that start at an existing estimate: SE-sized
/// simplex, tolerance of 1e-3 steps, no restart.
pub fn refit_config(fit: &EstimationResult) -> OptimizerConfig {
    OptimizerConfig {
        x_tol: 1e-3,
        f_tol: 1e-6,
        max_restarts: 0,
        x_tol_in_steps: true,
        initial_steps: Some(refit_steps(fit)),
        ..OptimizerConfig::default()
    }
}

/// Cage-block bootstrap around `fit`. Replicate `b` draws from the stream
/// keyed by `(seed, b)` and refits from `fit.params_hat`, so results do not
/// depend on scheduling.
/// `opt` controls every refit; see [`refit_config`].
pub fn block_bootstrap(
    panel: &Panel,
    space: &StateSpace,
    alpha: f64,
    vfi: VfiOptions,
    fit: &EstimationResult,
    opt: &OptimizerConfig,
    cfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    let n_groups = panel.topology().n_groups();
    if n_groups < 2 {
        return Err(Error::Bootstrap(format!("need at least 2 groups, panel has {n_groups}")));
    }
    if cfg.replicates == 0 {
        return Err(Error::Bootstrap("replicate count must be positive".into()));
    }
    let draws: Vec<BootstrapReplicate> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = keyed_rng(cfg.seed, b as u64);
            let outcome = resample_groups(panel, &mut rng).and_then(|p| {
                let ctx = LikelihoodContext::from_panel(&p, space, alpha, vfi)?;
                let r = fit_mle(&ctx, fit.model, fit.restriction, &fit.params_hat, opt)?;
                if !r.optimizer.converged {
                    return Err(Error::Estimation("replicate fit did not converge".into()));
                }
                Ok((p.len(), r))
            });
            match outcome {
                Ok((n_obs, r)) => BootstrapReplicate {
                    index: b,
                    n_obs,
                    estimate: Some(r.params_hat.to_vec()),
                    nll: Some(r.nll),
                    error: None,
                },
                Err(e) => BootstrapReplicate {
                    index: b,
                    n_obs: 0,
                    estimate: None,
                    nll: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    let kept: Vec<&Vec<f64>> = draws.iter().filter_map(|d| d.estimate.as_ref()).collect();
    let dropped = draws.len() - kept.len();
    if dropped as f64 > cfg.max_drop_share * cfg.replicates as f64 || kept.len() < 2 {
        return Err(Error::Bootstrap(format!(
            "{dropped} of {} replicates failed",
            cfg.replicates
        )));
    }
    let dim = fit.free.len();
    let m = kept.len() as f64;
    let se = (0..dim)
        .map(|i| {
            if !fit.free[i] {
                return None;
            }
            let mean = kept.iter().map(|v| v[i]).sum::<f64>() / m;
            let var = kept.iter().map(|v| (v[i] - mean).powi(2)).sum::<f64>() / (m - 1.0);
            Some(var.sqrt())
        })
        .collect();
    Ok(BootstrapResult {
        seed: cfg.seed,
        replicates: cfg.replicates,
        dropped,
        names: fit.names.clone(),
        se,
        draws,
    })
}
