//! Likelihood surface over the two interaction coefficients with the
//! remaining parameters held at their estimates.

use serde::{Deserialize, Serialize};
use std::io::Write;

use super::likelihood::{negative_log_likelihood, LikelihoodContext};
use crate::bellman::StructuralParams;
use crate::error::{Error, Result};

/// Joint 95% contour for two coefficients: `chi2_2(0.95) / 2 = ln 20`.
pub const CONTOUR_95: f64 = 2.995_732_273_553_991;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl GridAxis {
    /// `n` points centred on `center`, spanning `center +- half_width`.
    pub fn centered(center: f64, half_width: f64, n: usize) -> Self {
        Self {
            lo: center - half_width,
            hi: center + half_width,
            n,
        }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![0.5 * (self.lo + self.hi)];
        }
        let step = (self.hi - self.lo) / (self.n - 1) as f64;
        (0..self.n).map(|i| self.lo + step * i as f64).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceGrid {
    pub gamma_lag: Vec<f64>,
    pub gamma_fail: Vec<f64>,
    /// Row-major over `(gamma_lag, gamma_fail)`; `None` marks a failed solve.
    pub nll: Vec<Option<f64>>,
    pub min_nll: f64,
    /// `(lag index, fail index)` of the minimum cell.
    pub min_cell: (usize, usize),
    pub contour_level: f64,
}

impl SurfaceGrid {
    pub fn delta(&self, i: usize, j: usize) -> Option<f64> {
        self.nll[i * self.gamma_fail.len() + j].map(|v| v - self.min_nll)
    }

    /// CSV with columns `gamma_lag,gamma_fail,delta_nll`; failed cells are empty.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["gamma_lag", "gamma_fail", "delta_nll"])?;
        for (i, gl) in self.gamma_lag.iter().enumerate() {
            for (j, gf) in self.gamma_fail.iter().enumerate() {
                let d = self.delta(i, j).map_or(String::new(), |d| d.to_string());
                w.write_record([gl.to_string(), gf.to_string(), d])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn with_gamma(params: &StructuralParams, lag: f64, fail: f64) -> StructuralParams {
    StructuralParams {
        gamma_lag: vec![lag],
        gamma_fail: vec![fail],
        ..params.clone()
    }
}

/// NLL over the grid relative to its minimum. Requires binary interactions.
pub fn likelihood_surface(
    ctx: &LikelihoodContext,
    params_hat: &StructuralParams,
    lag: &GridAxis,
    fail: &GridAxis,
) -> Result<SurfaceGrid> {
    if params_hat.gamma_arity() != 1 {
        return Err(Error::Config("the surface needs one lag and one fail coefficient".into()));
    }
    let (gl, gf) = (lag.values(), fail.values());
    if gl.is_empty() || gf.is_empty() || gl.iter().chain(&gf).any(|v| !v.is_finite()) {
        return Err(Error::Config("grid axes must be finite and non-empty".into()));
    }
    let mut nll = Vec::with_capacity(gl.len() * gf.len());
    for &a in &gl {
        for &b in &gf {
            nll.push(negative_log_likelihood(ctx, &with_gamma(params_hat, a, b)).ok());
        }
    }
    let (best, min_nll) = nll
        .iter()
        .enumerate()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .fold((0, f64::INFINITY), |acc, (k, v)| if v < acc.1 { (k, v) } else { acc });
    if !min_nll.is_finite() {
        return Err(Error::Estimation("every grid cell failed".into()));
    }
    Ok(SurfaceGrid {
        min_cell: (best / gf.len(), best % gf.len()),
        gamma_lag: gl,
        gamma_fail: gf,
        nll,
        min_nll,
        contour_level: CONTOUR_95,
    })
}

/// NLL at `(lag, fail)` with everything else at `params_hat`, relative to
/// `reference`.
pub fn delta_at(ctx: &LikelihoodContext, params_hat: &StructuralParams, lag: f64, fail: f64, reference: f64) -> Result<f64> {
    Ok(negative_log_likelihood(ctx, &with_gamma(params_hat, lag, fail))? - reference)
}
