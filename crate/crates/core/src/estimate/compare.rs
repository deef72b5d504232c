//! Likelihood ratio tests and information criteria.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Tolerated amount by which a restricted fit may undercut the full fit.
pub const NESTING_SLACK: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

pub fn chi2_sf(x: f64, df: usize) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let d = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    d.sf(x).clamp(0.0, 1.0)
}

/// `LR = 2 (nll_restricted - nll_full)` against `chi2(df)`.
pub fn lr_test(nll_restricted: f64, nll_full: f64, df: usize) -> Result<LrResult> {
    if df == 0 {
        return Err(Error::Config("likelihood ratio test needs df >= 1".into()));
    }
    let diff = nll_restricted - nll_full;
    if diff < -NESTING_SLACK {
        return Err(Error::Nesting {
            restricted: nll_restricted,
            full: nll_full,
        });
    }
    let statistic = 2.0 * diff.max(0.0);
    Ok(LrResult {
        statistic,
        df,
        p_value: chi2_sf(statistic, df),
    })
}

/// `(aic, bic) = (2k + 2 nll, k ln n + 2 nll)`.
pub fn information_criteria(nll: f64, k: usize, n_obs: usize) -> (f64, f64) {
    let k = k as f64;
    (2.0 * k + 2.0 * nll, k * (n_obs as f64).ln() + 2.0 * nll)
}

pub fn pseudo_r2(nll_model: f64, nll_null: f64) -> Result<f64> {
    if nll_null == 0.0 {
        return Err(Error::Division("null log-likelihood is zero".into()));
    }
    Ok(1.0 - nll_model / nll_null)
}
