//! Nested fixed point maximum likelihood and inference.

pub mod compare;
pub mod inference;
pub mod likelihood;
pub mod optimizer;
pub mod surface;

use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use compare::{information_criteria, lr_test, pseudo_r2, LrResult};
pub use inference::{asymptotic_se, block_bootstrap, refit_config, AsymptoticSe, BootstrapConfig, BootstrapResult};
pub use likelihood::{negative_log_likelihood, LikelihoodContext};
pub use optimizer::{nelder_mead, OptimizeResult, OptimizerConfig};
pub use surface::{likelihood_surface, GridAxis, SurfaceGrid};

use crate::bellman::StructuralParams;
use crate::error::{Error, Result};
use crate::statespace::Binning;

/// Interaction specification of a fitted model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    /// No neighbor state variables.
    Baseline,
    /// Binary neighbor indicators.
    Spatial,
    /// Neighbor counts binned 0 / 1 / 2+.
    Intensity,
}

impl ModelKind {
    pub fn binning(self) -> Binning {
        match self {
            ModelKind::Baseline => Binning::None,
            ModelKind::Spatial => Binning::Binary,
            ModelKind::Intensity => Binning::Bins012Plus,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Spatial => "spatial",
            ModelKind::Intensity => "intensity",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(ModelKind::Baseline),
            "spatial" => Ok(ModelKind::Spatial),
            "intensity" => Ok(ModelKind::Intensity),
            other => Err(Error::Config(format!("unknown model `{other}`"))),
        }
    }
}

/// Interaction channels held at zero during a fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Restriction {
    #[default]
    Full,
    /// Only the lagged-replacement channel is free.
    LagOnly,
    /// Only the neighbor-failure channel is free.
    FailOnly,
    NoGamma,
}

impl Restriction {
    /// Free-parameter mask over [`StructuralParams::to_vec`].
    pub fn mask(self, params: &StructuralParams) -> Vec<bool> {
        let c = params.theta_age.len() + 2;
        let g = params.gamma_arity();
        let (lag, fail) = match self {
            Restriction::Full => (true, true),
            Restriction::LagOnly => (true, false),
            Restriction::FailOnly => (false, true),
            Restriction::NoGamma => (false, false),
        };
        let mut m = vec![true; c];
        m.extend(std::iter::repeat_n(lag, g));
        m.extend(std::iter::repeat_n(fail, g));
        m
    }

    /// Zero the restricted coefficients.
    pub fn apply(self, params: &StructuralParams) -> StructuralParams {
        let mut p = params.clone();
        if matches!(self, Restriction::FailOnly | Restriction::NoGamma) {
            p.gamma_lag.iter_mut().for_each(|v| *v = 0.0);
        }
        if matches!(self, Restriction::LagOnly | Restriction::NoGamma) {
            p.gamma_fail.iter_mut().for_each(|v| *v = 0.0);
        }
        p
    }
}

/// Default per-coordinate initial simplex steps.
pub fn default_steps(params: &StructuralParams) -> Vec<f64> {
    let mut s = vec![0.005; params.theta_age.len()];
    s.extend([0.5, 0.5]);
    s.extend(std::iter::repeat_n(0.2, 2 * params.gamma_arity()));
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerTrace {
    pub iterations: usize,
    pub evaluations: usize,
    pub restarts: usize,
    pub converged: bool,
    /// Best NLL after each simplex iteration.
    pub nll_trace: Vec<f64>,
}

/// Wall-clock figures, kept apart from the reproducible part of a fit.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FitTiming {
    pub seconds: f64,
    pub seconds_per_eval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationResult {
    pub model: ModelKind,
    pub restriction: Restriction,
    pub names: Vec<String>,
    pub params_hat: StructuralParams,
    /// Mask over `names`; fixed coefficients stay at their start values.
    pub free: Vec<bool>,
    pub nll: f64,
    pub null_nll: f64,
    pub n_obs: usize,
    pub n_states: usize,
    pub k: usize,
    pub aic: f64,
    pub bic: f64,
    pub pseudo_r2: f64,
    /// One entry per name; `None` for fixed coefficients.
    pub se_asymptotic: Option<Vec<Option<f64>>>,
    pub se_asymptotic_error: Option<String>,
    pub se_bootstrap: Option<BootstrapResult>,
    pub optimizer: OptimizerTrace,
    #[serde(skip)]
    pub timing: FitTiming,
}

impl EstimationResult {
    /// Value and asymptotic SE for `name`.
    pub fn coef(&self, name: &str) -> Option<(f64, Option<f64>)> {
        let i = self.names.iter().position(|n| n == name)?;
        let se = self.se_asymptotic.as_ref().and_then(|s| s[i]);
        Some((self.params_hat.to_vec()[i], se))
    }
}

/// Maximize the likelihood over the free coordinates starting from `init`.
/// An exhausted evaluation budget returns the best point with
/// `optimizer.converged == false`.
pub fn fit_mle(
    ctx: &LikelihoodContext,
    model: ModelKind,
    restriction: Restriction,
    init: &StructuralParams,
    cfg: &OptimizerConfig,
) -> Result<EstimationResult> {
    init.check(&ctx.space)?;
    let init = restriction.apply(init);
    let x_full = init.to_vec();
    if x_full.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config("initial parameters must be finite".into()));
    }
    let free = restriction.mask(&init);
    let idx: Vec<usize> = (0..free.len()).filter(|&i| free[i]).collect();
    let all_steps = match &cfg.initial_steps {
        Some(s) if s.len() == x_full.len() => s.clone(),
        Some(s) => {
            return Err(Error::Config(format!(
                "{} initial steps for {} parameters",
                s.len(),
                x_full.len()
            )))
        }
        None => default_steps(&init),
    };
    let steps: Vec<f64> = idx.iter().map(|&i| all_steps[i]).collect();
    let x0: Vec<f64> = idx.iter().map(|&i| x_full[i]).collect();
    let expand = |x: &[f64]| -> StructuralParams {
        let mut full = x_full.clone();
        for (&i, &v) in idx.iter().zip(x) {
            full[i] = v;
        }
        init.with_vec(&full)
    };
    let start = Instant::now();
    let mut first_error: Option<Error> = None;
    let opt = nelder_mead(
        |x| match negative_log_likelihood(ctx, &expand(x)) {
            Ok(v) => v,
            Err(e) => {
                first_error.get_or_insert(e);
                f64::INFINITY
            }
        },
        &x0,
        &steps,
        cfg,
    );
    let seconds = start.elapsed().as_secs_f64();
    if !opt.f.is_finite() {
        return Err(first_error.unwrap_or_else(|| Error::Estimation("no finite likelihood value found".into())));
    }
    let params_hat = expand(&opt.x);
    let k = idx.len();
    let null_nll = ctx.null_nll();
    let (aic, bic) = information_criteria(opt.f, k, ctx.n_obs);
    Ok(EstimationResult {
        model,
        restriction,
        names: params_hat.names(),
        free,
        nll: opt.f,
        null_nll,
        n_obs: ctx.n_obs,
        n_states: ctx.space.size(),
        k,
        aic,
        bic,
        pseudo_r2: pseudo_r2(opt.f, null_nll).unwrap_or(f64::NAN),
        se_asymptotic: None,
        se_asymptotic_error: None,
        se_bootstrap: None,
        optimizer: OptimizerTrace {
            iterations: opt.iterations,
            evaluations: opt.evaluations,
            restarts: opt.restarts,
            converged: opt.converged,
            nll_trace: opt.trace,
        },
        params_hat,
        timing: FitTiming {
            seconds,
            seconds_per_eval: seconds / opt.evaluations.max(1) as f64,
        },
    })
}

/// Fit and attach asymptotic standard errors; a Hessian failure is recorded
/// in `se_asymptotic_error` rather than failing the fit.
pub fn fit_with_se(
    ctx: &LikelihoodContext,
    model: ModelKind,
    restriction: Restriction,
    init: &StructuralParams,
    cfg: &OptimizerConfig,
) -> Result<EstimationResult> {
    let mut fit = fit_mle(ctx, model, restriction, init, cfg)?;
    match asymptotic_se(ctx, &fit.params_hat, &fit.free) {
        Ok(a) => fit.se_asymptotic = Some(a.se),
        Err(e) => fit.se_asymptotic_error = Some(e.to_string()),
    }
    Ok(fit)
}
