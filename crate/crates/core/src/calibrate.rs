//! Gradient-descent calibration of model parameters by moment matching.
//!
//! The loss is a weighted mean absolute error between the ensemble's average
//! per-path moments and the target moments, plus an L2 penalty. One noise
//! panel is drawn per run and reused for every evaluation, which makes the
//! loss a deterministic, almost-everywhere differentiable function of the
//! parameters.

use crate::dsl::{validate_model, SdeModel, ValidationReport};
use crate::dual::{Dual, Scalar};
use crate::engine::{
    ensemble_moments, generate_noise, moments, CompiledModel, EngineError, Grid, InitialState,
    MomentVector, NoisePanel, DEFAULT_PATHS,
};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

/// Loss value returned when every simulated path diverges, before adding
/// the squared parameter norm.
pub const DIVERGENCE_PENALTY: f64 = 1e3;

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("model failed validation:\n{0}")]
    Invalid(ValidationReport),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("writing calibration log: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossSpec {
    pub weights: [f64; 4],
    pub l2_strength: f64,
}

impl Default for LossSpec {
    fn default() -> Self {
        LossSpec {
            weights: [0.35, 0.35, 0.15, 0.15],
            l2_strength: 1e-5,
        }
    }
}

impl LossSpec {
    pub fn validate(&self) -> Result<(), CalibError> {
        if self.weights.iter().any(|w| !(*w >= 0.0)) || self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(CalibError::Config(format!(
                "moment weights must be non-negative with positive sum, got {:?}",
                self.weights
            )));
        }
        if !(self.l2_strength >= 0.0) {
            return Err(CalibError::Config("l2_strength must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    /// Dual numbers when the model is smooth, finite differences otherwise.
    #[default]
    Auto,
    Dual,
    FiniteDifference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibConfig {
    pub epochs: usize,
    pub lr0: f64,
    pub lr_decay: f64,
    pub decay_every: usize,
    pub clip_threshold: f64,
    /// Central-difference step relative to `max(|theta_i|, 1)`.
    pub grad_step: f64,
    pub seed: u64,
    pub n_paths: usize,
    pub gradient: GradientMethod,
}

impl Default for CalibConfig {
    fn default() -> Self {
        CalibConfig {
            epochs: 100,
            lr0: 0.05,
            lr_decay: 0.9,
            decay_every: 10,
            clip_threshold: 5.0,
            grad_step: 1e-4,
            seed: 0,
            n_paths: DEFAULT_PATHS,
            gradient: GradientMethod::Auto,
        }
    }
}

impl CalibConfig {
    pub fn validate(&self) -> Result<(), CalibError> {
        let fail = |m: &str| Err(CalibError::Config(m.to_string()));
        if self.epochs < 1 {
            return fail("epochs must be at least 1");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return fail("lr_decay must lie in (0, 1]");
        }
        if !(self.clip_threshold > 0.0) {
            return fail("clip_threshold must be positive");
        }
        if self.decay_every < 1 {
            return fail("decay_every must be at least 1");
        }
        if !(self.grad_step > 0.0) {
            return fail("grad_step must be positive");
        }
        if self.n_paths < 1 {
            return fail("n_paths must be at least 1");
        }
        Ok(())
    }

    /// Staircase schedule `lr0 * lr_decay^floor(epoch / decay_every)`.
    pub fn learning_rate(&self, epoch: usize) -> f64 {
        self.lr0 * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub param_names: Vec<String>,
    pub theta: Vec<f64>,
    pub loss_trace: Vec<f64>,
    pub log: Vec<EpochLog>,
    pub best_loss: f64,
    /// Unweighted mean absolute error over the four moments at `theta`.
    pub mae: f64,
    /// Same error under the training weights.
    pub weighted_mae: f64,
    pub simulated: MomentVector,
    pub target: MomentVector,
    pub n_diverged_epochs: usize,
}

impl CalibrationResult {
    pub fn log_csv(&self) -> String {
        let mut out = String::from("epoch,lr,loss,grad_norm\n");
        for e in &self.log {
            let _ = writeln!(out, "{},{},{},{}", e.epoch, e.lr, e.loss, e.grad_norm);
        }
        out
    }

    pub fn write_log(&self, path: &Path) -> Result<(), CalibError> {
        std::fs::write(path, self.log_csv())?;
        Ok(())
    }

    /// `model` with its parameter values replaced by the fitted ones.
    pub fn fitted_model(&self, model: &SdeModel) -> SdeModel {
        model.with_values(&self.theta)
    }
}

/// `sum_i w_i |sim_i - target_i| / sum_i w_i`.
pub fn moment_mae(sim: &MomentVector, target: &MomentVector, weights: &[f64; 4]) -> f64 {
    weighted_abs_error(&sim.to_array(), &target.to_array(), weights)
}

fn weighted_abs_error<S: Scalar>(sim: &[S; 4], target: &[f64; 4], weights: &[f64; 4]) -> S {
    let total: f64 = weights.iter().sum();
    let mut acc = S::cst(0.0);
    for i in 0..4 {
        acc += (sim[i] - S::cst(target[i])).abs().scale(weights[i]);
    }
    acc.scale(1.0 / total)
}

/// Moment-matching loss on a fixed noise panel.
#[derive(Debug, Clone)]
pub struct Objective<'a> {
    compiled: CompiledModel,
    /// Parameters that appear in an expression; only these are regularized.
    used: Vec<bool>,
    target: MomentVector,
    spec: LossSpec,
    grid: Grid,
    noise: &'a NoisePanel,
    x0: InitialState,
}

impl<'a> Objective<'a> {
    pub fn new(
        model: &SdeModel,
        target: MomentVector,
        spec: LossSpec,
        grid: Grid,
        noise: &'a NoisePanel,
        x0: InitialState,
    ) -> Result<Objective<'a>, EngineError> {
        let used_names = model.used_params();
        Ok(Objective {
            compiled: CompiledModel::new(model)?,
            used: model
                .params
                .iter()
                .map(|p| used_names.contains(&p.name.as_str()))
                .collect(),
            target,
            spec,
            grid,
            noise,
            x0,
        })
    }

    pub fn is_smooth(&self) -> bool {
        self.compiled.is_smooth()
    }

    fn eval<S: Scalar>(&self, params: &[S]) -> Result<(S, Option<MomentVector<S>>), EngineError> {
        let mut norm2 = S::cst(0.0);
        for (p, used) in params.iter().zip(&self.used) {
            if *used {
                norm2 += *p * *p;
            }
        }
        let ens = self.compiled.simulate(params, self.x0, &self.grid, self.noise)?;
        match ensemble_moments(&ens) {
            Ok(m) => {
                let mae = weighted_abs_error(&m.to_array(), &self.target.to_array(), &self.spec.weights);
                Ok((mae + norm2.scale(self.spec.l2_strength), Some(m)))
            }
            Err(EngineError::AllDiverged) => Ok((S::cst(DIVERGENCE_PENALTY) + norm2, None)),
            Err(e) => Err(e),
        }
    }

    pub fn loss(&self, params: &[f64]) -> Result<f64, EngineError> {
        Ok(self.eval(params)?.0)
    }

    /// Simulated moments at `params`; `None` if every path diverged.
    pub fn moments(&self, params: &[f64]) -> Result<Option<MomentVector>, EngineError> {
        Ok(self.eval(params)?.1)
    }

    /// Loss and its exact pathwise gradient via forward-mode dual numbers.
    pub fn loss_and_gradient_dual(&self, params: &[f64]) -> Result<(f64, Vec<f64>), EngineError> {
        let seeded = Dual::seed(params);
        let (l, _) = self.eval(&seeded)?;
        Ok((l.re, l.gradient(params.len())))
    }

    /// Central differences with step `rel_step * max(|theta_i|, 1)`.
    pub fn gradient_fd(&self, params: &[f64], rel_step: f64) -> Result<Vec<f64>, EngineError> {
        let mut grad = Vec::with_capacity(params.len());
        let mut probe = params.to_vec();
        for i in 0..params.len() {
            let h = rel_step * params[i].abs().max(1.0);
            probe[i] = params[i] + h;
            let up = self.loss(&probe)?;
            probe[i] = params[i] - h;
            let down = self.loss(&probe)?;
            probe[i] = params[i];
            grad.push((up - down) / (2.0 * h));
        }
        Ok(grad)
    }

    pub fn loss_and_gradient(
        &self,
        params: &[f64],
        method: GradientMethod,
        rel_step: f64,
    ) -> Result<(f64, Vec<f64>), EngineError> {
        let use_dual = match method {
            GradientMethod::Dual => true,
            GradientMethod::FiniteDifference => false,
            GradientMethod::Auto => self.is_smooth(),
        };
        if use_dual {
            self.loss_and_gradient_dual(params)
        } else {
            Ok((self.loss(params)?, self.gradient_fd(params, rel_step)?))
        }
    }
}

/// Loss of `params` against `target` on a fixed panel.
pub fn loss(
    model: &SdeModel,
    params: &[f64],
    target: &MomentVector,
    spec: &LossSpec,
    noise: &NoisePanel,
    grid: &Grid,
    x0: impl Into<InitialState>,
) -> Result<f64, EngineError> {
    Objective::new(model, *target, *spec, *grid, noise, x0.into())?.loss(params)
}

#[allow(clippy::too_many_arguments)]
pub fn gradient(
    model: &SdeModel,
    params: &[f64],
    target: &MomentVector,
    spec: &LossSpec,
    noise: &NoisePanel,
    grid: &Grid,
    x0: impl Into<InitialState>,
    method: GradientMethod,
    rel_step: f64,
) -> Result<Vec<f64>, EngineError> {
    let obj = Objective::new(model, *target, *spec, *grid, noise, x0.into())?;
    Ok(obj.loss_and_gradient(params, method, rel_step)?.1)
}

/// Rescales `grad` to Euclidean norm at most `threshold`.
pub fn clip_by_norm(grad: &[f64], threshold: f64) -> Vec<f64> {
    let norm = l2_norm(grad);
    if norm <= threshold {
        return grad.to_vec();
    }
    let mut out: Vec<f64> = grad.iter().map(|g| g * threshold / norm).collect();
    while l2_norm(&out) > threshold {
        out.iter_mut().for_each(|g| *g *= 1.0 - f64::EPSILON);
    }
    out
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Fits `model` to the moments of `target_series`.
///
/// Simulation starts at the first observation on the unit grid with one
/// point per observation; see [`calibrate_moments`] for explicit control.
pub fn calibrate(
    model: &SdeModel,
    target_series: &[f64],
    config: &CalibConfig,
    spec: &LossSpec,
) -> Result<CalibrationResult, CalibError> {
    let grid = Grid::unit(target_series.len())?;
    let target = moments(target_series)?;
    let noise = generate_noise(config.seed, config.n_paths, &grid, 2);
    calibrate_moments(model, &target, target_series[0].into(), &grid, &noise, config, spec)
}

/// Gradient descent from the model's declared parameter values: each epoch
/// records the loss at the current point, then steps along the clipped
/// gradient. Returns the lowest-loss point visited.
pub fn calibrate_moments(
    model: &SdeModel,
    target: &MomentVector,
    x0: InitialState,
    grid: &Grid,
    noise: &NoisePanel,
    config: &CalibConfig,
    spec: &LossSpec,
) -> Result<CalibrationResult, CalibError> {
    config.validate()?;
    spec.validate()?;
    let report = validate_model(model);
    if !report.ok {
        return Err(CalibError::Invalid(report));
    }
    let obj = Objective::new(model, *target, *spec, *grid, noise, x0)?;

    let mut theta = model.param_values();
    let mut best = (f64::INFINITY, theta.clone());
    let mut log = Vec::with_capacity(config.epochs);
    let mut n_diverged_epochs = 0;
    for epoch in 0..config.epochs {
        let lr = config.learning_rate(epoch);
        let (loss, mut grad) = obj.loss_and_gradient(&theta, config.gradient, config.grad_step)?;
        if loss >= DIVERGENCE_PENALTY {
            n_diverged_epochs += 1;
        }
        grad.iter_mut().filter(|g| !g.is_finite()).for_each(|g| *g = 0.0);
        let grad_norm = l2_norm(&grad);
        log.push(EpochLog {
            epoch,
            lr,
            loss,
            grad_norm,
        });
        if loss < best.0 {
            best = (loss, theta.clone());
        }
        let step = clip_by_norm(&grad, config.clip_threshold);
        for (t, g) in theta.iter_mut().zip(step) {
            *t -= lr * g;
        }
    }

    let (best_loss, theta) = best;
    let simulated = obj.moments(&theta)?.unwrap_or(MomentVector {
        mean: DIVERGENCE_PENALTY,
        std: DIVERGENCE_PENALTY,
        skewness: DIVERGENCE_PENALTY,
        kurtosis: DIVERGENCE_PENALTY,
    });
    Ok(CalibrationResult {
        param_names: model.params.iter().map(|p| p.name.clone()).collect(),
        loss_trace: log.iter().map(|e| e.loss).collect(),
        mae: moment_mae(&simulated, target, &[1.0; 4]),
        weighted_mae: moment_mae(&simulated, target, &spec.weights),
        theta,
        log,
        best_loss,
        simulated,
        target: *target,
        n_diverged_epochs,
    })
}
