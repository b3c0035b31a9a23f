//! Euler–Maruyama simulation of model ensembles on pre-generated noise, and
//! the moment statistics used for fitting.
//!
//! Noise is drawn once into a [`NoisePanel`] and reused, so a simulation is a
//! deterministic function of its parameters. All numeric code is generic over
//! [`Scalar`]; running it on [`Dual`](crate::dual::Dual) values yields
//! pathwise parameter derivatives.

use crate::dsl::{CompiledExpr, EvalError, SdeModel, MAX_PARAMS};
use crate::dual::Scalar;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Paths whose state exceeds this magnitude are frozen and flagged.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

pub const DEFAULT_PATHS: usize = 100;
pub const DEFAULT_DT: f64 = 0.01;
pub const DEFAULT_X0: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("series of length {0} is too short; need at least 2 points")]
    TooShort(usize),
    #[error("all paths diverged")]
    AllDiverged,
    #[error(transparent)]
    Unbound(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub t0: f64,
    pub n_steps: usize,
    pub dt: f64,
}

impl Grid {
    pub fn new(t0: f64, n_steps: usize, dt: f64) -> Result<Grid, EngineError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(EngineError::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        if n_steps == 0 {
            return Err(EngineError::InvalidGrid("n_steps must be at least 1".into()));
        }
        Ok(Grid { t0, n_steps, dt })
    }

    /// Grid over `[0, 1]` with one point per observation.
    pub fn unit(n_points: usize) -> Result<Grid, EngineError> {
        if n_points < 2 {
            return Err(EngineError::TooShort(n_points));
        }
        Grid::new(0.0, n_points - 1, 1.0 / (n_points - 1) as f64)
    }

    pub fn time(&self, step: usize) -> f64 {
        self.t0 + step as f64 * self.dt
    }

    pub fn horizon(&self) -> f64 {
        self.n_steps as f64 * self.dt
    }
}

/// Pre-drawn randomness for a simulation.
///
/// Draws come from ChaCha8 seeded with `seed` via `seed_from_u64`; the
/// Brownian increments use stream 0 (path-major, step-minor, driver
/// innermost), jump uniforms stream 1 and jump normals stream 2, each in
/// path-major order. Normals are `rand_distr::StandardNormal`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisePanel {
    pub seed: u64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub n_drivers: usize,
    pub dt: f64,
    brownian: Vec<f64>,
    jump_uniforms: Vec<f64>,
    jump_normals: Vec<f64>,
}

impl NoisePanel {
    #[inline]
    pub fn dw(&self, path: usize, step: usize, driver: usize) -> f64 {
        self.brownian[(path * self.n_steps + step) * self.n_drivers + driver]
    }

    #[inline]
    pub fn jump_uniform(&self, path: usize, step: usize) -> f64 {
        self.jump_uniforms[path * self.n_steps + step]
    }

    #[inline]
    pub fn jump_normal(&self, path: usize, step: usize) -> f64 {
        self.jump_normals[path * self.n_steps + step]
    }

    pub fn brownian(&self) -> &[f64] {
        &self.brownian
    }

    /// Cumulative Brownian motion of one driver at the end of the panel.
    pub fn terminal_w(&self, path: usize, driver: usize) -> f64 {
        (0..self.n_steps).map(|k| self.dw(path, k, driver)).sum()
    }

    /// Panel on a grid `factor` times coarser, driven by the same Brownian
    /// paths: each coarse increment is the sum of `factor` fine ones. Jump
    /// draws are taken from the first fine step of each block.
    pub fn coarsen(&self, factor: usize) -> Result<NoisePanel, EngineError> {
        if factor == 0 || self.n_steps % factor != 0 {
            return Err(EngineError::DimensionMismatch(format!(
                "cannot coarsen {} steps by {factor}",
                self.n_steps
            )));
        }
        let n_steps = self.n_steps / factor;
        let mut brownian = Vec::with_capacity(self.n_paths * n_steps * self.n_drivers);
        let mut jump_uniforms = Vec::with_capacity(self.n_paths * n_steps);
        let mut jump_normals = Vec::with_capacity(self.n_paths * n_steps);
        for p in 0..self.n_paths {
            for k in 0..n_steps {
                for d in 0..self.n_drivers {
                    brownian.push((0..factor).map(|j| self.dw(p, k * factor + j, d)).sum());
                }
                jump_uniforms.push(self.jump_uniform(p, k * factor));
                jump_normals.push(self.jump_normal(p, k * factor));
            }
        }
        Ok(NoisePanel {
            seed: self.seed,
            n_paths: self.n_paths,
            n_steps,
            n_drivers: self.n_drivers,
            dt: self.dt * factor as f64,
            brownian,
            jump_uniforms,
            jump_normals,
        })
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn generate_noise(seed: u64, n_paths: usize, grid: &Grid, n_drivers: usize) -> NoisePanel {
    let n_paths = n_paths.max(1);
    let n_drivers = n_drivers.max(1);
    let n = n_paths * grid.n_steps;
    let sd = grid.dt.sqrt();

    let mut rng = stream(seed, 0);
    let brownian = (0..n * n_drivers)
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let mut rng = stream(seed, 1);
    let jump_uniforms = (0..n).map(|_| rng.gen::<f64>()).collect();
    let mut rng = stream(seed, 2);
    let jump_normals = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

    NoisePanel {
        seed,
        n_paths,
        n_steps: grid.n_steps,
        n_drivers,
        dt: grid.dt,
        brownian,
        jump_uniforms,
        jump_normals,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    pub value: f64,
    /// Starting level of the auxiliary process, if the model has one.
    pub aux: f64,
}

impl InitialState {
    pub fn new(value: f64) -> InitialState {
        InitialState { value, aux: value }
    }

    pub fn with_aux(value: f64, aux: f64) -> InitialState {
        InitialState { value, aux }
    }
}

impl From<f64> for InitialState {
    fn from(value: f64) -> Self {
        InitialState::new(value)
    }
}

/// Simulated paths, `values[path][step]` with `n_steps + 1` points each.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble<S = f64> {
    pub values: Vec<Vec<S>>,
    pub aux: Option<Vec<Vec<S>>>,
    pub diverged: Vec<bool>,
}

pub type PathEnsemble = Ensemble<f64>;

impl<S: Scalar> Ensemble<S> {
    pub fn n_paths(&self) -> usize {
        self.values.len()
    }

    pub fn n_diverged(&self) -> usize {
        self.diverged.iter().filter(|d| **d).count()
    }

    /// Real parts of the value paths.
    pub fn real_values(&self) -> Vec<Vec<f64>> {
        self.values
            .iter()
            .map(|p| p.iter().map(|v| v.re()).collect())
            .collect()
    }

    /// Pointwise mean over non-diverged paths; all paths if every one diverged.
    pub fn mean_path(&self) -> Vec<f64> {
        let live: Vec<&Vec<S>> = self
            .values
            .iter()
            .zip(&self.diverged)
            .filter(|(_, d)| !**d)
            .map(|(p, _)| p)
            .collect();
        let rows = if live.is_empty() {
            self.values.iter().collect()
        } else {
            live
        };
        let len = rows.first().map_or(0, |r| r.len());
        (0..len)
            .map(|k| rows.iter().map(|r| r[k].re()).sum::<f64>() / rows.len() as f64)
            .collect()
    }
}

/// Model expressions resolved against parameter slots.
#[derive(Debug, Clone)]
pub struct CompiledModel {
    equations: Vec<CompiledEquation>,
    n_params: usize,
    n_drivers: usize,
}

#[derive(Debug, Clone)]
struct CompiledEquation {
    drift: CompiledExpr,
    diffusion: Option<(CompiledExpr, usize)>,
    jump: Option<[CompiledExpr; 3]>,
}

impl CompiledModel {
    pub fn new(model: &SdeModel) -> Result<CompiledModel, EngineError> {
        if model.params.len() > MAX_PARAMS {
            return Err(EngineError::DimensionMismatch(format!(
                "{} parameters exceed the limit of {MAX_PARAMS}",
                model.params.len()
            )));
        }
        let equations = model
            .equations
            .iter()
            .take(2)
            .map(|eq| {
                Ok(CompiledEquation {
                    drift: CompiledExpr::compile(&eq.drift, model)?,
                    diffusion: match &eq.diffusion {
                        Some(d) => Some((CompiledExpr::compile(&d.expr, model)?, d.driver - 1)),
                        None => None,
                    },
                    jump: match &eq.jump {
                        Some(j) => Some([
                            CompiledExpr::compile(&j.intensity, model)?,
                            CompiledExpr::compile(&j.mean, model)?,
                            CompiledExpr::compile(&j.std, model)?,
                        ]),
                        None => None,
                    },
                })
            })
            .collect::<Result<Vec<_>, EvalError>>()?;
        Ok(CompiledModel {
            equations,
            n_params: model.params.len(),
            n_drivers: model.n_drivers(),
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn n_drivers(&self) -> usize {
        self.n_drivers
    }

    fn check(&self, n_params: usize, grid: &Grid, noise: &NoisePanel) -> Result<(), EngineError> {
        if n_params != self.n_params {
            return Err(EngineError::DimensionMismatch(format!(
                "model has {} parameters, got {n_params} values",
                self.n_params
            )));
        }
        if noise.n_steps < grid.n_steps {
            return Err(EngineError::DimensionMismatch(format!(
                "noise covers {} steps, grid needs {}",
                noise.n_steps, grid.n_steps
            )));
        }
        if noise.n_drivers < self.n_drivers {
            return Err(EngineError::DimensionMismatch(format!(
                "noise has {} drivers, model needs {}",
                noise.n_drivers, self.n_drivers
            )));
        }
        if (noise.dt - grid.dt).abs() > 1e-12 * grid.dt {
            return Err(EngineError::DimensionMismatch(format!(
                "noise dt {} differs from grid dt {}",
                noise.dt, grid.dt
            )));
        }
        Ok(())
    }

    fn path<S: Scalar>(
        &self,
        params: &[S],
        x0: InitialState,
        grid: &Grid,
        noise: &NoisePanel,
        p: usize,
    ) -> (Vec<S>, Option<Vec<S>>, bool) {
        let two = self.equations.len() > 1;
        let mut v = S::cst(x0.value);
        let mut a = S::cst(x0.aux);
        let mut values = Vec::with_capacity(grid.n_steps + 1);
        let mut aux = two.then(|| Vec::with_capacity(grid.n_steps + 1));
        values.push(v);
        if let Some(aux) = aux.as_mut() {
            aux.push(a);
        }
        let mut diverged = false;
        for k in 0..grid.n_steps {
            if !diverged {
                let t = grid.time(k);
                let mut next = [v, a];
                for (i, eq) in self.equations.iter().enumerate() {
                    let cur = next[i];
                    let mut x = cur + eq.drift.eval(v, a, t, params).scale(grid.dt);
                    if let Some((g, driver)) = &eq.diffusion {
                        x += g.eval(v, a, t, params).scale(noise.dw(p, k, *driver));
                    }
                    if let Some([intensity, mean, std]) = &eq.jump {
                        let prob = (intensity.eval(v, a, t, params).re() * grid.dt).clamp(0.0, 1.0);
                        if noise.jump_uniform(p, k) < prob {
                            x += mean.eval(v, a, t, params)
                                + std.eval(v, a, t, params).scale(noise.jump_normal(p, k));
                        }
                    }
                    next[i] = x;
                }
                let bad = |x: &S| !x.re().is_finite() || x.re().abs() > DIVERGENCE_LIMIT;
                if bad(&next[0]) || (two && bad(&next[1])) {
                    diverged = true;
                } else {
                    v = next[0];
                    a = next[1];
                }
            }
            values.push(v);
            if let Some(aux) = aux.as_mut() {
                aux.push(a);
            }
        }
        (values, aux, diverged)
    }

    /// Euler–Maruyama over `grid` for every path of `noise`.
    ///
    /// A jump fires on step `k` when the step's uniform draw is below
    /// `clamp(intensity * dt, 0, 1)` and adds `mean + std * z`. A path whose
    /// state leaves `[-1e6, 1e6]` or becomes non-finite keeps its last finite
    /// value for the remaining steps and is flagged.
    pub fn simulate<S: Scalar>(
        &self,
        params: &[S],
        x0: InitialState,
        grid: &Grid,
        noise: &NoisePanel,
    ) -> Result<Ensemble<S>, EngineError> {
        self.check(params.len(), grid, noise)?;
        let rows: Vec<(Vec<S>, Option<Vec<S>>, bool)> = (0..noise.n_paths)
            .into_par_iter()
            .map(|p| self.path(params, x0, grid, noise, p))
            .collect();
        let two = self.equations.len() > 1;
        let mut values = Vec::with_capacity(rows.len());
        let mut aux = two.then(|| Vec::with_capacity(rows.len()));
        let mut diverged = Vec::with_capacity(rows.len());
        for (v, a, d) in rows {
            values.push(v);
            if let (Some(all), Some(a)) = (aux.as_mut(), a) {
                all.push(a);
            }
            diverged.push(d);
        }
        Ok(Ensemble {
            values,
            aux,
            diverged,
        })
    }

    /// True when every jump intensity is free of parameters, so pathwise
    /// derivatives exist almost everywhere.
    pub fn is_smooth(&self) -> bool {
        self.equations
            .iter()
            .all(|e| e.jump.as_ref().map_or(true, |j| j[0].is_param_free()))
    }
}

pub fn simulate(
    model: &SdeModel,
    params: &[f64],
    x0: impl Into<InitialState>,
    grid: &Grid,
    noise: &NoisePanel,
) -> Result<PathEnsemble, EngineError> {
    CompiledModel::new(model)?.simulate(params, x0.into(), grid, noise)
}

/// Mean, standard deviation, skewness and (non-excess) kurtosis of a level
/// series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentVector<S = f64> {
    pub mean: S,
    pub std: S,
    pub skewness: S,
    pub kurtosis: S,
}

impl<S: Scalar> MomentVector<S> {
    pub fn to_array(&self) -> [S; 4] {
        [self.mean, self.std, self.skewness, self.kurtosis]
    }

    pub fn from_array(a: [S; 4]) -> Self {
        MomentVector {
            mean: a[0],
            std: a[1],
            skewness: a[2],
            kurtosis: a[3],
        }
    }

    pub fn real(&self) -> MomentVector<f64> {
        MomentVector::from_array(self.to_array().map(|x| x.re()))
    }
}

/// Population moments. A series whose values are all equal has standard
/// deviation, skewness and kurtosis 0.
pub fn moments<S: Scalar>(series: &[S]) -> Result<MomentVector<S>, EngineError> {
    if series.len() < 2 {
        return Err(EngineError::TooShort(series.len()));
    }
    let n = series.len() as f64;
    let mut sum = S::cst(0.0);
    for x in series {
        sum += *x;
    }
    let mean = sum.scale(1.0 / n);
    let first = series[0].re();
    if series.iter().all(|x| x.re() == first) {
        let zero = S::cst(0.0);
        return Ok(MomentVector {
            mean,
            std: zero,
            skewness: zero,
            kurtosis: zero,
        });
    }
    let (mut m2, mut m3, mut m4) = (S::cst(0.0), S::cst(0.0), S::cst(0.0));
    for x in series {
        let d = *x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let var = m2.scale(1.0 / n);
    let std = var.sqrt_clamped();
    Ok(MomentVector {
        mean,
        std,
        skewness: m3.scale(1.0 / n) / (var * std),
        kurtosis: m4.scale(1.0 / n) / (var * var),
    })
}

/// Per-path moments averaged over non-diverged paths, in path order.
pub fn ensemble_moments<S: Scalar>(ens: &Ensemble<S>) -> Result<MomentVector<S>, EngineError> {
    let mut acc = [S::cst(0.0); 4];
    let mut count = 0usize;
    for (path, diverged) in ens.values.iter().zip(&ens.diverged) {
        if *diverged {
            continue;
        }
        let m = moments(path)?.to_array();
        for (a, x) in acc.iter_mut().zip(m) {
            *a += x;
        }
        count += 1;
    }
    if count == 0 {
        return Err(EngineError::AllDiverged);
    }
    Ok(MomentVector::from_array(acc.map(|a| a.scale(1.0 / count as f64))))
}
