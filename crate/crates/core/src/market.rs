//! Virtual market with linear price impact, and the moving-window harness
//! that feeds simulated prices back to model-discovering traders.
//!
//! The market runs on the min-max normalized series with `dt = 1/(n-1)`.
//! Per step, each fundamental realization contributes `kappa/n_real *
//! (V - P)` and the noise group `sigma * dW`, and the price moves by
//! `lambda * (sum(fundamental) * dt + noise)`.

use crate::discovery::{run_discovery, DiscoveryConfig, DiscoveryTrace, PromptTemplate, Proposer};
use crate::dsl::{parse_model, print_model, SdeModel};
use crate::engine::{generate_noise, simulate, Grid, InitialState};
use crate::io::{normalize_values, MinMax};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("invalid market configuration: {0}")]
    Config(String),
    #[error("series of length {len} is too short for {k} windows (need at least {})", 2 * k)]
    TooShort { len: usize, k: usize },
    #[error("window {0}: no trader produced a model and there is no earlier model to reuse")]
    NoModels(usize),
    #[error("{0}")]
    Other(String),
    #[error("writing market report: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketConfig {
    pub kyle_lambda: f64,
    pub noise_sigma: f64,
    /// Demand scale of each fundamental trader group.
    pub kappa: f64,
    pub n_traders: usize,
    pub n_realizations: usize,
    pub windows: usize,
    pub seed: u64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            kyle_lambda: 0.1,
            noise_sigma: 0.1,
            kappa: 1.0,
            n_traders: 3,
            n_realizations: 10,
            windows: 5,
            seed: 0,
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<(), MarketError> {
        let fail = |m: &str| Err(MarketError::Config(m.to_string()));
        if !(self.kyle_lambda > 0.0) {
            return fail("kyle_lambda must be positive");
        }
        if !(self.noise_sigma >= 0.0) {
            return fail("noise_sigma must be non-negative");
        }
        if !(self.kappa >= 0.0) {
            return fail("kappa must be non-negative");
        }
        if self.n_realizations < 1 || self.windows < 1 {
            return fail("n_realizations and windows must be at least 1");
        }
        Ok(())
    }
}

/// `kappa * (V - P)`.
pub fn fundamental_demand(v: f64, p: f64, kappa: f64) -> f64 {
    kappa * (v - p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemandComponents {
    /// One entry per (trader, realization), trader-major.
    pub fundamental: Vec<f64>,
    /// Noise-group increment `sigma * dW`.
    pub noise: f64,
    pub total: f64,
}

impl DemandComponents {
    pub fn new(fundamental: Vec<f64>, noise: f64) -> DemandComponents {
        let total = fundamental_total(&fundamental) + noise;
        DemandComponents {
            fundamental,
            noise,
            total,
        }
    }

    pub fn fundamental_total(&self) -> f64 {
        fundamental_total(&self.fundamental)
    }
}

fn fundamental_total(f: &[f64]) -> f64 {
    f.iter().fold(0.0, |acc, x| acc + x)
}

/// `P + lambda * (sum(fundamental) * dt + noise)`.
pub fn step_price(p: f64, components: &DemandComponents, lambda: f64, dt: f64) -> f64 {
    p + lambda * (components.fundamental_total() * dt + components.noise)
}

/// `k` contiguous sections of equal length, the remainder going to the last.
pub fn split_windows(series: &[f64], k: usize) -> Result<Vec<Vec<f64>>, MarketError> {
    if k == 0 || series.len() < 2 * k {
        return Err(MarketError::TooShort { len: series.len(), k });
    }
    let base = series.len() / k;
    Ok((0..k)
        .map(|i| {
            let end = if i + 1 == k { series.len() } else { (i + 1) * base };
            series[i * base..end].to_vec()
        })
        .collect())
}

/// Fundamental-value belief of one trader group over a window: each
/// realization is a path with one value per step.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub kappa: f64,
    pub realizations: Vec<Vec<f64>>,
}

/// Integrates the price from `p0` over `noise_dw.len()` steps.
pub fn integrate_prices(
    p0: f64,
    beliefs: &[Belief],
    noise_dw: &[f64],
    lambda: f64,
    sigma: f64,
    dt: f64,
) -> (Vec<f64>, Vec<DemandComponents>) {
    let mut prices = Vec::with_capacity(noise_dw.len() + 1);
    let mut demands = Vec::with_capacity(noise_dw.len());
    let mut p = p0;
    prices.push(p);
    for (k, dw) in noise_dw.iter().enumerate() {
        let mut fundamental = Vec::new();
        for b in beliefs {
            let per = b.kappa / b.realizations.len() as f64;
            fundamental.extend(b.realizations.iter().map(|path| fundamental_demand(path[k], p, per)));
        }
        let comp = DemandComponents::new(fundamental, sigma * dw);
        p = step_price(p, &comp, lambda, dt);
        prices.push(p);
        demands.push(comp);
    }
    (prices, demands)
}

/// splitmix64 finalizer over `base` and `parts`.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mix = |mut z: u64| {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    };
    parts.iter().fold(mix(base), |acc, p| mix(acc ^ mix(*p)))
}

#[derive(Debug, Clone)]
pub struct TraderWindow {
    pub trader: usize,
    /// Model used for this window's beliefs.
    pub model: SdeModel,
    pub discovery: Option<DiscoveryTrace>,
    pub failure: Option<String>,
    /// Reused from the previous window after a failure.
    pub reused: bool,
}

#[derive(Debug, Clone)]
pub struct WindowRecord {
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub traders: Vec<TraderWindow>,
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub window: usize,
    pub price: f64,
    pub q_fund_total: f64,
    pub q_noise: f64,
}

#[derive(Debug, Clone)]
pub struct MarketTrace {
    /// Normalized historical series.
    pub history: Vec<f64>,
    pub transform: MinMax,
    pub prices: Vec<f64>,
    pub steps: Vec<StepRecord>,
    /// Section start indices followed by the series length.
    pub boundaries: Vec<usize>,
    pub windows: Vec<WindowRecord>,
}

pub fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n
}

#[derive(Serialize)]
struct TraderSummary {
    trader: usize,
    model: String,
    n_params: usize,
    mae: Option<f64>,
    failure: Option<String>,
    reused: bool,
}

#[derive(Serialize)]
struct WindowSummary {
    window: usize,
    start: usize,
    end: usize,
    historical_variance: f64,
    simulated_variance: f64,
    fallback: bool,
    traders: Vec<TraderSummary>,
}

#[derive(Serialize)]
struct MarketSummary {
    historical_variance: f64,
    simulated_variance: f64,
    n_steps: usize,
    windows: Vec<WindowSummary>,
}

impl MarketTrace {
    pub fn historical_variance(&self) -> f64 {
        variance(&self.history)
    }

    pub fn simulated_variance(&self) -> f64 {
        variance(&self.prices)
    }

    /// Simulated prices mapped back to the series' original units.
    pub fn denormalized_prices(&self) -> Vec<f64> {
        self.prices.iter().map(|p| self.transform.invert(*p)).collect()
    }

    pub fn csv(&self) -> String {
        let mut out = String::from("step,window,P,Q_fund_total,Q_noise\n");
        for s in &self.steps {
            let _ = writeln!(out, "{},{},{},{},{}", s.step, s.window, s.price, s.q_fund_total, s.q_noise);
        }
        out
    }

    pub fn summary_json(&self) -> String {
        let windows = self
            .windows
            .iter()
            .map(|w| WindowSummary {
                window: w.index,
                start: w.start,
                end: w.end,
                historical_variance: variance(&self.history[w.start..w.end]),
                simulated_variance: variance(&self.prices[w.start..w.end]),
                fallback: w.fallback,
                traders: w
                    .traders
                    .iter()
                    .map(|t| TraderSummary {
                        trader: t.trader,
                        model: print_model(&t.model),
                        n_params: t.model.params.len(),
                        mae: t.discovery.as_ref().map(|d| d.best_mae()),
                        failure: t.failure.clone(),
                        reused: t.reused,
                    })
                    .collect(),
            })
            .collect();
        let s = MarketSummary {
            historical_variance: self.historical_variance(),
            simulated_variance: self.simulated_variance(),
            n_steps: self.steps.len(),
            windows,
        };
        serde_json::to_string_pretty(&s).expect("summary serializes") + "\n"
    }

    /// Writes `market_trace.csv`, `summary.json`, `comparison.png` and each
    /// trader's discovery trace under `window_<i>/trader_<k>/`.
    pub fn write(&self, dir: &Path) -> Result<(), MarketError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("market_trace.csv"), self.csv())?;
        std::fs::write(dir.join("summary.json"), self.summary_json())?;
        let png = crate::chart::market_chart_png(&self.history, &self.prices, &self.boundaries)
            .map_err(|e| MarketError::Other(e.to_string()))?;
        std::fs::write(dir.join("comparison.png"), png)?;
        for w in &self.windows {
            for t in &w.traders {
                if let Some(d) = &t.discovery {
                    d.write(&dir.join(format!("window_{}", w.index)).join(format!("trader_{}", t.trader)))
                        .map_err(|e| MarketError::Other(e.to_string()))?;
                }
            }
        }
        Ok(())
    }
}

/// A fitted trader model together with the units it was fitted in.
#[derive(Debug, Clone)]
struct Fitted {
    model: SdeModel,
    scale: MinMax,
    /// Time step of the fitted section in its own normalized time.
    dt: f64,
    /// Index in the full series where the fitted section starts.
    origin: usize,
}

/// Runs the moving-window experiment on `series` (any units; it is min-max
/// normalized first). Window 1's traders fit the historical first section;
/// window `i > 1`'s traders fit the simulated prices of window `i - 1`.
pub fn run_market(
    series: &[f64],
    config: &MarketConfig,
    discovery: &DiscoveryConfig,
    template: &PromptTemplate,
    proposer: &dyn Proposer,
    trace_dir: Option<&Path>,
) -> Result<MarketTrace, MarketError> {
    config.validate()?;
    let (history, transform) = normalize_values(series).map_err(|e| MarketError::Other(e.to_string()))?;
    let sections = split_windows(&history, config.windows)?;
    let mut boundaries = vec![0];
    for s in &sections {
        boundaries.push(boundaries.last().unwrap() + s.len());
    }
    let n = history.len();
    let dt = 1.0 / (n - 1) as f64;
    let market_grid = Grid::new(0.0, n - 1, dt).map_err(|e| MarketError::Other(e.to_string()))?;
    let market_noise = generate_noise(derive_seed(config.seed, &[0]), 1, &market_grid, 1);
    let dws: Vec<f64> = (0..n - 1).map(|k| market_noise.dw(0, k, 0)).collect();

    let mut prices = vec![history[0]];
    let mut steps = Vec::with_capacity(n - 1);
    let mut windows = Vec::with_capacity(config.windows);
    let mut previous: Vec<Option<Fitted>> = vec![None; config.n_traders];

    for w in 0..config.windows {
        let (start, end) = (boundaries[w], boundaries[w + 1]);
        // Fitting data: historical section 1, then the previous window's prices.
        let (fit_start, fit_data) = if w == 0 {
            (start, history[start..end].to_vec())
        } else {
            let (ps, pe) = (boundaries[w - 1], boundaries[w]);
            (ps, prices[ps..pe].to_vec())
        };
        let results: Vec<Result<(Fitted, DiscoveryTrace), String>> = (0..config.n_traders)
            .into_par_iter()
            .map(|k| {
                let (y, scale) = normalize_values(&fit_data).map_err(|e| e.to_string())?;
                let mut dc = discovery.clone();
                dc.calib.seed = derive_seed(config.seed, &[1, w as u64, k as u64]);
                let dir = trace_dir.map(|d| d.join(format!("window_{}", w + 1)).join(format!("trader_{k}")));
                let trace = run_discovery(&y, proposer, &dc, template, dir.as_deref()).map_err(|e| e.to_string())?;
                let fdt = 1.0 / (y.len() - 1) as f64;
                Ok((
                    Fitted {
                        model: trace.final_model().clone(),
                        scale,
                        dt: fdt,
                        origin: fit_start,
                    },
                    trace,
                ))
            })
            .collect();

        let mut traders = Vec::with_capacity(config.n_traders);
        let mut active: Vec<Option<Fitted>> = Vec::with_capacity(config.n_traders);
        for (k, r) in results.into_iter().enumerate() {
            match r {
                Ok((fit, trace)) => {
                    traders.push(TraderWindow {
                        trader: k,
                        model: fit.model.clone(),
                        discovery: Some(trace),
                        failure: None,
                        reused: false,
                    });
                    active.push(Some(fit));
                }
                Err(e) => {
                    let prev = previous[k].clone();
                    traders.push(TraderWindow {
                        trader: k,
                        model: prev.as_ref().map(|p| p.model.clone()).unwrap_or_else(|| {
                            parse_model(&discovery.start_model).unwrap_or_else(|_| SdeModel::gbm(0.1, 0.1))
                        }),
                        discovery: None,
                        failure: Some(e),
                        reused: prev.is_some(),
                    });
                    active.push(prev);
                }
            }
        }
        let fallback = config.n_traders > 0 && traders.iter().all(|t| t.failure.is_some());
        if fallback && active.iter().all(Option::is_none) {
            return Err(MarketError::NoModels(w + 1));
        }

        // Beliefs over this window, in price units of the normalized series.
        let n_steps = if w + 1 == config.windows { end - start - 1 } else { end - start };
        let beliefs: Vec<Belief> = active
            .iter()
            .enumerate()
            .filter_map(|(k, f)| f.as_ref().map(|f| (k, f)))
            .map(|(k, f)| belief(f, start, prices[start], n_steps, config, w, k))
            .collect::<Result<_, _>>()?;

        let (path, demands) = integrate_prices(
            prices[start],
            &beliefs,
            &dws[start..start + n_steps],
            config.kyle_lambda,
            config.noise_sigma,
            dt,
        );
        for (i, (p, d)) in path[1..].iter().zip(&demands).enumerate() {
            steps.push(StepRecord {
                step: start + i + 1,
                window: w + 1,
                price: *p,
                q_fund_total: d.fundamental_total(),
                q_noise: d.noise,
            });
        }
        prices.extend_from_slice(&path[1..]);
        for (slot, f) in previous.iter_mut().zip(active) {
            if f.is_some() {
                *slot = f;
            }
        }
        windows.push(WindowRecord {
            index: w + 1,
            start,
            end,
            traders,
            fallback,
        });
    }

    Ok(MarketTrace {
        history,
        transform,
        prices,
        steps,
        boundaries,
        windows,
    })
}

/// Simulates a trader's realizations over a window starting at index
/// `start` with price `p_start`, continuing the model's own time axis.
fn belief(
    f: &Fitted,
    start: usize,
    p_start: f64,
    n_steps: usize,
    config: &MarketConfig,
    window: usize,
    trader: usize,
) -> Result<Belief, MarketError> {
    let t0 = (start - f.origin) as f64 * f.dt;
    let grid = Grid::new(t0, n_steps.max(1), f.dt).map_err(|e| MarketError::Other(e.to_string()))?;
    let noise = generate_noise(
        derive_seed(config.seed, &[2, window as u64, trader as u64]),
        config.n_realizations,
        &grid,
        2,
    );
    let x0 = InitialState::new(f.scale.apply(p_start));
    let ens = simulate(&f.model, &f.model.param_values(), x0, &grid, &noise)
        .map_err(|e| MarketError::Other(e.to_string()))?;
    let paths: Vec<Vec<f64>> = ens
        .values
        .iter()
        .zip(&ens.diverged)
        .filter(|(_, d)| !**d)
        .map(|(p, _)| p.iter().map(|v| f.scale.invert(*v)).collect())
        .collect();
    if paths.is_empty() {
        return Err(MarketError::Other(format!(
            "window {}: every realization of trader {trader} diverged",
            window + 1
        )));
    }
    Ok(Belief {
        kappa: config.kappa,
        realizations: paths,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demand_and_step_examples() {
        assert_eq!(fundamental_demand(1.0, 1.0, 1.0), 0.0);
        assert!((fundamental_demand(1.2, 1.0, 1.0) - 0.2).abs() < 1e-15);
        assert_eq!(fundamental_demand(5.0, 1.0, 0.0), 0.0);
        let zero = DemandComponents::new(vec![0.0, 0.0], 0.0);
        assert_eq!(step_price(1.3, &zero, 0.1, 0.01), 1.3);
        let one = DemandComponents::new(vec![fundamental_demand(1.2, 1.0, 1.0)], 0.0);
        assert!((step_price(1.0, &one, 0.1, 0.01) - 1.0002).abs() < 1e-15);
    }

    #[test]
    fn windows_split() {
        let s: Vec<f64> = (0..250).map(f64::from).collect();
        let w = split_windows(&s, 5).unwrap();
        assert!(w.iter().all(|x| x.len() == 50));
        let s: Vec<f64> = (0..252).map(f64::from).collect();
        let w = split_windows(&s, 5).unwrap();
        assert_eq!(w.iter().map(Vec::len).collect::<Vec<_>>(), vec![50, 50, 50, 50, 52]);
        assert_eq!(w.concat(), s);
        assert!(matches!(split_windows(&[0.0; 8], 5), Err(MarketError::TooShort { .. })));
    }

    #[test]
    fn total_is_sum_of_components() {
        let d = DemandComponents::new(vec![0.1, -0.3, 0.25], 0.07);
        assert_eq!(d.total, ((0.0 + 0.1) + -0.3 + 0.25) + 0.07);
    }

    #[test]
    fn seeds_differ_by_part() {
        let a = derive_seed(0, &[1, 0, 0]);
        assert_ne!(a, derive_seed(0, &[1, 0, 1]));
        assert_ne!(a, derive_seed(1, &[1, 0, 0]));
        assert_eq!(a, derive_seed(0, &[1, 0, 0]));
    }
}
