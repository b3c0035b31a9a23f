//! Experiment configuration, orchestration and report emission.

use crate::calibrate::{calibrate_moments, CalibError};
use crate::chart::{self, fit_chart_png};
use crate::discovery::{run_discovery, DiscoveryConfig, PromptMode, PromptTemplate, Proposer};
use crate::dsl::{parse_model, print_model};
use crate::engine::{generate_noise, moments, simulate, Grid, InitialState};
use crate::io::{normalize, DataSpec, PriceSeries};
use crate::llm::{VlmClient, VlmConfig, VlmProposer};
use crate::market::{derive_seed, run_market, MarketConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;
use thiserror::Error;

pub const VERSION: &str = concat!("v", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] crate::io::IoError),
    #[error("model: {0}")]
    Model(String),
    #[error(transparent)]
    Calibration(#[from] CalibError),
    #[error(transparent)]
    Discovery(#[from] crate::discovery::DiscoveryError),
    #[error(transparent)]
    Market(#[from] crate::market::MarketError),
    #[error(transparent)]
    Vlm(#[from] crate::llm::VlmError),
    #[error(transparent)]
    Chart(#[from] crate::chart::ChartError),
    #[error("writing {path}: {source}")]
    Write {
        path: String,
        source: std::io::Error,
    },
    #[error("reading config: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Calibrate,
    #[default]
    Discover,
    Market,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProposerKind {
    #[default]
    Scripted,
    Vlm,
}

impl std::str::FromStr for ProposerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "scripted" => Ok(ProposerKind::Scripted),
            "vlm" => Ok(ProposerKind::Vlm),
            other => Err(format!("unknown proposer {other:?}")),
        }
    }
}

/// Everything needed to reproduce a run. Calibrate experiments use
/// `discovery.calib` and `discovery.loss`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    /// CSV path or `synthetic:...` spec.
    pub data: String,
    /// Min-max normalize the series before fitting.
    pub normalize: bool,
    /// Model source for calibrate experiments.
    pub model: Option<String>,
    pub proposer: ProposerKind,
    pub prompt_mode: PromptMode,
    pub domain: Option<String>,
    pub trials: usize,
    pub seed: u64,
    pub discovery: DiscoveryConfig,
    pub market: MarketConfig,
    pub vlm: VlmConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            kind: ExperimentKind::Discover,
            data: "synthetic:gbm:0.1,0.15,0".into(),
            normalize: true,
            model: None,
            proposer: ProposerKind::Scripted,
            prompt_mode: PromptMode::Standard,
            domain: None,
            trials: 1,
            seed: 0,
            discovery: DiscoveryConfig::default(),
            market: MarketConfig::default(),
            vlm: VlmConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<ExperimentConfig, ExperimentError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, ExperimentError> {
        let text = std::fs::read_to_string(path).map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        ExperimentConfig::from_json(&text)
    }

    /// Pretty JSON with a trailing newline; parsing and re-serializing
    /// this text reproduces it byte for byte.
    pub fn to_canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    pub fn sha256(&self) -> String {
        let digest = Sha256::digest(self.to_canonical_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Seed used by trial `k`.
    pub fn trial_seed(&self, k: usize) -> u64 {
        derive_seed(self.seed, &[k as u64])
    }

    fn template(&self) -> PromptTemplate {
        PromptTemplate::new(self.prompt_mode, self.domain.clone())
    }

    fn proposer(&self) -> Result<Box<dyn Proposer>, ExperimentError> {
        Ok(match self.proposer {
            ProposerKind::Scripted => Box::new(self.discovery.scripted_proposer()),
            ProposerKind::Vlm => Box::new(VlmProposer {
                client: VlmClient::new(self.vlm.clone())?,
            }),
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub kind: ExperimentKind,
    pub config_sha256: String,
    pub data: String,
    pub price_field: String,
    pub seed: u64,
    pub trial_seeds: Vec<u64>,
    pub version: String,
    pub wall_time_secs: f64,
}

/// Per-trial headline numbers merged into `summary.json`.
#[derive(Debug, Clone, Serialize)]
pub struct TrialSummary {
    pub trial: usize,
    pub seed: u64,
    pub mae: Option<f64>,
    pub n_params: Option<usize>,
    pub historical_variance: Option<f64>,
    pub simulated_variance: Option<f64>,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| ExperimentError::Write {
            path: parent.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, contents).map_err(|source| ExperimentError::Write {
        path: path.display().to_string(),
        source,
    })
}

fn load_series(config: &ExperimentConfig) -> Result<(PriceSeries, Vec<f64>), ExperimentError> {
    let series = DataSpec::parse(&config.data)?.load()?;
    let values = if config.normalize {
        normalize(&series)?.values
    } else {
        series.close.clone()
    };
    Ok((series, values))
}

/// Runs every trial of `config` and writes its outputs under `out`: the
/// canonical `config.json`, per-trial artifacts (directly in `out` for a
/// single trial, else in `trial_<k>/`), `summary.json` and
/// `run_manifest.json`.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<Vec<TrialSummary>, ExperimentError> {
    if config.trials < 1 {
        return Err(ExperimentError::Config("trials must be at least 1".into()));
    }
    let start = Instant::now();
    let (series, values) = load_series(config)?;
    write(&out.join("config.json"), config.to_canonical_json())?;
    let dir_of = |k: usize| -> PathBuf {
        if config.trials == 1 {
            out.to_path_buf()
        } else {
            out.join(format!("trial_{k}"))
        }
    };
    let summaries = (0..config.trials)
        .into_par_iter()
        .map(|k| run_trial(config, k, &series, &values, &dir_of(k)))
        .collect::<Result<Vec<_>, _>>()?;
    write(
        &out.join("summary.json"),
        serde_json::to_string_pretty(&summaries)? + "\n",
    )?;
    let manifest = RunManifest {
        kind: config.kind,
        config_sha256: config.sha256(),
        data: config.data.clone(),
        price_field: "close".into(),
        seed: config.seed,
        trial_seeds: (0..config.trials).map(|k| config.trial_seed(k)).collect(),
        version: VERSION.into(),
        wall_time_secs: start.elapsed().as_secs_f64(),
    };
    write(&out.join("run_manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
    Ok(summaries)
}

fn run_trial(
    config: &ExperimentConfig,
    trial: usize,
    series: &PriceSeries,
    values: &[f64],
    dir: &Path,
) -> Result<TrialSummary, ExperimentError> {
    let seed = config.trial_seed(trial);
    let mut summary = TrialSummary {
        trial,
        seed,
        mae: None,
        n_params: None,
        historical_variance: None,
        simulated_variance: None,
    };
    match config.kind {
        ExperimentKind::Calibrate => {
            let source = config
                .model
                .as_deref()
                .ok_or_else(|| ExperimentError::Config("calibrate needs a model".into()))?;
            let model = parse_model(source).map_err(|e| ExperimentError::Model(e.to_string()))?;
            let mut calib = config.discovery.calib;
            calib.seed = seed;
            let grid = Grid::unit(values.len()).map_err(|e| ExperimentError::Model(e.to_string()))?;
            let noise = generate_noise(calib.seed, calib.n_paths, &grid, 2);
            let target = moments(values).map_err(|e| ExperimentError::Model(e.to_string()))?;
            let x0 = InitialState::new(values[0]);
            let result = calibrate_moments(&model, &target, x0, &grid, &noise, &calib, &config.discovery.loss)?;
            let fitted = result.fitted_model(&model);
            let ens = simulate(&fitted, &result.theta, x0, &grid, &noise)
                .map_err(|e| ExperimentError::Model(e.to_string()))?;
            let shown: Vec<Vec<f64>> = ens
                .values
                .iter()
                .zip(&ens.diverged)
                .filter(|(_, d)| !**d)
                .take(chart::MAX_DRAWN_PATHS)
                .map(|(p, _)| p.clone())
                .collect();
            write(&dir.join("calibration.csv"), result.log_csv())?;
            write(&dir.join("model.sde"), print_model(&fitted) + "\n")?;
            write(&dir.join("result.json"), serde_json::to_string_pretty(&result)? + "\n")?;
            write(&dir.join("chart.png"), fit_chart_png(values, &shown)?)?;
            summary.mae = Some(result.mae);
            summary.n_params = Some(fitted.params.len());
        }
        ExperimentKind::Discover => {
            let mut dc = config.discovery.clone();
            dc.calib.seed = seed;
            let proposer = config.proposer()?;
            let trace = run_discovery(values, proposer.as_ref(), &dc, &config.template(), Some(dir))?;
            trace.write(dir)?;
            summary.mae = Some(trace.best_mae());
            summary.n_params = trace.rounds.last().map(|r| r.n_params());
        }
        ExperimentKind::Market => {
            let mc = MarketConfig {
                seed,
                ..config.market.clone()
            };
            let proposer = config.proposer()?;
            let trace = run_market(
                &series.close,
                &mc,
                &config.discovery,
                &config.template(),
                proposer.as_ref(),
                Some(dir),
            )?;
            trace.write(dir)?;
            summary.historical_variance = Some(trace.historical_variance());
            summary.simulated_variance = Some(trace.simulated_variance());
        }
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_json_round_trips() {
        let mut c = ExperimentConfig::default();
        c.domain = Some("gold, 2023".into());
        c.discovery.calib.epochs = 7;
        let text = c.to_canonical_json();
        let back = ExperimentConfig::from_json(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_canonical_json(), text);
        assert_eq!(c.sha256().len(), 64);
    }

    #[test]
    fn partial_config_fills_defaults() {
        let c = ExperimentConfig::from_json(r#"{"kind": "market", "trials": 2}"#).unwrap();
        assert_eq!(c.kind, ExperimentKind::Market);
        assert_eq!(c.market, MarketConfig::default());
        assert_ne!(c.trial_seed(0), c.trial_seed(1));
    }
}
