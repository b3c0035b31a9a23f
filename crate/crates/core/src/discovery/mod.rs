//! Critique/build/calibrate rounds that grow an SDE model from a starting
//! GBM, with the proposer behind a trait so scripted and model-backed
//! proposers are interchangeable.

pub mod diagnostics;
pub mod scripted;

pub use diagnostics::{residual_diagnostics, Diagnostics, Thresholds};
pub use scripted::{scripted_propose, ScriptedProposer};

use crate::calibrate::{calibrate_moments, CalibConfig, CalibrationResult, LossSpec};
use crate::chart::{self, fit_chart_png, ChartError};
use crate::dsl::{parse_model, print_model, validate_model, SdeModel};
use crate::engine::{ensemble_moments, generate_noise, moments, CompiledModel, EngineError, Grid, InitialState};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

pub const CRITIC_PROMPT: &str = include_str!("../../prompts/critic.txt");
pub const BUILDER_PROMPT: &str = include_str!("../../prompts/builder.txt");
pub const GRAMMAR_REFERENCE: &str = include_str!("../../prompts/grammar.txt");
pub const PARSIMONY_CLAUSE: &str = include_str!("../../prompts/parsimonious.txt");
pub const DOMAIN_PROMPT: &str = include_str!("../../prompts/domain.txt");

pub const DEFAULT_START_MODEL: &str = "param mu = 0.1\nparam sigma = 0.1\ndV = (mu*V) dt + (sigma*V) dW";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    #[default]
    Standard,
    Parsimonious,
}

impl std::str::FromStr for PromptMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "standard" => Ok(PromptMode::Standard),
            "parsimonious" => Ok(PromptMode::Parsimonious),
            other => Err(format!("unknown prompt mode {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub critic_instruction: String,
    pub builder_instruction: String,
    pub mode: PromptMode,
    /// Asset and period description, e.g. "gold, 2023".
    pub domain_context: Option<String>,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        PromptTemplate::new(PromptMode::Standard, None)
    }
}

impl PromptTemplate {
    pub fn new(mode: PromptMode, domain_context: Option<String>) -> PromptTemplate {
        PromptTemplate {
            critic_instruction: CRITIC_PROMPT.trim_end().to_string(),
            builder_instruction: BUILDER_PROMPT.trim_end().to_string(),
            mode,
            domain_context,
        }
    }

    fn decorate(&self, base: &str) -> String {
        let mut out = base.to_string();
        if self.mode == PromptMode::Parsimonious {
            out.push('\n');
            out.push_str(PARSIMONY_CLAUSE.trim_end());
        }
        if let Some(ctx) = &self.domain_context {
            out.push('\n');
            out.push_str(&DOMAIN_PROMPT.trim_end().replace("{context}", ctx));
        }
        out
    }

    pub fn critic_text(&self) -> String {
        self.decorate(&self.critic_instruction)
    }

    /// Builder instruction followed by the model grammar reference.
    pub fn builder_text(&self) -> String {
        format!("{}\n\n{}", self.decorate(&self.builder_instruction), GRAMMAR_REFERENCE.trim_end())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Critique {
    pub text: String,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProposal {
    pub dsl_source: String,
    pub rationale: String,
}

#[derive(Debug, Error)]
pub enum ProposerError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("could not extract a model: {0}")]
    Extraction(String),
    #[error("empty reply")]
    Empty,
    #[error("no model history")]
    EmptyHistory,
    #[error("{0}")]
    Other(String),
}

/// What a proposer sees in one round.
pub struct RoundContext<'a> {
    pub round: usize,
    /// Fitted models of the successful rounds so far, oldest first.
    pub history: &'a [SdeModel],
    /// Best fit so far; the chart and diagnostics describe this model.
    pub reference: &'a SdeModel,
    pub diagnostics: &'a Diagnostics,
    pub template: &'a PromptTemplate,
    pub chart_png: &'a [u8],
    /// Directory for audit files, when the run is persisted.
    pub trace_dir: Option<&'a Path>,
}

pub trait Proposer: Send + Sync {
    fn critique(&self, ctx: &RoundContext) -> Result<String, ProposerError>;
    fn build(&self, ctx: &RoundContext, critique: &Critique) -> Result<ModelProposal, ProposerError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DiscoveryConfig {
    pub rounds: usize,
    pub start_model: String,
    pub calib: CalibConfig,
    pub loss: LossSpec,
    pub thresholds: Thresholds,
    pub parsimony_tolerance: f64,
}

impl Default for DiscoveryConfig {
    fn default() -> Self {
        DiscoveryConfig {
            rounds: 5,
            start_model: DEFAULT_START_MODEL.to_string(),
            calib: CalibConfig::default(),
            loss: LossSpec::default(),
            thresholds: Thresholds::default(),
            parsimony_tolerance: 1e-3,
        }
    }
}

impl DiscoveryConfig {
    pub fn scripted_proposer(&self) -> ScriptedProposer {
        ScriptedProposer {
            thresholds: self.thresholds,
            parsimony_tolerance: self.parsimony_tolerance,
        }
    }
}

#[derive(Debug, Error)]
pub enum DiscoveryError {
    #[error("rounds must be at least 1")]
    NoRounds,
    #[error("dataset needs at least 2 finite points")]
    Dataset,
    #[error("starting model: {0}")]
    StartModel(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Chart(#[from] ChartError),
    #[error("writing trace: {0}")]
    Io(#[from] std::io::Error),
    #[error("encoding trace: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone)]
pub struct RoundRecord {
    pub round: usize,
    /// Fitted model, or the carried-forward best model when the round failed.
    pub model: SdeModel,
    pub critique: Option<Critique>,
    pub proposal: Option<ModelProposal>,
    pub calibration: Option<CalibrationResult>,
    pub mae: Option<f64>,
    pub best_mae: f64,
    pub failure: Option<String>,
    pub mean_path: Vec<f64>,
    /// Up to ten fitted paths, as drawn on the chart.
    pub display_paths: Vec<Vec<f64>>,
    pub chart_png: Vec<u8>,
}

impl RoundRecord {
    pub fn failed(&self) -> bool {
        self.failure.is_some()
    }

    pub fn n_params(&self) -> usize {
        self.model.params.len()
    }
}

#[derive(Debug, Clone)]
pub struct DiscoveryTrace {
    pub dataset: Vec<f64>,
    pub rounds: Vec<RoundRecord>,
    pub best_round: usize,
}

#[derive(Serialize)]
struct RoundSummary<'a> {
    round: usize,
    mae: Option<f64>,
    weighted_mae: Option<f64>,
    best_mae: f64,
    n_params: usize,
    failed: bool,
    failure: Option<&'a str>,
    model: String,
    critique: Option<&'a str>,
    rationale: Option<&'a str>,
}

#[derive(Serialize)]
struct TraceSummary<'a> {
    rounds: Vec<RoundSummary<'a>>,
    failure_count: usize,
    best_round: usize,
    best_mae: f64,
}

impl DiscoveryTrace {
    pub fn failure_count(&self) -> usize {
        self.rounds.iter().filter(|r| r.failed()).count()
    }

    pub fn best(&self) -> &RoundRecord {
        &self.rounds[self.best_round]
    }

    /// The best fitted model of the run.
    pub fn final_model(&self) -> &SdeModel {
        &self.best().model
    }

    pub fn best_mae(&self) -> f64 {
        self.best().best_mae
    }

    /// MAE of each round; failed rounds report the carried model's MAE.
    pub fn round_maes(&self) -> Vec<f64> {
        let mut carried = f64::INFINITY;
        self.rounds
            .iter()
            .map(|r| {
                if let Some(m) = r.mae {
                    carried = r.best_mae;
                    m
                } else {
                    carried
                }
            })
            .collect()
    }

    pub fn summary_json(&self) -> Result<String, serde_json::Error> {
        let rounds = self
            .rounds
            .iter()
            .map(|r| RoundSummary {
                round: r.round,
                mae: r.mae,
                weighted_mae: r.calibration.as_ref().map(|c| c.weighted_mae),
                best_mae: r.best_mae,
                n_params: r.n_params(),
                failed: r.failed(),
                failure: r.failure.as_deref(),
                model: print_model(&r.model),
                critique: r.critique.as_ref().map(|c| c.text.as_str()),
                rationale: r.proposal.as_ref().map(|p| p.rationale.as_str()),
            })
            .collect();
        let s = TraceSummary {
            rounds,
            failure_count: self.failure_count(),
            best_round: self.best_round,
            best_mae: self.best_mae(),
        };
        Ok(serde_json::to_string_pretty(&s)? + "\n")
    }

    /// Writes `round_<i>/{model.sde, calibration.csv, chart.png}` and
    /// `trace.json` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), DiscoveryError> {
        std::fs::create_dir_all(dir)?;
        for r in &self.rounds {
            let rd = dir.join(format!("round_{}", r.round));
            std::fs::create_dir_all(&rd)?;
            std::fs::write(rd.join("model.sde"), print_model(&r.model) + "\n")?;
            let csv = match &r.calibration {
                Some(c) => c.log_csv(),
                None => "epoch,lr,loss,grad_norm\n".to_string(),
            };
            std::fs::write(rd.join("calibration.csv"), csv)?;
            chart::write(&rd.join("chart.png"), &r.chart_png)?;
        }
        std::fs::write(dir.join("trace.json"), self.summary_json()?)?;
        Ok(())
    }
}

/// Everything fixed for one run: data, grid and the shared noise panel.
struct Setup<'a> {
    y: &'a [f64],
    grid: Grid,
    noise: crate::engine::NoisePanel,
    config: &'a DiscoveryConfig,
}

struct Fit {
    model: SdeModel,
    calibration: CalibrationResult,
    mean_path: Vec<f64>,
    display_paths: Vec<Vec<f64>>,
    chart_png: Vec<u8>,
}

impl Setup<'_> {
    fn fit(&self, model: &SdeModel) -> Result<Fit, String> {
        let target = moments(self.y).map_err(|e| e.to_string())?;
        let x0 = InitialState::new(self.y[0]);
        let calibration = calibrate_moments(
            model,
            &target,
            x0,
            &self.grid,
            &self.noise,
            &self.config.calib,
            &self.config.loss,
        )
        .map_err(|e| e.to_string())?;
        let fitted = calibration.fitted_model(model);
        let ens = CompiledModel::new(&fitted)
            .and_then(|c| c.simulate(&calibration.theta, x0, &self.grid, &self.noise))
            .map_err(|e| e.to_string())?;
        if ensemble_moments(&ens).is_err() {
            return Err("every simulated path diverged".to_string());
        }
        let mean_path = ens.mean_path();
        let display_paths: Vec<Vec<f64>> = ens
            .values
            .iter()
            .zip(&ens.diverged)
            .filter(|(_, d)| !**d)
            .take(chart::MAX_DRAWN_PATHS)
            .map(|(p, _)| p.clone())
            .collect();
        let chart_png = fit_chart_png(self.y, &display_paths).map_err(|e| e.to_string())?;
        Ok(Fit {
            model: fitted,
            calibration,
            mean_path,
            display_paths,
            chart_png,
        })
    }
}

/// Runs `config.rounds` rounds on a normalized series. Round 0 fits the
/// starting model; every later round critiques the best fit so far, asks
/// for a revision of the latest successful model and fits it. Proposer,
/// parse, validation and calibration failures mark the round failed and
/// carry the best model forward; they never abort the run.
pub fn run_discovery(
    dataset: &[f64],
    proposer: &dyn Proposer,
    config: &DiscoveryConfig,
    template: &PromptTemplate,
    trace_dir: Option<&Path>,
) -> Result<DiscoveryTrace, DiscoveryError> {
    if config.rounds < 1 {
        return Err(DiscoveryError::NoRounds);
    }
    if dataset.len() < 2 || dataset.iter().any(|v| !v.is_finite()) {
        return Err(DiscoveryError::Dataset);
    }
    let grid = Grid::unit(dataset.len())?;
    let setup = Setup {
        y: dataset,
        noise: generate_noise(config.calib.seed, config.calib.n_paths, &grid, 2),
        grid,
        config,
    };
    let start = parse_model(&config.start_model).map_err(|e| DiscoveryError::StartModel(e.to_string()))?;
    let fit0 = setup.fit(&start).map_err(DiscoveryError::StartModel)?;

    let mut rounds = Vec::with_capacity(config.rounds);
    let mut history = vec![fit0.model.clone()];
    let mae0 = fit0.calibration.mae;
    rounds.push(RoundRecord {
        round: 0,
        model: fit0.model,
        critique: None,
        proposal: None,
        mae: Some(mae0),
        best_mae: mae0,
        failure: None,
        mean_path: fit0.mean_path,
        display_paths: fit0.display_paths,
        chart_png: fit0.chart_png,
        calibration: Some(fit0.calibration),
    });
    let mut best = 0usize;

    for round in 1..config.rounds {
        let reference = &rounds[best];
        let diagnostics = residual_diagnostics(dataset, &reference.mean_path, setup.grid.t0, setup.grid.dt);
        let ctx = RoundContext {
            round,
            history: &history,
            reference: &reference.model,
            diagnostics: &diagnostics,
            template,
            chart_png: &reference.chart_png,
            trace_dir,
        };
        let mut critique = None;
        let mut proposal = None;
        let outcome = (|| {
            let text = proposer.critique(&ctx).map_err(|e| format!("critic: {e}"))?;
            if text.trim().is_empty() {
                return Err("critic: empty reply".to_string());
            }
            let c = Critique { text, diagnostics };
            let p = proposer.build(&ctx, &c).map_err(|e| format!("builder: {e}"));
            critique = Some(c);
            let p = p?;
            proposal = Some(p.clone());
            let model = parse_model(&p.dsl_source).map_err(|e| format!("parse: {e}"))?;
            let report = validate_model(&model);
            if !report.ok {
                return Err(format!("validation: {report}"));
            }
            setup.fit(&model)
        })();
        let best_mae = rounds[best].best_mae;
        let record = match outcome {
            Ok(fit) => {
                let mae = fit.calibration.mae;
                history.push(fit.model.clone());
                RoundRecord {
                    round,
                    model: fit.model,
                    critique,
                    proposal,
                    mae: Some(mae),
                    best_mae: best_mae.min(mae),
                    failure: None,
                    mean_path: fit.mean_path,
                    display_paths: fit.display_paths,
                    chart_png: fit.chart_png,
                    calibration: Some(fit.calibration),
                }
            }
            Err(reason) => {
                let carried = &rounds[best];
                RoundRecord {
                    round,
                    model: carried.model.clone(),
                    critique,
                    proposal,
                    mae: None,
                    best_mae,
                    failure: Some(reason),
                    mean_path: carried.mean_path.clone(),
                    display_paths: carried.display_paths.clone(),
                    chart_png: carried.chart_png.clone(),
                    calibration: None,
                }
            }
        };
        if record.mae.is_some_and(|m| m < best_mae) {
            best = round;
        }
        rounds.push(record);
    }
    Ok(DiscoveryTrace {
        dataset: dataset.to_vec(),
        rounds,
        best_round: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Garbage;
    impl Proposer for Garbage {
        fn critique(&self, _: &RoundContext) -> Result<String, ProposerError> {
            Ok("looks wrong".into())
        }
        fn build(&self, _: &RoundContext, _: &Critique) -> Result<ModelProposal, ProposerError> {
            Ok(ModelProposal {
                dsl_source: "dV = mu*V dt + + sigma".into(),
                rationale: String::new(),
            })
        }
    }

    fn data() -> Vec<f64> {
        (0..41).map(|i| 0.5 + 0.4 * (i as f64 * 0.3).sin()).collect()
    }

    fn quick() -> DiscoveryConfig {
        DiscoveryConfig {
            rounds: 3,
            calib: CalibConfig {
                epochs: 5,
                n_paths: 8,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn failing_proposer_keeps_start_model() {
        let t = run_discovery(&data(), &Garbage, &quick(), &PromptTemplate::default(), None).unwrap();
        assert_eq!(t.rounds.len(), 3);
        assert_eq!(t.failure_count(), 2);
        assert_eq!(t.final_model().param_names(), vec!["mu", "sigma"]);
        assert!(t.rounds[1].failure.as_ref().unwrap().starts_with("parse"));
        assert_eq!(t.round_maes()[2], t.rounds[0].mae.unwrap());
    }

    #[test]
    fn single_round_is_calibrated_start() {
        let cfg = DiscoveryConfig { rounds: 1, ..quick() };
        let t = run_discovery(&data(), &cfg.scripted_proposer(), &cfg, &PromptTemplate::default(), None).unwrap();
        assert_eq!(t.rounds.len(), 1);
        assert!(t.rounds[0].calibration.is_some());
        assert_eq!(t.rounds[0].best_mae, t.rounds[0].mae.unwrap());
    }

    #[test]
    fn prompt_modes_decorate_both_instructions() {
        let p = PromptTemplate::new(PromptMode::Parsimonious, Some("gold, 2023".into()));
        for text in [p.critic_text(), p.builder_text()] {
            assert!(text.contains(PARSIMONY_CLAUSE.trim_end()));
            assert!(text.contains("gold, 2023"));
        }
        let s = PromptTemplate::default();
        assert!(!s.critic_text().contains(PARSIMONY_CLAUSE.trim_end()));
        assert!(s.builder_text().ends_with(GRAMMAR_REFERENCE.trim_end()));
    }

    #[test]
    fn rejects_bad_inputs() {
        let cfg = DiscoveryConfig { rounds: 0, ..quick() };
        assert!(matches!(
            run_discovery(&data(), &Garbage, &cfg, &PromptTemplate::default(), None),
            Err(DiscoveryError::NoRounds)
        ));
        assert!(matches!(
            run_discovery(&[0.5], &Garbage, &quick(), &PromptTemplate::default(), None),
            Err(DiscoveryError::Dataset)
        ));
    }
}
