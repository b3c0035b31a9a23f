use nst_core::calibrate::CalibConfig;
use nst_core::discovery::diagnostics::residual_diagnostics;
use nst_core::discovery::scripted::NO_CHANGE;
use nst_core::discovery::{
    run_discovery, Critique, DiscoveryConfig, ModelProposal, PromptMode, PromptTemplate, Proposer,
    ProposerError, RoundContext,
};
use nst_core::engine::Grid;
use nst_core::io::{normalize, synthesize_gbm, synthesize_ou};

fn config(rounds: usize) -> DiscoveryConfig {
    DiscoveryConfig {
        rounds,
        calib: CalibConfig {
            epochs: 30,
            n_paths: 50,
            seed: 4,
            ..CalibConfig::default()
        },
        ..DiscoveryConfig::default()
    }
}

fn gbm_data() -> Vec<f64> {
    let grid = Grid::new(0.0, 100, 0.01).unwrap();
    normalize(&synthesize_gbm(0.3, 0.2, 12, &grid)).unwrap().values
}

struct Offline;

impl Proposer for Offline {
    fn critique(&self, _: &RoundContext) -> Result<String, ProposerError> {
        Err(ProposerError::Transport("connection refused".into()))
    }
    fn build(&self, _: &RoundContext, _: &Critique) -> Result<ModelProposal, ProposerError> {
        unreachable!()
    }
}

#[test]
fn transport_failures_never_abort_the_loop() {
    let t = run_discovery(&gbm_data(), &Offline, &config(4), &PromptTemplate::default(), None).unwrap();
    assert_eq!(t.rounds.len(), 4);
    assert_eq!(t.failure_count(), 3);
    assert_eq!(t.final_model().param_names(), vec!["mu", "sigma"]);
}

#[test]
fn scripted_run_improves_and_writes_layout() {
    let cfg = config(5);
    let dir = tempfile::tempdir().unwrap();
    let t = run_discovery(&gbm_data(), &cfg.scripted_proposer(), &cfg, &PromptTemplate::default(), None).unwrap();
    let maes = t.round_maes();
    assert!(maes[4] <= maes[0] + 1e-12, "{maes:?}");
    let best: Vec<f64> = t.rounds.iter().map(|r| r.best_mae).collect();
    assert!(best.windows(2).all(|w| w[1] <= w[0]), "{best:?}");

    // Each round adds one term until the cascade reports no change.
    for pair in t.rounds.windows(2) {
        let no_change = pair[1].proposal.as_ref().is_some_and(|p| p.rationale == NO_CHANGE);
        if no_change {
            assert_eq!(pair[1].n_params(), pair[0].n_params());
        } else if !pair[1].failed() {
            assert!(pair[1].n_params() > pair[0].n_params());
        }
    }

    t.write(dir.path()).unwrap();
    for i in 0..5 {
        let round = dir.path().join(format!("round_{i}"));
        for f in ["model.sde", "calibration.csv", "chart.png"] {
            assert!(round.join(f).is_file(), "{}", round.join(f).display());
        }
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("trace.json")).unwrap()).unwrap();
    assert!(json.is_object());

    let again = run_discovery(&gbm_data(), &cfg.scripted_proposer(), &cfg, &PromptTemplate::default(), None).unwrap();
    assert_eq!(again.summary_json().unwrap(), t.summary_json().unwrap());
}

#[test]
fn parsimonious_mode_is_no_larger() {
    let cfg = config(5);
    let grid = Grid::new(0.0, 100, 0.01).unwrap();
    let data = normalize(&synthesize_ou(10.0, 1.0, 0.2, 2.0, 2.0, 31, &grid).unwrap()).unwrap().values;
    let std = run_discovery(&data, &cfg.scripted_proposer(), &cfg, &PromptTemplate::default(), None).unwrap();
    let pars = PromptTemplate::new(PromptMode::Parsimonious, None);
    let lean = run_discovery(&data, &cfg.scripted_proposer(), &cfg, &pars, None).unwrap();
    let last = |t: &nst_core::discovery::DiscoveryTrace| t.rounds.last().unwrap().n_params();
    assert!(last(&lean) <= last(&std));
}

#[test]
fn diagnostics_oracles() {
    let n = 200;
    let dt = 1.0 / (n - 1) as f64;
    let sine: Vec<f64> = (0..n).map(|i| (2.0 * std::f64::consts::PI * 4.0 * i as f64 * dt).sin()).collect();
    let flat = vec![0.0; n];
    let d = residual_diagnostics(&sine, &flat, 0.0, dt);
    assert!(d.periodicity_ratio > 100.0, "{}", d.periodicity_ratio);

    let grid = Grid::new(0.0, 200, 0.01).unwrap();
    let ou = synthesize_ou(5.0, 1.0, 0.3, 0.0, 1.0, 3, &grid).unwrap().close;
    let d = residual_diagnostics(&ou, &vec![1.0; ou.len()], 0.0, 0.01);
    assert!(d.reversion_slope < 0.0, "{}", d.reversion_slope);
}
