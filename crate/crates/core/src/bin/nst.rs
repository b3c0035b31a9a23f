use clap::{Args, Parser, Subcommand};
use nst_core::discovery::PromptMode;
use nst_core::dsl::{parse_model, print_model, validate_model};
use nst_core::experiment::{run_experiment, ExperimentConfig, ExperimentKind, ProposerKind};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nst", version, about = "SDE model discovery and market simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// CSV file with date,close columns, or synthetic:gbm:mu,sigma,seed[,steps]
    /// or synthetic:ou:theta,m,sigma,amp,freq,seed[,steps].
    #[arg(long)]
    data: Option<String>,
    /// Experiment config (JSON); flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the parameters of one model by moment matching.
    Calibrate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Run the critique/build/calibrate discovery loop.
    Discover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        proposer: Option<ProposerKind>,
        #[arg(long)]
        mode: Option<PromptMode>,
        /// Asset and period shown to the proposer, e.g. "gold, 2023".
        #[arg(long)]
        domain: Option<String>,
        #[arg(long)]
        rounds: Option<usize>,
    },
    /// Simulate price impact of trader agents over rolling windows.
    Market {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        proposer: Option<ProposerKind>,
        #[arg(long)]
        windows: Option<usize>,
        #[arg(long)]
        traders: Option<usize>,
        #[arg(long)]
        realizations: Option<usize>,
    },
    /// Parse and validate a model file, printing its canonical form.
    Validate {
        #[arg(long)]
        model: PathBuf,
    },
    /// Re-run a persisted experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn base_config(common: &Common, kind: ExperimentKind) -> Result<ExperimentConfig, String> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| e.to_string())?,
        None => ExperimentConfig::default(),
    };
    config.kind = kind;
    if let Some(data) = &common.data {
        config.data = data.clone();
    } else if common.config.is_none() {
        return Err("--data is required without --config".into());
    }
    if let Some(n) = common.trials {
        config.trials = n;
    }
    if let Some(s) = common.seed {
        config.seed = s;
    }
    Ok(config)
}

fn validate(path: &Path) -> Result<bool, String> {
    let source = read(path)?;
    let model = parse_model(&source).map_err(|e| e.to_string())?;
    let report = validate_model(&model);
    println!("{}", print_model(&model));
    println!("{report}");
    Ok(report.ok)
}

fn run(cli: Cli) -> Result<bool, String> {
    let (config, out) = match cli.command {
        Command::Validate { model } => return validate(&model),
        Command::Run { config, out } => (ExperimentConfig::load(&config).map_err(|e| e.to_string())?, out),
        Command::Calibrate { common, model, epochs } => {
            let mut config = base_config(&common, ExperimentKind::Calibrate)?;
            if let Some(path) = model {
                config.model = Some(read(&path)?);
            }
            if let Some(e) = epochs {
                config.discovery.calib.epochs = e;
            }
            (config, common.out)
        }
        Command::Discover {
            common,
            proposer,
            mode,
            domain,
            rounds,
        } => {
            let mut config = base_config(&common, ExperimentKind::Discover)?;
            if let Some(p) = proposer {
                config.proposer = p;
            }
            if let Some(m) = mode {
                config.prompt_mode = m;
            }
            if domain.is_some() {
                config.domain = domain;
            }
            if let Some(r) = rounds {
                config.discovery.rounds = r;
            }
            (config, common.out)
        }
        Command::Market {
            common,
            proposer,
            windows,
            traders,
            realizations,
        } => {
            let mut config = base_config(&common, ExperimentKind::Market)?;
            if let Some(p) = proposer {
                config.proposer = p;
            }
            if let Some(w) = windows {
                config.market.windows = w;
            }
            if let Some(t) = traders {
                config.market.n_traders = t;
            }
            if let Some(r) = realizations {
                config.market.n_realizations = r;
            }
            (config, common.out)
        }
    };
    let summaries = run_experiment(&config, &out).map_err(|e| e.to_string())?;
    for s in summaries {
        let mut line = format!("trial {} seed {}", s.trial, s.seed);
        if let Some(mae) = s.mae {
            line += &format!(" mae {mae:.6}");
        }
        if let Some(n) = s.n_params {
            line += &format!(" params {n}");
        }
        if let (Some(h), Some(v)) = (s.historical_variance, s.simulated_variance) {
            line += &format!(" var hist {h:.6} sim {v:.6}");
        }
        println!("{line}");
    }
    println!("outputs written to {}", out.display());
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
