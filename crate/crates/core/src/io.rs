//! Price series ingestion, normalization and synthetic data.

use crate::dsl::{parse_model, SdeModel};
use crate::engine::{generate_noise, simulate, Grid};
use chrono::{Days, NaiveDate};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("reading {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
    #[error("missing column {0:?} in header")]
    MissingColumn(&'static str),
    #[error("duplicate date {date} on lines {first} and {second}")]
    DuplicateDate {
        date: NaiveDate,
        first: u64,
        second: u64,
    },
    #[error("series needs at least 2 points, got {0}")]
    TooShort(usize),
    #[error("constant series cannot be normalized")]
    Constant,
    #[error("invalid data spec {spec:?}: {message}")]
    Spec { spec: String, message: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("simulating synthetic data: {0}")]
    Engine(#[from] crate::engine::EngineError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriceSeries {
    pub dates: Vec<NaiveDate>,
    pub close: Vec<f64>,
    pub asset: String,
    pub period: String,
}

impl PriceSeries {
    pub fn len(&self) -> usize {
        self.close.len()
    }

    pub fn is_empty(&self) -> bool {
        self.close.is_empty()
    }

    fn with_daily_dates(close: Vec<f64>, asset: &str) -> PriceSeries {
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).expect("valid date");
        let dates: Vec<NaiveDate> = (0..close.len() as u64)
            .map(|i| start.checked_add_days(Days::new(i)).expect("date in range"))
            .collect();
        let period = period_label(&dates);
        PriceSeries {
            dates,
            close,
            asset: asset.to_string(),
            period,
        }
    }
}

fn period_label(dates: &[NaiveDate]) -> String {
    match (dates.first(), dates.last()) {
        (Some(a), Some(b)) => format!("{a} to {b}"),
        _ => String::new(),
    }
}

/// Reads a `date,close` CSV (extra columns ignored), sorted by date.
pub fn load_csv(path: &Path) -> Result<PriceSeries, IoError> {
    let text = std::fs::read_to_string(path).map_err(|source| IoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let asset = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    parse_csv(&text, &asset)
}

pub fn parse_csv(text: &str, asset: &str) -> Result<PriceSeries, IoError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    let col = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.eq_ignore_ascii_case(name))
            .ok_or(IoError::MissingColumn(name))
    };
    let (date_col, close_col) = (col("date")?, col("close")?);
    let mut rows: Vec<(NaiveDate, f64, u64)> = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let row_err = |message: String| IoError::Row { line, message };
        let date_text = record.get(date_col).ok_or_else(|| row_err("missing date".into()))?;
        let date = NaiveDate::parse_from_str(date_text, "%Y-%m-%d")
            .map_err(|e| row_err(format!("invalid date {date_text:?}: {e}")))?;
        let close_text = record.get(close_col).ok_or_else(|| row_err("missing close".into()))?;
        let close: f64 = close_text
            .parse()
            .map_err(|_| row_err(format!("invalid close {close_text:?}")))?;
        if !(close > 0.0) || !close.is_finite() {
            return Err(row_err(format!("close must be positive, got {close_text}")));
        }
        rows.push((date, close, line));
    }
    rows.sort_by_key(|r| r.0);
    if let Some(w) = rows.windows(2).find(|w| w[0].0 == w[1].0) {
        let (first, second) = (w[0].2.min(w[1].2), w[0].2.max(w[1].2));
        return Err(IoError::DuplicateDate {
            date: w[0].0,
            first,
            second,
        });
    }
    let dates: Vec<NaiveDate> = rows.iter().map(|r| r.0).collect();
    Ok(PriceSeries {
        period: period_label(&dates),
        dates,
        close: rows.iter().map(|r| r.1).collect(),
        asset: asset.to_string(),
    })
}

/// Min-max transform of values and of the observation index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub y_min: f64,
    pub y_max: f64,
    pub t_min: f64,
    pub t_max: f64,
}

impl MinMax {
    pub fn apply(&self, y: f64) -> f64 {
        (y - self.y_min) / (self.y_max - self.y_min)
    }

    pub fn invert(&self, v: f64) -> f64 {
        self.y_min + v * (self.y_max - self.y_min)
    }

    pub fn time(&self, index: usize) -> f64 {
        (index as f64 - self.t_min) / (self.t_max - self.t_min)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedSeries {
    pub values: Vec<f64>,
    pub transform: MinMax,
}

impl NormalizedSeries {
    pub fn denormalize(&self) -> Vec<f64> {
        self.values.iter().map(|v| self.transform.invert(*v)).collect()
    }
}

pub fn normalize_values(values: &[f64]) -> Result<(Vec<f64>, MinMax), IoError> {
    if values.len() < 2 {
        return Err(IoError::TooShort(values.len()));
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(*v), b.max(*v)));
    if !(hi > lo) {
        return Err(IoError::Constant);
    }
    let t = MinMax {
        y_min: lo,
        y_max: hi,
        t_min: 0.0,
        t_max: (values.len() - 1) as f64,
    };
    // exact endpoints regardless of rounding in apply()
    let normalized = values
        .iter()
        .map(|v| {
            if *v == lo {
                0.0
            } else if *v == hi {
                1.0
            } else {
                t.apply(*v)
            }
        })
        .collect();
    Ok((normalized, t))
}

pub fn normalize(series: &PriceSeries) -> Result<NormalizedSeries, IoError> {
    let (values, transform) = normalize_values(&series.close)?;
    Ok(NormalizedSeries { values, transform })
}

/// One GBM path from `x0 = 1` on `grid`.
pub fn synthesize_gbm(mu: f64, sigma: f64, seed: u64, grid: &Grid) -> PriceSeries {
    let noise = generate_noise(seed, 1, grid, 1);
    let ens = simulate(&SdeModel::gbm(mu, sigma), &[mu, sigma], 1.0, grid, &noise)
        .expect("GBM matches its own noise panel");
    PriceSeries::with_daily_dates(ens.values[0].clone(), "synthetic GBM")
}

pub const OU_SEASONAL_SOURCE: &str =
    "dV = theta*(m - V) + amp*sin(6.283185307179586*freq*t) dt + sigma dW";

/// One path of `dV = theta*(m - V) + amp*sin(2*pi*freq*t) dt + sigma dW`
/// from `x0 = m`.
pub fn synthesize_ou(
    theta: f64,
    m: f64,
    sigma: f64,
    amp: f64,
    freq: f64,
    seed: u64,
    grid: &Grid,
) -> Result<PriceSeries, IoError> {
    let model = parse_model(OU_SEASONAL_SOURCE).expect("built-in model parses");
    let mut values = Vec::new();
    for name in model.param_names() {
        values.push(match name {
            "theta" => theta,
            "m" => m,
            "amp" => amp,
            "freq" => freq,
            _ => sigma,
        });
    }
    let noise = generate_noise(seed, 1, grid, 1);
    let ens = simulate(&model, &values, m, grid, &noise)?;
    Ok(PriceSeries::with_daily_dates(ens.values[0].clone(), "synthetic OU"))
}

/// Where an experiment's data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Csv(String),
    /// `synthetic:gbm:mu,sigma,seed[,steps]`
    Gbm { mu: f64, sigma: f64, seed: u64, steps: usize },
    /// `synthetic:ou:theta,m,sigma,amp,freq,seed[,steps]`
    Ou {
        theta: f64,
        m: f64,
        sigma: f64,
        amp: f64,
        freq: f64,
        seed: u64,
        steps: usize,
    },
}

pub const DEFAULT_SYNTHETIC_STEPS: usize = 100;

impl DataSpec {
    pub fn parse(spec: &str) -> Result<DataSpec, IoError> {
        let Some(rest) = spec.strip_prefix("synthetic:") else {
            return Ok(DataSpec::Csv(spec.to_string()));
        };
        let err = |message: &str| IoError::Spec {
            spec: spec.to_string(),
            message: message.to_string(),
        };
        let (kind, args) = rest.split_once(':').ok_or_else(|| err("expected synthetic:<kind>:<args>"))?;
        let parts: Vec<&str> = args.split(',').map(str::trim).collect();
        let num = |i: usize| -> Result<f64, IoError> {
            parts[i].parse().map_err(|_| err(&format!("argument {} is not a number", i + 1)))
        };
        let int = |i: usize| -> Result<u64, IoError> {
            parts[i].parse().map_err(|_| err(&format!("argument {} is not an integer", i + 1)))
        };
        match kind {
            "gbm" => {
                if !(3..=4).contains(&parts.len()) {
                    return Err(err("expected mu,sigma,seed[,steps]"));
                }
                Ok(DataSpec::Gbm {
                    mu: num(0)?,
                    sigma: num(1)?,
                    seed: int(2)?,
                    steps: if parts.len() == 4 { int(3)? as usize } else { DEFAULT_SYNTHETIC_STEPS },
                })
            }
            "ou" => {
                if !(6..=7).contains(&parts.len()) {
                    return Err(err("expected theta,m,sigma,amp,freq,seed[,steps]"));
                }
                Ok(DataSpec::Ou {
                    theta: num(0)?,
                    m: num(1)?,
                    sigma: num(2)?,
                    amp: num(3)?,
                    freq: num(4)?,
                    seed: int(5)?,
                    steps: if parts.len() == 7 { int(6)? as usize } else { DEFAULT_SYNTHETIC_STEPS },
                })
            }
            other => Err(err(&format!("unknown synthetic kind {other:?}"))),
        }
    }

    /// Loads or generates the series. Synthetic data uses `dt = 0.01`.
    pub fn load(&self) -> Result<PriceSeries, IoError> {
        let grid = |steps: usize| Grid::new(0.0, steps, crate::engine::DEFAULT_DT);
        match self {
            DataSpec::Csv(path) => load_csv(Path::new(path)),
            DataSpec::Gbm { mu, sigma, seed, steps } => Ok(synthesize_gbm(*mu, *sigma, *seed, &grid(*steps)?)),
            DataSpec::Ou {
                theta,
                m,
                sigma,
                amp,
                freq,
                seed,
                steps,
            } => synthesize_ou(*theta, *m, *sigma, *amp, *freq, *seed, &grid(*steps)?),
        }
    }
}
