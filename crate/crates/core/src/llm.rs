//! Proposer backed by a vision-language model behind a chat-completion
//! style HTTP endpoint.
//!
//! Request shape: `{"model", "temperature", "max_tokens", "messages"}` where
//! `messages` holds a system instruction and one user message whose content
//! is a list of `{"type": "text"}` and `{"type": "image_url"}` parts (the
//! image as a base64 `data:` URL). The reply text is read from
//! `choices[0].message.content`. Each exchange is written to
//! `exchange_<round>_<role>.json` before its reply is interpreted.

use crate::discovery::{Critique, ModelProposal, PromptTemplate, Proposer, ProposerError, RoundContext};
use crate::dsl::{print_model, SdeModel};
use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use std::path::Path;
use std::time::{Duration, Instant};
use thiserror::Error;

pub const CALIBRATE_PROMPT: &str = include_str!("../prompts/calibrate.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VlmConfig {
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub timeout_secs: f64,
    /// Extra attempts after a failed request.
    pub retries: u32,
    /// Environment variable holding the bearer token.
    pub api_key_env: String,
    pub max_tokens: u32,
}

impl Default for VlmConfig {
    fn default() -> Self {
        VlmConfig {
            endpoint: "http://localhost:8000/v1/chat/completions".into(),
            model: "vlm".into(),
            temperature: 0.0,
            timeout_secs: 120.0,
            retries: 2,
            api_key_env: "NST_VLM_API_KEY".into(),
            max_tokens: 2048,
        }
    }
}

#[derive(Debug, Error)]
pub enum VlmError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("empty reply")]
    Empty,
    #[error("no fenced code block in reply")]
    NoCodeBlock,
    #[error("calibration reply: {0}")]
    Calibration(String),
    #[error("persisting exchange: {0}")]
    Io(#[from] std::io::Error),
}

impl From<VlmError> for ProposerError {
    fn from(e: VlmError) -> Self {
        match e {
            VlmError::Transport(m) => ProposerError::Transport(m),
            VlmError::Empty => ProposerError::Empty,
            VlmError::NoCodeBlock => ProposerError::Extraction("no fenced code block".into()),
            other => ProposerError::Other(other.to_string()),
        }
    }
}

/// One request/response pair as persisted for audit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VlmExchange {
    pub round: usize,
    pub role: String,
    pub request: Value,
    pub status: Option<u16>,
    pub response: Option<String>,
    pub error: Option<String>,
    pub attempts: u32,
    pub latency_ms: u64,
}

pub struct VlmClient {
    config: VlmConfig,
    http: reqwest::blocking::Client,
}

impl VlmClient {
    pub fn new(config: VlmConfig) -> Result<VlmClient, VlmError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(config.timeout_secs))
            .build()
            .map_err(|e| VlmError::Transport(e.to_string()))?;
        Ok(VlmClient { config, http })
    }

    pub fn config(&self) -> &VlmConfig {
        &self.config
    }

    /// Request body; identical inputs give identical bytes.
    pub fn request_body(&self, system: &str, text: &str, image_png: Option<&[u8]>) -> Value {
        let mut parts = vec![json!({"type": "text", "text": text})];
        if let Some(png) = image_png {
            let b64 = base64::engine::general_purpose::STANDARD.encode(png);
            parts.push(json!({
                "type": "image_url",
                "image_url": {"url": format!("data:image/png;base64,{b64}")}
            }));
        }
        json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "max_tokens": self.config.max_tokens,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": parts},
            ],
        })
    }

    fn post(&self, body: &Value) -> Result<(u16, String), String> {
        let mut req = self.http.post(&self.config.endpoint).json(body);
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| e.to_string())?;
        Ok((status, text))
    }

    /// Sends `body`, retrying transport errors, 429 and 5xx responses, and
    /// persists the exchange under `trace_dir` before returning the reply.
    pub fn exchange(
        &self,
        round: usize,
        role: &str,
        body: Value,
        trace_dir: Option<&Path>,
    ) -> Result<String, VlmError> {
        let start = Instant::now();
        let mut attempts = 0;
        let mut last_err = String::new();
        let mut outcome = None;
        while attempts <= self.config.retries {
            attempts += 1;
            match self.post(&body) {
                Ok((status, text)) if status == 429 || status >= 500 => {
                    last_err = format!("HTTP {status}");
                    outcome = Some((status, text));
                }
                Ok((status, text)) => {
                    outcome = Some((status, text));
                    last_err.clear();
                    break;
                }
                Err(e) => last_err = e,
            }
        }
        let failed = !last_err.is_empty()
            || outcome.as_ref().is_some_and(|(s, _)| !(200..300).contains(s));
        let error = if failed {
            Some(match (&outcome, last_err.is_empty()) {
                (Some((s, _)), true) => format!("HTTP {s}"),
                _ => last_err.clone(),
            })
        } else {
            None
        };
        let record = VlmExchange {
            round,
            role: role.to_string(),
            request: body,
            status: outcome.as_ref().map(|o| o.0),
            response: outcome.as_ref().map(|o| o.1.clone()),
            error: error.clone(),
            attempts,
            latency_ms: start.elapsed().as_millis() as u64,
        };
        if let Some(dir) = trace_dir {
            std::fs::create_dir_all(dir)?;
            let path = dir.join(format!("exchange_{round}_{role}.json"));
            std::fs::write(path, serde_json::to_string_pretty(&record).expect("exchange serializes"))?;
        }
        if let Some(e) = error {
            return Err(VlmError::Transport(e));
        }
        let raw = record.response.unwrap_or_default();
        let content = reply_content(&raw).ok_or(VlmError::Empty)?;
        if content.trim().is_empty() {
            return Err(VlmError::Empty);
        }
        Ok(content)
    }
}

/// `choices[0].message.content` of a chat-completion response. Content
/// given as a list of text parts is concatenated.
pub fn reply_content(raw: &str) -> Option<String> {
    let v: Value = serde_json::from_str(raw).ok()?;
    let content = v.get("choices")?.get(0)?.get("message")?.get("content")?;
    match content {
        Value::String(s) => Some(s.clone()),
        Value::Array(parts) => Some(
            parts
                .iter()
                .filter_map(|p| p.get("text").and_then(Value::as_str))
                .collect::<Vec<_>>()
                .join(""),
        ),
        _ => None,
    }
}

/// First fenced code block of `reply` and the remaining text.
pub fn extract_code_block(reply: &str) -> Option<(String, String)> {
    let open = reply.find("```")?;
    let after_fence = &reply[open + 3..];
    let body_start = after_fence.find('\n')? + 1;
    let body = &after_fence[body_start..];
    let close = body.find("```")?;
    let code = body[..close].trim_end().to_string();
    let rest_start = open + 3 + body_start + close + 3;
    let rationale = format!("{}{}", &reply[..open], &reply[rest_start..]).trim().to_string();
    Some((code, rationale))
}

/// Applies `name = value` lines in `reply` to the model's parameters; names
/// not mentioned keep their current values.
pub fn parse_assignments(reply: &str, model: &SdeModel) -> Result<Vec<f64>, VlmError> {
    let mut values = model.param_values();
    let mut found = 0;
    for line in reply.lines() {
        let Some((lhs, rhs)) = line.split_once('=') else {
            continue;
        };
        let name = lhs
            .trim()
            .trim_start_matches(['-', '*', '`', ' '])
            .trim_start_matches("param ")
            .trim_end_matches('`')
            .trim();
        let Some(i) = model.param_index(name) else {
            continue;
        };
        let text = rhs.trim().trim_matches(['`', ',', ';']).trim();
        let v: f64 = text
            .parse()
            .map_err(|_| VlmError::Calibration(format!("{name} = {text} is not a number")))?;
        if !v.is_finite() {
            return Err(VlmError::Calibration(format!("{name} is not finite")));
        }
        values[i] = v;
        found += 1;
    }
    if found == 0 {
        return Err(VlmError::Calibration("no parameter assignments found".into()));
    }
    Ok(values)
}

fn history_text(history: &[SdeModel]) -> String {
    let mut out = String::from("Models so far, oldest first:\n");
    for (i, m) in history.iter().enumerate() {
        out.push_str(&format!("\nModel {i}:\n{}\n", print_model(m)));
    }
    out
}

pub fn vlm_critique(
    client: &VlmClient,
    chart_png: &[u8],
    history: &[SdeModel],
    template: &PromptTemplate,
    round: usize,
    trace_dir: Option<&Path>,
) -> Result<String, VlmError> {
    let body = client.request_body(&template.critic_text(), &history_text(history), Some(chart_png));
    client.exchange(round, "critic", body, trace_dir)
}

pub fn vlm_build(
    client: &VlmClient,
    critique: &str,
    current: &SdeModel,
    template: &PromptTemplate,
    round: usize,
    trace_dir: Option<&Path>,
) -> Result<ModelProposal, VlmError> {
    let text = format!("Critique:\n{critique}\n\nCurrent model:\n{}\n", print_model(current));
    let body = client.request_body(&template.builder_text(), &text, None);
    let reply = client.exchange(round, "builder", body, trace_dir)?;
    let (dsl_source, rationale) = extract_code_block(&reply).ok_or(VlmError::NoCodeBlock)?;
    Ok(ModelProposal { dsl_source, rationale })
}

/// Asks for parameter values directly from the chart.
pub fn vlm_calibrate(
    client: &VlmClient,
    chart_png: &[u8],
    model: &SdeModel,
    round: usize,
    trace_dir: Option<&Path>,
) -> Result<Vec<f64>, VlmError> {
    let text = format!(
        "Model:\n{}\n\nParameters: {}\n",
        print_model(model),
        model.param_names().join(", ")
    );
    let body = client.request_body(CALIBRATE_PROMPT.trim_end(), &text, Some(chart_png));
    let reply = client.exchange(round, "calibrate", body, trace_dir)?;
    parse_assignments(&reply, model)
}

pub struct VlmProposer {
    pub client: VlmClient,
}

impl Proposer for VlmProposer {
    fn critique(&self, ctx: &RoundContext) -> Result<String, ProposerError> {
        Ok(vlm_critique(&self.client, ctx.chart_png, ctx.history, ctx.template, ctx.round, ctx.trace_dir)?)
    }

    fn build(&self, ctx: &RoundContext, critique: &Critique) -> Result<ModelProposal, ProposerError> {
        let current = ctx.history.last().ok_or(ProposerError::EmptyHistory)?;
        Ok(vlm_build(&self.client, &critique.text, current, ctx.template, ctx.round, ctx.trace_dir)?)
    }
}
