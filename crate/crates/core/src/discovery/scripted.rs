//! Deterministic rule-cascade proposer.

use super::diagnostics::{Diagnostics, Thresholds};
use super::{Critique, ModelProposal, PromptMode, Proposer, ProposerError, RoundContext};
use crate::dsl::{
    fresh_names, print_model, DiffusionFamily, DriftFamily, DriftTerm, Expr, JumpSpec, ModelShape, SdeModel,
    TermFamily,
};

/// Rationale returned when no rule applies.
pub const NO_CHANGE: &str = "no change";

/// Jump intensity given to a newly added jump term; its size starts at 0.
pub const INITIAL_JUMP_INTENSITY: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedProposer {
    pub thresholds: Thresholds,
    /// Parameters below this magnitude mark their term for removal in
    /// parsimonious mode.
    pub parsimony_tolerance: f64,
}

impl Default for ScriptedProposer {
    fn default() -> Self {
        ScriptedProposer {
            thresholds: Thresholds::default(),
            parsimony_tolerance: 1e-3,
        }
    }
}

impl Proposer for ScriptedProposer {
    fn critique(&self, ctx: &RoundContext) -> Result<String, ProposerError> {
        Ok(ctx.diagnostics.describe(&self.thresholds))
    }

    fn build(&self, ctx: &RoundContext, critique: &Critique) -> Result<ModelProposal, ProposerError> {
        let latest = ctx.history.last().ok_or(ProposerError::EmptyHistory)?;
        Ok(scripted_propose(
            latest,
            &critique.diagnostics,
            ctx.template.mode,
            &self.thresholds,
            self.parsimony_tolerance,
        ))
    }
}

/// Revises `model` by one term. New terms start at values that leave the
/// model's paths unchanged (zero rates and amplitudes), so the revision
/// nests its predecessor's fit.
pub fn scripted_propose(
    model: &SdeModel,
    diag: &Diagnostics,
    mode: PromptMode,
    th: &Thresholds,
    tolerance: f64,
) -> ModelProposal {
    if mode == PromptMode::Parsimonious {
        if let Some((name, pruned)) = prune_small_term(model, tolerance) {
            return proposal(&pruned, format!("remove the term carrying negligible parameter {name}"));
        }
    }
    let shape = ModelShape::of(model);
    let taken = model.param_names();
    let mut next = shape.clone();
    let mut values: Vec<(String, f64)> = Vec::new();

    let rationale = if diag.is_reverting(th) && !shape.has_drift(DriftFamily::MeanReversion) {
        let family = TermFamily::Drift(DriftFamily::MeanReversion);
        let names = fresh_names(family, &taken);
        values.push((names[0].clone(), 0.0));
        values.push((names[1].clone(), diag.series_mean));
        next.drift.push(DriftTerm {
            family: Some(DriftFamily::MeanReversion),
            expr: family.expr(&names),
        });
        "add a mean-reversion drift term"
    } else if diag.is_level_dependent(th) && shape.diffusion_family() == Some(DiffusionFamily::Constant) {
        let d = next.diffusion.as_mut().expect("constant diffusion present");
        let name = d.base.params()[0].to_string();
        d.base = TermFamily::Diffusion(DiffusionFamily::Sqrt).expr(&[name]);
        d.family = Some(DiffusionFamily::Sqrt);
        "replace constant diffusion with square-root diffusion"
    } else if diag.is_periodic(th) && !shape.has_drift(DriftFamily::Seasonal) {
        let family = TermFamily::Drift(DriftFamily::Seasonal);
        let names = fresh_names(family, &taken);
        let freq = if diag.dominant_frequency > 0.0 { diag.dominant_frequency } else { 1.0 };
        values.push((names[0].clone(), 0.0));
        values.push((names[1].clone(), freq));
        values.push((names[2].clone(), diag.dominant_phase));
        next.drift.push(DriftTerm {
            family: Some(DriftFamily::Seasonal),
            expr: family.expr(&names),
        });
        "add a sinusoidal drift term"
    } else if diag.is_heavy_tailed(th) && shape.jump.is_none() {
        let names = fresh_jump_names(&taken);
        values.push((names[0].clone(), INITIAL_JUMP_INTENSITY));
        values.push((names[1].clone(), 0.0));
        values.push((names[2].clone(), 0.0));
        next.jump = Some(JumpSpec {
            intensity: Expr::param(&names[0]),
            mean: Expr::param(&names[1]),
            std: Expr::param(&names[2]),
        });
        "add a jump term"
    } else if shape.diffusion.is_some() && !shape.is_time_scaled() {
        let names = fresh_names(TermFamily::TimeScaled, &taken);
        values.push((names[0].clone(), 0.0));
        let d = next.diffusion.as_mut().expect("diffusion present");
        d.time_scale = Some(TermFamily::TimeScaled.expr(&names));
        "scale the diffusion with time"
    } else {
        return proposal(model, NO_CHANGE.to_string());
    };
    proposal(&next.to_model(model, &values), rationale.to_string())
}

fn proposal(model: &SdeModel, rationale: String) -> ModelProposal {
    ModelProposal {
        dsl_source: print_model(model),
        rationale,
    }
}

fn fresh_jump_names(taken: &[&str]) -> Vec<String> {
    let mut used: Vec<String> = taken.iter().map(|s| s.to_string()).collect();
    ["lam", "jmu", "jsig"]
        .iter()
        .map(|stem| {
            let mut name = stem.to_string();
            let mut k = 2;
            while used.contains(&name) {
                name = format!("{stem}{k}");
                k += 1;
            }
            used.push(name.clone());
            name
        })
        .collect()
}

/// Drops the first term (in parameter order) whose parameter magnitude is
/// below `tolerance`. Terms of a second equation are never removed.
pub fn prune_small_term(model: &SdeModel, tolerance: f64) -> Option<(String, SdeModel)> {
    let used = model.used_params();
    for p in &model.params {
        if p.value.abs() >= tolerance || !used.contains(&p.name.as_str()) {
            continue;
        }
        let mut shape = ModelShape::of(model);
        let before = shape.clone();
        if let Some(i) = shape.drift.iter().position(|t| t.expr.references_param(&p.name)) {
            shape.drift.remove(i);
        } else if shape.jump.as_ref().is_some_and(|j| {
            [&j.intensity, &j.mean, &j.std].iter().any(|e| e.references_param(&p.name))
        }) {
            shape.jump = None;
        } else if let Some(d) = shape.diffusion.as_mut() {
            if d.time_scale.as_ref().is_some_and(|ts| ts.references_param(&p.name)) {
                d.time_scale = None;
            } else if d.base.references_param(&p.name) {
                shape.diffusion = None;
            }
        }
        if shape != before {
            return Some((p.name.clone(), shape.to_model(model, &[])));
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::{parse_model, validate_model};

    fn diag() -> Diagnostics {
        Diagnostics {
            reversion_slope: 0.0,
            periodicity_ratio: 1.0,
            level_vol_corr: 0.0,
            residual_kurtosis: 3.0,
            dominant_frequency: 2.0,
            dominant_phase: 0.5,
            series_mean: 0.4,
        }
    }

    fn propose(model: &SdeModel, d: &Diagnostics, mode: PromptMode) -> (SdeModel, String) {
        let p = scripted_propose(model, d, mode, &Thresholds::default(), 1e-3);
        let m = parse_model(&p.dsl_source).unwrap();
        assert!(validate_model(&m).ok, "{}", p.dsl_source);
        (m, p.rationale)
    }

    #[test]
    fn reverting_gbm_gains_mean_reversion() {
        let d = Diagnostics {
            reversion_slope: -0.5,
            ..diag()
        };
        let (m, _) = propose(&SdeModel::gbm(0.1, 0.2), &d, PromptMode::Standard);
        assert_eq!(
            print_model(&m),
            "param mu = 0.1\nparam theta = 0\nparam m = 0.4\nparam sigma = 0.2\n\
             dV = ((mu*V)+(theta*(m-V))) dt + (sigma*V) dW"
        );
    }

    #[test]
    fn cascade_order_and_exhaustion() {
        let d = Diagnostics {
            reversion_slope: -0.5,
            level_vol_corr: 0.9,
            periodicity_ratio: 10.0,
            residual_kurtosis: 8.0,
            ..diag()
        };
        let mut m = parse_model("dV = mu dt + sigma dW").unwrap();
        let mut shapes = Vec::new();
        loop {
            let (next, why) = propose(&m, &d, PromptMode::Standard);
            if why == NO_CHANGE {
                assert_eq!(next, m);
                break;
            }
            shapes.push(ModelShape::of(&next).families().len());
            m = next;
        }
        assert_eq!(shapes.len(), 5);
        let shape = ModelShape::of(&m);
        assert!(shape.has_drift(DriftFamily::MeanReversion));
        assert!(shape.has_drift(DriftFamily::Seasonal));
        assert_eq!(shape.diffusion_family(), Some(DiffusionFamily::Sqrt));
        assert!(shape.jump.is_some());
        assert!(shape.is_time_scaled());
    }

    #[test]
    fn fallback_adds_time_scaling_then_stops() {
        let (m, why) = propose(&SdeModel::gbm(0.1, 0.2), &diag(), PromptMode::Standard);
        assert_eq!(why, "scale the diffusion with time");
        assert_eq!(m.params.len(), 3);
        let (m2, why) = propose(&m, &diag(), PromptMode::Standard);
        assert_eq!(why, NO_CHANGE);
        assert_eq!(m2, m);
    }

    #[test]
    fn parsimonious_removes_small_sinusoid() {
        let m = parse_model(
            "param mu = 0.1\nparam amp = 1e-5\nparam freq = 2\nparam phase = 0.3\nparam sigma = 0.2\n\
             dV = mu*V + amp*sin(6.283185307179586*freq*t + phase) dt + sigma*V dW",
        )
        .unwrap();
        let (pruned, why) = propose(&m, &diag(), PromptMode::Parsimonious);
        assert!(why.contains("amp"));
        assert_eq!(pruned, SdeModel::gbm(0.1, 0.2));
        // standard mode ignores small parameters
        let (std_next, _) = propose(&m, &diag(), PromptMode::Standard);
        assert!(std_next.params.len() > m.params.len());
    }
}
