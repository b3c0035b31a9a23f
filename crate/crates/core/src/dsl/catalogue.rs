//! The fixed catalogue of term families and a structural view of models
//! assembled from them.

use super::{parse_model, Diffusion, Equation, Expr, JumpSpec, SdeModel, VALUE_STATE};
use std::f64::consts::TAU;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DriftFamily {
    Constant,
    Linear,
    MeanReversion,
    SqrtDrift,
    Seasonal,
    Logistic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DiffusionFamily {
    Constant,
    Level,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TermFamily {
    Drift(DriftFamily),
    Diffusion(DiffusionFamily),
    /// Multiplies the diffusion by `(1 + b*t)`.
    TimeScaled,
}

impl TermFamily {
    pub const ALL: [TermFamily; 10] = [
        TermFamily::Drift(DriftFamily::Constant),
        TermFamily::Drift(DriftFamily::Linear),
        TermFamily::Drift(DriftFamily::MeanReversion),
        TermFamily::Drift(DriftFamily::SqrtDrift),
        TermFamily::Drift(DriftFamily::Seasonal),
        TermFamily::Drift(DriftFamily::Logistic),
        TermFamily::Diffusion(DiffusionFamily::Constant),
        TermFamily::Diffusion(DiffusionFamily::Level),
        TermFamily::Diffusion(DiffusionFamily::Sqrt),
        TermFamily::TimeScaled,
    ];

    /// Base names of the family's parameters.
    pub fn param_stems(self) -> &'static [&'static str] {
        match self {
            TermFamily::Drift(DriftFamily::Constant) => &["c"],
            TermFamily::Drift(DriftFamily::Linear) => &["mu"],
            TermFamily::Drift(DriftFamily::MeanReversion) => &["theta", "m"],
            TermFamily::Drift(DriftFamily::SqrtDrift) => &["a"],
            TermFamily::Drift(DriftFamily::Seasonal) => &["amp", "freq", "phase"],
            TermFamily::Drift(DriftFamily::Logistic) => &["r", "cap"],
            TermFamily::Diffusion(_) => &["sigma"],
            TermFamily::TimeScaled => &["b"],
        }
    }

    fn source(self, n: &[String]) -> String {
        match self {
            TermFamily::Drift(DriftFamily::Constant) => n[0].clone(),
            TermFamily::Drift(DriftFamily::Linear) => format!("{}*V", n[0]),
            TermFamily::Drift(DriftFamily::MeanReversion) => format!("{}*({} - V)", n[0], n[1]),
            TermFamily::Drift(DriftFamily::SqrtDrift) => format!("{}*sqrt(V)", n[0]),
            TermFamily::Drift(DriftFamily::Seasonal) => {
                format!("{}*sin({TAU}*{}*t + {})", n[0], n[1], n[2])
            }
            TermFamily::Drift(DriftFamily::Logistic) => {
                format!("{}*V*(1 - V/{})", n[0], n[1])
            }
            TermFamily::Diffusion(DiffusionFamily::Constant) => n[0].clone(),
            TermFamily::Diffusion(DiffusionFamily::Level) => format!("{}*V", n[0]),
            TermFamily::Diffusion(DiffusionFamily::Sqrt) => format!("{}*sqrt(V)", n[0]),
            TermFamily::TimeScaled => format!("1 + {}*t", n[0]),
        }
    }

    /// The family's expression with the given parameter names.
    pub fn expr(self, names: &[String]) -> Expr {
        assert_eq!(names.len(), self.param_stems().len());
        let src = format!("dV = {} dt", self.source(names));
        parse_model(&src)
            .expect("catalogue templates parse")
            .equations
            .remove(0)
            .drift
    }

    fn template(self) -> Expr {
        let names: Vec<String> = self.param_stems().iter().map(|s| s.to_string()).collect();
        self.expr(&names)
    }
}

impl fmt::Display for TermFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            TermFamily::Drift(DriftFamily::Constant) => "constant drift",
            TermFamily::Drift(DriftFamily::Linear) => "linear drift",
            TermFamily::Drift(DriftFamily::MeanReversion) => "mean reversion",
            TermFamily::Drift(DriftFamily::SqrtDrift) => "square-root drift",
            TermFamily::Drift(DriftFamily::Seasonal) => "seasonal drift",
            TermFamily::Drift(DriftFamily::Logistic) => "logistic growth",
            TermFamily::Diffusion(DiffusionFamily::Constant) => "constant diffusion",
            TermFamily::Diffusion(DiffusionFamily::Level) => "level-proportional diffusion",
            TermFamily::Diffusion(DiffusionFamily::Sqrt) => "square-root diffusion",
            TermFamily::TimeScaled => "time-scaled diffusion",
        };
        f.write_str(s)
    }
}

/// Structural equality where any parameter matches any parameter.
fn same_shape(expr: &Expr, template: &Expr) -> bool {
    match (expr, template) {
        (Expr::Param(_), Expr::Param(_)) => true,
        (Expr::Const(a), Expr::Const(b)) => a == b,
        (Expr::State(a), Expr::State(b)) => a == b,
        (Expr::Time, Expr::Time) => true,
        (Expr::Neg(a), Expr::Neg(b)) => same_shape(a, b),
        (Expr::Binary(o1, l1, r1), Expr::Binary(o2, l2, r2)) => {
            o1 == o2 && same_shape(l1, l2) && same_shape(r1, r2)
        }
        (Expr::Call(f1, a1), Expr::Call(f2, a2)) => {
            f1 == f2 && a1.len() == a2.len() && a1.iter().zip(a2).all(|(x, y)| same_shape(x, y))
        }
        _ => false,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftTerm {
    /// `None` for terms outside the catalogue.
    pub family: Option<DriftFamily>,
    pub expr: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionTerm {
    pub family: Option<DiffusionFamily>,
    pub base: Expr,
    /// The `(1 + b*t)` factor, when present.
    pub time_scale: Option<Expr>,
    pub driver: usize,
}

impl DiffusionTerm {
    pub fn expr(&self) -> Expr {
        match &self.time_scale {
            Some(ts) => Expr::mul(self.base.clone(), ts.clone()),
            None => self.base.clone(),
        }
    }
}

/// Equation 1 of a model split into catalogue terms, plus anything else the
/// model carries verbatim.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelShape {
    pub drift: Vec<DriftTerm>,
    pub diffusion: Option<DiffusionTerm>,
    pub jump: Option<JumpSpec>,
    pub extra_equations: Vec<Equation>,
}

impl ModelShape {
    pub fn of(model: &SdeModel) -> ModelShape {
        let eq = &model.equations[0];
        let drift = eq
            .drift
            .additive_terms()
            .into_iter()
            .filter(|e| **e != Expr::Const(0.0))
            .map(|e| DriftTerm {
                family: recognize_drift(e),
                expr: e.clone(),
            })
            .collect();
        let diffusion = eq.diffusion.as_ref().map(|d| {
            let (base, time_scale) = split_time_scale(&d.expr);
            DiffusionTerm {
                family: recognize_diffusion(base),
                base: base.clone(),
                time_scale: time_scale.cloned(),
                driver: d.driver,
            }
        });
        ModelShape {
            drift,
            diffusion,
            jump: eq.jump.clone(),
            extra_equations: model.equations[1..].to_vec(),
        }
    }

    pub fn has_drift(&self, family: DriftFamily) -> bool {
        self.drift.iter().any(|t| t.family == Some(family))
    }

    pub fn diffusion_family(&self) -> Option<DiffusionFamily> {
        self.diffusion.as_ref().and_then(|d| d.family)
    }

    pub fn is_time_scaled(&self) -> bool {
        self.diffusion.as_ref().is_some_and(|d| d.time_scale.is_some())
    }

    /// Families present, in catalogue order.
    pub fn families(&self) -> Vec<TermFamily> {
        TermFamily::ALL
            .into_iter()
            .filter(|f| match f {
                TermFamily::Drift(d) => self.has_drift(*d),
                TermFamily::Diffusion(d) => self.diffusion_family() == Some(*d),
                TermFamily::TimeScaled => self.is_time_scaled(),
            })
            .collect()
    }

    pub fn to_equations(&self) -> Vec<Equation> {
        let first = Equation {
            state: VALUE_STATE.to_string(),
            drift: Expr::sum(self.drift.iter().map(|t| t.expr.clone())),
            diffusion: self.diffusion.as_ref().map(|d| Diffusion {
                expr: d.expr(),
                driver: d.driver,
            }),
            jump: self.jump.clone(),
            span: None,
        };
        let mut out = vec![first];
        out.extend(self.extra_equations.iter().cloned());
        out
    }

    /// Rebuilds a model, taking parameter values from `values` first and
    /// `previous` second.
    pub fn to_model(&self, previous: &SdeModel, values: &[(String, f64)]) -> SdeModel {
        let mut merged: Vec<(&str, f64)> = values.iter().map(|(n, v)| (n.as_str(), *v)).collect();
        merged.extend(previous.params.iter().map(|p| (p.name.as_str(), p.value)));
        SdeModel::from_equations(self.to_equations(), &merged)
    }
}

fn recognize_drift(e: &Expr) -> Option<DriftFamily> {
    TermFamily::ALL.into_iter().find_map(|f| match f {
        TermFamily::Drift(d) if same_shape(e, &f.template()) => Some(d),
        _ => None,
    })
}

fn recognize_diffusion(e: &Expr) -> Option<DiffusionFamily> {
    TermFamily::ALL.into_iter().find_map(|f| match f {
        TermFamily::Diffusion(d) if same_shape(e, &f.template()) => Some(d),
        _ => None,
    })
}

fn split_time_scale(e: &Expr) -> (&Expr, Option<&Expr>) {
    if let Expr::Binary(super::BinOp::Mul, base, factor) = e {
        if same_shape(factor, &TermFamily::TimeScaled.template()) {
            return (base, Some(factor));
        }
    }
    (e, None)
}

/// Picks parameter names for `family` that do not clash with `taken`.
pub fn fresh_names(family: TermFamily, taken: &[&str]) -> Vec<String> {
    let mut used: Vec<String> = taken.iter().map(|s| s.to_string()).collect();
    family
        .param_stems()
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

#[cfg(test)]
mod tests {
    use super::super::{parse_model, print_model, validate_model};
    use super::*;

    fn model_with(family: TermFamily) -> SdeModel {
        let names: Vec<String> = family.param_stems().iter().map(|s| s.to_string()).collect();
        let term = family.expr(&names);
        let eq = match family {
            TermFamily::Drift(_) => Equation::new("V", term, Some(Expr::mul(Expr::param("s"), Expr::value()))),
            TermFamily::Diffusion(_) => Equation::new("V", Expr::param("k"), Some(term)),
            TermFamily::TimeScaled => Equation::new(
                "V",
                Expr::param("k"),
                Some(Expr::mul(Expr::param("s"), term)),
            ),
        };
        SdeModel::from_equations(vec![eq], &[])
    }

    #[test]
    fn every_family_round_trips_and_is_recognized() {
        for family in TermFamily::ALL {
            let m = model_with(family);
            assert!(validate_model(&m).ok, "{family}");
            let back = parse_model(&print_model(&m)).unwrap();
            assert_eq!(back, m, "{family}");
            let shape = ModelShape::of(&back);
            assert!(shape.families().contains(&family), "{family}: {:?}", shape.families());
        }
    }

    #[test]
    fn gbm_shape() {
        let shape = ModelShape::of(&SdeModel::gbm(0.1, 0.2));
        assert_eq!(
            shape.families(),
            vec![
                TermFamily::Drift(DriftFamily::Linear),
                TermFamily::Diffusion(DiffusionFamily::Level)
            ]
        );
    }

    #[test]
    fn recognizes_renamed_parameters() {
        let m = parse_model("dV = k2*(lvl - V) + mu*V dt + vol*sqrt(V)*(1 + slope*t) dW").unwrap();
        let shape = ModelShape::of(&m);
        assert!(shape.has_drift(DriftFamily::MeanReversion));
        assert!(shape.has_drift(DriftFamily::Linear));
        assert_eq!(shape.diffusion_family(), Some(DiffusionFamily::Sqrt));
        assert!(shape.is_time_scaled());
        let rebuilt = shape.to_model(&m, &[]);
        assert_eq!(rebuilt, m);
    }

    #[test]
    fn unknown_terms_are_kept() {
        let m = parse_model("dV = tanh(q*V) + mu*V dt").unwrap();
        let shape = ModelShape::of(&m);
        assert_eq!(shape.drift[0].family, None);
        assert_eq!(shape.to_model(&m, &[]), m);
    }

    #[test]
    fn fresh_names_avoid_clashes() {
        let n = fresh_names(TermFamily::Drift(DriftFamily::MeanReversion), &["theta", "m", "m2"]);
        assert_eq!(n, vec!["theta2", "m3"]);
    }
}
