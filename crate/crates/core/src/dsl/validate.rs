use super::{Expr, SdeModel, Span, MAX_EQUATIONS, MAX_PARAMS, VALUE_STATE};
use serde::Serialize;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueCode {
    TooManyEquations,
    ParamBudget,
    UndefinedState,
    UndeclaredParam,
    NegativeDiffusion,
    NegativeJumpStd,
    MultipleJumps,
    DriverRange,
    FirstStateNotValue,
    UnusedParam,
}

impl IssueCode {
    pub fn as_str(self) -> &'static str {
        match self {
            IssueCode::TooManyEquations => "TOO_MANY_EQUATIONS",
            IssueCode::ParamBudget => "PARAM_BUDGET",
            IssueCode::UndefinedState => "UNDEFINED_STATE",
            IssueCode::UndeclaredParam => "UNDECLARED_PARAM",
            IssueCode::NegativeDiffusion => "NEGATIVE_DIFFUSION",
            IssueCode::NegativeJumpStd => "NEGATIVE_JUMP_STD",
            IssueCode::MultipleJumps => "MULTIPLE_JUMPS",
            IssueCode::DriverRange => "DRIVER_RANGE",
            IssueCode::FirstStateNotValue => "FIRST_STATE_NOT_VALUE",
            IssueCode::UnusedParam => "UNUSED_PARAM",
        }
    }
}

impl fmt::Display for IssueCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Issue {
    pub code: IssueCode,
    pub severity: Severity,
    pub message: String,
    #[serde(skip)]
    pub span: Option<Span>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub ok: bool,
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Issue> {
        self.issues.iter().filter(|i| i.severity == Severity::Error)
    }

    pub fn has(&self, code: IssueCode) -> bool {
        self.issues.iter().any(|i| i.code == code)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return f.write_str("ok");
        }
        for (i, issue) in self.issues.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            let sev = match issue.severity {
                Severity::Error => "error",
                Severity::Warning => "warning",
            };
            match issue.span {
                Some(s) => write!(f, "{sev}[{}] {}: {}", issue.code, s, issue.message)?,
                None => write!(f, "{sev}[{}] {}", issue.code, issue.message)?,
            }
        }
        Ok(())
    }
}

pub fn validate_model(model: &SdeModel) -> ValidationReport {
    let mut issues = Vec::new();
    let mut push = |code, severity, message: String, span| {
        issues.push(Issue {
            code,
            severity,
            message,
            span,
        })
    };

    if model.equations.len() > MAX_EQUATIONS {
        push(
            IssueCode::TooManyEquations,
            Severity::Error,
            format!(
                "{} equations; at most {MAX_EQUATIONS} allowed",
                model.equations.len()
            ),
            model.equations[MAX_EQUATIONS].span,
        );
    }
    if model.params.len() > MAX_PARAMS {
        push(
            IssueCode::ParamBudget,
            Severity::Error,
            format!("{} parameters; at most {MAX_PARAMS} allowed", model.params.len()),
            None,
        );
    }
    if let Some(first) = model.equations.first() {
        if first.state != VALUE_STATE {
            push(
                IssueCode::FirstStateNotValue,
                Severity::Error,
                format!("first equation defines d{}, expected dV", first.state),
                first.span,
            );
        }
    }

    let defined: Vec<&str> = model.equations.iter().map(|e| e.state.as_str()).collect();
    let n_eq = model.equations.len();
    let mut jumps = 0;
    for eq in &model.equations {
        let mut undefined: Vec<&str> = Vec::new();
        for e in eq.exprs() {
            e.visit(&mut |n| {
                if let Expr::State(s) = n {
                    if !defined.contains(&s.as_str()) && !undefined.contains(&s.as_str()) {
                        undefined.push(s);
                    }
                }
            });
        }
        for s in undefined {
            push(
                IssueCode::UndefinedState,
                Severity::Error,
                format!("state variable {s} is used but has no equation"),
                eq.span,
            );
        }
        if let Some(d) = &eq.diffusion {
            if d.expr.is_negative_constant() {
                push(
                    IssueCode::NegativeDiffusion,
                    Severity::Error,
                    format!("diffusion of d{} is a negative constant", eq.state),
                    eq.span,
                );
            }
            if d.driver == 0 || d.driver > n_eq.clamp(1, MAX_EQUATIONS) {
                push(
                    IssueCode::DriverRange,
                    Severity::Error,
                    format!("dW{} is outside the model's drivers", d.driver),
                    eq.span,
                );
            }
        }
        if let Some(j) = &eq.jump {
            jumps += 1;
            if j.std.is_negative_constant() {
                push(
                    IssueCode::NegativeJumpStd,
                    Severity::Error,
                    format!("jump std of d{} is a negative constant", eq.state),
                    eq.span,
                );
            }
        }
    }
    if jumps > 1 {
        push(
            IssueCode::MultipleJumps,
            Severity::Error,
            format!("{jumps} equations carry a jump term; at most one allowed"),
            None,
        );
    }

    let used = model.used_params();
    for name in &used {
        if model.param_index(name).is_none() {
            push(
                IssueCode::UndeclaredParam,
                Severity::Error,
                format!("parameter {name} is used but not declared"),
                None,
            );
        }
    }
    for p in &model.params {
        if !used.contains(&p.name.as_str()) {
            push(
                IssueCode::UnusedParam,
                Severity::Warning,
                format!("parameter {} is declared but never used", p.name),
                None,
            );
        }
    }

    let ok = !issues.iter().any(|i| i.severity == Severity::Error);
    ValidationReport { ok, issues }
}
