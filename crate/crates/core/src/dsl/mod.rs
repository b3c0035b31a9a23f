//! Textual model language for one- and two-equation SDEs.
//!
//! A model is a list of parameter declarations followed by one or two
//! equations of the form
//!
//! ```text
//! param mu = 0.05
//! param sigma = 0.2
//! dV = mu*V dt + sigma*V dW + jump(lambda, jm, js)
//! ```
//!
//! Identifiers starting with an uppercase letter are state variables, `t` is
//! time, and every other identifier is a parameter. Parameters that are used
//! without a `param` line are declared implicitly with value
//! [`DEFAULT_PARAM_VALUE`].

mod catalogue;
mod eval;
mod lexer;
mod parser;
mod printer;
mod validate;

pub use catalogue::{
    fresh_names, DiffusionFamily, DiffusionTerm, DriftFamily, DriftTerm, ModelShape, TermFamily,
};
pub use eval::{eval_expr, CompiledExpr, EvalError};
pub use lexer::Span;
pub use parser::{parse_model, ParseError};
pub use printer::{print_expr, print_model};
pub use validate::{validate_model, Issue, IssueCode, Severity, ValidationReport};

use std::fmt;

/// Initial value given to parameters declared without one.
pub const DEFAULT_PARAM_VALUE: f64 = 0.1;
/// Largest number of parameters a valid model may declare.
pub const MAX_PARAMS: usize = 12;
/// Largest number of equations a valid model may contain.
pub const MAX_EQUATIONS: usize = 2;
/// Name of the value process driven by equation 1.
pub const VALUE_STATE: &str = "V";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Sqrt,
    Exp,
    Log,
    Sin,
    Cos,
    Tanh,
    Abs,
    Max,
    Min,
}

impl Func {
    pub const ALL: [Func; 9] = [
        Func::Sqrt,
        Func::Exp,
        Func::Log,
        Func::Sin,
        Func::Cos,
        Func::Tanh,
        Func::Abs,
        Func::Max,
        Func::Min,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Func::Sqrt => "sqrt",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
            Func::Max => "max",
            Func::Min => "min",
        }
    }

    pub fn from_name(name: &str) -> Option<Func> {
        Func::ALL.into_iter().find(|f| f.name() == name)
    }

    pub fn arity(self) -> usize {
        match self {
            Func::Max | Func::Min => 2,
            _ => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    pub fn symbol(self) -> char {
        match self {
            BinOp::Add => '+',
            BinOp::Sub => '-',
            BinOp::Mul => '*',
            BinOp::Div => '/',
            BinOp::Pow => '^',
        }
    }
}

/// Expression tree for drift, diffusion and jump coefficients.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    /// A state variable: `V` or the auxiliary process.
    State(String),
    /// The time variable `t`.
    Time,
    Param(String),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

impl Expr {
    pub fn param(name: &str) -> Expr {
        Expr::Param(name.to_string())
    }

    pub fn state(name: &str) -> Expr {
        Expr::State(name.to_string())
    }

    pub fn value() -> Expr {
        Expr::State(VALUE_STATE.to_string())
    }

    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn add(lhs: Expr, rhs: Expr) -> Expr {
        Expr::bin(BinOp::Add, lhs, rhs)
    }

    pub fn sub(lhs: Expr, rhs: Expr) -> Expr {
        Expr::bin(BinOp::Sub, lhs, rhs)
    }

    pub fn mul(lhs: Expr, rhs: Expr) -> Expr {
        Expr::bin(BinOp::Mul, lhs, rhs)
    }

    pub fn div(lhs: Expr, rhs: Expr) -> Expr {
        Expr::bin(BinOp::Div, lhs, rhs)
    }

    pub fn call(func: Func, args: Vec<Expr>) -> Expr {
        Expr::Call(func, args)
    }

    /// Pre-order, left-to-right walk.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Neg(e) => e.visit(f),
            Expr::Binary(_, l, r) => {
                l.visit(f);
                r.visit(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.visit(f)),
            Expr::Const(_) | Expr::State(_) | Expr::Time | Expr::Param(_) => {}
        }
    }

    /// Parameter names in order of first appearance.
    pub fn params(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        self.visit(&mut |e| {
            if let Expr::Param(p) = e {
                if !out.contains(&p.as_str()) {
                    out.push(p);
                }
            }
        });
        out
    }

    pub fn references_param(&self, name: &str) -> bool {
        let mut found = false;
        self.visit(&mut |e| {
            if matches!(e, Expr::Param(p) if p == name) {
                found = true;
            }
        });
        found
    }

    pub fn references_state(&self, name: &str) -> bool {
        let mut found = false;
        self.visit(&mut |e| {
            if matches!(e, Expr::State(s) if s == name) {
                found = true;
            }
        });
        found
    }

    /// Splits a sum into its additive terms. Subtractions are kept as terms of
    /// the enclosing sum only when they appear at the top level as `a + b`.
    pub fn additive_terms(&self) -> Vec<&Expr> {
        match self {
            Expr::Binary(BinOp::Add, l, r) => {
                let mut out = l.additive_terms();
                out.extend(r.additive_terms());
                out
            }
            other => vec![other],
        }
    }

    /// Left-folded sum of `terms`; the empty sum is the constant 0.
    pub fn sum(terms: impl IntoIterator<Item = Expr>) -> Expr {
        terms
            .into_iter()
            .reduce(Expr::add)
            .unwrap_or(Expr::Const(0.0))
    }

    /// A literal that is negative as written.
    pub fn is_negative_constant(&self) -> bool {
        match self {
            Expr::Const(c) => *c < 0.0,
            Expr::Neg(inner) => matches!(**inner, Expr::Const(c) if c > 0.0),
            _ => false,
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_expr(self))
    }
}

/// Compound-Poisson jump attached to one equation.
#[derive(Debug, Clone, PartialEq)]
pub struct JumpSpec {
    /// Events per unit time.
    pub intensity: Expr,
    pub mean: Expr,
    pub std: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diffusion {
    pub expr: Expr,
    /// 1-based Brownian driver index.
    pub driver: usize,
}

#[derive(Debug, Clone)]
pub struct Equation {
    pub state: String,
    pub drift: Expr,
    pub diffusion: Option<Diffusion>,
    pub jump: Option<JumpSpec>,
    /// Location of the equation in its source text, if parsed.
    pub span: Option<Span>,
}

impl PartialEq for Equation {
    fn eq(&self, other: &Self) -> bool {
        self.state == other.state
            && self.drift == other.drift
            && self.diffusion == other.diffusion
            && self.jump == other.jump
    }
}

impl Equation {
    pub fn new(state: &str, drift: Expr, diffusion: Option<Expr>) -> Equation {
        Equation {
            state: state.to_string(),
            drift,
            diffusion: diffusion.map(|expr| Diffusion { expr, driver: 1 }),
            jump: None,
            span: None,
        }
    }

    /// Every expression of the equation in canonical order.
    pub fn exprs(&self) -> Vec<&Expr> {
        let mut out = vec![&self.drift];
        if let Some(d) = &self.diffusion {
            out.push(&d.expr);
        }
        if let Some(j) = &self.jump {
            out.extend([&j.intensity, &j.mean, &j.std]);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: f64,
}

/// A parsed model. Equality ignores the source text and spans.
#[derive(Debug, Clone)]
pub struct SdeModel {
    pub equations: Vec<Equation>,
    pub params: Vec<Param>,
    pub source: String,
}

impl PartialEq for SdeModel {
    fn eq(&self, other: &Self) -> bool {
        self.equations == other.equations && self.params == other.params
    }
}

impl SdeModel {
    /// Builds a model from equations, declaring parameters in first-use order.
    /// Values come from `values` when named there, otherwise the default.
    pub fn from_equations(equations: Vec<Equation>, values: &[(&str, f64)]) -> SdeModel {
        let mut model = SdeModel {
            equations,
            params: Vec::new(),
            source: String::new(),
        };
        model.params = model
            .used_params()
            .into_iter()
            .map(|name| Param {
                value: values
                    .iter()
                    .find(|(n, _)| *n == name)
                    .map(|(_, v)| *v)
                    .unwrap_or(DEFAULT_PARAM_VALUE),
                name: name.to_string(),
            })
            .collect();
        model.source = print_model(&model);
        model
    }

    /// Geometric Brownian motion `dV = mu*V dt + sigma*V dW`.
    pub fn gbm(mu: f64, sigma: f64) -> SdeModel {
        let eq = Equation::new(
            VALUE_STATE,
            Expr::mul(Expr::param("mu"), Expr::value()),
            Some(Expr::mul(Expr::param("sigma"), Expr::value())),
        );
        SdeModel::from_equations(vec![eq], &[("mu", mu), ("sigma", sigma)])
    }

    pub fn param_names(&self) -> Vec<&str> {
        self.params.iter().map(|p| p.name.as_str()).collect()
    }

    pub fn param_values(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.value).collect()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// Returns a copy with parameter values replaced; `values` follows
    /// `self.params` order.
    pub fn with_values(&self, values: &[f64]) -> SdeModel {
        assert_eq!(values.len(), self.params.len(), "parameter count mismatch");
        let mut out = self.clone();
        for (p, v) in out.params.iter_mut().zip(values) {
            p.value = *v;
        }
        out.source = print_model(&out);
        out
    }

    /// Parameters referenced by any expression, in first-use order.
    pub fn used_params(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for eq in &self.equations {
            for e in eq.exprs() {
                for p in e.params() {
                    if !out.contains(&p) {
                        out.push(p);
                    }
                }
            }
        }
        out
    }

    /// Auxiliary state name, when a second equation exists.
    pub fn aux_state(&self) -> Option<&str> {
        self.equations.get(1).map(|e| e.state.as_str())
    }

    /// Number of Brownian drivers the model consumes.
    pub fn n_drivers(&self) -> usize {
        self.equations
            .iter()
            .filter_map(|e| e.diffusion.as_ref().map(|d| d.driver))
            .max()
            .unwrap_or(1)
            .max(1)
    }

    pub fn has_jump(&self) -> bool {
        self.equations.iter().any(|e| e.jump.is_some())
    }

    /// True when a jump intensity depends on a parameter, which makes the
    /// simulated paths piecewise constant in that parameter.
    pub fn has_parametric_intensity(&self) -> bool {
        self.equations.iter().any(|e| {
            e.jump
                .as_ref()
                .is_some_and(|j| !j.intensity.params().is_empty())
        })
    }
}

impl fmt::Display for SdeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&print_model(self))
    }
}
