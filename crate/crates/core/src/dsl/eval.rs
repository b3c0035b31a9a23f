use super::{BinOp, Expr, Func, SdeModel, VALUE_STATE};
use crate::dual::Scalar;
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("unbound symbol `{0}`")]
    Unbound(String),
}

#[inline]
fn apply_bin<S: Scalar>(op: BinOp, a: S, b: S) -> S {
    match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => a / b,
        BinOp::Pow => a.pow(b),
    }
}

#[inline]
fn apply_func<S: Scalar>(f: Func, a: S, b: Option<S>) -> S {
    match f {
        Func::Sqrt => a.sqrt_clamped(),
        Func::Exp => a.exp(),
        Func::Log => a.ln_clamped(),
        Func::Sin => a.sin(),
        Func::Cos => a.cos(),
        Func::Tanh => a.tanh(),
        Func::Abs => a.abs(),
        Func::Max => a.max(b.expect("max takes two arguments")),
        Func::Min => a.min(b.expect("min takes two arguments")),
    }
}

/// Evaluates `expr` with every state variable and parameter looked up by name
/// in `bindings` and time bound to `t`.
///
/// `sqrt` and `log` clamp their arguments at 0 and 1e-12.
pub fn eval_expr(expr: &Expr, bindings: &HashMap<String, f64>, t: f64) -> Result<f64, EvalError> {
    let lookup = |name: &str| {
        bindings
            .get(name)
            .copied()
            .ok_or_else(|| EvalError::Unbound(name.to_string()))
    };
    Ok(match expr {
        Expr::Const(c) => *c,
        Expr::Time => t,
        Expr::State(s) | Expr::Param(s) => lookup(s)?,
        Expr::Neg(e) => -eval_expr(e, bindings, t)?,
        Expr::Binary(op, l, r) => apply_bin(*op, eval_expr(l, bindings, t)?, eval_expr(r, bindings, t)?),
        Expr::Call(f, args) => {
            let a = eval_expr(&args[0], bindings, t)?;
            let b = match args.get(1) {
                Some(e) => Some(eval_expr(e, bindings, t)?),
                None => None,
            };
            apply_func(*f, a, b)
        }
    })
}

/// Expression with symbols resolved to slots, for repeated evaluation inside
/// the simulator.
#[derive(Debug, Clone, PartialEq)]
pub enum CompiledExpr {
    Const(f64),
    Value,
    Aux,
    Time,
    Param(usize),
    Neg(Box<CompiledExpr>),
    Binary(BinOp, Box<CompiledExpr>, Box<CompiledExpr>),
    Call(Func, Box<CompiledExpr>, Option<Box<CompiledExpr>>),
}

impl CompiledExpr {
    /// Resolves names against `model`: `V` is the value state, the second
    /// equation's state is the auxiliary, parameters index `model.params`.
    pub fn compile(expr: &Expr, model: &SdeModel) -> Result<CompiledExpr, EvalError> {
        let aux = model.aux_state();
        Ok(match expr {
            Expr::Const(c) => CompiledExpr::Const(*c),
            Expr::Time => CompiledExpr::Time,
            Expr::State(s) if s == VALUE_STATE => CompiledExpr::Value,
            Expr::State(s) if Some(s.as_str()) == aux => CompiledExpr::Aux,
            Expr::State(s) => return Err(EvalError::Unbound(s.clone())),
            Expr::Param(p) => CompiledExpr::Param(
                model
                    .param_index(p)
                    .ok_or_else(|| EvalError::Unbound(p.clone()))?,
            ),
            Expr::Neg(e) => CompiledExpr::Neg(Box::new(Self::compile(e, model)?)),
            Expr::Binary(op, l, r) => CompiledExpr::Binary(
                *op,
                Box::new(Self::compile(l, model)?),
                Box::new(Self::compile(r, model)?),
            ),
            Expr::Call(f, args) => CompiledExpr::Call(
                *f,
                Box::new(Self::compile(&args[0], model)?),
                match args.get(1) {
                    Some(a) => Some(Box::new(Self::compile(a, model)?)),
                    None => None,
                },
            ),
        })
    }

    #[inline]
    pub fn eval<S: Scalar>(&self, value: S, aux: S, t: f64, params: &[S]) -> S {
        match self {
            CompiledExpr::Const(c) => S::cst(*c),
            CompiledExpr::Value => value,
            CompiledExpr::Aux => aux,
            CompiledExpr::Time => S::cst(t),
            CompiledExpr::Param(i) => params[*i],
            CompiledExpr::Neg(e) => -e.eval(value, aux, t, params),
            CompiledExpr::Binary(op, l, r) => {
                apply_bin(*op, l.eval(value, aux, t, params), r.eval(value, aux, t, params))
            }
            CompiledExpr::Call(f, a, b) => apply_func(
                *f,
                a.eval(value, aux, t, params),
                b.as_ref().map(|b| b.eval(value, aux, t, params)),
            ),
        }
    }

    /// True if no parameter slot appears in the expression.
    pub fn is_param_free(&self) -> bool {
        match self {
            CompiledExpr::Param(_) => false,
            CompiledExpr::Neg(e) => e.is_param_free(),
            CompiledExpr::Binary(_, l, r) => l.is_param_free() && r.is_param_free(),
            CompiledExpr::Call(_, a, b) => {
                a.is_param_free() && b.as_ref().is_none_or(|b| b.is_param_free())
            }
            _ => true,
        }
    }
}
