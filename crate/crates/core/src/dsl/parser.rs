use super::lexer::{tokenize, Span, Tok, Token};
use super::{
    BinOp, Diffusion, Equation, Expr, Func, JumpSpec, Param, SdeModel, DEFAULT_PARAM_VALUE,
    VALUE_STATE,
};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParseErrorKind {
    InvalidCharacter,
    UnexpectedToken { expected: String },
    UnknownDifferential,
    UnknownFunction,
    WrongArity { expected: usize, found: usize },
    ReservedName,
    DuplicateParam,
    DuplicateState,
    UndeclaredState,
    FirstEquationNotValue,
    MissingEquation,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{column}: {} `{token}`", describe(.kind))]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: usize,
    pub column: usize,
    pub token: String,
}

fn describe(kind: &ParseErrorKind) -> String {
    match kind {
        ParseErrorKind::InvalidCharacter => "invalid character".into(),
        ParseErrorKind::UnexpectedToken { expected } => format!("expected {expected}, found"),
        ParseErrorKind::UnknownDifferential => "unknown differential token".into(),
        ParseErrorKind::UnknownFunction => "unknown function".into(),
        ParseErrorKind::WrongArity { expected, found } => {
            format!("expected {expected} argument(s), found {found} in call to")
        }
        ParseErrorKind::ReservedName => "reserved name used as identifier".into(),
        ParseErrorKind::DuplicateParam => "parameter declared twice:".into(),
        ParseErrorKind::DuplicateState => "state variable defined twice:".into(),
        ParseErrorKind::UndeclaredState => "undeclared state variable".into(),
        ParseErrorKind::FirstEquationNotValue => "first equation must define dV, found".into(),
        ParseErrorKind::MissingEquation => "model has no equation; found".into(),
    }
}

const RESERVED: [&str; 4] = ["param", "dt", "jump", "t"];

fn is_differential(name: &str) -> bool {
    name.len() >= 2
        && name.starts_with('d')
        && name[1..].starts_with(|c: char| c.is_ascii_uppercase())
}

fn brownian_driver(name: &str) -> Option<Option<usize>> {
    let rest = name.strip_prefix("dW")?;
    match rest.len() {
        0 => Some(None),
        1 => rest
            .parse::<usize>()
            .ok()
            .filter(|d| *d >= 1)
            .map(Some),
        _ => None,
    }
}

fn is_reserved(name: &str) -> bool {
    RESERVED.contains(&name) || Func::from_name(name).is_some() || brownian_driver(name).is_some()
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].tok
    }

    fn peek_at(&self, ahead: usize) -> &Tok {
        let i = (self.pos + ahead).min(self.tokens.len() - 1);
        &self.tokens[i].tok
    }

    fn span(&self) -> Span {
        self.tokens[self.pos].span
    }

    fn bump(&mut self) -> Token {
        let t = self.tokens[self.pos].clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn error_here(&self, kind: ParseErrorKind) -> ParseError {
        let t = &self.tokens[self.pos];
        error_at(kind, t.span, &t.tok.to_string())
    }

    fn expect(&mut self, tok: Tok, expected: &str) -> Result<Token, ParseError> {
        if *self.peek() == tok {
            Ok(self.bump())
        } else {
            Err(self.error_here(ParseErrorKind::UnexpectedToken {
                expected: expected.to_string(),
            }))
        }
    }

    fn expect_ident(&mut self, ident: &str) -> Result<Token, ParseError> {
        match self.peek() {
            Tok::Ident(s) if s == ident => Ok(self.bump()),
            _ => Err(self.error_here(ParseErrorKind::UnexpectedToken {
                expected: format!("`{ident}`"),
            })),
        }
    }

    fn param_decl(&mut self) -> Result<(String, Option<f64>, Span), ParseError> {
        self.bump();
        let span = self.span();
        let name = match self.peek().clone() {
            Tok::Ident(name) => {
                if is_reserved(&name) || name.starts_with(|c: char| c.is_ascii_uppercase()) {
                    return Err(self.error_here(ParseErrorKind::ReservedName));
                }
                self.bump();
                name
            }
            _ => {
                return Err(self.error_here(ParseErrorKind::UnexpectedToken {
                    expected: "parameter name".into(),
                }))
            }
        };
        if *self.peek() != Tok::Assign {
            return Ok((name, None, span));
        }
        self.bump();
        let negative = if *self.peek() == Tok::Minus {
            self.bump();
            true
        } else {
            false
        };
        match *self.peek() {
            Tok::Number(v) => {
                self.bump();
                Ok((name, Some(if negative { -v } else { v }), span))
            }
            _ => Err(self.error_here(ParseErrorKind::UnexpectedToken {
                expected: "number".into(),
            })),
        }
    }

    fn equation(&mut self, index: usize) -> Result<Equation, ParseError> {
        let head = self.bump();
        let state = match &head.tok {
            Tok::Ident(s) => s[1..].to_string(),
            _ => unreachable!("equation() called on non-identifier"),
        };
        if index == 0 && state != VALUE_STATE {
            return Err(error_at(
                ParseErrorKind::FirstEquationNotValue,
                head.span,
                &head.tok.to_string(),
            ));
        }
        self.expect(Tok::Assign, "`=`")?;
        let drift = self.expr()?;
        self.expect_ident("dt")?;

        let mut diffusion = None;
        let mut jump = None;
        while *self.peek() == Tok::Plus {
            if jump.is_some() {
                break;
            }
            self.bump();
            if matches!(self.peek(), Tok::Ident(s) if s == "jump")
                && *self.peek_at(1) == Tok::LParen
            {
                self.bump();
                self.bump();
                let intensity = self.expr()?;
                self.expect(Tok::Comma, "`,`")?;
                let mean = self.expr()?;
                self.expect(Tok::Comma, "`,`")?;
                let std = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                jump = Some(JumpSpec {
                    intensity,
                    mean,
                    std,
                });
                continue;
            }
            if diffusion.is_some() {
                return Err(self.error_here(ParseErrorKind::UnexpectedToken {
                    expected: "`jump(`".into(),
                }));
            }
            let expr = self.expr()?;
            let driver = match self.peek().clone() {
                Tok::Ident(name) => match brownian_driver(&name) {
                    Some(d) => {
                        self.bump();
                        d.unwrap_or(index + 1)
                    }
                    None if is_differential(&name) => {
                        return Err(self.error_here(ParseErrorKind::UnknownDifferential))
                    }
                    None => {
                        return Err(self.error_here(ParseErrorKind::UnexpectedToken {
                            expected: "`dW`".into(),
                        }))
                    }
                },
                _ => {
                    return Err(self.error_here(ParseErrorKind::UnexpectedToken {
                        expected: "`dW`".into(),
                    }))
                }
            };
            diffusion = Some(Diffusion { expr, driver });
        }
        let end = self.tokens[self.pos.saturating_sub(1)].span;
        Ok(Equation {
            state,
            drift,
            diffusion,
            jump,
            span: Some(Span {
                end: end.end,
                ..head.span
            }),
        })
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Tok::Plus => BinOp::Add,
                Tok::Minus => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.term()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Tok::Star => BinOp::Mul,
                Tok::Slash => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            let rhs = self.unary()?;
            lhs = Expr::bin(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                other => Expr::Neg(Box::new(other)),
            });
        }
        if *self.peek() == Tok::Plus {
            self.bump();
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.primary()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let exponent = self.unary()?;
            return Ok(Expr::bin(BinOp::Pow, base, exponent));
        }
        Ok(base)
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Number(v) => {
                self.bump();
                Ok(Expr::Const(v))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(name) => {
                if *self.peek_at(1) == Tok::LParen {
                    let Some(func) = Func::from_name(&name) else {
                        return Err(self.error_here(ParseErrorKind::UnknownFunction));
                    };
                    let at = self.pos;
                    self.bump();
                    self.bump();
                    let mut args = vec![self.expr()?];
                    while *self.peek() == Tok::Comma {
                        self.bump();
                        args.push(self.expr()?);
                    }
                    self.expect(Tok::RParen, "`)`")?;
                    if args.len() != func.arity() {
                        let t = &self.tokens[at];
                        return Err(error_at(
                            ParseErrorKind::WrongArity {
                                expected: func.arity(),
                                found: args.len(),
                            },
                            t.span,
                            &name,
                        ));
                    }
                    return Ok(Expr::Call(func, args));
                }
                if name == "t" {
                    self.bump();
                    return Ok(Expr::Time);
                }
                if is_differential(&name) {
                    return Err(self.error_here(ParseErrorKind::UnexpectedToken {
                        expected: "expression".into(),
                    }));
                }
                if is_reserved(&name) {
                    return Err(self.error_here(ParseErrorKind::ReservedName));
                }
                self.bump();
                if name.starts_with(|c: char| c.is_ascii_uppercase()) {
                    Ok(Expr::State(name))
                } else {
                    Ok(Expr::Param(name))
                }
            }
            _ => Err(self.error_here(ParseErrorKind::UnexpectedToken {
                expected: "expression".into(),
            })),
        }
    }
}

fn error_at(kind: ParseErrorKind, span: Span, token: &str) -> ParseError {
    ParseError {
        kind,
        line: span.line,
        column: span.column,
        token: token.to_string(),
    }
}

/// Parses DSL text into a model.
///
/// Parameters are reordered by first use across the equations (drift,
/// diffusion, then jump clause, equation by equation); declared but unused
/// parameters follow in declaration order.
pub fn parse_model(source: &str) -> Result<SdeModel, ParseError> {
    let tokens = tokenize(source).map_err(|e| error_at(ParseErrorKind::InvalidCharacter, e.span, &e.text))?;
    let mut p = Parser { tokens, pos: 0 };
    let mut declared: Vec<(String, Option<f64>)> = Vec::new();
    let mut equations: Vec<Equation> = Vec::new();

    loop {
        match p.peek().clone() {
            Tok::Eof => break,
            Tok::Ident(s) if s == "param" => {
                let (name, value, span) = p.param_decl()?;
                if declared.iter().any(|(n, _)| *n == name) {
                    return Err(error_at(ParseErrorKind::DuplicateParam, span, &name));
                }
                declared.push((name, value));
            }
            Tok::Ident(s) if is_differential(&s) && *p.peek_at(1) == Tok::Assign => {
                if brownian_driver(&s).is_some() {
                    return Err(p.error_here(ParseErrorKind::ReservedName));
                }
                let span = p.span();
                let eq = p.equation(equations.len())?;
                if equations.iter().any(|e| e.state == eq.state) {
                    return Err(error_at(ParseErrorKind::DuplicateState, span, &s));
                }
                equations.push(eq);
            }
            Tok::Ident(s) if is_differential(&s) => {
                return Err(p.error_here(ParseErrorKind::UnknownDifferential))
            }
            _ => {
                return Err(p.error_here(ParseErrorKind::UnexpectedToken {
                    expected: "`param` or an equation".into(),
                }))
            }
        }
    }
    if equations.is_empty() {
        return Err(p.error_here(ParseErrorKind::MissingEquation));
    }

    // With two equations every state reference must name one of them; a
    // one-equation model may reference an undefined auxiliary, which the
    // validator reports.
    if equations.len() >= 2 {
        let defined: Vec<String> = equations.iter().map(|e| e.state.clone()).collect();
        for eq in &equations {
            for e in eq.exprs() {
                let mut bad = None;
                e.visit(&mut |n| {
                    if let Expr::State(s) = n {
                        if bad.is_none() && !defined.contains(s) {
                            bad = Some(s.clone());
                        }
                    }
                });
                if let Some(s) = bad {
                    return Err(error_at(
                        ParseErrorKind::UndeclaredState,
                        eq.span.unwrap_or_default(),
                        &s,
                    ));
                }
            }
        }
    }

    let mut model = SdeModel {
        equations,
        params: Vec::new(),
        source: source.to_string(),
    };
    let used: Vec<String> = model.used_params().iter().map(|s| s.to_string()).collect();
    let lookup = |name: &str| {
        declared
            .iter()
            .find(|(n, _)| n == name)
            .and_then(|(_, v)| *v)
            .unwrap_or(DEFAULT_PARAM_VALUE)
    };
    let mut params: Vec<Param> = used
        .iter()
        .map(|n| Param {
            name: n.clone(),
            value: lookup(n),
        })
        .collect();
    for (name, value) in &declared {
        if !used.contains(name) {
            params.push(Param {
                name: name.clone(),
                value: value.unwrap_or(DEFAULT_PARAM_VALUE),
            });
        }
    }
    model.params = params;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gbm_with_declarations() {
        let m = parse_model("param mu = 0.05\nparam sigma = 0.2\ndV = mu*V dt + sigma*V dW").unwrap();
        assert_eq!(m.equations.len(), 1);
        assert_eq!(m.param_names(), vec!["mu", "sigma"]);
        assert_eq!(m.param_values(), vec![0.05, 0.2]);
        assert!(m.equations[0].jump.is_none());
        assert_eq!(m, SdeModel::gbm(0.05, 0.2));
    }

    #[test]
    fn auto_declares_at_default() {
        let m = parse_model("dV = theta*(m - V) dt + sigma*sqrt(V) dW").unwrap();
        assert_eq!(m.param_names(), vec!["theta", "m", "sigma"]);
        assert!(m.param_values().iter().all(|v| *v == 0.1));
        let eq = &m.equations[0];
        assert_eq!(
            eq.drift,
            Expr::mul(Expr::param("theta"), Expr::sub(Expr::param("m"), Expr::value()))
        );
        assert_eq!(
            eq.diffusion.as_ref().unwrap().expr,
            Expr::mul(Expr::param("sigma"), Expr::call(Func::Sqrt, vec![Expr::value()]))
        );
    }

    #[test]
    fn unknown_differential_is_rejected() {
        let err = parse_model("dV = a*V dt + s*V dQ").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownDifferential);
        assert_eq!(err.token, "dQ");
        assert_eq!((err.line, err.column), (1, 19));
    }

    #[test]
    fn unknown_function_is_rejected() {
        let err = parse_model("dV = foo(V) dt").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UnknownFunction);
        assert_eq!(err.token, "foo");
    }

    #[test]
    fn arity_checked() {
        let err = parse_model("dV = max(V) dt").unwrap_err();
        assert_eq!(
            err.kind,
            ParseErrorKind::WrongArity {
                expected: 2,
                found: 1
            }
        );
    }

    #[test]
    fn undeclared_state_in_two_equation_model() {
        let err = parse_model("dV = a*X dt + s*V dW1\ndU = b dt + c dW2").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::UndeclaredState);
        assert_eq!(err.token, "X");
    }

    #[test]
    fn first_equation_must_be_value() {
        let err = parse_model("dX = a dt").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::FirstEquationNotValue);
    }

    #[test]
    fn jump_and_stochastic_volatility() {
        let src = "dV = mu*V dt + sqrt(U)*V dW1 + jump(lam, jm, js)\ndU = k*(th - U) dt + xi*sqrt(U) dW2";
        let m = parse_model(src).unwrap();
        assert_eq!(m.equations.len(), 2);
        assert_eq!(m.aux_state(), Some("U"));
        assert_eq!(m.n_drivers(), 2);
        assert!(m.equations[0].jump.is_some());
        assert_eq!(
            m.param_names(),
            vec!["mu", "lam", "jm", "js", "k", "th", "xi"]
        );
    }

    #[test]
    fn bare_brownian_follows_equation_index() {
        let m = parse_model("dV = a dt + b dW\ndU = c dt + d dW").unwrap();
        assert_eq!(m.equations[0].diffusion.as_ref().unwrap().driver, 1);
        assert_eq!(m.equations[1].diffusion.as_ref().unwrap().driver, 2);
    }

    #[test]
    fn whitespace_and_comments_are_insignificant() {
        let a = parse_model("# GBM\nparam mu=0.05 param sigma=0.2 dV=mu*V dt+sigma*V dW").unwrap();
        let b = parse_model("param mu = 0.05\n\nparam sigma = 0.2  # vol\ndV =\n  mu * V dt\n  + sigma * V dW\n").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sums_inside_diffusion_clause() {
        let m = parse_model("dV = a + b*V dt + s + c*V dW").unwrap();
        let eq = &m.equations[0];
        assert_eq!(eq.drift.additive_terms().len(), 2);
        assert_eq!(eq.diffusion.as_ref().unwrap().expr.additive_terms().len(), 2);
    }

    #[test]
    fn negative_literals_fold() {
        let m = parse_model("param a = -0.5\ndV = -2*V dt + -0.1 dW").unwrap();
        assert_eq!(m.params[0].value, -0.5);
        assert_eq!(m.equations[0].diffusion.as_ref().unwrap().expr, Expr::Const(-0.1));
    }

    #[test]
    fn duplicate_param_rejected() {
        let err = parse_model("param a = 1\nparam a = 2\ndV = a dt").unwrap_err();
        assert_eq!(err.kind, ParseErrorKind::DuplicateParam);
    }

    #[test]
    fn reserved_names_rejected() {
        assert_eq!(
            parse_model("param dt = 1\ndV = a dt").unwrap_err().kind,
            ParseErrorKind::ReservedName
        );
        assert!(parse_model("dV = a*dt dt").is_err());
    }

    #[test]
    fn missing_equation() {
        assert_eq!(
            parse_model("param a = 1").unwrap_err().kind,
            ParseErrorKind::MissingEquation
        );
    }

    #[test]
    fn unused_declarations_trail() {
        let m = parse_model("param z = 3\nparam mu = 1\ndV = mu*V dt").unwrap();
        assert_eq!(m.param_names(), vec!["mu", "z"]);
    }
}
