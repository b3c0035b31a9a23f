use super::{Expr, SdeModel};
use std::fmt::Write;

/// Canonical text of an expression: every operator node is parenthesized,
/// leaves and calls are bare.
pub fn print_expr(expr: &Expr) -> String {
    let mut out = String::new();
    write_expr(&mut out, expr);
    out
}

fn write_expr(out: &mut String, expr: &Expr) {
    match expr {
        Expr::Const(c) if *c < 0.0 || (*c == 0.0 && c.is_sign_negative()) => {
            let _ = write!(out, "(-{})", -c);
        }
        Expr::Const(c) => {
            let _ = write!(out, "{c}");
        }
        Expr::State(s) | Expr::Param(s) => out.push_str(s),
        Expr::Time => out.push('t'),
        Expr::Neg(inner) => {
            out.push_str("(-");
            write_expr(out, inner);
            out.push(')');
        }
        Expr::Binary(op, l, r) => {
            out.push('(');
            write_expr(out, l);
            out.push(op.symbol());
            write_expr(out, r);
            out.push(')');
        }
        Expr::Call(f, args) => {
            out.push_str(f.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, a);
            }
            out.push(')');
        }
    }
}

/// Canonical DSL text: one `param` line per parameter in model order, then
/// one line per equation. No trailing newline.
pub fn print_model(model: &SdeModel) -> String {
    let mut lines: Vec<String> = model
        .params
        .iter()
        .map(|p| format!("param {} = {}", p.name, p.value))
        .collect();
    let single = model.equations.len() == 1;
    for eq in &model.equations {
        let mut line = format!("d{} = {} dt", eq.state, print_expr(&eq.drift));
        if let Some(d) = &eq.diffusion {
            if single && d.driver == 1 {
                let _ = write!(line, " + {} dW", print_expr(&d.expr));
            } else {
                let _ = write!(line, " + {} dW{}", print_expr(&d.expr), d.driver);
            }
        }
        if let Some(j) = &eq.jump {
            let _ = write!(
                line,
                " + jump({}, {}, {})",
                print_expr(&j.intensity),
                print_expr(&j.mean),
                print_expr(&j.std)
            );
        }
        lines.push(line);
    }
    lines.join("\n")
}
