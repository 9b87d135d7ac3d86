use super::{Expr, PotentialProgram, UnOp};

pub(crate) fn print(p: &PotentialProgram) -> String {
    let mut out = String::new();
    for param in &p.params {
        out.push_str(&format!(
            "param {} = {} in [{}, {}]\n",
            param.name,
            num(param.default),
            num(param.lower),
            num(param.upper)
        ));
    }
    for s in &p.stages {
        out.push_str(&format!(
            "stage {} when {}: progress = {}\n",
            s.name,
            expr(p, &s.guard),
            expr(p, &s.progress)
        ));
    }
    out
}

pub(crate) fn expr(p: &PotentialProgram, e: &Expr) -> String {
    let mut out = String::new();
    write(p, e, 0, &mut out);
    out
}

fn num(v: f64) -> String {
    format!("{v}")
}

const OR: u8 = 1;
const AND: u8 = 2;
const NOT: u8 = 3;
const CMP: u8 = 4;
const ADD: u8 = 5;
const MUL: u8 = 6;
const NEG: u8 = 7;
const ATOM: u8 = 8;

fn prec(e: &Expr) -> u8 {
    use super::BinOp::*;
    match e {
        Expr::Binary(Or, ..) => OR,
        Expr::Binary(And, ..) => AND,
        Expr::Unary(UnOp::Not, _) => NOT,
        Expr::Binary(Lt | Le | Gt | Ge, ..) => CMP,
        Expr::Binary(Add | Sub, ..) => ADD,
        Expr::Binary(Mul | Div, ..) => MUL,
        Expr::Unary(UnOp::Neg, _) => NEG,
        Expr::Num(v) if v.is_sign_negative() => NEG,
        _ => ATOM,
    }
}

fn write(p: &PotentialProgram, e: &Expr, min: u8, out: &mut String) {
    let own = prec(e);
    let paren = own < min;
    if paren {
        out.push('(');
    }
    match e {
        Expr::Num(v) => out.push_str(&num(*v)),
        Expr::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Expr::Param(i) => out.push_str(&p.params[*i].name),
        Expr::Feature(f) => {
            out.push_str(f.keyword());
            out.push('(');
            out.push_str(&f.rois().join(", "));
            out.push(')');
        }
        Expr::Unary(UnOp::Not, inner) => {
            out.push_str("not ");
            write(p, inner, NOT, out);
        }
        Expr::Unary(UnOp::Neg, inner) => {
            out.push('-');
            // A bare literal after `-` would be read back as a negative literal.
            let literal = matches!(**inner, Expr::Num(v) if !v.is_sign_negative());
            write(p, inner, if literal { ATOM + 1 } else { NEG }, out);
        }
        Expr::Binary(op, a, b) => {
            let (lmin, rmin) = if op.is_comparison() { (ADD, ADD) } else { (own, own + 1) };
            write(p, a, lmin, out);
            out.push(' ');
            out.push_str(op.symbol());
            out.push(' ');
            write(p, b, rmin, out);
        }
        Expr::Call(b, args) => {
            out.push_str(b.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write(p, a, 0, out);
            }
            out.push(')');
        }
    }
    if paren {
        out.push(')');
    }
}
