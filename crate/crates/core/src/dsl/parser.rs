use super::lexer::{tokenize, Spanned, Tok};
use super::{
    is_reserved, Axis, BinOp, Builtin, Expr, Feature, Param, PotentialProgram, ProgramError,
    ProgramErrorKind, StageBlock, Type, UnOp,
};

/// Parse and statically check a potential program.
pub fn parse(source: &str) -> Result<PotentialProgram, ProgramError> {
    let toks = tokenize(source)?;
    let mut p = Parser { toks, pos: 0, params: Vec::new() };
    p.program()
}

struct Parser {
    toks: Vec<Spanned>,
    pos: usize,
    params: Vec<Param>,
}

type PResult<T> = Result<T, ProgramError>;

impl Parser {
    fn peek(&self) -> &Spanned {
        &self.toks[self.pos]
    }

    fn next(&mut self) -> Spanned {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn err_at(&self, at: &Spanned, kind: ProgramErrorKind, message: impl Into<String>) -> ProgramError {
        ProgramError { line: at.line, col: at.col, kind, message: message.into() }
    }

    fn syntax(&self, at: &Spanned, message: impl Into<String>) -> ProgramError {
        self.err_at(at, ProgramErrorKind::Syntax, message)
    }

    fn expect(&mut self, want: Tok, what: &str) -> PResult<Spanned> {
        let t = self.next();
        if t.tok == want {
            Ok(t)
        } else {
            Err(self.syntax(&t, format!("expected {what}, found {}", t.tok.describe())))
        }
    }

    fn is_keyword(&self, kw: &str) -> bool {
        matches!(&self.peek().tok, Tok::Ident(s) if s == kw)
    }

    fn expect_keyword(&mut self, kw: &str) -> PResult<Spanned> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) if s == kw => Ok(t),
            other => Err(self.syntax(&t, format!("expected `{kw}`, found {}", other.describe()))),
        }
    }

    fn name(&mut self, what: &str) -> PResult<(String, Spanned)> {
        let t = self.next();
        match &t.tok {
            Tok::Ident(s) if is_reserved(s) => Err(self.syntax(&t, format!("`{s}` is reserved and cannot name a {what}"))),
            Tok::Ident(s) => Ok((s.clone(), t.clone())),
            other => Err(self.syntax(&t, format!("expected {what} name, found {}", other.describe()))),
        }
    }

    fn signed_number(&mut self) -> PResult<f64> {
        let neg = if self.peek().tok == Tok::Minus {
            self.next();
            true
        } else {
            false
        };
        let t = self.next();
        match t.tok {
            Tok::Num(v) => Ok(if neg { -v } else { v }),
            ref other => Err(self.syntax(&t, format!("expected number, found {}", other.describe()))),
        }
    }

    fn program(&mut self) -> PResult<PotentialProgram> {
        let mut stages: Vec<StageBlock> = Vec::new();
        loop {
            let t = self.peek().clone();
            match &t.tok {
                Tok::Eof => break,
                Tok::Ident(s) if s == "param" => {
                    if !stages.is_empty() {
                        return Err(self.syntax(&t, "parameters must be declared before stages"));
                    }
                    self.param_decl()?;
                }
                Tok::Ident(s) if s == "stage" => {
                    let s = self.stage_decl(stages.len())?;
                    if stages.iter().any(|o| o.name == s.0.name) {
                        return Err(self.err_at(&s.1, ProgramErrorKind::Duplicate, format!("stage `{}` declared twice", s.0.name)));
                    }
                    stages.push(s.0);
                }
                other => {
                    return Err(self.syntax(&t, format!("expected `param` or `stage`, found {}", other.describe())))
                }
            }
        }
        if stages.is_empty() {
            let t = self.peek().clone();
            return Err(self.err_at(&t, ProgramErrorKind::Structure, "program declares no stages"));
        }
        Ok(PotentialProgram { params: std::mem::take(&mut self.params), stages })
    }

    fn param_decl(&mut self) -> PResult<()> {
        self.expect_keyword("param")?;
        let (name, at) = self.name("parameter")?;
        if self.params.iter().any(|p| p.name == name) {
            return Err(self.err_at(&at, ProgramErrorKind::Duplicate, format!("parameter `{name}` declared twice")));
        }
        self.expect(Tok::Assign, "`=`")?;
        let default = self.signed_number()?;
        self.expect_keyword("in")?;
        self.expect(Tok::LBracket, "`[`")?;
        let lower = self.signed_number()?;
        self.expect(Tok::Comma, "`,`")?;
        let upper = self.signed_number()?;
        self.expect(Tok::RBracket, "`]`")?;
        if !(lower < upper) {
            return Err(self.err_at(&at, ProgramErrorKind::Bounds, format!("`{name}`: lower bound {lower} must be below upper bound {upper}")));
        }
        if !(default >= lower && default <= upper) {
            return Err(self.err_at(&at, ProgramErrorKind::Bounds, format!("`{name}`: default {default} outside [{lower}, {upper}]")));
        }
        self.params.push(Param { name, default, lower, upper });
        Ok(())
    }

    fn stage_decl(&mut self, index: usize) -> PResult<(StageBlock, Spanned)> {
        self.expect_keyword("stage")?;
        let (name, at) = self.name("stage")?;
        self.expect_keyword("when")?;
        let gstart = self.peek().clone();
        let (guard, gty) = self.expr()?;
        if gty != Type::Bool {
            return Err(self.err_at(&gstart, ProgramErrorKind::Type, "stage guard must be boolean"));
        }
        if index == 0 && guard != Expr::Bool(true) {
            return Err(self.err_at(&gstart, ProgramErrorKind::Structure, "the first stage's guard must be the literal `true`"));
        }
        self.expect(Tok::Colon, "`:`")?;
        self.expect_keyword("progress")?;
        self.expect(Tok::Assign, "`=`")?;
        let pstart = self.peek().clone();
        let (progress, pty) = self.expr()?;
        if pty != Type::Num {
            return Err(self.err_at(&pstart, ProgramErrorKind::Type, "progress must be numeric"));
        }
        Ok((StageBlock { name, guard, progress }, at))
    }

    fn expr(&mut self) -> PResult<(Expr, Type)> {
        self.or_expr()
    }

    fn logical(&mut self, op: BinOp, kw: &str, sub: fn(&mut Self) -> PResult<(Expr, Type)>) -> PResult<(Expr, Type)> {
        let start = self.peek().clone();
        let (mut lhs, mut lty) = sub(self)?;
        while self.is_keyword(kw) {
            let at = self.next();
            let rstart = self.peek().clone();
            let (rhs, rty) = sub(self)?;
            if lty != Type::Bool {
                return Err(self.err_at(&start, ProgramErrorKind::Type, format!("`{kw}` expects booleans, found a number")));
            }
            if rty != Type::Bool {
                return Err(self.err_at(&rstart, ProgramErrorKind::Type, format!("`{kw}` expects booleans, found a number")));
            }
            let _ = at;
            lhs = Expr::bin(op, lhs, rhs);
            lty = Type::Bool;
        }
        Ok((lhs, lty))
    }

    fn or_expr(&mut self) -> PResult<(Expr, Type)> {
        self.logical(BinOp::Or, "or", Self::and_expr)
    }

    fn and_expr(&mut self) -> PResult<(Expr, Type)> {
        self.logical(BinOp::And, "and", Self::not_expr)
    }

    fn not_expr(&mut self) -> PResult<(Expr, Type)> {
        if self.is_keyword("not") {
            self.next();
            let at = self.peek().clone();
            let (e, t) = self.not_expr()?;
            if t != Type::Bool {
                return Err(self.err_at(&at, ProgramErrorKind::Type, "`not` expects a boolean, found a number"));
            }
            return Ok((Expr::Unary(UnOp::Not, Box::new(e)), Type::Bool));
        }
        self.cmp_expr()
    }

    fn cmp_op(&self) -> Option<BinOp> {
        match self.peek().tok {
            Tok::Lt => Some(BinOp::Lt),
            Tok::Le => Some(BinOp::Le),
            Tok::Gt => Some(BinOp::Gt),
            Tok::Ge => Some(BinOp::Ge),
            _ => None,
        }
    }

    fn cmp_expr(&mut self) -> PResult<(Expr, Type)> {
        let start = self.peek().clone();
        let (lhs, lty) = self.add_expr()?;
        let Some(op) = self.cmp_op() else {
            return Ok((lhs, lty));
        };
        let at = self.next();
        let rstart = self.peek().clone();
        let (rhs, rty) = self.add_expr()?;
        if lty != Type::Num {
            return Err(self.err_at(&start, ProgramErrorKind::Type, format!("`{}` expects numbers, found a boolean", op.symbol())));
        }
        if rty != Type::Num {
            return Err(self.err_at(&rstart, ProgramErrorKind::Type, format!("`{}` expects numbers, found a boolean", op.symbol())));
        }
        if self.cmp_op().is_some() {
            let t = self.peek().clone();
            return Err(self.syntax(&t, "comparisons do not chain; use `and`"));
        }
        let _ = at;
        Ok((Expr::bin(op, lhs, rhs), Type::Bool))
    }

    fn arith(&mut self, ops: &[(Tok, BinOp)], sub: fn(&mut Self) -> PResult<(Expr, Type)>) -> PResult<(Expr, Type)> {
        let start = self.peek().clone();
        let (mut lhs, lty) = sub(self)?;
        let mut checked = false;
        while let Some(op) = ops.iter().find(|(t, _)| *t == self.peek().tok).map(|(_, o)| *o) {
            if !checked && lty != Type::Num {
                return Err(self.err_at(&start, ProgramErrorKind::Type, format!("`{}` expects numbers, found a boolean", op.symbol())));
            }
            checked = true;
            self.next();
            let rstart = self.peek().clone();
            let (rhs, rty) = sub(self)?;
            if rty != Type::Num {
                return Err(self.err_at(&rstart, ProgramErrorKind::Type, format!("`{}` expects numbers, found a boolean", op.symbol())));
            }
            lhs = Expr::bin(op, lhs, rhs);
        }
        Ok((lhs, if checked { Type::Num } else { lty }))
    }

    fn add_expr(&mut self) -> PResult<(Expr, Type)> {
        self.arith(&[(Tok::Plus, BinOp::Add), (Tok::Minus, BinOp::Sub)], Self::mul_expr)
    }

    fn mul_expr(&mut self) -> PResult<(Expr, Type)> {
        self.arith(&[(Tok::Star, BinOp::Mul), (Tok::Slash, BinOp::Div)], Self::unary)
    }

    fn unary(&mut self) -> PResult<(Expr, Type)> {
        if self.peek().tok == Tok::Minus {
            self.next();
            // `-` directly before a literal is a negative literal.
            if let Tok::Num(v) = self.peek().tok {
                self.next();
                return Ok((Expr::Num(-v), Type::Num));
            }
            let at = self.peek().clone();
            let (e, t) = self.unary()?;
            if t != Type::Num {
                return Err(self.err_at(&at, ProgramErrorKind::Type, "unary `-` expects a number, found a boolean"));
            }
            return Ok((Expr::Unary(UnOp::Neg, Box::new(e)), Type::Num));
        }
        self.atom()
    }

    fn atom(&mut self) -> PResult<(Expr, Type)> {
        let t = self.next();
        match &t.tok {
            Tok::Num(v) => Ok((Expr::Num(*v), Type::Num)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::Ident(s) if s == "true" => Ok((Expr::Bool(true), Type::Bool)),
            Tok::Ident(s) if s == "false" => Ok((Expr::Bool(false), Type::Bool)),
            Tok::Ident(s) => {
                let s = s.clone();
                if self.peek().tok == Tok::LParen {
                    self.call(&s, &t)
                } else if let Some(i) = self.params.iter().position(|p| p.name == s) {
                    Ok((Expr::Param(i), Type::Num))
                } else {
                    Err(self.err_at(&t, ProgramErrorKind::UnknownIdentifier, format!("`{s}` is not a declared parameter")))
                }
            }
            other => Err(self.syntax(&t, format!("expected an expression, found {}", other.describe()))),
        }
    }

    fn roi_args(&mut self, callee: &str, n: usize, at: &Spanned) -> PResult<Vec<String>> {
        self.expect(Tok::LParen, "`(`")?;
        let mut names = Vec::new();
        loop {
            let t = self.next();
            match &t.tok {
                Tok::Ident(s) if !is_reserved(s) => names.push(s.clone()),
                other => return Err(self.syntax(&t, format!("`{callee}` takes region names, found {}", other.describe()))),
            }
            if self.peek().tok == Tok::Comma {
                self.next();
            } else {
                break;
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        if names.len() != n {
            return Err(self.syntax(at, format!("`{callee}` expects {n} argument(s), found {}", names.len())));
        }
        Ok(names)
    }

    fn call(&mut self, callee: &str, at: &Spanned) -> PResult<(Expr, Type)> {
        let axis = |c: char| match c {
            'x' => Axis::X,
            'y' => Axis::Y,
            _ => Axis::Z,
        };
        let feature = match callee {
            "dist" => {
                let mut a = self.roi_args(callee, 2, at)?;
                let b = a.pop().unwrap();
                Some(Feature::Dist(a.pop().unwrap(), b))
            }
            "disp" => Some(Feature::Disp(self.roi_args(callee, 1, at)?.remove(0))),
            "spread" => Some(Feature::Spread(self.roi_args(callee, 1, at)?.remove(0))),
            "x" | "y" | "z" => {
                let ax = axis(callee.chars().next().unwrap());
                Some(Feature::Pos(ax, self.roi_args(callee, 1, at)?.remove(0)))
            }
            "dx" | "dy" | "dz" => {
                let ax = axis(callee.chars().nth(1).unwrap());
                Some(Feature::Delta(ax, self.roi_args(callee, 1, at)?.remove(0)))
            }
            _ => None,
        };
        if let Some(f) = feature {
            return Ok((Expr::Feature(f), Type::Num));
        }
        let Some(b) = Builtin::from_name(callee) else {
            return Err(self.err_at(at, ProgramErrorKind::UnknownIdentifier, format!("unknown function `{callee}`")));
        };
        self.expect(Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if self.peek().tok != Tok::RParen {
            loop {
                let astart = self.peek().clone();
                let (e, ty) = self.expr()?;
                if ty != Type::Num {
                    return Err(self.err_at(&astart, ProgramErrorKind::Type, format!("`{callee}` expects numeric arguments")));
                }
                args.push(e);
                if self.peek().tok == Tok::Comma {
                    self.next();
                } else {
                    break;
                }
            }
        }
        self.expect(Tok::RParen, "`)`")?;
        if args.len() != b.arity() {
            return Err(self.syntax(at, format!("`{callee}` expects {} argument(s), found {}", b.arity(), args.len())));
        }
        Ok((Expr::Call(b, args), Type::Num))
    }
}
