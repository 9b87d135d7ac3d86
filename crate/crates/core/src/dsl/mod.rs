//! The staged potential-program language.
//!
//! A program declares bounded continuous parameters and an ordered list of
//! stages. Each stage has a boolean guard ("this stage has been reached")
//! and a scalar progress expression:
//!
//! ```text
//! param d0 = 0.5 in [0.1, 2.0]
//! stage reach when true: progress = clamp(1 - dist(gripper, object) / d0, 0, 1)
//! stage grasp when dist(gripper, object) < 0.02: progress = 1 - spread(gripper) / 0.04
//! ```
//!
//! Evaluating a program on a frame picks the highest-index stage whose guard
//! holds and returns `p = (stage + clamp(progress, 0, 1)) / S`, which always
//! lies in `[0, 1]`. The grammar is documented in `docs/dsl.md`.

mod eval;
mod lexer;
mod parser;
mod printer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use eval::{EvalError, Potential, Trace};
pub use parser::parse;

/// A declared continuous parameter with its default and closed bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub default: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageBlock {
    pub name: String,
    pub guard: Expr,
    pub progress: Expr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

/// Observation features, the only way a program reads a frame.
#[derive(Debug, Clone, PartialEq)]
pub enum Feature {
    /// Distance between two cluster centroids in the current frame.
    Dist(String, String),
    /// Distance a centroid has moved since frame 0.
    Disp(String),
    /// Centroid coordinate in the current frame.
    Pos(Axis, String),
    /// Signed per-axis centroid displacement since frame 0.
    Delta(Axis, String),
    /// Mean point distance to the centroid.
    Spread(String),
}

impl Feature {
    pub fn rois(&self) -> Vec<&str> {
        match self {
            Feature::Dist(a, b) => vec![a, b],
            Feature::Disp(a) | Feature::Pos(_, a) | Feature::Delta(_, a) | Feature::Spread(a) => vec![a],
        }
    }

    /// True for features unchanged by a rigid translation of the whole scene.
    pub fn translation_invariant(&self) -> bool {
        !matches!(self, Feature::Pos(..))
    }

    pub fn keyword(&self) -> &'static str {
        match self {
            Feature::Dist(..) => "dist",
            Feature::Disp(_) => "disp",
            Feature::Pos(Axis::X, _) => "x",
            Feature::Pos(Axis::Y, _) => "y",
            Feature::Pos(Axis::Z, _) => "z",
            Feature::Delta(Axis::X, _) => "dx",
            Feature::Delta(Axis::Y, _) => "dy",
            Feature::Delta(Axis::Z, _) => "dz",
            Feature::Spread(_) => "spread",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Builtin {
    Min,
    Max,
    Abs,
    Clamp,
    Exp,
    Tanh,
    Sigmoid,
}

impl Builtin {
    pub const ALL: [Builtin; 7] = [
        Builtin::Min,
        Builtin::Max,
        Builtin::Abs,
        Builtin::Clamp,
        Builtin::Exp,
        Builtin::Tanh,
        Builtin::Sigmoid,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Builtin::Min => "min",
            Builtin::Max => "max",
            Builtin::Abs => "abs",
            Builtin::Clamp => "clamp",
            Builtin::Exp => "exp",
            Builtin::Tanh => "tanh",
            Builtin::Sigmoid => "sigmoid",
        }
    }

    pub fn arity(self) -> usize {
        match self {
            Builtin::Abs | Builtin::Exp | Builtin::Tanh => 1,
            Builtin::Min | Builtin::Max | Builtin::Sigmoid => 2,
            Builtin::Clamp => 3,
        }
    }

    pub fn from_name(s: &str) -> Option<Builtin> {
        Builtin::ALL.into_iter().find(|b| b.name() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Lt,
    Le,
    Gt,
    Ge,
    And,
    Or,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::And => "and",
            BinOp::Or => "or",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(self, BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge)
    }

    pub fn is_logical(self) -> bool {
        matches!(self, BinOp::And | BinOp::Or)
    }
}

/// Expression tree. Parameters are referenced by their declaration index.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Bool(bool),
    Param(usize),
    Feature(Feature),
    Unary(UnOp, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Builtin, Vec<Expr>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Type {
    Num,
    Bool,
}

impl Expr {
    pub fn bin(op: BinOp, a: Expr, b: Expr) -> Expr {
        Expr::Binary(op, Box::new(a), Box::new(b))
    }

    pub fn ty(&self) -> Type {
        match self {
            Expr::Bool(_) => Type::Bool,
            Expr::Unary(UnOp::Not, _) => Type::Bool,
            Expr::Binary(op, _, _) if op.is_comparison() || op.is_logical() => Type::Bool,
            _ => Type::Num,
        }
    }

    /// Pre-order traversal.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(&'a Expr)) {
        f(self);
        match self {
            Expr::Unary(_, e) => e.visit(f),
            Expr::Binary(_, a, b) => {
                a.visit(f);
                b.visit(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.visit(f)),
            _ => {}
        }
    }

    /// Pre-order traversal with mutable access.
    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Expr)) {
        f(self);
        match self {
            Expr::Unary(_, e) => e.visit_mut(f),
            Expr::Binary(_, a, b) => {
                a.visit_mut(f);
                b.visit_mut(f);
            }
            Expr::Call(_, args) => args.iter_mut().for_each(|a| a.visit_mut(f)),
            _ => {}
        }
    }

    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }
}

/// Static error in a program.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{line}:{col}: {kind}: {message}")]
pub struct ProgramError {
    pub line: usize,
    pub col: usize,
    pub kind: ProgramErrorKind,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProgramErrorKind {
    Syntax,
    UnknownIdentifier,
    Type,
    Duplicate,
    Bounds,
    Structure,
}

impl std::fmt::Display for ProgramErrorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ProgramErrorKind::Syntax => "syntax error",
            ProgramErrorKind::UnknownIdentifier => "unknown identifier",
            ProgramErrorKind::Type => "type error",
            ProgramErrorKind::Duplicate => "duplicate name",
            ProgramErrorKind::Bounds => "bounds error",
            ProgramErrorKind::Structure => "invalid structure",
        })
    }
}

/// A staged symbolic potential function with its parameter declarations.
#[derive(Debug, Clone, PartialEq)]
pub struct PotentialProgram {
    pub params: Vec<Param>,
    pub stages: Vec<StageBlock>,
}

impl PotentialProgram {
    pub fn parse(source: &str) -> Result<Self, ProgramError> {
        parser::parse(source)
    }

    /// Canonical source text; `parse(p.to_source()) == p`.
    pub fn to_source(&self) -> String {
        printer::print(self)
    }

    pub fn stage_count(&self) -> usize {
        self.stages.len()
    }

    pub fn defaults(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.default).collect()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.params.iter().map(|p| (p.lower, p.upper)).collect()
    }

    pub fn param_index(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    /// True iff `theta` has the right length and lies within bounds.
    pub fn theta_in_bounds(&self, theta: &[f64]) -> bool {
        theta.len() == self.params.len()
            && self.params.iter().zip(theta).all(|(p, &v)| v >= p.lower && v <= p.upper)
    }

    /// A copy whose parameter defaults are `theta` (clamped into bounds).
    pub fn with_defaults(&self, theta: &[f64]) -> PotentialProgram {
        let mut p = self.clone();
        for (param, &v) in p.params.iter_mut().zip(theta) {
            param.default = v.clamp(param.lower, param.upper);
        }
        p
    }

    pub fn features(&self) -> Vec<&Feature> {
        let mut out = Vec::new();
        for s in &self.stages {
            for e in [&s.guard, &s.progress] {
                e.visit(&mut |n| {
                    if let Expr::Feature(f) = n {
                        out.push(f);
                    }
                });
            }
        }
        out
    }

    /// RoI names referenced anywhere, sorted and deduplicated.
    pub fn referenced_rois(&self) -> Vec<String> {
        let mut names: Vec<String> =
            self.features().iter().flat_map(|f| f.rois()).map(str::to_string).collect();
        names.sort();
        names.dedup();
        names
    }

    /// True when no feature depends on absolute position.
    pub fn is_translation_invariant(&self) -> bool {
        self.features().iter().all(|f| f.translation_invariant())
    }

    /// Re-run the static checks on a programmatically built program.
    pub fn validate(&self) -> Result<(), ProgramError> {
        parser::parse(&self.to_source()).and_then(|p| {
            if &p == self {
                Ok(())
            } else {
                Err(ProgramError {
                    line: 0,
                    col: 0,
                    kind: ProgramErrorKind::Structure,
                    message: "program does not survive a print/parse round trip".into(),
                })
            }
        })
    }
}

impl std::fmt::Display for PotentialProgram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.to_source())
    }
}

impl Serialize for PotentialProgram {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_source())
    }
}

impl<'de> Deserialize<'de> for PotentialProgram {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let src = String::deserialize(d)?;
        PotentialProgram::parse(&src).map_err(serde::de::Error::custom)
    }
}

pub(crate) const KEYWORDS: [&str; 10] =
    ["param", "stage", "when", "progress", "in", "and", "or", "not", "true", "false"];

pub(crate) const FEATURE_NAMES: [&str; 9] = ["dist", "disp", "x", "y", "z", "dx", "dy", "dz", "spread"];

/// Names that cannot be used for parameters or stages.
pub fn is_reserved(name: &str) -> bool {
    KEYWORDS.contains(&name) || FEATURE_NAMES.contains(&name) || Builtin::from_name(name).is_some()
}
