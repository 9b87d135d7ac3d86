//! Single grammar edits on potential programs.
//!
//! Every edit maps a valid program to a valid program: operators are swapped
//! only within their type class, literals become bounded parameters, a stage
//! is split at a parameterized progress level, or one feature is replaced by
//! another numeric feature over known RoIs.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dsl::{is_reserved, Axis, BinOp, Expr, Feature, Param, PotentialProgram, StageBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EditKind {
    OperatorSwap,
    ParamInsertion,
    StageSplit,
    FeatureSubstitution,
}

impl EditKind {
    pub const ALL: [EditKind; 4] =
        [EditKind::OperatorSwap, EditKind::ParamInsertion, EditKind::StageSplit, EditKind::FeatureSubstitution];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edit {
    pub kind: EditKind,
    pub description: String,
}

/// Count nodes matching `pred` across all stage expressions.
fn count_sites(p: &PotentialProgram, pred: &dyn Fn(&Expr) -> bool) -> usize {
    let mut n = 0;
    for s in &p.stages {
        for e in [&s.guard, &s.progress] {
            e.visit(&mut |x| {
                if pred(x) {
                    n += 1;
                }
            });
        }
    }
    n
}

/// Apply `f` to the `target`-th node matching `pred` (visit order).
fn edit_site(p: &mut PotentialProgram, target: usize, pred: &dyn Fn(&Expr) -> bool, f: &mut dyn FnMut(&mut Expr)) {
    let mut i = 0;
    for s in &mut p.stages {
        for e in [&mut s.guard, &mut s.progress] {
            e.visit_mut(&mut |x| {
                if pred(x) {
                    if i == target {
                        f(x);
                    }
                    i += 1;
                }
            });
        }
    }
}

fn fresh_name(p: &PotentialProgram, stem: &str) -> String {
    (1..)
        .map(|i| format!("{stem}{i}"))
        .find(|n| !is_reserved(n) && p.param_index(n).is_none() && p.stages.iter().all(|s| &s.name != n))
        .expect("unbounded name supply")
}

fn swap_partner(op: BinOp, rng: &mut impl Rng) -> Option<BinOp> {
    use BinOp::*;
    let choices: &[BinOp] = match op {
        Add => &[Sub],
        Sub => &[Add],
        Mul => &[Div],
        Div => &[Mul],
        Lt => &[Le, Gt, Ge],
        Le => &[Lt, Gt, Ge],
        Gt => &[Ge, Lt, Le],
        Ge => &[Gt, Lt, Le],
        And => &[Or],
        Or => &[And],
    };
    choices.choose(rng).copied()
}

fn operator_swap(p: &PotentialProgram, rng: &mut impl Rng) -> Option<(PotentialProgram, String)> {
    let pred = |e: &Expr| matches!(e, Expr::Binary(..));
    let n = count_sites(p, &pred);
    if n == 0 {
        return None;
    }
    let target = rng.random_range(0..n);
    let mut child = p.clone();
    let mut desc = String::new();
    let mut new_op = None;
    // Draw the replacement first so the visit closure does not need the rng.
    edit_site(&mut child, target, &pred, &mut |e| {
        if let Expr::Binary(op, _, _) = e {
            new_op = Some(*op);
        }
    });
    let from = new_op?;
    let to = swap_partner(from, rng)?;
    edit_site(&mut child, target, &pred, &mut |e| {
        if let Expr::Binary(op, _, _) = e {
            *op = to;
        }
    });
    desc.push_str(&format!("swap `{}` for `{}`", from.symbol(), to.symbol()));
    Some((child, desc))
}

/// Bounds around a literal: a factor of 4 either way, or ±0.5 around zero.
fn literal_bounds(v: f64) -> (f64, f64) {
    if v > 0.0 {
        (v / 4.0, v * 4.0)
    } else if v < 0.0 {
        (v * 4.0, v / 4.0)
    } else {
        (-0.5, 0.5)
    }
}

fn param_insertion(p: &PotentialProgram, rng: &mut impl Rng) -> Option<(PotentialProgram, String)> {
    let pred = |e: &Expr| matches!(e, Expr::Num(_));
    let n = count_sites(p, &pred);
    if n == 0 {
        return None;
    }
    let target = rng.random_range(0..n);
    let mut child = p.clone();
    let name = fresh_name(p, "k");
    let index = child.params.len();
    let mut literal = None;
    edit_site(&mut child, target, &pred, &mut |e| {
        if let Expr::Num(v) = e {
            literal = Some(*v);
            *e = Expr::Param(index);
        }
    });
    let v = literal?;
    let (lower, upper) = literal_bounds(v);
    child.params.push(Param { name: name.clone(), default: v, lower, upper });
    Some((child, format!("lift literal {v} into param `{name}`")))
}

fn stage_split(p: &PotentialProgram, rng: &mut impl Rng, max_stages: usize) -> Option<(PotentialProgram, String)> {
    if p.stages.len() >= max_stages {
        return None;
    }
    let s = rng.random_range(0..p.stages.len());
    let mut child = p.clone();
    let split = Expr::Param(child.params.len());
    let split_name = fresh_name(p, "split");
    child.params.push(Param { name: split_name, default: 0.5, lower: 0.1, upper: 0.9 });
    let old = &p.stages[s];
    let reached = Expr::bin(BinOp::Ge, old.progress.clone(), split.clone());
    let guard = if s == 0 { reached } else { Expr::bin(BinOp::And, old.guard.clone(), reached) };
    let upper = Expr::bin(
        BinOp::Div,
        Expr::bin(BinOp::Sub, old.progress.clone(), split.clone()),
        Expr::bin(BinOp::Sub, Expr::Num(1.0), split.clone()),
    );
    let mut stage_name = format!("{}_b", old.name);
    while is_reserved(&stage_name) || p.stages.iter().any(|st| st.name == stage_name) || p.param_index(&stage_name).is_some() {
        stage_name.push('b');
    }
    child.stages[s].progress = Expr::bin(BinOp::Div, old.progress.clone(), split);
    child.stages.insert(s + 1, StageBlock { name: stage_name.clone(), guard, progress: upper });
    Some((child, format!("split stage `{}` into `{}` and `{stage_name}`", old.name, old.name)))
}

fn feature_alternatives(f: &Feature, rois: &[String]) -> Vec<Feature> {
    fn others<'a>(rois: &'a [String], a: &'a str) -> impl Iterator<Item = String> + 'a {
        rois.iter().filter(move |r| r.as_str() != a).cloned()
    }
    let mut out = Vec::new();
    let others = |a| others(rois, a);
    match f {
        Feature::Dist(a, b) => {
            out.extend(others(a).filter(|c| c != b).map(|c| Feature::Dist(c, b.clone())));
            out.extend(others(b).filter(|c| c != a).map(|c| Feature::Dist(a.clone(), c)));
            out.push(Feature::Disp(a.clone()));
        }
        Feature::Disp(a) => {
            out.extend(others(a).map(|c| Feature::Dist(a.clone(), c)));
            out.extend(others(a).map(Feature::Disp));
            out.push(Feature::Delta(Axis::Z, a.clone()));
        }
        Feature::Pos(ax, a) => {
            out.push(Feature::Delta(*ax, a.clone()));
            out.extend(Axis::ALL.iter().filter(|x| *x != ax).map(|x| Feature::Pos(*x, a.clone())));
            out.extend(others(a).map(|c| Feature::Pos(*ax, c)));
        }
        Feature::Delta(ax, a) => {
            out.push(Feature::Pos(*ax, a.clone()));
            out.push(Feature::Disp(a.clone()));
            out.extend(Axis::ALL.iter().filter(|x| *x != ax).map(|x| Feature::Delta(*x, a.clone())));
            out.extend(others(a).map(|c| Feature::Delta(*ax, c)));
        }
        Feature::Spread(a) => out.extend(others(a).map(Feature::Spread)),
    }
    out.retain(|g| g != f);
    out
}

fn feature_substitution(p: &PotentialProgram, rois: &[String], rng: &mut impl Rng) -> Option<(PotentialProgram, String)> {
    let pred = |e: &Expr| matches!(e, Expr::Feature(_));
    let n = count_sites(p, &pred);
    if n == 0 {
        return None;
    }
    let target = rng.random_range(0..n);
    let mut child = p.clone();
    let mut found = None;
    edit_site(&mut child, target, &pred, &mut |e| {
        if let Expr::Feature(f) = e {
            found = Some(f.clone());
        }
    });
    let from = found?;
    let to = feature_alternatives(&from, rois).choose(rng)?.clone();
    let desc = format!("replace `{}` with `{}`", describe(&from), describe(&to));
    edit_site(&mut child, target, &pred, &mut |e| *e = Expr::Feature(to.clone()));
    Some((child, desc))
}

fn describe(f: &Feature) -> String {
    format!("{}({})", f.keyword(), f.rois().join(", "))
}

/// Apply one randomly chosen edit. Returns `None` if no edit applies after
/// a few attempts.
pub fn mutate(
    parent: &PotentialProgram,
    rois: &[String],
    max_stages: usize,
    rng: &mut impl Rng,
) -> Option<(PotentialProgram, Edit)> {
    for _ in 0..16 {
        let kind = *EditKind::ALL.choose(rng)?;
        let out = match kind {
            EditKind::OperatorSwap => operator_swap(parent, rng),
            EditKind::ParamInsertion => param_insertion(parent, rng),
            EditKind::StageSplit => stage_split(parent, rng, max_stages),
            EditKind::FeatureSubstitution => feature_substitution(parent, rois, rng),
        };
        if let Some((child, description)) = out {
            if &child != parent && child.validate().is_ok() {
                return Some((child, Edit { kind, description }));
            }
        }
    }
    None
}
