//! Shared generators for integration tests.
#![allow(dead_code)]

use proptest::prelude::*;
use rewardsynth::dsl::{Axis, BinOp, Builtin, Expr, Feature, Param, StageBlock, UnOp};
use rewardsynth::{MotionFlowFrame, PotentialProgram, Trajectory};

pub const ROIS: [&str; 3] = ["gripper", "object", "target"];

fn roi() -> impl Strategy<Value = String> {
    prop::sample::select(&ROIS[..]).prop_map(str::to_string)
}

fn axis() -> impl Strategy<Value = Axis> {
    prop::sample::select(&Axis::ALL[..])
}

pub fn feature(allow_pos: bool) -> BoxedStrategy<Feature> {
    let pair = (roi(), roi()).prop_filter("distinct", |(a, b)| a != b).prop_map(|(a, b)| Feature::Dist(a, b));
    let mut options = vec![
        pair.boxed(),
        roi().prop_map(Feature::Disp).boxed(),
        (axis(), roi()).prop_map(|(x, a)| Feature::Delta(x, a)).boxed(),
        roi().prop_map(Feature::Spread).boxed(),
    ];
    if allow_pos {
        options.push((axis(), roi()).prop_map(|(x, a)| Feature::Pos(x, a)).boxed());
    }
    prop::strategy::Union::new(options).boxed()
}

/// Non-negative literals; negation goes through the unary operator.
fn literal() -> impl Strategy<Value = f64> {
    prop_oneof![(0u32..40).prop_map(|k| f64::from(k) / 8.0), 0.0f64..10.0]
}

pub fn num_expr(params: usize, allow_pos: bool) -> BoxedStrategy<Expr> {
    let mut leaves = vec![literal().prop_map(Expr::Num).boxed(), feature(allow_pos).prop_map(Expr::Feature).boxed()];
    if params > 0 {
        leaves.push((0..params).prop_map(Expr::Param).boxed());
    }
    prop::strategy::Union::new(leaves)
        .prop_recursive(4, 24, 3, |inner| {
            let arith = prop::sample::select(vec![BinOp::Add, BinOp::Sub, BinOp::Mul, BinOp::Div]);
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Unary(UnOp::Neg, Box::new(e))),
                (arith, inner.clone(), inner.clone()).prop_map(|(op, a, b)| Expr::bin(op, a, b)),
                (prop::sample::select(&Builtin::ALL[..]), prop::collection::vec(inner, 3))
                    .prop_map(|(f, mut args)| {
                        args.truncate(f.arity());
                        Expr::Call(f, args)
                    }),
            ]
        })
        .boxed()
}

pub fn bool_expr(params: usize, allow_pos: bool) -> BoxedStrategy<Expr> {
    let cmp = prop::sample::select(vec![BinOp::Lt, BinOp::Le, BinOp::Gt, BinOp::Ge]);
    let leaf = prop_oneof![
        any::<bool>().prop_map(Expr::Bool),
        (cmp, num_expr(params, allow_pos), num_expr(params, allow_pos)).prop_map(|(op, a, b)| Expr::bin(op, a, b)),
    ];
    leaf.prop_recursive(2, 8, 2, |inner| {
        prop_oneof![
            inner.clone().prop_map(|e| Expr::Unary(UnOp::Not, Box::new(e))),
            (prop::sample::select(vec![BinOp::And, BinOp::Or]), inner.clone(), inner)
                .prop_map(|(op, a, b)| Expr::bin(op, a, b)),
        ]
    })
    .boxed()
}

fn param(i: usize) -> impl Strategy<Value = Param> {
    (0.0f64..5.0, 0.0f64..1.0, 0.0f64..5.0).prop_map(move |(lo, frac, width)| Param {
        name: format!("p{i}"),
        default: lo + frac * width,
        lower: lo,
        upper: lo + width,
    })
}

/// Well-typed programs with 1 to 5 stages and 0 to 4 parameters.
pub fn program(allow_pos: bool) -> BoxedStrategy<PotentialProgram> {
    (0usize..5, 1usize..6)
        .prop_flat_map(move |(np, ns)| {
            let params: Vec<_> = (0..np).map(param).collect();
            let stages = prop::collection::vec((bool_expr(np, allow_pos), num_expr(np, allow_pos)), ns);
            (params, stages)
        })
        .prop_map(|(params, stages)| PotentialProgram {
            params,
            stages: stages
                .into_iter()
                .enumerate()
                .map(|(i, (guard, progress))| StageBlock {
                    name: format!("s{i}"),
                    guard: if i == 0 { Expr::Bool(true) } else { guard },
                    progress,
                })
                .collect(),
        })
        .boxed()
}

/// Dyadic coordinates keep centroid and distance arithmetic exact under
/// dyadic translations.
pub fn dyadic_point() -> impl Strategy<Value = [f64; 3]> {
    [0i32..1024, 0i32..1024, 0i32..1024].prop_map(|c| c.map(|k| f64::from(k) / 1024.0))
}

pub fn frame(t: usize) -> impl Strategy<Value = MotionFlowFrame> {
    let cluster = prop::sample::select(vec![1usize, 2, 4]).prop_flat_map(|n| prop::collection::vec(dyadic_point(), n));
    (cluster.clone(), cluster.clone(), cluster).prop_map(move |(g, o, x)| {
        MotionFlowFrame::new(t).with_cluster("gripper", g).with_cluster("object", o).with_cluster("target", x)
    })
}

pub fn trajectory(max_len: usize) -> impl Strategy<Value = Trajectory> {
    (2..=max_len).prop_flat_map(|n| {
        (0..n).map(frame).collect::<Vec<_>>().prop_map(|frames| Trajectory::new(frames, false))
    })
}
