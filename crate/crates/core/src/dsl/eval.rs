use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{BinOp, Builtin, Expr, Feature, PotentialProgram, UnOp};
use crate::data::{distance, MotionFlowFrame, Point3, Trajectory};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("theta has {got} values, program declares {expected} parameters")]
    ThetaLength { expected: usize, got: usize },
    #[error("parameter `{name}` = {value} is outside [{lower}, {upper}]")]
    ThetaOutOfBounds { name: String, value: f64, lower: f64, upper: f64 },
    #[error("frame t={timestep}: missing RoI `{name}`")]
    MissingRoi { name: String, timestep: usize },
    #[error("division by zero in stage `{stage}`")]
    DivisionByZero { stage: String },
    #[error("non-finite value in stage `{stage}`")]
    NonFinite { stage: String },
}

/// Result of evaluating a program on one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Potential {
    /// Scalar potential in `[0, 1]`.
    pub value: f64,
    /// Index of the active stage.
    pub stage: usize,
}

/// Per-frame potentials and stages along a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub potentials: Vec<f64>,
    pub stages: Vec<usize>,
}

struct Ctx<'a> {
    theta: &'a [f64],
    now: &'a MotionFlowFrame,
    start: &'a MotionFlowFrame,
    stage: &'a str,
}

impl Ctx<'_> {
    fn centroid(&self, frame: &MotionFlowFrame, name: &str) -> Result<Point3, EvalError> {
        frame
            .centroid(name)
            .ok_or_else(|| EvalError::MissingRoi { name: name.to_string(), timestep: frame.timestep })
    }

    fn feature(&self, f: &Feature) -> Result<f64, EvalError> {
        Ok(match f {
            Feature::Dist(a, b) => distance(self.centroid(self.now, a)?, self.centroid(self.now, b)?),
            Feature::Disp(a) => distance(self.centroid(self.now, a)?, self.centroid(self.start, a)?),
            Feature::Pos(axis, a) => self.centroid(self.now, a)?[axis.index()],
            Feature::Delta(axis, a) => {
                let i = axis.index();
                self.centroid(self.now, a)?[i] - self.centroid(self.start, a)?[i]
            }
            Feature::Spread(a) => self
                .now
                .spread(a)
                .ok_or_else(|| EvalError::MissingRoi { name: a.to_string(), timestep: self.now.timestep })?,
        })
    }

    fn finite(&self, v: f64) -> Result<f64, EvalError> {
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite { stage: self.stage.to_string() })
        }
    }

    fn num(&self, e: &Expr) -> Result<f64, EvalError> {
        let v = match e {
            Expr::Num(v) => *v,
            Expr::Param(i) => self.theta[*i],
            Expr::Feature(f) => self.feature(f)?,
            Expr::Unary(UnOp::Neg, a) => -self.num(a)?,
            Expr::Binary(op, a, b) => {
                let (x, y) = (self.num(a)?, self.num(b)?);
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(EvalError::DivisionByZero { stage: self.stage.to_string() });
                        }
                        x / y
                    }
                    _ => unreachable!("type-checked: boolean operator in numeric position"),
                }
            }
            Expr::Call(b, args) => {
                let a0 = self.num(&args[0])?;
                match b {
                    Builtin::Abs => a0.abs(),
                    Builtin::Exp => a0.exp(),
                    Builtin::Tanh => a0.tanh(),
                    Builtin::Min => a0.min(self.num(&args[1])?),
                    Builtin::Max => a0.max(self.num(&args[1])?),
                    Builtin::Sigmoid => 1.0 / (1.0 + (-self.num(&args[1])? * a0).exp()),
                    Builtin::Clamp => {
                        let (lo, hi) = (self.num(&args[1])?, self.num(&args[2])?);
                        // Inverted bounds pin to `lo`, like max(lo, min(x, hi)).
                        a0.min(hi).max(lo)
                    }
                }
            }
            Expr::Bool(_) | Expr::Unary(UnOp::Not, _) => unreachable!("type-checked: boolean in numeric position"),
        };
        self.finite(v)
    }

    fn truth(&self, e: &Expr) -> Result<bool, EvalError> {
        Ok(match e {
            Expr::Bool(b) => *b,
            Expr::Unary(UnOp::Not, a) => !self.truth(a)?,
            Expr::Binary(BinOp::And, a, b) => self.truth(a)? && self.truth(b)?,
            Expr::Binary(BinOp::Or, a, b) => self.truth(a)? || self.truth(b)?,
            Expr::Binary(op, a, b) => {
                let (x, y) = (self.num(a)?, self.num(b)?);
                match op {
                    BinOp::Lt => x < y,
                    BinOp::Le => x <= y,
                    BinOp::Gt => x > y,
                    BinOp::Ge => x >= y,
                    _ => unreachable!("type-checked: numeric operator in boolean position"),
                }
            }
            _ => unreachable!("type-checked: number in boolean position"),
        })
    }
}

impl PotentialProgram {
    pub fn check_theta(&self, theta: &[f64]) -> Result<(), EvalError> {
        if theta.len() != self.params.len() {
            return Err(EvalError::ThetaLength { expected: self.params.len(), got: theta.len() });
        }
        for (p, &v) in self.params.iter().zip(theta) {
            if !(v >= p.lower && v <= p.upper) {
                return Err(EvalError::ThetaOutOfBounds { name: p.name.clone(), value: v, lower: p.lower, upper: p.upper });
            }
        }
        Ok(())
    }

    /// Potential and active stage for observation `now` given the episode's
    /// first observation `start`. Stateless.
    pub fn evaluate(&self, theta: &[f64], now: &MotionFlowFrame, start: &MotionFlowFrame) -> Result<Potential, EvalError> {
        self.check_theta(theta)?;
        self.evaluate_unchecked(theta, now, start)
    }

    fn evaluate_unchecked(&self, theta: &[f64], now: &MotionFlowFrame, start: &MotionFlowFrame) -> Result<Potential, EvalError> {
        let mut active = 0;
        for (i, s) in self.stages.iter().enumerate().skip(1).rev() {
            let ctx = Ctx { theta, now, start, stage: &s.name };
            if ctx.truth(&s.guard)? {
                active = i;
                break;
            }
        }
        let s = &self.stages[active];
        let ctx = Ctx { theta, now, start, stage: &s.name };
        let progress = ctx.num(&s.progress)?.clamp(0.0, 1.0);
        let n = self.stages.len() as f64;
        Ok(Potential { value: ((active as f64 + progress) / n).min(1.0), stage: active })
    }

    /// Evaluate every frame of `trajectory` against its frame 0.
    pub fn evaluate_trajectory(&self, theta: &[f64], trajectory: &Trajectory) -> Result<Trace, EvalError> {
        self.check_theta(theta)?;
        let start = trajectory.initial();
        let mut potentials = Vec::with_capacity(trajectory.len());
        let mut stages = Vec::with_capacity(trajectory.len());
        for f in &trajectory.frames {
            let p = self.evaluate_unchecked(theta, f, start)?;
            potentials.push(p.value);
            stages.push(p.stage);
        }
        Ok(Trace { potentials, stages })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "param d0 = 0.5 in [0.1, 2.0]\nstage reach when true: progress = clamp(1 - dist(gripper,object)/d0, 0, 1)";

    fn frame(g: Point3, o: Point3) -> MotionFlowFrame {
        MotionFlowFrame::new(0).with_cluster("gripper", vec![g]).with_cluster("object", vec![o])
    }

    #[test]
    fn hand_evaluated_minimal() {
        let p = PotentialProgram::parse(MINIMAL).unwrap();
        let f = frame([0.0; 3], [0.25, 0.0, 0.0]);
        let r = p.evaluate(&[0.5], &f, &f).unwrap();
        // progress = 1 - 0.25 / 0.5
        assert_eq!(r, Potential { value: 0.5, stage: 0 });
        let f = frame([0.3, 0.1, 0.0], [0.3, 0.1, 0.0]);
        assert_eq!(p.evaluate(&[0.5], &f, &f).unwrap().value, 1.0);
    }

    #[test]
    fn floor_case_two_stages() {
        let p = PotentialProgram::parse("stage a when true: progress = 0\nstage b when false: progress = 1").unwrap();
        let f = frame([0.0; 3], [1.0; 3]);
        assert_eq!(p.evaluate(&[], &f, &f).unwrap(), Potential { value: 0.0, stage: 0 });
    }

    #[test]
    fn highest_true_guard_wins() {
        let p = PotentialProgram::parse(
            "stage a when true: progress = 0.5\nstage b when true: progress = 0.5\nstage c when false: progress = 0.9",
        )
        .unwrap();
        let f = frame([0.0; 3], [1.0; 3]);
        assert_eq!(p.evaluate(&[], &f, &f).unwrap(), Potential { value: 1.5 / 3.0, stage: 1 });
    }

    #[test]
    fn missing_roi_fails_at_evaluate() {
        let p = PotentialProgram::parse("stage a when true: progress = 0\nstage b when x(ghost) > 0: progress = 1").unwrap();
        let f = frame([0.0; 3], [1.0; 3]);
        assert_eq!(
            p.evaluate(&[], &f, &f).unwrap_err(),
            EvalError::MissingRoi { name: "ghost".into(), timestep: 0 }
        );
    }

    #[test]
    fn division_by_zero_is_an_error() {
        let p = PotentialProgram::parse("stage a when true: progress = 1 / dist(gripper, object)").unwrap();
        let f = frame([0.2; 3], [0.2; 3]);
        assert!(matches!(p.evaluate(&[], &f, &f), Err(EvalError::DivisionByZero { .. })));
    }

    #[test]
    fn non_finite_is_an_error() {
        let p = PotentialProgram::parse("stage a when true: progress = exp(1000)").unwrap();
        let f = frame([0.2; 3], [0.2; 3]);
        assert!(matches!(p.evaluate(&[], &f, &f), Err(EvalError::NonFinite { .. })));
    }

    #[test]
    fn theta_checks() {
        let p = PotentialProgram::parse(MINIMAL).unwrap();
        let f = frame([0.0; 3], [0.25, 0.0, 0.0]);
        assert!(matches!(p.evaluate(&[], &f, &f), Err(EvalError::ThetaLength { expected: 1, got: 0 })));
        assert!(matches!(p.evaluate(&[5.0], &f, &f), Err(EvalError::ThetaOutOfBounds { .. })));
    }

    #[test]
    fn features() {
        let start = MotionFlowFrame::new(0)
            .with_cluster("g", vec![[0.0, 0.0, 0.0], [0.2, 0.0, 0.0]])
            .with_cluster("o", vec![[1.0, 2.0, 2.0]]);
        let now = MotionFlowFrame::new(1)
            .with_cluster("g", vec![[0.0, 3.0, 4.0], [0.2, 3.0, 4.0]])
            .with_cluster("o", vec![[1.0, 2.0, 2.0]]);
        let eval = |body: &str| {
            let p = PotentialProgram::parse(&format!("stage a when true: progress = ({body}) / 100")).unwrap();
            p.evaluate(&[], &now, &start).unwrap().value * 100.0
        };
        let close = |a: f64, b: f64| assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        close(eval("disp(g)"), 5.0);
        close(eval("dy(g)"), 3.0);
        close(eval("dz(g) - z(g)"), 0.0);
        close(eval("x(g)"), 0.1);
        close(eval("spread(g)"), 0.1);
        close(eval("dist(g, o)"), (0.81f64 + 1.0 + 4.0).sqrt());
        close(eval("sigmoid(0, 3) * 10"), 5.0);
        close(eval("max(tanh(0), abs(-2))"), 2.0);
        close(eval("clamp(7, 1, 5) + min(1, 2)"), 6.0);
    }
}
