//! Scripted reach, grasp, lift and place in a unit-cube workspace.
//!
//! The scene has three regions of interest: a two-finger `gripper` whose
//! spread is half its aperture, a small four-point `object`, and a one-point
//! `target` hovering above the table. Phase changes are decided from the
//! emitted frames with the same arithmetic the program evaluator uses, so the
//! ground-truth labels agree exactly with the golden program's guards.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{distance, DataError, DemoDataset, MotionFlowFrame, Point3, Trajectory};
use crate::dsl::PotentialProgram;
use crate::parallel::Exec;
use crate::rng::RngSeed;

pub const STAGE_NAMES: [&str; 4] = ["reach", "grasp", "lift", "place"];

pub const TASK_DESCRIPTION: &str = "Pick and place. A two-finger gripper (RoI `gripper`) moves to a small \
block (RoI `object`) resting on the table, closes its fingers around it, lifts it by about 0.2, and carries \
it to a goal point (RoI `target`) above the table. Coordinates are canonical units in a unit cube; z points up.";

pub const GROUND_TRUTH_SOURCE: &str = include_str!("../../assets/ground_truth.pot");

/// The golden program for this task.
pub fn ground_truth_program() -> PotentialProgram {
    PotentialProgram::parse(GROUND_TRUTH_SOURCE).expect("golden program parses")
}

const HOME: Point3 = [0.5, 0.5, 0.45];
const TABLE_Z: f64 = 0.02;
const TARGET_Z: f64 = 0.30;
const OPEN: f64 = 0.08;
const CLOSED: f64 = 0.02;
const CLOSE_STEP: f64 = 0.015;
const SPEED: f64 = 0.03;
const LIFT_SPEED: f64 = 0.02;
const GRASP_DIST: f64 = 0.02;
const GRASP_SPREAD: f64 = 0.015;
const LIFT_HEIGHT: f64 = 0.2;
const DONE_DIST: f64 = 0.01;
const SUCCESS_DIST: f64 = 0.05;
/// Per-frame chance of dropping a carried object, per unit of noise.
const SLIP_RATE: f64 = 0.25;
const OBJECT_HALF_WIDTH: f64 = 0.01;

/// Where object start positions are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StartRegion {
    /// x in [0.1, 0.1 + 0.5 c], y in [0.1, 0.4] for coverage c.
    #[default]
    Train,
    /// x in [0.65, 0.9], y in [0.1, 0.4]: disjoint from every training region.
    Shifted,
}

impl StartRegion {
    /// `([x_lo, x_hi], [y_lo, y_hi])` for the given coverage fraction.
    pub fn bounds(self, coverage: f64) -> ([f64; 2], [f64; 2]) {
        match self {
            StartRegion::Train => ([0.1, 0.1 + 0.5 * coverage], [0.1, 0.4]),
            StartRegion::Shifted => ([0.65, 0.9], [0.1, 0.4]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTask {
    pub seed: RngSeed,
    pub max_frames: usize,
    pub region: StartRegion,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        SyntheticTask { seed: RngSeed(0), max_frames: 100, region: StartRegion::Train }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutKind {
    /// The full script.
    Success,
    /// The script, but the object is dropped during lift or place and the
    /// gripper retreats.
    Partial,
    /// A random walk of the gripper.
    Random,
}

impl RolloutKind {
    fn tag(self) -> u64 {
        match self {
            RolloutKind::Success => 1,
            RolloutKind::Partial => 2,
            RolloutKind::Random => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Phase {
    Reach,
    Grasp,
    Lift,
    Place,
}

struct Scene {
    gripper: Point3,
    aperture: f64,
    object: Point3,
    target: Point3,
    attached: bool,
    phase: Phase,
    done: bool,
}

fn add(a: Point3, b: Point3) -> Point3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

/// Displacement of length `min(speed, |to − from|)` toward `to`.
fn step_toward(from: Point3, to: Point3, speed: f64) -> Point3 {
    let d = distance(from, to);
    if d == 0.0 {
        return [0.0; 3];
    }
    let s = speed.min(d) / d;
    [(to[0] - from[0]) * s, (to[1] - from[1]) * s, (to[2] - from[2]) * s]
}

fn clamp_cube(p: Point3) -> Point3 {
    [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0), p[2].clamp(TABLE_Z, 1.0)]
}

impl Scene {
    fn frame(&self, t: usize) -> MotionFlowFrame {
        let (g, o, h) = (self.gripper, self.object, self.aperture / 2.0);
        let w = OBJECT_HALF_WIDTH;
        MotionFlowFrame::new(t)
            .with_cluster("gripper", vec![[g[0] - h, g[1], g[2]], [g[0] + h, g[1], g[2]]])
            .with_cluster(
                "object",
                vec![[o[0] - w, o[1], o[2]], [o[0] + w, o[1], o[2]], [o[0], o[1] - w, o[2]], [o[0], o[1] + w, o[2]]],
            )
            .with_cluster("target", vec![self.target])
    }

    /// Latch phase changes visible in `frame`.
    fn observe(&mut self, frame: &MotionFlowFrame, start: &MotionFlowFrame) {
        let c = |f: &MotionFlowFrame, n: &str| f.centroid(n).expect("scene clusters");
        let near = distance(c(frame, "gripper"), c(frame, "object")) < GRASP_DIST;
        let closed = frame.spread("gripper").expect("scene clusters") < GRASP_SPREAD;
        let lifted = c(frame, "object")[2] - c(start, "object")[2] >= LIFT_HEIGHT;
        let arrived = distance(c(frame, "object"), c(frame, "target")) < DONE_DIST;
        loop {
            let next = match self.phase {
                Phase::Reach if near => Phase::Grasp,
                Phase::Grasp if near && closed => Phase::Lift,
                Phase::Lift if lifted => Phase::Place,
                _ => break,
            };
            self.phase = next;
        }
        if self.phase == Phase::Lift {
            self.attached = true;
        }
        if self.phase == Phase::Place && arrived {
            self.done = true;
        }
    }

    fn drop_object(&mut self) {
        self.attached = false;
        self.object[2] = TABLE_Z;
        self.phase = Phase::Reach;
        self.aperture = OPEN;
    }

    /// One scripted control step with additive gripper noise.
    fn script_step(&mut self, noise: Point3, lift_goal: f64) {
        let (g, o) = (self.gripper, self.object);
        let motion = match self.phase {
            Phase::Reach => step_toward(g, o, SPEED),
            Phase::Grasp => {
                self.aperture = (self.aperture - CLOSE_STEP).max(CLOSED);
                step_toward(g, o, SPEED)
            }
            Phase::Lift => [0.0, 0.0, LIFT_SPEED.min((lift_goal - g[2]).max(0.0))],
            Phase::Place => step_toward(g, self.target, SPEED),
        };
        self.gripper = clamp_cube(add(add(g, motion), noise));
        if self.attached {
            self.object = self.gripper;
        }
    }
}

fn noise_vec(rng: &mut impl Rng, scale: f64) -> Point3 {
    if scale == 0.0 {
        return [0.0; 3];
    }
    let mut draw = || rng.sample::<f64, _>(StandardNormal) * scale;
    [draw(), draw(), draw()]
}

fn sample_scene(rng: &mut impl Rng, region: StartRegion, coverage: f64) -> Scene {
    let ([x0, x1], [y0, y1]) = region.bounds(coverage);
    let x = if x1 > x0 { rng.random_range(x0..=x1) } else { x0 };
    let y = rng.random_range(y0..=y1);
    let object = [x, y, TABLE_Z];
    let target = [x + rng.random_range(-0.1..=0.1), y + rng.random_range(0.2..=0.35), TARGET_Z];
    Scene { gripper: HOME, aperture: OPEN, object, target, attached: false, phase: Phase::Reach, done: false }
}

fn finish(scene: &Scene, frames: Vec<MotionFlowFrame>, labels: Vec<usize>) -> Trajectory {
    let success = distance(scene.object, scene.target) < SUCCESS_DIST;
    let mut t = Trajectory::new(frames, success);
    t.stage_labels = Some(labels);
    if let Ok(trace) = ground_truth_program().evaluate_trajectory(&ground_truth_program().defaults(), &t) {
        let max = trace.potentials.iter().copied().fold(0.0, f64::max);
        let last = *trace.potentials.last().unwrap_or(&0.0);
        t.gt_score = Some(0.5 * (max + last));
    }
    t
}

/// Scripted rollout. `drop_after` forces a drop that many frames into the
/// carry (lift or place) and then retreats home for `retreat` frames.
fn scripted(task: &SyntheticTask, seed: RngSeed, noise_level: f64, coverage: f64, drop_after: Option<(usize, usize)>) -> Trajectory {
    let mut rng = seed.rng();
    let mut scene = sample_scene(&mut rng, task.region, coverage);
    let lift_goal = scene.object[2] + LIFT_HEIGHT + 0.02;
    let start = scene.frame(0);
    let mut frames = vec![start.clone()];
    let mut labels = vec![scene.phase as usize];
    let mut carried = 0;
    let mut retreating: Option<usize> = None;
    while frames.len() < task.max_frames.max(2) && !scene.done {
        let t = frames.len();
        if let Some(left) = retreating {
            if left == 0 {
                break;
            }
            let g = scene.gripper;
            scene.gripper = clamp_cube(add(g, step_toward(g, HOME, SPEED)));
            retreating = Some(left - 1);
        } else {
            let carrying = scene.phase >= Phase::Lift;
            if carrying {
                carried += 1;
            }
            match drop_after {
                Some((after, retreat)) if carrying && carried > after => {
                    scene.drop_object();
                    retreating = Some(retreat);
                }
                _ if carrying && noise_level > 0.0 && rng.random_bool((SLIP_RATE * noise_level).min(1.0)) => {
                    scene.drop_object();
                }
                _ => {
                    let n = noise_vec(&mut rng, noise_level * SPEED);
                    scene.script_step(n, lift_goal);
                }
            }
        }
        let f = scene.frame(t);
        if retreating.is_none() {
            scene.observe(&f, &start);
        }
        frames.push(f);
        labels.push(scene.phase as usize);
    }
    finish(&scene, frames, labels)
}

fn random_walk(task: &SyntheticTask, seed: RngSeed, coverage: f64, len: usize) -> Trajectory {
    let mut rng = seed.rng();
    let mut scene = sample_scene(&mut rng, task.region, coverage);
    let start = scene.frame(0);
    let mut frames = vec![start.clone()];
    let mut labels = vec![0];
    for t in 1..len.max(2) {
        let dir: Point3 = noise_vec(&mut rng, 1.0);
        let norm = distance(dir, [0.0; 3]).max(1e-12);
        let g = scene.gripper;
        scene.gripper = clamp_cube([g[0] + SPEED * dir[0] / norm, g[1] + SPEED * dir[1] / norm, g[2] + SPEED * dir[2] / norm]);
        scene.aperture = (scene.aperture + rng.random_range(-CLOSE_STEP..=CLOSE_STEP)).clamp(CLOSED, OPEN);
        let f = scene.frame(t);
        scene.observe(&f, &start);
        frames.push(f);
        labels.push(scene.phase as usize);
    }
    finish(&scene, frames, labels)
}

/// Generate one rollout of the given kind.
pub fn rollout(task: &SyntheticTask, kind: RolloutKind, index: usize, noise_level: f64, coverage: f64) -> Trajectory {
    let seed = task.seed.derive(kind.tag()).derive(index as u64);
    match kind {
        RolloutKind::Success => scripted(task, seed, noise_level, coverage, None),
        RolloutKind::Partial => {
            // The drop point is drawn from its own stream so the scene matches
            // the success rollout with the same index.
            let mut r = seed.derive(0xD20).rng();
            let after = r.random_range(0..18);
            scripted(task, seed, 0.0, coverage, Some((after, 10)))
        }
        RolloutKind::Random => random_walk(task, seed, coverage, 60),
    }
}

pub fn generate_rollouts(task: &SyntheticTask, kind: RolloutKind, count: usize, noise_level: f64, coverage: f64) -> Vec<Trajectory> {
    Exec::default().map_range(count, |i| rollout(task, kind, i, noise_level, coverage))
}

/// `count` scripted demonstrations as a split dataset.
pub fn generate_demos(task: &SyntheticTask, count: usize, noise_level: f64, coverage: f64) -> Result<DemoDataset, DataError> {
    DemoDataset::new(generate_rollouts(task, RolloutKind::Success, count, noise_level, coverage))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::{components, spearman};

    fn clean(count: usize, seed: u64) -> DemoDataset {
        generate_demos(&SyntheticTask { seed: RngSeed(seed), ..SyntheticTask::default() }, count, 0.0, 1.0).unwrap()
    }

    #[test]
    fn golden_file_is_canonical() {
        assert_eq!(ground_truth_program().to_source(), GROUND_TRUTH_SOURCE);
        assert_eq!(ground_truth_program().stage_count(), 4);
        assert!(ground_truth_program().is_translation_invariant());
    }

    #[test]
    fn clean_demos_succeed_with_monotone_labels() {
        let ds = clean(20, 1);
        for t in ds.all() {
            assert!(t.success);
            assert!(t.len() <= 100);
            let labels = t.stage_labels.as_ref().unwrap();
            assert!(labels.windows(2).all(|w| w[0] <= w[1]));
            assert_eq!(labels.last(), Some(&3));
            assert!(t.gt_score.unwrap() > 0.99);
        }
    }

    #[test]
    fn golden_program_is_perfect_on_clean_demos() {
        let p = ground_truth_program();
        for t in clean(20, 2).all() {
            let trace = p.evaluate_trajectory(&p.defaults(), t).unwrap();
            let c = components(&trace, t.stage_labels.as_ref().unwrap(), 1.0).unwrap();
            assert_eq!((c.c_stage, c.c_prog, c.c_pbrs), (1.0, 1.0, 1.0), "{:?}", trace.potentials);
            let c99 = components(&trace, t.stage_labels.as_ref().unwrap(), 0.99).unwrap();
            assert!(c99.c_pbrs >= 0.9, "{c99:?}");
        }
    }

    #[test]
    fn coverage_limits_start_region() {
        let ds = generate_demos(&SyntheticTask::default(), 40, 0.0, 0.125).unwrap();
        for t in ds.all() {
            let o = t.initial().centroid("object").unwrap();
            assert!((0.1..=0.1625 + 1e-12).contains(&o[0]), "{o:?}");
            assert!((0.1..=0.4 + 1e-12).contains(&o[1]));
        }
        let shifted = SyntheticTask { region: StartRegion::Shifted, ..SyntheticTask::default() };
        for t in generate_demos(&shifted, 20, 0.0, 1.0).unwrap().all() {
            let x = t.initial().centroid("object").unwrap()[0];
            assert!((0.65 - 1e-12..=0.9 + 1e-12).contains(&x));
        }
    }

    #[test]
    fn deterministic_per_seed() {
        assert_eq!(clean(5, 7).to_jsonl(), clean(5, 7).to_jsonl());
        assert_ne!(clean(5, 7).to_jsonl(), clean(5, 8).to_jsonl());
    }

    #[test]
    fn noise_degrades_progress() {
        let task = SyntheticTask { seed: RngSeed(3), ..SyntheticTask::default() };
        let noisy = generate_demos(&task, 20, 0.3, 1.0).unwrap();
        let p = ground_truth_program();
        let mean_prog: f64 = noisy
            .all()
            .iter()
            .map(|t| {
                let tr = p.evaluate_trajectory(&p.defaults(), t).unwrap();
                spearman(&tr.potentials, &crate::surrogate::normalized_time(t.len())).unwrap()
            })
            .sum::<f64>()
            / 20.0;
        assert!(mean_prog < 0.95, "{mean_prog}");
    }

    #[test]
    fn rollout_kinds_are_ordered_by_ground_truth_score() {
        let task = SyntheticTask::default();
        let mean = |k| {
            let ts = generate_rollouts(&task, k, 10, 0.0, 1.0);
            ts.iter().map(|t| t.gt_score.unwrap()).sum::<f64>() / 10.0
        };
        let (s, p, r) = (mean(RolloutKind::Success), mean(RolloutKind::Partial), mean(RolloutKind::Random));
        assert!(s > p && p > r, "{s} {p} {r}");
        assert!(generate_rollouts(&task, RolloutKind::Partial, 10, 0.0, 1.0).iter().all(|t| !t.success));
    }
}
