//! Motion-flow trajectories and demonstration datasets.
//!
//! A trajectory is a sequence of [`MotionFlowFrame`]s, each holding named
//! clusters of tracked 3D keypoints in a canonical object-centric frame.
//! Datasets are read from JSON Lines, one trajectory per line:
//!
//! ```text
//! {"frames":[{"t":0,"clusters":{"gripper":[[x,y,z],...],"object":[...]}},...],"stage_labels":[0,0,1,...],"success":true}
//! ```
//!
//! Optional keys: `env_rewards` (one per transition) and `gt_score`
//! (a ground-truth quality score used by the ranking protocol).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Point3 = [f64; 3];

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: parse error: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: invalid trajectory: {message}")]
    Invalid { line: usize, message: String },
    #[error("empty dataset")]
    Empty,
    #[error("reference length must be positive, got {0}")]
    BadReferenceLength(f64),
}

/// Keypoint clusters observed at one timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionFlowFrame {
    #[serde(rename = "t")]
    pub timestep: usize,
    pub clusters: BTreeMap<String, Vec<Point3>>,
}

impl MotionFlowFrame {
    pub fn new(timestep: usize) -> Self {
        MotionFlowFrame { timestep, clusters: BTreeMap::new() }
    }

    pub fn with_cluster(mut self, name: &str, points: Vec<Point3>) -> Self {
        self.clusters.insert(name.to_string(), points);
        self
    }

    pub fn cluster(&self, name: &str) -> Option<&[Point3]> {
        self.clusters.get(name).map(Vec::as_slice)
    }

    /// Mean of the cluster's points.
    pub fn centroid(&self, name: &str) -> Option<Point3> {
        let pts = self.cluster(name)?;
        if pts.is_empty() {
            return None;
        }
        let n = pts.len() as f64;
        let mut c = [0.0; 3];
        for p in pts {
            for i in 0..3 {
                c[i] += p[i];
            }
        }
        Some([c[0] / n, c[1] / n, c[2] / n])
    }

    /// Mean distance of the cluster's points to its centroid.
    pub fn spread(&self, name: &str) -> Option<f64> {
        let c = self.centroid(name)?;
        let pts = self.cluster(name)?;
        Some(pts.iter().map(|p| distance(*p, c)).sum::<f64>() / pts.len() as f64)
    }

    /// Every point shifted by `offset`.
    pub fn translated(&self, offset: Point3) -> Self {
        let clusters = self
            .clusters
            .iter()
            .map(|(k, pts)| {
                let moved = pts
                    .iter()
                    .map(|p| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]])
                    .collect();
                (k.clone(), moved)
            })
            .collect();
        MotionFlowFrame { timestep: self.timestep, clusters }
    }

    fn check(&self) -> Result<(), String> {
        for (name, pts) in &self.clusters {
            if pts.is_empty() {
                return Err(format!("frame t={}: cluster {name:?} has no points", self.timestep));
            }
            if pts.iter().flatten().any(|c| !c.is_finite()) {
                return Err(format!("frame t={}: cluster {name:?} has a non-finite coordinate", self.timestep));
            }
        }
        Ok(())
    }
}

/// One demonstration or rollout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub frames: Vec<MotionFlowFrame>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage_labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub env_rewards: Option<Vec<f64>>,
    pub success: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gt_score: Option<f64>,
}

impl Trajectory {
    pub fn new(frames: Vec<MotionFlowFrame>, success: bool) -> Self {
        Trajectory { frames, stage_labels: None, env_rewards: None, success, gt_score: None }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Frame 0, the reference observation for displacement features.
    pub fn initial(&self) -> &MotionFlowFrame {
        &self.frames[0]
    }

    /// Per-transition environment reward. Without explicit rewards this is the
    /// sparse signal: 0 everywhere, 1 on the final transition iff successful.
    pub fn base_rewards(&self) -> Vec<f64> {
        match &self.env_rewards {
            Some(r) => r.clone(),
            None => {
                let n = self.frames.len().saturating_sub(1);
                let mut r = vec![0.0; n];
                if self.success && n > 0 {
                    r[n - 1] = 1.0;
                }
                r
            }
        }
    }

    /// Structural checks independent of any program: length, label and
    /// reward lengths, non-empty finite clusters, and a consistent RoI set.
    pub fn validate(&self) -> Result<(), String> {
        if self.frames.len() < 2 {
            return Err(format!("trajectory needs at least 2 frames, got {}", self.frames.len()));
        }
        if let Some(labels) = &self.stage_labels {
            if labels.len() != self.frames.len() {
                return Err(format!(
                    "stage_labels has {} entries for {} frames",
                    labels.len(),
                    self.frames.len()
                ));
            }
        }
        if let Some(r) = &self.env_rewards {
            if r.len() != self.frames.len() - 1 {
                return Err(format!(
                    "env_rewards has {} entries for {} transitions",
                    r.len(),
                    self.frames.len() - 1
                ));
            }
            if r.iter().any(|x| !x.is_finite()) {
                return Err("env_rewards contains a non-finite value".into());
            }
        }
        let names: Vec<&String> = self.frames[0].clusters.keys().collect();
        for f in &self.frames {
            f.check()?;
            let these: Vec<&String> = f.clusters.keys().collect();
            if these != names {
                let missing: Vec<&&String> = names.iter().filter(|n| !f.clusters.contains_key(n.as_str())).collect();
                return Err(match missing.first() {
                    Some(n) => format!("frame t={}: missing RoI {n:?}", f.timestep),
                    None => format!("frame t={}: RoI set differs from frame 0", f.timestep),
                });
            }
        }
        Ok(())
    }

    /// Labels must be bounded by the program's stage count.
    pub fn check_label_bound(&self, stage_count: usize) -> Result<(), String> {
        if let Some(labels) = &self.stage_labels {
            if let Some(bad) = labels.iter().find(|&&l| l >= stage_count) {
                return Err(format!("stage label {bad} exceeds stage count {stage_count}"));
            }
        }
        Ok(())
    }
}

/// Which half of the 60/40 demonstration split a trajectory belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
}

/// Demonstrations split into training and validation slices.
///
/// The first `ceil(0.6 * N)` trajectories in file order form the training
/// slice. Reads of the validation slice are counted so callers can prove an
/// optimizer never touched it.
#[derive(Debug)]
pub struct DemoDataset {
    trajectories: Vec<Trajectory>,
    n_train: usize,
    val_reads: AtomicUsize,
}

impl Clone for DemoDataset {
    fn clone(&self) -> Self {
        DemoDataset {
            trajectories: self.trajectories.clone(),
            n_train: self.n_train,
            val_reads: AtomicUsize::new(0),
        }
    }
}

impl PartialEq for DemoDataset {
    fn eq(&self, other: &Self) -> bool {
        self.n_train == other.n_train && self.trajectories == other.trajectories
    }
}

/// Training-slice size for `n` trajectories: ceil(0.6 n).
pub fn train_count(n: usize) -> usize {
    (3 * n).div_ceil(5)
}

impl DemoDataset {
    pub fn new(trajectories: Vec<Trajectory>) -> Result<Self, DataError> {
        if trajectories.is_empty() {
            return Err(DataError::Empty);
        }
        for (i, t) in trajectories.iter().enumerate() {
            t.validate().map_err(|message| DataError::Invalid { line: i + 1, message })?;
        }
        let n_train = train_count(trajectories.len());
        Ok(DemoDataset { trajectories, n_train, val_reads: AtomicUsize::new(0) })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn n_train(&self) -> usize {
        self.n_train
    }

    pub fn n_val(&self) -> usize {
        self.trajectories.len() - self.n_train
    }

    pub fn split_of(&self, index: usize) -> Split {
        if index < self.n_train {
            Split::Train
        } else {
            Split::Val
        }
    }

    pub fn splits(&self) -> Vec<Split> {
        (0..self.len()).map(|i| self.split_of(i)).collect()
    }

    pub fn train(&self) -> &[Trajectory] {
        &self.trajectories[..self.n_train]
    }

    /// Validation slice. Counted.
    pub fn val(&self) -> &[Trajectory] {
        self.val_reads.fetch_add(1, Ordering::SeqCst);
        &self.trajectories[self.n_train..]
    }

    /// Both slices (D_demo). Counted as a validation read.
    pub fn all(&self) -> &[Trajectory] {
        self.val_reads.fetch_add(1, Ordering::SeqCst);
        &self.trajectories
    }

    /// Number of validation-slice reads so far.
    pub fn val_reads(&self) -> usize {
        self.val_reads.load(Ordering::SeqCst)
    }

    pub fn into_trajectories(self) -> Vec<Trajectory> {
        self.trajectories
    }

    /// True when every trajectory carries stage labels.
    pub fn is_labeled(&self) -> bool {
        self.trajectories.iter().all(|t| t.stage_labels.is_some())
    }

    pub fn to_jsonl(&self) -> String {
        trajectories_to_jsonl(&self.trajectories)
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        std::fs::write(path, self.to_jsonl())
            .map_err(|source| DataError::Io { path: path.display().to_string(), source })
    }
}

pub fn trajectories_to_jsonl(trajectories: &[Trajectory]) -> String {
    let mut out = String::new();
    for t in trajectories {
        // Serialization of plain data cannot fail.
        let line = serde_json::to_string(t).expect("trajectory serializes");
        let _ = writeln!(out, "{line}");
    }
    out
}

/// Parse JSONL text into validated trajectories. Blank lines are skipped;
/// errors carry the 1-based line number.
pub fn parse_trajectories(text: &str) -> Result<Vec<Trajectory>, DataError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let t: Trajectory = serde_json::from_str(raw)
            .map_err(|e| DataError::Parse { line, message: e.to_string() })?;
        t.validate().map_err(|message| DataError::Invalid { line, message })?;
        out.push(t);
    }
    Ok(out)
}

pub fn parse_dataset(text: &str) -> Result<DemoDataset, DataError> {
    let trajectories = parse_trajectories(text)?;
    if trajectories.is_empty() {
        return Err(DataError::Empty);
    }
    DemoDataset::new(trajectories)
}

pub fn load_trajectories(path: &Path) -> Result<DemoDataset, DataError> {
    let text = std::fs::read_to_string(path)
        .map_err(|source| DataError::Io { path: path.display().to_string(), source })?;
    parse_dataset(&text)
}

/// Express frames in a canonical frame: translate by `-origin`, then divide
/// by `reference_length`.
pub fn canonicalize(
    frames: &[MotionFlowFrame],
    origin: Point3,
    reference_length: f64,
) -> Result<Vec<MotionFlowFrame>, DataError> {
    if !(reference_length > 0.0) || !reference_length.is_finite() {
        return Err(DataError::BadReferenceLength(reference_length));
    }
    let map = |p: &Point3| {
        [
            (p[0] - origin[0]) / reference_length,
            (p[1] - origin[1]) / reference_length,
            (p[2] - origin[2]) / reference_length,
        ]
    };
    Ok(frames
        .iter()
        .map(|f| MotionFlowFrame {
            timestep: f.timestep,
            clusters: f.clusters.iter().map(|(k, pts)| (k.clone(), pts.iter().map(map).collect())).collect(),
        })
        .collect())
}

pub(crate) fn distance(a: Point3, b: Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(t: usize, g: Point3, o: Point3) -> MotionFlowFrame {
        MotionFlowFrame::new(t).with_cluster("gripper", vec![g]).with_cluster("object", vec![o])
    }

    fn traj(n: usize) -> Trajectory {
        let frames = (0..n).map(|t| frame(t, [t as f64, 0.0, 0.0], [1.0, 1.0, 0.0])).collect();
        let mut tr = Trajectory::new(frames, true);
        tr.stage_labels = Some(vec![0; n]);
        tr
    }

    fn jsonl(count: usize) -> String {
        trajectories_to_jsonl(&(0..count).map(|_| traj(3)).collect::<Vec<_>>())
    }

    #[test]
    fn split_counts() {
        assert_eq!(parse_dataset(&jsonl(5)).unwrap().n_train(), 3);
        let d = parse_dataset(&jsonl(10)).unwrap();
        assert_eq!((d.n_train(), d.n_val()), (6, 4));
        assert_eq!(train_count(1), 1);
        assert_eq!(train_count(3), 2);
    }

    #[test]
    fn empty_file_is_error() {
        assert!(matches!(parse_dataset(""), Err(DataError::Empty)));
        assert_eq!(parse_dataset("\n\n").unwrap_err().to_string(), "empty dataset");
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let text = format!("{}{{\"frames\": 3}}\n", jsonl(1));
        match parse_dataset(&text) {
            Err(DataError::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_roi_reports_line_number() {
        let mut t = traj(3);
        t.frames[2].clusters.remove("object");
        let text = format!("{}{}", jsonl(2), trajectories_to_jsonl(&[t]));
        match parse_dataset(&text) {
            Err(DataError::Invalid { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("missing RoI \"object\""), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn label_length_mismatch() {
        let mut t = traj(3);
        t.stage_labels = Some(vec![0, 1]);
        assert!(t.validate().unwrap_err().contains("stage_labels"));
        let mut t = traj(3);
        t.env_rewards = Some(vec![0.0]);
        assert!(t.validate().is_err());
        assert!(traj(1).validate().is_err());
    }

    #[test]
    fn sparse_default_rewards() {
        let t = traj(4);
        assert_eq!(t.base_rewards(), vec![0.0, 0.0, 1.0]);
        let mut f = traj(4);
        f.success = false;
        assert_eq!(f.base_rewards(), vec![0.0; 3]);
    }

    #[test]
    fn val_reads_are_counted() {
        let d = parse_dataset(&jsonl(5)).unwrap();
        let _ = d.train();
        assert_eq!(d.val_reads(), 0);
        let _ = d.val();
        let _ = d.all();
        assert_eq!(d.val_reads(), 2);
    }

    #[test]
    fn canonicalize_examples() {
        let f = vec![frame(0, [2.0, 0.0, 0.0], [0.0, 4.0, 2.0])];
        assert_eq!(canonicalize(&f, [0.0; 3], 1.0).unwrap(), f);
        let c = canonicalize(&f, [1.0, 0.0, 0.0], 2.0).unwrap();
        assert_eq!(c[0].cluster("gripper").unwrap()[0], [0.5, 0.0, 0.0]);
        let twice = canonicalize(&c, [1.0, 0.0, 0.0], 2.0).unwrap();
        assert_ne!(twice, c);
        assert!(matches!(canonicalize(&f, [0.0; 3], 0.0), Err(DataError::BadReferenceLength(_))));
        assert!(canonicalize(&f, [0.0; 3], -1.0).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let d = parse_dataset(&jsonl(5)).unwrap();
        d.save(&path).unwrap();
        let back = load_trajectories(&path).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.splits(), d.splits());
        assert_eq!(std::fs::read_to_string(&path).unwrap(), back.to_jsonl());
    }
}
