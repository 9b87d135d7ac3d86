//! Subcommand implementations.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::{info, warn};
use rewardsynth::data::{load_trajectories, trajectories_to_jsonl};
use rewardsynth::mdporacle::{generate_rollouts, ground_truth_program, run_suite, RolloutKind, StartRegion, SuiteConfig, SyntheticTask};
use rewardsynth::parallel::Exec;
use rewardsynth::shaping::{begin_episode, shape_trajectory, total_return};
use rewardsynth::surrogate::{progress_alignment, score_with, spearman};
use rewardsynth::synthesis::{
    run_synthesis, Checkpoint, LlmProposer, MutationProposer, Proposer, RunOptions, SynthesisError, SynthesisOutcome,
};
use rewardsynth::{DemoDataset, MilestoneConfig, PotentialProgram, RngSeed, SurrogateWeights};
use serde::Serialize;
use serde_json::json;

use crate::config::{ProposerKind, RunConfig};
use crate::{Classify, Exit, GenDemosArgs, MilestoneArgs, ProgramArgs, ScoreArgs, ShapeArgs, SynthesizeArgs, VerifyArgs};

/// Recorded in every manifest so outputs can be traced to a build.
pub const GENERATOR_VERSION: &str = concat!("rewardsynth ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Train,
    Shifted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Success,
    Partial,
    Random,
    Mixed,
}

#[derive(Serialize)]
struct Manifest<'a, P: Serialize> {
    generator: &'static str,
    command: &'a str,
    seed: u64,
    /// False when outputs depend on an external service.
    reproducible: bool,
    params: P,
}

pub fn executor(jobs: Option<usize>) -> Result<Exec> {
    match jobs {
        Some(0) => bail!("--jobs must be ≥ 1"),
        Some(1) => Ok(Exec::Sequential),
        Some(n) => {
            #[cfg(feature = "parallel")]
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("starting the worker pool")?;
            #[cfg(not(feature = "parallel"))]
            warn!("built without the parallel feature; ignoring --jobs {n}");
            Ok(Exec::Parallel)
        }
        None => Ok(Exec::Parallel),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_or_print(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// `out.jsonl` → `out.manifest.json`.
fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

pub fn gen_demos(a: &GenDemosArgs) -> Result<()> {
    if a.count == 0 {
        return Err(anyhow!("--count must be ≥ 1")).class(Exit::Config);
    }
    if !(a.coverage > 0.0 && a.coverage <= 1.0) {
        return Err(anyhow!("--coverage must lie in (0, 1], got {}", a.coverage)).class(Exit::Config);
    }
    if !(a.noise >= 0.0 && a.noise.is_finite()) {
        return Err(anyhow!("--noise must be ≥ 0, got {}", a.noise)).class(Exit::Config);
    }
    if a.max_frames < 2 {
        return Err(anyhow!("--max-frames must be ≥ 2")).class(Exit::Config);
    }
    let region = match a.region {
        Region::Train => StartRegion::Train,
        Region::Shifted => StartRegion::Shifted,
    };
    let task = SyntheticTask { seed: RngSeed(a.seed), max_frames: a.max_frames, region };
    let kinds: &[RolloutKind] = match a.kind {
        Kind::Success => &[RolloutKind::Success],
        Kind::Partial => &[RolloutKind::Partial],
        Kind::Random => &[RolloutKind::Random],
        Kind::Mixed => &[RolloutKind::Success, RolloutKind::Partial, RolloutKind::Random],
    };
    let trajectories: Vec<_> = kinds.iter().flat_map(|k| generate_rollouts(&task, *k, a.count, a.noise, a.coverage)).collect();
    write(&a.out, &trajectories_to_jsonl(&trajectories))?;
    let gt = ground_truth_program().to_source();
    if let Some(p) = &a.ground_truth {
        write(p, &gt)?;
    }
    let manifest = Manifest {
        generator: GENERATOR_VERSION,
        command: "gen-demos",
        seed: a.seed,
        reproducible: true,
        params: json!({
            "count": a.count,
            "trajectories": trajectories.len(),
            "kind": a.kind,
            "noise": a.noise,
            "coverage": a.coverage,
            "region": a.region,
            "max_frames": a.max_frames,
            "ground_truth_program": gt,
        }),
    };
    write(&manifest_path(&a.out), &pretty(&manifest))?;
    info!("wrote {} trajectories to {}", trajectories.len(), a.out.display());
    Ok(())
}

fn load_dataset(path: &Path) -> Result<DemoDataset> {
    load_trajectories(path).with_context(|| format!("loading {}", path.display())).class(Exit::Dataset)
}

/// File, then flags, over defaults.
fn effective_config(a: &SynthesizeArgs) -> Result<RunConfig> {
    let mut c = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &a.dataset {
        c.dataset = Some(v.clone());
    }
    if let Some(v) = &a.out_dir {
        c.output_dir = v.clone();
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if let Some(v) = a.iterations {
        c.synthesis.iterations = v;
    }
    if let Some(v) = a.batch_size {
        c.synthesis.batch_size = v;
    }
    if let Some(v) = a.reflection_size {
        c.synthesis.reflection_size = v;
    }
    if let Some(v) = a.budget {
        c.bo.budget = v;
    }
    if let Some(v) = a.proposer {
        c.proposer.kind = v;
    }
    Ok(c)
}

fn build_proposer(c: &RunConfig) -> Result<Box<dyn Proposer>> {
    match c.proposer.kind {
        ProposerKind::Mutation => {
            Ok(Box::new(MutationProposer::new(RngSeed(c.seed).derive(0x5EED)).max_stages(c.proposer.max_stages)))
        }
        ProposerKind::Llm => {
            let settings = c.proposer.llm.clone().with_env();
            settings.validate().class(Exit::Config)?;
            let mut p = LlmProposer::from_settings(settings).class(Exit::Config)?;
            if let Some(path) = &c.proposer.prompt_file {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).class(Exit::Config)?;
                p = p.prompt_template(text);
            }
            Ok(Box::new(p))
        }
    }
}

fn synthesis_failure(e: SynthesisError) -> anyhow::Error {
    let exit = match &e {
        SynthesisError::Config(_) | SynthesisError::Checkpoint { .. } => Exit::Config,
        SynthesisError::Unlabeled => Exit::Dataset,
        SynthesisError::Proposer { .. } => Exit::Proposer,
    };
    if let SynthesisError::Proposer { checkpoint: Some(p), .. } = &e {
        warn!("progress so far is in {}; rerun with --resume", p.display());
    }
    anyhow::Error::new(e).context(exit)
}

pub fn synthesize(a: &SynthesizeArgs, exec: Exec) -> Result<()> {
    let c = effective_config(a).class(Exit::Config)?;
    if a.print_config {
        print!("{}", c.to_toml());
        return Ok(());
    }
    c.validate().class(Exit::Config)?;
    let dataset_path = c.dataset.clone().expect("validated");
    let dataset = load_dataset(&dataset_path)?;
    let dir = &c.output_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let checkpoint = dir.join("checkpoint.json");
    let resume = if a.resume {
        if !checkpoint.exists() {
            return Err(anyhow!("nothing to resume: {} does not exist", checkpoint.display())).class(Exit::Config);
        }
        Some(Checkpoint::load(&checkpoint).map_err(synthesis_failure)?)
    } else {
        None
    };
    let mut proposer = build_proposer(&c)?;
    let reproducible = proposer.reproducible();
    let config = c.synthesis_config();
    let options = RunOptions { checkpoint: Some(checkpoint), resume, exec };
    let out = run_synthesis(&dataset, &config, &c.task, proposer.as_mut(), &options).map_err(synthesis_failure)?;
    write_synthesis(&c, &dataset, &out, reproducible, exec)?;
    let best = out.best.score_full.unwrap_or(f64::NEG_INFINITY);
    info!("best program scores {best} on all demonstrations; outputs in {}", dir.display());
    Ok(())
}

fn write_synthesis(c: &RunConfig, dataset: &DemoDataset, out: &SynthesisOutcome, reproducible: bool, exec: Exec) -> Result<()> {
    let dir = &c.output_dir;
    let best = &out.best;
    let program = best.tuned_program();
    write(&dir.join("best.pot"), &program.to_source())?;
    let names: Vec<&str> = program.params.iter().map(|p| p.name.as_str()).collect();
    write(&dir.join("theta.json"), &pretty(&json!({ "names": names, "theta": best.theta() })))?;
    let cfg = c.synthesis_config();
    let full = score_with(&best.program, best.theta(), dataset.all(), &cfg.weights, cfg.gamma, exec)?;
    let report = json!({
        "program": program.to_source(),
        "theta": best.theta(),
        "iteration": best.iteration,
        "index": best.index,
        "origin": best.origin,
        "all": full,
        "mean": full.mean(),
        "train": best.train_components,
        "validation": best.val_components,
        "best_history": out.best_history.iter().map(|v| if v.is_finite() { json!(v) } else { json!(v.to_string()) }).collect::<Vec<_>>(),
        "inner_validation_reads": out.inner_val_reads,
    });
    write(&dir.join("report.json"), &pretty(&report))?;
    write(&dir.join("log.jsonl"), &out.log_jsonl())?;
    write(&dir.join("config.toml"), &c.to_toml())?;
    let manifest = Manifest {
        generator: GENERATOR_VERSION,
        command: "synthesize",
        seed: c.seed,
        reproducible,
        params: json!({
            "proposer": c.proposer.kind,
            "dataset": c.dataset,
            "trajectories": dataset.len(),
            "train": dataset.n_train(),
            "validation": dataset.n_val(),
            "config": c,
        }),
    };
    write(&dir.join("manifest.json"), &pretty(&manifest))
}

fn load_program(a: &ProgramArgs) -> Result<(PotentialProgram, Vec<f64>)> {
    let text = std::fs::read_to_string(&a.program).with_context(|| format!("reading {}", a.program.display())).class(Exit::Config)?;
    let program = PotentialProgram::parse(&text).with_context(|| format!("parsing {}", a.program.display())).class(Exit::Config)?;
    let theta = match &a.theta {
        Some(t) => t.clone(),
        None => program.defaults(),
    };
    if theta.len() != program.params.len() {
        return Err(anyhow!("program has {} parameters, --theta gives {}", program.params.len(), theta.len())).class(Exit::Config);
    }
    if !program.theta_in_bounds(&theta) {
        return Err(anyhow!("--theta is outside the declared parameter bounds")).class(Exit::Config);
    }
    Ok((program, theta))
}

fn milestones(m: &MilestoneArgs) -> Result<MilestoneConfig> {
    match &m.bonuses {
        Some(b) => MilestoneConfig::new(b.clone(), m.gamma),
        None => MilestoneConfig::uniform(m.k, m.gamma),
    }
    .class(Exit::Config)
}

pub fn score(a: &ScoreArgs, exec: Exec) -> Result<()> {
    let (program, theta) = load_program(&a.program)?;
    let milestones = milestones(&a.milestones)?;
    let [stage, progress, pbrs] = a.weights[..] else {
        return Err(anyhow!("--weights takes three values")).class(Exit::Config);
    };
    let weights = SurrogateWeights::new(stage, progress, pbrs).class(Exit::Config)?;
    let dataset = load_dataset(&a.program.dataset)?;
    let ts = dataset.all();

    // Per-trajectory metrics; an evaluation error is reported, not fatal.
    let per: Vec<serde_json::Value> = exec.map(ts, |t| match program.evaluate_trajectory(&theta, t) {
        Ok(trace) => {
            let alignment = progress_alignment(&trace.potentials).ok();
            let ret = shape_trajectory(&milestones, &program, &theta, t).ok().map(|s| total_return(&s));
            json!({ "process_alignment": alignment, "shaped_return": ret, "gt_score": t.gt_score, "success": t.success })
        }
        Err(e) => json!({ "error": e.to_string() }),
    });
    let alignments: Vec<f64> = per.iter().filter_map(|v| v["process_alignment"].as_f64()).collect();
    let returns: Vec<Option<f64>> = per.iter().map(|v| v["shaped_return"].as_f64()).collect();
    let gts: Vec<Option<f64>> = ts.iter().map(|t| t.gt_score).collect();
    // Ranking needs a ground-truth score and a return for every trajectory.
    let ranking = match (returns.iter().copied().collect::<Option<Vec<_>>>(), gts.iter().copied().collect::<Option<Vec<_>>>()) {
        (Some(r), Some(g)) if r.len() >= 2 => spearman(&r, &g).ok(),
        _ => None,
    };
    let labeled = dataset.is_labeled();
    let surrogate = if labeled { Some(score_with(&program, &theta, ts, &weights, milestones.gamma(), exec)?) } else { None };
    let report = json!({
        "program": program.to_source(),
        "theta": theta,
        "trajectories": ts.len(),
        "surrogate": surrogate,
        "mean": surrogate.as_ref().and_then(|s| s.mean()),
        "process_alignment": {
            "mean": if alignments.is_empty() { None } else { Some(alignments.iter().sum::<f64>() / alignments.len() as f64) },
        },
        "rollout_ranking": ranking,
        "per_trajectory": per,
    });
    write_or_print(a.out.as_deref(), &pretty(&report))?;

    if let Some(path) = &a.frames {
        let mut csv = String::from("trajectory,t,phi,stage,label\n");
        for (i, t) in ts.iter().enumerate() {
            let Ok(trace) = program.evaluate_trajectory(&theta, t) else { continue };
            for (k, (phi, s)) in trace.potentials.iter().zip(&trace.stages).enumerate() {
                let label = t.stage_labels.as_ref().map(|l| l[k].to_string()).unwrap_or_default();
                csv.push_str(&format!("{i},{k},{phi},{s},{label}\n"));
            }
        }
        write(path, &csv)?;
    }
    Ok(())
}

pub fn shape(a: &ShapeArgs) -> Result<()> {
    let (program, theta) = load_program(&a.program)?;
    let milestones = milestones(&a.milestones)?;
    let dataset = load_dataset(&a.program.dataset)?;
    let Some(t) = dataset.all().get(a.index) else {
        return Err(anyhow!("--index {} out of range ({} trajectories)", a.index, dataset.len())).class(Exit::Config);
    };
    let transitions = shape_trajectory(&milestones, &program, &theta, t).context("shaping").class(Exit::Dataset)?;
    let phi0 = program.evaluate_trajectory(&theta, t).class(Exit::Dataset)?.potentials[0];
    let start = begin_episode(&milestones, phi0).class(Exit::Dataset)?;
    write_or_print(a.out.as_deref(), &rewardsynth::shaping::transitions_csv(&start, &transitions))
}

pub fn verify_invariance(a: &VerifyArgs, exec: Exec) -> Result<()> {
    let config = SuiteConfig {
        count: a.count,
        max_states: a.max_states,
        max_actions: a.max_actions,
        max_k: a.max_k,
        gamma_min: a.gamma_min,
        gamma_max: a.gamma_max,
        seed: RngSeed(a.seed),
        adversarial_every: a.adversarial_every,
    };
    config.validate().class(Exit::Config)?;
    let report = run_suite(&config, exec).class(Exit::Config)?;
    write_or_print(a.out.as_deref(), &pretty(&report))?;
    if !report.passed() {
        return Err(anyhow!("{} argmax violations across {} MDPs", report.total_violations, report.instances.len())).class(Exit::Invariance);
    }
    info!("{} MDPs, {} argmax sets checked, no violations", report.instances.len(), report.total_checked);
    Ok(())
}
