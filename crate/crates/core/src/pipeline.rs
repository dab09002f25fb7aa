//! End-to-end run: exemplary demonstration, constraints, data collection,
//! training, closed-loop execution, evaluation and a hashed manifest.
//!
//! Every stage reads its inputs from the output directory, so the CLI can run
//! them one at a time. With `resume`, a stage whose recorded outputs are all
//! present is skipped; once any stage runs, every later stage runs too.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autoencoder::{rgb8_input, train_autoencoder, AeTrainConfig};
use crate::config::RunConfig;
use crate::error::{FlsError, Result};
use crate::evaluation::{
    pca_csv, pca_svg, segment_separation, sigma_ave, success_csv, success_table, success_totals,
    variance_csv, LatentTrace, Pca, Stage, SuccessRow, VarianceRow,
};
use crate::kinematics::ChainModel;
use crate::phase::{detect_phases, extract_constraints, ConstraintSet};
use crate::policy::{encode_demos, execute_policy, load_autoencoder, save_autoencoder, ExecutionRun, PolicyModel, TrainingMeta};
use crate::rnnpb::{train_rnnpb, RnnTrainConfig};
use crate::scene::{read_png_rgb8, Arm, SceneState, SuccessFlags};
use crate::sim::Rig;
use crate::teacher::{collect_demos, exemplary_demo, sample_styles};
use crate::trajectory::{DemoRecord, TrajectoryStep, Variant};

pub const VARIANTS: [Variant; 2] = [Variant::Constrained, Variant::Normal];

/// Paths inside an output directory.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn constraints(&self) -> PathBuf {
        self.root.join("constraints.txt")
    }
    pub fn demos(&self) -> PathBuf {
        self.root.join("demos")
    }
    pub fn exemplary(&self) -> PathBuf {
        self.demos().join("exemplary.log")
    }
    pub fn demo(&self, variant: Variant, k: usize) -> PathBuf {
        self.demos().join(format!("{}_{k:02}.log", variant.name()))
    }
    pub fn frames(&self) -> PathBuf {
        self.root.join("frames")
    }
    pub fn ae(&self) -> PathBuf {
        self.root.join("ae.ckpt")
    }
    /// The constrained-trained policy is the primary model.
    pub fn model(&self, variant: Variant) -> PathBuf {
        match variant {
            Variant::Constrained => self.root.join("model.ckpt"),
            Variant::Normal => self.root.join("model_normal.ckpt"),
        }
    }
    pub fn runs(&self) -> PathBuf {
        self.root.join("runs")
    }
    pub fn run(&self, variant: Variant, peg: usize, trial: usize) -> PathBuf {
        self.runs().join(format!("{}_peg{peg}_trial{trial}.log", variant.name()))
    }
    pub fn eval(&self) -> PathBuf {
        self.root.join("eval")
    }
    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics")
    }
    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.txt")
    }
    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }
    fn stamps(&self) -> PathBuf {
        self.root.join("stages")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageName {
    ExtractConstraints,
    Collect,
    TrainAe,
    TrainRnnpb,
    Execute,
    Evaluate,
}

impl StageName {
    pub const ALL: [StageName; 6] = [
        StageName::ExtractConstraints,
        StageName::Collect,
        StageName::TrainAe,
        StageName::TrainRnnpb,
        StageName::Execute,
        StageName::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StageName::ExtractConstraints => "extract-constraints",
            StageName::Collect => "collect",
            StageName::TrainAe => "train-ae",
            StageName::TrainRnnpb => "train-rnnpb",
            StageName::Execute => "execute",
            StageName::Evaluate => "evaluate",
        }
    }
}

fn rel(ws: &Workspace, p: &Path) -> String {
    p.strip_prefix(&ws.root).unwrap_or(p).to_string_lossy().replace('\\', "/")
}

fn write_stamp(ws: &Workspace, stage: StageName, outputs: &[PathBuf]) -> Result<()> {
    fs::create_dir_all(ws.stamps())?;
    let mut s = String::new();
    for p in outputs {
        s.push_str(&rel(ws, p));
        s.push('\n');
    }
    fs::write(ws.stamps().join(format!("{}.done", stage.name())), s)?;
    Ok(())
}

fn stage_complete(ws: &Workspace, stage: StageName) -> bool {
    let Ok(text) = fs::read_to_string(ws.stamps().join(format!("{}.done", stage.name()))) else {
        return false;
    };
    text.lines().filter(|l| !l.is_empty()).all(|l| ws.root.join(l).is_file())
}

pub fn build_rig(cfg: &RunConfig) -> Result<Rig> {
    Rig::new(&ChainModel::synthetic_7r(), &cfg.rig, cfg.scene.clone(), cfg.ik)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| FlsError::Parse(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

fn to_json_pretty<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string_pretty(v).map_err(|e| FlsError::Parse(e.to_string()))
}

/// Scripted exemplary demonstration, its phases, and the per-phase depth bands.
pub fn stage_extract(cfg: &RunConfig, rig: &Rig, ws: &Workspace) -> Result<ConstraintSet> {
    fs::create_dir_all(ws.demos())?;
    let run = exemplary_demo(rig, &cfg.teacher, cfg.exemplary_peg)?;
    let trace = detect_phases(
        &run.record.steps,
        cfg.transitions.velocity_threshold,
        cfg.transitions.n_thre_constraint_gen,
    )?;
    let set = ConstraintSet::new(extract_constraints(&run.record.steps, &trace)?);
    log::info!(
        "exemplary demonstration: {} steps, {} phases",
        run.record.steps.len(),
        set.phase_count()
    );
    run.record.write_log(&ws.exemplary())?;
    set.write(&ws.constraints())?;
    write_stamp(ws, StageName::ExtractConstraints, &[ws.exemplary(), ws.constraints()])?;
    Ok(set)
}

/// Constrained and normal demonstrations from the same operator styles, plus
/// the autoencoder frame corpus.
pub fn stage_collect(cfg: &RunConfig, rig: &Rig, ws: &Workspace) -> Result<()> {
    let set = ConstraintSet::read(&ws.constraints())?;
    let styles = sample_styles(&cfg.styles, cfg.demos_per_variant, cfg.seeds().styles);
    fs::create_dir_all(ws.demos())?;
    if ws.frames().exists() {
        fs::remove_dir_all(ws.frames())?;
    }
    fs::create_dir_all(ws.frames())?;
    let mut outputs = Vec::new();
    for variant in VARIANTS {
        let constraints = (variant == Variant::Constrained).then_some(&set);
        let runs = collect_demos(rig, &cfg.teacher, &cfg.transitions, constraints, &styles)?;
        for (k, run) in runs.iter().enumerate() {
            let path = ws.demo(variant, k);
            run.record.write_log(&path)?;
            outputs.push(path);
            for (t, state) in run.states.iter().enumerate().step_by(cfg.frame_stride) {
                let p = ws.frames().join(format!("{}_{k:02}_{t:04}.png", variant.name()));
                rig.scene.render(state).write_png(&p)?;
                outputs.push(p);
            }
        }
        log::info!("collected {} {} demonstrations", runs.len(), variant.name());
    }
    write_stamp(ws, StageName::Collect, &outputs)
}

pub fn load_demos(ws: &Workspace, variant: Variant, count: usize) -> Result<Vec<DemoRecord>> {
    (0..count).map(|k| DemoRecord::read_log(&ws.demo(variant, k))).collect()
}

fn load_frames(dir: &Path) -> Result<Vec<Vec<f64>>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "png"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let (w, h, rgb) = read_png_rgb8(p)?;
            Ok(rgb8_input(&rgb, w, h))
        })
        .collect()
}

pub fn stage_train_ae(cfg: &RunConfig, ws: &Workspace) -> Result<()> {
    let images = load_frames(&ws.frames())?;
    if images.len() < 500 {
        log::warn!("autoencoder corpus has only {} frames", images.len());
    }
    let seeds = cfg.seeds();
    let train_cfg = AeTrainConfig {
        seed: seeds.ae_shuffle,
        ..cfg.ae_train.clone()
    };
    log::info!("training autoencoder on {} frames", images.len());
    let (ae, report) = train_autoencoder(&images, cfg.autoencoder.clone(), &train_cfg, seeds.ae_init)?;
    fs::create_dir_all(ws.metrics())?;
    write_jsonl(&ws.metrics().join("ae.jsonl"), &report.epochs)?;
    save_autoencoder(&ws.ae(), &ae)?;
    let summary = serde_json::json!({
        "frames_train": report.train_frames,
        "frames_holdout": report.holdout_frames,
        "initial_holdout_loss": report.initial_holdout_loss,
        "holdout_loss": report.epochs.iter().map(|e| e.holdout_loss).collect::<Vec<_>>(),
    });
    fs::write(ws.root.join("ae_report.json"), to_json_pretty(&summary)?)?;
    write_stamp(ws, StageName::TrainAe, &[ws.ae(), ws.root.join("ae_report.json")])
}

fn ae_final_holdout(ws: &Workspace) -> Option<f64> {
    let text = fs::read_to_string(ws.root.join("ae_report.json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    v["holdout_loss"].as_array()?.last()?.as_f64()
}

/// Trains one policy on a variant's demonstrations with the shared encoder.
pub fn train_policy(cfg: &RunConfig, rig: &Rig, ws: &Workspace, variant: Variant) -> Result<PolicyModel> {
    let demos = load_demos(ws, variant, cfg.demos_per_variant)?;
    let mut ae = load_autoencoder(&ws.ae())?;
    let seqs = encode_demos(&mut ae, rig, &demos);
    let seeds = cfg.seeds();
    let train_cfg = RnnTrainConfig {
        seed: seeds.rnn_noise,
        ..cfg.rnn_train.clone()
    };
    log::info!("training {} rnnpb ({} profile)", variant.name(), cfg.profile.name());
    let (rnn, report) = train_rnnpb(&seqs, cfg.rnnpb_spec(), &train_cfg, seeds.rnn_init)?;
    fs::create_dir_all(ws.metrics())?;
    write_jsonl(&ws.metrics().join(format!("rnnpb_{}.jsonl", variant.name())), &report.epochs)?;
    log::info!(
        "{} rnnpb loss {:.5} -> {:.5}",
        variant.name(),
        report.initial_loss,
        report.final_clean_loss
    );
    let meta = TrainingMeta {
        profile: cfg.profile.name().into(),
        ae_epochs: cfg.ae_train.epochs,
        ae_seed: seeds.ae_init,
        ae_final_holdout: ae_final_holdout(ws).unwrap_or(0.0),
        rnn_epochs: train_cfg.epochs,
        rnn_seed: seeds.rnn_init,
        rnn_lr: train_cfg.lr,
        noise_scale: train_cfg.noise_scale,
        rnn_initial_loss: report.initial_loss,
        rnn_final_loss: report.final_clean_loss,
        demos: demos.len(),
    };
    Ok(PolicyModel { ae, rnn, meta })
}

pub fn stage_train_rnnpb(cfg: &RunConfig, rig: &Rig, ws: &Workspace) -> Result<()> {
    let mut outputs = Vec::new();
    for variant in VARIANTS {
        let model = train_policy(cfg, rig, ws, variant)?;
        model.save(&ws.model(variant))?;
        outputs.push(ws.model(variant));
    }
    write_stamp(ws, StageName::TrainRnnpb, &outputs)
}

/// Start offsets for every (peg, trial), shared by both variants.
pub fn evaluation_offsets(cfg: &RunConfig) -> Vec<Vec<[Vector3<f64>; 2]>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds().eval);
    let r = cfg.eval.start_offset;
    let mut draw = || {
        if r == 0.0 {
            0.0
        } else {
            rng.gen_range(-r..=r)
        }
    };
    (0..cfg.eval.pegs)
        .map(|_| {
            (0..cfg.eval.trials)
                .map(|_| {
                    [
                        Vector3::new(draw(), draw(), draw()),
                        Vector3::new(draw(), draw(), draw()),
                    ]
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunHeader {
    pub variant: Variant,
    pub peg: usize,
    pub trial: usize,
    pub offsets: [[f64; 3]; 2],
    pub p: Vec<f64>,
    pub flags: SuccessFlags,
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunLine {
    step: TrajectoryStep,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    latent: Option<Vec<f64>>,
}

/// An execution as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLog {
    pub header: RunHeader,
    pub steps: Vec<TrajectoryStep>,
    pub latents: Vec<Vec<f64>>,
}

impl RunLog {
    pub fn from_run(variant: Variant, trial: usize, offsets: [Vector3<f64>; 2], p: &[f64], run: &ExecutionRun) -> Self {
        Self {
            header: RunHeader {
                variant,
                peg: run.peg,
                trial,
                offsets: [offsets[0].into(), offsets[1].into()],
                p: p.to_vec(),
                flags: run.flags,
                failure: run.failure.clone(),
            },
            steps: run.steps.clone(),
            latents: run.latents.clone(),
        }
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(fs::File::create(path)?);
        let enc = |e: serde_json::Error| FlsError::Parse(e.to_string());
        serde_json::to_writer(&mut w, &self.header).map_err(enc)?;
        w.write_all(b"\n")?;
        for (i, s) in self.steps.iter().enumerate() {
            let line = RunLine {
                step: s.clone(),
                latent: self.latents.get(i).cloned(),
            };
            serde_json::to_writer(&mut w, &line).map_err(enc)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let r = BufReader::new(fs::File::open(path)?);
        let bad = |n: usize, e: serde_json::Error| FlsError::Parse(format!("{} line {n}: {e}", path.display()));
        let mut lines = r.lines();
        let first = lines
            .next()
            .ok_or_else(|| FlsError::Parse(format!("{}: empty run log", path.display())))??;
        let header: RunHeader = serde_json::from_str(&first).map_err(|e| bad(1, e))?;
        let mut steps = Vec::new();
        let mut latents = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let l: RunLine = serde_json::from_str(&line).map_err(|e| bad(i + 2, e))?;
            steps.push(l.step);
            if let Some(v) = l.latent {
                latents.push(v);
            }
        }
        Ok(Self { header, steps, latents })
    }

    pub fn states(&self, rig: &Rig) -> Vec<SceneState> {
        self.steps.iter().map(|s| s.scene_state(rig.geometry())).collect()
    }
}

/// Closed-loop runs of both policies on every evaluation peg and trial.
pub fn stage_execute(cfg: &RunConfig, rig: &Rig, ws: &Workspace) -> Result<()> {
    fs::create_dir_all(ws.runs())?;
    let offsets = evaluation_offsets(cfg);
    let p = vec![0.0; cfg.n_p];
    let mut outputs = Vec::new();
    for variant in VARIANTS {
        let mut model = PolicyModel::load(&ws.model(variant))?;
        for (peg, row) in offsets.iter().enumerate() {
            for (trial, off) in row.iter().enumerate() {
                let run = execute_policy(&mut model, rig, peg, *off, &p, &cfg.execution)?;
                log::info!(
                    "{} peg {peg} trial {trial}: {} steps, take {} pass {} insert {}{}",
                    variant.name(),
                    run.steps.len(),
                    run.flags.take,
                    run.flags.pass,
                    run.flags.insert,
                    run.failure.as_deref().map(|f| format!(" ({f})")).unwrap_or_default()
                );
                let path = ws.run(variant, peg, trial);
                RunLog::from_run(variant, trial, *off, &p, &run).write(&path)?;
                outputs.push(path);
            }
        }
    }
    write_stamp(ws, StageName::Execute, &outputs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaSummary {
    pub runs: Vec<String>,
    pub explained: Vec<f64>,
    pub take_separation: Option<f64>,
    pub insert_separation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub variance: Vec<VarianceRow>,
    pub success: Vec<SuccessRow>,
    /// (variant, [trials, take, pass, insert]).
    pub totals: Vec<(Variant, [usize; 4])>,
    pub pca: Option<PcaSummary>,
}

impl EvalSummary {
    pub fn totals_for(&self, variant: Variant) -> Option<[usize; 4]> {
        self.totals.iter().find(|t| t.0 == variant).map(|t| t.1)
    }

    pub fn sigma(&self, variant: Variant, arm: Arm) -> Option<f64> {
        self.variance
            .iter()
            .find(|r| r.variant == variant.name() && r.arm == arm)
            .map(|r| r.sigma.value)
    }
}

pub fn stage_evaluate(cfg: &RunConfig, rig: &Rig, ws: &Workspace) -> Result<EvalSummary> {
    fs::create_dir_all(ws.eval())?;
    let mut variance = Vec::new();
    for variant in VARIANTS {
        let demos = load_demos(ws, variant, cfg.demos_per_variant)?;
        for arm in Arm::BOTH {
            variance.push(VarianceRow {
                variant: variant.name().into(),
                arm,
                sigma: sigma_ave(&demos, arm)?,
            });
        }
    }
    let mut success = Vec::new();
    let mut totals = Vec::new();
    let mut traces = Vec::new();
    for variant in VARIANTS {
        let mut runs = Vec::new();
        for peg in 0..cfg.eval.pegs {
            let mut logs = Vec::with_capacity(cfg.eval.trials);
            for trial in 0..cfg.eval.trials {
                let log = RunLog::read(&ws.run(variant, peg, trial))?;
                runs.push((peg, log.header.flags));
                logs.push(log);
            }
            if variant == Variant::Constrained {
                // One run per peg: the first complete transfer, else the
                // first that reached the hand-off, else the first trial.
                let pick = logs
                    .iter()
                    .position(|l| l.header.flags.insert)
                    .or_else(|| logs.iter().position(|l| l.header.flags.pass))
                    .unwrap_or(0);
                let log = logs.swap_remove(pick);
                let states = log.states(rig);
                let id = format!("peg{peg}_trial{pick}");
                traces.push(LatentTrace::new(id, peg, log.latents, &states));
            }
        }
        let rows = success_table(variant.name(), &runs);
        totals.push((variant, success_totals(&rows)));
        success.extend(rows);
    }
    let pca = if traces.iter().map(|t| t.latents.len()).sum::<usize>() > cfg.eval.pca_dims {
        let data: Vec<Vec<f64>> = traces.iter().flat_map(|t| t.latents.iter().cloned()).collect();
        let pca = Pca::fit(&data, cfg.eval.pca_dims)?;
        fs::write(ws.eval().join("pca.csv"), pca_csv(&pca, &traces))?;
        fs::write(
            ws.eval().join("pca.svg"),
            pca_svg(&pca, &traces, "Recurrent state, constrained policy, one run per source peg"),
        )?;
        Some(PcaSummary {
            runs: traces.iter().map(|t| t.run_id.clone()).collect(),
            explained: pca.explained.clone(),
            take_separation: segment_separation(&pca, &traces, Stage::Take),
            insert_separation: segment_separation(&pca, &traces, Stage::Insert),
        })
    } else {
        log::warn!("not enough latent samples for pca");
        None
    };
    fs::write(ws.eval().join("variance.csv"), variance_csv(&variance))?;
    fs::write(ws.eval().join("success.csv"), success_csv(&success))?;
    let summary = EvalSummary {
        variance,
        success,
        totals,
        pca,
    };
    fs::write(ws.eval().join("summary.json"), to_json_pretty(&summary)?)?;
    for (v, t) in &summary.totals {
        log::info!("{}: take {}/{} pass {} insert {}", v.name(), t[1], t[0], t[2], t[3]);
    }
    write_stamp(ws, StageName::Evaluate, &[ws.eval().join("summary.json")])?;
    Ok(summary)
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut h = Sha256::new();
    let mut f = fs::File::open(path)?;
    std::io::copy(&mut f, &mut h)?;
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for e in fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Files whose content carries wall-clock times; listed but not hashed.
fn is_volatile(rel: &str) -> bool {
    rel.starts_with("metrics/")
}

/// Seeds and profile as comment lines, an optional failure note, then
/// `sha256  path` for every output sorted by path.
pub fn write_manifest(ws: &Workspace, cfg: &RunConfig, failure: Option<&str>) -> Result<String> {
    let mut files = Vec::new();
    collect_files(&ws.root, &mut files)?;
    let mut entries: Vec<(String, PathBuf)> = files
        .into_iter()
        .map(|p| (rel(ws, &p), p))
        .filter(|(r, _)| r != "manifest.txt" && !r.starts_with("stages/"))
        .collect();
    entries.sort();
    let seeds = cfg.seeds();
    let mut s = format!(
        "# fls manifest v1\n# profile {}\n# seed {}\n# seeds styles={} ae_init={} ae_shuffle={} rnn_init={} rnn_noise={} eval={}\n",
        cfg.profile.name(),
        cfg.seed,
        seeds.styles,
        seeds.ae_init,
        seeds.ae_shuffle,
        seeds.rnn_init,
        seeds.rnn_noise,
        seeds.eval
    );
    if let Some(f) = failure {
        s.push_str(&format!("# failed {}\n", f.replace('\n', " ")));
    }
    s.push_str("# sha256  path (wall-clock metrics are listed as volatile)\n");
    for (r, p) in entries {
        let h = if is_volatile(&r) {
            "volatile".to_string()
        } else {
            sha256_file(&p)?
        };
        s.push_str(&format!("{h}  {r}\n"));
    }
    fs::write(ws.manifest(), &s)?;
    Ok(s)
}

/// Parses manifest lines into (hash, path).
pub fn read_manifest(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            l.split_once("  ")
                .map(|(h, p)| (h.to_string(), p.to_string()))
                .ok_or_else(|| FlsError::Parse(format!("manifest line '{l}'")))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub ran: Vec<StageName>,
    pub skipped: Vec<StageName>,
    pub summary: Option<EvalSummary>,
    pub seconds: f64,
}

pub fn run_stage(stage: StageName, cfg: &RunConfig, rig: &Rig, ws: &Workspace) -> Result<Option<EvalSummary>> {
    let t0 = Instant::now();
    log::info!("stage {} started", stage.name());
    let summary = match stage {
        StageName::ExtractConstraints => stage_extract(cfg, rig, ws).map(|_| None),
        StageName::Collect => stage_collect(cfg, rig, ws).map(|_| None),
        StageName::TrainAe => stage_train_ae(cfg, ws).map(|_| None),
        StageName::TrainRnnpb => stage_train_rnnpb(cfg, rig, ws).map(|_| None),
        StageName::Execute => stage_execute(cfg, rig, ws).map(|_| None),
        StageName::Evaluate => stage_evaluate(cfg, rig, ws).map(Some),
    }?;
    log::info!("stage {} finished in {:.1}s", stage.name(), t0.elapsed().as_secs_f64());
    Ok(summary)
}

pub fn run_pipeline(cfg: &RunConfig, out: &Path, resume: bool) -> Result<PipelineReport> {
    cfg.validate()?;
    let t0 = Instant::now();
    let ws = Workspace::new(out);
    fs::create_dir_all(&ws.root)?;
    if !resume {
        fs::remove_dir_all(ws.stamps()).or_else(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Ok(()),
            _ => Err(e),
        })?;
    }
    fs::write(ws.config(), cfg.to_toml())?;
    let rig = build_rig(cfg)?;
    let mut report = PipelineReport {
        ran: Vec::new(),
        skipped: Vec::new(),
        summary: None,
        seconds: 0.0,
    };
    let mut dirty = !resume;
    for stage in StageName::ALL {
        if !dirty && stage_complete(&ws, stage) {
            log::info!("stage {} up to date, skipped", stage.name());
            report.skipped.push(stage);
            continue;
        }
        dirty = true;
        match run_stage(stage, cfg, &rig, &ws) {
            Ok(Some(s)) => report.summary = Some(s),
            Ok(None) => {}
            Err(e) => {
                log::error!("stage {} failed: {e}; later stages skipped", stage.name());
                write_manifest(&ws, cfg, Some(&format!("{}: {e}", stage.name())))?;
                return Err(e);
            }
        }
        report.ran.push(stage);
    }
    write_manifest(&ws, cfg, None)?;
    report.seconds = t0.elapsed().as_secs_f64();
    Ok(report)
}
