//! Scripted operator that produces the exemplary demonstration and the
//! collection demonstrations.
//!
//! The operator moves each forcep in straight segments. Every tick it adds a
//! fixed increment to the last command it sent, so when force feedback pushes
//! a depth command back toward its band the rest of the segment continues from
//! the corrected position. Once the operator feels the band edge it stops
//! pushing further along z for the rest of that segment.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{FlsError, Result};
use crate::phase::{filter_sample, ConstraintSet, PhaseDetector, TransitionConfig};
use crate::scene::{success_flags, Arm, Gripper, SceneState, SuccessFlags, TARGET_PEG};
use crate::sim::{Rig, Simulation};
use crate::trajectory::{grip_events, DemoRecord, TrajectoryStep, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherStyle {
    pub speed_scale: f64,
    pub lateral_jitter_std: f64,
    pub depth_bias_std: f64,
    /// Dwell lengths vary uniformly by up to this many steps.
    pub pause_jitter: u32,
    /// Displacement of the starting tips from home, (left, right).
    pub start_offset: [[f64; 3]; 2],
    pub seed: u64,
}

impl Default for TeacherStyle {
    fn default() -> Self {
        Self {
            speed_scale: 1.0,
            lateral_jitter_std: 0.0,
            depth_bias_std: 0.0,
            pause_jitter: 0,
            start_offset: [[0.0; 3]; 2],
            seed: 0,
        }
    }
}

impl TeacherStyle {
    pub fn validate(&self) -> Result<()> {
        if !(self.speed_scale > 0.0 && self.speed_scale.is_finite())
            || !(self.lateral_jitter_std >= 0.0)
            || !(self.depth_bias_std >= 0.0)
            || !self.start_offset.iter().flatten().all(|v| v.is_finite())
        {
            return Err(FlsError::InvalidConfig(format!("teacher style {self:?}")));
        }
        Ok(())
    }
}

/// Ranges from which collection styles are drawn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StyleRanges {
    pub speed_scale: [f64; 2],
    pub lateral_jitter_std: f64,
    pub depth_bias_std: f64,
    pub pause_jitter: u32,
    /// Starting tips are displaced uniformly within this many mm per axis.
    pub start_offset: f64,
}

impl Default for StyleRanges {
    fn default() -> Self {
        Self {
            speed_scale: [0.8, 1.25],
            lateral_jitter_std: 1.5,
            depth_bias_std: 3.0,
            pause_jitter: 2,
            start_offset: 2.0,
        }
    }
}

/// `count` styles with seeds derived from `seed`.
pub fn sample_styles(ranges: &StyleRanges, count: usize, seed: u64) -> Vec<TeacherStyle> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|k| {
            let [lo, hi] = ranges.speed_scale;
            let speed_scale = if hi > lo { rng.gen_range(lo..hi) } else { lo };
            let r = ranges.start_offset;
            let mut start_offset = [[0.0; 3]; 2];
            if r > 0.0 {
                for v in start_offset.iter_mut().flatten() {
                    *v = rng.gen_range(-r..=r);
                }
            }
            TeacherStyle {
                speed_scale,
                start_offset,
                lateral_jitter_std: ranges.lateral_jitter_std,
                depth_bias_std: ranges.depth_bias_std,
                pause_jitter: ranges.pause_jitter,
                seed: seed.wrapping_mul(1000).wrapping_add(k as u64 + 1),
            }
        })
        .collect()
}

/// Heights and timings of the peg-transfer script, millimeters and steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TeacherConfig {
    /// Tip travel per step at speed scale 1.
    pub nominal_speed: f64,
    pub exemplary_speed_scale: f64,
    pub hover_height: f64,
    pub handoff: [f64; 3],
    /// Left tip offset from the object when taking it over.
    pub handoff_grasp_offset: [f64; 3],
    pub left_hover_clearance: f64,
    pub carry_height: f64,
    /// Object height at which the left forcep lets go above the target peg.
    pub release_height: f64,
    pub exemplary_dwell: usize,
    pub collection_dwell: usize,
    pub final_dwell: usize,
    pub grip_pause: usize,
    pub handoff_pause: usize,
    /// Fraction of the feedback force the simulated operator yields to.
    pub compliance: f64,
    /// Attempts per demonstration before giving up.
    pub max_attempts: usize,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            nominal_speed: 4.0,
            exemplary_speed_scale: 0.5,
            hover_height: 45.0,
            handoff: [70.0, 0.0, 50.0],
            handoff_grasp_offset: [0.0, 2.0, 0.0],
            left_hover_clearance: 20.0,
            carry_height: 60.0,
            release_height: 28.0,
            exemplary_dwell: 25,
            collection_dwell: 14,
            final_dwell: 5,
            grip_pause: 2,
            handoff_pause: 3,
            compliance: 0.9,
            max_attempts: 8,
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nominal_speed > 0.0)
            || !(0.0..=1.0).contains(&self.compliance)
            || self.max_attempts == 0
            || self.exemplary_dwell == 0
            || self.collection_dwell == 0
        {
            return Err(FlsError::InvalidConfig(format!("teacher config {self:?}")));
        }
        Ok(())
    }
}

/// Live constraint feedback applied while collecting.
struct Feedback<'c> {
    set: &'c ConstraintSet,
    detector: PhaseDetector,
    compliance: f64,
}

struct Perturb {
    rng: ChaCha8Rng,
    lateral: f64,
    depth: f64,
}

impl Perturb {
    fn clipped(&mut self, std: f64, k: f64) -> f64 {
        if std <= 0.0 {
            return 0.0;
        }
        let v: f64 = Normal::new(0.0, std).expect("finite std").sample(&mut self.rng);
        v.clamp(-k * std, k * std)
    }

    /// Lateral error at a transit waypoint.
    fn transit(&mut self) -> Vector3<f64> {
        let s = self.lateral;
        Vector3::new(self.clipped(s, 2.5), self.clipped(s, 2.5), 0.0)
    }

    /// Small lateral error at a grasp or release point.
    fn fine(&mut self) -> Vector3<f64> {
        let s = 0.3 * self.lateral;
        Vector3::new(self.clipped(s, 2.0), self.clipped(s, 2.0), 0.0)
    }

    fn depth_bias(&mut self) -> f64 {
        let s = self.depth;
        self.clipped(s, 2.0)
    }

    /// Overshoot past a fine depth target, then the residual after correction.
    fn overshoot(&mut self) -> (f64, f64) {
        let s = self.depth;
        let b = self.clipped(s, 2.0).abs();
        let r = self.clipped(0.3 * s, 2.0);
        (b, r)
    }
}

struct Operator<'r, 'c> {
    sim: Simulation<'r>,
    speed: f64,
    cmd: [Vector3<f64>; 2],
    h: [u8; 2],
    steps: Vec<TrajectoryStep>,
    states: Vec<SceneState>,
    feedback: Option<Feedback<'c>>,
}

impl<'r, 'c> Operator<'r, 'c> {
    fn new(sim: Simulation<'r>, speed: f64, feedback: Option<Feedback<'c>>) -> Self {
        let cmd = [sim.state.tip(Arm::Left), sim.state.tip(Arm::Right)];
        let mut op = Self {
            sim,
            speed,
            cmd,
            h: [0, 0],
            steps: Vec::new(),
            states: Vec::new(),
            feedback,
        };
        op.record();
        if let Some(f) = op.feedback.as_mut() {
            f.detector.push(cmd, [0, 0]);
        }
        op
    }

    fn record(&mut self) {
        let t = self.steps.len();
        self.steps
            .push(TrajectoryStep::from_scene(t, self.cmd, self.h, &self.sim.state));
        self.states.push(self.sim.state.clone());
    }

    fn state(&self) -> &SceneState {
        &self.sim.state
    }

    /// One tick with raw operator intentions; returns which arms felt the band edge.
    fn tick(&mut self, raw: [Vector3<f64>; 2]) -> Result<[bool; 2]> {
        let mut cmd = raw;
        let mut felt = [false; 2];
        if let Some(f) = self.feedback.as_mut() {
            let phase = f.detector.phase();
            for arm in Arm::BOTH {
                let i = arm.index();
                if let Some(c) = f.set.active(phase, arm) {
                    cmd[i].z = filter_sample(raw[i].z, c, f.compliance);
                    felt[i] = !c.contains(raw[i].z);
                }
            }
            f.detector.push(cmd, self.h);
        }
        let grippers = [
            Gripper::from_h(self.h[0] as f64),
            Gripper::from_h(self.h[1] as f64),
        ];
        let report = self.sim.apply(cmd, grippers)?;
        if !report.converged() {
            return Err(FlsError::Diverged(format!(
                "ik failed at step {} (tip residuals {:.2e}, {:.2e})",
                self.steps.len(),
                report.ik[0].residual_tip,
                report.ik[1].residual_tip
            )));
        }
        self.cmd = cmd;
        self.record();
        Ok(felt)
    }

    /// Moves the given arms in straight lines at the operator's speed.
    fn move_to(&mut self, targets: [Option<Vector3<f64>>; 2]) -> Result<()> {
        let mut delta = [Vector3::zeros(); 2];
        let mut n = [0usize; 2];
        for arm in Arm::BOTH {
            let i = arm.index();
            if let Some(t) = targets[i] {
                let d = t - self.cmd[i];
                n[i] = (d.norm() / self.speed).ceil() as usize;
                if n[i] > 0 {
                    delta[i] = d / n[i] as f64;
                }
            }
        }
        let total = n[0].max(n[1]);
        let mut yielded = [false; 2];
        for k in 0..total {
            let mut raw = self.cmd;
            for i in 0..2 {
                if k < n[i] {
                    let mut d = delta[i];
                    if yielded[i] {
                        d.z = 0.0;
                    }
                    raw[i] += d;
                }
            }
            let felt = self.tick(raw)?;
            for i in 0..2 {
                yielded[i] |= felt[i];
            }
        }
        Ok(())
    }

    fn move_arm(&mut self, arm: Arm, target: Vector3<f64>) -> Result<()> {
        let mut t = [None, None];
        t[arm.index()] = Some(target);
        self.move_to(t)
    }

    fn hold(&mut self, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.tick(self.cmd)?;
        }
        Ok(())
    }

    fn grip(&mut self, arm: Arm, closed: bool) -> Result<()> {
        self.h[arm.index()] = closed as u8;
        self.tick(self.cmd)?;
        Ok(())
    }

    /// Descends to `target` with an overshoot of `b` below it, then corrects.
    fn descend(&mut self, arm: Arm, target: Vector3<f64>, b: f64) -> Result<()> {
        if b > 0.0 {
            self.move_arm(arm, target - Vector3::new(0.0, 0.0, b))?;
        }
        self.move_arm(arm, target)
    }
}

/// Output of one scripted run.
#[derive(Debug, Clone)]
pub struct TeacherRun {
    pub record: DemoRecord,
    pub states: Vec<SceneState>,
    pub flags: SuccessFlags,
    /// Phases seen by the live detector, when feedback was active.
    pub live_phases: Option<usize>,
}

fn run_script(
    rig: &Rig,
    cfg: &TeacherConfig,
    peg: usize,
    style: &TeacherStyle,
    exemplary: bool,
    feedback: Option<Feedback<'_>>,
) -> Result<TeacherRun> {
    style.validate()?;
    let g = rig.geometry().clone();
    let sim = rig.start(peg, style.start_offset.map(Vector3::from))?;
    let mut p = Perturb {
        rng: ChaCha8Rng::seed_from_u64(style.seed),
        lateral: style.lateral_jitter_std,
        depth: style.depth_bias_std,
    };
    let dwell_base = if exemplary { cfg.exemplary_dwell } else { cfg.collection_dwell };
    let dwell = |p: &mut Perturb| -> usize {
        let j = style.pause_jitter as i64;
        let d = if j > 0 { p.rng.gen_range(-j..=j) } else { 0 };
        (dwell_base as i64 + d).max(1) as usize
    };
    let mut op = Operator::new(sim, cfg.nominal_speed * style.speed_scale, feedback);
    let up = |z: f64| Vector3::new(0.0, 0.0, z);
    let with_z = |v: Vector3<f64>, z: f64| Vector3::new(v.x, v.y, z);

    // Right forcep approaches the object and settles above it.
    let seat = g.seat(peg);
    let hover = with_z(seat + p.transit(), cfg.hover_height + p.depth_bias());
    op.move_arm(Arm::Right, hover)?;
    let d = dwell(&mut p);
    op.hold(d)?;

    // Descend and grasp.
    let (b, r) = p.overshoot();
    let grasp = seat + p.fine() + up(r);
    op.descend(Arm::Right, grasp, b)?;
    op.hold(cfg.grip_pause)?;
    op.grip(Arm::Right, true)?;

    // Carry to the hand-off point; the left forcep comes over the object.
    let handoff = Vector3::from(cfg.handoff);
    let handoff = with_z(handoff + p.transit(), handoff.z + p.depth_bias());
    op.move_arm(Arm::Right, handoff)?;
    let obj = op.state().object_position();
    let offset = Vector3::from(cfg.handoff_grasp_offset);
    let above = obj + offset + p.transit() + up(cfg.left_hover_clearance + p.depth_bias());
    op.move_arm(Arm::Left, above)?;
    let d = dwell(&mut p);
    op.hold(d)?;

    // Left forcep descends onto the object and closes.
    let obj = op.state().object_position();
    let (b, r) = p.overshoot();
    let take = obj + offset + p.fine() + up(r);
    op.descend(Arm::Left, take, b)?;
    op.hold(cfg.grip_pause)?;
    op.grip(Arm::Left, true)?;

    // Right forcep lets go.
    op.hold(cfg.handoff_pause)?;
    op.grip(Arm::Right, false)?;

    // Right returns home while the left lifts, then the left carries over the target.
    let carry_z = cfg.carry_height + p.depth_bias();
    let left_tip = op.state().tip(Arm::Left);
    op.move_to([
        Some(with_z(left_tip, carry_z)),
        Some(rig.home_tips[Arm::Right.index()] + p.transit()),
    ])?;
    let grip_offset = op.state().object_position() - op.state().tip(Arm::Left);
    let target = g.seat(TARGET_PEG);
    let over = with_z(target - grip_offset + p.transit(), carry_z);
    op.move_arm(Arm::Left, over)?;
    let d = dwell(&mut p);
    op.hold(d)?;

    // Lower onto the target peg and release.
    let grip_offset = op.state().object_position() - op.state().tip(Arm::Left);
    let (b, r) = p.overshoot();
    let release = with_z(target - grip_offset + p.fine(), cfg.release_height - grip_offset.z + r);
    op.descend(Arm::Left, release, b)?;
    op.hold(cfg.grip_pause)?;
    op.grip(Arm::Left, false)?;

    // Retreat.
    op.move_arm(Arm::Left, rig.home_tips[Arm::Left.index()] + p.transit())?;
    op.hold(cfg.final_dwell)?;

    let live_phases = op.feedback.as_ref().map(|f| f.detector.phase());
    let flags = success_flags(&op.states);
    let events = grip_events(&op.steps);
    Ok(TeacherRun {
        record: DemoRecord {
            steps: op.steps,
            source_peg: peg,
            variant: None,
            style: style.clone(),
            events,
        },
        states: op.states,
        flags,
        live_phases,
    })
}

/// The slow, jitter-free demonstration from which the depth bands are extracted.
pub fn exemplary_demo(rig: &Rig, cfg: &TeacherConfig, peg: usize) -> Result<TeacherRun> {
    cfg.validate()?;
    let style = TeacherStyle {
        speed_scale: cfg.exemplary_speed_scale,
        ..TeacherStyle::default()
    };
    let run = run_script(rig, cfg, peg, &style, true, None)?;
    let f = run.flags;
    if !(f.take && f.pass && f.insert) {
        return Err(FlsError::InvalidConfig(format!(
            "exemplary script does not complete the task: {f:?}"
        )));
    }
    Ok(run)
}

/// One collection demonstration per style; source pegs cycle in equal blocks.
///
/// With a constraint set the depth commands pass through the feedback filter
/// and the live phase index advances with the collection threshold. Failed
/// attempts are regenerated with a derived seed.
pub fn collect_demos(
    rig: &Rig,
    cfg: &TeacherConfig,
    transitions: &TransitionConfig,
    constraints: Option<&ConstraintSet>,
    styles: &[TeacherStyle],
) -> Result<Vec<TeacherRun>> {
    cfg.validate()?;
    transitions.validate()?;
    let count = styles.len();
    let mut out = Vec::with_capacity(count);
    for (k, style) in styles.iter().enumerate() {
        let peg = if count >= 3 { k * 3 / count } else { k % 3 };
        out.push(collect_one(rig, cfg, transitions, constraints, style, peg)?);
    }
    Ok(out)
}

pub fn collect_one(
    rig: &Rig,
    cfg: &TeacherConfig,
    transitions: &TransitionConfig,
    constraints: Option<&ConstraintSet>,
    style: &TeacherStyle,
    peg: usize,
) -> Result<TeacherRun> {
    let variant = if constraints.is_some() {
        Variant::Constrained
    } else {
        Variant::Normal
    };
    let mut last_err = String::new();
    for attempt in 0..cfg.max_attempts {
        let mut s = style.clone();
        s.seed = style.seed.wrapping_add(attempt as u64 * 0x9e37_79b9);
        let feedback = constraints.map(|set| Feedback {
            set,
            detector: PhaseDetector::new(transitions.velocity_threshold, transitions.n_thre_collection),
            compliance: cfg.compliance,
        });
        let expected = constraints.map(|c| c.phase_count());
        match run_script(rig, cfg, peg, &s, false, feedback) {
            Ok(mut run) => {
                let f = run.flags;
                let phases_ok = match (run.live_phases, expected) {
                    (Some(got), Some(want)) => got == want,
                    _ => true,
                };
                if f.take && f.pass && f.insert && phases_ok {
                    run.record.variant = Some(variant);
                    return Ok(run);
                }
                last_err = format!("flags {f:?}, live phases {:?}", run.live_phases);
            }
            Err(e) => last_err = e.to_string(),
        }
        log::warn!(
            "{} demo on peg {peg} (seed {}) rejected: {last_err}; regenerating",
            variant.name(),
            s.seed
        );
    }
    Err(FlsError::Diverged(format!(
        "no valid {} demo on peg {peg} after {} attempts: {last_err}",
        variant.name(),
        cfg.max_attempts
    )))
}
