//! Phase segmentation of a demonstration, per-phase depth bands, and the
//! restoring force that keeps a depth command inside its band.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{FlsError, Result};
use crate::scene::Arm;
use crate::trajectory::TrajectoryStep;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TransitionConfig {
    /// Tip speed below which an arm counts as settled, mm per step.
    pub velocity_threshold: f64,
    /// Settled steps required to close a phase when extracting constraints.
    pub n_thre_constraint_gen: usize,
    /// Settled steps required to close a phase while collecting data.
    pub n_thre_collection: usize,
}

impl Default for TransitionConfig {
    fn default() -> Self {
        Self {
            velocity_threshold: 1.0,
            n_thre_constraint_gen: 20,
            n_thre_collection: 10,
        }
    }
}

impl TransitionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.velocity_threshold > 0.0)
            || self.n_thre_constraint_gen == 0
            || self.n_thre_collection == 0
            || self.n_thre_collection > self.n_thre_constraint_gen
        {
            return Err(FlsError::InvalidConfig(format!("transition config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum BoundaryCause {
    Converged,
    GripperChange(Arm),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PhaseTrace {
    /// Sample indices at which a phase ends and the next begins.
    pub boundaries: Vec<usize>,
    pub causes: Vec<BoundaryCause>,
    /// Settled-step counter after each sample.
    pub n_stop: Vec<usize>,
}

impl PhaseTrace {
    pub fn phase_count(&self) -> usize {
        self.boundaries.len() + 1
    }

    /// Start and end sample of every phase; adjacent phases share their boundary sample.
    pub fn spans(&self, len: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.phase_count());
        let mut start = 0;
        for &b in &self.boundaries {
            out.push((start, b));
            start = b;
        }
        out.push((start, len.saturating_sub(1)));
        out
    }
}

/// Online form of the transition condition, advanced one sample at a time.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseDetector {
    threshold: f64,
    n_thre: usize,
    prev: Option<([Vector3<f64>; 2], [u8; 2])>,
    n_stop: usize,
    phase: usize,
}

impl PhaseDetector {
    pub fn new(threshold: f64, n_thre: usize) -> Self {
        Self {
            threshold,
            n_thre,
            prev: None,
            n_stop: 0,
            phase: 1,
        }
    }

    /// 1-based index of the phase the next sample belongs to.
    pub fn phase(&self) -> usize {
        self.phase
    }

    pub fn n_stop(&self) -> usize {
        self.n_stop
    }

    /// Feeds one commanded sample; returns the boundary it closes, if any.
    pub fn push(&mut self, x_ref: [Vector3<f64>; 2], h: [u8; 2]) -> Option<BoundaryCause> {
        let (speeds, grip_change) = match &self.prev {
            None => ([0.0, 0.0], None),
            Some((px, ph)) => {
                let v = [(x_ref[0] - px[0]).norm(), (x_ref[1] - px[1]).norm()];
                let change = Arm::BOTH.into_iter().find(|a| ph[a.index()] != h[a.index()]);
                (v, change)
            }
        };
        self.prev = Some((x_ref, h));

        let cause = if let Some(arm) = grip_change {
            Some(BoundaryCause::GripperChange(arm))
        } else if speeds.iter().all(|v| *v < self.threshold) {
            self.n_stop += 1;
            (self.n_stop >= self.n_thre).then_some(BoundaryCause::Converged)
        } else {
            self.n_stop = 0;
            None
        };
        if cause.is_some() {
            self.n_stop = 0;
            self.phase += 1;
        }
        cause
    }
}

pub fn detect_phases(demo: &[TrajectoryStep], threshold: f64, n_thre: usize) -> Result<PhaseTrace> {
    if demo.len() < 2 {
        return Err(FlsError::InvalidInput(format!(
            "phase detection needs at least 2 samples, got {}",
            demo.len()
        )));
    }
    let mut det = PhaseDetector::new(threshold, n_thre);
    let mut trace = PhaseTrace::default();
    for (i, s) in demo.iter().enumerate() {
        if let Some(c) = det.push([s.x_ref(Arm::Left), s.x_ref(Arm::Right)], s.h) {
            trace.boundaries.push(i);
            trace.causes.push(c);
        }
        trace.n_stop.push(det.n_stop());
    }
    Ok(trace)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseConstraint {
    /// 1-based phase index.
    pub phase: usize,
    pub arm: Arm,
    pub z_lo: f64,
    pub z_hi: f64,
}

impl PhaseConstraint {
    pub fn contains(&self, z: f64) -> bool {
        z >= self.z_lo && z <= self.z_hi
    }

    /// Distance outside the band, zero inside.
    pub fn violation(&self, z: f64) -> f64 {
        (self.z_lo - z).max(z - self.z_hi).max(0.0)
    }
}

/// Depth bands from the first and last sample of every phase; samples in
/// between do not widen the band.
pub fn extract_constraints(demo: &[TrajectoryStep], trace: &PhaseTrace) -> Result<Vec<PhaseConstraint>> {
    if demo.is_empty() {
        return Err(FlsError::InvalidInput("empty demonstration".into()));
    }
    if trace.boundaries.windows(2).any(|w| w[0] >= w[1])
        || trace.boundaries.last().is_some_and(|b| *b >= demo.len())
    {
        return Err(FlsError::InvalidInput("phase trace does not fit demonstration".into()));
    }
    let mut out = Vec::new();
    for (i, (start, end)) in trace.spans(demo.len()).into_iter().enumerate() {
        for arm in Arm::BOTH {
            let (a, b) = (demo[start].z_ref(arm), demo[end].z_ref(arm));
            out.push(PhaseConstraint {
                phase: i + 1,
                arm,
                z_lo: a.min(b),
                z_hi: a.max(b),
            });
        }
    }
    Ok(out)
}

/// Set of bands indexed by phase and arm.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConstraintSet {
    pub constraints: Vec<PhaseConstraint>,
}

impl ConstraintSet {
    pub fn new(constraints: Vec<PhaseConstraint>) -> Self {
        Self { constraints }
    }

    pub fn phase_count(&self) -> usize {
        self.constraints.iter().map(|c| c.phase).max().unwrap_or(0)
    }

    /// Band for `arm` in `phase`; phases past the last one reuse the last band.
    pub fn active(&self, phase: usize, arm: Arm) -> Option<&PhaseConstraint> {
        let phase = phase.min(self.phase_count());
        self.constraints
            .iter()
            .find(|c| c.phase == phase && c.arm == arm)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::from("# phase arm z_lo_mm z_hi_mm\n");
        for c in &self.constraints {
            let _ = writeln!(s, "{} {} {} {}", c.phase, c.arm.name(), c.z_lo, c.z_hi);
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut constraints = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let bad = || FlsError::Parse(format!("constraints line {}: '{line}'", n + 1));
            if f.len() != 4 {
                return Err(bad());
            }
            let c = PhaseConstraint {
                phase: f[0].parse().map_err(|_| bad())?,
                arm: f[1].parse()?,
                z_lo: f[2].parse().map_err(|_| bad())?,
                z_hi: f[3].parse().map_err(|_| bad())?,
            };
            if c.phase == 0 || !(c.z_lo <= c.z_hi) {
                return Err(bad());
            }
            constraints.push(c);
        }
        Ok(Self { constraints })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Proportional restoring force along z: zero on the closed band, pushing
/// up below it and down above it.
pub fn feedback_force(z_ref: f64, c: &PhaseConstraint, kp: f64) -> f64 {
    if z_ref < c.z_lo {
        kp * (c.z_lo - z_ref)
    } else if z_ref > c.z_hi {
        kp * (c.z_hi - z_ref)
    } else {
        0.0
    }
}

/// Operator response to the feedback force: `compliance` 1 lands exactly on
/// the band edge, 0 ignores the force.
pub fn filter_sample(z_ref: f64, c: &PhaseConstraint, compliance: f64) -> f64 {
    // Written from the edge so full compliance lands on it exactly.
    let edge = if z_ref < c.z_lo {
        c.z_lo
    } else if z_ref > c.z_hi {
        c.z_hi
    } else {
        return z_ref;
    };
    edge - (1.0 - compliance) * (edge - z_ref)
}

pub fn constrained_filter(z_refs: &[f64], c: &PhaseConstraint, compliance: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&compliance) {
        return Err(FlsError::InvalidInput(format!("compliance {compliance} outside [0, 1]")));
    }
    Ok(z_refs.iter().map(|z| filter_sample(*z, c, compliance)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::Attachment;

    fn step(t: usize, zl: f64, zr: f64, xr: f64, h: [u8; 2]) -> TrajectoryStep {
        TrajectoryStep {
            t,
            x_ref: [[70.0, 60.0, zl], [xr, -20.0, zr]],
            h,
            tips: [[0.0; 3]; 2],
            object: [0.0; 3],
            attachment: Attachment::OnPeg(0),
            frame: None,
        }
    }

    fn band(lo: f64, hi: f64) -> PhaseConstraint {
        PhaseConstraint {
            phase: 1,
            arm: Arm::Right,
            z_lo: lo,
            z_hi: hi,
        }
    }

    #[test]
    fn constant_velocity_never_converges() {
        let demo: Vec<_> = (0..100).map(|t| step(t, 70.0, 70.0, 2.0 * t as f64, [0, 0])).collect();
        let trace = detect_phases(&demo, 1.0, 20).unwrap();
        // Sample 0 has no predecessor and counts as settled once.
        assert!(trace.boundaries.is_empty());
    }

    #[test]
    fn stationary_for_exactly_threshold_steps() {
        let n = 20;
        let demo: Vec<_> = (0..n + 5)
            .map(|t| step(t, 70.0, 70.0, if t < 1 { 0.0 } else { 10.0 }, [0, 0]))
            .collect();
        // Sample 0 is settled (first sample), sample 1 jumps, then samples
        // 2..=21 are settled: the 20th settled step is sample 21.
        let trace = detect_phases(&demo, 1.0, n).unwrap();
        assert_eq!(trace.boundaries, vec![n + 1]);
        assert_eq!(trace.causes, vec![BoundaryCause::Converged]);
        assert_eq!(trace.n_stop[n], n - 1);
        assert_eq!(trace.n_stop[n + 1], 0);
    }

    #[test]
    fn gripper_change_closes_phase_and_resets_counter() {
        let mut demo: Vec<_> = (0..10).map(|t| step(t, 70.0, 70.0, 0.0, [0, 0])).collect();
        demo[5].h = [0, 1];
        for s in &mut demo[6..] {
            s.h = [0, 1];
        }
        let trace = detect_phases(&demo, 1.0, 20).unwrap();
        assert_eq!(trace.boundaries, vec![5]);
        assert_eq!(trace.causes, vec![BoundaryCause::GripperChange(Arm::Right)]);
        assert_eq!(trace.n_stop[5], 0);
        assert_eq!(trace.n_stop[6], 1);
    }

    #[test]
    fn too_short_demo_is_rejected() {
        assert!(detect_phases(&[step(0, 0.0, 0.0, 0.0, [0, 0])], 1.0, 20).is_err());
    }

    #[test]
    fn band_uses_only_phase_endpoints() {
        // Descend 40 -> 20 with a dip to 15 in the middle.
        let zs = [40.0, 30.0, 15.0, 18.0, 20.0];
        let demo: Vec<_> = zs.iter().enumerate().map(|(t, z)| step(t, 70.0, *z, 0.0, [0, 0])).collect();
        let trace = PhaseTrace::default();
        let c = extract_constraints(&demo, &trace).unwrap();
        let right = c.iter().find(|c| c.arm == Arm::Right).unwrap();
        assert_eq!((right.z_lo, right.z_hi), (20.0, 40.0));
    }

    #[test]
    fn three_phase_profile() {
        let (z0, z1, z2) = (10.0, 30.0, 60.0);
        let zs = [z2, 45.0, z1, 20.0, z0, 40.0, z2];
        let demo: Vec<_> = zs.iter().enumerate().map(|(t, z)| step(t, 70.0, *z, 0.0, [0, 0])).collect();
        let trace = PhaseTrace {
            boundaries: vec![2, 4],
            causes: vec![BoundaryCause::Converged; 2],
            n_stop: vec![0; zs.len()],
        };
        let c = extract_constraints(&demo, &trace).unwrap();
        let right: Vec<_> = c.iter().filter(|c| c.arm == Arm::Right).map(|c| (c.z_lo, c.z_hi)).collect();
        assert_eq!(right, vec![(z1, z2), (z0, z1), (z0, z2)]);
        let left: Vec<_> = c.iter().filter(|c| c.arm == Arm::Left).map(|c| (c.z_lo, c.z_hi)).collect();
        assert_eq!(left, vec![(70.0, 70.0); 3]);
    }

    #[test]
    fn force_law_examples() {
        let c = band(20.0, 40.0);
        assert_eq!(feedback_force(20.0, &c, 0.5), 0.0);
        assert_eq!(feedback_force(40.0, &c, 0.5), 0.0);
        assert_eq!(feedback_force(18.0, &c, 0.5), 1.0);
        assert_eq!(feedback_force(43.0, &c, 0.5), -1.5);
    }

    #[test]
    fn filter_examples() {
        let c = band(20.0, 40.0);
        assert_eq!(constrained_filter(&[10.0], &c, 1.0).unwrap(), vec![20.0]);
        assert_eq!(constrained_filter(&[10.0, 50.0], &c, 0.0).unwrap(), vec![10.0, 50.0]);
        assert_eq!(constrained_filter(&[16.0], &c, 0.5).unwrap(), vec![18.0]);
        assert!(constrained_filter(&[16.0], &c, 1.5).is_err());
    }

    #[test]
    fn constraint_file_round_trip() {
        let set = ConstraintSet::new(vec![
            PhaseConstraint { phase: 1, arm: Arm::Left, z_lo: 70.0, z_hi: 70.0 },
            PhaseConstraint { phase: 1, arm: Arm::Right, z_lo: 45.0, z_hi: 70.123456789 },
        ]);
        let back = ConstraintSet::parse(&set.to_text()).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.active(5, Arm::Right).unwrap().z_hi, 70.123456789);
        assert!(ConstraintSet::parse("1 left 5").is_err());
        assert!(ConstraintSet::parse("1 up 5 6").is_err());
    }
}
