//! Recorded demonstrations and their line-delimited log format.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{FlsError, Result};
use crate::scene::{Arm, Attachment, Gripper, SceneGeometry, SceneState};

/// Samples are taken at 10 Hz.
pub const STEP_SECONDS: f64 = 0.1;

/// One sample of a demonstration or an execution run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: usize,
    /// Commanded forceps tip positions, (left, right).
    pub x_ref: [[f64; 3]; 2],
    /// Gripper commands, 1 = closed.
    pub h: [u8; 2],
    /// Tip positions reached by the arms.
    pub tips: [[f64; 3]; 2],
    pub object: [f64; 3],
    pub attachment: Attachment,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
}

impl TrajectoryStep {
    pub fn from_scene(t: usize, x_ref: [Vector3<f64>; 2], h: [u8; 2], state: &SceneState) -> Self {
        Self {
            t,
            x_ref: [x_ref[0].into(), x_ref[1].into()],
            h,
            tips: state.forcep_tips,
            object: state.object,
            attachment: state.attachment,
            frame: None,
        }
    }

    pub fn x_ref(&self, arm: Arm) -> Vector3<f64> {
        Vector3::from(self.x_ref[arm.index()])
    }

    pub fn z_ref(&self, arm: Arm) -> f64 {
        self.x_ref[arm.index()][2]
    }

    /// Control vector u = (x_ref left, x_ref right, h left, h right).
    pub fn control(&self) -> [f64; 8] {
        let [l, r] = self.x_ref;
        [
            l[0],
            l[1],
            l[2],
            r[0],
            r[1],
            r[2],
            self.h[0] as f64,
            self.h[1] as f64,
        ]
    }

    /// Enough of the world state to re-render the monocular view.
    pub fn scene_state(&self, geometry: &SceneGeometry) -> SceneState {
        let mut peg_positions = [[0.0; 3]; 4];
        for (p, xy) in peg_positions.iter_mut().zip(&geometry.pegs) {
            *p = [xy[0], xy[1], 0.0];
        }
        let grip = |h: u8| if h > 0 { Gripper::Closed } else { Gripper::Open };
        SceneState {
            peg_positions,
            object: self.object,
            attachment: self.attachment,
            co_holder: None,
            grasp_offsets: [[0.0; 3]; 2],
            forcep_tips: self.tips,
            grippers: [grip(self.h[0]), grip(self.h[1])],
            ports: geometry.ports,
            time: self.t as u64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Constrained,
    Normal,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Constrained => "constrained",
            Variant::Normal => "normal",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = FlsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constrained" => Ok(Variant::Constrained),
            "normal" => Ok(Variant::Normal),
            _ => Err(FlsError::Parse(format!("unknown variant '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GripEvent {
    Grasp,
    Release,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: usize,
    pub arm: Arm,
    pub event: GripEvent,
}

/// Gripper transitions found in a step sequence.
pub fn grip_events(steps: &[TrajectoryStep]) -> Vec<EventRecord> {
    let mut out = Vec::new();
    for w in steps.windows(2) {
        for arm in Arm::BOTH {
            let (a, b) = (w[0].h[arm.index()], w[1].h[arm.index()]);
            if a != b {
                out.push(EventRecord {
                    t: w[1].t,
                    arm,
                    event: if b > a {
                        GripEvent::Grasp
                    } else {
                        GripEvent::Release
                    },
                });
            }
        }
    }
    out
}

/// Header line of a demonstration log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoHeader {
    pub source_peg: usize,
    pub variant: Option<Variant>,
    pub style: crate::teacher::TeacherStyle,
    pub events: Vec<EventRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoRecord {
    pub steps: Vec<TrajectoryStep>,
    pub source_peg: usize,
    /// `None` for the exemplary demonstration.
    pub variant: Option<Variant>,
    pub style: crate::teacher::TeacherStyle,
    pub events: Vec<EventRecord>,
}

impl DemoRecord {
    pub fn z_series(&self, arm: Arm) -> Vec<f64> {
        self.steps.iter().map(|s| s.z_ref(arm)).collect()
    }

    /// Index of the first right-arm grasp command.
    pub fn first_right_grasp(&self) -> Option<usize> {
        self.events
            .iter()
            .find(|e| e.arm == Arm::Right && e.event == GripEvent::Grasp)
            .map(|e| e.t)
    }

    pub fn write_log(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let header = DemoHeader {
            source_peg: self.source_peg,
            variant: self.variant,
            style: self.style.clone(),
            events: self.events.clone(),
        };
        writeln!(w, "{}", to_json(&header)?)?;
        for s in &self.steps {
            writeln!(w, "{}", to_json(s)?)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_log(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| FlsError::Parse(format!("{}: empty log", path.display())))??;
        let header: DemoHeader = serde_json::from_str(&first)
            .map_err(|e| FlsError::Parse(format!("{} header: {e}", path.display())))?;
        let mut steps = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let s: TrajectoryStep = serde_json::from_str(&line)
                .map_err(|e| FlsError::Parse(format!("{} line {}: {e}", path.display(), i + 2)))?;
            steps.push(s);
        }
        Ok(Self {
            steps,
            source_peg: header.source_peg,
            variant: header.variant,
            style: header.style,
            events: header.events,
        })
    }
}

fn to_json<T: Serialize>(v: &T) -> Result<String> {
    serde_json::to_string(v).map_err(|e| FlsError::Parse(e.to_string()))
}
