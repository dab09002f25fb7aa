//! Image encoder plus recurrent predictor, checkpoints, and closed-loop execution.

use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::autoencoder::{frame_input, Autoencoder, AutoencoderSpec};
use crate::checkpoint::{load_into, read_checkpoint, write_checkpoint};
use crate::error::{FlsError, Result};
use crate::nn::Param;
use crate::rnnpb::{Normalizer, RnnpbModel, RnnpbSpec, RnnpbState};
use crate::scene::{success_flags, Arm, Attachment, Gripper, SceneState, SuccessFlags};
use crate::sim::Rig;
use crate::trajectory::{DemoRecord, TrajectoryStep};

pub const CONTROL_DIM: usize = 8;

/// Bookkeeping stored alongside the weights.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub profile: String,
    pub ae_epochs: usize,
    pub ae_seed: u64,
    pub ae_final_holdout: f64,
    pub rnn_epochs: usize,
    pub rnn_seed: u64,
    pub rnn_lr: f64,
    pub noise_scale: f64,
    pub rnn_initial_loss: f64,
    pub rnn_final_loss: f64,
    pub demos: usize,
}

pub fn save_autoencoder(path: &Path, ae: &Autoencoder) -> Result<()> {
    let meta = serde_json::json!({ "kind": "autoencoder", "ae": ae.spec });
    write_checkpoint(path, &meta, &ae.params())
}

pub fn load_autoencoder(path: &Path) -> Result<Autoencoder> {
    let (meta, tensors) = read_checkpoint(path)?;
    let spec: AutoencoderSpec = serde_json::from_value(meta["ae"].clone())
        .map_err(|e| FlsError::Parse(format!("{}: {e}", path.display())))?;
    let mut ae = Autoencoder::new(spec, 0)?;
    load_into(ae.params_mut(), &tensors)?;
    Ok(ae)
}

/// Encoder, predictor and per-demonstration biases.
#[derive(Debug)]
pub struct PolicyModel {
    pub ae: Autoencoder,
    pub rnn: RnnpbModel,
    pub meta: TrainingMeta,
}

#[derive(Serialize, Deserialize)]
struct PolicyHeader {
    kind: String,
    ae: AutoencoderSpec,
    rnn: RnnpbSpec,
    norm: Normalizer,
    demos: usize,
    meta: TrainingMeta,
}

impl PolicyModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = PolicyHeader {
            kind: "policy".into(),
            ae: self.ae.spec.clone(),
            rnn: self.rnn.spec().clone(),
            norm: self.rnn.norm.clone(),
            demos: self.rnn.pb.shape[0],
            meta: self.meta.clone(),
        };
        let meta = serde_json::to_value(&header).map_err(|e| FlsError::Parse(e.to_string()))?;
        let mut tensors: Vec<&Param> = self.ae.params();
        tensors.extend(self.rnn.params());
        write_checkpoint(path, &meta, &tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (meta, tensors) = read_checkpoint(path)?;
        let h: PolicyHeader = serde_json::from_value(meta)
            .map_err(|e| FlsError::Parse(format!("{}: {e}", path.display())))?;
        if h.kind != "policy" {
            return Err(FlsError::Parse(format!("{}: not a policy checkpoint", path.display())));
        }
        let mut ae = Autoencoder::new(h.ae, 0)?;
        load_into(ae.params_mut(), &tensors)?;
        let mut rnn = RnnpbModel::new(h.rnn, h.norm, h.demos, 0)?;
        load_into(rnn.params_mut(), &tensors)?;
        Ok(Self { ae, rnn, meta: h.meta })
    }

    pub fn encode_state(&mut self, rig: &Rig, state: &SceneState) -> Vec<f64> {
        let img = frame_input(&rig.scene.render(state));
        self.ae.encode(&[&img]).data
    }
}

/// (s; u) sequences for every demonstration, frames re-rendered from the logged state.
pub fn encode_demos(ae: &mut Autoencoder, rig: &Rig, demos: &[DemoRecord]) -> Vec<Vec<Vec<f64>>> {
    demos
        .iter()
        .map(|d| {
            let imgs: Vec<Vec<f64>> = d
                .steps
                .iter()
                .map(|s| frame_input(&rig.scene.render(&s.scene_state(rig.geometry()))))
                .collect();
            let mut out = Vec::with_capacity(imgs.len());
            for (chunk, steps) in imgs.chunks(64).zip(d.steps.chunks(64)) {
                let refs: Vec<&[f64]> = chunk.iter().map(|v| v.as_slice()).collect();
                let z = ae.encode(&refs);
                for (k, s) in steps.iter().enumerate() {
                    let mut v = z.row(k).to_vec();
                    v.extend(s.control());
                    out.push(v);
                }
            }
            out
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExecConfig {
    pub max_steps: usize,
    pub grip_threshold: f64,
    pub hysteresis: f64,
}

impl Default for ExecConfig {
    fn default() -> Self {
        Self {
            max_steps: 400,
            grip_threshold: 0.5,
            hysteresis: 0.02,
        }
    }
}

/// Gripper command from a predicted opening value with a hysteresis band.
pub fn gripper_command(pred: f64, current: Gripper, threshold: f64, hysteresis: f64) -> Gripper {
    match current {
        Gripper::Open if pred > threshold + hysteresis => Gripper::Closed,
        Gripper::Closed if pred < threshold - hysteresis => Gripper::Open,
        g => g,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExecutionRun {
    pub peg: usize,
    pub steps: Vec<TrajectoryStep>,
    pub states: Vec<SceneState>,
    /// Concatenated LSTM hidden states after each prediction.
    pub latents: Vec<Vec<f64>>,
    pub flags: SuccessFlags,
    pub failure: Option<String>,
}

/// Runs the policy in closed loop from the object on `peg`, tips displaced by `offsets`.
///
/// Each tick renders the scene, encodes it, predicts the next command and
/// applies it through the port-constrained IK. Stops on insertion, on a
/// dropped object, on an IK failure, or after `max_steps`.
pub fn execute_policy(
    model: &mut PolicyModel,
    rig: &Rig,
    peg: usize,
    offsets: [Vector3<f64>; 2],
    p: &[f64],
    cfg: &ExecConfig,
) -> Result<ExecutionRun> {
    let mut sim = rig.start(peg, offsets)?;
    let mut state: RnnpbState = model.rnn.net.zero_state(1);
    let mut cmd = [sim.state.tip(Arm::Left), sim.state.tip(Arm::Right)];
    let mut grip = [Gripper::Open; 2];
    let mut steps = vec![TrajectoryStep::from_scene(0, cmd, [0, 0], &sim.state)];
    let mut states = vec![sim.state.clone()];
    let mut latents = Vec::new();
    let mut failure = None;
    for t in 1..=cfg.max_steps {
        let mut z = model.encode_state(rig, &sim.state);
        z.extend(steps.last().expect("non-empty").control());
        let (pred, next) = model.rnn.predict(&z, p, &state)?;
        state = next;
        latents.push(state.latent());
        let u = &pred[pred.len() - CONTROL_DIM..];
        let target = [Vector3::new(u[0], u[1], u[2]), Vector3::new(u[3], u[4], u[5])];
        if target.iter().any(|v| !v.iter().all(|x| x.is_finite())) {
            failure = Some(format!("non-finite command at step {t}"));
            break;
        }
        for arm in Arm::BOTH {
            let i = arm.index();
            grip[i] = gripper_command(u[6 + i], grip[i], cfg.grip_threshold, cfg.hysteresis);
        }
        let report = match sim.apply(target, grip) {
            Ok(r) => r,
            Err(e) => {
                failure = Some(format!("step {t}: {e}"));
                break;
            }
        };
        if !report.converged() {
            failure = Some(format!(
                "ik did not converge at step {t} (tip residuals {:.2e}, {:.2e})",
                report.ik[0].residual_tip, report.ik[1].residual_tip
            ));
            break;
        }
        cmd = target;
        let h = [grip[0].as_h(), grip[1].as_h()];
        steps.push(TrajectoryStep::from_scene(t, cmd, h, &sim.state));
        states.push(sim.state.clone());
        match sim.state.attachment {
            Attachment::Inserted => break,
            Attachment::Falling => {
                failure = Some(format!("object dropped at step {t}"));
                break;
            }
            _ => {}
        }
    }
    let flags = success_flags(&states);
    Ok(ExecutionRun {
        peg,
        steps,
        states,
        latents,
        flags,
        failure,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hysteresis_band() {
        let t = 0.5;
        let h = 0.02;
        assert_eq!(gripper_command(0.51, Gripper::Open, t, h), Gripper::Open);
        assert_eq!(gripper_command(0.53, Gripper::Open, t, h), Gripper::Closed);
        assert_eq!(gripper_command(0.49, Gripper::Closed, t, h), Gripper::Closed);
        assert_eq!(gripper_command(0.47, Gripper::Closed, t, h), Gripper::Open);
    }
}
