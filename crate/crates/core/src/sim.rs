//! Two forceps arms driven through port-constrained IK inside the peg-board scene.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlsError, Result};
use crate::ik::{solve_ik, IkProblem, IkSettings, IkSolution};
use crate::kinematics::{ChainModel, JointState};
use crate::scene::{Arm, Gripper, Scene, SceneGeometry, SceneState};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RigConfig {
    /// Arm base positions, (left, right).
    pub bases: [[f64; 3]; 2],
    /// Rotation of each arm about world z, radians.
    pub yaws: [f64; 2],
    /// Tip positions at the start of every run.
    pub home_tips: [[f64; 3]; 2],
    /// Restarts used to find a home configuration.
    pub home_search_starts: usize,
}

impl Default for RigConfig {
    fn default() -> Self {
        let half_pi = std::f64::consts::FRAC_PI_2;
        Self {
            bases: [[70.0, 600.0, 0.0], [70.0, -600.0, 0.0]],
            yaws: [-half_pi, half_pi],
            home_tips: [[70.0, 60.0, 70.0], [70.0, -20.0, 70.0]],
            home_search_starts: 96,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rig {
    pub scene: Scene,
    pub chains: [ChainModel; 2],
    pub home_tips: [Vector3<f64>; 2],
    pub home_q: [JointState; 2],
    pub ik: IkSettings,
}

impl Rig {
    pub fn new(chain: &ChainModel, cfg: &RigConfig, geometry: SceneGeometry, ik: IkSettings) -> Result<Self> {
        let chains = [
            chain.placed(cfg.yaws[0], Vector3::from(cfg.bases[0])),
            chain.placed(cfg.yaws[1], Vector3::from(cfg.bases[1])),
        ];
        let home_tips = [Vector3::from(cfg.home_tips[0]), Vector3::from(cfg.home_tips[1])];
        let mut home_q = Vec::with_capacity(2);
        for arm in Arm::BOTH {
            let i = arm.index();
            home_q.push(find_home(
                &chains[i],
                home_tips[i],
                geometry.port(arm),
                ik,
                cfg.home_search_starts,
                i as u64,
            )?);
        }
        let home_q: [JointState; 2] = home_q.try_into().expect("two arms");
        Ok(Self {
            scene: Scene::new(geometry),
            chains,
            home_tips,
            home_q,
            ik,
        })
    }

    pub fn default_rig() -> Result<Self> {
        Self::new(
            &ChainModel::synthetic_7r(),
            &RigConfig::default(),
            SceneGeometry::default(),
            IkSettings::default(),
        )
    }

    pub fn geometry(&self) -> &SceneGeometry {
        &self.scene.geometry
    }

    /// New run with the object on `peg` and tips displaced from home by `offsets`.
    pub fn start(&self, peg: usize, offsets: [Vector3<f64>; 2]) -> Result<Simulation<'_>> {
        if peg > 2 {
            return Err(FlsError::InvalidInput(format!("source peg {peg} out of range")));
        }
        let mut q = self.home_q.clone();
        let mut tips = self.home_tips;
        for arm in Arm::BOTH {
            let i = arm.index();
            let target = self.home_tips[i] + offsets[i];
            let sol = self.solve(arm, target, &q[i])?;
            if !sol.converged {
                return Err(FlsError::InvalidInput(format!("{} start pose unreachable", arm.name())));
            }
            tips[i] = self.chains[i].fk_unchecked(&sol.q).forcep_tip;
            q[i] = sol.q;
        }
        Ok(Simulation {
            rig: self,
            state: self.scene.initial_state(peg, tips),
            q,
        })
    }

    fn solve(&self, arm: Arm, target: Vector3<f64>, seed: &JointState) -> Result<IkSolution> {
        let i = arm.index();
        let problem = IkProblem {
            target_tip: target,
            port: self.geometry().port(arm),
            seed: seed.clone(),
            settings: self.ik,
        };
        solve_ik(&self.chains[i], &problem)
    }
}

fn find_home(
    chain: &ChainModel,
    tip: Vector3<f64>,
    port: Vector3<f64>,
    ik: IkSettings,
    starts: usize,
    salt: u64,
) -> Result<JointState> {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + salt);
    let mut best: Option<(f64, JointState)> = None;
    for _ in 0..starts.max(1) {
        let seed = JointState::new(
            chain.joints().iter().map(|j| rng.gen_range(j.lo..j.hi)).collect(),
            rng.gen_range(0.0..chain.forcep_length()),
        );
        let sol = solve_ik(chain, &IkProblem::new(tip, port, seed).with_settings(ik))?;
        if !sol.converged {
            continue;
        }
        let margin = sol
            .q
            .theta
            .iter()
            .zip(chain.joints())
            .map(|(t, j)| (t - j.lo).min(j.hi - t))
            .fold(f64::INFINITY, f64::min);
        if best.as_ref().map_or(true, |(m, _)| margin > *m) {
            best = Some((margin, sol.q));
        }
    }
    best.map(|(_, q)| q)
        .ok_or_else(|| FlsError::InvalidConfig("no home configuration reaches the port".into()))
}

#[derive(Debug, Clone)]
pub struct StepReport {
    pub ik: [IkSolution; 2],
}

impl StepReport {
    pub fn converged(&self) -> bool {
        self.ik.iter().all(|s| s.converged)
    }
}

/// A running episode: scene state plus the joint states of both arms.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    rig: &'a Rig,
    pub state: SceneState,
    pub q: [JointState; 2],
}

impl<'a> Simulation<'a> {
    pub fn rig(&self) -> &'a Rig {
        self.rig
    }

    /// Drives both tips toward `x_ref` through IK and advances the scene.
    pub fn apply(&mut self, x_ref: [Vector3<f64>; 2], grippers: [Gripper; 2]) -> Result<StepReport> {
        let left = self.rig.solve(Arm::Left, x_ref[0], &self.q[0])?;
        let right = self.rig.solve(Arm::Right, x_ref[1], &self.q[1])?;
        let tips = [
            self.rig.chains[0].fk_unchecked(&left.q).forcep_tip,
            self.rig.chains[1].fk_unchecked(&right.q).forcep_tip,
        ];
        self.q = [left.q.clone(), right.q.clone()];
        self.state = self.rig.scene.step(&self.state, tips, grippers);
        Ok(StepReport { ik: [left, right] })
    }

    pub fn virtual_tips(&self) -> [Vector3<f64>; 2] {
        [
            self.rig.chains[0].fk_unchecked(&self.q[0]).virtual_tip,
            self.rig.chains[1].fk_unchecked(&self.q[1]).virtual_tip,
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn home_pose_passes_through_ports() {
        let rig = Rig::default_rig().unwrap();
        let sim = rig.start(1, [Vector3::zeros(); 2]).unwrap();
        for arm in Arm::BOTH {
            let i = arm.index();
            assert!((sim.state.tip(arm) - rig.home_tips[i]).norm() < 1e-3);
            assert!((sim.virtual_tips()[i] - rig.geometry().port(arm)).norm() < 1e-3);
        }
    }

    #[test]
    fn apply_tracks_targets() {
        let rig = Rig::default_rig().unwrap();
        let mut sim = rig.start(0, [Vector3::zeros(); 2]).unwrap();
        let target = [rig.home_tips[0] + Vector3::new(0.0, -10.0, -5.0), rig.geometry().seat(0)];
        for _ in 0..3 {
            let rep = sim.apply(target, [Gripper::Open; 2]).unwrap();
            assert!(rep.converged());
        }
        assert!((sim.state.tip(Arm::Right) - rig.geometry().seat(0)).norm() < 1e-3);
    }
}
