//! Serial-chain forward kinematics for a forceps-carrying arm.
//!
//! A chain is a list of revolute joints. Each joint has a rotation axis and
//! an origin offset expressed in the frame of the previous link; at the all-zero
//! configuration every link frame is aligned with the world frame. The hand
//! frame is the frame of the last joint. The forceps extend from the hand along
//! `tool_axis`, and a virtual prismatic joint slides a point along the same
//! axis so that the port constraint becomes an ordinary position target.

use std::path::Path;

use nalgebra::{Matrix3, Matrix3xX, Rotation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{FlsError, Result};

const UNIT_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct RevoluteJoint {
    pub axis: Vector3<f64>,
    pub origin: Vector3<f64>,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainModel {
    joints: Vec<RevoluteJoint>,
    forcep_length: f64,
    tool_axis: Vector3<f64>,
}

/// Joint angles (radians) plus the virtual prismatic extension (millimeters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub theta: Vec<f64>,
    pub theta_virtual: f64,
}

impl JointState {
    pub fn new(theta: Vec<f64>, theta_virtual: f64) -> Self {
        Self {
            theta,
            theta_virtual,
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::new(vec![0.0; n], 0.0)
    }

    /// Number of unknowns including the virtual joint.
    pub fn len(&self) -> usize {
        self.theta.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_finite(&self) -> bool {
        self.theta_virtual.is_finite() && self.theta.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose3 {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FkResult {
    pub hand: Pose3,
    pub forcep_tip: Vector3<f64>,
    pub virtual_tip: Vector3<f64>,
}

/// Joint-space Jacobians over `n + 1` unknowns; the last column is the virtual joint.
#[derive(Debug, Clone, PartialEq)]
pub struct Jacobians {
    pub forcep: Matrix3xX<f64>,
    pub virtual_tip: Matrix3xX<f64>,
}

/// World-frame quantities gathered while walking the chain.
struct ChainWalk {
    joint_positions: Vec<Vector3<f64>>,
    joint_axes: Vec<Vector3<f64>>,
    hand_position: Vector3<f64>,
    hand_rotation: Matrix3<f64>,
}

impl ChainModel {
    pub fn new(
        joints: Vec<RevoluteJoint>,
        forcep_length: f64,
        tool_axis: Vector3<f64>,
    ) -> Result<Self> {
        if joints.is_empty() {
            return Err(FlsError::InvalidConfig("chain has no joints".into()));
        }
        for (i, j) in joints.iter().enumerate() {
            if (j.axis.norm() - 1.0).abs() > UNIT_TOL {
                return Err(FlsError::InvalidConfig(format!(
                    "joint {i} axis is not unit length"
                )));
            }
            if !(j.lo < j.hi) || !j.origin.iter().all(|v| v.is_finite()) {
                return Err(FlsError::InvalidConfig(format!(
                    "joint {i} has invalid limits or origin"
                )));
            }
        }
        if !(forcep_length > 0.0) || !forcep_length.is_finite() {
            return Err(FlsError::InvalidConfig("forcep length must be positive".into()));
        }
        if (tool_axis.norm() - 1.0).abs() > UNIT_TOL {
            return Err(FlsError::InvalidConfig("tool axis is not unit length".into()));
        }
        Ok(Self {
            joints,
            forcep_length,
            tool_axis,
        })
    }

    pub fn from_config(cfg: &ChainConfig) -> Result<Self> {
        let n = cfg.axes.len();
        if cfg.origins.len() != n || cfg.limits.len() != n {
            return Err(FlsError::InvalidConfig(format!(
                "chain config lists {} axes, {} origins, {} limits",
                n,
                cfg.origins.len(),
                cfg.limits.len()
            )));
        }
        let joints = (0..n)
            .map(|i| RevoluteJoint {
                axis: Vector3::from(cfg.axes[i]),
                origin: Vector3::from(cfg.origins[i]),
                lo: cfg.limits[i][0],
                hi: cfg.limits[i][1],
            })
            .collect();
        Self::new(joints, cfg.forcep_length_mm, Vector3::from(cfg.tool_axis))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: ChainConfig = toml::from_str(&text)
            .map_err(|e| FlsError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_config(&cfg)
    }

    pub fn to_config(&self) -> ChainConfig {
        ChainConfig {
            axes: self.joints.iter().map(|j| j.axis.into()).collect(),
            origins: self.joints.iter().map(|j| j.origin.into()).collect(),
            limits: self.joints.iter().map(|j| [j.lo, j.hi]).collect(),
            forcep_length_mm: self.forcep_length,
            tool_axis: self.tool_axis.into(),
        }
    }

    /// Synthetic 7R arm with roughly 850 mm reach. The link layout follows the
    /// familiar shoulder/elbow/wrist pattern of collaborative arms; the numbers
    /// are not taken from any real robot datasheet.
    pub fn synthetic_7r() -> Self {
        let pi = std::f64::consts::PI;
        let j = |axis: [f64; 3], origin: [f64; 3], lo: f64, hi: f64| RevoluteJoint {
            axis: Vector3::from(axis),
            origin: Vector3::from(origin),
            lo,
            hi,
        };
        let joints = vec![
            j([0.0, 0.0, 1.0], [0.0, 0.0, 333.0], -2.9, 2.9),
            j([0.0, 1.0, 0.0], [0.0, 0.0, 0.0], -1.76, 1.76),
            j([0.0, 0.0, 1.0], [0.0, 0.0, 316.0], -2.9, 2.9),
            j([0.0, -1.0, 0.0], [82.5, 0.0, 0.0], -3.07, -0.07),
            j([0.0, 0.0, 1.0], [-82.5, 0.0, 384.0], -2.9, 2.9),
            j([0.0, -1.0, 0.0], [0.0, 0.0, 0.0], -0.02, 3.75),
            j([0.0, 0.0, -1.0], [88.0, 0.0, 0.0], -pi, pi),
        ];
        Self::new(joints, 300.0, Vector3::new(0.0, 0.0, -1.0))
            .expect("synthetic chain is well formed")
    }

    /// Returns the same chain rigidly rotated about world z by `yaw` and
    /// moved so that its base sits at `base`.
    pub fn placed(&self, yaw: f64, base: Vector3<f64>) -> Self {
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        let mut joints: Vec<RevoluteJoint> = self
            .joints
            .iter()
            .map(|j| RevoluteJoint {
                axis: rot * j.axis,
                origin: rot * j.origin,
                lo: j.lo,
                hi: j.hi,
            })
            .collect();
        joints[0].origin += base;
        Self {
            joints,
            forcep_length: self.forcep_length,
            tool_axis: rot * self.tool_axis,
        }
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[RevoluteJoint] {
        &self.joints
    }

    pub fn forcep_length(&self) -> f64 {
        self.forcep_length
    }

    pub fn tool_axis(&self) -> Vector3<f64> {
        self.tool_axis
    }

    pub fn check_limits(&self, q: &JointState) -> Result<()> {
        if q.theta.len() != self.joints.len() {
            return Err(FlsError::Dimension {
                what: "joint state",
                expected: self.joints.len(),
                got: q.theta.len(),
            });
        }
        for (i, (t, j)) in q.theta.iter().zip(&self.joints).enumerate() {
            if !t.is_finite() || *t < j.lo || *t > j.hi {
                return Err(FlsError::JointLimit { joint: i, value: *t });
            }
        }
        let tv = q.theta_virtual;
        if !tv.is_finite() || tv < 0.0 || tv > self.forcep_length {
            return Err(FlsError::JointLimit {
                joint: self.joints.len(),
                value: tv,
            });
        }
        Ok(())
    }

    /// Clamps every coordinate into its limits in place.
    pub fn clamp(&self, q: &mut JointState) {
        for (t, j) in q.theta.iter_mut().zip(&self.joints) {
            *t = t.clamp(j.lo, j.hi);
        }
        q.theta_virtual = q.theta_virtual.clamp(0.0, self.forcep_length);
    }

    /// Midpoint of every joint range, virtual joint at half the forceps length.
    pub fn mid_configuration(&self) -> JointState {
        JointState::new(
            self.joints.iter().map(|j| 0.5 * (j.lo + j.hi)).collect(),
            0.5 * self.forcep_length,
        )
    }

    fn walk(&self, theta: &[f64]) -> ChainWalk {
        let mut p = Vector3::zeros();
        let mut r = Matrix3::identity();
        let mut joint_positions = Vec::with_capacity(self.joints.len());
        let mut joint_axes = Vec::with_capacity(self.joints.len());
        for (j, &angle) in self.joints.iter().zip(theta) {
            p += r * j.origin;
            let w = r * j.axis;
            joint_positions.push(p);
            joint_axes.push(w);
            let local = Rotation3::from_axis_angle(&Unit::new_unchecked(j.axis), angle);
            r *= local.matrix();
        }
        ChainWalk {
            joint_positions,
            joint_axes,
            hand_position: p,
            hand_rotation: r,
        }
    }

    /// Forward kinematics without limit checks. Callers that accept untrusted
    /// joint states should use [`forward_kinematics`].
    pub fn fk_unchecked(&self, q: &JointState) -> FkResult {
        let w = self.walk(&q.theta);
        let axis = w.hand_rotation * self.tool_axis;
        FkResult {
            hand: Pose3 {
                position: w.hand_position,
                orientation: UnitQuaternion::from_matrix(&w.hand_rotation),
            },
            forcep_tip: w.hand_position + self.forcep_length * axis,
            virtual_tip: w.hand_position + q.theta_virtual * axis,
        }
    }

    pub fn jacobians_unchecked(&self, q: &JointState) -> Jacobians {
        let w = self.walk(&q.theta);
        let n = self.joints.len();
        let axis = w.hand_rotation * self.tool_axis;
        let tip = w.hand_position + self.forcep_length * axis;
        let virt = w.hand_position + q.theta_virtual * axis;
        let mut jf = Matrix3xX::zeros(n + 1);
        let mut jv = Matrix3xX::zeros(n + 1);
        for i in 0..n {
            let wi = w.joint_axes[i];
            let oi = w.joint_positions[i];
            jf.set_column(i, &wi.cross(&(tip - oi)));
            jv.set_column(i, &wi.cross(&(virt - oi)));
        }
        jv.set_column(n, &axis);
        Jacobians {
            forcep: jf,
            virtual_tip: jv,
        }
    }
}

pub fn forward_kinematics(chain: &ChainModel, q: &JointState) -> Result<FkResult> {
    chain.check_limits(q)?;
    Ok(chain.fk_unchecked(q))
}

pub fn jacobians(chain: &ChainModel, q: &JointState) -> Result<Jacobians> {
    chain.check_limits(q)?;
    Ok(chain.jacobians_unchecked(q))
}

/// On-disk chain description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub axes: Vec<[f64; 3]>,
    pub origins: Vec<[f64; 3]>,
    pub limits: Vec<[f64; 2]>,
    pub forcep_length_mm: f64,
    pub tool_axis: [f64; 3],
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn identity_chain() -> ChainModel {
        ChainModel::new(
            vec![RevoluteJoint {
                axis: Vector3::z(),
                origin: Vector3::zeros(),
                lo: -1.0,
                hi: 1.0,
            }],
            100.0,
            Vector3::z(),
        )
        .unwrap()
    }

    fn planar_3r() -> ChainModel {
        let j = |x: f64| RevoluteJoint {
            axis: Vector3::z(),
            origin: Vector3::new(x, 0.0, 0.0),
            lo: -3.0,
            hi: 3.0,
        };
        ChainModel::new(vec![j(0.0), j(100.0), j(80.0)], 60.0, Vector3::x()).unwrap()
    }

    fn random_state(chain: &ChainModel, rng: &mut ChaCha8Rng) -> JointState {
        JointState::new(
            chain
                .joints()
                .iter()
                .map(|j| rng.gen_range(j.lo + 0.05..j.hi - 0.05))
                .collect(),
            rng.gen_range(0.0..chain.forcep_length()),
        )
    }

    #[test]
    fn identity_configuration_tips() {
        let c = identity_chain();
        let r = forward_kinematics(&c, &JointState::new(vec![0.0], 0.0)).unwrap();
        assert_eq!(r.forcep_tip, Vector3::new(0.0, 0.0, 100.0));
        assert_eq!(r.virtual_tip, Vector3::zeros());
        let r = forward_kinematics(&c, &JointState::new(vec![0.0], 40.0)).unwrap();
        assert_eq!(r.virtual_tip, Vector3::new(0.0, 0.0, 40.0));
    }

    #[test]
    fn planar_chain_matches_hand_composed_rotations() {
        let c = planar_3r();
        let q = JointState::new(vec![FRAC_PI_2, 0.0, 0.0], 0.0);
        let r = forward_kinematics(&c, &q).unwrap();
        // Rz(pi/2) applied to the straight chain: every link now points along +y.
        let rz = |a: f64| {
            Matrix3::new(a.cos(), -a.sin(), 0.0, a.sin(), a.cos(), 0.0, 0.0, 0.0, 1.0)
        };
        let r1 = rz(FRAC_PI_2);
        let r2 = r1 * rz(0.0);
        let r3 = r2 * rz(0.0);
        let expected = r1 * Vector3::new(100.0, 0.0, 0.0)
            + r2 * Vector3::new(80.0, 0.0, 0.0)
            + r3 * Vector3::new(60.0, 0.0, 0.0);
        assert_relative_eq!(r.forcep_tip, expected, epsilon = 1e-12);
        assert_relative_eq!(r.forcep_tip, Vector3::new(0.0, 240.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn limit_violation_names_joint() {
        let c = planar_3r();
        let q = JointState::new(vec![0.0, 3.5, 0.0], 0.0);
        match forward_kinematics(&c, &q) {
            Err(FlsError::JointLimit { joint, .. }) => assert_eq!(joint, 1),
            other => panic!("unexpected {other:?}"),
        }
        let q = JointState::new(vec![0.0, 0.0, 0.0], 61.0);
        match forward_kinematics(&c, &q) {
            Err(FlsError::JointLimit { joint, .. }) => assert_eq!(joint, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn virtual_column_structure() {
        let c = identity_chain();
        let j = jacobians(&c, &JointState::new(vec![0.0], 10.0)).unwrap();
        assert_eq!(j.forcep.column(1).into_owned(), Vector3::zeros());
        assert_eq!(j.virtual_tip.column(1).into_owned(), Vector3::new(0.0, 0.0, 1.0));
    }

    #[test]
    fn tip_minus_virtual_is_along_tool_axis() {
        let c = ChainModel::synthetic_7r();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let q = random_state(&c, &mut rng);
            let r = forward_kinematics(&c, &q).unwrap();
            let axis = r.hand.orientation * c.tool_axis();
            let d = r.forcep_tip - r.virtual_tip;
            assert!((d.norm() - (c.forcep_length() - q.theta_virtual)).abs() < 1e-9);
            assert!(d.cross(&axis).norm() < 1e-9);
            assert!((r.hand.orientation.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn placed_chain_is_rigid_transform() {
        let c = ChainModel::synthetic_7r();
        let yaw = 0.7;
        let base = Vector3::new(10.0, -400.0, 5.0);
        let p = c.placed(yaw, base);
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), yaw);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let q = random_state(&c, &mut rng);
            let a = c.fk_unchecked(&q);
            let b = p.fk_unchecked(&q);
            assert_relative_eq!(b.forcep_tip, rot * a.forcep_tip + base, epsilon = 1e-9);
            assert_relative_eq!(b.virtual_tip, rot * a.virtual_tip + base, epsilon = 1e-9);
        }
    }

    #[test]
    fn config_round_trip() {
        let c = ChainModel::synthetic_7r();
        let text = toml::to_string(&c.to_config()).unwrap();
        let back: ChainConfig = toml::from_str(&text).unwrap();
        assert_eq!(ChainModel::from_config(&back).unwrap(), c);
    }

    #[test]
    fn rejects_malformed_chain() {
        let bad = RevoluteJoint {
            axis: Vector3::new(0.0, 0.0, 2.0),
            origin: Vector3::zeros(),
            lo: -1.0,
            hi: 1.0,
        };
        assert!(ChainModel::new(vec![bad], 10.0, Vector3::z()).is_err());
        let inverted = RevoluteJoint {
            axis: Vector3::z(),
            origin: Vector3::zeros(),
            lo: 1.0,
            hi: -1.0,
        };
        assert!(ChainModel::new(vec![inverted], 10.0, Vector3::z()).is_err());
        assert!(ChainModel::new(vec![], 10.0, Vector3::z()).is_err());
    }

    #[test]
    fn fk_is_bit_identical() {
        let c = ChainModel::synthetic_7r();
        let q = c.mid_configuration();
        assert_eq!(c.fk_unchecked(&q), c.fk_unchecked(&q));
    }
}
