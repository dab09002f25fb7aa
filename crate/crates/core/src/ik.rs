//! Port-constrained inverse kinematics.
//!
//! The forceps tip is driven to its reference while the virtual joint tip is
//! held on the port. Both 3-vector residuals are stacked into one 6-row system
//! over the `n + 1` unknowns and solved with damped least squares.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{FlsError, Result};
use crate::kinematics::{ChainModel, JointState};

/// Iterations over which a tenfold residual growth counts as divergence.
const DIVERGENCE_WINDOW: usize = 20;
const DIVERGENCE_FACTOR: f64 = 10.0;
const LIMIT_EPS: f64 = 1e-9;
const LAMBDA_MIN: f64 = 1e-9;
const LAMBDA_UP: f64 = 10.0;
const LAMBDA_DOWN: f64 = 0.3;
const LAMBDA_MAX: f64 = 1e12;

/// `Jᵀ (J Jᵀ + λI)⁻¹ e` with the `locked` columns of `J` zeroed.
fn damped_step(j: &DMatrix<f64>, e: &DVector<f64>, locked: &[bool], damping: f64) -> Option<DVector<f64>> {
    let mut j = j.clone();
    for (c, l) in locked.iter().enumerate() {
        if *l {
            j.column_mut(c).fill(0.0);
        }
    }
    let mut jjt = &j * j.transpose();
    for d in 0..jjt.nrows() {
        jjt[(d, d)] += damping;
    }
    let y = match jjt.clone().cholesky() {
        Some(ch) => ch.solve(e),
        None => jjt.lu().solve(e)?,
    };
    Some(j.transpose() * y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// Solver settings shared by every solve in a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IkSettings {
    pub tol_tip: f64,
    pub tol_port: f64,
    pub max_iters: usize,
    pub damping: f64,
    pub tip_weight: f64,
    pub port_weight: f64,
    /// Largest revolute update per iteration, radians.
    pub max_joint_step: f64,
    /// Largest virtual-joint update per iteration, millimeters.
    pub max_virtual_step: f64,
    pub workspace: Option<Aabb>,
}

impl Default for IkSettings {
    fn default() -> Self {
        Self {
            tol_tip: 1e-3,
            tol_port: 1e-3,
            max_iters: 200,
            damping: 1e-3,
            tip_weight: 1.0,
            port_weight: 1.0,
            max_joint_step: 0.25,
            max_virtual_step: 60.0,
            workspace: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkProblem {
    pub target_tip: Vector3<f64>,
    pub port: Vector3<f64>,
    pub seed: JointState,
    pub settings: IkSettings,
}

impl IkProblem {
    pub fn new(target_tip: Vector3<f64>, port: Vector3<f64>, seed: JointState) -> Self {
        Self {
            target_tip,
            port,
            seed,
            settings: IkSettings::default(),
        }
    }

    pub fn with_settings(mut self, settings: IkSettings) -> Self {
        self.settings = settings;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkSolution {
    pub q: JointState,
    pub residual_tip: f64,
    pub residual_port: f64,
    pub iterations: usize,
    pub converged: bool,
    pub diverged: bool,
}

fn validate(chain: &ChainModel, p: &IkProblem) -> Result<()> {
    if !p.target_tip.iter().all(|v| v.is_finite()) {
        return Err(FlsError::NonFinite("ik target"));
    }
    if !p.port.iter().all(|v| v.is_finite()) {
        return Err(FlsError::NonFinite("ik port"));
    }
    if !p.seed.is_finite() {
        return Err(FlsError::NonFinite("ik seed"));
    }
    let s = &p.settings;
    if !(s.tol_tip > 0.0 && s.tol_port > 0.0) || s.max_iters < 1 || !(s.damping >= 0.0) {
        return Err(FlsError::InvalidConfig("ik tolerances, iterations or damping".into()));
    }
    if let Some(ws) = &s.workspace {
        if !ws.contains(&p.target_tip) {
            return Err(FlsError::OutsideWorkspace);
        }
    }
    chain.check_limits(&p.seed)
}

pub fn solve_ik(chain: &ChainModel, problem: &IkProblem) -> Result<IkSolution> {
    validate(chain, problem)?;
    let s = &problem.settings;
    let n = chain.dof();
    let mut q = problem.seed.clone();
    let mut best: Option<(f64, IkSolution)> = None;
    let mut history: Vec<f64> = Vec::with_capacity(s.max_iters + 1);
    // Levenberg-Marquardt style: damping grows on rejected steps and decays
    // back towards the configured floor on accepted ones.
    let mut lambda = s.damping.max(LAMBDA_MIN);
    let weighted = |e_tip: &Vector3<f64>, e_port: &Vector3<f64>| {
        (s.tip_weight * e_tip).norm_squared() + (s.port_weight * e_port).norm_squared()
    };

    for iter in 0..=s.max_iters {
        let fk = chain.fk_unchecked(&q);
        let e_tip = problem.target_tip - fk.forcep_tip;
        let e_port = problem.port - fk.virtual_tip;
        let (rt, rp) = (e_tip.norm(), e_port.norm());
        let score = (rt / s.tol_tip).max(rp / s.tol_port);
        let converged = rt <= s.tol_tip && rp <= s.tol_port;
        if best.as_ref().map_or(true, |(b, _)| score < *b) {
            best = Some((
                score,
                IkSolution {
                    q: q.clone(),
                    residual_tip: rt,
                    residual_port: rp,
                    iterations: iter,
                    converged,
                    diverged: false,
                },
            ));
        }
        if converged || iter == s.max_iters || !score.is_finite() {
            break;
        }
        let combined = (rt * rt + rp * rp).sqrt();
        history.push(combined);
        if history.len() > DIVERGENCE_WINDOW {
            let past = history[history.len() - 1 - DIVERGENCE_WINDOW];
            if combined > DIVERGENCE_FACTOR * past {
                let mut sol = best.map(|(_, b)| b).expect("best iterate recorded");
                sol.diverged = true;
                sol.converged = false;
                sol.iterations = iter;
                return Ok(sol);
            }
        }

        let jac = chain.jacobians_unchecked(&q);
        let mut j = DMatrix::<f64>::zeros(6, n + 1);
        let mut e = DVector::<f64>::zeros(6);
        for r in 0..3 {
            for c in 0..=n {
                j[(r, c)] = s.tip_weight * jac.forcep[(r, c)];
                j[(r + 3, c)] = s.port_weight * jac.virtual_tip[(r, c)];
            }
            e[r] = s.tip_weight * e_tip[r];
            e[r + 3] = s.port_weight * e_port[r];
        }
        // Coordinates pinned at a limit and pushed outward are dropped from
        // the step and the rest re-solved.
        let mut locked = vec![false; n + 1];
        let dq = loop {
            let Some(dq) = damped_step(&j, &e, &locked, lambda) else {
                break None;
            };
            let mut changed = false;
            for c in 0..=n {
                let (v, lo, hi) = if c < n {
                    let jt = &chain.joints()[c];
                    (q.theta[c], jt.lo, jt.hi)
                } else {
                    (q.theta_virtual, 0.0, chain.forcep_length())
                };
                if !locked[c] && ((v <= lo + LIMIT_EPS && dq[c] < 0.0) || (v >= hi - LIMIT_EPS && dq[c] > 0.0)) {
                    locked[c] = true;
                    changed = true;
                }
            }
            if !changed || locked.iter().all(|l| *l) {
                break Some(dq);
            }
        };
        let Some(mut dq) = dq else { break };

        let max_rev = dq.rows(0, n).amax();
        let mut scale = 1.0_f64;
        if max_rev > s.max_joint_step {
            scale = scale.min(s.max_joint_step / max_rev);
        }
        if dq[n].abs() > s.max_virtual_step {
            scale = scale.min(s.max_virtual_step / dq[n].abs());
        }
        dq *= scale;
        let mut cand = q.clone();
        for i in 0..n {
            cand.theta[i] += dq[i];
        }
        cand.theta_virtual += dq[n];
        chain.clamp(&mut cand);
        let f = chain.fk_unchecked(&cand);
        let now = weighted(&e_tip, &e_port);
        let next = weighted(&(problem.target_tip - f.forcep_tip), &(problem.port - f.virtual_tip));
        if next < now {
            q = cand;
            lambda = (lambda * LAMBDA_DOWN).max(s.damping.max(LAMBDA_MIN));
        } else {
            lambda *= LAMBDA_UP;
            if lambda > LAMBDA_MAX {
                break;
            }
        }
    }

    Ok(best.map(|(_, b)| b).expect("at least one iterate"))
}

/// Streams solutions along `targets`, seeding each solve with the previous answer.
pub fn track_trajectory(
    chain: &ChainModel,
    targets: &[Vector3<f64>],
    port: Vector3<f64>,
    seed: JointState,
    settings: IkSettings,
) -> Result<Vec<IkSolution>> {
    if targets.is_empty() {
        return Err(FlsError::InvalidInput("empty target list".into()));
    }
    let mut out = Vec::with_capacity(targets.len());
    let mut q = seed;
    for t in targets {
        let problem = IkProblem {
            target_tip: *t,
            port,
            seed: q,
            settings,
        };
        let sol = solve_ik(chain, &problem)?;
        if !sol.converged {
            log::debug!(
                "ik step {} not converged (tip {:.3e} port {:.3e})",
                out.len(),
                sol.residual_tip,
                sol.residual_port
            );
        }
        q = sol.q.clone();
        out.push(sol);
    }
    Ok(out)
}
