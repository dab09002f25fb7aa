#![allow(dead_code)]

use fls_core::kinematics::{ChainModel, JointState};
use fls_core::nn::Param;
use fls_core::scene::Arm;
use fls_core::trajectory::TrajectoryStep;
use rand::Rng;

/// Uniform configuration strictly inside the limits, virtual joint in `[v_lo, v_hi]`.
pub fn random_configuration<R: Rng>(chain: &ChainModel, rng: &mut R, margin: f64, v: (f64, f64)) -> JointState {
    let theta = chain
        .joints()
        .iter()
        .map(|j| rng.gen_range(j.lo + margin..j.hi - margin))
        .collect();
    JointState::new(theta, rng.gen_range(v.0..v.1))
}

/// Seed near `q`: every angle moved by up to `spread` radians, the virtual joint by up to `spread * 50` mm.
pub fn perturbed<R: Rng>(chain: &ChainModel, q: &JointState, rng: &mut R, spread: f64) -> JointState {
    let mut s = q.clone();
    for t in s.theta.iter_mut() {
        *t += rng.gen_range(-spread..spread);
    }
    s.theta_virtual += rng.gen_range(-spread..spread) * 50.0;
    chain.clamp(&mut s);
    s
}

/// `|a - b| / max(|a|, |b|)` over whole vectors; zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale < 1e-300 {
        0.0
    } else {
        diff / scale
    }
}

/// Central-difference Jacobians of the forceps tip and the virtual tip, row-major.
pub fn fd_jacobian(chain: &ChainModel, q: &JointState, h: f64) -> (Vec<f64>, Vec<f64>) {
    let n = chain.dof();
    let mut jf = vec![0.0; 3 * (n + 1)];
    let mut jv = vec![0.0; 3 * (n + 1)];
    for c in 0..=n {
        let mut plus = q.clone();
        let mut minus = q.clone();
        // Virtual joint in mm, angles in rad: scale the step to match.
        let step = if c == n { h * 100.0 } else { h };
        if c == n {
            plus.theta_virtual += step;
            minus.theta_virtual -= step;
        } else {
            plus.theta[c] += step;
            minus.theta[c] -= step;
        }
        let (a, b) = (chain.fk_unchecked(&plus), chain.fk_unchecked(&minus));
        for r in 0..3 {
            jf[r * (n + 1) + c] = (a.forcep_tip[r] - b.forcep_tip[r]) / (2.0 * step);
            jv[r * (n + 1) + c] = (a.virtual_tip[r] - b.virtual_tip[r]) / (2.0 * step);
        }
    }
    (jf, jv)
}

/// Phase label per sample, recomputed from scratch: a phase closes on any
/// gripper change, or once both commanded tips have moved less than
/// `threshold` per step for `n_thre` consecutive samples.
pub fn brute_force_labels(demo: &[TrajectoryStep], threshold: f64, n_thre: usize) -> Vec<usize> {
    let mut labels = Vec::with_capacity(demo.len());
    let mut phase = 1;
    let mut still = 0;
    for i in 0..demo.len() {
        labels.push(phase);
        let (moving, gripped) = if i == 0 {
            (false, false)
        } else {
            let a = &demo[i - 1];
            let b = &demo[i];
            let moving = (0..2).any(|k| {
                let d: f64 = (0..3).map(|c| (b.x_ref[k][c] - a.x_ref[k][c]).powi(2)).sum::<f64>().sqrt();
                d >= threshold
            });
            (moving, a.h != b.h)
        };
        if gripped {
            still = 0;
            phase += 1;
        } else if moving {
            still = 0;
        } else {
            still += 1;
            if still >= n_thre {
                still = 0;
                phase += 1;
            }
        }
    }
    labels
}

/// Bands from min/max over the boundary samples of each phase. The closing
/// sample of a phase also opens the next one.
pub fn brute_force_bands(demo: &[TrajectoryStep], labels: &[usize]) -> Vec<(usize, Arm, f64, f64)> {
    let phases = *labels.iter().max().unwrap();
    let last_of = |k: usize| labels.iter().rposition(|l| *l == k).unwrap();
    let mut out = Vec::new();
    for k in 1..=phases {
        let first = if k == 1 { 0 } else { last_of(k - 1) };
        let last = last_of(k);
        for arm in [Arm::Left, Arm::Right] {
            let ends = [demo[first].x_ref[arm.index()][2], demo[last].x_ref[arm.index()][2]];
            out.push((k, arm, ends[0].min(ends[1]), ends[0].max(ends[1])));
        }
    }
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central differences on every element of every trainable tensor, compared
/// per tensor. Returns the tensor with the largest relative error.
pub fn check_gradients<M>(model: &mut M, loss: impl Fn(&mut M) -> f64, params: impl Fn(&mut M) -> Vec<&mut Param>, h: f64) -> (String, f64) {
    let analytic: Vec<(String, bool, Vec<f64>)> =
        params(model).into_iter().map(|p| (p.name.clone(), p.trainable, p.grad.clone())).collect();
    let mut worst = (String::new(), 0.0);
    for (i, (name, trainable, g)) in analytic.iter().enumerate() {
        if !trainable {
            continue;
        }
        let mut fd = vec![0.0; g.len()];
        for j in 0..g.len() {
            let orig = params(model)[i].value[j];
            params(model)[i].value[j] = orig + h;
            let lp = loss(model);
            params(model)[i].value[j] = orig - h;
            let lm = loss(model);
            params(model)[i].value[j] = orig;
            fd[j] = (lp - lm) / (2.0 * h);
        }
        let diff: Vec<f64> = g.iter().zip(&fd).map(|(a, b)| a - b).collect();
        let scale = norm(g).max(norm(&fd));
        // A tensor whose true gradient vanishes (a bias feeding batch
        // normalization) is compared in absolute terms.
        let rel = if scale < 1e-8 { norm(&diff) } else { norm(&diff) / scale };
        if rel > worst.1 {
            worst = (name.clone(), rel);
        }
    }
    worst
}
