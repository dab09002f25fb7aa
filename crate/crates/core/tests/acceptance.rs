//! End-to-end acceptance sheet: one PASS/FAIL line per criterion, non-zero
//! exit when any criterion fails.

mod common;

use std::time::Instant;

use fls_core::autoencoder::{frame_input, Autoencoder, AutoencoderSpec};
use fls_core::config::RunConfig;
use fls_core::evaluation::{sigma_ave, Pca};
use fls_core::ik::{solve_ik, track_trajectory, IkProblem, IkSettings};
use fls_core::kinematics::{jacobians, ChainModel};
use fls_core::noise::{difference_covariance, NoiseModel};
use fls_core::phase::{detect_phases, extract_constraints, feedback_force, PhaseConstraint};
use fls_core::pipeline::{
    build_rig, load_demos, read_manifest, run_pipeline, stage_collect, stage_extract, EvalSummary, RunLog, Workspace,
};
use fls_core::policy::{encode_demos, load_autoencoder, PolicyModel};
use fls_core::rnnpb::{Normalizer, RnnpbModel, RnnpbSpec};
use fls_core::scene::Arm;
use fls_core::sim::Rig;
use fls_core::teacher::exemplary_demo;
use fls_core::trajectory::Variant;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{
    brute_force_bands, brute_force_labels, check_gradients, fd_jacobian, perturbed, random_configuration, rel_err,
};

#[derive(Default)]
struct Sheet {
    failed: Vec<String>,
    count: usize,
}

impl Sheet {
    fn check(&mut self, name: &str, ok: bool, detail: String) {
        self.count += 1;
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(name.to_string());
        }
    }
}

fn ik_targets(sheet: &mut Sheet) {
    let chain = ChainModel::synthetic_7r();
    let fl = chain.forcep_length();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let t0 = Instant::now();
    let (mut converged, mut tip, mut port) = (0, 0.0_f64, 0.0_f64);
    for _ in 0..1000 {
        let q = random_configuration(&chain, &mut rng, 0.05, (0.2 * fl, 0.8 * fl));
        let fk = chain.fk_unchecked(&q);
        let seed = perturbed(&chain, &q, &mut rng, 0.2);
        let sol = solve_ik(&chain, &IkProblem::new(fk.forcep_tip, fk.virtual_tip, seed)).expect("ik runs");
        converged += sol.converged as usize;
        tip = tip.max(sol.residual_tip);
        port = port.max(sol.residual_port);
    }
    let secs = t0.elapsed().as_secs_f64();

    let mut q0 = chain.mid_configuration();
    q0.theta[3] = -1.5;
    q0.theta_virtual = 0.6 * fl;
    let fk = chain.fk_unchecked(&q0);
    let targets: Vec<Vector3<f64>> = (0..500)
        .map(|k| {
            let a = k as f64 / 500.0 * std::f64::consts::TAU;
            fk.forcep_tip + Vector3::new(20.0 * a.cos() - 20.0, 20.0 * a.sin(), 10.0 * (2.0 * a).sin())
        })
        .collect();
    let sols = track_trajectory(&chain, &targets, fk.virtual_tip, q0, IkSettings::default()).expect("sweep runs");
    let sweep_port = sols.iter().map(|s| s.residual_port).fold(0.0, f64::max);
    let sweep_ok = sols.iter().all(|s| s.converged);

    sheet.check(
        "ik_random_targets",
        converged == 1000 && tip < 1e-3 && port < 1e-3 && secs < 10.0,
        format!("{converged}/1000 converged, max tip {tip:.2e} mm, max port {port:.2e} mm, {secs:.2} s"),
    );
    sheet.check(
        "ik_port_sweep",
        sweep_ok && sweep_port < 1e-3,
        format!("500 steps, all converged {sweep_ok}, max port residual {sweep_port:.2e} mm"),
    );
}

fn jacobian_fd(sheet: &mut Sheet) {
    let chain = ChainModel::synthetic_7r();
    let n = chain.dof();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let q = random_configuration(&chain, &mut rng, 0.01, (0.0, chain.forcep_length()));
        let j = jacobians(&chain, &q).expect("jacobian");
        let (fd_f, fd_v) = fd_jacobian(&chain, &q, 1e-6);
        // Row-major, as the finite-difference oracle lays them out.
        let an_f: Vec<f64> = j.forcep.transpose().iter().copied().collect();
        let an_v: Vec<f64> = j.virtual_tip.transpose().iter().copied().collect();
        assert_eq!(an_f.len(), 3 * (n + 1));
        worst = worst.max(rel_err(&an_f, &fd_f)).max(rel_err(&an_v, &fd_v));
    }
    sheet.check("jacobian_vs_fd", worst < 1e-5, format!("100 configurations, max relative error {worst:.2e}"));
}

fn phases(sheet: &mut Sheet, cfg: &RunConfig, rig: &Rig) {
    let ex = exemplary_demo(rig, &cfg.teacher, cfg.exemplary_peg).expect("exemplary demo");
    let steps = &ex.record.steps;
    let thr = cfg.transitions.velocity_threshold;
    let n_thre = cfg.transitions.n_thre_constraint_gen;
    let trace = detect_phases(steps, thr, n_thre).expect("phases");
    let bands = extract_constraints(steps, &trace).expect("bands");
    let labels = brute_force_labels(steps, thr, n_thre);
    let oracle = brute_force_bands(steps, &labels);
    let exact = bands.len() == oracle.len()
        && bands
            .iter()
            .zip(&oracle)
            .all(|(b, (p, a, lo, hi))| b.phase == *p && b.arm == *a && b.z_lo == *lo && b.z_hi == *hi);
    sheet.check(
        "phases_exemplary",
        trace.phase_count() == 8 && n_thre == 20 && exact,
        format!("N_C = {} with nThre = {n_thre}, bands equal brute force: {exact}", trace.phase_count()),
    );
}

fn force_law(sheet: &mut Sheet) {
    let mut ok = true;
    let mut worst_jump: f64 = 0.0;
    let mut worst_slope: f64 = 0.0;
    for kp in [0.5, 0.1, 2.0] {
        let c = PhaseConstraint {
            phase: 1,
            arm: Arm::Left,
            z_lo: 25.0,
            z_hi: 45.0,
        };
        let n = 20_001;
        let zs: Vec<f64> = (0..n).map(|i| 70.0 * i as f64 / (n - 1) as f64).collect();
        let f: Vec<f64> = zs.iter().map(|z| feedback_force(*z, &c, kp)).collect();
        for (z, v) in zs.iter().zip(&f) {
            if (25.0..=45.0).contains(z) && *v != 0.0 {
                ok = false;
            }
        }
        for (w, g) in zs.windows(2).zip(f.windows(2)) {
            if w[1] < 25.0 || w[0] > 45.0 {
                let slope = (g[1] - g[0]) / (w[1] - w[0]);
                worst_slope = worst_slope.max((slope + kp).abs());
            }
        }
        for edge in [25.0_f64, 45.0] {
            let below = f64::from_bits(edge.to_bits() - 1);
            let above = f64::from_bits(edge.to_bits() + 1);
            let here = feedback_force(edge, &c, kp);
            worst_jump = worst_jump
                .max((feedback_force(below, &c, kp) - here).abs())
                .max((feedback_force(above, &c, kp) - here).abs());
        }
        ok &= feedback_force(10.0, &c, kp) > 0.0 && feedback_force(60.0, &c, kp) < 0.0;
    }
    sheet.check(
        "force_law",
        ok && worst_slope < 1e-9 && worst_jump < 1e-12,
        format!("zero in band {ok}, slope error {worst_slope:.1e}, max edge jump {worst_jump:.1e}"),
    );
}

fn gradients(sheet: &mut Sheet) {
    let t0 = Instant::now();
    let spec = RnnpbSpec::reduced(2);
    let d = spec.io_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut model = RnnpbModel::new(spec, Normalizer::identity(d), 2, 4).expect("model");
    for v in &mut model.pb.value {
        *v = rng.gen_range(-0.5..0.5);
    }
    let seq = |rng: &mut ChaCha8Rng, n: usize| -> Vec<Vec<f64>> { (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect() };
    let inputs = vec![seq(&mut rng, 5), seq(&mut rng, 3)];
    let targets = vec![seq(&mut rng, 5), seq(&mut rng, 3)];
    model.zero_grad();
    model.sequence_loss(&inputs, &targets, true);
    let (rn, rw) = check_gradients(&mut model, |m| m.sequence_loss(&inputs, &targets, false), |m| m.params_mut(), 1e-6);

    let spec = AutoencoderSpec {
        input: [3, 8, 8],
        channels: vec![2, 3],
        hidden: 6,
        latent: 3,
    };
    let mut ae = Autoencoder::new(spec, 6).expect("ae");
    let images: Vec<Vec<f64>> = (0..3).map(|_| (0..ae.input_len()).map(|_| rng.gen_range(0.0..1.0)).collect()).collect();
    let refs: Vec<&[f64]> = images.iter().map(|v| v.as_slice()).collect();
    ae.zero_grad();
    ae.loss(&refs, true);
    let (an, aw) = check_gradients(&mut ae, |m| m.loss(&refs, true), |m| m.params_mut(), 1e-6);
    let secs = t0.elapsed().as_secs_f64();
    sheet.check(
        "gradient_checks",
        rw < 1e-4 && aw < 1e-4 && secs < 120.0,
        format!("rnnpb worst {rw:.2e} ({rn}), autoencoder worst {aw:.2e} ({an}), {secs:.2} s"),
    );
}

fn noise(sheet: &mut Sheet) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dim = 20;
    let mix = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
    let seqs: Vec<Vec<Vec<f64>>> = (0..4)
        .map(|_| {
            let mut x = DVector::zeros(dim);
            (0..300)
                .map(|_| {
                    x += &mix * DVector::from_fn(dim, |_, _| rng.gen_range(-1.0..1.0));
                    x.iter().copied().collect()
                })
                .collect()
        })
        .collect();
    let sigma = difference_covariance(&seqs).expect("sigma");
    let model = NoiseModel::new(&sigma, 0.3).expect("noise");
    let mut emp = DMatrix::zeros(dim, dim);
    let count = 100_000;
    for _ in 0..count {
        let v = model.sample(&mut rng);
        emp += &v * v.transpose();
    }
    emp /= count as f64;
    let expected = sigma * 0.09;
    let rel = (&emp - &expected).norm() / expected.norm();
    sheet.check("noise_covariance", rel < 0.05, format!("1e5 samples, relative Frobenius error {rel:.4}"));
}

fn variance_timing(sheet: &mut Sheet, cfg: &RunConfig, rig: &Rig) {
    let dir = tempfile::tempdir().expect("tempdir");
    let ws = Workspace::new(dir.path());
    let t0 = Instant::now();
    stage_extract(cfg, rig, &ws).expect("extract");
    stage_collect(cfg, rig, &ws).expect("collect");
    let mut sig = Vec::new();
    for v in [Variant::Constrained, Variant::Normal] {
        let demos = load_demos(&ws, v, cfg.demos_per_variant).expect("demos");
        for arm in Arm::BOTH {
            sig.push(sigma_ave(&demos, arm).expect("sigma").value);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let ok = sig[0] < sig[2] && sig[1] < sig[3];
    sheet.check(
        "variance_constrained_below_normal",
        ok && secs < 300.0,
        format!(
            "left {:.3} < {:.3}, right {:.3} < {:.3}; {} demos collected and scored in {secs:.1} s",
            sig[0],
            sig[2],
            sig[1],
            sig[3],
            2 * cfg.demos_per_variant
        ),
    );
}

fn learned(sheet: &mut Sheet, cfg: &RunConfig, rig: &Rig, ws: &Workspace, summary: &EvalSummary, seconds: f64) {
    let c = summary.totals_for(Variant::Constrained).expect("constrained totals");
    let n = summary.totals_for(Variant::Normal).expect("normal totals");
    let take_rate = c[1] as f64 / c[0] as f64;
    let stagewise = (1..4).all(|i| c[i] >= n[i]);
    sheet.check(
        "closed_loop",
        take_rate >= 0.8 && stagewise && seconds < 1800.0,
        format!(
            "constrained take/pass/insert {}/{}/{} of {}, normal {}/{}/{}; pipeline {:.0} s",
            c[1], c[2], c[3], c[0], n[1], n[2], n[3], seconds
        ),
    );
    sheet.check("closed_loop_take_14_of_15", c[1] >= 14, format!("constrained take {}/{}", c[1], c[0]));

    let sig = |v, a| summary.sigma(v, a).expect("sigma");
    let left = (sig(Variant::Constrained, Arm::Left), sig(Variant::Normal, Arm::Left));
    let right = (sig(Variant::Constrained, Arm::Right), sig(Variant::Normal, Arm::Right));
    sheet.check(
        "pipeline_variance",
        left.0 < left.1 && right.0 < right.1,
        format!("left {:.3} vs {:.3}, right {:.3} vs {:.3}", left.0, left.1, right.0, right.1),
    );

    let (take, insert) = summary
        .pca
        .as_ref()
        .map(|p| (p.take_separation, p.insert_separation))
        .unwrap_or((None, None));
    let sep_ok = matches!((take, insert), (Some(t), Some(i)) if t > i);
    let mut latents = Vec::new();
    for peg in 0..cfg.eval.pegs {
        for trial in 0..cfg.eval.trials {
            latents.extend(RunLog::read(&ws.run(Variant::Constrained, peg, trial)).expect("run log").latents);
        }
    }
    let dim = latents[0].len();
    let pca = Pca::fit(&latents, dim).expect("pca");
    let recon = latents
        .iter()
        .map(|x| pca.reconstruct(&pca.project(x)).iter().zip(x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
        .fold(0.0, f64::max);
    sheet.check(
        "pca_segments",
        sep_ok && recon < 1e-8,
        format!("take separation {} > insert separation {}; full reconstruction error {recon:.1e}", fmt_opt(take), fmt_opt(insert)),
    );

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(ws.root.join("ae_report.json")).expect("ae report")).expect("parse");
    let initial = report["initial_holdout_loss"].as_f64().expect("initial holdout loss");
    let last = report["holdout_loss"].as_array().and_then(|a| a.last()).and_then(|v| v.as_f64()).expect("holdout losses");
    let ratio = initial / last;
    sheet.check(
        "autoencoder_holdout_drop",
        ratio >= 5.0,
        format!("holdout {initial:.5} -> {last:.5} ({ratio:.1}x)"),
    );

    let mut ae = load_autoencoder(&ws.ae()).expect("ae");
    let mut state = rig.scene.initial_state(1, rig.home_tips);
    state.object[2] += 10.0;
    let a = frame_input(&rig.scene.render(&state));
    state.object[2] -= 20.0;
    let b = frame_input(&rig.scene.render(&state));
    let z = ae.encode(&[&a, &b]);
    let dist = z.row(0).iter().zip(z.row(1)).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    sheet.check(
        "autoencoder_depth_pair",
        dist > 1e-3 && z.row(0).len() == 12,
        format!("latent distance {dist:.4}, latent dimension {}", z.row(0).len()),
    );

    let mut ok = true;
    let mut detail = Vec::new();
    for v in [Variant::Constrained, Variant::Normal] {
        let m = PolicyModel::load(&ws.model(v)).expect("policy");
        let r = m.meta.rnn_final_loss / m.meta.rnn_initial_loss;
        ok &= r < 0.1;
        detail.push(format!("{} {:.4} -> {:.5} ({:.1}%)", v.name(), m.meta.rnn_initial_loss, m.meta.rnn_final_loss, 100.0 * r));
    }
    sheet.check("rnnpb_loss_below_10_percent", ok, detail.join(", "));

    let mut m = PolicyModel::load(&ws.model(Variant::Constrained)).expect("policy");
    let demos = load_demos(ws, Variant::Constrained, 1).expect("demo");
    let seq = encode_demos(&mut m.ae, rig, &demos);
    let st = m.rnn.net.zero_state(1);
    let (y0, _) = m.rnn.predict(&seq[0][10], &vec![0.0; cfg.n_p], &st).expect("predict");
    let (y1, _) = m.rnn.predict(&seq[0][10], &vec![1.0; cfg.n_p], &st).expect("predict");
    let delta = y0.iter().zip(&y1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    sheet.check("pb_changes_prediction", delta > 1e-6, format!("max output change {delta:.3e}"));
}

fn main() {
    let mut sheet = Sheet::default();
    let cfg = RunConfig::default();
    let rig = build_rig(&cfg).expect("rig");

    ik_targets(&mut sheet);
    jacobian_fd(&mut sheet);
    phases(&mut sheet, &cfg, &rig);
    force_law(&mut sheet);
    gradients(&mut sheet);
    noise(&mut sheet);
    variance_timing(&mut sheet, &cfg, &rig);

    let dir = tempfile::tempdir().expect("tempdir");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    eprintln!("running the desk pipeline (first of two runs)");
    let first = run_pipeline(&cfg, &a, false).expect("pipeline");
    let summary = first.summary.clone().expect("summary");
    learned(&mut sheet, &cfg, &rig, &Workspace::new(&a), &summary, first.seconds);

    eprintln!("running the desk pipeline (second run, determinism)");
    run_pipeline(&cfg, &b, false).expect("pipeline");
    let ma = read_manifest(&Workspace::new(&a).manifest()).expect("manifest");
    let mb = read_manifest(&Workspace::new(&b).manifest()).expect("manifest");
    let differing: Vec<&str> = ma.iter().zip(&mb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    sheet.check(
        "pipeline_determinism",
        ma.len() == mb.len() && differing.is_empty(),
        format!("{} hashed files, {} differ {:?}", ma.len(), differing.len(), differing),
    );

    let passed = sheet.count - sheet.failed.len();
    println!("acceptance: {passed}/{} criteria passed", sheet.count);
    if !sheet.failed.is_empty() {
        println!("failed: {}", sheet.failed.join(", "));
        std::process::exit(1);
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| format!("{x:.4}"))
}
