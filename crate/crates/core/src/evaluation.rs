//! Depth-variance comparison, success tables and principal components of the recurrent state.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{FlsError, Result};
use crate::scene::{Arm, Attachment, SceneState, SuccessFlags};
use crate::trajectory::DemoRecord;

/// Average across-trial variance of commanded depth, aligned at the first right grasp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaAve {
    pub value: f64,
    /// Steps kept before the alignment event.
    pub alignment_index: usize,
    pub span: usize,
    pub trials: usize,
    pub excluded: usize,
}

/// Population variance (divides by N) per aligned step, averaged over the common span.
pub fn sigma_ave(demos: &[DemoRecord], arm: Arm) -> Result<SigmaAve> {
    let mut aligned = Vec::new();
    let mut excluded = 0;
    for (k, d) in demos.iter().enumerate() {
        match d.first_right_grasp() {
            Some(g) if g < d.steps.len() => aligned.push((d, g)),
            _ => {
                log::warn!("demonstration {k} has no right grasp; excluded from variance");
                excluded += 1;
            }
        }
    }
    if aligned.len() < 2 {
        return Err(FlsError::InvalidInput(format!(
            "variance needs at least two demonstrations with a grasp, got {}",
            aligned.len()
        )));
    }
    let before = aligned.iter().map(|(_, g)| *g).min().unwrap_or(0);
    let after = aligned.iter().map(|(d, g)| d.steps.len() - g).min().unwrap_or(0);
    let span = before + after;
    let n = aligned.len() as f64;
    let mut total = 0.0;
    for k in 0..span {
        let zs: Vec<f64> = aligned
            .iter()
            .map(|(d, g)| d.steps[g - before + k].z_ref(arm))
            .collect();
        let mean = zs.iter().sum::<f64>() / n;
        total += zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / n;
    }
    Ok(SigmaAve {
        value: total / span as f64,
        alignment_index: before,
        span,
        trials: aligned.len(),
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceRow {
    pub variant: String,
    pub arm: Arm,
    pub sigma: SigmaAve,
}

pub fn variance_csv(rows: &[VarianceRow]) -> String {
    let mut s = String::from("variant,arm,sigma_ave,alignment_index,span,trials,excluded\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{:.6},{},{},{},{}",
            r.variant,
            r.arm.name(),
            r.sigma.value,
            r.sigma.alignment_index,
            r.sigma.span,
            r.sigma.trials,
            r.sigma.excluded
        );
    }
    s
}

/// Stage counts for one (variant, peg) cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SuccessRow {
    pub variant: String,
    pub peg: usize,
    pub trials: usize,
    pub take: usize,
    pub pass: usize,
    pub insert: usize,
}

/// Aggregates `(peg, flags)` runs into one row per peg, pegs ascending.
pub fn success_table(variant: &str, runs: &[(usize, SuccessFlags)]) -> Vec<SuccessRow> {
    let mut pegs: Vec<usize> = runs.iter().map(|r| r.0).collect();
    pegs.sort_unstable();
    pegs.dedup();
    pegs.into_iter()
        .map(|peg| {
            let mut row = SuccessRow {
                variant: variant.to_string(),
                peg,
                trials: 0,
                take: 0,
                pass: 0,
                insert: 0,
            };
            for (_, f) in runs.iter().filter(|r| r.0 == peg) {
                row.trials += 1;
                row.take += f.take as usize;
                row.pass += f.pass as usize;
                row.insert += f.insert as usize;
            }
            row
        })
        .collect()
}

/// Column sums over the rows of one variant.
pub fn success_totals(rows: &[SuccessRow]) -> [usize; 4] {
    rows.iter().fold([0; 4], |acc, r| {
        [acc[0] + r.trials, acc[1] + r.take, acc[2] + r.pass, acc[3] + r.insert]
    })
}

pub fn success_csv(rows: &[SuccessRow]) -> String {
    let mut s = String::from("variant,peg,trials,take,pass,insert\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{},{},{}", r.variant, r.peg, r.trials, r.take, r.pass, r.insert);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Take,
    Pass,
    Insert,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Take => "take",
            Stage::Pass => "pass",
            Stage::Insert => "insert",
        }
    }

    /// Stage the task is in given where the object is.
    pub fn of(attachment: Attachment) -> Self {
        match attachment {
            Attachment::OnPeg(_) => Stage::Take,
            Attachment::HeldBy(Arm::Right) => Stage::Pass,
            _ => Stage::Insert,
        }
    }
}

/// Recurrent hidden states of one execution with a stage label per step.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTrace {
    pub run_id: String,
    pub peg: usize,
    pub latents: Vec<Vec<f64>>,
    pub stages: Vec<Stage>,
}

impl LatentTrace {
    /// `latents[i]` is produced while observing `states[i]`.
    pub fn new(run_id: impl Into<String>, peg: usize, latents: Vec<Vec<f64>>, states: &[SceneState]) -> Self {
        let mut last = Stage::Take;
        let stages = (0..latents.len())
            .map(|i| {
                if let Some(s) = states.get(i) {
                    last = Stage::of(s.attachment);
                }
                last
            })
            .collect();
        Self {
            run_id: run_id.into(),
            peg,
            latents,
            stages,
        }
    }
}

/// Eigenvalues at or below this fraction of the largest are treated as absent.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Pca {
    pub mean: DVector<f64>,
    /// One component per row, unit norm.
    pub components: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    /// Variance fraction explained by each kept component.
    pub explained: Vec<f64>,
}

impl Pca {
    /// Principal components of the rows of `data`, keeping at most `dims`.
    ///
    /// Each component is signed so its largest-magnitude loading is positive.
    pub fn fit(data: &[Vec<f64>], dims: usize) -> Result<Self> {
        let n = data.len();
        let d = data.first().map(|r| r.len()).unwrap_or(0);
        if n <= dims || d == 0 || dims == 0 {
            return Err(FlsError::InvalidInput(format!(
                "pca needs more samples than components, got {n} samples for {dims} components"
            )));
        }
        if data.iter().any(|r| r.len() != d) {
            return Err(FlsError::InvalidInput("pca rows differ in length".into()));
        }
        let x = DMatrix::from_fn(n, d, |i, j| data[i][j]);
        let mean = DVector::from_fn(d, |j, _| x.column(j).mean());
        let mut centered = x;
        for j in 0..d {
            let m = mean[j];
            centered.column_mut(j).add_scalar_mut(-m);
        }
        let cov = centered.transpose() * &centered / (n as f64 - 1.0);
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
        let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
        let top = eig.eigenvalues[order[0]].max(0.0);
        let rank = order
            .iter()
            .filter(|&&i| eig.eigenvalues[i] > RANK_TOL * top.max(f64::MIN_POSITIVE))
            .count();
        let k = dims.min(d);
        let kept = if rank < k && dims < d {
            log::warn!("covariance has rank {rank}; keeping {rank} of {k} components");
            rank.max(1)
        } else {
            k
        };
        let mut components = DMatrix::zeros(kept, d);
        let mut eigenvalues = Vec::with_capacity(kept);
        for (r, &i) in order.iter().take(kept).enumerate() {
            let mut v = eig.eigenvectors.column(i).into_owned();
            let pivot = v.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
            if pivot < 0.0 {
                v.neg_mut();
            }
            components.row_mut(r).copy_from(&v.transpose());
            eigenvalues.push(eig.eigenvalues[i].max(0.0));
        }
        let explained = eigenvalues
            .iter()
            .map(|l| if total > 0.0 { l / total } else { 0.0 })
            .collect();
        Ok(Self {
            mean,
            components,
            eigenvalues,
            explained,
        })
    }

    pub fn dims(&self) -> usize {
        self.components.nrows()
    }

    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        let c = DVector::from_column_slice(x) - &self.mean;
        (&self.components * c).iter().copied().collect()
    }

    pub fn reconstruct(&self, y: &[f64]) -> Vec<f64> {
        let y = DVector::from_column_slice(y);
        (self.components.transpose() * y + &self.mean).iter().copied().collect()
    }
}

/// Resamples a polyline to `n` points evenly spaced in step index.
fn resample(points: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    if points.len() == 1 {
        return vec![points[0].clone(); n];
    }
    (0..n)
        .map(|i| {
            let s = i as f64 * (points.len() - 1) as f64 / (n - 1) as f64;
            let a = s.floor() as usize;
            let b = (a + 1).min(points.len() - 1);
            let w = s - a as f64;
            points[a].iter().zip(&points[b]).map(|(p, q)| p + w * (q - p)).collect()
        })
        .collect()
}

const SEGMENT_SAMPLES: usize = 32;

/// Mean pairwise distance between the `stage` segments of different traces,
/// each segment projected and resampled to a common length. `None` when
/// fewer than two traces contain the stage.
pub fn segment_separation(pca: &Pca, traces: &[LatentTrace], stage: Stage) -> Option<f64> {
    let segs: Vec<Vec<Vec<f64>>> = traces
        .iter()
        .filter_map(|t| {
            let pts: Vec<Vec<f64>> = t
                .latents
                .iter()
                .zip(&t.stages)
                .filter(|(_, s)| **s == stage)
                .map(|(l, _)| pca.project(l))
                .collect();
            (!pts.is_empty()).then(|| resample(&pts, SEGMENT_SAMPLES))
        })
        .collect();
    if segs.len() < 2 {
        return None;
    }
    let mut total = 0.0;
    let mut pairs = 0;
    for a in 0..segs.len() {
        for b in a + 1..segs.len() {
            let d: f64 = segs[a]
                .iter()
                .zip(&segs[b])
                .map(|(p, q)| p.iter().zip(q).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
                / SEGMENT_SAMPLES as f64;
            total += d;
            pairs += 1;
        }
    }
    Some(total / pairs as f64)
}

/// Projected coordinates of every trace step.
pub fn pca_csv(pca: &Pca, traces: &[LatentTrace]) -> String {
    let mut s = String::from("run,peg,step,stage");
    for k in 0..pca.dims() {
        let _ = write!(s, ",pc{}", k + 1);
    }
    s.push('\n');
    for t in traces {
        for (i, (l, st)) in t.latents.iter().zip(&t.stages).enumerate() {
            let _ = write!(s, "{},{},{},{}", t.run_id, t.peg, i, st.name());
            for v in pca.project(l) {
                let _ = write!(s, ",{v:.6}");
            }
            s.push('\n');
        }
    }
    s
}

fn time_color(f: f64) -> String {
    let f = f.clamp(0.0, 1.0);
    let r = (40.0 + 200.0 * f) as u8;
    let g = (80.0 + 60.0 * (1.0 - (2.0 * f - 1.0).abs())) as u8;
    let b = (220.0 - 180.0 * f) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Scatter of the first two components, colored by normalized time; stage
/// changes are ringed and each run starts with a labelled square.
pub fn pca_svg(pca: &Pca, traces: &[LatentTrace], title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 480.0;
    const M: f64 = 48.0;
    let pts: Vec<Vec<[f64; 2]>> = traces
        .iter()
        .map(|t| {
            t.latents
                .iter()
                .map(|l| {
                    let p = pca.project(l);
                    [p[0], p.get(1).copied().unwrap_or(0.0)]
                })
                .collect()
        })
        .collect();
    let all = pts.iter().flatten();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in all {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    if x0 > x1 {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let sx = (W - 2.0 * M) / (x1 - x0).max(1e-9);
    let sy = (H - 2.0 * M) / (y1 - y0).max(1e-9);
    let map = |p: [f64; 2]| [M + (p[0] - x0) * sx, H - M - (p[1] - y0) * sy];

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{M}" y="20" font-size="13">{}</text>"#, escape(title));
    let ev: Vec<String> = pca.explained.iter().take(2).map(|e| format!("{:.1}%", 100.0 * e)).collect();
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">PC1 ({})</text>"#,
        W / 2.0,
        H - 12.0,
        ev.first().map(String::as_str).unwrap_or("")
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" transform="rotate(-90 14 {})" text-anchor="middle">PC2 ({})</text>"#,
        H / 2.0,
        H / 2.0,
        ev.get(1).map(String::as_str).unwrap_or("")
    );
    let _ = writeln!(
        s,
        r##"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="#999"/>"##,
        W - 2.0 * M,
        H - 2.0 * M
    );
    for (t, p) in traces.iter().zip(&pts) {
        let n = p.len().max(2) - 1;
        let path: Vec<String> = p
            .iter()
            .map(|q| {
                let [u, v] = map(*q);
                format!("{u:.2},{v:.2}")
            })
            .collect();
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#bbb" stroke-width="0.8"/>"##,
            path.join(" ")
        );
        for (i, q) in p.iter().enumerate() {
            let [u, v] = map(*q);
            let _ = writeln!(
                s,
                r#"<circle cx="{u:.2}" cy="{v:.2}" r="1.8" fill="{}"/>"#,
                time_color(i as f64 / n as f64)
            );
            if i > 0 && t.stages[i] != t.stages[i - 1] {
                let _ = writeln!(
                    s,
                    r#"<circle cx="{u:.2}" cy="{v:.2}" r="5" fill="none" stroke="black"><title>{} {}</title></circle>"#,
                    escape(&t.run_id),
                    t.stages[i].name()
                );
            }
        }
        if let Some(q) = p.first() {
            let [u, v] = map(*q);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="6" height="6" fill="black"/><text x="{:.2}" y="{:.2}">{}</text>"#,
                u - 3.0,
                v - 3.0,
                u + 5.0,
                v - 5.0,
                escape(&t.run_id)
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text)?;
    Ok(())
}
