//! Peg-board world: grasp/release/insert bookkeeping and the monocular view.

use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{FlsError, Result};

pub const FRAME_WIDTH: usize = 128;
pub const FRAME_HEIGHT: usize = 96;
pub const TARGET_PEG: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arm {
    Left,
    Right,
}

impl Arm {
    pub const BOTH: [Arm; 2] = [Arm::Left, Arm::Right];

    pub fn index(self) -> usize {
        match self {
            Arm::Left => 0,
            Arm::Right => 1,
        }
    }

    pub fn other(self) -> Arm {
        match self {
            Arm::Left => Arm::Right,
            Arm::Right => Arm::Left,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Arm::Left => "left",
            Arm::Right => "right",
        }
    }
}

impl std::str::FromStr for Arm {
    type Err = FlsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" | "l" | "L" => Ok(Arm::Left),
            "right" | "r" | "R" => Ok(Arm::Right),
            _ => Err(FlsError::Parse(format!("unknown arm '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gripper {
    Open,
    Closed,
}

impl Gripper {
    pub fn from_h(h: f64) -> Self {
        if h > 0.5 {
            Gripper::Closed
        } else {
            Gripper::Open
        }
    }

    pub fn as_h(self) -> u8 {
        match self {
            Gripper::Open => 0,
            Gripper::Closed => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum Attachment {
    OnPeg(usize),
    HeldBy(Arm),
    Falling,
    Inserted,
}

/// Fixed geometry of the box trainer. Millimeters throughout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneGeometry {
    /// Three source pegs (x, y) followed by the target peg.
    pub pegs: [[f64; 2]; 4],
    pub peg_height: f64,
    /// Height of the object's grasp point when seated on a peg.
    pub grasp_height: f64,
    /// Height of the grasp point once the object lies on the board.
    pub rest_height: f64,
    pub grasp_radius: f64,
    pub capture_radius: f64,
    pub insert_height: f64,
    pub fall_speed: f64,
    /// Ports indexed by arm (left, right).
    pub ports: [[f64; 3]; 2],
}

impl Default for SceneGeometry {
    fn default() -> Self {
        Self {
            pegs: [[40.0, -40.0], [70.0, -40.0], [100.0, -40.0], [70.0, 40.0]],
            peg_height: 20.0,
            grasp_height: 25.0,
            rest_height: 3.0,
            grasp_radius: 6.0,
            capture_radius: 5.0,
            insert_height: 35.0,
            fall_speed: 15.0,
            ports: [[70.0, 130.0, 170.0], [70.0, -130.0, 170.0]],
        }
    }
}

impl SceneGeometry {
    pub fn seat(&self, peg: usize) -> Vector3<f64> {
        Vector3::new(self.pegs[peg][0], self.pegs[peg][1], self.grasp_height)
    }

    pub fn port(&self, arm: Arm) -> Vector3<f64> {
        Vector3::from(self.ports[arm.index()])
    }

    /// Largest jump a released object can make while settling onto a peg.
    pub fn settle_bound(&self) -> f64 {
        self.capture_radius + (self.insert_height - self.rest_height).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneState {
    pub peg_positions: [[f64; 3]; 4],
    pub object: [f64; 3],
    pub attachment: Attachment,
    /// Arm still gripping during a hand-off, if any.
    pub co_holder: Option<Arm>,
    /// Object position relative to each tip, captured at grasp time.
    pub grasp_offsets: [[f64; 3]; 2],
    pub forcep_tips: [[f64; 3]; 2],
    pub grippers: [Gripper; 2],
    pub ports: [[f64; 3]; 2],
    pub time: u64,
}

impl SceneState {
    pub fn tip(&self, arm: Arm) -> Vector3<f64> {
        Vector3::from(self.forcep_tips[arm.index()])
    }

    pub fn object_position(&self) -> Vector3<f64> {
        Vector3::from(self.object)
    }

    pub fn gripper(&self, arm: Arm) -> Gripper {
        self.grippers[arm.index()]
    }
}

/// The world model: geometry plus the pure `step`/`render` functions.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub geometry: SceneGeometry,
}

impl Scene {
    pub fn new(geometry: SceneGeometry) -> Self {
        Self { geometry }
    }

    /// Object seated on `peg`, both grippers open, tips at `tips` (left, right).
    pub fn initial_state(&self, peg: usize, tips: [Vector3<f64>; 2]) -> SceneState {
        let g = &self.geometry;
        let mut peg_positions = [[0.0; 3]; 4];
        for (p, xy) in peg_positions.iter_mut().zip(&g.pegs) {
            *p = [xy[0], xy[1], 0.0];
        }
        SceneState {
            peg_positions,
            object: g.seat(peg).into(),
            attachment: Attachment::OnPeg(peg),
            co_holder: None,
            grasp_offsets: [[0.0; 3]; 2],
            forcep_tips: [tips[0].into(), tips[1].into()],
            grippers: [Gripper::Open; 2],
            ports: g.ports,
            time: 0,
        }
    }

    /// Advances the world by one 10 Hz tick.
    pub fn step(
        &self,
        state: &SceneState,
        tip_targets: [Vector3<f64>; 2],
        gripper_cmds: [Gripper; 2],
    ) -> SceneState {
        let g = &self.geometry;
        let mut next = state.clone();
        next.time += 1;
        for arm in Arm::BOTH {
            let t = tip_targets[arm.index()];
            if t.iter().all(|v| v.is_finite()) {
                next.forcep_tips[arm.index()] = t.into();
            }
        }
        if let Attachment::HeldBy(holder) = next.attachment {
            next.object = (next.tip(holder) + Vector3::from(next.grasp_offsets[holder.index()])).into();
        }

        // Grasps are resolved before releases so that a same-tick hand-off succeeds.
        for arm in Arm::BOTH {
            let was = state.grippers[arm.index()];
            let now = gripper_cmds[arm.index()];
            if was == Gripper::Open && now == Gripper::Closed {
                let graspable = match next.attachment {
                    Attachment::OnPeg(_) => true,
                    Attachment::HeldBy(h) => h != arm && next.co_holder.is_none(),
                    Attachment::Falling | Attachment::Inserted => false,
                };
                let d = (next.tip(arm) - next.object_position()).norm();
                if graspable && d <= g.grasp_radius {
                    next.grasp_offsets[arm.index()] = (next.object_position() - next.tip(arm)).into();
                    if let Attachment::HeldBy(h) = next.attachment {
                        next.co_holder = Some(h);
                    }
                    next.attachment = Attachment::HeldBy(arm);
                }
            }
        }
        for arm in Arm::BOTH {
            let was = state.grippers[arm.index()];
            let now = gripper_cmds[arm.index()];
            if was == Gripper::Closed && now == Gripper::Open {
                if next.attachment == Attachment::HeldBy(arm) {
                    match next.co_holder.take() {
                        Some(other) => next.attachment = Attachment::HeldBy(other),
                        None => self.settle(&mut next),
                    }
                } else if next.co_holder == Some(arm) {
                    next.co_holder = None;
                }
            }
        }
        next.grippers = gripper_cmds;

        if next.attachment == Attachment::Falling && next.object[2] > g.rest_height {
            next.object[2] = (next.object[2] - g.fall_speed).max(g.rest_height);
        }
        next
    }

    fn settle(&self, s: &mut SceneState) {
        let g = &self.geometry;
        let obj = s.object_position();
        let hit = (0..4).find(|&i| {
            let dx = obj.x - g.pegs[i][0];
            let dy = obj.y - g.pegs[i][1];
            (dx * dx + dy * dy).sqrt() <= g.capture_radius
                && obj.z <= g.insert_height
                && obj.z >= g.rest_height
        });
        match hit {
            Some(i) => {
                s.object = g.seat(i).into();
                s.attachment = if i == TARGET_PEG {
                    Attachment::Inserted
                } else {
                    Attachment::OnPeg(i)
                };
            }
            None => s.attachment = Attachment::Falling,
        }
    }

    pub fn render(&self, state: &SceneState) -> Frame {
        let mut canvas = Canvas::new();
        let g = &self.geometry;
        canvas.fill(BACKGROUND);
        let corners = [
            project(&Vector3::new(5.0, -78.0, 0.0)),
            project(&Vector3::new(5.0, 78.0, 0.0)),
            project(&Vector3::new(135.0, 78.0, 0.0)),
            project(&Vector3::new(135.0, -78.0, 0.0)),
        ];
        canvas.quad(corners, BOARD);

        // Far pegs first.
        let mut order: Vec<usize> = (0..4).collect();
        order.sort_by(|a, b| g.pegs[*a][0].total_cmp(&g.pegs[*b][0]));
        for i in order {
            let base = Vector3::new(g.pegs[i][0], g.pegs[i][1], 0.0);
            let top = Vector3::new(g.pegs[i][0], g.pegs[i][1], g.peg_height);
            let (b, t) = (project(&base), project(&top));
            canvas.disc(b, 3.0, PEG_BASE);
            canvas.segment(b, t, 1.2, PEG);
            canvas.disc(t, 2.2 * depth_scale(g.peg_height), PEG);
        }

        let obj = state.object_position();
        let c = project(&obj);
        let r = 8.0 * depth_scale(obj.z);
        canvas.triangle(
            [c[0], c[1] - r],
            [c[0] - 0.87 * r, c[1] + 0.5 * r],
            [c[0] + 0.87 * r, c[1] + 0.5 * r],
            OBJECT,
        );

        for arm in Arm::BOTH {
            let tip = state.tip(arm);
            let p = project(&tip);
            let r = 3.0 * depth_scale(tip.z);
            let color = match arm {
                Arm::Left => LEFT_TIP,
                Arm::Right => RIGHT_TIP,
            };
            canvas.disc(p, r, color);
            if state.gripper(arm) == Gripper::Open {
                canvas.disc(p, 0.45 * r, BACKGROUND);
            }
        }
        canvas.into_frame()
    }
}

/// Stage outcomes over one execution: take, pass, insert.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SuccessFlags {
    pub take: bool,
    pub pass: bool,
    pub insert: bool,
}

/// Stages are scored in task order: a pass only counts after a take, an
/// insert only after a pass.
pub fn success_flags(history: &[SceneState]) -> SuccessFlags {
    let Some(first) = history.first() else {
        return SuccessFlags::default();
    };
    if !matches!(first.attachment, Attachment::OnPeg(p) if p != TARGET_PEG) {
        return SuccessFlags::default();
    }
    let mut flags = SuccessFlags::default();
    let mut prev = first.attachment;
    for s in &history[1..] {
        match (prev, s.attachment) {
            (_, Attachment::HeldBy(Arm::Right)) => flags.take = true,
            (Attachment::HeldBy(Arm::Right), Attachment::HeldBy(Arm::Left)) if flags.take => {
                flags.pass = true
            }
            _ => {}
        }
        prev = s.attachment;
    }
    flags.insert = flags.pass
        && history.last().map(|s| s.attachment) == Some(Attachment::Inserted);
    flags
}

type Rgb = [f32; 3];
const BACKGROUND: Rgb = [0.12, 0.06, 0.06];
const BOARD: Rgb = [0.55, 0.55, 0.55];
const PEG_BASE: Rgb = [0.05, 0.35, 0.1];
const PEG: Rgb = [0.1, 0.75, 0.2];
const OBJECT: Rgb = [0.9, 0.1, 0.1];
const LEFT_TIP: Rgb = [0.2, 0.3, 1.0];
const RIGHT_TIP: Rgb = [1.0, 0.9, 0.1];

/// Oblique orthographic view from above the robot side of the box.
pub fn project(p: &Vector3<f64>) -> [f64; 2] {
    let u = 64.0 - 0.75 * p.y;
    let v = 60.0 + 0.5 * (p.x - 70.0) - 0.55 * p.z;
    [u, v]
}

/// Apparent size grows as things approach the camera above the board.
fn depth_scale(z: f64) -> f64 {
    (1.0 + z / 120.0).clamp(0.5, 2.5)
}

/// 128x96 RGB image, row-major, channels interleaved, values in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    data: Vec<f32>,
}

impl Frame {
    pub fn from_data(data: Vec<f32>) -> Result<Self> {
        if data.len() != FRAME_WIDTH * FRAME_HEIGHT * 3 {
            return Err(FlsError::Dimension {
                what: "frame",
                expected: FRAME_WIDTH * FRAME_HEIGHT * 3,
                got: data.len(),
            });
        }
        Ok(Self {
            data: data.into_iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        })
    }

    pub fn width(&self) -> usize {
        FRAME_WIDTH
    }

    pub fn height(&self) -> usize {
        FRAME_HEIGHT
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * FRAME_WIDTH + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Channel-major copy (C, H, W) as network input.
    pub fn to_chw(&self) -> Vec<f64> {
        let plane = FRAME_WIDTH * FRAME_HEIGHT;
        let mut out = vec![0.0; plane * 3];
        for (i, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + i] = px[c] as f64;
            }
        }
        out
    }

    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|v| (v * 255.0).round() as u8).collect()
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        self.encode_png(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn encode_png<W: Write>(&self, w: W) -> Result<()> {
        let mut enc = png::Encoder::new(w, FRAME_WIDTH as u32, FRAME_HEIGHT as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| FlsError::Parse(format!("png header: {e}")))?;
        writer
            .write_image_data(&self.to_rgb8())
            .map_err(|e| FlsError::Parse(format!("png data: {e}")))?;
        Ok(())
    }

    pub fn png_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.encode_png(&mut buf).expect("in-memory png encoding");
        buf
    }
}

/// Decodes an 8-bit RGB PNG into raw bytes.
pub fn read_png_rgb8(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let file = std::fs::File::open(path)?;
    let dec = png::Decoder::new(std::io::BufReader::new(file));
    let mut reader = dec
        .read_info()
        .map_err(|e| FlsError::Parse(format!("png: {e}")))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| FlsError::Parse(format!("png: {e}")))?;
    if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
        return Err(FlsError::Parse("expected 8-bit RGB png".into()));
    }
    buf.truncate(info.buffer_size());
    Ok((info.width as usize, info.height as usize, buf))
}

struct Canvas {
    data: Vec<f32>,
}

impl Canvas {
    fn new() -> Self {
        Self {
            data: vec![0.0; FRAME_WIDTH * FRAME_HEIGHT * 3],
        }
    }

    fn put(&mut self, x: usize, y: usize, c: Rgb) {
        let i = (y * FRAME_WIDTH + x) * 3;
        self.data[i..i + 3].copy_from_slice(&c);
    }

    fn fill(&mut self, c: Rgb) {
        for px in self.data.chunks_exact_mut(3) {
            px.copy_from_slice(&c);
        }
    }

    /// Visits pixel centers inside the clipped bounding box.
    fn for_box(&mut self, lo: [f64; 2], hi: [f64; 2], c: Rgb, inside: impl Fn(f64, f64) -> bool) {
        let x0 = lo[0].floor().max(0.0) as usize;
        let y0 = lo[1].floor().max(0.0) as usize;
        let x1 = (hi[0].ceil().max(0.0) as usize).min(FRAME_WIDTH);
        let y1 = (hi[1].ceil().max(0.0) as usize).min(FRAME_HEIGHT);
        for y in y0..y1 {
            for x in x0..x1 {
                if inside(x as f64 + 0.5, y as f64 + 0.5) {
                    self.put(x, y, c);
                }
            }
        }
    }

    fn disc(&mut self, c: [f64; 2], r: f64, color: Rgb) {
        let r2 = r * r;
        self.for_box([c[0] - r, c[1] - r], [c[0] + r, c[1] + r], color, |x, y| {
            let (dx, dy) = (x - c[0], y - c[1]);
            dx * dx + dy * dy <= r2
        });
    }

    fn segment(&mut self, a: [f64; 2], b: [f64; 2], half_width: f64, color: Rgb) {
        let lo = [a[0].min(b[0]) - half_width, a[1].min(b[1]) - half_width];
        let hi = [a[0].max(b[0]) + half_width, a[1].max(b[1]) + half_width];
        let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
        let len2 = dx * dx + dy * dy;
        self.for_box(lo, hi, color, |x, y| {
            let t = if len2 > 0.0 {
                (((x - a[0]) * dx + (y - a[1]) * dy) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (px, py) = (a[0] + t * dx - x, a[1] + t * dy - y);
            px * px + py * py <= half_width * half_width
        });
    }

    fn triangle(&mut self, a: [f64; 2], b: [f64; 2], c: [f64; 2], color: Rgb) {
        let lo = [a[0].min(b[0]).min(c[0]), a[1].min(b[1]).min(c[1])];
        let hi = [a[0].max(b[0]).max(c[0]), a[1].max(b[1]).max(c[1])];
        let edge = |p: [f64; 2], q: [f64; 2], x: f64, y: f64| {
            (q[0] - p[0]) * (y - p[1]) - (q[1] - p[1]) * (x - p[0])
        };
        self.for_box(lo, hi, color, |x, y| {
            let e0 = edge(a, b, x, y);
            let e1 = edge(b, c, x, y);
            let e2 = edge(c, a, x, y);
            (e0 >= 0.0 && e1 >= 0.0 && e2 >= 0.0) || (e0 <= 0.0 && e1 <= 0.0 && e2 <= 0.0)
        });
    }

    fn quad(&mut self, p: [[f64; 2]; 4], color: Rgb) {
        self.triangle(p[0], p[1], p[2], color);
        self.triangle(p[0], p[2], p[3], color);
    }

    fn into_frame(self) -> Frame {
        Frame { data: self.data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene() -> Scene {
        Scene::new(SceneGeometry::default())
    }

    fn homes() -> [Vector3<f64>; 2] {
        [Vector3::new(70.0, 60.0, 70.0), Vector3::new(70.0, -20.0, 70.0)]
    }

    fn at(s: &SceneState, arm: Arm, p: Vector3<f64>) -> [Vector3<f64>; 2] {
        let mut t = [s.tip(Arm::Left), s.tip(Arm::Right)];
        t[arm.index()] = p;
        t
    }

    #[test]
    fn grasp_is_edge_triggered() {
        let sc = scene();
        let s0 = sc.initial_state(1, homes());
        let near = sc.geometry.seat(1) + Vector3::new(0.0, 3.0, 0.0);
        // Already closed before arriving near the object: no grasp.
        let s1 = sc.step(&s0, homes(), [Gripper::Open, Gripper::Closed]);
        let s2 = sc.step(&s1, at(&s1, Arm::Right, near), [Gripper::Open, Gripper::Closed]);
        assert_eq!(s2.attachment, Attachment::OnPeg(1));
    }

    #[test]
    fn grasp_within_radius_then_follow() {
        let sc = scene();
        let s0 = sc.initial_state(1, homes());
        let near = sc.geometry.seat(1) + Vector3::new(0.0, 3.0, 0.0);
        let s1 = sc.step(&s0, at(&s0, Arm::Right, near), [Gripper::Open, Gripper::Open]);
        let s2 = sc.step(&s1, at(&s1, Arm::Right, near), [Gripper::Open, Gripper::Closed]);
        assert_eq!(s2.attachment, Attachment::HeldBy(Arm::Right));
        let moved = near + Vector3::new(5.0, 2.0, 10.0);
        let s3 = sc.step(&s2, at(&s2, Arm::Right, moved), [Gripper::Open, Gripper::Closed]);
        let expected = sc.geometry.seat(1) + Vector3::new(5.0, 2.0, 10.0);
        assert!((s3.object_position() - expected).norm() < 1e-12);
    }

    #[test]
    fn grasp_outside_radius_fails() {
        let sc = scene();
        let s0 = sc.initial_state(0, homes());
        let far = sc.geometry.seat(0) + Vector3::new(0.0, 0.0, 6.5);
        let s1 = sc.step(&s0, at(&s0, Arm::Right, far), [Gripper::Open, Gripper::Closed]);
        assert_eq!(s1.attachment, Attachment::OnPeg(0));
    }

    fn held_by_left_at(sc: &Scene, p: Vector3<f64>) -> SceneState {
        let mut s = sc.initial_state(0, homes());
        s.attachment = Attachment::HeldBy(Arm::Left);
        s.grippers = [Gripper::Closed, Gripper::Open];
        s.forcep_tips[0] = p.into();
        s.object = p.into();
        s
    }

    #[test]
    fn release_above_target_inserts() {
        let sc = scene();
        let target = sc.geometry.seat(TARGET_PEG);
        let p = Vector3::new(target.x + 2.0, target.y, 30.0);
        let s = held_by_left_at(&sc, p);
        // Geometric predicate evaluated independently.
        let horiz = ((p.x - target.x).powi(2) + (p.y - target.y).powi(2)).sqrt();
        assert!(horiz <= sc.geometry.capture_radius && p.z <= sc.geometry.insert_height);
        let s1 = sc.step(&s, at(&s, Arm::Left, p), [Gripper::Open, Gripper::Open]);
        assert_eq!(s1.attachment, Attachment::Inserted);
        assert_eq!(s1.object_position(), target);
    }

    #[test]
    fn release_in_the_open_drops() {
        let sc = scene();
        let p = Vector3::new(70.0, 0.0, 40.0);
        let s = held_by_left_at(&sc, p);
        let s1 = sc.step(&s, at(&s, Arm::Left, p), [Gripper::Open, Gripper::Open]);
        assert_eq!(s1.attachment, Attachment::Falling);
        assert_eq!(s1.object[2], 25.0);
        let s2 = sc.step(&s1, at(&s1, Arm::Left, p), [Gripper::Open, Gripper::Open]);
        let s3 = sc.step(&s2, at(&s2, Arm::Left, p), [Gripper::Open, Gripper::Open]);
        assert_eq!(s3.object[2], sc.geometry.rest_height);
        // A dropped object cannot be picked up again.
        let s4 = sc.step(&s3, at(&s3, Arm::Left, s3.object_position()), [Gripper::Closed, Gripper::Open]);
        assert_eq!(s4.attachment, Attachment::Falling);
    }

    #[test]
    fn handoff_switches_holder_then_completes() {
        let sc = scene();
        let mut s = sc.initial_state(0, homes());
        let p = Vector3::new(70.0, 0.0, 50.0);
        s.attachment = Attachment::HeldBy(Arm::Right);
        s.grippers = [Gripper::Open, Gripper::Closed];
        s.forcep_tips = [[70.0, 4.0, 50.0], p.into()];
        s.object = p.into();
        let tips = [Vector3::new(70.0, 4.0, 50.0), p];
        let s1 = sc.step(&s, tips, [Gripper::Closed, Gripper::Closed]);
        assert_eq!(s1.attachment, Attachment::HeldBy(Arm::Left));
        assert_eq!(s1.co_holder, Some(Arm::Right));
        let s2 = sc.step(&s1, tips, [Gripper::Closed, Gripper::Open]);
        assert_eq!(s2.attachment, Attachment::HeldBy(Arm::Left));
        assert_eq!(s2.co_holder, None);
        let flags = success_flags(&[sc.initial_state(0, homes()), s.clone(), s1, s2]);
        assert!(flags.take && flags.pass && !flags.insert);
    }

    #[test]
    fn never_grasped_scores_nothing() {
        let sc = scene();
        let s0 = sc.initial_state(2, homes());
        let s1 = sc.step(&s0, homes(), [Gripper::Closed, Gripper::Closed]);
        assert_eq!(success_flags(&[s0, s1]), SuccessFlags::default());
    }

    #[test]
    fn frame_shape_and_range() {
        let sc = scene();
        let f = sc.render(&sc.initial_state(0, homes()));
        assert_eq!(f.data().len(), 128 * 96 * 3);
        assert!(f.data().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_eq!(f.to_chw().len(), 3 * 128 * 96);
    }

    #[test]
    fn object_height_changes_the_view() {
        let sc = scene();
        let a = sc.initial_state(1, homes());
        let mut b = a.clone();
        b.object[2] += 10.0;
        assert_ne!(sc.render(&a), sc.render(&b));
    }
}
