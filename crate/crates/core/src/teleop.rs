//! Websocket bridge for human teleoperation.
//!
//! One thread owns the simulation and advances it exactly one step per tick.
//! Each connection gets an I/O worker that parses client messages and forwards
//! them over a channel; target deltas arriving within a tick are coalesced,
//! latest wins. Only one operator session is active at a time; further
//! connections receive a `busy` message and are closed.

use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, TryRecvError};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use base64::Engine as _;
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use tungstenite::{Message, WebSocket};

use crate::config::ServeConfig;
use crate::error::{FlsError, Result};
use crate::phase::{feedback_force, ConstraintSet, PhaseDetector, TransitionConfig};
use crate::scene::{Arm, Attachment, Gripper};
use crate::sim::{Rig, Simulation};
use crate::teacher::TeacherStyle;
use crate::trajectory::{grip_events, DemoRecord, TrajectoryStep, Variant};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum ClientMessage {
    TargetDelta { arm: Arm, dx: f64, dy: f64, dz: f64 },
    Gripper { arm: Arm, state: Gripper },
    #[serde(rename_all = "camelCase")]
    StartDemo {
        variant: Variant,
        #[serde(default)]
        peg: usize,
    },
    EndDemo,
}

/// Client frame: schema version, client sequence number, message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEnvelope {
    pub v: u32,
    pub seq: u64,
    #[serde(flatten)]
    pub msg: ClientMessage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StateUpdate {
    pub tick: u64,
    /// Sequence numbers of the client messages applied since the previous update.
    pub acks: Vec<u64>,
    pub tips: [[f64; 3]; 2],
    pub targets: [[f64; 3]; 2],
    pub object: [f64; 3],
    pub attachment: Attachment,
    pub grippers: [Gripper; 2],
    pub phase: usize,
    pub recording: bool,
    /// Feedback force per arm, (left, right), newtons.
    pub force: [[f64; 3]; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "camelCase")]
pub enum ServerMessage {
    #[serde(rename_all = "camelCase")]
    Hello { tick_hz: f64, frame_every: usize },
    StateUpdate(StateUpdate),
    DemoSaved { path: String, steps: usize },
    Error { seq: Option<u64>, message: String },
    Busy { message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerEnvelope {
    pub v: u32,
    #[serde(flatten)]
    pub msg: ServerMessage,
}

impl ServerEnvelope {
    pub fn new(msg: ServerMessage) -> Self {
        Self { v: SCHEMA_VERSION, msg }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("server message serializes")
    }
}

/// Parses and version-checks one client text frame.
pub fn parse_client(text: &str) -> std::result::Result<ClientEnvelope, (Option<u64>, String)> {
    let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| (None, format!("invalid json: {e}")))?;
    let seq = raw.get("seq").and_then(|s| s.as_u64());
    match raw.get("v").and_then(|v| v.as_u64()) {
        Some(v) if v == SCHEMA_VERSION as u64 => {}
        Some(v) => return Err((seq, format!("unsupported schema version {v}"))),
        None => return Err((seq, "missing schema version".into())),
    }
    let env: ClientEnvelope = serde_json::from_value(raw).map_err(|e| (seq, format!("malformed message: {e}")))?;
    if let ClientMessage::TargetDelta { dx, dy, dz, .. } = env.msg {
        if ![dx, dy, dz].iter().all(|v| v.is_finite()) {
            return Err((seq, "non-finite target delta".into()));
        }
    }
    Ok(env)
}

enum Event {
    Connected { session: u64, out: Sender<String> },
    Message { session: u64, env: ClientEnvelope },
    Disconnected { session: u64 },
}

pub struct TeleopServer {
    listener: TcpListener,
    cfg: ServeConfig,
    rig: Rig,
    constraints: Option<ConstraintSet>,
    transitions: TransitionConfig,
    kp: f64,
    demo_dir: PathBuf,
}

/// Handle to a server running on background threads.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.addr);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl TeleopServer {
    pub fn bind(
        addr: &str,
        cfg: ServeConfig,
        rig: Rig,
        constraints: Option<ConstraintSet>,
        transitions: TransitionConfig,
        kp: f64,
        demo_dir: PathBuf,
    ) -> Result<Self> {
        if !(cfg.tick_hz > 0.0) || cfg.frame_every == 0 {
            return Err(FlsError::InvalidConfig("tick_hz and frame_every must be positive".into()));
        }
        let listener = TcpListener::bind(addr)?;
        Ok(Self {
            listener,
            cfg,
            rig,
            constraints,
            transitions,
            kp,
            demo_dir,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        Ok(self.listener.local_addr()?)
    }

    /// Serves until the process exits.
    pub fn run(self) -> Result<()> {
        let handle = self.spawn()?;
        for t in handle.threads {
            let _ = t.join();
        }
        Ok(())
    }

    pub fn spawn(self) -> Result<ServerHandle> {
        let addr = self.listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let (tx, rx) = mpsc::channel::<Event>();
        let loop_stop = stop.clone();
        let Self {
            listener,
            cfg,
            rig,
            constraints,
            transitions,
            kp,
            demo_dir,
        } = self;
        let sim_cfg = cfg.clone();
        let sim = std::thread::Builder::new().name("teleop-sim".into()).spawn(move || {
            let mut owner = SimLoop {
                rig: &rig,
                cfg: sim_cfg,
                constraints,
                transitions,
                kp,
                demo_dir,
                session: None,
                saved: 0,
            };
            owner.run(rx, &loop_stop);
        })?;
        let accept_stop = stop.clone();
        let accept = std::thread::Builder::new().name("teleop-accept".into()).spawn(move || {
            accept_loop(listener, tx, cfg, accept_stop);
        })?;
        Ok(ServerHandle {
            addr,
            stop,
            threads: vec![sim, accept],
        })
    }
}

fn accept_loop(listener: TcpListener, tx: Sender<Event>, cfg: ServeConfig, stop: Arc<AtomicBool>) {
    let active: Arc<Mutex<Option<u64>>> = Arc::new(Mutex::new(None));
    let mut next_session = 1u64;
    for stream in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = stream else { continue };
        let session = next_session;
        next_session += 1;
        let (tx, active, cfg, stop) = (tx.clone(), active.clone(), cfg.clone(), stop.clone());
        let _ = std::thread::Builder::new()
            .name(format!("teleop-io-{session}"))
            .spawn(move || {
                if let Err(e) = serve_connection(stream, session, tx, active, cfg, stop) {
                    log::debug!("session {session}: {e}");
                }
            });
    }
}

fn send(ws: &mut WebSocket<TcpStream>, msg: ServerMessage) -> tungstenite::Result<()> {
    ws.send(Message::text(ServerEnvelope::new(msg).to_json()))
}

fn serve_connection(
    stream: TcpStream,
    session: u64,
    tx: Sender<Event>,
    active: Arc<Mutex<Option<u64>>>,
    cfg: ServeConfig,
    stop: Arc<AtomicBool>,
) -> std::result::Result<(), Box<dyn std::error::Error>> {
    let mut ws = tungstenite::accept(stream)?;
    {
        let mut a = active.lock().map_err(|_| "session lock poisoned")?;
        if a.is_some() {
            log::info!("rejecting connection {session}: operator session active");
            send(
                &mut ws,
                ServerMessage::Busy {
                    message: "another operator session is active".into(),
                },
            )?;
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        *a = Some(session);
    }
    log::info!("operator session {session} connected");
    let (out_tx, out_rx) = mpsc::channel::<String>();
    send(
        &mut ws,
        ServerMessage::Hello {
            tick_hz: cfg.tick_hz,
            frame_every: cfg.frame_every,
        },
    )?;
    let _ = tx.send(Event::Connected { session, out: out_tx });
    ws.get_mut().set_read_timeout(Some(Duration::from_millis(2)))?;
    let result = io_loop(&mut ws, session, &tx, &out_rx, &stop);
    let _ = tx.send(Event::Disconnected { session });
    if let Ok(mut a) = active.lock() {
        *a = None;
    }
    log::info!("operator session {session} ended");
    result
}

fn io_loop(
    ws: &mut WebSocket<TcpStream>,
    session: u64,
    tx: &Sender<Event>,
    out_rx: &Receiver<String>,
    stop: &AtomicBool,
) -> std::result::Result<(), Box<dyn std::error::Error>> {
    loop {
        if stop.load(Ordering::SeqCst) {
            let _ = ws.close(None);
            return Ok(());
        }
        match ws.read() {
            Ok(Message::Text(text)) => match parse_client(&text) {
                Ok(env) => {
                    let _ = tx.send(Event::Message { session, env });
                }
                Err((seq, message)) => send(ws, ServerMessage::Error { seq, message })?,
            },
            Ok(Message::Close(_)) => return Ok(()),
            Ok(Message::Binary(_)) => send(
                ws,
                ServerMessage::Error {
                    seq: None,
                    message: "binary frames are not supported".into(),
                },
            )?,
            Ok(_) => {}
            Err(tungstenite::Error::Io(e))
                if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.into()),
        }
        loop {
            match out_rx.try_recv() {
                Ok(text) => ws.send(Message::text(text))?,
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return Ok(()),
            }
        }
    }
}

struct Recording {
    variant: Variant,
    peg: usize,
    steps: Vec<TrajectoryStep>,
}

struct Session<'r> {
    id: u64,
    out: Sender<String>,
    sim: Simulation<'r>,
    cmd: [Vector3<f64>; 2],
    grip: [Gripper; 2],
    delta: [Option<Vector3<f64>>; 2],
    grip_cmd: [Option<Gripper>; 2],
    acks: Vec<u64>,
    detector: PhaseDetector,
    recording: Option<Recording>,
    tick: u64,
    t: usize,
}

struct SimLoop<'r> {
    rig: &'r Rig,
    cfg: ServeConfig,
    constraints: Option<ConstraintSet>,
    transitions: TransitionConfig,
    kp: f64,
    demo_dir: PathBuf,
    session: Option<Session<'r>>,
    saved: usize,
}

impl<'r> SimLoop<'r> {
    fn run(&mut self, rx: Receiver<Event>, stop: &AtomicBool) {
        let period = Duration::from_secs_f64(1.0 / self.cfg.tick_hz);
        let mut next = Instant::now() + period;
        while !stop.load(Ordering::SeqCst) {
            loop {
                match rx.try_recv() {
                    Ok(ev) => self.handle(ev),
                    Err(TryRecvError::Empty) => break,
                    Err(TryRecvError::Disconnected) => return,
                }
            }
            if self.session.is_some() {
                self.tick();
            }
            let now = Instant::now();
            if next > now {
                std::thread::sleep(next - now);
                next += period;
            } else {
                next = now + period;
            }
        }
    }

    fn new_session(&self, id: u64, out: Sender<String>, peg: usize) -> Result<Session<'r>> {
        let sim = self.rig.start(peg, [Vector3::zeros(); 2])?;
        let cmd = [sim.state.tip(Arm::Left), sim.state.tip(Arm::Right)];
        Ok(Session {
            id,
            out,
            sim,
            cmd,
            grip: [Gripper::Open; 2],
            delta: [None; 2],
            grip_cmd: [None; 2],
            acks: Vec::new(),
            detector: PhaseDetector::new(self.transitions.velocity_threshold, self.transitions.n_thre_collection),
            recording: None,
            tick: 0,
            t: 0,
        })
    }

    fn send(&self, msg: ServerMessage) {
        if let Some(s) = &self.session {
            let _ = s.out.send(ServerEnvelope::new(msg).to_json());
        }
    }

    fn handle(&mut self, ev: Event) {
        match ev {
            Event::Connected { session, out } => match self.new_session(session, out, 0) {
                Ok(s) => self.session = Some(s),
                Err(e) => log::error!("session {session}: {e}"),
            },
            Event::Disconnected { session } => {
                if let Some(s) = self.session.take_if(|s| s.id == session) {
                    if let Some(r) = s.recording {
                        log::warn!(
                            "session {session} disconnected mid-demonstration; {} steps discarded",
                            r.steps.len()
                        );
                    }
                }
            }
            Event::Message { session, env } => {
                if self.session.as_ref().map(|s| s.id) != Some(session) {
                    return;
                }
                if let Err(message) = self.apply_message(&env) {
                    self.send(ServerMessage::Error {
                        seq: Some(env.seq),
                        message,
                    });
                }
            }
        }
    }

    fn apply_message(&mut self, env: &ClientEnvelope) -> std::result::Result<(), String> {
        match &env.msg {
            ClientMessage::TargetDelta { arm, dx, dy, dz } => {
                let s = self.session.as_mut().expect("active session");
                s.delta[arm.index()] = Some(Vector3::new(*dx, *dy, *dz));
            }
            ClientMessage::Gripper { arm, state } => {
                let s = self.session.as_mut().expect("active session");
                s.grip_cmd[arm.index()] = Some(*state);
            }
            ClientMessage::StartDemo { variant, peg } => {
                if *peg > 2 {
                    return Err(format!("source peg {peg} out of range"));
                }
                let old = self.session.take().expect("active session");
                let mut s = self
                    .new_session(old.id, old.out.clone(), *peg)
                    .map_err(|e| e.to_string())?;
                s.acks = old.acks;
                s.tick = old.tick;
                s.steps_start(*variant, *peg);
                self.session = Some(s);
            }
            ClientMessage::EndDemo => {
                let s = self.session.as_mut().expect("active session");
                let Some(r) = s.recording.take() else {
                    return Err("no demonstration in progress".into());
                };
                let events = grip_events(&r.steps);
                let record = DemoRecord {
                    steps: r.steps,
                    source_peg: r.peg,
                    variant: Some(r.variant),
                    style: TeacherStyle::default(),
                    events,
                };
                std::fs::create_dir_all(&self.demo_dir).map_err(|e| e.to_string())?;
                let path = loop {
                    let p = self
                        .demo_dir
                        .join(format!("teleop_{}_{:03}.log", r.variant.name(), self.saved));
                    self.saved += 1;
                    if !p.exists() {
                        break p;
                    }
                };
                record.write_log(&path).map_err(|e| e.to_string())?;
                log::info!("saved {} step demonstration to {}", record.steps.len(), path.display());
                self.send(ServerMessage::DemoSaved {
                    path: path.to_string_lossy().into_owned(),
                    steps: record.steps.len(),
                });
            }
        }
        if let Some(s) = self.session.as_mut() {
            s.acks.push(env.seq);
        }
        Ok(())
    }

    fn tick(&mut self) {
        let frame_every = self.cfg.frame_every as u64;
        let kp = self.kp;
        let s = self.session.as_mut().expect("active session");
        let mut target = s.cmd;
        for arm in Arm::BOTH {
            let i = arm.index();
            if let Some(d) = s.delta[i].take() {
                target[i] += d;
            }
            if let Some(g) = s.grip_cmd[i].take() {
                s.grip[i] = g;
            }
        }
        let mut error = None;
        let mut next = s.sim.clone();
        match next.apply(target, s.grip) {
            Ok(r) if r.converged() => {
                s.sim = next;
                s.cmd = target;
            }
            Ok(_) => {
                error = Some("target unreachable through the port; holding position".to_string());
                let mut hold = s.sim.clone();
                if hold.apply(s.cmd, s.grip).is_ok() {
                    s.sim = hold;
                }
            }
            Err(e) => error = Some(e.to_string()),
        }
        s.t += 1;
        s.tick += 1;
        let h = [s.grip[0].as_h(), s.grip[1].as_h()];
        s.detector.push(s.cmd, h);
        let phase = s.detector.phase();
        if let Some(r) = s.recording.as_mut() {
            r.steps.push(TrajectoryStep::from_scene(r.steps.len(), s.cmd, h, &s.sim.state));
        }
        let mut force = [[0.0; 3]; 2];
        if let Some(set) = &self.constraints {
            for arm in Arm::BOTH {
                if let Some(c) = set.active(phase, arm) {
                    force[arm.index()][2] = feedback_force(s.cmd[arm.index()].z, c, kp);
                }
            }
        }
        let frame = (s.tick % frame_every == 0).then(|| {
            let png = self.rig.scene.render(&s.sim.state).png_bytes();
            base64::engine::general_purpose::STANDARD.encode(png)
        });
        let st = &s.sim.state;
        let update = StateUpdate {
            tick: s.tick,
            acks: std::mem::take(&mut s.acks),
            tips: st.forcep_tips,
            targets: [s.cmd[0].into(), s.cmd[1].into()],
            object: st.object,
            attachment: st.attachment,
            grippers: [st.gripper(Arm::Left), st.gripper(Arm::Right)],
            phase,
            recording: s.recording.is_some(),
            force,
            frame,
        };
        if let Some(message) = error {
            self.send(ServerMessage::Error { seq: None, message });
        }
        self.send(ServerMessage::StateUpdate(update));
    }
}

impl Session<'_> {
    fn steps_start(&mut self, variant: Variant, peg: usize) {
        let h = [self.grip[0].as_h(), self.grip[1].as_h()];
        self.recording = Some(Recording {
            variant,
            peg,
            steps: vec![TrajectoryStep::from_scene(0, self.cmd, h, &self.sim.state)],
        });
    }
}
