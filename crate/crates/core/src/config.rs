//! Run configuration loaded from TOML; every stochastic stage takes its seed from here.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autoencoder::{AeTrainConfig, AutoencoderSpec};
use crate::error::{FlsError, Result};
use crate::ik::IkSettings;
use crate::phase::TransitionConfig;
use crate::policy::ExecConfig;
use crate::rnnpb::{RnnTrainConfig, RnnpbSpec};
use crate::scene::SceneGeometry;
use crate::sim::RigConfig;
use crate::teacher::{StyleRanges, TeacherConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// Full-width recurrent model.
    Paper,
    /// Narrow recurrent model for quick runs.
    #[default]
    Desk,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Paper => "paper",
            Profile::Desk => "desk",
        }
    }

    pub fn rnnpb_spec(self, n_p: usize) -> RnnpbSpec {
        match self {
            Profile::Paper => RnnpbSpec::paper(n_p),
            Profile::Desk => RnnpbSpec::desk(n_p),
        }
    }
}

impl std::str::FromStr for Profile {
    type Err = FlsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            _ => Err(FlsError::InvalidConfig(format!("unknown profile '{s}' (paper|desk)"))),
        }
    }
}

/// Per-stage seeds. Derived from the master seed unless given explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub styles: u64,
    pub ae_init: u64,
    pub ae_shuffle: u64,
    pub rnn_init: u64,
    pub rnn_noise: u64,
    pub eval: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Seeds {
    pub fn from_master(master: u64) -> Self {
        // Kept below 2^32 so they survive any text round trip.
        let d = |tag: u64| splitmix(master.wrapping_mul(0x100).wrapping_add(tag)) >> 32;
        Self {
            styles: d(1),
            ae_init: d(2),
            ae_shuffle: d(3),
            rnn_init: d(4),
            rnn_noise: d(5),
            eval: d(6),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub pegs: usize,
    pub trials: usize,
    /// Start tips are displaced uniformly within this many mm per axis.
    pub start_offset: f64,
    pub pca_dims: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pegs: 3,
            trials: 5,
            start_offset: 2.0,
            pca_dims: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub addr: String,
    pub tick_hz: f64,
    /// A rendered frame goes out with every n-th state update.
    pub frame_every: usize,
}

impl Default for ServeConfig {
    fn default() -> Self {
        Self {
            addr: "127.0.0.1:8765".into(),
            tick_hz: 10.0,
            frame_every: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub profile: Profile,
    pub exemplary_peg: usize,
    pub demos_per_variant: usize,
    /// Every n-th demonstration frame goes into the autoencoder corpus.
    pub frame_stride: usize,
    pub n_p: usize,
    /// Feedback force gain, N/mm.
    pub kp: f64,
    pub seeds: Option<Seeds>,
    pub rig: RigConfig,
    pub scene: SceneGeometry,
    pub ik: IkSettings,
    pub teacher: TeacherConfig,
    pub styles: StyleRanges,
    pub transitions: TransitionConfig,
    pub autoencoder: AutoencoderSpec,
    pub ae_train: AeTrainConfig,
    pub rnn_train: RnnTrainConfig,
    pub execution: ExecConfig,
    pub eval: EvalConfig,
    pub serve: ServeConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            profile: Profile::Desk,
            exemplary_peg: 1,
            demos_per_variant: 12,
            frame_stride: 3,
            n_p: 2,
            kp: 0.5,
            seeds: None,
            rig: RigConfig::default(),
            scene: SceneGeometry::default(),
            ik: IkSettings::default(),
            teacher: TeacherConfig::default(),
            styles: StyleRanges::default(),
            transitions: TransitionConfig::default(),
            autoencoder: AutoencoderSpec::default(),
            ae_train: AeTrainConfig {
                epochs: 12,
                batch_size: 16,
                lr: 3e-3,
                ..AeTrainConfig::default()
            },
            rnn_train: RnnTrainConfig {
                epochs: 3000,
                lr: 4e-3,
                pb_decay: 1e-3,
                ..RnnTrainConfig::default()
            },
            execution: ExecConfig::default(),
            eval: EvalConfig::default(),
            serve: ServeConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| FlsError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| FlsError::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn seeds(&self) -> Seeds {
        self.seeds.unwrap_or_else(|| Seeds::from_master(self.seed))
    }

    /// Replaces the master seed; explicit per-stage seeds are dropped.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.seeds = None;
        self
    }

    pub fn rnnpb_spec(&self) -> RnnpbSpec {
        self.profile.rnnpb_spec(self.n_p)
    }

    pub fn validate(&self) -> Result<()> {
        self.teacher.validate()?;
        self.transitions.validate()?;
        self.autoencoder.validate()?;
        self.rnnpb_spec().validate()?;
        let bad = |m: &str| Err(FlsError::InvalidConfig(m.to_string()));
        if self.exemplary_peg > 2 {
            return bad("exemplary_peg must be 0, 1 or 2");
        }
        if self.demos_per_variant < 2 {
            return bad("demos_per_variant must be at least 2");
        }
        if !(self.kp >= 0.0) {
            return bad("kp must be non-negative");
        }
        if self.frame_stride == 0 {
            return bad("frame_stride must be positive");
        }
        if self.eval.pegs == 0 || self.eval.pegs > 3 || self.eval.trials == 0 {
            return bad("eval needs 1 to 3 pegs and at least one trial");
        }
        if !(self.eval.start_offset >= 0.0) {
            return bad("eval.start_offset must be non-negative");
        }
        if !(self.serve.tick_hz > 0.0) || self.serve.frame_every == 0 {
            return bad("serve.tick_hz and serve.frame_every must be positive");
        }
        Ok(())
    }
}
