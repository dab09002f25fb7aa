//! Convolutional autoencoder that compresses a rendered frame to a short latent vector.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{FlsError, Result};
use crate::nn::{
    Adam, BatchNorm, Conv2d, ConvTranspose2d, Flatten, Linear, Param, Relu, Reshape, Sequential, Sigmoid,
    Tensor,
};
use crate::scene::{Frame, FRAME_HEIGHT, FRAME_WIDTH};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AutoencoderSpec {
    /// Input channels, height, width.
    pub input: [usize; 3],
    /// Output channels of each stride-2 convolution.
    pub channels: Vec<usize>,
    pub hidden: usize,
    pub latent: usize,
}

impl Default for AutoencoderSpec {
    fn default() -> Self {
        Self {
            input: [3, FRAME_HEIGHT, FRAME_WIDTH],
            channels: vec![8, 16, 16, 32, 32],
            hidden: 1024,
            latent: 12,
        }
    }
}

impl AutoencoderSpec {
    /// Spatial sizes from the input down to the innermost feature map.
    pub fn spatial_chain(&self) -> Vec<(usize, usize)> {
        let mut out = vec![(self.input[1], self.input[2])];
        for _ in &self.channels {
            let (h, w) = *out.last().expect("non-empty");
            out.push(((h + 1) / 2, (w + 1) / 2));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.hidden == 0 || self.latent == 0 || self.input.contains(&0) {
            return Err(FlsError::InvalidConfig(format!("autoencoder spec {self:?}")));
        }
        Ok(())
    }
}

/// Stride-2 convolutions with batch normalization and rectifiers down to a
/// linear bottleneck; the decoder mirrors it with transposed convolutions and
/// ends in a logistic output.
#[derive(Debug)]
pub struct Autoencoder {
    pub spec: AutoencoderSpec,
    pub encoder: Sequential,
    pub decoder: Sequential,
}

impl Autoencoder {
    pub fn new(spec: AutoencoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let chain = spec.spatial_chain();
        let (ih, iw) = *chain.last().expect("non-empty");
        let inner_c = *spec.channels.last().expect("non-empty");
        let flat = inner_c * ih * iw;

        let mut enc = Sequential::new();
        let mut cin = spec.input[0];
        for (i, &c) in spec.channels.iter().enumerate() {
            enc.push(Conv2d::new(&format!("enc.conv{i}"), cin, c, 3, 2, 1, &mut rng));
            enc.push(BatchNorm::new(&format!("enc.bn{i}"), c));
            enc.push(Relu::default());
            cin = c;
        }
        enc.push(Flatten::default());
        enc.push(Linear::new("enc.fc0", flat, spec.hidden, &mut rng));
        enc.push(BatchNorm::new("enc.bnfc0", spec.hidden));
        enc.push(Relu::default());
        enc.push(Linear::new("enc.fc1", spec.hidden, spec.latent, &mut rng));

        let mut dec = Sequential::new();
        dec.push(Linear::new("dec.fc0", spec.latent, spec.hidden, &mut rng));
        dec.push(BatchNorm::new("dec.bnfc0", spec.hidden));
        dec.push(Relu::default());
        dec.push(Linear::new("dec.fc1", spec.hidden, flat, &mut rng));
        dec.push(BatchNorm::new("dec.bnfc1", flat));
        dec.push(Relu::default());
        dec.push(Reshape {
            dims: vec![inner_c, ih, iw],
        });
        let n = spec.channels.len();
        for i in (0..n).rev() {
            let cin = spec.channels[i];
            let last = i == 0;
            let cout = if last { spec.input[0] } else { spec.channels[i - 1] };
            let (from, to) = (chain[i + 1], chain[i]);
            let pad_h = to.0 + 1 - 2 * from.0;
            let pad_w = to.1 + 1 - 2 * from.1;
            if pad_h != pad_w {
                return Err(FlsError::InvalidConfig(format!(
                    "autoencoder input {:?} needs unequal output padding",
                    spec.input
                )));
            }
            dec.push(ConvTranspose2d::new(&format!("dec.deconv{i}"), cin, cout, 3, 2, 1, pad_h, &mut rng));
            if last {
                dec.push(Sigmoid::default());
            } else {
                dec.push(BatchNorm::new(&format!("dec.bn{i}"), cout));
                dec.push(Relu::default());
            }
        }
        Ok(Self {
            spec,
            encoder: enc,
            decoder: dec,
        })
    }

    pub fn input_len(&self) -> usize {
        self.spec.input.iter().product()
    }

    fn batch_tensor(&self, images: &[&[f64]]) -> Tensor {
        let mut shape = vec![images.len()];
        shape.extend(self.spec.input);
        let mut data = Vec::with_capacity(images.len() * self.input_len());
        for im in images {
            assert_eq!(im.len(), self.input_len(), "image size");
            data.extend_from_slice(im);
        }
        Tensor::from_vec(&shape, data)
    }

    /// Latent vectors in inference mode, one row per image.
    pub fn encode(&mut self, images: &[&[f64]]) -> Tensor {
        let x = self.batch_tensor(images);
        self.encoder.forward(&x, false)
    }

    pub fn decode(&mut self, z: &Tensor) -> Tensor {
        self.decoder.forward(z, false)
    }

    pub fn reconstruct(&mut self, images: &[&[f64]], train: bool) -> Tensor {
        let x = self.batch_tensor(images);
        let z = self.encoder.forward(&x, train);
        self.decoder.forward(&z, train)
    }

    /// Mean squared reconstruction error; with `train` also accumulates gradients.
    pub fn loss(&mut self, images: &[&[f64]], train: bool) -> f64 {
        let x = self.batch_tensor(images);
        let z = self.encoder.forward(&x, train);
        let y = self.decoder.forward(&z, train);
        let n = y.len() as f64;
        let mut loss = 0.0;
        let mut dy = vec![0.0; y.len()];
        for ((d, a), b) in dy.iter_mut().zip(&y.data).zip(&x.data) {
            let e = a - b;
            loss += e * e;
            *d = 2.0 * e / n;
        }
        if train {
            let g = self.decoder.backward(&Tensor::from_vec(&y.shape, dy));
            self.encoder.backward(&g);
        }
        loss / n
    }

    pub fn params(&self) -> Vec<&Param> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.encoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }
}

/// Network input for a frame: the 8-bit camera image scaled to [0, 1], channel-major.
pub fn frame_input(frame: &Frame) -> Vec<f64> {
    rgb8_input(&frame.to_rgb8(), frame.width(), frame.height())
}

pub fn rgb8_input(rgb: &[u8], width: usize, height: usize) -> Vec<f64> {
    let plane = width * height;
    let mut out = vec![0.0; plane * 3];
    for (i, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + i] = px[c] as f64 / 255.0;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AeTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for AeTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            lr: 1e-3,
            holdout_fraction: 0.1,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub holdout_loss: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AeReport {
    pub initial_holdout_loss: f64,
    pub epochs: Vec<AeEpoch>,
    pub train_frames: usize,
    pub holdout_frames: usize,
}

fn holdout_loss(ae: &mut Autoencoder, images: &[Vec<f64>], idx: &[usize], batch: usize) -> f64 {
    let mut total = 0.0;
    for chunk in idx.chunks(batch.max(1)) {
        let refs: Vec<&[f64]> = chunk.iter().map(|&i| images[i].as_slice()).collect();
        total += ae.loss(&refs, false) * chunk.len() as f64;
    }
    total / idx.len().max(1) as f64
}

/// Trains on `images` (network inputs from [`frame_input`]); the last
/// `holdout_fraction` of a seeded shuffle is held out.
pub fn train_autoencoder(
    images: &[Vec<f64>],
    spec: AutoencoderSpec,
    cfg: &AeTrainConfig,
    model_seed: u64,
) -> Result<(Autoencoder, AeReport)> {
    if images.len() < 2 || cfg.batch_size < 2 {
        return Err(FlsError::InvalidInput(format!(
            "autoencoder training needs at least 2 frames and batch size 2, got {} and {}",
            images.len(),
            cfg.batch_size
        )));
    }
    let mut ae = Autoencoder::new(spec, model_seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..images.len()).collect();
    order.shuffle(&mut rng);
    let n_hold = ((images.len() as f64 * cfg.holdout_fraction).round() as usize).clamp(1, images.len() - 1);
    let (train_idx, hold_idx) = order.split_at(images.len() - n_hold);
    let mut train_idx = train_idx.to_vec();
    let hold_idx = hold_idx.to_vec();

    let initial = holdout_loss(&mut ae, images, &hold_idx, cfg.batch_size);
    let mut opt = Adam::new(cfg.lr);
    let mut report = AeReport {
        initial_holdout_loss: initial,
        epochs: Vec::new(),
        train_frames: train_idx.len(),
        holdout_frames: hold_idx.len(),
    };
    for epoch in 0..cfg.epochs {
        let t0 = std::time::Instant::now();
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        let mut seen = 0usize;
        for (b, chunk) in train_idx.chunks(cfg.batch_size).enumerate() {
            // A batch of one has no batch statistics.
            if chunk.len() < 2 {
                continue;
            }
            let refs: Vec<&[f64]> = chunk.iter().map(|&i| images[i].as_slice()).collect();
            ae.zero_grad();
            let loss = ae.loss(&refs, true);
            if !loss.is_finite() {
                let bad = ae
                    .params()
                    .iter()
                    .find(|p| p.grad.iter().any(|g| !g.is_finite()))
                    .map(|p| p.name.clone())
                    .unwrap_or_else(|| "output".into());
                return Err(FlsError::Diverged(format!(
                    "autoencoder loss non-finite at epoch {epoch}, batch {b}, first bad tensor {bad}"
                )));
            }
            opt.step(&mut ae.params_mut());
            total += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let hold = holdout_loss(&mut ae, images, &hold_idx, cfg.batch_size);
        let e = AeEpoch {
            epoch,
            train_loss: total / seen.max(1) as f64,
            holdout_loss: hold,
            seconds: t0.elapsed().as_secs_f64(),
        };
        log::info!(
            "ae epoch {} train {:.5} holdout {:.5} ({:.1}s)",
            e.epoch,
            e.train_loss,
            e.holdout_loss,
            e.seconds
        );
        report.epochs.push(e);
    }
    Ok((ae, report))
}
