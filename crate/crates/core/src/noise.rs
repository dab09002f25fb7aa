//! Gaussian input noise shaped like the step-to-step motion of the corpus.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{FlsError, Result};

/// Eigenvalues below this are treated as zero.
pub const EIGEN_FLOOR: f64 = 1e-12;

/// Sample covariance of consecutive-step differences pooled over all sequences.
pub fn difference_covariance(seqs: &[Vec<Vec<f64>>]) -> Result<DMatrix<f64>> {
    let dim = seqs
        .iter()
        .flat_map(|s| s.first())
        .map(|v| v.len())
        .next()
        .ok_or_else(|| FlsError::InvalidInput("empty corpus".into()))?;
    let mut diffs: Vec<DVector<f64>> = Vec::new();
    for s in seqs {
        for w in s.windows(2) {
            if w[0].len() != dim || w[1].len() != dim {
                return Err(FlsError::Dimension {
                    what: "sequence step",
                    expected: dim,
                    got: w[1].len().min(w[0].len()),
                });
            }
            diffs.push(DVector::from_iterator(dim, w[1].iter().zip(&w[0]).map(|(a, b)| a - b)));
        }
    }
    if diffs.len() < 2 {
        return Err(FlsError::InvalidInput(
            "need at least two step differences for a covariance".into(),
        ));
    }
    let n = diffs.len() as f64;
    let mean = diffs.iter().fold(DVector::zeros(dim), |acc, d| acc + d) / n;
    let mut cov = DMatrix::zeros(dim, dim);
    for d in &diffs {
        let c = d - &mean;
        cov += &c * c.transpose();
    }
    Ok(cov / (n - 1.0))
}

/// Zero-mean multivariate normal with covariance `scale² Σ`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    factor: DMatrix<f64>,
}

impl NoiseModel {
    pub fn new(sigma: &DMatrix<f64>, scale: f64) -> Result<Self> {
        if !sigma.is_square() || !sigma.iter().all(|v| v.is_finite()) || !(scale >= 0.0) {
            return Err(FlsError::InvalidInput("noise covariance must be square and finite".into()));
        }
        let sym = (sigma + sigma.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym);
        let roots = eig
            .eigenvalues
            .map(|l| if l < EIGEN_FLOOR { 0.0 } else { l.sqrt() * scale });
        let factor = &eig.eigenvectors * DMatrix::from_diagonal(&roots);
        Ok(Self { factor })
    }

    pub fn dim(&self) -> usize {
        self.factor.nrows()
    }

    /// Covariance actually realized by the factor.
    pub fn covariance(&self) -> DMatrix<f64> {
        &self.factor * self.factor.transpose()
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> DVector<f64> {
        let z = DVector::from_iterator(self.dim(), (0..self.dim()).map(|_| rng.sample::<f64, _>(StandardNormal)));
        &self.factor * z
    }

    /// Adds one independent draw to every step of every sequence.
    pub fn perturb<R: Rng>(&self, seqs: &[Vec<Vec<f64>>], rng: &mut R) -> Vec<Vec<Vec<f64>>> {
        seqs.iter()
            .map(|s| {
                s.iter()
                    .map(|v| {
                        let n = self.sample(rng);
                        v.iter().zip(n.iter()).map(|(a, b)| a + b).collect()
                    })
                    .collect()
            })
            .collect()
    }
}

/// Noise with covariance `scale² Σ`, Σ taken from the batch itself.
pub fn augment_noise(batch: &[Vec<Vec<f64>>], scale: f64, seed: u64) -> Result<Vec<Vec<Vec<f64>>>> {
    if scale == 0.0 {
        return Ok(batch.to_vec());
    }
    let sigma = difference_covariance(batch)?;
    let model = NoiseModel::new(&sigma, scale)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(model.perturb(batch, &mut rng))
}
