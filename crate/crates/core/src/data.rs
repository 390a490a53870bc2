//! Labeled embedding sets and seeded Gaussian fixtures.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// N×D embeddings with a binary concept label per row and optional task labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledEmbeddingSet {
    pub embeddings: Matrix,
    pub z: Vec<u8>,
    pub y: Option<Vec<String>>,
}

impl LabeledEmbeddingSet {
    pub fn new(embeddings: Matrix, z: Vec<u8>, y: Option<Vec<String>>) -> Result<Self> {
        if z.len() != embeddings.rows() {
            return Err(Error::Shape(format!("{} labels for {} rows", z.len(), embeddings.rows())));
        }
        if let Some(bad) = z.iter().find(|&&v| v > 1) {
            return Err(Error::Parameter(format!("concept label {bad} is not 0 or 1")));
        }
        if let Some(y) = &y {
            if y.len() != z.len() {
                return Err(Error::Shape(format!("{} task labels for {} rows", y.len(), z.len())));
            }
        }
        Ok(Self { embeddings, z, y })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.embeddings.cols()
    }

    pub fn mask(&self, class: u8) -> Vec<bool> {
        self.z.iter().map(|&v| v == class).collect()
    }

    pub fn count(&self, class: u8) -> usize {
        self.z.iter().filter(|&&v| v == class).count()
    }

    /// Subset by row index, keeping order.
    pub fn select(&self, idx: &[usize]) -> Self {
        Self {
            embeddings: self.embeddings.select_rows(idx),
            z: idx.iter().map(|&i| self.z[i]).collect(),
            y: self.y.as_ref().map(|y| idx.iter().map(|&i| y[i].clone()).collect()),
        }
    }
}

/// Parameters of a two-class Gaussian fixture.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    pub dim: usize,
    pub per_class: usize,
    /// Euclidean distance between the two class means.
    pub separation: f64,
    /// Whether the classes get independent covariances (otherwise shared).
    pub distinct_covariances: bool,
    pub seed: u64,
}

impl Default for GaussianSpec {
    fn default() -> Self {
        Self { dim: 64, per_class: 4000, separation: 8.0, distinct_covariances: true, seed: 0 }
    }
}

/// Two Gaussian classes with random full covariances `BBᵀ/D + 0.1·I`.
///
/// Rows are interleaved (class 0, class 1, ...) so any prefix is balanced.
pub fn gaussian_two_class(spec: &GaussianSpec) -> LabeledEmbeddingSet {
    let d = spec.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let factor = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..d * d).map(|_| rng.sample::<f64, _>(StandardNormal) / (d as f64).sqrt()).collect()
    };
    let b0 = factor(&mut rng);
    let b1 = if spec.distinct_covariances { factor(&mut rng) } else { b0.clone() };
    let mut dir: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let n = crate::linalg::norm(&dir).max(f64::MIN_POSITIVE);
    dir.iter_mut().for_each(|v| *v *= spec.separation / n);
    let offset: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();

    let mut data = Vec::with_capacity(2 * spec.per_class * d);
    let mut z = Vec::with_capacity(2 * spec.per_class);
    let mut g = vec![0.0; d];
    for _ in 0..spec.per_class {
        for class in 0..2u8 {
            let b = if class == 0 { &b0 } else { &b1 };
            for v in g.iter_mut() {
                *v = rng.sample(StandardNormal);
            }
            let iso: Vec<f64> = (0..d).map(|_| 0.1f64.sqrt() * rng.sample::<f64, _>(StandardNormal)).collect();
            for i in 0..d {
                let mut x = offset[i] + iso[i];
                for j in 0..d {
                    x += b[i * d + j] * g[j];
                }
                if class == 1 {
                    x += dir[i];
                }
                data.push(x);
            }
            z.push(class);
        }
    }
    let embeddings = Matrix::new(2 * spec.per_class, d, data).expect("finite by construction");
    LabeledEmbeddingSet::new(embeddings, z, None).expect("consistent by construction")
}

/// Seeded stratified split: `train_frac` of each class goes to the first set.
pub fn stratified_split(z: &[u8], train_frac: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    use rand::seq::SliceRandom;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    let mut labels: Vec<u8> = z.to_vec();
    labels.sort_unstable();
    labels.dedup();
    for c in labels {
        let mut idx: Vec<usize> = (0..z.len()).filter(|&i| z[i] == c).collect();
        idx.shuffle(&mut rng);
        let k = (idx.len() as f64 * train_frac).round() as usize;
        train.extend_from_slice(&idx[..k]);
        test.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    (train, test)
}
