//! Affine concept interventions: erasure, moment-matching steering, and
//! steering with an extra push along the class-mean difference.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader};
use crate::data::{stratified_split, LabeledEmbeddingSet};
use crate::error::{Error, Result};
use crate::linalg::{self, compute_moments, default_ridge, norm, sub_vec, Matrix};
use crate::probe::{self, ProbeConfig};

const MAGIC: &[u8; 4] = b"CFIV";
const VERSION: u16 = 1;

/// Default push strength for [`fit_mimic_plus`].
pub const DEFAULT_ALPHA: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Erase,
    Mimic,
    MimicPlus,
}

impl Kind {
    fn code(self) -> u8 {
        match self {
            Kind::Erase => 0,
            Kind::Mimic => 1,
            Kind::MimicPlus => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Kind::Erase),
            1 => Ok(Kind::Mimic),
            2 => Ok(Kind::MimicPlus),
            _ => Err(Error::Format(format!("unknown intervention kind {c}"))),
        }
    }

    pub fn is_steering(self) -> bool {
        self != Kind::Erase
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Erase => "erase",
            Kind::Mimic => "mimic",
            Kind::MimicPlus => "mimic_plus",
        })
    }
}

impl FromStr for Kind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "erase" | "leace" => Ok(Kind::Erase),
            "mimic" => Ok(Kind::Mimic),
            "mimic_plus" | "mimic+" | "mimic-plus" => Ok(Kind::MimicPlus),
            _ => Err(Error::Parameter(format!("unknown intervention kind {s:?}"))),
        }
    }
}

/// `x ↦ A·x + b`, plus the bookkeeping needed to apply and audit it.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineIntervention {
    pub kind: Kind,
    pub a: Matrix,
    pub b: Vec<f64>,
    /// Zero for erase and mimic.
    pub alpha: f64,
    /// Class whose rows are moved; `None` for erase.
    pub source_class: Option<u8>,
    /// Fitted means of class 0 and class 1.
    pub fitted_means: [Vec<f64>; 2],
}

impl AffineIntervention {
    /// The identity map, tagged as an erasure so it applies to every row.
    pub fn identity(dim: usize) -> Self {
        Self {
            kind: Kind::Erase,
            a: Matrix::identity(dim),
            b: vec![0.0; dim],
            alpha: 0.0,
            source_class: None,
            fitted_means: [vec![0.0; dim], vec![0.0; dim]],
        }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// `μ_target − μ_source` for steering kinds.
    pub fn steering_vector(&self) -> Option<Vec<f64>> {
        let s = self.source_class? as usize;
        Some(sub_vec(&self.fitted_means[1 - s], &self.fitted_means[s]))
    }

    /// Applies the map to one vector, ignoring labels.
    pub fn map(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = self.a.matvec(x)?;
        for (v, b) in y.iter_mut().zip(&self.b) {
            *v += b;
        }
        Ok(y)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.dim();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[self.kind.code(), self.source_class.unwrap_or(255)])?;
        w.write_all(&(d as u32).to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        binio::write_f64s(&mut w, self.a.data())?;
        binio::write_f64s(&mut w, &self.b)?;
        binio::write_f64s(&mut w, &self.fitted_means[0])?;
        binio::write_f64s(&mut w, &self.fitted_means[1])?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut r = Reader::new(r);
        r.magic(MAGIC)?;
        r.version(VERSION)?;
        let kind = Kind::from_code(r.u8()?)?;
        let source_class = match r.u8()? {
            255 => None,
            c @ (0 | 1) => Some(c),
            c => return Err(Error::Format(format!("invalid source class {c}"))),
        };
        if kind.is_steering() != source_class.is_some() {
            return Err(Error::Format(format!("kind {kind} with source class {source_class:?}")));
        }
        let d = r.u32()? as usize;
        let alpha = r.f64()?;
        let a = Matrix::new(d, d, r.f64s(d * d)?).map_err(|e| Error::Format(e.to_string()))?;
        let b = r.f64s(d)?;
        let m0 = r.f64s(d)?;
        let m1 = r.f64s(d)?;
        r.finish()?;
        Ok(Self { kind, a, b, alpha, source_class, fitted_means: [m0, m1] })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

fn require_classes(data: &LabeledEmbeddingSet, min: usize) -> Result<()> {
    for c in 0..2u8 {
        let n = data.count(c);
        if n == 0 {
            return Err(Error::MissingClass(c));
        }
        if n < min {
            return Err(Error::DegenerateSample(format!("class {c} has {n} rows, need {min}")));
        }
    }
    Ok(())
}

/// Least-squares concept erasure for a binary label.
///
/// With `σ = Cov(x, z)` and total covariance `Σ`, the map is
/// `A = I − σ uᵀ / (σᵀu)` with `u = Σ⁻¹σ`, and `b = μ − Aμ`. It equalizes the
/// class means exactly, is idempotent, and among label-free affine erasers
/// moves points the least in the Σ⁻¹ geometry.
pub fn fit_erase(data: &LabeledEmbeddingSet) -> Result<AffineIntervention> {
    require_classes(data, 2)?;
    let x = &data.embeddings;
    let d = x.cols();
    let total = compute_moments(x, &vec![true; x.rows()])?;
    let m0 = compute_moments(x, &data.mask(0))?.mean;
    let m1 = compute_moments(x, &data.mask(1))?.mean;

    let n = x.rows() as f64;
    let zbar = data.count(1) as f64 / n;
    let mut sigma = vec![0.0; d];
    for (row, &z) in x.iter_rows().zip(&data.z) {
        let dz = z as f64 - zbar;
        for j in 0..d {
            sigma[j] += (row[j] - total.mean[j]) * dz;
        }
    }
    sigma.iter_mut().for_each(|v| *v /= n);

    let ridge = default_ridge(&total.covariance);
    let inv = linalg::psd_inverse(&total.covariance, ridge)?;
    let u = inv.matvec(&sigma)?;
    let whitened_sq = linalg::dot(&sigma, &u);
    if !(whitened_sq.max(0.0).sqrt() >= 1e-10) {
        let mut id = AffineIntervention::identity(d);
        id.fitted_means = [m0, m1];
        return Ok(id);
    }
    let mut a = Matrix::identity(d);
    for i in 0..d {
        for j in 0..d {
            let v = a.get(i, j) - sigma[i] * u[j] / whitened_sq;
            a.set(i, j, v);
        }
    }
    let am = a.matvec(&total.mean)?;
    let b = sub_vec(&total.mean, &am);
    Ok(AffineIntervention { kind: Kind::Erase, a, b, alpha: 0.0, source_class: None, fitted_means: [m0, m1] })
}

/// Gaussian optimal-transport map taking the source class moments onto the
/// target class moments.
pub fn fit_mimic(data: &LabeledEmbeddingSet, source_class: u8) -> Result<AffineIntervention> {
    fit_steering(data, source_class, 0.0, Kind::Mimic)
}

/// [`fit_mimic`] followed by a shift of `alpha · (μ_target − μ_source)`.
pub fn fit_mimic_plus(data: &LabeledEmbeddingSet, source_class: u8, alpha: f64) -> Result<AffineIntervention> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Parameter(format!("alpha must be a positive number, got {alpha}")));
    }
    fit_steering(data, source_class, alpha, Kind::MimicPlus)
}

fn fit_steering(data: &LabeledEmbeddingSet, source: u8, alpha: f64, kind: Kind) -> Result<AffineIntervention> {
    if source > 1 {
        return Err(Error::Parameter(format!("source class {source} is not 0 or 1")));
    }
    let d = data.dim();
    require_classes(data, d + 1)?;
    let target = 1 - source;
    let ms = compute_moments(&data.embeddings, &data.mask(source))?;
    let mt = compute_moments(&data.embeddings, &data.mask(target))?;
    if !(ms.covariance.trace() > 0.0) {
        return Err(Error::Conditioning(format!("class {source} has zero variance")));
    }
    let ridge = default_ridge(&ms.covariance);
    let (root, inv_root) = linalg::psd_sqrt_pair(&ms.covariance, ridge)?;
    let inner = root.matmul(&mt.covariance)?.matmul(&root)?;
    let mid = linalg::psd_sqrt(&symmetrized(&inner))?;
    let mut a = inv_root.matmul(&mid)?.matmul(&inv_root)?;
    a = symmetrized(&a);
    if a.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Conditioning("transport map is not finite".into()));
    }
    let a_ms = a.matvec(&ms.mean)?;
    let b: Vec<f64> = (0..d)
        .map(|i| mt.mean[i] - a_ms[i] + alpha * (mt.mean[i] - ms.mean[i]))
        .collect();
    let mut means = [Vec::new(), Vec::new()];
    means[source as usize] = ms.mean;
    means[target as usize] = mt.mean;
    Ok(AffineIntervention { kind, a, b, alpha, source_class: Some(source), fitted_means: means })
}

fn symmetrized(m: &Matrix) -> Matrix {
    let t = m.transpose();
    m.add(&t).expect("same shape").scale(0.5)
}

/// Applies the intervention row-wise.
///
/// Erasure maps every row. Steering kinds map only rows labeled with the
/// source class and pass the rest through.
pub fn apply(iv: &AffineIntervention, embeddings: &Matrix, labels: Option<&[u8]>) -> Result<Matrix> {
    if embeddings.cols() != iv.dim() {
        return Err(Error::Shape(format!(
            "intervention has dimension {}, embeddings have {}",
            iv.dim(),
            embeddings.cols()
        )));
    }
    let select: Vec<bool> = match (iv.kind, iv.source_class) {
        (Kind::Erase, _) => vec![true; embeddings.rows()],
        (_, Some(s)) => {
            let labels = labels.ok_or(Error::MissingLabels)?;
            if labels.len() != embeddings.rows() {
                return Err(Error::Shape(format!("{} labels for {} rows", labels.len(), embeddings.rows())));
            }
            labels.iter().map(|&l| l == s).collect()
        }
        (_, None) => return Err(Error::Parameter("steering intervention without source class".into())),
    };
    let idx: Vec<usize> = (0..select.len()).filter(|&i| select[i]).collect();
    let mut out = embeddings.clone();
    if idx.is_empty() {
        return Ok(out);
    }
    let mapped = embeddings.select_rows(&idx).to_na() * iv.a.to_na().transpose();
    let bias = DVector::from_column_slice(&iv.b);
    for (r, &i) in idx.iter().enumerate() {
        let row = out.row_mut(i);
        for j in 0..row.len() {
            row[j] = mapped[(r, j)] + bias[j];
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterventionReport {
    pub kind: Kind,
    pub probe_accuracy_before: f64,
    pub probe_accuracy_after: f64,
    pub majority_rate: f64,
    pub mean_gap_after: f64,
    /// Frobenius norm of the class covariance difference.
    pub cov_gap_after: f64,
    /// `cov_gap_after / ‖Σ_target‖_F` for steering kinds, `/ ‖Σ_1‖_F` for erasure.
    pub cov_gap_relative: f64,
    /// Ridge used by the fit on this data (`1e-8·trace/D` of the covariance
    /// the fit inverts).
    pub ridge: f64,
}

/// Retrains a concept probe before and after the intervention on a
/// stratified 80/20 split and reports held-out accuracies and moment gaps.
pub fn audit(iv: &AffineIntervention, data: &LabeledEmbeddingSet) -> Result<InterventionReport> {
    audit_with(iv, data, &ProbeConfig::default())
}

pub fn audit_with(iv: &AffineIntervention, data: &LabeledEmbeddingSet, cfg: &ProbeConfig) -> Result<InterventionReport> {
    require_classes(data, 2)?;
    let (train, test) = stratified_split(&data.z, 0.8, cfg.seed);
    let held_z: Vec<u8> = test.iter().map(|&i| data.z[i]).collect();
    let accuracy = |x: &Matrix| -> Result<f64> {
        let tr = data.select(&train);
        let p = probe::train_concept_probe(&x.select_rows(&train), &tr.z, cfg)?;
        let pred = p.predict_labels(&x.select_rows(&test))?;
        let hits = pred.iter().zip(&held_z).filter(|(p, z)| **p == z.to_string()).count();
        Ok(hits as f64 / test.len().max(1) as f64)
    };
    let before = accuracy(&data.embeddings)?;
    let moved = apply(iv, &data.embeddings, Some(&data.z))?;
    let after = accuracy(&moved)?;
    let m0 = compute_moments(&moved, &data.mask(0))?;
    let m1 = compute_moments(&moved, &data.mask(1))?;
    let cov_gap = m0.covariance.sub(&m1.covariance)?.frobenius();
    let reference = match iv.source_class {
        Some(s) => if s == 0 { &m1 } else { &m0 },
        None => &m1,
    };
    let ridge = match iv.source_class {
        Some(s) => default_ridge(&compute_moments(&data.embeddings, &data.mask(s))?.covariance),
        None => default_ridge(&compute_moments(&data.embeddings, &vec![true; data.len()])?.covariance),
    };
    Ok(InterventionReport {
        kind: iv.kind,
        probe_accuracy_before: before,
        probe_accuracy_after: after,
        majority_rate: probe::majority_rate(&held_z),
        mean_gap_after: norm(&sub_vec(&m0.mean, &m1.mean)),
        cov_gap_after: cov_gap,
        cov_gap_relative: cov_gap / reference.covariance.frobenius().max(f64::MIN_POSITIVE),
        ridge,
    })
}
