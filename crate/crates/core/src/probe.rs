//! Multinomial logistic-regression probes trained by full-batch gradient descent.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

const MAGIC: &[u8; 4] = b"CFPR";
const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    /// Optimize over per-column standardized features, then fold the scaling
    /// back into the raw-space weights.
    pub standardize: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { epochs: 500, learning_rate: 0.1, l2: 1e-4, seed: 0, standardize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

/// `K` linear score functions over `D` features; prediction is the argmax.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub classes: Vec<String>,
    pub training_meta: TrainingMeta,
}

/// Regularized cross-entropy and its gradient.
///
/// `loss = -mean(log softmax(xW' + b)[y]) + l2/2 * |W|²`; the bias is not
/// penalized. Returns `(loss, dW, db)` with `dW` shaped like `w` (K×D).
pub fn loss_and_grad(
    x: &Matrix,
    y: &[usize],
    w: &Matrix,
    b: &[f64],
    l2: f64,
) -> Result<(f64, Matrix, Vec<f64>)> {
    let (loss, gw, gb) = loss_and_grad_na(&x.to_na(), y, &w.to_na(), b, l2)?;
    Ok((loss, Matrix::from_na(&gw), gb))
}

fn loss_and_grad_na(
    x: &DMatrix<f64>,
    y: &[usize],
    w: &DMatrix<f64>,
    b: &[f64],
    l2: f64,
) -> Result<(f64, DMatrix<f64>, Vec<f64>)> {
    let (n, d) = x.shape();
    let k = w.nrows();
    if w.ncols() != d || b.len() != k || y.len() != n {
        return Err(Error::Shape(format!(
            "x {n}x{d}, w {k}x{}, b {}, y {}",
            w.ncols(),
            b.len(),
            y.len()
        )));
    }
    let mut scores = x * w.transpose();
    let mut loss = 0.0;
    for i in 0..n {
        let mut top = f64::NEG_INFINITY;
        for c in 0..k {
            scores[(i, c)] += b[c];
            top = top.max(scores[(i, c)]);
        }
        let mut total = 0.0;
        for c in 0..k {
            let e = (scores[(i, c)] - top).exp();
            scores[(i, c)] = e;
            total += e;
        }
        loss -= (scores[(i, y[i])] / total).ln();
        for c in 0..k {
            scores[(i, c)] /= total;
        }
        scores[(i, y[i])] -= 1.0;
    }
    let nf = n.max(1) as f64;
    loss = loss / nf + 0.5 * l2 * w.iter().map(|v| v * v).sum::<f64>();
    // scores now holds the residual P - Y
    let mut gw = scores.tr_mul(x) / nf;
    gw += w * l2;
    let gb = (0..k).map(|c| scores.column(c).sum() / nf).collect();
    Ok((loss, gw, gb))
}

/// Sorted distinct labels and each row's index into them.
pub fn index_labels<S: AsRef<str>>(targets: &[S]) -> (Vec<String>, Vec<usize>) {
    let mut classes: Vec<String> = targets.iter().map(|t| t.as_ref().to_string()).collect();
    classes.sort();
    classes.dedup();
    let idx = targets
        .iter()
        .map(|t| classes.binary_search_by(|c| c.as_str().cmp(t.as_ref())).expect("present"))
        .collect();
    (classes, idx)
}

/// Trains a probe; see [`train_probe_traced`] for the per-epoch loss.
pub fn train_probe<S: AsRef<str>>(x: &Matrix, targets: &[S], config: &ProbeConfig) -> Result<LinearProbe> {
    train_probe_traced(x, targets, config).map(|(p, _)| p)
}

/// Binary concept probe with classes "0" and "1".
pub fn train_concept_probe(x: &Matrix, z: &[u8], config: &ProbeConfig) -> Result<LinearProbe> {
    let targets: Vec<String> = z.iter().map(|v| v.to_string()).collect();
    train_probe(x, &targets, config)
}

/// Trains a probe and returns the loss after every epoch (entry 0 is the
/// loss at initialization).
///
/// A step that would raise the loss is retried with half the learning rate,
/// so the trace is non-increasing.
pub fn train_probe_traced<S: AsRef<str>>(
    x: &Matrix,
    targets: &[S],
    config: &ProbeConfig,
) -> Result<(LinearProbe, Vec<f64>)> {
    if targets.len() != x.rows() {
        return Err(Error::Shape(format!("{} targets for {} rows", targets.len(), x.rows())));
    }
    if config.epochs == 0 {
        return Err(Error::Parameter("epochs must be >= 1".into()));
    }
    if !(config.learning_rate > 0.0) || !(config.l2 >= 0.0) {
        return Err(Error::Parameter("learning rate must be > 0 and l2 >= 0".into()));
    }
    let (classes, y) = index_labels(targets);
    if classes.len() < 2 {
        return Err(Error::DegenerateTarget(format!("{} distinct class(es)", classes.len())));
    }
    let (n, d) = (x.rows(), x.cols());
    let k = classes.len();

    let (shift, scale) = if config.standardize {
        column_stats(x)
    } else {
        (vec![0.0; d], vec![1.0; d])
    };
    let mut xs = x.to_na();
    for i in 0..n {
        for j in 0..d {
            xs[(i, j)] = (xs[(i, j)] - shift[j]) / scale[j];
        }
    }

    let mut w = DMatrix::<f64>::zeros(k, d);
    let mut b = vec![0.0; k];
    let (mut loss, mut gw, mut gb) = loss_and_grad_na(&xs, &y, &w, &b, config.l2)?;
    let mut trace = vec![loss];
    let mut eta = config.learning_rate;
    for epoch in 0..config.epochs {
        loop {
            let w2 = &w - &gw * eta;
            let b2: Vec<f64> = b.iter().zip(&gb).map(|(v, g)| v - eta * g).collect();
            let (l2, gw2, gb2) = loss_and_grad_na(&xs, &y, &w2, &b2, config.l2)?;
            if !l2.is_finite() {
                return Err(Error::Training(epoch));
            }
            if l2 <= loss {
                (w, b, loss, gw, gb) = (w2, b2, l2, gw2, gb2);
                break;
            }
            eta *= 0.5;
            if eta < 1e-300 {
                break;
            }
        }
        trace.push(loss);
    }

    let mut weights = Matrix::zeros(k, d);
    let mut bias = b;
    for c in 0..k {
        for j in 0..d {
            let v = w[(c, j)] / scale[j];
            weights.set(c, j, v);
            bias[c] -= v * shift[j];
        }
    }
    let training_meta = TrainingMeta {
        epochs: config.epochs,
        learning_rate: config.learning_rate,
        l2: config.l2,
        seed: config.seed,
    };
    Ok((LinearProbe { weights, bias, classes, training_meta }, trace))
}

fn column_stats(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (x.rows().max(1) as f64, x.cols());
    let mut mean = vec![0.0; d];
    for r in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in x.iter_rows() {
        for j in 0..d {
            var[j] += (r[j] - mean[j]).powi(2);
        }
    }
    let sd = var.iter().map(|v| (v / n).sqrt()).map(|s| if s < 1e-12 { 1.0 } else { s }).collect();
    (mean, sd)
}

impl LinearProbe {
    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    /// Raw decision scores, N×K.
    pub fn scores(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.dim() {
            return Err(Error::Shape(format!("probe expects {} features, got {}", self.dim(), x.cols())));
        }
        let mut s = x.matmul(&self.weights.transpose())?;
        for i in 0..s.rows() {
            for (v, b) in s.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(s)
    }

    /// Argmax class index per row; ties go to the lowest index.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        Ok(self.scores(x)?.iter_rows().map(argmax).collect())
    }

    pub fn predict_labels(&self, x: &Matrix) -> Result<Vec<String>> {
        Ok(self.predict(x)?.into_iter().map(|i| self.classes[i].clone()).collect())
    }

    pub fn class_index(&self, label: &str) -> Result<usize> {
        self.classes
            .iter()
            .position(|c| c == label)
            .ok_or_else(|| Error::UnknownLabel(label.to_string()))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let k = self.classes.len();
        let d = self.dim();
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(k as u32).to_le_bytes())?;
        w.write_all(&(d as u32).to_le_bytes())?;
        w.write_all(&(self.training_meta.epochs as u32).to_le_bytes())?;
        w.write_all(&self.training_meta.learning_rate.to_le_bytes())?;
        w.write_all(&self.training_meta.l2.to_le_bytes())?;
        w.write_all(&self.training_meta.seed.to_le_bytes())?;
        binio::write_f64s(&mut w, self.weights.data())?;
        binio::write_f64s(&mut w, &self.bias)?;
        for c in &self.classes {
            w.write_all(&(c.len() as u32).to_le_bytes())?;
            w.write_all(c.as_bytes())?;
        }
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
        let k = r.u32()? as usize;
        let d = r.u32()? as usize;
        let epochs = r.u32()? as usize;
        let learning_rate = r.f64()?;
        let l2 = r.f64()?;
        let seed = r.u64()?;
        let weights = Matrix::new(k, d, r.f64s(k * d)?).map_err(|e| Error::Format(e.to_string()))?;
        let bias = r.f64s(k)?;
        let mut classes = Vec::with_capacity(k);
        for _ in 0..k {
            let len = r.u32()? as usize;
            let bytes = r.bytes(len)?;
            classes.push(String::from_utf8(bytes).map_err(|_| Error::Format("class label is not UTF-8".into()))?);
        }
        r.finish()?;
        Ok(Self { weights, bias, classes, training_meta: TrainingMeta { epochs, learning_rate, l2, seed } })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::read_from(bytes)
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Only classes with at least one true instance appear.
    pub per_class_tpr: BTreeMap<String, f64>,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<usize>>,
    pub classes: Vec<String>,
}

impl EvalReport {
    pub fn from_confusion(classes: Vec<String>, confusion: Vec<Vec<usize>>) -> Self {
        let k = classes.len();
        let total: usize = confusion.iter().flatten().sum();
        let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
        let mut per_class_tpr = BTreeMap::new();
        let mut f1_sum = 0.0;
        for c in 0..k {
            let tp = confusion[c][c] as f64;
            let support: usize = confusion[c].iter().sum();
            let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
            if support > 0 {
                per_class_tpr.insert(classes[c].clone(), tp / support as f64);
            }
            let denom = (support + predicted) as f64;
            if denom > 0.0 {
                f1_sum += 2.0 * tp / denom;
            }
        }
        Self {
            accuracy: if total == 0 { 0.0 } else { correct as f64 / total as f64 },
            macro_f1: if k == 0 { 0.0 } else { f1_sum / k as f64 },
            per_class_tpr,
            confusion,
            classes,
        }
    }

    pub fn from_predictions(classes: Vec<String>, truth: &[usize], predicted: &[usize]) -> Self {
        let k = classes.len();
        let mut confusion = vec![vec![0usize; k]; k];
        for (t, p) in truth.iter().zip(predicted) {
            confusion[*t][*p] += 1;
        }
        Self::from_confusion(classes, confusion)
    }
}

pub fn evaluate<S: AsRef<str>>(probe: &LinearProbe, x: &Matrix, targets: &[S]) -> Result<EvalReport> {
    if targets.len() != x.rows() {
        return Err(Error::Shape(format!("{} targets for {} rows", targets.len(), x.rows())));
    }
    let truth = targets
        .iter()
        .map(|t| probe.class_index(t.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let predicted = probe.predict(x)?;
    Ok(EvalReport::from_predictions(probe.classes.clone(), &truth, &predicted))
}

/// Fraction of the most common label.
pub fn majority_rate<T: Ord>(labels: &[T]) -> f64 {
    let mut counts: BTreeMap<&T, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    let top = counts.values().copied().max().unwrap_or(0);
    if labels.is_empty() {
        0.0
    } else {
        top as f64 / labels.len() as f64
    }
}

/// Compares the analytic gradient against central finite differences on a
/// random problem (N = 20, D = 5, K = 3) and returns the largest relative
/// error over all weight and bias coordinates.
pub fn gradient_check(seed: u64, l2: f64) -> f64 {
    let (n, d, k) = (20, 5, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut normal = |s: f64| s * rng.sample::<f64, _>(StandardNormal);
    let x = Matrix::new(n, d, (0..n * d).map(|_| normal(1.0)).collect()).unwrap();
    let w = Matrix::new(k, d, (0..k * d).map(|_| normal(0.5)).collect()).unwrap();
    let b: Vec<f64> = (0..k).map(|_| normal(0.5)).collect();
    let y: Vec<usize> = (0..n).map(|i| i % k).collect();
    let (_, gw, gb) = loss_and_grad(&x, &y, &w, &b, l2).unwrap();
    let h = 1e-5;
    let f = |w: &Matrix, b: &[f64]| loss_and_grad(&x, &y, w, b, l2).unwrap().0;
    let rel = |a: f64, num: f64| (a - num).abs() / a.abs().max(num.abs()).max(1e-8);
    let mut worst = 0.0f64;
    for idx in 0..k * d {
        let (r, c) = (idx / d, idx % d);
        let mut wp = w.clone();
        wp.set(r, c, w.get(r, c) + h);
        let mut wm = w.clone();
        wm.set(r, c, w.get(r, c) - h);
        let num = (f(&wp, &b) - f(&wm, &b)) / (2.0 * h);
        worst = worst.max(rel(gw.get(r, c), num));
    }
    for c in 0..k {
        let mut bp = b.clone();
        bp[c] += h;
        let mut bm = b.clone();
        bm[c] -= h;
        let num = (f(&w, &bp) - f(&w, &bm)) / (2.0 * h);
        worst = worst.max(rel(gb[c], num));
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn separable_one_dimensional() {
        let x = Matrix::new(6, 1, vec![-1.0, -1.0, -1.0, 1.0, 1.0, 1.0]).unwrap();
        let t = labels(&["0", "0", "0", "1", "1", "1"]);
        let p = train_probe(&x, &t, &ProbeConfig::default()).unwrap();
        assert_eq!(evaluate(&p, &x, &t).unwrap().accuracy, 1.0);
    }

    #[test]
    fn single_class_is_rejected() {
        let x = Matrix::zeros(3, 2);
        let r = train_probe(&x, &labels(&["a", "a", "a"]), &ProbeConfig::default());
        assert!(matches!(r, Err(Error::DegenerateTarget(_))));
    }

    #[test]
    fn loss_trace_is_non_increasing() {
        let data = crate::data::gaussian_two_class(&crate::data::GaussianSpec {
            dim: 6,
            per_class: 60,
            separation: 1.0,
            ..Default::default()
        });
        let cfg = ProbeConfig { learning_rate: 5.0, epochs: 100, ..Default::default() };
        let (_, trace) = train_probe_traced(&data.embeddings, &data.z.iter().map(|v| v.to_string()).collect::<Vec<_>>(), &cfg).unwrap();
        assert!(trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
    }

    #[test]
    fn confusion_example() {
        let r = EvalReport::from_confusion(labels(&["0", "1"]), vec![vec![6, 2], vec![1, 9]]);
        assert_eq!(r.per_class_tpr["0"], 0.75);
        assert_eq!(r.per_class_tpr["1"], 0.9);
        assert_eq!(r.accuracy, 15.0 / 18.0);
    }

    #[test]
    fn perfect_predictions() {
        let r = EvalReport::from_predictions(labels(&["a", "b", "c"]), &[0, 1, 2, 1], &[0, 1, 2, 1]);
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn one_class_predictions_on_balanced_data() {
        let r = EvalReport::from_predictions(labels(&["0", "1"]), &[0, 0, 1, 1], &[1, 1, 1, 1]);
        assert_eq!(r.accuracy, 0.5);
        // F1 of the predicted class is 2·2/(2·2+2) = 2/3, the other is 0
        assert!((r.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn unknown_label_in_evaluate() {
        let x = Matrix::new(2, 1, vec![-1.0, 1.0]).unwrap();
        let p = train_probe(&x, &labels(&["a", "b"]), &ProbeConfig { epochs: 1, ..Default::default() }).unwrap();
        assert!(matches!(evaluate(&p, &x, &labels(&["a", "c"])), Err(Error::UnknownLabel(_))));
    }

    #[test]
    fn bias_gradient_at_zero_init_is_mean_residual() {
        let x = Matrix::new(4, 2, vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0, 2.0, -2.0]).unwrap();
        let y = [0, 1, 0, 1];
        let (_, _, gb) = loss_and_grad(&x, &y, &Matrix::zeros(2, 2), &[0.0, 0.0], 1e-4).unwrap();
        // softmax is uniform, residual mean is 0.5 - 0.5 = 0 for balanced labels
        assert!(gb.iter().all(|g| g.abs() < 1e-15));
        let y = [0, 0, 0, 1];
        let (_, _, gb) = loss_and_grad(&x, &y, &Matrix::zeros(2, 2), &[0.0, 0.0], 1e-4).unwrap();
        assert!((gb[0] - (0.5 - 0.75)).abs() < 1e-15);
        assert!((gb[1] - (0.5 - 0.25)).abs() < 1e-15);
    }

    #[test]
    fn zero_data_gradient_is_l2_term() {
        let w = Matrix::new(2, 3, vec![0.3, -0.2, 0.1, 0.0, 0.5, -1.0]).unwrap();
        let (_, gw, _) = loss_and_grad(&Matrix::zeros(4, 3), &[0, 1, 1, 0], &w, &[0.1, -0.1], 0.01).unwrap();
        assert!(gw.sub(&w.scale(0.01)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn gradient_check_seed_zero() {
        assert!(gradient_check(0, 1e-4) < 1e-5);
    }

    #[test]
    fn cfpr_round_trip_and_bad_magic() {
        let x = Matrix::new(4, 2, vec![1.0, 2.0, -1.0, 0.5, 0.0, 3.0, 2.0, -2.0]).unwrap();
        let p = train_probe(&x, &labels(&["x", "y", "x", "zz"]), &ProbeConfig { epochs: 5, ..Default::default() }).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(LinearProbe::from_bytes(&bytes).unwrap(), p);
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(LinearProbe::from_bytes(&bad), Err(Error::Format(_))));
        assert!(matches!(LinearProbe::from_bytes(&bytes[..bytes.len() - 1]), Err(Error::Format(_))));
    }
}
