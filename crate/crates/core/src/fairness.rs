//! TPR-gap bias measurement, counterfactual augmentation and the
//! classification-fairness experiment.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervention::{self, AffineIntervention, Kind};
use crate::probe::{self, EvalReport, ProbeConfig};
use crate::world::{self, Corpus, Record, TokenTable, WorldConfig};
use crate::data::LabeledEmbeddingSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfessionGap {
    pub tpr_class0: f64,
    pub tpr_class1: f64,
    pub gap: f64,
    pub support0: usize,
    pub support1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TprGapReport {
    pub per_profession: BTreeMap<String, ProfessionGap>,
    /// Unweighted mean of the absolute gaps over non-skipped professions.
    pub mean_gap: f64,
    /// Professions absent from one of the two groups.
    pub skipped: Vec<String>,
}

/// Per-profession true-positive rate in each concept group and their
/// absolute difference.
pub fn tpr_gap<S: AsRef<str>, T: AsRef<str>>(true_y: &[S], predicted_y: &[T], z: &[u8]) -> Result<TprGapReport> {
    if true_y.len() != predicted_y.len() || true_y.len() != z.len() {
        return Err(Error::Shape(format!(
            "lengths differ: {} true, {} predicted, {} z",
            true_y.len(),
            predicted_y.len(),
            z.len()
        )));
    }
    // profession -> [support, hits] per group
    let mut tally: BTreeMap<&str, [[usize; 2]; 2]> = BTreeMap::new();
    for ((t, p), &g) in true_y.iter().zip(predicted_y).zip(z) {
        if g > 1 {
            return Err(Error::Parameter(format!("concept label {g} is not 0 or 1")));
        }
        let e = tally.entry(t.as_ref()).or_default();
        e[g as usize][0] += 1;
        if t.as_ref() == p.as_ref() {
            e[g as usize][1] += 1;
        }
    }
    let mut per_profession = BTreeMap::new();
    let mut skipped = Vec::new();
    for (prof, [g0, g1]) in tally {
        if g0[0] == 0 || g1[0] == 0 {
            skipped.push(prof.to_string());
            continue;
        }
        let t0 = g0[1] as f64 / g0[0] as f64;
        let t1 = g1[1] as f64 / g1[0] as f64;
        per_profession.insert(
            prof.to_string(),
            ProfessionGap { tpr_class0: t0, tpr_class1: t1, gap: (t1 - t0).abs(), support0: g0[0], support1: g1[0] },
        );
    }
    let mean_gap = if per_profession.is_empty() {
        0.0
    } else {
        per_profession.values().map(|g| g.gap).sum::<f64>() / per_profession.len() as f64
    };
    Ok(TprGapReport { per_profession, mean_gap, skipped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Original,
    /// Steering counterfactual; `z` is flipped.
    Counterfactual,
    /// Erasure counterfactual; `z` is kept from the original.
    Erased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    #[serde(flatten)]
    pub record: Record,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentedDataset {
    pub records: Vec<AugmentedRecord>,
}

impl AugmentedDataset {
    pub fn corpus(&self) -> Corpus {
        Corpus::new(self.records.iter().map(|r| r.record.clone()).collect())
    }

    /// Records usable for z-conditioned analyses: erased rows dropped.
    pub fn without_erased(&self) -> AugmentedDataset {
        AugmentedDataset { records: self.records.iter().filter(|r| r.provenance != Provenance::Erased).cloned().collect() }
    }
}

/// Originals followed by counterfactuals matched to them by id.
///
/// Steering counterfactuals get `z = 1 − z_original`; erasure ones keep the
/// original `z` and are flagged [`Provenance::Erased`].
pub fn augment(originals: &Corpus, counterfactuals: &Corpus, kind: Kind) -> Result<AugmentedDataset> {
    let by_id: HashMap<&str, &Record> = originals.records.iter().map(|r| (r.id.as_str(), r)).collect();
    if by_id.len() != originals.len() {
        return Err(Error::Alignment("duplicate id among originals".into()));
    }
    let mut seen = HashSet::new();
    let mut records: Vec<AugmentedRecord> = originals
        .records
        .iter()
        .map(|r| AugmentedRecord { record: r.clone(), provenance: Provenance::Original })
        .collect();
    for c in &counterfactuals.records {
        let o = by_id
            .get(c.id.as_str())
            .ok_or_else(|| Error::Alignment(format!("counterfactual {} has no original", c.id)))?;
        if !seen.insert(c.id.as_str()) {
            return Err(Error::Alignment(format!("duplicate counterfactual id {}", c.id)));
        }
        let (z, provenance) = if kind.is_steering() {
            (1 - o.z, Provenance::Counterfactual)
        } else {
            (o.z, Provenance::Erased)
        };
        records.push(AugmentedRecord { record: Record { id: c.id.clone(), text: c.text.clone(), z, y: o.y.clone() }, provenance });
    }
    Ok(AugmentedDataset { records })
}

/// Counterfactuals for every record: class-0 rows steered onto class 1 and
/// class-1 rows onto class 0 (maps fitted on `corpus` itself), or every row
/// erased for [`Kind::Erase`].
pub fn counterfactuals_all(corpus: &Corpus, table: &TokenTable, max_len: usize, kind: Kind, alpha: f64) -> Result<Corpus> {
    let x = world::encode_corpus(corpus, table, max_len)?;
    let data = LabeledEmbeddingSet::new(x, corpus.z(), None)?;
    let moved = match kind {
        Kind::Erase => intervention::apply(&intervention::fit_erase(&data)?, &data.embeddings, None)?,
        Kind::Mimic | Kind::MimicPlus => {
            let mut out = data.embeddings.clone();
            for source in 0..2u8 {
                let iv = fit_steer(&data, source, kind, alpha)?;
                let m = intervention::apply(&iv, &data.embeddings, Some(&data.z))?;
                for i in (0..data.len()).filter(|&i| data.z[i] == source) {
                    out.row_mut(i).copy_from_slice(m.row(i));
                }
            }
            out
        }
    };
    let mut cf = world::invert_corpus(&moved, corpus, table, max_len)?;
    if kind.is_steering() {
        for r in &mut cf.records {
            r.z = 1 - r.z;
        }
    }
    Ok(cf)
}

fn fit_steer(data: &LabeledEmbeddingSet, source: u8, kind: Kind, alpha: f64) -> Result<AffineIntervention> {
    match kind {
        Kind::MimicPlus => intervention::fit_mimic_plus(data, source, alpha),
        _ => intervention::fit_mimic(data, source),
    }
}

/// Training-set variants compared by the experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Original training texts.
    Original,
    /// No-intervention reconstructions `inv(enc(T))`.
    Reconstructed,
    /// Originals plus erasure counterfactuals.
    Erase,
    /// Originals plus moment-matching counterfactuals.
    Mimic,
    /// Originals plus pushed moment-matching counterfactuals.
    MimicPlus,
}

impl Setting {
    pub const ALL: [Setting; 5] = [Setting::Original, Setting::Reconstructed, Setting::Erase, Setting::Mimic, Setting::MimicPlus];

    pub fn name(self) -> &'static str {
        match self {
            Setting::Original => "original",
            Setting::Reconstructed => "reconstructed",
            Setting::Erase => "erase",
            Setting::Mimic => "mimic",
            Setting::MimicPlus => "mimic_plus",
        }
    }
}

impl std::str::FromStr for Setting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Setting::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown setting {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub world: WorldConfig,
    pub train_size: usize,
    pub test_size: usize,
    /// Seed `s` samples training texts with world seed `100 + s` and test
    /// texts with `200 + s`.
    pub seeds: Vec<u64>,
    pub alpha: f64,
    pub probe: ProbeConfig,
    pub settings: Vec<Setting>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            world: WorldConfig::default(),
            train_size: 4000,
            test_size: 12000,
            seeds: vec![0, 1, 2],
            alpha: intervention::DEFAULT_ALPHA,
            probe: ProbeConfig::default(),
            settings: Setting::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub per_seed: Vec<f64>,
}

impl Summary {
    fn of(v: Vec<f64>) -> Self {
        let n = v.len().max(1) as f64;
        Self {
            mean: v.iter().sum::<f64>() / n,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            per_seed: v,
        }
    }

    /// `max − min`.
    pub fn spread(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SettingResult {
    pub accuracy: Summary,
    pub f1: Summary,
    pub tpr_gender_gap: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub seeds: Vec<u64>,
    pub settings: BTreeMap<Setting, SettingResult>,
}

/// Scores of one probe on one test set.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub eval: EvalReport,
    pub gap: TprGapReport,
}

/// Trains the profession probe on each setting's training set and scores it
/// on a fresh test corpus, for every seed.
pub fn fairness_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut runs: BTreeMap<Setting, Vec<Outcome>> = BTreeMap::new();
    for &seed in &cfg.seeds {
        for (setting, outcome) in run_seed(cfg, seed)? {
            runs.entry(setting).or_default().push(outcome);
        }
    }
    let settings = runs
        .into_iter()
        .map(|(s, outs)| {
            let r = SettingResult {
                accuracy: Summary::of(outs.iter().map(|o| o.eval.accuracy).collect()),
                f1: Summary::of(outs.iter().map(|o| o.eval.macro_f1).collect()),
                tpr_gender_gap: Summary::of(outs.iter().map(|o| o.gap.mean_gap).collect()),
            };
            (s, r)
        })
        .collect();
    Ok(ExperimentReport { seeds: cfg.seeds.clone(), settings })
}

/// One seed of the experiment, returning the outcome per setting.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<Vec<(Setting, Outcome)>> {
    let w = &cfg.world;
    let table = w.token_table();
    let train = world::generate(&WorldConfig { seed: 100 + seed, ..w.clone() }, cfg.train_size)?;
    let test = world::generate(&WorldConfig { seed: 200 + seed, ..w.clone() }, cfg.test_size)?;
    let x_test = world::encode_corpus(&test, &table, w.max_len)?;
    let y_test = test.y()?;
    let z_test = test.z();

    let score = |training: &Corpus| -> Result<Outcome> {
        let x = world::encode_corpus(training, &table, w.max_len)?;
        let p = probe::train_probe(&x, &training.y()?, &cfg.probe)?;
        let pred = p.predict_labels(&x_test)?;
        let eval = probe::evaluate(&p, &x_test, &y_test)?;
        let gap = tpr_gap(&y_test, &pred, &z_test)?;
        Ok(Outcome { eval, gap })
    };

    let mut out = Vec::new();
    for &setting in &cfg.settings {
        let training = match setting {
            Setting::Original => train.clone(),
            Setting::Reconstructed => {
                let x = world::encode_corpus(&train, &table, w.max_len)?;
                world::invert_corpus(&x, &train, &table, w.max_len)?
            }
            Setting::Erase | Setting::Mimic | Setting::MimicPlus => {
                let kind = match setting {
                    Setting::Erase => Kind::Erase,
                    Setting::Mimic => Kind::Mimic,
                    _ => Kind::MimicPlus,
                };
                let cf = counterfactuals_all(&train, &table, w.max_len, kind, cfg.alpha)?;
                augment(&train, &cf, kind)?.corpus()
            }
        };
        out.push((setting, score(&training)?));
    }
    Ok(out)
}

impl ExperimentReport {
    /// Plain-text table, one row per setting.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{:<14} {:>18} {:>18} {:>18}", "setting", "accuracy", "f1", "tpr_gender_gap");
        for (setting, r) in &self.settings {
            let cell = |m: &Summary| format!("{:.4} [{:.4},{:.4}]", m.mean, m.min, m.max);
            let _ = writeln!(
                s,
                "{:<14} {:>18} {:>18} {:>18}",
                setting.name(),
                cell(&r.accuracy),
                cell(&r.f1),
                cell(&r.tpr_gender_gap)
            );
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn hand_counted_gap() {
        // females (z=1): 8 true nurses, 6 predicted right; males: 10 true, 9 right
        let mut t = Vec::new();
        let mut p = Vec::new();
        let mut z = Vec::new();
        for i in 0..8 {
            t.push("nurse");
            p.push(if i < 6 { "nurse" } else { "surgeon" });
            z.push(1);
        }
        for i in 0..10 {
            t.push("nurse");
            p.push(if i < 9 { "nurse" } else { "surgeon" });
            z.push(0);
        }
        let r = tpr_gap(&t, &p, &z).unwrap();
        assert!((r.per_profession["nurse"].gap - 0.15).abs() < 1e-12);
        assert!((r.mean_gap - 0.15).abs() < 1e-12);
    }

    #[test]
    fn single_group_profession_is_skipped() {
        let r = tpr_gap(&s(&["a", "a", "b", "b"]), &s(&["a", "b", "b", "b"]), &[0, 1, 0, 0]).unwrap();
        assert_eq!(r.skipped, vec!["b".to_string()]);
        assert_eq!(r.per_profession.len(), 1);
        assert_eq!(r.mean_gap, 1.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(tpr_gap(&s(&["a"]), &s(&["a", "b"]), &[0]), Err(Error::Shape(_))));
    }

    fn rec(id: &str, z: u8) -> Record {
        Record { id: id.into(), text: "x".into(), z, y: Some("p".into()) }
    }

    #[test]
    fn augment_counts_and_alignment() {
        let o = Corpus::new(vec![rec("a", 0), rec("b", 1)]);
        let c = Corpus::new(vec![rec("a", 0), rec("b", 1)]);
        let a = augment(&o, &c, Kind::Mimic).unwrap();
        assert_eq!(a.records.len(), 4);
        assert_eq!(a.records[2].record.z, 1);
        assert_eq!(a.records[3].record.z, 0);
        let e = augment(&o, &c, Kind::Erase).unwrap();
        assert_eq!(e.records[2].record.z, 0);
        assert_eq!(e.records[2].provenance, Provenance::Erased);
        assert_eq!(e.without_erased().records.len(), 2);
        assert_eq!(augment(&o, &Corpus::default(), Kind::Mimic).unwrap().corpus(), o);
        let dup = Corpus::new(vec![rec("a", 0), rec("a", 0)]);
        assert!(matches!(augment(&o, &dup, Kind::Mimic), Err(Error::Alignment(_))));
        let stray = Corpus::new(vec![rec("zz", 0)]);
        assert!(matches!(augment(&o, &stray, Kind::Mimic), Err(Error::Alignment(_))));
    }
}
