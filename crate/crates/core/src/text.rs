//! Tokenization, unigram statistics and the Δ word-frequency shift score.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::Corpus;

/// Lowercases, splits on whitespace and trims punctuation from both ends of
/// each piece.
///
/// Internal punctuation survives (`don't`, `m.d`). A trailing period is kept
/// only on short vowel-less abbreviations such as `dr.`, `mr.`, `ms.`, `st.`.
/// Pieces left empty are dropped.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().filter_map(token_of).collect()
}

fn token_of(piece: &str) -> Option<String> {
    let lower = piece.to_lowercase();
    let start = lower.trim_start_matches(|c: char| !c.is_alphanumeric());
    let core = start.trim_end_matches(|c: char| !c.is_alphanumeric());
    if core.is_empty() {
        return None;
    }
    let tail = &start[core.len()..];
    if tail.starts_with('.') && is_abbreviation(core) {
        return Some(format!("{core}."));
    }
    Some(core.to_string())
}

fn is_abbreviation(core: &str) -> bool {
    core.len() <= 2 && core.chars().all(|c| c.is_ascii_lowercase() && !"aeiouy".contains(c))
}

/// Token counts over a corpus.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnigramStats {
    pub counts: BTreeMap<String, u64>,
    pub total: u64,
}

impl UnigramStats {
    pub fn from_texts<S: AsRef<str>>(texts: &[S]) -> Self {
        let mut s = Self::default();
        for t in texts {
            for tok in tokenize(t.as_ref()) {
                *s.counts.entry(tok).or_default() += 1;
                s.total += 1;
            }
        }
        s
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn p(&self, token: &str) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(token) as f64 / self.total as f64
        }
    }
}

/// Relative token frequencies over all records.
pub fn unigram_stats(corpus: &Corpus) -> Result<UnigramStats> {
    if corpus.is_empty() {
        return Err(Error::Empty("corpus has no records".into()));
    }
    let texts: Vec<&str> = corpus.records.iter().map(|r| r.text.as_str()).collect();
    Ok(UnigramStats::from_texts(&texts))
}

/// Which corpora the minimum-count filter looks at.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FilterGroups {
    /// Original and counterfactual (the two groups in the numerator).
    #[default]
    Numerator,
    /// All three corpora.
    All,
}

impl std::str::FromStr for FilterGroups {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "numerator" => Ok(Self::Numerator),
            "all" => Ok(Self::All),
            _ => Err(Error::Parameter(format!("filter groups must be numerator or all, got {s:?}"))),
        }
    }
}

pub const DEFAULT_MIN_COUNT: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub token: String,
    pub p_orig: f64,
    pub p_cf: f64,
    pub p_cf_noint: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaTable {
    /// For example `m->f`.
    pub direction: String,
    pub min_count: u64,
    pub filter_groups: FilterGroups,
    /// Ascending by delta; ties by token.
    pub rows: Vec<DeltaRow>,
}

/// `Δ(w) = (p(w|G) − p(w|G_cf)) / (p(w|G) − p(w|G_cf_noint) + 1)`.
pub fn delta(p_orig: f64, p_cf: f64, p_cf_noint: f64) -> f64 {
    (p_orig - p_cf) / (p_orig - p_cf_noint + 1.0)
}

/// Δ for every token whose raw count reaches `min_count` in each filtered
/// group, sorted so the tokens whose counterfactual frequency rose the most
/// come first.
pub fn delta_scores(
    orig: &UnigramStats,
    cf: &UnigramStats,
    cf_noint: &UnigramStats,
    min_count: u64,
    filter_groups: FilterGroups,
    direction: &str,
) -> DeltaTable {
    let mut tokens: Vec<&String> = orig.counts.keys().chain(cf.counts.keys()).collect();
    tokens.sort();
    tokens.dedup();
    let mut rows: Vec<DeltaRow> = tokens
        .into_iter()
        .filter(|t| {
            let base = orig.count(t) >= min_count && cf.count(t) >= min_count;
            match filter_groups {
                FilterGroups::Numerator => base,
                FilterGroups::All => base && cf_noint.count(t) >= min_count,
            }
        })
        .map(|t| {
            let (p_orig, p_cf, p_cf_noint) = (orig.p(t), cf.p(t), cf_noint.p(t));
            DeltaRow { token: t.clone(), p_orig, p_cf, p_cf_noint, delta: delta(p_orig, p_cf, p_cf_noint) }
        })
        .collect();
    rows.sort_by(|a, b| a.delta.total_cmp(&b.delta).then_with(|| a.token.cmp(&b.token)));
    DeltaTable { direction: direction.to_string(), min_count, filter_groups, rows }
}

impl DeltaTable {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        if self.rows.is_empty() {
            out.write_record(["token", "p_orig", "p_cf", "p_cf_noint", "delta"])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R, direction: &str, min_count: u64) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let rows = rd.deserialize().collect::<std::result::Result<Vec<DeltaRow>, _>>()?;
        Ok(Self { direction: direction.into(), min_count, filter_groups: FilterGroups::Numerator, rows })
    }

    /// Up to `k` tokens with negative Δ (counterfactual frequency rose) and
    /// up to `k` with positive Δ (it fell), each list most extreme first.
    /// Tokens with Δ exactly zero appear in neither.
    pub fn top_changed(&self, k: usize) -> (Vec<String>, Vec<String>) {
        let increased = self.rows.iter().filter(|r| r.delta < 0.0).take(k).map(|r| r.token.clone()).collect();
        let decreased = self.rows.iter().rev().filter(|r| r.delta > 0.0).take(k).map(|r| r.token.clone()).collect();
        (increased, decreased)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::Record;

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Record { id: i.to_string(), text: t.to_string(), z: 0, y: None })
                .collect(),
        )
    }

    #[test]
    fn tokenizer_examples() {
        assert_eq!(tokenize("He runs."), vec!["he", "runs"]);
        assert_eq!(tokenize("Dr. Smith, M.D."), vec!["dr.", "smith", "m.d"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("she said: \"don't\" -- to him."), vec!["she", "said", "don't", "to", "him"]);
        assert_eq!(tokenize("Mr. and Ms. Ng went to St. Paul"), vec!["mr.", "and", "ms.", "ng", "went", "to", "st.", "paul"]);
    }

    #[test]
    fn unigram_examples() {
        let s = unigram_stats(&corpus(&["he runs", "he codes"])).unwrap();
        assert_eq!(s.total, 4);
        assert_eq!(s.p("he"), 0.5);
        assert_eq!(s.p("runs"), 0.25);
        let one = unigram_stats(&corpus(&["solo"])).unwrap();
        assert_eq!(one.p("solo"), 1.0);
        assert!(matches!(unigram_stats(&corpus(&[])), Err(Error::Empty(_))));
    }

    #[test]
    fn duplicated_corpus_has_same_probabilities() {
        let a = unigram_stats(&corpus(&["a b b", "c"])).unwrap();
        let b = unigram_stats(&corpus(&["a b b", "c", "a b b", "c"])).unwrap();
        for t in ["a", "b", "c"] {
            assert_eq!(a.p(t), b.p(t));
        }
    }

    #[test]
    fn delta_examples() {
        assert_eq!(delta(0.5, 0.0, 0.5), 0.5);
        assert_eq!(delta(0.3, 0.3, 0.3), 0.0);
    }

    #[test]
    fn top_changed_single_row() {
        let t = DeltaTable {
            direction: "m->f".into(),
            min_count: 0,
            filter_groups: FilterGroups::Numerator,
            rows: vec![DeltaRow { token: "she".into(), p_orig: 0.0, p_cf: 0.5, p_cf_noint: 0.0, delta: -0.5 }],
        };
        assert_eq!(t.top_changed(1), (vec!["she".to_string()], vec![]));
    }

    #[test]
    fn csv_header_and_round_trip() {
        let o = UnigramStats::from_texts(&["he he runs"]);
        let c = UnigramStats::from_texts(&["she she runs"]);
        let t = delta_scores(&o, &c, &o, 0, FilterGroups::Numerator, "m->f");
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf.clone()).unwrap();
        assert!(s.starts_with("token,p_orig,p_cf,p_cf_noint,delta\n"));
        assert_eq!(DeltaTable::read_csv(&buf[..], "m->f", 0).unwrap(), t);
    }
}
