//! A synthetic generative world: concept → text → embedding, with an exactly
//! invertible concatenation encoder and a nearest-neighbour inverter.
//!
//! Templates are whitespace-separated words with slots:
//!
//! | slot      | filled with                                           |
//! |-----------|-------------------------------------------------------|
//! | `{subj}`  | he / she, following the record's gender               |
//! | `{poss}`  | his / her                                             |
//! | `{objp}`  | him / her                                             |
//! | `{rsubj}` | he / she drawn at random once per record (a third party) |
//! | `{rposs}` | his / her, same random draw as `{rsubj}`              |
//! | `{prof}`  | the profession                                        |
//! | `{place}` | one of the profession's places                        |
//! | `{thing}` | one of the profession's objects                       |
//! | `{adj}`   | an adjective, gender-cued with configurable rates     |

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::intervention::{apply, AffineIntervention};
use crate::linalg::Matrix;

pub const PAD: &str = "<pad>";

/// Concept coding: class 0 is male, class 1 female.
pub const MALE: u8 = 0;
pub const FEMALE: u8 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profession {
    pub name: String,
    /// `P(z = 1 | profession)`.
    pub female_share: f64,
    pub places: Vec<String>,
    pub things: Vec<String>,
}

impl Profession {
    fn new(name: &str, female_share: f64, places: [&str; 3], things: [&str; 3]) -> Self {
        Self {
            name: name.into(),
            female_share,
            places: places.iter().map(|s| s.to_string()).collect(),
            things: things.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub templates: Vec<String>,
    pub professions: Vec<Profession>,
    pub neutral_adjectives: Vec<String>,
    /// Adjectives cueing male and female subjects.
    pub gendered_adjectives: [Vec<String>; 2],
    /// Probability an `{adj}` slot draws from the subject's own gendered list.
    pub adj_own_rate: f64,
    /// Probability it draws from the other gender's list.
    pub adj_other_rate: f64,
    pub max_len: usize,
    pub token_dim: usize,
    pub min_token_distance: f64,
    /// Corpus sampling seed.
    pub seed: u64,
    /// Token table seed; kept separate so train and test corpora share a table.
    pub table_seed: u64,
}

const TEMPLATES: [&str; 12] = [
    "{subj} is a {adj} {prof} at the {place}",
    "today {subj} works at the {place} with {poss} {thing}",
    "{subj} is a {adj} {prof} and {poss} {thing} trust {objp}",
    "{subj} joined the {place} as {prof} and {poss} {thing} all now thank {objp}",
    "now {subj} is known as a {prof} among {poss} {thing}",
    "{subj} trained as a {prof} with {poss} mentor and later {rsubj} was proud",
    "as a {adj} {prof} {subj} helps {poss} {thing} trust {objp}",
    "the {place} hired a {adj} {prof} who thanked {thing}",
    "a {adj} {prof} at the {place} who enjoys {poss} work",
    "today {subj} serves {thing} at the {place} as a {adj} {prof}",
    "{subj} is a {prof} and {poss} {adj} {thing} trust {objp} and {rposs} team",
    "in the {place} a {adj} {prof} once met with {objp}",
];

impl Default for WorldConfig {
    /// Ten professions in five stereotyped pairs sharing contexts, so the
    /// profession is partly confounded with gender.
    fn default() -> Self {
        let professions = vec![
            Profession::new("nurse", 0.80, ["hospital", "clinic", "ward"], ["patients", "families", "staff"]),
            Profession::new("surgeon", 0.20, ["hospital", "clinic", "center"], ["patients", "residents", "staff"]),
            Profession::new("teacher", 0.75, ["school", "academy", "campus"], ["students", "classes", "parents"]),
            Profession::new("professor", 0.30, ["college", "academy", "campus"], ["students", "courses", "classes"]),
            Profession::new("paralegal", 0.70, ["firm", "office", "agency"], ["clients", "cases", "files"]),
            Profession::new("attorney", 0.30, ["firm", "court", "agency"], ["clients", "cases", "trials"]),
            Profession::new("dancer", 0.75, ["studio", "theater", "company"], ["audiences", "shows", "pieces"]),
            Profession::new("composer", 0.25, ["studio", "theater", "gallery"], ["audiences", "pieces", "scores"]),
            Profession::new("designer", 0.65, ["startup", "lab", "agency"], ["projects", "products", "teams"]),
            Profession::new("engineer", 0.20, ["startup", "lab", "plant"], ["projects", "systems", "teams"]),
        ];
        let words = |w: &[&str]| w.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        Self {
            templates: words(&TEMPLATES),
            professions,
            neutral_adjectives: words(&["dedicated", "experienced", "skilled", "respected", "senior", "trusted"]),
            gendered_adjectives: [words(&["ambitious", "driven", "confident"]), words(&["caring", "warm", "supportive"])],
            adj_own_rate: 0.6,
            adj_other_rate: 0.1,
            max_len: 16,
            token_dim: 8,
            min_token_distance: 0.5,
            seed: 0,
            table_seed: 1,
        }
    }
}

/// Pronoun forms: index 0 male, 1 female.
const SUBJ: [&str; 2] = ["he", "she"];
const POSS: [&str; 2] = ["his", "her"];
const OBJP: [&str; 2] = ["him", "her"];

impl WorldConfig {
    /// Same world with every profession at the given female share.
    pub fn with_uniform_skew(mut self, share: f64) -> Self {
        for p in &mut self.professions {
            p.female_share = share;
        }
        self
    }

    pub fn dim(&self) -> usize {
        self.max_len * self.token_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.professions.is_empty() || self.templates.is_empty() {
            return Err(Error::Config("world needs professions and templates".into()));
        }
        for p in &self.professions {
            if !(0.0..=1.0).contains(&p.female_share) {
                return Err(Error::Config(format!("skew {} for {} outside [0,1]", p.female_share, p.name)));
            }
            if p.places.is_empty() || p.things.is_empty() {
                return Err(Error::Config(format!("profession {} needs places and things", p.name)));
            }
        }
        let names: BTreeSet<_> = self.professions.iter().map(|p| &p.name).collect();
        if names.len() != self.professions.len() {
            return Err(Error::Config("duplicate profession names".into()));
        }
        if !(self.adj_own_rate >= 0.0 && self.adj_other_rate >= 0.0 && self.adj_own_rate + self.adj_other_rate <= 1.0) {
            return Err(Error::Config("adjective rates must be non-negative and sum to at most 1".into()));
        }
        if self.token_dim == 0 || self.max_len == 0 {
            return Err(Error::Config("max_len and token_dim must be positive".into()));
        }
        for t in &self.templates {
            let n = t.split_whitespace().count();
            if n > self.max_len {
                return Err(Error::Config(format!("template has {n} tokens, max_len is {}", self.max_len)));
            }
            for w in t.split_whitespace() {
                if w.starts_with('{') && !SLOTS.contains(&w) {
                    return Err(Error::Config(format!("unknown slot {w}")));
                }
            }
        }
        Ok(())
    }

    /// `<pad>` followed by every word the world can emit, sorted.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut words: BTreeSet<String> = BTreeSet::new();
        for w in SUBJ.iter().chain(&POSS).chain(&OBJP) {
            words.insert(w.to_string());
        }
        for p in &self.professions {
            words.insert(p.name.clone());
            words.extend(p.places.iter().cloned());
            words.extend(p.things.iter().cloned());
        }
        words.extend(self.neutral_adjectives.iter().cloned());
        for g in &self.gendered_adjectives {
            words.extend(g.iter().cloned());
        }
        for t in &self.templates {
            words.extend(t.split_whitespace().filter(|w| !w.starts_with('{')).map(String::from));
        }
        words.remove(PAD);
        std::iter::once(PAD.to_string()).chain(words).collect()
    }

    pub fn token_table(&self) -> TokenTable {
        TokenTable::generate(self.vocabulary(), self.token_dim, self.table_seed, self.min_token_distance)
    }

    /// Majority pronoun gender of a token sequence; `None` on a tie or when
    /// no gendered pronoun occurs.
    pub fn pronoun_class<S: AsRef<str>>(tokens: &[S]) -> Option<u8> {
        let (mut m, mut f) = (0, 0);
        for t in tokens {
            match t.as_ref() {
                "he" | "his" | "him" => m += 1,
                "she" | "her" | "hers" => f += 1,
                _ => {}
            }
        }
        match m.cmp(&f) {
            std::cmp::Ordering::Greater => Some(MALE),
            std::cmp::Ordering::Less => Some(FEMALE),
            std::cmp::Ordering::Equal => None,
        }
    }
}

const SLOTS: [&str; 9] = ["{subj}", "{poss}", "{objp}", "{rsubj}", "{rposs}", "{prof}", "{place}", "{thing}", "{adj}"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub id: String,
    pub text: String,
    pub z: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<String>,
}

impl Record {
    /// Whitespace tokens, as seen by the synthetic encoder.
    pub fn tokens(&self) -> Vec<&str> {
        self.text.split_whitespace().collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    pub records: Vec<Record>,
}

impl Corpus {
    pub fn new(records: Vec<Record>) -> Self {
        Self { records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn z(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.z).collect()
    }

    /// Task labels; errors if any record lacks one.
    pub fn y(&self) -> Result<Vec<String>> {
        self.records
            .iter()
            .map(|r| r.y.clone().ok_or_else(|| Error::Empty(format!("record {} has no task label", r.id))))
            .collect()
    }

    pub fn filter_z(&self, z: u8) -> Corpus {
        Corpus::new(self.records.iter().filter(|r| r.z == z).cloned().collect())
    }
}

/// Samples `n` records: profession uniformly, gender from the profession's
/// skew, then a template filled consistently with that gender.
pub fn generate(config: &WorldConfig, n: usize) -> Result<Corpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let p = &config.professions[rng.random_range(0..config.professions.len())];
        let z = u8::from(rng.random::<f64>() < p.female_share);
        let template = &config.templates[rng.random_range(0..config.templates.len())];
        let third = rng.random_range(0..2usize);
        let g = z as usize;
        let mut words: Vec<&str> = Vec::new();
        for w in template.split_whitespace() {
            let word = match w {
                "{subj}" => SUBJ[g],
                "{poss}" => POSS[g],
                "{objp}" => OBJP[g],
                "{rsubj}" => SUBJ[third],
                "{rposs}" => POSS[third],
                "{prof}" => &p.name,
                "{place}" => &p.places[rng.random_range(0..p.places.len())],
                "{thing}" => &p.things[rng.random_range(0..p.things.len())],
                "{adj}" => {
                    let u = rng.random::<f64>();
                    let list = if u < config.adj_own_rate {
                        &config.gendered_adjectives[g]
                    } else if u < config.adj_own_rate + config.adj_other_rate {
                        &config.gendered_adjectives[1 - g]
                    } else {
                        &config.neutral_adjectives
                    };
                    &list[rng.random_range(0..list.len())]
                }
                other => other,
            };
            words.push(word);
        }
        records.push(Record { id: format!("r{i}"), text: words.join(" "), z, y: Some(p.name.clone()) });
    }
    Ok(Corpus::new(records))
}

/// Token vectors, one row per vocabulary entry; row 0 is the PAD vector.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    vectors: Vec<f64>,
    dim: usize,
    /// Smallest pairwise distance between any two token vectors.
    pub min_distance: f64,
}

impl TokenTable {
    /// Draws each vector from a unit Gaussian, redrawing until it is at least
    /// `min_distance` from every earlier vector.
    pub fn generate(tokens: Vec<String>, dim: usize, seed: u64, min_distance: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vectors: Vec<f64> = Vec::with_capacity(tokens.len() * dim);
        for i in 0..tokens.len() {
            loop {
                let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
                let clear = (0..i).all(|j| dist2(&vectors[j * dim..(j + 1) * dim], &v) >= min_distance * min_distance);
                if clear {
                    vectors.extend(v);
                    break;
                }
            }
        }
        Self::from_parts(tokens, dim, vectors)
    }

    fn from_parts(tokens: Vec<String>, dim: usize, vectors: Vec<f64>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let v = tokens.len();
        let mut min_d2 = f64::INFINITY;
        for i in 0..v {
            for j in (i + 1)..v {
                min_d2 = min_d2.min(dist2(&vectors[i * dim..(i + 1) * dim], &vectors[j * dim..(j + 1) * dim]));
            }
        }
        Self { tokens, index, vectors, dim, min_distance: min_d2.sqrt() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn lookup(&self, token: &str) -> Option<&[f64]> {
        self.index.get(token).map(|&i| self.vector(i))
    }

    /// Index of the nearest token vector; ties go to the earlier token.
    pub fn nearest(&self, block: &[f64]) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for i in 0..self.tokens.len() {
            let d = dist2(self.vector(i), block);
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Concatenates per-position token vectors, padding to `max_len` with PAD.
pub fn encode<S: AsRef<str>>(tokens: &[S], table: &TokenTable, max_len: usize) -> Result<Vec<f64>> {
    if tokens.len() > max_len {
        return Err(Error::TooLong { len: tokens.len(), max: max_len });
    }
    let d = table.dim();
    let mut out = Vec::with_capacity(max_len * d);
    for t in tokens {
        let v = table.lookup(t.as_ref()).ok_or_else(|| Error::UnknownToken(t.as_ref().to_string()))?;
        out.extend_from_slice(v);
    }
    for _ in tokens.len()..max_len {
        out.extend_from_slice(table.vector(0));
    }
    Ok(out)
}

/// Encodes every record into one row.
pub fn encode_corpus(corpus: &Corpus, table: &TokenTable, max_len: usize) -> Result<Matrix> {
    let mut data = Vec::with_capacity(corpus.len() * max_len * table.dim());
    for r in &corpus.records {
        data.extend(encode(&r.tokens(), table, max_len)?);
    }
    Matrix::new(corpus.len(), max_len * table.dim(), data)
}

/// Nearest-neighbour decoding per block; PAD ends the sequence.
pub fn invert(embedding: &[f64], table: &TokenTable, max_len: usize) -> Result<Vec<String>> {
    let d = table.dim();
    if embedding.len() != max_len * d {
        return Err(Error::Shape(format!("embedding of length {} for {}×{d}", embedding.len(), max_len)));
    }
    let mut out = Vec::new();
    for block in embedding.chunks_exact(d) {
        let i = table.nearest(block);
        if i == 0 {
            break;
        }
        out.push(table.tokens[i].clone());
    }
    Ok(out)
}

/// Decodes each row of `embeddings` into a record, copying ids, labels and
/// `z` from `like`.
pub fn invert_corpus(embeddings: &Matrix, like: &Corpus, table: &TokenTable, max_len: usize) -> Result<Corpus> {
    if embeddings.rows() != like.len() {
        return Err(Error::Shape(format!("{} rows for {} records", embeddings.rows(), like.len())));
    }
    let records = embeddings
        .iter_rows()
        .zip(&like.records)
        .map(|(row, r)| {
            Ok(Record { id: r.id.clone(), text: invert(row, table, max_len)?.join(" "), z: r.z, y: r.y.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus::new(records))
}

/// No-intervention reconstruction and counterfactual corpora.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineOutput {
    pub reconstructed: Corpus,
    pub counterfactual: Corpus,
}

/// `inv(enc(T))` and `inv(f(enc(T)))` for every record.
///
/// Under steering kinds, rows of the source class are moved and their
/// counterfactual records carry the flipped `z`; other rows pass through.
pub fn counterfactual_pipeline(
    corpus: &Corpus,
    intervention: &AffineIntervention,
    table: &TokenTable,
    max_len: usize,
) -> Result<PipelineOutput> {
    let x = encode_corpus(corpus, table, max_len)?;
    let z = corpus.z();
    let moved = apply(intervention, &x, Some(&z))?;
    let reconstructed = invert_corpus(&x, corpus, table, max_len)?;
    let mut counterfactual = invert_corpus(&moved, corpus, table, max_len)?;
    if let Some(s) = intervention.source_class {
        for r in counterfactual.records.iter_mut().filter(|r| r.z == s) {
            r.z = 1 - s;
        }
    }
    Ok(PipelineOutput { reconstructed, counterfactual })
}

/// Share of source-class records whose counterfactual switched pronoun class.
///
/// Only originals with a decided pronoun class of `source` count.
pub fn flip_rate(original: &Corpus, counterfactual: &Corpus, source: u8) -> FlipStats {
    let mut eligible = 0;
    let mut flipped = 0;
    for (o, c) in original.records.iter().zip(&counterfactual.records) {
        if o.z != source || WorldConfig::pronoun_class(&o.tokens()) != Some(source) {
            continue;
        }
        eligible += 1;
        if WorldConfig::pronoun_class(&c.tokens()) == Some(1 - source) {
            flipped += 1;
        }
    }
    FlipStats { eligible, flipped }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlipStats {
    pub eligible: usize,
    pub flipped: usize,
}

impl FlipStats {
    pub fn rate(&self) -> f64 {
        if self.eligible == 0 {
            0.0
        } else {
            self.flipped as f64 / self.eligible as f64
        }
    }
}

/// Counts of records by pronoun class: `[male, female, undecided]`.
pub fn pronoun_class_counts(corpus: &Corpus) -> [usize; 3] {
    let mut c = [0; 3];
    for r in &corpus.records {
        match WorldConfig::pronoun_class(&r.tokens()) {
            Some(MALE) => c[0] += 1,
            Some(_) => c[1] += 1,
            None => c[2] += 1,
        }
    }
    c
}
