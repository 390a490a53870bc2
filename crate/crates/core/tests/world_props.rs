use std::collections::{BTreeMap, HashSet};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use repcf::data::{stratified_split, LabeledEmbeddingSet};
use repcf::intervention::{fit_mimic, fit_mimic_plus, AffineIntervention};
use repcf::probe::{train_concept_probe, ProbeConfig};
use repcf::world::{self, WorldConfig, MALE};

#[test]
fn distinct_texts_have_distinct_encodings() {
    let cfg = WorldConfig::default();
    let table = cfg.token_table();
    let vocab: Vec<&String> = table.tokens().iter().skip(1).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut texts = HashSet::new();
    while texts.len() < 10_000 {
        let len = rng.random_range(1..=cfg.max_len);
        let t: Vec<&str> = (0..len).map(|_| vocab.choose(&mut rng).unwrap().as_str()).collect();
        texts.insert(t.join(" "));
    }
    let codes: HashSet<Vec<u64>> = texts
        .iter()
        .map(|t| {
            let toks: Vec<&str> = t.split(' ').collect();
            world::encode(&toks, &table, cfg.max_len).unwrap().iter().map(|v| v.to_bits()).collect()
        })
        .collect();
    assert_eq!(codes.len(), 10_000);
}

#[test]
fn round_trip_holds_across_seeds() {
    for seed in [0, 7, 99] {
        let cfg = WorldConfig { seed, ..Default::default() };
        let table = cfg.token_table();
        let corpus = world::generate(&cfg, 1500).unwrap();
        let x = world::encode_corpus(&corpus, &table, cfg.max_len).unwrap();
        assert_eq!(world::invert_corpus(&x, &corpus, &table, cfg.max_len).unwrap(), corpus);
    }
}

#[test]
fn concept_is_linearly_decodable_from_encodings() {
    let mut cfg = WorldConfig::default();
    cfg.templates.retain(|t| ["{subj}", "{poss}", "{objp}"].iter().any(|p| t.contains(p)));
    let corpus = world::generate(&cfg, 4000).unwrap();
    let x = world::encode_corpus(&corpus, &cfg.token_table(), cfg.max_len).unwrap();
    let data = LabeledEmbeddingSet::new(x, corpus.z(), None).unwrap();
    let (tr, te) = stratified_split(&data.z, 0.75, 0);
    let (train, test) = (data.select(&tr), data.select(&te));
    let p = train_concept_probe(&train.embeddings, &train.z, &ProbeConfig::default()).unwrap();
    let pred = p.predict(&test.embeddings).unwrap();
    let acc = pred.iter().zip(&test.z).filter(|(a, b)| **a == **b as usize).count() as f64 / test.len() as f64;
    assert!(acc >= 0.99, "held-out accuracy {acc}");
}

// Fails on the default world: the push overshoots and about 3% of source
// records land on non-pronoun tokens (0.971 vs 0.999 for m->f).
#[test]
#[ignore = "known violation: mimic+ flip rate falls below mimic on the default world"]
fn flip_rate_does_not_drop_when_pushing_further() {
    let cfg = WorldConfig::default();
    let table = cfg.token_table();
    let corpus = world::generate(&cfg, 4000).unwrap();
    let x = world::encode_corpus(&corpus, &table, cfg.max_len).unwrap();
    let data = LabeledEmbeddingSet::new(x, corpus.z(), None).unwrap();
    for source in [0u8, 1] {
        let rate = |iv: &AffineIntervention| {
            let out = world::counterfactual_pipeline(&corpus, iv, &table, cfg.max_len).unwrap();
            world::flip_rate(&corpus, &out.counterfactual, source).rate()
        };
        let m = rate(&fit_mimic(&data, source).unwrap());
        let p = rate(&fit_mimic_plus(&data, source, 2.0).unwrap());
        assert!(p >= m, "source {source}: mimic+ {p} < mimic {m}");
    }
}

#[test]
fn identity_pipeline_reproduces_the_corpus() {
    let cfg = WorldConfig::default();
    let table = cfg.token_table();
    let corpus = world::generate(&cfg, 300).unwrap();
    let out = world::counterfactual_pipeline(&corpus, &AffineIntervention::identity(cfg.dim()), &table, cfg.max_len).unwrap();
    assert_eq!(out.reconstructed, corpus);
    assert_eq!(out.counterfactual, corpus);
}

#[test]
fn even_skew_gives_balanced_professions() {
    // 10,000 records per profession
    let cfg = WorldConfig::default().with_uniform_skew(0.5);
    let corpus = world::generate(&cfg, 10_000 * cfg.professions.len()).unwrap();
    let mut by_prof: BTreeMap<String, [usize; 2]> = BTreeMap::new();
    for r in &corpus.records {
        by_prof.entry(r.y.clone().unwrap()).or_default()[r.z as usize] += 1;
    }
    assert_eq!(by_prof.len(), cfg.professions.len());
    for (p, [m, f]) in by_prof {
        let share = f as f64 / (m + f) as f64;
        assert!((share - 0.5).abs() <= 0.02, "{p}: {share}");
    }
    let overall = corpus.records.iter().filter(|r| r.z == 1).count() as f64 / corpus.len() as f64;
    assert!((overall - 0.5).abs() <= 0.02);
}

#[test]
fn full_skew_pins_the_concept() {
    let mut cfg = WorldConfig::default();
    cfg.professions[0].female_share = 1.0;
    let name = cfg.professions[0].name.clone();
    let corpus = world::generate(&cfg, 2000).unwrap();
    assert!(corpus.records.iter().filter(|r| r.y.as_deref() == Some(&name)).all(|r| r.z == 1));
    assert!(corpus.records.iter().any(|r| r.z == MALE));
}
