//! `repcf` command-line interface.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 usage, 3 malformed input
//! file, 4 numerical failure. Reports go to stdout, diagnostics to stderr.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use repcf::data::LabeledEmbeddingSet;
use repcf::fairness::{self, ExperimentConfig, Setting};
use repcf::intervention::{self, AffineIntervention, Kind};
use repcf::io::{self as rio, EmbeddingFile, KvConfig, SidecarRow};
use repcf::probe::{self, ProbeConfig};
use repcf::text::{self, FilterGroups, UnigramStats};
use repcf::world::{self, Corpus, Record, WorldConfig};
use repcf::Error;

#[derive(Parser)]
#[command(name = "repcf", version, about = "Concept interventions on embeddings and their counterfactual texts")]
struct Cli {
    /// Flat key = value config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; falls back to the config's `seed`, then CF_SEED, then 0.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample a synthetic corpus.
    Generate {
        #[arg(long, default_value_t = 4000)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a corpus with the synthetic encoder.
    Encode {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Id/label sidecar (defaults to OUT with .jsonl appended).
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Fit an intervention and print its audit report.
    Fit {
        #[command(flatten)]
        input: EmbIn,
        #[command(flatten)]
        iv: IvArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply an intervention file to embeddings.
    Apply {
        #[arg(long)]
        intervention: PathBuf,
        #[command(flatten)]
        input: EmbIn,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode embeddings with the synthetic inverter.
    Invert {
        #[command(flatten)]
        input: EmbIn,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run inv(f(enc(T))) on a corpus.
    Pipeline(PipelineArgs),
    /// Word-frequency shift table between original, counterfactual and
    /// reconstructed corpora.
    Delta {
        #[arg(long)]
        orig: PathBuf,
        #[arg(long)]
        cf: PathBuf,
        #[arg(long)]
        noint: PathBuf,
        #[arg(long)]
        min_count: Option<u64>,
        /// numerator (original and counterfactual) or all
        #[arg(long, default_value = "numerator")]
        filter_groups: String,
        #[arg(long, default_value = "m->f")]
        direction: String,
        /// CSV output; `.json` extension writes JSON instead.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Mean TPR gap from JSON-lines rows {"y", "pred", "z"}.
    TprGap {
        #[arg(long)]
        predictions: PathBuf,
    },
    /// Originals plus counterfactuals with provenance.
    Augment {
        #[arg(long)]
        orig: PathBuf,
        #[arg(long)]
        cf: PathBuf,
        #[arg(long, default_value = "mimic")]
        kind: String,
        /// Leave erasure counterfactuals out of the output.
        #[arg(long)]
        drop_z: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a linear probe on embeddings and print its evaluation.
    Probe {
        #[command(flatten)]
        input: EmbIn,
        /// y (task label) or z (concept)
        #[arg(long, default_value = "z")]
        target: String,
        #[arg(long)]
        eval_embeddings: Option<PathBuf>,
        #[arg(long)]
        eval_labels: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Augmentation fairness experiment on the synthetic world.
    Experiment {
        /// Comma-separated seeds.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        train_size: Option<usize>,
        #[arg(long)]
        test_size: Option<usize>,
        /// Comma-separated subset of original,reconstructed,erase,mimic,mimic_plus.
        #[arg(long)]
        settings: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct EmbIn {
    #[arg(long)]
    embeddings: PathBuf,
    /// Id/label sidecar (defaults to EMBEDDINGS with .jsonl appended).
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct IvArgs {
    #[arg(long, default_value = "mimic")]
    kind: String,
    /// Source class for steering: m, f, 0 or 1.
    #[arg(long, default_value = "m")]
    source: String,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[command(flatten)]
    iv: IvArgs,
    /// Use a fitted intervention instead of fitting on the corpus.
    #[arg(long)]
    intervention: Option<PathBuf>,
    /// Counterfactual corpus output.
    #[arg(long)]
    out_cf: PathBuf,
    /// No-intervention reconstruction output.
    #[arg(long)]
    out_noint: PathBuf,
    /// Write intervened and unmodified embeddings for an external inverter
    /// into this directory instead of inverting in-process.
    #[arg(long)]
    external_dir: Option<PathBuf>,
    /// Merge texts produced by an external inverter from this directory.
    #[arg(long)]
    merge_dir: Option<PathBuf>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    correction_steps: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Usage problems that surface after argument parsing.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.chain().any(|c| c.downcast_ref::<Usage>().is_some()) {
        return 2;
    }
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Parameter(_) | Error::MissingLabels) => 2,
        Some(
            Error::Format(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::Config(_)
            | Error::Shape(_)
            | Error::UnknownToken(_)
            | Error::TooLong { .. }
            | Error::Alignment(_)
            | Error::UnknownLabel(_)
            | Error::Empty(_),
        ) => 3,
        Some(
            Error::NotSymmetric(_)
            | Error::NotPsd(_)
            | Error::DegenerateSample(_)
            | Error::MissingClass(_)
            | Error::Conditioning(_)
            | Error::DegenerateTarget(_)
            | Error::Training(_),
        ) => 4,
        _ => 1,
    }
}

const KNOWN_KEYS: &[&str] = &[
    "seed",
    "table_seed",
    "max_len",
    "token_dim",
    "min_token_distance",
    "adj_own_rate",
    "adj_other_rate",
    "skew",
    "alpha",
    "min_count",
    "beam_width",
    "correction_steps",
    "train_size",
    "test_size",
    "seeds",
    "epochs",
];

struct Ctx {
    kv: KvConfig,
    world: WorldConfig,
}

impl Ctx {
    fn load(cli: &Cli) -> Result<Self> {
        let mut kv = match &cli.config {
            Some(p) => KvConfig::parse(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
            None => KvConfig::default(),
        };
        for k in kv.keys() {
            if !KNOWN_KEYS.contains(&k) && !k.starts_with("skew.") {
                return Err(Error::Config(format!("unknown config key {k}")).into());
            }
        }
        let seed = match cli.seed {
            Some(s) => s,
            None => match kv.get::<u64>("seed")? {
                Some(s) => s,
                None => match std::env::var("CF_SEED") {
                    Ok(v) => v.trim().parse().map_err(|_| usage(format!("CF_SEED={v:?} is not an integer")))?,
                    Err(_) => 0,
                },
            },
        };
        kv.set("seed", seed);
        let world = rio::world_from_config(&kv, WorldConfig::default())?;
        Ok(Self { kv, world })
    }

    fn opt<T: std::str::FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(match flag {
            Some(v) => v,
            None => self.kv.get(key)?.unwrap_or(default),
        })
    }
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Ctx::load(&cli)?;
    match cli.cmd {
        Cmd::Generate { n, out } => {
            let corpus = world::generate(&ctx.world, n)?;
            save(&out, |w| Ok(rio::write_corpus(w, &corpus)?))?;
            eprintln!("wrote {} records to {}", corpus.len(), out.display());
        }
        Cmd::Encode { corpus, out, sidecar } => {
            let corpus = read_corpus(&corpus)?;
            let table = ctx.world.token_table();
            let x = world::encode_corpus(&corpus, &table, ctx.world.max_len)?;
            write_embeddings(&out, sidecar.as_deref(), &x, &corpus)?;
        }
        Cmd::Fit { input, iv, out } => {
            let (set, _) = read_set(&input)?;
            let fitted = fit(&ctx, &set, &iv)?;
            save(&out, |w| Ok(fitted.write_to(w)?))?;
            let report = intervention::audit(&fitted, &set)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Apply { intervention, input, out } => {
            let iv = AffineIntervention::read_from(open(&intervention)?)?;
            let x = EmbeddingFile::read_from(open(&input.embeddings)?)?.to_matrix()?;
            let labels = sidecar_path(&input.embeddings, input.labels.as_deref());
            let rows: Option<Vec<SidecarRow>> = if labels.exists() { Some(rio::read_jsonl(open(&labels)?)?) } else { None };
            let z: Option<Vec<u8>> = rows.as_ref().map(|r| r.iter().map(|s| s.z).collect());
            let moved = intervention::apply(&iv, &x, z.as_deref())?;
            save(&out, |w| Ok(EmbeddingFile::from_matrix(&moved).write_to(w)?))?;
            if let Some(rows) = rows {
                let rows: Vec<SidecarRow> = rows
                    .into_iter()
                    .map(|mut r| {
                        if iv.source_class == Some(r.z) {
                            r.z = 1 - r.z;
                        }
                        r
                    })
                    .collect();
                save(&sidecar_path(&out, None), |w| Ok(rio::write_jsonl(w, &rows)?))?;
            }
        }
        Cmd::Invert { input, out } => {
            let x = EmbeddingFile::read_from(open(&input.embeddings)?)?.to_matrix()?;
            let rows: Vec<SidecarRow> = rio::read_jsonl(open(&sidecar_path(&input.embeddings, input.labels.as_deref()))?)?;
            let like = corpus_from_sidecar(&rows);
            let table = ctx.world.token_table();
            let corpus = world::invert_corpus(&x, &like, &table, ctx.world.max_len)?;
            save(&out, |w| Ok(rio::write_corpus(w, &corpus)?))?;
        }
        Cmd::Pipeline(args) => pipeline(&ctx, args)?,
        Cmd::Delta { orig, cf, noint, min_count, filter_groups, direction, out, top } => {
            let min_count = ctx.opt(min_count, "min_count", text::DEFAULT_MIN_COUNT)?;
            let groups: FilterGroups = filter_groups.parse().map_err(|e: Error| usage(e.to_string()))?;
            let stats = |p: &Path| -> Result<UnigramStats> { Ok(text::unigram_stats(&read_corpus(p)?)?) };
            let table = text::delta_scores(&stats(&orig)?, &stats(&cf)?, &stats(&noint)?, min_count, groups, &direction);
            if let Some(out) = out {
                if out.extension().is_some_and(|e| e == "json") {
                    save(&out, |w| Ok(serde_json::to_writer_pretty(w, &table)?))?;
                } else {
                    save(&out, |w| Ok(table.write_csv(w)?))?;
                }
            }
            let (inc, dec) = table.top_changed(top);
            println!("{}", json!({ "direction": direction, "rows": table.rows.len(), "most_increased": inc, "most_decreased": dec }));
        }
        Cmd::TprGap { predictions } => {
            let rows: Vec<serde_json::Value> = rio::read_jsonl(open(&predictions)?)?;
            let mut t = Vec::new();
            let mut p = Vec::new();
            let mut z = Vec::new();
            for (i, r) in rows.iter().enumerate() {
                let field = |k: &str| r.get(k).ok_or_else(|| Error::Format(format!("row {}: missing {k}", i + 1)));
                t.push(field("y")?.as_str().ok_or_else(|| Error::Format(format!("row {}: y is not a string", i + 1)))?.to_string());
                p.push(field("pred")?.as_str().ok_or_else(|| Error::Format(format!("row {}: pred is not a string", i + 1)))?.to_string());
                z.push(field("z")?.as_u64().filter(|v| *v <= 1).ok_or_else(|| Error::Format(format!("row {}: z must be 0 or 1", i + 1)))? as u8);
            }
            let report = fairness::tpr_gap(&t, &p, &z)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Augment { orig, cf, kind, drop_z, out } => {
            let kind: Kind = kind.parse().map_err(|e: Error| usage(e.to_string()))?;
            let mut ds = fairness::augment(&read_corpus(&orig)?, &read_corpus(&cf)?, kind)?;
            if drop_z {
                ds = ds.without_erased();
            }
            save(&out, |w| Ok(rio::write_jsonl(w, &ds.records)?))?;
            eprintln!("wrote {} records to {}", ds.records.len(), out.display());
        }
        Cmd::Probe { input, target, eval_embeddings, eval_labels, epochs, out } => {
            let cfg = ProbeConfig {
                epochs: ctx.opt(epochs, "epochs", 500)?,
                seed: ctx.world.seed,
                ..ProbeConfig::default()
            };
            let (set, _) = read_set(&input)?;
            let targets = probe_targets(&set, &target)?;
            let p = probe::train_probe(&set.embeddings, &targets, &cfg)?;
            if let Some(out) = &out {
                save(out, |w| Ok(p.write_to(w)?))?;
            }
            let (eval_set, eval_targets) = match eval_embeddings {
                Some(e) => {
                    let (s, _) = read_set(&EmbIn { embeddings: e, labels: eval_labels })?;
                    let t = probe_targets(&s, &target)?;
                    (s, t)
                }
                None => (set, targets),
            };
            let report = probe::evaluate(&p, &eval_set.embeddings, &eval_targets)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
        }
        Cmd::Experiment { seeds, train_size, test_size, settings, alpha, out } => {
            let defaults = ExperimentConfig::default();
            let seeds: Vec<u64> = match seeds.or_else(|| ctx.kv.raw("seeds").map(String::from)) {
                Some(s) => parse_list(&s)?,
                None => defaults.seeds.clone(),
            };
            let settings: Vec<Setting> = match settings {
                Some(s) => s.split(',').map(|v| v.trim().parse().map_err(|e: Error| usage(e.to_string()))).collect::<Result<_>>()?,
                None => defaults.settings.clone(),
            };
            let cfg = ExperimentConfig {
                world: ctx.world.clone(),
                train_size: ctx.opt(train_size, "train_size", defaults.train_size)?,
                test_size: ctx.opt(test_size, "test_size", defaults.test_size)?,
                seeds,
                alpha: ctx.opt(alpha, "alpha", defaults.alpha)?,
                probe: ProbeConfig { epochs: ctx.opt(None, "epochs", 500)?, ..ProbeConfig::default() },
                settings,
            };
            let report = fairness::fairness_experiment(&cfg)?;
            if let Some(out) = out {
                save(&out, |w| Ok(serde_json::to_writer_pretty(w, &report)?))?;
            }
            print!("{}", report.to_table());
        }
    }
    Ok(())
}

fn parse_list(s: &str) -> Result<Vec<u64>> {
    s.split(',').map(|v| v.trim().parse::<u64>().map_err(|_| usage(format!("bad seed list {s:?}")))).collect()
}

fn probe_targets(set: &LabeledEmbeddingSet, target: &str) -> Result<Vec<String>> {
    match target {
        "z" => Ok(set.z.iter().map(|v| v.to_string()).collect()),
        "y" => set.y.clone().ok_or_else(|| Error::Format("labels have no y field".into()).into()),
        other => Err(usage(format!("--target must be y or z, got {other}"))),
    }
}

fn parse_source(s: &str) -> Result<u8> {
    match s {
        "m" | "0" => Ok(world::MALE),
        "f" | "1" => Ok(world::FEMALE),
        _ => Err(usage(format!("--source must be m, f, 0 or 1, got {s}"))),
    }
}

fn fit(ctx: &Ctx, set: &LabeledEmbeddingSet, args: &IvArgs) -> Result<AffineIntervention> {
    let kind: Kind = args.kind.parse().map_err(|e: Error| usage(e.to_string()))?;
    let source = parse_source(&args.source)?;
    let alpha = ctx.opt(args.alpha, "alpha", intervention::DEFAULT_ALPHA)?;
    Ok(match kind {
        Kind::Erase => intervention::fit_erase(set)?,
        Kind::Mimic => intervention::fit_mimic(set, source)?,
        Kind::MimicPlus => intervention::fit_mimic_plus(set, source, alpha)?,
    })
}

fn direction_label(iv: &AffineIntervention) -> String {
    match iv.source_class {
        Some(world::MALE) => "m->f".into(),
        Some(_) => "f->m".into(),
        None => "erase".into(),
    }
}

fn pipeline(ctx: &Ctx, a: PipelineArgs) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let table = ctx.world.token_table();
    let max_len = ctx.world.max_len;
    let beam_width = ctx.opt(a.beam_width, "beam_width", 4)?;
    let correction_steps = ctx.opt(a.correction_steps, "correction_steps", 20)?;
    let x = world::encode_corpus(&corpus, &table, max_len)?;
    let iv = match &a.intervention {
        Some(p) => AffineIntervention::read_from(open(p)?)?,
        None => fit(ctx, &LabeledEmbeddingSet::new(x.clone(), corpus.z(), None)?, &a.iv)?,
    };

    let (noint, mut cf) = if let Some(dir) = &a.merge_dir {
        let noint = merge_texts(&corpus, &dir.join("noint.texts.jsonl"))?;
        let cf = merge_texts(&corpus, &dir.join("cf.texts.jsonl"))?;
        (noint, cf)
    } else if let Some(dir) = &a.external_dir {
        std::fs::create_dir_all(dir)?;
        let moved = intervention::apply(&iv, &x, Some(&corpus.z()))?;
        write_embeddings(&dir.join("noint.emb1"), None, &x, &corpus)?;
        write_embeddings(&dir.join("cf.emb1"), None, &moved, &corpus)?;
        let manifest = json!({
            "beam_width": beam_width,
            "correction_steps": correction_steps,
            "inputs": ["noint.emb1", "cf.emb1"],
            "expected_outputs": ["noint.texts.jsonl", "cf.texts.jsonl"],
        });
        save(&dir.join("inverter.json"), |w| Ok(serde_json::to_writer_pretty(w, &manifest)?))?;
        eprintln!("wrote embeddings for the external inverter to {}", dir.display());
        return Ok(());
    } else {
        let out = world::counterfactual_pipeline(&corpus, &iv, &table, max_len)?;
        (out.reconstructed, out.counterfactual)
    };
    if a.merge_dir.is_some() {
        if let Some(s) = iv.source_class {
            for r in cf.records.iter_mut().filter(|r| r.z == s) {
                r.z = 1 - r.z;
            }
        }
    }
    save(&a.out_noint, |w| Ok(rio::write_corpus(w, &noint)?))?;
    save(&a.out_cf, |w| Ok(rio::write_corpus(w, &cf)?))?;
    let summary = match iv.source_class {
        Some(s) => {
            let f = world::flip_rate(&corpus, &cf, s);
            json!({ "flip_rate": f.rate(), "eligible": f.eligible, "records": corpus.len(), "direction": direction_label(&iv), "kind": iv.kind })
        }
        None => {
            let [m, f, u] = world::pronoun_class_counts(&cf);
            json!({ "pronoun_classes": { "male": m, "female": f, "undecided": u }, "records": corpus.len(), "direction": "erase", "kind": iv.kind })
        }
    };
    println!("{summary}");
    Ok(())
}

/// Reads `{"id", "text"}` lines from an external inverter and aligns them
/// with the corpus.
fn merge_texts(corpus: &Corpus, path: &Path) -> Result<Corpus> {
    let rows: Vec<serde_json::Value> = rio::read_jsonl(open(path)?)?;
    let mut texts = std::collections::HashMap::new();
    for r in &rows {
        let id = r.get("id").and_then(|v| v.as_str()).ok_or_else(|| Error::Format(format!("{}: row without id", path.display())))?;
        let text = r.get("text").and_then(|v| v.as_str()).ok_or_else(|| Error::Format(format!("{}: row without text", path.display())))?;
        texts.insert(id.to_string(), text.to_string());
    }
    let records = corpus
        .records
        .iter()
        .map(|r| {
            let text = texts.get(&r.id).ok_or_else(|| Error::Alignment(format!("{} has no text for {}", path.display(), r.id)))?;
            Ok(Record { text: text.clone(), ..r.clone() })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus::new(records))
}

fn corpus_from_sidecar(rows: &[SidecarRow]) -> Corpus {
    Corpus::new(rows.iter().map(|r| Record { id: r.id.clone(), text: String::new(), z: r.z, y: r.y.clone() }).collect())
}

fn sidecar_path(emb: &Path, explicit: Option<&Path>) -> PathBuf {
    match explicit {
        Some(p) => p.to_path_buf(),
        None => {
            let mut s = emb.as_os_str().to_owned();
            s.push(".jsonl");
            PathBuf::from(s)
        }
    }
}

fn write_embeddings(out: &Path, sidecar: Option<&Path>, x: &repcf::linalg::Matrix, corpus: &Corpus) -> Result<()> {
    save(out, |w| Ok(EmbeddingFile::from_matrix(x).write_to(w)?))?;
    let rows: Vec<SidecarRow> = corpus.records.iter().map(|r| SidecarRow { id: r.id.clone(), z: r.z, y: r.y.clone() }).collect();
    save(&sidecar_path(out, sidecar), |w| Ok(rio::write_jsonl(w, &rows)?))?;
    Ok(())
}

fn read_set(input: &EmbIn) -> Result<(LabeledEmbeddingSet, Vec<SidecarRow>)> {
    let x = EmbeddingFile::read_from(open(&input.embeddings)?)?.to_matrix()?;
    let path = sidecar_path(&input.embeddings, input.labels.as_deref());
    let rows: Vec<SidecarRow> = rio::read_jsonl(open(&path)?)?;
    if rows.len() != x.rows() {
        return Err(Error::Format(format!("{} has {} rows for {} embeddings", path.display(), rows.len(), x.rows())).into());
    }
    let y = if rows.iter().all(|r| r.y.is_some()) { Some(rows.iter().map(|r| r.y.clone().unwrap()).collect()) } else { None };
    let set = LabeledEmbeddingSet::new(x, rows.iter().map(|r| r.z).collect(), y).map_err(|e| Error::Format(e.to_string()))?;
    Ok((set, rows))
}

fn read_corpus(p: &Path) -> Result<Corpus> {
    Ok(rio::read_corpus(open(p)?)?)
}

fn open(p: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(p).with_context(|| format!("opening {}", p.display()))?))
}

fn create(p: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?))
}

/// Creates `p` (and its parent directory), runs `f` on it and flushes.
fn save(p: &Path, f: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    let mut w = create(p)?;
    f(&mut w)?;
    w.flush().with_context(|| format!("writing {}", p.display()))
}
