use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use morphlm::clustering::{brown_cluster, default_num_classes, frequency_bin, load_partition, BigramCounts};
use morphlm::corpus::{build_vocabulary_with, read_sentences, TokenNormalizer, VocabOptions, PAD_ID};
use morphlm::eval::{self, EvalReport, FrequencyTable, SimilarityDataset};
use morphlm::model::{read_model, write_model};
use morphlm::morphology::{build_factorization, parse_segmentations, write_word_vectors, Segmentations};
use morphlm::training::config::{parse_key_values, RunConfig};
use morphlm::training::{init_model, train as train_model};
use morphlm::{
    ClassPartition, Error, FactorVocabulary, LanguageModel, NormalizerCache, PostHocMap, Vocabulary, WordFactorization,
};

use crate::manifest::Recorder;
use crate::{
    ClusterArgs, ClusterMethod, ExportArgs, PplArgs, PreprocessArgs, ScoreArgs, SimArgs, TrainArgs, VectorKind,
};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_MISMATCH: u8 = 4;

pub const VOCAB_FILE: &str = "vocab.tsv";
pub const FACTORS_FILE: &str = "factors.tsv";
pub const MU_FILE: &str = "mu.tsv";

/// Bad flags or configuration, as opposed to bad input data.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return EXIT_USAGE;
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::ModelMismatch(_) | Error::DimensionMismatch { .. } | Error::Unknown(_) | Error::Missing(_) => {
                    EXIT_MISMATCH
                }
                _ => EXIT_DATA,
            };
        }
    }
    EXIT_DATA
}

fn open(path: &Path) -> Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    Ok(BufReader::new(f))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn read_corpus(path: &Path) -> Result<Vec<Vec<String>>> {
    read_sentences(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn read_segmentations(path: &Path) -> Result<Segmentations> {
    parse_segmentations(open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn load_model(path: &Path) -> Result<LanguageModel> {
    read_model(open(path)?).with_context(|| format!("reading model {}", path.display()))
}

pub fn preprocess(a: &PreprocessArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.kappa) {
        return Err(usage(format!("--kappa must be in [0, 1], got {}", a.kappa)));
    }
    let mut rec = Recorder::new("preprocess");
    rec.config("kappa", a.kappa);
    rec.config("cyrillic_filter", a.cyrillic_filter);
    rec.seed(a.seed);
    rec.input(&a.input)?;
    let sentences = read_corpus(&a.input)?;
    let opts = VocabOptions {
        kappa: a.kappa,
        seed: a.seed,
        normalizer: TokenNormalizer {
            cyrillic_filter: a.cyrillic_filter,
        },
    };
    let vocab = build_vocabulary_with(&sentences, &opts)?;
    let segs = match &a.segmentation {
        Some(p) => {
            rec.input(p)?;
            read_segmentations(p)?
        }
        None => Segmentations::new(),
    };
    let (factors, mu) = build_factorization(&vocab, &segs);
    rec.phase("build");

    fs::create_dir_all(&a.out_dir).with_context(|| format!("cannot create {}", a.out_dir.display()))?;
    let paths = [VOCAB_FILE, FACTORS_FILE, MU_FILE].map(|f| a.out_dir.join(f));
    let mut w = create(&paths[0])?;
    vocab.write_tsv(&mut w)?;
    w.flush()?;
    let mut w = create(&paths[1])?;
    factors.write_tsv(&mut w)?;
    w.flush()?;
    let mut w = create(&paths[2])?;
    mu.write_tsv(&mut w, &vocab, &factors)?;
    w.flush()?;
    rec.phase("write");
    eprintln!(
        "vocabulary {} types ({} scorable), {} factors, {} tokens",
        vocab.len(),
        vocab.num_scorable(),
        factors.len(),
        vocab.token_total()
    );
    rec.finish(&paths.iter().map(PathBuf::as_path).collect::<Vec<_>>())
}

struct Prepared {
    vocab: Vocabulary,
    factors: FactorVocabulary,
    mu: WordFactorization,
}

fn load_prepared(dir: &Path, rec: &mut Recorder) -> Result<Prepared> {
    let [vp, fp, mp] = [VOCAB_FILE, FACTORS_FILE, MU_FILE].map(|f| dir.join(f));
    for p in [&vp, &fp, &mp] {
        rec.input(p)?;
    }
    let vocab = Vocabulary::read_tsv(open(&vp)?).with_context(|| format!("reading {}", vp.display()))?;
    let factors = FactorVocabulary::read_tsv(open(&fp)?).with_context(|| format!("reading {}", fp.display()))?;
    let mu = WordFactorization::read_tsv(open(&mp)?, &vocab, &factors)
        .with_context(|| format!("reading {}", mp.display()))?;
    Ok(Prepared { vocab, factors, mu })
}

pub fn cluster(a: &ClusterArgs) -> Result<()> {
    let mut rec = Recorder::new("cluster");
    rec.input(&a.vocab)?;
    let vocab = Vocabulary::read_tsv(open(&a.vocab)?).with_context(|| format!("reading {}", a.vocab.display()))?;
    let classes = a.classes.unwrap_or_else(|| default_num_classes(vocab.len()));
    rec.config("method", format!("{:?}", a.method).to_lowercase());
    rec.config("classes", classes);
    let partition = match a.method {
        ClusterMethod::Brown => {
            let corpus = a
                .corpus
                .as_ref()
                .ok_or_else(|| usage("--method brown needs --corpus"))?;
            rec.input(corpus)?;
            rec.config("max_iters", a.max_iters);
            let ids: Vec<Vec<usize>> = read_corpus(corpus)?.iter().map(|s| vocab.encode_sentence(s)).collect();
            let counts = BigramCounts::from_sentences(&ids, vocab.len());
            brown_cluster(&counts, classes, a.max_iters)?
        }
        ClusterMethod::Freq => frequency_bin(&vocab, classes)?,
        ClusterMethod::File => {
            let p = a
                .partition
                .as_ref()
                .ok_or_else(|| usage("--method file needs --partition"))?;
            rec.input(p)?;
            load_partition(open(p)?, &vocab).with_context(|| format!("reading {}", p.display()))?
        }
    };
    rec.phase("cluster");
    let mut w = create(&a.out)?;
    partition.write_tsv(&mut w, &vocab)?;
    w.flush()?;
    eprintln!("{} classes over {} words", partition.num_classes(), vocab.len());
    rec.finish(&[&a.out])
}

fn run_config(a: &TrainArgs, rec: &mut Recorder) -> Result<RunConfig> {
    let mut map = match &a.config {
        Some(p) => {
            rec.input(p)?;
            let text = fs::read_to_string(p).with_context(|| format!("cannot open {}", p.display()))?;
            parse_key_values(&text).map_err(|e| usage(format!("{}: {e}", p.display())))?
        }
        None => Default::default(),
    };
    for o in &a.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| usage(format!("override `{o}` is not key=value")))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    RunConfig::from_map(&map).map_err(|e| usage(format!("configuration: {e}")))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut rec = Recorder::new("train");
    let cfg = run_config(a, &mut rec)?;
    for line in cfg.to_key_values().lines() {
        if let Some((k, v)) = line.split_once('=') {
            rec.config(k, v);
        }
    }
    rec.seed(cfg.training.seed);
    let Prepared { vocab, factors, mu } = load_prepared(&a.data, &mut rec)?;
    let partition: Option<ClassPartition> = if cfg.model.class_based {
        let p = a
            .classes
            .as_ref()
            .ok_or_else(|| usage(format!("{} needs --classes", cfg.model)))?;
        rec.input(p)?;
        Some(load_partition(open(p)?, &vocab).with_context(|| format!("reading {}", p.display()))?)
    } else {
        None
    };
    rec.input(&a.train)?;
    let train_ids: Vec<Vec<usize>> = read_corpus(&a.train)?
        .iter()
        .map(|s| vocab.encode_sentence(s))
        .collect();
    let dev_ids: Vec<Vec<usize>> = match &a.dev {
        Some(p) => {
            rec.input(p)?;
            read_corpus(p)?.iter().map(|s| vocab.encode_sentence(s)).collect()
        }
        None => Vec::new(),
    };
    let mut model = init_model(
        cfg.model,
        vocab,
        factors,
        mu,
        partition,
        cfg.training.init_sigma,
        cfg.training.seed,
    )?;
    rec.phase("load");
    eprintln!(
        "training {} (order {}, dim {}) on {} sentences",
        cfg.model,
        cfg.model.order,
        cfg.model.dim,
        train_ids.len()
    );
    let report = train_model(&mut model, &train_ids, &dev_ids, &cfg.training, |e| {
        let dev = e.dev_ppl.map_or_else(|| "-".to_string(), |p| format!("{p:.3}"));
        eprintln!(
            "epoch {}\ttrain_loss {:.5}\tdev_ppl {dev}\ttime {:.1}s",
            e.epoch, e.train_loss, e.seconds
        );
    })?;
    rec.phase("train");
    rec.config("best_epoch", report.best_epoch);
    rec.config("stopped_early", report.stopped_early);
    let mut w = create(&a.out)?;
    write_model(&model, &mut w)?;
    w.flush()?;
    eprintln!("kept epoch {} parameters; wrote {}", report.best_epoch, a.out.display());
    rec.finish(&[&a.out])
}

#[derive(Serialize)]
struct GroupLine<'a> {
    group: &'a str,
    tokens: usize,
    share: f64,
    ppl: f64,
}

fn write_report(w: &mut dyn Write, title: &str, report: &EvalReport, json: bool) -> Result<()> {
    if json {
        let total = GroupLine {
            group: "total",
            tokens: report.token_count,
            share: 1.0,
            ppl: report.total_ppl,
        };
        writeln!(w, "{}", serde_json::to_string(&total)?)?;
        for g in &report.groups {
            let line = GroupLine {
                group: &g.label,
                tokens: g.tokens,
                share: g.share,
                ppl: g.ppl,
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
        return Ok(());
    }
    writeln!(w, "{:<12} {:>10} {:>8} {:>12}", title, "tokens", "share", "ppl")?;
    for g in &report.groups {
        writeln!(
            w,
            "{:<12} {:>10} {:>7.2}% {:>12.3}",
            g.label,
            g.tokens,
            100.0 * g.share,
            g.ppl
        )?;
    }
    writeln!(
        w,
        "{:<12} {:>10} {:>7.2}% {:>12.3}",
        "total", report.token_count, 100.0, report.total_ppl
    )?;
    Ok(())
}

/// Stdout, or `path` with a manifest sidecar.
fn with_output(path: Option<&PathBuf>, rec: Recorder, body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<()> {
    match path {
        Some(p) => {
            let mut w = create(p)?;
            body(&mut w)?;
            w.flush()?;
            drop(w);
            rec.finish(&[p])
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            body(&mut w)?;
            w.flush()?;
            Ok(())
        }
    }
}

pub fn ppl(a: &PplArgs) -> Result<()> {
    if a.by_freq && a.by_label.is_some() {
        return Err(usage("--by-freq and --by-label are exclusive"));
    }
    let mut rec = Recorder::new("ppl");
    rec.input(&a.model)?;
    rec.input(&a.test)?;
    let model = load_model(&a.model)?;
    let raw = read_corpus(&a.test)?;
    let (title, report) = if a.by_freq {
        let table = match &a.train_corpus {
            Some(p) => {
                rec.input(p)?;
                let norm = model.vocab().normalizer();
                let train: Vec<Vec<String>> = read_corpus(p)?
                    .iter()
                    .map(|s| s.iter().map(|t| norm.normalize(t)).collect())
                    .collect();
                FrequencyTable::from_sentences(&train)
            }
            None => FrequencyTable::from_vocabulary(model.vocab()),
        };
        let norm = model.vocab().normalizer();
        let test: Vec<Vec<String>> = raw
            .iter()
            .map(|s| s.iter().map(|t| norm.normalize(t)).collect())
            .collect();
        ("bin", eval::ppl_by_frequency(&model, &test, &table)?)
    } else if let Some(lp) = &a.by_label {
        rec.input(lp)?;
        let labels = eval::read_labels(open(lp)?)?;
        let ids: Vec<Vec<usize>> = raw.iter().map(|s| model.encode(s)).collect();
        ("label", eval::ppl_by_label(&model, &ids, &labels)?)
    } else {
        let ids: Vec<Vec<usize>> = raw.iter().map(|s| model.encode(s)).collect();
        ("", eval::perplexity(&model, &ids)?)
    };
    rec.phase("evaluate");
    with_output(a.out.as_ref(), rec, |w| write_report(w, title, &report, a.json))
}

#[derive(Serialize)]
struct SimLine<'a> {
    word1: &'a str,
    word2: &'a str,
    rating: f64,
    similarity: f64,
    oov: bool,
}

#[derive(Serialize)]
struct SimSummary {
    pairs: usize,
    oov_pairs: usize,
    rho: Option<f64>,
    compose: bool,
}

pub fn sim(a: &SimArgs) -> Result<()> {
    let compose = !a.no_compose;
    let mut rec = Recorder::new("sim");
    rec.config("compose", compose);
    rec.input(&a.model)?;
    rec.input(&a.dataset)?;
    let model = load_model(&a.model)?;
    let data =
        SimilarityDataset::parse(open(&a.dataset)?).with_context(|| format!("reading {}", a.dataset.display()))?;
    let segs = match &a.segmentation {
        Some(p) => {
            rec.input(p)?;
            read_segmentations(p)?
        }
        None => Segmentations::new(),
    };
    let map = PostHocMap::new(&segs, model.factors());
    let result = eval::evaluate_similarity(&model, Some(&map), &data, compose)?;
    rec.phase("evaluate");
    let summary = SimSummary {
        pairs: data.pairs.len(),
        oov_pairs: result.oov_count,
        rho: result.rho,
        compose,
    };
    with_output(a.out.as_ref(), rec, |w| {
        if a.pairs {
            for (p, s) in data.pairs.iter().zip(&result.scores) {
                if a.json {
                    let line = SimLine {
                        word1: &p.word1,
                        word2: &p.word2,
                        rating: p.rating,
                        similarity: s.similarity,
                        oov: s.oov1 || s.oov2,
                    };
                    writeln!(w, "{}", serde_json::to_string(&line)?)?;
                } else {
                    writeln!(w, "{}\t{}\t{}\t{}", p.word1, p.word2, p.rating, s.similarity)?;
                }
            }
        }
        if a.json {
            writeln!(w, "{}", serde_json::to_string(&summary)?)?;
        } else {
            let rho = summary
                .rho
                .map_or_else(|| "undefined".to_string(), |r| format!("{r:.4}"));
            writeln!(w, "pairs {}\toov_pairs {}\trho {rho}", summary.pairs, summary.oov_pairs)?;
        }
        Ok(())
    })
}

/// Reads sentences from stdin; writes each sentence's per-token natural-log
/// probabilities, a tab, and their sum. Normalisers are cached across the
/// whole stream.
pub fn score(a: &ScoreArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let ctx_len = model.config().context_len();
    let mut cache = NormalizerCache::new();
    let stdin = io::stdin();
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let (mut tokens, mut total) = (0usize, 0.0f64);
    for line in stdin.lock().lines() {
        let line = line?;
        let words: Vec<&str> = line.split_whitespace().collect();
        let ids = model.encode(&words);
        let mut history = vec![PAD_ID; ctx_len];
        let mut lps = Vec::with_capacity(ids.len());
        for &w in &ids {
            lps.push(model.log_prob(&history, w, Some(&mut cache)));
            history.remove(0);
            history.push(w);
        }
        let sum: f64 = lps.iter().sum();
        tokens += lps.len();
        total += sum;
        let cols: Vec<String> = lps.iter().map(|x| format!("{x:.6}")).collect();
        writeln!(out, "{}\t{sum:.6}", cols.join(" "))?;
    }
    out.flush()?;
    if tokens > 0 {
        let s = cache.stats();
        eprintln!(
            "tokens {tokens}\tlog_prob {total:.6}\tppl {:.4}\tscore_evaluations {}",
            (-total / tokens as f64).exp(),
            s.score_evaluations
        );
    }
    Ok(())
}

pub fn export(a: &ExportArgs) -> Result<()> {
    let mut rec = Recorder::new("export");
    rec.config("kind", format!("{:?}", a.kind).to_lowercase());
    rec.input(&a.model)?;
    let model = load_model(&a.model)?;
    let vocab = model.vocab();
    let rows = (0..vocab.len()).filter(|&w| w != PAD_ID).map(|w| {
        let v = match a.kind {
            VectorKind::Concat => model.word_vector(w),
            VectorKind::Context => model.compiled_context().row(w).to_vec(),
            VectorKind::Target => model.compiled_target().row(w).to_vec(),
        };
        (vocab.word(w), v)
    });
    let mut w = create(&a.out)?;
    write_word_vectors(&mut w, rows)?;
    w.flush()?;
    drop(w);
    rec.phase("export");
    rec.finish(&[&a.out])
}
