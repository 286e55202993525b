//! Perplexity with per-group breakdowns, and word-similarity evaluation.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use rayon::prelude::*;

use crate::corpus::{extract_ngrams, normalize_token};
use crate::linalg::{cosine, Matrix};
use crate::model::LanguageModel;
use crate::morphology::PostHocMap;
use crate::{Error, Result};

/// Group used for tokens without a label.
pub const REST_LABEL: &str = "Rest";
/// Frequency bin of words never seen in training.
pub const UNSEEN_BIN: &str = "unseen";

#[derive(Debug, Clone, PartialEq)]
pub struct GroupStat {
    pub label: String,
    pub tokens: usize,
    /// Fraction of all scored tokens in this group.
    pub share: f64,
    pub nll: f64,
    pub ppl: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub total_ppl: f64,
    pub token_count: usize,
    /// Summed negative natural-log probability.
    pub total_nll: f64,
    pub groups: Vec<GroupStat>,
}

impl EvalReport {
    pub fn group(&self, label: &str) -> Option<&GroupStat> {
        self.groups.iter().find(|g| g.label == label)
    }
}

/// Natural-log probability of every token, sentence by sentence. Sentences
/// are scored in parallel; the output order follows the input.
pub fn score_tokens(model: &LanguageModel, sentences: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let n = model.config().order;
    sentences
        .par_iter()
        .map(|s| {
            extract_ngrams(s, n)
                .iter()
                .map(|inst| model.log_prob(&inst.context, inst.target, None))
                .collect()
        })
        .collect()
}

/// Builds a report from per-token log-probabilities and a group label per
/// token. Groups are listed in label order.
pub fn report_from_scores(log_probs: &[f64], labels: &[String]) -> Result<EvalReport> {
    if log_probs.is_empty() {
        return Err(Error::EmptyData("no tokens to score"));
    }
    if labels.len() != log_probs.len() {
        return Err(Error::DimensionMismatch {
            expected: log_probs.len(),
            found: labels.len(),
        });
    }
    let mut acc: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    let mut total_nll = 0.0;
    for (lp, label) in log_probs.iter().zip(labels) {
        total_nll -= lp;
        let e = acc.entry(label.as_str()).or_default();
        e.0 += 1;
        e.1 -= lp;
    }
    let n = log_probs.len();
    let groups = acc
        .into_iter()
        .map(|(label, (tokens, nll))| GroupStat {
            label: label.to_string(),
            tokens,
            share: tokens as f64 / n as f64,
            nll,
            ppl: (nll / tokens as f64).exp(),
        })
        .collect();
    Ok(EvalReport {
        total_ppl: (total_nll / n as f64).exp(),
        token_count: n,
        total_nll,
        groups,
    })
}

/// `exp(-(1/N) sum ln P(w_i))` over every token, UNK targets included.
pub fn perplexity(model: &LanguageModel, sentences: &[Vec<usize>]) -> Result<EvalReport> {
    let scores: Vec<f64> = score_tokens(model, sentences).into_iter().flatten().collect();
    if scores.is_empty() {
        return Err(Error::EmptyData("test set has no tokens"));
    }
    let total_nll: f64 = -scores.iter().sum::<f64>();
    let n = scores.len();
    Ok(EvalReport {
        total_ppl: (total_nll / n as f64).exp(),
        token_count: n,
        total_nll,
        groups: Vec::new(),
    })
}

/// Training-corpus frequencies of normalised word types.
#[derive(Debug, Clone, Default)]
pub struct FrequencyTable {
    counts: HashMap<String, u64>,
}

impl FrequencyTable {
    /// Counts raw training tokens, so pruned singletons keep their count of 1.
    pub fn from_sentences<S: AsRef<str>>(sentences: &[Vec<S>]) -> Self {
        let mut counts = HashMap::new();
        for s in sentences {
            for t in s {
                *counts.entry(normalize_token(t.as_ref())).or_insert(0) += 1;
            }
        }
        Self { counts }
    }

    /// Uses the vocabulary's counts; the reserved symbols count as unseen.
    pub fn from_vocabulary(vocab: &crate::Vocabulary) -> Self {
        let counts = vocab
            .types()
            .iter()
            .zip(vocab.counts())
            .enumerate()
            .filter(|&(id, _)| id != vocab.unk_id() && id != vocab.pad_id())
            .map(|(_, (t, &c))| (t.clone(), c))
            .collect();
        Self { counts }
    }

    pub fn count(&self, word: &str) -> u64 {
        self.counts.get(&normalize_token(word)).copied().unwrap_or(0)
    }
}

/// Bin label for a training count: `unseen` for 0, otherwise `10^x` with
/// `10^x <= count < 10^(x+1)`.
pub fn frequency_bin_label(count: u64) -> String {
    if count == 0 {
        return UNSEEN_BIN.to_string();
    }
    let mut x = 0;
    let mut c = count;
    while c >= 10 {
        c /= 10;
        x += 1;
    }
    format!("10^{x}")
}

/// Exponent of a bin label, with `unseen` ordered first.
fn bin_order(label: &str) -> i64 {
    label.strip_prefix("10^").and_then(|x| x.parse().ok()).unwrap_or(-1)
}

fn tokens_as_ids<S: AsRef<str>>(model: &LanguageModel, sentences: &[Vec<S>]) -> Vec<Vec<usize>> {
    sentences.iter().map(|s| model.encode(s)).collect()
}

/// Perplexity broken down by the training frequency of each test token.
/// Bins are ordered `unseen, 10^0, 10^1, ...`.
pub fn ppl_by_frequency<S: AsRef<str> + Sync>(
    model: &LanguageModel,
    sentences: &[Vec<S>],
    train: &FrequencyTable,
) -> Result<EvalReport> {
    let ids = tokens_as_ids(model, sentences);
    let scores: Vec<f64> = score_tokens(model, &ids).into_iter().flatten().collect();
    let labels: Vec<String> = sentences
        .iter()
        .flatten()
        .map(|t| frequency_bin_label(train.count(t.as_ref())))
        .collect();
    let mut report = report_from_scores(&scores, &labels)?;
    report.groups.sort_by_key(|g| bin_order(&g.label));
    Ok(report)
}

/// Reads one label sequence per line. `_` marks an unlabelled token.
pub fn read_labels<R: BufRead>(r: R) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(line.split_whitespace().map(str::to_string).collect());
    }
    Ok(out)
}

/// Perplexity broken down by a per-token label. Unlabelled tokens (`_`)
/// are reported under `Rest`, which is listed last.
pub fn ppl_by_label(model: &LanguageModel, sentences: &[Vec<usize>], labels: &[Vec<String>]) -> Result<EvalReport> {
    if labels.len() != sentences.len() {
        return Err(Error::InvalidArgument(format!(
            "label file has {} sentences, test set {}",
            labels.len(),
            sentences.len()
        )));
    }
    for (i, (s, l)) in sentences.iter().zip(labels).enumerate() {
        if s.len() != l.len() {
            return Err(Error::InvalidArgument(format!(
                "sentence {}: {} tokens but {} labels",
                i + 1,
                s.len(),
                l.len()
            )));
        }
    }
    let scores: Vec<f64> = score_tokens(model, sentences).into_iter().flatten().collect();
    let flat: Vec<String> = labels
        .iter()
        .flatten()
        .map(|l| if l == "_" { REST_LABEL.to_string() } else { l.clone() })
        .collect();
    let mut report = report_from_scores(&scores, &flat)?;
    report.groups.sort_by_key(|g| g.label == REST_LABEL);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityPair {
    pub word1: String,
    pub word2: String,
    pub rating: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityDataset {
    pub pairs: Vec<SimilarityPair>,
}

impl SimilarityDataset {
    /// Parses `word1<TAB>word2<TAB>rating` lines; words are normalised.
    pub fn parse<R: BufRead>(r: R) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(Error::parse(i + 1, "expected word1<TAB>word2<TAB>rating"));
            }
            let rating: f64 = fields[2]
                .trim()
                .parse()
                .map_err(|_| Error::parse(i + 1, format!("bad rating `{}`", fields[2])))?;
            if !rating.is_finite() {
                return Err(Error::parse(i + 1, "rating is not finite"));
            }
            let (w1, w2) = (fields[0].trim(), fields[1].trim());
            if w1.is_empty() || w2.is_empty() {
                return Err(Error::parse(i + 1, "empty word"));
            }
            pairs.push(SimilarityPair {
                word1: normalize_token(w1),
                word2: normalize_token(w2),
                rating,
            });
        }
        if pairs.is_empty() {
            return Err(Error::EmptyData("similarity dataset has no pairs"));
        }
        Ok(Self { pairs })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairScore {
    pub similarity: f64,
    pub oov1: bool,
    pub oov2: bool,
    /// One of the vectors was zero; `similarity` is then 0.
    pub zero_vector: bool,
}

/// Cosine of `[q; r]` vectors of two words. OOV words are composed from
/// their known factors when `compose` is set, otherwise they use UNK's
/// vector.
pub fn pair_similarity(
    model: &LanguageModel,
    map: Option<&PostHocMap<'_>>,
    word1: &str,
    word2: &str,
    compose: bool,
) -> PairScore {
    let (u1, oov1) = model.composed_word_vector(word1, map, compose);
    let (u2, oov2) = model.composed_word_vector(word2, map, compose);
    let (similarity, zero_vector) = match cosine(&u1, &u2) {
        Some(_) if u1 == u2 => (1.0, false),
        Some(c) => (c, false),
        None => (0.0, true),
    };
    PairScore {
        similarity,
        oov1,
        oov2,
        zero_vector,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityResult {
    pub scores: Vec<PairScore>,
    /// `None` when either score list is constant.
    pub rho: Option<f64>,
    /// Pairs with at least one OOV word.
    pub oov_count: usize,
}

pub fn evaluate_similarity(
    model: &LanguageModel,
    map: Option<&PostHocMap<'_>>,
    dataset: &SimilarityDataset,
    compose: bool,
) -> Result<SimilarityResult> {
    let scores: Vec<PairScore> = dataset
        .pairs
        .iter()
        .map(|p| pair_similarity(model, map, &p.word1, &p.word2, compose))
        .collect();
    let model_scores: Vec<f64> = scores.iter().map(|s| s.similarity).collect();
    let human: Vec<f64> = dataset.pairs.iter().map(|p| p.rating).collect();
    let rho = match spearman(&model_scores, &human) {
        Ok(r) => Some(r),
        Err(Error::UndefinedCorrelation) => None,
        Err(e) => return Err(e),
    };
    let oov_count = scores.iter().filter(|s| s.oov1 || s.oov2).count();
    Ok(SimilarityResult { scores, rho, oov_count })
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            found: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::InvalidArgument("correlation needs at least two points".into()));
    }
    pearson(&average_ranks(a), &average_ranks(b))
}

/// `[q; r]` rows for every word id.
pub fn word_table(model: &LanguageModel) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..model.vocab().len()).map(|w| model.word_vector(w)).collect();
    Matrix::from_rows(&rows)
}

/// Top `k` rows of `table` by cosine with `query`, skipping `exclude`.
/// Zero rows score 0. Ties go to the lower id.
pub fn nearest_neighbors(table: &Matrix, query: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = (0..table.rows())
        .filter(|&i| Some(i) != exclude)
        .map(|i| (i, cosine(query, table.row(i)).unwrap_or(0.0)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}
