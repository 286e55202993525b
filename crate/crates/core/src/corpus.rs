//! Text ingestion, token normalisation, vocabulary construction with
//! singleton pruning, and n-gram instance extraction.
//!
//! Input text is pre-tokenised: one sentence per line, tokens separated by
//! whitespace. Two ids are reserved in every vocabulary: [`UNK_ID`] for
//! unknown and pruned words, and [`PAD_ID`] for the sentence-boundary symbol
//! that left-pads contexts. PAD is never a prediction target.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

pub const UNK: &str = "<unk>";
pub const PAD: &str = "<pad>";
pub const UNK_ID: usize = 0;
pub const PAD_ID: usize = 1;

/// Fraction of Cyrillic characters below which the optional filter maps a
/// token to UNK.
pub const CYRILLIC_THRESHOLD: f64 = 0.8;

/// Lowercases a token and maps every decimal digit to `0`.
pub fn normalize_token(token: &str) -> String {
    token
        .chars()
        .flat_map(char::to_lowercase)
        .map(|c| if c.is_ascii_digit() { '0' } else { c })
        .collect()
}

/// Share of characters in `token` that belong to the Cyrillic blocks.
pub fn cyrillic_ratio(token: &str) -> f64 {
    let mut total = 0usize;
    let mut cyr = 0usize;
    for c in token.chars() {
        total += 1;
        if matches!(c as u32, 0x0400..=0x052F | 0x1C80..=0x1C8F | 0x2DE0..=0x2DFF | 0xA640..=0xA69F) {
            cyr += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        cyr as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TokenNormalizer {
    /// Map tokens with fewer than 80% Cyrillic characters to UNK.
    pub cyrillic_filter: bool,
}

impl TokenNormalizer {
    pub fn normalize(&self, token: &str) -> String {
        let t = normalize_token(token);
        if t == PAD || (self.cyrillic_filter && cyrillic_ratio(&t) < CYRILLIC_THRESHOLD) {
            return UNK.to_string();
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VocabOptions {
    pub kappa: f64,
    pub seed: u64,
    pub normalizer: TokenNormalizer,
}

impl Default for VocabOptions {
    fn default() -> Self {
        Self {
            kappa: 0.05,
            seed: 1,
            normalizer: TokenNormalizer::default(),
        }
    }
}

/// Word type <-> dense id mapping with training counts.
///
/// Ids `0` and `1` are UNK and PAD; the remaining types follow in order of
/// descending count, ties broken lexicographically. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    types: Vec<String>,
    id_of: HashMap<String, usize>,
    counts: Vec<u64>,
    kappa: f64,
    normalizer: TokenNormalizer,
}

impl Vocabulary {
    /// Builds a vocabulary from explicit `(type, count)` pairs. Types must be
    /// distinct, non-reserved and have positive counts.
    pub fn from_counts<S: Into<String>>(
        words: impl IntoIterator<Item = (S, u64)>,
        unk_count: u64,
        kappa: f64,
    ) -> Result<Self> {
        let mut entries: Vec<(String, u64)> = words.into_iter().map(|(w, c)| (w.into(), c)).collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let mut types = vec![UNK.to_string(), PAD.to_string()];
        let mut counts = vec![unk_count, 0];
        for (w, c) in entries {
            if c == 0 {
                return Err(Error::InvalidArgument(format!("type `{w}` has zero count")));
            }
            types.push(w);
            counts.push(c);
        }
        Self::from_parts(types, counts, kappa, TokenNormalizer::default())
    }

    pub(crate) fn from_parts(
        types: Vec<String>,
        counts: Vec<u64>,
        kappa: f64,
        normalizer: TokenNormalizer,
    ) -> Result<Self> {
        if types.len() < 2 || types[UNK_ID] != UNK || types[PAD_ID] != PAD {
            return Err(Error::InvalidArgument(
                "vocabulary must start with the reserved UNK and PAD types".into(),
            ));
        }
        let mut id_of = HashMap::with_capacity(types.len());
        for (i, t) in types.iter().enumerate() {
            if id_of.insert(t.clone(), i).is_some() {
                return Err(Error::Duplicate(t.clone()));
            }
        }
        Ok(Self {
            types,
            id_of,
            counts,
            kappa,
            normalizer,
        })
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn unk_id(&self) -> usize {
        UNK_ID
    }

    pub fn pad_id(&self) -> usize {
        PAD_ID
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn normalizer(&self) -> TokenNormalizer {
        self.normalizer
    }

    pub fn word(&self, id: usize) -> &str {
        &self.types[id]
    }

    pub fn types(&self) -> &[String] {
        &self.types
    }

    /// Exact lookup of an already-normalised type.
    pub fn id(&self, word: &str) -> Option<usize> {
        self.id_of.get(word).copied()
    }

    pub fn count(&self, id: usize) -> u64 {
        self.counts[id]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Whether `id` can be a prediction target (everything but PAD).
    pub fn is_scorable(&self, id: usize) -> bool {
        id != PAD_ID
    }

    pub fn scorable_ids(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.len()).filter(|&i| i != PAD_ID)
    }

    pub fn num_scorable(&self) -> usize {
        self.len() - 1
    }

    /// Total training tokens, UNK replacements included.
    pub fn token_total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Normalises a raw token and maps it to its id, UNK when unknown.
    pub fn encode_token(&self, raw: &str) -> usize {
        let t = self.normalizer.normalize(raw);
        self.id(&t).unwrap_or(UNK_ID)
    }

    pub fn encode_sentence<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<usize> {
        tokens.iter().map(|t| self.encode_token(t.as_ref())).collect()
    }

    /// Writes `id<TAB>type<TAB>count` rows, preceded by a `#` metadata line.
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "# kappa={} cyrillic_filter={}",
            self.kappa, self.normalizer.cyrillic_filter
        )?;
        for (i, (t, c)) in self.types.iter().zip(&self.counts).enumerate() {
            writeln!(w, "{i}\t{t}\t{c}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut types = Vec::new();
        let mut counts = Vec::new();
        let mut kappa = 0.0;
        let mut normalizer = TokenNormalizer::default();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = lineno + 1;
            if let Some(meta) = line.strip_prefix('#') {
                for kv in meta.split_whitespace() {
                    match kv.split_once('=') {
                        Some(("kappa", v)) => kappa = v.parse().map_err(|_| Error::parse(lineno, "bad kappa"))?,
                        Some(("cyrillic_filter", v)) => {
                            normalizer.cyrillic_filter =
                                v.parse().map_err(|_| Error::parse(lineno, "bad cyrillic_filter"))?
                        }
                        _ => {}
                    }
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let mut fields = line.split('\t');
            let (Some(id), Some(t), Some(c), None) = (fields.next(), fields.next(), fields.next(), fields.next())
            else {
                return Err(Error::parse(lineno, "expected id<TAB>type<TAB>count"));
            };
            let id: usize = id.parse().map_err(|_| Error::parse(lineno, "bad id"))?;
            if id != types.len() {
                return Err(Error::parse(
                    lineno,
                    format!("ids must be dense; expected {}", types.len()),
                ));
            }
            let c: u64 = c.parse().map_err(|_| Error::parse(lineno, "bad count"))?;
            types.push(t.to_string());
            counts.push(c);
        }
        Self::from_parts(types, counts, kappa, normalizer)
    }
}

/// Counts normalised types and prunes `round(kappa * S)` of the `S` singleton
/// types, chosen by a seeded shuffle of the lexicographically sorted list.
pub fn build_vocabulary<I, S, T>(sentences: I, kappa: f64, seed: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: IntoIterator<Item = T>,
    T: AsRef<str>,
{
    build_vocabulary_with(
        sentences,
        &VocabOptions {
            kappa,
            seed,
            ..VocabOptions::default()
        },
    )
}

pub fn build_vocabulary_with<I, S, T>(sentences: I, opts: &VocabOptions) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: IntoIterator<Item = T>,
    T: AsRef<str>,
{
    if !(0.0..=1.0).contains(&opts.kappa) {
        return Err(Error::InvalidArgument(format!(
            "kappa must lie in [0, 1], got {}",
            opts.kappa
        )));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    let mut unk_tokens = 0u64;
    let mut total = 0u64;
    for sentence in sentences {
        for tok in sentence {
            let t = opts.normalizer.normalize(tok.as_ref());
            total += 1;
            if t == UNK {
                unk_tokens += 1;
            } else {
                *counts.entry(t).or_insert(0) += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::EmptyData("training stream has no tokens"));
    }

    let mut singletons: Vec<&String> = counts.iter().filter(|(_, &c)| c == 1).map(|(w, _)| w).collect();
    singletons.sort();
    let n_prune = (opts.kappa * singletons.len() as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    singletons.shuffle(&mut rng);
    let pruned: Vec<String> = singletons[..n_prune].iter().map(|s| (*s).clone()).collect();
    for w in &pruned {
        counts.remove(w);
    }

    let mut entries: Vec<(String, u64)> = counts.into_iter().collect();
    entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let mut types = vec![UNK.to_string(), PAD.to_string()];
    let mut type_counts = vec![unk_tokens + n_prune as u64, 0];
    for (w, c) in entries {
        types.push(w);
        type_counts.push(c);
    }
    Vocabulary::from_parts(types, type_counts, opts.kappa, opts.normalizer)
}

/// One prediction event: `n - 1` context ids (oldest first) and a target.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NGramInstance {
    pub context: Vec<usize>,
    pub target: usize,
}

/// One instance per token; contexts reaching before the sentence start are
/// left-padded with [`PAD_ID`].
pub fn extract_ngrams(sentence: &[usize], n: usize) -> Vec<NGramInstance> {
    assert!(n >= 2, "n-gram order must be at least 2");
    let ctx_len = n - 1;
    let mut padded = vec![PAD_ID; ctx_len];
    padded.extend_from_slice(sentence);
    (0..sentence.len())
        .map(|i| NGramInstance {
            context: padded[i..i + ctx_len].to_vec(),
            target: padded[i + ctx_len],
        })
        .collect()
}

pub fn extract_all<'a>(sentences: impl IntoIterator<Item = &'a Vec<usize>>, n: usize) -> Vec<NGramInstance> {
    sentences.into_iter().flat_map(|s| extract_ngrams(s, n)).collect()
}

/// Reads whitespace-tokenised sentences, one per line. Blank lines are skipped.
pub fn read_sentences<R: BufRead>(r: R) -> Result<Vec<Vec<String>>> {
    let mut out = Vec::new();
    for line in r.lines() {
        let line = line?;
        let toks: Vec<String> = line.split_whitespace().map(str::to_string).collect();
        if !toks.is_empty() {
            out.push(toks);
        }
    }
    Ok(out)
}
