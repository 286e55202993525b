//! The log-bilinear scorer family.
//!
//! A context of `n - 1` words is turned into a prediction vector
//! `p = sum_j q_j C_j`. A word scores `nu(w) = p . r_w + b_w` and, in the
//! class-factored variants, a class scores `tau(c) = p . s_c + t_c`. The
//! classless models normalise `nu` over every scorable word; the class-based
//! models normalise `tau` over classes and `nu` within the target's class.
//!
//! Context and target word vectors are either free per-word rows or the
//! additive composition of factor rows (`Q = M Q_f`, `R = M R_f`), chosen by
//! [`ModelConfig::context_additive`] and [`ModelConfig::output_additive`].
//! The compiled word tables are kept alongside the parameters and must be
//! rebuilt with [`LanguageModel::recompile`] after any parameter change.

mod cache;
mod container;

use std::fmt;

pub use cache::{CacheStats, NormalizerCache, Scope};
pub use container::{read_model, write_model, FORMAT_VERSION, MAGIC};

use crate::clustering::ClassPartition;
use crate::corpus::{Vocabulary, PAD_ID, UNK_ID};
use crate::linalg::{add_vec_mat, dot, log_sum_exp, Matrix};
use crate::morphology::{compile_word_table, oov_vector, FactorVocabulary, PostHocMap, WordFactorization};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    /// n-gram order; contexts hold `order - 1` words.
    pub order: usize,
    pub dim: usize,
    pub context_additive: bool,
    pub output_additive: bool,
    pub class_based: bool,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order < 2 {
            return Err(Error::InvalidArgument(format!(
                "order must be >= 2, got {}",
                self.order
            )));
        }
        if self.dim < 1 {
            return Err(Error::InvalidArgument("dim must be >= 1".into()));
        }
        Ok(())
    }

    pub fn context_len(&self) -> usize {
        self.order - 1
    }
}

impl fmt::Display for ModelConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let base = if self.class_based { "CLBL" } else { "LBL" };
        let suffix = match (self.context_additive, self.output_additive) {
            (false, false) => "",
            (true, false) => "+c",
            (false, true) => "+o",
            (true, true) => "++",
        };
        write!(f, "{base}{suffix}")
    }
}

/// Identifies a parameter block, for per-block reporting and regularisation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Transform(usize),
    ContextFactors,
    TargetFactors,
    WordBias,
    ClassVectors,
    ClassBias,
}

impl BlockKind {
    pub fn is_bias(self) -> bool {
        matches!(self, BlockKind::WordBias | BlockKind::ClassBias)
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockKind::Transform(j) => write!(f, "C_{}", j + 1),
            BlockKind::ContextFactors => f.write_str("Q_f"),
            BlockKind::TargetFactors => f.write_str("R_f"),
            BlockKind::WordBias => f.write_str("b"),
            BlockKind::ClassVectors => f.write_str("S"),
            BlockKind::ClassBias => f.write_str("t"),
        }
    }
}

/// Trainable parameters. The same shape doubles as a gradient and as an
/// AdaGrad accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlocks {
    pub transforms: Vec<Matrix>,
    pub context_factors: Matrix,
    pub target_factors: Matrix,
    pub word_bias: Vec<f64>,
    pub class_vectors: Option<Matrix>,
    pub class_bias: Option<Vec<f64>>,
}

impl ParamBlocks {
    pub fn zeros(
        config: &ModelConfig,
        num_words: usize,
        context_rows: usize,
        target_rows: usize,
        num_classes: usize,
    ) -> Self {
        let d = config.dim;
        Self {
            transforms: (0..config.context_len()).map(|_| Matrix::zeros(d, d)).collect(),
            context_factors: Matrix::zeros(context_rows, d),
            target_factors: Matrix::zeros(target_rows, d),
            word_bias: vec![0.0; num_words],
            class_vectors: config.class_based.then(|| Matrix::zeros(num_classes, d)),
            class_bias: config.class_based.then(|| vec![0.0; num_classes]),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for (_, b) in z.blocks_mut() {
            b.fill(0.0);
        }
        z
    }

    /// Blocks in declaration order: `C_1..C_{n-1}, Q_f, R_f, b, S, t`.
    pub fn blocks(&self) -> Vec<(BlockKind, &[f64])> {
        let mut out: Vec<(BlockKind, &[f64])> = self
            .transforms
            .iter()
            .enumerate()
            .map(|(j, m)| (BlockKind::Transform(j), m.as_slice()))
            .collect();
        out.push((BlockKind::ContextFactors, self.context_factors.as_slice()));
        out.push((BlockKind::TargetFactors, self.target_factors.as_slice()));
        out.push((BlockKind::WordBias, &self.word_bias));
        if let Some(s) = &self.class_vectors {
            out.push((BlockKind::ClassVectors, s.as_slice()));
        }
        if let Some(t) = &self.class_bias {
            out.push((BlockKind::ClassBias, t));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(BlockKind, &mut [f64])> {
        let mut out: Vec<(BlockKind, &mut [f64])> = self
            .transforms
            .iter_mut()
            .enumerate()
            .map(|(j, m)| (BlockKind::Transform(j), m.as_mut_slice()))
            .collect();
        out.push((BlockKind::ContextFactors, self.context_factors.as_mut_slice()));
        out.push((BlockKind::TargetFactors, self.target_factors.as_mut_slice()));
        out.push((BlockKind::WordBias, &mut self.word_bias));
        if let Some(s) = &mut self.class_vectors {
            out.push((BlockKind::ClassVectors, s.as_mut_slice()));
        }
        if let Some(t) = &mut self.class_bias {
            out.push((BlockKind::ClassBias, t));
        }
        out
    }

    /// Squared L2 norm, optionally leaving the biases out.
    pub fn sum_squares(&self, include_biases: bool) -> f64 {
        self.blocks()
            .into_iter()
            .filter(|(k, _)| include_biases || !k.is_bias())
            .map(|(_, b)| b.iter().map(|x| x * x).sum::<f64>())
            .sum()
    }

    /// `self += alpha * other`, block by block.
    pub fn add_scaled(&mut self, alpha: f64, other: &ParamBlocks) {
        for ((_, a), (_, b)) in self.blocks_mut().into_iter().zip(other.blocks()) {
            debug_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter_mut().zip(b) {
                *x += alpha * y;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks().iter().all(|(_, b)| b.iter().all(|x| x.is_finite()))
    }

    pub fn num_values(&self) -> usize {
        self.blocks().iter().map(|(_, b)| b.len()).sum()
    }
}

/// The prediction vector for one context.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionState {
    pub prediction: Vec<f64>,
    pub context: Vec<usize>,
}

/// A complete model: structure (vocabulary, factorisation, partition),
/// parameters and compiled word tables.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel {
    config: ModelConfig,
    vocab: Vocabulary,
    factors: FactorVocabulary,
    factorization: WordFactorization,
    partition: Option<ClassPartition>,
    params: ParamBlocks,
    compiled_context: Matrix,
    compiled_target: Matrix,
    scorable: Vec<usize>,
    live_classes: Vec<usize>,
    scorable_members: Vec<Vec<usize>>,
}

impl LanguageModel {
    pub fn new(
        config: ModelConfig,
        vocab: Vocabulary,
        factors: FactorVocabulary,
        factorization: WordFactorization,
        partition: Option<ClassPartition>,
        params: ParamBlocks,
    ) -> Result<Self> {
        config.validate()?;
        let nv = vocab.len();
        if factorization.num_words() != nv {
            return Err(Error::ModelMismatch(format!(
                "factorisation has {} words, vocabulary {}",
                factorization.num_words(),
                nv
            )));
        }
        if factorization.num_factors() != factors.len() {
            return Err(Error::ModelMismatch(format!(
                "factorisation uses {} factors, factor vocabulary has {}",
                factorization.num_factors(),
                factors.len()
            )));
        }
        match (&partition, config.class_based) {
            (Some(p), true) if p.num_words() != nv => {
                return Err(Error::ModelMismatch(format!(
                    "partition covers {} words, vocabulary has {}",
                    p.num_words(),
                    nv
                )))
            }
            (None, true) => return Err(Error::ModelMismatch("class-based model needs a partition".into())),
            (Some(_), false) => return Err(Error::ModelMismatch("classless model given a partition".into())),
            _ => {}
        }
        let expected = ParamBlocks::zeros(
            &config,
            nv,
            Self::rows_for(config.context_additive, &factorization, nv),
            Self::rows_for(config.output_additive, &factorization, nv),
            partition.as_ref().map_or(0, ClassPartition::num_classes),
        );
        for ((k, a), (_, b)) in expected.blocks().into_iter().zip(params.blocks()) {
            if a.len() != b.len() {
                return Err(Error::ModelMismatch(format!(
                    "parameter block {k} has {} values, expected {}",
                    b.len(),
                    a.len()
                )));
            }
        }
        if expected.blocks().len() != params.blocks().len() {
            return Err(Error::ModelMismatch(
                "parameter blocks do not match the configuration".into(),
            ));
        }

        let scorable: Vec<usize> = vocab.scorable_ids().collect();
        let (live_classes, scorable_members) = match &partition {
            Some(p) => {
                let members: Vec<Vec<usize>> = (0..p.num_classes())
                    .map(|c| p.members(c).iter().copied().filter(|&w| w != PAD_ID).collect())
                    .collect();
                let live = (0..p.num_classes()).filter(|&c| !members[c].is_empty()).collect();
                (live, members)
            }
            None => (Vec::new(), Vec::new()),
        };
        let mut model = Self {
            config,
            vocab,
            factors,
            factorization,
            partition,
            compiled_context: Matrix::zeros(0, 0),
            compiled_target: Matrix::zeros(0, 0),
            params,
            scorable,
            live_classes,
            scorable_members,
        };
        model.recompile();
        Ok(model)
    }

    fn rows_for(additive: bool, m: &WordFactorization, nv: usize) -> usize {
        if additive {
            m.num_factors()
        } else {
            nv
        }
    }

    /// Rows of the context factor table (|F_q|).
    pub fn context_rows(&self) -> usize {
        Self::rows_for(self.config.context_additive, &self.factorization, self.vocab.len())
    }

    /// Rows of the target factor table (|F_r|).
    pub fn target_rows(&self) -> usize {
        Self::rows_for(self.config.output_additive, &self.factorization, self.vocab.len())
    }

    /// Rebuilds the compiled word tables from the factor tables.
    pub fn recompile(&mut self) {
        self.compiled_context = if self.config.context_additive {
            compile_word_table(&self.factorization, &self.params.context_factors)
                .expect("shapes validated at construction")
        } else {
            self.params.context_factors.clone()
        };
        self.compiled_target = if self.config.output_additive {
            compile_word_table(&self.factorization, &self.params.target_factors)
                .expect("shapes validated at construction")
        } else {
            self.params.target_factors.clone()
        };
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn factors(&self) -> &FactorVocabulary {
        &self.factors
    }

    pub fn factorization(&self) -> &WordFactorization {
        &self.factorization
    }

    pub fn partition(&self) -> Option<&ClassPartition> {
        self.partition.as_ref()
    }

    pub fn params(&self) -> &ParamBlocks {
        &self.params
    }

    /// Mutable access to the parameters. Call [`Self::recompile`] afterwards.
    pub fn params_mut(&mut self) -> &mut ParamBlocks {
        &mut self.params
    }

    /// Replaces the parameters and recompiles.
    pub fn set_params(&mut self, params: ParamBlocks) {
        assert_eq!(
            params.num_values(),
            self.params.num_values(),
            "parameter shape mismatch"
        );
        self.params = params;
        self.recompile();
    }

    pub fn compiled_context(&self) -> &Matrix {
        &self.compiled_context
    }

    pub fn compiled_target(&self) -> &Matrix {
        &self.compiled_target
    }

    /// Every id except PAD.
    pub fn scorable_words(&self) -> &[usize] {
        &self.scorable
    }

    /// Classes with at least one scorable member; the class softmax ranges
    /// over these.
    pub fn live_classes(&self) -> &[usize] {
        &self.live_classes
    }

    /// Scorable members of class `c`.
    pub fn class_members(&self, c: usize) -> &[usize] {
        &self.scorable_members[c]
    }

    pub fn class_of(&self, w: usize) -> usize {
        self.partition.as_ref().expect("class-based model").class_of(w)
    }

    pub fn predict_into(&self, context: &[usize], p: &mut [f64]) {
        debug_assert_eq!(context.len(), self.config.context_len());
        p.fill(0.0);
        for (j, &w) in context.iter().enumerate() {
            add_vec_mat(self.compiled_context.row(w), &self.params.transforms[j], p);
        }
    }

    pub fn predict(&self, context: &[usize]) -> PredictionState {
        let mut p = vec![0.0; self.config.dim];
        self.predict_into(context, &mut p);
        PredictionState {
            prediction: p,
            context: context.to_vec(),
        }
    }

    /// Prediction from explicit context vectors (e.g. composed for OOV words).
    pub fn predict_from_vectors(&self, vectors: &[&[f64]]) -> Vec<f64> {
        assert_eq!(vectors.len(), self.config.context_len());
        let mut p = vec![0.0; self.config.dim];
        for (j, q) in vectors.iter().enumerate() {
            add_vec_mat(q, &self.params.transforms[j], &mut p);
        }
        p
    }

    #[inline]
    pub fn score_word(&self, p: &[f64], w: usize) -> f64 {
        dot(p, self.compiled_target.row(w)) + self.params.word_bias[w]
    }

    #[inline]
    pub fn score_class(&self, p: &[f64], c: usize) -> f64 {
        let s = self.params.class_vectors.as_ref().expect("class-based model");
        let t = self.params.class_bias.as_ref().expect("class-based model");
        dot(p, s.row(c)) + t[c]
    }

    /// `log sum exp nu(v)` over all scorable words.
    pub fn full_log_normalizer(&self, p: &[f64]) -> f64 {
        let scores: Vec<f64> = self.scorable.iter().map(|&v| self.score_word(p, v)).collect();
        log_sum_exp(&scores)
    }

    /// `log sum exp tau(c)` over live classes.
    pub fn class_log_normalizer(&self, p: &[f64]) -> f64 {
        let scores: Vec<f64> = self.live_classes.iter().map(|&c| self.score_class(p, c)).collect();
        log_sum_exp(&scores)
    }

    /// `log sum exp nu(v)` over the scorable members of class `c`.
    pub fn member_log_normalizer(&self, p: &[f64], c: usize) -> f64 {
        let scores: Vec<f64> = self.scorable_members[c]
            .iter()
            .map(|&v| self.score_word(p, v))
            .collect();
        log_sum_exp(&scores)
    }

    /// Exact softmax over the whole scorable vocabulary, ignoring classes.
    pub fn log_prob_full(&self, context: &[usize], w: usize) -> f64 {
        debug_assert_ne!(w, PAD_ID, "PAD is not a prediction target");
        let p = self.predict(context).prediction;
        self.score_word(&p, w) - self.full_log_normalizer(&p)
    }

    /// `log P(c_w | h) + log P(w | h, c_w)`, consulting and filling `cache`
    /// when one is given.
    pub fn log_prob_classed(&self, context: &[usize], w: usize, cache: Option<&mut NormalizerCache>) -> f64 {
        debug_assert_ne!(w, PAD_ID, "PAD is not a prediction target");
        let c = self.class_of(w);
        match cache {
            None => {
                let p = self.predict(context).prediction;
                let zc = self.class_log_normalizer(&p);
                let zw = self.member_log_normalizer(&p, c);
                (self.score_class(&p, c) - zc) + (self.score_word(&p, w) - zw)
            }
            Some(cache) => cache.log_prob_classed(self, context, w, c),
        }
    }

    /// Log-probability under the configured variant.
    pub fn log_prob(&self, context: &[usize], w: usize, cache: Option<&mut NormalizerCache>) -> f64 {
        if self.config.class_based {
            self.log_prob_classed(context, w, cache)
        } else {
            match cache {
                Some(cache) => cache.log_prob_full(self, context, w),
                None => self.log_prob_full(context, w),
            }
        }
    }

    /// Probabilities of every word id under the configured variant; PAD gets 0.
    pub fn full_distribution(&self, context: &[usize]) -> Vec<f64> {
        let p = self.predict(context).prediction;
        let mut out = vec![0.0; self.vocab.len()];
        if self.config.class_based {
            let zc = self.class_log_normalizer(&p);
            for &c in &self.live_classes {
                let lc = self.score_class(&p, c) - zc;
                let zw = self.member_log_normalizer(&p, c);
                for &v in &self.scorable_members[c] {
                    out[v] = (lc + (self.score_word(&p, v) - zw)).exp();
                }
            }
        } else {
            let z = self.full_log_normalizer(&p);
            for &v in &self.scorable {
                out[v] = (self.score_word(&p, v) - z).exp();
            }
        }
        out
    }

    /// Maps raw tokens to ids, unknown words to UNK.
    pub fn encode(&self, tokens: &[impl AsRef<str>]) -> Vec<usize> {
        self.vocab.encode_sentence(tokens)
    }

    /// `[q; r]` for a known word id.
    pub fn word_vector(&self, w: usize) -> Vec<f64> {
        [self.compiled_context.row(w), self.compiled_target.row(w)].concat()
    }

    /// `[q; r]` for an arbitrary normalised word. Known words use their
    /// compiled rows. With `compose` set, OOV words of a doubly additive model
    /// are composed from their known factors via `map`; everything else falls
    /// back to UNK.
    pub fn composed_word_vector(&self, word: &str, map: Option<&PostHocMap<'_>>, compose: bool) -> (Vec<f64>, bool) {
        if let Some(id) = self.vocab.id(word) {
            return (self.word_vector(id), false);
        }
        let fully_additive = self.config.context_additive && self.config.output_additive;
        match map {
            Some(map) if compose && fully_additive => (
                oov_vector(
                    word,
                    map,
                    &self.params.context_factors,
                    &self.params.target_factors,
                    self.compiled_context.row(UNK_ID),
                    self.compiled_target.row(UNK_ID),
                ),
                true,
            ),
            _ => (self.word_vector(UNK_ID), true),
        }
    }

    /// Context vector for a raw word at query time: UNK for unknown words,
    /// or the composition of its known factors when `compose` is set.
    pub fn context_vector(&self, word: &str, map: Option<&PostHocMap<'_>>, compose: bool) -> Vec<f64> {
        if let Some(id) = self.vocab.id(word) {
            return self.compiled_context.row(id).to_vec();
        }
        if compose && self.config.context_additive {
            if let Some(map) = map {
                let ids = map.lookup(word);
                if !ids.is_empty() {
                    return crate::morphology::compose_vector(&self.params.context_factors, &ids)
                        .expect("post hoc factors are known");
                }
            }
        }
        self.compiled_context.row(UNK_ID).to_vec()
    }
}

#[cfg(test)]
mod tests;
