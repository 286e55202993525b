//! Parameter estimation.
//!
//! Class-based models are trained on the exact L2-regularised likelihood;
//! classless models use noise-contrastive estimation with a smoothed unigram
//! noise distribution. Both run minibatch AdaGrad with early stopping on
//! development perplexity.
//!
//! Minibatch gradients are computed over fixed-size chunks in parallel and
//! reduced in chunk order, so results do not depend on the thread count.

pub mod config;

use std::collections::HashMap;
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use config::{parse_key_values, RunConfig};

use crate::clustering::ClassPartition;
use crate::corpus::{extract_all, NGramInstance, Vocabulary, PAD_ID};
use crate::linalg::{axpy, dot, log_sigmoid, log_sum_exp, sigmoid, Matrix};
use crate::model::{LanguageModel, ModelConfig, ParamBlocks};
use crate::morphology::{FactorVocabulary, WordFactorization};
use crate::{eval, Error, Result};

/// Instances per parallel work unit. Fixed so that the reduction order is
/// independent of the number of threads.
const CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingConfig {
    /// Minibatch size L.
    pub minibatch_size: usize,
    /// AdaGrad step size.
    pub step_size: f64,
    pub l2_lambda: f64,
    pub regularize_biases: bool,
    /// NCE noise samples per datum.
    pub nce_noise: usize,
    pub init_sigma: f64,
    pub adagrad_epsilon: f64,
    pub max_epochs: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            minibatch_size: 10_000,
            step_size: 0.05,
            l2_lambda: 1e-5,
            regularize_biases: true,
            nce_noise: 10,
            init_sigma: 0.01,
            adagrad_epsilon: 1e-8,
            max_epochs: 10,
            seed: 1,
        }
    }
}

impl TrainingConfig {
    // Negated comparisons so that NaN fails every check.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.minibatch_size == 0 {
            return bad("minibatch_size must be positive");
        }
        if !(self.step_size > 0.0) {
            return bad("step_size must be positive");
        }
        if !(self.l2_lambda >= 0.0) {
            return bad("l2_lambda must be non-negative");
        }
        if self.nce_noise == 0 {
            return bad("nce_noise must be at least 1");
        }
        if !(self.init_sigma > 0.0) {
            return bad("init_sigma must be positive");
        }
        if !(self.adagrad_epsilon > 0.0) {
            return bad("adagrad_epsilon must be positive");
        }
        Ok(())
    }

    pub fn l2(&self) -> L2 {
        L2 {
            lambda: self.l2_lambda,
            include_biases: self.regularize_biases,
        }
    }
}

/// The L2 penalty `lambda * ||theta||^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2 {
    pub lambda: f64,
    pub include_biases: bool,
}

impl L2 {
    pub fn new(lambda: f64) -> Self {
        Self {
            lambda,
            include_biases: true,
        }
    }

    /// Adds `2 lambda theta` to `grads` and returns the penalty value.
    pub fn apply(&self, params: &ParamBlocks, grads: &mut ParamBlocks) -> f64 {
        if self.lambda == 0.0 {
            return 0.0;
        }
        for ((kind, g), (_, p)) in grads.blocks_mut().into_iter().zip(params.blocks()) {
            if kind.is_bias() && !self.include_biases {
                continue;
            }
            axpy(2.0 * self.lambda, p, g);
        }
        self.lambda * params.sum_squares(self.include_biases)
    }
}

/// Add-one smoothed unigram log-probabilities over scorable words
/// (`-inf` for PAD).
pub fn smoothed_unigram_log_probs(vocab: &Vocabulary) -> Vec<f64> {
    let total = vocab.token_total() as f64 + vocab.num_scorable() as f64;
    (0..vocab.len())
        .map(|w| {
            if vocab.is_scorable(w) {
                ((vocab.count(w) as f64 + 1.0) / total).ln()
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect()
}

/// Initial parameters: biases at add-one smoothed log unigram probabilities
/// of words (and classes), everything else i.i.d. `N(0, init_sigma^2)`.
/// Gaussian blocks are drawn in the order `C_j, Q_f, R_f, S` from one seeded
/// stream.
pub fn init_params(
    config: &ModelConfig,
    vocab: &Vocabulary,
    factorization: &WordFactorization,
    partition: Option<&ClassPartition>,
    init_sigma: f64,
    seed: u64,
) -> Result<ParamBlocks> {
    config.validate()?;
    if init_sigma.is_nan() || init_sigma <= 0.0 {
        return Err(Error::InvalidArgument("init_sigma must be positive".into()));
    }
    let nv = vocab.len();
    let d = config.dim;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let transforms = (0..config.context_len())
        .map(|_| Matrix::gaussian(d, d, init_sigma, &mut rng))
        .collect();
    let rows = |additive: bool| if additive { factorization.num_factors() } else { nv };
    let context_factors = Matrix::gaussian(rows(config.context_additive), d, init_sigma, &mut rng);
    let target_factors = Matrix::gaussian(rows(config.output_additive), d, init_sigma, &mut rng);

    let mut word_bias = smoothed_unigram_log_probs(vocab);
    word_bias[PAD_ID] = 0.0;

    let (class_vectors, class_bias) = if config.class_based {
        let p = partition.ok_or_else(|| Error::ModelMismatch("class-based model needs a partition".into()))?;
        let s = Matrix::gaussian(p.num_classes(), d, init_sigma, &mut rng);
        let mut class_counts = vec![0u64; p.num_classes()];
        let mut live = vec![false; p.num_classes()];
        for w in vocab.scorable_ids() {
            class_counts[p.class_of(w)] += vocab.count(w);
            live[p.class_of(w)] = true;
        }
        let n_live = live.iter().filter(|&&l| l).count() as f64;
        let total = vocab.token_total() as f64 + n_live;
        let t = class_counts
            .iter()
            .zip(&live)
            .map(|(&c, &l)| if l { ((c as f64 + 1.0) / total).ln() } else { 0.0 })
            .collect();
        (Some(s), Some(t))
    } else {
        (None, None)
    };
    Ok(ParamBlocks {
        transforms,
        context_factors,
        target_factors,
        word_bias,
        class_vectors,
        class_bias,
    })
}

/// Builds a freshly initialised model.
pub fn init_model(
    config: ModelConfig,
    vocab: Vocabulary,
    factors: FactorVocabulary,
    factorization: WordFactorization,
    partition: Option<ClassPartition>,
    init_sigma: f64,
    seed: u64,
) -> Result<LanguageModel> {
    let params = init_params(&config, &vocab, &factorization, partition.as_ref(), init_sigma, seed)?;
    LanguageModel::new(config, vocab, factors, factorization, partition, params)
}

/// Gradient rows indexed by word id, stored densely in insertion order.
struct SparseRows {
    dim: usize,
    index: HashMap<usize, usize>,
    ids: Vec<usize>,
    data: Vec<f64>,
}

impl SparseRows {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            index: HashMap::new(),
            ids: Vec::new(),
            data: Vec::new(),
        }
    }

    fn row_mut(&mut self, id: usize) -> &mut [f64] {
        let dim = self.dim;
        let slot = *self.index.entry(id).or_insert_with(|| {
            self.ids.push(id);
            self.data.resize(self.data.len() + dim, 0.0);
            self.ids.len() - 1
        });
        &mut self.data[slot * dim..(slot + 1) * dim]
    }

    fn iter(&self) -> impl Iterator<Item = (usize, &[f64])> {
        self.ids
            .iter()
            .enumerate()
            .map(move |(slot, &id)| (id, &self.data[slot * self.dim..(slot + 1) * self.dim]))
    }
}

/// Gradient contributions of one chunk of instances.
struct Partial {
    loss: f64,
    transforms: Vec<Matrix>,
    class_vectors: Option<Matrix>,
    class_bias: Option<Vec<f64>>,
    word_bias: SparseRows,
    context_words: SparseRows,
    target_words: SparseRows,
    // scratch
    p: Vec<f64>,
    gp: Vec<f64>,
}

impl Partial {
    fn new(model: &LanguageModel) -> Self {
        let d = model.config().dim;
        let params = model.params();
        Self {
            loss: 0.0,
            transforms: params.transforms.iter().map(|_| Matrix::zeros(d, d)).collect(),
            class_vectors: params.class_vectors.as_ref().map(|s| Matrix::zeros(s.rows(), d)),
            class_bias: params.class_bias.as_ref().map(|t| vec![0.0; t.len()]),
            word_bias: SparseRows::new(1),
            context_words: SparseRows::new(d),
            target_words: SparseRows::new(d),
            p: vec![0.0; d],
            gp: vec![0.0; d],
        }
    }

    /// Adds `dnu * dnu/dtheta` for word `v`'s score.
    fn word_score_grad(&mut self, model: &LanguageModel, v: usize, dnu: f64) {
        axpy(dnu, &self.p, self.target_words.row_mut(v));
        self.word_bias.row_mut(v)[0] += dnu;
        axpy(dnu, model.compiled_target().row(v), &mut self.gp);
    }

    /// Back-propagates `gp = dL/dp` into the transforms and context words.
    fn backprop_prediction(&mut self, model: &LanguageModel, context: &[usize]) {
        for (j, &w) in context.iter().enumerate() {
            let q = model.compiled_context().row(w);
            let cj = &model.params().transforms[j];
            let gc = &mut self.transforms[j];
            for (a, &qa) in q.iter().enumerate() {
                if qa != 0.0 {
                    axpy(qa, &self.gp, gc.row_mut(a));
                }
            }
            let gq = self.context_words.row_mut(w);
            for (a, g) in gq.iter_mut().enumerate() {
                *g += dot(cj.row(a), &self.gp);
            }
        }
    }

    fn add_classed(&mut self, model: &LanguageModel, inst: &NGramInstance) {
        model.predict_into(&inst.context, &mut self.p);
        self.gp.fill(0.0);
        let w = inst.target;
        let c = model.class_of(w);

        let classes = model.live_classes();
        let tau: Vec<f64> = classes.iter().map(|&k| model.score_class(&self.p, k)).collect();
        let zc = log_sum_exp(&tau);
        let members = model.class_members(c);
        let nu: Vec<f64> = members.iter().map(|&v| model.score_word(&self.p, v)).collect();
        let zw = log_sum_exp(&nu);
        let tau_c = model.score_class(&self.p, c);
        let nu_w = model.score_word(&self.p, w);
        self.loss -= (tau_c - zc) + (nu_w - zw);

        let s = model.params().class_vectors.as_ref().expect("class-based");
        let gs = self.class_vectors.as_mut().expect("class-based");
        let gt = self.class_bias.as_mut().expect("class-based");
        for (&k, &score) in classes.iter().zip(&tau) {
            let mut g = (score - zc).exp();
            if k == c {
                g -= 1.0;
            }
            axpy(g, &self.p, gs.row_mut(k));
            gt[k] += g;
            axpy(g, s.row(k), &mut self.gp);
        }
        for (&v, &score) in members.iter().zip(&nu) {
            let mut g = (score - zw).exp();
            if v == w {
                g -= 1.0;
            }
            self.word_score_grad(model, v, g);
        }
        self.backprop_prediction(model, &inst.context);
    }

    fn add_nce(
        &mut self,
        model: &LanguageModel,
        inst: &NGramInstance,
        noise: &[usize],
        noise_dist: &NoiseDistribution,
    ) {
        model.predict_into(&inst.context, &mut self.p);
        self.gp.fill(0.0);
        let log_k = (noise.len() as f64).ln();
        let delta = |x: usize, p: &[f64]| model.score_word(p, x) - (log_k + noise_dist.log_probs[x]);

        let dw = delta(inst.target, &self.p);
        self.loss -= log_sigmoid(dw);
        self.word_score_grad(model, inst.target, sigmoid(dw) - 1.0);
        for &x in noise {
            let dx = delta(x, &self.p);
            self.loss -= log_sigmoid(-dx);
            self.word_score_grad(model, x, sigmoid(dx));
        }
        self.backprop_prediction(model, &inst.context);
    }
}

/// Reduces chunk partials in order and maps word-level gradients onto the
/// factor tables through M.
fn reduce(model: &LanguageModel, partials: Vec<Partial>) -> (f64, ParamBlocks) {
    let mut grads = model.params().zeros_like();
    let nv = model.vocab().len();
    let d = model.config().dim;
    let mut loss = 0.0;
    let mut gq = Matrix::zeros(nv, d);
    let mut gr = Matrix::zeros(nv, d);
    let mut touched_q = vec![false; nv];
    let mut touched_r = vec![false; nv];
    for part in partials {
        loss += part.loss;
        for (g, pg) in grads.transforms.iter_mut().zip(&part.transforms) {
            axpy(1.0, pg.as_slice(), g.as_mut_slice());
        }
        if let (Some(g), Some(pg)) = (grads.class_vectors.as_mut(), part.class_vectors.as_ref()) {
            axpy(1.0, pg.as_slice(), g.as_mut_slice());
        }
        if let (Some(g), Some(pg)) = (grads.class_bias.as_mut(), part.class_bias.as_ref()) {
            axpy(1.0, pg, g);
        }
        for (v, b) in part.word_bias.iter() {
            grads.word_bias[v] += b[0];
        }
        for (v, row) in part.context_words.iter() {
            touched_q[v] = true;
            axpy(1.0, row, gq.row_mut(v));
        }
        for (v, row) in part.target_words.iter() {
            touched_r[v] = true;
            axpy(1.0, row, gr.row_mut(v));
        }
    }
    let cfg = model.config();
    let m = model.factorization();
    scatter(
        &gq,
        &touched_q,
        cfg.context_additive.then_some(m),
        &mut grads.context_factors,
    );
    scatter(
        &gr,
        &touched_r,
        cfg.output_additive.then_some(m),
        &mut grads.target_factors,
    );
    (loss, grads)
}

/// `out += M^T word_grads` (or the identity when `m` is `None`).
fn scatter(word_grads: &Matrix, touched: &[bool], m: Option<&WordFactorization>, out: &mut Matrix) {
    for (v, _) in touched.iter().enumerate().filter(|(_, &t)| t) {
        let g = word_grads.row(v);
        match m {
            Some(m) => {
                for &(f, k) in m.row(v) {
                    axpy(k as f64, g, out.row_mut(f));
                }
            }
            None => axpy(1.0, g, out.row_mut(v)),
        }
    }
}

/// Negative log-likelihood of the batch under the class-factored model plus
/// the L2 penalty, with gradients for every parameter block.
pub fn minibatch_loss_and_grad(model: &LanguageModel, batch: &[NGramInstance], l2: L2) -> (f64, ParamBlocks) {
    assert!(model.config().class_based, "exact training needs a class-based model");
    let partials: Vec<Partial> = batch
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut part = Partial::new(model);
            for inst in chunk {
                part.add_classed(model, inst);
            }
            part
        })
        .collect();
    let (loss, mut grads) = reduce(model, partials);
    let penalty = l2.apply(model.params(), &mut grads);
    (loss + penalty, grads)
}

/// Noise distribution for NCE: add-one smoothed unigram over scorable words.
#[derive(Debug, Clone)]
pub struct NoiseDistribution {
    log_probs: Vec<f64>,
    sampler: WeightedIndex<f64>,
}

impl NoiseDistribution {
    pub fn unigram(vocab: &Vocabulary) -> Self {
        let log_probs = smoothed_unigram_log_probs(vocab);
        let weights: Vec<f64> = log_probs.iter().map(|lp| lp.exp()).collect();
        let sampler = WeightedIndex::new(&weights).expect("at least one scorable word");
        Self { log_probs, sampler }
    }

    pub fn log_prob(&self, w: usize) -> f64 {
        self.log_probs[w]
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler.sample(rng)
    }
}

/// NCE loss with `k` noise samples per datum (drawn from a stream seeded
/// with `seed`) and its gradients. Model scores are used unnormalised.
pub fn nce_loss_and_grad(
    model: &LanguageModel,
    batch: &[NGramInstance],
    k: usize,
    noise: &NoiseDistribution,
    seed: u64,
) -> Result<(f64, ParamBlocks)> {
    if k < 1 {
        return Err(Error::InvalidArgument("NCE needs at least one noise sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<usize> = (0..batch.len() * k).map(|_| noise.sample(&mut rng)).collect();
    let partials: Vec<Partial> = batch
        .par_chunks(CHUNK)
        .zip(samples.par_chunks(CHUNK * k))
        .map(|(chunk, noise_chunk)| {
            let mut part = Partial::new(model);
            for (inst, xs) in chunk.iter().zip(noise_chunk.chunks(k)) {
                part.add_nce(model, inst, xs, noise);
            }
            part
        })
        .collect();
    Ok(reduce(model, partials))
}

/// One AdaGrad update: `accum += g*g; theta -= step * g / (sqrt(accum) + eps)`.
pub fn adagrad_step(params: &mut ParamBlocks, accum: &mut ParamBlocks, grads: &ParamBlocks, step: f64, eps: f64) {
    for (((_, p), (_, a)), (_, g)) in params
        .blocks_mut()
        .into_iter()
        .zip(accum.blocks_mut())
        .zip(grads.blocks())
    {
        assert_eq!(p.len(), g.len(), "gradient shape mismatch");
        for ((pi, ai), &gi) in p.iter_mut().zip(a.iter_mut()).zip(g) {
            if gi == 0.0 {
                continue;
            }
            *ai += gi * gi;
            *pi -= step * gi / (ai.sqrt() + eps);
        }
    }
}

/// Optimiser state carried across epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub adagrad_accum: ParamBlocks,
    pub epoch: usize,
    pub best_dev_ppl: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-instance training objective over the epoch, L2 excluded.
    pub train_loss: f64,
    pub dev_ppl: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were returned (0 = initial parameters).
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Trains on id-encoded sentences, evaluating exact development perplexity
/// after each epoch. Stops at the first epoch whose development perplexity
/// exceeds the previous epoch's and restores the previous parameters.
pub fn train(
    model: &mut LanguageModel,
    train_sentences: &[Vec<usize>],
    dev_sentences: &[Vec<usize>],
    cfg: &TrainingConfig,
    on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    let has_dev = dev_sentences.iter().any(|s| !s.is_empty());
    train_with_evaluator(
        model,
        train_sentences,
        cfg,
        |m, _| {
            if has_dev {
                eval::perplexity(m, dev_sentences).map(|r| Some(r.total_ppl))
            } else {
                Ok(None)
            }
        },
        on_epoch,
    )
}

/// [`train`] with a caller-supplied development evaluator.
pub fn train_with_evaluator(
    model: &mut LanguageModel,
    train_sentences: &[Vec<usize>],
    cfg: &TrainingConfig,
    mut dev_eval: impl FnMut(&LanguageModel, usize) -> Result<Option<f64>>,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut instances = extract_all(train_sentences, model.config().order);
    if instances.is_empty() {
        return Err(Error::EmptyData("training stream has no tokens"));
    }
    let noise = (!model.config().class_based).then(|| NoiseDistribution::unigram(model.vocab()));
    let l2 = cfg.l2();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = TrainState {
        adagrad_accum: model.params().zeros_like(),
        epoch: 0,
        best_dev_ppl: None,
    };
    let mut best_params = model.params().clone();
    let mut best_epoch = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;

    while state.epoch < cfg.max_epochs {
        state.epoch += 1;
        let start = Instant::now();
        instances.shuffle(&mut rng);
        let mut data_loss = 0.0;
        for batch in instances.chunks(cfg.minibatch_size) {
            let grads = match &noise {
                None => {
                    let (loss, grads) = minibatch_loss_and_grad(model, batch, L2::new(0.0));
                    data_loss += loss;
                    let mut grads = grads;
                    l2.apply(model.params(), &mut grads);
                    grads
                }
                Some(noise) => {
                    let (loss, mut grads) = nce_loss_and_grad(model, batch, cfg.nce_noise, noise, rng.next_u64())?;
                    data_loss += loss;
                    l2.apply(model.params(), &mut grads);
                    grads
                }
            };
            adagrad_step(
                model.params_mut(),
                &mut state.adagrad_accum,
                &grads,
                cfg.step_size,
                cfg.adagrad_epsilon,
            );
            model.recompile();
        }
        if !data_loss.is_finite() || !model.params().is_finite() {
            return Err(Error::InvalidArgument(format!(
                "training diverged in epoch {}; lower the step size",
                state.epoch
            )));
        }

        let dev_ppl = dev_eval(model, state.epoch)?;
        let record = EpochRecord {
            epoch: state.epoch,
            train_loss: data_loss / instances.len() as f64,
            dev_ppl,
            seconds: start.elapsed().as_secs_f64(),
        };
        on_epoch(&record);
        history.push(record);

        match (dev_ppl, state.best_dev_ppl) {
            (Some(now), Some(prev)) if now > prev => {
                model.set_params(best_params);
                stopped_early = true;
                break;
            }
            _ => {
                best_params = model.params().clone();
                best_epoch = state.epoch;
                if dev_ppl.is_some() {
                    state.best_dev_ppl = dev_ppl;
                }
            }
        }
    }
    Ok(TrainReport {
        history,
        best_epoch,
        stopped_early,
    })
}
