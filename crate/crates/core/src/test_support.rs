//! Seeded random fixtures for unit tests.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::clustering::ClassPartition;
use crate::corpus::{Vocabulary, PAD_ID};
use crate::linalg::Matrix;
use crate::model::{LanguageModel, ModelConfig, ParamBlocks};
use crate::morphology::{canonical_row, FactorVocabulary, WordFactorization};

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn config(order: usize, dim: usize, c: bool, o: bool, class_based: bool) -> ModelConfig {
    ModelConfig {
        order,
        dim,
        context_additive: c,
        output_additive: o,
        class_based,
    }
}

/// `n` ids in total, UNK and PAD included, with random positive counts.
pub(crate) fn vocab(n: usize, rng: &mut ChaCha8Rng) -> Vocabulary {
    assert!(n >= 2);
    let words: Vec<(String, u64)> = (2..n).map(|i| (format!("w{i}"), rng.random_range(1..50))).collect();
    Vocabulary::from_counts(words, rng.random_range(1..10), 0.0).unwrap()
}

/// Every word gets one to three factors (repeats allowed) out of `nf`.
pub(crate) fn factorization(nv: usize, nf: usize, rng: &mut ChaCha8Rng) -> (FactorVocabulary, WordFactorization) {
    let mut fv = FactorVocabulary::default();
    for f in 0..nf {
        fv.intern(&format!("f{f}|stem"));
    }
    let rows = (0..nv)
        .map(|_| {
            let k = rng.random_range(1..=3);
            let ids: Vec<usize> = (0..k).map(|_| rng.random_range(0..nf)).collect();
            canonical_row(&ids)
        })
        .collect();
    (fv, WordFactorization::from_rows(rows, nf).unwrap())
}

pub(crate) fn identity_factorization(vocab: &Vocabulary) -> (FactorVocabulary, WordFactorization) {
    crate::morphology::build_factorization(vocab, &Default::default())
}

/// Random partition into `nc` classes, each with at least one non-PAD word.
pub(crate) fn partition(nv: usize, nc: usize, rng: &mut ChaCha8Rng) -> ClassPartition {
    let scorable: Vec<usize> = (0..nv).filter(|&w| w != PAD_ID).collect();
    assert!(nc <= scorable.len());
    let mut assign = vec![0; nv];
    for (i, &w) in scorable.iter().enumerate() {
        assign[w] = if i < nc { i } else { rng.random_range(0..nc) };
    }
    assign[PAD_ID] = rng.random_range(0..nc);
    ClassPartition::from_assignment(assign).unwrap()
}

fn fill(xs: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) {
    for x in xs {
        *x = sigma * (rng.random::<f64>() * 2.0 - 1.0) * 1.7;
    }
}

pub(crate) fn random_params(
    model_rows: (usize, usize, usize, usize),
    cfg: &ModelConfig,
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> ParamBlocks {
    let (nv, fq, fr, nc) = model_rows;
    let mut p = ParamBlocks::zeros(cfg, nv, fq, fr, nc);
    for (_, b) in p.blocks_mut() {
        fill(b, sigma, rng);
    }
    p
}

/// A model with random structure and parameters. `nf = None` uses the
/// identity factorisation.
pub(crate) fn random_model(
    cfg: ModelConfig,
    nv: usize,
    nf: Option<usize>,
    nc: usize,
    sigma: f64,
    seed: u64,
) -> LanguageModel {
    let mut r = rng(seed);
    let v = vocab(nv, &mut r);
    let (fv, m) = match nf {
        Some(nf) => factorization(nv, nf, &mut r),
        None => identity_factorization(&v),
    };
    let part = cfg.class_based.then(|| partition(nv, nc, &mut r));
    let rows_for = |additive: bool| if additive { m.num_factors() } else { nv };
    let params = random_params(
        (
            nv,
            rows_for(cfg.context_additive),
            rows_for(cfg.output_additive),
            part.as_ref().map_or(0, |p| p.num_classes()),
        ),
        &cfg,
        sigma,
        &mut r,
    );
    LanguageModel::new(cfg, v, fv, m, part, params).unwrap()
}

pub(crate) fn random_context(nv: usize, len: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(0..nv)).collect()
}

pub(crate) fn random_target(nv: usize, rng: &mut ChaCha8Rng) -> usize {
    loop {
        let w = rng.random_range(0..nv);
        if w != PAD_ID {
            return w;
        }
    }
}

pub(crate) fn matrix(rows: &[&[f64]]) -> Matrix {
    Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
}
