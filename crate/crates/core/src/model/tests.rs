use proptest::prelude::*;

use super::*;
use crate::corpus::PAD_ID;
use crate::linalg::Matrix;
use crate::test_support::{self as ts, config, matrix, random_model};

fn bias_only(nv: usize, class_based: bool) -> LanguageModel {
    let cfg = config(2, 2, false, false, class_based);
    let mut m = random_model(cfg, nv, None, 1, 0.0, 1);
    let mut p = m.params().zeros_like();
    if class_based {
        p.class_vectors = Some(Matrix::zeros(1, 2));
    }
    m.set_params(p);
    m
}

#[test]
fn prediction_examples() {
    let cfg = config(2, 2, false, false, false);
    let mut m = random_model(cfg, 4, None, 1, 0.3, 2);
    m.params_mut().transforms[0] = Matrix::identity(2);
    m.recompile();
    assert_eq!(m.predict(&[3]).prediction, m.compiled_context().row(3));

    m.params_mut().context_factors = Matrix::zeros(4, 2);
    m.recompile();
    assert_eq!(m.predict(&[2]).prediction, vec![0.0, 0.0]);

    let cfg = config(3, 2, false, false, false);
    let mut m = random_model(cfg, 4, None, 1, 0.3, 3);
    let p = m.params_mut();
    p.context_factors = matrix(&[&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
    p.transforms[0] = Matrix::identity(2);
    p.transforms[1] = matrix(&[&[2.0, 0.0], &[0.0, 2.0]]);
    m.recompile();
    assert_eq!(m.predict(&[2, 3]).prediction, vec![1.0, 2.0]);
}

#[test]
fn score_examples() {
    let cfg = config(2, 2, false, false, true);
    let mut m = random_model(cfg, 4, None, 2, 0.3, 4);
    assert_eq!(m.score_word(&[0.0, 0.0], 2), m.params().word_bias[2]);
    assert_eq!(
        m.score_class(&[0.0, 0.0], 1),
        m.params().class_bias.as_ref().unwrap()[1]
    );

    let p = m.params_mut();
    p.target_factors.row_mut(2).copy_from_slice(&[2.0, 3.0]);
    p.word_bias[2] = 0.5;
    p.class_vectors
        .as_mut()
        .unwrap()
        .row_mut(0)
        .copy_from_slice(&[3.0, 9.0]);
    p.class_bias.as_mut().unwrap()[0] = -1.0;
    m.recompile();
    assert_eq!(m.score_word(&[1.0, 1.0], 2), 5.5);
    assert_eq!(m.score_class(&[1.0, 0.0], 0), 2.0);
}

#[test]
fn additive_target_scores_use_composed_rows() {
    let cfg = config(3, 4, false, true, false);
    let m = random_model(cfg, 12, Some(7), 1, 0.5, 5);
    let p = m.predict(&[3, 4]).prediction;
    for w in m.scorable_words().iter().copied() {
        let r = crate::morphology::compose_vector(&m.params().target_factors, &m.factorization().multiset(w)).unwrap();
        assert_eq!(
            m.score_word(&p, w),
            crate::linalg::dot(&p, &r) + m.params().word_bias[w]
        );
    }
}

#[test]
fn uniform_scores_give_uniform_probabilities() {
    let m = bias_only(12, false);
    // 12 ids minus PAD, with UNK scorable.
    assert_eq!(m.scorable_words().len(), 11);
    let m10 = bias_only(11, false);
    assert!((m10.log_prob_full(&[2], 3) - (0.1f64).ln()).abs() < 1e-15);
    let dist = m.full_distribution(&[0]);
    assert_eq!(dist[PAD_ID], 0.0);
    for &w in m.scorable_words() {
        assert!((dist[w] - 1.0 / 11.0).abs() < 1e-15);
    }
}

#[test]
fn two_word_vocabulary() {
    // UNK plus one word are the only scorable ids.
    let m = bias_only(3, false);
    assert!((m.log_prob_full(&[2], 2) - 0.5f64.ln()).abs() < 1e-15);
    assert!((m.log_prob_full(&[2], 0) - 0.5f64.ln()).abs() < 1e-15);
}

#[test]
fn single_class_equals_full_softmax() {
    let cfg = config(3, 4, true, true, true);
    let mut m = random_model(cfg, 15, Some(9), 1, 0.5, 6);
    assert_eq!(m.partition().unwrap().num_classes(), 1);
    let mut r = ts::rng(7);
    for _ in 0..20 {
        let ctx = ts::random_context(15, 2, &mut r);
        let w = ts::random_target(15, &mut r);
        // P(c|h) = 1 is computed as tau - tau = 0 exactly.
        assert_eq!(m.log_prob_classed(&ctx, w, None), m.log_prob_full(&ctx, w));
    }
    m.params_mut().class_bias.as_mut().unwrap()[0] = 3.0;
    assert_eq!(m.log_prob_classed(&[2, 3], 4, None), m.log_prob_full(&[2, 3], 4));
}

#[test]
fn singleton_classes_reduce_to_class_softmax() {
    let cfg = config(2, 3, false, false, true);
    let mut m = random_model(cfg, 6, None, 1, 0.5, 8);
    let assign: Vec<usize> = (0..6).collect();
    let part = ClassPartition::from_assignment(assign).unwrap();
    let params = ParamBlocks {
        class_vectors: Some(Matrix::gaussian(6, 3, 0.5, &mut ts::rng(9))),
        class_bias: Some(vec![0.1, 0.0, -0.2, 0.3, 0.0, 0.4]),
        ..m.params().clone()
    };
    m = LanguageModel::new(
        *m.config(),
        m.vocab().clone(),
        m.factors().clone(),
        m.factorization().clone(),
        Some(part),
        params,
    )
    .unwrap();
    assert_eq!(m.live_classes(), &[0, 2, 3, 4, 5]);
    let p = m.predict(&[3]).prediction;
    let zc = m.class_log_normalizer(&p);
    for w in [0, 2, 5] {
        assert_eq!(m.member_log_normalizer(&p, w), m.score_word(&p, w));
        let expected = m.score_class(&p, w) - zc;
        assert!((m.log_prob_classed(&[3], w, None) - expected).abs() < 1e-15);
    }
}

fn total_probability(m: &LanguageModel, ctx: &[usize]) -> f64 {
    m.scorable_words().iter().map(|&w| m.log_prob(ctx, w, None).exp()).sum()
}

#[test]
fn probabilities_sum_to_one_for_every_variant() {
    for (c, o, k) in [
        (false, false, false),
        (true, true, false),
        (false, false, true),
        (true, true, true),
        (true, false, true),
        (false, true, false),
    ] {
        let cfg = config(3, 3, c, o, k);
        let m = random_model(cfg, 7, Some(5), 3, 0.8, 10);
        let mut r = ts::rng(11);
        for _ in 0..10 {
            let ctx = ts::random_context(7, 2, &mut r);
            let s = total_probability(&m, &ctx);
            assert!((s - 1.0).abs() <= 1e-10, "{cfg}: {s}");
            let d: f64 = m.full_distribution(&ctx).iter().sum();
            assert!((d - 1.0).abs() <= 1e-10);
        }
    }
}

#[test]
fn distribution_matches_log_probs_and_is_shift_invariant() {
    let cfg = config(3, 3, true, false, true);
    let mut m = random_model(cfg, 9, Some(6), 3, 0.8, 12);
    let ctx = [4, 1];
    let d = m.full_distribution(&ctx);
    for &w in m.scorable_words() {
        assert!((d[w] - m.log_prob(&ctx, w, None).exp()).abs() < 1e-15);
    }
    for b in m.params_mut().word_bias.iter_mut() {
        *b += 7.25;
    }
    m.recompile();
    let shifted = m.full_distribution(&ctx);
    for (a, b) in d.iter().zip(&shifted) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn identity_factorisation_reduces_to_word_level_model() {
    let mut r = ts::rng(13);
    let v = ts::vocab(30, &mut r);
    let part = ts::partition(30, 5, &mut r);
    for class_based in [false, true] {
        let models: Vec<LanguageModel> = [(true, true), (false, false)]
            .iter()
            .map(|&(c, o)| {
                let cfg = config(3, 4, c, o, class_based);
                let (fv, m) = ts::identity_factorization(&v);
                let part = class_based.then(|| part.clone());
                crate::training::init_model(cfg, v.clone(), fv, m, part, 0.3, 99).unwrap()
            })
            .collect();
        assert_eq!(models[0].compiled_context(), models[1].compiled_context());
        for _ in 0..100 {
            let ctx = ts::random_context(30, 2, &mut r);
            let w = ts::random_target(30, &mut r);
            assert_eq!(models[0].log_prob(&ctx, w, None), models[1].log_prob(&ctx, w, None));
        }
    }
}

#[test]
fn cache_is_transparent_and_counts_work() {
    let cfg = config(3, 4, true, true, true);
    let m = random_model(cfg, 40, Some(25), 6, 0.6, 14);
    let mut cache = NormalizerCache::new();
    let mut r = ts::rng(15);
    let contexts: Vec<Vec<usize>> = (0..5).map(|_| ts::random_context(40, 2, &mut r)).collect();
    for i in 0..300 {
        let ctx = &contexts[i % contexts.len()];
        let w = ts::random_target(40, &mut r);
        let before = cache.stats();
        let warm = cache.get(ctx, Scope::Classes).is_some() && cache.get(ctx, Scope::Class(m.class_of(w))).is_some();
        let cached = m.log_prob(ctx, w, Some(&mut cache));
        assert_eq!(cached, m.log_prob(ctx, w, None));
        let evals = cache.stats().score_evaluations - before.score_evaluations;
        if warm {
            assert_eq!(evals, 2);
        } else {
            assert!(evals as usize <= m.live_classes().len() + m.class_members(m.class_of(w)).len() + 2);
        }
    }
    assert_eq!(cache.len(), contexts.len());
    assert!(cache.stats().hits > 0);
}

#[test]
fn classless_cache_is_transparent() {
    let cfg = config(2, 3, false, true, false);
    let m = random_model(cfg, 20, Some(10), 1, 0.6, 16);
    let mut cache = NormalizerCache::new();
    for ctx in [[2], [3], [2], [0], [3]] {
        for w in [0, 2, 5, 19] {
            assert_eq!(m.log_prob(&ctx, w, Some(&mut cache)), m.log_prob(&ctx, w, None));
        }
    }
    assert_eq!(
        cache.get(&[2], Scope::Vocabulary),
        Some(m.full_log_normalizer(&m.predict(&[2]).prediction))
    );
}

#[test]
fn container_round_trip_is_exact() {
    for (c, o, k) in [
        (true, true, true),
        (false, false, false),
        (true, false, false),
        (false, true, true),
    ] {
        let cfg = config(4, 3, c, o, k);
        let m = random_model(cfg, 25, Some(14), 4, 0.7, 17);
        let mut bytes = Vec::new();
        write_model(&m, &mut bytes).unwrap();
        let back = read_model(bytes.as_slice()).unwrap();
        assert_eq!(back, m);
        let mut again = Vec::new();
        write_model(&back, &mut again).unwrap();
        assert_eq!(again, bytes);
        assert_eq!(back.log_prob(&[2, 3, 4], 5, None), m.log_prob(&[2, 3, 4], 5, None));
    }
}

#[test]
fn container_rejects_corruption() {
    let m = random_model(config(2, 2, true, true, true), 6, Some(4), 2, 0.5, 18);
    let mut bytes = Vec::new();
    write_model(&m, &mut bytes).unwrap();
    assert!(matches!(
        read_model(&bytes[..bytes.len() - 1]),
        Err(Error::Container(_))
    ));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(read_model(extra.as_slice()), Err(Error::Container(_))));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(read_model(bad.as_slice()), Err(Error::Container(_))));
    let mut version = bytes;
    version[4] = 9;
    assert!(matches!(read_model(version.as_slice()), Err(Error::Container(_))));
}

#[test]
fn construction_checks_shapes() {
    let m = random_model(config(3, 2, true, false, true), 8, Some(5), 2, 0.5, 19);
    let mut short = m.params().clone();
    short.word_bias.pop();
    let r = LanguageModel::new(
        *m.config(),
        m.vocab().clone(),
        m.factors().clone(),
        m.factorization().clone(),
        m.partition().cloned(),
        short,
    );
    assert!(matches!(r, Err(Error::ModelMismatch(_))));
    let r = LanguageModel::new(
        *m.config(),
        m.vocab().clone(),
        m.factors().clone(),
        m.factorization().clone(),
        None,
        m.params().clone(),
    );
    assert!(matches!(r, Err(Error::ModelMismatch(_))));
}

#[test]
fn variant_names() {
    assert_eq!(config(3, 2, false, false, false).to_string(), "LBL");
    assert_eq!(config(3, 2, true, false, true).to_string(), "CLBL+c");
    assert_eq!(config(3, 2, false, true, false).to_string(), "LBL+o");
    assert_eq!(config(3, 2, true, true, true).to_string(), "CLBL++");
    assert!(config(1, 2, false, false, false).validate().is_err());
    assert!(config(2, 0, false, false, false).validate().is_err());
}

#[test]
fn oov_vectors_compose_only_for_fully_additive_models() {
    use crate::morphology::{parse_segmentations, PostHocMap};
    let mut r = ts::rng(20);
    let v = crate::Vocabulary::from_counts([("unlock", 3u64), ("lock", 2), ("able", 1)], 1, 0.0).unwrap();
    let segs = parse_segmentations(
        "unlock\tun|prefix lock|stem\nlock\tlock|stem\nunlockable\tun|prefix lock|stem able|suffix\n".as_bytes(),
    )
    .unwrap();
    let (fv, m) = crate::morphology::build_factorization(&v, &segs);
    let cfg = config(2, 3, true, true, false);
    let params = ts::random_params((v.len(), fv.len(), fv.len(), 0), &cfg, 0.5, &mut r);
    let model = LanguageModel::new(cfg, v, fv, m, None, params).unwrap();
    let map = PostHocMap::new(&segs, model.factors());
    let (u, oov) = model.composed_word_vector("unlockable", Some(&map), true);
    assert!(oov);
    let ids = [
        model.factors().id("un|prefix").unwrap(),
        model.factors().id("lock|stem").unwrap(),
    ];
    let q = crate::morphology::compose_vector(&model.params().context_factors, &ids).unwrap();
    let rr = crate::morphology::compose_vector(&model.params().target_factors, &ids).unwrap();
    assert_eq!(u, [q.clone(), rr].concat());
    assert_eq!(model.context_vector("unlockable", Some(&map), true), q);
    assert_eq!(
        model.context_vector("unlockable", Some(&map), false),
        model.compiled_context().row(0)
    );
    let (u, _) = model.composed_word_vector("unlockable", Some(&map), false);
    assert_eq!(u, model.word_vector(0));
    let (u, _) = model.composed_word_vector("zzz", Some(&map), true);
    assert_eq!(u, model.word_vector(0));
    let (u, oov) = model.composed_word_vector("lock", Some(&map), true);
    assert!(!oov);
    assert_eq!(u, model.word_vector(model.vocab().id("lock").unwrap()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn normalisation_holds_for_random_models(seed in 0u64..1000, c: bool, o: bool, k: bool, scale in 0.1f64..3.0) {
        let m = random_model(config(3, 3, c, o, k), 9, Some(6), 3, scale, seed);
        let mut r = ts::rng(seed ^ 0xabc);
        let ctx = ts::random_context(9, 2, &mut r);
        prop_assert!((total_probability(&m, &ctx) - 1.0).abs() <= 1e-10);
        prop_assert!(m.predict(&ctx).prediction.iter().all(|x| x.is_finite()));
    }
}
