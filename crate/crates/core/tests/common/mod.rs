#![allow(dead_code)]

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use morphlm::clustering::ClassPartition;
use morphlm::corpus::PAD_ID;
use morphlm::morphology::{canonical_row, FactorVocabulary, WordFactorization};
use morphlm::{LanguageModel, ModelConfig, ParamBlocks, Vocabulary};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn config(order: usize, dim: usize, c: bool, o: bool, class_based: bool) -> ModelConfig {
    ModelConfig {
        order,
        dim,
        context_additive: c,
        output_additive: o,
        class_based,
    }
}

/// Digit-free token names (digits normalise to `0`).
pub fn alpha_name(prefix: &str, mut i: usize) -> String {
    let mut s = prefix.to_string();
    loop {
        s.push((b'a' + (i % 26) as u8) as char);
        i /= 26;
        if i == 0 {
            return s;
        }
    }
}

pub fn random_vocab(n: usize, r: &mut ChaCha8Rng) -> Vocabulary {
    let words: Vec<(String, u64)> = (2..n).map(|i| (alpha_name("w", i), r.random_range(1..100))).collect();
    Vocabulary::from_counts(words, r.random_range(1..10), 0.0).unwrap()
}

pub fn random_factorization(nv: usize, nf: usize, r: &mut ChaCha8Rng) -> (FactorVocabulary, WordFactorization) {
    let mut fv = FactorVocabulary::default();
    for f in 0..nf {
        fv.intern(&alpha_name("f", f));
    }
    let rows = (0..nv)
        .map(|_| {
            let k = r.random_range(1..=3);
            let ids: Vec<usize> = (0..k).map(|_| r.random_range(0..nf)).collect();
            canonical_row(&ids)
        })
        .collect();
    (fv, WordFactorization::from_rows(rows, nf).unwrap())
}

pub fn random_partition(nv: usize, nc: usize, r: &mut ChaCha8Rng) -> ClassPartition {
    let scorable: Vec<usize> = (0..nv).filter(|&w| w != PAD_ID).collect();
    let mut assign = vec![0; nv];
    for (i, &w) in scorable.iter().enumerate() {
        assign[w] = if i < nc { i } else { r.random_range(0..nc) };
    }
    assign[PAD_ID] = r.random_range(0..nc);
    ClassPartition::from_assignment(assign).unwrap()
}

pub fn random_params(
    cfg: &ModelConfig,
    shape: (usize, usize, usize, usize),
    scale: f64,
    r: &mut ChaCha8Rng,
) -> ParamBlocks {
    let (nv, fq, fr, nc) = shape;
    let mut p = ParamBlocks::zeros(cfg, nv, fq, fr, nc);
    for (_, b) in p.blocks_mut() {
        for x in b.iter_mut() {
            *x = scale * (2.0 * r.random::<f64>() - 1.0);
        }
    }
    p
}

/// Random structure and parameters; `nf = None` gives the identity
/// factorisation.
pub fn random_model(cfg: ModelConfig, nv: usize, nf: Option<usize>, nc: usize, scale: f64, seed: u64) -> LanguageModel {
    let mut r = rng(seed);
    let v = random_vocab(nv, &mut r);
    let (fv, m) = match nf {
        Some(nf) => random_factorization(nv, nf, &mut r),
        None => morphlm::morphology::build_factorization(&v, &Default::default()),
    };
    let part = cfg.class_based.then(|| random_partition(nv, nc, &mut r));
    let rows = |a: bool| if a { m.num_factors() } else { nv };
    let shape = (
        nv,
        rows(cfg.context_additive),
        rows(cfg.output_additive),
        part.as_ref().map_or(0, |p| p.num_classes()),
    );
    let params = random_params(&cfg, shape, scale, &mut r);
    LanguageModel::new(cfg, v, fv, m, part, params).unwrap()
}

pub fn random_context(nv: usize, len: usize, r: &mut ChaCha8Rng) -> Vec<usize> {
    (0..len).map(|_| r.random_range(0..nv)).collect()
}

pub fn random_target(nv: usize, r: &mut ChaCha8Rng) -> usize {
    loop {
        let w = r.random_range(0..nv);
        if w != PAD_ID {
            return w;
        }
    }
}

fn zipf_weights(n: usize, s: f64) -> Vec<f64> {
    (1..=n).map(|r| (r as f64).powf(-s)).collect()
}

/// Stem + suffix language: stems follow a Zipfian law and prefer stems of
/// a successor group; suffixes usually repeat the previous word's suffix
/// (agreement) and otherwise follow their own Zipfian law.
pub struct MorphLanguage {
    pub stems: Vec<String>,
    pub suffixes: Vec<String>,
    groups: usize,
    stem_dist: WeightedIndex<f64>,
    group_members: Vec<Vec<usize>>,
    group_dists: Vec<WeightedIndex<f64>>,
    suffix_dist: WeightedIndex<f64>,
    pub stay_group: f64,
    pub agree: f64,
}

const CONSONANTS: &[u8] = b"bcdfghjklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

impl MorphLanguage {
    pub fn new(num_stems: usize, num_suffixes: usize, groups: usize, stem_exponent: f64) -> Self {
        Self::with_suffix_exponent(num_stems, num_suffixes, groups, stem_exponent, 1.0)
    }

    pub fn with_suffix_exponent(
        num_stems: usize,
        num_suffixes: usize,
        groups: usize,
        stem_exponent: f64,
        suffix_exponent: f64,
    ) -> Self {
        // Fixed-width CVCVC stems keep stem + suffix concatenation unambiguous.
        let stems: Vec<String> = (0..num_stems)
            .map(|i| {
                let mut x = i;
                let mut s = String::new();
                for pos in 0..5 {
                    let alphabet = if pos % 2 == 0 { CONSONANTS } else { VOWELS };
                    s.push(alphabet[x % alphabet.len()] as char);
                    x /= alphabet.len();
                }
                s
            })
            .collect();
        let suffixes: Vec<String> = (0..num_suffixes)
            .map(|i| {
                let mut s = String::from("-");
                s.push(VOWELS[i % VOWELS.len()] as char);
                s.push(CONSONANTS[(i / VOWELS.len()) % CONSONANTS.len()] as char);
                s
            })
            .collect();
        let weights = zipf_weights(num_stems, stem_exponent);
        let group_members: Vec<Vec<usize>> = (0..groups)
            .map(|g| (0..num_stems).filter(|s| s % groups == g).collect())
            .collect();
        let group_dists = group_members
            .iter()
            .map(|m| WeightedIndex::new(m.iter().map(|&s| weights[s])).unwrap())
            .collect();
        Self {
            stems,
            suffixes,
            groups,
            stem_dist: WeightedIndex::new(&weights).unwrap(),
            group_members,
            group_dists,
            suffix_dist: WeightedIndex::new(zipf_weights(num_suffixes, suffix_exponent)).unwrap(),
            stay_group: 0.7,
            agree: 0.75,
        }
    }

    pub fn word(&self, stem: usize, suffix: usize) -> String {
        format!("{}{}", self.stems[stem], self.suffixes[suffix])
    }

    /// Segmentation file contents for every stem/suffix combination.
    pub fn segmentation_file(&self) -> String {
        let mut out = String::new();
        for (i, st) in self.stems.iter().enumerate() {
            for (j, su) in self.suffixes.iter().enumerate() {
                out.push_str(&format!("{}\t{}|stem {}|suffix\n", self.word(i, j), st, su));
            }
        }
        out
    }

    pub fn sentence(&self, r: &mut ChaCha8Rng) -> Vec<String> {
        let len = r.random_range(6..16);
        let mut stem = self.stem_dist.sample(r);
        let mut suffix = self.suffix_dist.sample(r);
        let mut out = vec![self.word(stem, suffix)];
        for _ in 1..len {
            stem = if r.random::<f64>() < self.stay_group {
                let g = (stem + 1) % self.groups;
                self.group_members[g][self.group_dists[g].sample(r)]
            } else {
                self.stem_dist.sample(r)
            };
            if r.random::<f64>() >= self.agree {
                suffix = self.suffix_dist.sample(r);
            }
            out.push(self.word(stem, suffix));
        }
        out
    }

    /// Sentences until at least `tokens` tokens have been produced.
    pub fn corpus(&self, tokens: usize, seed: u64) -> Vec<Vec<String>> {
        let mut r = rng(seed);
        let mut out = Vec::new();
        let mut n = 0;
        while n < tokens {
            let s = self.sentence(&mut r);
            n += s.len();
            out.push(s);
        }
        out
    }
}
