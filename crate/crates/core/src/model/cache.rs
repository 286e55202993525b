use std::collections::HashMap;

use super::LanguageModel;

/// Normalisation scope of a cached log-normaliser.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Scope {
    /// Every scorable word (classless models).
    Vocabulary,
    /// The class softmax.
    Classes,
    /// Scorable members of one class.
    Class(usize),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    /// Word and class score evaluations performed through the cache.
    pub score_evaluations: u64,
}

#[derive(Debug, Clone)]
struct Entry {
    prediction: Vec<f64>,
    vocabulary: Option<f64>,
    classes: Option<f64>,
    members: HashMap<usize, f64>,
}

/// Per-context log-normalisers (and the context's prediction vector).
///
/// Values are produced by the same code path as uncached queries, so a hit
/// returns bit-identical results. Not shared between threads; give each
/// worker its own cache.
#[derive(Debug, Clone, Default)]
pub struct NormalizerCache {
    entries: HashMap<Vec<usize>, Entry>,
    stats: CacheStats,
}

impl NormalizerCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn stats(&self) -> CacheStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = CacheStats::default();
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Number of cached contexts.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, context: &[usize], scope: Scope) -> Option<f64> {
        let e = self.entries.get(context)?;
        match scope {
            Scope::Vocabulary => e.vocabulary,
            Scope::Classes => e.classes,
            Scope::Class(c) => e.members.get(&c).copied(),
        }
    }

    fn entry(&mut self, model: &LanguageModel, context: &[usize]) -> &mut Entry {
        if !self.entries.contains_key(context) {
            let prediction = model.predict(context).prediction;
            self.entries.insert(
                context.to_vec(),
                Entry {
                    prediction,
                    vocabulary: None,
                    classes: None,
                    members: HashMap::new(),
                },
            );
        }
        self.entries.get_mut(context).expect("inserted above")
    }

    pub(super) fn log_prob_classed(&mut self, model: &LanguageModel, context: &[usize], w: usize, c: usize) -> f64 {
        let mut stats = self.stats;
        let entry = self.entry(model, context);
        let p = &entry.prediction;
        let zc = match entry.classes {
            Some(z) => {
                stats.hits += 1;
                z
            }
            None => {
                stats.misses += 1;
                stats.score_evaluations += model.live_classes().len() as u64;
                let z = model.class_log_normalizer(p);
                entry.classes = Some(z);
                z
            }
        };
        let zw = match entry.members.get(&c) {
            Some(&z) => {
                stats.hits += 1;
                z
            }
            None => {
                stats.misses += 1;
                stats.score_evaluations += model.class_members(c).len() as u64;
                let z = model.member_log_normalizer(p, c);
                entry.members.insert(c, z);
                z
            }
        };
        stats.score_evaluations += 2;
        let lp = (model.score_class(p, c) - zc) + (model.score_word(p, w) - zw);
        self.stats = stats;
        lp
    }

    pub(super) fn log_prob_full(&mut self, model: &LanguageModel, context: &[usize], w: usize) -> f64 {
        let mut stats = self.stats;
        let entry = self.entry(model, context);
        let p = &entry.prediction;
        let z = match entry.vocabulary {
            Some(z) => {
                stats.hits += 1;
                z
            }
            None => {
                stats.misses += 1;
                stats.score_evaluations += model.scorable_words().len() as u64;
                let z = model.full_log_normalizer(p);
                entry.vocabulary = Some(z);
                z
            }
        };
        stats.score_evaluations += 1;
        let lp = model.score_word(p, w) - z;
        self.stats = stats;
        lp
    }
}
