//! Vocabulary partitions for the class-factored softmax.
//!
//! Three constructors: Brown clustering by the exchange algorithm over class
//! bigram mutual information, frequency binning, and loading an external
//! partition file (`class<TAB>word` per line).

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::corpus::{Vocabulary, PAD_ID};
use crate::{Error, Result};

/// A hard partition of word ids into non-empty classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassPartition {
    class_of: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl ClassPartition {
    /// Builds a partition from a dense class assignment. Class ids must cover
    /// `0..k` with no empty class.
    pub fn from_assignment(class_of: Vec<usize>) -> Result<Self> {
        let k = class_of.iter().max().map_or(0, |&c| c + 1);
        let mut members = vec![Vec::new(); k];
        for (w, &c) in class_of.iter().enumerate() {
            members[c].push(w);
        }
        if let Some(c) = members.iter().position(Vec::is_empty) {
            return Err(Error::InvalidArgument(format!("class {c} is empty")));
        }
        Ok(Self { class_of, members })
    }

    /// Every word in one class.
    pub fn single(num_words: usize) -> Self {
        Self {
            class_of: vec![0; num_words],
            members: vec![(0..num_words).collect()],
        }
    }

    pub fn num_classes(&self) -> usize {
        self.members.len()
    }

    pub fn num_words(&self) -> usize {
        self.class_of.len()
    }

    pub fn class_of(&self, w: usize) -> usize {
        self.class_of[w]
    }

    pub fn assignment(&self) -> &[usize] {
        &self.class_of
    }

    /// Sorted member ids of class `c`.
    pub fn members(&self, c: usize) -> &[usize] {
        &self.members[c]
    }

    pub fn write_tsv<W: Write>(&self, mut w: W, vocab: &Vocabulary) -> Result<()> {
        for (c, ms) in self.members.iter().enumerate() {
            for &m in ms {
                writeln!(w, "{c}\t{}", vocab.word(m))?;
            }
        }
        Ok(())
    }
}

/// `round(sqrt(vocab_size))`, at least 1.
pub fn default_num_classes(vocab_size: usize) -> usize {
    ((vocab_size as f64).sqrt().round() as usize).max(1)
}

/// Reads `class<TAB>word` lines. Class labels are arbitrary strings, numbered
/// densely in order of first appearance; every vocabulary word must appear
/// exactly once.
pub fn load_partition<R: BufRead>(r: R, vocab: &Vocabulary) -> Result<ClassPartition> {
    let mut labels: HashMap<String, usize> = HashMap::new();
    let mut class_of: Vec<Option<usize>> = vec![None; vocab.len()];
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (label, word) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(i + 1, "expected class<TAB>word"))?;
        let w = vocab.id(word).ok_or_else(|| Error::Unknown(word.to_string()))?;
        let next = labels.len();
        let c = *labels.entry(label.to_string()).or_insert(next);
        if class_of[w].replace(c).is_some() {
            return Err(Error::Duplicate(word.to_string()));
        }
    }
    let assignment = class_of
        .into_iter()
        .enumerate()
        .map(|(w, c)| c.ok_or_else(|| Error::Missing(vocab.word(w).to_string())))
        .collect::<Result<Vec<_>>>()?;
    ClassPartition::from_assignment(assignment)
}

/// Splits words, sorted by descending count (ties by id), into contiguous
/// bins of near-equal unigram mass.
pub fn frequency_bin(vocab: &Vocabulary, num_classes: usize) -> Result<ClassPartition> {
    let counts = vocab.counts();
    let nonzero = counts.iter().filter(|&&c| c > 0).count();
    check_num_classes(num_classes, nonzero)?;
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let total: u128 = counts.iter().map(|&c| c as u128).sum();
    let k = num_classes as u128;

    let mut class_of = vec![0; counts.len()];
    let mut bin = 0usize;
    let mut cum: u128 = 0;
    for (pos, &w) in order.iter().enumerate() {
        class_of[w] = bin;
        cum += counts[w] as u128;
        let remaining_words = order.len() - pos - 1;
        let remaining_bins = num_classes - 1 - bin;
        let full = cum * k >= (bin as u128 + 1) * total;
        if remaining_bins > 0 && (full || remaining_words == remaining_bins) {
            bin += 1;
        }
    }
    ClassPartition::from_assignment(class_of)
}

fn check_num_classes(num_classes: usize, available: usize) -> Result<()> {
    if num_classes == 0 || num_classes > available {
        return Err(Error::InvalidArgument(format!(
            "cannot form {num_classes} classes from {available} word types with nonzero count"
        )));
    }
    Ok(())
}

/// Word bigram counts over PAD-delimited sentences, kept as adjacency lists.
#[derive(Debug, Clone)]
pub struct BigramCounts {
    successors: Vec<Vec<(usize, u64)>>,
    predecessors: Vec<Vec<(usize, u64)>>,
    total: u64,
}

impl BigramCounts {
    /// Counts `(PAD, w1), (w1, w2), ..., (wn, PAD)` for every sentence.
    pub fn from_sentences<'a>(sentences: impl IntoIterator<Item = &'a Vec<usize>>, num_words: usize) -> Self {
        let mut pairs: HashMap<(usize, usize), u64> = HashMap::new();
        for s in sentences {
            if s.is_empty() {
                continue;
            }
            let mut prev = PAD_ID;
            for &w in s.iter().chain(std::iter::once(&PAD_ID)) {
                *pairs.entry((prev, w)).or_insert(0) += 1;
                prev = w;
            }
        }
        Self::from_pairs(pairs, num_words)
    }

    pub fn from_pairs(pairs: HashMap<(usize, usize), u64>, num_words: usize) -> Self {
        let mut successors = vec![Vec::new(); num_words];
        let mut predecessors = vec![Vec::new(); num_words];
        let mut total = 0;
        for ((a, b), n) in pairs {
            if n == 0 {
                continue;
            }
            successors[a].push((b, n));
            predecessors[b].push((a, n));
            total += n;
        }
        for l in successors.iter_mut().chain(predecessors.iter_mut()) {
            l.sort_unstable();
        }
        Self {
            successors,
            predecessors,
            total,
        }
    }

    pub fn num_words(&self) -> usize {
        self.successors.len()
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// Occurrences of `w` as the second element of a bigram.
    pub fn frequency(&self, w: usize) -> u64 {
        self.predecessors[w].iter().map(|&(_, n)| n).sum()
    }

    fn has_mass(&self, w: usize) -> bool {
        !self.successors[w].is_empty() || !self.predecessors[w].is_empty()
    }
}

#[inline]
fn xlogx(x: i64) -> f64 {
    if x <= 0 {
        0.0
    } else {
        let x = x as f64;
        x * x.ln()
    }
}

/// Average mutual information (nats) of adjacent class pairs.
pub fn average_mutual_information(counts: &BigramCounts, class_of: &[usize], num_classes: usize) -> f64 {
    let state = ExchangeState::new(counts, class_of.to_vec(), num_classes);
    state.ami()
}

#[derive(Debug, Clone)]
pub struct BrownReport {
    pub partition: ClassPartition,
    pub passes: usize,
    pub moves: usize,
    /// AMI of the initial assignment followed by the AMI after each accepted
    /// move. Only filled when tracing.
    pub ami_trace: Vec<f64>,
    pub final_ami: f64,
}

/// Brown clustering by the exchange algorithm.
///
/// Words are ranked by frequency (ties by id) and word of rank `r` starts in
/// class `r mod num_classes`. Each pass visits words in rank order and moves
/// a word to the class with the largest AMI, keeping its current class on
/// ties and otherwise preferring the lowest class id. Stops after a pass
/// without moves or after `max_iters` passes.
pub fn brown_cluster(counts: &BigramCounts, num_classes: usize, max_iters: usize) -> Result<ClassPartition> {
    Ok(brown_cluster_report(counts, num_classes, max_iters, false)?.partition)
}

pub fn brown_cluster_report(
    counts: &BigramCounts,
    num_classes: usize,
    max_iters: usize,
    trace: bool,
) -> Result<BrownReport> {
    let n = counts.num_words();
    let with_mass = (0..n).filter(|&w| counts.has_mass(w)).count();
    check_num_classes(num_classes, with_mass)?;

    let freq: Vec<u64> = (0..n).map(|w| counts.frequency(w)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| freq[b].cmp(&freq[a]).then(a.cmp(&b)));
    let mut class_of = vec![0; n];
    for (rank, &w) in order.iter().enumerate() {
        class_of[w] = rank % num_classes;
    }

    let mut state = ExchangeState::new(counts, class_of, num_classes);
    let mut ami_trace = Vec::new();
    if trace {
        ami_trace.push(state.ami());
    }
    let mut scratch = Scratch::new(num_classes);
    let mut passes = 0;
    let mut moves = 0;
    while passes < max_iters {
        passes += 1;
        let mut moved = 0;
        for &w in &order {
            if !counts.has_mass(w) {
                continue;
            }
            if state.try_move(w, &mut scratch) {
                moved += 1;
                if trace {
                    ami_trace.push(state.ami());
                }
            }
        }
        moves += moved;
        if moved == 0 {
            break;
        }
    }
    let final_ami = state.ami();
    Ok(BrownReport {
        partition: ClassPartition::from_assignment(state.class_of)?,
        passes,
        moves,
        ami_trace,
        final_ami,
    })
}

struct Scratch {
    out: Vec<i64>,
    inc: Vec<i64>,
    out_touched: Vec<usize>,
    in_touched: Vec<usize>,
}

impl Scratch {
    fn new(k: usize) -> Self {
        Self {
            out: vec![0; k],
            inc: vec![0; k],
            out_touched: Vec::new(),
            in_touched: Vec::new(),
        }
    }

    fn clear(&mut self) {
        for &c in &self.out_touched {
            self.out[c] = 0;
        }
        for &c in &self.in_touched {
            self.inc[c] = 0;
        }
        self.out_touched.clear();
        self.in_touched.clear();
    }
}

struct ExchangeState<'a> {
    counts: &'a BigramCounts,
    class_of: Vec<usize>,
    k: usize,
    /// Class bigram counts, row-major k x k.
    bigram: Vec<i64>,
    left: Vec<i64>,
    right: Vec<i64>,
    /// Members with bigram mass, per class.
    live_members: Vec<usize>,
}

impl<'a> ExchangeState<'a> {
    fn new(counts: &'a BigramCounts, class_of: Vec<usize>, k: usize) -> Self {
        let mut bigram = vec![0i64; k * k];
        let mut left = vec![0i64; k];
        let mut right = vec![0i64; k];
        let mut live_members = vec![0usize; k];
        for (a, succ) in counts.successors.iter().enumerate() {
            let ca = class_of[a];
            for &(b, n) in succ {
                let cb = class_of[b];
                bigram[ca * k + cb] += n as i64;
                left[ca] += n as i64;
                right[cb] += n as i64;
            }
        }
        for (w, &c) in class_of.iter().enumerate() {
            if counts.has_mass(w) {
                live_members[c] += 1;
            }
        }
        Self {
            counts,
            class_of,
            k,
            bigram,
            left,
            right,
            live_members,
        }
    }

    fn ami(&self) -> f64 {
        let n = self.counts.total;
        if n == 0 {
            return 0.0;
        }
        let joint: f64 = self.bigram.iter().map(|&x| xlogx(x)).sum();
        let l: f64 = self.left.iter().map(|&x| xlogx(x)).sum();
        let r: f64 = self.right.iter().map(|&x| xlogx(x)).sum();
        let nf = n as f64;
        (joint - l - r) / nf + nf.ln()
    }

    /// Tries to move `w`; returns whether it changed class.
    fn try_move(&mut self, w: usize, s: &mut Scratch) -> bool {
        let a = self.class_of[w];
        if self.live_members[a] <= 1 {
            return false;
        }
        let k = self.k;
        s.clear();
        let mut self_loop = 0i64;
        let mut n_left = 0i64;
        let mut n_right = 0i64;
        for &(v, n) in &self.counts.successors[w] {
            let n = n as i64;
            n_left += n;
            if v == w {
                self_loop += n;
                continue;
            }
            let c = self.class_of[v];
            if s.out[c] == 0 {
                s.out_touched.push(c);
            }
            s.out[c] += n;
        }
        for &(u, n) in &self.counts.predecessors[w] {
            let n = n as i64;
            n_right += n;
            if u == w {
                continue;
            }
            let c = self.class_of[u];
            if s.inc[c] == 0 {
                s.in_touched.push(c);
            }
            s.inc[c] += n;
        }

        self.apply(a, s, self_loop, n_left, n_right, -1);

        let gain = |st: &Self, b: usize| -> f64 {
            let mut g = 0.0;
            let row = b * k;
            for &c in &s.out_touched {
                if c != b {
                    let x = st.bigram[row + c];
                    g += xlogx(x + s.out[c]) - xlogx(x);
                }
            }
            for &c in &s.in_touched {
                if c != b {
                    let x = st.bigram[c * k + b];
                    g += xlogx(x + s.inc[c]) - xlogx(x);
                }
            }
            let diag = st.bigram[row + b];
            g += xlogx(diag + s.out[b] + s.inc[b] + self_loop) - xlogx(diag);
            g -= xlogx(st.left[b] + n_left) - xlogx(st.left[b]);
            g -= xlogx(st.right[b] + n_right) - xlogx(st.right[b]);
            g
        };

        let stay = gain(self, a);
        let tol = 1e-9 * (1.0 + stay.abs());
        let mut best = a;
        let mut best_gain = stay + tol;
        for b in 0..k {
            if b == a {
                continue;
            }
            let g = gain(self, b);
            if g > best_gain {
                best = b;
                best_gain = g;
            }
        }

        self.apply(best, s, self_loop, n_left, n_right, 1);
        if best != a {
            self.class_of[w] = best;
            self.live_members[a] -= 1;
            self.live_members[best] += 1;
            true
        } else {
            false
        }
    }

    fn apply(&mut self, c0: usize, s: &Scratch, self_loop: i64, nl: i64, nr: i64, sign: i64) {
        let k = self.k;
        for &c in &s.out_touched {
            self.bigram[c0 * k + c] += sign * s.out[c];
        }
        for &c in &s.in_touched {
            self.bigram[c * k + c0] += sign * s.inc[c];
        }
        self.bigram[c0 * k + c0] += sign * self_loop;
        self.left[c0] += sign * nl;
        self.right[c0] += sign * nr;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, UNK_ID};
    use proptest::prelude::*;

    fn alternating(len: usize) -> (Vocabulary, Vec<Vec<usize>>) {
        let toks: Vec<&str> = (0..len).map(|i| if i % 2 == 0 { "a" } else { "b" }).collect();
        let v = build_vocabulary([toks.clone()], 0.0, 1).unwrap();
        let s = vec![v.encode_sentence(&toks)];
        (v, s)
    }

    /// All assignments of the massive words into exactly `k` non-empty
    /// classes, evaluated by brute force.
    fn exhaustive_best(counts: &BigramCounts, k: usize) -> (Vec<usize>, f64) {
        let words: Vec<usize> = (0..counts.num_words()).filter(|&w| counts.has_mass(w)).collect();
        let mut best = (Vec::new(), f64::NEG_INFINITY);
        let total = k.pow(words.len() as u32);
        for code in 0..total {
            let mut assign = vec![0; counts.num_words()];
            let mut x = code;
            let mut used = vec![false; k];
            for &w in &words {
                assign[w] = x % k;
                used[x % k] = true;
                x /= k;
            }
            if !used.iter().all(|&u| u) {
                continue;
            }
            let ami = average_mutual_information(counts, &assign, k);
            if ami > best.1 + 1e-12 {
                best = (assign, ami);
            }
        }
        best
    }

    fn same_blocks(a: &[usize], b: &[usize], words: &[usize]) -> bool {
        words
            .iter()
            .all(|&x| words.iter().all(|&y| (a[x] == a[y]) == (b[x] == b[y])))
    }

    #[test]
    fn default_class_counts() {
        assert_eq!(default_num_classes(10_000), 100);
        assert_eq!(default_num_classes(1), 1);
        assert_eq!(default_num_classes(206_000), 454);
    }

    #[test]
    fn alternating_corpus_separates_a_and_b() {
        // Even length: the corpus reads the same reversed with a and b
        // swapped, so PAD may join either side at equal AMI.
        let (v, s) = alternating(6);
        let counts = BigramCounts::from_sentences(&s, v.len());
        let r = brown_cluster_report(&counts, 2, 20, false).unwrap();
        let a = v.id("a").unwrap();
        let b = v.id("b").unwrap();
        assert_ne!(r.partition.class_of(a), r.partition.class_of(b));
        let (_, best) = exhaustive_best(&counts, 2);
        assert!((r.final_ami - best).abs() < 1e-12);
    }

    #[test]
    fn odd_alternating_corpus_matches_unique_optimum() {
        let (v, s) = alternating(7);
        let counts = BigramCounts::from_sentences(&s, v.len());
        let p = brown_cluster(&counts, 2, 20).unwrap();
        let (oracle, _) = exhaustive_best(&counts, 2);
        let words = [v.id("a").unwrap(), v.id("b").unwrap(), PAD_ID];
        assert!(same_blocks(p.assignment(), &oracle, &words));
        assert_ne!(p.class_of(words[0]), p.class_of(words[1]));
    }

    #[test]
    fn saturated_and_single_class() {
        let toks = ["x", "y", "z", "x", "y", "x"];
        let v = build_vocabulary([toks], 1.0, 1).unwrap();
        let s = vec![v.encode_sentence(&toks)];
        let counts = BigramCounts::from_sentences(&s, v.len());
        // x, y, PAD and UNK (z pruned) all carry mass
        let r = brown_cluster_report(&counts, 4, 10, false).unwrap();
        assert_eq!(r.moves, 0);
        for c in 0..4 {
            assert_eq!(r.partition.members(c).len(), 1);
        }
        let one = brown_cluster(&counts, 1, 10).unwrap();
        assert_eq!(one.num_classes(), 1);
        assert_eq!(one.members(0).len(), v.len());
        assert!(brown_cluster(&counts, 5, 10).is_err());
    }

    #[test]
    fn frequency_bin_examples() {
        let v = Vocabulary::from_counts([("a", 5u64), ("b", 5), ("c", 5)], 5, 0.0).unwrap();
        let p = frequency_bin(&v, 2).unwrap();
        // UNK, a, b, c each 5; PAD has no mass and trails
        let sizes: Vec<usize> = (0..2).map(|c| p.members(c).len()).collect();
        assert_eq!(p.class_of(UNK_ID), 0);
        assert_eq!(p.class_of(v.id("a").unwrap()), 0);
        assert_eq!(sizes, vec![2, 3]);

        let words: Vec<(String, u64)> = (0..8).map(|i| (format!("w{i}"), 1)).collect();
        let v = Vocabulary::from_counts(std::iter::once(("top".to_string(), 8)).chain(words), 0, 0.0).unwrap();
        let p = frequency_bin(&v, 2).unwrap();
        assert_eq!(p.members(0), &[v.id("top").unwrap()]);

        let one = frequency_bin(&v, 1).unwrap();
        assert_eq!(one.members(0).len(), v.len());
    }

    #[test]
    fn partition_file_errors() {
        let v = Vocabulary::from_counts([("a", 2u64), ("b", 1)], 0, 0.0).unwrap();
        let ok = "0\t<unk>\n0\t<pad>\n1\ta\n2\tb\n";
        let p = load_partition(ok.as_bytes(), &v).unwrap();
        assert_eq!(p.num_classes(), 3);
        assert_ne!(p.class_of(v.id("a").unwrap()), p.class_of(v.id("b").unwrap()));

        let missing = "0\t<unk>\n0\t<pad>\n1\ta\n";
        assert!(matches!(load_partition(missing.as_bytes(), &v), Err(Error::Missing(w)) if w == "b"));
        let dup = "0\t<unk>\n0\t<pad>\n1\ta\n2\tb\n2\ta\n";
        assert!(matches!(load_partition(dup.as_bytes(), &v), Err(Error::Duplicate(w)) if w == "a"));
        let unknown = "0\tzzz\n";
        assert!(matches!(load_partition(unknown.as_bytes(), &v), Err(Error::Unknown(w)) if w == "zzz"));

        let mut buf = Vec::new();
        p.write_tsv(&mut buf, &v).unwrap();
        assert_eq!(load_partition(&buf[..], &v).unwrap(), p);
    }

    fn check_partition(p: &ClassPartition, n: usize) {
        let mut seen = vec![0; n];
        for c in 0..p.num_classes() {
            assert!(!p.members(c).is_empty());
            for &w in p.members(c) {
                seen[w] += 1;
                assert_eq!(p.class_of(w), c);
            }
        }
        assert!(seen.iter().all(|&s| s == 1));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]
        #[test]
        fn brown_ascends_and_partitions(
            sents in prop::collection::vec(prop::collection::vec(0usize..8, 1..12), 1..8),
            k in 1usize..4,
            iters in 1usize..6,
        ) {
            let toks: Vec<Vec<String>> = sents.iter().map(|s| s.iter().map(|i| format!("w{i}")).collect()).collect();
            let v = build_vocabulary(&toks, 0.0, 0).unwrap();
            let ids: Vec<Vec<usize>> = toks.iter().map(|s| v.encode_sentence(s)).collect();
            let counts = BigramCounts::from_sentences(&ids, v.len());
            let massive = (0..v.len()).filter(|&w| counts.has_mass(w)).count();
            prop_assume!(k <= massive);
            let r = brown_cluster_report(&counts, k, iters, true).unwrap();
            check_partition(&r.partition, v.len());
            for w in r.ami_trace.windows(2) {
                prop_assert!(w[1] >= w[0] - 1e-12);
            }
            let fresh = average_mutual_information(&counts, r.partition.assignment(), k);
            prop_assert!((fresh - r.final_ami).abs() < 1e-9);
            let again = brown_cluster(&counts, k, iters).unwrap();
            prop_assert_eq!(again, r.partition.clone());

            let fb = frequency_bin(&v, k.min(v.counts().iter().filter(|&&c| c > 0).count())).unwrap();
            check_partition(&fb, v.len());
        }
    }
}
