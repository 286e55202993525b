//! Word factorisation: the map from a word type to its multiset of factors
//! (surface form plus labelled morphemes), additive composition of factor
//! vectors, and compilation of word-level tables from factor tables.
//!
//! A factor is written `form|label`. The label `surface` is reserved for the
//! whole-word factor that every word receives, so `in|stem` and `in|prefix`
//! are distinct factors, and so are `in|surface` and `in|stem`.

use std::collections::HashMap;
use std::io::{BufRead, Write};

use crate::corpus::Vocabulary;
use crate::linalg::{axpy, Matrix};
use crate::{Error, Result};

pub const SURFACE_LABEL: &str = "surface";

pub fn surface_factor(word: &str) -> String {
    format!("{word}|{SURFACE_LABEL}")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Morpheme {
    pub form: String,
    pub label: String,
}

impl Morpheme {
    pub fn factor(&self) -> String {
        format!("{}|{}", self.form, self.label)
    }

    fn parse(s: &str) -> Option<Self> {
        let (form, label) = s.rsplit_once('|')?;
        if form.is_empty() || label.is_empty() {
            return None;
        }
        Some(Self {
            form: form.to_string(),
            label: label.to_string(),
        })
    }
}

/// Word -> labelled morpheme list, as read from a segmentation file.
pub type Segmentations = HashMap<String, Vec<Morpheme>>;

/// Parses `word<TAB>form|label( form|label)*` lines. Blank lines are ignored.
pub fn parse_segmentations<R: BufRead>(r: R) -> Result<Segmentations> {
    let mut out = Segmentations::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (word, rest) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(lineno, "expected word<TAB>morphemes"))?;
        if word.is_empty() {
            return Err(Error::parse(lineno, "empty word"));
        }
        let mut morphs = Vec::new();
        for tok in rest.split_whitespace() {
            let m = Morpheme::parse(tok).ok_or_else(|| Error::parse(lineno, format!("malformed morpheme `{tok}`")))?;
            if m.label == SURFACE_LABEL {
                return Err(Error::parse(lineno, "label `surface` is reserved"));
            }
            morphs.push(m);
        }
        if morphs.is_empty() {
            return Err(Error::parse(lineno, "no morphemes"));
        }
        if out.insert(word.to_string(), morphs).is_some() {
            return Err(Error::parse(lineno, format!("duplicate entry `{word}`")));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FactorVocabulary {
    factors: Vec<String>,
    id_of: HashMap<String, usize>,
}

impl FactorVocabulary {
    pub fn intern(&mut self, factor: &str) -> usize {
        if let Some(&id) = self.id_of.get(factor) {
            return id;
        }
        let id = self.factors.len();
        self.factors.push(factor.to_string());
        self.id_of.insert(factor.to_string(), id);
        id
    }

    pub fn id(&self, factor: &str) -> Option<usize> {
        self.id_of.get(factor).copied()
    }

    pub fn factor(&self, id: usize) -> &str {
        &self.factors[id]
    }

    pub fn factors(&self) -> &[String] {
        &self.factors
    }

    pub fn len(&self) -> usize {
        self.factors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, f) in self.factors.iter().enumerate() {
            writeln!(w, "{i}\t{f}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut fv = Self::default();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let (id, f) = line
                .split_once('\t')
                .ok_or_else(|| Error::parse(i + 1, "expected id<TAB>factor"))?;
            let id: usize = id.parse().map_err(|_| Error::parse(i + 1, "bad id"))?;
            if id != fv.len() {
                return Err(Error::parse(i + 1, "factor ids must be dense"));
            }
            if fv.id(f).is_some() {
                return Err(Error::parse(i + 1, format!("duplicate factor `{f}`")));
            }
            fv.intern(f);
        }
        Ok(fv)
    }
}

/// Sparse nonnegative-integer row of M: `(factor id, multiplicity)` pairs
/// sorted by factor id.
pub type FactorRow = Vec<(usize, u32)>;

/// Collapses a factor multiset into its canonical sorted row.
pub fn canonical_row(multiset: &[usize]) -> FactorRow {
    let mut ids = multiset.to_vec();
    ids.sort_unstable();
    let mut row: FactorRow = Vec::new();
    for f in ids {
        match row.last_mut() {
            Some((last, m)) if *last == f => *m += 1,
            _ => row.push((f, 1)),
        }
    }
    row
}

/// The mapping from word ids to factor multisets, stored as the rows of the
/// sparse matrix M (|V| x |F|).
#[derive(Debug, Clone, PartialEq)]
pub struct WordFactorization {
    rows: Vec<FactorRow>,
    num_factors: usize,
}

impl WordFactorization {
    pub fn from_rows(rows: Vec<FactorRow>, num_factors: usize) -> Result<Self> {
        for (v, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::InvalidArgument(format!("word {v} has no factors")));
            }
            for w in row.windows(2) {
                if w[0].0 >= w[1].0 {
                    return Err(Error::InvalidArgument(format!("row {v} is not canonical")));
                }
            }
            if let Some(&(f, m)) = row.iter().find(|(f, m)| *f >= num_factors || *m == 0) {
                return Err(Error::InvalidArgument(format!("row {v} has invalid entry ({f}, {m})")));
            }
        }
        Ok(Self { rows, num_factors })
    }

    /// Word `v` maps to factor `v` alone.
    pub fn identity(num_words: usize) -> Self {
        Self {
            rows: (0..num_words).map(|v| vec![(v, 1)]).collect(),
            num_factors: num_words,
        }
    }

    pub fn num_words(&self) -> usize {
        self.rows.len()
    }

    pub fn num_factors(&self) -> usize {
        self.num_factors
    }

    pub fn row(&self, v: usize) -> &[(usize, u32)] {
        &self.rows[v]
    }

    pub fn rows(&self) -> &[FactorRow] {
        &self.rows
    }

    /// The factor multiset of `v`, each id repeated by its multiplicity.
    pub fn multiset(&self, v: usize) -> Vec<usize> {
        self.rows[v]
            .iter()
            .flat_map(|&(f, m)| std::iter::repeat_n(f, m as usize))
            .collect()
    }

    pub fn is_identity(&self) -> bool {
        self.num_factors == self.rows.len() && self.rows.iter().enumerate().all(|(v, r)| r.as_slice() == [(v, 1)])
    }

    /// Writes `id<TAB>word<TAB>factor factor ...`, multiplicities as repeats.
    pub fn write_tsv<W: Write>(&self, mut w: W, vocab: &Vocabulary, factors: &FactorVocabulary) -> Result<()> {
        for v in 0..self.rows.len() {
            let fs: Vec<&str> = self.multiset(v).into_iter().map(|f| factors.factor(f)).collect();
            writeln!(w, "{v}\t{}\t{}", vocab.word(v), fs.join(" "))?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(r: R, vocab: &Vocabulary, factors: &FactorVocabulary) -> Result<Self> {
        let mut rows = Vec::with_capacity(vocab.len());
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = i + 1;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.splitn(3, '\t');
            let (Some(id), Some(word), Some(fs)) = (parts.next(), parts.next(), parts.next()) else {
                return Err(Error::parse(lineno, "expected id<TAB>word<TAB>factors"));
            };
            let id: usize = id.parse().map_err(|_| Error::parse(lineno, "bad id"))?;
            if id != rows.len() || id >= vocab.len() || vocab.word(id) != word {
                return Err(Error::ModelMismatch(format!(
                    "factorisation row {lineno} (`{word}`) does not match the vocabulary"
                )));
            }
            let ids = fs
                .split_whitespace()
                .map(|f| factors.id(f).ok_or_else(|| Error::Unknown(f.to_string())))
                .collect::<Result<Vec<_>>>()?;
            rows.push(canonical_row(&ids));
        }
        if rows.len() != vocab.len() {
            return Err(Error::ModelMismatch(format!(
                "factorisation covers {} words, vocabulary has {}",
                rows.len(),
                vocab.len()
            )));
        }
        Self::from_rows(rows, factors.len())
    }
}

/// Builds the factor vocabulary and word factorisation: every word gets its
/// surface factor, followed by its morphemes when `segs` lists it. Factor ids
/// are assigned in first-encounter order over word ids. With an empty `segs`
/// this is the identity factorisation.
pub fn build_factorization(vocab: &Vocabulary, segs: &Segmentations) -> (FactorVocabulary, WordFactorization) {
    let mut fv = FactorVocabulary::default();
    let mut rows = Vec::with_capacity(vocab.len());
    for (v, word) in vocab.types().iter().enumerate() {
        let mut ids = vec![fv.intern(&surface_factor(word))];
        let reserved = v == vocab.unk_id() || v == vocab.pad_id();
        if !reserved {
            if let Some(morphs) = segs.get(word) {
                ids.extend(morphs.iter().map(|m| fv.intern(&m.factor())));
            }
        }
        rows.push(canonical_row(&ids));
    }
    let num_factors = fv.len();
    (fv, WordFactorization { rows, num_factors })
}

/// Sum of factor rows weighted by multiplicity, written into `out`.
pub(crate) fn compose_row_into(table: &Matrix, row: &[(usize, u32)], out: &mut [f64]) {
    out.iter_mut().for_each(|x| *x = 0.0);
    for &(f, m) in row {
        axpy(m as f64, table.row(f), out);
    }
}

/// Additive composition: the sum over the multiset of factor vectors.
pub fn compose_vector(table: &Matrix, multiset: &[usize]) -> Result<Vec<f64>> {
    if multiset.is_empty() {
        return Err(Error::InvalidArgument("empty factor multiset".into()));
    }
    if let Some(&f) = multiset.iter().find(|&&f| f >= table.rows()) {
        return Err(Error::InvalidArgument(format!(
            "factor id {f} out of range for a table with {} rows",
            table.rows()
        )));
    }
    let mut out = vec![0.0; table.cols()];
    compose_row_into(table, &canonical_row(multiset), &mut out);
    Ok(out)
}

/// Computes the word table `M * table`.
pub fn compile_word_table(m: &WordFactorization, table: &Matrix) -> Result<Matrix> {
    if m.num_factors() != table.rows() {
        return Err(Error::DimensionMismatch {
            expected: m.num_factors(),
            found: table.rows(),
        });
    }
    let mut out = Matrix::zeros(m.num_words(), table.cols());
    for v in 0..m.num_words() {
        compose_row_into(table, m.row(v), out.row_mut(v));
    }
    Ok(out)
}

/// Post hoc factor map for arbitrary words: the surface factor and the
/// segmentation's morphemes, restricted to factors the model knows.
#[derive(Debug, Clone)]
pub struct PostHocMap<'a> {
    factors: &'a FactorVocabulary,
    known: HashMap<String, Vec<usize>>,
}

impl<'a> PostHocMap<'a> {
    pub fn new(segs: &Segmentations, factors: &'a FactorVocabulary) -> Self {
        let known = segs
            .iter()
            .map(|(w, morphs)| {
                let mut ids: Vec<usize> = factors.id(&surface_factor(w)).into_iter().collect();
                ids.extend(morphs.iter().filter_map(|m| factors.id(&m.factor())));
                (w.clone(), ids)
            })
            .collect();
        Self { factors, known }
    }

    /// Known factor ids of `word`; empty when every factor is unknown.
    pub fn lookup(&self, word: &str) -> Vec<usize> {
        match self.known.get(word) {
            Some(ids) => ids.clone(),
            None => self.factors.id(&surface_factor(word)).into_iter().collect(),
        }
    }
}

/// Composes `[q; r]` for a word from its known factors. Falls back to
/// `[q_unk; r_unk]` only when none of the word's factors is known.
pub fn oov_vector(
    word: &str,
    map: &PostHocMap<'_>,
    context_factors: &Matrix,
    target_factors: &Matrix,
    unk_context: &[f64],
    unk_target: &[f64],
) -> Vec<f64> {
    let ids = map.lookup(word);
    if ids.is_empty() {
        return [unk_context, unk_target].concat();
    }
    let row = canonical_row(&ids);
    let mut q = vec![0.0; context_factors.cols()];
    let mut r = vec![0.0; target_factors.cols()];
    compose_row_into(context_factors, &row, &mut q);
    compose_row_into(target_factors, &row, &mut r);
    q.extend(r);
    q
}

/// word2vec-style text export: `word<TAB>v1 v2 ... vd`.
pub fn write_word_vectors<'w, W: Write>(mut w: W, rows: impl IntoIterator<Item = (&'w str, Vec<f64>)>) -> Result<()> {
    for (word, vec) in rows {
        let vals: Vec<String> = vec.iter().map(|x| format!("{x:?}")).collect();
        writeln!(w, "{word}\t{}", vals.join(" "))?;
    }
    Ok(())
}

pub fn read_word_vectors<R: BufRead>(r: R) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let (word, vals) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(i + 1, "expected word<TAB>values"))?;
        let v = vals
            .split_whitespace()
            .map(|x| x.parse::<f64>().map_err(|_| Error::parse(i + 1, "bad number")))
            .collect::<Result<Vec<_>>>()?;
        out.push((word.to_string(), v));
    }
    Ok(out)
}
