//! Binary model container.
//!
//! Layout (all integers and reals little-endian):
//!
//! ```text
//! "MLBL" | version u32
//! order u32 | dim u32 | flags u8 (1 = context additive, 2 = output additive, 4 = class based)
//! |V| u64 | |F_q| u64 | |F_r| u64 | |C| u64
//! vocabulary:  kappa f64 | cyrillic filter u8 | |V| x (len u32, utf-8 bytes, count u64)
//! factors:     |F| u64 | |F| x (len u32, utf-8 bytes)
//! M rows:      |V| x (nnz u32, nnz x (factor u32, multiplicity u32))
//! partition:   |V| x class u32            (class-based models only)
//! parameters:  C_1..C_{n-1}, Q_f, R_f, b, S, t as f64, row-major
//! ```
//!
//! Compiled word tables are rebuilt on load.

use std::io::{Read, Write};

use super::{LanguageModel, ModelConfig, ParamBlocks};
use crate::clustering::ClassPartition;
use crate::corpus::{TokenNormalizer, Vocabulary};
use crate::morphology::{FactorVocabulary, WordFactorization};
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MLBL";
pub const FORMAT_VERSION: u32 = 1;

const FLAG_CONTEXT: u8 = 1;
const FLAG_OUTPUT: u8 = 2;
const FLAG_CLASS: u8 = 4;

fn put_u32<W: Write>(w: &mut W, x: u32) -> Result<()> {
    Ok(w.write_all(&x.to_le_bytes())?)
}

fn put_u64<W: Write>(w: &mut W, x: u64) -> Result<()> {
    Ok(w.write_all(&x.to_le_bytes())?)
}

fn put_str<W: Write>(w: &mut W, s: &str) -> Result<()> {
    put_u32(w, s.len() as u32)?;
    Ok(w.write_all(s.as_bytes())?)
}

fn put_reals<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(xs.len() * 8);
    for x in xs {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    Ok(w.write_all(&buf)?)
}

fn to_u32(x: usize, what: &str) -> Result<u32> {
    u32::try_from(x).map_err(|_| Error::Container(format!("{what} does not fit in 32 bits")))
}

pub fn write_model<W: Write>(model: &LanguageModel, mut w: W) -> Result<()> {
    let w = &mut w;
    let cfg = model.config();
    let vocab = model.vocab();
    w.write_all(MAGIC)?;
    put_u32(w, FORMAT_VERSION)?;
    put_u32(w, to_u32(cfg.order, "order")?)?;
    put_u32(w, to_u32(cfg.dim, "dim")?)?;
    let mut flags = 0u8;
    if cfg.context_additive {
        flags |= FLAG_CONTEXT;
    }
    if cfg.output_additive {
        flags |= FLAG_OUTPUT;
    }
    if cfg.class_based {
        flags |= FLAG_CLASS;
    }
    w.write_all(&[flags])?;
    put_u64(w, vocab.len() as u64)?;
    put_u64(w, model.context_rows() as u64)?;
    put_u64(w, model.target_rows() as u64)?;
    put_u64(w, model.partition().map_or(0, |p| p.num_classes()) as u64)?;

    w.write_all(&vocab.kappa().to_le_bytes())?;
    w.write_all(&[vocab.normalizer().cyrillic_filter as u8])?;
    for (t, &c) in vocab.types().iter().zip(vocab.counts()) {
        put_str(w, t)?;
        put_u64(w, c)?;
    }

    let factors = model.factors();
    put_u64(w, factors.len() as u64)?;
    for f in factors.factors() {
        put_str(w, f)?;
    }

    for row in model.factorization().rows() {
        put_u32(w, to_u32(row.len(), "row length")?)?;
        for &(f, m) in row {
            put_u32(w, to_u32(f, "factor id")?)?;
            put_u32(w, m)?;
        }
    }

    if let Some(p) = model.partition() {
        for &c in p.assignment() {
            put_u32(w, to_u32(c, "class id")?)?;
        }
    }

    for (_, block) in model.params().blocks() {
        put_reals(w, block)?;
    }
    Ok(())
}

struct Reader<R> {
    inner: R,
}

impl<R: Read> Reader<R> {
    fn bytes(&mut self, n: usize) -> Result<Vec<u8>> {
        let mut buf = vec![0; n];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::Container(format!("truncated input: {e}")))?;
        Ok(buf)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.bytes(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.bytes(8)?.try_into().unwrap()))
    }

    fn len(&mut self, limit: u64, what: &str) -> Result<usize> {
        let n = self.u64()?;
        if n > limit {
            return Err(Error::Container(format!("implausible {what}: {n}")));
        }
        Ok(n as usize)
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.bytes(n)?).map_err(|_| Error::Container("invalid utf-8".into()))
    }

    fn reals_into(&mut self, out: &mut [f64]) -> Result<()> {
        let buf = self.bytes(out.len() * 8)?;
        for (x, chunk) in out.iter_mut().zip(buf.chunks_exact(8)) {
            *x = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        Ok(())
    }
}

const MAX_ENTRIES: u64 = 1 << 32;

pub fn read_model<R: Read>(r: R) -> Result<LanguageModel> {
    let mut rd = Reader { inner: r };
    if rd.bytes(4)? != MAGIC {
        return Err(Error::Container("bad magic".into()));
    }
    let version = rd.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Container(format!("unsupported format version {version}")));
    }
    let order = rd.u32()? as usize;
    let dim = rd.u32()? as usize;
    let flags = rd.u8()?;
    if flags & !(FLAG_CONTEXT | FLAG_OUTPUT | FLAG_CLASS) != 0 {
        return Err(Error::Container(format!("unknown flags {flags:#x}")));
    }
    let config = ModelConfig {
        order,
        dim,
        context_additive: flags & FLAG_CONTEXT != 0,
        output_additive: flags & FLAG_OUTPUT != 0,
        class_based: flags & FLAG_CLASS != 0,
    };
    config.validate().map_err(|e| Error::Container(e.to_string()))?;
    let nv = rd.len(MAX_ENTRIES, "vocabulary size")?;
    let fq = rd.len(MAX_ENTRIES, "context table size")?;
    let fr = rd.len(MAX_ENTRIES, "target table size")?;
    let nc = rd.len(MAX_ENTRIES, "class count")?;

    let kappa = f64::from_le_bytes(rd.bytes(8)?.try_into().unwrap());
    let normalizer = TokenNormalizer {
        cyrillic_filter: rd.u8()? != 0,
    };
    let mut types = Vec::with_capacity(nv);
    let mut counts = Vec::with_capacity(nv);
    for _ in 0..nv {
        types.push(rd.string()?);
        counts.push(rd.u64()?);
    }
    let vocab = Vocabulary::from_parts(types, counts, kappa, normalizer)
        .map_err(|e| Error::Container(format!("vocabulary: {e}")))?;

    let nf = rd.len(MAX_ENTRIES, "factor count")?;
    let mut factors = FactorVocabulary::default();
    for _ in 0..nf {
        let f = rd.string()?;
        if factors.id(&f).is_some() {
            return Err(Error::Container(format!("duplicate factor `{f}`")));
        }
        factors.intern(&f);
    }

    let mut rows = Vec::with_capacity(nv);
    for _ in 0..nv {
        let nnz = rd.u32()? as usize;
        let mut row = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            row.push((rd.u32()? as usize, rd.u32()?));
        }
        rows.push(row);
    }
    let factorization = WordFactorization::from_rows(rows, nf).map_err(|e| Error::Container(e.to_string()))?;

    let partition = if config.class_based {
        let mut assign = Vec::with_capacity(nv);
        for _ in 0..nv {
            let c = rd.u32()? as usize;
            if c >= nc {
                return Err(Error::Container(format!("class id {c} out of range")));
            }
            assign.push(c);
        }
        let p = ClassPartition::from_assignment(assign).map_err(|e| Error::Container(e.to_string()))?;
        if p.num_classes() != nc {
            return Err(Error::Container("class count mismatch".into()));
        }
        Some(p)
    } else {
        None
    };

    let mut params = ParamBlocks::zeros(&config, nv, fq, fr, nc);
    for (_, block) in params.blocks_mut() {
        rd.reals_into(block)?;
    }
    let mut probe = [0u8; 1];
    if rd.inner.read(&mut probe)? != 0 {
        return Err(Error::Container("trailing bytes".into()));
    }
    LanguageModel::new(config, vocab, factors, factorization, partition, params)
        .map_err(|e| Error::Container(e.to_string()))
}
