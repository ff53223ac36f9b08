//! Binary model files.
//!
//! Layout (little-endian): magic `DCBM`, u32 version, u8 provider tag,
//! u64 seed, u32 token dim, u32 hidden (0 without encoder), u32 FFN depth,
//! u32 per hidden width, u32 class count, abbreviation, labels, u8 vocabulary
//! flag then u32 count and tokens (unknown token excluded), u32 block count,
//! then per block: name, u32 rows, u32 cols, `rows·cols` f64 values. Strings
//! are u32 byte length then UTF-8. The final 32 bytes are the SHA-256 of
//! everything before them.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::atomic::write_atomic;
use crate::classifier::{
    BiLstmParams, ClassifierModel, FfnParams, LstmCell, Provider, TrainingLog, Weights,
};
use crate::embedding::{MixingParams, Vocabulary};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub const MODEL_MAGIC: &[u8; 4] = b"DCBM";
pub const MODEL_VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

struct Encoder(Vec<u8>);

impl Encoder {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }

    fn u32(&mut self, v: usize) -> Result<()> {
        let v =
            u32::try_from(v).map_err(|_| Error::Invalid(format!("{v} does not fit in 32 bits")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) -> Result<()> {
        self.u32(s.len())?;
        self.0.extend_from_slice(s.as_bytes());
        Ok(())
    }
}

fn token_dim<T: Scalar>(model: &ClassifierModel<T>) -> usize {
    let w = &model.weights;
    match (&w.encoder, &w.table) {
        (Some(e), _) => e.input_dim(),
        (None, Some(t)) => t.cols(),
        (None, None) => w.head.input_dim(),
    }
}

/// Serializes a validated model, checksum included.
pub fn encode_model<T: Scalar>(model: &ClassifierModel<T>) -> Result<Vec<u8>> {
    model.validate()?;
    let w = &model.weights;
    let mut e = Encoder(Vec::new());
    e.0.extend_from_slice(MODEL_MAGIC);
    e.0.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    e.u8(model.provider.tag());
    e.u64(model.seed);
    e.u32(token_dim(model))?;
    e.u32(w.encoder.as_ref().map_or(0, BiLstmParams::hidden))?;
    let widths = w.head.widths();
    e.u32(widths.len())?;
    for width in widths {
        e.u32(width)?;
    }
    e.u32(model.labels.len())?;
    e.str(&model.abbreviation)?;
    for label in &model.labels {
        e.str(label)?;
    }
    match &model.vocabulary {
        Some(v) => {
            e.u8(1);
            let known = &v.tokens()[..v.unk_index()];
            e.u32(known.len())?;
            for t in known {
                e.str(t)?;
            }
        }
        None => e.u8(0),
    }
    let blocks = w.blocks();
    e.u32(blocks.len())?;
    for b in blocks {
        e.str(&b.name)?;
        e.u32(b.rows)?;
        e.u32(b.cols)?;
        for v in b.values {
            e.0.extend_from_slice(&v.to_f64_lossy().to_le_bytes());
        }
    }
    let digest = Sha256::digest(&e.0);
    e.0.extend_from_slice(&digest);
    Ok(e.0)
}

struct Decoder<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Decoder<'a> {
    fn offset(&self) -> u64 {
        self.pos as u64
    }

    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.buf.len())
            .ok_or_else(|| {
                Error::format(
                    self.offset(),
                    format!(
                        "truncated {what}: need {n} bytes, {} remain",
                        self.buf.len() - self.pos
                    ),
                )
            })?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn str(&mut self, what: &str) -> Result<String> {
        let start = self.offset();
        let len = self.u32(what)?;
        let bytes = self.take(len, what)?;
        String::from_utf8(bytes.to_vec())
            .map_err(|_| Error::format(start, format!("{what} is not UTF-8")))
    }

    /// Count field whose items each occupy at least `min_item` bytes.
    fn count(&mut self, what: &str, min_item: usize) -> Result<usize> {
        let start = self.offset();
        let n = self.u32(what)?;
        if n.saturating_mul(min_item) > self.buf.len() - self.pos {
            return Err(Error::format(
                start,
                format!("{what} {n} exceeds remaining file size"),
            ));
        }
        Ok(n)
    }
}

/// Parameter blocks implied by the header, all zero.
fn skeleton<T: Scalar>(
    provider: Provider,
    token_dim: usize,
    hidden: usize,
    widths: &[usize],
    classes: usize,
    embed_rows_cols: Option<(usize, usize)>,
) -> Weights<T> {
    let head_in = if provider.has_encoder() {
        2 * hidden
    } else {
        token_dim
    };
    Weights {
        mixing: provider.needs_contextual().then(|| MixingParams {
            raw: [T::zero(); 3],
            gamma: T::zero(),
        }),
        table: embed_rows_cols.map(|(r, c)| Matrix::zeros(r, c)),
        encoder: provider.has_encoder().then(|| BiLstmParams {
            forward: LstmCell::zeros(token_dim, hidden),
            backward: LstmCell::zeros(token_dim, hidden),
        }),
        head: FfnParams::zeros(head_in, widths, classes),
    }
}

/// Parameter count implied by the header, `None` on overflow.
fn implied_params(
    provider: Provider,
    token_dim: usize,
    hidden: usize,
    widths: &[usize],
    classes: usize,
    table: Option<(usize, usize)>,
) -> Option<usize> {
    let mut total: usize = if provider.needs_contextual() { 4 } else { 0 };
    if let Some((r, c)) = table {
        total = total.checked_add(r.checked_mul(c)?)?;
    }
    if provider.has_encoder() {
        let gates = hidden.checked_mul(4)?;
        let per_cell = gates.checked_mul(token_dim.checked_add(hidden)?.checked_add(1)?)?;
        total = total.checked_add(per_cell.checked_mul(2)?)?;
    }
    let head_in = if provider.has_encoder() {
        hidden.checked_mul(2)?
    } else {
        token_dim
    };
    let mut fan_in = head_in;
    for &out in widths.iter().chain(std::iter::once(&classes)) {
        total = total.checked_add(out.checked_mul(fan_in.checked_add(1)?)?)?;
        fan_in = out;
    }
    Some(total)
}

/// Parses and fully validates a model. Nothing is returned unless every
/// check passes, including the checksum.
pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<ClassifierModel<T>> {
    if bytes.len() < MODEL_MAGIC.len() || &bytes[..4] != MODEL_MAGIC {
        return Err(Error::format(0, "not a model file (bad magic)"));
    }
    if bytes.len() < 8 + CHECKSUM_LEN {
        return Err(Error::format(bytes.len() as u64, "file too short"));
    }
    let body_len = bytes.len() - CHECKSUM_LEN;
    let mut d = Decoder {
        buf: &bytes[..body_len],
        pos: 4,
    };
    let version = d.u32("version")? as u32;
    if version != MODEL_VERSION {
        return Err(Error::format(
            4,
            format!("unsupported version {version}, expected {MODEL_VERSION}"),
        ));
    }
    let tag_at = d.offset();
    let tag = d.u8("provider tag")?;
    let provider = Provider::from_tag(tag)
        .ok_or_else(|| Error::format(tag_at, format!("unknown provider tag {tag}")))?;
    let seed = d.u64("seed")?;
    let dims_at = d.offset();
    let token_dim = d.u32("token dimension")?;
    let hidden = d.u32("hidden size")?;
    let depth = d.count("FFN depth", 4)?;
    let widths = (0..depth)
        .map(|_| d.u32("FFN width"))
        .collect::<Result<Vec<_>>>()?;
    let classes = d.count("class count", 4)?;
    if token_dim == 0
        || classes == 0
        || widths.contains(&0)
        || (provider.has_encoder() != (hidden > 0))
    {
        return Err(Error::format(dims_at, "invalid dimensions for provider"));
    }
    let abbreviation = d.str("abbreviation")?;
    let labels = (0..classes)
        .map(|_| d.str("label"))
        .collect::<Result<Vec<_>>>()?;
    let vocab_at = d.offset();
    let vocabulary = match d.u8("vocabulary flag")? {
        0 => None,
        1 => {
            let n = d.count("vocabulary size", 4)?;
            let tokens = (0..n)
                .map(|_| d.str("vocabulary token"))
                .collect::<Result<Vec<_>>>()?;
            let v = Vocabulary::from_tokens(tokens);
            if v.len() != n + 1 {
                return Err(Error::format(vocab_at, "duplicate vocabulary token"));
            }
            Some(v)
        }
        f => return Err(Error::format(vocab_at, format!("bad vocabulary flag {f}"))),
    };
    if vocabulary.is_some() != provider.needs_vocabulary() {
        return Err(Error::format(
            vocab_at,
            format!("vocabulary presence does not match provider {provider}"),
        ));
    }
    let table = (provider == Provider::StaticBiLstm)
        .then(|| (vocabulary.as_ref().map_or(0, Vocabulary::len), token_dim));
    if provider == Provider::Bow && vocabulary.as_ref().map(Vocabulary::len) != Some(token_dim) {
        return Err(Error::format(
            dims_at,
            "bag-of-words dimension differs from vocabulary size",
        ));
    }
    let implied = implied_params(provider, token_dim, hidden, &widths, classes, table)
        .filter(|&n| n.checked_mul(8).is_some_and(|b| b <= d.buf.len() - d.pos))
        .ok_or_else(|| {
            Error::format(
                dims_at,
                "dimensions imply more parameters than the file holds",
            )
        })?;
    debug_assert!(implied > 0);
    let mut weights: Weights<T> = skeleton(provider, token_dim, hidden, &widths, classes, table);

    let expected: Vec<(String, usize, usize)> = weights
        .blocks()
        .iter()
        .map(|b| (b.name.clone(), b.rows, b.cols))
        .collect();
    let count_at = d.offset();
    let n_blocks = d.u32("block count")?;
    if n_blocks != expected.len() {
        return Err(Error::format(
            count_at,
            format!("{n_blocks} parameter blocks, expected {}", expected.len()),
        ));
    }
    for ((name, rows, cols), dst) in expected.iter().zip(weights.blocks_mut()) {
        let at = d.offset();
        let found = d.str("block name")?;
        let r = d.u32("block rows")?;
        let c = d.u32("block cols")?;
        if &found != name || r != *rows || c != *cols {
            return Err(Error::format(
                at,
                format!("block {found} {r}x{c}, expected {name} {rows}x{cols}"),
            ));
        }
        let values_at = d.offset();
        let raw = d.take(r * c * 8, "block values")?;
        for (slot, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            let v = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
            if !v.is_finite() {
                return Err(Error::format(
                    values_at,
                    format!("non-finite value in block {name}"),
                ));
            }
            *slot = T::from_f64_lossy(v);
        }
    }
    if d.pos != body_len {
        return Err(Error::format(
            d.offset(),
            "trailing bytes after parameter blocks",
        ));
    }
    let digest = Sha256::digest(&bytes[..body_len]);
    if digest.as_slice() != &bytes[body_len..] {
        return Err(Error::format(body_len as u64, "checksum mismatch"));
    }
    let model = ClassifierModel {
        abbreviation,
        provider,
        labels,
        vocabulary,
        weights,
        seed,
    };
    model.validate()?;
    Ok(model)
}

pub fn write_model<T: Scalar, W: Write>(model: &ClassifierModel<T>, mut w: W) -> Result<()> {
    w.write_all(&encode_model(model)?)?;
    Ok(())
}

pub fn read_model<T: Scalar, R: Read>(mut r: R) -> Result<ClassifierModel<T>> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    decode_model(&bytes)
}

/// Atomic save; an existing file is replaced only on success.
pub fn save_model<T: Scalar>(model: &ClassifierModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_model(model)?;
    write_atomic(path, |w| Ok(w.write_all(&bytes)?))
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<ClassifierModel<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })?;
    decode_model(&bytes)
}

/// Sidecar path for a model's training log: `<model>.log.tsv`.
pub fn training_log_path(model_path: impl AsRef<Path>) -> PathBuf {
    let mut s = model_path.as_ref().as_os_str().to_owned();
    s.push(".log.tsv");
    PathBuf::from(s)
}

pub fn save_training_log(log: &TrainingLog, model_path: impl AsRef<Path>) -> Result<()> {
    write_atomic(training_log_path(model_path), |w| log.write_tsv(w))
}
