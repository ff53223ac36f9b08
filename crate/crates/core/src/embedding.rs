//! Token representation providers: bag-of-words counts, a trainable lookup
//! table, and scalar mixing of three precomputed contextual layers.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::{softmax, Scalar};

pub const UNK: &str = "<unk>";

/// Token → index map with the unknown token at the last index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Known tokens in the given order (duplicates skipped), then [`UNK`].
    pub fn from_tokens<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in tokens {
            let t = t.into();
            if t == UNK || vocab.index.contains_key(&t) {
                continue;
            }
            vocab.index.insert(t.clone(), vocab.tokens.len());
            vocab.tokens.push(t);
        }
        vocab.index.insert(UNK.to_string(), vocab.tokens.len());
        vocab.tokens.push(UNK.to_string());
        vocab
    }

    /// Frequency-ordered vocabulary (ties broken lexicographically) of at
    /// most `max_size` known tokens seen at least `min_count` times.
    pub fn build<'a, I>(sentences: I, min_count: usize, max_size: usize) -> Self
    where
        I: IntoIterator<Item = &'a [String]>,
    {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for s in sentences {
            for t in s {
                *counts.entry(t.as_str()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, usize)> = counts
            .into_iter()
            .filter(|&(_, c)| c >= min_count)
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        Vocabulary::from_tokens(ranked.into_iter().take(max_size).map(|(t, _)| t))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn unk_index(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn index(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(self.unk_index())
    }

    /// All tokens in index order, including the trailing [`UNK`].
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Per-token occurrence counts; out-of-vocabulary tokens count toward the unknown index.
pub fn bow_vector<T: Scalar, S: AsRef<str>>(tokens: &[S], vocab: &Vocabulary) -> Vec<T> {
    let mut v = vec![T::zero(); vocab.len()];
    for t in tokens {
        v[vocab.index(t.as_ref())] += T::one();
    }
    v
}

/// `L × D` token representation matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSequence<T>(Matrix<T>);

impl<T: Scalar> EmbeddingSequence<T> {
    pub fn new(rows: Matrix<T>) -> Result<Self> {
        if rows.cols() == 0 {
            return Err(Error::Shape(
                "embedding dimension must be at least 1".into(),
            ));
        }
        if !rows.all_finite() {
            return Err(Error::Invalid("non-finite embedding value".into()));
        }
        Ok(EmbeddingSequence(rows))
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn row(&self, i: usize) -> &[T] {
        self.0.row(i)
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.0
    }
}

/// Looks up each token's row of `table`. Returns the sequence and the row
/// indices used, which the backward pass needs.
pub fn embed_static<T: Scalar, S: AsRef<str>>(
    tokens: &[S],
    vocab: &Vocabulary,
    table: &Matrix<T>,
) -> Result<(EmbeddingSequence<T>, Vec<usize>)> {
    if table.rows() != vocab.len() {
        return Err(Error::Shape(format!(
            "embedding table has {} rows for a vocabulary of {}",
            table.rows(),
            vocab.len()
        )));
    }
    let ids: Vec<usize> = tokens.iter().map(|t| vocab.index(t.as_ref())).collect();
    let mut data = Vec::with_capacity(ids.len() * table.cols());
    for &i in &ids {
        data.extend_from_slice(table.row(i));
    }
    let m = Matrix::from_vec(ids.len(), table.cols(), data)?;
    Ok((EmbeddingSequence::new(m)?, ids))
}

/// Scatter-adds upstream row gradients into the table gradient.
pub fn embed_static_backward<T: Scalar>(
    ids: &[usize],
    d_rows: &Matrix<T>,
    d_table: &mut Matrix<T>,
) {
    for (r, &id) in ids.iter().enumerate() {
        for (g, &d) in d_table.row_mut(id).iter_mut().zip(d_rows.row(r)) {
            *g += d;
        }
    }
}

pub const NUM_LAYERS: usize = 3;

/// Softmax-normalized layer weights and a global scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixingParams<T> {
    pub raw: [T; NUM_LAYERS],
    pub gamma: T,
}

impl<T: Scalar> Default for MixingParams<T> {
    fn default() -> Self {
        MixingParams {
            raw: [T::zero(); NUM_LAYERS],
            gamma: T::one(),
        }
    }
}

impl<T: Scalar> MixingParams<T> {
    pub fn weights(&self) -> [T; NUM_LAYERS] {
        let s = softmax(&self.raw);
        [s[0], s[1], s[2]]
    }
}

/// Three `L × D` layer outputs of a pretrained contextual encoder for one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct ContextualLayerRecord {
    pub key: String,
    pub len: usize,
    pub dim: usize,
    /// Row-major `L × D` values per layer.
    pub layers: [Vec<f32>; NUM_LAYERS],
}

impl ContextualLayerRecord {
    pub fn validate(&self) -> Result<()> {
        let want = self.len * self.dim;
        if let Some((j, l)) = self
            .layers
            .iter()
            .enumerate()
            .find(|(_, l)| l.len() != want)
        {
            return Err(Error::Shape(format!(
                "record {}: layer {j} has {} values, expected {}x{}",
                self.key,
                l.len(),
                self.len,
                self.dim
            )));
        }
        Ok(())
    }
}

/// `E = γ · Σ_j softmax(raw)_j · layer_j`
pub fn mix_layers<T: Scalar>(
    record: &ContextualLayerRecord,
    mix: &MixingParams<T>,
) -> Result<EmbeddingSequence<T>> {
    record.validate()?;
    let s = mix.weights();
    let data: Vec<T> = (0..record.len * record.dim)
        .map(|i| {
            let acc = (0..NUM_LAYERS).fold(T::zero(), |acc, j| {
                acc + s[j] * T::from_f64_lossy(record.layers[j][i] as f64)
            });
            mix.gamma * acc
        })
        .collect();
    EmbeddingSequence::new(Matrix::from_vec(record.len, record.dim, data)?)
}

/// Gradients of the raw layer weights and γ given `dE`.
pub fn mix_layers_backward<T: Scalar>(
    record: &ContextualLayerRecord,
    mix: &MixingParams<T>,
    d_out: &Matrix<T>,
) -> MixingParams<T> {
    let s = mix.weights();
    let mut d_s = [T::zero(); NUM_LAYERS];
    for (j, ds) in d_s.iter_mut().enumerate() {
        *ds = d_out
            .as_slice()
            .iter()
            .zip(&record.layers[j])
            .fold(T::zero(), |acc, (&d, &x)| {
                acc + d * T::from_f64_lossy(x as f64)
            });
    }
    // ∂E/∂γ = Σ_j s_j X_j ; ∂E/∂s_j = γ X_j
    let d_gamma = (0..NUM_LAYERS).fold(T::zero(), |acc, j| acc + s[j] * d_s[j]);
    let weighted = d_gamma;
    let mut raw = [T::zero(); NUM_LAYERS];
    for k in 0..NUM_LAYERS {
        raw[k] = mix.gamma * s[k] * (d_s[k] - weighted);
    }
    MixingParams {
        raw,
        gamma: d_gamma,
    }
}

pub const CONTEXTUAL_MAGIC: &[u8; 4] = b"CTXE";
pub const CONTEXTUAL_VERSION: u32 = 1;

/// Keyed source of contextual layer records.
pub trait ContextualSource: Sync {
    fn dim(&self) -> usize;
    fn record(&self, key: &str) -> Result<Option<ContextualLayerRecord>>;
}

/// Records held in memory.
#[derive(Debug, Clone, Default)]
pub struct ContextualStore {
    dim: usize,
    records: HashMap<String, ContextualLayerRecord>,
    order: Vec<String>,
}

impl ContextualStore {
    pub fn new(dim: usize) -> Self {
        ContextualStore {
            dim,
            ..Default::default()
        }
    }

    pub fn insert(&mut self, record: ContextualLayerRecord) -> Result<()> {
        record.validate()?;
        if record.dim != self.dim {
            return Err(Error::Shape(format!(
                "record {} has dimension {}, store has {}",
                record.key, record.dim, self.dim
            )));
        }
        if self.records.contains_key(&record.key) {
            return Err(Error::Invalid(format!(
                "duplicate contextual key {}",
                record.key
            )));
        }
        self.order.push(record.key.clone());
        self.records.insert(record.key.clone(), record);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&ContextualLayerRecord> {
        self.records.get(key)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records in insertion order.
    pub fn iter(&self) -> impl Iterator<Item = &ContextualLayerRecord> {
        self.order.iter().map(|k| &self.records[k])
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CONTEXTUAL_MAGIC)?;
        w.write_all(&CONTEXTUAL_VERSION.to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for r in self.iter() {
            let key = r.key.as_bytes();
            let key_len = u16::try_from(key.len())
                .map_err(|_| Error::Invalid(format!("key {} longer than 65535 bytes", r.key)))?;
            w.write_all(&key_len.to_le_bytes())?;
            w.write_all(key)?;
            w.write_all(&(r.len as u32).to_le_bytes())?;
            for layer in &r.layers {
                for v in layer {
                    w.write_all(&v.to_le_bytes())?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        self.write(BufWriter::new(f))
    }

    /// Parses a whole contextual file held in a reader.
    pub fn read<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let total = bytes.len() as u64;
        let mut cur = io::Cursor::new(bytes);
        let dim = read_header(&mut cur, total)?;
        let mut store = ContextualStore::new(dim);
        while let Some(entry) = read_entry_header(&mut cur, total, dim)? {
            let mut payload = vec![0u8; entry.payload_bytes as usize];
            cur.read_exact(&mut payload)?;
            let record = decode_payload(entry.key, entry.len, dim, &payload);
            if store.records.contains_key(&record.key) {
                return Err(Error::format(
                    entry.start,
                    format!("key collision on {}", record.key),
                ));
            }
            store.insert(record)?;
        }
        Ok(store)
    }
}

impl ContextualSource for ContextualStore {
    fn dim(&self) -> usize {
        self.dim
    }

    fn record(&self, key: &str) -> Result<Option<ContextualLayerRecord>> {
        Ok(self.records.get(key).cloned())
    }
}

struct EntryHeader {
    key: String,
    len: usize,
    start: u64,
    payload_bytes: u64,
}

fn read_array<const N: usize, R: Read + Seek>(
    r: &mut R,
    total: u64,
    what: &str,
) -> Result<[u8; N]> {
    let at = r.stream_position()?;
    if at + N as u64 > total {
        return Err(Error::format(at, format!("truncated {what}")));
    }
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_header<R: Read + Seek>(r: &mut R, total: u64) -> Result<usize> {
    let magic = read_array::<4, _>(r, total, "magic")?;
    if &magic != CONTEXTUAL_MAGIC {
        return Err(Error::format(0, "bad magic, expected CTXE"));
    }
    let version = u32::from_le_bytes(read_array::<4, _>(r, total, "version")?);
    if version != CONTEXTUAL_VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    let dim = u32::from_le_bytes(read_array::<4, _>(r, total, "dimension")?) as usize;
    if dim == 0 {
        return Err(Error::format(8, "dimension must be at least 1"));
    }
    Ok(dim)
}

fn read_entry_header<R: Read + Seek>(
    r: &mut R,
    total: u64,
    dim: usize,
) -> Result<Option<EntryHeader>> {
    let start = r.stream_position()?;
    if start == total {
        return Ok(None);
    }
    let key_len = u16::from_le_bytes(read_array::<2, _>(r, total, "key length")?) as u64;
    let at = r.stream_position()?;
    if at + key_len > total {
        return Err(Error::format(at, "truncated key"));
    }
    let mut key = vec![0u8; key_len as usize];
    r.read_exact(&mut key)?;
    let key = String::from_utf8(key).map_err(|_| Error::format(at, "key is not UTF-8"))?;
    let len = u32::from_le_bytes(read_array::<4, _>(r, total, "sequence length")?) as usize;
    let payload_bytes = (NUM_LAYERS * len * dim * 4) as u64;
    let at = r.stream_position()?;
    if at + payload_bytes > total {
        return Err(Error::format(
            at,
            format!(
                "truncated record {key}: {payload_bytes} payload bytes, {} available",
                total - at
            ),
        ));
    }
    Ok(Some(EntryHeader {
        key,
        len,
        start,
        payload_bytes,
    }))
}

fn decode_payload(key: String, len: usize, dim: usize, payload: &[u8]) -> ContextualLayerRecord {
    let per = len * dim;
    let floats: Vec<f32> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    ContextualLayerRecord {
        key,
        len,
        dim,
        layers: [
            floats[..per].to_vec(),
            floats[per..2 * per].to_vec(),
            floats[2 * per..].to_vec(),
        ],
    }
}

/// Indexed on-disk contextual file. Only the key index is held in memory;
/// records are read on demand with positioned reads, so lookups from many
/// threads do not contend.
#[derive(Debug)]
pub struct ContextualFile {
    path: PathBuf,
    file: File,
    dim: usize,
    index: HashMap<String, (u64, usize)>,
}

impl ContextualFile {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let wrap = |source| Error::File {
            path: path.clone(),
            source,
        };
        let mut file = File::open(&path).map_err(wrap)?;
        let total = file.metadata().map_err(wrap)?.len();
        let dim = read_header(&mut file, total)?;
        let mut index = HashMap::new();
        while let Some(entry) = read_entry_header(&mut file, total, dim)? {
            let offset = file.stream_position()?;
            if index
                .insert(entry.key.clone(), (offset, entry.len))
                .is_some()
            {
                return Err(Error::format(
                    entry.start,
                    format!("key collision on {}", entry.key),
                ));
            }
            file.seek(SeekFrom::Current(entry.payload_bytes as i64))?;
        }
        Ok(ContextualFile {
            path,
            file,
            dim,
            index,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.index.keys().map(String::as_str)
    }
}

#[cfg(unix)]
fn read_exact_at(file: &File, buf: &mut [u8], offset: u64) -> io::Result<()> {
    use std::os::unix::fs::FileExt;
    file.read_exact_at(buf, offset)
}

#[cfg(windows)]
fn read_exact_at(file: &File, mut buf: &mut [u8], mut offset: u64) -> io::Result<()> {
    use std::os::windows::fs::FileExt;
    while !buf.is_empty() {
        let n = file.seek_read(buf, offset)?;
        if n == 0 {
            return Err(io::ErrorKind::UnexpectedEof.into());
        }
        buf = &mut buf[n..];
        offset += n as u64;
    }
    Ok(())
}

impl ContextualSource for ContextualFile {
    fn dim(&self) -> usize {
        self.dim
    }

    fn record(&self, key: &str) -> Result<Option<ContextualLayerRecord>> {
        let Some(&(offset, len)) = self.index.get(key) else {
            return Ok(None);
        };
        let mut payload = vec![0u8; NUM_LAYERS * len * self.dim * 4];
        read_exact_at(&self.file, &mut payload, offset)?;
        Ok(Some(decode_payload(
            key.to_string(),
            len,
            self.dim,
            &payload,
        )))
    }
}

/// Opens a contextual file for keyed random access.
pub fn load_contextual_file(path: impl AsRef<Path>) -> Result<ContextualFile> {
    ContextualFile::open(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(key: &str, len: usize, dim: usize, rng: &mut ChaCha8Rng) -> ContextualLayerRecord {
        let mut layer = || {
            (0..len * dim)
                .map(|_| rng.gen_range(-2.0f32..2.0))
                .collect::<Vec<_>>()
        };
        ContextualLayerRecord {
            key: key.into(),
            len,
            dim,
            layers: [layer(), layer(), layer()],
        }
    }

    #[test]
    fn bow_examples() {
        let vocab = Vocabulary::from_tokens(["a", "b"]);
        assert_eq!(vocab.unk_index(), 2);
        assert_eq!(
            bow_vector::<f64, _>(&["a", "b", "a"], &vocab),
            vec![2.0, 1.0, 0.0]
        );
        assert_eq!(bow_vector::<f64, &str>(&[], &vocab), vec![0.0; 3]);
        assert_eq!(bow_vector::<f64, _>(&["z"], &vocab), vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn vocabulary_build_orders_by_frequency() {
        let s1: Vec<String> = ["b", "a", "b"].map(String::from).to_vec();
        let s2: Vec<String> = ["c", "a", "b"].map(String::from).to_vec();
        let v = Vocabulary::build([s1.as_slice(), s2.as_slice()], 1, 10);
        assert_eq!(v.tokens(), &["b", "a", "c", UNK]);
        let v = Vocabulary::build([s1.as_slice(), s2.as_slice()], 2, 10);
        assert_eq!(v.tokens(), &["b", "a", UNK]);
        let v = Vocabulary::build([s1.as_slice(), s2.as_slice()], 1, 1);
        assert_eq!(v.tokens(), &["b", UNK]);
    }

    #[test]
    fn static_lookup() {
        let vocab = Vocabulary::from_tokens(["x"]);
        let table = Matrix::from_rows(&[vec![1.0, 2.0], vec![9.0, 9.0]]).unwrap();
        let (e, ids) = embed_static(&["x"], &vocab, &table).unwrap();
        assert_eq!(e.row(0), &[1.0, 2.0]);
        assert_eq!(ids, vec![0]);
        let (e, _) = embed_static(&["p", "q", "r"], &vocab, &table).unwrap();
        for i in 0..3 {
            assert_eq!(e.row(i), &[9.0, 9.0]);
        }
    }

    #[test]
    fn static_backward_accumulates_repeated_rows() {
        let vocab = Vocabulary::from_tokens(["x", "y"]);
        let d = Matrix::from_rows(&[vec![1.0, 0.5], vec![2.0, 0.0], vec![3.0, 1.0]]).unwrap();
        let mut g = Matrix::<f64>::zeros(3, 2);
        let ids: Vec<usize> = ["x", "y", "x"].iter().map(|t| vocab.index(t)).collect();
        embed_static_backward(&ids, &d, &mut g);
        assert_eq!(g.row(0), &[4.0, 1.5]);
        assert_eq!(g.row(1), &[2.0, 0.0]);
        assert_eq!(g.row(2), &[0.0, 0.0]);
    }

    #[test]
    fn mixing_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rec = record("k", 4, 3, &mut rng);
        let mix = MixingParams {
            raw: [0.0, 0.0, 60.0],
            gamma: 1.0f64,
        };
        let e = mix_layers(&rec, &mix).unwrap();
        for (i, &v) in e.matrix().as_slice().iter().enumerate() {
            assert!((v - rec.layers[2][i] as f64).abs() < 1e-6);
        }
        let mean = mix_layers(&rec, &MixingParams::<f64>::default()).unwrap();
        let double = mix_layers(
            &rec,
            &MixingParams {
                raw: [0.0; 3],
                gamma: 2.0f64,
            },
        )
        .unwrap();
        for i in 0..12 {
            let want = rec.layers.iter().map(|l| l[i] as f64).sum::<f64>() / 3.0;
            assert!((mean.matrix().as_slice()[i] - want).abs() < 1e-12);
            assert_eq!(
                double.matrix().as_slice()[i],
                2.0 * mean.matrix().as_slice()[i]
            );
        }
    }

    #[test]
    fn softmax_weights_sum_to_one() {
        let mix = MixingParams {
            raw: [3.0, -1.0, 0.25f64],
            gamma: 1.0,
        };
        let w = mix.weights();
        assert!(w.iter().all(|&x| x > 0.0));
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mixing_rejects_mismatched_layers() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut rec = record("k", 2, 2, &mut rng);
        rec.layers[1].pop();
        assert!(matches!(
            mix_layers(&rec, &MixingParams::<f64>::default()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn mixing_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rec = record("k", 3, 2, &mut rng);
        let weights: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mix = MixingParams {
            raw: [0.3, -0.7, 0.1],
            gamma: 1.3,
        };
        let loss = |m: &MixingParams<f64>| -> f64 {
            let e = mix_layers(&rec, m).unwrap();
            e.matrix()
                .as_slice()
                .iter()
                .zip(&weights)
                .map(|(a, b)| (a * b).sin())
                .sum()
        };
        let e = mix_layers(&rec, &mix).unwrap();
        let d_out = Matrix::from_vec(
            3,
            2,
            e.matrix()
                .as_slice()
                .iter()
                .zip(&weights)
                .map(|(a, b)| b * (a * b).cos())
                .collect(),
        )
        .unwrap();
        let g = mix_layers_backward(&rec, &mix, &d_out);
        let h = 1e-6;
        for k in 0..4 {
            let mut plus = mix;
            let mut minus = mix;
            if k < 3 {
                plus.raw[k] += h;
                minus.raw[k] -= h;
            } else {
                plus.gamma += h;
                minus.gamma -= h;
            }
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let an = if k < 3 { g.raw[k] } else { g.gamma };
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                "param {k}: fd {fd} vs {an}"
            );
        }
    }

    #[test]
    fn contextual_round_trip_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut store = ContextualStore::new(3);
        for i in 0..5 {
            let len = rng.gen_range(1..6);
            store
                .insert(record(&format!("key{i}"), len, 3, &mut rng))
                .unwrap();
        }
        let mut buf = Vec::new();
        store.write(&mut buf).unwrap();
        let back = ContextualStore::read(&buf[..]).unwrap();
        assert_eq!(back.len(), 5);
        for r in store.iter() {
            let b = back.get(&r.key).unwrap();
            for j in 0..3 {
                let x: Vec<u32> = r.layers[j].iter().map(|v| v.to_bits()).collect();
                let y: Vec<u32> = b.layers[j].iter().map(|v| v.to_bits()).collect();
                assert_eq!(x, y);
            }
        }

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ctx.bin");
        store.save(&path).unwrap();
        let file = load_contextual_file(&path).unwrap();
        assert_eq!(file.len(), 5);
        for r in store.iter() {
            assert_eq!(&file.record(&r.key).unwrap().unwrap(), r);
        }
        assert!(file.record("missing").unwrap().is_none());
    }

    #[test]
    fn empty_contextual_file() {
        let mut buf = Vec::new();
        ContextualStore::new(8).write(&mut buf).unwrap();
        let back = ContextualStore::read(&buf[..]).unwrap();
        assert!(back.is_empty());
        assert_eq!(back.dim(), 8);
    }

    #[test]
    fn contextual_format_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ContextualStore::new(2);
        store.insert(record("a", 2, 2, &mut rng)).unwrap();
        store.insert(record("b", 2, 2, &mut rng)).unwrap();
        let mut buf = Vec::new();
        store.write(&mut buf).unwrap();

        let truncated = &buf[..buf.len() - 3];
        match ContextualStore::read(truncated) {
            // second record payload starts after header(12) + rec a(2+1+4+48) + 2+1+4
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 12 + 55 + 7),
            other => panic!("unexpected {other:?}"),
        }

        let mut bad = buf.clone();
        bad[0] = b'X';
        assert!(matches!(
            ContextualStore::read(&bad[..]),
            Err(Error::Format { offset: 0, .. })
        ));

        let mut bad = buf.clone();
        bad[4] = 9;
        assert!(matches!(
            ContextualStore::read(&bad[..]),
            Err(Error::Format { offset: 4, .. })
        ));

        // duplicate key: rename "b" to "a"
        let mut dup = buf.clone();
        let second_key = 12 + 55 + 2;
        dup[second_key] = b'a';
        assert!(matches!(
            ContextualStore::read(&dup[..]),
            Err(Error::Format { .. })
        ));
    }
}
