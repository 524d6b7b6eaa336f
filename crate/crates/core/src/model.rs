//! Storage, initialization, persistence, and similarity queries over the
//! three embedding sets.

use std::collections::HashSet;
use std::fs::File;
use std::io::{self, BufWriter, Cursor, Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU32, Ordering};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use sha2::{Digest, Sha256};

use crate::config::{Mode, TrainingConfig};
use crate::corpus::{VocabEntry, Vocabulary};
use crate::error::{Error, Result};
use crate::subwords::SubwordVocabulary;

const MAGIC: &[u8; 4] = b"EVMB";
const FORMAT_VERSION: u32 = 1;

/// Dense row-major f32 matrix whose entries are stored as atomic bits.
///
/// Training workers update rows concurrently without locks; individual
/// element reads and writes are atomic (relaxed), while read-modify-write
/// updates may lose a concurrent increment. That is the intended contract
/// for asynchronous SGD. With a single worker all operations are exact and
/// deterministic.
pub struct EmbeddingMatrix {
    rows: usize,
    dim: usize,
    data: Box<[AtomicU32]>,
}

impl EmbeddingMatrix {
    pub fn zeros(rows: usize, dim: usize) -> EmbeddingMatrix {
        let data = (0..rows * dim).map(|_| AtomicU32::new(0)).collect();
        EmbeddingMatrix { rows, dim, data }
    }

    /// Entries i.i.d. uniform on [-bound, bound).
    pub fn uniform<R: Rng>(rows: usize, dim: usize, bound: f32, rng: &mut R) -> EmbeddingMatrix {
        let data = (0..rows * dim)
            .map(|_| {
                let v = (rng.random::<f32>() * 2.0 - 1.0) * bound;
                AtomicU32::new(v.to_bits())
            })
            .collect();
        EmbeddingMatrix { rows, dim, data }
    }

    fn from_bits(rows: usize, dim: usize, bits: Vec<u32>) -> EmbeddingMatrix {
        debug_assert_eq!(bits.len(), rows * dim);
        let data = bits.into_iter().map(AtomicU32::new).collect();
        EmbeddingMatrix { rows, dim, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        f32::from_bits(self.data[row * self.dim + col].load(Ordering::Relaxed))
    }

    #[inline]
    pub fn set(&self, row: usize, col: usize, value: f32) {
        self.data[row * self.dim + col].store(value.to_bits(), Ordering::Relaxed);
    }

    /// Copy a row into an f64 buffer.
    pub fn read_row(&self, row: usize, out: &mut [f64]) {
        let base = row * self.dim;
        for (c, slot) in out.iter_mut().enumerate().take(self.dim) {
            *slot = f32::from_bits(self.data[base + c].load(Ordering::Relaxed)) as f64;
        }
    }

    pub fn row_f64(&self, row: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.read_row(row, &mut out);
        out
    }

    /// acc[i] += row[i]
    pub fn add_row_to(&self, row: usize, acc: &mut [f64]) {
        let base = row * self.dim;
        for (c, slot) in acc.iter_mut().enumerate().take(self.dim) {
            *slot += f32::from_bits(self.data[base + c].load(Ordering::Relaxed)) as f64;
        }
    }

    /// Dot product of a row with an f64 vector.
    #[inline]
    pub fn row_dot(&self, row: usize, x: &[f64]) -> f64 {
        let base = row * self.dim;
        let mut sum = 0.0;
        for (c, xv) in x.iter().enumerate().take(self.dim) {
            sum += f32::from_bits(self.data[base + c].load(Ordering::Relaxed)) as f64 * xv;
        }
        sum
    }

    /// row[i] += a * x[i]
    pub fn axpy_row(&self, row: usize, a: f64, x: &[f64]) {
        let base = row * self.dim;
        for (c, xv) in x.iter().enumerate().take(self.dim) {
            let idx = base + c;
            let cur = f32::from_bits(self.data[idx].load(Ordering::Relaxed)) as f64;
            self.data[idx].store(((cur + a * xv) as f32).to_bits(), Ordering::Relaxed);
        }
    }

    /// row[i] += a * x[i] + b * y[i], where either term may be absent
    /// (empty slice).
    pub fn update_row2(&self, row: usize, a: f64, x: &[f64], b: f64, y: &[f64]) {
        let base = row * self.dim;
        for c in 0..self.dim {
            let mut delta = 0.0;
            if !x.is_empty() {
                delta += a * x[c];
            }
            if !y.is_empty() {
                delta += b * y[c];
            }
            if delta != 0.0 {
                let idx = base + c;
                let cur = f32::from_bits(self.data[idx].load(Ordering::Relaxed)) as f64;
                self.data[idx].store(((cur + delta) as f32).to_bits(), Ordering::Relaxed);
            }
        }
    }

    pub fn to_bits_vec(&self) -> Vec<u32> {
        self.data.iter().map(|a| a.load(Ordering::Relaxed)).collect()
    }

    pub fn bitwise_eq(&self, other: &EmbeddingMatrix) -> bool {
        self.rows == other.rows
            && self.dim == other.dim
            && self
                .data
                .iter()
                .zip(other.data.iter())
                .all(|(a, b)| a.load(Ordering::Relaxed) == b.load(Ordering::Relaxed))
    }

    pub fn all_finite(&self) -> bool {
        self.data
            .iter()
            .all(|a| f32::from_bits(a.load(Ordering::Relaxed)).is_finite())
    }
}

impl Clone for EmbeddingMatrix {
    fn clone(&self) -> Self {
        EmbeddingMatrix::from_bits(self.rows, self.dim, self.to_bits_vec())
    }
}

impl std::fmt::Debug for EmbeddingMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "EmbeddingMatrix({}x{})", self.rows, self.dim)
    }
}

/// The three embedding sets plus their vocabularies and the configuration
/// they were trained with.
///
/// `word_vecs` (v) are the final word embeddings. `clue_vecs` (h) hold the
/// context-clue embeddings in EV mode and the target-side vectors in SG
/// mode; the matrix is empty in FT mode. `subword_vecs` (z) hold one row
/// per indexed n-gram and are empty in SG mode.
#[derive(Clone, Debug)]
pub struct ModelStore {
    pub dim: usize,
    pub mode: Mode,
    pub config: TrainingConfig,
    pub vocab: Vocabulary,
    pub subwords: SubwordVocabulary,
    pub word_vecs: EmbeddingMatrix,
    pub clue_vecs: EmbeddingMatrix,
    pub subword_vecs: EmbeddingMatrix,
}

impl ModelStore {
    /// Fresh model: word vectors all zero, clue and subword vectors i.i.d.
    /// uniform on [-0.5/dim, +0.5/dim]. Which matrices are populated
    /// depends on the mode.
    pub fn init<R: Rng>(
        vocab: Vocabulary,
        subwords: SubwordVocabulary,
        config: &TrainingConfig,
        rng: &mut R,
    ) -> ModelStore {
        let dim = config.dim;
        let bound = 0.5 / dim as f32;
        let n_words = vocab.len();
        let n_grams = subwords.len();

        let word_vecs = EmbeddingMatrix::zeros(n_words, dim);
        let clue_vecs = match config.mode {
            Mode::Ev | Mode::Sg => EmbeddingMatrix::uniform(n_words, dim, bound, rng),
            Mode::Ft => EmbeddingMatrix::zeros(0, dim),
        };
        let subword_vecs = match config.mode {
            Mode::Ev | Mode::Ft => EmbeddingMatrix::uniform(n_grams, dim, bound, rng),
            Mode::Sg => EmbeddingMatrix::zeros(0, dim),
        };

        ModelStore {
            dim,
            mode: config.mode,
            config: config.clone(),
            vocab,
            subwords,
            word_vecs,
            clue_vecs,
            subword_vecs,
        }
    }

    pub fn bitwise_eq(&self, other: &ModelStore) -> bool {
        self.dim == other.dim
            && self.mode == other.mode
            && self.config == other.config
            && self.vocab.entries() == other.vocab.entries()
            && self.subwords.grams() == other.subwords.grams()
            && self.word_vecs.bitwise_eq(&other.word_vecs)
            && self.clue_vecs.bitwise_eq(&other.clue_vecs)
            && self.subword_vecs.bitwise_eq(&other.subword_vecs)
    }

    pub fn all_finite(&self) -> bool {
        self.word_vecs.all_finite()
            && self.clue_vecs.all_finite()
            && self.subword_vecs.all_finite()
    }

    /// Serialize to the binary model container.
    pub fn save(&self, path: &Path) -> Result<()> {
        let payload = self.to_payload();
        let digest = Sha256::digest(&payload);
        let mut file = BufWriter::new(File::create(path)?);
        file.write_all(&payload)?;
        file.write_all(&digest)?;
        file.flush()?;
        Ok(())
    }

    fn to_payload(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(FORMAT_VERSION).unwrap();
        out.write_u8(self.mode.tag()).unwrap();
        out.write_u32::<LittleEndian>(self.dim as u32).unwrap();
        out.write_u64::<LittleEndian>(self.vocab.len() as u64).unwrap();
        out.write_u64::<LittleEndian>(self.subwords.len() as u64)
            .unwrap();
        write_config(&mut out, &self.config);
        for entry in self.vocab.entries() {
            write_string(&mut out, &entry.token);
            out.write_u64::<LittleEndian>(entry.count).unwrap();
        }
        for gram in self.subwords.grams() {
            write_string(&mut out, gram);
        }
        for matrix in [&self.word_vecs, &self.clue_vecs, &self.subword_vecs] {
            out.write_u64::<LittleEndian>(matrix.rows() as u64).unwrap();
            out.write_u32::<LittleEndian>(matrix.dim() as u32).unwrap();
            for bits in matrix.to_bits_vec() {
                out.write_u32::<LittleEndian>(bits).unwrap();
            }
        }
        out
    }

    /// Deserialize from the binary model container.
    ///
    /// Failure modes are reported distinctly: bad magic, unsupported
    /// version, truncated payload, checksum mismatch.
    pub fn load(path: &Path) -> Result<ModelStore> {
        let bytes = std::fs::read(path)?;
        if bytes.len() < 32 + MAGIC.len() + 4 {
            return Err(Error::Truncated);
        }
        let (payload, checksum) = bytes.split_at(bytes.len() - 32);
        let model = parse_payload(payload)?;
        let digest = Sha256::digest(payload);
        if digest.as_slice() != checksum {
            return Err(Error::ChecksumMismatch);
        }
        Ok(model)
    }

    /// Write the word vectors in word2vec text format: a "<vocab> <dim>"
    /// header line, then one "token value value ..." line per word.
    pub fn export_text<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{} {}", self.vocab.len(), self.dim)?;
        let mut line = String::new();
        for id in 0..self.vocab.len() {
            line.clear();
            line.push_str(self.vocab.token(id));
            for c in 0..self.dim {
                line.push(' ');
                line.push_str(&format!("{}", self.word_vecs.get(id, c)));
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    pub fn export_text_to_file(&self, path: &Path) -> Result<()> {
        self.export_text(BufWriter::new(File::create(path)?))
    }
}

fn write_string(out: &mut Vec<u8>, s: &str) {
    out.write_u32::<LittleEndian>(s.len() as u32).unwrap();
    out.extend_from_slice(s.as_bytes());
}

fn write_config(out: &mut Vec<u8>, c: &TrainingConfig) {
    out.write_u64::<LittleEndian>(c.dim as u64).unwrap();
    out.write_u64::<LittleEndian>(c.min_count).unwrap();
    out.write_f64::<LittleEndian>(c.subsample_threshold).unwrap();
    out.write_u64::<LittleEndian>(c.max_window as u64).unwrap();
    out.write_u64::<LittleEndian>(c.clue_window as u64).unwrap();
    out.write_u64::<LittleEndian>(c.negatives as u64).unwrap();
    out.write_u64::<LittleEndian>(c.epochs as u64).unwrap();
    out.write_f64::<LittleEndian>(c.lr0).unwrap();
    out.write_f64::<LittleEndian>(c.lr_min).unwrap();
    out.write_u64::<LittleEndian>(c.n_min as u64).unwrap();
    out.write_u64::<LittleEndian>(c.n_max as u64).unwrap();
    out.write_u64::<LittleEndian>(c.min_gram_words as u64).unwrap();
    out.write_u8(c.mode.tag()).unwrap();
    out.write_u64::<LittleEndian>(c.workers as u64).unwrap();
    out.write_u64::<LittleEndian>(c.seed).unwrap();
}

struct PayloadReader<'a> {
    cursor: Cursor<&'a [u8]>,
}

impl<'a> PayloadReader<'a> {
    fn new(payload: &'a [u8]) -> Self {
        PayloadReader {
            cursor: Cursor::new(payload),
        }
    }

    fn remaining(&self) -> usize {
        self.cursor.get_ref().len() - self.cursor.position() as usize
    }

    fn map_eof(e: io::Error) -> Error {
        if e.kind() == io::ErrorKind::UnexpectedEof {
            Error::Truncated
        } else {
            Error::Io(e)
        }
    }

    fn u8(&mut self) -> Result<u8> {
        self.cursor.read_u8().map_err(Self::map_eof)
    }

    fn u32(&mut self) -> Result<u32> {
        self.cursor.read_u32::<LittleEndian>().map_err(Self::map_eof)
    }

    fn u64(&mut self) -> Result<u64> {
        self.cursor.read_u64::<LittleEndian>().map_err(Self::map_eof)
    }

    fn f64(&mut self) -> Result<f64> {
        self.cursor.read_f64::<LittleEndian>().map_err(Self::map_eof)
    }

    fn string(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        if self.remaining() < len {
            return Err(Error::Truncated);
        }
        let mut buf = vec![0u8; len];
        self.cursor.read_exact(&mut buf).map_err(Self::map_eof)?;
        String::from_utf8(buf)
            .map_err(|_| Error::MalformedModel("invalid UTF-8 in string table".to_string()))
    }

    fn usize_field(&mut self, what: &str) -> Result<usize> {
        let v = self.u64()?;
        usize::try_from(v)
            .map_err(|_| Error::MalformedModel(format!("{what} out of range: {v}")))
    }
}

fn read_config(r: &mut PayloadReader) -> Result<TrainingConfig> {
    let dim = r.usize_field("dim")?;
    let min_count = r.u64()?;
    let subsample_threshold = r.f64()?;
    let max_window = r.usize_field("max_window")?;
    let clue_window = r.usize_field("clue_window")?;
    let negatives = r.usize_field("negatives")?;
    let epochs = r.usize_field("epochs")?;
    let lr0 = r.f64()?;
    let lr_min = r.f64()?;
    let n_min = r.usize_field("n_min")?;
    let n_max = r.usize_field("n_max")?;
    let min_gram_words = r.usize_field("min_gram_words")?;
    let mode_tag = r.u8()?;
    let workers = r.usize_field("workers")?;
    let seed = r.u64()?;
    let mode = Mode::from_tag(mode_tag)
        .ok_or_else(|| Error::MalformedModel(format!("unknown mode tag {mode_tag}")))?;
    Ok(TrainingConfig {
        dim,
        min_count,
        subsample_threshold,
        max_window,
        clue_window,
        negatives,
        epochs,
        lr0,
        lr_min,
        n_min,
        n_max,
        min_gram_words,
        mode,
        workers,
        seed,
    })
}

fn read_matrix(r: &mut PayloadReader) -> Result<EmbeddingMatrix> {
    let rows = r.usize_field("matrix rows")?;
    let dim = r.u32()? as usize;
    let count = rows
        .checked_mul(dim)
        .ok_or_else(|| Error::MalformedModel("matrix size overflow".to_string()))?;
    if self_remaining_too_small(r, count) {
        return Err(Error::Truncated);
    }
    let mut bits = Vec::with_capacity(count);
    for _ in 0..count {
        bits.push(r.u32()?);
    }
    Ok(EmbeddingMatrix::from_bits(rows, dim, bits))
}

fn self_remaining_too_small(r: &PayloadReader, f32_count: usize) -> bool {
    f32_count.checked_mul(4).map_or(true, |b| r.remaining() < b)
}

fn parse_payload(payload: &[u8]) -> Result<ModelStore> {
    let mut r = PayloadReader::new(payload);

    let mut magic = [0u8; 4];
    r.cursor.read_exact(&mut magic).map_err(PayloadReader::map_eof)?;
    if &magic != MAGIC {
        return Err(Error::BadMagic);
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }

    let mode_tag = r.u8()?;
    let mode = Mode::from_tag(mode_tag)
        .ok_or_else(|| Error::MalformedModel(format!("unknown mode tag {mode_tag}")))?;
    let dim = r.u32()? as usize;
    let vocab_len = r.usize_field("vocabulary size")?;
    let subword_len = r.usize_field("subword vocabulary size")?;
    let config = read_config(&mut r)?;

    let mut entries = Vec::with_capacity(vocab_len.min(1 << 20));
    for _ in 0..vocab_len {
        let token = r.string()?;
        let count = r.u64()?;
        entries.push(VocabEntry { token, count });
    }
    let vocab = Vocabulary::from_entries(entries, config.min_count);

    let mut grams = Vec::with_capacity(subword_len.min(1 << 20));
    for _ in 0..subword_len {
        grams.push(r.string()?);
    }
    let subwords = SubwordVocabulary::from_parts(
        &vocab,
        grams,
        config.n_min,
        config.n_max,
        config.min_gram_words,
    );

    let word_vecs = read_matrix(&mut r)?;
    let clue_vecs = read_matrix(&mut r)?;
    let subword_vecs = read_matrix(&mut r)?;

    if r.remaining() != 0 {
        return Err(Error::MalformedModel("trailing bytes in payload".to_string()));
    }

    let shapes_ok = word_vecs.rows() == vocab.len()
        && word_vecs.dim() == dim
        && clue_vecs.dim() == dim
        && subword_vecs.dim() == dim
        && (clue_vecs.rows() == vocab.len() || clue_vecs.rows() == 0)
        && (subword_vecs.rows() == subwords.len() || subword_vecs.rows() == 0)
        && dim == config.dim;
    if !shapes_ok {
        return Err(Error::MalformedModel(
            "matrix shapes disagree with header".to_string(),
        ));
    }

    Ok(ModelStore {
        dim,
        mode,
        config,
        vocab,
        subwords,
        word_vecs,
        clue_vecs,
        subword_vecs,
    })
}

/// Cosine similarity; 0 by convention when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na.sqrt() * nb.sqrt())
    }
}

/// Cosine of `query` against word vector `row`.
pub fn cosine_to_word(model: &ModelStore, query: &[f64], row: usize) -> f64 {
    let dot = model.word_vecs.row_dot(row, query);
    let mut nq = 0.0;
    for x in query {
        nq += x * x;
    }
    let mut nr = 0.0;
    for c in 0..model.dim {
        let v = model.word_vecs.get(row, c) as f64;
        nr += v * v;
    }
    if nq == 0.0 || nr == 0.0 {
        0.0
    } else {
        dot / (nq.sqrt() * nr.sqrt())
    }
}

/// Top-k word ids by cosine against the word vectors, descending, with ties
/// broken by ascending word id. Excluded ids are not candidates; fewer than
/// k candidates returns them all.
pub fn nearest_neighbors(
    model: &ModelStore,
    query: &[f64],
    k: usize,
    exclude: &HashSet<usize>,
) -> Vec<(usize, f64)> {
    let mut scored: Vec<(usize, f64)> = (0..model.vocab.len())
        .filter(|id| !exclude.contains(id))
        .map(|id| (id, cosine_to_word(model, query, id)))
        .collect();
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}
