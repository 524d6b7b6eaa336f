//! Streaming text ingestion: tokenization, vocabulary construction, and
//! frequency-based subsampling.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, Seek, SeekFrom, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};

/// Split a line into normalized tokens: lowercased, whitespace-separated,
/// with leading and trailing non-alphanumeric characters stripped. Interior
/// punctuation (hyphens, apostrophes) is kept. Empty tokens are dropped.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace()
        .filter_map(|raw| {
            // Lowercase before trimming: lowercasing can emit combining
            // marks, which count as punctuation at token edges.
            let lowered = raw.to_lowercase();
            let trimmed = lowered.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                None
            } else if trimmed.len() == lowered.len() {
                Some(lowered)
            } else {
                Some(trimmed.to_string())
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct VocabEntry {
    pub token: String,
    pub count: u64,
}

/// Token <-> id map over the retained corpus vocabulary.
///
/// Entries are sorted by descending count with lexicographic tie-breaks, so
/// ids are deterministic for a given corpus. `total_tokens` is the sum of
/// retained counts and is the denominator of the word frequencies used for
/// subsampling.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    entries: Vec<VocabEntry>,
    index: HashMap<String, usize>,
    total_tokens: u64,
    min_count: u64,
}

impl Vocabulary {
    /// Count `tokens` and retain those occurring at least `min_count` times.
    pub fn build<I>(tokens: I, min_count: u64) -> Result<Vocabulary>
    where
        I: IntoIterator,
        I::Item: Into<String>,
    {
        if min_count < 1 {
            return Err(Error::InvalidConfig("min_count must be >= 1".to_string()));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        for token in tokens {
            *counts.entry(token.into()).or_insert(0) += 1;
        }
        Vocabulary::from_counts(counts, min_count)
    }

    /// Tokenize every line of `reader` and build the vocabulary from the
    /// resulting token stream. Invalid UTF-8 is replaced, not fatal.
    pub fn build_from_reader<R: BufRead>(mut reader: R, min_count: u64) -> Result<Vocabulary> {
        if min_count < 1 {
            return Err(Error::InvalidConfig("min_count must be >= 1".to_string()));
        }
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut line = Vec::new();
        loop {
            line.clear();
            if reader.read_until(b'\n', &mut line)? == 0 {
                break;
            }
            for token in tokenize(&String::from_utf8_lossy(&line)) {
                *counts.entry(token).or_insert(0) += 1;
            }
        }
        Vocabulary::from_counts(counts, min_count)
    }

    pub fn build_from_file(path: &Path, min_count: u64) -> Result<Vocabulary> {
        Vocabulary::build_from_reader(BufReader::new(File::open(path)?), min_count)
    }

    fn from_counts(counts: HashMap<String, u64>, min_count: u64) -> Result<Vocabulary> {
        let mut entries: Vec<VocabEntry> = counts
            .into_iter()
            .filter(|(_, count)| *count >= min_count)
            .map(|(token, count)| VocabEntry { token, count })
            .collect();
        if entries.is_empty() {
            return Err(Error::EmptyVocabulary { min_count });
        }
        entries.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.token.cmp(&b.token)));
        let index = entries
            .iter()
            .enumerate()
            .map(|(id, e)| (e.token.clone(), id))
            .collect();
        let total_tokens = entries.iter().map(|e| e.count).sum();
        Ok(Vocabulary {
            entries,
            index,
            total_tokens,
            min_count,
        })
    }

    /// Rebuild from already-ordered entries (model deserialization path).
    pub(crate) fn from_entries(entries: Vec<VocabEntry>, min_count: u64) -> Vocabulary {
        let index = entries
            .iter()
            .enumerate()
            .map(|(id, e)| (e.token.clone(), id))
            .collect();
        let total_tokens = entries.iter().map(|e| e.count).sum();
        Vocabulary {
            entries,
            index,
            total_tokens,
            min_count,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.entries[id].token
    }

    pub fn count(&self, id: usize) -> u64 {
        self.entries[id].count
    }

    pub fn entries(&self) -> &[VocabEntry] {
        &self.entries
    }

    pub fn total_tokens(&self) -> u64 {
        self.total_tokens
    }

    pub fn min_count(&self) -> u64 {
        self.min_count
    }

    /// Corpus frequency f(w) of the word with this id.
    pub fn frequency(&self, id: usize) -> f64 {
        self.entries[id].count as f64 / self.total_tokens as f64
    }

    /// Probability of discarding an instance of word `id` during
    /// subsampling: max(0, 1 - sqrt(threshold / f(w))).
    pub fn discard_probability(&self, id: usize, threshold: f64) -> f64 {
        (1.0 - (threshold / self.frequency(id)).sqrt()).max(0.0)
    }

    /// Write "token<TAB>count" lines in id order.
    pub fn export_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for entry in &self.entries {
            writeln!(out, "{}\t{}", entry.token, entry.count)?;
        }
        Ok(())
    }
}

/// Drop each token independently with probability
/// `discard_probability(id, threshold)`, preserving relative order.
pub fn subsample<R: Rng>(
    sentence: &[usize],
    vocab: &Vocabulary,
    threshold: f64,
    rng: &mut R,
) -> Vec<usize> {
    let mut kept = Vec::with_capacity(sentence.len());
    subsample_into(sentence, vocab, threshold, rng, &mut kept);
    kept
}

pub fn subsample_into<R: Rng>(
    sentence: &[usize],
    vocab: &Vocabulary,
    threshold: f64,
    rng: &mut R,
    out: &mut Vec<usize>,
) {
    out.clear();
    for &id in sentence {
        let p_discard = vocab.discard_probability(id, threshold);
        if p_discard <= 0.0 || rng.random::<f64>() >= p_discard {
            out.push(id);
        }
    }
}

/// Line-oriented sentence reader that maps tokens to ids, dropping tokens
/// outside the vocabulary.
///
/// A stream can be restricted to the lines whose first byte falls in
/// `[start, end)`, which is how parallel workers split a corpus without
/// overlapping: every line belongs to exactly one shard.
pub struct SentenceStream<'v, R: BufRead> {
    reader: R,
    vocab: &'v Vocabulary,
    pos: u64,
    end: Option<u64>,
    line: Vec<u8>,
}

impl<'v> SentenceStream<'v, BufReader<File>> {
    pub fn open(path: &Path, vocab: &'v Vocabulary) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        Ok(SentenceStream {
            reader,
            vocab,
            pos: 0,
            end: None,
            line: Vec::new(),
        })
    }

    /// Open a shard over the lines starting in `[start, end)`.
    pub fn open_range(path: &Path, vocab: &'v Vocabulary, start: u64, end: u64) -> Result<Self> {
        let mut file = File::open(path)?;
        let mut pos = start;
        if start > 0 {
            // Skip the tail of the line containing byte start-1; if that byte
            // is itself a newline this consumes exactly one byte, leaving the
            // cursor on the first line owned by this shard.
            file.seek(SeekFrom::Start(start - 1))?;
            let mut reader = BufReader::new(file);
            let mut skipped = Vec::new();
            let n = reader.read_until(b'\n', &mut skipped)?;
            pos = start - 1 + n as u64;
            return Ok(SentenceStream {
                reader,
                vocab,
                pos,
                end: Some(end),
                line: Vec::new(),
            });
        }
        Ok(SentenceStream {
            reader: BufReader::new(file),
            vocab,
            pos,
            end: Some(end),
            line: Vec::new(),
        })
    }
}

impl<'v, R: BufRead> SentenceStream<'v, R> {
    pub fn new(reader: R, vocab: &'v Vocabulary) -> Self {
        SentenceStream {
            reader,
            vocab,
            pos: 0,
            end: None,
            line: Vec::new(),
        }
    }

    /// Read the next sentence into `out`. Returns false at end of input
    /// (or end of shard).
    pub fn next_sentence(&mut self, out: &mut Vec<usize>) -> Result<bool> {
        out.clear();
        if let Some(end) = self.end {
            if self.pos >= end {
                return Ok(false);
            }
        }
        self.line.clear();
        let n = self.reader.read_until(b'\n', &mut self.line)?;
        if n == 0 {
            return Ok(false);
        }
        self.pos += n as u64;
        for token in tokenize(&String::from_utf8_lossy(&self.line)) {
            if let Some(id) = self.vocab.id(&token) {
                out.push(id);
            }
        }
        Ok(true)
    }
}

impl<'v, R: BufRead> Iterator for SentenceStream<'v, R> {
    type Item = Result<Vec<usize>>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut sentence = Vec::new();
        match self.next_sentence(&mut sentence) {
            Ok(true) => Some(Ok(sentence)),
            Ok(false) => None,
            Err(e) => Some(Err(e)),
        }
    }
}
