//! Character n-gram extraction and the filtered subword vocabulary.

use std::collections::{HashMap, HashSet};
use std::io::Write;

use crate::corpus::Vocabulary;
use crate::error::Result;

const BOW: char = '<';
const EOW: char = '>';

/// Add begin/end-of-word markers.
pub fn bracket(word: &str) -> String {
    let mut padded = String::with_capacity(word.len() + 2);
    padded.push(BOW);
    padded.push_str(word);
    padded.push(EOW);
    padded
}

/// All character n-grams of the padded word `<word>`, lengths
/// `n_min..=n_max` enumerated shortest-first, followed by the whole-word
/// token, deduplicated in first-seen order.
///
/// When the padded word is shorter than `n_min`, only the whole-word token
/// is emitted.
pub fn extract_ngrams(word: &str, n_min: usize, n_max: usize) -> Vec<String> {
    assert!(!word.is_empty(), "cannot extract n-grams of an empty word");
    assert!(n_min <= n_max, "n_min must be <= n_max");
    let padded: Vec<char> = bracket(word).chars().collect();
    let whole: String = padded.iter().collect();

    let mut grams = Vec::new();
    let mut seen = HashSet::new();
    for n in n_min..=n_max.min(padded.len()) {
        for start in 0..=padded.len() - n {
            let gram: String = padded[start..start + n].iter().collect();
            if seen.insert(gram.clone()) {
                grams.push(gram);
            }
        }
    }
    if seen.insert(whole.clone()) {
        grams.push(whole);
    }
    grams
}

/// N-gram <-> id map filtered by distinct-word occurrence, with the gram id
/// lists of every in-vocabulary word precomputed.
///
/// A gram (other than a whole-word token) is indexed only if it occurs in at
/// least `min_word_occurrence` distinct vocabulary words. Whole-word tokens
/// of in-vocabulary words are always indexed: they occur in exactly one word
/// by construction, so the filter would otherwise delete all of them.
#[derive(Clone, Debug)]
pub struct SubwordVocabulary {
    grams: Vec<String>,
    index: HashMap<String, usize>,
    n_min: usize,
    n_max: usize,
    min_word_occurrence: usize,
    word_grams: Vec<Vec<usize>>,
}

impl SubwordVocabulary {
    pub fn build(
        vocab: &Vocabulary,
        n_min: usize,
        n_max: usize,
        min_word_occurrence: usize,
    ) -> SubwordVocabulary {
        // Pass 1: count, per gram, the number of distinct words containing it.
        let mut word_counts: HashMap<String, usize> = HashMap::new();
        for id in 0..vocab.len() {
            for gram in extract_ngrams(vocab.token(id), n_min, n_max) {
                *word_counts.entry(gram).or_insert(0) += 1;
            }
        }

        // Pass 2: assign ids in (word id, extraction order) of first
        // retention, and record each word's usable gram ids.
        let mut grams = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut word_grams = Vec::with_capacity(vocab.len());
        for id in 0..vocab.len() {
            let whole = bracket(vocab.token(id));
            let mut ids = Vec::new();
            for gram in extract_ngrams(vocab.token(id), n_min, n_max) {
                let keep = gram == whole || word_counts[&gram] >= min_word_occurrence;
                if !keep {
                    continue;
                }
                let gram_id = match index.get(&gram) {
                    Some(&gid) => gid,
                    None => {
                        let gid = grams.len();
                        index.insert(gram.clone(), gid);
                        grams.push(gram);
                        gid
                    }
                };
                ids.push(gram_id);
            }
            word_grams.push(ids);
        }

        SubwordVocabulary {
            grams,
            index,
            n_min,
            n_max,
            min_word_occurrence,
            word_grams,
        }
    }

    /// A vocabulary with no grams at all (skipgram mode).
    pub fn empty(n_min: usize, n_max: usize, min_word_occurrence: usize) -> SubwordVocabulary {
        SubwordVocabulary {
            grams: Vec::new(),
            index: HashMap::new(),
            n_min,
            n_max,
            min_word_occurrence,
            word_grams: Vec::new(),
        }
    }

    /// Rebuild from the id-ordered gram list of a serialized model. The
    /// per-word gram lists are a deterministic function of the vocabulary
    /// and the index, so they are recomputed rather than stored.
    pub(crate) fn from_parts(
        vocab: &Vocabulary,
        grams: Vec<String>,
        n_min: usize,
        n_max: usize,
        min_word_occurrence: usize,
    ) -> SubwordVocabulary {
        let index: HashMap<String, usize> = grams
            .iter()
            .enumerate()
            .map(|(gid, g)| (g.clone(), gid))
            .collect();
        let word_grams = if grams.is_empty() {
            Vec::new()
        } else {
            (0..vocab.len())
                .map(|id| {
                    extract_ngrams(vocab.token(id), n_min, n_max)
                        .iter()
                        .filter_map(|g| index.get(g).copied())
                        .collect()
                })
                .collect()
        };
        SubwordVocabulary {
            grams,
            index,
            n_min,
            n_max,
            min_word_occurrence,
            word_grams,
        }
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn gram(&self, id: usize) -> &str {
        &self.grams[id]
    }

    pub fn grams(&self) -> &[String] {
        &self.grams
    }

    pub fn id(&self, gram: &str) -> Option<usize> {
        self.index.get(gram).copied()
    }

    pub fn n_min(&self) -> usize {
        self.n_min
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn min_word_occurrence(&self) -> usize {
        self.min_word_occurrence
    }

    /// Precomputed gram ids of an in-vocabulary word.
    pub fn word_grams(&self, word_id: usize) -> &[usize] {
        if self.word_grams.is_empty() {
            &[]
        } else {
            &self.word_grams[word_id]
        }
    }

    /// Gram ids usable for an arbitrary (typically out-of-vocabulary) word:
    /// extract_ngrams(word) intersected with the indexed grams.
    pub fn gram_ids_for(&self, word: &str) -> Vec<usize> {
        if word.is_empty() || self.grams.is_empty() {
            return Vec::new();
        }
        extract_ngrams(word, self.n_min, self.n_max)
            .iter()
            .filter_map(|g| self.index.get(g).copied())
            .collect()
    }

    /// Write "gram<TAB>id" lines in id order.
    pub fn export_tsv<W: Write>(&self, mut out: W) -> Result<()> {
        for (id, gram) in self.grams.iter().enumerate() {
            writeln!(out, "{gram}\t{id}")?;
        }
        Ok(())
    }
}
