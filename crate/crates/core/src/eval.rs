//! Evaluation harness: analogy accuracy, word-pair similarity, definitional
//! nonce ranking, and rare-word estimation across context budgets.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::corpus::tokenize;
use crate::error::{Error, Result};
use crate::model::{cosine_to_word, ModelStore};
use crate::oov::{estimate_oov, EstimateOptions, PrincipalComponents};

fn dataset_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Normalize a dataset word with the corpus tokenizer; it must reduce to
/// exactly one token.
fn normalize_word(field: &str, path: &Path, line: usize) -> Result<String> {
    let mut tokens = tokenize(field);
    if tokens.len() != 1 {
        return Err(dataset_err(
            path,
            line,
            format!("expected a single word, got '{field}'"),
        ));
    }
    Ok(tokens.pop().unwrap())
}

// ---------------------------------------------------------------------------
// Datasets
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct AnalogySection {
    pub name: String,
    pub questions: Vec<[String; 4]>,
}

impl AnalogySection {
    pub fn is_syntactic(&self) -> bool {
        self.name.starts_with("gram")
    }
}

/// Question file in the questions-words layout: ": section" headers, then
/// four space-separated tokens per line meaning a:b :: c:d.
#[derive(Clone, Debug)]
pub struct AnalogyDataset {
    pub sections: Vec<AnalogySection>,
}

impl AnalogyDataset {
    pub fn load(path: &Path) -> Result<AnalogyDataset> {
        Self::read(BufReader::new(File::open(path)?), path)
    }

    pub fn read<R: BufRead>(reader: R, origin: &Path) -> Result<AnalogyDataset> {
        let mut sections: Vec<AnalogySection> = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let trimmed = line.trim();
            if trimmed.is_empty() {
                continue;
            }
            if let Some(name) = trimmed.strip_prefix(':') {
                sections.push(AnalogySection {
                    name: name.trim().to_string(),
                    questions: Vec::new(),
                });
                continue;
            }
            let tokens = tokenize(trimmed);
            if tokens.len() != 4 {
                return Err(dataset_err(
                    origin,
                    idx + 1,
                    format!("expected 4 tokens, got {}", tokens.len()),
                ));
            }
            if sections.is_empty() {
                sections.push(AnalogySection {
                    name: String::new(),
                    questions: Vec::new(),
                });
            }
            let mut q: [String; 4] = Default::default();
            for (slot, token) in q.iter_mut().zip(tokens) {
                *slot = token;
            }
            sections.last_mut().unwrap().questions.push(q);
        }
        Ok(AnalogyDataset { sections })
    }

    pub fn len(&self) -> usize {
        self.sections.iter().map(|s| s.questions.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Word pairs with human similarity judgements (TSV: word1, word2, score).
#[derive(Clone, Debug)]
pub struct WordSimDataset {
    pub pairs: Vec<(String, String, f64)>,
}

impl WordSimDataset {
    pub fn load(path: &Path) -> Result<WordSimDataset> {
        Self::read(BufReader::new(File::open(path)?), path)
    }

    pub fn read<R: BufRead>(reader: R, origin: &Path) -> Result<WordSimDataset> {
        let mut pairs = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(dataset_err(
                    origin,
                    idx + 1,
                    format!("expected 3 tab-separated fields, got {}", fields.len()),
                ));
            }
            let w1 = normalize_word(fields[0], origin, idx + 1)?;
            let w2 = normalize_word(fields[1], origin, idx + 1)?;
            let score: f64 = fields[2].trim().parse().map_err(|_| {
                dataset_err(origin, idx + 1, format!("invalid score '{}'", fields[2]))
            })?;
            if !score.is_finite() {
                return Err(dataset_err(origin, idx + 1, "score must be finite"));
            }
            pairs.push((w1, w2, score));
        }
        Ok(WordSimDataset { pairs })
    }
}

/// Definitional sentences (TSV: nonce, sentence). The nonce token must
/// occur in its sentence.
#[derive(Clone, Debug)]
pub struct NonceDataset {
    pub items: Vec<(String, Vec<String>)>,
}

impl NonceDataset {
    pub fn load(path: &Path) -> Result<NonceDataset> {
        Self::read(BufReader::new(File::open(path)?), path)
    }

    pub fn read<R: BufRead>(reader: R, origin: &Path) -> Result<NonceDataset> {
        let mut items = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (nonce, sentence) = line.split_once('\t').ok_or_else(|| {
                dataset_err(origin, idx + 1, "expected 'nonce<TAB>sentence'")
            })?;
            let nonce = normalize_word(nonce, origin, idx + 1)?;
            let sentence = tokenize(sentence);
            if !sentence.iter().any(|t| *t == nonce) {
                return Err(dataset_err(
                    origin,
                    idx + 1,
                    format!("nonce '{nonce}' does not occur in its sentence"),
                ));
            }
            items.push((nonce, sentence));
        }
        Ok(NonceDataset { items })
    }
}

/// Rare-word pairs with human scores plus per-rare-word context sentences.
/// Loaded from a TSV (rare, anchor, score) next to a `contexts/` directory
/// holding one `<rare>.txt` file per rare word, one sentence per line.
#[derive(Clone, Debug)]
pub struct CrwDataset {
    pub pairs: Vec<(String, String, f64)>,
    pub contexts: HashMap<String, Vec<Vec<String>>>,
}

impl CrwDataset {
    pub fn load(tsv_path: &Path) -> Result<CrwDataset> {
        let base = WordSimDataset::load(tsv_path)?;
        let contexts_dir = tsv_path
            .parent()
            .unwrap_or_else(|| Path::new("."))
            .join("contexts");
        let mut contexts = HashMap::new();
        for (rare, _, _) in &base.pairs {
            if contexts.contains_key(rare) {
                continue;
            }
            let ctx_path = contexts_dir.join(format!("{rare}.txt"));
            let file = File::open(&ctx_path).map_err(|e| {
                dataset_err(
                    &ctx_path,
                    0,
                    format!("cannot open context file for '{rare}': {e}"),
                )
            })?;
            let mut sentences = Vec::new();
            for line in BufReader::new(file).lines() {
                let sentence = tokenize(&line?);
                if !sentence.is_empty() {
                    sentences.push(sentence);
                }
            }
            if sentences.is_empty() {
                return Err(dataset_err(
                    &ctx_path,
                    0,
                    format!("rare word '{rare}' has no contexts"),
                ));
            }
            contexts.insert(rare.clone(), sentences);
        }
        Ok(CrwDataset {
            pairs: base.pairs,
            contexts,
        })
    }
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Fractional (average) ranks, 1-based; ties share the mean of their
/// positions.
fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman's rank correlation: Pearson correlation of average ranks.
/// Errors when either side is constant (the coefficient is undefined).
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::DegenerateCorrelation(
            "lists have different lengths".to_string(),
        ));
    }
    if xs.len() < 2 {
        return Err(Error::DegenerateCorrelation(
            "need at least two paired values".to_string(),
        ));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut sx = 0.0;
    let mut sy = 0.0;
    for (a, b) in rx.iter().zip(ry.iter()) {
        let dx = a - mx;
        let dy = b - my;
        num += dx * dy;
        sx += dx * dx;
        sy += dy * dy;
    }
    if sx == 0.0 || sy == 0.0 {
        return Err(Error::DegenerateCorrelation(
            "an input list is constant".to_string(),
        ));
    }
    Ok(num / (sx * sy).sqrt())
}

pub fn mean_reciprocal_rank(ranks: &[usize]) -> f64 {
    ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / ranks.len() as f64
}

/// Median; for an even count, the mean of the two central values.
pub fn median_rank(ranks: &[usize]) -> f64 {
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

/// 1-based rank of `true_id` when all word vectors are ordered by cosine
/// to `query`, ties broken by ascending id.
pub fn rank_of(model: &ModelStore, query: &[f64], true_id: usize) -> usize {
    let true_cos = cosine_to_word(model, query, true_id);
    let mut rank = 1;
    for id in 0..model.vocab.len() {
        if id == true_id {
            continue;
        }
        let c = cosine_to_word(model, query, id);
        if c > true_cos || (c == true_cos && id < true_id) {
            rank += 1;
        }
    }
    rank
}

// ---------------------------------------------------------------------------
// Protocols
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct AnalogyResult {
    pub semantic_accuracy: f64,
    pub syntactic_accuracy: f64,
    pub semantic_correct: usize,
    pub semantic_used: usize,
    pub syntactic_correct: usize,
    pub syntactic_used: usize,
    pub skipped: usize,
}

/// 3CosAdd protocol over unit-normalized word vectors: answer b - a + c by
/// the most-similar vocabulary word, excluding the three query words.
/// Questions containing out-of-vocabulary words are skipped.
pub fn eval_analogy(model: &ModelStore, dataset: &AnalogyDataset) -> Result<AnalogyResult> {
    let n = model.vocab.len();
    let d = model.dim;
    let mut normalized = vec![0.0f64; n * d];
    for r in 0..n {
        let row = &mut normalized[r * d..(r + 1) * d];
        model.word_vecs.read_row(r, row);
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in row.iter_mut() {
                *v /= norm;
            }
        }
    }

    let mut result = AnalogyResult {
        semantic_accuracy: 0.0,
        syntactic_accuracy: 0.0,
        semantic_correct: 0,
        semantic_used: 0,
        syntactic_correct: 0,
        syntactic_used: 0,
        skipped: 0,
    };

    let mut query = vec![0.0f64; d];
    for section in &dataset.sections {
        let syntactic = section.is_syntactic();
        for q in &section.questions {
            let ids: Option<Vec<usize>> = q.iter().map(|w| model.vocab.id(w)).collect();
            let Some(ids) = ids else {
                result.skipped += 1;
                continue;
            };
            let (a, b, c, expected) = (ids[0], ids[1], ids[2], ids[3]);
            for i in 0..d {
                query[i] = normalized[b * d + i] - normalized[a * d + i] + normalized[c * d + i];
            }
            let mut best: Option<(usize, f64)> = None;
            for id in 0..n {
                if id == a || id == b || id == c {
                    continue;
                }
                let dot: f64 = normalized[id * d..(id + 1) * d]
                    .iter()
                    .zip(query.iter())
                    .map(|(x, y)| x * y)
                    .sum();
                match best {
                    Some((_, s)) if dot <= s => {}
                    _ => best = Some((id, dot)),
                }
            }
            let correct = best.map(|(id, _)| id == expected).unwrap_or(false);
            if syntactic {
                result.syntactic_used += 1;
                result.syntactic_correct += correct as usize;
            } else {
                result.semantic_used += 1;
                result.semantic_correct += correct as usize;
            }
        }
    }

    if result.semantic_used > 0 {
        result.semantic_accuracy = result.semantic_correct as f64 / result.semantic_used as f64;
    }
    if result.syntactic_used > 0 {
        result.syntactic_accuracy = result.syntactic_correct as f64 / result.syntactic_used as f64;
    }
    Ok(result)
}

/// Cosine similarity of in-vocabulary pairs correlated against the human
/// scores. Returns (rho, pairs used).
pub fn eval_wordsim(model: &ModelStore, dataset: &WordSimDataset) -> Result<(f64, usize)> {
    let mut sims = Vec::new();
    let mut human = Vec::new();
    for (w1, w2, score) in &dataset.pairs {
        let (Some(a), Some(b)) = (model.vocab.id(w1), model.vocab.id(w2)) else {
            continue;
        };
        let row = model.word_vecs.row_f64(a);
        sims.push(cosine_to_word(model, &row, b));
        human.push(*score);
    }
    if sims.is_empty() {
        return Err(Error::NoUsablePairs(
            "every pair contains an out-of-vocabulary word".to_string(),
        ));
    }
    let rho = spearman(&sims, &human)?;
    Ok((rho, sims.len()))
}

#[derive(Clone, Debug)]
pub struct NonceResult {
    pub mrr: f64,
    pub median_rank: f64,
    pub evaluated: usize,
    pub skipped: usize,
}

/// Definitional nonce protocol: estimate each in-vocabulary nonce from its
/// definition sentence as if it were OOV, then rank its true word vector
/// among all words by cosine to the estimate. Nonces missing from the
/// vocabulary are skipped.
pub fn eval_nonce(
    model: &ModelStore,
    pc: &PrincipalComponents,
    dataset: &NonceDataset,
    opts: EstimateOptions,
) -> Result<NonceResult> {
    let mut ranks = Vec::new();
    let mut skipped = 0usize;
    for (nonce, sentence) in &dataset.items {
        let Some(true_id) = model.vocab.id(nonce) else {
            skipped += 1;
            continue;
        };
        let est = match estimate_oov(model, nonce, std::slice::from_ref(sentence), pc, opts) {
            Ok(est) => est,
            Err(Error::NoSignal { .. }) => {
                skipped += 1;
                continue;
            }
            Err(e) => return Err(e),
        };
        ranks.push(rank_of(model, &est.combined, true_id));
    }
    if ranks.is_empty() {
        return Err(Error::NoUsablePairs(
            "no nonce could be evaluated against the vocabulary".to_string(),
        ));
    }
    Ok(NonceResult {
        mrr: mean_reciprocal_rank(&ranks),
        median_rank: median_rank(&ranks),
        evaluated: ranks.len(),
        skipped,
    })
}

#[derive(Clone, Debug)]
pub struct CrwPoint {
    pub budget: usize,
    pub rho: f64,
    pub pairs: usize,
}

/// Rare-word protocol: per context budget k, estimate each rare word from
/// its first min(k, available) contexts, compare the estimate to the
/// anchor's word vector by cosine, and correlate with the human scores.
/// Pairs whose anchor is out of vocabulary (or whose rare word has no
/// signal) are skipped.
pub fn eval_crw(
    model: &ModelStore,
    pc: &PrincipalComponents,
    dataset: &CrwDataset,
    budgets: &[usize],
    opts: EstimateOptions,
) -> Result<Vec<CrwPoint>> {
    if budgets.is_empty() || budgets[0] < 1 || budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig(
            "budgets must be ascending positive integers".to_string(),
        ));
    }
    let mut points = Vec::with_capacity(budgets.len());
    for &budget in budgets {
        let mut sims = Vec::new();
        let mut human = Vec::new();
        for (rare, anchor, score) in &dataset.pairs {
            let Some(anchor_id) = model.vocab.id(anchor) else {
                continue;
            };
            let contexts = &dataset.contexts[rare];
            let take = budget.min(contexts.len());
            let est = match estimate_oov(model, rare, &contexts[..take], pc, opts) {
                Ok(est) => est,
                Err(Error::NoSignal { .. }) => continue,
                Err(e) => return Err(e),
            };
            sims.push(cosine_to_word(model, &est.combined, anchor_id));
            human.push(*score);
        }
        if sims.is_empty() {
            return Err(Error::NoUsablePairs(format!(
                "no usable pair at context budget {budget}"
            )));
        }
        let rho = spearman(&sims, &human)?;
        points.push(CrwPoint {
            budget,
            rho,
            pairs: sims.len(),
        });
    }
    Ok(points)
}

/// Context budgets used by default: powers of two up to 64.
pub const DEFAULT_CRW_BUDGETS: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];

#[cfg(test)]
mod tests {
    use std::io::Cursor;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::config::Mode;
    use crate::model::cosine;
    use crate::oov::compute_principal_components;
    use crate::testutil::toy_model;

    // -- spearman ----------------------------------------------------------

    /// Independent brute-force average-rank + Pearson oracle.
    fn spearman_oracle(xs: &[f64], ys: &[f64]) -> f64 {
        fn ranks(v: &[f64]) -> Vec<f64> {
            v.iter()
                .map(|&x| {
                    let less = v.iter().filter(|&&o| o < x).count() as f64;
                    let eq = v.iter().filter(|&&o| o == x).count() as f64;
                    less + (eq + 1.0) / 2.0
                })
                .collect()
        }
        let rx = ranks(xs);
        let ry = ranks(ys);
        let n = rx.len() as f64;
        let mx = rx.iter().sum::<f64>() / n;
        let my = ry.iter().sum::<f64>() / n;
        let num: f64 = rx
            .iter()
            .zip(ry.iter())
            .map(|(a, b)| (a - mx) * (b - my))
            .sum();
        let sx: f64 = rx.iter().map(|a| (a - mx) * (a - mx)).sum();
        let sy: f64 = ry.iter().map(|b| (b - my) * (b - my)).sum();
        num / (sx * sy).sqrt()
    }

    #[test]
    fn spearman_monotone_and_reversed() {
        assert!((spearman(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!((spearman(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0]).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn spearman_with_ties_matches_the_oracle() {
        let xs = [1.0, 2.0, 2.0, 4.0];
        let ys = [1.0, 2.0, 3.0, 4.0];
        let got = spearman(&xs, &ys).unwrap();
        let expected = spearman_oracle(&xs, &ys);
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn spearman_random_instances_match_the_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..60 {
            let n = rng.random_range(2..20);
            // Coarse values produce plenty of ties.
            let xs: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.random_range(0..6) as f64).collect();
            if xs.iter().all(|&v| v == xs[0]) || ys.iter().all(|&v| v == ys[0]) {
                assert!(spearman(&xs, &ys).is_err());
                continue;
            }
            let got = spearman(&xs, &ys).unwrap();
            let expected = spearman_oracle(&xs, &ys);
            assert!((got - expected).abs() < 1e-10, "{xs:?} {ys:?}");
        }
    }

    #[test]
    fn spearman_is_symmetric_and_transform_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..30 {
            let n = rng.random_range(3..15);
            let xs: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let ys: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let a = spearman(&xs, &ys).unwrap();
            let b = spearman(&ys, &xs).unwrap();
            assert_eq!(a, b);
            // Strictly increasing transform leaves ranks unchanged.
            let zs: Vec<f64> = xs.iter().map(|&x| (3.0 * x).exp() + 1.0).collect();
            let c = spearman(&zs, &ys).unwrap();
            assert!((a - c).abs() < 1e-12);
        }
    }

    #[test]
    fn spearman_rejects_degenerate_input() {
        assert!(spearman(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(spearman(&[1.0], &[1.0]).is_err());
        assert!(spearman(&[1.0, 2.0], &[1.0]).is_err());
    }

    // -- rank aggregation ---------------------------------------------------

    #[test]
    fn mrr_and_median_examples() {
        let ranks = [1usize, 2, 4];
        assert!((mean_reciprocal_rank(&ranks) - (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-12);
        assert!((mean_reciprocal_rank(&ranks) - 0.5833).abs() < 1e-4);
        assert_eq!(median_rank(&ranks), 2.0);
        assert_eq!(median_rank(&[1, 2, 4, 10]), 3.0);
        assert_eq!(median_rank(&[7]), 7.0);
    }

    #[test]
    fn rank_of_exact_match_is_one() {
        let m = toy_model(&["aa", "bb", "cc", "dd"], 5, Mode::Ev, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        for r in 0..m.vocab.len() {
            for c in 0..m.dim {
                m.word_vecs.set(r, c, rng.random::<f32>() - 0.5);
            }
        }
        for id in 0..m.vocab.len() {
            let query = m.word_vecs.row_f64(id);
            assert_eq!(rank_of(&m, &query, id), 1);
        }
    }

    #[test]
    fn rank_of_worst_case_is_vocab_size() {
        let m = toy_model(&["aa", "bb", "cc"], 3, Mode::Ev, 31);
        // True word anti-parallel to the query, everyone else parallel.
        m.word_vecs.set(0, 0, 1.0);
        m.word_vecs.set(1, 0, 1.0);
        m.word_vecs.set(2, 0, -1.0);
        let query = vec![1.0, 0.0, 0.0];
        assert_eq!(rank_of(&m, &query, 2), m.vocab.len());
    }

    // -- analogy ------------------------------------------------------------

    fn analogy_from(text: &str) -> AnalogyDataset {
        AnalogyDataset::read(Cursor::new(text), Path::new("<memory>")).unwrap()
    }

    #[test]
    fn analogy_dataset_parses_sections() {
        let ds = analogy_from(": capital-common\nathens greece baghdad iraq\n: gram1-adj\ngood well bad badly\n");
        assert_eq!(ds.sections.len(), 2);
        assert!(!ds.sections[0].is_syntactic());
        assert!(ds.sections[1].is_syntactic());
        assert_eq!(ds.len(), 2);
        assert!(AnalogyDataset::read(Cursor::new("a b c\n"), Path::new("<memory>")).is_err());
    }

    #[test]
    fn analogy_handcrafted_exact_offset() {
        let m = toy_model(&["aw", "bw", "cw", "dw", "ew"], 3, Mode::Ev, 1);
        let inv3 = 1.0 / 3f32.sqrt();
        let inv2 = 1.0 / 2f32.sqrt();
        m.word_vecs.set(0, 0, 1.0); // a = e1
        m.word_vecs.set(1, 1, 1.0); // b = e2
        m.word_vecs.set(2, 2, 1.0); // c = e3
        for c in 0..3 {
            // d parallel to b - a + c.
            m.word_vecs.set(3, c, if c == 0 { -inv3 } else { inv3 });
        }
        m.word_vecs.set(4, 0, inv2); // distractor
        m.word_vecs.set(4, 1, inv2);

        let ds = analogy_from(": sem\naw bw cw dw\n");
        let r = eval_analogy(&m, &ds).unwrap();
        assert_eq!(r.semantic_correct, 1);
        assert_eq!(r.semantic_used, 1);
        assert_eq!(r.skipped, 0);
        assert_eq!(r.semantic_accuracy, 1.0);
    }

    #[test]
    fn analogy_oov_questions_are_skipped() {
        let m = toy_model(&["aw", "bw", "cw", "dw"], 3, Mode::Ev, 1);
        let ds = analogy_from(": sem\naw bw cw missing\naw bw cw dw\n");
        let r = eval_analogy(&m, &ds).unwrap();
        assert_eq!(r.skipped, 1);
        assert_eq!(r.semantic_used, 1);
    }

    /// Fully independent analogy evaluator.
    fn analogy_oracle(m: &ModelStore, ds: &AnalogyDataset) -> (usize, usize, usize, usize, usize) {
        let normalize = |id: usize| -> Vec<f64> {
            let row = m.word_vecs.row_f64(id);
            let n: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                row.iter().map(|v| v / n).collect()
            } else {
                row
            }
        };
        let mut sem = (0usize, 0usize);
        let mut syn = (0usize, 0usize);
        let mut skipped = 0usize;
        for section in &ds.sections {
            for q in &section.questions {
                let ids: Vec<Option<usize>> = q.iter().map(|w| m.vocab.id(w)).collect();
                if ids.iter().any(|i| i.is_none()) {
                    skipped += 1;
                    continue;
                }
                let ids: Vec<usize> = ids.into_iter().flatten().collect();
                let (a, b, c, d) = (ids[0], ids[1], ids[2], ids[3]);
                let (va, vb, vc) = (normalize(a), normalize(b), normalize(c));
                let query: Vec<f64> = (0..m.dim).map(|i| vb[i] - va[i] + vc[i]).collect();
                let mut candidates: Vec<(usize, f64)> = (0..m.vocab.len())
                    .filter(|id| *id != a && *id != b && *id != c)
                    .map(|id| (id, cosine(&query, &normalize(id))))
                    .collect();
                candidates.sort_by(|x, y| y.1.total_cmp(&x.1).then_with(|| x.0.cmp(&y.0)));
                let correct = candidates.first().map(|(id, _)| *id == d).unwrap_or(false);
                if section.is_syntactic() {
                    syn.1 += 1;
                    syn.0 += correct as usize;
                } else {
                    sem.1 += 1;
                    sem.0 += correct as usize;
                }
            }
        }
        (sem.0, sem.1, syn.0, syn.1, skipped)
    }

    #[test]
    fn analogy_random_matches_brute_force() {
        let words: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = words.iter().map(|s| s.as_str()).collect();
        let m = toy_model(&refs, 5, Mode::Ev, 40);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for r in 0..m.vocab.len() {
            for c in 0..m.dim {
                m.word_vecs.set(r, c, rng.random::<f32>() - 0.5);
            }
        }
        // 50 random questions, some with OOV words, split over two sections.
        let mut text = String::from(": sem\n");
        for i in 0..50 {
            if i == 25 {
                text.push_str(": gram-x\n");
            }
            let pick = |rng: &mut ChaCha8Rng| {
                if rng.random::<f64>() < 0.08 {
                    "missing".to_string()
                } else {
                    format!("w{}", rng.random_range(0..20))
                }
            };
            let q: Vec<String> = (0..4).map(|_| pick(&mut rng)).collect();
            text.push_str(&q.join(" "));
            text.push('\n');
        }
        let ds = analogy_from(&text);
        let r = eval_analogy(&m, &ds).unwrap();
        let (sc, su, yc, yu, sk) = analogy_oracle(&m, &ds);
        assert_eq!(r.semantic_correct, sc);
        assert_eq!(r.semantic_used, su);
        assert_eq!(r.syntactic_correct, yc);
        assert_eq!(r.syntactic_used, yu);
        assert_eq!(r.skipped, sk);
    }

    #[test]
    fn analogy_is_scale_invariant() {
        let words: Vec<String> = (0..12).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = words.iter().map(|s| s.as_str()).collect();
        let m = toy_model(&refs, 4, Mode::Ev, 41);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for r in 0..m.vocab.len() {
            for c in 0..m.dim {
                m.word_vecs.set(r, c, rng.random::<f32>() - 0.5);
            }
        }
        let mut text = String::from(": sem\n");
        for _ in 0..20 {
            let q: Vec<String> = (0..4)
                .map(|_| format!("w{}", rng.random_range(0..12)))
                .collect();
            text.push_str(&q.join(" "));
            text.push('\n');
        }
        let ds = analogy_from(&text);
        let before = eval_analogy(&m, &ds).unwrap();
        for r in 0..m.vocab.len() {
            for c in 0..m.dim {
                m.word_vecs.set(r, c, m.word_vecs.get(r, c) * 7.5);
            }
        }
        let after = eval_analogy(&m, &ds).unwrap();
        assert_eq!(before.semantic_correct, after.semantic_correct);
        assert_eq!(before.syntactic_correct, after.syntactic_correct);
    }

    // -- wordsim -------------------------------------------------------------

    fn wordsim_from(text: &str) -> WordSimDataset {
        WordSimDataset::read(Cursor::new(text), Path::new("<memory>")).unwrap()
    }

    #[test]
    fn wordsim_perfect_correlation_by_construction() {
        let m = toy_model(&["aa", "bb", "cc", "dd"], 4, Mode::Ev, 50);
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for r in 0..m.vocab.len() {
            for c in 0..m.dim {
                m.word_vecs.set(r, c, rng.random::<f32>() - 0.5);
            }
        }
        let pairs = [("aa", "bb"), ("aa", "cc"), ("bb", "dd"), ("cc", "dd")];
        let mut text = String::new();
        for (w1, w2) in pairs {
            let a = m.vocab.id(w1).unwrap();
            let b = m.vocab.id(w2).unwrap();
            let sim = cosine_to_word(&m, &m.word_vecs.row_f64(a), b);
            text.push_str(&format!("{w1}\t{w2}\t{sim}\n"));
        }
        let (rho, used) = eval_wordsim(&m, &wordsim_from(&text)).unwrap();
        assert_eq!(used, 4);
        assert!((rho - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wordsim_all_oov_is_an_error() {
        let m = toy_model(&["aa", "bb"], 3, Mode::Ev, 1);
        let ds = wordsim_from("xx\tyy\t1.0\nzz\tqq\t2.0\n");
        assert!(matches!(
            eval_wordsim(&m, &ds),
            Err(Error::NoUsablePairs(_))
        ));
    }

    #[test]
    fn wordsim_random_matches_brute_force() {
        let words: Vec<String> = (0..10).map(|i| format!("w{i}")).collect();
        let refs: Vec<&str> = words.iter().map(|s| s.as_str()).collect();
        let m = toy_model(&refs, 4, Mode::Ev, 51);
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for r in 0..m.vocab.len() {
            for c in 0..m.dim {
                m.word_vecs.set(r, c, rng.random::<f32>() - 0.5);
            }
        }
        let mut text = String::new();
        let mut expected_sims = Vec::new();
        let mut expected_scores = Vec::new();
        for i in 0..10 {
            let w1 = format!("w{}", rng.random_range(0..10));
            let w2 = format!("w{}", rng.random_range(0..10));
            let score = rng.random_range(0..40) as f64 / 4.0;
            text.push_str(&format!("{w1}\t{w2}\t{score}\n"));
            let a = m.vocab.id(&w1).unwrap();
            let b = m.vocab.id(&w2).unwrap();
            expected_sims.push(cosine(&m.word_vecs.row_f64(a), &m.word_vecs.row_f64(b)));
            expected_scores.push(score);
        }
        let (rho, used) = eval_wordsim(&m, &wordsim_from(&text)).unwrap();
        assert_eq!(used, 10);
        let expected = spearman_oracle(&expected_sims, &expected_scores);
        assert!((rho - expected).abs() < 1e-10);
    }

    // -- nonce ----------------------------------------------------------------

    #[test]
    fn nonce_dataset_validates_occurrence() {
        let ok = NonceDataset::read(
            Cursor::new("carx\tthe carx sped away\n"),
            Path::new("<memory>"),
        )
        .unwrap();
        assert_eq!(ok.items.len(), 1);
        assert!(NonceDataset::read(
            Cursor::new("carx\tno mention here\n"),
            Path::new("<memory>")
        )
        .is_err());
    }

    #[test]
    fn nonce_skips_missing_vocabulary_entries() {
        let m = toy_model(&["cat", "car", "can", "dog"], 4, Mode::Ev, 60);
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for r in 0..m.vocab.len() {
            for c in 0..m.dim {
                m.word_vecs.set(r, c, rng.random::<f32>() - 0.5);
            }
        }
        let pc = compute_principal_components(&m, 2).unwrap();
        let ds = NonceDataset::read(
            Cursor::new("cat\tthe cat and the dog\nunknownword\tthe unknownword is here\n"),
            Path::new("<memory>"),
        )
        .unwrap();
        let r = eval_nonce(&m, &pc, &ds, EstimateOptions::default()).unwrap();
        assert_eq!(r.evaluated, 1);
        assert_eq!(r.skipped, 1);
        assert!(r.mrr > 0.0 && r.mrr <= 1.0);
        assert!(r.median_rank >= 1.0 && r.median_rank <= m.vocab.len() as f64);
    }

    // -- crw --------------------------------------------------------------------

    fn write_crw_fixture(
        dir: &Path,
        pairs: &[(&str, &str, f64)],
        contexts: &[(&str, &[&str])],
    ) -> PathBuf {
        let tsv = dir.join("crw.tsv");
        let mut text = String::new();
        for (rare, anchor, score) in pairs {
            text.push_str(&format!("{rare}\t{anchor}\t{score}\n"));
        }
        std::fs::write(&tsv, text).unwrap();
        let ctx_dir = dir.join("contexts");
        std::fs::create_dir_all(&ctx_dir).unwrap();
        for (rare, sentences) in contexts {
            std::fs::write(ctx_dir.join(format!("{rare}.txt")), sentences.join("\n")).unwrap();
        }
        tsv
    }

    fn crw_model() -> ModelStore {
        let m = toy_model(
            &["cat", "car", "can", "dog", "den", "doom"],
            4,
            Mode::Ev,
            70,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        for matrix in [&m.word_vecs, &m.clue_vecs, &m.subword_vecs] {
            for r in 0..matrix.rows() {
                for c in 0..matrix.dim() {
                    matrix.set(r, c, rng.random::<f32>() - 0.5);
                }
            }
        }
        m
    }

    #[test]
    fn crw_budget_clamps_to_available_contexts() {
        let dir = tempfile::tempdir().unwrap();
        let tsv = write_crw_fixture(
            dir.path(),
            &[("cax", "cat", 3.0), ("dox", "dog", 1.0), ("cam", "can", 2.0)],
            &[
                ("cax", &["the cat cax car", "can cax dog"]),
                ("dox", &["dog dox den"]),
                ("cam", &["can cam car", "cat cam den", "dog cam doom"]),
            ],
        );
        let ds = CrwDataset::load(&tsv).unwrap();
        let m = crw_model();
        let pc = compute_principal_components(&m, 2).unwrap();
        let opts = EstimateOptions::default();
        let a = eval_crw(&m, &pc, &ds, &[3, 50], opts).unwrap();
        // Budget 50 clamps to the 3 available contexts.
        assert_eq!(a[0].rho, a[1].rho);
        assert_eq!(a[0].pairs, a[1].pairs);
    }

    #[test]
    fn crw_perfect_correlation_with_single_contexts() {
        let dir = tempfile::tempdir().unwrap();
        // One context each: every budget clamps to 1, so the scores can be
        // constructed to equal the cosines exactly.
        let tsv = write_crw_fixture(
            dir.path(),
            &[("cax", "cat", 0.0), ("dox", "dog", 0.0), ("cam", "can", 0.0)],
            &[
                ("cax", &["the cat cax car"]),
                ("dox", &["dog dox den"]),
                ("cam", &["can cam doom"]),
            ],
        );
        let ds = CrwDataset::load(&tsv).unwrap();
        let m = crw_model();
        let pc = compute_principal_components(&m, 2).unwrap();
        let opts = EstimateOptions::default();

        let mut scored = ds.clone();
        for (rare, anchor, score) in scored.pairs.iter_mut() {
            let est = estimate_oov(&m, rare, &ds.contexts[rare], &pc, opts).unwrap();
            let anchor_id = m.vocab.id(anchor).unwrap();
            *score = cosine_to_word(&m, &est.combined, anchor_id);
        }
        let points = eval_crw(&m, &pc, &scored, &[1, 2, 4, 8], opts).unwrap();
        for p in points {
            assert!((p.rho - 1.0).abs() < 1e-12, "budget {}: {}", p.budget, p.rho);
            assert_eq!(p.pairs, 3);
        }
    }

    #[test]
    fn crw_matches_an_end_to_end_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let tsv = write_crw_fixture(
            dir.path(),
            &[
                ("cax", "cat", 2.5),
                ("dox", "dog", 7.0),
                ("cam", "can", 4.25),
                ("dem", "den", 1.0),
            ],
            &[
                (
                    "cax",
                    &[
                        "the cat cax car",
                        "can cax dog",
                        "cax doom cat",
                        "den cax can car",
                    ],
                ),
                ("dox", &["dog dox den", "doom dox dog cat"]),
                ("cam", &["can cam car", "cat cam den", "dog cam doom"]),
                ("dem", &["den dem doom", "dem dog den"]),
            ],
        );
        let ds = CrwDataset::load(&tsv).unwrap();
        let m = crw_model();
        let pc = compute_principal_components(&m, 3).unwrap();
        let opts = EstimateOptions::default();
        let budgets = [1usize, 2, 4, 8];
        let points = eval_crw(&m, &pc, &ds, &budgets, opts).unwrap();

        // Independent pipeline recomputation: pool clues by hand, average
        // rows, project by hand, add the gram mean, cosine, rank-correlate.
        for (pi, &budget) in budgets.iter().enumerate() {
            let mut sims = Vec::new();
            let mut human = Vec::new();
            for (rare, anchor, score) in &ds.pairs {
                let anchor_id = m.vocab.id(anchor).unwrap();
                let ctxs = &ds.contexts[rare];
                let take = budget.min(ctxs.len());
                let mut clue_rows: Vec<Vec<f64>> = Vec::new();
                for sentence in &ctxs[..take] {
                    for (pos, tok) in sentence.iter().enumerate() {
                        if tok != rare {
                            continue;
                        }
                        let lo = pos.saturating_sub(m.config.clue_window);
                        let hi = (pos + m.config.clue_window).min(sentence.len() - 1);
                        for p in lo..=hi {
                            if sentence[p] == *rare {
                                continue;
                            }
                            if let Some(id) = m.vocab.id(&sentence[p]) {
                                clue_rows.push(m.clue_vecs.row_f64(id));
                            }
                        }
                    }
                }
                let mut combined = vec![0.0f64; m.dim];
                if !clue_rows.is_empty() {
                    let mut cc = vec![0.0f64; m.dim];
                    for row in &clue_rows {
                        for (a, b) in cc.iter_mut().zip(row.iter()) {
                            *a += b;
                        }
                    }
                    for v in cc.iter_mut() {
                        *v /= clue_rows.len() as f64;
                    }
                    for comp in &pc.components {
                        let dot: f64 = cc.iter().zip(comp.iter()).map(|(a, b)| a * b).sum();
                        for (v, c) in cc.iter_mut().zip(comp.iter()) {
                            *v -= dot * c;
                        }
                    }
                    for (a, b) in combined.iter_mut().zip(cc.iter()) {
                        *a += b;
                    }
                }
                let gram_ids = m.subwords.gram_ids_for(rare);
                if !gram_ids.is_empty() {
                    let mut sub = vec![0.0f64; m.dim];
                    for &g in &gram_ids {
                        for (a, b) in sub.iter_mut().zip(m.subword_vecs.row_f64(g).iter()) {
                            *a += b;
                        }
                    }
                    for v in sub.iter_mut() {
                        *v /= gram_ids.len() as f64;
                    }
                    for (a, b) in combined.iter_mut().zip(sub.iter()) {
                        *a += b;
                    }
                }
                sims.push(cosine(&combined, &m.word_vecs.row_f64(anchor_id)));
                human.push(*score);
            }
            let expected = spearman_oracle(&sims, &human);
            assert!(
                (points[pi].rho - expected).abs() < 1e-10,
                "budget {budget}: {} vs {expected}",
                points[pi].rho
            );
            assert_eq!(points[pi].pairs, 4);
        }
    }

    #[test]
    fn crw_rejects_unsorted_budgets() {
        let m = crw_model();
        let pc = compute_principal_components(&m, 2).unwrap();
        let ds = CrwDataset {
            pairs: vec![],
            contexts: HashMap::new(),
        };
        assert!(eval_crw(&m, &pc, &ds, &[2, 1], EstimateOptions::default()).is_err());
        assert!(eval_crw(&m, &pc, &ds, &[], EstimateOptions::default()).is_err());
    }

    #[test]
    fn determinism_of_evaluation() {
        let m = crw_model();
        let pc = compute_principal_components(&m, 2).unwrap();
        let ds = NonceDataset::read(
            Cursor::new("cat\tthe cat and the dog\ncar\tthe car hit a can\n"),
            Path::new("<memory>"),
        )
        .unwrap();
        let a = eval_nonce(&m, &pc, &ds, EstimateOptions::default()).unwrap();
        let b = eval_nonce(&m, &pc, &ds, EstimateOptions::default()).unwrap();
        assert_eq!(a.mrr, b.mrr);
        assert_eq!(a.median_rank, b.median_rank);
    }

    #[test]
    fn unused_import_guard() {
        // HashSet is used by callers of the public API; keep the import hot.
        let _: HashSet<usize> = HashSet::new();
    }
}
