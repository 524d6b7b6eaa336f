//! Pair generation, negative sampling, and the SGD training loop.

pub mod kernel;

use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Mode, TrainingConfig};
use crate::corpus::{subsample_into, SentenceStream, Vocabulary};
use crate::error::{Error, Result};
use crate::model::ModelStore;
use crate::subwords::SubwordVocabulary;

use kernel::StepScratch;

/// Cumulative-weight table for drawing negative samples from the
/// unigram^0.75 distribution.
pub struct NegativeTable {
    cumulative: Vec<f64>,
    total: f64,
}

impl NegativeTable {
    pub fn build(vocab: &Vocabulary) -> NegativeTable {
        let mut cumulative = Vec::with_capacity(vocab.len());
        let mut total = 0.0;
        for id in 0..vocab.len() {
            total += (vocab.count(id) as f64).powf(0.75);
            cumulative.push(total);
        }
        NegativeTable { cumulative, total }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let x = rng.random::<f64>() * self.total;
        let idx = self.cumulative.partition_point(|&c| c <= x);
        idx.min(self.cumulative.len() - 1)
    }

    /// Exact sampling probability of a word id.
    pub fn probability(&self, id: usize) -> f64 {
        let prev = if id == 0 { 0.0 } else { self.cumulative[id - 1] };
        (self.cumulative[id] - prev) / self.total
    }

    pub fn len(&self) -> usize {
        self.cumulative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cumulative.is_empty()
    }
}

/// Emit (target, context) index pairs for one target with a fixed window
/// radius, clipped to the sentence bounds.
pub(crate) fn pairs_for_target(
    len: usize,
    target: usize,
    radius: usize,
    out: &mut Vec<(usize, usize)>,
) {
    let start = target.saturating_sub(radius);
    let end = (target + radius).min(len - 1);
    for c in start..=end {
        if c != target {
            out.push((target, c));
        }
    }
}

/// Skipgram pair generation with a dynamic window: for each target
/// position the radius is drawn uniformly from 1..=max_window.
pub fn generate_pairs<R: Rng>(
    sentence: &[usize],
    max_window: usize,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    generate_pairs_into(sentence, max_window, rng, &mut out);
    out
}

pub fn generate_pairs_into<R: Rng>(
    sentence: &[usize],
    max_window: usize,
    rng: &mut R,
    out: &mut Vec<(usize, usize)>,
) {
    out.clear();
    if sentence.len() < 2 {
        return;
    }
    for target in 0..sentence.len() {
        let radius = rng.random_range(1..=max_window);
        pairs_for_target(sentence.len(), target, radius, out);
    }
}

/// The clue ids of a target: tokens within the fixed clue window on either
/// side, excluding the target position, clipped to the sentence. Duplicate
/// tokens are kept with their multiplicity.
pub fn collect_context_clues(
    sentence: &[usize],
    target_index: usize,
    clue_window: usize,
) -> Vec<usize> {
    let mut out = Vec::new();
    collect_context_clues_into(sentence, target_index, clue_window, &mut out);
    out
}

pub fn collect_context_clues_into(
    sentence: &[usize],
    target_index: usize,
    clue_window: usize,
    out: &mut Vec<usize>,
) {
    out.clear();
    let start = target_index.saturating_sub(clue_window);
    let end = (target_index + clue_window).min(sentence.len().saturating_sub(1));
    for pos in start..=end {
        if pos != target_index {
            out.push(sentence[pos]);
        }
    }
}

/// Linear decay against the analytic pair-count estimate, floored at
/// lr_min.
pub fn learning_rate(pairs_done: u64, pairs_total: u64, lr0: f64, lr_min: f64) -> f64 {
    let frac = if pairs_total == 0 {
        1.0
    } else {
        pairs_done as f64 / pairs_total as f64
    };
    (lr0 * (1.0 - frac)).max(lr_min)
}

#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub pairs: u64,
    pub seconds: f64,
    pub pairs_per_sec: f64,
}

pub struct TrainOutcome {
    pub model: ModelStore,
    pub epochs: Vec<EpochStats>,
}

struct WorkerOutput {
    loss_sum: f64,
    stepped: u64,
    pairs: u64,
}

fn derive_seed(seed: u64, epoch: usize, worker: usize) -> u64 {
    let mut x = seed
        ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (worker as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

#[allow(clippy::too_many_arguments)]
fn run_worker(
    model: &ModelStore,
    table: &NegativeTable,
    corpus: &Path,
    epoch: usize,
    worker: usize,
    workers: usize,
    file_size: u64,
    pairs_total: u64,
    pairs_done: &AtomicU64,
    abort: &AtomicBool,
    start: Instant,
) -> Result<WorkerOutput> {
    let config = &model.config;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch, worker));
    let begin = file_size * worker as u64 / workers as u64;
    let end = if worker + 1 == workers {
        file_size
    } else {
        file_size * (worker as u64 + 1) / workers as u64
    };
    let mut stream = SentenceStream::open_range(corpus, &model.vocab, begin, end)?;

    let mut sentence = Vec::new();
    let mut kept = Vec::new();
    let mut pairs = Vec::new();
    let mut clues = Vec::new();
    let mut scratch = StepScratch::new(config.dim);
    let mut out = WorkerOutput {
        loss_sum: 0.0,
        stepped: 0,
        pairs: 0,
    };

    while stream.next_sentence(&mut sentence)? {
        if abort.load(Ordering::Relaxed) {
            return Ok(out);
        }
        subsample_into(
            &sentence,
            &model.vocab,
            config.subsample_threshold,
            &mut rng,
            &mut kept,
        );
        if kept.len() < 2 {
            continue;
        }
        generate_pairs_into(&kept, config.max_window, &mut rng, &mut pairs);
        let mut clue_target = usize::MAX;
        for &(t, c) in pairs.iter() {
            let done = pairs_done.fetch_add(1, Ordering::Relaxed);
            let lr = learning_rate(done, pairs_total, config.lr0, config.lr_min);
            let loss = match config.mode {
                Mode::Ev => {
                    if t != clue_target {
                        collect_context_clues_into(&kept, t, config.clue_window, &mut clues);
                        clue_target = t;
                    }
                    kernel::ev_step(model, kept[t], kept[c], &clues, lr, table, &mut rng, &mut scratch)
                }
                Mode::Sg => {
                    kernel::sg_step(model, kept[t], kept[c], lr, table, &mut rng, &mut scratch)
                }
                Mode::Ft => {
                    kernel::ft_step(model, kept[t], kept[c], lr, table, &mut rng, &mut scratch)
                }
            };
            if !loss.is_finite() {
                abort.store(true, Ordering::Relaxed);
                return Err(Error::NonFiniteLoss {
                    pairs_done: done,
                    lr,
                });
            }
            out.pairs += 1;
            if loss > 0.0 {
                out.loss_sum += loss;
                out.stepped += 1;
            }
            if worker == 0 && (done + 1) % 200_000 == 0 {
                let pct = (100.0 * (done + 1) as f64 / pairs_total.max(1) as f64).min(100.0);
                let pps = (done + 1) as f64 / start.elapsed().as_secs_f64().max(1e-9);
                let mean = out.loss_sum / out.stepped.max(1) as f64;
                eprint!(
                    "\repoch {} {:5.1}% lr {:.6} loss {:.4} {:.0} pairs/s   ",
                    epoch + 1,
                    pct,
                    lr,
                    mean,
                    pps
                );
            }
        }
    }
    Ok(out)
}

/// Full training pipeline: vocabulary, subword vocabulary, model
/// initialization, negative table, then `epochs` passes of asynchronous
/// SGD over the corpus.
///
/// Workers split the corpus into byte ranges and update the shared
/// matrices without locks; determinism is guaranteed only with
/// `workers = 1`.
pub fn train(corpus: &Path, config: &TrainingConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let vocab = Vocabulary::build_from_file(corpus, config.min_count)?;
    let subwords = match config.mode {
        Mode::Sg => SubwordVocabulary::empty(config.n_min, config.n_max, config.min_gram_words),
        _ => SubwordVocabulary::build(&vocab, config.n_min, config.n_max, config.min_gram_words),
    };
    eprintln!(
        "vocabulary: {} words ({} tokens), {} subword grams",
        vocab.len(),
        vocab.total_tokens(),
        subwords.len()
    );

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = ModelStore::init(vocab, subwords, config, &mut rng);
    let table = NegativeTable::build(&model.vocab);
    let pairs_total =
        config.epochs as u64 * model.vocab.total_tokens() * (config.max_window as u64 + 1);
    let file_size = std::fs::metadata(corpus)?.len();
    let pairs_done = AtomicU64::new(0);
    let abort = AtomicBool::new(false);
    let start = Instant::now();

    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let epoch_start = Instant::now();
        let results: Vec<Result<WorkerOutput>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..config.workers)
                .map(|worker| {
                    let model = &model;
                    let table = &table;
                    let pairs_done = &pairs_done;
                    let abort = &abort;
                    scope.spawn(move || {
                        run_worker(
                            model,
                            table,
                            corpus,
                            epoch,
                            worker,
                            config.workers,
                            file_size,
                            pairs_total,
                            pairs_done,
                            abort,
                            start,
                        )
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("worker thread panicked"))
                .collect()
        });

        let mut loss_sum = 0.0;
        let mut stepped = 0u64;
        let mut pairs = 0u64;
        for result in results {
            let output = result?;
            loss_sum += output.loss_sum;
            stepped += output.stepped;
            pairs += output.pairs;
        }
        let seconds = epoch_start.elapsed().as_secs_f64();
        let mean_loss = if stepped > 0 { loss_sum / stepped as f64 } else { 0.0 };
        let pairs_per_sec = pairs as f64 / seconds.max(1e-9);
        eprintln!(
            "\repoch {}/{}: mean loss {:.4}, {} pairs, {:.1}s, {:.0} pairs/s        ",
            epoch + 1,
            config.epochs,
            mean_loss,
            pairs,
            seconds,
            pairs_per_sec
        );
        epochs.push(EpochStats {
            epoch,
            mean_loss,
            pairs,
            seconds,
            pairs_per_sec,
        });
    }

    Ok(TrainOutcome { model, epochs })
}

#[cfg(test)]
mod tests {
    use std::io::Write;

    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::testutil::{toy_model, two_topic_corpus};

    #[test]
    fn pairs_for_target_enumerates_the_window() {
        let mut out = Vec::new();
        pairs_for_target(3, 1, 1, &mut out);
        assert_eq!(out, vec![(1, 0), (1, 2)]);

        // Radius 5 on a 6-token sentence: every target pairs with all
        // other positions, 30 pairs in total.
        let mut total = Vec::new();
        for t in 0..6 {
            pairs_for_target(6, t, 5, &mut total);
        }
        assert_eq!(total.len(), 30);
        // Brute-force oracle: enumerate all clipped windows directly.
        let mut expected = Vec::new();
        for t in 0..6i64 {
            for c in (t - 5).max(0)..=(t + 5).min(5) {
                if c != t {
                    expected.push((t as usize, c as usize));
                }
            }
        }
        assert_eq!(total, expected);
    }

    #[test]
    fn generate_pairs_degenerate_and_unit_window() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(generate_pairs(&[7], 5, &mut rng).is_empty());
        assert!(generate_pairs(&[], 5, &mut rng).is_empty());
        // max_window = 1 forces radius 1 everywhere.
        assert_eq!(
            generate_pairs(&[10, 11, 12], 1, &mut rng),
            vec![(0, 1), (1, 0), (1, 2), (2, 1)]
        );
    }

    #[test]
    fn generate_pairs_respects_bounds_and_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sentence: Vec<usize> = (0..30).collect();
        for _ in 0..50 {
            for (t, c) in generate_pairs(&sentence, 5, &mut rng) {
                assert!(t < sentence.len() && c < sentence.len());
                assert_ne!(t, c);
                assert!(t.abs_diff(c) <= 5);
            }
        }
    }

    #[test]
    fn context_clues_examples() {
        // [the, yellow, car, sped, up, quickly], target "car" at 2.
        let sentence = vec![0, 1, 2, 3, 4, 5];
        assert_eq!(collect_context_clues(&sentence, 2, 3), vec![0, 1, 3, 4, 5]);
        // Target at position 0: the next three tokens only.
        assert_eq!(collect_context_clues(&sentence, 0, 3), vec![1, 2, 3]);
        // Single-token sentence: empty clue set.
        assert_eq!(collect_context_clues(&[9], 0, 3), Vec::<usize>::new());
    }

    #[test]
    fn context_clues_keep_duplicates() {
        let sentence = vec![4, 4, 7, 4, 4];
        assert_eq!(collect_context_clues(&sentence, 2, 3), vec![4, 4, 4, 4]);
    }

    #[test]
    fn negative_table_probabilities() {
        // Direct evaluation of the normalization as the oracle.
        let vocab = Vocabulary::build(
            std::iter::repeat("a".to_string())
                .take(8)
                .chain(std::iter::once("b".to_string())),
            1,
        )
        .unwrap();
        let table = NegativeTable::build(&vocab);
        let a = vocab.id("a").unwrap();
        let expected = 8f64.powf(0.75) / (8f64.powf(0.75) + 1.0);
        assert!((table.probability(a) - expected).abs() < 1e-12);
        assert!((expected - 0.8263).abs() < 5e-5);

        let uniform = Vocabulary::build(vec!["a".to_string(), "b".to_string()], 1).unwrap();
        let t2 = NegativeTable::build(&uniform);
        assert!((t2.probability(0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn negative_table_draws_match_the_distribution() {
        let mut tokens = Vec::new();
        for (word, count) in [("a", 50), ("b", 20), ("c", 5), ("d", 1)] {
            tokens.extend(std::iter::repeat(word.to_string()).take(count));
        }
        let vocab = Vocabulary::build(tokens, 1).unwrap();
        let table = NegativeTable::build(&vocab);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws = 1_000_000usize;
        let mut counts = vec![0u64; vocab.len()];
        for _ in 0..draws {
            counts[table.sample(&mut rng)] += 1;
        }
        for id in 0..vocab.len() {
            let empirical = counts[id] as f64 / draws as f64;
            assert!(
                (empirical - table.probability(id)).abs() < 0.005,
                "word {id}: empirical {empirical} vs {}",
                table.probability(id)
            );
        }
    }

    #[test]
    fn learning_rate_schedule_endpoints() {
        assert_eq!(learning_rate(0, 1000, 0.025, 0.0001), 0.025);
        assert_eq!(learning_rate(1000, 1000, 0.025, 0.0001), 0.0001);
        // Monotone non-increasing in between.
        let mut prev = f64::INFINITY;
        for done in (0..=1000).step_by(100) {
            let lr = learning_rate(done, 1000, 0.025, 0.0001);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    fn write_corpus(dir: &tempfile::TempDir, text: &str) -> std::path::PathBuf {
        let path = dir.path().join("corpus.txt");
        let mut f = std::fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        path
    }

    fn small_config(mode: Mode) -> TrainingConfig {
        let mut config = TrainingConfig::default();
        config.dim = 16;
        config.min_count = 2;
        config.subsample_threshold = 0.05; // effectively off on the toy corpus
        config.epochs = 5;
        config.mode = mode;
        config.min_gram_words = 2;
        config.seed = 13;
        config
    }

    #[test]
    fn training_loss_decreases_on_synthetic_corpus() {
        let dir = tempfile::tempdir().unwrap();
        let text = two_topic_corpus(10_000, 17);
        let path = write_corpus(&dir, &text);
        let outcome = train(&path, &small_config(Mode::Ev)).unwrap();
        assert!(outcome.model.all_finite());
        let losses: Vec<f64> = outcome.epochs.iter().map(|e| e.mean_loss).collect();
        assert_eq!(losses.len(), 5);
        for w in losses.windows(2) {
            assert!(w[1] < w[0], "epoch losses not strictly decreasing: {losses:?}");
        }
    }

    #[test]
    fn training_is_deterministic_with_one_worker() {
        let dir = tempfile::tempdir().unwrap();
        let text = two_topic_corpus(3_000, 3);
        let path = write_corpus(&dir, &text);
        let mut config = small_config(Mode::Ev);
        config.epochs = 2;
        let a = train(&path, &config).unwrap();
        let b = train(&path, &config).unwrap();
        assert!(a.model.bitwise_eq(&b.model));
    }

    #[test]
    fn training_aborts_on_numeric_blowup() {
        let dir = tempfile::tempdir().unwrap();
        let text = two_topic_corpus(3_000, 4);
        let path = write_corpus(&dir, &text);
        let mut config = small_config(Mode::Ev);
        config.lr0 = 1e30;
        config.lr_min = 1e30;
        match train(&path, &config) {
            Err(Error::NonFiniteLoss { .. }) => {}
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn training_propagates_missing_corpus() {
        let config = small_config(Mode::Ev);
        assert!(train(Path::new("/nonexistent/corpus.txt"), &config).is_err());
    }

    #[test]
    fn toy_model_helper_is_consistent() {
        let m = toy_model(&["alpha", "beta", "gamma"], 8, Mode::Ev, 1);
        assert_eq!(m.vocab.len(), 3);
        assert_eq!(m.word_vecs.rows(), 3);
        assert!(m.subword_vecs.rows() > 0);
    }
}
