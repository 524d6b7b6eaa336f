//! Out-of-vocabulary estimation: context-clue and subword estimates,
//! combined after removing the word matrix's dominant shared directions.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::config::Mode;
use crate::error::{Error, Result};
use crate::model::ModelStore;

/// Column mean and top-k orthonormal directions of the word matrix.
#[derive(Clone, Debug)]
pub struct PrincipalComponents {
    pub mean: Vec<f64>,
    /// k unit vectors, pairwise orthogonal. Sign convention: the first
    /// coordinate with magnitude above 1e-9 is positive.
    pub components: Vec<Vec<f64>>,
    /// True when the centered word matrix had rank below k, in which case
    /// the trailing components are arbitrary orthonormal completions.
    pub degenerate: bool,
}

impl PrincipalComponents {
    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// Project the component directions out of `x`. With `center` the mean
    /// is subtracted first (and not added back); the default estimation
    /// path projects the raw vector.
    pub fn project_out(&self, x: &[f64], center: bool) -> Vec<f64> {
        let mut v: Vec<f64> = if center {
            x.iter().zip(self.mean.iter()).map(|(a, m)| a - m).collect()
        } else {
            x.to_vec()
        };
        for comp in &self.components {
            let dot: f64 = v.iter().zip(comp.iter()).map(|(a, b)| a * b).sum();
            for (vi, ci) in v.iter_mut().zip(comp.iter()) {
                *vi -= dot * ci;
            }
        }
        v
    }
}

/// x minus its projection onto every component (no mean subtraction).
pub fn remove_components(x: &[f64], pc: &PrincipalComponents) -> Vec<f64> {
    pc.project_out(x, false)
}

/// Top-k principal directions of the mean-centered word matrix, from the
/// eigendecomposition of its d x d scatter matrix.
pub fn compute_principal_components(model: &ModelStore, k: usize) -> Result<PrincipalComponents> {
    let n = model.vocab.len();
    let d = model.dim;
    if n <= k {
        return Err(Error::InvalidConfig(format!(
            "need more than {k} words to compute {k} principal components (have {n})"
        )));
    }

    let mut mean = vec![0.0f64; d];
    for r in 0..n {
        model.word_vecs.add_row_to(r, &mut mean);
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }

    let mut scatter = DMatrix::<f64>::zeros(d, d);
    let mut row = vec![0.0f64; d];
    for r in 0..n {
        model.word_vecs.read_row(r, &mut row);
        for (x, m) in row.iter_mut().zip(mean.iter()) {
            *x -= m;
        }
        for i in 0..d {
            let xi = row[i];
            if xi != 0.0 {
                for j in i..d {
                    scatter[(i, j)] += xi * row[j];
                }
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            scatter[(i, j)] = scatter[(j, i)];
        }
    }

    let eigen = SymmetricEigen::new(scatter);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));

    let max_value = eigen.eigenvalues[order[0]].max(0.0);
    let mut degenerate = false;
    let mut components = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        if eigen.eigenvalues[idx] <= max_value * 1e-10 {
            degenerate = true;
        }
        let col = eigen.eigenvectors.column(idx);
        let mut comp: Vec<f64> = col.iter().copied().collect();
        let norm: f64 = comp.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in comp.iter_mut() {
                *v /= norm;
            }
        }
        if let Some(first) = comp.iter().find(|v| v.abs() > 1e-9) {
            if *first < 0.0 {
                for v in comp.iter_mut() {
                    *v = -*v;
                }
            }
        }
        components.push(comp);
    }

    Ok(PrincipalComponents {
        mean,
        components,
        degenerate,
    })
}

#[derive(Clone, Copy, Debug)]
pub struct EstimateOptions {
    /// Remove the top principal components from the context-clue part
    /// before combining (on by default; off gives the raw sum).
    pub postprocess: bool,
    /// Subtract the word-matrix mean before projecting the clue part.
    pub center_before_projection: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            postprocess: true,
            center_before_projection: false,
        }
    }
}

/// An estimated embedding for a word treated as out-of-vocabulary.
/// `combined` is the sum of the parts that are present; `cc_part` is
/// stored after any postprocessing so that the invariant holds exactly.
#[derive(Clone, Debug)]
pub struct OovEstimate {
    pub word: String,
    pub cc_part: Option<Vec<f64>>,
    pub sub_part: Option<Vec<f64>>,
    pub combined: Vec<f64>,
    pub clues_used: usize,
    pub grams_used: usize,
}

/// Pool clue ids from the clue window around every occurrence of `word` in
/// the given tokenized contexts. Occurrences of the word itself are never
/// clues; unknown tokens are dropped; duplicates keep their multiplicity.
pub fn pooled_clue_ids(model: &ModelStore, word: &str, contexts: &[Vec<String>]) -> Vec<usize> {
    let window = model.config.clue_window;
    let mut ids = Vec::new();
    for sentence in contexts {
        for pos in 0..sentence.len() {
            if sentence[pos] != word {
                continue;
            }
            let start = pos.saturating_sub(window);
            let end = (pos + window).min(sentence.len() - 1);
            for p in start..=end {
                let token = &sentence[p];
                if token == word {
                    continue;
                }
                if let Some(id) = model.vocab.id(token) {
                    ids.push(id);
                }
            }
        }
    }
    ids
}

/// Mean of the clue vectors pooled around every marked occurrence of the
/// word; absent when no known clue exists.
pub fn context_clue_estimate(
    model: &ModelStore,
    word: &str,
    contexts: &[Vec<String>],
) -> Option<Vec<f64>> {
    let ids = pooled_clue_ids(model, word, contexts);
    mean_rows(&model.clue_vecs, &ids, model.dim)
}

/// Mean of the subword vectors over the word's indexed n-grams; absent
/// when the word shares no gram with the index.
pub fn subword_estimate(model: &ModelStore, word: &str) -> Option<Vec<f64>> {
    let ids = model.subwords.gram_ids_for(word);
    mean_rows(&model.subword_vecs, &ids, model.dim)
}

fn mean_rows(matrix: &crate::model::EmbeddingMatrix, ids: &[usize], dim: usize) -> Option<Vec<f64>> {
    if ids.is_empty() {
        return None;
    }
    let mut acc = vec![0.0f64; dim];
    for &id in ids {
        matrix.add_row_to(id, &mut acc);
    }
    let inv = 1.0 / ids.len() as f64;
    for v in acc.iter_mut() {
        *v *= inv;
    }
    Some(acc)
}

/// Estimate an OOV word from its contexts and its character n-grams.
///
/// The context-clue part has the top principal components removed (unless
/// disabled), then the present parts are summed. Errors with `NoSignal`
/// when neither part exists.
pub fn estimate_oov(
    model: &ModelStore,
    word: &str,
    contexts: &[Vec<String>],
    pc: &PrincipalComponents,
    opts: EstimateOptions,
) -> Result<OovEstimate> {
    if model.mode != Mode::Ev {
        return Err(Error::Unsupported(
            "OOV estimation requires a model trained in EV mode".to_string(),
        ));
    }
    let clue_ids = pooled_clue_ids(model, word, contexts);
    let gram_ids = model.subwords.gram_ids_for(word);
    let cc_raw = mean_rows(&model.clue_vecs, &clue_ids, model.dim);
    let sub_part = mean_rows(&model.subword_vecs, &gram_ids, model.dim);

    let cc_part = cc_raw.map(|cc| {
        if opts.postprocess {
            pc.project_out(&cc, opts.center_before_projection)
        } else {
            cc
        }
    });

    let combined = match (&cc_part, &sub_part) {
        (Some(cc), Some(sub)) => cc.iter().zip(sub.iter()).map(|(a, b)| a + b).collect(),
        (Some(cc), None) => cc.clone(),
        (None, Some(sub)) => sub.clone(),
        (None, None) => {
            return Err(Error::NoSignal {
                word: word.to_string(),
            })
        }
    };

    Ok(OovEstimate {
        word: word.to_string(),
        cc_part,
        sub_part,
        combined,
        clues_used: clue_ids.len(),
        grams_used: gram_ids.len(),
    })
}
