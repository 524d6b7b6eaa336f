//! SGD step kernels for the three objectives.
//!
//! All three share one core: a target-side estimate (or two of them) is
//! paired against the word vector of the observed context word and against
//! negative samples. The estimate is a mean (or sum) of rows from one of
//! the auxiliary matrices, and the gradient on the estimate is distributed
//! back to those rows.
//!
//! Losses and gradients are computed in f64 from the f32 rows, and all
//! sigmoid values are taken against the pre-update word vectors before any
//! row is written (the usual buffering convention); a step is therefore an
//! exact SGD step on the reported loss.

use rand::Rng;

use crate::model::{EmbeddingMatrix, ModelStore};

use super::NegativeTable;

/// A colliding negative sample is redrawn at most this many times, then
/// dropped for the step.
pub const MAX_NEGATIVE_REDRAWS: usize = 8;

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// log(sigmoid(x)), computed without overflow for large |x|.
#[inline]
pub fn ln_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Reusable per-worker buffers; one step never allocates.
pub struct StepScratch {
    est_a: Vec<f64>,
    est_b: Vec<f64>,
    grad_a: Vec<f64>,
    grad_b: Vec<f64>,
    row: Vec<f64>,
    coefs: Vec<(usize, f64, f64)>,
    negatives: Vec<usize>,
}

impl StepScratch {
    pub fn new(dim: usize) -> StepScratch {
        StepScratch {
            est_a: Vec::with_capacity(dim),
            est_b: Vec::with_capacity(dim),
            grad_a: Vec::with_capacity(dim),
            grad_b: Vec::with_capacity(dim),
            row: vec![0.0; dim],
            coefs: Vec::with_capacity(8),
            negatives: Vec::with_capacity(8),
        }
    }
}

/// One estimate side: `rows` of `matrix`, summed and divided by `divisor`.
struct Side<'a> {
    matrix: &'a EmbeddingMatrix,
    rows: &'a [usize],
    divisor: f64,
}

impl<'a> Side<'a> {
    fn mean(matrix: &'a EmbeddingMatrix, rows: &'a [usize]) -> Side<'a> {
        Side {
            matrix,
            rows,
            divisor: rows.len() as f64,
        }
    }

    fn sum(matrix: &'a EmbeddingMatrix, rows: &'a [usize]) -> Side<'a> {
        Side {
            matrix,
            rows,
            divisor: 1.0,
        }
    }

    fn estimate_into(&self, out: &mut Vec<f64>, dim: usize) {
        out.clear();
        out.resize(dim, 0.0);
        for &r in self.rows {
            self.matrix.add_row_to(r, out);
        }
        if self.divisor != 1.0 {
            let inv = 1.0 / self.divisor;
            for v in out.iter_mut() {
                *v *= inv;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

/// Computes the loss and fills the scratch gradient accumulators. All
/// word-vector rows are read before anything is applied, so the result is
/// a pure function of the current model state.
fn paired_core(
    word_vecs: &EmbeddingMatrix,
    a: Option<&Side>,
    b: Option<&Side>,
    positive: usize,
    negatives: &[usize],
    s: &mut StepScratch,
) -> f64 {
    let dim = word_vecs.dim();
    match a {
        Some(a) => a.estimate_into(&mut s.est_a, dim),
        None => s.est_a.clear(),
    }
    match b {
        Some(b) => b.estimate_into(&mut s.est_b, dim),
        None => s.est_b.clear(),
    }
    s.grad_a.clear();
    s.grad_a.resize(if a.is_some() { dim } else { 0 }, 0.0);
    s.grad_b.clear();
    s.grad_b.resize(if b.is_some() { dim } else { 0 }, 0.0);
    s.coefs.clear();
    if s.row.len() != dim {
        s.row.resize(dim, 0.0);
    }

    let mut loss = 0.0;
    for (i, &sample) in std::iter::once(&positive).chain(negatives.iter()).enumerate() {
        let is_positive = i == 0;
        word_vecs.read_row(sample, &mut s.row);
        let mut coef_a = 0.0;
        let mut coef_b = 0.0;
        if !s.est_a.is_empty() {
            let d = dot(&s.row, &s.est_a);
            if is_positive {
                loss -= ln_sigmoid(d);
                coef_a = sigmoid(d) - 1.0;
            } else {
                loss -= ln_sigmoid(-d);
                coef_a = sigmoid(d);
            }
            for (g, r) in s.grad_a.iter_mut().zip(s.row.iter()) {
                *g += coef_a * r;
            }
        }
        if !s.est_b.is_empty() {
            let d = dot(&s.row, &s.est_b);
            if is_positive {
                loss -= ln_sigmoid(d);
                coef_b = sigmoid(d) - 1.0;
            } else {
                loss -= ln_sigmoid(-d);
                coef_b = sigmoid(d);
            }
            for (g, r) in s.grad_b.iter_mut().zip(s.row.iter()) {
                *g += coef_b * r;
            }
        }
        s.coefs.push((sample, coef_a, coef_b));
    }
    loss
}

/// SGD application of the gradients left in the scratch by `paired_core`.
fn apply_from_scratch(
    word_vecs: &EmbeddingMatrix,
    a: Option<&Side>,
    b: Option<&Side>,
    lr: f64,
    s: &StepScratch,
) {
    for &(row, coef_a, coef_b) in &s.coefs {
        word_vecs.update_row2(row, -lr * coef_a, &s.est_a, -lr * coef_b, &s.est_b);
    }
    if let Some(a) = a {
        let factor = -lr / a.divisor;
        for &q in a.rows {
            a.matrix.axpy_row(q, factor, &s.grad_a);
        }
    }
    if let Some(b) = b {
        let factor = -lr / b.divisor;
        for &g in b.rows {
            b.matrix.axpy_row(g, factor, &s.grad_b);
        }
    }
}

/// Analytic gradients of one step's loss, keyed by row id. Rows appearing
/// several times (duplicate negatives, repeated clue tokens) are merged
/// with their multiplicity.
#[derive(Debug)]
pub struct StepGradients {
    pub loss: f64,
    /// d loss / d word_vecs[row], for the positive and each negative.
    pub word_grads: Vec<(usize, Vec<f64>)>,
    /// d loss / d clue_vecs[row] (EV clue side, or the SG target row).
    pub clue_grads: Vec<(usize, Vec<f64>)>,
    /// d loss / d subword_vecs[row].
    pub gram_grads: Vec<(usize, Vec<f64>)>,
}

fn side_grads(side: Option<&Side>, grad_est: &[f64]) -> Vec<(usize, Vec<f64>)> {
    let side = match side {
        Some(side) => side,
        None => return Vec::new(),
    };
    let mut merged: Vec<(usize, usize)> = Vec::new(); // (row, multiplicity)
    for &r in side.rows {
        match merged.iter_mut().find(|(row, _)| *row == r) {
            Some((_, m)) => *m += 1,
            None => merged.push((r, 1)),
        }
    }
    merged
        .into_iter()
        .map(|(row, m)| {
            let scale = m as f64 / side.divisor;
            (row, grad_est.iter().map(|g| g * scale).collect())
        })
        .collect()
}

fn collect_gradients(a: Option<&Side>, b: Option<&Side>, loss: f64, s: &StepScratch) -> StepGradients {
    let mut merged: Vec<(usize, f64, f64)> = Vec::new();
    for &(row, ca, cb) in &s.coefs {
        match merged.iter_mut().find(|(r, _, _)| *r == row) {
            Some((_, a, b)) => {
                *a += ca;
                *b += cb;
            }
            None => merged.push((row, ca, cb)),
        }
    }
    let dim = s.row.len();
    let word_grads = merged
        .into_iter()
        .map(|(row, ca, cb)| {
            let g = (0..dim)
                .map(|i| {
                    let ga = if s.est_a.is_empty() { 0.0 } else { ca * s.est_a[i] };
                    let gb = if s.est_b.is_empty() { 0.0 } else { cb * s.est_b[i] };
                    ga + gb
                })
                .collect();
            (row, g)
        })
        .collect();
    StepGradients {
        loss,
        word_grads,
        clue_grads: side_grads(a, &s.grad_a),
        gram_grads: side_grads(b, &s.grad_b),
    }
}

/// Draw `count` negative samples, redrawing any draw equal to `exclude`.
/// After MAX_NEGATIVE_REDRAWS collisions a sample is dropped, so the
/// result can be shorter than `count`; it never contains `exclude`.
pub fn draw_negatives<R: Rng>(
    table: &NegativeTable,
    rng: &mut R,
    count: usize,
    exclude: usize,
    out: &mut Vec<usize>,
) {
    out.clear();
    for _ in 0..count {
        for _ in 0..MAX_NEGATIVE_REDRAWS {
            let id = table.sample(rng);
            if id != exclude {
                out.push(id);
                break;
            }
        }
    }
}

fn ev_sides<'a>(
    model: &'a ModelStore,
    target: usize,
    clues: &'a [usize],
) -> (Option<Side<'a>>, Option<Side<'a>>) {
    let grams = model.subwords.word_grams(target);
    let a = (!clues.is_empty()).then(|| Side::mean(&model.clue_vecs, clues));
    let b = (!grams.is_empty()).then(|| Side::mean(&model.subword_vecs, grams));
    (a, b)
}

/// One EV step: the mean clue vector and the mean subword vector of the
/// target are both paired against the context word and the negatives.
/// Returns the loss. A pair with no clues and no grams is skipped (loss 0,
/// no updates).
pub fn ev_step_fixed(
    model: &ModelStore,
    target: usize,
    context: usize,
    clues: &[usize],
    negatives: &[usize],
    lr: f64,
    s: &mut StepScratch,
) -> f64 {
    let (a, b) = ev_sides(model, target, clues);
    if a.is_none() && b.is_none() {
        return 0.0;
    }
    let loss = paired_core(&model.word_vecs, a.as_ref(), b.as_ref(), context, negatives, s);
    apply_from_scratch(&model.word_vecs, a.as_ref(), b.as_ref(), lr, s);
    loss
}

/// Loss of an EV step without applying updates (fixed negative set).
pub fn ev_loss(
    model: &ModelStore,
    target: usize,
    context: usize,
    clues: &[usize],
    negatives: &[usize],
    s: &mut StepScratch,
) -> f64 {
    let (a, b) = ev_sides(model, target, clues);
    if a.is_none() && b.is_none() {
        return 0.0;
    }
    paired_core(&model.word_vecs, a.as_ref(), b.as_ref(), context, negatives, s)
}

/// Analytic gradients of the EV loss (fixed negative set).
pub fn ev_gradients(
    model: &ModelStore,
    target: usize,
    context: usize,
    clues: &[usize],
    negatives: &[usize],
    s: &mut StepScratch,
) -> StepGradients {
    let (a, b) = ev_sides(model, target, clues);
    let loss = paired_core(&model.word_vecs, a.as_ref(), b.as_ref(), context, negatives, s);
    collect_gradients(a.as_ref(), b.as_ref(), loss, s)
}

/// EV step with negatives drawn from the table.
#[allow(clippy::too_many_arguments)]
pub fn ev_step<R: Rng>(
    model: &ModelStore,
    target: usize,
    context: usize,
    clues: &[usize],
    lr: f64,
    table: &NegativeTable,
    rng: &mut R,
    s: &mut StepScratch,
) -> f64 {
    let mut negatives = std::mem::take(&mut s.negatives);
    draw_negatives(table, rng, model.config.negatives, context, &mut negatives);
    let loss = ev_step_fixed(model, target, context, clues, &negatives, lr, s);
    s.negatives = negatives;
    loss
}

/// One skipgram step: the target's own vector (stored in the clue slot) is
/// paired against the context word and the negatives.
pub fn sg_step_fixed(
    model: &ModelStore,
    target: usize,
    context: usize,
    negatives: &[usize],
    lr: f64,
    s: &mut StepScratch,
) -> f64 {
    let rows = [target];
    let a = Side::mean(&model.clue_vecs, &rows);
    let loss = paired_core(&model.word_vecs, Some(&a), None, context, negatives, s);
    apply_from_scratch(&model.word_vecs, Some(&a), None, lr, s);
    loss
}

pub fn sg_loss(
    model: &ModelStore,
    target: usize,
    context: usize,
    negatives: &[usize],
    s: &mut StepScratch,
) -> f64 {
    let rows = [target];
    let a = Side::mean(&model.clue_vecs, &rows);
    paired_core(&model.word_vecs, Some(&a), None, context, negatives, s)
}

pub fn sg_gradients(
    model: &ModelStore,
    target: usize,
    context: usize,
    negatives: &[usize],
    s: &mut StepScratch,
) -> StepGradients {
    let rows = [target];
    let a = Side::mean(&model.clue_vecs, &rows);
    let loss = paired_core(&model.word_vecs, Some(&a), None, context, negatives, s);
    collect_gradients(Some(&a), None, loss, s)
}

pub fn sg_step<R: Rng>(
    model: &ModelStore,
    target: usize,
    context: usize,
    lr: f64,
    table: &NegativeTable,
    rng: &mut R,
    s: &mut StepScratch,
) -> f64 {
    let mut negatives = std::mem::take(&mut s.negatives);
    draw_negatives(table, rng, model.config.negatives, context, &mut negatives);
    let loss = sg_step_fixed(model, target, context, &negatives, lr, s);
    s.negatives = negatives;
    loss
}

/// One subword-sum step: the *sum* of the target's gram vectors is paired
/// against the context word; the gradient reaches each gram row undivided.
pub fn ft_step_fixed(
    model: &ModelStore,
    target: usize,
    context: usize,
    negatives: &[usize],
    lr: f64,
    s: &mut StepScratch,
) -> f64 {
    let grams = model.subwords.word_grams(target);
    if grams.is_empty() {
        return 0.0;
    }
    let b = Side::sum(&model.subword_vecs, grams);
    let loss = paired_core(&model.word_vecs, None, Some(&b), context, negatives, s);
    apply_from_scratch(&model.word_vecs, None, Some(&b), lr, s);
    loss
}

pub fn ft_loss(
    model: &ModelStore,
    target: usize,
    context: usize,
    negatives: &[usize],
    s: &mut StepScratch,
) -> f64 {
    let grams = model.subwords.word_grams(target);
    if grams.is_empty() {
        return 0.0;
    }
    let b = Side::sum(&model.subword_vecs, grams);
    paired_core(&model.word_vecs, None, Some(&b), context, negatives, s)
}

pub fn ft_gradients(
    model: &ModelStore,
    target: usize,
    context: usize,
    negatives: &[usize],
    s: &mut StepScratch,
) -> StepGradients {
    let grams = model.subwords.word_grams(target);
    let b = Side::sum(&model.subword_vecs, grams);
    let loss = paired_core(&model.word_vecs, None, Some(&b), context, negatives, s);
    collect_gradients(None, Some(&b), loss, s)
}

pub fn ft_step<R: Rng>(
    model: &ModelStore,
    target: usize,
    context: usize,
    lr: f64,
    table: &NegativeTable,
    rng: &mut R,
    s: &mut StepScratch,
) -> f64 {
    let mut negatives = std::mem::take(&mut s.negatives);
    draw_negatives(table, rng, model.config.negatives, context, &mut negatives);
    let loss = ft_step_fixed(model, target, context, &negatives, lr, s);
    s.negatives = negatives;
    loss
}
