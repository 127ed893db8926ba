//! Brute-force reference implementations and random case generators shared
//! by the integration tests and the acceptance runner.
#![allow(dead_code)]

use lepl::data::{FeatureMatrix, LabelKind, LabelMatrix};
use lepl::label_enhancement::{le_grad, le_loss};
use lepl::label_graph::gcn_backward;
use lepl::metrics::*;
use lepl::trainer::{loss_and_upstream, Classifier};
use lepl::label_enhancement::{NeighborIndex, SoftLabelMatrix};
use lepl::label_graph::{CoOccurrenceGraph, GcnParameters, LabelEmbeddings};
use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::Rng;

/// Position of every entry in a stable descending sort (1-based), so equal
/// scores keep index order.
pub fn ranks(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut r = vec![0; scores.len()];
    for (pos, &k) in order.iter().enumerate() {
        r[k] = pos + 1;
    }
    r
}

pub fn oracle_map(scores: &Array2<f64>, truth: &Array2<u8>) -> Option<f64> {
    let mut total = 0.0;
    let mut classes = 0usize;
    for c in 0..scores.ncols() {
        let col: Vec<f64> = scores.column(c).to_vec();
        let r = ranks(&col);
        let mut pos_ranks: Vec<usize> = (0..col.len()).filter(|&i| truth[[i, c]] == 1).map(|i| r[i]).collect();
        if pos_ranks.is_empty() {
            continue;
        }
        pos_ranks.sort_unstable();
        let mut sum = 0.0;
        for &ri in &pos_ranks {
            let hits = pos_ranks.iter().filter(|&&rj| rj <= ri).count();
            sum += hits as f64 / ri as f64;
        }
        total += sum / pos_ranks.len() as f64;
        classes += 1;
    }
    (classes > 0).then(|| total / classes as f64)
}

pub fn oracle_lrl(scores: &Array2<f64>, truth: &Array2<u8>) -> Option<f64> {
    let mut total = 0.0;
    let mut counted = 0usize;
    for i in 0..scores.nrows() {
        let c = scores.ncols();
        let pos: Vec<usize> = (0..c).filter(|&k| truth[[i, k]] == 1).collect();
        let neg: Vec<usize> = (0..c).filter(|&k| truth[[i, k]] == 0).collect();
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let mut bad = 0usize;
        for &p in &pos {
            for &q in &neg {
                if scores[[i, p]] <= scores[[i, q]] {
                    bad += 1;
                }
            }
        }
        total += bad as f64 / (pos.len() * neg.len()) as f64;
        counted += 1;
    }
    (counted > 0).then(|| total / counted as f64)
}

pub fn oracle_coverage(scores: &Array2<f64>, truth: &Array2<u8>) -> Option<f64> {
    let mut total = 0usize;
    let mut counted = 0usize;
    for i in 0..scores.nrows() {
        let r = ranks(&scores.row(i).to_vec());
        if let Some(worst) = (0..scores.ncols()).filter(|&k| truth[[i, k]] == 1).map(|k| r[k]).max() {
            total += worst;
            counted += 1;
        }
    }
    (counted > 0).then(|| total as f64 / counted as f64)
}

pub fn oracle_one_error(scores: &Array2<f64>, truth: &Array2<u8>) -> Option<f64> {
    let mut misses = 0usize;
    let mut counted = 0usize;
    for i in 0..scores.nrows() {
        if truth.row(i).iter().all(|&y| y == 0) {
            continue;
        }
        let r = ranks(&scores.row(i).to_vec());
        let top = r.iter().position(|&x| x == 1).unwrap();
        misses += usize::from(truth[[i, top]] == 0);
        counted += 1;
    }
    (counted > 0).then(|| misses as f64 / counted as f64)
}

pub fn oracle_hamming(probabilities: &Array2<f64>, truth: &Array2<u8>) -> f64 {
    let mut wrong = 0usize;
    for (p, &y) in probabilities.iter().zip(truth.iter()) {
        let predicted = if *p >= 0.5 { 1 } else { 0 };
        wrong += usize::from(predicted != y);
    }
    wrong as f64 / probabilities.len() as f64
}

/// Scores in `(0, 1)`; with probability one half the row values are drawn
/// from a five-point grid so ties are common.
pub fn random_scores<R: Rng>(rng: &mut R, n: usize, c: usize) -> Array2<f64> {
    let tied = rng.random_bool(0.5);
    Array2::from_shape_fn((n, c), |_| {
        if tied {
            [0.1, 0.3, 0.5, 0.7, 0.9][rng.random_range(0..5)]
        } else {
            rng.random_range(0.001..0.999)
        }
    })
}

pub fn random_truth<R: Rng>(rng: &mut R, n: usize, c: usize, density: f64) -> Array2<u8> {
    Array2::from_shape_fn((n, c), |_| u8::from(rng.random_bool(density)))
}

pub fn random_partial<R: Rng>(rng: &mut R, n: usize, c: usize) -> LabelMatrix {
    let mut v = Array2::zeros((n, c));
    for i in 0..n {
        v[[i, rng.random_range(0..c)]] = 1;
    }
    LabelMatrix::new(v, LabelKind::Partial).unwrap()
}

pub fn random_full<R: Rng>(rng: &mut R, n: usize, c: usize, density: f64) -> LabelMatrix {
    let mut v = random_truth(rng, n, c, density);
    for i in 0..n {
        if v.row(i).iter().all(|&y| y == 0) {
            v[[i, rng.random_range(0..c)]] = 1;
        }
    }
    LabelMatrix::new(v, LabelKind::Full).unwrap()
}

/// Soft labels with random free logits and clamped observed positives.
pub fn random_soft<R: Rng>(rng: &mut R, partial: &LabelMatrix) -> SoftLabelMatrix<f64> {
    let logits = Array2::from_shape_fn(partial.values().dim(), |_| rng.random_range(-3.0..3.0));
    let clamped = partial.values().mapv(|v| v == 1);
    SoftLabelMatrix::from_logits(logits, clamped).unwrap()
}

pub fn random_neighbors<R: Rng>(rng: &mut R, n: usize, k: usize) -> NeighborIndex {
    let k = k.min(n - 1);
    let lists = (0..n)
        .map(|i| {
            let mut l: Vec<usize> = sample(rng, n - 1, k).into_iter().map(|j| if j >= i { j + 1 } else { j }).collect();
            l.sort_unstable();
            l
        })
        .collect();
    NeighborIndex::from_lists(k, lists).unwrap()
}

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
}

/// Normalized co-occurrence graph of a random full label matrix.
pub fn random_graph<R: Rng>(rng: &mut R, c: usize) -> CoOccurrenceGraph<f64> {
    let n_val = rng.random_range(3..10);
    let val = random_full(rng, n_val, c, 0.4);
    lepl::label_graph::normalize(lepl::label_graph::cooccurrence(&val))
}

pub fn random_gcn<R: Rng>(rng: &mut R, c: usize, d: usize) -> (CoOccurrenceGraph<f64>, LabelEmbeddings<f64>, GcnParameters<f64>) {
    let de = rng.random_range(2..5);
    let hidden = rng.random_range(2..5);
    let graph = random_graph(rng, c);
    let emb = LabelEmbeddings::new(random_matrix(rng, c, de)).unwrap();
    let params = GcnParameters::new(random_matrix(rng, de, hidden), random_matrix(rng, hidden, d));
    (graph, emb, params)
}

/// Largest relative error `|a - f| / max(|a|, |f|, floor)` over entries.
pub fn max_rel_err(analytic: &Array2<f64>, numeric: &Array2<f64>, floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(&a, &f)| (a - f).abs() / a.abs().max(f.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central differences of `f` with respect to every entry of `x`.
pub fn numeric_grad(x: &Array2<f64>, h: f64, mut f: impl FnMut(&Array2<f64>) -> f64) -> Array2<f64> {
    let mut g = Array2::zeros(x.dim());
    let mut probe = x.clone();
    for idx in ndarray::indices(x.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + h;
        let up = f(&probe);
        probe[idx] = orig - h;
        let down = f(&probe);
        probe[idx] = orig;
        g[idx] = (up - down) / (2.0 * h);
    }
    g
}

/// Sample-complexity bound written out directly from its definition.
pub fn oracle_n0(xi: f64, d_h: f64, eps: f64, delta: f64, c: f64) -> f64 {
    let theta = c * (2.0 / (1.0 + xi)).ln();
    let inner = d_h * ((4.0 * d_h).ln() + 2.0 * c * c.ln() + (1.0 / (theta * eps)).ln()) + (1.0 / delta).ln() + 1.0;
    4.0 / (theta * eps) * inner
}

pub fn row_sums(a: &Array2<f64>) -> Array1<f64> {
    a.sum_axis(ndarray::Axis(1))
}

pub const FD_STEP: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-4;
// Relative error is measured against max(|analytic|, |numeric|, FD_FLOOR) so
// entries that are zero up to rounding do not blow up the ratio.
pub const FD_FLOOR: f64 = 1e-7;

/// Worst relative error of the enhancement-loss gradient on one random case
/// (n <= 12, C <= 5).
pub fn le_gradient_error<R: Rng>(rng: &mut R) -> (f64, String) {
    let n = rng.random_range(3..=12);
    let c = rng.random_range(2..=5);
    let k = rng.random_range(1..n);
    let tau = rng.random_range(0.2..2.0);
    let partial = random_partial(rng, n, c);
    let soft = random_soft(rng, &partial);
    let nbr = random_neighbors(rng, n, k);
    let analytic = le_grad(&soft, &nbr, tau).unwrap();
    let clamped = soft.clamped_mask().to_owned();
    let mut numeric = numeric_grad(&soft.logits().to_owned(), FD_STEP, |logits| {
        let d = SoftLabelMatrix::from_logits(logits.clone(), clamped.clone()).unwrap();
        le_loss(&d, &nbr, tau).unwrap()
    });
    // Clamped logits are constants, not parameters.
    numeric.zip_mut_with(&clamped, |g, &m| {
        if m {
            *g = 0.0
        }
    });
    (max_rel_err(&analytic, &numeric, FD_FLOOR), format!("n={n} C={c} K={k} tau={tau:.3}"))
}

fn composite_loss(
    graph: &CoOccurrenceGraph<f64>,
    emb: &Array2<f64>,
    w0: &Array2<f64>,
    w1: &Array2<f64>,
    x: &FeatureMatrix<f64>,
    y: &Array2<f64>,
) -> f64 {
    let clf = Classifier::gcn(
        graph.clone(),
        LabelEmbeddings::new(emb.clone()).unwrap(),
        GcnParameters::new(w0.clone(), w1.clone()),
    )
    .unwrap();
    loss_and_upstream(&clf, x, y.view()).unwrap().0
}

/// Worst relative error over `W0`, `W1` and `E` of the BCE-through-GCN
/// gradient on one random case (n <= 12, C <= 5, d <= 8).
pub fn gcn_gradient_error<R: Rng>(rng: &mut R) -> (f64, String) {
    let n = rng.random_range(2..=12);
    let c = rng.random_range(2..=5);
    let d = rng.random_range(1..=8);
    let (graph, emb, params) = random_gcn(rng, c, d);
    let x = FeatureMatrix::new(random_matrix(rng, n, d)).unwrap();
    let y = random_truth(rng, n, c, 0.4).mapv(f64::from);
    let (e, w0, w1) = (emb.matrix().to_owned(), params.w0().to_owned(), params.w1().to_owned());

    let clf = Classifier::gcn(graph.clone(), emb.clone(), params).unwrap();
    let (_, upstream) = loss_and_upstream(&clf, &x, y.view()).unwrap();
    let Classifier::Gcn { params, .. } = &clf else { unreachable!() };
    let grads = gcn_backward(&graph, &emb, params, upstream.view()).unwrap();

    let num_w0 = numeric_grad(&w0, FD_STEP, |p| composite_loss(&graph, &e, p, &w1, &x, &y));
    let num_w1 = numeric_grad(&w1, FD_STEP, |p| composite_loss(&graph, &e, &w0, p, &x, &y));
    let num_e = numeric_grad(&e, FD_STEP, |p| composite_loss(&graph, p, &w0, &w1, &x, &y));
    let err = max_rel_err(&grads.w0, &num_w0, FD_FLOOR)
        .max(max_rel_err(&grads.w1, &num_w1, FD_FLOOR))
        .max(max_rel_err(&grads.embeddings, &num_e, FD_FLOOR));
    (err, format!("n={n} C={c} d={d}"))
}

/// Compares all five metrics with the brute-force versions; exact equality.
pub fn metrics_agree(scores: &Array2<f64>, truth: &Array2<u8>) -> Result<(), String> {
    let (s, t) = (scores.view(), truth.view());
    let pairs = [
        ("mAP", mean_average_precision(s, t).ok(), oracle_map(scores, truth)),
        ("LRL", label_ranking_loss(s, t).ok(), oracle_lrl(scores, truth)),
        ("CE", coverage_error(s, t).ok(), oracle_coverage(scores, truth)),
        ("OE", one_error(s, t).ok(), oracle_one_error(scores, truth)),
        ("Hamming", hamming_risk::<f64>(binarize(s).view(), t).ok(), Some(oracle_hamming(scores, truth))),
    ];
    for (name, got, want) in pairs {
        if got != want {
            return Err(format!("{name}: {got:?} vs oracle {want:?}"));
        }
    }
    Ok(())
}
