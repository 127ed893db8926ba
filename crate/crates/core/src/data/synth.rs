//! Prototype-mixture generator for single-positive multi-label data.

use ndarray::{Array1, Array2};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{DataError, FeatureMatrix, LabelKind, LabelMatrix};
use crate::rng::stage_rng;
use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub classes: usize,
    pub dim: usize,
    /// Upper bound on true positives per instance.
    pub max_active: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_train: 2000,
            n_val: 500,
            n_test: 500,
            classes: 10,
            dim: 16,
            max_active: 3,
            noise_sigma: 0.3,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |msg: &str| Err(DataError::Config(msg.to_string()));
        if self.n_train == 0 || self.n_val == 0 || self.n_test == 0 {
            return bad("split sizes must be at least 1");
        }
        if self.classes == 0 || self.dim == 0 {
            return bad("classes and dim must be at least 1");
        }
        if self.max_active == 0 || self.max_active > self.classes {
            return bad("max_active must lie in 1..=classes");
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad("noise_sigma must be finite and non-negative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData<T> {
    pub prototypes: Array2<T>,
    pub train_x: FeatureMatrix<T>,
    pub train_partial: LabelMatrix,
    /// Complete labels of the training split, never shown to the learner.
    pub train_true: LabelMatrix,
    pub val_x: FeatureMatrix<T>,
    pub val_labels: LabelMatrix,
    pub test_x: FeatureMatrix<T>,
    pub test_labels: LabelMatrix,
}

fn cosine(a: &Array1<f64>, b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.dot(a).sqrt();
    let nb = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

struct Split {
    x: Array2<f64>,
    full: Array2<u8>,
    salient: Vec<usize>,
}

fn draw_split<R: Rng>(rng: &mut R, cfg: &SynthConfig, protos: &Array2<f64>, n: usize) -> Split {
    let (c, d) = (cfg.classes, cfg.dim);
    let mut x = Array2::zeros((n, d));
    let mut full = Array2::zeros((n, c));
    let mut salient = Vec::with_capacity(n);
    for i in 0..n {
        let k = rng.random_range(1..=cfg.max_active);
        let mut active = index::sample(rng, c, k).into_vec();
        active.sort_unstable();
        let mut feat = Array1::<f64>::zeros(d);
        for &a in &active {
            feat += &protos.row(a);
            full[[i, a]] = 1;
        }
        feat /= k as f64;
        for v in feat.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += cfg.noise_sigma * z;
        }
        // Most salient = active class whose prototype is closest in angle;
        // ties go to the lower index because `active` is sorted.
        let mut best = active[0];
        let mut best_sim = f64::NEG_INFINITY;
        for &a in &active {
            let s = cosine(&feat, protos.row(a).as_slice().expect("standard layout"));
            if s > best_sim {
                best_sim = s;
                best = a;
            }
        }
        salient.push(best);
        x.row_mut(i).assign(&feat);
    }
    Split { x, full, salient }
}

fn to_features<T: Scalar>(x: Array2<f64>) -> FeatureMatrix<T> {
    FeatureMatrix::new(x.mapv(T::lit)).expect("generated features are finite and non-empty")
}

/// Draws `classes` prototypes uniformly on the sphere of radius sqrt(dim),
/// then every instance as the mean of 1..=max_active prototypes plus
/// isotropic Gaussian noise. The training
/// split additionally gets a single-positive view holding its most salient
/// class. Output depends only on `cfg`.
pub fn synth_generate<T: Scalar>(cfg: &SynthConfig) -> Result<SynthData<T>, DataError> {
    cfg.validate()?;
    let mut rng = stage_rng(cfg.seed, "synth");
    let mut protos: Array2<f64> = Array2::from_shape_fn((cfg.classes, cfg.dim), |_| {
        StandardNormal.sample(&mut rng)
    });
    // Equal norms: otherwise the longest active prototype is almost always
    // the most salient one and some classes are never observed.
    let radius = (cfg.dim as f64).sqrt();
    for mut row in protos.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row *= radius / norm;
        }
    }
    let train = draw_split(&mut rng, cfg, &protos, cfg.n_train);
    let val = draw_split(&mut rng, cfg, &protos, cfg.n_val);
    let test = draw_split(&mut rng, cfg, &protos, cfg.n_test);

    let mut partial = Array2::zeros((cfg.n_train, cfg.classes));
    for (i, &s) in train.salient.iter().enumerate() {
        partial[[i, s]] = 1;
    }
    let full = |m| LabelMatrix::new(m, LabelKind::Full).expect("every instance has an active class");

    Ok(SynthData {
        prototypes: protos.mapv(T::lit),
        train_x: to_features(train.x),
        train_partial: LabelMatrix::new(partial, LabelKind::Partial)
            .expect("one salient class per instance"),
        train_true: full(train.full),
        val_x: to_features(val.x),
        val_labels: full(val.full),
        test_x: to_features(test.x),
        test_labels: full(test.full),
    })
}
