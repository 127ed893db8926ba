//! Sample-complexity bound for pseudo-label learning, and the paired
//! pseudo-label vs single-label risk experiment on synthetic data.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::data::{synth_generate, DataError, SynthConfig};
use crate::label_enhancement::init_soft_labels;
use crate::metrics::{binarize, hamming_risk};
use crate::pseudo_labeling::unreliability;
use crate::trainer::{
    build_targets, finish_pipeline, pseudo_from_soft, Ablation, PipelineConfig, PipelineData, TrainError,
};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// `C * ln(2 / (1 + xi))`, defined for `0 <= xi < 1`.
pub fn theta<T: Scalar>(xi: T, classes: usize) -> Result<T, TheoryError> {
    if !(xi >= T::zero() && xi < T::one()) {
        return Err(TheoryError::Param(format!("xi must lie in [0, 1), got {xi}")));
    }
    if classes == 0 {
        return Err(TheoryError::Param("class count must be at least 1".into()));
    }
    let two = T::lit(2.0);
    Ok(T::from_count(classes) * (two / (T::one() + xi)).ln())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryParams<T> {
    pub xi: T,
    /// Natarajan dimension of the hypothesis class.
    pub d_h: u64,
    pub epsilon: T,
    pub delta: T,
    pub classes: usize,
}

impl<T: Scalar> TheoryParams<T> {
    pub fn new(xi: T, d_h: u64, epsilon: T, delta: T, classes: usize) -> Result<Self, TheoryError> {
        let p = Self { xi, d_h, epsilon, delta, classes };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), TheoryError> {
        let open_unit = |v: T| v > T::zero() && v < T::one();
        if self.d_h == 0 {
            return Err(TheoryError::Param("d_H must be a positive integer".into()));
        }
        if !open_unit(self.epsilon) {
            return Err(TheoryError::Param(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if !open_unit(self.delta) {
            return Err(TheoryError::Param(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        theta(self.xi, self.classes).map(|_| ())
    }

    pub fn theta(&self) -> Result<T, TheoryError> {
        theta(self.xi, self.classes)
    }
}

/// `n0 = 4/(theta eps) * (d_H (ln(4 d_H) + 2 C ln C + ln(1/(theta eps))) + ln(1/delta) + 1)`,
/// natural logarithms throughout, not rounded.
pub fn sample_complexity<T: Scalar>(p: &TheoryParams<T>) -> Result<T, TheoryError> {
    p.validate()?;
    let th_eps = p.theta()? * p.epsilon;
    let d_h = T::lit(p.d_h as f64);
    let c = T::from_count(p.classes);
    let four = T::lit(4.0);
    let two = T::lit(2.0);
    let inner = d_h * ((four * d_h).ln() + two * c * c.ln() + th_eps.recip().ln());
    Ok(four / th_eps * (inner + p.delta.recip().ln() + T::one()))
}

/// Per-seed outcome of the paired risk experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub risk_pseudo: f64,
    pub risk_single: f64,
    pub xi_pseudo: f64,
    pub xi_single: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskComparison {
    pub seeds: Vec<u64>,
    pub risks_pseudo: Vec<f64>,
    pub risks_single: Vec<f64>,
    pub xi_pseudo: Vec<f64>,
    pub xi_single: Vec<f64>,
    /// Seeds with strictly lower pseudo-label risk.
    pub wins_pseudo: usize,
}

impl RiskComparison {
    fn from_outcomes(outcomes: &[SeedOutcome]) -> Self {
        Self {
            seeds: outcomes.iter().map(|o| o.seed).collect(),
            risks_pseudo: outcomes.iter().map(|o| o.risk_pseudo).collect(),
            risks_single: outcomes.iter().map(|o| o.risk_single).collect(),
            xi_pseudo: outcomes.iter().map(|o| o.xi_pseudo).collect(),
            xi_single: outcomes.iter().map(|o| o.xi_single).collect(),
            wins_pseudo: outcomes.iter().filter(|o| o.risk_pseudo < o.risk_single).count(),
        }
    }

    pub fn mean_pseudo(&self) -> f64 {
        mean(&self.risks_pseudo)
    }

    pub fn mean_single(&self) -> f64 {
        mean(&self.risks_single)
    }

    pub fn outcomes(&self) -> Vec<SeedOutcome> {
        (0..self.seeds.len())
            .map(|i| SeedOutcome {
                seed: self.seeds[i],
                risk_pseudo: self.risks_pseudo[i],
                risk_single: self.risks_single[i],
                xi_pseudo: self.xi_pseudo[i],
                xi_single: self.xi_single[i],
            })
            .collect()
    }

    /// Whitespace-separated per-seed table with a header row.
    pub fn render_table(&self) -> String {
        let mut s = String::from("seed risk_pseudo risk_single xi_pseudo xi_single win\n");
        for o in self.outcomes() {
            s.push_str(&format!(
                "{} {} {} {} {} {}\n",
                o.seed,
                o.risk_pseudo,
                o.risk_single,
                o.xi_pseudo,
                o.xi_single,
                u8::from(o.risk_pseudo < o.risk_single)
            ));
        }
        s
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

fn one_seed<T: Scalar>(synth: &SynthConfig, base: &PipelineConfig, seed: u64) -> Result<SeedOutcome, TheoryError> {
    let data = synth_generate::<T>(&SynthConfig { seed, ..synth.clone() })?;
    let pd = PipelineData {
        train_x: &data.train_x,
        train_partial: &data.train_partial,
        val_x: &data.val_x,
        val_full: &data.val_labels,
        test_x: &data.test_x,
        test_full: &data.test_labels,
        embeddings: None,
    };
    let mut cfg = base.clone();
    cfg.train.seed = seed;

    // Pseudo-label arm: the configured pipeline with binary pseudo-labels.
    cfg.train.ablation.prior_pseudo = true;
    let (soft, pseudo) = build_targets(&pd, &cfg)?;
    let pseudo_arm = finish_pipeline(&pd, &cfg, soft, pseudo)?;

    // Single-label arm: same classifier, unobserved labels taken as negative.
    let mut single_cfg = cfg.clone();
    single_cfg.train.ablation = Ablation { enhancement: false, prior_pseudo: false, gcn: cfg.train.ablation.gcn };
    let bg = T::lit(1.0 / data.train_partial.classes() as f64);
    let soft = init_soft_labels(&data.train_partial, bg).map_err(TrainError::from)?;
    let pseudo = pseudo_from_soft(&pd, &soft, single_cfg.train.ablation)?;
    let single_arm = finish_pipeline(&pd, &single_cfg, soft, pseudo)?;

    let truth = data.test_labels.values();
    let risk = |p: &crate::trainer::PredictionMatrix<T>| -> Result<f64, TheoryError> {
        let r: f64 = hamming_risk(binarize(p.values()).view(), truth).map_err(TrainError::from)?;
        Ok(r)
    };
    let xi = |m: &crate::pseudo_labeling::PseudoLabelMatrix| -> Result<f64, TheoryError> {
        unreliability::<f64>(m.values(), data.train_true.values())
            .map_err(|e| TheoryError::Train(TrainError::from(e)))
    };
    Ok(SeedOutcome {
        seed,
        risk_pseudo: risk(&pseudo_arm.predictions)?,
        risk_single: risk(&single_arm.predictions)?,
        xi_pseudo: xi(&pseudo_arm.pseudo)?,
        xi_single: xi(&single_arm.pseudo)?,
    })
}

/// Runs both arms on a fresh synthetic draw for every seed (seeds run in
/// parallel, each internally sequential).
pub fn compare_risks<T: Scalar>(
    synth: &SynthConfig,
    pipeline: &PipelineConfig,
    seeds: &[u64],
) -> Result<RiskComparison, TheoryError> {
    synth.validate()?;
    let outcomes: Result<Vec<SeedOutcome>, TheoryError> =
        seeds.par_iter().map(|&s| one_seed::<T>(synth, pipeline, s)).collect();
    Ok(RiskComparison::from_outcomes(&outcomes?))
}
