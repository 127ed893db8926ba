mod common;

use common::*;
use lepl::data::{synth_generate, SynthConfig};
use lepl::pseudo_labeling::{estimate_priors, generate, single_label_pseudo, unreliability};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn counts_are_max_of_prior_and_observed_and_observed_are_kept() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..100 {
        let n = rng.random_range(2..=40);
        let c = rng.random_range(1..=8);
        let partial = random_partial(&mut rng, n, c);
        let soft = random_soft(&mut rng, &partial);
        let (n_val, density) = (rng.random_range(1..=30), rng.random_range(0.05..0.9));
        let val = random_full(&mut rng, n_val, c, density);
        let priors = estimate_priors::<f64>(&val, n).unwrap();
        let pseudo = generate(&soft, &priors, &partial).unwrap();
        let observed = partial.class_counts();
        for class in 0..c {
            let count = pseudo.values().column(class).iter().filter(|&&v| v == 1).count();
            assert_eq!(count, priors.k_per_class[class].max(observed[class]));
        }
        for ((i, j), &v) in partial.values().indexed_iter() {
            if v == 1 {
                assert_eq!(pseudo.values()[[i, j]], 1);
            }
        }
    }
}

#[test]
fn prior_counts_use_integer_floor() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    for _ in 0..50 {
        let (n_val, c) = (rng.random_range(1..=30), rng.random_range(1..=6));
        let n_train = rng.random_range(1..=500);
        let val = random_full(&mut rng, n_val, c, 0.4);
        let priors = estimate_priors::<f64>(&val, n_train).unwrap();
        for (class, &count) in val.class_counts().iter().enumerate() {
            assert_eq!(priors.k_per_class[class], count * n_train / n_val);
        }
    }
}

#[test]
fn single_label_unreliability_is_worst_unobserved_rate() {
    let data = synth_generate::<f64>(&SynthConfig { n_train: 400, max_active: 2, seed: 9, ..SynthConfig::default() }).unwrap();
    let (truth, partial) = (&data.train_true, &data.train_partial);
    let worst = (0..truth.classes())
        .map(|c| (0..truth.n()).filter(|&i| truth.get(i, c) && !partial.get(i, c)).count())
        .max()
        .unwrap();
    let xi: f64 = unreliability(single_label_pseudo(partial).values(), truth.values()).unwrap();
    assert_eq!(xi, worst as f64 / truth.n() as f64);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn raising_priors_never_drops_positives(seed in any::<u64>(), n in 2usize..30, c in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let partial = random_partial(&mut rng, n, c);
        let soft = random_soft(&mut rng, &partial);
        let val = random_full(&mut rng, 10, c, 0.3);
        let low = estimate_priors::<f64>(&val, n).unwrap();
        let mut high = low.clone();
        for k in high.k_per_class.iter_mut() {
            *k = (*k + rng.random_range(0..3)).min(n);
        }
        let a = generate(&soft, &low, &partial).unwrap();
        let b = generate(&soft, &high, &partial).unwrap();
        for (x, y) in a.values().iter().zip(b.values().iter()) {
            prop_assert!(x <= y);
        }
    }
}
