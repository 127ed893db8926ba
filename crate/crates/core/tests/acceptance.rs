//! Acceptance runner: one PASS/FAIL line per criterion, non-zero exit if any
//! criterion fails. An optional argument filters criteria by substring.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use common::*;
use lepl::data::{synth_generate, LabelKind, SynthConfig};
use lepl::label_enhancement::{enhance, init_soft_labels};
use lepl::label_graph::{normalize, CoOccurrenceGraph};
use lepl::metrics::*;
use lepl::pseudo_labeling::{estimate_priors, generate};
use lepl::theory::{compare_risks, sample_complexity, TheoryParams};
use lepl::trainer::{finish_pipeline, pseudo_from_soft, Ablation, PipelineConfig, PipelineData};
use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = fn() -> Result<String, String>;

struct Criterion {
    name: &'static str,
    budget: Duration,
    check: Check,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn gradient_correctness() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let mut worst = (0.0f64, 0.0f64);
    for case in 0..20 {
        let (err, what) = le_gradient_error(&mut rng);
        ensure(err <= FD_TOL, || format!("enhancement case {case} ({what}): rel err {err:.3e}"))?;
        worst.0 = worst.0.max(err);
    }
    for case in 0..20 {
        let (err, what) = gcn_gradient_error(&mut rng);
        ensure(err <= FD_TOL, || format!("composite case {case} ({what}): rel err {err:.3e}"))?;
        worst.1 = worst.1.max(err);
    }
    Ok(format!("20+20 cases, worst rel err {:.2e} (enhancement) / {:.2e} (BCE through GCN)", worst.0, worst.1))
}

fn metric_oracles() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let mut tied = 0;
    for case in 0..200 {
        let n = rng.random_range(1..=20);
        let c = rng.random_range(1..=8);
        let density = rng.random_range(0.05..0.8);
        let scores = random_scores(&mut rng, n, c);
        let truth = random_truth(&mut rng, n, c, density);
        let mut v: Vec<f64> = scores.iter().copied().collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        tied += usize::from(v.len() < scores.len());
        metrics_agree(&scores, &truth).map_err(|e| format!("case {case}: {e}"))?;
    }
    Ok(format!("200 cases ({tied} with tied scores), all five metrics equal"))
}

fn metric_trivia() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1003);
    for case in 0..100 {
        let n = rng.random_range(1..=20);
        let c = rng.random_range(2..=8);
        let truth = random_full(&mut rng, n, c, 0.3).values().to_owned();
        let pred = truth.mapv(f64::from);
        let (p, t) = (pred.view(), truth.view());
        let card = truth.sum_axis(Axis(1)).iter().map(|&v| v as usize).sum::<usize>() as f64 / n as f64;
        ensure(mean_average_precision(p, t) == Ok(1.0), || format!("case {case}: mAP"))?;
        if let Ok(v) = label_ranking_loss(p, t) {
            ensure(v == 0.0, || format!("case {case}: LRL {v}"))?;
        }
        ensure(one_error(p, t) == Ok(0.0), || format!("case {case}: OE"))?;
        ensure(coverage_error(p, t) == Ok(card), || format!("case {case}: CE vs mean cardinality {card}"))?;
    }
    Ok("100 perfect predictors: mAP=1, LRL=0, OE=0, CE=mean|Y_i| exactly".into())
}

fn pseudo_label_contract() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(1004);
    for case in 0..100 {
        let n = rng.random_range(2..=50);
        let c = rng.random_range(1..=8);
        let partial = random_partial(&mut rng, n, c);
        let soft = random_soft(&mut rng, &partial);
        let (n_val, density) = (rng.random_range(1..=30), rng.random_range(0.05..0.9));
        let val = random_full(&mut rng, n_val, c, density);
        let priors = estimate_priors::<f64>(&val, n).map_err(|e| e.to_string())?;
        let pseudo = generate(&soft, &priors, &partial).map_err(|e| e.to_string())?;
        let observed = partial.class_counts();
        for class in 0..c {
            let count = pseudo.values().column(class).iter().filter(|&&v| v == 1).count();
            let want = priors.k_per_class[class].max(observed[class]);
            ensure(count == want, || format!("case {case} class {class}: {count} positives, want {want}"))?;
        }
        for ((i, j), &v) in partial.values().indexed_iter() {
            ensure(v == 0 || pseudo.values()[[i, j]] == 1, || format!("case {case}: observed ({i},{j}) dropped"))?;
        }
    }
    Ok("100 random triples: counts = max(K_c, observed_c), observed positives kept".into())
}

fn normalization_laws() -> Result<String, String> {
    let a_hat = |a: Array2<f64>| -> Array2<f64> {
        normalize(CoOccurrenceGraph::from_matrix(a).unwrap()).a_hat().unwrap().to_owned()
    };
    let diff = |a: &Array2<f64>, b: &Array2<f64>| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    for c in 1..=10 {
        ensure(a_hat(Array2::eye(c)) == Array2::<f64>::eye(c), || format!("normalize(I_{c}) != I_{c}"))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1005);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let c = rng.random_range(1..=10);
        let a = random_graph(&mut rng, c).a().to_owned();
        let base = a_hat(a.clone());
        let asym = diff(&base, &base.t().to_owned());
        ensure(asym <= 1e-12, || format!("case {case}: asymmetry {asym:e}"))?;
        for s in [0.1, 3.0, 100.0] {
            let d = diff(&base, &a_hat(a.mapv(|v| v * s)));
            ensure(d <= 1e-12, || format!("case {case}: scale {s} moved A_hat by {d:e}"))?;
            worst = worst.max(d);
        }
    }
    Ok(format!("identity fixed, 100 random graphs scale-free (worst {worst:.1e}) and symmetric"))
}

fn n0_grid() -> Result<String, String> {
    let xis = [0.0, 0.3, 0.6];
    let epss = [0.05, 0.1, 0.2];
    let deltas = [0.01, 0.05, 0.1];
    let n0 = |xi: f64, eps: f64, delta: f64| -> Result<f64, String> {
        let p = TheoryParams::new(xi, 10, eps, delta, 5).map_err(|e| e.to_string())?;
        sample_complexity(&p).map_err(|e| e.to_string())
    };
    let mut worst = 0.0f64;
    for &xi in &xis {
        for &eps in &epss {
            for &delta in &deltas {
                let got = n0(xi, eps, delta)?;
                let want = oracle_n0(xi, 10.0, eps, delta, 5.0);
                let rel = ((got - want) / want).abs();
                ensure(rel <= 1e-12, || format!("({xi},{eps},{delta}): {got} vs {want}"))?;
                worst = worst.max(rel);
            }
        }
    }
    for &eps in &epss {
        for &delta in &deltas {
            let v: Vec<f64> = xis.iter().map(|&xi| n0(xi, eps, delta)).collect::<Result<_, _>>()?;
            ensure(v.windows(2).all(|w| w[0] < w[1]), || format!("not increasing in xi: {v:?}"))?;
        }
    }
    for &xi in &xis {
        for &delta in &deltas {
            let v: Vec<f64> = epss.iter().map(|&e| n0(xi, e, delta)).collect::<Result<_, _>>()?;
            ensure(v.windows(2).all(|w| w[0] > w[1]), || format!("not decreasing in eps: {v:?}"))?;
        }
        for &eps in &epss {
            let v: Vec<f64> = deltas.iter().map(|&d| n0(xi, eps, d)).collect::<Result<_, _>>()?;
            ensure(v.windows(2).all(|w| w[0] > w[1]), || format!("not decreasing in delta: {v:?}"))?;
        }
    }
    let reference = n0(0.0, 0.1, 0.05)?;
    Ok(format!("27 points, worst rel err {worst:.1e}, monotone; n0(0, 0.1, 0.05) = {reference:.1}"))
}

fn risk_ordering() -> Result<String, String> {
    let synth = SynthConfig::default();
    let seeds: Vec<u64> = (0..10).collect();
    let r = compare_risks::<f64>(&synth, &PipelineConfig::default(), &seeds).map_err(|e| e.to_string())?;
    for o in r.outcomes() {
        println!(
            "      seed {}: risk {:.4} vs {:.4}, xi {:.4} vs {:.4}",
            o.seed, o.risk_pseudo, o.risk_single, o.xi_pseudo, o.xi_single
        );
    }
    let summary = format!(
        "wins {}/10, mean risk {:.4} (pseudo) vs {:.4} (single)",
        r.wins_pseudo,
        r.mean_pseudo(),
        r.mean_single()
    );
    ensure(r.wins_pseudo >= 8, || summary.clone())?;
    ensure(r.mean_pseudo() < r.mean_single(), || summary.clone())?;
    for o in r.outcomes() {
        if o.risk_pseudo < o.risk_single {
            ensure(o.xi_pseudo <= o.xi_single, || {
                format!("{summary}; seed {} wins with xi {:.4} > {:.4}", o.seed, o.xi_pseudo, o.xi_single)
            })?;
        }
    }
    Ok(summary + ", unreliability no worse in every winning seed")
}

fn ablation_monotonicity() -> Result<String, String> {
    let mut monotone = 0;
    let mut full_beats_base = 0;
    let mut means = [0.0f64; 4];
    for seed in 0..10u64 {
        let data = synth_generate::<f64>(&SynthConfig { seed, ..SynthConfig::default() }).map_err(|e| e.to_string())?;
        let pd = PipelineData {
            train_x: &data.train_x,
            train_partial: &data.train_partial,
            val_x: &data.val_x,
            val_full: &data.val_labels,
            test_x: &data.test_x,
            test_full: &data.test_labels,
            embeddings: None,
        };
        let mut cfg = PipelineConfig::default();
        cfg.train.seed = seed;
        let enhanced = enhance(pd.train_x, pd.train_partial, &cfg.le).map_err(|e| e.to_string())?;
        let bg = 1.0 / data.train_partial.classes() as f64;
        let plain = init_soft_labels(pd.train_partial, bg).map_err(|e| e.to_string())?;
        let mut maps = [0.0f64; 4];
        for (slot, ablation) in Ablation::LADDER.iter().enumerate() {
            cfg.train.ablation = *ablation;
            let soft = if ablation.enhancement { enhanced.clone() } else { plain.clone() };
            let pseudo = pseudo_from_soft(&pd, &soft, *ablation).map_err(|e| e.to_string())?;
            let out = finish_pipeline(&pd, &cfg, soft, pseudo).map_err(|e| e.to_string())?;
            maps[slot] = out.report.map;
            means[slot] += out.report.map / 10.0;
        }
        let ok = maps.windows(2).all(|w| w[0] <= w[1]);
        monotone += usize::from(ok);
        full_beats_base += usize::from(maps[3] >= maps[0]);
        println!(
            "      seed {seed}: mAP {:.4} <= {:.4} <= {:.4} <= {:.4} {}",
            maps[0],
            maps[1],
            maps[2],
            maps[3],
            if ok { "" } else { "(not monotone)" }
        );
    }
    let summary = format!(
        "monotone in {monotone}/10 seeds; mean mAP {:.4} / {:.4} / {:.4} / {:.4}; full >= base in {full_beats_base}/10",
        means[0], means[1], means[2], means[3]
    );
    ensure(monotone >= 7, || summary.clone())?;
    Ok(summary)
}

fn pipeline_determinism() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let dir = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();
    let run = |args: &[&str]| -> Result<(), String> {
        let out = Command::new(env!("CARGO_BIN_EXE_lepl")).args(args).output().map_err(|e| e.to_string())?;
        ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    };
    run(&["synth", "--out-dir", &dir("data"), "--seed", "3"])?;
    run(&["pipeline", "--data-dir", &dir("data"), "--out-dir", &dir("a"), "--seed", "3"])?;
    run(&["pipeline", "--data-dir", &dir("data"), "--out-dir", &dir("b"), "--seed", "3"])?;
    for f in ["predictions.txt", "report.txt", "report.json"] {
        let a = std::fs::read(tmp.path().join("a").join(f)).map_err(|e| e.to_string())?;
        let b = std::fs::read(tmp.path().join("b").join(f)).map_err(|e| e.to_string())?;
        ensure(a == b, || format!("{f} differs between reruns"))?;
    }
    let labels = lepl::data::load_labels(&tmp.path().join("data").join("test.labels"), LabelKind::Full)
        .map_err(|e| e.to_string())?;
    Ok(format!("two default pipeline runs on {} test rows: predictions and reports byte-identical", labels.n()))
}

fn main() -> ExitCode {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria = [
        Criterion { name: "gradient-correctness", budget: Duration::from_secs(60), check: gradient_correctness },
        Criterion { name: "metric-oracle-equivalence", budget: Duration::from_secs(30), check: metric_oracles },
        Criterion { name: "metric-trivia", budget: Duration::MAX, check: metric_trivia },
        Criterion { name: "pseudo-label-contract", budget: Duration::MAX, check: pseudo_label_contract },
        Criterion { name: "normalization-laws", budget: Duration::MAX, check: normalization_laws },
        Criterion { name: "sample-complexity-grid", budget: Duration::MAX, check: n0_grid },
        Criterion { name: "pseudo-vs-single-risk-ordering", budget: Duration::from_secs(300), check: risk_ordering },
        Criterion { name: "ablation-monotonicity", budget: Duration::from_secs(600), check: ablation_monotonicity },
        Criterion { name: "pipeline-determinism", budget: Duration::MAX, check: pipeline_determinism },
    ];
    let mut failed = 0;
    let mut ran = 0;
    for c in criteria.iter().filter(|c| filter.as_deref().is_none_or(|f| c.name.contains(f))) {
        ran += 1;
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(c.check)).unwrap_or_else(|p| {
            let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let elapsed = start.elapsed();
        let result = result.and_then(|detail| {
            if elapsed > c.budget {
                Err(format!("{detail}; took {elapsed:.1?}, budget {:?}", c.budget))
            } else {
                Ok(detail)
            }
        });
        match result {
            Ok(detail) => println!("PASS {} ({elapsed:.1?}): {detail}", c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL {} ({elapsed:.1?}): {why}", c.name);
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
