use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use statrs::distribution::{ContinuousCDF, Normal};

use qhydro::experiment::summarize;
use qhydro::model::ModelVariant;
use qhydro::scoring::{average_score, coverage, LossSpec, Period, ScoreRecord, STANDARD_LEVELS};

fn lognormal_quantile(mu: f64, sigma: f64, a: f64) -> f64 {
    let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf(a);
    (mu + sigma * z).exp()
}

// Expected score is approximated by a large sample; the true quantile should
// beat any shifted forecast.
#[test]
fn true_quantile_minimises_expected_score() {
    let (mu, sigma) = (0.5, 0.8);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let dist = LogNormal::new(mu, sigma).unwrap();
    let obs: Vec<Option<f64>> = (0..200_000).map(|_| Some(dist.sample(&mut rng))).collect();
    for a in STANDARD_LEVELS {
        let spec = LossSpec::quantile(a).unwrap();
        let q = lognormal_quantile(mu, sigma, a);
        let score = |r: f64| average_score(&vec![r; obs.len()], &obs, &spec).unwrap().0;
        let best = score(q);
        for factor in [0.7, 0.9, 0.97, 1.03, 1.1, 1.4] {
            assert!(best < score(q * factor), "a={a} factor={factor}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Mean of the pinball loss is linear in the sample, so for any two-point
    // distribution the a-quantile must do at least as well as any other constant.
    #[test]
    fn two_point_propriety(lo in 0.0f64..10.0, gap in 0.01f64..10.0, p in 0.05f64..0.95, r in -5.0f64..25.0, ai in 0usize..7) {
        let a = STANDARD_LEVELS[ai];
        let hi = lo + gap;
        let q = if p >= a { lo } else { hi };
        let spec = LossSpec::quantile(a).unwrap();
        let expected = |c: f64| p * spec.loss(c, lo) + (1.0 - p) * spec.loss(c, hi);
        prop_assert!(expected(q) <= expected(r) + 1e-12);
    }
}

// A forecaster issuing the true a-quantile on every day of every basin should
// show median coverage close to a.
#[test]
fn perfect_predictor_coverage() {
    let sigma = 0.4;
    let days = 4000;
    let models = [ModelVariant::Gr4j];
    let losses: Vec<LossSpec> = STANDARD_LEVELS.iter().map(|&a| LossSpec::quantile(a).unwrap()).collect();
    let mut records = Vec::new();
    for basin in 0..15u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + basin);
        let noise = LogNormal::new(0.0, sigma).unwrap();
        let truth: Vec<f64> = (0..days).map(|d| 1.0 + (d as f64 / 58.0).sin().abs() * 4.0).collect();
        let obs: Vec<Option<f64>> = truth.iter().map(|t| Some(t * noise.sample(&mut rng))).collect();
        for spec in &losses {
            let a = spec.level().unwrap();
            let sim: Vec<f64> = truth.iter().map(|t| t * lognormal_quantile(0.0, sigma, a)).collect();
            let (avg, n) = average_score(&sim, &obs, spec).unwrap();
            records.push(ScoreRecord {
                basin_id: format!("b{basin:02}"),
                model: "GR4J".into(),
                loss_kind: spec.kind().into(),
                level: spec.level(),
                period: Period::Validation,
                avg_score: avg,
                coverage: coverage(&sim, &obs).unwrap(),
                n_days: n,
            });
        }
    }
    let tables = summarize(&records, ModelVariant::Gr4j, &models, &losses);
    for spec in &losses {
        let cell = tables.median_coverage_of(ModelVariant::Gr4j, spec).unwrap();
        assert_eq!(cell.n_basins, 15);
        let med = cell.median.unwrap();
        let a = spec.level().unwrap();
        assert!((med - a).abs() <= 0.02, "a={a}: median coverage {med}");
    }
}
