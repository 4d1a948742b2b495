mod common;

use common::{coalition_shapley, feature_dataset, random_model, random_row};
use ecglab::cohort::{TaskDataset, NUM_FEATURES};
use ecglab::explain::{sample_background, shap_values, ExplainError, Explainer};
use ecglab::gbdt::{train, Stump, TrainConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn matches_coalition_oracle(
        seed in any::<u64>(),
        n_split in 1usize..=4,
        n_stumps in 1usize..=12,
        n_bg in 1usize..=16,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pool: Vec<usize> = (0..NUM_FEATURES).collect();
        for i in 0..n_split {
            let j = rng.gen_range(i..NUM_FEATURES);
            pool.swap(i, j);
        }
        let used = &pool[..n_split];
        let lr = rng.gen_range(0.05..1.0);
        let m = random_model(&mut rng, used, n_stumps, lr);
        let bg: Vec<Vec<Option<f64>>> = (0..n_bg).map(|_| random_row(&mut rng, 0.2)).collect();
        let explainer = Explainer::new(&m, &bg).unwrap();
        // One extra unused player shows the null-player property in the oracle too.
        let mut players = used.to_vec();
        players.push(pool[n_split]);
        for _ in 0..5 {
            let row = random_row(&mut rng, 0.2);
            let a = explainer.shap_values("r", &row).unwrap();
            let oracle = coalition_shapley(&m, &row, &bg, &players);
            for f in 0..NUM_FEATURES {
                prop_assert!((a.contributions[f] - oracle[f]).abs() <= 1e-9, "f={} {} vs {}", f, a.contributions[f], oracle[f]);
                if !used.contains(&f) {
                    prop_assert_eq!(a.contributions[f], 0.0);
                }
            }
            let sum: f64 = a.contributions.iter().sum();
            prop_assert!((a.base_value + sum - a.margin).abs() <= 1e-9);
        }
    }
}

#[test]
fn single_stump_closed_form() {
    let mut m = random_model(&mut ChaCha8Rng::seed_from_u64(0), &[4], 1, 0.3);
    m.stumps[0] = Stump {
        feature_index: 4,
        threshold: 0.0,
        missing_goes_left: false,
        left_value: -2.0,
        right_value: 3.0,
    };
    let mut bg = vec![vec![None; NUM_FEATURES]; 4];
    bg[0][4] = Some(-1.0);
    bg[1][4] = Some(-0.5);
    bg[2][4] = Some(0.5);
    bg[3][4] = Some(1.0);
    let mut row = vec![None; NUM_FEATURES];
    row[4] = Some(2.0);
    let a = shap_values(&m, "r", &row, &bg).unwrap();
    let expected = 0.3 * (3.0 - (-2.0 + 3.0) / 2.0);
    assert!((a.contributions[4] - expected).abs() < 1e-15);
    assert_eq!(a.contributions.iter().filter(|&&c| c != 0.0).count(), 1);

    let mut empty = m.clone();
    empty.stumps.clear();
    let a = shap_values(&empty, "r", &row, &bg).unwrap();
    assert!(a.contributions.iter().all(|&c| c == 0.0));
    assert_eq!(a.base_value, empty.base_score);
    let none: Vec<Vec<Option<f64>>> = Vec::new();
    assert!(matches!(Explainer::new(&m, &none), Err(ExplainError::EmptyBackground)));
}

#[test]
fn efficiency_on_trained_model() {
    let ds = feature_dataset(10_000, 11, 0.4);
    let mid = 5000;
    let tr = ds.with_examples(ds.examples[..mid].to_vec());
    let va = ds.with_examples(ds.examples[mid..].to_vec());
    let m = train(&tr, &va, &TrainConfig { num_rounds: 80, ..TrainConfig::default() }).unwrap().model;
    let bg = sample_background(&tr, 1024, 3);
    let e = Explainer::new(&m, &bg).unwrap();
    let used: Vec<usize> = m.stumps.iter().map(|s| s.feature_index).collect();
    for a in e.explain_dataset(&ds).unwrap() {
        let sum: f64 = a.contributions.iter().sum();
        assert!((a.base_value + sum - a.margin).abs() <= 1e-9);
        for (f, c) in a.contributions.iter().enumerate() {
            if !used.contains(&f) {
                assert_eq!(*c, 0.0);
            }
        }
    }
    let gi = e.global_importance(&ds).unwrap();
    assert_eq!(gi.ranked_names()[0], "rr_interval");
    assert!(gi.mean_abs.iter().all(|&v| v >= 0.0));
    assert!(gi.ranking.windows(2).all(|w| gi.mean_abs[w[0]] >= gi.mean_abs[w[1]]));
}

#[test]
fn twin_features_share_credit() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut m = random_model(&mut rng, &[1], 0, 0.5);
    for (f, t) in [(1, 0.2), (2, 0.2), (1, -0.4), (2, -0.4)] {
        m.stumps.push(Stump {
            feature_index: f,
            threshold: t,
            missing_goes_left: true,
            left_value: -0.7,
            right_value: 1.1,
        });
    }
    let bg: Vec<Vec<Option<f64>>> = (0..32)
        .map(|_| {
            let mut r = random_row(&mut rng, 0.1);
            r[2] = r[1];
            r
        })
        .collect();
    let e = Explainer::new(&m, &bg).unwrap();
    for _ in 0..50 {
        let mut row = random_row(&mut rng, 0.1);
        row[2] = row[1];
        let a = e.shap_values("r", &row).unwrap();
        assert_eq!(a.contributions[1], a.contributions[2]);
    }
}

#[test]
fn importance_follows_the_only_driver() {
    // Only feature 3 carries signal.
    let mut ds = feature_dataset(3000, 21, 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for e in ds.examples.iter_mut() {
        let shift = if e.label { 0.8 } else { -0.8 };
        e.features[3] = Some(shift + rng.gen_range(-1.0..1.0));
    }
    let tr = ds.with_examples(ds.examples[..2000].to_vec());
    let va = ds.with_examples(ds.examples[2000..].to_vec());
    let m = train(&tr, &va, &TrainConfig::default()).unwrap().model;
    let e = Explainer::new(&m, &sample_background(&tr, 512, 0)).unwrap();
    let gi = e.global_importance(&va).unwrap();
    assert_eq!(gi.ranking[0], 3);
    let d = e.directionality_report(&va, "qrs_onset").unwrap();
    assert_eq!(d.bins.len(), 4);
    assert_eq!(d.trend(), 1, "{:?}", d.bins);
}

#[test]
fn directionality_edge_cases() {
    let mut m = random_model(&mut ChaCha8Rng::seed_from_u64(2), &[0], 3, 0.1);
    m.stumps[0].threshold = 0.0;
    let ds = feature_dataset(40, 3, 0.0);
    let e = Explainer::new(&m, &sample_background(&ds, 40, 0)).unwrap();

    let constant = ds.with_examples(
        ds.examples
            .iter()
            .cloned()
            .map(|mut x| {
                x.features[0] = Some(0.5);
                x
            })
            .collect(),
    );
    let d = e.directionality_report(&constant, "rr_interval").unwrap();
    assert_eq!(d.bins.len(), 1);
    assert!(d.bins[0].mean_contribution.is_finite());

    let missing: TaskDataset = ds.with_examples(
        ds.examples
            .iter()
            .cloned()
            .map(|mut x| {
                x.features[0] = None;
                x
            })
            .collect(),
    );
    assert!(matches!(
        e.directionality_report(&missing, "rr_interval"),
        Err(ExplainError::InsufficientData { .. })
    ));
    assert!(matches!(e.directionality_report(&ds, "nope"), Err(ExplainError::UnknownFeature(_))));
}
