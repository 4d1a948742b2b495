mod common;

use common::{example, pairwise_auroc, task};
use ecglab::cohort::{Direction, TaskDataset};
use ecglab::eval::{
    auroc, bootstrap_ci, build_report_table, downsample_train_group, macro_auroc, subgroup_eval, AgeBin,
    BootstrapConfig, Category, EvalError, EvalReport, Group, REPORT_HEADER,
};
use ecglab::gbdt::{Stump, StumpEnsemble};
use ecglab::ingest::{Gender, Race};
use ecglab::synth::binormal_scores;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scores on a coarse grid so ties are common.
fn tied_instance(seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=200);
    let levels = rng.gen_range(1..=20);
    let mut labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
    labels[0] = true;
    labels[1] = false;
    let scores = (0..n).map(|_| rng.gen_range(0..levels) as f64 / 4.0).collect();
    (scores, labels)
}

#[test]
fn spec_examples() {
    assert_eq!(auroc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
    assert_eq!(auroc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
    let s = [0.2, 0.4, 0.6, 0.8];
    let y = [false, true, false, true];
    assert_eq!(auroc(&s, &y).unwrap(), pairwise_auroc(&s, &y));
    assert_eq!(auroc(&s, &y).unwrap(), 0.75);
    assert!(matches!(auroc(&[1.0, 2.0], &[true, true]), Err(EvalError::SingleClass)));
}

#[test]
fn matches_pairwise_oracle_on_random_instances() {
    for seed in 0..1000 {
        let (s, y) = tied_instance(seed);
        let fast = auroc(&s, &y).unwrap();
        assert_eq!(fast, pairwise_auroc(&s, &y), "seed {seed}");
        let flipped: Vec<bool> = y.iter().map(|l| !l).collect();
        assert_eq!(fast + auroc(&s, &flipped).unwrap(), 1.0, "seed {seed}");
    }
}

proptest! {
    #[test]
    fn invariant_under_monotone_maps(seed in any::<u64>(), a in 0.1f64..10.0, b in -5.0f64..5.0) {
        let (s, y) = tied_instance(seed);
        let base = auroc(&s, &y).unwrap();
        let affine: Vec<f64> = s.iter().map(|v| a * v + b).collect();
        let exp: Vec<f64> = s.iter().map(|v| v.exp()).collect();
        prop_assert_eq!(auroc(&affine, &y).unwrap(), base);
        prop_assert_eq!(auroc(&exp, &y).unwrap(), base);
    }

    #[test]
    fn bootstrap_endpoints_inside_sample_range(seed in any::<u64>()) {
        let (s, y) = tied_instance(seed);
        let cfg = BootstrapConfig { n_iter: 200, seed, ..BootstrapConfig::default() };
        let ci = bootstrap_ci(&s, &y, &cfg).unwrap();
        let lo = ci.samples.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = ci.samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(lo <= ci.low && ci.low <= ci.high && ci.high <= hi);
        prop_assert_eq!(ci.samples.len() + ci.skipped, 200);
    }
}

#[test]
fn bootstrap_is_deterministic_and_thread_independent() {
    let (s, y) = tied_instance(77);
    let cfg = BootstrapConfig { n_iter: 300, seed: 5, ..BootstrapConfig::default() };
    let a = bootstrap_ci(&s, &y, &cfg).unwrap();
    let b = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(|| bootstrap_ci(&s, &y, &cfg).unwrap());
    assert_eq!(a, b);
}

#[test]
fn perfect_separation_gives_degenerate_interval() {
    let s: Vec<f64> = (0..50).map(|i| i as f64).collect();
    let y: Vec<bool> = (0..50).map(|i| i >= 25).collect();
    let ci = bootstrap_ci(&s, &y, &BootstrapConfig::default()).unwrap();
    assert_eq!((ci.low, ci.high), (1.0, 1.0));
}

#[test]
fn interval_narrows_with_more_data() {
    let mut widths = [0.0; 2];
    for (k, n) in [100usize, 1000].iter().enumerate() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (s, y) = binormal_scores(n / 2, n / 2, 0.75, &mut rng);
            let ci = bootstrap_ci(&s, &y, &BootstrapConfig { n_iter: 300, seed, ..Default::default() }).unwrap();
            widths[k] += ci.high - ci.low;
        }
    }
    assert!(widths[1] < widths[0], "{widths:?}");
}

#[test]
fn rare_positive_resamples_and_bad_config() {
    // A single positive among 400 is missed by ~37% of draws; the redraws
    // recover every iteration.
    let s: Vec<f64> = (0..400).map(|i| i as f64).collect();
    let mut y = vec![false; 400];
    y[0] = true;
    let cfg = BootstrapConfig { n_iter: 50, ..Default::default() };
    let r = bootstrap_ci(&s, &y, &cfg).unwrap();
    assert_eq!(r.skipped, 0);
    let s2 = vec![1.0; 2];
    let y2 = vec![true, false];
    assert!(bootstrap_ci(&s2, &y2, &BootstrapConfig { n_iter: 0, ..Default::default() }).is_err());
}

fn report(analyte: &str, dir: Direction, auroc: f64) -> EvalReport {
    EvalReport {
        task: task(analyte, dir, 1.0),
        n_samples: 100,
        n_positive: 10,
        auroc,
        ci_low: auroc - 0.01,
        ci_high: auroc + 0.01,
        bootstrap_n: 1000,
        bootstrap_skipped: 0,
        seed: 0,
    }
}

#[test]
fn macro_average() {
    let r = [report("a", Direction::Low, 0.8), report("b", Direction::Low, 0.6)];
    assert!((macro_auroc(&r).unwrap() - 0.7).abs() < 1e-15);
    assert_eq!(macro_auroc(&r[..1]).unwrap(), 0.8);
    assert!(matches!(macro_auroc(&[]), Err(EvalError::EmptyInput)));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let many: Vec<EvalReport> =
        (0..26).map(|i| report(&format!("t{i}"), Direction::High, rng.gen_range(0.5..1.0))).collect();
    let direct = many.iter().map(|r| r.auroc).sum::<f64>() / 26.0;
    assert_eq!(macro_auroc(&many).unwrap(), direct);
}

#[test]
fn report_table_filters_and_orders() {
    let r = [
        report("Low", Direction::Low, 0.699),
        report("Ck", Direction::High, 0.775),
        report("Urea", Direction::High, 0.856),
        report("Edge", Direction::Low, 0.701),
        report("Tn", Direction::High, 0.848),
        report("Floor", Direction::High, 0.70),
    ];
    let t = build_report_table(&r, 0.70);
    let order: Vec<f64> = t.rows.iter().map(|r| r.auroc_value).collect();
    assert_eq!(order, vec![0.856, 0.848, 0.775, 0.701]);
    let empty = build_report_table(&[], 0.70);
    assert!(empty.rows.is_empty());
    let text = empty.render();
    for h in REPORT_HEADER {
        assert!(text.contains(h));
    }
}

fn stump_on_age() -> StumpEnsemble {
    StumpEnsemble {
        base_score: 0.0,
        learning_rate: 1.0,
        stumps: vec![Stump {
            feature_index: 9,
            threshold: 60.0,
            missing_goes_left: true,
            left_value: -1.0,
            right_value: 1.0,
        }],
        feature_names: ecglab::cohort::FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        training_config: String::new(),
        training_config_digest: String::new(),
    }
}

fn demographic_test_set(n: usize, seed: u64, male_only: bool) -> TaskDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ex = (0..n)
        .map(|i| {
            let age = rng.gen_range(18..100) as f64;
            example(
                &format!("R{i:05}"),
                &format!("S{i:05}"),
                age,
                male_only || rng.gen_bool(0.5),
                Some(rng.gen_range(0..5)).filter(|&k| k < 4),
                rng.gen_bool(if age >= 60.0 { 0.7 } else { 0.3 }),
            )
        })
        .collect();
    TaskDataset::new(task("X", Direction::High, 1.0), ex)
}

#[test]
fn age_bins_follow_table_labels() {
    assert_eq!(AgeBin::of(49.0).label(), "18-49yo.");
    assert_eq!(AgeBin::of(50.0).label(), "50-64yo.");
    assert_eq!(AgeBin::of(64.0).label(), "50-64yo.");
    assert_eq!(AgeBin::of(65.0).label(), "65-77yo.");
    assert_eq!(AgeBin::of(77.0).label(), "65-77yo.");
    assert_eq!(AgeBin::of(78.0).label(), ">=78yo.");
    let races: Vec<&str> = Category::Race.groups().iter().map(|g| g.label()).collect();
    assert_eq!(races, ["Caucasians", "Africans", "Asians", "Latinos", "Other"]);
}

#[test]
fn subgroups_partition_the_test_set() {
    let test = demographic_test_set(600, 1, false);
    let cfg = BootstrapConfig { n_iter: 100, ..Default::default() };
    for cat in [Category::Gender, Category::Race, Category::Age] {
        let reports = subgroup_eval(&stump_on_age(), &test, cat, &cfg).unwrap();
        assert_eq!(reports.iter().map(|r| r.n_samples).sum::<usize>(), test.len());
        assert_eq!(reports.len(), cat.groups().len());
    }
}

#[test]
fn single_gender_fold_flags_the_other_group() {
    let test = demographic_test_set(200, 2, true);
    let cfg = BootstrapConfig { n_iter: 100, ..Default::default() };
    let reports = subgroup_eval(&stump_on_age(), &test, Category::Gender, &cfg).unwrap();
    let male = reports.iter().find(|r| r.group == Group::Gender(Gender::Male)).unwrap();
    let female = reports.iter().find(|r| r.group == Group::Gender(Gender::Female)).unwrap();
    assert!(male.auroc.is_some() && male.flag.is_none());
    assert!(female.auroc.is_none() && female.flag.is_some());
}

#[test]
fn downsampling_hits_the_target_count() {
    let train = demographic_test_set(3000, 4, false);
    let cau = Group::Race(Race::Caucasian);
    let asian = Group::Race(Race::Asian);
    let count = |ds: &TaskDataset, g: Group| ds.examples.iter().filter(|e| g.contains(e)).count();
    let out = downsample_train_group(&train, cau, asian, 7).unwrap();
    assert_eq!(count(&out, cau), count(&train, asian));
    for g in [Group::Race(Race::African), Group::Race(Race::Latino), Group::Race(Race::Other), asian] {
        assert_eq!(count(&out, g), count(&train, g));
    }
    let same = downsample_train_group(&train, cau, cau, 7).unwrap();
    assert_eq!(same.len(), train.len());
    let again = downsample_train_group(&train, cau, asian, 7).unwrap();
    assert_eq!(again, out);

    let no_asians = train.with_examples(train.examples.iter().filter(|e| !asian.contains(e)).cloned().collect());
    assert!(matches!(downsample_train_group(&no_asians, cau, asian, 1), Err(EvalError::EmptyTargetGroup)));
    assert!(matches!(
        downsample_train_group(&train, asian, cau, 1),
        Err(EvalError::TargetLargerThanSource { .. })
    ));
}
