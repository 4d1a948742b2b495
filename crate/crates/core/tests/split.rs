mod common;

use std::collections::BTreeMap;

use common::{example, task};
use ecglab::cohort::{Direction, LabeledExample, TaskDataset};
use ecglab::ingest::Gender;
use ecglab::split::{
    apply_assignment, read_assignment, stratified_group_split, write_assignment, Fold, FoldAssignment, SplitError,
    DEFAULT_RATIO,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n_subjects` subjects with 1 to 3 ECGs each and uniform demographics.
fn cohort(n_subjects: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for s in 0..n_subjects {
        let age: f64 = rng.gen_range(18.0..95.0);
        let male = rng.gen_bool(0.5);
        let race = Some(rng.gen_range(0..5)).filter(|&k| k < 4);
        for k in 0..rng.gen_range(1..=3) {
            out.push(example(&format!("R{s:05}_{k}"), &format!("S{s:05}"), age + k as f64, male, race, rng.gen_bool(0.3)));
        }
    }
    out
}

#[test]
fn proportions_and_gender_balance() {
    let ex = cohort(2000, 1);
    let a = stratified_group_split(&ex, 7, DEFAULT_RATIO).unwrap();
    assert_eq!(a.len(), 2000);
    let subjects = a.subject_counts();
    for (got, want) in subjects.iter().zip([1800.0, 100.0, 100.0]) {
        assert!((*got as f64 - want).abs() <= 0.02 * 2000.0, "{subjects:?}");
    }

    let mut per_fold = [0usize; 3];
    let mut male = [0usize; 3];
    for e in &ex {
        let f = a.fold_of(&e.subject_id).unwrap().index();
        per_fold[f] += 1;
        male[f] += usize::from(e.gender() == Gender::Male);
    }
    let total = ex.len() as f64;
    for (f, want) in [0.90, 0.05, 0.05].iter().enumerate() {
        assert!((per_fold[f] as f64 / total - want).abs() <= 0.02, "{per_fold:?}");
    }
    let overall = male.iter().sum::<usize>() as f64 / total;
    for f in 0..3 {
        let share = male[f] as f64 / per_fold[f] as f64;
        assert!((share - overall).abs() <= 0.03, "fold {f}: {share} vs {overall}");
    }
}

#[test]
fn deterministic_and_permutation_invariant() {
    let ex = cohort(500, 2);
    let a = stratified_group_split(&ex, 11, DEFAULT_RATIO).unwrap();
    assert_eq!(stratified_group_split(&ex, 11, DEFAULT_RATIO).unwrap(), a);
    let mut shuffled = ex.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
    assert_eq!(stratified_group_split(&shuffled, 11, DEFAULT_RATIO).unwrap(), a);
    assert_ne!(stratified_group_split(&ex, 12, DEFAULT_RATIO).unwrap(), a);
}

#[test]
fn subjects_never_span_folds() {
    let mut ex = cohort(100, 3);
    ex.push(example("T1", "TWIN", 64.0, true, None, false));
    ex.push(example("T2", "TWIN", 66.0, true, None, true));
    let a = stratified_group_split(&ex, 5, DEFAULT_RATIO).unwrap();
    let ds = TaskDataset::new(task("A", Direction::High, 1.0), ex.clone());
    let parts = apply_assignment(&ds, &a).unwrap();
    let twin: Vec<usize> = (0..3).filter(|&f| parts[f].examples.iter().any(|e| e.subject_id == "TWIN")).collect();
    assert_eq!(twin.len(), 1);
    let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
    for (f, p) in parts.iter().enumerate() {
        for e in &p.examples {
            assert_eq!(*seen.entry(&e.subject_id).or_insert(f), f);
        }
    }
    assert_eq!(parts.iter().map(TaskDataset::len).sum::<usize>(), ds.len());

    // A second task over a subset of the same subjects uses the same folds.
    let other = ds.with_examples(ex.iter().filter(|e| e.label).cloned().collect());
    for (f, p) in apply_assignment(&other, &a).unwrap().iter().enumerate() {
        assert!(p.examples.iter().all(|e| seen[e.subject_id.as_str()] == f));
    }
}

#[test]
fn hand_built_assignment() {
    let ex: Vec<_> = (0..10).map(|i| example(&format!("R{i}"), &format!("S{}", i % 5), 40.0, true, None, i % 2 == 0)).collect();
    let ds = TaskDataset::new(task("A", Direction::Low, 1.0), ex);
    let folds: BTreeMap<String, Fold> =
        [("S0", Fold::Train), ("S1", Fold::Train), ("S2", Fold::Train), ("S3", Fold::Validation), ("S4", Fold::Test)]
            .into_iter()
            .map(|(s, f)| (s.to_string(), f))
            .collect();
    let a = FoldAssignment::from_map(folds.clone(), 0, DEFAULT_RATIO);
    let parts = apply_assignment(&ds, &a).unwrap();
    assert_eq!(parts.each_ref().map(TaskDataset::len), [6, 2, 2]);

    let empty = ds.with_examples(Vec::new());
    assert!(apply_assignment(&empty, &a).unwrap().iter().all(TaskDataset::is_empty));

    let mut partial = folds;
    partial.remove("S4");
    assert!(matches!(
        apply_assignment(&ds, &FoldAssignment::from_map(partial, 0, DEFAULT_RATIO)),
        Err(SplitError::UnknownSubject(s)) if s == "S4"
    ));
}

#[test]
fn errors_and_file_round_trip() {
    let few = cohort(19, 4);
    assert!(matches!(stratified_group_split(&few, 0, DEFAULT_RATIO), Err(SplitError::TooFewSubjects(19))));
    let ok = cohort(20, 4);
    assert!(stratified_group_split(&ok, 0, DEFAULT_RATIO).is_ok());
    assert!(matches!(stratified_group_split(&ok, 0, (0, 1, 1)), Err(SplitError::InvalidRatio(_))));

    let a = stratified_group_split(&cohort(300, 5), 3, DEFAULT_RATIO).unwrap();
    let mut buf = Vec::new();
    write_assignment(&mut buf, &a).unwrap();
    let back = read_assignment(buf.as_slice()).unwrap();
    assert!(a.iter().eq(back.iter()));
    assert!(read_assignment("subject_id,fold\nS1,holdout\n".as_bytes()).is_err());
}

proptest::proptest! {
    #![proptest_config(proptest::test_runner::Config::with_cases(48))]

    #[test]
    fn every_subject_gets_one_fold(n in 20usize..400, data_seed in 0u64..1000, seed in proptest::prelude::any::<u64>()) {
        let ex = cohort(n, data_seed);
        let a = stratified_group_split(&ex, seed, DEFAULT_RATIO).unwrap();
        proptest::prop_assert_eq!(a.len(), n);
        let mut shuffled = ex.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ 1));
        proptest::prop_assert_eq!(&stratified_group_split(&shuffled, seed, DEFAULT_RATIO).unwrap(), &a);
        let ds = TaskDataset::new(task("A", Direction::High, 1.0), ex);
        let parts = apply_assignment(&ds, &a).unwrap();
        let mut ids: Vec<&str> = parts.iter().flat_map(|p| p.examples.iter().map(|e| e.record_id.as_str())).collect();
        ids.sort_unstable();
        let mut want: Vec<&str> = ds.examples.iter().map(|e| e.record_id.as_str()).collect();
        want.sort_unstable();
        proptest::prop_assert_eq!(ids, want);
        // Dealing keeps every fold within one subject per bucket of its share.
        let counts = a.subject_counts();
        for (c, share) in counts.iter().zip([0.9, 0.05, 0.05]) {
            proptest::prop_assert!((*c as f64 - share * n as f64).abs() <= 8.0, "{:?}", counts);
        }
    }
}
