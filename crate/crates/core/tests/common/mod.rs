//! Independent oracles and fixture builders shared by the integration tests.
#![allow(dead_code)]

use ecglab::cohort::{Direction, LabeledExample, TaskDataset, TaskSpec, NUM_FEATURES};
use ecglab::gbdt::{Stump, StumpEnsemble};
use ecglab::ingest::{EcgRecord, Gender, LabObservation, Race};
use rand::Rng;

/// O(n^2) pairwise AUROC with ties counted one half, as an exact fraction
/// `(2 * wins + ties) / (2 * pos * neg)`.
pub fn pairwise_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut twice = 0u64;
    let (mut pos, mut neg) = (0u64, 0u64);
    for &l in labels {
        if l {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            if si > sj {
                twice += 2;
            } else if si == sj {
                twice += 1;
            }
        }
    }
    twice as f64 / (2 * pos * neg) as f64
}

/// Result of the exhaustive split search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleSplit {
    pub feature: usize,
    pub threshold: f64,
    pub missing_left: bool,
    pub gain: f64,
    pub left_value: f64,
    pub right_value: f64,
}

/// Tries every (feature, threshold, missing side) in tie-break order:
/// features ascending, thresholds ascending, missing-left before
/// missing-right. Thresholds are the midpoints between consecutive distinct
/// present values, preceded by the minimum present value when the feature
/// has missing cells (a "missing vs present" split). A candidate replaces the
/// incumbent only with a strictly larger gain, and must beat zero.
pub fn exhaustive_stump(
    rows: &[Vec<Option<f64>>],
    grad: &[f64],
    hess: &[f64],
    lambda: f64,
    min_child_hessian: f64,
) -> Option<OracleSplit> {
    let n_features = rows[0].len();
    let mut best: Option<OracleSplit> = None;
    for f in 0..n_features {
        let mut values: Vec<f64> = rows.iter().filter_map(|r| r[f]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        if values.is_empty() {
            continue;
        }
        let mut thresholds = Vec::new();
        if rows.iter().any(|r| r[f].is_none()) {
            thresholds.push(values[0]);
        }
        for w in values.windows(2) {
            thresholds.push((w[0] + w[1]) / 2.0);
        }
        for &t in &thresholds {
            for missing_left in [true, false] {
                let (mut gl, mut hl, mut gr, mut hr) = (0.0, 0.0, 0.0, 0.0);
                for (i, r) in rows.iter().enumerate() {
                    let left = match r[f] {
                        Some(v) => v < t,
                        None => missing_left,
                    };
                    if left {
                        gl += grad[i];
                        hl += hess[i];
                    } else {
                        gr += grad[i];
                        hr += hess[i];
                    }
                }
                if hl < min_child_hessian || hr < min_child_hessian {
                    continue;
                }
                let score = |g: f64, h: f64| g * g / (h + lambda);
                let gain = score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr);
                if gain > best.map_or(0.0, |b| b.gain) {
                    best = Some(OracleSplit {
                        feature: f,
                        threshold: t,
                        missing_left,
                        gain,
                        left_value: -gl / (hl + lambda),
                        right_value: -gr / (hr + lambda),
                    });
                }
            }
        }
    }
    best
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Interventional Shapley values by enumerating every coalition of
/// `players`: `v(S) = mean_b f(x_S, b_rest)`. Features outside `players`
/// are taken from `row`.
pub fn coalition_shapley(
    model: &StumpEnsemble,
    row: &[Option<f64>],
    background: &[Vec<Option<f64>>],
    players: &[usize],
) -> Vec<f64> {
    let n = players.len();
    let value = |mask: usize| -> f64 {
        let mut total = 0.0;
        for b in background {
            let mut z = row.to_vec();
            for (k, &p) in players.iter().enumerate() {
                if mask & (1 << k) == 0 {
                    z[p] = b[p];
                }
            }
            total += model.predict_margin(&z).unwrap();
        }
        total / background.len() as f64
    };
    let values: Vec<f64> = (0..1usize << n).map(value).collect();
    let mut phi = vec![0.0; row.len()];
    for (k, &p) in players.iter().enumerate() {
        let mut acc = 0.0;
        for mask in 0..1usize << n {
            if mask & (1 << k) != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            let w = factorial(s) * factorial(n - s - 1) / factorial(n);
            acc += w * (values[mask | (1 << k)] - values[mask]);
        }
        phi[p] = acc;
    }
    phi
}

/// Median by sorting; even counts average the two central values.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn task(analyte: &str, direction: Direction, threshold: f64) -> TaskSpec {
    TaskSpec {
        analyte: analyte.to_string(),
        direction,
        threshold,
        unit: "mg/dL".to_string(),
    }
}

/// Example with the given demographics; ECG features filled from `ecg`.
pub fn example(
    record_id: &str,
    subject_id: &str,
    age: f64,
    male: bool,
    race_slot: Option<usize>,
    label: bool,
) -> LabeledExample {
    let mut features = [None; NUM_FEATURES];
    features[9] = Some(age);
    features[10] = Some(if male { 1.0 } else { 0.0 });
    for k in 0..4 {
        features[11 + k] = Some(if race_slot == Some(k) { 1.0 } else { 0.0 });
    }
    LabeledExample {
        record_id: record_id.to_string(),
        subject_id: subject_id.to_string(),
        features,
        label,
        lab_value: if label { 1.0 } else { 0.0 },
        pairing_gap_s: 0,
    }
}

/// A dataset whose feature 0 carries the label (noise-free when `sep`).
pub fn feature_dataset(n: usize, seed: u64, signal: f64) -> TaskDataset {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut examples = Vec::with_capacity(n);
    for i in 0..n {
        let label = rng.gen_bool(0.4);
        let mut e = example(
            &format!("R{i:06}"),
            &format!("S{i:06}"),
            rng.gen_range(18.0..95.0),
            rng.gen_bool(0.5),
            Some(rng.gen_range(0..5)).filter(|&k| k < 4),
            label,
        );
        for j in 0..9 {
            e.features[j] = Some(rng.gen_range(-1.0..1.0));
        }
        let shift = if label { signal } else { -signal };
        e.features[0] = Some(shift + rng.gen_range(-1.0..1.0));
        examples.push(e);
    }
    TaskDataset::new(task("Synthetic", Direction::High, 1.0), examples)
}

/// Random stump ensemble over the given features.
pub fn random_model(rng: &mut impl Rng, features: &[usize], n_stumps: usize, lr: f64) -> StumpEnsemble {
    let stumps = (0..n_stumps)
        .map(|_| Stump {
            feature_index: features[rng.gen_range(0..features.len())],
            threshold: rng.gen_range(-1.0..1.0),
            missing_goes_left: rng.gen_bool(0.5),
            left_value: rng.gen_range(-2.0..2.0),
            right_value: rng.gen_range(-2.0..2.0),
        })
        .collect();
    StumpEnsemble {
        base_score: rng.gen_range(-1.0..1.0),
        learning_rate: lr,
        stumps,
        feature_names: ecglab::cohort::FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        training_config: String::new(),
        training_config_digest: String::new(),
    }
}

/// Random row: values in [-1, 1), each cell missing with probability `p_missing`.
pub fn random_row(rng: &mut impl Rng, p_missing: f64) -> Vec<Option<f64>> {
    (0..NUM_FEATURES)
        .map(|_| (!rng.gen_bool(p_missing)).then(|| rng.gen_range(-1.0..1.0)))
        .collect()
}

pub fn at(secs: i64) -> chrono::DateTime<chrono::Utc> {
    chrono::DateTime::from_timestamp(1_700_000_000 + secs, 0).unwrap()
}

pub fn ecg(record_id: &str, subject_id: &str, t: i64, age: f64, gender: Gender, race: Race) -> EcgRecord {
    EcgRecord {
        record_id: record_id.to_string(),
        subject_id: subject_id.to_string(),
        timestamp: at(t),
        features: [Some(800.0), Some(40.0), Some(150.0), Some(200.0), Some(290.0), Some(600.0), Some(50.0), Some(20.0), None],
        age_years: age,
        gender,
        race,
    }
}

pub fn obs(subject_id: &str, analyte: &str, value: f64, t: i64, ref_low: Option<f64>, ref_high: Option<f64>) -> LabObservation {
    LabObservation {
        subject_id: subject_id.to_string(),
        analyte: analyte.to_string(),
        value,
        unit: "mg/dL".to_string(),
        ref_low,
        ref_high,
        timestamp: at(t),
    }
}

/// Runs a generated cohort through pairing, labeling and the grouped split.
/// Returns `(train, validation, test)` for every task, in task order.
pub fn synth_splits(
    cohort: &ecglab::synth::SynthCohort,
    seed: u64,
) -> Vec<[TaskDataset; 3]> {
    use ecglab::cohort::{build_cohort, enumerate_tasks, CohortConfig};
    use ecglab::split::{apply_assignment, stratified_group_split, DEFAULT_RATIO};
    let labs = ecglab::ingest::LabTable::new(cohort.labs.clone(), Vec::new()).unwrap();
    let tasks = enumerate_tasks(&labs);
    let datasets = build_cohort(&cohort.ecgs, &labs, &tasks, &CohortConfig::default()).unwrap();
    let assignment = stratified_group_split(datasets.iter().flat_map(|d| d.examples.iter()), seed, DEFAULT_RATIO).unwrap();
    datasets.iter().map(|d| apply_assignment(d, &assignment).unwrap()).collect()
}

/// One analyte driven only by `driver` at the given signal strength.
pub fn single_driver_config(n_subjects: usize, signal: f64, driver: &str, seed: u64) -> ecglab::synth::SynthConfig {
    let mut cfg = ecglab::synth::SynthConfig { n_subjects, seed, ..Default::default() };
    cfg.analytes.truncate(1);
    cfg.analytes[0].signal_strength = signal;
    cfg.analytes[0].drivers = vec![ecglab::cohort::FEATURE_NAMES.iter().position(|f| *f == driver).unwrap()];
    cfg
}

/// Validation AUROC of a model trained on the train fold.
pub fn validation_auroc(parts: &[TaskDataset; 3], cfg: &ecglab::gbdt::TrainConfig) -> f64 {
    let model = ecglab::gbdt::train(&parts[0], &parts[1], cfg).unwrap().model;
    let scores = model.predict_margins(&parts[1].rows()).unwrap();
    ecglab::eval::auroc(&scores, &parts[1].labels()).unwrap()
}
