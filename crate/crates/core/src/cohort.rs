//! ECG–lab pairing, abnormality thresholds and per-task labeled datasets.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::ingest::{fmt_f64, EcgRecord, Gender, LabObservation, LabTable, Race};
use crate::split::FoldAssignment;

pub const NUM_FEATURES: usize = 15;

/// Model feature order, shared by every task.
pub const FEATURE_NAMES: [&str; NUM_FEATURES] = [
    "rr_interval",
    "p_onset",
    "p_end",
    "qrs_onset",
    "qrs_end",
    "t_end",
    "p_axis",
    "qrs_axis",
    "t_axis",
    "age",
    "gender_male",
    "race_caucasian",
    "race_african",
    "race_asian",
    "race_latino",
];

pub const AGE_INDEX: usize = 9;
pub const GENDER_INDEX: usize = 10;
const RACE_INDEX: usize = 11;

pub const DEFAULT_HORIZON_S: i64 = 3600;

#[derive(Debug, Error)]
pub enum CohortError {
    #[error("no observation of `{analyte}` carries a {direction} reference bound")]
    NoReferenceBounds { analyte: String, direction: Direction },
    #[error("horizon must be positive, got {0}")]
    InvalidHorizon(i64),
    #[error("malformed dataset file: {0}")]
    MalformedDataset(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Direction {
    Low,
    High,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Low => "low",
            Direction::High => "high",
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Direction::Low => '<',
            Direction::High => '>',
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "low" => Ok(Direction::Low),
            "high" => Ok(Direction::High),
            other => Err(format!("unknown direction `{other}`")),
        }
    }
}

/// One binary prediction task: is the analyte below (or above) its threshold.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSpec {
    pub analyte: String,
    pub direction: Direction,
    pub threshold: f64,
    pub unit: String,
}

impl TaskSpec {
    /// Strict comparison: a value equal to the threshold is not abnormal
    /// unless `inclusive` is set.
    pub fn is_abnormal(&self, value: f64, inclusive: bool) -> bool {
        match (self.direction, inclusive) {
            (Direction::Low, false) => value < self.threshold,
            (Direction::Low, true) => value <= self.threshold,
            (Direction::High, false) => value > self.threshold,
            (Direction::High, true) => value >= self.threshold,
        }
    }

    /// File-system friendly identifier, e.g. `urea_nitrogen_low`.
    pub fn id(&self) -> String {
        let mut slug = String::new();
        for c in self.analyte.chars() {
            if c.is_ascii_alphanumeric() {
                slug.push(c.to_ascii_lowercase());
            } else if !slug.ends_with('_') && !slug.is_empty() {
                slug.push('_');
            }
        }
        let slug = slug.trim_end_matches('_');
        format!("{slug}_{}", self.direction)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub record_id: String,
    pub subject_id: String,
    pub features: [Option<f64>; NUM_FEATURES],
    pub label: bool,
    pub lab_value: f64,
    pub pairing_gap_s: i64,
}

impl LabeledExample {
    pub fn age(&self) -> f64 {
        self.features[AGE_INDEX].unwrap_or(f64::NAN)
    }

    pub fn gender(&self) -> Gender {
        if self.features[GENDER_INDEX] == Some(1.0) {
            Gender::Male
        } else {
            Gender::Female
        }
    }

    pub fn race(&self) -> Race {
        for (k, race) in Race::ALL[..4].iter().enumerate() {
            if self.features[RACE_INDEX + k] == Some(1.0) {
                return *race;
            }
        }
        Race::Other
    }
}

/// Encodes an ECG record into the model feature vector.
pub fn encode_features(ecg: &EcgRecord) -> [Option<f64>; NUM_FEATURES] {
    let mut out = [None; NUM_FEATURES];
    out[..9].copy_from_slice(&ecg.features);
    out[AGE_INDEX] = Some(ecg.age_years);
    out[GENDER_INDEX] = Some(if ecg.gender == Gender::Male { 1.0 } else { 0.0 });
    for (k, race) in Race::ALL[..4].iter().enumerate() {
        out[RACE_INDEX + k] = Some(if ecg.race == *race { 1.0 } else { 0.0 });
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset {
    pub task: TaskSpec,
    pub examples: Vec<LabeledExample>,
    pub feature_names: Vec<String>,
}

impl TaskDataset {
    pub fn new(task: TaskSpec, examples: Vec<LabeledExample>) -> Self {
        TaskDataset {
            task,
            examples,
            feature_names: FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }

    /// Same task, different rows.
    pub fn with_examples(&self, examples: Vec<LabeledExample>) -> Self {
        TaskDataset {
            task: self.task.clone(),
            examples,
            feature_names: self.feature_names.clone(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn n_positive(&self) -> usize {
        self.examples.iter().filter(|e| e.label).count()
    }

    pub fn labels(&self) -> Vec<bool> {
        self.examples.iter().map(|e| e.label).collect()
    }

    pub fn rows(&self) -> Vec<&[Option<f64>]> {
        self.examples.iter().map(|e| &e.features[..]).collect()
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Median of the per-observation reference bound matching `direction`.
pub fn resolve_threshold<'a, I>(
    observations: I,
    analyte: &str,
    direction: Direction,
) -> Result<f64, CohortError>
where
    I: IntoIterator<Item = &'a LabObservation>,
{
    let mut bounds: Vec<f64> = observations
        .into_iter()
        .filter(|o| o.analyte == analyte)
        .filter_map(|o| match direction {
            Direction::Low => o.ref_low,
            Direction::High => o.ref_high,
        })
        .collect();
    if bounds.is_empty() {
        return Err(CohortError::NoReferenceBounds {
            analyte: analyte.to_string(),
            direction,
        });
    }
    Ok(median(&mut bounds))
}

/// Every (analyte, direction) for which at least one reference bound exists.
pub fn enumerate_tasks(labs: &LabTable) -> Vec<TaskSpec> {
    let mut tasks = Vec::new();
    for analyte in labs.analytes() {
        for direction in [Direction::Low, Direction::High] {
            if let Ok(threshold) = resolve_threshold(labs.observations_of(analyte), analyte, direction) {
                tasks.push(TaskSpec {
                    analyte: analyte.to_string(),
                    direction,
                    threshold,
                    unit: labs.unit(analyte).unwrap_or_default().to_string(),
                });
            }
        }
    }
    tasks
}

#[derive(Debug, Clone, Copy)]
pub struct Pair<'a> {
    pub ecg: &'a EcgRecord,
    pub observation: &'a LabObservation,
    pub gap_s: i64,
}

/// Pairs each ECG with the same subject's observation of `analyte` nearest in
/// time, if it lies within `horizon_s`. Ties go to the earlier observation,
/// then to input order.
pub fn pair_ecg_to_lab<'a>(
    ecgs: &'a [EcgRecord],
    labs: &'a LabTable,
    analyte: &str,
    horizon_s: i64,
) -> Result<Vec<Pair<'a>>, CohortError> {
    if horizon_s <= 0 {
        return Err(CohortError::InvalidHorizon(horizon_s));
    }
    let mut pairs = Vec::new();
    for ecg in ecgs {
        let obs: Vec<&LabObservation> = labs.for_subject(&ecg.subject_id, analyte).collect();
        if obs.is_empty() {
            continue;
        }
        let t = ecg.timestamp.timestamp();
        let after = obs.partition_point(|o| o.timestamp.timestamp() < t);
        let mut best: Option<(i64, &LabObservation)> = None;
        if after > 0 {
            // First (in input order) of the latest timestamp strictly before t.
            let ts = obs[after - 1].timestamp;
            let first = obs[..after].partition_point(|o| o.timestamp < ts);
            best = Some((t - ts.timestamp(), obs[first]));
        }
        if after < obs.len() {
            let gap = obs[after].timestamp.timestamp() - t;
            if best.is_none_or(|(g, _)| gap < g) {
                best = Some((gap, obs[after]));
            }
        }
        if let Some((gap_s, observation)) = best {
            if gap_s <= horizon_s {
                pairs.push(Pair {
                    ecg,
                    observation,
                    gap_s,
                });
            }
        }
    }
    Ok(pairs)
}

/// Labels pairs against `task`; output is sorted by record_id.
pub fn build_task_dataset(pairs: &[Pair<'_>], task: &TaskSpec, inclusive: bool) -> TaskDataset {
    let mut examples: Vec<LabeledExample> = pairs
        .iter()
        .map(|p| LabeledExample {
            record_id: p.ecg.record_id.clone(),
            subject_id: p.ecg.subject_id.clone(),
            features: encode_features(p.ecg),
            label: task.is_abnormal(p.observation.value, inclusive),
            lab_value: p.observation.value,
            pairing_gap_s: p.gap_s,
        })
        .collect();
    examples.sort_by(|a, b| a.record_id.cmp(&b.record_id));
    examples.dedup_by(|a, b| a.record_id == b.record_id);
    TaskDataset::new(task.clone(), examples)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CohortConfig {
    pub horizon_s: i64,
    /// Count values equal to the threshold as abnormal.
    pub inclusive_boundary: bool,
}

impl Default for CohortConfig {
    fn default() -> Self {
        CohortConfig {
            horizon_s: DEFAULT_HORIZON_S,
            inclusive_boundary: false,
        }
    }
}

/// Builds one dataset per task. Tasks are processed in parallel; the output
/// follows the order of `tasks`.
pub fn build_cohort(
    ecgs: &[EcgRecord],
    labs: &LabTable,
    tasks: &[TaskSpec],
    config: &CohortConfig,
) -> Result<Vec<TaskDataset>, CohortError> {
    tasks
        .par_iter()
        .map(|task| {
            let pairs = pair_ecg_to_lab(ecgs, labs, &task.analyte, config.horizon_s)?;
            Ok(build_task_dataset(&pairs, task, config.inclusive_boundary))
        })
        .collect()
}

/// Positive/negative counts per fold, indexed by [`crate::split::Fold::index`].
pub fn fold_class_counts(ds: &TaskDataset, folds: &FoldAssignment) -> [(usize, usize); 3] {
    let mut counts = [(0usize, 0usize); 3];
    for e in &ds.examples {
        if let Some(fold) = folds.fold_of(&e.subject_id) {
            let c = &mut counts[fold.index()];
            if e.label {
                c.0 += 1;
            } else {
                c.1 += 1;
            }
        }
    }
    counts
}

/// Keeps the tasks with at least `min_per_class` positives and negatives in
/// every fold.
pub fn filter_tasks(
    datasets: Vec<TaskDataset>,
    folds: &FoldAssignment,
    min_per_class: usize,
) -> Vec<TaskDataset> {
    datasets
        .into_iter()
        .filter(|ds| {
            fold_class_counts(ds, folds)
                .iter()
                .all(|&(p, n)| p >= min_per_class && n >= min_per_class)
        })
        .collect()
}

fn dataset_header() -> Vec<String> {
    let mut h = vec!["record_id".to_string(), "subject_id".to_string()];
    h.extend(FEATURE_NAMES.iter().map(|s| s.to_string()));
    h.extend(["label", "lab_value", "pairing_gap_s"].map(String::from));
    h
}

pub fn write_task_dataset<W: Write>(w: W, ds: &TaskDataset) -> Result<(), CohortError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(dataset_header())?;
    for e in &ds.examples {
        let mut row = vec![e.record_id.clone(), e.subject_id.clone()];
        row.extend(e.features.iter().map(|v| v.map(fmt_f64).unwrap_or_default()));
        row.push(if e.label { "1" } else { "0" }.to_string());
        row.push(fmt_f64(e.lab_value));
        row.push(e.pairing_gap_s.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_task_dataset<R: Read>(r: R, task: TaskSpec) -> Result<TaskDataset, CohortError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(String::from).collect();
    if header != dataset_header() {
        return Err(CohortError::MalformedDataset("unexpected header".into()));
    }
    let bad = |m: &str| CohortError::MalformedDataset(m.to_string());
    let mut examples = Vec::new();
    for row in rdr.records() {
        let row = row?;
        let mut features = [None; NUM_FEATURES];
        for (k, slot) in features.iter_mut().enumerate() {
            let cell = &row[2 + k];
            if !cell.is_empty() {
                *slot = Some(cell.parse::<f64>().map_err(|_| bad("feature"))?);
            }
        }
        let base = 2 + NUM_FEATURES;
        examples.push(LabeledExample {
            record_id: row[0].to_string(),
            subject_id: row[1].to_string(),
            features,
            label: match &row[base] {
                "1" => true,
                "0" => false,
                _ => return Err(bad("label")),
            },
            lab_value: row[base + 1].parse().map_err(|_| bad("lab_value"))?,
            pairing_gap_s: row[base + 2].parse().map_err(|_| bad("pairing_gap_s"))?,
        });
    }
    Ok(TaskDataset::new(task, examples))
}

/// One line of the task manifest.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskManifestEntry {
    pub task: TaskSpec,
    pub n_samples: usize,
    pub n_positive: usize,
}

pub fn write_task_manifest<W: Write>(w: W, entries: &[TaskManifestEntry]) -> Result<(), CohortError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["task_id", "analyte", "direction", "threshold", "unit", "n_samples", "n_positive"])?;
    for e in entries {
        wtr.write_record([
            e.task.id(),
            e.task.analyte.clone(),
            e.task.direction.to_string(),
            fmt_f64(e.task.threshold),
            e.task.unit.clone(),
            e.n_samples.to_string(),
            e.n_positive.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_task_manifest<R: Read>(r: R) -> Result<Vec<TaskManifestEntry>, CohortError> {
    let mut rdr = csv::Reader::from_reader(r);
    let bad = |m: &str| CohortError::MalformedDataset(format!("task manifest: {m}"));
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != 7 {
            return Err(bad("expected 7 columns"));
        }
        out.push(TaskManifestEntry {
            task: TaskSpec {
                analyte: row[1].to_string(),
                direction: row[2].parse().map_err(|_| bad("direction"))?,
                threshold: row[3].parse().map_err(|_| bad("threshold"))?,
                unit: row[4].to_string(),
            },
            n_samples: row[5].parse().map_err(|_| bad("n_samples"))?,
            n_positive: row[6].parse().map_err(|_| bad("n_positive"))?,
        });
    }
    Ok(out)
}
