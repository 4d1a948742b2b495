//! Patient-grouped train/validation/test assignment, stratified on gender and
//! age quartile.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::cohort::{LabeledExample, TaskDataset};
use crate::ingest::Gender;

pub const DEFAULT_RATIO: (u32, u32, u32) = (18, 1, 1);
pub const MIN_SUBJECTS: usize = 20;

#[derive(Debug, Error)]
pub enum SplitError {
    #[error("need at least {MIN_SUBJECTS} subjects, got {0}")]
    TooFewSubjects(usize),
    #[error("subject `{0}` has no fold assignment")]
    UnknownSubject(String),
    #[error("invalid ratio {0:?}")]
    InvalidRatio((u32, u32, u32)),
    #[error("malformed assignment file: {0}")]
    Malformed(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Fold {
    Train,
    Validation,
    Test,
}

impl Fold {
    pub const ALL: [Fold; 3] = [Fold::Train, Fold::Validation, Fold::Test];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Fold::Train => "train",
            Fold::Validation => "validation",
            Fold::Test => "test",
        }
    }
}

impl fmt::Display for Fold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Fold {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "train" => Ok(Fold::Train),
            "validation" | "val" => Ok(Fold::Validation),
            "test" => Ok(Fold::Test),
            other => Err(format!("unknown fold `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldAssignment {
    folds: BTreeMap<String, Fold>,
    pub seed: u64,
    pub ratio: (u32, u32, u32),
}

impl FoldAssignment {
    pub fn from_map(folds: BTreeMap<String, Fold>, seed: u64, ratio: (u32, u32, u32)) -> Self {
        FoldAssignment { folds, seed, ratio }
    }

    pub fn fold_of(&self, subject: &str) -> Option<Fold> {
        self.folds.get(subject).copied()
    }

    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    /// Subjects in id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, Fold)> {
        self.folds.iter().map(|(s, f)| (s.as_str(), *f))
    }

    pub fn subject_counts(&self) -> [usize; 3] {
        let mut c = [0; 3];
        for f in self.folds.values() {
            c[f.index()] += 1;
        }
        c
    }
}

struct Subject<'a> {
    id: &'a str,
    mean_age: f64,
    gender: Gender,
    /// Distinct records.
    weight: u64,
}

/// Per-subject mean age and the gender of the subject's first record (by
/// record id). Ages are summed in record-id order so the result does not
/// depend on input order.
fn collect_subjects<'a, I>(examples: I) -> Vec<Subject<'a>>
where
    I: IntoIterator<Item = &'a LabeledExample>,
{
    let mut acc: BTreeMap<&str, Vec<&LabeledExample>> = BTreeMap::new();
    for e in examples {
        acc.entry(e.subject_id.as_str()).or_default().push(e);
    }
    acc.into_iter()
        .map(|(id, mut rows)| {
            rows.sort_by(|a, b| a.record_id.cmp(&b.record_id));
            // The same ECG may arrive once per task.
            rows.dedup_by(|a, b| a.record_id == b.record_id);
            let sum: f64 = rows.iter().map(|e| e.age()).sum();
            Subject {
                id,
                mean_age: sum / rows.len() as f64,
                gender: rows[0].gender(),
                weight: rows.len() as u64,
            }
        })
        .collect()
}

/// Linear-interpolated quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// The fold furthest below its share of the records dealt so far, with
/// integer arithmetic and ties to the lower fold. The choice ignores the next
/// subject's own weight, so heavy subjects are not steered toward any fold.
/// With unit weights this repeats an 18:1:1 pattern that keeps every prefix
/// near the ratio.
fn largest_deficit(ratio: [u64; 3], dealt: &[u64; 3]) -> usize {
    let total: u64 = ratio.iter().sum();
    let so_far: u64 = dealt.iter().sum();
    let mut best = 0;
    let mut best_deficit = i128::MIN;
    for k in 0..3 {
        let deficit = (ratio[k] * so_far) as i128 - (total * dealt[k]) as i128;
        if deficit > best_deficit {
            best_deficit = deficit;
            best = k;
        }
    }
    best
}

/// Assigns each subject to one fold.
///
/// Subjects are bucketed by gender and quartile of their mean age (quartile
/// edges from the cohort itself). Each bucket is shuffled with its own seeded
/// stream, the buckets are concatenated, and each subject in turn goes to the
/// fold furthest below its share of the records dealt so far. Every run of consecutive
/// subjects, and so every bucket, follows the ratio in record counts to within
/// a few subjects' records; with one record per subject this is the plain
/// 18:1:1 round robin.
pub fn stratified_group_split<'a, I>(
    examples: I,
    seed: u64,
    ratio: (u32, u32, u32),
) -> Result<FoldAssignment, SplitError>
where
    I: IntoIterator<Item = &'a LabeledExample>,
{
    if ratio.0 == 0 || ratio.0 + ratio.1 + ratio.2 == 0 {
        return Err(SplitError::InvalidRatio(ratio));
    }
    let subjects = collect_subjects(examples);
    if subjects.len() < MIN_SUBJECTS {
        return Err(SplitError::TooFewSubjects(subjects.len()));
    }
    let mut ages: Vec<f64> = subjects.iter().map(|s| s.mean_age).collect();
    ages.sort_by(f64::total_cmp);
    let edges = [0.25, 0.5, 0.75].map(|q| quantile_sorted(&ages, q));

    let mut buckets: BTreeMap<(Gender, usize), Vec<&Subject>> = BTreeMap::new();
    for s in &subjects {
        let quartile = edges.iter().filter(|&&e| s.mean_age > e).count();
        buckets.entry((s.gender, quartile)).or_default().push(s);
    }

    let shares = [ratio.0 as u64, ratio.1 as u64, ratio.2 as u64];
    let mut dealt = [0u64; 3];
    let mut folds = BTreeMap::new();
    for (stream, members) in buckets.values_mut().enumerate() {
        // Members are already in id order (BTreeMap iteration above).
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        members.shuffle(&mut rng);
        for s in members.iter() {
            let k = largest_deficit(shares, &dealt);
            dealt[k] += s.weight;
            folds.insert(s.id.to_string(), Fold::ALL[k]);
        }
    }
    Ok(FoldAssignment { folds, seed, ratio })
}

/// Partitions a dataset into (train, validation, test), preserving row order.
pub fn apply_assignment(
    ds: &TaskDataset,
    assignment: &FoldAssignment,
) -> Result<[TaskDataset; 3], SplitError> {
    let mut parts: [Vec<LabeledExample>; 3] = Default::default();
    for e in &ds.examples {
        let fold = assignment
            .fold_of(&e.subject_id)
            .ok_or_else(|| SplitError::UnknownSubject(e.subject_id.clone()))?;
        parts[fold.index()].push(e.clone());
    }
    Ok(parts.map(|examples| ds.with_examples(examples)))
}

/// Two-column `subject_id,fold` file, subjects in id order.
pub fn write_assignment<W: Write>(w: W, a: &FoldAssignment) -> Result<(), SplitError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["subject_id", "fold"])?;
    for (s, f) in a.iter() {
        wtr.write_record([s, f.as_str()])?;
    }
    wtr.flush()?;
    Ok(())
}

/// Reads an externally supplied assignment. Seed is recorded as 0.
pub fn read_assignment<R: Read>(r: R) -> Result<FoldAssignment, SplitError> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let c_subject = headers
        .iter()
        .position(|h| h == "subject_id")
        .ok_or_else(|| SplitError::Malformed("missing subject_id column".into()))?;
    let c_fold = headers
        .iter()
        .position(|h| h == "fold")
        .ok_or_else(|| SplitError::Malformed("missing fold column".into()))?;
    let mut folds = BTreeMap::new();
    for row in rdr.records() {
        let row = row?;
        let fold: Fold = row[c_fold].parse().map_err(SplitError::Malformed)?;
        if folds.insert(row[c_subject].to_string(), fold).is_some() {
            return Err(SplitError::Malformed(format!(
                "subject `{}` listed twice",
                &row[c_subject]
            )));
        }
    }
    Ok(FoldAssignment {
        folds,
        seed: 0,
        ratio: DEFAULT_RATIO,
    })
}
