//! AUROC, percentile-bootstrap intervals, macro aggregation, demographic
//! subgroups and the Table-1 style report.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cohort::{LabeledExample, TaskDataset, TaskSpec};
use crate::gbdt::{GbdtError, StumpEnsemble};
use crate::ingest::{fmt_f64, Gender, Race};
use crate::split::quantile_sorted;

pub const DEFAULT_BOOTSTRAP_N: usize = 1000;
pub const DEFAULT_AUROC_FLOOR: f64 = 0.70;
/// Draws per bootstrap iteration before a single-class resample is skipped.
pub const MAX_RESAMPLE_RETRIES: usize = 100;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("scores and labels differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least one positive and one negative")]
    SingleClass,
    #[error("{skipped} of {n_iter} bootstrap iterations had a single class")]
    ResampleExhaustion { skipped: usize, n_iter: usize },
    #[error("no reports to aggregate")]
    EmptyInput,
    #[error("target group has no training rows")]
    EmptyTargetGroup,
    #[error("source group has no training rows")]
    EmptySourceGroup,
    #[error("target group ({target}) is larger than source group ({source_n})")]
    TargetLargerThanSource { source_n: usize, target: usize },
    #[error("invalid bootstrap config: {0}")]
    InvalidConfig(String),
    #[error("malformed report file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] GbdtError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Scores sorted ascending, grouped into runs of equal score.
struct RankedScores {
    labels: Vec<bool>,
    /// End offsets (exclusive) of each tie group in the sorted order.
    group_ends: Vec<usize>,
}

impl RankedScores {
    fn new(scores: &[f64], labels: &[bool]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
        let mut group_ends = Vec::new();
        for k in 1..order.len() {
            if scores[order[k]].total_cmp(&scores[order[k - 1]]).is_ne() {
                group_ends.push(k);
            }
        }
        if !order.is_empty() {
            group_ends.push(order.len());
        }
        RankedScores {
            labels: order.iter().map(|&i| labels[i]).collect(),
            group_ends,
        }
    }

    /// Twice the Mann–Whitney count (ties weigh one half) and the class
    /// totals, with each sorted position counted `weight(k)` times.
    fn doubled_u(&self, weight: impl Fn(usize) -> u64) -> (u64, u64, u64) {
        let (mut u2, mut neg_below, mut pos_total) = (0u64, 0u64, 0u64);
        let mut start = 0;
        for &end in &self.group_ends {
            let (mut p, mut q) = (0u64, 0u64);
            for k in start..end {
                let w = weight(k);
                if self.labels[k] {
                    p += w;
                } else {
                    q += w;
                }
            }
            u2 += 2 * p * neg_below + p * q;
            neg_below += q;
            pos_total += p;
            start = end;
        }
        (u2, pos_total, neg_below)
    }
}

fn ratio(u2: u64, pos: u64, neg: u64) -> f64 {
    u2 as f64 / (2 * pos * neg) as f64
}

/// Exact Mann–Whitney AUROC in O(n log n); tied scores count one half.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    let (u2, pos, neg) = RankedScores::new(scores, labels).doubled_u(|_| 1);
    if pos == 0 || neg == 0 {
        return Err(EvalError::SingleClass);
    }
    Ok(ratio(u2, pos, neg))
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapConfig {
    pub n_iter: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            n_iter: DEFAULT_BOOTSTRAP_N,
            level: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapInterval {
    pub low: f64,
    pub high: f64,
    /// Resampled AUROCs in iteration order (skipped iterations omitted).
    pub samples: Vec<f64>,
    pub skipped: usize,
}

/// Percentile bootstrap interval of the AUROC.
///
/// Each iteration draws `n` (score, label) pairs with replacement from its
/// own seeded stream, so results do not depend on thread count. A
/// single-class draw is redrawn up to [`MAX_RESAMPLE_RETRIES`] times, then the
/// iteration is skipped.
pub fn bootstrap_ci(
    scores: &[f64],
    labels: &[bool],
    config: &BootstrapConfig,
) -> Result<BootstrapInterval, EvalError> {
    if config.n_iter == 0 || !(config.level > 0.0 && config.level < 1.0) {
        return Err(EvalError::InvalidConfig(format!(
            "n_iter={} level={}",
            config.n_iter, config.level
        )));
    }
    auroc(scores, labels)?;
    let ranked = RankedScores::new(scores, labels);
    let n = scores.len();
    let draw = Uniform::new(0, n);

    let results: Vec<Option<f64>> = (0..config.n_iter)
        .into_par_iter()
        .map(|iter| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(iter as u64);
            let mut counts = vec![0u64; n];
            for _ in 0..MAX_RESAMPLE_RETRIES {
                counts.iter_mut().for_each(|c| *c = 0);
                for _ in 0..n {
                    counts[draw.sample(&mut rng)] += 1;
                }
                let (u2, pos, neg) = ranked.doubled_u(|k| counts[k]);
                if pos > 0 && neg > 0 {
                    return Some(ratio(u2, pos, neg));
                }
            }
            None
        })
        .collect();

    let samples: Vec<f64> = results.iter().flatten().copied().collect();
    let skipped = config.n_iter - samples.len();
    if skipped * 10 > config.n_iter * 9 || samples.is_empty() {
        return Err(EvalError::ResampleExhaustion {
            skipped,
            n_iter: config.n_iter,
        });
    }
    let mut sorted = samples.clone();
    sorted.sort_by(f64::total_cmp);
    let tail = (1.0 - config.level) / 2.0;
    Ok(BootstrapInterval {
        low: quantile_sorted(&sorted, tail),
        high: quantile_sorted(&sorted, 1.0 - tail),
        samples,
        skipped,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: TaskSpec,
    pub n_samples: usize,
    pub n_positive: usize,
    pub auroc: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bootstrap_n: usize,
    pub bootstrap_skipped: usize,
    pub seed: u64,
}

/// Test-set AUROC of `model` with its bootstrap interval.
pub fn evaluate(
    model: &StumpEnsemble,
    test: &TaskDataset,
    bootstrap: &BootstrapConfig,
) -> Result<EvalReport, EvalError> {
    let scores = model.predict_margins(&test.rows())?;
    let labels = test.labels();
    let point = auroc(&scores, &labels)?;
    let ci = bootstrap_ci(&scores, &labels, bootstrap)?;
    Ok(EvalReport {
        task: test.task.clone(),
        n_samples: test.len(),
        n_positive: test.n_positive(),
        auroc: point,
        ci_low: ci.low,
        ci_high: ci.high,
        bootstrap_n: bootstrap.n_iter,
        bootstrap_skipped: ci.skipped,
        seed: bootstrap.seed,
    })
}

/// Unweighted mean of per-task AUROCs.
pub fn macro_auroc(reports: &[EvalReport]) -> Result<f64, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    Ok(reports.iter().map(|r| r.auroc).sum::<f64>() / reports.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Category {
    Gender,
    Race,
    Age,
}

impl Category {
    pub fn groups(self) -> Vec<Group> {
        match self {
            Category::Gender => Gender::ALL.iter().map(|&g| Group::Gender(g)).collect(),
            Category::Race => Race::ALL.iter().map(|&r| Group::Race(r)).collect(),
            Category::Age => AgeBin::ALL.iter().map(|&a| Group::Age(a)).collect(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Gender => "gender",
            Category::Race => "race",
            Category::Age => "age",
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Category::Gender => "Gender",
            Category::Race => "Race",
            Category::Age => "Age by quantiles",
        }
    }
}

impl FromStr for Category {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "gender" => Ok(Category::Gender),
            "race" => Ok(Category::Race),
            "age" | "age_quartile" => Ok(Category::Age),
            other => Err(format!("unknown category `{other}`")),
        }
    }
}

/// Fixed age bins, lower edge inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AgeBin {
    From18To49,
    From50To64,
    From65To77,
    From78,
}

impl AgeBin {
    pub const ALL: [AgeBin; 4] = [
        AgeBin::From18To49,
        AgeBin::From50To64,
        AgeBin::From65To77,
        AgeBin::From78,
    ];

    pub fn of(age: f64) -> AgeBin {
        if age < 50.0 {
            AgeBin::From18To49
        } else if age < 65.0 {
            AgeBin::From50To64
        } else if age < 78.0 {
            AgeBin::From65To77
        } else {
            AgeBin::From78
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AgeBin::From18To49 => "18-49yo.",
            AgeBin::From50To64 => "50-64yo.",
            AgeBin::From65To77 => "65-77yo.",
            AgeBin::From78 => ">=78yo.",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    Gender(Gender),
    Race(Race),
    Age(AgeBin),
}

impl Group {
    pub fn category(self) -> Category {
        match self {
            Group::Gender(_) => Category::Gender,
            Group::Race(_) => Category::Race,
            Group::Age(_) => Category::Age,
        }
    }

    pub fn of(example: &LabeledExample, category: Category) -> Group {
        match category {
            Category::Gender => Group::Gender(example.gender()),
            Category::Race => Group::Race(example.race()),
            Category::Age => Group::Age(AgeBin::of(example.age())),
        }
    }

    pub fn contains(self, example: &LabeledExample) -> bool {
        Group::of(example, self.category()) == self
    }

    pub fn label(self) -> &'static str {
        match self {
            Group::Gender(Gender::Male) => "Males",
            Group::Gender(Gender::Female) => "Females",
            Group::Race(Race::Caucasian) => "Caucasians",
            Group::Race(Race::African) => "Africans",
            Group::Race(Race::Asian) => "Asians",
            Group::Race(Race::Latino) => "Latinos",
            Group::Race(Race::Other) => "Other",
            Group::Age(a) => a.label(),
        }
    }
}

impl fmt::Display for Group {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Group {
    type Err = String;

    /// `gender:male`, `race:asian`, `age:65-77`, ...
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (cat, value) = s
            .split_once(':')
            .ok_or_else(|| format!("expected category:value, got `{s}`"))?;
        match cat.trim() {
            "gender" => value.parse().map(Group::Gender),
            "race" => value.parse().map(Group::Race),
            "age" => {
                let v = value.trim().trim_end_matches("yo.");
                AgeBin::ALL
                    .iter()
                    .find(|a| a.label().trim_end_matches("yo.") == v)
                    .map(|&a| Group::Age(a))
                    .ok_or_else(|| format!("unknown age bin `{value}`"))
            }
            other => Err(format!("unknown category `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubgroupReport {
    pub group: Group,
    pub n_samples: usize,
    pub n_positive: usize,
    /// `None` when the group lacks one class or its bootstrap failed.
    pub auroc: Option<f64>,
    pub ci_low: Option<f64>,
    pub ci_high: Option<f64>,
    pub flag: Option<String>,
}

/// Per-group AUROC and interval for one demographic category. Groups are
/// listed in table order; degenerate groups carry a flag instead of numbers.
pub fn subgroup_eval(
    model: &StumpEnsemble,
    test: &TaskDataset,
    category: Category,
    bootstrap: &BootstrapConfig,
) -> Result<Vec<SubgroupReport>, EvalError> {
    let scores = model.predict_margins(&test.rows())?;
    let groups = category.groups();
    let reports = groups
        .par_iter()
        .map(|&group| {
            let (s, y): (Vec<f64>, Vec<bool>) = test
                .examples
                .iter()
                .zip(&scores)
                .filter(|(e, _)| group.contains(e))
                .map(|(e, &s)| (s, e.label))
                .unzip();
            let n_positive = y.iter().filter(|&&l| l).count();
            let mut report = SubgroupReport {
                group,
                n_samples: y.len(),
                n_positive,
                auroc: None,
                ci_low: None,
                ci_high: None,
                flag: None,
            };
            match auroc(&s, &y).and_then(|a| bootstrap_ci(&s, &y, bootstrap).map(|ci| (a, ci))) {
                Ok((a, ci)) => {
                    report.auroc = Some(a);
                    report.ci_low = Some(ci.low);
                    report.ci_high = Some(ci.high);
                }
                Err(e) => report.flag = Some(e.to_string()),
            }
            report
        })
        .collect();
    Ok(reports)
}

/// Subsamples the `source` group of `train` (without replacement, seeded) to
/// the size of the `target` group. Other rows are kept as they are; row order
/// is preserved.
pub fn downsample_train_group(
    train: &TaskDataset,
    source: Group,
    target: Group,
    seed: u64,
) -> Result<TaskDataset, EvalError> {
    let target_n = train.examples.iter().filter(|e| target.contains(e)).count();
    if target_n == 0 {
        return Err(EvalError::EmptyTargetGroup);
    }
    let source_idx: Vec<usize> = train
        .examples
        .iter()
        .enumerate()
        .filter(|(_, e)| source.contains(e))
        .map(|(i, _)| i)
        .collect();
    if source_idx.is_empty() {
        return Err(EvalError::EmptySourceGroup);
    }
    if target_n > source_idx.len() {
        return Err(EvalError::TargetLargerThanSource {
            source_n: source_idx.len(),
            target: target_n,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = vec![true; train.len()];
    for &i in &source_idx {
        keep[i] = false;
    }
    for k in rand::seq::index::sample(&mut rng, source_idx.len(), target_n) {
        keep[source_idx[k]] = true;
    }
    let examples = train
        .examples
        .iter()
        .zip(keep)
        .filter(|(_, k)| *k)
        .map(|(e, _)| e.clone())
        .collect();
    Ok(train.with_examples(examples))
}

/// Threshold as printed in tables: at least one decimal.
pub fn fmt_threshold(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{v:.1}")
    } else {
        format!("{v}")
    }
}

fn fmt_ci(auroc: f64, low: f64, high: f64) -> String {
    format!("{auroc:.3} ({low:.3}, {high:.3})")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub value: String,
    pub threshold: String,
    pub unit: String,
    pub samples: String,
    pub auroc: String,
    pub auroc_value: f64,
}

/// Table-1 style per-task table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_HEADER: [&str; 5] = ["Value", "Threshold", "Unit", "Samples [Prev.]", "AUROC (95% CI)"];

/// Keeps reports with AUROC strictly above `auroc_floor`, best first. Equal
/// AUROCs keep their input order.
pub fn build_report_table(reports: &[EvalReport], auroc_floor: f64) -> ReportTable {
    let mut kept: Vec<&EvalReport> = reports.iter().filter(|r| r.auroc > auroc_floor).collect();
    kept.sort_by(|a, b| b.auroc.total_cmp(&a.auroc));
    ReportTable {
        rows: kept
            .into_iter()
            .map(|r| ReportRow {
                value: r.task.analyte.clone(),
                threshold: format!("{}{}", r.task.direction.symbol(), fmt_threshold(r.task.threshold)),
                unit: r.task.unit.clone(),
                samples: format!("{} [{}]", r.n_samples, r.n_positive),
                auroc: fmt_ci(r.auroc, r.ci_low, r.ci_high),
                auroc_value: r.auroc,
            })
            .collect(),
    }
}

fn render_aligned(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        let mut s = String::new();
        for (k, (cell, w)) in cells.iter().zip(&widths).enumerate() {
            if k > 0 {
                s.push_str("  ");
            }
            s.push_str(cell);
            if k + 1 < cells.len() {
                s.push_str(&" ".repeat(w - cell.chars().count()));
            }
        }
        s.push('\n');
        s
    };
    let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    let rule = "=".repeat(total) + "\n";
    let mut out = rule.clone();
    out.push_str(&line(header.to_vec()));
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for row in rows {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out.push_str(&rule);
    out
}

impl ReportTable {
    fn cells(&self) -> Vec<Vec<String>> {
        self.rows
            .iter()
            .map(|r| {
                vec![
                    r.value.clone(),
                    r.threshold.clone(),
                    r.unit.clone(),
                    r.samples.clone(),
                    r.auroc.clone(),
                ]
            })
            .collect()
    }

    /// Aligned plain-text rendering.
    pub fn render(&self) -> String {
        render_aligned(&REPORT_HEADER, &self.cells())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), EvalError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(REPORT_HEADER)?;
        for row in self.cells() {
            wtr.write_record(row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Table-2 style rendering of subgroup reports, one section per category.
pub fn render_subgroup_table(sections: &[(Category, Vec<SubgroupReport>)]) -> String {
    let mut rows = Vec::new();
    for (cat, reports) in sections {
        rows.push(vec![format!("[{}]", cat.title()), String::new(), String::new()]);
        for r in reports {
            let auroc = match (r.auroc, r.ci_low, r.ci_high) {
                (Some(a), Some(l), Some(h)) => fmt_ci(a, l, h),
                _ => format!("n/a ({})", r.flag.as_deref().unwrap_or("not evaluated")),
            };
            rows.push(vec![
                r.group.label().to_string(),
                format!("{} [{}]", r.n_samples, r.n_positive),
                auroc,
            ]);
        }
    }
    render_aligned(&["Category", "Samples [Prev.]", "AUROC"], &rows)
}

pub fn write_subgroup_csv<W: Write>(w: W, category: Category, reports: &[SubgroupReport]) -> Result<(), EvalError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["category", "group", "n_samples", "n_positive", "auroc", "ci_low", "ci_high", "flag"])?;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    for r in reports {
        wtr.write_record([
            category.as_str().to_string(),
            r.group.label().to_string(),
            r.n_samples.to_string(),
            r.n_positive.to_string(),
            opt(r.auroc),
            opt(r.ci_low),
            opt(r.ci_high),
            r.flag.clone().unwrap_or_default(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

const EVAL_HEADER: [&str; 13] = [
    "task_id",
    "analyte",
    "direction",
    "threshold",
    "unit",
    "n_samples",
    "n_positive",
    "auroc",
    "ci_low",
    "ci_high",
    "bootstrap_n",
    "bootstrap_skipped",
    "seed",
];

/// Full-precision log of every evaluated task.
pub fn write_eval_reports<W: Write>(w: W, reports: &[EvalReport]) -> Result<(), EvalError> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(EVAL_HEADER)?;
    for r in reports {
        wtr.write_record([
            r.task.id(),
            r.task.analyte.clone(),
            r.task.direction.to_string(),
            fmt_f64(r.task.threshold),
            r.task.unit.clone(),
            r.n_samples.to_string(),
            r.n_positive.to_string(),
            fmt_f64(r.auroc),
            fmt_f64(r.ci_low),
            fmt_f64(r.ci_high),
            r.bootstrap_n.to_string(),
            r.bootstrap_skipped.to_string(),
            r.seed.to_string(),
        ])?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_eval_reports<R: Read>(r: R) -> Result<Vec<EvalReport>, EvalError> {
    let mut rdr = csv::Reader::from_reader(r);
    let bad = |m: &str| EvalError::Malformed(m.to_string());
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row?;
        if row.len() != EVAL_HEADER.len() {
            return Err(bad("column count"));
        }
        let num = |k: usize| row[k].parse::<f64>().map_err(|_| bad(EVAL_HEADER[k]));
        let int = |k: usize| row[k].parse::<usize>().map_err(|_| bad(EVAL_HEADER[k]));
        out.push(EvalReport {
            task: TaskSpec {
                analyte: row[1].to_string(),
                direction: row[2].parse().map_err(|_| bad("direction"))?,
                threshold: num(3)?,
                unit: row[4].to_string(),
            },
            n_samples: int(5)?,
            n_positive: int(6)?,
            auroc: num(7)?,
            ci_low: num(8)?,
            ci_high: num(9)?,
            bootstrap_n: int(10)?,
            bootstrap_skipped: int(11)?,
            seed: row[12].parse().map_err(|_| bad("seed"))?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::{encode_features, Direction};
    use crate::ingest::EcgRecord;

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.2, 0.4, 0.6, 0.8], &[false, true, false, true]).unwrap(), 0.75);
        assert!(matches!(auroc(&[0.1, 0.2], &[true, true]), Err(EvalError::SingleClass)));
        assert!(matches!(auroc(&[0.1], &[true, false]), Err(EvalError::LengthMismatch(1, 2))));
    }

    #[test]
    fn bootstrap_on_separated_scores() {
        let scores: Vec<f64> = (0..40).map(|i| i as f64).collect();
        let labels: Vec<bool> = (0..40).map(|i| i >= 20).collect();
        let ci = bootstrap_ci(&scores, &labels, &BootstrapConfig { n_iter: 200, ..Default::default() }).unwrap();
        assert_eq!((ci.low, ci.high), (1.0, 1.0));
        let again = bootstrap_ci(&scores, &labels, &BootstrapConfig { n_iter: 200, ..Default::default() }).unwrap();
        assert_eq!(ci, again);
    }

    #[test]
    fn bootstrap_exhaustion() {
        // One positive among many: most resamples miss it.
        let scores: Vec<f64> = (0..200).map(|i| i as f64).collect();
        let mut labels = vec![false; 200];
        labels[5] = true;
        // Each draw has P(miss) ~ e^-1, retried 100 times: never exhausts.
        assert!(bootstrap_ci(&scores, &labels, &BootstrapConfig { n_iter: 50, ..Default::default() }).is_ok());
        assert!(matches!(
            bootstrap_ci(&scores, &labels, &BootstrapConfig { n_iter: 0, ..Default::default() }),
            Err(EvalError::InvalidConfig(_))
        ));
    }

    fn report(analyte: &str, auroc: f64) -> EvalReport {
        EvalReport {
            task: TaskSpec {
                analyte: analyte.into(),
                direction: Direction::Low,
                threshold: 6.0,
                unit: "mg/dL".into(),
            },
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
    fn macro_mean() {
        assert!((macro_auroc(&[report("a", 0.8), report("b", 0.6)]).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(macro_auroc(&[report("a", 0.91)]).unwrap(), 0.91);
        assert!(matches!(macro_auroc(&[]), Err(EvalError::EmptyInput)));
    }

    #[test]
    fn report_table_filter_and_order() {
        let t = build_report_table(&[report("a", 0.699), report("b", 0.701)], 0.70);
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].value, "b");
        assert_eq!(t.rows[0].threshold, "<6.0");

        let t = build_report_table(&[report("x", 0.775), report("y", 0.856), report("z", 0.848)], 0.70);
        let order: Vec<f64> = t.rows.iter().map(|r| r.auroc_value).collect();
        assert_eq!(order, vec![0.856, 0.848, 0.775]);

        let empty = build_report_table(&[], 0.70);
        assert!(empty.render().contains("AUROC (95% CI)"));
        let mut buf = Vec::new();
        empty.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 1);
    }

    #[test]
    fn eval_report_file_round_trip() {
        let reports = vec![report("Urea Nitrogen", 0.856), report("Creatinine", 0.742)];
        let mut buf = Vec::new();
        write_eval_reports(&mut buf, &reports).unwrap();
        assert_eq!(read_eval_reports(&buf[..]).unwrap(), reports);
    }

    fn example(age: f64, gender: Gender, race: Race, label: bool) -> LabeledExample {
        let ecg = EcgRecord {
            record_id: "r".into(),
            subject_id: "s".into(),
            timestamp: chrono::DateTime::from_timestamp(0, 0).unwrap(),
            features: [None; 9],
            age_years: age,
            gender,
            race,
        };
        LabeledExample {
            record_id: "r".into(),
            subject_id: "s".into(),
            features: encode_features(&ecg),
            label,
            lab_value: 0.0,
            pairing_gap_s: 0,
        }
    }

    #[test]
    fn age_bins_and_groups() {
        assert_eq!(AgeBin::of(49.9), AgeBin::From18To49);
        assert_eq!(AgeBin::of(64.0).label(), "50-64yo.");
        assert_eq!(AgeBin::of(65.0).label(), "65-77yo.");
        assert_eq!(AgeBin::of(78.0), AgeBin::From78);
        let labels: Vec<&str> = Category::Race.groups().iter().map(|g| g.label()).collect();
        assert_eq!(labels, ["Caucasians", "Africans", "Asians", "Latinos", "Other"]);
        assert_eq!("race:asian".parse::<Group>().unwrap(), Group::Race(Race::Asian));
        assert_eq!("age:65-77".parse::<Group>().unwrap(), Group::Age(AgeBin::From65To77));
        assert!(Group::Age(AgeBin::From50To64).contains(&example(64.0, Gender::Male, Race::Other, false)));
    }

    #[test]
    fn downsample_errors() {
        let task = report("a", 0.5).task;
        let rows = vec![
            example(30.0, Gender::Male, Race::Caucasian, false),
            example(30.0, Gender::Male, Race::Caucasian, true),
            example(30.0, Gender::Male, Race::Asian, false),
        ];
        let ds = TaskDataset::new(task, rows);
        let cau = Group::Race(Race::Caucasian);
        let asi = Group::Race(Race::Asian);
        let out = downsample_train_group(&ds, cau, asi, 1).unwrap();
        assert_eq!(out.examples.iter().filter(|e| cau.contains(e)).count(), 1);
        assert_eq!(out.len(), 2);
        assert!(matches!(
            downsample_train_group(&ds, asi, cau, 1),
            Err(EvalError::TargetLargerThanSource { source_n: 1, target: 2 })
        ));
        assert!(matches!(
            downsample_train_group(&ds, cau, Group::Race(Race::Latino), 1),
            Err(EvalError::EmptyTargetGroup)
        ));
        let same = downsample_train_group(&ds, cau, cau, 1).unwrap();
        assert_eq!(same.len(), 3);
    }
}
