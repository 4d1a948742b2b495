//! Seeded synthetic cohorts with known feature–label dependence.
//!
//! Each analyte's value is driven by a latent score
//! `u = s * z + (1 - s) * noise`, where `z` is the standardized mean of the
//! analyte's driver features and `s` its signal strength. Values are placed
//! by the rank of `u` so that the configured shares fall below `ref_low` and
//! above `ref_high`; labels then come out of the ordinary median-threshold
//! path in [`crate::cohort`].

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::DateTime;
use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::cohort::{encode_features, FEATURE_NAMES, NUM_FEATURES};
use crate::config::{ConfigError, KvConfig};
use crate::eval::auroc;
use crate::ingest::{
    fmt_f64, write_ecg_table, write_lab_table, EcgRecord, EcgSchema, Gender, IngestError, LabObservation, LabSchema,
    Race,
};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synth config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalyteSpec {
    pub name: String,
    pub unit: String,
    pub ref_low: f64,
    pub ref_high: f64,
    /// Target share of observations below `ref_low`.
    pub low_prevalence: f64,
    /// Target share of observations above `ref_high`.
    pub high_prevalence: f64,
    /// 0: labels independent of features. 1: labels a deterministic function
    /// of the drivers.
    pub signal_strength: f64,
    /// Indices into [`FEATURE_NAMES`].
    pub drivers: Vec<usize>,
}

impl AnalyteSpec {
    /// `name | unit | ref_low | ref_high | low_prev | high_prev | signal | driver,driver`
    pub fn parse(line: &str) -> Result<Self, SynthError> {
        let bad = |m: &str| SynthError::InvalidConfig(format!("analyte `{line}`: {m}"));
        let parts: Vec<&str> = line.split('|').map(str::trim).collect();
        if parts.len() != 8 {
            return Err(bad("expected 8 `|`-separated fields"));
        }
        let num = |k: usize| parts[k].parse::<f64>().map_err(|_| bad("bad number"));
        let drivers = parts[7]
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|d| FEATURE_NAMES.iter().position(|f| *f == d).ok_or_else(|| bad("unknown driver")))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(AnalyteSpec {
            name: parts[0].to_string(),
            unit: parts[1].to_string(),
            ref_low: num(2)?,
            ref_high: num(3)?,
            low_prevalence: num(4)?,
            high_prevalence: num(5)?,
            signal_strength: num(6)?,
            drivers,
        })
    }

    pub fn render(&self) -> String {
        let drivers: Vec<&str> = self.drivers.iter().map(|&d| FEATURE_NAMES[d]).collect();
        format!(
            "{} | {} | {} | {} | {} | {} | {} | {}",
            self.name,
            self.unit,
            fmt_f64(self.ref_low),
            fmt_f64(self.ref_high),
            fmt_f64(self.low_prevalence),
            fmt_f64(self.high_prevalence),
            fmt_f64(self.signal_strength),
            drivers.join(",")
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_subjects: usize,
    /// Inclusive range of ECGs per subject.
    pub ecgs_per_subject: (usize, usize),
    pub analytes: Vec<AnalyteSpec>,
    /// Probability that an ECG gets an observation of a given analyte.
    pub lab_coverage: f64,
    /// In-horizon observations fall uniformly within this many seconds.
    pub max_gap_s: i64,
    /// Share of observations placed 2 to 6 hours from their ECG.
    pub far_gap_rate: f64,
    /// Per ECG-feature missingness.
    pub missing_rate: f64,
    /// Share of observations whose reference bounds are perturbed by ±10%.
    pub ref_jitter_rate: f64,
    pub male_fraction: f64,
    /// Caucasian, African, Asian, Latino, Other.
    pub race_weights: [f64; 5],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let idx = |name: &str| FEATURE_NAMES.iter().position(|f| *f == name).expect("feature");
        SynthConfig {
            n_subjects: 2000,
            ecgs_per_subject: (1, 3),
            analytes: vec![
                AnalyteSpec {
                    name: "Urea Nitrogen".into(),
                    unit: "mg/dL".into(),
                    ref_low: 6.0,
                    ref_high: 20.0,
                    low_prevalence: 0.2,
                    high_prevalence: 0.3,
                    signal_strength: 0.8,
                    drivers: vec![idx("t_end"), idx("t_axis")],
                },
                AnalyteSpec {
                    name: "Potassium".into(),
                    unit: "mEq/L".into(),
                    ref_low: 3.3,
                    ref_high: 5.1,
                    low_prevalence: 0.2,
                    high_prevalence: 0.2,
                    signal_strength: 0.6,
                    drivers: vec![idx("qrs_axis")],
                },
                AnalyteSpec {
                    name: "Hemoglobin".into(),
                    unit: "g/dL".into(),
                    ref_low: 12.0,
                    ref_high: 17.5,
                    low_prevalence: 0.3,
                    high_prevalence: 0.2,
                    signal_strength: 0.5,
                    drivers: vec![idx("rr_interval"), idx("age")],
                },
            ],
            lab_coverage: 0.9,
            max_gap_s: 1800,
            far_gap_rate: 0.05,
            missing_rate: 0.05,
            ref_jitter_rate: 0.2,
            male_fraction: 0.5,
            // Appendix demographic table sample counts.
            race_weights: [157_926.0, 40_205.0, 7_295.0, 13_842.0, 17_306.0],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_subjects < 20 {
            return bad(format!("n_subjects {} < 20", self.n_subjects));
        }
        let (lo, hi) = self.ecgs_per_subject;
        if lo == 0 || lo > hi {
            return bad(format!("ecgs_per_subject {lo}-{hi}"));
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !unit(self.lab_coverage) || !unit(self.far_gap_rate) || !unit(self.missing_rate) {
            return bad("rates must lie in [0, 1]".into());
        }
        if !unit(self.ref_jitter_rate) || self.ref_jitter_rate >= 0.5 || !unit(self.male_fraction) {
            return bad("ref_jitter_rate must be < 0.5 and male_fraction in [0, 1]".into());
        }
        if self.max_gap_s < 0 || self.race_weights.iter().any(|w| *w < 0.0) || self.race_weights.iter().sum::<f64>() <= 0.0 {
            return bad("max_gap_s and race weights must be non-negative".into());
        }
        for a in &self.analytes {
            if !(a.ref_low < a.ref_high) {
                return bad(format!("{}: ref_low must be < ref_high", a.name));
            }
            if !(a.low_prevalence > 0.0 && a.high_prevalence > 0.0 && a.low_prevalence + a.high_prevalence < 1.0) {
                return bad(format!("{}: prevalences must be positive and sum below 1", a.name));
            }
            if !unit(a.signal_strength) {
                return bad(format!("{}: signal_strength outside [0, 1]", a.name));
            }
            if a.drivers.is_empty() {
                return bad(format!("{}: needs at least one driver", a.name));
            }
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 12] = [
        "n_subjects",
        "ecgs_per_subject",
        "analyte",
        "lab_coverage",
        "max_gap_s",
        "far_gap_rate",
        "missing_rate",
        "ref_jitter_rate",
        "male_fraction",
        "race_weights",
        "seed",
        "default_analytes",
    ];

    /// Overlays a key-value file on the defaults. Any `analyte` line replaces
    /// the default analyte list.
    pub fn from_kv(kv: &KvConfig) -> Result<Self, SynthError> {
        kv.check_keys(&Self::KEYS)?;
        let mut c = SynthConfig::default();
        macro_rules! take {
            ($key:literal, $field:expr) => {
                if let Some(v) = kv.get_parsed($key)? {
                    $field = v;
                }
            };
        }
        take!("n_subjects", c.n_subjects);
        take!("lab_coverage", c.lab_coverage);
        take!("max_gap_s", c.max_gap_s);
        take!("far_gap_rate", c.far_gap_rate);
        take!("missing_rate", c.missing_rate);
        take!("ref_jitter_rate", c.ref_jitter_rate);
        take!("male_fraction", c.male_fraction);
        take!("seed", c.seed);
        if let Some(r) = kv.get("ecgs_per_subject") {
            let (a, b) = r.split_once('-').unwrap_or((r, r));
            c.ecgs_per_subject = (
                a.trim().parse().map_err(|_| SynthError::InvalidConfig(format!("ecgs_per_subject `{r}`")))?,
                b.trim().parse().map_err(|_| SynthError::InvalidConfig(format!("ecgs_per_subject `{r}`")))?,
            );
        }
        if let Some(r) = kv.get("race_weights") {
            let w: Vec<f64> = r
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| SynthError::InvalidConfig(format!("race_weights `{r}`")))?;
            c.race_weights = w
                .try_into()
                .map_err(|_| SynthError::InvalidConfig("race_weights needs 5 values".into()))?;
        }
        let analytes: Vec<AnalyteSpec> = kv.get_all("analyte").map(AnalyteSpec::parse).collect::<Result<_, _>>()?;
        if !analytes.is_empty() {
            c.analytes = analytes;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::default();
        kv.push("seed", self.seed.to_string());
        kv.push("n_subjects", self.n_subjects.to_string());
        kv.push("ecgs_per_subject", format!("{}-{}", self.ecgs_per_subject.0, self.ecgs_per_subject.1));
        kv.push("lab_coverage", fmt_f64(self.lab_coverage));
        kv.push("max_gap_s", self.max_gap_s.to_string());
        kv.push("far_gap_rate", fmt_f64(self.far_gap_rate));
        kv.push("missing_rate", fmt_f64(self.missing_rate));
        kv.push("ref_jitter_rate", fmt_f64(self.ref_jitter_rate));
        kv.push("male_fraction", fmt_f64(self.male_fraction));
        let w: Vec<String> = self.race_weights.iter().map(|&x| fmt_f64(x)).collect();
        kv.push("race_weights", w.join(","));
        for a in &self.analytes {
            kv.push("analyte", a.render());
        }
        kv
    }
}

/// Ground truth for one analyte.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyteTruth {
    pub spec: AnalyteSpec,
    pub n_observations: usize,
    /// Share of observations below / above the reference medians.
    pub prevalence_low: f64,
    pub prevalence_high: f64,
    /// AUROC of the true abnormality probability against the labels: the
    /// best any model can do on this cohort.
    pub oracle_auroc_low: f64,
    pub oracle_auroc_high: f64,
    /// `(record_id, p_low, p_high)` for every ECG that received an observation.
    pub latent: Vec<(String, f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct SynthCohort {
    pub ecgs: Vec<EcgRecord>,
    pub labs: Vec<LabObservation>,
    pub truth: Vec<AnalyteTruth>,
    pub config: SynthConfig,
}

const FEATURE_MEAN: [f64; 9] = [850.0, 40.0, 150.0, 200.0, 290.0, 600.0, 50.0, 20.0, 45.0];
const FEATURE_SD: [f64; 9] = [180.0, 15.0, 20.0, 20.0, 25.0, 50.0, 25.0, 40.0, 45.0];
const BASE_EPOCH: i64 = 5_680_281_600; // 2150-01-01T00:00:00Z

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Generates a cohort. Output is a pure function of `config`.
pub fn generate(config: &SynthConfig) -> Result<SynthCohort, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let race_dist = WeightedIndex::new(config.race_weights).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
    let width = (config.n_subjects - 1).to_string().len();

    // ECGs with their complete (pre-missingness) feature vectors.
    let mut ecgs = Vec::new();
    let mut full: Vec<[Option<f64>; NUM_FEATURES]> = Vec::new();
    for s in 0..config.n_subjects {
        let subject_id = format!("S{s:0width$}");
        let gender = if rng.gen_bool(config.male_fraction) { Gender::Male } else { Gender::Female };
        let race = Race::ALL[race_dist.sample(&mut rng)];
        let base_age: f64 = rng.gen_range(18.0..92.0);
        let n_ecg = rng.gen_range(config.ecgs_per_subject.0..=config.ecgs_per_subject.1);
        let mut t = BASE_EPOCH + rng.gen_range(0..5 * 365 * 86_400);
        let start = t;
        for k in 0..n_ecg {
            if k > 0 {
                t += rng.gen_range(3 * 86_400..400 * 86_400);
            }
            let mut features = [None; 9];
            for (j, slot) in features.iter_mut().enumerate() {
                let mut v = FEATURE_MEAN[j] + FEATURE_SD[j] * normal(&mut rng);
                v = if j >= 6 { v.clamp(-180.0, 180.0) } else { v.max(0.0) };
                *slot = Some(v);
            }
            let age = (base_age + (t - start) as f64 / (365.25 * 86_400.0)).floor().min(120.0);
            let rec = EcgRecord {
                record_id: format!("{subject_id}-E{k}"),
                subject_id: subject_id.clone(),
                timestamp: DateTime::from_timestamp(t, 0).expect("timestamp in range"),
                features,
                age_years: age,
                gender,
                race,
            };
            full.push(encode_features(&rec));
            ecgs.push(rec);
        }
    }

    // Standardized driver scores use the cohort's own moments.
    let mut mean = [0.0; NUM_FEATURES];
    let mut sd = [0.0; NUM_FEATURES];
    for j in 0..NUM_FEATURES {
        let vals: Vec<f64> = full.iter().map(|r| r[j].unwrap_or(0.0)).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / vals.len() as f64;
        mean[j] = m;
        sd[j] = if v > 0.0 { v.sqrt() } else { 1.0 };
    }

    let gauss = std_normal();
    let mut labs = Vec::new();
    let mut truth = Vec::new();
    for a in &config.analytes {
        let s = a.signal_strength;
        let k = (a.drivers.len() as f64).sqrt();
        // (ecg index, driver score, latent)
        let mut draws: Vec<(usize, f64, f64)> = Vec::new();
        for (i, row) in full.iter().enumerate() {
            let z: f64 = a.drivers.iter().map(|&d| (row[d].unwrap_or(0.0) - mean[d]) / sd[d]).sum::<f64>() / k;
            let noise = normal(&mut rng);
            if rng.gen_bool(config.lab_coverage) {
                draws.push((i, z, s * z + (1.0 - s) * noise));
            }
        }
        let m = draws.len();
        if m == 0 {
            return Err(SynthError::InvalidConfig(format!("{}: no observations drawn", a.name)));
        }
        let mut order: Vec<usize> = (0..m).collect();
        order.sort_by(|&x, &y| draws[x].2.total_cmp(&draws[y].2));
        let mut rank = vec![0usize; m];
        for (r, &i) in order.iter().enumerate() {
            rank[i] = r;
        }
        let z_low = gauss.inverse_cdf(a.low_prevalence);
        let z_high = gauss.inverse_cdf(1.0 - a.high_prevalence);
        let scale = (a.ref_high - a.ref_low) / (z_high - z_low);
        // Latent cut points matching the rank placement.
        let n_low = (0..m).filter(|&i| gauss.inverse_cdf((rank[i] as f64 + 0.5) / m as f64) < z_low).count();
        let n_high = (0..m).filter(|&i| gauss.inverse_cdf((rank[i] as f64 + 0.5) / m as f64) > z_high).count();
        let cut_low = if n_low == 0 { f64::NEG_INFINITY } else { (draws[order[n_low - 1]].2 + draws[order[n_low.min(m - 1)]].2) / 2.0 };
        let cut_high = if n_high == 0 { f64::INFINITY } else { (draws[order[m - n_high]].2 + draws[order[(m - n_high).saturating_sub(1)]].2) / 2.0 };

        let mut latent = Vec::with_capacity(m);
        let mut labels_low = Vec::with_capacity(m);
        let mut labels_high = Vec::with_capacity(m);
        let mut p_lows = Vec::with_capacity(m);
        let mut p_highs = Vec::with_capacity(m);
        for (idx, &(i, z, _)) in draws.iter().enumerate() {
            let t_score = gauss.inverse_cdf((rank[idx] as f64 + 0.5) / m as f64);
            let value = a.ref_low + (t_score - z_low) * scale;
            let ecg = &ecgs[i];
            let gap = if rng.gen_bool(config.far_gap_rate) {
                let g = rng.gen_range(7_200..=21_600);
                if rng.gen_bool(0.5) { g } else { -g }
            } else {
                rng.gen_range(-config.max_gap_s..=config.max_gap_s)
            };
            let (ref_low, ref_high) = if rng.gen_bool(config.ref_jitter_rate) {
                let f = if rng.gen_bool(0.5) { 1.1 } else { 0.9 };
                (a.ref_low * f, a.ref_high * f)
            } else {
                (a.ref_low, a.ref_high)
            };
            labs.push(LabObservation {
                subject_id: ecg.subject_id.clone(),
                analyte: a.name.clone(),
                value,
                unit: a.unit.clone(),
                ref_low: Some(ref_low),
                ref_high: Some(ref_high),
                timestamp: DateTime::from_timestamp(ecg.timestamp.timestamp() + gap, 0).expect("timestamp in range"),
            });
            let (p_low, p_high) = if s >= 1.0 {
                (f64::from(z < cut_low), f64::from(z > cut_high))
            } else {
                let sigma = 1.0 - s;
                (
                    gauss.cdf((cut_low - s * z) / sigma),
                    1.0 - gauss.cdf((cut_high - s * z) / sigma),
                )
            };
            latent.push((ecg.record_id.clone(), p_low, p_high));
            labels_low.push(value < a.ref_low);
            labels_high.push(value > a.ref_high);
            p_lows.push(p_low);
            p_highs.push(p_high);
        }
        let share = |l: &[bool]| l.iter().filter(|&&x| x).count() as f64 / m as f64;
        truth.push(AnalyteTruth {
            spec: a.clone(),
            n_observations: m,
            prevalence_low: share(&labels_low),
            prevalence_high: share(&labels_high),
            oracle_auroc_low: auroc(&p_lows, &labels_low).unwrap_or(f64::NAN),
            oracle_auroc_high: auroc(&p_highs, &labels_high).unwrap_or(f64::NAN),
            latent,
        });
    }

    // Missingness is applied last so it does not touch the latent scores.
    for ecg in &mut ecgs {
        for v in ecg.features.iter_mut() {
            if rng.gen_bool(config.missing_rate) {
                *v = None;
            }
        }
    }

    Ok(SynthCohort {
        ecgs,
        labs,
        truth,
        config: config.clone(),
    })
}

/// Paths written by [`write_cohort`].
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub ecg: PathBuf,
    pub labs: PathBuf,
    pub manifest: PathBuf,
    pub latent: PathBuf,
}

/// Writes `ecg.csv`, `labs.csv`, `truth.txt` (key-value) and `latent.csv`.
pub fn write_cohort(dir: &Path, cohort: &SynthCohort) -> Result<SynthFiles, SynthError> {
    fs::create_dir_all(dir)?;
    let files = SynthFiles {
        ecg: dir.join("ecg.csv"),
        labs: dir.join("labs.csv"),
        manifest: dir.join("truth.txt"),
        latent: dir.join("latent.csv"),
    };
    let mut buf = Vec::new();
    write_ecg_table(&mut buf, &cohort.ecgs, &EcgSchema::default())?;
    fs::write(&files.ecg, &buf)?;
    buf.clear();
    write_lab_table(&mut buf, &cohort.labs, &LabSchema::default())?;
    fs::write(&files.labs, &buf)?;

    let mut kv = cohort.config.to_kv();
    kv.push("latent_file", "latent.csv");
    kv.push("n_ecgs", cohort.ecgs.len().to_string());
    kv.push("n_observations", cohort.labs.len().to_string());
    for (i, t) in cohort.truth.iter().enumerate() {
        let p = format!("truth.{i}.");
        let drivers: Vec<&str> = t.spec.drivers.iter().map(|&d| FEATURE_NAMES[d]).collect();
        kv.push(&format!("{p}analyte"), t.spec.name.clone());
        kv.push(&format!("{p}drivers"), drivers.join(","));
        kv.push(&format!("{p}signal_strength"), fmt_f64(t.spec.signal_strength));
        kv.push(&format!("{p}n_observations"), t.n_observations.to_string());
        kv.push(&format!("{p}prevalence_low"), fmt_f64(t.prevalence_low));
        kv.push(&format!("{p}prevalence_high"), fmt_f64(t.prevalence_high));
        kv.push(&format!("{p}oracle_auroc_low"), fmt_f64(t.oracle_auroc_low));
        kv.push(&format!("{p}oracle_auroc_high"), fmt_f64(t.oracle_auroc_high));
    }
    fs::write(&files.manifest, kv.render())?;

    let mut latent = String::from("record_id,analyte,p_low,p_high\n");
    for t in &cohort.truth {
        for (rid, lo, hi) in &t.latent {
            let _ = writeln!(latent, "{rid},{},{},{}", t.spec.name, fmt_f64(*lo), fmt_f64(*hi));
        }
    }
    fs::write(&files.latent, latent)?;
    Ok(files)
}

/// Scores from the binormal model: negatives ~ N(0, 1), positives ~ N(d, 1)
/// with `d = sqrt(2) * Phi^-1(auroc)`, so the population AUROC is `auroc`.
/// Returns scores and labels with positives first.
pub fn binormal_scores(n_pos: usize, n_neg: usize, population_auroc: f64, rng: &mut impl Rng) -> (Vec<f64>, Vec<bool>) {
    let d = std::f64::consts::SQRT_2 * std_normal().inverse_cdf(population_auroc);
    let mut scores = Vec::with_capacity(n_pos + n_neg);
    let mut labels = Vec::with_capacity(n_pos + n_neg);
    for _ in 0..n_pos {
        scores.push(d + rng.sample::<f64, _>(StandardNormal));
        labels.push(true);
    }
    for _ in 0..n_neg {
        scores.push(rng.sample::<f64, _>(StandardNormal));
        labels.push(false);
    }
    (scores, labels)
}
