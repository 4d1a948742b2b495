//! Loading and validating the ECG and laboratory tables.
//!
//! Both tables are header-named delimited text. Missing numeric cells are
//! empty or the literal `NA`; they load as `None`. Column names can be
//! remapped through [`EcgSchema`] / [`LabSchema`].

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use thiserror::Error;

/// Share of malformed rows (in percent) tolerated before a load fails.
pub const MALFORMED_TOLERANCE_PCT: usize = 1;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("{rejected} of {rows} rows malformed (first: line {first_line}: {first_message})")]
    MalformedRow {
        rows: usize,
        rejected: usize,
        first_line: u64,
        first_message: String,
    },
    #[error("duplicate record_id `{0}`")]
    DuplicateRecordId(String),
    #[error("analyte `{analyte}` has conflicting units `{first}` and `{second}`")]
    UnitConflict {
        analyte: String,
        first: String,
        second: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn as_str(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m" | "male" => Ok(Gender::Male),
            "f" | "female" => Ok(Gender::Female),
            other => Err(format!("unknown gender `{other}`")),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Race {
    Caucasian,
    African,
    Asian,
    Latino,
    Other,
}

impl Race {
    pub const ALL: [Race; 5] = [
        Race::Caucasian,
        Race::African,
        Race::Asian,
        Race::Latino,
        Race::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Race::Caucasian => "caucasian",
            Race::African => "african",
            Race::Asian => "asian",
            Race::Latino => "latino",
            Race::Other => "other",
        }
    }
}

impl FromStr for Race {
    type Err = String;

    /// Accepts the canonical names as well as the free-text categories found
    /// in hospital admission extracts ("WHITE - RUSSIAN", "BLACK/AFRICAN
    /// AMERICAN", "HISPANIC OR LATINO", ...). Anything unrecognised is Other.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        if t.is_empty() {
            return Err("empty race".to_string());
        }
        let race = if t.starts_with("caucasian") || t.starts_with("white") {
            Race::Caucasian
        } else if t.starts_with("african") || t.starts_with("black") {
            Race::African
        } else if t.starts_with("asian") {
            Race::Asian
        } else if t.starts_with("latino") || t.starts_with("hispanic") {
            Race::Latino
        } else {
            Race::Other
        };
        Ok(race)
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The nine machine-measured ECG features, in model order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EcgFeature {
    RrInterval,
    POnset,
    PEnd,
    QrsOnset,
    QrsEnd,
    TEnd,
    PAxis,
    QrsAxis,
    TAxis,
}

impl EcgFeature {
    pub const ALL: [EcgFeature; 9] = [
        EcgFeature::RrInterval,
        EcgFeature::POnset,
        EcgFeature::PEnd,
        EcgFeature::QrsOnset,
        EcgFeature::QrsEnd,
        EcgFeature::TEnd,
        EcgFeature::PAxis,
        EcgFeature::QrsAxis,
        EcgFeature::TAxis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EcgFeature::RrInterval => "rr_interval",
            EcgFeature::POnset => "p_onset",
            EcgFeature::PEnd => "p_end",
            EcgFeature::QrsOnset => "qrs_onset",
            EcgFeature::QrsEnd => "qrs_end",
            EcgFeature::TEnd => "t_end",
            EcgFeature::PAxis => "p_axis",
            EcgFeature::QrsAxis => "qrs_axis",
            EcgFeature::TAxis => "t_axis",
        }
    }

    pub fn is_axis(self) -> bool {
        matches!(
            self,
            EcgFeature::PAxis | EcgFeature::QrsAxis | EcgFeature::TAxis
        )
    }
}

/// One ECG with its measured features and the patient's demographics.
///
/// Interval features are milliseconds, axis features are degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    pub subject_id: String,
    pub timestamp: DateTime<Utc>,
    /// Indexed by [`EcgFeature::ALL`] order.
    pub features: [Option<f64>; 9],
    pub age_years: f64,
    pub gender: Gender,
    pub race: Race,
}

impl EcgRecord {
    pub fn feature(&self, f: EcgFeature) -> Option<f64> {
        self.features[f as usize]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabObservation {
    pub subject_id: String,
    pub analyte: String,
    pub value: f64,
    pub unit: String,
    pub ref_low: Option<f64>,
    pub ref_high: Option<f64>,
    pub timestamp: DateTime<Utc>,
}

/// Column names of the ECG table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EcgSchema {
    pub record_id: String,
    pub subject_id: String,
    pub timestamp: String,
    pub features: [String; 9],
    pub age: String,
    pub gender: String,
    pub race: String,
    pub delimiter: u8,
}

impl Default for EcgSchema {
    fn default() -> Self {
        EcgSchema {
            record_id: "record_id".into(),
            subject_id: "subject_id".into(),
            timestamp: "timestamp".into(),
            features: EcgFeature::ALL.map(|f| f.name().to_string()),
            age: "age".into(),
            gender: "gender".into(),
            race: "race".into(),
            delimiter: b',',
        }
    }
}

impl EcgSchema {
    /// Points the logical field `field` (a default column name) at `column`.
    /// Returns false if `field` is not a known field.
    pub fn remap(&mut self, field: &str, column: &str) -> bool {
        let slot = match field {
            "record_id" => &mut self.record_id,
            "subject_id" => &mut self.subject_id,
            "timestamp" => &mut self.timestamp,
            "age" => &mut self.age,
            "gender" => &mut self.gender,
            "race" => &mut self.race,
            other => match EcgFeature::ALL.iter().position(|f| f.name() == other) {
                Some(i) => &mut self.features[i],
                None => return false,
            },
        };
        *slot = column.to_string();
        true
    }
}

/// Column names of the laboratory table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabSchema {
    pub subject_id: String,
    pub analyte: String,
    pub value: String,
    pub unit: String,
    pub ref_low: String,
    pub ref_high: String,
    pub timestamp: String,
    pub delimiter: u8,
}

impl Default for LabSchema {
    fn default() -> Self {
        LabSchema {
            subject_id: "subject_id".into(),
            analyte: "analyte".into(),
            value: "value".into(),
            unit: "unit".into(),
            ref_low: "ref_low".into(),
            ref_high: "ref_high".into(),
            timestamp: "timestamp".into(),
            delimiter: b',',
        }
    }
}

impl LabSchema {
    pub fn remap(&mut self, field: &str, column: &str) -> bool {
        let slot = match field {
            "subject_id" => &mut self.subject_id,
            "analyte" => &mut self.analyte,
            "value" => &mut self.value,
            "unit" => &mut self.unit,
            "ref_low" => &mut self.ref_low,
            "ref_high" => &mut self.ref_high,
            "timestamp" => &mut self.timestamp,
            _ => return false,
        };
        *slot = column.to_string();
        true
    }
}

/// A row that failed validation. `line` is 1-based and counts the header.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RejectedRow {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct EcgTable {
    pub records: Vec<EcgRecord>,
    pub rejected: Vec<RejectedRow>,
}

/// Lab observations, indexed by `(subject_id, analyte)` in timestamp order.
#[derive(Debug, Clone)]
pub struct LabTable {
    pub observations: Vec<LabObservation>,
    pub rejected: Vec<RejectedRow>,
    index: BTreeMap<(String, String), Vec<usize>>,
    units: BTreeMap<String, String>,
}

impl LabTable {
    /// Builds the index and checks unit consistency per analyte.
    pub fn new(
        observations: Vec<LabObservation>,
        rejected: Vec<RejectedRow>,
    ) -> Result<Self, IngestError> {
        let mut units: BTreeMap<String, String> = BTreeMap::new();
        let mut index: BTreeMap<(String, String), Vec<usize>> = BTreeMap::new();
        for (i, obs) in observations.iter().enumerate() {
            match units.get(&obs.analyte) {
                Some(u) if *u != obs.unit => {
                    return Err(IngestError::UnitConflict {
                        analyte: obs.analyte.clone(),
                        first: u.clone(),
                        second: obs.unit.clone(),
                    })
                }
                Some(_) => {}
                None => {
                    units.insert(obs.analyte.clone(), obs.unit.clone());
                }
            }
            index
                .entry((obs.subject_id.clone(), obs.analyte.clone()))
                .or_default()
                .push(i);
        }
        // Stable: equal timestamps keep input order.
        for idx in index.values_mut() {
            idx.sort_by_key(|&i| observations[i].timestamp);
        }
        Ok(LabTable {
            observations,
            rejected,
            index,
            units,
        })
    }

    /// Observations of `analyte` for `subject`, sorted by timestamp.
    pub fn for_subject<'a>(
        &'a self,
        subject: &str,
        analyte: &str,
    ) -> impl Iterator<Item = &'a LabObservation> + 'a {
        self.index
            .get(&(subject.to_string(), analyte.to_string()))
            .into_iter()
            .flatten()
            .map(move |&i| &self.observations[i])
    }

    /// Distinct analytes in name order.
    pub fn analytes(&self) -> impl Iterator<Item = &str> {
        self.units.keys().map(String::as_str)
    }

    pub fn unit(&self, analyte: &str) -> Option<&str> {
        self.units.get(analyte).map(String::as_str)
    }

    pub fn observations_of<'a>(
        &'a self,
        analyte: &'a str,
    ) -> impl Iterator<Item = &'a LabObservation> + 'a {
        self.observations.iter().filter(move |o| o.analyte == analyte)
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize, IngestError> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| IngestError::MissingColumn(name.to_string()))
}

fn is_missing(cell: &str) -> bool {
    let t = cell.trim();
    t.is_empty() || t == "NA"
}

fn parse_number(cell: &str, column: &str) -> Result<f64, String> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| format!("column `{column}`: cannot parse `{cell}` as a number"))?;
    if !v.is_finite() {
        return Err(format!("column `{column}`: non-finite value `{cell}`"));
    }
    Ok(v)
}

fn parse_optional(cell: &str, column: &str) -> Result<Option<f64>, String> {
    if is_missing(cell) {
        Ok(None)
    } else {
        parse_number(cell, column).map(Some)
    }
}

/// Parses an ISO-8601 timestamp. Values without an offset are taken as UTC;
/// sub-second precision is truncated.
pub fn parse_timestamp(cell: &str) -> Result<DateTime<Utc>, String> {
    let t = cell.trim();
    let parsed = if let Ok(dt) = DateTime::parse_from_rfc3339(t) {
        dt.with_timezone(&Utc)
    } else if let Ok(ndt) = NaiveDateTime::parse_from_str(t, "%Y-%m-%dT%H:%M:%S%.f") {
        ndt.and_utc()
    } else if let Ok(ndt) = NaiveDateTime::parse_from_str(t, "%Y-%m-%d %H:%M:%S%.f") {
        ndt.and_utc()
    } else if let Ok(d) = NaiveDate::parse_from_str(t, "%Y-%m-%d") {
        d.and_hms_opt(0, 0, 0).expect("midnight").and_utc()
    } else {
        return Err(format!("cannot parse timestamp `{t}`"));
    };
    DateTime::from_timestamp(parsed.timestamp(), 0).ok_or_else(|| format!("timestamp out of range `{t}`"))
}

pub fn format_timestamp(ts: &DateTime<Utc>) -> String {
    ts.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Shortest decimal that parses back to the same `f64`.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn check_tolerance(rows: usize, rejected: &[RejectedRow]) -> Result<(), IngestError> {
    if rejected.len() * 100 > rows * MALFORMED_TOLERANCE_PCT {
        let first = &rejected[0];
        return Err(IngestError::MalformedRow {
            rows,
            rejected: rejected.len(),
            first_line: first.line,
            first_message: first.message.clone(),
        });
    }
    Ok(())
}

fn open(path: &Path) -> Result<std::fs::File, IngestError> {
    std::fs::File::open(path).map_err(|source| IngestError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn reader<R: Read>(rdr: R, delimiter: u8) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(rdr)
}

pub fn load_ecg_table(path: &Path, schema: &EcgSchema) -> Result<EcgTable, IngestError> {
    read_ecg_table(open(path)?, schema)
}

pub fn read_ecg_table<R: Read>(rdr: R, schema: &EcgSchema) -> Result<EcgTable, IngestError> {
    let mut rdr = reader(rdr, schema.delimiter);
    let headers = rdr.headers()?.clone();
    let c_record = column_index(&headers, &schema.record_id)?;
    let c_subject = column_index(&headers, &schema.subject_id)?;
    let c_time = column_index(&headers, &schema.timestamp)?;
    let mut c_features = [0usize; 9];
    for (slot, name) in c_features.iter_mut().zip(&schema.features) {
        *slot = column_index(&headers, name)?;
    }
    let c_age = column_index(&headers, &schema.age)?;
    let c_gender = column_index(&headers, &schema.gender)?;
    let c_race = column_index(&headers, &schema.race)?;

    let mut records = Vec::new();
    let mut rejected = Vec::new();
    let mut seen = HashSet::new();
    let mut rows = 0usize;
    for (i, row) in rdr.records().enumerate() {
        rows += 1;
        let line = i as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RejectedRow {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let cell = |c: usize| row.get(c).unwrap_or("");
        let parsed = (|| -> Result<EcgRecord, String> {
            let record_id = cell(c_record).trim().to_string();
            let subject_id = cell(c_subject).trim().to_string();
            if record_id.is_empty() || subject_id.is_empty() {
                return Err("empty record_id or subject_id".into());
            }
            let timestamp = parse_timestamp(cell(c_time))?;
            let mut features = [None; 9];
            for (k, f) in EcgFeature::ALL.iter().enumerate() {
                let v = parse_optional(cell(c_features[k]), f.name())?;
                if let Some(v) = v {
                    if f.is_axis() {
                        if !(-360.0..=360.0).contains(&v) {
                            return Err(format!("{} = {v} outside [-360, 360]", f.name()));
                        }
                    } else if v < 0.0 {
                        return Err(format!("{} = {v} is negative", f.name()));
                    }
                }
                features[k] = v;
            }
            let age_years = parse_number(cell(c_age), "age")?;
            if !(18.0..=120.0).contains(&age_years) {
                return Err(format!("age {age_years} outside [18, 120]"));
            }
            let gender = cell(c_gender).parse()?;
            let race = cell(c_race).parse()?;
            Ok(EcgRecord {
                record_id,
                subject_id,
                timestamp,
                features,
                age_years,
                gender,
                race,
            })
        })();
        match parsed {
            Ok(rec) => {
                if !seen.insert(rec.record_id.clone()) {
                    return Err(IngestError::DuplicateRecordId(rec.record_id));
                }
                records.push(rec);
            }
            Err(message) => rejected.push(RejectedRow { line, message }),
        }
    }
    check_tolerance(rows, &rejected)?;
    Ok(EcgTable { records, rejected })
}

pub fn load_lab_table(path: &Path, schema: &LabSchema) -> Result<LabTable, IngestError> {
    read_lab_table(open(path)?, schema)
}

pub fn read_lab_table<R: Read>(rdr: R, schema: &LabSchema) -> Result<LabTable, IngestError> {
    let mut rdr = reader(rdr, schema.delimiter);
    let headers = rdr.headers()?.clone();
    let c_subject = column_index(&headers, &schema.subject_id)?;
    let c_analyte = column_index(&headers, &schema.analyte)?;
    let c_value = column_index(&headers, &schema.value)?;
    let c_unit = column_index(&headers, &schema.unit)?;
    let c_low = column_index(&headers, &schema.ref_low)?;
    let c_high = column_index(&headers, &schema.ref_high)?;
    let c_time = column_index(&headers, &schema.timestamp)?;

    let mut observations = Vec::new();
    let mut rejected = Vec::new();
    let mut rows = 0usize;
    for (i, row) in rdr.records().enumerate() {
        rows += 1;
        let line = i as u64 + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                rejected.push(RejectedRow {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let cell = |c: usize| row.get(c).unwrap_or("");
        let parsed = (|| -> Result<LabObservation, String> {
            let subject_id = cell(c_subject).trim().to_string();
            let analyte = cell(c_analyte).trim().to_string();
            if subject_id.is_empty() || analyte.is_empty() {
                return Err("empty subject_id or analyte".into());
            }
            let value = parse_number(cell(c_value), "value")?;
            let ref_low = parse_optional(cell(c_low), "ref_low")?;
            let ref_high = parse_optional(cell(c_high), "ref_high")?;
            if let (Some(lo), Some(hi)) = (ref_low, ref_high) {
                if lo > hi {
                    return Err(format!("ref_low {lo} > ref_high {hi}"));
                }
            }
            Ok(LabObservation {
                subject_id,
                analyte,
                value,
                unit: cell(c_unit).trim().to_string(),
                ref_low,
                ref_high,
                timestamp: parse_timestamp(cell(c_time))?,
            })
        })();
        match parsed {
            Ok(obs) => observations.push(obs),
            Err(message) => rejected.push(RejectedRow { line, message }),
        }
    }
    check_tolerance(rows, &rejected)?;
    LabTable::new(observations, rejected)
}

fn writer<W: Write>(w: W, delimiter: u8) -> csv::Writer<W> {
    csv::WriterBuilder::new().delimiter(delimiter).from_writer(w)
}

/// Writes records under `schema`'s column names, in the default column order.
pub fn write_ecg_table<W: Write>(
    w: W,
    records: &[EcgRecord],
    schema: &EcgSchema,
) -> Result<(), IngestError> {
    let mut wtr = writer(w, schema.delimiter);
    let mut header = vec![
        schema.record_id.as_str(),
        schema.subject_id.as_str(),
        schema.timestamp.as_str(),
    ];
    header.extend(schema.features.iter().map(String::as_str));
    header.extend([schema.age.as_str(), schema.gender.as_str(), schema.race.as_str()]);
    wtr.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.record_id.clone(),
            r.subject_id.clone(),
            format_timestamp(&r.timestamp),
        ];
        row.extend(r.features.iter().map(|v| fmt_opt(*v)));
        row.push(fmt_f64(r.age_years));
        row.push(r.gender.to_string());
        row.push(r.race.to_string());
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|source| IngestError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}

pub fn write_lab_table<W: Write>(
    w: W,
    observations: &[LabObservation],
    schema: &LabSchema,
) -> Result<(), IngestError> {
    let mut wtr = writer(w, schema.delimiter);
    wtr.write_record([
        &schema.subject_id,
        &schema.analyte,
        &schema.value,
        &schema.unit,
        &schema.ref_low,
        &schema.ref_high,
        &schema.timestamp,
    ])?;
    for o in observations {
        wtr.write_record([
            o.subject_id.clone(),
            o.analyte.clone(),
            fmt_f64(o.value),
            o.unit.clone(),
            fmt_opt(o.ref_low),
            fmt_opt(o.ref_high),
            format_timestamp(&o.timestamp),
        ])?;
    }
    wtr.flush().map_err(|source| IngestError::Io {
        path: "<writer>".into(),
        source,
    })?;
    Ok(())
}
