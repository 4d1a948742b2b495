//! Text serialization of [`StumpEnsemble`].
//!
//! ```text
//! ecglab-stump-ensemble
//! schema_version 1
//! feature_names <name>,<name>,...
//! base_score <f64>
//! learning_rate <f64>
//! training_config <canonical config>
//! training_config_digest <hex sha256>
//! stumps <count>
//! <feature_index> <threshold> <L|R> <left_value> <right_value>    (one line per stump)
//! end
//! ```
//!
//! Numbers are written with Rust's shortest round-trip `{:?}` formatting, so a
//! reload reproduces every `f64` bit for bit. Lines end in `\n`.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::ensemble::StumpEnsemble;
use super::stump::Stump;
use super::GbdtError;

pub const MAGIC: &str = "ecglab-stump-ensemble";
pub const SCHEMA_VERSION: u32 = 1;

pub fn write_model<W: Write>(mut w: W, m: &StumpEnsemble) -> std::io::Result<()> {
    writeln!(w, "{MAGIC}")?;
    writeln!(w, "schema_version {SCHEMA_VERSION}")?;
    writeln!(w, "feature_names {}", m.feature_names.join(","))?;
    writeln!(w, "base_score {:?}", m.base_score)?;
    writeln!(w, "learning_rate {:?}", m.learning_rate)?;
    writeln!(w, "training_config {}", m.training_config)?;
    writeln!(w, "training_config_digest {}", m.training_config_digest)?;
    writeln!(w, "stumps {}", m.stumps.len())?;
    for s in &m.stumps {
        writeln!(
            w,
            "{} {:?} {} {:?} {:?}",
            s.feature_index,
            s.threshold,
            if s.missing_goes_left { 'L' } else { 'R' },
            s.left_value,
            s.right_value
        )?;
    }
    writeln!(w, "end")?;
    w.flush()
}

pub fn save_model(m: &StumpEnsemble, path: &Path) -> Result<(), GbdtError> {
    let mut buf = Vec::new();
    write_model(&mut buf, m)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<StumpEnsemble, GbdtError> {
    read_model(fs::File::open(path)?)
}

fn corrupt(msg: impl Into<String>) -> GbdtError {
    GbdtError::CorruptModel(msg.into())
}

fn parse_f64(s: &str, what: &str) -> Result<f64, GbdtError> {
    let v: f64 = s.parse().map_err(|_| corrupt(format!("bad {what} `{s}`")))?;
    if !v.is_finite() {
        return Err(corrupt(format!("non-finite {what}")));
    }
    Ok(v)
}

pub fn read_model<R: Read>(r: R) -> Result<StumpEnsemble, GbdtError> {
    let mut lines = BufReader::new(r).lines();
    let mut next = || -> Result<String, GbdtError> {
        match lines.next() {
            Some(l) => Ok(l?),
            None => Err(corrupt("unexpected end of file")),
        }
    };
    let field = |line: &str, key: &str| -> Result<String, GbdtError> {
        line.strip_prefix(key)
            .and_then(|rest| rest.strip_prefix(' ').or(if rest.is_empty() { Some("") } else { None }))
            .map(str::to_string)
            .ok_or_else(|| corrupt(format!("expected `{key}`")))
    };

    if next()? != MAGIC {
        return Err(corrupt("missing header"));
    }
    let version: u32 = field(&next()?, "schema_version")?
        .parse()
        .map_err(|_| corrupt("bad schema_version"))?;
    if version != SCHEMA_VERSION {
        return Err(GbdtError::SchemaVersionMismatch {
            expected: SCHEMA_VERSION,
            found: version,
        });
    }
    let names = field(&next()?, "feature_names")?;
    let feature_names: Vec<String> = if names.is_empty() {
        Vec::new()
    } else {
        names.split(',').map(String::from).collect()
    };
    let base_score = parse_f64(&field(&next()?, "base_score")?, "base_score")?;
    let learning_rate = parse_f64(&field(&next()?, "learning_rate")?, "learning_rate")?;
    let training_config = field(&next()?, "training_config")?;
    let training_config_digest = field(&next()?, "training_config_digest")?;
    let count: usize = field(&next()?, "stumps")?
        .parse()
        .map_err(|_| corrupt("bad stump count"))?;

    let mut stumps = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let line = next()?;
        let parts: Vec<&str> = line.split(' ').collect();
        if parts.len() != 5 {
            return Err(corrupt("stump line needs 5 fields"));
        }
        let feature_index: usize = parts[0].parse().map_err(|_| corrupt("bad feature index"))?;
        if feature_index >= feature_names.len() {
            return Err(corrupt("feature index out of range"));
        }
        let missing_goes_left = match parts[2] {
            "L" => true,
            "R" => false,
            _ => return Err(corrupt("bad missing direction")),
        };
        stumps.push(Stump {
            feature_index,
            threshold: parse_f64(parts[1], "threshold")?,
            missing_goes_left,
            left_value: parse_f64(parts[3], "left_value")?,
            right_value: parse_f64(parts[4], "right_value")?,
        });
    }
    if next()? != "end" {
        return Err(corrupt("missing end marker"));
    }
    Ok(StumpEnsemble {
        base_score,
        learning_rate,
        stumps,
        feature_names,
        training_config,
        training_config_digest,
    })
}
