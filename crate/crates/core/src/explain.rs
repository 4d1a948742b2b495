//! Exact interventional Shapley attribution for stump ensembles.
//!
//! A stump depends on a single feature, so its Shapley value against a
//! background distribution is `lr * (leaf(x) - E_background[leaf])` on its split
//! feature and zero elsewhere. Attributions are on the margin scale, where
//! they add up exactly.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::cohort::TaskDataset;
use crate::gbdt::{GbdtError, StumpEnsemble};
use crate::ingest::fmt_f64;

pub const DEFAULT_BACKGROUND_SIZE: usize = 1024;
pub const MIN_DIRECTIONALITY_ROWS: usize = 10;

#[derive(Debug, Error)]
pub enum ExplainError {
    #[error("background dataset is empty")]
    EmptyBackground,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("feature `{feature}` is present in {present} rows, need at least {MIN_DIRECTIONALITY_ROWS}")]
    InsufficientData { feature: String, present: usize },
    #[error("unknown feature `{0}`")]
    UnknownFeature(String),
    #[error(transparent)]
    Model(#[from] GbdtError),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attribution {
    pub record_id: String,
    /// Mean margin over the background.
    pub base_value: f64,
    pub contributions: Vec<f64>,
    pub margin: f64,
}

/// Precomputed background expectations for one model.
#[derive(Debug, Clone)]
pub struct Explainer<'m> {
    model: &'m StumpEnsemble,
    /// `E_background[leaf]` per stump.
    expected_leaf: Vec<f64>,
    base_value: f64,
}

impl<'m> Explainer<'m> {
    pub fn new<R: AsRef<[Option<f64>]>>(model: &'m StumpEnsemble, background: &[R]) -> Result<Self, ExplainError> {
        if background.is_empty() {
            return Err(ExplainError::EmptyBackground);
        }
        let n = background.len() as f64;
        for row in background {
            if row.as_ref().len() != model.n_features() {
                return Err(GbdtError::FeatureCountMismatch {
                    expected: model.n_features(),
                    got: row.as_ref().len(),
                }
                .into());
            }
        }
        let expected_leaf: Vec<f64> = model
            .stumps
            .iter()
            .map(|s| {
                let left = background
                    .iter()
                    .filter(|r| s.goes_left(r.as_ref()[s.feature_index]))
                    .count() as f64;
                (left * s.left_value + (n - left) * s.right_value) / n
            })
            .collect();
        let base_value = model.base_score + model.learning_rate * expected_leaf.iter().sum::<f64>();
        Ok(Explainer {
            model,
            expected_leaf,
            base_value,
        })
    }

    pub fn base_value(&self) -> f64 {
        self.base_value
    }

    pub fn shap_values(&self, record_id: &str, row: &[Option<f64>]) -> Result<Attribution, ExplainError> {
        let margin = self.model.predict_margin(row)?;
        let lr = self.model.learning_rate;
        let mut contributions = vec![0.0; self.model.n_features()];
        for (s, expected) in self.model.stumps.iter().zip(&self.expected_leaf) {
            contributions[s.feature_index] += lr * (s.leaf(row[s.feature_index]) - expected);
        }
        Ok(Attribution {
            record_id: record_id.to_string(),
            base_value: self.base_value,
            contributions,
            margin,
        })
    }

    pub fn explain_dataset(&self, ds: &TaskDataset) -> Result<Vec<Attribution>, ExplainError> {
        ds.examples
            .par_iter()
            .map(|e| self.shap_values(&e.record_id, &e.features))
            .collect()
    }

    pub fn global_importance(&self, ds: &TaskDataset) -> Result<GlobalImportance, ExplainError> {
        if ds.is_empty() {
            return Err(ExplainError::EmptyDataset);
        }
        let attributions = self.explain_dataset(ds)?;
        Ok(GlobalImportance::from_attributions(&ds.feature_names, &attributions))
    }

    pub fn directionality_report(&self, ds: &TaskDataset, feature: &str) -> Result<Directionality, ExplainError> {
        let j = ds
            .feature_names
            .iter()
            .position(|f| f == feature)
            .ok_or_else(|| ExplainError::UnknownFeature(feature.to_string()))?;
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for e in &ds.examples {
            if let Some(v) = e.features[j] {
                let a = self.shap_values(&e.record_id, &e.features)?;
                pairs.push((v, a.contributions[j]));
            }
        }
        if pairs.len() < MIN_DIRECTIONALITY_ROWS {
            return Err(ExplainError::InsufficientData {
                feature: feature.to_string(),
                present: pairs.len(),
            });
        }
        Ok(Directionality::from_pairs(feature, pairs))
    }
}

/// Attribution of one row against an explicit background.
pub fn shap_values<R: AsRef<[Option<f64>]>>(
    model: &StumpEnsemble,
    record_id: &str,
    row: &[Option<f64>],
    background: &[R],
) -> Result<Attribution, ExplainError> {
    Explainer::new(model, background)?.shap_values(record_id, row)
}

/// Up to `size` rows drawn without replacement (seeded), in original order.
pub fn sample_background(ds: &TaskDataset, size: usize, seed: u64) -> Vec<Vec<Option<f64>>> {
    let mut idx: Vec<usize> = if ds.len() <= size {
        (0..ds.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::index::sample(&mut rng, ds.len(), size).into_vec()
    };
    idx.sort_unstable();
    idx.into_iter().map(|i| ds.examples[i].features.to_vec()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalImportance {
    /// Mean absolute contribution, in feature order.
    pub feature_names: Vec<String>,
    pub mean_abs: Vec<f64>,
    /// Feature indices by descending importance; ties keep feature order.
    pub ranking: Vec<usize>,
}

impl GlobalImportance {
    pub fn from_attributions(feature_names: &[String], attributions: &[Attribution]) -> Self {
        let n = attributions.len().max(1) as f64;
        let mut mean_abs = vec![0.0; feature_names.len()];
        for a in attributions {
            for (m, c) in mean_abs.iter_mut().zip(&a.contributions) {
                *m += c.abs();
            }
        }
        mean_abs.iter_mut().for_each(|m| *m /= n);
        let mut ranking: Vec<usize> = (0..feature_names.len()).collect();
        ranking.sort_by(|&a, &b| mean_abs[b].total_cmp(&mean_abs[a]));
        GlobalImportance {
            feature_names: feature_names.to_vec(),
            mean_abs,
            ranking,
        }
    }

    pub fn ranked_names(&self) -> Vec<&str> {
        self.ranking.iter().map(|&i| self.feature_names[i].as_str()).collect()
    }

    pub fn of(&self, feature: &str) -> Option<f64> {
        self.feature_names.iter().position(|f| f == feature).map(|i| self.mean_abs[i])
    }

    /// `feature,mean_abs_contribution`, most important first.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ExplainError> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["feature", "mean_abs_contribution"])?;
        for &i in &self.ranking {
            wtr.write_record([self.feature_names[i].clone(), fmt_f64(self.mean_abs[i])])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuartileSummary {
    pub lower: f64,
    pub upper: f64,
    pub n: usize,
    pub mean_value: f64,
    pub mean_contribution: f64,
}

/// Mean contribution of one feature within quartiles of its value.
#[derive(Debug, Clone, PartialEq)]
pub struct Directionality {
    pub feature: String,
    /// Non-empty quartiles, lowest values first. Tied quartile edges merge
    /// bins, so a constant feature yields a single bin.
    pub bins: Vec<QuartileSummary>,
}

impl Directionality {
    fn from_pairs(feature: &str, mut pairs: Vec<(f64, f64)>) -> Self {
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let values: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let edges = [0.25, 0.5, 0.75].map(|q| crate::split::quantile_sorted(&values, q));
        let mut acc: Vec<(f64, f64, usize, f64, f64)> = vec![(f64::INFINITY, f64::NEG_INFINITY, 0, 0.0, 0.0); 4];
        for (v, c) in pairs {
            let bin = edges.iter().filter(|&&e| v > e).count();
            let a = &mut acc[bin];
            a.0 = a.0.min(v);
            a.1 = a.1.max(v);
            a.2 += 1;
            a.3 += v;
            a.4 += c;
        }
        let bins = acc
            .into_iter()
            .filter(|a| a.2 > 0)
            .map(|(lower, upper, n, sv, sc)| QuartileSummary {
                lower,
                upper,
                n,
                mean_value: sv / n as f64,
                mean_contribution: sc / n as f64,
            })
            .collect();
        Directionality {
            feature: feature.to_string(),
            bins,
        }
    }

    /// +1 if contributions rise with the feature across bins, -1 if they
    /// fall, 0 otherwise.
    pub fn trend(&self) -> i8 {
        let m: Vec<f64> = self.bins.iter().map(|b| b.mean_contribution).collect();
        if m.len() < 2 {
            0
        } else if m.windows(2).all(|w| w[0] <= w[1]) && m[0] < m[m.len() - 1] {
            1
        } else if m.windows(2).all(|w| w[0] >= w[1]) && m[0] > m[m.len() - 1] {
            -1
        } else {
            0
        }
    }
}

/// One row per explained record: `record_id,base_value,margin,<features...>`.
pub fn write_attributions<W: Write>(w: W, feature_names: &[String], rows: &[Attribution]) -> Result<(), ExplainError> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["record_id".to_string(), "base_value".to_string(), "margin".to_string()];
    header.extend(feature_names.iter().cloned());
    wtr.write_record(&header)?;
    for a in rows {
        let mut row = vec![a.record_id.clone(), fmt_f64(a.base_value), fmt_f64(a.margin)];
        row.extend(a.contributions.iter().map(|&c| fmt_f64(c)));
        wtr.write_record(&row)?;
    }
    wtr.flush()?;
    Ok(())
}
