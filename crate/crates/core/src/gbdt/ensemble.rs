use rayon::prelude::*;

use super::loss::sigmoid;
use super::stump::Stump;
use super::GbdtError;

/// A trained additive model of stumps.
///
/// `margin(x) = base_score + learning_rate * sum(stump.leaf(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct StumpEnsemble {
    pub base_score: f64,
    pub learning_rate: f64,
    pub stumps: Vec<Stump>,
    pub feature_names: Vec<String>,
    /// Canonical `key=value` rendering of the training configuration.
    pub training_config: String,
    /// SHA-256 of `training_config`, hex encoded.
    pub training_config_digest: String,
}

impl StumpEnsemble {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    fn check(&self, row: &[Option<f64>]) -> Result<(), GbdtError> {
        if row.len() != self.n_features() {
            return Err(GbdtError::FeatureCountMismatch {
                expected: self.n_features(),
                got: row.len(),
            });
        }
        Ok(())
    }

    /// Sum of raw leaf values along the routed paths, in stump order.
    pub fn raw_sum(&self, row: &[Option<f64>]) -> Result<f64, GbdtError> {
        self.check(row)?;
        Ok(self
            .stumps
            .iter()
            .map(|s| s.leaf(row[s.feature_index]))
            .sum())
    }

    pub fn predict_margin(&self, row: &[Option<f64>]) -> Result<f64, GbdtError> {
        Ok(self.base_score + self.learning_rate * self.raw_sum(row)?)
    }

    pub fn predict_proba(&self, row: &[Option<f64>]) -> Result<f64, GbdtError> {
        self.predict_margin(row).map(sigmoid)
    }

    pub fn predict_margins<R>(&self, rows: &[R]) -> Result<Vec<f64>, GbdtError>
    where
        R: AsRef<[Option<f64>]> + Sync,
    {
        rows.par_iter()
            .map(|r| self.predict_margin(r.as_ref()))
            .collect()
    }

    pub fn predict_probas<R>(&self, rows: &[R]) -> Result<Vec<f64>, GbdtError>
    where
        R: AsRef<[Option<f64>]> + Sync,
    {
        rows.par_iter()
            .map(|r| self.predict_proba(r.as_ref()))
            .collect()
    }

    /// Indices of features used by at least one stump, ascending.
    pub fn split_features(&self) -> Vec<usize> {
        let mut f: Vec<usize> = self.stumps.iter().map(|s| s.feature_index).collect();
        f.sort_unstable();
        f.dedup();
        f
    }
}
