//! Column storage and histogram binning.

use super::GbdtError;

/// Dense column-major feature matrix; missing cells are NaN internally.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_rows<R: AsRef<[Option<f64>]>>(rows: &[R], n_cols: usize) -> Result<Self, GbdtError> {
        let n_rows = rows.len();
        let mut data = vec![f64::NAN; n_rows * n_cols];
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n_cols {
                return Err(GbdtError::FeatureCountMismatch {
                    expected: n_cols,
                    got: row.len(),
                });
            }
            for (j, v) in row.iter().enumerate() {
                if let Some(v) = v {
                    data[j * n_rows + i] = *v;
                }
            }
        }
        Ok(FeatureMatrix { n_rows, n_cols, data })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    /// Raw column; NaN marks a missing cell.
    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n_rows..(j + 1) * self.n_rows]
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let v = self.data[j * self.n_rows + i];
        (!v.is_nan()).then_some(v)
    }

    pub fn row(&self, i: usize) -> Vec<Option<f64>> {
        (0..self.n_cols).map(|j| self.get(i, j)).collect()
    }
}

pub(crate) const MISSING_BIN: u32 = u32::MAX;

/// Candidate thresholds for one feature and each row's bin.
///
/// Row `i` lands in bin `#{cuts <= x_i}`; a split at `cuts[k]` sends bins
/// `0..=k` left, i.e. exactly the rows with `x < cuts[k]`.
#[derive(Debug, Clone)]
pub struct BinnedFeature {
    pub cuts: Vec<f64>,
    pub bins: Vec<u32>,
    pub has_missing: bool,
}

impl BinnedFeature {
    pub fn n_bins(&self) -> usize {
        self.cuts.len() + 1
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m > a && m <= b {
        m
    } else {
        b
    }
}

/// Cut points for one column.
///
/// With at most `max_bins` distinct values (or `exact`), every midpoint
/// between consecutive distinct values is a cut. Otherwise cuts are taken at
/// `max_bins` evenly spaced ranks of the sorted values. When the column has
/// missing cells, the minimum value is added as a cut so that "missing vs
/// present" is itself a candidate split.
pub fn compute_cuts(column: &[f64], max_bins: usize, exact: bool) -> Vec<f64> {
    let mut sorted: Vec<f64> = column.iter().copied().filter(|v| !v.is_nan()).collect();
    if sorted.is_empty() {
        return Vec::new();
    }
    let has_missing = sorted.len() < column.len();
    sorted.sort_by(f64::total_cmp);
    let mut distinct = sorted.clone();
    distinct.dedup();
    let min = distinct[0];

    let mut cuts = Vec::new();
    if has_missing {
        cuts.push(min);
    }
    if exact || distinct.len() <= max_bins.max(2) {
        cuts.extend(distinct.windows(2).map(|w| midpoint(w[0], w[1])));
    } else {
        let n = sorted.len();
        for k in 1..max_bins {
            let c = sorted[k * n / max_bins];
            if c > min && cuts.last().is_none_or(|&last| c > last) {
                cuts.push(c);
            }
        }
    }
    cuts
}

pub fn bin_feature(column: &[f64], max_bins: usize, exact: bool) -> BinnedFeature {
    let cuts = compute_cuts(column, max_bins, exact);
    let mut has_missing = false;
    let bins = column
        .iter()
        .map(|&v| {
            if v.is_nan() {
                has_missing = true;
                MISSING_BIN
            } else {
                cuts.partition_point(|&c| c <= v) as u32
            }
        })
        .collect();
    BinnedFeature {
        cuts,
        bins,
        has_missing,
    }
}

/// All columns of a matrix, binned with shared settings.
#[derive(Debug, Clone)]
pub struct BinnedMatrix {
    pub features: Vec<BinnedFeature>,
    pub n_rows: usize,
}

impl BinnedMatrix {
    pub fn new(x: &FeatureMatrix, max_bins: usize, exact: bool) -> Self {
        BinnedMatrix {
            features: (0..x.n_cols())
                .map(|j| bin_feature(x.column(j), max_bins, exact))
                .collect(),
            n_rows: x.n_rows(),
        }
    }
}
