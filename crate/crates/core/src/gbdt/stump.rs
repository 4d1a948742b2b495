//! Depth-1 trees and second-order split finding.

use rayon::prelude::*;

use super::binning::{BinnedFeature, BinnedMatrix, MISSING_BIN};
use super::GbdtError;

/// One split with two leaves. Leaf values are raw (unshrunk) log-odds weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stump {
    pub feature_index: usize,
    pub threshold: f64,
    pub missing_goes_left: bool,
    pub left_value: f64,
    pub right_value: f64,
}

impl Stump {
    pub fn goes_left(&self, x: Option<f64>) -> bool {
        match x {
            Some(v) => v < self.threshold,
            None => self.missing_goes_left,
        }
    }

    pub fn leaf(&self, x: Option<f64>) -> f64 {
        if self.goes_left(x) {
            self.left_value
        } else {
            self.right_value
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitParams {
    pub lambda_l2: f64,
    pub min_child_hessian: f64,
}

/// A fitted stump and the loss reduction that selected it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitResult {
    pub stump: Stump,
    pub gain: f64,
}

/// Second-order split gain.
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64) -> f64 {
    gl * gl / (hl + lambda) + gr * gr / (hr + lambda) - (gl + gr) * (gl + gr) / (hl + hr + lambda)
}

pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    cut: usize,
    missing_left: bool,
    gl: f64,
    hl: f64,
    gr: f64,
    hr: f64,
}

/// Best candidate of one feature; candidates are visited in ascending
/// threshold, missing-left first, and only a strictly larger gain replaces
/// the incumbent.
fn best_for_feature(
    feature: &BinnedFeature,
    grad: &[f64],
    hess: &[f64],
    params: &SplitParams,
) -> Option<Candidate> {
    if feature.cuts.is_empty() {
        return None;
    }
    let mut hist = vec![(0.0f64, 0.0f64); feature.n_bins()];
    let (mut gm, mut hm) = (0.0, 0.0);
    for ((&b, &g), &h) in feature.bins.iter().zip(grad).zip(hess) {
        if b == MISSING_BIN {
            gm += g;
            hm += h;
        } else {
            let slot = &mut hist[b as usize];
            slot.0 += g;
            slot.1 += h;
        }
    }
    let (g_present, h_present) = hist
        .iter()
        .fold((0.0, 0.0), |(a, b), &(g, h)| (a + g, b + h));

    let mut best: Option<Candidate> = None;
    let (mut gl0, mut hl0) = (0.0, 0.0);
    for cut in 0..feature.cuts.len() {
        gl0 += hist[cut].0;
        hl0 += hist[cut].1;
        let gr0 = g_present - gl0;
        let hr0 = h_present - hl0;
        for missing_left in [true, false] {
            let (gl, hl, gr, hr) = if missing_left {
                (gl0 + gm, hl0 + hm, gr0, hr0)
            } else {
                (gl0, hl0, gr0 + gm, hr0 + hm)
            };
            if hl < params.min_child_hessian || hr < params.min_child_hessian {
                continue;
            }
            let gain = split_gain(gl, hl, gr, hr, params.lambda_l2);
            if gain > best.map_or(0.0, |c| c.gain) {
                best = Some(Candidate {
                    gain,
                    cut,
                    missing_left,
                    gl,
                    hl,
                    gr,
                    hr,
                });
            }
        }
    }
    best
}

/// Finds the stump with the largest positive gain.
///
/// Ties go to the lower feature index, then the lower threshold, then
/// missing-left. Features are scanned in parallel and reduced in index
/// order, so the result does not depend on the number of threads.
pub fn fit_stump(
    x: &BinnedMatrix,
    grad: &[f64],
    hess: &[f64],
    params: &SplitParams,
) -> Result<SplitResult, GbdtError> {
    if x.n_rows == 0 {
        return Err(GbdtError::NoValidSplit);
    }
    let per_feature: Vec<Option<Candidate>> = x
        .features
        .par_iter()
        .map(|f| best_for_feature(f, grad, hess, params))
        .collect();
    let mut best: Option<(usize, Candidate)> = None;
    for (j, cand) in per_feature.into_iter().enumerate() {
        if let Some(c) = cand {
            if best.is_none_or(|(_, b)| c.gain > b.gain) {
                best = Some((j, c));
            }
        }
    }
    let (j, c) = best.ok_or(GbdtError::NoValidSplit)?;
    Ok(SplitResult {
        stump: Stump {
            feature_index: j,
            threshold: x.features[j].cuts[c.cut],
            missing_goes_left: c.missing_left,
            left_value: leaf_weight(c.gl, c.hl, params.lambda_l2),
            right_value: leaf_weight(c.gr, c.hr, params.lambda_l2),
        },
        gain: c.gain,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gbdt::binning::FeatureMatrix;
    use crate::gbdt::loss::logistic_grad_hess;

    fn binned(rows: &[Vec<Option<f64>>]) -> BinnedMatrix {
        let x = FeatureMatrix::from_rows(rows, rows[0].len()).unwrap();
        BinnedMatrix::new(&x, 256, true)
    }

    #[test]
    fn four_point_example() {
        let rows: Vec<_> = [1.0, 2.0, 3.0, 4.0].iter().map(|&v| vec![Some(v)]).collect();
        let (grad, hess): (Vec<f64>, Vec<f64>) = [false, false, true, true]
            .iter()
            .map(|&y| logistic_grad_hess(0.0, y))
            .unzip();
        let params = SplitParams {
            lambda_l2: 1.0,
            min_child_hessian: 0.0,
        };
        let r = fit_stump(&binned(&rows), &grad, &hess, &params).unwrap();
        assert_eq!(r.stump.threshold, 2.5);
        assert!((r.stump.left_value + 1.0 / 1.5).abs() < 1e-15);
        assert!((r.stump.right_value - 1.0 / 1.5).abs() < 1e-15);
        assert!(r.stump.goes_left(Some(2.0)) && !r.stump.goes_left(Some(3.0)));
    }

    #[test]
    fn zero_gradients_have_no_split() {
        let rows: Vec<_> = (0..8).map(|v| vec![Some(v as f64)]).collect();
        let params = SplitParams {
            lambda_l2: 1.0,
            min_child_hessian: 0.0,
        };
        let err = fit_stump(&binned(&rows), &[0.0; 8], &[0.25; 8], &params).unwrap_err();
        assert!(matches!(err, GbdtError::NoValidSplit));
    }

    #[test]
    fn min_child_hessian_blocks_small_children() {
        let rows: Vec<_> = [1.0, 2.0, 3.0, 4.0].iter().map(|&v| vec![Some(v)]).collect();
        let params = SplitParams {
            lambda_l2: 1.0,
            min_child_hessian: 0.75,
        };
        let grad = [0.5, 0.5, -0.5, -0.5];
        let err = fit_stump(&binned(&rows), &grad, &[0.25; 4], &params).unwrap_err();
        assert!(matches!(err, GbdtError::NoValidSplit));
    }

    #[test]
    fn missing_rows_follow_the_better_side() {
        // The missing row is a positive: it belongs with the right leaf.
        let rows: Vec<_> = [Some(1.0), Some(2.0), None, Some(3.0), Some(4.0)]
            .iter()
            .map(|&v| vec![v])
            .collect();
        let grad = [0.5, 0.5, -0.5, -0.5, -0.5];
        let params = SplitParams {
            lambda_l2: 1.0,
            min_child_hessian: 0.0,
        };
        let r = fit_stump(&binned(&rows), &grad, &[0.25; 5], &params).unwrap();
        assert_eq!(r.stump.threshold, 2.5);
        assert!(!r.stump.missing_goes_left);
    }
}
