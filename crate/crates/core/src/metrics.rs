//! Feature losses and matching-quality metrics.

use std::collections::HashSet;
use std::fmt;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::measures::{cosine_cost_matrix, FeatureSet};

/// Default contextual bandwidth.
pub const CX_BANDWIDTH: f64 = 0.5;
/// Added to the row minimum of the distances before normalizing by it.
pub const CX_EPS: f64 = 1e-5;
/// Rows whose mass stays below this have no meaningful argmax.
pub const EMPTY_ROW_MASS: f64 = 1e-30;

/// Mean absolute elementwise difference.
pub fn feature_consistency_loss(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    let (sa, sb) = (a.as_array().dim(), b.as_array().dim());
    if sa != sb {
        return Err(Error::ShapeMismatch {
            context: "feature consistency",
            expected: sa,
            found: sb,
        });
    }
    let total: f64 = a.as_array().iter().zip(b.as_array()).map(|(x, y)| (x - y).abs()).sum();
    Ok(total / (sa.0 * sa.1) as f64)
}

/// L1 distance between externally extracted feature activations.
pub fn perceptual_distance(feat_y: &FeatureSet, feat_x: &FeatureSet) -> Result<f64> {
    feature_consistency_loss(feat_y, feat_x)
}

/// Contextual similarity of every `z_i` to every `y_j`, rows normalized.
pub fn contextual_similarity(feat_z: &FeatureSet, feat_y: &FeatureSet, bandwidth: f64) -> Result<Array2<f64>> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidOptions(format!("bandwidth must be positive, got {bandwidth}")));
    }
    let mut cx = cosine_cost_matrix(feat_z, feat_y)?.into_array();
    for mut row in cx.rows_mut() {
        let min = row.iter().fold(f64::INFINITY, |a, &b| a.min(b));
        let norm = min + CX_EPS;
        // Largest weight belongs to the smallest distance; shift by it.
        let top = (1.0 - min / norm) / bandwidth;
        row.mapv_inplace(|d| ((1.0 - d / norm) / bandwidth - top).exp());
        let sum = row.sum();
        row.mapv_inplace(|w| w / sum);
    }
    Ok(cx)
}

/// `-ln(mean_i max_j CX_ij)`.
pub fn contextual_loss(feat_z: &FeatureSet, feat_y: &FeatureSet, bandwidth: f64) -> Result<f64> {
    let cx = contextual_similarity(feat_z, feat_y, bandwidth)?;
    let best: f64 = cx
        .rows()
        .into_iter()
        .map(|row| row.iter().fold(0.0f64, |a, &b| a.max(b)))
        .sum();
    Ok(-(best / cx.nrows() as f64).ln())
}

fn argmax_first(row: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (j, v) in row.enumerate() {
        if v > best.1 {
            best = (j, v);
        }
    }
    best
}

/// Nearest `z` by cosine similarity for every `x`; ties go to the smaller index.
pub fn argmax_match_cosine(x: &FeatureSet, z: &FeatureSet) -> Result<Vec<usize>> {
    let cost = cosine_cost_matrix(x, z)?;
    Ok(cost
        .as_array()
        .rows()
        .into_iter()
        .map(|row| argmax_first(row.iter().map(|c| -c)).0)
        .collect())
}

/// Column of largest mass in every plan row; ties go to the smaller index.
pub fn argmax_match_plan(plan: ArrayView2<'_, f64>) -> Result<Vec<usize>> {
    plan.rows()
        .into_iter()
        .enumerate()
        .map(|(i, row)| {
            if let Some(j) = row.iter().position(|&t| t < 0.0) {
                return Err(Error::NegativePlanEntry {
                    row: i,
                    col: j,
                    value: row[j],
                });
            }
            let (j, top) = argmax_first(row.iter().copied());
            if top < EMPTY_ROW_MASS {
                Err(Error::EmptyRow(i))
            } else {
                Ok(j)
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchingReport {
    pub many_to_one_rate: f64,
    pub outlier_leakage: f64,
    pub accuracy: f64,
}

impl fmt::Display for MatchingReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "many_to_one_rate: {}", self.many_to_one_rate)?;
        writeln!(f, "outlier_leakage: {}", self.outlier_leakage)?;
        writeln!(f, "accuracy: {}", self.accuracy)
    }
}

/// `(n - distinct matched columns) / n`.
pub fn many_to_one_rate(matching: &[usize]) -> Result<f64> {
    if matching.is_empty() {
        return Err(Error::Empty("matching"));
    }
    let distinct: HashSet<usize> = matching.iter().copied().collect();
    Ok((matching.len() - distinct.len()) as f64 / matching.len() as f64)
}

/// Plan mass in masked columns over total plan mass; zero for an empty plan.
pub fn outlier_leakage(plan: ArrayView2<'_, f64>, outlier_mask_z: &[bool]) -> Result<f64> {
    if plan.ncols() != outlier_mask_z.len() {
        return Err(Error::LengthMismatch {
            context: "outlier mask vs plan columns",
            expected: plan.ncols(),
            found: outlier_mask_z.len(),
        });
    }
    let mut total = 0.0;
    let mut leaked = 0.0;
    for row in plan.rows() {
        for (&t, &masked) in row.iter().zip(outlier_mask_z) {
            total += t;
            if masked {
                leaked += t;
            }
        }
    }
    Ok(if total > 0.0 { leaked / total } else { 0.0 })
}

pub fn matching_report(
    matching: &[usize],
    labels_x: &[usize],
    labels_z: &[usize],
    plan: ArrayView2<'_, f64>,
    outlier_mask_z: &[bool],
) -> Result<MatchingReport> {
    let check = |context, expected: usize, found: usize| {
        if expected == found {
            Ok(())
        } else {
            Err(Error::LengthMismatch {
                context,
                expected,
                found,
            })
        }
    };
    check("labels_x vs matching", matching.len(), labels_x.len())?;
    check("plan rows vs matching", matching.len(), plan.nrows())?;
    check("labels_z vs plan columns", plan.ncols(), labels_z.len())?;
    if let Some(&j) = matching.iter().find(|&&j| j >= labels_z.len()) {
        return Err(Error::LengthMismatch {
            context: "matched column index",
            expected: labels_z.len(),
            found: j,
        });
    }
    let correct = matching
        .iter()
        .zip(labels_x)
        .filter(|(&j, &l)| labels_z[j] == l)
        .count();
    Ok(MatchingReport {
        many_to_one_rate: many_to_one_rate(matching)?,
        outlier_leakage: outlier_leakage(plan, outlier_mask_z)?,
        accuracy: correct as f64 / matching.len() as f64,
    })
}

/// `sum_k lambda_k L_k` over `(lambda, loss)` pairs; weights must be
/// nonnegative and finite.
pub fn weighted_objective(terms: &[(f64, f64)]) -> Result<f64> {
    let mut total = 0.0;
    for &(lambda, loss) in terms {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidOptions(format!("loss weight must be nonnegative, got {lambda}")));
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("loss term"));
        }
        total += lambda * loss;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn fs(data: Array2<f64>) -> FeatureSet {
        FeatureSet::new(data).unwrap()
    }

    #[test]
    fn consistency_trivial_cases() {
        let a = fs(array![[0.5, -1.0, 2.0], [3.0, 0.0, 1.0]]);
        let b = fs(a.as_array() + 1.0);
        assert_eq!(feature_consistency_loss(&a, &a).unwrap(), 0.0);
        assert!((feature_consistency_loss(&a, &b).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(perceptual_distance(&a, &b).unwrap(), feature_consistency_loss(&a, &b).unwrap());
        let c = fs(Array2::ones((3, 3)));
        assert!(matches!(feature_consistency_loss(&a, &c), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn contextual_single_point_is_zero() {
        let z = fs(array![[1.0, 2.0]]);
        let y = fs(array![[-0.5, 0.3]]);
        assert_eq!(contextual_similarity(&z, &y, CX_BANDWIDTH).unwrap(), array![[1.0]]);
        assert_eq!(contextual_loss(&z, &y, CX_BANDWIDTH).unwrap(), 0.0);
        assert!(contextual_loss(&z, &y, 0.0).is_err());
        let zero = fs(array![[0.0, 0.0]]);
        assert!(matches!(contextual_loss(&zero, &y, 0.5), Err(Error::ZeroNormFeature { .. })));
    }

    #[test]
    fn cosine_matching_examples() {
        let z = fs(array![[1.0, 0.0], [0.0, 1.0], [-1.0, 1.0]]);
        assert_eq!(argmax_match_cosine(&z, &z).unwrap(), vec![0, 1, 2]);
        let x = fs(array![[1.0, 0.1], [1.0, -0.1]]);
        assert_eq!(argmax_match_cosine(&x, &z).unwrap(), vec![0, 0]);
    }

    #[test]
    fn plan_matching_examples() {
        let perm = array![[0.0, 0.0, 1.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert_eq!(argmax_match_plan(perm.view()).unwrap(), vec![2, 0, 1]);
        let uniform = Array2::from_elem((2, 4), 0.25);
        assert_eq!(argmax_match_plan(uniform.view()).unwrap(), vec![0, 0]);
        let empty = array![[1.0, 0.0], [1e-31, 0.0]];
        assert!(matches!(argmax_match_plan(empty.view()), Err(Error::EmptyRow(1))));
    }

    #[test]
    fn report_examples() {
        let plan = Array2::from_elem((4, 4), 0.25);
        let labels = [0, 1, 2, 3];
        let clean = [false; 4];
        let r = matching_report(&[1, 0, 3, 2], &labels, &labels, plan.view(), &clean).unwrap();
        assert_eq!(r.many_to_one_rate, 0.0);
        assert_eq!(r.outlier_leakage, 0.0);
        assert_eq!(r.accuracy, 0.0);
        let r = matching_report(&[2, 2, 2, 2], &labels, &labels, plan.view(), &[false, false, true, false]).unwrap();
        assert_eq!(r.many_to_one_rate, 0.75);
        assert_eq!(r.outlier_leakage, 0.25);
        assert_eq!(r.accuracy, 0.25);
        assert!(matching_report(&[0, 1], &labels, &labels, plan.view(), &clean).is_err());
        let text = r.to_string();
        assert!(text.contains("many_to_one_rate: 0.75\n"));
    }

    #[test]
    fn weighted_sum() {
        assert_eq!(weighted_objective(&[(1.0, 2.0), (0.5, 4.0)]).unwrap(), 4.0);
        assert_eq!(weighted_objective(&[]).unwrap(), 0.0);
        assert!(weighted_objective(&[(-1.0, 1.0)]).is_err());
    }
}
