//! Classical fixed-effect and random-effects estimators, the
//! DerSimonian-Laird heterogeneity plug-in, and sequential/retrospective
//! meta-analysis weights.

use crate::error::{Error, Result};
use crate::types::{StudyRecord, StudySequence};

/// Pooled classical estimate with its weights.
#[derive(Debug, Clone, PartialEq)]
pub struct MetaEstimate {
    pub estimate: f64,
    pub variance: f64,
    pub tau2: f64,
    /// Normalized inverse-variance weights, one per record, summing to 1.
    pub weights: Vec<f64>,
}

/// DerSimonian-Laird heterogeneity estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauEstimate {
    pub tau: f64,
    /// Set when fewer than two studies are available; tau is then 0 by
    /// convention so prefix evaluation starts cleanly at step 1.
    pub insufficient: bool,
}

fn pooled(records: &[StudyRecord], tau2: f64) -> MetaEstimate {
    let w: Vec<f64> = records
        .iter()
        .map(|r| 1.0 / (r.std_error * r.std_error + tau2))
        .collect();
    let sum_w: f64 = w.iter().sum();
    let estimate = records
        .iter()
        .zip(&w)
        .map(|(r, wi)| wi * r.estimate)
        .sum::<f64>()
        / sum_w;
    MetaEstimate {
        estimate,
        variance: 1.0 / sum_w,
        tau2,
        weights: w.iter().map(|wi| wi / sum_w).collect(),
    }
}

/// Inverse-variance fixed-effect estimate.
pub fn fe_estimate(seq: &StudySequence) -> Result<MetaEstimate> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    Ok(pooled(seq.records(), 0.0))
}

/// DerSimonian-Laird moment estimate of the heterogeneity scale tau.
///
/// `tau^2 = max(0, (Q - (n-1)) / (sum w - sum w^2 / sum w))` with
/// `w_i = 1/sigma_i^2` and `Q = sum w_i (y_i - theta_FE)^2`.
pub fn dl_tau(seq: &StudySequence) -> Result<TauEstimate> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let records = seq.records();
    if records.len() < 2 {
        return Ok(TauEstimate {
            tau: 0.0,
            insufficient: true,
        });
    }
    let fe = pooled(records, 0.0);
    let w: Vec<f64> = records
        .iter()
        .map(|r| 1.0 / (r.std_error * r.std_error))
        .collect();
    let q: f64 = records
        .iter()
        .zip(&w)
        .map(|(r, wi)| wi * (r.estimate - fe.estimate).powi(2))
        .sum();
    let sum_w: f64 = w.iter().sum();
    let sum_w2: f64 = w.iter().map(|wi| wi * wi).sum();
    let denom = sum_w - sum_w2 / sum_w;
    let tau2 = if denom > 0.0 {
        ((q - (records.len() as f64 - 1.0)) / denom).max(0.0)
    } else {
        0.0
    };
    Ok(TauEstimate {
        tau: tau2.sqrt(),
        insufficient: false,
    })
}

/// Random-effects estimate with weights `1/(sigma_i^2 + tau^2)`. When `tau`
/// is not supplied, the DerSimonian-Laird plug-in is used.
pub fn re_estimate(seq: &StudySequence, tau: Option<f64>) -> Result<MetaEstimate> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let tau = match tau {
        Some(t) => t,
        None => dl_tau(seq)?.tau,
    };
    Ok(pooled(seq.records(), tau * tau))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightMode {
    /// For each prefix 1..m, report the newest study's weight in the prefix
    /// meta-analysis (tau re-estimated per prefix in RE mode).
    Sequential,
    /// One weight per study from the full-sequence estimate.
    Retrospective,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightModel {
    Fe,
    Re,
}

/// One row of the weights table; weight is in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightRow {
    pub step: usize,
    pub study_id: String,
    pub weight_percent: f64,
}

/// Per-step meta-analysis weights for comparison against the trace.
pub fn weights_table(
    seq: &StudySequence,
    mode: WeightMode,
    model: WeightModel,
) -> Result<Vec<WeightRow>> {
    if seq.is_empty() {
        return Err(Error::EmptySequence);
    }
    let records = seq.records();
    let estimate_for = |recs: &[StudyRecord]| -> Result<MetaEstimate> {
        let sub = crate::types::validate_sequence(recs.to_vec())?;
        match model {
            WeightModel::Fe => fe_estimate(&sub),
            WeightModel::Re => re_estimate(&sub, None),
        }
    };
    let rows = match mode {
        WeightMode::Retrospective => {
            let est = estimate_for(records)?;
            records
                .iter()
                .zip(&est.weights)
                .enumerate()
                .map(|(i, (r, w))| WeightRow {
                    step: i + 1,
                    study_id: r.id.clone(),
                    weight_percent: 100.0 * w,
                })
                .collect()
        }
        WeightMode::Sequential => (1..=records.len())
            .map(|m| {
                let est = estimate_for(&records[..m])?;
                Ok(WeightRow {
                    step: m,
                    study_id: records[m - 1].id.clone(),
                    weight_percent: 100.0 * est.weights[m - 1],
                })
            })
            .collect::<Result<Vec<_>>>()?,
    };
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::validate_sequence;
    use approx::assert_abs_diff_eq;

    fn seq(data: &[(f64, f64)]) -> StudySequence {
        validate_sequence(
            data.iter()
                .enumerate()
                .map(|(i, (est, se))| StudyRecord {
                    id: format!("s{}", i + 1),
                    seq_index: (i + 1) as u32,
                    group_id: format!("s{}", i + 1),
                    estimate: *est,
                    std_error: *se,
                    label: None,
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn fe_symmetric_pair() {
        let est = fe_estimate(&seq(&[(1.0, 1.0), (3.0, 1.0)])).unwrap();
        assert_abs_diff_eq!(est.estimate, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est.variance, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(est.weights[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn fe_single_study() {
        let est = fe_estimate(&seq(&[(0.7, 0.2)])).unwrap();
        assert_abs_diff_eq!(est.estimate, 0.7, epsilon = 1e-12);
        assert_abs_diff_eq!(est.weights[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fe_precision_weighting() {
        // Precisions 1 and 4: weights 0.2 and 0.8.
        let est = fe_estimate(&seq(&[(0.0, 1.0), (0.0, 0.5)])).unwrap();
        assert_abs_diff_eq!(est.estimate, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(est.weights[0], 0.2, epsilon = 1e-12);
        assert_abs_diff_eq!(est.weights[1], 0.8, epsilon = 1e-12);
    }

    #[test]
    fn dl_zero_when_homogeneous() {
        let t = dl_tau(&seq(&[(0.5, 0.2), (0.5, 0.3), (0.5, 0.1)])).unwrap();
        assert_abs_diff_eq!(t.tau, 0.0, epsilon = 1e-12);
        assert!(!t.insufficient);
    }

    #[test]
    fn dl_hand_computed_pair() {
        // w = (100, 100), Q = 200, denom = 200 - 100 = 100, tau^2 = 199/100.
        let t = dl_tau(&seq(&[(-1.0, 0.1), (1.0, 0.1)])).unwrap();
        assert_abs_diff_eq!(t.tau * t.tau, 1.99, epsilon = 1e-10);
        assert_abs_diff_eq!(t.tau, 1.99f64.sqrt(), epsilon = 1e-10);
    }

    #[test]
    fn dl_single_study_flags_insufficient() {
        let t = dl_tau(&seq(&[(1.0, 0.1)])).unwrap();
        assert_eq!(t.tau, 0.0);
        assert!(t.insufficient);
    }

    #[test]
    fn dl_scale_consistency() {
        let base = dl_tau(&seq(&[(-1.0, 0.1), (0.4, 0.2), (1.3, 0.15)])).unwrap();
        let scaled = dl_tau(&seq(&[(-10.0, 1.0), (4.0, 2.0), (13.0, 1.5)])).unwrap();
        assert_abs_diff_eq!(scaled.tau, 10.0 * base.tau, epsilon = 1e-9 * scaled.tau);
    }

    #[test]
    fn re_with_zero_tau_is_fe() {
        let s = seq(&[(0.2, 0.1), (0.9, 0.4), (-0.3, 0.2)]);
        let fe = fe_estimate(&s).unwrap();
        let re = re_estimate(&s, Some(0.0)).unwrap();
        assert_eq!(fe, re);
    }

    #[test]
    fn re_equal_sigma_equal_weights() {
        let s = seq(&[(0.1, 0.3), (0.9, 0.3), (-0.3, 0.3), (0.4, 0.3)]);
        let re = re_estimate(&s, None).unwrap();
        for w in &re.weights {
            assert_abs_diff_eq!(*w, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn re_symmetric_pair_with_dl_tau() {
        let re = re_estimate(&seq(&[(-1.0, 0.1), (1.0, 0.1)]), None).unwrap();
        assert_abs_diff_eq!(re.estimate, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(re.weights[0], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn sequential_weight_step1_is_100() {
        let rows = weights_table(
            &seq(&[(0.3, 0.2), (0.5, 0.4)]),
            WeightMode::Sequential,
            WeightModel::Fe,
        )
        .unwrap();
        assert_eq!(rows[0].weight_percent, 100.0);
    }

    #[test]
    fn sequential_equal_sigma_weight_is_100_over_m() {
        let data: Vec<(f64, f64)> = (0..10).map(|i| (0.1 * i as f64, 0.3)).collect();
        let rows = weights_table(&seq(&data), WeightMode::Sequential, WeightModel::Fe).unwrap();
        for (m, row) in rows.iter().enumerate() {
            assert_abs_diff_eq!(row.weight_percent, 100.0 / (m as f64 + 1.0), epsilon = 1e-9);
        }
    }

    #[test]
    fn retrospective_re_equal_sigma_30_studies() {
        let data: Vec<(f64, f64)> = (0..30).map(|i| ((i % 7) as f64 * 0.05, 0.25)).collect();
        let rows = weights_table(&seq(&data), WeightMode::Retrospective, WeightModel::Re).unwrap();
        for row in &rows {
            assert_abs_diff_eq!(row.weight_percent, 100.0 / 30.0, epsilon = 0.01);
        }
    }

    #[test]
    fn retrospective_weights_permutation_equivariant() {
        let s = seq(&[(0.1, 0.3), (0.9, 0.1), (-0.3, 0.5)]);
        let rows = weights_table(&s, WeightMode::Retrospective, WeightModel::Fe).unwrap();
        let permuted = seq(&[(-0.3, 0.5), (0.1, 0.3), (0.9, 0.1)]);
        let prows = weights_table(&permuted, WeightMode::Retrospective, WeightModel::Fe).unwrap();
        assert_abs_diff_eq!(rows[0].weight_percent, prows[1].weight_percent, epsilon = 1e-12);
        assert_abs_diff_eq!(rows[1].weight_percent, prows[2].weight_percent, epsilon = 1e-12);
        assert_abs_diff_eq!(rows[2].weight_percent, prows[0].weight_percent, epsilon = 1e-12);
    }
}
