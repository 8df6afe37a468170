//! Sequential and batch posterior computation: closed-form conjugate
//! updates, a static-state linear-Gaussian filter for the labeled model, and
//! a grid engine for unknown tau.

use nalgebra::{DMatrix, DVector};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::classical;
use crate::error::{Error, Result};
use crate::types::{
    validate_sequence, BeliefSchedule, GaussianBelief, GridBelief, JointGaussianState, ModelConfig,
    ModelKind, Posterior, Quantile, StudyRecord, StudySequence, TauSpec,
};

/// Per-step posteriors plus the prior at index 0.
#[derive(Debug, Clone)]
pub struct EngineOutput {
    /// Marginal belief over the target parameter, one per step; index 0 is
    /// the prior.
    pub posteriors: Vec<Posterior>,
    /// Study ids folded into each step; empty for the prior row.
    pub study_ids: Vec<Vec<String>>,
    /// Final joint state when the labeled model was used.
    pub final_joint: Option<JointGaussianState>,
}

/// Precision-weighted Gaussian conjugate update:
/// `1/s^2 = 1/prior.sd^2 + 1/obs_var`, `m = s^2 (prior.mean/prior.sd^2 + obs_mean/obs_var)`.
pub fn conjugate_update(
    prior: GaussianBelief,
    obs_mean: f64,
    obs_var: f64,
) -> Result<GaussianBelief> {
    if !(obs_var > 0.0) || !obs_var.is_finite() {
        return Err(Error::NonPositiveVariance { value: obs_var });
    }
    let prec = 1.0 / prior.variance() + 1.0 / obs_var;
    let var = 1.0 / prec;
    let mean = var * (prior.mean / prior.variance() + obs_mean / obs_var);
    GaussianBelief::new(mean, var.sqrt())
}

/// Marginal observation variance after integrating out the study-specific
/// random effect: `std_error^2 + tau^2`.
pub fn effective_obs_variance(record: &StudyRecord, tau: f64) -> f64 {
    record.std_error * record.std_error + tau * tau
}

fn fixed_tau(schedule: &BeliefSchedule) -> Result<f64> {
    match schedule.tau_spec {
        TauSpec::Fixed(tau) => Ok(tau),
        _ => Err(Error::SchemaViolation {
            pointer: "/tau".to_string(),
            message: "this engine requires tau mode 'fixed'".to_string(),
        }),
    }
}

/// Sequential conjugate trace under the fixed-effect or random-effects model
/// with known tau. Grouped records fold into a single step.
pub fn run_trace_re(seq: &StudySequence, config: &ModelConfig) -> Result<EngineOutput> {
    let tau = match config.model {
        ModelKind::FixedEffect => 0.0,
        _ => fixed_tau(&config.schedule)?,
    };
    let mut belief = config.prior;
    let mut posteriors = vec![Posterior::Gaussian(belief)];
    let mut study_ids = vec![Vec::new()];
    for group in seq.groups() {
        for r in group {
            belief = conjugate_update(belief, r.estimate, effective_obs_variance(r, tau))?;
        }
        posteriors.push(Posterior::Gaussian(belief));
        study_ids.push(group.iter().map(|r| r.id.clone()).collect());
    }
    Ok(EngineOutput {
        posteriors,
        study_ids,
        final_joint: None,
    })
}

/// Linear-Gaussian measurement update for one group under the labeled model.
///
/// Each record observes `theta + gamma_label` with noise `sigma^2 + tau^2`.
/// Labels are registered lazily with prior N(0, kappa^2), kappa taken from
/// the schedule at the record's step. Joseph-form covariance update keeps the
/// covariance symmetric positive definite.
pub fn kalman_labeled_update(
    mut state: JointGaussianState,
    group: &[StudyRecord],
    tau: f64,
    schedule: &BeliefSchedule,
) -> Result<JointGaussianState> {
    for r in group {
        let label = r.label.as_deref().ok_or_else(|| Error::UnlabeledRecord {
            id: r.id.clone(),
        })?;
        let idx = match state.label_index(label) {
            Some(i) => i,
            None => {
                let kappa = schedule.kappa_at(label, r.seq_index)?;
                state.register_label(label, kappa)
            }
        };
        let d = state.dim();
        let noise = effective_obs_variance(r, tau);

        // h = e_theta + e_gamma; work with the two nonzero components.
        let mut ph = DVector::zeros(d);
        for i in 0..d {
            ph[i] = state.cov[(i, 0)] + state.cov[(i, idx)];
        }
        let s = ph[0] + ph[idx] + noise;
        if !(s > 0.0) || !s.is_finite() {
            return Err(Error::SingularCovariance);
        }
        let gain = &ph / s;
        let resid = r.estimate - (state.mean[0] + state.mean[idx]);
        state.mean += &gain * resid;

        // Joseph form: (I - K h') P (I - K h')' + noise K K'.
        let mut a = DMatrix::identity(d, d);
        for i in 0..d {
            a[(i, 0)] -= gain[i];
            a[(i, idx)] -= gain[i];
        }
        let mut cov = &a * &state.cov * a.transpose();
        cov += &gain * gain.transpose() * noise;
        // Re-symmetrize to absorb rounding.
        let covt = cov.transpose();
        state.cov = (cov + covt) * 0.5;
    }
    Ok(state)
}

fn batch_labeled_state(
    groups: &[&[StudyRecord]],
    prior: GaussianBelief,
    tau: f64,
    schedule: &BeliefSchedule,
) -> Result<JointGaussianState> {
    let mut state = JointGaussianState::from_prior(prior);
    for group in groups {
        state = kalman_labeled_update(state, group, tau, schedule)?;
    }
    Ok(state)
}

/// Sequential trace under the labeled random-effects model.
///
/// With a static schedule the joint state is folded sequentially. When any
/// label's kappa changes over time, the batch posterior over groups `1..t`
/// is recomputed at every step `t` under the beliefs in force at that step.
pub fn run_trace_labeled(seq: &StudySequence, config: &ModelConfig) -> Result<EngineOutput> {
    let tau = fixed_tau(&config.schedule)?;
    for r in seq.records() {
        if r.label.is_none() {
            return Err(Error::UnlabeledRecord { id: r.id.clone() });
        }
    }
    let groups = seq.groups();
    let mut posteriors = vec![Posterior::Gaussian(config.prior)];
    let mut study_ids = vec![Vec::new()];
    let mut final_joint = None;

    if config.schedule.is_time_varying() {
        for t in 1..=groups.len() {
            let step_seq = groups[t - 1].last().unwrap().seq_index;
            let frozen = config.schedule.frozen_at(step_seq);
            let state = batch_labeled_state(&groups[..t], config.prior, tau, &frozen)?;
            posteriors.push(Posterior::Gaussian(state.theta_marginal()?));
            study_ids.push(groups[t - 1].iter().map(|r| r.id.clone()).collect());
            if t == groups.len() {
                final_joint = Some(state);
            }
        }
    } else {
        let mut state = JointGaussianState::from_prior(config.prior);
        for group in &groups {
            state = kalman_labeled_update(state, group, tau, &config.schedule)?;
            posteriors.push(Posterior::Gaussian(state.theta_marginal()?));
            study_ids.push(group.iter().map(|r| r.id.clone()).collect());
        }
        final_joint = Some(state);
    }
    Ok(EngineOutput {
        posteriors,
        study_ids,
        final_joint,
    })
}

/// Grid bounds covering every likelihood factor's 6-sigma mass and the
/// prior's 6-sigma mass.
fn grid_bounds(records: &[StudyRecord], prior: GaussianBelief, tau_hi: f64) -> (f64, f64) {
    let mut lo = prior.mean - 6.0 * prior.sd;
    let mut hi = prior.mean + 6.0 * prior.sd;
    let max_se_tot = records
        .iter()
        .map(|r| (r.std_error * r.std_error + tau_hi * tau_hi).sqrt())
        .fold(0.0, f64::max);
    for r in records {
        lo = lo.min(r.estimate - 6.0 * max_se_tot);
        hi = hi.max(r.estimate + 6.0 * max_se_tot);
    }
    (lo, hi)
}

/// Batch posterior over the target parameter for a prefix of studies, under
/// a random-effects model with unknown tau.
///
/// HalfNormal: marginalizes tau by trapezoid quadrature on a
/// `grid_n x grid_n` tensor grid over (theta, tau). PlugInDl: estimates tau
/// with DerSimonian-Laird on the prefix, folds the closed form, and
/// rasterizes the result.
pub fn grid_posterior(
    records: &[StudyRecord],
    prior: GaussianBelief,
    tau_spec: TauSpec,
    grid_n: usize,
) -> Result<GridBelief> {
    if records.is_empty() {
        return Err(Error::EmptySequence);
    }
    match tau_spec {
        TauSpec::Fixed(_) => Err(Error::SchemaViolation {
            pointer: "/tau".to_string(),
            message: "grid engine serves plugin_dl and halfnormal tau modes".to_string(),
        }),
        TauSpec::PlugInDl => {
            let sub = validate_sequence(records.to_vec())?;
            let tau = classical::dl_tau(&sub)?.tau;
            let mut belief = prior;
            for r in records {
                belief = conjugate_update(belief, r.estimate, effective_obs_variance(r, tau))?;
            }
            // The posterior is known in closed form here; rasterize it on
            // bounds centered on its own mass.
            let lo = belief.mean - 8.0 * belief.sd;
            let hi = belief.mean + 8.0 * belief.sd;
            GridBelief::rasterize_gaussian(belief, lo, hi, grid_n)
        }
        TauSpec::HalfNormal { scale } => {
            if !(scale > 0.0) {
                return Err(Error::SchemaViolation {
                    pointer: "/tau/scale".to_string(),
                    message: "halfnormal scale must be > 0".to_string(),
                });
            }
            let tau_hi = 3.0 * scale;
            let (lo, hi) = grid_bounds(records, prior, tau_hi);
            let tau_h = tau_hi / (grid_n as f64 - 1.0);
            let theta_h = (hi - lo) / (grid_n as f64 - 1.0);
            let ln2pi = (2.0 * std::f64::consts::PI).ln();

            let mut log_density = vec![f64::NEG_INFINITY; grid_n];
            let tau_nodes: Vec<f64> = (0..grid_n).map(|k| tau_h * k as f64).collect();
            let log_hn: Vec<f64> = tau_nodes
                .iter()
                .map(|t| {
                    // HalfNormal(scale) density on tau >= 0.
                    0.5 * (2.0 / std::f64::consts::PI).ln() - scale.ln()
                        - 0.5 * (t / scale) * (t / scale)
                })
                .collect();
            let inv_vars: Vec<Vec<f64>> = tau_nodes
                .iter()
                .map(|t| {
                    records
                        .iter()
                        .map(|r| 1.0 / (r.std_error * r.std_error + t * t))
                        .collect()
                })
                .collect();
            let log_norms: Vec<f64> = inv_vars
                .iter()
                .map(|iv| iv.iter().map(|v| 0.5 * (v.ln() - ln2pi)).sum())
                .collect();

            for j in 0..grid_n {
                let theta = lo + theta_h * j as f64;
                let mut col = vec![f64::NEG_INFINITY; grid_n];
                let mut m = f64::NEG_INFINITY;
                for k in 0..grid_n {
                    let mut ll = log_hn[k] + log_norms[k];
                    for (r, iv) in records.iter().zip(&inv_vars[k]) {
                        let d = r.estimate - theta;
                        ll -= 0.5 * d * d * iv;
                    }
                    col[k] = ll;
                    m = m.max(ll);
                }
                let integral = if m.is_finite() {
                    let mut acc = 0.0;
                    for (k, v) in col.iter().enumerate() {
                        let w = if k == 0 || k + 1 == grid_n { 0.5 } else { 1.0 };
                        acc += w * (v - m).exp();
                    }
                    m + (acc * tau_h).ln()
                } else {
                    f64::NEG_INFINITY
                };
                let zp = (theta - prior.mean) / prior.sd;
                log_density[j] = integral - 0.5 * zp * zp - prior.sd.ln() - 0.5 * ln2pi;
            }
            GridBelief::from_log_unnormalized(lo, hi, log_density)
        }
    }
}

/// Per-step grid trace for random-effects with plug-in or half-normal tau.
/// Step 0 is the prior rasterized on its own 8-sigma bounds.
pub fn run_trace_grid(seq: &StudySequence, config: &ModelConfig) -> Result<EngineOutput> {
    let prior_grid = GridBelief::rasterize_gaussian(
        config.prior,
        config.prior.mean - 8.0 * config.prior.sd,
        config.prior.mean + 8.0 * config.prior.sd,
        config.grid_n,
    )?;
    let mut posteriors = vec![Posterior::Grid(prior_grid)];
    let mut study_ids = vec![Vec::new()];
    let groups = seq.groups();
    let mut prefix_len = 0;
    for group in &groups {
        prefix_len += group.len();
        let prefix = &seq.records()[..prefix_len];
        let g = grid_posterior(prefix, config.prior, config.schedule.tau_spec, config.grid_n)?;
        posteriors.push(Posterior::Grid(g));
        study_ids.push(group.iter().map(|r| r.id.clone()).collect());
    }
    Ok(EngineOutput {
        posteriors,
        study_ids,
        final_joint: None,
    })
}

/// Equal-tailed credible interval.
pub fn credible_interval(belief: &Posterior, level: f64) -> Result<(f64, f64)> {
    assert!(level > 0.0 && level < 1.0);
    match belief {
        Posterior::Gaussian(g) => {
            let z = Normal::new(0.0, 1.0).unwrap().inverse_cdf((1.0 + level) / 2.0);
            Ok((g.mean - z * g.sd, g.mean + z * g.sd))
        }
        Posterior::Grid(g) => {
            let lo = g.quantile((1.0 - level) / 2.0)?;
            let hi = g.quantile((1.0 + level) / 2.0)?;
            Ok((lo, hi))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::{ScheduleEntry, KAPPA_UNBIASED};
    use approx::assert_abs_diff_eq;

    fn g(mean: f64, sd: f64) -> GaussianBelief {
        GaussianBelief::new(mean, sd).unwrap()
    }

    fn rec(id: &str, seq: u32, est: f64, se: f64, label: Option<&str>) -> StudyRecord {
        StudyRecord {
            id: id.to_string(),
            seq_index: seq,
            group_id: id.to_string(),
            estimate: est,
            std_error: se,
            label: label.map(str::to_string),
        }
    }

    fn schedule(entries: Vec<(u32, &str, f64)>, tau: TauSpec) -> BeliefSchedule {
        BeliefSchedule::new(
            entries
                .into_iter()
                .map(|(from, label, kappa)| ScheduleEntry {
                    effective_from: from,
                    label: label.to_string(),
                    kappa,
                })
                .collect(),
            tau,
        )
        .unwrap()
    }

    fn config(model: ModelKind, prior: GaussianBelief, sched: BeliefSchedule) -> ModelConfig {
        ModelConfig::new(model, prior, sched, 2, 512, 1024).unwrap()
    }

    #[test]
    fn conjugate_symmetric_update() {
        let post = conjugate_update(g(0.0, 1.0), 1.0, 1.0).unwrap();
        assert_abs_diff_eq!(post.mean, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(post.sd, 0.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn conjugate_uninformative_observation() {
        let prior = g(1.3, 0.7);
        let post = conjugate_update(prior, -50.0, 1e12).unwrap();
        assert_abs_diff_eq!(post.mean, prior.mean, epsilon = 1e-9);
        assert_abs_diff_eq!(post.sd, prior.sd, epsilon = 1e-9);
    }

    #[test]
    fn conjugate_near_flat_prior() {
        let post = conjugate_update(g(0.0, 1e3), 2.0, 1.0).unwrap();
        assert_abs_diff_eq!(post.mean, 2.0, epsilon = 1e-5);
        assert_abs_diff_eq!(post.sd, 1.0, epsilon = 1e-5);
    }

    #[test]
    fn conjugate_rejects_bad_variance() {
        assert!(matches!(
            conjugate_update(g(0.0, 1.0), 1.0, 0.0),
            Err(Error::NonPositiveVariance { .. })
        ));
    }

    #[test]
    fn effective_variance_adds_tau_squared() {
        let r = rec("a", 1, 0.0, 0.1, None);
        assert_abs_diff_eq!(effective_obs_variance(&r, 0.0), 0.01, epsilon = 1e-15);
        assert_abs_diff_eq!(effective_obs_variance(&r, 0.3), 0.10, epsilon = 1e-15);
    }

    #[test]
    fn re_trace_flat_prior_matches_fe() {
        let seq =
            validate_sequence(vec![rec("a", 1, 1.0, 1.0, None), rec("b", 2, 3.0, 1.0, None)])
                .unwrap();
        let cfg = config(
            ModelKind::RandomEffects,
            g(0.0, 1e6),
            schedule(vec![], TauSpec::Fixed(0.0)),
        );
        let out = run_trace_re(&seq, &cfg).unwrap();
        let last = out.posteriors.last().unwrap();
        assert_abs_diff_eq!(last.mean(), 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(last.sd(), 0.5f64.sqrt(), epsilon = 1e-6);
    }

    #[test]
    fn re_trace_sd_nonincreasing_and_matches_batch_precision() {
        let data: Vec<StudyRecord> = (1..=12)
            .map(|i| rec(&format!("s{i}"), i, 0.1 * i as f64, 0.2 + 0.01 * i as f64, None))
            .collect();
        let seq = validate_sequence(data).unwrap();
        let tau = 0.1;
        let cfg = config(
            ModelKind::RandomEffects,
            g(0.0, 2.0),
            schedule(vec![], TauSpec::Fixed(tau)),
        );
        let out = run_trace_re(&seq, &cfg).unwrap();
        let mut prev_sd = f64::INFINITY;
        for p in &out.posteriors {
            assert!(p.sd() <= prev_sd + 1e-12);
            prev_sd = p.sd();
        }
        // Batch closed form: posterior precision is prior precision plus the
        // sum of effective observation precisions.
        let batch_prec: f64 = 1.0 / 4.0
            + seq
                .records()
                .iter()
                .map(|r| 1.0 / effective_obs_variance(r, tau))
                .sum::<f64>();
        assert_abs_diff_eq!(
            out.posteriors.last().unwrap().sd(),
            (1.0 / batch_prec).sqrt(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn fixed_effect_forces_zero_tau() {
        let seq = validate_sequence(vec![rec("a", 1, 1.0, 0.5, None)]).unwrap();
        let cfg = config(
            ModelKind::FixedEffect,
            g(0.0, 1e6),
            schedule(vec![], TauSpec::Fixed(0.7)),
        );
        let out = run_trace_re(&seq, &cfg).unwrap();
        assert_abs_diff_eq!(out.posteriors[1].sd(), 0.5, epsilon = 1e-6);
    }

    /// Brute-force 2-D grid posterior over (theta, gamma) for one label.
    fn brute_force_theta_marginal(
        prior: GaussianBelief,
        kappa: f64,
        obs: &[(f64, f64)],
        n: usize,
    ) -> (f64, f64) {
        let span = 8.0;
        let t_lo = prior.mean - span * prior.sd;
        let t_hi = prior.mean + span * prior.sd;
        let g_lo = -span * kappa.max(0.1);
        let g_hi = span * kappa.max(0.1);
        let th = (t_hi - t_lo) / (n as f64 - 1.0);
        let gh = (g_hi - g_lo) / (n as f64 - 1.0);
        let mut w_sum = 0.0;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for i in 0..n {
            let theta = t_lo + th * i as f64;
            let zp = (theta - prior.mean) / prior.sd;
            let mut row = 0.0;
            for j in 0..n {
                let gamma = g_lo + gh * j as f64;
                let mut ll = -0.5 * zp * zp - 0.5 * (gamma / kappa) * (gamma / kappa);
                for (y, var) in obs {
                    let d = y - theta - gamma;
                    ll -= 0.5 * d * d / var;
                }
                row += ll.exp();
            }
            w_sum += row;
            m1 += row * theta;
            m2 += row * theta * theta;
        }
        let mean = m1 / w_sum;
        (mean, (m2 / w_sum - mean * mean).sqrt())
    }

    #[test]
    fn kalman_single_obs_matches_brute_force() {
        let prior = g(0.0, 1.0);
        let sched = schedule(vec![(1, "A", 1.0)], TauSpec::Fixed(0.0));
        let state = JointGaussianState::from_prior(prior);
        let group = vec![rec("a", 1, 2.0, 1.0, Some("A"))];
        let state = kalman_labeled_update(state, &group, 0.0, &sched).unwrap();
        let marg = state.theta_marginal().unwrap();
        // Frozen from the 2001x2001 brute-force oracle; analytically
        // mean = 2/3, var = 2/3.
        assert_abs_diff_eq!(marg.mean, 0.6666666, epsilon = 1e-6);
        assert_abs_diff_eq!(marg.sd * marg.sd, 0.6666666, epsilon = 1e-6);
        let (bf_mean, bf_sd) = brute_force_theta_marginal(prior, 1.0, &[(2.0, 1.0)], 801);
        assert_abs_diff_eq!(marg.mean, bf_mean, epsilon = 1e-4);
        assert_abs_diff_eq!(marg.sd, bf_sd, epsilon = 1e-4);
    }

    #[test]
    fn kalman_tiny_kappa_degenerates_to_conjugate() {
        let prior = g(0.3, 0.8);
        let sched = schedule(vec![(1, "A", 1e-8)], TauSpec::Fixed(0.0));
        let state = JointGaussianState::from_prior(prior);
        let group = vec![rec("a", 1, 1.4, 0.5, Some("A"))];
        let state = kalman_labeled_update(state, &group, 0.0, &sched).unwrap();
        let marg = state.theta_marginal().unwrap();
        let conj = conjugate_update(prior, 1.4, 0.25).unwrap();
        assert_abs_diff_eq!(marg.mean, conj.mean, epsilon = 1e-6);
        assert_abs_diff_eq!(marg.sd, conj.sd, epsilon = 1e-6);
    }

    #[test]
    fn kalman_huge_kappa_is_uninformative() {
        let prior = g(0.3, 0.8);
        let sched = schedule(vec![(1, "A", 1e6)], TauSpec::Fixed(0.0));
        let state = JointGaussianState::from_prior(prior);
        let group = vec![rec("a", 1, 5.0, 0.5, Some("A"))];
        let state = kalman_labeled_update(state, &group, 0.0, &sched).unwrap();
        let marg = state.theta_marginal().unwrap();
        assert!((marg.mean - prior.mean).abs() < 1e-4);
        assert!((marg.sd - prior.sd).abs() < 1e-4);
    }

    #[test]
    fn kalman_rejects_unlabeled() {
        let sched = schedule(vec![(1, "A", 1.0)], TauSpec::Fixed(0.0));
        let state = JointGaussianState::from_prior(g(0.0, 1.0));
        let group = vec![rec("a", 1, 2.0, 1.0, None)];
        assert!(matches!(
            kalman_labeled_update(state, &group, 0.0, &sched),
            Err(Error::UnlabeledRecord { .. })
        ));
    }

    #[test]
    fn labeled_sequential_fold_equals_batch() {
        // Static schedule: the sequential fold is exactly the single joint
        // Gaussian solve, so refolding in one batch must agree.
        let data: Vec<StudyRecord> = (1..=5)
            .map(|i| {
                rec(
                    &format!("s{i}"),
                    i,
                    0.3 * (i as f64) - 0.7,
                    0.1 + 0.05 * i as f64,
                    Some(if i % 2 == 0 { "A" } else { "B" }),
                )
            })
            .collect();
        let seq = validate_sequence(data).unwrap();
        let sched = schedule(vec![(1, "A", 0.5), (1, "B", 0.2)], TauSpec::Fixed(0.05));
        let cfg = config(ModelKind::LabeledRandomEffects, g(0.0, 1.0), sched.clone());
        let out = run_trace_labeled(&seq, &cfg).unwrap();
        let batch = batch_labeled_state(&seq.groups(), cfg.prior, 0.05, &sched).unwrap();
        let seq_final = match out.posteriors.last().unwrap() {
            Posterior::Gaussian(g) => *g,
            _ => unreachable!(),
        };
        let batch_marg = batch.theta_marginal().unwrap();
        assert_abs_diff_eq!(seq_final.mean, batch_marg.mean, epsilon = 1e-8);
        assert_abs_diff_eq!(seq_final.sd, batch_marg.sd, epsilon = 1e-8);
    }

    #[test]
    fn labeled_covariance_stays_positive_definite() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(42);
        let sched = schedule(
            vec![(1, "A", 0.7), (1, "B", 0.05), (1, "C", 2.0)],
            TauSpec::Fixed(0.1),
        );
        let mut state = JointGaussianState::from_prior(g(0.0, 1.0));
        for i in 1..=1000u32 {
            let label = ["A", "B", "C"][rng.gen_range(0..3)];
            let group = vec![rec(
                &format!("s{i}"),
                i,
                rng.gen_range(-2.0..2.0),
                rng.gen_range(0.05..0.5),
                Some(label),
            )];
            state = kalman_labeled_update(state, &group, 0.1, &sched).unwrap();
            state.check_valid().unwrap();
        }
    }

    #[test]
    fn time_varying_schedule_recomputes_under_current_beliefs() {
        // kappa for A jumps at step 3; the step-3 posterior must be computed
        // as if A always had the new kappa.
        let data: Vec<StudyRecord> = (1..=3)
            .map(|i| rec(&format!("s{i}"), i, 1.0, 0.1, Some(if i < 3 { "A" } else { "B" })))
            .collect();
        let seq = validate_sequence(data).unwrap();
        let tv = schedule(
            vec![(1, "A", KAPPA_UNBIASED), (3, "A", 1.0), (1, "B", KAPPA_UNBIASED)],
            TauSpec::Fixed(0.0),
        );
        let cfg = config(ModelKind::LabeledRandomEffects, g(0.0, 1.0), tv);
        let out = run_trace_labeled(&seq, &cfg).unwrap();

        let static_after = schedule(
            vec![(1, "A", 1.0), (1, "B", KAPPA_UNBIASED)],
            TauSpec::Fixed(0.0),
        );
        let cfg2 = config(ModelKind::LabeledRandomEffects, g(0.0, 1.0), static_after);
        let ref_out = run_trace_labeled(&seq, &cfg2).unwrap();
        assert_abs_diff_eq!(
            out.posteriors[3].mean(),
            ref_out.posteriors[3].mean(),
            epsilon = 1e-10
        );
        assert_abs_diff_eq!(
            out.posteriors[3].sd(),
            ref_out.posteriors[3].sd(),
            epsilon = 1e-10
        );
        // Step 2 still reflects the original trust in A: sd shrinks sharply.
        assert!(out.posteriors[2].sd() < 0.1);
        // Step 3 under doubt: uncertainty springs back up.
        assert!(out.posteriors[3].sd() > out.posteriors[2].sd());
    }

    #[test]
    fn grid_halfnormal_tiny_scale_matches_fixed_zero() {
        let records = vec![rec("a", 1, 0.8, 0.3, None)];
        let prior = g(0.0, 1.0);
        let grid = grid_posterior(&records, prior, TauSpec::HalfNormal { scale: 1e-6 }, 512)
            .unwrap();
        let exact = conjugate_update(prior, 0.8, 0.09).unwrap();
        let cell = grid.step();
        assert!((grid.mean() - exact.mean).abs() < 2.0 * cell);
        assert!((grid.sd() - exact.sd).abs() < 2.0 * cell);
    }

    #[test]
    fn grid_plugin_dl_zero_heterogeneity_matches_fe() {
        let records: Vec<StudyRecord> = (1..=5)
            .map(|i| rec(&format!("s{i}"), i, 1.0, 1.0, None))
            .collect();
        let prior = g(0.0, 1e6);
        let grid = grid_posterior(&records, prior, TauSpec::PlugInDl, 512).unwrap();
        // tau-hat = 0 and the flat-prior fold is the fixed-effect answer.
        assert_abs_diff_eq!(grid.mean(), 1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(grid.sd(), (1.0f64 / 5.0).sqrt(), epsilon = 1e-6);
    }

    /// Independent 2-D quadrature at explicit resolution, used as the oracle
    /// for the half-normal grid engine.
    fn halfnormal_oracle(
        records: &[(f64, f64)],
        prior: GaussianBelief,
        scale: f64,
        n: usize,
    ) -> (f64, f64) {
        let tau_hi = 3.0 * scale;
        let max_se = records.iter().map(|r| r.1).fold(0.0, f64::max);
        let se_tot = (max_se * max_se + tau_hi * tau_hi).sqrt();
        let lo = records
            .iter()
            .map(|r| r.0)
            .fold(f64::INFINITY, f64::min)
            .min(prior.mean - 6.0 * prior.sd)
            - 6.0 * se_tot;
        let hi = records
            .iter()
            .map(|r| r.0)
            .fold(f64::NEG_INFINITY, f64::max)
            .max(prior.mean + 6.0 * prior.sd)
            + 6.0 * se_tot;
        let th = (hi - lo) / (n as f64 - 1.0);
        let tauh = tau_hi / (n as f64 - 1.0);
        let mut w_sum = 0.0;
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        for i in 0..n {
            let theta = lo + th * i as f64;
            let zp = (theta - prior.mean) / prior.sd;
            let mut col = 0.0;
            for k in 0..n {
                let tau = tauh * k as f64;
                let mut ll = -0.5 * (tau / scale) * (tau / scale);
                for (y, se) in records {
                    let var = se * se + tau * tau;
                    let d = y - theta;
                    ll += -0.5 * d * d / var - 0.5 * var.ln();
                }
                let w = if k == 0 || k + 1 == n { 0.5 } else { 1.0 };
                col += w * ll.exp();
            }
            let f = col * (-0.5 * zp * zp).exp();
            w_sum += f;
            m1 += f * theta;
            m2 += f * theta * theta;
        }
        let mean = m1 / w_sum;
        (mean, (m2 / w_sum - mean * mean).sqrt())
    }

    #[test]
    fn grid_halfnormal_widens_posterior_on_conflicting_data() {
        let records = vec![
            rec("a", 1, -1.0, 0.1, None),
            rec("b", 2, 0.0, 0.1, None),
            rec("c", 3, 1.0, 0.1, None),
        ];
        let prior = g(0.0, 2.0);
        let grid =
            grid_posterior(&records, prior, TauSpec::HalfNormal { scale: 1.0 }, 512).unwrap();
        // Fixed-effect fold ignores heterogeneity entirely.
        let mut fe = prior;
        for r in &records {
            fe = conjugate_update(fe, r.estimate, r.std_error * r.std_error).unwrap();
        }
        assert!(grid.sd() > fe.sd);
        // Cross-check against the independent quadrature at 4x resolution.
        let (o_mean, o_sd) =
            halfnormal_oracle(&[(-1.0, 0.1), (0.0, 0.1), (1.0, 0.1)], prior, 1.0, 2048);
        assert_abs_diff_eq!(grid.mean(), o_mean, epsilon = 2.0 * grid.step());
        assert_abs_diff_eq!(grid.sd(), o_sd, epsilon = 2.0 * grid.step());
    }

    #[test]
    fn credible_interval_standard_normal() {
        let (lo, hi) = credible_interval(&Posterior::Gaussian(g(0.0, 1.0)), 0.95).unwrap();
        assert_abs_diff_eq!(lo, -1.959964, epsilon = 1e-5);
        assert_abs_diff_eq!(hi, 1.959964, epsilon = 1e-5);
    }

    #[test]
    fn credible_interval_affine() {
        let (lo, hi) = credible_interval(&Posterior::Gaussian(g(2.0, 0.5)), 0.95).unwrap();
        assert_abs_diff_eq!(lo, 1.020018, epsilon = 1e-5);
        assert_abs_diff_eq!(hi, 2.979982, epsilon = 1e-5);
    }

    #[test]
    fn credible_interval_grid_matches_gaussian() {
        let grid = GridBelief::rasterize_gaussian(g(0.0, 1.0), -8.0, 8.0, 512).unwrap();
        let (lo, hi) = credible_interval(&Posterior::Grid(grid), 0.95).unwrap();
        assert_abs_diff_eq!(lo, -1.959964, epsilon = 0.01);
        assert_abs_diff_eq!(hi, 1.959964, epsilon = 0.01);
    }
}
