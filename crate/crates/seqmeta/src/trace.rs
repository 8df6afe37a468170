//! Assembles engine outputs into research traces and runs kappa sweeps.

use crate::engine::{credible_interval, run_trace_grid, run_trace_labeled, run_trace_re, EngineOutput};
use crate::error::{Error, Result};
use crate::metrics::{lindley_gaussian, lindley_numeric, w2_gaussian, wp_numeric};
use crate::types::{
    ModelConfig, ModelKind, Posterior, ResearchTrace, ScheduleEntry, StudySequence, TauSpec,
    TraceRow,
};

/// Runs the configured engine and attaches per-step learning contributions.
///
/// With `retrospective_beliefs` the kappa schedule is frozen at its final
/// state before tracing, so every step is judged under today's beliefs.
pub fn run_trace(
    seq: &StudySequence,
    config: &ModelConfig,
    retrospective_beliefs: bool,
) -> Result<ResearchTrace> {
    let mut config = config.clone();
    if retrospective_beliefs {
        let last = seq.records().last().map(|r| r.seq_index).unwrap_or(1);
        config.schedule = config.schedule.frozen_at(last);
    }
    let output = dispatch(seq, &config)?;
    build_rows(&output, &config)
}

fn dispatch(seq: &StudySequence, config: &ModelConfig) -> Result<EngineOutput> {
    match (config.model, config.schedule.tau_spec) {
        (ModelKind::FixedEffect, _) => run_trace_re(seq, config),
        (ModelKind::RandomEffects, TauSpec::Fixed(_)) => run_trace_re(seq, config),
        (ModelKind::RandomEffects, _) => run_trace_grid(seq, config),
        (ModelKind::LabeledRandomEffects, _) => run_trace_labeled(seq, config),
    }
}

fn build_rows(output: &EngineOutput, config: &ModelConfig) -> Result<ResearchTrace> {
    let mut rows = Vec::with_capacity(output.posteriors.len());
    for (i, post) in output.posteriors.iter().enumerate() {
        let (w2, w1, lindley) = if i == 0 {
            (0.0, 0.0, 0.0)
        } else {
            step_metrics(&output.posteriors[i - 1], post, config.quantile_n)?
        };
        let (ci95_lo, ci95_hi) = credible_interval(post, 0.95)?;
        rows.push(TraceRow {
            step: i,
            study_ids: output.study_ids[i].clone(),
            post_mean: post.mean(),
            post_sd: post.sd(),
            ci95_lo,
            ci95_hi,
            w_contribution: if config.metric_p == 1 { w1 } else { w2 },
            w1_contribution: w1,
            lindley_contribution: lindley,
        });
    }
    Ok(ResearchTrace { rows })
}

fn step_metrics(prev: &Posterior, cur: &Posterior, quantile_n: usize) -> Result<(f64, f64, f64)> {
    match (prev, cur) {
        (Posterior::Gaussian(a), Posterior::Gaussian(b)) => Ok((
            w2_gaussian(*a, *b),
            wp_numeric(a, b, 1, quantile_n)?,
            lindley_gaussian(*a, *b),
        )),
        (Posterior::Grid(a), Posterior::Grid(b)) => Ok((
            wp_numeric(a, b, 2, quantile_n)?,
            wp_numeric(a, b, 1, quantile_n)?,
            lindley_numeric(a, b)?,
        )),
        _ => Ok((
            wp_numeric(prev, cur, 2, quantile_n)?,
            wp_numeric(prev, cur, 1, quantile_n)?,
            // Mixed representations only occur between the prior row and a
            // grid step; fall back to the scale-only Gaussian summary.
            (prev.sd() / cur.sd()).ln(),
        )),
    }
}

/// One sweep evaluation: the focus-step contribution and final posterior
/// under a substituted kappa.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub kappa_value: f64,
    pub w_contribution: f64,
    pub post_mean_final: f64,
    pub post_sd_final: f64,
}

/// Reruns the full trace for each kappa value substituted for `label`.
///
/// Existing schedule entries for the label keep their timing with the swept
/// kappa; a label without entries gets a single static entry from step 1.
pub fn sweep_kappa(
    seq: &StudySequence,
    config: &ModelConfig,
    label: &str,
    values: &[f64],
    focus_step: usize,
) -> Result<Vec<SweepRow>> {
    if !seq.labels().contains(label) {
        return Err(Error::UnknownLabel {
            label: label.to_string(),
        });
    }
    if values.is_empty() {
        return Err(Error::EmptyValueGrid);
    }
    let n_steps = seq.groups().len();
    if focus_step == 0 || focus_step > n_steps {
        return Err(Error::FocusStepOutOfRange {
            step: focus_step,
            last: n_steps,
        });
    }
    values
        .iter()
        .map(|&kappa| {
            let mut cfg = config.clone();
            let mut touched = false;
            for e in cfg.schedule.entries.iter_mut() {
                if e.label == label {
                    e.kappa = kappa;
                    touched = true;
                }
            }
            if !touched {
                cfg.schedule.entries.push(ScheduleEntry {
                    effective_from: 1,
                    label: label.to_string(),
                    kappa,
                });
            }
            let trace = run_trace(seq, &cfg, false)?;
            let last = trace.rows.last().unwrap();
            Ok(SweepRow {
                kappa_value: kappa,
                w_contribution: trace.rows[focus_step].w_contribution,
                post_mean_final: last.post_mean,
                post_sd_final: last.post_sd,
            })
        })
        .collect()
}
