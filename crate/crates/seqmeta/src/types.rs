//! Core domain types: study records, belief states, and schedules.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Prior sd used to encode "believed unbiased". An exact zero would make the
/// joint methodology-bias covariance singular.
pub const KAPPA_UNBIASED: f64 = 1e-4;

/// One reported estimate with its standard error and sequence metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub id: String,
    /// 1-based arrival order.
    pub seq_index: u32,
    /// Records sharing a group_id form one update step.
    pub group_id: String,
    pub estimate: f64,
    pub std_error: f64,
    /// Methodology identifier, when the labeled model is in use.
    pub label: Option<String>,
}

/// A validated, ordered sequence of study records.
#[derive(Debug, Clone, PartialEq)]
pub struct StudySequence {
    records: Vec<StudyRecord>,
    labels: BTreeSet<String>,
}

/// Sorts, validates, and wraps a list of records.
///
/// Rejects non-positive standard errors, duplicate sequence indices, and
/// groups whose members are not contiguous in arrival order.
pub fn validate_sequence(records: Vec<StudyRecord>) -> Result<StudySequence> {
    if records.is_empty() {
        return Err(Error::EmptySequence);
    }
    let mut records = records;
    records.sort_by_key(|r| r.seq_index);

    for r in &records {
        if !(r.std_error > 0.0) || !r.std_error.is_finite() {
            return Err(Error::NonPositiveStdError { id: r.id.clone() });
        }
        if !r.estimate.is_finite() {
            return Err(Error::NonFiniteEstimate { id: r.id.clone() });
        }
    }
    for w in records.windows(2) {
        if w[0].seq_index == w[1].seq_index {
            return Err(Error::DuplicateSeqIndex {
                first: w[0].id.clone(),
                second: w[1].id.clone(),
                seq_index: w[0].seq_index,
            });
        }
    }
    // Group members must occupy a contiguous run of the sorted order.
    let mut seen_groups: BTreeSet<&str> = BTreeSet::new();
    let mut i = 0;
    while i < records.len() {
        let gid = records[i].group_id.as_str();
        if seen_groups.contains(gid) {
            return Err(Error::NonContiguousGroup {
                group_id: gid.to_string(),
                id: records[i].id.clone(),
            });
        }
        let mut j = i + 1;
        while j < records.len() && records[j].group_id == gid {
            if records[j].seq_index != records[j - 1].seq_index + 1 {
                return Err(Error::NonContiguousGroup {
                    group_id: gid.to_string(),
                    id: records[j].id.clone(),
                });
            }
            j += 1;
        }
        seen_groups.insert(gid);
        i = j;
    }

    let labels = records
        .iter()
        .filter_map(|r| r.label.clone())
        .collect::<BTreeSet<_>>();
    Ok(StudySequence { records, labels })
}

impl StudySequence {
    pub fn records(&self) -> &[StudyRecord] {
        &self.records
    }

    pub fn labels(&self) -> &BTreeSet<String> {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Update steps: maximal runs of records sharing a group_id.
    pub fn groups(&self) -> Vec<&[StudyRecord]> {
        let mut out = Vec::new();
        let mut i = 0;
        while i < self.records.len() {
            let gid = &self.records[i].group_id;
            let mut j = i + 1;
            while j < self.records.len() && &self.records[j].group_id == gid {
                j += 1;
            }
            out.push(&self.records[i..j]);
            i = j;
        }
        out
    }
}

/// Closed-form Gaussian belief over the target parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianBelief {
    pub mean: f64,
    pub sd: f64,
}

impl GaussianBelief {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0) || !sd.is_finite() || !mean.is_finite() {
            return Err(Error::NonPositiveVariance { value: sd * sd });
        }
        Ok(Self { mean, sd })
    }

    pub fn variance(&self) -> f64 {
        self.sd * self.sd
    }
}

/// Joint Gaussian over (theta, gamma_1..gamma_L) in label-registration order.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussianState {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub label_order: Vec<String>,
}

impl JointGaussianState {
    /// Initial state: theta only, no labels registered yet.
    pub fn from_prior(prior: GaussianBelief) -> Self {
        Self {
            mean: DVector::from_element(1, prior.mean),
            cov: DMatrix::from_element(1, 1, prior.variance()),
            label_order: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Index of a label's bias component, if registered.
    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.label_order.iter().position(|l| l == label).map(|k| k + 1)
    }

    /// Appends a new bias component with prior N(0, kappa^2).
    pub fn register_label(&mut self, label: &str, kappa: f64) -> usize {
        let d = self.dim();
        let mut mean = DVector::zeros(d + 1);
        mean.rows_mut(0, d).copy_from(&self.mean);
        let mut cov = DMatrix::zeros(d + 1, d + 1);
        cov.view_mut((0, 0), (d, d)).copy_from(&self.cov);
        cov[(d, d)] = kappa * kappa;
        self.mean = mean;
        self.cov = cov;
        self.label_order.push(label.to_string());
        d
    }

    /// Marginal belief over the target parameter (component 0).
    pub fn theta_marginal(&self) -> Result<GaussianBelief> {
        let var = self.cov[(0, 0)];
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::SingularCovariance);
        }
        GaussianBelief::new(self.mean[0], var.sqrt())
    }

    /// Checks symmetry and positive definiteness (via Cholesky).
    pub fn check_valid(&self) -> Result<()> {
        let d = self.dim();
        if self.cov.nrows() != d || self.cov.ncols() != d || d != 1 + self.label_order.len() {
            return Err(Error::SingularCovariance);
        }
        for i in 0..d {
            for j in (i + 1)..d {
                let a = self.cov[(i, j)];
                let b = self.cov[(j, i)];
                let scale = a.abs().max(b.abs()).max(1e-300);
                if (a - b).abs() / scale > 1e-10 {
                    return Err(Error::SingularCovariance);
                }
            }
        }
        if self.cov.clone().cholesky().is_none() {
            return Err(Error::SingularCovariance);
        }
        Ok(())
    }
}

/// Discretized 1-D posterior density on a uniform grid, normalized so the
/// trapezoid integral of `exp(log_density)` over [lo, hi] is 1.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBelief {
    pub lo: f64,
    pub hi: f64,
    pub log_density: Vec<f64>,
}

impl GridBelief {
    pub fn n(&self) -> usize {
        self.log_density.len()
    }

    pub fn step(&self) -> f64 {
        (self.hi - self.lo) / (self.n() as f64 - 1.0)
    }

    pub fn point(&self, i: usize) -> f64 {
        self.lo + self.step() * i as f64
    }

    /// Normalizes an unnormalized log density on [lo, hi].
    pub fn from_log_unnormalized(lo: f64, hi: f64, mut log_density: Vec<f64>) -> Result<Self> {
        assert!(log_density.len() >= 2 && hi > lo);
        let m = log_density.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::GridUnderflow);
        }
        let h = (hi - lo) / (log_density.len() as f64 - 1.0);
        let mut integral = 0.0;
        for (i, ld) in log_density.iter().enumerate() {
            let w = if i == 0 || i + 1 == log_density.len() { 0.5 } else { 1.0 };
            integral += w * (ld - m).exp();
        }
        integral *= h;
        if !(integral > 0.0) || !integral.is_finite() {
            return Err(Error::GridUnderflow);
        }
        let shift = m + integral.ln();
        for ld in &mut log_density {
            *ld -= shift;
        }
        Ok(Self { lo, hi, log_density })
    }

    /// Rasterizes a Gaussian density onto [lo, hi].
    pub fn rasterize_gaussian(belief: GaussianBelief, lo: f64, hi: f64, n: usize) -> Result<Self> {
        let h = (hi - lo) / (n as f64 - 1.0);
        let log_density: Vec<f64> = (0..n)
            .map(|i| {
                let x = lo + h * i as f64;
                let z = (x - belief.mean) / belief.sd;
                -0.5 * z * z - belief.sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
            })
            .collect();
        Self::from_log_unnormalized(lo, hi, log_density)
    }

    fn densities(&self) -> Vec<f64> {
        self.log_density.iter().map(|ld| ld.exp()).collect()
    }

    /// Trapezoid mean of the density.
    pub fn mean(&self) -> f64 {
        let d = self.densities();
        let h = self.step();
        let mut acc = 0.0;
        for i in 0..d.len() {
            let w = if i == 0 || i + 1 == d.len() { 0.5 } else { 1.0 };
            acc += w * self.point(i) * d[i];
        }
        acc * h
    }

    /// Trapezoid standard deviation of the density.
    pub fn sd(&self) -> f64 {
        let mu = self.mean();
        let d = self.densities();
        let h = self.step();
        let mut acc = 0.0;
        for i in 0..d.len() {
            let w = if i == 0 || i + 1 == d.len() { 0.5 } else { 1.0 };
            let dx = self.point(i) - mu;
            acc += w * dx * dx * d[i];
        }
        (acc * h).max(0.0).sqrt()
    }

    /// CDF values at the grid nodes (trapezoid cumulative), clamped to [0, 1].
    pub fn cdf_nodes(&self) -> Vec<f64> {
        let d = self.densities();
        let h = self.step();
        let mut cdf = vec![0.0; d.len()];
        for i in 1..d.len() {
            cdf[i] = cdf[i - 1] + 0.5 * h * (d[i] + d[i - 1]);
        }
        let total = cdf[d.len() - 1];
        if total > 0.0 {
            for c in cdf.iter_mut() {
                *c = (*c / total).clamp(0.0, 1.0);
            }
        }
        cdf
    }
}

/// Inverse-CDF evaluation shared by the Gaussian and grid representations.
pub trait Quantile {
    fn quantile(&self, u: f64) -> Result<f64>;
}

impl Quantile for GaussianBelief {
    fn quantile(&self, u: f64) -> Result<f64> {
        Ok(self.mean + self.sd * crate::metrics::std_normal_quantile(u))
    }
}

impl Quantile for GridBelief {
    fn quantile(&self, u: f64) -> Result<f64> {
        // Monotone linear interpolation of the trapezoid CDF.
        let cdf = self.cdf_nodes();
        for w in cdf.windows(2) {
            if w[1] < w[0] {
                return Err(Error::NonMonotoneCdf);
            }
        }
        let u = u.clamp(0.0, 1.0);
        match cdf.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => Ok(self.point(i)),
            Err(0) => Ok(self.lo),
            Err(i) if i >= cdf.len() => Ok(self.hi),
            Err(i) => {
                let (c0, c1) = (cdf[i - 1], cdf[i]);
                let frac = if c1 > c0 { (u - c0) / (c1 - c0) } else { 0.0 };
                Ok(self.point(i - 1) + frac * self.step())
            }
        }
    }
}

/// Either closed-form or grid posterior representation.
#[derive(Debug, Clone, PartialEq)]
pub enum Posterior {
    Gaussian(GaussianBelief),
    Grid(GridBelief),
}

impl Posterior {
    pub fn mean(&self) -> f64 {
        match self {
            Posterior::Gaussian(g) => g.mean,
            Posterior::Grid(g) => g.mean(),
        }
    }

    pub fn sd(&self) -> f64 {
        match self {
            Posterior::Gaussian(g) => g.sd,
            Posterior::Grid(g) => g.sd(),
        }
    }
}

impl Quantile for Posterior {
    fn quantile(&self, u: f64) -> Result<f64> {
        match self {
            Posterior::Gaussian(g) => g.quantile(u),
            Posterior::Grid(g) => g.quantile(u),
        }
    }
}

/// Handling of the effect-heterogeneity scale tau.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TauSpec {
    /// Known tau, supplied by config. The fixed-effect model is tau = 0.
    Fixed(f64),
    /// Re-estimate tau per prefix with the DerSimonian-Laird moment estimator.
    PlugInDl,
    /// Fully Bayesian: half-normal prior on tau with the given scale.
    HalfNormal { scale: f64 },
}

/// One time-stamped belief about a methodology's bias scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    /// The entry applies to the update at this step itself and onwards.
    pub effective_from: u32,
    pub label: String,
    pub kappa: f64,
}

/// Time-indexed map from methodology labels to bias scales kappa.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefSchedule {
    pub entries: Vec<ScheduleEntry>,
    pub tau_spec: TauSpec,
}

impl BeliefSchedule {
    pub fn new(entries: Vec<ScheduleEntry>, tau_spec: TauSpec) -> Result<Self> {
        for e in &entries {
            if !(e.kappa > 0.0) || !e.kappa.is_finite() {
                return Err(Error::SchemaViolation {
                    pointer: "/kappa_schedule".to_string(),
                    message: format!("kappa for label '{}' must be > 0", e.label),
                });
            }
            if e.effective_from == 0 {
                return Err(Error::SchemaViolation {
                    pointer: "/kappa_schedule".to_string(),
                    message: format!("effective_from for label '{}' must be >= 1", e.label),
                });
            }
        }
        // Per-label effective_from indices must be strictly increasing.
        let labels: BTreeSet<&str> = entries.iter().map(|e| e.label.as_str()).collect();
        for label in labels {
            let mut last = 0u32;
            for e in entries.iter().filter(|e| e.label == label) {
                if e.effective_from <= last {
                    return Err(Error::SchemaViolation {
                        pointer: "/kappa_schedule".to_string(),
                        message: format!(
                            "entries for label '{label}' must have strictly increasing effective_from"
                        ),
                    });
                }
                last = e.effective_from;
            }
        }
        Ok(Self { entries, tau_spec })
    }

    /// The kappa of the latest entry with effective_from <= seq_index.
    pub fn kappa_at(&self, label: &str, seq_index: u32) -> Result<f64> {
        self.entries
            .iter()
            .filter(|e| e.label == label && e.effective_from <= seq_index)
            .max_by_key(|e| e.effective_from)
            .map(|e| e.kappa)
            .ok_or_else(|| Error::LabelUnknownAtTime {
                label: label.to_string(),
                seq_index,
            })
    }

    /// Labels with at least one entry.
    pub fn labels(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.label.clone()).collect()
    }

    /// True when some label's kappa takes more than one distinct value.
    pub fn is_time_varying(&self) -> bool {
        self.labels().iter().any(|label| {
            let kappas: Vec<f64> = self
                .entries
                .iter()
                .filter(|e| &e.label == label)
                .map(|e| e.kappa)
                .collect();
            kappas.iter().any(|k| *k != kappas[0])
        })
    }

    /// Collapses the schedule to the beliefs in force at `seq_index`. Labels
    /// with no entry at or before that step are dropped.
    pub fn frozen_at(&self, seq_index: u32) -> Self {
        let entries = self
            .labels()
            .into_iter()
            .filter_map(|label| {
                self.kappa_at(&label, seq_index).ok().map(|kappa| ScheduleEntry {
                    effective_from: 1,
                    label,
                    kappa,
                })
            })
            .collect();
        Self {
            entries,
            tau_spec: self.tau_spec,
        }
    }
}

/// Which meta-analysis model drives the trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    FixedEffect,
    RandomEffects,
    LabeledRandomEffects,
}

/// Full inference configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub model: ModelKind,
    pub prior: GaussianBelief,
    pub schedule: BeliefSchedule,
    /// Wasserstein order for the trace contribution column; 1 or 2.
    pub metric_p: u8,
    pub grid_n: usize,
    pub quantile_n: usize,
}

impl ModelConfig {
    pub fn new(
        model: ModelKind,
        prior: GaussianBelief,
        schedule: BeliefSchedule,
        metric_p: u8,
        grid_n: usize,
        quantile_n: usize,
    ) -> Result<Self> {
        if metric_p != 1 && metric_p != 2 {
            return Err(Error::SchemaViolation {
                pointer: "/metric/p".to_string(),
                message: "p must be 1 or 2".to_string(),
            });
        }
        for (ptr, n) in [("/grid/n", grid_n), ("/grid/quantile_n", quantile_n)] {
            if n < 64 || !n.is_power_of_two() {
                return Err(Error::SchemaViolation {
                    pointer: ptr.to_string(),
                    message: "must be a power of two >= 64".to_string(),
                });
            }
        }
        Ok(Self {
            model,
            prior,
            schedule,
            metric_p,
            grid_n,
            quantile_n,
        })
    }
}

/// One row of the research trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// 0 is the prior; update steps count from 1.
    pub step: usize,
    pub study_ids: Vec<String>,
    pub post_mean: f64,
    pub post_sd: f64,
    pub ci95_lo: f64,
    pub ci95_hi: f64,
    /// Wasserstein-p distance to the previous posterior (p from config).
    pub w_contribution: f64,
    /// Wasserstein-1 companion value.
    pub w1_contribution: f64,
    pub lindley_contribution: f64,
}

/// Ordered trace rows; row 0 is the prior with zero contribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ResearchTrace {
    pub rows: Vec<TraceRow>,
}
