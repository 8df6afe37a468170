//! Synthetic-literature generator: a two-methodology data-generating process
//! and the built-in innovation scenarios.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::types::{
    validate_sequence, BeliefSchedule, ScheduleEntry, StudyRecord, StudySequence, TauSpec,
    KAPPA_UNBIASED,
};

/// RNG pinned by algorithm name so determinism survives library upgrades.
pub const RNG_IDENTITY: &str = "rand_chacha-0.3 ChaCha12 seed_from_u64; rand_distr-0.4 Normal";

pub const LABEL_OLD: &str = "method-1";
pub const LABEL_NEW: &str = "method-2";

/// Parameters of the data-generating process.
///
/// Studies 1..n_old use the established methodology (label "method-1",
/// bias beta); studies n_old+1..n_old+n_new use the new methodology
/// (label "method-2", unbiased). Generative draws:
/// `z_i ~ N(beta * l_i, var_z)`, `y_i ~ N(theta_star + z_i, var_y)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgpParams {
    pub theta_star: f64,
    pub beta: f64,
    pub var_z: f64,
    pub var_y: f64,
    pub n_old: u32,
    pub n_new: u32,
    pub seed: u64,
    /// Override for the reported standard error of every study. By default
    /// method-1 reports `sqrt(var_y + var_z)` and method-2 `sqrt(var_y)`.
    pub const_se: Option<f64>,
}

impl Default for DgpParams {
    fn default() -> Self {
        Self {
            theta_star: 0.0,
            beta: 1.0,
            var_z: 0.01,
            var_y: 0.01,
            n_old: 10,
            n_new: 20,
            seed: 0,
            const_se: None,
        }
    }
}

/// The two built-in methodological-innovation scenarios.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// The original methodology is suspected to be biased from the start;
    /// the pioneering study introduces an unbiased one.
    InnovationI,
    /// The original methodology is first trusted; at the switch step the
    /// community starts to doubt it while the new methodology arrives.
    InnovationII,
}

/// Scenario constants feeding `scenario_schedule`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: Scenario,
    pub kappa_old_before: f64,
    pub kappa_old_after: f64,
    pub kappa_new: f64,
    pub switch_step: u32,
}

impl ScenarioSpec {
    pub fn defaults(name: Scenario) -> Self {
        Self {
            name,
            kappa_old_before: match name {
                Scenario::InnovationI => 1.0,
                Scenario::InnovationII => KAPPA_UNBIASED,
            },
            kappa_old_after: 1.0,
            kappa_new: KAPPA_UNBIASED,
            switch_step: 11,
        }
    }
}

/// Draws a deterministic study sequence from the DGP.
pub fn simulate_dgp(params: &DgpParams) -> Result<StudySequence> {
    let mut rng = ChaCha12Rng::seed_from_u64(params.seed);
    let z_noise = Normal::new(0.0, params.var_z.sqrt()).unwrap();
    let y_noise = Normal::new(0.0, params.var_y.sqrt()).unwrap();
    let total = params.n_old + params.n_new;
    let mut records = Vec::with_capacity(total as usize);
    for i in 1..=total {
        let is_old = i <= params.n_old;
        let ell = if is_old { 1.0 } else { 0.0 };
        let z = params.beta * ell + z_noise.sample(&mut rng);
        let y = params.theta_star + z + y_noise.sample(&mut rng);
        let se = params.const_se.unwrap_or(if is_old {
            (params.var_y + params.var_z).sqrt()
        } else {
            params.var_y.sqrt()
        });
        let id = format!("s{i:03}");
        records.push(StudyRecord {
            id: id.clone(),
            seq_index: i,
            group_id: id,
            estimate: y,
            std_error: se,
            label: Some(if is_old { LABEL_OLD } else { LABEL_NEW }.to_string()),
        });
    }
    validate_sequence(records)
}

/// Belief schedule for a scenario; tau handling is supplied by the caller.
pub fn scenario_schedule(spec: &ScenarioSpec, tau_spec: TauSpec) -> Result<BeliefSchedule> {
    let entry = |from: u32, label: &str, kappa: f64| ScheduleEntry {
        effective_from: from,
        label: label.to_string(),
        kappa,
    };
    let entries = match spec.name {
        Scenario::InnovationI => vec![
            entry(1, LABEL_OLD, spec.kappa_old_before),
            entry(1, LABEL_NEW, spec.kappa_new),
        ],
        Scenario::InnovationII => vec![
            entry(1, LABEL_OLD, spec.kappa_old_before),
            entry(spec.switch_step, LABEL_OLD, spec.kappa_old_after),
            entry(spec.switch_step, LABEL_NEW, spec.kappa_new),
        ],
    };
    BeliefSchedule::new(entries, tau_spec)
}
