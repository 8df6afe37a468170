//! Cross-cutting invariants checked on randomized inputs.

use proptest::prelude::*;

use seqmeta::io::{parse_studies_str, write_studies_csv};
use seqmeta::metrics::{w2_gaussian, wp_numeric};
use seqmeta::trace::run_trace;
use seqmeta::types::{
    validate_sequence, BeliefSchedule, GaussianBelief, ModelConfig, ModelKind, ScheduleEntry,
    StudyRecord, TauSpec,
};

fn belief() -> impl Strategy<Value = GaussianBelief> {
    (-5.0..5.0f64, 0.1..3.0f64).prop_map(|(m, s)| GaussianBelief::new(m, s).unwrap())
}

fn record(i: usize) -> impl Strategy<Value = StudyRecord> {
    (-3.0..3.0f64, 0.1..2.0f64, prop::option::of("[a-z]{1,6}")).prop_map(
        move |(est, se, label)| StudyRecord {
            id: format!("s{i}"),
            seq_index: i as u32 + 1,
            group_id: format!("s{i}"),
            estimate: est,
            std_error: se,
            label,
        },
    )
}

fn sequence(max_len: usize) -> impl Strategy<Value = Vec<StudyRecord>> {
    (1..=max_len).prop_flat_map(|n| (0..n).map(record).collect::<Vec<_>>())
}

proptest! {
    #[test]
    fn w2_is_a_metric(a in belief(), b in belief(), c in belief()) {
        let (ab, ba) = (w2_gaussian(a, b), w2_gaussian(b, a));
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(w2_gaussian(a, a) == 0.0);
        prop_assert!(ab <= w2_gaussian(a, c) + w2_gaussian(c, b) + 1e-12);
    }

    #[test]
    fn w2_ignores_common_location_shifts(a in belief(), b in belief(), shift in -10.0..10.0f64) {
        let move_by = |g: GaussianBelief| GaussianBelief::new(g.mean + shift, g.sd).unwrap();
        prop_assert!((w2_gaussian(move_by(a), move_by(b)) - w2_gaussian(a, b)).abs() < 1e-9);
    }

    #[test]
    fn studies_csv_roundtrips(records in sequence(12)) {
        let Ok(seq) = validate_sequence(records) else { return Ok(()) };
        let mut buf = Vec::new();
        write_studies_csv(&seq, &mut buf).unwrap();
        let reparsed = parse_studies_str(std::str::from_utf8(&buf).unwrap()).unwrap();
        prop_assert_eq!(seq, reparsed);
    }

    #[test]
    fn fixed_effect_uncertainty_only_shrinks(records in sequence(10), prior in belief()) {
        let Ok(seq) = validate_sequence(records) else { return Ok(()) };
        let schedule = BeliefSchedule::new(vec![], TauSpec::Fixed(0.0)).unwrap();
        let config =
            ModelConfig::new(ModelKind::FixedEffect, prior, schedule, 2, 512, 64).unwrap();
        let trace = run_trace(&seq, &config, false).unwrap();
        prop_assert!(trace.rows.windows(2).all(|p| p[1].post_sd < p[0].post_sd));
    }

    #[test]
    fn schedule_lookup_is_piecewise_constant(
        kappas in prop::collection::vec(0.01..2.0f64, 1..4),
        froms in prop::collection::btree_set(1..40u32, 1..4),
    ) {
        let froms: Vec<u32> = froms.into_iter().collect();
        let entries: Vec<ScheduleEntry> = froms
            .iter()
            .zip(kappas.iter().cycle())
            .map(|(&from, &kappa)| ScheduleEntry {
                effective_from: from,
                label: "m".to_string(),
                kappa,
            })
            .collect();
        let schedule = BeliefSchedule::new(entries.clone(), TauSpec::Fixed(0.0)).unwrap();
        for t in 1..50u32 {
            let expected = entries.iter().rev().find(|e| e.effective_from <= t);
            match expected {
                Some(e) => prop_assert_eq!(schedule.kappa_at("m", t).unwrap(), e.kappa),
                None => prop_assert!(schedule.kappa_at("m", t).is_err()),
            }
        }
    }
}

/// The tail-refined quantile quadrature should cut its error roughly in half
/// when the node count doubles; allow slack for the near-exact cases.
#[test]
fn wp_error_halves_as_nodes_double() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(77);
    for _ in 0..200 {
        let a = GaussianBelief::new(rng.gen_range(-5.0..5.0), rng.gen_range(0.1..3.0)).unwrap();
        let b = GaussianBelief::new(rng.gen_range(-5.0..5.0), rng.gen_range(0.1..3.0)).unwrap();
        let exact = w2_gaussian(a, b);
        let err_512 = (wp_numeric(&a, &b, 2, 512).unwrap() - exact).abs();
        let err_1024 = (wp_numeric(&a, &b, 2, 1024).unwrap() - exact).abs();
        if err_512 > 1e-8 {
            assert!(
                err_1024 <= 0.55 * err_512,
                "convergence stalled: {err_512} -> {err_1024}"
            );
        }
    }
}
