//! Structural properties of the simulation studies, checked on small
//! batteries so the file stays affordable next to the rest of the suite.

use std::sync::OnceLock;

use difgate::sim::{
    generate_preexposure, generate_washout, run_study, ConditionSummary, SimulationConfig,
    SimulationSummary, Study,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn washout_battery() -> &'static SimulationSummary {
    static CELL: OnceLock<SimulationSummary> = OnceLock::new();
    CELL.get_or_init(|| {
        let config = SimulationConfig {
            study: Study::Washout,
            items: 8,
            persons_per_group: 400,
            replications: 120,
            dif_props: vec![0.0, 0.125, 0.25, 0.75],
            seed: 909,
            ..SimulationConfig::default()
        };
        run_study(&config).unwrap()
    })
}

fn preexposure_battery() -> &'static SimulationSummary {
    static CELL: OnceLock<SimulationSummary> = OnceLock::new();
    CELL.get_or_init(|| {
        let config = SimulationConfig {
            study: Study::Preexposure,
            items: 8,
            persons_per_group: 400,
            replications: 120,
            dif_props: vec![0.0, 0.125],
            seed: 910,
            ..SimulationConfig::default()
        };
        run_study(&config).unwrap()
    })
}

fn cond(summary: &SimulationSummary, p: f64) -> &ConditionSummary {
    summary
        .conditions
        .iter()
        .find(|c| (c.p - p).abs() < 1e-12)
        .unwrap()
}

#[test]
fn washout_truth_recomputes_from_stored_parameters() {
    let config = SimulationConfig {
        study: Study::Washout,
        items: 8,
        persons_per_group: 60,
        ..SimulationConfig::default()
    };
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (data, truth) = generate_washout(&config, 0.25, &mut rng);
        assert_eq!(data.n_items(), 8);
        assert_eq!(data.n_persons(), 120);
        assert_eq!(truth.delta0, 0.4);
        assert_eq!(truth.dif_items.iter().filter(|&&d| d).count(), 2);
        for i in 0..8 {
            let (a0, b0) = truth.control[i];
            let (a1, b1) = truth.treatment[i];
            assert_eq!(a0, a1);
            let recomputed = (b1 - b0) / a0;
            assert!(
                (recomputed - truth.item_delta[i]).abs() < 1e-12,
                "seed {seed} item {i}: {recomputed} vs {}",
                truth.item_delta[i]
            );
            let intended = if truth.dif_items[i] { 0.0 } else { 0.4 };
            assert_eq!(truth.item_delta[i], intended, "seed {seed} item {i}");
        }
    }
}

#[test]
fn preexposure_truth_recomputes_from_stored_parameters() {
    let config = SimulationConfig {
        study: Study::Preexposure,
        items: 8,
        persons_per_group: 60,
        ..SimulationConfig::default()
    };
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (data, truth) = generate_preexposure(&config, 0.5, &mut rng);
        assert_eq!(data.n_persons(), 120);
        assert_eq!(truth.delta0, 0.0);
        assert_eq!(truth.dif_items.iter().filter(|&&d| d).count(), 4);
        for i in 0..8 {
            let (a0, b0) = truth.control[i];
            let (a1, b1) = truth.treatment[i];
            assert_eq!(a0, a1);
            let recomputed = (b1 - b0) / a0;
            assert!(
                (recomputed - truth.item_delta[i]).abs() < 1e-12,
                "seed {seed} item {i}: {recomputed} vs {}",
                truth.item_delta[i]
            );
            if truth.dif_items[i] {
                // shift in [0.4, 0.5) over slope in [0.5, 2.0)
                assert!(
                    truth.item_delta[i] > 0.2 && truth.item_delta[i] < 1.0,
                    "seed {seed} item {i}: {}",
                    truth.item_delta[i]
                );
            } else {
                assert_eq!(truth.item_delta[i], 0.0, "seed {seed} item {i}");
            }
        }
    }
}

#[test]
fn null_rejection_stays_near_nominal() {
    let w = cond(washout_battery(), 0.0);
    let x = cond(preexposure_battery(), 0.0);
    assert!(
        w.rejection_rate <= 0.10,
        "washout null {}",
        w.rejection_rate
    );
    assert!(
        x.rejection_rate <= 0.10,
        "preexposure null {}",
        x.rejection_rate
    );
}

#[test]
fn power_rises_from_the_null_in_both_designs() {
    let w = washout_battery();
    let w0 = cond(w, 0.0).rejection_rate;
    let w1 = cond(w, 0.125).rejection_rate;
    assert!(w1 > w0 + 0.03, "washout onset {w0} -> {w1}");
    let x = preexposure_battery();
    let x0 = cond(x, 0.0).rejection_rate;
    let x1 = cond(x, 0.125).rejection_rate;
    assert!(x1 > x0 + 0.03, "preexposure onset {x0} -> {x1}");
}

#[test]
fn washout_mixed_conditions_lock_on_the_majority_cluster() {
    let w = washout_battery();
    let lo = cond(w, 0.25);
    let hi = cond(w, 0.75);
    // complementary conditions recover complementary clusters, so the
    // robust means add up to the designed impact
    let sum = lo.mean_delta_r + hi.mean_delta_r;
    assert!((sum - 0.4).abs() < 0.1, "mirror sum {sum}");
    // and each sits past the naive mean on its majority side
    assert!(
        lo.mean_delta_r > lo.mean_delta_u + 0.02,
        "low {} vs {}",
        lo.mean_delta_r,
        lo.mean_delta_u
    );
    assert!(
        hi.mean_delta_r < hi.mean_delta_u - 0.03,
        "high {} vs {}",
        hi.mean_delta_r,
        hi.mean_delta_u
    );
}

#[test]
fn delta_sign_matches_the_design_story() {
    // washout: robust exceeds naive, pre-exposure: naive is inflated
    let lo = cond(washout_battery(), 0.25);
    assert!(lo.mean_delta > 0.02, "washout mean delta {}", lo.mean_delta);
    let x = cond(preexposure_battery(), 0.125);
    assert!(
        x.mean_delta < -0.02,
        "preexposure mean delta {}",
        x.mean_delta
    );
}

#[test]
fn replications_never_fail_at_battery_scale() {
    for s in [washout_battery(), preexposure_battery()] {
        for c in &s.conditions {
            assert_eq!(c.failures, 0, "{} p={}", s.study, c.p);
        }
    }
}
