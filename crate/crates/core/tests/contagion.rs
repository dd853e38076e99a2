mod common;

use netgee::contagion::{
    assign_exposure, baseline_confounder, calibrate_psi, propensity, run_post_exposure, run_to_baseline, seed_initial,
    simulate, step, Affectivity, ContagionConfig, ContagionError, ContagionState, ExposureMode,
};
use netgee::netgen::{generate_cluster_set, ClusterSetSpec, DegreeSpec, MixingSpec, RewireSpec};
use netgee::rng::stream;
use netgee::scalar::logit;
use netgee::Network;
use proptest::prelude::*;

fn star(leaves: usize) -> Network {
    Network::new(1, leaves + 1, (1..=leaves).map(|v| (0, v)), None).unwrap()
}

fn clusters(m: usize, seed: u64) -> Vec<Network> {
    let spec = ClusterSetSpec {
        clusters: m,
        size_range: (120, 280),
        degree: DegreeSpec::poisson(10.0),
        mixing: MixingSpec::random(8),
        rewire: Some(RewireSpec::new(0.3)),
    };
    generate_cluster_set(&spec, seed).unwrap()
}

#[test]
fn seeds_round_of_pooled_population() {
    let nets = clusters(48, 1);
    let state = seed_initial(&nets, 0.01, &mut stream(2, &[])).unwrap();
    assert_eq!(state.total_nodes(), 9600);
    assert_eq!(state.affected_count(), 96);
    let again = seed_initial(&nets, 0.01, &mut stream(2, &[])).unwrap();
    assert_eq!(again.affected, state.affected);
    let tiny = vec![star(3)];
    assert!(matches!(seed_initial(&tiny, 0.01, &mut stream(2, &[])), Err(ContagionError::NoSeeds { .. })));
    let all = seed_initial(&tiny, 0.95, &mut stream(2, &[])).unwrap();
    assert_eq!(all.affected_count(), 4);
}

#[test]
fn zero_probability_changes_nothing() {
    let nets = vec![star(4)];
    let mut s = ContagionState::from_affected(&nets, &[(0, 0)]).unwrap();
    let before = s.affected.clone();
    assert_eq!(step(&mut s, &nets, &[0.0], Affectivity::Degree, &mut stream(1, &[])).unwrap(), 0);
    assert_eq!(s.affected, before);
}

#[test]
fn star_center_with_degree_affectivity_infects_all_leaves() {
    let nets = vec![star(4)];
    let mut s = ContagionState::from_affected(&nets, &[(0, 0)]).unwrap();
    assert_eq!(step(&mut s, &nets, &[1.0], Affectivity::Degree, &mut stream(1, &[])).unwrap(), 4);
    assert_eq!(s.affected_count(), 5);
}

#[test]
fn star_center_with_unit_affectivity_infects_one_leaf_per_step() {
    let nets = vec![star(4)];
    let mut s = ContagionState::from_affected(&nets, &[(0, 0)]).unwrap();
    let mut r = stream(3, &[]);
    assert_eq!(step(&mut s, &nets, &[1.0], Affectivity::Unit, &mut r).unwrap(), 1);
    assert_eq!(s.affected_count(), 2);
}

#[test]
fn complete_graph_reaches_baseline_in_one_step() {
    let n = 20;
    let edges = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v)));
    let nets = vec![Network::new(1, n, edges, None).unwrap()];
    let mut cfg = ContagionConfig::new(0.05, 0.9, Affectivity::Degree);
    cfg.p0 = 1.0;
    let mut s = seed_initial(&nets, cfg.seed_frac, &mut stream(4, &[])).unwrap();
    run_to_baseline(&mut s, &nets, &cfg, &mut stream(5, &[])).unwrap();
    assert_eq!(s.time, 1);
    assert_eq!(s.baseline.as_ref().unwrap(), &s.affected);
}

#[test]
fn baseline_just_above_seed_takes_at_most_one_step() {
    let nets = clusters(4, 6);
    let cfg = ContagionConfig::new(0.1, 0.1 + 1e-6, Affectivity::Degree);
    let mut s = seed_initial(&nets, cfg.seed_frac, &mut stream(6, &[])).unwrap();
    run_to_baseline(&mut s, &nets, &cfg, &mut stream(7, &[])).unwrap();
    assert!(s.time <= 1);
}

#[test]
fn isolated_seeds_stall() {
    // Node 0 is isolated, the rest form a path; the only seed is node 0.
    let nets = vec![Network::new(1, 10, (1..9).map(|v| (v, v + 1)), None).unwrap()];
    let cfg = ContagionConfig::new(0.1, 0.5, Affectivity::Degree);
    let mut s = ContagionState::from_affected(&nets, &[(0, 0)]).unwrap();
    let err = run_to_baseline(&mut s, &nets, &cfg, &mut stream(8, &[])).unwrap_err();
    assert!(matches!(err, ContagionError::Stalled { .. }));
}

#[test]
fn psi_calibration_examples() {
    let (psi0, psi_a) = calibrate_psi(&[0.0, 0.5, 1.0]).unwrap();
    assert!((psi_a - 2.0 * logit(0.9)).abs() < 1e-12);
    assert!((psi0 + logit(0.9)).abs() < 1e-12);
    assert!((psi_a - 4.394449154672439).abs() < 1e-9);
    let x = [3.0, 17.0, 8.0, 40.0];
    let ps = propensity(&x, calibrate_psi(&x).unwrap());
    assert!((ps[0] - 0.1).abs() < 1e-12 && (ps[3] - 0.9).abs() < 1e-12);
    let scaled: Vec<f64> = x.iter().map(|v| 2.5 * v - 7.0).collect();
    let ps2 = propensity(&scaled, calibrate_psi(&scaled).unwrap());
    for (a, b) in ps.iter().zip(&ps2) {
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(calibrate_psi(&[2.0, 2.0]), Err(ContagionError::ConstantConfounder));
}

#[test]
fn equal_confounders_share_propensity() {
    let ps = propensity(&[1.0, 4.0, 1.0, 9.0], calibrate_psi(&[1.0, 4.0, 1.0, 9.0]).unwrap());
    assert_eq!(ps[0], ps[2]);
}

#[test]
fn exposure_needs_baseline_and_outcomes_need_exposure() {
    let nets = vec![star(4), star(5)];
    let cfg = ContagionConfig::new(0.1, 0.5, Affectivity::Degree);
    let mut s = ContagionState::from_affected(&nets, &[(0, 0), (1, 1)]).unwrap();
    assert_eq!(run_post_exposure(&mut s, &nets, &cfg, &mut stream(1, &[])), Err(ContagionError::NoExposure));
    assert_eq!(
        assign_exposure(&mut s, &[1.0, 2.0], (0.0, 1.0), ExposureMode::Bernoulli, &mut stream(1, &[])),
        Err(ContagionError::NoBaseline)
    );
}

#[test]
fn zero_follow_up_steps_keep_baseline() {
    let nets = clusters(6, 9);
    let mut cfg = ContagionConfig::new(0.01, 0.02, Affectivity::Unit);
    cfg.steps = 0;
    let run = simulate(&nets, &cfg, ExposureMode::Bernoulli, &mut stream(10, &[])).unwrap();
    assert_eq!(&run.outcomes, run.state.baseline.as_ref().unwrap());
}

#[test]
fn balanced_mode_exposes_top_half() {
    let nets = clusters(8, 11);
    let cfg = ContagionConfig::new(0.1, 0.25, Affectivity::Degree);
    let run = simulate(&nets, &cfg, ExposureMode::Balanced, &mut stream(12, &[])).unwrap();
    let exposure = run.state.exposure.as_ref().unwrap();
    assert_eq!(exposure.iter().filter(|&&a| a).count(), 4);
    let min_exposed = (0..8).filter(|&i| exposure[i]).map(|i| run.propensity[i]).fold(f64::INFINITY, f64::min);
    let max_unexposed = (0..8).filter(|&i| !exposure[i]).map(|i| run.propensity[i]).fold(0.0, f64::max);
    assert!(min_exposed >= max_unexposed);
}

#[test]
fn simulation_is_deterministic_and_monotone() {
    let nets = clusters(10, 13);
    let cfg = ContagionConfig::new(0.1, 0.25, Affectivity::Unit);
    let a = simulate(&nets, &cfg, ExposureMode::Bernoulli, &mut stream(14, &[])).unwrap();
    let b = simulate(&nets, &cfg, ExposureMode::Bernoulli, &mut stream(14, &[])).unwrap();
    assert_eq!(a.outcomes, b.outcomes);
    assert_eq!(a.confounder, b.confounder);
    let base = a.state.baseline.as_ref().unwrap();
    for (y, b0) in a.outcomes.iter().zip(base) {
        assert!(y.iter().zip(b0).all(|(&y, &b)| y || !b));
    }
    assert!(a.state.prevalence() >= 0.25 - 1e-9);
    assert_eq!(a.confounder, baseline_confounder(&a.state, &nets).unwrap());
    assert!(a.propensity.iter().all(|&g| (0.1 - 1e-12..=0.9 + 1e-12).contains(&g)));
}

#[test]
fn protective_exposure_lowers_prevalence_at_fixed_baseline() {
    // Same networks and baseline in both arms: only the transmission probability differs.
    let nets = clusters(12, 15);
    let cfg = ContagionConfig::new(0.01, 0.02, Affectivity::Unit);
    let mut base = seed_initial(&nets, cfg.seed_frac, &mut stream(16, &[])).unwrap();
    run_to_baseline(&mut base, &nets, &cfg, &mut stream(17, &[])).unwrap();
    let (mut exposed, mut unexposed) = (0usize, 0usize);
    for r in 0..200u64 {
        for (arm, total) in [(true, &mut exposed), (false, &mut unexposed)] {
            let mut s = base.clone();
            s.exposure = Some(vec![arm; nets.len()]);
            let y = run_post_exposure(&mut s, &nets, &cfg, &mut stream(18, &[r, u64::from(arm)])).unwrap();
            *total += y.iter().flatten().filter(|&&v| v).count();
        }
    }
    assert!(exposed < unexposed, "exposed {exposed} vs unexposed {unexposed}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn steps_are_monotone_and_local(
        seed in any::<u64>(),
        n in 3usize..20,
        density in 0.05f64..0.6,
        p in 0.0f64..=1.0,
        unit in any::<bool>(),
    ) {
        let mut r = stream(seed, &[]);
        let edges = common::random_graph(n, density, &mut r);
        let nets = vec![Network::new(1, n, edges, None).unwrap()];
        let mut s = ContagionState::from_affected(&nets, &[(0, seed as usize % n)]).unwrap();
        let aff = if unit { Affectivity::Unit } else { Affectivity::Degree };
        for _ in 0..4 {
            let before = s.affected[0].clone();
            let new = step(&mut s, &nets, &[p], aff, &mut r).unwrap();
            let after = &s.affected[0];
            prop_assert_eq!(after.iter().filter(|&&a| a).count(), before.iter().filter(|&&a| a).count() + new);
            for j in 0..n {
                prop_assert!(after[j] || !before[j]);
                if after[j] && !before[j] {
                    prop_assert!(nets[0].neighbors(j).iter().any(|&v| before[v as usize]));
                }
            }
            if unit {
                prop_assert!(new <= before.iter().filter(|&&a| a).count());
            }
        }
    }
}
