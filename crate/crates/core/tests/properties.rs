use std::collections::BTreeMap;

use car_late_core::design::{optimal_pi_population, v_sat_with, DesignOptions};
use car_late_core::dgp::{coarsen, late, population_summary, sample, DgpSpec, StratumSpec};
use car_late_core::montecarlo::{self, Estimator, McConfig};
use car_late_core::randomize::{assign_sbr, treated_count};
use car_late_core::rng::stream;
use car_late_core::{
    estimate_2s, estimate_sat, estimate_sfe, residuals_sat, variance_2s, variance_sat, variance_sfe, wald_test, Mechanism,
    TrialDataset, UnitRecord,
};
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1.0)
}

#[derive(Debug, Clone)]
struct Raw {
    p: f64,
    types: (f64, f64, f64),
    means: [f64; 4],
    vars: [f64; 4],
}

fn raw_stratum() -> impl Strategy<Value = Raw> {
    (
        0.2..1.0f64,
        (0.0..1.0f64, 0.0..1.0f64, 0.3..1.0f64),
        prop::array::uniform4(-3.0..3.0f64),
        prop::array::uniform4(0.1..5.0f64),
    )
        .prop_map(|(p, types, means, vars)| Raw { p, types, means, vars })
}

fn build(raw: &[Raw], pi: &[f64], tau: f64) -> DgpSpec {
    let total: f64 = raw.iter().map(|r| r.p).sum();
    let strata = raw
        .iter()
        .zip(pi)
        .enumerate()
        .map(|(i, (r, &pi_a))| {
            let t = r.types.0 + r.types.1 + r.types.2;
            let (p_at, p_nt) = (r.types.0 / t, r.types.1 / t);
            StratumSpec {
                label: format!("s{i}"),
                p: r.p / total,
                pi_a,
                tau,
                p_at,
                p_nt,
                p_c: 1.0 - p_at - p_nt,
                m1c: r.means[0],
                m0c: r.means[1],
                m1at: r.means[2],
                m0nt: r.means[3],
                v1c: r.vars[0],
                v0c: r.vars[1],
                v1at: r.vars[2],
                v0nt: r.vars[3],
            }
        })
        .collect();
    let constant = pi.iter().all(|&q| q == pi[0]);
    DgpSpec::new(strata, constant).unwrap()
}

fn any_spec() -> impl Strategy<Value = DgpSpec> {
    (prop::collection::vec(raw_stratum(), 1..6), 0.2..0.8f64, 0.0..=1.0f64)
        .prop_map(|(raw, pi, tau)| build(&raw, &vec![pi; raw.len()], tau))
}

/// A sampled trial on which every estimator is defined.
fn any_trial() -> impl Strategy<Value = TrialDataset> {
    (any_spec(), 80..400usize, any::<bool>(), any::<u64>()).prop_filter_map("estimators undefined", |(spec, n, sbr, seed)| {
        let mech = if sbr { Mechanism::Sbr } else { Mechanism::Srs };
        let data = sample(&spec, n, mech, &mut stream(seed)).ok()?;
        let fit = estimate_sat(&data).ok()?;
        variance_sat(&data, &fit, &residuals_sat(&data, &fit)).ok()?;
        estimate_sfe(&data).ok()?;
        estimate_2s(&data).ok()?;
        Some(data)
    })
}

fn transform(data: &TrialDataset, a: f64, b: f64) -> TrialDataset {
    let units: Vec<UnitRecord> = data.units().iter().map(|u| UnitRecord { y: a * u.y + b, ..*u }).collect();
    TrialDataset::from_units(units, data.strata().to_vec()).unwrap()
}

/// (β̂_sat, β̂_sfe, β̂_2s, V̂_sat, V̂_sfe, V̂_2s) with τ = 1.
fn everything(data: &TrialDataset) -> [f64; 6] {
    let fit = estimate_sat(data).unwrap();
    let base = variance_sat(data, &fit, &residuals_sat(data, &fit)).unwrap();
    let tau = vec![1.0; data.num_strata()];
    [
        fit.beta_hat,
        estimate_sfe(data).unwrap().beta_hat,
        estimate_2s(data).unwrap().beta_hat,
        base.v_sat_hat,
        variance_sfe(data, &fit, &base, &tau).unwrap().v_sfe_hat().unwrap(),
        variance_2s(data, &fit, &base, &tau).unwrap().v_2s_hat().unwrap(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn single_stratum_estimators_coincide(data in any_trial()) {
        let one = data.relabel_strata(|_: &str| Some("all".to_string())).unwrap();
        let [sat, sfe, two, ..] = everything(&one);
        prop_assert!(close(sat, sfe, 1e-10) && close(sat, two, 1e-10), "{sat} {sfe} {two}");
    }

    #[test]
    fn affine_outcome_maps(data in any_trial(), a in prop_oneof![-4.0..-0.25f64, 0.25..4.0f64], b in -10.0..10.0f64) {
        let before = everything(&data);
        let after = everything(&transform(&data, a, b));
        for i in 0..3 {
            prop_assert!(close(after[i], a * before[i], 1e-8), "{i}: {} vs {}", after[i], a * before[i]);
        }
        for i in 3..6 {
            prop_assert!(close(after[i], a * a * before[i], 1e-7), "{i}: {} vs {}", after[i], a * a * before[i]);
        }
    }

    #[test]
    fn restricted_fits_never_look_more_precise(data in any_trial(), t in 0.0..=1.0f64) {
        let fit = estimate_sat(&data).unwrap();
        let base = variance_sat(&data, &fit, &residuals_sat(&data, &fit)).unwrap();
        let tau = vec![t; data.num_strata()];
        prop_assert!(variance_sfe(&data, &fit, &base, &tau).unwrap().v_sfe_hat().unwrap() >= base.v_sat_hat);
        prop_assert!(variance_2s(&data, &fit, &base, &tau).unwrap().v_2s_hat().unwrap() >= base.v_sat_hat);
    }

    #[test]
    fn complier_shares_sum_to_one(data in any_trial()) {
        let fit = estimate_sat(&data).unwrap();
        let total: f64 = fit.p_hat_s_given_c.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn test_and_interval_agree(beta_hat in -5.0..5.0f64, v in 0.01..50.0f64, n in 10u64..100_000, beta0 in -5.0..5.0f64, alpha in 0.01..0.2f64) {
        let t = wald_test(beta_hat, v, n, beta0, alpha).unwrap();
        let edge = (beta0 - t.ci.0).abs().min((beta0 - t.ci.1).abs());
        prop_assume!(edge > 1e-9 * t.se.max(1e-300));
        prop_assert_eq!(t.reject, !t.covers(beta0));
    }

    #[test]
    fn optimal_propensity_ignores_outcome_units(spec in any_spec(), a in 0.25..4.0f64, b in -10.0..10.0f64) {
        let scaled: Vec<StratumSpec> = spec.strata().iter().map(|s| StratumSpec {
            m1c: a * s.m1c + b, m0c: a * s.m0c + b, m1at: a * s.m1at + b, m0nt: a * s.m0nt + b,
            v1c: a * a * s.v1c, v0c: a * a * s.v0c, v1at: a * a * s.v1at, v0nt: a * a * s.v0nt,
            ..s.clone()
        }).collect();
        let scaled = DgpSpec::new(scaled, spec.constant_pi()).unwrap();
        let x = optimal_pi_population(&spec, &DesignOptions::default()).unwrap();
        let y = optimal_pi_population(&scaled, &DesignOptions::default()).unwrap();
        for (p, q) in x.pi_star_s.iter().zip(&y.pi_star_s) {
            prop_assert!((p - q).abs() < 1e-9);
        }
        prop_assert!((x.pi_star - y.pi_star).abs() < 1e-9);
    }

    #[test]
    fn merging_strata_never_helps(spec in any_spec(), groups in prop::collection::vec(0..3usize, 5)) {
        let mapping: BTreeMap<String, String> =
            spec.labels().into_iter().zip(groups).map(|(l, g)| (l, format!("g{g}"))).collect();
        let coarse = coarsen(&spec, &mapping).unwrap();
        let fine = population_summary(&spec).unwrap();
        let merged = population_summary(&coarse).unwrap();
        prop_assert!((fine.beta - merged.beta).abs() < 1e-9);
        prop_assert!(fine.v_sat <= merged.v_sat * (1.0 + 1e-12), "{} > {}", fine.v_sat, merged.v_sat);
    }

    #[test]
    fn exact_balance_removes_restriction_penalty(spec in any_spec()) {
        let s = population_summary(&spec.with_tau(0.0).unwrap()).unwrap();
        prop_assert!(close(s.v_sfe, s.v_sat, 1e-12) && close(s.v_2s, s.v_sat, 1e-12));
    }

    #[test]
    fn half_propensity_removes_sfe_penalty(spec in any_spec()) {
        let half = spec.with_pi(&vec![0.5; spec.num_strata()]).unwrap();
        let s = population_summary(&half).unwrap();
        prop_assert!(s.components.va_sfe.abs() < 1e-12);
    }

    #[test]
    fn homogeneous_effects_decompose_by_stratum(raw in prop::collection::vec(raw_stratum(), 1..6), pi in 0.2..0.8f64, beta in -2.0..2.0f64) {
        let raw: Vec<Raw> = raw.into_iter().map(|mut r| { r.means[0] = r.means[1] + beta; r }).collect();
        let s = population_summary(&build(&raw, &vec![pi; raw.len()], 1.0)).unwrap();
        let total: f64 = s.p_s_given_c.iter().zip(&s.v_sat_s).map(|(w, v)| w * w * v).sum();
        prop_assert!(close(total, s.v_sat, 1e-10), "{total} vs {}", s.v_sat);
    }

    #[test]
    fn constant_propensity_limits(spec in any_spec()) {
        let s = population_summary(&spec).unwrap();
        let total: f64 = s.omega_s.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(close(s.plim_sfe, s.beta, 1e-10) && close(s.plim_2s, s.beta, 1e-10));
    }

    #[test]
    fn full_compliance_gives_neyman_allocation(
        raw in prop::collection::vec(raw_stratum(), 1..6),
        pi in 0.2..0.8f64,
    ) {
        let raw: Vec<Raw> = raw.into_iter().map(|r| Raw { types: (0.0, 0.0, 1.0), ..r }).collect();
        let spec = build(&raw, &vec![pi; raw.len()], 0.0);
        let r = optimal_pi_population(&spec, &DesignOptions { pi_min: 1e-6, grid: Vec::new() }).unwrap();
        for (i, st) in spec.strata().iter().enumerate() {
            prop_assert!(close(r.pi1_s[i], st.v1c, 1e-12) && close(r.pi2_s[i], st.v0c, 1e-12));
            let neyman = 1.0 / (1.0 + (st.v0c / st.v1c).sqrt());
            prop_assert!((r.pi_star_s[i] - neyman).abs() < 1e-12);
        }
    }

    #[test]
    fn optimal_propensity_beats_the_grid(spec in any_spec()) {
        let opts = DesignOptions { pi_min: 0.01, grid: DesignOptions::percent_grid() };
        let r = optimal_pi_population(&spec, &opts).unwrap();
        let (best_pi, best_v) = r.grid.iter().copied().fold((f64::NAN, f64::INFINITY), |acc, g| if g.1 < acc.1 { g } else { acc });
        prop_assert!(r.v_at_pi_star <= best_v * (1.0 + 1e-12));
        prop_assert!((best_pi - r.pi_star).abs() <= 0.01 + 1e-12, "{best_pi} vs {}", r.pi_star);

        let moments = spec.moments();
        let (p_c, beta) = late(&moments);
        let at_opt = v_sat_with(&moments, beta, p_c, &r.pi_star_s);
        prop_assert!(close(at_opt, r.v_at_pi_star_s, 1e-12));
        for s in 0..spec.num_strata() {
            for step in [-0.02, 0.02] {
                let mut pi = r.pi_star_s.clone();
                pi[s] = (pi[s] + step).clamp(0.01, 0.99);
                prop_assert!(at_opt <= v_sat_with(&moments, beta, p_c, &pi) * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn blocked_assignment_treats_the_floor(sizes in prop::collection::vec(1..40usize, 1..5), pi in 0.01..0.99f64, seed in any::<u64>()) {
        let ids: Vec<usize> = sizes.iter().enumerate().flat_map(|(s, &m)| std::iter::repeat_n(s, m)).collect();
        let plan = assign_sbr(&ids, &vec![pi; sizes.len()], &mut stream(seed)).unwrap();
        for (s, &m) in sizes.iter().enumerate() {
            let treated = ids.iter().zip(&plan.assignments).filter(|(&i, &a)| i == s && a).count();
            prop_assert_eq!(treated, treated_count(m, pi));
            prop_assert_eq!(treated, (m as f64 * pi).floor() as usize);
        }
    }
}

#[test]
fn blocked_assignment_subsets_are_uniform() {
    let ids = [0usize; 4];
    let mut seen = BTreeMap::<Vec<bool>, u64>::new();
    let mut rng = stream(2024);
    let draws = 60_000u64;
    for _ in 0..draws {
        *seen.entry(assign_sbr(&ids, &[0.5], &mut rng).unwrap().assignments).or_default() += 1;
    }
    assert_eq!(seen.len(), 6);
    let expected = draws as f64 / 6.0;
    let chi2: f64 = seen.values().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    // 0.999 quantile of chi-square with 5 degrees of freedom.
    assert!(chi2 < 20.515, "{chi2}");
}

#[test]
fn simulation_is_reproducible() {
    let spec = car_late_core::builtin_design(3).unwrap();
    let config = McConfig {
        spec,
        n: 400,
        reps: 50,
        mechanism: Mechanism::Srs,
        estimators: Estimator::ALL.to_vec(),
        alpha: 0.05,
        beta0: None,
        master_seed: 9,
    };
    assert_eq!(montecarlo::run(&config).unwrap(), montecarlo::run(&config).unwrap());
    let a = sample(&config.spec, 500, Mechanism::Sbr, &mut stream(3)).unwrap();
    let b = sample(&config.spec, 500, Mechanism::Sbr, &mut stream(3)).unwrap();
    assert_eq!(a, b);
}
