mod common;

use heisenclone_core::filters::{
    identity_filter_for, super_filter_for, windowed_filter_for, windowed_filter_with_radius,
    FilterKind,
};
use heisenclone_core::qcore::{
    avg_crb, clock_state, decompose_instrument, eigenbasis_diagonal, gaussian_twirl, prob_qfi, qfi,
    trace_preservation_error, CMatrix, FilterOperator, VarianceSample,
};
use heisenclone_core::replication::{
    deterministic_fidelity_in, exact_fidelity_in, lemma1_upper_bound_in, max_e_delta,
    windowed_fidelity_bound,
};
use heisenclone_core::scaling::{least_squares, rate_m};
use heisenclone_core::spectra::{n_copy_distribution_by_convolution, partition_count};
use heisenclone_core::{
    anchor_shift, enumerate_partitions, fidelity_lower_bound, n_copy_distribution,
    normalize_spectrum, Filter, Limits, ReplicationInstance, Spectrum,
};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::Rng;

use common::*;

fn spectrum_strategy() -> impl Strategy<Value = Spectrum> {
    (any::<u64>(), 2usize..=4, 0.02f64..0.2).prop_map(|(seed, k, floor)| {
        random_spectrum(&mut rng(seed), k, floor.min(0.9 / k as f64))
    })
}

/// `(spectrum, N, M)` with `1 <= N <= M` and small supports.
fn instance_strategy() -> impl Strategy<Value = (Spectrum, u64, u64)> {
    (spectrum_strategy(), 1u64..=25, 0u64..=80).prop_map(|(s, n, extra)| (s, n, n + extra))
}

fn binom(n: u64, k: u64) -> u128 {
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn distributions_are_normalized(s in spectrum_strategy(), n in 1u64..=60) {
        let d = n_copy_distribution(&s, n).unwrap();
        let total: f64 = d.support().map(|(_, lp)| lp.exp()).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn closed_form_matches_convolution(seed in any::<u64>(), n in 1u64..=80) {
        let s = random_spectrum(&mut rng(seed), 2, 0.05);
        let a = n_copy_distribution(&s, n).unwrap();
        let b = n_copy_distribution_by_convolution(&s, n, u64::MAX).unwrap();
        for e in a.offset()..=a.max_energy() {
            prop_assert!((a.prob(e) - b.prob(e)).abs() < 1e-12);
        }
    }

    #[test]
    fn partition_counts(n in 0u64..=50, k in 1usize..=5) {
        let expect = binom(n + k as u64 - 1, k as u64 - 1);
        prop_assert_eq!(partition_count(n, k), expect);
        if expect <= 50_000 {
            let parts = enumerate_partitions(n, k).unwrap();
            prop_assert_eq!(parts.len() as u128, expect);
            prop_assert!(parts.windows(2).all(|w| w[0].counts() < w[1].counts()));
        }
    }

    #[test]
    fn anchor_bound_and_embedding((s, n, m) in instance_strategy()) {
        let a = anchor_shift(&s, n, m).unwrap();
        let drift = a.delta_e0 as f64 * s.grid_unit_f64() - (m - n) as f64 * s.mean_energy();
        prop_assert!(drift.abs() <= 2.0 * s.k() as f64 * s.norm_inf() + 1e-9);
        let inst = ReplicationInstance::new(&s, n, m, Limits::default()).unwrap();
        for (e, _) in inst.p_n.support() {
            let shifted = e + a.delta_e0;
            prop_assert!(shifted >= inst.p_m.offset() && shifted <= inst.p_m.max_energy());
        }
    }

    #[test]
    fn super_filter_invariants((s, n, m) in instance_strategy()) {
        let inst = ReplicationInstance::new(&s, n, m, Limits::default()).unwrap();
        let f = super_filter_for(&inst).unwrap();
        prop_assert!(f.coeffs().iter().all(|c| c.log_pi <= 0.0));
        prop_assert!((f.max_pi() - 1.0).abs() < 1e-12);
        let r = exact_fidelity_in(&inst, &f).unwrap();
        let mass: f64 = inst
            .p_n
            .support()
            .map(|(e, _)| inst.p_m.prob(e + f.delta_e0()))
            .sum();
        prop_assert!((r.p_yes - f.gamma().powi(2) * mass).abs() <= 1e-10 * r.p_yes);
        prop_assert!((r.fidelity - mass).abs() < 1e-10);
        if n == m {
            prop_assert!((r.fidelity - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn super_filter_beats_unfiltered_anchor_shift((s, n, m) in instance_strategy()) {
        let inst = ReplicationInstance::new(&s, n, m, Limits::default()).unwrap();
        let sup = exact_fidelity_in(&inst, &super_filter_for(&inst).unwrap()).unwrap();
        let plain = exact_fidelity_in(&inst, &identity_filter_for(&s, &inst.p_n)).unwrap();
        prop_assert!(sup.fidelity >= plain.fidelity - 1e-12, "{} < {}", sup.fidelity, plain.fidelity);
        if n == m {
            let det = deterministic_fidelity_in(&inst);
            prop_assert!((sup.fidelity - det.fidelity).abs() < 1e-12);
        }
    }

    #[test]
    fn bound_sandwich((s, n, m) in instance_strategy()) {
        let inst = ReplicationInstance::new(&s, n, m, Limits::default()).unwrap();
        let r = exact_fidelity_in(&inst, &super_filter_for(&inst).unwrap()).unwrap();
        if let Ok(lower) = fidelity_lower_bound(&s, n, m) {
            prop_assert!(lower <= r.fidelity + 1e-9);
        }
        let top = max_e_delta(&s, n);
        for j in 0..=4 {
            let b = lemma1_upper_bound_in(&inst, r.p_yes, top * j as f64 / 4.0).unwrap();
            prop_assert!(r.fidelity <= b.upper + 1e-9);
        }
    }

    #[test]
    fn qubit_windowed_filter_monotone_in_radius(
        seed in any::<u64>(),
        n in 1u64..=25,
        extra in 0u64..=80,
        r1 in 0.0f64..6.0,
        dr in 0.0f64..6.0,
    ) {
        let s = random_spectrum(&mut rng(seed), 2, 0.05);
        let m = n + extra;
        let inst = ReplicationInstance::new(&s, n, m, Limits::default()).unwrap();
        let narrow = windowed_filter_with_radius(&inst, r1, None).unwrap();
        let wide = windowed_filter_with_radius(&inst, r1 + dr, None).unwrap();
        prop_assert!(wide.coeffs().iter().all(|c| c.log_pi <= 0.0));
        prop_assert!(wide.gamma_log() <= narrow.gamma_log() + 1e-12);
        let f_narrow = exact_fidelity_in(&inst, &narrow).unwrap();
        let f_wide = exact_fidelity_in(&inst, &wide).unwrap();
        prop_assert!(f_wide.fidelity >= f_narrow.fidelity - 1e-12);
    }

    #[test]
    fn windowed_bound_holds(seed in any::<u64>(), n in 2u64..=120, c2 in 1.5f64..4.0) {
        let s = random_spectrum(&mut rng(seed), 2, 0.2);
        let m = (c2 * n as f64).ceil() as u64;
        let xi = heisenclone_core::filters::linear_rate_xi(&s, c2);
        let f = (n as f64 + 1.0).ln();
        let inst = ReplicationInstance::new(&s, n, m, Limits::default()).unwrap();
        let r = exact_fidelity_in(&inst, &windowed_filter_for(&inst, f, xi).unwrap()).unwrap();
        prop_assert!(r.fidelity >= windowed_fidelity_bound(&s, m, f, xi).unwrap() - 1e-9);
    }

    #[test]
    fn qubit_windowed_infinite_radius_is_super(seed in any::<u64>(), n in 1u64..=40, extra in 0u64..=60) {
        let s = random_spectrum(&mut rng(seed), 2, 0.05);
        let inst = ReplicationInstance::new(&s, n, n + extra, Limits::default()).unwrap();
        let wide = windowed_filter_with_radius(&inst, f64::MAX.sqrt(), None).unwrap();
        let sup = super_filter_for(&inst).unwrap();
        prop_assert_eq!(wide.kind(), FilterKind::Windowed);
        for (a, b) in wide.coeffs().iter().zip(sup.coeffs()) {
            prop_assert!((a.pi() - b.pi()).abs() < 1e-12);
        }
    }

    #[test]
    fn filters_roundtrip_through_json((s, n, m) in instance_strategy()) {
        let inst = ReplicationInstance::new(&s, n, m, Limits::default()).unwrap();
        let f = super_filter_for(&inst).unwrap();
        let back = Filter::from_json(&f.to_json()).unwrap();
        prop_assert_eq!(back.coeffs(), f.coeffs());
        let s2 = Spectrum::from_json(&s.to_json()).unwrap();
        prop_assert_eq!(s2.int_energies(), s.int_energies());
        prop_assert_eq!(s2.probs(), s.probs());
    }

    #[test]
    fn planted_exponents_recovered(slope in -3.0f64..3.0, intercept in -5.0f64..5.0) {
        let x: Vec<f64> = (1..=8).map(|i| i as f64 * 1.7).collect();
        let y: Vec<f64> = x.iter().map(|v| intercept + slope * v).collect();
        let fit = least_squares(&x, &y).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-9);
        prop_assert!((fit.intercept - intercept).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn clock_states_stay_normalized(seed in any::<u64>(), d in 2usize..=6, t in -20.0f64..20.0) {
        let mut rng = rng(seed);
        let energies: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let sys = random_system(&mut rng, &energies);
        prop_assert!((clock_state(&sys, t).norm() - 1.0).abs() < 1e-12);
        prop_assert!((qfi(&sys, t) - qfi(&sys, 0.0)).abs() < 1e-10);
    }

    #[test]
    fn identity_filter_keeps_qfi(seed in any::<u64>(), d in 2usize..=6, t in 0.0f64..10.0) {
        let mut rng = rng(seed);
        let energies: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let sys = random_system(&mut rng, &energies);
        let q = qfi(&sys, t);
        let p = prob_qfi(&sys, &FilterOperator::identity(d), t).unwrap();
        prop_assert!((p - q).abs() <= 1e-10 * q.max(1e-300));
    }

    #[test]
    fn epsilon_filter_diverges_as_inverse_square(seed in any::<u64>(), t0 in 0.0f64..3.0) {
        let mut rng = rng(seed);
        let sys = random_system(&mut rng, &[0.0, 1.0, 2.5]);
        let eps: [f64; 3] = [1e-1, 1e-2, 1e-3];
        let logs: Vec<f64> = eps.iter().map(|e| e.ln()).collect();
        let q: Vec<f64> = eps
            .iter()
            .map(|&e| prob_qfi(&sys, &FilterOperator::epsilon_filter(&sys, t0, e).unwrap(), t0).unwrap().ln())
            .collect();
        let fit = least_squares(&logs, &q).unwrap();
        prop_assert!((fit.slope + 2.0).abs() < 0.01);
    }

    #[test]
    fn twirl_contracts_towards_diagonal(seed in any::<u64>(), s1 in 0.0f64..2.0, ds in 0.0f64..2.0) {
        let mut rng = rng(seed);
        let d = rng.random_range(2..=4);
        let energies = random_integer_energies(&mut rng, d, 4);
        let sys = random_system(&mut rng, &energies);
        let a = random_matrix(&mut rng, d, d);
        let p = &a * a.adjoint();
        let diag = eigenbasis_diagonal(&p, &sys).unwrap();
        let near = (gaussian_twirl(&p, &sys, s1).unwrap() - &diag).norm();
        let far = (gaussian_twirl(&p, &sys, s1 + ds).unwrap() - &diag).norm();
        prop_assert!(far <= near + 1e-12);
    }

    #[test]
    fn averaged_crb_holds_pointwise_saturation(seed in any::<u64>(), count in 1usize..=10) {
        let mut rng = rng(seed);
        let raw: Vec<f64> = (0..count).map(|_| rng.random_range(0.1..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let samples: Vec<VarianceSample> = raw
            .iter()
            .map(|w| {
                let q = rng.random_range(0.1..10.0);
                VarianceSample { weight: w / total, variance: 1.0 / q, qfi: q }
            })
            .collect();
        prop_assert!(avg_crb(&samples).unwrap().holds);
    }

    #[test]
    fn decomposition_is_complete(seed in any::<u64>()) {
        let mut rng = rng(seed);
        let d_in = rng.random_range(1..=4);
        let d_out = rng.random_range(1..=4);
        let kraus: Vec<CMatrix> = (0..rng.random_range(1..=3)).map(|_| random_matrix(&mut rng, d_out, d_in)).collect();
        let mut gram = CMatrix::zeros(d_in, d_in);
        for k in &kraus {
            gram += k.adjoint() * k;
        }
        let top = gram.symmetric_eigen().eigenvalues.max();
        let kraus: Vec<CMatrix> = kraus.iter().map(|k| k * Complex64::new(1.0 / top.sqrt(), 0.0)).collect();
        let dec = decompose_instrument(&kraus).unwrap();
        prop_assert!(trace_preservation_error(&dec.channel_kraus) < 1e-10);
        let diff = dec.reconstructed_choi() - heisenclone_core::qcore::choi_matrix(&kraus);
        prop_assert!(max_abs_entry(&diff) < 1e-10);
    }
}

/// Widening the window raises `p_yes` while truncation dominates and lowers
/// it once the shrinking `γ` does, so neither direction holds in general.
#[test]
fn windowed_success_probability_is_not_monotone_in_radius() {
    let q = Spectrum::equatorial_qubit();
    let pyes = |n, m, r| {
        let inst = ReplicationInstance::new(&q, n, m, Limits::default()).unwrap();
        exact_fidelity_in(&inst, &windowed_filter_with_radius(&inst, r, None).unwrap())
            .unwrap()
            .p_yes
    };
    assert!((pyes(1, 1, 0.0) - 0.5).abs() < 1e-12);
    assert!((pyes(1, 1, 1.0) - 1.0).abs() < 1e-12);
    let (narrow, wide) = (pyes(20, 60, 2.0), pyes(20, 60, 10.0));
    assert!(wide < narrow, "{wide} >= {narrow}");
}

/// The deterministic baseline searches shifts around `δE0`, the super filter
/// does not, so at small N the baseline can come out ahead.
#[test]
fn shift_search_can_beat_anchored_super_filter() {
    let s = normalize_spectrum(&[("-1", 0.2), ("2", 0.5), ("3", 0.3)]).unwrap();
    let inst = ReplicationInstance::new(&s, 2, 4, Limits::default()).unwrap();
    let sup = exact_fidelity_in(&inst, &super_filter_for(&inst).unwrap()).unwrap();
    let det = deterministic_fidelity_in(&inst);
    assert!((sup.fidelity - 0.536).abs() < 1e-12);
    assert!(det.fidelity > 0.675 && det.delta_e0 != inst.anchor.delta_e0);
}

/// With several partitions per energy the aggregated coefficients no longer
/// reproduce the partition-level fidelity, and widening can cost fidelity.
#[test]
fn three_level_window_fidelity_can_drop() {
    let s = normalize_spectrum(&[("-1", 0.3), ("2", 0.3), ("3", 0.4)]).unwrap();
    let inst = ReplicationInstance::new(&s, 5, 6, Limits::default()).unwrap();
    let fid = |r| {
        exact_fidelity_in(&inst, &windowed_filter_with_radius(&inst, r, None).unwrap())
            .unwrap()
            .fidelity
    };
    assert!(fid(4.0) < fid(3.0) - 1e-5);
}

#[test]
fn deterministic_fidelity_vanishes_at_superlinear_rate() {
    let q = Spectrum::equatorial_qubit();
    let mut previous = f64::INFINITY;
    let mut last = 1.0;
    for n in (20..=200).step_by(10) {
        let inst = ReplicationInstance::new(&q, n, rate_m(n, 1.5, 1.0), Limits::default()).unwrap();
        let f = deterministic_fidelity_in(&inst).fidelity;
        assert!(f < previous, "N={n}: {f} >= {previous}");
        previous = f;
        last = f;
    }
    assert!(last < 0.5, "{last}");
}
