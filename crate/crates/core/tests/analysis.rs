//! Reference values below were computed independently with 60-digit
//! arbitrary-precision arithmetic.

use carnot::analysis::*;

fn close(p: Prob, expected: f64, rel: f64) -> bool {
    (p.value() / expected - 1.0).abs() <= rel
}

fn close_ln10(p: Prob, mantissa: f64, exp10: i32, rel: f64) -> bool {
    let expected_ln = mantissa.ln() + exp10 as f64 * std::f64::consts::LN_10;
    (p.ln() - expected_ln).abs() <= rel
}

fn third() -> Fraction {
    Fraction::third()
}

#[test]
fn binomial_e1_reference_values() {
    let cases = [(1000, 3, 0.000814917461139857), (1000, 7, 0.0888272620111317), (10_000, 23, 0.000976554723835464), (10_000, 25, 0.00216754596396097)];
    for (n, k, expected) in cases {
        let m = PartitionModel::split(n, k, Adversary::Fraction(0.25)).unwrap();
        let v = delta_e1(&m, third()).unwrap();
        assert!(close(v.exact.unwrap(), expected, 1e-9), "N={n} K={k}: {}", v.exact.unwrap());
        assert!(v.exact.unwrap() <= v.bound);
    }
}

#[test]
fn binomial_e2_and_e3_reference_values() {
    let m = PartitionModel::split(1000, 7, Adversary::Fraction(0.25)).unwrap();
    assert!(close(delta_e2(&m, third()).unwrap().exact.unwrap(), 0.00217841424621877, 1e-9));
    let e3 = delta_ek(&m, 3, Fraction::two_thirds()).unwrap().exact.unwrap();
    assert!(close(e3, 7.44646687797969e-74, 1e-8), "{e3}");
    let h = PartitionModel::split(1000, 7, Adversary::ExactCount(250)).unwrap();
    assert_eq!(delta_ek(&h, 3, Fraction::two_thirds()).unwrap().exact.unwrap(), Prob::ZERO);
}

#[test]
fn tails_reference_values() {
    assert!(close(hyper_tail(1000, 250, 100, 34), 0.0214356634143489, 1e-10));
    assert!(close(binom_tail(1000, 0.25, 334), 1.69718736122027e-9, 1e-9));
    // Far below the f64 range.
    let deep = binom_tail(2000, 0.1, 1500);
    assert!(close_ln10(deep, 7.75441237538282, -1037, 1e-9), "{deep}");
    assert_eq!(deep.to_string(), "7.754412e-1037");
}

#[test]
fn figure4_reference_points() {
    let rows = [
        (10, 0.223241955803299, 0.287804058198008, 0.582076609134674),
        (100, 0.0214356634143489, 0.024206126296215, 0.132990541240985),
        (333, 7.83216027348958e-6, 8.09275695346772e-6, 0.00203534912570888),
    ];
    for (n_mu, exact, bound, hoeff) in rows {
        assert!(close(hyper_tail(1000, 250, n_mu, n_mu / 3 + 1), exact, 1e-9));
        assert!(close(hyper_tail_bound(1000, 250, n_mu, third()).unwrap(), bound, 1e-9));
        assert!(close(hoeffding_bound(n_mu, 0.25, third()), hoeff, 1e-9));
    }
}

#[test]
fn top_three_ceiling_reference_values() {
    let cases = [(51, 1.89376062679968e-108_f64.log10()), (101, 4.37634728151291e-54_f64.log10()), (103, 5.25906368696163e-53_f64.log10())];
    for (k, log10) in cases {
        let m = PartitionModel::split(10_000, k, Adversary::ExactCount(2500)).unwrap();
        let v = delta_ek(&m, 3, Fraction::two_thirds()).unwrap().exact.unwrap();
        assert!((v.log10() - log10).abs() < 1e-9, "K={k}: {v}");
    }
}

#[test]
fn kl_reference_value() {
    assert!((kl_divergence(1.0 / 3.0, 0.25).unwrap() - 0.0173720003796713).abs() < 1e-12);
}

#[test]
fn solver_reference_layouts() {
    let cases = [
        (1_000, 1e-3, 3, 333),
        (10_000, 1e-3, 23, 434),
        (100_000, 1e-3, 181, 552),
        (1_000, 1e-4, 1, 1000),
        (10_000, 1e-4, 17, 588),
        (100_000, 1e-4, 147, 680),
    ];
    for (n, delta, k, size) in cases {
        let r = committee_size_solver(SizingParams { n_nodes: n, p: 0.25, a: third(), delta }).unwrap();
        assert_eq!((r.k, r.n), (k, size), "N={n} delta={delta}");
        assert!(r.failure <= delta);
        if r.k + 2 <= n {
            let next = PartitionModel::split(n, r.k + 2, Adversary::Fraction(0.25)).unwrap();
            assert!(delta_e1(&next, third()).unwrap().exact.unwrap().value() > delta);
        }
    }
}

#[test]
fn solver_falls_back_to_one_committee() {
    let r = committee_size_solver(SizingParams { n_nodes: 30, p: 0.3, a: third(), delta: 1e-9 }).unwrap();
    assert_eq!((r.k, r.n, r.r), (1, 30, 0));
}

#[test]
fn solver_near_unit_delta_takes_largest_odd_k() {
    let r = committee_size_solver(SizingParams { n_nodes: 50, p: 0.01, a: third(), delta: 0.999_999 }).unwrap();
    let next = PartitionModel::split(50, r.k + 2, Adversary::Fraction(0.01));
    if let Ok(next) = next {
        assert!(delta_e1(&next, third()).unwrap().exact.unwrap().value() > 0.999_999);
    }
}

#[test]
fn upper_bound_doubling_identity() {
    let d = kl_divergence(1.0 / 3.0, 0.25).unwrap();
    let a = committee_size_upper_bound(1000, 50, 1e-4, 0.25, third()).unwrap();
    let b = committee_size_upper_bound(2000, 50, 1e-4, 0.25, third()).unwrap();
    assert!((b - a - std::f64::consts::LN_2 / d).abs() < 1e-9);
}

#[test]
fn upper_bound_grows_like_inverse_square_gap() {
    let a = Fraction::third();
    let ratio = |eps: f64| committee_size_upper_bound(10_000, 100, 1e-3, 1.0 / 3.0 - eps, a).unwrap() * eps * eps;
    let (r1, r2) = (ratio(1e-3), ratio(1e-4));
    assert!((r1 / r2 - 1.0).abs() < 0.01, "{r1} {r2}");
}

#[test]
fn brute_force_reference_instance() {
    let m = PartitionModel::new(9, vec![3, 3, 3], Adversary::ExactCount(3)).unwrap();
    let brute = brute_force_delta(&m, FailureEvent::E1(third())).unwrap();
    let exact = delta_e1(&m, third()).unwrap().exact.unwrap().value();
    assert!((brute - exact).abs() < 1e-12);
    // 1 - 27/84: the placements with one Byzantine node per committee never fail.
    assert!((brute - (1.0 - 27.0 / 84.0)).abs() < 1e-12);
    let zero = PartitionModel::new(9, vec![3, 3, 3], Adversary::ExactCount(0)).unwrap();
    assert_eq!(brute_force_delta(&zero, FailureEvent::E1(third())).unwrap(), 0.0);
}

#[test]
fn qc_and_safety_bounds() {
    let m = PartitionModel::split(10_000, 51, Adversary::Fraction(0.25)).unwrap();
    let qc = qc_necessary_condition_bound(&m).unwrap();
    assert!(qc.value > 2.0 / 3.0 && !qc.below_two_thirds);
    assert!((qc.value - 0.75).abs() < 5e-3);
    let s = safety_failure_bound(&m).unwrap();
    let e1_half = delta_e1(&m, Fraction::half()).unwrap().bound;
    let e3 = delta_ek(&m, 3, Fraction::two_thirds()).unwrap().bound;
    assert!(e3 < e1_half);
    let e1_third = delta_e1(&m, third()).unwrap().bound;
    assert!(s.value() <= 2.0 * e1_third.value());
    let hostile = PartitionModel::split(900, 9, Adversary::Fraction(0.34)).unwrap();
    assert!(qc_necessary_condition_bound(&hostile).unwrap().below_two_thirds);
}

#[test]
fn invalid_inputs_are_refused() {
    assert!(PartitionModel::split(10, 0, Adversary::Fraction(0.2)).is_err());
    assert!(PartitionModel::new(10, vec![5, 4], Adversary::Fraction(0.2)).is_err());
    assert!(PartitionModel::split(10, 3, Adversary::ExactCount(10)).is_err());
    let m = PartitionModel::split(10, 3, Adversary::Fraction(0.2)).unwrap();
    assert!(delta_ek(&m, 4, third()).is_err());
    assert!(delta_e1(&m, Fraction::new(1, 1).unwrap()).is_err());
    assert!(committee_size_solver(SizingParams { n_nodes: 100, p: 0.4, a: third(), delta: 0.1 }).is_err());
}

#[test]
fn fig5_bl_preset_meets_ceiling() {
    let report = run_preset(&builtin_preset("fig5_bl").unwrap()).unwrap();
    assert!(report.passed(), "{:?}", report.failures);
}
