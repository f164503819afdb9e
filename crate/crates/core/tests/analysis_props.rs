use carnot::analysis::*;
use proptest::prelude::*;

fn fraction() -> impl Strategy<Value = Fraction> {
    prop::sample::select(vec!["1/4", "1/3", "1/2", "2/3", "3/5"]).prop_map(|s| s.parse().unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn kl_is_nonnegative_and_zero_on_the_diagonal(a in 0.001f64..0.999, p in 0.001f64..0.999) {
        let d = kl_divergence(a, p).unwrap();
        prop_assert!(d >= -1e-15);
        prop_assert!(kl_divergence(p, p).unwrap().abs() < 1e-12);
    }

    #[test]
    fn binomial_tail_is_a_probability_and_monotone(n in 1usize..400, p in 0.01f64..0.99, k in 0usize..400) {
        let k = k.min(n + 1);
        let t = binom_tail(n, p, k);
        prop_assert!(t.value() <= 1.0 + 1e-12);
        prop_assert_eq!(binom_tail(n, p, 0), Prob::ONE);
        prop_assert!(binom_tail(n, p, k + 1).le_rel(t, 1e-12));
    }

    #[test]
    fn hypergeometric_tail_is_a_probability_and_monotone(n_total in 2usize..300, m in 0usize..300, size in 1usize..300, k in 0usize..300) {
        let m = m % n_total;
        let size = 1 + size % n_total;
        let t = hyper_tail(n_total, m, size, k);
        prop_assert!(t.value() <= 1.0 + 1e-12);
        prop_assert!(hyper_tail(n_total, m, size, k + 1).le_rel(t, 1e-12));
        prop_assert!(hyper_tail(n_total, m, size, m + 1).is_zero());
    }

    #[test]
    fn closed_form_bounds_dominate_exact_tails(n_total in 20usize..2000, frac in 0.02f64..0.3, size in 1usize..200, a in fraction()) {
        let size = size.min(n_total);
        let m = ((n_total as f64 * frac) as usize).max(1);
        let p = m as f64 / n_total as f64;
        prop_assume!(p < a.as_f64());
        let k = a.floor_mul(size) + 1;
        prop_assert!(hyper_tail(n_total, m, size, k).le_rel(hyper_tail_bound(n_total, m, size, a).unwrap(), 1e-9));
        prop_assert!(binom_tail(size, p, k).le_rel(binom_tail_bound(size, p, a), 1e-9));
        prop_assert!(binom_tail(size, p, k).le_rel(hoeffding_bound(size, p, a), 1e-9));
    }

    #[test]
    fn event_bounds_dominate_exact_values(n_nodes in 10usize..600, k in 0usize..10, p in 0.02f64..0.3, a in fraction()) {
        let k = (2 * k + 1).min(if n_nodes.is_multiple_of(2) { n_nodes - 1 } else { n_nodes });
        for adversary in [Adversary::Fraction(p), Adversary::ExactCount(((n_nodes as f64) * p) as usize)] {
            let model = PartitionModel::split(n_nodes, k, adversary).unwrap();
            let mut events = vec![FailureEvent::E1(a), FailureEvent::E2(a)];
            if k >= 3 {
                events.push(FailureEvent::Ek(3, a));
            }
            for event in events {
                let v = delta(&model, event).unwrap();
                prop_assert!(v.bound.value() <= 1.0 + 1e-12);
                if let Some(exact) = v.exact {
                    prop_assert!(exact.le_rel(v.bound, 1e-9), "{event}: {exact} > {}", v.bound);
                }
            }
        }
    }

    #[test]
    fn solver_meets_its_target_unless_it_fell_back(n_nodes in 3usize..5000, delta in 1e-8f64..0.1, p in 0.01f64..0.3) {
        let a = Fraction::third();
        let s = committee_size_solver(SizingParams { n_nodes, p, a, delta }).unwrap();
        prop_assert_eq!(s.k % 2, 1);
        prop_assert_eq!(s.n * s.k + s.r, n_nodes);
        prop_assert!(s.failure <= delta || s.k == 1);
    }
}
