//! Event probabilities over a whole partition.

use serde::{Deserialize, Serialize};

use super::tails::{binom_tail, binom_tail_bound, hyper_tail, hyper_tail_bound, ln_choose};
use super::{invalid, log_sum_exp, neumaier, Adversary, AnalysisError, EventValue, FailureEvent, Fraction, PartitionModel, Prob};

/// Work limit (pmf evaluations) for the exact hypergeometric counting pass.
pub(crate) const HYPER_EXACT_BUDGET: usize = 6_000_000;

pub fn delta(model: &PartitionModel, event: FailureEvent) -> Result<EventValue, AnalysisError> {
    match event {
        FailureEvent::E0 => Ok(delta_e0(model)),
        FailureEvent::E1(a) => delta_e1(model, a),
        FailureEvent::E2(a) => delta_e2(model, a),
        FailureEvent::Ek(k, b) => delta_ek(model, k, b),
    }
}

/// Probability that the leader is Byzantine: `M/N` or `P`.
pub fn delta_e0(model: &PartitionModel) -> EventValue {
    let p = Prob::from_value(model.p());
    EventValue { exact: Some(p), bound: p }
}

fn check_threshold(a: Fraction) -> Result<(), AnalysisError> {
    if !a.is_proper() {
        return invalid(format!("threshold {a} must lie in (0, 1)"));
    }
    Ok(())
}

/// `1 - prod(1 - t_i)` from per-group tails, accurate for tiny tails.
fn one_minus_product(tails: &[Prob]) -> Prob {
    let lns: Vec<f64> = tails.iter().map(|t| t.ln()).collect();
    let union = log_sum_exp(&lns);
    if union < (1e-9f64).ln() {
        // 1 - prod(1 - t) lies in [sum t (1 - sum t), sum t].
        return Prob::from_ln(union);
    }
    let s: f64 = tails.iter().map(|t| (-t.value()).ln_1p()).sum();
    Prob::from_value(-s.exp_m1())
}

/// Union bound `sum t_i`, capped at 1.
fn union(tails: &[Prob]) -> Prob {
    let lns: Vec<f64> = tails.iter().map(|t| t.ln()).collect();
    Prob::from_ln(log_sum_exp(&lns))
}

/// A group of nodes and the largest Byzantine count it tolerates
/// (`None` for no cap).
type Group = (usize, Option<usize>);

/// Exact probability, under uniform placement of `m` Byzantine nodes, that
/// some group exceeds its cap. Walks the groups in order, tracking the
/// distribution of remaining Byzantine nodes separately for placements that
/// have and have not failed yet, so only non-negative terms are added.
fn hyper_any_exceeds(n_total: usize, m: usize, groups: &[Group]) -> Prob {
    let mut ok = vec![0.0f64; m + 1];
    let mut failed = vec![0.0f64; m + 1];
    ok[m] = 1.0;
    let mut remaining = n_total;
    for &(size, cap) in groups {
        let mut next_ok = vec![0.0f64; m + 1];
        let mut next_failed = vec![0.0f64; m + 1];
        for left in 0..=m {
            let (o, f) = (ok[left], failed[left]);
            if o == 0.0 && f == 0.0 {
                continue;
            }
            let norm = ln_choose(remaining, left);
            let hi = size.min(left);
            let lo = (size + left).saturating_sub(remaining);
            for a in lo..=hi {
                let w = (ln_choose(size, a) + ln_choose(remaining - size, left - a) - norm).exp();
                if w == 0.0 {
                    continue;
                }
                let dest = left - a;
                next_failed[dest] += f * w;
                if cap.is_some_and(|c| a > c) {
                    next_failed[dest] += o * w;
                } else {
                    next_ok[dest] += o * w;
                }
            }
        }
        ok = next_ok;
        failed = next_failed;
        remaining -= size;
    }
    Prob::from_value(neumaier(failed))
}

fn hyper_exact_cost(m: usize, groups: &[Group]) -> usize {
    groups.iter().map(|&(s, _)| (s.min(m) + 1) * (m + 1)).sum()
}

/// Per-committee hypergeometric bound; falls back to the exact tail when the
/// bound's precondition does not hold.
fn hyper_committee_bound(n_total: usize, m: usize, size: usize, a: Fraction) -> Prob {
    hyper_tail_bound(n_total, m, size, a).unwrap_or_else(|_| hyper_tail(n_total, m, size, a.floor_mul(size) + 1))
}

/// Some committee has more than a fraction `a` Byzantine.
///
/// Binomial: exact product form and product of per-committee analytic bounds.
/// Hypergeometric: union of per-committee bounds; exact by counting when the
/// instance is small enough.
pub fn delta_e1(model: &PartitionModel, a: Fraction) -> Result<EventValue, AnalysisError> {
    check_threshold(a)?;
    group_event(model, &model.sizes, None, a)
}

/// Some merged sibling pair has more than a fraction `a` Byzantine. Needs odd `K`.
pub fn delta_e2(model: &PartitionModel, a: Fraction) -> Result<EventValue, AnalysisError> {
    check_threshold(a)?;
    let pairs = model.sibling_pair_sizes()?;
    group_event(model, &pairs, Some(model.sizes[0]), a)
}

fn group_event(model: &PartitionModel, capped: &[usize], free: Option<usize>, a: Fraction) -> Result<EventValue, AnalysisError> {
    if capped.is_empty() {
        return Ok(EventValue { exact: Some(Prob::ZERO), bound: Prob::ZERO });
    }
    let threshold = |s: usize| a.floor_mul(s) + 1;
    match model.adversary {
        Adversary::Fraction(p) => {
            let tails: Vec<Prob> = capped.iter().map(|&s| binom_tail(s, p, threshold(s))).collect();
            let bounds: Vec<Prob> = capped.iter().map(|&s| binom_tail_bound(s, p, a)).collect();
            Ok(EventValue { exact: Some(one_minus_product(&tails)), bound: one_minus_product(&bounds) })
        }
        Adversary::ExactCount(m) => {
            let n = model.n_nodes;
            let bounds: Vec<Prob> = capped.iter().map(|&s| hyper_committee_bound(n, m, s, a)).collect();
            let mut groups: Vec<Group> = free.map(|s| (s, None)).into_iter().collect();
            groups.extend(capped.iter().map(|&s| (s, Some(a.floor_mul(s)))));
            let exact = (hyper_exact_cost(m, &groups) <= HYPER_EXACT_BUDGET)
                .then(|| hyper_any_exceeds(n, m, &groups));
            Ok(EventValue { exact, bound: union(&bounds) })
        }
    }
}

/// The top `k` committees jointly hold more than a fraction `b` Byzantine.
pub fn delta_ek(model: &PartitionModel, k: usize, b: Fraction) -> Result<EventValue, AnalysisError> {
    check_threshold(b)?;
    if k == 0 || k > model.k() {
        return invalid(format!("k = {k} must lie in [1, K = {}]", model.k()));
    }
    let s: usize = model.sizes[..k].iter().sum();
    let t = b.floor_mul(s) + 1;
    Ok(match model.adversary {
        Adversary::Fraction(p) => EventValue { exact: Some(binom_tail(s, p, t)), bound: binom_tail_bound(s, p, b) },
        Adversary::ExactCount(m) => EventValue {
            exact: Some(hyper_tail(model.n_nodes, m, s, t)),
            bound: hyper_committee_bound(model.n_nodes, m, s, b),
        },
    })
}

/// Lower bound on the probability that a leader-level certificate can form
/// from honest votes: `1 - P - delta(E2(1/3)) - delta(E3(1/3))`, using upper
/// bounds for both events. `E3` shrinks to `E_K` when `K < 3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QcBound {
    pub value: f64,
    /// Set when the bound falls below 2/3.
    pub below_two_thirds: bool,
}

pub fn qc_necessary_condition_bound(model: &PartitionModel) -> Result<QcBound, AnalysisError> {
    let third = Fraction::third();
    let e2 = delta_e2(model, third)?.bound.value();
    let e3 = delta_ek(model, model.k().min(3), third)?.bound.value();
    let value = 1.0 - model.p() - e2 - e3;
    Ok(QcBound { value, below_two_thirds: value < 2.0 / 3.0 })
}

/// Upper bound on the safety failure probability:
/// `delta(E3(2/3)) + delta(E1(1/2))`, capped at 1.
pub fn safety_failure_bound(model: &PartitionModel) -> Result<Prob, AnalysisError> {
    let e3 = delta_ek(model, model.k().min(3), Fraction::two_thirds())?.bound;
    let e1 = delta_e1(model, Fraction::half())?.bound;
    Ok(e3.capped_add(e1))
}
