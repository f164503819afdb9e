//! Committee-size selection.

use serde::{Deserialize, Serialize};

use super::events::delta_e1;
use super::tails::kl_closed;
use super::{invalid, Adversary, AnalysisError, Fraction, PartitionModel};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizingParams {
    pub n_nodes: usize,
    /// Byzantine probability per node.
    pub p: f64,
    /// Committee tolerance threshold.
    pub a: Fraction,
    /// Target failure probability.
    pub delta: f64,
}

/// `N = nK + r` layout chosen by the solver, with its exact `delta(E1(A))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SizingResult {
    pub k: usize,
    pub n: usize,
    pub r: usize,
    pub failure: f64,
}

impl SizingParams {
    fn validate(&self) -> Result<(), AnalysisError> {
        if self.n_nodes == 0 {
            return invalid("N must be positive");
        }
        if !(self.p > 0.0 && self.p < 1.0) {
            return invalid(format!("P = {} must lie in (0, 1)", self.p));
        }
        if !self.a.is_proper() {
            return invalid(format!("A = {} must lie in (0, 1)", self.a));
        }
        if self.p >= self.a.as_f64() {
            return invalid(format!("P = {} must be below A = {}", self.p, self.a));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return invalid(format!("delta = {} must lie in (0, 1)", self.delta));
        }
        Ok(())
    }
}

/// Largest odd committee count `K` whose binomial `delta(E1(A))` stays within
/// `delta`. Starting from a single committee of all `N` nodes, `K` grows
/// through `3, 5, 7, …` and the last layout that met the target is returned.
/// A single committee is always accepted, even when it misses the target.
pub fn committee_size_solver(params: SizingParams) -> Result<SizingResult, AnalysisError> {
    params.validate()?;
    let n_total = params.n_nodes;
    let mut best = SizingResult { k: 1, n: n_total, r: 0, failure: failure_for(params, 1)? };
    let mut k = 3;
    while k <= n_total {
        let failure = failure_for(params, k)?;
        if failure > params.delta {
            break;
        }
        best = SizingResult { k, n: n_total / k, r: n_total % k, failure };
        k += 2;
    }
    Ok(best)
}

fn failure_for(params: SizingParams, k: usize) -> Result<f64, AnalysisError> {
    let model = PartitionModel::split(params.n_nodes, k, Adversary::Fraction(params.p))?;
    Ok(delta_e1(&model, params.a)?.exact.expect("binomial exact value").value())
}

/// Upper bound on the committee size the solver returns:
/// `ln(N / (n_min delta)) / D(A || P)`.
pub fn committee_size_upper_bound(n_total: usize, n_min: usize, delta: f64, p: f64, a: Fraction) -> Result<f64, AnalysisError> {
    if n_min == 0 || n_total == 0 {
        return invalid("N and n_min must be positive");
    }
    if !(delta > 0.0 && delta < 1.0) || !(p > 0.0 && p < a.as_f64()) || !a.is_proper() {
        return invalid("need 0 < delta < 1 and 0 < P < A < 1");
    }
    Ok((n_total as f64 / (n_min as f64 * delta)).ln() / kl_closed(a.as_f64(), p))
}

/// Upper bound on `n` evaluated at the layout's own failure probability,
/// which is what the bound is derived from; infinite when that probability
/// underflows.
pub fn layout_upper_bound(n_total: usize, n: usize, failure: f64, p: f64, a: Fraction) -> Result<f64, AnalysisError> {
    if failure <= 0.0 {
        return Ok(f64::INFINITY);
    }
    committee_size_upper_bound(n_total, n, failure.min(0.5), p, a)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn solve(n: usize, delta: f64) -> SizingResult {
        committee_size_solver(SizingParams { n_nodes: n, p: 0.25, a: Fraction::third(), delta }).unwrap()
    }

    #[test]
    fn reference_layouts() {
        let r = solve(10_000, 1e-3);
        assert_eq!((r.k, r.n), (23, 434));
        let r = solve(1_000, 1e-4);
        assert_eq!((r.k, r.n), (1, 1000));
    }

    #[test]
    fn rejects_bad_parameters() {
        let p = SizingParams { n_nodes: 100, p: 0.4, a: Fraction::third(), delta: 1e-3 };
        assert!(committee_size_solver(p).is_err());
    }
}
