//! Univariate tails, divergences and per-committee bounds.

use statrs::function::gamma::ln_gamma;

use super::{invalid, log_sum_exp, AnalysisError, Fraction, Prob};

/// `ln C(n, k)`; `-inf` when `k > n`. Exact integer arithmetic up to `n = 66`.
pub fn ln_choose(n: usize, k: usize) -> f64 {
    if k > n {
        return f64::NEG_INFINITY;
    }
    if k == 0 || k == n {
        return 0.0;
    }
    if n <= 66 {
        let k = k.min(n - k) as u128;
        let mut c: u128 = 1;
        for i in 0..k {
            c = c * (n as u128 - i) / (i + 1);
        }
        return (c as f64).ln();
    }
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Kullback-Leibler divergence `D(a || p)` for `a, p` in `(0, 1)`.
pub fn kl_divergence(a: f64, p: f64) -> Result<f64, AnalysisError> {
    if !(a > 0.0 && a < 1.0 && p > 0.0 && p < 1.0) {
        return invalid(format!("KL divergence needs a, p in (0, 1); got a = {a}, p = {p}"));
    }
    Ok(kl_closed(a, p))
}

/// `D(a || p)` with `a` in `[0, 1]`, using `0 ln 0 = 0`.
pub(crate) fn kl_closed(a: f64, p: f64) -> f64 {
    let term = |x: f64, y: f64| if x == 0.0 { 0.0 } else { x * (x / y).ln() };
    (term(a, p) + term(1.0 - a, 1.0 - p)).max(0.0)
}

/// Terms of a unimodal pmf summed from `lo` to `hi`. Past the mode the sum
/// stops once terms fall below `e^-48` of the largest term seen.
fn sum_unimodal_tail(lo: usize, hi: usize, ln_term: impl Fn(usize) -> f64) -> f64 {
    let mut terms = Vec::new();
    let mut max = f64::NEG_INFINITY;
    let mut prev = f64::NEG_INFINITY;
    for j in lo..=hi {
        let t = ln_term(j);
        if t > max {
            max = t;
        }
        terms.push(t);
        if t < prev && t < max - 48.0 {
            break;
        }
        prev = t;
    }
    log_sum_exp(&terms)
}

/// `P(X >= k)` for `X ~ Binomial(n, p)`.
pub fn binom_tail(n: usize, p: f64, k: usize) -> Prob {
    if k == 0 {
        return Prob::ONE;
    }
    if k > n || p <= 0.0 {
        return Prob::ZERO;
    }
    if p >= 1.0 {
        return Prob::ONE;
    }
    let (lp, lq) = (p.ln(), (-p).ln_1p());
    Prob::from_ln(sum_unimodal_tail(k, n, |j| ln_choose(n, j) + j as f64 * lp + (n - j) as f64 * lq))
}

/// `P(X >= k)` where `X` counts Byzantine nodes in a committee of `n_mu`
/// drawn without replacement from `N` nodes of which `M` are Byzantine.
pub fn hyper_tail(n_total: usize, m: usize, n_mu: usize, k: usize) -> Prob {
    assert!(n_mu <= n_total && m <= n_total, "hypergeometric parameters out of range");
    let lo = (n_mu + m).saturating_sub(n_total);
    let hi = n_mu.min(m);
    if k > hi {
        return Prob::ZERO;
    }
    if k <= lo {
        return Prob::ONE;
    }
    let norm = ln_choose(n_total, m);
    Prob::from_ln(sum_unimodal_tail(k, hi, |j| ln_choose(n_mu, j) + ln_choose(n_total - n_mu, m - j) - norm))
}

/// `ln((1 - r^m) / (1 - r))` for `r >= 0`: the geometric sum `sum_{i<m} r^i`.
fn ln_geometric_sum(r: f64, m: usize) -> f64 {
    if m == 0 {
        return f64::NEG_INFINITY;
    }
    if r == 0.0 {
        return 0.0;
    }
    if (r - 1.0).abs() < 1e-15 {
        return (m as f64).ln();
    }
    let lr = r.ln();
    if r < 1.0 {
        (-(m as f64 * lr).exp_m1()).ln() - (-r).ln_1p()
    } else {
        (m as f64 * lr).exp_m1().ln() - (r - 1.0).ln()
    }
}

/// Upper bound on `P(X >= floor(A n_mu) + 1)` in the hypergeometric model:
/// the first tail term times the geometric sum of the term ratio bound
///
/// `r = (P - t/N)(1 - A') / ((1 - P - n_mu/N + t/N) A')`, `t = floor(A n_mu) + 1`, `A' = t / n_mu`.
///
/// Requires `P + 1/N < A` with `P = M/N`.
pub fn hyper_tail_bound(n_total: usize, m: usize, n_mu: usize, a: Fraction) -> Result<Prob, AnalysisError> {
    if n_mu == 0 || n_mu > n_total || m > n_total {
        return invalid("hypergeometric parameters out of range");
    }
    // P + 1/N < A  <=>  (M + 1) * den < num * N
    if (m as u128 + 1) * a.den() as u128 >= a.num() as u128 * n_total as u128 {
        return Err(AnalysisError::BoundPrecondition(format!("P + 1/N = {}/{n_total} is not below A = {a}", m + 1)));
    }
    let t = a.floor_mul(n_mu) + 1;
    if t > n_mu || t > m {
        return Ok(Prob::ZERO);
    }
    let (nf, mf, nmu, tf) = (n_total as f64, m as f64, n_mu as f64, t as f64);
    let honest_left = n_total - m;
    if n_mu - t >= honest_left {
        // Every placement already has at least t Byzantine members.
        return Ok(Prob::ONE);
    }
    let first = ln_choose(n_total - n_mu, m - t) + ln_choose(n_mu, t) - ln_choose(n_total, m);
    let a_mu = tf / nmu;
    let p = mf / nf;
    let r = ((p - tf / nf) * (1.0 - a_mu)) / ((1.0 - p - nmu / nf + tf / nf) * a_mu);
    let r = r.max(0.0);
    Ok(Prob::from_ln(first + ln_geometric_sum(r, n_mu - t + 1)))
}

/// Hoeffding bound `exp(-n D(A' || p))` with `A' = (floor(A n) + 1) / n`;
/// 1 when `A' <= p`.
pub fn hoeffding_bound(n: usize, p: f64, a: Fraction) -> Prob {
    let t = a.floor_mul(n) + 1;
    let a_mu = t as f64 / n as f64;
    if a_mu <= p {
        return Prob::ONE;
    }
    if a_mu > 1.0 {
        return Prob::ZERO;
    }
    Prob::from_ln(-(n as f64) * kl_closed(a_mu, p))
}

/// Upper bound on `P(X >= floor(A n) + 1)` for `X ~ Binomial(n, p)`:
///
/// `exp(-n D(A' || p)) / ((1 - r) sqrt(2 pi A'(1 - A') n))`, `r = p(1 - A') / (A'(1 - p))`.
///
/// When `A' = 1` the tail `p^n` is returned; when `A' <= p` the bound is 1.
pub fn binom_tail_bound(n: usize, p: f64, a: Fraction) -> Prob {
    let t = a.floor_mul(n) + 1;
    if t > n {
        return Prob::ZERO;
    }
    let a_mu = t as f64 / n as f64;
    if a_mu <= p {
        return Prob::ONE;
    }
    if t == n {
        return Prob::from_ln(n as f64 * p.ln());
    }
    let nf = n as f64;
    let r = p * (1.0 - a_mu) / (a_mu * (1.0 - p));
    let ln = -(-r).ln_1p() - nf * kl_closed(a_mu, p) - 0.5 * (2.0 * std::f64::consts::PI * a_mu * (1.0 - a_mu) * nf).ln();
    Prob::from_ln(ln)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binom_tail_edges() {
        assert_eq!(binom_tail(10, 0.25, 0), Prob::ONE);
        assert_eq!(binom_tail(10, 0.25, 11), Prob::ZERO);
        let exact = 0.25f64.powi(10);
        assert!((binom_tail(10, 0.25, 10).value() / exact - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hyper_tail_edges() {
        assert_eq!(hyper_tail(10, 3, 4, 4), Prob::ZERO);
        assert_eq!(hyper_tail(10, 3, 4, 0), Prob::ONE);
        // P(X >= 1) = 1 - C(7,4)/C(10,4) = 1 - 35/210
        assert!((hyper_tail(10, 3, 4, 1).value() - (1.0 - 35.0 / 210.0)).abs() < 1e-13);
    }

    #[test]
    fn kl_properties() {
        assert_eq!(kl_divergence(0.3, 0.3).unwrap(), 0.0);
        let a = kl_divergence(0.2, 0.6).unwrap();
        let b = kl_divergence(0.8, 0.4).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert!(kl_divergence(0.0, 0.5).is_err());
    }

    #[test]
    fn ratio_bound_refuses_without_margin() {
        assert!(hyper_tail_bound(100, 33, 10, Fraction::third()).is_err());
        assert!(hyper_tail_bound(1000, 250, 30, Fraction::third()).is_ok());
    }

    #[test]
    fn geometric_sum() {
        assert!((ln_geometric_sum(0.5, 3).exp() - 1.75).abs() < 1e-14);
        assert!((ln_geometric_sum(2.0, 3).exp() - 7.0).abs() < 1e-12);
        assert!((ln_geometric_sum(1.0, 4).exp() - 4.0).abs() < 1e-12);
    }
}
