//! Exhaustive enumeration of Byzantine placements for small instances.

use super::{Adversary, AnalysisError, FailureEvent, PartitionModel};

pub const BRUTE_MAX_HYPERGEOMETRIC: usize = 14;
pub const BRUTE_MAX_BINOMIAL: usize = 20;

/// Probability of `event` by enumerating every placement. Hypergeometric
/// instances need `N <= 14`, binomial ones `N <= 20`.
pub fn brute_force_delta(model: &PartitionModel, event: FailureEvent) -> Result<f64, AnalysisError> {
    let n = model.n_nodes;
    let limit = match model.adversary {
        Adversary::ExactCount(_) => BRUTE_MAX_HYPERGEOMETRIC,
        Adversary::Fraction(_) => BRUTE_MAX_BINOMIAL,
    };
    if n > limit {
        return Err(AnalysisError::TooLarge(format!("N = {n} exceeds {limit} for the {} model", model.model_name())));
    }
    let masks: Vec<u32> = {
        let mut start = 0;
        model
            .sizes
            .iter()
            .map(|&s| {
                let m = ((1u32 << s) - 1) << start;
                start += s;
                m
            })
            .collect()
    };
    let groups: Vec<(u32, usize)> = match event {
        FailureEvent::E0 => return Ok(model.p()),
        FailureEvent::E1(a) => masks.iter().zip(&model.sizes).map(|(&m, &s)| (m, a.floor_mul(s))).collect(),
        FailureEvent::E2(a) => {
            model.sibling_pair_sizes()?;
            masks[1..]
                .chunks(2)
                .zip(model.sizes[1..].chunks(2))
                .map(|(m, s)| (m[0] | m[1], a.floor_mul(s[0] + s[1])))
                .collect()
        }
        FailureEvent::Ek(k, b) => {
            if k == 0 || k > model.k() {
                return Err(AnalysisError::InvalidInput(format!("k = {k} must lie in [1, K = {}]", model.k())));
            }
            let mask = masks[..k].iter().fold(0, |acc, m| acc | m);
            vec![(mask, b.floor_mul(model.sizes[..k].iter().sum()))]
        }
    };
    let fails = |placement: u32| groups.iter().any(|&(m, cap)| (placement & m).count_ones() as usize > cap);

    // failing[c] = number of failing placements with c Byzantine nodes.
    let mut failing = vec![0u64; n + 1];
    let mut total = vec![0u64; n + 1];
    match model.adversary {
        Adversary::ExactCount(m) => {
            for_each_subset(n, m, |p| {
                total[m] += 1;
                failing[m] += fails(p) as u64;
            });
            Ok(failing[m] as f64 / total[m] as f64)
        }
        Adversary::Fraction(p) => {
            for placement in 0u32..(1u32 << n) {
                if fails(placement) {
                    failing[placement.count_ones() as usize] += 1;
                }
            }
            let q = 1.0 - p;
            Ok(super::neumaier((0..=n).map(|c| failing[c] as f64 * p.powi(c as i32) * q.powi((n - c) as i32))))
        }
    }
}

/// Visits every `m`-subset of `{0..n}` as a bitmask.
fn for_each_subset(n: usize, m: usize, mut f: impl FnMut(u32)) {
    if m == 0 {
        f(0);
        return;
    }
    let mut s: u32 = (1u32 << m) - 1;
    let limit = 1u32 << n;
    while s < limit {
        f(s);
        let c = s & s.wrapping_neg();
        let r = s + c;
        s = (((r ^ s) >> 2) / c) | r;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn subset_enumeration_counts() {
        let mut count = 0;
        for_each_subset(10, 4, |s| {
            assert_eq!(s.count_ones(), 4);
            count += 1;
        });
        assert_eq!(count, 210);
    }

    #[test]
    fn refuses_large_instances() {
        let m = PartitionModel::split(15, 3, Adversary::ExactCount(4)).unwrap();
        assert!(brute_force_delta(&m, FailureEvent::E0).is_err());
    }
}
