//! Two-sample statistics for timing-error comparisons.

use alloc::vec::Vec;

/// Largest pooled sample size for which the exact test is used.
pub const EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("need at least {needed} values per group, got {got_a} and {got_b}")]
    TooFewSamples { needed: usize, got_a: usize, got_b: usize },
    #[error("pooled variance is zero; effect size is undefined")]
    DegenerateVariance,
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("exact enumeration supports at most {max} pooled values, got {n}")]
    ExactTooLarge { n: usize, max: usize },
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn sample_variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

fn check_finite(a: &[f64], b: &[f64]) -> Result<(), StatsError> {
    if a.iter().chain(b).all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

/// Hedges's g_s for two independent groups: Cohen's d_s on the pooled
/// standard deviation, times `1 - 3 / (4 (n_a + n_b) - 9)`.
pub fn hedges_g(a: &[f64], b: &[f64]) -> Result<f64, StatsError> {
    if a.len() < 2 || b.len() < 2 {
        return Err(StatsError::TooFewSamples {
            needed: 2,
            got_a: a.len(),
            got_b: b.len(),
        });
    }
    check_finite(a, b)?;
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = ((na - 1.0) * sample_variance(a) + (nb - 1.0) * sample_variance(b)) / (na + nb - 2.0);
    if !(pooled > 0.0) {
        return Err(StatsError::DegenerateVariance);
    }
    let d = (mean(a) - mean(b)) / libm::sqrt(pooled);
    Ok(d * (1.0 - 3.0 / (4.0 * (na + nb) - 9.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum UMethod {
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MannWhitney {
    /// Pairs with `a < b`, ties counting one half.
    pub u_a: f64,
    /// Pairs with `b < a`, ties counting one half.
    pub u_b: f64,
    pub u: f64,
    pub p_value: f64,
    pub method: UMethod,
    pub n_a: usize,
    pub n_b: usize,
}

/// Twice `u_a`, so ties stay integral.
fn doubled_u(a: impl Iterator<Item = f64> + Clone, b: &[f64]) -> u64 {
    let mut u = 0;
    for x in a {
        for &y in b {
            if x < y {
                u += 2;
            } else if x == y {
                u += 1;
            }
        }
    }
    u
}

/// Mann-Whitney U with the exact test for up to [`EXACT_MAX_N`] pooled
/// values and the tie-corrected normal approximation beyond.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, StatsError> {
    let method = if a.len() + b.len() <= EXACT_MAX_N {
        UMethod::Exact
    } else {
        UMethod::NormalApprox
    };
    mann_whitney_u_with(a, b, method)
}

pub fn mann_whitney_u_with(a: &[f64], b: &[f64], method: UMethod) -> Result<MannWhitney, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::TooFewSamples {
            needed: 1,
            got_a: a.len(),
            got_b: b.len(),
        });
    }
    check_finite(a, b)?;
    let (na, nb) = (a.len(), b.len());
    let pairs2 = 2 * (na * nb) as u64;
    let ua2 = doubled_u(a.iter().copied(), b);
    let ub2 = pairs2 - ua2;
    let u2 = ua2.min(ub2);

    let p = match method {
        UMethod::Exact => exact_p(a, b, u2)?,
        UMethod::NormalApprox => normal_p(a, b, u2 as f64 / 2.0),
    };
    Ok(MannWhitney {
        u_a: ua2 as f64 / 2.0,
        u_b: ub2 as f64 / 2.0,
        u: u2 as f64 / 2.0,
        p_value: f64::min(p, 1.0),
        method,
        n_a: na,
        n_b: nb,
    })
}

/// Share of all `C(n, n_a)` relabelings whose U is at least as extreme.
fn exact_p(a: &[f64], b: &[f64], observed_u2: u64) -> Result<f64, StatsError> {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let n = pooled.len();
    if n > EXACT_MAX_N {
        return Err(StatsError::ExactTooLarge { n, max: EXACT_MAX_N });
    }
    let na = a.len();
    let pairs2 = 2 * (na * (n - na)) as u64;
    let mut total = 0u64;
    let mut extreme = 0u64;
    let mut rest = Vec::with_capacity(n);
    for mask in 0u32..(1 << n) {
        if mask.count_ones() as usize != na {
            continue;
        }
        rest.clear();
        rest.extend((0..n).filter(|i| mask & (1 << i) == 0).map(|i| pooled[i]));
        let picked = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| pooled[i]);
        let ua2 = doubled_u(picked, &rest);
        total += 1;
        if ua2.min(pairs2 - ua2) <= observed_u2 {
            extreme += 1;
        }
    }
    Ok(extreme as f64 / total as f64)
}

/// Two-sided normal approximation with tie correction and a 0.5
/// continuity correction.
fn normal_p(a: &[f64], b: &[f64], u: f64) -> f64 {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    pooled.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j] == pooled[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        tie_term += t * t * t - t;
        i = j;
    }
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if !(var > 0.0) {
        return 1.0;
    }
    let mu = na * nb / 2.0;
    let z = f64::max(0.0, libm::fabs(u - mu) - 0.5) / libm::sqrt(var);
    libm::erfc(z / core::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hedges_reference_value() {
        let g = hedges_g(&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]).unwrap();
        assert!((g + 0.8).abs() <= 1e-12);
    }

    #[test]
    fn hedges_edge_cases() {
        assert_eq!(hedges_g(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(hedges_g(&[0.0, 0.0], &[0.0, 0.0]), Err(StatsError::DegenerateVariance));
        assert!(matches!(hedges_g(&[1.0], &[1.0, 2.0]), Err(StatsError::TooFewSamples { .. })));
    }

    #[test]
    fn mwu_reference_value() {
        let r = mann_whitney_u(&[1.0, 2.0], &[3.0, 4.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert_eq!(r.u_a, 4.0);
        assert_eq!(r.method, UMethod::Exact);
        assert!((r.p_value - 1.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn identical_samples_give_unit_p() {
        let a = [0.3, 1.2, 0.7, 0.7];
        let r = mann_whitney_u(&a, &a).unwrap();
        assert_eq!(r.p_value, 1.0);
        let big: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let r = mann_whitney_u(&big, &big).unwrap();
        assert_eq!(r.method, UMethod::NormalApprox);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn all_tied_normal_is_one() {
        let r = mann_whitney_u_with(&[1.0; 8], &[1.0; 8], UMethod::NormalApprox).unwrap();
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn empty_group_is_rejected() {
        assert!(mann_whitney_u(&[], &[1.0]).is_err());
        assert!(mann_whitney_u_with(&[0.0; 7], &[0.0; 7], UMethod::Exact).is_err());
    }
}
