//! Composition counting and the binomial/Stirling bound used by both tail arguments.
//!
//! N_{k,s} counts sequences (t₁, …, t_s) of positive integers summing to k.
//! It is bounded by C(k+s, s) (choose s balls from a row of k+s), which in
//! turn is at most e^{η̂k} when s ≤ ηk and (1+η)η − η log η ≤ η̂.

use serde::{Deserialize, Serialize};

/// Largest k handled with exact integer arithmetic.
pub const K_CAP: u64 = 64;
/// Largest k handled by exhaustive enumeration.
pub const ENUMERATION_CAP: u64 = 20;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum CombinatoricsError {
    #[error("need 1 <= s <= k, got k = {k}, s = {s}")]
    InvalidArguments { k: u64, s: u64 },
    #[error("k = {k} exceeds the exact-arithmetic cap {K_CAP}")]
    Overflow { k: u64 },
    #[error("enumeration ({enumerated}) and closed form ({closed}) disagree")]
    OracleMismatch { enumerated: u128, closed: u128 },
    #[error("no eta > 0 satisfies the Stirling relation for eta_hat = {eta_hat}")]
    PreconditionUnsatisfiable { eta_hat: f64 },
}

/// Exact binomial coefficient; `None` on overflow of u128.
pub fn binomial(n: u64, k: u64) -> Option<u128> {
    if k > n {
        return Some(0);
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        // acc * (n - i) / (i + 1) is exact at every step.
        acc = acc.checked_mul((n - i) as u128)? / (i as u128 + 1);
    }
    Some(acc)
}

/// Counts compositions of `k` into `s` parts by walking every sequence.
pub fn enumerate_compositions(k: u64, s: u64) -> u128 {
    fn walk(remaining: u64, parts: u64) -> u128 {
        if parts == 0 {
            return (remaining == 0) as u128;
        }
        if remaining < parts {
            return 0;
        }
        (1..=remaining - (parts - 1)).map(|t| walk(remaining - t, parts - 1)).sum()
    }
    walk(k, s)
}

/// N_{k,s}: enumeration for k ≤ 20 (checked against C(k−1, s−1)), closed form above.
pub fn count_compositions(k: u64, s: u64) -> Result<u128, CombinatoricsError> {
    if s < 1 || s > k {
        return Err(CombinatoricsError::InvalidArguments { k, s });
    }
    if k > K_CAP {
        return Err(CombinatoricsError::Overflow { k });
    }
    let closed = binomial(k - 1, s - 1).ok_or(CombinatoricsError::Overflow { k })?;
    if k <= ENUMERATION_CAP {
        let enumerated = enumerate_compositions(k, s);
        if enumerated != closed {
            return Err(CombinatoricsError::OracleMismatch { enumerated, closed });
        }
    }
    Ok(closed)
}

/// g(η) = (1+η)η − η log η, the exponent of the Stirling estimate.
pub fn stirling_exponent(eta: f64) -> f64 {
    (1.0 + eta) * eta - eta * eta.ln()
}

/// Largest η ∈ (0, 1/2] with g(η) ≤ η̂, to 10⁻⁶ by bisection.
pub fn eta_for(eta_hat: f64) -> Result<f64, CombinatoricsError> {
    if !(eta_hat > 0.0) {
        return Err(CombinatoricsError::PreconditionUnsatisfiable { eta_hat });
    }
    if stirling_exponent(0.5) <= eta_hat {
        return Ok(0.5);
    }
    let (mut lo, mut hi) = (0.0_f64, 0.5_f64);
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if stirling_exponent(mid) <= eta_hat {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if lo <= 0.0 {
        return Err(CombinatoricsError::PreconditionUnsatisfiable { eta_hat });
    }
    Ok(lo)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub k: u64,
    pub s: u64,
    pub eta_hat: f64,
    pub eta: f64,
    pub count: u128,
    pub binom_bound: u128,
    pub exp_bound: f64,
    /// Whether s ≤ ηk, the hypothesis under which the chain is claimed.
    pub precondition_met: bool,
    /// N ≤ C(k+s, s) ≤ e^{η̂k}.
    pub holds: bool,
}

/// Verifies N_{k,s} ≤ C(k+s, s) ≤ e^{η̂k}.
pub fn check_bound(k: u64, s: u64, eta_hat: f64) -> Result<BoundCheck, CombinatoricsError> {
    let eta = eta_for(eta_hat)?;
    let count = count_compositions(k, s)?;
    let binom_bound = binomial(k + s, s).ok_or(CombinatoricsError::Overflow { k })?;
    let exp_bound = (eta_hat * k as f64).exp();
    let holds = count <= binom_bound && (binom_bound as f64) <= exp_bound;
    Ok(BoundCheck {
        k,
        s,
        eta_hat,
        eta,
        count,
        binom_bound,
        exp_bound,
        precondition_met: (s as f64) <= eta * k as f64,
        holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_counts() {
        assert_eq!(count_compositions(3, 2).unwrap(), 2);
        assert_eq!(count_compositions(4, 2).unwrap(), 3);
        for k in 1..=30 {
            assert_eq!(count_compositions(k, 1).unwrap(), 1);
            assert_eq!(count_compositions(k, k).unwrap(), 1);
        }
    }

    #[test]
    fn argument_errors() {
        assert!(matches!(count_compositions(3, 4), Err(CombinatoricsError::InvalidArguments { .. })));
        assert!(matches!(count_compositions(65, 2), Err(CombinatoricsError::Overflow { .. })));
        assert!(matches!(eta_for(0.0), Err(CombinatoricsError::PreconditionUnsatisfiable { .. })));
    }

    #[test]
    fn documented_bounds() {
        let c = check_bound(10, 1, 0.24).unwrap();
        assert_eq!((c.count, c.binom_bound), (1, 11));
        assert!(c.holds);
        assert!(check_bound(20, 2, 0.5).unwrap().holds);
        let m = check_bound(12, 12, 2.0).unwrap();
        assert_eq!(m.count, 1);
        assert_eq!(m.binom_bound, binomial(24, 12).unwrap());
    }

    #[test]
    fn eta_solves_the_relation() {
        let eta = eta_for(0.24).unwrap();
        assert!(stirling_exponent(eta) <= 0.24);
        assert!(stirling_exponent(eta + 2e-6) > 0.24);
        assert_eq!(eta_for(5.0).unwrap(), 0.5);
    }

    #[test]
    fn largest_coefficient_fits() {
        assert_eq!(binomial(63, 31).unwrap(), 916_312_070_471_295_267);
    }
}
