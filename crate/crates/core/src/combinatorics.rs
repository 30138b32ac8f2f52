//! Closed-form quantities for a single waiting-list lottery.
//!
//! A lottery has `n` applicants, `s` seats and `a1` accepters (students who
//! enroll when offered a seat). Offers go down the random ranking until all
//! seats are filled; `T` is the rank of the last offer. This module provides
//! the exact distribution of `T`, the common expected accepter share `a1/n`
//! of the `rank < T` and `rank > T` groups, the exact test of the null
//! `a1 = s` based on an observed `T`, and the asymptotic variance ratio of
//! the two consistent instruments.

use num_bigint::BigUint;
use num_traits::{One, Zero};
use thiserror::Error;

use crate::rational::{big_rat, Rational};

/// Default significance level for [`rejects_null`].
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CombinatoricsError {
    #[error("invalid lottery parameters: {0}")]
    InvalidParams(String),
    #[error("oversubscription (2 <= s < a1 <= n) required, got n={n}, s={s}, a1={a1}")]
    NotOversubscribed { n: u64, s: u64, a1: u64 },
    #[error("seat count must satisfy 2 <= s < n, got n={n}, s={s}")]
    InvalidSeatCount { n: u64, s: u64 },
    #[error("t={t} outside the admissible range [{lo}, {hi}]")]
    InvalidT { t: u64, lo: u64, hi: u64 },
    #[error("variance ratio needs 0 < p_d < p_c < 1, got p_c={p_c}, p_d={p_d}")]
    DomainError { p_c: f64, p_d: f64 },
}

/// Parameters of one lottery: `n` applicants, `s` seats, and, when known,
/// the accepter count `a1`. The refuser count is always derived as `n - a1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LotteryParams {
    n: u64,
    s: u64,
    a1: Option<u64>,
}

impl LotteryParams {
    /// Lottery with an unknown accepter count (real data).
    pub fn new(n: u64, s: u64) -> Result<Self, CombinatoricsError> {
        if s < 1 || s >= n {
            return Err(CombinatoricsError::InvalidParams(format!(
                "need 1 <= s < n, got n={n}, s={s}"
            )));
        }
        Ok(Self { n, s, a1: None })
    }

    /// Lottery with a known accepter count (simulation or enumeration).
    pub fn with_accepters(n: u64, s: u64, a1: u64) -> Result<Self, CombinatoricsError> {
        let mut params = Self::new(n, s)?;
        if a1 > n {
            return Err(CombinatoricsError::InvalidParams(format!(
                "accepter count a1={a1} exceeds n={n}"
            )));
        }
        params.a1 = Some(a1);
        Ok(params)
    }

    pub fn n(&self) -> u64 {
        self.n
    }

    pub fn s(&self) -> u64 {
        self.s
    }

    pub fn a1(&self) -> Option<u64> {
        self.a1
    }

    /// Refuser count `n - a1`, when the accepter count is known.
    pub fn refusers(&self) -> Option<u64> {
        self.a1.map(|a1| self.n - a1)
    }

    /// Unpack `(n, s, a1)` after checking `2 <= s < a1 <= n`, the regime in
    /// which the balance identity for the last-offer grouping holds.
    pub fn require_oversubscribed(&self) -> Result<(u64, u64, u64), CombinatoricsError> {
        let a1 = self.a1.ok_or_else(|| {
            CombinatoricsError::InvalidParams("accepter count a1 is required".into())
        })?;
        if self.s < 2 || self.s >= a1 {
            return Err(CombinatoricsError::NotOversubscribed {
                n: self.n,
                s: self.s,
                a1,
            });
        }
        Ok((self.n, self.s, a1))
    }
}

/// Binomial coefficient, exact, with the convention that `binom(i, j) = 0`
/// for `j > i`.
///
/// Computed by the multiplicative formula; every intermediate value is itself
/// a binomial coefficient so each division is exact.
pub fn binom(i: u64, j: u64) -> BigUint {
    if j > i {
        return BigUint::zero();
    }
    let j = j.min(i - j);
    let mut acc = BigUint::one();
    for k in 1..=j {
        acc = acc * (i - j + k) / k;
    }
    acc
}

/// Exact probability that the last offer goes to rank `t`, for a lottery with
/// a known accepter count:
///
/// `P(T = t) = binom(t-1, s-1) * binom(n-t, a1-s) / binom(n, a1)`
///
/// Ranks outside the support `[s, s + (n - a1)]` have probability zero.
pub fn prob_t(params: &LotteryParams, t: u64) -> Result<Rational, CombinatoricsError> {
    let (n, s, a1) = params.require_oversubscribed()?;
    let hi = s + (n - a1);
    if t < s || t > hi {
        return Ok(Rational::zero());
    }
    let numer = binom(t - 1, s - 1) * binom(n - t, a1 - s);
    Ok(big_rat(numer, binom(n, a1)))
}

/// Common expected accepter share of the `rank < T` and `rank > T` groups,
/// `a1 / n`, valid whenever `2 <= s < a1 <= n`.
pub fn expected_share(params: &LotteryParams) -> Result<Rational, CombinatoricsError> {
    let (n, _, a1) = params.require_oversubscribed()?;
    Ok(big_rat(BigUint::from(a1), BigUint::from(n)))
}

/// Exact point probability of observing last-offer rank `t` under the null
/// hypothesis that the lottery was not oversubscribed (`a1 = s`):
///
/// `P(T = t | a1 = s) = binom(t-1, t-s) / binom(n, n-s)`
///
/// The associated decision rule rejects the null when this value falls below
/// the caller's significance level (see [`rejects_null`]).
pub fn exact_test_pvalue(n: u64, s: u64, t: u64) -> Result<Rational, CombinatoricsError> {
    if s < 2 || s >= n {
        return Err(CombinatoricsError::InvalidSeatCount { n, s });
    }
    if t < s || t > n {
        return Err(CombinatoricsError::InvalidT { t, lo: s, hi: n });
    }
    Ok(big_rat(binom(t - 1, t - s), binom(n, n - s)))
}

/// Upper-tail variant of the oversubscription test: `sum of P(T = u | a1 = s)`
/// over `u >= t`. Exposed as an extension; the point probability of
/// [`exact_test_pvalue`] is the default rule.
pub fn exact_test_tail_pvalue(n: u64, s: u64, t: u64) -> Result<Rational, CombinatoricsError> {
    if s < 2 || s >= n {
        return Err(CombinatoricsError::InvalidSeatCount { n, s });
    }
    if t < s || t > n {
        return Err(CombinatoricsError::InvalidT { t, lo: s, hi: n });
    }
    let mut tail = BigUint::zero();
    for u in t..=n {
        tail += binom(u - 1, u - s);
    }
    Ok(big_rat(tail, binom(n, n - s)))
}

/// Decision rule for the oversubscription test: reject `a1 = s` when the
/// p-value is strictly below `alpha`. The p-value is rounded to double
/// precision for the comparison, since `alpha` arrives as a double.
pub fn rejects_null(p_value: &Rational, alpha: f64) -> bool {
    crate::rational::to_f64(p_value) < alpha
}

/// Asymptotic ratio of the 2SLS variances obtained with the last-offer
/// grouping versus the first-round-offer grouping:
///
/// `(p_c - p_d) / (1 - p_d)`
///
/// where `p_c` is the population accepter share and `p_d` the treated share.
/// Always in `(0, 1]` on its domain `0 < p_d < p_c < 1`.
pub fn variance_ratio(p_c: f64, p_d: f64) -> Result<f64, CombinatoricsError> {
    if !(p_c.is_finite() && p_d.is_finite()) || p_d <= 0.0 || p_c >= 1.0 || p_d >= p_c {
        return Err(CombinatoricsError::DomainError { p_c, p_d });
    }
    Ok((p_c - p_d) / (1.0 - p_d))
}
