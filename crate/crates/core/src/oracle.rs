//! Exhaustive-enumeration ground truth.
//!
//! Walks every type pattern of a lottery and aggregates outcomes in exact
//! rational arithmetic. The closed forms in [`crate::combinatorics`] are
//! checked against these enumerations, never the other way around.

use std::collections::BTreeMap;

use num_bigint::BigUint;
use num_traits::Zero;
use thiserror::Error;

use crate::combinatorics::{binom, CombinatoricsError, LotteryParams};
use crate::rational::{big_rat, Rational};
use crate::waitlist::{run_waitlist, shares, OrderingPattern};

/// Largest `n` enumerated by default; `binom(20, 10) = 184756` patterns.
pub const DEFAULT_ENUMERATION_CAP: u64 = 20;

/// Per-pattern detail is retained in summaries up to this `n`.
pub const PER_PATTERN_LIMIT: u64 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumerating n={n} needs {required} patterns; raise the cap (currently n <= {cap})")]
    CapExceeded { n: u64, cap: u64, required: BigUint },
    #[error(transparent)]
    Params(#[from] CombinatoricsError),
}

/// Exact aggregate of one full enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct EnumerationSummary {
    pub n: u64,
    pub s: u64,
    pub a1: u64,
    /// Unweighted mean accepter share of the `w = 1` group over all patterns.
    pub mean_w1: Rational,
    /// Unweighted mean accepter share of the `w = 0` group over all patterns.
    pub mean_w0: Rational,
    /// Exact distribution of the last-offer rank.
    pub t_distribution: BTreeMap<u64, Rational>,
    /// Per-pattern outcomes, retained for `n <= PER_PATTERN_LIMIT`.
    pub per_pattern: Option<Vec<PatternOutcome>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatternOutcome {
    pub pattern: OrderingPattern,
    pub t: u64,
    pub w1: Rational,
    pub w0: Rational,
}

/// All `binom(n, a1)` type patterns, in lexicographic order of their
/// accepter-position sets.
#[derive(Debug)]
pub struct PatternIter {
    n: u64,
    // 1-based accepter ranks of the next pattern; None once exhausted
    positions: Option<Vec<u64>>,
}

impl Iterator for PatternIter {
    type Item = OrderingPattern;

    fn next(&mut self) -> Option<Self::Item> {
        let positions = self.positions.as_mut()?;
        let pattern = OrderingPattern::from_accepter_ranks(self.n, positions);

        // advance to the next combination
        let k = positions.len();
        let mut i = k;
        loop {
            if i == 0 {
                self.positions = None;
                break;
            }
            i -= 1;
            let ceiling = self.n - (k - 1 - i) as u64;
            if positions[i] < ceiling {
                positions[i] += 1;
                for j in i + 1..k {
                    positions[j] = positions[j - 1] + 1;
                }
                break;
            }
        }
        Some(pattern)
    }
}

/// Enumerate patterns under the default cap.
pub fn enumerate_patterns(n: u64, a1: u64) -> Result<PatternIter, OracleError> {
    enumerate_patterns_with_cap(n, a1, DEFAULT_ENUMERATION_CAP)
}

/// Enumerate patterns under an explicit cap on `n`.
pub fn enumerate_patterns_with_cap(n: u64, a1: u64, cap: u64) -> Result<PatternIter, OracleError> {
    if a1 > n {
        return Err(CombinatoricsError::InvalidParams(format!(
            "accepter count a1={a1} exceeds n={n}"
        ))
        .into());
    }
    if n > cap {
        return Err(OracleError::CapExceeded {
            n,
            cap,
            required: binom(n, a1),
        });
    }
    let positions = (1..=a1).collect();
    Ok(PatternIter {
        n,
        positions: Some(positions),
    })
}

/// Enumerate every pattern of an oversubscribed lottery and aggregate the
/// accepter shares and the distribution of the last-offer rank exactly.
pub fn oracle_summary(n: u64, s: u64, a1: u64) -> Result<EnumerationSummary, OracleError> {
    oracle_summary_with_cap(n, s, a1, DEFAULT_ENUMERATION_CAP)
}

pub fn oracle_summary_with_cap(
    n: u64,
    s: u64,
    a1: u64,
    cap: u64,
) -> Result<EnumerationSummary, OracleError> {
    let params = LotteryParams::with_accepters(n, s, a1)?;
    params.require_oversubscribed()?;

    let keep_patterns = n <= PER_PATTERN_LIMIT;
    let mut per_pattern = keep_patterns.then(Vec::new);
    let mut sum_w1 = Rational::zero();
    let mut sum_w0 = Rational::zero();
    let mut t_counts: BTreeMap<u64, u64> = BTreeMap::new();
    let mut emitted = 0u64;

    for pattern in enumerate_patterns_with_cap(n, a1, cap)? {
        let result = run_waitlist(&pattern, s);
        let report = shares(&result, &pattern).expect("result built from pattern");
        let w1 = report.w1.expect("w=1 group nonempty when 2 <= s < a1");
        let w0 = report.w0.expect("w=0 group nonempty when 2 <= s < a1");
        sum_w1 += &w1;
        sum_w0 += &w0;
        *t_counts.entry(result.t_last_offer).or_default() += 1;
        emitted += 1;
        if let Some(list) = per_pattern.as_mut() {
            list.push(PatternOutcome {
                pattern,
                t: result.t_last_offer,
                w1,
                w0,
            });
        }
    }

    let total = binom(n, a1);
    debug_assert_eq!(BigUint::from(emitted), total);
    let t_distribution = t_counts
        .into_iter()
        .map(|(t, count)| (t, big_rat(BigUint::from(count), total.clone())))
        .collect();

    Ok(EnumerationSummary {
        n,
        s,
        a1,
        mean_w1: sum_w1 / big_rat(total.clone(), BigUint::from(1u32)),
        mean_w0: sum_w0 / big_rat(total, BigUint::from(1u32)),
        t_distribution,
        per_pattern,
    })
}

/// Exact distribution of the last-offer rank over every pattern with
/// `a1 = s`, the null of the oversubscription test.
pub fn oracle_null_t_distribution(n: u64, s: u64) -> Result<BTreeMap<u64, Rational>, OracleError> {
    oracle_null_t_distribution_with_cap(n, s, DEFAULT_ENUMERATION_CAP)
}

pub fn oracle_null_t_distribution_with_cap(
    n: u64,
    s: u64,
    cap: u64,
) -> Result<BTreeMap<u64, Rational>, OracleError> {
    if s < 2 || s >= n {
        return Err(CombinatoricsError::InvalidSeatCount { n, s }.into());
    }
    let mut t_counts: BTreeMap<u64, u64> = BTreeMap::new();
    for pattern in enumerate_patterns_with_cap(n, s, cap)? {
        let result = run_waitlist(&pattern, s);
        debug_assert!(!result.undersubscribed);
        *t_counts.entry(result.t_last_offer).or_default() += 1;
    }
    let total = binom(n, s);
    Ok(t_counts
        .into_iter()
        .map(|(t, count)| (t, big_rat(BigUint::from(count), total.clone())))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::combinatorics::{exact_test_pvalue, prob_t};
    use crate::rational::{rat, rat_int};

    #[test]
    fn enumeration_counts_and_order() {
        let patterns: Vec<_> = enumerate_patterns(6, 4).unwrap().collect();
        assert_eq!(patterns.len(), 15);
        assert_eq!(patterns[0].to_string(), "AAAARR");
        assert_eq!(patterns[1].to_string(), "AAARAR");
        assert_eq!(patterns[14].to_string(), "RRAAAA");
        // all distinct
        let mut seen: Vec<String> = patterns.iter().map(|p| p.to_string()).collect();
        seen.sort();
        seen.dedup();
        assert_eq!(seen.len(), 15);
    }

    #[test]
    fn degenerate_enumerations() {
        let all_refusers: Vec<_> = enumerate_patterns(5, 0).unwrap().collect();
        assert_eq!(all_refusers.len(), 1);
        assert_eq!(all_refusers[0].to_string(), "RRRRR");

        let all_accepters: Vec<_> = enumerate_patterns(4, 4).unwrap().collect();
        assert_eq!(all_accepters.len(), 1);
        assert_eq!(all_accepters[0].to_string(), "AAAA");
    }

    #[test]
    fn enumeration_matches_binomial_count() {
        assert_eq!(enumerate_patterns(12, 7).unwrap().count(), 792);
        assert_eq!(
            BigUint::from(enumerate_patterns(12, 7).unwrap().count() as u64),
            binom(12, 7)
        );
    }

    #[test]
    fn cap_exceeded_reports_required_count() {
        let err = enumerate_patterns(21, 10).unwrap_err();
        match err {
            OracleError::CapExceeded { n, cap, required } => {
                assert_eq!(n, 21);
                assert_eq!(cap, DEFAULT_ENUMERATION_CAP);
                assert_eq!(required, binom(21, 10));
            }
            other => panic!("unexpected error {other:?}"),
        }
        // raising the cap deliberately succeeds
        assert!(enumerate_patterns_with_cap(21, 10, 21).is_ok());
    }

    #[test]
    fn summary_of_the_fifteen_pattern_example() {
        let summary = oracle_summary(6, 2, 4).unwrap();
        assert_eq!(summary.mean_w1, rat(2, 3));
        assert_eq!(summary.mean_w0, rat(2, 3));

        let expected: BTreeMap<u64, Rational> =
            [(2, rat(2, 5)), (3, rat(2, 5)), (4, rat(1, 5))].into();
        assert_eq!(summary.t_distribution, expected);

        let per_pattern = summary.per_pattern.unwrap();
        assert_eq!(per_pattern.len(), 15);
    }

    #[test]
    fn summary_of_a_small_instance() {
        let summary = oracle_summary(5, 2, 3).unwrap();
        assert_eq!(summary.mean_w1, rat(3, 5));
        assert_eq!(summary.mean_w0, rat(3, 5));
    }

    #[test]
    fn summary_rejects_non_oversubscribed_params() {
        assert!(matches!(
            oracle_summary(6, 4, 4),
            Err(OracleError::Params(
                CombinatoricsError::NotOversubscribed { .. }
            ))
        ));
    }

    #[test]
    fn per_pattern_detail_dropped_above_limit() {
        let summary = oracle_summary(12, 3, 7).unwrap();
        assert!(summary.per_pattern.is_none());
        assert_eq!(summary.mean_w1, rat(7, 12));
    }

    #[test]
    fn null_distribution_worked_example() {
        let dist = oracle_null_t_distribution(6, 2).unwrap();
        assert_eq!(dist[&4], rat(1, 5));
        let total: Rational = dist.values().sum();
        assert_eq!(total, rat_int(1));
    }

    #[test]
    fn null_distribution_matches_closed_form() {
        let dist = oracle_null_t_distribution(8, 3).unwrap();
        for t in 3..=8 {
            assert_eq!(
                dist.get(&t).cloned().unwrap_or_else(Rational::zero),
                exact_test_pvalue(8, 3, t).unwrap(),
                "t = {t}"
            );
        }
    }

    #[test]
    fn t_distribution_matches_closed_form() {
        let summary = oracle_summary(9, 3, 6).unwrap();
        let params = LotteryParams::with_accepters(9, 3, 6).unwrap();
        for t in 3..=6 {
            assert_eq!(
                summary
                    .t_distribution
                    .get(&t)
                    .cloned()
                    .unwrap_or_else(Rational::zero),
                prob_t(&params, t).unwrap(),
                "t = {t}"
            );
        }
    }

    /// Spot check of the reduction that justifies enumerating type patterns
    /// instead of full student permutations: walk 1000 random permutations
    /// of typed students and confirm the pattern they induce produces the
    /// same last-offer rank and group compositions.
    #[test]
    fn pattern_reduction_spot_check_against_permutations() {
        use crate::waitlist::StudentType;
        use rand::seq::SliceRandom;
        use rand::{Rng, SeedableRng};

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(161_803);
        for _ in 0..1000 {
            let n = rng.random_range(3..=10usize);
            let seats = rng.random_range(1..n as u64);
            let accepters: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);

            // walk the permutation student by student
            let mut accepted = 0u64;
            let mut t = 0u64;
            for (position, &student) in order.iter().enumerate() {
                if accepted >= seats {
                    break;
                }
                if accepters[student] {
                    accepted += 1;
                    t = position as u64 + 1;
                }
            }
            if accepted < seats {
                t = n as u64;
            }
            let accepters_below: usize = order
                .iter()
                .take(t as usize - 1)
                .filter(|&&student| accepters[student])
                .count();

            // the induced pattern must agree
            let pattern = OrderingPattern::new(
                order
                    .iter()
                    .map(|&student| {
                        if accepters[student] {
                            StudentType::Accepter
                        } else {
                            StudentType::Refuser
                        }
                    })
                    .collect(),
            );
            let result = run_waitlist(&pattern, seats);
            assert_eq!(result.t_last_offer, t);
            assert_eq!(result.undersubscribed, accepted < seats);
            let report = shares(&result, &pattern).unwrap();
            assert_eq!(report.n_w1, t - 1);
            if t > 1 {
                assert_eq!(
                    report.w1,
                    Some(crate::rational::big_rat(
                        BigUint::from(accepters_below),
                        BigUint::from(t - 1)
                    ))
                );
            }
        }
    }
}
