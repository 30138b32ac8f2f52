//! Deterministic mechanics of one waiting-list lottery.
//!
//! Offers go down the list in rank order; each accepter takes a seat, each
//! refuser passes it on, and offers stop once all seats are filled. Outcomes
//! depend only on where accepters and refusers sit in the ranking, so a
//! lottery is represented by its type pattern rather than a full permutation
//! of students.

use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::combinatorics::LotteryParams;
use crate::rational::{big_rat, Rational};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WaitlistError {
    #[error("assignment covers {assignment} ranks but the pattern has {pattern}")]
    MismatchedInputs { assignment: usize, pattern: usize },
    #[error("unknown student type {0:?}, expected 'A' or 'R'")]
    UnknownTypeChar(char),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudentType {
    Accepter,
    Refuser,
}

/// Types by waitlist rank, 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrderingPattern {
    types: Vec<StudentType>,
}

impl OrderingPattern {
    pub fn new(types: Vec<StudentType>) -> Self {
        Self { types }
    }

    /// Pattern of length `n` with accepters at the given 1-based ranks.
    pub fn from_accepter_ranks(n: u64, accepter_ranks: &[u64]) -> Self {
        let mut types = vec![StudentType::Refuser; n as usize];
        for &rank in accepter_ranks {
            assert!(rank >= 1 && rank <= n, "rank {rank} outside 1..={n}");
            types[(rank - 1) as usize] = StudentType::Accepter;
        }
        Self { types }
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    pub fn accepter_count(&self) -> u64 {
        self.types
            .iter()
            .filter(|t| **t == StudentType::Accepter)
            .count() as u64
    }

    /// Type at a 1-based rank.
    pub fn type_at(&self, rank: u64) -> StudentType {
        self.types[(rank - 1) as usize]
    }

    pub fn types(&self) -> &[StudentType] {
        &self.types
    }
}

impl fmt::Display for OrderingPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.types {
            f.write_str(match t {
                StudentType::Accepter => "A",
                StudentType::Refuser => "R",
            })?;
        }
        Ok(())
    }
}

impl FromStr for OrderingPattern {
    type Err = WaitlistError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let types = s
            .chars()
            .map(|c| match c {
                'A' | 'a' => Ok(StudentType::Accepter),
                'R' | 'r' => Ok(StudentType::Refuser),
                other => Err(WaitlistError::UnknownTypeChar(other)),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self::new(types))
    }
}

/// Outcome of running the offer process over one pattern.
///
/// All per-rank vectors are indexed by rank minus one. `z` marks the
/// first-round offer group (`rank <= s`), `v` the ever-offered group
/// (`rank <= T`), and `w` the corrected grouping: `1` strictly below the
/// last-offer rank, `-1` at the last-offer rank (excluded from analysis),
/// `0` above it. When the pattern holds fewer accepters than seats the
/// lottery is flagged [`AssignmentResult::undersubscribed`]: every student is
/// offered, `t_last_offer` is set to `n` by convention, and nobody is marked
/// `-1` because the last rank need not be an accepter.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AssignmentResult {
    pub t_last_offer: u64,
    pub offered: Vec<bool>,
    pub treated: Vec<bool>,
    pub z: Vec<bool>,
    pub v: Vec<bool>,
    pub w: Vec<i8>,
    pub seats_filled: u64,
    pub undersubscribed: bool,
}

/// Accepter shares of the `w = 1` and `w = 0` groups, `None` when a group is
/// empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ShareReport {
    pub w1: Option<Rational>,
    pub w0: Option<Rational>,
    pub n_w1: u64,
    pub n_w0: u64,
    pub n_excluded: u64,
}

/// Run the offer process: rank `i` receives an offer exactly when fewer than
/// `seats` accepters sit at ranks below `i`.
pub fn run_waitlist(pattern: &OrderingPattern, seats: u64) -> AssignmentResult {
    let n = pattern.len() as u64;
    assert!(
        seats >= 1 && seats < n,
        "need 1 <= seats < n, got seats={seats}, n={n}"
    );

    let mut offered = vec![false; n as usize];
    let mut treated = vec![false; n as usize];
    let mut accepted = 0u64;
    let mut last_acceptance = 0u64;

    for rank in 1..=n {
        if accepted >= seats {
            break;
        }
        let idx = (rank - 1) as usize;
        offered[idx] = true;
        if pattern.type_at(rank) == StudentType::Accepter {
            treated[idx] = true;
            accepted += 1;
            last_acceptance = rank;
        }
    }

    let undersubscribed = accepted < seats;
    let t_last_offer = if undersubscribed { n } else { last_acceptance };

    let z = (1..=n).map(|rank| rank <= seats).collect();
    let v = (1..=n).map(|rank| rank <= t_last_offer).collect();
    let w = (1..=n)
        .map(|rank| {
            if rank < t_last_offer {
                1
            } else if rank == t_last_offer && !undersubscribed {
                -1
            } else {
                0
            }
        })
        .collect();

    AssignmentResult {
        t_last_offer,
        offered,
        treated,
        z,
        v,
        w,
        seats_filled: accepted,
        undersubscribed,
    }
}

/// Exact accepter shares within the `w = 1` and `w = 0` groups.
pub fn shares(
    result: &AssignmentResult,
    pattern: &OrderingPattern,
) -> Result<ShareReport, WaitlistError> {
    if result.w.len() != pattern.len() {
        return Err(WaitlistError::MismatchedInputs {
            assignment: result.w.len(),
            pattern: pattern.len(),
        });
    }

    let mut counts = [0u64; 3]; // group sizes for w = 1, 0, -1
    let mut accepters = [0u64; 2]; // accepter counts for w = 1, 0
    for (idx, &w) in result.w.iter().enumerate() {
        let is_accepter = pattern.types()[idx] == StudentType::Accepter;
        match w {
            1 => {
                counts[0] += 1;
                accepters[0] += u64::from(is_accepter);
            }
            0 => {
                counts[1] += 1;
                accepters[1] += u64::from(is_accepter);
            }
            _ => counts[2] += 1,
        }
    }

    let share = |acc: u64, n: u64| (n > 0).then(|| big_rat(BigUint::from(acc), BigUint::from(n)));
    Ok(ShareReport {
        w1: share(accepters[0], counts[0]),
        w0: share(accepters[1], counts[1]),
        n_w1: counts[0],
        n_w0: counts[1],
        n_excluded: counts[2],
    })
}

/// Uniform draw over the `binom(n, a1)` type patterns, via a uniform shuffle
/// of `a1` accepter and `n - a1` refuser labels.
///
/// Panics if `params` carries no accepter count.
pub fn draw_ordering<R: Rng + ?Sized>(params: &LotteryParams, rng: &mut R) -> OrderingPattern {
    let a1 = params
        .a1()
        .expect("draw_ordering needs a known accepter count");
    let n = params.n();
    let mut types = Vec::with_capacity(n as usize);
    types.extend(std::iter::repeat_n(StudentType::Accepter, a1 as usize));
    types.extend(std::iter::repeat_n(StudentType::Refuser, (n - a1) as usize));
    types.shuffle(rng);
    OrderingPattern::new(types)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::rat;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashMap;

    fn pattern(s: &str) -> OrderingPattern {
        s.parse().unwrap()
    }

    #[test]
    fn worked_example_refuser_first() {
        let p = pattern("RAARAR");
        let result = run_waitlist(&p, 2);
        assert_eq!(result.t_last_offer, 3);
        assert_eq!(result.w, vec![1, 1, -1, 0, 0, 0]);
        assert_eq!(result.z, vec![true, true, false, false, false, false]);
        assert_eq!(result.v, vec![true, true, true, false, false, false]);
        assert_eq!(result.treated, vec![false, true, true, false, false, false]);
        assert_eq!(result.seats_filled, 2);
        assert!(!result.undersubscribed);

        let report = shares(&result, &p).unwrap();
        assert_eq!(report.w1, Some(rat(1, 2)));
        assert_eq!(report.w0, Some(rat(1, 3)));
        assert_eq!(report.n_excluded, 1);
    }

    #[test]
    fn all_accepters_stop_at_seat_count() {
        let p = pattern("AAAAAA");
        let result = run_waitlist(&p, 2);
        assert_eq!(result.t_last_offer, 2);
        assert_eq!(result.offered, vec![true, true, false, false, false, false]);
        let report = shares(&result, &p).unwrap();
        assert_eq!(report.w1, Some(rat(1, 1)));
        assert_eq!(report.w0, Some(rat(1, 1)));
    }

    #[test]
    fn trailing_accepters_exhaust_the_list() {
        let p = pattern("RRRRAA");
        let result = run_waitlist(&p, 2);
        assert_eq!(result.t_last_offer, 6);
        assert!(result.offered.iter().all(|&o| o));
        assert!(!result.undersubscribed);
        let report = shares(&result, &p).unwrap();
        // ranks 1..5 hold one accepter out of five
        assert_eq!(report.w1, Some(rat(1, 5)));
        assert_eq!(report.w0, None);
        assert_eq!(report.n_excluded, 1);
    }

    #[test]
    fn table_column_one() {
        let p = pattern("AAAARR");
        let result = run_waitlist(&p, 2);
        assert_eq!(result.t_last_offer, 2);
        let report = shares(&result, &p).unwrap();
        assert_eq!(report.w1, Some(rat(1, 1)));
        assert_eq!(report.w0, Some(rat(1, 2)));
        assert_eq!((report.n_w1, report.n_w0), (1, 4));
    }

    #[test]
    fn undersubscribed_lottery_is_flagged() {
        let p = pattern("RARRRR");
        let result = run_waitlist(&p, 2);
        assert!(result.undersubscribed);
        assert_eq!(result.t_last_offer, 6);
        assert_eq!(result.seats_filled, 1);
        assert!(result.offered.iter().all(|&o| o));
        assert!(result.w.iter().all(|&w| w != -1));
    }

    #[test]
    fn boundary_accepters_equal_seats() {
        // exactly as many accepters as seats: seats still fill
        let p = pattern("RARARR");
        let result = run_waitlist(&p, 2);
        assert!(!result.undersubscribed);
        assert_eq!(result.t_last_offer, 4);
        assert_eq!(result.seats_filled, 2);
    }

    #[test]
    fn share_report_rejects_mismatched_inputs() {
        let p = pattern("RAARAR");
        let result = run_waitlist(&p, 2);
        let other = pattern("AAR");
        assert!(matches!(
            shares(&result, &other),
            Err(WaitlistError::MismatchedInputs { .. })
        ));
    }

    #[test]
    fn draw_is_deterministic_for_a_fixed_seed() {
        let params = LotteryParams::with_accepters(6, 2, 4).unwrap();
        let a = draw_ordering(&params, &mut ChaCha8Rng::seed_from_u64(7));
        let b = draw_ordering(&params, &mut ChaCha8Rng::seed_from_u64(7));
        assert_eq!(a, b);
    }

    #[test]
    fn draw_of_degenerate_pattern_is_unique() {
        let params = LotteryParams::with_accepters(6, 2, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(draw_ordering(&params, &mut rng), pattern("AAAAAA"));
    }

    #[test]
    fn draw_frequencies_are_uniform_over_patterns() {
        let params = LotteryParams::with_accepters(6, 2, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(20_240_115);
        let mut freq: HashMap<String, u64> = HashMap::new();
        for _ in 0..15_000 {
            let p = draw_ordering(&params, &mut rng);
            *freq.entry(p.to_string()).or_default() += 1;
        }
        assert_eq!(freq.len(), 15);
        for (pattern, count) in freq {
            assert!(
                (count as i64 - 1000).unsigned_abs() <= 120,
                "pattern {pattern} drawn {count} times"
            );
        }
    }

    /// Student-level simulator: offers walk an explicit permutation of typed
    /// students. Used to confirm the type-pattern reduction.
    fn simulate_students(
        order: &[usize],
        accepters: &[bool],
        seats: u64,
    ) -> (u64, Option<Rational>, Option<Rational>) {
        let n = order.len();
        let mut accepted = 0u64;
        let mut t = 0u64;
        for (pos, &student) in order.iter().enumerate() {
            if accepted >= seats {
                break;
            }
            if accepters[student] {
                accepted += 1;
                t = (pos + 1) as u64;
            }
        }
        if accepted < seats {
            t = n as u64;
        }
        let undersubscribed = accepted < seats;
        let mut group = [0u64; 2];
        let mut acc = [0u64; 2];
        for (pos, &student) in order.iter().enumerate() {
            let rank = (pos + 1) as u64;
            let slot = if rank < t {
                Some(0)
            } else if rank == t && !undersubscribed {
                None
            } else {
                Some(1)
            };
            if let Some(slot) = slot {
                group[slot] += 1;
                acc[slot] += u64::from(accepters[student]);
            }
        }
        let share = |a: u64, g: u64| (g > 0).then(|| rat(a as i64, g as i64));
        (t, share(acc[0], group[0]), share(acc[1], group[1]))
    }

    proptest! {
        #[test]
        fn pattern_reduction_matches_student_permutation(
            n in 3usize..10,
            seats in 1u64..4,
            seed in any::<u64>(),
        ) {
            prop_assume!(seats < n as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let accepters: Vec<bool> = (0..n).map(|_| rng.random_bool(0.6)).collect();
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut rng);

            let types: Vec<StudentType> = order
                .iter()
                .map(|&student| if accepters[student] {
                    StudentType::Accepter
                } else {
                    StudentType::Refuser
                })
                .collect();
            let p = OrderingPattern::new(types);
            let result = run_waitlist(&p, seats);
            let report = shares(&result, &p).unwrap();

            let (t, w1, w0) = simulate_students(&order, &accepters, seats);
            prop_assert_eq!(result.t_last_offer, t);
            prop_assert_eq!(report.w1, w1);
            prop_assert_eq!(report.w0, w0);
        }

        #[test]
        fn last_offer_rank_stays_in_bounds(
            n in 3u64..12,
            seats in 1u64..5,
            seed in any::<u64>(),
        ) {
            prop_assume!(seats < n);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for a1 in seats..=n {
                let params = LotteryParams::with_accepters(n, seats, a1).unwrap();
                let p = draw_ordering(&params, &mut rng);
                let result = run_waitlist(&p, seats);
                prop_assert!(!result.undersubscribed);
                prop_assert!(result.t_last_offer >= seats);
                prop_assert!(result.t_last_offer <= seats + (n - a1));
                // exactly one excluded student when seats fill
                prop_assert_eq!(result.w.iter().filter(|&&w| w == -1).count(), 1);
                let report = shares(&result, &p).unwrap();
                prop_assert!(report.n_w0 >= a1 - seats);
            }
        }
    }
}
