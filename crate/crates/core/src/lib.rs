//! Analysis toolkit for waiting-list randomizations.
//!
//! When a treatment is offered down a randomly ordered waiting list until all
//! seats are filled, "got an offer" is not a valid treatment group: the last
//! student to receive an offer is always an accepter, so the offered group is
//! mechanically enriched in accepters. This crate implements the corrected
//! grouping based on the last-offer rank `T` (treatment `rank < T`, control
//! `rank > T`, the rank-`T` student excluded), together with:
//!
//! - exact closed-form quantities: the distribution of `T`, expected accepter
//!   shares, and an exact test of oversubscription ([`combinatorics`]);
//! - deterministic offer mechanics and instrument construction ([`waitlist`]);
//! - an exhaustive-enumeration oracle used as ground truth ([`oracle`]);
//! - inverse-probability weights for pooled lotteries plus Wald and 2SLS
//!   estimators ([`estimation`]);
//! - a seeded, replication-parallel Monte Carlo harness ([`montecarlo`]).
//!
//! All probabilities and shares are computed in exact rational arithmetic;
//! floating point appears only at presentation and regression boundaries.

pub mod combinatorics;
pub mod estimation;
pub mod montecarlo;
pub mod oracle;
pub mod rational;
pub mod waitlist;

pub use combinatorics::{
    binom, exact_test_pvalue, exact_test_tail_pvalue, expected_share, prob_t, rejects_null,
    variance_ratio, CombinatoricsError, LotteryParams, DEFAULT_ALPHA,
};
pub use estimation::{
    balance_diagnostic, derive_instruments, instrument_selection, ipw_weights, tsls, unit_weights,
    wald, DerivedInstruments, EstimateReport, EstimationError, EstimationWarning, Instrument,
    InstrumentSelection, PoolingMode, SeatSpec, SelectedRow, StratumInfo, StudentRecord,
    WeightedInstrumentSample, WeightedRow,
};
pub use montecarlo::{
    precision_prediction, run_mc, simulate_stratum, McConfig, McError, McResultTable, McRow,
    DEFAULT_SEED, RNG_NAME,
};
pub use oracle::{
    enumerate_patterns, enumerate_patterns_with_cap, oracle_null_t_distribution, oracle_summary,
    oracle_summary_with_cap, EnumerationSummary, OracleError, PatternOutcome,
    DEFAULT_ENUMERATION_CAP,
};
pub use rational::{rat, to_f64, Rational};
pub use waitlist::{
    draw_ordering, run_waitlist, shares, AssignmentResult, OrderingPattern, ShareReport,
    StudentType, WaitlistError,
};
