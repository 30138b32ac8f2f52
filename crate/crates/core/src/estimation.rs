//! Instrument derivation from observed lottery records, inverse-probability
//! weights for pooled strata, and Wald / two-stage least squares estimators.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::Zero;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rational::{rat_int, Rational};

/// First-stage differences smaller than this are treated as zero.
pub const FIRST_STAGE_TOLERANCE: f64 = 1e-12;

/// One observed row of real or simulated data. Ranks are 1-based within a
/// stratum; `accepter` is known only in simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudentRecord {
    pub student_id: String,
    pub stratum_id: String,
    pub rank: u64,
    pub offered: bool,
    pub enrolled: bool,
    pub outcome: f64,
    pub accepter: Option<bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Instrument {
    /// First-round offer group, `rank <= s`.
    Z,
    /// Ever-offered group, `rank <= T`.
    V,
    /// Last-offer grouping: `rank < T` vs `rank > T`, rank `T` excluded.
    W,
}

impl Instrument {
    pub fn as_str(self) -> &'static str {
        match self {
            Instrument::Z => "z",
            Instrument::V => "v",
            Instrument::W => "w",
        }
    }
}

impl fmt::Display for Instrument {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoolingMode {
    FixedEffects,
    Reweighting,
}

impl PoolingMode {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolingMode::FixedEffects => "fixed_effects",
            PoolingMode::Reweighting => "reweighting",
        }
    }
}

impl fmt::Display for PoolingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// How per-stratum seat counts are determined.
#[derive(Debug, Clone)]
pub enum SeatSpec {
    /// `s` is the maximum enrolled count over all strata.
    Infer,
    /// Every stratum has the same seat count.
    Uniform(u64),
    /// Explicit per-stratum seat counts.
    PerStratum(BTreeMap<String, u64>),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimationError {
    #[error("stratum {stratum}: duplicate rank {rank}")]
    DuplicateRank { stratum: String, rank: u64 },
    #[error("stratum {stratum}: rank {rank} outside 1..={n}")]
    RankOutOfRange { stratum: String, rank: u64, n: u64 },
    #[error("stratum {stratum}: rank {rank} enrolled without an offer")]
    EnrolledWithoutOffer { stratum: String, rank: u64 },
    #[error("stratum {stratum}: offered ranks are not a contiguous prefix starting at 1")]
    NonPrefixOffers { stratum: String },
    #[error("seat count not supplied and not inferable (no stratum has enrolled students)")]
    AmbiguousSeats,
    #[error("stratum {stratum}: no seat count supplied")]
    MissingSeatCount { stratum: String },
    #[error("stratum {stratum}: {enrolled} enrolled students exceed {seats} seats")]
    TooManyEnrolled {
        stratum: String,
        enrolled: u64,
        seats: u64,
    },
    #[error("stratum {stratum}: an instrument arm is empty")]
    DegenerateStratum { stratum: String },
    #[error("instrument arm {arm} has no observations")]
    EmptyInstrumentArm { arm: u8 },
    #[error("first-stage difference is zero (within 1e-12)")]
    ZeroFirstStage,
    #[error("reweighting mode requires weights")]
    MissingWeights,
    #[error("weights must be strictly positive")]
    NonPositiveWeight,
    #[error("accepter status is missing; balance diagnostics need typed data")]
    MissingTypes,
    #[error("input slices have mismatched lengths")]
    LengthMismatch,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EstimationWarning {
    /// Seats filled but the last offered rank did not enroll; the offer
    /// process guarantees that student is an accepter, so this flags a
    /// recording error.
    AccepterViolation { stratum: String, rank: u64 },
    /// Fewer enrolled students than seats; the last-offer grouping is not
    /// defined for this stratum.
    Undersubscribed { stratum: String },
    /// Fixed effects over a single stratum reduce to plain IV.
    SingleStratumFixedEffects,
    /// Weights combined with fixed effects; the combination is accepted but
    /// not validated against any published scheme.
    WeightedFixedEffectsUnvalidated,
}

impl fmt::Display for EstimationWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimationWarning::AccepterViolation { stratum, rank } => write!(
                f,
                "stratum {stratum}: last offered rank {rank} did not enroll; \
                 that student must be an accepter, check the data"
            ),
            EstimationWarning::Undersubscribed { stratum } => write!(
                f,
                "stratum {stratum}: undersubscribed (fewer enrolled than seats)"
            ),
            EstimationWarning::SingleStratumFixedEffects => {
                f.write_str("single stratum: fixed effects reduce to plain IV")
            }
            EstimationWarning::WeightedFixedEffectsUnvalidated => {
                f.write_str("weights combined with fixed effects: unvalidated combination")
            }
        }
    }
}

/// Per-stratum facts recovered from the records.
#[derive(Debug, Clone, PartialEq)]
pub struct StratumInfo {
    pub stratum_id: String,
    pub n: u64,
    pub seats: u64,
    pub t_last_offer: u64,
    pub enrolled: u64,
    pub undersubscribed: bool,
}

/// Instruments for every record, aligned with the input slice.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivedInstruments {
    pub z: Vec<bool>,
    pub v: Vec<bool>,
    pub w: Vec<i8>,
    /// Index into `strata` for every record.
    pub stratum_index: Vec<usize>,
    pub strata: Vec<StratumInfo>,
    pub warnings: Vec<EstimationWarning>,
}

/// Derive the three instruments from observed records.
///
/// Within each stratum the offered set must be a rank prefix `{1..T}`; `T` is
/// recovered as the maximum offered rank and `Z` from the seat count, which
/// is supplied or inferred as the maximum enrolled count over strata.
pub fn derive_instruments(
    records: &[StudentRecord],
    seats: &SeatSpec,
) -> Result<DerivedInstruments, EstimationError> {
    struct RawStratum {
        indices: Vec<usize>,
        n: u64,
        t: u64,
        enrolled: u64,
        last_offered_enrolled: bool,
    }

    let mut groups: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, record) in records.iter().enumerate() {
        groups
            .entry(record.stratum_id.as_str())
            .or_default()
            .push(i);
    }

    let mut raw: Vec<(String, RawStratum)> = Vec::with_capacity(groups.len());
    for (stratum, indices) in groups {
        let n = indices.len() as u64;
        let mut seen = vec![false; indices.len()];
        let mut offered_count = 0u64;
        let mut enrolled_count = 0u64;
        let mut t = 0u64;
        let mut last_offered_enrolled = false;
        for &i in &indices {
            let record = &records[i];
            if record.rank < 1 || record.rank > n {
                return Err(EstimationError::RankOutOfRange {
                    stratum: stratum.to_string(),
                    rank: record.rank,
                    n,
                });
            }
            let slot = (record.rank - 1) as usize;
            if seen[slot] {
                return Err(EstimationError::DuplicateRank {
                    stratum: stratum.to_string(),
                    rank: record.rank,
                });
            }
            seen[slot] = true;
            if record.enrolled && !record.offered {
                return Err(EstimationError::EnrolledWithoutOffer {
                    stratum: stratum.to_string(),
                    rank: record.rank,
                });
            }
            if record.offered {
                offered_count += 1;
                if record.rank > t {
                    t = record.rank;
                    last_offered_enrolled = record.enrolled;
                }
            }
            enrolled_count += u64::from(record.enrolled);
        }
        // with distinct ranks, "offered = {1..t}" is exactly "max = count"
        if offered_count == 0 || t != offered_count {
            return Err(EstimationError::NonPrefixOffers {
                stratum: stratum.to_string(),
            });
        }
        raw.push((
            stratum.to_string(),
            RawStratum {
                indices,
                n,
                t,
                enrolled: enrolled_count,
                last_offered_enrolled,
            },
        ));
    }

    let inferred_seats = raw.iter().map(|(_, r)| r.enrolled).max().unwrap_or(0);

    let mut z = vec![false; records.len()];
    let mut v = vec![false; records.len()];
    let mut w = vec![0i8; records.len()];
    let mut stratum_index = vec![0usize; records.len()];
    let mut strata = Vec::with_capacity(raw.len());
    let mut warnings = Vec::new();

    for (k, (stratum_id, stratum)) in raw.into_iter().enumerate() {
        let seats_k = match seats {
            SeatSpec::Uniform(s) => *s,
            SeatSpec::PerStratum(map) => {
                *map.get(&stratum_id)
                    .ok_or_else(|| EstimationError::MissingSeatCount {
                        stratum: stratum_id.clone(),
                    })?
            }
            SeatSpec::Infer => {
                if inferred_seats == 0 {
                    return Err(EstimationError::AmbiguousSeats);
                }
                inferred_seats
            }
        };
        if stratum.enrolled > seats_k {
            return Err(EstimationError::TooManyEnrolled {
                stratum: stratum_id,
                enrolled: stratum.enrolled,
                seats: seats_k,
            });
        }
        let undersubscribed = stratum.enrolled < seats_k;
        if undersubscribed {
            warnings.push(EstimationWarning::Undersubscribed {
                stratum: stratum_id.clone(),
            });
        } else if !stratum.last_offered_enrolled {
            warnings.push(EstimationWarning::AccepterViolation {
                stratum: stratum_id.clone(),
                rank: stratum.t,
            });
        }

        for &i in &stratum.indices {
            let rank = records[i].rank;
            z[i] = rank <= seats_k;
            v[i] = rank <= stratum.t;
            w[i] = if rank < stratum.t {
                1
            } else if rank == stratum.t && !undersubscribed {
                -1
            } else {
                0
            };
            stratum_index[i] = k;
        }

        strata.push(StratumInfo {
            stratum_id,
            n: stratum.n,
            seats: seats_k,
            t_last_offer: stratum.t,
            enrolled: stratum.enrolled,
            undersubscribed,
        });
    }

    Ok(DerivedInstruments {
        z,
        v,
        w,
        stratum_index,
        strata,
        warnings,
    })
}

/// One record selected into an analysis sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SelectedRow {
    /// Index into the original record slice.
    pub index: usize,
    /// Compact stratum index into [`InstrumentSelection::stratum_ids`].
    pub stratum: usize,
    /// Instrument value of this row.
    pub value: bool,
}

/// The rows entering an analysis for one instrument, with exclusions applied.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentSelection {
    pub instrument: Instrument,
    pub rows: Vec<SelectedRow>,
    /// Record indices excluded with instrument value `-1`.
    pub excluded: Vec<usize>,
    pub stratum_ids: Vec<String>,
    /// Strata dropped entirely (undersubscribed, for the last-offer grouping).
    pub skipped_strata: Vec<String>,
}

/// Select the analysis rows for one instrument. For the last-offer grouping
/// this drops the rank-`T` student of every filled stratum and refuses
/// strata whose last offer reached the final rank (undersubscribed lotteries
/// and lotteries with no strictly-later ranks left to compare against).
pub fn instrument_selection(
    derived: &DerivedInstruments,
    instrument: Instrument,
) -> InstrumentSelection {
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    let mut skipped_strata = Vec::new();
    let mut stratum_ids = Vec::new();
    let mut compact = vec![usize::MAX; derived.strata.len()];

    for (k, info) in derived.strata.iter().enumerate() {
        if instrument == Instrument::W && (info.undersubscribed || info.t_last_offer == info.n) {
            skipped_strata.push(info.stratum_id.clone());
            continue;
        }
        compact[k] = stratum_ids.len();
        stratum_ids.push(info.stratum_id.clone());
    }

    for (i, &k) in derived.stratum_index.iter().enumerate() {
        let stratum = compact[k];
        if stratum == usize::MAX {
            continue;
        }
        let value = match instrument {
            Instrument::Z => derived.z[i],
            Instrument::V => derived.v[i],
            Instrument::W => match derived.w[i] {
                1 => true,
                0 => false,
                _ => {
                    excluded.push(i);
                    continue;
                }
            },
        };
        rows.push(SelectedRow {
            index: i,
            stratum,
            value,
        });
    }

    InstrumentSelection {
        instrument,
        rows,
        excluded,
        stratum_ids,
        skipped_strata,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedRow {
    pub index: usize,
    pub stratum: usize,
    pub value: bool,
    pub weight: Rational,
}

/// An instrument sample with per-row weights. Weights are exact rationals;
/// [`WeightedInstrumentSample::weights_f64`] converts at the regression
/// boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedInstrumentSample {
    pub pooling_mode: PoolingMode,
    pub rows: Vec<WeightedRow>,
    pub excluded: Vec<usize>,
}

impl WeightedInstrumentSample {
    pub fn weights_f64(&self) -> Vec<f64> {
        self.rows
            .iter()
            .map(|row| crate::rational::to_f64(&row.weight))
            .collect()
    }
}

/// Inverse-probability weights that equalize instrument-arm shares across
/// pooled strata: a row with instrument value `b` in stratum `k` is weighted
/// by the pooled share of value-`b` rows divided by the stratum-`k` share.
pub fn ipw_weights(
    selection: &InstrumentSelection,
) -> Result<WeightedInstrumentSample, EstimationError> {
    if selection.rows.is_empty() {
        return Err(EstimationError::EmptyInstrumentArm { arm: 1 });
    }
    let strata = selection.stratum_ids.len();
    let mut ones = vec![0u64; strata];
    let mut totals = vec![0u64; strata];
    for row in &selection.rows {
        totals[row.stratum] += 1;
        ones[row.stratum] += u64::from(row.value);
    }

    let mut pooled_ones = 0u64;
    let mut pooled_total = 0u64;
    for k in 0..strata {
        if ones[k] == 0 || ones[k] == totals[k] {
            return Err(EstimationError::DegenerateStratum {
                stratum: selection.stratum_ids[k].clone(),
            });
        }
        pooled_ones += ones[k];
        pooled_total += totals[k];
    }

    // weight for value-1 rows in stratum k:
    //   (pooled_ones / pooled_total) / (ones_k / total_k)
    let weight_for = |count_k: u64, total_k: u64, pooled_count: u64| {
        (rat_int(pooled_count) / rat_int(pooled_total)) / (rat_int(count_k) / rat_int(total_k))
    };
    let mut one_weight = Vec::with_capacity(strata);
    let mut zero_weight = Vec::with_capacity(strata);
    for k in 0..strata {
        one_weight.push(weight_for(ones[k], totals[k], pooled_ones));
        zero_weight.push(weight_for(
            totals[k] - ones[k],
            totals[k],
            pooled_total - pooled_ones,
        ));
    }

    let rows = selection
        .rows
        .iter()
        .map(|row| WeightedRow {
            index: row.index,
            stratum: row.stratum,
            value: row.value,
            weight: if row.value {
                one_weight[row.stratum].clone()
            } else {
                zero_weight[row.stratum].clone()
            },
        })
        .collect();

    Ok(WeightedInstrumentSample {
        pooling_mode: PoolingMode::Reweighting,
        rows,
        excluded: selection.excluded.clone(),
    })
}

/// The same sample with unit weights (naive pooling).
pub fn unit_weights(selection: &InstrumentSelection) -> WeightedInstrumentSample {
    WeightedInstrumentSample {
        pooling_mode: PoolingMode::FixedEffects,
        rows: selection
            .rows
            .iter()
            .map(|row| WeightedRow {
                index: row.index,
                stratum: row.stratum,
                value: row.value,
                weight: rat_int(1),
            })
            .collect(),
        excluded: selection.excluded.clone(),
    }
}

/// Binary-instrument Wald estimator:
/// `(mean y | z=1 - mean y | z=0) / (mean d | z=1 - mean d | z=0)`,
/// optionally weighted.
pub fn wald(
    y: &[f64],
    d: &[bool],
    z: &[bool],
    weights: Option<&[f64]>,
) -> Result<f64, EstimationError> {
    let n = y.len();
    if d.len() != n || z.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(EstimationError::LengthMismatch);
    }
    let mut mass = [0.0f64; 2];
    let mut sum_y = [0.0f64; 2];
    let mut sum_d = [0.0f64; 2];
    for i in 0..n {
        let weight = weights.map_or(1.0, |w| w[i]);
        if weight <= 0.0 {
            return Err(EstimationError::NonPositiveWeight);
        }
        let arm = usize::from(z[i]);
        mass[arm] += weight;
        sum_y[arm] += weight * y[i];
        sum_d[arm] += weight * f64::from(d[i]);
    }
    for (arm, &m) in mass.iter().enumerate() {
        if m == 0.0 {
            return Err(EstimationError::EmptyInstrumentArm { arm: arm as u8 });
        }
    }
    let first_stage = sum_d[1] / mass[1] - sum_d[0] / mass[0];
    if first_stage.abs() < FIRST_STAGE_TOLERANCE {
        return Err(EstimationError::ZeroFirstStage);
    }
    Ok((sum_y[1] / mass[1] - sum_y[0] / mass[0]) / first_stage)
}

/// Estimate returned by [`tsls`], JSON-ready.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub estimator: String,
    pub instrument: String,
    pub pooling: String,
    pub point_estimate: f64,
    pub std_error: Option<f64>,
    /// The formula behind `std_error`; always the conventional homoskedastic
    /// IV expression here.
    pub std_error_kind: String,
    pub n_used: usize,
    pub n_excluded: usize,
    pub warnings: Vec<String>,
}

/// Two-stage least squares with a single binary instrument and a single
/// binary treatment, pooling strata either with fixed effects (within-stratum
/// demeaning, the partialling-out equivalent of stratum dummies) or by
/// weighting (weighted IV with an intercept and no stratum terms).
#[allow(clippy::too_many_arguments)]
pub fn tsls(
    instrument: Instrument,
    y: &[f64],
    d: &[bool],
    z: &[bool],
    strata: &[usize],
    mode: PoolingMode,
    weights: Option<&[f64]>,
    n_excluded: usize,
) -> Result<EstimateReport, EstimationError> {
    let n = y.len();
    if d.len() != n || z.len() != n || strata.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(EstimationError::LengthMismatch);
    }
    if let Some(w) = weights {
        if w.iter().any(|&x| x <= 0.0) {
            return Err(EstimationError::NonPositiveWeight);
        }
    }

    let mut warnings = Vec::new();
    let d_f64: Vec<f64> = d.iter().map(|&b| f64::from(b)).collect();
    let z_f64: Vec<f64> = z.iter().map(|&b| f64::from(b)).collect();

    let (y_c, d_c, z_c, used_weights, df) = match mode {
        PoolingMode::FixedEffects => {
            if weights.is_some() {
                warnings.push(EstimationWarning::WeightedFixedEffectsUnvalidated);
            }
            let groups = strata.iter().copied().max().map_or(0, |m| m + 1);
            let mut present = vec![false; groups];
            for &g in strata {
                present[g] = true;
            }
            let distinct = present.iter().filter(|&&p| p).count();
            if distinct == 1 {
                warnings.push(EstimationWarning::SingleStratumFixedEffects);
            }
            let y_c = demean_within(y, strata, groups, weights);
            let d_c = demean_within(&d_f64, strata, groups, weights);
            let z_c = demean_within(&z_f64, strata, groups, weights);
            let df = n as i64 - distinct as i64 - 1;
            (y_c, d_c, z_c, weights, df)
        }
        PoolingMode::Reweighting => {
            let w = weights.ok_or(EstimationError::MissingWeights)?;
            let y_c = demean_grand(y, w);
            let d_c = demean_grand(&d_f64, w);
            let z_c = demean_grand(&z_f64, w);
            (y_c, d_c, z_c, weights, n as i64 - 2)
        }
    };

    let mut s_zd = 0.0;
    let mut s_zy = 0.0;
    let mut s_zz = 0.0;
    for i in 0..n {
        let w = used_weights.map_or(1.0, |w| w[i]);
        s_zd += w * z_c[i] * d_c[i];
        s_zy += w * z_c[i] * y_c[i];
        s_zz += w * z_c[i] * z_c[i];
    }
    if s_zd.abs() < FIRST_STAGE_TOLERANCE {
        return Err(EstimationError::ZeroFirstStage);
    }
    let beta = s_zy / s_zd;

    let std_error = if df >= 1 {
        let mut ssr = 0.0;
        for i in 0..n {
            let w = used_weights.map_or(1.0, |w| w[i]);
            let e = y_c[i] - beta * d_c[i];
            ssr += w * e * e;
        }
        let sigma2 = ssr / df as f64;
        Some((sigma2 * s_zz / (s_zd * s_zd)).sqrt())
    } else {
        None
    };

    Ok(EstimateReport {
        estimator: "tsls".to_string(),
        instrument: instrument.as_str().to_string(),
        pooling: mode.as_str().to_string(),
        point_estimate: beta,
        std_error,
        std_error_kind: "homoskedastic_iv".to_string(),
        n_used: n,
        n_excluded,
        warnings: warnings.iter().map(|w| w.to_string()).collect(),
    })
}

fn demean_within(
    values: &[f64],
    strata: &[usize],
    groups: usize,
    weights: Option<&[f64]>,
) -> Vec<f64> {
    let mut mass = vec![0.0f64; groups];
    let mut sums = vec![0.0f64; groups];
    for (i, &g) in strata.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        mass[g] += w;
        sums[g] += w * values[i];
    }
    values
        .iter()
        .zip(strata)
        .map(|(&v, &g)| v - sums[g] / mass[g])
        .collect()
}

fn demean_grand(values: &[f64], weights: &[f64]) -> Vec<f64> {
    let mass: f64 = weights.iter().sum();
    let mean = values
        .iter()
        .zip(weights)
        .map(|(&v, &w)| v * w)
        .sum::<f64>()
        / mass;
    values.iter().map(|&v| v - mean).collect()
}

/// Weighted accepter shares by instrument arm: `(share | value = 1,
/// share | value = 0)`, exact. Requires accepter status on every sampled row.
pub fn balance_diagnostic(
    records: &[StudentRecord],
    sample: &WeightedInstrumentSample,
) -> Result<(Rational, Rational), EstimationError> {
    let mut mass = [Rational::zero(), Rational::zero()];
    let mut accepter_mass = [Rational::zero(), Rational::zero()];
    for row in &sample.rows {
        let accepter = records[row.index]
            .accepter
            .ok_or(EstimationError::MissingTypes)?;
        let arm = usize::from(row.value);
        mass[arm] += &row.weight;
        if accepter {
            accepter_mass[arm] += &row.weight;
        }
    }
    for (arm, m) in mass.iter().enumerate() {
        if m.is_zero() {
            return Err(EstimationError::EmptyInstrumentArm { arm: arm as u8 });
        }
    }
    Ok((
        accepter_mass[1].clone() / mass[1].clone(),
        accepter_mass[0].clone() / mass[0].clone(),
    ))
}
