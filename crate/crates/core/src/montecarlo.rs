//! Replication harness for the lottery data-generating process.
//!
//! Each replication simulates a set of lottery strata, derives the three
//! instruments from the simulated records, and computes five pooled 2SLS
//! coefficients: the ever-offered grouping with fixed effects and with
//! reweighting, the last-offer grouping with fixed effects and with
//! reweighting, and the first-round-offer grouping (for which the two pooling
//! schemes coincide when the instrument share is equal across strata — the
//! harness verifies that condition and falls back to fixed effects).
//!
//! Replications draw from per-replication ChaCha8 streams derived from one
//! master seed, so results are bit-identical for any worker count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::combinatorics::{variance_ratio, CombinatoricsError, LotteryParams};
use crate::estimation::{
    derive_instruments, instrument_selection, ipw_weights, tsls, EstimationError, Instrument,
    PoolingMode, SeatSpec, StudentRecord,
};
use crate::waitlist::{draw_ordering, run_waitlist};

/// Arbitrary fixed default seed, recorded in every report.
pub const DEFAULT_SEED: u64 = 271_828;

/// Name of the pseudo-random generator, recorded in every report.
pub const RNG_NAME: &str = "chacha8";

const ESTIMATOR_COUNT: usize = 5;

struct EstimatorSpec {
    id: &'static str,
    label: &'static str,
    instrument: Instrument,
    pooling: PoolingMode,
}

const ESTIMATORS: [EstimatorSpec; ESTIMATOR_COUNT] = [
    EstimatorSpec {
        id: "v_fixed_effects",
        label: "Instrument V, fixed effects",
        instrument: Instrument::V,
        pooling: PoolingMode::FixedEffects,
    },
    EstimatorSpec {
        id: "v_reweighting",
        label: "Instrument V, reweighting",
        instrument: Instrument::V,
        pooling: PoolingMode::Reweighting,
    },
    EstimatorSpec {
        id: "w_fixed_effects",
        label: "Instrument W, fixed effects",
        instrument: Instrument::W,
        pooling: PoolingMode::FixedEffects,
    },
    EstimatorSpec {
        id: "w_reweighting",
        label: "Instrument W, reweighting",
        instrument: Instrument::W,
        pooling: PoolingMode::Reweighting,
    },
    EstimatorSpec {
        id: "z",
        label: "Instrument Z",
        instrument: Instrument::Z,
        pooling: PoolingMode::FixedEffects,
    },
];

#[derive(Debug, Error)]
pub enum McError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("replication {index} failed: {source}")]
    Replication {
        index: u64,
        #[source]
        source: EstimationError,
    },
    #[error(transparent)]
    Params(#[from] CombinatoricsError),
}

/// Parameters of the data-generating process and of the harness.
///
/// Defaults describe strata of 20 students with 15 accepters and 10 seats,
/// potential outcomes `N(0,1)` for refusers and `N(1,1)` for accepters, and
/// a homogeneous treatment effect of `0.2` among accepters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct McConfig {
    pub n_strata: u64,
    pub students_per_stratum: u64,
    pub accepters_per_stratum: u64,
    pub seats: u64,
    pub y0_refuser_mean: f64,
    pub y0_accepter_mean: f64,
    pub y0_sd: f64,
    pub treatment_effect: f64,
    pub replications: u64,
    pub seed: u64,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_strata: 20,
            students_per_stratum: 20,
            accepters_per_stratum: 15,
            seats: 10,
            y0_refuser_mean: 0.0,
            y0_accepter_mean: 1.0,
            y0_sd: 1.0,
            treatment_effect: 0.2,
            replications: 2000,
            seed: DEFAULT_SEED,
        }
    }
}

impl McConfig {
    pub fn validate(&self) -> Result<(), McError> {
        let fail = |msg: String| Err(McError::InvalidConfig(msg));
        if self.n_strata == 0 {
            return fail("n_strata must be at least 1".into());
        }
        if self.students_per_stratum < 2 {
            return fail("students_per_stratum must be at least 2".into());
        }
        if self.accepters_per_stratum > self.students_per_stratum {
            return fail(format!(
                "accepters_per_stratum ({}) exceeds students_per_stratum ({})",
                self.accepters_per_stratum, self.students_per_stratum
            ));
        }
        if self.seats == 0 || self.seats >= self.accepters_per_stratum {
            return fail(format!(
                "seats ({}) must satisfy 1 <= seats < accepters_per_stratum ({})",
                self.seats, self.accepters_per_stratum
            ));
        }
        if self.replications == 0 {
            return fail("replications must be at least 1".into());
        }
        for (name, value) in [
            ("y0_refuser_mean", self.y0_refuser_mean),
            ("y0_accepter_mean", self.y0_accepter_mean),
            ("treatment_effect", self.treatment_effect),
        ] {
            if !value.is_finite() {
                return fail(format!("{name} must be finite"));
            }
        }
        if !self.y0_sd.is_finite() || self.y0_sd < 0.0 {
            return fail("y0_sd must be finite and nonnegative".into());
        }
        Ok(())
    }
}

/// One aggregated estimator row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McRow {
    pub estimator: String,
    pub average: f64,
    /// Standard deviation of the coefficient across replications.
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Aggregated results of a full run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResultTable {
    pub schema_version: u32,
    pub rng: String,
    pub seed: u64,
    pub replications: u64,
    pub rows: Vec<McRow>,
    pub warnings: Vec<String>,
}

impl McResultTable {
    pub fn row(&self, estimator: &str) -> Option<&McRow> {
        self.rows.iter().find(|row| row.estimator == estimator)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }

    pub fn render_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<32} {:>10} {:>10}   {}\n",
            "estimator", "average", "se", "95% CI"
        ));
        for (row, spec) in self.rows.iter().zip(ESTIMATORS.iter()) {
            out.push_str(&format!(
                "{:<32} {:>10.4} {:>10.4}   [{:.4}, {:.4}]\n",
                spec.label, row.average, row.se, row.ci_low, row.ci_high
            ));
        }
        out.push_str(&format!(
            "\nreplications: {}   seed: {}   rng: {}\n",
            self.replications, self.seed, self.rng
        ));
        for warning in &self.warnings {
            out.push_str(&format!("warning: {warning}\n"));
        }
        out
    }
}

fn stream_rng(seed: u64, replication: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replication);
    rng
}

/// Simulate one stratum: draw a uniform ordering, run the offer process, and
/// attach potential outcomes. Only offered accepters enroll; their observed
/// outcome includes the treatment effect.
pub fn simulate_stratum<R: Rng + ?Sized>(
    config: &McConfig,
    stratum_id: &str,
    rng: &mut R,
) -> Vec<StudentRecord> {
    let n = config.students_per_stratum;
    let params = LotteryParams::with_accepters(n, config.seats, config.accepters_per_stratum)
        .expect("validated config");
    let pattern = draw_ordering(&params, rng);
    let assignment = run_waitlist(&pattern, config.seats);
    let noise = Normal::new(0.0, config.y0_sd).expect("validated sd");

    (1..=n)
        .map(|rank| {
            let idx = (rank - 1) as usize;
            let accepter = pattern.type_at(rank) == crate::waitlist::StudentType::Accepter;
            let baseline = if accepter {
                config.y0_accepter_mean
            } else {
                config.y0_refuser_mean
            };
            let y0 = baseline + noise.sample(rng);
            let treated = assignment.treated[idx];
            StudentRecord {
                student_id: format!("{stratum_id}_r{rank:02}"),
                stratum_id: stratum_id.to_string(),
                rank,
                offered: assignment.offered[idx],
                enrolled: treated,
                outcome: if treated {
                    y0 + config.treatment_effect
                } else {
                    y0
                },
                accepter: Some(accepter),
            }
        })
        .collect()
}

fn subset<T: Copy>(values: &[T], rows: &[crate::estimation::SelectedRow]) -> Vec<T> {
    rows.iter().map(|row| values[row.index]).collect()
}

/// One replication: the five coefficients plus whether the first-round-offer
/// share was equal across strata.
fn replicate(
    config: &McConfig,
    replication: u64,
) -> Result<([f64; ESTIMATOR_COUNT], bool), McError> {
    let mut rng = stream_rng(config.seed, replication);
    let mut records = Vec::with_capacity((config.n_strata * config.students_per_stratum) as usize);
    for k in 0..config.n_strata {
        records.extend(simulate_stratum(config, &format!("s{k:03}"), &mut rng));
    }

    let wrap = |source: EstimationError| McError::Replication {
        index: replication,
        source,
    };
    let derived = derive_instruments(&records, &SeatSpec::Uniform(config.seats)).map_err(wrap)?;

    // shares of z = 1 are equal across strata iff s/n is; with per-config
    // constant stratum sizes this always holds, and it is what makes the
    // two pooling schemes coincide for z
    let z_shares_equal = derived
        .strata
        .iter()
        .all(|info| info.seats * derived.strata[0].n == derived.strata[0].seats * info.n);

    let y: Vec<f64> = records.iter().map(|r| r.outcome).collect();
    let d: Vec<bool> = records.iter().map(|r| r.enrolled).collect();

    let mut estimates = [0.0f64; ESTIMATOR_COUNT];
    for (slot, spec) in ESTIMATORS.iter().enumerate() {
        let selection = instrument_selection(&derived, spec.instrument);
        let ys = subset(&y, &selection.rows);
        let ds = subset(&d, &selection.rows);
        let values: Vec<bool> = selection.rows.iter().map(|row| row.value).collect();
        let strata: Vec<usize> = selection.rows.iter().map(|row| row.stratum).collect();
        let weights = match spec.pooling {
            PoolingMode::Reweighting => Some(ipw_weights(&selection).map_err(wrap)?.weights_f64()),
            PoolingMode::FixedEffects => None,
        };
        let report = tsls(
            spec.instrument,
            &ys,
            &ds,
            &values,
            &strata,
            spec.pooling,
            weights.as_deref(),
            selection.excluded.len(),
        )
        .map_err(wrap)?;
        estimates[slot] = report.point_estimate;
    }
    Ok((estimates, z_shares_equal))
}

/// Run the full harness. Replications are split contiguously over `workers`
/// threads; the output is identical for any worker count.
pub fn run_mc(config: &McConfig, workers: usize) -> Result<McResultTable, McError> {
    config.validate()?;
    let replications = config.replications;

    let results: Vec<([f64; ESTIMATOR_COUNT], bool)> = if workers <= 1 {
        let mut all = Vec::with_capacity(replications as usize);
        for rep in 0..replications {
            all.push(replicate(config, rep)?);
        }
        all
    } else {
        let workers = workers.min(replications as usize);
        let chunk = replications.div_ceil(workers as u64);
        let mut worker_results: Vec<Result<Vec<_>, McError>> = Vec::with_capacity(workers);
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..workers as u64)
                .map(|j| {
                    let lo = j * chunk;
                    let hi = ((j + 1) * chunk).min(replications);
                    scope.spawn(move || {
                        (lo..hi)
                            .map(|rep| replicate(config, rep))
                            .collect::<Result<Vec<_>, _>>()
                    })
                })
                .collect();
            for handle in handles {
                worker_results.push(handle.join().expect("worker panicked"));
            }
        });
        // keep the failure of the lowest replication index, deterministically
        let mut all = Vec::with_capacity(replications as usize);
        for result in worker_results {
            all.extend(result?);
        }
        all
    };

    let mut warnings = Vec::new();
    if results.iter().any(|(_, equal)| !equal) {
        warnings.push(
            "first-round-offer share differs across strata; its row uses fixed effects".to_string(),
        );
    }
    if results.len() == 1 {
        warnings.push("single replication: dispersion is undefined, se reported as 0".to_string());
    }

    let reps = results.len() as f64;
    let rows = ESTIMATORS
        .iter()
        .enumerate()
        .map(|(slot, spec)| {
            let mean = results.iter().map(|(e, _)| e[slot]).sum::<f64>() / reps;
            let se = if results.len() > 1 {
                let ss = results
                    .iter()
                    .map(|(e, _)| (e[slot] - mean) * (e[slot] - mean))
                    .sum::<f64>();
                (ss / (reps - 1.0)).sqrt()
            } else {
                0.0
            };
            let half_width = 1.96 * se / reps.sqrt();
            McRow {
                estimator: spec.id.to_string(),
                average: mean,
                se,
                ci_low: mean - half_width,
                ci_high: mean + half_width,
            }
        })
        .collect();

    Ok(McResultTable {
        schema_version: 1,
        rng: RNG_NAME.to_string(),
        seed: config.seed,
        replications,
        rows,
        warnings,
    })
}

/// Predicted ratio of the standard errors of the last-offer and
/// first-round-offer 2SLS coefficients: the square root of
/// `(p_c - p_d) / (1 - p_d)` with `p_c` the accepter share and `p_d` the
/// seat share of a stratum.
pub fn precision_prediction(config: &McConfig) -> Result<f64, McError> {
    config.validate()?;
    let students = config.students_per_stratum as f64;
    let p_c = config.accepters_per_stratum as f64 / students;
    let p_d = config.seats as f64 / students;
    Ok(variance_ratio(p_c, p_d)?.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> McConfig {
        McConfig {
            replications: 50,
            seed: 11,
            ..McConfig::default()
        }
    }

    #[test]
    fn default_config_is_valid() {
        McConfig::default().validate().unwrap();
    }

    #[test]
    fn config_validation_names_the_field() {
        let config = McConfig {
            seats: 15,
            ..McConfig::default()
        };
        let err = config.validate().unwrap_err();
        assert!(err.to_string().contains("seats"));

        let config = McConfig {
            replications: 0,
            ..McConfig::default()
        };
        assert!(config
            .validate()
            .unwrap_err()
            .to_string()
            .contains("replications"));
    }

    #[test]
    fn config_json_round_trip_with_partial_fields() {
        let config: McConfig = serde_json::from_str(r#"{"replications": 10, "seed": 3}"#).unwrap();
        assert_eq!(config.replications, 10);
        assert_eq!(config.seed, 3);
        assert_eq!(config.n_strata, 20);

        let err = serde_json::from_str::<McConfig>(r#"{"seatz": 3}"#).unwrap_err();
        assert!(err.to_string().contains("seatz"));
    }

    #[test]
    fn stratum_fills_all_seats_with_accepters() {
        let config = McConfig::default();
        let mut rng = stream_rng(5, 0);
        let records = simulate_stratum(&config, "s000", &mut rng);
        assert_eq!(records.len(), 20);
        let treated: Vec<_> = records.iter().filter(|r| r.enrolled).collect();
        assert_eq!(treated.len(), 10);
        assert!(treated.iter().all(|r| r.accepter == Some(true)));
        assert_eq!(
            records.iter().filter(|r| r.accepter == Some(true)).count(),
            15
        );
    }

    #[test]
    fn accepter_baseline_mean_matches_config() {
        let config = McConfig::default();
        let mut rng = stream_rng(7, 0);
        let mut sum = 0.0;
        let mut count = 0usize;
        for k in 0..200 {
            for record in simulate_stratum(&config, &format!("s{k:03}"), &mut rng) {
                if record.accepter == Some(true) && !record.enrolled {
                    sum += record.outcome;
                    count += 1;
                }
            }
        }
        let mean = sum / count as f64;
        let band = 3.0 * config.y0_sd / (count as f64).sqrt();
        assert!(
            (mean - config.y0_accepter_mean).abs() < band,
            "mean {mean} outside {band} of {}",
            config.y0_accepter_mean
        );
    }

    #[test]
    fn null_effect_leaves_treated_accepters_undistorted() {
        let config = McConfig {
            treatment_effect: 0.0,
            ..McConfig::default()
        };
        let mut rng = stream_rng(9, 0);
        let mut treated = (0.0, 0usize);
        let mut untreated = (0.0, 0usize);
        for k in 0..400 {
            for record in simulate_stratum(&config, &format!("s{k:03}"), &mut rng) {
                if record.accepter == Some(true) {
                    if record.enrolled {
                        treated.0 += record.outcome;
                        treated.1 += 1;
                    } else {
                        untreated.0 += record.outcome;
                        untreated.1 += 1;
                    }
                }
            }
        }
        let mean_gap = treated.0 / treated.1 as f64 - untreated.0 / untreated.1 as f64;
        let band =
            3.0 * config.y0_sd * ((1.0 / treated.1 as f64) + (1.0 / untreated.1 as f64)).sqrt();
        assert!(mean_gap.abs() < band, "gap {mean_gap} exceeds {band}");
    }

    #[test]
    fn identical_configs_reproduce_bitwise() {
        let config = small_config();
        let a = run_mc(&config, 1).unwrap();
        let b = run_mc(&config, 1).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json(), b.to_json());
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let config = small_config();
        let serial = run_mc(&config, 1).unwrap();
        let parallel = run_mc(&config, 3).unwrap();
        assert_eq!(serial.to_json(), parallel.to_json());
    }

    #[test]
    fn single_replication_has_degenerate_dispersion() {
        let config = McConfig {
            replications: 1,
            seed: 4,
            ..McConfig::default()
        };
        let table = run_mc(&config, 1).unwrap();
        for row in &table.rows {
            assert_eq!(row.se, 0.0);
            assert_eq!(row.ci_low, row.average);
            assert_eq!(row.ci_high, row.average);
            assert!(row.average.is_finite());
        }
        assert!(table
            .warnings
            .iter()
            .any(|w| w.contains("single replication")));
    }

    #[test]
    fn result_json_round_trips_bytes() {
        let table = run_mc(&small_config(), 1).unwrap();
        let json = table.to_json();
        let parsed: McResultTable = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed.to_json(), json);
    }

    #[test]
    fn precision_prediction_at_defaults() {
        let predicted = precision_prediction(&McConfig::default()).unwrap();
        assert!((predicted - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn precision_prediction_rejects_saturated_seats() {
        let config = McConfig {
            seats: 15,
            accepters_per_stratum: 15,
            ..McConfig::default()
        };
        assert!(precision_prediction(&config).is_err());
    }

    #[test]
    fn estimator_rows_carry_stable_ids() {
        let table = run_mc(&small_config(), 1).unwrap();
        let ids: Vec<_> = table.rows.iter().map(|r| r.estimator.as_str()).collect();
        assert_eq!(
            ids,
            vec![
                "v_fixed_effects",
                "v_reweighting",
                "w_fixed_effects",
                "w_reweighting",
                "z"
            ]
        );
    }
}
