//! Command implementations. Each returns the process exit code on success;
//! failures carry their own exit code (1 usage/config, 2 data validation).

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use waitlist_iv::combinatorics::{
    exact_test_pvalue, expected_share, prob_t, rejects_null, LotteryParams,
};
use waitlist_iv::estimation::{
    balance_diagnostic, derive_instruments, instrument_selection, ipw_weights, tsls,
    EstimateReport, Instrument, PoolingMode, SeatSpec,
};
use waitlist_iv::montecarlo::{run_mc, McConfig};
use waitlist_iv::oracle::{oracle_null_t_distribution_with_cap, oracle_summary_with_cap};
use waitlist_iv::rational::{rat_int, to_f64, Rational};

use crate::ingest;
use crate::{InstrumentArg, OutputFormat, PoolingArg};

#[derive(Debug, Error)]
pub enum CmdFailure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

impl CmdFailure {
    pub fn exit_code(&self) -> u8 {
        match self {
            CmdFailure::Usage(_) => 1,
            CmdFailure::Data(_) => 2,
        }
    }
}

fn check_alpha(alpha: f64) -> Result<(), CmdFailure> {
    if alpha.is_finite() && 0.0 < alpha && alpha < 1.0 {
        Ok(())
    } else {
        Err(CmdFailure::Usage(format!(
            "alpha must lie strictly between 0 and 1, got {alpha}"
        )))
    }
}

fn print_json<T: Serialize>(report: &T) {
    println!(
        "{}",
        serde_json::to_string_pretty(report).expect("report serializes")
    );
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct VerifyCheck {
    kind: String,
    n: u64,
    s: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    a1: Option<u64>,
    detail: String,
    pass: bool,
}

#[derive(Serialize, Deserialize)]
struct VerifyReport {
    schema_version: u32,
    max_n: u64,
    cap: u64,
    checks: usize,
    failures: Vec<String>,
    passed: bool,
}

pub fn cmd_verify(max_n: u64, cap: u64, format: OutputFormat) -> Result<u8, CmdFailure> {
    let mut checks: Vec<VerifyCheck> = Vec::new();

    for n in 3..=max_n.max(2) {
        for s in 2..n {
            for a1 in s + 1..=n {
                let summary = oracle_summary_with_cap(n, s, a1, cap)
                    .map_err(|e| CmdFailure::Usage(e.to_string()))?;
                let params = LotteryParams::with_accepters(n, s, a1).expect("valid loop range");
                let expected = expected_share(&params).expect("oversubscribed by construction");
                let balance_pass = summary.mean_w1 == expected && summary.mean_w0 == expected;
                checks.push(VerifyCheck {
                    kind: "balance".into(),
                    n,
                    s,
                    a1: Some(a1),
                    detail: format!(
                        "mean_w1={} mean_w0={} expected={}",
                        summary.mean_w1, summary.mean_w0, expected
                    ),
                    pass: balance_pass,
                });

                let mut dist_pass = true;
                let mut total = rat_int(0);
                for t in s..=s + (n - a1) {
                    let closed = prob_t(&params, t).expect("valid support");
                    let enumerated = summary
                        .t_distribution
                        .get(&t)
                        .cloned()
                        .unwrap_or_else(|| rat_int(0));
                    if closed != enumerated {
                        dist_pass = false;
                    }
                    total += closed;
                }
                checks.push(VerifyCheck {
                    kind: "t-distribution".into(),
                    n,
                    s,
                    a1: Some(a1),
                    detail: format!("{} support points, sum={}", n - a1 + 1, total),
                    pass: dist_pass && total == rat_int(1),
                });
            }

            let null = oracle_null_t_distribution_with_cap(n, s, cap)
                .map_err(|e| CmdFailure::Usage(e.to_string()))?;
            let mut null_pass = true;
            for t in s..=n {
                let closed = exact_test_pvalue(n, s, t).expect("valid support");
                let enumerated = null.get(&t).cloned().unwrap_or_else(|| rat_int(0));
                if closed != enumerated {
                    null_pass = false;
                }
            }
            checks.push(VerifyCheck {
                kind: "null-distribution".into(),
                n,
                s,
                a1: None,
                detail: format!("{} support points", n - s + 1),
                pass: null_pass,
            });
        }
    }

    let failures: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{} n={} s={} a1={:?}: {}", c.kind, c.n, c.s, c.a1, c.detail))
        .collect();
    let report = VerifyReport {
        schema_version: 1,
        max_n,
        cap,
        checks: checks.len(),
        failures: failures.clone(),
        passed: failures.is_empty(),
    };

    match format {
        OutputFormat::Json => print_json(&report),
        OutputFormat::Text => {
            if checks.is_empty() {
                println!("no valid parameter triples with n <= {max_n}; nothing to check");
            }
            for check in &checks {
                let label = match check.a1 {
                    Some(a1) => format!("n={} s={} a1={}", check.n, check.s, a1),
                    None => format!("n={} s={}", check.n, check.s),
                };
                println!(
                    "{:<17} {:<18} {} {}",
                    check.kind,
                    label,
                    check.detail,
                    if check.pass { "PASS" } else { "FAIL" }
                );
            }
            println!("\n{} checks, {} failures", checks.len(), failures.len());
        }
    }
    Ok(if report.passed { 0 } else { 3 })
}

// ---------------------------------------------------------------------------
// test
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct TestReport {
    schema_version: u32,
    n: u64,
    seats: u64,
    t: u64,
    alpha: f64,
    p_value: String,
    p_value_decimal: f64,
    reject: bool,
}

pub fn cmd_test(
    n: u64,
    s: u64,
    t: u64,
    alpha: f64,
    format: OutputFormat,
) -> Result<u8, CmdFailure> {
    check_alpha(alpha)?;
    let p_value = exact_test_pvalue(n, s, t).map_err(|e| CmdFailure::Usage(e.to_string()))?;
    let reject = rejects_null(&p_value, alpha);
    let report = TestReport {
        schema_version: 1,
        n,
        seats: s,
        t,
        alpha,
        p_value: p_value.to_string(),
        p_value_decimal: to_f64(&p_value),
        reject,
    };
    match format {
        OutputFormat::Json => print_json(&report),
        OutputFormat::Text => {
            println!("exact oversubscription test");
            println!("  n = {n}, seats = {s}, observed last-offer rank t = {t}");
            println!(
                "  P(T = {t} | accepters = seats) = {} = {:.6}",
                report.p_value, report.p_value_decimal
            );
            if reject {
                println!(
                    "  alpha = {alpha} -> REJECT: the lottery was oversubscribed \
                     (more accepters than seats)"
                );
            } else {
                println!(
                    "  alpha = {alpha} -> FAIL-TO-REJECT: the data are consistent with \
                     accepters = seats"
                );
            }
        }
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// mc
// ---------------------------------------------------------------------------

pub fn cmd_mc(
    config_path: Option<&Path>,
    workers: usize,
    format: OutputFormat,
    seed_flag: Option<u64>,
) -> Result<u8, CmdFailure> {
    let mut config = match config_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CmdFailure::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            serde_json::from_str::<McConfig>(&text)
                .map_err(|e| CmdFailure::Usage(format!("invalid config {}: {e}", path.display())))?
        }
        None => McConfig::default(),
    };

    // seed precedence: flag > WAITLIST_IV_SEED > config > built-in default
    if let Some(seed) = seed_flag {
        config.seed = seed;
    } else if let Ok(value) = std::env::var("WAITLIST_IV_SEED") {
        config.seed = value.trim().parse().map_err(|_| {
            CmdFailure::Usage(format!(
                "WAITLIST_IV_SEED must be a 64-bit unsigned integer, got {value:?}"
            ))
        })?;
    }

    let table = run_mc(&config, workers.max(1)).map_err(|e| CmdFailure::Usage(e.to_string()))?;
    match format {
        OutputFormat::Json => println!("{}", table.to_json()),
        OutputFormat::Text => print!("{}", table.render_text()),
    }
    Ok(0)
}

// ---------------------------------------------------------------------------
// analyze
// ---------------------------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct StratumDiagnostic {
    stratum_id: String,
    n: u64,
    seats: u64,
    t_last_offer: u64,
    enrolled: u64,
    undersubscribed: bool,
    /// Exact point probability of the observed last-offer rank under the
    /// not-oversubscribed null; absent when the test preconditions fail.
    exact_test_pvalue: Option<String>,
    exact_test_pvalue_decimal: Option<f64>,
    oversubscription_rejected: Option<bool>,
}

#[derive(Serialize, Deserialize)]
struct BalanceSection {
    share_instrument_1: String,
    share_instrument_0: String,
    share_instrument_1_decimal: f64,
    share_instrument_0_decimal: f64,
}

#[derive(Serialize, Deserialize)]
struct AnalyzeReport {
    schema_version: u32,
    input: String,
    alpha: f64,
    estimate: EstimateReport,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    excluded_student_ids: Vec<String>,
    skipped_strata: Vec<String>,
    strata: Vec<StratumDiagnostic>,
    balance: Option<BalanceSection>,
    warnings: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_analyze(
    input: &Path,
    instrument: InstrumentArg,
    pooling: PoolingArg,
    seats: Option<u64>,
    alpha: f64,
    format: OutputFormat,
) -> Result<u8, CmdFailure> {
    check_alpha(alpha)?;
    let records = ingest::read_records(input).map_err(|e| CmdFailure::Data(e.to_string()))?;

    let seat_spec = match seats {
        Some(0) => {
            return Err(CmdFailure::Usage("seats must be at least 1".into()));
        }
        Some(s) => SeatSpec::Uniform(s),
        None => SeatSpec::Infer,
    };
    let derived =
        derive_instruments(&records, &seat_spec).map_err(|e| CmdFailure::Data(e.to_string()))?;

    let mut warnings: Vec<String> = derived.warnings.iter().map(|w| w.to_string()).collect();

    let mut strata_diagnostics = Vec::new();
    for info in &derived.strata {
        let p_value = exact_test_pvalue(info.n, info.seats, info.t_last_offer).ok();
        let rejected = p_value.as_ref().map(|p| rejects_null(p, alpha));
        if rejected == Some(false) {
            warnings.push(format!(
                "stratum {}: oversubscription NOT established at alpha={alpha} \
                 (p = {}); the last-offer grouping is unreliable here",
                info.stratum_id,
                p_value.as_ref().expect("present when rejected is"),
            ));
        }
        strata_diagnostics.push(StratumDiagnostic {
            stratum_id: info.stratum_id.clone(),
            n: info.n,
            seats: info.seats,
            t_last_offer: info.t_last_offer,
            enrolled: info.enrolled,
            undersubscribed: info.undersubscribed,
            exact_test_pvalue: p_value.as_ref().map(Rational::to_string),
            exact_test_pvalue_decimal: p_value.as_ref().map(to_f64),
            oversubscription_rejected: rejected,
        });
    }

    let instrument = match instrument {
        InstrumentArg::Z => Instrument::Z,
        InstrumentArg::V => Instrument::V,
        InstrumentArg::W => Instrument::W,
    };
    let mode = match pooling {
        PoolingArg::Fe => PoolingMode::FixedEffects,
        PoolingArg::Ipw => PoolingMode::Reweighting,
    };

    let selection = instrument_selection(&derived, instrument);
    for stratum in &selection.skipped_strata {
        warnings.push(format!(
            "stratum {stratum}: excluded from the last-offer analysis \
             (every rank was offered, no strictly-later control group)"
        ));
    }
    if selection.rows.is_empty() {
        return Err(CmdFailure::Data(format!(
            "no usable strata for instrument {instrument}"
        )));
    }

    let weights = match mode {
        PoolingMode::Reweighting => Some(
            ipw_weights(&selection)
                .map_err(|e| CmdFailure::Data(e.to_string()))?
                .weights_f64(),
        ),
        PoolingMode::FixedEffects => None,
    };
    let y: Vec<f64> = selection
        .rows
        .iter()
        .map(|row| records[row.index].outcome)
        .collect();
    let d: Vec<bool> = selection
        .rows
        .iter()
        .map(|row| records[row.index].enrolled)
        .collect();
    let values: Vec<bool> = selection.rows.iter().map(|row| row.value).collect();
    let strata: Vec<usize> = selection.rows.iter().map(|row| row.stratum).collect();

    let estimate = tsls(
        instrument,
        &y,
        &d,
        &values,
        &strata,
        mode,
        weights.as_deref(),
        selection.excluded.len(),
    )
    .map_err(|e| CmdFailure::Data(e.to_string()))?;
    warnings.extend(estimate.warnings.iter().cloned());

    let balance = if selection
        .rows
        .iter()
        .all(|row| records[row.index].accepter.is_some())
    {
        let sample = match weights {
            Some(_) => ipw_weights(&selection).expect("validated above"),
            None => waitlist_iv::estimation::unit_weights(&selection),
        };
        let (share_1, share_0) =
            balance_diagnostic(&records, &sample).map_err(|e| CmdFailure::Data(e.to_string()))?;
        Some(BalanceSection {
            share_instrument_1_decimal: to_f64(&share_1),
            share_instrument_0_decimal: to_f64(&share_0),
            share_instrument_1: share_1.to_string(),
            share_instrument_0: share_0.to_string(),
        })
    } else {
        None
    };

    let (ci_low, ci_high) = match estimate.std_error {
        Some(se) => (
            Some(estimate.point_estimate - 1.96 * se),
            Some(estimate.point_estimate + 1.96 * se),
        ),
        None => (None, None),
    };
    let report = AnalyzeReport {
        schema_version: 1,
        input: input.display().to_string(),
        alpha,
        ci_low,
        ci_high,
        excluded_student_ids: selection
            .excluded
            .iter()
            .map(|&i| records[i].student_id.clone())
            .collect(),
        skipped_strata: selection.skipped_strata.clone(),
        strata: strata_diagnostics,
        balance,
        warnings,
        estimate,
    };

    match format {
        OutputFormat::Json => print_json(&report),
        OutputFormat::Text => render_analyze_text(&report),
    }
    Ok(0)
}

fn render_analyze_text(report: &AnalyzeReport) {
    println!("analysis of {}", report.input);
    println!(
        "  instrument: {}   pooling: {}   alpha: {}",
        report.estimate.instrument, report.estimate.pooling, report.alpha
    );
    println!(
        "  observations used: {}   excluded (last-offer rank): {}",
        report.estimate.n_used, report.estimate.n_excluded
    );
    println!("  point estimate: {:.4}", report.estimate.point_estimate);
    match (report.estimate.std_error, report.ci_low, report.ci_high) {
        (Some(se), Some(lo), Some(hi)) => {
            println!(
                "  std error ({}): {:.4}",
                report.estimate.std_error_kind, se
            );
            println!("  95% CI: [{lo:.4}, {hi:.4}]");
        }
        _ => println!("  std error: not available (insufficient degrees of freedom)"),
    }
    if !report.excluded_student_ids.is_empty() {
        println!(
            "  excluded students: {}",
            report.excluded_student_ids.join(", ")
        );
    }
    println!("\nper-stratum design diagnostics:");
    for stratum in &report.strata {
        let test = match (
            &stratum.exact_test_pvalue,
            stratum.oversubscription_rejected,
        ) {
            (Some(p), Some(true)) => format!("p = {p}: oversubscription established"),
            (Some(p), Some(false)) => format!("p = {p}: oversubscription NOT established"),
            _ => "exact test not applicable".to_string(),
        };
        println!(
            "  {} n={} seats={} T={} enrolled={}{} | {}",
            stratum.stratum_id,
            stratum.n,
            stratum.seats,
            stratum.t_last_offer,
            stratum.enrolled,
            if stratum.undersubscribed {
                " UNDERSUBSCRIBED"
            } else {
                ""
            },
            test
        );
    }
    if let Some(balance) = &report.balance {
        println!(
            "\nbalance (accepter shares): instrument=1: {} = {:.4}, instrument=0: {} = {:.4}",
            balance.share_instrument_1,
            balance.share_instrument_1_decimal,
            balance.share_instrument_0,
            balance.share_instrument_0_decimal
        );
    }
    if !report.warnings.is_empty() {
        println!();
        for warning in &report.warnings {
            println!("warning: {warning}");
        }
    }
}
