//! CSV ingestion with row-numbered validation errors.
//!
//! Expected schema (header required, any column order):
//! `student_id, stratum_id, rank, offered, enrolled, outcome[, accepter]`
//! with `offered`/`enrolled`/`accepter` as 0/1 and `outcome` decimal.

use std::collections::HashMap;
use std::path::Path;

use thiserror::Error;
use waitlist_iv::StudentRecord;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("missing required column '{0}'")]
    MissingColumn(&'static str),
    #[error("row {row}: {message}")]
    Row { row: u64, message: String },
    #[error(
        "row {row}: duplicate rank {rank} in stratum {stratum} (first seen at row {first_row})"
    )]
    DuplicateRank {
        row: u64,
        first_row: u64,
        stratum: String,
        rank: u64,
    },
    #[error("{path} contains no data rows")]
    Empty { path: String },
}

fn parse_flag(value: &str, column: &str, row: u64) -> Result<bool, IngestError> {
    match value {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(IngestError::Row {
            row,
            message: format!("column {column} must be 0 or 1, got {other:?}"),
        }),
    }
}

pub fn read_records(path: &Path) -> Result<Vec<StudentRecord>, IngestError> {
    let display = path.display().to_string();
    let io_err = |message: String| IngestError::Io {
        path: display.clone(),
        message,
    };

    let mut reader = csv::Reader::from_path(path).map_err(|e| io_err(e.to_string()))?;
    let headers = reader.headers().map_err(|e| io_err(e.to_string()))?.clone();
    let column = |name: &'static str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or(IngestError::MissingColumn(name))
    };
    let idx_student = column("student_id")?;
    let idx_stratum = column("stratum_id")?;
    let idx_rank = column("rank")?;
    let idx_offered = column("offered")?;
    let idx_enrolled = column("enrolled")?;
    let idx_outcome = column("outcome")?;
    let idx_accepter = headers.iter().position(|h| h.trim() == "accepter");

    let mut records = Vec::new();
    let mut seen_ranks: HashMap<(String, u64), u64> = HashMap::new();
    for (i, result) in reader.records().enumerate() {
        let row = i as u64 + 2; // header occupies line 1
        let record = result.map_err(|e| IngestError::Row {
            row,
            message: e.to_string(),
        })?;
        let field = |idx: usize| record.get(idx).unwrap_or("").trim();

        let student_id = field(idx_student).to_string();
        let stratum_id = field(idx_stratum).to_string();
        if student_id.is_empty() || stratum_id.is_empty() {
            return Err(IngestError::Row {
                row,
                message: "student_id and stratum_id must be nonempty".into(),
            });
        }
        let rank: u64 = field(idx_rank).parse().map_err(|_| IngestError::Row {
            row,
            message: format!("rank must be a positive integer, got {:?}", field(idx_rank)),
        })?;
        if rank == 0 {
            return Err(IngestError::Row {
                row,
                message: "rank must be at least 1".into(),
            });
        }
        let offered = parse_flag(field(idx_offered), "offered", row)?;
        let enrolled = parse_flag(field(idx_enrolled), "enrolled", row)?;
        if enrolled && !offered {
            return Err(IngestError::Row {
                row,
                message: format!("student {student_id} enrolled without an offer"),
            });
        }
        let outcome: f64 = field(idx_outcome).parse().map_err(|_| IngestError::Row {
            row,
            message: format!("outcome must be a decimal, got {:?}", field(idx_outcome)),
        })?;
        if !outcome.is_finite() {
            return Err(IngestError::Row {
                row,
                message: "outcome must be finite".into(),
            });
        }
        let accepter = match idx_accepter {
            Some(idx) => {
                let value = field(idx);
                if value.is_empty() {
                    None
                } else {
                    Some(parse_flag(value, "accepter", row)?)
                }
            }
            None => None,
        };

        if let Some(&first_row) = seen_ranks.get(&(stratum_id.clone(), rank)) {
            return Err(IngestError::DuplicateRank {
                row,
                first_row,
                stratum: stratum_id,
                rank,
            });
        }
        seen_ranks.insert((stratum_id.clone(), rank), row);

        records.push(StudentRecord {
            student_id,
            stratum_id,
            rank,
            offered,
            enrolled,
            outcome,
            accepter,
        });
    }

    if records.is_empty() {
        return Err(IngestError::Empty { path: display });
    }
    Ok(records)
}
