use std::collections::BTreeMap;
use std::io::Read;

use serde::{Deserialize, Serialize};

use super::ledger::parse_rows;
use super::{comm_summary, CommSummary, MessageLedger, MessageRecord, NodeId, PayloadKind, Totals};
use crate::error::Result;
use crate::model::{VerticalDataset, INTERCEPT};
use crate::scalar::Scalar;

/// A linear-predictor share that reproduces a raw private column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdentityShareEvent {
    pub record: usize,
    pub sender: NodeId,
    pub column: String,
    /// 1-based owner of the matched column.
    pub owner_site: usize,
}

impl IdentityShareEvent {
    pub fn cross_site(&self) -> bool {
        self.sender.0 != self.owner_site
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub records: usize,
    /// Always zero for in-process ledgers: kinds are a closed enum.
    pub non_allowlisted: usize,
    pub inconsistent_bytes: usize,
    pub shares_checked: usize,
    pub identity_shares: Vec<IdentityShareEvent>,
    pub per_kind: BTreeMap<PayloadKind, Totals>,
    pub pooled_accesses: usize,
}

impl AuditReport {
    pub fn cross_site_identity_shares(&self) -> usize {
        self.identity_shares.iter().filter(|e| e.cross_site()).count()
    }
}

const IDENTITY_TOL: f64 = 1e-12;

fn matches_column(share: &[f64], column: &[f64]) -> bool {
    share.len() == column.len()
        && share.iter().zip(column).all(|(&s, &c)| {
            // missing entries are read as 0 by the sharing site
            let c = if c.is_nan() { 0.0 } else { c };
            (s - c).abs() <= IDENTITY_TOL * c.abs().max(1.0)
        })
}

/// Audits a completed fit's ledger against the dataset it ran on.
///
/// Identity-share detection needs share values, i.e. a ledger recorded
/// with [`super::LedgerDetail::FullWithShares`]; otherwise no shares are
/// checked. The intercept and Y are public and are not compared.
pub fn audit_ledger<T: Scalar>(ledger: &MessageLedger, ds: &VerticalDataset<T>) -> AuditReport {
    let layout = ds.layout();
    let columns: Vec<(usize, String, Vec<f64>)> = (0..layout.site_count())
        .flat_map(|k| {
            layout.columns(k).iter().enumerate().filter(|(_, c)| c.as_str() != INTERCEPT).map(move |(j, c)| {
                let col = ds.block(k).column(j).into_iter().map(Scalar::to_f64_lossy).collect();
                (k + 1, c.clone(), col)
            })
        })
        .collect();

    let mut report = AuditReport {
        records: ledger.records().len(),
        inconsistent_bytes: ledger.records().iter().filter(|r| !consistent(r)).count(),
        per_kind: comm_summary(ledger).per_kind,
        pooled_accesses: ds.pool_tracker().count(),
        ..AuditReport::default()
    };
    for share in ledger.retained_shares() {
        report.shares_checked += 1;
        for (owner, name, col) in &columns {
            if matches_column(&share.values, col) {
                report.identity_shares.push(IdentityShareEvent {
                    record: share.record,
                    sender: share.sender,
                    column: name.clone(),
                    owner_site: *owner,
                });
            }
        }
    }
    report
}

fn consistent(r: &MessageRecord) -> bool {
    r.dims.bytes() == r.bytes
}

/// Audit of an exported ledger file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FileAuditReport {
    pub records: usize,
    /// (line, kind) for every record whose kind is not allowlisted.
    pub non_allowlisted: Vec<(usize, String)>,
    pub inconsistent_bytes: Vec<usize>,
    pub summary: CommSummary,
}

impl FileAuditReport {
    pub fn clean(&self) -> bool {
        self.non_allowlisted.is_empty() && self.inconsistent_bytes.is_empty()
    }
}

/// Reads an exported ledger, reporting (not rejecting) violations.
pub fn audit_ledger_csv<R: Read>(reader: R) -> Result<FileAuditReport> {
    let mut report = FileAuditReport::default();
    let mut ledger = MessageLedger::new(super::LedgerDetail::Full);
    for row in parse_rows(reader)? {
        let row = row?;
        report.records += 1;
        let Ok(kind) = row.kind.parse::<PayloadKind>() else {
            report.non_allowlisted.push((row.line, row.kind));
            continue;
        };
        let record = MessageRecord {
            round: row.round,
            phase: row.phase,
            sender: row.sender,
            receiver: row.receiver,
            kind,
            dims: row.dims,
            bytes: row.bytes,
        };
        if !consistent(&record) {
            report.inconsistent_bytes.push(row.line);
        }
        ledger.push(record, None);
    }
    report.summary = comm_summary(&ledger);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_audit_reports_unknown_kinds() {
        let text = "round,sender,receiver,kind,dims,bytes,phase\n\
                    1,1,0,LinearPredictorShare,4,32,stage2-powell\n\
                    2,2,0,RawRows,4x2,64,stage2-powell\n\
                    3,0,1,DeltaScalar,1,9,stage2-powell\n";
        let rep = audit_ledger_csv(text.as_bytes()).unwrap();
        assert_eq!(rep.records, 3);
        assert_eq!(rep.non_allowlisted, vec![(3, "RawRows".to_string())]);
        assert_eq!(rep.inconsistent_bytes, vec![4]);
        assert!(!rep.clean());
        assert_eq!(rep.summary.total.messages, 2);
    }

    #[test]
    fn nan_reads_as_zero_in_identity_check() {
        assert!(matches_column(&[1.0, 0.0], &[1.0, f64::NAN]));
        assert!(!matches_column(&[1.0, 0.5], &[1.0, f64::NAN]));
    }
}
