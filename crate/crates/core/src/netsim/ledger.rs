use std::collections::BTreeMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Dims, NodeId, PayloadKind, Phase};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LedgerDetail {
    /// Per-kind totals only.
    TotalsOnly,
    /// Every record.
    Full,
    /// Every record plus the values of linear-predictor shares, for audit.
    FullWithShares,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageRecord {
    pub round: u64,
    pub phase: Phase,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub kind: PayloadKind,
    pub dims: Dims,
    pub bytes: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub messages: u64,
    pub bytes: u64,
}

impl Totals {
    fn add(&mut self, other: Totals) {
        self.messages += other.messages;
        self.bytes += other.bytes;
    }
}

/// Values of a linear-predictor share, kept for the identity-share audit.
#[derive(Debug, Clone, PartialEq)]
pub struct RetainedShare {
    pub record: usize,
    pub sender: NodeId,
    pub values: Vec<f64>,
}

/// Append-only log of deliveries.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageLedger {
    detail: LedgerDetail,
    records: Vec<MessageRecord>,
    totals: BTreeMap<(Phase, PayloadKind), Totals>,
    retained: Vec<RetainedShare>,
}

impl MessageLedger {
    pub fn new(detail: LedgerDetail) -> Self {
        Self { detail, records: Vec::new(), totals: BTreeMap::new(), retained: Vec::new() }
    }

    pub fn detail(&self) -> LedgerDetail {
        self.detail
    }

    pub fn records(&self) -> &[MessageRecord] {
        &self.records
    }

    pub fn retained_shares(&self) -> &[RetainedShare] {
        &self.retained
    }

    pub fn totals(&self) -> &BTreeMap<(Phase, PayloadKind), Totals> {
        &self.totals
    }

    pub fn message_count(&self) -> u64 {
        self.totals.values().map(|t| t.messages).sum()
    }

    pub fn byte_count(&self) -> u64 {
        self.totals.values().map(|t| t.bytes).sum()
    }

    /// Kinds that appear anywhere in the ledger.
    pub fn kinds(&self) -> Vec<PayloadKind> {
        let mut k: Vec<_> = self.totals.keys().map(|&(_, k)| k).collect();
        k.sort();
        k.dedup();
        k
    }

    pub fn count_of(&self, phase: Phase, kind: PayloadKind) -> u64 {
        self.totals.get(&(phase, kind)).map_or(0, |t| t.messages)
    }

    pub(crate) fn push(&mut self, record: MessageRecord, retained: Option<Vec<f64>>) {
        self.totals.entry((record.phase, record.kind)).or_default().add(Totals { messages: 1, bytes: record.bytes });
        if self.detail != LedgerDetail::TotalsOnly {
            if let Some(values) = retained {
                self.retained.push(RetainedShare { record: self.records.len(), sender: record.sender, values });
            }
            self.records.push(record);
        }
    }

    pub(crate) fn absorb(&mut self, child: MessageLedger, round_offset: u64) {
        for (key, t) in child.totals {
            self.totals.entry(key).or_default().add(t);
        }
        if self.detail == LedgerDetail::TotalsOnly {
            return;
        }
        let base = self.records.len();
        for mut share in child.retained {
            share.record += base;
            self.retained.push(share);
        }
        self.records.extend(child.records.into_iter().map(|mut r| {
            r.round += round_offset;
            r
        }));
    }

    pub const CSV_HEADER: [&'static str; 7] = ["round", "sender", "receiver", "kind", "dims", "bytes", "phase"];

    /// Line-delimited export: round, sender, receiver, kind, dims, bytes, phase.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.records {
            w.write_record([
                r.round.to_string(),
                r.sender.to_string(),
                r.receiver.to_string(),
                r.kind.to_string(),
                r.dims.to_string(),
                r.bytes.to_string(),
                r.phase.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }

    /// Strict import: any non-allowlisted kind or inconsistent byte count
    /// is an error. See [`super::audit_ledger_csv`] for a reporting reader.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut ledger = Self::new(LedgerDetail::Full);
        for row in parse_rows(reader)? {
            let row = row?;
            let kind: PayloadKind = row.kind.parse()?;
            if row.dims.bytes() != row.bytes {
                return Err(Error::Parse(format!("line {}: {} bytes for dims {}", row.line, row.bytes, row.dims)));
            }
            ledger.push(
                MessageRecord {
                    round: row.round,
                    phase: row.phase,
                    sender: row.sender,
                    receiver: row.receiver,
                    kind,
                    dims: row.dims,
                    bytes: row.bytes,
                },
                None,
            );
        }
        Ok(ledger)
    }
}

pub(crate) struct RawRow {
    pub line: usize,
    pub round: u64,
    pub sender: NodeId,
    pub receiver: NodeId,
    pub kind: String,
    pub dims: Dims,
    pub bytes: u64,
    pub phase: Phase,
}

pub(crate) fn parse_rows<R: Read>(reader: R) -> Result<impl Iterator<Item = Result<RawRow>>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < 6 || header.iter().take(6).ne(MessageLedger::CSV_HEADER.iter().take(6).copied()) {
        return Err(Error::Parse(format!("unexpected ledger header {header:?}")));
    }
    Ok(rdr.into_records().enumerate().map(|(i, rec)| {
        let rec = rec?;
        let line = i + 2;
        let field = |j: usize| rec.get(j).ok_or_else(|| Error::Parse(format!("line {line}: missing field {j}")));
        let num = |j: usize| -> Result<u64> {
            field(j)?.trim().parse().map_err(|_| Error::Parse(format!("line {line}: bad number in field {j}")))
        };
        Ok(RawRow {
            line,
            round: num(0)?,
            sender: NodeId(num(1)? as usize),
            receiver: NodeId(num(2)? as usize),
            kind: field(3)?.trim().to_string(),
            dims: field(4)?.trim().parse()?,
            bytes: num(5)?,
            phase: match rec.get(6) {
                Some(p) if !p.trim().is_empty() => p.trim().parse()?,
                _ => Phase::Setup,
            },
        })
    }))
}

/// Per-phase and per-kind message/byte totals.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommSummary {
    pub per_phase: BTreeMap<Phase, Totals>,
    pub per_kind: BTreeMap<PayloadKind, Totals>,
    pub total: Totals,
}

pub fn comm_summary(ledger: &MessageLedger) -> CommSummary {
    let mut s = CommSummary::default();
    for (&(phase, kind), &t) in ledger.totals() {
        s.per_phase.entry(phase).or_default().add(t);
        s.per_kind.entry(kind).or_default().add(t);
        s.total.add(t);
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(round: u64, kind: PayloadKind, dims: Dims) -> MessageRecord {
        MessageRecord {
            round,
            phase: Phase::Stage2Powell,
            sender: NodeId(1),
            receiver: NodeId(0),
            kind,
            dims,
            bytes: dims.bytes(),
        }
    }

    #[test]
    fn empty_summary_is_zero() {
        let s = comm_summary(&MessageLedger::new(LedgerDetail::Full));
        assert_eq!(s.total, Totals::default());
        assert!(s.per_phase.is_empty());
    }

    #[test]
    fn csv_round_trip_preserves_totals() {
        let mut l = MessageLedger::new(LedgerDetail::Full);
        l.push(rec(1, PayloadKind::LinearPredictorShare, Dims::Vector(50)), None);
        l.push(rec(1, PayloadKind::DeltaScalar, Dims::Scalar), None);
        l.push(rec(2, PayloadKind::GramShare, Dims::Matrix(50, 50)), None);
        let text = l.to_csv_string();
        let back = MessageLedger::read_csv(text.as_bytes()).unwrap();
        assert_eq!(comm_summary(&back), comm_summary(&l));
        assert_eq!(back.to_csv_string(), text);
    }

    #[test]
    fn absorb_offsets_rounds() {
        let mut parent = MessageLedger::new(LedgerDetail::Full);
        parent.push(rec(3, PayloadKind::IndexVector, Dims::Vector(4)), None);
        let mut child = MessageLedger::new(LedgerDetail::Full);
        child.push(rec(1, PayloadKind::DeltaScalar, Dims::Scalar), None);
        parent.absorb(child, 3);
        assert_eq!(parent.records()[1].round, 4);
        assert_eq!(parent.message_count(), 2);
    }

    #[test]
    fn totals_only_keeps_no_records() {
        let mut l = MessageLedger::new(LedgerDetail::TotalsOnly);
        l.push(rec(1, PayloadKind::DeltaScalar, Dims::Scalar), None);
        assert!(l.records().is_empty());
        assert_eq!(l.message_count(), 1);
        assert_eq!(l.byte_count(), 8);
    }

    #[test]
    fn strict_reader_rejects_unknown_kind() {
        let text = "round,sender,receiver,kind,dims,bytes,phase\n1,1,0,RawBlock,10,80,setup\n";
        assert!(MessageLedger::read_csv(text.as_bytes()).is_err());
        let text = "round,sender,receiver,kind,dims,bytes,phase\n1,1,0,DeltaScalar,1,16,setup\n";
        assert!(MessageLedger::read_csv(text.as_bytes()).is_err());
    }
}
