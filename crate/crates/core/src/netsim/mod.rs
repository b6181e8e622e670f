//! In-process simulation of the multi-site network.
//!
//! Every cross-site value travels as a [`Payload`]; the enum is the complete
//! allowlist of what may be shared. Each delivery is recorded in a
//! [`MessageLedger`] for privacy audit and communication accounting.
//! Delivery is synchronous, lossless and ordered.

mod audit;
mod federation;
mod ledger;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

pub use audit::{audit_ledger, audit_ledger_csv, AuditReport, FileAuditReport, IdentityShareEvent};
pub(crate) use federation::sum_vectors;
pub use federation::{Design, Federation, Response, SiteView};
pub use ledger::{comm_summary, CommSummary, LedgerDetail, MessageLedger, MessageRecord, RetainedShare, Totals};

/// Bytes charged per transmitted number.
pub const BYTES_PER_NUMBER: u64 = 8;

/// Participant id: 0 is the coordinator, sites are 1..=K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId(pub usize);

impl NodeId {
    pub const COORDINATOR: NodeId = NodeId(0);

    /// Node of the 0-based site index used throughout the estimators.
    pub fn site(index: usize) -> NodeId {
        NodeId(index + 1)
    }

    pub fn is_coordinator(self) -> bool {
        self.0 == 0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PayloadKind {
    GramShare,
    LinearPredictorShare,
    DualVectorBroadcast,
    DeltaScalar,
    IndexVector,
    ParamVector,
    ParamCov,
    GramBlock,
    ControlSignal,
}

impl PayloadKind {
    pub const ALL: [PayloadKind; 9] = [
        PayloadKind::GramShare,
        PayloadKind::LinearPredictorShare,
        PayloadKind::DualVectorBroadcast,
        PayloadKind::DeltaScalar,
        PayloadKind::IndexVector,
        PayloadKind::ParamVector,
        PayloadKind::ParamCov,
        PayloadKind::GramBlock,
        PayloadKind::ControlSignal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PayloadKind::GramShare => "GramShare",
            PayloadKind::LinearPredictorShare => "LinearPredictorShare",
            PayloadKind::DualVectorBroadcast => "DualVectorBroadcast",
            PayloadKind::DeltaScalar => "DeltaScalar",
            PayloadKind::IndexVector => "IndexVector",
            PayloadKind::ParamVector => "ParamVector",
            PayloadKind::ParamCov => "ParamCov",
            PayloadKind::GramBlock => "GramBlock",
            PayloadKind::ControlSignal => "ControlSignal",
        }
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PayloadKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        PayloadKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Payload(format!("kind `{s}` is not allowlisted")))
    }
}

/// Protocol phase a message belongs to, for per-phase accounting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    Setup,
    Stage1Gram,
    Stage1Dual,
    Stage1Weights,
    Stage2Powell,
    Bootstrap,
    ImputationModel,
    Imputation,
    Analysis,
}

impl Phase {
    pub const ALL: [Phase; 9] = [
        Phase::Setup,
        Phase::Stage1Gram,
        Phase::Stage1Dual,
        Phase::Stage1Weights,
        Phase::Stage2Powell,
        Phase::Bootstrap,
        Phase::ImputationModel,
        Phase::Imputation,
        Phase::Analysis,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Phase::Setup => "setup",
            Phase::Stage1Gram => "stage1-gram",
            Phase::Stage1Dual => "stage1-dual",
            Phase::Stage1Weights => "stage1-weights",
            Phase::Stage2Powell => "stage2-powell",
            Phase::Bootstrap => "bootstrap",
            Phase::ImputationModel => "imputation-model",
            Phase::Imputation => "imputation",
            Phase::Analysis => "analysis",
        }
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Phase {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Phase::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| Error::Parse(format!("unknown phase `{s}`")))
    }
}

/// Control notices carry no data beyond their tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Control {
    /// Drop the first direction, shift the rest, append θ − θ̃.
    RotateDirections,
    /// Like `RotateDirections`, but re-append the dropped direction.
    RotateReuseDropped,
    /// Set θ̃ = θ and begin a new outer iteration.
    StartIteration,
    Finished,
}

/// Everything that may cross a site boundary.
#[derive(Debug, Clone, PartialEq)]
pub enum Payload<T> {
    GramShare(Matrix<T>),
    LinearPredictorShare(Vec<T>),
    DualVectorBroadcast(Vec<T>),
    DeltaScalar(T),
    IndexVector(Vec<usize>),
    ParamVector(Vec<T>),
    ParamCov(Matrix<T>),
    GramBlock { sites: (usize, usize), block: Matrix<T> },
    ControlSignal(Control),
}

/// Declared size of a payload.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dims {
    Scalar,
    Vector(usize),
    Matrix(usize, usize),
}

impl Dims {
    pub fn numbers(self) -> u64 {
        match self {
            Dims::Scalar => 1,
            Dims::Vector(n) => n as u64,
            Dims::Matrix(r, c) => (r * c) as u64,
        }
    }

    pub fn bytes(self) -> u64 {
        self.numbers() * BYTES_PER_NUMBER
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Dims::Scalar => f.write_str("1"),
            Dims::Vector(n) => write!(f, "{n}"),
            Dims::Matrix(r, c) => write!(f, "{r}x{c}"),
        }
    }
}

impl FromStr for Dims {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Parse(format!("bad dims `{s}`"));
        if let Some((r, c)) = s.split_once('x') {
            return Ok(Dims::Matrix(r.parse().map_err(|_| bad())?, c.parse().map_err(|_| bad())?));
        }
        // a bare "1" is ambiguous between a scalar and a length-1 vector;
        // both cost one number, so the scalar reading is used
        match s.parse::<usize>().map_err(|_| bad())? {
            1 => Ok(Dims::Scalar),
            n => Ok(Dims::Vector(n)),
        }
    }
}

impl<T: Scalar> Payload<T> {
    pub fn kind(&self) -> PayloadKind {
        match self {
            Payload::GramShare(_) => PayloadKind::GramShare,
            Payload::LinearPredictorShare(_) => PayloadKind::LinearPredictorShare,
            Payload::DualVectorBroadcast(_) => PayloadKind::DualVectorBroadcast,
            Payload::DeltaScalar(_) => PayloadKind::DeltaScalar,
            Payload::IndexVector(_) => PayloadKind::IndexVector,
            Payload::ParamVector(_) => PayloadKind::ParamVector,
            Payload::ParamCov(_) => PayloadKind::ParamCov,
            Payload::GramBlock { .. } => PayloadKind::GramBlock,
            Payload::ControlSignal(_) => PayloadKind::ControlSignal,
        }
    }

    pub fn dims(&self) -> Dims {
        match self {
            Payload::GramShare(m) | Payload::ParamCov(m) | Payload::GramBlock { block: m, .. } => {
                Dims::Matrix(m.rows(), m.cols())
            }
            Payload::LinearPredictorShare(v) | Payload::DualVectorBroadcast(v) | Payload::ParamVector(v) => {
                Dims::Vector(v.len())
            }
            Payload::IndexVector(v) => Dims::Vector(v.len()),
            Payload::DeltaScalar(_) | Payload::ControlSignal(_) => Dims::Scalar,
        }
    }

    pub fn into_vector(self) -> Result<Vec<T>> {
        match self {
            Payload::LinearPredictorShare(v) | Payload::DualVectorBroadcast(v) | Payload::ParamVector(v) => Ok(v),
            other => Err(Error::Payload(format!("expected a vector payload, got {}", other.kind()))),
        }
    }

    pub fn into_matrix(self) -> Result<Matrix<T>> {
        match self {
            Payload::GramShare(m) | Payload::ParamCov(m) | Payload::GramBlock { block: m, .. } => Ok(m),
            other => Err(Error::Payload(format!("expected a matrix payload, got {}", other.kind()))),
        }
    }

    pub fn into_scalar(self) -> Result<T> {
        match self {
            Payload::DeltaScalar(v) => Ok(v),
            other => Err(Error::Payload(format!("expected a scalar payload, got {}", other.kind()))),
        }
    }
}

/// The simulated network for one fit: size checks plus the ledger.
#[derive(Debug, Clone)]
pub struct Network {
    n: usize,
    widths: Vec<usize>,
    ledger: MessageLedger,
    round: u64,
    phase: Phase,
    pinned: Option<Phase>,
}

impl Network {
    /// `widths[k]` is the number of coefficients held by site k (0-based).
    pub fn new(n: usize, widths: Vec<usize>, detail: LedgerDetail) -> Self {
        Self { n, widths, ledger: MessageLedger::new(detail), round: 0, phase: Phase::Setup, pinned: None }
    }

    /// A fresh network with the same shape and detail level.
    pub fn child(&self) -> Self {
        Self { pinned: self.pinned, ..Self::new(self.n, self.widths.clone(), self.ledger.detail()) }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn site_count(&self) -> usize {
        self.widths.len()
    }

    pub fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
    }

    pub fn phase(&self) -> Phase {
        self.pinned.unwrap_or(self.phase)
    }

    /// Records every later message under `phase`, whatever the protocol
    /// code sets (nested replicates are attributed to their parent step).
    pub fn pin_phase(&mut self, phase: Phase) {
        self.pinned = Some(phase);
    }

    pub fn next_round(&mut self) -> u64 {
        self.round += 1;
        self.round
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn ledger(&self) -> &MessageLedger {
        &self.ledger
    }

    pub fn into_ledger(self) -> MessageLedger {
        self.ledger
    }

    /// Folds a nested protocol's ledger (e.g. a bootstrap replicate) into
    /// this one, after the current round.
    pub fn absorb(&mut self, child: MessageLedger, child_rounds: u64) {
        self.ledger.absorb(child, self.round);
        self.round += child_rounds;
    }

    pub fn absorb_network(&mut self, child: Network) {
        let rounds = child.round;
        self.absorb(child.ledger, rounds);
    }

    fn check(&self, from: NodeId, to: NodeId, payload: &Payload<impl Scalar>) -> Result<()> {
        let k = self.widths.len();
        if from.0 > k || to.0 > k {
            return Err(Error::Payload(format!("unknown node in {from} -> {to}")));
        }
        if from == to {
            return Err(Error::Payload(format!("node {from} sending to itself")));
        }
        let n = self.n;
        let p = self.widths.iter().sum::<usize>();
        let dims = payload.dims();
        let ok = match payload {
            Payload::GramShare(_) => dims == Dims::Matrix(n, n),
            Payload::LinearPredictorShare(_) | Payload::DualVectorBroadcast(_) => dims == Dims::Vector(n),
            Payload::IndexVector(idx) => idx.len() == n && idx.iter().all(|&i| i < n),
            Payload::ParamVector(v) => !v.is_empty() && v.len() <= p,
            Payload::ParamCov(m) => m.rows() == m.cols() && m.rows() <= p,
            Payload::GramBlock { sites: (a, b), block } => {
                *a < k && *b < k && block.rows() == self.widths[*a] && block.cols() == self.widths[*b]
            }
            Payload::DeltaScalar(_) | Payload::ControlSignal(_) => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Payload(format!(
                "{} with dims {dims} does not fit n = {n}, widths {:?}",
                payload.kind(),
                self.widths
            )))
        }
    }

    /// Records and delivers one message; the receiver gets the payload back.
    pub fn send<T: Scalar>(&mut self, from: NodeId, to: NodeId, payload: Payload<T>) -> Result<Payload<T>> {
        self.check(from, to, &payload)?;
        let record = MessageRecord {
            round: self.round,
            phase: self.phase(),
            sender: from,
            receiver: to,
            kind: payload.kind(),
            dims: payload.dims(),
            bytes: payload.dims().bytes(),
        };
        let retained = match &payload {
            Payload::LinearPredictorShare(v) if self.ledger.detail() == LedgerDetail::FullWithShares => {
                Some(v.iter().map(|x| x.to_f64_lossy()).collect())
            }
            _ => None,
        };
        self.ledger.push(record, retained);
        Ok(payload)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_share_costs_eight_bytes_per_entry() {
        let mut net = Network::new(10, vec![2, 1], LedgerDetail::Full);
        net.send(NodeId::site(0), NodeId::COORDINATOR, Payload::LinearPredictorShare(vec![0.0f64; 10])).unwrap();
        assert_eq!(net.ledger().records()[0].bytes, 80);
    }

    #[test]
    fn gram_share_bytes() {
        let mut net = Network::new(100, vec![2, 1], LedgerDetail::Full);
        net.send(NodeId::site(1), NodeId::COORDINATOR, Payload::GramShare(Matrix::<f64>::zeros(100, 100))).unwrap();
        assert_eq!(net.ledger().records()[0].bytes, 80_000);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let mut net = Network::new(10, vec![2, 1], LedgerDetail::Full);
        let r = net.send(NodeId::site(0), NodeId::COORDINATOR, Payload::LinearPredictorShare(vec![0.0f64; 9]));
        assert!(r.is_err());
        let r = net.send(NodeId::site(0), NodeId::COORDINATOR, Payload::IndexVector::<f64>(vec![10; 10]));
        assert!(r.is_err());
        let r = net.send(NodeId::site(0), NodeId(5), Payload::DeltaScalar(1.0f64));
        assert!(r.is_err());
        let r = net.send(
            NodeId::site(0),
            NodeId::COORDINATOR,
            Payload::GramBlock { sites: (0, 1), block: Matrix::<f64>::zeros(2, 2) },
        );
        assert!(r.is_err());
        assert!(net.ledger().records().is_empty());
    }

    #[test]
    fn dims_round_trip() {
        for d in [Dims::Scalar, Dims::Vector(7), Dims::Matrix(3, 4)] {
            assert_eq!(d.to_string().parse::<Dims>().unwrap(), d);
        }
        assert!("RawRows".parse::<PayloadKind>().is_err());
    }
}
