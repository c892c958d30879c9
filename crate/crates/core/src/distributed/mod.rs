//! One-shot distributed eigenspace estimation.
//!
//! Each machine computes the top-`k` eigenvectors of its local scatter
//! estimate (spatial Kendall's tau for ECA, sample covariance for PCA) and
//! sends the `p x k` basis to the coordinator, which returns the Grassmann
//! barycenter of the received subspaces. Total uplink traffic is exactly
//! `m · p · k` scalars.

pub mod transport;
pub mod wire;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grassmann::{barycenter, SubspacePoint};
use crate::kendall::{kendall_tau, sample_covariance};
use crate::matrix::{sym_eig_topk, DenseMatrix, OrthonormalBasis, SymMatrix, DEFAULT_TOL};

pub use transport::{InProcess, Tcp, Transport, WorkerTask};

/// One machine's block of consecutive rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    machine_id: u32,
    data: DenseMatrix,
}

impl Partition {
    /// `machine_id` is 1-based; the block needs at least two rows.
    pub fn new(machine_id: u32, data: DenseMatrix) -> Result<Self> {
        if machine_id == 0 {
            return Err(Error::Partition("machine ids start at 1".into()));
        }
        if data.rows() < 2 {
            return Err(Error::Partition(format!(
                "machine {machine_id} holds {} rows; at least 2 are required",
                data.rows()
            )));
        }
        Ok(Self { machine_id, data })
    }

    pub fn machine_id(&self) -> u32 {
        self.machine_id
    }

    pub fn data(&self) -> &DenseMatrix {
        &self.data
    }
}

/// Splits `N` rows into `m` consecutive blocks of `N / m` rows. `m` must
/// divide `N`.
pub fn partition_rows(data: &DenseMatrix, m: usize) -> Result<Vec<Partition>> {
    let n_total = data.rows();
    if m == 0 {
        return Err(Error::Partition("number of machines must be at least 1".into()));
    }
    if n_total % m != 0 {
        return Err(Error::Partition(format!(
            "{n_total} rows cannot be split evenly across {m} machines"
        )));
    }
    let n = n_total / m;
    (0..m)
        .map(|l| Partition::new(l as u32 + 1, data.row_block(l * n, (l + 1) * n)?))
        .collect()
}

/// Local scatter estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    /// Spatial Kendall's tau (elliptical component analysis).
    Eca,
    /// Sample covariance.
    Pca,
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorKind::Eca => "eca",
            EstimatorKind::Pca => "pca",
        })
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "eca" | "kendall" => Ok(EstimatorKind::Eca),
            "pca" | "covariance" => Ok(EstimatorKind::Pca),
            other => Err(Error::InvalidParameter(format!("unknown estimator '{other}'"))),
        }
    }
}

pub fn local_scatter(data: &DenseMatrix, kind: EstimatorKind) -> Result<SymMatrix> {
    match kind {
        EstimatorKind::Eca => kendall_tau(data),
        EstimatorKind::Pca => sample_covariance(data),
    }
}

/// Top-`k` eigenbasis of the scatter estimate of all of `data` on one machine.
pub fn full_sample_basis(data: &DenseMatrix, k: usize, kind: EstimatorKind) -> Result<OrthonormalBasis> {
    let scatter = local_scatter(data, kind)?;
    Ok(sym_eig_topk(&scatter, k, DEFAULT_TOL)?.basis)
}

/// A local eigenspace estimate in transit.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenspaceMessage {
    pub machine_id: u32,
    pub basis: OrthonormalBasis,
}

impl EigenspaceMessage {
    /// Number of real scalars carried: `p · k`.
    pub fn payload_scalars(&self) -> u64 {
        (self.basis.ambient_dim() * self.basis.rank()) as u64
    }
}

/// Communication counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostLedger {
    pub scalars_uplinked: u64,
    pub scalars_downlinked: u64,
    pub messages: u64,
}

impl CostLedger {
    pub fn merge(&mut self, other: CostLedger) {
        self.scalars_uplinked += other.scalars_uplinked;
        self.scalars_downlinked += other.scalars_downlinked;
        self.messages += other.messages;
    }
}

fn tag(machine_id: u32) -> impl FnOnce(Error) -> Error {
    move |e| Error::Worker {
        machine_id,
        source: Box::new(e),
    }
}

/// Step run on each machine: top-`k` eigenbasis of the local scatter.
pub fn worker_step(part: &Partition, k: usize, kind: EstimatorKind) -> Result<EigenspaceMessage> {
    let id = part.machine_id;
    let p = part.data.cols();
    if k == 0 || k > p {
        return Err(tag(id)(Error::Dimension(format!("k = {k} must lie in 1..={p}"))));
    }
    let basis = full_sample_basis(&part.data, k, kind).map_err(tag(id))?;
    Ok(EigenspaceMessage { machine_id: id, basis })
}

/// Coordinator output.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub basis: OrthonormalBasis,
    /// `(1/m) Σ V_i V_iᵀ` over the received bases.
    pub average_projection: SymMatrix,
}

/// Aggregates exactly one message from each machine `1..=expected` into the
/// barycenter of their spans and records the uplink traffic in `ledger`.
///
/// Messages are sorted by machine id before averaging, so the result does
/// not depend on arrival order.
pub fn coordinator_step(
    mut msgs: Vec<EigenspaceMessage>,
    k: usize,
    expected: usize,
    ledger: &mut CostLedger,
) -> Result<Aggregate> {
    let protocol = |machine_id, reason: String| Error::Protocol { machine_id, reason };
    if expected == 0 {
        return Err(protocol(None, "no machines to aggregate".into()));
    }
    msgs.sort_by_key(|m| m.machine_id);
    for w in msgs.windows(2) {
        if w[0].machine_id == w[1].machine_id {
            return Err(protocol(Some(w[0].machine_id), "duplicate message".into()));
        }
    }
    if let Some(bad) = msgs.iter().find(|m| m.machine_id == 0 || m.machine_id as usize > expected) {
        return Err(protocol(Some(bad.machine_id), format!("unexpected machine id (expected 1..={expected})")));
    }
    if msgs.len() != expected {
        let missing = (1..=expected as u32)
            .find(|id| msgs.binary_search_by_key(id, |m| m.machine_id).is_err());
        return Err(protocol(missing, format!("received {} of {expected} messages", msgs.len())));
    }
    let p = msgs[0].basis.ambient_dim();
    if let Some(bad) = msgs.iter().find(|m| m.basis.ambient_dim() != p || m.basis.rank() != k) {
        return Err(protocol(
            Some(bad.machine_id),
            format!(
                "basis is {}x{}, expected {p}x{k}",
                bad.basis.ambient_dim(),
                bad.basis.rank()
            ),
        ));
    }
    for m in &msgs {
        ledger.scalars_uplinked += m.payload_scalars();
        ledger.messages += 1;
    }
    let points: Vec<SubspacePoint> = msgs.into_iter().map(|m| SubspacePoint::new(m.basis)).collect();
    let (center, average_projection) = barycenter(&points, k)?;
    Ok(Aggregate {
        basis: center.into_basis(),
        average_projection,
    })
}

/// Result of a full round.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributedRun {
    pub basis: OrthonormalBasis,
    pub average_projection: SymMatrix,
    pub ledger: CostLedger,
}

/// One round over pre-partitioned data: every worker step runs through
/// `transport`, then the coordinator aggregates.
pub fn run_partitioned(
    parts: &[Partition],
    k: usize,
    kind: EstimatorKind,
    transport: &dyn Transport,
) -> Result<DistributedRun> {
    let tasks = parts
        .iter()
        .map(|part| WorkerTask::new(part.machine_id, move || worker_step(part, k, kind)))
        .collect();
    let msgs = transport.gather(tasks)?;
    let mut ledger = CostLedger::default();
    let agg = coordinator_step(msgs, k, parts.len(), &mut ledger)?;
    Ok(DistributedRun {
        basis: agg.basis,
        average_projection: agg.average_projection,
        ledger,
    })
}

/// Partitions `data` across `m` machines and runs one round.
pub fn run_distributed(
    data: &DenseMatrix,
    m: usize,
    k: usize,
    kind: EstimatorKind,
    transport: &dyn Transport,
) -> Result<DistributedRun> {
    let parts = partition_rows(data, m)?;
    run_partitioned(&parts, k, kind, transport)
}

/// Sends the aggregated basis back to `m` machines. Returns the bases as
/// received and the traffic this added.
pub fn broadcast_back(
    basis: &OrthonormalBasis,
    m: usize,
    transport: &dyn Transport,
) -> Result<(Vec<OrthonormalBasis>, CostLedger)> {
    let received = transport.broadcast(basis, m)?;
    if received.len() != m {
        return Err(Error::Protocol {
            machine_id: None,
            reason: format!("delivered {} of {m} downlink messages", received.len()),
        });
    }
    let mut delta = CostLedger::default();
    let mut out = Vec::with_capacity(m);
    for msg in received {
        delta.scalars_downlinked += msg.payload_scalars();
        delta.messages += 1;
        out.push(msg.basis);
    }
    Ok((out, delta))
}
