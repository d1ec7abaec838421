//! Column-to-worker assignment and stencil-limited routing.

use std::collections::BTreeSet;
use std::ops::Range;

use thiserror::Error;

use crate::topology::{self, GridSpec};

pub type WorkerId = u16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PartitionError {
    #[error("worker count must be at least 1")]
    NoWorkers,
    #[error("{workers} workers exceed the {columns} columns of the grid")]
    TooManyWorkers { workers: u32, columns: u32 },
    #[error("at most {} workers are supported", WorkerId::MAX)]
    WorkerIdOverflow,
}

/// Contiguous row-major blocks of columns, one per worker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    worker_count: u16,
    /// Column linear index -> owning worker.
    assignment: Vec<WorkerId>,
    ranges: Vec<Range<u32>>,
}

impl Partition {
    pub fn worker_count(&self) -> usize {
        usize::from(self.worker_count)
    }

    pub fn owner(&self, column_index: u32) -> WorkerId {
        self.assignment[column_index as usize]
    }

    /// Column indices owned by `worker`.
    pub fn owned(&self, worker: WorkerId) -> Range<u32> {
        self.ranges[usize::from(worker)].clone()
    }

    pub fn workers(&self) -> impl Iterator<Item = WorkerId> {
        0..self.worker_count
    }
}

/// Splits the columns into `workers` row-major blocks whose sizes differ by
/// at most one; the first `columns % workers` blocks take the extra column.
pub fn assign_columns(spec: &GridSpec, workers: u32) -> Result<Partition, PartitionError> {
    let columns = spec.column_count();
    if workers == 0 {
        return Err(PartitionError::NoWorkers);
    }
    if workers > columns {
        return Err(PartitionError::TooManyWorkers { workers, columns });
    }
    let worker_count = u16::try_from(workers).map_err(|_| PartitionError::WorkerIdOverflow)?;

    let base = columns / workers;
    let extra = columns % workers;
    let mut ranges = Vec::with_capacity(workers as usize);
    let mut assignment = Vec::with_capacity(columns as usize);
    let mut start = 0;
    for w in 0..workers {
        let len = base + u32::from(w < extra);
        ranges.push(start..start + len);
        assignment.extend(std::iter::repeat_n(w as WorkerId, len as usize));
        start += len;
    }
    Ok(Partition {
        worker_count,
        assignment,
        ranges,
    })
}

/// Which workers exchange spike batches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoutingTable {
    /// Per worker, ascending peers it sends to.
    pub send_to: Vec<Vec<WorkerId>>,
    /// Per worker, ascending peers it receives from.
    pub recv_from: Vec<Vec<WorkerId>>,
    /// Per column, ascending workers (possibly including the owner) that
    /// hold synapses leaving that column.
    pub column_destinations: Vec<Vec<WorkerId>>,
}

impl RoutingTable {
    /// Every worker that shares a route with `worker` in either direction.
    pub fn peers(&self, worker: WorkerId) -> Vec<WorkerId> {
        let w = usize::from(worker);
        let set: BTreeSet<WorkerId> = self.send_to[w]
            .iter()
            .chain(&self.recv_from[w])
            .copied()
            .collect();
        set.into_iter().collect()
    }
}

/// Worker `w` sends to worker `u` iff a column owned by `w` is a source in
/// reach of some column owned by `u`.
pub fn routing_table(partition: &Partition, spec: &GridSpec) -> RoutingTable {
    let offsets = topology::stencil(spec);
    let n = partition.worker_count();
    let mut send: Vec<BTreeSet<WorkerId>> = vec![BTreeSet::new(); n];
    let mut dest: Vec<BTreeSet<WorkerId>> = vec![BTreeSet::new(); spec.column_count() as usize];

    for target in spec.columns() {
        let receiver = partition.owner(target.index(spec));
        for reach in topology::columns_in_reach_with(target, spec, &offsets) {
            let source_index = reach.column.index(spec);
            dest[source_index as usize].insert(receiver);
            let sender = partition.owner(source_index);
            if sender != receiver {
                send[usize::from(sender)].insert(receiver);
            }
        }
    }

    let mut recv_from = vec![Vec::new(); n];
    for (w, peers) in send.iter().enumerate() {
        for &u in peers {
            recv_from[usize::from(u)].push(w as WorkerId);
        }
    }
    RoutingTable {
        send_to: send.into_iter().map(|s| s.into_iter().collect()).collect(),
        recv_from,
        column_destinations: dest.into_iter().map(|s| s.into_iter().collect()).collect(),
    }
}
