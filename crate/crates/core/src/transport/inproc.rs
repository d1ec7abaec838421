//! In-process backend: one bounded channel per directed route.

use std::collections::BTreeMap;
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, SyncSender};
use std::time::Duration;

use super::{Endpoint, TransportError};
use crate::partition::WorkerId;

/// Frames that may be queued on one route before `send` blocks.
pub const ROUTE_CAPACITY: usize = 8;

pub struct InProcEndpoint {
    worker: WorkerId,
    outbound: BTreeMap<WorkerId, SyncSender<Vec<u8>>>,
    inbound: BTreeMap<WorkerId, Receiver<Vec<u8>>>,
    timeout: Duration,
}

/// Builds endpoints for `workers` workers with a channel for every
/// `(sender, receiver)` pair listed in `routes`.
pub fn mesh(
    workers: usize,
    routes: &[(WorkerId, WorkerId)],
    timeout: Duration,
) -> Vec<InProcEndpoint> {
    let mut endpoints: Vec<InProcEndpoint> = (0..workers)
        .map(|w| InProcEndpoint {
            worker: w as WorkerId,
            outbound: BTreeMap::new(),
            inbound: BTreeMap::new(),
            timeout,
        })
        .collect();
    for &(from, to) in routes {
        let (tx, rx) = mpsc::sync_channel(ROUTE_CAPACITY);
        endpoints[usize::from(from)].outbound.insert(to, tx);
        endpoints[usize::from(to)].inbound.insert(from, rx);
    }
    endpoints
}

impl Endpoint for InProcEndpoint {
    fn worker(&self) -> WorkerId {
        self.worker
    }

    fn send(&mut self, peer: WorkerId, frame: Vec<u8>) -> Result<(), TransportError> {
        let tx = self.outbound.get(&peer).ok_or(TransportError::NoRoute {
            from: self.worker,
            to: peer,
        })?;
        tx.send(frame)
            .map_err(|_| TransportError::Disconnected(peer))
    }

    fn recv(&mut self, peer: WorkerId) -> Result<Vec<u8>, TransportError> {
        let rx = self.inbound.get(&peer).ok_or(TransportError::NoRoute {
            from: peer,
            to: self.worker,
        })?;
        rx.recv_timeout(self.timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => TransportError::Timeout(self.timeout, peer),
            RecvTimeoutError::Disconnected => TransportError::Disconnected(peer),
        })
    }
}
