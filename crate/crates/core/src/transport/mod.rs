//! Message passing between workers.
//!
//! Two interchangeable backends carry the same encoded frames: bounded
//! in-process queues and a TCP mesh. Both guarantee reliable FIFO delivery
//! per (sender, receiver) pair.

pub mod codec;
pub mod inproc;
pub mod tcp;

use std::io;
use std::time::Duration;

use thiserror::Error;

use crate::partition::WorkerId;

pub use codec::{decode, encode, Message, SpikeBatch, SpikeRecord};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum TransportError {
    #[error("no route between worker {from} and worker {to}")]
    NoRoute { from: WorkerId, to: WorkerId },
    #[error("timed out after {0:?} waiting for worker {1}")]
    Timeout(Duration, WorkerId),
    #[error("worker {0} disconnected")]
    Disconnected(WorkerId),
    #[error("i/o with worker {peer}: {source}")]
    Io {
        peer: WorkerId,
        #[source]
        source: io::Error,
    },
    #[error("connection setup: {0}")]
    Setup(String),
    #[error(transparent)]
    Parse(#[from] codec::ParseError),
}

/// One worker's view of the mesh.
pub trait Endpoint: Send {
    fn worker(&self) -> WorkerId;

    /// Queues one encoded frame for `peer`. Blocks only when the bounded
    /// buffer toward `peer` is full.
    fn send(&mut self, peer: WorkerId, frame: Vec<u8>) -> Result<(), TransportError>;

    /// Next frame from `peer`, in send order.
    fn recv(&mut self, peer: WorkerId) -> Result<Vec<u8>, TransportError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum TransportMode {
    #[default]
    InProc,
    /// TCP over the given listen addresses, one per worker. With `None`
    /// every worker binds an ephemeral port on localhost.
    Tcp(Option<Vec<std::net::SocketAddr>>),
}
