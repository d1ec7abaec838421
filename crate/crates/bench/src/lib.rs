//! Fixtures shared by the micro-benchmarks.

use colgrid_core::transport::codec::{SpikeBatch, SpikeRecord};
use colgrid_core::{Boundary, GridSpec, SimConfig};

/// Full-size columns on a small torus.
pub fn torus(width: u32, height: u32) -> GridSpec {
    GridSpec {
        boundary: Boundary::Torus,
        ..GridSpec::with_grid(width, height)
    }
}

/// A short run on a reduced network, cheap enough to repeat many times.
pub fn small_run(workers: u32) -> SimConfig {
    SimConfig {
        grid: GridSpec {
            neurons_per_column: 200,
            ..torus(4, 4)
        },
        duration_ms: 50.0,
        workers,
        ..SimConfig::default()
    }
}

/// A sorted batch of `n` spikes spread over one 10-step epoch.
pub fn spike_batch(n: u32) -> SpikeBatch {
    let mut records: Vec<SpikeRecord> = (0..n)
        .map(|i| SpikeRecord {
            gid: i.wrapping_mul(2_654_435_761) % 1_000_000,
            step_offset: (i % 10) as u16,
        })
        .collect();
    records.sort_by_key(|r| (r.step_offset, r.gid));
    SpikeBatch {
        epoch: 7,
        source_worker: 1,
        records,
    }
}
