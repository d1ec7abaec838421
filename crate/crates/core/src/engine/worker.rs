//! One worker: owned neurons, the synapses landing on them, the delay ring
//! and the per-epoch exchange.

use std::mem::size_of;

use super::{EngineError, MemoryAccount, SimConfig};
use crate::model::{Integrator, NeuronState};
use crate::netgen::{self, ExternalDrive, Projector};
use crate::partition::{Partition, RoutingTable, WorkerId};
use crate::topology::GridSpec;
use crate::transport::codec::{self, Message};
use crate::transport::{Endpoint, SpikeBatch, SpikeRecord};

/// Synapse as stored on the receiving worker; the source is implicit.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LocalSynapse {
    /// Index into the worker's neuron arrays.
    pub target: u32,
    pub weight: f32,
    pub delay: u16,
}

/// Synapses of one source sharing a delay: `synapses[start..end]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct DelayGroup {
    pub delay: u16,
    pub start: u32,
    pub end: u32,
}

/// Outgoing view of the synapses landing on one worker, keyed by source gid.
#[derive(Debug, Default)]
pub(crate) struct FanoutTable {
    sources: Vec<u32>,
    /// `group_offsets[i]..group_offsets[i + 1]` are the groups of `sources[i]`.
    group_offsets: Vec<u32>,
    groups: Vec<DelayGroup>,
    synapses: Vec<LocalSynapse>,
}

impl FanoutTable {
    /// Generates, receiver side, every synapse targeting the columns in
    /// `owned` (linear indices, ascending).
    pub fn build(config: &SimConfig, owned: std::ops::Range<u32>) -> FanoutTable {
        let spec = &config.grid;
        let npc = spec.neurons_per_column;
        let delay = config.delay_steps();
        let mut projector = Projector::new(spec, config.seed);

        // (source, start, end) into `targets`, in generation order.
        let mut chunks: Vec<(u32, u32, u32)> = Vec::new();
        let mut targets: Vec<u32> = Vec::new();
        for (slot, col_index) in owned.clone().enumerate() {
            let base = slot as u32 * npc;
            projector.project(spec.column(col_index), |source, picked| {
                if picked.is_empty() {
                    return;
                }
                let start = targets.len() as u32;
                targets.extend(picked.iter().map(|&t| base + t));
                chunks.push((source, start, targets.len() as u32));
            });
        }
        // Stable: chunks of one source stay in ascending column order.
        chunks.sort_by_key(|c| c.0);

        let mut table = FanoutTable {
            synapses: Vec::with_capacity(targets.len()),
            ..FanoutTable::default()
        };
        let mut i = 0;
        while i < chunks.len() {
            let source = chunks[i].0;
            let weight = netgen::source_weight(source, spec, &config.params);
            let first = table.synapses.len();
            while i < chunks.len() && chunks[i].0 == source {
                let (_, s, e) = chunks[i];
                table
                    .synapses
                    .extend(
                        targets[s as usize..e as usize]
                            .iter()
                            .map(|&t| LocalSynapse {
                                target: t,
                                weight,
                                delay,
                            }),
                    );
                i += 1;
            }
            table.synapses[first..].sort_by_key(|s| (s.delay, s.target));
            table.sources.push(source);
            table.group_offsets.push(table.groups.len() as u32);
            let mut start = first;
            while start < table.synapses.len() {
                let delay = table.synapses[start].delay;
                let mut end = start + 1;
                while end < table.synapses.len() && table.synapses[end].delay == delay {
                    end += 1;
                }
                table.groups.push(DelayGroup {
                    delay,
                    start: start as u32,
                    end: end as u32,
                });
                start = end;
            }
        }
        table.group_offsets.push(table.groups.len() as u32);
        table.sources.shrink_to_fit();
        table.group_offsets.shrink_to_fit();
        table.groups.shrink_to_fit();
        table
    }

    pub fn synapse_count(&self) -> u64 {
        self.synapses.len() as u64
    }

    pub fn max_delay(&self) -> u16 {
        self.groups.iter().map(|g| g.delay).max().unwrap_or(1)
    }

    fn bytes(&self) -> u64 {
        (self.sources.capacity() * size_of::<u32>()
            + self.group_offsets.capacity() * size_of::<u32>()
            + self.groups.capacity() * size_of::<DelayGroup>()
            + self.synapses.capacity() * size_of::<LocalSynapse>()) as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Arrival {
    source: u32,
    group: u32,
}

/// Circular buffer of pending deliveries, one slot per future step.
#[derive(Debug)]
struct DelayRing {
    slots: Vec<Vec<Arrival>>,
}

impl DelayRing {
    fn new(max_delay: u16) -> Self {
        DelayRing {
            slots: (0..=max_delay).map(|_| Vec::new()).collect(),
        }
    }

    fn slot(&mut self, step: u64) -> &mut Vec<Arrival> {
        let len = self.slots.len() as u64;
        &mut self.slots[(step % len) as usize]
    }

    fn bytes(&self) -> u64 {
        (self.slots.capacity() * size_of::<Vec<Arrival>>()
            + self
                .slots
                .iter()
                .map(|s| s.capacity() * size_of::<Arrival>())
                .sum::<usize>()) as u64
    }
}

#[derive(Debug, Default, Clone)]
pub(crate) struct WorkerTotals {
    pub recurrent_events: u64,
    pub external_events: u64,
    pub spikes: u64,
    pub synapses: u64,
    pub memory: MemoryAccount,
    pub raster: Vec<(u64, u32)>,
}

pub(crate) struct Worker {
    id: WorkerId,
    spec: GridSpec,
    first_column: u32,
    first_gid: u32,
    states: Vec<NeuronState>,
    impulses: Vec<f64>,
    fanout: FanoutTable,
    ring: DelayRing,
    integrator: Integrator,
    drive: ExternalDrive,
    j_ext: f64,
    epoch_steps: u64,
    send_to: Vec<WorkerId>,
    recv_from: Vec<WorkerId>,
    /// Per owned column: peers that need its spikes, and whether this
    /// worker needs them itself.
    column_peers: Vec<(Vec<WorkerId>, bool)>,
    epoch_spikes: Vec<SpikeRecord>,
    record_raster: bool,
    totals: WorkerTotals,
}

impl Worker {
    pub fn new(
        config: &SimConfig,
        partition: &Partition,
        routing: &RoutingTable,
        id: WorkerId,
    ) -> Worker {
        let spec = config.grid.clone();
        let owned = partition.owned(id);
        let npc = spec.neurons_per_column;
        let first_gid = owned.start * npc;
        let n_local = (owned.len() as u32 * npc) as usize;

        let states = (0..n_local as u32)
            .map(|i| match config.initial_v {
                super::InitialPotential::Rest => NeuronState::at_rest(&config.params),
                super::InitialPotential::Uniform => NeuronState {
                    v: netgen::initial_potential(first_gid + i, &config.params, config.seed),
                    c: 0.0,
                    refractory_steps_left: 0,
                },
            })
            .collect();

        let fanout = FanoutTable::build(config, owned.clone());
        let ring = DelayRing::new(fanout.max_delay().max(config.delay_steps()));
        let column_peers = owned
            .clone()
            .map(|c| {
                let dests = &routing.column_destinations[c as usize];
                (
                    dests.iter().copied().filter(|&w| w != id).collect(),
                    dests.contains(&id),
                )
            })
            .collect();

        Worker {
            id,
            first_column: owned.start,
            first_gid,
            states,
            impulses: vec![0.0; n_local],
            fanout,
            ring,
            integrator: Integrator::new(&config.params, config.dt_ms),
            drive: ExternalDrive::new(&spec, &config.params, config.dt_ms, config.seed),
            j_ext: config.params.j_ext,
            epoch_steps: u64::from(config.epoch_steps()),
            send_to: routing.send_to[usize::from(id)].clone(),
            recv_from: routing.recv_from[usize::from(id)].clone(),
            column_peers,
            epoch_spikes: Vec::new(),
            record_raster: config.record_raster,
            totals: WorkerTotals::default(),
            spec,
        }
    }

    /// Advances every owned neuron through one step.
    fn step(&mut self, step: u64, offset: u16) {
        let slot = self.ring.slot(step);
        slot.sort_unstable();
        for arrival in slot.drain(..) {
            let g = self.fanout.groups[arrival.group as usize];
            for syn in &self.fanout.synapses[g.start as usize..g.end as usize] {
                self.impulses[syn.target as usize] += f64::from(syn.weight);
            }
        }

        let external = self.drive.lambda() > 0.0;
        for (i, (state, impulse)) in self.states.iter_mut().zip(&mut self.impulses).enumerate() {
            let gid = self.first_gid + i as u32;
            let mut sum = *impulse;
            *impulse = 0.0;
            if external {
                let k = self.drive.count(gid, step);
                self.totals.external_events += u64::from(k);
                for _ in 0..k {
                    sum += self.j_ext;
                }
            }
            if self.integrator.advance(state, sum) {
                self.epoch_spikes.push(SpikeRecord {
                    gid,
                    step_offset: offset,
                });
            }
        }
    }

    /// Queues the local deliveries of a spike emitted at `emit_step`.
    fn schedule(&mut self, gid: u32, emit_step: u64) {
        let i = match self.fanout.sources.binary_search(&gid) {
            Ok(i) => i,
            Err(_) => return,
        };
        let (a, b) = (
            self.fanout.group_offsets[i],
            self.fanout.group_offsets[i + 1],
        );
        for gi in a..b {
            let g = self.fanout.groups[gi as usize];
            self.totals.recurrent_events += u64::from(g.end - g.start);
            self.ring
                .slot(emit_step + u64::from(g.delay))
                .push(Arrival {
                    source: gid,
                    group: gi,
                });
        }
    }

    fn local_column(&self, gid: u32) -> usize {
        (gid / self.spec.neurons_per_column - self.first_column) as usize
    }

    /// Runs one epoch: local steps, then the spike exchange.
    pub fn run_epoch(
        &mut self,
        epoch: u32,
        endpoint: Option<&mut (dyn Endpoint + 'static)>,
    ) -> Result<(), EngineError> {
        let start = u64::from(epoch) * self.epoch_steps;
        self.epoch_spikes.clear();
        for offset in 0..self.epoch_steps {
            self.step(start + offset, offset as u16);
        }
        self.totals.spikes += self.epoch_spikes.len() as u64;
        if self.record_raster {
            self.totals.raster.extend(
                self.epoch_spikes
                    .iter()
                    .map(|r| (start + u64::from(r.step_offset), r.gid)),
            );
        }

        let spikes = std::mem::take(&mut self.epoch_spikes);
        if let Some(endpoint) = endpoint {
            for &peer in &self.send_to {
                let records = spikes
                    .iter()
                    .filter(|r| {
                        self.column_peers[self.local_column(r.gid)]
                            .0
                            .contains(&peer)
                    })
                    .copied()
                    .collect();
                let frame = codec::encode(&SpikeBatch {
                    epoch,
                    source_worker: self.id,
                    records,
                })
                .map_err(|e| EngineError::protocol(self.id, peer, e.to_string()))?;
                endpoint
                    .send(peer, frame)
                    .map_err(|source| EngineError::Transport {
                        worker: self.id,
                        source,
                    })?;
            }
            for r in &spikes {
                if self.column_peers[self.local_column(r.gid)].1 {
                    self.schedule(r.gid, start + u64::from(r.step_offset));
                }
            }
            for pi in 0..self.recv_from.len() {
                let peer = self.recv_from[pi];
                let frame = endpoint
                    .recv(peer)
                    .map_err(|source| EngineError::Transport {
                        worker: self.id,
                        source,
                    })?;
                let batch = self.check_batch(peer, epoch, &frame)?;
                for r in batch.records {
                    self.schedule(r.gid, start + u64::from(r.step_offset));
                }
            }
        } else {
            for r in &spikes {
                self.schedule(r.gid, start + u64::from(r.step_offset));
            }
        }
        self.epoch_spikes = spikes;
        Ok(())
    }

    fn check_batch(
        &self,
        peer: WorkerId,
        epoch: u32,
        frame: &[u8],
    ) -> Result<SpikeBatch, EngineError> {
        let batch = match codec::decode_message(frame) {
            Ok(Message::Spikes(b)) => b,
            Ok(other) => {
                return Err(EngineError::protocol(
                    self.id,
                    peer,
                    format!("expected spike batch for epoch {epoch}, got {other:?}"),
                ))
            }
            Err(e) => {
                return Err(EngineError::Transport {
                    worker: self.id,
                    source: e.into(),
                })
            }
        };
        if batch.epoch != epoch || batch.source_worker != peer {
            return Err(EngineError::protocol(
                self.id,
                peer,
                format!(
                    "expected epoch {epoch} from worker {peer}, got epoch {} from worker {}",
                    batch.epoch, batch.source_worker
                ),
            ));
        }
        if !batch.is_sorted()
            || batch
                .records
                .iter()
                .any(|r| u64::from(r.step_offset) >= self.epoch_steps)
        {
            return Err(EngineError::protocol(
                self.id,
                peer,
                "malformed spike batch".into(),
            ));
        }
        Ok(batch)
    }

    /// Closing handshake: one terminate frame per route.
    pub fn finish(
        &mut self,
        epochs: u32,
        endpoint: Option<&mut (dyn Endpoint + 'static)>,
    ) -> Result<(), EngineError> {
        let Some(endpoint) = endpoint else {
            return Ok(());
        };
        let terminate = codec::encode_message(&Message::Terminate {
            source_worker: self.id,
            epoch: epochs,
        })
        .expect("terminate frame");
        for &peer in &self.send_to {
            endpoint
                .send(peer, terminate.clone())
                .map_err(|source| EngineError::Transport {
                    worker: self.id,
                    source,
                })?;
        }
        for &peer in &self.recv_from {
            let frame = endpoint
                .recv(peer)
                .map_err(|source| EngineError::Transport {
                    worker: self.id,
                    source,
                })?;
            match codec::decode_message(&frame) {
                Ok(Message::Terminate { epoch, .. }) if epoch == epochs => {}
                other => {
                    return Err(EngineError::protocol(
                        self.id,
                        peer,
                        format!("expected terminate after epoch {epochs}, got {other:?}"),
                    ))
                }
            }
        }
        Ok(())
    }

    pub fn memory(&self) -> MemoryAccount {
        let bytes = (self.states.capacity() * size_of::<NeuronState>()
            + self.impulses.capacity() * size_of::<f64>()
            + self.epoch_spikes.capacity() * size_of::<SpikeRecord>()
            + self.column_peers.capacity() * size_of::<(Vec<WorkerId>, bool)>()
            + self
                .column_peers
                .iter()
                .map(|p| p.0.capacity() * size_of::<WorkerId>())
                .sum::<usize>()) as u64
            + self.fanout.bytes()
            + self.ring.bytes();
        MemoryAccount {
            bytes,
            synapses: self.fanout.synapse_count(),
        }
    }

    pub fn into_totals(mut self) -> WorkerTotals {
        self.totals.synapses = self.fanout.synapse_count();
        self.totals.memory = self.memory();
        self.totals
    }
}

#[cfg(test)]
mod tests {
    use std::collections::VecDeque;

    use super::*;
    use crate::partition::{assign_columns, routing_table};
    use crate::topology::Boundary;
    use crate::transport::TransportError;

    /// Replays scripted frames and swallows everything sent.
    struct Scripted {
        inbound: VecDeque<Vec<u8>>,
    }

    impl Endpoint for Scripted {
        fn worker(&self) -> WorkerId {
            0
        }

        fn send(&mut self, _peer: WorkerId, _frame: Vec<u8>) -> Result<(), TransportError> {
            Ok(())
        }

        fn recv(&mut self, peer: WorkerId) -> Result<Vec<u8>, TransportError> {
            self.inbound
                .pop_front()
                .ok_or(TransportError::Disconnected(peer))
        }
    }

    fn two_worker_setup() -> (SimConfig, Partition, RoutingTable) {
        let config = SimConfig {
            grid: GridSpec {
                neurons_per_column: 20,
                boundary: Boundary::Torus,
                ..GridSpec::with_grid(2, 1)
            },
            workers: 2,
            ..SimConfig::default()
        };
        let partition = assign_columns(&config.grid, 2).unwrap();
        let routing = routing_table(&partition, &config.grid);
        (config, partition, routing)
    }

    fn batch(epoch: u32, source_worker: WorkerId, records: Vec<SpikeRecord>) -> Vec<u8> {
        codec::encode(&SpikeBatch {
            epoch,
            source_worker,
            records,
        })
        .unwrap()
    }

    fn run_with(frames: Vec<Vec<u8>>) -> Result<(), EngineError> {
        let (config, partition, routing) = two_worker_setup();
        let mut worker = Worker::new(&config, &partition, &routing, 0);
        let mut endpoint: Box<dyn Endpoint> = Box::new(Scripted {
            inbound: frames.into(),
        });
        worker.run_epoch(0, Some(endpoint.as_mut()))?;
        worker.finish(1, Some(endpoint.as_mut()))
    }

    #[test]
    fn accepts_well_formed_exchange() {
        let terminate = codec::encode_message(&Message::Terminate {
            source_worker: 1,
            epoch: 1,
        })
        .unwrap();
        run_with(vec![
            batch(
                0,
                1,
                vec![SpikeRecord {
                    gid: 25,
                    step_offset: 3,
                }],
            ),
            terminate,
        ])
        .unwrap();
    }

    #[test]
    fn epoch_mismatch_is_a_protocol_error() {
        let err = run_with(vec![batch(1, 1, vec![])]).unwrap_err();
        assert!(
            matches!(
                err,
                EngineError::Protocol {
                    worker: 0,
                    peer: 1,
                    ..
                }
            ),
            "{err}"
        );
    }

    #[test]
    fn offset_outside_epoch_is_rejected() {
        let err = run_with(vec![batch(
            0,
            1,
            vec![SpikeRecord {
                gid: 25,
                step_offset: 10,
            }],
        )])
        .unwrap_err();
        assert!(matches!(err, EngineError::Protocol { .. }), "{err}");
    }

    #[test]
    fn early_terminate_is_rejected() {
        let terminate = codec::encode_message(&Message::Terminate {
            source_worker: 1,
            epoch: 0,
        })
        .unwrap();
        let err = run_with(vec![terminate]).unwrap_err();
        assert!(matches!(err, EngineError::Protocol { .. }), "{err}");
    }

    #[test]
    fn garbage_frame_is_a_transport_error() {
        let err = run_with(vec![b"nonsense".to_vec()]).unwrap_err();
        assert!(
            matches!(err, EngineError::Transport { worker: 0, .. }),
            "{err}"
        );
    }

    #[test]
    fn lost_peer_is_reported() {
        let err = run_with(vec![]).unwrap_err();
        assert!(matches!(
            err,
            EngineError::Transport {
                source: TransportError::Disconnected(1),
                ..
            }
        ));
    }

    #[test]
    fn remote_spike_is_delivered_after_one_epoch() {
        let (config, partition, routing) = two_worker_setup();
        let mut worker = Worker::new(&config, &partition, &routing, 0);
        let fan_out = worker
            .fanout
            .sources
            .binary_search(&25)
            .map(|i| {
                let (a, b) = (
                    worker.fanout.group_offsets[i],
                    worker.fanout.group_offsets[i + 1],
                );
                worker.fanout.groups[a as usize..b as usize]
                    .iter()
                    .map(|g| u64::from(g.end - g.start))
                    .sum::<u64>()
            })
            .unwrap_or(0);
        assert!(fan_out > 0);
        let before = worker.totals.recurrent_events;
        worker.check_batch(1, 0, &batch(0, 1, vec![])).unwrap();
        worker.schedule(25, 3);
        assert_eq!(worker.totals.recurrent_events - before, fan_out);
        // Due at step 3 + 10: nothing lands in the slots of steps 4..13.
        for step in 4..13 {
            assert!(worker.ring.slot(step).is_empty());
        }
        assert_eq!(worker.ring.slot(13).len(), 1);
    }
}
