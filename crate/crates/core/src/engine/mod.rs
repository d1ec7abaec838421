//! Lockstep, epoch-driven simulation.
//!
//! Membranes are advanced in fixed steps; spikes travel as events. Each
//! worker owns a contiguous block of columns together with every synapse
//! landing on them. Workers advance independently for one epoch (the
//! minimum synaptic delay), then exchange the spikes emitted during it with
//! every routed peer. One batch, possibly empty, per route and epoch acts as
//! the barrier. Since no delay is shorter than an epoch, spikes exchanged
//! at the end of epoch `e` are never due before epoch `e + 1`.
//!
//! Results do not depend on the partition: the network and the external
//! input come from counter-based streams, and every neuron sums its
//! deliveries in ascending source order.

mod raster;
mod worker;

use std::net::{SocketAddr, TcpListener};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

pub use raster::Raster;

use crate::model::{NeuronParams, ParamsError};
use crate::partition::{self, Partition, PartitionError, RoutingTable, WorkerId};
use crate::topology::{GridSpec, SpecError};
use crate::transport::{self, inproc, tcp, Endpoint, TransportError, TransportMode};
use worker::{Worker, WorkerTotals};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error("worker {worker}: {source}")]
    Transport {
        worker: WorkerId,
        #[source]
        source: TransportError,
    },
    #[error("worker {worker}: protocol error with worker {peer}: {detail}")]
    Protocol {
        worker: WorkerId,
        peer: WorkerId,
        detail: String,
    },
    #[error("worker {0} panicked")]
    WorkerPanic(WorkerId),
    #[error("worker {0} aborted because another worker failed during setup")]
    Aborted(WorkerId),
}

impl EngineError {
    fn protocol(worker: WorkerId, peer: WorkerId, detail: String) -> Self {
        EngineError::Protocol {
            worker,
            peer,
            detail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitialPotential {
    /// Uniform in `[v_rest, theta)`, drawn per neuron from its own stream.
    #[default]
    Uniform,
    Rest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub grid: GridSpec,
    pub params: NeuronParams,
    pub dt_ms: f64,
    pub duration_ms: f64,
    /// Delay of every recurrent synapse; also the epoch length.
    pub delay_ms: f64,
    pub seed: u64,
    pub workers: u32,
    pub transport: TransportMode,
    pub initial_v: InitialPotential,
    pub record_raster: bool,
    /// How long a worker waits for a peer before giving up.
    pub timeout: Duration,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            grid: GridSpec::default(),
            params: NeuronParams::default(),
            dt_ms: 0.1,
            duration_ms: 1000.0,
            delay_ms: 1.0,
            seed: 1,
            workers: 1,
            transport: TransportMode::InProc,
            initial_v: InitialPotential::Uniform,
            record_raster: false,
            timeout: transport::DEFAULT_TIMEOUT,
        }
    }
}

impl SimConfig {
    pub fn delay_steps(&self) -> u16 {
        (self.delay_ms / self.dt_ms).round() as u16
    }

    /// Steps per exchange round: the minimum synaptic delay.
    pub fn epoch_steps(&self) -> u16 {
        self.delay_steps()
    }

    /// Requested duration in steps, padded up to whole epochs.
    pub fn total_steps(&self) -> u64 {
        let e = u64::from(self.epoch_steps());
        let raw = (self.duration_ms / self.dt_ms).round() as u64;
        raw.div_ceil(e) * e
    }

    pub fn epochs(&self) -> u64 {
        self.total_steps() / u64::from(self.epoch_steps())
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.grid.validate()?;
        self.params.validate()?;
        if !(self.dt_ms > 0.0 && self.dt_ms.is_finite()) {
            return Err(EngineError::Config(format!(
                "dt_ms = {} must be positive",
                self.dt_ms
            )));
        }
        if !(self.duration_ms >= 0.0 && self.duration_ms.is_finite()) {
            return Err(EngineError::Config(format!(
                "duration_ms = {} must be non-negative",
                self.duration_ms
            )));
        }
        let steps = (self.delay_ms / self.dt_ms).round();
        if !(1.0..=f64::from(u16::MAX)).contains(&steps) {
            return Err(EngineError::Config(format!(
                "delay_ms = {} must span between 1 and {} steps of {} ms",
                self.delay_ms,
                u16::MAX,
                self.dt_ms
            )));
        }
        let lambda = f64::from(self.grid.c_ext) * self.params.nu_ext * self.dt_ms / 1000.0;
        if lambda > 100.0 {
            return Err(EngineError::Config(format!(
                "external input of {lambda} arrivals per step is too large; reduce dt_ms"
            )));
        }
        if self.epochs() > u64::from(u32::MAX) {
            return Err(EngineError::Config(
                "run too long for 32-bit epoch ids".into(),
            ));
        }
        if self.workers == 0 {
            return Err(PartitionError::NoWorkers.into());
        }
        if let TransportMode::Tcp(Some(addrs)) = &self.transport {
            if addrs.len() != self.workers as usize {
                return Err(EngineError::Config(format!(
                    "{} tcp peers given for {} workers",
                    addrs.len(),
                    self.workers
                )));
            }
        }
        Ok(())
    }
}

/// Structural memory of the simulation state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct MemoryAccount {
    pub bytes: u64,
    pub synapses: u64,
}

impl MemoryAccount {
    /// `None` for a network without synapses.
    pub fn bytes_per_synapse(&self) -> Option<f64> {
        (self.synapses > 0).then(|| self.bytes as f64 / self.synapses as f64)
    }
}

impl std::ops::Add for MemoryAccount {
    type Output = MemoryAccount;

    fn add(self, rhs: MemoryAccount) -> MemoryAccount {
        MemoryAccount {
            bytes: self.bytes + rhs.bytes,
            synapses: self.synapses + rhs.synapses,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub n_neurons: u64,
    /// Realized recurrent synapses held by the workers of this run.
    pub synapses: u64,
    pub steps: u64,
    pub epochs: u64,
    pub sim_ms: f64,
    /// One per spike delivery through one synapse.
    pub recurrent_events: u64,
    /// One per external Poisson arrival.
    pub external_events: u64,
    pub total_events: u64,
    pub spikes_total: u64,
    pub mean_rate_hz: f64,
    /// Epoch loop only; network generation is excluded.
    pub wall_seconds: f64,
    pub generation_seconds: f64,
    /// `wall_seconds / total_events`, absent when there were no events.
    pub time_per_event: Option<f64>,
    pub memory: MemoryAccount,
}

impl RunReport {
    pub fn peak_accounted_bytes(&self) -> u64 {
        self.memory.bytes
    }

    pub fn bytes_per_synapse(&self) -> Option<f64> {
        self.memory.bytes_per_synapse()
    }
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    /// Present when `record_raster` is set.
    pub raster: Option<Raster>,
}

enum EndpointSetup {
    None,
    Ready(Box<dyn Endpoint>),
    Tcp {
        listener: TcpListener,
        addrs: Arc<Vec<SocketAddr>>,
        peers: Vec<WorkerId>,
        timeout: Duration,
    },
}

impl EndpointSetup {
    fn connect(self, worker: WorkerId) -> Result<Option<Box<dyn Endpoint>>, EngineError> {
        match self {
            EndpointSetup::None => Ok(None),
            EndpointSetup::Ready(ep) => Ok(Some(ep)),
            EndpointSetup::Tcp {
                listener,
                addrs,
                peers,
                timeout,
            } => tcp::establish(worker, listener, &addrs, &peers, timeout)
                .map(|ep| Some(Box::new(ep) as Box<dyn Endpoint>))
                .map_err(|source| EngineError::Transport { worker, source }),
        }
    }
}

fn endpoint_setups(
    config: &SimConfig,
    routing: &RoutingTable,
) -> Result<Vec<EndpointSetup>, EngineError> {
    let n = config.workers as usize;
    if n == 1 {
        return Ok(vec![EndpointSetup::None]);
    }
    match &config.transport {
        TransportMode::InProc => {
            let routes: Vec<(WorkerId, WorkerId)> = routing
                .send_to
                .iter()
                .enumerate()
                .flat_map(|(w, peers)| peers.iter().map(move |&u| (w as WorkerId, u)))
                .collect();
            Ok(inproc::mesh(n, &routes, config.timeout)
                .into_iter()
                .map(|ep| EndpointSetup::Ready(Box::new(ep)))
                .collect())
        }
        TransportMode::Tcp(addrs) => {
            let setup_err = |e: std::io::Error| EngineError::Transport {
                worker: 0,
                source: TransportError::Setup(e.to_string()),
            };
            let listeners = match addrs {
                None => tcp::bind_local(n).map_err(setup_err)?,
                Some(addrs) => addrs
                    .iter()
                    .map(TcpListener::bind)
                    .collect::<Result<_, _>>()
                    .map_err(setup_err)?,
            };
            let addrs: Vec<SocketAddr> = listeners
                .iter()
                .map(|l| l.local_addr())
                .collect::<Result<_, _>>()
                .map_err(setup_err)?;
            let addrs = Arc::new(addrs);
            Ok(listeners
                .into_iter()
                .enumerate()
                .map(|(w, listener)| EndpointSetup::Tcp {
                    listener,
                    addrs: Arc::clone(&addrs),
                    peers: routing.peers(w as WorkerId),
                    timeout: config.timeout,
                })
                .collect())
        }
    }
}

fn drive_worker(
    mut worker: Worker,
    mut endpoint: Option<Box<dyn Endpoint>>,
    epochs: u32,
) -> Result<WorkerTotals, EngineError> {
    for epoch in 0..epochs {
        worker.run_epoch(epoch, endpoint.as_deref_mut())?;
    }
    worker.finish(epochs, endpoint.as_deref_mut())?;
    Ok(worker.into_totals())
}

fn assemble(
    config: &SimConfig,
    totals: Vec<WorkerTotals>,
    wall: Duration,
    generation: Duration,
    worker_count: usize,
) -> RunOutput {
    let steps = config.total_steps();
    let sim_ms = steps as f64 * config.dt_ms;
    let n_neurons = config.grid.neuron_count();
    let mut report = RunReport {
        n_neurons,
        synapses: 0,
        steps,
        epochs: config.epochs(),
        sim_ms,
        recurrent_events: 0,
        external_events: 0,
        total_events: 0,
        spikes_total: 0,
        mean_rate_hz: 0.0,
        wall_seconds: wall.as_secs_f64().max(1e-9),
        generation_seconds: generation.as_secs_f64(),
        time_per_event: None,
        memory: MemoryAccount::default(),
    };
    let mut spikes = Vec::new();
    for t in totals {
        report.synapses += t.synapses;
        report.recurrent_events += t.recurrent_events;
        report.external_events += t.external_events;
        report.spikes_total += t.spikes;
        report.memory = report.memory + t.memory;
        spikes.extend(t.raster);
    }
    // Shared read-only tables, counted once.
    report.memory.bytes += (config.grid.column_count() as usize
        * (std::mem::size_of::<WorkerId>() + std::mem::size_of::<Vec<WorkerId>>())
        + worker_count * 2 * std::mem::size_of::<Vec<WorkerId>>())
        as u64;
    report.total_events = report.recurrent_events + report.external_events;
    if sim_ms > 0.0 {
        report.mean_rate_hz = report.spikes_total as f64 / (n_neurons as f64 * sim_ms / 1000.0);
    }
    if report.total_events > 0 {
        report.time_per_event = Some(report.wall_seconds / report.total_events as f64);
    }
    RunOutput {
        report,
        raster: config
            .record_raster
            .then(|| Raster::new(config.dt_ms, spikes)),
    }
}

/// Runs a full simulation with all workers in this process.
pub fn run(config: &SimConfig) -> Result<RunOutput, EngineError> {
    config.validate()?;
    let partition = partition::assign_columns(&config.grid, config.workers)?;
    let routing = partition::routing_table(&partition, &config.grid);
    let epochs = config.epochs() as u32;
    let setups = endpoint_setups(config, &routing)?;

    let shared = Arc::new((config.clone(), partition, routing));
    let (ready_tx, ready_rx) = mpsc::channel::<(WorkerId, Result<(), EngineError>)>();
    let mut go = Vec::new();
    let mut handles = Vec::new();
    let t0 = Instant::now();
    for (w, setup) in setups.into_iter().enumerate() {
        let id = w as WorkerId;
        let shared = Arc::clone(&shared);
        let ready_tx = ready_tx.clone();
        let (go_tx, go_rx) = mpsc::channel::<bool>();
        go.push(go_tx);
        handles.push(thread::spawn(move || {
            let (config, partition, routing) = &*shared;
            let worker = Worker::new(config, partition, routing, id);
            let endpoint = match setup.connect(id) {
                Ok(ep) => {
                    let _ = ready_tx.send((id, Ok(())));
                    ep
                }
                Err(e) => {
                    let _ = ready_tx.send((id, Err(e)));
                    return None;
                }
            };
            drop(ready_tx);
            if !go_rx.recv().unwrap_or(false) {
                return Some(Err(EngineError::Aborted(id)));
            }
            Some(drive_worker(worker, endpoint, epochs))
        }));
    }
    drop(ready_tx);

    let mut setup_error = None;
    for _ in 0..handles.len() {
        match ready_rx.recv() {
            Ok((_, Ok(()))) => {}
            Ok((_, Err(e))) => {
                setup_error.get_or_insert(e);
            }
            // A worker thread died before reporting in.
            Err(_) => break,
        }
    }
    let generation = t0.elapsed();
    let proceed = setup_error.is_none();
    let t1 = Instant::now();
    for g in &go {
        let _ = g.send(proceed);
    }

    let mut totals = Vec::with_capacity(handles.len());
    let mut first_error = setup_error;
    for (w, h) in handles.into_iter().enumerate() {
        match h.join() {
            Ok(Some(Ok(t))) => totals.push(t),
            Ok(Some(Err(e))) => {
                if !matches!(e, EngineError::Aborted(_)) || first_error.is_none() {
                    first_error.get_or_insert(e);
                }
            }
            Ok(None) => {}
            Err(_) => {
                first_error.get_or_insert(EngineError::WorkerPanic(w as WorkerId));
            }
        }
    }
    let wall = t1.elapsed();
    if let Some(e) = first_error {
        return Err(e);
    }
    let (config, partition, _) = &*shared;
    Ok(assemble(
        config,
        totals,
        wall,
        generation,
        partition.worker_count(),
    ))
}

/// Runs only worker `rank` of a TCP mesh whose listen addresses are
/// `addrs`; the other ranks run elsewhere. Counts in the report cover this
/// worker alone; `n_neurons` and rates refer to the whole network.
pub fn run_rank(
    config: &SimConfig,
    rank: WorkerId,
    addrs: &[SocketAddr],
) -> Result<RunOutput, EngineError> {
    config.validate()?;
    if addrs.len() != config.workers as usize || usize::from(rank) >= addrs.len() {
        return Err(EngineError::Config(format!(
            "rank {rank} needs one address per worker ({} given for {} workers)",
            addrs.len(),
            config.workers
        )));
    }
    let partition: Partition = partition::assign_columns(&config.grid, config.workers)?;
    let routing = partition::routing_table(&partition, &config.grid);
    let epochs = config.epochs() as u32;

    let t0 = Instant::now();
    let worker = Worker::new(config, &partition, &routing, rank);
    let endpoint = if config.workers == 1 {
        None
    } else {
        let listener =
            TcpListener::bind(addrs[usize::from(rank)]).map_err(|e| EngineError::Transport {
                worker: rank,
                source: TransportError::Setup(e.to_string()),
            })?;
        EndpointSetup::Tcp {
            listener,
            addrs: Arc::new(addrs.to_vec()),
            peers: routing.peers(rank),
            timeout: config.timeout,
        }
        .connect(rank)?
    };
    let generation = t0.elapsed();
    let t1 = Instant::now();
    let totals = drive_worker(worker, endpoint, epochs)?;
    let wall = t1.elapsed();
    Ok(assemble(config, vec![totals], wall, generation, 1))
}
