//! Deterministic, partition-independent network generation.
//!
//! Synapses are generated on the receiver side: for a target column, every
//! eligible source neuron of every column in reach draws how many neurons of
//! the target column it contacts (`Binomial(n, p)`) and then which ones
//! (partial Fisher-Yates), all from the stream tagged
//! `(synapse, source gid, target column)`. Intra-column projections come
//! from every neuron; lateral ones from excitatory neurons only.
//!
//! Neuron ids are global: `column index * neurons_per_column + local index`,
//! with excitatory neurons at the lowest local indices.

pub mod connectome;
mod rng;

pub use rng::{stream_tag, RandomStream, StreamKind};

use crate::model::NeuronParams;
use crate::topology::{self, ColumnId, ColumnReach, GridSpec, StencilOffset};

/// Step index used for the initial-potential stream of each neuron.
pub const INITIAL_POTENTIAL_STEP: u64 = 1 << 63;

/// Directed recurrent connection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Synapse {
    pub source: u32,
    pub target: u32,
    pub weight: f32,
    pub delay_steps: u16,
}

/// Inverse-CDF sampler for `Binomial(n, p)` backed by a precomputed table.
///
/// The pmf is built by the ratio recurrence in log space and exponentiated
/// relative to its maximum, so no term underflows before normalization.
#[derive(Debug, Clone)]
pub struct BinomialTable {
    n: u32,
    p: f64,
    cdf: Vec<f64>,
}

impl BinomialTable {
    pub fn new(n: u32, p: f64) -> Self {
        debug_assert!((0.0..=1.0).contains(&p));
        let cdf = if p <= 0.0 || p >= 1.0 || n == 0 {
            Vec::new()
        } else {
            let log_ratio = (p / (1.0 - p)).ln();
            let mut log_pmf = Vec::with_capacity(n as usize + 1);
            let mut lp = f64::from(n) * (-p).ln_1p();
            log_pmf.push(lp);
            for k in 0..n {
                lp += (f64::from(n - k) / f64::from(k + 1)).ln() + log_ratio;
                log_pmf.push(lp);
            }
            let max = log_pmf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let pmf: Vec<f64> = log_pmf.iter().map(|&l| (l - max).exp()).collect();
            let total: f64 = pmf.iter().sum();
            let mut acc = 0.0;
            let mut cdf: Vec<f64> = pmf
                .iter()
                .map(|&q| {
                    acc += q;
                    acc / total
                })
                .collect();
            *cdf.last_mut().unwrap() = 1.0;
            cdf
        };
        BinomialTable { n, p, cdf }
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// Maps a uniform `u` in `[0, 1)` to a binomial variate.
    #[inline]
    pub fn quantile(&self, u: f64) -> u32 {
        if self.cdf.is_empty() {
            return if self.p >= 1.0 { self.n } else { 0 };
        }
        self.cdf.partition_point(|&c| c <= u).min(self.n as usize) as u32
    }

    #[inline]
    pub fn sample(&self, stream: &mut RandomStream) -> u32 {
        self.quantile(stream.next_f64())
    }
}

/// Receiver-side synapse generator for one network.
///
/// Caches the stencil and binomial tables; otherwise stateless, so any
/// number of generators built from the same inputs agree exactly.
#[derive(Debug, Clone)]
pub struct Projector {
    spec: GridSpec,
    seed: u64,
    offsets: Vec<StencilOffset>,
    tables: Vec<BinomialTable>,
    scratch: Vec<u32>,
    picked: Vec<u32>,
    swaps: Vec<u32>,
}

impl Projector {
    pub fn new(spec: &GridSpec, seed: u64) -> Self {
        Projector {
            spec: spec.clone(),
            seed,
            offsets: topology::stencil(spec),
            tables: Vec::new(),
            scratch: (0..spec.neurons_per_column).collect(),
            picked: Vec::new(),
            swaps: Vec::new(),
        }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn reach(&self, col: ColumnId) -> Vec<ColumnReach> {
        topology::columns_in_reach_with(col, &self.spec, &self.offsets)
    }

    fn table_index(&mut self, p: f64) -> usize {
        if let Some(i) = self
            .tables
            .iter()
            .position(|t| t.p.to_bits() == p.to_bits())
        {
            return i;
        }
        self.tables
            .push(BinomialTable::new(self.spec.neurons_per_column, p));
        self.tables.len() - 1
    }

    /// Calls `emit(source_gid, targets)` for every source neuron projecting
    /// into `post_col`, in ascending source order. `targets` are local indices
    /// within `post_col`, ascending and distinct, possibly empty.
    pub fn project<F>(&mut self, post_col: ColumnId, mut emit: F)
    where
        F: FnMut(u32, &[u32]),
    {
        let npc = self.spec.neurons_per_column;
        let n_exc = self.spec.excitatory_per_column();
        let post_index = post_col.index(&self.spec);
        for reach in self.reach(post_col) {
            let first_gid = reach.column.index(&self.spec) * npc;
            let exc_table = self.table_index(reach.probability(true));
            let inh_table = self.table_index(reach.probability(false));
            for local in 0..npc {
                let table = if local < n_exc { exc_table } else { inh_table };
                let source = first_gid + local;
                self.draw_targets(source, post_index, table);
                emit(source, &self.picked);
            }
        }
    }

    fn draw_targets(&mut self, source: u32, post_index: u32, table: usize) {
        self.picked.clear();
        let table = &self.tables[table];
        if table.p <= 0.0 {
            return;
        }
        let mut stream = RandomStream::tagged(
            StreamKind::Synapse,
            u64::from(source),
            u64::from(post_index),
            self.seed,
        );
        let k = table.sample(&mut stream) as usize;
        let n = self.spec.neurons_per_column;
        // Partial Fisher-Yates over the identity permutation in `scratch`.
        self.swaps.clear();
        for i in 0..k {
            let j = i + stream.below(n - i as u32) as usize;
            self.scratch.swap(i, j);
            self.swaps.push(j as u32);
        }
        self.picked.extend_from_slice(&self.scratch[..k]);
        for i in (0..k).rev() {
            self.scratch.swap(i, self.swaps[i] as usize);
        }
        self.picked.sort_unstable();
    }
}

/// Incoming synapses of every neuron of one column.
#[derive(Debug, Clone, PartialEq)]
pub struct IncomingTable {
    pub column: ColumnId,
    pub first_gid: u32,
    /// `offsets[i]..offsets[i + 1]` indexes the deliveries of local neuron i.
    pub offsets: Vec<u32>,
    /// Sorted by `(delay_steps, source)` within each neuron.
    pub entries: Vec<IncomingEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncomingEntry {
    pub source: u32,
    pub weight: f32,
    pub delay_steps: u16,
}

impl IncomingTable {
    pub fn neuron_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn incoming(&self, local: usize) -> &[IncomingEntry] {
        &self.entries[self.offsets[local] as usize..self.offsets[local + 1] as usize]
    }

    pub fn in_degree(&self, local: usize) -> u32 {
        self.offsets[local + 1] - self.offsets[local]
    }

    pub fn synapse_count(&self) -> u64 {
        self.entries.len() as u64
    }

    pub fn synapses(&self) -> impl Iterator<Item = Synapse> + '_ {
        (0..self.neuron_count()).flat_map(move |local| {
            let target = self.first_gid + local as u32;
            self.incoming(local).iter().map(move |e| Synapse {
                source: e.source,
                target,
                weight: e.weight,
                delay_steps: e.delay_steps,
            })
        })
    }
}

/// Efficacy of a synapse leaving neuron `gid`.
pub fn source_weight(gid: u32, spec: &GridSpec, params: &NeuronParams) -> f32 {
    if is_excitatory(gid, spec) {
        params.j_exc as f32
    } else {
        params.j_inh as f32
    }
}

pub fn is_excitatory(gid: u32, spec: &GridSpec) -> bool {
    gid % spec.neurons_per_column < spec.excitatory_per_column()
}

pub fn column_of(gid: u32, spec: &GridSpec) -> ColumnId {
    spec.column(gid / spec.neurons_per_column)
}

/// Builds the incoming table of `post_col`. Every recurrent synapse gets
/// the constant `delay_steps`.
pub fn generate_incoming(
    post_col: ColumnId,
    spec: &GridSpec,
    params: &NeuronParams,
    delay_steps: u16,
    seed: u64,
) -> IncomingTable {
    let mut projector = Projector::new(spec, seed);
    generate_incoming_with(&mut projector, post_col, params, delay_steps)
}

pub fn generate_incoming_with(
    projector: &mut Projector,
    post_col: ColumnId,
    params: &NeuronParams,
    delay_steps: u16,
) -> IncomingTable {
    let spec = projector.spec().clone();
    let npc = spec.neurons_per_column as usize;
    let mut per_target: Vec<Vec<IncomingEntry>> = vec![Vec::new(); npc];
    projector.project(post_col, |source, targets| {
        let weight = source_weight(source, &spec, params);
        for &t in targets {
            per_target[t as usize].push(IncomingEntry {
                source,
                weight,
                delay_steps,
            });
        }
    });

    let mut offsets = Vec::with_capacity(npc + 1);
    let mut entries = Vec::new();
    offsets.push(0);
    for mut list in per_target {
        list.sort_by_key(|e| (e.delay_steps, e.source));
        entries.extend(list);
        offsets.push(entries.len() as u32);
    }
    IncomingTable {
        column: post_col,
        first_gid: post_col.index(&spec) * spec.neurons_per_column,
        offsets,
        entries,
    }
}

/// Poisson sampler for the aggregated external input of each neuron.
#[derive(Debug, Clone)]
pub struct ExternalDrive {
    lambda: f64,
    p0: f64,
    seed: u64,
}

impl ExternalDrive {
    /// `dt` in ms. The mean arrival count per step is `c_ext * nu_ext * dt`.
    pub fn new(spec: &GridSpec, params: &NeuronParams, dt: f64, seed: u64) -> Self {
        let lambda = f64::from(spec.c_ext) * params.nu_ext * dt / 1000.0;
        ExternalDrive {
            lambda,
            p0: (-lambda).exp(),
            seed,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// External arrivals at neuron `gid` during step `step`.
    #[inline]
    pub fn count(&self, gid: u32, step: u64) -> u32 {
        if self.lambda <= 0.0 {
            return 0;
        }
        let mut stream =
            RandomStream::tagged(StreamKind::External, u64::from(gid), step, self.seed);
        let u = stream.next_f64();
        // Inversion: walk the CDF, updating the pmf by p_k = p_{k-1} * lambda / k.
        let mut k = 0u32;
        let mut pmf = self.p0;
        let mut cdf = pmf;
        while u >= cdf {
            k += 1;
            pmf *= self.lambda / f64::from(k);
            let next = cdf + pmf;
            if next == cdf {
                break;
            }
            cdf = next;
        }
        k
    }
}

pub fn external_arrival_count(
    gid: u32,
    step: u64,
    spec: &GridSpec,
    params: &NeuronParams,
    seed: u64,
    dt: f64,
) -> u32 {
    ExternalDrive::new(spec, params, dt, seed).count(gid, step)
}

/// Initial membrane potential, uniform in `[v_rest, theta)`.
pub fn initial_potential(gid: u32, params: &NeuronParams, seed: u64) -> f64 {
    let mut stream = RandomStream::tagged(
        StreamKind::External,
        u64::from(gid),
        INITIAL_POTENTIAL_STEP,
        seed,
    );
    params.v_rest + (params.theta - params.v_rest) * stream.next_f64()
}
