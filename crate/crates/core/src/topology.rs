//! Column grid geometry, connection probabilities and closed-form structural
//! counts.
//!
//! Distances are measured center-to-center in units of the grid step, so the
//! step itself cancels out of the lateral kernel `A * exp(-d^2 / 2)`.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Half-width of the box searched for lateral offsets (a 7x7 box).
pub const STENCIL_RADIUS: i32 = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecError {
    #[error("grid dimensions must be at least 1x1 (got {0}x{1})")]
    EmptyGrid(u32, u32),
    #[error("neurons_per_column must be at least 1")]
    NoNeurons,
    #[error("{name} = {value} is outside [0, 1]")]
    Probability { name: &'static str, value: f64 },
    #[error("excitatory_fraction = {0} must lie strictly between 0 and 1")]
    ExcitatoryFraction(f64),
    #[error("network of {0} neurons does not fit 32-bit neuron ids")]
    TooManyNeurons(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Offsets falling outside the grid are dropped.
    #[default]
    Open,
    /// Offsets wrap modulo the grid dimensions.
    Torus,
}

impl fmt::Display for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Boundary::Open => f.write_str("open"),
            Boundary::Torus => f.write_str("torus"),
        }
    }
}

impl FromStr for Boundary {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "open" => Ok(Boundary::Open),
            "torus" => Ok(Boundary::Torus),
            other => Err(format!("unknown boundary '{other}' (expected open|torus)")),
        }
    }
}

/// Grid dimensions, column composition and connectivity parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub width: u32,
    pub height: u32,
    pub neurons_per_column: u32,
    pub excitatory_fraction: f64,
    /// Connection probability between two neurons of the same column.
    pub p_local: f64,
    /// Amplitude `A` of the lateral Gaussian kernel.
    pub lateral_amplitude: f64,
    /// Grid step in micrometers. Informational only.
    pub grid_step_um: f64,
    /// Lateral probabilities below this value are cut to zero.
    pub cutoff: f64,
    /// External synapses per neuron.
    pub c_ext: u32,
    pub boundary: Boundary,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            width: 1,
            height: 1,
            neurons_per_column: 1240,
            excitatory_fraction: 0.8,
            p_local: 0.8,
            lateral_amplitude: 0.05,
            grid_step_um: 100.0,
            cutoff: 1.0 / 1000.0,
            c_ext: 540,
            boundary: Boundary::Open,
        }
    }
}

impl GridSpec {
    pub fn with_grid(width: u32, height: u32) -> Self {
        GridSpec {
            width,
            height,
            ..GridSpec::default()
        }
    }

    pub fn validate(&self) -> Result<(), SpecError> {
        if self.width == 0 || self.height == 0 {
            return Err(SpecError::EmptyGrid(self.width, self.height));
        }
        if self.neurons_per_column == 0 {
            return Err(SpecError::NoNeurons);
        }
        for (name, value) in [
            ("p_local", self.p_local),
            ("lateral_amplitude", self.lateral_amplitude),
            ("cutoff", self.cutoff),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SpecError::Probability { name, value });
            }
        }
        if !(self.excitatory_fraction > 0.0 && self.excitatory_fraction < 1.0) {
            return Err(SpecError::ExcitatoryFraction(self.excitatory_fraction));
        }
        if self.neuron_count() > u64::from(u32::MAX) {
            return Err(SpecError::TooManyNeurons(self.neuron_count()));
        }
        Ok(())
    }

    pub fn column_count(&self) -> u32 {
        self.width * self.height
    }

    pub fn neuron_count(&self) -> u64 {
        u64::from(self.width) * u64::from(self.height) * u64::from(self.neurons_per_column)
    }

    /// Excitatory neurons per column; they occupy the lowest local indices.
    pub fn excitatory_per_column(&self) -> u32 {
        (f64::from(self.neurons_per_column) * self.excitatory_fraction).round() as u32
    }

    pub fn inhibitory_per_column(&self) -> u32 {
        self.neurons_per_column - self.excitatory_per_column()
    }

    pub fn column(&self, index: u32) -> ColumnId {
        ColumnId {
            x: index % self.width,
            y: index / self.width,
        }
    }

    pub fn columns(&self) -> impl Iterator<Item = ColumnId> + '_ {
        (0..self.column_count()).map(|i| self.column(i))
    }
}

/// Position of a column in the grid. Linearized row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ColumnId {
    pub x: u32,
    pub y: u32,
}

impl ColumnId {
    pub fn new(x: u32, y: u32) -> Self {
        ColumnId { x, y }
    }

    pub fn index(self, spec: &GridSpec) -> u32 {
        self.y * spec.width + self.x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StencilOffset {
    pub dx: i32,
    pub dy: i32,
    pub p: f64,
}

impl StencilOffset {
    pub fn distance_squared(&self) -> i32 {
        self.dx * self.dx + self.dy * self.dy
    }
}

/// Lateral connection probability at squared distance `d_squared` (in grid
/// steps), zero when below the cutoff.
pub fn lateral_probability(d_squared: f64, spec: &GridSpec) -> f64 {
    debug_assert!(d_squared >= 0.0);
    let p = spec.lateral_amplitude * (-d_squared / 2.0).exp();
    if p >= spec.cutoff {
        p
    } else {
        0.0
    }
}

/// Lateral offsets inside the 7x7 box that survive the cutoff, ordered by
/// `(dy, dx)`. The origin is excluded.
pub fn stencil(spec: &GridSpec) -> Vec<StencilOffset> {
    let mut out = Vec::new();
    for dy in -STENCIL_RADIUS..=STENCIL_RADIUS {
        for dx in -STENCIL_RADIUS..=STENCIL_RADIUS {
            if dx == 0 && dy == 0 {
                continue;
            }
            let p = lateral_probability(f64::from(dx * dx + dy * dy), spec);
            if p > 0.0 {
                out.push(StencilOffset { dx, dy, p });
            }
        }
    }
    out
}

/// A source column projecting into some target column.
///
/// Under a torus several stencil offsets can land on the same column (and
/// even on the target itself) when the grid is narrower than the stencil;
/// their lateral probabilities are summed into one entry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnReach {
    pub column: ColumnId,
    /// `p_local` for the target column itself, zero otherwise.
    pub local: f64,
    /// Summed lateral probability. Applies to excitatory sources only.
    pub lateral: f64,
}

impl ColumnReach {
    /// Per-target connection probability for a source neuron of this column.
    pub fn probability(&self, excitatory: bool) -> f64 {
        let p = if excitatory {
            self.local + self.lateral
        } else {
            self.local
        };
        p.min(1.0)
    }
}

/// Source columns projecting into `col`, including `col` itself, ordered by
/// linear column index.
pub fn columns_in_reach(col: ColumnId, spec: &GridSpec) -> Vec<ColumnReach> {
    columns_in_reach_with(col, spec, &stencil(spec))
}

pub(crate) fn columns_in_reach_with(
    col: ColumnId,
    spec: &GridSpec,
    offsets: &[StencilOffset],
) -> Vec<ColumnReach> {
    let mut merged: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
    merged.insert(col.index(spec), (spec.p_local, 0.0));

    let (w, h) = (i64::from(spec.width), i64::from(spec.height));
    for off in offsets {
        let mut x = i64::from(col.x) + i64::from(off.dx);
        let mut y = i64::from(col.y) + i64::from(off.dy);
        match spec.boundary {
            Boundary::Open => {
                if !(0..w).contains(&x) || !(0..h).contains(&y) {
                    continue;
                }
            }
            Boundary::Torus => {
                x = x.rem_euclid(w);
                y = y.rem_euclid(h);
            }
        }
        let index = (y * w + x) as u32;
        merged.entry(index).or_insert((0.0, 0.0)).1 += off.p;
    }

    merged
        .into_iter()
        .map(|(index, (local, lateral))| ColumnReach {
            column: spec.column(index),
            local,
            lateral,
        })
        .collect()
}

/// Closed-form structural expectations for a grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsReport {
    pub n_columns: u64,
    pub n_neurons: u64,
    pub expected_recurrent_synapses: f64,
    pub expected_total_equivalent_synapses: f64,
    pub expected_synapses_per_neuron: f64,
    /// Intra-column share of `expected_synapses_per_neuron`.
    pub expected_intra_per_neuron: f64,
}

/// Expected synapse counts, computed without materializing any synapse.
pub fn expected_counts(spec: &GridSpec) -> CountsReport {
    let offsets = stencil(spec);
    let n = f64::from(spec.neurons_per_column);
    let n_exc = f64::from(spec.excitatory_per_column());
    let n_inh = f64::from(spec.inhibitory_per_column());

    let mut recurrent = 0.0;
    let mut intra = 0.0;
    for col in spec.columns() {
        // Expected in-degree of one target neuron in `col`.
        let mut per_target = 0.0;
        for reach in columns_in_reach_with(col, spec, &offsets) {
            let from_column = n_exc * reach.probability(true) + n_inh * reach.probability(false);
            if reach.column == col {
                intra += n * n * spec.p_local;
            }
            per_target += from_column;
        }
        recurrent += per_target * n;
    }

    let n_neurons = spec.neuron_count();
    let neurons = n_neurons as f64;
    CountsReport {
        n_columns: u64::from(spec.column_count()),
        n_neurons,
        expected_recurrent_synapses: recurrent,
        expected_total_equivalent_synapses: recurrent + neurons * f64::from(spec.c_ext),
        expected_synapses_per_neuron: recurrent / neurons,
        expected_intra_per_neuron: intra / neurons,
    }
}
