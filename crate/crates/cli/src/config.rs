//! Flat `key = value` configuration.
//!
//! Values are layered: built-in defaults, then the config file, then
//! `--set` pairs, then dedicated flags.

use std::fs;
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};

use colgrid_core::{Boundary, NeuronParams, SimConfig, TransportMode};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown configuration key '{0}'")]
    UnknownKey(String),
    #[error("{key}: invalid value '{value}': {reason}")]
    Value {
        key: String,
        value: String,
        reason: String,
    },
    #[error("{path}:{line}: expected 'key = value'")]
    Syntax { path: String, line: usize },
    #[error("reading {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

type ParamField = fn(&mut NeuronParams) -> &mut f64;

const MODEL_KEYS: [(&str, ParamField, &str); 11] = [
    (
        "model.tau_m",
        |p| &mut p.tau_m,
        "membrane time constant, ms",
    ),
    ("model.v_rest", |p| &mut p.v_rest, "resting potential, mV"),
    ("model.theta", |p| &mut p.theta, "firing threshold, mV"),
    ("model.v_reset", |p| &mut p.v_reset, "reset potential, mV"),
    (
        "model.tau_arp",
        |p| &mut p.tau_arp,
        "absolute refractory period, ms",
    ),
    ("model.tau_c", |p| &mut p.tau_c, "adaptation decay time, ms"),
    (
        "model.alpha_c",
        |p| &mut p.alpha_c,
        "adaptation increment per spike",
    ),
    (
        "model.g_c",
        |p| &mut p.g_c,
        "adaptation current per unit, mV/ms",
    ),
    ("model.j_exc", |p| &mut p.j_exc, "excitatory efficacy, mV"),
    ("model.j_inh", |p| &mut p.j_inh, "inhibitory efficacy, mV"),
    ("model.j_ext", |p| &mut p.j_ext, "external efficacy, mV"),
];

const KEYS: [(&str, &str); 19] = [
    ("grid.width", "columns along x"),
    ("grid.height", "columns along y"),
    ("grid.boundary", "open | torus"),
    ("neurons_per_column", "neurons in each column"),
    ("p_local", "intra-column connection probability"),
    ("lateral_A", "lateral kernel amplitude"),
    ("cutoff", "smallest lateral probability kept"),
    ("c_ext", "external synapses per neuron"),
    ("nu_ext_hz", "rate of each external synapse, Hz"),
    ("dt_ms", "integration step, ms"),
    ("duration_ms", "simulated time, ms"),
    ("delay_ms", "recurrent synaptic delay, ms"),
    ("seed", "master seed"),
    ("workers", "number of workers"),
    ("transport", "inproc | tcp"),
    ("tcp.peers", "comma-separated host:port per worker (tcp)"),
    ("output.dir", "directory for all outputs"),
    ("raster", "on | off: write the spike raster"),
    ("model.*", "neuron parameters, listed below"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TransportKind {
    InProc,
    Tcp,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub sim: SimConfig,
    pub output_dir: PathBuf,
    pub transport: TransportKind,
    pub tcp_peers: Option<Vec<SocketAddr>>,
}

impl Default for Settings {
    fn default() -> Self {
        Settings {
            sim: SimConfig::default(),
            output_dir: PathBuf::from("out"),
            transport: TransportKind::InProc,
            tcp_peers: None,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError::Value {
        key: key.into(),
        value: value.into(),
        reason: e.to_string(),
    })
}

fn on_off(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "on" | "true" | "1" => Ok(true),
        "off" | "false" | "0" => Ok(false),
        _ => Err(ConfigError::Value {
            key: key.into(),
            value: value.into(),
            reason: "expected on or off".into(),
        }),
    }
}

pub fn parse_peers(value: &str) -> Result<Vec<SocketAddr>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.to_socket_addrs()
                .map_err(|e| format!("{s}: {e}"))?
                .next()
                .ok_or_else(|| format!("{s}: no address"))
        })
        .collect()
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let sim = &mut self.sim;
        let grid = &mut sim.grid;
        match key {
            "grid.width" => grid.width = parse(key, value)?,
            "grid.height" => grid.height = parse(key, value)?,
            "grid.boundary" => grid.boundary = parse::<Boundary>(key, value)?,
            "neurons_per_column" => grid.neurons_per_column = parse(key, value)?,
            "p_local" => grid.p_local = parse(key, value)?,
            "lateral_A" => grid.lateral_amplitude = parse(key, value)?,
            "cutoff" => grid.cutoff = parse(key, value)?,
            "c_ext" => grid.c_ext = parse(key, value)?,
            "nu_ext_hz" => sim.params.nu_ext = parse(key, value)?,
            "dt_ms" => sim.dt_ms = parse(key, value)?,
            "duration_ms" => sim.duration_ms = parse(key, value)?,
            "delay_ms" => sim.delay_ms = parse(key, value)?,
            "seed" => sim.seed = parse(key, value)?,
            "workers" => {
                let w: u32 = parse(key, value)?;
                if w == 0 {
                    return Err(ConfigError::Value {
                        key: key.into(),
                        value: value.into(),
                        reason: "must be at least 1".into(),
                    });
                }
                sim.workers = w;
            }
            "transport" => {
                self.transport = match value {
                    "inproc" => TransportKind::InProc,
                    "tcp" => TransportKind::Tcp,
                    _ => {
                        return Err(ConfigError::Value {
                            key: key.into(),
                            value: value.into(),
                            reason: "expected inproc or tcp".into(),
                        })
                    }
                }
            }
            "tcp.peers" => {
                let peers = parse_peers(value).map_err(|reason| ConfigError::Value {
                    key: key.into(),
                    value: value.into(),
                    reason,
                })?;
                self.tcp_peers = (!peers.is_empty()).then_some(peers);
            }
            "output.dir" => self.output_dir = PathBuf::from(value),
            "raster" => sim.record_raster = on_off(key, value)?,
            _ => match MODEL_KEYS.iter().find(|(k, _, _)| *k == key) {
                Some((_, field, _)) => *field(&mut sim.params) = parse(key, value)?,
                None => return Err(ConfigError::UnknownKey(key.into())),
            },
        }
        Ok(())
    }

    /// Current value of `key` in config-file syntax.
    pub fn get(&self, key: &str) -> Option<String> {
        let sim = &self.sim;
        let grid = &sim.grid;
        Some(match key {
            "grid.width" => grid.width.to_string(),
            "grid.height" => grid.height.to_string(),
            "grid.boundary" => grid.boundary.to_string(),
            "neurons_per_column" => grid.neurons_per_column.to_string(),
            "p_local" => grid.p_local.to_string(),
            "lateral_A" => grid.lateral_amplitude.to_string(),
            "cutoff" => grid.cutoff.to_string(),
            "c_ext" => grid.c_ext.to_string(),
            "nu_ext_hz" => sim.params.nu_ext.to_string(),
            "dt_ms" => sim.dt_ms.to_string(),
            "duration_ms" => sim.duration_ms.to_string(),
            "delay_ms" => sim.delay_ms.to_string(),
            "seed" => sim.seed.to_string(),
            "workers" => sim.workers.to_string(),
            "transport" => match self.transport {
                TransportKind::InProc => "inproc".into(),
                TransportKind::Tcp => "tcp".into(),
            },
            "tcp.peers" => self
                .tcp_peers
                .as_ref()
                .map(|p| {
                    p.iter()
                        .map(|a| a.to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                })
                .unwrap_or_default(),
            "output.dir" => self.output_dir.display().to_string(),
            "raster" => if sim.record_raster { "on" } else { "off" }.into(),
            _ => {
                let (_, field, _) = MODEL_KEYS.iter().find(|(k, _, _)| *k == key)?;
                let mut params = sim.params.clone();
                field(&mut params).to_string()
            }
        })
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), ConfigError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                path: origin.into(),
                line: i + 1,
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Engine configuration with the transport settings folded in.
    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            transport: match self.transport {
                TransportKind::InProc => TransportMode::InProc,
                TransportKind::Tcp => TransportMode::Tcp(self.tcp_peers.clone()),
            },
            ..self.sim.clone()
        }
    }
}

/// Every configuration key with its default, for `--help`.
pub fn keys_help() -> String {
    let defaults = Settings::default();
    let mut out =
        String::from("Configuration keys (config file, or --set KEY=VALUE) and defaults:\n");
    for (key, about) in KEYS {
        let default = defaults.get(key).unwrap_or_default();
        if key == "model.*" {
            out.push_str(&format!("  {key:<20} {about}\n"));
        } else {
            out.push_str(&format!(
                "  {key:<20} {:<12} {about}\n",
                display_default(&default)
            ));
        }
    }
    for (key, _, about) in MODEL_KEYS {
        let default = defaults.get(key).unwrap_or_default();
        out.push_str(&format!(
            "  {key:<20} {:<12} {about}\n",
            display_default(&default)
        ));
    }
    out
}

fn display_default(value: &str) -> String {
    if value.is_empty() {
        "(none)".into()
    } else {
        value.into()
    }
}

/// All key names accepted by [`Settings::set`].
#[cfg(test)]
pub fn all_keys() -> Vec<&'static str> {
    KEYS.iter()
        .map(|(k, _)| *k)
        .filter(|k| *k != "model.*")
        .chain(MODEL_KEYS.iter().map(|(k, _, _)| *k))
        .collect()
}
