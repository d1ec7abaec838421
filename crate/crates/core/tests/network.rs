use std::collections::BTreeMap;

use colgrid_core::netgen::{self, connectome};
use colgrid_core::{expected_counts, Boundary, GridSpec, NeuronParams};

/// Per target column: source column index -> (local p, lateral p), built
/// straight from the kernel without the library's stencil.
fn reach_oracle(spec: &GridSpec, x: u32, y: u32) -> BTreeMap<u32, (f64, f64)> {
    let mut reach = BTreeMap::new();
    reach.insert(y * spec.width + x, (spec.p_local, 0.0));
    for dy in -3i64..=3 {
        for dx in -3i64..=3 {
            if dx == 0 && dy == 0 {
                continue;
            }
            let p = spec.lateral_amplitude * (-((dx * dx + dy * dy) as f64) / 2.0).exp();
            if p < spec.cutoff {
                continue;
            }
            let (w, h) = (i64::from(spec.width), i64::from(spec.height));
            let (sx, sy) = (i64::from(x) + dx, i64::from(y) + dy);
            let (sx, sy) = match spec.boundary {
                Boundary::Torus => (sx.rem_euclid(w), sy.rem_euclid(h)),
                Boundary::Open if (0..w).contains(&sx) && (0..h).contains(&sy) => (sx, sy),
                Boundary::Open => continue,
            };
            reach.entry((sy * w + sx) as u32).or_insert((0.0, 0.0)).1 += p;
        }
    }
    reach
}

fn check_realized(spec: &GridSpec, seed: u64) {
    let params = NeuronParams::default();
    let npc = f64::from(spec.neurons_per_column);
    let n_exc = spec.excitatory_per_column();
    let mut realized = 0u64;
    let mut mean = 0.0;
    let mut var = 0.0;
    for col in spec.columns() {
        let reach = reach_oracle(spec, col.x, col.y);
        for &(local, lateral) in reach.values() {
            let p_exc = (local + lateral).min(1.0);
            let p_inh = local.min(1.0);
            let n_inh = npc - f64::from(n_exc);
            mean += npc * (f64::from(n_exc) * p_exc + n_inh * p_inh);
            var += npc * (f64::from(n_exc) * p_exc * (1.0 - p_exc) + n_inh * p_inh * (1.0 - p_inh));
        }
        let table = netgen::generate_incoming(col, spec, &params, 10, seed);
        realized += table.synapse_count();
        for s in table.synapses() {
            let source_col = s.source / spec.neurons_per_column;
            let target_col = s.target / spec.neurons_per_column;
            assert_eq!(target_col, col.index(spec));
            let &(local, lateral) = reach.get(&source_col).unwrap_or_else(|| {
                panic!("synapse {} -> {} outside the stencil", s.source, s.target)
            });
            if lateral > 0.0 && local == 0.0 {
                assert!(
                    netgen::is_excitatory(s.source, spec),
                    "inhibitory lateral source {}",
                    s.source
                );
            }
        }
    }
    let expected = expected_counts(spec).expected_recurrent_synapses;
    assert!(
        (expected - mean).abs() < 1e-6 * mean,
        "closed form {expected} vs oracle {mean}"
    );
    let z = (realized as f64 - mean) / var.sqrt();
    assert!(
        z.abs() < 3.0,
        "realized {realized}, expected {mean}, z = {z}"
    );
}

#[test]
fn realized_counts_match_expectation() {
    check_realized(
        &GridSpec {
            neurons_per_column: 200,
            boundary: Boundary::Torus,
            ..GridSpec::with_grid(6, 5)
        },
        3,
    );
    check_realized(
        &GridSpec {
            neurons_per_column: 200,
            ..GridSpec::with_grid(7, 4)
        },
        4,
    );
    // Narrower than the stencil: wrapped offsets land on one column.
    check_realized(
        &GridSpec {
            neurons_per_column: 300,
            boundary: Boundary::Torus,
            ..GridSpec::with_grid(2, 3)
        },
        5,
    );
}

#[test]
fn connectome_file_round_trip() {
    let spec = GridSpec {
        neurons_per_column: 40,
        boundary: Boundary::Torus,
        ..GridSpec::with_grid(3, 3)
    };
    let params = NeuronParams::default();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("net.dpsc");
    let mut file = std::io::BufWriter::new(std::fs::File::create(&path).unwrap());
    let written = connectome::write_connectome(&mut file, &spec, &params, 10, 11).unwrap();
    drop(file);
    let (header, neurons) = connectome::read_connectome(&mut std::io::BufReader::new(
        std::fs::File::open(&path).unwrap(),
    ))
    .unwrap();
    assert_eq!(header.width, 3);
    assert_eq!(neurons.len(), 360);
    assert_eq!(neurons.iter().map(Vec::len).sum::<usize>() as u64, written);
    let col = spec.column(4);
    let table = netgen::generate_incoming(col, &spec, &params, 10, 11);
    for local in 0..40 {
        assert_eq!(table.incoming(local), &neurons[160 + local][..]);
    }
}
