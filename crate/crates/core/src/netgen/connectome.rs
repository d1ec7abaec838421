//! Binary connectome dump.
//!
//! ```text
//! header:  "DPSC" | version u8 = 1 | width u32 | height u32 | neurons/column u32 | seed u64
//! body:    per target neuron in gid order:
//!            in-degree u32, then in-degree x (source u32, weight f32, delay u16)
//! ```
//!
//! Everything is little-endian.

use std::io::{self, Read, Write};

use thiserror::Error;

use super::{generate_incoming_with, IncomingEntry, Projector};
use crate::model::NeuronParams;
use crate::topology::GridSpec;

pub const MAGIC: [u8; 4] = *b"DPSC";
pub const VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum ConnectomeError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic {0:02x?}")]
    Magic([u8; 4]),
    #[error("unsupported version {0}")]
    Version(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConnectomeHeader {
    pub width: u32,
    pub height: u32,
    pub neurons_per_column: u32,
    pub seed: u64,
}

/// Generates the full network column by column and streams it to `out`.
/// Returns the number of synapses written.
pub fn write_connectome<W: Write>(
    out: &mut W,
    spec: &GridSpec,
    params: &NeuronParams,
    delay_steps: u16,
    seed: u64,
) -> Result<u64, ConnectomeError> {
    out.write_all(&MAGIC)?;
    out.write_all(&[VERSION])?;
    out.write_all(&spec.width.to_le_bytes())?;
    out.write_all(&spec.height.to_le_bytes())?;
    out.write_all(&spec.neurons_per_column.to_le_bytes())?;
    out.write_all(&seed.to_le_bytes())?;

    let mut projector = Projector::new(spec, seed);
    let mut written = 0;
    for col in spec.columns() {
        let table = generate_incoming_with(&mut projector, col, params, delay_steps);
        for local in 0..table.neuron_count() {
            let incoming = table.incoming(local);
            out.write_all(&(incoming.len() as u32).to_le_bytes())?;
            for e in incoming {
                out.write_all(&e.source.to_le_bytes())?;
                out.write_all(&e.weight.to_le_bytes())?;
                out.write_all(&e.delay_steps.to_le_bytes())?;
            }
            written += incoming.len() as u64;
        }
    }
    Ok(written)
}

fn read_array<const N: usize, R: Read>(input: &mut R) -> io::Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

/// Reads a dump back: the header and, per target neuron, its incoming list.
pub fn read_connectome<R: Read>(
    input: &mut R,
) -> Result<(ConnectomeHeader, Vec<Vec<IncomingEntry>>), ConnectomeError> {
    let magic = read_array::<4, _>(input)?;
    if magic != MAGIC {
        return Err(ConnectomeError::Magic(magic));
    }
    let [version] = read_array::<1, _>(input)?;
    if version != VERSION {
        return Err(ConnectomeError::Version(version));
    }
    let header = ConnectomeHeader {
        width: u32::from_le_bytes(read_array(input)?),
        height: u32::from_le_bytes(read_array(input)?),
        neurons_per_column: u32::from_le_bytes(read_array(input)?),
        seed: u64::from_le_bytes(read_array(input)?),
    };
    let n =
        u64::from(header.width) * u64::from(header.height) * u64::from(header.neurons_per_column);
    let mut neurons = Vec::with_capacity(n as usize);
    for _ in 0..n {
        let degree = u32::from_le_bytes(read_array(input)?);
        let mut list = Vec::with_capacity(degree as usize);
        for _ in 0..degree {
            list.push(IncomingEntry {
                source: u32::from_le_bytes(read_array(input)?),
                weight: f32::from_le_bytes(read_array(input)?),
                delay_steps: u16::from_le_bytes(read_array(input)?),
            });
        }
        neurons.push(list);
    }
    Ok((header, neurons))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netgen::generate_incoming;

    #[test]
    fn dump_round_trip() {
        let spec = GridSpec {
            neurons_per_column: 30,
            ..GridSpec::with_grid(2, 3)
        };
        let params = NeuronParams::default();
        let mut buf = Vec::new();
        let written = write_connectome(&mut buf, &spec, &params, 10, 77).unwrap();
        assert_eq!(&buf[..5], b"DPSC\x01");
        assert_eq!(buf.len() as u64, 25 + 4 * 180 + 10 * written);

        let (header, neurons) = read_connectome(&mut buf.as_slice()).unwrap();
        assert_eq!(
            header,
            ConnectomeHeader {
                width: 2,
                height: 3,
                neurons_per_column: 30,
                seed: 77
            }
        );
        assert_eq!(neurons.len(), 180);
        let col = spec.column(4);
        let table = generate_incoming(col, &spec, &params, 10, 77);
        for local in 0..30 {
            assert_eq!(neurons[4 * 30 + local], table.incoming(local));
        }
    }

    #[test]
    fn rejects_bad_magic() {
        let err = read_connectome(&mut &b"XXXX\x01"[..]).unwrap_err();
        assert!(matches!(err, ConnectomeError::Magic(_)));
    }
}
