//! Spike rasters: `spike_time_ms<TAB>neuron_gid` lines sorted by time, then gid.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Raster {
    pub dt_ms: f64,
    /// `(step, gid)`, sorted.
    pub spikes: Vec<(u64, u32)>,
}

/// Decimal places needed to print multiples of `dt` exactly (at most 9).
fn decimals_for(dt: f64) -> usize {
    (0..=9)
        .find(|&d| {
            let scaled = dt * 10f64.powi(d as i32);
            (scaled - scaled.round()).abs() < 1e-9 * scaled.max(1.0)
        })
        .unwrap_or(9)
}

impl Raster {
    pub fn new(dt_ms: f64, mut spikes: Vec<(u64, u32)>) -> Self {
        spikes.sort_unstable();
        Raster { dt_ms, spikes }
    }

    pub fn len(&self) -> usize {
        self.spikes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spikes.is_empty()
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> io::Result<()> {
        let decimals = decimals_for(self.dt_ms);
        for &(step, gid) in &self.spikes {
            writeln!(out, "{:.*}\t{}", decimals, step as f64 * self.dt_ms, gid)?;
        }
        Ok(())
    }

    pub fn to_tsv(&self) -> String {
        let mut out = Vec::new();
        self.write_to(&mut out)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(out).expect("ascii output")
    }

    pub fn write_file(&self, path: &Path) -> io::Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()
    }

    /// Merges raster files written for disjoint neuron sets (e.g. one per
    /// process) into one sorted raster.
    pub fn merge_files(dt_ms: f64, paths: &[impl AsRef<Path>]) -> io::Result<Raster> {
        let mut spikes = Vec::new();
        for path in paths {
            for line in BufReader::new(File::open(path)?).lines() {
                let line = line?;
                if line.is_empty() {
                    continue;
                }
                let bad = || {
                    io::Error::new(
                        io::ErrorKind::InvalidData,
                        format!("bad raster line '{line}'"),
                    )
                };
                let (time, gid) = line.split_once('\t').ok_or_else(bad)?;
                let time: f64 = time.parse().map_err(|_| bad())?;
                let gid: u32 = gid.parse().map_err(|_| bad())?;
                spikes.push(((time / dt_ms).round() as u64, gid));
            }
        }
        Ok(Raster::new(dt_ms, spikes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn formatting() {
        let r = Raster::new(0.1, vec![(7, 12)]);
        assert_eq!(r.to_tsv(), "0.7\t12\n");
        assert_eq!(Raster::new(0.1, vec![]).to_tsv(), "");
        let r = Raster::new(0.1, vec![(10, 3), (10, 1), (2, 5)]);
        assert_eq!(r.to_tsv(), "0.2\t5\n1.0\t1\n1.0\t3\n");
        assert_eq!(Raster::new(0.25, vec![(3, 0)]).to_tsv(), "0.75\t0\n");
        assert_eq!(Raster::new(1.0, vec![(3, 0)]).to_tsv(), "3\t0\n");
    }

    #[test]
    fn merge_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.tsv");
        let b = dir.path().join("b.tsv");
        Raster::new(0.1, vec![(7, 12), (30, 1)])
            .write_file(&a)
            .unwrap();
        Raster::new(0.1, vec![(7, 3), (12345, 9)])
            .write_file(&b)
            .unwrap();
        let merged = Raster::merge_files(0.1, &[a, b]).unwrap();
        assert_eq!(merged.spikes, vec![(7, 3), (7, 12), (30, 1), (12345, 9)]);
    }
}
