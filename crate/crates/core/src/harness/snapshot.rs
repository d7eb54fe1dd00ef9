//! Versioned weight snapshots.
//!
//! Layout: the line `memstdp-snapshot 1`, one line of JSON metadata, then the
//! device conductances as little-endian `f64`, synapse-major and device-minor.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::device_model::{DeviceState, ModelParams, MultiDeviceSynapse};
use crate::error::{Error, Result};

const MAGIC: &str = "memstdp-snapshot";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotMeta {
    /// Experiment that wrote the snapshot.
    pub kind: String,
    pub n_inputs: usize,
    pub n_outputs: usize,
    pub devices_per_synapse: usize,
    pub epoch: usize,
    pub seed: u64,
    pub config_hash: String,
    /// Per-output firing thresholds (V), when the network adapts them.
    #[serde(default)]
    pub thresholds: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightSnapshot {
    pub meta: SnapshotMeta,
    pub conductances: Vec<f64>,
}

impl WeightSnapshot {
    /// Capture `synapses`, which must all hold `meta.devices_per_synapse` devices.
    pub fn capture(meta: SnapshotMeta, synapses: &[MultiDeviceSynapse]) -> Result<Self> {
        if synapses.len() != meta.n_inputs * meta.n_outputs {
            return Err(Error::domain("synapse count does not match snapshot shape"));
        }
        let mut conductances = Vec::with_capacity(synapses.len() * meta.devices_per_synapse);
        for s in synapses {
            if s.len() != meta.devices_per_synapse {
                return Err(Error::domain("synapses differ in device count"));
            }
            conductances.extend(s.devices().iter().map(|d| d.conductance()));
        }
        Ok(Self { meta, conductances })
    }

    /// Rebuild the synapses; every conductance must lie in the model range.
    pub fn synapses(&self, params: &ModelParams) -> Result<Vec<MultiDeviceSynapse>> {
        self.conductances
            .chunks(self.meta.devices_per_synapse)
            .map(|c| {
                let devices = c
                    .iter()
                    .map(|&g| DeviceState::new(g, params))
                    .collect::<Result<Vec<_>>>()?;
                MultiDeviceSynapse::new(devices)
            })
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let meta = serde_json::to_string(&self.meta).expect("metadata serializes");
        writeln!(out, "{MAGIC} {VERSION}")?;
        writeln!(out, "{meta}")?;
        for g in &self.conductances {
            out.write_all(&g.to_le_bytes())?;
        }
        out.flush()
    }

    pub fn read_from<R: Read>(input: R, path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            kind: "snapshot",
            path: path.to_path_buf(),
            reason,
        };
        let mut rd = BufReader::new(input);
        let mut line = String::new();
        rd.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        let version = line
            .trim_end()
            .strip_prefix(MAGIC)
            .and_then(|v| v.trim().parse::<u32>().ok())
            .ok_or_else(|| bad("missing snapshot header".into()))?;
        if version != VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        line.clear();
        rd.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        let meta: SnapshotMeta = serde_json::from_str(line.trim_end()).map_err(|e| bad(e.to_string()))?;
        let mut body = Vec::new();
        rd.read_to_end(&mut body).map_err(|e| Error::io(path, e))?;
        let expected = meta.n_inputs * meta.n_outputs * meta.devices_per_synapse;
        if body.len() != expected * 8 {
            return Err(bad(format!(
                "expected {expected} conductances, found {} bytes",
                body.len()
            )));
        }
        let conductances = body
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
            .collect();
        Ok(Self { meta, conductances })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(file, path)
    }
}
