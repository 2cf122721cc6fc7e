//! On-disk trajectory dataset.
//!
//! One file per species, little-endian:
//!
//! ```text
//! magic           4 bytes "STRJ"
//! version         u32 (= 1)
//! species         u8
//! particle_count  u64   P
//! step_count      u64   S
//! dt              f64   seconds
//! property_count  u16
//! directory       property_count × { name_len u16, name, type u8, byte_len u64 }
//! ids             P × u64, strictly increasing
//! times           S × f64
//! presence        ceil(P·S / 8) bytes; bit k = p·S + s, LSB first
//! properties      per property, P × S f64, particle-major
//! ```
//!
//! A JSON manifest `<stem>.manifest.json` next to the file repeats the header.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pipeline::{PipelineOutput, TrajectoryBlock};
use crate::source::Species;
use crate::staging::frame::TYPE_F64;

pub const TRAJ_MAGIC: [u8; 4] = *b"STRJ";
pub const TRAJ_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum TrajStoreError {
    #[error("trajectory format error: {0}")]
    Format(String),
    #[error("trajectory integrity error: {0}")]
    Integrity(String),
    #[error("cannot merge trajectory blocks: {0}")]
    Merge(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrajStoreError + '_ {
    move |source| TrajStoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Packed per-(particle, step) presence bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Presence {
    rows: usize,
    steps: usize,
    bits: Vec<u8>,
}

impl Presence {
    pub fn new(rows: usize, steps: usize) -> Self {
        Presence {
            rows,
            steps,
            bits: vec![0; (rows * steps).div_ceil(8)],
        }
    }

    pub fn get(&self, row: usize, step: usize) -> bool {
        let k = row * self.steps + step;
        self.bits[k / 8] >> (k % 8) & 1 == 1
    }

    pub fn set(&mut self, row: usize, step: usize, value: bool) {
        let k = row * self.steps + step;
        if value {
            self.bits[k / 8] |= 1 << (k % 8);
        } else {
            self.bits[k / 8] &= !(1 << (k % 8));
        }
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().map(|b| b.count_ones() as usize).sum()
    }
}

/// Merged trajectories for one species.
#[derive(Debug, Clone)]
pub struct TrajectoryDataset {
    pub species: Species,
    pub dt: f64,
    /// Strictly increasing; row order of every array.
    pub ids: Vec<u64>,
    pub times: Vec<f64>,
    pub presence: Presence,
    pub properties: Vec<String>,
    /// `values[p][row * steps + step]`.
    pub values: Vec<Vec<f64>>,
}

impl TrajectoryDataset {
    pub fn particles(&self) -> usize {
        self.ids.len()
    }

    pub fn steps(&self) -> usize {
        self.times.len()
    }

    pub fn property_index(&self, name: &str) -> Option<usize> {
        self.properties.iter().position(|p| p == name)
    }

    pub fn value(&self, property: usize, row: usize, step: usize) -> f64 {
        self.values[property][row * self.steps() + step]
    }

    pub fn row(&self, property: usize, row: usize) -> &[f64] {
        let s = self.steps();
        &self.values[property][row * s..(row + 1) * s]
    }

    pub fn present(&self, row: usize, step: usize) -> bool {
        self.presence.get(row, step)
    }

    /// Merge ordered worker blocks into a single dataset.
    pub fn from_blocks(
        blocks: &[TrajectoryBlock],
        times: &[f64],
        species: Species,
        dt: f64,
    ) -> Result<Self, TrajStoreError> {
        let first = blocks.first().ok_or_else(|| TrajStoreError::Merge("no blocks".into()))?;
        let steps = first.steps_filled;
        if times.len() != steps {
            return Err(TrajStoreError::Merge(format!(
                "{} step times for blocks holding {steps} steps",
                times.len()
            )));
        }
        let mut ids: Vec<u64> = Vec::new();
        for b in blocks {
            if b.steps_filled != steps {
                return Err(TrajStoreError::Merge(format!(
                    "worker {} filled {} steps, worker {} filled {steps}",
                    b.worker, b.steps_filled, first.worker
                )));
            }
            if b.properties != first.properties {
                return Err(TrajStoreError::Merge(format!(
                    "worker {} has a different property layout",
                    b.worker
                )));
            }
            if let (Some(&last), Some(&next)) = (ids.last(), b.ids.first()) {
                if next <= last {
                    return Err(TrajStoreError::Merge(format!(
                        "worker {} starts at id {next}, not after {last}",
                        b.worker
                    )));
                }
            }
            ids.extend_from_slice(&b.ids);
        }
        let rows = ids.len();
        let mut presence = Presence::new(rows, steps);
        let mut values = vec![Vec::with_capacity(rows * steps); first.properties.len()];
        let mut row = 0;
        for b in blocks {
            for r in 0..b.rows() {
                for (s, &p) in b.presence_row(r).iter().enumerate() {
                    presence.set(row, s, p);
                }
                for (p, out) in values.iter_mut().enumerate() {
                    out.extend_from_slice(b.series(p, r));
                }
                row += 1;
            }
        }
        Ok(TrajectoryDataset {
            species,
            dt,
            ids,
            times: times.to_vec(),
            presence,
            properties: first.properties.clone(),
            values,
        })
    }

    pub fn from_pipeline(out: &PipelineOutput, dt: f64) -> Result<Self, TrajStoreError> {
        Self::from_blocks(&out.blocks, &out.times, out.species, dt)
    }

    /// Equality comparing floats by bit pattern.
    pub fn bit_eq(&self, other: &Self) -> bool {
        let same = |a: &[f64], b: &[f64]| a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits());
        self.species == other.species
            && self.dt.to_bits() == other.dt.to_bits()
            && self.ids == other.ids
            && same(&self.times, &other.times)
            && self.presence == other.presence
            && self.properties == other.properties
            && self.values.len() == other.values.len()
            && self.values.iter().zip(&other.values).all(|(a, b)| same(a, b))
    }

    fn header_len(&self) -> usize {
        4 + 4 + 1 + 8 + 8 + 8 + 2 + self.properties.iter().map(|n| 2 + n.len() + 1 + 8).sum::<usize>()
    }

    /// Bytes after the header.
    pub fn body_len(&self) -> usize {
        body_len(self.particles(), self.steps(), self.properties.len())
    }

    pub fn file_len(&self) -> usize {
        self.header_len() + self.body_len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let (p, s) = (self.particles(), self.steps());
        let mut out = Vec::with_capacity(self.file_len());
        out.extend_from_slice(&TRAJ_MAGIC);
        out.extend_from_slice(&TRAJ_VERSION.to_le_bytes());
        out.push(self.species.code());
        out.extend_from_slice(&(p as u64).to_le_bytes());
        out.extend_from_slice(&(s as u64).to_le_bytes());
        out.extend_from_slice(&self.dt.to_le_bytes());
        out.extend_from_slice(&(self.properties.len() as u16).to_le_bytes());
        for name in &self.properties {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(TYPE_F64);
            out.extend_from_slice(&((p * s * 8) as u64).to_le_bytes());
        }
        self.ids.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        self.times.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        out.extend_from_slice(self.presence.as_bytes());
        for col in &self.values {
            col.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes()));
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, TrajStoreError> {
        let mut cur = Reader { bytes, pos: 0 };
        let magic = cur.take(4)?;
        if magic != TRAJ_MAGIC {
            return Err(TrajStoreError::Format(format!("bad magic {magic:02x?}")));
        }
        let version = u32::from_le_bytes(cur.take(4)?.try_into().unwrap());
        if version != TRAJ_VERSION {
            return Err(TrajStoreError::Format(format!("unsupported version {version}")));
        }
        let code = cur.take(1)?[0];
        let species = Species::from_code(code).ok_or_else(|| TrajStoreError::Format(format!("unknown species code {code}")))?;
        let p = cur.u64()? as usize;
        let s = cur.u64()? as usize;
        let dt = f64::from_bits(cur.u64()?);
        let nprop = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
        let samples = p
            .checked_mul(s)
            .ok_or_else(|| TrajStoreError::Format(format!("absurd shape {p} × {s}")))?;
        let mut properties = Vec::with_capacity(nprop);
        for _ in 0..nprop {
            let len = u16::from_le_bytes(cur.take(2)?.try_into().unwrap()) as usize;
            let name = std::str::from_utf8(cur.take(len)?)
                .map_err(|_| TrajStoreError::Format("property name is not UTF-8".into()))?
                .to_string();
            let ty = cur.take(1)?[0];
            let byte_len = cur.u64()? as usize;
            if ty != TYPE_F64 {
                return Err(TrajStoreError::Format(format!("property '{name}' has type code {ty}")));
            }
            if Some(byte_len) != samples.checked_mul(8) {
                return Err(TrajStoreError::Format(format!(
                    "property '{name}' byte length {byte_len} does not match {p} × {s} samples"
                )));
            }
            properties.push(name);
        }
        let expected = cur.pos as u128 + body_len_u128(p, s, nprop);
        if bytes.len() as u128 != expected {
            return Err(TrajStoreError::Integrity(format!(
                "file is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let ids: Vec<u64> = cur.words(p)?.map(u64::from_le_bytes).collect();
        if let Some(w) = ids.windows(2).find(|w| w[0] >= w[1]) {
            return Err(TrajStoreError::Integrity(format!(
                "id array not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        let times = cur.words(s)?.map(f64::from_le_bytes).collect();
        let bits = cur.take(samples.div_ceil(8))?.to_vec();
        let presence = Presence { rows: p, steps: s, bits };
        let mut values = Vec::with_capacity(nprop);
        for _ in 0..nprop {
            values.push(cur.words(samples)?.map(f64::from_le_bytes).collect());
        }
        Ok(TrajectoryDataset {
            species,
            dt,
            ids,
            times,
            presence,
            properties,
            values,
        })
    }

    /// Atomically write the dataset to `path` (temp file + rename).
    pub fn write(&self, path: &Path) -> Result<(), TrajStoreError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        let tmp = PathBuf::from(tmp);
        {
            let file = File::create(&tmp).map_err(io_err(&tmp))?;
            let mut w = BufWriter::new(file);
            w.write_all(&self.encode()).map_err(io_err(&tmp))?;
            w.flush().map_err(io_err(&tmp))?;
        }
        fs::rename(&tmp, path).map_err(io_err(path))
    }

    pub fn read(path: &Path) -> Result<Self, TrajStoreError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::decode(&bytes)
    }

    pub fn manifest(&self, config_digest: Option<String>) -> Manifest {
        Manifest {
            format: "STRJ".into(),
            version: TRAJ_VERSION,
            species: self.species,
            particle_count: self.particles() as u64,
            step_count: self.steps() as u64,
            dt: self.dt,
            properties: self.properties.clone(),
            file_bytes: self.file_len() as u64,
            present_samples: self.presence.count() as u64,
            config_digest,
        }
    }
}

/// Body size for `p` particles, `s` steps and `n` float properties.
pub fn body_len(p: usize, s: usize, n: usize) -> usize {
    p * 8 + s * 8 + (p * s).div_ceil(8) + n * p * s * 8
}

fn body_len_u128(p: usize, s: usize, n: usize) -> u128 {
    let (p, s, n) = (p as u128, s as u128, n as u128);
    p * 8 + s * 8 + (p * s).div_ceil(8) + n * p * s * 8
}

/// Human-readable sidecar describing a trajectory file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub species: Species,
    pub particle_count: u64,
    pub step_count: u64,
    pub dt: f64,
    pub properties: Vec<String>,
    pub file_bytes: u64,
    pub present_samples: u64,
    pub config_digest: Option<String>,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.manifest.json"))
}

/// Merge `blocks`, write the trajectory file and its manifest.
pub fn write_blocks(
    blocks: &[TrajectoryBlock],
    times: &[f64],
    species: Species,
    dt: f64,
    path: &Path,
    config_digest: Option<String>,
) -> Result<TrajectoryDataset, TrajStoreError> {
    let ds = TrajectoryDataset::from_blocks(blocks, times, species, dt)?;
    ds.write(path)?;
    write_manifest(&ds, path, config_digest)?;
    Ok(ds)
}

pub fn write_manifest(ds: &TrajectoryDataset, path: &Path, config_digest: Option<String>) -> Result<(), TrajStoreError> {
    let mpath = manifest_path(path);
    let mut text = serde_json::to_string_pretty(&ds.manifest(config_digest)).expect("manifest serializes");
    text.push('\n');
    fs::write(&mpath, text).map_err(io_err(&mpath))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrajStoreError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| TrajStoreError::Integrity(format!("truncated at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64, TrajStoreError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn words(&mut self, n: usize) -> Result<impl Iterator<Item = [u8; 8]> + 'a, TrajStoreError> {
        let raw = self.take(n * 8)?;
        Ok(raw.chunks_exact(8).map(|w| <[u8; 8]>::try_from(w).unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::{FillPolicy, SeedSet, StepSlice};

    fn blocks() -> Vec<TrajectoryBlock> {
        let seeds = SeedSet {
            ids: vec![2, 9, 11, 14],
            properties: vec!["psi".into(), "E".into()],
            initial: vec![vec![1.0, 1.01, 0.99, 1.02], vec![10.0, 20.0, 30.0, 40.0]],
            threshold: 0.1,
        };
        let mut a = TrajectoryBlock::from_seeds(0, &seeds, 0..2, FillPolicy::default());
        let mut b = TrajectoryBlock::from_seeds(1, &seeds, 2..4, FillPolicy::default());
        let cols = vec![vec![1.1, 1.2], vec![11.0, 21.0]];
        a.append_step(1, StepSlice::whole(&[2, 9], &cols)).unwrap();
        b.append_step(1, StepSlice::whole(&[14], &[vec![1.3], vec![41.0]])).unwrap();
        a.append_step(2, StepSlice::whole(&[2], &[vec![1.4], vec![12.0]])).unwrap();
        b.append_step(2, StepSlice::whole(&[14], &[vec![1.5], vec![42.0]])).unwrap();
        vec![a, b]
    }

    #[test]
    fn ordered_concatenation() {
        let ds = TrajectoryDataset::from_blocks(&blocks(), &[0.0, 0.5, 1.0], Species::Ion, 0.5).unwrap();
        assert_eq!(ds.ids, vec![2, 9, 11, 14]);
        assert_eq!(ds.row(1, 3), &[40.0, 41.0, 42.0]);
        assert!(ds.present(0, 2));
        assert!(!ds.present(1, 2));
        assert!(ds.value(0, 2, 1).is_nan());
    }

    #[test]
    fn body_size_arithmetic() {
        assert_eq!(body_len(4, 3, 5), 4 * 8 + 3 * 8 + 12usize.div_ceil(8) + 5 * 4 * 3 * 8);
        let ds = TrajectoryDataset::from_blocks(&blocks(), &[0.0, 0.5, 1.0], Species::Ion, 0.5).unwrap();
        assert_eq!(ds.encode().len(), ds.file_len());
        assert_eq!(ds.body_len(), 4 * 8 + 3 * 8 + 2 + 2 * 4 * 3 * 8);
    }

    #[test]
    fn inconsistent_steps_rejected() {
        let mut bl = blocks();
        bl[1].append_step(3, StepSlice::whole(&[], &[vec![], vec![]])).unwrap();
        assert!(matches!(
            TrajectoryDataset::from_blocks(&bl, &[0.0, 0.5, 1.0], Species::Ion, 0.5),
            Err(TrajStoreError::Merge(_))
        ));
        let mut bl = blocks();
        bl.swap(0, 1);
        assert!(matches!(
            TrajectoryDataset::from_blocks(&bl, &[0.0, 0.5, 1.0], Species::Ion, 0.5),
            Err(TrajStoreError::Merge(_))
        ));
    }

    #[test]
    fn file_round_trip_with_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ion.strj");
        let ds = write_blocks(&blocks(), &[0.0, 0.5, 1.0], Species::Ion, 0.5, &path, Some("abc".into())).unwrap();
        let back = TrajectoryDataset::read(&path).unwrap();
        assert!(back.bit_eq(&ds));
        assert_eq!(fs::metadata(&path).unwrap().len() as usize, ds.file_len());
        let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.path().join("ion.manifest.json")).unwrap()).unwrap();
        assert_eq!(m.particle_count, 4);
        assert_eq!(m.step_count, 3);
        assert_eq!(m.file_bytes as usize, ds.file_len());
        assert!(!dir.path().join("ion.strj.tmp").exists());
    }

    #[test]
    fn corruption_detected() {
        let ds = TrajectoryDataset::from_blocks(&blocks(), &[0.0, 0.5, 1.0], Species::Ion, 0.5).unwrap();
        let mut bytes = ds.encode();
        bytes[1] ^= 0x01;
        assert!(matches!(TrajectoryDataset::decode(&bytes), Err(TrajStoreError::Format(_))));
        let bytes = ds.encode();
        assert!(matches!(
            TrajectoryDataset::decode(&bytes[..bytes.len() - 3]),
            Err(TrajStoreError::Integrity(_))
        ));
        let mut bytes = ds.encode();
        bytes[4] = 2;
        assert!(matches!(TrajectoryDataset::decode(&bytes), Err(TrajStoreError::Format(_))));
    }
}
