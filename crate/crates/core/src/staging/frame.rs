//! In-memory step frame and its self-describing binary encoding.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic            4 bytes  "SSF1"
//! step             u64
//! time             f64
//! species          u8
//! record_count     u64
//! property_count   u16
//! directory        property_count × { name_len u16, name bytes, type u8, byte_len u64 }
//! payload          one contiguous array per property, in directory order
//! ```

use super::StagingError;
use crate::source::{ParticleRecord, Species, StepBatch};

pub const FRAME_MAGIC: [u8; 4] = *b"SSF1";

/// Element type codes shared by frame and trajectory directories.
pub const TYPE_U64: u8 = 1;
pub const TYPE_F64: u8 = 2;

pub const ID: &str = "id";
pub const PSI: &str = "psi";
pub const THETA: &str = "theta";
pub const ZETA: &str = "zeta";
pub const R: &str = "r";
pub const VPAR: &str = "vPar";
pub const ENERGY: &str = "E";
pub const W0: &str = "w0";
pub const W1: &str = "w1";
pub const W2: &str = "w2";
pub const SEP_FLAG: &str = "sep_flag";

/// Every property a [`ParticleRecord`] carries, in canonical column order.
pub const ALL_PROPERTIES: [&str; 11] = [ID, PSI, THETA, ZETA, R, VPAR, ENERGY, W0, W1, W2, SEP_FLAG];

#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    U64(Vec<u64>),
    F64(Vec<f64>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::U64(v) => v.len(),
            ColumnData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn type_code(&self) -> u8 {
        match self {
            ColumnData::U64(_) => TYPE_U64,
            ColumnData::F64(_) => TYPE_F64,
        }
    }

    pub fn as_f64(&self) -> Option<&[f64]> {
        match self {
            ColumnData::F64(v) => Some(v),
            ColumnData::U64(_) => None,
        }
    }

    pub fn as_u64(&self) -> Option<&[u64]> {
        match self {
            ColumnData::U64(v) => Some(v),
            ColumnData::F64(_) => None,
        }
    }

    /// Equality that compares floats by bit pattern.
    pub fn bit_eq(&self, other: &ColumnData) -> bool {
        match (self, other) {
            (ColumnData::U64(a), ColumnData::U64(b)) => a == b,
            (ColumnData::F64(a), ColumnData::F64(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub name: String,
    pub data: ColumnData,
}

/// One atomic step of staged data.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFrame {
    pub step: u64,
    pub time: f64,
    pub species: Species,
    pub record_count: usize,
    pub columns: Vec<Column>,
}

impl StepFrame {
    pub fn new(step: u64, time: f64, species: Species) -> Self {
        StepFrame {
            step,
            time,
            species,
            record_count: 0,
            columns: Vec::new(),
        }
    }

    /// Append a property column, enforcing equal lengths and unique names.
    pub fn push_column(&mut self, name: &str, data: ColumnData) -> Result<(), StagingError> {
        if name.is_empty() || name.len() > u16::MAX as usize {
            return Err(StagingError::Frame(format!("invalid property name '{name}'")));
        }
        if self.column(name).is_some() {
            return Err(StagingError::Frame(format!("property '{name}' written twice")));
        }
        if self.columns.is_empty() {
            self.record_count = data.len();
        } else if data.len() != self.record_count {
            return Err(StagingError::Frame(format!(
                "property '{name}' has {} elements, expected {}",
                data.len(),
                self.record_count
            )));
        }
        self.columns.push(Column {
            name: name.to_string(),
            data,
        });
        Ok(())
    }

    pub fn column(&self, name: &str) -> Option<&ColumnData> {
        self.columns.iter().find(|c| c.name == name).map(|c| &c.data)
    }

    pub fn f64_column(&self, name: &str) -> Option<&[f64]> {
        self.column(name).and_then(ColumnData::as_f64)
    }

    pub fn ids(&self) -> Option<&[u64]> {
        self.column(ID).and_then(ColumnData::as_u64)
    }

    pub fn bit_eq(&self, other: &StepFrame) -> bool {
        self.step == other.step
            && self.time.to_bits() == other.time.to_bits()
            && self.species == other.species
            && self.record_count == other.record_count
            && self.columns.len() == other.columns.len()
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|(a, b)| a.name == b.name && a.data.bit_eq(&b.data))
    }

    /// Build a frame holding every particle property.
    pub fn from_batch(batch: &StepBatch) -> Self {
        Self::from_batch_with(batch, &ALL_PROPERTIES).expect("canonical property set")
    }

    /// Build a frame holding only `properties` (which should include `id`).
    pub fn from_batch_with(batch: &StepBatch, properties: &[&str]) -> Result<Self, StagingError> {
        let mut frame = StepFrame::new(batch.step, batch.time, batch.species);
        let recs = &batch.records;
        for &name in properties {
            let data = if name == ID {
                ColumnData::U64(recs.iter().map(|r| r.id).collect())
            } else {
                let get = record_getter(name)
                    .ok_or_else(|| StagingError::Frame(format!("unknown particle property '{name}'")))?;
                ColumnData::F64(recs.iter().map(get).collect())
            };
            frame.push_column(name, data)?;
        }
        if properties.is_empty() {
            frame.record_count = recs.len();
        }
        Ok(frame)
    }

    /// Reassemble particle records; needs every canonical column.
    pub fn to_records(&self) -> Result<Vec<ParticleRecord>, StagingError> {
        let ids = self
            .ids()
            .ok_or_else(|| StagingError::Frame("frame has no id column".into()))?;
        let col = |name: &str| {
            self.f64_column(name)
                .ok_or_else(|| StagingError::Frame(format!("frame has no f64 column '{name}'")))
        };
        let (psi, theta, zeta, r, vpar, e) = (col(PSI)?, col(THETA)?, col(ZETA)?, col(R)?, col(VPAR)?, col(ENERGY)?);
        let (w0, w1, w2, sep) = (col(W0)?, col(W1)?, col(W2)?, col(SEP_FLAG)?);
        Ok((0..self.record_count)
            .map(|i| ParticleRecord {
                id: ids[i],
                psi: psi[i],
                theta: theta[i],
                zeta: zeta[i],
                r: r[i],
                vpar: vpar[i],
                energy: e[i],
                w0: w0[i],
                w1: w1[i],
                w2: w2[i],
                sep_flag: sep[i],
            })
            .collect())
    }

    /// Total payload bytes (all property arrays).
    pub fn payload_len(&self) -> usize {
        self.columns.len() * self.record_count * 8
    }

    pub fn encode(&self) -> Vec<u8> {
        let dir_len: usize = self.columns.iter().map(|c| 2 + c.name.len() + 1 + 8).sum();
        let mut out = Vec::with_capacity(31 + dir_len + self.payload_len());
        out.extend_from_slice(&FRAME_MAGIC);
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.time.to_le_bytes());
        out.push(self.species.code());
        out.extend_from_slice(&(self.record_count as u64).to_le_bytes());
        out.extend_from_slice(&(self.columns.len() as u16).to_le_bytes());
        for c in &self.columns {
            out.extend_from_slice(&(c.name.len() as u16).to_le_bytes());
            out.extend_from_slice(c.name.as_bytes());
            out.push(c.data.type_code());
            out.extend_from_slice(&((c.data.len() * 8) as u64).to_le_bytes());
        }
        for c in &self.columns {
            match &c.data {
                ColumnData::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                ColumnData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    /// Decode a frame. `hint` names the step in errors when the header itself
    /// is unreadable (for example the step encoded in a file name).
    pub fn decode(bytes: &[u8], hint: Option<u64>) -> Result<Self, StagingError> {
        let mut cur = Cursor { bytes, pos: 0 };
        let corrupt = |step: Option<u64>, reason: String| StagingError::Integrity { step, reason };

        let magic = cur.take(4).map_err(|r| corrupt(hint, r))?;
        if magic != FRAME_MAGIC {
            return Err(corrupt(hint, format!("bad magic {magic:02x?}")));
        }
        let step = cur.u64().map_err(|r| corrupt(hint, r))?;
        let at = Some(step);
        let time = f64::from_bits(cur.u64().map_err(|r| corrupt(at, r))?);
        let species_code = cur.u8().map_err(|r| corrupt(at, r))?;
        let species =
            Species::from_code(species_code).ok_or_else(|| corrupt(at, format!("unknown species code {species_code}")))?;
        let record_count = cur.u64().map_err(|r| corrupt(at, r))? as usize;
        let property_count = cur.u16().map_err(|r| corrupt(at, r))? as usize;

        let mut directory = Vec::with_capacity(property_count);
        for _ in 0..property_count {
            let name_len = cur.u16().map_err(|r| corrupt(at, r))? as usize;
            let name = std::str::from_utf8(cur.take(name_len).map_err(|r| corrupt(at, r))?)
                .map_err(|_| corrupt(at, "property name is not UTF-8".into()))?
                .to_string();
            let type_code = cur.u8().map_err(|r| corrupt(at, r))?;
            let byte_len = cur.u64().map_err(|r| corrupt(at, r))? as usize;
            if type_code != TYPE_U64 && type_code != TYPE_F64 {
                return Err(corrupt(at, format!("property '{name}' has unknown type code {type_code}")));
            }
            if Some(byte_len) != record_count.checked_mul(8) {
                return Err(corrupt(
                    at,
                    format!("property '{name}' byte length {byte_len} != {record_count} records × 8"),
                ));
            }
            directory.push((name, type_code, byte_len));
        }

        let mut frame = StepFrame::new(step, time, species);
        frame.record_count = record_count;
        for (name, type_code, byte_len) in directory {
            let raw = cur
                .take(byte_len)
                .map_err(|_| corrupt(at, format!("short payload for property '{name}'")))?;
            let words = raw.chunks_exact(8).map(|w| <[u8; 8]>::try_from(w).unwrap());
            let data = if type_code == TYPE_U64 {
                ColumnData::U64(words.map(u64::from_le_bytes).collect())
            } else {
                ColumnData::F64(words.map(f64::from_le_bytes).collect())
            };
            if frame.column(&name).is_some() {
                return Err(corrupt(at, format!("duplicate property '{name}'")));
            }
            frame.columns.push(Column { name, data });
        }
        if cur.pos != bytes.len() {
            return Err(corrupt(at, format!("{} trailing bytes", bytes.len() - cur.pos)));
        }
        Ok(frame)
    }
}

/// Accessor for a float property of a [`ParticleRecord`] by column name.
pub fn record_getter(name: &str) -> Option<fn(&ParticleRecord) -> f64> {
    Some(match name {
        PSI => |r| r.psi,
        THETA => |r| r.theta,
        ZETA => |r| r.zeta,
        R => |r| r.r,
        VPAR => |r| r.vpar,
        ENERGY => |r| r.energy,
        W0 => |r| r.w0,
        W1 => |r| r.w1,
        W2 => |r| r.w2,
        SEP_FLAG => |r| r.sep_flag,
        _ => return None,
    })
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {} (wanted {n} more)", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, String> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, String> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{SourceConfig, SyntheticSource};
    use proptest::prelude::*;

    fn sample_batch(n: usize) -> StepBatch {
        let cfg = SourceConfig { n_particles: n, ..SourceConfig::default() };
        SyntheticSource::new(cfg).unwrap().init_population()
    }

    #[test]
    fn payload_size_seven_properties() {
        let b = sample_batch(1000);
        let f = StepFrame::from_batch_with(&b, &[ID, PSI, THETA, VPAR, ENERGY, W0, SEP_FLAG]).unwrap();
        assert_eq!(f.payload_len(), 7 * 1000 * 8);
        let header: usize = 31 + f.columns.iter().map(|c| 2 + c.name.len() + 1 + 8).sum::<usize>();
        assert_eq!(f.encode().len(), header + 7 * 1000 * 8);
    }

    #[test]
    fn records_round_trip_through_frame() {
        let b = sample_batch(64);
        let f = StepFrame::from_batch(&b);
        assert_eq!(f.to_records().unwrap(), b.records);
    }

    #[test]
    fn mismatched_lengths_rejected() {
        let mut f = StepFrame::new(0, 0.0, Species::Ion);
        f.push_column(ID, ColumnData::U64(vec![1, 2, 3])).unwrap();
        let err = f.push_column(PSI, ColumnData::F64(vec![1.0])).unwrap_err();
        assert!(matches!(err, StagingError::Frame(_)));
        assert!(f.push_column(ID, ColumnData::U64(vec![4, 5, 6])).is_err());
    }

    #[test]
    fn bad_magic_names_hint() {
        let mut bytes = StepFrame::from_batch(&sample_batch(3)).encode();
        bytes[0] ^= 0xff;
        match StepFrame::decode(&bytes, Some(7)) {
            Err(StagingError::Integrity { step: Some(7), .. }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn truncation_names_step() {
        let mut b = sample_batch(10);
        b.step = 42;
        let bytes = StepFrame::from_batch(&b).encode();
        for cut in [bytes.len() - 1, bytes.len() / 2, 40] {
            match StepFrame::decode(&bytes[..cut], None) {
                Err(StagingError::Integrity { step: Some(42), .. }) => {}
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    fn arb_frame() -> impl Strategy<Value = StepFrame> {
        (
            any::<u64>(),
            any::<f64>(),
            prop::bool::ANY,
            0usize..20,
            prop::collection::vec("[a-zA-Z_]{1,12}", 0..6),
        )
            .prop_flat_map(|(step, time, ion, n, names)| {
                let mut names = names;
                names.sort();
                names.dedup();
                let cols = names
                    .into_iter()
                    .map(move |name| {
                        prop_oneof![
                            prop::collection::vec(any::<u64>(), n).prop_map(ColumnData::U64),
                            prop::collection::vec(any::<u64>(), n)
                                .prop_map(|v| ColumnData::F64(v.into_iter().map(f64::from_bits).collect())),
                        ]
                        .prop_map(move |d| (name.clone(), d))
                    })
                    .collect::<Vec<_>>();
                (Just(step), Just(time), Just(ion), Just(n), cols)
            })
            .prop_map(|(step, time, ion, n, cols)| {
                let species = if ion { Species::Ion } else { Species::Electron };
                let mut f = StepFrame::new(step, time, species);
                f.record_count = n;
                for (name, d) in cols {
                    f.push_column(&name, d).unwrap();
                }
                f
            })
    }

    proptest! {
        #[test]
        fn encode_decode_is_bit_exact(frame in arb_frame()) {
            let back = StepFrame::decode(&frame.encode(), None).unwrap();
            prop_assert!(back.bit_eq(&frame));
        }
    }
}
