//! Binary checkpoint container and training-state serialization.
//!
//! The container holds named f64 arrays with explicit shapes:
//!
//! ```text
//! magic "EFR1"
//! u64 record count
//! per record: u64 name length, name bytes (UTF-8),
//!             u64 ndim, ndim x u64 dims,
//!             prod(dims) x f64 payload
//! ```
//!
//! All integers and floats are little-endian. Reads validate the magic,
//! every length field, and UTF-8 before allocating, so truncated or foreign
//! files fail with a checkpoint error instead of a panic. RNG states are
//! stored bit-cast into f64 payloads; round trips are bit-exact.

use std::path::Path;

use ndarray::{Array1, Array2};

use crate::lie_rotation::SkewParamMatrix;
use crate::rng::RngState;
use crate::{Error, Result};

use super::adam::AdamState;
use super::net::{ToyDiscriminator, ToyGenerator};
use super::train::TrainState;

/// Container magic; doubles as the format version.
pub const MAGIC: [u8; 4] = *b"EFR1";

/// One named, dimensioned f64 array.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

impl Record {
    pub fn scalar(name: &str, value: f64) -> Record {
        Record {
            name: name.to_string(),
            dims: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(name: &str, data: Vec<f64>) -> Record {
        Record {
            name: name.to_string(),
            dims: vec![data.len()],
            data,
        }
    }

    pub fn matrix(name: &str, m: &Array2<f64>) -> Record {
        Record {
            name: name.to_string(),
            dims: vec![m.nrows(), m.ncols()],
            data: m.iter().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

fn corrupt(detail: impl Into<String>) -> Error {
    Error::Checkpoint(detail.into())
}

/// Serialize records to bytes.
pub fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(records.len() as u64).to_le_bytes());
    for r in records {
        out.extend_from_slice(&(r.name.len() as u64).to_le_bytes());
        out.extend_from_slice(r.name.as_bytes());
        out.extend_from_slice(&(r.dims.len() as u64).to_le_bytes());
        for &d in &r.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        debug_assert_eq!(r.dims.iter().product::<usize>(), r.data.len());
        for &x in &r.data {
            out.extend_from_slice(&x.to_bits().to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(corrupt(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

/// Parse records from bytes.
pub fn decode(bytes: &[u8]) -> Result<Vec<Record>> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4, "magic")?;
    if magic != MAGIC {
        return Err(corrupt(format!(
            "bad magic {:02x?}, expected {:02x?} (not a checkpoint or wrong version)",
            magic, MAGIC
        )));
    }
    let count = c.u64("record count")?;
    let mut records = Vec::new();
    for idx in 0..count {
        let name_len = c.u64("name length")? as usize;
        let name_bytes = c.take(name_len, "record name")?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| corrupt(format!("record {idx} name is not UTF-8")))?
            .to_string();
        let ndim = c.u64("ndim")? as usize;
        if ndim > 8 {
            return Err(corrupt(format!("record '{name}' claims {ndim} dimensions")));
        }
        let mut dims = Vec::with_capacity(ndim);
        let mut total: usize = 1;
        for _ in 0..ndim {
            let d = c.u64("dimension")? as usize;
            total = total
                .checked_mul(d)
                .ok_or_else(|| corrupt(format!("record '{name}' dimension overflow")))?;
            dims.push(d);
        }
        // Bounds-check before allocating, so a corrupt length cannot OOM.
        let byte_len = total
            .checked_mul(8)
            .ok_or_else(|| corrupt(format!("record '{name}' payload length overflow")))?;
        let payload = c.take(byte_len, "payload")?;
        let data: Vec<f64> = payload
            .chunks_exact(8)
            .map(|ch| f64::from_bits(u64::from_le_bytes(ch.try_into().unwrap())))
            .collect();
        records.push(Record { name, dims, data });
    }
    if c.pos != bytes.len() {
        return Err(corrupt(format!(
            "{} trailing bytes after the last record",
            bytes.len() - c.pos
        )));
    }
    Ok(records)
}

/// Write records to `path` atomically (temp file plus rename).
pub fn write_container(path: &Path, records: &[Record]) -> Result<()> {
    let bytes = encode(records);
    let tmp = path.with_extension("efr.tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Read records from `path`.
pub fn read_container(path: &Path) -> Result<Vec<Record>> {
    decode(&std::fs::read(path)?)
}

fn rng_to_words(state: &RngState) -> Vec<f64> {
    let mut out = Vec::with_capacity(7);
    for i in 0..4 {
        let w = u64::from_le_bytes(state.seed[8 * i..8 * i + 8].try_into().unwrap());
        out.push(f64::from_bits(w));
    }
    out.push(f64::from_bits(state.word_pos as u64));
    out.push(f64::from_bits((state.word_pos >> 64) as u64));
    out.push(f64::from_bits(state.stream));
    out
}

fn rng_from_words(name: &str, words: &[f64]) -> Result<RngState> {
    if words.len() != 7 {
        return Err(corrupt(format!(
            "record '{name}' should hold 7 words, got {}",
            words.len()
        )));
    }
    let mut seed = [0u8; 32];
    for i in 0..4 {
        seed[8 * i..8 * i + 8].copy_from_slice(&words[i].to_bits().to_le_bytes());
    }
    let lo = words[4].to_bits() as u128;
    let hi = words[5].to_bits() as u128;
    Ok(RngState {
        seed,
        stream: words[6].to_bits(),
        word_pos: (hi << 64) | lo,
    })
}

/// Serialize a full training state to records (fixed order).
pub fn state_to_records(state: &TrainState) -> Vec<Record> {
    let gen = &state.generator;
    let disc = &state.discriminator;
    vec![
        Record::vector(
            "meta.dims",
            vec![
                gen.noise_dim() as f64,
                gen.feature_dim() as f64,
                gen.sample_dim() as f64,
                disc.hidden_dim() as f64,
            ],
        ),
        Record::matrix("gen.w1", gen.w1()),
        Record::vector("gen.b1", gen.b1().to_vec()),
        Record::matrix("gen.w2", gen.w2()),
        Record::vector("gen.b2", gen.b2().to_vec()),
        Record::matrix("disc.w1", disc.w1()),
        Record::vector("disc.b1", disc.b1().to_vec()),
        Record::matrix("disc.w2", disc.w2()),
        Record::vector("disc.b2", disc.b2().to_vec()),
        Record::matrix("rot.param", state.rotation.entries()),
        Record::vector("adam.gen_rot.m", state.adam_gen_rot.m.clone()),
        Record::vector("adam.gen_rot.v", state.adam_gen_rot.v.clone()),
        Record::scalar("adam.gen_rot.step", state.adam_gen_rot.step as f64),
        Record::vector("adam.disc.m", state.adam_disc.m.clone()),
        Record::vector("adam.disc.v", state.adam_disc.v.clone()),
        Record::scalar("adam.disc.step", state.adam_disc.step as f64),
        Record::scalar("step", state.step as f64),
        Record::vector("rng.noise", rng_to_words(&state.noise_rng)),
        Record::vector("rng.data", rng_to_words(&state.data_rng)),
    ]
}

struct RecordMap {
    records: Vec<Record>,
}

impl RecordMap {
    fn get(&self, name: &str) -> Result<&Record> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| corrupt(format!("missing record '{name}'")))
    }

    fn matrix(&self, name: &str, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let r = self.get(name)?;
        if r.dims != [rows, cols] {
            return Err(corrupt(format!(
                "record '{name}' has shape {:?}, expected [{rows}, {cols}]",
                r.dims
            )));
        }
        Array2::from_shape_vec((rows, cols), r.data.clone())
            .map_err(|_| corrupt(format!("record '{name}' payload does not fill its shape")))
    }

    fn vector(&self, name: &str, len: usize) -> Result<Vec<f64>> {
        let r = self.get(name)?;
        if r.dims != [len] {
            return Err(corrupt(format!(
                "record '{name}' has shape {:?}, expected [{len}]",
                r.dims
            )));
        }
        Ok(r.data.clone())
    }

    fn scalar_u64(&self, name: &str) -> Result<u64> {
        let r = self.get(name)?;
        if r.data.len() != 1 || !(r.data[0].is_finite() && r.data[0] >= 0.0) {
            return Err(corrupt(format!("record '{name}' is not a counter")));
        }
        Ok(r.data[0] as u64)
    }
}

/// Rebuild a training state from container records.
pub fn state_from_records(records: Vec<Record>) -> Result<TrainState> {
    let map = RecordMap { records };
    let meta = map.vector("meta.dims", 4)?;
    let bad_meta = || corrupt("meta.dims entries are not positive integers".to_string());
    let as_dim = |x: f64| {
        if x.fract() == 0.0 && (1.0..=4096.0).contains(&x) {
            Ok(x as usize)
        } else {
            Err(bad_meta())
        }
    };
    let noise_dim = as_dim(meta[0])?;
    let feature_dim = as_dim(meta[1])?;
    let sample_dim = as_dim(meta[2])?;
    let disc_hidden = as_dim(meta[3])?;

    let generator = ToyGenerator::from_parts(
        map.matrix("gen.w1", feature_dim, noise_dim)?,
        Array1::from_vec(map.vector("gen.b1", feature_dim)?),
        map.matrix("gen.w2", sample_dim, feature_dim)?,
        Array1::from_vec(map.vector("gen.b2", sample_dim)?),
    )?;
    let discriminator = ToyDiscriminator::from_parts(
        map.matrix("disc.w1", disc_hidden, sample_dim)?,
        Array1::from_vec(map.vector("disc.b1", disc_hidden)?),
        map.matrix("disc.w2", 1, disc_hidden)?,
        Array1::from_vec(map.vector("disc.b2", 1)?),
    )?;
    let rotation = SkewParamMatrix::new(map.matrix("rot.param", feature_dim, feature_dim)?)?;

    let gen_rot_len = generator.param_count() + feature_dim * feature_dim;
    let adam_gen_rot = AdamState {
        m: map.vector("adam.gen_rot.m", gen_rot_len)?,
        v: map.vector("adam.gen_rot.v", gen_rot_len)?,
        step: map.scalar_u64("adam.gen_rot.step")?,
    };
    let adam_disc = AdamState {
        m: map.vector("adam.disc.m", discriminator.param_count())?,
        v: map.vector("adam.disc.v", discriminator.param_count())?,
        step: map.scalar_u64("adam.disc.step")?,
    };

    Ok(TrainState {
        generator,
        discriminator,
        rotation,
        adam_gen_rot,
        adam_disc,
        step: map.scalar_u64("step")?,
        noise_rng: rng_from_words("rng.noise", &map.vector("rng.noise", 7)?)?,
        data_rng: rng_from_words("rng.data", &map.vector("rng.data", 7)?)?,
    })
}

/// Write a training state checkpoint.
pub fn save_state(path: &Path, state: &TrainState) -> Result<()> {
    write_container(path, &state_to_records(state))
}

/// Read a training state checkpoint.
pub fn load_state(path: &Path) -> Result<TrainState> {
    state_from_records(read_container(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adaptation_sim::train::TrainState;

    #[test]
    fn container_round_trip_is_byte_identical() {
        let records = vec![
            Record::scalar("alpha", -1.5),
            Record::vector("beta", vec![0.0, f64::MIN_POSITIVE, 1e300]),
            Record::matrix("gamma", &Array2::from_shape_fn((3, 2), |(i, j)| (i + 2 * j) as f64)),
        ];
        let bytes = encode(&records);
        let decoded = decode(&bytes).unwrap();
        assert_eq!(decoded, records);
        assert_eq!(encode(&decoded), bytes);
    }

    #[test]
    fn rejects_bad_magic_truncation_and_trailing_bytes() {
        let records = vec![Record::scalar("x", 1.0)];
        let bytes = encode(&records);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        let err = decode(&bad).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");

        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");

        let mut long = bytes.clone();
        long.push(0);
        assert!(decode(&long).is_err());

        // A record longer than the file must fail before allocating.
        let mut huge = bytes.clone();
        let dims_offset = bytes.len() - 8 - 8; // dim value then payload
        huge[dims_offset..dims_offset + 8].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode(&huge).is_err());
    }

    #[test]
    fn state_round_trip_preserves_every_bit() {
        let mut state = TrainState::init(1234, 8, 16, 2, 32);
        // Make the optimizer and RNG states nontrivial.
        state.step = 41;
        state.adam_gen_rot.step = 41;
        state.adam_gen_rot.m[3] = -0.25;
        state.adam_gen_rot.v[7] = 1e-9;
        let mut rng = state.noise_rng.restore();
        let _: f64 = rand::Rng::random(&mut rng);
        state.noise_rng = crate::rng::RngState::capture(&rng);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.efr");
        save_state(&path, &state).unwrap();
        let loaded = load_state(&path).unwrap();

        assert_eq!(loaded.generator.params_flat(), state.generator.params_flat());
        assert_eq!(
            loaded.discriminator.params_flat(),
            state.discriminator.params_flat()
        );
        assert_eq!(loaded.rotation.entries(), state.rotation.entries());
        assert_eq!(loaded.adam_gen_rot, state.adam_gen_rot);
        assert_eq!(loaded.adam_disc, state.adam_disc);
        assert_eq!(loaded.step, state.step);
        assert_eq!(loaded.noise_rng, state.noise_rng);
        assert_eq!(loaded.data_rng, state.data_rng);

        // Writing the loaded state reproduces the file byte for byte.
        let path2 = dir.path().join("state2.efr");
        save_state(&path2, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
    }

    #[test]
    fn restored_rng_continues_the_same_draws() {
        let state = TrainState::init(99, 8, 16, 2, 32);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.efr");
        save_state(&path, &state).unwrap();
        let loaded = load_state(&path).unwrap();
        let mut a = state.noise_rng.restore();
        let mut b = loaded.noise_rng.restore();
        let xs: Vec<u64> = (0..32).map(|_| rand::Rng::random(&mut a)).collect();
        let ys: Vec<u64> = (0..32).map(|_| rand::Rng::random(&mut b)).collect();
        assert_eq!(xs, ys);
    }

    #[test]
    fn missing_and_misshapen_records_are_reported() {
        let state = TrainState::init(7, 8, 16, 2, 32);
        let mut records = state_to_records(&state);
        records.retain(|r| r.name != "rot.param");
        let err = state_from_records(records).unwrap_err();
        assert!(err.to_string().contains("rot.param"), "{err}");

        let mut records = state_to_records(&state);
        for r in &mut records {
            if r.name == "gen.b1" {
                r.dims = vec![r.len() + 1];
                r.data.push(0.0);
            }
        }
        assert!(state_from_records(records).is_err());
    }
}
