//! Binary checkpoints.
//!
//! Little-endian throughout. Strings and arrays are length-prefixed; maps are
//! written in key order, so saving a loaded checkpoint reproduces the file.
//!
//! ```text
//! "W2TCKPT\0" u32:version str:fingerprint str:kind u64:epoch
//! u8:has_rng [32B seed, u64 stream, u128 word_pos]
//! u32:n_params { str:name u8:frozen u32:rank u64*rank:dims f64*:values }
//! u32:n_extras { str:name u64:len f64*len }
//! u32:n_meta { str:key str:value }
//! u8:has_optimizer [u8:kind f64:lr f64:momentum f64:beta1 f64:beta2 f64:eps u64:steps
//!                   u32:n { str:name u64:steps u64:len f64* u64:len f64* }]
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand_chacha::ChaCha8Rng;

use crate::diffcore::{MomentBuffer, OptimizerKind, OptimizerState, ParameterSet, Tensor, TensorError};

pub const MAGIC: &[u8; 8] = b"W2TCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated")]
    Truncated,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint was written for a different configuration (fingerprint {found}, expected {expected})")]
    FingerprintMismatch { expected: String, found: String },
    #[error("checkpoint is missing parameter {0}")]
    MissingPath(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Position of a ChaCha8 stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub fingerprint: String,
    /// What produced it, e.g. `pretrain`, `transfer`, `joint`.
    pub kind: String,
    pub epoch: u64,
    pub rng: Option<RngState>,
    pub params: ParameterSet,
    pub optimizer: Option<OptimizerState>,
    /// Named auxiliary vectors, e.g. standardizer statistics.
    pub extras: BTreeMap<String, Vec<f64>>,
    pub meta: BTreeMap<String, String>,
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u128(&mut self, v: u128) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f64s(&mut self, v: &[f64]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.f64(*x));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated)?;
        let s = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated)?;
        self.pos = end;
        Ok(s)
    }
    fn arr<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }
    fn u8(&mut self) -> Result<u8, CheckpointError> {
        Ok(self.take(1)?[0])
    }
    fn flag(&mut self) -> Result<bool, CheckpointError> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            b => Err(CheckpointError::Corrupt(format!("flag byte {b}"))),
        }
    }
    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.arr()?))
    }
    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.arr()?))
    }
    fn u128(&mut self) -> Result<u128, CheckpointError> {
        Ok(u128::from_le_bytes(self.arr()?))
    }
    fn f64(&mut self) -> Result<f64, CheckpointError> {
        Ok(f64::from_le_bytes(self.arr()?))
    }
    fn len(&mut self, wide: bool, item: usize) -> Result<usize, CheckpointError> {
        let n = if wide { self.u64()? as usize } else { self.u32()? as usize };
        if n.saturating_mul(item) > self.buf.len() - self.pos {
            return Err(CheckpointError::Truncated);
        }
        Ok(n)
    }
    fn str(&mut self) -> Result<String, CheckpointError> {
        let n = self.len(false, 1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|e| CheckpointError::Corrupt(e.to_string()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>, CheckpointError> {
        let n = self.len(true, 8)?;
        (0..n).map(|_| self.f64()).collect()
    }
}

impl Checkpoint {
    pub fn new(fingerprint: impl Into<String>, kind: impl Into<String>, params: ParameterSet) -> Self {
        Self { fingerprint: fingerprint.into(), kind: kind.into(), params, ..Default::default() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.str(&self.fingerprint);
        w.str(&self.kind);
        w.u64(self.epoch);
        match &self.rng {
            None => w.u8(0),
            Some(r) => {
                w.u8(1);
                w.0.extend_from_slice(&r.seed);
                w.u64(r.stream);
                w.u128(r.word_pos);
            }
        }
        w.u32(self.params.len() as u32);
        for (name, t) in self.params.iter() {
            w.str(name);
            w.u8(self.params.is_frozen(name) as u8);
            w.u32(t.shape().len() as u32);
            t.shape().iter().for_each(|d| w.u64(*d as u64));
            t.values().iter().for_each(|v| w.f64(*v));
        }
        w.u32(self.extras.len() as u32);
        for (name, v) in &self.extras {
            w.str(name);
            w.f64s(v);
        }
        w.u32(self.meta.len() as u32);
        for (k, v) in &self.meta {
            w.str(k);
            w.str(v);
        }
        match &self.optimizer {
            None => w.u8(0),
            Some(o) => {
                w.u8(1);
                w.u8(match o.kind {
                    OptimizerKind::MomentumSgd => 0,
                    OptimizerKind::Adam => 1,
                });
                for v in [o.learning_rate, o.momentum, o.betas.0, o.betas.1, o.eps] {
                    w.f64(v);
                }
                w.u64(o.step_count);
                w.u32(o.buffers.len() as u32);
                for (name, b) in &o.buffers {
                    w.str(name);
                    w.u64(b.steps);
                    w.f64s(&b.first);
                    w.f64s(&b.second);
                }
            }
        }
        w.0
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { buf, pos: 0 };
        if buf.len() < MAGIC.len() || r.take(MAGIC.len())? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let fingerprint = r.str()?;
        let kind = r.str()?;
        let epoch = r.u64()?;
        let rng = if r.flag()? {
            Some(RngState { seed: r.arr()?, stream: r.u64()?, word_pos: r.u128()? })
        } else {
            None
        };
        let mut params = ParameterSet::new();
        let mut frozen = Vec::new();
        for _ in 0..r.len(false, 5)? {
            let name = r.str()?;
            let is_frozen = r.flag()?;
            let rank = r.len(false, 8)?;
            let shape: Vec<usize> = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_, _>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d)).ok_or(CheckpointError::Truncated)?;
            if n.saturating_mul(8) > buf.len() - r.pos {
                return Err(CheckpointError::Truncated);
            }
            let values = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
            if params.insert(name.clone(), Tensor::new(shape, values)?).is_some() {
                return Err(CheckpointError::Corrupt(format!("duplicate parameter {name}")));
            }
            if is_frozen {
                frozen.push(name);
            }
        }
        for name in frozen {
            params.freeze(&name)?;
        }
        let mut extras = BTreeMap::new();
        for _ in 0..r.len(false, 12)? {
            let name = r.str()?;
            extras.insert(name, r.f64s()?);
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.len(false, 8)? {
            let k = r.str()?;
            meta.insert(k, r.str()?);
        }
        let optimizer = if r.flag()? {
            let kind = match r.u8()? {
                0 => OptimizerKind::MomentumSgd,
                1 => OptimizerKind::Adam,
                k => return Err(CheckpointError::Corrupt(format!("optimizer kind {k}"))),
            };
            let learning_rate = r.f64()?;
            let momentum = r.f64()?;
            let betas = (r.f64()?, r.f64()?);
            let eps = r.f64()?;
            let step_count = r.u64()?;
            let mut buffers = BTreeMap::new();
            for _ in 0..r.len(false, 28)? {
                let name = r.str()?;
                let steps = r.u64()?;
                let first = r.f64s()?;
                let second = r.f64s()?;
                buffers.insert(name, MomentBuffer { first, second, steps });
            }
            Some(OptimizerState { kind, learning_rate, momentum, betas, eps, buffers, step_count })
        } else {
            None
        };
        if r.pos != buf.len() {
            return Err(CheckpointError::Corrupt(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(Self { fingerprint, kind, epoch, rng, params, optimizer, extras, meta })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn check_fingerprint(&self, expected: &str) -> Result<(), CheckpointError> {
        if self.fingerprint == expected {
            Ok(())
        } else {
            Err(CheckpointError::FingerprintMismatch { expected: expected.into(), found: self.fingerprint.clone() })
        }
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};

    use super::*;

    fn sample() -> Checkpoint {
        let mut ps = ParameterSet::new();
        ps.insert("a.weight", Tensor::new(vec![2, 3], vec![0.1, -0.0, 1e-300, f64::MAX, -2.5, 3.0]).unwrap());
        ps.insert("b.bias", Tensor::from_vec(vec![1.0 / 3.0]));
        ps.freeze("b.bias").unwrap();
        let mut opt = OptimizerState::adam(0.0005, (0.9, 0.999), 1e-8);
        opt.buffers.insert("a.weight".into(), MomentBuffer { first: vec![0.5; 6], second: vec![0.25; 6], steps: 3 });
        opt.step_count = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let _: u64 = rng.gen();
        let mut ck = Checkpoint::new("abc", "joint", ps);
        ck.epoch = 7;
        ck.rng = Some(RngState::capture(&rng));
        ck.optimizer = Some(opt);
        ck.extras.insert("stats.logmel.mean".into(), vec![1.5, -2.0]);
        ck.meta.insert("config".into(), "seed = 1\n".into());
        ck
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let ck = sample();
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.params.get("a.weight").unwrap().values()[1].to_bits(), (-0.0f64).to_bits());
        assert!(back.params.is_frozen("b.bias"));
        assert_eq!(back.optimizer, ck.optimizer);
        assert_eq!(back.epoch, 7);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.ckpt");
        sample().save(&p).unwrap();
        let first = std::fs::read(&p).unwrap();
        Checkpoint::load(&p).unwrap().save(&p).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), first);
    }

    #[test]
    fn rng_state_resumes_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let _: [u64; 5] = rng.gen();
        let state = RngState::capture(&rng);
        let a: [u64; 4] = rng.gen();
        let b: [u64; 4] = state.restore().gen();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_damaged_input() {
        let bytes = sample().to_bytes();
        assert!(matches!(Checkpoint::from_bytes(b"nope"), Err(CheckpointError::BadMagic)));
        for cut in [10, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut {cut}");
        }
        let mut v = bytes.clone();
        v[8] = 9;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(CheckpointError::UnsupportedVersion(9))));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(CheckpointError::Corrupt(_))));
    }

    #[test]
    fn fingerprint_check() {
        let ck = sample();
        assert!(ck.check_fingerprint("abc").is_ok());
        assert!(matches!(ck.check_fingerprint("xyz"), Err(CheckpointError::FingerprintMismatch { .. })));
    }
}
