//! Self-describing binary checkpoint container with named parameter
//! records, optimizer moments, RNG stream positions, and the training
//! history, so a run resumes bit-identically.
//!
//! Layout (little-endian): magic "PCCKPT01", config digest u64, seed u64,
//! epoch u64, since-best u64, adam step u64, RNG records (stream, word-pos
//! as two u64 halves), history records, named f64 parameter records, adam
//! first/second moment blocks (order-aligned with the parameters), and the
//! optional best-validation snapshot.

use std::path::Path;

use crate::config::Config;
use crate::loss::LossValues;
use crate::model::Pipeline;
use crate::trainer::{EpochRecord, TrainError, Trainer};

const MAGIC: &[u8; 8] = b"PCCKPT01";

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Writer {
        Writer { buf: Vec::new() }
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn bytes(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u64(vs.len() as u64);
        for &v in vs {
            self.f64(v);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        if self.pos + n > self.buf.len() {
            return Err(TrainError::Checkpoint(format!(
                "truncated checkpoint at byte {} (wanted {n} more)",
                self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u16(&mut self) -> Result<u16, TrainError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, TrainError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64s(&mut self) -> Result<Vec<f64>, TrainError> {
        let n = self.u64()? as usize;
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            out.push(self.f64()?);
        }
        Ok(out)
    }
}

pub fn save_checkpoint(
    path: &Path,
    pipeline: &Pipeline,
    trainer: &Trainer,
    cfg: &Config,
) -> Result<(), TrainError> {
    let mut w = Writer::new();
    w.bytes(MAGIC);
    w.u64(cfg.digest());
    w.u64(cfg.seed);
    w.u64(trainer.epoch as u64);
    w.u64(trainer.since_best() as u64);
    w.u64(trainer.adam.t);

    let rngs = trainer.rng_states();
    w.u32(rngs.len() as u32);
    for (stream, word_pos) in rngs {
        w.u64(stream);
        w.u64(word_pos as u64);
        w.u64((word_pos >> 64) as u64);
    }

    w.u32(trainer.history.len() as u32);
    for r in &trainer.history {
        w.u64(r.epoch as u64);
        for v in [r.train.cd, r.train.sym, r.train.sparsity, r.train.diversity, r.train.total, r.val_cd] {
            w.f64(v);
        }
    }

    let params = pipeline.parameters();
    w.u32(params.len() as u32);
    for (name, p) in &params {
        let bytes = name.as_bytes();
        w.u16(bytes.len() as u16);
        w.bytes(bytes);
        w.f64s(&p.to_vec());
    }
    for m in &trainer.adam.m {
        w.f64s(m);
    }
    for v in &trainer.adam.v {
        w.f64s(v);
    }

    match trainer.best_snapshot() {
        None => w.u16(0),
        Some((epoch, val, snapshot)) => {
            w.u16(1);
            w.u64(epoch as u64);
            w.f64(val);
            w.u32(snapshot.len() as u32);
            for s in snapshot {
                w.f64s(s);
            }
        }
    }

    std::fs::write(path, &w.buf)?;
    Ok(())
}

/// Restores parameters, optimizer state, RNG positions, history, and the
/// best-validation snapshot. The checkpoint must carry the digest of the
/// same config.
pub fn load_checkpoint(
    path: &Path,
    pipeline: &Pipeline,
    trainer: &mut Trainer,
    cfg: &Config,
) -> Result<(), TrainError> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader { buf: &bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(TrainError::Checkpoint("bad magic".into()));
    }
    let digest = r.u64()?;
    if digest != cfg.digest() {
        return Err(TrainError::Checkpoint(format!(
            "config digest mismatch: checkpoint {:016x}, current {:016x}",
            digest,
            cfg.digest()
        )));
    }
    let _seed = r.u64()?;
    let epoch = r.u64()? as usize;
    let since_best = r.u64()? as usize;
    let adam_t = r.u64()?;

    let rng_count = r.u32()? as usize;
    let mut rng_states = Vec::with_capacity(rng_count);
    for _ in 0..rng_count {
        let stream = r.u64()?;
        let lo = r.u64()? as u128;
        let hi = r.u64()? as u128;
        rng_states.push((stream, lo | (hi << 64)));
    }

    let hist_count = r.u32()? as usize;
    let mut history = Vec::with_capacity(hist_count);
    for _ in 0..hist_count {
        let epoch = r.u64()? as usize;
        let cd = r.f64()?;
        let sym = r.f64()?;
        let sparsity = r.f64()?;
        let diversity = r.f64()?;
        let total = r.f64()?;
        let val_cd = r.f64()?;
        history.push(EpochRecord {
            epoch,
            train: LossValues {
                cd,
                sym,
                sparsity,
                diversity,
                total,
            },
            val_cd,
        });
    }

    let params = pipeline.parameters();
    let param_count = r.u32()? as usize;
    if param_count != params.len() {
        return Err(TrainError::Checkpoint(format!(
            "parameter count mismatch: checkpoint {param_count}, model {}",
            params.len()
        )));
    }
    for (name, p) in &params {
        let len = r.u16()? as usize;
        let stored = String::from_utf8_lossy(r.take(len)?).to_string();
        if &stored != name {
            return Err(TrainError::Checkpoint(format!(
                "parameter order mismatch: checkpoint has {stored}, model expects {name}"
            )));
        }
        let data = r.f64s()?;
        if data.len() != p.len() {
            return Err(TrainError::Checkpoint(format!(
                "parameter {name}: size {} vs model {}",
                data.len(),
                p.len()
            )));
        }
        p.set_data(&data);
        p.zero_grad();
    }
    let mut adam_m = Vec::with_capacity(param_count);
    for _ in 0..param_count {
        adam_m.push(r.f64s()?);
    }
    let mut adam_v = Vec::with_capacity(param_count);
    for _ in 0..param_count {
        adam_v.push(r.f64s()?);
    }

    let best = match r.u16()? {
        0 => None,
        _ => {
            let epoch = r.u64()? as usize;
            let val = r.f64()?;
            let count = r.u32()? as usize;
            let mut snapshot = Vec::with_capacity(count);
            for _ in 0..count {
                snapshot.push(r.f64s()?);
            }
            Some((epoch, val, snapshot))
        }
    };

    trainer.epoch = epoch;
    trainer.history = history;
    trainer.adam.t = adam_t;
    trainer.adam.m = adam_m;
    trainer.adam.v = adam_v;
    trainer.restore_rng_states(cfg, &rng_states);
    if let Some((epoch, val, snapshot)) = best {
        trainer.restore_best(epoch, val, snapshot, since_best);
    }
    Ok(())
}
