//! Versioned binary checkpoints.
//!
//! Layout (little endian):
//! `ITER` | u32 version | config JSON | config echo | parameters |
//! Adam step + first and second moments | error statistics | step |
//! RNG seed, stream and word position | SHA-256 of everything before it.
//!
//! Strings are u32-length-prefixed UTF-8. A tensor group is a u32 count of
//! entries, each a prefixed name, u32 rank, u64 dims and f64 values.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::encoder::{EncoderConfig, Model, ModelParams};
use crate::error::{Error, Result};
use crate::pseudo_obs::ErrorStats;
use crate::scalar::Scalar;
use crate::trainer::{Adam, Checkpoint};

pub const MAGIC: &[u8; 4] = b"ITER";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len() as u32);
    out.extend_from_slice(s.as_bytes());
}

fn put_tensors<S: Scalar>(out: &mut Vec<u8>, params: &ModelParams<S>) {
    put_u32(out, params.len() as u32);
    for (name, t) in params.iter() {
        put_str(out, name);
        put_u32(out, t.shape().len() as u32);
        for &d in t.shape() {
            put_u64(out, d as u64);
        }
        for &x in t.data() {
            put_f64(out, x.as_f64());
        }
    }
}

/// Serializes a checkpoint to bytes.
pub fn encode_checkpoint<S: Scalar>(ckpt: &Checkpoint<S>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, FORMAT_VERSION);
    let config = serde_json::to_string(&ckpt.model.config)
        .map_err(|e| Error::Config(format!("cannot serialize encoder config: {e}")))?;
    put_str(&mut out, &config);
    put_str(&mut out, &ckpt.config_echo);
    put_tensors(&mut out, &ckpt.model.params);

    put_u64(&mut out, ckpt.optimizer.t);
    put_tensors(&mut out, &ckpt.optimizer.m);
    put_tensors(&mut out, &ckpt.optimizer.v);

    let stats = &ckpt.stats;
    put_u32(&mut out, stats.n_vars() as u32);
    put_f64(&mut out, stats.rho.as_f64());
    out.push(stats.initialized as u8);
    for &m in &stats.mu {
        put_f64(&mut out, m.as_f64());
    }
    for &s in &stats.sigma {
        put_f64(&mut out, s.as_f64());
    }

    put_u64(&mut out, ckpt.step);
    out.extend_from_slice(&ckpt.rng.get_seed());
    put_u64(&mut out, ckpt.rng.get_stream());
    out.extend_from_slice(&ckpt.rng.get_word_pos().to_le_bytes());

    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Integrity(format!("unexpected end of data at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.array()?))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Integrity("invalid UTF-8 string".into()))
    }

    fn tensors<S: Scalar>(&mut self) -> Result<ModelParams<S>> {
        let count = self.u32()?;
        let mut map = BTreeMap::new();
        for _ in 0..count {
            let name = self.string()?;
            let rank = self.u32()? as usize;
            if rank > 2 {
                return Err(Error::Integrity(format!("tensor {name} has rank {rank}")));
            }
            let shape = (0..rank)
                .map(|_| self.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d));
            let numel = numel
                .filter(|&n| n <= (self.bytes.len() - self.pos) / 8)
                .ok_or_else(|| Error::Integrity(format!("tensor {name} larger than the file")))?;
            let data = (0..numel)
                .map(|_| self.f64().map(S::lit))
                .collect::<Result<Vec<_>>>()?;
            map.insert(name, Tensor::new(&shape, data)?);
        }
        Ok(ModelParams::from_map(map))
    }
}

/// Parses bytes written by [`encode_checkpoint`]. The checksum is verified
/// before anything is decoded.
pub fn decode_checkpoint<S: Scalar>(bytes: &[u8]) -> Result<Checkpoint<S>> {
    if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN {
        return Err(Error::Integrity(format!("file too short ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Integrity("bad magic bytes".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Integrity("checksum mismatch".into()));
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let config: EncoderConfig = serde_json::from_str(&r.string()?)
        .map_err(|e| Error::Integrity(format!("bad encoder config: {e}")))?;
    let config_echo = r.string()?;
    let params = r.tensors()?;
    let model = Model::from_parts(config, params)?;

    let t = r.u64()?;
    let m = r.tensors()?;
    let v = r.tensors()?;
    for buffer in [&m, &v] {
        buffer.check(&model.config)?;
    }
    let optimizer = Adam { m, v, t };

    let n = r.u32()? as usize;
    if n != model.config.n_vars {
        return Err(Error::Integrity(format!(
            "statistics cover {n} variables, model has {}",
            model.config.n_vars
        )));
    }
    let rho = r.f64()?;
    let initialized = match r.u8()? {
        0 => false,
        1 => true,
        b => return Err(Error::Integrity(format!("bad flag byte {b}"))),
    };
    let mut stats = ErrorStats::new(n, rho).map_err(|e| Error::Integrity(e.to_string()))?;
    stats.initialized = initialized;
    for m in stats.mu.iter_mut() {
        *m = S::lit(r.f64()?);
    }
    for s in stats.sigma.iter_mut() {
        *s = S::lit(r.f64()?);
    }

    let step = r.u64()?;
    let seed: [u8; 32] = r.array()?;
    let stream = r.u64()?;
    let word_pos = u128::from_le_bytes(r.array()?);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    if r.pos != body.len() {
        return Err(Error::Integrity(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(Checkpoint {
        model,
        optimizer,
        stats,
        step,
        rng,
        config_echo,
    })
}

/// Writes the checkpoint atomically: a sibling temporary file is renamed
/// into place.
pub fn save_checkpoint<S: Scalar>(ckpt: &Checkpoint<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_checkpoint(ckpt)?;
    let tmp = path.with_extension("partial");
    fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<S: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<S>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}

/// Hex SHA-256 over the parameter tensors only, for comparing runs.
pub fn params_checksum<S: Scalar>(params: &ModelParams<S>) -> String {
    let mut bytes = Vec::new();
    put_tensors(&mut bytes, params);
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}
