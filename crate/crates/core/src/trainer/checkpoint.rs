//! Binary checkpoints with full optimizer, pool and random state for exact resume.
//!
//! Layout: magic, format version, section count, then tagged sections
//! (`[u8; 4]` tag, `u64` length, payload), then a SHA-256 of everything before it.
//! All integers and floats are little-endian. Parameters and pool states use the
//! trainer's scalar width; optimizer moments are always 64-bit.

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::Disc;
use crate::error::{io_err, NcaError, Result};
use crate::grid::{CellGrid, ChannelLayout};
use crate::model::{Layer, ModelParams};
use crate::scalar::Scalar;
use crate::trainer::adam::AdamState;
use crate::trainer::pool::{PoolEntry, Task};
use crate::trainer::train::{TrainConfig, TrainSet, Trainer};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GNCACKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

const LAYT: [u8; 4] = *b"LAYT";
const CONF: [u8; 4] = *b"CONF";
const PARM: [u8; 4] = *b"PARM";
const ADAM: [u8; 4] = *b"ADAM";
const POOL: [u8; 4] = *b"POOL";
const RNGS: [u8; 4] = *b"RNGS";
const EPOC: [u8; 4] = *b"EPOC";
const DATA: [u8; 4] = *b"DATA";
const ORDER: [[u8; 4]; 8] = [LAYT, CONF, PARM, ADAM, POOL, RNGS, EPOC, DATA];

fn corrupt(msg: impl Into<String>) -> NcaError {
    NcaError::Checkpoint(msg.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt(format!("{} section is truncated", self.what)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        let n = self.u64()?;
        usize::try_from(n).map_err(|_| corrupt(format!("{} length {n} is too large", self.what)))
    }

    fn scalars<S: Scalar>(&mut self, n: usize) -> Result<Vec<S>> {
        let w = S::WIDTH as usize;
        let raw = self.take(n.checked_mul(w).ok_or_else(|| corrupt("length overflow"))?)?;
        Ok(raw.chunks_exact(w).map(S::read_le).collect())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| corrupt("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos == self.bytes.len() {
            Ok(())
        } else {
            Err(corrupt(format!("{} section has trailing bytes", self.what)))
        }
    }
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_scalars<S: Scalar>(out: &mut Vec<u8>, values: &[S]) {
    put_u64(out, values.len() as u64);
    for &v in values {
        v.write_le(out);
    }
}

/// Decoded checkpoint. Parameters can be read at either scalar width; the full
/// trainer state only at the width it was written with.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub scalar_width: u8,
    pub layout: ChannelLayout,
    pub hidden: usize,
    pub config: TrainConfig,
    /// Completed optimizer updates.
    pub epoch: u64,
    pub data_fingerprint: [u8; 32],
    /// SHA-256 of the whole file.
    pub digest: [u8; 32],
    params: Vec<u8>,
    adam: Vec<u8>,
    pool: Vec<u8>,
    rng: Vec<u8>,
}

impl Checkpoint {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() + 8 + 32 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let (body, trailer) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body)[..] != trailer[..] {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader::new(&body[8..], "header");
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(corrupt(format!("unsupported checkpoint version {version}")));
        }
        let count = r.u32()? as usize;
        if count != ORDER.len() {
            return Err(corrupt(format!("expected {} sections, found {count}", ORDER.len())));
        }
        let mut sections = Vec::with_capacity(count);
        for want in ORDER {
            let tag = r.take(4)?;
            if tag != want {
                return Err(corrupt(format!(
                    "expected section {}, found {}",
                    String::from_utf8_lossy(&want),
                    String::from_utf8_lossy(tag)
                )));
            }
            let n = r.len()?;
            sections.push(r.take(n)?.to_vec());
        }
        r.finish()?;
        let [layt, conf, params, adam, pool, rng, epoc, data]: [Vec<u8>; 8] =
            sections.try_into().expect("eight sections");

        let mut l = Reader::new(&layt, "LAYT");
        let scalar_width = l.u8()?;
        let (k, n, hidden) = (l.len()?, l.len()?, l.len()?);
        l.finish()?;
        if scalar_width != 4 && scalar_width != 8 {
            return Err(corrupt(format!("unsupported scalar width {scalar_width}")));
        }
        let layout = ChannelLayout::new(k, n).map_err(|e| corrupt(e.to_string()))?;
        let config: TrainConfig =
            serde_json::from_slice(&conf).map_err(|e| corrupt(format!("CONF section: {e}")))?;
        let mut e = Reader::new(&epoc, "EPOC");
        let epoch = e.u64()?;
        e.finish()?;
        let data_fingerprint: [u8; 32] = data
            .as_slice()
            .try_into()
            .map_err(|_| corrupt("DATA section must hold 32 bytes"))?;
        Ok(Self {
            scalar_width,
            layout,
            hidden,
            config,
            epoch,
            data_fingerprint,
            digest: Sha256::digest(bytes).into(),
            params,
            adam,
            pool,
            rng,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            NcaError::Checkpoint(m) => corrupt(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn params_at<T: Scalar>(&self) -> Result<ModelParams<T>> {
        let mut r = Reader::new(&self.params, "PARM");
        let mut layers = Vec::with_capacity(Layer::ALL.len());
        for _ in Layer::ALL {
            let n = r.len()?;
            layers.push(r.scalars::<T>(n)?);
        }
        r.finish()?;
        let [w1, b1, w2, b2]: [Vec<T>; 4] = layers.try_into().expect("four layers");
        ModelParams::from_layers(self.layout, self.hidden, w1, b1, w2, b2).map_err(|e| corrupt(e.to_string()))
    }

    /// Model parameters converted to `S`, whatever width they were stored at.
    pub fn params<S: Scalar>(&self) -> Result<ModelParams<S>> {
        match self.scalar_width {
            4 => Ok(self.params_at::<f32>()?.cast()),
            _ => Ok(self.params_at::<f64>()?.cast()),
        }
    }

    fn adam_state(&self) -> Result<AdamState> {
        let mut r = Reader::new(&self.adam, "ADAM");
        let (lr, beta1, beta2, eps) = (r.f64()?, r.f64()?, r.f64()?, r.f64()?);
        let step = r.u64()?;
        let mut m = Vec::new();
        let mut v = Vec::new();
        for _ in Layer::ALL {
            let n = r.len()?;
            m.push(r.f64s(n)?);
            let n = r.len()?;
            v.push(r.f64s(n)?);
        }
        r.finish()?;
        Ok(AdamState::from_parts(lr, beta1, beta2, eps, step, m, v))
    }

    fn pool_entries<S: Scalar>(&self, height: usize, width: usize) -> Result<Vec<PoolEntry<S>>> {
        let mut r = Reader::new(&self.pool, "POOL");
        let count = r.len()?;
        let mut pool = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let sample = r.len()?;
            let task = Task::from_index(r.u8()?).ok_or_else(|| corrupt("unknown task in pool"))?;
            let age = r.u64()?;
            let disc = Disc {
                cy: r.f64()?,
                cx: r.f64()?,
                radius: r.f64()?,
            };
            let state = match r.u8()? {
                0 => None,
                1 => {
                    let n = r.len()?;
                    if n != height * width * self.layout.n() {
                        return Err(corrupt("pool state does not match the map size"));
                    }
                    let values = r.scalars::<S>(n)?;
                    Some(CellGrid::from_values(height, width, self.layout, values).map_err(|e| corrupt(e.to_string()))?)
                }
                f => return Err(corrupt(format!("bad pool state flag {f}"))),
            };
            pool.push(PoolEntry {
                sample,
                state,
                disc,
                task,
                age,
            });
        }
        r.finish()?;
        Ok(pool)
    }

    fn rng(&self) -> Result<ChaCha8Rng> {
        let mut r = Reader::new(&self.rng, "RNGS");
        let seed: [u8; 32] = r.take(32)?.try_into().expect("32 bytes");
        let stream = r.u64()?;
        let lo = r.u64()? as u128;
        let hi = r.u64()? as u128;
        r.finish()?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(stream);
        rng.set_word_pos(lo | (hi << 64));
        Ok(rng)
    }
}

/// Human-readable summary written next to each checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub scalar: String,
    pub k: usize,
    pub channels: usize,
    pub hidden: usize,
    pub perception: usize,
    pub epoch: u64,
    pub pool_size: usize,
    pub sha256: String,
    pub data_fingerprint: String,
    pub layers: Vec<LayerShape>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerShape {
    pub name: String,
    pub values: usize,
    pub sha256: String,
}

/// Path of the sidecar manifest for checkpoint `path`.
pub fn manifest_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.toml");
    PathBuf::from(s)
}

impl<S: Scalar> Trainer<S> {
    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut sections: Vec<Vec<u8>> = Vec::with_capacity(ORDER.len());

        let mut layt = vec![S::WIDTH];
        for v in [self.layout.k(), self.layout.n(), self.params.hidden()] {
            put_u64(&mut layt, v as u64);
        }
        sections.push(layt);
        sections.push(serde_json::to_vec(&self.cfg).expect("config serializes"));

        let mut parm = Vec::new();
        for layer in Layer::ALL {
            put_scalars(&mut parm, self.params.layer(layer));
        }
        sections.push(parm);

        let mut adam = Vec::new();
        for v in [self.adam.lr, self.adam.beta1, self.adam.beta2, self.adam.eps] {
            put_f64(&mut adam, v);
        }
        put_u64(&mut adam, self.adam.step);
        for (m, v) in self.adam.m.iter().zip(&self.adam.v) {
            for moments in [m, v] {
                put_u64(&mut adam, moments.len() as u64);
                moments.iter().for_each(|&x| put_f64(&mut adam, x));
            }
        }
        sections.push(adam);

        let mut pool = Vec::new();
        put_u64(&mut pool, self.pool.len() as u64);
        for e in &self.pool {
            put_u64(&mut pool, e.sample as u64);
            pool.push(e.task.index() as u8);
            put_u64(&mut pool, e.age);
            for v in [e.disc.cy, e.disc.cx, e.disc.radius] {
                put_f64(&mut pool, v);
            }
            match &e.state {
                None => pool.push(0),
                Some(s) => {
                    pool.push(1);
                    put_scalars(&mut pool, s.values());
                }
            }
        }
        sections.push(pool);

        let mut rng = self.rng.get_seed().to_vec();
        put_u64(&mut rng, self.rng.get_stream());
        let pos = self.rng.get_word_pos();
        put_u64(&mut rng, pos as u64);
        put_u64(&mut rng, (pos >> 64) as u64);
        sections.push(rng);

        sections.push(self.epoch.to_le_bytes().to_vec());
        sections.push(self.train.fingerprint().to_vec());

        let mut out = CHECKPOINT_MAGIC.to_vec();
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(ORDER.len() as u32).to_le_bytes());
        for (tag, payload) in ORDER.iter().zip(&sections) {
            out.extend_from_slice(tag);
            put_u64(&mut out, payload.len() as u64);
            out.extend_from_slice(payload);
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn checkpoint_manifest(&self, bytes: &[u8]) -> CheckpointManifest {
        let hash = |b: &[u8]| hex::encode(Sha256::digest(b));
        let layers = Layer::ALL
            .iter()
            .map(|&l| {
                let mut raw = Vec::new();
                for &v in self.params.layer(l) {
                    v.write_le(&mut raw);
                }
                LayerShape {
                    name: l.name().to_string(),
                    values: self.params.layer(l).len(),
                    sha256: hash(&raw),
                }
            })
            .collect();
        CheckpointManifest {
            format_version: CHECKPOINT_VERSION,
            scalar: if S::WIDTH == 4 { "f32" } else { "f64" }.to_string(),
            k: self.layout.k(),
            channels: self.layout.n(),
            hidden: self.params.hidden(),
            perception: self.params.perception_dim(),
            epoch: self.epoch,
            pool_size: self.pool.len(),
            sha256: hash(bytes),
            data_fingerprint: hex::encode(self.train.fingerprint()),
            layers,
        }
    }

    /// Writes the checkpoint and its sidecar manifest, each via a temporary file and rename.
    pub fn save_checkpoint(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let bytes = self.checkpoint_bytes();
        let manifest = toml::to_string(&self.checkpoint_manifest(&bytes)).expect("manifest serializes");
        write_atomic(path, &bytes)?;
        write_atomic(&manifest_path(path), manifest.as_bytes())
    }

    /// Rebuilds a trainer exactly as it was when `ckpt` was written. `train` must be the
    /// same training set, which is checked by fingerprint.
    pub fn resume(ckpt: &Checkpoint, train: TrainSet<S>) -> Result<Self> {
        if ckpt.scalar_width != S::WIDTH {
            return Err(corrupt(format!(
                "checkpoint stores {}-byte scalars, trainer uses {}",
                ckpt.scalar_width,
                S::WIDTH
            )));
        }
        if ckpt.data_fingerprint != train.fingerprint() {
            return Err(corrupt("checkpoint was written for a different training set"));
        }
        ckpt.config.validate()?;
        let params = ckpt.params_at::<S>()?;
        let adam = ckpt.adam_state()?;
        let shapes_match = Layer::ALL.iter().all(|&l| {
            let (m, v) = adam.moments(l);
            m.len() == params.layer(l).len() && v.len() == params.layer(l).len()
        });
        if !shapes_match {
            return Err(corrupt("optimizer moments do not match parameter shapes"));
        }
        let pool = ckpt.pool_entries::<S>(train.height(), train.width())?;
        if pool.len() != ckpt.config.pool_size || pool.iter().any(|e| e.sample >= train.len()) {
            return Err(corrupt("pool does not match the configuration or training set"));
        }
        Ok(Self {
            cfg: ckpt.config.clone(),
            layout: ckpt.layout,
            train,
            params,
            adam,
            pool,
            rng: ckpt.rng()?,
            epoch: ckpt.epoch,
        })
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}
