//! Named parameter storage, initialisation, Adam and checkpoint files.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use panoqa_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::tensor::{Shape, Tensor};

const MAGIC: &[u8; 8] = b"PANOQAP1";

/// Trainable tensors plus non-trainable buffers (batch-norm running stats).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor>,
    buffers: BTreeMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor) {
        self.params.insert(name.into(), t);
    }

    pub fn insert_buffer(&mut self, name: impl Into<String>, t: Tensor) {
        self.buffers.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::arg(format!("no parameter named '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::arg(format!("no parameter named '{name}'")))
    }

    pub fn buffer(&self, name: &str) -> Result<&Tensor> {
        self.buffers
            .get(name)
            .ok_or_else(|| Error::arg(format!("no buffer named '{name}'")))
    }

    pub fn buffer_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.buffers
            .get_mut(name)
            .ok_or_else(|| Error::arg(format!("no buffer named '{name}'")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().chain(self.buffers.values()).all(Tensor::is_finite)
    }

    /// Blends batch statistics into running buffers:
    /// `running ← (1 − momentum)·running + momentum·batch`.
    pub fn update_running(&mut self, name: &str, mean: &[f64], var: &[f64], momentum: f64) -> Result<()> {
        for (suffix, batch) in [("running_mean", mean), ("running_var", var)] {
            let buf = self.buffer_mut(&format!("{name}.{suffix}"))?;
            for (r, b) in buf.data.iter_mut().zip(batch) {
                *r = (1.0 - momentum) * *r + momentum * b;
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        let entries: Vec<(u8, &String, &Tensor)> = self
            .params
            .iter()
            .map(|(k, v)| (0u8, k, v))
            .chain(self.buffers.iter().map(|(k, v)| (1u8, k, v)))
            .collect();
        out.extend_from_slice(&(entries.len() as u64).to_le_bytes());
        for (kind, name, t) in entries {
            out.push(kind);
            out.extend_from_slice(&(name.len() as u64).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            for d in t.shape.dims() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        let bad = |what: &str| Error::arg(format!("{} is not a valid checkpoint: {what}", path.display()));
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let s = bytes.get(pos..pos + n).ok_or_else(|| bad("truncated"))?;
            pos += n;
            Ok(s)
        };
        if take(8)? != MAGIC {
            return Err(bad("bad magic"));
        }
        let u64_at = |b: &[u8]| u64::from_le_bytes(b.try_into().expect("8 bytes")) as usize;
        let count = u64_at(take(8)?);
        let mut store = ParamStore::new();
        for _ in 0..count {
            let kind = take(1)?[0];
            let len = u64_at(take(8)?);
            let name = String::from_utf8(take(len)?.to_vec()).map_err(|_| bad("non-UTF-8 name"))?;
            let mut dims = [0usize; 4];
            for d in &mut dims {
                *d = u64_at(take(8)?);
            }
            let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]);
            let raw = take(shape.numel() * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(shape, data);
            match kind {
                0 => store.insert(name, t),
                1 => store.insert_buffer(name, t),
                _ => return Err(bad("unknown entry kind")),
            }
        }
        if !store.all_finite() {
            return Err(bad("non-finite values"));
        }
        Ok(store)
    }
}

/// Deterministic initialiser.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// He-normal weights, `std = gain·sqrt(2 / fan_in)`.
    pub fn he(&mut self, shape: Shape, gain: f64) -> Tensor {
        let fan_in = shape.c * shape.h * shape.w;
        let std = gain * (2.0 / fan_in as f64).sqrt();
        if std == 0.0 {
            return Tensor::zeros(shape);
        }
        Tensor::randn(shape, std, &mut self.rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected adaptive-moment update of every parameter with a gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let (m, v) = self
                .moments
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for i in 0..g.len() {
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
                let mh = m[i] / bc1;
                let vh = v[i] / bc2;
                p.data[i] -= c.learning_rate * mh / (vh.sqrt() + c.eps);
            }
        }
        Ok(())
    }
}
