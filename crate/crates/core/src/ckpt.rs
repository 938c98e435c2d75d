//! Checkpoint persistence: a self-describing binary container holding every
//! network tensor (little-endian IEEE-754 f32), the critic input scaling and
//! a full snapshot of the run configuration.
//!
//! Layout:
//!
//! ```text
//! magic     8 bytes  "QTRKCKPT"
//! version   u32 LE
//! meta_len  u32 LE   followed by meta_len bytes of JSON (RunConfig + extras)
//! n_tensors u32 LE
//! per tensor:
//!   name_len u16 LE, name bytes (utf-8)
//!   ndim     u8, dims u32 LE each
//!   dtype    u8 (0 = f32)
//!   data     product(dims) * 4 bytes LE
//! ```

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::env::{actor_obs_dim, critic_input_scale, critic_obs_dim};
use crate::error::{Error, Result};
use crate::nn::{LayerNormPos, Policy, TensorSet, ValueNet};

const MAGIC: &[u8; 8] = b"QTRKCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Metadata stored alongside the tensors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub run_config: RunConfig,
    pub ln_pos: LayerNormPos,
    /// Training iterations completed when the checkpoint was written.
    pub iteration: usize,
}

/// A named tensor in f32.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// In-memory checkpoint.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub meta: CheckpointMeta,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    /// Snapshot a policy/critic pair.
    pub fn from_nets(
        policy: &Policy<f32>,
        critic: &ValueNet<f32>,
        run_config: &RunConfig,
        iteration: usize,
    ) -> Self {
        let mut tensors = Vec::new();
        let names = TensorSet::<f32>::tensor_names(policy);
        let shapes = TensorSet::<f32>::tensor_shapes(policy);
        let datas = TensorSet::<f32>::slices(policy);
        for ((name, shape), data) in names.into_iter().zip(shapes).zip(datas) {
            tensors.push(NamedTensor { name, shape, data: data.to_vec() });
        }
        let names = TensorSet::<f32>::tensor_names(critic);
        let shapes = TensorSet::<f32>::tensor_shapes(critic);
        let datas = TensorSet::<f32>::slices(critic);
        for ((name, shape), data) in names.into_iter().zip(shapes).zip(datas) {
            tensors.push(NamedTensor { name, shape, data: data.to_vec() });
        }
        tensors.push(NamedTensor {
            name: "critic.input_scale".into(),
            shape: vec![critic.input_scale.len()],
            data: critic.input_scale.iter().copied().collect(),
        });
        Checkpoint {
            version: FORMAT_VERSION,
            meta: CheckpointMeta {
                run_config: run_config.clone(),
                ln_pos: policy.enc.ln_pos,
                iteration,
            },
            tensors,
        }
    }

    /// Rebuild the policy/critic pair this checkpoint describes.
    pub fn restore_nets(&self) -> Result<(Policy<f32>, ValueNet<f32>)> {
        let cfg = &self.meta.run_config;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut policy = Policy::<f32>::new(
            &mut rng,
            actor_obs_dim(&cfg.env),
            cfg.train.hidden_dim,
            4,
            cfg.train.init_log_std,
            self.meta.ln_pos,
        );
        let scale: Array1<f32> = critic_input_scale(&cfg.env);
        let mut critic = ValueNet::<f32>::new(
            &mut rng,
            critic_obs_dim(&cfg.env),
            cfg.train.hidden_dim,
            scale,
            self.meta.ln_pos,
        );
        let by_name: std::collections::HashMap<&str, &NamedTensor> =
            self.tensors.iter().map(|t| (t.name.as_str(), t)).collect();

        fill(&mut policy, &by_name)?;
        fill(&mut critic, &by_name)?;
        if let Some(t) = by_name.get("critic.input_scale") {
            if t.data.len() != critic.input_scale.len() {
                return Err(Error::CheckpointFormat(format!(
                    "critic.input_scale length {} does not match configuration {}",
                    t.data.len(),
                    critic.input_scale.len()
                )));
            }
            critic.input_scale = Array1::from_vec(t.data.clone());
        }
        Ok((policy, critic))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(MAGIC)?;
        out.write_all(&self.version.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.meta)
            .map_err(|e| Error::CheckpointFormat(format!("meta encode: {e}")))?;
        out.write_all(&(meta.len() as u32).to_le_bytes())?;
        out.write_all(&meta)?;
        out.write_all(&(self.tensors.len() as u32).to_le_bytes())?;
        for t in &self.tensors {
            let name = t.name.as_bytes();
            out.write_all(&(name.len() as u16).to_le_bytes())?;
            out.write_all(name)?;
            out.write_all(&[t.shape.len() as u8])?;
            for d in &t.shape {
                out.write_all(&(*d as u32).to_le_bytes())?;
            }
            out.write_all(&[0u8])?; // dtype f32
            let expect: usize = t.shape.iter().product();
            if expect != t.data.len() {
                return Err(Error::CheckpointFormat(format!(
                    "tensor {} shape/data mismatch",
                    t.name
                )));
            }
            for v in &t.data {
                out.write_all(&v.to_le_bytes())?;
            }
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut magic = [0u8; 8];
        read_exact(&mut file, &mut magic, "magic")?;
        if &magic != MAGIC {
            return Err(Error::CheckpointFormat("bad magic bytes".into()));
        }
        let version = read_u32(&mut file, "version")?;
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointFormat(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let meta_len = read_u32(&mut file, "meta length")? as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        read_exact(&mut file, &mut meta_bytes, "meta")?;
        let meta: CheckpointMeta = serde_json::from_slice(&meta_bytes)
            .map_err(|e| Error::CheckpointFormat(format!("meta decode: {e}")))?;
        let n_tensors = read_u32(&mut file, "tensor count")? as usize;
        let mut tensors = Vec::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let mut len2 = [0u8; 2];
            read_exact(&mut file, &mut len2, "name length")?;
            let name_len = u16::from_le_bytes(len2) as usize;
            let mut name = vec![0u8; name_len];
            read_exact(&mut file, &mut name, "name")?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::CheckpointFormat("tensor name not utf-8".into()))?;
            let mut ndim = [0u8; 1];
            read_exact(&mut file, &mut ndim, "ndim")?;
            let mut shape = Vec::with_capacity(ndim[0] as usize);
            for _ in 0..ndim[0] {
                shape.push(read_u32(&mut file, "dim")? as usize);
            }
            let mut dtype = [0u8; 1];
            read_exact(&mut file, &mut dtype, "dtype")?;
            if dtype[0] != 0 {
                return Err(Error::CheckpointFormat(format!(
                    "tensor {name}: unsupported dtype {}",
                    dtype[0]
                )));
            }
            let count: usize = shape.iter().product();
            let mut data = vec![0f32; count];
            let mut buf = [0u8; 4];
            for v in data.iter_mut() {
                read_exact(&mut file, &mut buf, "tensor data")?;
                *v = f32::from_le_bytes(buf);
            }
            tensors.push(NamedTensor { name, shape, data });
        }
        Ok(Checkpoint { version, meta, tensors })
    }
}

fn fill<N: TensorSet<f32>>(
    net: &mut N,
    by_name: &std::collections::HashMap<&str, &NamedTensor>,
) -> Result<()> {
    let names = net.tensor_names();
    let shapes = net.tensor_shapes();
    let mut slices = net.slices_mut();
    for i in 0..names.len() {
        let t = by_name.get(names[i].as_str()).ok_or_else(|| {
            Error::CheckpointFormat(format!("missing tensor {}", names[i]))
        })?;
        if t.shape != shapes[i] {
            return Err(Error::CheckpointFormat(format!(
                "tensor {} shape {:?} does not match expected {:?}",
                names[i], t.shape, shapes[i]
            )));
        }
        slices[i].copy_from_slice(&t.data);
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::CheckpointFormat(format!("truncated file while reading {what}")))
}

fn read_u32<R: Read>(r: &mut R, what: &str) -> Result<u32> {
    let mut buf = [0u8; 4];
    read_exact(r, &mut buf, what)?;
    Ok(u32::from_le_bytes(buf))
}
