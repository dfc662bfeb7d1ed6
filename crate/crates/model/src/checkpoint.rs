//! Binary checkpoints holding the configuration, iteration counter, every
//! parameter and the optimizer moments. Values are stored as raw
//! little-endian bytes, so a save/load round trip is bit-exact.
//!
//! Layout: magic, `u32` version, config JSON, `u64` iteration, `u8` dtype,
//! optimizer step counts, then named tensors.

use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use stainsep_core::TrainConfig;

use crate::error::{ModelError, Result};
use crate::model::{config_differences, StainSeparator};

const MAGIC: &[u8; 8] = b"STSPCKPT";
const VERSION: u32 = 1;

fn dtype_code(d: DType) -> u8 {
    match d {
        DType::F64 => 1,
        _ => 0,
    }
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
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
    fn tensor(&mut self, name: &str, t: &Tensor) -> Result<()> {
        self.bytes(name.as_bytes());
        let dims = t.dims();
        self.u32(dims.len() as u32);
        for &d in dims {
            self.u64(d as u64);
        }
        let flat = t.flatten_all()?;
        match t.dtype() {
            DType::F64 => {
                for v in flat.to_vec1::<f64>()? {
                    self.0.extend_from_slice(&v.to_le_bytes());
                }
            }
            _ => {
                for v in flat.to_dtype(DType::F32)?.to_vec1::<f32>()? {
                    self.0.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(())
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| ModelError::Checkpoint("checkpoint is truncated".into()))?;
        let out = &self.buf[self.pos..end];
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
    fn bytes(&mut self) -> Result<&[u8]> {
        let n = self.u64()? as usize;
        self.take(n)
    }
    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| ModelError::Checkpoint("invalid UTF-8 name".into()))
    }
    fn tensor(&mut self, dtype: DType) -> Result<(String, Tensor)> {
        let name = self.string()?;
        let nd = self.u32()? as usize;
        let dims = (0..nd).map(|_| Ok(self.u64()? as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = dims.iter().product();
        let t = match dtype {
            DType::F64 => {
                let raw = self.take(count * 8)?;
                let v: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
                Tensor::from_vec(v, dims, &Device::Cpu)?
            }
            _ => {
                let raw = self.take(count * 4)?;
                let v: Vec<f32> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
                Tensor::from_vec(v, dims, &Device::Cpu)?
            }
        };
        Ok((name, t))
    }
}

impl StainSeparator {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.bytes(serde_json::to_string(&self.config).expect("config serializes").as_bytes());
        w.u64(self.iteration as u64);
        w.u8(dtype_code(self.dtype));
        let opts = self.named_optimizers();
        w.u32(opts.len() as u32);
        for (name, opt) in &opts {
            w.bytes(name.as_bytes());
            w.u64(opt.steps());
        }
        let params = self.named_params();
        let mut tensors: Vec<(String, Tensor)> = params.iter().map(|p| (p.name.clone(), p.var.as_tensor().clone())).collect();
        for (name, opt) in &opts {
            let (m, v) = opt.moments();
            for (k, p) in opt.params().iter().enumerate() {
                tensors.push((format!("{name}.{}.adam_m", p.name), m[k].clone()));
                tensors.push((format!("{name}.{}.adam_v", p.name), v[k].clone()));
            }
        }
        w.u32(tensors.len() as u32);
        for (name, t) in &tensors {
            w.tensor(name, t)?;
        }
        Ok(w.0)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(MAGIC.len()).ok() != Some(MAGIC.as_slice()) {
            return Err(ModelError::Checkpoint("not a checkpoint file".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let config: TrainConfig =
            serde_json::from_slice(r.bytes()?).map_err(|e| ModelError::Checkpoint(format!("bad embedded config: {e}")))?;
        let iteration = r.u64()? as usize;
        let dtype = match r.u8()? {
            0 => DType::F32,
            1 => DType::F64,
            c => return Err(ModelError::Checkpoint(format!("unknown dtype code {c}"))),
        };
        let mut model = StainSeparator::new(&config, dtype)?;
        model.iteration = iteration;
        let n_opts = r.u32()? as usize;
        let mut steps = HashMap::new();
        for _ in 0..n_opts {
            let name = r.string()?;
            steps.insert(name, r.u64()?);
        }
        let n_tensors = r.u32()? as usize;
        let mut tensors = HashMap::with_capacity(n_tensors);
        for _ in 0..n_tensors {
            let (name, t) = r.tensor(dtype)?;
            tensors.insert(name, t);
        }
        let mut fetch = |name: &str, like: &Tensor| -> Result<Tensor> {
            let t = tensors
                .remove(name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
            if t.dims() != like.dims() {
                return Err(ModelError::Checkpoint(format!(
                    "tensor {name} has shape {:?}, expected {:?}",
                    t.dims(),
                    like.dims()
                )));
            }
            Ok(t)
        };
        for p in model.named_params() {
            let t = fetch(&p.name, p.var.as_tensor())?;
            p.var.set(&t)?;
        }
        for (name, opt) in model.named_optimizers_mut() {
            let t = *steps
                .get(&name)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing optimizer {name}")))?;
            let mut m = Vec::new();
            let mut v = Vec::new();
            for p in opt.params() {
                m.push(fetch(&format!("{name}.{}.adam_m", p.name), p.var.as_tensor())?);
                v.push(fetch(&format!("{name}.{}.adam_v", p.name), p.var.as_tensor())?);
            }
            opt.restore(t, m, v);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let io = |source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(io)?;
        }
        let mut f = fs::File::create(path).map_err(io)?;
        f.write_all(&self.to_bytes()?).map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut buf = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|source| ModelError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        Self::from_bytes(&buf)
    }

    /// Loads a checkpoint to continue training under `config`, refusing if
    /// any setting differs from the one the checkpoint was trained with.
    pub fn resume(path: &Path, config: &TrainConfig) -> Result<Self> {
        let model = Self::load(path)?;
        let diff = config_differences(&model.config, config);
        if !diff.is_empty() {
            return Err(ModelError::ConfigMismatch(format!("differing fields: {}", diff.join(", "))));
        }
        Ok(model)
    }
}
