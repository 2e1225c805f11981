//! Single-file checkpoint archive.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "HFCK" | u32 version
//! u32 len | manifest (UTF-8 TOML: model config, epoch, best metric, ...)
//! u32 len | rng state bytes
//! u32 count | tensors
//! tensor: u16 name_len | name | u8 dtype (1 = f32, 2 = f64) | u8 rank
//!         | rank x u64 dims | numel x element bytes
//! ```
//!
//! Parameters are stored under their own names; optimizer moments under
//! `adam.m/<name>` and `adam.v/<name>`.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use hfc_tensor::{AdamState, DType, ParamStore, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::network::ModelConfig;

const MAGIC: &[u8; 4] = b"HFCK";
const VERSION: u32 = 1;
const M_PREFIX: &str = "adam.m/";
const V_PREFIX: &str = "adam.v/";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Real> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub epoch: usize,
    pub best_metric: f64,
    pub rng_state: Vec<u8>,
    pub optimizer: Option<AdamState<T>>,
    /// Free-form text entries (training config, notes).
    pub extra: BTreeMap<String, String>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    dtype: String,
    epoch: usize,
    best_metric: f64,
    optimizer_step: Option<u64>,
    #[serde(default)]
    extra: BTreeMap<String, String>,
    config: ModelConfig,
}

impl<T: Real> Checkpoint<T> {
    pub fn new(config: ModelConfig, params: ParamStore<T>) -> Self {
        Checkpoint {
            config,
            params,
            epoch: 0,
            best_metric: f64::NEG_INFINITY,
            rng_state: Vec::new(),
            optimizer: None,
            extra: BTreeMap::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            format_version: VERSION,
            dtype: T::DTYPE.name().to_string(),
            epoch: self.epoch,
            best_metric: self.best_metric,
            optimizer_step: self.optimizer.as_ref().map(|o| o.step),
            extra: self.extra.clone(),
            config: self.config.clone(),
        };
        let text = toml::to_string(&manifest).map_err(|e| CoreError::Data(format!("manifest encoding: {e}")))?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.write_u32::<LittleEndian>(VERSION).expect("vec write");
        write_block(&mut out, text.as_bytes());
        write_block(&mut out, &self.rng_state);
        let mut tensors: Vec<(String, &Tensor<T>)> = self.params.iter().map(|(k, v)| (k.to_string(), v)).collect();
        if let Some(opt) = &self.optimizer {
            tensors.extend(opt.m.iter().map(|(k, v)| (format!("{M_PREFIX}{k}"), v)));
            tensors.extend(opt.v.iter().map(|(k, v)| (format!("{V_PREFIX}{k}"), v)));
        }
        out.write_u32::<LittleEndian>(tensors.len() as u32).expect("vec write");
        for (name, t) in tensors {
            write_tensor(&mut out, &name, t);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| CoreError::format(path, msg);
        let mut cur = Cursor::new(bytes);
        let mut magic = [0u8; 4];
        cur.read_exact(&mut magic).map_err(|_| bad("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint (bad magic)".into()));
        }
        let version = cur.read_u32::<LittleEndian>().map_err(|_| bad("truncated header".into()))?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let text = read_block(&mut cur).ok_or_else(|| bad("truncated manifest".into()))?;
        let text = String::from_utf8(text).map_err(|_| bad("manifest is not UTF-8".into()))?;
        let manifest: Manifest = toml::from_str(&text).map_err(|e| bad(format!("manifest: {e}")))?;
        let rng_state = read_block(&mut cur).ok_or_else(|| bad("truncated rng state".into()))?;
        let count = cur.read_u32::<LittleEndian>().map_err(|_| bad("truncated tensor table".into()))?;
        let mut params = ParamStore::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for _ in 0..count {
            let (name, t) = read_tensor::<T>(&mut cur).map_err(bad)?;
            if let Some(k) = name.strip_prefix(M_PREFIX) {
                m.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix(V_PREFIX) {
                v.insert(k.to_string(), t);
            } else {
                params.insert(name, t)?;
            }
        }
        if (cur.position() as usize) != bytes.len() {
            return Err(bad("trailing bytes after tensor table".into()));
        }
        let optimizer = manifest.optimizer_step.map(|step| AdamState { step, m, v });
        Ok(Checkpoint {
            config: manifest.config,
            params,
            epoch: manifest.epoch,
            best_metric: manifest.best_metric,
            rng_state,
            optimizer,
            extra: manifest.extra,
        })
    }

    /// Writes through a temporary sibling file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        write_atomic(path, &bytes)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| CoreError::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

/// Writes to a sibling temporary file, syncs, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| CoreError::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| CoreError::io(&tmp, e))?;
    f.sync_all().map_err(|e| CoreError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CoreError::io(path, e))
}

fn write_block(out: &mut Vec<u8>, bytes: &[u8]) {
    out.write_u32::<LittleEndian>(bytes.len() as u32).expect("vec write");
    out.extend_from_slice(bytes);
}

fn read_block(cur: &mut Cursor<&[u8]>) -> Option<Vec<u8>> {
    let len = cur.read_u32::<LittleEndian>().ok()? as usize;
    let mut buf = vec![0u8; len];
    cur.read_exact(&mut buf).ok()?;
    Some(buf)
}

fn write_tensor<T: Real>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) {
    out.write_u16::<LittleEndian>(name.len() as u16).expect("vec write");
    out.extend_from_slice(name.as_bytes());
    out.push(T::DTYPE.code());
    out.push(t.shape().len() as u8);
    for &d in t.shape() {
        out.write_u64::<LittleEndian>(d as u64).expect("vec write");
    }
    for &v in t.data() {
        v.write_le(out);
    }
}

fn read_tensor<T: Real>(cur: &mut Cursor<&[u8]>) -> std::result::Result<(String, Tensor<T>), String> {
    let trunc = |_| "truncated tensor record".to_string();
    let len = cur.read_u16::<LittleEndian>().map_err(trunc)? as usize;
    let mut name = vec![0u8; len];
    cur.read_exact(&mut name).map_err(trunc)?;
    let name = String::from_utf8(name).map_err(|_| "tensor name is not UTF-8".to_string())?;
    let code = cur.read_u8().map_err(trunc)?;
    let dtype = DType::from_code(code).ok_or_else(|| format!("`{name}`: unknown dtype code {code}"))?;
    let rank = cur.read_u8().map_err(trunc)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(cur.read_u64::<LittleEndian>().map_err(trunc)? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut raw = vec![0u8; numel * dtype.size()];
    cur.read_exact(&mut raw).map_err(trunc)?;
    let data: Vec<T> = match dtype {
        DType::F32 => raw.chunks_exact(4).map(|b| T::of(f32::read_le(b) as f64)).collect(),
        DType::F64 => raw.chunks_exact(8).map(|b| T::of(f64::read_le(b))).collect(),
    };
    let t = Tensor::from_vec(shape, data).map_err(|e| format!("`{name}`: {e}"))?;
    Ok((name, t))
}
