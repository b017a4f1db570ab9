//! Binary parameter files: the magic `HSDA`, a little-endian u32 version,
//! then one record per tensor until end of file. A record is the name
//! length (u32), the UTF-8 name, the rank (u32), each extent (u32) and the
//! values as little-endian f32.

use std::path::{Path, PathBuf};

use diffcore::Tensor;

use crate::error::{io_err, HsdaError, Result};
use crate::loss::Templates;
use crate::model::{ModelConfig, Network, ParamStore};
use crate::train::Trained;

pub const MAGIC: &[u8; 4] = b"HSDA";
pub const VERSION: u32 = 1;
const TEMPLATE_POS: &str = "templates.positive";
const TEMPLATE_NEG: &str = "templates.negative";

pub fn encode(store: &ParamStore<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * store.scalar_count());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for (name, t) in store.names().iter().zip(store.values()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &e in t.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let s = self
            .buf
            .get(self.pos..self.pos + n)
            .ok_or_else(|| HsdaError::Parse {
                line: 0,
                msg: format!("checkpoint truncated at byte {}", self.pos),
            })?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore<f32>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(HsdaError::Parse {
            line: 0,
            msg: "not a checkpoint (bad magic)".into(),
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(HsdaError::Parse {
            line: 0,
            msg: format!("unsupported checkpoint version {version}"),
        });
    }
    let mut store = ParamStore::default();
    while r.pos < bytes.len() {
        let n = r.u32()? as usize;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| HsdaError::Parse {
            line: 0,
            msg: "parameter name is not UTF-8".into(),
        })?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.u32().map(|e| e as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = r.take(4 * count)?;
        let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        store.push(name, Tensor::new(&shape, data)?)?;
    }
    Ok(store)
}

pub fn config_path(ckpt: &Path) -> PathBuf {
    ckpt.with_extension("cfg")
}

/// Writes parameters and templates to `path` and the model configuration
/// next to it.
pub fn save(path: &Path, cfg: &ModelConfig, state: &Trained) -> Result<()> {
    let mut store = state.params.clone();
    let d = state.templates.dim();
    let to_t = |v: &[f64]| Tensor::new(&[d], v.iter().map(|&x| x as f32).collect());
    store.push(TEMPLATE_POS.into(), to_t(&state.templates.positive)?)?;
    store.push(TEMPLATE_NEG.into(), to_t(&state.templates.negative)?)?;
    std::fs::write(path, encode(&store)).map_err(io_err(path))?;
    let cp = config_path(path);
    std::fs::write(&cp, cfg.to_kv()).map_err(io_err(&cp))
}

/// Loads a checkpoint written by [`save`], rebuilding the network layout
/// from the configuration file beside it.
pub fn load(path: &Path) -> Result<(Network, Trained)> {
    let cp = config_path(path);
    let cfg = ModelConfig::from_kv(&std::fs::read_to_string(&cp).map_err(io_err(&cp))?)?;
    let stored = decode(&std::fs::read(path).map_err(io_err(path))?)?;
    let (net, mut params) = Network::build(&cfg, 0, false)?;
    let mut loaded = ParamStore::default();
    for name in params.names() {
        let t = stored
            .by_name(name)
            .ok_or_else(|| HsdaError::Config(format!("checkpoint lacks parameter {name}")))?;
        loaded.push(name.clone(), t.clone())?;
    }
    params.load_from(&loaded)?;
    let template = |n: &str| -> Result<Vec<f64>> {
        Ok(stored
            .by_name(n)
            .ok_or_else(|| HsdaError::Config(format!("checkpoint lacks {n}")))?
            .to_f64_vec())
    };
    let templates = Templates {
        positive: template(TEMPLATE_POS)?,
        negative: template(TEMPLATE_NEG)?,
        alpha: crate::loss::DEFAULT_ALPHA,
    };
    Ok((net, Trained { params, templates }))
}
