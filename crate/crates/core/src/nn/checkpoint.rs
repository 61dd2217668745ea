use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::Tensor;
use safetensors::tensor::{Dtype, SafeTensors, TensorView};
use serde_json::Value;

use super::{device, to_vec, AdamState, ParamStore};
use crate::error::{Error, Result};
use crate::rng::RngState;

const FORMAT: &str = "utts-checkpoint";
const VERSION: u32 = 1;

/// Versioned model container stored as safetensors.
///
/// Tensors are f64 and named `param.<name>`, `adam.m.<name>`, `adam.v.<name>`;
/// the safetensors metadata holds `format`, `version`, `kind`, `config` (JSON),
/// `step`, `epoch`, `adam_step`, `rng` (JSON) and `extra` (JSON).
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub kind: String,
    pub config: Value,
    pub step: u64,
    pub epoch: u32,
    pub rng: RngState,
    pub params: BTreeMap<String, Tensor>,
    pub optimizer: AdamState,
    pub extra: Value,
}

impl Checkpoint {
    pub fn capture(
        kind: &str,
        config: Value,
        params: &ParamStore,
        optimizer: &AdamState,
        step: u64,
        epoch: u32,
        rng: RngState,
    ) -> Self {
        Self {
            kind: kind.to_string(),
            config,
            step,
            epoch,
            rng,
            params: params.snapshot(),
            optimizer: optimizer.clone(),
            extra: Value::Null,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut named: Vec<(String, Vec<usize>, Vec<u8>)> = Vec::new();
        let mut push = |name: String, t: &Tensor| -> Result<()> {
            let bytes = to_vec(t)?.iter().flat_map(|v| v.to_le_bytes()).collect();
            named.push((name, t.dims().to_vec(), bytes));
            Ok(())
        };
        for (k, t) in &self.params {
            push(format!("param.{k}"), t)?;
        }
        for (k, t) in &self.optimizer.first {
            push(format!("adam.m.{k}"), t)?;
        }
        for (k, t) in &self.optimizer.second {
            push(format!("adam.v.{k}"), t)?;
        }
        let views = named
            .iter()
            .map(|(n, shape, bytes)| {
                TensorView::new(Dtype::F64, shape.clone(), bytes)
                    .map(|v| (n.clone(), v))
                    .map_err(|e| Error::format("checkpoint", e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut meta = HashMap::new();
        meta.insert("format".into(), FORMAT.into());
        meta.insert("version".into(), VERSION.to_string());
        meta.insert("kind".into(), self.kind.clone());
        meta.insert("config".into(), self.config.to_string());
        meta.insert("step".into(), self.step.to_string());
        meta.insert("epoch".into(), self.epoch.to_string());
        meta.insert("adam_step".into(), self.optimizer.step.to_string());
        meta.insert("rng".into(), serde_json::to_string(&self.rng).expect("rng state serializes"));
        meta.insert("extra".into(), self.extra.to_string());
        let bytes = safetensors::tensor::serialize(views, Some(meta))
            .map_err(|e| Error::format("checkpoint", e.to_string()))?;
        canonical_header(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: String| Error::format("checkpoint", m);
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| bad(e.to_string()))?;
        let meta = header
            .metadata()
            .clone()
            .ok_or_else(|| bad("missing metadata".into()))?;
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| bad(format!("missing `{k}`")));
        if field("format")? != FORMAT {
            return Err(bad("not a utts checkpoint".into()));
        }
        let version: u32 = field("version")?.parse().map_err(|_| bad("bad version".into()))?;
        if version != VERSION {
            return Err(bad(format!("unsupported checkpoint version {version}")));
        }
        let parse_json = |k: &str| -> Result<Value> {
            serde_json::from_str(&field(k)?).map_err(|e| bad(format!("`{k}`: {e}")))
        };
        let num = |k: &str| -> Result<u64> { field(k)?.parse().map_err(|_| bad(format!("bad `{k}`"))) };

        let st = SafeTensors::deserialize(bytes).map_err(|e| bad(e.to_string()))?;
        let mut params = BTreeMap::new();
        let mut first = BTreeMap::new();
        let mut second = BTreeMap::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F64 {
                return Err(bad(format!("tensor `{name}` is not f64")));
            }
            let values: Vec<f64> = view
                .data()
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::from_vec(values, view.shape(), &device())?;
            if let Some(k) = name.strip_prefix("param.") {
                params.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix("adam.m.") {
                first.insert(k.to_string(), t);
            } else if let Some(k) = name.strip_prefix("adam.v.") {
                second.insert(k.to_string(), t);
            } else {
                return Err(bad(format!("unexpected tensor `{name}`")));
            }
        }
        Ok(Self {
            kind: field("kind")?,
            config: parse_json("config")?,
            step: num("step")?,
            epoch: num("epoch")? as u32,
            rng: serde_json::from_value(parse_json("rng")?).map_err(|e| bad(e.to_string()))?,
            params,
            optimizer: AdamState {
                step: num("adam_step")?,
                first,
                second,
            },
            extra: parse_json("extra")?,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_bytes()?;
        // write-then-rename so a crash never leaves a torn checkpoint
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind != kind {
            return Err(crate::error::invalid!(
                "expected a `{kind}` checkpoint, found `{}`",
                self.kind
            ));
        }
        Ok(())
    }
}


/// Rewrite the JSON header with sorted keys so equal checkpoints are byte-identical.
fn canonical_header(bytes: Vec<u8>) -> Result<Vec<u8>> {
    let bad = |m: String| Error::format("checkpoint", m);
    let n = u64::from_le_bytes(bytes[..8].try_into().expect("8-byte prefix")) as usize;
    let header: Value = serde_json::from_slice(&bytes[8..8 + n]).map_err(|e| bad(e.to_string()))?;
    let mut json = header.to_string().into_bytes();
    json.resize(json.len().next_multiple_of(8), b' ');
    let mut out = Vec::with_capacity(8 + json.len() + bytes.len() - 8 - n);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&bytes[8 + n..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeededRng;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut ps = ParamStore::new();
        let mut rng = SeededRng::new(4);
        ps.uniform("a.w", (3, 2), 1.0, &mut rng).unwrap();
        ps.uniform("b", 5, 0.1, &mut rng).unwrap();
        let mut opt = AdamState::default();
        opt.step = 7;
        opt.first.insert("b".into(), Tensor::new(&[1.5f64; 5], &device()).unwrap());
        opt.second.insert("b".into(), Tensor::new(&[0.25f64; 5], &device()).unwrap());
        let mut ck = Checkpoint::capture("cdsvae", serde_json::json!({"x": 1}), &ps, &opt, 42, 3, rng.state());
        ck.extra = serde_json::json!({"speakers": ["s1"]});
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.kind, "cdsvae");
        assert_eq!((back.step, back.epoch, back.rng), (42, 3, rng.state()));
        assert_eq!(back.config, ck.config);
        assert_eq!(back.extra, ck.extra);
        assert_eq!(back.optimizer.step, 7);
        for (k, t) in &ck.params {
            assert_eq!(to_vec(t).unwrap(), to_vec(&back.params[k]).unwrap());
        }
        let ps2 = ParamStore::new();
        assert!(ps2.restore(&back.params).is_err(), "unknown params must be rejected");
        ps.restore(&back.params).unwrap();
        let bytes = ck.to_bytes().unwrap();
        for _ in 0..8 {
            assert_eq!(back.to_bytes().unwrap(), bytes, "serialization is byte-stable");
        }
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(Checkpoint::from_bytes(b"not a checkpoint").is_err());
    }
}
