//! Binary model checkpoints.
//!
//! Layout (little-endian): magic `DCRS1`, schema hash `u64`, the schema, the
//! model config as `key=value` text, then every parameter as name, rank,
//! extents, and raw `f64` values. Writing is deterministic, so equal models
//! give byte-identical files.

use std::fs;
use std::path::Path;

use crate::data::{FeatureField, FieldKind, Schema};
use crate::error::{Error, Result};
use crate::model::{DeepCross, ModelConfig};
use crate::numerics::Tensor;
use crate::scalar::Scalar;

const MAGIC: &[u8; 5] = b"DCRS1";

struct Writer(Vec<u8>);

impl Writer {
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }

    fn str(&mut self, s: &str) {
        self.u64(s.len() as u64);
        self.0.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.at.checked_add(n).filter(|&e| e <= self.buf.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.at)));
        };
        let out = &self.buf[self.at..end];
        self.at = end;
        Ok(out)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn str(&mut self) -> Result<String> {
        let n = self.usize()?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid utf-8".into()))
    }
}

fn config_text(c: &ModelConfig) -> String {
    let widths: Vec<String> = c.rank_widths.iter().map(usize::to_string).collect();
    format!(
        "T={}\nd={}\nrank_widths={}\ns={}\nh={}\nk={}\n",
        c.time_span,
        c.dim,
        widths.join(","),
        c.window,
        c.hidden,
        c.classes
    )
}

fn parse_config(text: &str) -> Result<ModelConfig> {
    let mut c = ModelConfig::default();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("bad config line `{line}`")))?;
        let num = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Checkpoint(format!("bad value for {key}: `{v}`")))
        };
        match key {
            "T" => c.time_span = num(value)?,
            "d" => c.dim = num(value)?,
            "s" => c.window = num(value)?,
            "h" => c.hidden = num(value)?,
            "k" => c.classes = num(value)?,
            "rank_widths" => {
                c.rank_widths = value
                    .split(',')
                    .filter(|v| !v.is_empty())
                    .map(num)
                    .collect::<Result<_>>()?
            }
            _ => return Err(Error::Checkpoint(format!("unknown config key `{key}`"))),
        }
    }
    Ok(c)
}

/// Serializes a model to bytes.
pub fn to_bytes<S: Scalar>(model: &DeepCross<S>) -> Vec<u8> {
    let mut w = Writer(MAGIC.to_vec());
    w.u64(model.schema.hash());
    w.u64(model.schema.len() as u64);
    for f in &model.schema.fields {
        w.str(&f.name);
        w.str(f.kind.as_str());
        w.u64(f.vocab.len() as u64);
        for v in &f.vocab {
            w.str(v);
        }
        w.f64(f.mean);
        w.f64(f.std);
    }
    w.str(&config_text(&model.config));
    w.u64(model.store.len() as u64);
    for p in model.store.iter() {
        w.str(&p.name);
        w.u64(p.value.rank() as u64);
        for &e in p.value.shape() {
            w.u64(e as u64);
        }
        for v in p.value.data() {
            w.f64(v.as_f64());
        }
    }
    w.0
}

/// Rebuilds a model from [`to_bytes`] output.
pub fn from_bytes<S: Scalar>(bytes: &[u8]) -> Result<DeepCross<S>> {
    let mut r = Reader { buf: bytes, at: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint("not a DeepCross checkpoint".into()));
    }
    let hash = r.u64()?;
    let n_fields = r.usize()?;
    let mut fields = Vec::with_capacity(n_fields.min(1 << 16));
    for _ in 0..n_fields {
        let name = r.str()?;
        let kind_s = r.str()?;
        let kind = FieldKind::parse(&kind_s).ok_or_else(|| Error::Checkpoint(format!("unknown field kind `{kind_s}`")))?;
        let n_vocab = r.usize()?;
        let vocab = (0..n_vocab).map(|_| r.str()).collect::<Result<Vec<_>>>()?;
        let mean = r.f64()?;
        let std = r.f64()?;
        fields.push(FeatureField {
            name,
            kind,
            vocab,
            mean,
            std,
        });
    }
    let schema = Schema { fields };
    if schema.hash() != hash {
        return Err(Error::Checkpoint("stored schema hash does not match stored fields".into()));
    }
    let config = parse_config(&r.str()?)?;
    let mut model = DeepCross::<S>::new(schema, config, 0)?;
    let n_params = r.usize()?;
    if n_params != model.store.len() {
        return Err(Error::Checkpoint(format!(
            "{n_params} stored parameters, architecture has {}",
            model.store.len()
        )));
    }
    for _ in 0..n_params {
        let name = r.str()?;
        let rank = r.usize()?;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let id = model
            .store
            .find(&name)
            .ok_or_else(|| Error::Checkpoint(format!("unexpected parameter `{name}`")))?;
        if model.store.value(id).shape() != shape.as_slice() {
            return Err(Error::Checkpoint(format!("parameter `{name}` has shape {shape:?}")));
        }
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        model.store.get_mut(id).value = Tensor::from_f64(shape, &data)?;
    }
    if r.at != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(model)
}

pub fn save<S: Scalar>(model: &DeepCross<S>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, to_bytes(model)).map_err(|e| Error::io(path, e))
}

pub fn load<S: Scalar>(path: impl AsRef<Path>) -> Result<DeepCross<S>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&bytes)
}

/// Fails unless `schema` has the same fields (names and kinds, in order) as
/// the model was trained on.
pub fn check_schema<S: Scalar>(model: &DeepCross<S>, names_kinds: &[(String, FieldKind)]) -> Result<()> {
    let expected = model.schema.hash();
    let got = crate::data::hash_field_specs(names_kinds.iter().map(|(n, k)| (n.as_str(), *k)));
    if expected == got {
        Ok(())
    } else {
        Err(Error::SchemaMismatch(format!(
            "model fields [{}] do not match data fields [{}]",
            model.schema.names().join(", "),
            names_kinds.iter().map(|(n, _)| n.as_str()).collect::<Vec<_>>().join(", ")
        )))
    }
}
