//! Binary model checkpoints.
//!
//! Layout (little-endian throughout):
//!
//! ```text
//! "SQSCKPT1"                       8-byte magic, includes the format version
//! u32 field_count
//! field_count × {
//!     u32 name_len, name (UTF-8)
//!     u32 word_count, word_count × 4-byte words
//! }
//! ```
//!
//! Parameter fields (`embed`, `glu{i}.w`, `glu{i}.v`, `glu{i}.b`, `glu{i}.c`,
//! `out_proj`) hold raw f32 values. `meta.*` fields hold 32-bit words: plain
//! integers, or f64/u64 values split into (low, high) words, so the config
//! round-trips exactly.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gates::{GateKind, GateSpec};
use crate::model::{GluLayer, GluMlpModel, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SQSCKPT1";
pub const FORMAT_VERSION: u32 = 1;

fn split64(v: u64) -> [u32; 2] {
    [v as u32, (v >> 32) as u32]
}

fn join64(w: &[u32]) -> u64 {
    w[0] as u64 | ((w[1] as u64) << 32)
}

struct Writer {
    buf: Vec<u8>,
    fields: u32,
}

impl Writer {
    fn field(&mut self, name: &str, words: impl ExactSizeIterator<Item = u32>) {
        self.buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        self.buf.extend_from_slice(name.as_bytes());
        self.buf.extend_from_slice(&(words.len() as u32).to_le_bytes());
        for w in words {
            self.buf.extend_from_slice(&w.to_le_bytes());
        }
        self.fields += 1;
    }
}

/// Serialize a model. Deterministic: equal models give equal bytes.
pub fn save_checkpoint(model: &GluMlpModel) -> Vec<u8> {
    let c = &model.config;
    let mut w = Writer {
        buf: Vec::new(),
        fields: 0,
    };
    let dims = [c.input_dim, c.model_dim, c.class_count].map(|d| d as u32);
    let g = &c.gate;
    let mut gate = vec![g.kind.code()];
    for v in [g.shift_c, g.shrink_lambda, g.power_p] {
        gate.extend(split64(v.to_bits()));
    }

    w.field("meta.version", [FORMAT_VERSION].into_iter());
    w.field("meta.dims", dims.into_iter());
    w.field("meta.hidden", c.hidden_dims.iter().map(|&d| d as u32).collect::<Vec<_>>().into_iter());
    w.field("meta.biases", [c.biases as u32].into_iter());
    w.field("meta.gate", gate.into_iter());
    w.field("meta.seed", split64(c.seed).into_iter());
    for (name, t) in model.params() {
        w.field(&name, t.data().iter().map(|v| v.to_bits()));
    }

    let mut out = Vec::with_capacity(w.buf.len() + 12);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&w.fields.to_le_bytes());
    out.extend_from_slice(&w.buf);
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Parse {
                offset: self.pos,
                msg: format!("truncated while reading {what} ({n} bytes needed)"),
            }),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

/// Parse a checkpoint produced by [`save_checkpoint`].
pub fn load_checkpoint(bytes: &[u8]) -> Result<GluMlpModel> {
    let mut r = Reader { bytes, pos: 0 };
    let magic = r.take(8, "magic")?;
    if magic != MAGIC {
        return Err(Error::Parse {
            offset: 0,
            msg: format!("bad magic {:?}", String::from_utf8_lossy(magic)),
        });
    }
    let count = r.u32("field count")?;
    let mut fields: BTreeMap<String, Vec<u32>> = BTreeMap::new();
    for _ in 0..count {
        let at = r.pos;
        let name_len = r.u32("name length")? as usize;
        let name = std::str::from_utf8(r.take(name_len, "field name")?)
            .map_err(|_| Error::Parse {
                offset: at,
                msg: "field name is not UTF-8".into(),
            })?
            .to_string();
        let n = r.u32("word count")? as usize;
        let raw = r.take(n.checked_mul(4).unwrap_or(usize::MAX), &name)?;
        let words = raw
            .chunks_exact(4)
            .map(|b| u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if fields.insert(name.clone(), words).is_some() {
            return Err(Error::Parse {
                offset: at,
                msg: format!("duplicate field `{name}`"),
            });
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Parse {
            offset: r.pos,
            msg: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }

    let get = |name: &str, len: Option<usize>| -> Result<&Vec<u32>> {
        let f = fields
            .get(name)
            .ok_or_else(|| Error::Format(format!("checkpoint is missing `{name}`")))?;
        if let Some(l) = len {
            if f.len() != l {
                return Err(Error::Format(format!("`{name}` has {} words, expected {l}", f.len())));
            }
        }
        Ok(f)
    };

    let version = get("meta.version", Some(1))?[0];
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let dims = get("meta.dims", Some(3))?;
    let hidden: Vec<usize> = get("meta.hidden", None)?.iter().map(|&d| d as usize).collect();
    let biases = get("meta.biases", Some(1))?[0] != 0;
    let gw = get("meta.gate", Some(7))?;
    let kind = GateKind::from_code(gw[0]).ok_or_else(|| Error::Format(format!("unknown gate code {}", gw[0])))?;
    let gate = GateSpec {
        kind,
        shift_c: f64::from_bits(join64(&gw[1..3])),
        shrink_lambda: f64::from_bits(join64(&gw[3..5])),
        power_p: f64::from_bits(join64(&gw[5..7])),
    };
    let seed = join64(get("meta.seed", Some(2))?);
    let config = ModelConfig {
        input_dim: dims[0] as usize,
        model_dim: dims[1] as usize,
        hidden_dims: hidden,
        class_count: dims[2] as usize,
        gate,
        biases,
        seed,
    };
    config.validate()?;

    let tensor = |name: &str, shape: Vec<usize>| -> Result<Tensor> {
        let n = shape.iter().product();
        let words = get(name, Some(n))?;
        Tensor::new(shape, words.iter().map(|&w| f32::from_bits(w)).collect())
    };

    let embed = tensor("embed", vec![config.model_dim, config.input_dim])?;
    let mut layers = Vec::new();
    let mut d_in = config.model_dim;
    for (i, &h) in config.hidden_dims.iter().enumerate() {
        let w = tensor(&format!("glu{i}.w"), vec![h, d_in])?;
        let v = tensor(&format!("glu{i}.v"), vec![h, d_in])?;
        let (b, c) = if biases {
            (
                Some(tensor(&format!("glu{i}.b"), vec![h])?),
                Some(tensor(&format!("glu{i}.c"), vec![h])?),
            )
        } else {
            (None, None)
        };
        layers.push(GluLayer::new(w, v, b, c, gate)?);
        d_in = h;
    }
    let out_proj = tensor("out_proj", vec![config.class_count, d_in])?;
    let model = GluMlpModel {
        config,
        embed,
        layers,
        out_proj,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_to_path(model: &GluMlpModel, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, save_checkpoint(model))?;
    Ok(())
}

pub fn load_from_path(path: impl AsRef<Path>) -> Result<GluMlpModel> {
    load_checkpoint(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_model;

    fn small(seed: u64, biases: bool) -> GluMlpModel {
        init_model(&ModelConfig {
            input_dim: 12,
            model_dim: 6,
            hidden_dims: vec![5, 4],
            class_count: 3,
            gate: GateSpec::sqs(0.01, 0.5, 1.0),
            biases,
            seed,
        })
        .unwrap()
    }

    #[test]
    fn save_load_save_is_identical() {
        for biases in [false, true] {
            let m = small(u64::MAX - 3, biases);
            let bytes = save_checkpoint(&m);
            let back = load_checkpoint(&bytes).unwrap();
            assert_eq!(back, m);
            assert_eq!(save_checkpoint(&back), bytes);
        }
    }

    #[test]
    fn truncation_is_a_parse_error() {
        let bytes = save_checkpoint(&small(1, true));
        for cut in [0, 5, 8, 11, 40, bytes.len() - 1] {
            match load_checkpoint(&bytes[..cut]) {
                Err(Error::Parse { offset, .. }) => assert!(offset <= cut),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_and_trailing_bytes() {
        let mut bytes = save_checkpoint(&small(1, false));
        bytes[0] = b'X';
        assert!(matches!(load_checkpoint(&bytes), Err(Error::Parse { offset: 0, .. })));
        let mut bytes = save_checkpoint(&small(1, false));
        bytes.push(0);
        assert!(matches!(load_checkpoint(&bytes), Err(Error::Parse { .. })));
    }

    #[test]
    fn reloaded_model_gives_identical_logits() {
        let m = init_model(&ModelConfig::interp(GateSpec::sqs_default(), 7)).unwrap();
        let back = load_checkpoint(&save_checkpoint(&m)).unwrap();
        let x = Tensor::new(vec![4, 784], (0..4 * 784).map(|i| ((i % 255) as f32) / 255.0).collect()).unwrap();
        assert_eq!(m.forward(&x).unwrap(), back.forward(&x).unwrap());
    }
}
