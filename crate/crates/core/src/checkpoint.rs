//! Versioned binary checkpoint format.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "DNPADCKP"
//! version    u32      1
//! header     u32 length + UTF-8 JSON {"model": ModelConfig, "epoch": .., "seed": ..}
//! records    repeated until EOF:
//!              u32 name length + UTF-8 name
//!              u32 rank, rank × u64 dims
//!              product(dims) × f64 payload
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DNPADCKP";
pub const VERSION: u32 = 1;

/// Training metadata stored alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    epoch: usize,
    seed: u64,
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: CheckpointMeta,
}

impl Checkpoint {
    /// Names of config fields where the stored model differs from `assumed`.
    ///
    /// The stored config always wins on load; this makes the difference visible.
    pub fn mismatched_fields(&self, assumed: &ModelConfig) -> Vec<&'static str> {
        let c = self.model.config();
        let mut out = Vec::new();
        if c.input_size != assumed.input_size {
            out.push("input_size");
        }
        if c.stem_filters != assumed.stem_filters {
            out.push("stem_filters");
        }
        if c.growth_rate != assumed.growth_rate {
            out.push("growth_rate");
        }
        if c.block_layers != assumed.block_layers {
            out.push("block_layers");
        }
        if c.compression != assumed.compression {
            out.push("compression");
        }
        if c.bottleneck_factor != assumed.bottleneck_factor {
            out.push("bottleneck_factor");
        }
        if c.num_classes != assumed.num_classes {
            out.push("num_classes");
        }
        out
    }
}

pub fn encode(model: &Model, meta: CheckpointMeta) -> Vec<u8> {
    let header = serde_json::to_string(&Header {
        model: model.config().clone(),
        epoch: meta.epoch,
        seed: meta.seed,
    })
    .expect("config serializes");
    let mut buf = Vec::with_capacity(64 + header.len() + model.num_parameters() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
    buf.extend_from_slice(header.as_bytes());
    for (name, t) in model.parameters() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                field,
                format!("truncated: need {n} bytes at offset {}", self.pos),
            ));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, field: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, field: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().expect("8 bytes")))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(Error::format("magic", "not a DNPADCKP checkpoint"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(
            "version",
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let len = r.u32("header length")? as usize;
    let header: Header = serde_json::from_slice(r.take(len, "header")?)
        .map_err(|e| Error::format("header", e.to_string()))?;

    let mut named = Vec::new();
    while !r.done() {
        let idx = named.len();
        let field = |part: &str| format!("parameter record {idx} ({part})");
        let name_len = r.u32(&field("name length"))? as usize;
        let name = std::str::from_utf8(r.take(name_len, &field("name"))?)
            .map_err(|_| Error::format(field("name"), "invalid UTF-8"))?
            .to_string();
        let rank = r.u32(&field("rank"))? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u64(&field("dims"))? as usize);
        }
        let count: usize = shape.iter().product();
        let payload = r.take(count * 8, &field("payload"))?;
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let t = Tensor::new(&shape, data).map_err(|e| Error::format(field("dims"), e.to_string()))?;
        named.push((name, t));
    }

    let mut model = Model::new(header.model, 0).map_err(|e| Error::format("header", e.to_string()))?;
    model.load_parameters(named)?;
    Ok(Checkpoint {
        model,
        meta: CheckpointMeta {
            epoch: header.epoch,
            seed: header.seed,
        },
    })
}

pub fn save_checkpoint(model: &Model, meta: CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(model, meta)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Model {
        let cfg = ModelConfig {
            input_size: 16,
            stem_filters: 4,
            growth_rate: 2,
            block_layers: vec![1, 1],
            ..ModelConfig::default()
        };
        Model::new(cfg, 3).unwrap()
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let m = small();
        let meta = CheckpointMeta { epoch: 7, seed: 99 };
        let back = decode(&encode(&m, meta)).unwrap();
        assert_eq!(back.meta, meta);
        for ((n1, a), (n2, b)) in m.parameters().iter().zip(back.model.parameters()) {
            assert_eq!(n1, &n2);
            let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&small(), CheckpointMeta::default());
        assert_eq!(&bytes[..8], b"DNPADCKP");
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1);
        let len = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        let json: serde_json::Value = serde_json::from_slice(&bytes[16..16 + len]).unwrap();
        assert_eq!(json["model"]["input_size"], 16);
        let name_len = u32::from_le_bytes(bytes[16 + len..20 + len].try_into().unwrap()) as usize;
        assert_eq!(&bytes[20 + len..20 + len + name_len], b"stem.weight");
    }

    #[test]
    fn corrupt_magic() {
        let mut bytes = encode(&small(), CheckpointMeta::default());
        bytes[0] ^= 0xff;
        match decode(&bytes) {
            Err(Error::Format { field, .. }) => assert_eq!(field, "magic"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn wrong_version() {
        let mut bytes = encode(&small(), CheckpointMeta::default());
        bytes[8] = 2;
        assert!(matches!(decode(&bytes), Err(Error::Format { field, .. }) if field == "version"));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode(&small(), CheckpointMeta::default());
        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(&err, Error::Format { field, .. } if field.contains("payload")), "{err}");
        // Cutting whole records off is caught by the parameter count check.
        let err = decode(&bytes[..40]).unwrap_err();
        assert!(matches!(err, Error::Format { .. }));
    }

    #[test]
    fn stored_config_wins_and_mismatch_is_reported() {
        let m = small();
        let back = decode(&encode(&m, CheckpointMeta::default())).unwrap();
        assert_eq!(back.model.config(), m.config());
        let assumed = ModelConfig::default();
        let fields = back.mismatched_fields(&assumed);
        assert!(fields.contains(&"input_size") && fields.contains(&"block_layers"));
        assert!(back.mismatched_fields(m.config()).is_empty());
    }
}
