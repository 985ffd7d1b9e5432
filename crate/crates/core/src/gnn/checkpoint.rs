//! Binary parameter checkpoints.
//!
//! Layout (little-endian): magic `DDGN`, version `u32`, variant tag `u8`,
//! config JSON length `u64` and bytes, tensor count `u32`, then per tensor
//! name length `u32`, name bytes, rows `u64`, cols `u64`; finally all tensor
//! values in order as row-major `f32`.

use std::path::Path;

use ndarray::Array2;

use super::{GnnConfig, GnnModel, GnnParams, Variant, parameter_layout};
use crate::io_util::{read_bytes, write_atomic};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"DDGN";
const VERSION: u32 = 1;

pub fn encode(model: &GnnModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(model.config.variant.tag());
    let cfg = serde_json::to_vec(&model.config).expect("config serializes");
    out.extend_from_slice(&(cfg.len() as u64).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(model.params.len() as u32).to_le_bytes());
    for (name, t) in model.params.names().iter().zip(model.params.tensors()) {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.nrows() as u64).to_le_bytes());
        out.extend_from_slice(&(t.ncols() as u64).to_le_bytes());
    }
    for t in model.params.tensors() {
        for v in t.iter() {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(self.path, "checkpoint truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::format(self.path, "length overflows"))
    }
}

pub fn decode(path: &Path, bytes: &[u8]) -> Result<GnnModel> {
    let mut r = Reader { path, bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::format(path, "not a model checkpoint"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let tag = r.take(1)?[0];
    let variant = Variant::from_tag(tag).ok_or_else(|| Error::format(path, format!("unknown variant tag {tag}")))?;
    let cfg_len = r.len()?;
    let config: GnnConfig = serde_json::from_slice(r.take(cfg_len)?)?;
    if config.variant != variant {
        return Err(Error::format(path, "variant tag disagrees with config"));
    }
    config.validate()?;
    let count = r.u32()? as usize;
    let mut shapes = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let n = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::format(path, "tensor name is not UTF-8"))?
            .to_owned();
        let rows = r.len()?;
        let cols = r.len()?;
        shapes.push((name, (rows, cols)));
    }
    let (Some((_, (f_drug, _))), Some((_, (f_dis, _)))) = (shapes.first(), shapes.get(2)) else {
        return Err(Error::format(path, "checkpoint has too few tensors"));
    };
    if parameter_layout(&config, *f_drug, *f_dis) != shapes {
        return Err(Error::format(path, "tensor layout does not match config"));
    }
    let mut names = Vec::with_capacity(count);
    let mut tensors = Vec::with_capacity(count);
    for (name, (rows, cols)) in shapes {
        let raw = r.take(rows * cols * 4)?;
        let vals = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
            .collect();
        names.push(name);
        tensors.push(Array2::from_shape_vec((rows, cols), vals).expect("shape matches length"));
    }
    if r.pos != bytes.len() {
        return Err(Error::format(path, "trailing bytes after checkpoint"));
    }
    Ok(GnnModel {
        config,
        params: GnnParams::from_parts(names, tensors),
    })
}

pub fn save_checkpoint(path: &Path, model: &GnnModel) -> Result<()> {
    write_atomic(path, &encode(model))
}

pub fn load_checkpoint(path: &Path) -> Result<GnnModel> {
    decode(path, &read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_byte_exact() {
        for variant in Variant::ALL {
            let cfg = GnnConfig {
                variant,
                hidden_dim: 6,
                gat_heads: vec![3, 2],
                seed: 9,
                ..GnnConfig::default()
            };
            let m = GnnModel::init(&cfg, 4, 3).unwrap();
            let a = encode(&m);
            let back = decode(Path::new("m.ckpt"), &a).unwrap();
            assert_eq!(back.config, m.config);
            assert_eq!(encode(&back), a);
            for (x, y) in back.params.tensors().iter().zip(m.params.tensors()) {
                assert!((x - y).iter().all(|d| d.abs() < 1e-6));
            }
        }
    }

    #[test]
    fn rejects_corruption() {
        let m = GnnModel::init(
            &GnnConfig {
                hidden_dim: 3,
                ..GnnConfig::default()
            },
            2,
            2,
        )
        .unwrap();
        let a = encode(&m);
        let p = Path::new("m.ckpt");
        assert!(decode(p, &a[..a.len() - 1]).is_err());
        let mut extra = a.clone();
        extra.push(0);
        assert!(decode(p, &extra).is_err());
        let mut bad = a.clone();
        bad[0] = b'X';
        assert!(matches!(decode(p, &bad), Err(Error::Format { .. })));
    }
}
