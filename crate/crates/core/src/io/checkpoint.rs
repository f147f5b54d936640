//! `KFCCKPT` container, little-endian throughout:
//!
//! ```text
//! magic    8 bytes  "KFCCKPT\0"
//! version  u32      1
//! topology u32 length + UTF-8 text (layer lines, then `meta <key> <value>` lines)
//! blobs    u32 count, each: u32 length + UTF-8 name, u32 rows, u32 cols, rows*cols f64
//! ```
//!
//! Blobs follow the model's parameter order: `<layer>.weight` and `<layer>.bias`
//! for dense layers, `<layer>.g<group>.r<term>.f<factor>` and `<layer>.bias` for
//! KFC layers. Biases are stored as `1 x n`.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{KfcError, Result};
use crate::train::{Layer, Model};

pub const MAGIC: &[u8; 8] = b"KFCCKPT\0";
pub const VERSION: u32 = 1;

/// Free-form run metadata (seed, epoch, errors, method label).
pub type Meta = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub meta: Meta,
}

fn blob_layout(model: &Model) -> Vec<(String, usize, usize)> {
    let mut out = Vec::new();
    for layer in model.layers() {
        match layer {
            Layer::Dense { name, weight, bias } => {
                out.push((format!("{name}.weight"), weight.rows(), weight.cols()));
                out.push((format!("{name}.bias"), 1, bias.len()));
            }
            Layer::Kfc { name, weights, .. } => {
                for (j, terms) in weights.groups.iter().enumerate() {
                    for (i, term) in terms.iter().enumerate() {
                        for (f, m) in term.factors.iter().enumerate() {
                            out.push((format!("{name}.g{j}.r{i}.f{f}"), m.rows(), m.cols()));
                        }
                    }
                }
                out.push((format!("{name}.bias"), 1, weights.bias.len()));
            }
            _ => {}
        }
    }
    out
}

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| KfcError::Checkpoint(format!("{v} does not fit a u32 field")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint(model: &Model, meta: &Meta) -> Result<Vec<u8>> {
    let mut text = model.topology();
    for (k, v) in meta {
        if k.is_empty() || k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(KfcError::Checkpoint(format!("metadata entry {k:?}={v:?} is not a single-line key/value")));
        }
        text.push_str(&format!("meta {k} {v}\n"));
    }
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, text.len())?;
    out.extend_from_slice(text.as_bytes());
    let layout = blob_layout(model);
    put_u32(&mut out, layout.len())?;
    for ((name, rows, cols), data) in layout.iter().zip(model.param_slices()) {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, *rows)?;
        put_u32(&mut out, *cols)?;
        for v in data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            KfcError::Checkpoint(format!("truncated at byte {} reading {what} ({n} bytes needed)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")) as usize)
    }

    fn text(&mut self, what: &str) -> Result<&'a str> {
        let n = self.u32(what)?;
        let at = self.pos;
        std::str::from_utf8(self.take(n, what)?)
            .map_err(|_| KfcError::Checkpoint(format!("{what} at byte {at} is not UTF-8")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8, "magic")? != MAGIC {
        return Err(KfcError::Checkpoint("bad magic; not a KFCCKPT file".into()));
    }
    let version = r.u32("version")?;
    if version != VERSION as usize {
        return Err(KfcError::Checkpoint(format!("unsupported version {version}")));
    }
    let text = r.text("topology")?;
    let mut topo = String::new();
    let mut meta = Meta::new();
    for line in text.lines() {
        match line.strip_prefix("meta ") {
            Some(kv) => {
                let (k, v) = kv.split_once(' ').unwrap_or((kv, ""));
                meta.insert(k.to_string(), v.to_string());
            }
            None => {
                topo.push_str(line);
                topo.push('\n');
            }
        }
    }
    let mut model = Model::from_topology(&topo)?;
    let layout = blob_layout(&model);
    let count = r.u32("blob count")?;
    if count != layout.len() {
        return Err(KfcError::Checkpoint(format!(
            "{count} blobs for a topology with {} parameter buffers",
            layout.len()
        )));
    }
    let mut slices = model.param_slices_mut();
    for ((name, rows, cols), dst) in layout.iter().zip(slices.iter_mut()) {
        let found = r.text("blob name")?;
        let (br, bc) = (r.u32("blob rows")?, r.u32("blob cols")?);
        if found != name || (br, bc) != (*rows, *cols) {
            return Err(KfcError::Checkpoint(format!(
                "blob {found:?} {br}x{bc} where the topology expects {name:?} {rows}x{cols}"
            )));
        }
        let raw = r.take(rows * cols * 8, name)?;
        for (d, chunk) in dst.iter_mut().zip(raw.chunks_exact(8)) {
            *d = f64::from_le_bytes(chunk.try_into().expect("8 bytes"));
        }
    }
    if r.pos != bytes.len() {
        return Err(KfcError::Checkpoint(format!("{} trailing bytes after the last blob", bytes.len() - r.pos)));
    }
    Ok(Checkpoint { model, meta })
}

/// Writes atomically: a sibling temporary file is renamed over `path`.
pub fn save_checkpoint(path: &Path, model: &Model, meta: &Meta) -> Result<()> {
    let bytes = encode_checkpoint(model, meta)?;
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let file_name = path.file_name().ok_or_else(|| KfcError::arg(format!("{} is not a file path", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp{}", file_name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
        std::fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    Ok(result?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    decode_checkpoint(&bytes).map_err(|e| match e {
        KfcError::Checkpoint(msg) => KfcError::Checkpoint(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Errors unless `found` has the same layer structure as `expected`.
pub fn check_topology(expected: &Model, found: &Model) -> Result<()> {
    let (a, b) = (expected.structure(), found.structure());
    if a != b {
        return Err(KfcError::TopologyMismatch { expected: a, found: b });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{ModelConfig, Preset};

    fn sample() -> (Model, Meta) {
        let model = ModelConfig { preset: Preset::KfcCombined, ..Default::default() }.build(7).unwrap();
        let meta = Meta::from([("seed".to_string(), "7".to_string()), ("val_error".to_string(), "0.0123".to_string())]);
        (model, meta)
    }

    #[test]
    fn round_trip() {
        let (model, meta) = sample();
        let bytes = encode_checkpoint(&model, &meta).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let ck = decode_checkpoint(&bytes).unwrap();
        assert_eq!(ck.model, model);
        assert_eq!(ck.meta, meta);
        assert_eq!(encode_checkpoint(&ck.model, &ck.meta).unwrap(), bytes);
    }

    #[test]
    fn version_and_truncation() {
        let (model, meta) = sample();
        let mut bytes = encode_checkpoint(&model, &meta).unwrap();
        let short = &bytes[..bytes.len() - 1];
        assert!(decode_checkpoint(short).unwrap_err().to_string().contains("truncated"));
        bytes[8] = 2;
        assert!(decode_checkpoint(&bytes).unwrap_err().to_string().contains("unsupported version 2"));
        bytes[0] = b'X';
        assert!(decode_checkpoint(&bytes).is_err());
    }

    #[test]
    fn topology_guard() {
        let dense = ModelConfig::default().skeleton().unwrap();
        let kfc = ModelConfig { preset: Preset::Kfc2, ..Default::default() }.skeleton().unwrap();
        let err = check_topology(&kfc, &dense).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("kfc fc tensor") && msg.contains("dense fc 288 256"), "{msg}");
        check_topology(&dense, &dense).unwrap();
    }

    #[test]
    fn bad_meta_rejected() {
        let (model, _) = sample();
        let meta = Meta::from([("a b".to_string(), "1".to_string())]);
        assert!(encode_checkpoint(&model, &meta).is_err());
    }
}
