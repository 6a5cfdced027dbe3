//! Checkpoint pair: a key-value text manifest plus one blob of little-endian
//! `f32` values in manifest order.
//!
//! ```text
//! format=1
//! blob=agent.bin
//! dtype=f32le
//! meta.init=uniform_fan_in
//! param.online/enc.l0.w=2x64@0
//! param.online/enc.l0.b=64@512
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use super::params::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    /// Free-form `meta.*` entries in file order.
    pub meta: Vec<(String, String)>,
    /// Named parameter groups (e.g. `online`, `target`, `stats`).
    pub groups: Vec<(String, ParamSet<f32>)>,
}

impl Checkpoint {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn group(&self, name: &str) -> Option<&ParamSet<f32>> {
        self.groups.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn push_group<T: Scalar>(&mut self, name: &str, ps: &ParamSet<T>) {
        self.groups.push((name.to_string(), ps.cast()));
    }
}

pub fn manifest_path(stem: &Path) -> PathBuf {
    stem.with_extension("manifest")
}

pub fn blob_path(stem: &Path) -> PathBuf {
    stem.with_extension("bin")
}

/// Writes `<stem>.manifest` and `<stem>.bin`.
pub fn save(stem: &Path, ckpt: &Checkpoint) -> Result<()> {
    let blob_file = blob_path(stem);
    let blob_name = blob_file
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Checkpoint(format!("bad path {}", stem.display())))?
        .to_string();
    let mut manifest = format!("format={FORMAT_VERSION}\nblob={blob_name}\ndtype=f32le\n");
    for (k, v) in &ckpt.meta {
        if k.contains('=') || k.contains('\n') || v.contains('\n') {
            return Err(Error::Checkpoint(format!("meta entry `{k}` is not representable")));
        }
        manifest.push_str(&format!("meta.{k}={v}\n"));
    }
    let mut blob = Vec::new();
    for (group, ps) in &ckpt.groups {
        for (name, t) in ps.iter() {
            let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
            manifest.push_str(&format!("param.{group}/{name}={}@{}\n", dims.join("x"), blob.len()));
            for v in t.data() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    fs::write(manifest_path(stem), manifest)?;
    fs::write(blob_file, blob)?;
    Ok(())
}

pub fn load(stem: &Path) -> Result<Checkpoint> {
    let mpath = manifest_path(stem);
    let text = fs::read_to_string(&mpath)?;
    let mut ckpt = Checkpoint::default();
    let mut blob: Option<Vec<u8>> = None;
    let mut saw_format = false;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Checkpoint(format!("line {}: expected key=value", lineno + 1)))?;
        match key {
            "format" => {
                if value != FORMAT_VERSION.to_string() {
                    return Err(Error::Checkpoint(format!("unsupported format {value}")));
                }
                saw_format = true;
            }
            "dtype" if value != "f32le" => {
                return Err(Error::Checkpoint(format!("unsupported dtype {value}")));
            }
            "dtype" => {}
            "blob" => {
                let path = mpath.with_file_name(value);
                blob = Some(fs::read(&path)?);
            }
            _ if key.starts_with("meta.") => {
                ckpt.meta.push((key["meta.".len()..].to_string(), value.to_string()));
            }
            _ if key.starts_with("param.") => {
                let full = &key["param.".len()..];
                let (group, name) = full
                    .split_once('/')
                    .ok_or_else(|| Error::Checkpoint(format!("param `{full}` lacks a group")))?;
                let (dims, offset) = value
                    .split_once('@')
                    .ok_or_else(|| Error::Checkpoint(format!("param `{full}` lacks an offset")))?;
                let shape = dims
                    .split('x')
                    .map(|d| d.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::Checkpoint(format!("param `{full}` shape: {e}")))?;
                let offset: usize = offset
                    .parse()
                    .map_err(|e| Error::Checkpoint(format!("param `{full}` offset: {e}")))?;
                let bytes = blob
                    .as_ref()
                    .ok_or_else(|| Error::Checkpoint("param listed before blob".into()))?;
                let n: usize = shape.iter().product();
                let end = offset + 4 * n;
                if end > bytes.len() {
                    return Err(Error::Checkpoint(format!("param `{full}` runs past end of blob")));
                }
                let data = bytes[offset..end]
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect();
                let t = Tensor::new(shape, data)?;
                match ckpt.groups.iter_mut().find(|(g, _)| g == group) {
                    Some((_, ps)) => ps.insert(name, t)?,
                    None => {
                        let mut ps = ParamSet::new();
                        ps.insert(name, t)?;
                        ckpt.groups.push((group.to_string(), ps));
                    }
                }
            }
            _ => return Err(Error::Checkpoint(format!("unknown manifest key `{key}`"))),
        }
    }
    if !saw_format {
        return Err(Error::Checkpoint("manifest lacks format key".into()));
    }
    Ok(ckpt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_values_and_order() {
        let dir = std::env::temp_dir().join(format!("ace-ckpt-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let stem = dir.join("agent");
        let mut a = ParamSet::<f32>::new();
        a.insert("x.w", Tensor::from_rows(2, 3, vec![1.0, -2.5, 3.0, 0.125, 1e-7, -0.0])).unwrap();
        a.insert("x.b", Tensor::zeros(&[3])).unwrap();
        let mut ck = Checkpoint::default();
        ck.meta.push(("init".into(), "uniform_fan_in".into()));
        ck.push_group("online", &a);
        save(&stem, &ck).unwrap();
        let back = load(&stem).unwrap();
        assert_eq!(back, ck);
        let text = fs::read_to_string(manifest_path(&stem)).unwrap();
        assert!(text.starts_with("format=1\n"));
        assert!(text.contains("param.online/x.b=3@24"));
        fs::remove_dir_all(dir).ok();
    }
}
