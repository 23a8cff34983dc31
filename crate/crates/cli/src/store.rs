//! Directory-level reading and writing of tensors and descriptors.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cooc_core::postproc::{apply_whitening, multiscale_aggregate, WhiteningModel};
use cooc_core::tensor::{l2norm, load_tensor, save_tensor};
use cooc_core::Descriptor;

pub const EXT: &str = "cooct";

/// Every `*.cooct` file in `dir`, sorted by name.
pub fn list_tensors(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == EXT) {
            paths.push(path);
        }
    }
    paths.sort();
    Ok(paths)
}

pub fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Image id of a per-scale stem: `img@0.5` belongs to `img`.
pub fn image_id(stem: &str) -> &str {
    stem.split_once('@').map_or(stem, |(id, _)| id)
}

pub fn load_descriptor(path: &Path) -> Result<Descriptor> {
    let t = load_tensor(path)?;
    Ok(Descriptor::from_tensor(&t)?)
}

pub fn save_descriptor(d: &Descriptor, path: &Path) -> Result<()> {
    Ok(save_tensor(&d.to_tensor(), path)?)
}

/// Descriptors of a directory keyed by file stem.
pub fn load_descriptor_dir(dir: &Path) -> Result<Vec<(String, Descriptor)>> {
    let paths = list_tensors(dir)?;
    if paths.is_empty() {
        bail!("no .{EXT} files in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| {
            let d = load_descriptor(p).with_context(|| format!("loading {}", p.display()))?;
            Ok((stem(p), d))
        })
        .collect()
}

/// l2-normalizes, optionally whitens, and with `multiscale` averages the
/// scales of each image id. Output is sorted by id.
pub fn finish_descriptors(
    raw: Vec<(String, Descriptor)>,
    whitening: Option<&WhiteningModel>,
    multiscale: bool,
) -> Result<Vec<(String, Descriptor)>> {
    let finished =
        raw.into_iter()
            .map(|(id, d)| {
                let d = match whitening {
                    Some(m) => apply_whitening(m, &l2norm(&d))
                        .with_context(|| format!("whitening {id}"))?,
                    None => l2norm(&d),
                };
                Ok((id, d))
            })
            .collect::<Result<Vec<_>>>()?;
    if !multiscale {
        return Ok(finished);
    }
    let mut groups: BTreeMap<String, Vec<Descriptor>> = BTreeMap::new();
    for (id, d) in finished {
        groups.entry(image_id(&id).to_string()).or_default().push(d);
    }
    groups
        .into_iter()
        .map(|(id, ds)| {
            let d = multiscale_aggregate(&ds).with_context(|| format!("multiscale {id}"))?;
            Ok((id, d))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_ids() {
        assert_eq!(image_id("all_souls_000013@0.7071"), "all_souls_000013");
        assert_eq!(image_id("plain"), "plain");
    }

    #[test]
    fn multiscale_groups_by_id() {
        let raw = vec![
            ("a@1".to_string(), Descriptor::new(vec![2.0, 0.0])),
            ("a@0.5".to_string(), Descriptor::new(vec![0.0, 3.0])),
            ("b".to_string(), Descriptor::new(vec![1.0, 1.0])),
        ];
        let out = finish_descriptors(raw, None, true).unwrap();
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].0, "a");
        let v = out[0].1.values();
        assert!((v[0] - v[1]).abs() < 1e-12);
    }
}
