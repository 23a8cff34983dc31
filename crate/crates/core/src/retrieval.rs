//! Exact nearest-neighbor ranking over l2-normalized descriptors and query
//! expansion.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::binio::{Reader, Writer};
use crate::error::{Error, Result};
use crate::tensor::{dot, l2norm, Descriptor};

const INDEX_MAGIC: &[u8; 4] = b"COOI";
const INDEX_VERSION: u8 = 1;

/// Default neighbor count for average query expansion.
pub const DEFAULT_AQE_N: usize = 10;
/// Default neighbor count and exponent for alpha-weighted query expansion.
pub const DEFAULT_ALPHA_QE_N: usize = 50;
pub const DEFAULT_ALPHA_QE_ALPHA: f64 = 3.0;

/// Descriptors addressed by id, one unit-norm row each.
#[derive(Debug, Clone, PartialEq)]
pub struct DescriptorIndex {
    ids: Vec<String>,
    dim: usize,
    rows: Vec<f64>,
}

pub fn build_index(entries: Vec<(String, Descriptor)>) -> Result<DescriptorIndex> {
    let dim = entries.first().map_or(0, |(_, d)| d.dim());
    let mut seen = HashSet::with_capacity(entries.len());
    let mut ids = Vec::with_capacity(entries.len());
    let mut rows = Vec::with_capacity(entries.len() * dim);
    for (id, d) in entries {
        if d.dim() != dim {
            return Err(Error::Dimension(format!(
                "descriptor {id} has dim {}, expected {dim}",
                d.dim()
            )));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::Domain(format!("duplicate id {id}")));
        }
        rows.extend_from_slice(l2norm(&d).values());
        ids.push(id);
    }
    Ok(DescriptorIndex { ids, dim, rows })
}

impl DescriptorIndex {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn row(&self, pos: usize) -> &[f64] {
        &self.rows[pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|x| x == id)
    }

    pub fn get(&self, id: &str) -> Option<Descriptor> {
        self.position(id)
            .map(|p| Descriptor::new(self.row(p).to_vec()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub id: String,
    pub distance: f64,
    /// Row of the entry in the index it came from.
    pub position: usize,
}

/// Index entries sorted by ascending distance; ties by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.id.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Copy without the given id (typically the query itself).
    pub fn without(&self, id: &str) -> RankedList {
        RankedList {
            entries: self
                .entries
                .iter()
                .filter(|e| e.id != id)
                .cloned()
                .collect(),
        }
    }
}

/// Full ranking of the index by Euclidean distance to `q`.
pub fn query(idx: &DescriptorIndex, q: &Descriptor) -> Result<RankedList> {
    if !idx.is_empty() && q.dim() != idx.dim {
        return Err(Error::Dimension(format!(
            "query dim {} vs index dim {}",
            q.dim(),
            idx.dim
        )));
    }
    let mut entries: Vec<RankedEntry> = (0..idx.len())
        .map(|pos| {
            let dist2: f64 = idx
                .row(pos)
                .iter()
                .zip(q.values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            RankedEntry {
                id: idx.ids[pos].clone(),
                distance: dist2.sqrt(),
                position: pos,
            }
        })
        .collect();
    entries.sort_by(|a, b| {
        a.distance
            .total_cmp(&b.distance)
            .then_with(|| a.id.cmp(&b.id))
    });
    Ok(RankedList { entries })
}

fn clamp_n(idx: &DescriptorIndex, ranked: &RankedList, n: usize) -> Result<usize> {
    if n == 0 {
        return Err(Error::Domain("query expansion needs n >= 1".into()));
    }
    let available = ranked.len().min(idx.len());
    if n > available {
        log::warn!("query expansion: n={n} exceeds {available} ranked entries, clamping");
    }
    Ok(n.min(available))
}

/// Shared accumulation for both expansions: `q + sum_i w_i x_i`, then
/// normalized.
fn expand(
    idx: &DescriptorIndex,
    q: &Descriptor,
    ranked: &RankedList,
    n: usize,
    weight: impl Fn(&[f64]) -> f64,
) -> Result<Descriptor> {
    if q.dim() != idx.dim && !idx.is_empty() {
        return Err(Error::Dimension(format!(
            "query dim {} vs index dim {}",
            q.dim(),
            idx.dim
        )));
    }
    let mut acc = q.values().to_vec();
    for entry in ranked.entries.iter().take(n) {
        let row = idx.row(entry.position);
        let w = weight(row);
        if w == 0.0 {
            continue;
        }
        for (a, x) in acc.iter_mut().zip(row) {
            *a += w * x;
        }
    }
    Ok(l2norm(&Descriptor::new(acc)))
}

/// Average query expansion: the normalized mean of the query and its `n`
/// nearest neighbors. The `1/(n+1)` factor cancels under normalization and
/// is not applied.
pub fn average_qe(
    idx: &DescriptorIndex,
    q: &Descriptor,
    ranked: &RankedList,
    n: usize,
) -> Result<Descriptor> {
    let n = clamp_n(idx, ranked, n)?;
    expand(idx, q, ranked, n, |_| 1.0)
}

/// Alpha-weighted query expansion: neighbor `i` is weighted by
/// `max(0, <q, x_i>)^alpha`.
pub fn alpha_qe(
    idx: &DescriptorIndex,
    q: &Descriptor,
    ranked: &RankedList,
    n: usize,
    alpha: f64,
) -> Result<Descriptor> {
    if !(alpha >= 0.0) {
        return Err(Error::Domain(format!("alpha must be >= 0, got {alpha}")));
    }
    let n = clamp_n(idx, ranked, n)?;
    expand(idx, q, ranked, n, |row| {
        dot(q.values(), row).max(0.0).powf(alpha)
    })
}

pub fn save_index(idx: &DescriptorIndex, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_index(idx)?).map_err(|e| Error::io(path, e))
}

pub fn load_index(path: impl AsRef<Path>) -> Result<DescriptorIndex> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_index(&bytes)
}

/// `COOI`, version 1, `u32` count, `u32` dim, `count` ids as `u16`
/// length-prefixed UTF-8, then the `count x dim` matrix as `f32`.
pub fn encode_index(idx: &DescriptorIndex) -> Result<Vec<u8>> {
    let mut w = Writer::with_capacity(13 + idx.rows.len() * 4);
    w.bytes(INDEX_MAGIC);
    w.u8(INDEX_VERSION);
    w.u32(idx.len() as u32);
    w.u32(idx.dim as u32);
    for id in &idx.ids {
        let len = u16::try_from(id.len())
            .map_err(|_| Error::Domain(format!("id longer than 65535 bytes: {id}")))?;
        w.u16(len);
        w.bytes(id.as_bytes());
    }
    w.f64_as_f32(&idx.rows);
    Ok(w.finish())
}

pub fn decode_index(bytes: &[u8]) -> Result<DescriptorIndex> {
    let mut r = Reader::new(bytes);
    r.magic(INDEX_MAGIC, INDEX_VERSION)?;
    let count = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let mut ids = Vec::with_capacity(count.min(1 << 20));
    let mut seen = HashSet::new();
    for _ in 0..count {
        let len = r.u16()? as usize;
        let id = r.utf8(len)?;
        if !seen.insert(id.clone()) {
            return Err(Error::Validation(format!("duplicate id {id}")));
        }
        ids.push(id);
    }
    if r.remaining() != count * dim * 4 {
        return Err(Error::Corrupt(format!(
            "index matrix needs {} bytes, found {}",
            count * dim * 4,
            r.remaining()
        )));
    }
    let rows = r.f64_from_f32(count * dim)?;
    r.finish()?;
    Ok(DescriptorIndex { ids, dim, rows })
}
