//! Average precision over ranked lists with Oxford/Paris style ground
//! truth: `good` and `ok` images are positives, `junk` images are removed
//! from the ranking before scoring.

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::retrieval::RankedList;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl std::str::FromStr for Difficulty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(Error::Domain(format!("unknown difficulty {other}"))),
        }
    }
}

/// Query box as listed in the `_query.txt` file. Not used for scoring.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryGroundTruth {
    /// Query name (the file prefix, e.g. `all_souls_1`).
    pub name: String,
    /// Image id of the query picture.
    pub image: String,
    pub bbox: Option<BoundingBox>,
    pub positives: HashSet<String>,
    pub junk: HashSet<String>,
    pub difficulty: Option<Difficulty>,
}

impl QueryGroundTruth {
    pub fn new(
        name: impl Into<String>,
        positives: impl IntoIterator<Item = String>,
        junk: impl IntoIterator<Item = String>,
    ) -> Result<Self> {
        let name = name.into();
        let gt = QueryGroundTruth {
            image: name.clone(),
            name,
            bbox: None,
            positives: positives.into_iter().collect(),
            junk: junk.into_iter().collect(),
            difficulty: None,
        };
        gt.validate()?;
        Ok(gt)
    }

    fn validate(&self) -> Result<()> {
        if let Some(both) = self.positives.intersection(&self.junk).next() {
            return Err(Error::Validation(format!(
                "query {}: {both} is both positive and junk",
                self.name
            )));
        }
        Ok(())
    }
}

/// How precision is integrated over recall.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApConvention {
    /// Trapezoids between consecutive positive hits: each hit adds
    /// `(p_prev + p_hit) / 2 / #positives`, where `p_prev` is the precision
    /// at the previous hit (1 before the first).
    #[default]
    HitTrapezoid,
    /// Oxford `compute_ap`: `p_prev` is the precision at the rank just
    /// before the hit.
    Philbin,
}

/// Average precision of `ranked` against `gt`, or `None` (with a warning)
/// when the query has no positives.
pub fn average_precision(ranked: &RankedList, gt: &QueryGroundTruth) -> Option<f64> {
    average_precision_with(ranked, gt, ApConvention::default())
}

pub fn average_precision_with(
    ranked: &RankedList,
    gt: &QueryGroundTruth,
    convention: ApConvention,
) -> Option<f64> {
    let ids: Vec<&str> = ranked.ids().collect();
    ap_of_ids(&ids, gt, convention)
}

pub(crate) fn ap_of_ids(
    ids: &[&str],
    gt: &QueryGroundTruth,
    convention: ApConvention,
) -> Option<f64> {
    if gt.positives.is_empty() {
        log::warn!("query {} has no positives; skipped", gt.name);
        return None;
    }
    let step = 1.0 / gt.positives.len() as f64;
    let mut ap = 0.0;
    let mut hits = 0usize;
    let mut seen = 0usize;
    let mut prev_hit_precision = 1.0;
    for id in ids.iter().filter(|id| !gt.junk.contains(**id)) {
        seen += 1;
        if !gt.positives.contains(*id) {
            continue;
        }
        let before = match convention {
            ApConvention::HitTrapezoid => prev_hit_precision,
            ApConvention::Philbin if seen == 1 => 1.0,
            ApConvention::Philbin => hits as f64 / (seen - 1) as f64,
        };
        hits += 1;
        let at = hits as f64 / seen as f64;
        ap += (before + at) / 2.0 * step;
        prev_hit_precision = at;
    }
    Some(ap)
}

/// Mean AP over the scoreable queries.
pub fn mean_ap(queries: &[(RankedList, QueryGroundTruth)]) -> Result<f64> {
    mean_ap_with(queries, ApConvention::default())
}

pub fn mean_ap_with(
    queries: &[(RankedList, QueryGroundTruth)],
    convention: ApConvention,
) -> Result<f64> {
    let aps: Vec<f64> = queries
        .iter()
        .filter_map(|(r, gt)| average_precision_with(r, gt, convention))
        .collect();
    if aps.is_empty() {
        return Err(Error::Domain("no scoreable queries".into()));
    }
    Ok(aps.iter().sum::<f64>() / aps.len() as f64)
}

fn read_ids(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Image ids in Oxford query files carry an `oxc1_` prefix the other lists
/// do not.
fn strip_query_prefix(id: &str) -> &str {
    id.strip_prefix("oxc1_").unwrap_or(id)
}

fn parse_query_file(path: &Path) -> Result<(String, Option<BoundingBox>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut parts = text.split_whitespace();
    let image = parts
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty query file", path.display())))?;
    let coords: Vec<f64> = parts
        .map(|p| {
            p.parse::<f64>()
                .map_err(|_| Error::Format(format!("{}: bad coordinate {p:?}", path.display())))
        })
        .collect::<Result<_>>()?;
    let bbox = match coords.as_slice() {
        [] => None,
        [x1, y1, x2, y2] => Some(BoundingBox {
            x1: *x1,
            y1: *y1,
            x2: *x2,
            y2: *y2,
        }),
        _ => {
            return Err(Error::Format(format!(
                "{}: expected 4 box coordinates, got {}",
                path.display(),
                coords.len()
            )))
        }
    };
    Ok((strip_query_prefix(image).to_string(), bbox))
}

/// Loads every query `q` with files `q_query.txt`, `q_good.txt`,
/// `q_ok.txt` and `q_junk.txt` in `dir`, sorted by query name.
pub fn load_groundtruth(dir: impl AsRef<Path>) -> Result<Vec<QueryGroundTruth>> {
    load_groundtruth_split(dir, None)
}

/// As [`load_groundtruth`], tagging every query with a difficulty split.
pub fn load_groundtruth_split(
    dir: impl AsRef<Path>,
    difficulty: Option<Difficulty>,
) -> Result<Vec<QueryGroundTruth>> {
    let dir = dir.as_ref();
    let listing = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut names = Vec::new();
    for entry in listing {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let file = entry.file_name();
        if let Some(name) = file.to_str().and_then(|f| f.strip_suffix("_query.txt")) {
            names.push(name.to_string());
        }
    }
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let file = |kind: &str| -> PathBuf { dir.join(format!("{name}_{kind}.txt")) };
            let (image, bbox) = parse_query_file(&file("query"))?;
            let mut positives: HashSet<String> = read_ids(&file("good"))?.into_iter().collect();
            positives.extend(read_ids(&file("ok"))?);
            let junk = read_ids(&file("junk"))?.into_iter().collect();
            let gt = QueryGroundTruth {
                name,
                image,
                bbox,
                positives,
                junk,
                difficulty,
            };
            gt.validate()?;
            Ok(gt)
        })
        .collect()
}
