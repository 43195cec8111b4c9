//! CLS attention maps on the sphere.

use std::collections::BTreeMap;
use std::io::Write;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::ensure_arg;
use crate::icosphere::{PatchIndex, SurfaceField};
use crate::real::Real;
use crate::sit::AttentionRecord;
use crate::{Result, SimError};

/// Attention weights of row 0 (CLS) of one head, with the CLS column
/// dropped and the rest renormalized to sum 1.
pub fn extract_cls_attention<S: Real>(record: &AttentionRecord<S>, layer: usize, head: usize) -> Result<Vec<f64>> {
    if !record.includes_cls {
        return Err(SimError::State("attention record has no CLS token".into()));
    }
    let heads = record
        .layers
        .get(layer)
        .ok_or_else(|| SimError::Bounds(format!("layer {layer} of {}", record.layers.len())))?;
    let a = heads
        .get(head)
        .ok_or_else(|| SimError::Bounds(format!("head {head} of {}", heads.len())))?;
    let row: Vec<f64> = a.row(0).iter().skip(1).map(|v| v.f64()).collect();
    let sum: f64 = row.iter().sum();
    if !(sum > 0.0) {
        return Err(SimError::numeric("CLS attention to patches sums to zero"));
    }
    Ok(row.into_iter().map(|w| w / sum).collect())
}

#[derive(Clone, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MapMeta {
    pub layer: usize,
    pub head: usize,
    pub subject: Option<usize>,
    pub clip: Option<usize>,
}

/// A per-vertex attention field on the fine mesh.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSurface {
    pub mesh_level: u32,
    pub values: Vec<f64>,
    pub meta: MapMeta,
}

impl AttentionSurface {
    pub fn to_field(&self) -> Result<SurfaceField> {
        let values = Array2::from_shape_vec((self.values.len(), 1), self.values.iter().map(|&v| v as f32).collect())
            .expect("column shape");
        SurfaceField::new(self.mesh_level, values)
    }
}

/// Every vertex of patch `i` receives `weights[i]`; vertices shared by
/// several patches receive the mean of their patches' weights.
pub fn project_to_surface(weights: &[f64], patching: &PatchIndex, meta: MapMeta) -> Result<AttentionSurface> {
    ensure_arg!(
        weights.len() == patching.num_patches(),
        "{} weights for {} patches",
        weights.len(),
        patching.num_patches()
    );
    let mut sum = vec![0.0; patching.num_fine_vertices()];
    for (patch, &w) in patching.patches().zip(weights) {
        for &v in patch {
            sum[v as usize] += w;
        }
    }
    let mult = patching.multiplicity();
    let values = sum
        .iter()
        .zip(&mult)
        .map(|(&s, &m)| if m > 0 { s / m as f64 } else { 0.0 })
        .collect();
    Ok(AttentionSurface {
        mesh_level: patching.fine_level(),
        values,
        meta,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupBy {
    Head,
    Layer,
    Subject,
}

impl std::str::FromStr for GroupBy {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head" => Ok(GroupBy::Head),
            "layer" => Ok(GroupBy::Layer),
            "subject" => Ok(GroupBy::Subject),
            _ => Err(SimError::Argument(format!("unknown grouping {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub mesh_level: u32,
    pub count: usize,
    pub mean: Vec<f64>,
    /// Population variance.
    pub variance: Vec<f64>,
}

/// Per-vertex mean and population variance over all maps.
pub fn aggregate(maps: &[AttentionSurface]) -> Result<Aggregate> {
    ensure_arg!(!maps.is_empty(), "no maps to aggregate");
    let level = maps[0].mesh_level;
    let v = maps[0].values.len();
    ensure_arg!(
        maps.iter().all(|m| m.mesh_level == level && m.values.len() == v),
        "maps have different mesh levels"
    );
    // Welford update per vertex.
    let mut mean = vec![0.0; v];
    let mut m2 = vec![0.0; v];
    for (k, map) in maps.iter().enumerate() {
        let n = (k + 1) as f64;
        for i in 0..v {
            let x = map.values[i];
            let d = x - mean[i];
            mean[i] += d / n;
            m2[i] += d * (x - mean[i]);
        }
    }
    let n = maps.len() as f64;
    Ok(Aggregate {
        mesh_level: level,
        count: maps.len(),
        mean,
        variance: m2.into_iter().map(|s| s / n).collect(),
    })
}

/// Aggregates within groups keyed by head, layer or subject.
pub fn aggregate_by(maps: &[AttentionSurface], by: GroupBy) -> Result<BTreeMap<Option<usize>, Aggregate>> {
    ensure_arg!(!maps.is_empty(), "no maps to aggregate");
    let mut groups: BTreeMap<Option<usize>, Vec<AttentionSurface>> = BTreeMap::new();
    for m in maps {
        let key = match by {
            GroupBy::Head => Some(m.meta.head),
            GroupBy::Layer => Some(m.meta.layer),
            GroupBy::Subject => m.meta.subject,
        };
        groups.entry(key).or_default().push(m.clone());
    }
    groups.into_iter().map(|(k, g)| Ok((k, aggregate(&g)?))).collect()
}

/// Pearson correlation over vertices, or over per-label means when `labels`
/// is given.
pub fn correlate_fields(a: &[f64], b: &[f64], labels: Option<&[i64]>) -> Result<f64> {
    ensure_arg!(a.len() == b.len(), "fields have {} and {} vertices", a.len(), b.len());
    ensure_arg!(!a.is_empty(), "empty fields");
    let (x, y) = match labels {
        None => (a.to_vec(), b.to_vec()),
        Some(l) => {
            ensure_arg!(l.len() == a.len(), "label field has {} vertices, expected {}", l.len(), a.len());
            let mut acc: BTreeMap<i64, (f64, f64, usize)> = BTreeMap::new();
            for ((&la, &va), &vb) in l.iter().zip(a).zip(b) {
                let e = acc.entry(la).or_insert((0.0, 0.0, 0));
                e.0 += va;
                e.1 += vb;
                e.2 += 1;
            }
            acc.values().map(|&(sa, sb, n)| (sa / n as f64, sb / n as f64)).unzip()
        }
    };
    crate::eval::stats::pearson(&x, &y)
        .ok_or_else(|| SimError::numeric("correlation undefined: a field has zero variance"))
}

/// `vertex,value` rows.
pub fn write_surface_csv<W: Write>(mut out: W, values: &[f64]) -> std::io::Result<()> {
    writeln!(out, "vertex,value")?;
    for (i, v) in values.iter().enumerate() {
        writeln!(out, "{i},{v:.9}")?;
    }
    Ok(())
}
