//! Per-vertex input features: normalised position, mean incident edge
//! length, distance to the nearest mass surface, and class probabilities
//! pooled over the vertex zone and over the whole organ.

use std::fmt::Write as _;

use nalgebra::Vector3;
use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::AnatomyMesh;
use crate::spatial::KdTree;
use crate::volume::{LabelVolume, ProbVolume};
use crate::zones::ZoneMap;

/// `d` value for vertices of a case with no mass voxels.
pub const NO_MASS: f64 = -1.0;

pub const GEOMETRY_COLUMNS: usize = 5;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LocalPooling {
    /// Channel mean over the zone; keeps rows normalised.
    #[default]
    Mean,
    /// Channel max over the zone; rows no longer sum to one.
    Max,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub local_pooling: LocalPooling,
}

/// One row per vertex: `x, y, z, e, d, local_0..K, global_0..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub channels: usize,
    pub data: Array2<f64>,
}

impl FeatureMatrix {
    pub fn width_for(channels: usize) -> usize {
        GEOMETRY_COLUMNS + 2 * channels
    }

    pub fn rows(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn column_names(channels: usize) -> Vec<String> {
        let mut names: Vec<String> = ["x", "y", "z", "e", "d"].iter().map(|s| s.to_string()).collect();
        names.extend((0..channels).map(|k| format!("local_{k}")));
        names.extend((0..channels).map(|k| format!("global_{k}")));
        names
    }

    pub fn to_csv(&self) -> String {
        let mut out = Self::column_names(self.channels).join(",");
        out.push('\n');
        for row in self.data.rows() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Parse("empty feature file".into()))?;
        let names: Vec<&str> = header.split(',').collect();
        if names.len() < GEOMETRY_COLUMNS || !(names.len() - GEOMETRY_COLUMNS).is_multiple_of(2) {
            return Err(Error::Parse(format!("bad feature header {header:?}")));
        }
        let channels = (names.len() - GEOMETRY_COLUMNS) / 2;
        if names != Self::column_names(channels) {
            return Err(Error::Parse(format!("bad feature header {header:?}")));
        }
        let mut values = Vec::new();
        let mut rows = 0;
        for (i, line) in lines.enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: Vec<f64> = line
                .split(',')
                .map(|c| c.trim().parse::<f64>().map_err(|_| Error::Parse(format!("row {}: bad value {c:?}", i + 1))))
                .collect::<Result<_>>()?;
            if row.len() != names.len() {
                return Err(Error::Parse(format!("row {} has {} columns", i + 1, row.len())));
            }
            values.extend(row);
            rows += 1;
        }
        let data = Array2::from_shape_vec((rows, names.len()), values)
            .map_err(|e| Error::Parse(e.to_string()))?;
        Ok(Self { channels, data })
    }
}

/// Builds the feature matrix for one case. `labels` supplies the mass
/// voxels (`mass_labels`) for the distance column.
pub fn pool_features(
    mesh: &AnatomyMesh,
    zmap: &ZoneMap,
    probs: &ProbVolume,
    labels: &LabelVolume,
    mass_labels: &[u8],
    cfg: &FeatureConfig,
) -> Result<FeatureMatrix> {
    zmap.grid.check_same_dims(&probs.grid)?;
    zmap.grid.check_same_dims(&labels.grid)?;
    let k = probs.channels;
    if labels.max_label() as usize >= k {
        return Err(Error::InvalidArgument(format!(
            "label {} has no probability channel (K = {k})",
            labels.max_label()
        )));
    }
    let n = mesh.vertex_count();
    let grid = zmap.grid;

    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    let mut centroid = Vector3::zeros();
    let mut organ_count = 0usize;
    let mut zone_count = vec![0usize; n];
    let mut local = vec![0.0f64; n * k];
    let mut global = vec![0.0f64; k];
    if cfg.local_pooling == LocalPooling::Max {
        local.fill(f64::NEG_INFINITY);
    }
    for (i, &z) in zmap.data.iter().enumerate() {
        if z == 0 {
            continue;
        }
        let v = z as usize - 1;
        if v >= n {
            return Err(Error::InvalidArgument(format!("zone {z} exceeds vertex count {n}")));
        }
        let p = grid.world(i);
        lo = lo.inf(&p);
        hi = hi.sup(&p);
        centroid += p;
        organ_count += 1;
        zone_count[v] += 1;
        let row = probs.row(i);
        let acc = &mut local[v * k..(v + 1) * k];
        for c in 0..k {
            let x = row[c] as f64;
            match cfg.local_pooling {
                LocalPooling::Mean => acc[c] += x,
                LocalPooling::Max => acc[c] = acc[c].max(x),
            }
            global[c] += x;
        }
    }
    if let Some(v) = zone_count.iter().position(|&c| c == 0) {
        return Err(Error::EmptyZone(v + 1));
    }
    centroid /= organ_count as f64;
    let diagonal = (hi - lo).norm();
    let scale = if diagonal > 0.0 { diagonal } else { 1.0 };
    for g in &mut global {
        *g /= organ_count as f64;
    }

    let mass = labels.mask_where(|l| mass_labels.contains(&l));
    let mass_surface: Vec<Vector3<f64>> = mass.surface_indices().into_iter().map(|i| grid.world(i)).collect();
    let mass_tree = (!mass_surface.is_empty()).then(|| KdTree::new(mass_surface));

    let adjacency = mesh.adjacency();
    let width = FeatureMatrix::width_for(k);
    let mut data = Array2::zeros((n, width));
    for (v, mut row) in data.rows_mut().into_iter().enumerate() {
        let p = mesh.vertices[v];
        let c = (p - centroid) / scale;
        row[0] = c.x;
        row[1] = c.y;
        row[2] = c.z;
        let nbrs = &adjacency[v];
        row[3] = nbrs.iter().map(|&u| (mesh.vertices[u] - p).norm()).sum::<f64>() / nbrs.len().max(1) as f64;
        row[4] = match &mass_tree {
            Some(t) => t.nearest(&p).expect("non-empty").1.sqrt(),
            None => NO_MASS,
        };
        for c in 0..k {
            row[GEOMETRY_COLUMNS + c] = match cfg.local_pooling {
                LocalPooling::Mean => local[v * k + c] / zone_count[v] as f64,
                LocalPooling::Max => local[v * k + c],
            };
            row[GEOMETRY_COLUMNS + k + c] = global[c];
        }
    }
    Ok(FeatureMatrix { channels: k, data })
}
