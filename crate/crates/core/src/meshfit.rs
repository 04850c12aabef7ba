//! Mask-to-mesh deformation: gradient descent on
//! `L = L_pt + lambda1 * L_e1 + lambda2 * L_e2` with nearest-surface
//! correspondences refreshed every iteration.

use std::fmt::Write as _;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::AnatomyMesh;
use crate::spatial::KdTree;
use crate::volume::Mask;

/// World coordinates of a mask's surface voxels behind a k-d tree.
#[derive(Debug, Clone)]
pub struct SurfaceIndex {
    tree: KdTree,
}

impl SurfaceIndex {
    pub fn from_mask(mask: &Mask) -> Result<Self> {
        let points: Vec<Vector3<f64>> = mask
            .surface_indices()
            .into_iter()
            .map(|i| mask.grid.world(i))
            .collect();
        Self::from_points(points)
    }

    pub fn from_points(points: Vec<Vector3<f64>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Empty("surface index"));
        }
        Ok(Self {
            tree: KdTree::new(points),
        })
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.is_empty()
    }

    pub fn nearest(&self, p: &Vector3<f64>) -> Vector3<f64> {
        let (i, _) = self.tree.nearest(p).expect("surface index is non-empty");
        self.tree.point(i)
    }

    pub fn distance(&self, p: &Vector3<f64>) -> f64 {
        self.tree.nearest(p).expect("surface index is non-empty").1.sqrt()
    }

    pub fn correspondences(&self, vertices: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
        vertices.iter().map(|p| self.nearest(p)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    pub lambda1: f64,
    pub lambda2: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub tol: f64,
    /// Step halvings tried before an iteration gives up on descent.
    pub max_halvings: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            lambda1: 1e-4,
            lambda2: 1e-2,
            step_size: 0.2,
            max_iters: 2000,
            tol: 1e-6,
            max_halvings: 30,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lambda1 >= 0.0
            && self.lambda2 >= 0.0
            && self.step_size > 0.0
            && self.tol >= 0.0
            && self.max_iters > 0;
        if !ok {
            return Err(Error::InvalidArgument(format!("invalid fit config {self:?}")));
        }
        Ok(())
    }
}

/// `sum_p |p - q(p)|^2` and its gradient `2 (p - q(p))` for fixed
/// correspondences.
pub fn point_loss_fixed(vertices: &[Vector3<f64>], targets: &[Vector3<f64>]) -> (f64, Vec<Vector3<f64>>) {
    let mut value = 0.0;
    let grad = vertices
        .iter()
        .zip(targets)
        .map(|(p, q)| {
            let d = p - q;
            value += d.norm_squared();
            2.0 * d
        })
        .collect();
    (value, grad)
}

/// Point loss against the nearest surface voxels of `idx`.
pub fn point_loss(mesh: &AnatomyMesh, idx: &SurfaceIndex) -> Result<(f64, Vec<Vector3<f64>>)> {
    if idx.is_empty() {
        return Err(Error::Empty("surface index"));
    }
    let q = idx.correspondences(&mesh.vertices);
    Ok(point_loss_fixed(&mesh.vertices, &q))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeTerms {
    /// `sum_e (|e| - mean|e|)^2` over all edges.
    pub e1: f64,
    /// `sum_e |e|`.
    pub e2: f64,
    pub grad1: Vec<Vector3<f64>>,
    pub grad2: Vec<Vector3<f64>>,
}

pub fn edge_regularizers(mesh: &AnatomyMesh) -> Result<EdgeTerms> {
    edge_terms(&mesh.vertices, mesh.edges())
}

pub fn edge_terms(vertices: &[Vector3<f64>], edges: &[(usize, usize)]) -> Result<EdgeTerms> {
    if edges.is_empty() {
        return Err(Error::Empty("edge list"));
    }
    let mut lengths = Vec::with_capacity(edges.len());
    let mut units = Vec::with_capacity(edges.len());
    for &(a, b) in edges {
        let d = vertices[a] - vertices[b];
        let len = d.norm();
        if len == 0.0 {
            return Err(Error::DegenerateEdge(a, b));
        }
        lengths.push(len);
        units.push(d / len);
    }
    let mean = lengths.iter().sum::<f64>() / lengths.len() as f64;
    let mut e1 = 0.0;
    let mut grad1 = vec![Vector3::zeros(); vertices.len()];
    let mut grad2 = vec![Vector3::zeros(); vertices.len()];
    // d/d(len_j) of sum_i (len_i - mean)^2 is 2 (len_j - mean): the mean's
    // own derivative contributes -2/E * sum_i (len_i - mean) = 0.
    for ((&(a, b), &len), u) in edges.iter().zip(&lengths).zip(&units) {
        let r = len - mean;
        e1 += r * r;
        let g = 2.0 * r * u;
        grad1[a] += g;
        grad1[b] -= g;
        grad2[a] += u;
        grad2[b] -= u;
    }
    Ok(EdgeTerms {
        e1,
        e2: lengths.iter().sum(),
        grad1,
        grad2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub l_pt: f64,
    pub l_e1: f64,
    pub l_e2: f64,
    pub total: f64,
}

/// Total mesh-fit loss and gradient with frozen correspondences.
pub fn meshfit_loss(
    vertices: &[Vector3<f64>],
    edges: &[(usize, usize)],
    targets: &[Vector3<f64>],
    cfg: &FitConfig,
) -> Result<(LossParts, Vec<Vector3<f64>>)> {
    let (l_pt, mut grad) = point_loss_fixed(vertices, targets);
    let terms = edge_terms(vertices, edges)?;
    for ((g, g1), g2) in grad.iter_mut().zip(&terms.grad1).zip(&terms.grad2) {
        *g += cfg.lambda1 * g1 + cfg.lambda2 * g2;
    }
    let total = l_pt + cfg.lambda1 * terms.e1 + cfg.lambda2 * terms.e2;
    Ok((
        LossParts {
            l_pt,
            l_e1: terms.e1,
            l_e2: terms.e2,
            total,
        },
        grad,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitIteration {
    pub iter: usize,
    /// Loss at the start of the iteration, after refreshing correspondences.
    pub before: f64,
    /// Loss after the step with the same correspondences.
    pub after: LossParts,
    pub step: f64,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub mesh: AnatomyMesh,
    pub trace: Vec<FitIteration>,
}

/// Deforms `mesh` onto the surface of `target`. Faces, edges and region
/// labels are untouched; only vertex positions change.
pub fn fit_mesh(mesh: &AnatomyMesh, target: &Mask, cfg: &FitConfig) -> Result<FitResult> {
    cfg.validate()?;
    let idx = SurfaceIndex::from_mask(target)?;
    fit_mesh_to_index(mesh, &idx, cfg)
}

pub fn fit_mesh_to_index(mesh: &AnatomyMesh, idx: &SurfaceIndex, cfg: &FitConfig) -> Result<FitResult> {
    let edges = mesh.edges();
    let mut x = mesh.vertices.clone();
    let mut trace = Vec::new();
    for iter in 0..cfg.max_iters {
        let q = idx.correspondences(&x);
        let (before, grad) = meshfit_loss(&x, edges, &q, cfg)?;
        if !before.total.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: iter });
        }
        let mut step = cfg.step_size;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let trial: Vec<Vector3<f64>> = x.iter().zip(&grad).map(|(p, g)| p - step * g).collect();
            match meshfit_loss(&trial, edges, &q, cfg) {
                Ok((after, _)) if after.total.is_finite() && after.total <= before.total => {
                    accepted = Some((trial, after));
                    break;
                }
                Ok((after, _)) if !after.total.is_finite() && step <= cfg.step_size * 1e-9 => {
                    return Err(Error::NonFiniteLoss { iteration: iter });
                }
                _ => step *= 0.5,
            }
        }
        let Some((next, after)) = accepted else {
            // no descent direction left at this resolution
            trace.push(FitIteration { iter, before: before.total, after: before, step: 0.0 });
            break;
        };
        x = next;
        trace.push(FitIteration {
            iter,
            before: before.total,
            after,
            step,
        });
        let decrease = before.total - after.total;
        if before.total == 0.0 || decrease <= cfg.tol * before.total {
            break;
        }
    }
    Ok(FitResult {
        mesh: mesh.with_vertices(x),
        trace,
    })
}

/// Translates the mesh so its vertex centroid matches the mask centroid.
pub fn align_to_centroid(mesh: &AnatomyMesh, target: &Mask) -> Result<AnatomyMesh> {
    let c = target.centroid().ok_or(Error::Empty("target mask"))?;
    let shift = c - mesh.centroid();
    Ok(mesh.with_vertices(mesh.vertices.iter().map(|v| v + shift).collect()))
}

/// Mean distance from vertices to the nearest indexed surface point.
pub fn mean_surface_distance(vertices: &[Vector3<f64>], idx: &SurfaceIndex) -> f64 {
    vertices.iter().map(|p| idx.distance(p)).sum::<f64>() / vertices.len() as f64
}

pub fn trace_csv(trace: &[FitIteration]) -> String {
    let mut out = String::from("iter,L_pt,L_e1,L_e2,L_total\n");
    for t in trace {
        let _ = writeln!(
            out,
            "{},{:?},{:?},{:?},{:?}",
            t.iter, t.after.l_pt, t.after.l_e1, t.after.l_e2, t.after.total
        );
    }
    out
}
