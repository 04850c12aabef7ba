//! Building the anatomical prototype: a mean organ shape, the template
//! fitted to it, and vertex re-indexing into head-to-tail regions.

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::AnatomyMesh;
use crate::meshfit::{fit_mesh_to_index, mean_surface_distance, FitConfig, SurfaceIndex};
use crate::template::template;
use crate::volume::Mask;

/// Integer voxel shift that moves the mask centroid onto the grid centre.
pub fn centering_shift(mask: &Mask) -> Option<[i64; 3]> {
    let [nw, nh, nd] = mask.grid.dims;
    let mut sum = [0.0f64; 3];
    let mut n = 0usize;
    for i in mask.indices() {
        let c = mask.grid.coord(i);
        sum[0] += c.w as f64;
        sum[1] += c.h as f64;
        sum[2] += c.d as f64;
        n += 1;
    }
    if n == 0 {
        return None;
    }
    let centre = [(nw - 1) as f64 / 2.0, (nh - 1) as f64 / 2.0, (nd - 1) as f64 / 2.0];
    Some([0, 1, 2].map(|a| (centre[a] - sum[a] / n as f64).round() as i64))
}

/// Translates a mask by whole voxels; voxels leaving the grid are dropped.
pub fn shift_mask(mask: &Mask, shift: [i64; 3]) -> Mask {
    let grid = mask.grid;
    let mut out = Mask::empty(grid);
    for i in mask.indices() {
        let c = grid.coord(i);
        let w = c.w as i64 + shift[0];
        let h = c.h as i64 + shift[1];
        let d = c.d as i64 + shift[2];
        if (0..grid.dims[0] as i64).contains(&w)
            && (0..grid.dims[1] as i64).contains(&h)
            && (0..grid.dims[2] as i64).contains(&d)
        {
            out.data[w as usize + grid.dims[0] * (h as usize + grid.dims[1] * d as usize)] = true;
        }
    }
    out
}

/// Voxelwise mean of centroid-centred masks, thresholded at 0.5 (`>=`).
pub fn mean_shape(masks: &[Mask]) -> Result<Mask> {
    let first = masks.first().ok_or(Error::Empty("mask list"))?;
    for m in &masks[1..] {
        first.grid.check_same_dims(&m.grid)?;
        if m.grid.spacing != first.grid.spacing {
            return Err(Error::SpacingMismatch(first.grid.spacing, m.grid.spacing));
        }
    }
    let mut counts = vec![0usize; first.grid.len()];
    for m in masks {
        let shift = centering_shift(m).ok_or(Error::Empty("organ mask"))?;
        for i in shift_mask(m, shift).indices() {
            counts[i] += 1;
        }
    }
    let n = masks.len();
    let mean = Mask {
        grid: first.grid,
        data: counts.iter().map(|&c| 2 * c >= n).collect(),
    };
    if mean.is_empty() {
        return Err(Error::Empty("mean shape"));
    }
    let components = mean.component_count();
    if components != 1 {
        return Err(Error::Disconnected { components });
    }
    Ok(mean)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrototypeConfig {
    pub fit: FitConfig,
    /// Largest accepted mean vertex-to-surface distance, in voxel units.
    pub max_mean_distance: f64,
}

impl Default for PrototypeConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            max_mean_distance: 1.5,
        }
    }
}

/// Fits the shared template to the surface of `mean_mask`, starting from
/// the template stretched over the mask's bounding box.
pub fn build_prototype(mean_mask: &Mask, cfg: &PrototypeConfig) -> Result<AnatomyMesh> {
    cfg.fit.validate()?;
    let idx = SurfaceIndex::from_mask(mean_mask)?;
    let grid = mean_mask.grid;
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for i in mean_mask.indices() {
        let p = grid.world(i);
        lo = lo.inf(&p);
        hi = hi.sup(&p);
    }
    let centre = (lo + hi) * 0.5;
    let half = (hi - lo) * 0.5;
    let t = template();
    let start = t.with_vertices(
        t.vertices
            .iter()
            .map(|v| centre + v.component_mul(&half))
            .collect(),
    );
    let fitted = fit_mesh_to_index(&start, &idx, &cfg.fit)?.mesh;
    let distance = mean_surface_distance(&fitted.vertices, &idx) / grid.voxel_unit();
    if !(distance <= cfg.max_mean_distance) {
        return Err(Error::FitNotConverged {
            distance,
            limit: cfg.max_mean_distance,
        });
    }
    fitted.validate()?;
    Ok(fitted)
}

/// Principal axis of a point cloud, oriented to point away from `head_end`.
pub fn head_to_tail_axis(points: &[Vector3<f64>], head_end: &Vector3<f64>) -> Result<Vector3<f64>> {
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 - l2 > 1e-3 * l1.abs().max(f64::MIN_POSITIVE)) {
        return Err(Error::DegenerateAxis(l1, l2));
    }
    let mut axis: Vector3<f64> = eig.eigenvectors.column(order[0]).into_owned();
    if (head_end - centroid).dot(&axis) > 0.0 {
        axis = -axis;
    }
    Ok(axis)
}

/// Re-indexes vertices by their position along the head-to-tail axis so
/// the region ranges of the mesh read head, ventral body, dorsal body, tail.
pub fn assign_regions(mesh: &AnatomyMesh, head_end: &Vector3<f64>) -> Result<AnatomyMesh> {
    let axis = head_to_tail_axis(&mesh.vertices, head_end)?;
    let proj: Vec<f64> = mesh.vertices.iter().map(|v| v.dot(&axis)).collect();
    let mut order: Vec<usize> = (0..mesh.vertex_count()).collect();
    order.sort_by(|&a, &b| proj[a].total_cmp(&proj[b]).then(a.cmp(&b)));
    mesh.permuted(&order)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Region;
    use crate::volume::Grid;

    fn grid(dims: [usize; 3]) -> Grid {
        Grid::new(dims, [1.0; 3]).unwrap()
    }

    fn ellipsoid(g: Grid, c: [f64; 3], r: [f64; 3]) -> Mask {
        let data = (0..g.len())
            .map(|i| {
                let p = g.world(i);
                (0..3).map(|a| ((p[a] - c[a]) / r[a]).powi(2)).sum::<f64>() <= 1.0
            })
            .collect();
        Mask { grid: g, data }
    }

    fn capsule(g: Grid, a: Vector3<f64>, b: Vector3<f64>, r: f64) -> Mask {
        let data = (0..g.len())
            .map(|i| {
                let p = g.world(i);
                let ab = b - a;
                let t = ((p - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
                (p - (a + t * ab)).norm() <= r
            })
            .collect();
        Mask { grid: g, data }
    }

    #[test]
    fn single_mask_mean_is_itself_recentred() {
        let g = grid([20, 20, 20]);
        let m = ellipsoid(g, [9.5, 9.5, 9.5], [6.0, 4.0, 3.0]);
        assert_eq!(mean_shape(std::slice::from_ref(&m)).unwrap(), m);
    }

    #[test]
    fn translation_is_removed() {
        let g = grid([24, 20, 20]);
        let a = ellipsoid(g, [8.0, 9.0, 9.0], [4.0, 3.0, 3.0]);
        let b = shift_mask(&a, [2, 0, 0]);
        let mean = mean_shape(&[a.clone(), b]).unwrap();
        let recentred = shift_mask(&a, centering_shift(&a).unwrap());
        assert_eq!(mean, recentred);
    }

    #[test]
    fn mean_shape_errors() {
        assert!(matches!(mean_shape(&[]), Err(Error::Empty(_))));
        let a = ellipsoid(grid([10, 10, 10]), [5.0; 3], [2.0; 3]);
        let b = ellipsoid(Grid::new([10, 10, 10], [2.0, 1.0, 1.0]).unwrap(), [5.0; 3], [2.0; 3]);
        assert!(matches!(mean_shape(&[a.clone(), b]), Err(Error::SpacingMismatch(..))));
        let two = Mask::from_indices(grid([10, 1, 1]), [0, 9]);
        assert!(matches!(mean_shape(&[two]), Err(Error::Disconnected { components: 2 })));
    }

    #[test]
    fn mean_of_three_ellipsoids_matches_voxel_vote() {
        let g = grid([24, 24, 24]);
        let masks = [
            ellipsoid(g, [10.0, 11.0, 12.0], [7.0, 5.0, 4.0]),
            ellipsoid(g, [13.0, 12.0, 11.0], [6.0, 5.0, 5.0]),
            ellipsoid(g, [12.0, 10.0, 12.0], [8.0, 4.0, 4.0]),
        ];
        // independent: explicit per-mask index arithmetic and vote counting
        let mut votes = vec![0u32; g.len()];
        for m in &masks {
            let (mut sw, mut sh, mut sd, mut n) = (0.0, 0.0, 0.0, 0.0);
            for d in 0..24 {
                for h in 0..24 {
                    for w in 0..24 {
                        if m.data[w + 24 * (h + 24 * d)] {
                            sw += w as f64;
                            sh += h as f64;
                            sd += d as f64;
                            n += 1.0;
                        }
                    }
                }
            }
            let s = [(11.5 - sw / n).round() as i64, (11.5 - sh / n).round() as i64, (11.5 - sd / n).round() as i64];
            for d in 0..24i64 {
                for h in 0..24i64 {
                    for w in 0..24i64 {
                        if m.data[(w + 24 * (h + 24 * d)) as usize] {
                            let (x, y, z) = (w + s[0], h + s[1], d + s[2]);
                            if (0..24).contains(&x) && (0..24).contains(&y) && (0..24).contains(&z) {
                                votes[(x + 24 * (y + 24 * z)) as usize] += 1;
                            }
                        }
                    }
                }
            }
        }
        let expected: Vec<bool> = votes.iter().map(|&v| v as f64 / 3.0 >= 0.5).collect();
        assert_eq!(mean_shape(&masks).unwrap().data, expected);
    }

    #[test]
    fn sphere_prototype_hugs_the_sphere() {
        let g = grid([40, 40, 40]);
        let c = Vector3::new(19.5, 19.5, 19.5);
        let r = 12.0;
        let m = ellipsoid(g, [c.x, c.y, c.z], [r; 3]);
        let proto = build_prototype(&m, &PrototypeConfig::default()).unwrap();
        assert_eq!(proto.vertex_count(), 156);
        assert_eq!(proto.euler_characteristic(), 2);
        for v in &proto.vertices {
            let d = ((v - c).norm() - r).abs();
            assert!(d <= 1.5, "vertex {d} voxels from the sphere");
        }
        assert!(proto.same_combinatorics(template()));
        // deterministic
        assert_eq!(build_prototype(&m, &PrototypeConfig::default()).unwrap(), proto);
    }

    #[test]
    fn capsule_prototype_matches_bounding_box() {
        let g = grid([64, 24, 24]);
        let a = Vector3::new(12.0, 11.5, 11.5);
        let b = Vector3::new(50.0, 11.5, 11.5);
        let m = capsule(g, a, b, 6.0);
        let proto = build_prototype(&m, &PrototypeConfig::default()).unwrap();
        let mut lo = Vector3::repeat(f64::INFINITY);
        let mut hi = Vector3::repeat(f64::NEG_INFINITY);
        for v in &proto.vertices {
            lo = lo.inf(v);
            hi = hi.sup(v);
        }
        let (mut mlo, mut mhi) = (Vector3::repeat(f64::INFINITY), Vector3::repeat(f64::NEG_INFINITY));
        for i in m.indices() {
            mlo = mlo.inf(&g.world(i));
            mhi = mhi.sup(&g.world(i));
        }
        for ax in 0..3 {
            assert!((lo[ax] - mlo[ax]).abs() <= 2.0, "axis {ax}: {} vs {}", lo[ax], mlo[ax]);
            assert!((hi[ax] - mhi[ax]).abs() <= 2.0, "axis {ax}: {} vs {}", hi[ax], mhi[ax]);
        }

        // head at -x: the 48 smallest-x vertices become the head
        let axis = head_to_tail_axis(&proto.vertices, &a).unwrap();
        assert!(axis.x > 0.999, "axis {axis:?}");
        let labelled = assign_regions(&proto, &a).unwrap();
        let head_max = labelled.vertices[..48].iter().map(|v| v.x).fold(f64::NEG_INFINITY, f64::max);
        let rest_min = labelled.vertices[48..].iter().map(|v| v.x).fold(f64::INFINITY, f64::min);
        // the fitted capsule is not perfectly symmetric, so the axis may tilt slightly
        assert!(head_max <= rest_min + 1.0, "{head_max} vs {rest_min}");
        assert!(labelled.vertices[..48].iter().all(|v| v.x < 31.0));
        assert_eq!(labelled.region_of(0), Region::Head);
        assert_eq!(labelled.regions.counts(), [48, 42, 45, 21]);
        labelled.validate().unwrap();

        let twice = assign_regions(&labelled, &a).unwrap();
        assert_eq!(twice, labelled);
    }

    #[test]
    fn isotropic_cloud_has_no_axis() {
        let cube: Vec<Vector3<f64>> = (0..8)
            .map(|i| Vector3::new((i & 1) as f64, ((i >> 1) & 1) as f64, ((i >> 2) & 1) as f64))
            .collect();
        assert!(matches!(
            head_to_tail_axis(&cube, &Vector3::zeros()),
            Err(Error::DegenerateAxis(..))
        ));
    }
}
