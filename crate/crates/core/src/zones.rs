//! Per-vertex organ zones grown by synchronous 6-connected dilation.

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::mesh::AnatomyMesh;
use crate::spatial::KdTree;
use crate::volume::{Grid, LabelVolume, Mask};

/// Zone index per voxel: `k` (1-based) for voxels in the zone of vertex
/// `k - 1`, 0 outside the organ.
#[derive(Debug, Clone, PartialEq)]
pub struct ZoneMap {
    pub grid: Grid,
    pub data: Vec<u16>,
}

impl ZoneMap {
    pub fn organ(&self) -> Mask {
        Mask {
            grid: self.grid,
            data: self.data.iter().map(|&z| z != 0).collect(),
        }
    }

    /// Voxel count per zone, indexed by zero-based vertex.
    pub fn zone_sizes(&self, n_vertices: usize) -> Vec<usize> {
        let mut sizes = vec![0; n_vertices];
        for &z in &self.data {
            if z != 0 {
                sizes[z as usize - 1] += 1;
            }
        }
        sizes
    }

    pub fn to_label_volume(&self) -> Result<LabelVolume> {
        let data = self
            .data
            .iter()
            .map(|&z| u8::try_from(z).map_err(|_| Error::InvalidArgument(format!("zone index {z} exceeds u8"))))
            .collect::<Result<_>>()?;
        LabelVolume::new(self.grid, data)
    }

    pub fn from_label_volume(vol: &LabelVolume) -> Self {
        Self {
            grid: vol.grid,
            data: vol.data.iter().map(|&l| l as u16).collect(),
        }
    }
}

/// One distinct organ voxel per vertex: the nearest (world distance) organ
/// voxel not already taken by a lower-indexed vertex.
pub fn seed_voxels(vertices: &[Vector3<f64>], organ: &Mask) -> Result<Vec<usize>> {
    let voxels: Vec<usize> = organ.indices().collect();
    if voxels.is_empty() {
        return Err(Error::Empty("organ mask"));
    }
    if voxels.len() < vertices.len() {
        return Err(Error::InvalidArgument(format!(
            "organ has {} voxels, fewer than {} vertices",
            voxels.len(),
            vertices.len()
        )));
    }
    let tree = KdTree::new(voxels.iter().map(|&i| organ.grid.world(i)).collect());
    let mut taken = vec![false; voxels.len()];
    let mut seeds = Vec::with_capacity(vertices.len());
    for p in vertices {
        let (k, _) = tree
            .nearest_where(p, |k| !taken[k])
            .expect("enough free organ voxels");
        taken[k] = true;
        seeds.push(voxels[k]);
    }
    Ok(seeds)
}

/// Grows zones from `seeds` (voxel indices, one per vertex) in synchronous
/// rounds restricted to `organ`. A voxel first reached in a round joins the
/// lowest zone index among its neighbours labelled in earlier rounds.
/// Organ voxels no seed can reach fall back to the vertex whose `positions`
/// entry is nearest.
pub fn grow_zones(organ: &Mask, seeds: &[usize], positions: &[Vector3<f64>]) -> Result<ZoneMap> {
    if seeds.len() != positions.len() {
        return Err(Error::InvalidArgument("one position per seed required".into()));
    }
    if seeds.len() > u16::MAX as usize {
        return Err(Error::InvalidArgument("too many seeds".into()));
    }
    let grid = organ.grid;
    let mut zone = vec![0u16; grid.len()];
    let mut frontier = Vec::with_capacity(seeds.len());
    for (k, &s) in seeds.iter().enumerate() {
        if s >= grid.len() || !organ.data[s] {
            return Err(Error::InvalidArgument(format!("seed {k} lies outside the organ")));
        }
        if zone[s] == 0 {
            zone[s] = k as u16 + 1;
            frontier.push(s);
        }
    }
    let mut proposal = vec![0u16; grid.len()];
    let mut next = Vec::new();
    while !frontier.is_empty() {
        for &v in &frontier {
            let z = zone[v];
            grid.for_each_neighbor6(v, |u| {
                if organ.data[u] && zone[u] == 0 {
                    if proposal[u] == 0 {
                        next.push(u);
                        proposal[u] = z;
                    } else if z < proposal[u] {
                        proposal[u] = z;
                    }
                }
            });
        }
        for &u in &next {
            zone[u] = proposal[u];
            proposal[u] = 0;
        }
        std::mem::swap(&mut frontier, &mut next);
        next.clear();
    }
    let stranded: Vec<usize> = organ.indices().filter(|&i| zone[i] == 0).collect();
    if !stranded.is_empty() {
        let tree = KdTree::new(positions.to_vec());
        for i in stranded {
            let (k, _) = tree.nearest(&grid.world(i)).expect("at least one vertex");
            zone[i] = k as u16 + 1;
        }
    }
    Ok(ZoneMap { grid, data: zone })
}

/// Partitions the organ into one zone per mesh vertex.
pub fn render_zones(mesh: &AnatomyMesh, organ: &Mask) -> Result<ZoneMap> {
    let seeds = seed_voxels(&mesh.vertices, organ)?;
    grow_zones(organ, &seeds, &mesh.vertices)
}

/// Vertex label = the largest voxel label inside its zone.
pub fn vertex_labels(zmap: &ZoneMap, labels: &LabelVolume, n_vertices: usize) -> Result<Vec<u8>> {
    zmap.grid.check_same_dims(&labels.grid)?;
    let mut best: Vec<Option<u8>> = vec![None; n_vertices];
    for (&z, &l) in zmap.data.iter().zip(&labels.data) {
        if z == 0 {
            continue;
        }
        let slot = best
            .get_mut(z as usize - 1)
            .ok_or_else(|| Error::InvalidArgument(format!("zone {z} exceeds vertex count {n_vertices}")))?;
        *slot = Some(slot.map_or(l, |b| b.max(l)));
    }
    best.into_iter()
        .enumerate()
        .map(|(k, b)| b.ok_or(Error::EmptyZone(k + 1)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dims: [usize; 3]) -> Grid {
        Grid::new(dims, [1.0; 3]).unwrap()
    }

    #[test]
    fn one_seed_claims_everything() {
        let g = grid([4, 4, 4]);
        let organ = Mask::from_indices(g, (0..64).filter(|i| i % 3 != 0));
        let z = grow_zones(&organ, &[1], &[g.world(1)]).unwrap();
        for i in 0..64 {
            assert_eq!(z.data[i], if organ.data[i] { 1 } else { 0 });
        }
    }

    #[test]
    fn bar_splits_evenly() {
        let g = grid([1, 1, 10]);
        let organ = Mask::from_indices(g, 0..10);
        let z = grow_zones(&organ, &[0, 9], &[g.world(0), g.world(9)]).unwrap();
        assert_eq!(z.data, vec![1, 1, 1, 1, 1, 2, 2, 2, 2, 2]);
        assert_eq!(z.zone_sizes(2), vec![5, 5]);
    }

    #[test]
    fn equidistant_voxel_goes_to_lower_index() {
        let g = grid([1, 1, 5]);
        let organ = Mask::from_indices(g, 0..5);
        // voxel 2 is reached by both zones in round 2
        let z = grow_zones(&organ, &[4, 0], &[g.world(4), g.world(0)]).unwrap();
        assert_eq!(z.data, vec![2, 2, 1, 1, 1]);
    }

    #[test]
    fn islands_fall_back_to_nearest_vertex() {
        let g = grid([10, 1, 1]);
        let organ = Mask::from_indices(g, [0, 1, 2, 7, 8]);
        let positions = [Vector3::new(0.0, 0.0, 0.0), Vector3::new(9.0, 0.0, 0.0)];
        let z = grow_zones(&organ, &[0, 1], &positions).unwrap();
        assert_eq!(z.data, vec![1, 2, 2, 0, 0, 0, 0, 2, 2, 0]);
    }

    #[test]
    fn seeds_are_distinct_nearest_voxels() {
        let g = grid([5, 1, 1]);
        let organ = Mask::from_indices(g, 0..5);
        let v = [Vector3::new(2.2, 0.0, 0.0), Vector3::new(2.1, 0.1, 0.0), Vector3::new(-3.0, 0.0, 0.0)];
        assert_eq!(seed_voxels(&v, &organ).unwrap(), vec![2, 3, 0]);
        assert!(seed_voxels(&v, &Mask::from_indices(g, [1, 2])).is_err());
    }

    #[test]
    fn vertex_labels_take_zone_maximum() {
        let g = grid([6, 1, 1]);
        let zmap = ZoneMap { grid: g, data: vec![1, 1, 2, 2, 2, 0] };
        let labels = LabelVolume::new(g, vec![1, 1, 1, 3, 2, 5]).unwrap();
        assert_eq!(vertex_labels(&zmap, &labels, 2).unwrap(), vec![1, 3]);
        assert!(matches!(vertex_labels(&zmap, &labels, 3), Err(Error::EmptyZone(3))));
        let other = LabelVolume::zeros(grid([3, 1, 1]));
        assert!(matches!(vertex_labels(&zmap, &other, 2), Err(Error::DimMismatch(..))));
        let z5 = ZoneMap { grid: g, data: vec![1, 1, 1, 0, 0, 0] };
        let l5 = LabelVolume::new(g, vec![1, 2, 5, 0, 0, 0]).unwrap();
        assert_eq!(vertex_labels(&z5, &l5, 1).unwrap(), vec![5]);
    }

    #[test]
    fn label_volume_round_trip() {
        let g = grid([3, 1, 1]);
        let z = ZoneMap { grid: g, data: vec![0, 156, 3] };
        assert_eq!(ZoneMap::from_label_volume(&z.to_label_volume().unwrap()), z);
        let big = ZoneMap { grid: g, data: vec![0, 300, 3] };
        assert!(big.to_label_volume().is_err());
    }
}
