//! Closed triangle meshes whose vertex indices carry anatomical regions.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PROTOTYPE_VERTICES: usize = 156;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Head,
    VentralBody,
    DorsalBody,
    Tail,
}

impl Region {
    pub const ALL: [Region; 4] = [
        Region::Head,
        Region::VentralBody,
        Region::DorsalBody,
        Region::Tail,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Region::Head => "head",
            Region::VentralBody => "ventral_body",
            Region::DorsalBody => "dorsal_body",
            Region::Tail => "tail",
        }
    }

    pub fn from_name(name: &str) -> Option<Region> {
        Region::ALL.into_iter().find(|r| r.name() == name)
    }
}

/// Four contiguous, 1-based, inclusive vertex index intervals in
/// [`Region::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegionRanges {
    pub ranges: [(usize, usize); 4],
}

impl Default for RegionRanges {
    /// Head 1–48, ventral body 49–90, dorsal body 91–135, tail 136–156.
    fn default() -> Self {
        Self::from_counts([48, 42, 45, 21]).expect("default counts are positive")
    }
}

impl RegionRanges {
    pub fn from_counts(counts: [usize; 4]) -> Result<Self> {
        if counts.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "region counts must be positive: {counts:?}"
            )));
        }
        let mut start = 1;
        let mut ranges = [(0, 0); 4];
        for (slot, &n) in ranges.iter_mut().zip(&counts) {
            *slot = (start, start + n - 1);
            start += n;
        }
        Ok(Self { ranges })
    }

    /// Validates that the ranges tile `1..=n_vertices` in order.
    pub fn new(ranges: [(usize, usize); 4], n_vertices: usize) -> Result<Self> {
        let mut expected_start = 1;
        for &(s, e) in &ranges {
            if s != expected_start || e < s {
                return Err(Error::InvalidArgument(format!(
                    "region ranges {ranges:?} do not tile 1..={n_vertices}"
                )));
            }
            expected_start = e + 1;
        }
        if expected_start != n_vertices + 1 {
            return Err(Error::InvalidArgument(format!(
                "region ranges {ranges:?} do not tile 1..={n_vertices}"
            )));
        }
        Ok(Self { ranges })
    }

    pub fn total(&self) -> usize {
        self.ranges[3].1
    }

    pub fn counts(&self) -> [usize; 4] {
        self.ranges.map(|(s, e)| e - s + 1)
    }

    /// Zero-based index range of a region.
    pub fn zero_based(&self, region: Region) -> std::ops::Range<usize> {
        let (s, e) = self.ranges[region as usize];
        s - 1..e
    }

    /// Region of a zero-based vertex index.
    pub fn region_of(&self, vertex: usize) -> Option<Region> {
        Region::ALL
            .into_iter()
            .find(|&r| self.zero_based(r).contains(&vertex))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnatomyMesh {
    pub vertices: Vec<Vector3<f64>>,
    faces: Vec<[usize; 3]>,
    edges: Vec<(usize, usize)>,
    pub regions: RegionRanges,
}

/// Undirected edges `(a, b)` with `a < b`, sorted.
pub fn edges_of(faces: &[[usize; 3]]) -> Vec<(usize, usize)> {
    let mut edges: Vec<(usize, usize)> = faces
        .iter()
        .flat_map(|f| [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])])
        .map(|(a, b)| (a.min(b), a.max(b)))
        .collect();
    edges.sort_unstable();
    edges.dedup();
    edges
}

impl AnatomyMesh {
    /// Builds a mesh and checks that it is a closed, consistently oriented,
    /// genus-0 triangle surface whose regions tile the vertex indices.
    pub fn new(vertices: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>, regions: RegionRanges) -> Result<Self> {
        let edges = edges_of(&faces);
        let mesh = Self {
            vertices,
            faces,
            edges,
            regions,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edges.len() as i64 + self.faces.len() as i64
    }

    pub fn region_of(&self, vertex: usize) -> Region {
        self.regions
            .region_of(vertex)
            .expect("regions tile the vertex range")
    }

    /// Sorted neighbour lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.vertices.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        adj
    }

    /// Same combinatorics, new positions.
    pub fn with_vertices(&self, vertices: Vec<Vector3<f64>>) -> Self {
        assert_eq!(vertices.len(), self.vertices.len());
        Self {
            vertices,
            faces: self.faces.clone(),
            edges: self.edges.clone(),
            regions: self.regions,
        }
    }

    pub fn same_combinatorics(&self, other: &AnatomyMesh) -> bool {
        self.faces == other.faces && self.regions == other.regions
    }

    pub fn centroid(&self) -> Vector3<f64> {
        self.vertices.iter().sum::<Vector3<f64>>() / self.vertices.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        if n == 0 || self.faces.is_empty() {
            return Err(Error::InvalidMesh("empty mesh".into()));
        }
        if self.regions.total() != n {
            return Err(Error::InvalidMesh(format!(
                "regions cover {} vertices, mesh has {n}",
                self.regions.total()
            )));
        }
        if self.vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidMesh("non-finite vertex".into()));
        }
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            if f.iter().any(|&i| i >= n) {
                return Err(Error::InvalidMesh(format!("face {fi} has index out of range")));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} is degenerate")));
            }
            for (a, b) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                if directed.insert((a, b), fi).is_some() {
                    return Err(Error::InvalidMesh(format!(
                        "directed edge ({a}, {b}) used twice: inconsistent orientation or non-manifold"
                    )));
                }
            }
        }
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) {
                return Err(Error::InvalidMesh(format!("edge ({a}, {b}) is a boundary edge")));
            }
        }
        let mut used = vec![false; n];
        for f in &self.faces {
            for &i in f {
                used[i] = true;
            }
        }
        if let Some(i) = used.iter().position(|&u| !u) {
            return Err(Error::InvalidMesh(format!("vertex {i} is unreferenced")));
        }
        // vertex links must be single cycles (no pinched vertices)
        let mut fans: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for f in &self.faces {
            for k in 0..3 {
                fans[f[k]].push((f[(k + 1) % 3], f[(k + 2) % 3]));
            }
        }
        for (v, fan) in fans.iter().enumerate() {
            let next: HashMap<usize, usize> = fan.iter().copied().collect();
            let start = fan[0].0;
            let mut cur = start;
            let mut steps = 0;
            loop {
                cur = next[&cur];
                steps += 1;
                if cur == start {
                    break;
                }
                if steps > fan.len() {
                    break;
                }
            }
            if steps != fan.len() {
                return Err(Error::InvalidMesh(format!("vertex {v} is non-manifold")));
            }
        }
        if self.euler_characteristic() != 2 {
            return Err(Error::InvalidMesh(format!(
                "Euler characteristic {} != 2",
                self.euler_characteristic()
            )));
        }
        let mut seen: BTreeMap<[u64; 3], usize> = BTreeMap::new();
        for (i, v) in self.vertices.iter().enumerate() {
            if let Some(j) = seen.insert([v.x.to_bits(), v.y.to_bits(), v.z.to_bits()], i) {
                return Err(Error::InvalidMesh(format!("vertices {j} and {i} coincide")));
            }
        }
        Ok(())
    }

    /// Reorders vertices so that new index `k` holds old vertex `order[k]`,
    /// remapping faces accordingly.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let n = self.vertices.len();
        let mut inverse = vec![usize::MAX; n];
        if order.len() != n {
            return Err(Error::InvalidArgument("permutation length mismatch".into()));
        }
        for (new, &old) in order.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(Error::InvalidArgument("not a permutation".into()));
            }
            inverse[old] = new;
        }
        let vertices = order.iter().map(|&o| self.vertices[o]).collect();
        let faces: Vec<[usize; 3]> = self.faces.iter().map(|f| f.map(|i| inverse[i])).collect();
        let edges = edges_of(&faces);
        Ok(Self {
            vertices,
            faces,
            edges,
            regions: self.regions,
        })
    }

    /// Coordinates rounded exactly as the OBJ writer prints them, so a mesh
    /// reloaded from disk equals the quantized in-memory mesh.
    pub fn quantized(&self) -> Self {
        let q = |x: f64| sig9(x).parse::<f64>().expect("formatted float parses");
        self.with_vertices(self.vertices.iter().map(|v| Vector3::new(q(v.x), q(v.y), q(v.z))).collect())
    }

    pub fn to_obj_string(&self) -> String {
        let mut out = String::new();
        for r in Region::ALL {
            let (s, e) = self.regions.ranges[r as usize];
            let _ = writeln!(out, "# region {} {s} {e}", r.name());
        }
        for v in &self.vertices {
            let _ = writeln!(out, "v {} {} {}", sig9(v.x), sig9(v.y), sig9(v.z));
        }
        for f in &self.faces {
            let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
        }
        out
    }

    pub fn from_obj_str(text: &str) -> Result<Self> {
        let mut vertices = Vec::new();
        let mut faces = Vec::new();
        let mut ranges: [Option<(usize, usize)>; 4] = [None; 4];
        for (lineno, line) in text.lines().enumerate() {
            let bad = |what: &str| Error::Parse(format!("line {}: {what}", lineno + 1));
            let mut parts = line.split_whitespace();
            match parts.next() {
                None => {}
                Some("#") => {
                    if parts.next() == Some("region") {
                        let name = parts.next().ok_or_else(|| bad("missing region name"))?;
                        let region = Region::from_name(name).ok_or_else(|| bad("unknown region"))?;
                        let s = parts.next().and_then(|t| t.parse().ok());
                        let e = parts.next().and_then(|t| t.parse().ok());
                        match (s, e) {
                            (Some(s), Some(e)) => ranges[region as usize] = Some((s, e)),
                            _ => return Err(bad("bad region range")),
                        }
                    }
                }
                Some("v") => {
                    let c: Vec<f64> = parts
                        .map(|t| t.parse::<f64>().map_err(|_| bad("bad coordinate")))
                        .collect::<Result<_>>()?;
                    if c.len() != 3 {
                        return Err(bad("vertex needs 3 coordinates"));
                    }
                    vertices.push(Vector3::new(c[0], c[1], c[2]));
                }
                Some("f") => {
                    let idx: Vec<usize> = parts
                        .map(|t| {
                            let head = t.split('/').next().unwrap_or(t);
                            head.parse::<usize>()
                                .ok()
                                .filter(|&i| i >= 1)
                                .map(|i| i - 1)
                                .ok_or_else(|| bad("bad face index"))
                        })
                        .collect::<Result<_>>()?;
                    if idx.len() != 3 {
                        return Err(bad("only triangles are supported"));
                    }
                    faces.push([idx[0], idx[1], idx[2]]);
                }
                Some(_) => {}
            }
        }
        let regions = match ranges {
            [Some(a), Some(b), Some(c), Some(d)] => RegionRanges::new([a, b, c, d], vertices.len())?,
            [None, None, None, None] if vertices.len() == PROTOTYPE_VERTICES => RegionRanges::default(),
            _ => return Err(Error::Parse("incomplete region ranges".into())),
        };
        AnatomyMesh::new(vertices, faces, regions)
    }

    pub fn save_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_obj_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load_obj(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_obj_str(&text)
    }
}

/// Nine significant digits in scientific notation.
fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetrahedron() -> AnatomyMesh {
        let v = vec![
            Vector3::new(1.0, 1.0, 1.0),
            Vector3::new(1.0, -1.0, -1.0),
            Vector3::new(-1.0, 1.0, -1.0),
            Vector3::new(-1.0, -1.0, 1.0),
        ];
        let f = vec![[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]];
        AnatomyMesh::new(v, f, RegionRanges::new([(1, 1), (2, 2), (3, 3), (4, 4)], 4).unwrap()).unwrap()
    }

    #[test]
    fn default_ranges() {
        let r = RegionRanges::default();
        assert_eq!(r.ranges, [(1, 48), (49, 90), (91, 135), (136, 156)]);
        assert_eq!(r.counts(), [48, 42, 45, 21]);
        assert_eq!(r.region_of(47), Some(Region::Head));
        assert_eq!(r.region_of(48), Some(Region::VentralBody));
        assert_eq!(r.region_of(155), Some(Region::Tail));
        assert_eq!(r.region_of(156), None);
        assert!(RegionRanges::new([(1, 48), (50, 90), (91, 135), (136, 156)], 156).is_err());
    }

    #[test]
    fn tetrahedron_is_valid() {
        let t = tetrahedron();
        assert_eq!(t.euler_characteristic(), 2);
        assert_eq!(t.edges().len(), 6);
    }

    #[test]
    fn rejects_open_and_flipped_meshes() {
        let t = tetrahedron();
        let regions = t.regions;
        let open = AnatomyMesh::new(t.vertices.clone(), t.faces()[..3].to_vec(), regions);
        assert!(open.is_err());
        let mut flipped = t.faces().to_vec();
        flipped[0] = [0, 2, 1];
        assert!(AnatomyMesh::new(t.vertices.clone(), flipped, regions).is_err());
        let mut dup = t.vertices.clone();
        dup[3] = dup[0];
        assert!(AnatomyMesh::new(dup, t.faces().to_vec(), regions).is_err());
    }

    #[test]
    fn obj_round_trip() {
        let t = tetrahedron().with_vertices(vec![
            Vector3::new(0.123456789012, 1.0, 1.0),
            Vector3::new(1.0, -1.0, -1.0e-5),
            Vector3::new(-1.0, 12345.6789, -1.0),
            Vector3::new(-1.0, -1.0, 1.0),
        ]);
        let text = t.to_obj_string();
        let back = AnatomyMesh::from_obj_str(&text).unwrap();
        assert_eq!(back.to_obj_string(), text);
        assert_eq!(back, t.quantized());
        assert_eq!(back.faces(), t.faces());
        assert_eq!(back.regions, t.regions);
        for (a, b) in back.vertices.iter().zip(&t.vertices) {
            assert!((a - b).norm() <= 1e-8 * b.norm());
        }
    }

    #[test]
    fn permutation_preserves_geometry() {
        let t = tetrahedron();
        let p = t.permuted(&[3, 1, 0, 2]).unwrap();
        p.validate().unwrap();
        assert_eq!(p.vertices[0], t.vertices[3]);
        assert!(t.permuted(&[0, 0, 1, 2]).is_err());
    }
}
