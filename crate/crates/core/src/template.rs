//! The fixed 156-vertex genus-0 template triangulation.
//!
//! Built once: a three-times subdivided icosahedron (642 vertices) is
//! reduced by shortest-edge collapse, then relaxed on the unit sphere.
//! Every prototype shares these faces; only positions differ.

use std::collections::{BTreeSet, HashMap};
use std::sync::OnceLock;

use nalgebra::Vector3;

use crate::mesh::{edges_of, AnatomyMesh, RegionRanges, PROTOTYPE_VERTICES};

const SUBDIVISIONS: usize = 3;
const MAX_VALENCE: usize = 8;
const RELAX_ITERS: usize = 400;
const RELAX_STEP: f64 = 0.1;

pub fn icosphere(subdivisions: usize) -> (Vec<Vector3<f64>>, Vec<[usize; 3]>) {
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vector3<f64>> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|c| Vector3::new(c[0], c[1], c[2]).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for _ in 0..subdivisions {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut mid = |a: usize, b: usize, verts: &mut Vec<Vector3<f64>>| {
            *midpoints.entry((a.min(b), a.max(b))).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.extend([[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }
    (vertices, faces)
}

fn face_normal(v: &[Vector3<f64>], f: &[usize; 3]) -> Vector3<f64> {
    (v[f[1]] - v[f[0]]).cross(&(v[f[2]] - v[f[0]]))
}

struct Collapser {
    pos: Vec<Vector3<f64>>,
    faces: Vec<Option<[usize; 3]>>,
    alive: Vec<bool>,
    incident: Vec<BTreeSet<usize>>,
}

impl Collapser {
    fn new(pos: Vec<Vector3<f64>>, faces: Vec<[usize; 3]>) -> Self {
        let mut incident = vec![BTreeSet::new(); pos.len()];
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                incident[v].insert(fi);
            }
        }
        Self {
            alive: vec![true; pos.len()],
            pos,
            faces: faces.into_iter().map(Some).collect(),
            incident,
        }
    }

    fn neighbors(&self, v: usize) -> BTreeSet<usize> {
        self.incident[v]
            .iter()
            .filter_map(|&fi| self.faces[fi])
            .flat_map(|f| f.into_iter())
            .filter(|&u| u != v)
            .collect()
    }

    fn alive_count(&self) -> usize {
        self.alive.iter().filter(|&&a| a).count()
    }

    fn try_collapse(&mut self, keep: usize, drop: usize) -> bool {
        let nk = self.neighbors(keep);
        let nd = self.neighbors(drop);
        let shared: Vec<usize> = nk.intersection(&nd).copied().collect();
        // link condition for a closed manifold
        if shared.len() != 2 {
            return false;
        }
        if shared.iter().any(|&s| self.neighbors(s).len() <= 3) {
            return false;
        }
        if nk.len() + nd.len() - 4 > MAX_VALENCE {
            return false;
        }
        let target = ((self.pos[keep] + self.pos[drop]) * 0.5).normalize();
        let touched: BTreeSet<usize> = self.incident[keep]
            .union(&self.incident[drop])
            .copied()
            .collect();
        for &fi in &touched {
            let f = self.faces[fi].expect("incident faces are live");
            if f.contains(&keep) && f.contains(&drop) {
                continue;
            }
            let p = f.map(|i| if i == drop || i == keep { target } else { self.pos[i] });
            let n = (p[1] - p[0]).cross(&(p[2] - p[0]));
            if n.dot(&(p[0] + p[1] + p[2])) <= 1e-9 {
                return false;
            }
        }
        for &fi in &touched {
            let f = self.faces[fi].expect("incident faces are live");
            if f.contains(&keep) && f.contains(&drop) {
                self.faces[fi] = None;
                for v in f {
                    self.incident[v].remove(&fi);
                }
            } else {
                let moved = f.map(|i| if i == drop { keep } else { i });
                self.faces[fi] = Some(moved);
                self.incident[keep].insert(fi);
            }
        }
        self.incident[drop].clear();
        self.alive[drop] = false;
        self.pos[keep] = target;
        true
    }

    fn step(&mut self) -> bool {
        let live: Vec<[usize; 3]> = self.faces.iter().flatten().copied().collect();
        let mut edges = edges_of(&live);
        edges.sort_by(|a, b| {
            let la = (self.pos[a.0] - self.pos[a.1]).norm();
            let lb = (self.pos[b.0] - self.pos[b.1]).norm();
            la.total_cmp(&lb).then(a.cmp(b))
        });
        edges.into_iter().any(|(a, b)| self.try_collapse(a, b))
    }
}

fn build_template() -> AnatomyMesh {
    let (pos, faces) = icosphere(SUBDIVISIONS);
    let mut c = Collapser::new(pos, faces);
    while c.alive_count() > PROTOTYPE_VERTICES {
        assert!(c.step(), "template simplification stalled");
    }
    let mut remap = vec![usize::MAX; c.pos.len()];
    let mut vertices = Vec::with_capacity(PROTOTYPE_VERTICES);
    for (old, &alive) in c.alive.iter().enumerate() {
        if alive {
            remap[old] = vertices.len();
            vertices.push(c.pos[old]);
        }
    }
    let faces: Vec<[usize; 3]> = c.faces.iter().flatten().map(|f| f.map(|i| remap[i])).collect();

    // Equalise edge lengths on the sphere: descent on sum_e (|e| - mean)^2.
    let edges = edges_of(&faces);
    for _ in 0..RELAX_ITERS {
        let lens: Vec<f64> = edges.iter().map(|&(a, b)| (vertices[a] - vertices[b]).norm()).collect();
        let mean = lens.iter().sum::<f64>() / lens.len() as f64;
        let mut grad = vec![Vector3::zeros(); vertices.len()];
        for (&(a, b), &len) in edges.iter().zip(&lens) {
            let g = (len - mean) / len * (vertices[a] - vertices[b]);
            grad[a] += g;
            grad[b] -= g;
        }
        let next: Vec<Vector3<f64>> = vertices
            .iter()
            .zip(&grad)
            .map(|(v, g)| (v - RELAX_STEP * g).normalize())
            .collect();
        let flipped = faces.iter().any(|f| {
            let centre = next[f[0]] + next[f[1]] + next[f[2]];
            face_normal(&next, f).dot(&centre) <= 0.0
        });
        if flipped {
            break;
        }
        vertices = next;
    }
    AnatomyMesh::new(vertices, faces, RegionRanges::default()).expect("template mesh is a valid genus-0 surface")
}

/// The shared template on the unit sphere, centred at the origin.
pub fn template() -> &'static AnatomyMesh {
    static TEMPLATE: OnceLock<AnatomyMesh> = OnceLock::new();
    TEMPLATE.get_or_init(build_template)
}
