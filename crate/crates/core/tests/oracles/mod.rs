//! Independent reference implementations used by the integration tests.
//! None of these call into the code they check beyond plain data access.

#![allow(dead_code)]

pub mod checks;

use std::collections::VecDeque;

use anatomesh::graphnet::{GlobalInput, GraphResNet};
use anatomesh::{Grid, Mask, Region};
use ndarray::{Array1, Array2};
use rand::seq::IndexedRandom;
use rand::Rng;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn neighbours6(dims: [usize; 3], i: usize) -> Vec<usize> {
    let (w, h, d) = (i % dims[0], (i / dims[0]) % dims[1], i / (dims[0] * dims[1]));
    let mut out = Vec::with_capacity(6);
    let coords = [
        (w.wrapping_sub(1), h, d),
        (w + 1, h, d),
        (w, h.wrapping_sub(1), d),
        (w, h + 1, d),
        (w, h, d.wrapping_sub(1)),
        (w, h, d + 1),
    ];
    for (a, b, c) in coords {
        if a < dims[0] && b < dims[1] && c < dims[2] {
            out.push(a + dims[0] * (b + dims[1] * c));
        }
    }
    out
}

/// Connected mask grown one random face-neighbour at a time.
pub fn random_connected_mask(rng: &mut impl Rng, dims: [usize; 3], voxels: usize) -> Mask {
    let grid = Grid::new(dims, [1.0; 3]).unwrap();
    let total = dims.iter().product::<usize>();
    let mut inside = vec![false; total];
    let start = rng.random_range(0..total);
    inside[start] = true;
    let mut members = vec![start];
    while members.len() < voxels.min(total) {
        let from = *members.choose(rng).unwrap();
        let nb = neighbours6(dims, from);
        let to = *nb.choose(rng).unwrap();
        if !inside[to] {
            inside[to] = true;
            members.push(to);
        }
    }
    Mask { grid, data: inside }
}

/// Zone of every organ voxel: the seed at the smallest 6-connected path
/// length inside the organ, lower seed index on ties; 0 outside.
pub fn bfs_zones(mask: &Mask, seeds: &[usize]) -> Vec<u16> {
    let dims = mask.grid.dims;
    let n = mask.data.len();
    let mut best = vec![(usize::MAX, 0u16); n];
    for (k, &s) in seeds.iter().enumerate() {
        let mut dist = vec![usize::MAX; n];
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for u in neighbours6(dims, v) {
                if mask.data[u] && dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        for i in 0..n {
            if dist[i] < best[i].0 {
                best[i] = (dist[i], k as u16 + 1);
            }
        }
    }
    best.into_iter().map(|(d, z)| if d == usize::MAX { 0 } else { z }).collect()
}

/// Connected random graph: a random spanning tree plus extra edges.
pub fn random_graph(rng: &mut impl Rng, nodes: usize) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for v in 1..nodes {
        edges.push((rng.random_range(0..v), v));
    }
    for _ in 0..rng.random_range(0..=nodes) {
        let a = rng.random_range(0..nodes);
        let b = rng.random_range(0..nodes);
        if a != b {
            edges.push((a, b));
        }
    }
    edges
}

pub fn dense_adjacency(nodes: usize, edges: &[(usize, usize)]) -> Array2<f64> {
    let mut a = Array2::zeros((nodes, nodes));
    for &(p, q) in edges {
        a[[p, q]] = 1.0;
        a[[q, p]] = 1.0;
    }
    a
}

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-scale..scale))
}

/// `H W0 + A H W1 + b` written as explicit sums.
pub fn dense_conv(h: &Array2<f64>, a: &Array2<f64>, w0: &Array2<f64>, w1: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    let (n, fin) = h.dim();
    let fout = w0.ncols();
    let mut out = Array2::zeros((n, fout));
    for p in 0..n {
        for o in 0..fout {
            let mut s = b[o];
            for i in 0..fin {
                s += h[[p, i]] * w0[[i, o]];
                for q in 0..n {
                    s += a[[p, q]] * h[[q, i]] * w1[[i, o]];
                }
            }
            out[[p, o]] = s;
        }
    }
    out
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

pub struct RefForward {
    /// Pre-activation of every layer.
    pub pre: Vec<Array2<f64>>,
    pub vertex_probs: Array2<f64>,
    pub global_probs: Array1<f64>,
}

/// Forward pass from the parameter tensors alone, with a dense adjacency.
pub fn reference_forward(net: &GraphResNet, feats: &Array2<f64>, a: &Array2<f64>) -> RefForward {
    let n = feats.nrows();
    let mut x = feats.clone();
    for p in 0..n {
        for j in 0..x.ncols() {
            x[[p, j]] = (x[[p, j]] - net.norm.mean[j]) * net.norm.scale[j];
        }
    }
    let mut acts = vec![x.clone()];
    let mut pre = Vec::new();
    let last = net.layers.len();
    for (i, layer) in net.layers.iter().enumerate() {
        let l = i + 1;
        let mut z = dense_conv(&acts[i], a, &layer.w0, &layer.w1, &layer.bias);
        if l % 2 == 0 && acts[l - 2].ncols() == z.ncols() {
            z += &acts[l - 2];
        }
        let h = if l == last { z.clone() } else { z.mapv(|v| if v > 0.0 { v } else { 0.0 }) };
        pre.push(z);
        acts.push(h);
    }
    let emb = acts.last().unwrap();
    let kv = net.vertex_head.bias.len();
    let mut vertex_probs = Array2::zeros((n, kv));
    for p in 0..n {
        let logits: Vec<f64> = (0..kv)
            .map(|k| net.vertex_head.bias[k] + (0..emb.ncols()).map(|j| emb[[p, j]] * net.vertex_head.w[[j, k]]).sum::<f64>())
            .collect();
        for (k, v) in softmax(&logits).into_iter().enumerate() {
            vertex_probs[[p, k]] = v;
        }
    }
    let source = match net.shape.global_input {
        GlobalInput::Final => emb,
        GlobalInput::Raw => &x,
    };
    let w = source.ncols();
    let mut g = Vec::new();
    for r in Region::ALL {
        let (s, e) = net.shape.regions.ranges[r as usize];
        for j in 0..w {
            g.push((s - 1..e).map(|p| source[[p, j]]).sum::<f64>() / (e - s + 1) as f64);
        }
    }
    for p in 0..n {
        for j in 0..w {
            g.push(source[[p, j]]);
        }
    }
    let kg = net.global_head.bias.len();
    let logits: Vec<f64> = (0..kg)
        .map(|k| net.global_head.bias[k] + g.iter().enumerate().map(|(i, v)| v * net.global_head.w[[i, k]]).sum::<f64>())
        .collect();
    RefForward {
        pre,
        vertex_probs,
        global_probs: Array1::from(softmax(&logits)),
    }
}

/// `eta1 * sum_p -ln p[y_p] + eta2 * -ln g[y]` without clamping.
pub fn reference_loss(rf: &RefForward, vertex: &[usize], global: usize, eta1: f64, eta2: f64) -> f64 {
    let lv: f64 = vertex.iter().enumerate().map(|(p, &k)| -rf.vertex_probs[[p, k]].ln()).sum();
    eta1 * lv + eta2 * -rf.global_probs[global].ln()
}
