//! Oracle comparisons shared by the integration tests and the acceptance
//! runner. Each returns a one-line summary on success and the first
//! disagreement on failure.

use anatomesh::graphnet::{
    backward, ce_loss, forward, graph_conv, Activation, ConvLayer, GlobalInput, GraphResNet, GraphTopology, InputNorm,
    NetShape, Targets,
};
use anatomesh::meshfit::{edge_terms, meshfit_loss, point_loss_fixed, FitConfig};
use anatomesh::template::template;
use anatomesh::zones::grow_zones;
use anatomesh::RegionRanges;
use nalgebra::Vector3;
use ndarray::{Array1, Array2};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    bfs_zones, dense_adjacency, dense_conv, random_connected_mask, random_graph, random_matrix, reference_forward,
    rel_err,
};

pub type Check = Result<String, String>;

pub fn jitter(rng: &mut impl Rng, scale: f64) -> Vector3<f64> {
    Vector3::new(
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
        rng.random_range(-scale..scale),
    )
}

/// Central differences, Richardson-extrapolated so that a step large
/// enough to beat roundoff on sums over hundreds of edges stays accurate.
fn central_difference(f: impl Fn(&[Vector3<f64>]) -> f64, x: &[Vector3<f64>], h: f64) -> Vec<Vector3<f64>> {
    let mut y = x.to_vec();
    let mut out = vec![Vector3::zeros(); x.len()];
    for i in 0..x.len() {
        for c in 0..3 {
            let orig = y[i][c];
            let mut diff = |step: f64| {
                y[i][c] = orig + step;
                let up = f(&y);
                y[i][c] = orig - step;
                let down = f(&y);
                y[i][c] = orig;
                up - down
            };
            // fourth-order combination of two central differences
            out[i][c] = (8.0 * diff(h) - diff(2.0 * h)) / (12.0 * h);
        }
    }
    out
}

/// Largest relative error, or the first entry above `tol`.
fn compare(analytic: &[Vector3<f64>], numeric: &[Vector3<f64>], tol: f64, what: &str) -> Result<f64, String> {
    let mut worst: f64 = 0.0;
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        for c in 0..3 {
            let e = rel_err(a[c], n[c]);
            if e > tol {
                return Err(format!("{what} vertex {i} axis {c}: {} vs {} (rel {e:.2e})", a[c], n[c]));
            }
            worst = worst.max(e);
        }
    }
    Ok(worst)
}

/// Point loss, both edge regularizers and their weighted sum against
/// finite differences on scaled, jittered templates.
pub fn mesh_gradients(instances: usize, tol: f64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let t = template();
    let cfg = FitConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..instances {
        let scale = rng.random_range(3.0..12.0);
        let x: Vec<Vector3<f64>> = t.vertices.iter().map(|v| v * scale + jitter(&mut rng, 0.5)).collect();
        let q: Vec<Vector3<f64>> = x.iter().map(|v| v + jitter(&mut rng, 2.0)).collect();

        let (_, g) = point_loss_fixed(&x, &q);
        let num = central_difference(|y| point_loss_fixed(y, &q).0, &x, 1e-3);
        worst = worst.max(compare(&g, &num, tol, "point loss")?);

        let terms = edge_terms(&x, t.edges()).map_err(|e| e.to_string())?;
        let num1 = central_difference(|y| edge_terms(y, t.edges()).unwrap().e1, &x, 1e-3);
        let num2 = central_difference(|y| edge_terms(y, t.edges()).unwrap().e2, &x, 1e-3);
        worst = worst.max(compare(&terms.grad1, &num1, tol, "edge variance")?);
        worst = worst.max(compare(&terms.grad2, &num2, tol, "edge length")?);

        let (_, g) = meshfit_loss(&x, t.edges(), &q, &cfg).map_err(|e| e.to_string())?;
        let num = central_difference(|y| meshfit_loss(y, t.edges(), &q, &cfg).unwrap().0.total, &x, 1e-3);
        worst = worst.max(compare(&g, &num, tol, "total loss")?);
    }
    Ok(format!("{instances} meshes, max rel err {worst:.1e}"))
}

/// `grow_zones` against per-seed BFS on random connected masks.
pub fn zones_vs_bfs(masks: usize) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut voxels_checked = 0;
    for m in 0..masks {
        let dims = [rng.random_range(6..=32), rng.random_range(6..=32), rng.random_range(6..=32)];
        let total = dims.iter().product::<usize>();
        let size = rng.random_range(40..=(total / 3).clamp(41, 3000));
        let mask = random_connected_mask(&mut rng, dims, size);
        let voxels: Vec<usize> = mask.indices().collect();
        let k = rng.random_range(4..=16);
        let seeds: Vec<usize> = sample(&mut rng, voxels.len(), k).into_iter().map(|i| voxels[i]).collect();
        let positions: Vec<Vector3<f64>> = seeds.iter().map(|&s| mask.grid.world(s)).collect();
        let zmap = grow_zones(&mask, &seeds, &positions).map_err(|e| format!("mask {m}: {e}"))?;
        let want = bfs_zones(&mask, &seeds);
        if let Some(i) = (0..want.len()).find(|&i| zmap.data[i] != want[i]) {
            return Err(format!("mask {m} voxel {i}: zone {} vs oracle {}", zmap.data[i], want[i]));
        }
        let sizes = zmap.zone_sizes(k);
        if sizes.iter().sum::<usize>() != mask.count() || sizes.contains(&0) {
            return Err(format!("mask {m}: zones {sizes:?} do not partition {} voxels", mask.count()));
        }
        voxels_checked += mask.count();
    }
    Ok(format!("{masks} masks, {voxels_checked} organ voxels, 100% agreement"))
}

/// `graph_conv`, with and without ReLU, against `H W0 + A H W1 + b`.
pub fn conv_vs_dense(graphs: usize, tol: f64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for g in 0..graphs {
        let nodes = rng.random_range(1..=20);
        let edges = if nodes > 1 { random_graph(&mut rng, nodes) } else { vec![] };
        let topo = GraphTopology::new(nodes, &edges).map_err(|e| e.to_string())?;
        let a = dense_adjacency(nodes, &edges);
        let (fin, fout) = (rng.random_range(1..6), rng.random_range(1..6));
        let h = random_matrix(&mut rng, nodes, fin, 2.0);
        let layer = ConvLayer {
            w0: random_matrix(&mut rng, fin, fout, 1.0),
            w1: random_matrix(&mut rng, fin, fout, 1.0),
            bias: Array1::from_shape_simple_fn(fout, || rng.random_range(-1.0..1.0)),
        };
        let want = dense_conv(&h, &a, &layer.w0, &layer.w1, &layer.bias);
        let got = graph_conv(&h, &layer, &topo, Activation::Identity).map_err(|e| e.to_string())?;
        let relu = graph_conv(&h, &layer, &topo, Activation::Relu).map_err(|e| e.to_string())?;
        for ((x, r), w) in got.iter().zip(&relu).zip(&want) {
            let e = (x - w).abs().max((r - w.max(0.0)).abs());
            if e > tol {
                return Err(format!("graph {g} ({nodes} nodes): {x} vs dense {w}"));
            }
            worst = worst.max(e);
        }
    }
    Ok(format!("{graphs} graphs, max abs err {worst:.1e}"))
}

pub struct Instance {
    pub net: GraphResNet,
    pub topo: GraphTopology,
    pub adj: Array2<f64>,
    pub feats: Array2<f64>,
    pub targets: Targets,
}

/// A small six-layer net with random biases and input normalization, so
/// every parameter participates in the output.
pub fn random_instance(rng: &mut ChaCha8Rng, nodes: usize, global_input: GlobalInput) -> Instance {
    let edges = random_graph(rng, nodes);
    let topo = GraphTopology::new(nodes, &edges).unwrap();
    let adj = dense_adjacency(nodes, &edges);
    let counts = [3, 3, 2, nodes - 8];
    let shape = NetShape {
        input_width: 5,
        hidden: 8,
        layers: 6,
        k_vertex: 3,
        k_global: 3,
        nodes,
        regions: RegionRanges::from_counts(counts).unwrap(),
        global_input,
    };
    let mut net = GraphResNet::init(shape, rng.random()).unwrap();
    for l in &mut net.layers {
        l.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    }
    net.vertex_head.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    net.global_head.bias.mapv_inplace(|_| rng.random_range(-0.3..0.3));
    net.norm = InputNorm {
        mean: Array1::from_shape_simple_fn(5, || rng.random_range(-0.5..0.5)),
        scale: Array1::from_shape_simple_fn(5, || rng.random_range(0.5..2.0)),
    };
    let feats = random_matrix(rng, nodes, 5, 1.0);
    let targets = Targets {
        vertex: (0..nodes).map(|_| rng.random_range(0..3)).collect(),
        global: rng.random_range(0..3),
    };
    Instance { net, topo, adj, feats, targets }
}

/// Full forward pass against the dense reference, alternating both
/// global-head inputs.
pub fn forward_vs_reference(nets: usize, tol: f64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for i in 0..nets {
        let gi = if i % 2 == 0 { GlobalInput::Final } else { GlobalInput::Raw };
        let nodes = rng.random_range(10..=20);
        let inst = random_instance(&mut rng, nodes, gi);
        let f = forward(&inst.net, &inst.feats, &inst.topo).map_err(|e| e.to_string())?;
        let r = reference_forward(&inst.net, &inst.feats, &inst.adj);
        let pairs = f.vertex_probs.iter().zip(&r.vertex_probs).chain(f.global_probs.iter().zip(&r.global_probs));
        for (a, b) in pairs {
            let e = (a - b).abs();
            if e > tol {
                return Err(format!("net {i}: {a} vs reference {b}"));
            }
            worst = worst.max(e);
        }
    }
    Ok(format!("{nets} nets, max abs err {worst:.1e}"))
}

fn near_kink(inst: &Instance) -> bool {
    let r = reference_forward(&inst.net, &inst.feats, &inst.adj);
    let last = r.pre.len() - 1;
    r.pre[..last].iter().any(|z| z.iter().any(|v| v.abs() < 1e-3))
}

/// Every parameter gradient against central differences of the loss.
/// Instances with a pre-activation within 1e-3 of a ReLU kink are redrawn,
/// since the loss is not differentiable there at the step used.
pub fn backward_vs_fd(instances: usize, tol: f64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (eta1, eta2) = (0.1, 0.1);
    let h = 1e-4;
    let mut checked = 0;
    let mut attempts = 0;
    let mut params = 0;
    let mut worst: f64 = 0.0;
    while checked < instances {
        attempts += 1;
        if attempts >= 2000 {
            return Err("could not draw instances away from ReLU kinks".into());
        }
        let gi = if checked % 2 == 0 { GlobalInput::Final } else { GlobalInput::Raw };
        let inst = random_instance(&mut rng, 10, gi);
        if near_kink(&inst) {
            continue;
        }
        let (_, grad) =
            backward(&inst.net, &inst.feats, &inst.topo, &inst.targets, eta1, eta2).map_err(|e| e.to_string())?;
        let loss_at = |net: &GraphResNet| {
            let f = forward(net, &inst.feats, &inst.topo).unwrap();
            ce_loss(&f.vertex_probs, &f.global_probs, &inst.targets, eta1, eta2).unwrap()
        };
        let grads: Vec<(String, Vec<f64>)> = grad.tensors().into_iter().map(|(n, t)| (n, t.to_vec())).collect();
        let mut net = inst.net.clone();
        for (t, (name, g)) in grads.iter().enumerate() {
            for (i, &analytic) in g.iter().enumerate() {
                let orig = net.tensors()[t].1[i];
                net.tensors_mut()[t].1[i] = orig + h;
                let up = loss_at(&net);
                net.tensors_mut()[t].1[i] = orig - h;
                let down = loss_at(&net);
                net.tensors_mut()[t].1[i] = orig;
                let numeric = (up - down) / (2.0 * h);
                let e = rel_err(analytic, numeric);
                if e > tol {
                    return Err(format!("{name}[{i}]: analytic {analytic} numeric {numeric} (rel {e:.2e})"));
                }
                worst = worst.max(e);
                params += 1;
            }
        }
        checked += 1;
    }
    Ok(format!("{instances} nets, {params} parameters, max rel err {worst:.1e}"))
}
