mod oracles;

use anatomesh::graphnet::{forward, GlobalInput, GraphTopology};
use ndarray::Array2;
use oracles::checks::{self, random_instance};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn graph_conv_matches_dense_formulation() {
    checks::conv_vs_dense(100, 1e-6).unwrap();
}

#[test]
fn forward_matches_reference_implementation() {
    checks::forward_vs_reference(20, 1e-6).unwrap();
}

#[test]
fn backward_matches_finite_differences() {
    checks::backward_vs_fd(20, 1e-4).unwrap();
}

#[test]
fn within_region_permutation_keeps_region_pooling() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let inst = random_instance(&mut rng, 16, GlobalInput::Final);
    let regions = inst.net.shape.regions;
    let mut order: Vec<usize> = Vec::new();
    for (s, e) in regions.ranges {
        let mut block: Vec<usize> = (s - 1..e).collect();
        block.shuffle(&mut rng);
        order.extend(block);
    }
    // new vertex `i` is old vertex `order[i]`
    let mut inverse = vec![0; order.len()];
    for (new, &old) in order.iter().enumerate() {
        inverse[old] = new;
    }
    let mut edges = Vec::new();
    for p in 0..16 {
        for &q in inst.topo.neighbors(p) {
            if p < q {
                edges.push((inverse[p], inverse[q]));
            }
        }
    }
    let topo = GraphTopology::new(16, &edges).unwrap();
    let feats = Array2::from_shape_fn((16, 5), |(i, j)| inst.feats[[order[i], j]]);
    let a = forward(&inst.net, &inst.feats, &inst.topo).unwrap();
    let b = forward(&inst.net, &feats, &topo).unwrap();
    for (i, &old) in order.iter().enumerate() {
        for k in 0..3 {
            assert!((b.vertex_probs[[i, k]] - a.vertex_probs[[old, k]]).abs() < 1e-12);
        }
    }
    let (pa, pb) = (a.region_pooled(8), b.region_pooled(8));
    for (x, y) in pa.iter().zip(&pb) {
        assert!((x - y).abs() < 1e-12);
    }
}
