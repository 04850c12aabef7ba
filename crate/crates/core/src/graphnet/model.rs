use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::GraphTopology;
use crate::error::{Error, Result};
use crate::mesh::{Region, RegionRanges, PROTOTYPE_VERTICES};

/// Probabilities inside the cross-entropy are clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub const PROB_CLAMP: f64 = 1e-7;

/// Which per-vertex vectors feed the global head next to the region means.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GlobalInput {
    /// Output of the last graph convolution.
    #[default]
    Final,
    /// The (standardised) input features.
    Raw,
}

impl GlobalInput {
    pub fn name(self) -> &'static str {
        match self {
            GlobalInput::Final => "final",
            GlobalInput::Raw => "raw",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "final" => Some(GlobalInput::Final),
            "raw" => Some(GlobalInput::Raw),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub input_width: usize,
    pub hidden: usize,
    pub layers: usize,
    pub k_vertex: usize,
    pub k_global: usize,
    pub nodes: usize,
    pub regions: RegionRanges,
    pub global_input: GlobalInput,
}

impl NetShape {
    /// Six layers of width 64 over the 156-vertex template.
    pub fn new(input_width: usize, k_vertex: usize, k_global: usize) -> Self {
        Self {
            input_width,
            hidden: 64,
            layers: 6,
            k_vertex,
            k_global,
            nodes: PROTOTYPE_VERTICES,
            regions: RegionRanges::default(),
            global_input: GlobalInput::Final,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_width", self.input_width),
            ("hidden", self.hidden),
            ("layers", self.layers),
            ("k_vertex", self.k_vertex),
            ("k_global", self.k_global),
            ("nodes", self.nodes),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("network {name} must be positive")));
        }
        if self.regions.total() != self.nodes {
            return Err(Error::InvalidArgument(format!(
                "region ranges cover {} vertices, network has {}",
                self.regions.total(),
                self.nodes
            )));
        }
        Ok(())
    }

    /// Feature width entering layer `l` (1-based) is `widths()[l - 1]`; the
    /// last entry is the embedding width.
    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width];
        w.extend(std::iter::repeat_n(self.hidden, self.layers));
        w
    }

    pub fn embedding_width(&self) -> usize {
        match self.global_input {
            GlobalInput::Final => self.hidden,
            GlobalInput::Raw => self.input_width,
        }
    }

    pub fn global_width(&self) -> usize {
        (Region::ALL.len() + self.nodes) * self.embedding_width()
    }

    /// Index into the activation list (0 = input) added to the
    /// pre-activation of layer `l`: layer `2k` receives the input of layer
    /// `2k - 1` when the widths agree.
    pub fn shortcut(&self, l: usize) -> Option<usize> {
        let w = self.widths();
        (l.is_multiple_of(2) && w[l - 2] == w[l]).then(|| l - 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `width_in × width_out`.
    pub w0: Array2<f64>,
    /// `width_in × width_out`, shared by all edges.
    pub w1: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Per-column affine standardisation `(x - mean) * scale` applied to the
/// input features. Not trained.
#[derive(Debug, Clone, PartialEq)]
pub struct InputNorm {
    pub mean: Array1<f64>,
    pub scale: Array1<f64>,
}

impl InputNorm {
    pub fn identity(width: usize) -> Self {
        Self {
            mean: Array1::zeros(width),
            scale: Array1::ones(width),
        }
    }

    /// Column statistics over every row of every matrix. Columns with
    /// (near) zero spread keep unit scale.
    pub fn fit(feats: &[&Array2<f64>]) -> Result<Self> {
        let width = feats.first().ok_or(Error::Empty("feature set"))?.ncols();
        let mut sum = Array1::<f64>::zeros(width);
        let mut rows = 0usize;
        for f in feats {
            if f.ncols() != width {
                return Err(Error::WidthMismatch { expected: width, found: f.ncols() });
            }
            sum += &f.sum_axis(Axis(0));
            rows += f.nrows();
        }
        let mean = sum / rows as f64;
        let mut var = Array1::<f64>::zeros(width);
        for f in feats {
            for row in f.rows() {
                var.zip_mut_with(&(&row - &mean), |v, d| *v += d * d);
            }
        }
        let scale = var.mapv(|v| {
            let sd = (v / rows as f64).sqrt();
            if sd > 1e-8 {
                1.0 / sd
            } else {
                1.0
            }
        });
        Ok(Self { mean, scale })
    }

    pub fn apply(&self, feats: &Array2<f64>) -> Array2<f64> {
        (feats - &self.mean) * &self.scale
    }
}

/// Network parameters. The same type holds gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphResNet {
    pub shape: NetShape,
    pub seed: u64,
    pub norm: InputNorm,
    pub layers: Vec<ConvLayer>,
    pub vertex_head: Dense,
    pub global_head: Dense,
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: f64) -> Array2<f64> {
    let limit = (6.0 / (fan_in + cols as f64)).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..=limit))
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    uniform(rng, rows, cols, rows as f64)
}

/// Mean vertex degree of a closed triangulated sphere, `2E/V = 6 - 12/V`.
fn sphere_mean_degree(nodes: usize) -> f64 {
    (6.0 - 12.0 / nodes as f64).max(0.0)
}

impl GraphResNet {
    pub fn zeros(shape: NetShape) -> Result<Self> {
        shape.validate()?;
        let w = shape.widths();
        let layers = w
            .windows(2)
            .map(|io| ConvLayer {
                w0: Array2::zeros((io[0], io[1])),
                w1: Array2::zeros((io[0], io[1])),
                bias: Array1::zeros(io[1]),
            })
            .collect();
        Ok(Self {
            norm: InputNorm::identity(shape.input_width),
            vertex_head: Dense {
                w: Array2::zeros((shape.hidden, shape.k_vertex)),
                bias: Array1::zeros(shape.k_vertex),
            },
            global_head: Dense {
                w: Array2::zeros((shape.global_width(), shape.k_global)),
                bias: Array1::zeros(shape.k_global),
            },
            layers,
            seed: 0,
            shape,
        })
    }

    /// Uniform Glorot initialisation of every weight matrix in tensor
    /// order; biases start at zero. `W1` multiplies a sum over `d`
    /// neighbours of non-negative activations, whose second moment grows
    /// like `d^2`, so its fan-in is counted as `d^2` input rows.
    pub fn init(shape: NetShape, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(shape)?;
        net.seed = seed;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = sphere_mean_degree(net.shape.nodes);
        let rows_in = (d * d).max(1.0);
        for layer in &mut net.layers {
            let (r, c) = layer.w0.dim();
            layer.w0 = xavier(&mut rng, r, c);
            layer.w1 = uniform(&mut rng, r, c, r as f64 * rows_in);
        }
        let (r, c) = net.vertex_head.w.dim();
        net.vertex_head.w = xavier(&mut rng, r, c);
        let (r, c) = net.global_head.w.dim();
        net.global_head.w = xavier(&mut rng, r, c);
        Ok(net)
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.shape.clone()).expect("shape already validated");
        z.seed = self.seed;
        z.norm = self.norm.clone();
        z
    }

    /// Trainable tensors in checkpoint order, with their parameter paths.
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 4);
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{}.w0", i + 1), l.w0.as_slice().expect("standard layout")));
            out.push((format!("layer{}.w1", i + 1), l.w1.as_slice().expect("standard layout")));
            out.push((format!("layer{}.bias", i + 1), l.bias.as_slice().expect("standard layout")));
        }
        out.push(("vertex_head.w".into(), self.vertex_head.w.as_slice().expect("standard layout")));
        out.push(("vertex_head.bias".into(), self.vertex_head.bias.as_slice().expect("standard layout")));
        out.push(("global_head.w".into(), self.global_head.w.as_slice().expect("standard layout")));
        out.push(("global_head.bias".into(), self.global_head.bias.as_slice().expect("standard layout")));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::with_capacity(3 * self.layers.len() + 4);
        for (i, l) in self.layers.iter_mut().enumerate() {
            out.push((format!("layer{}.w0", i + 1), l.w0.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{}.w1", i + 1), l.w1.as_slice_mut().expect("standard layout")));
            out.push((format!("layer{}.bias", i + 1), l.bias.as_slice_mut().expect("standard layout")));
        }
        out.push(("vertex_head.w".into(), self.vertex_head.w.as_slice_mut().expect("standard layout")));
        out.push(("vertex_head.bias".into(), self.vertex_head.bias.as_slice_mut().expect("standard layout")));
        out.push(("global_head.w".into(), self.global_head.w.as_slice_mut().expect("standard layout")));
        out.push(("global_head.bias".into(), self.global_head.bias.as_slice_mut().expect("standard layout")));
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// First non-finite entry, by parameter path.
    pub fn check_finite(&self) -> Result<()> {
        for (name, t) in self.tensors() {
            if let Some(i) = t.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("{name}[{i}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

fn check_conv(h: &Array2<f64>, layer: &ConvLayer, topo: &GraphTopology) -> Result<()> {
    if h.ncols() != layer.w0.nrows() {
        return Err(Error::WidthMismatch { expected: layer.w0.nrows(), found: h.ncols() });
    }
    if layer.w1.dim() != layer.w0.dim() || layer.bias.len() != layer.w0.ncols() {
        return Err(Error::InvalidArgument("inconsistent graph-conv parameter shapes".into()));
    }
    if h.nrows() != topo.node_count() {
        return Err(Error::InvalidArgument(format!(
            "{} feature rows for {} graph nodes",
            h.nrows(),
            topo.node_count()
        )));
    }
    Ok(())
}

fn conv_linear(h: &Array2<f64>, agg: &Array2<f64>, layer: &ConvLayer) -> Array2<f64> {
    h.dot(&layer.w0) + agg.dot(&layer.w1) + &layer.bias
}

/// One graph convolution: `H W0 + (A H) W1 + b`, then `act`.
pub fn graph_conv(h: &Array2<f64>, layer: &ConvLayer, topo: &GraphTopology, act: Activation) -> Result<Array2<f64>> {
    check_conv(h, layer, topo)?;
    let mut z = conv_linear(h, &topo.aggregate(h), layer);
    if act == Activation::Relu {
        z.mapv_inplace(|v| v.max(0.0));
    }
    Ok(z)
}

fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        s += *v;
    }
    for v in row.iter_mut() {
        *v /= s;
    }
}

/// Forward activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    /// Standardised input features.
    pub input: Array2<f64>,
    /// Post-activation output of each layer; the last entry is the final
    /// vertex embedding.
    pub hidden: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    agg: Vec<Array2<f64>>,
    /// Region means followed by every vertex vector, flattened.
    pub global_features: Array1<f64>,
    pub vertex_probs: Array2<f64>,
    pub global_probs: Array1<f64>,
}

impl Forward {
    pub fn embeddings(&self) -> &Array2<f64> {
        self.hidden.last().expect("at least one layer")
    }

    /// Region-pooled block of the global-head input, one row per region.
    pub fn region_pooled(&self, width: usize) -> Array2<f64> {
        let n = Region::ALL.len();
        Array2::from_shape_vec((n, width), self.global_features.as_slice().expect("contiguous")[..n * width].to_vec())
            .expect("region block shape")
    }

    fn activation(&self, i: usize) -> &Array2<f64> {
        if i == 0 {
            &self.input
        } else {
            &self.hidden[i - 1]
        }
    }
}

fn check_finite(a: &Array2<f64>, what: impl FnOnce() -> String) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what()))
    }
}

pub fn forward(net: &GraphResNet, feats: &Array2<f64>, topo: &GraphTopology) -> Result<Forward> {
    let shape = &net.shape;
    if feats.ncols() != shape.input_width {
        return Err(Error::WidthMismatch { expected: shape.input_width, found: feats.ncols() });
    }
    if feats.nrows() != shape.nodes || topo.node_count() != shape.nodes {
        return Err(Error::InvalidArgument(format!(
            "network expects {} nodes, got {} feature rows and {} graph nodes",
            shape.nodes,
            feats.nrows(),
            topo.node_count()
        )));
    }
    let input = net.norm.apply(feats);
    check_finite(&input, || "input features".into())?;

    let n_layers = net.layers.len();
    let mut fwd = Forward {
        input,
        hidden: Vec::with_capacity(n_layers),
        pre: Vec::with_capacity(n_layers),
        agg: Vec::with_capacity(n_layers),
        global_features: Array1::zeros(0),
        vertex_probs: Array2::zeros((0, 0)),
        global_probs: Array1::zeros(0),
    };
    for (i, layer) in net.layers.iter().enumerate() {
        let l = i + 1;
        let h = fwd.activation(i);
        check_conv(h, layer, topo)?;
        let agg = topo.aggregate(h);
        let mut z = conv_linear(h, &agg, layer);
        if let Some(src) = shape.shortcut(l) {
            z += fwd.activation(src);
        }
        let out = if l < n_layers { z.mapv(|v| v.max(0.0)) } else { z.clone() };
        check_finite(&out, || format!("layer {l} activations"))?;
        fwd.agg.push(agg);
        fwd.pre.push(z);
        fwd.hidden.push(out);
    }

    let mut vertex = fwd.embeddings().dot(&net.vertex_head.w) + &net.vertex_head.bias;
    for mut row in vertex.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("row-major"));
    }

    let source = match shape.global_input {
        GlobalInput::Final => fwd.embeddings(),
        GlobalInput::Raw => &fwd.input,
    };
    let w = source.ncols();
    let mut x = Vec::with_capacity(shape.global_width());
    for r in Region::ALL {
        let range = shape.regions.zero_based(r);
        let count = range.len() as f64;
        let mean = source.slice(ndarray::s![range, ..]).sum_axis(Axis(0)) / count;
        x.extend(mean.iter());
    }
    x.extend(source.iter());
    debug_assert_eq!(x.len(), (Region::ALL.len() + shape.nodes) * w);
    let x = Array1::from(x);
    let mut global = x.dot(&net.global_head.w) + &net.global_head.bias;
    softmax_in_place(global.as_slice_mut().expect("contiguous"));
    check_finite(&vertex, || "vertex probabilities".into())?;
    if !global.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("global probabilities".into()));
    }
    fwd.global_features = x;
    fwd.vertex_probs = vertex;
    fwd.global_probs = global;
    Ok(fwd)
}

/// Zero-based class targets for one case.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Targets {
    pub vertex: Vec<usize>,
    pub global: usize,
}

/// Class index of each one-hot row.
pub fn from_one_hot(rows: ArrayView2<f64>) -> Result<Vec<usize>> {
    rows.rows()
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let ones: Vec<usize> = r.iter().enumerate().filter(|(_, &v)| v == 1.0).map(|(k, _)| k).collect();
            let zeros = r.iter().filter(|&&v| v == 0.0).count();
            if ones.len() == 1 && zeros + 1 == r.len() {
                Ok(ones[0])
            } else {
                Err(Error::NotOneHot(format!("row {i}")))
            }
        })
        .collect()
}

fn neg_log(p: f64) -> f64 {
    -p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP).ln()
}

fn check_targets(vertex_probs: &Array2<f64>, global_probs: &Array1<f64>, t: &Targets) -> Result<()> {
    if t.vertex.len() != vertex_probs.nrows() {
        return Err(Error::InvalidArgument(format!(
            "{} vertex targets for {} vertices",
            t.vertex.len(),
            vertex_probs.nrows()
        )));
    }
    if let Some(&k) = t.vertex.iter().find(|&&k| k >= vertex_probs.ncols()) {
        return Err(Error::InvalidArgument(format!("vertex target {k} out of range")));
    }
    if t.global >= global_probs.len() {
        return Err(Error::InvalidArgument(format!("global target {} out of range", t.global)));
    }
    Ok(())
}

/// `eta1 * sum_p CE(vertex p) + eta2 * CE(global)` with class-index targets.
pub fn ce_loss(vertex_probs: &Array2<f64>, global_probs: &Array1<f64>, t: &Targets, eta1: f64, eta2: f64) -> Result<f64> {
    check_targets(vertex_probs, global_probs, t)?;
    let lv: f64 = t.vertex.iter().enumerate().map(|(p, &k)| neg_log(vertex_probs[[p, k]])).sum();
    Ok(eta1 * lv + eta2 * neg_log(global_probs[t.global]))
}

/// [`ce_loss`] with one-hot targets.
pub fn loss(
    vertex_probs: &Array2<f64>,
    global_probs: &Array1<f64>,
    vertex_targets: &Array2<f64>,
    global_target: &Array1<f64>,
    eta1: f64,
    eta2: f64,
) -> Result<f64> {
    if vertex_targets.dim() != vertex_probs.dim() || global_target.len() != global_probs.len() {
        return Err(Error::InvalidArgument("target shapes do not match predictions".into()));
    }
    let vertex = from_one_hot(vertex_targets.view())?;
    let global = from_one_hot(global_target.view().insert_axis(Axis(0)))?[0];
    ce_loss(vertex_probs, global_probs, &Targets { vertex, global }, eta1, eta2)
}

/// Products of transposed views may come back column-major; tensors are
/// kept row-major so they can be viewed as flat slices.
fn standard(a: Array2<f64>) -> Array2<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Loss and its gradient with respect to every trainable tensor.
pub fn backward(
    net: &GraphResNet,
    feats: &Array2<f64>,
    topo: &GraphTopology,
    targets: &Targets,
    eta1: f64,
    eta2: f64,
) -> Result<(f64, GraphResNet)> {
    let fwd = forward(net, feats, topo)?;
    let value = ce_loss(&fwd.vertex_probs, &fwd.global_probs, targets, eta1, eta2)?;
    let shape = &net.shape;
    let n = shape.nodes;
    let n_layers = net.layers.len();
    let mut grad = net.zeros_like();

    // d(-ln softmax_y)/dz = p - onehot(y). Where the clamp is active the
    // clamped loss is flat; the unclamped gradient is used there so that a
    // saturated wrong prediction can still recover.
    let mut dzv = Array2::<f64>::zeros(fwd.vertex_probs.raw_dim());
    if eta1 != 0.0 {
        for (p, &y) in targets.vertex.iter().enumerate() {
            let mut row = dzv.row_mut(p);
            row.assign(&fwd.vertex_probs.row(p));
            row[y] -= 1.0;
            row *= eta1;
        }
    }
    let mut dzg = Array1::<f64>::zeros(shape.k_global);
    if eta2 != 0.0 {
        dzg.assign(&fwd.global_probs);
        dzg[targets.global] -= 1.0;
        dzg *= eta2;
    }

    let emb = fwd.embeddings();
    grad.vertex_head.w = standard(emb.t().dot(&dzv));
    grad.vertex_head.bias = dzv.sum_axis(Axis(0));
    grad.global_head.w = standard(
        fwd.global_features
            .view()
            .insert_axis(Axis(1))
            .dot(&dzg.view().insert_axis(Axis(0))),
    );
    grad.global_head.bias = dzg.clone();

    let widths = shape.widths();
    let mut dh: Vec<Array2<f64>> = widths.iter().map(|&w| Array2::zeros((n, w))).collect();
    dh[n_layers] += &dzv.dot(&net.vertex_head.w.t());
    if shape.global_input == GlobalInput::Final {
        let dx = net.global_head.w.dot(&dzg);
        let w = shape.hidden;
        let d_last = &mut dh[n_layers];
        for (r, region) in Region::ALL.into_iter().enumerate() {
            let range = shape.regions.zero_based(region);
            let share = dx.slice(ndarray::s![r * w..(r + 1) * w]).to_owned() / range.len() as f64;
            for p in range {
                let mut row = d_last.row_mut(p);
                row += &share;
            }
        }
        let offset = Region::ALL.len() * w;
        for p in 0..n {
            let mut row = d_last.row_mut(p);
            row += &dx.slice(ndarray::s![offset + p * w..offset + (p + 1) * w]);
        }
    }

    for l in (1..=n_layers).rev() {
        let layer = &net.layers[l - 1];
        let mut dz = std::mem::replace(&mut dh[l], Array2::zeros((0, 0)));
        if l < n_layers {
            dz.zip_mut_with(&fwd.pre[l - 1], |d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
        }
        let g = &mut grad.layers[l - 1];
        g.w0 = standard(fwd.activation(l - 1).t().dot(&dz));
        g.w1 = standard(fwd.agg[l - 1].t().dot(&dz));
        g.bias = dz.sum_axis(Axis(0));
        if l > 1 {
            // A is symmetric, so d(A H W1)/dH = A (dZ W1^T)
            let back = dz.dot(&layer.w0.t()) + topo.aggregate(&dz.dot(&layer.w1.t()));
            dh[l - 1] += &back;
        }
        if let Some(src) = shape.shortcut(l) {
            if src > 0 {
                dh[src] += &dz;
            }
        }
    }
    grad.check_finite()?;
    Ok((value, grad))
}
