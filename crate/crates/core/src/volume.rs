//! Voxel grids: label and probability volumes, binary masks, the on-disk
//! codec, surface extraction and overlap metrics.
//!
//! Voxels are stored w-fastest: `index = w + W * (h + H * d)`. World
//! coordinates are `index * spacing` in millimetres with no origin offset.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::Vector3;

use crate::error::{Error, Result};

/// Tolerance on the per-voxel channel sum of a probability volume.
pub const PROB_SUM_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelCoord {
    pub w: usize,
    pub h: usize,
    pub d: usize,
}

impl VoxelCoord {
    pub fn new(w: usize, h: usize, d: usize) -> Self {
        Self { w, h, d }
    }

    pub fn world(&self, spacing: [f64; 3]) -> Vector3<f64> {
        Vector3::new(
            self.w as f64 * spacing[0],
            self.h as f64 * spacing[1],
            self.d as f64 * spacing[2],
        )
    }
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidArgument(format!("zero grid extent {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidArgument(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        Ok(Self { dims, spacing })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, c: VoxelCoord) -> usize {
        c.w + self.dims[0] * (c.h + self.dims[1] * c.d)
    }

    #[inline]
    pub fn coord(&self, index: usize) -> VoxelCoord {
        let w = index % self.dims[0];
        let rest = index / self.dims[0];
        VoxelCoord {
            w,
            h: rest % self.dims[1],
            d: rest / self.dims[1],
        }
    }

    #[inline]
    pub fn world(&self, index: usize) -> Vector3<f64> {
        self.coord(index).world(self.spacing)
    }

    /// Calls `f` for every in-grid face neighbour of `index`; returns how
    /// many of the six neighbours fell outside the grid.
    #[inline]
    pub fn for_each_neighbor6(&self, index: usize, mut f: impl FnMut(usize)) -> usize {
        let c = self.coord(index);
        let [nw, nh, nd] = self.dims;
        let plane = nw * nh;
        let mut outside = 0;
        if c.w > 0 { f(index - 1) } else { outside += 1 }
        if c.w + 1 < nw { f(index + 1) } else { outside += 1 }
        if c.h > 0 { f(index - nw) } else { outside += 1 }
        if c.h + 1 < nh { f(index + nw) } else { outside += 1 }
        if c.d > 0 { f(index - plane) } else { outside += 1 }
        if c.d + 1 < nd { f(index + plane) } else { outside += 1 }
        outside
    }

    /// Geometric mean of the spacing, used to express world distances in
    /// voxel units on anisotropic grids.
    pub fn voxel_unit(&self) -> f64 {
        (self.spacing[0] * self.spacing[1] * self.spacing[2]).cbrt()
    }

    pub fn check_same_dims(&self, other: &Grid) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::DimMismatch(self.dims, other.dims));
        }
        Ok(())
    }
}

/// Integer class labels, one per voxel: 0 background, 1 organ, >= 2 masses.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    pub grid: Grid,
    pub data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(grid: Grid, data: Vec<u8>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::PayloadLength {
                expected: grid.len(),
                found: data.len(),
            });
        }
        Ok(Self { grid, data })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self {
            data: vec![0; grid.len()],
            grid,
        }
    }

    pub fn get(&self, c: VoxelCoord) -> u8 {
        self.data[self.grid.index(c)]
    }

    pub fn mask_where(&self, pred: impl Fn(u8) -> bool) -> Mask {
        Mask {
            grid: self.grid,
            data: self.data.iter().map(|&l| pred(l)).collect(),
        }
    }

    pub fn mask_eq(&self, label: u8) -> Mask {
        self.mask_where(|l| l == label)
    }

    /// All non-background voxels: the organ together with any mass.
    pub fn foreground(&self) -> Mask {
        self.mask_where(|l| l != 0)
    }

    pub fn max_label(&self) -> u8 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}

/// Per-voxel class probabilities, `channels` consecutive values per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVolume {
    pub grid: Grid,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl ProbVolume {
    pub fn new(grid: Grid, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("zero channels".into()));
        }
        if data.len() != grid.len() * channels {
            return Err(Error::PayloadLength {
                expected: grid.len() * channels * 4,
                found: data.len() * 4,
            });
        }
        let vol = Self {
            grid,
            channels,
            data,
        };
        vol.check_normalized()?;
        Ok(vol)
    }

    fn check_normalized(&self) -> Result<()> {
        for (voxel, row) in self.data.chunks_exact(self.channels).enumerate() {
            let sum: f64 = row.iter().map(|&p| p as f64).sum();
            if row.iter().any(|&p| !(p >= 0.0)) || (sum - 1.0).abs() > PROB_SUM_TOL {
                return Err(Error::Normalization { voxel, sum });
            }
        }
        Ok(())
    }

    #[inline]
    pub fn row(&self, index: usize) -> &[f32] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    /// Per-voxel argmax; ties go to the lower channel.
    pub fn argmax_labels(&self) -> LabelVolume {
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|row| {
                let mut best = 0;
                for k in 1..row.len() {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best as u8
            })
            .collect();
        LabelVolume {
            grid: self.grid,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub grid: Grid,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(grid: Grid) -> Self {
        Self {
            data: vec![false; grid.len()],
            grid,
        }
    }

    pub fn from_indices(grid: Grid, indices: impl IntoIterator<Item = usize>) -> Self {
        let mut mask = Self::empty(grid);
        for i in indices {
            mask.data[i] = true;
        }
        mask
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn intersection_count(&self, other: &Mask) -> Result<usize> {
        self.grid.check_same_dims(&other.grid)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .filter(|(&a, &b)| a && b)
            .count())
    }

    /// World-space centroid of the set voxels, `None` when empty.
    pub fn centroid(&self) -> Option<Vector3<f64>> {
        let mut sum = Vector3::zeros();
        let mut n = 0usize;
        for i in self.indices() {
            sum += self.grid.world(i);
            n += 1;
        }
        (n > 0).then(|| sum / n as f64)
    }

    /// Number of 6-connected components.
    pub fn component_count(&self) -> usize {
        let mut seen = vec![false; self.data.len()];
        let mut stack = Vec::new();
        let mut components = 0;
        for start in self.indices() {
            if seen[start] {
                continue;
            }
            components += 1;
            seen[start] = true;
            stack.push(start);
            while let Some(i) = stack.pop() {
                self.grid.for_each_neighbor6(i, |j| {
                    if self.data[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                });
            }
        }
        components
    }

    /// Voxel indices on the boundary of the mask (see [`surface_voxels`]).
    pub fn surface_indices(&self) -> Vec<usize> {
        self.indices()
            .filter(|&i| {
                let mut open = false;
                let outside = self.grid.for_each_neighbor6(i, |j| open |= !self.data[j]);
                open || outside > 0
            })
            .collect()
    }

    pub fn union(&self, other: &Mask) -> Result<Mask> {
        self.grid.check_same_dims(&other.grid)?;
        Ok(Mask {
            grid: self.grid,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a || b).collect(),
        })
    }
}

/// Voxels carrying `label` with at least one face neighbour that does not,
/// or that lies outside the grid. Returned in storage order.
pub fn surface_voxels(vol: &LabelVolume, label: u8) -> Vec<VoxelCoord> {
    vol.mask_eq(label)
        .surface_indices()
        .into_iter()
        .map(|i| vol.grid.coord(i))
        .collect()
}

/// Dice overlap `2|A∩B| / (|A|+|B|)`, with two empty masks scoring 1.
pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64> {
    let inter = pred.intersection_count(gt)?;
    let total = pred.count() + gt.count();
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * inter as f64 / total as f64)
}

/// Detection rule: the prediction covers at least `cutoff` of the ground
/// truth. A cutoff of zero requires a strictly positive overlap.
pub fn detected(pred: &Mask, gt: &Mask, cutoff: f64) -> Result<bool> {
    if !(0.0..=1.0).contains(&cutoff) {
        return Err(Error::InvalidArgument(format!(
            "detection cutoff {cutoff} outside [0, 1]"
        )));
    }
    let gt_count = gt.count();
    if gt_count == 0 {
        return Err(Error::Empty("ground-truth mask"));
    }
    let inter = pred.intersection_count(gt)?;
    if cutoff == 0.0 {
        return Ok(inter > 0);
    }
    Ok(inter as f64 / gt_count as f64 >= cutoff)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Volume {
    Label(LabelVolume),
    Prob(ProbVolume),
}

fn base_path(path: &Path) -> PathBuf {
    match path.extension().and_then(|e| e.to_str()) {
        Some("hdr") | Some("raw") => path.with_extension(""),
        _ => path.to_path_buf(),
    }
}

fn with_suffix(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn write_header(base: &Path, grid: &Grid, kind: &str, channels: usize, dtype: &str) -> Result<()> {
    let [w, h, d] = grid.dims;
    let [sx, sy, sz] = grid.spacing;
    let text = format!(
        "dims {w} {h} {d}\nspacing {sx:?} {sy:?} {sz:?}\nkind {kind}\nchannels {channels}\ndtype {dtype}\n"
    );
    let path = with_suffix(base, "hdr");
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

/// Writes `base.hdr` and `base.raw`. A trailing `.hdr`/`.raw` on `path` is ignored.
pub fn save_label_volume(path: impl AsRef<Path>, vol: &LabelVolume) -> Result<()> {
    let base = base_path(path.as_ref());
    write_header(&base, &vol.grid, "label", 1, "u8")?;
    let raw = with_suffix(&base, "raw");
    fs::write(&raw, &vol.data).map_err(|e| Error::io(raw, e))
}

pub fn save_prob_volume(path: impl AsRef<Path>, vol: &ProbVolume) -> Result<()> {
    let base = base_path(path.as_ref());
    write_header(&base, &vol.grid, "prob", vol.channels, "f32")?;
    let mut bytes = Vec::with_capacity(vol.data.len() * 4);
    for p in &vol.data {
        bytes.extend_from_slice(&p.to_le_bytes());
    }
    let raw = with_suffix(&base, "raw");
    fs::write(&raw, bytes).map_err(|e| Error::io(raw, e))
}

struct Header {
    grid: Grid,
    kind: String,
    channels: usize,
    dtype: String,
}

fn parse_header(path: &Path, text: &str) -> Result<Header> {
    let bad = |reason: String| Error::Header {
        path: path.to_path_buf(),
        reason,
    };
    let mut dims = None;
    let mut spacing = None;
    let mut kind = None;
    let mut channels = None;
    let mut dtype = None;
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let key = parts.next().unwrap_or_default();
        let values: Vec<&str> = parts.collect();
        match key {
            "dims" => {
                let v: Vec<usize> = values
                    .iter()
                    .map(|s| s.parse().map_err(|_| bad(format!("bad dims value {s:?}"))))
                    .collect::<Result<_>>()?;
                let v: [usize; 3] = v.try_into().map_err(|_| bad("dims needs 3 values".into()))?;
                dims = Some(v);
            }
            "spacing" => {
                let v: Vec<f64> = values
                    .iter()
                    .map(|s| s.parse().map_err(|_| bad(format!("bad spacing value {s:?}"))))
                    .collect::<Result<_>>()?;
                let v: [f64; 3] =
                    v.try_into().map_err(|_| bad("spacing needs 3 values".into()))?;
                spacing = Some(v);
            }
            "kind" => kind = values.first().map(|s| s.to_string()),
            "channels" => {
                let s = values.first().ok_or_else(|| bad("missing channels".into()))?;
                channels = Some(s.parse().map_err(|_| bad(format!("bad channels {s:?}")))?);
            }
            "dtype" => dtype = values.first().map(|s| s.to_string()),
            other => return Err(bad(format!("unknown key {other:?}"))),
        }
    }
    let dims = dims.ok_or_else(|| bad("missing dims".into()))?;
    let spacing = spacing.ok_or_else(|| bad("missing spacing".into()))?;
    let grid = Grid::new(dims, spacing).map_err(|e| bad(e.to_string()))?;
    Ok(Header {
        grid,
        kind: kind.ok_or_else(|| bad("missing kind".into()))?,
        channels: channels.ok_or_else(|| bad("missing channels".into()))?,
        dtype: dtype.ok_or_else(|| bad("missing dtype".into()))?,
    })
}

/// Reads a `.hdr`/`.raw` pair. `path` may name either file or the shared stem.
pub fn load_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let base = base_path(path.as_ref());
    let hdr_path = with_suffix(&base, "hdr");
    let text = fs::read_to_string(&hdr_path).map_err(|e| Error::io(&hdr_path, e))?;
    let header = parse_header(&hdr_path, &text)?;
    let raw_path = with_suffix(&base, "raw");
    let bytes = fs::read(&raw_path).map_err(|e| Error::io(&raw_path, e))?;
    let bad = |reason: String| Error::Header {
        path: hdr_path.clone(),
        reason,
    };
    match (header.kind.as_str(), header.dtype.as_str()) {
        ("label", "u8") => {
            if header.channels != 1 {
                return Err(bad("label volumes have one channel".into()));
            }
            if bytes.len() != header.grid.len() {
                return Err(Error::PayloadLength {
                    expected: header.grid.len(),
                    found: bytes.len(),
                });
            }
            Ok(Volume::Label(LabelVolume {
                grid: header.grid,
                data: bytes,
            }))
        }
        ("prob", "f32") => {
            let expected = header.grid.len() * header.channels * 4;
            if bytes.len() != expected {
                return Err(Error::PayloadLength {
                    expected,
                    found: bytes.len(),
                });
            }
            let data = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            Ok(Volume::Prob(ProbVolume::new(header.grid, header.channels, data)?))
        }
        (kind, dtype) => Err(bad(format!("unsupported kind/dtype {kind}/{dtype}"))),
    }
}

pub fn load_label_volume(path: impl AsRef<Path>) -> Result<LabelVolume> {
    match load_volume(path.as_ref())? {
        Volume::Label(v) => Ok(v),
        Volume::Prob(_) => Err(Error::InvalidArgument(format!(
            "{} is a probability volume, expected labels",
            path.as_ref().display()
        ))),
    }
}

pub fn load_prob_volume(path: impl AsRef<Path>) -> Result<ProbVolume> {
    match load_volume(path.as_ref())? {
        Volume::Prob(v) => Ok(v),
        Volume::Label(_) => Err(Error::InvalidArgument(format!(
            "{} is a label volume, expected probabilities",
            path.as_ref().display()
        ))),
    }
}
