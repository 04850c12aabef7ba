//! Procedural organs, masses and soft segmentation maps.
//!
//! The organ is a union of balls swept along a quadratic centerline running
//! from the head (`t = 0`, smaller x) to the tail (`t = 1`), with an
//! enlarged head bulb. Masses are placed by centerline bands, so each class
//! carries a spatial prior the mesh-based classifier can exploit.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Vector3;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Management;
use crate::mesh::Region;
use crate::volume::{self, Grid, LabelVolume, Mask, ProbVolume};

/// Centerline parameter bounds of the four regions, head first.
pub const REGION_BANDS: [f64; 5] = [0.0, 0.3, 0.55, 0.82, 1.0];

const CENTERLINE_SAMPLES: usize = 401;

pub fn band_of(t: f64) -> Region {
    Region::ALL
        .into_iter()
        .zip(REGION_BANDS.windows(2))
        .find(|(_, b)| t < b[1])
        .map_or(Region::Tail, |(r, _)| r)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrganRanges {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub length: (f64, f64),
    pub body_radius: (f64, f64),
    pub bulb: (f64, f64),
    pub bend: (f64, f64),
    /// Integer voxel shift along x.
    pub shift: (i64, i64),
}

impl Default for OrganRanges {
    fn default() -> Self {
        Self {
            dims: [64, 48, 48],
            spacing: [1.0; 3],
            length: (32.0, 38.0),
            body_radius: (5.0, 6.5),
            bulb: (2.5, 3.5),
            bend: (-5.0, 5.0),
            shift: (-2, 2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrganParams {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub length: f64,
    pub body_radius: f64,
    pub bulb: f64,
    pub bend: f64,
    pub shift: i64,
}

impl OrganParams {
    pub fn sample(ranges: &OrganRanges, rng: &mut impl Rng) -> Result<Self> {
        let pick = |rng: &mut dyn RngCore, (lo, hi): (f64, f64), name: &str| -> Result<f64> {
            if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
                return Err(Error::InvalidArgument(format!("organ {name} range ({lo}, {hi}) is invalid")));
            }
            Ok(if lo == hi { lo } else { rng.random_range(lo..=hi) })
        };
        if ranges.shift.0 > ranges.shift.1 {
            return Err(Error::InvalidArgument("organ shift range is invalid".into()));
        }
        Ok(Self {
            dims: ranges.dims,
            spacing: ranges.spacing,
            length: pick(rng, ranges.length, "length")?,
            body_radius: pick(rng, ranges.body_radius, "body_radius")?,
            bulb: pick(rng, ranges.bulb, "bulb")?,
            bend: pick(rng, ranges.bend, "bend")?,
            shift: rng.random_range(ranges.shift.0..=ranges.shift.1),
        })
    }
}

/// World-space centerline with its radius profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Centerline {
    pub origin: Vector3<f64>,
    pub length: f64,
    pub bend: f64,
    pub body_radius: f64,
    pub bulb: f64,
}

impl Centerline {
    pub fn point(&self, t: f64) -> Vector3<f64> {
        self.origin + Vector3::new(t * self.length, self.bend * 4.0 * t * (1.0 - t), 0.0)
    }

    pub fn tangent(&self, t: f64) -> Vector3<f64> {
        Vector3::new(self.length, self.bend * 4.0 * (1.0 - 2.0 * t), 0.0).normalize()
    }

    pub fn radius(&self, t: f64) -> f64 {
        self.body_radius * (1.0 - 0.35 * t) + self.bulb * (-(t / 0.18).powi(2)).exp()
    }

    /// Parameter of the nearest sampled centerline point; lower `t` on ties.
    pub fn project(&self, p: &Vector3<f64>) -> f64 {
        let mut best = (0.0, f64::INFINITY);
        for s in 0..CENTERLINE_SAMPLES {
            let t = s as f64 / (CENTERLINE_SAMPLES - 1) as f64;
            let d = (self.point(t) - p).norm_squared();
            if d < best.1 {
                best = (t, d);
            }
        }
        best.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Organ {
    pub mask: Mask,
    pub centerline: Centerline,
    /// Head tip: the centerline start pushed out by the head radius.
    pub head_end: Vector3<f64>,
}

/// Marks every voxel within `radius(t)` of the centerline samples in
/// `[t0, t1]`.
fn sweep(grid: &Grid, line: &Centerline, t0: f64, t1: f64, radius: impl Fn(f64) -> f64) -> Mask {
    let mut mask = Mask::empty(*grid);
    let steps = ((line.length * (t1 - t0)) / (0.25 * grid.voxel_unit())).ceil().max(1.0) as usize;
    for s in 0..=steps {
        let t = t0 + (t1 - t0) * s as f64 / steps as f64;
        let c = line.point(t);
        let r = radius(t);
        let r2 = r * r;
        let mut lo = [0usize; 3];
        let mut hi = [0usize; 3];
        for a in 0..3 {
            let sp = grid.spacing[a];
            lo[a] = ((c[a] - r) / sp).floor().max(0.0) as usize;
            hi[a] = (((c[a] + r) / sp).ceil().max(0.0) as usize).min(grid.dims[a] - 1);
        }
        for d in lo[2]..=hi[2] {
            for h in lo[1]..=hi[1] {
                for w in lo[0]..=hi[0] {
                    let i = w + grid.dims[0] * (h + grid.dims[1] * d);
                    if !mask.data[i] && (grid.world(i) - c).norm_squared() <= r2 {
                        mask.data[i] = true;
                    }
                }
            }
        }
    }
    mask
}

fn touches_border(mask: &Mask) -> bool {
    let g = mask.grid;
    mask.indices().any(|i| {
        let c = g.coord(i);
        c.w == 0 || c.h == 0 || c.d == 0 || c.w + 1 == g.dims[0] || c.h + 1 == g.dims[1] || c.d + 1 == g.dims[2]
    })
}

pub fn organ_from_params(p: &OrganParams) -> Result<Organ> {
    if p.dims.iter().any(|&d| d < 32) {
        return Err(Error::InvalidArgument(format!("grid {:?} is smaller than 32 per axis", p.dims)));
    }
    if !(p.length > 0.0 && p.body_radius > 0.0 && p.bulb >= 0.0) {
        return Err(Error::InvalidArgument("organ length and radii must be positive".into()));
    }
    let grid = Grid::new(p.dims, p.spacing)?;
    let centre = Vector3::new(
        (p.dims[0] as f64 - 1.0) / 2.0 * p.spacing[0],
        (p.dims[1] as f64 - 1.0) / 2.0 * p.spacing[1],
        (p.dims[2] as f64 - 1.0) / 2.0 * p.spacing[2],
    );
    // the thin tail needs less room than the head bulb
    let x0 = centre.x + (3 + p.shift) as f64 * p.spacing[0] - p.length / 2.0;
    let centerline = Centerline {
        origin: Vector3::new(x0, centre.y, centre.z),
        length: p.length,
        bend: p.bend,
        body_radius: p.body_radius,
        bulb: p.bulb,
    };
    let mask = sweep(&grid, &centerline, 0.0, 1.0, |t| centerline.radius(t));
    if mask.is_empty() {
        return Err(Error::Placement("organ is empty".into()));
    }
    if touches_border(&mask) {
        return Err(Error::Placement("organ is clipped by the grid".into()));
    }
    let head_end = centerline.point(0.0) - centerline.radius(0.0) * centerline.tangent(0.0);
    Ok(Organ { mask, centerline, head_end })
}

pub fn gen_organ(seed: u64, ranges: &OrganRanges) -> Result<Organ> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    organ_from_params(&OrganParams::sample(ranges, &mut rng)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MassSpec {
    /// Label written into the volume; at least 2.
    pub label: u8,
    pub regions: Vec<Region>,
    /// Radius range in world units: blob semi-axis or tube radius.
    pub radius: (f64, f64),
    /// Thin tube along the centerline instead of a blob.
    pub diffuse: bool,
    /// Blob centres may sit near the organ wall, up to 20% outside.
    pub exophytic: bool,
}

impl MassSpec {
    pub fn validate(&self) -> Result<()> {
        if self.label < 2 {
            return Err(Error::InvalidArgument(format!("mass label {} must be at least 2", self.label)));
        }
        if self.regions.is_empty() {
            return Err(Error::InvalidArgument("mass spec needs at least one region".into()));
        }
        let (lo, hi) = self.radius;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidArgument(format!("mass radius range ({lo}, {hi}) must be positive")));
        }
        Ok(())
    }
}

/// Largest tolerated fraction of mass voxels outside the organ.
pub const MAX_PROTRUSION: f64 = 0.2;
const PLACEMENT_TRIES: usize = 50;

fn random_unit_yz(rng: &mut impl Rng) -> Vector3<f64> {
    let a: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    Vector3::new(0.0, a.cos(), a.sin())
}

/// Mass voxels for one placement attempt.
fn place(organ: &Organ, spec: &MassSpec, rng: &mut impl Rng) -> Mask {
    let grid = organ.mask.grid;
    let line = &organ.centerline;
    let size = if spec.radius.0 == spec.radius.1 { spec.radius.0 } else { rng.random_range(spec.radius.0..=spec.radius.1) };
    if spec.diffuse {
        let t0 = rng.random_range(0.05..0.15);
        let t1 = rng.random_range(0.85..0.95);
        let mut tube = sweep(&grid, line, t0, t1, |_| size);
        for (m, &o) in tube.data.iter_mut().zip(&organ.mask.data) {
            *m &= o;
        }
        return tube;
    }
    let region = spec.regions[rng.random_range(0..spec.regions.len())];
    let (lo, hi) = (REGION_BANDS[region as usize], REGION_BANDS[region as usize + 1]);
    let t = rng.random_range(lo..hi);
    let reach = if spec.exophytic { 0.8 } else { 0.4 };
    let offset = rng.random_range(0.0..=reach) * line.radius(t);
    let centre = line.point(t) + offset * random_unit_yz(rng);
    let axes = Vector3::new(
        size * rng.random_range(0.8..1.2),
        size * rng.random_range(0.8..1.2),
        size * rng.random_range(0.8..1.2),
    );
    let mut mask = Mask::empty(grid);
    for i in 0..grid.len() {
        let d = (grid.world(i) - centre).component_div(&axes);
        if d.norm_squared() <= 1.0 {
            mask.data[i] = true;
        }
    }
    mask
}

/// Places one mass and returns organ (1) plus mass (`spec.label`) labels.
/// The mass centroid projects into an allowed region band and at most
/// [`MAX_PROTRUSION`] of it lies outside the organ.
pub fn implant_mass(organ: &Organ, spec: &MassSpec, rng: &mut impl Rng) -> Result<LabelVolume> {
    spec.validate()?;
    let organ_count = organ.mask.count();
    for _ in 0..PLACEMENT_TRIES {
        let mass = place(organ, spec, rng);
        let n = mass.count();
        if n == 0 || n * 2 > organ_count || touches_border(&mass) {
            continue;
        }
        let outside = n - mass.intersection_count(&organ.mask)?;
        if outside as f64 > MAX_PROTRUSION * n as f64 {
            continue;
        }
        let centroid = mass.centroid().expect("non-empty mass");
        if !spec.regions.contains(&band_of(organ.centerline.project(&centroid))) {
            continue;
        }
        let mut labels = LabelVolume::zeros(organ.mask.grid);
        for (i, l) in labels.data.iter_mut().enumerate() {
            if mass.data[i] {
                *l = spec.label;
            } else if organ.mask.data[i] {
                *l = 1;
            }
        }
        return Ok(labels);
    }
    Err(Error::Placement(format!(
        "could not place label-{} mass in {:?} after {PLACEMENT_TRIES} tries",
        spec.label, spec.regions
    )))
}

/// One-hot labels, optionally blurred by mixing in the mean one-hot of the
/// 6-neighbourhood (weight 0.4), then blended with a random distribution
/// of weight `noise`.
pub fn soften(labels: &LabelVolume, channels: usize, noise: f64, blur: bool, seed: u64) -> Result<ProbVolume> {
    if !(0.0..0.5).contains(&noise) {
        return Err(Error::InvalidArgument(format!("noise {noise} outside [0, 0.5)")));
    }
    if labels.max_label() as usize >= channels {
        return Err(Error::InvalidArgument(format!(
            "label {} needs more than {channels} channels",
            labels.max_label()
        )));
    }
    let grid = labels.grid;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = vec![0f32; grid.len() * channels];
    let mut row = vec![0f64; channels];
    let mut r = vec![0f64; channels];
    for i in 0..grid.len() {
        row.fill(0.0);
        let own = labels.data[i] as usize;
        if blur {
            let mut nb = [0usize; 6];
            let mut k = 0;
            grid.for_each_neighbor6(i, |j| {
                nb[k] = labels.data[j] as usize;
                k += 1;
            });
            row[own] += 0.6;
            for &l in &nb[..k] {
                row[l] += 0.4 / k as f64;
            }
        } else {
            row[own] = 1.0;
        }
        if noise > 0.0 {
            let mut s = 0.0;
            for v in r.iter_mut() {
                *v = rng.random::<f64>() + 1e-3;
                s += *v;
            }
            for (p, v) in row.iter_mut().zip(&r) {
                *p = (1.0 - noise) * *p + noise * v / s;
            }
        }
        let total: f64 = row.iter().sum();
        for (o, p) in data[i * channels..(i + 1) * channels].iter_mut().zip(&row) {
            *o = (p / total) as f32;
        }
    }
    ProbVolume::new(grid, channels, data)
}

/// A synthetic case class: spatial prior plus management recommendation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassDef {
    pub name: String,
    pub management: Management,
    /// `None` for cases without a mass.
    pub mass: Option<MassSpec>,
}

/// Head blob (surgery), body/tail blob (monitoring), diffuse tube
/// (monitoring), no mass (discharge).
pub fn default_classes() -> Vec<ClassDef> {
    vec![
        ClassDef {
            name: "head_blob".into(),
            management: Management::Surgery,
            mass: Some(MassSpec {
                label: 2,
                regions: vec![Region::Head],
                radius: (3.5, 5.0),
                diffuse: false,
                exophytic: true,
            }),
        },
        ClassDef {
            name: "body_tail_blob".into(),
            management: Management::Monitoring,
            mass: Some(MassSpec {
                label: 3,
                regions: vec![Region::VentralBody, Region::DorsalBody, Region::Tail],
                radius: (3.0, 4.5),
                diffuse: false,
                exophytic: false,
            }),
        },
        ClassDef {
            name: "diffuse_tube".into(),
            management: Management::Monitoring,
            mass: Some(MassSpec {
                label: 4,
                regions: Region::ALL.to_vec(),
                radius: (1.5, 2.2),
                diffuse: true,
                exophytic: false,
            }),
        },
        ClassDef { name: "no_mass".into(), management: Management::Discharge, mass: None },
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub organ: OrganRanges,
    pub classes: Vec<ClassDef>,
    /// Class probabilities, one per class; must sum to 1.
    pub class_mix: Vec<f64>,
    pub noise: f64,
    pub blur: bool,
    /// Probability that the soft map reports the mass under another mass
    /// label, as a segmentation network confusing mass types would.
    pub type_confusion: f64,
    /// Attempts per case before placement failures become an error.
    pub max_retries: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            organ: OrganRanges::default(),
            classes: default_classes(),
            class_mix: vec![0.25; 4],
            noise: 0.2,
            blur: true,
            type_confusion: 0.3,
            max_retries: 10,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() || self.class_mix.len() != self.classes.len() {
            return Err(Error::InvalidArgument("class_mix needs one weight per class".into()));
        }
        if self.class_mix.iter().any(|&w| !(w >= 0.0)) || (self.class_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument("class_mix must be non-negative and sum to 1".into()));
        }
        if !(0.0..=1.0).contains(&self.type_confusion) {
            return Err(Error::InvalidArgument("type_confusion must lie in [0, 1]".into()));
        }
        for c in &self.classes {
            if let Some(m) = &c.mass {
                m.validate()?;
            }
        }
        let mut labels: Vec<u8> = self.mass_labels();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.mass_labels().len() {
            return Err(Error::InvalidArgument("mass labels must be distinct per class".into()));
        }
        if self.max_retries == 0 {
            return Err(Error::InvalidArgument("max_retries must be positive".into()));
        }
        Ok(())
    }

    pub fn mass_labels(&self) -> Vec<u8> {
        self.classes.iter().filter_map(|c| c.mass.as_ref().map(|m| m.label)).collect()
    }

    /// Label channels: background, organ and every mass label.
    pub fn channels(&self) -> usize {
        self.mass_labels().into_iter().max().map_or(2, |m| m as usize + 1)
    }

    /// 1-based class id to management label.
    pub fn management_of(&self, class_id: usize) -> Management {
        self.classes[class_id - 1].management
    }

    /// 1-based class id of the first class without a mass, if any.
    pub fn no_mass_class(&self) -> Option<usize> {
        self.classes.iter().position(|c| c.mass.is_none()).map(|i| i + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCase {
    /// Ground truth.
    pub labels: LabelVolume,
    /// Simulated segmentation output.
    pub probs: ProbVolume,
    /// 1-based.
    pub class_id: usize,
    pub management: Management,
    pub head_end: Vector3<f64>,
    pub seed: u64,
}

/// Sub-seed and class of case `index`, from stream `index` of the dataset
/// seed.
fn case_header(cfg: &SynthConfig, index: u64) -> (u64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let seed = rng.next_u64();
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut class = cfg.classes.len();
    for (k, w) in cfg.class_mix.iter().enumerate() {
        acc += w;
        if u < acc {
            class = k + 1;
            break;
        }
    }
    // guard against rounding in the cumulative sum
    while cfg.class_mix[class - 1] == 0.0 {
        class -= 1;
    }
    (seed, class)
}

/// Builds one case of class `class_id` from its own seed.
pub fn gen_case_with(cfg: &SynthConfig, class_id: usize, seed: u64) -> Result<SynthCase> {
    let def = cfg
        .classes
        .get(class_id.wrapping_sub(1))
        .ok_or_else(|| Error::InvalidArgument(format!("class {class_id} does not exist")))?;
    let mut last_err = None;
    for attempt in 0..cfg.max_retries as u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        let organ = match OrganParams::sample(&cfg.organ, &mut rng).and_then(|p| organ_from_params(&p)) {
            Ok(o) => o,
            Err(e @ Error::Placement(_)) => {
                last_err = Some(e);
                continue;
            }
            Err(e) => return Err(e),
        };
        let labels = match &def.mass {
            None => {
                let mut l = LabelVolume::zeros(organ.mask.grid);
                organ.mask.indices().for_each(|i| l.data[i] = 1);
                l
            }
            Some(spec) => match implant_mass(&organ, spec, &mut rng) {
                Ok(l) => l,
                Err(e @ Error::Placement(_)) => {
                    last_err = Some(e);
                    continue;
                }
                Err(e) => return Err(e),
            },
        };
        let mut reported = labels.clone();
        if let Some(spec) = &def.mass {
            let others: Vec<u8> = cfg.mass_labels().into_iter().filter(|&l| l != spec.label).collect();
            if !others.is_empty() && rng.random::<f64>() < cfg.type_confusion {
                let to = others[rng.random_range(0..others.len())];
                reported.data.iter_mut().filter(|l| **l == spec.label).for_each(|l| *l = to);
            }
        }
        let probs = soften(&reported, cfg.channels(), cfg.noise, cfg.blur, rng.next_u64())?;
        return Ok(SynthCase {
            labels,
            probs,
            class_id,
            management: def.management,
            head_end: organ.head_end,
            seed,
        });
    }
    Err(last_err.unwrap_or_else(|| Error::Placement("no attempts made".into())))
}

/// Case `index` of the dataset described by `cfg`.
pub fn gen_case(cfg: &SynthConfig, index: u64) -> Result<SynthCase> {
    let (seed, class) = case_header(cfg, index);
    gen_case_with(cfg, class, seed)
}

pub fn gen_dataset(cfg: &SynthConfig, n: usize) -> Result<Vec<SynthCase>> {
    cfg.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    use rayon::prelude::*;
    (0..n as u64).into_par_iter().map(|i| gen_case(cfg, i)).collect()
}

/// Writes `labels.hdr/raw`, `probs.hdr/raw` and `case.txt` into `dir`.
pub fn write_case(dir: &Path, case: &SynthCase) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    volume::save_label_volume(dir.join("labels"), &case.labels)?;
    volume::save_prob_volume(dir.join("probs"), &case.probs)?;
    let h = case.head_end;
    let mut text = String::new();
    let _ = writeln!(text, "class {}", case.class_id);
    let _ = writeln!(text, "management {}", case.management.name());
    let _ = writeln!(text, "head_end {:?} {:?} {:?}", h.x, h.y, h.z);
    let _ = writeln!(text, "seed {}", case.seed);
    let path = dir.join("case.txt");
    std::fs::write(&path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseInfo {
    pub class_id: usize,
    pub management: Management,
    pub head_end: Vector3<f64>,
    pub seed: u64,
}

pub fn parse_case_info(text: &str) -> Result<CaseInfo> {
    let mut class_id = None;
    let mut management = None;
    let mut head_end = None;
    let mut seed = None;
    let bad = |line: &str| Error::Parse(format!("case.txt: bad line {line:?}"));
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let (k, v) = line.split_once(' ').ok_or_else(|| bad(line))?;
        match k {
            "class" => class_id = Some(v.trim().parse().map_err(|_| bad(line))?),
            "management" => management = Some(Management::from_name(v)?),
            "head_end" => {
                let xs: Vec<f64> = v.split_whitespace().map(|x| x.parse().map_err(|_| bad(line))).collect::<Result<_>>()?;
                if xs.len() != 3 {
                    return Err(bad(line));
                }
                head_end = Some(Vector3::new(xs[0], xs[1], xs[2]));
            }
            "seed" => seed = Some(v.trim().parse().map_err(|_| bad(line))?),
            _ => return Err(bad(line)),
        }
    }
    let missing = |k: &str| Error::Parse(format!("case.txt: missing {k}"));
    Ok(CaseInfo {
        class_id: class_id.ok_or_else(|| missing("class"))?,
        management: management.ok_or_else(|| missing("management"))?,
        head_end: head_end.ok_or_else(|| missing("head_end"))?,
        seed: seed.ok_or_else(|| missing("seed"))?,
    })
}

pub fn read_case(dir: &Path) -> Result<SynthCase> {
    let path = dir.join("case.txt");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let info = parse_case_info(&text)?;
    let labels = volume::load_label_volume(dir.join("labels"))?;
    let probs = volume::load_prob_volume(dir.join("probs"))?;
    labels.grid.check_same_dims(&probs.grid)?;
    Ok(SynthCase {
        labels,
        probs,
        class_id: info.class_id,
        management: info.management,
        head_end: info.head_end,
        seed: info.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::VoxelCoord;

    fn cube_ranges() -> OrganRanges {
        OrganRanges { dims: [64; 3], ..Default::default() }
    }

    #[test]
    fn organ_is_deterministic_connected_and_unclipped() {
        let a = gen_organ(5, &cube_ranges()).unwrap();
        let b = gen_organ(5, &cube_ranges()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.mask.component_count(), 1);
        assert!(!touches_border(&a.mask));
        assert!(a.head_end.x < a.mask.centroid().unwrap().x);
    }

    #[test]
    fn straight_organ_is_mirror_symmetric() {
        let ranges = OrganRanges { bend: (0.0, 0.0), ..cube_ranges() };
        let o = gen_organ(3, &ranges).unwrap();
        let g = o.mask.grid;
        for i in 0..g.len() {
            let c = g.coord(i);
            let mirrored_y = g.index(VoxelCoord::new(c.w, g.dims[1] - 1 - c.h, c.d));
            let mirrored_z = g.index(VoxelCoord::new(c.w, c.h, g.dims[2] - 1 - c.d));
            assert_eq!(o.mask.data[i], o.mask.data[mirrored_y]);
            assert_eq!(o.mask.data[i], o.mask.data[mirrored_z]);
        }
    }

    #[test]
    fn oversized_organ_is_rejected() {
        let ranges = OrganRanges { length: (70.0, 70.0), ..cube_ranges() };
        assert!(matches!(gen_organ(0, &ranges), Err(Error::Placement(_))));
        let small = OrganRanges { dims: [31, 64, 64], ..cube_ranges() };
        assert!(gen_organ(0, &small).is_err());
    }

    #[test]
    fn band_boundaries() {
        assert_eq!(band_of(0.0), Region::Head);
        assert_eq!(band_of(0.29), Region::Head);
        assert_eq!(band_of(0.3), Region::VentralBody);
        assert_eq!(band_of(0.6), Region::DorsalBody);
        assert_eq!(band_of(0.82), Region::Tail);
        assert_eq!(band_of(1.0), Region::Tail);
    }

    #[test]
    fn head_mass_lands_in_head_band() {
        let organ = gen_organ(1, &OrganRanges::default()).unwrap();
        let spec = default_classes()[0].mass.clone().unwrap();
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels = implant_mass(&organ, &spec, &mut rng).unwrap();
            let mass = labels.mask_eq(2);
            let t = organ.centerline.project(&mass.centroid().unwrap());
            assert_eq!(band_of(t), Region::Head);
            let mut again = ChaCha8Rng::seed_from_u64(seed);
            assert_eq!(implant_mass(&organ, &spec, &mut again).unwrap(), labels);
        }
        let zero = MassSpec { radius: (0.0, 0.0), ..spec };
        assert!(implant_mass(&organ, &zero, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn soften_without_noise_or_blur_is_one_hot() {
        let organ = gen_organ(2, &OrganRanges::default()).unwrap();
        let mut labels = LabelVolume::zeros(organ.mask.grid);
        organ.mask.indices().for_each(|i| labels.data[i] = 1);
        let p = soften(&labels, 3, 0.0, false, 0).unwrap();
        for i in 0..labels.data.len() {
            let row = p.row(i);
            for (k, &v) in row.iter().enumerate() {
                assert_eq!(v, if k == labels.data[i] as usize { 1.0 } else { 0.0 });
            }
        }
        assert!(soften(&labels, 3, 0.5, false, 0).is_err());
        assert!(soften(&labels, 1, 0.1, false, 0).is_err());
    }

    #[test]
    fn generated_cases_keep_argmax_agreement() {
        let cfg = SynthConfig { seed: 9, ..Default::default() };
        for case in gen_dataset(&cfg, 8).unwrap() {
            let argmax = case.probs.argmax_labels();
            let agree = argmax.data.iter().zip(&case.labels.data).filter(|(a, b)| a == b).count();
            assert!(agree as f64 >= 0.99 * case.labels.data.len() as f64);
            assert_eq!(case.management, cfg.management_of(case.class_id));
            for i in 0..case.probs.grid.len() {
                let s: f32 = case.probs.row(i).iter().sum();
                assert!((s - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn dataset_is_deterministic_and_follows_mix() {
        let cfg = SynthConfig { seed: 4, ..Default::default() };
        assert_eq!(gen_dataset(&cfg, 3).unwrap(), gen_dataset(&cfg, 3).unwrap());
        let only_first = SynthConfig { class_mix: vec![1.0, 0.0, 0.0, 0.0], ..cfg };
        assert!(gen_dataset(&only_first, 4).unwrap().iter().all(|c| c.class_id == 1));
        let bad = SynthConfig { class_mix: vec![0.5, 0.0, 0.0, 0.0], ..Default::default() };
        assert!(gen_dataset(&bad, 1).is_err());
    }

    #[test]
    fn case_directory_round_trip() {
        let cfg = SynthConfig::default();
        let case = gen_case(&cfg, 0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_case(dir.path(), &case).unwrap();
        assert_eq!(read_case(dir.path()).unwrap(), case);
    }
}
