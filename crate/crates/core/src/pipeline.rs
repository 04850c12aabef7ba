//! End-to-end run on a synthetic dataset: prototype, per-case mesh fitting,
//! zones and features, network training, and the three classification
//! strategies evaluated on a held-out split.

use std::fmt::Write as _;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    accuracy, binary_metrics, detection_record, detection_table_from_records, format_ratio, management_report,
    ConfusionMatrix, DetectionRecord, DetectionTable, Management,
};
use crate::features::{pool_features, FeatureConfig, FeatureMatrix};
use crate::graphnet::{
    classify_gc, classify_pv_counts, classify_vv, forward, mass_counts, select_pv_threshold, train, GraphResNet,
    GraphTopology, MassClassMap, Targets, TrainConfig, TrainExample, TrainResult,
};
use crate::mesh::{AnatomyMesh, RegionRanges, PROTOTYPE_VERTICES};
use crate::meshfit::{align_to_centroid, fit_mesh, FitConfig, FitResult};
use crate::prototype::{assign_regions, build_prototype, centering_shift, mean_shape, PrototypeConfig};
use crate::synth::{gen_case, SynthCase, SynthConfig};
use crate::volume::{Mask, ProbVolume};
use crate::zones::{render_zones, vertex_labels, ZoneMap};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub n_train: usize,
    pub n_test: usize,
    /// Tail fraction of the training cases held out for model selection
    /// and the pixel-voting threshold.
    pub val_fraction: f64,
    pub region_counts: [usize; 4],
    pub prototype: PrototypeConfig,
    pub fit: FitConfig,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    /// Minimum covered fraction of the true mass for a detection.
    pub detection_cutoff: f64,
    /// Class treated as positive in the binary report.
    pub positive_class: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            synth: SynthConfig::default(),
            n_train: 400,
            n_test: 100,
            val_fraction: 0.2,
            region_counts: [48, 42, 45, 21],
            prototype: PrototypeConfig::default(),
            fit: FitConfig::default(),
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            detection_cutoff: 0.1,
            positive_class: 1,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        self.fit.validate()?;
        self.prototype.fit.validate()?;
        self.train.validate()?;
        if self.n_train < 2 || self.n_test == 0 {
            return Err(Error::InvalidArgument("need at least 2 training and 1 test case".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidArgument("val_fraction must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.detection_cutoff) {
            return Err(Error::InvalidArgument("detection_cutoff must lie in [0, 1]".into()));
        }
        if self.positive_class == 0 || self.positive_class > self.synth.classes.len() {
            return Err(Error::InvalidArgument(format!("positive_class {} does not exist", self.positive_class)));
        }
        let r = RegionRanges::from_counts(self.region_counts)?;
        RegionRanges::new(r.ranges, PROTOTYPE_VERTICES)?;
        Ok(())
    }

    pub fn regions(&self) -> Result<RegionRanges> {
        RegionRanges::from_counts(self.region_counts)
    }

    pub fn class_map(&self) -> MassClassMap {
        MassClassMap {
            entries: self
                .synth
                .classes
                .iter()
                .enumerate()
                .filter_map(|(k, c)| c.mass.as_ref().map(|m| (m.label, k + 1)))
                .collect(),
            default_class: self.synth.no_mass_class().unwrap_or(self.synth.classes.len()),
        }
    }

    /// Validation cases taken from the end of `n` training cases; at least
    /// one case is always left for fitting.
    pub fn val_count(&self, n: usize) -> usize {
        let v = (n as f64 * self.val_fraction).round() as usize;
        v.min(n.saturating_sub(1))
    }
}

/// Prototype from the ground-truth organs: mean shape, fitted template,
/// and regions ordered from the mean head tip.
pub fn prototype_from_cases(cases: &[(Mask, Vector3<f64>)], regions: RegionRanges, cfg: &PrototypeConfig) -> Result<AnatomyMesh> {
    let (first, _) = cases.first().ok_or(Error::Empty("prototype cases"))?;
    let spacing = first.grid.spacing;
    let masks: Vec<Mask> = cases.iter().map(|(m, _)| m.clone()).collect();
    let mean = mean_shape(&masks)?;
    let mut head = Vector3::zeros();
    for (m, h) in cases {
        let s = centering_shift(m).ok_or(Error::Empty("organ mask"))?;
        head += h + Vector3::new(s[0] as f64 * spacing[0], s[1] as f64 * spacing[1], s[2] as f64 * spacing[2]);
    }
    head /= cases.len() as f64;
    let fitted = build_prototype(&mean, cfg)?;
    let mut mesh = assign_regions(&fitted, &head)?;
    mesh.regions = regions;
    mesh.validate()?;
    Ok(mesh.quantized())
}

/// Everything the later stages need from one case; volumes are dropped.
#[derive(Debug, Clone)]
pub struct CaseRecord {
    pub index: u64,
    pub class_id: usize,
    pub management: Management,
    pub features: FeatureMatrix,
    pub vertex_targets: Vec<u8>,
    pub mass_counts: Vec<usize>,
    pub detection: Option<DetectionRecord>,
    pub fitted: AnatomyMesh,
    pub fit_iterations: usize,
}

impl CaseRecord {
    pub fn example(&self) -> TrainExample {
        TrainExample {
            features: self.features.data.clone(),
            targets: Targets {
                vertex: self.vertex_targets.iter().map(|&l| l as usize).collect(),
                global: self.class_id - 1,
            },
        }
    }
}

/// Aligns the prototype to the predicted organ and fits it. Only the soft
/// map is used. The fitted mesh is quantized like its OBJ file.
pub fn fit_case(prototype: &AnatomyMesh, probs: &ProbVolume, cfg: &FitConfig) -> Result<FitResult> {
    let organ = probs.argmax_labels().foreground();
    let start = align_to_centroid(prototype, &organ)?;
    let fit = fit_mesh(&start, &organ, cfg)?;
    Ok(FitResult { mesh: fit.mesh.quantized(), trace: fit.trace })
}

pub fn zones_for_case(fitted: &AnatomyMesh, probs: &ProbVolume) -> Result<ZoneMap> {
    render_zones(fitted, &probs.argmax_labels().foreground())
}

/// Features, targets, pixel-voting counts and the detection record of one
/// case; ground truth supplies only targets and detection.
pub fn case_record(
    case: &SynthCase,
    index: u64,
    fitted: AnatomyMesh,
    fit_iterations: usize,
    zmap: &ZoneMap,
    cfg: &PipelineConfig,
) -> Result<CaseRecord> {
    let map = cfg.class_map();
    let mass_labels: Vec<u8> = map.entries.iter().map(|e| e.0).collect();
    let pred = case.probs.argmax_labels();
    let features = pool_features(&fitted, zmap, &case.probs, &pred, &mass_labels, &cfg.features)?;
    let vertex_targets = vertex_labels(zmap, &case.labels, fitted.vertex_count())?;
    let gt_mass = case.labels.mask_where(|l| mass_labels.contains(&l));
    let detection = if gt_mass.is_empty() {
        None
    } else {
        let pred_mass = pred.mask_where(|l| mass_labels.contains(&l));
        Some(detection_record(&pred_mass, &gt_mass, case.class_id, cfg.detection_cutoff)?)
    };
    Ok(CaseRecord {
        index,
        class_id: case.class_id,
        management: case.management,
        features,
        vertex_targets,
        mass_counts: mass_counts(&pred, &map),
        detection,
        fit_iterations,
        fitted,
    })
}

pub fn process_case(case: &SynthCase, index: u64, prototype: &AnatomyMesh, cfg: &PipelineConfig) -> Result<CaseRecord> {
    let fit = fit_case(prototype, &case.probs, &cfg.fit)?;
    let zmap = zones_for_case(&fit.mesh, &case.probs)?;
    case_record(case, index, fit.mesh, fit.trace.len(), &zmap, cfg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub index: u64,
    pub truth: usize,
    pub pv: usize,
    pub vv: usize,
    pub gc: usize,
    pub global_probs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub prototype: AnatomyMesh,
    pub training: TrainResult,
    pub pv_threshold: usize,
    pub predictions: Vec<Prediction>,
    pub train_records: Vec<CaseRecord>,
    pub test_records: Vec<CaseRecord>,
    pub report: Report,
}

#[derive(Debug, Clone)]
pub struct Report {
    pub class_names: Vec<String>,
    pub acc_pv: f64,
    pub acc_vv: f64,
    pub acc_gc: f64,
    pub class_confusion: ConfusionMatrix,
    pub management: ConfusionMatrix,
    pub positive_class: usize,
    pub binary: crate::eval::BinaryMetrics,
    pub detection: Option<DetectionTable>,
}

impl Report {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "test accuracy");
        let _ = writeln!(out, "  pixel voting          {:.4}", self.acc_pv);
        let _ = writeln!(out, "  vertex voting         {:.4}", self.acc_vv);
        let _ = writeln!(out, "  global classification {:.4}", self.acc_gc);
        let _ = writeln!(out);
        let _ = writeln!(out, "class {} vs rest (global classification)", self.class_names[self.positive_class - 1]);
        let _ = writeln!(out, "  accuracy    {:.4}", self.binary.accuracy);
        let _ = writeln!(out, "  sensitivity {}", format_ratio(self.binary.sensitivity));
        let _ = writeln!(out, "  specificity {}", format_ratio(self.binary.specificity));
        let _ = writeln!(out);
        let _ = writeln!(out, "class confusion (global classification)");
        out.push_str(&self.class_confusion.to_table());
        let _ = writeln!(out);
        let _ = writeln!(out, "patient management");
        out.push_str(&self.management.to_table());
        if let Some(d) = &self.detection {
            let _ = writeln!(out);
            let _ = writeln!(out, "mass segmentation");
            out.push_str(&d.to_table());
        }
        out
    }
}

/// Stage-tagged error for diagnostics.
fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage { stage: name, source: Box::new(e) })
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<PipelineOutput> {
    cfg.validate()?;
    let regions = cfg.regions()?;
    let n_train = cfg.n_train as u64;
    let n_total = n_train + cfg.n_test as u64;

    log::info!("synth: generating {} training organs", cfg.n_train);
    let organs: Vec<(Mask, Vector3<f64>)> = stage(
        "synth",
        (0..n_train)
            .into_par_iter()
            .map(|i| gen_case(&cfg.synth, i).map(|c| (c.labels.foreground(), c.head_end)))
            .collect(),
    )?;
    log::info!("prototype: building from {} organs", organs.len());
    let prototype = stage("build-prototype", prototype_from_cases(&organs, regions, &cfg.prototype))?;
    drop(organs);

    log::info!("fit-mesh: processing {n_total} cases");
    let records: Vec<CaseRecord> = stage(
        "fit-mesh",
        (0..n_total)
            .into_par_iter()
            .map(|i| {
                let case = gen_case(&cfg.synth, i)?;
                process_case(&case, i, &prototype, cfg)
            })
            .collect(),
    )?;
    let (train_records, test_records) = {
        let mut r = records;
        let test = r.split_off(cfg.n_train);
        (r, test)
    };

    let training = stage("train", train_on_records(cfg, &prototype, &train_records))?;
    let pv_threshold = select_threshold(cfg, &train_records);
    log::info!("classify: {} test cases", test_records.len());
    let predictions = stage(
        "classify",
        classify_records(&training.net, &prototype, &test_records, cfg, pv_threshold),
    )?;
    let report = stage("eval", build_report(cfg, &predictions, &test_records))?;
    Ok(PipelineOutput { prototype, training, pv_threshold, predictions, train_records, test_records, report })
}

/// Trains on the leading training records and validates on the trailing
/// `val_fraction` of them.
pub fn train_on_records(cfg: &PipelineConfig, prototype: &AnatomyMesh, train_records: &[CaseRecord]) -> Result<TrainResult> {
    let n_fit = train_records.len() - cfg.val_count(train_records.len());
    let examples: Vec<TrainExample> = train_records.iter().map(CaseRecord::example).collect();
    let (fit_set, val_set) = examples.split_at(n_fit);
    let topo = GraphTopology::from_mesh(prototype);
    let shape = cfg.train.shape(
        FeatureMatrix::width_for(cfg.synth.channels()),
        cfg.synth.channels(),
        cfg.synth.classes.len(),
        prototype.vertex_count(),
        prototype.regions,
    );
    log::info!("train: {} training / {} validation cases", fit_set.len(), val_set.len());
    train(fit_set, val_set, shape, &topo, &cfg.train)
}

/// Pixel-voting threshold chosen on the validation records, or on all
/// training records when there is no validation split.
pub fn select_threshold(cfg: &PipelineConfig, train_records: &[CaseRecord]) -> usize {
    let n_val = cfg.val_count(train_records.len());
    let source = if n_val == 0 { train_records } else { &train_records[train_records.len() - n_val..] };
    let pairs: Vec<(Vec<usize>, usize)> = source.iter().map(|r| (r.mass_counts.clone(), r.class_id)).collect();
    select_pv_threshold(&pairs, &cfg.class_map())
}

pub fn classify_records(
    net: &GraphResNet,
    prototype: &AnatomyMesh,
    records: &[CaseRecord],
    cfg: &PipelineConfig,
    threshold: usize,
) -> Result<Vec<Prediction>> {
    let topo = GraphTopology::from_mesh(prototype);
    let map = cfg.class_map();
    records.par_iter().map(|r| predict(net, &topo, r, &map, threshold)).collect()
}

pub fn predict(net: &GraphResNet, topo: &GraphTopology, r: &CaseRecord, map: &MassClassMap, threshold: usize) -> Result<Prediction> {
    let f = forward(net, &r.features.data, topo)?;
    Ok(Prediction {
        index: r.index,
        truth: r.class_id,
        pv: classify_pv_counts(&r.mass_counts, map, threshold),
        vv: classify_vv(&f.vertex_probs, map),
        gc: classify_gc(&f.global_probs),
        global_probs: f.global_probs.to_vec(),
    })
}

pub fn build_report(cfg: &PipelineConfig, predictions: &[Prediction], test_records: &[CaseRecord]) -> Result<Report> {
    let truth: Vec<usize> = predictions.iter().map(|p| p.truth).collect();
    let pick = |f: fn(&Prediction) -> usize| predictions.iter().map(f).collect::<Vec<usize>>();
    let (pv, vv, gc) = (pick(|p| p.pv), pick(|p| p.vv), pick(|p| p.gc));
    let names: Vec<String> = cfg.synth.classes.iter().map(|c| c.name.clone()).collect();
    let class_confusion = ConfusionMatrix::from_indices(
        names.clone(),
        &gc.iter().map(|c| c - 1).collect::<Vec<_>>(),
        &truth.iter().map(|c| c - 1).collect::<Vec<_>>(),
    )?;
    let mgmt = |ids: &[usize]| ids.iter().map(|&c| cfg.synth.management_of(c).name()).collect::<Vec<_>>();
    let management = management_report(&mgmt(&gc), &mgmt(&truth))?;
    let records: Vec<DetectionRecord> = test_records.iter().filter_map(|r| r.detection).collect();
    let mass_classes: Vec<usize> = cfg.class_map().entries.iter().map(|e| e.1).collect();
    let detection = if records.is_empty() { None } else { Some(detection_table_from_records(&records, &mass_classes)?) };
    Ok(Report {
        acc_pv: accuracy(&pv, &truth)?,
        acc_vv: accuracy(&vv, &truth)?,
        acc_gc: accuracy(&gc, &truth)?,
        class_confusion,
        management,
        positive_class: cfg.positive_class,
        binary: binary_metrics(&gc, &truth, cfg.positive_class)?,
        detection,
        class_names: names,
    })
}

pub const PREDICTIONS_HEADER: &str = "case,truth,pv,vv,gc,global_probs";

/// One row per case; class ids are 1-based and the global probabilities
/// are space-separated in class order.
pub fn predictions_csv(predictions: &[Prediction]) -> String {
    let mut out = format!("{PREDICTIONS_HEADER}\n");
    for p in predictions {
        let probs: Vec<String> = p.global_probs.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{},{},{},{},{},{}", p.index, p.truth, p.pv, p.vv, p.gc, probs.join(" "));
    }
    out
}
