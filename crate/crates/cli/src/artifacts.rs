//! On-disk layout of a run directory and the text formats of its files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anatomesh::eval::{scores_csv, DetectionRecord, Management};
use anatomesh::features::FeatureMatrix;
use anatomesh::pipeline::{CaseRecord, PipelineConfig, Prediction, Report};
use anatomesh::AnatomyMesh;
use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

pub const PROTOTYPE: &str = "prototype.obj";
pub const CHECKPOINT: &str = "model.ckpt";
pub const TRAIN_LOG: &str = "train_log.csv";
pub const PREDICTIONS: &str = "predictions.csv";
pub const CLASSIFY_INFO: &str = "classify.txt";
pub const REPORT: &str = "report.txt";
pub const SETTINGS: &str = "config.toml";
pub const MANIFEST: &str = "manifest.txt";

/// Subcommands in manifest order.
pub const COMMANDS: [&str; 10] = [
    "synth-gen",
    "build-prototype",
    "fit-mesh",
    "render-zones",
    "pool-features",
    "train",
    "classify",
    "eval",
    "export-mesh",
    "pipeline",
];

pub fn case_name(index: u64) -> String {
    format!("{index:05}")
}

pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn case_dir(&self, index: u64) -> PathBuf {
        self.root.join("cases").join(case_name(index))
    }

    pub fn fitted(&self, index: u64) -> PathBuf {
        self.root.join("fitted").join(format!("{}.obj", case_name(index)))
    }

    pub fn trace(&self, index: u64) -> PathBuf {
        self.root.join("fitted").join(format!("{}_trace.csv", case_name(index)))
    }

    pub fn zones(&self, index: u64) -> PathBuf {
        self.root.join("zones").join(case_name(index))
    }

    pub fn features(&self, index: u64) -> PathBuf {
        self.root.join("features").join(format!("{}.csv", case_name(index)))
    }

    pub fn record_meta(&self, index: u64) -> PathBuf {
        self.root.join("features").join(format!("{}.txt", case_name(index)))
    }

    /// `path` relative to the run directory when it lies inside it.
    pub fn display(&self, path: &Path) -> String {
        path.strip_prefix(&self.root).unwrap_or(path).display().to_string()
    }
}

/// Attaches a path to core errors that do not already carry one.
pub trait AtPath<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> AtPath<T> for anatomesh::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        match self {
            Err(e @ (anatomesh::Error::Io { .. } | anatomesh::Error::Header { .. })) => Err(e.into()),
            r => r.with_context(|| path.display().to_string()),
        }
    }
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
    }
    std::fs::write(path, bytes).with_context(|| path.display().to_string())
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| path.display().to_string())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).with_context(|| path.display().to_string())?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn load_mesh(path: &Path) -> Result<AnatomyMesh> {
    AnatomyMesh::load_obj(path).at(path)
}

/// Sidecar of a case's feature matrix: everything the later stages need
/// besides the features themselves.
pub fn record_meta_text(r: &CaseRecord) -> String {
    let join = |v: &mut dyn Iterator<Item = String>| v.collect::<Vec<_>>().join(" ");
    let mut out = String::new();
    let _ = writeln!(out, "index {}", r.index);
    let _ = writeln!(out, "class {}", r.class_id);
    let _ = writeln!(out, "management {}", r.management.name());
    let _ = writeln!(out, "fit_iterations {}", r.fit_iterations);
    let _ = writeln!(out, "mass_counts {}", join(&mut r.mass_counts.iter().map(|c| c.to_string())));
    let _ = writeln!(out, "vertex_labels {}", join(&mut r.vertex_targets.iter().map(|c| c.to_string())));
    match r.detection {
        Some(d) => {
            let _ = writeln!(out, "detection {:?} {}", d.dice, d.detected);
        }
        None => out.push_str("detection none\n"),
    }
    out
}

pub fn parse_record(meta: &str, features: FeatureMatrix, fitted: AnatomyMesh) -> Result<CaseRecord> {
    let mut fields = BTreeMap::new();
    for line in meta.lines().filter(|l| !l.trim().is_empty()) {
        let (k, v) = line.split_once(' ').unwrap_or((line, ""));
        fields.insert(k.to_string(), v.trim().to_string());
    }
    let get = |k: &str| fields.get(k).ok_or_else(|| anyhow!("missing field {k:?}"));
    let nums = |k: &str| -> Result<Vec<usize>> {
        get(k)?
            .split_whitespace()
            .map(|t| t.parse().with_context(|| format!("field {k:?}")))
            .collect()
    };
    let class_id: usize = get("class")?.parse().context("field \"class\"")?;
    let detection = match get("detection")?.as_str() {
        "none" => None,
        s => {
            let (dice, det) = s.split_once(' ').ok_or_else(|| anyhow!("bad detection field"))?;
            Some(DetectionRecord {
                class: class_id,
                dice: dice.parse().context("detection dice")?,
                detected: det.parse().context("detection flag")?,
            })
        }
    };
    Ok(CaseRecord {
        index: get("index")?.parse().context("field \"index\"")?,
        class_id,
        management: Management::from_name(get("management")?)?,
        features,
        vertex_targets: nums("vertex_labels")?.into_iter().map(|v| v as u8).collect(),
        mass_counts: nums("mass_counts")?,
        detection,
        fit_iterations: get("fit_iterations")?.parse().context("field \"fit_iterations\"")?,
        fitted,
    })
}

pub fn load_record(layout: &Layout, index: u64) -> Result<CaseRecord> {
    let fpath = layout.features(index);
    let features = FeatureMatrix::from_csv(&read_text(&fpath)?).at(&fpath)?;
    let mpath = layout.record_meta(index);
    let fitted = load_mesh(&layout.fitted(index))?;
    parse_record(&read_text(&mpath)?, features, fitted).with_context(|| mpath.display().to_string())
}

pub fn write_record(layout: &Layout, r: &CaseRecord) -> Result<Vec<PathBuf>> {
    let f = layout.features(r.index);
    write_file(&f, r.features.to_csv())?;
    let m = layout.record_meta(r.index);
    write_file(&m, record_meta_text(r))?;
    Ok(vec![f, m])
}

pub fn parse_predictions(text: &str) -> Result<Vec<Prediction>> {
    let mut lines = text.lines();
    if lines.next() != Some(anatomesh::pipeline::PREDICTIONS_HEADER) {
        bail!("unexpected predictions header");
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|l| {
            let c: Vec<&str> = l.split(',').collect();
            if c.len() != 6 {
                bail!("bad predictions row {l:?}");
            }
            Ok(Prediction {
                index: c[0].parse()?,
                truth: c[1].parse()?,
                pv: c[2].parse()?,
                vv: c[3].parse()?,
                gc: c[4].parse()?,
                global_probs: c[5].split(' ').map(str::parse).collect::<std::result::Result<_, _>>()?,
            })
        })
        .collect()
}

/// Report files shared by `eval` and `pipeline`.
pub fn write_reports(layout: &Layout, cfg: &PipelineConfig, report: &Report, preds: &[Prediction]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = layout.file(name);
        write_file(&p, text)?;
        out.push(p);
        Ok(())
    };
    put(REPORT, report.to_text())?;
    put("class_confusion.csv", report.class_confusion.to_csv())?;
    put("management.csv", report.management.to_csv())?;
    if let Some(d) = &report.detection {
        put("detection.csv", d.to_csv())?;
    }
    let positive = cfg.positive_class;
    let scores: Vec<f64> = preds.iter().map(|p| p.global_probs[positive - 1]).collect();
    let labels: Vec<bool> = preds.iter().map(|p| p.truth == positive).collect();
    put("scores.csv", scores_csv(&scores, &labels)?)?;
    Ok(out)
}

pub struct ManifestEntry<'a> {
    pub command: &'a str,
    pub cfg: &'a RunConfig,
    pub inputs: Vec<String>,
    pub outputs: Vec<PathBuf>,
}

/// Rewrites this command's section of `manifest.txt`, keeping the others.
/// Sections appear in [`COMMANDS`] order; no timestamps are recorded.
pub fn write_manifest(layout: &Layout, entry: ManifestEntry<'_>) -> Result<()> {
    let path = layout.file(MANIFEST);
    let mut sections: BTreeMap<usize, String> = BTreeMap::new();
    if let Ok(text) = std::fs::read_to_string(&path) {
        let mut current: Option<(usize, String)> = None;
        for line in text.lines() {
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if let Some((k, body)) = current.take() {
                    sections.insert(k, body);
                }
                current = COMMANDS.iter().position(|c| *c == name).map(|k| (k, format!("{line}\n")));
            } else if let Some((_, body)) = current.as_mut() {
                body.push_str(line);
                body.push('\n');
            }
        }
        if let Some((k, body)) = current {
            sections.insert(k, body);
        }
    }
    let key = COMMANDS
        .iter()
        .position(|c| *c == entry.command)
        .ok_or_else(|| anyhow!("unknown command {}", entry.command))?;
    let mut body = format!("[{}]\n", entry.command);
    let _ = writeln!(body, "config_sha256 {}", entry.cfg.settings_hash()?);
    for i in &entry.inputs {
        let _ = writeln!(body, "input {i}");
    }
    let mut outputs = entry.outputs;
    outputs.sort();
    outputs.dedup();
    for o in &outputs {
        let _ = writeln!(body, "output {} {}", layout.display(o), sha256_file(o)?);
    }
    body.push('\n');
    sections.insert(key, body);
    let mut text = format!(
        "anatomesh {}\nformat 1\n\n",
        env!("CARGO_PKG_VERSION")
    );
    sections.values().for_each(|s| text.push_str(s));
    write_file(&path, text)
}
