//! One function per subcommand. Each stage reads the previous stage's files
//! from the run directory, so the stages chained by hand produce the same
//! bytes as `pipeline`.

use std::path::{Path, PathBuf};

use anatomesh::graphnet::{load_checkpoint, save_checkpoint};
use anatomesh::pipeline::{
    build_report, case_record, classify_records, fit_case, predictions_csv, prototype_from_cases, run_pipeline,
    select_threshold, train_on_records, zones_for_case, CaseRecord, PipelineConfig,
};
use anatomesh::synth::{gen_case, parse_case_info, read_case, write_case};
use anatomesh::template::template;
use anatomesh::volume::{load_label_volume, load_prob_volume, save_label_volume};
use anatomesh::zones::ZoneMap;
use anatomesh::AnatomyMesh;
use anyhow::{Context, Result};
use rayon::prelude::*;

use crate::artifacts::{self as art, AtPath, Layout, ManifestEntry};
use crate::config::RunConfig;

fn total(cfg: &RunConfig) -> u64 {
    (cfg.n_train + cfg.n_test) as u64
}

fn range_label(dir: &str, n: u64) -> String {
    if n == 0 {
        format!("{dir}/ (none)")
    } else {
        format!("{dir}/{}..{}", art::case_name(0), art::case_name(n - 1))
    }
}

/// Writes `config.toml` and this command's manifest section.
fn finish(layout: &Layout, command: &str, cfg: &RunConfig, inputs: Vec<String>, mut outputs: Vec<PathBuf>) -> Result<()> {
    let settings = layout.file(art::SETTINGS);
    art::write_file(&settings, cfg.settings_toml()?)?;
    outputs.push(settings);
    art::write_manifest(layout, ManifestEntry { command, cfg, inputs, outputs })?;
    log::info!("{command}: wrote {}", layout.root.display());
    Ok(())
}

fn per_case<T: Send>(n: u64, f: impl Fn(u64) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    (0..n).into_par_iter().map(f).collect()
}

pub fn synth_gen(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    let n = total(cfg);
    log::info!("synth-gen: {n} cases");
    let outputs = per_case(n, |i| {
        let dir = layout.case_dir(i);
        let case = gen_case(&cfg.synth, i).with_context(|| format!("case {i}"))?;
        write_case(&dir, &case).at(&dir)?;
        Ok(["labels.hdr", "labels.raw", "probs.hdr", "probs.raw", "case.txt"].map(|f| dir.join(f)))
    })?;
    finish(&layout, "synth-gen", cfg, vec![], outputs.into_iter().flatten().collect())
}

pub fn build_prototype(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    let n = cfg.n_train as u64;
    log::info!("build-prototype: {n} training organs");
    let organs = per_case(n, |i| {
        let dir = layout.case_dir(i);
        let labels = load_label_volume(dir.join("labels")).at(&dir.join("labels.hdr"))?;
        let info_path = dir.join("case.txt");
        let info = parse_case_info(&art::read_text(&info_path)?).at(&info_path)?;
        Ok((labels.foreground(), info.head_end))
    })?;
    let p = cfg.pipeline();
    let proto = prototype_from_cases(&organs, p.regions()?, &p.prototype)?;
    let path = layout.file(art::PROTOTYPE);
    art::write_file(&path, proto.to_obj_string())?;
    finish(&layout, "build-prototype", cfg, vec![range_label("cases", n)], vec![path])
}

pub fn fit_mesh(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    let proto = art::load_mesh(&layout.file(art::PROTOTYPE))?;
    let n = total(cfg);
    log::info!("fit-mesh: {n} cases");
    let outputs = per_case(n, |i| {
        let probs_path = layout.case_dir(i).join("probs");
        let probs = load_prob_volume(&probs_path).at(&probs_path)?;
        let fit = fit_case(&proto, &probs, &cfg.fit).at(&probs_path)?;
        let (mesh_path, trace_path) = (layout.fitted(i), layout.trace(i));
        art::write_file(&mesh_path, fit.mesh.to_obj_string())?;
        art::write_file(&trace_path, anatomesh::meshfit::trace_csv(&fit.trace))?;
        Ok([mesh_path, trace_path])
    })?;
    let inputs = vec![art::PROTOTYPE.to_string(), range_label("cases", n)];
    finish(&layout, "fit-mesh", cfg, inputs, outputs.into_iter().flatten().collect())
}

pub fn render_zones(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    let n = total(cfg);
    log::info!("render-zones: {n} cases");
    let outputs = per_case(n, |i| {
        let fitted = art::load_mesh(&layout.fitted(i))?;
        let probs_path = layout.case_dir(i).join("probs");
        let probs = load_prob_volume(&probs_path).at(&probs_path)?;
        let zmap = zones_for_case(&fitted, &probs).at(&layout.fitted(i))?;
        let base = layout.zones(i);
        if let Some(dir) = base.parent() {
            std::fs::create_dir_all(dir).with_context(|| dir.display().to_string())?;
        }
        save_label_volume(&base, &zmap.to_label_volume()?).at(&base)?;
        Ok([base.with_extension("hdr"), base.with_extension("raw")])
    })?;
    let inputs = vec![range_label("fitted", n), range_label("cases", n)];
    finish(&layout, "render-zones", cfg, inputs, outputs.into_iter().flatten().collect())
}

fn trace_iterations(path: &Path) -> Result<usize> {
    Ok(art::read_text(path)?.lines().count().saturating_sub(1))
}

pub fn pool_features(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    let p = cfg.pipeline();
    let n = total(cfg);
    log::info!("pool-features: {n} cases");
    let outputs = per_case(n, |i| {
        let dir = layout.case_dir(i);
        let case = read_case(&dir).at(&dir)?;
        let fitted = art::load_mesh(&layout.fitted(i))?;
        let zpath = layout.zones(i);
        let zones = load_label_volume(&zpath).at(&zpath.with_extension("hdr"))?;
        let iters = trace_iterations(&layout.trace(i))?;
        let record = case_record(&case, i, fitted, iters, &ZoneMap::from_label_volume(&zones), &p)
            .at(&zpath)?;
        art::write_record(&layout, &record)
    })?;
    let inputs = vec![range_label("cases", n), range_label("fitted", n), range_label("zones", n)];
    finish(&layout, "pool-features", cfg, inputs, outputs.into_iter().flatten().collect())
}

fn load_records(layout: &Layout, indices: std::ops::Range<u64>) -> Result<Vec<CaseRecord>> {
    indices.into_par_iter().map(|i| art::load_record(layout, i)).collect()
}

fn write_training(layout: &Layout, result: &anatomesh::graphnet::TrainResult) -> Result<Vec<PathBuf>> {
    let ckpt = layout.file(art::CHECKPOINT);
    save_checkpoint(&ckpt, &result.net).at(&ckpt)?;
    let log_path = layout.file(art::TRAIN_LOG);
    art::write_file(&log_path, result.log_csv())?;
    Ok(vec![ckpt, log_path])
}

pub fn train(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    let proto = art::load_mesh(&layout.file(art::PROTOTYPE))?;
    let records = load_records(&layout, 0..cfg.n_train as u64)?;
    let result = train_on_records(&cfg.pipeline(), &proto, &records)?;
    let outputs = write_training(&layout, &result)?;
    let inputs = vec![art::PROTOTYPE.to_string(), range_label("features", cfg.n_train as u64)];
    finish(&layout, "train", cfg, inputs, outputs)
}

fn write_classification(layout: &Layout, preds: &[anatomesh::pipeline::Prediction], threshold: usize) -> Result<Vec<PathBuf>> {
    let p = layout.file(art::PREDICTIONS);
    art::write_file(&p, predictions_csv(preds))?;
    let info = layout.file(art::CLASSIFY_INFO);
    art::write_file(&info, format!("pv_threshold {threshold}\n"))?;
    Ok(vec![p, info])
}

pub fn classify(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    let p = cfg.pipeline();
    let proto = art::load_mesh(&layout.file(art::PROTOTYPE))?;
    let ckpt = layout.file(art::CHECKPOINT);
    let net = load_checkpoint(&ckpt).at(&ckpt)?;
    let n_train = cfg.n_train as u64;
    let train_records = load_records(&layout, 0..n_train)?;
    let test_records = load_records(&layout, n_train..total(cfg))?;
    let threshold = select_threshold(&p, &train_records);
    let preds = classify_records(&net, &proto, &test_records, &p, threshold)?;
    let outputs = write_classification(&layout, &preds, threshold)?;
    let inputs = vec![
        art::PROTOTYPE.to_string(),
        art::CHECKPOINT.to_string(),
        range_label("features", total(cfg)),
    ];
    finish(&layout, "classify", cfg, inputs, outputs)
}

pub fn eval(cfg: &RunConfig) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    let p = cfg.pipeline();
    let path = layout.file(art::PREDICTIONS);
    let preds = art::parse_predictions(&art::read_text(&path)?).with_context(|| path.display().to_string())?;
    let n_train = cfg.n_train as u64;
    let test_records = load_records(&layout, n_train..total(cfg))?;
    let report = build_report(&p, &preds, &test_records)?;
    let outputs = art::write_reports(&layout, &p, &report, &preds)?;
    let inputs = vec![art::PREDICTIONS.to_string(), range_label("features", total(cfg))];
    finish(&layout, "eval", cfg, inputs, outputs)
}

/// Writes a mesh as OBJ plus a per-vertex CSV. Without `--mesh` the run's
/// prototype is exported; `--mesh template` exports the unit template.
pub fn export_mesh(cfg: &RunConfig, mesh: Option<&Path>, output: Option<&Path>) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    let (m, input): (AnatomyMesh, String) = match mesh {
        Some(p) if p == Path::new("template") => (template().clone(), "template".into()),
        Some(p) => (art::load_mesh(p)?, p.display().to_string()),
        None => {
            let p = layout.file(art::PROTOTYPE);
            (art::load_mesh(&p)?, art::PROTOTYPE.into())
        }
    };
    let obj = output.map_or_else(|| layout.file("export/mesh.obj"), Path::to_path_buf);
    art::write_file(&obj, m.to_obj_string())?;
    let mut csv = String::from("vertex,x,y,z,region\n");
    for (i, v) in m.vertices.iter().enumerate() {
        csv.push_str(&format!("{},{:?},{:?},{:?},{}\n", i + 1, v.x, v.y, v.z, m.region_of(i).name()));
    }
    let csv_path = obj.with_extension("csv");
    art::write_file(&csv_path, csv)?;
    finish(&layout, "export-mesh", cfg, vec![input], vec![obj, csv_path])
}

pub fn pipeline(cfg: &RunConfig, config_path: Option<&Path>) -> Result<()> {
    let layout = Layout::new(&cfg.out_dir);
    let p: PipelineConfig = cfg.pipeline();
    let out = run_pipeline(&p)?;
    let mut outputs = Vec::new();
    let proto = layout.file(art::PROTOTYPE);
    art::write_file(&proto, out.prototype.to_obj_string())?;
    outputs.push(proto);
    outputs.extend(write_training(&layout, &out.training)?);
    outputs.extend(write_classification(&layout, &out.predictions, out.pv_threshold)?);
    outputs.extend(art::write_reports(&layout, &p, &out.report, &out.predictions)?);
    print!("{}", out.report.to_text());
    let inputs = config_path.map(|c| vec![c.display().to_string()]).unwrap_or_default();
    finish(&layout, "pipeline", cfg, inputs, outputs)
}
