use std::collections::BTreeMap;
use std::io::Write;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use ppf_core::evaluation::{
    generate_scene, is_correct, occlusion_fraction, random_scene_spec, vsd_error, PoseRecord, SceneSpec,
    SyntheticObject, VSDParams,
};
use ppf_core::geometry::{exact_diameter, RigidTransform, Vec3};
use ppf_core::io::results::{load_results, summarize, summary_csv, summary_text, SummaryRow};
use ppf_core::io::{load_intrinsics, save_ply, GroundTruth, LoadedModel, PlyFormat, ResultRecord};
use ppf_core::pipeline::{train_model, DetectionResult, Detector, PipelineConfig, StageTimings};
use ppf_core::ppf::ModelTable;
use ppf_core::verification::{CameraIntrinsics, RenderModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::config::metadata;
use crate::scenes::{file_stem, load_scene, parent_name, save_scene, scene_ids, Geometry};
use crate::{BenchArgs, DetectArgs, EvalArgs, SynthArgs, TrainArgs};

fn emit(lines: &[Value]) -> Result<()> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for l in lines {
        serde_json::to_writer(&mut out, l)?;
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn default_camera() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 572.4,
        fy: 573.6,
        cx: 325.3,
        cy: 242.0,
        width: 640,
        height: 480,
    }
}

fn load_table(path: &std::path::Path) -> Result<ModelTable> {
    ModelTable::load(path).with_context(|| format!("model table {}", path.display()))
}

fn load_mesh_arg(mesh: Option<&str>, leaf_frac: f64) -> Result<Option<Geometry>> {
    mesh.map(|m| {
        let g = Geometry::load(m, leaf_frac)?;
        if g.mesh().is_none() {
            bail!("{m} has no faces; --mesh needs a triangle mesh");
        }
        Ok(g)
    })
    .transpose()
}

/// Result record plus the detection details that are not part of the
/// results file format.
fn detection_line(scene_id: &str, object_id: &str, r: &DetectionResult, vsd: Option<(f64, &VSDParams)>) -> Result<Value> {
    let found = r.pose.is_some();
    let record = ResultRecord {
        scene_id: scene_id.to_owned(),
        object_id: object_id.to_owned(),
        pose: r.pose.as_ref().map(PoseRecord::from),
        score: found.then_some(r.score),
        votes: found.then_some(r.votes),
        vsd_error: vsd.map(|(e, _)| e),
        correct: vsd.map(|(e, p)| is_correct(e, p)),
    };
    let mut v = serde_json::to_value(record)?;
    let obj = v.as_object_mut().expect("record is an object");
    obj.insert("low_support".into(), json!(r.low_support));
    obj.insert("verdicts".into(), serde_json::to_value(r.verdicts)?);
    obj.insert("stats".into(), serde_json::to_value(r.stats)?);
    obj.insert("timings".into(), serde_json::to_value(r.timings)?);
    Ok(v)
}

pub fn train(a: &TrainArgs, mut cfg: PipelineConfig) -> Result<ExitCode> {
    if let Some(f) = a.leaf_frac {
        cfg.train.leaf_frac = f;
    }
    cfg.validate()?;
    let model = match Geometry::load(&a.model, cfg.train.leaf_frac)? {
        Geometry::Mesh(mesh) => {
            let spacing = 0.01 * exact_diameter(&mesh.vertices);
            let cloud = mesh.sample_surface(spacing)?;
            LoadedModel { cloud, mesh: Some(mesh) }
        }
        Geometry::Cloud(cloud, _) => LoadedModel { cloud, mesh: None },
    };
    let table = train_model(&model, &cfg.train)?;
    table.save(&a.out).with_context(|| format!("writing {}", a.out.display()))?;
    let summary = json!({
        "table": {
            "path": a.out,
            "model_points": table.model().len(),
            "entries": table.len(),
            "keys": table.key_count(),
            "leaf": table.leaf(),
            "diameter": table.diameter(),
        }
    });
    emit(&[metadata("train", &cfg, json!({ "model": a.model })), summary])?;
    eprintln!(
        "trained {}: {} model points, {} pairs under {} keys, leaf {:.3} mm, diameter {:.3} mm",
        a.model,
        table.model().len(),
        table.len(),
        table.key_count(),
        table.leaf(),
        table.diameter()
    );
    Ok(ExitCode::SUCCESS)
}

pub fn detect(a: &DetectArgs, mut cfg: PipelineConfig) -> Result<ExitCode> {
    if let Some(s) = a.depth_scale {
        cfg.depth_scale = s;
    }
    cfg.validate()?;
    let table = load_table(&a.table)?;
    let mesh = load_mesh_arg(a.mesh.as_deref(), cfg.train.leaf_frac)?;
    let (depth, cam) = ppf_core::io::load_depth(&a.depth, cfg.depth_scale, &a.intrinsics)?;
    let detector = Detector::new(table, mesh.and_then(|g| g.mesh().cloned()), &cfg)?;
    let r = detector.detect(&depth, &cam)?;

    let scene_id = a
        .scene_id
        .clone()
        .or_else(|| parent_name(&a.depth))
        .unwrap_or_else(|| "scene".into());
    let object_id = a.object_id.clone().unwrap_or_else(|| file_stem(&a.table));
    let meta = metadata(
        "detect",
        detector.config(),
        json!({ "table": a.table, "depth": a.depth, "intrinsics": a.intrinsics, "mesh": a.mesh }),
    );
    emit(&[meta, detection_line(&scene_id, &object_id, &r, None)?])?;
    match r.pose {
        Some(p) => {
            let t = p.translation;
            eprintln!(
                "{scene_id}: {object_id} at ({:.1}, {:.1}, {:.1}) mm, score {:.3}, {} votes, {:.0} ms",
                t.x, t.y, t.z, r.score, r.votes, r.timings.total_ms
            );
            Ok(ExitCode::SUCCESS)
        }
        None => {
            eprintln!(
                "{scene_id}: no detection ({} hypotheses, {} rejected by consistency, {} by edges)",
                r.stats.clustered_hypotheses, r.stats.rejected_consistency, r.stats.rejected_edge
            );
            Ok(ExitCode::from(1))
        }
    }
}

fn bbox_center(g: &Geometry) -> Vec3 {
    let pts: &[Vec3] = match g {
        Geometry::Mesh(m) => &m.vertices,
        Geometry::Cloud(c, _) => c.points(),
    };
    let lo = pts.iter().fold(Vec3::repeat(f64::INFINITY), |m, p| m.inf(p));
    let hi = pts.iter().fold(Vec3::repeat(f64::NEG_INFINITY), |m, p| m.sup(p));
    (lo + hi) / 2.0
}

fn write_model_ply(g: &Geometry, path: &std::path::Path) -> Result<()> {
    match g {
        Geometry::Mesh(m) => save_ply(path, &m.vertices, None, &m.faces, PlyFormat::Ascii),
        Geometry::Cloud(c, _) => save_ply(path, c.points(), Some(c.normals()), &[], PlyFormat::Ascii),
    }
    .with_context(|| format!("writing {}", path.display()))
}

fn synth_one(
    out: &std::path::Path,
    scene_id: &str,
    spec: &SceneSpec,
    model: &RenderModel<'_>,
    depth_scale: f64,
) -> Result<Value> {
    let (depth, gt) = generate_scene(spec, model)?;
    let sd = out.join(scene_id);
    let gt_rec = GroundTruth {
        object_id: spec.model.clone(),
        pose: PoseRecord::from(&gt),
    };
    save_scene(&sd, &depth, &spec.camera, &gt_rec, depth_scale)?;
    std::fs::write(sd.join("spec.yaml"), serde_yaml::to_string(spec)?)?;
    Ok(json!({
        "scene_id": scene_id,
        "object_id": spec.model,
        "pose": gt_rec.pose,
        "occlusion": occlusion_fraction(spec, model),
        "measured_pixels": depth.measured_count(),
    }))
}

pub fn synth(a: &SynthArgs, cfg: PipelineConfig) -> Result<ExitCode> {
    let mut lines = Vec::new();
    let mut seed = a.seed.unwrap_or(cfg.seed);
    let model_spec = |id: &str| -> Result<String> {
        match &a.model {
            Some(m) => Ok(m.clone()),
            None if id == SyntheticObject::ID => Ok(format!("builtin:{id}")),
            None => bail!("spec model `{id}` is not builtin; pass --model"),
        }
    };
    let geometry;
    if let Some(path) = &a.spec {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut spec: SceneSpec =
            serde_yaml::from_str(&text).with_context(|| format!("scene spec {}", path.display()))?;
        if let Some(s) = a.seed {
            spec.seed = s;
        }
        seed = spec.seed;
        geometry = Geometry::load(&model_spec(&spec.model)?, cfg.train.leaf_frac)?;
        lines.push(synth_one(&a.out, &a.scene_id, &spec, &geometry.render_model(), cfg.depth_scale)?);
    } else {
        let n = a.random.unwrap_or(0);
        let id = a.model.as_ref().map_or(SyntheticObject::ID.to_owned(), |m| {
            m.strip_prefix("builtin:").map_or_else(|| file_stem(std::path::Path::new(m)), str::to_owned)
        });
        geometry = Geometry::load(&model_spec(&id)?, cfg.train.leaf_frac)?;
        let cam = match &a.intrinsics {
            Some(p) => load_intrinsics(p)?,
            None => default_camera(),
        };
        let model = geometry.render_model();
        let center = bbox_center(&geometry);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for k in 0..n {
            let spec = random_scene_spec(&mut rng, &id, &model, &center, &cam, a.noise, a.backdrop, a.occluder)?;
            lines.push(synth_one(&a.out, &format!("{k:06}"), &spec, &model, cfg.depth_scale)?);
        }
    }
    if let Some(p) = &a.model_out {
        write_model_ply(&geometry, p)?;
    }
    let mut all = vec![metadata("synth", &cfg, json!({ "seed": seed, "out": a.out }))];
    all.extend(lines.iter().cloned());
    emit(&all)?;
    eprintln!("wrote {} scene(s) to {}", lines.len(), a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn summary_lines(rows: &[SummaryRow], csv: Option<&std::path::Path>) -> Result<Value> {
    if let Some(p) = csv {
        std::fs::write(p, summary_csv(rows)).with_context(|| format!("writing {}", p.display()))?;
    }
    eprint!("{}", summary_text(rows));
    Ok(json!({ "summary": rows }))
}

pub fn eval_vsd(a: &EvalArgs, cfg: PipelineConfig) -> Result<ExitCode> {
    let (_, mut records) = load_results(&a.results).with_context(|| format!("results {}", a.results.display()))?;
    if records.is_empty() {
        bail!("{} holds no result records", a.results.display());
    }
    let geometry = Geometry::load(&a.model, cfg.train.leaf_frac)?;
    let model = geometry.render_model();
    let mut cache = BTreeMap::new();
    for r in &mut records {
        if !cache.contains_key(&r.scene_id) {
            let s = load_scene(&a.scenes, &r.scene_id, cfg.depth_scale)?;
            cache.insert(r.scene_id.clone(), s);
        }
        let scene = &cache[&r.scene_id];
        let Some(gt) = &scene.gt else {
            bail!("scene {} has no ground truth", r.scene_id);
        };
        let gt_pose = RigidTransform::from(gt.pose);
        r.vsd_error = r
            .pose
            .map(|p| vsd_error(&RigidTransform::from(p), &gt_pose, &model, &scene.depth, &scene.cam, &cfg.vsd));
        r.correct = Some(r.vsd_error.is_some_and(|e| is_correct(e, &cfg.vsd)));
    }
    let rows = summarize(&records, &cfg.vsd)?;
    let mut lines = vec![metadata("eval-vsd", &cfg, json!({ "results": a.results, "scenes": a.scenes, "model": a.model }))];
    for r in &records {
        lines.push(serde_json::to_value(r)?);
    }
    lines.push(summary_lines(&rows, a.csv.as_deref())?);
    emit(&lines)?;
    Ok(ExitCode::SUCCESS)
}

fn mean_timings(t: &[StageTimings]) -> StageTimings {
    let n = t.len().max(1) as f64;
    let sum = |f: fn(&StageTimings) -> f64| t.iter().map(f).sum::<f64>() / n;
    StageTimings {
        scene_ms: sum(|t| t.scene_ms),
        matching_ms: sum(|t| t.matching_ms),
        clustering_ms: sum(|t| t.clustering_ms),
        verification_ms: sum(|t| t.verification_ms),
        total_ms: sum(|t| t.total_ms),
    }
}

pub fn bench(a: &BenchArgs, cfg: PipelineConfig) -> Result<ExitCode> {
    cfg.validate()?;
    let table = load_table(&a.table)?;
    let mesh = load_mesh_arg(a.mesh.as_deref(), cfg.train.leaf_frac)?;
    let object_id = a.object_id.clone().unwrap_or_else(|| file_stem(&a.table));
    let detector = Detector::new(table, mesh.and_then(|g| g.mesh().cloned()), &cfg)?;
    let vm = detector.verify_model();
    let model = vm.render_model();

    let mut ids = scene_ids(&a.scenes)?;
    if let Some(n) = a.limit {
        ids.truncate(n);
    }
    let mut lines = vec![metadata(
        "bench",
        detector.config(),
        json!({ "table": a.table, "scenes": a.scenes, "mesh": a.mesh }),
    )];
    let mut timings = Vec::new();
    let mut records = Vec::new();
    for id in &ids {
        let scene = load_scene(&a.scenes, id, cfg.depth_scale)?;
        let r = detector.detect(&scene.depth, &scene.cam)?;
        let e = match (&scene.gt, r.pose) {
            (Some(gt), Some(p)) => {
                Some(vsd_error(&p, &RigidTransform::from(gt.pose), &model, &scene.depth, &scene.cam, &cfg.vsd))
            }
            (Some(_), None) => None,
            (None, _) => {
                let line = detection_line(id, &object_id, &r, None)?;
                lines.push(line);
                timings.push(r.timings);
                continue;
            }
        };
        let line = detection_line(id, &object_id, &r, e.map(|e| (e, &cfg.vsd)))?;
        records.push(serde_json::from_value::<ResultRecord>(line.clone())?);
        lines.push(line);
        timings.push(r.timings);
    }
    let mean = mean_timings(&timings);
    lines.push(json!({ "bench": { "scenes": ids.len(), "mean_timings_ms": mean } }));
    eprintln!(
        "{} scenes, mean per scene: scene {:.0} ms, matching {:.0} ms, clustering {:.0} ms, verification {:.0} ms, total {:.0} ms",
        ids.len(),
        mean.scene_ms,
        mean.matching_ms,
        mean.clustering_ms,
        mean.verification_ms,
        mean.total_ms
    );
    if !records.is_empty() {
        let rows = summarize(&records, &cfg.vsd)?;
        lines.push(summary_lines(&rows, a.csv.as_deref())?);
    }
    emit(&lines)?;
    Ok(ExitCode::SUCCESS)
}
