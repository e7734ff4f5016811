//! Subcommand implementations. Every command writes a `run_manifest.json`
//! run record; the product files embed only the manifest's deterministic
//! identity, so reruns with the same identity are byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde_json::{json, Value};

use otmask_core::io;
use otmask_core::losses::{
    boundary_affinity_loss, build_mst, combine_semantic_losses, finite_difference_check_at,
    lab_affinity_loss, partial_cross_entropy, rgb_tree_loss, LossConfig,
};
use otmask_core::maps::{low_level_boundary, BoundaryMap, PointAnnotation, SemanticMap};
use otmask_core::metrics::{mean_target_iou, panoptic_quality};
use otmask_core::pipeline::{
    minimum_cost_baseline, run_pipeline, BoundaryCombine, PipelineConfig,
};
use otmask_core::report::to_stable_json;
use otmask_core::supply::SupplyScheme;
use otmask_core::synth::{synth_scene, SceneSpec};

use crate::manifest::{RunManifest, StageTimer};
use crate::{CompareArgs, EvaluateArgs, GenerateArgs, LossesArgs, PipelineFlags, SynthArgs};

/// Applies a `key = value` config file, then the explicit flags.
fn resolve_pipeline_config(flags: &PipelineFlags) -> anyhow::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &flags.config {
        let text = fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("{}:{}: expected key = value", path.display(), lineno + 1))?;
            let (key, value) = (key.trim(), value.trim());
            let parse_err = || format!("{}:{}: bad value for {key}", path.display(), lineno + 1);
            match key {
                "beta" => cfg.beta = value.parse().with_context(parse_err)?,
                "lambda" => cfg.lambda = value.parse().with_context(parse_err)?,
                "sinkhorn_iters" => {
                    cfg.sinkhorn_iterations = value.parse().with_context(parse_err)?
                }
                "scheme" => cfg.supply_scheme = SupplyScheme::parse(value)?,
                "centroid_iters" => {
                    cfg.centroid_iterations = value.parse().with_context(parse_err)?
                }
                "boundary_combine" => cfg.boundary_combine = BoundaryCombine::parse(value)?,
                "cost_from_centroids" => {
                    cfg.cost_from_centroids = value.parse().with_context(parse_err)?
                }
                "log_domain" => cfg.log_domain = value.parse().with_context(parse_err)?,
                "normalize_cost" => cfg.normalize_cost = value.parse().with_context(parse_err)?,
                "edge_floor" => cfg.edge_floor = value.parse().with_context(parse_err)?,
                other => bail!("{}:{}: unknown key {other:?}", path.display(), lineno + 1),
            }
        }
    }
    if let Some(v) = flags.beta {
        cfg.beta = v;
    }
    if let Some(v) = flags.lambda {
        cfg.lambda = v;
    }
    if let Some(v) = flags.sinkhorn_iters {
        cfg.sinkhorn_iterations = v;
    }
    if let Some(v) = &flags.scheme {
        cfg.supply_scheme = SupplyScheme::parse(v)?;
    }
    if let Some(v) = flags.centroid_iters {
        cfg.centroid_iterations = v;
    }
    if let Some(v) = &flags.boundary_combine {
        cfg.boundary_combine = BoundaryCombine::parse(v)?;
    }
    if flags.cost_from_centroids {
        cfg.cost_from_centroids = true;
    }
    if flags.log_domain {
        cfg.log_domain = true;
    }
    if let Some(v) = flags.normalize_cost {
        cfg.normalize_cost = v;
    }
    if let Some(v) = flags.edge_floor {
        cfg.edge_floor = v;
    }
    Ok(cfg)
}

struct PipelineInputs {
    semantic: SemanticMap,
    boundary_high: BoundaryMap,
    boundary_low: BoundaryMap,
    points: Vec<PointAnnotation>,
}

/// Loads the semantic map, boundary maps (zeros or the gradient proxy when
/// files are absent) and annotations.
fn load_pipeline_inputs(
    semantic: &Path,
    boundary_high: Option<&Path>,
    boundary_low: Option<&Path>,
    image: Option<&Path>,
    points: &Path,
    manifest: &mut RunManifest,
) -> anyhow::Result<PipelineInputs> {
    manifest.input("semantic", semantic);
    manifest.input("points", points);
    let semantic = io::read_semantic_map(semantic)?;
    let dims = semantic.dims();
    let boundary_high = match boundary_high {
        Some(path) => {
            manifest.input("boundary_high", path);
            io::read_boundary_map(path)?
        }
        None => BoundaryMap::zeros(dims.height, dims.width)?,
    };
    let boundary_low = match (boundary_low, image) {
        (Some(path), _) => {
            manifest.input("boundary_low", path);
            io::read_boundary_map(path)?
        }
        (None, Some(img_path)) => {
            manifest.input("image", img_path);
            low_level_boundary(&io::read_image(img_path)?)
        }
        (None, None) => BoundaryMap::zeros(dims.height, dims.width)?,
    };
    let points = io::read_points(points, dims)?;
    Ok(PipelineInputs {
        semantic,
        boundary_high,
        boundary_low,
        points,
    })
}

fn write_report_file(path: &Path, manifest: &RunManifest, results: Value) -> anyhow::Result<()> {
    let report = json!({
        "manifest": manifest.identity(),
        "results": results,
    });
    fs::write(path, to_stable_json(&report))
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn ensure_out_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn generate(args: GenerateArgs, jobs: usize) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("generate");
    manifest.jobs = jobs;
    let config = resolve_pipeline_config(&args.pipeline)?;
    manifest.pipeline_config = Some(config);

    let mut timer = StageTimer::start();
    let inputs = load_pipeline_inputs(
        &args.semantic,
        args.boundary_high.as_deref(),
        args.boundary_low.as_deref(),
        args.image.as_deref(),
        &args.points,
        &mut manifest,
    )?;
    manifest.seal();
    timer.record(&mut manifest, "load");

    let run = run_pipeline(
        &inputs.semantic,
        &inputs.boundary_high,
        &inputs.boundary_low,
        &inputs.points,
        &config,
    )?;
    timer.record(&mut manifest, "pipeline");

    ensure_out_dir(&args.out_dir)?;
    io::write_mask(&run.mask, &args.out_dir.join("mask.pgm"))?;
    write_report_file(
        &args.out_dir.join("diagnostics.json"),
        &manifest,
        serde_json::to_value(&run.diagnostics)?,
    )?;
    timer.record(&mut manifest, "write");
    manifest.write(&args.out_dir.join("run_manifest.json"))?;
    Ok(())
}

pub fn evaluate(args: EvaluateArgs, jobs: usize) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("evaluate");
    manifest.jobs = jobs;
    manifest.input("pred", &args.pred);
    manifest.input("gt", &args.gt);
    manifest.seal();
    let mut timer = StageTimer::start();
    let pred = io::read_mask(&args.pred)?;
    let gt = io::read_mask(&args.gt)?;
    timer.record(&mut manifest, "load");
    let score = panoptic_quality(&pred, &gt)?;
    timer.record(&mut manifest, "score");
    write_report_file(&args.out, &manifest, serde_json::to_value(&score)?)?;
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            manifest.write(&parent.join("run_manifest.json"))?;
        } else {
            manifest.write(Path::new("run_manifest.json"))?;
        }
    }
    Ok(())
}

pub fn compare(args: CompareArgs, jobs: usize) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("compare");
    manifest.jobs = jobs;
    let config = resolve_pipeline_config(&args.pipeline)?;
    manifest.pipeline_config = Some(config);

    let mut timer = StageTimer::start();
    let inputs = load_pipeline_inputs(
        &args.semantic,
        args.boundary_high.as_deref(),
        args.boundary_low.as_deref(),
        args.image.as_deref(),
        &args.points,
        &mut manifest,
    )?;
    let gt = match &args.gt {
        Some(path) => {
            manifest.input("gt", path);
            Some(io::read_mask(path)?)
        }
        None => None,
    };
    manifest.seal();
    timer.record(&mut manifest, "load");

    let dims = inputs.semantic.dims();
    let run = run_pipeline(
        &inputs.semantic,
        &inputs.boundary_high,
        &inputs.boundary_low,
        &inputs.points,
        &config,
    )?;
    let mc_mask = minimum_cost_baseline(&run.point_cost_matrix, &inputs.points, dims)?;
    timer.record(&mut manifest, "pipeline");

    let agreement = run
        .mask
        .targets()
        .iter()
        .zip(mc_mask.targets())
        .filter(|(a, b)| a == b)
        .count() as f64
        / dims.pixels() as f64;

    let mut results = json!({
        "ot": {
            "per_target_pixels": run.diagnostics.per_target_pixels,
            "supplies": run.diagnostics.supplies,
            "transport_cost": run.diagnostics.transport_cost,
            "marginal_error": run.diagnostics.marginal_error,
        },
        "mc": {
            "per_target_pixels": mc_mask.pixel_counts(),
        },
        "ot_mc_agreement": agreement,
    });
    if let Some(gt) = &gt {
        let ot_iou = mean_target_iou(&run.mask, gt)?;
        let mc_iou = mean_target_iou(&mc_mask, gt)?;
        let ot_pq = panoptic_quality(&run.mask, gt)?;
        let mc_pq = panoptic_quality(&mc_mask, gt)?;
        results.as_object_mut().unwrap().insert(
            "vs_gt".into(),
            json!({
                "ot_mean_iou": ot_iou,
                "mc_mean_iou": mc_iou,
                "mean_iou_delta": ot_iou - mc_iou,
                "ot_pq": ot_pq.pq,
                "mc_pq": mc_pq.pq,
                "pq_delta": ot_pq.pq - mc_pq.pq,
            }),
        );
    }

    ensure_out_dir(&args.out_dir)?;
    io::write_mask(&run.mask, &args.out_dir.join("mask_ot.pgm"))?;
    io::write_mask(&mc_mask, &args.out_dir.join("mask_mc.pgm"))?;
    write_report_file(&args.out_dir.join("compare_report.json"), &manifest, results)?;
    timer.record(&mut manifest, "write");
    manifest.write(&args.out_dir.join("run_manifest.json"))?;
    Ok(())
}

pub fn synth(args: SynthArgs, jobs: usize) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("synth");
    manifest.jobs = jobs;
    manifest.input("spec", &args.spec);
    manifest.seed = Some(args.seed);
    manifest.seal();
    let mut timer = StageTimer::start();

    let text = fs::read_to_string(&args.spec)
        .with_context(|| format!("reading scene spec {}", args.spec.display()))?;
    let spec = SceneSpec::parse(&text)?;
    let scene = synth_scene(&spec, args.seed)?;
    timer.record(&mut manifest, "synth");

    ensure_out_dir(&args.out_dir)?;
    io::write_image(&scene.image, &args.out_dir.join("image.pfm"))?;
    io::write_semantic_map(&scene.semantic, &args.out_dir.join("semantic.pfm"))?;
    io::write_boundary_map(&scene.boundary, &args.out_dir.join("boundary_high.pfm"))?;
    io::write_boundary_map(
        &low_level_boundary(&scene.image),
        &args.out_dir.join("boundary_low.pfm"),
    )?;
    io::write_points(&scene.points, &args.out_dir.join("points.txt"))?;
    io::write_mask(&scene.gt_mask, &args.out_dir.join("gt_mask.pgm"))?;
    timer.record(&mut manifest, "write");
    manifest.write(&args.out_dir.join("run_manifest.json"))?;
    Ok(())
}

pub fn losses(args: LossesArgs, jobs: usize) -> anyhow::Result<()> {
    let mut manifest = RunManifest::new("losses");
    manifest.jobs = jobs;
    manifest.input("semantic", &args.semantic);
    manifest.input("image", &args.image);
    manifest.input("points", &args.points);
    manifest.input("mask", &args.mask);
    manifest.input("boundary_high", &args.boundary_high);
    let mut config = LossConfig::default();
    if let Some(v) = args.alpha1 {
        config.alpha1 = v;
    }
    if let Some(v) = args.alpha2 {
        config.alpha2 = v;
    }
    if let Some(v) = args.tau {
        config.tau = v;
    }
    if let Some(v) = args.theta1 {
        config.theta1 = v;
    }
    if let Some(v) = args.theta2 {
        config.theta2 = v;
    }
    manifest.loss_config = Some(config);
    manifest.seal();
    let mut timer = StageTimer::start();

    let semantic = io::read_semantic_map(&args.semantic)?;
    let image = io::read_image(&args.image)?;
    let points = io::read_points(&args.points, semantic.dims())?;
    let mask = io::read_mask(&args.mask)?;
    let boundary = io::read_boundary_map(&args.boundary_high)?;
    timer.record(&mut manifest, "load");

    let tree = build_mst(&image);
    let (l_partial, _) = partial_cross_entropy(&semantic, &points)?;
    let (l_lab, _) = lab_affinity_loss(&semantic, &image, &config)?;
    let (l_rgb, _) = rgb_tree_loss(&semantic, &tree, &config)?;
    let (l_boundary, _, pair_counts) = boundary_affinity_loss(&boundary, &mask)?;
    let total = combine_semantic_losses(l_partial, l_lab, l_rgb, &config);
    timer.record(&mut manifest, "losses");

    // subsampled gradient checks; the sampled coordinates are deterministic
    let sem_dims = semantic.dims();
    let (h, w, c) = (sem_dims.height, sem_dims.width, semantic.channels());
    let sem_coords = sample_coords(sem_dims.pixels() * c, args.fd_coords, args.fd_seed);
    let b_coords = sample_coords(sem_dims.pixels(), args.fd_coords, args.fd_seed + 1);
    let step = args.fd_step;
    let active = |grad: &[f64], coords: &[usize]| {
        coords.iter().filter(|&&i| grad[i].abs() > 1e-8).count()
    };
    let (_, g_partial) = partial_cross_entropy(&semantic, &points)?;
    let (_, g_lab) = lab_affinity_loss(&semantic, &image, &config)?;
    let (_, g_rgb) = rgb_tree_loss(&semantic, &tree, &config)?;
    let (_, g_boundary, _) = boundary_affinity_loss(&boundary, &mask)?;
    let checked = json!({
        "partial_cross_entropy": active(&g_partial, &sem_coords),
        "lab_affinity": active(&g_lab, &sem_coords),
        "rgb_tree": active(&g_rgb, &sem_coords),
        "boundary_affinity": active(&g_boundary, &b_coords),
    });
    let fd_partial = finite_difference_check_at(
        |x| {
            let m = SemanticMap::new(h, w, c, x.to_vec()).expect("finite perturbation");
            partial_cross_entropy(&m, &points).expect("valid inputs")
        },
        semantic.values(),
        step,
        &sem_coords,
    )?;
    let fd_lab = finite_difference_check_at(
        |x| {
            let m = SemanticMap::new(h, w, c, x.to_vec()).expect("finite perturbation");
            lab_affinity_loss(&m, &image, &config).expect("valid inputs")
        },
        semantic.values(),
        step,
        &sem_coords,
    )?;
    let fd_rgb = finite_difference_check_at(
        |x| {
            let m = SemanticMap::new(h, w, c, x.to_vec()).expect("finite perturbation");
            rgb_tree_loss(&m, &tree, &config).expect("valid inputs")
        },
        semantic.values(),
        step,
        &sem_coords,
    )?;
    let fd_boundary = finite_difference_check_at(
        |x| {
            let b = BoundaryMap::new(h, w, x.to_vec()).expect("finite perturbation");
            let (l, g, _) = boundary_affinity_loss(&b, &mask).expect("valid inputs");
            (l, g)
        },
        boundary.values(),
        step,
        &b_coords,
    )?;
    timer.record(&mut manifest, "gradient_checks");

    let results = json!({
        "losses": {
            "partial_cross_entropy": l_partial,
            "lab_affinity": l_lab,
            "rgb_tree": l_rgb,
            "boundary_affinity": l_boundary,
            "semantic_total": total,
        },
        "boundary_pairs": {
            "same_thing": pair_counts.same_thing,
            "same_stuff": pair_counts.same_stuff,
            "different": pair_counts.different,
        },
        "gradient_checks": {
            "step": step,
            "coords_per_loss": args.fd_coords,
            "coords_with_gradient": checked,
            "max_relative_error": {
                "partial_cross_entropy": fd_partial,
                "lab_affinity": fd_lab,
                "rgb_tree": fd_rgb,
                "boundary_affinity": fd_boundary,
            },
        },
    });
    write_report_file(&args.out, &manifest, results)?;
    if let Some(parent) = args.out.parent() {
        let dir: PathBuf = if parent.as_os_str().is_empty() {
            PathBuf::from(".")
        } else {
            parent.to_path_buf()
        };
        manifest.write(&dir.join("run_manifest.json"))?;
    }
    Ok(())
}

/// Deterministic sample of distinct coordinates below `len`.
fn sample_coords(len: usize, want: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut all: Vec<usize> = (0..len).collect();
    all.shuffle(&mut rng);
    all.truncate(want.min(len));
    all.sort_unstable();
    all
}
