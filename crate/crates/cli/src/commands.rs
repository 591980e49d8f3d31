use std::path::{Path, PathBuf};

use geoloc::evaluation::{
    average_precision, ground_truth_in_reference, matched_translations, mot_csv, mot_metrics, pr_csv, pr_curve,
    predictions_in_reference, translation_error_stats, EvalReport, GeoCriterion,
};
use geoloc::matching::{load_checkpoint, save_checkpoint, train_matcher, Affinity, GeometricAffinity, MatcherConfig, MatchingSample, SoftmaxAxis};
use geoloc::scene::{export_mot, gt_rows, load_scene, read_mot_file, save_scene, write_atomic, SceneSequence};
use geoloc::simulator::{generate_scene, make_matching_dataset, SimConfig};
use geoloc::tracker::{track_scene, Aggregation, GeoReport, TrackerConfig};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{require_file, CliError};
use crate::manifest::ManifestBuilder;
use crate::plot::pr_svg;
use crate::{AffinityArg, AggregationArg, AxisArg, Cli, CriterionArg, DatasetArgs, EvaluateArgs, PlotArgs, SimulateArgs, TrackArgs, TrainArgs};

fn load_config<T: DeserializeOwned + Default>(cli: &Cli) -> Result<T, CliError> {
    let Some(path) = &cli.config else {
        return Ok(T::default());
    };
    require_file(path, "config")?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| CliError::Usage(format!("{}: {}: {}", path.display(), e.path(), e.inner())))
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("configuration serializes")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn read_json<T: DeserializeOwned>(path: &Path, what: &str) -> Result<T, CliError> {
    require_file(path, what)?;
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn simulate(cli: &Cli, args: &SimulateArgs) -> Result<(), CliError> {
    let mut config: SimConfig = load_config(cli)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    if args.scenes == 0 {
        return Err(CliError::Usage("--scenes must be at least 1".into()));
    }
    let mut manifest = ManifestBuilder::new("simulate");
    manifest.config = to_value(&config);
    manifest.seed = Some(config.seed);
    let named = !config.scene_id.is_empty();
    for k in 0..args.scenes {
        let mut c = config.clone();
        c.seed = config.seed.wrapping_add(k as u64);
        if named && args.scenes > 1 {
            c.scene_id = format!("{}-{k}", config.scene_id);
        }
        let scene = generate_scene(&c)?;
        let path = cli.out.join(format!("{}.json", scene.scene_id));
        save_scene(&scene, &path)?;
        log::info!("wrote {}", path.display());
        manifest.outputs.push(path);
    }
    manifest.finish(&cli.out)?;
    Ok(())
}

pub fn dataset(cli: &Cli, args: &DatasetArgs) -> Result<(), CliError> {
    let mut manifest = ManifestBuilder::new("dataset");
    let seed = cli.seed.unwrap_or(0);
    manifest.seed = Some(seed);
    manifest.config = serde_json::json!({
        "pairs_per_scene": args.pairs_per_scene,
        "n_max": args.n_max,
        "capacity": args.capacity,
        "depth_scale": args.depth_scale,
    });
    let scenes: Vec<SceneSequence> = args
        .scenes
        .iter()
        .map(|p| {
            require_file(p, "scene")?;
            Ok(load_scene(p)?)
        })
        .collect::<Result<_, CliError>>()?;
    manifest.inputs = args.scenes.clone();
    let data = make_matching_dataset(&scenes, args.n_max, args.pairs_per_scene, args.capacity, args.depth_scale, seed)?;
    let path = cli.out.join("dataset.json");
    write_json(&path, &data)?;
    manifest.outputs.push(path);
    manifest.finish(&cli.out)?;
    Ok(())
}

pub fn train(cli: &Cli, args: &TrainArgs) -> Result<(), CliError> {
    let mut config: MatcherConfig = load_config(cli)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(l) = args.lambda {
        config.lambda = l;
    }
    if let Some(axis) = args.softmax_axis {
        config.softmax_axis = match axis {
            AxisArg::Candidates => SoftmaxAxis::Candidates,
            AxisArg::Literal => SoftmaxAxis::Literal,
        };
    }
    config.validate()?;
    let data: Vec<MatchingSample> = read_json(&args.dataset, "dataset")?;
    let resume = match &args.resume {
        Some(p) => {
            require_file(p, "checkpoint")?;
            Some(load_checkpoint(p)?)
        }
        None => None,
    };
    let mut manifest = ManifestBuilder::new("train");
    manifest.config = to_value(&config);
    manifest.seed = Some(config.seed);
    manifest.inputs.push(args.dataset.clone());
    manifest.inputs.extend(args.resume.clone());
    let outcome = train_matcher(&data, &config, resume)?;
    let ck_path = cli.out.join("checkpoint.json");
    save_checkpoint(&outcome.checkpoint, &ck_path)?;
    let mut csv = String::from("epoch,affinity_loss,pose_loss,joint_loss,accuracy,learning_rate\n");
    for h in &outcome.history {
        csv.push_str(&format!("{},{},{},{},{},{}\n", h.epoch, h.affinity_loss, h.pose_loss, h.joint_loss, h.accuracy, h.learning_rate));
    }
    let metrics = cli.out.join("metrics.csv");
    write_atomic(&metrics, csv.as_bytes())?;
    manifest.outputs.extend([ck_path, metrics]);
    manifest.finish(&cli.out)?;
    Ok(())
}

pub fn track(cli: &Cli, args: &TrackArgs) -> Result<(), CliError> {
    let mut config: TrackerConfig = load_config(cli)?;
    if let Some(k) = args.min_instances {
        config.min_instances = k;
    }
    if let Some(a) = args.aggregation {
        config.aggregation = match a {
            AggregationArg::Median => Aggregation::Median,
            AggregationArg::Mean => Aggregation::Mean,
            AggregationArg::InverseDepth => Aggregation::InverseDepth,
        };
    }
    if config.buffer == 0 {
        return Err(CliError::Usage("tracker buffer must be at least 1".into()));
    }
    require_file(&args.scene, "scene")?;
    let mut manifest = ManifestBuilder::new("track");
    manifest.config = to_value(&config);
    manifest.inputs.push(args.scene.clone());
    let affinity: Box<dyn Affinity> = match args.affinity {
        AffinityArg::Learned => {
            let path = args.checkpoint.as_ref().ok_or_else(|| CliError::Usage("--checkpoint is required with the learned affinity".into()))?;
            require_file(path, "checkpoint")?;
            manifest.inputs.push(path.clone());
            Box::new(load_checkpoint(path)?.matcher)
        }
        AffinityArg::Geometric => Box::new(GeometricAffinity::default()),
    };
    let scene = load_scene(&args.scene)?;
    let out = track_scene(&scene, affinity.as_ref(), &config)?;
    let (det, hyp) = export_mot(&scene, &out.hypotheses, &cli.out)?;
    let geo = cli.out.join("geolocations.json");
    write_json(&geo, &GeoReport::new(&scene.scene_id, &out.locations))?;
    manifest.outputs.extend([det, hyp, geo]);
    manifest.finish(&cli.out)?;
    Ok(())
}

fn criterion(args: &EvaluateArgs) -> Result<GeoCriterion, CliError> {
    let c = match args.criterion {
        CriterionArg::Euclidean => GeoCriterion::euclidean(args.radius),
        CriterionArg::Mahalanobis => {
            let axes = args.semi_axes.as_ref().ok_or_else(|| CliError::Usage("--semi-axes is required for the mahalanobis criterion".into()))?;
            let [x, y, z] = axes[..] else {
                return Err(CliError::Usage(format!("--semi-axes needs three values, got {}", axes.len())));
            };
            GeoCriterion::mahalanobis(args.limit, [x, y, z])
        }
    };
    let c = match args.rotation_gate {
        Some(g) => c.with_rotation_gate(g),
        None => c,
    };
    c.validate()?;
    Ok(c)
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn evaluate(cli: &Cli, args: &EvaluateArgs) -> Result<(), CliError> {
    let crit = criterion(args)?;
    if !(args.iou > 0.0 && args.iou <= 1.0) {
        return Err(CliError::Usage(format!("--iou {} outside (0, 1]", args.iou)));
    }
    require_file(&args.gt, "ground truth")?;
    require_file(&args.hyp, "hypotheses")?;
    let mut manifest = ManifestBuilder::new("evaluate");
    manifest.config = serde_json::json!({ "iou": args.iou, "criterion": to_value(&crit) });
    manifest.inputs.extend([args.gt.clone(), args.hyp.clone()]);
    let scene = if is_json(&args.gt) { Some(load_scene(&args.gt)?) } else { None };
    let gt = match &scene {
        Some(s) => gt_rows(s),
        None => read_mot_file(&args.gt)?,
    };
    let hyp = read_mot_file(&args.hyp)?;
    let mut report = EvalReport { mot: Some(mot_metrics(&gt, &hyp, args.iou)?), criterion: None, pr_curve: Vec::new(), average_precision: None, translation_errors: None };
    if let Some(loc_path) = &args.locations {
        let scene = scene.as_ref().ok_or_else(|| CliError::Usage("--locations needs a scene JSON as --gt".into()))?;
        let geo: GeoReport = read_json(loc_path, "locations")?;
        manifest.inputs.push(loc_path.clone());
        let locations = geo.locations().map_err(|e| CliError::Data(format!("{}: {e}", loc_path.display())))?;
        let preds = predictions_in_reference(&locations, &scene.reference_ego)?;
        let truth = ground_truth_in_reference(scene)?;
        let curve = pr_curve(&preds, &truth, &crit)?;
        report.average_precision = Some(average_precision(&curve));
        report.pr_curve = curve;
        report.criterion = Some(crit);
        report.translation_errors = translation_error_stats(&matched_translations(&preds, &truth, &crit)).ok();
    }
    let json = cli.out.join("report.json");
    write_json(&json, &report)?;
    let mut outputs: Vec<PathBuf> = vec![json];
    if let Some(m) = &report.mot {
        let p = cli.out.join("mot.csv");
        write_atomic(&p, mot_csv(m).as_bytes())?;
        outputs.push(p);
    }
    let p = cli.out.join("pr.csv");
    write_atomic(&p, pr_csv(&report.pr_curve).as_bytes())?;
    outputs.push(p);
    manifest.outputs = outputs;
    manifest.finish(&cli.out)?;
    Ok(())
}

pub fn plot(cli: &Cli, args: &PlotArgs) -> Result<(), CliError> {
    let report: EvalReport = read_json(&args.report, "report")?;
    let mut manifest = ManifestBuilder::new("plot");
    manifest.config = serde_json::json!({ "title": args.title });
    manifest.inputs.push(args.report.clone());
    let svg = cli.out.join("pr.svg");
    write_atomic(&svg, pr_svg(&report.pr_curve, &args.title).as_bytes())?;
    let csv = cli.out.join("pr.csv");
    write_atomic(&csv, pr_csv(&report.pr_curve).as_bytes())?;
    manifest.outputs.extend([svg, csv]);
    manifest.finish(&cli.out)?;
    Ok(())
}
