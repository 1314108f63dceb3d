//! Subcommand implementations.
//!
//! Every subcommand resolves its configuration, writes `manifest.toml` (the
//! fully resolved config plus a `[run]` section) into the output directory,
//! then produces its files. All outputs are deterministic functions of the
//! resolved config, so re-running any manifest reproduces its outputs byte
//! for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use coopsense::eval::{
    association_metrics_multi, cost_report, detection_metrics, noise_sweep, snapshot_from_scene,
    strategy_comparison, write_plot_data, PlotPoint, RangeBuckets, Snapshot, LIFT_CSV_HEADER,
    SWEEP_CSV_HEADER,
};
use coopsense::fusion::{fuse, FuseConfig};
use coopsense::matcher::{train_caa, CaaParams};
use coopsense::scene::{
    generate_scene, load_scene_file, observe_all, save_scene_file, NoiseSpec, SceneFile,
};
use coopsense::seeds;

use crate::config::{load_config, RunConfig, RunSection};
use crate::{CliError, Command};

const STREAM_GEN: u64 = 0x67656e;
const STREAM_TRAIN_RUN: u64 = 0x7472;
const STREAM_EVAL_RUN: u64 = 0x6576;
const STREAM_SWEEP_RUN: u64 = 0x7377;
const STREAM_LIFT_RUN: u64 = 0x6c66;

pub fn run(command: &Command) -> Result<(), CliError> {
    let args = command.args();
    let config = load_config(args.config.as_deref(), &args.set, args.seed)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(command.name()));
    fs::create_dir_all(&out).map_err(|e| CliError::Io(format!("creating {out:?}: {e}")))?;
    write_manifest(&config, command.name(), &out)?;
    match command {
        Command::GenScenes(_) => gen_scenes(&config, &out),
        Command::Train(_) => train(&config, &out),
        Command::Eval(_) => eval(&config, &out),
        Command::SweepNoise(a) => sweep_noise(&config, &out, a.threads),
        Command::CompareLift(_) => compare_lift(&config, &out),
        Command::CostReport(_) => cost_report_cmd(&config, &out),
    }
}

fn write_manifest(config: &RunConfig, subcommand: &str, out: &Path) -> Result<(), CliError> {
    let mut manifest = config.clone();
    manifest.run = Some(RunSection {
        subcommand: subcommand.to_string(),
    });
    write_text(&out.join("manifest.toml"), &manifest.to_toml())
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("writing {path:?}: {e}")))
}

fn scene_seed(config: &RunConfig, stream: u64, index: usize) -> u64 {
    seeds::mix2(seeds::mix(config.seed, stream), 0x5eed, index as u64)
}

fn gen_scenes(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let scenario = config.scenario()?;
    let dir = out.join("scenes");
    fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("creating {dir:?}: {e}")))?;
    for k in 0..config.scene.n_scenes {
        let seed = scene_seed(config, STREAM_GEN, k);
        let mut scene = generate_scene(
            scenario.n_objects,
            scenario.extent,
            scenario.agents.clone(),
            seed,
        )
        .map_err(|e| CliError::Config(e.to_string()))?;
        scene.descriptor = scenario.descriptor;
        let queries = observe_all(&scene, seed);
        let path = dir.join(format!("scene_{k:04}.txt"));
        save_scene_file(&path, &scene, &queries)
            .map_err(|e| CliError::Io(format!("writing {path:?}: {e}")))?;
    }
    println!("wrote {} scene files to {}", config.scene.n_scenes, dir.display());
    Ok(())
}

fn load_scene_dir(dir: &str) -> Result<Vec<SceneFile>, CliError> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::Io(format!("reading scene dir {dir:?}: {e}")))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "txt"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!("no .txt scene files in {dir:?}")));
    }
    paths
        .iter()
        .map(|p| load_scene_file(p).map_err(|e| CliError::Config(format!("scene {p:?}: {e}"))))
        .collect()
}

fn train(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let scenario = config.scenario()?;
    let caa_config = config.caa_config()?;
    let noise = config.training_noise();
    let corpus = match &config.train.scene_dir {
        Some(dir) => {
            let files = load_scene_dir(dir)?;
            files
                .iter()
                .enumerate()
                .map(|(k, f)| {
                    coopsense::eval::training_example_from_scene(
                        &f.scene,
                        &f.queries,
                        &noise,
                        scene_seed(config, STREAM_TRAIN_RUN, k),
                    )
                    .map_err(|e| CliError::Config(e.to_string()))
                })
                .collect::<Result<Vec<_>, _>>()?
        }
        None => (0..config.train.n_scenes)
            .map(|k| {
                coopsense::eval::build_training_example(
                    &scenario,
                    &noise,
                    scene_seed(config, STREAM_TRAIN_RUN, k),
                )
                .map_err(|e| CliError::Config(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?,
    };
    let initial = CaaParams::init(caa_config, seeds::mix(config.seed, 0xCAA))
        .map_err(|e| CliError::Config(e.to_string()))?;
    let (trained, curve) = train_caa(
        initial,
        &corpus,
        config.train.steps,
        config.train.learning_rate,
        config.seed,
        &config.loss_config(),
    )
    .map_err(|e| match e {
        coopsense::matcher::MatchError::DivergenceDetected { step, loss } => {
            CliError::Divergence(format!("loss became {loss} at step {step}"))
        }
        other => CliError::Config(other.to_string()),
    })?;

    let params_path = out.join("caa.params");
    trained
        .save(&params_path)
        .map_err(|e| CliError::Io(format!("writing {params_path:?}: {e}")))?;
    let mut loss_csv = String::from("step,loss\n");
    for (i, loss) in curve.iter().enumerate() {
        loss_csv.push_str(&format!("{i},{loss:.17e}\n"));
    }
    write_text(&out.join("loss.csv"), &loss_csv)?;
    println!(
        "trained {} steps on {} examples; final loss {:.6}; parameters at {}",
        curve.len(),
        corpus.len(),
        curve.last().copied().unwrap_or(f64::NAN),
        params_path.display()
    );
    Ok(())
}

struct MatcherAggregate {
    tp: usize,
    fp: usize,
    fn_: usize,
    det_recall_sum: f64,
    duplicate_sum: f64,
    rmse_sum: f64,
    n: usize,
}

fn eval(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let scenario = config.scenario()?;
    let matchers = config.matchers()?;
    let noise = NoiseSpec::new(config.eval.noise_sigma_t, config.eval.noise_sigma_r_deg);
    let wide_bucket = RangeBuckets::new(vec![0.0, 1e6]).expect("static edges");

    let snapshots: Vec<Snapshot> = match &config.eval.scene_dir {
        Some(dir) => load_scene_dir(dir)?
            .iter()
            .enumerate()
            .map(|(k, f)| {
                snapshot_from_scene(
                    &f.scene,
                    &f.queries,
                    &noise,
                    scene_seed(config, STREAM_EVAL_RUN, k),
                    &scenario.roi,
                )
                .map_err(|e| CliError::Config(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?,
        None => (0..config.eval.n_scenes)
            .map(|k| {
                coopsense::eval::make_snapshot(
                    &scenario,
                    &noise,
                    scene_seed(config, STREAM_EVAL_RUN, k),
                )
                .map_err(|e| CliError::Config(e.to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?,
    };

    let mut rows = String::from(
        "matcher,threshold,tp,fp,fn,precision,recall,f1,det_recall,duplicate_rate,position_rmse\n",
    );
    for matcher in &matchers {
        let mut agg = MatcherAggregate {
            tp: 0,
            fp: 0,
            fn_: 0,
            det_recall_sum: 0.0,
            duplicate_sum: 0.0,
            rmse_sum: 0.0,
            n: 0,
        };
        for snapshot in &snapshots {
            let results = matcher
                .match_sets(&snapshot.ego_queries, &snapshot.coop_projected)
                .map_err(|e| CliError::Config(e.to_string()))?;
            let predicted: Vec<Vec<(usize, usize)>> =
                results.iter().map(|r| r.predicted_pairs()).collect();
            let assoc = association_metrics_multi(&predicted, &snapshot.gt_pairs);
            agg.tp += assoc.true_positive;
            agg.fp += assoc.false_positive;
            agg.fn_ += assoc.false_negative;
            let detections = fuse(
                &snapshot.ego_queries,
                &snapshot.coop_projected,
                &results,
                &FuseConfig::default(),
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            let det = detection_metrics(
                &detections,
                &snapshot.gt_ego_frame,
                &wide_bucket,
                scenario.detection_match_radius,
            )
            .map_err(|e| CliError::Config(e.to_string()))?;
            agg.det_recall_sum += det[0].recall;
            agg.duplicate_sum += det[0].duplicate_rate;
            agg.rmse_sum += det[0].position_rmse;
            agg.n += 1;
        }
        let pooled = coopsense::eval::AssociationMetrics::from_counts(agg.tp, agg.fp, agg.fn_);
        let n = agg.n.max(1) as f64;
        rows.push_str(&format!(
            "{},{},{},{},{},{:.9},{:.9},{:.9},{:.9},{:.9},{:.9}\n",
            matcher.name(),
            matcher.threshold(),
            agg.tp,
            agg.fp,
            agg.fn_,
            pooled.precision,
            pooled.recall,
            pooled.f1,
            agg.det_recall_sum / n,
            agg.duplicate_sum / n,
            agg.rmse_sum / n,
        ));
    }
    write_text(&out.join("metrics.csv"), &rows)?;
    println!("evaluated {} matchers on {} scenes", matchers.len(), snapshots.len());
    Ok(())
}

fn sweep_noise(config: &RunConfig, out: &Path, threads: usize) -> Result<(), CliError> {
    let scenario = config.scenario()?;
    let matchers = config.matchers()?;
    let grid = config.noise_grid()?;
    if config.noise.n_seeds == 0 {
        return Err(CliError::Config("noise.n_seeds must be >= 1".into()));
    }
    let seeds_list: Vec<u64> = (0..config.noise.n_seeds)
        .map(|i| scene_seed(config, STREAM_SWEEP_RUN, i))
        .collect();
    let rows = noise_sweep(&scenario, &matchers, &grid, &seeds_list, threads)
        .map_err(|e| CliError::Config(e.to_string()))?;

    let mut csv = String::from(SWEEP_CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    write_text(&out.join("sweep.csv"), &csv)?;

    // Plot data: F1 against each noise axis, at the other axis' minimum.
    let min_r = config
        .noise
        .rotation_grid_deg
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let min_t = config
        .noise
        .translation_grid
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let against_t: Vec<PlotPoint> = rows
        .iter()
        .filter(|r| r.sigma_r_deg == min_r)
        .map(|r| PlotPoint {
            x: r.sigma_t,
            y: r.f1,
            series: r.matcher.clone(),
        })
        .collect();
    let against_r: Vec<PlotPoint> = rows
        .iter()
        .filter(|r| r.sigma_t == min_t)
        .map(|r| PlotPoint {
            x: r.sigma_r_deg,
            y: r.f1,
            series: r.matcher.clone(),
        })
        .collect();
    let mut buf = Vec::new();
    write_plot_data(&mut buf, &against_t).map_err(|e| CliError::Io(e.to_string()))?;
    write_text(
        &out.join("plot_f1_vs_translation.csv"),
        &String::from_utf8(buf).expect("utf8"),
    )?;
    let mut buf = Vec::new();
    write_plot_data(&mut buf, &against_r).map_err(|e| CliError::Io(e.to_string()))?;
    write_text(
        &out.join("plot_f1_vs_rotation.csv"),
        &String::from_utf8(buf).expect("utf8"),
    )?;
    println!(
        "swept {} noise levels x {} seeds x {} matchers",
        grid.len(),
        seeds_list.len(),
        matchers.len()
    );
    Ok(())
}

fn compare_lift(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let scenario = config.scenario()?;
    let buckets = RangeBuckets::new(config.lift.bucket_edges.clone())
        .map_err(|e| CliError::Config(e.to_string()))?;
    if config.lift.n_seeds == 0 {
        return Err(CliError::Config("lift.n_seeds must be >= 1".into()));
    }
    let seeds_list: Vec<u64> = (0..config.lift.n_seeds)
        .map(|i| scene_seed(config, STREAM_LIFT_RUN, i))
        .collect();
    let rows = strategy_comparison(&scenario, &config.lift_model(), &buckets, &seeds_list)
        .map_err(|e| CliError::Config(e.to_string()))?;
    let mut csv = String::from(LIFT_CSV_HEADER);
    csv.push('\n');
    for row in &rows {
        csv.push_str(&row.to_csv());
        csv.push('\n');
    }
    write_text(&out.join("lift.csv"), &csv)?;

    let mut points = Vec::new();
    for row in &rows {
        let mid = 0.5 * (row.bucket_lo + row.bucket_hi);
        points.push(PlotPoint {
            x: mid,
            y: row.mean_err_height_derived,
            series: "height_derived".to_string(),
        });
        points.push(PlotPoint {
            x: mid,
            y: row.mean_err_direct_depth,
            series: "direct_depth".to_string(),
        });
    }
    let mut buf = Vec::new();
    write_plot_data(&mut buf, &points).map_err(|e| CliError::Io(e.to_string()))?;
    write_text(
        &out.join("plot_lift_error.csv"),
        &String::from_utf8(buf).expect("utf8"),
    )?;
    println!("compared lift strategies over {} buckets", rows.len());
    Ok(())
}

fn cost_report_cmd(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let report = cost_report(&config.cost_model()).map_err(|e| CliError::Config(e.to_string()))?;
    let json = serde_json::json!({
        "dense_bps": report.dense_bps,
        "sparse_bps": report.sparse_bps,
        "ratio": report.ratio,
    });
    let text = serde_json::to_string_pretty(&json).expect("json serializes");
    write_text(&out.join("cost.json"), &format!("{text}\n"))?;
    let mut stdout = std::io::stdout().lock();
    writeln!(
        stdout,
        "dense_bps {:.3e}\nsparse_bps {:.3e}\nratio {:.3}",
        report.dense_bps, report.sparse_bps, report.ratio
    )
    .map_err(|e| CliError::Io(e.to_string()))?;
    Ok(())
}
