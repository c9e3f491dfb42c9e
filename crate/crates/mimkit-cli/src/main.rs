//! `mimkit` — generate synthetic pose datasets, train the
//! disentangling networks, score imitations, and evaluate cohorts.

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use mimkit_core::config::ToolConfig;
use mimkit_core::error::Error;
use mimkit_core::eval::{parse_mask, run_experiment, write_reports, ExperimentConfig};
use mimkit_core::manifest::{
    config_fingerprint, generate_imitation_set, generate_tuple_set, load_imitation_set,
    load_train_dataset, write_run_manifest, ImitationSpec, RunManifest,
};
use mimkit_core::net::ModelBundle;
use mimkit_core::pose::read_posejson;
use mimkit_core::score::{calibrate, cami_score, dump_dtw_matrices};
use mimkit_core::synth::derive_seed;
use mimkit_core::train::{fit_segment_weights, train, AblationMode, LogRow};

const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "mimkit", version, about = "Motion imitation assessment toolkit")]
struct Cli {
    /// TOML configuration file (defaults apply when omitted).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root random seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker threads (falls back to MIMKIT_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Print progress to stderr.
    #[arg(long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate tuple and imitation datasets with manifests.
    Gen,
    /// Train a model bundle from generated manifests.
    Train(TrainArgs),
    /// Score an actor/imitator pair or a batch manifest.
    Score(ScoreArgs),
    /// Run the bundle x cohort x mask evaluation grid.
    Eval(EvalArgs),
    /// Print a summary of a manifest, checkpoint, pose file, or report.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Tuple-set manifest from `gen`.
    #[arg(long)]
    tuples: PathBuf,
    /// Imitation-set manifest from `gen`.
    #[arg(long)]
    pairs: PathBuf,
    /// Loss ablation: full, no_nuanced, or syn_only.
    #[arg(long)]
    ablation: Option<String>,
    /// Checkpoint stem to resume from.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Cohort manifest for cross-validated segment-weight fitting.
    #[arg(long)]
    fit_weights: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    /// Bundle checkpoint stem (expects .json/.bin/.sidecar.json).
    #[arg(long)]
    bundle: PathBuf,
    /// Actor pose file (single-pair mode).
    #[arg(long, requires = "imit")]
    actor: Option<PathBuf>,
    /// Imitator pose file (single-pair mode).
    #[arg(long, requires = "actor")]
    imit: Option<PathBuf>,
    /// Imitation-set manifest (batch mode).
    #[arg(long, conflicts_with_all = ["actor", "imit"])]
    batch: Option<PathBuf>,
    /// Comma-separated segment mask.
    #[arg(long)]
    segments: Option<String>,
    /// Batch mode: store min/max calibration into the bundle sidecar.
    #[arg(long)]
    calibrate: bool,
    /// Dump per-segment motion-encoding DTW cost matrices (CSV) here.
    #[arg(long)]
    dtw_matrix: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Bundles as label=checkpoint-stem (repeatable).
    #[arg(long = "bundle", required = true)]
    bundles: Vec<String>,
    /// Cohorts as label=manifest-path (repeatable).
    #[arg(long = "cohort", required = true)]
    cohorts: Vec<String>,
    /// Mask names (defaults to the config's mask list).
    #[arg(long = "mask")]
    masks: Vec<String>,
}

#[derive(Args)]
struct InspectArgs {
    path: PathBuf,
}

fn main() {
    let cli = Cli::parse();
    let threads = cli.threads.or_else(|| {
        std::env::var("MIMKIT_THREADS")
            .ok()
            .and_then(|v| v.parse().ok())
    });
    if let Some(n) = threads {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let command_name = match &cli.command {
        Command::Gen => "gen",
        Command::Train(_) => "train",
        Command::Score(_) => "score",
        Command::Eval(_) => "eval",
        Command::Inspect(_) => "inspect",
    };
    match run(&cli) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("mimkit {command_name}: {err}");
            std::process::exit(exit_code(command_name, &err));
        }
    }
}

/// Command-specific exit codes; 1 for anything unclassified.
fn exit_code(command: &str, err: &Error) -> i32 {
    match (command, err) {
        (_, Error::Config(_)) => 3,
        ("gen", Error::Io(_)) => 2,
        ("train", Error::Divergence { .. }) => 4,
        ("train", Error::Manifest(_)) => 3,
        ("score", Error::Contract(_)) => 5,
        ("score", Error::Manifest(_)) => 6,
        ("score", Error::Json(_)) => 6,
        ("eval", Error::Manifest(_)) => 7,
        ("eval", Error::Io(_)) => 7,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let config = match &cli.config {
        Some(path) => ToolConfig::from_path(path)?,
        None => ToolConfig::default(),
    };
    let seed = cli.seed.or(config.seed).unwrap_or(7);
    match &cli.command {
        Command::Gen => cmd_gen(cli, &config, seed),
        Command::Train(args) => cmd_train(cli, &config, seed, args),
        Command::Score(args) => cmd_score(cli, &config, seed, args),
        Command::Eval(args) => cmd_eval(cli, &config, seed, args),
        Command::Inspect(args) => cmd_inspect(args),
    }
}

fn out_dir(cli: &Cli) -> Result<PathBuf, Error> {
    let dir = cli
        .out
        .clone()
        .ok_or_else(|| Error::Config("--out is required for this command".into()))?;
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn note(cli: &Cli, msg: &str) {
    if cli.verbose {
        eprintln!("mimkit: {msg}");
    }
}

fn cmd_gen(cli: &Cli, config: &ToolConfig, seed: u64) -> Result<(), Error> {
    let started = Instant::now();
    let dir = out_dir(cli)?;
    let gen = &config.gen;
    let mut outputs = Vec::new();

    note(cli, &format!("rendering {} training tuples", gen.tuple_count));
    generate_tuple_set(&gen.corpus, gen.tuple_count, derive_seed(seed, "gen-tuples", 0), &dir)?;
    outputs.push("tuples.json".to_string());

    if gen.pair_count > 0 {
        note(cli, &format!("rendering {} training pairs", gen.pair_count));
        generate_imitation_set(
            &gen.corpus,
            &ImitationSpec::UniformMix {
                count: gen.pair_count,
            },
            derive_seed(seed, "gen-pairs", 0),
            &dir,
            "pairs",
        )?;
        outputs.push("pairs.json".to_string());
    }

    if gen.cohort_good + gen.cohort_poor > 0 {
        note(
            cli,
            &format!(
                "rendering cohort of {} good + {} poor pairs",
                gen.cohort_good, gen.cohort_poor
            ),
        );
        generate_imitation_set(
            &gen.corpus,
            &ImitationSpec::Cohort {
                good: gen.cohort_good,
                poor: gen.cohort_poor,
            },
            derive_seed(seed, "gen-cohort", 0),
            &dir,
            "cohort",
        )?;
        outputs.push("cohort.json".to_string());
    }

    if gen.eval_tuple_count > 0 {
        note(cli, &format!("rendering {} held-out tuples", gen.eval_tuple_count));
        let eval_dir = dir.join("heldout");
        std::fs::create_dir_all(&eval_dir)?;
        generate_tuple_set(
            &gen.corpus,
            gen.eval_tuple_count,
            derive_seed(seed, "gen-eval", 0),
            &eval_dir,
        )?;
        outputs.push("heldout/tuples.json".to_string());
    }

    write_run_manifest(
        &RunManifest {
            command: "gen".to_string(),
            config_fingerprint: config.fingerprint(),
            inputs: vec![],
            outputs,
            seed,
            tool_version: TOOL_VERSION.to_string(),
            duration_seconds: started.elapsed().as_secs_f64(),
        },
        &dir,
    )
}

fn cmd_train(cli: &Cli, config: &ToolConfig, seed: u64, args: &TrainArgs) -> Result<(), Error> {
    let started = Instant::now();
    let dir = out_dir(cli)?;
    let dataset = load_train_dataset(&args.tuples, &args.pairs)?;
    note(
        cli,
        &format!(
            "loaded {} tuples and {} pairs",
            dataset.tuples.len(),
            dataset.pairs.len()
        ),
    );

    let mut train_config = config.train.to_train_config(seed);
    if let Some(mode) = &args.ablation {
        train_config.ablation = AblationMode::parse(mode)?;
    }
    train_config.resume = args.resume.clone();

    note(
        cli,
        &format!(
            "training {} epochs, batch {} ({} ablation)",
            train_config.epochs,
            train_config.batch_size,
            train_config.ablation.as_str()
        ),
    );
    let outcome = train(&train_config, &dataset, Some(&dir))?;
    let mut bundle = outcome.bundle;
    note(cli, &format!("finished at step {}", outcome.final_step));
    if let Some(last) = outcome.log.last() {
        summarize_log(cli, last);
    }

    if let Some(cohort_path) = &args.fit_weights {
        note(cli, "fitting segment weights by cross-validated grid search");
        let (_, cohort) = load_imitation_set(cohort_path)?;
        let weights = fit_segment_weights(&bundle, &cohort, config.eval.folds, &config.score)?;
        bundle.segmentation.weights = weights;
        bundle.save(&dir.join("bundle"))?;
    }

    write_run_manifest(
        &RunManifest {
            command: "train".to_string(),
            config_fingerprint: config.fingerprint(),
            inputs: vec![
                args.tuples.display().to_string(),
                args.pairs.display().to_string(),
            ],
            outputs: vec![
                "bundle.json".into(),
                "bundle.bin".into(),
                "bundle.sidecar.json".into(),
                "training_log.csv".into(),
            ],
            seed,
            tool_version: TOOL_VERSION.to_string(),
            duration_seconds: started.elapsed().as_secs_f64(),
        },
        &dir,
    )
}

fn summarize_log(cli: &Cli, row: &LogRow) {
    note(
        cli,
        &format!(
            "final losses: total {:.4} (syn {:.4}, real {:.4})",
            row.losses.total, row.losses.total_syn, row.losses.total_real
        ),
    );
}

fn parse_segments(arg: &Option<String>) -> Option<Vec<String>> {
    arg.as_ref().map(|s| {
        s.split(',')
            .map(|x| x.trim().to_string())
            .filter(|x| !x.is_empty())
            .collect()
    })
}

fn cmd_score(cli: &Cli, config: &ToolConfig, seed: u64, args: &ScoreArgs) -> Result<(), Error> {
    let started = Instant::now();
    let dir = out_dir(cli)?;
    let bundle = ModelBundle::<f32>::load(&args.bundle)?;
    let mask = parse_segments(&args.segments);
    let opts = &config.score;
    let mut outputs = Vec::new();
    let mut inputs = vec![args.bundle.display().to_string()];

    match (&args.actor, &args.imit, &args.batch) {
        (Some(actor_path), Some(imit_path), None) => {
            let actor = read_posejson(actor_path)?;
            let imit = read_posejson(imit_path)?;
            let report = cami_score(&actor, &imit, &bundle, mask.as_deref(), opts)?;
            note(cli, &format!("cami = {:.4}", report.cami));
            let bytes = serde_json::to_vec_pretty(&report)?;
            std::fs::write(dir.join("score.json"), bytes)?;
            outputs.push("score.json".into());
            if let Some(matrix_dir) = &args.dtw_matrix {
                dump_dtw_matrices(&bundle, &actor, &imit, opts, matrix_dir)?;
            }
            inputs.push(actor_path.display().to_string());
            inputs.push(imit_path.display().to_string());
        }
        (None, None, Some(batch_path)) => {
            let (manifest, pairs) = load_imitation_set(batch_path)?;
            note(cli, &format!("scoring {} pairs", pairs.len()));
            use rayon::prelude::*;
            let mut reports = pairs
                .par_iter()
                .map(|p| cami_score(&p.actor, &p.imitation, &bundle, mask.as_deref(), opts))
                .collect::<Result<Vec<_>, Error>>()?;
            for (r, p) in reports.iter_mut().zip(&pairs) {
                r.pair_id = p.pair_id.clone();
            }

            if args.calibrate {
                let camis: Vec<f64> = reports.iter().map(|r| r.cami).collect();
                let (cal, normalized) = calibrate(&camis)?;
                let mut updated = bundle.clone();
                updated.calibration = Some(cal);
                updated.save(&args.bundle)?;
                note(
                    cli,
                    &format!("stored calibration min {:.4} max {:.4}", cal.min, cal.max),
                );
                for (r, n) in reports.iter_mut().zip(normalized) {
                    r.cami_normalized = Some(n);
                }
            }

            let mut jsonl = Vec::new();
            for r in &reports {
                jsonl.extend_from_slice(&serde_json::to_vec(r)?);
                jsonl.push(b'\n');
            }
            std::fs::write(dir.join("scores.jsonl"), jsonl)?;
            outputs.push("scores.jsonl".into());

            let mut csv = String::from("pair_id,cami,cami_normalized,group_label,degradation\n");
            for (r, record) in reports.iter().zip(&manifest.records) {
                let normalized = r
                    .cami_normalized
                    .map(|v| v.to_string())
                    .unwrap_or_default();
                csv.push_str(&format!(
                    "{},{},{},{},{}\n",
                    r.pair_id, r.cami, normalized, record.group_label, record.degradation
                ));
            }
            std::fs::write(dir.join("cohort_scores.csv"), csv)?;
            outputs.push("cohort_scores.csv".into());
            inputs.push(batch_path.display().to_string());
        }
        _ => {
            return Err(Error::Config(
                "score needs either --actor/--imit or --batch".into(),
            ));
        }
    }

    write_run_manifest(
        &RunManifest {
            command: "score".to_string(),
            config_fingerprint: config.fingerprint(),
            inputs,
            outputs,
            seed,
            tool_version: TOOL_VERSION.to_string(),
            duration_seconds: started.elapsed().as_secs_f64(),
        },
        &dir,
    )
}

fn parse_labeled(values: &[String], what: &str) -> Result<Vec<(String, PathBuf)>, Error> {
    values
        .iter()
        .map(|v| {
            v.split_once('=')
                .map(|(label, path)| (label.to_string(), PathBuf::from(path)))
                .ok_or_else(|| Error::Config(format!("{what} must be label=path, got {v}")))
        })
        .collect()
}

fn cmd_eval(cli: &Cli, config: &ToolConfig, seed: u64, args: &EvalArgs) -> Result<(), Error> {
    let started = Instant::now();
    let dir = out_dir(cli)?;
    let bundles = parse_labeled(&args.bundles, "--bundle")?;
    let cohorts = parse_labeled(&args.cohorts, "--cohort")?;
    let mask_names: Vec<String> = if args.masks.is_empty() {
        config.eval.masks.clone()
    } else {
        args.masks.clone()
    };
    let masks = mask_names
        .iter()
        .map(|m| parse_mask(m))
        .collect::<Result<Vec<_>, Error>>()?;

    let experiment = ExperimentConfig {
        bundles: bundles.clone(),
        cohorts: cohorts.clone(),
        masks,
        score: config.score.clone(),
    };
    note(
        cli,
        &format!(
            "evaluating {} bundles x {} cohorts x {} masks",
            experiment.bundles.len(),
            experiment.cohorts.len(),
            experiment.masks.len()
        ),
    );
    let report = run_experiment(&experiment)?;
    for cell in &report.cells {
        note(cli, &format!("{}: auc {:.4}", cell.cell_id, cell.auc));
    }
    write_reports(&report, &dir)?;

    write_run_manifest(
        &RunManifest {
            command: "eval".to_string(),
            config_fingerprint: config_fingerprint(&(
                config.fingerprint(),
                &args.bundles,
                &args.cohorts,
                &mask_names,
            )),
            inputs: bundles
                .iter()
                .map(|(_, p)| p.display().to_string())
                .chain(cohorts.iter().map(|(_, p)| p.display().to_string()))
                .collect(),
            outputs: vec![
                "summary.csv".into(),
                "roc_points.csv".into(),
                "correlations.csv".into(),
                "report.json".into(),
            ],
            seed,
            tool_version: TOOL_VERSION.to_string(),
            duration_seconds: started.elapsed().as_secs_f64(),
        },
        &dir,
    )
}

fn cmd_inspect(args: &InspectArgs) -> Result<(), Error> {
    let path = &args.path;
    let bytes = std::fs::read(path)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Manifest(format!("{} is not JSON: {e}", path.display())))?;
    let obj = value
        .as_object()
        .ok_or_else(|| Error::Manifest("expected a JSON object".into()))?;

    if let Some(kind) = obj.get("kind").and_then(|v| v.as_str()) {
        let n = obj.get("records").and_then(|r| r.as_array()).map(|a| a.len());
        println!("synthset v{} {kind} manifest", obj.get("version").and_then(|v| v.as_u64()).unwrap_or(0));
        println!("  seed: {}", obj.get("seed").and_then(|v| v.as_u64()).unwrap_or(0));
        if let Some(n) = n {
            println!("  records: {n}");
        }
        if let Some(fp) = obj.get("config_fingerprint").and_then(|v| v.as_str()) {
            println!("  fingerprint: {fp}");
        }
    } else if let Some(params) = obj.get("parameters").and_then(|v| v.as_array()) {
        println!("checkpoint manifest (ckpt v1)");
        println!("  tensors: {}", params.len());
        let total: u64 = params
            .iter()
            .filter_map(|p| p.get("shape"))
            .filter_map(|s| s.as_array())
            .map(|s| s.iter().filter_map(|d| d.as_u64()).product::<u64>())
            .sum();
        println!("  values: {total} (f32)");
    } else if obj.contains_key("frames") && obj.contains_key("joint_names") {
        let frames = obj.get("frames").and_then(|f| f.as_array()).map(|a| a.len()).unwrap_or(0);
        println!("posejson v{}", obj.get("version").and_then(|v| v.as_u64()).unwrap_or(0));
        println!("  id: {}", obj.get("id").and_then(|v| v.as_str()).unwrap_or("?"));
        println!("  frames: {frames}");
        println!("  fps: {}", obj.get("fps").and_then(|v| v.as_f64()).unwrap_or(0.0));
    } else if obj.contains_key("segments") && obj.contains_key("weights") {
        println!("bundle sidecar");
        println!(
            "  ablation: {}",
            obj.get("ablation").and_then(|v| v.as_str()).unwrap_or("?")
        );
        println!("  weights: {}", obj.get("weights").cloned().unwrap_or_default());
        println!(
            "  calibration: {}",
            obj.get("calibration").cloned().unwrap_or(serde_json::Value::Null)
        );
    } else if obj.contains_key("command") && obj.contains_key("tool_version") {
        println!("run manifest");
        println!(
            "  command: {}",
            obj.get("command").and_then(|v| v.as_str()).unwrap_or("?")
        );
        println!(
            "  duration: {:.2}s",
            obj.get("duration_seconds").and_then(|v| v.as_f64()).unwrap_or(0.0)
        );
    } else if obj.contains_key("cells") {
        let cells = obj.get("cells").and_then(|c| c.as_array()).map(|a| a.len()).unwrap_or(0);
        println!("experiment report with {cells} cells");
    } else if obj.contains_key("cami") {
        println!("score report");
        println!("  cami: {}", obj.get("cami").and_then(|v| v.as_f64()).unwrap_or(0.0));
    } else {
        println!("unrecognized JSON document with {} keys", obj.len());
    }
    Ok(())
}
