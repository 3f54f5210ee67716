//! Command-line entry points for the experiment drivers.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{distinguishability_report, table_pairs, EnergyScale};
use crate::autodiff::gradcheck_suite;
use crate::config::{DataSection, RunConfig};
use crate::data::{append_csv, citation_paths, data_dir, synthetic_citation, write_csv, DATA_DIR_ENV};
use crate::error::{Error, Result};
use crate::experiments::{
    bench, depth_sweep, mean_std, median, prepare_data, run_multiset_task, run_oversmooth, run_seeds, trajectory_table,
    MultisetTask, OversmoothConfig,
};
use crate::layers::{LayerKind, ModelConfig};
use crate::noise::{preset_spec, NoiseFamily, Preset};
use crate::train::TrainConfig;

#[derive(Debug, Parser)]
#[command(
    name = "stag",
    version,
    about = "Stochastic aggregation experiments for graph neural networks"
)]
pub struct Cli {
    /// Base random seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Result file (CSV).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Validate arguments and print the resolved settings without running.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Node classification with fixed aggregation noise.
    Train(TrainArgs),
    /// Node classification with a learned noise posterior.
    ViTrain(ViTrainArgs),
    /// Dirichlet energy across repeated noisy smoothing steps.
    Oversmooth(OversmoothArgs),
    /// Test accuracy versus depth, dropout against Normal(1, 1) noise.
    DepthSweep(DepthSweepArgs),
    /// Multiset distinguishability table and classification task.
    Multiset(MultisetArgs),
    /// Finite-difference check of every differentiable operation.
    Gradcheck(GradcheckArgs),
    /// Per-iteration time of deterministic versus noisy training steps.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Dataset name; files `<name>.content` and `<name>.cites`.
    #[arg(long)]
    pub dataset: Option<String>,
    /// Dataset directory (defaults to $STAG_DATA_DIR, then ./data).
    #[arg(long)]
    pub data_dir: Option<PathBuf>,
    /// Use the generated Cora-sized graph.
    #[arg(long)]
    pub synthetic: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Configuration file of `key = value` lines.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` settings, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// gcn, sage_mean or gin.
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[command(flatten)]
    pub data: DataArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// `delta` or a preset: dropout, fastgcn, dropedge, gdc, stag_full.
    #[arg(long)]
    pub noise: Option<String>,
    /// bernoulli, normal or uniform.
    #[arg(long)]
    pub family: Option<String>,
    #[arg(long)]
    pub p_drop: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ViTrainArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// scalar, per_channel, per_edge or per_edge_per_channel.
    #[arg(long)]
    pub granularity: Option<String>,
    #[arg(long)]
    pub mu0: Option<f64>,
    #[arg(long)]
    pub log_sigma0: Option<f64>,
    #[arg(long)]
    pub sigma_prior: Option<f64>,
    #[arg(long)]
    pub kl_weight: Option<f64>,
}

#[derive(Debug, Args)]
pub struct OversmoothArgs {
    #[arg(long, default_value_t = 200)]
    pub nodes: usize,
    #[arg(long, default_value_t = 0.125)]
    pub radius: f64,
    #[arg(long, default_value_t = 64)]
    pub layers: usize,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 20)]
    pub eigenvectors: usize,
    #[arg(long, default_value_t = 0.5)]
    pub mean: f64,
    #[arg(long, default_value_t = 0.25)]
    pub variance: f64,
    /// Report energy divided by the squared signal norm.
    #[arg(long)]
    pub normalized: bool,
}

#[derive(Debug, Args)]
pub struct DepthSweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 2)]
    pub min_depth: usize,
    #[arg(long, default_value_t = 8)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 16)]
    pub hidden: usize,
    #[arg(long, default_value_t = 400)]
    pub epochs: usize,
    #[arg(long, default_value_t = 5e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1)]
    pub runs: usize,
}

#[derive(Debug, Args)]
pub struct MultisetArgs {
    /// Monte-Carlo samples for the stochastic statistic.
    #[arg(long, default_value_t = 1_000_000)]
    pub samples: usize,
    /// Stochastic draws per classifier feature vector.
    #[arg(long, default_value_t = 16)]
    pub k: usize,
    #[arg(long, default_value_t = 2)]
    pub max_multiplicity: usize,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, default_value_t = 3)]
    pub seeds: usize,
    /// Only produce the distinguishability table.
    #[arg(long)]
    pub table_only: bool,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Largest acceptable relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 128)]
    pub width: usize,
    #[arg(long, default_value = "gcn")]
    pub kind: String,
    #[arg(long, default_value_t = 10)]
    pub iters: usize,
    /// Standard deviation of the Normal(1, σ) noise.
    #[arg(long, default_value_t = 0.8)]
    pub sigma: f64,
}

fn push<T: ToString>(out: &mut Vec<String>, key: &str, v: &Option<T>) {
    if let Some(v) = v {
        out.push(format!("{key}={}", v.to_string()));
    }
}

fn model_overrides(m: &ModelArgs, seed: Option<u64>) -> Vec<String> {
    let mut o = Vec::new();
    push(&mut o, "model.kind", &m.kind);
    push(&mut o, "model.depth", &m.depth);
    push(&mut o, "model.hidden", &m.hidden);
    push(&mut o, "train.epochs", &m.epochs);
    push(&mut o, "train.runs", &m.runs);
    push(&mut o, "train.lr", &m.lr);
    push(&mut o, "train.seed", &seed);
    push(&mut o, "data.dataset", &m.data.dataset);
    push(
        &mut o,
        "data.dir",
        &m.data.data_dir.as_ref().map(|p| p.display().to_string()),
    );
    if m.data.synthetic {
        o.push("data.synthetic=true".into());
    }
    o
}

fn resolve(m: &ModelArgs, mut overrides: Vec<String>) -> Result<RunConfig> {
    let text = match &m.config {
        Some(p) => std::fs::read_to_string(p)?,
        None => String::new(),
    };
    overrides.extend(m.set.iter().cloned());
    RunConfig::parse_with_overrides(&text, &overrides)
}

fn emit(out: Option<&Path>, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    match out {
        Some(p) => write_csv(p, header, rows),
        None => {
            let stdout = std::io::stdout();
            let mut w = csv::Writer::from_writer(stdout.lock());
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush()?;
            Ok(())
        }
    }
}

fn sibling(out: &Path, suffix: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}_{suffix}"))
}

fn print_settings(pairs: &[(&str, String)]) {
    for (k, v) in pairs {
        println!("{k} = {v}");
    }
}

fn run_training(cfg: &RunConfig, out: Option<&Path>, dry_run: bool) -> Result<()> {
    let manifest = cfg.manifest();
    print!("{manifest}");
    if dry_run {
        return Ok(());
    }
    let (g, split) = prepare_data(&cfg.data, cfg.train.seed)?;
    let model_cfg = ModelConfig::new(cfg.model.kind, g.n_features(), g.num_classes(), cfg.model.depth)
        .with_hidden(cfg.model.hidden);
    let reports = run_seeds(&cfg.train, &model_cfg, &g, &split, &cfg.method, cfg.runs)?;
    let mut rows = Vec::new();
    let mut history = Vec::new();
    for (r, rep) in reports.iter().enumerate() {
        let seed = cfg.train.seed + r as u64;
        println!(
            "run {r} seed {seed}: best epoch {}, val {:.4}, test {:.4}",
            rep.best_epoch, rep.val_accuracy, rep.test_accuracy
        );
        rows.push(vec![
            r.to_string(),
            seed.to_string(),
            rep.best_epoch.to_string(),
            format!("{:.6}", rep.train_accuracy),
            format!("{:.6}", rep.val_accuracy),
            format!("{:.6}", rep.test_accuracy),
        ]);
        for e in &rep.history {
            history.push(vec![
                r.to_string(),
                e.epoch.to_string(),
                format!("{:.6}", e.train_loss),
                format!("{:.6}", e.val_accuracy),
            ]);
        }
    }
    let tests: Vec<f64> = reports.iter().map(|r| r.test_accuracy).collect();
    let (m, s) = mean_std(&tests);
    println!(
        "test accuracy {:.2} ± {:.2} over {} runs",
        100.0 * m,
        100.0 * s,
        tests.len()
    );
    rows.push(vec![
        "summary".into(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
        format!("{m:.6}±{s:.6}"),
    ]);
    if let Some(p) = out {
        write_csv(
            p,
            &[
                "run",
                "seed",
                "best_epoch",
                "train_accuracy",
                "val_accuracy",
                "test_accuracy",
            ],
            &rows,
        )?;
        write_csv(
            &sibling(p, "history.csv"),
            &["run", "epoch", "train_loss", "val_metric"],
            &history,
        )?;
        std::fs::write(sibling(p, "manifest.txt"), manifest)?;
    }
    Ok(())
}

fn data_section(d: &DataArgs) -> DataSection {
    let mut s = RunConfig::default().data;
    if let Some(name) = &d.dataset {
        s.dataset = name.clone();
    }
    s.dir = d.data_dir.clone();
    s.synthetic = d.synthetic;
    s
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let out = cli.out.as_deref();
    match cli.command {
        Command::Train(a) => {
            let mut o = model_overrides(&a.model, cli.seed);
            match a.noise.as_deref() {
                None => {}
                Some("delta" | "none") => o.push("noise.family=delta".into()),
                Some(p) => {
                    let preset: Preset = p.parse()?;
                    o.push(format!("noise.preset={}", preset.name()));
                }
            }
            push(&mut o, "noise.family", &a.family);
            push(&mut o, "noise.p_drop", &a.p_drop);
            push(&mut o, "noise.mu", &a.mu);
            push(&mut o, "noise.sigma", &a.sigma);
            let cfg = resolve(&a.model, o)?;
            run_training(&cfg, out, cli.dry_run)
        }
        Command::ViTrain(a) => {
            let mut o = model_overrides(&a.model, cli.seed);
            o.push("train.method=vi".into());
            push(&mut o, "vi.granularity", &a.granularity);
            push(&mut o, "vi.mu0", &a.mu0);
            push(&mut o, "vi.log_sigma0", &a.log_sigma0);
            push(&mut o, "vi.sigma_prior", &a.sigma_prior);
            push(&mut o, "vi.kl_weight", &a.kl_weight);
            let cfg = resolve(&a.model, o)?;
            run_training(&cfg, out, cli.dry_run)
        }
        Command::Oversmooth(a) => {
            let cfg = OversmoothConfig {
                nodes: a.nodes,
                radius: a.radius,
                layers: a.layers,
                runs: a.runs,
                eigenvectors: a.eigenvectors,
                noise_mean: a.mean,
                noise_variance: a.variance,
                scale: if a.normalized {
                    EnergyScale::Normalized
                } else {
                    EnergyScale::Absolute
                },
                seed,
            };
            if cli.dry_run {
                print_settings(&[
                    ("nodes", cfg.nodes.to_string()),
                    ("radius", cfg.radius.to_string()),
                    ("layers", cfg.layers.to_string()),
                    ("runs", cfg.runs.to_string()),
                    ("eigenvectors", cfg.eigenvectors.to_string()),
                    ("noise_mean", cfg.noise_mean.to_string()),
                    ("noise_variance", cfg.noise_variance.to_string()),
                    ("normalized", a.normalized.to_string()),
                    ("seed", seed.to_string()),
                ]);
                crate::analysis::matched_moment_families(cfg.noise_mean, cfg.noise_variance)?;
                return Ok(());
            }
            let traj = run_oversmooth(&cfg)?;
            let (header, rows) = trajectory_table(&traj);
            let header: Vec<&str> = header.iter().map(String::as_str).collect();
            emit(out, &header, &rows)
        }
        Command::DepthSweep(a) => {
            if a.min_depth == 0 || a.min_depth > a.max_depth {
                return Err(Error::InvalidArgument(format!(
                    "bad depth range {}..={}",
                    a.min_depth, a.max_depth
                )));
            }
            let data = data_section(&a.data);
            let cfg = TrainConfig {
                lr: a.lr,
                epochs: a.epochs,
                patience: None,
                seed,
                ..TrainConfig::default()
            };
            cfg.validate()?;
            if cli.dry_run {
                print_settings(&[
                    ("dataset", data.dataset.clone()),
                    ("synthetic", data.synthetic.to_string()),
                    ("depths", format!("{}..={}", a.min_depth, a.max_depth)),
                    ("hidden", a.hidden.to_string()),
                    ("epochs", a.epochs.to_string()),
                    ("lr", a.lr.to_string()),
                    ("runs", a.runs.to_string()),
                    ("seed", seed.to_string()),
                ]);
                return Ok(());
            }
            let (g, split) = prepare_data(&data, seed)?;
            let depths: Vec<usize> = (a.min_depth..=a.max_depth).collect();
            let rows: Vec<Vec<String>> = depth_sweep(&g, &split, &depths, a.hidden, &cfg, a.runs)?
                .into_iter()
                .map(|r| {
                    vec![
                        r.depth.to_string(),
                        r.method.to_string(),
                        r.run.to_string(),
                        format!("{:.6}", r.test_accuracy),
                    ]
                })
                .collect();
            emit(out, &["depth", "method", "run", "test_accuracy"], &rows)
        }
        Command::Multiset(a) => {
            if cli.dry_run {
                print_settings(&[
                    ("samples", a.samples.to_string()),
                    ("k", a.k.to_string()),
                    ("max_multiplicity", a.max_multiplicity.to_string()),
                    ("steps", a.steps.to_string()),
                    ("seeds", a.seeds.to_string()),
                    ("table_only", a.table_only.to_string()),
                    ("seed", seed.to_string()),
                ]);
                return Ok(());
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let report = distinguishability_report(&table_pairs(), a.samples, 5.0, &mut rng)?;
            let rows: Vec<Vec<String>> = report
                .iter()
                .map(|r| {
                    vec![
                        r.pair_id.to_string(),
                        r.aggregator.clone(),
                        format!("{:.9}", r.value_x),
                        format!("{:.9}", r.value_y),
                        r.distinguished.to_string(),
                    ]
                })
                .collect();
            emit(
                out,
                &["pair_id", "aggregator", "value_x", "value_y", "distinguished"],
                &rows,
            )?;
            if a.table_only {
                return Ok(());
            }
            let task = MultisetTask {
                k: a.k,
                max_multiplicity: a.max_multiplicity,
                steps: a.steps,
                seeds: (0..a.seeds as u64).map(|s| seed + s).collect(),
                ..MultisetTask::default()
            };
            let res = run_multiset_task(&task)?;
            let mut stderr = std::io::stderr();
            let _ = writeln!(
                stderr,
                "{} classes; MEAN ceiling {:.4}; median accuracy MEAN {:.4}, stochastic {:.4}",
                res.classes,
                res.mean_bound,
                median(&res.mean_accuracy),
                median(&res.stochastic_accuracy)
            );
            if let Some(p) = out {
                let rows: Vec<Vec<String>> = task
                    .seeds
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        vec![
                            s.to_string(),
                            format!("{:.6}", res.mean_accuracy[i]),
                            format!("{:.6}", res.stochastic_accuracy[i]),
                            format!("{:.6}", res.mean_bound),
                        ]
                    })
                    .collect();
                write_csv(
                    &sibling(p, "classifier.csv"),
                    &["seed", "mean_accuracy", "stochastic_accuracy", "mean_bound"],
                    &rows,
                )?;
            }
            Ok(())
        }
        Command::Gradcheck(a) => {
            if cli.dry_run {
                print_settings(&[("threshold", a.threshold.to_string()), ("seed", seed.to_string())]);
                return Ok(());
            }
            let reports = gradcheck_suite(seed)?;
            let mut worst: f64 = 0.0;
            let rows: Vec<Vec<String>> = reports
                .iter()
                .map(|(name, r)| {
                    worst = worst.max(r.max_rel_error);
                    vec![
                        name.clone(),
                        r.coordinates_checked.to_string(),
                        format!("{:.3e}", r.max_rel_error),
                    ]
                })
                .collect();
            emit(out, &["case", "coordinates", "max_rel_error"], &rows)?;
            if worst >= a.threshold {
                return Err(Error::Backward(format!(
                    "max relative error {worst:.3e} exceeds {:.1e}",
                    a.threshold
                )));
            }
            Ok(())
        }
        Command::Bench(a) => {
            let kind: LayerKind = a.kind.parse()?;
            let spec = preset_spec(
                Preset::StagFull,
                NoiseFamily::Normal {
                    mu: 1.0,
                    sigma: a.sigma,
                },
            )?;
            let data = data_section(&a.data);
            if cli.dry_run {
                print_settings(&[
                    ("dataset", data.dataset.clone()),
                    ("depth", a.depth.to_string()),
                    ("width", a.width.to_string()),
                    ("kind", kind.name().to_string()),
                    ("iters", a.iters.to_string()),
                    ("noise", spec.family.to_string()),
                    ("seed", seed.to_string()),
                ]);
                return Ok(());
            }
            let dir = data.dir.clone().unwrap_or_else(data_dir);
            let (g, split) = if data.synthetic || citation_paths(&dir, &data.dataset).is_some() {
                prepare_data(&data, seed)?
            } else {
                eprintln!(
                    "{} not found in {} (set {DATA_DIR_ENV}); timing the generated Cora-sized graph",
                    data.dataset,
                    dir.display()
                );
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let g = synthetic_citation(&mut rng)?;
                let split = crate::data::make_split(&g, 140, 500, 1000, data.split, seed)?;
                (g, split)
            };
            let mc = ModelConfig::new(kind, g.n_features(), g.num_classes(), a.depth).with_hidden(a.width);
            let r = bench(&g, &mc, &spec, &split.train, a.iters, seed)?;
            println!(
                "deterministic {:.2} ms/iter, stochastic {:.2} ms/iter, ratio {:.3}",
                1e3 * r.deterministic,
                1e3 * r.stochastic,
                r.ratio()
            );
            if let Some(p) = out {
                append_csv(
                    p,
                    &[
                        "dataset",
                        "kind",
                        "depth",
                        "width",
                        "deterministic_ms",
                        "stochastic_ms",
                        "ratio",
                    ],
                    &[vec![
                        data.dataset.clone(),
                        kind.name().to_string(),
                        a.depth.to_string(),
                        a.width.to_string(),
                        format!("{:.4}", 1e3 * r.deterministic),
                        format!("{:.4}", 1e3 * r.stochastic),
                        format!("{:.4}", r.ratio()),
                    ]],
                )?;
            }
            Ok(())
        }
    }
}

/// Parses `std::env::args`, runs the command and maps errors to exit code 1.
pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
