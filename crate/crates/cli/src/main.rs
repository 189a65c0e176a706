use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use space_lab::datastore::{load_task, make_task, sample_dataset, save_dataset, save_task};
use space_lab::engine::{Mode, RunConfig, RunManifest, RunStatus};
use space_lab::oracle::run_gradcheck;
use space_lab::report::{compare_configs, line_chart_svg, sweep, write_run};
use space_lab::{run_with_task, LabError, ObjectiveSpec, SpinForm, TaskSpec};

#[derive(Parser)]
#[command(
    name = "space-lab",
    version,
    about = "Self-play fine-tuning objectives on enumerable tabular models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a seeded target task.
    GenTask {
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        vocab: usize,
        #[arg(long)]
        length: usize,
        #[arg(long)]
        prompts: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample an annotated dataset from a task.
    GenData {
        #[arg(long)]
        task: PathBuf,
        #[arg(long)]
        n: usize,
        /// Defaults to the task seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run self-play training.
    Train(TrainArgs),
    /// Run several objectives on the same task and seeds.
    Compare {
        #[command(flatten)]
        common: CommonArgs,
        /// One experiment config per objective.
        #[arg(long, num_args = 1..)]
        configs: Vec<PathBuf>,
    },
    /// Finite-difference check of every objective's gradient.
    Gradcheck {
        #[arg(long, default_value_t = 20)]
        seeds: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// One SPACE run per generation ratio.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_delimiter = ',', required = true)]
        mu_list: Vec<f64>,
    },
    /// Redraw charts and print a summary for finished runs.
    Report {
        #[arg(long)]
        dir: PathBuf,
    },
}

#[derive(Args)]
struct CommonArgs {
    /// Task file; built from the config's task fields when absent.
    #[arg(long)]
    task: Option<PathBuf>,
    /// Experiment config (JSON).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    run_seed: Option<u64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    mode: Option<ModeArg>,
    /// Write SVG charts.
    #[arg(long)]
    charts: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    objective: Option<ObjectiveArg>,
    /// SPACE generation ratio.
    #[arg(long)]
    mu: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    MonteCarlo,
    Exact,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Sft,
    Spin,
    Sipo,
    Ssimpo,
    Space,
}

/// A run config plus output settings; the file format for `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(default)]
struct ExperimentConfig {
    #[serde(flatten)]
    run: RunConfig,
    output_dir: Option<PathBuf>,
    chart_emission: bool,
    comparison: Vec<ObjectiveSpec>,
}

enum Failure {
    /// Bad flags, files, or configuration.
    Usage(anyhow::Error),
    /// A check or run that executed and failed.
    Check(anyhow::Error),
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        match e {
            LabError::Aborted { .. } | LabError::NonFinite(_) => Failure::Check(e.into()),
            _ => Failure::Usage(e.into()),
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Usage(e)
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(anyhow::anyhow!(msg.into()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenTask {
            seed,
            vocab,
            length,
            prompts,
            out,
        } => gen_task(seed, vocab, length, prompts, &out),
        Command::GenData { task, n, seed, out } => gen_data(&task, n, seed, &out),
        Command::Train(args) => train(args),
        Command::Compare { common, configs } => compare(common, &configs),
        Command::Gradcheck { seeds, tolerance } => gradcheck(seeds, tolerance),
        Command::Sweep { common, mu_list } => sweep_cmd(common, &mu_list),
        Command::Report { dir } => report(&dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn gen_task(seed: u64, vocab: usize, length: usize, prompts: usize, out: &Path) -> CmdResult {
    let task = make_task(seed, vocab, length, prompts)?;
    save_task(&task, out).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {}", out.display());
    Ok(())
}

fn gen_data(task: &Path, n: usize, seed: Option<u64>, out: &Path) -> CmdResult {
    let task = read_task(task)?;
    let data = sample_dataset(&task, n, seed.unwrap_or(task.seed))?;
    save_dataset(&data, out).with_context(|| format!("writing {}", out.display()))?;
    println!("wrote {} items to {}", data.n(), out.display());
    Ok(())
}

fn read_task(path: &Path) -> Result<TaskSpec, Failure> {
    Ok(load_task(path).with_context(|| format!("reading task {}", path.display()))?)
}

fn read_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    Ok(
        serde_json::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?,
    )
}

/// Resolved settings shared by train, compare, and sweep.
struct Setup {
    config: RunConfig,
    experiment: ExperimentConfig,
    task: TaskSpec,
    out_dir: PathBuf,
    charts: bool,
}

fn setup(common: &CommonArgs) -> Result<Setup, Failure> {
    let mut experiment = match &common.config {
        Some(p) => read_config(p)?,
        None => ExperimentConfig::default(),
    };
    let config = &mut experiment.run;
    if let Some(s) = common.run_seed {
        config.run_seed = s;
    }
    if let Some(t) = common.iterations {
        config.iterations = t;
    }
    if let Some(m) = common.mode {
        *config = match m {
            ModeArg::Exact if config.mode != Mode::Exact => RunConfig {
                optimizer: RunConfig::exact_default().optimizer,
                mode: Mode::Exact,
                ..config.clone()
            },
            ModeArg::Exact => config.clone(),
            ModeArg::MonteCarlo => RunConfig {
                mode: Mode::MonteCarlo,
                ..config.clone()
            },
        };
    }
    let task = match &common.task {
        Some(p) => read_task(p)?,
        None => make_task(
            config.task_seed,
            config.vocab_size,
            config.length,
            config.prompt_count,
        )?,
    };
    let out_dir = common
        .out_dir
        .clone()
        .or_else(|| experiment.output_dir.clone())
        .ok_or_else(|| {
            usage("an output directory is required (--out-dir or output_dir in the config)")
        })?;
    let charts = common.charts || experiment.chart_emission;
    Ok(Setup {
        config: experiment.run.clone(),
        experiment,
        task,
        out_dir,
        charts,
    })
}

fn objective_from(arg: ObjectiveArg, mu: Option<f64>) -> ObjectiveSpec {
    match arg {
        ObjectiveArg::Sft => ObjectiveSpec::Sft,
        ObjectiveArg::Spin => ObjectiveSpec::spin(1.0, SpinForm::LossOfMargin),
        ObjectiveArg::Sipo => ObjectiveSpec::sipo(0.5),
        ObjectiveArg::Ssimpo => ObjectiveSpec::ssimpo(2.0, 0.0),
        ObjectiveArg::Space => ObjectiveSpec::space(mu.unwrap_or(1.0)),
    }
}

fn train(args: TrainArgs) -> CmdResult {
    let Setup {
        mut config,
        task,
        out_dir,
        charts,
        ..
    } = setup(&args.common)?;
    match (args.objective, args.mu) {
        (Some(o), mu) => config = config.with_objective(objective_from(o, mu)),
        (None, Some(mu)) => match config.objective {
            ObjectiveSpec::Space { .. } => config = config.with_objective(ObjectiveSpec::space(mu)),
            _ => return Err(usage("--mu applies to the SPACE objective only")),
        },
        (None, None) => {}
    }
    let manifest = run_with_task(&config, &task)?;
    write_run(&manifest, &out_dir, charts)?;
    print_run(manifest.config.objective.name(), &manifest);
    finish(&manifest)
}

fn finish(manifest: &RunManifest) -> CmdResult {
    match manifest.status {
        RunStatus::Completed => Ok(()),
        RunStatus::Aborted => Err(Failure::Check(anyhow::anyhow!(
            "{}",
            manifest
                .abort_reason
                .clone()
                .unwrap_or_else(|| "run aborted".into())
        ))),
    }
}

fn print_run(label: &str, m: &RunManifest) {
    for r in &m.iterations {
        println!(
            "{label:<10} iter {:>2}  post_kl {:.6}  reward_gap {:+.4}  accuracy {:.3}",
            r.iteration, r.post_kl, r.reward_gap, r.classifier_accuracy
        );
    }
    if let Some(reason) = &m.abort_reason {
        println!("{label:<10} aborted: {reason}");
    }
}

fn threads() -> Result<usize, Failure> {
    match std::env::var("SPACE_LAB_THREADS") {
        Ok(v) => v.trim().parse().map_err(|_| {
            usage(format!(
                "SPACE_LAB_THREADS must be a non-negative integer, got {v:?}"
            ))
        }),
        Err(_) => Ok(0),
    }
}

fn compare(common: CommonArgs, config_files: &[PathBuf]) -> CmdResult {
    let Setup {
        config,
        experiment,
        task,
        out_dir,
        charts,
    } = setup(&common)?;
    let configs: Vec<RunConfig> = if !config_files.is_empty() {
        let mut configs = Vec::new();
        for p in config_files {
            let mut c = read_config(p)?.run;
            if let Some(s) = common.run_seed {
                c.run_seed = s;
            }
            if let Some(t) = common.iterations {
                c.iterations = t;
            }
            configs.push(c);
        }
        configs
    } else if !experiment.comparison.is_empty() {
        experiment
            .comparison
            .iter()
            .map(|o| config.clone().with_objective(o.clone()))
            .collect()
    } else {
        ObjectiveSpec::self_play_defaults()
            .into_iter()
            .map(|o| config.clone().with_objective(o))
            .collect()
    };
    if configs.len() < 2 {
        return Err(usage("compare needs at least two objective configurations"));
    }
    if configs.iter().any(|c| c.run_seed != configs[0].run_seed) {
        return Err(usage("compared configs must share run_seed"));
    }
    let comparison = compare_configs(&configs, &task, threads()?)?;
    comparison.write(&out_dir, charts)?;
    for (label, m) in comparison.labels.iter().zip(&comparison.runs) {
        print_run(label, m);
    }
    println!(
        "{:<10} {:>12} {:>10}",
        "method", "average_rank", "final_rank"
    );
    for m in &comparison.ranks.methods {
        let note = if m.aborted { "  (aborted)" } else { "" };
        println!(
            "{:<10} {:>12.3} {:>10.1}{note}",
            m.method, m.average_rank, m.final_rank
        );
    }
    Ok(())
}

fn gradcheck(seeds: usize, tolerance: f64) -> CmdResult {
    if seeds == 0 {
        return Err(usage("--seeds must be >= 1"));
    }
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(usage("--tolerance must be positive"));
    }
    let rows = run_gradcheck(seeds, tolerance)?;
    for r in &rows {
        println!(
            "{:<8} max_error {:.3e}  checks {:>5}  {}",
            r.objective,
            r.max_error,
            r.checks,
            if r.passed { "PASS" } else { "FAIL" }
        );
    }
    if rows.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::Check(anyhow::anyhow!(
            "gradient check failed at tolerance {tolerance:e}"
        )))
    }
}

fn sweep_cmd(common: CommonArgs, mus: &[f64]) -> CmdResult {
    if let Some(bad) = mus.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
        return Err(usage(format!("mu values must be positive, got {bad}")));
    }
    let Setup {
        config,
        task,
        out_dir,
        charts,
        ..
    } = setup(&common)?;
    let result = sweep(&config, &task, mus, threads()?)?;
    result.write(&out_dir, charts)?;
    for (mu, m) in result.mus.iter().zip(&result.runs) {
        print_run(&format!("mu={mu}"), m);
    }
    Ok(())
}

fn report(dir: &Path) -> CmdResult {
    let mut manifests = Vec::new();
    let mut candidates = vec![dir.to_path_buf()];
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    candidates.extend(subdirs);
    for d in candidates {
        let path = d.join("manifest.json");
        if path.is_file() {
            let text = std::fs::read_to_string(&path)
                .with_context(|| format!("reading {}", path.display()))?;
            let m: RunManifest = serde_json::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))?;
            write_run(&m, &d, true)?;
            manifests.push((d, m));
        }
    }
    if manifests.is_empty() {
        return Err(usage(format!("no manifest.json under {}", dir.display())));
    }
    let label = |d: &Path, m: &RunManifest| {
        let name = d
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        format!("{} ({})", m.config.objective.name(), name)
    };
    if manifests.len() > 1 {
        let series: Vec<_> = manifests
            .iter()
            .map(|(d, m)| {
                (
                    label(d, m),
                    m.iterations
                        .iter()
                        .map(|r| (r.iteration as f64, r.post_kl))
                        .collect(),
                )
            })
            .collect();
        std::fs::write(
            dir.join("kl.svg"),
            line_chart_svg("post-iteration KL", "iteration", "KL (nats)", &series),
        )
        .with_context(|| format!("writing {}", dir.join("kl.svg").display()))?;
    }
    for (d, m) in &manifests {
        print_run(&label(d, m), m);
    }
    Ok(())
}
