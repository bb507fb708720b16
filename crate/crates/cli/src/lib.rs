//! Batch command-line front end for the `plab` library.
//!
//! Exit codes: 0 on success, 1 on invalid input (bad flags, configs or
//! files), 2 when training diverges.

mod export;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use plab::diagnostics::{census_from_trace, DiagnosticsReport, entk_gram, feature_svd, param_norms, preactivation_stats, probe_mode};
use plab::gradcheck::{generate_cases, run_gradcheck, DEFAULT_CASES, TOLERANCE};
use plab::harness::{
    probe_plasticity, probe_plasticity_decoded, run_bandit_dqn, run_iterated_training_with, run_offset_dose_response,
    run_task_switch_microscope, BanditConfig, DoseConfig, ExperimentConfig, HeavyRecord, LossKind, MicroscopeConfig,
    ProbeConfig,
};
use plab::io::{create_output, load_checkpoint, parse_config, parse_document, save_checkpoint, Checkpoint, MetricFiles};
use plab::nn::{ActivationKind, TwoHotCodec};
use plab::par::Exec;
use plab::tasks::{gaussian_inputs, synth_dataset, BanditMDP};
use plab::{Error, Tensor};
use serde::Serialize;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "plab", version, about = "Plasticity-loss laboratory")]
struct Cli {
    /// Run data-parallel loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Head {
    Mse,
    TwoHot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Iterated training; writes metrics.csv, diagnostics.jsonl and a final
    /// checkpoint per seed under `<out>/seed_<n>`.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Run only this seed instead of the config's seed list.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        force: bool,
    },
    /// Plasticity probe of a checkpoint.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        rho: f64,
        #[arg(long, default_value_t = 2000)]
        steps: u64,
        /// Perturbation seed.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 256)]
        inputs: usize,
        /// Draw probe inputs from this experiment's dataset instead of a
        /// standard Gaussian.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Treat outputs as two-hot logit blocks over `[-M, M]` and probe the
        /// decoded values.
        #[arg(long)]
        two_hot_bound: Option<u32>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// DQN on the synthetic classification bandit.
    Bandit {
        #[arg(long, default_value_t = 0.99)]
        gamma: f64,
        #[arg(long, value_enum, default_value_t = Head::Mse)]
        loss: Head,
        #[arg(long, default_value_t = 0.0)]
        smoothing: f64,
        /// Two-hot support; defaults to `ceil(alpha / (1 - gamma))`.
        #[arg(long)]
        bound: Option<u32>,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 10000)]
        steps: u64,
        #[arg(long, default_value_t = 500)]
        target_period: u64,
        #[arg(long, value_delimiter = ',', default_value = "256,256")]
        hidden: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        classes: usize,
        #[arg(long, default_value_t = 100)]
        n_per_class: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Probe the final network for this many steps (0 to skip).
        #[arg(long, default_value_t = 0)]
        probe_steps: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Offset dose-response grid.
    Dose {
        #[arg(long, value_delimiter = ',', default_value = "0,8,16,32")]
        offsets: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// JSON file with further dose settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Dense per-step logging across a task switch.
    Microscope {
        #[arg(long, value_enum, default_value_t = Switch::Off)]
        reset_optimizer: Switch,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// eNTK, feature SVD, unit census and norms of a checkpoint as JSONL.
    Diagnose {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 64)]
        inputs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Finite-difference check of every layer and loss.
    Gradcheck {
        #[arg(long, default_value_t = DEFAULT_CASES)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        verbose: bool,
    },
    /// Folds the metrics.csv files of a run into plot-ready tables.
    ExportPlot {
        /// A run directory (or a single seed directory).
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
}

/// Why a command stopped early.
#[derive(Debug)]
enum Failure {
    Lib(Error),
    Diverged(String),
    Failed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Failed(e.to_string())
    }
}

type CmdResult = Result<(), Failure>;

/// Parses `argv` (including the program name), runs the command and
/// returns the process exit code.
pub fn cli_main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).try_init();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    let exec = if cli.sequential { Exec::Sequential } else { Exec::Parallel };
    match dispatch(cli.command, exec) {
        Ok(()) => EXIT_OK,
        Err(Failure::Lib(Error::Diverged { step })) => {
            eprintln!("error: training diverged at step {step}");
            EXIT_DIVERGED
        }
        Err(Failure::Diverged(msg)) => {
            eprintln!("error: {msg}");
            EXIT_DIVERGED
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            EXIT_INVALID
        }
        Err(Failure::Failed(msg)) => {
            eprintln!("error: {msg}");
            EXIT_INVALID
        }
    }
}

fn dispatch(command: Command, exec: Exec) -> CmdResult {
    match command {
        Command::Run {
            config,
            out,
            seed,
            force,
        } => cmd_run(&config, &out, seed, force, exec),
        Command::Probe {
            checkpoint,
            rho,
            steps,
            seed,
            inputs,
            config,
            two_hot_bound,
            out,
            force,
        } => {
            let probe = ProbeConfig {
                rho,
                steps,
                seed,
                inputs,
                ..Default::default()
            };
            cmd_probe(&checkpoint, probe, config.as_deref(), two_hot_bound, out.as_deref(), force)
        }
        Command::Bandit {
            gamma,
            loss,
            smoothing,
            bound,
            alpha,
            steps,
            target_period,
            hidden,
            classes,
            n_per_class,
            seed,
            probe_steps,
            out,
            force,
        } => {
            let head = match loss {
                Head::Mse => LossKind::Mse,
                Head::TwoHot => LossKind::TwoHot {
                    bound: bound.unwrap_or_else(|| default_bound(alpha, gamma)),
                    smoothing,
                },
            };
            let config = BanditConfig {
                hidden,
                activation: ActivationKind::Relu,
                head,
                steps,
                target_period,
                seed,
                ..Default::default()
            };
            cmd_bandit(config, alpha, gamma, classes, n_per_class, probe_steps, out.as_deref(), force)
        }
        Command::Dose {
            offsets,
            seeds,
            config,
            out,
            force,
        } => {
            let mut cfg: DoseConfig = read_document(config.as_deref())?;
            cfg.offsets = offsets;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            cmd_dose(&cfg, out.as_deref(), force, exec)
        }
        Command::Microscope {
            reset_optimizer,
            config,
            seed,
            out,
            force,
        } => {
            let mut cfg: MicroscopeConfig = read_document(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cmd_microscope(&cfg, reset_optimizer == Switch::On, out.as_deref(), force)
        }
        Command::Diagnose {
            checkpoint,
            config,
            inputs,
            seed,
            out,
            force,
        } => cmd_diagnose(&checkpoint, config.as_deref(), inputs, seed, out.as_deref(), force, exec),
        Command::Gradcheck { cases, seed, verbose } => cmd_gradcheck(cases, seed, verbose, exec),
        Command::ExportPlot { run, out, force } => export::export_plot(&run, &out, force),
    }
}

fn default_bound(alpha: f64, gamma: f64) -> u32 {
    let scale = alpha / (1.0 - gamma);
    if scale.is_finite() && scale > 0.0 {
        scale.ceil().max(1.0) as u32
    } else {
        1
    }
}

fn read_text(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Failed(format!("cannot read {}: {e}", path.display())))
}

fn read_document<T: serde::de::DeserializeOwned + Serialize>(path: Option<&Path>) -> Result<T, Failure> {
    let text = match path {
        Some(p) => read_text(p)?,
        None => "{}".to_string(),
    };
    Ok(parse_document::<T>(&text)?.value)
}

fn read_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let parsed = parse_config(&read_text(path)?)?;
    if !parsed.defaults_applied.is_empty() {
        log::info!("defaults applied: {}", parsed.defaults_applied.join(", "));
    }
    Ok(parsed.value)
}

/// Writes to `path` (honouring `force`) or to stdout.
fn write_output(path: Option<&Path>, force: bool, text: &str) -> CmdResult {
    match path {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(dir)?;
            }
            create_output(p, force)?.write_all(text.as_bytes())?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn json_line(value: &impl Serialize) -> Result<String, Failure> {
    let mut s = serde_json::to_string(value).map_err(Error::from)?;
    s.push('\n');
    Ok(s)
}

fn cmd_run(config_path: &Path, out: &Path, seed: Option<u64>, force: bool, exec: Exec) -> CmdResult {
    let config = read_config(config_path)?;
    let seeds = seed.map_or_else(|| config.seeds.clone(), |s| vec![s]);
    let data_dir = plab::io::data_dir();
    fs::create_dir_all(out)?;
    let resolved = plab::io::config_to_string(&config)? + "\n";
    create_output(&out.join("config.json"), force)?.write_all(resolved.as_bytes())?;
    let results = exec.map_slice(&seeds, |&s| -> Result<bool, Error> {
        let dir = out.join(format!("seed_{s}"));
        let mut files = MetricFiles::create(&dir, force)?;
        let run = run_iterated_training_with(&config, s, &data_dir, &mut files)?;
        let ck = Checkpoint {
            network: run.trainer.net,
            optimizer: Some(run.trainer.opt),
            seed: s,
            step: run.steps,
        };
        let ck_path = dir.join("checkpoint.json");
        if ck_path.exists() && !force {
            return Err(Error::Exists(ck_path.display().to_string()));
        }
        if !run.diverged {
            save_checkpoint(&ck_path, &ck)?;
        }
        Ok(run.diverged)
    });
    let mut diverged = Vec::new();
    for (s, r) in seeds.iter().zip(results) {
        if r? {
            diverged.push(s.to_string());
        }
    }
    if !diverged.is_empty() {
        return Err(Failure::Diverged(format!("seed(s) {} diverged", diverged.join(", "))));
    }
    println!("wrote {} seed(s) to {}", seeds.len(), out.display());
    Ok(())
}

/// First `n` inputs of the experiment's dataset, or standard Gaussian rows.
fn probe_inputs(config: Option<&Path>, shape: &[usize], n: usize, seed: u64) -> Result<Tensor, Failure> {
    match config {
        Some(p) => {
            let cfg = read_config(p)?;
            let ds = cfg.base_dataset(&plab::io::data_dir(), seed)?;
            let idx: Vec<usize> = (0..n.min(ds.len())).collect();
            Ok(ds.inputs.select_rows(&idx))
        }
        None => Ok(gaussian_inputs(shape, n, seed)?),
    }
}

fn cmd_probe(
    path: &Path,
    probe: ProbeConfig,
    config: Option<&Path>,
    two_hot_bound: Option<u32>,
    out: Option<&Path>,
    force: bool,
) -> CmdResult {
    let ck = load_checkpoint(path)?;
    let x = probe_inputs(config, &ck.network.spec().input_shape, probe.inputs, probe.seed)?;
    let result = match two_hot_bound {
        Some(m) => probe_plasticity_decoded(&ck.network, &TwoHotCodec::new(m, 0.0)?, &probe, &x)?,
        None => probe_plasticity(&ck.network, &probe, &x)?,
    };
    eprintln!(
        "probe: initial {:.6e}, final {:.6e}{}",
        result.initial_loss,
        result.final_loss,
        if result.diverged { " (diverged)" } else { "" }
    );
    write_output(out, force, &json_line(&result)?)?;
    if result.diverged {
        return Err(Failure::Diverged("probe diverged".into()));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_bandit(
    config: BanditConfig,
    alpha: f64,
    gamma: f64,
    classes: usize,
    n_per_class: usize,
    probe_steps: u64,
    out: Option<&Path>,
    force: bool,
) -> CmdResult {
    let ds = synth_dataset(classes, 16, n_per_class, config.seed)?;
    let mdp = BanditMDP::new(ds.clone(), alpha, gamma)?;
    let run = run_bandit_dqn(&mdp, &config)?;
    let probe = if probe_steps > 0 {
        let p = ProbeConfig {
            steps: probe_steps,
            seed: config.seed,
            ..Default::default()
        };
        let x = ds.inputs.select_rows(&(0..p.inputs.min(ds.len())).collect::<Vec<_>>());
        Some(match &run.codec {
            Some(c) => probe_plasticity_decoded(&run.net, c, &p, &x)?,
            None => probe_plasticity(&run.net, &p, &x)?,
        })
    } else {
        None
    };
    #[derive(Serialize)]
    struct Report<'a> {
        config: &'a BanditConfig,
        alpha: f64,
        gamma: f64,
        records: &'a [plab::harness::BanditRecord],
        probe: Option<plab::harness::ProbeResult>,
    }
    if let Some(last) = run.records.last() {
        eprintln!("bandit: step {} loss {:.4e} mean max Q {:.4}", last.step, last.loss, last.mean_max_q);
    }
    let report = Report {
        config: &config,
        alpha,
        gamma,
        records: &run.records,
        probe,
    };
    write_output(out, force, &json_line(&report)?)
}

fn cmd_dose(cfg: &DoseConfig, out: Option<&Path>, force: bool, exec: Exec) -> CmdResult {
    let rows = run_offset_dose_response(cfg, exec)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["offset", "seed", "pretrain_loss", "finetune_loss"])?;
    for r in &rows {
        for (s, p, f) in &r.per_seed {
            w.write_record([r.offset.to_string(), s.to_string(), p.to_string(), f.to_string()])?;
        }
        w.write_record([r.offset.to_string(), "mean".into(), r.pretrain_loss.to_string(), r.finetune_loss.to_string()])?;
    }
    let bytes = w.into_inner().map_err(|e| Failure::Failed(e.to_string()))?;
    write_output(out, force, &String::from_utf8_lossy(&bytes))
}

fn cmd_microscope(cfg: &MicroscopeConfig, reset: bool, out: Option<&Path>, force: bool) -> CmdResult {
    let result = run_task_switch_microscope(cfg)?;
    let records = if reset { &result.reset } else { &result.persisted };
    let peak = records.iter().map(|r| r.dead_units).max().unwrap_or(0);
    eprintln!(
        "microscope ({} optimizer): converged entropy {:.4}, peak dead units {peak}",
        if reset { "reset" } else { "persisted" },
        result.converged_entropy
    );
    let mut text = String::new();
    for r in records {
        text += &json_line(r)?;
    }
    write_output(out, force, &text)
}

fn cmd_diagnose(
    path: &Path,
    config: Option<&Path>,
    inputs: usize,
    seed: u64,
    out: Option<&Path>,
    force: bool,
    exec: Exec,
) -> CmdResult {
    let ck = load_checkpoint(path)?;
    let net = &ck.network;
    let x = probe_inputs(config, &net.spec().input_shape, inputs, seed)?;
    let n = x.rows().min(plab::diagnostics::MAX_ENTK_BATCH);
    let (_, trace) = net.forward(&x, probe_mode(x.rows()))?;
    let report = DiagnosticsReport {
        census: census_from_trace(net, &trace),
        preact: preactivation_stats(net, &trace),
        norms: param_norms(net),
        entk: Some(entk_gram(net, &x.select_rows(&(0..n).collect::<Vec<_>>()), 0, exec)?),
        svd: net.head_layer().map(|_| feature_svd(net, &x)).transpose()?,
        sharpness: None,
    };
    let step = ck.step;
    let mut lines = vec![
        HeavyRecord::new(step, "census", &report.census)?,
        HeavyRecord::new(step, "preactivations", &report.preact)?,
        HeavyRecord::new(step, "norms", &report.norms)?,
        HeavyRecord::new(step, "entk", &report.entk)?,
    ];
    if let Some(svd) = &report.svd {
        lines.push(HeavyRecord::new(step, "svd", svd)?);
    }
    let mut text = String::new();
    for l in &lines {
        text += &json_line(l)?;
    }
    write_output(out, force, &text)
}

fn cmd_gradcheck(cases: usize, seed: u64, verbose: bool, exec: Exec) -> CmdResult {
    let report = run_gradcheck(&generate_cases(cases, seed), exec)?;
    if verbose {
        for c in &report.cases {
            println!("{:<60} {:>6} checked {:>4} skipped  {:.3e}", c.name, c.checked, c.skipped, c.max_rel_error);
        }
    }
    println!(
        "gradcheck: {} cases, max relative error {:.3e} (tolerance {TOLERANCE:e})",
        report.cases.len(),
        report.max_rel_error
    );
    if !report.passed {
        return Err(Failure::Failed("gradient check failed".into()));
    }
    Ok(())
}
