//! Command-line plumbing: world generation, single experiment runs, R-sweeps
//! over (R, seed) cells, and standalone evaluation of a samples file.
//!
//! Configuration is a plain key=value file merged under flag overrides
//! (flags win); the effective configuration is echoed to config.txt so a run
//! can be reproduced from that file alone. Exit codes: 0 success, 1 usage or
//! input error, 2 numeric failure (divergence).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::corpus::{build_world, load_corpus, DomainCorpus, Sequence, WorldConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, MetricsReport};
use crate::trainer::{
    metrics_csv_row, report_fields, run_experiment, TrainConfig, METRICS_CSV_HEADER,
};

pub const THREADS_ENV: &str = "DARL_THREADS";

#[derive(Debug, Parser)]
#[command(name = "darl", version, about = "Few-shot domain adaptation for a recurrent text generator", disable_help_subcommand = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-domain world directory.
    World(WorldArgs),
    /// Pretrain, adapt and evaluate one experiment.
    Run(RunArgs),
    /// Run every (R, seed) cell and aggregate the per-cell metrics.
    Sweep(SweepArgs),
    /// Evaluate an existing samples file against a world.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct WorldArgs {
    /// World seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of source domains (the target is always added).
    #[arg(long, default_value_t = 5)]
    pub domains: usize,
    /// Support-set size drawn from the target pool.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Sentences generated per domain.
    #[arg(long, default_value_t = 2000)]
    pub sentences: usize,
    /// Minimum sentence length.
    #[arg(long, default_value_t = 4)]
    pub min_len: usize,
    /// Maximum sentence length.
    #[arg(long, default_value_t = 12)]
    pub max_len: usize,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

/// Optional overrides shared by `run` and `sweep`; unset flags fall back to
/// the config file, then to the built-in defaults.
#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    /// key=value config file applied before flag overrides.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// World directory produced by `darl world`.
    #[arg(long)]
    pub world: Option<PathBuf>,
    /// Update rate R in [0,1]: probability of a PG step.
    #[arg(long = "R")]
    pub r: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Support-set size; defaults to the world's support size.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub alpha_mle: Option<f64>,
    #[arg(long)]
    pub alpha_pg: Option<f64>,
    #[arg(long)]
    pub n_rollouts: Option<usize>,
    #[arg(long)]
    pub t_max: Option<usize>,
    #[arg(long)]
    pub pretrain_epochs: Option<usize>,
    #[arg(long)]
    pub adapt_steps: Option<usize>,
    #[arg(long)]
    pub batch_size_mle: Option<usize>,
    #[arg(long)]
    pub disc_epochs: Option<usize>,
    #[arg(long)]
    pub disc_pretrain_episodes: Option<usize>,
    #[arg(long)]
    pub disc_lr: Option<f64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub eval_samples: Option<usize>,
    #[arg(long)]
    pub d_e: Option<usize>,
    #[arg(long)]
    pub d_h: Option<usize>,
    #[arg(long)]
    pub d_c: Option<usize>,
    #[arg(long)]
    pub max_norm: Option<f64>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Experiment output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Comma-separated update rates to sweep.
    #[arg(long = "R-list", value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub r_list: Vec<f64>,
    /// Number of seeds per R, counted up from the base seed.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    /// Sweep output directory (one subdirectory per cell).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Samples file, one space-separated sentence per line.
    #[arg(long)]
    pub samples: PathBuf,
    /// World directory produced by `darl world`.
    #[arg(long)]
    pub world: PathBuf,
    /// Support file; defaults to the world's own support set.
    #[arg(long)]
    pub support: Option<PathBuf>,
    /// Output directory for metrics.csv.
    #[arg(long)]
    pub out: PathBuf,
}

/// Exit code for a failed command: numeric failures are distinguishable so
/// sweep scripts can react to divergence.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        2
    } else {
        1
    }
}

/// Applies the DARL_THREADS cap before any parallel work starts. Without the
/// parallel feature the value is validated and ignored.
pub fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .ok()
        .filter(|&n| n >= 1)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_ENV}={raw} is not a thread count >= 1")))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

pub fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::World(args) => cmd_world(args),
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Eval(args) => cmd_eval(args),
    }
}

fn cmd_world(args: &WorldArgs) -> Result<()> {
    let world = build_world(&WorldConfig {
        seed: args.seed,
        n_source_domains: args.domains,
        k: args.k,
        sentences_per_domain: args.sentences,
        min_len: args.min_len,
        max_len: args.max_len,
    })?;
    world.save_dir(&args.out)?;
    println!(
        "world written to {}: {} source domains + target {:?}, k={}, vocab {}",
        args.out.display(),
        world.sources.len(),
        world.target_name,
        world.support.len(),
        world.vocab.size()
    );
    Ok(())
}

/// Parsed key=value config file: the overridable fields plus the two
/// informational keys a config.txt echo carries.
struct FileConfig {
    overrides: Overrides,
    v: Option<usize>,
}

fn parse_config_file(path: &Path) -> Result<FileConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut o = Overrides::default();
    let mut v = None;
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::format(path, format!("line {}: expected key=value, got {line:?}", i + 1))
        })?;
        let bad = |what: &str| Error::format(path, format!("line {}: {key}={value} is not {what}", i + 1));
        macro_rules! num {
            ($what:expr) => {
                value.parse().map_err(|_| bad($what))?
            };
        }
        match key {
            "r" => o.r = Some(num!("a rate")),
            "seed" => o.seed = Some(num!("a seed")),
            "k" => o.k = Some(num!("a count")),
            "alpha_mle" => o.alpha_mle = Some(num!("a rate")),
            "alpha_pg" => o.alpha_pg = Some(num!("a rate")),
            "n_rollouts" => o.n_rollouts = Some(num!("a count")),
            "t_max" => o.t_max = Some(num!("a count")),
            "pretrain_epochs" => o.pretrain_epochs = Some(num!("a count")),
            "adapt_steps" => o.adapt_steps = Some(num!("a count")),
            "batch_size_mle" => o.batch_size_mle = Some(num!("a count")),
            "disc_epochs" => o.disc_epochs = Some(num!("a count")),
            "disc_pretrain_episodes" => o.disc_pretrain_episodes = Some(num!("a count")),
            "disc_lr" => o.disc_lr = Some(num!("a rate")),
            "temperature" => o.temperature = Some(num!("a rate")),
            "eval_samples" => o.eval_samples = Some(num!("a count")),
            "d_e" => o.d_e = Some(num!("a count")),
            "d_h" => o.d_h = Some(num!("a count")),
            "d_c" => o.d_c = Some(num!("a count")),
            "max_norm" => o.max_norm = Some(num!("a rate")),
            "world" => o.world = Some(PathBuf::from(value)),
            "v" => v = Some(num!("a count")),
            "bleu_weights" => {
                if value != "uniform_1_to_5" {
                    return Err(Error::format(path, format!("unsupported bleu_weights {value:?}")));
                }
            }
            _ => return Err(Error::format(path, format!("line {}: unknown key {key:?}", i + 1))),
        }
    }
    Ok(FileConfig { overrides: o, v })
}

fn apply_overrides(o: &Overrides, cfg: &mut TrainConfig) {
    macro_rules! take {
        ($field:ident) => {
            if let Some(v) = o.$field {
                cfg.$field = v;
            }
        };
    }
    take!(r);
    take!(seed);
    take!(k);
    take!(alpha_mle);
    take!(alpha_pg);
    take!(n_rollouts);
    take!(t_max);
    take!(pretrain_epochs);
    take!(adapt_steps);
    take!(batch_size_mle);
    take!(disc_epochs);
    take!(disc_pretrain_episodes);
    take!(disc_lr);
    take!(temperature);
    take!(eval_samples);
    take!(d_e);
    take!(d_h);
    take!(d_c);
    take!(max_norm);
}

/// The merged configuration plus the loaded world. Flags beat file values;
/// `k` defaults to the world's support size when neither sets it.
fn effective_config(flags: &Overrides) -> Result<(TrainConfig, DomainCorpus, PathBuf)> {
    let file = match &flags.config {
        Some(path) => parse_config_file(path)?,
        None => FileConfig { overrides: Overrides::default(), v: None },
    };
    let mut cfg = TrainConfig::default();
    apply_overrides(&file.overrides, &mut cfg);
    apply_overrides(flags, &mut cfg);
    let world_dir = flags
        .world
        .clone()
        .or(file.overrides.world.clone())
        .ok_or_else(|| Error::InvalidArgument("no world directory (--world or world= in the config)".into()))?;
    let world = DomainCorpus::load_dir(&world_dir)?;
    if let Some(v) = file.v {
        if v != world.vocab.size() {
            return Err(Error::InvalidArgument(format!(
                "config was written for vocab size {v}, world has {}",
                world.vocab.size()
            )));
        }
    }
    if flags.k.is_none() && file.overrides.k.is_none() {
        cfg.k = world.support.len();
    }
    cfg.validate()?;
    Ok((cfg, world, world_dir))
}

/// Records the world location in the echoed config so the run can be
/// reproduced from config.txt alone.
fn append_world_line(out_dir: &Path, world_dir: &Path) -> Result<()> {
    let canon = fs::canonicalize(world_dir).unwrap_or_else(|_| world_dir.to_path_buf());
    let path = out_dir.join("config.txt");
    let mut text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    text.push_str(&format!("world={}\n", canon.display()));
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

fn print_report(report: &MetricsReport) {
    println!(
        "bleu={} self_bleu={} similarity={} sales={} cost={} tax={} gross_acc={} net_acc={}",
        report.bleu,
        report.self_bleu,
        report.similarity,
        report.sales,
        report.cost,
        report.tax,
        report.gross_accuracy,
        report.net_accuracy
    );
}

fn cmd_run(args: &RunArgs) -> Result<()> {
    let (cfg, world, world_dir) = effective_config(&args.overrides)?;
    let (_, report) = run_experiment(&cfg, &world, &args.out)?;
    append_world_line(&args.out, &world_dir)?;
    print_report(&report);
    println!("run artifacts in {}", args.out.display());
    Ok(())
}

fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    if args.r_list.is_empty() {
        return Err(Error::InvalidArgument("empty R list".into()));
    }
    if args.seeds == 0 {
        return Err(Error::InvalidArgument("seeds must be at least 1".into()));
    }
    let mut rs = args.r_list.clone();
    for &r in &rs {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::InvalidArgument(format!("update rate {r} outside [0,1]")));
        }
    }
    rs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    rs.dedup();
    let (base_cfg, world, world_dir) = effective_config(&args.overrides)?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    // Cell rows in (R, seed) order, then per-R means over succeeding cells.
    let mut csv = String::from(METRICS_CSV_HEADER);
    csv.push('\n');
    let mut means: BTreeMap<String, Vec<[f64; 8]>> = BTreeMap::new();
    for &r in &rs {
        let mut cell_reports = Vec::new();
        for offset in 0..args.seeds {
            let seed = base_cfg.seed + offset;
            let cfg = TrainConfig { r, seed, ..base_cfg.clone() };
            let cell_id = format!("R{r}_s{seed}");
            let cell_dir = args.out.join(&cell_id);
            match run_experiment(&cfg, &world, &cell_dir) {
                Ok((_, report)) => {
                    append_world_line(&cell_dir, &world_dir)?;
                    println!("cell {cell_id}: ok");
                    let fields = report_fields(&report);
                    csv.push_str(&metrics_csv_row(
                        &cell_id,
                        &seed.to_string(),
                        &r.to_string(),
                        &cfg.k.to_string(),
                        Some(fields),
                    ));
                    cell_reports.push(fields);
                }
                Err(e) => {
                    eprintln!("cell {cell_id} failed: {e}");
                    csv.push_str(&metrics_csv_row(
                        &cell_id,
                        &seed.to_string(),
                        &r.to_string(),
                        &cfg.k.to_string(),
                        None,
                    ));
                }
            }
        }
        means.insert(r.to_string(), cell_reports);
    }
    for &r in &rs {
        let key = r.to_string();
        let cells = &means[&key];
        let mean = if cells.is_empty() {
            None
        } else {
            let mut acc = [0.0; 8];
            for fields in cells {
                for (a, f) in acc.iter_mut().zip(fields) {
                    *a += f;
                }
            }
            acc.iter_mut().for_each(|a| *a /= cells.len() as f64);
            Some(acc)
        };
        csv.push_str(&metrics_csv_row(
            &format!("mean_R{key}"),
            "",
            &key,
            &base_cfg.k.to_string(),
            mean,
        ));
    }
    let csv_path = args.out.join("sweep.csv");
    fs::write(&csv_path, csv).map_err(|e| Error::io(&csv_path, e))?;
    println!("sweep written to {}", csv_path.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let world = DomainCorpus::load_dir(&args.world)?;
    let (samples, unk) = load_corpus(&args.samples, &world.vocab)?;
    if samples.is_empty() {
        return Err(Error::InvalidArgument(format!("{} holds no sentences", args.samples.display())));
    }
    if unk > 0 {
        eprintln!("note: {unk} out-of-vocabulary words mapped to <unk>");
    }
    let support: Vec<Sequence> = match &args.support {
        Some(path) => {
            let (seqs, support_unk) = load_corpus(path, &world.vocab)?;
            if seqs.is_empty() {
                return Err(Error::InvalidArgument(format!("{} holds no sentences", path.display())));
            }
            if support_unk > 0 {
                return Err(Error::format(path, format!("{support_unk} out-of-vocabulary words")));
            }
            seqs
        }
        None => world.support.clone(),
    };
    let report = evaluate(&samples, &world, &support, &world.source_union())?;
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let run_id = args
        .out
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "eval".to_string());
    let mut csv = String::from(METRICS_CSV_HEADER);
    csv.push('\n');
    csv.push_str(&metrics_csv_row(
        &run_id,
        "",
        "",
        &support.len().to_string(),
        Some(report_fields(&report)),
    ));
    let path = args.out.join("metrics.csv");
    fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
    print_report(&report);
    Ok(())
}
