//! The adaptation pipeline: MLE pretraining on the source union, episodic
//! discriminator pretraining, and the interleaved adaptation loop that picks
//! a policy-gradient or MLE generator update per step by drawing r ~ U[0,1]
//! against the update rate R, then regenerates negatives and retrains the
//! discriminator exactly once per step.
//!
//! Every concern draws from its own RNG stream derived from the config seed
//! (branch choice, PG sampling, MLE batches, negatives, evaluation, ...), so
//! the R=0 special case reduces bitwise to an external fine-tune loop and
//! R=1 never consumes MLE-stream draws.

use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::corpus::{save_corpus, DomainCorpus, Sequence};
use crate::discriminator::{DiscriminatorModel, DEFAULT_FIT_EPOCHS};
use crate::error::{Error, Result};
use crate::generator::{Direction, GeneratorParams, DEFAULT_MAX_NORM};
use crate::metrics::{evaluate, MetricsReport};
use crate::numerics::Rng;
use crate::rollout;

// Per-concern stream indices under the config seed.
pub const STREAM_GEN_INIT: u64 = 1;
pub const STREAM_DISC_INIT: u64 = 2;
pub const STREAM_PRETRAIN: u64 = 3;
pub const STREAM_PRETRAIN_EVAL: u64 = 4;
pub const STREAM_DISC_PRETRAIN: u64 = 5;
pub const STREAM_BRANCH: u64 = 6;
pub const STREAM_PG: u64 = 7;
pub const STREAM_MLE: u64 = 8;
pub const STREAM_NEG: u64 = 9;
pub const STREAM_INIT_NEG: u64 = 10;
pub const STREAM_EVAL: u64 = 11;

/// Sequences used for the per-epoch pretraining NLL estimate.
const PRETRAIN_EVAL_CAP: usize = 256;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Update rate R: probability that a step performs a PG update.
    pub r: f64,
    pub alpha_mle: f64,
    pub alpha_pg: f64,
    pub n_rollouts: usize,
    pub k: usize,
    pub t_max: usize,
    pub pretrain_epochs: usize,
    pub adapt_steps: usize,
    pub batch_size_mle: usize,
    pub disc_epochs: usize,
    pub disc_pretrain_episodes: usize,
    pub disc_lr: f64,
    pub temperature: f64,
    pub eval_samples: usize,
    pub seed: u64,
    pub d_e: usize,
    pub d_h: usize,
    pub d_c: usize,
    pub max_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            r: 0.5,
            alpha_mle: 0.05,
            alpha_pg: 0.05,
            n_rollouts: rollout::DEFAULT_N_ROLLOUTS,
            k: 5,
            t_max: 12,
            pretrain_epochs: 30,
            adapt_steps: 600,
            batch_size_mle: 16,
            disc_epochs: 5,
            disc_pretrain_episodes: crate::discriminator::DEFAULT_PRETRAIN_EPISODES,
            disc_lr: crate::discriminator::DEFAULT_DISC_LR,
            temperature: crate::discriminator::DEFAULT_TEMPERATURE,
            eval_samples: 500,
            seed: 0,
            d_e: 24,
            d_h: 32,
            d_c: 16,
            max_norm: DEFAULT_MAX_NORM,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.r) {
            return Err(Error::InvalidArgument(format!("update rate {} outside [0,1]", self.r)));
        }
        for (name, rate) in [
            ("alpha_mle", self.alpha_mle),
            ("alpha_pg", self.alpha_pg),
            ("disc_lr", self.disc_lr),
            ("temperature", self.temperature),
            ("max_norm", self.max_norm),
        ] {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} {rate} must be > 0")));
            }
        }
        // Epoch/step/episode/eval counts may be zero (no-op phases); the
        // structural counts may not.
        for (name, count) in [
            ("n_rollouts", self.n_rollouts),
            ("k", self.k),
            ("t_max", self.t_max),
            ("batch_size_mle", self.batch_size_mle),
            ("disc_epochs", self.disc_epochs),
            ("d_e", self.d_e),
            ("d_h", self.d_h),
            ("d_c", self.d_c),
        ] {
            if count == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Pg,
    Mle,
    Disc,
}

impl fmt::Display for Branch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Branch::Pg => "PG",
            Branch::Mle => "MLE",
            Branch::Disc => "DISC",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub branch: Branch,
    pub mean_reward: f64,
    pub nll_support: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
    pub gen_ckpt: Option<PathBuf>,
    pub disc_ckpt: Option<PathBuf>,
}

impl RunLog {
    pub fn branch_count(&self, branch: Branch) -> usize {
        self.records.iter().filter(|r| r.branch == branch).count()
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("step,branch,mean_reward,nll_support,seconds\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{:.3}\n",
                r.step, r.branch, r.mean_reward, r.nll_support, r.seconds
            ));
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Mean per-decision NLL over a set of sequences (the training objective).
pub fn mean_nll(params: &GeneratorParams, seqs: &[Sequence]) -> Result<f64> {
    if seqs.is_empty() {
        return Err(Error::InvalidArgument("mean NLL of an empty set".into()));
    }
    let mut total = 0.0;
    for s in seqs {
        total += params.nll(s)? / (s.len() + 1) as f64;
    }
    Ok(total / seqs.len() as f64)
}

/// A with-replacement MLE batch of min(batch_size, |support|) sequences.
pub fn mle_batch(support: &[Sequence], batch_size: usize, rng: &mut Rng) -> Vec<Sequence> {
    let size = batch_size.min(support.len());
    (0..size).map(|_| support[rng.below(support.len())].clone()).collect()
}

/// Epochs of shuffled minibatch MLE over the union of all source domains.
/// Returns the mean NLL on a fixed probe subset measured before each epoch
/// and once after the last, so `nlls.first()` is the untrained level and
/// `nlls.last()` the final one.
pub fn pretrain_generator(
    params: &mut GeneratorParams,
    sources: &[&[Sequence]],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    if sources.is_empty() || sources.iter().any(|s| s.is_empty()) {
        return Err(Error::InvalidArgument("pretraining needs non-empty source domains".into()));
    }
    let union: Vec<&Sequence> = sources.iter().flat_map(|s| s.iter()).collect();
    let mut probe_rng = Rng::with_stream(cfg.seed, STREAM_PRETRAIN_EVAL);
    let probe: Vec<Sequence> = if union.len() <= PRETRAIN_EVAL_CAP {
        union.iter().map(|s| (*s).clone()).collect()
    } else {
        (0..PRETRAIN_EVAL_CAP)
            .map(|_| union[probe_rng.below(union.len())].clone())
            .collect()
    };
    let mut rng = Rng::with_stream(cfg.seed, STREAM_PRETRAIN);
    let mut nlls = vec![mean_nll(params, &probe)?];
    let mut order: Vec<usize> = (0..union.len()).collect();
    for _ in 0..cfg.pretrain_epochs {
        for i in 0..order.len() {
            let j = i + rng.below(order.len() - i);
            order.swap(i, j);
        }
        for chunk in order.chunks(cfg.batch_size_mle) {
            let batch: Vec<Sequence> = chunk.iter().map(|&i| union[i].clone()).collect();
            let grads = params.nll_grad(&batch)?;
            params.apply_update(&grads, cfg.alpha_mle, Direction::Descend, cfg.max_norm)?;
        }
        nlls.push(mean_nll(params, &probe)?);
    }
    Ok(nlls)
}

/// `count` policy samples for discriminator retraining.
pub fn generate_negatives(
    params: &GeneratorParams,
    count: usize,
    t_max: usize,
    rng: &mut Rng,
) -> Result<Vec<Sequence>> {
    if count == 0 {
        return Err(Error::InvalidArgument("negative count must be at least 1".into()));
    }
    (0..count).map(|_| Ok(params.sample_sequence(t_max, rng)?.seq)).collect()
}

fn mean_score(disc: &DiscriminatorModel, seqs: &[Sequence]) -> Result<f64> {
    let mut total = 0.0;
    for s in seqs {
        total += disc.score(s)?;
    }
    Ok(total / seqs.len() as f64)
}

fn step_error(step: usize, e: Error) -> Error {
    if e.is_numeric() {
        Error::Diverged { step, detail: e.to_string() }
    } else {
        e
    }
}

/// Algorithm's adaptation loop. Per step: draw r from the branch stream; if
/// r < R, one policy-gradient ascent step on a fresh sample with MC action
/// values, else one MLE descent step on a support batch; then generate |S'|
/// negatives and retrain the discriminator once. Streams are derived from
/// `cfg.seed` internally (a single shared RNG would entangle the branches
/// and break the R=0 fine-tune reduction).
pub fn adapt(
    params: &mut GeneratorParams,
    disc: &mut DiscriminatorModel,
    support: &[Sequence],
    cfg: &TrainConfig,
) -> Result<RunLog> {
    cfg.validate()?;
    if support.len() != cfg.k {
        return Err(Error::InvalidArgument(format!(
            "support has {} sequences, config k is {}",
            support.len(),
            cfg.k
        )));
    }
    let mut branch_rng = Rng::with_stream(cfg.seed, STREAM_BRANCH);
    let mut pg_rng = Rng::with_stream(cfg.seed, STREAM_PG);
    let mut mle_rng = Rng::with_stream(cfg.seed, STREAM_MLE);
    let mut neg_rng = Rng::with_stream(cfg.seed, STREAM_NEG);
    let mut log = RunLog::default();
    for step in 0..cfg.adapt_steps {
        let start = Instant::now();
        let branch = if branch_rng.next_f64() < cfg.r { Branch::Pg } else { Branch::Mle };
        match branch {
            Branch::Pg => {
                let sampled = params.sample_sequence(cfg.t_max, &mut pg_rng)?;
                let profile = rollout::q_for_sequence(
                    params,
                    disc,
                    &sampled,
                    cfg.n_rollouts,
                    cfg.t_max,
                    &mut pg_rng,
                )?;
                let grads = params
                    .pg_grad(&sampled.seq, &profile.q, sampled.eos_terminated)
                    .map_err(|e| step_error(step, e))?;
                params
                    .apply_update(&grads, cfg.alpha_pg, Direction::Ascend, cfg.max_norm)
                    .map_err(|e| step_error(step, e))?;
            }
            Branch::Mle => {
                let batch = mle_batch(support, cfg.batch_size_mle, &mut mle_rng);
                let grads = params.nll_grad(&batch).map_err(|e| step_error(step, e))?;
                params
                    .apply_update(&grads, cfg.alpha_mle, Direction::Descend, cfg.max_norm)
                    .map_err(|e| step_error(step, e))?;
            }
            Branch::Disc => unreachable!("branch draw yields PG or MLE only"),
        }
        let negatives = generate_negatives(params, support.len(), cfg.t_max, &mut neg_rng)?;
        let nll_support = mean_nll(params, support)?;
        let reward = mean_score(disc, &negatives).map_err(|e| step_error(step, e))?;
        log.records.push(StepRecord {
            step,
            branch,
            mean_reward: reward,
            nll_support,
            seconds: start.elapsed().as_secs_f64(),
        });
        let retrain_start = Instant::now();
        assert_eq!(support.len(), negatives.len(), "retraining requires equal class sizes");
        disc.fit_prototypes(support, &negatives, cfg.disc_epochs, cfg.disc_lr)
            .map_err(|e| step_error(step, e))?;
        let post = mean_score(disc, &negatives).map_err(|e| step_error(step, e))?;
        log.records.push(StepRecord {
            step,
            branch: Branch::Disc,
            mean_reward: post,
            nll_support,
            seconds: retrain_start.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}

fn config_echo(cfg: &TrainConfig, v: usize) -> String {
    let mut s = String::new();
    let mut kv = |k: &str, val: String| {
        s.push_str(k);
        s.push('=');
        s.push_str(&val);
        s.push('\n');
    };
    kv("r", format!("{}", cfg.r));
    kv("alpha_mle", format!("{}", cfg.alpha_mle));
    kv("alpha_pg", format!("{}", cfg.alpha_pg));
    kv("n_rollouts", format!("{}", cfg.n_rollouts));
    kv("k", format!("{}", cfg.k));
    kv("t_max", format!("{}", cfg.t_max));
    kv("pretrain_epochs", format!("{}", cfg.pretrain_epochs));
    kv("adapt_steps", format!("{}", cfg.adapt_steps));
    kv("batch_size_mle", format!("{}", cfg.batch_size_mle));
    kv("disc_epochs", format!("{}", cfg.disc_epochs));
    kv("disc_pretrain_episodes", format!("{}", cfg.disc_pretrain_episodes));
    kv("disc_lr", format!("{}", cfg.disc_lr));
    kv("temperature", format!("{}", cfg.temperature));
    kv("eval_samples", format!("{}", cfg.eval_samples));
    kv("seed", format!("{}", cfg.seed));
    kv("v", format!("{v}"));
    kv("d_e", format!("{}", cfg.d_e));
    kv("d_h", format!("{}", cfg.d_h));
    kv("d_c", format!("{}", cfg.d_c));
    kv("max_norm", format!("{}", cfg.max_norm));
    kv("bleu_weights", "uniform_1_to_5".to_string());
    s
}

pub const METRICS_CSV_HEADER: &str =
    "run_id,seed,R,k,bleu,self_bleu,similarity,sales,cost,tax,gross_acc,net_acc";

/// The metric columns of a report in CSV order.
pub fn report_fields(report: &MetricsReport) -> [f64; 8] {
    [
        report.bleu,
        report.self_bleu,
        report.similarity,
        report.sales as f64,
        report.cost as f64,
        report.tax as f64,
        report.gross_accuracy,
        report.net_accuracy,
    ]
}

/// One metrics.csv data row; `None` metrics leave the fields empty (used by
/// sweeps to record failed cells). `seed` and `r` are preformatted so rows
/// that aggregate over them can leave them blank.
pub fn metrics_csv_row(run_id: &str, seed: &str, r: &str, k: &str, metrics: Option<[f64; 8]>) -> String {
    let mut row = format!("{run_id},{seed},{r},{k}");
    match metrics {
        Some(fields) => {
            for f in fields {
                row.push_str(&format!(",{f}"));
            }
        }
        None => row.push_str(",,,,,,,,"),
    }
    row.push('\n');
    row
}

fn zero_report(sales: usize) -> MetricsReport {
    MetricsReport {
        bleu: 0.0,
        self_bleu: 0.0,
        similarity: 0.0,
        sales,
        cost: 0,
        tax: 0,
        gross_accuracy: 0.0,
        net_accuracy: 0.0,
    }
}

/// Full pipeline into `out_dir`: pretrain generator and discriminator, fit
/// the prototypes on (support, initial negatives), adapt, then sample and
/// evaluate. Persists config.txt, gen.ckpt, disc.ckpt, runlog.csv,
/// samples.txt and metrics.csv; on failure the partial directory is removed.
pub fn run_experiment(
    cfg: &TrainConfig,
    world: &DomainCorpus,
    out_dir: &Path,
) -> Result<(RunLog, MetricsReport)> {
    cfg.validate()?;
    if world.support.len() != cfg.k {
        return Err(Error::InvalidArgument(format!(
            "world support of {} does not match config k {}",
            world.support.len(),
            cfg.k
        )));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let result = run_experiment_inner(cfg, world, out_dir);
    if result.is_err() {
        let _ = std::fs::remove_dir_all(out_dir);
    }
    result
}

fn run_experiment_inner(
    cfg: &TrainConfig,
    world: &DomainCorpus,
    out_dir: &Path,
) -> Result<(RunLog, MetricsReport)> {
    let v = world.vocab.size();
    let config_path = out_dir.join("config.txt");
    std::fs::write(&config_path, config_echo(cfg, v)).map_err(|e| Error::io(&config_path, e))?;

    let gen_seed = Rng::with_stream(cfg.seed, STREAM_GEN_INIT).next_u64();
    let mut gen = GeneratorParams::init(gen_seed, v, cfg.d_e, cfg.d_h)?;
    let domains: Vec<&[Sequence]> = world.sources.values().map(|s| s.as_slice()).collect();
    pretrain_generator(&mut gen, &domains, cfg)?;

    let disc_seed = Rng::with_stream(cfg.seed, STREAM_DISC_INIT).next_u64();
    let mut disc = DiscriminatorModel::init(disc_seed, v, cfg.d_c, cfg.temperature)?;
    let mut disc_rng = Rng::with_stream(cfg.seed, STREAM_DISC_PRETRAIN);
    disc.pretrain_fewshot(
        &domains,
        cfg.disc_pretrain_episodes,
        cfg.k,
        cfg.k,
        cfg.disc_lr,
        &mut disc_rng,
    )?;
    let mut init_neg_rng = Rng::with_stream(cfg.seed, STREAM_INIT_NEG);
    let init_negatives = generate_negatives(&gen, cfg.k, cfg.t_max, &mut init_neg_rng)?;
    assert_eq!(world.support.len(), init_negatives.len(), "initial fit requires equal classes");
    disc.fit_prototypes(&world.support, &init_negatives, DEFAULT_FIT_EPOCHS, cfg.disc_lr)?;

    let mut log = adapt(&mut gen, &mut disc, &world.support, cfg)?;

    let gen_path = out_dir.join("gen.ckpt");
    let disc_path = out_dir.join("disc.ckpt");
    gen.save(&gen_path)?;
    disc.save(&disc_path)?;
    log.gen_ckpt = Some(gen_path);
    log.disc_ckpt = Some(disc_path);
    log.save_csv(&out_dir.join("runlog.csv"))?;

    let mut eval_rng = Rng::with_stream(cfg.seed, STREAM_EVAL);
    let samples: Vec<Sequence> = (0..cfg.eval_samples)
        .map(|_| Ok(gen.sample_sequence(cfg.t_max, &mut eval_rng)?.seq))
        .collect::<Result<_>>()?;
    save_corpus(&out_dir.join("samples.txt"), &samples, &world.vocab)?;

    let report = if samples.is_empty() {
        zero_report(0)
    } else {
        evaluate(&samples, world, &world.support, &world.source_union())?
    };
    let run_id = out_dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".to_string());
    let metrics_path = out_dir.join("metrics.csv");
    let mut csv = String::from(METRICS_CSV_HEADER);
    csv.push('\n');
    csv.push_str(&metrics_csv_row(
        &run_id,
        &cfg.seed.to_string(),
        &cfg.r.to_string(),
        &cfg.k.to_string(),
        Some(report_fields(&report)),
    ));
    std::fs::write(&metrics_path, csv).map_err(|e| Error::io(&metrics_path, e))?;
    Ok((log, report))
}
