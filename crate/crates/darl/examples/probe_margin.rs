// Temporary tuning probe: margin and R=1 collapse behavior across candidate
// (temperature, disc_lr) pairs, with cached pretrained checkpoints.

use std::path::PathBuf;

use darl::corpus::{build_default_world, Sequence};
use darl::discriminator::{DiscriminatorModel, DEFAULT_FIT_EPOCHS};
use darl::generator::GeneratorParams;
use darl::metrics;
use darl::numerics::Rng;
use darl::trainer::{
    adapt, generate_negatives, pretrain_generator, Branch, TrainConfig, STREAM_DISC_INIT,
    STREAM_DISC_PRETRAIN, STREAM_EVAL, STREAM_GEN_INIT, STREAM_INIT_NEG,
};

fn cached_gen(seed: u64, world_v: usize, domains: &[&[Sequence]], cfg: &TrainConfig) -> GeneratorParams {
    let dir = PathBuf::from("/tmp/probe/cache");
    std::fs::create_dir_all(&dir).unwrap();
    let gpath = dir.join(format!("s{seed}.gen"));
    if gpath.exists() {
        return GeneratorParams::load(&gpath).unwrap();
    }
    let gen_seed = Rng::with_stream(seed, STREAM_GEN_INIT).next_u64();
    let mut gen = GeneratorParams::init(gen_seed, world_v, cfg.d_e, cfg.d_h).unwrap();
    pretrain_generator(&mut gen, domains, cfg).unwrap();
    gen.save(&gpath).unwrap();
    gen
}

fn cached_disc(seed: u64, world_v: usize, domains: &[&[Sequence]], cfg: &TrainConfig) -> DiscriminatorModel {
    let dir = PathBuf::from("/tmp/probe/cache");
    std::fs::create_dir_all(&dir).unwrap();
    let dpath = dir.join(format!("s{seed}_t{}_l{}.disc", cfg.temperature, cfg.disc_lr));
    if dpath.exists() {
        return DiscriminatorModel::load(&dpath).unwrap();
    }
    let disc_seed = Rng::with_stream(seed, STREAM_DISC_INIT).next_u64();
    let mut disc = DiscriminatorModel::init(disc_seed, world_v, cfg.d_c, cfg.temperature).unwrap();
    let mut rng = Rng::with_stream(seed, STREAM_DISC_PRETRAIN);
    disc.pretrain_fewshot(domains, cfg.disc_pretrain_episodes, cfg.k, cfg.k, cfg.disc_lr, &mut rng)
        .unwrap();
    disc.save(&dpath).unwrap();
    disc
}

fn mean_score(disc: &DiscriminatorModel, seqs: &[Sequence]) -> f64 {
    seqs.iter().map(|s| disc.score(s).unwrap()).sum::<f64>() / seqs.len() as f64
}

fn main() {
    let world = build_default_world(0, 5, 5).unwrap();
    let domains: Vec<&[Sequence]> = world.sources.values().map(|s| s.as_slice()).collect();
    for (temperature, disc_lr) in [(2.0f64, 0.5f64), (2.0, 1.0)] {
        let mut margins = Vec::new();
        for seed in 0..5u64 {
            let cfg = TrainConfig { seed, temperature, disc_lr, ..TrainConfig::default() };
            let gen = cached_gen(seed, world.vocab.size(), &domains, &cfg);
            let mut disc = cached_disc(seed, world.vocab.size(), &domains, &cfg);
            let mut neg_rng = Rng::with_stream(seed, STREAM_INIT_NEG);
            let init_negs = generate_negatives(&gen, cfg.k, cfg.t_max, &mut neg_rng).unwrap();
            let fresh = generate_negatives(&gen, 64, cfg.t_max, &mut neg_rng).unwrap();
            disc.fit_prototypes(&world.support, &init_negs, DEFAULT_FIT_EPOCHS, cfg.disc_lr).unwrap();
            let margin = mean_score(&disc, &world.support) - mean_score(&disc, &fresh);
            margins.push(margin);
            println!("temp={temperature} lr={disc_lr} seed {seed}: margin {margin:.4}");
        }
        let avg = margins.iter().sum::<f64>() / margins.len() as f64;
        println!("temp={temperature} lr={disc_lr}: margin mean {avg:.4} (need >= 0.2)");
        for alpha_pg in [0.1f64, 0.2] {
            for r in [1.0f64, 0.5] {
            for seed in 0..3u64 {
                let cfg = TrainConfig {
                    seed,
                    r,
                    alpha_pg,
                    temperature,
                    disc_lr,
                    ..TrainConfig::default()
                };
                let mut gen = cached_gen(seed, world.vocab.size(), &domains, &cfg);
                let mut disc = cached_disc(seed, world.vocab.size(), &domains, &cfg);
                let mut neg_rng = Rng::with_stream(seed, STREAM_INIT_NEG);
                let init_negs = generate_negatives(&gen, cfg.k, cfg.t_max, &mut neg_rng).unwrap();
                disc.fit_prototypes(&world.support, &init_negs, DEFAULT_FIT_EPOCHS, cfg.disc_lr)
                    .unwrap();
                let log = adapt(&mut gen, &mut disc, &world.support, &cfg).unwrap();
                let rewards: Vec<f64> = log
                    .records
                    .iter()
                    .filter(|r| r.branch != Branch::Disc)
                    .map(|r| r.mean_reward)
                    .collect();
                let d = rewards.len() / 10;
                let deciles: Vec<String> = (0..10)
                    .map(|i| {
                        let s: f64 = rewards[i * d..(i + 1) * d].iter().sum();
                        format!("{:.2}", s / d as f64)
                    })
                    .collect();
                let mut eval_rng = Rng::with_stream(cfg.seed, STREAM_EVAL);
                let samples: Vec<Sequence> = (0..cfg.eval_samples)
                    .map(|_| gen.sample_sequence(cfg.t_max, &mut eval_rng).unwrap().seq)
                    .collect();
                let m = metrics::evaluate(&samples, &world, &world.support, &world.source_union())
                    .unwrap();
                let mean_len =
                    samples.iter().map(|s| s.len()).sum::<usize>() as f64 / samples.len() as f64;
                println!(
                    "r={r} alpha_pg={alpha_pg} seed {seed}: SB {:.4} net {:.4} sim {:.4} len {mean_len:.1} | rewards {}",
                    m.self_bleu,
                    m.net_accuracy,
                    m.similarity,
                    deciles.join(" ")
                );
                }
            }
        }
    }
}
