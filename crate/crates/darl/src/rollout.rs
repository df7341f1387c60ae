//! Monte-Carlo action values: complete a partial sequence N times with the
//! current policy, score the completions with the discriminator, and average.
//!
//! For every non-terminal decision the value is the mean discriminator score
//! over N fresh rollouts of the decision's prefix; once the prefix is the
//! whole finished sequence (the EOS decision, or the last token of a
//! cap-length sample) the sequence is scored directly, no rollouts. Each
//! rollout draws from its own indexed RNG stream and the mean is reduced in
//! stream order, so results are bit-identical across thread counts.

use crate::corpus::{Sequence, EOS, START};
use crate::discriminator::DiscriminatorModel;
use crate::error::{Error, Result};
use crate::generator::{GeneratorParams, Sampled};
use crate::numerics::{sample_categorical, Rng};
use crate::par;

pub const DEFAULT_N_ROLLOUTS: usize = 16;

/// One action value per decision step of a sampled sequence, including the
/// EOS decision when one was taken.
#[derive(Clone, Debug, PartialEq)]
pub struct QProfile {
    pub q: Vec<f64>,
    pub n_rollouts: usize,
    /// Length of the prefix whose completions (or direct score) produced
    /// each q value.
    pub prefix_lengths: Vec<usize>,
}

/// Completes `prefix` with the current policy N times, one independent RNG
/// stream per rollout. Sampling semantics match the generator's: EOS ends a
/// completion (and is not stored), reaching `t_max` tokens ends it without
/// an EOS decision.
pub fn mc_complete(
    params: &GeneratorParams,
    prefix: &Sequence,
    n: usize,
    t_max: usize,
    rng: &mut Rng,
) -> Result<Vec<Sequence>> {
    if n == 0 {
        return Err(Error::InvalidArgument("rollout count must be at least 1".into()));
    }
    if prefix.len() >= t_max {
        return Err(Error::InvalidArgument(format!(
            "prefix of {} tokens is already terminal at t_max {t_max}",
            prefix.len()
        )));
    }
    for &id in prefix.ids() {
        if id as usize >= params.v() {
            return Err(Error::InvalidArgument(format!(
                "prefix token {id} out of range for vocabulary of {}",
                params.v()
            )));
        }
    }
    let base = rng.next_u64();
    let streams: Vec<Rng> = (0..n).map(|i| Rng::with_stream(base, i as u64)).collect();
    par::par_map(streams, |mut stream| complete_from(params, prefix, t_max, &mut stream))
        .into_iter()
        .collect()
}

fn complete_from(
    params: &GeneratorParams,
    prefix: &Sequence,
    t_max: usize,
    rng: &mut Rng,
) -> Result<Sequence> {
    let mut state = params.start_state();
    let (mut probs, mut next) = params.step(&state, START)?;
    state = next;
    for &tok in prefix.ids() {
        (probs, next) = params.step(&state, tok)?;
        state = next;
    }
    let mut ids = prefix.ids().to_vec();
    while ids.len() < t_max {
        let action = sample_categorical(probs.data(), rng)? as u32;
        if action == EOS {
            break;
        }
        ids.push(action);
        if ids.len() == t_max {
            break;
        }
        (probs, next) = params.step(&state, action)?;
        state = next;
    }
    Ok(Sequence::from_ids(ids))
}

/// Action values for every decision of a sampled sequence. Decision t covers
/// the prefix Y_{1:t+1}; non-terminal prefixes are valued by N fresh rollouts
/// each, the terminal decision by scoring the finished sequence directly.
/// An empty sampled sequence cannot be scored and is rejected.
pub fn q_for_sequence(
    params: &GeneratorParams,
    model: &DiscriminatorModel,
    sampled: &Sampled,
    n: usize,
    t_max: usize,
    rng: &mut Rng,
) -> Result<QProfile> {
    if n == 0 {
        return Err(Error::InvalidArgument("rollout count must be at least 1".into()));
    }
    let len = sampled.seq.len();
    if len > t_max {
        return Err(Error::InvalidArgument(format!(
            "sequence of {len} tokens exceeds t_max {t_max}"
        )));
    }
    let decisions = sampled.decisions();
    if decisions == 0 {
        return Err(Error::InvalidArgument("sequence with no decisions has no action values".into()));
    }
    let mut q = Vec::with_capacity(decisions);
    let mut prefix_lengths = Vec::with_capacity(decisions);
    for t in 0..decisions {
        let plen = (t + 1).min(len);
        let terminal = plen == t_max || (t == len && sampled.eos_terminated);
        let prefix = Sequence::from_ids(sampled.seq.ids()[..plen].to_vec());
        let value = if terminal {
            model.score(&prefix)?
        } else {
            let completions = mc_complete(params, &prefix, n, t_max, rng)?;
            let mut total = 0.0;
            for c in &completions {
                total += model.score(c)?;
            }
            total / n as f64
        };
        debug_assert!((0.0..=1.0).contains(&value), "q value {value} outside [0,1]");
        q.push(value);
        prefix_lengths.push(plen);
    }
    Ok(QProfile { q, n_rollouts: n, prefix_lengths })
}
