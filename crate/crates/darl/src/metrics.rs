//! Evaluation metrics: sentence BLEU-5 against the source union, leave-one-out
//! Self-BLEU-5 diversity, nearest-support similarity, and oracle-judged
//! gross/net domain accuracy with a duplicate tax.
//!
//! BLEU uses uniform 1..5-gram weights, clipped modified precisions, add-one
//! smoothing only for zero-match orders n >= 2 (orders with no n-grams at all
//! contribute precision 1), and the closest-reference-length brevity penalty
//! with ties broken toward the shorter reference.

use std::collections::{BTreeMap, HashMap, HashSet};

use crate::corpus::{DomainCorpus, Sequence};
use crate::error::{Error, Result};
use crate::par;

pub const MAX_N: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub bleu: f64,
    pub self_bleu: f64,
    pub similarity: f64,
    pub sales: usize,
    pub cost: usize,
    pub tax: usize,
    pub gross_accuracy: f64,
    pub net_accuracy: f64,
}

/// Precomputed reference profile: per order, the per-reference maximum count
/// of every n-gram, plus the reference length multiset for the brevity
/// penalty. Scoring a candidate against a fixed reference set is then
/// independent of the number of references.
pub struct BleuRefs {
    max_counts: Vec<HashMap<Vec<u32>, usize>>,
    lengths: BTreeMap<usize, usize>,
}

fn ngram_counts(ids: &[u32], n: usize) -> HashMap<Vec<u32>, usize> {
    let mut counts = HashMap::new();
    if ids.len() >= n {
        for w in ids.windows(n) {
            *counts.entry(w.to_vec()).or_insert(0) += 1;
        }
    }
    counts
}

/// Reference length closest to `c`, ties toward the shorter, optionally
/// ignoring one occurrence of `exclude`.
fn closest_length(lengths: &BTreeMap<usize, usize>, c: usize, exclude: Option<usize>) -> usize {
    let mut best: Option<usize> = None;
    for (&len, &count) in lengths {
        let available = match exclude {
            Some(e) if e == len => count - 1,
            _ => count,
        };
        if available == 0 {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => len.abs_diff(c) < b.abs_diff(c),
        };
        if better {
            best = Some(len);
        }
    }
    best.expect("at least one reference length remains")
}

impl BleuRefs {
    pub fn new(references: &[Sequence]) -> Result<BleuRefs> {
        if references.is_empty() {
            return Err(Error::InvalidArgument("BLEU needs at least one reference".into()));
        }
        let mut max_counts = vec![HashMap::new(); MAX_N];
        let mut lengths = BTreeMap::new();
        for r in references {
            if r.is_empty() {
                return Err(Error::InvalidArgument("empty reference sequence".into()));
            }
            *lengths.entry(r.len()).or_insert(0) += 1;
            for (n, table) in max_counts.iter_mut().enumerate() {
                for (gram, count) in ngram_counts(r.ids(), n + 1) {
                    let slot = table.entry(gram).or_insert(0);
                    *slot = count.max(*slot);
                }
            }
        }
        Ok(BleuRefs { max_counts, lengths })
    }

    pub fn score(&self, candidate: &Sequence) -> Result<f64> {
        if candidate.is_empty() {
            return Err(Error::InvalidArgument("empty BLEU candidate".into()));
        }
        self.score_with(candidate, |n, gram| {
            self.max_counts[n - 1].get(gram).copied().unwrap_or(0)
        })
    }

    /// Core scorer over an arbitrary clip-count lookup, shared with the
    /// leave-one-out Self-BLEU path.
    fn score_with<F>(&self, candidate: &Sequence, clip: F) -> Result<f64>
    where
        F: Fn(usize, &[u32]) -> usize,
    {
        self.score_excluding(candidate, None, clip)
    }

    fn score_excluding<F>(
        &self,
        candidate: &Sequence,
        exclude_length: Option<usize>,
        clip: F,
    ) -> Result<f64>
    where
        F: Fn(usize, &[u32]) -> usize,
    {
        let c = candidate.len();
        let r = closest_length(&self.lengths, c, exclude_length);
        let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
        let mut log_sum = 0.0;
        for n in 1..=MAX_N {
            let total = c.saturating_sub(n - 1);
            if total == 0 {
                // No n-grams of this order: contributes precision 1.
                continue;
            }
            let mut matched = 0usize;
            for (gram, count) in ngram_counts(candidate.ids(), n) {
                matched += count.min(clip(n, &gram));
            }
            let p = if matched > 0 {
                matched as f64 / total as f64
            } else if n == 1 {
                return Ok(0.0);
            } else {
                (matched + 1) as f64 / (total + 1) as f64
            };
            log_sum += p.ln() / MAX_N as f64;
        }
        Ok(bp * log_sum.exp())
    }
}

/// Sentence BLEU-5 of `candidate` against `references`.
pub fn bleu(candidate: &Sequence, references: &[Sequence]) -> Result<f64> {
    BleuRefs::new(references)?.score(candidate)
}

/// Top-two per-text counts of one n-gram, with the index attaining the
/// maximum, so any single text can be left out in O(1).
#[derive(Clone, Copy, Default)]
struct TopTwo {
    best: usize,
    best_text: usize,
    second: usize,
}

impl TopTwo {
    fn offer(&mut self, count: usize, text: usize) {
        if count > self.best {
            if self.best_text != text {
                self.second = self.best;
            }
            self.best = count;
            self.best_text = text;
        } else if text != self.best_text && count > self.second {
            self.second = count;
        }
    }

    fn without(&self, text: usize) -> usize {
        if self.best_text == text {
            self.second
        } else {
            self.best
        }
    }
}

/// Mean over i of BLEU(texts[i], texts \ {i}).
pub fn self_bleu(texts: &[Sequence]) -> Result<f64> {
    if texts.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "Self-BLEU needs at least 2 texts, got {}",
            texts.len()
        )));
    }
    let profile = BleuRefs::new(texts)?;
    let mut tables: Vec<HashMap<Vec<u32>, TopTwo>> = vec![HashMap::new(); MAX_N];
    for (i, t) in texts.iter().enumerate() {
        for (n, table) in tables.iter_mut().enumerate() {
            for (gram, count) in ngram_counts(t.ids(), n + 1) {
                table.entry(gram).or_default().offer(count, i);
            }
        }
    }
    let scores = par::par_map((0..texts.len()).collect(), |i| {
        profile.score_excluding(&texts[i], Some(texts[i].len()), |n, gram| {
            tables[n - 1].get(gram).map_or(0, |t| t.without(i))
        })
    });
    let mut total = 0.0;
    for s in scores {
        total += s?;
    }
    Ok(total / texts.len() as f64)
}

/// The support sample most similar to `y`: argmax over s of BLEU(s, [y]),
/// ties broken by lowest index. Returns the sample and its similarity.
pub fn nearest_sample(y: &Sequence, support: &[Sequence]) -> Result<(Sequence, f64)> {
    if support.is_empty() {
        return Err(Error::InvalidArgument("empty support set".into()));
    }
    let refs = BleuRefs::new(std::slice::from_ref(y))?;
    let mut best = 0usize;
    let mut best_sim = f64::NEG_INFINITY;
    for (i, s) in support.iter().enumerate() {
        let sim = refs.score(s)?;
        if sim > best_sim {
            best = i;
            best_sim = sim;
        }
    }
    Ok((support[best].clone(), best_sim))
}

/// Oracle-judged domain accuracy: sales = |texts|, cost = texts the oracle
/// places outside `target` (ill-formed included), tax = in-target texts
/// beyond the first occurrence of their exact token sequence.
pub fn accuracy_report(
    texts: &[Sequence],
    world: &DomainCorpus,
    target: &str,
) -> Result<(usize, usize, usize, f64, f64)> {
    if texts.is_empty() {
        return Err(Error::InvalidArgument("no texts to judge".into()));
    }
    let sales = texts.len();
    let verdicts = par::par_map((0..texts.len()).collect(), |i| {
        world.oracle_domain(&texts[i]).is_domain(target)
    });
    let mut distinct: HashSet<&[u32]> = HashSet::new();
    let mut in_target = 0usize;
    for (t, ok) in texts.iter().zip(&verdicts) {
        if *ok {
            in_target += 1;
            distinct.insert(t.ids());
        }
    }
    let cost = sales - in_target;
    let tax = in_target - distinct.len();
    let gross = (sales - cost) as f64 / sales as f64;
    let net = (sales - cost - tax) as f64 / sales as f64;
    Ok((sales, cost, tax, gross, net))
}

/// Full evaluation of a generated set: BLEU against `source_reference`
/// (the union of source corpora), Self-BLEU within the set, mean
/// nearest-support similarity, and oracle accuracy against the world's
/// target domain.
pub fn evaluate(
    texts: &[Sequence],
    world: &DomainCorpus,
    support: &[Sequence],
    source_reference: &[Sequence],
) -> Result<MetricsReport> {
    if texts.is_empty() {
        return Err(Error::InvalidArgument("no texts to evaluate".into()));
    }
    let refs = BleuRefs::new(source_reference)?;
    let bleu_scores = par::par_map((0..texts.len()).collect(), |i| refs.score(&texts[i]));
    let mut bleu_total = 0.0;
    for s in bleu_scores {
        bleu_total += s?;
    }
    let sim_scores =
        par::par_map((0..texts.len()).collect(), |i| Ok(nearest_sample(&texts[i], support)?.1));
    let mut sim_total = 0.0;
    for s in sim_scores {
        sim_total += s?;
    }
    let (sales, cost, tax, gross_accuracy, net_accuracy) =
        accuracy_report(texts, world, &world.target_name)?;
    Ok(MetricsReport {
        bleu: bleu_total / texts.len() as f64,
        self_bleu: self_bleu(texts)?,
        similarity: sim_total / texts.len() as f64,
        sales,
        cost,
        tax,
        gross_accuracy,
        net_accuracy,
    })
}
