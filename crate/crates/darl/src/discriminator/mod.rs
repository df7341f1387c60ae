//! The reward model D: a few-shot prototype classifier over sequences.
//!
//! A sequence is encoded as tanh(projection(mean of token embeddings)) and
//! scored by a 2-way softmax over negative squared distances to two class
//! prototypes (target-real vs negative), divided by a fixed temperature.
//! `pretrain_fewshot` shapes the encoder with genuine episodic training
//! (episode prototypes recomputed from support sets, gradients flowing
//! through them); `fit_prototypes` then binds the two stored prototypes to
//! concrete positive/negative pools and polishes both with full-batch
//! descent. Mean pooling makes the encoding order-free, a documented
//! limitation that keyword-separable domains tolerate.

use std::path::Path;

use crate::ckpt;
use crate::corpus::Sequence;
use crate::error::{Error, Result};
use crate::numerics::{softmax_slice, Rng, Tensor, CE_FLOOR};

// Wider than the generator's 0.08: squared distances between near-zero
// tanh encodings vanish, and with them the gradient, so the classifier
// needs O(1) encodings from the start to train in few episodes.
const INIT_RANGE: f64 = 0.5;
const CKPT_MAGIC: &[u8; 8] = b"DARLDSC\0";
const CKPT_VERSION: u32 = 1;
const N_ARRAYS: usize = 5;

// Sharp enough that sub-unit encoding distances still produce committed
// class probabilities; 1.0 keeps scores pinned near 0.5 at desk scale.
pub const DEFAULT_TEMPERATURE: f64 = 0.1;
// CE steps on temperature-scaled distances carry a 2/temperature factor;
// rates much above 0.1 overshoot and flip the prototypes past each other.
pub const DEFAULT_FIT_EPOCHS: usize = 40;
pub const DEFAULT_PRETRAIN_EPISODES: usize = 1000;
pub const DEFAULT_DISC_LR: f64 = 0.1;

/// Row 0 of `prototypes` is the target-real class, row 1 the negative class.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorModel {
    v: usize,
    d_c: usize,
    pub embedding: Tensor,
    pub proj: Tensor,
    pub proj_b: Tensor,
    pub prototypes: Tensor,
    temperature: f64,
}

/// A 2-way few-shot episode: per-class support and query sets, disjoint
/// within each class by construction of the samplers.
#[derive(Clone, Debug)]
pub struct Episode {
    pub support: [Vec<Sequence>; 2],
    pub query: [Vec<Sequence>; 2],
}

/// Gradient accumulator shaped like the trainable arrays of the model.
pub(crate) struct DiscGrads {
    embedding: Tensor,
    proj: Tensor,
    proj_b: Tensor,
    prototypes: Tensor,
}

impl DiscGrads {
    fn zeros(v: usize, d_c: usize) -> DiscGrads {
        DiscGrads {
            embedding: Tensor::zeros(&[v, d_c]),
            proj: Tensor::zeros(&[d_c, d_c]),
            proj_b: Tensor::zeros(&[d_c]),
            prototypes: Tensor::zeros(&[2, d_c]),
        }
    }

    #[cfg(test)]
    pub(crate) fn to_flat(&self) -> Tensor {
        let mut data = Vec::new();
        for t in [&self.embedding, &self.proj, &self.proj_b, &self.prototypes] {
            data.extend_from_slice(t.data());
        }
        Tensor::vector(data)
    }
}

struct Encoded {
    ids: Vec<usize>,
    pooled: Vec<f64>,
    z: Vec<f64>,
}

impl DiscriminatorModel {
    pub fn init(seed: u64, v: usize, d_c: usize, temperature: f64) -> Result<DiscriminatorModel> {
        if v == 0 || d_c == 0 {
            return Err(Error::InvalidArgument(format!("zero model dimension ({v}, {d_c})")));
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidArgument(format!("temperature {temperature} must be > 0")));
        }
        let mut rng = Rng::new(seed);
        let mut draw = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-INIT_RANGE, INIT_RANGE)).collect())
                .expect("shape/data lengths agree by construction")
        };
        Ok(DiscriminatorModel {
            v,
            d_c,
            embedding: draw(&[v, d_c]),
            proj: draw(&[d_c, d_c]),
            proj_b: draw(&[d_c]),
            prototypes: Tensor::zeros(&[2, d_c]),
            temperature,
        })
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn d_c(&self) -> usize {
        self.d_c
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn all_finite(&self) -> bool {
        [&self.embedding, &self.proj, &self.proj_b, &self.prototypes]
            .iter()
            .all(|t| t.all_finite())
    }

    /// tanh(proj(mean of token embeddings)). Order-free by construction.
    pub fn encode(&self, seq: &Sequence) -> Result<Vec<f64>> {
        Ok(self.encode_cached(seq)?.z)
    }

    fn encode_cached(&self, seq: &Sequence) -> Result<Encoded> {
        if seq.is_empty() {
            return Err(Error::InvalidArgument("cannot encode an empty sequence".into()));
        }
        let mut pooled = vec![0.0; self.d_c];
        let mut ids = Vec::with_capacity(seq.len());
        for &id in seq.ids() {
            if id as usize >= self.v {
                return Err(Error::InvalidArgument(format!(
                    "token id {id} out of range for vocabulary of {}",
                    self.v
                )));
            }
            ids.push(id as usize);
            for (p, e) in pooled.iter_mut().zip(self.embedding.row(id as usize)) {
                *p += e;
            }
        }
        let inv = 1.0 / ids.len() as f64;
        for p in pooled.iter_mut() {
            *p *= inv;
        }
        let mut pre = self.proj_b.data().to_vec();
        for (k, &pk) in pooled.iter().enumerate() {
            for (o, &w) in pre.iter_mut().zip(self.proj.row(k)) {
                *o += pk * w;
            }
        }
        let z = pre.iter().map(|&x| x.tanh()).collect();
        Ok(Encoded { ids, pooled, z })
    }

    fn class_logits(&self, z: &[f64]) -> [f64; 2] {
        let mut logits = [0.0; 2];
        for (c, logit) in logits.iter_mut().enumerate() {
            let mut sq = 0.0;
            for (zk, pk) in z.iter().zip(self.prototypes.row(c)) {
                let d = zk - pk;
                sq += d * d;
            }
            *logit = -sq / self.temperature;
        }
        logits
    }

    /// Probability that `seq` is genuine target-domain text, in [0, 1].
    /// This is the RL reward.
    pub fn score(&self, seq: &Sequence) -> Result<f64> {
        let enc = self.encode_cached(seq)?;
        let logits = self.class_logits(&enc.z);
        let mut probs = [0.0; 2];
        softmax_slice(&logits, &mut probs);
        Ok(probs[0])
    }

    /// Accuracy of prototype classification on one episode, with prototypes
    /// recomputed from the episode's own support sets (the stored prototypes
    /// are not consulted). Ties resolve to class 0.
    pub fn episode_accuracy(&self, ep: &Episode) -> Result<f64> {
        let protos = self.support_prototypes(ep)?;
        let mut correct = 0usize;
        let mut total = 0usize;
        for (class, queries) in ep.query.iter().enumerate() {
            for q in queries {
                let z = self.encode(q)?;
                let logits = logits_against(&z, &protos, self.temperature);
                let predicted = usize::from(logits[1] > logits[0]);
                correct += usize::from(predicted == class);
                total += 1;
            }
        }
        if total == 0 {
            return Err(Error::InvalidArgument("episode has no queries".into()));
        }
        Ok(correct as f64 / total as f64)
    }

    fn support_prototypes(&self, ep: &Episode) -> Result<[Vec<f64>; 2]> {
        let mut protos = [vec![0.0; self.d_c], vec![0.0; self.d_c]];
        for (c, support) in ep.support.iter().enumerate() {
            if support.is_empty() {
                return Err(Error::InvalidArgument(format!("class {c} has an empty support set")));
            }
            for s in support {
                let z = self.encode(s)?;
                for (p, zk) in protos[c].iter_mut().zip(&z) {
                    *p += zk;
                }
            }
            let inv = 1.0 / support.len() as f64;
            for p in protos[c].iter_mut() {
                *p *= inv;
            }
        }
        Ok(protos)
    }

    /// Binds the stored prototypes to these pools: class-mean initialization,
    /// then `epochs` rounds of full-batch gradient descent on the query
    /// cross-entropy, updating encoder and prototypes together. Each round
    /// treats the whole pool as one 2-way episode whose support role is
    /// played by the stored prototypes. Fully deterministic.
    pub fn fit_prototypes(
        &mut self,
        positives: &[Sequence],
        negatives: &[Sequence],
        epochs: usize,
        lr: f64,
    ) -> Result<()> {
        if positives.is_empty() || negatives.is_empty() {
            return Err(Error::InvalidArgument("fit_prototypes needs both classes non-empty".into()));
        }
        for (c, pool) in [positives, negatives].into_iter().enumerate() {
            let mut mean = vec![0.0; self.d_c];
            for s in pool {
                let z = self.encode(s)?;
                for (m, zk) in mean.iter_mut().zip(&z) {
                    *m += zk;
                }
            }
            let inv = 1.0 / pool.len() as f64;
            for (j, m) in mean.iter().enumerate() {
                self.prototypes.set2(c, j, m * inv);
            }
        }
        for _ in 0..epochs {
            let (_, grads) = self.fit_loss_grads(positives, negatives)?;
            self.apply(&grads, -lr)?;
        }
        Ok(())
    }

    /// Mean query cross-entropy against the stored prototypes plus its
    /// gradient. Shared by `fit_prototypes` and the gradient checks.
    #[allow(clippy::needless_range_loop)] // parallel-array index math
    pub(crate) fn fit_loss_grads(
        &self,
        positives: &[Sequence],
        negatives: &[Sequence],
    ) -> Result<(f64, DiscGrads)> {
        let mut grads = DiscGrads::zeros(self.v, self.d_c);
        let n = (positives.len() + negatives.len()) as f64;
        let inv_n = 1.0 / n;
        let mut loss = 0.0;
        for (class, pool) in [positives, negatives].into_iter().enumerate() {
            for s in pool {
                let enc = self.encode_cached(s)?;
                let logits = self.class_logits(&enc.z);
                let mut probs = [0.0; 2];
                softmax_slice(&logits, &mut probs);
                loss += -(probs[class] + CE_FLOOR).ln() * inv_n;
                let mut dz = vec![0.0; self.d_c];
                for c in 0..2 {
                    let dlogit = (probs[c] - f64::from(c == class)) * inv_n;
                    let scale = 2.0 * dlogit / self.temperature;
                    let proto = self.prototypes.row(c);
                    let grow = grads.prototypes.row_mut(c);
                    for j in 0..self.d_c {
                        let diff = enc.z[j] - proto[j];
                        dz[j] -= scale * diff;
                        grow[j] += scale * diff;
                    }
                }
                self.backprop_encoding(&enc, &dz, &mut grads);
            }
        }
        Ok((loss, grads))
    }

    /// Episodic pretraining on the source domains: each episode picks one
    /// domain as the positive class and samples the negative class from the
    /// union of the others, builds prototypes from the support encodings,
    /// and descends the query cross-entropy through encoder and prototype
    /// paths alike. Stored prototypes are untouched.
    pub fn pretrain_fewshot(
        &mut self,
        domains: &[&[Sequence]],
        episodes: usize,
        k_shot: usize,
        q_size: usize,
        lr: f64,
        rng: &mut Rng,
    ) -> Result<()> {
        if domains.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "episodic pretraining needs at least 2 domains, got {}",
                domains.len()
            )));
        }
        if k_shot == 0 || q_size == 0 {
            return Err(Error::InvalidArgument("k_shot and q_size must be positive".into()));
        }
        let need = k_shot + q_size;
        for (i, d) in domains.iter().enumerate() {
            if d.len() < need {
                return Err(Error::InvalidArgument(format!(
                    "domain {i} has {} sequences, episodes need {need}",
                    d.len()
                )));
            }
        }
        for _ in 0..episodes {
            let ep = sample_episode(domains, k_shot, q_size, rng);
            let (_, grads) = self.episode_loss_grads(&ep)?;
            self.apply(&grads, -lr)?;
        }
        Ok(())
    }

    /// Mean query cross-entropy of one episode, prototypes built from the
    /// episode support sets, with gradients through both the query and the
    /// prototype (support) encodings.
    pub(crate) fn episode_loss_grads(&self, ep: &Episode) -> Result<(f64, DiscGrads)> {
        let mut grads = DiscGrads::zeros(self.v, self.d_c);
        let sup_encs: [Vec<Encoded>; 2] = [
            ep.support[0].iter().map(|s| self.encode_cached(s)).collect::<Result<_>>()?,
            ep.support[1].iter().map(|s| self.encode_cached(s)).collect::<Result<_>>()?,
        ];
        let mut protos = [vec![0.0; self.d_c], vec![0.0; self.d_c]];
        for c in 0..2 {
            if sup_encs[c].is_empty() {
                return Err(Error::InvalidArgument(format!("class {c} has an empty support set")));
            }
            let inv = 1.0 / sup_encs[c].len() as f64;
            for e in &sup_encs[c] {
                for (p, zk) in protos[c].iter_mut().zip(&e.z) {
                    *p += zk * inv;
                }
            }
        }
        let n_q = (ep.query[0].len() + ep.query[1].len()) as f64;
        if n_q == 0.0 {
            return Err(Error::InvalidArgument("episode has no queries".into()));
        }
        let inv_n = 1.0 / n_q;
        let mut dprotos = [vec![0.0; self.d_c], vec![0.0; self.d_c]];
        let mut loss = 0.0;
        for (class, queries) in ep.query.iter().enumerate() {
            for qseq in queries {
                let enc = self.encode_cached(qseq)?;
                let logits = logits_against(&enc.z, &protos, self.temperature);
                let mut probs = [0.0; 2];
                softmax_slice(&logits, &mut probs);
                loss += -(probs[class] + CE_FLOOR).ln() * inv_n;
                let mut dz = vec![0.0; self.d_c];
                for c in 0..2 {
                    let dlogit = (probs[c] - f64::from(c == class)) * inv_n;
                    let scale = 2.0 * dlogit / self.temperature;
                    for j in 0..self.d_c {
                        let diff = enc.z[j] - protos[c][j];
                        dz[j] -= scale * diff;
                        dprotos[c][j] += scale * diff;
                    }
                }
                self.backprop_encoding(&enc, &dz, &mut grads);
            }
        }
        for c in 0..2 {
            let inv_k = 1.0 / sup_encs[c].len() as f64;
            let dz_s: Vec<f64> = dprotos[c].iter().map(|d| d * inv_k).collect();
            for e in &sup_encs[c] {
                self.backprop_encoding(e, &dz_s, &mut grads);
            }
        }
        Ok((loss, grads))
    }

    #[allow(clippy::needless_range_loop)] // parallel-array index math
    fn backprop_encoding(&self, enc: &Encoded, dz: &[f64], grads: &mut DiscGrads) {
        let d_c = self.d_c;
        let mut dpre = vec![0.0; d_c];
        for j in 0..d_c {
            dpre[j] = dz[j] * (1.0 - enc.z[j] * enc.z[j]);
        }
        for (b, d) in grads.proj_b.data_mut().iter_mut().zip(&dpre) {
            *b += d;
        }
        let mut dpooled = vec![0.0; d_c];
        for k in 0..d_c {
            let grow = grads.proj.row_mut(k);
            let prow = self.proj.row(k);
            let mut acc = 0.0;
            for j in 0..d_c {
                grow[j] += enc.pooled[k] * dpre[j];
                acc += prow[j] * dpre[j];
            }
            dpooled[k] = acc;
        }
        let inv_len = 1.0 / enc.ids.len() as f64;
        for &id in &enc.ids {
            for (g, d) in grads.embedding.row_mut(id).iter_mut().zip(&dpooled) {
                *g += d * inv_len;
            }
        }
    }

    fn apply(&mut self, grads: &DiscGrads, scale: f64) -> Result<()> {
        let finite = [&grads.embedding, &grads.proj, &grads.proj_b, &grads.prototypes]
            .iter()
            .all(|t| t.all_finite());
        if !finite {
            return Err(Error::NonFinite("discriminator gradient contains NaN or infinity".into()));
        }
        let pairs = [
            (&mut self.embedding, &grads.embedding),
            (&mut self.proj, &grads.proj),
            (&mut self.proj_b, &grads.proj_b),
            (&mut self.prototypes, &grads.prototypes),
        ];
        for (p, g) in pairs {
            for (a, b) in p.data_mut().iter_mut().zip(g.data()) {
                *a += scale * b;
            }
        }
        debug_assert!(self.all_finite(), "discriminator left finite range after an update");
        Ok(())
    }

    /// Flat view of the trainable arrays (temperature excluded: it is fixed).
    pub fn to_flat(&self) -> Tensor {
        let mut data = Vec::new();
        for t in [&self.embedding, &self.proj, &self.proj_b, &self.prototypes] {
            data.extend_from_slice(t.data());
        }
        Tensor::vector(data)
    }

    pub fn from_flat(
        v: usize,
        d_c: usize,
        temperature: f64,
        flat: &Tensor,
    ) -> Result<DiscriminatorModel> {
        let mut model = DiscriminatorModel::init(0, v, d_c, temperature)?;
        let total = v * d_c + d_c * d_c + d_c + 2 * d_c;
        if flat.len() != total {
            return Err(Error::Shape(format!(
                "flat vector has {} values, model needs {total}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in [&mut model.embedding, &mut model.proj, &mut model.proj_b, &mut model.prototypes]
        {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat.data()[offset..offset + n]);
            offset += n;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let temp = [self.temperature];
        let arrays: [&[f64]; N_ARRAYS] = [
            self.embedding.data(),
            self.proj.data(),
            self.proj_b.data(),
            self.prototypes.data(),
            &temp,
        ];
        ckpt::save(path, CKPT_MAGIC, CKPT_VERSION, &[self.v as u32, self.d_c as u32], &arrays)
    }

    pub fn load(path: &Path) -> Result<DiscriminatorModel> {
        let loaded = ckpt::load(path, CKPT_MAGIC, CKPT_VERSION, N_ARRAYS)?;
        if loaded.dims.len() != 2 {
            return Err(Error::format(path, format!("expected 2 dims, got {}", loaded.dims.len())));
        }
        let (v, d_c) = (loaded.dims[0] as usize, loaded.dims[1] as usize);
        if loaded.arrays[4].len() != 1 {
            return Err(Error::format(path, "temperature array must hold one value".to_string()));
        }
        let temperature = loaded.arrays[4][0];
        let mut model = DiscriminatorModel::init(0, v, d_c, temperature)
            .map_err(|e| Error::format(path, e.to_string()))?;
        for (t, values) in [
            &mut model.embedding,
            &mut model.proj,
            &mut model.proj_b,
            &mut model.prototypes,
        ]
        .into_iter()
        .zip(&loaded.arrays)
        {
            if t.len() != values.len() {
                return Err(Error::format(
                    path,
                    format!("array of {} values where {} expected", values.len(), t.len()),
                ));
            }
            t.data_mut().copy_from_slice(values);
        }
        if !model.all_finite() {
            return Err(Error::format(path, "checkpoint contains non-finite values".to_string()));
        }
        Ok(model)
    }
}

fn logits_against(z: &[f64], protos: &[Vec<f64>; 2], temperature: f64) -> [f64; 2] {
    let mut logits = [0.0; 2];
    for c in 0..2 {
        let mut sq = 0.0;
        for (zk, pk) in z.iter().zip(&protos[c]) {
            let d = zk - pk;
            sq += d * d;
        }
        logits[c] = -sq / temperature;
    }
    logits
}

/// First `count` entries of a partial Fisher-Yates shuffle of 0..n.
fn draw_indices(n: usize, count: usize, rng: &mut Rng) -> Vec<usize> {
    debug_assert!(count <= n);
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = i + rng.below(n - i);
        idx.swap(i, j);
    }
    idx.truncate(count);
    idx
}

fn sample_episode(
    domains: &[&[Sequence]],
    k_shot: usize,
    q_size: usize,
    rng: &mut Rng,
) -> Episode {
    let positive = rng.below(domains.len());
    let pos_idx = draw_indices(domains[positive].len(), k_shot + q_size, rng);
    let others: Vec<usize> = (0..domains.len()).filter(|&d| d != positive).collect();
    let neg_total: usize = others.iter().map(|&d| domains[d].len()).sum();
    let neg_global = draw_indices(neg_total, k_shot + q_size, rng);
    let lookup = |mut g: usize| -> &Sequence {
        for &d in &others {
            if g < domains[d].len() {
                return &domains[d][g];
            }
            g -= domains[d].len();
        }
        unreachable!("global index within summed length")
    };
    let pos: Vec<Sequence> = pos_idx.iter().map(|&i| domains[positive][i].clone()).collect();
    let neg: Vec<Sequence> = neg_global.iter().map(|&g| lookup(g).clone()).collect();
    Episode {
        support: [pos[..k_shot].to_vec(), neg[..k_shot].to_vec()],
        query: [pos[k_shot..].to_vec(), neg[k_shot..].to_vec()],
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_default_world;
    use crate::numerics::FD_STEP;

    fn seq(ids: &[u32]) -> Sequence {
        Sequence::from_ids(ids.to_vec())
    }

    fn tiny() -> DiscriminatorModel {
        DiscriminatorModel::init(7, 9, 3, DEFAULT_TEMPERATURE).unwrap()
    }

    #[test]
    fn encode_is_pure_and_order_free() {
        let m = tiny();
        let a = m.encode(&seq(&[3, 5, 4])).unwrap();
        assert_eq!(a, m.encode(&seq(&[3, 5, 4])).unwrap());
        assert_eq!(a, m.encode(&seq(&[4, 3, 5])).unwrap(), "mean pooling ignores order");
        assert!(m.encode(&seq(&[])).is_err(), "empty sequence accepted");
        assert!(m.encode(&seq(&[9])).is_err(), "out-of-range id accepted");
    }

    #[test]
    fn encode_matches_a_direct_formula_evaluation() {
        let mut m = DiscriminatorModel::init(0, 4, 2, 1.0).unwrap();
        m.embedding.row_mut(3).copy_from_slice(&[0.3, -0.4]);
        m.proj.data_mut().copy_from_slice(&[0.5, -0.6, 0.7, 0.8]);
        m.proj_b.data_mut().copy_from_slice(&[0.01, -0.02]);
        let z = m.encode(&seq(&[3])).unwrap();
        let pre0: f64 = 0.01 + 0.3 * 0.5 + (-0.4) * 0.7;
        let pre1: f64 = -0.02 + 0.3 * (-0.6) + (-0.4) * 0.8;
        assert!((z[0] - pre0.tanh()).abs() < 1e-15);
        assert!((z[1] - pre1.tanh()).abs() < 1e-15);
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn score_is_half_when_equidistant_and_complements_swap() {
        let mut m = tiny();
        let z = m.encode(&seq(&[3, 4])).unwrap();
        for j in 0..3 {
            m.prototypes.set2(0, j, z[j] + 0.3);
            m.prototypes.set2(1, j, z[j] - 0.3);
        }
        let s = m.score(&seq(&[3, 4])).unwrap();
        assert!((s - 0.5).abs() < 1e-15, "equidistant score {s}");

        for j in 0..3 {
            m.prototypes.set2(0, j, z[j] + 0.1);
            m.prototypes.set2(1, j, z[j] - 0.9);
        }
        let s = m.score(&seq(&[3, 4])).unwrap();
        let mut swapped = m.clone();
        for j in 0..3 {
            let a = m.prototypes.get2(0, j);
            let b = m.prototypes.get2(1, j);
            swapped.prototypes.set2(0, j, b);
            swapped.prototypes.set2(1, j, a);
        }
        let t = swapped.score(&seq(&[3, 4])).unwrap();
        assert!((s + t - 1.0).abs() < 1e-12, "class probabilities must sum to 1");
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn score_saturates_when_prototype_matches_encoding() {
        let mut m = tiny();
        let z = m.encode(&seq(&[5, 6, 3])).unwrap();
        for j in 0..3 {
            m.prototypes.set2(0, j, z[j]);
            m.prototypes.set2(1, j, 10.0);
        }
        let s = m.score(&seq(&[5, 6, 3])).unwrap();
        assert!(s > 0.9, "score {s} for an exact prototype match");
    }

    #[test]
    fn score_stays_in_unit_interval_for_wild_weights() {
        let mut rng = Rng::new(3);
        for trial in 0..100 {
            let mut m = DiscriminatorModel::init(trial, 12, 4, 0.25).unwrap();
            for t in [&mut m.embedding, &mut m.proj, &mut m.proj_b, &mut m.prototypes] {
                for x in t.data_mut() {
                    *x = rng.uniform(-1e3, 1e3);
                }
            }
            for _ in 0..100 {
                let len = 1 + rng.below(12);
                let s = Sequence::from_ids((0..len).map(|_| rng.below(12) as u32).collect());
                let score = m.score(&s).unwrap();
                assert!((0.0..=1.0).contains(&score), "score {score}");
            }
        }
    }

    #[test]
    fn fit_gradients_pass_finite_difference_check() {
        let mut m = tiny();
        let positives = vec![seq(&[3, 4]), seq(&[3, 5]), seq(&[4, 5])];
        let negatives = vec![seq(&[6, 7]), seq(&[7, 8]), seq(&[6, 8])];
        // Give the prototypes a definite nonzero starting point.
        for j in 0..3 {
            m.prototypes.set2(0, j, 0.1 * (j as f64 + 1.0));
            m.prototypes.set2(1, j, -0.07 * (j as f64 + 1.0));
        }
        let (_, grads) = m.fit_loss_grads(&positives, &negatives).unwrap();
        let err = crate::numerics::grad_check(
            |flat| {
                let probe = DiscriminatorModel::from_flat(9, 3, DEFAULT_TEMPERATURE, flat).unwrap();
                probe.fit_loss_grads(&positives, &negatives).unwrap().0
            },
            &m.to_flat(),
            &grads.to_flat(),
        )
        .unwrap();
        assert!(err < 1e-5, "max relative error {err}");
    }

    #[test]
    fn episode_gradients_pass_finite_difference_check() {
        let m = tiny();
        let ep = Episode {
            support: [vec![seq(&[3, 4]), seq(&[3])], vec![seq(&[6, 7]), seq(&[8])]],
            query: [vec![seq(&[4, 5]), seq(&[3, 3])], vec![seq(&[7, 8]), seq(&[6])]],
        };
        let (_, grads) = m.episode_loss_grads(&ep).unwrap();
        let err = crate::numerics::grad_check(
            |flat| {
                let probe = DiscriminatorModel::from_flat(9, 3, DEFAULT_TEMPERATURE, flat).unwrap();
                probe.episode_loss_grads(&ep).unwrap().0
            },
            &m.to_flat(),
            &grads.to_flat(),
        )
        .unwrap();
        assert!(err < 1e-5, "max relative error {err} (prototype path included)");
        // Prototype parameters are untouched by episodic training.
        assert!(grads.prototypes.data().iter().all(|&x| x == 0.0));
        let _ = FD_STEP;
    }

    #[test]
    fn fit_separates_separable_pools_perfectly() {
        let mut m = DiscriminatorModel::init(11, 9, 4, DEFAULT_TEMPERATURE).unwrap();
        let positives = vec![seq(&[3, 4]), seq(&[4, 3]), seq(&[3, 3]), seq(&[4, 4])];
        let negatives = vec![seq(&[6, 7]), seq(&[7, 6]), seq(&[6, 6]), seq(&[7, 7])];
        m.fit_prototypes(&positives, &negatives, DEFAULT_FIT_EPOCHS, 0.1).unwrap();
        for s in &positives {
            assert!(m.score(s).unwrap() > 0.5, "positive misclassified");
        }
        for s in &negatives {
            assert!(m.score(s).unwrap() < 0.5, "negative misclassified");
        }
    }

    #[test]
    fn fit_on_identical_pools_stays_at_chance() {
        let mut accs = Vec::new();
        for s in 0..10u64 {
            let mut rng = Rng::with_stream(40, s);
            let pool: Vec<Sequence> = (0..6)
                .map(|_| {
                    Sequence::from_ids((0..3).map(|_| 3 + rng.below(6) as u32).collect())
                })
                .collect();
            let mut m = DiscriminatorModel::init(s, 9, 4, DEFAULT_TEMPERATURE).unwrap();
            m.fit_prototypes(&pool, &pool, DEFAULT_FIT_EPOCHS, 0.1).unwrap();
            let mut correct = 0usize;
            for q in &pool {
                // Class 0 on ties, so identical pools score exactly half.
                correct += usize::from(m.score(q).unwrap() >= 0.5);
            }
            for q in &pool {
                correct += usize::from(m.score(q).unwrap() < 0.5);
            }
            accs.push(correct as f64 / (2 * pool.len()) as f64);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((0.35..=0.65).contains(&mean), "mean accuracy {mean} not chance-level");
    }

    #[test]
    fn fit_is_deterministic() {
        let positives = vec![seq(&[3, 4]), seq(&[4, 5])];
        let negatives = vec![seq(&[6, 7]), seq(&[7, 8])];
        let mut a = tiny();
        let mut b = tiny();
        a.fit_prototypes(&positives, &negatives, 5, 0.05).unwrap();
        b.fit_prototypes(&positives, &negatives, 5, 0.05).unwrap();
        assert_eq!(a, b);
        assert!(a.fit_prototypes(&[], &negatives, 1, 0.05).is_err());
        assert!(a.fit_prototypes(&positives, &[], 1, 0.05).is_err());
    }

    #[test]
    fn pretraining_zero_episodes_is_identity_and_needs_two_domains() {
        let world = build_default_world(5, 2, 2).unwrap();
        let domains: Vec<&[Sequence]> =
            world.sources.values().map(|v| v.as_slice()).collect();
        let mut m = DiscriminatorModel::init(1, world.vocab.size(), 8, DEFAULT_TEMPERATURE)
            .unwrap();
        let before = m.clone();
        m.pretrain_fewshot(&domains, 0, 5, 5, 0.05, &mut Rng::new(0)).unwrap();
        assert_eq!(m, before);
        assert!(m
            .pretrain_fewshot(&domains[..1], 10, 5, 5, 0.05, &mut Rng::new(0))
            .is_err());
        assert!(m.pretrain_fewshot(&domains, 10, 0, 5, 0.05, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn pretraining_is_seed_deterministic() {
        let world = build_default_world(5, 3, 2).unwrap();
        let domains: Vec<&[Sequence]> =
            world.sources.values().map(|v| v.as_slice()).collect();
        let run = |seed: u64| {
            let mut m = DiscriminatorModel::init(2, world.vocab.size(), 8, DEFAULT_TEMPERATURE)
                .unwrap();
            m.pretrain_fewshot(&domains, 20, 3, 3, 0.05, &mut Rng::new(seed)).unwrap();
            m
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10), "different episode stream should move the model");
    }

    #[test]
    fn pretraining_reaches_high_episodic_accuracy_on_seen_domains() {
        let mut accs = Vec::new();
        for s in 0..2u64 {
            let world = build_default_world(s, 5, 5).unwrap();
            let domains: Vec<&[Sequence]> =
                world.sources.values().map(|v| v.as_slice()).collect();
            let mut m =
                DiscriminatorModel::init(s, world.vocab.size(), 16, DEFAULT_TEMPERATURE).unwrap();
            let mut rng = Rng::with_stream(50, s);
            m.pretrain_fewshot(&domains, DEFAULT_PRETRAIN_EPISODES, 5, 5, DEFAULT_DISC_LR, &mut rng)
                .unwrap();
            let mut eval_rng = Rng::with_stream(51, s);
            let mut total = 0.0;
            let trials = 20;
            for _ in 0..trials {
                let ep = sample_episode(&domains, 5, 5, &mut eval_rng);
                total += m.episode_accuracy(&ep).unwrap();
            }
            accs.push(total / trials as f64);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!(mean > 0.8, "seed-averaged episodic accuracy {mean}");
    }

    #[test]
    fn checkpoint_round_trips_and_rejects_tampering() {
        let mut m = tiny();
        m.prototypes.set2(0, 1, 0.7);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.ckpt");
        m.save(&path).unwrap();
        let back = DiscriminatorModel::load(&path).unwrap();
        assert_eq!(m, back);
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 1]).unwrap();
        assert!(DiscriminatorModel::load(&path).is_err(), "truncated checkpoint accepted");
    }

    #[test]
    fn init_validates_dimensions_and_temperature() {
        assert!(DiscriminatorModel::init(0, 0, 3, 1.0).is_err());
        assert!(DiscriminatorModel::init(0, 9, 0, 1.0).is_err());
        assert!(DiscriminatorModel::init(0, 9, 3, 0.0).is_err());
        assert!(DiscriminatorModel::init(0, 9, 3, -1.0).is_err());
        assert!(DiscriminatorModel::init(0, 9, 3, f64::NAN).is_err());
    }
}
