//! Explicit backpropagation through time for the LSTM policy.
//!
//! One core computes the gradient of sum_t w_t * CE_t for arbitrary
//! per-decision weights w_t. MLE gradients use w_t = 1/T (so every sequence
//! contributes equally regardless of length), policy gradients use
//! w_t = -q_t/T (the sign turns the returned value into an ascent direction
//! and the 1/T mirrors the MLE normalization, which is what makes the
//! REINFORCE/MLE identity at q = 1 exact rather than approximate).

use crate::corpus::{Sequence, EOS, START};
use crate::error::{Error, Result};
use crate::numerics::{softmax_slice, Tensor};
use crate::par::par_map;

use super::{CellActs, GeneratorParams};

struct StepCache {
    inp: usize,
    target: usize,
    acts: CellActs,
    probs: Vec<f64>,
}

impl GeneratorParams {
    /// Mean over the batch of per-sequence MLE gradients, each normalized by
    /// its own decision count (content tokens plus the terminal EOS). Pair
    /// with `Direction::Descend`.
    pub fn nll_grad(&self, batch: &[Sequence]) -> Result<GeneratorParams> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty gradient batch".into()));
        }
        let per_seq: Vec<Result<GeneratorParams>> =
            par_map((0..batch.len()).collect(), |b: usize| {
                let seq = &batch[b];
                let t = seq.len() + 1;
                let weights = vec![1.0 / t as f64; t];
                let mut g = self.zeros_like();
                self.accumulate_weighted_grad(seq.ids(), true, &weights, &mut g)?;
                Ok(g)
            });
        let mut total = self.zeros_like();
        for g in per_seq {
            total.add_scaled(&g?, 1.0);
        }
        total.scale_in_place(1.0 / batch.len() as f64);
        Ok(total)
    }

    /// REINFORCE gradient for one realized sequence: (1/T) sum_t
    /// grad log p(y_t | prefix) * q_t, where T counts the decisions actually
    /// taken. `includes_eos` says whether the final decision was an EOS (it
    /// is false for sequences cut off at the length cap, which never chose
    /// EOS). Pair with `Direction::Ascend`.
    pub fn pg_grad(
        &self,
        seq: &Sequence,
        q: &[f64],
        includes_eos: bool,
    ) -> Result<GeneratorParams> {
        let t_total = seq.len() + usize::from(includes_eos);
        if t_total == 0 {
            return Err(Error::InvalidArgument(
                "empty sequence without an EOS decision has no gradient".into(),
            ));
        }
        if q.len() != t_total {
            return Err(Error::InvalidArgument(format!(
                "{} action values for {} decisions",
                q.len(),
                t_total
            )));
        }
        if q.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("non-finite action value".into()));
        }
        let t = t_total as f64;
        let weights: Vec<f64> = q.iter().map(|&qt| -qt / t).collect();
        let mut g = self.zeros_like();
        self.accumulate_weighted_grad(seq.ids(), includes_eos, &weights, &mut g)?;
        Ok(g)
    }

    /// Adds the gradient of sum_t weights[t] * CE(step t) into `out`.
    /// Decisions are `ids` followed by EOS when `includes_eos`; inputs are
    /// START followed by the consumed prefix.
    fn accumulate_weighted_grad(
        &self,
        ids: &[u32],
        includes_eos: bool,
        weights: &[f64],
        out: &mut GeneratorParams,
    ) -> Result<()> {
        let t_total = ids.len() + usize::from(includes_eos);
        debug_assert_eq!(weights.len(), t_total);
        let v = self.v();
        let d_h = self.d_h();
        let d_e = self.d_e();
        for &id in ids {
            if id as usize >= v {
                return Err(Error::InvalidArgument(format!(
                    "token id {id} out of range for vocabulary of {v}"
                )));
            }
        }

        // Forward, caching every activation.
        let zeros = vec![0.0; d_h];
        let mut caches: Vec<StepCache> = Vec::with_capacity(t_total);
        for t in 0..t_total {
            let inp = if t == 0 { START as usize } else { ids[t - 1] as usize };
            let target =
                if t < ids.len() { ids[t] as usize } else { EOS as usize };
            let (h_prev, c_prev) = match caches.last() {
                Some(prev) => (&prev.acts.h, &prev.acts.c),
                None => (&zeros, &zeros),
            };
            let acts = self.cell_forward(self.embedding.row(inp), h_prev, c_prev);
            let logits = self.logits(&acts.h);
            let mut probs = vec![0.0; v];
            softmax_slice(&logits, &mut probs);
            caches.push(StepCache { inp, target, acts, probs });
        }

        // Backward in time.
        let mut dh = vec![0.0; d_h];
        let mut dh_next = vec![0.0; d_h];
        let mut dc_next = vec![0.0; d_h];
        let mut dpre_i = vec![0.0; d_h];
        let mut dpre_f = vec![0.0; d_h];
        let mut dpre_o = vec![0.0; d_h];
        let mut dpre_g = vec![0.0; d_h];
        let mut de = vec![0.0; d_e];
        for t in (0..t_total).rev() {
            let cache = &caches[t];
            let a = &cache.acts;
            let mut dlogits = cache.probs.clone();
            dlogits[cache.target] -= 1.0;
            for x in dlogits.iter_mut() {
                *x *= weights[t];
            }

            for k in 0..d_h {
                let hk = a.h[k];
                let prow = self.proj.row(k);
                let orow = out.proj.row_mut(k);
                let mut acc = 0.0;
                for j in 0..v {
                    orow[j] += hk * dlogits[j];
                    acc += dlogits[j] * prow[j];
                }
                dh[k] = dh_next[k] + acc;
            }
            add_assign(out.proj_b.data_mut(), &dlogits);

            let (h_prev, c_prev) = if t == 0 {
                (&zeros, &zeros)
            } else {
                (&caches[t - 1].acts.h, &caches[t - 1].acts.c)
            };
            for k in 0..d_h {
                let do_k = dh[k] * a.tc[k];
                dpre_o[k] = do_k * a.o[k] * (1.0 - a.o[k]);
                let dc_k = dh[k] * a.o[k] * (1.0 - a.tc[k] * a.tc[k]) + dc_next[k];
                dpre_i[k] = dc_k * a.g[k] * a.i[k] * (1.0 - a.i[k]);
                dpre_f[k] = dc_k * c_prev[k] * a.f[k] * (1.0 - a.f[k]);
                dpre_g[k] = dc_k * a.i[k] * (1.0 - a.g[k] * a.g[k]);
                dc_next[k] = dc_k * a.f[k];
            }

            let e = self.embedding.row(cache.inp);
            outer_add(e, &dpre_i, &mut out.w_xi);
            outer_add(e, &dpre_f, &mut out.w_xf);
            outer_add(e, &dpre_o, &mut out.w_xo);
            outer_add(e, &dpre_g, &mut out.w_xc);
            outer_add(h_prev, &dpre_i, &mut out.w_hi);
            outer_add(h_prev, &dpre_f, &mut out.w_hf);
            outer_add(h_prev, &dpre_o, &mut out.w_ho);
            outer_add(h_prev, &dpre_g, &mut out.w_hc);
            add_assign(out.b_i.data_mut(), &dpre_i);
            add_assign(out.b_f.data_mut(), &dpre_f);
            add_assign(out.b_o.data_mut(), &dpre_o);
            add_assign(out.b_c.data_mut(), &dpre_g);

            de.fill(0.0);
            rows_dot_add(&self.w_xi, &dpre_i, &mut de);
            rows_dot_add(&self.w_xf, &dpre_f, &mut de);
            rows_dot_add(&self.w_xo, &dpre_o, &mut de);
            rows_dot_add(&self.w_xc, &dpre_g, &mut de);
            add_assign(out.embedding.row_mut(cache.inp), &de);

            dh_next.fill(0.0);
            rows_dot_add(&self.w_hi, &dpre_i, &mut dh_next);
            rows_dot_add(&self.w_hf, &dpre_f, &mut dh_next);
            rows_dot_add(&self.w_ho, &dpre_o, &mut dh_next);
            rows_dot_add(&self.w_hc, &dpre_g, &mut dh_next);
        }
        Ok(())
    }
}

fn add_assign(dst: &mut [f64], src: &[f64]) {
    for (a, b) in dst.iter_mut().zip(src) {
        *a += b;
    }
}

/// out[k][j] += a[k] * b[j].
fn outer_add(a: &[f64], b: &[f64], out: &mut Tensor) {
    for (k, &ak) in a.iter().enumerate() {
        if ak == 0.0 {
            continue;
        }
        for (o, &bj) in out.row_mut(k).iter_mut().zip(b) {
            *o += ak * bj;
        }
    }
}

/// out[k] += dot(w.row(k), d).
fn rows_dot_add(w: &Tensor, d: &[f64], out: &mut [f64]) {
    for (k, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (&wkj, &dj) in w.row(k).iter().zip(d) {
            acc += wkj * dj;
        }
        *o += acc;
    }
}
