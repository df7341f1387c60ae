//! The policy G: a single-layer LSTM language model over token ids.
//!
//! The model embeds the previous token, advances the recurrent cell, and
//! projects the hidden state to a softmax over the whole vocabulary. EOS is
//! an ordinary action that ends generation; every other id, reserved or not,
//! is a content action whose avoidance must be learned rather than masked.
//! Gradients (MLE and policy-gradient) share one explicit
//! backpropagation-through-time core in the `grad` submodule.

mod grad;

use std::path::Path;

use crate::corpus::{Sequence, EOS, START};
use crate::error::{Error, Result};
use crate::numerics::{softmax_slice, Rng, Tensor};
use crate::{ckpt, corpus};

const INIT_RANGE: f64 = 0.08;
const CKPT_MAGIC: &[u8; 8] = b"DARLGEN\0";
const CKPT_VERSION: u32 = 1;
const N_ARRAYS: usize = 15;
/// Consecutive empty-content samples tolerated before the argmax fallback.
const EMPTY_RESAMPLES: usize = 10;

pub const DEFAULT_MAX_NORM: f64 = 5.0;

/// Whether `apply_update` adds or subtracts the (clipped) gradient.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    Ascend,
    Descend,
}

/// All trainable weights. The same type carries gradients, which have the
/// identical shape set. Array order (embedding, then input/forget/output/cell
/// gates as input-to-hidden, hidden-to-hidden, bias, then projection and its
/// bias) is the checkpoint field order.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    v: usize,
    d_e: usize,
    d_h: usize,
    pub embedding: Tensor,
    pub w_xi: Tensor,
    pub w_hi: Tensor,
    pub b_i: Tensor,
    pub w_xf: Tensor,
    pub w_hf: Tensor,
    pub b_f: Tensor,
    pub w_xo: Tensor,
    pub w_ho: Tensor,
    pub b_o: Tensor,
    pub w_xc: Tensor,
    pub w_hc: Tensor,
    pub b_c: Tensor,
    pub proj: Tensor,
    pub proj_b: Tensor,
}

/// Recurrent state after consuming some prefix. `last_token` is the id that
/// produced this state (START before anything was consumed).
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorState {
    pub hidden: Vec<f64>,
    pub cell: Vec<f64>,
    pub last_token: u32,
}

/// One draw from the policy. `eos_terminated` is false when generation hit
/// the length cap, in which case no EOS decision was ever made.
#[derive(Clone, Debug, PartialEq)]
pub struct Sampled {
    pub seq: Sequence,
    pub eos_terminated: bool,
}

impl Sampled {
    /// Number of decisions the policy actually took for this sample.
    pub fn decisions(&self) -> usize {
        self.seq.len() + usize::from(self.eos_terminated)
    }
}

impl GeneratorParams {
    /// Weights ~ Uniform(-0.08, 0.08), except the forget-gate bias which is
    /// 1.0 (the bias is never drawn, so it does not shift the stream).
    pub fn init(seed: u64, v: usize, d_e: usize, d_h: usize) -> Result<GeneratorParams> {
        if v < 3 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary size {v} leaves no non-reserved fallback action"
            )));
        }
        if d_e == 0 || d_h == 0 {
            return Err(Error::InvalidArgument(format!("zero model dimension ({d_e}, {d_h})")));
        }
        let mut rng = Rng::new(seed);
        let mut draw = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| rng.uniform(-INIT_RANGE, INIT_RANGE)).collect())
                .expect("shape/data lengths agree by construction")
        };
        let embedding = draw(&[v, d_e]);
        let w_xi = draw(&[d_e, d_h]);
        let w_hi = draw(&[d_h, d_h]);
        let b_i = draw(&[d_h]);
        let w_xf = draw(&[d_e, d_h]);
        let w_hf = draw(&[d_h, d_h]);
        let mut b_f = Tensor::zeros(&[d_h]);
        b_f.fill(1.0);
        let w_xo = draw(&[d_e, d_h]);
        let w_ho = draw(&[d_h, d_h]);
        let b_o = draw(&[d_h]);
        let w_xc = draw(&[d_e, d_h]);
        let w_hc = draw(&[d_h, d_h]);
        let b_c = draw(&[d_h]);
        let proj = draw(&[d_h, v]);
        let proj_b = draw(&[v]);
        Ok(GeneratorParams {
            v,
            d_e,
            d_h,
            embedding,
            w_xi,
            w_hi,
            b_i,
            w_xf,
            w_hf,
            b_f,
            w_xo,
            w_ho,
            b_o,
            w_xc,
            w_hc,
            b_c,
            proj,
            proj_b,
        })
    }

    pub fn v(&self) -> usize {
        self.v
    }

    pub fn d_e(&self) -> usize {
        self.d_e
    }

    pub fn d_h(&self) -> usize {
        self.d_h
    }

    /// Same shapes, all zeros. Gradient accumulators start here.
    pub fn zeros_like(&self) -> GeneratorParams {
        let z = |t: &Tensor| Tensor::zeros(t.shape());
        GeneratorParams {
            v: self.v,
            d_e: self.d_e,
            d_h: self.d_h,
            embedding: z(&self.embedding),
            w_xi: z(&self.w_xi),
            w_hi: z(&self.w_hi),
            b_i: z(&self.b_i),
            w_xf: z(&self.w_xf),
            w_hf: z(&self.w_hf),
            b_f: z(&self.b_f),
            w_xo: z(&self.w_xo),
            w_ho: z(&self.w_ho),
            b_o: z(&self.b_o),
            w_xc: z(&self.w_xc),
            w_hc: z(&self.w_hc),
            b_c: z(&self.b_c),
            proj: z(&self.proj),
            proj_b: z(&self.proj_b),
        }
    }

    fn arrays(&self) -> [&Tensor; N_ARRAYS] {
        [
            &self.embedding,
            &self.w_xi,
            &self.w_hi,
            &self.b_i,
            &self.w_xf,
            &self.w_hf,
            &self.b_f,
            &self.w_xo,
            &self.w_ho,
            &self.b_o,
            &self.w_xc,
            &self.w_hc,
            &self.b_c,
            &self.proj,
            &self.proj_b,
        ]
    }

    fn arrays_mut(&mut self) -> [&mut Tensor; N_ARRAYS] {
        [
            &mut self.embedding,
            &mut self.w_xi,
            &mut self.w_hi,
            &mut self.b_i,
            &mut self.w_xf,
            &mut self.w_hf,
            &mut self.b_f,
            &mut self.w_xo,
            &mut self.w_ho,
            &mut self.b_o,
            &mut self.w_xc,
            &mut self.w_hc,
            &mut self.b_c,
            &mut self.proj,
            &mut self.proj_b,
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.arrays().iter().all(|t| t.all_finite())
    }

    /// Concatenation of every array in checkpoint order. Together with
    /// `from_flat` this lets finite-difference checks treat the whole model
    /// as one parameter vector.
    pub fn to_flat(&self) -> Tensor {
        let mut data = Vec::new();
        for t in self.arrays() {
            data.extend_from_slice(t.data());
        }
        Tensor::vector(data)
    }

    pub fn from_flat(v: usize, d_e: usize, d_h: usize, flat: &Tensor) -> Result<GeneratorParams> {
        let mut out = GeneratorParams::init(0, v, d_e, d_h)?;
        let total: usize = out.arrays().iter().map(|t| t.len()).sum();
        if flat.len() != total {
            return Err(Error::Shape(format!(
                "flat vector has {} values, model needs {total}",
                flat.len()
            )));
        }
        let mut offset = 0;
        for t in out.arrays_mut() {
            let n = t.len();
            t.data_mut().copy_from_slice(&flat.data()[offset..offset + n]);
            offset += n;
        }
        Ok(out)
    }

    /// In-place self += scale * other, shape-checked by zip length.
    pub(crate) fn add_scaled(&mut self, other: &GeneratorParams, scale: f64) {
        let mut theirs: Vec<&Tensor> = Vec::with_capacity(N_ARRAYS);
        theirs.extend(other.arrays());
        for (mine, other) in self.arrays_mut().into_iter().zip(theirs) {
            debug_assert_eq!(mine.shape(), other.shape());
            for (a, b) in mine.data_mut().iter_mut().zip(other.data()) {
                *a += scale * b;
            }
        }
    }

    pub(crate) fn scale_in_place(&mut self, scale: f64) {
        for t in self.arrays_mut() {
            for a in t.data_mut() {
                *a *= scale;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.arrays().iter().map(|t| t.sq_norm()).sum::<f64>().sqrt()
    }

    pub fn start_state(&self) -> GeneratorState {
        GeneratorState {
            hidden: vec![0.0; self.d_h],
            cell: vec![0.0; self.d_h],
            last_token: START,
        }
    }

    /// One recurrence step: consume `token`, return the distribution over
    /// the next action and the successor state. Pure in its inputs.
    pub fn step(&self, state: &GeneratorState, token: u32) -> Result<(Tensor, GeneratorState)> {
        if token as usize >= self.v {
            return Err(Error::InvalidArgument(format!(
                "token id {token} out of range for vocabulary of {}",
                self.v
            )));
        }
        let e = self.embedding.row(token as usize);
        let acts = self.cell_forward(e, &state.hidden, &state.cell);
        let logits = self.logits(&acts.h);
        let mut probs = Tensor::zeros(&[self.v]);
        softmax_slice(&logits, probs.data_mut());
        let next = GeneratorState { hidden: acts.h, cell: acts.c, last_token: token };
        Ok((probs, next))
    }

    /// All gate activations for one step; the gradient core caches these.
    #[allow(clippy::needless_range_loop)] // parallel-array index math
    pub(crate) fn cell_forward(&self, e: &[f64], h_prev: &[f64], c_prev: &[f64]) -> CellActs {
        let d_h = self.d_h;
        let mut pre_i = self.b_i.data().to_vec();
        let mut pre_f = self.b_f.data().to_vec();
        let mut pre_o = self.b_o.data().to_vec();
        let mut pre_c = self.b_c.data().to_vec();
        vec_mat_add(e, &self.w_xi, &mut pre_i);
        vec_mat_add(h_prev, &self.w_hi, &mut pre_i);
        vec_mat_add(e, &self.w_xf, &mut pre_f);
        vec_mat_add(h_prev, &self.w_hf, &mut pre_f);
        vec_mat_add(e, &self.w_xo, &mut pre_o);
        vec_mat_add(h_prev, &self.w_ho, &mut pre_o);
        vec_mat_add(e, &self.w_xc, &mut pre_c);
        vec_mat_add(h_prev, &self.w_hc, &mut pre_c);
        let mut acts = CellActs {
            i: pre_i,
            f: pre_f,
            o: pre_o,
            g: pre_c,
            c: vec![0.0; d_h],
            tc: vec![0.0; d_h],
            h: vec![0.0; d_h],
        };
        for k in 0..d_h {
            acts.i[k] = sigmoid(acts.i[k]);
            acts.f[k] = sigmoid(acts.f[k]);
            acts.o[k] = sigmoid(acts.o[k]);
            acts.g[k] = acts.g[k].tanh();
            acts.c[k] = acts.f[k] * c_prev[k] + acts.i[k] * acts.g[k];
            acts.tc[k] = acts.c[k].tanh();
            acts.h[k] = acts.o[k] * acts.tc[k];
        }
        acts
    }

    pub(crate) fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut out = self.proj_b.data().to_vec();
        vec_mat_add(h, &self.proj, &mut out);
        out
    }

    /// One unmodified draw from the policy: sample token-by-token from the
    /// full softmax, stop at EOS or after `t_max` content tokens. The result
    /// can be empty (EOS as the first action).
    pub fn sample_raw(&self, t_max: usize, rng: &mut Rng) -> Result<Sampled> {
        if t_max == 0 {
            return Err(Error::InvalidArgument("t_max must be at least 1".into()));
        }
        let mut state = self.start_state();
        let mut token = START;
        let mut ids = Vec::new();
        let mut eos_terminated = false;
        for _ in 0..t_max {
            let (probs, next) = self.step(&state, token)?;
            let action = crate::numerics::sample_categorical(probs.data(), rng)? as u32;
            if action == EOS {
                eos_terminated = true;
                break;
            }
            ids.push(action);
            token = action;
            state = next;
        }
        Ok(Sampled { seq: Sequence::from_ids(ids), eos_terminated })
    }

    /// Draw for training and evaluation: empty-content draws are resampled a
    /// bounded number of times; if the policy still produces nothing, the
    /// fallback is the single most probable first action other than START
    /// and EOS (so downstream consumers always see at least one token).
    pub fn sample_sequence(&self, t_max: usize, rng: &mut Rng) -> Result<Sampled> {
        for _ in 0..=EMPTY_RESAMPLES {
            let s = self.sample_raw(t_max, rng)?;
            if !s.seq.is_empty() {
                return Ok(s);
            }
        }
        let (probs, _) = self.step(&self.start_state(), START)?;
        let fallback = probs
            .data()
            .iter()
            .enumerate()
            .skip(corpus::UNK as usize)
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(id, _)| id as u32)
            .expect("v >= 3 guarantees a non-reserved candidate");
        Ok(Sampled { seq: Sequence::from_ids(vec![fallback]), eos_terminated: false })
    }

    /// Negative log-likelihood: sum of cross-entropies over every decision,
    /// the terminal EOS prediction included.
    pub fn nll(&self, seq: &Sequence) -> Result<f64> {
        let mut state = self.start_state();
        let mut token = START;
        let mut total = 0.0;
        for &target in seq.ids().iter().chain(std::iter::once(&EOS)) {
            let (probs, next) = self.step(&state, token)?;
            total += crate::numerics::cross_entropy(&probs, target as usize)?;
            token = target;
            state = next;
        }
        Ok(total)
    }

    /// In-place parameter update with global-norm clipping applied to the
    /// gradient first. Rejects non-finite gradients without touching the
    /// parameters.
    pub fn apply_update(
        &mut self,
        grads: &GeneratorParams,
        alpha: f64,
        direction: Direction,
        max_norm: f64,
    ) -> Result<()> {
        if alpha < 0.0 || !alpha.is_finite() {
            return Err(Error::InvalidArgument(format!("step size {alpha} must be finite and >= 0")));
        }
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradient contains NaN or infinity".into()));
        }
        let norm = grads.global_norm();
        let clip = if norm > max_norm { max_norm / norm } else { 1.0 };
        let sign = match direction {
            Direction::Ascend => 1.0,
            Direction::Descend => -1.0,
        };
        self.add_scaled(grads, sign * alpha * clip);
        debug_assert!(self.all_finite(), "parameters left finite range after an update");
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let arrays = self.arrays();
        let slices: Vec<&[f64]> = arrays.iter().map(|t| t.data()).collect();
        ckpt::save(
            path,
            CKPT_MAGIC,
            CKPT_VERSION,
            &[self.v as u32, self.d_e as u32, self.d_h as u32],
            &slices,
        )
    }

    pub fn load(path: &Path) -> Result<GeneratorParams> {
        let loaded = ckpt::load(path, CKPT_MAGIC, CKPT_VERSION, N_ARRAYS)?;
        if loaded.dims.len() != 3 {
            return Err(Error::format(path, format!("expected 3 dims, got {}", loaded.dims.len())));
        }
        let (v, d_e, d_h) =
            (loaded.dims[0] as usize, loaded.dims[1] as usize, loaded.dims[2] as usize);
        let mut params = GeneratorParams::init(0, v, d_e, d_h)?;
        for (tensor, values) in params.arrays_mut().into_iter().zip(&loaded.arrays) {
            if tensor.len() != values.len() {
                return Err(Error::format(
                    path,
                    format!("array of {} values where {} expected", values.len(), tensor.len()),
                ));
            }
            tensor.data_mut().copy_from_slice(values);
        }
        if !params.all_finite() {
            return Err(Error::format(path, "checkpoint contains non-finite values".to_string()));
        }
        Ok(params)
    }
}

pub(crate) struct CellActs {
    pub i: Vec<f64>,
    pub f: Vec<f64>,
    pub o: Vec<f64>,
    pub g: Vec<f64>,
    pub c: Vec<f64>,
    pub tc: Vec<f64>,
    pub h: Vec<f64>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// out += v * W for a row vector v, row-major W. The k-outer loop walks each
/// W row contiguously, which keeps the inner loop an axpy.
fn vec_mat_add(v: &[f64], w: &Tensor, out: &mut [f64]) {
    debug_assert_eq!(w.shape(), [v.len(), out.len()]);
    for (k, &vk) in v.iter().enumerate() {
        if vk == 0.0 {
            continue;
        }
        for (o, &wkj) in out.iter_mut().zip(w.row(k)) {
            *o += vk * wkj;
        }
    }
}
