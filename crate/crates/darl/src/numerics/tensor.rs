//! Dense row-major f64 tensors plus the numeric primitives the models are
//! built from.
//!
//! Key choices:
//! - shapes are explicit and checked; mismatches are descriptive errors, not panics
//! - softmax subtracts the max before exponentiating, so extreme logits stay finite
//! - cross-entropy floors the log argument at 1e-12
//! - categorical sampling inverts the CDF on a single uniform draw and rejects
//!   inputs whose mass deviates from 1 by more than 1e-6

use crate::error::{Error, Result};
use crate::numerics::rng::Rng;

pub const CE_FLOOR: f64 = 1e-12;
pub const MASS_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Tensor {
        let len = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![0.0; len] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::Shape(format!(
                "buffer of {} values cannot fill shape {:?} ({} slots)",
                data.len(),
                shape,
                expected
            )));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn vector(data: Vec<f64>) -> Tensor {
        Tensor { shape: vec![data.len()], data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Row `r` of a rank-2 tensor.
    pub fn row(&self, r: usize) -> &[f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &self.data[r * cols..(r + 1) * cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        &mut self.data[r * cols..(r + 1) * cols]
    }

    pub fn get2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub fn set2(&mut self, r: usize, c: usize, v: f64) {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c] = v;
    }

    pub fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.data.iter()
    }

    /// Squared Euclidean norm of all entries.
    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Rank-2 matrix product. Loop order is row-major friendly (k inner over the
/// right operand's rows), which LLVM turns into vectorized axpy updates.
#[allow(clippy::needless_range_loop)] // k indexes both operands
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape().len() != 2 || b.shape().len() != 2 {
        return Err(Error::Shape(format!(
            "matmul needs rank-2 operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (n, ka) = (a.shape()[0], a.shape()[1]);
    let (kb, m) = (b.shape()[0], b.shape()[1]);
    if ka != kb {
        return Err(Error::Shape(format!(
            "matmul inner dimensions disagree: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(&[n, m]);
    for i in 0..n {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for k in 0..ka {
            let aik = arow[k];
            let brow = b.row(k);
            for j in 0..m {
                orow[j] += aik * brow[j];
            }
        }
    }
    Ok(out)
}

/// In-place stable softmax over a slice. Internal hot-path variant.
pub(crate) fn softmax_slice(logits: &[f64], out: &mut [f64]) {
    debug_assert_eq!(logits.len(), out.len());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        let e = (l - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Stable softmax. Rank-1 tensors are normalized as one distribution; rank-2
/// tensors row-wise.
pub fn softmax(x: &Tensor) -> Result<Tensor> {
    match x.shape().len() {
        1 => {
            let mut out = Tensor::zeros(x.shape());
            softmax_slice(x.data(), out.data_mut());
            Ok(out)
        }
        2 => {
            let mut out = Tensor::zeros(x.shape());
            let cols = x.shape()[1];
            for r in 0..x.shape()[0] {
                softmax_slice(x.row(r), &mut out.data_mut()[r * cols..(r + 1) * cols]);
            }
            Ok(out)
        }
        _ => Err(Error::Shape(format!("softmax supports rank 1 or 2, got {:?}", x.shape()))),
    }
}

/// -ln(p[target] + 1e-12). The floor keeps zero-probability targets finite.
pub fn cross_entropy(probs: &Tensor, target: usize) -> Result<f64> {
    if target >= probs.len() {
        return Err(Error::InvalidArgument(format!(
            "cross_entropy target {} out of range for {} classes",
            target,
            probs.len()
        )));
    }
    Ok(-(probs.data()[target] + CE_FLOOR).ln())
}

/// Gradient of cross_entropy(softmax(logits), target) with respect to the
/// logits: probs - onehot(target). This is the backward rule the generator
/// composes at every output position.
pub fn softmax_xent_grad(logits: &[f64], target: usize) -> Vec<f64> {
    let mut g = vec![0.0; logits.len()];
    softmax_slice(logits, &mut g);
    g[target] -= 1.0;
    g
}

pub(crate) fn validate_distribution(probs: &[f64]) -> Result<()> {
    if probs.is_empty() {
        return Err(Error::Distribution("empty probability vector".into()));
    }
    let mut sum = 0.0;
    for &p in probs {
        if !p.is_finite() || p < 0.0 {
            return Err(Error::Distribution(format!("invalid probability {p}")));
        }
        sum += p;
    }
    if (sum - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::Distribution(format!(
            "mass {sum} deviates from 1 by more than {MASS_TOLERANCE}"
        )));
    }
    Ok(())
}

/// Draws an index from a categorical distribution by inverse CDF on a single
/// uniform draw. Rejects vectors whose mass is off by more than 1e-6.
pub fn sample_categorical(probs: &[f64], rng: &mut Rng) -> Result<usize> {
    validate_distribution(probs)?;
    let u = rng.next_f64();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Ok(i);
        }
    }
    // Rounding can leave u at or above the accumulated mass; fall back to the
    // last index that carries any probability.
    let last = probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1);
    Ok(last)
}
