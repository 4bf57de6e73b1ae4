//! The contrastive training objective.
//!
//! A client pulls its instance embeddings toward its own class prototype and
//! pushes the prototype away from the proxy prototypes shared by the other
//! clients:
//!
//! * positive term, per sample: `(1 - w . f(x))^2`, averaged over the batch
//! * negative term: `(1/(C-1)) * sum_{c'} (1 + w . proxy_{c'})^2`
//! * total: `positive + lambda * negative`
//!
//! Proxies are constants during local optimization; gradients are produced
//! only for the network parameters and the raw (pre-projection) prototype.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{self, ModelParams};
use crate::vecmath::UnitVector;

/// One loss evaluation split into its parts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub positive: f64,
    pub negative: f64,
    pub total: f64,
    pub lambda: f64,
}

impl LossBreakdown {
    pub fn new(positive: f64, negative: f64, lambda: f64) -> Self {
        LossBreakdown {
            positive,
            negative,
            total: positive + lambda * negative,
            lambda,
        }
    }

    /// Component-wise mean of several breakdowns (same lambda).
    pub fn mean(items: &[LossBreakdown]) -> Option<LossBreakdown> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        let positive = items.iter().map(|b| b.positive).sum::<f64>() / n;
        let negative = items.iter().map(|b| b.negative).sum::<f64>() / n;
        Some(LossBreakdown::new(positive, negative, items[0].lambda))
    }
}

/// `(1 - w . f)^2`, in [0, 4] for unit vectors.
pub fn positive_loss(embedding: &UnitVector, w: &UnitVector) -> Result<f64> {
    if embedding.dim() != w.dim() {
        return Err(Error::DimensionMismatch {
            left: embedding.dim(),
            right: w.dim(),
        });
    }
    let d = 1.0 - w.dot(embedding);
    Ok(d * d)
}

/// `(1/(C-1)) * sum (1 + w . proxy)^2` where C-1 is the number of proxies.
pub fn negative_loss(w: &UnitVector, proxies: &[UnitVector]) -> Result<f64> {
    if proxies.is_empty() {
        return Err(Error::EmptyProxySet);
    }
    let mut acc = 0.0;
    for p in proxies {
        if p.dim() != w.dim() {
            return Err(Error::DimensionMismatch {
                left: w.dim(),
                right: p.dim(),
            });
        }
        let s = 1.0 + w.dot(p);
        acc += s * s;
    }
    Ok(acc / proxies.len() as f64)
}

/// Loss over a minibatch plus analytic gradients w.r.t. the network
/// parameters and the raw prototype.
///
/// The positive term is the batch mean; the negative term has no data
/// dependence and enters once per step. Renormalizing the prototype after
/// the gradient step is the caller's job.
pub fn loss_and_gradients<S: AsRef<[f64]>>(
    params: &ModelParams,
    w: &UnitVector,
    batch: &[S],
    proxies: &[UnitVector],
    lambda: f64,
) -> Result<(LossBreakdown, ModelParams, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("batch must be nonempty".into()));
    }
    let d = w.dim();
    let inv_batch = 1.0 / batch.len() as f64;

    let mut positive = 0.0;
    let mut grad_theta = ModelParams::zeros(params.arch())?;
    let mut grad_w = vec![0.0; d];

    for sample in batch {
        let (embedding, trace) = model::forward(params, sample.as_ref())?;
        positive += positive_loss(&embedding, w)?;
        let miss = 1.0 - w.dot(&embedding);
        // d(positive)/d(embedding) = -2 (1 - w.f) w, per sample.
        let grad_e: Vec<f64> = w.as_slice().iter().map(|wi| -2.0 * miss * wi).collect();
        let sample_grad = model::backward(params, &trace, &grad_e)?;
        grad_theta.axpy(inv_batch, &sample_grad)?;
        for (gw, fi) in grad_w.iter_mut().zip(embedding.as_slice()) {
            *gw += inv_batch * -2.0 * miss * fi;
        }
    }
    positive *= inv_batch;

    let negative = negative_loss(w, proxies)?;
    let push = lambda / proxies.len() as f64;
    for p in proxies {
        let s = 1.0 + w.dot(p);
        for (gw, pi) in grad_w.iter_mut().zip(p.as_slice()) {
            *gw += push * 2.0 * s * pi;
        }
    }

    Ok((LossBreakdown::new(positive, negative, lambda), grad_theta, grad_w))
}
