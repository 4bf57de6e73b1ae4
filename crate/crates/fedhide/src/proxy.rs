//! Proxy class prototype generation.
//!
//! A client never shares its true prototype. It publishes a proxy built by
//! one of four generators:
//!
//! * FedHide: blend the prototype with the normalized sum of its top-K
//!   nearest neighbor proxies, then renormalize.
//! * FedGN: add elementwise Gaussian noise, then renormalize.
//! * FedCS: draw uniformly from the cone of fixed cosine to the prototype.
//! * FedAwS: share the prototype itself (the maximal-leakage baseline).

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vecmath::{self, normalize, sample_on_cone, UnitVector, EPS_NORM};

/// Fallback noise level for FedHide when the neighbor pool is empty. The
/// server initializes the proxy table before the first round, so this path
/// is unreachable under normal configuration; it exists to keep generation
/// total.
pub const DEFAULT_COLD_START_SIGMA: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ProxyMethod {
    FedHide { alpha: f64, k: usize },
    FedGn { sigma: f64 },
    FedCs { cos_theta: f64 },
    FedAws,
}

impl ProxyMethod {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ProxyMethod::FedHide { alpha, k } => {
                if !(0.0..=1.0).contains(&alpha) {
                    return Err(Error::InvalidParameter(format!(
                        "fedhide alpha must be in [0, 1], got {alpha}"
                    )));
                }
                if k < 1 {
                    return Err(Error::InvalidParameter("fedhide k must be >= 1".into()));
                }
            }
            ProxyMethod::FedGn { sigma } => {
                if sigma.is_nan() || sigma < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "fedgn sigma must be >= 0, got {sigma}"
                    )));
                }
            }
            ProxyMethod::FedCs { cos_theta } => {
                if !(cos_theta > -1.0 && cos_theta <= 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "fedcs cos_theta must be in (-1, 1], got {cos_theta}"
                    )));
                }
            }
            ProxyMethod::FedAws => {}
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            ProxyMethod::FedHide { .. } => "fedhide",
            ProxyMethod::FedGn { .. } => "fedgn",
            ProxyMethod::FedCs { .. } => "fedcs",
            ProxyMethod::FedAws => "fedaws",
        }
    }

    /// Stable human-readable label, e.g. `fedhide(alpha=0.1,k=3)`.
    pub fn label(&self) -> String {
        match self {
            ProxyMethod::FedHide { alpha, k } => format!("fedhide(alpha={alpha},k={k})"),
            ProxyMethod::FedGn { sigma } => format!("fedgn(sigma={sigma})"),
            ProxyMethod::FedCs { cos_theta } => format!("fedcs(cos_theta={cos_theta})"),
            ProxyMethod::FedAws => "fedaws".to_string(),
        }
    }

    /// Parameter values for deterministic ordering of report rows.
    pub fn sort_key(&self) -> (&'static str, Vec<f64>) {
        match *self {
            ProxyMethod::FedHide { alpha, k } => ("fedhide", vec![alpha, k as f64]),
            ProxyMethod::FedGn { sigma } => ("fedgn", vec![sigma]),
            ProxyMethod::FedCs { cos_theta } => ("fedcs", vec![cos_theta]),
            ProxyMethod::FedAws => ("fedaws", vec![]),
        }
    }
}

/// Generate a proxy with the default cold-start fallback.
///
/// `neighbor_pool` holds the other clients' current proxy prototypes; a
/// client never sees true prototypes other than its own.
pub fn generate<R: Rng + ?Sized>(
    method: &ProxyMethod,
    w: &UnitVector,
    neighbor_pool: &[(usize, UnitVector)],
    rng: &mut R,
) -> Result<UnitVector> {
    generate_with_cold_start(method, w, neighbor_pool, DEFAULT_COLD_START_SIGMA, rng)
}

pub fn generate_with_cold_start<R: Rng + ?Sized>(
    method: &ProxyMethod,
    w: &UnitVector,
    neighbor_pool: &[(usize, UnitVector)],
    cold_start_sigma: f64,
    rng: &mut R,
) -> Result<UnitVector> {
    method.validate()?;
    match *method {
        ProxyMethod::FedHide { alpha, k } => {
            if neighbor_pool.is_empty() {
                // Cold start: nothing to hide in yet, perturb instead.
                return gen_fedgn(w, cold_start_sigma, rng);
            }
            // Pool entries ordered by client id so similarity ties break
            // toward the lowest id.
            let mut pool: Vec<&(usize, UnitVector)> = neighbor_pool.iter().collect();
            pool.sort_by_key(|(id, _)| *id);
            let proxies: Vec<UnitVector> = pool.into_iter().map(|(_, p)| p.clone()).collect();
            gen_fedhide(w, &proxies, alpha, k)
        }
        ProxyMethod::FedGn { sigma } => gen_fedgn(w, sigma, rng),
        ProxyMethod::FedCs { cos_theta } => gen_fedcs(w, cos_theta, rng),
        ProxyMethod::FedAws => Ok(w.clone()),
    }
}

/// Blend `w` with the normalized sum of its top-K nearest neighbor proxies:
/// `normalize(alpha * w + (1 - alpha) * delegate)`.
pub fn gen_fedhide(
    w: &UnitVector,
    proxies: &[UnitVector],
    alpha: f64,
    k: usize,
) -> Result<UnitVector> {
    if proxies.is_empty() {
        return Err(Error::EmptyNeighborPool);
    }
    if alpha == 1.0 {
        return Ok(w.clone());
    }
    // Rank by cosine similarity to w; stable sort keeps the lowest index
    // first among ties. k is clamped to the pool size for early rounds.
    let mut ranked: Vec<(usize, f64)> = proxies
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p.dot(w)))
        .collect();
    ranked.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal));
    let take = k.min(proxies.len());

    let d = w.dim();
    let mut sum = vec![0.0; d];
    for &(i, _) in ranked.iter().take(take) {
        for (s, p) in sum.iter_mut().zip(proxies[i].as_slice()) {
            *s += p;
        }
    }
    let delegate = normalize(&sum)?;
    let combined: Vec<f64> = w
        .as_slice()
        .iter()
        .zip(delegate.as_slice())
        .map(|(wi, di)| alpha * wi + (1.0 - alpha) * di)
        .collect();
    normalize(&combined)
}

/// `normalize(w + n)` with `n ~ N(0, sigma^2 I)`.
pub fn gen_fedgn<R: Rng + ?Sized>(w: &UnitVector, sigma: f64, rng: &mut R) -> Result<UnitVector> {
    if sigma.is_nan() || sigma < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "sigma must be >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(w.clone());
    }
    loop {
        let v: Vec<f64> = w
            .as_slice()
            .iter()
            .map(|wi| wi + sigma * rng.sample::<f64, _>(StandardNormal))
            .collect();
        if vecmath::norm(&v) > EPS_NORM {
            return normalize(&v);
        }
        // Cancellation has probability 0; redraw.
    }
}

/// Uniform draw from the cone of fixed cosine similarity to `w`.
pub fn gen_fedcs<R: Rng + ?Sized>(
    w: &UnitVector,
    cos_theta: f64,
    rng: &mut R,
) -> Result<UnitVector> {
    sample_on_cone(w, cos_theta, rng)
}
