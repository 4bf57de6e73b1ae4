//! Geometry on the unit hypersphere.
//!
//! Embeddings, class prototypes and proxy prototypes all live on the unit
//! sphere, so everything downstream reduces to normalization, dot products,
//! and two sampling primitives: uniform on the sphere and uniform on the
//! cone of fixed cosine similarity to a given direction.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Norms at or below this are treated as degenerate: the direction of such a
/// vector is numerically meaningless.
pub const EPS_NORM: f64 = 1e-12;

const CONE_MAX_RETRIES: usize = 32;

/// An L2-normalized real vector with at least two components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.clone()
    }

    /// Plain dot product. Callers must hold the same-dimension precondition;
    /// use [`cosine_similarity`] for the checked, clamped variant.
    pub fn dot(&self, other: &UnitVector) -> f64 {
        dot(&self.0, &other.0)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

/// Project a vector onto the unit sphere.
pub fn normalize(v: &[f64]) -> Result<UnitVector> {
    if v.len() < 2 {
        return Err(Error::InvalidDimension(v.len()));
    }
    let n = norm(v);
    if n.is_nan() || n <= EPS_NORM {
        return Err(Error::DegenerateVector { norm: n });
    }
    Ok(UnitVector(v.iter().map(|x| x / n).collect()))
}

/// Dot product of two unit vectors, clamped to [-1, 1] against rounding.
pub fn cosine_similarity(u: &UnitVector, v: &UnitVector) -> Result<f64> {
    if u.dim() != v.dim() {
        return Err(Error::DimensionMismatch {
            left: u.dim(),
            right: v.dim(),
        });
    }
    Ok(u.dot(v).clamp(-1.0, 1.0))
}

/// Uniform sample on the (d-1)-sphere: standard Gaussian, then normalize.
pub fn sample_unit_sphere<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<UnitVector> {
    if d < 2 {
        return Err(Error::InvalidDimension(d));
    }
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        // Underflow has probability ~0; redraw rather than fail.
        match normalize(&v) {
            Ok(u) => return Ok(u),
            Err(Error::DegenerateVector { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
}

/// Uniform sample from the set of unit vectors with a fixed cosine to `w`.
///
/// Construction: draw a uniform sphere sample, strip its component along
/// `w`, renormalize the tangential remainder `t`, and return
/// `cos_theta * w + sqrt(1 - cos_theta^2) * t`.
pub fn sample_on_cone<R: Rng + ?Sized>(
    w: &UnitVector,
    cos_theta: f64,
    rng: &mut R,
) -> Result<UnitVector> {
    if !(cos_theta > -1.0 && cos_theta <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "cos_theta must be in (-1, 1], got {cos_theta}"
        )));
    }
    if cos_theta == 1.0 {
        return Ok(w.clone());
    }
    let d = w.dim();
    let sin_theta = (1.0 - cos_theta * cos_theta).sqrt();
    for _ in 0..CONE_MAX_RETRIES {
        let u = sample_unit_sphere(d, rng)?;
        let along = u.dot(w);
        let tangent: Vec<f64> = u
            .as_slice()
            .iter()
            .zip(w.as_slice())
            .map(|(ui, wi)| ui - along * wi)
            .collect();
        let t_norm = norm(&tangent);
        if t_norm <= EPS_NORM {
            // Draw was (anti)parallel to w; try again.
            continue;
        }
        let v: Vec<f64> = w
            .as_slice()
            .iter()
            .zip(&tangent)
            .map(|(wi, ti)| cos_theta * wi + sin_theta * ti / t_norm)
            .collect();
        return normalize(&v);
    }
    Err(Error::DegenerateVector { norm: 0.0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Purpose};

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        stream_rng(seed, 0, Purpose::Eval)
    }

    #[test]
    fn normalize_three_four() {
        let u = normalize(&[3.0, 4.0]).unwrap();
        assert!((u.as_slice()[0] - 0.6).abs() < 1e-12);
        assert!((u.as_slice()[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn normalize_preserves_direction() {
        let mut r = rng(0);
        for _ in 0..100 {
            let v: Vec<f64> = (0..8).map(|_| r.sample::<f64, _>(StandardNormal) * 10.0).collect();
            if norm(&v) <= EPS_NORM {
                continue;
            }
            let u = normalize(&v).unwrap();
            let cos = dot(u.as_slice(), &v) / norm(&v);
            assert!((cos - 1.0).abs() < 1e-9);
            assert!((norm(u.as_slice()) - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn normalize_rejects_zero_vector() {
        assert!(matches!(
            normalize(&[0.0, 0.0]),
            Err(Error::DegenerateVector { .. })
        ));
    }

    #[test]
    fn normalize_rejects_one_dim() {
        assert!(matches!(normalize(&[1.0]), Err(Error::InvalidDimension(1))));
    }

    #[test]
    fn normalize_is_idempotent() {
        let mut r = rng(1);
        for _ in 0..100 {
            let v: Vec<f64> = (0..16).map(|_| r.sample::<f64, _>(StandardNormal)).collect();
            let once = normalize(&v).unwrap();
            let twice = normalize(once.as_slice()).unwrap();
            for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn cosine_identity_and_antipode() {
        let u = normalize(&[1.0, 2.0, -3.0]).unwrap();
        let neg = normalize(&u.as_slice().iter().map(|x| -x).collect::<Vec<_>>()).unwrap();
        assert_eq!(cosine_similarity(&u, &u).unwrap(), 1.0);
        assert!((cosine_similarity(&u, &neg).unwrap() + 1.0).abs() < 1e-12);
    }

    #[test]
    fn cosine_hand_value() {
        let u = normalize(&[1.0, 0.0]).unwrap();
        let v = normalize(&[0.6, 0.8]).unwrap();
        assert!((cosine_similarity(&u, &v).unwrap() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn cosine_symmetric_and_bounded() {
        let mut r = rng(10);
        for _ in 0..200 {
            let u = sample_unit_sphere(8, &mut r).unwrap();
            let v = sample_unit_sphere(8, &mut r).unwrap();
            let uv = cosine_similarity(&u, &v).unwrap();
            let vu = cosine_similarity(&v, &u).unwrap();
            assert_eq!(uv, vu);
            assert!((-1.0..=1.0).contains(&uv));
        }
    }

    #[test]
    fn cosine_dimension_mismatch() {
        let u = normalize(&[1.0, 0.0]).unwrap();
        let v = normalize(&[1.0, 0.0, 0.0]).unwrap();
        assert!(matches!(
            cosine_similarity(&u, &v),
            Err(Error::DimensionMismatch { left: 2, right: 3 })
        ));
    }

    #[test]
    fn sphere_sample_is_unit() {
        let mut r = rng(2);
        let u = sample_unit_sphere(512, &mut r).unwrap();
        assert!((norm(u.as_slice()) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sphere_sample_isotropy_d3() {
        // Monte Carlo: per-coordinate mean of uniform sphere samples is 0.
        let mut r = rng(3);
        let mut sums = [0.0f64; 3];
        let n = 10_000;
        for _ in 0..n {
            let u = sample_unit_sphere(3, &mut r).unwrap();
            for (s, x) in sums.iter_mut().zip(u.as_slice()) {
                *s += x;
            }
        }
        for s in sums {
            assert!(
                (s / n as f64).abs() < 0.05,
                "coordinate mean {} outside +/-0.05",
                s / n as f64
            );
        }
    }

    #[test]
    fn sphere_sample_near_orthogonal_high_d() {
        // Monte Carlo: random pairs in d=512 have mean cosine ~0.
        let mut r = rng(4);
        let n = 10_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let a = sample_unit_sphere(512, &mut r).unwrap();
            let b = sample_unit_sphere(512, &mut r).unwrap();
            acc += cosine_similarity(&a, &b).unwrap();
        }
        assert!((acc / n as f64).abs() < 0.01);
    }

    #[test]
    fn cone_cos_one_returns_w_exactly() {
        let mut r = rng(5);
        let w = sample_unit_sphere(16, &mut r).unwrap();
        let got = sample_on_cone(&w, 1.0, &mut r).unwrap();
        assert_eq!(got, w);
    }

    #[test]
    fn cone_hits_requested_cosine() {
        let mut r = rng(6);
        let w = sample_unit_sphere(512, &mut r).unwrap();
        let u = sample_on_cone(&w, 0.3, &mut r).unwrap();
        assert!((norm(u.as_slice()) - 1.0).abs() < 1e-9);
        assert!((u.dot(&w) - 0.3).abs() < 1e-9);
    }

    #[test]
    fn cone_orthogonal_in_2d() {
        let mut r = rng(7);
        let w = normalize(&[1.0, 0.0]).unwrap();
        for _ in 0..20 {
            let u = sample_on_cone(&w, 0.0, &mut r).unwrap();
            assert!(u.as_slice()[0].abs() < 1e-9);
            assert!((u.as_slice()[1].abs() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn cone_rejects_out_of_range() {
        let mut r = rng(8);
        let w = normalize(&[1.0, 0.0]).unwrap();
        assert!(sample_on_cone(&w, -1.0, &mut r).is_err());
        assert!(sample_on_cone(&w, 1.5, &mut r).is_err());
    }

    #[test]
    fn cone_constraints_hold_over_random_draws() {
        let mut r = rng(9);
        for i in 0..10_000 {
            let d = 2 + (i % 31);
            let w = sample_unit_sphere(d, &mut r).unwrap();
            let cos_theta = -0.999 + 1.999 * r.random::<f64>();
            let u = sample_on_cone(&w, cos_theta, &mut r).unwrap();
            assert!((norm(u.as_slice()) - 1.0).abs() < 1e-9);
            assert!((u.dot(&w) - cos_theta).abs() < 1e-9);
        }
    }
}
