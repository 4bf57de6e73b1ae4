//! Convergence-bound calculators and empirical constant estimators.
//!
//! The per-round bound and the round-count formula take five regularity
//! constants: smoothness of the local objective and of the embedding map,
//! the stochastic-gradient noise level, a gradient-norm bound, and a bound
//! on the gap between true and proxy prototypes. [`estimate_constants`]
//! extracts observed lower bounds for all five from a recorded training
//! trace; finite traces cannot certify suprema, so treat the estimates as
//! plausibility checks, not certificates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Regularity constants of a local training problem, all non-negative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceConstants {
    /// Lipschitz constant of the local objective's gradient.
    pub loss_smoothness: f64,
    /// Lipschitz constant of the embedding as a function of the parameters.
    pub embedding_smoothness: f64,
    /// Std bound of the stochastic gradient around the full gradient.
    pub gradient_noise: f64,
    /// Bound on the stochastic gradient norm.
    pub gradient_bound: f64,
    /// Bound on the Euclidean gap between true and proxy prototype.
    pub prototype_gap_bound: f64,
}

impl ConvergenceConstants {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("loss_smoothness", self.loss_smoothness),
            ("embedding_smoothness", self.embedding_smoothness),
            ("gradient_noise", self.gradient_noise),
            ("gradient_bound", self.gradient_bound),
            ("prototype_gap_bound", self.prototype_gap_bound),
        ];
        for (name, v) in fields {
            if v.is_nan() || v < 0.0 {
                return Err(Error::InvalidInputs(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Inputs shared by both bound calculators.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub learning_rate: f64,
    pub lambda: f64,
    pub local_iters: usize,
    pub num_clients: usize,
    /// Target mean squared gradient norm.
    pub tolerance: f64,
    /// Gap between the initial loss and the local optimum.
    pub initial_gap: f64,
    pub constants: ConvergenceConstants,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::InvalidInputs("learning_rate must be > 0".into()));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::InvalidInputs("lambda must be >= 0".into()));
        }
        if self.local_iters < 1 {
            return Err(Error::InvalidInputs("local_iters must be >= 1".into()));
        }
        if self.num_clients < 2 {
            return Err(Error::InvalidInputs("num_clients must be >= 2".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::InvalidInputs("tolerance must be > 0".into()));
        }
        if self.initial_gap.is_nan() || self.initial_gap < 0.0 {
            return Err(Error::InvalidInputs("initial_gap must be >= 0".into()));
        }
        self.constants.validate()
    }
}

/// Upper bound on the expected loss change over one communication round,
/// given the squared gradient norms of the round's E local steps. Negative
/// values guarantee descent.
pub fn loss_decrease_bound(inputs: &BoundInputs, grad_norms: &[f64]) -> Result<f64> {
    inputs.validate()?;
    if grad_norms.len() != inputs.local_iters {
        return Err(Error::InvalidInputs(format!(
            "expected {} squared gradient norms, got {}",
            inputs.local_iters,
            grad_norms.len()
        )));
    }
    if grad_norms.iter().any(|&g| g.is_nan() || g < 0.0) {
        return Err(Error::InvalidInputs(
            "squared gradient norms must be >= 0".into(),
        ));
    }
    let eta = inputs.learning_rate;
    let e = inputs.local_iters as f64;
    let c = inputs.constants;
    let neg_weight = inputs.lambda / (inputs.num_clients as f64 - 1.0);
    let grad_sum: f64 = grad_norms.iter().sum();

    let descent = -(eta - c.loss_smoothness * eta * eta / 2.0) * grad_sum;
    let noise = c.loss_smoothness * e * eta * eta / 2.0 * c.gradient_noise * c.gradient_noise;
    let drift = (c.embedding_smoothness * c.embedding_smoothness + neg_weight)
        * eta
        * eta
        * e
        * c.gradient_bound
        * c.gradient_bound;
    let proxy_gap = 4.0 * neg_weight * c.prototype_gap_bound * c.prototype_gap_bound;
    Ok(descent + noise + drift + proxy_gap)
}

/// Communication rounds needed to push the mean squared gradient norm below
/// the tolerance. Errors when the formula's denominator is not positive,
/// which is the bound's own applicability condition on the step size.
pub fn required_rounds(inputs: &BoundInputs) -> Result<u64> {
    inputs.validate()?;
    let eta = inputs.learning_rate;
    let e = inputs.local_iters as f64;
    let c = inputs.constants;
    let neg_weight = inputs.lambda / (inputs.num_clients as f64 - 1.0);

    let denominator = e * inputs.tolerance * (2.0 * eta - c.loss_smoothness * eta * eta)
        - e * eta
            * eta
            * (c.loss_smoothness * c.gradient_noise * c.gradient_noise
                + 2.0
                    * (c.embedding_smoothness * c.embedding_smoothness + neg_weight)
                    * c.gradient_bound
                    * c.gradient_bound)
        - 8.0 * neg_weight * c.prototype_gap_bound * c.prototype_gap_bound;
    if denominator.is_nan() || denominator <= 0.0 {
        return Err(Error::NonPositiveDenominator(denominator));
    }
    Ok((2.0 * inputs.initial_gap / denominator).ceil() as u64)
}

/// One recorded step of a local training pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    /// Flattened (parameters, prototype) state.
    pub phi: Vec<f64>,
    /// Gradient over the whole local train set at `phi`.
    pub full_gradient: Vec<f64>,
    /// Minibatch gradients from independent redraws at fixed `phi`.
    pub stochastic_gradients: Vec<Vec<f64>>,
    /// Embedding of a fixed probe input under the current parameters.
    pub probe_embedding: Vec<f64>,
    /// Euclidean gap between the prototype and the proxy it would publish.
    pub prototype_gap: f64,
}

/// A sequence of recorded steps, as produced by
/// [`crate::federation::traced_client_update`] and serialized alongside
/// checkpoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingTrace {
    pub steps: Vec<TraceStep>,
}

fn l2_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn l2_norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Observed lower bounds for the five regularity constants.
///
/// Smoothness ratios skip consecutive pairs whose state did not move; the
/// noise estimate is the worst per-step RMS deviation of minibatch gradients
/// from the full gradient.
pub fn estimate_constants(trace: &TrainingTrace) -> Result<ConvergenceConstants> {
    if trace.steps.len() < 2 {
        return Err(Error::InsufficientTrace);
    }
    let mut loss_smoothness = 0.0f64;
    let mut embedding_smoothness = 0.0f64;
    for pair in trace.steps.windows(2) {
        let dphi = l2_distance(&pair[0].phi, &pair[1].phi);
        if dphi <= 0.0 {
            continue;
        }
        let dgrad = l2_distance(&pair[0].full_gradient, &pair[1].full_gradient);
        loss_smoothness = loss_smoothness.max(dgrad / dphi);
        let dembed = l2_distance(&pair[0].probe_embedding, &pair[1].probe_embedding);
        embedding_smoothness = embedding_smoothness.max(dembed / dphi);
    }

    let mut gradient_noise_sq = 0.0f64;
    let mut gradient_bound = 0.0f64;
    let mut prototype_gap_bound = 0.0f64;
    for step in &trace.steps {
        if !step.stochastic_gradients.is_empty() {
            let mean_sq = step
                .stochastic_gradients
                .iter()
                .map(|g| {
                    let d = l2_distance(g, &step.full_gradient);
                    d * d
                })
                .sum::<f64>()
                / step.stochastic_gradients.len() as f64;
            gradient_noise_sq = gradient_noise_sq.max(mean_sq);
            for g in &step.stochastic_gradients {
                gradient_bound = gradient_bound.max(l2_norm(g));
            }
        }
        gradient_bound = gradient_bound.max(l2_norm(&step.full_gradient));
        prototype_gap_bound = prototype_gap_bound.max(step.prototype_gap);
    }

    Ok(ConvergenceConstants {
        loss_smoothness,
        embedding_smoothness,
        gradient_noise: gradient_noise_sq.sqrt(),
        gradient_bound,
        prototype_gap_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn worked_constants() -> ConvergenceConstants {
        ConvergenceConstants {
            loss_smoothness: 1.0,
            embedding_smoothness: 1.0,
            gradient_noise: 1.0,
            gradient_bound: 1.0,
            prototype_gap_bound: 0.0,
        }
    }

    fn worked_inputs() -> BoundInputs {
        BoundInputs {
            learning_rate: 0.01,
            lambda: 1.0,
            local_iters: 1,
            num_clients: 101,
            tolerance: 1.0,
            initial_gap: 1.0,
            constants: worked_constants(),
        }
    }

    #[test]
    fn decrease_bound_pure_descent_with_zero_constants() {
        let mut inputs = worked_inputs();
        inputs.constants = ConvergenceConstants {
            loss_smoothness: 0.0,
            embedding_smoothness: 0.0,
            gradient_noise: 0.0,
            gradient_bound: 0.0,
            prototype_gap_bound: 0.0,
        };
        let got = loss_decrease_bound(&inputs, &[2.5]).unwrap();
        assert!((got - -0.01 * 2.5).abs() < 1e-15);
    }

    #[test]
    fn decrease_bound_noise_floor_is_nonnegative() {
        let mut inputs = worked_inputs();
        inputs.lambda = 0.0;
        let got = loss_decrease_bound(&inputs, &[0.0]).unwrap();
        let expected = 1.0 * 1.0 * 0.0001 / 2.0 + 1.0 * 0.0001 * 1.0;
        assert!((got - expected).abs() < 1e-15);
        assert!(got >= 0.0);
    }

    #[test]
    fn decrease_bound_worked_example() {
        let got = loss_decrease_bound(&worked_inputs(), &[1.0]).unwrap();
        assert!((got - -0.009799).abs() < 1e-12, "got {got}");
    }

    #[test]
    fn decrease_bound_checks_grad_norm_count() {
        assert!(matches!(
            loss_decrease_bound(&worked_inputs(), &[1.0, 1.0]),
            Err(Error::InvalidInputs(_))
        ));
    }

    #[test]
    fn noiseless_small_step_guarantees_descent() {
        let mut inputs = worked_inputs();
        inputs.constants.gradient_noise = 0.0;
        inputs.constants.gradient_bound = 0.0;
        inputs.constants.prototype_gap_bound = 0.0;
        // eta < 2 / loss_smoothness.
        inputs.learning_rate = 1.5;
        let got = loss_decrease_bound(&inputs, &[0.3]).unwrap();
        assert!(got < 0.0);
    }

    #[test]
    fn required_rounds_worked_example() {
        // Denominator 0.019598, T = ceil(2 / 0.019598) = 103.
        assert_eq!(required_rounds(&worked_inputs()).unwrap(), 103);
    }

    #[test]
    fn required_rounds_zero_gap() {
        let mut inputs = worked_inputs();
        inputs.initial_gap = 0.0;
        assert_eq!(required_rounds(&inputs).unwrap(), 0);
    }

    #[test]
    fn required_rounds_step_size_boundary() {
        // eta = 2 / L makes 2*eta - L*eta^2 vanish; with the other noise
        // terms zeroed the denominator is exactly 0.
        let mut inputs = worked_inputs();
        inputs.constants.gradient_noise = 0.0;
        inputs.constants.gradient_bound = 0.0;
        inputs.learning_rate = 2.0;
        match required_rounds(&inputs) {
            Err(Error::NonPositiveDenominator(d)) => assert!(d <= 0.0),
            other => panic!("expected NonPositiveDenominator, got {other:?}"),
        }
    }

    #[test]
    fn required_rounds_monotone_in_gap_and_proxy_bound() {
        let mut inputs = worked_inputs();
        let base = required_rounds(&inputs).unwrap();
        inputs.initial_gap = 2.0;
        let bigger_gap = required_rounds(&inputs).unwrap();
        assert!(bigger_gap >= base);

        let mut inputs = worked_inputs();
        inputs.constants.prototype_gap_bound = 0.03;
        let with_gap = required_rounds(&inputs).unwrap();
        assert!(with_gap >= base);
    }

    #[test]
    fn gap_term_is_isolated_and_vanishes_at_zero() {
        // The proxy-gap contribution is exactly 4*lambda/(C-1)*G2^2, so a
        // zero gap bound (the share-the-prototype baseline) adds nothing.
        let zero_gap = worked_inputs();
        let mut with_gap = worked_inputs();
        with_gap.constants.prototype_gap_bound = 0.5;
        let a = loss_decrease_bound(&zero_gap, &[1.0]).unwrap();
        let b = loss_decrease_bound(&with_gap, &[1.0]).unwrap();
        let neg_weight = 1.0 / 100.0;
        assert!((b - a - 4.0 * neg_weight * 0.25).abs() < 1e-15);
    }

    fn quadratic_trace(points: &[Vec<f64>]) -> TrainingTrace {
        // Toy loss L(phi) = ||phi||^2 with exact gradient 2*phi.
        TrainingTrace {
            steps: points
                .iter()
                .map(|phi| TraceStep {
                    phi: phi.clone(),
                    full_gradient: phi.iter().map(|x| 2.0 * x).collect(),
                    stochastic_gradients: vec![phi.iter().map(|x| 2.0 * x).collect()],
                    probe_embedding: vec![0.0, 0.0],
                    prototype_gap: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn quadratic_toy_smoothness_is_two() {
        let trace = quadratic_trace(&[
            vec![1.0, 0.5],
            vec![0.8, 0.1],
            vec![0.3, -0.2],
            vec![0.0, 0.05],
        ]);
        let constants = estimate_constants(&trace).unwrap();
        assert!(
            (constants.loss_smoothness - 2.0).abs() < 1e-6,
            "got {}",
            constants.loss_smoothness
        );
        assert_eq!(constants.gradient_noise, 0.0);
    }

    #[test]
    fn constant_trace_skips_zero_denominators() {
        let mut trace = quadratic_trace(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        for step in &mut trace.steps {
            step.prototype_gap = 0.25;
        }
        let constants = estimate_constants(&trace).unwrap();
        assert_eq!(constants.loss_smoothness, 0.0);
        assert_eq!(constants.prototype_gap_bound, 0.25);
    }

    #[test]
    fn short_trace_is_rejected() {
        let trace = quadratic_trace(&[vec![1.0, 1.0]]);
        assert!(matches!(
            estimate_constants(&trace),
            Err(Error::InsufficientTrace)
        ));
    }
}
