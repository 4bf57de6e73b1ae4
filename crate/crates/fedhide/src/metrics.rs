//! Evaluation: prototype leakage, nearest-prototype classification accuracy,
//! verification equal error rate, and prototype/proxy similarity statistics.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::ClientDataset;
use crate::error::{Error, Result};
use crate::model::{self, ModelParams};
use crate::vecmath::UnitVector;

/// Per-round evaluation record. Serialized field names are the wire format
/// of the metrics files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    pub mean_total_loss: f64,
    pub mean_positive_loss: f64,
    pub mean_negative_loss: f64,
    pub leakage: f64,
    pub accuracy: Option<f64>,
    pub eer: Option<f64>,
    pub proxy_similarity_avg: f64,
    pub proxy_similarity_std: f64,
}

fn check_key_sets(
    a: &BTreeMap<usize, UnitVector>,
    b: &BTreeMap<usize, UnitVector>,
) -> Result<()> {
    if a.len() != b.len() || !a.keys().zip(b.keys()).all(|(x, y)| x == y) {
        return Err(Error::KeyMismatch);
    }
    Ok(())
}

/// Fraction of clients whose shared proxy is nearest (by inner product) to
/// their own true prototype. Argmax ties break toward the lowest id.
pub fn prototype_leakage(
    true_prototypes: &BTreeMap<usize, UnitVector>,
    proxies: &BTreeMap<usize, UnitVector>,
) -> Result<f64> {
    check_key_sets(true_prototypes, proxies)?;
    if true_prototypes.len() < 2 {
        return Err(Error::InvalidParameter(
            "leakage needs at least 2 clients".into(),
        ));
    }
    let mut leaked = 0usize;
    for (&c, proxy) in proxies {
        let mut best_id = None;
        let mut best_sim = f64::NEG_INFINITY;
        for (&candidate, prototype) in true_prototypes {
            let sim = prototype.dot(proxy);
            // Strict comparison over ascending ids keeps the lowest id on ties.
            if sim > best_sim {
                best_sim = sim;
                best_id = Some(candidate);
            }
        }
        if best_id == Some(c) {
            leaked += 1;
        }
    }
    Ok(leaked as f64 / proxies.len() as f64)
}

/// Classify each test sample by the nearest true prototype in embedding
/// space and return the fraction classified as its own class.
pub fn nearest_prototype_accuracy(
    params: &ModelParams,
    test_sets: &[&ClientDataset],
    prototypes: &BTreeMap<usize, UnitVector>,
) -> Result<f64> {
    for ds in test_sets {
        if !prototypes.contains_key(&ds.class_id) {
            return Err(Error::MissingPrototype(ds.class_id));
        }
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for ds in test_sets {
        for sample in &ds.test_samples {
            let (embedding, _) = model::forward(params, sample)?;
            let mut best_id = None;
            let mut best_sim = f64::NEG_INFINITY;
            for (&candidate, prototype) in prototypes {
                let sim = prototype.dot(&embedding);
                if sim > best_sim {
                    best_sim = sim;
                    best_id = Some(candidate);
                }
            }
            if best_id == Some(ds.class_id) {
                correct += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::InvalidParameter("no test samples".into()));
    }
    Ok(correct as f64 / total as f64)
}

fn check_scores(genuine: &[f64], impostor: &[f64]) -> Result<()> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::EmptyScores);
    }
    if genuine.iter().chain(impostor).any(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter("scores must be finite".into()));
    }
    Ok(())
}

// FAR/FRR at one threshold, as exact count ratios. Thresholds are chosen
// strictly between score values, so >= vs > never matters.
fn rates_at(genuine: &[f64], impostor: &[f64], t: f64) -> (f64, f64) {
    let fa = impostor.iter().filter(|&&s| s >= t).count();
    let fr = genuine.iter().filter(|&&s| s < t).count();
    (
        fa as f64 / impostor.len() as f64,
        fr as f64 / genuine.len() as f64,
    )
}

// Candidate thresholds: one below every score, the midpoints between
// consecutive distinct score values, and one above every score.
fn candidate_thresholds(genuine: &[f64], impostor: &[f64]) -> Vec<f64> {
    let mut values: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values.dedup();
    let mut thresholds = Vec::with_capacity(values.len() + 1);
    thresholds.push(values[0] - 1.0);
    for pair in values.windows(2) {
        thresholds.push((pair[0] + pair[1]) / 2.0);
    }
    thresholds.push(values[values.len() - 1] + 1.0);
    thresholds
}

/// Equal error rate of a verification scorer.
///
/// Sweeps every threshold between distinct score values, finds the operating
/// point where the false-accept and false-reject rates cross, and reports
/// their midpoint there. Ties on the crossing gap resolve to the smaller
/// rate, which keeps the result deterministic.
pub fn equal_error_rate(genuine: &[f64], impostor: &[f64]) -> Result<f64> {
    check_scores(genuine, impostor)?;
    let mut gen_sorted = genuine.to_vec();
    gen_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut imp_sorted = impostor.to_vec();
    imp_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());

    let n_gen = gen_sorted.len() as f64;
    let n_imp = imp_sorted.len() as f64;
    let mut below_gen = 0usize; // genuine scores strictly below the threshold
    let mut below_imp = 0usize;

    let mut best_gap = f64::INFINITY;
    let mut best_eer = f64::INFINITY;
    for t in candidate_thresholds(&gen_sorted, &imp_sorted) {
        while below_gen < gen_sorted.len() && gen_sorted[below_gen] < t {
            below_gen += 1;
        }
        while below_imp < imp_sorted.len() && imp_sorted[below_imp] < t {
            below_imp += 1;
        }
        let far = (imp_sorted.len() - below_imp) as f64 / n_imp;
        let frr = below_gen as f64 / n_gen;
        let gap = (far - frr).abs();
        let eer = (far + frr) / 2.0;
        if gap < best_gap || (gap == best_gap && eer < best_eer) {
            best_gap = gap;
            best_eer = eer;
        }
    }
    Ok(best_eer)
}

/// Reference EER: re-count FAR/FRR from scratch at every candidate
/// threshold. Quadratic, kept as the independent oracle for the fast sweep.
pub fn equal_error_rate_brute_force(genuine: &[f64], impostor: &[f64]) -> Result<f64> {
    check_scores(genuine, impostor)?;
    let mut best_gap = f64::INFINITY;
    let mut best_eer = f64::INFINITY;
    for t in candidate_thresholds(genuine, impostor) {
        let (far, frr) = rates_at(genuine, impostor, t);
        let gap = (far - frr).abs();
        let eer = (far + frr) / 2.0;
        if gap < best_gap || (gap == best_gap && eer < best_eer) {
            best_gap = gap;
            best_eer = eer;
        }
    }
    Ok(best_eer)
}

/// Mean and population standard deviation of the per-client cosine between
/// true prototype and proxy.
pub fn proxy_similarity_stats(
    true_prototypes: &BTreeMap<usize, UnitVector>,
    proxies: &BTreeMap<usize, UnitVector>,
) -> Result<(f64, f64)> {
    check_key_sets(true_prototypes, proxies)?;
    if true_prototypes.is_empty() {
        return Err(Error::KeyMismatch);
    }
    let sims: Vec<f64> = true_prototypes
        .iter()
        .map(|(c, w)| w.dot(&proxies[c]).clamp(-1.0, 1.0))
        .collect();
    let n = sims.len() as f64;
    let mean = sims.iter().sum::<f64>() / n;
    let var = sims.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
    Ok((mean, var.sqrt().max(0.0)))
}

/// Verification scores for the synthetic task: every within-client test pair
/// is a genuine trial; an equal count of cross-client pairs is sampled as
/// impostor trials.
pub fn verification_scores<R: Rng + ?Sized>(
    params: &ModelParams,
    test_sets: &[&ClientDataset],
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut embeddings: Vec<Vec<UnitVector>> = Vec::with_capacity(test_sets.len());
    for ds in test_sets {
        let mut per_client = Vec::with_capacity(ds.test_samples.len());
        for sample in &ds.test_samples {
            per_client.push(model::forward(params, sample)?.0);
        }
        embeddings.push(per_client);
    }

    let mut genuine = Vec::new();
    for per_client in &embeddings {
        for i in 0..per_client.len() {
            for j in i + 1..per_client.len() {
                genuine.push(per_client[i].dot(&per_client[j]));
            }
        }
    }

    let clients_with_samples: Vec<usize> = embeddings
        .iter()
        .enumerate()
        .filter(|(_, e)| !e.is_empty())
        .map(|(i, _)| i)
        .collect();
    let mut impostor = Vec::with_capacity(genuine.len());
    if clients_with_samples.len() >= 2 {
        while impostor.len() < genuine.len() {
            let a = clients_with_samples[rng.random_range(0..clients_with_samples.len())];
            let b = clients_with_samples[rng.random_range(0..clients_with_samples.len())];
            if a == b {
                continue;
            }
            let ea = &embeddings[a][rng.random_range(0..embeddings[a].len())];
            let eb = &embeddings[b][rng.random_range(0..embeddings[b].len())];
            impostor.push(ea.dot(eb));
        }
    }
    Ok((genuine, impostor))
}
