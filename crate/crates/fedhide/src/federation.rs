//! The federation round loop.
//!
//! Each round the server picks a set of clients, broadcasts the global model
//! and the current proxy-prototype table, lets every selected client run E
//! local SGD steps on the contrastive objective and regenerate its proxy,
//! then averages the returned models and replaces the selected clients'
//! proxy entries. True prototypes never leave their client: the only thing
//! a client returns is [`ClientUpload`].

use std::collections::BTreeMap;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::convergence::{TraceStep, TrainingTrace};
use crate::dataset::{check_distinct_classes, ClientDataset};
use crate::error::{Error, Result};
use crate::metrics::{self, RoundMetrics};
use crate::model::{self, Architecture, ModelParams};
use crate::objective::{self, LossBreakdown};
use crate::proxy::{self, ProxyMethod, DEFAULT_COLD_START_SIGMA};
use crate::rng::{stream_rng, Purpose};
use crate::vecmath::{normalize, sample_unit_sphere, UnitVector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionPolicy {
    RoundRobin,
    UniformRandom,
}

/// Everything a training run is parameterized by.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub num_clients: usize,
    pub clients_per_round: usize,
    pub local_iters: usize,
    pub learning_rate: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub rounds: usize,
    pub proxy_method: ProxyMethod,
    pub selection: SelectionPolicy,
    pub seed: u64,
    pub arch: Architecture,
    pub eval_interval: usize,
    pub cold_start_sigma: f64,
}

impl TrainConfig {
    /// Baseline settings: single local iteration, minibatch 16, negative
    /// weight 10, learning rate 0.1, round-robin selection.
    pub fn new(num_clients: usize, arch: Architecture, proxy_method: ProxyMethod) -> Self {
        TrainConfig {
            num_clients,
            clients_per_round: num_clients,
            local_iters: 1,
            learning_rate: 0.1,
            lambda: 10.0,
            batch_size: 16,
            rounds: 100,
            proxy_method,
            selection: SelectionPolicy::RoundRobin,
            seed: 0,
            arch,
            eval_interval: 10,
            cold_start_sigma: DEFAULT_COLD_START_SIGMA,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients < 2 {
            return Err(Error::Config("num_clients must be >= 2".into()));
        }
        if self.clients_per_round < 1 || self.clients_per_round > self.num_clients {
            return Err(Error::Config(format!(
                "clients_per_round must be in [1, {}]",
                self.num_clients
            )));
        }
        if self.local_iters < 1 {
            return Err(Error::Config("local_iters must be >= 1".into()));
        }
        if self.learning_rate.is_nan() || self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.lambda.is_nan() || self.lambda < 0.0 {
            return Err(Error::Config("lambda must be >= 0".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.eval_interval < 1 {
            return Err(Error::Config("eval_interval must be >= 1".into()));
        }
        if self.cold_start_sigma.is_nan() || self.cold_start_sigma < 0.0 {
            return Err(Error::Config("cold_start_sigma must be >= 0".into()));
        }
        self.arch.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.proxy_method
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        Ok(())
    }
}

/// One client's private state. The prototype lives here and nowhere else.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub client_id: usize,
    pub params: ModelParams,
    pub prototype: UnitVector,
    pub dataset: ClientDataset,
    pub rng: ChaCha8Rng,
}

/// Server-side state between rounds.
#[derive(Debug, Clone)]
pub struct FederationState {
    pub round: usize,
    pub global_params: ModelParams,
    pub proxy_table: BTreeMap<usize, UnitVector>,
    pub cursor: usize,
    pub selection_rng: ChaCha8Rng,
    pub config: TrainConfig,
}

/// What a client hands back to the server: model parameters, the proxy
/// prototype, and loss statistics. No true prototype.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClientUpload {
    pub client_id: usize,
    pub params: ModelParams,
    pub proxy: UnitVector,
    pub loss: LossBreakdown,
}

/// Build round-zero state: fresh global model, independent uniform-sphere
/// draws for every prototype and every proxy-table entry.
pub fn init_federation(
    config: &TrainConfig,
    datasets: Vec<ClientDataset>,
) -> Result<(FederationState, Vec<ClientState>)> {
    config.validate()?;
    if datasets.len() != config.num_clients {
        return Err(Error::Config(format!(
            "expected {} datasets, got {}",
            config.num_clients,
            datasets.len()
        )));
    }
    check_distinct_classes(&datasets).map_err(|e| Error::Config(e.to_string()))?;

    let mut init_rng = stream_rng(config.seed, 0, Purpose::ModelInit);
    let global_params = model::init_params(&config.arch, &mut init_rng)?;

    let mut proxy_table = BTreeMap::new();
    let mut clients = Vec::with_capacity(datasets.len());
    for (c, dataset) in datasets.into_iter().enumerate() {
        let mut proto_rng = stream_rng(config.seed, c as u64, Purpose::PrototypeInit);
        let prototype = sample_unit_sphere(config.arch.embed_dim, &mut proto_rng)?;
        let mut proxy_rng = stream_rng(config.seed, c as u64, Purpose::ProxyInit);
        proxy_table.insert(c, sample_unit_sphere(config.arch.embed_dim, &mut proxy_rng)?);
        clients.push(ClientState {
            client_id: c,
            params: global_params.clone(),
            prototype,
            dataset,
            rng: stream_rng(config.seed, c as u64, Purpose::ClientLocal),
        });
    }

    Ok((
        FederationState {
            round: 0,
            global_params,
            proxy_table,
            cursor: 0,
            selection_rng: stream_rng(config.seed, 0, Purpose::Selection),
            config: config.clone(),
        },
        clients,
    ))
}

/// Pick the round's participants: the next M ids in cyclic order, or M
/// distinct ids sampled without replacement.
pub fn select_clients(state: &mut FederationState) -> Vec<usize> {
    let c = state.config.num_clients;
    let m = state.config.clients_per_round;
    match state.config.selection {
        SelectionPolicy::RoundRobin => {
            let picked = (0..m).map(|i| (state.cursor + i) % c).collect();
            state.cursor = (state.cursor + m) % c;
            picked
        }
        SelectionPolicy::UniformRandom => {
            let mut ids: Vec<usize> = (0..c).collect();
            for i in 0..m {
                let j = state.selection_rng.random_range(i..c);
                ids.swap(i, j);
            }
            ids.truncate(m);
            ids
        }
    }
}

// Minibatch indices: without replacement when the local set is big enough,
// with replacement otherwise.
fn sample_batch<R: Rng + ?Sized>(n: usize, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::InvalidSpec("client has no training samples".into()));
    }
    if batch_size > n {
        return Ok((0..batch_size).map(|_| rng.random_range(0..n)).collect());
    }
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..batch_size {
        let j = rng.random_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(batch_size);
    Ok(idx)
}

fn sgd_step(
    params: &mut ModelParams,
    prototype: &mut UnitVector,
    dataset: &ClientDataset,
    proxies: &[UnitVector],
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<LossBreakdown> {
    let idx = sample_batch(dataset.train_samples.len(), config.batch_size, rng)?;
    let batch: Vec<&[f64]> = idx
        .iter()
        .map(|&i| dataset.train_samples[i].as_slice())
        .collect();
    let (breakdown, grad_theta, grad_w) =
        objective::loss_and_gradients(params, prototype, &batch, proxies, config.lambda)?;
    params.axpy(-config.learning_rate, &grad_theta)?;
    let stepped: Vec<f64> = prototype
        .as_slice()
        .iter()
        .zip(&grad_w)
        .map(|(w, g)| w - config.learning_rate * g)
        .collect();
    // Prototypes live on the sphere; project back after the raw step.
    *prototype = normalize(&stepped)?;
    Ok(breakdown)
}

/// Run E local SGD steps from the broadcast global model, then regenerate
/// the proxy prototype. `proxy_view` is the round-start proxy snapshot
/// without the client's own entry. The reported loss is the mean over the
/// E steps.
pub fn client_update(
    client: &mut ClientState,
    global_params: &ModelParams,
    proxy_view: &[(usize, UnitVector)],
    config: &TrainConfig,
) -> Result<ClientUpload> {
    debug_assert!(proxy_view.iter().all(|(id, _)| *id != client.client_id));
    if config.local_iters < 1 {
        return Err(Error::Config("local_iters must be >= 1".into()));
    }
    client.params = global_params.clone();
    let proxies: Vec<UnitVector> = proxy_view.iter().map(|(_, p)| p.clone()).collect();
    let mut breakdowns = Vec::with_capacity(config.local_iters);
    for _ in 0..config.local_iters {
        breakdowns.push(sgd_step(
            &mut client.params,
            &mut client.prototype,
            &client.dataset,
            &proxies,
            config,
            &mut client.rng,
        )?);
    }
    let proxy = proxy::generate_with_cold_start(
        &config.proxy_method,
        &client.prototype,
        proxy_view,
        config.cold_start_sigma,
        &mut client.rng,
    )?;
    Ok(ClientUpload {
        client_id: client.client_id,
        params: client.params.clone(),
        proxy,
        loss: LossBreakdown::mean(&breakdowns).expect("local_iters >= 1"),
    })
}

/// Coordinate-wise arithmetic mean, accumulated in the order given.
pub fn aggregate_models(local_params: &[&ModelParams]) -> Result<ModelParams> {
    let first = local_params.first().ok_or(Error::ShapeMismatch)?;
    let mut acc = ModelParams::zeros(first.arch())?;
    for p in local_params {
        acc.axpy(1.0, p)?;
    }
    acc.scale(1.0 / local_params.len() as f64);
    Ok(acc)
}

fn prototype_table(clients: &[ClientState]) -> BTreeMap<usize, UnitVector> {
    clients
        .iter()
        .map(|c| (c.client_id, c.prototype.clone()))
        .collect()
}

/// One full round: select, update, average, replace proxies, measure.
///
/// Every selected client sees the identical round-start proxy snapshot, and
/// updates run in ascending client id so aggregation order is fixed.
pub fn run_round(state: &mut FederationState, clients: &mut [ClientState]) -> Result<RoundMetrics> {
    let round = state.round + 1;
    let mut selected = select_clients(state);
    selected.sort_unstable();

    let snapshot = state.proxy_table.clone();
    let mut uploads = Vec::with_capacity(selected.len());
    for &cid in &selected {
        let view: Vec<(usize, UnitVector)> = snapshot
            .iter()
            .filter(|(id, _)| **id != cid)
            .map(|(id, p)| (*id, p.clone()))
            .collect();
        let upload = client_update(&mut clients[cid], &state.global_params, &view, &state.config)
            .map_err(|e| Error::Training {
                round,
                client_id: cid,
                source: Box::new(e),
            })?;
        uploads.push(upload);
    }

    let params_refs: Vec<&ModelParams> = uploads.iter().map(|u| &u.params).collect();
    state.global_params = aggregate_models(&params_refs)?;
    for upload in &uploads {
        state.proxy_table.insert(upload.client_id, upload.proxy.clone());
    }
    state.round = round;

    let prototypes = prototype_table(clients);
    let leakage = metrics::prototype_leakage(&prototypes, &state.proxy_table)?;
    let (sim_avg, sim_std) = metrics::proxy_similarity_stats(&prototypes, &state.proxy_table)?;
    let n = uploads.len() as f64;
    Ok(RoundMetrics {
        round,
        mean_total_loss: uploads.iter().map(|u| u.loss.total).sum::<f64>() / n,
        mean_positive_loss: uploads.iter().map(|u| u.loss.positive).sum::<f64>() / n,
        mean_negative_loss: uploads.iter().map(|u| u.loss.negative).sum::<f64>() / n,
        leakage,
        accuracy: None,
        eer: None,
        proxy_similarity_avg: sim_avg,
        proxy_similarity_std: sim_std,
    })
}

fn evaluate(
    state: &FederationState,
    clients: &[ClientState],
    record: &mut RoundMetrics,
) -> Result<()> {
    let prototypes = prototype_table(clients);
    let test_sets: Vec<&ClientDataset> = clients.iter().map(|c| &c.dataset).collect();
    record.accuracy =
        Some(metrics::nearest_prototype_accuracy(&state.global_params, &test_sets, &prototypes)?);
    let mut eval_rng = stream_rng(state.config.seed, state.round as u64, Purpose::Eval);
    let (genuine, impostor) =
        metrics::verification_scores(&state.global_params, &test_sets, &mut eval_rng)?;
    record.eer = if genuine.is_empty() || impostor.is_empty() {
        None
    } else {
        Some(metrics::equal_error_rate(&genuine, &impostor)?)
    };
    Ok(())
}

/// Advance to `target_round`, evaluating (accuracy, EER) and emitting a
/// record every `eval_interval` rounds and at the final round.
pub fn run_until(
    state: &mut FederationState,
    clients: &mut [ClientState],
    target_round: usize,
    mut on_eval: impl FnMut(&RoundMetrics),
) -> Result<Vec<RoundMetrics>> {
    let mut history = Vec::new();
    while state.round < target_round {
        let mut record = run_round(state, clients)?;
        if state.round.is_multiple_of(state.config.eval_interval) || state.round == target_round {
            evaluate(state, clients, &mut record)?;
            on_eval(&record);
            history.push(record);
        }
    }
    Ok(history)
}

/// Full training: initialize, run all configured rounds, return the final
/// state plus the evaluated-round history.
pub fn run_training(
    config: &TrainConfig,
    datasets: Vec<ClientDataset>,
    on_eval: impl FnMut(&RoundMetrics),
) -> Result<(FederationState, Vec<ClientState>, Vec<RoundMetrics>)> {
    let (mut state, mut clients) = init_federation(config, datasets)?;
    let history = run_until(&mut state, &mut clients, config.rounds, on_eval)?;
    Ok((state, clients, history))
}

/// Everything needed to resume a run bit-exactly. Datasets are not stored;
/// they are reconstructed from their own spec on restore.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub round: usize,
    pub global_params: ModelParams,
    pub proxy_table: BTreeMap<usize, UnitVector>,
    pub cursor: usize,
    pub selection_rng: ChaCha8Rng,
    pub config: TrainConfig,
    pub clients: Vec<ClientCheckpoint>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClientCheckpoint {
    pub client_id: usize,
    pub prototype: UnitVector,
    pub rng: ChaCha8Rng,
}

impl Checkpoint {
    pub fn capture(state: &FederationState, clients: &[ClientState]) -> Checkpoint {
        Checkpoint {
            round: state.round,
            global_params: state.global_params.clone(),
            proxy_table: state.proxy_table.clone(),
            cursor: state.cursor,
            selection_rng: state.selection_rng.clone(),
            config: state.config.clone(),
            clients: clients
                .iter()
                .map(|c| ClientCheckpoint {
                    client_id: c.client_id,
                    prototype: c.prototype.clone(),
                    rng: c.rng.clone(),
                })
                .collect(),
        }
    }

    /// CBOR on disk: checkpoints must restore f64 state bit-exactly, and
    /// decimal text round trips are not reliable for that.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        ciborium::into_writer(self, BufWriter::new(file))
            .map_err(|e| Error::CheckpointFormat(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let file = std::fs::File::open(path)?;
        ciborium::from_reader(BufReader::new(file))
            .map_err(|e| Error::CheckpointFormat(e.to_string()))
    }

    /// Rebuild runnable state. Local model replicas start from the global
    /// model; they are overwritten on each client's next selection anyway.
    pub fn restore(self, datasets: Vec<ClientDataset>) -> Result<(FederationState, Vec<ClientState>)> {
        if datasets.len() != self.clients.len() {
            return Err(Error::Config(format!(
                "checkpoint has {} clients, got {} datasets",
                self.clients.len(),
                datasets.len()
            )));
        }
        let clients: Vec<ClientState> = self
            .clients
            .into_iter()
            .zip(datasets)
            .map(|(cc, dataset)| {
                if cc.client_id != dataset.client_id {
                    return Err(Error::Config(format!(
                        "dataset order mismatch: checkpoint client {} got dataset {}",
                        cc.client_id, dataset.client_id
                    )));
                }
                Ok(ClientState {
                    client_id: cc.client_id,
                    params: self.global_params.clone(),
                    prototype: cc.prototype,
                    dataset,
                    rng: cc.rng,
                })
            })
            .collect::<Result<_>>()?;
        Ok((
            FederationState {
                round: self.round,
                global_params: self.global_params,
                proxy_table: self.proxy_table,
                cursor: self.cursor,
                selection_rng: self.selection_rng,
                config: self.config,
            },
            clients,
        ))
    }
}

/// Like [`client_update`], but records a per-step trace for the convergence
/// constant estimators: flattened state, the full-batch gradient, stochastic
/// gradients from `redraws` extra minibatch draws, the embedding of a fixed
/// probe input, and the gap to the proxy the client would publish.
///
/// All extra draws come from dedicated streams, so the training trajectory
/// is identical with and without tracing.
pub fn traced_client_update(
    client: &mut ClientState,
    global_params: &ModelParams,
    proxy_view: &[(usize, UnitVector)],
    config: &TrainConfig,
    redraws: usize,
    probe: &[f64],
) -> Result<(ClientUpload, TrainingTrace)> {
    if config.local_iters < 1 {
        return Err(Error::Config("local_iters must be >= 1".into()));
    }
    client.params = global_params.clone();
    let proxies: Vec<UnitVector> = proxy_view.iter().map(|(_, p)| p.clone()).collect();
    let mut redraw_rng = stream_rng(
        config.seed,
        client.client_id as u64,
        Purpose::TraceRedraw,
    );
    let mut steps = Vec::with_capacity(config.local_iters);
    let mut breakdowns = Vec::with_capacity(config.local_iters);
    for _ in 0..config.local_iters {
        let step = record_trace_step(client, &proxies, config, redraws, probe, &mut redraw_rng)?;
        steps.push(step);
        breakdowns.push(sgd_step(
            &mut client.params,
            &mut client.prototype,
            &client.dataset,
            &proxies,
            config,
            &mut client.rng,
        )?);
    }
    // Final state of the local pass, so consecutive-step deltas exist even
    // when E = 1.
    steps.push(record_trace_step(
        client,
        &proxies,
        config,
        redraws,
        probe,
        &mut redraw_rng,
    )?);

    let proxy = proxy::generate_with_cold_start(
        &config.proxy_method,
        &client.prototype,
        proxy_view,
        config.cold_start_sigma,
        &mut client.rng,
    )?;
    Ok((
        ClientUpload {
            client_id: client.client_id,
            params: client.params.clone(),
            proxy,
            loss: LossBreakdown::mean(&breakdowns).expect("local_iters >= 1"),
        },
        TrainingTrace { steps },
    ))
}

fn flat_gradient(grad_theta: &ModelParams, grad_w: &[f64]) -> Vec<f64> {
    let mut flat = grad_theta.flatten();
    flat.extend_from_slice(grad_w);
    flat
}

fn record_trace_step(
    client: &ClientState,
    proxies: &[UnitVector],
    config: &TrainConfig,
    redraws: usize,
    probe: &[f64],
    redraw_rng: &mut ChaCha8Rng,
) -> Result<TraceStep> {
    let mut phi = client.params.flatten();
    phi.extend_from_slice(client.prototype.as_slice());

    // Full-batch gradient: the whole local train set as one batch.
    let full_batch: Vec<&[f64]> = client
        .dataset
        .train_samples
        .iter()
        .map(Vec::as_slice)
        .collect();
    let (_, g_theta, g_w) = objective::loss_and_gradients(
        &client.params,
        &client.prototype,
        &full_batch,
        proxies,
        config.lambda,
    )?;
    let full_gradient = flat_gradient(&g_theta, &g_w);

    let mut stochastic_gradients = Vec::with_capacity(redraws);
    for _ in 0..redraws {
        let idx = sample_batch(
            client.dataset.train_samples.len(),
            config.batch_size,
            redraw_rng,
        )?;
        let batch: Vec<&[f64]> = idx
            .iter()
            .map(|&i| client.dataset.train_samples[i].as_slice())
            .collect();
        let (_, g_theta, g_w) = objective::loss_and_gradients(
            &client.params,
            &client.prototype,
            &batch,
            proxies,
            config.lambda,
        )?;
        stochastic_gradients.push(flat_gradient(&g_theta, &g_w));
    }

    let (probe_embedding, _) = model::forward(&client.params, probe)?;

    // The gap the published proxy would have right now.
    let view: Vec<(usize, UnitVector)> = proxies
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p.clone()))
        .collect();
    let candidate = proxy::generate_with_cold_start(
        &config.proxy_method,
        &client.prototype,
        &view,
        config.cold_start_sigma,
        redraw_rng,
    )?;
    let prototype_gap = client
        .prototype
        .as_slice()
        .iter()
        .zip(candidate.as_slice())
        .map(|(w, p)| (w - p) * (w - p))
        .sum::<f64>()
        .sqrt();

    Ok(TraceStep {
        phi,
        full_gradient,
        stochastic_gradients,
        probe_embedding: probe_embedding.to_vec(),
        prototype_gap,
    })
}
