//! Experiment configuration: a sectioned TOML file with hard errors on
//! unknown keys, so a typo in a hyperparameter name can never silently run
//! with defaults.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fedhide::dataset::{self, ClientDataset, CsvSchema, SyntheticSpec};
use fedhide::federation::{SelectionPolicy, TrainConfig};
use fedhide::model::{Activation, Architecture};
use fedhide::proxy::{ProxyMethod, DEFAULT_COLD_START_SIGMA};

use crate::CliError;

pub type Result<T> = std::result::Result<T, CliError>;

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    pub dataset: DatasetSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub proxy: ProxySection,
    #[serde(default)]
    pub eval: EvalSection,
    pub output: OutputSection,
}

/// Dataset source. `kind` selects which of the remaining keys apply;
/// keys belonging to the other kind are rejected at validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub num_clients: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples_per_client: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cluster_spread: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inter_cluster_scale: Option<f64>,
    /// Fixes the synthetic task across run seeds; defaults to the run seed.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub class_column: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub feature_columns: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    pub embed_dim: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

fn default_activation() -> Activation {
    Activation::Tanh
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub clients_per_round: usize,
    pub rounds: usize,
    #[serde(default = "default_local_iters")]
    pub local_iters: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_lambda")]
    pub lambda: f64,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_selection")]
    pub selection: SelectionPolicy,
}

fn default_local_iters() -> usize {
    1
}
fn default_learning_rate() -> f64 {
    0.1
}
fn default_lambda() -> f64 {
    10.0
}
fn default_batch_size() -> usize {
    16
}
fn default_selection() -> SelectionPolicy {
    SelectionPolicy::RoundRobin
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProxySection {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cos_theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cold_start_sigma: Option<f64>,
    /// Similarity used to rank neighbors for fedhide. Cosine is the only
    /// shipped option; the key exists so the choice is explicit.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub neighbor_metric: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_eval_interval")]
    pub interval: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            interval: default_eval_interval(),
        }
    }
}

fn default_eval_interval() -> usize {
    10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl ProxySection {
    pub fn to_method(&self) -> Result<ProxyMethod> {
        if let Some(metric) = &self.neighbor_metric {
            if metric != "cosine" {
                return Err(config_err(format!(
                    "neighbor_metric `{metric}` is not supported (only \"cosine\")"
                )));
            }
        }
        let reject = |key: &str, set: bool| {
            if set {
                Err(config_err(format!(
                    "proxy key `{key}` is not valid for method `{}`",
                    self.method
                )))
            } else {
                Ok(())
            }
        };
        let method = match self.method.as_str() {
            "fedhide" => {
                reject("sigma", self.sigma.is_some())?;
                reject("cos_theta", self.cos_theta.is_some())?;
                ProxyMethod::FedHide {
                    alpha: self
                        .alpha
                        .ok_or_else(|| config_err("fedhide requires `alpha`"))?,
                    k: self.k.ok_or_else(|| config_err("fedhide requires `k`"))?,
                }
            }
            "fedgn" => {
                reject("alpha", self.alpha.is_some())?;
                reject("k", self.k.is_some())?;
                reject("cos_theta", self.cos_theta.is_some())?;
                ProxyMethod::FedGn {
                    sigma: self
                        .sigma
                        .ok_or_else(|| config_err("fedgn requires `sigma`"))?,
                }
            }
            "fedcs" => {
                reject("alpha", self.alpha.is_some())?;
                reject("k", self.k.is_some())?;
                reject("sigma", self.sigma.is_some())?;
                ProxyMethod::FedCs {
                    cos_theta: self
                        .cos_theta
                        .ok_or_else(|| config_err("fedcs requires `cos_theta`"))?,
                }
            }
            "fedaws" => {
                reject("alpha", self.alpha.is_some())?;
                reject("k", self.k.is_some())?;
                reject("sigma", self.sigma.is_some())?;
                reject("cos_theta", self.cos_theta.is_some())?;
                ProxyMethod::FedAws
            }
            other => {
                return Err(config_err(format!(
                    "unknown proxy method `{other}` (expected fedhide|fedgn|fedcs|fedaws)"
                )))
            }
        };
        method.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(method)
    }

    pub fn from_method(method: &ProxyMethod) -> ProxySection {
        let mut section = ProxySection {
            method: method.name().to_string(),
            alpha: None,
            k: None,
            sigma: None,
            cos_theta: None,
            cold_start_sigma: None,
            neighbor_metric: None,
        };
        match *method {
            ProxyMethod::FedHide { alpha, k } => {
                section.alpha = Some(alpha);
                section.k = Some(k);
            }
            ProxyMethod::FedGn { sigma } => section.sigma = Some(sigma),
            ProxyMethod::FedCs { cos_theta } => section.cos_theta = Some(cos_theta),
            ProxyMethod::FedAws => {}
        }
        section
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| config_err(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read {}: {e}", path.display())))?;
        ExperimentConfig::parse(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(config_err("`seeds` must be nonempty"));
        }
        match self.dataset.kind.as_str() {
            "synthetic" => {
                for (key, set) in [
                    ("path", self.dataset.path.is_some()),
                    ("class_column", self.dataset.class_column.is_some()),
                    ("feature_columns", self.dataset.feature_columns.is_some()),
                ] {
                    if set {
                        return Err(config_err(format!(
                            "dataset key `{key}` is not valid for kind = \"synthetic\""
                        )));
                    }
                }
                if self.dataset.input_dim.is_none() {
                    return Err(config_err("synthetic dataset requires `input_dim`"));
                }
                if self.dataset.num_clients.is_none() {
                    return Err(config_err("synthetic dataset requires `num_clients`"));
                }
            }
            "csv" => {
                for (key, set) in [
                    ("num_clients", self.dataset.num_clients.is_some()),
                    ("samples_per_client", self.dataset.samples_per_client.is_some()),
                    ("input_dim", self.dataset.input_dim.is_some()),
                    ("cluster_spread", self.dataset.cluster_spread.is_some()),
                    ("inter_cluster_scale", self.dataset.inter_cluster_scale.is_some()),
                    ("seed", self.dataset.seed.is_some()),
                ] {
                    if set {
                        return Err(config_err(format!(
                            "dataset key `{key}` is not valid for kind = \"csv\""
                        )));
                    }
                }
                let path = self
                    .dataset
                    .path
                    .as_ref()
                    .ok_or_else(|| config_err("csv dataset requires `path`"))?;
                if !path.exists() {
                    return Err(config_err(format!(
                        "dataset file not found: {}",
                        path.display()
                    )));
                }
                if self.dataset.class_column.is_none() {
                    return Err(config_err("csv dataset requires `class_column`"));
                }
            }
            other => {
                return Err(config_err(format!(
                    "unknown dataset kind `{other}` (expected synthetic|csv)"
                )))
            }
        }
        self.proxy.to_method()?;
        Ok(())
    }

    /// Synthetic spec for a given run seed (csv configs have none).
    pub fn synthetic_spec(&self, run_seed: u64) -> Option<SyntheticSpec> {
        if self.dataset.kind != "synthetic" {
            return None;
        }
        Some(SyntheticSpec {
            num_clients: self.dataset.num_clients.unwrap_or(20),
            samples_per_client: self.dataset.samples_per_client.unwrap_or(50),
            input_dim: self.dataset.input_dim.unwrap_or(32),
            cluster_spread: self.dataset.cluster_spread.unwrap_or(0.1),
            inter_cluster_scale: self.dataset.inter_cluster_scale.unwrap_or(1.0),
            seed: self.dataset.seed.unwrap_or(run_seed),
        })
    }

    /// Materialize the datasets for one run seed.
    pub fn build_datasets(&self, run_seed: u64) -> Result<Vec<ClientDataset>> {
        match self.dataset.kind.as_str() {
            "synthetic" => {
                let spec = self.synthetic_spec(run_seed).expect("synthetic kind");
                dataset::generate_synthetic(&spec).map_err(|e| config_err(e.to_string()))
            }
            "csv" => {
                let path = self.dataset.path.as_ref().expect("validated");
                let schema = CsvSchema {
                    class_column: self.dataset.class_column.clone().expect("validated"),
                    feature_columns: self.dataset.feature_columns.clone().unwrap_or_default(),
                };
                dataset::load_csv(path, &schema).map_err(|e| config_err(e.to_string()))
            }
            _ => unreachable!("validated"),
        }
    }

    /// Assemble the training configuration for one run seed. `input_dim`
    /// and the client count come from the materialized datasets.
    pub fn train_config(
        &self,
        run_seed: u64,
        datasets: &[ClientDataset],
    ) -> Result<TrainConfig> {
        let input_dim = datasets
            .first()
            .map(ClientDataset::input_dim)
            .filter(|&d| d > 0)
            .ok_or_else(|| config_err("datasets are empty"))?;
        let arch = Architecture {
            input_dim,
            hidden: self.model.hidden.clone(),
            embed_dim: self.model.embed_dim,
            activation: self.model.activation,
        };
        let config = TrainConfig {
            num_clients: datasets.len(),
            clients_per_round: self.train.clients_per_round,
            local_iters: self.train.local_iters,
            learning_rate: self.train.learning_rate,
            lambda: self.train.lambda,
            batch_size: self.train.batch_size,
            rounds: self.train.rounds,
            proxy_method: self.proxy.to_method()?,
            selection: self.train.selection,
            seed: run_seed,
            arch,
            eval_interval: self.eval.interval,
            cold_start_sigma: self
                .proxy
                .cold_start_sigma
                .unwrap_or(DEFAULT_COLD_START_SIGMA),
        };
        config.validate().map_err(|e| config_err(e.to_string()))?;
        Ok(config)
    }

    /// Output directory, honoring `FEDHIDE_OUT_ROOT` for relative paths.
    pub fn output_dir(&self) -> PathBuf {
        resolve_output_dir(&self.output.dir)
    }
}

pub fn resolve_output_dir(dir: &Path) -> PathBuf {
    if dir.is_absolute() {
        return dir.to_path_buf();
    }
    match std::env::var_os("FEDHIDE_OUT_ROOT") {
        Some(root) if !root.is_empty() => PathBuf::from(root).join(dir),
        _ => dir.to_path_buf(),
    }
}
