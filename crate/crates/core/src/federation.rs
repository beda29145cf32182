//! Federated rounds over clients that sample time at different resolutions.
//!
//! One round:
//!
//! 1. broadcast: the server model is adapted `T_c → T_k` for every client;
//! 2. local training on each client's shard (in parallel);
//! 3. each client model is adapted back `T_k → T_c`;
//! 4. unweighted mean of every tensor, in ascending client order;
//! 5. evaluation at `T_c`.
//!
//! Plain averaging skips steps 1 and 3. The post-training variants also skip
//! them but adapt the final model once.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adaptation::{adapt_model, AdaptationRule, ResolutionPair};
use crate::energy::{accumulate_run, EnergyModel, ForwardOps};
use crate::error::{Error, Result};
use crate::network::{FrameSequence, ModelParams};
use crate::seed;
use crate::training::{evaluate_dataset, train_local, ForwardWork, Schedule, TrainConfig};

/// Sequences per evaluation forward pass.
pub const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug)]
pub struct ClientSpec {
    pub id: usize,
    /// Sampling interval as a multiple of the base frame window.
    pub resolution: u32,
    pub shard: Vec<FrameSequence>,
    pub train: Option<TrainConfig>,
    /// Optional local test set at `resolution`, for per-client diagnostics.
    pub test: Option<Vec<FrameSequence>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FederationMethod {
    #[serde(rename = "FedAvg")]
    FedAvg,
    #[serde(rename = "FedTA-Int")]
    FedTaInt,
    #[serde(rename = "FedTA-Eul")]
    FedTaEul,
    #[serde(rename = "FedTA-Δ", alias = "FedTA-Delta")]
    FedTaDelta,
    #[serde(rename = "FedTA-Int-Post")]
    FedTaIntPost,
    #[serde(rename = "FedTA-Eul-Post")]
    FedTaEulPost,
    #[serde(rename = "FedTA-Δ-Post", alias = "FedTA-Delta-Post")]
    FedTaDeltaPost,
}

impl FederationMethod {
    pub const ALL: [FederationMethod; 7] = [
        FederationMethod::FedAvg,
        FederationMethod::FedTaInt,
        FederationMethod::FedTaEul,
        FederationMethod::FedTaDelta,
        FederationMethod::FedTaIntPost,
        FederationMethod::FedTaEulPost,
        FederationMethod::FedTaDeltaPost,
    ];

    pub fn rule(self) -> AdaptationRule {
        use FederationMethod::*;
        match self {
            FedAvg => AdaptationRule::None,
            FedTaInt | FedTaIntPost => AdaptationRule::Integral,
            FedTaEul | FedTaEulPost => AdaptationRule::Euler,
            FedTaDelta | FedTaDeltaPost => AdaptationRule::DeltaShift,
        }
    }

    pub fn is_post(self) -> bool {
        matches!(
            self,
            FederationMethod::FedTaIntPost | FederationMethod::FedTaEulPost | FederationMethod::FedTaDeltaPost
        )
    }

    /// Rule used around each round's local training.
    fn round_rule(self) -> AdaptationRule {
        if self.is_post() {
            AdaptationRule::None
        } else {
            self.rule()
        }
    }

    pub fn name(self) -> &'static str {
        use FederationMethod::*;
        match self {
            FedAvg => "FedAvg",
            FedTaInt => "FedTA-Int",
            FedTaEul => "FedTA-Eul",
            FedTaDelta => "FedTA-Δ",
            FedTaIntPost => "FedTA-Int-Post",
            FedTaEulPost => "FedTA-Eul-Post",
            FedTaDeltaPost => "FedTA-Δ-Post",
        }
    }
}

impl fmt::Display for FederationMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FederationMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.replace("Delta", "Δ").replace("delta", "Δ");
        FederationMethod::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(&norm))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown federation method `{s}`")))
    }
}

#[derive(Clone, Debug)]
pub struct FederationConfig {
    pub clients: Vec<ClientSpec>,
    pub central_resolution: u32,
    pub method: FederationMethod,
    pub rounds: usize,
    pub seed: u64,
    pub train: TrainConfig,
}

impl FederationConfig {
    pub fn validate(&self, theta: &ModelParams) -> Result<()> {
        if self.clients.is_empty() {
            return Err(Error::Config("federation needs at least one client".into()));
        }
        if self.central_resolution == 0 {
            return Err(Error::Config("central resolution must be at least 1".into()));
        }
        for (i, c) in self.clients.iter().enumerate() {
            if c.id != i {
                return Err(Error::Config(format!(
                    "client ids must be 0..K in order; found {} at {i}",
                    c.id
                )));
            }
            if c.resolution == 0 {
                return Err(Error::Config(format!("client {i} has resolution 0")));
            }
            if c.shard.is_empty() {
                return Err(Error::Config(format!("client {i} has an empty shard")));
            }
            c.train.as_ref().unwrap_or(&self.train).validate()?;
        }
        let variant = theta.arch.kind.variant;
        if !self.method.rule().supports(variant) {
            return Err(Error::IncompatibleRule {
                rule: self.method.to_string(),
                variant: theta.arch.kind.to_string(),
            });
        }
        if self.method.is_post() && self.clients.iter().any(|c| c.resolution != self.clients[0].resolution) {
            return Err(Error::Config(format!(
                "{} requires every client to share one resolution",
                self.method
            )));
        }
        Ok(())
    }

    fn client_train(&self, k: usize) -> &TrainConfig {
        self.clients[k].train.as_ref().unwrap_or(&self.train)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundReport {
    /// 1-based round index.
    pub round: usize,
    pub accuracy: f64,
    pub loss: f64,
    pub client_losses: Vec<f64>,
    /// Local-model accuracy on each client's own test set, when provided.
    pub client_accuracy: Vec<Option<f64>>,
    /// Spikes per neuron-step during this round's training, per hidden layer.
    pub spike_rates: Vec<Option<f64>>,
    /// Forward operations of all training so far.
    pub ops: ForwardOps,
    pub client_ops: Vec<ForwardOps>,
    /// Training energy so far, joules.
    pub energy: f64,
}

fn pair(from: u32, to: u32) -> ResolutionPair {
    ResolutionPair::new(from as f64, to as f64).expect("resolutions are validated positive")
}

/// Server model as each client receives it.
pub fn broadcast(
    theta: &ModelParams,
    clients: &[ClientSpec],
    method: FederationMethod,
    central: u32,
) -> Result<Vec<ModelParams>> {
    clients
        .iter()
        .map(|c| adapt_model(theta, method.round_rule(), pair(central, c.resolution)).map_err(|e| e.for_client(c.id)))
        .collect()
}

/// Adapt client models back to `T_c` and average them.
pub fn aggregate(
    models: &[ModelParams],
    clients: &[ClientSpec],
    method: FederationMethod,
    central: u32,
) -> Result<ModelParams> {
    if models.is_empty() || models.len() != clients.len() {
        return Err(Error::InvalidArgument(format!(
            "{} models for {} clients",
            models.len(),
            clients.len()
        )));
    }
    let adapted = models
        .iter()
        .zip(clients)
        .map(|(m, c)| adapt_model(m, method.round_rule(), pair(c.resolution, central)).map_err(|e| e.for_client(c.id)))
        .collect::<Result<Vec<_>>>()?;
    mean_models(&adapted)
}

/// Element-wise mean, accumulated as `x₁ + Σ(x_k − x₁)/K` in order so that
/// identical inputs are returned exactly.
pub fn mean_models(models: &[ModelParams]) -> Result<ModelParams> {
    let first = models
        .first()
        .ok_or_else(|| Error::InvalidArgument("nothing to average".into()))?;
    let base = first.to_flat();
    let k = models.len() as f64;
    let mut acc = vec![0.0; base.len()];
    for (i, m) in models.iter().enumerate().skip(1) {
        if m.arch != first.arch {
            return Err(Error::Shape(format!("model {i} has a different architecture")));
        }
        let flat = m.to_flat();
        if flat.len() != base.len() {
            return Err(Error::Shape(format!(
                "model {i} has {} scalars, expected {}",
                flat.len(),
                base.len()
            )));
        }
        for ((a, x), b) in acc.iter_mut().zip(&flat).zip(&base) {
            *a += (x - b) / k;
        }
    }
    let mean: Vec<f64> = base.iter().zip(&acc).map(|(b, a)| b + a).collect();
    let mut out = first.clone();
    out.set_flat(&mean)?;
    Ok(out)
}

/// Eval-mode accuracy and mean loss.
pub fn evaluate(theta: &ModelParams, test: &[FrameSequence]) -> Result<(f64, f64)> {
    evaluate_dataset(theta, test, EVAL_CHUNK)
}

#[derive(Debug)]
pub struct FederatedOutcome {
    pub model: ModelParams,
    pub reports: Vec<RoundReport>,
    /// Training work per client over the whole run.
    pub work: Vec<ForwardWork>,
}

/// Run `config.rounds` rounds from `theta`, evaluating on `test` (binned at
/// the central resolution) after each. `sink` sees every report as soon as
/// it is produced. A failing client aborts the run.
pub fn run_federated(
    config: &FederationConfig,
    theta: &ModelParams,
    test: &[FrameSequence],
    sink: &mut dyn FnMut(&RoundReport) -> Result<()>,
) -> Result<FederatedOutcome> {
    config.validate(theta)?;
    let k = config.clients.len();
    let mut global = theta.clone();
    let mut reports = Vec::with_capacity(config.rounds);
    let mut work = vec![ForwardWork::default(); k];
    let energy_model = EnergyModel::default();
    for round in 1..=config.rounds {
        let local = broadcast(&global, &config.clients, config.method, config.central_resolution)?;
        let outcomes: Vec<Result<_>> = config
            .clients
            .par_iter()
            .zip(local.into_par_iter())
            .map(|(client, start)| {
                let tc = config.client_train(client.id);
                let schedule = Schedule {
                    epoch_offset: (round - 1) * tc.epochs,
                    total_epochs: config.rounds * tc.epochs,
                };
                let mut rng = seed::rng(config.seed, &[seed::TRAIN, round as u64, client.id as u64]);
                let out =
                    train_local(&start, &client.shard, tc, schedule, &mut rng).map_err(|e| e.for_client(client.id))?;
                let acc = match &client.test {
                    Some(t) => Some(evaluate(&out.model, t).map_err(|e| e.for_client(client.id))?.0),
                    None => None,
                };
                Ok((out, acc))
            })
            .collect();
        let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

        let mut round_work = ForwardWork::default();
        for (w, (o, _)) in work.iter_mut().zip(&outcomes) {
            w.merge(&o.work);
            round_work.merge(&o.work);
        }
        let models: Vec<ModelParams> = outcomes.iter().map(|(o, _)| o.model.clone()).collect();
        global = aggregate(&models, &config.clients, config.method, config.central_resolution)?;
        if config.method.is_post() && round == config.rounds {
            let shared = config.clients[0].resolution;
            global = adapt_model(&global, config.method.rule(), pair(shared, config.central_resolution))?;
        }

        let (accuracy, loss) = evaluate(&global, test)?;
        let run = accumulate_run(&global.arch, &work, &energy_model);
        let width = global.arch.width as f64;
        let spike_rates = round_work
            .spikes
            .iter()
            .map(|&s| {
                (global.arch.kind.family == crate::neurons::NeuronFamily::Lif && round_work.sample_steps > 0)
                    .then(|| s / (round_work.sample_steps as f64 * width))
            })
            .collect();
        let report = RoundReport {
            round,
            accuracy,
            loss,
            client_losses: outcomes.iter().map(|(o, _)| o.loss).collect(),
            client_accuracy: outcomes.iter().map(|(_, a)| *a).collect(),
            spike_rates,
            ops: run.total,
            client_ops: run.per_client,
            energy: run.joules,
        };
        log::info!(
            "round {round}/{}: accuracy {:.4}, loss {:.4}",
            config.rounds,
            report.accuracy,
            report.loss
        );
        sink(&report)?;
        reports.push(report);
    }
    Ok(FederatedOutcome {
        model: global,
        reports,
        work,
    })
}
