//! Config-driven experiments: one federated run per seed, metrics files,
//! and cross-run comparison tables.
//!
//! A run directory contains:
//!
//! | file                   | content                                              |
//! |------------------------|------------------------------------------------------|
//! | `config.toml`          | the resolved configuration                           |
//! | `rounds.jsonl`         | one record per (seed, round); round 0 is the initial model |
//! | `summary.csv`          | final-round mean ± std across seeds                  |
//! | `accuracy_by_round.csv`| mean ± std accuracy per round                        |
//! | `accuracy_by_energy.csv` | accuracy against cumulative training energy, per seed |
//! | `timing.json`          | wall-clock seconds per seed (not deterministic)      |
//! | `FAILED`               | present only if the run aborted; holds the error     |

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{self, generate_synthetic, ProfileDesign, SyntheticSpec};
use crate::energy::ForwardOps;
use crate::error::{Error, Result};
use crate::federation::{evaluate, run_federated, ClientSpec, FederationConfig, FederationMethod, RoundReport};
use crate::metrics::MeanStd;
use crate::network::{Architecture, FrameSequence, InputScaling, ModelParams, SpikeFn};
use crate::neurons::{NeuronKind, OutputRescale, SURROGATE_HALF_WIDTH};
use crate::seed;
use crate::training::TrainConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    /// One client per resolution.
    A,
    /// `clients_per_resolution` clients per resolution.
    B,
    /// Every client at the single listed resolution.
    #[serde(rename = "homogeneous")]
    Homogeneous,
}

impl Scenario {
    pub fn name(self) -> &'static str {
        match self {
            Scenario::A => "A",
            Scenario::B => "B",
            Scenario::Homogeneous => "homogeneous",
        }
    }
}

fn one() -> usize {
    1
}

fn default_state_dim() -> usize {
    4
}

fn default_half_width() -> f64 {
    SURROGATE_HALF_WIDTH
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub width: usize,
    pub hidden_layers: usize,
    #[serde(default = "default_state_dim")]
    pub state_dim: usize,
    #[serde(default)]
    pub output_rescale: OutputRescale,
    #[serde(default)]
    pub spike_fn: SpikeFn,
    #[serde(default = "default_half_width")]
    pub surrogate_half_width: f64,
    #[serde(default)]
    pub input_scaling: InputScaling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub classes: usize,
    pub channels: usize,
    pub duration: f64,
    pub base_window: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    #[serde(default = "one")]
    pub channel_group: usize,
    #[serde(default)]
    pub profile: ProfileDesign,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            classes: 10,
            channels: 32,
            duration: 1.0,
            base_window: 0.01,
            train_per_class: 100,
            test_per_class: 40,
            channel_group: 1,
            profile: ProfileDesign::default(),
        }
    }
}

/// Pre-binned frames at resolution 1, in the format of [`data::write_frames`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FramesConfig {
    pub train_path: PathBuf,
    pub test_path: PathBuf,
    #[serde(default = "one")]
    pub channel_group: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase")]
pub enum DataConfig {
    Synthetic(SyntheticConfig),
    Frames(FramesConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub scenario: Scenario,
    pub resolutions: Vec<u32>,
    #[serde(default = "one")]
    pub clients_per_resolution: usize,
    pub central_resolution: u32,
    pub neuron: NeuronKind,
    pub method: FederationMethod,
    pub seeds: Vec<u64>,
    pub rounds: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Also evaluate each client's local model on a test set at its own resolution.
    #[serde(default)]
    pub client_diagnostics: bool,
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub data: DataConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, msg: String| Err(Error::Config(format!("{field}: {msg}")));
        if self.schema_version != SCHEMA_VERSION {
            return bad(
                "schema_version",
                format!("{} is not supported (expected {SCHEMA_VERSION})", self.schema_version),
            );
        }
        if self.seeds.is_empty() {
            return bad("seeds", "at least one seed is required".into());
        }
        if self.resolutions.is_empty() || self.resolutions.contains(&0) {
            return bad("resolutions", "must be a non-empty list of positive integers".into());
        }
        if self.central_resolution == 0 {
            return bad("central_resolution", "must be positive".into());
        }
        if self.clients_per_resolution == 0 {
            return bad("clients_per_resolution", "must be positive".into());
        }
        match self.scenario {
            Scenario::A => {
                if self.clients_per_resolution != 1 {
                    return bad(
                        "clients_per_resolution",
                        "scenario A has exactly one client per resolution".into(),
                    );
                }
                let mut r = self.resolutions.clone();
                r.sort();
                r.dedup();
                if r.len() != self.resolutions.len() {
                    return bad("resolutions", "scenario A lists each resolution once".into());
                }
            }
            Scenario::B => {}
            Scenario::Homogeneous => {
                if self.resolutions.len() != 1 {
                    return bad(
                        "resolutions",
                        "a homogeneous scenario lists exactly one resolution".into(),
                    );
                }
            }
        }
        if !self.method.rule().supports(self.neuron.variant) {
            return bad(
                "method",
                format!("{} cannot adapt {} neurons", self.method, self.neuron),
            );
        }
        if self.method.is_post() && self.resolutions.len() != 1 {
            return bad("method", format!("{} needs all clients at one resolution", self.method));
        }
        if self.model.width == 0 || self.model.hidden_layers == 0 || self.model.state_dim == 0 {
            return bad("model", "width, hidden_layers and state_dim must be positive".into());
        }
        let hw = self.model.surrogate_half_width;
        if hw.is_nan() || hw <= 0.0 {
            return bad("model.surrogate_half_width", "must be positive".into());
        }
        if self.training.epochs == 0 {
            return bad("training.epochs", "must be at least 1".into());
        }
        self.training.validate()?;
        match &self.data {
            DataConfig::Synthetic(s) => {
                if s.classes < 2 || s.channels == 0 || s.channel_group == 0 {
                    return bad("data", "need ≥ 2 classes, ≥ 1 channel and channel_group ≥ 1".into());
                }
                let k = self.resolutions.len() * self.clients_per_resolution;
                if s.train_per_class < k {
                    return bad(
                        "data.train_per_class",
                        format!("{} is fewer than the {k} clients", s.train_per_class),
                    );
                }
                if s.test_per_class == 0 {
                    return bad("data.test_per_class", "must be positive".into());
                }
            }
            DataConfig::Frames(f) => {
                if f.channel_group == 0 {
                    return bad("data.channel_group", "must be positive".into());
                }
            }
        }
        Ok(())
    }

    pub fn client_count(&self) -> usize {
        self.resolutions.len() * self.clients_per_resolution
    }
}

/// Train and test sets at resolution 1 after channel merging.
pub struct Dataset {
    pub train: Vec<FrameSequence>,
    pub test: Vec<FrameSequence>,
    pub classes: usize,
}

pub fn build_dataset(cfg: &ExperimentConfig, master: u64) -> Result<Dataset> {
    let (train, test, group) = match &cfg.data {
        DataConfig::Synthetic(s) => {
            let mut profile_rng = seed::rng(master, &[seed::PROFILE]);
            let mut spec = SyntheticSpec::banded(
                &s.profile,
                s.classes,
                s.channels,
                s.duration,
                s.base_window,
                s.train_per_class,
                &mut profile_rng,
            )?;
            let train = generate_synthetic(&spec, &mut seed::rng(master, &[seed::DATA, 0]))?;
            spec.samples_per_class = s.test_per_class;
            let test = generate_synthetic(&spec, &mut seed::rng(master, &[seed::DATA, 1]))?;
            let train = data::prepare(&train, s.base_window, 1, 1)?;
            let test = data::prepare(&test, s.base_window, 1, 1)?;
            (train, test, s.channel_group)
        }
        DataConfig::Frames(f) => (
            data::read_frames(&f.train_path, 1)?,
            data::read_frames(&f.test_path, 1)?,
            f.channel_group,
        ),
    };
    let merge = |v: Vec<FrameSequence>| -> Result<Vec<FrameSequence>> {
        v.iter().map(|s| data::channel_bin(s, group)).collect()
    };
    let (train, test) = (merge(train)?, merge(test)?);
    let classes = train.iter().chain(&test).map(|s| s.label + 1).max().unwrap_or(0);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config("data: empty train or test set".into()));
    }
    Ok(Dataset { train, test, classes })
}

fn coarsen_all(data: &[FrameSequence], factor: u32) -> Result<Vec<FrameSequence>> {
    data.iter().map(|s| data::coarsen(s, factor as usize)).collect()
}

pub fn architecture(cfg: &ExperimentConfig, inputs: usize, outputs: usize) -> Architecture {
    let mut arch = Architecture::new(cfg.neuron, inputs, cfg.model.width, cfg.model.hidden_layers, outputs)
        .with_state_dim(cfg.model.state_dim);
    arch.output_rescale = cfg.model.output_rescale;
    arch.spike_fn = cfg.model.spike_fn;
    arch.input_scaling = cfg.model.input_scaling;
    arch.surrogate_half_width = cfg.model.surrogate_half_width;
    arch
}

/// Clients, the initial model and the central test set for one seed.
pub struct SeedSetup {
    pub federation: FederationConfig,
    pub theta: ModelParams,
    pub test: Vec<FrameSequence>,
}

pub fn setup_seed(cfg: &ExperimentConfig, master: u64) -> Result<SeedSetup> {
    let data = build_dataset(cfg, master)?;
    let labels: Vec<usize> = data.train.iter().map(|s| s.label).collect();
    let k = cfg.client_count();
    let shards = data::partition_iid(&labels, k, &mut seed::rng(master, &[seed::PARTITION]))?;
    let mut clients = Vec::with_capacity(k);
    for (id, idx) in shards.into_iter().enumerate() {
        let resolution = cfg.resolutions[id / cfg.clients_per_resolution];
        let shard: Vec<FrameSequence> = idx
            .iter()
            .map(|&i| data::coarsen(&data.train[i], resolution as usize))
            .collect::<Result<_>>()?;
        let test = if cfg.client_diagnostics {
            Some(coarsen_all(&data.test, resolution)?)
        } else {
            None
        };
        clients.push(ClientSpec {
            id,
            resolution,
            shard,
            train: None,
            test,
        });
    }
    let inputs = data.train[0].channels();
    let theta = ModelParams::init(
        architecture(cfg, inputs, data.classes),
        &mut seed::rng(master, &[seed::INIT]),
    );
    Ok(SeedSetup {
        federation: FederationConfig {
            clients,
            central_resolution: cfg.central_resolution,
            method: cfg.method,
            rounds: cfg.rounds,
            seed: master,
            train: cfg.training.clone(),
        },
        theta,
        test: coarsen_all(&data.test, cfg.central_resolution)?,
    })
}

/// One line of `rounds.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub seed: u64,
    #[serde(flatten)]
    pub report: RoundReport,
}

#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed: u64,
    /// Round 0 (initial model) followed by every trained round.
    pub records: Vec<RoundRecord>,
    pub final_model: ModelParams,
    pub seconds: f64,
}

impl SeedResult {
    pub fn last(&self) -> &RoundReport {
        &self.records.last().expect("round 0 is always present").report
    }
}

pub fn run_seed(cfg: &ExperimentConfig, master: u64) -> Result<SeedResult> {
    let start = Instant::now();
    let setup = setup_seed(cfg, master)?;
    let (accuracy, loss) = evaluate(&setup.theta, &setup.test)?;
    let k = setup.federation.clients.len();
    let mut records = vec![RoundRecord {
        seed: master,
        report: RoundReport {
            round: 0,
            accuracy,
            loss,
            client_losses: vec![],
            client_accuracy: vec![],
            spike_rates: vec![],
            ops: ForwardOps::default(),
            client_ops: vec![ForwardOps::default(); k],
            energy: 0.0,
        },
    }];
    let outcome = run_federated(&setup.federation, &setup.theta, &setup.test, &mut |r| {
        records.push(RoundRecord {
            seed: master,
            report: r.clone(),
        });
        Ok(())
    })?;
    Ok(SeedResult {
        seed: master,
        records,
        final_model: outcome.model,
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// One row of `summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub name: String,
    pub scenario: Scenario,
    pub central_resolution: u32,
    pub neuron: NeuronKind,
    pub method: FederationMethod,
    pub resolutions: String,
    pub clients: usize,
    pub rounds: usize,
    pub seeds: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub loss_mean: f64,
    pub loss_std: f64,
    pub energy_mean: f64,
    pub energy_std: f64,
    pub multiplies_mean: f64,
    pub adds_mean: f64,
}

pub fn summarize(cfg: &ExperimentConfig, results: &[SeedResult]) -> SummaryRow {
    let pick = |f: &dyn Fn(&RoundReport) -> f64| MeanStd::of(&results.iter().map(|r| f(r.last())).collect::<Vec<_>>());
    let acc = pick(&|r| r.accuracy);
    let loss = pick(&|r| r.loss);
    let energy = pick(&|r| r.energy);
    SummaryRow {
        name: cfg.name.clone(),
        scenario: cfg.scenario,
        central_resolution: cfg.central_resolution,
        neuron: cfg.neuron,
        method: cfg.method,
        resolutions: cfg.resolutions.iter().map(u32::to_string).collect::<Vec<_>>().join(";"),
        clients: cfg.client_count(),
        rounds: cfg.rounds,
        seeds: results.len(),
        accuracy_mean: acc.mean,
        accuracy_std: acc.std,
        loss_mean: loss.mean,
        loss_std: loss.std,
        energy_mean: energy.mean,
        energy_std: energy.std,
        multiplies_mean: pick(&|r| r.ops.total().multiplies as f64).mean,
        adds_mean: pick(&|r| r.ops.total().adds as f64).mean,
    }
}

pub struct ExperimentOutcome {
    pub summary: SummaryRow,
    pub seeds: Vec<SeedResult>,
    pub dir: PathBuf,
}

fn write_records(dir: &Path, results: &[SeedResult]) -> Result<()> {
    let mut out = fs::File::create(dir.join("rounds.jsonl"))?;
    for r in results {
        for rec in &r.records {
            let line = serde_json::to_string(rec).map_err(|e| Error::Serde(e.to_string()))?;
            writeln!(out, "{line}")?;
        }
    }
    Ok(())
}

fn write_series(dir: &Path, results: &[SeedResult]) -> Result<()> {
    let mut by_round: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in results {
        for rec in &r.records {
            by_round.entry(rec.report.round).or_default().push(rec.report.accuracy);
        }
    }
    let mut w = csv::Writer::from_path(dir.join("accuracy_by_round.csv")).map_err(csv_err)?;
    w.write_record(["round", "accuracy_mean", "accuracy_std", "n"])
        .map_err(csv_err)?;
    for (round, accs) in by_round {
        let m = MeanStd::of(&accs);
        w.write_record([
            round.to_string(),
            m.mean.to_string(),
            m.std.to_string(),
            m.n.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;

    let mut w = csv::Writer::from_path(dir.join("accuracy_by_energy.csv")).map_err(csv_err)?;
    w.write_record(["seed", "round", "energy_joules", "accuracy"])
        .map_err(csv_err)?;
    for r in results {
        for rec in &r.records {
            w.write_record([
                r.seed.to_string(),
                rec.report.round.to_string(),
                rec.report.energy.to_string(),
                rec.report.accuracy.to_string(),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Serde(e.to_string())
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

/// Run every seed and write the run directory. Seeds run concurrently on
/// the current rayon pool; files are written in seed order.
///
/// On failure the records of the seeds that finished are kept, `FAILED`
/// holds the error, and the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    fs::create_dir_all(dir)?;
    let _ = fs::remove_file(dir.join("FAILED"));
    fs::write(dir.join("config.toml"), cfg.to_toml()?)?;

    let results: Vec<Result<SeedResult>> = cfg.seeds.par_iter().map(|&s| run_seed(cfg, s)).collect();
    let mut ok = Vec::with_capacity(results.len());
    let mut failure = None;
    for (s, r) in cfg.seeds.iter().zip(results) {
        match r {
            Ok(v) => ok.push(v),
            Err(e) if failure.is_none() => failure = Some((*s, e)),
            Err(e) => log::error!("seed {s}: {e}"),
        }
    }
    write_records(dir, &ok)?;
    let mut timing = BTreeMap::new();
    for r in &ok {
        timing.insert(r.seed.to_string(), r.seconds);
    }
    fs::write(
        dir.join("timing.json"),
        serde_json::to_string_pretty(&timing).map_err(|e| Error::Serde(e.to_string()))?,
    )?;
    if let Some((s, e)) = failure {
        fs::write(dir.join("FAILED"), format!("seed {s}: {e}\n"))?;
        return Err(e);
    }
    write_series(dir, &ok)?;
    let summary = summarize(cfg, &ok);
    write_summary(&dir.join("summary.csv"), std::slice::from_ref(&summary))?;
    Ok(ExperimentOutcome {
        summary,
        seeds: ok,
        dir: dir.to_path_buf(),
    })
}

/// Merge the summaries of several run directories into a markdown table:
/// one row per (scenario, T_c, neuron), one column per method, accuracy as
/// `mean ± std` in percent. The best mean of each row is bold, ties included.
pub fn compare(dirs: &[PathBuf]) -> Result<String> {
    if dirs.is_empty() {
        return Err(Error::InvalidArgument("no run directories given".into()));
    }
    type Key = (Scenario, u32, String);
    let mut table: BTreeMap<Key, BTreeMap<usize, (f64, f64)>> = BTreeMap::new();
    let mut methods = [false; FederationMethod::ALL.len()];
    for dir in dirs {
        let path = dir.join("summary.csv");
        if !path.is_file() {
            return Err(Error::InvalidArgument(format!("{}: no summary.csv", dir.display())));
        }
        for row in read_summary(&path)? {
            let m = FederationMethod::ALL
                .iter()
                .position(|&x| x == row.method)
                .expect("known method");
            methods[m] = true;
            let key = (row.scenario, row.central_resolution, row.neuron.to_string());
            if table
                .entry(key)
                .or_default()
                .insert(m, (row.accuracy_mean, row.accuracy_std))
                .is_some()
            {
                return Err(Error::InvalidArgument(format!(
                    "{}: duplicate entry for {} / T_c={} / {} / {}",
                    dir.display(),
                    row.scenario.name(),
                    row.central_resolution,
                    row.neuron,
                    row.method
                )));
            }
        }
    }
    let cols: Vec<usize> = (0..methods.len()).filter(|&i| methods[i]).collect();
    let mut out = String::from("| scenario | T_c | neuron |");
    for &c in &cols {
        write!(out, " {} |", FederationMethod::ALL[c]).expect("string write");
    }
    out.push_str("\n|---|---|---|");
    out.push_str(&"---|".repeat(cols.len()));
    out.push('\n');
    for ((scenario, tc, neuron), cells) in &table {
        let best = cells.values().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
        write!(out, "| {} | {tc} | {neuron} |", scenario.name()).expect("string write");
        for c in &cols {
            match cells.get(c) {
                Some(&(mean, std)) => {
                    let cell = format!("{:.2} ± {:.2}", 100.0 * mean, 100.0 * std);
                    if mean == best {
                        write!(out, " **{cell}** |").expect("string write");
                    } else {
                        write!(out, " {cell} |").expect("string write");
                    }
                }
                None => out.push_str(" – |"),
            }
        }
        out.push('\n');
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(method: FederationMethod, neuron: NeuronKind) -> ExperimentConfig {
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            name: "tiny".into(),
            scenario: Scenario::A,
            resolutions: vec![1, 2],
            clients_per_resolution: 1,
            central_resolution: 1,
            neuron,
            method,
            seeds: vec![1, 2],
            rounds: 1,
            output_dir: None,
            client_diagnostics: false,
            model: ModelConfig {
                width: 4,
                hidden_layers: 1,
                state_dim: 2,
                output_rescale: OutputRescale::Zoh,
                spike_fn: SpikeFn::Heaviside,
                surrogate_half_width: 0.5,
                input_scaling: InputScaling::Rate,
            },
            training: TrainConfig {
                epochs: 1,
                batch_size: 8,
                ..TrainConfig::default()
            },
            data: DataConfig::Synthetic(SyntheticConfig {
                classes: 3,
                channels: 8,
                duration: 0.2,
                base_window: 0.01,
                train_per_class: 6,
                test_per_class: 2,
                channel_group: 1,
                profile: ProfileDesign {
                    segments: 4,
                    band_width: 2,
                    ..ProfileDesign::default()
                },
            }),
        }
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = tiny(FederationMethod::FedTaInt, NeuronKind::STANDARD_SSM);
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn invalid_fields_are_named() {
        let mut cfg = tiny(FederationMethod::FedTaDelta, NeuronKind::STANDARD_SSM);
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("method"), "{msg}");
        cfg.method = FederationMethod::FedAvg;
        cfg.seeds.clear();
        assert!(cfg.validate().unwrap_err().to_string().contains("seeds"));
        let text = tiny(FederationMethod::FedAvg, NeuronKind::STANDARD_SSM)
            .to_toml()
            .unwrap()
            .replace("rounds = 1", "rounds = \"x\"");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(Error::Config(_))));
    }

    #[test]
    fn zero_rounds_reports_initial_model() {
        let mut cfg = tiny(FederationMethod::FedAvg, NeuronKind::STANDARD_LIF);
        cfg.rounds = 0;
        cfg.seeds = vec![4];
        let r = run_seed(&cfg, 4).unwrap();
        assert_eq!(r.records.len(), 1);
        assert_eq!(r.records[0].report.round, 0);
    }

    #[test]
    fn compare_marks_ties() {
        let dir = tempfile::tempdir().unwrap();
        let base = summarize(&tiny(FederationMethod::FedAvg, NeuronKind::STANDARD_SSM), &[]);
        let rows = [
            (FederationMethod::FedAvg, 0.5),
            (FederationMethod::FedTaInt, 0.7),
            (FederationMethod::FedTaEul, 0.7),
        ];
        let mut dirs = vec![];
        for (i, (m, acc)) in rows.into_iter().enumerate() {
            let d = dir.path().join(i.to_string());
            fs::create_dir_all(&d).unwrap();
            let row = SummaryRow {
                method: m,
                accuracy_mean: acc,
                accuracy_std: 0.01,
                ..base.clone()
            };
            write_summary(&d.join("summary.csv"), &[row]).unwrap();
            dirs.push(d);
        }
        let table = compare(&dirs).unwrap();
        assert_eq!(table.lines().count(), 3);
        assert!(table.contains(" 50.00 ± 1.00 |"));
        assert_eq!(table.matches("**70.00 ± 1.00**").count(), 2);
        assert!(compare(&[dir.path().join("missing")]).is_err());
    }
}
