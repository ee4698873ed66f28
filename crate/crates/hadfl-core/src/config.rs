//! Experiment configuration: a flat, human-readable `key = value` format
//! with section headers and comma-separated arrays.
//!
//! Parsing and emission round-trip exactly, and the canonical emitted text
//! is hashed into the config digest carried by checkpoints.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use sha2::{Digest, Sha256};

use crate::coordinator::VersionSource;
use crate::error::{Error, Result};
use crate::model::{HyperParams, LossKind, ModelKind, ModelSpec, PartitionScheme, SynthTask};
use crate::rat::{from_seconds_f64, rat_int, Rat};
use crate::schedule::ScheduleParams;
use crate::select::SigmaMode;
use crate::simnet::{FailureEvent, FailureScript, LatencyModel};
use crate::DeviceId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Hadfl,
    DFedAvg,
    SyncAllReduce,
}

impl Scheme {
    pub fn label(self) -> &'static str {
        match self {
            Scheme::Hadfl => "hadfl",
            Scheme::DFedAvg => "dfedavg",
            Scheme::SyncAllReduce => "sync-allreduce",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hadfl" => Ok(Scheme::Hadfl),
            "dfedavg" => Ok(Scheme::DFedAvg),
            "sync-allreduce" => Ok(Scheme::SyncAllReduce),
            other => Err(Error::config("scheme", format!("unknown scheme `{other}`"))),
        }
    }
}

/// Everything one experiment run needs. Field names match the file keys.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // [experiment]
    pub scheme: Scheme,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,

    // [model]
    pub model_kind: ModelKind,
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub output_dim: usize,
    pub loss: LossKind,

    // [data]
    pub task: String,
    pub n_train: usize,
    pub n_test: usize,
    pub margin: f64,
    pub radius: f64,
    pub noise_std: f64,
    pub partition: PartitionScheme,
    pub data_seed: u64,

    // [cluster]
    pub powers: Vec<u32>,
    pub unit_epoch_time: f64,
    pub compute_noise: f64,

    // [training]
    pub learning_rate: f64,
    pub warmup_lr: f64,
    pub batch_size: usize,
    pub e_warmup: u32,
    pub t_total: u64,

    // [protocol]
    pub t_sync: u32,
    pub n_p: usize,
    pub alpha: f64,
    pub sigma_mode: SigmaMode,
    pub beta: f64,
    pub versions_from: VersionSource,
    pub time_quantum: f64,
    pub hyperperiod_cap: u32,
    pub group_max_size: usize,
    pub inter_sync_multiple: u32,
    pub force_select: Vec<DeviceId>,
    pub baseline_local_epochs: u32,

    // [simnet]
    pub latency_base: f64,
    pub latency_jitter: f64,
    pub latency_per_byte: f64,
    pub wait_timeout_factor: f64,
    pub heartbeat_interval: f64,
    pub liveness_timeout: f64,
    pub backup_every: u64,

    // [failures]
    pub failure_events: Vec<(DeviceId, f64, Option<f64>)>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            scheme: Scheme::Hadfl,
            seeds: vec![1],
            out_dir: PathBuf::from("runs/out"),
            model_kind: ModelKind::LogisticRegression,
            input_dim: 20,
            hidden_dim: 0,
            output_dim: 1,
            loss: LossKind::CrossEntropy,
            task: "blobs-2class".into(),
            n_train: 20_000,
            n_test: 4_000,
            margin: 0.2,
            radius: 3.0,
            noise_std: 0.1,
            partition: PartitionScheme::Iid,
            data_seed: 7,
            powers: vec![4, 2, 2, 1],
            unit_epoch_time: 1.0,
            compute_noise: 0.0,
            learning_rate: 0.05,
            warmup_lr: 0.01,
            batch_size: 64,
            e_warmup: 2,
            t_total: 400,
            t_sync: 1,
            n_p: 2,
            alpha: 0.5,
            sigma_mode: SigmaMode::Iqr,
            beta: 1.0,
            versions_from: VersionSource::Predicted,
            time_quantum: 0.01,
            hyperperiod_cap: 64,
            group_max_size: 0,
            inter_sync_multiple: 2,
            force_select: Vec::new(),
            baseline_local_epochs: 1,
            latency_base: 0.001,
            latency_jitter: 0.0,
            latency_per_byte: 0.0,
            wait_timeout_factor: 5.0,
            heartbeat_interval: 1.0,
            liveness_timeout: 2.5,
            backup_every: 1,
            failure_events: Vec::new(),
        }
    }
}

impl ExperimentConfig {
    pub fn device_count(&self) -> usize {
        self.powers.len()
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            kind: self.model_kind,
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            output_dim: self.output_dim,
            loss: self.loss,
        }
    }

    pub fn synth_task(&self) -> Result<SynthTask> {
        match self.task.as_str() {
            "blobs-2class" => Ok(SynthTask::Blobs2Class {
                margin: self.margin,
                radius: self.radius,
            }),
            "linreg-gaussian" => Ok(SynthTask::LinregGaussian {
                noise_std: self.noise_std,
            }),
            other => Err(Error::config("task", format!("unknown task `{other}`"))),
        }
    }

    pub fn hyper_params(&self) -> HyperParams {
        HyperParams {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            warmup_lr: self.warmup_lr,
        }
    }

    pub fn latency_model(&self) -> LatencyModel {
        LatencyModel {
            base: from_seconds_f64(self.latency_base),
            jitter: from_seconds_f64(self.latency_jitter),
            per_byte: from_seconds_f64(self.latency_per_byte),
        }
    }

    pub fn schedule_params(&self) -> ScheduleParams {
        ScheduleParams {
            e_warmup: self.e_warmup,
            t_sync: self.t_sync,
            time_quantum: from_seconds_f64(self.time_quantum).max(Rat::new(1, 1_000_000)),
            hyperperiod_cap_factor: self.hyperperiod_cap,
        }
    }

    /// True per-epoch compute time of one device: unit epoch time divided
    /// by its power.
    pub fn epoch_time(&self, device: DeviceId) -> Rat {
        from_seconds_f64(self.unit_epoch_time) / rat_int(i128::from(self.powers[device as usize]))
    }

    pub fn failure_script(&self) -> Result<FailureScript> {
        let events = self
            .failure_events
            .iter()
            .map(|&(device, disc, rec)| FailureEvent {
                device,
                disconnect_at: from_seconds_f64(disc),
                reconnect_at: rec.map(from_seconds_f64),
            })
            .collect();
        FailureScript::new(events)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.device_count();
        if k < 2 {
            return Err(Error::config("powers", "need at least 2 devices"));
        }
        if self.powers.iter().any(|&p| p == 0) {
            return Err(Error::config("powers", "powers must be positive"));
        }
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "need at least one seed"));
        }
        self.model_spec()
            .validate()
            .map_err(|e| Error::config("model", e.to_string()))?;
        self.hyper_params()
            .validate()
            .map_err(|e| Error::config("training", e.to_string()))?;
        self.synth_task()?;
        if self.n_train < k * self.batch_size {
            return Err(Error::config(
                "n_train",
                format!("need at least K*batch_size = {} samples", k * self.batch_size),
            ));
        }
        if self.n_test == 0 {
            return Err(Error::config("n_test", "need a test set"));
        }
        if self.n_p < 2 || self.n_p > k {
            return Err(Error::config("n_p", format!("must lie in [2, {k}]")));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::config("alpha", "must lie strictly in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::config("beta", "must lie in [0, 1]"));
        }
        if self.t_sync == 0 {
            return Err(Error::config("t_sync", "must be at least 1"));
        }
        if self.e_warmup == 0 {
            return Err(Error::config("e_warmup", "must be at least 1"));
        }
        if self.unit_epoch_time <= 0.0 {
            return Err(Error::config("unit_epoch_time", "must be positive"));
        }
        if self.time_quantum <= 0.0 {
            return Err(Error::config("time_quantum", "must be positive"));
        }
        if !self.force_select.is_empty() {
            if self.force_select.len() < 2 {
                return Err(Error::config("force_select", "need at least 2 devices"));
            }
            for &d in &self.force_select {
                if d as usize >= k {
                    return Err(Error::config(
                        "force_select",
                        format!("device {d} out of range"),
                    ));
                }
            }
        }
        for &(d, _, _) in &self.failure_events {
            if d as usize >= k {
                return Err(Error::config("failures", format!("device {d} out of range")));
            }
        }
        self.failure_script()
            .map_err(|e| Error::config("failures", e.to_string()))?;
        if self.group_max_size == 1 {
            return Err(Error::config("group_max_size", "must be 0 (off) or >= 2"));
        }
        if self.inter_sync_multiple == 0 {
            return Err(Error::config("inter_sync_multiple", "must be at least 1"));
        }
        if self.baseline_local_epochs == 0 {
            return Err(Error::config("baseline_local_epochs", "must be at least 1"));
        }
        if self.heartbeat_interval <= 0.0 || self.liveness_timeout <= 0.0 {
            return Err(Error::config("liveness", "intervals must be positive"));
        }
        Ok(())
    }

    /// Canonical text form; `parse` of the result reproduces the config.
    pub fn emit(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[experiment]");
        let _ = writeln!(s, "scheme = {}", self.scheme.label());
        let _ = writeln!(s, "seeds = {}", join(&self.seeds));
        let _ = writeln!(s, "out_dir = {}", self.out_dir.display());
        let _ = writeln!(s, "\n[model]");
        let _ = writeln!(s, "kind = {}", model_kind_label(self.model_kind));
        let _ = writeln!(s, "input_dim = {}", self.input_dim);
        let _ = writeln!(s, "hidden_dim = {}", self.hidden_dim);
        let _ = writeln!(s, "output_dim = {}", self.output_dim);
        let _ = writeln!(s, "loss = {}", loss_label(self.loss));
        let _ = writeln!(s, "\n[data]");
        let _ = writeln!(s, "task = {}", self.task);
        let _ = writeln!(s, "n_train = {}", self.n_train);
        let _ = writeln!(s, "n_test = {}", self.n_test);
        let _ = writeln!(s, "margin = {}", self.margin);
        let _ = writeln!(s, "radius = {}", self.radius);
        let _ = writeln!(s, "noise_std = {}", self.noise_std);
        let _ = writeln!(s, "partition = {}", partition_label(self.partition));
        let _ = writeln!(s, "data_seed = {}", self.data_seed);
        let _ = writeln!(s, "\n[cluster]");
        let _ = writeln!(s, "powers = {}", join(&self.powers));
        let _ = writeln!(s, "unit_epoch_time = {}", self.unit_epoch_time);
        let _ = writeln!(s, "compute_noise = {}", self.compute_noise);
        let _ = writeln!(s, "\n[training]");
        let _ = writeln!(s, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(s, "warmup_lr = {}", self.warmup_lr);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "e_warmup = {}", self.e_warmup);
        let _ = writeln!(s, "t_total = {}", self.t_total);
        let _ = writeln!(s, "\n[protocol]");
        let _ = writeln!(s, "t_sync = {}", self.t_sync);
        let _ = writeln!(s, "n_p = {}", self.n_p);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "sigma_mode = {}", sigma_label(self.sigma_mode));
        let _ = writeln!(s, "beta = {}", self.beta);
        let _ = writeln!(s, "versions_from = {}", versions_label(self.versions_from));
        let _ = writeln!(s, "time_quantum = {}", self.time_quantum);
        let _ = writeln!(s, "hyperperiod_cap = {}", self.hyperperiod_cap);
        let _ = writeln!(s, "group_max_size = {}", self.group_max_size);
        let _ = writeln!(s, "inter_sync_multiple = {}", self.inter_sync_multiple);
        let _ = writeln!(s, "force_select = {}", join(&self.force_select));
        let _ = writeln!(s, "baseline_local_epochs = {}", self.baseline_local_epochs);
        let _ = writeln!(s, "\n[simnet]");
        let _ = writeln!(s, "latency_base = {}", self.latency_base);
        let _ = writeln!(s, "latency_jitter = {}", self.latency_jitter);
        let _ = writeln!(s, "latency_per_byte = {}", self.latency_per_byte);
        let _ = writeln!(s, "wait_timeout_factor = {}", self.wait_timeout_factor);
        let _ = writeln!(s, "heartbeat_interval = {}", self.heartbeat_interval);
        let _ = writeln!(s, "liveness_timeout = {}", self.liveness_timeout);
        let _ = writeln!(s, "backup_every = {}", self.backup_every);
        let _ = writeln!(s, "\n[failures]");
        let events: Vec<String> = self
            .failure_events
            .iter()
            .map(|(d, t, r)| match r {
                Some(r) => format!("{d}:{t}:{r}"),
                None => format!("{d}:{t}"),
            })
            .collect();
        let _ = writeln!(s, "events = {}", events.join(","));
        s
    }

    /// First 8 bytes of the SHA-256 of the canonical text.
    pub fn digest(&self) -> [u8; 8] {
        let hash = Sha256::digest(self.emit().as_bytes());
        let mut out = [0u8; 8];
        out.copy_from_slice(&hash[..8]);
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        let mut section = String::new();
        let mut seen: BTreeMap<String, ()> = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                section = line[1..line.len() - 1].trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(
                    format!("line {}", lineno + 1),
                    format!("expected `key = value`, got `{line}`"),
                )
            })?;
            let key = key.trim();
            let value = value.trim();
            let field = if section.is_empty() {
                key.to_string()
            } else {
                format!("{section}.{key}")
            };
            if seen.insert(field.clone(), ()).is_some() {
                return Err(Error::config(field, "duplicate key"));
            }
            apply_field(&mut cfg, &section, key, value)?;
        }
        Ok(cfg)
    }
}

fn apply_field(cfg: &mut ExperimentConfig, section: &str, key: &str, value: &str) -> Result<()> {
    let field = || format!("{section}.{key}");
    match (section, key) {
        ("experiment", "scheme") => cfg.scheme = Scheme::parse(value)?,
        ("experiment", "seeds") => cfg.seeds = parse_list(value, &field())?,
        ("experiment", "out_dir") => cfg.out_dir = PathBuf::from(value),
        ("model", "kind") => {
            cfg.model_kind = match value {
                "linear-regression" => ModelKind::LinearRegression,
                "logistic-regression" => ModelKind::LogisticRegression,
                "mlp-1hidden" => ModelKind::Mlp1Hidden,
                _ => {
                    return Err(Error::config(
                        field(),
                        format!("unknown model kind `{value}`"),
                    ))
                }
            }
        }
        ("model", "input_dim") => cfg.input_dim = parse_num(value, &field())?,
        ("model", "hidden_dim") => cfg.hidden_dim = parse_num(value, &field())?,
        ("model", "output_dim") => cfg.output_dim = parse_num(value, &field())?,
        ("model", "loss") => {
            cfg.loss = match value {
                "squared-error" => LossKind::SquaredError,
                "cross-entropy" => LossKind::CrossEntropy,
                _ => return Err(Error::config(field(), format!("unknown loss `{value}`"))),
            }
        }
        ("data", "task") => cfg.task = value.to_string(),
        ("data", "n_train") => cfg.n_train = parse_num(value, &field())?,
        ("data", "n_test") => cfg.n_test = parse_num(value, &field())?,
        ("data", "margin") => cfg.margin = parse_num(value, &field())?,
        ("data", "radius") => cfg.radius = parse_num(value, &field())?,
        ("data", "noise_std") => cfg.noise_std = parse_num(value, &field())?,
        ("data", "partition") => {
            cfg.partition = match value {
                "iid" => PartitionScheme::Iid,
                "shard-by-label" => PartitionScheme::ShardByLabel,
                _ => {
                    return Err(Error::config(
                        field(),
                        format!("unknown partition `{value}`"),
                    ))
                }
            }
        }
        ("data", "data_seed") => cfg.data_seed = parse_num(value, &field())?,
        ("cluster", "powers") => cfg.powers = parse_list(value, &field())?,
        ("cluster", "unit_epoch_time") => cfg.unit_epoch_time = parse_num(value, &field())?,
        ("cluster", "compute_noise") => cfg.compute_noise = parse_num(value, &field())?,
        ("training", "learning_rate") => cfg.learning_rate = parse_num(value, &field())?,
        ("training", "warmup_lr") => cfg.warmup_lr = parse_num(value, &field())?,
        ("training", "batch_size") => cfg.batch_size = parse_num(value, &field())?,
        ("training", "e_warmup") => cfg.e_warmup = parse_num(value, &field())?,
        ("training", "t_total") => cfg.t_total = parse_num(value, &field())?,
        ("protocol", "t_sync") => cfg.t_sync = parse_num(value, &field())?,
        ("protocol", "n_p") => cfg.n_p = parse_num(value, &field())?,
        ("protocol", "alpha") => cfg.alpha = parse_num(value, &field())?,
        ("protocol", "sigma_mode") => {
            cfg.sigma_mode = match value {
                "iqr" => SigmaMode::Iqr,
                "unit" => SigmaMode::Unit,
                _ => {
                    return Err(Error::config(
                        field(),
                        format!("unknown sigma mode `{value}`"),
                    ))
                }
            }
        }
        ("protocol", "beta") => cfg.beta = parse_num(value, &field())?,
        ("protocol", "versions_from") => {
            cfg.versions_from = match value {
                "predicted" => VersionSource::Predicted,
                "observed" => VersionSource::Observed,
                _ => return Err(Error::config(field(), format!("unknown source `{value}`"))),
            }
        }
        ("protocol", "time_quantum") => cfg.time_quantum = parse_num(value, &field())?,
        ("protocol", "hyperperiod_cap") => cfg.hyperperiod_cap = parse_num(value, &field())?,
        ("protocol", "group_max_size") => cfg.group_max_size = parse_num(value, &field())?,
        ("protocol", "inter_sync_multiple") => {
            cfg.inter_sync_multiple = parse_num(value, &field())?
        }
        ("protocol", "force_select") => cfg.force_select = parse_list(value, &field())?,
        ("protocol", "baseline_local_epochs") => {
            cfg.baseline_local_epochs = parse_num(value, &field())?
        }
        ("simnet", "latency_base") => cfg.latency_base = parse_num(value, &field())?,
        ("simnet", "latency_jitter") => cfg.latency_jitter = parse_num(value, &field())?,
        ("simnet", "latency_per_byte") => cfg.latency_per_byte = parse_num(value, &field())?,
        ("simnet", "wait_timeout_factor") => {
            cfg.wait_timeout_factor = parse_num(value, &field())?
        }
        ("simnet", "heartbeat_interval") => cfg.heartbeat_interval = parse_num(value, &field())?,
        ("simnet", "liveness_timeout") => cfg.liveness_timeout = parse_num(value, &field())?,
        ("simnet", "backup_every") => cfg.backup_every = parse_num(value, &field())?,
        ("failures", "events") => {
            cfg.failure_events = Vec::new();
            for part in value.split(',').map(str::trim).filter(|p| !p.is_empty()) {
                let bits: Vec<&str> = part.split(':').collect();
                if bits.len() < 2 || bits.len() > 3 {
                    return Err(Error::config(
                        field(),
                        format!("expected `device:t_disconnect[:t_reconnect]`, got `{part}`"),
                    ));
                }
                let device: DeviceId = parse_num(bits[0], &field())?;
                let disc: f64 = parse_num(bits[1], &field())?;
                let rec: Option<f64> = match bits.get(2) {
                    Some(r) => Some(parse_num(r, &field())?),
                    None => None,
                };
                cfg.failure_events.push((device, disc, rec));
            }
        }
        _ => {
            return Err(Error::config(
                field(),
                "unknown configuration key".to_string(),
            ))
        }
    }
    Ok(())
}

fn parse_num<T: std::str::FromStr>(value: &str, field: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(field, format!("cannot parse `{value}`")))
}

fn parse_list<T: std::str::FromStr>(value: &str, field: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| parse_num(p, field))
        .collect()
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn model_kind_label(k: ModelKind) -> &'static str {
    match k {
        ModelKind::LinearRegression => "linear-regression",
        ModelKind::LogisticRegression => "logistic-regression",
        ModelKind::Mlp1Hidden => "mlp-1hidden",
    }
}

fn loss_label(l: LossKind) -> &'static str {
    match l {
        LossKind::SquaredError => "squared-error",
        LossKind::CrossEntropy => "cross-entropy",
    }
}

fn partition_label(p: PartitionScheme) -> &'static str {
    match p {
        PartitionScheme::Iid => "iid",
        PartitionScheme::ShardByLabel => "shard-by-label",
    }
}

fn sigma_label(m: SigmaMode) -> &'static str {
    match m {
        SigmaMode::Iqr => "iqr",
        SigmaMode::Unit => "unit",
    }
}

fn versions_label(v: VersionSource) -> &'static str {
    match v {
        VersionSource::Predicted => "predicted",
        VersionSource::Observed => "observed",
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        ExperimentConfig::default().validate().unwrap();
    }

    #[test]
    fn emit_parse_roundtrip() {
        let mut cfg = ExperimentConfig::default();
        cfg.scheme = Scheme::DFedAvg;
        cfg.seeds = vec![3, 5, 8];
        cfg.powers = vec![3, 3, 1, 1];
        cfg.failure_events = vec![(2, 3.5, None), (0, 1.25, Some(7.0))];
        cfg.force_select = vec![2, 3];
        cfg.model_kind = ModelKind::Mlp1Hidden;
        cfg.hidden_dim = 8;
        cfg.output_dim = 2;
        let text = cfg.emit();
        let back = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(back, cfg);
        // canonical text is stable
        assert_eq!(back.emit(), text);
    }

    #[test]
    fn unknown_key_names_the_field() {
        let err = ExperimentConfig::parse("[training]\nlearning_rte = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("training.learning_rte"), "{msg}");
    }

    #[test]
    fn unknown_scheme_is_config_error() {
        let err = ExperimentConfig::parse("[experiment]\nscheme = sgd\n").unwrap_err();
        assert!(matches!(err, Error::Config { .. }));
    }

    #[test]
    fn duplicate_key_rejected() {
        let text = "[training]\nbatch_size = 4\nbatch_size = 8\n";
        assert!(ExperimentConfig::parse(text).is_err());
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let text = "# top comment\n[cluster]\npowers = 2,1 # trailing\n\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.powers, vec![2, 1]);
    }

    #[test]
    fn validation_catches_bad_fields() {
        let mut cfg = ExperimentConfig::default();
        cfg.n_p = 1;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.alpha = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.powers = vec![4];
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.warmup_lr = 1.0; // above learning_rate
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn digest_changes_with_content() {
        let a = ExperimentConfig::default();
        let mut b = ExperimentConfig::default();
        b.t_sync = 2;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), ExperimentConfig::default().digest());
    }
}
