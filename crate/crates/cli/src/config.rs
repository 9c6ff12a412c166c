//! Flat `key=value` run configuration merged from a file and `--set` overrides.

use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use cavt_core::bors::{OrderMode, SamplingParams};
use cavt_core::model::{CavtConfig, CONFIG_KEYS};
use cavt_core::training::{ClassWeights, Sampler, TrainConfig};

use crate::CliError;

/// Keys owned by the run itself rather than the model.
pub const RUN_KEYS: [&str; 17] = [
    "gamma",
    "alpha",
    "sampling_times",
    "order_mode",
    "learning_rate",
    "epochs",
    "batch_size",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "drop_rate",
    "class_weights",
    "seed",
    "max_steps",
    "synth_count",
    "synth_frames",
    "grad_step",
];

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub model: CavtConfig,
    pub gamma: usize,
    pub alpha: usize,
    pub sampling_times: usize,
    pub sampler: Sampler,
    pub train: TrainConfig,
    pub synth_count: usize,
    /// Frames per synthetic video; the sampling minimum when unset.
    pub synth_frames: Option<usize>,
    /// Finite-difference step for `gradcheck`.
    pub grad_step: f64,
    /// Model keys given explicitly, in a file or on the command line.
    pub model_keys_set: BTreeSet<String>,
}

impl RunConfig {
    pub fn new(model: CavtConfig) -> Self {
        Self {
            model,
            gamma: 5,
            alpha: 3,
            sampling_times: 4,
            sampler: Sampler::default(),
            train: TrainConfig::default(),
            synth_count: 16,
            synth_frames: None,
            grad_step: 1e-4,
            model_keys_set: BTreeSet::new(),
        }
    }

    pub fn sampling(&self) -> SamplingParams {
        SamplingParams {
            gamma: self.gamma,
            windows: self.model.frames,
            alpha: self.alpha,
            r: self.sampling_times,
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.trim();
        let value = value.trim();
        let bad = || CliError::Usage(format!("invalid value {value:?} for {key}"));
        fn num<T: FromStr>(value: &str, bad: impl Fn() -> CliError) -> Result<T, CliError> {
            value.parse().map_err(|_| bad())
        }
        if CONFIG_KEYS.contains(&key) {
            self.model
                .set(key, value)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            self.model_keys_set.insert(key.to_string());
            return Ok(());
        }
        match key {
            "gamma" => self.gamma = num(value, bad)?,
            "alpha" => self.alpha = num(value, bad)?,
            "sampling_times" => self.sampling_times = num(value, bad)?,
            "order_mode" => self.sampler = parse_sampler(value)?,
            "learning_rate" => self.train.learning_rate = num(value, bad)?,
            "epochs" => self.train.epochs = num(value, bad)?,
            "batch_size" => self.train.batch_size = num(value, bad)?,
            "adam_beta1" => self.train.adam_beta1 = num(value, bad)?,
            "adam_beta2" => self.train.adam_beta2 = num(value, bad)?,
            "adam_eps" => self.train.adam_eps = num(value, bad)?,
            "drop_rate" => self.train.drop_rate = num(value, bad)?,
            "class_weights" => {
                self.train.class_weights = if value.is_empty() {
                    None
                } else {
                    Some(
                        value
                            .parse::<ClassWeights>()
                            .map_err(|e| CliError::Usage(e.to_string()))?,
                    )
                }
            }
            "seed" => self.train.seed = num(value, bad)?,
            "max_steps" => {
                self.train.max_steps = if value.is_empty() {
                    None
                } else {
                    Some(num(value, bad)?)
                }
            }
            "synth_count" => self.synth_count = num(value, bad)?,
            "synth_frames" => self.synth_frames = Some(num(value, bad)?),
            "grad_step" => self.grad_step = num(value, bad)?,
            _ => {
                let known: Vec<&str> = CONFIG_KEYS.iter().chain(&RUN_KEYS).copied().collect();
                return Err(CliError::Usage(format!(
                    "unknown config key {key:?}; known keys: {}",
                    known.join(", ")
                )));
            }
        }
        Ok(())
    }

    /// Applies one `key=value` assignment.
    pub fn assign(&mut self, assignment: &str) -> Result<(), CliError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected KEY=VALUE, got {assignment:?}")))?;
        self.set(k, v)
    }

    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), CliError> {
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.assign(line).map_err(|e| match e {
                CliError::Usage(m) => CliError::Usage(format!("{origin}:{}: {m}", lineno + 1)),
                other => other,
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }
}

pub fn parse_sampler(value: &str) -> Result<Sampler, CliError> {
    match value {
        "random" => Ok(Sampler::Random),
        other => other
            .parse::<OrderMode>()
            .map(Sampler::Ordered)
            .map_err(|_| {
                CliError::Usage(format!(
                    "order mode must be bfs, halving or random, got {other:?}"
                ))
            }),
    }
}
