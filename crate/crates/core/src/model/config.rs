use std::fmt;
use std::str::FromStr;

use super::ModelError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HeadActivation {
    #[default]
    Sigmoid,
    Clamp,
}

impl fmt::Display for HeadActivation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HeadActivation::Sigmoid => "sigmoid",
            HeadActivation::Clamp => "clamp",
        })
    }
}

impl FromStr for HeadActivation {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sigmoid" => Ok(Self::Sigmoid),
            "clamp" => Ok(Self::Clamp),
            other => Err(ModelError::Config(format!(
                "unknown head activation {other:?}"
            ))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct CavtConfig {
    /// Frames per input sequence, `T`.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Temporal patch size `t`.
    pub temporal_patch: usize,
    /// Spatial patch size `p`.
    pub patch: usize,
    /// Embedding width `c`.
    pub embed_dim: usize,
    pub heads: usize,
    /// Self-attention block count `L1`.
    pub sa_blocks: usize,
    /// Class-attention block count `L2`.
    pub ca_blocks: usize,
    /// MLP hidden width as a multiple of `embed_dim`.
    pub mlp_ratio: usize,
    /// Initial value of every residual-branch diagonal.
    pub layerscale_init: f64,
    pub use_positional: bool,
    pub head_activation: HeadActivation,
}

impl Default for CavtConfig {
    /// Full-size configuration: 32 frames of 112×112, patches (2, 14, 14), width 1024,
    /// 16 heads, 12 self-attention and 2 class-attention blocks.
    fn default() -> Self {
        Self {
            frames: 32,
            height: 112,
            width: 112,
            temporal_patch: 2,
            patch: 14,
            embed_dim: 1024,
            heads: 16,
            sa_blocks: 12,
            ca_blocks: 2,
            mlp_ratio: 4,
            layerscale_init: 1e-5,
            use_positional: true,
            head_activation: HeadActivation::Sigmoid,
        }
    }
}

pub const CONFIG_KEYS: [&str; 13] = [
    "frames",
    "height",
    "width",
    "temporal_patch",
    "patch",
    "embed_dim",
    "heads",
    "sa_blocks",
    "ca_blocks",
    "mlp_ratio",
    "layerscale_init",
    "use_positional",
    "head_activation",
];

impl CavtConfig {
    /// Small configuration used for gradient checks and smoke training.
    pub fn tiny() -> Self {
        Self {
            frames: 4,
            height: 8,
            width: 8,
            temporal_patch: 2,
            patch: 4,
            embed_dim: 16,
            heads: 2,
            sa_blocks: 2,
            ca_blocks: 1,
            mlp_ratio: 2,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("frames", self.frames),
            ("height", self.height),
            ("width", self.width),
            ("temporal_patch", self.temporal_patch),
            ("patch", self.patch),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
        ];
        for (key, v) in positive {
            if v == 0 {
                return Err(ModelError::Config(format!("{key} must be >= 1")));
            }
        }
        let divides = [
            ("temporal_patch", self.temporal_patch, "frames", self.frames),
            ("patch", self.patch, "height", self.height),
            ("patch", self.patch, "width", self.width),
            ("heads", self.heads, "embed_dim", self.embed_dim),
        ];
        for (a, av, b, bv) in divides {
            if bv % av != 0 {
                return Err(ModelError::Config(format!(
                    "{a}={av} does not divide {b}={bv}"
                )));
            }
        }
        if !self.layerscale_init.is_finite() {
            return Err(ModelError::Config("layerscale_init must be finite".into()));
        }
        Ok(())
    }

    /// `k = (T/t)(H/p)(W/p)`.
    pub fn num_patches(&self) -> usize {
        (self.frames / self.temporal_patch) * (self.height / self.patch) * (self.width / self.patch)
    }

    /// Values per flattened patch, `3tp²`.
    pub fn patch_dim(&self) -> usize {
        3 * self.temporal_patch * self.patch * self.patch
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    pub fn hidden_dim(&self) -> usize {
        self.mlp_ratio * self.embed_dim
    }

    /// Number of residual branches, two per block.
    pub fn branch_count(&self) -> usize {
        2 * (self.sa_blocks + self.ca_blocks)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "frames" => self.frames.to_string(),
            "height" => self.height.to_string(),
            "width" => self.width.to_string(),
            "temporal_patch" => self.temporal_patch.to_string(),
            "patch" => self.patch.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "heads" => self.heads.to_string(),
            "sa_blocks" => self.sa_blocks.to_string(),
            "ca_blocks" => self.ca_blocks.to_string(),
            "mlp_ratio" => self.mlp_ratio.to_string(),
            "layerscale_init" => format!("{:?}", self.layerscale_init),
            "use_positional" => self.use_positional.to_string(),
            "head_activation" => self.head_activation.to_string(),
            _ => return None,
        })
    }

    /// Sets one key from its text form. Returns `Ok(false)` for keys this config does not own.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ModelError> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, ModelError> {
            value
                .trim()
                .parse()
                .map_err(|_| ModelError::Config(format!("invalid value {value:?} for {key}")))
        }
        match key {
            "frames" => self.frames = parse(key, value)?,
            "height" => self.height = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "temporal_patch" => self.temporal_patch = parse(key, value)?,
            "patch" => self.patch = parse(key, value)?,
            "embed_dim" => self.embed_dim = parse(key, value)?,
            "heads" => self.heads = parse(key, value)?,
            "sa_blocks" => self.sa_blocks = parse(key, value)?,
            "ca_blocks" => self.ca_blocks = parse(key, value)?,
            "mlp_ratio" => self.mlp_ratio = parse(key, value)?,
            "layerscale_init" => self.layerscale_init = parse(key, value)?,
            "use_positional" => self.use_positional = parse(key, value)?,
            "head_activation" => self.head_activation = value.trim().parse()?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// `key=value` lines in [`CONFIG_KEYS`] order.
    pub fn to_text(&self) -> String {
        CONFIG_KEYS
            .iter()
            .map(|k| format!("{k}={}\n", self.get(k).expect("known key")))
            .collect()
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut config = Self::default();
        for line in text.lines().map(str::trim) {
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ModelError::Config(format!("malformed config line {line:?}")))?;
            if !config.set(k.trim(), v)? {
                return Err(ModelError::Config(format!(
                    "unknown config key {:?}",
                    k.trim()
                )));
            }
        }
        config.validate()?;
        Ok(config)
    }
}
