use rand::Rng;
use rand_distr::StandardNormal;

use super::{CavtConfig, ModelError};
use crate::numerics::{Graph, Tensor, Var};

/// Standard deviation of the truncated-normal weight initialiser.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Init {
    Normal,
    Zeros,
    Ones,
    LayerScale,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Name up to the last dotted component that identifies a block, e.g. `sa.3`.
    pub fn group(&self) -> &str {
        let mut parts = self.name.splitn(3, '.');
        let first = parts.next().unwrap_or_default();
        match (first, parts.next()) {
            ("sa" | "ca", Some(idx)) => &self.name[..first.len() + 1 + idx.len()],
            _ => first,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttentionIndex {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpIndex {
    pub fc1_weight: usize,
    pub fc1_bias: usize,
    pub fc2_weight: usize,
    pub fc2_bias: usize,
}

/// Tensor positions of one residual block (self- or class-attention).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockIndex {
    pub norm1_gain: usize,
    pub norm1_bias: usize,
    pub attn: AttentionIndex,
    /// Diagonal on the attention branch.
    pub scale1: usize,
    pub norm2_gain: usize,
    pub norm2_bias: usize,
    pub mlp: MlpIndex,
    /// Diagonal on the MLP branch.
    pub scale2: usize,
}

/// Declaration order and shapes of every learnable tensor for a config.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    pub specs: Vec<ParamSpec>,
    pub embed: usize,
    pub positional: Option<usize>,
    pub sa: Vec<BlockIndex>,
    pub cls: usize,
    pub ca: Vec<BlockIndex>,
    pub head_weight: usize,
    pub head_bias: usize,
}

struct LayoutBuilder {
    specs: Vec<ParamSpec>,
}

impl LayoutBuilder {
    fn push(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        self.specs.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
        self.specs.len() - 1
    }

    fn block(&mut self, prefix: &str, c: usize, hidden: usize) -> BlockIndex {
        let mut p = |suffix: &str, shape: &[usize], init| {
            self.push(format!("{prefix}.{suffix}"), shape, init)
        };
        BlockIndex {
            norm1_gain: p("norm1.gain", &[c], Init::Ones),
            norm1_bias: p("norm1.bias", &[c], Init::Zeros),
            attn: AttentionIndex {
                wq: p("attn.wq", &[c, c], Init::Normal),
                bq: p("attn.bq", &[c], Init::Zeros),
                wk: p("attn.wk", &[c, c], Init::Normal),
                bk: p("attn.bk", &[c], Init::Zeros),
                wv: p("attn.wv", &[c, c], Init::Normal),
                bv: p("attn.bv", &[c], Init::Zeros),
                wo: p("attn.wo", &[c, c], Init::Normal),
                bo: p("attn.bo", &[c], Init::Zeros),
            },
            scale1: p("scale1", &[c], Init::LayerScale),
            norm2_gain: p("norm2.gain", &[c], Init::Ones),
            norm2_bias: p("norm2.bias", &[c], Init::Zeros),
            mlp: MlpIndex {
                fc1_weight: p("mlp.fc1.weight", &[c, hidden], Init::Normal),
                fc1_bias: p("mlp.fc1.bias", &[hidden], Init::Zeros),
                fc2_weight: p("mlp.fc2.weight", &[hidden, c], Init::Normal),
                fc2_bias: p("mlp.fc2.bias", &[c], Init::Zeros),
            },
            scale2: p("scale2", &[c], Init::LayerScale),
        }
    }
}

impl ParamLayout {
    pub fn new(config: &CavtConfig) -> Self {
        let c = config.embed_dim;
        let hidden = config.hidden_dim();
        let mut b = LayoutBuilder { specs: Vec::new() };
        let embed = b.push(
            "embed.weight".into(),
            &[config.patch_dim(), c],
            Init::Normal,
        );
        let positional = config
            .use_positional
            .then(|| b.push("positional".into(), &[config.num_patches(), c], Init::Zeros));
        let sa = (0..config.sa_blocks)
            .map(|i| b.block(&format!("sa.{i}"), c, hidden))
            .collect();
        let cls = b.push("cls".into(), &[1, c], Init::Normal);
        let ca = (0..config.ca_blocks)
            .map(|i| b.block(&format!("ca.{i}"), c, hidden))
            .collect();
        let head_weight = b.push("head.weight".into(), &[c, 1], Init::Normal);
        let head_bias = b.push("head.bias".into(), &[1], Init::Zeros);
        Self {
            specs: b.specs,
            embed,
            positional,
            sa,
            cls,
            ca,
            head_weight,
            head_bias,
        }
    }

    pub fn total(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }
}

/// Exact number of scalar parameters for `config`.
pub fn count_params(config: &CavtConfig) -> usize {
    ParamLayout::new(config).total()
}

/// All learnable tensors of a model, in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct CavtParams {
    pub config: CavtConfig,
    pub layout: ParamLayout,
    pub tensors: Vec<Tensor>,
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, std: f64) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z * std;
        }
    }
}

impl CavtParams {
    /// Weights from a normal(0, 0.02) truncated at two standard deviations, biases
    /// and positional table zero, norm gains one, diagonals at `layerscale_init`.
    pub fn init<R: Rng + ?Sized>(config: &CavtConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        let tensors = layout
            .specs
            .iter()
            .map(|spec| match spec.init {
                Init::Zeros => Tensor::zeros(&spec.shape),
                Init::Ones => Tensor::ones(&spec.shape),
                Init::LayerScale => Tensor::full(&spec.shape, config.layerscale_init),
                Init::Normal => {
                    let data = (0..spec.numel())
                        .map(|_| truncated_normal(rng, INIT_STD))
                        .collect();
                    Tensor::new(&spec.shape, data).expect("layout shape")
                }
            })
            .collect();
        Ok(Self {
            config: config.clone(),
            layout,
            tensors,
        })
    }

    pub fn zeros(config: &CavtConfig) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        let tensors = layout
            .specs
            .iter()
            .map(|s| Tensor::zeros(&s.shape))
            .collect();
        Ok(Self {
            config: config.clone(),
            layout,
            tensors,
        })
    }

    pub fn from_tensors(config: &CavtConfig, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        config.validate()?;
        let layout = ParamLayout::new(config);
        if tensors.len() != layout.specs.len() {
            return Err(ModelError::Config(format!(
                "expected {} parameter tensors, got {}",
                layout.specs.len(),
                tensors.len()
            )));
        }
        for (spec, t) in layout.specs.iter().zip(&tensors) {
            if t.shape() != spec.shape.as_slice() {
                return Err(ModelError::Config(format!(
                    "{} has shape {:?}, expected {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
            if !t.is_finite() {
                return Err(ModelError::Config(format!(
                    "{} contains non-finite values",
                    spec.name
                )));
            }
        }
        Ok(Self {
            config: config.clone(),
            layout,
            tensors,
        })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        let i = self.layout.specs.iter().position(|s| s.name == name)?;
        Some(&self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.layout.specs.iter().position(|s| s.name == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every tensor as a differentiable leaf.
    pub fn bind(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.param(t.clone())).collect()
    }

    /// Records every tensor as a constant (inference only).
    pub fn bind_constant(&self, g: &mut Graph) -> Vec<Var> {
        self.tensors.iter().map(|t| g.constant(t.clone())).collect()
    }
}
