use super::params::{AttentionIndex, BlockIndex, MlpIndex};
use super::{CavtConfig, CavtParams, HeadActivation, ModelError};
use crate::numerics::{Graph, NumericsError, Tensor, Var, LAYER_NORM_EPS};

/// Splits a `[T, H, W, 3]` clip into `k` rows of `t·p·p·3` values.
///
/// Rows are ordered temporal-major, then row-major over the spatial grid; within a row the
/// block is flattened as `(frame, y, x, channel)`.
pub fn patchify(x: &Tensor, t: usize, p: usize) -> Result<Tensor, ModelError> {
    let (frames, h, w, ch) = match *x.shape() {
        [a, b, c, d] => (a, b, c, d),
        _ => {
            return Err(ModelError::Config(format!(
                "expected a [T, H, W, 3] clip, got {:?}",
                x.shape()
            )))
        }
    };
    if ch != 3 || t == 0 || p == 0 || frames % t != 0 || h % p != 0 || w % p != 0 {
        return Err(ModelError::Config(format!(
            "clip {:?} cannot be split into ({t}, {p}, {p}, 3) patches",
            x.shape()
        )));
    }
    let (nt, nh, nw) = (frames / t, h / p, w / p);
    let row_len = 3 * t * p * p;
    let mut out = Vec::with_capacity(x.numel());
    let src = x.data();
    for bt in 0..nt {
        for bh in 0..nh {
            for bw in 0..nw {
                for dt in 0..t {
                    for dy in 0..p {
                        let f = bt * t + dt;
                        let y = bh * p + dy;
                        let start = ((f * h + y) * w + bw * p) * 3;
                        out.extend_from_slice(&src[start..start + 3 * p]);
                    }
                }
            }
        }
    }
    Ok(Tensor::new(&[nt * nh * nw, row_len], out)?)
}

/// Inverse of [`patchify`].
pub fn unpatchify(
    patches: &Tensor,
    frames: usize,
    h: usize,
    w: usize,
    t: usize,
    p: usize,
) -> Result<Tensor, ModelError> {
    let k = (frames / t) * (h / p) * (w / p);
    if patches.shape() != [k, 3 * t * p * p] {
        return Err(ModelError::Config(format!(
            "patches {:?} do not match a [{frames}, {h}, {w}, 3] clip",
            patches.shape()
        )));
    }
    let (nh, nw) = (h / p, w / p);
    let mut out = vec![0.0; frames * h * w * 3];
    let mut rows = patches.data().chunks(3 * p);
    for bt in 0..frames / t {
        for bh in 0..nh {
            for bw in 0..nw {
                for dt in 0..t {
                    for dy in 0..p {
                        let f = bt * t + dt;
                        let y = bh * p + dy;
                        let start = ((f * h + y) * w + bw * p) * 3;
                        out[start..start + 3 * p].copy_from_slice(rows.next().expect("row count"));
                    }
                }
            }
        }
    }
    Ok(Tensor::new(&[frames, h, w, 3], out)?)
}

/// Per-branch multipliers for one forward pass.
///
/// Branch `2i` is the attention branch of block `i` and `2i + 1` its MLP branch, with
/// self-attention blocks first. `0.0` drops a branch; inference uses `1.0` everywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthPlan {
    pub factors: Vec<f64>,
}

impl DepthPlan {
    pub fn inference(config: &CavtConfig) -> Self {
        Self {
            factors: vec![1.0; config.branch_count()],
        }
    }

    pub fn dropped(&self) -> usize {
        self.factors.iter().filter(|&&f| f == 0.0).count()
    }
}

/// Everything a forward pass records, for inspection after the fact.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Engagement intensity in `[0, 1]`, shape `[1, 1]`.
    pub y: Var,
    /// Head output before the activation.
    pub logit: Var,
    /// Patch embeddings entering the first self-attention block.
    pub embeddings: Var,
    /// Patch embeddings leaving the last self-attention block.
    pub patches: Var,
    /// Class embedding after the last class-attention block.
    pub cls: Var,
    /// `[block][head]` attention maps of shape `[k, k]`.
    pub sa_attention: Vec<Vec<Var>>,
    /// `[block][head]` attention maps of shape `[1, k + 1]`.
    pub ca_attention: Vec<Vec<Var>>,
}

fn at_layer(layer: String) -> impl FnOnce(NumericsError) -> ModelError {
    move |source| ModelError::Layer { layer, source }
}

fn linear(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var, NumericsError> {
    let xw = g.matmul(x, w)?;
    g.add_bias(xw, b)
}

/// Multi-head attention of `queries` over `keys_values`, returning the projected output.
pub fn attention(
    g: &mut Graph,
    queries: Var,
    keys_values: Var,
    idx: &AttentionIndex,
    vars: &[Var],
    heads: usize,
    maps: &mut Vec<Var>,
) -> Result<Var, NumericsError> {
    let q = linear(g, queries, vars[idx.wq], vars[idx.bq])?;
    let k = linear(g, keys_values, vars[idx.wk], vars[idx.bk])?;
    let v = linear(g, keys_values, vars[idx.wv], vars[idx.bv])?;
    let c = g.value(q).last_dim();
    let d = c / heads;
    let scale = 1.0 / (d as f64).sqrt();
    let mut outputs = Vec::with_capacity(heads);
    for head in 0..heads {
        let qh = g.slice_cols(q, head * d, d)?;
        let kh = g.slice_cols(k, head * d, d)?;
        let vh = g.slice_cols(v, head * d, d)?;
        let kt = g.transpose(kh)?;
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale)?;
        let a = g.softmax_lastdim(scores)?;
        maps.push(a);
        outputs.push(g.matmul(a, vh)?);
    }
    let joined = if heads == 1 {
        outputs[0]
    } else {
        g.concat_cols(&outputs)?
    };
    linear(g, joined, vars[idx.wo], vars[idx.bo])
}

pub fn mlp(g: &mut Graph, x: Var, idx: &MlpIndex, vars: &[Var]) -> Result<Var, NumericsError> {
    let h = linear(g, x, vars[idx.fc1_weight], vars[idx.fc1_bias])?;
    let h = g.gelu(h)?;
    linear(g, h, vars[idx.fc2_weight], vars[idx.fc2_bias])
}

/// `residual + factor · diag(scale) · branch`, or `residual` alone when dropped.
fn scaled_residual(
    g: &mut Graph,
    residual: Var,
    factor: f64,
    scale: Var,
    branch: impl FnOnce(&mut Graph) -> Result<Var, NumericsError>,
) -> Result<Var, NumericsError> {
    if factor == 0.0 {
        return Ok(residual);
    }
    let out = branch(g)?;
    let mut out = g.mul_channels(out, scale)?;
    if factor != 1.0 {
        out = g.scale(out, factor)?;
    }
    g.add(out, residual)
}

/// One self-attention block over the patch rows `u`.
///
/// `factors` holds the stochastic-depth multipliers of the attention and MLP branches.
pub fn sa_block(
    g: &mut Graph,
    u: Var,
    block: &BlockIndex,
    vars: &[Var],
    heads: usize,
    factors: [f64; 2],
    maps: &mut Vec<Var>,
) -> Result<Var, NumericsError> {
    let u1 = scaled_residual(g, u, factors[0], vars[block.scale1], |g| {
        let n = g.layer_norm(
            u,
            vars[block.norm1_gain],
            vars[block.norm1_bias],
            LAYER_NORM_EPS,
        )?;
        attention(g, n, n, &block.attn, vars, heads, maps)
    })?;
    scaled_residual(g, u1, factors[1], vars[block.scale2], |g| {
        let n = g.layer_norm(
            u1,
            vars[block.norm2_gain],
            vars[block.norm2_bias],
            LAYER_NORM_EPS,
        )?;
        mlp(g, n, &block.mlp, vars)
    })
}

/// One class-attention block: the class row queries itself plus the patch rows.
///
/// Only the class row is updated; `u` is read, never replaced.
#[allow(clippy::too_many_arguments)]
pub fn ca_block(
    g: &mut Graph,
    cls: Var,
    u: Var,
    block: &BlockIndex,
    vars: &[Var],
    heads: usize,
    factors: [f64; 2],
    maps: &mut Vec<Var>,
) -> Result<Var, NumericsError> {
    let cls1 = scaled_residual(g, cls, factors[0], vars[block.scale1], |g| {
        let z = g.concat_rows(&[cls, u])?;
        let (gain, bias) = (vars[block.norm1_gain], vars[block.norm1_bias]);
        let z = g.layer_norm(z, gain, bias, LAYER_NORM_EPS)?;
        let q = g.layer_norm(cls, gain, bias, LAYER_NORM_EPS)?;
        attention(g, q, z, &block.attn, vars, heads, maps)
    })?;
    scaled_residual(g, cls1, factors[1], vars[block.scale2], |g| {
        let n = g.layer_norm(
            cls1,
            vars[block.norm2_gain],
            vars[block.norm2_bias],
            LAYER_NORM_EPS,
        )?;
        mlp(g, n, &block.mlp, vars)
    })
}

/// Runs the network on already-flattened patches `[k, 3tp²]`.
pub fn forward_patches(
    g: &mut Graph,
    params: &CavtParams,
    vars: &[Var],
    patches: Var,
    plan: &DepthPlan,
) -> Result<ForwardTrace, ModelError> {
    let config = &params.config;
    let layout = &params.layout;
    if vars.len() != layout.specs.len() {
        return Err(ModelError::Config(format!(
            "{} bound variables for {} parameters",
            vars.len(),
            layout.specs.len()
        )));
    }
    if plan.factors.len() != config.branch_count() {
        return Err(ModelError::Config(format!(
            "depth plan has {} factors, model has {} branches",
            plan.factors.len(),
            config.branch_count()
        )));
    }
    let expected = [config.num_patches(), config.patch_dim()];
    if g.value(patches).shape() != expected {
        return Err(ModelError::Config(format!(
            "patches {:?} do not match expected {expected:?}",
            g.value(patches).shape()
        )));
    }

    let mut x = g
        .matmul(patches, vars[layout.embed])
        .map_err(at_layer("embed".into()))?;
    if let Some(pos) = layout.positional {
        x = g.add(x, vars[pos]).map_err(at_layer("positional".into()))?;
    }
    let embeddings = x;

    let heads = config.heads;
    let mut sa_attention = Vec::with_capacity(layout.sa.len());
    let mut u = x;
    for (i, block) in layout.sa.iter().enumerate() {
        let factors = [plan.factors[2 * i], plan.factors[2 * i + 1]];
        let mut maps = Vec::with_capacity(heads);
        u = sa_block(g, u, block, vars, heads, factors, &mut maps)
            .map_err(at_layer(format!("sa.{i}")))?;
        sa_attention.push(maps);
    }

    let offset = 2 * layout.sa.len();
    let mut ca_attention = Vec::with_capacity(layout.ca.len());
    let mut cls = vars[layout.cls];
    for (i, block) in layout.ca.iter().enumerate() {
        let factors = [
            plan.factors[offset + 2 * i],
            plan.factors[offset + 2 * i + 1],
        ];
        let mut maps = Vec::with_capacity(heads);
        cls = ca_block(g, cls, u, block, vars, heads, factors, &mut maps)
            .map_err(at_layer(format!("ca.{i}")))?;
        ca_attention.push(maps);
    }

    let head = |g: &mut Graph| -> Result<(Var, Var), NumericsError> {
        let logit = linear(g, cls, vars[layout.head_weight], vars[layout.head_bias])?;
        let y = match config.head_activation {
            HeadActivation::Sigmoid => g.sigmoid(logit)?,
            HeadActivation::Clamp => g.clamp01(logit)?,
        };
        Ok((logit, y))
    };
    let (logit, y) = head(g).map_err(at_layer("head".into()))?;

    Ok(ForwardTrace {
        y,
        logit,
        embeddings,
        patches: u,
        cls,
        sa_attention,
        ca_attention,
    })
}

/// Runs the network on a `[T, H, W, 3]` clip with pixel values in `[0, 1]`.
pub fn forward(
    g: &mut Graph,
    params: &CavtParams,
    vars: &[Var],
    frames: &Tensor,
    plan: &DepthPlan,
) -> Result<ForwardTrace, ModelError> {
    let c = &params.config;
    if frames.shape() != [c.frames, c.height, c.width, 3] {
        return Err(ModelError::Config(format!(
            "clip {:?} does not match configured [{}, {}, {}, 3]",
            frames.shape(),
            c.frames,
            c.height,
            c.width
        )));
    }
    let patches = patchify(frames, c.temporal_patch, c.patch)?;
    let patches = g.constant(patches);
    forward_patches(g, params, vars, patches, plan)
}

/// Inference-mode prediction for a single clip.
pub fn infer(params: &CavtParams, frames: &Tensor) -> Result<f64, ModelError> {
    let mut g = Graph::new();
    let vars = params.bind_constant(&mut g);
    let trace = forward(
        &mut g,
        params,
        &vars,
        frames,
        &DepthPlan::inference(&params.config),
    )?;
    Ok(g.value(trace.y).item())
}
