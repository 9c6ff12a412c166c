//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node to the tape, so the tape order is already a
//! topological order of the computation. `backward` walks it once in reverse.

use super::tensor::{check_channel_param, gelu_derivative, layer_norm_parts, sigmoid};
use super::{NumericsError, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddBias(Var, Var),
    MulChannels(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Square(Var),
    Sum(Var),
    Gelu(Var),
    Sigmoid(Var),
    Clamp01(Var),
    Softmax(Var),
    LayerNorm {
        input: Var,
        gain: Var,
        bias: Var,
        xhat: Tensor,
        inv_std: Vec<f64>,
    },
    SliceCols {
        input: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// A single-threaded differentiation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Option<Vec<Option<Tensor>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a differentiable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` root with respect to `v`.
    ///
    /// Returns `None` before `backward` or when `v` does not influence the root.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.as_ref()?.get(v.0)?.as_ref()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    fn record(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs = self.needs(inputs);
        self.push(value, op, needs)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(NumericsError::Shape {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.record(out, Op::MatMul(a, b), &[a, b]))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).transpose()?;
        Ok(self.record(out, Op::Transpose(a), &[a]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let out = out.ensure_finite("add")?;
        Ok(self.record(out, Op::Add(a, b), &[a, b]))
    }

    /// Adds a length-`c` vector to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, NumericsError> {
        let (x, b) = (self.value(a), self.value(bias));
        check_channel_param("add_bias", x, b)?;
        let c = x.last_dim();
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, bv) in row.iter_mut().zip(b.data()) {
                *o += bv;
            }
        }
        let out = out.ensure_finite("add_bias")?;
        Ok(self.record(out, Op::AddBias(a, bias), &[a, bias]))
    }

    /// Multiplies every row of `a` elementwise by a length-`c` vector (a diagonal matrix).
    pub fn mul_channels(&mut self, a: Var, diag: Var) -> Result<Var, NumericsError> {
        let (x, d) = (self.value(a), self.value(diag));
        check_channel_param("mul_channels", x, d)?;
        let c = x.last_dim();
        let mut out = x.clone();
        for row in out.data_mut().chunks_mut(c) {
            for (o, dv) in row.iter_mut().zip(d.data()) {
                *o *= dv;
            }
        }
        let out = out.ensure_finite("mul_channels")?;
        Ok(self.record(out, Op::MulChannels(a, diag), &[a, diag]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var, NumericsError> {
        let out = self.value(a).map(|v| v * factor).ensure_finite("scale")?;
        Ok(self.record(out, Op::Scale(a, factor), &[a]))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var, NumericsError> {
        let out = self.value(a).map(|v| v + s).ensure_finite("add_scalar")?;
        Ok(self.record(out, Op::AddScalar(a), &[a]))
    }

    pub fn square(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).map(|v| v * v).ensure_finite("square")?;
        Ok(self.record(out, Op::Square(a), &[a]))
    }

    /// Sum of all elements as a one-element tensor.
    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.value(a).data().iter().sum::<f64>();
        let out = Tensor::scalar(s).ensure_finite("sum")?;
        Ok(self.record(out, Op::Sum(a), &[a]))
    }

    pub fn gelu(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).gelu().ensure_finite("gelu")?;
        Ok(self.record(out, Op::Gelu(a), &[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).map(sigmoid);
        Ok(self.record(out, Op::Sigmoid(a), &[a]))
    }

    /// Clamps into `[0, 1]`; the gradient is passed through only strictly inside.
    pub fn clamp01(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).map(|v| v.clamp(0.0, 1.0));
        Ok(self.record(out, Op::Clamp01(a), &[a]))
    }

    pub fn softmax_lastdim(&mut self, a: Var) -> Result<Var, NumericsError> {
        let out = self.value(a).softmax_lastdim()?;
        Ok(self.record(out, Op::Softmax(a), &[a]))
    }

    pub fn layer_norm(
        &mut self,
        a: Var,
        gain: Var,
        bias: Var,
        eps: f64,
    ) -> Result<Var, NumericsError> {
        let (out, xhat, inv_std) =
            layer_norm_parts(self.value(a), self.value(gain), self.value(bias), eps)?;
        let op = Op::LayerNorm {
            input: a,
            gain,
            bias,
            xhat,
            inv_std,
        };
        Ok(self.record(out, op, &[a, gain, bias]))
    }

    /// Columns `start..start + len` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let x = self.value(a);
        let (m, n) = match x.shape() {
            &[m, n] => (m, n),
            s => {
                return Err(NumericsError::Rank {
                    op: "slice_cols",
                    expected: 2,
                    shape: s.to_vec(),
                })
            }
        };
        if len == 0 || start + len > n {
            return Err(NumericsError::Contract(format!(
                "slice_cols {start}..{} out of range for {n} columns",
                start + len
            )));
        }
        let data = x
            .data()
            .chunks(n)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let out = Tensor::new(&[m, len], data)?;
        Ok(self.record(out, Op::SliceCols { input: a, start }, &[a]))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let m = self.rows_of(parts, "concat_cols")?;
        let widths: Vec<usize> = parts.iter().map(|&p| self.value(p).shape()[1]).collect();
        let n: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::new(&[m, n], data)?;
        Ok(self.record(out, Op::ConcatCols(parts.to_vec()), parts))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts
            .first()
            .ok_or(NumericsError::Empty { op: "concat_rows" })?;
        let n = self.value(first).last_dim();
        let mut m = 0;
        let mut data = Vec::new();
        for &p in parts {
            let x = self.value(p);
            if x.rank() != 2 || x.last_dim() != n {
                return Err(NumericsError::Shape {
                    op: "concat_rows",
                    lhs: self.value(first).shape().to_vec(),
                    rhs: x.shape().to_vec(),
                });
            }
            m += x.shape()[0];
            data.extend_from_slice(x.data());
        }
        let out = Tensor::new(&[m, n], data)?;
        Ok(self.record(out, Op::ConcatRows(parts.to_vec()), parts))
    }

    fn rows_of(&self, parts: &[Var], op: &'static str) -> Result<usize, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::Empty { op })?;
        let m = self.value(first).shape()[0];
        for &p in parts {
            let s = self.value(p).shape();
            if s.len() != 2 || s[0] != m {
                return Err(NumericsError::Shape {
                    op,
                    lhs: self.value(first).shape().to_vec(),
                    rhs: s.to_vec(),
                });
            }
        }
        Ok(m)
    }

    /// Accumulates gradients of the scalar `root` into every reachable node.
    ///
    /// A graph supports a single backward pass; build a fresh graph per step.
    pub fn backward(&mut self, root: Var) -> Result<(), NumericsError> {
        if self.grads.is_some() {
            return Err(NumericsError::Contract(
                "backward already ran on this graph".into(),
            ));
        }
        let root_value = self.value(root);
        if root_value.numel() != 1 {
            return Err(NumericsError::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                root_value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(Tensor::ones(root_value.shape()));

        for idx in (0..=root.0).rev() {
            let Some(upstream) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].needs_grad {
                continue;
            }
            for (input, g) in self.local_grads(idx, &upstream)? {
                if !self.nodes[input.0].needs_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[idx] = Some(upstream);
        }
        self.grads = Some(grads);
        Ok(())
    }

    fn local_grads(&self, idx: usize, dy: &Tensor) -> Result<Vec<(Var, Tensor)>, NumericsError> {
        let node = &self.nodes[idx];
        let y = &node.value;
        let val = |v: Var| self.value(v);
        let grads = match &node.op {
            Op::Leaf => vec![],
            Op::MatMul(a, b) => {
                let mut out = Vec::with_capacity(2);
                if self.nodes[a.0].needs_grad {
                    out.push((*a, dy.matmul(&val(*b).transpose()?)?));
                }
                if self.nodes[b.0].needs_grad {
                    out.push((*b, val(*a).transpose()?.matmul(dy)?));
                }
                out
            }
            Op::Transpose(a) => vec![(*a, dy.transpose()?)],
            Op::Add(a, b) => vec![(*a, dy.clone()), (*b, dy.clone())],
            Op::AddBias(a, bias) => {
                let c = dy.last_dim();
                let mut db = vec![0.0; c];
                for row in dy.data().chunks(c) {
                    for (acc, g) in db.iter_mut().zip(row) {
                        *acc += g;
                    }
                }
                vec![(*a, dy.clone()), (*bias, Tensor::new(&[c], db)?)]
            }
            Op::MulChannels(a, diag) => {
                let (x, d) = (val(*a), val(*diag));
                let c = d.numel();
                let mut dx = dy.clone();
                let mut dd = vec![0.0; c];
                for (row_dx, row_x) in dx.data_mut().chunks_mut(c).zip(x.data().chunks(c)) {
                    for j in 0..c {
                        dd[j] += row_dx[j] * row_x[j];
                        row_dx[j] *= d.data()[j];
                    }
                }
                vec![(*a, dx), (*diag, Tensor::new(&[c], dd)?)]
            }
            Op::Scale(a, f) => vec![(*a, dy.map(|g| g * f))],
            Op::AddScalar(a) => vec![(*a, dy.clone())],
            Op::Square(a) => vec![(*a, zip_map(dy, val(*a), |g, x| 2.0 * x * g))],
            Op::Sum(a) => vec![(*a, Tensor::full(val(*a).shape(), dy.item()))],
            Op::Gelu(a) => vec![(*a, zip_map(dy, val(*a), |g, x| g * gelu_derivative(x)))],
            Op::Sigmoid(a) => vec![(*a, zip_map(dy, y, |g, s| g * s * (1.0 - s)))],
            Op::Clamp01(a) => vec![(
                *a,
                zip_map(dy, val(*a), |g, x| if x > 0.0 && x < 1.0 { g } else { 0.0 }),
            )],
            Op::Softmax(a) => {
                let c = y.last_dim();
                let mut dx = dy.clone();
                for (row_dx, row_y) in dx.data_mut().chunks_mut(c).zip(y.data().chunks(c)) {
                    let dot: f64 = row_dx.iter().zip(row_y).map(|(g, s)| g * s).sum();
                    for (g, s) in row_dx.iter_mut().zip(row_y) {
                        *g = s * (*g - dot);
                    }
                }
                vec![(*a, dx)]
            }
            Op::LayerNorm {
                input,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let c = y.last_dim();
                let g = val(*gain).data();
                let mut dgain = vec![0.0; c];
                let mut dbias = vec![0.0; c];
                let mut dx = vec![0.0; y.numel()];
                let rows = dy.data().chunks(c).zip(xhat.data().chunks(c));
                for (r, (row_dy, row_xhat)) in rows.enumerate() {
                    let mut mean_dxhat = 0.0;
                    let mut mean_dxhat_xhat = 0.0;
                    for j in 0..c {
                        dgain[j] += row_dy[j] * row_xhat[j];
                        dbias[j] += row_dy[j];
                        let dxh = row_dy[j] * g[j];
                        mean_dxhat += dxh;
                        mean_dxhat_xhat += dxh * row_xhat[j];
                    }
                    mean_dxhat /= c as f64;
                    mean_dxhat_xhat /= c as f64;
                    let out = &mut dx[r * c..(r + 1) * c];
                    for j in 0..c {
                        let dxh = row_dy[j] * g[j];
                        out[j] = inv_std[r] * (dxh - mean_dxhat - row_xhat[j] * mean_dxhat_xhat);
                    }
                }
                vec![
                    (*input, Tensor::new(y.shape(), dx)?),
                    (*gain, Tensor::new(&[c], dgain)?),
                    (*bias, Tensor::new(&[c], dbias)?),
                ]
            }
            Op::SliceCols { input, start } => {
                let x = val(*input);
                let (m, n) = (x.shape()[0], x.shape()[1]);
                let w = y.shape()[1];
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    dx[i * n + start..i * n + start + w]
                        .copy_from_slice(&dy.data()[i * w..(i + 1) * w]);
                }
                vec![(*input, Tensor::new(x.shape(), dx)?)]
            }
            Op::ConcatCols(parts) => {
                let (m, n) = (y.shape()[0], y.shape()[1]);
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let w = val(p).shape()[1];
                    let data = (0..m)
                        .flat_map(|i| {
                            dy.data()[i * n + offset..i * n + offset + w]
                                .iter()
                                .copied()
                        })
                        .collect();
                    out.push((p, Tensor::new(&[m, w], data)?));
                    offset += w;
                }
                out
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let mut out = Vec::with_capacity(parts.len());
                for &p in parts {
                    let len = val(p).numel();
                    let data = dy.data()[offset..offset + len].to_vec();
                    out.push((p, Tensor::new(val(p).shape(), data)?));
                    offset += len;
                }
                out
            }
        };
        Ok(grads)
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.shape(), data).expect("shapes agree")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::new();
        let w = g.param(Tensor::new(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 4.0]).unwrap());
        let s = g.sum(w).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &Tensor::ones(&[2, 3]));
    }

    #[test]
    fn squared_matmul_matches_hand_derivation() {
        // d/dW sum((xW)^2) = 2 x^T (xW)
        let x = Tensor::from_rows(&[&[1.0, 2.0], &[-1.0, 0.5], &[3.0, -2.0]]);
        let w = Tensor::from_rows(&[&[0.1, -0.3], &[0.7, 0.2]]);
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let wv = g.param(w.clone());
        let xw = g.matmul(xv, wv).unwrap();
        let sq = g.square(xw).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();

        let expected = x
            .transpose()
            .unwrap()
            .matmul(&x.matmul(&w).unwrap())
            .unwrap()
            .map(|v| 2.0 * v);
        for (a, e) in g.grad(wv).unwrap().data().iter().zip(expected.data()) {
            assert!((a - e).abs() < 1e-12);
        }
        assert!(g.grad(xv).is_none());
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut g = Graph::new();
        let w = g.param(Tensor::scalar(2.0));
        let s = g.square(w).unwrap();
        g.backward(s).unwrap();
        assert!(matches!(g.backward(s), Err(NumericsError::Contract(_))));
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::new();
        let w = g.param(Tensor::zeros(&[2, 2]));
        assert!(matches!(g.backward(w), Err(NumericsError::Contract(_))));
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // f = sum(w*w + w) -> df/dw = 2w + 1
        let mut g = Graph::new();
        let w = g.param(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let sq = g.square(w).unwrap();
        let t = g.add(sq, w).unwrap();
        let s = g.sum(t).unwrap();
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap().data(), &[3.0, -3.0, 2.0]);
    }

    #[test]
    fn slicing_and_concatenation_round_trip() {
        let mut g = Graph::new();
        let x = g.param(Tensor::from_rows(&[
            &[1.0, 2.0, 3.0, 4.0],
            &[5.0, 6.0, 7.0, 8.0],
        ]));
        let left = g.slice_cols(x, 0, 2).unwrap();
        let right = g.slice_cols(x, 2, 2).unwrap();
        let back = g.concat_cols(&[left, right]).unwrap();
        assert_eq!(g.value(back), g.value(x));
        let stacked = g.concat_rows(&[left, right]).unwrap();
        assert_eq!(g.value(stacked).shape(), &[4, 2]);
        assert!(g.slice_cols(x, 3, 2).is_err());
    }
}
