//! Central finite differences against reverse-mode gradients.

use super::{Graph, NumericsError, Tensor, Var};

pub const DEFAULT_STEP: f64 = 1e-5;

/// Floor on the relative-error denominator.
pub const DENOMINATOR_FLOOR: f64 = 1e-8;

/// Per-tensor outcome of a gradient check.
#[derive(Clone, Debug)]
pub struct TensorCheck {
    pub index: usize,
    pub max_rel_error: f64,
    /// Flat coordinate where the maximum was reached.
    pub worst_coordinate: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheck {
    pub tensors: Vec<TensorCheck>,
}

impl GradCheck {
    pub fn max_rel_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_rel_error)
            .fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Evaluates `f` on a fresh graph and returns its scalar value and gradients.
pub fn value_and_grad<F>(params: &[Tensor], f: &F) -> Result<(f64, Vec<Tensor>), NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.param(p.clone())).collect();
    let root = f(&mut g, &vars)?;
    let value = g.value(root).item();
    g.backward(root)?;
    let grads = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect();
    Ok((value, grads))
}

fn eval<F>(params: &[Tensor], f: &F) -> Result<f64, NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = params.iter().map(|p| g.constant(p.clone())).collect();
    let root = f(&mut g, &vars)?;
    let value = g.value(root);
    if value.numel() != 1 {
        return Err(NumericsError::Contract(format!(
            "checked function must be scalar, got shape {:?}",
            value.shape()
        )));
    }
    let v = value.item();
    if !v.is_finite() {
        return Err(NumericsError::NonFinite {
            op: "finite_diff_check",
        });
    }
    Ok(v)
}

/// Compares supplied analytic gradients with central differences of `f`, coordinate by coordinate.
pub fn compare_gradients<F>(
    params: &[Tensor],
    analytic: &[Tensor],
    h: f64,
    f: &F,
) -> Result<GradCheck, NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    if h.is_nan() || h <= 0.0 {
        return Err(NumericsError::Contract(format!(
            "step must be positive, got {h}"
        )));
    }
    if analytic.len() != params.len() {
        return Err(NumericsError::Contract(format!(
            "{} gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let mut work = params.to_vec();
    let mut tensors = Vec::with_capacity(params.len());
    for (index, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[index].shape() {
            return Err(NumericsError::Shape {
                op: "finite_diff_check",
                lhs: params[index].shape().to_vec(),
                rhs: grad.shape().to_vec(),
            });
        }
        let mut check = TensorCheck {
            index,
            max_rel_error: 0.0,
            worst_coordinate: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for coord in 0..params[index].numel() {
            let original = work[index].data()[coord];
            work[index].data_mut()[coord] = original + h;
            let plus = eval(&work, f)?;
            work[index].data_mut()[coord] = original - h;
            let minus = eval(&work, f)?;
            work[index].data_mut()[coord] = original;

            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[coord];
            let err = relative_error(a, numeric);
            if err > check.max_rel_error || coord == 0 {
                check = TensorCheck {
                    index,
                    max_rel_error: err,
                    worst_coordinate: coord,
                    analytic: a,
                    numeric,
                };
            }
        }
        tensors.push(check);
    }
    Ok(GradCheck { tensors })
}

/// Runs `backward` through `f` and checks it against central differences with step `h`.
pub fn finite_diff_check<F>(params: &[Tensor], h: f64, f: F) -> Result<GradCheck, NumericsError>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, NumericsError>,
{
    let (_, analytic) = value_and_grad(params, &f)?;
    compare_gradients(params, &analytic, h, &f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_up_to_roundoff() {
        let a = Tensor::new(&[3], vec![0.3, -1.2, 2.0]).unwrap();
        let report = finite_diff_check(&[a], DEFAULT_STEP, |g, p| {
            let sq = g.square(p[0])?;
            let scaled = g.scale(sq, 1.5)?;
            g.sum(scaled)
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-9, "{report:?}");
    }

    #[test]
    fn detects_a_wrong_gradient() {
        let a = Tensor::new(&[2], vec![1.0, 2.0]).unwrap();
        let f = |g: &mut Graph, p: &[Var]| {
            let sq = g.square(p[0])?;
            g.sum(sq)
        };
        let wrong = vec![Tensor::new(&[2], vec![2.0, 5.0]).unwrap()];
        let report = compare_gradients(&[a], &wrong, DEFAULT_STEP, &f).unwrap();
        assert!(report.max_rel_error() > 0.1);
        assert_eq!(report.tensors[0].worst_coordinate, 1);
    }

    #[test]
    fn rejects_nonpositive_step() {
        let a = Tensor::scalar(1.0);
        assert!(finite_diff_check(&[a], 0.0, |g, p| g.square(p[0])).is_err());
    }

    #[test]
    fn non_finite_output_is_an_error() {
        let a = Tensor::scalar(1.0);
        let r = finite_diff_check(&[a], 1e-5, |g, p| {
            let big = g.scale(p[0], 1e300)?;
            let sq = g.square(big)?;
            g.sum(sq)
        });
        assert!(matches!(r, Err(NumericsError::NonFinite { .. })));
    }

    #[test]
    fn every_primitive_passes() {
        let x = Tensor::new(
            &[3, 4],
            (0..12).map(|i| ((i * 7 % 11) as f64 - 5.0) / 4.0).collect(),
        )
        .unwrap();
        let w = Tensor::new(
            &[4, 4],
            (0..16)
                .map(|i| ((i * 5 % 13) as f64 - 6.0) / 10.0)
                .collect(),
        )
        .unwrap();
        let gain = Tensor::new(&[4], vec![1.1, 0.9, -0.4, 0.6]).unwrap();
        let bias = Tensor::new(&[4], vec![0.1, -0.2, 0.3, 0.0]).unwrap();
        let params = vec![x, w, gain, bias];
        let report = finite_diff_check(&params, DEFAULT_STEP, |g, p| {
            let ln = g.layer_norm(p[0], p[2], p[3], 1e-6)?;
            let h = g.matmul(ln, p[1])?;
            let h = g.add_bias(h, p[3])?;
            let h = g.gelu(h)?;
            let h = g.mul_channels(h, p[2])?;
            let t = g.transpose(h)?;
            let scores = g.matmul(h, t)?;
            let a = g.softmax_lastdim(scores)?;
            let mixed = g.matmul(a, h)?;
            let left = g.slice_cols(mixed, 0, 2)?;
            let right = g.slice_cols(mixed, 2, 2)?;
            let joined = g.concat_rows(&[right, left])?;
            let back = g.concat_cols(&[joined, joined])?;
            let s = g.sigmoid(back)?;
            let s = g.add_scalar(s, -0.3)?;
            let sq = g.square(s)?;
            g.sum(sq)
        })
        .unwrap();
        assert!(report.max_rel_error() < 1e-6, "{report:?}");
    }
}
