use std::fmt;
use std::str::FromStr;

use super::TrainError;
use crate::numerics::{Graph, Var};

/// Per-label loss weights; labels without an entry weigh 1.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ClassWeights {
    entries: Vec<(f64, f64)>,
}

impl ClassWeights {
    pub fn new(entries: impl IntoIterator<Item = (f64, f64)>) -> Result<Self, TrainError> {
        let entries: Vec<(f64, f64)> = entries.into_iter().collect();
        if let Some(&(level, w)) = entries.iter().find(|(_, w)| !w.is_finite() || *w <= 0.0) {
            return Err(TrainError::Config(format!(
                "weight for level {level} must be positive, got {w}"
            )));
        }
        Ok(Self { entries })
    }

    pub fn weight(&self, label: f64) -> f64 {
        self.entries
            .iter()
            .find(|(level, _)| (level - label).abs() < 1e-9)
            .map_or(1.0, |&(_, w)| w)
    }
}

/// `level:weight` pairs separated by `;`, e.g. `0:3;0.33:1.5`.
impl FromStr for ClassWeights {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse = |part: &str| -> Result<(f64, f64), TrainError> {
            let bad = || {
                TrainError::Config(format!(
                    "invalid class weight {part:?}, expected level:weight"
                ))
            };
            let (l, w) = part.split_once(':').ok_or_else(bad)?;
            Ok((
                l.trim().parse().map_err(|_| bad())?,
                w.trim().parse().map_err(|_| bad())?,
            ))
        };
        let entries = s
            .split(';')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(parse)
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(entries)
    }
}

impl fmt::Display for ClassWeights {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .entries
            .iter()
            .map(|(l, w)| format!("{l}:{w}"))
            .collect();
        f.write_str(&parts.join(";"))
    }
}

fn check_inputs(n_pred: usize, labels: &[f64]) -> Result<(), TrainError> {
    if n_pred != labels.len() {
        return Err(TrainError::Config(format!(
            "{n_pred} predictions for {} labels",
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(TrainError::Config("loss over an empty batch".into()));
    }
    if let Some(l) = labels.iter().find(|l| !(0.0..=1.0).contains(*l)) {
        return Err(TrainError::Config(format!("label {l} outside [0, 1]")));
    }
    Ok(())
}

/// Mean of `w_i (y_i − label_i)²`.
pub fn mse_loss(
    predictions: &[f64],
    labels: &[f64],
    weights: Option<&ClassWeights>,
) -> Result<f64, TrainError> {
    check_inputs(predictions.len(), labels)?;
    let total: f64 = predictions
        .iter()
        .zip(labels)
        .map(|(y, l)| {
            let sq = (y - l) * (y - l);
            match weights {
                Some(w) => w.weight(*l) * sq,
                None => sq,
            }
        })
        .sum();
    Ok(total / labels.len() as f64)
}

/// Differentiable form of [`mse_loss`] over one-element prediction nodes.
pub fn mse_loss_graph(
    g: &mut Graph,
    predictions: &[Var],
    labels: &[f64],
    weights: Option<&ClassWeights>,
) -> Result<Var, TrainError> {
    check_inputs(predictions.len(), labels)?;
    let mut total: Option<Var> = None;
    for (&y, &label) in predictions.iter().zip(labels) {
        let diff = g.add_scalar(y, -label)?;
        let mut term = g.square(diff)?;
        if let Some(w) = weights {
            term = g.scale(term, w.weight(label))?;
        }
        total = Some(match total {
            Some(t) => g.add(t, term)?,
            None => term,
        });
    }
    let total = g.sum(total.expect("non-empty batch"))?;
    Ok(g.scale(total, 1.0 / labels.len() as f64)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn examples() {
        assert_eq!(mse_loss(&[0.3, 0.66], &[0.3, 0.66], None).unwrap(), 0.0);
        assert_eq!(mse_loss(&[1.0, 0.0], &[0.0, 0.0], None).unwrap(), 0.5);
        let w: ClassWeights = "0:3".parse().unwrap();
        let l = mse_loss(&[0.2], &[0.0], Some(&w)).unwrap();
        assert!((l - 0.12).abs() < 1e-15);
    }

    #[test]
    fn unit_weights_are_bit_exact() {
        let w: ClassWeights = "0:1;0.33:1;0.66:1;1:1".parse().unwrap();
        let preds = [0.17, 0.52, 0.9, 0.41, 0.03];
        let labels = [0.0, 0.33, 1.0, 0.66, 0.33];
        let a = mse_loss(&preds, &labels, None).unwrap();
        let b = mse_loss(&preds, &labels, Some(&w)).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());

        let graph_loss = |weights: Option<&ClassWeights>| {
            let mut g = Graph::new();
            let vars: Vec<Var> = preds.iter().map(|&p| g.param(Tensor::scalar(p))).collect();
            let l = mse_loss_graph(&mut g, &vars, &labels, weights).unwrap();
            g.value(l).item()
        };
        assert_eq!(graph_loss(None).to_bits(), graph_loss(Some(&w)).to_bits());
    }

    #[test]
    fn graph_gradient_is_weighted_residual() {
        let w: ClassWeights = "0:3".parse().unwrap();
        let mut g = Graph::new();
        let a = g.param(Tensor::scalar(0.2));
        let b = g.param(Tensor::scalar(0.5));
        let l = mse_loss_graph(&mut g, &[a, b], &[0.0, 1.0], Some(&w)).unwrap();
        g.backward(l).unwrap();
        assert!((g.grad(a).unwrap().item() - 3.0 * 2.0 * 0.2 / 2.0).abs() < 1e-15);
        assert!((g.grad(b).unwrap().item() - 2.0 * -0.5 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn invalid_inputs() {
        assert!(mse_loss(&[0.1], &[0.1, 0.2], None).is_err());
        assert!(mse_loss(&[], &[], None).is_err());
        assert!(mse_loss(&[0.1], &[1.2], None).is_err());
        assert!("0:-1".parse::<ClassWeights>().is_err());
        assert!("0=1".parse::<ClassWeights>().is_err());
    }
}
