use rand::Rng;

use super::TrainError;
use crate::model::DepthPlan;

/// Draws keep/drop decisions for every residual branch of a training forward pass.
///
/// Each of the `2·(L1 + L2)` branches is dropped independently with probability
/// `drop_rate`; kept branches are scaled by `1 / (1 − drop_rate)`.
pub fn stochastic_depth_plan<R: Rng + ?Sized>(
    sa_blocks: usize,
    ca_blocks: usize,
    drop_rate: f64,
    rng: &mut R,
) -> Result<DepthPlan, TrainError> {
    if !(0.0..1.0).contains(&drop_rate) {
        return Err(TrainError::Config(format!(
            "drop_rate must be in [0, 1), got {drop_rate}"
        )));
    }
    let branches = 2 * (sa_blocks + ca_blocks);
    if drop_rate == 0.0 {
        return Ok(DepthPlan {
            factors: vec![1.0; branches],
        });
    }
    let keep_scale = 1.0 / (1.0 - drop_rate);
    let factors = (0..branches)
        .map(|_| {
            if rng.random::<f64>() < drop_rate {
                0.0
            } else {
                keep_scale
            }
        })
        .collect();
    Ok(DepthPlan { factors })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_rate_keeps_everything_unscaled() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let plan = stochastic_depth_plan(3, 2, 0.0, &mut rng).unwrap();
        assert_eq!(plan.factors, vec![1.0; 10]);
    }

    #[test]
    fn empirical_drop_fraction() {
        // 10^5 draws; binomial std of the fraction is sqrt(0.05 * 0.95 / 1e5) ≈ 6.9e-4.
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut dropped = 0;
        let mut total = 0;
        while total < 100_000 {
            let plan = stochastic_depth_plan(12, 2, 0.05, &mut rng).unwrap();
            dropped += plan.dropped();
            total += plan.factors.len();
            assert!(plan.factors.iter().all(|&f| f == 0.0 || f == 1.0 / 0.95));
        }
        let frac = dropped as f64 / total as f64;
        assert!((frac - 0.05).abs() < 0.003, "{frac}");
    }

    #[test]
    fn invalid_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(stochastic_depth_plan(1, 1, 1.0, &mut rng).is_err());
        assert!(stochastic_depth_plan(1, 1, -0.1, &mut rng).is_err());
    }
}
