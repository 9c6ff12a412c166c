use super::DataError;

#[derive(Debug, Clone, PartialEq)]
pub struct LevelError {
    pub level: f64,
    pub count: usize,
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Metrics {
    pub mse: f64,
    /// Per-label errors in ascending label order; only labels that occur are listed.
    pub per_level: Vec<LevelError>,
    /// Mean of the per-level errors.
    pub mmse: f64,
}

/// MSE over all `(prediction, label)` pairs plus the mean of per-label MSEs.
pub fn evaluate(pairs: &[(f64, f64)]) -> Result<Metrics, DataError> {
    if pairs.is_empty() {
        return Err(DataError::Invalid(
            "cannot evaluate an empty prediction set".into(),
        ));
    }
    let sq = |(y, label): (f64, f64)| (y - label) * (y - label);
    let mse = pairs.iter().copied().map(sq).sum::<f64>() / pairs.len() as f64;

    let mut levels: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let per_level: Vec<LevelError> = levels
        .into_iter()
        .map(|level| {
            let (sum, count) = pairs
                .iter()
                .filter(|p| p.1 == level)
                .fold((0.0, 0usize), |(s, n), &p| (s + sq(p), n + 1));
            LevelError {
                level,
                count,
                mse: sum / count as f64,
            }
        })
        .collect();
    let mmse = per_level.iter().map(|l| l.mse).sum::<f64>() / per_level.len() as f64;
    Ok(Metrics {
        mse,
        per_level,
        mmse,
    })
}
