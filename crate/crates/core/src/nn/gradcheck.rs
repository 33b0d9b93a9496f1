use ndarray::Array2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ModelParams, NnError};
use crate::exec::Execution;

/// Largest model checked coordinate-by-coordinate; bigger ones are subsampled.
const FULL_CHECK_LIMIT: usize = 2000;
const SUBSAMPLE: usize = 400;
/// Gradients below this magnitude are compared absolutely.
const REL_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Coordinates whose ±epsilon perturbation flips a ReLU.
    pub skipped_kinks: usize,
}

/// Compare analytic gradients with central differences.
///
/// The relative error of one coordinate is `|a - n| / max(|a|, |n|, 1e-7)`.
pub fn gradient_check(
    params: &ModelParams,
    features: &[Array2<f64>],
    labels: &[Vec<f64>],
    epsilon: f64,
) -> Result<GradCheckReport, NnError> {
    let (_, analytic) = params.loss_and_grad(features, labels, Execution::Sequential)?;
    let count = params.param_count();
    let coords: Vec<usize> = if count <= FULL_CHECK_LIMIT {
        (0..count).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(count as u64);
        let mut picked = sample(&mut rng, count, SUBSAMPLE).into_vec();
        picked.sort_unstable();
        picked
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        checked: 0,
        skipped_kinks: 0,
    };
    for &i in &coords {
        let original = probe.values()[i];
        probe.values_mut()[i] = original + epsilon;
        let plus = probe.loss(features, labels)?;
        let pattern_plus = probe.relu_pattern(features)?;
        probe.values_mut()[i] = original - epsilon;
        let minus = probe.loss(features, labels)?;
        let pattern_minus = probe.relu_pattern(features)?;
        probe.values_mut()[i] = original;
        if pattern_plus != pattern_minus {
            report.skipped_kinks += 1;
            continue;
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic[i];
        let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
        report.max_rel_error = report.max_rel_error.max(err);
        report.checked += 1;
    }
    Ok(report)
}
