//! Synthetic markets where every related asset leads the target by a known lag.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::EvalError;
use crate::error::Result;
use crate::ingest::{normalize_global, MarketFrame, NormScope, RawPrices, FOUR_HOURS_MS};

/// 2018-06-01T00:00:00Z
const SYNTHETIC_START_MS: i64 = 1_527_811_200_000;
/// Persistence of the target's increments; higher is smoother.
const MOMENTUM: f64 = 0.9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticMarketSpec {
    /// Lead of each follower in timesteps; its length is the follower count.
    pub lags: Vec<usize>,
    pub noise_sigma: f64,
    pub len: usize,
    pub seed: u64,
}

impl SyntheticMarketSpec {
    pub fn followers(&self) -> usize {
        self.lags.len()
    }
}

/// `m` lags drawn uniformly from `choices`.
pub fn draw_lags(m: usize, choices: &[usize], seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6c61_6773);
    (0..m).map(|_| choices[rng.random_range(0..choices.len())]).collect()
}

/// Target: a momentum random walk rescaled to [0, 1]. Follower `k` at time `t`
/// is the target at `t + lag_k` plus white noise, so followers lead.
pub fn generate_synthetic(spec: &SyntheticMarketSpec) -> Result<MarketFrame> {
    let max_lag = spec.lags.iter().copied().max().unwrap_or(0);
    if spec.lags.is_empty() {
        return Err(EvalError::InvalidSynthetic("need at least one follower".into()).into());
    }
    if !(spec.noise_sigma >= 0.0) {
        return Err(EvalError::InvalidSynthetic(format!("noise_sigma {} must be >= 0", spec.noise_sigma)).into());
    }
    if spec.len < 27 + max_lag {
        return Err(EvalError::InvalidSynthetic(format!("len {} < 27 + max lag {max_lag}", spec.len)).into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.len + max_lag;
    let mut walk = Vec::with_capacity(total);
    let (mut level, mut velocity) = (0.0f64, 0.0f64);
    for _ in 0..total {
        let shock: f64 = StandardNormal.sample(&mut rng);
        velocity = MOMENTUM * velocity + shock;
        level += velocity;
        walk.push(level);
    }
    let (lo, hi) = walk.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let target: Vec<f64> = walk.iter().map(|v| (v - lo) / (hi - lo)).collect();

    let m = spec.followers();
    let mut prices = Array2::zeros((spec.len, m + 1));
    for t in 0..spec.len {
        prices[[t, 0]] = target[t];
    }
    for (k, &lag) in spec.lags.iter().enumerate() {
        for t in 0..spec.len {
            let noise = if spec.noise_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                spec.noise_sigma * z
            } else {
                0.0
            };
            prices[[t, k + 1]] = target[t + lag] + noise;
        }
    }
    let raw = RawPrices {
        asset_ids: std::iter::once("TARGET".to_string())
            .chain((1..=m).map(|k| format!("LEAD{k}")))
            .collect(),
        timestamps: (0..spec.len as i64).map(|k| SYNTHETIC_START_MS + k * FOUR_HOURS_MS).collect(),
        prices,
    };
    Ok(normalize_global(&raw, NormScope::All)?)
}
