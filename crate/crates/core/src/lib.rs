//! Lead-lag relationship mining between a target asset and a basket of
//! related assets, and small sequence models that forecast the target from
//! the mined relational impact factors.
//!
//! The pipeline is `ingest` (klines → normalized [`MarketFrame`]) →
//! `c2rm` (DTW weights and lead-lag kernels → [`ImpactFactor`]) → `nn`
//! (bidirectional RNN/LSTM/GRU and MLP baselines) → `eval` (chronological
//! splits, experiment cells, sweeps and reports).

pub mod c2rm;
pub mod dtw;
pub mod error;
pub mod eval;
pub mod exec;
pub mod ingest;
pub mod nn;

pub use c2rm::{FeatureMethod, ImpactFactor, ImpactKind, LagDirection, LeadLagKernel};
pub use error::{Error, Result};
pub use exec::Execution;
pub use ingest::{MarketFrame, NormParams, NormScope, Window};

/// Stable short hash used to tag every artifact with the configuration that produced it.
pub fn config_hash<T: serde::Serialize>(value: &T) -> String {
    use sha2::{Digest, Sha256};
    let canonical = serde_json::to_vec(value).expect("config values are always serializable");
    let digest = Sha256::digest(&canonical);
    hex::encode(&digest[..8])
}
