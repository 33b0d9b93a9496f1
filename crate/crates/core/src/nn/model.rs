use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layout::ParamLayout;
use super::mlp::{mlp_backward, mlp_forward, MlpCache};
use super::recurrent::{stack_backward, stack_forward, StackCache};
use super::{ModelSpec, NnError};
use crate::exec::{tree_sum, Execution};
use crate::ingest::NormParams;

/// Samples per gradient work item. Fixed so the reduction tree, and therefore
/// every bit of the gradient, does not depend on the thread count.
pub const GRAD_CHUNK: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Forecast {
    /// Normalized units.
    pub predictions: Vec<f64>,
}

impl Forecast {
    pub fn denormalized(&self, norm: &NormParams) -> Vec<f64> {
        self.predictions.iter().map(|&p| norm.denormalize(p)).collect()
    }
}

/// `(1/k) * sum (pred_i - label_i)^2`
pub fn loss_mse(pred: &[f64], label: &[f64]) -> Result<f64, NnError> {
    if pred.len() != label.len() || pred.is_empty() {
        return Err(NnError::LengthMismatch {
            pred: pred.len(),
            label: label.len(),
        });
    }
    Ok(pred.iter().zip(label).map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / pred.len() as f64)
}

enum Cache {
    Stack(StackCache),
    Mlp(MlpCache),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    spec: ModelSpec,
    layout: ParamLayout,
    values: Vec<f64>,
}

impl ModelParams {
    pub fn zeros(spec: ModelSpec) -> Result<Self, NnError> {
        spec.validate()?;
        let layout = ParamLayout::for_spec(&spec);
        Ok(ModelParams {
            values: vec![0.0; layout.total],
            spec,
            layout,
        })
    }

    /// Weights uniform in `±sqrt(1/fan_in)`, biases zero.
    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self, NnError> {
        let mut params = ModelParams::zeros(spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for slot in &params.layout.slots {
            if slot.fan_in == 0 {
                continue;
            }
            let bound = (1.0 / slot.fan_in as f64).sqrt();
            for v in &mut params.values[slot.range()] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(params)
    }

    pub fn from_values(spec: ModelSpec, values: Vec<f64>) -> Result<Self, NnError> {
        let mut params = ModelParams::zeros(spec)?;
        if values.len() != params.values.len() {
            return Err(NnError::ShapeMismatch(format!(
                "{} values for a model with {} parameters",
                values.len(),
                params.values.len()
            )));
        }
        params.values = values;
        Ok(params)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn param_count(&self) -> usize {
        self.values.len()
    }

    /// Mutable view of one named tensor, e.g. `"l0.fwd.wx"`.
    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let slot = self.layout.slots.iter().find(|s| s.name == name)?.range();
        Some(&mut self.values[slot])
    }

    fn check_input(&self, features: &Array2<f64>) -> Result<(), NnError> {
        let want = (self.spec.seq_len, self.spec.input_dim);
        if features.dim() != want {
            return Err(NnError::ShapeMismatch(format!(
                "features {:?}, model expects {want:?}",
                features.dim()
            )));
        }
        Ok(())
    }

    fn forward_batch(&self, feats: &[&Array2<f64>]) -> Result<(Array2<f64>, Cache), NnError> {
        for f in feats {
            self.check_input(f)?;
        }
        let batch = feats.len();
        let (seq, width) = (self.spec.seq_len, self.spec.input_dim);
        let (preds, cache) = if self.spec.arch.cell().is_some() {
            let xs: Vec<Array2<f64>> = (0..seq)
                .map(|t| Array2::from_shape_fn((batch, width), |(b, f)| feats[b][[t, f]]))
                .collect();
            let (p, c) = stack_forward(&self.spec, &self.layout, &self.values, xs);
            (p, Cache::Stack(c))
        } else {
            let x = Array2::from_shape_fn((batch, seq * width), |(b, k)| feats[b][[k / width, k % width]]);
            let (p, c) = mlp_forward(&self.spec, &self.layout, &self.values, x);
            (p, Cache::Mlp(c))
        };
        if preds.iter().any(|v| !v.is_finite()) {
            return Err(NnError::NonFiniteActivation);
        }
        Ok((preds, cache))
    }

    pub fn forward(&self, features: &Array2<f64>) -> Result<Forecast, NnError> {
        let (preds, _) = self.forward_batch(&[features])?;
        Ok(Forecast {
            predictions: preds.row(0).to_vec(),
        })
    }

    pub fn predict(&self, features: &[Array2<f64>]) -> Result<Vec<Forecast>, NnError> {
        let refs: Vec<&Array2<f64>> = features.iter().collect();
        let mut out = Vec::with_capacity(features.len());
        for chunk in refs.chunks(GRAD_CHUNK) {
            let (preds, _) = self.forward_batch(chunk)?;
            out.extend(preds.axis_iter(Axis(0)).map(|r| Forecast {
                predictions: r.to_vec(),
            }));
        }
        Ok(out)
    }

    fn check_labels(&self, features: &[Array2<f64>], labels: &[Vec<f64>]) -> Result<(), NnError> {
        if features.is_empty() {
            return Err(NnError::EmptyDataset);
        }
        if features.len() != labels.len() {
            return Err(NnError::ShapeMismatch(format!("{} inputs, {} labels", features.len(), labels.len())));
        }
        if let Some(bad) = labels.iter().find(|l| l.len() != self.spec.output_len) {
            return Err(NnError::LengthMismatch {
                pred: self.spec.output_len,
                label: bad.len(),
            });
        }
        Ok(())
    }

    /// Mean per-sample MSE.
    pub fn loss(&self, features: &[Array2<f64>], labels: &[Vec<f64>]) -> Result<f64, NnError> {
        self.check_labels(features, labels)?;
        let mut sum = 0.0;
        for (f, l) in self.predict(features)?.iter().zip(labels) {
            sum += loss_mse(&f.predictions, l)?;
        }
        Ok(sum / features.len() as f64)
    }

    /// Mean per-sample MSE and its exact gradient.
    ///
    /// The batch is cut into [`GRAD_CHUNK`]-sized pieces that may run in
    /// parallel; partial sums are combined with [`tree_sum`] in chunk order.
    pub fn loss_and_grad(
        &self,
        features: &[Array2<f64>],
        labels: &[Vec<f64>],
        exec: Execution,
    ) -> Result<(f64, Vec<f64>), NnError> {
        self.check_labels(features, labels)?;
        let chunks: Vec<std::ops::Range<usize>> = (0..features.len())
            .step_by(GRAD_CHUNK)
            .map(|s| s..(s + GRAD_CHUNK).min(features.len()))
            .collect();
        let parts = exec.try_map(&chunks, |range| {
            let refs: Vec<&Array2<f64>> = features[range.clone()].iter().collect();
            self.chunk_grad(&refs, &labels[range.clone()])
        })?;
        let mut total = tree_sum(parts).expect("at least one chunk");
        let scale = 1.0 / features.len() as f64;
        let loss = total.pop().expect("loss slot") * scale;
        total.iter_mut().for_each(|g| *g *= scale);
        if total.iter().any(|g| !g.is_finite()) {
            return Err(NnError::NonFiniteGradient);
        }
        Ok((loss, total))
    }

    /// Gradient of the summed per-sample loss, with that sum appended.
    fn chunk_grad(&self, feats: &[&Array2<f64>], labels: &[Vec<f64>]) -> Result<Vec<f64>, NnError> {
        let (preds, cache) = self.forward_batch(feats)?;
        let k = self.spec.output_len as f64;
        let mut d_pred = preds.clone();
        let mut loss = 0.0;
        for (mut row, label) in d_pred.axis_iter_mut(Axis(0)).zip(labels) {
            for (d, y) in row.iter_mut().zip(label) {
                let diff = *d - y;
                loss += diff * diff / k;
                *d = 2.0 * diff / k;
            }
        }
        let mut grad = match &cache {
            Cache::Stack(c) => stack_backward(&self.spec, &self.layout, &self.values, c, &d_pred),
            Cache::Mlp(c) => mlp_backward(&self.spec, &self.layout, &self.values, c, &d_pred),
        };
        grad.push(loss);
        Ok(grad)
    }

    /// Signs of all ReLU pre-activations over a batch.
    pub(crate) fn relu_pattern(&self, features: &[Array2<f64>]) -> Result<Vec<bool>, NnError> {
        let refs: Vec<&Array2<f64>> = features.iter().collect();
        let (_, cache) = self.forward_batch(&refs)?;
        Ok(match cache {
            Cache::Stack(c) => c.relu_pattern(),
            Cache::Mlp(c) if self.spec.mlp_activation == super::Activation::Relu => c.relu_pattern(),
            Cache::Mlp(_) => Vec::new(),
        })
    }
}
