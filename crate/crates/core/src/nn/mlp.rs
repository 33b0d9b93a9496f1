//! One-hidden-layer MLPs over the flattened input window.
//!
//! SmartMLP emits `output_len` values; NaiveMLP emits one scalar that is
//! broadcast to every output step.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis};

use super::layout::ParamLayout;
use super::{Activation, Architecture, ModelSpec};

pub(crate) struct MlpCache {
    x: Array2<f64>,
    pre: Array2<f64>,
    hidden: Array2<f64>,
}

impl MlpCache {
    pub(crate) fn relu_pattern(&self) -> Vec<bool> {
        self.pre.iter().map(|&v| v > 0.0).collect()
    }
}

fn activate(act: Activation, v: f64) -> f64 {
    match act {
        Activation::Relu => v.max(0.0),
        Activation::Identity => v,
    }
}

/// `x` is `B x (seq_len * F)`, each row a sample flattened time-major.
pub(crate) fn mlp_forward(spec: &ModelSpec, layout: &ParamLayout, values: &[f64], x: Array2<f64>) -> (Array2<f64>, MlpCache) {
    let w1 = layout.matrix(values, 0);
    let b1 = layout.vector(values, 1);
    let w2 = layout.matrix(values, 2);
    let b2 = layout.vector(values, 3);
    let mut pre = x.dot(&w1.t());
    pre += &b1;
    let hidden = pre.mapv(|v| activate(spec.mlp_activation, v));
    let mut out = hidden.dot(&w2.t());
    out += &b2;
    let preds = match spec.arch {
        Architecture::NaiveMlp => {
            let col = out.column(0);
            Array2::from_shape_fn((x.nrows(), spec.output_len), |(b, _)| col[b])
        }
        _ => out,
    };
    (preds, MlpCache { x, pre, hidden })
}

pub(crate) fn mlp_backward(
    spec: &ModelSpec,
    layout: &ParamLayout,
    values: &[f64],
    cache: &MlpCache,
    d_pred: &Array2<f64>,
) -> Vec<f64> {
    let w2 = layout.matrix(values, 2);
    let d_out = match spec.arch {
        Architecture::NaiveMlp => d_pred.sum_axis(Axis(1)).insert_axis(Axis(1)),
        _ => d_pred.clone(),
    };
    let mut grad = vec![0.0; layout.total];
    let g_w2 = d_out.t().dot(&cache.hidden);
    let g_b2 = d_out.sum_axis(Axis(0));
    let mut d_pre = d_out.dot(&w2);
    if spec.mlp_activation == Activation::Relu {
        d_pre.zip_mut_with(&cache.pre, |d, &p| {
            if p <= 0.0 {
                *d = 0.0
            }
        });
    }
    let s1 = &layout.slots[0];
    let mut g_w1 = Array2::<f64>::zeros((s1.rows, s1.cols));
    general_mat_mul(1.0, &d_pre.t(), &cache.x, 0.0, &mut g_w1);
    let g_b1 = d_pre.sum_axis(Axis(0));
    for (slot, src) in [
        (0, g_w1.as_slice()),
        (1, g_b1.as_slice()),
        (2, g_w2.as_slice()),
        (3, g_b2.as_slice()),
    ] {
        grad[layout.slots[slot].range()].copy_from_slice(src.expect("owned arrays are contiguous"));
    }
    grad
}
