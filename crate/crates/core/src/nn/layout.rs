use ndarray::{ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{Architecture, ModelSpec};

/// Position of one weight matrix or bias vector inside the flat parameter vector.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSlot {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    /// Fan-in used for initialization; 0 marks a bias.
    pub fan_in: usize,
}

impl TensorSlot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamLayout {
    pub slots: Vec<TensorSlot>,
    pub total: usize,
}

/// Index of the recurrent (layer, direction) block in [`ParamLayout::slots`];
/// each block is `wx, wh, b`.
pub(crate) fn cell_slot(layer: usize, backward: bool) -> usize {
    3 * (2 * layer + usize::from(backward))
}

impl ParamLayout {
    pub fn for_spec(spec: &ModelSpec) -> ParamLayout {
        let mut slots = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, rows: usize, cols: usize, fan_in: usize| {
            slots.push(TensorSlot {
                name,
                rows,
                cols,
                offset,
                fan_in,
            });
            offset += rows * cols;
        };
        let h = spec.hidden_dim;
        match spec.arch.cell() {
            Some(kind) => {
                let g = kind.gates() * h;
                for layer in 0..spec.layers {
                    let input = if layer == 0 { spec.input_dim } else { 2 * h };
                    for dir in ["fwd", "bwd"] {
                        push(format!("l{layer}.{dir}.wx"), g, input, input);
                        push(format!("l{layer}.{dir}.wh"), g, h, h);
                        push(format!("l{layer}.{dir}.b"), g, 1, 0);
                    }
                }
                push("head.w".into(), 1, 2 * h, 2 * h);
                push("head.b".into(), 1, 1, 0);
            }
            None => {
                let flat = spec.seq_len * spec.input_dim;
                let out = match spec.arch {
                    Architecture::NaiveMlp => 1,
                    _ => spec.output_len,
                };
                push("fc1.w".into(), h, flat, flat);
                push("fc1.b".into(), h, 1, 0);
                push("fc2.w".into(), out, h, h);
                push("fc2.b".into(), out, 1, 0);
            }
        }
        ParamLayout { slots, total: offset }
    }

    pub fn matrix<'a>(&self, values: &'a [f64], slot: usize) -> ArrayView2<'a, f64> {
        let s = &self.slots[slot];
        ArrayView2::from_shape((s.rows, s.cols), &values[s.range()]).expect("slot fits")
    }

    pub fn vector<'a>(&self, values: &'a [f64], slot: usize) -> ArrayView1<'a, f64> {
        let s = &self.slots[slot];
        ArrayView1::from(&values[s.range()])
    }
}
