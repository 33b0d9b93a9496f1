//! Batched recurrent cells, BPTT, and the bidirectional stack.
//!
//! Activations are `B x width` matrices, one per timestep, so each step is a
//! handful of small GEMMs.

use ndarray::linalg::general_mat_mul;
use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::layout::{cell_slot, ParamLayout};
use super::{CellKind, ModelSpec, NnError};

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Parameters of one cell.
#[derive(Clone, Copy, Debug)]
pub struct CellWeights<'a> {
    /// `gates*h x input`
    pub wx: ArrayView2<'a, f64>,
    /// `gates*h x h`
    pub wh: ArrayView2<'a, f64>,
    pub b: ArrayView1<'a, f64>,
}

impl CellWeights<'_> {
    fn hidden(&self) -> usize {
        self.wh.ncols()
    }
}

/// Recurrent state of a single sequence; `c` is only used by LSTM cells.
#[derive(Clone, Debug, PartialEq)]
pub struct CellState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl CellState {
    pub fn zeros(hidden: usize) -> Self {
        CellState {
            h: vec![0.0; hidden],
            c: vec![0.0; hidden],
        }
    }
}

/// One step of a cell on a single input vector.
pub fn cell_forward(kind: CellKind, w: &CellWeights<'_>, x: &[f64], state: &CellState) -> Result<CellState, NnError> {
    let h = w.hidden();
    let g = kind.gates() * h;
    if w.wx.nrows() != g || w.wh.nrows() != g || w.b.len() != g {
        return Err(NnError::ShapeMismatch(format!("{kind:?} cell with {} hidden units needs {g} gate rows", h)));
    }
    if x.len() != w.wx.ncols() || state.h.len() != h || state.c.len() != h {
        return Err(NnError::ShapeMismatch(format!(
            "input {} / state {} for a cell expecting {} / {h}",
            x.len(),
            state.h.len(),
            w.wx.ncols()
        )));
    }
    let xs = Array2::from_shape_vec((1, x.len()), x.to_vec()).expect("row vector");
    let hs = Array2::from_shape_vec((1, h), state.h.clone()).expect("row vector");
    let cs = Array2::from_shape_vec((1, h), state.c.clone()).expect("row vector");
    let out = step_forward(kind, w, &xs, &hs, &cs);
    Ok(CellState {
        h: out.h.row(0).to_vec(),
        c: out.c.map(|c| c.row(0).to_vec()).unwrap_or_else(|| vec![0.0; h]),
    })
}

pub(crate) enum StepCache {
    Rnn {
        pre: Array2<f64>,
    },
    Lstm {
        i: Array2<f64>,
        f: Array2<f64>,
        g: Array2<f64>,
        o: Array2<f64>,
        tc: Array2<f64>,
        c_prev: Array2<f64>,
    },
    Gru {
        z: Array2<f64>,
        r: Array2<f64>,
        n: Array2<f64>,
        rh: Array2<f64>,
    },
}

pub(crate) struct StepOut {
    pub h: Array2<f64>,
    pub c: Option<Array2<f64>>,
    pub cache: StepCache,
}

fn affine(x: &Array2<f64>, w: ArrayView2<'_, f64>, b: Option<ArrayView1<'_, f64>>) -> Array2<f64> {
    let mut out = x.dot(&w.t());
    if let Some(b) = b {
        out += &b;
    }
    out
}

pub(crate) fn step_forward(
    kind: CellKind,
    w: &CellWeights<'_>,
    x: &Array2<f64>,
    h_prev: &Array2<f64>,
    c_prev: &Array2<f64>,
) -> StepOut {
    let hd = w.hidden();
    match kind {
        CellKind::Rnn => {
            let mut pre = affine(x, w.wx, Some(w.b));
            general_mat_mul(1.0, h_prev, &w.wh.t(), 1.0, &mut pre);
            let h = pre.mapv(|v| v.max(0.0));
            StepOut {
                h,
                c: None,
                cache: StepCache::Rnn { pre },
            }
        }
        CellKind::Lstm => {
            let mut a = affine(x, w.wx, Some(w.b));
            general_mat_mul(1.0, h_prev, &w.wh.t(), 1.0, &mut a);
            let i = a.slice(s![.., 0..hd]).mapv(sigmoid);
            let f = a.slice(s![.., hd..2 * hd]).mapv(sigmoid);
            let g = a.slice(s![.., 2 * hd..3 * hd]).mapv(f64::tanh);
            let o = a.slice(s![.., 3 * hd..4 * hd]).mapv(sigmoid);
            let c = &f * c_prev + &i * &g;
            let tc = c.mapv(f64::tanh);
            let h = &o * &tc;
            StepOut {
                h,
                c: Some(c),
                cache: StepCache::Lstm {
                    i,
                    f,
                    g,
                    o,
                    tc,
                    c_prev: c_prev.clone(),
                },
            }
        }
        CellKind::Gru => {
            let ax = affine(x, w.wx, Some(w.b));
            let ah = h_prev.dot(&w.wh.slice(s![0..2 * hd, ..]).t());
            let z = (&ax.slice(s![.., 0..hd]) + &ah.slice(s![.., 0..hd])).mapv(sigmoid);
            let r = (&ax.slice(s![.., hd..2 * hd]) + &ah.slice(s![.., hd..2 * hd])).mapv(sigmoid);
            let rh = &r * h_prev;
            let mut an = ax.slice(s![.., 2 * hd..3 * hd]).to_owned();
            general_mat_mul(1.0, &rh, &w.wh.slice(s![2 * hd..3 * hd, ..]).t(), 1.0, &mut an);
            let n = an.mapv(f64::tanh);
            let h = h_prev + &(&z * &(&n - h_prev));
            StepOut {
                h,
                c: None,
                cache: StepCache::Gru { z, r, n, rh },
            }
        }
    }
}

pub(crate) struct CellGrads {
    pub wx: Array2<f64>,
    pub wh: Array2<f64>,
    pub b: Array1<f64>,
}

impl CellGrads {
    fn zeros(w: &CellWeights<'_>) -> Self {
        CellGrads {
            wx: Array2::zeros(w.wx.raw_dim()),
            wh: Array2::zeros(w.wh.raw_dim()),
            b: Array1::zeros(w.b.len()),
        }
    }
}

/// Returns `(dx, dh_prev, dc_prev)`. `dc` is ignored by non-LSTM cells.
pub(crate) fn step_backward(
    w: &CellWeights<'_>,
    x: &Array2<f64>,
    h_prev: &Array2<f64>,
    cache: &StepCache,
    dh: &Array2<f64>,
    dc: &Array2<f64>,
    grads: &mut CellGrads,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let hd = w.hidden();
    let (da, mut dh_prev, dc_prev) = match cache {
        StepCache::Rnn { pre } => {
            // Subgradient 0 at the kink.
            let mut da = dh.clone();
            da.zip_mut_with(pre, |d, &p| {
                if p <= 0.0 {
                    *d = 0.0
                }
            });
            (da, Array2::zeros(h_prev.raw_dim()), Array2::zeros((0, 0)))
        }
        StepCache::Lstm { i, f, g, o, tc, c_prev } => {
            let d_o = dh * tc;
            let dct = dc + &(dh * o * &tc.mapv(|t| 1.0 - t * t));
            let di = &dct * g;
            let dg = &dct * i;
            let df = &dct * c_prev;
            let dc_prev = &dct * f;
            let da = concatenate![
                Axis(1),
                di * &i.mapv(|v| v * (1.0 - v)),
                df * &f.mapv(|v| v * (1.0 - v)),
                dg * &g.mapv(|v| 1.0 - v * v),
                d_o * &o.mapv(|v| v * (1.0 - v))
            ];
            (da, Array2::zeros(h_prev.raw_dim()), dc_prev)
        }
        StepCache::Gru { z, r, n, rh } => {
            let dz = dh * &(n - h_prev);
            let dn = dh * z;
            let mut dh_prev = dh * &z.mapv(|v| 1.0 - v);
            let dan = dn * &n.mapv(|v| 1.0 - v * v);
            let wh_n = w.wh.slice(s![2 * hd..3 * hd, ..]);
            let drh = dan.dot(&wh_n);
            let dr = &drh * h_prev;
            dh_prev += &(&drh * r);
            let daz = dz * &z.mapv(|v| v * (1.0 - v));
            let dar = dr * &r.mapv(|v| v * (1.0 - v));
            let da_zr = concatenate![Axis(1), daz, dar];
            {
                let mut gwh_zr = grads.wh.slice_mut(s![0..2 * hd, ..]);
                general_mat_mul(1.0, &da_zr.t(), h_prev, 1.0, &mut gwh_zr);
                let mut gwh_n = grads.wh.slice_mut(s![2 * hd..3 * hd, ..]);
                general_mat_mul(1.0, &dan.t(), rh, 1.0, &mut gwh_n);
            }
            general_mat_mul(1.0, &da_zr, &w.wh.slice(s![0..2 * hd, ..]), 1.0, &mut dh_prev);
            let da = concatenate![Axis(1), da_zr, dan];
            grads.b += &da.sum_axis(Axis(0));
            general_mat_mul(1.0, &da.t(), x, 1.0, &mut grads.wx);
            let dx = da.dot(&w.wx);
            return (dx, dh_prev, Array2::zeros((0, 0)));
        }
    };
    grads.b += &da.sum_axis(Axis(0));
    general_mat_mul(1.0, &da.t(), x, 1.0, &mut grads.wx);
    general_mat_mul(1.0, &da.t(), h_prev, 1.0, &mut grads.wh);
    general_mat_mul(1.0, &da, &w.wh, 1.0, &mut dh_prev);
    let dx = da.dot(&w.wx);
    (dx, dh_prev, dc_prev)
}

/// Activations of one direction of one layer, indexed by timestep.
pub(crate) struct SeqCache {
    pub hs: Vec<Array2<f64>>,
    pub h_prev: Vec<Array2<f64>>,
    pub steps: Vec<StepCache>,
}

fn order(len: usize, reverse: bool) -> Box<dyn Iterator<Item = usize>> {
    if reverse {
        Box::new((0..len).rev())
    } else {
        Box::new(0..len)
    }
}

pub(crate) fn run_sequence(kind: CellKind, w: &CellWeights<'_>, xs: &[Array2<f64>], reverse: bool) -> SeqCache {
    let batch = xs[0].nrows();
    let hd = w.hidden();
    let mut h = Array2::zeros((batch, hd));
    let mut c = Array2::zeros((batch, hd));
    let mut hs: Vec<Option<Array2<f64>>> = (0..xs.len()).map(|_| None).collect();
    let mut h_prev: Vec<Option<Array2<f64>>> = (0..xs.len()).map(|_| None).collect();
    let mut steps: Vec<Option<StepCache>> = (0..xs.len()).map(|_| None).collect();
    for t in order(xs.len(), reverse) {
        let out = step_forward(kind, w, &xs[t], &h, &c);
        h_prev[t] = Some(std::mem::replace(&mut h, out.h.clone()));
        if let Some(c_new) = out.c {
            c = c_new;
        }
        hs[t] = Some(out.h);
        steps[t] = Some(out.cache);
    }
    SeqCache {
        hs: hs.into_iter().map(Option::unwrap).collect(),
        h_prev: h_prev.into_iter().map(Option::unwrap).collect(),
        steps: steps.into_iter().map(Option::unwrap).collect(),
    }
}

pub(crate) fn backprop_sequence(
    w: &CellWeights<'_>,
    xs: &[Array2<f64>],
    cache: &SeqCache,
    d_out: &[Array2<f64>],
    reverse: bool,
    grads: &mut CellGrads,
) -> Vec<Array2<f64>> {
    let batch = xs[0].nrows();
    let hd = w.hidden();
    let mut dh_next = Array2::zeros((batch, hd));
    let mut dc_next = Array2::zeros((batch, hd));
    let mut dxs: Vec<Option<Array2<f64>>> = (0..xs.len()).map(|_| None).collect();
    // Walk opposite to the forward order.
    for t in order(xs.len(), !reverse) {
        let dh = &d_out[t] + &dh_next;
        let (dx, dh_prev, dc_prev) = step_backward(w, &xs[t], &cache.h_prev[t], &cache.steps[t], &dh, &dc_next, grads);
        dh_next = dh_prev;
        if !dc_prev.is_empty() {
            dc_next = dc_prev;
        }
        dxs[t] = Some(dx);
    }
    dxs.into_iter().map(Option::unwrap).collect()
}

pub(crate) struct StackCache {
    /// Inputs of every layer, `layer_inputs[l][t]`.
    layer_inputs: Vec<Vec<Array2<f64>>>,
    fwd: Vec<SeqCache>,
    bwd: Vec<SeqCache>,
    top: Vec<Array2<f64>>,
}

impl StackCache {
    /// Signs of every ReLU pre-activation, used to detect kinks.
    pub(crate) fn relu_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        for seq in self.fwd.iter().chain(&self.bwd) {
            for step in &seq.steps {
                if let StepCache::Rnn { pre } = step {
                    out.extend(pre.iter().map(|&v| v > 0.0));
                }
            }
        }
        out
    }
}

fn cell_weights<'a>(layout: &ParamLayout, values: &'a [f64], layer: usize, backward: bool) -> CellWeights<'a> {
    let base = cell_slot(layer, backward);
    CellWeights {
        wx: layout.matrix(values, base),
        wh: layout.matrix(values, base + 1),
        b: layout.vector(values, base + 2),
    }
}

/// Forward pass; returns `B x output_len` predictions.
pub(crate) fn stack_forward(
    spec: &ModelSpec,
    layout: &ParamLayout,
    values: &[f64],
    xs: Vec<Array2<f64>>,
) -> (Array2<f64>, StackCache) {
    let kind = spec.arch.cell().expect("recurrent architecture");
    let mut layer_inputs = Vec::with_capacity(spec.layers);
    let mut fwd = Vec::with_capacity(spec.layers);
    let mut bwd = Vec::with_capacity(spec.layers);
    let mut current = xs;
    for layer in 0..spec.layers {
        let f = run_sequence(kind, &cell_weights(layout, values, layer, false), &current, false);
        let b = run_sequence(kind, &cell_weights(layout, values, layer, true), &current, true);
        let next: Vec<Array2<f64>> = f
            .hs
            .iter()
            .zip(&b.hs)
            .map(|(hf, hb)| concatenate![Axis(1), *hf, *hb])
            .collect();
        layer_inputs.push(std::mem::replace(&mut current, next));
        fwd.push(f);
        bwd.push(b);
    }
    let top = current;
    let head_slot = layout.slots.len() - 2;
    let head_w = layout.matrix(values, head_slot);
    let head_b = values[layout.slots[head_slot + 1].offset];
    let seq = top.len();
    let batch = top[0].nrows();
    let mut preds = Array2::zeros((batch, spec.output_len));
    for k in 0..spec.output_len {
        let t = seq - spec.output_len + k;
        let y = top[t].dot(&head_w.row(0));
        preds.column_mut(k).assign(&y.mapv(|v| v + head_b));
    }
    (
        preds,
        StackCache {
            layer_inputs,
            fwd,
            bwd,
            top,
        },
    )
}

/// Gradient of `sum(d_pred * preds)` with respect to every parameter.
pub(crate) fn stack_backward(
    spec: &ModelSpec,
    layout: &ParamLayout,
    values: &[f64],
    cache: &StackCache,
    d_pred: &Array2<f64>,
) -> Vec<f64> {
    let mut grad = vec![0.0; layout.total];
    let hd = spec.hidden_dim;
    let head_slot = layout.slots.len() - 2;
    let head_w = layout.matrix(values, head_slot);
    let seq = cache.top.len();
    let batch = d_pred.nrows();

    let mut d_layer: Vec<Array2<f64>> = (0..seq).map(|_| Array2::zeros((batch, 2 * hd))).collect();
    let mut g_head_w = Array1::<f64>::zeros(2 * hd);
    let mut g_head_b = 0.0;
    for k in 0..spec.output_len {
        let t = seq - spec.output_len + k;
        let dy = d_pred.column(k);
        g_head_w += &cache.top[t].t().dot(&dy);
        g_head_b += dy.sum();
        let outer = dy.insert_axis(Axis(1)).dot(&head_w);
        d_layer[t] += &outer;
    }
    grad[layout.slots[head_slot].range()].copy_from_slice(g_head_w.as_slice().expect("contiguous"));
    grad[layout.slots[head_slot + 1].offset] = g_head_b;

    for layer in (0..spec.layers).rev() {
        let xs = &cache.layer_inputs[layer];
        let d_f: Vec<Array2<f64>> = d_layer.iter().map(|d| d.slice(s![.., 0..hd]).to_owned()).collect();
        let d_b: Vec<Array2<f64>> = d_layer.iter().map(|d| d.slice(s![.., hd..2 * hd]).to_owned()).collect();
        let mut dxs: Option<Vec<Array2<f64>>> = None;
        for (backward, d_out, seq_cache) in [(false, &d_f, &cache.fwd[layer]), (true, &d_b, &cache.bwd[layer])] {
            let w = cell_weights(layout, values, layer, backward);
            let mut g = CellGrads::zeros(&w);
            let dx = backprop_sequence(&w, xs, seq_cache, d_out, backward, &mut g);
            let base = cell_slot(layer, backward);
            for (slot, src) in [(base, g.wx.as_slice()), (base + 1, g.wh.as_slice()), (base + 2, g.b.as_slice())] {
                grad[layout.slots[slot].range()].copy_from_slice(src.expect("owned arrays are contiguous"));
            }
            dxs = Some(match dxs {
                None => dx,
                Some(mut acc) => {
                    for (a, d) in acc.iter_mut().zip(&dx) {
                        *a += d;
                    }
                    acc
                }
            });
        }
        d_layer = dxs.expect("two directions");
    }
    grad
}
