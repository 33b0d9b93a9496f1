use ndarray::{array, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::exec::Execution;

fn random_features(rng: &mut ChaCha8Rng, count: usize, seq: usize, width: usize) -> Vec<Array2<f64>> {
    (0..count)
        .map(|_| Array2::from_shape_fn((seq, width), |_| rng.random_range(-1.0..1.0)))
        .collect()
}

fn random_labels(rng: &mut ChaCha8Rng, count: usize, len: usize) -> Vec<Vec<f64>> {
    (0..count).map(|_| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
}

fn small(arch: Architecture) -> ModelSpec {
    ModelSpec::new(arch, 2).with_hidden(3).with_window(6, 3)
}

#[test]
fn rnn_cell_zero_and_identity() {
    let zeros = Array2::<f64>::zeros((2, 2));
    let b = Array1::<f64>::zeros(2);
    let w = CellWeights {
        wx: zeros.view(),
        wh: zeros.view(),
        b: b.view(),
    };
    let out = cell_forward(CellKind::Rnn, &w, &[3.0, -4.0], &CellState::zeros(2)).unwrap();
    assert_eq!(out.h, vec![0.0, 0.0]);

    let eye = Array2::<f64>::eye(2);
    let w = CellWeights {
        wx: eye.view(),
        wh: zeros.view(),
        b: b.view(),
    };
    let out = cell_forward(CellKind::Rnn, &w, &[-1.0, 2.0], &CellState::zeros(2)).unwrap();
    assert_eq!(out.h, vec![0.0, 2.0]);
    assert!(matches!(
        cell_forward(CellKind::Rnn, &w, &[1.0], &CellState::zeros(2)),
        Err(NnError::ShapeMismatch(_))
    ));
}

#[test]
fn gru_closed_update_gate_keeps_state() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 3;
    let wx = Array2::from_shape_fn((3 * h, 2), |_| rng.random_range(-0.5..0.5));
    let wh = Array2::from_shape_fn((3 * h, h), |_| rng.random_range(-0.5..0.5));
    let mut b = Array1::<f64>::zeros(3 * h);
    b.slice_mut(ndarray::s![0..h]).fill(-50.0);
    let w = CellWeights {
        wx: wx.view(),
        wh: wh.view(),
        b: b.view(),
    };
    let state = CellState {
        h: vec![0.3, -0.7, 0.1],
        c: vec![0.0; 3],
    };
    let out = cell_forward(CellKind::Gru, &w, &[0.9, -0.4], &state).unwrap();
    for (a, b) in out.h.iter().zip(&state.h) {
        assert!((a - b).abs() < 1e-9);
    }
}

#[test]
fn lstm_cell_matches_formula() {
    let wx = array![[0.5], [-0.3], [0.8], [0.1]];
    let wh = array![[0.2], [0.4], [-0.6], [0.3]];
    let b = array![0.0, 0.1, -0.1, 0.2];
    let w = CellWeights {
        wx: wx.view(),
        wh: wh.view(),
        b: b.view(),
    };
    let state = CellState {
        h: vec![0.5],
        c: vec![-0.2],
    };
    let out = cell_forward(CellKind::Lstm, &w, &[1.5], &state).unwrap();
    let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
    let i = sig(0.75 + 0.1);
    let f = sig(-0.45 + 0.2 + 0.1);
    let g = (1.2 - 0.3 - 0.1f64).tanh();
    let o = sig(0.15 + 0.15 + 0.2);
    let c = f * -0.2 + i * g;
    assert!((out.c[0] - c).abs() < 1e-15);
    assert!((out.h[0] - o * c.tanh()).abs() < 1e-15);
}

#[test]
fn zero_params_predict_head_bias() {
    for arch in [Architecture::Birnn, Architecture::Bilstm, Architecture::Bigru] {
        let mut p = ModelParams::zeros(ModelSpec::new(arch, 4)).unwrap();
        p.tensor_mut("head.b").unwrap()[0] = 0.37;
        let x = Array2::from_shape_fn((24, 4), |(t, f)| (t as f64 - f as f64) * 0.1);
        let out = p.forward(&x).unwrap();
        assert_eq!(out.predictions, vec![0.37; 3], "{arch:?}");
    }
}

#[test]
fn birnn_hand_computed() {
    let spec = ModelSpec::new(Architecture::Birnn, 1).with_hidden(1).with_layers(1).with_window(3, 3);
    let mut p = ModelParams::zeros(spec).unwrap();
    p.tensor_mut("l0.fwd.wx").unwrap()[0] = 1.0;
    p.tensor_mut("l0.fwd.wh").unwrap()[0] = 0.5;
    p.tensor_mut("l0.bwd.wx").unwrap()[0] = 2.0;
    p.tensor_mut("l0.bwd.wh").unwrap()[0] = 0.3;
    p.tensor_mut("l0.bwd.b").unwrap()[0] = 0.1;
    p.tensor_mut("head.w").unwrap().copy_from_slice(&[1.0, -1.0]);
    p.tensor_mut("head.b").unwrap()[0] = 0.2;
    let x = array![[1.0], [-2.0], [3.0]];
    // Forward direction: h = relu(x + 0.5 h) -> 1, 0, 3.
    // Backward direction: h = relu(2x + 0.3 h + 0.1) from the right -> 6.1, 0, 2.1.
    let expected = [1.0 - 2.1 + 0.2, 0.0 - 0.0 + 0.2, 3.0 - 6.1 + 0.2];
    let out = p.forward(&x).unwrap();
    for (got, want) in out.predictions.iter().zip(expected) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn output_shape_for_every_architecture() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for arch in Architecture::ALL {
        for width in [1, 7, 16] {
            let p = ModelParams::init(ModelSpec::new(arch, width).with_hidden(4), 1).unwrap();
            let x = random_features(&mut rng, 1, 24, width).remove(0);
            assert_eq!(p.forward(&x).unwrap().predictions.len(), 3);
            let wrong = Array2::zeros((23, width));
            assert!(matches!(p.forward(&wrong), Err(NnError::ShapeMismatch(_))));
        }
    }
}

#[test]
fn param_count_is_deterministic() {
    let p = ModelParams::zeros(ModelSpec::new(Architecture::Birnn, 16)).unwrap();
    // l0: 2*(32*16 + 32*32 + 32), l1: 2*(32*64 + 32*32 + 32), head: 65.
    assert_eq!(p.param_count(), 2 * (512 + 1024 + 32) + 2 * (2048 + 1024 + 32) + 65);
    let lstm = ModelParams::zeros(ModelSpec::new(Architecture::Bilstm, 16)).unwrap();
    assert_eq!(lstm.param_count(), 4 * (p.param_count() - 65) + 65);
}

#[test]
fn mlp_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let naive = ModelParams::init(ModelSpec::new(Architecture::NaiveMlp, 3), 2).unwrap();
    for x in random_features(&mut rng, 10, 24, 3) {
        let p = naive.forward(&x).unwrap().predictions;
        assert_eq!(p[0].to_bits(), p[1].to_bits());
        assert_eq!(p[1].to_bits(), p[2].to_bits());
    }

    let mut smart = ModelParams::zeros(ModelSpec::new(Architecture::SmartMlp, 3)).unwrap();
    smart.tensor_mut("fc2.b").unwrap().copy_from_slice(&[0.1, 0.2, 0.3]);
    let x = random_features(&mut rng, 1, 24, 3).remove(0);
    assert_eq!(smart.forward(&x).unwrap().predictions, vec![0.1, 0.2, 0.3]);
}

#[test]
fn smart_mlp_hand_computed() {
    let spec = ModelSpec::new(Architecture::SmartMlp, 1).with_hidden(1).with_window(2, 3);
    let mut p = ModelParams::zeros(spec).unwrap();
    p.tensor_mut("fc1.w").unwrap().copy_from_slice(&[0.5, -1.0]);
    p.tensor_mut("fc1.b").unwrap()[0] = 0.1;
    p.tensor_mut("fc2.w").unwrap().copy_from_slice(&[1.0, 2.0, 3.0]);
    p.tensor_mut("fc2.b").unwrap().copy_from_slice(&[0.0, 0.1, -0.1]);
    // hidden = relu(0.5*2 - 1*0.5 + 0.1) = 0.6
    let out = p.forward(&array![[2.0], [0.5]]).unwrap().predictions;
    for (got, want) in out.iter().zip([0.6, 1.3, 1.7]) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn mse_values() {
    assert_eq!(loss_mse(&[0.4, 0.5, 0.6], &[0.4, 0.5, 0.6]).unwrap(), 0.0);
    assert_eq!(loss_mse(&[1.0, 1.0, 1.0], &[0.0, 0.0, 0.0]).unwrap(), 1.0);
    let v = loss_mse(&[0.1, 0.2, 0.3], &[0.2, 0.2, 0.2]).unwrap();
    assert!((v - 0.02 / 3.0).abs() < 1e-15);
    assert!(matches!(loss_mse(&[1.0], &[1.0, 2.0]), Err(NnError::LengthMismatch { .. })));
}

#[test]
fn dead_relu_gradient_is_zero() {
    let p = ModelParams::zeros(small(Architecture::Birnn)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x = random_features(&mut rng, 4, 6, 2);
    let y = random_labels(&mut rng, 4, 3);
    let (_, grad) = p.loss_and_grad(&x, &y, Execution::Sequential).unwrap();
    let wx = p.layout().slots.iter().find(|s| s.name == "l0.fwd.wx").unwrap();
    assert!(grad[wx.range()].iter().all(|&g| g == 0.0));
    let head_b = p.layout().slots.last().unwrap();
    assert!(grad[head_b.offset] != 0.0);
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = random_features(&mut rng, 5, 6, 2);
    let y = random_labels(&mut rng, 5, 3);
    for arch in Architecture::ALL {
        let p = ModelParams::init(small(arch), 9).unwrap();
        let report = gradient_check(&p, &x, &y, 1e-5).unwrap();
        assert!(report.checked > 0);
        assert!(report.max_rel_error < 1e-4, "{arch:?}: {report:?}");
    }
}

#[test]
fn duplicated_batch_has_same_mean_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = random_features(&mut rng, 1, 6, 2);
    let y = random_labels(&mut rng, 1, 3);
    let p = ModelParams::init(small(Architecture::Bigru), 4).unwrap();
    let (l1, g1) = p.loss_and_grad(&x, &y, Execution::Sequential).unwrap();
    let x2 = vec![x[0].clone(), x[0].clone()];
    let y2 = vec![y[0].clone(), y[0].clone()];
    let (l2, g2) = p.loss_and_grad(&x2, &y2, Execution::Sequential).unwrap();
    assert!((l1 - l2).abs() < 1e-15);
    for (a, b) in g1.iter().zip(&g2) {
        assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
    }
}

#[test]
fn chunked_gradient_is_execution_independent() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let x = random_features(&mut rng, 100, 6, 2);
    let y = random_labels(&mut rng, 100, 3);
    let p = ModelParams::init(small(Architecture::Bilstm), 4).unwrap();
    let (ls, gs) = p.loss_and_grad(&x, &y, Execution::Sequential).unwrap();
    let (lp, gp) = p.loss_and_grad(&x, &y, Execution::Parallel).unwrap();
    assert_eq!(ls.to_bits(), lp.to_bits());
    assert!(gs.iter().zip(&gp).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn permuting_features_changes_output() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let p = ModelParams::init(ModelSpec::new(Architecture::Birnn, 4).with_hidden(8), 3).unwrap();
    let x = random_features(&mut rng, 1, 24, 4).remove(0);
    let mut permuted = x.clone();
    for t in 0..24 {
        permuted.row_mut(t).assign(&array![x[[t, 3]], x[[t, 0]], x[[t, 1]], x[[t, 2]]]);
    }
    assert_ne!(p.forward(&x).unwrap(), p.forward(&permuted).unwrap());
}

#[test]
fn train_contracts() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_features(&mut rng, 8, 6, 2);
    let y = random_labels(&mut rng, 8, 3);
    let spec = small(Architecture::Birnn);
    let zero = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    assert!(matches!(
        train(ModelParams::init(spec, 0).unwrap(), &x, &y, &zero, Execution::Sequential),
        Err(NnError::InvalidConfig(_))
    ));
    let one = TrainConfig {
        epochs: 1,
        ..TrainConfig::default()
    };
    let init = ModelParams::init(spec, 0).unwrap();
    let out = train(init.clone(), &x, &y, &one, Execution::Sequential).unwrap();
    assert_eq!(out.history.len(), 1);
    assert_ne!(out.params, init);

    let cfg = TrainConfig {
        epochs: 30,
        seed: 7,
        ..TrainConfig::default()
    };
    let a = train(ModelParams::init(spec, cfg.seed).unwrap(), &x, &y, &cfg, Execution::Sequential).unwrap();
    let b = train(ModelParams::init(spec, cfg.seed).unwrap(), &x, &y, &cfg, Execution::Parallel).unwrap();
    assert!(a.params.values().iter().zip(b.params.values()).all(|(p, q)| p.to_bits() == q.to_bits()));
    assert!(a.history.last().unwrap() < &a.history[0]);
}

#[test]
fn linear_mlp_descends_monotonically() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let x = random_features(&mut rng, 20, 4, 2);
    let y = random_labels(&mut rng, 20, 3);
    let spec = ModelSpec::new(Architecture::SmartMlp, 2)
        .with_hidden(4)
        .with_window(4, 3)
        .with_activation(Activation::Identity);
    let cfg = TrainConfig {
        epochs: 200,
        learning_rate: 0.01,
        optimizer: Optimizer::Sgd,
        ..TrainConfig::default()
    };
    let out = train(ModelParams::init(spec, 1).unwrap(), &x, &y, &cfg, Execution::Sequential).unwrap();
    assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn divergence_is_reported() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x: Vec<Array2<f64>> = random_features(&mut rng, 4, 4, 2).into_iter().map(|a| a * 1e3).collect();
    let y = random_labels(&mut rng, 4, 3);
    let spec = ModelSpec::new(Architecture::SmartMlp, 2).with_hidden(4).with_window(4, 3).with_activation(Activation::Identity);
    let cfg = TrainConfig {
        epochs: 500,
        learning_rate: 10.0,
        optimizer: Optimizer::Sgd,
        ..TrainConfig::default()
    };
    let err = train(ModelParams::init(spec, 1).unwrap(), &x, &y, &cfg, Execution::Sequential).unwrap_err();
    assert!(matches!(err, NnError::Diverged { .. }), "{err:?}");
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let p = ModelParams::init(small(Architecture::Bilstm), 99).unwrap();
    write_checkpoint(&path, &p, 99, "cafe").unwrap();
    let (header, back) = read_checkpoint(&path).unwrap();
    assert_eq!(header.seed, 99);
    assert_eq!(header.config_hash, "cafe");
    assert_eq!(back, p);
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(read_checkpoint(&path).is_err());
}
