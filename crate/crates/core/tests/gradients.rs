mod common;

use artgnn::autodiff::{finite_difference_check, ParamId, Tape};
use artgnn::model::BoundParams;
use artgnn::{Matrix, ModelConfig, ModelParams};
use common::{objective, small_model, ten_node_graph};

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let graph = ten_node_graph();
    for k in 1..=3 {
        let config = small_model(k);
        let params = ModelParams::init(&config, k as u64).unwrap();
        let check =
            finite_difference_check(params.tensors(), objective(&config, &graph, 1.0), 1e-5, 1e-4)
                .unwrap();
        assert_eq!(check.checked, params.parameter_count());
        assert!(check.passed, "K={k}: {check:?}");
    }
}

#[test]
fn two_layer_model_at_coarse_step() {
    let graph = ten_node_graph();
    let config = small_model(2);
    for seed in 0..4 {
        let params = ModelParams::init(&config, seed).unwrap();
        let check =
            finite_difference_check(params.tensors(), objective(&config, &graph, 1.0), 1e-4, 1e-4)
                .unwrap();
        assert!(check.passed, "seed {seed}: {check:?}");
    }
}

#[test]
fn zero_parameters_use_the_right_hand_elu_branch() {
    // All pre-activations sit exactly at the ELU kink; gradients must
    // agree with forward differences.
    let config = ModelConfig {
        input_dim: 3,
        gc_layers: 0,
        gc_width: 6,
        backend_widths: vec![4, 4],
        output_dim: 2,
    };
    let shapes: Vec<Matrix> = ModelParams::init(&config, 0)
        .unwrap()
        .tensors()
        .iter()
        .map(|t| Matrix::zeros(t.rows(), t.cols()))
        .collect();
    let params = ModelParams::from_tensors(&config, shapes).unwrap();
    let x = Matrix::from_rows(&[&[0.5, -1.0], &[2.0, 0.25], &[-0.75, 1.5]]);
    let loss = |tensors: &[Matrix]| {
        let mut tape = Tape::new();
        let vars = tensors
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(ParamId(i), t.clone()))
            .collect();
        let input = tape.input(x.clone());
        let out = params
            .backend_on_tape(&mut tape, &BoundParams::from_vars(vars), input)
            .unwrap();
        let root = tape.sum(out).unwrap();
        (tape.value(root).get(0, 0), tape.backward(root).unwrap())
    };
    let (_, grads) = loss(params.tensors());
    let h = 1e-7;
    let mut probe = params.tensors().to_vec();
    for pi in 0..probe.len() {
        let analytic = grads.get(ParamId(pi)).unwrap().clone();
        for e in 0..probe[pi].len() {
            let base = loss(&probe).0;
            probe[pi].as_mut_slice()[e] += h;
            let numeric = (loss(&probe).0 - base) / h;
            probe[pi].as_mut_slice()[e] -= h;
            let a = analytic.as_slice()[e];
            assert!((a - numeric).abs() <= 1e-5 * a.abs().max(1.0), "param {pi}[{e}]: {a} vs {numeric}");
        }
    }
    assert!(grads.iter().all(|(_, g)| g.is_finite()));
    // Only the head bias sees a nonzero gradient when everything is zero.
    let head_bias = grads.get(ParamId(probe.len() - 1)).unwrap();
    assert_eq!(head_bias.as_slice(), &[2.0, 2.0]);
}
