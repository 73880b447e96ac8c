//! Analytic gradients against central differences.

mod common;

use common::{check_model, check_op, op_suite, perturbed_model, FD_TOLERANCE};
use learnerlab::autodiff::Tape;
use learnerlab::model::{Model, ModelConfig, Targets, TokenBatch};
use learnerlab::strategy::{apply, StrategySpec};

const OP_SEEDS: u64 = 20;
const MODEL_SEEDS: u64 = 3;
const MODEL_SAMPLES: usize = 30;

#[test]
fn every_tape_op_matches_finite_differences() {
    for (name, check) in op_suite() {
        for seed in 0..OP_SEEDS {
            let err = check(seed);
            assert!(err < FD_TOLERANCE, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn layernorm_gradient_with_large_offset_rows() {
    // Shifted rows stress the mean/variance backward path.
    for seed in 0..OP_SEEDS {
        let err = check_op(seed, &[(4, 5), (1, 5), (1, 5)], |k, v| if k == 0 { 3.0 + v } else { v }, |t, x| {
            t.layernorm_rows(x[0], x[1], x[2], 1e-12)
        });
        assert!(err < FD_TOLERANCE, "seed {seed}: {err:e}");
    }
}

fn check_strategy(spec: StrategySpec) {
    for seed in 0..MODEL_SEEDS {
        let err = check_model(seed, perturbed_model(seed, &spec), MODEL_SAMPLES);
        assert!(err < FD_TOLERANCE, "{} seed {seed}: relative error {err:e}", spec.label());
    }
}

#[test]
fn full_model_gradient() {
    check_strategy(StrategySpec::Full);
}

#[test]
fn learner_model_gradient_during_priming() {
    check_strategy(StrategySpec::learner(4, 1));
}

#[test]
fn learner_model_gradient_after_priming() {
    check_strategy(StrategySpec::learner(4, 0));
}

#[test]
fn sequential_adapter_gradient() {
    check_strategy(StrategySpec::AdapterSequential { hidden: 6 });
}

#[test]
fn parallel_adapter_gradient() {
    check_strategy(StrategySpec::AdapterParallel { hidden: 6, scale: 4.0 });
}

#[test]
fn regression_head_gradient() {
    let cfg = ModelConfig::micro().with_task(learnerlab::model::TaskKind::Regression, 1);
    let mut model = Model::<f64>::build(cfg, 7).unwrap();
    apply(&StrategySpec::learner(3, 0), &mut model, 7).unwrap();
    let batch = TokenBatch::from_sequences(&[vec![1, 5, 9, 2], vec![1, 7, 2]]);
    let targets = Targets::Values(vec![0.3, -1.2]);
    let mut tape = Tape::new();
    let logits = model.forward(&mut tape, &batch).unwrap();
    let loss = model.loss(&mut tape, logits, &targets).unwrap();
    tape.backward(loss, model.params_mut()).unwrap();
    let id = model.params().id_of("classifier.out.bias").unwrap();
    let analytic = model.params().get(id).grad.as_ref().unwrap().get(0, 0);
    let eval = |m: &Model<f64>| {
        let mut t = Tape::new();
        let l = m.forward(&mut t, &batch).unwrap();
        let loss = m.loss(&mut t, l, &targets).unwrap();
        t.value(loss).get(0, 0)
    };
    let h = common::FD_STEP;
    let orig = model.params().get(id).value.get(0, 0);
    model.params_mut().get_mut(id).value.set(0, 0, orig + h);
    let up = eval(&model);
    model.params_mut().get_mut(id).value.set(0, 0, orig - h);
    let down = eval(&model);
    assert!(common::rel_err(analytic, (up - down) / (2.0 * h)) < FD_TOLERANCE);
}

#[test]
fn tape_is_deterministic() {
    let model = perturbed_model(5, &StrategySpec::learner(4, 1));
    let batch = TokenBatch::from_sequences(&[vec![1, 4, 8, 15, 2], vec![1, 16, 23, 2]]);
    let targets = Targets::Classes(vec![1, 0]);
    let grads = |mut m: Model<f64>| {
        let mut tape = Tape::new();
        let logits = m.forward(&mut tape, &batch).unwrap();
        let loss = m.loss(&mut tape, logits, &targets).unwrap();
        tape.backward(loss, m.params_mut()).unwrap();
        m.params()
            .iter()
            .map(|(_, p)| p.grad.as_ref().map(|g| g.data().to_vec()))
            .collect::<Vec<_>>()
    };
    assert_eq!(grads(model.clone()), grads(model));
}

#[test]
fn frozen_parameters_receive_no_gradient() {
    for spec in [
        StrategySpec::Bitfit,
        StrategySpec::FreezeFfns,
        StrategySpec::learner(4, 0),
        StrategySpec::AdapterSequential { hidden: 4 },
    ] {
        let mut model = perturbed_model(2, &spec);
        let batch = TokenBatch::from_sequences(&[vec![1, 4, 8, 2]]);
        let mut tape = Tape::new();
        let logits = model.forward(&mut tape, &batch).unwrap();
        let loss = model.loss(&mut tape, logits, &Targets::Classes(vec![1])).unwrap();
        tape.backward(loss, model.params_mut()).unwrap();
        for (_, p) in model.params().iter() {
            if !p.trainable {
                assert!(p.grad.is_none(), "{}: frozen {} has a gradient", spec.label(), p.name);
            }
        }
    }
}

#[test]
fn matmul_example_within_1e_6() {
    let err = check_op(11, &[(4, 3), (3, 5)], common::identity_init, |t, x| t.matmul(x[0], x[1]));
    assert!(err <= 1e-6, "{err:e}");
}

#[test]
fn gelu_derivative_at_half_within_1e_6() {
    use learnerlab::tensor::{gelu, gelu_derivative};
    let h = common::FD_STEP;
    let numeric = (gelu(0.5 + h) - gelu(0.5 - h)) / (2.0 * h);
    assert!(common::rel_err(gelu_derivative(0.5), numeric) <= 1e-6);
}

#[test]
fn softmax_jacobian_example_within_1e_5() {
    let err = check_op(12, &[(2, 4)], common::identity_init, |t, x| Ok(t.softmax_rows(x[0])));
    assert!(err <= 1e-5, "{err:e}");
}

#[test]
fn layernorm_example_within_1e_5() {
    let err = check_op(13, &[(3, 5), (1, 5), (1, 5)], common::identity_init, |t, x| {
        t.layernorm_rows(x[0], x[1], x[2], 1e-12)
    });
    assert!(err <= 1e-5, "{err:e}");
}

#[test]
fn squared_projection_norm_within_1e_5() {
    let err = check_op(14, &[(3, 4), (5, 4)], common::identity_init, |t, x| {
        let y = t.matmul_nt(x[0], x[1])?;
        let sq = t.mul(y, y)?;
        Ok(t.sum(sq))
    });
    assert!(err <= 1e-5, "{err:e}");
}

#[test]
fn learner_projection_gradients_within_1e_5() {
    // Inputs: x, W, b, P1, P2.
    let err = check_op(15, &[(5, 4), (3, 4), (1, 3), (2, 4), (3, 2)], common::identity_init, |t, x| {
        let host = t.matmul_nt(x[0], x[1])?;
        let host = t.add_row(host, x[2])?;
        let low = t.matmul_nt(x[0], x[3])?;
        let low = t.matmul_nt(low, x[4])?;
        t.add(host, low)
    });
    assert!(err <= 1e-5, "{err:e}");
}

#[test]
fn adapter_branch_gradients_within_1e_5() {
    // Inputs: x, L1, b1, L2, b2; residual sequential form.
    let err = check_op(16, &[(4, 6), (3, 6), (1, 3), (6, 3), (1, 6)], common::identity_init, |t, x| {
        let h = t.matmul_nt(x[0], x[1])?;
        let h = t.add_row(h, x[2])?;
        let h = t.gelu(h);
        let y = t.matmul_nt(h, x[3])?;
        let y = t.add_row(y, x[4])?;
        t.add(x[0], y)
    });
    assert!(err <= 1e-5, "{err:e}");
}

#[test]
fn embedding_row_gradient_within_1e_4() {
    let mut model = Model::<f64>::build(ModelConfig::micro(), 4).unwrap();
    let batch = TokenBatch::from_sequences(&[vec![1, 9, 17, 9, 2], vec![1, 30, 9]]);
    let targets = Targets::Classes(vec![1, 0]);
    let eval = |m: &Model<f64>| {
        let mut t = Tape::new();
        let l = m.forward(&mut t, &batch).unwrap();
        let loss = m.loss(&mut t, l, &targets).unwrap();
        t.value(loss).get(0, 0)
    };
    let mut tape = Tape::new();
    let logits = model.forward(&mut tape, &batch).unwrap();
    let loss = model.loss(&mut tape, logits, &targets).unwrap();
    tape.backward(loss, model.params_mut()).unwrap();
    let id = model.params().id_of("embeddings.word.weight").unwrap();
    let grad = model.params().get(id).grad.clone().unwrap();
    let row = 9;
    let h = common::FD_STEP;
    for c in 0..model.config().d_model {
        let orig = model.params().get(id).value.get(row, c);
        model.params_mut().get_mut(id).value.set(row, c, orig + h);
        let up = eval(&model);
        model.params_mut().get_mut(id).value.set(row, c, orig - h);
        let down = eval(&model);
        model.params_mut().get_mut(id).value.set(row, c, orig);
        let err = common::rel_err(grad.get(row, c), (up - down) / (2.0 * h));
        assert!(err <= 1e-4, "column {c}: {err:e}");
    }
}
