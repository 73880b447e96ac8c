//! Central-difference gradient oracle shared by the integration suites.
#![allow(dead_code)]

use learnerlab::autodiff::{NodeId, Tape};
use learnerlab::model::{Model, ModelConfig, Targets, TokenBatch, CLS_TOKEN};
use learnerlab::param::{ParamGroup, ParamId, ParamStore};
use learnerlab::strategy::{apply, StrategySpec};
use learnerlab::tensor::DenseMatrix;
use learnerlab::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms against it.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> DenseMatrix<f64> {
    DenseMatrix::from_fn(rows, cols, |_, _| {
        let z: f64 = StandardNormal.sample(rng);
        scale * z
    })
}

/// Builds `Σ op(inputs) ⊙ R` for a fixed random `R`, so every output entry
/// carries a distinct upstream gradient.
fn weighted_loss<F>(tape: &mut Tape<f64>, store: &ParamStore<f64>, ids: &[ParamId], weights_seed: u64, op: &F) -> Result<NodeId>
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let inputs: Vec<NodeId> = ids.iter().map(|&id| tape.param(store, id)).collect();
    let out = op(tape, &inputs)?;
    let (r, c) = tape.value(out).shape();
    let mut rng = ChaCha8Rng::seed_from_u64(weights_seed);
    let w = tape.input(random_matrix(&mut rng, r, c, 1.0));
    let prod = tape.mul(out, w)?;
    Ok(tape.sum(prod))
}

/// Max relative error over every input entry of `op` applied to random
/// inputs of the given shapes. `init` may reshape inputs (e.g. to keep them
/// positive or away from kinks).
pub fn check_op<F>(seed: u64, shapes: &[(usize, usize)], init: impl Fn(usize, f64) -> f64, op: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new(true);
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(k, &(r, c))| {
            let m = DenseMatrix::from_fn(r, c, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                init(k, z)
            });
            store.register(format!("in{k}.weight"), (r, c), ParamGroup::FfnWeight, || m.clone()).unwrap()
        })
        .collect();
    let weights_seed = seed.wrapping_add(1_000);

    let mut tape = Tape::new();
    let loss = weighted_loss(&mut tape, &store, &ids, weights_seed, &op).unwrap();
    tape.backward(loss, &mut store).unwrap();
    let analytic: Vec<DenseMatrix<f64>> = ids.iter().map(|&id| store.get(id).grad.clone().unwrap()).collect();

    let eval = |store: &ParamStore<f64>| {
        let mut tape = Tape::new();
        let loss = weighted_loss(&mut tape, store, &ids, weights_seed, &op).unwrap();
        tape.value(loss).get(0, 0)
    };
    let mut worst: f64 = 0.0;
    for (k, &id) in ids.iter().enumerate() {
        for i in 0..store.get(id).value.len() {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + FD_STEP;
            let up = eval(&store);
            store.get_mut(id).value.data_mut()[i] = orig - FD_STEP;
            let down = eval(&store);
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[k].data()[i], numeric));
        }
    }
    worst
}

pub fn identity_init(_: usize, v: f64) -> f64 {
    v
}

/// Seed to max relative error.
pub type OpCheck = Box<dyn Fn(u64) -> f64>;

/// Every differentiable tape op with the inputs it is checked on.
pub fn op_suite() -> Vec<(&'static str, OpCheck)> {
    let mut ops: Vec<(&'static str, OpCheck)> = Vec::new();
    ops.push(("matmul", Box::new(|s| check_op(s, &[(3, 4), (4, 5)], identity_init, |t, x| t.matmul(x[0], x[1])))));
    ops.push(("matmul_nt", Box::new(|s| check_op(s, &[(3, 4), (5, 4)], identity_init, |t, x| t.matmul_nt(x[0], x[1])))));
    ops.push(("add", Box::new(|s| check_op(s, &[(3, 4), (3, 4)], identity_init, |t, x| t.add(x[0], x[1])))));
    ops.push(("sub", Box::new(|s| check_op(s, &[(3, 4), (3, 4)], identity_init, |t, x| t.sub(x[0], x[1])))));
    ops.push(("mul", Box::new(|s| check_op(s, &[(3, 4), (3, 4)], identity_init, |t, x| t.mul(x[0], x[1])))));
    ops.push(("add_row", Box::new(|s| check_op(s, &[(3, 4), (1, 4)], identity_init, |t, x| t.add_row(x[0], x[1])))));
    ops.push(("scale", Box::new(|s| check_op(s, &[(3, 4)], identity_init, |t, x| Ok(t.scale(x[0], -1.7))))));
    ops.push(("gelu", Box::new(|s| check_op(s, &[(3, 4)], identity_init, |t, x| Ok(t.gelu(x[0]))))));
    ops.push(("tanh", Box::new(|s| check_op(s, &[(3, 4)], identity_init, |t, x| Ok(t.tanh(x[0]))))));
    ops.push(("softmax_rows", Box::new(|s| check_op(s, &[(3, 5)], identity_init, |t, x| Ok(t.softmax_rows(x[0]))))));
    ops.push((
        "layernorm_rows",
        Box::new(|s| {
            check_op(s, &[(3, 6), (1, 6), (1, 6)], identity_init, |t, x| {
                t.layernorm_rows(x[0], x[1], x[2], 1e-12)
            })
        }),
    ));
    ops.push(("slice", Box::new(|s| check_op(s, &[(4, 6)], identity_init, |t, x| t.slice(x[0], 1, 2, 2, 3)))));
    ops.push(("concat_cols", Box::new(|s| check_op(s, &[(3, 2), (3, 4)], identity_init, |t, x| t.concat_cols(&[x[0], x[1], x[0]])))));
    ops.push(("concat_rows", Box::new(|s| check_op(s, &[(2, 3), (4, 3)], identity_init, |t, x| t.concat_rows(&[x[1], x[0]])))));
    ops.push(("gather_rows", Box::new(|s| check_op(s, &[(5, 3)], identity_init, |t, x| t.gather_rows(x[0], vec![4, 0, 4, 2])))));
    ops.push(("sum", Box::new(|s| check_op(s, &[(3, 4)], identity_init, |t, x| Ok(t.sum(x[0]))))));
    ops.push(("cross_entropy", Box::new(|s| check_op(s, &[(4, 3)], identity_init, |t, x| t.cross_entropy(x[0], &[2, 0, 1, 2])))));
    ops.push((
        "mse",
        Box::new(|s| {
            check_op(s, &[(4, 1)], identity_init, |t, x| {
                t.mse(x[0], DenseMatrix::from_vec(4, 1, vec![0.5, -1.0, 2.0, 0.0]).unwrap())
            })
        }),
    ));
    ops
}

/// Model whose every module is non-trivial: learner `P2` and adapter `L2`
/// are randomized so their gradients do not vanish.
pub fn perturbed_model(seed: u64, spec: &StrategySpec) -> Model<f64> {
    let mut model = Model::<f64>::build(ModelConfig::micro(), seed).unwrap();
    apply(spec, &mut model, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    let ids: Vec<ParamId> = model
        .params()
        .iter()
        .filter(|(_, p)| p.name.ends_with(".p2") || p.name.contains(".l2.") || p.name.contains("_ln.") || p.name.ends_with(".bias"))
        .map(|(id, _)| id)
        .collect();
    for id in ids {
        let (r, c) = model.params().get(id).shape();
        let noise = random_matrix(&mut rng, r, c, 0.1);
        let v = model.params().get(id).value.add(&noise).unwrap();
        model.params_mut().set_value(id, v).unwrap();
    }
    model
}

pub fn random_batch(rng: &mut ChaCha8Rng, vocab: usize) -> (TokenBatch, Targets) {
    let seqs: Vec<Vec<usize>> = (0..3)
        .map(|_| {
            let n = rng.random_range(3..=7);
            let mut s = vec![CLS_TOKEN];
            s.extend((1..n).map(|_| rng.random_range(3..vocab)));
            s
        })
        .collect();
    let labels = (0..3).map(|_| rng.random_range(0..2)).collect();
    (TokenBatch::from_sequences(&seqs), Targets::Classes(labels))
}

/// End-to-end loss gradient of `model` against central differences on
/// `samples` randomly chosen trainable coordinates. Returns the max error.
pub fn check_model(seed: u64, mut model: Model<f64>, samples: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xbeef);
    let (batch, targets) = random_batch(&mut rng, model.config().vocab_size);
    let loss_of = |m: &Model<f64>| {
        let mut tape = Tape::new();
        let logits = m.forward(&mut tape, &batch).unwrap();
        let loss = m.loss(&mut tape, logits, &targets).unwrap();
        tape.value(loss).get(0, 0)
    };
    let mut tape = Tape::new();
    let logits = model.forward(&mut tape, &batch).unwrap();
    let loss = model.loss(&mut tape, logits, &targets).unwrap();
    tape.backward(loss, model.params_mut()).unwrap();

    let trainable: Vec<ParamId> = model
        .params()
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(id, _)| id)
        .collect();
    let mut worst: f64 = 0.0;
    for k in 0..samples {
        // Cycle through parameters so every one is visited at least once
        // when `samples` exceeds their number.
        let id = trainable[k % trainable.len()];
        let n = model.params().get(id).value.len();
        let i = if model.params().get(id).name == "embeddings.word.weight" {
            // Only rows present in the batch carry gradient.
            let row = batch.ids[rng.random_range(0..batch.ids.len())];
            row * model.config().d_model + rng.random_range(0..model.config().d_model)
        } else {
            rng.random_range(0..n)
        };
        let analytic = model.params().get(id).grad.as_ref().unwrap().data()[i];
        let orig = model.params().get(id).value.data()[i];
        model.params_mut().get_mut(id).value.data_mut()[i] = orig + FD_STEP;
        let up = loss_of(&model);
        model.params_mut().get_mut(id).value.data_mut()[i] = orig - FD_STEP;
        let down = loss_of(&model);
        model.params_mut().get_mut(id).value.data_mut()[i] = orig;
        worst = worst.max(rel_err(analytic, (up - down) / (2.0 * FD_STEP)));
    }
    worst
}
