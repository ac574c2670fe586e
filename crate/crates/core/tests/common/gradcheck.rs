//! Central finite-difference checks of analytic gradients. Each check
//! returns the worst relative error it saw.

use super::fixtures;
use jptdp::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use jptdp::eisner::ParseTree;
use jptdp::layers::{lstm_step, mlp_apply, LstmParams, MlpParams, Vocab};
use jptdp::model::{seeded_rng, Hyperparams, ModelParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-5;

/// `|a - b| / max(|a|, |b|)`, with the denominator floored so that gradients
/// that are numerically zero compare on an absolute scale.
fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[derive(Clone, Copy, Debug)]
enum OpKind {
    MatVec,
    Add,
    Sub,
    Mul,
    Concat,
    Slice,
    Tanh,
    Logistic,
    MaxScalar,
    Pick,
    Sum,
    MatVecBlock,
    Shift,
    Noise,
}

const ALL_OPS: [OpKind; 14] = [
    OpKind::MatVec,
    OpKind::Add,
    OpKind::Sub,
    OpKind::Mul,
    OpKind::Concat,
    OpKind::Slice,
    OpKind::Tanh,
    OpKind::Logistic,
    OpKind::MaxScalar,
    OpKind::Pick,
    OpKind::Sum,
    OpKind::MatVecBlock,
    OpKind::Shift,
    OpKind::Noise,
];

/// A recipe for a random graph: leaf tensors and a list of ops, each with
/// operand choices fixed up front so the same graph can be rebuilt with
/// perturbed leaves.
struct Recipe {
    leaves: Vec<Tensor>,
    steps: Vec<(OpKind, usize, usize, usize)>,
    gold: usize,
}

const DIM: usize = 4;

fn random_recipe(rng: &mut ChaCha8Rng, len: usize, forced: Option<OpKind>) -> Recipe {
    let mut leaves = Vec::new();
    for _ in 0..3 {
        leaves.push(Tensor::vector((0..DIM).map(|_| rng.random_range(-1.5..1.5)).collect()));
    }
    leaves.push(Tensor::matrix(DIM, DIM, (0..DIM * DIM).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap());
    let steps = (0..len)
        .map(|i| {
            let op = match (i, forced) {
                (0, Some(op)) => op,
                _ => ALL_OPS[rng.random_range(0..ALL_OPS.len())],
            };
            (
                op,
                rng.random::<u32>() as usize,
                rng.random::<u32>() as usize,
                rng.random_range(0..DIM),
            )
        })
        .collect();
    Recipe {
        leaves,
        steps,
        gold: rng.random_range(0..DIM),
    }
}

/// Builds the recipe, keeping every intermediate a DIM-vector, and ends with
/// neg_log_softmax so the loss is a scalar.
fn build(g: &mut Graph, recipe: &Recipe, leaves: &[Tensor]) -> (Vec<Var>, Var) {
    let leaf_vars: Vec<Var> = leaves.iter().map(|t| g.input(t.clone())).collect();
    let matrix = leaf_vars[3];
    let mut pool: Vec<Var> = leaf_vars[..3].to_vec();
    for &(op, a, b, k) in &recipe.steps {
        let x = pool[a % pool.len()];
        let y = pool[b % pool.len()];
        let out = match op {
            OpKind::MatVec => g.matvec(matrix, x).unwrap(),
            OpKind::Add => g.add(x, y).unwrap(),
            OpKind::Sub => g.sub(x, y).unwrap(),
            OpKind::Mul => g.mul(x, y).unwrap(),
            OpKind::Concat => {
                let c = g.concat(&[x, y]).unwrap();
                g.slice(c, k, DIM).unwrap()
            }
            OpKind::Slice => {
                let s = g.slice(x, 1, DIM - 1).unwrap();
                let p = g.pick(y, k).unwrap();
                g.concat(&[s, p]).unwrap()
            }
            OpKind::Tanh => g.tanh(x),
            OpKind::Logistic => g.logistic(x),
            OpKind::MaxScalar => g.max_scalar(x, 0.0),
            OpKind::Pick => {
                let p = g.pick(x, k).unwrap();
                let rest = g.slice(y, 0, DIM - 1).unwrap();
                g.concat(&[rest, p]).unwrap()
            }
            OpKind::Sum => g.sum(&[x, y, x]).unwrap(),
            OpKind::MatVecBlock => {
                let half = g.slice(x, 0, 2).unwrap();
                g.matvec_block(matrix, half, k % 3).unwrap()
            }
            OpKind::Shift => g.shift(x, &[0.5, -1.0, 0.25, k as f64]).unwrap(),
            OpKind::Noise => g.gaussian_noise(x, 0.2, true, &mut seeded_rng(k as u64)).unwrap(),
        };
        pool.push(out);
    }
    let last = *pool.last().unwrap();
    let loss = g.neg_log_softmax(last, recipe.gold).unwrap();
    (leaf_vars, loss)
}

fn check_recipe(recipe: &Recipe) -> f64 {
    let mut worst: f64 = 0.0;
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let (vars, loss) = build(&mut g, recipe, &recipe.leaves);
    let grads = g.backward(loss).unwrap();
    for (li, leaf) in recipe.leaves.iter().enumerate() {
        let analytic = grads
            .wrt(vars[li])
            .map(|s| s.to_vec())
            .unwrap_or_else(|| vec![0.0; leaf.len()]);
        for (j, &a) in analytic.iter().enumerate() {
            let eval = |delta: f64| {
                let mut leaves = recipe.leaves.clone();
                leaves[li].data_mut()[j] += delta;
                let mut g = Graph::new(&store);
                let (_, l) = build(&mut g, recipe, &leaves);
                g.scalar(l)
            };
            let numeric = (eval(EPS) - eval(-EPS)) / (2.0 * EPS);
            worst = worst.max(rel_error(a, numeric));
        }
    }
    worst
}

/// Worst relative error per op, each op checked alone on `trials` random inputs.
pub fn every_op(seed: u64, trials: usize) -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ALL_OPS
        .iter()
        .map(|&op| {
            let worst = (0..trials)
                .map(|_| check_recipe(&random_recipe(&mut rng, 1, Some(op))))
                .fold(0.0, f64::max);
            (format!("{op:?}"), worst)
        })
        .collect()
}

/// Worst relative error over `count` random graphs of up to ten ops.
pub fn random_compositions(seed: u64, count: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let len = rng.random_range(1..=10);
            check_recipe(&random_recipe(&mut rng, len, None))
        })
        .fold(0.0, f64::max)
}

/// Checks d(loss)/d(param) for every entry of every listed parameter.
fn check_params(
    store: &ParamStore,
    ids: &[ParamId],
    loss_of: &dyn Fn(&ParamStore) -> f64,
    analytic: &dyn Fn(ParamId) -> Tensor,
) -> f64 {
    let mut worst: f64 = 0.0;
    for &id in ids {
        let grad = analytic(id);
        let p = store.get(id);
        for j in 0..p.value.len() {
            let eval = |delta: f64| {
                let mut s = store.clone();
                s.get_mut(id).value.data_mut()[j] += delta;
                loss_of(&s)
            };
            let numeric = (eval(EPS) - eval(-EPS)) / (2.0 * EPS);
            worst = worst.max(rel_error(grad.data()[j], numeric));
        }
    }
    worst
}

pub fn lstm_step_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    let p = LstmParams::new(&mut store, "l", 3, 2, &mut rng);
    for v in store.get_mut(p.bias).value.data_mut() {
        *v = rng.random_range(-0.5..0.5);
    }
    let x = Tensor::vector(vec![0.3, -0.8, 1.1]);
    let h0 = Tensor::vector(vec![0.2, -0.1]);
    let c0 = Tensor::vector(vec![0.5, 0.4]);
    let loss_of = |s: &ParamStore| -> (f64, Option<jptdp::autodiff::ParamGrads>) {
        let mut g = Graph::new(s);
        let xv = g.input(x.clone());
        let hv = g.input(h0.clone());
        let cv = g.input(c0.clone());
        let (h, c) = lstm_step(&mut g, &p, xv, hv, cv).unwrap();
        let both = g.concat(&[h, c]).unwrap();
        let loss = g.neg_log_softmax(both, 1).unwrap();
        let grads = g.backward(loss).unwrap();
        (g.scalar(loss), Some(grads.params))
    };
    let (_, grads) = loss_of(&store);
    let grads = grads.unwrap();
    check_params(
        &store,
        &[p.input_weights, p.recurrent_weights, p.bias],
        &|s| loss_of(s).0,
        &|id| grads.dense(id, store.value(id).shape()).unwrap(),
    )
}

pub fn mlp_error() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    let p = MlpParams::new(&mut store, "m", 4, 5, 3, &mut rng);
    for id in [p.b1, p.b2] {
        for v in store.get_mut(id).value.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    let x = Tensor::vector(vec![0.7, -0.2, 0.4, 1.3]);
    let run = |s: &ParamStore| {
        let mut g = Graph::new(s);
        let xv = g.input(x.clone());
        let y = mlp_apply(&mut g, &p, xv).unwrap();
        let loss = g.neg_log_softmax(y, 2).unwrap();
        (g.scalar(loss), g.backward(loss).unwrap().params)
    };
    let (_, grads) = run(&store);
    check_params(&store, &[p.w1, p.b1, p.w2, p.b2], &|s| run(s).0, &|id| {
        grads.dense(id, store.value(id).shape()).unwrap()
    })
}

fn tiny_hyper() -> Hyperparams {
    Hyperparams {
        char_dim: 3,
        char_hidden: 3,
        word_dim: 4,
        ctx_state_dim: 5,
        mlp_hidden: 6,
        ..Hyperparams::default()
    }
}

/// Joint loss with the augmented decode pinned to `pred`, rebuilt from scratch.
fn pinned_joint_loss(model: &ModelParams, store: &ParamStore, seed: u64, pred: &ParseTree) -> f64 {
    let sentence = fixtures::three_token_sentence();
    let gold = model.gold(&sentence).unwrap();
    let mut rng = seeded_rng(seed);
    let mut g = Graph::new(store);
    let feats = model.encode(&mut g, &sentence, Some(&mut rng)).unwrap();
    let pos = model.tagging_loss(&mut g, &feats, &gold.tags).unwrap();
    let scores = model.score_all_arcs(&mut g, &feats).unwrap();
    let arc = model.arc_loss_for(&mut g, &scores, &gold.tree, pred).unwrap();
    let rel = model.rel_loss(&mut g, &feats, &gold.tree, &gold.rels).unwrap();
    let total = g.sum(&[pos, arc, rel]).unwrap();
    g.scalar(total)
}

/// Worst relative error over every parameter entry of the joint loss on the
/// three-token sentence with shrunk dimensions.
pub fn joint_loss_error() -> f64 {
    let sentence = fixtures::three_token_sentence();
    let tb = jptdp::conllu::Treebank::new(vec![sentence.clone()]);
    let vocab = Vocab::build(&tb).unwrap();
    let mut model = ModelParams::new(tiny_hyper(), vocab, &mut seeded_rng(17)).unwrap();
    // Random biases so no unit sits at an exactly symmetric point.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for id in model.store.ids().collect::<Vec<_>>() {
        if model.store.get(id).name.ends_with(".b") || model.store.get(id).name.ends_with(".b1") {
            for v in model.store.get_mut(id).value.data_mut() {
                *v = rng.random_range(-0.3..0.3);
            }
        }
    }

    let noise_seed = 77;
    let mut g = Graph::new(&model.store);
    let mut noise_rng = seeded_rng(noise_seed);
    let loss = model.joint_loss(&mut g, &sentence, Some(&mut noise_rng)).unwrap();
    // Recover the augmented decode so it can be pinned during perturbation.
    let gold = model.gold(&sentence).unwrap();
    let mut g2 = Graph::new(&model.store);
    let feats = model
        .encode(&mut g2, &sentence, Some(&mut seeded_rng(noise_seed)))
        .unwrap();
    let scores = model.score_all_arcs(&mut g2, &feats).unwrap();
    let (_, pred) = model.arc_loss(&mut g2, &scores, &gold.tree).unwrap();
    // Both hinges must be active for the check to cover them.
    assert_ne!(pred, gold.tree);
    assert!(loss.rel > 0.0);
    let value = g.scalar(loss.total);
    assert_eq!(value, pinned_joint_loss(&model, &model.store, noise_seed, &pred));

    let grads = g.backward(loss.total).unwrap().params;
    let store = model.store.clone();
    let ids: Vec<ParamId> = store.ids().collect();
    let shape_of = |id: ParamId| store.value(id).shape().to_vec();
    let mut worst: f64 = 0.0;
    for id in &ids {
        let analytic = grads
            .dense(*id, &shape_of(*id))
            .unwrap_or_else(|| Tensor::zeros(&shape_of(*id)));
        let p = store.get(*id);
        let rows: Vec<usize> = if p.row_sparse {
            // Only rows read by the sentence carry gradient; spot-check one other.
            let mut r: Vec<usize> = (0..p.value.rows())
                .filter(|&r| analytic.row(r).iter().any(|v| *v != 0.0))
                .collect();
            r.push(0);
            r.dedup();
            r
        } else {
            (0..p.value.rows()).collect()
        };
        let cols = p.value.cols();
        for r in rows {
            for c in 0..cols {
                let j = r * cols + c;
                let eval = |delta: f64| {
                    let mut s = store.clone();
                    s.get_mut(*id).value.data_mut()[j] += delta;
                    pinned_joint_loss(&model, &s, noise_seed, &pred)
                };
                let numeric = (eval(EPS) - eval(-EPS)) / (2.0 * EPS);
                worst = worst.max(rel_error(analytic.data()[j], numeric));
            }
        }
    }
    worst
}
