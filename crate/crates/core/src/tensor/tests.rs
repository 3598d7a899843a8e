use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::*;
use crate::error::Error;
use crate::gradcheck::check_inputs;

const H: f64 = 1e-5;
const OP_TOL: f64 = 1e-4;
const POINTS: usize = 100;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.sample(StandardNormal)).collect(),
    )
    .unwrap()
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(0.2..3.0)).collect(),
    )
    .unwrap()
}

/// Runs `f` at `POINTS` random points and asserts every gradient check.
fn sweep<F>(name: &str, gen: impl Fn(&mut ChaCha8Rng) -> Vec<Tensor>, f: F)
where
    F: Fn(&mut Graph, &[Var]) -> crate::Result<Var> + Copy,
{
    let mut rng = ChaCha8Rng::seed_from_u64(0xfd);
    let mut worst = 0f64;
    for _ in 0..POINTS {
        let inputs = gen(&mut rng);
        let r = check_inputs(&inputs, H, f).unwrap();
        worst = worst.max(r.max_rel_err);
    }
    assert!(worst < OP_TOL, "{name}: max rel err {worst:e}");
}

fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
    Tensor::matrix(rows, cols, v.to_vec()).unwrap()
}

#[test]
fn tensor_shape_invariant() {
    assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
    assert!(matches!(
        Tensor::new(vec![2, 3], vec![0.0; 5]),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        Tensor::new(vec![0, 3], vec![]),
        Err(Error::Dimension(_))
    ));
}

#[test]
fn matmul_examples() {
    let mut g = Graph::new();
    let a = g.constant(t(2, 2, &[1., 2., 3., 4.]));
    let b = g.constant(t(2, 1, &[1., 1.]));
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c).values(), &[3., 7.]);
    assert_eq!(g.value(c).shape(), &[2, 1]);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = randn(&mut rng, &[3, 4]);
    let a = g.constant(m.clone());
    let i = g.constant(Tensor::identity(4).unwrap());
    let ai = g.matmul(a, i).unwrap();
    assert_eq!(g.value(ai), &m);
}

#[test]
fn matmul_shape_mismatch() {
    let mut g = Graph::new();
    let a = g.constant(t(2, 3, &[0.; 6]));
    let b = g.constant(t(2, 3, &[0.; 6]));
    assert!(matches!(g.matmul(a, b), Err(Error::Dimension(_))));
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    sweep(
        "matmul",
        |r| vec![randn(r, &[3, 4]), randn(r, &[4, 2])],
        |g, v| {
            let p = g.matmul(v[0], v[1])?;
            g.sum(p)
        },
    );
}

#[test]
fn softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![0.0, 0.0]).unwrap());
    let s = g.softmax_lastdim(x).unwrap();
    assert_eq!(g.value(s).values(), &[0.5, 0.5]);

    let x = g.constant(Tensor::row(vec![2f64.ln(), 0.0]).unwrap());
    let s = g.softmax_lastdim(x).unwrap();
    let v = g.value(s).values();
    assert!((v[0] - 2.0 / 3.0).abs() < 1e-15 && (v[1] - 1.0 / 3.0).abs() < 1e-15);
}

#[test]
fn softmax_rows_normalized_and_positive() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let mut x = randn(&mut rng, &[4, 7]);
        x.values_mut().iter_mut().for_each(|v| *v *= 30.0);
        let mut g = Graph::new();
        let xv = g.constant(x);
        let s = g.softmax_lastdim(xv).unwrap();
        for r in 0..4 {
            let row = g.value(s).row_slice(r);
            assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }
}

#[test]
fn softmax_stable_for_large_scores() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![1000.0, 999.0]).unwrap());
    let s = g.softmax_lastdim(x).unwrap();
    let v = g.value(s).values();
    assert!(v.iter().all(|p| p.is_finite() && *p > 0.0));
    assert!((v[0] - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-12);
}

#[test]
fn elementwise_examples() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![-1.0, 0.0, 2.0]).unwrap());
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).values(), &[0.0, 0.0, 2.0]);

    let a = g.constant(Tensor::row(vec![1.0, 2.0]).unwrap());
    let b = g.constant(Tensor::row(vec![3.0]).unwrap());
    let c = g.concat_lastdim(&[a, b]).unwrap();
    assert_eq!(g.value(c).values(), &[1.0, 2.0, 3.0]);

    let neg = g.constant(Tensor::row(vec![1.0, 0.0]).unwrap());
    assert!(matches!(g.log(neg), Err(Error::Domain(_))));
}

#[test]
fn mean_backward_is_uniform() {
    let mut store = ParamStore::new();
    let id = store
        .add("x", Tensor::row(vec![1.0, 2.0, 3.0]).unwrap())
        .unwrap();
    let mut g = Graph::new();
    let x = g.param(&store, id);
    let m = g.mean(x).unwrap();
    assert_eq!(g.value(m).values(), &[2.0]);
    let grads = g.backward(m).unwrap().for_params(&store);
    assert!(grads.get(id).iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    let mut store = ParamStore::new();
    let id = store
        .add("x", Tensor::row(vec![0.0, 1.0, -1.0]).unwrap())
        .unwrap();
    let mut g = Graph::new();
    let x = g.param(&store, id);
    let r = g.relu(x).unwrap();
    let s = g.sum(r).unwrap();
    let grads = g.backward(s).unwrap().for_params(&store);
    assert_eq!(grads.get(id), &[0.0, 1.0, 0.0]);
}

#[test]
fn elementwise_gradients_match_finite_differences() {
    let pair = |r: &mut ChaCha8Rng| vec![randn(r, &[3, 4]), randn(r, &[3, 4])];
    sweep("add", pair, |g, v| {
        let a = g.add(v[0], v[1])?;
        let w = g.square(a)?;
        g.sum(w)
    });
    sweep("sub", pair, |g, v| {
        let a = g.sub(v[0], v[1])?;
        let w = g.square(a)?;
        g.sum(w)
    });
    sweep("mul", pair, |g, v| {
        let a = g.mul(v[0], v[1])?;
        g.sum(a)
    });
    sweep(
        "relu",
        |r| vec![randn(r, &[3, 4])],
        |g, v| {
            let a = g.relu(v[0])?;
            let w = g.square(a)?;
            g.sum(w)
        },
    );
    sweep(
        "abs",
        |r| vec![randn(r, &[3, 4])],
        |g, v| {
            let a = g.abs(v[0])?;
            let w = g.square(a)?;
            g.mean(w)
        },
    );
    sweep(
        "log",
        |r| vec![positive(r, &[2, 5])],
        |g, v| {
            let a = g.log(v[0])?;
            let w = g.square(a)?;
            g.sum(w)
        },
    );
    sweep(
        "exp",
        |r| vec![randn(r, &[2, 3])],
        |g, v| {
            let a = g.exp(v[0])?;
            g.mean(a)
        },
    );
    sweep(
        "sigmoid",
        |r| vec![randn(r, &[2, 3])],
        |g, v| {
            let a = g.sigmoid(v[0])?;
            let w = g.square(a)?;
            g.sum(w)
        },
    );
    sweep(
        "scalar ops",
        |r| vec![randn(r, &[2, 3])],
        |g, v| {
            let a = g.scale(v[0], -1.7)?;
            let b = g.add_scalar(a, 0.3)?;
            let w = g.square(b)?;
            g.sum(w)
        },
    );
}

#[test]
fn broadcast_and_reduction_gradients_match_finite_differences() {
    sweep(
        "add_row",
        |r| vec![randn(r, &[4, 3]), randn(r, &[1, 3])],
        |g, v| {
            let a = g.add_row(v[0], v[1])?;
            let w = g.square(a)?;
            g.sum(w)
        },
    );
    sweep(
        "mul_col",
        |r| vec![randn(r, &[4, 3]), randn(r, &[4, 1])],
        |g, v| {
            let a = g.mul_col(v[0], v[1])?;
            let w = g.square(a)?;
            g.sum(w)
        },
    );
    sweep(
        "sum_lastdim",
        |r| vec![randn(r, &[4, 3])],
        |g, v| {
            let a = g.sum_lastdim(v[0])?;
            let w = g.square(a)?;
            g.sum(w)
        },
    );
    sweep(
        "concat + slice",
        |r| vec![randn(r, &[3, 2]), randn(r, &[3, 3])],
        |g, v| {
            let c = g.concat_lastdim(&[v[0], v[1]])?;
            let s = g.slice_lastdim(c, 1, 3)?;
            let w = g.square(s)?;
            g.sum(w)
        },
    );
}

#[test]
fn softmax_family_gradients_match_finite_differences() {
    // Weighted sums make the check sensitive to every output coordinate.
    sweep(
        "softmax",
        |r| vec![randn(r, &[3, 5]), randn(r, &[3, 5])],
        |g, v| {
            let s = g.softmax_lastdim(v[0])?;
            let w = g.mul(s, v[1])?;
            g.sum(w)
        },
    );
    sweep(
        "log_softmax",
        |r| vec![randn(r, &[3, 5]), randn(r, &[3, 5])],
        |g, v| {
            let s = g.log_softmax_lastdim(v[0])?;
            let w = g.mul(s, v[1])?;
            g.sum(w)
        },
    );
    sweep(
        "bce_with_logits",
        |r| vec![randn(r, &[6, 1])],
        |g, v| {
            let l = g.bce_with_logits(v[0], &[1.0, 0.0, 1.0, 1.0, 0.0, 0.0])?;
            g.mean(l)
        },
    );
}

#[test]
fn embedding_lookup_semantics() {
    let mut store = ParamStore::new();
    let single = store.add("single", t(3, 1, &[0.5, -1.0, 2.0])).unwrap();
    let table = store
        .add("table", t(2, 3, &[1., 2., 3., 4., 5., 6.]))
        .unwrap();
    let mut g = Graph::new();
    let s = g.param(&store, single);
    let e = g.embedding_lookup(s, &[0, 0]).unwrap();
    assert_eq!(g.value(e).values(), &[0.5, -1.0, 2.0, 0.5, -1.0, 2.0]);

    let tv = g.param(&store, table);
    let e = g.embedding_lookup(tv, &[2]).unwrap();
    assert_eq!(g.value(e).values(), &[3., 6.]);
    let root = g.sum(e).unwrap();
    let grads = g.backward(root).unwrap().for_params(&store);
    // Only column 2 receives gradient.
    assert_eq!(grads.get(table), &[0., 0., 1., 0., 0., 1.]);
    assert_eq!(grads.get(single), &[0., 0., 0.]);

    assert!(matches!(g.embedding_lookup(tv, &[3]), Err(Error::Data(_))));
}

#[test]
fn embedding_gradient_matches_finite_differences() {
    sweep(
        "embedding",
        |r| vec![randn(r, &[3, 4])],
        |g, v| {
            let e = g.embedding_lookup(v[0], &[1, 3, 1, 0])?;
            let w = g.square(e)?;
            g.sum(w)
        },
    );
}

#[test]
fn backward_examples() {
    let mut store = ParamStore::new();
    let x = store.add("x", Tensor::scalar(3.0)).unwrap();
    let p = store.add("p", Tensor::scalar(1.0)).unwrap();
    let mut g = Graph::new();
    let xv = g.param(&store, x);
    let _ = g.param(&store, p);
    let sq = g.square(xv).unwrap();
    let grads = g.backward(sq).unwrap().for_params(&store);
    assert_eq!(grads.get(x), &[6.0]);
    assert_eq!(grads.get(p), &[0.0]);

    let m = g.constant(Tensor::row(vec![1.0, 2.0]).unwrap());
    assert!(matches!(g.backward(m), Err(Error::Usage(_))));
}

#[test]
fn root_gradient_is_one() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(2.0));
    let grads = g.backward(x).unwrap();
    assert_eq!(grads.wrt(x), Some(&[1.0][..]));
}

#[test]
fn dropout_modes() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut g = Graph::new();
    let x = g.constant(Tensor::row(vec![1.0, -2.0, 3.0]).unwrap());
    let y = g.dropout(x, 0.0, &mut rng, true).unwrap();
    assert_eq!(g.value(y).values(), g.value(x).values());
    let y = g.dropout(x, 0.7, &mut rng, false).unwrap();
    assert_eq!(g.value(y).values(), g.value(x).values());
    assert!(matches!(
        g.dropout(x, 1.0, &mut rng, true),
        Err(Error::Config(_))
    ));
}

#[test]
fn dropout_preserves_mean() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut g = Graph::new();
    let n = 100_000;
    let x = g.constant(Tensor::filled(vec![1, n], 2.0).unwrap());
    let y = g.dropout(x, 0.3, &mut rng, true).unwrap();
    let mean = g.value(y).values().iter().sum::<f64>() / n as f64;
    assert!((mean - 2.0).abs() / 2.0 < 0.02, "mean {mean}");
    let zeros = g.value(y).values().iter().filter(|&&v| v == 0.0).count() as f64 / n as f64;
    assert!((zeros - 0.3).abs() < 0.01);
}

#[test]
fn non_finite_forward_is_an_error() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::scalar(1000.0));
    assert!(matches!(g.exp(x), Err(Error::Domain(_))));
}

fn build_expr(store: &ParamStore) -> (Graph, Var) {
    let mut g = Graph::new();
    let a = g.param(store, store.id("a").unwrap());
    let b = g.param(store, store.id("b").unwrap());
    let m = g.matmul(a, b).unwrap();
    let s = g.softmax_lastdim(m).unwrap();
    let l = g.log(s).unwrap();
    let r = g.mean(l).unwrap();
    (g, r)
}

#[test]
fn replay_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut store = ParamStore::new();
    store.add("a", randn(&mut rng, &[5, 3])).unwrap();
    store.add("b", randn(&mut rng, &[3, 4])).unwrap();
    let (g1, r1) = build_expr(&store);
    let (g2, r2) = build_expr(&store);
    assert_eq!(g1.len(), g2.len());
    let a = g1.backward(r1).unwrap().for_params(&store);
    let b = g2.backward(r2).unwrap().for_params(&store);
    for id in store.ids() {
        let (x, y) = (a.get(id), b.get(id));
        assert!(x.iter().zip(y).all(|(p, q)| p.to_bits() == q.to_bits()));
    }
}
