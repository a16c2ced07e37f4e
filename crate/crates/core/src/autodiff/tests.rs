use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape, data).unwrap()
}

#[test]
fn matmul_identity() {
    let mut g = Graph::new();
    let a = g.constant(t(&[2, 2], &[1., 2., 3., 4.]));
    let i = g.constant(Tensor::identity(2));
    let c = g.matmul(a, i).unwrap();
    assert_eq!(g.value(c).data(), &[1., 2., 3., 4.]);
    assert_eq!(g.macs(), 8);
}

#[test]
fn relu_and_softmax_examples() {
    let mut g = Graph::new();
    let x = g.constant(t(&[3], &[-1., 0., 2.]));
    let r = g.relu(x).unwrap();
    assert_eq!(g.value(r).data(), &[0., 0., 2.]);
    let z = g.constant(t(&[2], &[0., 0.]));
    let s = g.softmax(z, false).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);
}

#[test]
fn shape_mismatch_names_primitive() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(Tensor::zeros(&[2, 3]));
    let b = g.constant(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(Error::ShapeMismatch { op, lhs, rhs }) => {
            assert_eq!(op, "matmul");
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
    let c = g.constant(Tensor::zeros(&[2]));
    assert!(g.add(c, a).is_err());
}

#[test]
fn backward_linear_and_quadratic() {
    let mut g = Graph::new();
    let x = g.param(t(&[3], &[5., -1., 2.]));
    let s = g.sum(x).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[1., 1., 1.]);

    let mut g = Graph::new();
    let x = g.param(t(&[2], &[1., 2.]));
    let sq = g.mul(x, x).unwrap();
    let s = g.sum(sq).unwrap();
    g.backward(s).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[2., 4.]);
}

#[test]
fn backward_rejects_non_scalar_and_foreign_nodes() {
    let mut g = Graph::<f64>::new();
    let x = g.param(Tensor::ones(&[2]));
    assert!(matches!(g.backward(x), Err(Error::NotScalar(_))));

    let mut other = Graph::<f64>::new();
    let y = other.param(Tensor::ones(&[1]));
    let s = other.sum(y).unwrap();
    assert!(matches!(g.backward(s), Err(Error::NotInGraph(_))));
}

#[test]
fn fan_out_accumulates() {
    // loss = sum(x * 3) + sum(x) uses x twice.
    let mut g = Graph::new();
    let x = g.param(t(&[2], &[0.5, -2.]));
    let a = g.scale(x, 3.0).unwrap();
    let sa = g.sum(a).unwrap();
    let sb = g.sum(x).unwrap();
    let loss = g.add(sa, sb).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[4., 4.]);
}

#[test]
fn matmul_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Tensor::<f64>::randn(&[3, 4], 1.0, &mut rng);
    let b = Tensor::<f64>::randn(&[4, 2], 1.0, &mut rng);
    let report = grad_check(
        |g, p| {
            let c = g.matmul(p[0], p[1])?;
            g.sum(c)
        },
        &[("a".into(), a), ("b".into(), b)],
        1e-5,
    )
    .unwrap();
    assert!(report.max_relative_error < 1e-6, "{report:?}");
}

#[test]
fn grad_check_examples() {
    let x = t(&[3], &[1., 2., 3.]);
    let r = grad_check(
        |g, p| {
            let sq = g.mul(p[0], p[0])?;
            g.sum(sq)
        },
        &[("x".into(), x.clone())],
        1e-4,
    )
    .unwrap();
    assert!(r.max_relative_error < 1e-6);

    let r = grad_check(
        |g: &mut Graph<f64>, _: &[NodeId]| Ok(g.constant(Tensor::scalar(4.0))),
        &[("x".into(), x.clone())],
        1e-4,
    )
    .unwrap();
    assert_eq!(r.max_relative_error, 0.0);

    assert!(grad_check(|g, p| g.sum(p[0]), &[("x".into(), x.clone())], 0.0).is_err());

    let err = grad_check(
        |g, p| {
            let l = g.log(p[0])?;
            g.sum(l)
        },
        &[("neg".into(), t(&[1], &[-1.]))],
        1e-4,
    )
    .unwrap_err();
    assert!(err.to_string().contains("loss") || err.to_string().contains("neg"));
}

/// Random shape with every extent in `1..=8`.
fn rand_shape(rng: &mut ChaCha8Rng, rank: usize) -> Vec<usize> {
    (0..rank).map(|_| rng.random_range(1..=8)).collect()
}

/// Loss `sum(out ⊙ R)` with a fixed random weighting `R`, so every output
/// entry contributes with a different coefficient.
fn weighted<F>(rng: &mut ChaCha8Rng, out_shape: &[usize], build: F) -> impl Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let r = Tensor::<f64>::randn(out_shape, 1.0, rng);
    move |g, p| {
        let out = build(g, p)?;
        let w = g.constant(r.clone());
        let prod = g.mul(out, w)?;
        g.sum(prod)
    }
}

fn check_trials(name: &str, tol: f64, mut case: impl FnMut(&mut ChaCha8Rng) -> GradCheckReport) {
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = case(&mut rng);
        assert!(r.max_relative_error < tol, "{name} seed {seed}: {r:?}");
    }
}

fn away_from_zero(t: Tensor<f64>) -> Tensor<f64> {
    t.map(|v| if v.abs() < 0.05 { v.signum() * 0.05 + v } else { v })
}

#[test]
fn primitive_gradients_elementwise() {
    check_trials("add/sub/mul broadcast", 1e-5, |rng| {
        let shape = rand_shape(rng, 3);
        let a = Tensor::<f64>::randn(&shape, 1.0, rng);
        let b = Tensor::<f64>::randn(&shape[1..], 1.0, rng);
        let f = weighted(rng, &shape, |g, p| {
            let s = g.add(p[0], p[1])?;
            let d = g.sub(s, p[1])?;
            let m = g.mul(d, p[1])?;
            g.sub(m, p[0])
        });
        grad_check(f, &[("a".into(), a), ("b".into(), b)], 1e-5).unwrap()
    });
    check_trials("scale/scale_by", 1e-5, |rng| {
        let shape = rand_shape(rng, 2);
        let a = Tensor::<f64>::randn(&shape, 1.0, rng);
        let s = Tensor::<f64>::randn(&[1], 1.0, rng);
        let f = weighted(rng, &shape, |g, p| {
            let x = g.scale(p[0], 0.7)?;
            g.scale_by(x, p[1])
        });
        grad_check(f, &[("a".into(), a), ("s".into(), s)], 1e-5).unwrap()
    });
    check_trials("relu", 1e-5, |rng| {
        let shape = rand_shape(rng, 2);
        let a = away_from_zero(Tensor::<f64>::randn(&shape, 1.0, rng));
        let f = weighted(rng, &shape, |g, p| g.relu(p[0]));
        grad_check(f, &[("a".into(), a)], 1e-5).unwrap()
    });
    check_trials("sigmoid", 1e-5, |rng| {
        let shape = rand_shape(rng, 2);
        let a = Tensor::<f64>::randn(&shape, 2.0, rng);
        let f = weighted(rng, &shape, |g, p| g.sigmoid(p[0]));
        grad_check(f, &[("a".into(), a)], 1e-5).unwrap()
    });
    check_trials("log", 1e-5, |rng| {
        let shape = rand_shape(rng, 2);
        let a = Tensor::<f64>::randn(&shape, 1.0, rng).map(|v| v.abs() + 0.5);
        let f = weighted(rng, &shape, |g, p| g.log(p[0]));
        grad_check(f, &[("a".into(), a)], 1e-5).unwrap()
    });
    check_trials("gelu", 1e-4, |rng| {
        let shape = rand_shape(rng, 2);
        let a = Tensor::<f64>::randn(&shape, 1.5, rng);
        let f = weighted(rng, &shape, |g, p| g.gelu(p[0]));
        grad_check(f, &[("a".into(), a)], 1e-5).unwrap()
    });
}

#[test]
fn primitive_gradients_contractions() {
    check_trials("matmul 2d", 1e-5, |rng| {
        let (m, k, n) = (rng.random_range(1..=8), rng.random_range(1..=8), rng.random_range(1..=8));
        let a = Tensor::<f64>::randn(&[m, k], 1.0, rng);
        let b = Tensor::<f64>::randn(&[k, n], 1.0, rng);
        let f = weighted(rng, &[m, n], |g, p| g.matmul(p[0], p[1]));
        grad_check(f, &[("a".into(), a), ("b".into(), b)], 1e-5).unwrap()
    });
    check_trials("matmul batched", 1e-5, |rng| {
        let s = rand_shape(rng, 4);
        let a = Tensor::<f64>::randn(&[s[0], s[1], s[2]], 1.0, rng);
        let b = Tensor::<f64>::randn(&[s[0], s[2], s[3]], 1.0, rng);
        let f = weighted(rng, &[s[0], s[1], s[3]], |g, p| g.matmul(p[0], p[1]));
        grad_check(f, &[("a".into(), a), ("b".into(), b)], 1e-5).unwrap()
    });
    check_trials("matmul shared rhs", 1e-5, |rng| {
        let s = rand_shape(rng, 4);
        let a = Tensor::<f64>::randn(&[s[0], s[1], s[2]], 1.0, rng);
        let b = Tensor::<f64>::randn(&[s[2], s[3]], 1.0, rng);
        let f = weighted(rng, &[s[0], s[1], s[3]], |g, p| g.matmul(p[0], p[1]));
        grad_check(f, &[("a".into(), a), ("b".into(), b)], 1e-5).unwrap()
    });
    check_trials("transpose/reshape", 1e-5, |rng| {
        let s = rand_shape(rng, 3);
        let a = Tensor::<f64>::randn(&s, 1.0, rng);
        let f = weighted(rng, &[s[0] * s[2] * s[1]], |g, p| {
            let tr = g.transpose(p[0])?;
            g.reshape(tr, &[s[0] * s[1] * s[2]])
        });
        grad_check(f, &[("a".into(), a)], 1e-5).unwrap()
    });
    check_trials("rowwise_matmul", 1e-5, |rng| {
        let s = rand_shape(rng, 3);
        let x = Tensor::<f64>::randn(&[s[0], s[1]], 1.0, rng);
        let w = Tensor::<f64>::randn(&[s[0], s[1] * s[2]], 1.0, rng);
        let cols = s[2];
        let f = weighted(rng, &[s[0], s[2]], move |g, p| g.rowwise_matmul(p[0], p[1], cols));
        grad_check(f, &[("x".into(), x), ("w".into(), w)], 1e-5).unwrap()
    });
    check_trials("scale_rows/pick_per_row", 1e-5, |rng| {
        let s = rand_shape(rng, 2);
        let x = Tensor::<f64>::randn(&s, 1.0, rng);
        let p = Tensor::<f64>::randn(&s, 1.0, rng);
        let cols: Vec<usize> = (0..s[0]).map(|_| rng.random_range(0..s[1])).collect();
        let f = weighted(rng, &s, move |g, p| {
            let w = g.pick_per_row(p[1], &cols)?;
            g.scale_rows(p[0], w)
        });
        grad_check(f, &[("x".into(), x), ("p".into(), p)], 1e-5).unwrap()
    });
}

#[test]
fn primitive_gradients_normalisation_and_indexing() {
    check_trials("softmax", 1e-5, |rng| {
        let s = rand_shape(rng, 2);
        let a = Tensor::<f64>::randn(&s, 1.0, rng);
        let f = weighted(rng, &s, |g, p| g.softmax(p[0], false));
        grad_check(f, &[("a".into(), a)], 1e-5).unwrap()
    });
    check_trials("softmax causal", 1e-5, |rng| {
        let s = rand_shape(rng, 2);
        let a = Tensor::<f64>::randn(&[s[0], s[1], s[1]], 1.0, rng);
        let f = weighted(rng, &[s[0], s[1], s[1]], |g, p| g.softmax(p[0], true));
        grad_check(f, &[("a".into(), a)], 1e-5).unwrap()
    });
    check_trials("layer_norm", 1e-5, |rng| {
        let s = [rng.random_range(1..=8), rng.random_range(2..=8)];
        let a = Tensor::<f64>::randn(&s, 1.0, rng);
        let scale = Tensor::<f64>::randn(&[s[1]], 1.0, rng);
        let f = weighted(rng, &s, |g, p| g.layer_norm(p[0], Some(p[1]), 1e-5));
        grad_check(f, &[("a".into(), a), ("scale".into(), scale)], 1e-5).unwrap()
    });
    check_trials("gather/segment_mean", 1e-5, |rng| {
        let s = rand_shape(rng, 2);
        let table = Tensor::<f64>::randn(&s, 1.0, rng);
        let n = rng.random_range(1..=8);
        let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..s[0])).collect();
        let cut = rng.random_range(1..=n);
        let segs = if cut < n { vec![(0, cut), (cut, n)] } else { vec![(0, n)] };
        let out_rows = segs.len();
        let f = weighted(rng, &[out_rows, s[1]], move |g, p| {
            let x = g.gather_rows(p[0], &rows)?;
            g.segment_mean(x, &segs)
        });
        grad_check(f, &[("table".into(), table)], 1e-5).unwrap()
    });
    check_trials("concat/slice", 1e-5, |rng| {
        let s = rand_shape(rng, 3);
        let a = Tensor::<f64>::randn(&[s[0], s[1]], 1.0, rng);
        let b = Tensor::<f64>::randn(&[s[0], s[2]], 1.0, rng);
        let start = rng.random_range(0..s[1] + s[2]);
        let len = rng.random_range(1..=s[1] + s[2] - start);
        let f = weighted(rng, &[s[0], len], move |g, p| {
            let c = g.concat(&[p[0], p[1]])?;
            g.slice_last(c, start, len)
        });
        grad_check(f, &[("a".into(), a), ("b".into(), b)], 1e-5).unwrap()
    });
    check_trials("mean/cross_entropy", 1e-5, |rng| {
        let s = [rng.random_range(1..=8), rng.random_range(2..=8)];
        let logits = Tensor::<f64>::randn(&s, 1.0, rng);
        let targets: Vec<usize> = (0..s[0]).map(|_| rng.random_range(0..s[1])).collect();
        let f = move |g: &mut Graph<f64>, p: &[NodeId]| {
            let ce = g.cross_entropy(p[0], &targets)?;
            let m = g.mean(p[0])?;
            let m = g.scale(m, 0.3)?;
            g.add(ce, m)
        };
        grad_check(f, &[("logits".into(), logits)], 1e-5).unwrap()
    });
}

#[test]
fn causal_softmax_zeroes_future() {
    let mut g = Graph::new();
    let x = g.constant(t(&[2, 2], &[1., 5., 2., 3.]));
    let s = g.softmax(x, true).unwrap();
    let v = g.value(s).data();
    assert_eq!(v[0], 1.0);
    assert_eq!(v[1], 0.0);
    assert!((v[2] + v[3] - 1.0).abs() < 1e-15);
}

#[test]
fn backward_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::new();
        let a = g.param(Tensor::<f64>::randn(&[4, 5], 1.0, &mut rng));
        let b = g.param(Tensor::<f64>::randn(&[5, 3], 1.0, &mut rng));
        let c = g.matmul(a, b).unwrap();
        let s = g.softmax(c, false).unwrap();
        let l = g.log(s).unwrap();
        let loss = g.sum(l).unwrap();
        g.backward(loss).unwrap();
        (g.grad(a).unwrap().clone(), g.grad(b).unwrap().clone())
    };
    let (a1, b1) = run();
    let (a2, b2) = run();
    let bits = |t: &Tensor<f64>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a1), bits(&a2));
    assert_eq!(bits(&b1), bits(&b2));
}

#[test]
fn cross_entropy_examples() {
    let mut g = Graph::<f64>::new();
    let l = g.constant(Tensor::zeros(&[1, 4]));
    let ce = g.cross_entropy(l, &[2]).unwrap();
    assert!((g.value(ce).item() - 4f64.ln()).abs() < 1e-15);

    let l = g.constant(t(&[1, 3], &[0., 1e3, 0.]));
    let ce = g.cross_entropy(l, &[1]).unwrap();
    assert!(g.value(ce).item() < 1e-6);

    assert!(matches!(
        g.cross_entropy(l, &[3]),
        Err(Error::IndexOutOfRange { index: 3, .. })
    ));
}

#[test]
fn non_finite_outputs_are_reported_when_checking() {
    let mut g = Graph::<f64>::new();
    g.set_check_finite(true);
    let x = g.constant(t(&[1], &[-1.]));
    assert!(matches!(g.log(x), Err(Error::NonFinite(_))));
}
