use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tapir_core::tensorkit::{check_param_gradients, Graph, ParamStore, Tensor, Var};
use tapir_core::Error;

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor<f64> {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Weighted sum of an output with fixed random weights, so every element matters.
fn project(g: &mut Graph<'_, f64>, out: Var, seed: u64) -> Var {
    let (r, c) = g.shape(out);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = g.input(&rand_tensor(&mut rng, r, c));
    let p = g.mul(out, w);
    g.sum(p)
}

#[test]
fn grad_of_sum_is_ones() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.variable(&Tensor::row(vec![0.3, -2.0, 5.0]));
    let loss = g.sum(x);
    let res = g.backward(loss).unwrap();
    assert_eq!(res.var_grad(x).data(), &[1.0, 1.0, 1.0]);
}

#[test]
fn grad_of_sum_of_squares() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.variable(&Tensor::row(vec![2.0, -1.0]));
    let sq = g.mul(x, x);
    let loss = g.sum(sq);
    let res = g.backward(loss).unwrap();
    assert_eq!(res.var_grad(x).data(), &[4.0, -2.0]);
}

#[test]
fn untouched_params_have_zero_grad() {
    let mut store = ParamStore::<f64>::new();
    let a = store.add("a", Tensor::row(vec![1.0, 2.0]));
    let b = store.add("b", Tensor::row(vec![3.0]));
    let mut g = Graph::new(&store);
    let av = g.param(a);
    let loss = g.sum(av);
    let res = g.backward(loss).unwrap();
    assert_eq!(res.params.dense(b, &store).data(), &[0.0]);
    assert_eq!(res.params.dense(a, &store).data(), &[1.0, 1.0]);
}

#[test]
fn backward_errors() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let x = g.variable(&Tensor::row(vec![1.0, 2.0]));
    assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(1, 2))));
    let s = g.sum(x);
    g.backward(s).unwrap();
    assert!(matches!(g.backward(s), Err(Error::TapeConsumed)));
    g.clear();
    assert!(g.is_empty());
}

#[test]
fn three_layer_composition_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::<f64>::new();
    let w1 = store.add("w1", rand_tensor(&mut rng, 4, 6));
    let b1 = store.add("b1", rand_tensor(&mut rng, 1, 6));
    let w2 = store.add("w2", rand_tensor(&mut rng, 6, 5));
    let w3 = store.add("w3", rand_tensor(&mut rng, 5, 3));
    let x = rand_tensor(&mut rng, 3, 4);
    let worst = check_param_gradients(&mut store, 1e-5, 1e-3, 1e-9, |g| {
        let xv = g.input(&x);
        let p1 = g.param(w1);
        let pb = g.param(b1);
        let h = g.matmul(xv, p1);
        let h = g.add_row(h, pb);
        let h = g.tanh(h);
        let p2 = g.param(w2);
        let h = g.matmul(h, p2);
        let h = g.sigmoid(h);
        let p3 = g.param(w3);
        let h = g.matmul(h, p3);
        let h = g.softmax(h);
        project(g, h, 99)
    })
    .unwrap();
    assert!(worst <= 1e-3);
}

type OpFn = fn(&mut Graph<'_, f64>, Var, Var) -> Var;

/// Runs a two-input op through the gradient checker on ten random shapes.
fn check_op(name: &str, shapes: fn(&mut ChaCha8Rng) -> ((usize, usize), (usize, usize)), op: OpFn) {
    for case in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + case);
        let ((ar, ac), (br, bc)) = shapes(&mut rng);
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", rand_tensor(&mut rng, ar, ac));
        let b = store.add("b", {
            let mut t = rand_tensor(&mut rng, br, bc);
            if name == "div_col" {
                for x in t.data_mut() {
                    *x = x.abs() + 0.5;
                }
            }
            t
        });
        let res = check_param_gradients(&mut store, 1e-5, 1e-3, 1e-9, |g| {
            let av = g.param(a);
            let bv = g.param(b);
            let out = op(g, av, bv);
            project(g, out, case)
        });
        if let Err(e) = res {
            panic!("{name} case {case}: {e}");
        }
    }
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(1..5), rng.gen_range(1..6))
}

#[test]
fn binary_ops_pass_gradient_checks() {
    check_op(
        "matmul",
        |r| {
            let (m, k) = dims(r);
            let n = r.gen_range(1..5);
            ((m, k), (k, n))
        },
        |g, a, b| g.matmul(a, b),
    );
    check_op(
        "matmul_t",
        |r| {
            let (m, k) = dims(r);
            let n = r.gen_range(1..5);
            ((m, k), (n, k))
        },
        |g, a, b| g.matmul_t(a, b),
    );
    check_op("add", |r| { let d = dims(r); (d, d) }, |g, a, b| g.add(a, b));
    check_op("sub", |r| { let d = dims(r); (d, d) }, |g, a, b| g.sub(a, b));
    check_op("mul", |r| { let d = dims(r); (d, d) }, |g, a, b| g.mul(a, b));
    check_op("add_row", |r| { let (m, n) = dims(r); ((m, n), (1, n)) }, |g, a, b| g.add_row(a, b));
    check_op("mul_col", |r| { let (m, n) = dims(r); ((m, n), (m, 1)) }, |g, a, b| g.mul_col(a, b));
    check_op("div_col", |r| { let (m, n) = dims(r); ((m, n), (m, 1)) }, |g, a, b| g.div_col(a, b));
    check_op(
        "concat_cols",
        |r| {
            let (m, n) = dims(r);
            ((m, n), (m, r.gen_range(1..4)))
        },
        |g, a, b| g.concat_cols(&[a, b]),
    );
    check_op(
        "concat_rows",
        |r| {
            let (m, n) = dims(r);
            ((m, n), (r.gen_range(1..4), n))
        },
        |g, a, b| g.concat_rows(&[a, b, a]),
    );
    check_op(
        "layer_norm",
        |r| {
            let m = r.gen_range(1..5);
            let n = r.gen_range(2..7);
            ((m, n), (1, n))
        },
        |g, a, b| g.layer_norm(a, b, b),
    );
}

#[test]
fn unary_ops_pass_gradient_checks() {
    let ops: Vec<(&str, fn(&mut Graph<'_, f64>, Var) -> Var)> = vec![
        ("tanh", |g, a| g.tanh(a)),
        ("sigmoid", |g, a| g.sigmoid(a)),
        ("relu", |g, a| g.relu(a)),
        ("elu", |g, a| g.elu(a)),
        ("elu_plus_one", |g, a| g.elu_plus_one(a)),
        ("softmax", |g, a| g.softmax(a)),
        ("transpose", |g, a| g.transpose(a)),
        ("scale", |g, a| g.scale(a, -1.7)),
        ("sum_cols", |g, a| g.sum_cols(a)),
        ("sum_rows", |g, a| g.sum_rows(a)),
        ("mean", |g, a| g.mean(a)),
        ("slice_cols", |g, a| {
            let n = g.cols(a);
            g.slice_cols(a, n / 2, n - n / 2)
        }),
        ("slice_rows", |g, a| {
            let m = g.rows(a);
            g.slice_rows(a, m / 2, m - m / 2)
        }),
        ("gather", |g, a| {
            let m = g.rows(a);
            let ids: Vec<usize> = (0..5).map(|i| (i * 7) % m).collect();
            g.gather(a, &ids)
        }),
        ("mul_const", |g, a| {
            let (m, n) = g.shape(a);
            g.mul_const(a, (0..m * n).map(|i| (i % 3) as f64).collect())
        }),
    ];
    for (name, op) in ops {
        for case in 0..10u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(2000 + case);
            let (m, n) = dims(&mut rng);
            let mut store = ParamStore::<f64>::new();
            let a = store.add("a", rand_tensor(&mut rng, m, n));
            let res = check_param_gradients(&mut store, 1e-5, 1e-3, 1e-9, |g| {
                let av = g.param(a);
                let out = op(g, av);
                project(g, out, case)
            });
            if let Err(e) = res {
                panic!("{name} case {case}: {e}");
            }
        }
    }
}

#[test]
fn square_ops_pass_gradient_checks() {
    for case in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + case);
        let n = rng.gen_range(1..6);
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", rand_tensor(&mut rng, n, n));
        for which in 0..2 {
            check_param_gradients(&mut store, 1e-5, 1e-3, 1e-9, |g| {
                let av = g.param(a);
                let out = if which == 0 { g.causal_softmax(av) } else { g.tril(av) };
                project(g, out, case)
            })
            .unwrap();
        }
    }
}

#[test]
fn losses_pass_gradient_checks() {
    for case in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + case);
        let (m, n) = (rng.gen_range(1..5), rng.gen_range(2..6));
        let targets: Vec<Option<usize>> = (0..m)
            .map(|i| if i == 1 { None } else { Some(rng.gen_range(0..n)) })
            .collect();
        let bce_targets: Vec<Option<f64>> = (0..m).map(|_| Some(rng.gen_range(0..2) as f64)).collect();
        let mut store = ParamStore::<f64>::new();
        let a = store.add("a", rand_tensor(&mut rng, m, n));
        let b = store.add("b", rand_tensor(&mut rng, m, 1));
        check_param_gradients(&mut store, 1e-5, 1e-3, 1e-9, |g| {
            let av = g.param(a);
            let ce = g.cross_entropy(av, &targets).unwrap();
            let bv = g.param(b);
            let p = g.sigmoid(bv);
            let bce = g.bce(p, &bce_targets).unwrap();
            g.add(ce, bce)
        })
        .unwrap();
    }
}

#[test]
fn cross_entropy_values() {
    let store = ParamStore::<f64>::new();
    let mut g = Graph::new(&store);
    let l = g.input(&Tensor::row(vec![0.5; 4]));
    let ce = g.cross_entropy(l, &[Some(2)]).unwrap();
    assert!((g.scalar(ce) - 4f64.ln()).abs() < 1e-12);

    let l = g.input(&Tensor::row(vec![0.0, 80.0, 0.0]));
    let ce = g.cross_entropy(l, &[Some(1)]).unwrap();
    assert!(g.scalar(ce) < 1e-30);

    assert!(g.cross_entropy(l, &[Some(3)]).is_err());

    // naive formula oracle on a random 3x5 case
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = rand_tensor(&mut rng, 3, 5);
    let gold = [4usize, 0, 2];
    let mut naive = 0.0;
    for (r, &t) in gold.iter().enumerate() {
        let row = x.row_slice(r);
        let z: f64 = row.iter().map(|v| v.exp()).sum();
        naive -= (row[t].exp() / z).ln();
    }
    naive /= 3.0;
    let l = g.input(&x);
    let ce = g.cross_entropy(l, &gold.map(Some)).unwrap();
    assert!((g.scalar(ce) - naive).abs() < 1e-6);
}

#[test]
fn bce_values() {
    use tapir_core::tensorkit::bce_value;
    assert!((bce_value(0.5, 1.0) - 2f64.ln()).abs() < 1e-12);
    assert!((bce_value(0.3, 0.0) - 0.3567).abs() < 1e-4);
    assert!(bce_value(1.0, 1.0) < 1e-6);
    assert!(bce_value(0.0, 0.0) < 1e-6);
    assert!(bce_value(0.0, 1.0).is_finite());
}

#[test]
fn softmax_sums_to_one_and_ignores_shifts() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let store = ParamStore::<f32>::new();
    for _ in 0..50 {
        let n = rng.gen_range(1..12);
        let x: Vec<f32> = (0..n).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let shift: f32 = rng.gen_range(-50.0..50.0);
        let mut g = Graph::inference(&store);
        let a = g.input(&Tensor::row(x.clone()));
        let b = g.input(&Tensor::row(x.iter().map(|v| v + shift).collect()));
        let sa = g.softmax(a);
        let sb = g.softmax(b);
        let total: f32 = g.value(sa).iter().sum();
        assert!((total - 1.0).abs() <= 1e-6);
        for (p, q) in g.value(sa).iter().zip(g.value(sb)) {
            assert!((p - q).abs() <= 1e-6);
        }
    }
}
