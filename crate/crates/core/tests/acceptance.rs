//! End-to-end acceptance checks. Each test prints one `PASS`, `FAIL` or
//! `SKIP` line; run with `--nocapture` to see them.

use std::panic::{catch_unwind, resume_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spdgnn::autodiff::{EigFn, Tape, Tensor, Unary, Var};
use spdgnn::classifiers::{argmax_rows, nc_mm_scores, svm_mm_loss, svm_mm_scores, ClassifierKind, Head};
use spdgnn::data::{delta_hyperbolicity, stratified_node_split, synth_grid, synth_tree, synth_tree_of_grids, DeltaMode};
use spdgnn::gnn::{euclidean_gcn_layer, spd_gcn_layer, Arch, Graph, Model, ModelConfig};
use spdgnn::gradcheck::{check, GradCheck};
use spdgnn::harness::{evaluate, grid_search, load_dataset, Adam, Dataset, NonlinearityKind, TrainConfig};
use spdgnn::manifolds::{
    mobius_add, orthogonalize, reeig, spd_gyro_add, spd_gyro_inverse, spd_isometry, tgreeig, GeometryContext, Nonlinearity,
};
use spdgnn::params::ParamSet;
use spdgnn::symcore::{matmul, spd_distance, spd_exp, spd_log, sym_eig, transpose, SpdMatrix, SymMatrix};

fn run(label: &str, body: impl FnOnce() -> Option<String>) {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(None) => println!("PASS {label}"),
        Ok(Some(reason)) => println!("SKIP {label}: {reason}"),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            println!("FAIL {label}: {msg}");
            resume_unwind(e);
        }
    }
}

fn within(start: Instant, limit: Duration, what: &str) {
    let took = start.elapsed();
    assert!(took < limit, "{what} took {took:?}, limit {limit:?}");
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn frob(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let len = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..len).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

fn rand_sym(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> SymMatrix {
    SymMatrix::from_fn(n, |_, _| rng.random_range(-scale..scale)).unwrap()
}

fn rand_spd(rng: &mut ChaCha8Rng, n: usize) -> SpdMatrix {
    spd_exp(&rand_sym(rng, n, 1.0)).unwrap()
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, f: usize) -> Graph {
    let mut edges = vec![];
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.random_bool(0.35) {
                edges.push((u, v));
            }
        }
    }
    Graph::new(n, &edges, rand_tensor(rng, &[n, f], -1.0, 1.0), vec![]).unwrap()
}

// ---- 1: numerical kernels ------------------------------------------------

#[test]
fn c1_numerical_kernels() {
    run("c1 numerical kernels", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut worst_rec = 0.0f64;
        let mut worst_orth = 0.0f64;
        for k in 0..1000 {
            let n = 1 + k % 8;
            let scale = [1e-3, 1.0, 10.0, 1e3][k % 4];
            let s = rand_sym(&mut rng, n, scale);
            let eig = sym_eig(&s).unwrap();
            let (u, l) = (eig.vectors(), eig.values());
            let mut rec = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    rec[i * n + j] = (0..n).map(|m| u[i * n + m] * l[m] * u[j * n + m]).sum();
                }
            }
            let err: Vec<f64> = rec.iter().zip(s.as_slice()).map(|(a, b)| a - b).collect();
            let rel = frob(&err) / (1.0 + s.frobenius_norm());
            assert!(rel <= 1e-9, "reconstruction {rel:e} at matrix {k}");
            worst_rec = worst_rec.max(rel);
            let utu = matmul(n, &transpose(n, u), u);
            let id = SymMatrix::identity(n);
            let orth = max_diff(&utu, id.as_slice());
            assert!(orth <= 1e-10, "orthogonality {orth:e} at matrix {k}");
            worst_orth = worst_orth.max(orth);
            assert!(l.windows(2).all(|w| w[0] >= w[1]));
        }

        for _ in 0..500 {
            let n = rng.random_range(1..=6);
            let s = rand_sym(&mut rng, n, 1.0);
            let back = spd_log(&spd_exp(&s).unwrap()).unwrap();
            assert!(max_diff(back.as_slice(), s.as_slice()) <= 1e-8);
            let p = rand_spd(&mut rng, n);
            let again = spd_exp(&spd_log(&p).unwrap()).unwrap();
            assert!(max_diff(again.as_slice(), p.as_slice()) <= 1e-8 * (1.0 + p.as_sym().frobenius_norm()));
        }

        for _ in 0..300 {
            let n = rng.random_range(2..=5);
            let (p, q) = (rand_spd(&mut rng, n), rand_spd(&mut rng, n));
            let id = SpdMatrix::identity(n);
            assert!(max_diff(spd_gyro_add(&p, &id).unwrap().as_slice(), p.as_slice()) <= 1e-8);
            assert!(max_diff(spd_gyro_add(&id, &p).unwrap().as_slice(), p.as_slice()) <= 1e-8);
            let inv = spd_gyro_inverse(&p).unwrap();
            assert!(max_diff(spd_gyro_add(&p, &inv).unwrap().as_slice(), id.as_slice()) <= 1e-8);
            let left = spd_gyro_add(&inv, &spd_gyro_add(&p, &q).unwrap()).unwrap();
            assert!(max_diff(left.as_slice(), q.as_slice()) <= 1e-8 * (1.0 + q.as_sym().frobenius_norm()));

            let m_raw: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let m = orthogonalize(n, &m_raw).unwrap();
            let mtm = matmul(n, &transpose(n, &m), &m);
            assert!(max_diff(&mtm, id.as_slice()) <= 1e-10);
            let d0 = spd_distance(&p, &q).unwrap();
            let d1 = spd_distance(&spd_isometry(&m_raw, &p).unwrap(), &spd_isometry(&m_raw, &q).unwrap()).unwrap();
            assert!((d0 - d1).abs() <= 1e-8, "isometry moved distance by {:e}", (d0 - d1).abs());

            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-0.4..0.4)).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(-0.4..0.4)).collect();
            let zero = vec![0.0; n];
            let neg: Vec<f64> = x.iter().map(|v| -v).collect();
            assert!(max_diff(&mobius_add(&x, &zero).unwrap(), &x) <= 1e-8);
            assert!(max_diff(&mobius_add(&zero, &x).unwrap(), &x) <= 1e-8);
            assert!(max_diff(&mobius_add(&neg, &x).unwrap(), &zero) <= 1e-8);
            let cancel = mobius_add(&neg, &mobius_add(&x, &y).unwrap()).unwrap();
            assert!(max_diff(&cancel, &y) <= 1e-8);

            let floor = 0.5;
            let r = reeig(&p, floor).unwrap();
            assert!(r.min_eigenvalue().unwrap() >= floor - 1e-12);
            assert!(tgreeig(&p).unwrap().min_eigenvalue().unwrap() >= 1.0 - 1e-12);
        }
        println!("  worst reconstruction {worst_rec:.2e}, worst orthogonality {worst_orth:.2e}");
        within(start, Duration::from_secs(30), "kernel suite");
        None
    });
}

// ---- 2: finite-difference gradients --------------------------------------

fn fd_ok(label: &str, inputs: &[Tensor], f: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Result<Var<'t>, spdgnn::autodiff::AdError>) {
    let res: Vec<GradCheck> = check(inputs, 1e-6, f).unwrap();
    for (k, r) in res.iter().enumerate() {
        assert!(r.relative_error <= 1e-4, "{label} input {k}: relative error {:e}", r.relative_error);
    }
}

/// Weighted sum with fixed random weights, so every output entry matters.
fn probe<'t>(v: Var<'t>, seed: u64) -> Result<Var<'t>, spdgnn::autodiff::AdError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = rand_tensor(&mut rng, &v.shape(), -1.0, 1.0);
    v.mul(v.tape().constant(w))?.sum()
}

/// Symmetric matrices with eigenvalues spread around `base` by at least `gap`.
fn gapped_sym(rng: &mut ChaCha8Rng, batch: usize, n: usize, base: f64, gap: f64) -> Tensor {
    let mut data = Vec::with_capacity(batch * n * n);
    for _ in 0..batch {
        let m_raw: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let q = orthogonalize(n, &m_raw).unwrap();
        let l: Vec<f64> = (0..n).map(|i| base + gap * i as f64 + rng.random_range(0.0..0.3 * gap)).collect();
        for i in 0..n {
            for j in 0..n {
                data.push((0..n).map(|m| q[i * n + m] * l[m] * q[j * n + m]).sum());
            }
        }
    }
    Tensor::new(vec![batch, n, n], data).unwrap()
}

#[test]
fn c2_finite_difference_gradients() {
    run("c2 finite-difference gradients", || {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lo = |rng: &mut ChaCha8Rng, s: &[usize]| {
            // keep entries away from the kinks at 0
            let t = rand_tensor(rng, s, 0.1, 1.0);
            let signs = rand_tensor(rng, s, -1.0, 1.0);
            Tensor::new(s.to_vec(), t.data().iter().zip(signs.data()).map(|(a, b)| a * b.signum()).collect()).unwrap()
        };
        let a = lo(&mut rng, &[3, 4]);
        let b = lo(&mut rng, &[3, 4]);
        let pos = rand_tensor(&mut rng, &[3, 4], 0.2, 2.0);
        fd_ok("add", &[a.clone(), b.clone()], |_, v| probe(v[0].add(v[1])?, 1));
        fd_ok("sub", &[a.clone(), b.clone()], |_, v| probe(v[0].sub(v[1])?, 2));
        fd_ok("mul", &[a.clone(), b.clone()], |_, v| probe(v[0].mul(v[1])?, 3));
        fd_ok("scale", &[a.clone()], |_, v| probe(v[0].scale(-1.3)?.add_scalar(0.2)?.neg()?, 4));
        for (name, u, x) in [
            ("relu", Unary::Relu, &a),
            ("leaky_relu", Unary::LeakyRelu(0.2), &a),
            ("exp", Unary::Exp, &a),
            ("ln", Unary::Ln, &pos),
            ("tanh", Unary::Tanh, &a),
            ("recip", Unary::Recip, &pos),
            ("sqrt", Unary::Sqrt, &pos),
            ("square", Unary::Square, &a),
        ] {
            fd_ok(name, &[x.clone()], |_, v| probe(v[0].unary(u)?, 5));
        }
        fd_ok("sum/mean", &[a.clone()], |_, v| v[0].sum()?.add(v[0].mean()?));
        fd_ok("sum_last", &[a.clone()], |_, v| probe(v[0].sum_last()?, 6));
        fd_ok("sum_rows", &[a.clone()], |_, v| probe(v[0].sum_rows()?, 7));
        fd_ok("softmax", &[a.clone()], |_, v| probe(v[0].softmax()?, 8));
        fd_ok("frobenius_norm_sq", &[a.clone()], |_, v| v[0].frobenius_norm_sq());

        let x = rand_tensor(&mut rng, &[4, 3], -1.0, 1.0);
        let y = rand_tensor(&mut rng, &[4, 2], -1.0, 1.0);
        let bias = rand_tensor(&mut rng, &[3], -1.0, 1.0);
        let w4 = rand_tensor(&mut rng, &[4], -1.0, 1.0);
        let m = rand_tensor(&mut rng, &[2, 3, 3], -1.0, 1.0);
        let idx = Rc::new(vec![2, 0, 3, 3, 1, 0]);
        fd_ok("add_bias", &[x.clone(), bias.clone()], |_, v| probe(v[0].add_bias(v[1])?, 9));
        fd_ok("row_scale", &[x.clone(), w4.clone()], |_, v| probe(v[0].row_scale(v[1])?, 10));
        fd_ok("gather/scatter", &[x.clone()], |_, v| probe(v[0].gather_rows(idx.clone())?.scatter_add_rows(idx.clone(), 5)?, 11));
        fd_ok("concat", &[x.clone(), y.clone()], |_, v| probe(Var::concat(&[v[0], v[1]])?, 12));
        fd_ok("stack_columns", &[w4.clone(), w4.clone()], |_, v| probe(Var::stack_columns(&[v[0], v[1]])?, 13));
        fd_ok("slice_last", &[x.clone()], |_, v| probe(v[0].slice_last(1, 2)?, 14));
        fd_ok("reshape", &[m.clone()], |_, v| probe(v[0].reshape(&[6, 3])?, 15));
        fd_ok("transpose", &[m.clone()], |_, v| probe(v[0].transpose()?, 16));
        fd_ok("symmetrize", &[m.clone()], |_, v| probe(v[0].symmetrize()?, 17));
        fd_ok("trace", &[m.clone()], |_, v| probe(v[0].trace()?, 18));
        fd_ok("vec_upper", &[m.clone()], |_, v| probe(v[0].vec_upper()?, 19));
        fd_ok("sym_from_upper", &[x.clone()], |_, v| probe(v[0].sym_from_upper()?, 20));
        fd_ok("segment_softmax", &[w4.clone()], |_, v| probe(v[0].segment_softmax(Rc::new(vec![0, 1, 4]))?, 21));
        fd_ok("dropout", &[x.clone()], |_, v| probe(v[0].dropout(0.4, &mut ChaCha8Rng::seed_from_u64(5), true)?, 22));
        let sq = rand_tensor(&mut rng, &[4, 4], -1.0, 1.0);
        let sq2 = rand_tensor(&mut rng, &[4, 4], -1.0, 1.0);
        fd_ok("matmul", &[sq.clone(), sq2.clone()], |_, v| probe(v[0].matmul(v[1])?, 23));
        fd_ok("batched matmul", &[m.clone(), rand_tensor(&mut rng, &[3, 2], -1.0, 1.0)], |_, v| probe(v[0].matmul(v[1])?, 24));
        fd_ok("linear", &[x.clone(), rand_tensor(&mut rng, &[5, 3], -1.0, 1.0)], |_, v| probe(v[0].linear(v[1])?, 25));
        fd_ok("orthogonalize", &[sq.clone()], |_, v| probe(v[0].orthogonalize()?, 26));

        let spd = gapped_sym(&mut rng, 2, 3, 0.5, 0.4);
        let sym = gapped_sym(&mut rng, 2, 3, -0.6, 0.4);
        for (name, f, input) in [
            ("sym_exp", EigFn::Exp, &sym),
            ("sym_log", EigFn::Log, &spd),
            ("sym_sqrt", EigFn::Sqrt, &spd),
            ("sym_inv_sqrt", EigFn::InvSqrt, &spd),
            ("sym_inverse", EigFn::Inverse, &spd),
            ("eig floor", EigFn::Floor(0.75), &spd),
        ] {
            fd_ok(name, &[input.clone()], |_, v| probe(v[0].symmetrize()?.eig_fn(f)?, 27));
        }

        let ball = rand_tensor(&mut rng, &[3, 4], -0.4, 0.4);
        let ball2 = rand_tensor(&mut rng, &[3, 4], -0.4, 0.4);
        let big = rand_tensor(&mut rng, &[3, 4], 1.0, 2.0);
        fd_ok("expmap0", &[ball.clone()], |_, v| probe(v[0].expmap0()?, 28));
        fd_ok("logmap0", &[ball.clone()], |_, v| probe(v[0].logmap0()?, 29));
        fd_ok("project_ball", &[big], |_, v| probe(v[0].project_ball()?, 30));
        fd_ok("mobius_add", &[ball.clone(), ball2], |_, v| probe(v[0].mobius_add(v[1])?, 31));

        let scores = Tensor::matrix(3, 3, vec![0.3, 1.9, -0.8, 2.2, 0.1, 0.4, -0.5, 0.7, 1.6]).unwrap();
        let labels = Rc::new(vec![1, 0, 2]);
        fd_ok("cross_entropy", &[scores.clone()], |_, v| v[0].cross_entropy(labels.clone()));
        fd_ok("multi_margin", &[scores.clone()], |_, v| v[0].multi_margin(labels.clone(), 1.0));
        fd_ok("pairwise_hinge", &[scores.clone()], |_, v| v[0].pairwise_hinge(labels.clone()));

        // every architecture in every geometry, end to end through the linear head
        let g = Graph::new(2, &[(0, 1)], Tensor::matrix(2, 3, vec![0.4, -0.7, 0.2, -0.1, 0.5, 0.9]).unwrap(), vec![]).unwrap();
        let ops = g.ops();
        let labels = Rc::new(vec![0, 1]);
        for arch in Arch::ALL {
            for name in ["euclidean", "hyperbolic", "spd", "product"] {
                let geo = GeometryContext::from_name(name, 6).unwrap();
                let mut params = ParamSet::new();
                let mut init_rng = ChaCha8Rng::seed_from_u64(3);
                let mut cfg = ModelConfig::new(arch, geo, 3);
                cfg.nonlinearity = Nonlinearity::ReEig(0.05);
                let model = Model::init(cfg, &mut params, &mut init_rng).unwrap();
                let head = Head::init(ClassifierKind::LinearXe, geo, 2, 0.0, &mut params, &mut init_rng).unwrap();
                // move off the zero biases, where ReLU inputs sit exactly on a kink
                let inputs: Vec<Tensor> = params
                    .iter()
                    .map(|p| {
                        if p.name.ends_with(".b") || p.name.ends_with(".eps") {
                            rand_tensor(&mut init_rng, p.value.shape(), -0.3, 0.3)
                        } else {
                            p.value.clone()
                        }
                    })
                    .collect();
                let res = check(&inputs, 1e-5, |t, vars| {
                    let outs = model.forward(vars, &ops, t.constant(g.features.clone()), &mut ChaCha8Rng::seed_from_u64(0), false)?;
                    head.scores(vars, *outs.last().unwrap())?.cross_entropy(labels.clone())
                })
                .unwrap();
                for (k, r) in res.iter().enumerate() {
                    assert!(r.relative_error <= 1e-4, "{arch:?} {name} {}: {:e}", params.name(k), r.relative_error);
                }
            }
        }
        within(start, Duration::from_secs(300), "gradient checks");
        None
    });
}

// ---- 3: oracle equivalence -----------------------------------------------

fn dense_gcn(g: &Graph, x: &Tensor, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let n = g.num_nodes();
    let (out, f) = (w.shape()[0], w.shape()[1]);
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    for (u, v) in g.edges() {
        a[u * n + v] = 1.0;
        a[v * n + u] = 1.0;
    }
    let deg: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a[i * n + j]).sum()).collect();
    let mut res = vec![0.0; n * out];
    for i in 0..n {
        for o in 0..out {
            let mut s = 0.0;
            for j in 0..n {
                let xw: f64 = (0..f).map(|k| x.data()[j * f + k] * w.data()[o * f + k]).sum();
                s += a[i * n + j] / (deg[i] * deg[j]).sqrt() * xw;
            }
            res[i * out + o] = (s + b.data()[o]).max(0.0);
        }
    }
    res
}

#[test]
fn c3_oracle_equivalence() {
    run("c3 oracle equivalence", || {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.random_range(1..=10);
            let g = random_graph(&mut rng, n, 5);
            let w = rand_tensor(&mut rng, &[4, 5], -1.0, 1.0);
            let b = rand_tensor(&mut rng, &[4], -0.5, 0.5);
            let out = euclidean_gcn_layer(&g, &g.features, &w, &b).unwrap();
            let d = max_diff(out.data(), &dense_gcn(&g, &g.features, &w, &b));
            assert!(d <= 1e-12, "dense oracle differs by {d:e}");
        }
        for trial in 0..50 {
            let n = 3;
            let nodes = rng.random_range(1..=10);
            let g = random_graph(&mut rng, nodes, 1);
            let z: Vec<SpdMatrix> = (0..nodes).map(|_| rand_spd(&mut rng, n)).collect();
            let m_raw = rand_tensor(&mut rng, &[n, n], -1.0, 1.0);
            let beta = rand_sym(&mut rng, n, 0.5);
            let (nl, floor) = if trial % 2 == 0 { (Nonlinearity::ReEig(0.3), Some(0.3)) } else { (Nonlinearity::TgReEig, None) };
            let out = spd_gcn_layer(&g, &z, &m_raw, &beta, nl).unwrap();

            let m = orthogonalize(n, m_raw.data()).unwrap();
            let logs: Vec<SymMatrix> = z
                .iter()
                .map(|p| {
                    let q = matmul(n, &matmul(n, &m, p.as_slice()), &transpose(n, &m));
                    let q = SymMatrix::new(n, (0..n * n).map(|k| 0.5 * (q[k] + q[(k % n) * n + k / n])).collect()).unwrap();
                    spd_log(&SpdMatrix::new(q).unwrap()).unwrap()
                })
                .collect();
            let c = g.degrees();
            let eb = spd_exp(&beta).unwrap();
            for i in 0..nodes {
                let mut acc = SymMatrix::zeros(n);
                for &j in g.neighbors(i) {
                    acc = acc.add(&logs[j].scale(1.0 / ((c[i] * c[j]) as f64).sqrt())).unwrap();
                }
                let p = spd_exp(&acc).unwrap();
                let shifted = spd_gyro_add(&p, &eb).unwrap();
                let expect = match floor {
                    Some(f) => reeig(&shifted, f).unwrap(),
                    None => tgreeig(&shifted).unwrap(),
                };
                let d = max_diff(out[i].as_slice(), expect.as_slice());
                assert!(d <= 1e-9, "SPD composition differs by {d:e}");
            }
        }
        None
    });
}

// ---- 4: SPD training stays on the manifold ------------------------------

#[test]
fn c4_spd_training_on_tree_of_grids() {
    run("c4 SPD training on tree of grids", || {
        let start = Instant::now();
        let g = synth_tree_of_grids(2, 3, 3, 3, 0).unwrap();
        let split = stratified_node_split(&g.labels, 0.6, 0.2, 0).unwrap();
        let g = g.with_split(split).unwrap();
        let config = TrainConfig {
            dataset: "tree-of-grids".into(),
            geometry: "spd".into(),
            dim: 6,
            nonlinearity: NonlinearityKind::ReEig,
            lr: 0.01,
            max_epochs: Some(200),
            patience: Some(200),
            ..TrainConfig::default()
        };
        let (rec, _) = spdgnn::harness::train_nodes(&config, &g, 0).unwrap();
        assert_eq!(rec.epochs.len(), 200);
        for e in &rec.epochs {
            let l = e.min_eigenvalue.expect("SPD run records eigenvalues");
            assert!(l > 0.0, "epoch {}: min eigenvalue {l:e}", e.epoch);
        }
        println!("  train accuracy {:.3}, test accuracy {:.3}", rec.train_accuracy, rec.test_accuracy);
        assert!(rec.train_accuracy >= 0.9, "train accuracy {}", rec.train_accuracy);
        within(start, Duration::from_secs(300), "SPD training");
        None
    });
}

// ---- 5: Gromov hyperbolicity ----------------------------------------------

fn brute_delta(g: &Graph) -> f64 {
    let n = g.num_nodes();
    let mut d = vec![f64::INFINITY; n * n];
    for i in 0..n {
        for &j in g.neighbors(i) {
            d[i * n + j] = if i == j { 0.0 } else { 1.0 };
        }
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                d[i * n + j] = d[i * n + j].min(d[i * n + k] + d[k * n + j]);
            }
        }
    }
    let mut best = 0.0f64;
    for x in 0..n {
        for y in 0..n {
            for z in 0..n {
                for w in 0..n {
                    let mut s = [d[x * n + y] + d[z * n + w], d[x * n + z] + d[y * n + w], d[x * n + w] + d[y * n + z]];
                    s.sort_by(f64::total_cmp);
                    best = best.max((s[2] - s[1]) / 2.0);
                }
            }
        }
    }
    best
}

#[test]
fn c5_hyperbolicity() {
    run("c5 hyperbolicity", || {
        let mut checked = 0;
        for b in 1..=5 {
            for depth in 0..=7 {
                let g = synth_tree(b, depth, 0).unwrap();
                if g.num_nodes() > 100 {
                    break;
                }
                assert_eq!(delta_hyperbolicity(&g, DeltaMode::Exact).unwrap(), 0.0, "tree b={b} depth={depth}");
                checked += 1;
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let n = rng.random_range(2..=100);
            let edges: Vec<(usize, usize)> = (1..n).map(|v| (rng.random_range(0..v), v)).collect();
            let g = Graph::new(n, &edges, Tensor::zeros(&[n, 1]), vec![]).unwrap();
            assert_eq!(delta_hyperbolicity(&g, DeltaMode::Exact).unwrap(), 0.0);
            checked += 1;
        }
        let grid = synth_grid(4, 4, 0).unwrap();
        let delta = delta_hyperbolicity(&grid, DeltaMode::Exact).unwrap();
        let oracle = brute_delta(&grid);
        assert_eq!(delta, oracle, "grid delta {delta} against oracle {oracle}");
        println!("  {checked} trees with delta 0, 4x4 grid delta {delta}");
        None
    });
}

// ---- 6: reference accuracies ----------------------------------------------

struct Reference {
    dataset: &'static str,
    geometry: &'static str,
    accuracy: f64,
}

const REFERENCES: [Reference; 4] = [
    Reference { dataset: "disease", geometry: "hyperbolic", accuracy: 96.9 },
    Reference { dataset: "airport", geometry: "spd", accuracy: 71.2 },
    Reference { dataset: "citeseer", geometry: "spd", accuracy: 69.9 },
    Reference { dataset: "cora", geometry: "spd", accuracy: 79.7 },
];

/// Tuned configuration from `best-<geometry>.json` next to the data, or a
/// fresh grid search on seed 0.
fn tuned_config(dir: &Path, geometry: &str, out: &Path) -> (TrainConfig, Dataset) {
    let base = TrainConfig {
        dataset: dir.to_string_lossy().into_owned(),
        geometry: geometry.into(),
        dim: 6,
        ..TrainConfig::default()
    };
    let dataset = load_dataset(&base).unwrap();
    let stored = dir.join(format!("best-{geometry}.json"));
    let mut config = if stored.exists() {
        let mut c = TrainConfig::from_json(&std::fs::read_to_string(&stored).unwrap()).unwrap();
        c.dataset = base.dataset.clone();
        c
    } else {
        let threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1);
        grid_search(&base, &dataset, &out.join("grid"), threads).unwrap().best
    };
    config.seeds = (0..10).collect();
    (config, dataset)
}

fn mean_accuracy(dir: &Path, geometry: &str, out: &Path) -> f64 {
    let (config, dataset) = tuned_config(dir, geometry, out);
    let (row, _) = evaluate(&config, &dataset, out).unwrap();
    100.0 * row.mean_test_accuracy
}

#[test]
fn c6_reference_accuracies() {
    run("c6 reference accuracies", || {
        let Some(root) = std::env::var_os("SPDGNN_DATA_DIR").map(PathBuf::from) else {
            return Some("SPDGNN_DATA_DIR is not set".into());
        };
        let out = tempfile::tempdir().unwrap();
        let mut missing = Vec::new();
        for r in &REFERENCES {
            let dir = root.join(r.dataset);
            if !dir.join("graph.edges").exists() {
                missing.push(r.dataset);
                continue;
            }
            let acc = mean_accuracy(&dir, r.geometry, out.path());
            println!("  {} {}: {acc:.1} (reference {:.1})", r.dataset, r.geometry, r.accuracy);
            assert!((acc - r.accuracy).abs() <= 3.0, "{} off by {:.1} points", r.dataset, acc - r.accuracy);
            if r.geometry == "spd" && matches!(r.dataset, "citeseer" | "cora") {
                let eucl = mean_accuracy(&dir, "euclidean", out.path());
                println!("  {} euclidean: {eucl:.1}", r.dataset);
                assert!(acc >= eucl, "{}: SPD {acc:.1} below Euclidean {eucl:.1}", r.dataset);
            }
        }
        if missing.len() == REFERENCES.len() {
            return Some(format!("no datasets under {}", root.display()));
        }
        if !missing.is_empty() {
            println!("  missing datasets: {}", missing.join(", "));
        }
        None
    });
}

// ---- 7: margin heads ----------------------------------------------------

#[test]
fn c7_margin_heads() {
    run("c7 margin heads", || {
        // linearly separable in log space: the sign of log Z[0,0] - log Z[1,1]
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let count = 40;
        let mut logs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..count {
            let y = i % 2;
            let gap = rng.random_range(0.2..1.5) * if y == 0 { 1.0 } else { -1.0 };
            let base = rng.random_range(-1.0..1.0);
            let off = rng.random_range(-1.0..1.0);
            let z = spd_exp(&SymMatrix::new(2, vec![base + gap, off, off, base]).unwrap()).unwrap();
            logs.extend(spd_log(&z).unwrap().into_vec());
            labels.push(y);
        }
        let x = Tensor::new(vec![count, 2, 2], logs).unwrap();
        let labels = Rc::new(labels);
        let mut params = ParamSet::new();
        params.add("w", Tensor::zeros(&[2, 2, 2]));
        let mut adam = Adam::new(0.05, 0.0, &params);
        let mut solved = None;
        for step in 0..=500 {
            let tape = Tape::new();
            let wv = tape.param(params.get(0).clone());
            let ws = wv.symmetrize().unwrap();
            let preds = argmax_rows(&svm_mm_scores(tape.constant(x.clone()), ws).unwrap().value());
            if preds.iter().zip(labels.iter()).all(|(p, y)| p == y) {
                solved = Some(step);
                break;
            }
            let loss = svm_mm_loss(tape.constant(x.clone()), labels.clone(), ws, 0.0).unwrap();
            let g = tape.backward(loss).unwrap().wrt(wv);
            adam.step(&mut params, &[g]).unwrap();
        }
        let steps = solved.expect("SVM head did not separate the toy set within 500 steps");
        println!("  separated after {steps} steps");

        // zero weights: every hinge is active at 1
        for k in 2..=6usize {
            let tape = Tape::new();
            let n = 5;
            let x = tape.constant(rand_tensor(&mut rng, &[n, 3, 3], -1.0, 1.0));
            let x = x.symmetrize().unwrap();
            let labels = Rc::new((0..n).map(|i| i % k).collect::<Vec<_>>());
            let w = tape.param(Tensor::zeros(&[k, 3, 3]));
            let loss = svm_mm_loss(x, labels, w, 0.0).unwrap().item();
            assert_eq!(loss, (k - 1) as f64 / k as f64, "K = {k}");
        }

        // gradient of the class-k similarity vanishes at its centroid
        for _ in 0..10 {
            let (k, d) = (3, 4);
            let mu = rand_tensor(&mut rng, &[k, d], -1.0, 1.0);
            let p = gapped_sym(&mut rng, k, d, 0.5, 0.3);
            let b = rand_tensor(&mut rng, &[k], -1.0, 1.0);
            for class in 0..k {
                let tape = Tape::new();
                let x = tape.param(Tensor::matrix(1, d, mu.row(class).to_vec()).unwrap());
                let s = nc_mm_scores(x, tape.constant(mu.clone()), tape.constant(p.clone()), tape.constant(b.clone())).unwrap();
                let pick = Tensor::matrix(1, k, (0..k).map(|j| if j == class { 1.0 } else { 0.0 }).collect()).unwrap();
                let sk = s.mul(tape.constant(pick)).unwrap().sum().unwrap();
                let g = tape.backward(sk).unwrap().wrt(x);
                assert!(g.data().iter().all(|&v| v == 0.0), "gradient {:?} at centroid", g.data());
            }
        }
        None
    });
}

// ---- 8: reproducibility ---------------------------------------------------

#[test]
fn c8_bitwise_reproducible_summary() {
    run("c8 bitwise reproducible summary", || {
        let g = synth_tree_of_grids(2, 2, 2, 2, 1).unwrap();
        let split = stratified_node_split(&g.labels, 0.6, 0.2, 1).unwrap();
        let dataset = Dataset::Node(g.with_split(split).unwrap());
        let mut summaries = Vec::new();
        for kind in [ClassifierKind::LinearXe, ClassifierKind::SvmMm, ClassifierKind::NcMm] {
            let config = TrainConfig {
                dataset: "tree-of-grids".into(),
                classifier: kind,
                max_epochs: Some(30),
                patience: Some(30),
                dropout: 0.2,
                seeds: vec![0, 1, 2],
                ..TrainConfig::default()
            };
            let a = tempfile::tempdir().unwrap();
            let b = tempfile::tempdir().unwrap();
            evaluate(&config, &dataset, a.path()).unwrap();
            evaluate(&config, &dataset, b.path()).unwrap();
            let sa = std::fs::read(a.path().join("summary.csv")).unwrap();
            let sb = std::fs::read(b.path().join("summary.csv")).unwrap();
            assert_eq!(sa, sb, "{kind:?} summaries differ");
            summaries.push(sa);
        }
        assert!(summaries.iter().all(|s| !s.is_empty()));
        None
    });
}
