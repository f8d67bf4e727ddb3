use super::gradcheck::{central_diff, max_rel_err};
use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t() -> Tape<f64> {
    Tape::new()
}

#[test]
fn matmul_identity() {
    let mut g = t();
    let a = g.leaf(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let b = g.leaf(&[2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c), &[3.0, 4.0, 5.0, 6.0]);
}

#[test]
fn matmul_hand() {
    let mut g = t();
    let a = g.leaf(&[1, 2], vec![1.0, 2.0]).unwrap();
    let b = g.leaf(&[2, 1], vec![3.0, 4.0]).unwrap();
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c), &[11.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut g = t();
    let a = g.leaf(&[2, 3], vec![0.0; 6]).unwrap();
    let b = g.leaf(&[2, 2], vec![0.0; 4]).unwrap();
    let err = g.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
}

#[test]
fn matmul_batched_matches_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut g = t();
    let a_data: Vec<f64> = (0..2 * 3 * 4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let b_data: Vec<f64> = (0..4 * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let a = g.leaf(&[2, 3, 4], a_data.clone()).unwrap();
    let b = g.leaf(&[4, 2], b_data.clone()).unwrap();
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.shape(c), &[2, 3, 2]);
    for t in 0..2 {
        for i in 0..3 {
            for j in 0..2 {
                let mut acc = 0.0;
                for k in 0..4 {
                    acc += a_data[t * 12 + i * 4 + k] * b_data[k * 2 + j];
                }
                let got = g.value(c)[t * 6 + i * 2 + j];
                assert!((got - acc).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn softmax_symmetry_and_stability() {
    let mut g = t();
    let x = g.leaf(&[4], vec![0.0; 4]).unwrap();
    let y = g.softmax(x, 0).unwrap();
    for v in g.value(y) {
        assert!((v - 0.25).abs() < 1e-12);
    }

    let x = g.leaf(&[2], vec![1000.0, 0.0]).unwrap();
    let y = g.softmax(x, 0).unwrap();
    let v = g.value(y);
    assert!(v.iter().all(|p| p.is_finite()));
    assert!((v[0] - 1.0).abs() < 1e-12 && v[1] < 1e-300);
}

#[test]
fn softmax_sums_to_one_along_axis() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut g = t();
    let data: Vec<f64> = (0..3 * 5 * 2).map(|_| rng.gen_range(-4.0..4.0)).collect();
    let x = g.leaf(&[3, 5, 2], data).unwrap();
    let y = g.softmax(x, 1).unwrap();
    let v = g.value(y);
    for o in 0..3 {
        for i in 0..2 {
            let s: f64 = (0..5).map(|k| v[o * 10 + k * 2 + i]).sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!((0..5).all(|k| v[o * 10 + k * 2 + i] >= 0.0));
        }
    }
}

#[test]
fn reduce_examples() {
    let mut g = t();
    let x = g.leaf(&[3], vec![1.0, 5.0, 3.0]).unwrap();
    let mx = g.reduce(x, 0, ReduceMode::Max).unwrap();
    assert_eq!(g.value(mx), &[5.0]);
    let root = g.reshape(mx, &[1]).unwrap();
    g.backward(root).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0, 0.0]);

    let mut g = t();
    let x = g.leaf(&[3], vec![1.0, 5.0, 3.0]).unwrap();
    let s = g.reduce(x, 0, ReduceMode::Sum).unwrap();
    assert_eq!(g.value(s), &[9.0]);
}

#[test]
fn reduce_max_tie_routes_to_first() {
    let mut g = t();
    let x = g.leaf(&[2], vec![2.0, 2.0]).unwrap();
    let mx = g.reduce(x, 0, ReduceMode::Max).unwrap();
    let root = g.reshape(mx, &[1]).unwrap();
    g.backward(root).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 0.0]);
}

#[test]
fn reduce_empty_axis_errors() {
    let mut g = t();
    let x = g.leaf(&[2, 0], vec![]).unwrap();
    assert!(matches!(
        g.reduce(x, 1, ReduceMode::Sum),
        Err(TensorError::EmptyAxis { .. })
    ));
    let x2 = g.leaf(&[2], vec![0.0, 0.0]).unwrap();
    assert!(matches!(
        g.reduce(x2, 3, ReduceMode::Sum),
        Err(TensorError::InvalidAxis { .. })
    ));
}

#[test]
fn gather_identity_and_swap() {
    let mut g = t();
    let x = g.leaf(&[2, 1], vec![1.0, 2.0]).unwrap();
    let y = g.gather_rows(x, &[1, 0], 1).unwrap();
    assert_eq!(g.shape(y), &[2, 1, 1]);
    assert_eq!(g.value(y), &[2.0, 1.0]);

    // idx[i,k] = i repeats each row K times.
    let mut g = t();
    let x = g.leaf(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let y = g.gather_rows(x, &[0, 0, 0, 1, 1, 1], 3).unwrap();
    assert_eq!(g.value(y), &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0, 3.0, 4.0, 3.0, 4.0, 3.0, 4.0]);
}

#[test]
fn gather_out_of_range_names_position() {
    let mut g = t();
    let x = g.leaf(&[2, 1], vec![1.0, 2.0]).unwrap();
    let err = g.gather_rows(x, &[0, 5, 1, 0], 2).unwrap_err();
    match err {
        TensorError::IndexOutOfRange {
            row,
            col,
            index,
            bound,
        } => {
            assert_eq!((row, col, index, bound), (0, 1, 5, 2));
        }
        other => panic!("unexpected error {other:?}"),
    }
}

#[test]
fn gather_backward_counts_occurrences() {
    // d/dx sum(gather(x, idx)) = per-row occurrence count.
    let mut g = t();
    let x = g.leaf(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
    let idx = [0u32, 0, 2, 0, 2, 2];
    let y = g.gather_rows(x, &idx, 2).unwrap();
    let root = g.reduce_all(y, ReduceMode::Sum).unwrap();
    g.backward(root).unwrap();
    let mut counts = [0.0; 3];
    for &i in &idx {
        counts[i as usize] += 1.0;
    }
    assert_eq!(g.grad(x).unwrap(), &counts);
}

#[test]
fn concat_columns() {
    let mut g = t();
    let a = g.leaf(&[2, 1], vec![1.0, 2.0]).unwrap();
    let b = g.leaf(&[2, 1], vec![3.0, 4.0]).unwrap();
    let c = g.concat(&[a, b], 1).unwrap();
    assert_eq!(g.shape(c), &[2, 2]);
    assert_eq!(g.value(c), &[1.0, 3.0, 2.0, 4.0]);
}

#[test]
fn add_zero_is_identity_with_unit_gradient() {
    let mut g = t();
    let x = g.leaf(&[3], vec![1.0, -2.0, 3.0]).unwrap();
    let z = g.constant(&[3], vec![0.0; 3]).unwrap();
    let y = g.add(x, z).unwrap();
    assert_eq!(g.value(y), g.value(x));
    let root = g.reduce_all(y, ReduceMode::Sum).unwrap();
    g.backward(root).unwrap();
    assert_eq!(g.grad(x).unwrap(), &[1.0, 1.0, 1.0]);
}

#[test]
fn leaky_relu_definition() {
    let mut g = t();
    let x = g.leaf(&[2], vec![-1.0, 2.0]).unwrap();
    let y = g.leaky_relu(x, 0.2).unwrap();
    assert_eq!(g.value(y), &[-0.2, 2.0]);
}

#[test]
fn backward_requires_scalar_root() {
    let mut g = t();
    let x = g.leaf(&[2], vec![1.0, 2.0]).unwrap();
    assert!(matches!(
        g.backward(x),
        Err(TensorError::NonScalarRoot { .. })
    ));
}

#[test]
fn diamond_graph_sums_both_paths() {
    // y = sum(x*x + x) consumes x twice: dy/dx = 2x + 1.
    let mut g = t();
    let x = g.leaf(&[2], vec![3.0, -1.5]).unwrap();
    let sq = g.mul(x, x).unwrap();
    let s = g.add(sq, x).unwrap();
    let root = g.reduce_all(s, ReduceMode::Sum).unwrap();
    g.backward(root).unwrap();
    let got = g.grad(x).unwrap();
    assert!((got[0] - 7.0).abs() < 1e-12);
    assert!((got[1] - (-2.0)).abs() < 1e-12);
}

#[test]
fn seeded_replay_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut g = t();
        let data: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x = g.leaf(&[3, 4], data).unwrap();
        let w_data: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = g.leaf(&[4, 2], w_data).unwrap();
        let h = g.matmul(x, w).unwrap();
        let a = g.leaky_relu(h, 0.2).unwrap();
        let sm = g.softmax(a, 1).unwrap();
        let root = g.reduce_all(sm, ReduceMode::Mean).unwrap();
        g.backward(root).unwrap();
        (g.value(sm).to_vec(), g.grad(x).unwrap().to_vec())
    };
    let (v1, g1) = run();
    let (v2, g2) = run();
    assert!(v1.iter().zip(&v2).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(g1.iter().zip(&g2).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn works_with_f32_scalars() {
    let mut g: Tape<f32> = Tape::new();
    let a = g.leaf(&[1, 2], vec![1.0, 2.0]).unwrap();
    let b = g.leaf(&[2, 1], vec![3.0, 4.0]).unwrap();
    let c = g.matmul(a, b).unwrap();
    assert_eq!(g.value(c), &[11.0f32]);
    let root = g.reshape(c, &[1]).unwrap();
    g.backward(root).unwrap();
    assert_eq!(g.grad(a).unwrap(), &[3.0f32, 4.0]);
}

#[test]
fn first_non_finite_reports_label() {
    let mut g = t();
    let x = g.leaf(&[2], vec![1.0, 0.0]).unwrap();
    let y = g.scale(x, f64::INFINITY).unwrap();
    let (label, _) = g.first_non_finite().unwrap();
    assert_eq!(label, "scale");
    let _ = y;
}

// ── Finite-difference checks for every differentiable op ────────────────

/// Builds a scalar-rooted graph from flat probe data.
type BuildFn = fn(&mut Tape<f64>, &[f64]) -> TensorId;

/// Same graph, but returns the analytic gradient with respect to every
/// differentiable leaf, concatenated in creation order. Build closures must
/// therefore consume the probe vector in disjoint slices, in order.
fn analytic_grad(build: impl Fn(&mut Tape<f64>, &[f64]) -> TensorId, x: &[f64]) -> Vec<f64> {
    let mut g = t();
    let root = build(&mut g, x);
    g.backward(root).unwrap();
    let mut out = Vec::new();
    for i in 0..g.len() {
        let node = &g.nodes[i];
        if matches!(node.op, Op::Leaf) && node.requires_grad {
            match &node.grad {
                Some(gr) => out.extend_from_slice(gr),
                None => out.extend(std::iter::repeat(0.0).take(node.data.len())),
            }
        }
    }
    out
}

fn fd_check(name: &str, n: usize, build: impl Fn(&mut Tape<f64>, &[f64]) -> TensorId + Copy) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let f = |v: &[f64]| {
        let mut g = t();
        let root = build(&mut g, v);
        g.value(root)[0]
    };
    let numeric = central_diff(f, &x, 1e-5);
    let analytic = analytic_grad(build, &x);
    let err = max_rel_err(&analytic, &numeric);
    assert!(err < 1e-4, "{name}: max relative error {err}");
}

#[test]
fn fd_matmul() {
    // Gradient of sum(a·b) wrt a on random 4x3 · 3x2.
    fd_check("matmul", 12, |g, v| {
        let a = g.leaf(&[4, 3], v.to_vec()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b_data: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = g.constant(&[3, 2], b_data).unwrap();
        let c = g.matmul(a, b).unwrap();
        g.reduce_all(c, ReduceMode::Sum).unwrap()
    });
}

#[test]
fn fd_softmax() {
    // Random length-8 vector; weighted sum output for a non-trivial VJP.
    fd_check("softmax", 8, |g, v| {
        let x = g.leaf(&[8], v.to_vec()).unwrap();
        let y = g.softmax(x, 0).unwrap();
        let w: Vec<f64> = (0..8).map(|i| (i as f64 + 1.0) * 0.3).collect();
        let wc = g.constant(&[8], w).unwrap();
        let p = g.mul(y, wc).unwrap();
        g.reduce_all(p, ReduceMode::Sum).unwrap()
    });
}

#[test]
fn fd_all_ops() {
    let cases: Vec<(&str, usize, BuildFn)> = vec![
        ("matmul_batched", 24, |g, v| {
            let a = g.leaf(&[2, 3, 4], v.to_vec()).unwrap();
            let b = g.constant(&[4, 2], vec![0.3, -0.2, 0.5, 0.9, -0.4, 0.1, 0.7, -0.6]).unwrap();
            let c = g.matmul(a, b).unwrap();
            g.reduce_all(c, ReduceMode::Sum).unwrap()
        }),
        ("transpose2", 6, |g, v| {
            let a = g.leaf(&[2, 3], v.to_vec()).unwrap();
            let at = g.transpose2(a).unwrap();
            let w = g.constant(&[3, 2], vec![0.2, 0.4, -0.3, 0.8, 0.5, -0.7]).unwrap();
            let p = g.mul(at, w).unwrap();
            g.reduce_all(p, ReduceMode::Sum).unwrap()
        }),
        ("concat", 6, |g, v| {
            let a = g.leaf(&[3, 2], v.to_vec()).unwrap();
            let b = g.constant(&[3, 1], vec![0.5, -0.5, 0.25]).unwrap();
            let c = g.concat(&[a, b], 1).unwrap();
            let w = g.constant(&[3, 3], (0..9).map(|i| 0.1 * i as f64).collect()).unwrap();
            let p = g.mul(c, w).unwrap();
            g.reduce_all(p, ReduceMode::Sum).unwrap()
        }),
        ("gather", 8, |g, v| {
            let a = g.leaf(&[4, 2], v.to_vec()).unwrap();
            let y = g.gather_rows(a, &[0, 3, 1, 1, 2, 0], 3).unwrap();
            let w = g.constant(&[2, 3, 2], (0..12).map(|i| 0.2 * i as f64 - 1.0).collect()).unwrap();
            let p = g.mul(y, w).unwrap();
            g.reduce_all(p, ReduceMode::Sum).unwrap()
        }),
        ("log_softmax", 8, |g, v| {
            let x = g.leaf(&[2, 4], v.to_vec()).unwrap();
            let y = g.log_softmax(x, 1).unwrap();
            let w = g.constant(&[2, 4], (0..8).map(|i| 0.1 * (i as f64) + 0.1).collect()).unwrap();
            let p = g.mul(y, w).unwrap();
            g.reduce_all(p, ReduceMode::Sum).unwrap()
        }),
        ("reduce_sum_axis", 12, |g, v| {
            let x = g.leaf(&[2, 3, 2], v.to_vec()).unwrap();
            let y = g.reduce(x, 1, ReduceMode::Sum).unwrap();
            let w = g.constant(&[2, 2], vec![0.3, 0.6, -0.4, 0.8]).unwrap();
            let p = g.mul(y, w).unwrap();
            g.reduce_all(p, ReduceMode::Sum).unwrap()
        }),
        ("reduce_mean_axis", 12, |g, v| {
            let x = g.leaf(&[2, 3, 2], v.to_vec()).unwrap();
            let y = g.reduce(x, 1, ReduceMode::Mean).unwrap();
            let w = g.constant(&[2, 2], vec![0.3, 0.6, -0.4, 0.8]).unwrap();
            let p = g.mul(y, w).unwrap();
            g.reduce_all(p, ReduceMode::Sum).unwrap()
        }),
        ("reduce_max_axis", 12, |g, v| {
            let x = g.leaf(&[2, 3, 2], v.to_vec()).unwrap();
            let y = g.reduce(x, 1, ReduceMode::Max).unwrap();
            let w = g.constant(&[2, 2], vec![0.3, 0.6, -0.4, 0.8]).unwrap();
            let p = g.mul(y, w).unwrap();
            g.reduce_all(p, ReduceMode::Sum).unwrap()
        }),
        ("add_broadcast", 9, |g, v| {
            let x = g.leaf(&[2, 3], v[..6].to_vec()).unwrap();
            let b = g.leaf(&[3], v[6..9].to_vec()).unwrap();
            let y = g.add(x, b).unwrap();
            g.reduce_all(y, ReduceMode::Sum).unwrap()
        }),
        ("sub_broadcast", 18, |g, v| {
            let x = g.leaf(&[2, 1, 3], v[..6].to_vec()).unwrap();
            let b = g.leaf(&[2, 2, 3], v[6..18].to_vec()).unwrap();
            let y = g.sub(x, b).unwrap();
            let w = g.constant(&[2, 2, 3], (0..12).map(|i| 0.1 * i as f64 + 0.05).collect()).unwrap();
            let p = g.mul(y, w).unwrap();
            g.reduce_all(p, ReduceMode::Sum).unwrap()
        }),
        ("mul_broadcast", 12, |g, v| {
            let x = g.leaf(&[3, 3], v[..9].to_vec()).unwrap();
            let b = g.leaf(&[3], v[9..12].to_vec()).unwrap();
            let y = g.mul(x, b).unwrap();
            g.reduce_all(y, ReduceMode::Sum).unwrap()
        }),
        ("scale", 5, |g, v| {
            let x = g.leaf(&[5], v.to_vec()).unwrap();
            let y = g.scale(x, -1.7).unwrap();
            g.reduce_all(y, ReduceMode::Sum).unwrap()
        }),
        ("mul_const_mask", 6, |g, v| {
            let x = g.leaf(&[6], v.to_vec()).unwrap();
            let y = g.mul_const(x, vec![2.0, 0.0, 2.0, 0.0, 2.0, 2.0]).unwrap();
            g.reduce_all(y, ReduceMode::Sum).unwrap()
        }),
        ("leaky_relu", 6, |g, v| {
            let x = g.leaf(&[6], v.to_vec()).unwrap();
            let y = g.leaky_relu(x, 0.2).unwrap();
            let w = g.constant(&[6], (0..6).map(|i| 0.2 * i as f64 + 0.1).collect()).unwrap();
            let p = g.mul(y, w).unwrap();
            g.reduce_all(p, ReduceMode::Sum).unwrap()
        }),
        ("abs", 6, |g, v| {
            let x = g.leaf(&[6], v.to_vec()).unwrap();
            let y = g.abs(x).unwrap();
            let w = g.constant(&[6], (0..6).map(|i| 0.2 * i as f64 + 0.1).collect()).unwrap();
            let p = g.mul(y, w).unwrap();
            g.reduce_all(p, ReduceMode::Sum).unwrap()
        }),
        ("broadcast_to", 3, |g, v| {
            let x = g.leaf(&[1, 3], v.to_vec()).unwrap();
            let y = g.broadcast_to(x, &[4, 3]).unwrap();
            let w = g.constant(&[4, 3], (0..12).map(|i| 0.1 * i as f64 - 0.5).collect()).unwrap();
            let p = g.mul(y, w).unwrap();
            g.reduce_all(p, ReduceMode::Sum).unwrap()
        }),
        ("select_class", 8, |g, v| {
            let x = g.leaf(&[4, 2], v.to_vec()).unwrap();
            let y = g.select_class(x, &[1, 0, 0, 1]).unwrap();
            g.reduce_all(y, ReduceMode::Sum).unwrap()
        }),
        ("reshape", 6, |g, v| {
            let x = g.leaf(&[2, 3], v.to_vec()).unwrap();
            let y = g.reshape(x, &[3, 2]).unwrap();
            let w = g.constant(&[3, 2], (0..6).map(|i| 0.3 * i as f64 - 0.4).collect()).unwrap();
            let p = g.mul(y, w).unwrap();
            g.reduce_all(p, ReduceMode::Sum).unwrap()
        }),
    ];
    for (name, n, build) in cases {
        fd_check(name, n, build);
    }
}

#[test]
fn fd_batch_norm_train_and_eval() {
    // Gradient through batch statistics, for input, gamma and beta.
    let n = 4 * 3 + 3 + 3;
    fd_check("batch_norm_train", n, |g, v| {
        let x = g.leaf(&[4, 3], v[..12].to_vec()).unwrap();
        let gamma_data: Vec<f64> = v[12..15].iter().map(|u| u + 1.5).collect();
        let gamma = g.leaf(&[3], gamma_data).unwrap();
        let beta = g.leaf(&[3], v[15..18].to_vec()).unwrap();
        let (y, _, _) = g.batch_norm_train(x, gamma, beta, 1e-6).unwrap();
        let w = g
            .constant(&[4, 3], (0..12).map(|i| 0.15 * i as f64 - 0.8).collect())
            .unwrap();
        let p = g.mul(y, w).unwrap();
        g.reduce_all(p, ReduceMode::Sum).unwrap()
    });
    fd_check("batch_norm_eval", n, |g, v| {
        let x = g.leaf(&[4, 3], v[..12].to_vec()).unwrap();
        let gamma_data: Vec<f64> = v[12..15].iter().map(|u| u + 1.5).collect();
        let gamma = g.leaf(&[3], gamma_data).unwrap();
        let beta = g.leaf(&[3], v[15..18].to_vec()).unwrap();
        let y = g
            .batch_norm_eval(x, gamma, beta, &[0.1, -0.2, 0.05], &[0.9, 1.1, 1.3], 1e-6)
            .unwrap();
        let w = g
            .constant(&[4, 3], (0..12).map(|i| 0.15 * i as f64 - 0.8).collect())
            .unwrap();
        let p = g.mul(y, w).unwrap();
        g.reduce_all(p, ReduceMode::Sum).unwrap()
    });
}

/// Gradient check over the analytic gradients of every input of a
/// two-operand op (both sides marked differentiable).
#[test]
fn fd_matmul_both_operands() {
    fd_check("matmul_b_side", 18, |g, v| {
        let a = g.leaf(&[4, 3], v[..12].to_vec()).unwrap();
        let b_full: Vec<f64> = v[12..].to_vec();
        let b = g.leaf(&[3, 2], b_full).unwrap();
        let c = g.matmul(a, b).unwrap();
        g.reduce_all(c, ReduceMode::Sum).unwrap()
    });
}
