use std::f64::consts::{FRAC_PI_2, PI};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tripartite_core::numerics::{
    grad_check, GradCheck, NumericsError, Tape, Tensor, Unary, Var,
};

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Reduces an arbitrary-shaped output to a scalar with fixed random weights so
/// every output component contributes a distinct gradient.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var, NumericsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = tape.shape(y).to_vec();
    let w = tape.constant(random_tensor(&mut rng, &shape, -1.0, 1.0));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn check_primitive<F>(name: &str, shape: &[usize], lo: f64, hi: f64, op: F)
where
    F: Fn(&mut Tape, Var, &mut ChaCha8Rng) -> Result<Var, NumericsError>,
{
    let mut worst: f64 = 0.0;
    for seed in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, shape, lo, hi);
        let err = grad_check(
            |tape, xv| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed + 1000);
                let y = op(tape, xv, &mut rng)?;
                weighted_sum(tape, y, seed)
            },
            &x,
            1e-5,
        )
        .unwrap_or_else(|e| panic!("{name} seed {seed}: {e}"));
        worst = worst.max(err);
    }
    assert!(worst < 1e-6, "{name}: max relative error {worst:e}");
}

#[test]
fn primitive_gradients_match_finite_differences() {
    check_primitive("matmul lhs", &[3, 4], -1.0, 1.0, |t, x, rng| {
        let b = t.constant(random_tensor(rng, &[4, 5], -1.0, 1.0));
        t.matmul(x, b)
    });
    check_primitive("matmul rhs", &[4, 5], -1.0, 1.0, |t, x, rng| {
        let a = t.constant(random_tensor(rng, &[2, 3, 4], -1.0, 1.0));
        t.matmul(a, x)
    });
    check_primitive("matmul_nt", &[5, 4], -1.0, 1.0, |t, x, rng| {
        let a = t.constant(random_tensor(rng, &[3, 4], -1.0, 1.0));
        let y = t.matmul_nt(a, x)?;
        let y2 = t.matmul_nt(x, a)?;
        let s = t.sum(y2);
        t.add(y, s)
    });
    check_primitive("bmm", &[2, 3, 4], -1.0, 1.0, |t, x, rng| {
        let b = t.constant(random_tensor(rng, &[2, 4, 2], -1.0, 1.0));
        let c = t.constant(random_tensor(rng, &[2, 5, 4], -1.0, 1.0));
        let y1 = t.bmm(x, b, false)?;
        let y2 = t.bmm(x, c, true)?;
        let s1 = t.sum(y1);
        t.add(y2, s1)
    });
    check_primitive("bmm rhs", &[2, 5, 4], -1.0, 1.0, |t, x, rng| {
        let a = t.constant(random_tensor(rng, &[2, 3, 4], -1.0, 1.0));
        t.bmm(a, x, true)
    });
    check_primitive("conv2d input", &[2, 5, 5, 2], -1.0, 1.0, |t, x, rng| {
        let w = t.constant(random_tensor(rng, &[3 * 3 * 2, 3], -1.0, 1.0));
        t.conv2d(x, w, 3, 2, 1)
    });
    check_primitive("conv2d weight", &[3 * 3 * 2, 3], -1.0, 1.0, |t, w, rng| {
        let x = t.constant(random_tensor(rng, &[2, 6, 6, 2], -1.0, 1.0));
        t.conv2d(x, w, 3, 2, 1)
    });
    check_primitive("add broadcast", &[4], -1.0, 1.0, |t, x, rng| {
        let a = t.constant(random_tensor(rng, &[3, 4], -1.0, 1.0));
        let y = t.add(a, x)?;
        t.mul(y, y)
    });
    check_primitive("sub", &[3, 4], -1.0, 1.0, |t, x, rng| {
        let b = t.constant(random_tensor(rng, &[4], -1.0, 1.0));
        let y = t.sub(x, b)?;
        t.mul(y, x)
    });
    check_primitive("mul", &[3, 4], -1.0, 1.0, |t, x, rng| {
        let b = t.constant(random_tensor(rng, &[3, 4], -1.0, 1.0));
        t.mul(x, b)
    });
    check_primitive("div", &[4], 0.5, 2.0, |t, x, rng| {
        let a = t.constant(random_tensor(rng, &[3, 4], -1.0, 1.0));
        let y = t.div(a, x)?;
        let z = t.div(x, x)?;
        t.add(y, z)
    });
    check_primitive("mul_rows", &[3], -1.0, 1.0, |t, s, rng| {
        let a = t.constant(random_tensor(rng, &[3, 2, 2], -1.0, 1.0));
        let y = t.mul_rows(a, s)?;
        let sq = t.mul(s, s)?;
        let y2 = t.reshape(y, &[3, 4])?;
        let r = t.reshape(sq, &[3])?;
        let z = t.mul_rows(y2, r)?;
        Ok(z)
    });
    check_primitive("concat", &[3, 2], -1.0, 1.0, |t, x, rng| {
        let b = t.constant(random_tensor(rng, &[3, 4], -1.0, 1.0));
        let y = t.concat(&[x, b, x])?;
        t.mul(y, y)
    });
    check_primitive("softmax", &[3, 5], -2.0, 2.0, |t, x, _| Ok(t.softmax(x)));
    check_primitive("log_softmax", &[3, 5], -2.0, 2.0, |t, x, _| Ok(t.log_softmax(x)));
    check_primitive("sigmoid", &[3, 4], -3.0, 3.0, |t, x, _| Ok(t.sigmoid(x)));
    check_primitive("relu", &[3, 4], -1.0, 1.0, |t, x, _| Ok(t.relu(x)));
    check_primitive("tanh", &[3, 4], -2.0, 2.0, |t, x, _| Ok(t.tanh(x)));
    check_primitive("sin", &[3, 4], -4.0, 4.0, |t, x, _| Ok(t.sin(x)));
    check_primitive("cos", &[3, 4], -4.0, 4.0, |t, x, _| Ok(t.cos(x)));
    check_primitive("exp", &[3, 4], -2.0, 2.0, |t, x, _| Ok(t.exp(x)));
    check_primitive("ln", &[3, 4], 0.5, 3.0, |t, x, _| Ok(t.ln(x)));
    check_primitive("sqrt", &[3, 4], 0.5, 3.0, |t, x, _| Ok(t.sqrt(x)));
    check_primitive("square", &[3, 4], -2.0, 2.0, |t, x, _| Ok(t.unary(x, Unary::Square)));
    check_primitive("abs", &[3, 4], 0.1, 2.0, |t, x, _| {
        let n = t.unary(x, Unary::Neg);
        Ok(t.unary(n, Unary::Abs))
    });
    check_primitive("wrap_phase", &[3, 4], 0.1, 6.0, |t, x, _| {
        let shifted = t.add_scalar(x, 4.0 * PI);
        Ok(t.unary(shifted, Unary::WrapPhase))
    });
    check_primitive("layernorm", &[3, 6], -2.0, 2.0, |t, x, _| Ok(t.layernorm(x, 1e-5)));
    check_primitive("mean_pool", &[2, 3, 4], -1.0, 1.0, |t, x, _| {
        let y = t.mean_pool(x)?;
        t.mul(y, y)
    });
    check_primitive("gather", &[3, 5], -1.0, 1.0, |t, x, _| {
        let y = t.gather(x, &[4, 0, 0, 2])?;
        t.mul(y, y)
    });
    check_primitive("gather_rows", &[4, 3], -1.0, 1.0, |t, x, _| {
        let y = t.gather_rows(x, &[3, 1, 1])?;
        t.mul(y, y)
    });
    check_primitive("pick", &[3, 4], -1.0, 1.0, |t, x, _| {
        let y = t.pick(x, &[1, 3, 0])?;
        t.mul(y, y)
    });
    check_primitive("scale/add_scalar/mean", &[3, 4], -1.0, 1.0, |t, x, _| {
        let y = t.scale(x, -2.5);
        let y = t.add_scalar(y, 0.3);
        let m = t.mean(y);
        let sq = t.mul(y, y)?;
        t.add(sq, m)
    });
    check_primitive("magnitude", &[3, 4], 0.2, 1.5, |t, x, rng| {
        let im = t.constant(random_tensor(rng, &[3, 4], -1.0, 1.0));
        let a = t.magnitude(x, im)?;
        let b = t.magnitude(im, x)?;
        t.add(a, b)
    });
    check_primitive("cross_entropy", &[3, 4], -2.0, 2.0, |t, x, _| t.cross_entropy(x, &[0, 3, 1]));
}

#[test]
fn matmul_identity_returns_operand() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = random_tensor(&mut rng, &[3, 5], -1.0, 1.0);
    let mut t = Tape::new();
    let i = t.constant(Tensor::eye(3));
    let av = t.constant(a.clone());
    let y = t.matmul(i, av).unwrap();
    assert_eq!(t.data(y), a.data());
}

#[test]
fn softmax_of_uniform_logits_is_uniform() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(&[3]));
    let y = t.softmax(x);
    for &p in t.data(y) {
        assert!((p - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn sin_of_half_pi_is_one() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::full(&[2, 2], FRAC_PI_2));
    let y = t.sin(x);
    assert!(t.data(y).iter().all(|&v| v == 1.0));
}

#[test]
fn matmul_shape_mismatch_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[4, 2]));
    match t.matmul(a, b) {
        Err(NumericsError::ShapeMismatch { op, lhs, rhs }) => {
            assert_eq!(op, "matmul");
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![4, 2]);
        }
        other => panic!("expected shape mismatch, got {other:?}"),
    }
}

#[test]
fn backward_of_sum_gives_ones() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::vector(vec![1.0, -2.0, 3.0]).with_requires_grad(true));
    let s = t.sum(x);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0, 1.0, 1.0]);
    let leaf = g.leaf(x).unwrap();
    assert_eq!(leaf.grad().unwrap(), &[1.0, 1.0, 1.0]);
    assert!(leaf.requires_grad());
}

#[test]
fn backward_of_sin_at_zero_is_cos_zero() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(0.0).with_requires_grad(true));
    let y = t.sin(x);
    let g = t.backward(y).unwrap();
    assert_eq!(g.get(x).unwrap(), &[1.0]);
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::zeros(&[2]).with_requires_grad(true));
    let y = t.sin(x);
    assert!(matches!(t.backward(y), Err(NumericsError::NonScalarLoss { .. })));
}

#[test]
fn unreachable_leaf_gets_zero_gradient() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::vector(vec![1.0, 2.0]).with_requires_grad(true));
    let unused = t.leaf(Tensor::vector(vec![5.0]).with_requires_grad(true));
    let s = t.sum(x);
    let g = t.backward(s).unwrap();
    assert_eq!(g.get(unused).unwrap(), &[0.0]);
}

#[test]
fn constants_are_not_tracked() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2]));
    let b = t.sin(a);
    assert!(!t.is_tracked(b));
    let x = t.leaf(Tensor::zeros(&[2]).with_requires_grad(true));
    let c = t.add(b, x).unwrap();
    assert!(t.is_tracked(c));
}

#[test]
fn softmax_cross_entropy_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let x = random_tensor(&mut rng, &[1, 4], -3.0, 3.0);
    let err = grad_check(
        |t, v| {
            let ce = t.cross_entropy(v, &[2])?;
            Ok::<_, NumericsError>(t.sum(ce))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err:e}");
    // Same loss assembled from softmax + ln + pick.
    let err = grad_check(
        |t, v| {
            let p = t.softmax(v);
            let l = t.ln(p);
            let picked = t.pick(l, &[2])?;
            let s = t.sum(picked);
            Ok::<_, NumericsError>(t.scale(s, -1.0))
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err < 1e-6, "{err:e}");
}

#[test]
fn grad_check_of_square_at_three() {
    let err = grad_check(|t, v| Ok::<_, NumericsError>(t.unary(v, Unary::Square)), &Tensor::scalar(3.0), 1e-5)
        .unwrap();
    assert!(err < 1e-8, "{err:e}");
}

#[test]
fn grad_check_flags_abs_kink_at_zero() {
    let res = grad_check(|t, v| Ok::<_, NumericsError>(t.unary(v, Unary::Abs)), &Tensor::scalar(0.0), 1e-5);
    assert!(matches!(res, Err(NumericsError::NonDifferentiable { index: 0, .. })), "{res:?}");
}

#[test]
fn grad_check_reports_non_finite_component() {
    let x = Tensor::vector(vec![1.0, 1e-6]);
    // ln at 1e-6 - 1e-5 is NaN on the minus probe of component 1.
    let res = grad_check(
        |t, v| {
            let l = t.ln(v);
            Ok::<_, NumericsError>(t.sum(l))
        },
        &x,
        1e-5,
    );
    assert_eq!(res, Err(NumericsError::NonFinite { index: 1 }));
}

#[test]
fn grad_check_component_subset() {
    let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
    let report = GradCheck {
        components: Some(vec![2]),
        ..GradCheck::default()
    }
    .run(
        |t, v| {
            let s = t.unary(v, Unary::Square);
            Ok::<_, NumericsError>(t.sum(s))
        },
        &x,
    )
    .unwrap();
    assert_eq!(report.checked, 1);
    assert_eq!(report.worst_component, 2);
}

#[test]
fn conv2d_rejects_tiny_input() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::zeros(&[1, 1, 1, 1]));
    let w = t.constant(Tensor::zeros(&[9, 1]));
    assert!(matches!(t.conv2d(x, w, 3, 1, 0), Err(NumericsError::InvalidShape { .. })));
}

#[test]
fn conv2d_matches_direct_convolution() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (b, h, w, c, k, oc, s, p) = (2, 5, 6, 2, 3, 3, 2, 1);
    let x = random_tensor(&mut rng, &[b, h, w, c], -1.0, 1.0);
    let wt = random_tensor(&mut rng, &[k * k * c, oc], -1.0, 1.0);
    let mut t = Tape::new();
    let xv = t.constant(x.clone());
    let wv = t.constant(wt.clone());
    let y = t.conv2d(xv, wv, k, s, p).unwrap();
    let (ho, wo) = ((h + 2 * p - k) / s + 1, (w + 2 * p - k) / s + 1);
    assert_eq!(t.shape(y), &[b, ho, wo, oc]);
    for bi in 0..b {
        for oy in 0..ho {
            for ox in 0..wo {
                for o in 0..oc {
                    let mut acc = 0.0;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = (oy * s + ky) as isize - p as isize;
                            let ix = (ox * s + kx) as isize - p as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..c {
                                let xv = x.data()[((bi * h + iy as usize) * w + ix as usize) * c + ci];
                                let wv = wt.data()[((ky * k + kx) * c + ci) * oc + o];
                                acc += xv * wv;
                            }
                        }
                    }
                    let got = t.data(y)[((bi * ho + oy) * wo + ox) * oc + o];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(vals in proptest::collection::vec(-50.0f64..50.0, 12)) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(&[3, 4], vals).unwrap());
        let y = t.softmax(x);
        for row in t.data(y).chunks(4) {
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layernorm_rows_are_standardized(vals in proptest::collection::vec(-10.0f64..10.0, 16)) {
        let spread = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
            - vals.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let mut t = Tape::new();
        let x = t.constant(Tensor::new(&[2, 8], vals).unwrap());
        let y = t.layernorm(x, 0.0);
        for row in t.data(y).chunks(8) {
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            if row.iter().any(|v| *v != 0.0) {
                prop_assert!(mean.abs() < 1e-10);
                prop_assert!((var - 1.0).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn doubled_graph_doubles_gradient(vals in proptest::collection::vec(-2.0f64..2.0, 6)) {
        let x = Tensor::new(&[2, 3], vals).unwrap().with_requires_grad(true);
        // x enters each copy once, so the two contributions are bitwise equal.
        let build = |t: &mut Tape, xv: Var| {
            let s = t.sin(xv);
            let sm = t.softmax(s);
            let sq = t.mul(sm, sm).unwrap();
            t.sum(sq)
        };
        let mut t1 = Tape::new();
        let x1 = t1.leaf(x.clone());
        let l1 = build(&mut t1, x1);
        let g1 = t1.backward(l1).unwrap().get(x1).unwrap().to_vec();

        let mut t2 = Tape::new();
        let x2 = t2.leaf(x.clone());
        let a = build(&mut t2, x2);
        let b = build(&mut t2, x2);
        let l2 = t2.add(a, b).unwrap();
        let g2 = t2.backward(l2).unwrap().get(x2).unwrap().to_vec();
        for (u, v) in g1.iter().zip(&g2) {
            prop_assert_eq!(2.0 * u, *v);
        }
    }

    #[test]
    fn doubled_multi_use_graph_doubles_gradient_up_to_rounding(vals in proptest::collection::vec(-2.0f64..2.0, 6)) {
        let x = Tensor::new(&[2, 3], vals).unwrap().with_requires_grad(true);
        let build = |t: &mut Tape, xv: Var| {
            let s = t.sin(xv);
            let sm = t.softmax(s);
            let sq = t.mul(sm, xv).unwrap();
            t.sum(sq)
        };
        let mut t1 = Tape::new();
        let x1 = t1.leaf(x.clone());
        let l1 = build(&mut t1, x1);
        let g1 = t1.backward(l1).unwrap().get(x1).unwrap().to_vec();
        let mut t2 = Tape::new();
        let x2 = t2.leaf(x.clone());
        let a = build(&mut t2, x2);
        let b = build(&mut t2, x2);
        let l2 = t2.add(a, b).unwrap();
        let g2 = t2.backward(l2).unwrap().get(x2).unwrap().to_vec();
        for (u, v) in g1.iter().zip(&g2) {
            prop_assert!((2.0 * u - v).abs() <= 1e-14 * v.abs().max(1.0));
        }
    }
}
