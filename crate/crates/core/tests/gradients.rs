//! Central-difference checks of every differentiable primitive and of the
//! composed layers built from them.

use rand::Rng;
use seqadv_core::nn::{Activation, CnnConfig, Dense, Gru, GruLayer, Mode, ParamSet, ShallowCnn};
use seqadv_core::rng::SeededRng;
use seqadv_core::tensor::{grad_check, Tape, Tensor, Var};
use seqadv_core::Result;

const EPS: f64 = 1e-6;
const TOL: f64 = 1e-5;
const INSTANCES: u64 = 10;

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

/// Magnitude in [lo, hi] with a random sign.
fn away_from_zero(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
    let mut t = random(shape, lo, hi, rng);
    for v in t.data_mut() {
        if rng.gen::<bool>() {
            *v = -*v;
        }
    }
    t
}

/// `sum(weights ⊙ y)` so that every output coordinate carries a distinct,
/// order-one sensitivity.
fn weighted_sum(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let mut rng = SeededRng::new(seed);
    let w = random(&shape, 0.5, 1.5, &mut rng);
    let wv = tape.leaf(&w);
    let p = tape.mul(y, wv)?;
    Ok(tape.sum(p))
}

fn check_all<F>(name: &str, mut make: F)
where
    F: FnMut(u64) -> f64,
{
    for i in 0..INSTANCES {
        let err = make(i);
        assert!(err <= TOL, "{name} instance {i}: relative error {err:e}");
    }
}

#[test]
fn unary_primitives() {
    check_all("sigmoid", |i| {
        let x = random(&[3, 4], -3.0, 3.0, &mut SeededRng::new(i));
        grad_check(
            |t, x| {
                let y = t.sigmoid(x);
                weighted_sum(t, y, i)
            },
            &x,
            EPS,
        )
        .unwrap()
    });
    check_all("tanh", |i| {
        let x = random(&[3, 4], -2.0, 2.0, &mut SeededRng::new(i));
        grad_check(
            |t, x| {
                let y = t.tanh(x);
                weighted_sum(t, y, i)
            },
            &x,
            EPS,
        )
        .unwrap()
    });
    check_all("relu", |i| {
        let x = away_from_zero(&[3, 4], 0.1, 2.0, &mut SeededRng::new(i));
        grad_check(
            |t, x| {
                let y = t.relu(x);
                weighted_sum(t, y, i)
            },
            &x,
            EPS,
        )
        .unwrap()
    });
    check_all("log", |i| {
        let x = random(&[3, 4], 0.2, 3.0, &mut SeededRng::new(i));
        grad_check(
            |t, x| {
                let y = t.log(x);
                weighted_sum(t, y, i)
            },
            &x,
            EPS,
        )
        .unwrap()
    });
    check_all("clamp", |i| {
        let x = away_from_zero(&[3, 4], 0.05, 0.45, &mut SeededRng::new(i));
        let x = {
            let mut x = x;
            // half the coordinates land outside the clamp window
            for (k, v) in x.data_mut().iter_mut().enumerate() {
                if k % 2 == 0 {
                    *v *= 4.0;
                }
            }
            x
        };
        grad_check(
            |t, x| {
                let y = t.clamp(x, -0.5, 0.5);
                weighted_sum(t, y, i)
            },
            &x,
            EPS,
        )
        .unwrap()
    });
    check_all("abs", |i| {
        let x = away_from_zero(&[3, 4], 0.1, 2.0, &mut SeededRng::new(i));
        grad_check(
            |t, x| {
                let y = t.abs(x);
                weighted_sum(t, y, i)
            },
            &x,
            EPS,
        )
        .unwrap()
    });
    check_all("square", |i| {
        let x = away_from_zero(&[3, 4], 0.1, 2.0, &mut SeededRng::new(i));
        grad_check(
            |t, x| {
                let y = t.square(x);
                weighted_sum(t, y, i)
            },
            &x,
            EPS,
        )
        .unwrap()
    });
    check_all("sqrt", |i| {
        let x = random(&[3, 4], 0.2, 3.0, &mut SeededRng::new(i));
        grad_check(
            |t, x| {
                let y = t.sqrt(x);
                weighted_sum(t, y, i)
            },
            &x,
            EPS,
        )
        .unwrap()
    });
    check_all("affine", |i| {
        let x = random(&[3, 4], -2.0, 2.0, &mut SeededRng::new(i));
        grad_check(
            |t, x| {
                let y = t.affine(x, -0.7, 0.3);
                weighted_sum(t, y, i)
            },
            &x,
            EPS,
        )
        .unwrap()
    });
}

#[test]
fn binary_primitives_with_broadcast() {
    for (name, op) in [("add", 0), ("sub", 1), ("mul", 2)] {
        check_all(name, |i| {
            let mut rng = SeededRng::new(100 + i);
            let a = random(&[3, 4], -2.0, 2.0, &mut rng);
            let row = random(&[4], -2.0, 2.0, &mut rng);
            let scalar = random(&[1], 0.5, 2.0, &mut rng);
            let apply = |t: &mut Tape, x: Var, y: Var| match op {
                0 => t.add(x, y),
                1 => t.sub(x, y),
                _ => t.mul(x, y),
            };
            // gradient w.r.t. the full operand, the row and the scalar
            let e1 = grad_check(
                |t, x| {
                    let r = t.leaf(&row);
                    let y = apply(t, x, r)?;
                    weighted_sum(t, y, i)
                },
                &a,
                EPS,
            )
            .unwrap();
            let e2 = grad_check(
                |t, r| {
                    let x = t.leaf(&a);
                    let y = apply(t, x, r)?;
                    weighted_sum(t, y, i)
                },
                &row,
                EPS,
            )
            .unwrap();
            let e3 = grad_check(
                |t, s| {
                    let x = t.leaf(&a);
                    let y = apply(t, s, x)?;
                    weighted_sum(t, y, i)
                },
                &scalar,
                EPS,
            )
            .unwrap();
            e1.max(e2).max(e3)
        });
    }
}

#[test]
fn matmul_and_linear() {
    check_all("matmul", |i| {
        let mut rng = SeededRng::new(200 + i);
        let a = random(&[3, 5], -1.0, 1.0, &mut rng);
        let b = random(&[5, 2], -1.0, 1.0, &mut rng);
        let ea = grad_check(
            |t, x| {
                let bv = t.leaf(&b);
                let y = t.matmul(x, bv)?;
                weighted_sum(t, y, i)
            },
            &a,
            EPS,
        )
        .unwrap();
        let eb = grad_check(
            |t, x| {
                let av = t.leaf(&a);
                let y = t.matmul(av, x)?;
                weighted_sum(t, y, i)
            },
            &b,
            EPS,
        )
        .unwrap();
        ea.max(eb)
    });
    check_all("sum(matmul(x, W))", |i| {
        let mut rng = SeededRng::new(250 + i);
        let x = random(&[2, 4], -1.0, 1.0, &mut rng);
        let w = random(&[4, 3], 0.2, 1.0, &mut rng);
        grad_check(
            |t, x| {
                let wv = t.leaf(&w);
                let y = t.matmul(x, wv)?;
                Ok(t.sum(y))
            },
            &x,
            EPS,
        )
        .unwrap()
    });
    check_all("linear", |i| {
        let mut rng = SeededRng::new(300 + i);
        let x = random(&[4, 6], -1.0, 1.0, &mut rng);
        let w = random(&[3, 6], -1.0, 1.0, &mut rng);
        let b = random(&[3], -1.0, 1.0, &mut rng);
        let (xr, wr, br) = (&x, &w, &b);
        let f = |which: usize| {
            move |t: &mut Tape, v: Var| {
                let xs = [t.leaf(xr), t.leaf(wr), t.leaf(br)];
                let mut args = xs;
                args[which] = v;
                let y = t.linear(args[0], args[1], Some(args[2]))?;
                weighted_sum(t, y, i)
            }
        };
        let ex = grad_check(f(0), &x, EPS).unwrap();
        let ew = grad_check(f(1), &w, EPS).unwrap();
        let eb = grad_check(f(2), &b, EPS).unwrap();
        ex.max(ew).max(eb)
    });
}

#[test]
fn sum_of_matmul_gradient_is_row_broadcast_of_column_sums() {
    let mut rng = SeededRng::new(7);
    let a = random(&[3, 4], -1.0, 1.0, &mut rng);
    let b = random(&[4, 2], -1.0, 1.0, &mut rng);
    let mut tape = Tape::new();
    let av = tape.leaf(&a.clone().with_grad());
    let bv = tape.leaf(&b);
    let c = tape.matmul(av, bv).unwrap();
    let l = tape.sum(c);
    tape.backward(l).unwrap();
    let g = tape.grad(av).unwrap();
    // row sums of B (sum over its columns) broadcast over A's rows
    for r in 0..3 {
        for k in 0..4 {
            let expect = b.data()[k * 2] + b.data()[k * 2 + 1];
            assert!((g[r * 4 + k] - expect).abs() < 1e-12);
        }
    }
    let err = grad_check(
        |t, x| {
            let bv = t.leaf(&b);
            let y = t.matmul(x, bv)?;
            Ok(t.sum(y))
        },
        &a,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL);
}

#[test]
fn conv_pool_and_reshaping() {
    check_all("conv2d", |i| {
        let mut rng = SeededRng::new(400 + i);
        let x = random(&[1, 6, 6], -1.0, 1.0, &mut rng);
        let k = random(&[2, 1, 3, 3], -1.0, 1.0, &mut rng);
        let b = random(&[2], -1.0, 1.0, &mut rng);
        let (xr, kr, br) = (&x, &k, &b);
        let f = |which: usize| {
            move |t: &mut Tape, v: Var| {
                let mut args = [t.leaf(xr), t.leaf(kr), t.leaf(br)];
                args[which] = v;
                let y = t.conv2d(args[0], args[1], args[2])?;
                weighted_sum(t, y, i)
            }
        };
        let ex = grad_check(f(0), &x, EPS).unwrap();
        let ek = grad_check(f(1), &k, EPS).unwrap();
        let eb = grad_check(f(2), &b, EPS).unwrap();
        ex.max(ek).max(eb)
    });
    check_all("batched conv2d", |i| {
        let mut rng = SeededRng::new(450 + i);
        let x = random(&[2, 2, 5, 5], -1.0, 1.0, &mut rng);
        let k = random(&[3, 2, 2, 2], -1.0, 1.0, &mut rng);
        let b = random(&[3], -1.0, 1.0, &mut rng);
        let ex = grad_check(
            |t, v| {
                let kv = t.leaf(&k);
                let bv = t.leaf(&b);
                let y = t.conv2d(v, kv, bv)?;
                weighted_sum(t, y, i)
            },
            &x,
            EPS,
        )
        .unwrap();
        let ek = grad_check(
            |t, v| {
                let xv = t.leaf(&x);
                let bv = t.leaf(&b);
                let y = t.conv2d(xv, v, bv)?;
                weighted_sum(t, y, i)
            },
            &k,
            EPS,
        )
        .unwrap();
        ex.max(ek)
    });
    check_all("maxpool2d", |i| {
        // distinct values spaced far beyond eps keep the argmax stable
        let mut rng = SeededRng::new(500 + i);
        let mut vals: Vec<f64> = (0..32).map(|k| k as f64 * 0.1).collect();
        for k in (1..vals.len()).rev() {
            vals.swap(k, rng.gen_range(0..=k));
        }
        let x = Tensor::new(&[2, 4, 4], vals).unwrap();
        grad_check(
            |t, v| {
                let y = t.maxpool2d(v)?;
                weighted_sum(t, y, i)
            },
            &x,
            EPS,
        )
        .unwrap()
    });
    check_all("sum_rows/reshape/concat", |i| {
        let mut rng = SeededRng::new(600 + i);
        let x = random(&[3, 4], -1.0, 1.0, &mut rng);
        let other = random(&[3, 2], -1.0, 1.0, &mut rng);
        grad_check(
            |t, v| {
                let o = t.leaf(&other);
                let c = t.concat_cols(&[o, v, o])?;
                let r = t.reshape(c, &[6, 4])?;
                let s = t.sum_rows(r)?;
                let sq = t.square(s);
                weighted_sum(t, sq, i)
            },
            &x,
            EPS,
        )
        .unwrap()
    });
    check_all("normalize_rows", |i| {
        let x = away_from_zero(&[3, 4], 0.2, 1.5, &mut SeededRng::new(700 + i));
        grad_check(
            |t, v| {
                let y = t.normalize_rows(v);
                weighted_sum(t, y, i)
            },
            &x,
            EPS,
        )
        .unwrap()
    });
}

#[test]
fn constant_function_has_zero_error() {
    let x = Tensor::vector(vec![1.0, 2.0]);
    let err = grad_check(|t, _| Ok(t.input(Tensor::scalar(4.0))), &x, EPS).unwrap();
    assert_eq!(err, 0.0);
}

#[test]
fn sum_sigmoid_is_tight() {
    for i in 0..INSTANCES {
        let x = random(&[5], -2.0, 2.0, &mut SeededRng::new(800 + i));
        let err = grad_check(
            |t, v| {
                let s = t.sigmoid(v);
                Ok(t.sum(s))
            },
            &x,
            EPS,
        )
        .unwrap();
        assert!(err <= 1e-6, "{err:e}");
    }
}

#[test]
fn backward_is_linear() {
    let mut rng = SeededRng::new(9);
    for _ in 0..INSTANCES {
        let x = random(&[6], -1.5, 1.5, &mut rng);
        let (a, b) = (rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
        let grad_of = |combine: &dyn Fn(&mut Tape, Var, Var) -> Var| {
            let mut tape = Tape::new();
            let v = tape.leaf(&x.clone().with_grad());
            let s = tape.sigmoid(v);
            let f = tape.sum(s);
            let th = tape.tanh(v);
            let sq = tape.square(th);
            let g = tape.sum(sq);
            let root = combine(&mut tape, f, g);
            tape.backward(root).unwrap();
            tape.grad(v).unwrap().to_vec()
        };
        let gf = grad_of(&|_, f, _| f);
        let gg = grad_of(&|_, _, g| g);
        let gc = grad_of(&|t, f, g| {
            let fa = t.scale(f, a);
            let gb = t.scale(g, b);
            t.add(fa, gb).unwrap()
        });
        for k in 0..x.len() {
            let expect = a * gf[k] + b * gg[k];
            assert!((gc[k] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }
}

#[test]
fn forward_backward_is_bit_reproducible() {
    let run = || {
        let mut ps = ParamSet::new();
        let gru = Gru::new(&mut ps, "g", 3, &[4, 4], &mut SeededRng::new(42));
        let mut rng = SeededRng::new(43);
        let mut tape = Tape::new();
        let b = ps.bind(&mut tape, true);
        let xs: Vec<Var> = (0..3)
            .map(|_| tape.leaf(&random(&[2, 3], -1.0, 1.0, &mut rng)))
            .collect();
        let hs = gru.sequence(&mut tape, &b, &xs).unwrap();
        let s = tape.sum(*hs.last().unwrap());
        tape.backward(s).unwrap();
        ps.accumulate_grads(&tape, &b).unwrap();
        let mut out = Vec::new();
        for (_, t) in ps.iter() {
            out.extend(t.data().iter().map(|v| v.to_bits()));
            out.extend(t.grad().unwrap().iter().map(|v| v.to_bits()));
        }
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn dense_layer_gradients() {
    check_all("dense", |i| {
        let mut rng = SeededRng::new(900 + i);
        let mut ps = ParamSet::new();
        let d = Dense::new(&mut ps, "d", 5, 3, &mut rng);
        let x = random(&[2, 5], -1.0, 1.0, &mut rng);
        let w = ps.get(d.w).clone();
        grad_check(
            |t, v| {
                let b = ps.bind(t, false).with(d.w, v);
                let xv = t.leaf(&x);
                let y = d.forward(t, &b, xv, Activation::Tanh)?;
                weighted_sum(t, y, i)
            },
            &w,
            EPS,
        )
        .unwrap()
    });
}

#[test]
fn gru_step_gradients() {
    check_all("gru_step", |i| {
        let mut rng = SeededRng::new(1000 + i);
        let mut ps = ParamSet::new();
        let layer = GruLayer::new(&mut ps, "g", 4, 3, &mut rng);
        // non-zero biases exercise the bias paths
        for id in [layer.bz, layer.br, layer.bh] {
            *ps.get_mut(id) = random(&[3], -0.5, 0.5, &mut rng).with_grad();
        }
        let x = random(&[2, 4], -1.0, 1.0, &mut rng);
        let h = random(&[2, 3], -0.9, 0.9, &mut rng);
        let mut worst = 0.0f64;
        for id in [
            layer.wz, layer.wr, layer.wh, layer.uz, layer.ur, layer.uh, layer.bz, layer.br, layer.bh,
        ] {
            let p = ps.get(id).clone();
            let e = grad_check(
                |t, v| {
                    let b = ps.bind(t, false).with(id, v);
                    let xv = t.leaf(&x);
                    let hv = t.leaf(&h);
                    let y = layer.step(t, &b, xv, hv)?;
                    weighted_sum(t, y, i)
                },
                &p,
                EPS,
            )
            .unwrap();
            worst = worst.max(e);
        }
        let eh = grad_check(
            |t, v| {
                let b = ps.bind(t, false);
                let xv = t.leaf(&x);
                let y = layer.step(t, &b, xv, v)?;
                weighted_sum(t, y, i)
            },
            &h,
            EPS,
        )
        .unwrap();
        worst.max(eh)
    });
}

#[test]
fn gru_sequence_matches_unrolled_steps_and_gradients() {
    let mut rng = SeededRng::new(77);
    let mut ps = ParamSet::new();
    let gru = Gru::new(&mut ps, "g", 3, &[5, 4], &mut rng);
    let xs_t: Vec<Tensor> = (0..3).map(|_| random(&[3], -1.0, 1.0, &mut rng)).collect();
    let mut tape = Tape::new();
    let b = ps.bind(&mut tape, false);
    let xs: Vec<Var> = xs_t.iter().map(|x| tape.leaf(x)).collect();
    let outs = gru.sequence(&mut tape, &b, &xs).unwrap();
    // explicit unrolling
    let (l0, l1) = (gru.layers[0], gru.layers[1]);
    let mut h0 = l0.zero_state(&mut tape, xs[0]);
    let mut h1 = l1.zero_state(&mut tape, xs[0]);
    for (t, &x) in xs.iter().enumerate() {
        h0 = l0.step(&mut tape, &b, x, h0).unwrap();
        h1 = l1.step(&mut tape, &b, h0, h1).unwrap();
        assert_eq!(tape.value(h1), tape.value(outs[t]));
    }
    // single timestep reduces to one step from zero
    let one = gru.sequence(&mut tape, &b, &xs[..1]).unwrap();
    assert_eq!(tape.value(one[0]), tape.value(outs[0]));

    let uz = gru.layers[0].uz;
    let p = ps.get(uz).clone();
    let err = grad_check(
        |t, v| {
            let b = ps.bind(t, false).with(uz, v);
            let xs: Vec<Var> = xs_t.iter().map(|x| t.leaf(x)).collect();
            let hs = gru.sequence(t, &b, &xs)?;
            weighted_sum(t, *hs.last().unwrap(), 5)
        },
        &p,
        EPS,
    )
    .unwrap();
    assert!(err <= TOL, "{err:e}");
}

#[test]
fn shallow_cnn_first_stage_kernel_gradients() {
    // 12 -3-> 10 -> 5 -2-> 4 -> 2 -1-> 2 -> 1
    let cfg = CnnConfig {
        extent: 12,
        channels: [2, 3, 4],
        kernels: [3, 2, 1],
        penultimate: 6,
        labels: 4,
    };
    cfg.flat_width().unwrap();
    check_all("cnn stage-1 kernels", |i| {
        let mut rng = SeededRng::new(1100 + i);
        let mut ps = ParamSet::new();
        let cnn = ShallowCnn::new(&mut ps, "c", cfg.clone(), &mut rng).unwrap();
        // keep pre-activations away from the relu kink
        for t in ps.tensors_mut() {
            for v in t.data_mut() {
                *v += 0.05;
            }
        }
        let img = random(&[1, 12, 12], 0.0, 1.0, &mut rng);
        let target: Vec<f64> = (0..4).map(|k| k as f64).collect();
        let k0 = cnn.conv[0].0;
        let p = ps.get(k0).clone();
        grad_check(
            |t, v| {
                let b = ps.bind(t, false).with(k0, v);
                let x = t.leaf(&img);
                let (logits, _) = cnn.forward(t, &b, x, Mode::Eval, 0.5, &mut SeededRng::new(0))?;
                let tv = t.leaf(&Tensor::vector(target.clone()));
                let d = t.sub(logits, tv)?;
                let sq = t.square(d);
                Ok(t.sum(sq))
            },
            &p,
            EPS,
        )
        .unwrap()
    });
}
