//! Central finite-difference checks for every tape operation.
//!
//! Each op is wrapped in a small scalar-valued graph; the tape gradient of
//! every input entry is compared against (f(x+h) - f(x-h)) / 2h with
//! h = 1e-5, over 100 seeded trials per op.

use gtan_core::kernel::{Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const TRIALS: u64 = 100;

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Checks d(loss)/d(inputs[i][j]) for every input entry against central
/// finite differences. `graph` builds the scalar loss from leaf tensors.
fn check<F: Fn(&mut Tape, &[Var]) -> Var>(name: &str, inputs: &[Tensor], graph: F) {
    let eval = |tensors: &[Tensor]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = tensors.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = graph(&mut tape, &vars);
        tape.value(loss).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = graph(&mut tape, &vars);
    tape.backward(loss).unwrap();

    for (ti, var) in vars.iter().enumerate() {
        let analytic = tape.grad(*var).expect("input should receive a gradient");
        for j in 0..inputs[ti].len() {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[j] += H;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[j] -= H;
            let fd = (eval(&plus) - eval(&minus)) / (2.0 * H);
            let ad = analytic.data()[j];
            assert!(
                rel_err(ad, fd) < TOL,
                "{name}: input {ti} entry {j}: tape {ad} vs fd {fd}"
            );
        }
    }
}

fn rand_tensor<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.gen_range(-2.0..2.0)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

#[test]
fn matmul_gradients() {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = rng.gen_range(1..5);
        let k = rng.gen_range(1..5);
        let n = rng.gen_range(1..5);
        let a = rand_tensor(m, k, &mut rng);
        let b = rand_tensor(k, n, &mut rng);
        check("matmul", &[a, b], |tape, v| {
            let c = tape.matmul(v[0], v[1]).unwrap();
            let s = tape.sigmoid(c);
            tape.sum(s)
        });
    }
}

#[test]
fn sigmoid_matmul_composite_tight_tolerance() {
    // The spec case: composite sigmoid(matmul) graph at < 1e-6 relative error.
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let a = rand_tensor(3, 4, &mut rng);
        let b = rand_tensor(4, 2, &mut rng);
        let eval = |a: &Tensor, b: &Tensor| -> f64 {
            let mut tape = Tape::new();
            let (va, vb) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
            let c = tape.matmul(va, vb).unwrap();
            let s = tape.sigmoid(c);
            let loss = tape.sum(s);
            tape.value(loss).item()
        };
        let mut tape = Tape::new();
        let (va, vb) = (tape.leaf(a.clone()), tape.leaf(b.clone()));
        let c = tape.matmul(va, vb).unwrap();
        let s = tape.sigmoid(c);
        let loss = tape.sum(s);
        tape.backward(loss).unwrap();
        let ga = tape.grad(va).unwrap();
        for j in 0..a.len() {
            let mut plus = a.clone();
            plus.data_mut()[j] += H;
            let mut minus = a.clone();
            minus.data_mut()[j] -= H;
            let fd = (eval(&plus, &b) - eval(&minus, &b)) / (2.0 * H);
            assert!(
                rel_err(ga.data()[j], fd) < 1e-6,
                "entry {j}: {} vs {fd}",
                ga.data()[j]
            );
        }
    }
}

#[test]
fn activation_gradients() {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(rng.gen_range(1..6), rng.gen_range(1..4), &mut rng);
        check("sigmoid", &[x.clone()], |tape, v| {
            let y = tape.sigmoid(v[0]);
            tape.sum(y)
        });
        check("leaky_relu", &[x.clone()], |tape, v| {
            let y = tape.leaky_relu(v[0], 0.01);
            let s = tape.sigmoid(y);
            tape.sum(s)
        });
        let slope = Tensor::scalar(rng.gen_range(0.01..0.5));
        check("prelu", &[x, slope], |tape, v| {
            let y = tape.prelu(v[0], v[1]).unwrap();
            let s = tape.sigmoid(y);
            tape.sum(s)
        });
    }
}

#[test]
fn segment_softmax_gradients() {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let segs = rng.gen_range(1..4);
        let mut offsets = vec![0usize];
        for _ in 0..segs {
            offsets.push(offsets.last().unwrap() + rng.gen_range(1..5));
        }
        let e = *offsets.last().unwrap();
        let logits = rand_tensor(e, 1, &mut rng);
        let weights = rand_tensor(e, 1, &mut rng);
        let offs = offsets.clone();
        check("segment_softmax", &[logits, weights], |tape, v| {
            let alpha = tape.segment_softmax(v[0], &offs).unwrap();
            let weighted = tape.scale_rows(alpha, v[1]).unwrap();
            let s = tape.sigmoid(weighted);
            tape.sum(s)
        });
    }
}

#[test]
fn structural_op_gradients() {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = rng.gen_range(2..6);
        let cols = rng.gen_range(2..5);
        let src = rand_tensor(rows, cols, &mut rng);
        let idx: Vec<usize> = (0..rng.gen_range(1..8))
            .map(|_| rng.gen_range(0..rows))
            .collect();
        let idx2 = idx.clone();
        check("gather_rows", &[src.clone()], |tape, v| {
            let g = tape.gather_rows(v[0], &idx2).unwrap();
            let s = tape.sigmoid(g);
            tape.sum(s)
        });

        let s_col = rand_tensor(rows, 1, &mut rng);
        check("scale_rows", &[src.clone(), s_col], |tape, v| {
            let y = tape.scale_rows(v[0], v[1]).unwrap();
            let s = tape.sigmoid(y);
            tape.sum(s)
        });

        let from = rng.gen_range(0..cols - 1);
        let to = rng.gen_range(from + 1..=cols);
        check("slice_cols", &[src.clone()], |tape, v| {
            let y = tape.slice_cols(v[0], from, to).unwrap();
            let s = tape.sigmoid(y);
            tape.sum(s)
        });

        let rfrom = rng.gen_range(0..rows - 1);
        let rto = rng.gen_range(rfrom + 1..=rows);
        check("slice_rows", &[src.clone()], |tape, v| {
            let y = tape.slice_rows(v[0], rfrom, rto).unwrap();
            let s = tape.sigmoid(y);
            tape.sum(s)
        });

        let other = rand_tensor(rows, rng.gen_range(1..4), &mut rng);
        check("concat_cols", &[src.clone(), other], |tape, v| {
            let y = tape.concat_cols(&[v[0], v[1]]).unwrap();
            let s = tape.sigmoid(y);
            tape.sum(s)
        });

        // Segment sum over row groups.
        let mut offsets = vec![0usize, rng.gen_range(1..=rows)];
        if *offsets.last().unwrap() < rows {
            offsets.push(rows);
        }
        let offs = offsets.clone();
        check("segment_sum_rows", &[src], |tape, v| {
            let y = tape.segment_sum_rows(v[0], &offs).unwrap();
            let s = tape.sigmoid(y);
            tape.sum(s)
        });
    }
}

#[test]
fn bias_affine_bce_gradients() {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows = rng.gen_range(1..6);
        let cols = rng.gen_range(1..4);
        let x = rand_tensor(rows, cols, &mut rng);
        let bias = rand_tensor(1, cols, &mut rng);
        check("add_bias_row", &[x.clone(), bias], |tape, v| {
            let y = tape.add_bias_row(v[0], v[1]).unwrap();
            let s = tape.sigmoid(y);
            tape.sum(s)
        });
        check("affine", &[x.clone()], |tape, v| {
            let y = tape.affine(v[0], -1.0, 1.0);
            let s = tape.sigmoid(y);
            tape.sum(s)
        });
        check("add", &[x.clone(), rand_tensor(rows, cols, &mut rng)], |
            tape,
            v,
        | {
            let y = tape.add(v[0], v[1]).unwrap();
            let s = tape.sigmoid(y);
            tape.sum(s)
        });

        let logits = rand_tensor(rows, 1, &mut rng);
        let targets: Vec<f64> = (0..rows).map(|_| f64::from(rng.gen_range(0..2))).collect();
        let t2 = targets.clone();
        check("mean_bce", &[logits], |tape, v| {
            let p = tape.sigmoid(v[0]);
            tape.mean_bce(p, &t2).unwrap()
        });
    }
}

#[test]
fn dropout_gradient_with_fixed_mask() {
    // With the rng seed held fixed, dropout is a deterministic linear map
    // and must pass the same finite-difference check as any other op.
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = rand_tensor(rng.gen_range(1..6), rng.gen_range(1..4), &mut rng);
        let mask_seed = rng.gen::<u64>();
        check("dropout", &[x], |tape, v| {
            let mut mask_rng = ChaCha8Rng::seed_from_u64(mask_seed);
            let y = tape.dropout(v[0], 0.4, true, &mut mask_rng).unwrap();
            let s = tape.sigmoid(y);
            tape.sum(s)
        });
    }
}

#[test]
fn forward_ops_preserve_finiteness() {
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tape = Tape::new();
        let extreme = tape.leaf(
            Tensor::from_vec(
                4,
                1,
                vec![
                    rng.gen_range(-1e4..1e4),
                    rng.gen_range(-1e4..1e4),
                    1e4,
                    -1e4,
                ],
            )
            .unwrap(),
        );
        let alpha = tape.segment_softmax(extreme, &[0, 4]).unwrap();
        assert!(tape.value(alpha).all_finite());
        let total: f64 = tape.value(alpha).data().iter().sum();
        assert!((total - 1.0).abs() < 1e-6);
        let s = tape.sigmoid(extreme);
        assert!(tape.value(s).all_finite());
        let l = tape.leaky_relu(extreme, 0.01);
        assert!(tape.value(l).all_finite());
    }
}
