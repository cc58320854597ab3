use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Checks d(sum(f(inputs) * proj))/d(inputs) against central differences.
fn gradcheck(inputs: Vec<Tensor>, f: impl Fn(&mut Graph, &[Var]) -> Result<Var>) {
    const H: f64 = 1e-5;
    let eval = |xs: &[Tensor]| -> (f64, Option<Vec<Tensor>>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|x| g.input(x.clone().with_grad())).collect();
        let out = f(&mut g, &vars).unwrap();
        // fixed pseudo-random projection so every output entry matters
        let proj: Vec<f64> = (0..g.value(out).len()).map(|i| ((i as f64) * 0.731 + 0.2).sin()).collect();
        let proj = Tensor::new(g.value(out).shape().to_vec(), proj).unwrap();
        let value = g.value(out).data().iter().zip(proj.data()).map(|(a, b)| a * b).sum();
        let grads = g.backward(out, &proj).unwrap();
        let gs = vars
            .iter()
            .zip(xs)
            .map(|(&v, x)| grads.wrt(v).cloned().unwrap_or_else(|| Tensor::zeros(x.shape())))
            .collect();
        (value, Some(gs))
    };
    let (_, analytic) = eval(&inputs);
    let analytic = analytic.unwrap();
    for (k, x) in inputs.iter().enumerate() {
        for i in 0..x.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += H;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= H;
            let numeric = (eval(&plus).0 - eval(&minus).0) / (2.0 * H);
            let a = analytic[k].data()[i];
            let tol = 1e-4 * a.abs().max(numeric.abs()) + 1e-7;
            assert!((a - numeric).abs() <= tol, "input {k} entry {i}: analytic {a} numeric {numeric}");
        }
    }
}

#[test]
fn square_value_and_gradient() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(3.0).with_grad());
    let y = g.mul(x, x).unwrap();
    assert_eq!(g.value(y).item(), 9.0);
    let grads = g.backward_scalar(y).unwrap();
    assert_eq!(grads.wrt(x).unwrap().item(), 6.0);
}

#[test]
fn identity_matmul_leaves_b() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let b = random(&mut rng, 2, 4);
    let mut g = Graph::new();
    let i = g.constant(Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let bv = g.constant(b.clone());
    let out = g.matmul(i, bv).unwrap();
    assert_eq!(g.value(out), &Tensor::matrix(2, 4, b.data().to_vec()).unwrap());
}

#[test]
fn sum_of_product_gradient_is_column_sums() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = random(&mut rng, 3, 4);
    let b = random(&mut rng, 4, 2);
    let mut g = Graph::new();
    let av = g.input(a.with_grad());
    let bv = g.constant(b.clone());
    let p = g.matmul(av, bv).unwrap();
    let s = g.sum(p).unwrap();
    let grads = g.backward_scalar(s).unwrap();
    let ga = grads.wrt(av).unwrap();
    for r in 0..3 {
        for k in 0..4 {
            let row_sum: f64 = b.row_slice(k).iter().sum();
            assert!((ga.data()[r * 4 + k] - row_sum).abs() < 1e-15);
        }
    }
}

#[test]
fn mlp_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dims = [5usize, 7, 6, 3];
    let mut store = ParamStore::new();
    let mut layers = Vec::new();
    for w in dims.windows(2) {
        let wt = store.add("w", random(&mut rng, w[0], w[1]));
        let bt = store.add("b", random(&mut rng, 1, w[1]));
        layers.push((wt, bt));
    }
    let x = random(&mut rng, 4, 5);
    let mut g = Graph::with_params(&store);
    let mut h = g.input(x.clone());
    for (li, &(w, b)) in layers.iter().enumerate() {
        let (wv, bv) = (g.param(w), g.param(b));
        h = g.affine(h, wv, bv).unwrap();
        if li + 1 < layers.len() {
            h = g.relu(h).unwrap();
        }
    }
    // straight-line evaluation
    let mut cur: Vec<Vec<f64>> = (0..4).map(|r| x.row_slice(r).to_vec()).collect();
    for (li, &(w, b)) in layers.iter().enumerate() {
        let (w, b) = (store.get(w), store.get(b));
        let (nin, nout) = (w.rows(), w.cols());
        cur = cur
            .iter()
            .map(|row| {
                (0..nout)
                    .map(|o| {
                        let mut acc = b.data()[o];
                        for i in 0..nin {
                            acc += row[i] * w.data()[i * nout + o];
                        }
                        if li + 1 < layers.len() {
                            acc.max(0.0)
                        } else {
                            acc
                        }
                    })
                    .collect()
            })
            .collect();
    }
    let got = g.value(h);
    for r in 0..4 {
        for c in 0..3 {
            assert!((got.data()[r * 3 + c] - cur[r][c]).abs() < 1e-12);
        }
    }
}

#[test]
fn forward_is_bit_identical() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random(&mut rng, 6, 5);
        let b = random(&mut rng, 5, 4);
        let mut g = Graph::new();
        let (a, b) = (g.input(a), g.input(b));
        let m = g.matmul(a, b).unwrap();
        let r = g.relu(m).unwrap();
        g.value(r).clone()
    };
    assert_eq!(run(), run());
}

#[test]
fn backward_rejects_foreign_and_reset_handles() {
    let mut g1 = Graph::new();
    let x = g1.input(Tensor::scalar(1.0).with_grad());
    let g2 = Graph::new();
    assert!(matches!(g2.backward_scalar(x), Err(Error::BackwardBeforeForward)));
    g1.reset();
    assert!(matches!(g1.backward_scalar(x), Err(Error::BackwardBeforeForward)));
}

#[test]
fn shape_errors_name_the_node() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[2, 3]));
    match g.matmul(a, b) {
        Err(Error::Shape { node, op, .. }) => {
            assert_eq!(node, 2);
            assert_eq!(op, "matmul");
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn linearity_of_backward() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, 3, 3);
    let w = random(&mut rng, 3, 3);
    let mut g = Graph::new();
    let xv = g.input(x.with_grad());
    let wv = g.constant(w);
    let m = g.matmul(xv, wv).unwrap();
    let r = g.relu(m).unwrap();
    let l1 = g.sum_squares(r).unwrap();
    let l2 = g.sum(m).unwrap();
    let total = g.add(l1, l2).unwrap();
    let gt = g.backward_scalar(total).unwrap();
    let g1 = g.backward_scalar(l1).unwrap();
    let g2 = g.backward_scalar(l2).unwrap();
    for i in 0..9 {
        let sum = g1.wrt(xv).unwrap().data()[i] + g2.wrt(xv).unwrap().data()[i];
        assert!((gt.wrt(xv).unwrap().data()[i] - sum).abs() < 1e-10);
    }
}

#[test]
fn gradcheck_every_primitive() {
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let r = |rng: &mut ChaCha8Rng, a, b| random(rng, a, b);
        gradcheck(vec![r(&mut rng, 3, 4), r(&mut rng, 4, 2)], |g, v| g.matmul(v[0], v[1]));
        gradcheck(vec![r(&mut rng, 3, 4), r(&mut rng, 4, 2), r(&mut rng, 1, 2)], |g, v| g.affine(v[0], v[1], v[2]));
        for shape in [(3, 4), (1, 4), (1, 1)] {
            let (a, b) = (r(&mut rng, 3, 4), r(&mut rng, shape.0, shape.1));
            gradcheck(vec![a.clone(), b.clone()], |g, v| g.add(v[0], v[1]));
            gradcheck(vec![a.clone(), b.clone()], |g, v| g.sub(v[0], v[1]));
            gradcheck(vec![a, b], |g, v| g.mul(v[0], v[1]));
        }
        gradcheck(vec![r(&mut rng, 3, 4)], |g, v| g.scale(v[0], -2.5));
        gradcheck(vec![r(&mut rng, 3, 4)], |g, v| g.relu(v[0]));
        gradcheck(vec![r(&mut rng, 6, 3)], |g, v| g.group_max(v[0], 3));
        gradcheck(vec![r(&mut rng, 4, 3)], |g, v| g.gather(v[0], vec![3, 0, 0, 2, 3]));
        gradcheck(vec![r(&mut rng, 3, 2), r(&mut rng, 3, 1)], |g, v| g.concat(&[v[0], v[1], v[0]]));
        gradcheck(vec![r(&mut rng, 2, 3), r(&mut rng, 4, 3)], |g, v| g.concat_rows(&[v[0], v[1], v[0]]));
        gradcheck(vec![r(&mut rng, 3, 5)], |g, v| g.slice_cols(v[0], 1, 3));
        gradcheck(vec![r(&mut rng, 3, 5)], |g, v| g.transpose(v[0]));
        gradcheck(vec![r(&mut rng, 3, 4)], |g, v| g.reshape(v[0], &[6, 2]));
        gradcheck(vec![r(&mut rng, 3, 4)], |g, v| g.sum(v[0]));
        gradcheck(vec![r(&mut rng, 3, 4)], |g, v| g.sum_squares(v[0]));
        gradcheck(vec![r(&mut rng, 3, 4)], |g, v| g.mean_rows(v[0]));
        gradcheck(vec![r(&mut rng, 3, 4)], |g, v| g.softmax_cross_entropy(v[0], &[2, 0, 3]));
        gradcheck(vec![r(&mut rng, 4, 3), r(&mut rng, 5, 3), r(&mut rng, 5, 2)], |g, v| {
            g.interpolate(v[0], v[1], v[2], vec![0, 1, 2, 4, 3, 2, 1, 1, 0, 0, 4, 3], 3)
        });
        gradcheck(vec![r(&mut rng, 1, 6)], |g, v| g.six_d_rotation(v[0]));
    }
}

#[test]
fn interpolation_at_a_source_point_is_nearly_exact() {
    let mut g = Graph::new();
    let q = g.input(Tensor::from_points(&[[0.0, 0.0, 0.0]]));
    let s = g.input(Tensor::from_points(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]));
    let f = g.input(Tensor::matrix(3, 1, vec![1.0, 0.0, 0.0]).unwrap());
    let out = g.interpolate(q, s, f, vec![0, 1, 2], 3).unwrap();
    // weights 1/1e-4 vs 2 x 1/(1 + 1e-4)
    let w0 = 1.0 / INTERP_EPS;
    let w1 = 1.0 / (1.0 + INTERP_EPS);
    assert!((g.value(out).item() - w0 / (w0 + 2.0 * w1)).abs() < 1e-15);
}

#[test]
fn six_d_output_is_a_rotation() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let mut g = Graph::new();
        let x = g.input(random(&mut rng, 1, 6));
        let r = g.six_d_rotation(x).unwrap();
        let m = nalgebra::Matrix3::from_row_slice(g.value(r).data());
        assert!((m.transpose() * m - nalgebra::Matrix3::identity()).abs().max() < 1e-12);
        assert!((m.determinant() - 1.0).abs() < 1e-12);
    }
    let mut g = Graph::new();
    let x = g.input(Tensor::row(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]));
    let r = g.six_d_rotation(x).unwrap();
    assert_eq!(g.value(r).data(), &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
}

#[test]
fn input_gradients_only_when_requested() {
    let mut g = Graph::new();
    let a = g.input(Tensor::row(&[1.0, 2.0]));
    let b = g.input(Tensor::row(&[3.0, 4.0]).with_grad());
    let p = g.mul(a, b).unwrap();
    let s = g.sum(p).unwrap();
    let grads = g.backward_scalar(s).unwrap();
    assert!(grads.wrt(a).is_none());
    assert_eq!(grads.wrt(b).unwrap().data(), &[1.0, 2.0]);
}
