use autograd::gradcheck::{check_indices, sample_indices};
use autograd::{Conv2dParams, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Checks d(sum(op(inputs) * probe))/d(input_k) for every input `k`.
fn check_op(
    inputs: Vec<Tensor>,
    op: impl for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probe_shape = {
        let tape = Tape::new();
        let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
        op(&tape, &vars).shape()
    };
    let probe = rand_tensor(&mut rng, &probe_shape);
    let scalar = |tape: &Tape, xs: &[Tensor]| -> f64 {
        let vars: Vec<_> = xs.iter().map(|t| tape.constant(t.clone())).collect();
        op(tape, &vars).mul(tape.constant(probe.clone())).sum().item()
    };

    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = op(&tape, &vars).mul(tape.constant(probe.clone())).sum();
    let grads = tape.backward(loss);

    for (k, input) in inputs.iter().enumerate() {
        let analytic = grads.get(vars[k]).expect("missing gradient").clone();
        let mut f = |x: &Tensor| {
            let mut xs = inputs.clone();
            xs[k] = x.clone();
            scalar(&Tape::new(), &xs)
        };
        let idx = sample_indices(input.len(), 60);
        let r = check_indices(&mut f, input, &analytic, &idx, 1e-5, 1e-7);
        assert!(r.passes(1e-6), "input {k}: {r:?}");
    }
}

#[test]
fn elementwise_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = rand_tensor(&mut rng, &[2, 3, 4]);
    let b = rand_tensor(&mut rng, &[2, 3, 4]);
    check_op(vec![a.clone(), b.clone()], |_, v| v[0].add(v[1]).mul(v[0]).sub(v[1].scale(0.3)));
    check_op(vec![a.clone()], |_, v| v[0].gelu().add_scalar(0.5).exp());
    check_op(vec![a.clone()], |_, v| v[0].leaky_relu(0.2));
    check_op(vec![a], |_, v| v[0].mul(v[0]).mean_square().add(v[0].mean_abs()));
}

#[test]
fn conv2d_all_configurations() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (cin, cout, k, stride, padding, groups, size) in [
        (3, 4, 3, 1, 1, 1, 6),
        (4, 4, 3, 1, 1, 4, 5),
        (2, 6, 3, 2, 1, 1, 7),
        (4, 2, 1, 1, 0, 1, 4),
        (6, 6, 3, 2, 1, 3, 8),
    ] {
        let x = rand_tensor(&mut rng, &[2, cin, size, size]);
        let w = rand_tensor(&mut rng, &[cout, cin / groups, k, k]);
        let b = rand_tensor(&mut rng, &[cout]);
        let p = Conv2dParams {
            stride,
            padding,
            groups,
        };
        check_op(vec![x, w, b], move |_, v| v[0].conv2d(v[1], Some(v[2]), p));
    }
}

#[test]
fn linear_and_channel_broadcasts() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x = rand_tensor(&mut rng, &[3, 5]);
    let w = rand_tensor(&mut rng, &[4, 5]);
    let b = rand_tensor(&mut rng, &[4]);
    check_op(vec![x, w, b], |_, v| v[0].linear(v[1], Some(v[2])));

    let f = rand_tensor(&mut rng, &[2, 3, 4, 4]);
    let s = rand_tensor(&mut rng, &[2, 3]);
    let t = rand_tensor(&mut rng, &[2, 3]);
    check_op(vec![f, s, t], |_, v| v[0].channel_mul(v[1]).channel_add(v[2]));
}

#[test]
fn normalization_and_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let f = rand_tensor(&mut rng, &[2, 5, 3, 3]);
    check_op(vec![f], |_, v| v[0].layer_norm_channels());
    let x = rand_tensor(&mut rng, &[3, 6]);
    check_op(vec![x.clone()], |_, v| v[0].softmax());
    check_op(vec![x], |_, v| v[0].log_softmax());
}

#[test]
fn batched_matmul_and_scalar_division() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = rand_tensor(&mut rng, &[2, 3, 7]);
    let b = rand_tensor(&mut rng, &[2, 4, 7]);
    let c = rand_tensor(&mut rng, &[2, 7, 4]);
    check_op(vec![a.clone(), b], |_, v| v[0].bmm(v[1], true));
    check_op(vec![a, c], |_, v| v[0].bmm(v[1], false));
    let x = rand_tensor(&mut rng, &[2, 3]);
    let s = Tensor::scalar(1.7);
    check_op(vec![x, s], |_, v| v[0].div_by_scalar(v[1]).softmax());
}

#[test]
fn rearrangements_and_reductions() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let x = rand_tensor(&mut rng, &[2, 2, 4, 4]);
    let y = rand_tensor(&mut rng, &[2, 3, 4, 4]);
    check_op(vec![x.clone(), y], |_, v| Var::concat(&[v[0], v[1]]).pixel_unshuffle(2));
    check_op(vec![x.clone()], |_, v| v[0].pixel_unshuffle(2).pixel_shuffle(2).reshape(&[4, 16]));
    check_op(vec![x], |_, v| v[0].mean_spatial());
}

#[test]
fn detach_blocks_gradient() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(2.0));
    let y = x.mul(x.detach());
    let g = tape.backward(y.sum());
    assert_eq!(g.get(x).unwrap().item(), 2.0);
}

#[test]
fn constants_receive_no_gradient() {
    let tape = Tape::new();
    let x = tape.param(Tensor::scalar(3.0));
    let c = tape.constant(Tensor::scalar(5.0));
    let g = tape.backward(x.mul(c).sum());
    assert!(g.get(c).is_none());
    assert_eq!(g.get(x).unwrap().item(), 5.0);
}

#[test]
fn mean_abs_subgradient_at_zero_is_zero() {
    let tape = Tape::new();
    let x = tape.param(Tensor::new(&[3], vec![0.0, 2.0, -1.0]));
    let g = tape.backward(x.mean_abs());
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0 / 3.0, -1.0 / 3.0]);
}
