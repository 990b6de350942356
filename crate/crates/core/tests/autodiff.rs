//! Finite-difference checks of every differentiable op on random inputs.

use lgd::denoiser::{collect_features_var, UNet, UNetConfig};
use lgd::tensor::ops::gradcheck::{finite_difference_check, random};
use lgd::tensor::ops::layout::concat_channels;
use lgd::tensor::{BatchNormMode, CeTarget, RunningStats, Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-3;

fn config() -> ProptestConfig {
    ProptestConfig::with_cases(12)
}

/// Values kept away from the kinks of piecewise ops.
fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    random(shape.to_vec(), seed).map(|v| if v.abs() < 0.05 { v + 0.1 } else { v })
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn binary_elementwise(n in 1usize..5, m in 1usize..5, seed in any::<u64>()) {
        let a = random([n, m], seed);
        let b = random([n, m], seed ^ 1);
        for op in 0..3 {
            let r = finite_difference_check(&[a.clone(), b.clone()], |v| match op {
                0 => v[0].add(v[1]),
                1 => v[0].sub(v[1]),
                _ => v[0].mul(v[1]),
            }).unwrap();
            prop_assert!(r.max_rel_error() < TOL, "op {op}: {:?}", r.rel_errors);
        }
    }

    #[test]
    fn unary_elementwise(len in 1usize..12, s in -3.0f64..3.0, seed in any::<u64>()) {
        let x = away_from_zero(&[len], seed);
        for op in 0..7 {
            let r = finite_difference_check(std::slice::from_ref(&x), |v| match op {
                0 => v[0].scale(s),
                1 => v[0].add_scalar(s),
                2 => v[0].relu(),
                3 => v[0].silu(),
                4 => v[0].sigmoid(),
                5 => v[0].square(),
                _ => v[0].sum(),
            }).unwrap();
            prop_assert!(r.max_rel_error() < TOL, "op {op}: {:?}", r.rel_errors);
        }
        let r = finite_difference_check(&[x], |v| v[0].mean()).unwrap();
        prop_assert!(r.max_rel_error() < TOL);
    }

    #[test]
    fn per_channel_bias(n in 1usize..3, c in 1usize..4, hw in 1usize..4, seed in any::<u64>()) {
        let x = random([n, c, hw, hw], seed);
        let b = random([n, c], seed ^ 7);
        let r = finite_difference_check(&[x, b], |v| v[0].add_per_channel(v[1])).unwrap();
        prop_assert!(r.max_rel_error() < TOL, "{:?}", r.rel_errors);
    }

    #[test]
    fn conv(
        c in 1usize..3, k in 1usize..3, hw in 3usize..7,
        kernel in prop::sample::select(vec![1usize, 3]),
        stride in 1usize..3, pad in 0usize..2, seed in any::<u64>(),
    ) {
        let x = random([2, c, hw, hw], seed);
        let w = random([k, c, kernel, kernel], seed ^ 3);
        let b = random([k], seed ^ 5);
        let r = finite_difference_check(&[x, w, b], |v| v[0].conv2d(v[1], v[2], stride, pad)).unwrap();
        prop_assert!(r.max_rel_error() < TOL, "{:?}", r.rel_errors);
    }

    #[test]
    fn linear(m in 1usize..5, din in 1usize..6, dout in 1usize..5, with_bias: bool, seed in any::<u64>()) {
        let x = random([m, din], seed);
        let w = random([dout, din], seed ^ 11);
        let b = random([dout], seed ^ 13);
        let r = finite_difference_check(&[x, w, b], |v| v[0].linear(v[1], with_bias.then_some(v[2]))).unwrap();
        prop_assert!(r.max_rel_error() < TOL, "{:?}", r.rel_errors);
    }

    #[test]
    fn group_norm(groups in 1usize..3, per in 1usize..3, hw in 2usize..4, seed in any::<u64>()) {
        let c = groups * per;
        let x = random([2, c, hw, hw], seed);
        let g = random([c], seed ^ 17);
        let b = random([c], seed ^ 19);
        let r = finite_difference_check(&[x, g, b], |v| v[0].group_norm(groups, v[1], v[2], 1e-5)).unwrap();
        prop_assert!(r.max_rel_error() < TOL, "{:?}", r.rel_errors);
    }

    #[test]
    fn batch_norm_both_modes(m in 3usize..7, d in 1usize..4, seed in any::<u64>()) {
        let x = random([m, d], seed);
        let g = random([d], seed ^ 23);
        let b = random([d], seed ^ 29);
        let r = finite_difference_check(&[x.clone(), g.clone(), b.clone()], |v| {
            let mut stats = RunningStats::new(d);
            v[0].batch_norm(v[1], v[2], BatchNormMode::Train { stats: &mut stats, momentum: 0.1 }, 1e-5)
        }).unwrap();
        prop_assert!(r.max_rel_error() < TOL, "train {:?}", r.rel_errors);
        let stats = RunningStats { mean: vec![0.3; d], var: vec![1.7; d] };
        let r = finite_difference_check(&[x, g, b], |v| {
            v[0].batch_norm(v[1], v[2], BatchNormMode::Eval { stats: &stats }, 1e-5)
        }).unwrap();
        prop_assert!(r.max_rel_error() < TOL, "eval {:?}", r.rel_errors);
    }

    #[test]
    fn layout_ops(n in 1usize..3, c in 1usize..3, h in 1usize..4, w in 1usize..4, up in 1usize..3, seed in any::<u64>()) {
        let x = random([n, c, h, w], seed);
        let r = finite_difference_check(std::slice::from_ref(&x), |v| v[0].resize_nearest(h * up + 1, w * up)).unwrap();
        prop_assert!(r.max_rel_error() < TOL, "resize {:?}", r.rel_errors);
        let r = finite_difference_check(std::slice::from_ref(&x), |v| v[0].nchw_to_rows()).unwrap();
        prop_assert!(r.max_rel_error() < TOL);
        let rows = random([n * h * w, c], seed ^ 1);
        let r = finite_difference_check(&[rows], |v| v[0].rows_to_nchw(n, h, w)).unwrap();
        prop_assert!(r.max_rel_error() < TOL);
        let r = finite_difference_check(std::slice::from_ref(&x), |v| v[0].reshape([n * c, h * w])).unwrap();
        prop_assert!(r.max_rel_error() < TOL);
        let y = random([n, c + 1, h, w], seed ^ 2);
        let r = finite_difference_check(&[x, y], |v| concat_channels(&[v[0], v[1]])).unwrap();
        prop_assert!(r.max_rel_error() < TOL, "concat {:?}", r.rel_errors);
        let a = random([n + 1, c], seed ^ 3);
        let b = random([n + 1, w], seed ^ 4);
        let r = finite_difference_check(&[a, b], |v| v[0].concat_cols(v[1])).unwrap();
        prop_assert!(r.max_rel_error() < TOL);
    }

    #[test]
    fn embedding_rows(vocab in 1usize..5, d in 1usize..4, ids in prop::collection::vec(0usize..100, 1..6), seed in any::<u64>()) {
        let ids: Vec<usize> = ids.into_iter().map(|i| i % vocab).collect();
        let table = random([vocab, d], seed);
        let r = finite_difference_check(&[table], |v| v[0].embedding(&ids)).unwrap();
        prop_assert!(r.max_rel_error() < TOL, "{:?}", r.rel_errors);
    }

    #[test]
    fn losses(m in 1usize..6, k in 2usize..4, seed in any::<u64>()) {
        let x = random([m, k], seed);
        let y = random([m, k], seed ^ 5);
        let r = finite_difference_check(&[x.clone(), y], |v| v[0].reduce_sq_err(v[1])).unwrap();
        prop_assert!(r.max_rel_error() < TOL, "sq {:?}", r.rel_errors);
        let probs = random([m, k], seed ^ 6).map(|v| 1.0 / (1.0 + (-v).exp()));
        let r = finite_difference_check(std::slice::from_ref(&x), |v| v[0].reduce_bce(&probs)).unwrap();
        prop_assert!(r.max_rel_error() < TOL, "bce {:?}", r.rel_errors);
        let hard = CeTarget::Hard((0..m).map(|i| i % k).collect());
        let r = finite_difference_check(std::slice::from_ref(&x), |v| v[0].reduce_ce(&hard)).unwrap();
        prop_assert!(r.max_rel_error() < TOL, "ce {:?}", r.rel_errors);
        let row_sums: Vec<f64> = (0..m).map(|i| probs.data()[i * k..(i + 1) * k].iter().sum()).collect();
        let soft = probs.data().iter().enumerate().map(|(i, &v)| v / row_sums[i / k]).collect();
        let soft = CeTarget::Soft(Tensor::new([m, k], soft).unwrap());
        let r = finite_difference_check(&[x], |v| v[0].reduce_ce(&soft)).unwrap();
        prop_assert!(r.max_rel_error() < TOL, "soft ce {:?}", r.rel_errors);
    }
}

#[test]
fn reused_variables_accumulate_gradients() {
    let x = random([3, 2], 9);
    let r = finite_difference_check(&[x], |v| v[0].mul(v[0])?.add(v[0].silu()?)).unwrap();
    assert!(r.max_rel_error() < TOL, "{:?}", r.rel_errors);
}

/// A small network with every weight randomized, so the zero-initialized
/// output projection does not mask the input gradient.
fn randomized_unet() -> UNet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let config = UNetConfig::new(1, 8, 2, 3);
    let mut net = UNet::<f32>::new(config, &mut rng).unwrap();
    for t in net.params_mut().tensors_mut() {
        let noise = Tensor::<f32>::randn(t.shape().to_vec(), &mut rng);
        *t = t.zip_map(&noise, |a, b| a + 0.2 * b).unwrap();
    }
    net.cast()
}

#[test]
fn unet_end_to_end_input_gradient() {
    let net = randomized_unet();
    let z = random([1, 1, 8, 8], 21);
    let r = finite_difference_check(&[z], |v| {
        let p = net.params().bind(v[0].tape(), false);
        Ok(net.forward(&p, v[0], &[37], &[Some(1)], false)?.eps)
    })
    .unwrap();
    assert!(r.max_rel_error() < 1e-2, "{:?}", r.rel_errors);
}

#[test]
fn unet_feature_stack_input_gradient() {
    let net = randomized_unet();
    let z = random([1, 1, 8, 8], 22);
    let r = finite_difference_check(&[z], |v| {
        let p = net.params().bind(v[0].tape(), false);
        let out = net.forward(&p, v[0], &[80], &[None], true)?;
        collect_features_var(&out.taps, 8, 8)
    })
    .unwrap();
    assert!(r.max_rel_error() < 1e-2, "{:?}", r.rel_errors);
}

#[test]
fn unet_parameter_gradients() {
    let net = randomized_unet();
    let z = random([2, 1, 8, 8], 23);
    let tape = Tape::new();
    let p = net.params().bind(&tape, true);
    let x = tape.constant(z.clone());
    let loss = net.forward(&p, x, &[5, 60], &[Some(0), None], false).unwrap().eps.square().unwrap().mean().unwrap();
    let mut grads = tape.backward(loss).unwrap();
    let analytic = p.grads(&mut grads);
    let base = |params: &lgd::tensor::ParamSet<f64>| {
        let tape = Tape::new();
        let p = params.bind(&tape, false);
        let x = tape.constant(z.clone());
        net.forward(&p, x, &[5, 60], &[Some(0), None], false).unwrap().eps.square().unwrap().mean().unwrap().value().item().unwrap()
    };
    // Spot-check a few coordinates of every parameter against central differences.
    let mut params = net.params().clone();
    let h = 1e-4;
    for (i, g) in analytic.iter().enumerate() {
        let g = g.as_ref().expect("every parameter receives a gradient");
        for j in [0, g.numel() / 2, g.numel() - 1] {
            let orig = params.tensors()[i].data()[j];
            params.tensors_mut()[i].data_mut()[j] = orig + h;
            let plus = base(&params);
            params.tensors_mut()[i].data_mut()[j] = orig - h;
            let minus = base(&params);
            params.tensors_mut()[i].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let err = (numeric - g.data()[j]).abs() / numeric.abs().max(g.data()[j].abs()).max(1e-6);
            assert!(err < 1e-2, "param {i} coord {j}: numeric {numeric} analytic {}", g.data()[j]);
        }
    }
}
