use super::*;
use crate::rng::rng_from_seed;
#[allow(unused_imports)]
use rand::Rng as _;

/// Central finite differences of a scalar loss with respect to every
/// learnable parameter; the independent oracle for backward passes.
pub(crate) fn finite_diff_param_grads(
    stack: &[LayerSpec],
    params: &ParamStore,
    loss: impl Fn(&ParamStore) -> f64,
    h: f64,
) -> Vec<f64> {
    let base = params.learnable_flat();
    let mut grads = Vec::with_capacity(base.len());
    let mut work = params.clone();
    let _ = stack;
    for i in 0..base.len() {
        let mut plus = base.clone();
        plus[i] += h;
        work.set_learnable_flat(&plus);
        let lp = loss(&work);
        let mut minus = base.clone();
        minus[i] -= h;
        work.set_learnable_flat(&minus);
        let lm = loss(&work);
        grads.push((lp - lm) / (2.0 * h));
    }
    grads
}

pub(crate) fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Scalar loss used by the gradient checks: weighted sum of outputs, with
/// fixed pseudo-random weights so every output contributes.
fn weighted_loss(out: &Tensor, weights: &[f64]) -> f64 {
    out.data().iter().zip(weights).map(|(o, w)| o * w).sum()
}

fn check_layer_grads(stack: &[LayerSpec], input: &Tensor, seed: u64) {
    let mut rng = rng_from_seed(seed);
    let params = ParamStore::init(stack, &mut rng);
    let (out, cache) = forward(stack, &params, input, Mode::Train).unwrap();
    let w: Vec<f64> = (0..out.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();

    let mut grad_out = out.zeros_like();
    grad_out.data_mut().copy_from_slice(&w);
    let (grad_in, grad_params) = backward(stack, &params, &cache, &grad_out).unwrap();

    // Parameter gradients vs central differences.
    let analytic: Vec<f64> = grad_params.learnable_flat();
    let fd = finite_diff_param_grads(
        stack,
        &params,
        |p| {
            let (o, _) = forward(stack, p, input, Mode::Train).unwrap();
            weighted_loss(&o, &w)
        },
        1e-5,
    );
    for (i, (&a, &b)) in analytic.iter().zip(fd.iter()).enumerate() {
        assert!(
            rel_err(a, b) < 1e-4,
            "param grad {i}: analytic {a} vs fd {b} (stack {stack:?})"
        );
    }

    // Input gradients vs central differences.
    for i in 0..input.len() {
        let mut xp = input.clone();
        xp.data_mut()[i] += 1e-5;
        let (op, _) = forward(stack, &params, &xp, Mode::Train).unwrap();
        let mut xm = input.clone();
        xm.data_mut()[i] -= 1e-5;
        let (om, _) = forward(stack, &params, &xm, Mode::Train).unwrap();
        let fd = (weighted_loss(&op, &w) - weighted_loss(&om, &w)) / 2e-5;
        assert!(
            rel_err(grad_in[i], fd) < 1e-4,
            "input grad {i}: analytic {} vs fd {fd}",
            grad_in[i]
        );
    }
}

fn random_input(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = rng_from_seed(seed);
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
}

#[test]
fn relu_forward_matches_definition() {
    let stack = [LayerSpec::Relu];
    let params = ParamStore::from_layers(vec![LayerParams::None]);
    let x = Tensor::from_vec(vec![1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
    let (y, _) = forward(&stack, &params, &x, Mode::Eval).unwrap();
    assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn relu_backward_kills_dead_units() {
    let stack = [LayerSpec::Relu];
    let params = ParamStore::from_layers(vec![LayerParams::None]);
    let x = Tensor::from_vec(vec![1, 2], vec![-1.0, 3.0]).unwrap();
    let (_, cache) = forward(&stack, &params, &x, Mode::Train).unwrap();
    let g = Tensor::from_vec(vec![1, 2], vec![5.0, 5.0]).unwrap();
    let (gx, _) = backward(&stack, &params, &cache, &g).unwrap();
    assert_eq!(gx.data(), &[0.0, 5.0]);
}

#[test]
fn dense_identity_passes_input_through() {
    let stack = [LayerSpec::Dense {
        in_dim: 3,
        out_dim: 3,
    }];
    let mut eye = Tensor::zeros(vec![3, 3]);
    for i in 0..3 {
        eye[i * 3 + i] = 1.0;
    }
    let params = ParamStore::from_layers(vec![LayerParams::Dense {
        weight: eye,
        bias: Tensor::zeros(vec![3]),
    }]);
    let x = Tensor::from_vec(vec![1, 3], vec![0.5, -1.5, 2.5]).unwrap();
    let (y, _) = forward(&stack, &params, &x, Mode::Eval).unwrap();
    assert_eq!(y.data(), x.data());
}

#[test]
fn dense_backward_closed_form() {
    // y = Wx: grad_W = g·xᵀ, grad_x = Wᵀg.
    let stack = [LayerSpec::Dense {
        in_dim: 2,
        out_dim: 2,
    }];
    let weight = Tensor::from_vec(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    let params = ParamStore::from_layers(vec![LayerParams::Dense {
        weight: weight.clone(),
        bias: Tensor::zeros(vec![2]),
    }]);
    let x = Tensor::from_vec(vec![1, 2], vec![5.0, 6.0]).unwrap();
    let (_, cache) = forward(&stack, &params, &x, Mode::Train).unwrap();
    let g = Tensor::from_vec(vec![1, 2], vec![7.0, 8.0]).unwrap();
    let (gx, gp) = backward(&stack, &params, &cache, &g).unwrap();
    // Wᵀg = [1·7+3·8, 2·7+4·8] = [31, 46]
    assert_eq!(gx.data(), &[31.0, 46.0]);
    if let LayerParams::Dense { weight, bias } = gp.layer(0) {
        // g·xᵀ = [[35, 42], [40, 48]]
        assert_eq!(weight.data(), &[35.0, 42.0, 40.0, 48.0]);
        assert_eq!(bias.data(), &[7.0, 8.0]);
    } else {
        panic!("expected dense grads");
    }
}

#[test]
fn conv_output_size_formula() {
    let spec = LayerSpec::conv(1, 8);
    assert_eq!(spec.conv_out_size(32).unwrap(), 16);
    let t = LayerSpec::conv_transposed(8, 1);
    assert_eq!(t.conv_out_size(16).unwrap(), 32);
}

#[test]
fn dense_grads_match_finite_differences() {
    let stack = [
        LayerSpec::Dense {
            in_dim: 5,
            out_dim: 4,
        },
        LayerSpec::Relu,
        LayerSpec::Dense {
            in_dim: 4,
            out_dim: 3,
        },
    ];
    check_layer_grads(&stack, &random_input(vec![3, 5], 11), 1);
}

#[test]
fn conv_grads_match_finite_differences() {
    let stack = [LayerSpec::Conv2d {
        in_ch: 2,
        out_ch: 3,
        kernel: 3,
        stride: 2,
        padding: 1,
        transposed: false,
    }];
    check_layer_grads(&stack, &random_input(vec![2, 2, 6, 6], 22), 2);
}

#[test]
fn transposed_conv_grads_match_finite_differences() {
    let stack = [LayerSpec::Conv2d {
        in_ch: 3,
        out_ch: 2,
        kernel: 4,
        stride: 2,
        padding: 1,
        transposed: true,
    }];
    check_layer_grads(&stack, &random_input(vec![2, 3, 4, 4], 33), 3);
}

#[test]
fn batchnorm_grads_match_finite_differences() {
    let stack = [LayerSpec::BatchNorm { channels: 3 }];
    check_layer_grads(&stack, &random_input(vec![4, 3, 2, 2], 44), 4);
    let stack = [LayerSpec::BatchNorm { channels: 5 }];
    check_layer_grads(&stack, &random_input(vec![6, 5], 45), 5);
}

#[test]
fn mixed_stack_grads_match_finite_differences() {
    let stack = [
        LayerSpec::Conv2d {
            in_ch: 1,
            out_ch: 2,
            kernel: 4,
            stride: 2,
            padding: 1,
            transposed: false,
        },
        LayerSpec::BatchNorm { channels: 2 },
        LayerSpec::Relu,
        LayerSpec::Conv2d {
            in_ch: 2,
            out_ch: 1,
            kernel: 4,
            stride: 2,
            padding: 1,
            transposed: true,
        },
    ];
    check_layer_grads(&stack, &random_input(vec![2, 1, 8, 8], 66), 6);
}

#[test]
fn transposed_conv_is_adjoint_of_conv() {
    // <conv(x), y> == <x, conv_t(y)> when both share the same weight.
    let mut rng = rng_from_seed(9);
    let spec_f = LayerSpec::conv(2, 3);
    let params_f = ParamStore::init(&[spec_f.clone()], &mut rng);
    let weight = match params_f.layer(0) {
        LayerParams::Conv { weight, .. } => weight.clone(),
        _ => unreachable!(),
    };
    // The transposed layer mapping 3 channels back to 2 stores its weight as
    // [in_ch=3, out_ch=2, k, k], which is the plain conv's [out=3, in=2, k, k]
    // layout verbatim.
    let spec_t = LayerSpec::conv_transposed(3, 2);
    let params_t = ParamStore::from_layers(vec![LayerParams::Conv {
        weight: weight.clone().reshape(vec![3, 2, 4, 4]).unwrap(),
        bias: Tensor::zeros(vec![2]),
    }]);

    let x = random_input(vec![1, 2, 8, 8], 10);
    let y = random_input(vec![1, 3, 4, 4], 12);
    let (fx, _) = forward(&[spec_f], &params_f, &x, Mode::Eval).unwrap();
    let (ty, _) = forward(&[spec_t], &params_t, &y, Mode::Eval).unwrap();
    let dot_fx_y: f64 = fx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
    let dot_x_ty: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
    assert!(
        (dot_fx_y - dot_x_ty).abs() < 1e-9,
        "{dot_fx_y} vs {dot_x_ty}"
    );
}

#[test]
fn batchnorm_train_normalizes_batch() {
    let channels = 3;
    let stack = [LayerSpec::BatchNorm { channels }];
    let mut rng = rng_from_seed(17);
    let params = ParamStore::init(&stack, &mut rng);
    let x = random_input(vec![16, channels, 4, 4], 18);
    let (y, _) = forward(&stack, &params, &x, Mode::Train).unwrap();
    let (batch, spatial) = (16, 16);
    let m = (batch * spatial) as f64;
    for c in 0..channels {
        let mut sum = 0.0;
        let mut ss = 0.0;
        for b in 0..batch {
            let base = (b * channels + c) * spatial;
            for i in base..base + spatial {
                sum += y.data()[i];
            }
        }
        let mean = sum / m;
        for b in 0..batch {
            let base = (b * channels + c) * spatial;
            for i in base..base + spatial {
                ss += (y.data()[i] - mean) * (y.data()[i] - mean);
            }
        }
        let var = ss / m;
        assert!(mean.abs() < 1e-6, "channel {c} mean {mean}");
        assert!((var - 1.0).abs() < 1e-6, "channel {c} var {var}");
    }
}

#[test]
fn eval_forward_is_deterministic() {
    let stack = [
        LayerSpec::conv(1, 4),
        LayerSpec::BatchNorm { channels: 4 },
        LayerSpec::Relu,
    ];
    let mut rng = rng_from_seed(5);
    let params = ParamStore::init(&stack, &mut rng);
    let x = random_input(vec![2, 1, 8, 8], 6);
    let (y1, _) = forward(&stack, &params, &x, Mode::Eval).unwrap();
    let (y2, _) = forward(&stack, &params, &x, Mode::Eval).unwrap();
    assert_eq!(y1.data(), y2.data());
}

#[test]
fn forward_rejects_non_finite_input() {
    let stack = [LayerSpec::Relu];
    let params = ParamStore::from_layers(vec![LayerParams::None]);
    let x = Tensor::from_vec(vec![1, 2], vec![f64::NAN, 0.0]).unwrap();
    assert!(forward(&stack, &params, &x, Mode::Eval).is_err());
}

#[test]
fn stale_cache_is_rejected() {
    let stack = [LayerSpec::Dense {
        in_dim: 2,
        out_dim: 2,
    }];
    let mut rng = rng_from_seed(3);
    let mut params = ParamStore::init(&stack, &mut rng);
    let x = random_input(vec![1, 2], 4);
    let (out, cache) = forward(&stack, &params, &x, Mode::Train).unwrap();
    // Mutate parameters, then try to reuse the cache.
    if let LayerParams::Dense { weight, .. } = params.layer_mut(0) {
        weight.data_mut()[0] += 1.0;
    }
    let g = out.zeros_like();
    assert!(matches!(
        backward(&stack, &params, &cache, &g),
        Err(Error::StaleCache)
    ));
}

#[test]
fn adam_zero_grad_zero_decay_is_identity() {
    let stack = [LayerSpec::Dense {
        in_dim: 3,
        out_dim: 2,
    }];
    let mut rng = rng_from_seed(8);
    let mut params = ParamStore::init(&stack, &mut rng);
    let before = params.learnable_flat();
    let grads = params.zeros_like();
    let mut state = AdamState::new(
        &params,
        AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
    );
    adam_step(&mut params, &grads, &mut state).unwrap();
    assert_eq!(params.learnable_flat(), before);
}

#[test]
fn adam_first_step_moves_by_alpha() {
    let stack = [LayerSpec::Dense {
        in_dim: 1,
        out_dim: 1,
    }];
    let mut params = ParamStore::from_layers(vec![LayerParams::Dense {
        weight: Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap(),
        bias: Tensor::zeros(vec![1]),
    }]);
    let mut grads = params.zeros_like();
    if let LayerParams::Dense { weight, .. } = grads.layer_mut(0) {
        weight.data_mut()[0] = 1.0;
    }
    let mut state = AdamState::new(
        &params,
        AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
    );
    adam_step(&mut params, &grads, &mut state).unwrap();
    let w = params.learnable_flat()[0];
    assert!((w - 0.999).abs() < 1e-6, "got {w}");
    let _ = stack;
}

#[test]
fn adam_descends_quadratic_monotonically_after_warmup() {
    // f(w) = w², grad = 2w, from w = 1.
    let mut params = ParamStore::from_layers(vec![LayerParams::Dense {
        weight: Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap(),
        bias: Tensor::zeros(vec![1]),
    }]);
    let mut state = AdamState::new(
        &params,
        AdamConfig {
            weight_decay: 0.0,
            ..AdamConfig::default()
        },
    );
    let mut trace = Vec::new();
    for _ in 0..100 {
        let w = params.learnable_flat()[0];
        let mut grads = params.zeros_like();
        if let LayerParams::Dense { weight, .. } = grads.layer_mut(0) {
            weight.data_mut()[0] = 2.0 * w;
        }
        adam_step(&mut params, &grads, &mut state).unwrap();
        trace.push(params.learnable_flat()[0].abs());
    }
    for pair in trace[10..].windows(2) {
        assert!(pair[1] <= pair[0] + 1e-12, "not monotone: {pair:?}");
    }
}

#[test]
fn adam_rejects_non_finite_gradient() {
    let mut params = ParamStore::from_layers(vec![LayerParams::Dense {
        weight: Tensor::from_vec(vec![1, 1], vec![1.0]).unwrap(),
        bias: Tensor::zeros(vec![1]),
    }]);
    let mut grads = params.zeros_like();
    if let LayerParams::Dense { weight, .. } = grads.layer_mut(0) {
        weight.data_mut()[0] = f64::NAN;
    }
    let mut state = AdamState::new(&params, AdamConfig::default());
    assert!(adam_step(&mut params, &grads, &mut state).is_err());
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let stack = vec![
        LayerSpec::conv(1, 4),
        LayerSpec::BatchNorm { channels: 4 },
        LayerSpec::Relu,
        LayerSpec::Dense {
            in_dim: 16,
            out_dim: 3,
        },
    ];
    let mut rng = rng_from_seed(21);
    let params = ParamStore::init(&stack, &mut rng);
    let mut bytes = Vec::new();
    checkpoint::write_bytes(&mut bytes, &stack, &params).unwrap();
    let (stack2, params2) = checkpoint::read_bytes(&bytes).unwrap();
    assert_eq!(stack, stack2);
    for (a, b) in params.layers().iter().zip(params2.layers()) {
        assert_eq!(a, b);
    }
    // Byte-determinism of the writer.
    let mut again = Vec::new();
    checkpoint::write_bytes(&mut again, &stack, &params).unwrap();
    assert_eq!(bytes, again);
}

#[test]
fn checkpoint_rejects_bad_magic_and_truncation() {
    let stack = vec![LayerSpec::Relu];
    let params = ParamStore::from_layers(vec![LayerParams::None]);
    let mut bytes = Vec::new();
    checkpoint::write_bytes(&mut bytes, &stack, &params).unwrap();

    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        checkpoint::read_bytes(&bad),
        Err(Error::Malformed { offset: 0, .. })
    ));

    let truncated = &bytes[..bytes.len() - 1];
    assert!(checkpoint::read_bytes(truncated).is_err());
}

mod proptests {
    use super::*;
    use proptest::prelude::*;

    fn small_dims() -> impl Strategy<Value = (usize, usize, usize)> {
        (1usize..=8, 1usize..=8, 1usize..=4)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        // Backward equals central finite differences for random dense shapes.
        #[test]
        fn dense_fd_property((in_dim, out_dim, batch) in small_dims(), seed in 0u64..1000) {
            let stack = [LayerSpec::Dense { in_dim, out_dim }];
            let input = random_input(vec![batch, in_dim], seed);
            check_layer_grads(&stack, &input, seed.wrapping_add(1));
        }

        // Same property for conv with random small geometry.
        #[test]
        fn conv_fd_property(
            in_ch in 1usize..=3,
            out_ch in 1usize..=3,
            size in 4usize..=8,
            transposed in proptest::bool::ANY,
            seed in 0u64..1000,
        ) {
            let stack = [LayerSpec::Conv2d {
                in_ch, out_ch, kernel: 3, stride: 1, padding: 1, transposed,
            }];
            let input = random_input(vec![2, in_ch, size, size], seed);
            check_layer_grads(&stack, &input, seed.wrapping_add(2));
        }
    }
}
