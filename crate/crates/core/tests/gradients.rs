//! Central finite-difference checks of every layer kind and task head in f64.

use marl_core::nn::gradcheck::{check_head, check_network, check_quantizer, uniform};
use marl_core::nn::{seeded_rng, LayerSpec, Sequential};
use marl_core::tasks::TaskKind;
use marl_core::vq::{quantize, quantizer_backward};

const EPS: f64 = 1e-4;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 20;
/// Inputs are redrawn until every ReLU argument is at least this far from
/// its kink, where the derivative does not exist.
const KINK_MARGIN: f64 = 1e-3;

fn assert_all_seeds(label: &str, specs: &[LayerSpec], shape: &[usize]) {
    for seed in 0..SEEDS {
        let err = check_network(specs, shape, seed, EPS, KINK_MARGIN).unwrap();
        assert!(err < TOL, "{label} seed {seed}: relative error {err:e}");
    }
}

#[test]
fn conv2d_stride_one_and_two() {
    let s1 = [LayerSpec::Conv2d { in_channels: 2, out_channels: 3, kernel: 3, stride: 1, padding: 1 }];
    assert_all_seeds("conv s1", &s1, &[2, 2, 5, 5]);
    let s2 = [LayerSpec::Conv2d { in_channels: 2, out_channels: 3, kernel: 4, stride: 2, padding: 1 }];
    assert_all_seeds("conv s2", &s2, &[2, 2, 6, 6]);
}

#[test]
fn conv2d_stride_two_with_uneven_extent() {
    let s = [LayerSpec::Conv2d { in_channels: 2, out_channels: 2, kernel: 3, stride: 2, padding: 1 }];
    assert_all_seeds("conv k3 s2 side 4", &s, &[2, 2, 4, 4]);
    assert_all_seeds("conv k3 s2 side 5", &s, &[1, 2, 5, 5]);
}

#[test]
fn transposed_upsample() {
    let s = [LayerSpec::TransposedUpsample2d { in_channels: 2, out_channels: 2, kernel: 3 }];
    assert_all_seeds("upsample", &s, &[2, 2, 3, 3]);
}

#[test]
fn residual_block() {
    let s = [LayerSpec::ResidualBlock { channels: 3, hidden: 2 }];
    assert_all_seeds("residual", &s, &[2, 3, 4, 4]);
}

#[test]
fn linear() {
    let s = [LayerSpec::Linear { in_features: 12, out_features: 5 }];
    assert_all_seeds("linear", &s, &[3, 3, 2, 2]);
}

#[test]
fn relu_and_sigmoid() {
    assert_all_seeds("relu", &[LayerSpec::Relu], &[2, 2, 3, 3]);
    assert_all_seeds("sigmoid", &[LayerSpec::Sigmoid], &[2, 2, 3, 3]);
}

#[test]
fn relu_after_conv() {
    let s = [LayerSpec::Conv2d { in_channels: 2, out_channels: 2, kernel: 3, stride: 1, padding: 1 }, LayerSpec::Relu];
    assert_all_seeds("conv relu", &s, &[1, 2, 4, 4]);
}

#[test]
fn full_encoder_stack() {
    let s = [
        LayerSpec::Conv2d { in_channels: 3, out_channels: 4, kernel: 4, stride: 2, padding: 1 },
        LayerSpec::Relu,
        LayerSpec::Conv2d { in_channels: 4, out_channels: 3, kernel: 3, stride: 1, padding: 1 },
        LayerSpec::ResidualBlock { channels: 3, hidden: 2 },
        LayerSpec::TransposedUpsample2d { in_channels: 3, out_channels: 2, kernel: 3 },
        LayerSpec::Sigmoid,
    ];
    assert_all_seeds("stack", &s, &[1, 3, 4, 4]);
}

#[test]
fn stop_gradient_blocks_flow() {
    // The forward pass is the identity; the gradient of sg(·) is zero by
    // definition, so upstream parameters receive nothing.
    let specs = [LayerSpec::Linear { in_features: 4, out_features: 4 }, LayerSpec::StopGradient];
    for seed in 0..SEEDS {
        let mut rng = seeded_rng(seed, 1);
        let mut net: Sequential<f64> = Sequential::from_specs("sg", &specs, &mut rng).unwrap();
        let x = uniform(&[2, 4], &mut rng);
        let (y, tape) = net.forward(&x).unwrap();
        let lin_only: Sequential<f64> = Sequential { layers: net.layers[..1].to_vec(), ..net.clone() };
        assert_eq!(y, lin_only.infer(&x).unwrap());
        net.zero_grad();
        let gx = net.backward(&tape, &uniform(y.shape(), &mut rng)).unwrap();
        assert!(gx.data().iter().all(|&g| g == 0.0));
        assert!(net.params().iter().all(|p| p.grad.data().iter().all(|&g| g == 0.0)));
    }
}

#[test]
fn every_task_head_through_its_loss() {
    for (task, out) in [(TaskKind::ProgramClass, 3), (TaskKind::VintageClass, 4), (TaskKind::HeightReg, 1)] {
        for seed in 0..SEEDS {
            let err = check_head(task, out, seed, EPS, KINK_MARGIN).unwrap();
            assert!(err < TOL, "{} seed {seed}: relative error {err:e}", task.as_str());
        }
    }
}

#[test]
fn quantizer_loss_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let err = check_quantizer(seed, EPS, 0.25).unwrap();
        assert!(err < TOL, "seed {seed}: relative error {err:e}");
    }
}

#[test]
fn straight_through_passes_upstream_unchanged_when_beta_is_zero() {
    for seed in 0..SEEDS {
        let mut rng = seeded_rng(seed, 12);
        let z = uniform(&[2, 3, 2, 2], &mut rng);
        let cb = uniform(&[4, 3], &mut rng);
        let q = quantize(&z, &cb).unwrap();
        let g = uniform(z.shape(), &mut rng);
        let (g_ze, _) = quantizer_backward(&q, &g, &cb, 0.0).unwrap();
        assert_eq!(g_ze, g);
    }
}
