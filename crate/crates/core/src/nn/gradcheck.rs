//! Central finite-difference checks for layer stacks, task heads and the
//! quantizer losses, all in f64.

use rand::Rng;

use super::{seeded_rng, Array, Layer, LayerSpec, Sequential};
use crate::error::{MarlError, Result};
use crate::exec::Execution;
use crate::tasks::{dtp_loss, TaskHead, TaskKind, TaskLabels, TaskWeights};
use crate::vq::{quantize, quantizer_backward};

pub fn uniform(shape: &[usize], rng: &mut impl Rng) -> Array<f64> {
    let n = shape.iter().product();
    Array::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape matches length")
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the absolute norm when both are ~0.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn min_abs(a: &Array<f64>) -> f64 {
    a.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Smallest distance of any ReLU argument from zero, including the ones
/// inside residual blocks.
pub fn relu_margin(net: &Sequential<f64>, x: &Array<f64>) -> Result<f64> {
    let mut margin = f64::INFINITY;
    let mut h = x.clone();
    for layer in &net.layers {
        match layer {
            Layer::Relu => margin = margin.min(min_abs(&h)),
            Layer::ResidualBlock(b) => {
                margin = margin.min(min_abs(&h));
                let (mid, _) = b.inner.forward(&h.map(|v| v.max(0.0)), Execution::Sequential, "margin")?;
                margin = margin.min(min_abs(&mid));
            }
            _ => {}
        }
        let single = Sequential { layers: vec![layer.clone()], ..net.clone() };
        h = single.infer(&h)?;
    }
    Ok(margin)
}

/// Draws uniform inputs until every ReLU argument is at least `margin` from
/// its kink, where finite differences straddle the discontinuity.
pub fn draw_kink_free(net: &Sequential<f64>, shape: &[usize], margin: f64, rng: &mut impl Rng) -> Result<Array<f64>> {
    for _ in 0..1_000 {
        let x = uniform(shape, rng);
        if relu_margin(net, &x)? >= margin {
            return Ok(x);
        }
    }
    Err(MarlError::State("no kink-free input found in 1000 draws".into()))
}

fn central_difference(x: &Array<f64>, eps: f64, mut f: impl FnMut(&Array<f64>) -> Result<f64>) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    for (i, slot) in out.iter_mut().enumerate() {
        let (mut p, mut m) = (x.clone(), x.clone());
        p.data_mut()[i] += eps;
        m.data_mut()[i] -= eps;
        *slot = (f(&p)? - f(&m)?) / (2.0 * eps);
    }
    Ok(out)
}

fn parameter_errors(net: &mut Sequential<f64>, eps: f64, mut loss: impl FnMut(&Sequential<f64>) -> Result<f64>) -> Result<f64> {
    let analytic: Vec<Vec<f64>> = net.params().iter().map(|p| p.grad.data().to_vec()).collect();
    let mut worst: f64 = 0.0;
    for (pi, a) in analytic.iter().enumerate() {
        let mut numeric = vec![0.0; a.len()];
        for (j, slot) in numeric.iter_mut().enumerate() {
            let orig = net.params()[pi].value.data()[j];
            net.params_mut()[pi].value.data_mut()[j] = orig + eps;
            let lp = loss(net)?;
            net.params_mut()[pi].value.data_mut()[j] = orig - eps;
            let lm = loss(net)?;
            net.params_mut()[pi].value.data_mut()[j] = orig;
            *slot = (lp - lm) / (2.0 * eps);
        }
        worst = worst.max(relative_error(a, &numeric));
    }
    Ok(worst)
}

fn dot(a: &Array<f64>, b: &Array<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Worst relative error over the input gradient and every parameter tensor
/// of `L = Σ net(x) ⊙ r` for a random projection `r`.
pub fn check_network(specs: &[LayerSpec], input_shape: &[usize], seed: u64, eps: f64, margin: f64) -> Result<f64> {
    let mut rng = seeded_rng(seed, 99);
    let mut net: Sequential<f64> = Sequential::from_specs("g", specs, &mut rng)?;
    let x = draw_kink_free(&net, input_shape, margin, &mut rng)?;
    let (y, tape) = net.forward(&x)?;
    let r = uniform(y.shape(), &mut rng);
    net.zero_grad();
    let gx = net.backward(&tape, &r)?;
    let fd = central_difference(&x, eps, |x| Ok(dot(&net.infer(x)?, &r)))?;
    let worst = relative_error(gx.data(), &fd);
    Ok(worst.max(parameter_errors(&mut net, eps, |n| Ok(dot(&n.infer(&x)?, &r)))?))
}

/// Same check for one task head followed by its weighted task loss, on a
/// `2 × 3 × 4 × 4` latent.
pub fn check_head(task: TaskKind, outputs: usize, seed: u64, eps: f64, margin: f64) -> Result<f64> {
    let weights = TaskWeights { program: 0.7, vintage: 1.3, height: 0.5 };
    let mut rng = seeded_rng(seed, 5);
    let mut head: TaskHead<f64> = TaskHead::new(task, 3, 4, outputs, &mut rng)?;
    let z = draw_kink_free(&head.net, &[2, 3, 4, 4], margin, &mut rng)?;
    let labels: Vec<TaskLabels> = (0..2)
        .map(|_| TaskLabels { program_index: rng.gen_range(0..3), vintage_bin: rng.gen_range(0..4), height_gray: rng.gen_range(0.0..1.0) })
        .collect();
    let loss_of = |net: &Sequential<f64>, z: &Array<f64>| -> Result<f64> {
        let o = net.infer(z)?;
        Ok(dtp_loss(&[(task, &o)], &labels, &weights)?.total)
    };
    let (o, tape) = head.forward_train(&z)?;
    let l = dtp_loss(&[(task, &o)], &labels, &weights)?;
    head.net.zero_grad();
    let gz = head.net.backward(&tape, &l.grads[0])?;
    let fd = central_difference(&z, eps, |z| loss_of(&head.net, z))?;
    let worst = relative_error(gz.data(), &fd);
    Ok(worst.max(parameter_errors(&mut head.net, eps, |n| loss_of(n, &z))?))
}

/// With the code indices held fixed, `β·commitment` differentiates in `z_e`
/// and the codebook term in the selected entries. Returns the worse of the
/// two relative errors.
pub fn check_quantizer(seed: u64, eps: f64, beta: f64) -> Result<f64> {
    let mut rng = seeded_rng(seed, 11);
    let z = uniform(&[2, 3, 2, 2], &mut rng);
    let cb = uniform(&[5, 3], &mut rng);
    let q = quantize(&z, &cb)?;
    let (g_ze, g_cb) = quantizer_backward(&q, &Array::zeros(z.shape()), &cb, beta)?;
    let fixed = |q2: &crate::vq::Quantized<f64>| -> Result<()> {
        if q2.code.indices != q.code.indices {
            return Err(MarlError::State("perturbation changed a code index".into()));
        }
        Ok(())
    };
    let fd_z = central_difference(&z, eps, |p| {
        let qp = quantize(p, &cb)?;
        fixed(&qp)?;
        Ok(beta * qp.commitment_loss)
    })?;
    let fd_cb = central_difference(&cb, eps, |p| {
        let qp = quantize(&z, p)?;
        fixed(&qp)?;
        Ok(qp.codebook_loss)
    })?;
    Ok(relative_error(g_ze.data(), &fd_z).max(relative_error(g_cb.data(), &fd_cb)))
}
