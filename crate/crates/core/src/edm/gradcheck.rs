//! Central-difference validation of the training gradient.
//!
//! The check fixes everything stochastic (noise level, corruption noise),
//! making the training loss a deterministic function of the parameters, and
//! compares the analytic gradient against `(L(p+h) - L(p-h)) / 2h` per
//! parameter. It runs in `f64` end to end; with smooth activations the
//! agreement is limited by the h^2 truncation term, and with the identity
//! activation the loss is piecewise linear per parameter so the difference
//! collapses to rounding noise.

use crate::edm::{edm_coeffs, TinyConvDenoiser, TrainSample};
use crate::error::{Error, Result};
use crate::loss::{hybrid_loss, hybrid_loss_grad, LossConfig};
use ndarray::Array2;
use rand::{seq::SliceRandom, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub mean_rel_err: f64,
    pub checked: usize,
}

fn fixed_noise(shape: (usize, usize), seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_simple_fn(shape, || StandardNormal.sample(&mut rng))
}

fn loss_value(
    net: &TinyConvDenoiser,
    sample: &TrainSample,
    x_noisy: &Array2<f64>,
    sigma: f64,
    sigma_data: f64,
    loss_cfg: &LossConfig,
) -> Result<f64> {
    let c = edm_coeffs(sigma, sigma_data)?;
    let x_in = x_noisy.mapv(|v| v * c.c_in);
    let input = net.assemble_input(&x_in, &sample.cond, c.c_noise)?;
    let tape = net.forward_cached(input);
    let pred = ndarray::Zip::from(x_noisy)
        .and(tape.output())
        .map_collect(|x, r| c.c_skip * x + c.c_out * r);
    hybrid_loss(&pred.view(), &sample.target.view(), sigma, loss_cfg)
}

/// Loss and analytic parameter gradient at a fixed noise draw.
pub fn training_gradient(
    net: &TinyConvDenoiser,
    sample: &TrainSample,
    sigma: f64,
    noise_seed: u64,
    sigma_data: f64,
    loss_cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    sample.validate()?;
    let eps = fixed_noise(sample.target.dim(), noise_seed);
    let x_noisy = ndarray::Zip::from(&sample.target).and(&eps).map_collect(|t, e| t + sigma * e);
    let c = edm_coeffs(sigma, sigma_data)?;
    let x_in = x_noisy.mapv(|v| v * c.c_in);
    let input = net.assemble_input(&x_in, &sample.cond, c.c_noise)?;
    let tape = net.forward_cached(input);
    let pred = ndarray::Zip::from(&x_noisy)
        .and(tape.output())
        .map_collect(|x, r| c.c_skip * x + c.c_out * r);
    let (loss, dpred) = hybrid_loss_grad(&pred.view(), &sample.target.view(), sigma, loss_cfg)?;
    let draw = dpred.mapv(|g| g * c.c_out);
    Ok((loss, net.backward(&tape, &draw).flat()))
}

/// Compare a candidate gradient against central differences on a random
/// subset of parameters (`max_params == 0` checks all of them).
pub fn compare_gradient(
    net: &mut TinyConvDenoiser,
    sample: &TrainSample,
    sigma: f64,
    noise_seed: u64,
    sigma_data: f64,
    loss_cfg: &LossConfig,
    candidate: &[f64],
    h: f64,
    max_params: usize,
    subset_seed: u64,
) -> Result<GradCheckReport> {
    sample.validate()?;
    if candidate.len() != net.param_count() {
        return Err(Error::Shape(format!(
            "candidate gradient has {} entries, network has {} parameters",
            candidate.len(),
            net.param_count()
        )));
    }
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!("step size {h} must be positive")));
    }
    let eps = fixed_noise(sample.target.dim(), noise_seed);
    let x_noisy = ndarray::Zip::from(&sample.target).and(&eps).map_collect(|t, e| t + sigma * e);

    let n = net.param_count();
    let mut indices: Vec<usize> = (0..n).collect();
    if max_params != 0 && max_params < n {
        let mut rng = ChaCha8Rng::seed_from_u64(subset_seed);
        indices.shuffle(&mut rng);
        indices.truncate(max_params);
    }

    let mut params = net.params_flat();
    let mut max_rel = 0.0f64;
    let mut sum_rel = 0.0f64;
    for &i in &indices {
        let orig = params[i];
        params[i] = orig + h;
        net.set_params_flat(&params)?;
        let lp = loss_value(net, sample, &x_noisy, sigma, sigma_data, loss_cfg)?;
        params[i] = orig - h;
        net.set_params_flat(&params)?;
        let lm = loss_value(net, sample, &x_noisy, sigma, sigma_data, loss_cfg)?;
        params[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        let rel = (fd - candidate[i]).abs() / fd.abs().max(candidate[i].abs()).max(1e-8);
        max_rel = max_rel.max(rel);
        sum_rel += rel;
    }
    net.set_params_flat(&params)?;
    Ok(GradCheckReport {
        max_rel_err: max_rel,
        mean_rel_err: sum_rel / indices.len() as f64,
        checked: indices.len(),
    })
}

/// Validate the network's own analytic gradient against central
/// differences.
pub fn finite_difference_check(
    net: &mut TinyConvDenoiser,
    sample: &TrainSample,
    sigma: f64,
    noise_seed: u64,
    sigma_data: f64,
    loss_cfg: &LossConfig,
    h: f64,
    max_params: usize,
    subset_seed: u64,
) -> Result<GradCheckReport> {
    let (_, analytic) = training_gradient(net, sample, sigma, noise_seed, sigma_data, loss_cfg)?;
    compare_gradient(
        net, sample, sigma, noise_seed, sigma_data, loss_cfg, &analytic, h, max_params,
        subset_seed,
    )
}
