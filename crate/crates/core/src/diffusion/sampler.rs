//! Forward noising, the noise-prediction loss and ancestral sampling.

use candle_core::{DType, Device, Tensor};
use rand::Rng;

use crate::cond::{ConditionBundle, ConditionalEncoder};
use crate::diffusion::{DenoiserModel, NoiseSchedule};
use crate::error::{Error, Result};
use crate::rng;

/// Per-sample coefficient column `(B, 1, 1, 1)`.
/// Per-row scalars shaped `(B, 1, ..)` to broadcast against a rank-`rank` batch.
fn coeffs(values: &[f64], rank: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut shape = vec![1; rank.max(1)];
    shape[0] = values.len();
    Ok(Tensor::from_vec(values.to_vec(), shape, device)?.to_dtype(dtype)?)
}

/// Closed-form `x_n = √ᾱ_n·x0 + √(1−ᾱ_n)·eps`, with one step per batch row.
pub fn forward_sample(
    x0: &Tensor,
    steps: &[usize],
    eps: &Tensor,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    if x0.dims() != eps.dims() {
        return Err(Error::shape(
            format!("{:?}", x0.dims()),
            format!("{:?}", eps.dims()),
        ));
    }
    if steps.len() != x0.dim(0)? {
        return Err(Error::shape(format!("{} steps", x0.dim(0)?), steps.len()));
    }
    for &n in steps {
        schedule.check_step(n)?;
    }
    let (dt, dev) = (x0.dtype(), x0.device());
    let signal: Vec<f64> = steps
        .iter()
        .map(|&n| schedule.alpha_bar(n).sqrt())
        .collect();
    let noise: Vec<f64> = steps
        .iter()
        .map(|&n| (1.0 - schedule.alpha_bar(n)).sqrt())
        .collect();
    let rank = x0.rank();
    Ok((x0.broadcast_mul(&coeffs(&signal, rank, dt, dev)?)?
        + eps.broadcast_mul(&coeffs(&noise, rank, dt, dev)?)?)?)
}

/// Standard-normal tensor whose row `k` is drawn from `rngs[k]`.
pub fn noise_like(
    rngs: &mut [impl Rng],
    per_row: &[usize],
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let n: usize = per_row.iter().product();
    let mut data = Vec::with_capacity(rngs.len() * n);
    for r in rngs.iter_mut() {
        data.extend(rng::normals(r, n));
    }
    let mut shape = vec![rngs.len()];
    shape.extend_from_slice(per_row);
    Ok(Tensor::from_vec(data, shape, device)?.to_dtype(dtype)?)
}

/// Mean squared error between `eps` and the model's prediction at the given steps.
pub fn training_loss_at(
    model: &DenoiserModel,
    x0: &Tensor,
    steps: &[usize],
    eps: &Tensor,
    bundle: &ConditionBundle,
    schedule: &NoiseSchedule,
) -> Result<Tensor> {
    let xn = forward_sample(x0, steps, eps, schedule)?;
    noise_mse(&model.predict(&xn, steps, bundle)?, eps)
}

/// Mean over all elements of `(pred − eps)²`.
pub fn noise_mse(pred: &Tensor, eps: &Tensor) -> Result<Tensor> {
    Ok((pred - eps)?.sqr()?.mean_all()?)
}

/// Draws uniform steps and standard-normal noise, then evaluates the loss.
/// Fails with [`Error::NonFinite`] on a NaN or infinite loss.
pub fn training_loss(
    model: &DenoiserModel,
    x0: &Tensor,
    bundle: &ConditionBundle,
    schedule: &NoiseSchedule,
    rng: &mut impl Rng,
) -> Result<Tensor> {
    let b = x0.dim(0)?;
    let steps: Vec<usize> = (0..b)
        .map(|_| rng.random_range(1..=schedule.steps()))
        .collect();
    let data = rng::normals(rng, x0.elem_count());
    let eps = Tensor::from_vec(data, x0.shape(), x0.device())?.to_dtype(x0.dtype())?;
    let loss = training_loss_at(model, x0, &steps, &eps, bundle, schedule)?;
    let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
    if !value.is_finite() {
        return Err(Error::NonFinite("diffusion loss"));
    }
    Ok(loss)
}

/// One reverse step given a noise estimate:
/// `μ = (x_n − β_n/√(1−ᾱ_n)·eps)/√α_n`, plus `√β_n·z` unless `n == 1`.
pub fn ancestral_step(
    x_n: &Tensor,
    eps: &Tensor,
    n: usize,
    schedule: &NoiseSchedule,
    z: Option<&Tensor>,
) -> Result<Tensor> {
    schedule.check_step(n)?;
    let beta = schedule.beta(n);
    let coef = beta / (1.0 - schedule.alpha_bar(n)).sqrt();
    let mean = ((x_n - (eps * coef)?)? / schedule.alpha(n).sqrt())?;
    match z {
        Some(z) if n > 1 => Ok((mean + (z * beta.sqrt())?)?),
        _ => Ok(mean),
    }
}

/// Sampling-time options.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleOptions {
    /// Classifier-free guidance scale; 1.0 uses the conditional prediction only.
    pub guidance: f64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions { guidance: 1.0 }
    }
}

/// Noise estimate with optional guidance toward the conditioned prediction.
fn guided_eps(
    model: &DenoiserModel,
    encoder: &ConditionalEncoder,
    x: &Tensor,
    steps: &[usize],
    bundle: &ConditionBundle,
    opts: SampleOptions,
) -> Result<Tensor> {
    let cond = model.predict(x, steps, bundle)?;
    if opts.guidance == 1.0 {
        return Ok(cond);
    }
    let uncond = model.predict(x, steps, &encoder.null_bundle(bundle.batch_size())?)?;
    Ok((&uncond + ((cond - &uncond)? * opts.guidance)?)?)
}

/// `x_{n-1}` from `x_n`; row `k` draws its noise from `rngs[k]`.
#[allow(clippy::too_many_arguments)]
pub fn denoise_step(
    model: &DenoiserModel,
    encoder: &ConditionalEncoder,
    x_n: &Tensor,
    n: usize,
    bundle: &ConditionBundle,
    schedule: &NoiseSchedule,
    rngs: &mut [impl Rng],
    opts: SampleOptions,
) -> Result<Tensor> {
    let b = x_n.dim(0)?;
    if rngs.len() != b {
        return Err(Error::shape(format!("{b} random streams"), rngs.len()));
    }
    let eps = guided_eps(model, encoder, x_n, &vec![n; b], bundle, opts)?;
    let z = if n > 1 {
        Some(noise_like(
            rngs,
            &x_n.dims()[1..],
            x_n.dtype(),
            x_n.device(),
        )?)
    } else {
        None
    };
    ancestral_step(x_n, &eps, n, schedule, z.as_ref())
}

/// Runs the reverse chain `n = N..1` from per-row standard-normal noise,
/// asking `predict(x_n, n)` for the noise estimate, and clamps to `[-1, 1]`.
pub fn sample_with(
    mut predict: impl FnMut(&Tensor, usize) -> Result<Tensor>,
    shape: &[usize],
    schedule: &NoiseSchedule,
    rngs: &mut [impl Rng],
    dtype: DType,
    device: &Device,
) -> Result<Tensor> {
    let mut x = noise_like(rngs, shape, dtype, device)?;
    for n in (1..=schedule.steps()).rev() {
        let eps = predict(&x, n)?;
        let z = if n > 1 {
            Some(noise_like(rngs, shape, dtype, device)?)
        } else {
            None
        };
        x = ancestral_step(&x, &eps, n, schedule, z.as_ref())?;
    }
    Ok(x.clamp(-1.0, 1.0)?)
}

/// Generates one image per bundle row, `(B, 1, H, W)`; row `k` is a function of
/// `rngs[k]` and its conditions only.
pub fn sample(
    model: &DenoiserModel,
    encoder: &ConditionalEncoder,
    bundle: &ConditionBundle,
    schedule: &NoiseSchedule,
    rngs: &mut [impl Rng],
    opts: SampleOptions,
) -> Result<Tensor> {
    let b = bundle.batch_size();
    if rngs.len() != b {
        return Err(Error::shape(format!("{b} random streams"), rngs.len()));
    }
    let cfg = model.config();
    let shape = [1, cfg.height, cfg.width];
    sample_with(
        |x, n| guided_eps(model, encoder, x, &vec![n; b], bundle, opts),
        &shape,
        schedule,
        rngs,
        model.dtype(),
        model.device(),
    )
}
