//! Image-quality and content metrics: SSIM, RMSE, recognizer-feature FID (rFID)
//! and recognizer CER against the conditioning text.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::checkpoint::config_hash;
use crate::corpus::{Raster, TextImageSample};
use crate::error::{Error, Result};
use crate::recognizer::{mean_cer, RecognizerModel};

/// Fewest samples per side accepted by [`feature_fid`].
pub const MIN_FID_SAMPLES: usize = 50;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

fn same_shape(a: &Raster, b: &Raster) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(
            format!("{:?}", a.dims()),
            format!("{:?}", b.dims()),
        ));
    }
    Ok(())
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        *v = (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.map(|v| v / s)
}

/// Separable valid-mode filtering of a row-major `h x w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> (Vec<f64>, usize, usize) {
    let n = k.len();
    let (oh, ow) = (h + 1 - n, w + 1 - n);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Single-scale SSIM with an 11x11 Gaussian window (σ = 1.5) over images
/// rescaled from `[-1, 1]` to `[0, 1]`.
pub fn ssim(a: &Raster, b: &Raster) -> Result<f64> {
    same_shape(a, b)?;
    let (h, w) = a.dims();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::InvalidArgument(format!(
            "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"
        )));
    }
    let to01 =
        |r: &Raster| -> Vec<f64> { r.data().iter().map(|&v| (v as f64 + 1.0) / 2.0).collect() };
    let (x, y) = (to01(a), to01(b));
    let k = gaussian_window();
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(u, v)| u * v).collect() };
    let (mx, ..) = filter_valid(&x, h, w, &k);
    let (my, ..) = filter_valid(&y, h, w, &k);
    let (mxx, ..) = filter_valid(&prod(&x, &x), h, w, &k);
    let (myy, ..) = filter_valid(&prod(&y, &y), h, w, &k);
    let (mxy, ..) = filter_valid(&prod(&x, &y), h, w, &k);
    let (c1, c2) = (K1 * K1, K2 * K2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = mxx[i] - ux * ux;
            let vy = myy[i] - uy * uy;
            let cov = mxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cov + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

/// Root mean squared pixel difference.
pub fn rmse(a: &Raster, b: &Raster) -> Result<f64> {
    same_shape(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
        .sum();
    Ok((sum / a.data().len() as f64).sqrt())
}

fn moments(rows: &[Vec<f64>]) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if n < 2 || d == 0 {
        return Err(Error::TooFewSamples { need: 2, got: n });
    }
    if rows.iter().any(|r| r.len() != d) {
        return Err(Error::shape(format!("feature width {d}"), "ragged rows"));
    }
    let x = DMatrix::from_fn(n, d, |i, j| rows[i][j]);
    let mean = x.row_mean().transpose();
    let centered = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    Ok((mean, cov))
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// Fréchet distance between Gaussian fits of two feature sets:
/// `‖μr − μg‖² + Tr(Σr + Σg − 2(Σr Σg)^½)`.
///
/// The trace of the cross term is taken as `Tr((S Σg S)^½)` with `S = Σr^½`,
/// which has the same eigenvalues and stays symmetric; negative eigenvalues are
/// clipped at 0.
pub fn frechet_distance(real: &[Vec<f64>], gen: &[Vec<f64>]) -> Result<f64> {
    let (mr, cr) = moments(real)?;
    let (mg, cg) = moments(gen)?;
    if mr.len() != mg.len() {
        return Err(Error::shape(
            format!("feature width {}", mr.len()),
            mg.len(),
        ));
    }
    if cr.iter().chain(cg.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("feature covariance"));
    }
    let s = psd_sqrt(&cr);
    let mut m = &s * &cg * &s;
    m = (&m + m.transpose()) * 0.5;
    let cross: f64 = SymmetricEigen::new(m)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let fid = (&mr - &mg).norm_squared() + cr.trace() + cg.trace() - 2.0 * cross;
    if !fid.is_finite() {
        return Err(Error::NonFinite("frechet distance"));
    }
    Ok(fid.max(0.0))
}

/// rFID: Fréchet distance over the recognizer's frame-averaged features.
pub fn feature_fid(real: &[&Raster], gen: &[&Raster], recognizer: &RecognizerModel) -> Result<f64> {
    for n in [real.len(), gen.len()] {
        if n < MIN_FID_SAMPLES {
            return Err(Error::TooFewSamples {
                need: MIN_FID_SAMPLES,
                got: n,
            });
        }
    }
    frechet_distance(
        &recognizer.pooled_features(real)?,
        &recognizer.pooled_features(gen)?,
    )
}

/// Mean CER of the recognizer's reading of each image against its text.
pub fn content_validity(
    images: &[&Raster],
    texts: &[String],
    recognizer: &RecognizerModel,
) -> Result<f64> {
    if images.len() != texts.len() {
        return Err(Error::shape(format!("{} texts", images.len()), texts.len()));
    }
    if images.is_empty() {
        return Err(Error::TooFewSamples { need: 1, got: 0 });
    }
    mean_cer(&recognizer.recognize(images)?, texts)
}

/// Quality of a generated set against a real one. Field order is stable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub fid: f64,
    /// Mean SSIM over index-aligned pairs.
    pub ssim: f64,
    /// Mean RMSE over index-aligned pairs.
    pub rmse: f64,
    /// CER of generated images against their labels.
    pub content_cer: f64,
    pub n_real: usize,
    pub n_gen: usize,
    pub config_hash: String,
}

/// Builds a [`MetricReport`]; SSIM and RMSE pair `real[i]` with `gen[i]` for
/// `i < min(|real|, |gen|)`.
pub fn compare(
    real: &[TextImageSample],
    gen: &[TextImageSample],
    recognizer: &RecognizerModel,
) -> Result<MetricReport> {
    let ri: Vec<&Raster> = real.iter().map(|s| &s.image).collect();
    let gi: Vec<&Raster> = gen.iter().map(|s| &s.image).collect();
    let fid = feature_fid(&ri, &gi, recognizer)?;
    let pairs = ri.len().min(gi.len());
    let mut ssim_sum = 0.0;
    let mut rmse_sum = 0.0;
    for i in 0..pairs {
        ssim_sum += ssim(ri[i], gi[i])?;
        rmse_sum += rmse(ri[i], gi[i])?;
    }
    let texts: Vec<String> = gen.iter().map(|s| s.text.clone()).collect();
    let content_cer = content_validity(&gi, &texts, recognizer)?;
    let report = MetricReport {
        fid,
        ssim: ssim_sum / pairs as f64,
        rmse: rmse_sum / pairs as f64,
        content_cer,
        n_real: real.len(),
        n_gen: gen.len(),
        config_hash: config_hash(&("rfid", recognizer.config(), recognizer.alphabet()))?,
    };
    for v in [report.fid, report.ssim, report.rmse, report.content_cer] {
        if !v.is_finite() {
            return Err(Error::NonFinite("metric report"));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{tiny_image, tiny_recognizer};
    use candle_core::DType;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_distr::{Distribution, Normal};

    fn random_raster(r: &mut impl Rng, h: usize, w: usize) -> Raster {
        Raster::new(
            h,
            w,
            (0..h * w).map(|_| r.random_range(-1.0f32..=1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ssim_of_identical_images_is_one() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let x = random_raster(&mut r, 20, 30);
            assert!((ssim(&x, &x).unwrap() - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn ssim_of_inverted_checkerboard_is_low() {
        let data: Vec<f32> = (0..32 * 32)
            .map(|i| {
                if ((i / 32) / 4 + (i % 32) / 4) % 2 == 0 {
                    1.0
                } else {
                    -1.0
                }
            })
            .collect();
        let x = Raster::new(32, 32, data.clone()).unwrap();
        let inv = Raster::new(32, 32, data.iter().map(|v| -v).collect()).unwrap();
        assert!(ssim(&x, &inv).unwrap() < 0.2);
    }

    #[test]
    fn ssim_on_constant_images_matches_closed_form() {
        for (p, q) in [(0.2f32, 0.2f32), (-1.0, 1.0), (0.5, -0.3)] {
            let a = Raster::filled(16, 16, p);
            let b = Raster::filled(16, 16, q);
            let (u, v) = ((p as f64 + 1.0) / 2.0, (q as f64 + 1.0) / 2.0);
            let c1 = 0.01f64.powi(2);
            let want = (2.0 * u * v + c1) / (u * u + v * v + c1);
            assert!((ssim(&a, &b).unwrap() - want).abs() < 1e-9);
        }
    }

    #[test]
    fn ssim_and_rmse_reject_shape_mismatch() {
        let a = Raster::filled(16, 16, 0.0);
        let b = Raster::filled(16, 17, 0.0);
        assert!(ssim(&a, &b).is_err());
        assert!(rmse(&a, &b).is_err());
        assert!(ssim(&Raster::filled(8, 8, 0.0), &Raster::filled(8, 8, 0.0)).is_err());
    }

    #[test]
    fn rmse_basics() {
        let zero = Raster::filled(4, 4, 0.0);
        assert_eq!(rmse(&zero, &zero).unwrap(), 0.0);
        for c in [0.25f32, -0.75] {
            assert!(
                (rmse(&zero, &Raster::filled(4, 4, c)).unwrap() - c.abs() as f64).abs() < 1e-12
            );
        }
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let a = random_raster(&mut r, 3, 5);
            let b = random_raster(&mut r, 3, 5);
            let mut acc = 0.0f64;
            for i in 0..15 {
                let d = a.data()[i] as f64 - b.data()[i] as f64;
                acc += d * d;
            }
            assert!((rmse(&a, &b).unwrap() - (acc / 15.0).sqrt()).abs() < 1e-9);
        }
    }

    fn gaussian_features(r: &mut impl Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..n)
            .map(|_| (0..d).map(|_| normal.sample(r)).collect())
            .collect()
    }

    #[test]
    fn frechet_of_a_set_with_itself_is_zero() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let a = gaussian_features(&mut r, 200, 8);
        assert!(frechet_distance(&a, &a).unwrap() <= 1e-6);
    }

    #[test]
    fn shifted_features_give_squared_distance() {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let a = gaussian_features(&mut r, 300, 6);
        let shift = [0.3, -1.0, 0.0, 2.0, 0.5, -0.2];
        let d2: f64 = shift.iter().map(|s| s * s).sum();
        let b: Vec<Vec<f64>> = a
            .iter()
            .map(|row| row.iter().zip(&shift).map(|(x, s)| x + s).collect())
            .collect();
        assert!((frechet_distance(&a, &b).unwrap() - d2).abs() <= 1e-4);
    }

    #[test]
    fn frechet_matches_scalar_closed_form() {
        // 1-d: (μ1 − μ2)² + (σ1 − σ2)².
        let a: Vec<Vec<f64>> = vec![vec![0.0], vec![2.0], vec![4.0]];
        let b: Vec<Vec<f64>> = vec![vec![1.0], vec![2.0], vec![3.0]];
        let want = (2.0f64 - 2.0).powi(2) + (2.0f64 - 1.0).powi(2);
        assert!((frechet_distance(&a, &b).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn feature_fid_requires_enough_samples() {
        let rec = tiny_recognizer(DType::F32);
        let img = tiny_image("ab", 0);
        let few = vec![&img; 10];
        let many = vec![&img; 60];
        assert!(matches!(
            feature_fid(&few, &many, &rec),
            Err(Error::TooFewSamples { need: 50, got: 10 })
        ));
    }

    #[test]
    fn content_validity_checks_lengths() {
        let rec = tiny_recognizer(DType::F32);
        let img = tiny_image("ab", 0);
        assert!(content_validity(&[&img], &[], &rec).is_err());
        let cer = content_validity(&[&img], &["ab".into()], &rec).unwrap();
        assert!(cer >= 0.0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn ssim_is_symmetric(seed in any::<u64>()) {
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = random_raster(&mut r, 14, 20);
            let b = random_raster(&mut r, 14, 20);
            let s = ssim(&a, &b).unwrap();
            prop_assert!((s - ssim(&b, &a).unwrap()).abs() <= 1e-9);
            prop_assert!((-1.0..=1.0).contains(&s));
        }

        #[test]
        fn rmse_triangle_inequality(seed in any::<u64>()) {
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = random_raster(&mut r, 4, 6);
            let b = random_raster(&mut r, 4, 6);
            let c = random_raster(&mut r, 4, 6);
            let ab = rmse(&a, &b).unwrap();
            prop_assert!(rmse(&a, &c).unwrap() <= ab + rmse(&b, &c).unwrap() + 1e-9);
            prop_assert!((ab - rmse(&b, &a).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn frechet_is_nonnegative(seed in any::<u64>()) {
            let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let a = gaussian_features(&mut r, 20, 4);
            let b = gaussian_features(&mut r, 30, 4);
            prop_assert!(frechet_distance(&a, &b).unwrap() >= 0.0);
        }
    }
}
