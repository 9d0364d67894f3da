//! Spatial denoising: Gaussian, bilateral, and locally adaptive Wiener.
//!
//! All three filters use replicate-edge borders and a fixed summation
//! order inside each window, so row-parallel evaluation is bit-identical
//! to a sequential pass.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::image::GrayImage;

#[derive(Debug, thiserror::Error)]
pub enum FilterError {
    #[error("invalid filter parameter: {0}")]
    InvalidParameter(String),
}

pub type FilterResult<T> = Result<T, FilterError>;

fn invalid(msg: String) -> FilterError {
    FilterError::InvalidParameter(msg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub sigma_s: f64,
    pub radius: usize,
}

impl GaussianParams {
    pub fn new(sigma_s: f64, radius: usize) -> FilterResult<Self> {
        let p = Self { sigma_s, radius };
        p.validate()?;
        Ok(p)
    }

    /// Radius `ceil(2 sigma)`, at least 1.
    pub fn with_sigma(sigma_s: f64) -> FilterResult<Self> {
        Self::new(sigma_s, ((2.0 * sigma_s).ceil() as usize).max(1))
    }

    pub fn validate(&self) -> FilterResult<()> {
        if !(self.sigma_s > 0.0) || !self.sigma_s.is_finite() {
            return Err(invalid(format!("sigma_s must be > 0, got {}", self.sigma_s)));
        }
        if self.radius < 1 {
            return Err(invalid("gaussian radius must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for GaussianParams {
    fn default() -> Self {
        Self {
            sigma_s: 1.0,
            radius: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BilateralParams {
    /// Spatial standard deviation in pixels.
    pub delta_s: f64,
    /// Range standard deviation in intensity units.
    pub delta_g: f64,
    pub radius: usize,
}

impl BilateralParams {
    pub fn new(delta_s: f64, delta_g: f64, radius: usize) -> FilterResult<Self> {
        let p = Self {
            delta_s,
            delta_g,
            radius,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> FilterResult<()> {
        if !(self.delta_s > 0.0) || !self.delta_s.is_finite() {
            return Err(invalid(format!("delta_s must be > 0, got {}", self.delta_s)));
        }
        if !(self.delta_g > 0.0) || !self.delta_g.is_finite() {
            return Err(invalid(format!("delta_g must be > 0, got {}", self.delta_g)));
        }
        if self.radius < 1 {
            return Err(invalid("bilateral radius must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for BilateralParams {
    /// Segmentation-pipeline defaults.
    fn default() -> Self {
        Self {
            delta_s: 3.0,
            delta_g: 30.0,
            radius: 5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseVariance {
    Fixed(f64),
    /// Mean of all local variances.
    Estimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WienerParams {
    pub window: usize,
    pub noise_variance: NoiseVariance,
}

impl WienerParams {
    pub fn new(window: usize, noise_variance: NoiseVariance) -> FilterResult<Self> {
        let p = Self { window, noise_variance };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> FilterResult<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(invalid(format!(
                "wiener window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if let NoiseVariance::Fixed(v) = self.noise_variance {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(format!("noise variance must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for WienerParams {
    fn default() -> Self {
        Self {
            window: 3,
            noise_variance: NoiseVariance::Estimate,
        }
    }
}

/// Normalized 1-D Gaussian taps for offsets `-radius..=radius`.
fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let denom = 2.0 * sigma * sigma;
    let raw: Vec<f64> = (-r..=r).map(|d| (-((d * d) as f64) / denom).exp()).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / sum).collect()
}

/// Gaussian smoothing, evaluated as two separable 1-D passes.
///
/// The square truncated kernel factorizes exactly, and clamping acts per
/// axis, so this equals the direct 2-D convolution up to rounding.
/// Sums accumulate offsets from the centre pixel, which keeps constant
/// regions bit-exact.
pub fn gaussian_filter(img: &GrayImage, p: &GaussianParams) -> FilterResult<GrayImage> {
    p.validate()?;
    let taps = gaussian_taps(p.sigma_s, p.radius);
    let (w, h) = (img.width(), img.height());
    let r = p.radius as isize;

    let mut horizontal = vec![0.0; w * h];
    horizontal.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let centre = img.get(x, y);
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                acc += k * (img.get_clamped(x as isize + t as isize - r, y as isize) - centre);
            }
            *out = centre + acc;
        }
    });
    let horizontal = GrayImage::new(w, h, horizontal).expect("same shape");

    let mut data = vec![0.0; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let centre = horizontal.get(x, y);
            let mut acc = 0.0;
            for (t, &k) in taps.iter().enumerate() {
                acc += k * (horizontal.get_clamped(x as isize, y as isize + t as isize - r) - centre);
            }
            *out = centre + acc;
        }
    });
    Ok(GrayImage::new(w, h, data).expect("same shape"))
}

/// Edge-preserving bilateral filter.
///
/// Each output is the weighted mean of the window around the pixel, with
/// weights the product of a spatial Gaussian (`delta_s`) and a range
/// Gaussian on the intensity difference to the centre (`delta_g`).
pub fn bilateral_filter(img: &GrayImage, p: &BilateralParams) -> FilterResult<GrayImage> {
    p.validate()?;
    let (w, h) = (img.width(), img.height());
    let r = p.radius as isize;
    let side = 2 * p.radius + 1;
    let spatial_denom = 2.0 * p.delta_s * p.delta_s;
    let range_denom = 2.0 * p.delta_g * p.delta_g;

    let mut spatial = Vec::with_capacity(side * side);
    for dy in -r..=r {
        for dx in -r..=r {
            spatial.push((-((dx * dx + dy * dy) as f64) / spatial_denom).exp());
        }
    }

    let mut data = vec![0.0; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
        for (x, out) in row.iter_mut().enumerate() {
            let centre = img.get(x, y);
            let mut num = 0.0;
            let mut den = 0.0;
            let mut k = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    let g = img.get_clamped(x as isize + dx, y as isize + dy);
                    let diff = g - centre;
                    let wgt = spatial[k] * (-(diff * diff) / range_denom).exp();
                    num += wgt * diff;
                    den += wgt;
                    k += 1;
                }
            }
            *out = centre + num / den;
        }
    });
    Ok(GrayImage::new(w, h, data).expect("same shape"))
}

/// Local mean and population variance over a clamped square window.
fn local_stats(img: &GrayImage, window: usize) -> (Vec<f64>, Vec<f64>) {
    let (w, h) = (img.width(), img.height());
    let r = (window / 2) as isize;
    let count = (window * window) as f64;
    let mut means = vec![0.0; w * h];
    let mut vars = vec![0.0; w * h];
    means
        .par_chunks_mut(w)
        .zip(vars.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (mrow, vrow))| {
            for x in 0..w {
                let centre = img.get(x, y);
                let mut sum = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        sum += img.get_clamped(x as isize + dx, y as isize + dy) - centre;
                    }
                }
                let mean = centre + sum / count;
                let mut sq = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        let d = img.get_clamped(x as isize + dx, y as isize + dy) - mean;
                        sq += d * d;
                    }
                }
                mrow[x] = mean;
                vrow[x] = sq / count;
            }
        });
    (means, vars)
}

/// Noise variance the Wiener filter would use for `img`.
pub fn wiener_noise_variance(img: &GrayImage, p: &WienerParams) -> FilterResult<f64> {
    p.validate()?;
    Ok(match p.noise_variance {
        NoiseVariance::Fixed(v) => v,
        NoiseVariance::Estimate => {
            let (_, vars) = local_stats(img, p.window);
            vars.iter().sum::<f64>() / vars.len() as f64
        }
    })
}

/// Locally adaptive Wiener filter in local-statistics form.
///
/// `out = mu + max(var - nu, 0) / max(var, nu) * (x - mu)`, where `mu` and
/// `var` are the window mean and variance and `nu` the noise variance.
/// A window with `var = nu = 0` passes the pixel through.
pub fn wiener_filter(img: &GrayImage, p: &WienerParams) -> FilterResult<GrayImage> {
    p.validate()?;
    let (means, vars) = local_stats(img, p.window);
    let nu = match p.noise_variance {
        NoiseVariance::Fixed(v) => v,
        NoiseVariance::Estimate => vars.iter().sum::<f64>() / vars.len() as f64,
    };
    let data = img
        .data()
        .iter()
        .zip(means.iter().zip(&vars))
        .map(|(&x, (&mu, &var))| {
            let den = var.max(nu);
            let gain = if den > 0.0 { (var - nu).max(0.0) / den } else { 1.0 };
            // Written so gain = 1 reproduces x exactly.
            x - (1.0 - gain) * (x - mu)
        })
        .collect();
    Ok(GrayImage::new(img.width(), img.height(), data).expect("same shape"))
}
