//! Random affine augmentation, resampled with the spatial transformer's
//! corner-aligned bilinear sampler.

use alloc::vec::Vec;

use rand::Rng;

use crate::math;
use crate::stn::{self, AffineTheta};
use crate::{Error, Result, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Rotation drawn uniformly from ±`rotation_deg` degrees.
    pub rotation_deg: f64,
    /// Shift per axis drawn from ±`translation_frac` of the image width.
    pub translation_frac: f64,
    pub scale_min: f64,
    pub scale_max: f64,
    /// Draw new transforms every epoch instead of fixing one per image.
    pub resample_per_epoch: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_deg: 10.0,
            translation_frac: 0.1,
            scale_min: 0.9,
            scale_max: 1.1,
            resample_per_epoch: true,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig {
            rotation_deg: 0.0,
            translation_frac: 0.0,
            scale_min: 1.0,
            scale_max: 1.0,
            resample_per_epoch: true,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_deg == 0.0
            && self.translation_frac == 0.0
            && self.scale_min == 1.0
            && self.scale_max == 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.rotation_deg,
            self.translation_frac,
            self.scale_min,
            self.scale_max,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("augmentation ranges must be finite".into()));
        }
        if self.rotation_deg < 0.0 || self.translation_frac < 0.0 {
            return Err(Error::Config(
                "augmentation ranges must be non-negative".into(),
            ));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max) {
            return Err(Error::Config(alloc::format!(
                "scale range [{}, {}] invalid",
                self.scale_min,
                self.scale_max
            )));
        }
        Ok(())
    }
}

/// One concrete transform of the image content: rotate by `angle` radians
/// about the centre, scale by `scale`, then shift by `(shift_x, shift_y)`
/// in normalized units (the full width spans 2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub angle: f64,
    pub scale: f64,
    pub shift_x: f64,
    pub shift_y: f64,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        angle: 0.0,
        scale: 1.0,
        shift_x: 0.0,
        shift_y: 0.0,
    };

    pub fn sample<R: Rng>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let mut uniform = |lo: f64, hi: f64| if hi > lo { rng.gen_range(lo..hi) } else { lo };
        let r = cfg.rotation_deg.to_radians();
        let t = 2.0 * cfg.translation_frac;
        AffineParams {
            angle: uniform(-r, r),
            scale: uniform(cfg.scale_min, cfg.scale_max),
            shift_x: uniform(-t, t),
            shift_y: uniform(-t, t),
        }
    }

    /// Sampling map (output → input coordinates), the inverse of the
    /// content transform.
    pub fn theta(&self) -> [f64; 6] {
        let (s, c) = (math::sin(self.angle), math::cos(self.angle));
        // inverse of p ↦ scale·R(angle)·p + shift
        let (a, b, cc, d) = (
            c / self.scale,
            s / self.scale,
            -s / self.scale,
            c / self.scale,
        );
        let tx = -(a * self.shift_x + b * self.shift_y);
        let ty = -(cc * self.shift_x + d * self.shift_y);
        [a, b, tx, cc, d, ty]
    }
}

/// Warps each image of `[N,H,W,C]` by its own transform.
pub fn augment_with(batch: &Tensor, params: &[AffineParams]) -> Result<Tensor> {
    if batch.rank() != 4 || batch.shape()[0] != params.len() {
        return Err(Error::LengthMismatch {
            left: batch.shape().first().copied().unwrap_or(0),
            right: params.len(),
        });
    }
    let thetas: Vec<[f64; 6]> = params.iter().map(AffineParams::theta).collect();
    let mut out = stn::warp(batch, &AffineTheta::new(&thetas))?;
    out.data_mut()
        .iter_mut()
        .for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(out)
}

/// Random per-image affine augmentation; the identity configuration
/// returns the batch unchanged.
pub fn augment_batch<R: Rng>(batch: &Tensor, cfg: &AugmentConfig, rng: &mut R) -> Result<Tensor> {
    cfg.validate()?;
    if cfg.is_identity() {
        return Ok(batch.clone());
    }
    let n = batch.shape().first().copied().unwrap_or(0);
    let params: Vec<AffineParams> = (0..n).map(|_| AffineParams::sample(cfg, rng)).collect();
    augment_with(batch, &params)
}
