//! Classifier-free guidance and the std-resampling correction.
//!
//! The guided prediction is `z = z_neg + s·(z_pos − z_neg)`. Resampling
//! pulls its global standard deviation back toward that of the conditional
//! prediction: `r·(σ_pos/σ_z)·z + (1−r)·z`. Because this is a positive
//! scalar multiple of `z`, `std(out) = r·σ_pos + (1−r)·σ_z` exactly.
//!
//! Standard deviations are population std over every element of one video
//! sample (frames × channels × spatial).

use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::numcore::Tensor;

pub const DEFAULT_CFG_SCALE: f32 = 7.5;
pub const DEFAULT_RESAMPLE_SCALE: f32 = 0.7;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    /// CFG scale `s ≥ 0`.
    pub cfg_scale: f32,
    /// Resampling strength `r ∈ [0, 1]`.
    pub resample_scale: f32,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self { cfg_scale: DEFAULT_CFG_SCALE, resample_scale: DEFAULT_RESAMPLE_SCALE }
    }
}

impl GuidanceConfig {
    pub fn new(cfg_scale: f32, resample_scale: f32) -> Result<Self> {
        let g = Self { cfg_scale, resample_scale };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(
            self.cfg_scale >= 0.0 && self.cfg_scale.is_finite(),
            Config,
            "cfg scale must be >= 0, got {}",
            self.cfg_scale
        );
        check_resample_scale(self.resample_scale)
    }
}

fn check_resample_scale(r: f32) -> Result<()> {
    ensure!((0.0..=1.0).contains(&r), Config, "resample scale must lie in [0, 1], got {}", r);
    Ok(())
}

/// `z_neg + s·(z_pos − z_neg)`, evaluated as `(1−s)·z_neg + s·z_pos` so
/// that `s = 1` and `s = 0` return the inputs bit-exactly.
pub fn cfg_combine(z_pos: &Tensor, z_neg: &Tensor, s: f32) -> Result<Tensor> {
    let s = s as f64;
    z_pos.zip_map(z_neg, |p, n| ((1.0 - s) * n as f64 + s * p as f64) as f32)
}

/// Rescales `z` toward standard deviation `sigma_pos` with strength `r`.
pub fn resample(z: &Tensor, sigma_pos: f64, r: f32) -> Result<Tensor> {
    check_resample_scale(r)?;
    if r == 0.0 {
        return Ok(z.clone());
    }
    ensure!(sigma_pos > 0.0 && sigma_pos.is_finite(), Degenerate, "sigma_pos = {}", sigma_pos);
    let sigma_z = z.std();
    ensure!(sigma_z > 0.0 && sigma_z.is_finite(), Degenerate, "std(z) = {}", sigma_z);
    let r = r as f64;
    let factor = r * sigma_pos / sigma_z + (1.0 - r);
    Ok(z.map(|v| (factor * v as f64) as f32))
}

/// Anything that predicts the noise in `z_t` at timestep `t` under a
/// prepared condition.
pub trait EpsModel {
    type Cond;

    fn predict_eps(&self, z_t: &Tensor, t: usize, cond: &Self::Cond) -> Result<Tensor>;
}

/// Conditional and unconditional predictions for one denoising step.
#[derive(Clone, Debug)]
pub struct GuidanceParts {
    pub pos: Tensor,
    pub neg: Tensor,
}

impl GuidanceParts {
    pub fn evaluate<M: EpsModel>(
        model: &M,
        z_t: &Tensor,
        t: usize,
        cond: &M::Cond,
        null_cond: &M::Cond,
    ) -> Result<Self> {
        Ok(Self { pos: model.predict_eps(z_t, t, cond)?, neg: model.predict_eps(z_t, t, null_cond)? })
    }

    /// CFG combination followed by resampling against `std(pos)`.
    pub fn combine(&self, g: &GuidanceConfig) -> Result<Tensor> {
        g.validate()?;
        let z = cfg_combine(&self.pos, &self.neg, g.cfg_scale)?;
        resample(&z, self.pos.std(), g.resample_scale)
    }
}

/// Guided ε-prediction: two model evaluations, CFG, then resampling.
pub fn guided_eps<M: EpsModel>(
    model: &M,
    z_t: &Tensor,
    t: usize,
    cond: &M::Cond,
    null_cond: &M::Cond,
    g: &GuidanceConfig,
) -> Result<Tensor> {
    GuidanceParts::evaluate(model, z_t, t, cond, null_cond)?.combine(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Rng;

    #[test]
    fn combine_endpoints_exact() {
        let mut rng = Rng::new(1);
        let p = rng.randn(&[64]).unwrap().scale(1e4);
        let n = rng.randn(&[64]).unwrap();
        assert_eq!(cfg_combine(&p, &n, 1.0).unwrap(), p);
        assert_eq!(cfg_combine(&p, &n, 0.0).unwrap(), n);
    }

    #[test]
    fn combine_hand_value() {
        let out = cfg_combine(&Tensor::scalar(2.0), &Tensor::scalar(1.0), 7.5).unwrap();
        assert_eq!(out.item().unwrap(), 8.5);
        assert!(cfg_combine(&Tensor::zeros(&[2]), &Tensor::zeros(&[3]), 1.0).is_err());
    }

    #[test]
    fn resample_endpoints() {
        let z = Rng::new(2).randn(&[500]).unwrap().scale(2.0);
        assert_eq!(resample(&z, 1.0, 0.0).unwrap(), z);
        let full = resample(&z, 1.0, 1.0).unwrap();
        assert!((full.std() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn resample_worked_example() {
        // σ_z = 2, σ_pos = 1, r = 0.7 → 0.7·1 + 0.3·2 = 1.3
        let z = Tensor::new(&[4], vec![2., -2., 2., -2.]).unwrap();
        assert_eq!(z.std(), 2.0);
        let out = resample(&z, 1.0, 0.7).unwrap();
        assert!((out.std() - 1.3).abs() < 1e-6);
    }

    #[test]
    fn resample_errors() {
        let flat = Tensor::full(&[8], 3.0);
        assert!(resample(&flat, 1.0, 0.5).is_err());
        let z = Tensor::new(&[2], vec![1., -1.]).unwrap();
        assert!(resample(&z, 1.0, 1.5).is_err());
        assert!(resample(&z, 1.0, -0.1).is_err());
        assert!(resample(&z, 0.0, 0.5).is_err());
        assert!(GuidanceConfig::new(-1.0, 0.5).is_err());
    }

    struct Fixed;

    impl EpsModel for Fixed {
        type Cond = Tensor;

        fn predict_eps(&self, _z: &Tensor, _t: usize, cond: &Tensor) -> Result<Tensor> {
            Ok(cond.clone())
        }
    }

    #[test]
    fn guided_identities() {
        let mut rng = Rng::new(4);
        let pos = rng.randn(&[32]).unwrap();
        let neg = rng.randn(&[32]).unwrap();
        let z = Tensor::zeros(&[32]);
        let g = |s, r| GuidanceConfig::new(s, r).unwrap();
        assert_eq!(guided_eps(&Fixed, &z, 0, &pos, &neg, &g(1.0, 0.0)).unwrap(), pos);
        assert_eq!(guided_eps(&Fixed, &z, 0, &pos, &neg, &g(0.0, 0.0)).unwrap(), neg);
        let out = guided_eps(&Fixed, &z, 0, &pos, &neg, &g(5.0, 0.4)).unwrap();
        let cfg = cfg_combine(&pos, &neg, 5.0).unwrap();
        let expected = 0.4 * pos.std() + 0.6 * cfg.std();
        assert!((out.std() - expected).abs() < 1e-5);
    }
}
