//! Closed-form Gaussian data with its exact posterior-mean ε predictor.
//!
//! For data `x ~ N(mu, diag(sigma2))` and `z_t = sqrt(ᾱ)·x + sqrt(1−ᾱ)·ε`,
//! `E[ε | z_t] = sqrt(1−ᾱ)·(z_t − sqrt(ᾱ)·mu) / (ᾱ·sigma2 + 1 − ᾱ)`.
//! No network is involved, so schedule and guidance maths can be checked
//! against ground truth.

use serde::Serialize;

use crate::error::{ensure, Result};
use crate::guidance::EpsModel;
use crate::numcore::{Rng, Tensor};
use crate::schedule::{ddim_pairs, ddim_step, ddim_timesteps, NoiseSchedule};

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianWorld {
    mu: Tensor,
    sigma2: Tensor,
}

impl GaussianWorld {
    pub fn new(mu: Tensor, sigma2: Tensor) -> Result<Self> {
        ensure!(mu.shape() == sigma2.shape(), ShapeMismatch, "mu {:?} vs sigma2 {:?}", mu.shape(), sigma2.shape());
        ensure!(sigma2.data().iter().all(|&v| v > 0.0), Config, "sigma2 must be positive elementwise");
        Ok(Self { mu, sigma2 })
    }

    /// Same mean and variance at every element of `shape`.
    pub fn isotropic(mu: f32, sigma2: f32, shape: &[usize]) -> Result<Self> {
        Self::new(Tensor::full(shape, mu), Tensor::full(shape, sigma2))
    }

    pub fn mu(&self) -> &Tensor {
        &self.mu
    }

    pub fn sigma2(&self) -> &Tensor {
        &self.sigma2
    }

    /// Draws `x ~ N(mu, sigma2)` of the world's shape.
    pub fn sample(&self, rng: &mut Rng) -> Result<Tensor> {
        let e = rng.randn(self.mu.shape())?;
        let scaled = e.zip_map(&self.sigma2, |e, s2| e * s2.sqrt())?;
        scaled.add(&self.mu)
    }
}

/// Exact `E[ε | z_t]` for Gaussian data.
pub fn oracle_eps(world: &GaussianWorld, z_t: &Tensor, t: usize, s: &NoiseSchedule) -> Result<Tensor> {
    ensure!(
        z_t.shape() == world.mu.shape(),
        ShapeMismatch,
        "z_t {:?} vs world {:?}",
        z_t.shape(),
        world.mu.shape()
    );
    let ab = s.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = z_t
        .data()
        .iter()
        .zip(world.mu.data())
        .zip(world.sigma2.data())
        .map(|((&z, &m), &s2)| {
            let denom = ab * s2 as f64 + (1.0 - ab);
            (b * (z as f64 - a * m as f64) / denom) as f32
        })
        .collect();
    Tensor::new(z_t.shape(), data)
}

/// The oracle as an [`EpsModel`]; the world itself is the condition.
#[derive(Clone, Debug)]
pub struct GaussianOracle {
    pub schedule: NoiseSchedule,
}

impl EpsModel for GaussianOracle {
    type Cond = GaussianWorld;

    fn predict_eps(&self, z_t: &Tensor, t: usize, cond: &GaussianWorld) -> Result<Tensor> {
        oracle_eps(cond, z_t, t, &self.schedule)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleReport {
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
    pub target_mean: f64,
    pub target_variance: f64,
    pub sample_mean: f64,
    pub sample_variance: f64,
    /// `|mean − mu| / (|mu| + 1)`.
    pub mean_error: f64,
    /// `|var − sigma2| / sigma2`.
    pub variance_error: f64,
    pub mean_tolerance: f64,
    pub variance_tolerance: f64,
    pub within_tolerance: bool,
}

pub const ORACLE_MEAN_TOLERANCE: f64 = 0.02;
pub const ORACLE_VARIANCE_TOLERANCE: f64 = 0.05;

/// Runs deterministic DDIM from pure noise with the oracle predictor for
/// `n` scalar samples of an isotropic world and compares terminal moments.
pub fn oracle_sample_check(
    mu: f32,
    sigma2: f32,
    schedule: &NoiseSchedule,
    steps: usize,
    n: usize,
    seed: u64,
) -> Result<OracleReport> {
    ensure!(steps >= 10, Config, "oracle check needs steps >= 10, got {}", steps);
    ensure!(n >= 1000, Config, "oracle check needs n >= 1000, got {}", n);
    let world = GaussianWorld::isotropic(mu, sigma2, &[n])?;
    let samples = transport(&world, schedule, steps, &mut Rng::new(seed))?;
    let sample_mean = samples.mean();
    let sample_variance = samples.std().powi(2);
    let (m, v) = (mu as f64, sigma2 as f64);
    let mean_error = (sample_mean - m).abs() / (m.abs() + 1.0);
    let variance_error = (sample_variance - v).abs() / v;
    Ok(OracleReport {
        steps,
        samples: n,
        seed,
        target_mean: m,
        target_variance: v,
        sample_mean,
        sample_variance,
        mean_error,
        variance_error,
        mean_tolerance: ORACLE_MEAN_TOLERANCE,
        variance_tolerance: ORACLE_VARIANCE_TOLERANCE,
        within_tolerance: mean_error <= ORACLE_MEAN_TOLERANCE
            && variance_error <= ORACLE_VARIANCE_TOLERANCE,
    })
}

/// Deterministic DDIM chain from `N(0, I)` under the oracle predictor.
pub fn transport(world: &GaussianWorld, schedule: &NoiseSchedule, steps: usize, rng: &mut Rng) -> Result<Tensor> {
    let ladder = ddim_timesteps(schedule.len(), steps)?;
    let mut z = rng.randn(world.mu.shape())?;
    for (t, t_prev) in ddim_pairs(&ladder) {
        let eps = oracle_eps(world, &z, t, schedule)?;
        z = ddim_step(&z, &eps, t, t_prev, schedule)?;
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::guidance::cfg_combine;
    use crate::schedule::q_sample;

    #[test]
    fn standard_world_collapses_to_scaled_input() {
        let s = NoiseSchedule::default();
        let w = GaussianWorld::isotropic(0.0, 1.0, &[5]).unwrap();
        let z = Tensor::new(&[5], vec![1., -2., 0.5, 3., 0.]).unwrap();
        for t in [0, 250, 999] {
            let b = (1.0 - s.alpha_bar(t).unwrap()).sqrt() as f32;
            let out = oracle_eps(&w, &z, t, &s).unwrap();
            assert!(out.max_abs_diff(&z.scale(b)).unwrap() < 1e-6);
        }
    }

    #[test]
    fn mode_has_zero_noise() {
        let s = NoiseSchedule::default();
        let w = GaussianWorld::new(Tensor::new(&[3], vec![3., -1., 0.2]).unwrap(), Tensor::full(&[3], 0.25)).unwrap();
        let a = s.alpha_bar(600).unwrap().sqrt() as f32;
        let out = oracle_eps(&w, &w.mu().scale(a), 600, &s).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-6));
    }

    #[test]
    fn regression_slope_is_one() {
        // Posterior mean ⇒ regressing ε on E[ε|z] gives slope exactly 1.
        let s = NoiseSchedule::default();
        let n = 10_000;
        let w = GaussianWorld::isotropic(3.0, 0.25, &[n]).unwrap();
        let mut rng = Rng::new(9);
        let x = w.sample(&mut rng).unwrap();
        let eps = rng.randn(&[n]).unwrap();
        let t = 500;
        let zt = q_sample(&x, t, &eps, &s).unwrap();
        let pred = oracle_eps(&w, &zt, t, &s).unwrap();
        let (pm, em) = (pred.mean(), eps.mean());
        let cov: f64 = pred.data().iter().zip(eps.data()).map(|(&p, &e)| (p as f64 - pm) * (e as f64 - em)).sum();
        let var: f64 = pred.data().iter().map(|&p| (p as f64 - pm).powi(2)).sum();
        assert!((cov / var - 1.0).abs() < 0.02);
    }

    #[test]
    fn cfg_of_two_worlds_is_interpolated_world() {
        // Shared variance: ε is affine in mu, so guidance interpolates means.
        let s = NoiseSchedule::default();
        let pos = GaussianWorld::isotropic(2.0, 0.5, &[4]).unwrap();
        let neg = GaussianWorld::isotropic(-1.0, 0.5, &[4]).unwrap();
        let z = Tensor::new(&[4], vec![0.3, -0.7, 1.1, 2.0]).unwrap();
        for scale in [0.0f32, 0.5, 1.0, 3.0, 7.5] {
            let mixed = GaussianWorld::isotropic(-1.0 + scale * 3.0, 0.5, &[4]).unwrap();
            let guided = cfg_combine(
                &oracle_eps(&pos, &z, 300, &s).unwrap(),
                &oracle_eps(&neg, &z, 300, &s).unwrap(),
                scale,
            )
            .unwrap();
            let direct = oracle_eps(&mixed, &z, 300, &s).unwrap();
            assert!(guided.max_abs_diff(&direct).unwrap() < 1e-5, "s = {scale}");
        }
    }

    #[test]
    fn check_preconditions() {
        let s = NoiseSchedule::default();
        assert!(oracle_sample_check(0.0, 1.0, &s, 5, 1000, 0).is_err());
        assert!(oracle_sample_check(0.0, 1.0, &s, 50, 10, 0).is_err());
        assert!(GaussianWorld::isotropic(0.0, 0.0, &[2]).is_err());
    }
}
