//! Diffusion noise schedules, forward noising and the deterministic DDIM
//! reverse step.
//!
//! Schedule tables are kept in `f64`; tensor arithmetic is `f32`. Timesteps
//! are 0-based internally (`0..T`), the SNR report labels them `1..=T`.

use serde::Serialize;

use crate::error::{ensure, Result};
use crate::numcore::Tensor;

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_SAMPLING_STEPS: usize = 50;

#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Linearly interpolated β from `beta_start` to `beta_end` over `steps` steps.
pub fn make_linear_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    ensure!(steps >= 2, Config, "schedule needs at least 2 steps, got {}", steps);
    ensure!(
        0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0,
        Config,
        "need 0 < beta_start <= beta_end < 1, got {} / {}",
        beta_start,
        beta_end
    );
    let betas: Vec<f64> = (0..steps)
        .map(|t| beta_start + (beta_end - beta_start) * t as f64 / (steps - 1) as f64)
        .collect();
    Ok(NoiseSchedule::from_betas(betas))
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_linear_schedule(DEFAULT_TRAIN_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule parameters are valid")
    }
}

impl NoiseSchedule {
    fn from_betas(betas: Vec<f64>) -> Self {
        let mut acc = 1.0;
        let alpha_bar = betas
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Self { betas, alpha_bar }
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        ensure!(t < self.len(), OutOfRange, "timestep {} outside 0..{}", t, self.len());
        Ok(self.alpha_bar[t])
    }

    pub fn snr(&self, t: usize) -> Result<f64> {
        let ab = self.alpha_bar(t)?;
        Ok(ab / (1.0 - ab))
    }

    pub fn terminal_alpha_bar(&self) -> f64 {
        *self.alpha_bar.last().expect("schedule is non-empty")
    }

    pub fn terminal_snr(&self) -> f64 {
        let ab = self.terminal_alpha_bar();
        ab / (1.0 - ab)
    }

    /// Affinely rescales `sqrt(alpha_bar)` so the last step has exactly zero
    /// SNR while the first step is kept. β is recomputed from the new
    /// cumulative products, so the terminal β becomes 1.
    ///
    /// A schedule that already ends at zero SNR is returned unchanged.
    pub fn rescale_zero_terminal_snr(&self) -> Result<NoiseSchedule> {
        let sqrt_ab: Vec<f64> = self.alpha_bar.iter().map(|a| a.sqrt()).collect();
        let first = sqrt_ab[0];
        let last = *sqrt_ab.last().expect("schedule is non-empty");
        if last == 0.0 {
            return Ok(self.clone());
        }
        ensure!(first != last, Degenerate, "alpha_bar is constant ({}), cannot rescale", first);
        let scale = first / (first - last);
        let alpha_bar: Vec<f64> = sqrt_ab.iter().map(|s| ((s - last) * scale).powi(2)).collect();
        let mut betas = Vec::with_capacity(alpha_bar.len());
        betas.push(1.0 - alpha_bar[0]);
        for w in alpha_bar.windows(2) {
            betas.push(1.0 - w[1] / w[0]);
        }
        Ok(NoiseSchedule { betas, alpha_bar })
    }

    /// Full per-timestep diagnostic table.
    pub fn snr_report(&self) -> SnrReport {
        let rows = (0..self.len())
            .map(|t| {
                let ab = self.alpha_bar[t];
                SnrRow {
                    t: t + 1,
                    beta: self.betas[t],
                    alpha_bar: ab,
                    snr: ab / (1.0 - ab),
                    sqrt_alpha_bar: ab.sqrt(),
                }
            })
            .collect();
        let terminal_snr = self.terminal_snr();
        SnrReport {
            rows,
            summary: SnrSummary {
                terminal_snr,
                terminal_alpha_bar: self.terminal_alpha_bar(),
                flagged: terminal_snr > 0.0,
                flag: (terminal_snr > 0.0).then(|| "non-zero terminal SNR".to_string()),
            },
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SnrRow {
    /// 1-based timestep label.
    pub t: usize,
    pub beta: f64,
    pub alpha_bar: f64,
    pub snr: f64,
    pub sqrt_alpha_bar: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SnrSummary {
    pub terminal_snr: f64,
    pub terminal_alpha_bar: f64,
    pub flagged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

#[derive(Clone, Debug)]
pub struct SnrReport {
    pub rows: Vec<SnrRow>,
    pub summary: SnrSummary,
}

impl SnrReport {
    /// CSV with columns `t,beta,alpha_bar,snr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,beta,alpha_bar,snr\n");
        for r in &self.rows {
            out.push_str(&format!("{},{:e},{:e},{:e}\n", r.t, r.beta, r.alpha_bar, r.snr));
        }
        out
    }
}

/// `sqrt(ᾱ_t)·z0 + sqrt(1−ᾱ_t)·eps`.
pub fn q_sample(z0: &Tensor, t: usize, eps: &Tensor, s: &NoiseSchedule) -> Result<Tensor> {
    ensure!(z0.shape() == eps.shape(), ShapeMismatch, "z0 {:?} vs eps {:?}", z0.shape(), eps.shape());
    let ab = s.alpha_bar(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    z0.zip_map(eps, |z, e| (a * z as f64 + b * e as f64) as f32)
}

/// Deterministic (η = 0) DDIM update from timestep `t` to `t_prev`;
/// `t_prev = None` denotes the clean end of the chain (ᾱ = 1).
pub fn ddim_step(
    z_t: &Tensor,
    eps_hat: &Tensor,
    t: usize,
    t_prev: Option<usize>,
    s: &NoiseSchedule,
) -> Result<Tensor> {
    let ab_t = s.alpha_bar(t)?;
    let ab_prev = match t_prev {
        Some(tp) => {
            ensure!(tp < t, Contract, "t_prev {} must precede t {}", tp, t);
            s.alpha_bar(tp)?
        }
        None => 1.0,
    };
    ddim_update(z_t, eps_hat, ab_t, ab_prev)
}

/// The DDIM update written directly in terms of the two cumulative alphas.
pub fn ddim_update(z_t: &Tensor, eps_hat: &Tensor, ab_t: f64, ab_prev: f64) -> Result<Tensor> {
    ensure!(
        z_t.shape() == eps_hat.shape(),
        ShapeMismatch,
        "z_t {:?} vs eps {:?}",
        z_t.shape(),
        eps_hat.shape()
    );
    ensure!(ab_t > 0.0, Degenerate, "alpha_bar_t = 0: clean estimate undefined for ε-prediction");
    let (a_t, b_t) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let (a_p, b_p) = (ab_prev.sqrt(), (1.0 - ab_prev).max(0.0).sqrt());
    z_t.zip_map(eps_hat, |z, e| {
        let (z, e) = (z as f64, e as f64);
        let x0 = (z - b_t * e) / a_t;
        (a_p * x0 + b_p * e) as f32
    })
}

/// Clean-sample estimate `(z_t − sqrt(1−ᾱ_t)·eps)/sqrt(ᾱ_t)`.
pub fn predict_x0(z_t: &Tensor, eps_hat: &Tensor, t: usize, s: &NoiseSchedule) -> Result<Tensor> {
    let ab = s.alpha_bar(t)?;
    ensure!(ab > 0.0, Degenerate, "alpha_bar_t = 0");
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    z_t.zip_map(eps_hat, |z, e| ((z as f64 - b * e as f64) / a) as f32)
}

/// Uniformly strided DDIM ladder, highest timestep first:
/// `[(k−1)·r, …, r, 0]` with `r = T / steps`.
pub fn ddim_timesteps(train_steps: usize, steps: usize) -> Result<Vec<usize>> {
    ensure!(
        steps >= 1 && steps <= train_steps,
        Config,
        "sampling steps {} must lie in 1..={}",
        steps,
        train_steps
    );
    let ratio = train_steps / steps;
    Ok((0..steps).rev().map(|i| i * ratio).collect())
}

/// `(t, t_prev)` pairs for a ladder; the final pair ends at the clean sample.
pub fn ddim_pairs(ladder: &[usize]) -> Vec<(usize, Option<usize>)> {
    ladder.iter().enumerate().map(|(i, &t)| (t, ladder.get(i + 1).copied())).collect()
}
