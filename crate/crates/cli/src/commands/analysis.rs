//! `analyze-schedule` and `oracle-check`: no checkpoint involved.

use std::path::PathBuf;

use clap::Args;
use longvid_core::model::ScheduleConfig;
use longvid_core::oracle::oracle_sample_check;
use longvid_core::schedule::DEFAULT_SAMPLING_STEPS;
use serde_json::json;

use super::{emit, prepare_out_dir, DEFAULT_SEED};
use crate::config::Settings;
use crate::manifest::RunManifest;
use crate::{CliError, Common};

#[derive(Args, Debug)]
pub struct ScheduleFlags {
    #[arg(long)]
    pub train_steps: Option<usize>,
    #[arg(long)]
    pub beta_start: Option<f64>,
    #[arg(long)]
    pub beta_end: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub zero_terminal_snr: Option<bool>,
}

impl ScheduleFlags {
    fn resolve(self, s: &Settings) -> Result<ScheduleConfig, CliError> {
        let d = ScheduleConfig::default();
        Ok(ScheduleConfig {
            train_steps: s.pick(self.train_steps, "train_steps", d.train_steps)?,
            beta_start: s.pick(self.beta_start, "beta_start", d.beta_start)?,
            beta_end: s.pick(self.beta_end, "beta_end", d.beta_end)?,
            zero_terminal_snr: s.pick(self.zero_terminal_snr, "zero_terminal_snr", d.zero_terminal_snr)?,
        })
    }
}

#[derive(Args, Debug)]
pub struct ScheduleArgs {
    #[command(flatten)]
    pub common: Common,
    /// Where to write `snr.csv` and `summary.json`; the summary always goes to stdout.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    pub schedule: ScheduleFlags,
}

pub fn run_schedule(a: ScheduleArgs) -> Result<(), CliError> {
    let s = Settings::load(a.common.config.as_deref())?;
    let seed = s.pick(a.common.seed, "seed", DEFAULT_SEED)?;
    let out = s.pick_opt(a.out_dir, "out_dir")?;
    let cfg = a.schedule.resolve(&s)?;
    s.finish()?;

    let report = cfg.build()?.snr_report();
    let summary = serde_json::to_string_pretty(&report.summary)?;
    if let Some(dir) = out {
        let dir = prepare_out_dir(&dir)?;
        std::fs::write(dir.join("snr.csv"), report.to_csv())?;
        std::fs::write(dir.join("summary.json"), summary.clone() + "\n")?;
        let mut manifest = RunManifest::new("analyze-schedule", seed, serde_json::to_value(&cfg)?);
        manifest.artifacts = vec!["snr.csv".into(), "summary.json".into()];
        manifest.results = serde_json::to_value(&report.summary)?;
        manifest.write(&dir)?;
    }
    emit(&summary)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct OracleArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Number of scalar samples pushed through the sampler.
    #[arg(long)]
    pub samples: Option<usize>,
    /// DDIM steps.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Target mean.
    #[arg(long, allow_hyphen_values = true)]
    pub mu: Option<f32>,
    /// Target variance.
    #[arg(long)]
    pub sigma2: Option<f32>,
    #[command(flatten)]
    pub schedule: ScheduleFlags,
}

pub fn run_oracle(a: OracleArgs) -> Result<(), CliError> {
    let s = Settings::load(a.common.config.as_deref())?;
    let seed = s.pick(a.common.seed, "seed", DEFAULT_SEED)?;
    let out = s.pick_opt(a.out_dir, "out_dir")?;
    let samples = s.pick(a.samples, "samples", 10_000usize)?;
    let steps = s.pick(a.steps, "steps", DEFAULT_SAMPLING_STEPS)?;
    let mu = s.pick(a.mu, "mu", 0.0f32)?;
    let sigma2 = s.pick(a.sigma2, "sigma2", 1.0f32)?;
    let cfg = a.schedule.resolve(&s)?;
    s.finish()?;

    let report = oracle_sample_check(mu, sigma2, &cfg.build()?, steps, samples, seed)?;
    let text = serde_json::to_string_pretty(&report)?;
    if let Some(dir) = out {
        let dir = prepare_out_dir(&dir)?;
        std::fs::write(dir.join("report.json"), text.clone() + "\n")?;
        let config = json!({ "samples": samples, "steps": steps, "mu": mu, "sigma2": sigma2, "schedule": cfg });
        let mut manifest = RunManifest::new("oracle-check", seed, config);
        manifest.artifacts = vec!["report.json".into()];
        manifest.results = serde_json::to_value(&report)?;
        manifest.write(&dir)?;
    }
    emit(&text)?;
    Ok(())
}
