//! Noise schedules: per-step β, α = 1 − β and cumulative ᾱ.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const COSINE_OFFSET: f64 = 0.008;
const MAX_BETA: f64 = 0.999;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScheduleKind {
    Linear,
    Cosine,
}

impl std::str::FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ScheduleKind::Linear),
            "cosine" => Ok(ScheduleKind::Cosine),
            _ => Err(Error::InvalidArgument(format!("unknown schedule `{s}`"))),
        }
    }
}

/// Serializable description of a schedule.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub kind: ScheduleKind,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: 200,
            kind: ScheduleKind::Cosine,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.kind)
    }
}

/// Steps are 1-based: `beta(1)` is the first noising step, `beta(steps())` the last.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    betas: Vec<f64>,
    alphas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub fn make_schedule(steps: usize, kind: ScheduleKind) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::InvalidArgument(format!(
            "a schedule needs at least 2 steps, got {steps}"
        )));
    }
    let betas: Vec<f64> = match kind {
        ScheduleKind::Linear => {
            // Endpoints scale with 1000 / steps so short schedules still reach noise.
            let scale = 1000.0 / steps as f64;
            let (lo, hi) = (1e-4 * scale, (0.02 * scale).min(MAX_BETA));
            (0..steps)
                .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
                .collect()
        }
        ScheduleKind::Cosine => {
            let f = |t: f64| {
                let c =
                    ((t / steps as f64 + COSINE_OFFSET) / (1.0 + COSINE_OFFSET) * FRAC_PI_2).cos();
                c * c
            };
            (1..=steps)
                .map(|n| (1.0 - f(n as f64) / f(n as f64 - 1.0)).clamp(0.0, MAX_BETA))
                .collect()
        }
    };
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for a in &alphas {
        acc *= a;
        alpha_bars.push(acc);
    }
    Ok(NoiseSchedule {
        kind,
        betas,
        alphas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn config(&self) -> ScheduleConfig {
        ScheduleConfig {
            steps: self.steps(),
            kind: self.kind,
        }
    }

    pub fn check_step(&self, n: usize) -> Result<()> {
        if n == 0 || n > self.steps() {
            return Err(Error::InvalidArgument(format!(
                "step {n} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    /// Panics when `n` is outside `1..=steps()`.
    pub fn beta(&self, n: usize) -> f64 {
        self.betas[n - 1]
    }

    pub fn alpha(&self, n: usize) -> f64 {
        self.alphas[n - 1]
    }

    pub fn alpha_bar(&self, n: usize) -> f64 {
        self.alpha_bars[n - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_degenerate_lengths() {
        assert!(make_schedule(1, ScheduleKind::Cosine).is_err());
        assert!(make_schedule(0, ScheduleKind::Linear).is_err());
        assert!(make_schedule(2, ScheduleKind::Linear).is_ok());
    }

    #[test]
    fn alpha_bar_is_strictly_decreasing_and_reaches_noise() {
        for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
            let s = make_schedule(200, kind).unwrap();
            assert!(s.alpha_bars().windows(2).all(|w| w[1] < w[0]), "{kind:?}");
            assert!(s.alpha_bar(200) < 0.01, "{kind:?}: {}", s.alpha_bar(200));
            assert!(s.betas().iter().all(|&b| b > 0.0 && b < 1.0));
        }
    }

    #[test]
    fn ratio_of_cumulative_products_is_alpha() {
        for kind in [ScheduleKind::Cosine, ScheduleKind::Linear] {
            let s = make_schedule(200, kind).unwrap();
            assert!((s.alpha_bar(1) - s.alpha(1)).abs() == 0.0);
            for n in 2..=200 {
                let r = s.alpha_bar(n) / s.alpha_bar(n - 1);
                assert!((r - s.alpha(n)).abs() < 1e-12, "{kind:?} n={n}");
                assert_eq!(s.alpha_bar(n), s.alpha_bar(n - 1) * s.alpha(n));
            }
        }
    }

    #[test]
    fn cosine_matches_closed_form_before_clipping() {
        let n_steps = 200;
        let s = make_schedule(n_steps, ScheduleKind::Cosine).unwrap();
        let g = |t: f64| {
            ((t / 200.0 + 0.008) / 1.008 * std::f64::consts::PI / 2.0)
                .cos()
                .powi(2)
        };
        for n in [1, 50, 100, 150, 190] {
            let want = g(n as f64) / g(0.0);
            assert!((s.alpha_bar(n) - want).abs() < 1e-9, "n={n}");
        }
        assert_eq!(s.beta(n_steps), 0.999);
    }

    #[test]
    fn step_bounds() {
        let s = make_schedule(10, ScheduleKind::Linear).unwrap();
        assert!(s.check_step(0).is_err());
        assert!(s.check_step(11).is_err());
        assert!(s.check_step(10).is_ok());
    }
}
