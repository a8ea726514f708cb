use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How beta evolves across the training timesteps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaKind {
    /// Beta interpolated linearly between the endpoints.
    Linear,
    /// `sqrt(beta)` interpolated linearly, then squared.
    #[default]
    ScaledLinear,
}

/// Variance schedule `beta_1..beta_N` together with the cumulative signal
/// retention `alpha_bar_t = prod_{i<=t} (1 - beta_i)`.
///
/// Timesteps are 1-based. `alpha_bar(0)` is defined as 1 so that `t = 0`
/// denotes clean data.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub const DEFAULT_TRAIN_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 0.00085;
pub const DEFAULT_BETA_END: f64 = 0.012;

impl NoiseSchedule {
    pub fn build(n: usize, beta_start: f64, beta_end: f64, kind: BetaKind) -> Result<Self> {
        if n == 0 {
            return Err(Error::param("schedule needs at least one step"));
        }
        let valid = beta_start.is_finite()
            && beta_end.is_finite()
            && 0.0 < beta_start
            && beta_start <= beta_end
            && beta_end < 1.0;
        if !valid {
            return Err(Error::param(format!(
                "beta range must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
            )));
        }
        let frac = |i: usize| {
            if n == 1 {
                0.0
            } else {
                i as f64 / (n - 1) as f64
            }
        };
        let betas = match kind {
            BetaKind::Linear => (0..n)
                .map(|i| beta_start + (beta_end - beta_start) * frac(i))
                .collect(),
            BetaKind::ScaledLinear => {
                let (lo, hi) = (beta_start.sqrt(), beta_end.sqrt());
                (0..n)
                    .map(|i| {
                        let s = lo + (hi - lo) * frac(i);
                        s * s
                    })
                    .collect()
            }
        };
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::param("schedule needs at least one step"));
        }
        if let Some((i, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, b)| !(b.is_finite() && **b > 0.0 && **b < 1.0))
        {
            return Err(Error::param(format!(
                "beta_{} = {b} is outside (0, 1)",
                i + 1
            )));
        }
        let alpha_bars: Vec<f64> = betas
            .iter()
            .scan(1.0_f64, |acc, b| {
                *acc *= 1.0 - b;
                Some(*acc)
            })
            .collect();
        let mut prev = 1.0;
        for (i, &a) in alpha_bars.iter().enumerate() {
            if !(a < prev && a > 0.0) {
                return Err(Error::param(format!(
                    "alpha_bar is not strictly decreasing at t = {}",
                    i + 1
                )));
            }
            prev = a;
        }
        Ok(Self { betas, alpha_bars })
    }

    /// Number of training timesteps `N`.
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
        &self.alpha_bars
    }

    /// `beta_t` for `1 <= t <= N`.
    pub fn beta(&self, t: usize) -> Result<f64> {
        self.check(t, 1)?;
        Ok(self.betas[t - 1])
    }

    /// `alpha_bar_t` for `0 <= t <= N`, with `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> Result<f64> {
        self.check(t, 0)?;
        Ok(if t == 0 { 1.0 } else { self.alpha_bars[t - 1] })
    }

    fn check(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.len() {
            return Err(Error::param(format!(
                "timestep {t} outside [{lo}, {}]",
                self.len()
            )));
        }
        Ok(())
    }

    /// Descending timesteps for a `steps`-step DDIM run from `t_start` to 0.
    ///
    /// The grid is `round(i * t_start / steps)` for `i = steps..=1`; the final
    /// target 0 is implicit and not part of the returned list.
    pub fn uniform_grid(&self, t_start: usize, steps: usize) -> Result<Vec<usize>> {
        self.check(t_start, 0)?;
        if steps > t_start {
            return Err(Error::param(format!(
                "{steps} steps do not fit below t = {t_start}"
            )));
        }
        Ok((1..=steps)
            .rev()
            .map(|i| (2 * i * t_start + steps) / (2 * steps))
            .collect())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::build(
            DEFAULT_TRAIN_STEPS,
            DEFAULT_BETA_START,
            DEFAULT_BETA_END,
            BetaKind::ScaledLinear,
        )
        .expect("default schedule is valid")
    }
}

/// The window `[T', T]` over which motion-enriched latents are built.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    t_start: usize,
    t_mid: usize,
}

impl TimeWindow {
    pub fn new(t_start: usize, t_mid: usize, schedule: &NoiseSchedule) -> Result<Self> {
        if !(1 <= t_mid && t_mid <= t_start && t_start <= schedule.len()) {
            return Err(Error::param(format!(
                "time window needs 1 <= T' <= T <= {}, got T = {t_start}, T' = {t_mid}",
                schedule.len()
            )));
        }
        Ok(Self { t_start, t_mid })
    }

    /// `T`
    pub fn t_start(&self) -> usize {
        self.t_start
    }

    /// `T'`
    pub fn t_mid(&self) -> usize {
        self.t_mid
    }

    /// `T - T'`
    pub fn delta_t(&self) -> usize {
        self.t_start - self.t_mid
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_schedule() {
        let s = NoiseSchedule::build(1, 0.5, 0.5, BetaKind::Linear).unwrap();
        assert_eq!(s.alpha_bars(), &[0.5]);
        let s = NoiseSchedule::build(1, 0.5, 0.5, BetaKind::ScaledLinear).unwrap();
        assert!((s.alpha_bars()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_step_product() {
        let s = NoiseSchedule::from_betas(vec![0.1, 0.2]).unwrap();
        assert!((s.alpha_bars()[0] - 0.9).abs() < 1e-15);
        assert!((s.alpha_bars()[1] - 0.72).abs() < 1e-15);
        assert_eq!(s.alpha_bar(0).unwrap(), 1.0);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(NoiseSchedule::build(0, 0.1, 0.2, BetaKind::Linear).is_err());
        assert!(NoiseSchedule::build(10, 0.0, 0.2, BetaKind::Linear).is_err());
        assert!(NoiseSchedule::build(10, 0.3, 0.2, BetaKind::Linear).is_err());
        assert!(NoiseSchedule::build(10, 0.1, 1.0, BetaKind::Linear).is_err());
        assert!(NoiseSchedule::build(10, f64::NAN, 0.2, BetaKind::Linear).is_err());
        assert!(NoiseSchedule::from_betas(vec![]).is_err());
        assert!(NoiseSchedule::from_betas(vec![0.1, 1.5]).is_err());
    }

    #[test]
    fn linear_endpoints() {
        let s = NoiseSchedule::build(1000, 1e-4, 2e-2, BetaKind::Linear).unwrap();
        assert_eq!(s.beta(1).unwrap(), 1e-4);
        assert!((s.beta(1000).unwrap() - 2e-2).abs() < 1e-17);
        assert!(s.alpha_bar(1000).unwrap() < 1e-3);
    }

    #[test]
    fn scaled_linear_interpolates_sqrt() {
        let s = NoiseSchedule::default();
        let mid = s.beta(500).unwrap().sqrt();
        let (lo, hi) = (DEFAULT_BETA_START.sqrt(), DEFAULT_BETA_END.sqrt());
        assert!((mid - (lo + (hi - lo) * 499.0 / 999.0)).abs() < 1e-15);
    }

    #[test]
    fn out_of_range_timesteps() {
        let s = NoiseSchedule::default();
        assert!(s.alpha_bar(1001).is_err());
        assert!(s.beta(0).is_err());
    }

    #[test]
    fn uniform_grid_endpoints() {
        let s = NoiseSchedule::default();
        let g = s.uniform_grid(941, 50).unwrap();
        assert_eq!(g.len(), 50);
        assert_eq!(g[0], 941);
        assert!(g.windows(2).all(|w| w[0] > w[1]));
        assert!(*g.last().unwrap() > 0);
        assert_eq!(s.uniform_grid(10, 10).unwrap(), (1..=10).rev().collect::<Vec<_>>());
        assert!(s.uniform_grid(0, 0).unwrap().is_empty());
        assert!(s.uniform_grid(5, 6).is_err());
    }

    #[test]
    fn window_bounds() {
        let s = NoiseSchedule::default();
        let w = TimeWindow::new(941, 881, &s).unwrap();
        assert_eq!(w.delta_t(), 60);
        assert!(TimeWindow::new(881, 941, &s).is_err());
        assert!(TimeWindow::new(1001, 1000, &s).is_err());
        assert!(TimeWindow::new(10, 0, &s).is_err());
        assert_eq!(TimeWindow::new(1000, 1000, &s).unwrap().delta_t(), 0);
    }
}
