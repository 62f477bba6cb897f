//! Discrete noise schedule and the closed-form forward kernels.
//!
//! Timesteps are 1-indexed: `t = 1..=T` are noisy levels and `t = 0` is clean
//! data, for which `alpha_bar(0) = 1`.

use ndarray::{Array, ArrayBase, Data, Dimension, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Result, VmcError};

/// Linear-beta schedule tables. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleJson", into = "ScheduleJson")]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

/// On-disk form: only the betas; every derived table is recomputed on load.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ScheduleJson {
    #[serde(rename = "T")]
    steps: usize,
    beta: Vec<f64>,
}

impl NoiseSchedule {
    /// Betas interpolated linearly from `beta_start` to `beta_end` over `steps` entries.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps < 2 {
            return Err(VmcError::InvalidRange(format!(
                "schedule needs T >= 2, got {steps}"
            )));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(VmcError::InvalidRange(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
            )));
        }
        let span = (steps - 1) as f64;
        let betas = (0..steps)
            .map(|i| beta_start + (beta_end - beta_start) * i as f64 / span)
            .collect();
        Self::from_betas(betas)
    }

    /// The keyframe-model schedule used throughout the crate.
    pub fn toy() -> Self {
        Self::linear(TOY_STEPS, TOY_BETA_START, TOY_BETA_END).expect("toy schedule constants")
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.len() < 2 {
            return Err(VmcError::InvalidRange("schedule needs T >= 2".into()));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(VmcError::InvalidRange("every beta must lie in (0,1)".into()));
        }
        let steps = betas.len();
        let mut beta = Vec::with_capacity(steps + 1);
        beta.push(0.0);
        beta.extend(betas);
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = vec![1.0; steps + 1];
        for t in 1..=steps {
            alpha_bar[t] = alpha_bar[t - 1] * alpha[t];
        }
        let mut beta_tilde = vec![0.0; steps + 1];
        for t in 2..=steps {
            beta_tilde[t] = (1.0 - alpha_bar[t - 1]) / (1.0 - alpha_bar[t]) * beta[t];
        }
        Ok(Self {
            beta,
            alpha,
            alpha_bar,
            beta_tilde,
        })
    }

    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(VmcError::TimestepOutOfRange {
                t,
                max: self.steps(),
            })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t]
    }

    /// Cumulative product of alphas; `alpha_bar(0) == 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    /// Posterior variance coefficient, defined as 0 at `t = 1`.
    pub fn beta_tilde(&self, t: usize) -> f64 {
        self.beta_tilde[t]
    }

    /// Mean scale and per-coordinate variance of the frame-residual kernel
    /// `p(dv_t | dv_0)`.
    pub fn residual_kernel_params(&self, t: usize) -> Result<(f64, f64)> {
        self.check_t(t)?;
        let ab = self.alpha_bar[t];
        Ok((ab.sqrt(), 2.0 * (1.0 - ab)))
    }

    /// `sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps`, elementwise.
    pub fn forward_sample<S1, S2, D>(
        &self,
        x0: &ArrayBase<S1, D>,
        t: usize,
        eps: &ArrayBase<S2, D>,
    ) -> Result<Array<f64, D>>
    where
        S1: Data<Elem = f64>,
        S2: Data<Elem = f64>,
        D: Dimension,
    {
        self.check_t(t)?;
        if x0.shape() != eps.shape() {
            return Err(VmcError::shape(
                format!("{:?}", x0.shape()),
                format!("{:?}", eps.shape()),
            ));
        }
        let a = self.alpha_bar[t].sqrt();
        let b = (1.0 - self.alpha_bar[t]).sqrt();
        Ok(Zip::from(x0)
            .and(eps)
            .map_collect(|&x, &e| a * x + b * e))
    }

    /// Score parameterization `-eps / sqrt(1 - alpha_bar_t)`.
    pub fn score_from_epsilon<S, D>(
        &self,
        eps_pred: &ArrayBase<S, D>,
        t: usize,
    ) -> Result<Array<f64, D>>
    where
        S: Data<Elem = f64>,
        D: Dimension,
    {
        self.check_t(t)?;
        let scale = -1.0 / (1.0 - self.alpha_bar[t]).sqrt();
        Ok(eps_pred.mapv(|e| e * scale))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl From<NoiseSchedule> for ScheduleJson {
    fn from(s: NoiseSchedule) -> Self {
        Self {
            steps: s.steps(),
            beta: s.beta[1..].to_vec(),
        }
    }
}

impl TryFrom<ScheduleJson> for NoiseSchedule {
    type Error = VmcError;

    fn try_from(raw: ScheduleJson) -> Result<Self> {
        if raw.steps != raw.beta.len() {
            return Err(VmcError::Config(format!(
                "schedule header says T={} but lists {} betas",
                raw.steps,
                raw.beta.len()
            )));
        }
        Self::from_betas(raw.beta)
    }
}

pub const TOY_STEPS: usize = 100;
pub const TOY_BETA_START: f64 = 1e-4;
pub const TOY_BETA_END: f64 = 0.02;

/// `count` timesteps spread uniformly over `[1, T]`, ascending, always
/// including both ends when `count >= 2`.
pub fn step_grid(total: usize, count: usize) -> Result<Vec<usize>> {
    if count == 0 || count > total {
        return Err(VmcError::Config(format!(
            "step count must be in 1..={total}, got {count}"
        )));
    }
    if count == 1 {
        return Ok(vec![total]);
    }
    let span = (total - 1) as f64 / (count - 1) as f64;
    Ok((0..count)
        .map(|i| 1 + (i as f64 * span).round() as usize)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn two_step_half_schedule() {
        let s = NoiseSchedule::linear(2, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar(1), 0.5);
        assert_eq!(s.alpha_bar(2), 0.25);
        assert_eq!(s.beta_tilde(1), 0.0);
        // (1 - 0.5) / (1 - 0.25) * 0.5
        assert!((s.beta_tilde(2) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_ranges() {
        assert!(NoiseSchedule::linear(1, 0.1, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.0, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.3, 0.2).is_err());
        assert!(NoiseSchedule::linear(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn hundred_step_schedule_product() {
        let s = NoiseSchedule::linear(100, 1e-4, 0.02).unwrap();
        let mut prod = 1.0;
        for i in 0..100 {
            let beta = 1e-4 + (0.02 - 1e-4) * i as f64 / 99.0;
            prod *= 1.0 - beta;
            assert!((s.alpha_bar(i + 1) - prod).abs() < 1e-15);
            assert_eq!(s.alpha(i + 1), 1.0 - s.beta(i + 1));
        }
        for t in 1..100 {
            assert!(s.alpha_bar(t) > s.alpha_bar(t + 1));
        }
        assert!(s.alpha_bar(100) > 0.0 && s.alpha_bar(100) < 0.5);
    }

    #[test]
    fn forward_sample_degenerate_inputs() {
        let s = NoiseSchedule::toy();
        let x0 = arr1(&[0.3, -0.7, 1.2]);
        let zero = Array1::<f64>::zeros(3);
        let t = 40;
        let a = s.alpha_bar(t).sqrt();
        let b = (1.0 - s.alpha_bar(t)).sqrt();
        assert_eq!(s.forward_sample(&x0, t, &zero).unwrap(), x0.mapv(|v| a * v));
        assert_eq!(s.forward_sample(&zero, t, &x0).unwrap(), x0.mapv(|v| b * v));
        assert!(s.forward_sample(&x0, t, &arr1(&[1.0])).is_err());
        assert!(s.forward_sample(&x0, 0, &zero).is_err());
        assert!(s.forward_sample(&x0, 101, &zero).is_err());
    }

    #[test]
    fn forward_sample_marginal_monte_carlo() {
        let s = NoiseSchedule::toy();
        let x0 = arr1(&[0.8, -0.4]);
        let t = 60;
        let draws = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut sum = [0.0; 2];
        let mut sq = [0.0; 2];
        for _ in 0..draws {
            let eps = Array1::from_shape_fn(2, |_| StandardNormal.sample(&mut rng));
            let x = s.forward_sample(&x0, t, &eps).unwrap();
            for k in 0..2 {
                sum[k] += x[k];
                sq[k] += x[k] * x[k];
            }
        }
        let var_true = 1.0 - s.alpha_bar(t);
        for k in 0..2 {
            let mean = sum[k] / draws as f64;
            let var = sq[k] / draws as f64 - mean * mean;
            let sigma_mean = (var_true / draws as f64).sqrt();
            assert!((mean - s.alpha_bar(t).sqrt() * x0[k]).abs() < 4.0 * sigma_mean);
            assert!((var / var_true - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn residual_kernel_limits() {
        let s = NoiseSchedule::toy();
        let (scale, var) = s.residual_kernel_params(1).unwrap();
        assert!((scale - s.alpha_bar(1).sqrt()).abs() < 1e-15);
        assert!((var - 2.0 * s.beta(1)).abs() < 1e-15);
        assert!(s.residual_kernel_params(0).is_err());
        // A schedule whose deepest level is essentially pure noise.
        let deep = NoiseSchedule::linear(1000, 1e-4, 0.02).unwrap();
        let (_, var) = deep.residual_kernel_params(1000).unwrap();
        assert!((var - 2.0).abs() < 1e-3);
    }

    #[test]
    fn score_parameterization() {
        let s = NoiseSchedule::from_betas(vec![0.25, 0.5]).unwrap();
        // alpha_bar(1) = 0.75, so sqrt(1 - 0.75) = 0.5
        let e1 = arr1(&[1.0, 0.0, 0.0]);
        assert_eq!(s.score_from_epsilon(&e1, 1).unwrap(), arr1(&[-2.0, 0.0, 0.0]));
        let zero = Array1::<f64>::zeros(3);
        assert_eq!(s.score_from_epsilon(&zero, 1).unwrap(), zero);
    }

    #[test]
    fn json_round_trip_recomputes_tables() {
        let s = NoiseSchedule::toy();
        let text = s.to_json().unwrap();
        assert!(!text.contains("alpha"));
        let back = NoiseSchedule::from_json(&text).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn grid_spans_range() {
        assert_eq!(step_grid(100, 50).unwrap().first(), Some(&1));
        assert_eq!(step_grid(100, 50).unwrap().last(), Some(&100));
        assert_eq!(step_grid(10, 10).unwrap(), (1..=10).collect::<Vec<_>>());
        let g = step_grid(100, 50).unwrap();
        assert!(g.windows(2).all(|w| w[0] < w[1]));
        assert!(step_grid(100, 0).is_err());
        assert!(step_grid(100, 101).is_err());
    }
}
