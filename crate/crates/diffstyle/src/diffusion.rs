//! The forward diffusion process: a linear beta schedule and the closed-form
//! noising operators built on its cumulative alpha products.
//!
//! With `beta_t` rising linearly from `beta_start` to `beta_end` over `T`
//! steps, `alpha_t = 1 - beta_t` and `alpha_bar_t = prod_{s<=t} alpha_s`, a
//! clean embedding `x0` noised to step `t` is
//!
//! ```text
//! x_t = sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise
//! ```
//!
//! The schedule itself is always computed in `f64`; only the final mixing
//! coefficients are narrowed to the embedding element type.

use std::io::Write;

use ndarray::{Array2, ArrayView2};
use thiserror::Error;

use crate::scalar::Scalar;

/// Default number of diffusion steps.
pub const DEFAULT_STEPS: usize = 2000;
/// Default first-step noise variance.
pub const DEFAULT_BETA_START: f64 = 1e-4;
/// Default last-step noise variance.
pub const DEFAULT_BETA_END: f64 = 0.02;

#[derive(Debug, Error)]
pub enum DiffusionError {
    #[error("schedule needs at least 1 step, got 0")]
    NoSteps,
    #[error("betas must satisfy 0 < start <= end < 1, got [{start}, {end}]")]
    BadBetaRange { start: f64, end: f64 },
    #[error("timestep {t} outside valid range {lo}..={hi}")]
    BadTimestep { t: usize, lo: usize, hi: usize },
    #[error("embedding shape {got:?} does not match noise shape {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
}

/// A precomputed noise schedule over timesteps `1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,      // betas[i] is beta_{i+1}
    alphas: Vec<f64>,     // 1 - beta
    alpha_bars: Vec<f64>, // length T+1 with alpha_bars[0] = 1
}

/// Build the linear schedule: `beta_t` interpolates from `beta_start` at
/// `t = 1` to `beta_end` at `t = T`, endpoints exact. A single-step schedule
/// (`steps == 1`) uses `beta_start` alone; it exists for the degenerate
/// one-call sampling path.
pub fn linear_schedule(
    steps: usize,
    beta_start: f64,
    beta_end: f64,
) -> Result<NoiseSchedule, DiffusionError> {
    if steps == 0 {
        return Err(DiffusionError::NoSteps);
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(DiffusionError::BadBetaRange {
            start: beta_start,
            end: beta_end,
        });
    }
    let betas: Vec<f64> = (1..=steps)
        .map(|t| {
            if steps == 1 {
                beta_start
            } else {
                // Lerp keeps both endpoints exact in floating point.
                let w = (t - 1) as f64 / (steps - 1) as f64;
                beta_start * (1.0 - w) + beta_end * w
            }
        })
        .collect();
    let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
    let mut alpha_bars = Vec::with_capacity(steps + 1);
    alpha_bars.push(1.0);
    for (t, &a) in alphas.iter().enumerate() {
        alpha_bars.push(alpha_bars[t] * a);
    }
    Ok(NoiseSchedule {
        betas,
        alphas,
        alpha_bars,
    })
}

impl NoiseSchedule {
    /// Number of steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t` for `t` in `1..=T`.
    ///
    /// # Panics
    /// On `t == 0` or `t > T`; timesteps are a programmer-facing index
    /// contract here, checked variants live on the array-valued operators.
    pub fn beta(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.steps(), "beta index {t} out of 1..={}", self.steps());
        self.betas[t - 1]
    }

    /// `alpha_t = 1 - beta_t` for `t` in `1..=T`.
    pub fn alpha(&self, t: usize) -> f64 {
        assert!(t >= 1 && t <= self.steps(), "alpha index {t} out of 1..={}", self.steps());
        self.alphas[t - 1]
    }

    /// Cumulative product `alpha_bar_t` for `t` in `0..=T`; `alpha_bar_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        assert!(t <= self.steps(), "alpha_bar index {t} out of 0..={}", self.steps());
        self.alpha_bars[t]
    }

    fn check_t(&self, t: usize, lo: usize, hi: usize) -> Result<(), DiffusionError> {
        if t < lo || t > hi {
            return Err(DiffusionError::BadTimestep { t, lo, hi });
        }
        Ok(())
    }

    fn check_shapes<F: Scalar>(
        x: &ArrayView2<F>,
        noise: &ArrayView2<F>,
    ) -> Result<(), DiffusionError> {
        if x.dim() != noise.dim() {
            return Err(DiffusionError::ShapeMismatch {
                expected: noise.dim(),
                got: x.dim(),
            });
        }
        Ok(())
    }

    /// Noise a clean embedding to step `t` in `1..=T` in closed form.
    pub fn q_sample<F: Scalar>(
        &self,
        x0: ArrayView2<F>,
        t: usize,
        noise: ArrayView2<F>,
    ) -> Result<Array2<F>, DiffusionError> {
        self.check_t(t, 1, self.steps())?;
        Self::check_shapes(&x0, &noise)?;
        let ab = self.alpha_bar(t);
        let c0 = F::from_f64(ab.sqrt());
        let c1 = F::from_f64((1.0 - ab).sqrt());
        Ok(&x0 * c0 + &noise * c1)
    }

    /// Re-noise a clean estimate down to step `t` in `0..T` during sampling.
    /// `t = 0` returns the estimate unchanged (no noise is mixed in), so the
    /// last sampling iteration hands back the clean prediction exactly.
    pub fn renoise_step<F: Scalar>(
        &self,
        x0_hat: ArrayView2<F>,
        t: usize,
        noise: ArrayView2<F>,
    ) -> Result<Array2<F>, DiffusionError> {
        self.check_t(t, 0, self.steps() - 1)?;
        Self::check_shapes(&x0_hat, &noise)?;
        if t == 0 {
            return Ok(x0_hat.to_owned());
        }
        self.q_sample(x0_hat, t, noise)
    }

    /// Dump `t,beta,alpha_bar` rows as CSV (with header) for inspection.
    pub fn write_table<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,beta,alpha_bar")?;
        for t in 1..=self.steps() {
            writeln!(w, "{},{},{}", t, self.beta(t), self.alpha_bar(t))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use ndarray::Array2;
    use rand::Rng as _;

    fn default_schedule() -> NoiseSchedule {
        linear_schedule(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).unwrap()
    }

    #[test]
    fn rejects_degenerate_parameters() {
        assert!(matches!(
            linear_schedule(0, 1e-4, 0.02),
            Err(DiffusionError::NoSteps)
        ));
        for (s, e) in [(0.0, 0.02), (-1e-4, 0.02), (0.03, 0.02), (1e-4, 1.0)] {
            assert!(matches!(
                linear_schedule(100, s, e),
                Err(DiffusionError::BadBetaRange { .. })
            ));
        }
    }

    #[test]
    fn endpoints_are_exact_and_betas_increase() {
        let s = default_schedule();
        assert_eq!(s.beta(1), DEFAULT_BETA_START);
        assert_eq!(s.beta(DEFAULT_STEPS), DEFAULT_BETA_END);
        for t in 2..=s.steps() {
            assert!(s.beta(t) > s.beta(t - 1), "beta not increasing at t={t}");
        }
    }

    #[test]
    fn alpha_bar_starts_at_one_and_strictly_decreases() {
        let s = default_schedule();
        assert_eq!(s.alpha_bar(0), 1.0);
        for t in 1..=s.steps() {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1), "not decreasing at t={t}");
            assert!(s.alpha_bar(t) > 0.0);
        }
    }

    /// The running product must match an independent compensated
    /// (double-double) product of the same alphas to 1e-12 relative error,
    /// and consecutive entries must satisfy the defining recurrence.
    #[test]
    fn alpha_bar_matches_high_precision_product() {
        let s = default_schedule();
        // Double-double multiply-accumulate: hi holds the product, lo the
        // rounding residue of every multiplication step.
        let (mut hi, mut lo) = (1.0f64, 0.0f64);
        for t in 1..=s.steps() {
            let a = s.alpha(t);
            let p = hi * a;
            let err = f64::mul_add(hi, a, -p); // exact fma residue
            hi = p;
            lo = lo * a + err;
            let reference = hi + lo;
            let rel = ((s.alpha_bar(t) - reference) / reference).abs();
            assert!(rel < 1e-12, "t={t}: rel err {rel}");
            let recur = s.alpha_bar(t - 1) * s.alpha(t);
            assert!(
                ((s.alpha_bar(t) - recur) / recur).abs() < 1e-12,
                "recurrence broken at t={t}"
            );
        }
    }

    /// The mixing weights preserve variance: c0^2 + c1^2 == 1 by definition.
    #[test]
    fn variance_preservation_identity() {
        let s = default_schedule();
        for t in 1..=s.steps() {
            let ab = s.alpha_bar(t);
            let sum = ab.sqrt().powi(2) + (1.0 - ab).sqrt().powi(2);
            assert!((sum - 1.0).abs() < 1e-12, "t={t}: {sum}");
        }
    }

    #[test]
    fn single_step_schedule_is_allowed() {
        let s = linear_schedule(1, 1e-4, 0.02).unwrap();
        assert_eq!(s.steps(), 1);
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.alpha_bar(1), 1.0 - 1e-4);
    }

    #[test]
    fn q_sample_matches_closed_form_by_hand() {
        let s = linear_schedule(10, 0.1, 0.3).unwrap();
        let x0 = Array2::from_shape_vec((1, 2), vec![1.0f64, -2.0]).unwrap();
        let noise = Array2::from_shape_vec((1, 2), vec![0.5f64, 0.25]).unwrap();
        let t = 3;
        let out = s.q_sample(x0.view(), t, noise.view()).unwrap();
        let ab = s.alpha_bar(t);
        for (o, (x, n)) in out.iter().zip(x0.iter().zip(noise.iter())) {
            let expect = ab.sqrt() * x + (1.0 - ab).sqrt() * n;
            assert!((o - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn q_sample_validates_t_and_shapes() {
        let s = linear_schedule(10, 0.1, 0.3).unwrap();
        let x = Array2::<f64>::zeros((2, 3));
        let n = Array2::<f64>::zeros((2, 3));
        assert!(matches!(
            s.q_sample(x.view(), 0, n.view()),
            Err(DiffusionError::BadTimestep { t: 0, .. })
        ));
        assert!(s.q_sample(x.view(), 11, n.view()).is_err());
        let bad = Array2::<f64>::zeros((3, 2));
        assert!(matches!(
            s.q_sample(bad.view(), 1, n.view()),
            Err(DiffusionError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn renoise_at_zero_is_identity_regardless_of_noise() {
        let s = linear_schedule(10, 0.1, 0.3).unwrap();
        let mut rng = derive_rng(5, "renoise", 0);
        let x: Array2<f64> = Array2::from_shape_fn((3, 4), |_| rng.random::<f64>() - 0.5);
        let n: Array2<f64> = Array2::from_shape_fn((3, 4), |_| rng.random::<f64>() * 100.0);
        let out = s.renoise_step(x.view(), 0, n.view()).unwrap();
        for (a, b) in out.iter().zip(x.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        // t = T is not a valid re-noising destination.
        assert!(s.renoise_step(x.view(), 10, n.view()).is_err());
        // Equivalence with q_sample elsewhere.
        let r = s.renoise_step(x.view(), 4, n.view()).unwrap();
        let q = s.q_sample(x.view(), 4, n.view()).unwrap();
        assert_eq!(r, q);
    }

    /// Monte-Carlo check of the q_sample moments at t = T/2: per-coordinate
    /// sample mean within 3 standard errors of sqrt(alpha_bar) * x0 and the
    /// pooled variance within 3 standard errors of (1 - alpha_bar). Seeded,
    /// so the 3-sigma band is checked once, not per run.
    #[test]
    fn q_sample_monte_carlo_moments() {
        let s = default_schedule();
        let t = s.steps() / 2;
        let d = 8;
        let draws = 10_000;
        let x0 = Array2::from_shape_vec(
            (1, d),
            vec![0.8, -0.6, 0.25, -1.2, 0.0, 1.5, -0.33, 0.9],
        )
        .unwrap();
        let ab = s.alpha_bar(t);
        let mut rng = derive_rng(2024, "mc-moments", 0);
        let mut sum = vec![0.0f64; d];
        let mut sumsq_dev = 0.0f64; // pooled squared deviation from the true mean
        for _ in 0..draws {
            let noise = Array2::from_shape_fn((1, d), |_| f64::standard_normal(&mut rng));
            let xt = s.q_sample(x0.view(), t, noise.view()).unwrap();
            for (j, v) in xt.iter().enumerate() {
                sum[j] += v;
                let dev = v - ab.sqrt() * x0[[0, j]];
                sumsq_dev += dev * dev;
            }
        }
        let var_true = 1.0 - ab;
        let mean_se = (var_true / draws as f64).sqrt();
        for (j, sj) in sum.iter().enumerate() {
            let mean = sj / draws as f64;
            let expect = ab.sqrt() * x0[[0, j]];
            assert!(
                (mean - expect).abs() < 3.0 * mean_se,
                "coord {j}: mean {mean} vs {expect} (se {mean_se})"
            );
        }
        // Variance of the pooled estimator: chi-square with d*draws dof,
        // sd of the variance estimate = var_true * sqrt(2 / dof).
        let n_pooled = (d * draws) as f64;
        let var_hat = sumsq_dev / n_pooled;
        let var_se = var_true * (2.0 / n_pooled).sqrt();
        assert!(
            (var_hat - var_true).abs() < 3.0 * var_se,
            "variance {var_hat} vs {var_true} (se {var_se})"
        );
    }

    #[test]
    fn table_dump_has_header_and_all_rows() {
        let s = linear_schedule(5, 0.1, 0.3).unwrap();
        let mut buf = Vec::new();
        s.write_table(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 6);
        assert_eq!(lines[0], "t,beta,alpha_bar");
        assert!(lines[1].starts_with("1,0.1,"));
    }
}
