//! Closed-form flat-band conductivities and metric averages, in units of
//! `sigma0 = e^2 a / h` with `t = a = 1`.
//!
//! Spacings between surviving B atoms are modelled by the continuous density
//! `P_y(m) = y exp(-y m)` unless a [`Spacing::Discrete`] geometric law is asked for.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flatband::metric_sl;
use crate::lattice::{DisorderMode, LatticeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub y: Option<f64>,
    pub alpha: Option<f64>,
    pub value: f64,
    /// Regime in which the formula holds.
    pub validity: String,
}

fn check_y(y: f64) -> Result<()> {
    if y > 0.0 && y <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("survivor density must lie in (0, 1], got {y}")))
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha == 0.0 || !alpha.is_finite() {
        Err(Error::Domain(format!(
            "alpha = {alpha} is singular for the stub lattice; at alpha = 0 the B atoms \
             decouple and the chain is a pure Drude conductor (see drude_chain)"
        )))
    } else {
        Ok(())
    }
}

/// Mean sawtooth metric: `1/(6 y^2)` for random vacancies, `1/(12 y^2)` for a
/// superlattice.
pub fn qm_avg_sc(y: f64, mode: DisorderMode) -> Result<f64> {
    check_y(y)?;
    Ok(match mode {
        DisorderMode::Random => 1.0 / (6.0 * y * y),
        DisorderMode::Superlattice => 1.0 / (12.0 * y * y),
    })
}

/// `sigma = 2 y <g>`: `1/(3y)` random, `1/(6y)` superlattice.
pub fn sigma_sc(y: f64, mode: DisorderMode) -> Result<f64> {
    Ok(2.0 * y * qm_avg_sc(y, mode)?)
}

/// Clean sawtooth, `2/(3 sqrt 3)`.
pub fn sigma_sc_clean() -> f64 {
    2.0 / (3.0 * 3f64.sqrt())
}

/// Clean stub, `1/(|alpha| sqrt(4 + alpha^2))`.
pub fn sigma_sl_clean(alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(1.0 / (alpha.abs() * (4.0 + alpha * alpha).sqrt()))
}

/// Metric of the clean flat-band Bloch state at momentum `k`.
pub fn metric_clean(kind: LatticeKind, k: f64, alpha: f64) -> Result<f64> {
    match kind {
        LatticeKind::Sawtooth => Ok(1.0 / (2.0 * (2.0 + k.cos()).powi(2))),
        LatticeKind::Stub => {
            check_alpha(alpha)?;
            let a2 = alpha * alpha;
            let d = 1.0 + 4.0 * (0.5 * k).cos().powi(2) / a2;
            Ok((0.5 * k).sin().powi(2) / (a2 * d * d))
        }
    }
}

/// `I_np = int_0^inf y e^{-y x} x^n / (x alpha^2 + 2)^p dx` for `n <= 3`,
/// `p <= 2`, to relative accuracy `1e-8`.
pub fn i_np(alpha: f64, y: f64, n: u32, p: u32) -> Result<f64> {
    if n > 3 || p > 2 {
        return Err(Error::Domain(format!("I_np defined for n <= 3, p <= 2; got n={n}, p={p}")));
    }
    if !(y > 0.0 && y.is_finite()) {
        return Err(Error::Domain(format!("y must be positive, got {y}")));
    }
    if p == 0 {
        return Ok((1..=n).map(f64::from).product::<f64>() / y.powi(n as i32));
    }
    // u = y x, then u = s/(1 - s) onto [0, 1).
    let c = alpha * alpha / y;
    let f = |s: f64| {
        if s >= 1.0 {
            return 0.0;
        }
        let u = s / (1.0 - s);
        if u > 745.0 {
            return 0.0;
        }
        (-u).exp() * u.powi(n as i32) / (c * u + 2.0).powi(p as i32) / ((1.0 - s) * (1.0 - s))
    };
    let rough = quadrature::integrate(f, 0.0, 1.0, 1e-10).integral.abs();
    let out = quadrature::integrate(f, 0.0, 1.0, 1e-11 * rough.max(f64::MIN_POSITIVE));
    if !(out.error_estimate <= 1e-8 * out.integral.abs()) {
        return Err(Error::Quadrature {
            integral: out.integral,
            error_estimate: out.error_estimate,
        });
    }
    Ok(out.integral / y.powi(n as i32))
}

/// Which closed form to use for the stub per-state metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SlForm {
    /// Position variance of the normalized state, [`metric_sl`].
    #[default]
    Exact,
    /// The f-coefficient form with `f1 = 1 + alpha^2/6` and mean position
    /// `(m/2)(1 - alpha^2/D)`. It overestimates the exact metric by
    /// `(m+1)^2/4 - m^2/4` at `alpha = 0`.
    Published,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Spacing {
    #[default]
    Continuous,
    /// Geometric law `P(m) = y (1-y)^(m-1)`, `m >= 1`.
    Discrete,
}

/// Published stub metric for a segment of length `m`.
pub fn metric_sl_published(m: f64, alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let d = m * a2 + 2.0;
    let poly = ((a2 / 3.0 * m + (1.0 - 0.5 * a2)) * m + (1.0 + a2 / 6.0)) * m + 0.5;
    poly / d - 0.25 * m * m * (1.0 - a2 / d).powi(2)
}

fn metric_of(form: SlForm) -> fn(f64, f64) -> f64 {
    match form {
        SlForm::Exact => metric_sl,
        SlForm::Published => metric_sl_published,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlPrediction {
    pub value: f64,
    pub mean_metric: f64,
    /// Limiting formula when `alpha^2 <= y/10` or `alpha^2 >= 10 y`.
    pub limit: Option<Prediction>,
}

/// Stub flat-band conductivity `2 y <g>` with the spacing average done by
/// quadrature (random) or at `m = 1/y` (superlattice).
pub fn sigma_sl(alpha: f64, y: f64, mode: DisorderMode, form: SlForm, spacing: Spacing) -> Result<SlPrediction> {
    check_alpha(alpha)?;
    if !(y > 0.0 && y < 1.0) {
        return Err(Error::Domain(format!("y must lie in (0, 1), got {y}")));
    }
    let a2 = alpha * alpha;
    let g = match (mode, spacing) {
        (DisorderMode::Superlattice, _) => metric_of(form)(1.0 / y, alpha),
        (DisorderMode::Random, Spacing::Continuous) => match form {
            SlForm::Exact => {
                let (i11, i21, i31) = (i_np(alpha, y, 1, 1)?, i_np(alpha, y, 2, 1)?, i_np(alpha, y, 3, 1)?);
                0.5 * i21 + a2 / 12.0 * (i31 - i11)
            }
            SlForm::Published => {
                let f = [0.5, 1.0 + a2 / 6.0, 1.0 - 0.5 * a2, a2 / 3.0];
                let mut acc = 0.0;
                for (n, fi) in f.iter().enumerate() {
                    acc += fi * i_np(alpha, y, n as u32, 1)?;
                }
                // (m^2/4)(1 - a2/D)^2 with 1/D = 1/(m a2 + 2).
                acc - 0.25 * (i_np(alpha, y, 2, 0)? - 2.0 * a2 * i_np(alpha, y, 2, 1)? + a2 * a2 * i_np(alpha, y, 2, 2)?)
            }
        },
        (DisorderMode::Random, Spacing::Discrete) => {
            let metric = metric_of(form);
            let q = 1.0 - y;
            let mut acc = 0.0;
            let mut w = y;
            let mut m = 1.0;
            while w > 1e-18 * y || m < 10.0 {
                acc += w * metric(m, alpha);
                w *= q;
                m += 1.0;
            }
            acc
        }
    };
    let limit = sl_limit(alpha, y, mode, form);
    Ok(SlPrediction {
        value: 2.0 * y * g,
        mean_metric: g,
        limit,
    })
}

fn sl_limit(alpha: f64, y: f64, mode: DisorderMode, form: SlForm) -> Option<Prediction> {
    let a2 = alpha * alpha;
    let (label, value, validity) = if a2 >= 10.0 * y {
        match mode {
            DisorderMode::Random => ("sl_large_alpha", 1.0 / (3.0 * y), "alpha^2 >> y"),
            DisorderMode::Superlattice => ("sl_ordered_large_alpha", 1.0 / (6.0 * y), "alpha^2 >> y"),
        }
    } else if a2 <= 0.1 * y {
        match (mode, form) {
            (DisorderMode::Random, SlForm::Exact) => ("sl_small_alpha", 1.0 / y, "alpha^2 << y"),
            (DisorderMode::Random, SlForm::Published) => ("sl_small_alpha", (1.0 + y) / y, "alpha^2 << y"),
            (DisorderMode::Superlattice, SlForm::Exact) => ("sl_ordered_small_alpha", 0.5 / y, "alpha^2 << y"),
            (DisorderMode::Superlattice, SlForm::Published) => {
                ("sl_ordered_small_alpha", (1.0 + y).powi(2) / (2.0 * y), "alpha^2 << y")
            }
        }
    } else {
        return None;
    };
    Some(Prediction {
        label: label.to_string(),
        y: Some(y),
        alpha: Some(alpha),
        value,
        validity: validity.to_string(),
    })
}

/// Drude conductivity of the bare chain, `sqrt(4 - E^2) / (2 eta)`.
pub fn drude_chain(energy: f64, eta: f64) -> Result<f64> {
    if energy.abs() >= 2.0 {
        return Err(Error::Domain(format!("E = {energy} lies outside the band (-2, 2)")));
    }
    if !(eta > 0.0) {
        return Err(Error::Domain(format!("eta must be positive, got {eta}")));
    }
    Ok((4.0 - energy * energy).sqrt() / (2.0 * eta))
}

const MC_CHUNK: usize = 1 << 16;

/// Monte-Carlo mean and standard error of `metric_fn(m)` for `m ~ y e^{-y m}`.
///
/// Samples are drawn in fixed chunks with one stream per chunk, so the result
/// does not depend on the thread count.
pub fn poisson_mc_average<F>(metric_fn: F, y: f64, samples: usize, seed: u64) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64 + Sync,
{
    if samples < 1000 {
        return Err(Error::Domain(format!("need at least 1000 samples, got {samples}")));
    }
    let exp = Exp::new(y).map_err(|e| Error::Domain(format!("invalid y = {y}: {e}")))?;
    let chunks = samples.div_ceil(MC_CHUNK);
    let partial: Vec<(f64, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = MC_CHUNK.min(samples - c * MC_CHUNK);
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let v = metric_fn(exp.sample(&mut rng));
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = partial.iter().fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
    let n = samples as f64;
    let mean = s / n;
    let var = ((s2 / n - mean * mean) * n / (n - 1.0)).max(0.0);
    Ok((mean, (var / n).sqrt()))
}

/// Analytic overlay values for a sweep point.
pub fn overlay(kind: LatticeKind, y: f64, alpha: f64) -> Vec<Prediction> {
    let mut out = Vec::new();
    let mut push = |label: &str, value: Result<f64>, validity: &str| {
        if let Ok(value) = value {
            out.push(Prediction {
                label: label.to_string(),
                y: Some(y),
                alpha: Some(alpha),
                value,
                validity: validity.to_string(),
            });
        }
    };
    match kind {
        LatticeKind::Sawtooth => {
            push("sc_random", sigma_sc(y, DisorderMode::Random), "y << 1");
            push("sc_ordered", sigma_sc(y, DisorderMode::Superlattice), "y << 1");
            push("sc_clean", Ok(sigma_sc_clean()), "y = 1");
        }
        LatticeKind::Stub => {
            push("sl_clean", sigma_sl_clean(alpha), "y = 1");
            if y < 1.0 {
                for (label, mode) in [("sl_random", DisorderMode::Random), ("sl_ordered", DisorderMode::Superlattice)] {
                    if let Ok(p) = sigma_sl(alpha, y, mode, SlForm::Exact, Spacing::Continuous) {
                        push(label, Ok(p.value), "alpha^2 >~ y");
                    }
                }
                push("sl_small_alpha", Ok((1.0 + y) / y), "alpha^2 << y");
                push("sl_large_alpha", Ok(1.0 / (3.0 * y)), "alpha^2 >> y");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flatband::metric_sc;
    use std::f64::consts::PI;

    #[test]
    fn sawtooth_values() {
        assert!((qm_avg_sc(0.1, DisorderMode::Random).unwrap() - 16.666_666_666_7).abs() < 1e-9);
        assert!((qm_avg_sc(0.1, DisorderMode::Superlattice).unwrap() - 8.333_333_333_3).abs() < 1e-9);
        for y in [0.01, 0.2, 0.77] {
            let r = qm_avg_sc(y, DisorderMode::Superlattice).unwrap() / qm_avg_sc(y, DisorderMode::Random).unwrap();
            assert!((r - 0.5).abs() < 1e-15);
        }
        assert!((sigma_sc(0.1, DisorderMode::Random).unwrap() - 3.333_333).abs() < 1e-6);
        assert!((sigma_sc_clean() - 0.384_900_179).abs() < 1e-9);
        let r = sigma_sc(1.0, DisorderMode::Random).unwrap() / sigma_sc_clean();
        assert!((r - 0.866).abs() < 1e-3);
        assert!(qm_avg_sc(0.0, DisorderMode::Random).is_err());
        assert!(qm_avg_sc(-0.1, DisorderMode::Random).is_err());
    }

    #[test]
    fn clean_stub_values() {
        assert!((sigma_sl_clean(1.0).unwrap() - 0.447_213_6).abs() < 1e-7);
        assert!((sigma_sl_clean(0.5).unwrap() - 0.970_142_5).abs() < 1e-7);
        assert!((sigma_sl_clean(2.0).unwrap() - 0.176_776_7).abs() < 1e-7);
        assert!(sigma_sl_clean(0.0).unwrap_err().to_string().contains("drude_chain"));
        assert!(metric_clean(LatticeKind::Stub, 0.3, 0.0).is_err());
    }

    fn k_average(kind: LatticeKind, alpha: f64) -> f64 {
        let out = quadrature::integrate(|k| metric_clean(kind, k, alpha).unwrap(), -PI, PI, 1e-12);
        out.integral / (2.0 * PI)
    }

    #[test]
    fn clean_metric_averages() {
        assert!((k_average(LatticeKind::Sawtooth, 0.0) - 1.0 / (3.0 * 3f64.sqrt())).abs() < 1e-6);
        for alpha in [0.3, 1.0, 2.5] {
            let want = 0.5 * sigma_sl_clean(alpha).unwrap();
            assert!((k_average(LatticeKind::Stub, alpha) - want).abs() < 1e-9);
        }
        assert!((metric_clean(LatticeKind::Sawtooth, 0.0, 0.0).unwrap() - 1.0 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn i_np_moments() {
        for (alpha, y) in [(0.3, 0.05), (1.0, 0.1), (2.0, 0.7)] {
            assert!((i_np(alpha, y, 0, 0).unwrap() - 1.0).abs() < 1e-15);
            assert!((i_np(alpha, y, 3, 0).unwrap() * y.powi(3) - 6.0).abs() < 1e-12);
            // alpha = 0 reduces the denominator to 2^p.
            assert!((i_np(0.0, y, 2, 2).unwrap() - 2.0 / (4.0 * y * y)).abs() < 1e-8 * 2.0 / (4.0 * y * y));
        }
        assert!(i_np(1.0, 0.1, 4, 1).is_err());
        assert!(i_np(1.0, 0.1, 1, 3).is_err());
        assert!(i_np(1.0, 0.0, 1, 1).is_err());
    }

    #[test]
    fn i_np_closed_form_p1() {
        // int y e^{-yx} / (x + 2) dx = y e^{2y} E1(2y) with alpha = 1; check via
        // the recurrence I_{n+1,1} = (I_{n,0} - 2 I_{n,1}) / alpha^2.
        let (alpha, y) = (1.3, 0.2);
        let a2 = alpha * alpha;
        for n in 0..3 {
            let lhs = i_np(alpha, y, n + 1, 1).unwrap();
            let rhs = (i_np(alpha, y, n, 0).unwrap() - 2.0 * i_np(alpha, y, n, 1).unwrap()) / a2;
            assert!((lhs / rhs - 1.0).abs() < 1e-8, "n={n}");
        }
    }

    #[test]
    fn i_np_matches_monte_carlo() {
        for alpha in [0.3, 1.0, 2.0] {
            for y in [0.05, 0.1, 0.3] {
                let a2 = alpha * alpha;
                let (mean, err) =
                    poisson_mc_average(|m| m / (m * a2 + 2.0).powi(2), y, 400_000, 11).unwrap();
                let q = i_np(alpha, y, 1, 2).unwrap();
                assert!((mean - q).abs() < 3.0 * err, "alpha={alpha} y={y}: {mean}±{err} vs {q}");
            }
        }
    }

    #[test]
    fn i_12_against_ten_million_samples() {
        let (mean, err) = poisson_mc_average(|m| m / (m + 2.0).powi(2), 0.1, 10_000_000, 5).unwrap();
        let q = i_np(1.0, 0.1, 1, 2).unwrap();
        assert!((mean - q).abs() < 3.0 * err);
    }

    #[test]
    fn exact_form_is_the_variance() {
        for alpha in [0.1, 0.7, 2.0] {
            for m in [1.0, 2.0, 5.0, 30.0] {
                let a2: f64 = alpha * alpha;
                let d = m * a2 + 2.0;
                let poly = ((a2 / 3.0 * m + (1.0 - 0.5 * a2)) * m + (a2 / 6.0 - 1.0)) * m + 0.5;
                let mean = (0.5 * a2 * m * m + (1.0 - 0.5 * a2) * m - 1.0) / d;
                let want = poly / d - mean * mean;
                assert!((metric_sl(m, alpha) - want).abs() < 1e-10 * want.max(1.0));
            }
        }
        // Published form at alpha = 0 is (m+1)^2/4.
        assert!((metric_sl_published(7.0, 0.0) - 16.0).abs() < 1e-12);
        assert!((metric_sl(7.0, 0.0) - 49.0 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn stub_large_alpha_limit() {
        let p = sigma_sl(1.0, 0.01, DisorderMode::Random, SlForm::Exact, Spacing::Continuous).unwrap();
        assert!((p.value * 0.03 - 1.0).abs() < 0.05, "{}", p.value);
        assert_eq!(p.limit.unwrap().label, "sl_large_alpha");
        for form in [SlForm::Exact, SlForm::Published] {
            for y in [0.01, 0.005] {
                let v = sigma_sl(1.0, y, DisorderMode::Random, form, Spacing::Continuous).unwrap().value;
                assert!((v * 3.0 * y - 1.0).abs() <= 0.05, "{form:?} y={y}: {v}");
            }
        }
    }

    #[test]
    fn stub_small_alpha_limit() {
        let y = 0.1;
        let published = sigma_sl(0.01, y, DisorderMode::Random, SlForm::Published, Spacing::Continuous).unwrap();
        assert!((published.value / 11.0 - 1.0).abs() < 0.01, "{}", published.value);
        let exact = sigma_sl(0.01, y, DisorderMode::Random, SlForm::Exact, Spacing::Continuous).unwrap();
        assert!((exact.value / 10.0 - 1.0).abs() < 0.01, "{}", exact.value);
        for y in [0.05, 0.1, 0.3] {
            let alpha = (y / 100.0f64).sqrt();
            let v = sigma_sl(alpha, y, DisorderMode::Random, SlForm::Published, Spacing::Continuous).unwrap().value;
            assert!((v * y / (1.0 + y) - 1.0).abs() <= 0.05);
        }
    }

    #[test]
    fn superlattice_limits() {
        let y = 0.1;
        let big = sigma_sl(3.0, y, DisorderMode::Superlattice, SlForm::Exact, Spacing::Continuous).unwrap();
        assert!((big.value * 6.0 * y - 1.0).abs() < 0.05, "{}", big.value);
        let small = sigma_sl(0.01, y, DisorderMode::Superlattice, SlForm::Exact, Spacing::Continuous).unwrap();
        assert!((small.value * 2.0 * y - 1.0).abs() < 0.01, "{}", small.value);
    }

    #[test]
    fn quadrature_matches_direct_average() {
        for form in [SlForm::Exact, SlForm::Published] {
            let (alpha, y) = (0.6, 0.15);
            let metric = metric_of(form);
            let direct = quadrature::integrate(
                |s: f64| {
                    if s >= 1.0 {
                        return 0.0;
                    }
                    let m = s / (1.0 - s);
                    y * (-y * m).exp() * metric(m, alpha) / ((1.0 - s) * (1.0 - s))
                },
                0.0,
                1.0,
                1e-12,
            )
            .integral;
            let p = sigma_sl(alpha, y, DisorderMode::Random, form, Spacing::Continuous).unwrap();
            assert!((p.mean_metric / direct - 1.0).abs() < 1e-8, "{form:?}");
        }
    }

    #[test]
    fn discrete_spacing_is_close_in_dilute_limit() {
        let c = sigma_sl(1.0, 0.02, DisorderMode::Random, SlForm::Exact, Spacing::Continuous).unwrap().value;
        let d = sigma_sl(1.0, 0.02, DisorderMode::Random, SlForm::Exact, Spacing::Discrete).unwrap().value;
        assert!((c / d - 1.0).abs() < 0.05);
        // Geometric law with m^2/12 summed exactly: (2 - y) / (12 y^2).
        let y: f64 = 0.2;
        let mut acc = 0.0;
        for m in 1..2000 {
            acc += y * (1.0 - y).powi(m - 1) * (m * m) as f64 / 12.0;
        }
        assert!((acc - (2.0 - y) / (12.0 * y * y)).abs() < 1e-10);
    }

    #[test]
    fn drude_values() {
        assert!((drude_chain(0.0, 0.05).unwrap() - 20.0).abs() < 1e-12);
        assert!((drude_chain(3f64.sqrt(), 0.1).unwrap() - 5.0).abs() < 1e-12);
        assert!(drude_chain(2.0 - 1e-12, 0.05).unwrap() < 1e-4);
        assert!(drude_chain(2.0, 0.05).is_err());
        assert!(drude_chain(0.0, 0.0).is_err());
    }

    #[test]
    fn poisson_mc_examples() {
        let (mean, err) = poisson_mc_average(|m| m * m / 12.0, 0.05, 1_000_000, 1).unwrap();
        assert!((mean - 1.0 / (6.0 * 0.0025)).abs() < 3.0 * err);
        assert_eq!(poisson_mc_average(|_| 2.5, 0.3, 5000, 1).unwrap(), (2.5, 0.0));
        let (mean, err) = poisson_mc_average(|m| m, 0.1, 100_000, 2).unwrap();
        assert!((mean - 10.0).abs() < 3.0 * err);
        assert!(poisson_mc_average(|m| m, 0.1, 10, 2).is_err());
        // Sawtooth per-state metric averages to the same leading order.
        let (mean, _) = poisson_mc_average(|m| metric_sc(m.round() as usize), 0.02, 200_000, 3).unwrap();
        assert!((mean * 6.0 * 0.0004 - 1.0).abs() < 0.05);
    }

    #[test]
    fn predictions_decrease_with_y() {
        let ys: Vec<f64> = (0..50).map(|i| 0.01 + 0.49 * i as f64 / 49.0).collect();
        let series: Vec<Box<dyn Fn(f64) -> f64>> = vec![
            Box::new(|y| sigma_sc(y, DisorderMode::Random).unwrap()),
            Box::new(|y| sigma_sc(y, DisorderMode::Superlattice).unwrap()),
            Box::new(|y| sigma_sl(0.3, y, DisorderMode::Random, SlForm::Exact, Spacing::Continuous).unwrap().value),
            Box::new(|y| sigma_sl(1.0, y, DisorderMode::Random, SlForm::Published, Spacing::Continuous).unwrap().value),
            Box::new(|y| sigma_sl(2.0, y, DisorderMode::Superlattice, SlForm::Exact, Spacing::Continuous).unwrap().value),
        ];
        for f in &series {
            let v: Vec<f64> = ys.iter().map(|&y| f(y)).collect();
            assert!(v.iter().all(|&x| x > 0.0 && x.is_finite()));
            assert!(v.windows(2).all(|w| w[1] < w[0]));
        }
    }

    #[test]
    fn overlay_labels() {
        let sc: Vec<String> = overlay(LatticeKind::Sawtooth, 0.1, 2f64.sqrt()).into_iter().map(|p| p.label).collect();
        assert_eq!(sc, ["sc_random", "sc_ordered", "sc_clean"]);
        let sl = overlay(LatticeKind::Stub, 0.1, 1.0);
        assert!(sl.iter().any(|p| p.label == "sl_random"));
        assert!(overlay(LatticeKind::Stub, 0.1, 0.0).iter().all(|p| p.label != "sl_clean"));
    }
}
