//! Panel and treatment-timing generators for the property suites.
//!
//! Panels are deterministic in their seed and always satisfy the unit bound
//! (clipping is applied after all structure is built). Randomness comes from
//! a counter-based generator with one stream per series, so a panel with a
//! longer horizon extends a shorter one drawn from the same seed period by
//! period.
//!
//! Timing densities over the hypothetical treatment period come in three
//! regimes: exact uniform, a seeded bounded density pinned inside
//! `[1/(CT), C/T]`, and hazard-driven designs where the hazard at `t` may
//! read the panel only up to `t − 1`.

use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::strategies::fixed_adversary_response;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Stream offsets partitioning the seed's randomness: unit `i` draws its
/// series from stream `i` (treated unit is 0), factor loadings for unit `i`
/// from `LOADING_STREAM + i`, and factor `k`'s path from `FACTOR_STREAM + k`.
const LOADING_STREAM: u64 = 10_000;
const FACTOR_STREAM: u64 = 20_000;

fn series_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn uniform_pm1(rng: &mut ChaCha8Rng) -> f64 {
    rng.gen::<f64>() * 2.0 - 1.0
}

/// Panel-generating processes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorKind {
    /// Every series independent uniform on `[-1, 1]`.
    IidBounded,
    /// `y_it = λ_i'f_t + noise·ε_it` with loadings, factors, and noise all
    /// uniform on `[-1, 1]`, clipped to the unit bound at the end.
    FactorModel { rank: usize, noise: f64 },
    /// Controls iid uniform; the treated series follows `θ_A` exactly up to
    /// the shift period and `θ_B` afterwards. Defaults: shift at `T/2`,
    /// `θ_A` uniform on the first half of the controls and `θ_B` uniform on
    /// the rest (disjoint supports).
    PiecewiseShift {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        shift: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta_a: Option<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta_b: Option<Vec<f64>>,
    },
    /// The worst-case panel for the given fixed weights (see
    /// [`fixed_adversary_response`]); ignores the seed.
    AntiFixedTheta { theta: Vec<f64>, eps: f64 },
    /// Per-series AR(1): `y_t = rho·y_{t-1} + ε_t` with uniform innovations,
    /// clipped to the unit bound at the end.
    Ar1Clipped { rho: f64 },
}

/// A seeded panel-generation request.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub kind: GeneratorKind,
    /// Number of control units.
    pub n: usize,
    /// Number of periods.
    pub t: usize,
    #[serde(default)]
    pub seed: u64,
}

fn iid_series(seed: u64, stream: u64, t: usize) -> Vec<f64> {
    let mut rng = series_rng(seed, stream);
    (0..t).map(|_| uniform_pm1(&mut rng)).collect()
}

fn clip_unit(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// Generates the panel described by `spec`. Deterministic in the seed; the
/// output always satisfies the unit bound.
pub fn generate_panel(spec: &GeneratorSpec) -> Result<Panel> {
    let n = spec.n;
    let t = spec.t;
    if n == 0 || t == 0 {
        return Err(Error::Invalid("generators need n >= 1 and t >= 1".into()));
    }
    match &spec.kind {
        GeneratorKind::IidBounded => {
            let treated = iid_series(spec.seed, 0, t);
            let controls: Vec<Vec<f64>> =
                (1..=n).map(|i| iid_series(spec.seed, i as u64, t)).collect();
            Panel::with_bound(treated, controls, 1.0)
        }
        GeneratorKind::FactorModel { rank, noise } => {
            if !(noise.is_finite() && *noise >= 0.0) {
                return Err(Error::Invalid(format!("noise scale must be >= 0, got {noise}")));
            }
            let loadings: Vec<Vec<f64>> = (0..=n)
                .map(|i| {
                    let mut rng = series_rng(spec.seed, LOADING_STREAM + i as u64);
                    (0..*rank).map(|_| uniform_pm1(&mut rng)).collect()
                })
                .collect();
            let factors: Vec<Vec<f64>> = (0..*rank)
                .map(|k| iid_series(spec.seed, FACTOR_STREAM + k as u64, t))
                .collect();
            let mut series: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
            for (i, lambda) in loadings.iter().enumerate() {
                let mut rng = series_rng(spec.seed, i as u64);
                let values = (0..t)
                    .map(|s| {
                        let common: f64 =
                            lambda.iter().zip(&factors).map(|(l, f)| l * f[s]).sum();
                        clip_unit(common + noise * uniform_pm1(&mut rng))
                    })
                    .collect();
                series.push(values);
            }
            let treated = series.remove(0);
            Panel::with_bound(treated, series, 1.0)
        }
        GeneratorKind::PiecewiseShift { shift, theta_a, theta_b } => {
            let shift = shift.unwrap_or(t / 2);
            if shift > t {
                return Err(Error::Invalid(format!("shift {shift} is past the horizon {t}")));
            }
            let (theta_a, theta_b) = default_shift_weights(n, theta_a, theta_b)?;
            let controls: Vec<Vec<f64>> =
                (1..=n).map(|i| iid_series(spec.seed, i as u64, t)).collect();
            let treated: Vec<f64> = (0..t)
                .map(|s| {
                    let theta = if s + 1 <= shift { &theta_a } else { &theta_b };
                    (0..n).map(|i| theta[i] * controls[i][s]).sum()
                })
                .collect();
            Panel::with_bound(treated, controls, 1.0)
        }
        GeneratorKind::AntiFixedTheta { theta, eps } => {
            if theta.len() != n {
                return Err(Error::Invalid(format!(
                    "target theta has {} entries for n = {n}",
                    theta.len()
                )));
            }
            let (panel, _) = fixed_adversary_response(theta, *eps, t)?;
            Ok(panel)
        }
        GeneratorKind::Ar1Clipped { rho } => {
            if !(rho.is_finite() && rho.abs() < 1.0) {
                return Err(Error::Invalid(format!("AR coefficient must be in (-1, 1), got {rho}")));
            }
            let mut series: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
            for i in 0..=n {
                let mut rng = series_rng(spec.seed, i as u64);
                let mut values = Vec::with_capacity(t);
                let mut prev = 0.0;
                for _ in 0..t {
                    prev = rho * prev + uniform_pm1(&mut rng);
                    values.push(prev);
                }
                // Structure first, boundedness last.
                for v in values.iter_mut() {
                    *v = clip_unit(*v);
                }
                series.push(values);
            }
            let treated = series.remove(0);
            Panel::with_bound(treated, series, 1.0)
        }
    }
}

fn default_shift_weights(
    n: usize,
    theta_a: &Option<Vec<f64>>,
    theta_b: &Option<Vec<f64>>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let check = |theta: &Vec<f64>, name: &str| -> Result<Vec<f64>> {
        if theta.len() != n {
            return Err(Error::Invalid(format!("{name} has {} entries for n = {n}", theta.len())));
        }
        if theta.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invalid(format!("{name} must be nonnegative and finite")));
        }
        let total: f64 = theta.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Invalid(format!("{name} must sum to 1, got {total}")));
        }
        Ok(theta.clone())
    };
    let first = n.div_ceil(2);
    let a = match theta_a {
        Some(v) => check(v, "theta_a")?,
        None => {
            let mut v = vec![0.0; n];
            v[..first].iter_mut().for_each(|x| *x = 1.0 / first as f64);
            v
        }
    };
    let b = match theta_b {
        Some(v) => check(v, "theta_b")?,
        None => {
            if first == n {
                return Err(Error::Invalid(
                    "default shift weights need at least two controls; pass theta_b explicitly"
                        .into(),
                ));
            }
            let rest = n - first;
            let mut v = vec![0.0; n];
            v[first..].iter_mut().for_each(|x| *x = 1.0 / rest as f64);
            v
        }
    };
    Ok((a, b))
}

/// Hazard functions for dynamic treatment regimes. The hazard at period `t`
/// may read the panel only through period `t − 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HazardSpec {
    /// Constant per-period treatment probability.
    Constant { rate: f64 },
    /// `r_t = clamp(base + slope · mean of all series at t−1, lo, hi)`;
    /// the first period has no history and uses `clamp(base, lo, hi)`.
    Response { base: f64, slope: f64, lo: f64, hi: f64 },
}

impl HazardSpec {
    fn validate(&self) -> Result<()> {
        match self {
            HazardSpec::Constant { rate } => {
                if !(rate.is_finite() && *rate > 0.0 && *rate <= 1.0) {
                    return Err(Error::Invalid(format!("hazard rate must be in (0, 1], got {rate}")));
                }
            }
            HazardSpec::Response { base, slope, lo, hi } => {
                if ![base, slope, lo, hi].iter().all(|v| v.is_finite()) {
                    return Err(Error::Invalid("hazard parameters must be finite".into()));
                }
                if !(0.0 <= *lo && lo <= hi && *hi <= 1.0) {
                    return Err(Error::Invalid(format!(
                        "hazard clamp needs 0 <= lo <= hi <= 1, got [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Hazard at period `t` (1-based), reading history strictly before `t`.
    fn rate_at(&self, t: usize, panel: &Panel) -> f64 {
        match self {
            HazardSpec::Constant { rate } => *rate,
            HazardSpec::Response { base, slope, lo, hi } => {
                let raw = if t == 1 {
                    *base
                } else {
                    let prev = t - 1;
                    let n = panel.units();
                    let mut mean = panel.treated_at(prev);
                    for v in panel.controls_at(prev) {
                        mean += v;
                    }
                    mean /= (n + 1) as f64;
                    base + slope * mean
                };
                raw.clamp(*lo, *hi)
            }
        }
    }
}

/// Treatment-timing designs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimingSpec {
    /// `π_t = 1/T` exactly.
    Uniform,
    /// A seeded density pinned inside `[1/(CT), C/T]`: raw masses
    /// `0.1 + U[0,1)` are scaled by a bisected common factor, clamped to the
    /// band, and the scale is chosen so the result sums to one.
    BoundedDensity {
        c: f64,
        #[serde(default)]
        seed: u64,
    },
    /// Survival-form density from a hazard: `π_t = r_t·Π_{s<t}(1−r_s)` for
    /// `t < T`, with all remaining mass on the final period. Keeping the
    /// leftover mass terminal (rather than renormalizing) preserves
    /// causality: `π_1..π_t` depend on the panel only through period `t−1`.
    HazardRegime { hazard: HazardSpec },
}

/// Builds the timing density of `spec` over `t_max` periods. Hazard regimes
/// read the panel; the other designs ignore it.
pub fn generate_timing(
    spec: &TimingSpec,
    t_max: usize,
    panel: Option<&Panel>,
) -> Result<Vec<f64>> {
    if t_max == 0 {
        return Err(Error::Invalid("timing needs at least one period".into()));
    }
    let tf = t_max as f64;
    match spec {
        TimingSpec::Uniform => Ok(vec![1.0 / tf; t_max]),
        TimingSpec::BoundedDensity { c, seed } => {
            if !(c.is_finite() && *c >= 1.0) {
                return Err(Error::Invalid(format!("density bound needs C >= 1, got {c}")));
            }
            if *c == 1.0 {
                // Both bounds collapse onto the uniform density.
                return Ok(vec![1.0 / tf; t_max]);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let raw: Vec<f64> = (0..t_max).map(|_| 0.1 + rng.gen::<f64>()).collect();
            let lo = 1.0 / (c * tf);
            let hi = c / tf;
            let mass = |lambda: f64| -> f64 {
                raw.iter().map(|g| (lambda * g).clamp(lo, hi)).sum::<f64>()
            };
            let mut left = 0.0;
            let mut right = 1.0;
            while mass(right) < 1.0 {
                right *= 2.0;
            }
            for _ in 0..200 {
                let mid = 0.5 * (left + right);
                if mass(mid) < 1.0 {
                    left = mid;
                } else {
                    right = mid;
                }
            }
            let mut pi: Vec<f64> = raw.iter().map(|g| (right * g).clamp(lo, hi)).collect();
            let total: f64 = pi.iter().sum();
            pi.iter_mut().for_each(|p| *p /= total);
            Ok(pi)
        }
        TimingSpec::HazardRegime { hazard } => {
            hazard.validate()?;
            let panel = panel.ok_or_else(|| {
                Error::Invalid("hazard timing needs the panel to evaluate the hazard".into())
            })?;
            if panel.periods() < t_max {
                return Err(Error::Invalid(format!(
                    "panel has {} periods, timing asked for {t_max}",
                    panel.periods()
                )));
            }
            let mut pi = Vec::with_capacity(t_max);
            let mut survival = 1.0;
            for t in 1..t_max {
                let r = hazard.rate_at(t, panel);
                pi.push(survival * r);
                survival *= 1.0 - r;
            }
            pi.push(survival);
            Ok(pi)
        }
    }
}

/// Draws a treatment period `S ~ π` by inverse CDF; deterministic in the
/// seed.
pub fn sample_treatment_time(pi: &[f64], seed: u64) -> Result<usize> {
    if pi.is_empty() {
        return Err(Error::Invalid("empty timing density".into()));
    }
    if pi.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Invalid("timing density must be nonnegative and finite".into()));
    }
    let total: f64 = pi.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Invalid(format!("timing density sums to {total}, expected 1")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let u: f64 = rng.gen();
    let mut cum = 0.0;
    for (i, p) in pi.iter().enumerate() {
        cum += p;
        if cum > u {
            return Ok(i + 1);
        }
    }
    Ok(pi.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{oracle_fixed_weights, OracleClass};
    use crate::simplex::Loss;
    use approx::assert_abs_diff_eq;

    fn spec(kind: GeneratorKind, n: usize, t: usize, seed: u64) -> GeneratorSpec {
        GeneratorSpec { kind, n, t, seed }
    }

    #[test]
    fn seed_replay_is_identical() {
        for kind in [
            GeneratorKind::IidBounded,
            GeneratorKind::FactorModel { rank: 2, noise: 0.25 },
            GeneratorKind::PiecewiseShift { shift: None, theta_a: None, theta_b: None },
            GeneratorKind::Ar1Clipped { rho: 0.7 },
        ] {
            let a = generate_panel(&spec(kind.clone(), 4, 30, 11)).unwrap();
            let b = generate_panel(&spec(kind, 4, 30, 11)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate_panel(&spec(GeneratorKind::IidBounded, 3, 20, 1)).unwrap();
        let b = generate_panel(&spec(GeneratorKind::IidBounded, 3, 20, 2)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn longer_horizon_extends_the_shorter_panel() {
        for kind in [
            GeneratorKind::IidBounded,
            GeneratorKind::FactorModel { rank: 3, noise: 0.1 },
            GeneratorKind::Ar1Clipped { rho: 0.5 },
        ] {
            let short = generate_panel(&spec(kind.clone(), 5, 100, 42)).unwrap();
            let long = generate_panel(&spec(kind, 5, 400, 42)).unwrap();
            assert_eq!(short.treated(), &long.treated()[..100]);
            for i in 1..=5 {
                assert_eq!(short.control_series(i), &long.control_series(i)[..100]);
            }
        }
    }

    #[test]
    fn generated_panels_respect_the_unit_bound() {
        for kind in [
            GeneratorKind::IidBounded,
            GeneratorKind::FactorModel { rank: 4, noise: 0.5 },
            GeneratorKind::PiecewiseShift { shift: None, theta_a: None, theta_b: None },
            GeneratorKind::AntiFixedTheta { theta: vec![0.7, 0.2, 0.1], eps: 1e-4 },
            GeneratorKind::Ar1Clipped { rho: 0.9 },
        ] {
            let panel = generate_panel(&spec(kind, 3, 50, 7)).unwrap();
            assert_eq!(panel.bound(), 1.0);
            assert!(panel.max_abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn factor_model_rank_zero_noise_zero_is_all_zeros() {
        let panel =
            generate_panel(&spec(GeneratorKind::FactorModel { rank: 0, noise: 0.0 }, 3, 10, 5))
                .unwrap();
        assert!(panel.treated().iter().all(|v| *v == 0.0));
        for i in 1..=3 {
            assert!(panel.control_series(i).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn piecewise_without_a_shift_has_a_perfect_oracle() {
        let theta = vec![0.4, 0.6];
        let kind = GeneratorKind::PiecewiseShift {
            shift: None,
            theta_a: Some(theta.clone()),
            theta_b: Some(theta),
        };
        let panel = generate_panel(&spec(kind, 2, 24, 3)).unwrap();
        let oracle = oracle_fixed_weights(&panel, OracleClass::Simplex, Loss::Squared).unwrap();
        assert!(oracle.total_loss < 1e-12, "oracle loss {}", oracle.total_loss);
    }

    #[test]
    fn piecewise_defaults_split_the_controls() {
        let panel = generate_panel(&spec(
            GeneratorKind::PiecewiseShift { shift: Some(10), theta_a: None, theta_b: None },
            4,
            20,
            9,
        ))
        .unwrap();
        // First half: mean of controls 1-2; second half: mean of controls 3-4.
        for t in 1..=10 {
            let c = panel.controls_at(t);
            assert_abs_diff_eq!(panel.treated_at(t), (c[0] + c[1]) / 2.0, epsilon = 1e-12);
        }
        for t in 11..=20 {
            let c = panel.controls_at(t);
            assert_abs_diff_eq!(panel.treated_at(t), (c[2] + c[3]) / 2.0, epsilon = 1e-12);
        }
        // A single control cannot split into two default supports.
        assert!(generate_panel(&spec(
            GeneratorKind::PiecewiseShift { shift: None, theta_a: None, theta_b: None },
            1,
            10,
            0
        ))
        .is_err());
    }

    #[test]
    fn anti_fixed_theta_matches_the_adversary_construction() {
        let theta = vec![0.8, 0.2];
        let from_generator = generate_panel(&spec(
            GeneratorKind::AntiFixedTheta { theta: theta.clone(), eps: 5e-5 },
            2,
            40,
            123,
        ))
        .unwrap();
        let (direct, _) = fixed_adversary_response(&theta, 5e-5, 40).unwrap();
        assert_eq!(from_generator, direct);
    }

    #[test]
    fn uniform_timing_is_exact() {
        let pi = generate_timing(&TimingSpec::Uniform, 10, None).unwrap();
        assert_eq!(pi, vec![0.1; 10]);
    }

    #[test]
    fn bounded_density_respects_both_bounds() {
        for c in [1.5, 2.0, 5.0] {
            let pi =
                generate_timing(&TimingSpec::BoundedDensity { c, seed: 21 }, 50, None).unwrap();
            let lo = 1.0 / (c * 50.0);
            let hi = c / 50.0;
            assert_abs_diff_eq!(pi.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            for p in &pi {
                assert!(*p >= lo - 1e-12 && *p <= hi + 1e-12, "p = {p} outside [{lo}, {hi}]");
            }
        }
        // C = 1 pins the density to exactly uniform.
        let pi = generate_timing(&TimingSpec::BoundedDensity { c: 1.0, seed: 4 }, 20, None).unwrap();
        assert_eq!(pi, vec![0.05; 20]);
        // Replay determinism.
        let a = generate_timing(&TimingSpec::BoundedDensity { c: 2.0, seed: 8 }, 30, None).unwrap();
        let b = generate_timing(&TimingSpec::BoundedDensity { c: 2.0, seed: 8 }, 30, None).unwrap();
        assert_eq!(a, b);
        assert!(generate_timing(&TimingSpec::BoundedDensity { c: 0.5, seed: 0 }, 10, None).is_err());
    }

    #[test]
    fn constant_hazard_has_the_geometric_form() {
        let panel = generate_panel(&spec(GeneratorKind::IidBounded, 2, 12, 1)).unwrap();
        let r = 0.2;
        let spec = TimingSpec::HazardRegime { hazard: HazardSpec::Constant { rate: r } };
        let pi = generate_timing(&spec, 12, Some(&panel)).unwrap();
        for t in 1..12 {
            assert_abs_diff_eq!(
                pi[t - 1],
                (1.0 - r).powi(t as i32 - 1) * r,
                epsilon = 1e-12
            );
        }
        // All leftover mass sits on the final period.
        assert_abs_diff_eq!(pi[11], (1.0_f64 - r).powi(11), epsilon = 1e-12);
        assert_abs_diff_eq!(pi.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn hazard_timing_is_causal() {
        // Two panels identical through period 10, different afterwards.
        let base = generate_panel(&spec(GeneratorKind::IidBounded, 3, 20, 77)).unwrap();
        let mut treated = base.treated().to_vec();
        let mut controls: Vec<Vec<f64>> =
            (1..=3).map(|i| base.control_series(i).to_vec()).collect();
        for t in 10..20 {
            treated[t] = -treated[t] * 0.5;
            for series in controls.iter_mut() {
                series[t] = series[t] * 0.25 + 0.1;
            }
        }
        let perturbed = Panel::with_bound(treated, controls, 1.0).unwrap();
        let hazard = HazardSpec::Response { base: 0.1, slope: 0.3, lo: 0.01, hi: 0.9 };
        let spec = TimingSpec::HazardRegime { hazard };
        let a = generate_timing(&spec, 20, Some(&base)).unwrap();
        let b = generate_timing(&spec, 20, Some(&perturbed)).unwrap();
        // π_t reads the panel through t−1 only, so the first 11 entries agree.
        for t in 1..=11 {
            assert_abs_diff_eq!(a[t - 1], b[t - 1], epsilon = 1e-15);
        }
        assert!((a[11] - b[11]).abs() > 1e-12, "hazard ignored the history perturbation");
        assert_abs_diff_eq!(a.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn treatment_time_sampling() {
        let mut point = vec![0.0; 8];
        point[2] = 1.0;
        for seed in 0..20 {
            assert_eq!(sample_treatment_time(&point, seed).unwrap(), 3);
        }
        assert_eq!(
            sample_treatment_time(&[0.25; 4], 9).unwrap(),
            sample_treatment_time(&[0.25; 4], 9).unwrap()
        );
        let mut counts = [0usize; 4];
        for seed in 0..1000 {
            counts[sample_treatment_time(&[0.25; 4], seed).unwrap() - 1] += 1;
        }
        for c in counts {
            let freq = c as f64 / 1000.0;
            assert!((freq - 0.25).abs() < 0.08, "frequency {freq}");
        }
        assert!(sample_treatment_time(&[0.5, 0.4], 0).is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let specs = vec![
            spec(GeneratorKind::IidBounded, 5, 100, 3),
            spec(GeneratorKind::FactorModel { rank: 2, noise: 0.25 }, 4, 50, 9),
            spec(
                GeneratorKind::PiecewiseShift {
                    shift: Some(25),
                    theta_a: Some(vec![0.5, 0.5, 0.0, 0.0]),
                    theta_b: Some(vec![0.0, 0.0, 0.5, 0.5]),
                },
                4,
                50,
                1,
            ),
            spec(GeneratorKind::AntiFixedTheta { theta: vec![1.0, 0.0], eps: 5e-5 }, 2, 100, 0),
            spec(GeneratorKind::Ar1Clipped { rho: 0.6 }, 3, 64, 2),
        ];
        for s in specs {
            let json = serde_json::to_string(&s).unwrap();
            let back: GeneratorSpec = serde_json::from_str(&json).unwrap();
            assert_eq!(s, back);
        }
        let parsed: GeneratorSpec =
            serde_json::from_str(r#"{"kind":"iid_bounded","n":5,"t":100,"seed":7}"#).unwrap();
        assert_eq!(parsed, spec(GeneratorKind::IidBounded, 5, 100, 7));
        let timing: TimingSpec =
            serde_json::from_str(r#"{"kind":"bounded_density","c":2.0}"#).unwrap();
        assert_eq!(timing, TimingSpec::BoundedDensity { c: 2.0, seed: 0 });
    }
}
