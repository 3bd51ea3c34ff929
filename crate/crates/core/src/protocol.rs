//! The sequential forecasting game and its regret accounting.
//!
//! [`run_protocol`] plays a strategy through every hypothetical treatment
//! period of a panel, producing a [`Trajectory`]; [`oracle_fixed_weights`]
//! solves the ex-post best fixed weights for a chosen comparison class; and
//! [`compute_regret`] assembles a [`RegretReport`] with realized, weighted,
//! and adaptive regret next to the closed-form [`theoretical_bound`] values.

use crate::error::{Error, Result};
use crate::panel::{transform, Panel, TransformKind};
use crate::simplex::{
    history_loss, solve_absolute, solve_affine_ls, solve_constrained_ls, solve_quad,
    CompiledPenalty, Loss, LsOptions, QuadProblem, DEFAULT_TOLERANCE, TIE_EPSILON,
};
use crate::strategies::{StrategyConfig, StrategyState, Weights};
use serde::{Deserialize, Serialize};

/// Record of one strategy played through the game: per-period predictions,
/// losses, and the weights in force when each prediction was made.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// Strategy descriptor (see [`StrategyConfig::label`]).
    pub strategy: String,
    /// Loss the per-period entries are measured in.
    pub loss: Loss,
    /// Hash of the panel the run was recorded on.
    pub panel_hash: u64,
    pub predictions: Vec<f64>,
    pub losses: Vec<f64>,
    pub weights: Vec<Weights>,
}

impl Trajectory {
    pub fn periods(&self) -> usize {
        self.losses.len()
    }

    pub fn total_loss(&self) -> f64 {
        self.losses.iter().sum()
    }

    /// Running sums of the per-period losses.
    pub fn cumulative_losses(&self) -> Vec<f64> {
        let mut acc = 0.0;
        self.losses
            .iter()
            .map(|l| {
                acc += l;
                acc
            })
            .collect()
    }
}

fn pointwise_loss(loss: Loss, actual: f64, predicted: f64) -> f64 {
    let d = actual - predicted;
    match loss {
        Loss::Squared => d * d,
        Loss::Absolute => d.abs(),
    }
}

/// The loss a strategy's game is scored in: the absolute-loss FTRL variants
/// are scored in absolute loss, everything else in squared loss.
pub fn protocol_loss(config: &StrategyConfig) -> Loss {
    match config {
        StrategyConfig::Ftrl { loss, .. } => *loss,
        StrategyConfig::Flh { base, .. } => {
            base.as_ref().map_or(Loss::Squared, |b| protocol_loss(b))
        }
        _ => Loss::Squared,
    }
}

fn with_period(e: Error, t: usize) -> Error {
    match e {
        Error::Invalid(msg) => Error::Invalid(format!("period {t}: {msg}")),
        Error::Solver { msg, iterations, kkt_residual, last_iterate } => Error::Solver {
            msg: format!("period {t}: {msg}"),
            iterations,
            kkt_residual,
            last_iterate,
        },
        other => other,
    }
}

/// Plays `config` through every hypothetical treatment period `S = 1..T`:
/// predict `y_{0S}` from the controls at `S` and the history before it,
/// record the loss, then reveal the period. Deterministic given the config
/// and panel.
pub fn run_protocol(panel: &Panel, config: &StrategyConfig) -> Result<Trajectory> {
    let n = panel.units();
    let t_max = panel.periods();
    let loss = protocol_loss(config);
    let mut state = StrategyState::new(config, n, t_max)?;
    let mut predictions = Vec::with_capacity(t_max);
    let mut losses = Vec::with_capacity(t_max);
    let mut weights = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let controls = panel.controls_at(t);
        let (w, prediction) = state.predict(&controls).map_err(|e| with_period(e, t))?;
        let actual = panel.treated_at(t);
        predictions.push(prediction);
        losses.push(pointwise_loss(loss, actual, prediction));
        weights.push(w);
        state.update(actual, &controls).map_err(|e| with_period(e, t))?;
    }
    Ok(Trajectory {
        strategy: config.label(),
        loss,
        panel_hash: panel.hash64(),
        predictions,
        losses,
        weights,
    })
}

/// Comparison classes for the ex-post oracle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OracleClass {
    /// Best fixed simplex weights on levels.
    Simplex,
    /// Best fixed intercept in `[-2, 2]` plus simplex weights on levels.
    Affine,
    /// Best fixed-weight two-way fixed-effects forecaster; by the residual
    /// identity this is the simplex class on the historical-diff transform.
    Twfe,
    /// Simplex class on first differences (period 1 in levels).
    FirstDiff,
}

/// Ex-post best fixed weights in a class, with the loss they attain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleFit {
    pub class: OracleClass,
    pub loss: Loss,
    pub weights: Weights,
    pub total_loss: f64,
    pub panel_hash: u64,
}

fn class_rows(panel: &Panel, class: OracleClass) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let transformed = match class {
        OracleClass::Simplex | OracleClass::Affine => None,
        OracleClass::Twfe => Some(transform(panel, TransformKind::HistoricalDiff)),
        OracleClass::FirstDiff => Some(transform(panel, TransformKind::FirstDiff)),
    };
    let source = transformed.as_ref().map_or(panel, |tp| &tp.values);
    let t_max = source.periods();
    let targets = source.treated().to_vec();
    let rows: Vec<Vec<f64>> = (1..=t_max).map(|t| source.controls_at(t)).collect();
    Ok((targets, rows))
}

/// Solves the full-horizon fixed-weights problem for `class` under `loss`.
/// The reported `total_loss` is recomputed at the returned weights, so it is
/// always an attainable value for the class.
pub fn oracle_fixed_weights(panel: &Panel, class: OracleClass, loss: Loss) -> Result<OracleFit> {
    let n = panel.units();
    let (targets, rows) = class_rows(panel, class)?;
    let (weights, total_loss) = match (class, loss) {
        (OracleClass::Affine, Loss::Squared) => {
            let (intercept, theta) =
                solve_affine_ls(n, &targets, &rows, None, None, DEFAULT_TOLERANCE)?;
            let total = targets
                .iter()
                .zip(&rows)
                .map(|(a, row)| {
                    let pred =
                        intercept + theta.iter().zip(row).map(|(x, y)| x * y).sum::<f64>();
                    (a - pred) * (a - pred)
                })
                .sum();
            (Weights { theta, intercept: Some(intercept) }, total)
        }
        (OracleClass::Affine, Loss::Absolute) => {
            return Err(Error::Invalid(
                "the absolute-loss oracle supports the simplex-style classes only".into(),
            ));
        }
        (_, Loss::Squared) => {
            let theta = solve_constrained_ls(n, &targets, &rows, &LsOptions::default())?;
            let total = history_loss(&targets, &rows, &theta, Loss::Squared);
            (Weights { theta, intercept: None }, total)
        }
        (_, Loss::Absolute) => {
            let theta =
                solve_absolute(n, &targets, &rows, &CompiledPenalty::None, 0.0, None, 1e-9)?;
            let total = history_loss(&targets, &rows, &theta, Loss::Absolute);
            (Weights { theta, intercept: None }, total)
        }
    };
    Ok(OracleFit { class, loss, weights, total_loss, panel_hash: panel.hash64() })
}

/// Per-period losses of the oracle's fixed weights on its own class
/// representation. For the transformed classes the residual identity makes
/// these equal to the untransformed forecast losses period by period.
pub fn oracle_period_losses(panel: &Panel, fit: &OracleFit) -> Result<Vec<f64>> {
    if fit.panel_hash != panel.hash64() {
        return Err(Error::Invalid("oracle fit was computed on a different panel".into()));
    }
    let (targets, rows) = class_rows(panel, fit.class)?;
    let intercept = fit.weights.intercept.unwrap_or(0.0);
    Ok(targets
        .iter()
        .zip(&rows)
        .map(|(a, row)| {
            let pred =
                intercept + fit.weights.theta.iter().zip(row).map(|(x, y)| x * y).sum::<f64>();
            pointwise_loss(fit.loss, *a, pred)
        })
        .collect())
}

/// Closed-form regret-bound formulas. All logarithms are natural and the
/// values are in unscaled-loss units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BoundKind {
    /// `16N(ln(√N·T) + 1)`: follow-the-leader on `‖Y‖∞ ≤ 1` panels.
    Theorem1,
    /// `16C³N(ln(√N·T/C²) + 1)`: weighted FTL under a density with
    /// `1/(CT) ≤ π_t ≤ C/T`. Reduces to the FTL bound at `C = 1`.
    Corollary1 { c: f64 },
    /// `2√(2KNT)`: FTRL with a quadratic penalty of range `K` (minimum
    /// Hessian eigenvalue normalized to 1).
    FtrlQuadratic { k: f64 },
    /// `2√(NT)`: FTRL with the ridge penalty.
    FtrlRidge,
    /// `3√(T·lnN)`: FTRL with the entropy penalty.
    FtrlEntropy,
    /// `(2nb²/a)(ln(DRaT/b) + 1)`: the general follow-the-leader bound with
    /// diameter `D = d`, iterate norm `R = r`, curvature `a`, and gradient
    /// bound `b`.
    Hazan { r: f64, a: f64, b: f64, d: f64 },
}

/// Evaluates a bound formula at `n` controls and horizon `t`.
pub fn theoretical_bound(kind: BoundKind, n: usize, t: usize) -> Result<f64> {
    if n == 0 || t == 0 {
        return Err(Error::Invalid("bounds need n >= 1 and t >= 1".into()));
    }
    let nf = n as f64;
    let tf = t as f64;
    match kind {
        BoundKind::Theorem1 => Ok(16.0 * nf * ((nf.sqrt() * tf).ln() + 1.0)),
        BoundKind::Corollary1 { c } => {
            if !(c.is_finite() && c >= 1.0) {
                return Err(Error::Invalid(format!("corollary-1 bound needs c >= 1, got {c}")));
            }
            Ok(16.0 * c.powi(3) * nf * ((nf.sqrt() * tf / (c * c)).ln() + 1.0))
        }
        BoundKind::FtrlQuadratic { k } => {
            if !(k.is_finite() && k > 0.0) {
                return Err(Error::Invalid(format!("quadratic bound needs k > 0, got {k}")));
            }
            Ok(2.0 * (2.0 * k * nf * tf).sqrt())
        }
        BoundKind::FtrlRidge => Ok(2.0 * (nf * tf).sqrt()),
        BoundKind::FtrlEntropy => {
            if n < 2 {
                return Err(Error::Invalid("the entropy bound needs at least two controls".into()));
            }
            Ok(3.0 * (tf * nf.ln()).sqrt())
        }
        BoundKind::Hazan { r, a, b, d } => {
            for (name, v) in [("r", r), ("a", a), ("b", b), ("d", d)] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::Invalid(format!("hazan bound needs {name} > 0, got {v}")));
                }
            }
            Ok((2.0 * nf * b * b / a) * ((d * r * a * tf / b).ln() + 1.0))
        }
    }
}

/// Summary of a trajectory against an oracle fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub strategy: String,
    /// Panel fingerprint, hex-encoded.
    pub panel_hash: String,
    /// Total strategy loss minus the oracle's total loss.
    pub regret: f64,
    pub oracle_loss: f64,
    pub oracle_weights: Weights,
    /// Requested closed-form bound value, if any.
    #[serde(rename = "bound")]
    pub theoretical_bound: Option<f64>,
    pub avg_regret: f64,
    /// Expected loss under the timing density: `Σ π_t ℓ_t` (uniform default).
    pub risk: f64,
    pub adaptive_regret: Option<f64>,
    /// Start-period stride used by the adaptive scan, when it ran.
    pub adaptive_stride: Option<usize>,
    pub weighted_regret: Option<f64>,
}

/// Extras requested from [`compute_regret`] beyond the core identity.
#[derive(Debug, Clone, Copy, Default)]
pub struct RegretOptions<'a> {
    /// Timing density over periods (length `T`). Drives `risk` and switches
    /// on the weighted-regret block. Uniform when absent.
    pub pi: Option<&'a [f64]>,
    /// Bound formula to evaluate into the report.
    pub bound: Option<BoundKind>,
    /// Also run the subinterval scan for adaptive regret.
    pub adaptive: bool,
}

fn validate_density(pi: &[f64], t_max: usize) -> Result<()> {
    if pi.len() != t_max {
        return Err(Error::Invalid(format!(
            "timing density has {} entries for {t_max} periods",
            pi.len()
        )));
    }
    if pi.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::Invalid("timing density must be nonnegative and finite".into()));
    }
    Ok(())
}

/// Assembles the [`RegretReport`] for a trajectory against an oracle fit on
/// the same panel: `regret = Σℓ_t − oracle loss`, risk under the supplied
/// (or uniform) timing density, and optionally the weighted and adaptive
/// regret blocks.
pub fn compute_regret(
    panel: &Panel,
    traj: &Trajectory,
    oracle: &OracleFit,
    opts: &RegretOptions,
) -> Result<RegretReport> {
    let t_max = panel.periods();
    if traj.panel_hash != panel.hash64() {
        return Err(Error::Invalid("trajectory was recorded on a different panel".into()));
    }
    if oracle.panel_hash != panel.hash64() {
        return Err(Error::Invalid("oracle fit was computed on a different panel".into()));
    }
    if traj.loss != oracle.loss {
        return Err(Error::Invalid(
            "trajectory and oracle are scored in different losses".into(),
        ));
    }
    if traj.periods() != t_max {
        return Err(Error::Invalid("trajectory length does not match the panel".into()));
    }
    let total = traj.total_loss();
    let regret = total - oracle.total_loss;
    let risk = match opts.pi {
        None => total / t_max as f64,
        Some(pi) => {
            validate_density(pi, t_max)?;
            pi.iter().zip(&traj.losses).map(|(p, l)| p * l).sum()
        }
    };
    // The weighted-regret comparator is defined for the squared-loss
    // simplex-style classes; other combinations leave the field empty.
    let weighted_regret = match opts.pi {
        Some(pi) if traj.loss == Loss::Squared && oracle.class != OracleClass::Affine => {
            Some(weighted_regret(panel, traj, oracle.class, pi)?)
        }
        _ => None,
    };
    let (adaptive_value, adaptive_stride) = if opts.adaptive {
        let scan = adaptive_regret(panel, traj, oracle.class)?;
        (Some(scan.value), Some(scan.stride))
    } else {
        (None, None)
    };
    let bound = match opts.bound {
        None => None,
        Some(kind) => Some(theoretical_bound(kind, panel.units(), t_max)?),
    };
    Ok(RegretReport {
        strategy: traj.strategy.clone(),
        panel_hash: format!("{:016x}", panel.hash64()),
        regret,
        oracle_loss: oracle.total_loss,
        oracle_weights: oracle.weights.clone(),
        theoretical_bound: bound,
        avg_regret: regret / t_max as f64,
        risk,
        adaptive_regret: adaptive_value,
        adaptive_stride,
        weighted_regret,
    })
}

/// Weighted regret under a timing density: `T·[Σ π_t ℓ_t − min_θ Σ π_t ℓ_t(θ)]`,
/// so a uniform density recovers the plain regret.
pub fn weighted_regret(
    panel: &Panel,
    traj: &Trajectory,
    class: OracleClass,
    pi: &[f64],
) -> Result<f64> {
    let t_max = panel.periods();
    validate_density(pi, t_max)?;
    if traj.loss != Loss::Squared {
        return Err(Error::Invalid("weighted regret is defined for squared loss".into()));
    }
    if class == OracleClass::Affine {
        return Err(Error::Invalid(
            "weighted regret supports the simplex-style classes only".into(),
        ));
    }
    let n = panel.units();
    let (targets, rows) = class_rows(panel, class)?;
    let theta = solve_constrained_ls(
        n,
        &targets,
        &rows,
        &LsOptions { sample_weights: Some(pi), ..Default::default() },
    )?;
    let oracle_weighted: f64 = targets
        .iter()
        .zip(&rows)
        .zip(pi)
        .map(|((a, row), p)| {
            let pred: f64 = theta.iter().zip(row).map(|(x, y)| x * y).sum();
            p * (a - pred) * (a - pred)
        })
        .sum();
    let strategy_weighted: f64 = pi.iter().zip(&traj.losses).map(|(p, l)| p * l).sum();
    Ok(t_max as f64 * (strategy_weighted - oracle_weighted))
}

/// Adaptive-regret scan result.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdaptiveRegret {
    /// Max over scanned intervals `[r, s]` of the strategy's interval loss
    /// minus the interval oracle's.
    pub value: f64,
    /// Stride applied to the interval start `r` (1 = exact scan).
    pub stride: usize,
}

/// Horizon above which the adaptive scan strides its interval starts.
pub const ADAPTIVE_EXACT_LIMIT: usize = 256;

/// Tolerance for the interval-oracle solves. Short intervals make the
/// tie-broken problem nearly rank-deficient, where the full default
/// tolerance is unreachable; 1e-8 keeps the interval losses far inside the
/// 1e-6 slack the bound checks use.
const INTERVAL_TOLERANCE: f64 = 1e-8;

/// Worst regret over contiguous subintervals: for each scanned start `r`,
/// the end `s` sweeps the full range while the interval oracle is updated
/// incrementally and re-solved from a warm start. Exact for `T ≤ 256`,
/// strided starts (`⌈T/256⌉`) above that.
pub fn adaptive_regret(
    panel: &Panel,
    traj: &Trajectory,
    class: OracleClass,
) -> Result<AdaptiveRegret> {
    if traj.loss != Loss::Squared {
        return Err(Error::Invalid("adaptive regret is defined for squared loss".into()));
    }
    if class == OracleClass::Affine {
        return Err(Error::Invalid(
            "adaptive regret supports the simplex-style classes only".into(),
        ));
    }
    if traj.panel_hash != panel.hash64() {
        return Err(Error::Invalid("trajectory was recorded on a different panel".into()));
    }
    let t_max = panel.periods();
    let n = panel.units();
    let (targets, rows) = class_rows(panel, class)?;
    let cumulative = traj.cumulative_losses();
    let stride = if t_max <= ADAPTIVE_EXACT_LIMIT { 1 } else { t_max.div_ceil(ADAPTIVE_EXACT_LIMIT) };
    let mut best = f64::NEG_INFINITY;
    let mut gram = vec![0.0; n * n];
    let mut lin = vec![0.0; n];
    let mut theta = vec![1.0 / n as f64; n];
    let mut r = 1;
    while r <= t_max {
        gram.iter_mut().for_each(|v| *v = 0.0);
        lin.iter_mut().for_each(|v| *v = 0.0);
        theta.iter_mut().for_each(|v| *v = 1.0 / n as f64);
        let mut sumsq = 0.0;
        for s in r..=t_max {
            let row = &rows[s - 1];
            let a = targets[s - 1];
            sumsq += a * a;
            for i in 0..n {
                lin[i] += a * row[i];
                for j in 0..=i {
                    let v = row[i] * row[j];
                    gram[i * n + j] += v;
                    if i != j {
                        gram[j * n + i] += v;
                    }
                }
            }
            let mut p: Vec<f64> = gram.iter().map(|v| 2.0 * v).collect();
            let mut q = vec![0.0; n];
            for i in 0..n {
                p[i * n + i] += 2.0 * TIE_EPSILON;
                q[i] = 2.0 * lin[i];
            }
            let prob = QuadProblem {
                dim: n,
                p: &p,
                q: &q,
                penalty: &CompiledPenalty::None,
                pen_coef: 0.0,
                intercept: false,
                tol: INTERVAL_TOLERANCE,
            };
            theta = solve_quad(&prob, Some(&theta))?;
            // Interval oracle loss via the quadratic form: Σa² − 2θ'h + θ'Gθ.
            let mut quad = 0.0;
            for i in 0..n {
                for j in 0..n {
                    quad += theta[i] * gram[i * n + j] * theta[j];
                }
            }
            let oracle_interval =
                sumsq - 2.0 * theta.iter().zip(&lin).map(|(x, y)| x * y).sum::<f64>() + quad;
            let strategy_interval =
                cumulative[s - 1] - if r > 1 { cumulative[r - 2] } else { 0.0 };
            best = best.max(strategy_interval - oracle_interval);
        }
        r += stride;
    }
    Ok(AdaptiveRegret { value: best, stride })
}

/// The expected-loss inequality under a timing density: checks
/// `Σ π_t ℓ_t ≤ C·(oracle avg loss + regret/T)` and returns
/// `(lhs, rhs, holds)`. The density must respect `π_t ≤ C/T`.
pub fn expected_loss_bound_check(
    traj: &Trajectory,
    pi: &[f64],
    c: f64,
    oracle: &OracleFit,
) -> Result<(f64, f64, bool)> {
    let t_max = traj.periods();
    validate_density(pi, t_max)?;
    if !(c.is_finite() && c >= 1.0) {
        return Err(Error::Invalid(format!("the density bound needs C >= 1, got {c}")));
    }
    let cap = c / t_max as f64 + 1e-12;
    if let Some(t) = pi.iter().position(|p| *p > cap) {
        return Err(Error::Invalid(format!(
            "pi[{}] = {} exceeds C/T = {}",
            t + 1,
            pi[t],
            c / t_max as f64
        )));
    }
    if traj.loss != oracle.loss {
        return Err(Error::Invalid(
            "trajectory and oracle are scored in different losses".into(),
        ));
    }
    let lhs: f64 = pi.iter().zip(&traj.losses).map(|(p, l)| p * l).sum();
    let regret = traj.total_loss() - oracle.total_loss;
    let rhs = c * (oracle.total_loss / t_max as f64 + regret / t_max as f64);
    Ok((lhs, rhs, lhs <= rhs + 1e-9))
}

/// Renders the cumulative-loss curves of a trajectory and its oracle as CSV
/// with columns `t,strategy_cumloss,oracle_cumloss`.
pub fn regret_curves_csv(panel: &Panel, traj: &Trajectory, oracle: &OracleFit) -> Result<String> {
    let strategy_cum = traj.cumulative_losses();
    let oracle_losses = oracle_period_losses(panel, oracle)?;
    let mut out = String::from("t,strategy_cumloss,oracle_cumloss\n");
    let mut oracle_cum = 0.0;
    for (t, (s, o)) in strategy_cum.iter().zip(&oracle_losses).enumerate() {
        oracle_cum += o;
        out.push_str(&format!("{},{},{}\n", t + 1, s, oracle_cum));
    }
    Ok(out)
}
