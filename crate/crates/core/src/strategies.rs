//! Forecasting strategies for the sequential panel game.
//!
//! Each strategy is a state machine driven by the protocol loop: at period
//! `t` it is asked to predict the treated outcome from the current control
//! vector alone ([`StrategyState::predict`] takes `&self`, so the prediction
//! cannot peek at the current treated outcome), and afterwards the realized
//! pair is folded in with [`StrategyState::update`], which also pre-solves
//! the weights for the next period. Fits are incremental: Gram matrices grow
//! by one rank-one term per period and every solve warm-starts from the
//! previous weights.

use crate::error::{Error, Result};
use crate::panel::Panel;
use crate::simplex::{
    default_eta, solve_absolute, solve_quad, AbsoluteState, CompiledPenalty, Loss, LsOptions,
    PenaltySpec, QuadProblem, TIE_EPSILON,
};
use serde::{Deserialize, Serialize};

/// Weights emitted by a strategy: simplex weights over the controls plus an
/// intercept for the affine variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub theta: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intercept: Option<f64>,
}

impl Weights {
    /// Affine evaluation `intercept + θ'controls` (intercept treated as 0
    /// when absent). Transform-based strategies add their own level offsets
    /// on top of this.
    pub fn evaluate(&self, controls: &[f64]) -> f64 {
        self.intercept.unwrap_or(0.0)
            + self.theta.iter().zip(controls).map(|(a, b)| a * b).sum::<f64>()
    }
}

/// Declarative strategy selector, JSON-encodable for configs and reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyConfig {
    /// Follow-the-leader: refit the simplex least-squares weights on all past
    /// periods. This is the online form of the synthetic-control estimator.
    Ftl,
    /// Follow-the-leader with per-period sample weights `pi` (a treatment-time
    /// density). `pi` must cover the horizon; the runner injects it when a
    /// timing design is configured.
    WeightedFtl {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        pi: Option<Vec<f64>>,
    },
    /// Regularized leader: minimizes cumulative loss plus `(1/η)Φ(θ)`. The
    /// loss is `½(·)²` or `|·|`; `η` defaults to the horizon-tuned rate.
    Ftrl {
        penalty: PenaltySpec,
        #[serde(default)]
        loss: Loss,
    },
    /// Follow-the-leader on the historical-difference transform; predictions
    /// add back the treated unit's past mean.
    DifferencedSc,
    /// Affine fit on levels: intercept in `[-2, 2]` plus simplex weights.
    DemeanedSc,
    /// Follow-the-leader on first differences (period 1 enters in levels).
    FirstDiffSc,
    /// Plays the given simplex weights on levels at every period.
    FixedWeights { theta: Vec<f64> },
    /// Difference-in-differences with uniform weights: the historical-diff
    /// prediction with `w = (1/N, …, 1/N)`.
    UniformDid,
    /// Two-way fixed-effects forecast with the given fixed unit weights.
    TwfeFixedW { w: Vec<f64> },
    /// Follow-the-leading-history: a new instance of the base strategy is
    /// born each period and their predictions are mixed by exponentially
    /// reweighted probabilities (rate `alpha`, default 0.25, on half squared
    /// loss).
    Flh {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        alpha: Option<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        base: Option<Box<StrategyConfig>>,
    },
}

impl StrategyConfig {
    /// Short human-readable tag used in reports and file names.
    pub fn label(&self) -> String {
        match self {
            StrategyConfig::Ftl => "ftl".into(),
            StrategyConfig::WeightedFtl { .. } => "weighted_ftl".into(),
            StrategyConfig::Ftrl { penalty, loss } => {
                let pen = match penalty {
                    PenaltySpec::None => "none",
                    PenaltySpec::Ridge { .. } => "ridge",
                    PenaltySpec::Entropy { .. } => "entropy",
                    PenaltySpec::Quadratic { .. } => "quadratic",
                };
                let loss = match loss {
                    Loss::Squared => "squared",
                    Loss::Absolute => "absolute",
                };
                format!("ftrl_{pen}_{loss}")
            }
            StrategyConfig::DifferencedSc => "differenced_sc".into(),
            StrategyConfig::DemeanedSc => "demeaned_sc".into(),
            StrategyConfig::FirstDiffSc => "first_diff_sc".into(),
            StrategyConfig::FixedWeights { .. } => "fixed_weights".into(),
            StrategyConfig::UniformDid => "uniform_did".into(),
            StrategyConfig::TwfeFixedW { .. } => "twfe_fixed_w".into(),
            StrategyConfig::Flh { base, .. } => match base {
                Some(b) => format!("flh({})", b.label()),
                None => "flh(ftl)".into(),
            },
        }
    }
}

fn validate_simplex_vector(theta: &[f64], n: usize, what: &str) -> Result<Vec<f64>> {
    if theta.len() != n {
        return Err(Error::Invalid(format!(
            "{what} has {} entries for {n} controls",
            theta.len()
        )));
    }
    if theta.iter().any(|v| !v.is_finite() || *v < -1e-9) {
        return Err(Error::Invalid(format!("{what} must be nonnegative and finite")));
    }
    let total: f64 = theta.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::Invalid(format!("{what} must sum to 1, got {total}")));
    }
    let mut out: Vec<f64> = theta.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= s;
    }
    Ok(out)
}

/// Incremental Gram accumulator for squared-loss fits:
/// `g = Σ w·v v'`, `h = Σ w·a·v`.
#[derive(Debug, Clone)]
struct Gram {
    n: usize,
    g: Vec<f64>,
    h: Vec<f64>,
}

impl Gram {
    fn new(n: usize) -> Self {
        Gram { n, g: vec![0.0; n * n], h: vec![0.0; n] }
    }

    fn add(&mut self, row: &[f64], target: f64, weight: f64) {
        let n = self.n;
        for i in 0..n {
            self.h[i] += weight * target * row[i];
            for j in 0..=i {
                let v = weight * row[i] * row[j];
                self.g[i * n + j] += v;
                if i != j {
                    self.g[j * n + i] += v;
                }
            }
        }
    }

    /// Solves the accumulated problem. `pen_coef = 0` requests the
    /// tie-broken unregularized fit; otherwise the penalty enters the
    /// half-squared-loss objective with coefficient `pen_coef`.
    fn solve(&self, penalty: &CompiledPenalty, pen_coef: f64, warm: &[f64]) -> Result<Vec<f64>> {
        let n = self.n;
        let mut p = vec![0.0; n * n];
        let mut q = vec![0.0; n];
        if pen_coef == 0.0 {
            for i in 0..n * n {
                p[i] = 2.0 * self.g[i];
            }
            for i in 0..n {
                p[i * n + i] += 2.0 * TIE_EPSILON;
                q[i] = 2.0 * self.h[i];
            }
        } else {
            p.copy_from_slice(&self.g);
            q.copy_from_slice(&self.h);
        }
        let prob = QuadProblem {
            dim: n,
            p: &p,
            q: &q,
            penalty,
            pen_coef,
            intercept: false,
            tol: crate::simplex::DEFAULT_TOLERANCE,
        };
        solve_quad(&prob, Some(warm))
    }
}

/// Affine Gram over augmented rows `[1, v]` with tie-breaking on the weight
/// block and the boxed-intercept projection.
#[derive(Debug, Clone)]
struct AffineGram {
    n: usize,
    g: Vec<f64>,
    h: Vec<f64>,
}

impl AffineGram {
    fn new(n: usize) -> Self {
        let dim = n + 1;
        AffineGram { n, g: vec![0.0; dim * dim], h: vec![0.0; dim] }
    }

    fn add(&mut self, controls: &[f64], target: f64) {
        let dim = self.n + 1;
        let mut aug = Vec::with_capacity(dim);
        aug.push(1.0);
        aug.extend_from_slice(controls);
        for i in 0..dim {
            self.h[i] += target * aug[i];
            for j in 0..=i {
                let v = aug[i] * aug[j];
                self.g[i * dim + j] += v;
                if i != j {
                    self.g[j * dim + i] += v;
                }
            }
        }
    }

    fn solve(&self, warm: (f64, &[f64])) -> Result<(f64, Vec<f64>)> {
        let dim = self.n + 1;
        let mut p: Vec<f64> = self.g.iter().map(|v| 2.0 * v).collect();
        let mut q = vec![0.0; dim];
        for i in 0..dim {
            q[i] = 2.0 * self.h[i];
            if i >= 1 {
                p[i * dim + i] += 2.0 * TIE_EPSILON;
            }
        }
        let mut warm_vec = Vec::with_capacity(dim);
        warm_vec.push(warm.0);
        warm_vec.extend_from_slice(warm.1);
        let prob = QuadProblem {
            dim,
            p: &p,
            q: &q,
            penalty: &CompiledPenalty::None,
            pen_coef: 0.0,
            intercept: true,
            tol: crate::simplex::DEFAULT_TOLERANCE,
        };
        let sol = solve_quad(&prob, Some(&warm_vec))?;
        Ok((sol[0], sol[1..].to_vec()))
    }
}

/// Running past-mean bookkeeping shared by the transform-based strategies.
#[derive(Debug, Clone)]
struct PastMeans {
    treated_sum: f64,
    control_sums: Vec<f64>,
    count: usize,
}

impl PastMeans {
    fn new(n: usize) -> Self {
        PastMeans { treated_sum: 0.0, control_sums: vec![0.0; n], count: 0 }
    }

    fn treated_mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.treated_sum / self.count as f64
        }
    }

    /// Historical-difference transform of the current controls: levels at the
    /// first period, deviation from the past mean afterwards.
    fn transform_controls(&self, controls: &[f64]) -> Vec<f64> {
        if self.count == 0 {
            controls.to_vec()
        } else {
            controls
                .iter()
                .zip(&self.control_sums)
                .map(|(y, s)| y - s / self.count as f64)
                .collect()
        }
    }

    fn absorb(&mut self, treated: f64, controls: &[f64]) {
        self.treated_sum += treated;
        for (s, y) in self.control_sums.iter_mut().zip(controls) {
            *s += y;
        }
        self.count += 1;
    }
}

#[derive(Debug, Clone)]
enum KindState {
    /// FTL, weighted FTL, and squared-loss FTRL on levels.
    Level {
        gram: Gram,
        penalty: CompiledPenalty,
        pen_coef: f64,
        pi: Option<Vec<f64>>,
        next_theta: Vec<f64>,
    },
    /// Absolute-loss FTRL keeps the raw history for its splitting solver.
    AbsFtrl {
        targets: Vec<f64>,
        rows: Vec<Vec<f64>>,
        penalty: CompiledPenalty,
        pen_coef: f64,
        admm: AbsoluteState,
        next_theta: Vec<f64>,
    },
    /// FTL on the historical-difference transform.
    Differenced { means: PastMeans, gram: Gram, next_theta: Vec<f64> },
    /// Affine FTL on levels.
    Affine { gram: AffineGram, next: (f64, Vec<f64>) },
    /// FTL on first differences (period 1 in levels).
    FirstDiff { last: Option<(f64, Vec<f64>)>, gram: Gram, next_theta: Vec<f64> },
    /// Fixed simplex weights on levels.
    FixedLevel { theta: Vec<f64> },
    /// Fixed weights through the two-way fixed-effects forecast.
    Twfe { w: Vec<f64>, means: PastMeans },
    /// Mixture over restarted copies of a base strategy.
    Flh {
        alpha: f64,
        base: Box<StrategyConfig>,
        experts: Vec<StrategyState>,
        log_probs: Vec<f64>,
    },
}

/// A strategy instance bound to a panel shape: `n` controls and a declared
/// horizon (used for default learning rates and timing-density lengths).
#[derive(Debug, Clone)]
pub struct StrategyState {
    config: StrategyConfig,
    n: usize,
    horizon: usize,
    /// 1-based period the next `predict` call refers to.
    t_next: usize,
    kind: KindState,
}

impl StrategyState {
    pub fn new(config: &StrategyConfig, n: usize, horizon: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Invalid("a strategy needs at least one control".into()));
        }
        if horizon == 0 {
            return Err(Error::Invalid("horizon must be at least 1".into()));
        }
        let uniform = vec![1.0 / n as f64; n];
        let kind = match config {
            StrategyConfig::Ftl => KindState::Level {
                gram: Gram::new(n),
                penalty: CompiledPenalty::None,
                pen_coef: 0.0,
                pi: None,
                next_theta: uniform,
            },
            StrategyConfig::WeightedFtl { pi } => {
                let pi = pi.as_ref().ok_or_else(|| {
                    Error::Invalid(
                        "weighted_ftl needs a timing density pi (the runner injects it from a timing spec)"
                            .into(),
                    )
                })?;
                if pi.len() < horizon {
                    return Err(Error::Invalid(format!(
                        "timing density has {} entries for horizon {horizon}",
                        pi.len()
                    )));
                }
                if pi.iter().any(|v| !v.is_finite() || *v < 0.0) {
                    return Err(Error::Invalid("timing density must be nonnegative and finite".into()));
                }
                KindState::Level {
                    gram: Gram::new(n),
                    penalty: CompiledPenalty::None,
                    pen_coef: 0.0,
                    pi: Some(pi.clone()),
                    next_theta: uniform,
                }
            }
            StrategyConfig::Ftrl { penalty, loss } => {
                if penalty.is_none() {
                    return Err(Error::Invalid(
                        "ftrl requires a penalty; use the ftl strategy for the unregularized fit".into(),
                    ));
                }
                let compiled = CompiledPenalty::compile(penalty, n)?;
                let eta = match penalty.eta() {
                    Some(eta) => {
                        if !(eta.is_finite() && eta > 0.0) {
                            return Err(Error::Invalid(format!(
                                "penalty eta must be positive, got {eta}"
                            )));
                        }
                        eta
                    }
                    None => default_eta(penalty, n, horizon)?,
                };
                match loss {
                    Loss::Squared => {
                        // Solve Σ½(·)² + (1/η)Φ in the Gram form P = G, q = h.
                        let next_theta = Gram::new(n).solve(&compiled, 1.0 / eta, &vec![1.0 / n as f64; n])?;
                        KindState::Level {
                            gram: Gram::new(n),
                            penalty: compiled,
                            pen_coef: 1.0 / eta,
                            pi: None,
                            next_theta,
                        }
                    }
                    Loss::Absolute => {
                        let next_theta =
                            solve_absolute(n, &[], &[], &compiled, 1.0 / eta, None, 1e-6)?;
                        KindState::AbsFtrl {
                            targets: Vec::new(),
                            rows: Vec::new(),
                            penalty: compiled,
                            pen_coef: 1.0 / eta,
                            admm: AbsoluteState::new(n),
                            next_theta,
                        }
                    }
                }
            }
            StrategyConfig::DifferencedSc => KindState::Differenced {
                means: PastMeans::new(n),
                gram: Gram::new(n),
                next_theta: uniform,
            },
            StrategyConfig::DemeanedSc => {
                KindState::Affine { gram: AffineGram::new(n), next: (0.0, uniform) }
            }
            StrategyConfig::FirstDiffSc => {
                KindState::FirstDiff { last: None, gram: Gram::new(n), next_theta: uniform }
            }
            StrategyConfig::FixedWeights { theta } => {
                KindState::FixedLevel { theta: validate_simplex_vector(theta, n, "fixed weights")? }
            }
            StrategyConfig::UniformDid => {
                KindState::Twfe { w: uniform, means: PastMeans::new(n) }
            }
            StrategyConfig::TwfeFixedW { w } => KindState::Twfe {
                w: validate_simplex_vector(w, n, "unit weights")?,
                means: PastMeans::new(n),
            },
            StrategyConfig::Flh { alpha, base } => {
                let alpha = alpha.unwrap_or(0.25);
                if !(alpha.is_finite() && alpha > 0.0) {
                    return Err(Error::Invalid(format!("flh alpha must be positive, got {alpha}")));
                }
                let base_cfg = base.clone().map_or(StrategyConfig::Ftl, |b| *b);
                let first = StrategyState::new(&base_cfg, n, horizon)?;
                KindState::Flh {
                    alpha,
                    base: Box::new(base_cfg),
                    experts: vec![first],
                    log_probs: vec![0.0],
                }
            }
        };
        Ok(StrategyState { config: config.clone(), n, horizon, t_next: 1, kind })
    }

    /// Number of controls this instance is bound to.
    pub fn controls(&self) -> usize {
        self.n
    }

    /// The 1-based period the next prediction refers to.
    pub fn period(&self) -> usize {
        self.t_next
    }

    pub fn config(&self) -> &StrategyConfig {
        &self.config
    }

    /// Mixture probabilities over the experts (FLH only).
    pub fn mixture_probs(&self) -> Option<Vec<f64>> {
        match &self.kind {
            KindState::Flh { log_probs, .. } => {
                Some(log_probs.iter().map(|lp| lp.exp()).collect())
            }
            _ => None,
        }
    }

    fn check_controls(&self, controls: &[f64]) -> Result<()> {
        if controls.len() != self.n {
            return Err(Error::Invalid(format!(
                "got {} controls, strategy is bound to {}",
                controls.len(),
                self.n
            )));
        }
        if controls.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid("controls contain non-finite values".into()));
        }
        Ok(())
    }

    /// Predicts the treated outcome for the current period from the current
    /// controls. Pure: the weights were fixed by past data alone.
    pub fn predict(&self, controls: &[f64]) -> Result<(Weights, f64)> {
        self.check_controls(controls)?;
        Ok(match &self.kind {
            KindState::Level { next_theta, .. } | KindState::AbsFtrl { next_theta, .. } => {
                let w = Weights { theta: next_theta.clone(), intercept: None };
                let y = w.evaluate(controls);
                (w, y)
            }
            KindState::Differenced { means, next_theta, .. } => {
                let transformed = means.transform_controls(controls);
                let w = Weights { theta: next_theta.clone(), intercept: None };
                let y = means.treated_mean() + w.evaluate(&transformed);
                (w, y)
            }
            KindState::Affine { next, .. } => {
                let w = Weights { theta: next.1.clone(), intercept: Some(next.0) };
                let y = w.evaluate(controls);
                (w, y)
            }
            KindState::FirstDiff { last, next_theta, .. } => {
                let w = Weights { theta: next_theta.clone(), intercept: None };
                let y = match last {
                    None => w.evaluate(controls),
                    Some((y0_prev, y_prev)) => {
                        let diffs: Vec<f64> =
                            controls.iter().zip(y_prev).map(|(a, b)| a - b).collect();
                        y0_prev + w.evaluate(&diffs)
                    }
                };
                (w, y)
            }
            KindState::FixedLevel { theta } => {
                let w = Weights { theta: theta.clone(), intercept: None };
                let y = w.evaluate(controls);
                (w, y)
            }
            KindState::Twfe { w, means } => {
                let transformed = means.transform_controls(controls);
                let weights = Weights { theta: w.clone(), intercept: None };
                let y = means.treated_mean()
                    + transformed.iter().zip(w).map(|(a, b)| a * b).sum::<f64>();
                (weights, y)
            }
            KindState::Flh { experts, log_probs, .. } => {
                let mut theta = vec![0.0; self.n];
                let mut intercept_acc = 0.0;
                let mut any_intercept = false;
                let mut y = 0.0;
                for (expert, lp) in experts.iter().zip(log_probs) {
                    let p = lp.exp();
                    let (w, y_j) = expert.predict(controls)?;
                    for (acc, th) in theta.iter_mut().zip(&w.theta) {
                        *acc += p * th;
                    }
                    if let Some(b) = w.intercept {
                        intercept_acc += p * b;
                        any_intercept = true;
                    }
                    y += p * y_j;
                }
                let w = Weights {
                    theta,
                    intercept: if any_intercept { Some(intercept_acc) } else { None },
                };
                (w, y)
            }
        })
    }

    /// Folds in the realized period and pre-solves the next weights.
    pub fn update(&mut self, treated: f64, controls: &[f64]) -> Result<()> {
        self.check_controls(controls)?;
        if !treated.is_finite() {
            return Err(Error::Invalid("treated outcome must be finite".into()));
        }
        if self.t_next > self.horizon {
            return Err(Error::Invalid(format!(
                "period {} is past the declared horizon {}",
                self.t_next, self.horizon
            )));
        }
        if matches!(self.kind, KindState::Flh { .. }) {
            return self.update_flh(treated, controls);
        }
        let t = self.t_next;
        match &mut self.kind {
            KindState::Level { gram, penalty, pen_coef, pi, next_theta } => {
                let weight = match pi {
                    Some(pi) => pi[t - 1],
                    None => 1.0,
                };
                gram.add(controls, treated, weight);
                *next_theta = gram.solve(penalty, *pen_coef, next_theta)?;
            }
            KindState::AbsFtrl { targets, rows, penalty, pen_coef, admm, next_theta } => {
                targets.push(treated);
                rows.push(controls.to_vec());
                *next_theta =
                    solve_absolute(self.n, targets, rows, penalty, *pen_coef, Some(admm), 1e-6)?;
            }
            KindState::Differenced { means, gram, next_theta } => {
                let row = means.transform_controls(controls);
                let target = treated - means.treated_mean();
                gram.add(&row, target, 1.0);
                *next_theta = gram.solve(&CompiledPenalty::None, 0.0, next_theta)?;
                means.absorb(treated, controls);
            }
            KindState::Affine { gram, next } => {
                gram.add(controls, treated);
                *next = gram.solve((next.0, &next.1))?;
            }
            KindState::FirstDiff { last, gram, next_theta } => {
                let (row, target) = match last {
                    None => (controls.to_vec(), treated),
                    Some((y0_prev, y_prev)) => (
                        controls.iter().zip(y_prev.iter()).map(|(a, b)| a - b).collect(),
                        treated - *y0_prev,
                    ),
                };
                gram.add(&row, target, 1.0);
                *next_theta = gram.solve(&CompiledPenalty::None, 0.0, next_theta)?;
                *last = Some((treated, controls.to_vec()));
            }
            KindState::FixedLevel { .. } => {}
            KindState::Twfe { means, .. } => {
                means.absorb(treated, controls);
            }
            KindState::Flh { .. } => unreachable!("handled above"),
        }
        self.t_next = t + 1;
        Ok(())
    }

    fn update_flh(&mut self, treated: f64, controls: &[f64]) -> Result<()> {
        let t = self.t_next;
        let (alpha, base_cfg) = match &self.kind {
            KindState::Flh { alpha, base, .. } => (*alpha, base.as_ref().clone()),
            _ => unreachable!(),
        };
        // The expert that will start predicting at t + 1 is built before the
        // mixture is touched so a construction failure leaves the state intact.
        let newborn = if t < self.horizon {
            Some(StrategyState::new(&base_cfg, self.n, self.horizon)?)
        } else {
            None
        };
        if let KindState::Flh { experts, log_probs, .. } = &mut self.kind {
            let mut losses = Vec::with_capacity(experts.len());
            for expert in experts.iter() {
                let (_, y_j) = expert.predict(controls)?;
                let d = treated - y_j;
                losses.push(0.5 * d * d);
            }
            flh_reweight_log(log_probs, &losses, alpha)?;
            for expert in experts.iter_mut() {
                expert.update(treated, controls)?;
            }
            if let Some(fresh) = newborn {
                let born = (t + 1) as f64;
                let keep = (1.0 - 1.0 / born).ln();
                for lp in log_probs.iter_mut() {
                    *lp += keep;
                }
                log_probs.push(-born.ln());
                experts.push(fresh);
            }
        }
        self.t_next = t + 1;
        Ok(())
    }
}

/// In-place exponential reweighting of log probabilities by `exp(-α·loss)`,
/// followed by normalization (log-sum-exp for stability).
fn flh_reweight_log(log_probs: &mut [f64], losses: &[f64], alpha: f64) -> Result<()> {
    if log_probs.len() != losses.len() {
        return Err(Error::Invalid(format!(
            "{} probabilities for {} losses",
            log_probs.len(),
            losses.len()
        )));
    }
    for (lp, loss) in log_probs.iter_mut().zip(losses) {
        if !loss.is_finite() {
            return Err(Error::Invalid("expert losses must be finite".into()));
        }
        *lp -= alpha * loss;
    }
    let max = log_probs.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + log_probs.iter().map(|lp| (lp - max).exp()).sum::<f64>().ln();
    for lp in log_probs.iter_mut() {
        *lp -= lse;
    }
    Ok(())
}

/// One mixture step: reweights the expert probabilities by their losses, then
/// admits the next period's newborn expert with probability `1/(t+1)` (where
/// `t = probs.len()` is the current period), scaling the others accordingly.
/// Returns the extended probability vector.
///
/// ```
/// // At t = 1 the lone expert keeps everything until the newcomer takes 1/2.
/// let p = synthreg::strategies::flh_step(&[1.0], &[0.3], 0.25).unwrap();
/// assert!((p[0] - 0.5).abs() < 1e-12 && (p[1] - 0.5).abs() < 1e-12);
/// ```
pub fn flh_step(probs: &[f64], losses: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if probs.is_empty() {
        return Err(Error::Invalid("probability vector is empty".into()));
    }
    if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Invalid("probabilities must be nonnegative and finite".into()));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Invalid(format!("alpha must be positive, got {alpha}")));
    }
    let mut log_probs: Vec<f64> =
        probs.iter().map(|p| if *p > 0.0 { p.ln() } else { f64::NEG_INFINITY }).collect();
    flh_reweight_log(&mut log_probs, losses, alpha)?;
    let born = probs.len() + 1;
    let keep = 1.0 - 1.0 / born as f64;
    let mut out: Vec<f64> = log_probs.iter().map(|lp| keep * lp.exp()).collect();
    out.push(1.0 / born as f64);
    Ok(out)
}

/// Simplex least-squares weights on the history, with per-period weights.
pub fn weighted_ftl_weights(
    n: usize,
    targets: &[f64],
    rows: &[Vec<f64>],
    pi: &[f64],
) -> Result<Vec<f64>> {
    crate::simplex::solve_constrained_ls(
        n,
        targets,
        rows,
        &LsOptions { sample_weights: Some(pi), ..Default::default() },
    )
}

/// Regularized-leader weights on the history: minimizes
/// `Σ ℓ(θ'v_s, a_s) + (1/η)Φ(θ)` with `ℓ` the half-squared or absolute loss.
/// `horizon` feeds the default `η` when the penalty does not fix one.
pub fn ftrl_weights(
    n: usize,
    targets: &[f64],
    rows: &[Vec<f64>],
    penalty: &PenaltySpec,
    loss: Loss,
    horizon: usize,
) -> Result<Vec<f64>> {
    if penalty.is_none() {
        return Err(Error::Invalid(
            "ftrl requires a penalty; use solve_constrained_ls for the plain fit".into(),
        ));
    }
    let eta = match penalty.eta() {
        Some(eta) => eta,
        None => default_eta(penalty, n, horizon)?,
    };
    if !(eta.is_finite() && eta > 0.0) {
        return Err(Error::Invalid(format!("penalty eta must be positive, got {eta}")));
    }
    match loss {
        Loss::Squared => {
            let mut spec = penalty.clone();
            match &mut spec {
                PenaltySpec::None => unreachable!(),
                PenaltySpec::Ridge { eta: e }
                | PenaltySpec::Entropy { eta: e }
                | PenaltySpec::Quadratic { eta: e, .. } => *e = Some(eta),
            }
            crate::simplex::solve_constrained_ls(
                n,
                targets,
                rows,
                &LsOptions { penalty: spec, ..Default::default() },
            )
        }
        Loss::Absolute => {
            let compiled = CompiledPenalty::compile(penalty, n)?;
            solve_absolute(n, targets, rows, &compiled, 1.0 / eta, None, 1e-6)
        }
    }
}

/// Two-way fixed-effects forecast with fixed unit weights `w`: the treated
/// unit's past mean plus the weighted control deviations from their own past
/// means. At the first period (empty history) this degenerates to `w'y`.
pub fn twfe_predict(
    w: &[f64],
    treated_history: &[f64],
    control_history: &[Vec<f64>],
    current_controls: &[f64],
) -> Result<f64> {
    let n = current_controls.len();
    let w = validate_simplex_vector(w, n, "unit weights")?;
    if treated_history.len() != control_history.len() {
        return Err(Error::Invalid(format!(
            "{} treated periods but {} control rows",
            treated_history.len(),
            control_history.len()
        )));
    }
    let mut means = PastMeans::new(n);
    for (y0, row) in treated_history.iter().zip(control_history) {
        if row.len() != n {
            return Err(Error::Invalid("control history rows must match the control count".into()));
        }
        means.absorb(*y0, row);
    }
    let transformed = means.transform_controls(current_controls);
    Ok(means.treated_mean() + transformed.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>())
}

/// The same forecast obtained the long way: a weighted two-way fixed-effects
/// regression (unit and period effects) solved by pseudoinverse, predicting
/// `μ₀ + α_S`. Kept as an independent check on [`twfe_predict`]; requires at
/// least one history period so the treated effect is identified.
pub fn twfe_direct_ls(
    w: &[f64],
    treated_history: &[f64],
    control_history: &[Vec<f64>],
    current_controls: &[f64],
) -> Result<f64> {
    let n = current_controls.len();
    let w = validate_simplex_vector(w, n, "unit weights")?;
    let s = treated_history.len() + 1;
    if s < 2 {
        return Err(Error::Invalid(
            "the direct fixed-effects solve needs at least one history period".into(),
        ));
    }
    if control_history.len() != s - 1 {
        return Err(Error::Invalid(format!(
            "{} control rows for {} history periods",
            control_history.len(),
            s - 1
        )));
    }
    // Parameters: [μ_0 .. μ_N, α_1 .. α_S]. Observations enter as
    // √weight-scaled design rows so the pseudoinverse acts on the design
    // itself; forming normal equations would square its conditioning.
    let params = (n + 1) + s;
    let mut obs: Vec<(usize, usize, f64, f64)> = Vec::with_capacity(s * (n + 1));
    let mut add_obs = |unit: usize, period: usize, weight: f64, y: f64| {
        if weight > 0.0 {
            obs.push((unit, period, weight, y));
        }
    };
    for t in 1..s {
        add_obs(0, t, 1.0, treated_history[t - 1]);
        for i in 1..=n {
            add_obs(i, t, w[i - 1], control_history[t - 1][i - 1]);
        }
    }
    for i in 1..=n {
        if current_controls[i - 1].is_finite() {
            add_obs(i, s, w[i - 1], current_controls[i - 1]);
        }
    }
    let mut design = nalgebra::DMatrix::<f64>::zeros(obs.len(), params);
    let mut target = nalgebra::DVector::<f64>::zeros(obs.len());
    for (row, (unit, period, weight, y)) in obs.iter().enumerate() {
        let scale = weight.sqrt();
        design[(row, *unit)] = scale;
        design[(row, n + 1 + (period - 1))] = scale;
        target[row] = scale * y;
    }
    let svd = design.svd(true, true);
    let beta = svd
        .solve(&target, 1e-10)
        .map_err(|e| Error::Invalid(format!("fixed-effects solve failed: {e}")))?;
    Ok(beta[0] + beta[n + 1 + (s - 1)])
}

/// Worst-case panel for any fixed simplex weights: every period the controls
/// sit at `sign(θ̃ - θ)` for the alternative vertex `θ̃ = e_j` (the smallest
/// coordinate of `θ`, ties to the first), and the treated outcome is `θ̃`'s
/// own prediction. `θ̃` then fits perfectly while `θ` pays
/// `‖θ̃ - θ‖₁² ≥ 1 ≥ ε` every period. Returns the panel and `θ̃`.
pub fn fixed_adversary_response(
    theta: &[f64],
    eps: f64,
    horizon: usize,
) -> Result<(Panel, Vec<f64>)> {
    let n = theta.len();
    if n < 2 {
        return Err(Error::Invalid(
            "the fixed-weights adversary needs at least two controls to pick an alternative vertex"
                .into(),
        ));
    }
    if horizon == 0 {
        return Err(Error::Invalid("horizon must be at least 1".into()));
    }
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::Invalid(format!(
            "separation eps must be in (0, 1], got {eps} (the construction guarantees at least 1)"
        )));
    }
    let theta = validate_simplex_vector(theta, n, "theta")?;
    let mut j = 0;
    for (i, v) in theta.iter().enumerate() {
        if *v < theta[j] {
            j = i;
        }
    }
    let mut theta_tilde = vec![0.0; n];
    theta_tilde[j] = 1.0;
    // sign(0) breaks upward so the response is always a ±1 vertex.
    let response: Vec<f64> = theta_tilde
        .iter()
        .zip(&theta)
        .map(|(a, b)| if a - b >= 0.0 { 1.0 } else { -1.0 })
        .collect();
    let treated_value: f64 = response[j];
    let treated = vec![treated_value; horizon];
    let controls: Vec<Vec<f64>> = response.iter().map(|v| vec![*v; horizon]).collect();
    let panel = Panel::with_bound(treated, controls, 1.0)?;
    Ok((panel, theta_tilde))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_controls(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn ftl_single_control_tracks_exactly() {
        let mut state = StrategyState::new(&StrategyConfig::Ftl, 1, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 1..=10 {
            let y = rng.gen::<f64>();
            let (w, pred) = state.predict(&[y]).unwrap();
            assert_eq!(w.theta, vec![1.0]);
            assert_eq!(pred, y);
            state.update(rng.gen::<f64>(), &[y]).unwrap();
        }
    }

    #[test]
    fn first_prediction_uses_uniform_weights() {
        for config in [
            StrategyConfig::Ftl,
            StrategyConfig::DifferencedSc,
            StrategyConfig::FirstDiffSc,
            StrategyConfig::UniformDid,
            StrategyConfig::Flh { alpha: None, base: None },
        ] {
            let state = StrategyState::new(&config, 4, 5).unwrap();
            let (w, pred) = state.predict(&[0.8, -0.4, 0.2, 0.6]).unwrap();
            for v in &w.theta {
                assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-12);
            }
            assert_abs_diff_eq!(pred, (0.8 - 0.4 + 0.2 + 0.6) / 4.0, epsilon = 1e-12);
        }
        let state = StrategyState::new(&StrategyConfig::DemeanedSc, 4, 5).unwrap();
        let (w, _) = state.predict(&[0.8, -0.4, 0.2, 0.6]).unwrap();
        assert_eq!(w.intercept, Some(0.0));
    }

    #[test]
    fn predictions_ignore_current_treated_outcome() {
        // θ_t is fixed before the treated outcome at t is revealed: feeding a
        // different treated value at t must not change the prediction at t.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for config in [
            StrategyConfig::Ftl,
            StrategyConfig::DifferencedSc,
            StrategyConfig::DemeanedSc,
            StrategyConfig::FirstDiffSc,
            StrategyConfig::Flh { alpha: None, base: None },
        ] {
            let mut a = StrategyState::new(&config, 3, 8).unwrap();
            let mut b = StrategyState::new(&config, 3, 8).unwrap();
            for t in 1..=7 {
                let controls = random_controls(&mut rng, 3);
                let (_, pa) = a.predict(&controls).unwrap();
                let (_, pb) = b.predict(&controls).unwrap();
                assert_abs_diff_eq!(pa, pb, epsilon = 1e-12);
                let y0 = rng.gen::<f64>();
                // Histories stay identical except at the final period.
                let (ya, yb) = if t == 7 { (y0, y0 + 0.5) } else { (y0, y0) };
                a.update(ya, &controls).unwrap();
                b.update(yb, &controls).unwrap();
            }
        }
    }

    #[test]
    fn differenced_prediction_hand_value() {
        // Treated history (0, 1), single control history (1, 2), current 3:
        // past means 0.5 and 1.5, so the forecast is 0.5 + (3 - 1.5) = 2.
        let mut state = StrategyState::new(&StrategyConfig::DifferencedSc, 1, 3).unwrap();
        state.update(0.0, &[1.0]).unwrap();
        state.update(1.0, &[2.0]).unwrap();
        let (_, pred) = state.predict(&[3.0]).unwrap();
        assert_abs_diff_eq!(pred, 2.0, epsilon = 1e-12);
    }

    #[test]
    fn twfe_predict_hand_value_and_single_unit() {
        let pred = twfe_predict(&[1.0], &[0.0, 1.0], &[vec![1.0], vec![2.0]], &[3.0]).unwrap();
        assert_abs_diff_eq!(pred, 2.0, epsilon = 1e-12);
        // Empty history degenerates to w'y.
        let pred = twfe_predict(&[0.25, 0.75], &[], &[], &[0.4, -0.4]).unwrap();
        assert_abs_diff_eq!(pred, 0.25 * 0.4 - 0.75 * 0.4, epsilon = 1e-12);
        assert!(twfe_predict(&[0.5, 0.6], &[], &[], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn twfe_direct_ls_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let n = rng.gen_range(2..5);
            let t = rng.gen_range(2..8);
            let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
            let total: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|v| v / total).collect();
            let treated: Vec<f64> = (0..t - 1).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            let rows: Vec<Vec<f64>> = (0..t - 1).map(|_| random_controls(&mut rng, n)).collect();
            let current = random_controls(&mut rng, n);
            let fast = twfe_predict(&w, &treated, &rows, &current).unwrap();
            let slow = twfe_direct_ls(&w, &treated, &rows, &current).unwrap();
            assert_abs_diff_eq!(fast, slow, epsilon = 1e-8);
        }
    }

    #[test]
    fn flh_step_trace() {
        let p = flh_step(&[1.0], &[0.7], 0.25).unwrap();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.5, epsilon = 1e-12);
        // Losses tilt the surviving mass before the newcomer arrives.
        let p = flh_step(&[0.5, 0.5], &[0.0, 2.0], 0.25).unwrap();
        assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(p[2], 1.0 / 3.0, epsilon = 1e-12);
        assert!(p[0] > p[1]);
        let ratio = p[0] / p[1];
        assert_abs_diff_eq!(ratio, (0.25_f64 * 2.0).exp(), epsilon = 1e-9);
    }

    #[test]
    fn flh_probabilities_stay_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut state =
            StrategyState::new(&StrategyConfig::Flh { alpha: Some(0.25), base: None }, 3, 20)
                .unwrap();
        for t in 1..=20 {
            let probs = state.mixture_probs().unwrap();
            assert_eq!(probs.len(), t);
            assert!(probs.iter().all(|p| *p >= 0.0));
            assert_abs_diff_eq!(probs.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            if t > 1 {
                assert_abs_diff_eq!(probs[t - 1], 1.0 / t as f64, epsilon = 1e-9);
            }
            let controls = random_controls(&mut rng, 3);
            let (w, _) = state.predict(&controls).unwrap();
            assert_abs_diff_eq!(w.theta.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            assert!(w.theta.iter().all(|v| *v >= -1e-12));
            state.update(rng.gen::<f64>() * 2.0 - 1.0, &controls).unwrap();
        }
    }

    #[test]
    fn fixed_adversary_hand_values() {
        let (panel, tilde) = fixed_adversary_response(&[1.0, 0.0], 5e-5, 4).unwrap();
        assert_eq!(tilde, vec![0.0, 1.0]);
        assert_eq!(panel.treated(), &[1.0; 4]);
        assert_eq!(panel.control_series(1), &[-1.0; 4]);
        assert_eq!(panel.control_series(2), &[1.0; 4]);
        // The fixed weights pay ‖θ̃ - θ‖₁² = 4 every period.
        let fixed_loss = (1.0 - (1.0 * -1.0 + 0.0 * 1.0)) as f64;
        assert_abs_diff_eq!(fixed_loss * fixed_loss, 4.0, epsilon = 1e-12);
        assert!(fixed_adversary_response(&[1.0], 0.5, 4).is_err());
        assert!(fixed_adversary_response(&[0.5, 0.5], 2.0, 4).is_err());
    }

    #[test]
    fn ftrl_entropy_stays_interior() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut state = StrategyState::new(
            &StrategyConfig::Ftrl { penalty: PenaltySpec::Entropy { eta: None }, loss: Loss::Squared },
            4,
            30,
        )
        .unwrap();
        for _ in 1..=30 {
            let controls = random_controls(&mut rng, 4);
            let (w, _) = state.predict(&controls).unwrap();
            assert!(w.theta.iter().all(|v| *v > 0.0), "entropy weights hit the boundary: {w:?}");
            state.update(rng.gen::<f64>() * 2.0 - 1.0, &controls).unwrap();
        }
    }

    #[test]
    fn demeaned_equals_explicit_demeaning_route() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..10 {
            let n = 3;
            let t = 12;
            let mut state = StrategyState::new(&StrategyConfig::DemeanedSc, n, t).unwrap();
            let mut treated = Vec::new();
            let mut rows: Vec<Vec<f64>> = Vec::new();
            for _ in 1..t {
                let controls = random_controls(&mut rng, n);
                let y0 = rng.gen::<f64>() * 2.0 - 1.0;
                state.update(y0, &controls).unwrap();
                treated.push(y0);
                rows.push(controls);
            }
            let current = random_controls(&mut rng, n);
            let (_, fast) = state.predict(&current).unwrap();
            // Explicit route: demean history by past means, fit weights only,
            // predict ȳ₀ + θ'(y_t - ȳ).
            let count = treated.len() as f64;
            let mean0: f64 = treated.iter().sum::<f64>() / count;
            let means: Vec<f64> =
                (0..n).map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / count).collect();
            let demeaned_targets: Vec<f64> = treated.iter().map(|y| y - mean0).collect();
            let demeaned_rows: Vec<Vec<f64>> = rows
                .iter()
                .map(|r| r.iter().zip(&means).map(|(a, b)| a - b).collect())
                .collect();
            let theta = crate::simplex::solve_constrained_ls(
                n,
                &demeaned_targets,
                &demeaned_rows,
                &LsOptions::default(),
            )
            .unwrap();
            let explicit = mean0
                + theta
                    .iter()
                    .zip(current.iter().zip(&means))
                    .map(|(th, (y, m))| th * (y - m))
                    .sum::<f64>();
            assert_abs_diff_eq!(fast, explicit, epsilon = 1e-6);
        }
    }

    #[test]
    fn update_past_horizon_is_rejected() {
        let mut state = StrategyState::new(&StrategyConfig::Ftl, 2, 2).unwrap();
        state.update(0.1, &[0.0, 0.0]).unwrap();
        state.update(0.1, &[0.0, 0.0]).unwrap();
        assert!(state.update(0.1, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn config_labels() {
        assert_eq!(StrategyConfig::Ftl.label(), "ftl");
        assert_eq!(
            StrategyConfig::Ftrl {
                penalty: PenaltySpec::Ridge { eta: None },
                loss: Loss::Absolute
            }
            .label(),
            "ftrl_ridge_absolute"
        );
        assert_eq!(
            StrategyConfig::Flh { alpha: None, base: Some(Box::new(StrategyConfig::Ftl)) }.label(),
            "flh(ftl)"
        );
    }

    #[test]
    fn config_json_round_trip() {
        let configs = vec![
            StrategyConfig::Ftl,
            StrategyConfig::WeightedFtl { pi: None },
            StrategyConfig::Ftrl { penalty: PenaltySpec::Entropy { eta: Some(0.1) }, loss: Loss::Absolute },
            StrategyConfig::FixedWeights { theta: vec![0.5, 0.5] },
            StrategyConfig::Flh { alpha: Some(0.5), base: Some(Box::new(StrategyConfig::DifferencedSc)) },
        ];
        for c in configs {
            let json = serde_json::to_string(&c).unwrap();
            let back: StrategyConfig = serde_json::from_str(&json).unwrap();
            assert_eq!(c, back);
        }
        let parsed: StrategyConfig = serde_json::from_str(r#"{"kind":"ftl"}"#).unwrap();
        assert_eq!(parsed, StrategyConfig::Ftl);
    }
}
