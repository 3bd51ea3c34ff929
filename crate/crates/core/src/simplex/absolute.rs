//! Absolute-loss fits over the simplex.
//!
//! Three routes, chosen by problem shape:
//! - two controls: the problem is one-dimensional and piecewise convex, so a
//!   subderivative bisection nails the minimizer to machine precision;
//! - three or more controls with a penalty (the regularized strategy path):
//!   ADMM with an `ℓ₁` residual split, whose weight step reuses the
//!   projected-gradient quadratic solver. The penalty's strong convexity
//!   makes the splitting converge linearly; it is run to a 1e-6 residual
//!   tolerance, far below the slack the regret accounting tolerates;
//! - no penalty (the ex-post oracle, in particular): an exact two-phase
//!   simplex method on the standard LP reformulation. Regret must never be
//!   underestimated by an inexact oracle, so this path is combinatorial
//!   rather than iterative.

use super::{solve_quad, CompiledPenalty, QuadProblem};
use crate::error::{Error, Result};

/// Persistent ADMM variables so repeated fits on a growing history warm-start.
#[derive(Debug, Clone)]
pub(crate) struct AbsoluteState {
    residual: Vec<f64>,
    dual: Vec<f64>,
    pub(crate) theta: Vec<f64>,
    rho: f64,
}

impl AbsoluteState {
    pub(crate) fn new(n: usize) -> Self {
        AbsoluteState {
            residual: Vec::new(),
            dual: Vec::new(),
            theta: vec![1.0 / n as f64; n],
            rho: 1.0,
        }
    }
}

/// Minimizes `Σ_t |targets_t - θ'rows_t| + pen_coef·Φ(θ)` over the simplex.
pub(crate) fn solve_absolute(
    n: usize,
    targets: &[f64],
    rows: &[Vec<f64>],
    penalty: &CompiledPenalty,
    pen_coef: f64,
    state: Option<&mut AbsoluteState>,
    tol: f64,
) -> Result<Vec<f64>> {
    if n == 1 {
        return Ok(vec![1.0]);
    }
    if targets.is_empty() {
        if !matches!(penalty, CompiledPenalty::Quadratic { .. }) {
            return Ok(vec![1.0 / n as f64; n]);
        }
        let p = vec![0.0; n * n];
        let q = vec![0.0; n];
        let prob = QuadProblem {
            dim: n,
            p: &p,
            q: &q,
            penalty,
            pen_coef: pen_coef.max(1.0),
            intercept: false,
            tol: 1e-10,
        };
        return solve_quad(&prob, None);
    }
    if n == 2 {
        return Ok(bisect_two_controls(targets, rows, penalty, pen_coef));
    }
    if pen_coef == 0.0 {
        // Without a strongly convex penalty the splitting scheme below only
        // converges sublinearly; the problem is a plain linear program, so
        // solve it exactly instead.
        return solve_l1_oracle(n, targets, rows).map(|(theta, _)| theta);
    }
    let mut local;
    let state = match state {
        Some(s) => s,
        None => {
            local = AbsoluteState::new(n);
            &mut local
        }
    };
    admm(n, targets, rows, penalty, pen_coef, state, tol)
}

/// One-dimensional bisection on the subderivative of
/// `s ↦ Σ|c_t - s·d_t| + pen_coef·φ(s)` with `θ = (s, 1-s)`.
fn bisect_two_controls(
    targets: &[f64],
    rows: &[Vec<f64>],
    penalty: &CompiledPenalty,
    pen_coef: f64,
) -> Vec<f64> {
    let c: Vec<f64> = targets.iter().zip(rows).map(|(a, v)| a - v[1]).collect();
    let d: Vec<f64> = rows.iter().map(|v| v[0] - v[1]).collect();
    let slope = |s: f64| -> f64 {
        let mut g = 0.0;
        for (ct, dt) in c.iter().zip(&d) {
            let r = ct - s * dt;
            if r > 0.0 {
                g -= dt;
            } else if r < 0.0 {
                g += dt;
            }
        }
        if pen_coef != 0.0 {
            g += pen_coef * penalty.dir_grad(&[s, 1.0 - s], &[1.0, -1.0]);
        }
        g
    };
    if slope(0.0) >= 0.0 {
        return vec![0.0, 1.0];
    }
    if slope(1.0) <= 0.0 {
        return vec![1.0, 0.0];
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= f64::EPSILON {
            break;
        }
    }
    let s = 0.5 * (lo + hi);
    vec![s, 1.0 - s]
}

fn admm(
    n: usize,
    targets: &[f64],
    rows: &[Vec<f64>],
    penalty: &CompiledPenalty,
    pen_coef: f64,
    state: &mut AbsoluteState,
    tol: f64,
) -> Result<Vec<f64>> {
    let m = targets.len();
    let tol = if tol > 0.0 { tol } else { 1e-6 };
    if state.theta.len() != n {
        *state = AbsoluteState::new(n);
    }
    // New periods enter with their current residual and a zero dual.
    while state.residual.len() < m {
        let t = state.residual.len();
        let fit: f64 = rows[t].iter().zip(&state.theta).map(|(a, b)| a * b).sum();
        state.residual.push(targets[t] - fit);
        state.dual.push(0.0);
    }
    state.residual.truncate(m);
    state.dual.truncate(m);

    let mut gram = vec![0.0; n * n];
    for row in rows {
        for i in 0..n {
            for j in 0..=i {
                let v = row[i] * row[j];
                gram[i * n + j] += v;
                if i != j {
                    gram[j * n + i] += v;
                }
            }
        }
    }
    let norm_a = targets.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut p = vec![0.0; n * n];
    let mut q = vec![0.0; n];
    let mut fitted = vec![0.0; m];
    let mut prev_resid = vec![0.0; m];
    let mut last_gap = f64::INFINITY;
    let mut pri_checkpoint = f64::INFINITY;

    const ABS_FLOOR: f64 = 1e-10;
    const MAX_OUTER: usize = 60_000;
    for outer in 0..MAX_OUTER {
        let rho = state.rho;
        for (pi, gi) in p.iter_mut().zip(&gram) {
            *pi = rho * gi;
        }
        for (qi, _) in q.iter_mut().zip(0..n) {
            *qi = 0.0;
        }
        for t in 0..m {
            let w = targets[t] - state.residual[t] + state.dual[t];
            for i in 0..n {
                q[i] += rho * w * rows[t][i];
            }
        }
        // Inexact splitting: the weight step only needs accuracy comparable
        // to the current consensus gap, so its tolerance tracks the outer
        // residual instead of running to full precision every round.
        let inner_tol = (0.01 * last_gap).clamp(1e-11, 1e-4);
        let prob = QuadProblem {
            dim: n,
            p: &p,
            q: &q,
            penalty,
            pen_coef,
            intercept: false,
            tol: inner_tol,
        };
        state.theta = solve_quad(&prob, Some(&state.theta))?;

        for t in 0..m {
            fitted[t] = rows[t].iter().zip(&state.theta).map(|(a, b)| a * b).sum();
        }
        prev_resid.copy_from_slice(&state.residual);
        let shrink = 1.0 / rho;
        let mut pri_sq = 0.0;
        const RELAX: f64 = 1.7;
        for t in 0..m {
            // Over-relaxed fit mixes in the previous consensus point.
            let fit_relaxed = RELAX * fitted[t] + (1.0 - RELAX) * (targets[t] - prev_resid[t]);
            let w = targets[t] - fit_relaxed + state.dual[t];
            state.residual[t] = if w > shrink {
                w - shrink
            } else if w < -shrink {
                w + shrink
            } else {
                0.0
            };
            let gap = targets[t] - fit_relaxed - state.residual[t];
            state.dual[t] += gap;
            let true_gap = targets[t] - fitted[t] - state.residual[t];
            pri_sq += true_gap * true_gap;
        }
        let pri = pri_sq.sqrt();
        let mut dual_sq = 0.0;
        let mut dual_scale_sq = 0.0;
        for i in 0..n {
            let mut acc = 0.0;
            let mut acc_u = 0.0;
            for t in 0..m {
                acc += rows[t][i] * (state.residual[t] - prev_resid[t]);
                acc_u += rows[t][i] * state.dual[t];
            }
            dual_sq += (rho * acc) * (rho * acc);
            dual_scale_sq += (rho * acc_u) * (rho * acc_u);
        }
        let dual = dual_sq.sqrt();
        let norm_fit = fitted.iter().map(|x| x * x).sum::<f64>().sqrt();
        let norm_res = state.residual.iter().map(|x| x * x).sum::<f64>().sqrt();
        let eps_pri = (m as f64).sqrt() * ABS_FLOOR + tol * norm_fit.max(norm_res).max(norm_a);
        let eps_dual = (n as f64).sqrt() * ABS_FLOOR + tol * dual_scale_sq.sqrt();
        last_gap = pri.max(dual);
        if pri <= eps_pri && dual <= eps_dual {
            return Ok(state.theta.clone());
        }
        if outer % 10 == 9 {
            if pri > 5.0 * dual {
                state.rho *= 2.0;
                for u in state.dual.iter_mut() {
                    *u *= 0.5;
                }
            } else if dual > 5.0 * pri {
                state.rho *= 0.5;
                for u in state.dual.iter_mut() {
                    *u *= 2.0;
                }
            }
        }
        // The balanced region can still converge too slowly when the penalty
        // parameter sits on the wrong side of it; if a long window brings no
        // real progress, force a step toward whichever residual lags.
        if outer % 2000 == 1999 {
            if pri > 0.5 * pri_checkpoint && state.rho.abs() < 1e6 {
                let scale = if pri >= dual { 2.0 } else { 0.5 };
                state.rho *= scale;
                for u in state.dual.iter_mut() {
                    *u /= scale;
                }
            }
            pri_checkpoint = pri;
        }
    }
    Err(Error::Solver {
        msg: "absolute-loss splitting reached its iteration limit".into(),
        iterations: MAX_OUTER,
        kkt_residual: last_gap,
        last_iterate: state.theta.clone(),
    })
}

/// Exact minimizer of `Σ_t |targets_t - θ'rows_t|` over the simplex, via the
/// standard linear-program reformulation with split residuals, solved by a
/// dense two-phase simplex method. Returns the weights and the objective
/// recomputed at them.
pub(crate) fn solve_l1_oracle(n: usize, targets: &[f64], rows: &[Vec<f64>]) -> Result<(Vec<f64>, f64)> {
    if n == 0 {
        return Err(Error::Invalid("at least one control is required".into()));
    }
    if n == 1 {
        let theta = vec![1.0];
        let obj = l1_objective(targets, rows, &theta);
        return Ok((theta, obj));
    }
    if targets.is_empty() {
        return Ok((vec![1.0 / n as f64; n], 0.0));
    }
    let periods = targets.len();
    let m = periods + 1;
    let real_cols = n + 2 * periods;
    let total_cols = real_cols + m;

    // Rows: [ v_t | e+ block | e- block | artificials | b ], then Σθ = 1.
    let mut tab = vec![vec![0.0_f64; total_cols + 1]; m + 1];
    for t in 0..periods {
        let flip = if targets[t] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            tab[t][i] = flip * rows[t][i];
        }
        tab[t][n + t] = flip;
        tab[t][n + periods + t] = -flip;
        tab[t][total_cols] = flip * targets[t];
    }
    for i in 0..n {
        tab[m - 1][i] = 1.0;
    }
    tab[m - 1][total_cols] = 1.0;
    let mut basis: Vec<usize> = (0..m).map(|i| real_cols + i).collect();
    for (i, &b) in basis.iter().enumerate() {
        tab[i][b] = 1.0;
    }

    // Phase-1 cost row: minimize the artificial sum, expressed in the initial
    // basis by subtracting every constraint row.
    for j in 0..=total_cols {
        let mut acc = if (real_cols..total_cols).contains(&j) { 1.0 } else { 0.0 };
        for row in tab.iter().take(m) {
            acc -= row[j];
        }
        tab[m][j] = acc;
    }
    pivot_to_optimality(&mut tab, &mut basis, m, real_cols + m, total_cols)?;
    if tab[m][total_cols] < -1e-7 {
        return Err(Error::Solver {
            msg: "absolute-loss program reported infeasible (this should be impossible)".into(),
            iterations: 0,
            kkt_residual: -tab[m][total_cols],
            last_iterate: vec![],
        });
    }
    // Pivot lingering zero-level artificials out where a real column allows it.
    for i in 0..m {
        if basis[i] >= real_cols {
            if let Some(j) = (0..real_cols).find(|&j| tab[i][j].abs() > 1e-7) {
                pivot(&mut tab, &mut basis, i, j, total_cols);
            }
        }
    }

    // Phase-2 cost row for min Σ(e+ + e-).
    let cost = |j: usize| -> f64 {
        if j >= n && j < real_cols {
            1.0
        } else {
            0.0
        }
    };
    for j in 0..=total_cols {
        let mut acc = if j < total_cols { cost(j) } else { 0.0 };
        for i in 0..m {
            acc -= cost(basis[i]) * tab[i][j];
        }
        tab[m][j] = if j < total_cols { acc } else { -acc };
    }
    // The objective cell convention: tab[m][total_cols] = -(current objective).
    {
        let mut obj = 0.0;
        for i in 0..m {
            obj += cost(basis[i]) * tab[i][total_cols];
        }
        tab[m][total_cols] = -obj;
    }
    pivot_to_optimality(&mut tab, &mut basis, m, real_cols, total_cols)?;

    let mut theta = vec![0.0; n];
    for i in 0..m {
        if basis[i] < n {
            theta[basis[i]] = tab[i][total_cols].max(0.0);
        }
    }
    let total: f64 = theta.iter().sum();
    if total > 0.0 {
        for t in theta.iter_mut() {
            *t /= total;
        }
    } else {
        theta = vec![1.0 / n as f64; n];
    }
    let obj = l1_objective(targets, rows, &theta);
    Ok((theta, obj))
}

pub(crate) fn l1_objective(targets: &[f64], rows: &[Vec<f64>], theta: &[f64]) -> f64 {
    targets
        .iter()
        .zip(rows)
        .map(|(a, v)| {
            let fit: f64 = v.iter().zip(theta).map(|(x, y)| x * y).sum();
            (a - fit).abs()
        })
        .sum()
}

fn pivot(tab: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize, rhs: usize) {
    let scale = tab[row][col];
    for v in tab[row].iter_mut() {
        *v /= scale;
    }
    let pivot_row = tab[row].clone();
    for (i, r) in tab.iter_mut().enumerate() {
        if i == row {
            continue;
        }
        let factor = r[col];
        if factor == 0.0 {
            continue;
        }
        for (v, pv) in r.iter_mut().zip(&pivot_row) {
            *v -= factor * pv;
        }
        r[col] = 0.0; // exact zero guards against drift
    }
    let _ = rhs;
    basis[row] = col;
}

/// Runs the simplex method on the tableau until no reduced cost is negative.
/// Columns `>= allowed_cols` are barred from entering (artificials in phase 2).
fn pivot_to_optimality(
    tab: &mut [Vec<f64>],
    basis: &mut [usize],
    m: usize,
    allowed_cols: usize,
    rhs: usize,
) -> Result<()> {
    let mut degenerate_streak = 0usize;
    for _ in 0..200_000 {
        // Exactly degenerate vertices are common here (symmetric columns,
        // repeated kinks), and elimination noise in the cost row grows with
        // every zero-progress pivot; a long streak of them means the vertex
        // is optimal up to that noise, not that progress is still possible.
        if degenerate_streak > 5_000 {
            return Ok(());
        }
        let bland = degenerate_streak > 50;
        let mut entering = None;
        if bland {
            for j in 0..allowed_cols {
                if tab[m][j] < -1e-8 {
                    entering = Some(j);
                    break;
                }
            }
        } else {
            let mut best = -1e-8;
            for j in 0..allowed_cols {
                if tab[m][j] < best {
                    best = tab[m][j];
                    entering = Some(j);
                }
            }
        }
        let Some(j) = entering else { return Ok(()) };
        let mut leaving: Option<(usize, f64)> = None;
        for i in 0..m {
            if tab[i][j] > 1e-9 {
                let ratio = tab[i][rhs] / tab[i][j];
                let better = match leaving {
                    None => true,
                    Some((li, lr)) => {
                        ratio < lr - 1e-12 || (ratio < lr + 1e-12 && basis[i] < basis[li])
                    }
                };
                if better {
                    leaving = Some((i, ratio));
                }
            }
        }
        let Some((i, ratio)) = leaving else {
            return Err(Error::Solver {
                msg: "absolute-loss program is unbounded (this should be impossible)".into(),
                iterations: 0,
                kkt_residual: f64::INFINITY,
                last_iterate: vec![],
            });
        };
        degenerate_streak = if ratio <= 1e-10 { degenerate_streak + 1 } else { 0 };
        pivot(tab, basis, i, j, rhs);
    }
    Err(Error::Solver {
        msg: "simplex method failed to terminate".into(),
        iterations: 200_000,
        kkt_residual: f64::NAN,
        last_iterate: vec![],
    })
}
