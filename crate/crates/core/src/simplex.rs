//! Simplex-constrained least squares: Euclidean projection onto the
//! probability simplex, penalized quadratic solves via accelerated projected
//! gradient, affine variants with a boxed intercept, and brute-force grid
//! references used to validate the solvers.
//!
//! Conventions used throughout:
//! - the feasible set is the probability simplex `Δ = {θ ≥ 0, Σθ = 1}`,
//!   optionally augmented with an intercept clipped to `[-2, 2]`;
//! - squared-loss objectives are written `Σ_s w_s (a_s - θ'v_s)²` plus an
//!   optional penalty `(2/η)·Φ(θ)`, which makes them exactly twice the
//!   half-squared-loss form `Σ ½(·)² + (1/η)Φ` used by the regularized
//!   strategies — same minimizer, simpler bookkeeping;
//! - when no penalty is present, ties are broken toward the minimum-norm
//!   optimum by a fixed Tikhonov term `ε‖θ‖²` with `ε = 1e-10`;
//! - convergence is declared when the projected-gradient norm
//!   `‖θ - P_Δ(θ - ∇J(θ))‖` falls below the tolerance (default `1e-10`).

mod absolute;

pub(crate) use absolute::{solve_absolute, AbsoluteState};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Tie-breaking Tikhonov weight applied when no penalty is configured.
pub(crate) const TIE_EPSILON: f64 = 1e-10;

/// Default projected-gradient tolerance for the quadratic solvers.
pub const DEFAULT_TOLERANCE: f64 = 1e-10;

/// Hard ceiling on accelerated-gradient iterations before reporting failure.
const MAX_ITERS: usize = 200_000;

/// Loss function used when fitting weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    #[default]
    Squared,
    Absolute,
}

/// Regularizer added to the cumulative loss by the regularized strategies.
///
/// `eta` is the learning rate; when omitted, [`default_eta`] supplies the
/// horizon-dependent value the regret guarantees are stated for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PenaltySpec {
    /// No regularization (follow-the-leader).
    #[default]
    None,
    /// `Φ(θ) = ½‖θ‖²`.
    Ridge {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eta: Option<f64>,
    },
    /// Negative entropy shifted to be nonnegative on the simplex:
    /// `Φ(θ) = Σ θ_i ln θ_i + ln N`.
    Entropy {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eta: Option<f64>,
    },
    /// General quadratic `Φ(θ) = ½ (x - Xθ)' H (x - Xθ)`, rescaled internally
    /// so the curvature of `θ ↦ Φ(θ)` has smallest eigenvalue 1. `h` must be
    /// positive semidefinite and `X'HX` positive definite.
    Quadratic {
        h: Vec<Vec<f64>>,
        x: Vec<f64>,
        x_mat: Vec<Vec<f64>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        eta: Option<f64>,
    },
}

impl PenaltySpec {
    /// The configured learning rate, if any.
    pub fn eta(&self) -> Option<f64> {
        match self {
            PenaltySpec::None => None,
            PenaltySpec::Ridge { eta }
            | PenaltySpec::Entropy { eta }
            | PenaltySpec::Quadratic { eta, .. } => *eta,
        }
    }

    /// True for the unregularized variant.
    pub fn is_none(&self) -> bool {
        matches!(self, PenaltySpec::None)
    }
}

/// A penalty with its matrices validated, normalized, and ready to evaluate.
#[derive(Debug, Clone)]
pub(crate) enum CompiledPenalty {
    None,
    Ridge,
    Entropy,
    /// `Φ(θ) = ½ θ'Mθ + lin'θ + constant`, already rescaled so `λ_min(M) = 1`.
    Quadratic { m: Vec<f64>, lin: Vec<f64>, constant: f64 },
}

/// Smoothed `x ln x`: exact for `x ≥ ε`, extended below by its tangent at `ε`
/// so the function stays convex and continuously differentiable when a
/// gradient step briefly leaves the simplex.
fn xlnx(x: f64) -> f64 {
    const EPS: f64 = 1e-12;
    if x >= EPS {
        x * x.ln()
    } else {
        EPS * EPS.ln() + (EPS.ln() + 1.0) * (x - EPS)
    }
}

fn xlnx_grad(x: f64) -> f64 {
    const EPS: f64 = 1e-12;
    x.max(EPS).ln() + 1.0
}

impl CompiledPenalty {
    pub(crate) fn compile(spec: &PenaltySpec, n: usize) -> Result<Self> {
        match spec {
            PenaltySpec::None => Ok(CompiledPenalty::None),
            PenaltySpec::Ridge { .. } => Ok(CompiledPenalty::Ridge),
            PenaltySpec::Entropy { .. } => {
                if n < 2 {
                    return Err(Error::Invalid(
                        "entropy penalty needs at least two controls".into(),
                    ));
                }
                Ok(CompiledPenalty::Entropy)
            }
            PenaltySpec::Quadratic { h, x, x_mat, .. } => compile_quadratic(h, x, x_mat, n),
        }
    }

    /// `Φ(θ)`.
    pub(crate) fn value(&self, theta: &[f64]) -> f64 {
        match self {
            CompiledPenalty::None => 0.0,
            CompiledPenalty::Ridge => 0.5 * theta.iter().map(|t| t * t).sum::<f64>(),
            CompiledPenalty::Entropy => {
                theta.iter().map(|&t| xlnx(t)).sum::<f64>() + (theta.len() as f64).ln()
            }
            CompiledPenalty::Quadratic { m, lin, constant } => {
                let n = theta.len();
                let mut v = *constant;
                for i in 0..n {
                    v += lin[i] * theta[i];
                    let row = &m[i * n..(i + 1) * n];
                    let mut acc = 0.0;
                    for j in 0..n {
                        acc += row[j] * theta[j];
                    }
                    v += 0.5 * theta[i] * acc;
                }
                v
            }
        }
    }

    /// Adds `coef · ∇Φ(θ)` into `out`.
    fn add_grad(&self, theta: &[f64], coef: f64, out: &mut [f64]) {
        match self {
            CompiledPenalty::None => {}
            CompiledPenalty::Ridge => {
                for (o, t) in out.iter_mut().zip(theta) {
                    *o += coef * t;
                }
            }
            CompiledPenalty::Entropy => {
                for (o, t) in out.iter_mut().zip(theta) {
                    *o += coef * xlnx_grad(*t);
                }
            }
            CompiledPenalty::Quadratic { m, lin, .. } => {
                let n = theta.len();
                for i in 0..n {
                    let row = &m[i * n..(i + 1) * n];
                    let mut acc = lin[i];
                    for j in 0..n {
                        acc += row[j] * theta[j];
                    }
                    out[i] += coef * acc;
                }
            }
        }
    }

    /// Rough curvature scale used to seed the backtracking step size.
    fn curvature_hint(&self, n: usize) -> f64 {
        match self {
            CompiledPenalty::None => 0.0,
            CompiledPenalty::Ridge => 1.0,
            CompiledPenalty::Entropy => n as f64,
            CompiledPenalty::Quadratic { m, .. } => {
                let n = (m.len() as f64).sqrt() as usize;
                (0..n).map(|i| m[i * n + i]).sum::<f64>().max(1.0)
            }
        }
    }

    /// Directional derivative `∇Φ(θ)·d` for the two-point parametrization used
    /// by the one-dimensional absolute-loss solver.
    pub(crate) fn dir_grad(&self, theta: &[f64], dir: &[f64]) -> f64 {
        let mut g = vec![0.0; theta.len()];
        self.add_grad(theta, 1.0, &mut g);
        g.iter().zip(dir).map(|(gi, di)| gi * di).sum()
    }
}

fn compile_quadratic(h: &[Vec<f64>], x: &[f64], x_mat: &[Vec<f64>], n: usize) -> Result<CompiledPenalty> {
    let m_dim = x.len();
    if h.len() != m_dim || h.iter().any(|row| row.len() != m_dim) {
        return Err(Error::Invalid(format!(
            "quadratic penalty: h must be {m_dim}x{m_dim} to match x"
        )));
    }
    if x_mat.len() != m_dim || x_mat.iter().any(|row| row.len() != n) {
        return Err(Error::Invalid(format!(
            "quadratic penalty: x_mat must be {m_dim}x{n}"
        )));
    }
    if m_dim == 0 {
        return Err(Error::Invalid("quadratic penalty: empty x".into()));
    }
    let hm = nalgebra::DMatrix::from_fn(m_dim, m_dim, |i, j| 0.5 * (h[i][j] + h[j][i]));
    let eig_h = hm.clone().symmetric_eigen();
    let h_max = eig_h.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    if eig_h.eigenvalues.iter().any(|&l| l < -1e-9 * h_max.max(1.0)) {
        return Err(Error::Invalid(
            "quadratic penalty: h is not positive semidefinite".into(),
        ));
    }
    let xm = nalgebra::DMatrix::from_fn(m_dim, n, |i, j| x_mat[i][j]);
    let xv = nalgebra::DVector::from_column_slice(x);
    let m0 = xm.transpose() * &hm * &xm;
    let lin0 = -(xm.transpose() * &hm * &xv);
    let c0 = 0.5 * (xv.transpose() * &hm * &xv)[(0, 0)];
    let eig_m = m0.clone().symmetric_eigen();
    let l_min = eig_m.eigenvalues.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let l_max = eig_m.eigenvalues.iter().fold(0.0_f64, |a, &b| a.max(b));
    if l_min <= 1e-12 * l_max.max(1.0) {
        return Err(Error::Invalid(
            "quadratic penalty: x_mat'·h·x_mat is singular on the weight space".into(),
        ));
    }
    let scale = 1.0 / l_min;
    let mut m_flat = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            m_flat[i * n + j] = m0[(i, j)] * scale;
        }
    }
    Ok(CompiledPenalty::Quadratic {
        m: m_flat,
        lin: lin0.iter().map(|v| v * scale).collect(),
        constant: c0 * scale,
    })
}

/// Evaluates `Φ(θ)` and the penalty's range `K = max_Δ Φ - min_Δ Φ`.
///
/// The maximum of a convex function over the simplex sits at a vertex, so the
/// range is exact: vertices are enumerated for the max and the min solved as a
/// quadratic program (closed forms are used for ridge and entropy).
pub fn penalty_value_and_range(spec: &PenaltySpec, n: usize, theta: &[f64]) -> Result<(f64, f64)> {
    if theta.len() != n {
        return Err(Error::Invalid(format!(
            "theta has length {}, expected {n}",
            theta.len()
        )));
    }
    let compiled = CompiledPenalty::compile(spec, n)?;
    let value = compiled.value(theta);
    let range = match &compiled {
        CompiledPenalty::None => 0.0,
        CompiledPenalty::Ridge => 0.5 * (1.0 - 1.0 / n as f64),
        CompiledPenalty::Entropy => (n as f64).ln(),
        CompiledPenalty::Quadratic { m, lin, .. } => {
            let mut vertex_max = f64::NEG_INFINITY;
            let mut e = vec![0.0; n];
            for i in 0..n {
                e[i] = 1.0;
                vertex_max = vertex_max.max(compiled.value(&e));
                e[i] = 0.0;
            }
            // min over Δ of ½θ'Mθ + lin'θ: quadratic solve with q = -lin.
            let q: Vec<f64> = lin.iter().map(|v| -v).collect();
            let prob = QuadProblem {
                dim: n,
                p: m,
                q: &q,
                penalty: &CompiledPenalty::None,
                pen_coef: 0.0,
                intercept: false,
                tol: DEFAULT_TOLERANCE,
            };
            let arg = solve_quad(&prob, None)?;
            vertex_max - compiled.value(&arg)
        }
    };
    Ok((value, range))
}

/// The learning rate the regret guarantees are stated for, as a function of
/// the number of controls `n` and the horizon `t`:
/// ridge `1/√(4·n·t)`, entropy `√(ln n / t)`, quadratic `√(K/(2·n·t))`.
pub fn default_eta(spec: &PenaltySpec, n: usize, horizon: usize) -> Result<f64> {
    if n == 0 || horizon == 0 {
        return Err(Error::Invalid("default_eta requires n >= 1 and horizon >= 1".into()));
    }
    let t = horizon as f64;
    match spec {
        PenaltySpec::None => Err(Error::Invalid("no penalty: eta is not defined".into())),
        PenaltySpec::Ridge { .. } => Ok(1.0 / (4.0 * n as f64 * t).sqrt()),
        PenaltySpec::Entropy { .. } => {
            if n < 2 {
                return Err(Error::Invalid("entropy penalty needs at least two controls".into()));
            }
            Ok(((n as f64).ln() / t).sqrt())
        }
        PenaltySpec::Quadratic { .. } => {
            let uniform = vec![1.0 / n as f64; n];
            let (_, k) = penalty_value_and_range(spec, n, &uniform)?;
            Ok((k / (2.0 * n as f64 * t)).sqrt())
        }
    }
}

/// Euclidean projection onto the probability simplex.
///
/// ```
/// let p = synthreg::simplex::project_simplex(&[1.2, 0.2]).unwrap();
/// assert!((p[0] - 1.0).abs() < 1e-15 && p[1].abs() < 1e-15);
/// ```
pub fn project_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Invalid("cannot project an empty vector".into()));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Invalid("cannot project non-finite values".into()));
    }
    let mut out = v.to_vec();
    project_simplex_slice(&mut out);
    Ok(out)
}

/// In-place simplex projection (callers guarantee finite input).
pub(crate) fn project_simplex_slice(v: &mut [f64]) {
    let n = v.len();
    if n == 1 {
        v[0] = 1.0;
        return;
    }
    let mut stack = [0.0_f64; 32];
    let mut heap;
    let u: &mut [f64] = if n <= 32 {
        stack[..n].copy_from_slice(v);
        &mut stack[..n]
    } else {
        heap = v.to_vec();
        &mut heap
    };
    u.sort_unstable_by(|a, b| b.partial_cmp(a).unwrap());
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (j, &uj) in u.iter().enumerate() {
        cumulative += uj;
        let candidate = (cumulative - 1.0) / (j + 1) as f64;
        if uj - candidate > 0.0 {
            tau = candidate;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - tau).max(0.0);
    }
}

/// A quadratic program over the simplex (optionally with a boxed intercept as
/// the leading coordinate): minimize `½x'Px - q'x + pen_coef·Φ(simplex block)`.
pub(crate) struct QuadProblem<'a> {
    pub dim: usize,
    /// Row-major symmetric `dim × dim` matrix.
    pub p: &'a [f64],
    pub q: &'a [f64],
    pub penalty: &'a CompiledPenalty,
    pub pen_coef: f64,
    /// When set, coordinate 0 is an intercept clipped to `[-2, 2]` and the
    /// simplex constraint (and any penalty) applies to coordinates `1..`.
    pub intercept: bool,
    pub tol: f64,
}

impl QuadProblem<'_> {
    fn project(&self, x: &mut [f64]) {
        if self.intercept {
            x[0] = x[0].clamp(-2.0, 2.0);
            project_simplex_slice(&mut x[1..]);
        } else {
            project_simplex_slice(x);
        }
    }

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        let n = self.dim;
        for i in 0..n {
            let row = &self.p[i * n..(i + 1) * n];
            let mut acc = -self.q[i];
            for j in 0..n {
                acc += row[j] * x[j];
            }
            out[i] = acc;
        }
        if self.pen_coef != 0.0 {
            let lo = usize::from(self.intercept);
            self.penalty.add_grad(&x[lo..], self.pen_coef, &mut out[lo..]);
        }
    }

    fn objective(&self, x: &[f64]) -> f64 {
        let n = self.dim;
        let mut v = 0.0;
        for i in 0..n {
            let row = &self.p[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for j in 0..n {
                acc += row[j] * x[j];
            }
            v += 0.5 * x[i] * acc - self.q[i] * x[i];
        }
        if self.pen_coef != 0.0 {
            v += self.pen_coef * self.penalty.value(&x[usize::from(self.intercept)..]);
        }
        v
    }

    fn spectral_hint(&self) -> f64 {
        let n = self.dim;
        let mut v = vec![1.0 / (n as f64).sqrt(); n];
        let mut pv = vec![0.0; n];
        for _ in 0..20 {
            for i in 0..n {
                let row = &self.p[i * n..(i + 1) * n];
                pv[i] = row.iter().zip(&v).map(|(a, b)| a * b).sum();
            }
            let norm = pv.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm < 1e-300 {
                break;
            }
            for (vi, pvi) in v.iter_mut().zip(&pv) {
                *vi = pvi / norm;
            }
        }
        let mut lambda = 0.0;
        for i in 0..n {
            let row = &self.p[i * n..(i + 1) * n];
            lambda += v[i] * row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
        }
        lambda.max(0.0) + self.pen_coef * self.penalty.curvature_hint(n.saturating_sub(usize::from(self.intercept)))
    }
}

/// Exact Hessian and effective linear term of the objective when both are
/// iterate-independent (no penalty, ridge, or general quadratic); `None`
/// under the entropy penalty, whose curvature depends on the iterate.
fn quadratic_model(prob: &QuadProblem) -> Option<(Vec<f64>, Vec<f64>)> {
    let n = prob.dim;
    let lo = usize::from(prob.intercept);
    let mut h = prob.p.to_vec();
    let mut q = prob.q.to_vec();
    if prob.pen_coef != 0.0 {
        match prob.penalty {
            CompiledPenalty::None => {}
            CompiledPenalty::Ridge => {
                for i in lo..n {
                    h[i * n + i] += prob.pen_coef;
                }
            }
            CompiledPenalty::Quadratic { m, lin, .. } => {
                let k = n - lo;
                for i in 0..k {
                    q[lo + i] -= prob.pen_coef * lin[i];
                    for j in 0..k {
                        h[(lo + i) * n + (lo + j)] += prob.pen_coef * m[i * k + j];
                    }
                }
            }
            CompiledPenalty::Entropy => return None,
        }
    }
    Some((h, q))
}

/// Exact minimizer on the face where the weights flagged in `pinned` are
/// fixed at zero, with the sum constraint eliminated analytically
/// (`z = z0 + Nw` for an orthonormal basis `N` of the constraint's null
/// space) and the reduced symmetric system solved by eigendecomposition.
/// That keeps the tie-break curvature meaningful even when the data block is
/// singular — a pivoted factorization of the full KKT system loses it to
/// cancellation. The intercept's box is enforced by re-solving with it
/// clamped when it escapes. Free weights may come back negative; callers
/// decide what to do with an infeasible face optimum. `None` only when the
/// model is not quadratic (entropy penalty).
fn face_solve(prob: &QuadProblem, pinned: &[bool]) -> Option<Vec<f64>> {
    use nalgebra::{DMatrix, DVector};
    let n = prob.dim;
    let (h, q) = quadratic_model(prob)?;
    let lo = usize::from(prob.intercept);
    let free_theta: Vec<usize> = (lo..n).filter(|&j| !pinned[j]).collect();
    let m = free_theta.len();
    if m == 0 {
        return None;
    }
    let mut intercept_fixed: Option<f64> = None;
    loop {
        let has_int = prob.intercept && intercept_fixed.is_none();
        // Feasible base point: uniform mass on the free weights.
        let mut z0 = vec![0.0; n];
        if let Some(c0) = intercept_fixed {
            z0[0] = c0;
        }
        for &j in &free_theta {
            z0[j] = 1.0 / m as f64;
        }
        // Orthonormal null-space basis of the sum constraint over the free
        // coordinates: the bare intercept direction (unconstrained), then
        // the Helmert vectors over the free weights.
        let wdim = usize::from(has_int) + m - 1;
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(wdim);
        if has_int {
            let mut col = vec![0.0; n];
            col[0] = 1.0;
            basis.push(col);
        }
        for j in 1..m {
            let scale = 1.0 / ((j * (j + 1)) as f64).sqrt();
            let mut col = vec![0.0; n];
            for &idx in free_theta.iter().take(j) {
                col[idx] = scale;
            }
            col[free_theta[j]] = -(j as f64) * scale;
            basis.push(col);
        }
        let mut z = z0.clone();
        if wdim > 0 {
            // Reduced problem: ½w'(N'HN)w − (N'(q − Hz0))'w.
            let hn: Vec<Vec<f64>> = basis
                .iter()
                .map(|col| {
                    (0..n)
                        .map(|i| (0..n).map(|j| h[i * n + j] * col[j]).sum())
                        .collect()
                })
                .collect();
            let mut red = DMatrix::<f64>::zeros(wdim, wdim);
            for a in 0..wdim {
                for b in 0..=a {
                    let v: f64 = basis[a].iter().zip(&hn[b]).map(|(x, y)| x * y).sum();
                    red[(a, b)] = v;
                    red[(b, a)] = v;
                }
            }
            let mut hz0 = vec![0.0; n];
            for i in 0..n {
                hz0[i] = (0..n).map(|j| h[i * n + j] * z0[j]).sum();
            }
            let rhs = DVector::<f64>::from_iterator(
                wdim,
                basis.iter().map(|col| {
                    col.iter()
                        .zip(q.iter().zip(&hz0))
                        .map(|(c, (qi, hi))| c * (qi - hi))
                        .sum()
                }),
            );
            let eig = red.symmetric_eigen();
            let mut w = DVector::<f64>::zeros(wdim);
            for i in 0..wdim {
                let s = eig.eigenvalues[i].max(1e-13);
                let coef = eig.eigenvectors.column(i).dot(&rhs) / s;
                w.axpy(coef, &eig.eigenvectors.column(i).into_owned(), 1.0);
            }
            for (col, wi) in basis.iter().zip(w.iter()) {
                for (zi, ci) in z.iter_mut().zip(col) {
                    *zi += wi * ci;
                }
            }
        }
        if has_int && z[0].abs() > 2.0 {
            intercept_fixed = Some(z[0].signum() * 2.0);
            continue;
        }
        return Some(z);
    }
}

/// Active-set descent seeded from the iterate's support. Gradient steps
/// identify the optimal face quickly but crawl along it when the curvature
/// there comes only from the tie-break term, and they can leave tiny
/// coordinates misordered, so no single face guess read off the iterate is
/// reliable; the classic pivoting rules are. Starting from the face spanned
/// by the iterate's visibly positive weights: solve the face exactly; if a
/// freed weight comes back negative, walk the feasible point toward the face
/// optimum until the first weight hits zero and pin it (ratio test);
/// otherwise let the pinned weight with the most negative reduced gradient
/// re-enter. When no weight wants to enter, the face optimum is the
/// constrained minimizer — it is still gated by the same projected-gradient
/// certificate the main loop uses, so a failure here never returns a bad
/// point, it just hands control back to the gradient iteration.
fn certified_polish(prob: &QuadProblem, x: &[f64]) -> Option<Vec<f64>> {
    let n = prob.dim;
    let lo = usize::from(prob.intercept);
    if n == lo {
        return None;
    }
    let mut pinned = vec![false; n];
    let mut xc = x.to_vec();
    for j in lo..n {
        if xc[j] <= 1e-12 {
            pinned[j] = true;
            xc[j] = 0.0;
        }
    }
    if pinned[lo..].iter().all(|&p| p) {
        pinned[lo..].fill(false);
        xc = x.to_vec();
    }
    let mass: f64 = xc[lo..].iter().sum();
    if mass > 0.0 {
        for v in &mut xc[lo..] {
            *v /= mass;
        }
    } else {
        let free = pinned[lo..].iter().filter(|&&p| !p).count();
        for j in lo..n {
            xc[j] = if pinned[j] { 0.0 } else { 1.0 / free as f64 };
        }
    }
    let mut grad = vec![0.0; n];
    let mut candidate = vec![0.0; n];
    for _ in 0..(8 * n + 8) {
        let sol = face_solve(prob, &pinned)?;
        // Ratio test: walk toward the face optimum until the first freed
        // weight hits zero, and pin that one.
        let mut alpha = 1.0_f64;
        let mut blocker = None;
        for j in lo..n {
            if !pinned[j] && sol[j] < -1e-14 && xc[j] - sol[j] > 0.0 {
                let a = xc[j] / (xc[j] - sol[j]);
                if a < alpha {
                    alpha = a;
                    blocker = Some(j);
                }
            }
        }
        if let Some(jb) = blocker {
            if pinned[lo..].iter().filter(|&&p| !p).count() <= 1 {
                return None;
            }
            for (j, v) in xc.iter_mut().enumerate() {
                *v += alpha * (sol[j] - *v);
                if j >= lo {
                    *v = v.max(0.0);
                }
            }
            xc[jb] = 0.0;
            pinned[jb] = true;
            continue;
        }
        xc.copy_from_slice(&sol);
        for v in &mut xc[lo..] {
            *v = v.max(0.0);
        }
        prob.gradient(&xc, &mut grad);
        let free = pinned[lo..].iter().filter(|&&p| !p).count();
        let lambda = (lo..n)
            .filter(|&j| !pinned[j])
            .map(|j| grad[j])
            .sum::<f64>()
            / free as f64;
        let mut enter = None;
        let mut most_negative = -1e-12;
        for j in lo..n {
            if pinned[j] && grad[j] - lambda < most_negative {
                most_negative = grad[j] - lambda;
                enter = Some(j);
            }
        }
        if let Some(je) = enter {
            pinned[je] = false;
            continue;
        }
        for (c, (v, g)) in candidate.iter_mut().zip(xc.iter().zip(&grad)) {
            *c = v - g;
        }
        prob.project(&mut candidate);
        let pg = xc
            .iter()
            .zip(&candidate)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        return if pg <= prob.tol { Some(xc) } else { None };
    }
    None
}

/// Accelerated projected gradient with backtracking line search, gradient
/// restarts, a projected-gradient stopping rule, and a direct face solve
/// once the active set settles.
pub(crate) fn solve_quad(prob: &QuadProblem, warm: Option<&[f64]>) -> Result<Vec<f64>> {
    let n = prob.dim;
    if !prob.intercept && n == 1 {
        return Ok(vec![1.0]);
    }
    let mut x = match warm {
        Some(w) if w.len() == n && w.iter().all(|v| v.is_finite()) => w.to_vec(),
        _ => {
            let lo = usize::from(prob.intercept);
            let mut init = vec![1.0 / (n - lo) as f64; n];
            if prob.intercept {
                init[0] = 0.0;
            }
            init
        }
    };
    prob.project(&mut x);

    let mut step_l = prob.spectral_hint().max(1e-12);
    let mut y = x.clone();
    let mut grad_y = vec![0.0; n];
    let mut grad_x = vec![0.0; n];
    let mut x_next = vec![0.0; n];
    let mut candidate = vec![0.0; n];
    let mut momentum = 1.0_f64;

    for iter in 0..MAX_ITERS {
        prob.gradient(&y, &mut grad_y);
        let f_y = prob.objective(&y);
        // Backtrack until the quadratic upper model holds at the new point.
        let mut backtracks = 0;
        loop {
            for j in 0..n {
                x_next[j] = y[j] - grad_y[j] / step_l;
            }
            prob.project(&mut x_next);
            let mut model = f_y;
            for j in 0..n {
                let d = x_next[j] - y[j];
                model += grad_y[j] * d + 0.5 * step_l * d * d;
            }
            if prob.objective(&x_next) <= model + 1e-12 * (1.0 + f_y.abs()) || backtracks >= 60 {
                break;
            }
            step_l *= 2.0;
            backtracks += 1;
        }

        prob.gradient(&x_next, &mut grad_x);
        candidate.copy_from_slice(&x_next);
        for j in 0..n {
            candidate[j] -= grad_x[j];
        }
        prob.project(&mut candidate);
        let pg_norm = x_next
            .iter()
            .zip(&candidate)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if pg_norm <= prob.tol {
            return Ok(x_next);
        }
        if iter % 64 == 0 && (iter == 0 || pg_norm <= 1e-5) {
            if let Some(z) = certified_polish(prob, &x_next) {
                return Ok(z);
            }
        }

        let ascent: f64 = grad_y
            .iter()
            .zip(x_next.iter().zip(&x))
            .map(|(g, (xn, xo))| g * (xn - xo))
            .sum();
        if ascent > 0.0 {
            // Momentum is working against the gradient: restart.
            momentum = 1.0;
            y.copy_from_slice(&x_next);
        } else {
            let next_momentum = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next_momentum;
            for j in 0..n {
                y[j] = x_next[j] + beta * (x_next[j] - x[j]);
            }
            momentum = next_momentum;
        }
        x.copy_from_slice(&x_next);
        step_l = (step_l * 0.95).max(1e-12);

        if iter + 1 == MAX_ITERS {
            if let Some(z) = certified_polish(prob, &x) {
                return Ok(z);
            }
            return Err(Error::Solver {
                msg: "projected-gradient iteration limit reached".into(),
                iterations: MAX_ITERS,
                kkt_residual: pg_norm,
                last_iterate: x,
            });
        }
    }
    unreachable!("loop always returns");
}

/// Options for [`solve_constrained_ls`].
#[derive(Debug, Clone, Default)]
pub struct LsOptions<'a> {
    /// Per-period nonnegative sample weights (defaults to all ones). The
    /// minimizer is invariant to rescaling all weights by a common factor.
    pub sample_weights: Option<&'a [f64]>,
    /// Penalty added as `(2/η)·Φ(θ)`; `eta` must be resolved (see
    /// [`default_eta`]) when the kind is not `none`.
    pub penalty: PenaltySpec,
    /// Starting point for the iteration; projected onto the feasible set.
    pub warm_start: Option<&'a [f64]>,
    /// Projected-gradient tolerance; 0 means [`DEFAULT_TOLERANCE`].
    pub tolerance: f64,
}

fn validate_history(n: usize, targets: &[f64], rows: &[Vec<f64>], weights: Option<&[f64]>) -> Result<()> {
    if n == 0 {
        return Err(Error::Invalid("at least one control is required".into()));
    }
    if targets.len() != rows.len() {
        return Err(Error::Invalid(format!(
            "{} targets but {} regressor rows",
            targets.len(),
            rows.len()
        )));
    }
    for (s, row) in rows.iter().enumerate() {
        if row.len() != n {
            return Err(Error::Invalid(format!(
                "regressor row {} has length {}, expected {n}",
                s + 1,
                row.len()
            )));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("regressor row {} has non-finite values", s + 1)));
        }
    }
    if targets.iter().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("targets contain non-finite values".into()));
    }
    if let Some(w) = weights {
        if w.len() != targets.len() {
            return Err(Error::Invalid(format!(
                "{} sample weights for {} periods",
                w.len(),
                targets.len()
            )));
        }
        if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invalid("sample weights must be finite and nonnegative".into()));
        }
    }
    Ok(())
}

/// Accumulates `P = 2Σ w v v'` and `q = 2Σ w a v` for the squared objective.
fn weighted_gram(targets: &[f64], rows: &[Vec<f64>], weights: Option<&[f64]>, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut p = vec![0.0; n * n];
    let mut q = vec![0.0; n];
    for (s, row) in rows.iter().enumerate() {
        let w = weights.map_or(1.0, |w| w[s]);
        if w == 0.0 {
            continue;
        }
        for i in 0..n {
            q[i] += 2.0 * w * targets[s] * row[i];
            for j in 0..=i {
                let v = 2.0 * w * row[i] * row[j];
                p[i * n + j] += v;
                if i != j {
                    p[j * n + i] += v;
                }
            }
        }
    }
    (p, q)
}

/// Minimizes `Σ_s w_s (targets_s - θ'rows_s)² + (2/η)Φ(θ)` over the simplex.
///
/// `n` is the number of controls (needed because the history may be empty:
/// with no data the result is the penalty's minimizer, which is the uniform
/// vector when there is no penalty). Without a penalty, ties are broken
/// toward the minimum-norm optimum.
///
/// ```
/// use synthreg::simplex::{solve_constrained_ls, LsOptions};
/// // One period where both controls equal the target: every feasible θ is
/// // optimal, and the tie breaks to the uniform minimum-norm point.
/// let theta = solve_constrained_ls(2, &[0.5], &[vec![0.5, 0.5]], &LsOptions::default()).unwrap();
/// assert!((theta[0] - 0.5).abs() < 1e-6 && (theta[1] - 0.5).abs() < 1e-6);
/// ```
pub fn solve_constrained_ls(
    n: usize,
    targets: &[f64],
    rows: &[Vec<f64>],
    opts: &LsOptions,
) -> Result<Vec<f64>> {
    validate_history(n, targets, rows, opts.sample_weights)?;
    let penalty = CompiledPenalty::compile(&opts.penalty, n)?;
    let pen_coef = match &opts.penalty {
        PenaltySpec::None => 0.0,
        spec => {
            let eta = spec.eta().ok_or_else(|| {
                Error::Invalid("penalty eta is unset; resolve it with default_eta".into())
            })?;
            if !(eta.is_finite() && eta > 0.0) {
                return Err(Error::Invalid(format!("penalty eta must be positive, got {eta}")));
            }
            2.0 / eta
        }
    };
    if targets.is_empty() {
        // With no data the fit is the penalty's own minimizer; for no penalty,
        // ridge, and entropy that is exactly the uniform vector.
        if !matches!(penalty, CompiledPenalty::Quadratic { .. }) {
            return Ok(vec![1.0 / n as f64; n]);
        }
    }
    let (mut p, q) = weighted_gram(targets, rows, opts.sample_weights, n);
    if opts.penalty.is_none() {
        for i in 0..n {
            p[i * n + i] += 2.0 * TIE_EPSILON;
        }
    }
    let tol = if opts.tolerance > 0.0 { opts.tolerance } else { DEFAULT_TOLERANCE };
    let prob = QuadProblem {
        dim: n,
        p: &p,
        q: &q,
        penalty: &penalty,
        pen_coef,
        intercept: false,
        tol,
    };
    solve_quad(&prob, opts.warm_start)
}

/// Minimizes `Σ_s w_s (targets_s - θ₀ - θ'rows_s)²` over `θ₀ ∈ [-2, 2]`,
/// `θ ∈ Δ`. Returns `(θ₀, θ)`; an empty history yields `(0, uniform)`.
pub fn solve_affine_ls(
    n: usize,
    targets: &[f64],
    rows: &[Vec<f64>],
    sample_weights: Option<&[f64]>,
    warm_start: Option<(f64, &[f64])>,
    tolerance: f64,
) -> Result<(f64, Vec<f64>)> {
    validate_history(n, targets, rows, sample_weights)?;
    if targets.is_empty() {
        return Ok((0.0, vec![1.0 / n as f64; n]));
    }
    // Augment each row with a leading constant regressor for the intercept.
    let dim = n + 1;
    let mut p = vec![0.0; dim * dim];
    let mut q = vec![0.0; dim];
    for (s, row) in rows.iter().enumerate() {
        let w = sample_weights.map_or(1.0, |w| w[s]);
        if w == 0.0 {
            continue;
        }
        let mut aug = Vec::with_capacity(dim);
        aug.push(1.0);
        aug.extend_from_slice(row);
        for i in 0..dim {
            q[i] += 2.0 * w * targets[s] * aug[i];
            for j in 0..=i {
                let v = 2.0 * w * aug[i] * aug[j];
                p[i * dim + j] += v;
                if i != j {
                    p[j * dim + i] += v;
                }
            }
        }
    }
    // Tie-break the weight block only; the intercept is identified whenever
    // any fit matters, and clipping handles the rest.
    for i in 1..dim {
        p[i * dim + i] += 2.0 * TIE_EPSILON;
    }
    let tol = if tolerance > 0.0 { tolerance } else { DEFAULT_TOLERANCE };
    let warm_buf;
    let warm = match warm_start {
        Some((intercept, theta)) if theta.len() == n => {
            let mut buf = Vec::with_capacity(dim);
            buf.push(intercept);
            buf.extend_from_slice(theta);
            warm_buf = buf;
            Some(warm_buf.as_slice())
        }
        _ => None,
    };
    let prob = QuadProblem {
        dim,
        p: &p,
        q: &q,
        penalty: &CompiledPenalty::None,
        pen_coef: 0.0,
        intercept: true,
        tol,
    };
    let sol = solve_quad(&prob, warm)?;
    Ok((sol[0], sol[1..].to_vec()))
}

/// Objective `Σ_s (targets_s - θ'rows_s)²` (or the absolute-value analogue)
/// at a fixed `θ`.
pub fn history_loss(targets: &[f64], rows: &[Vec<f64>], theta: &[f64], loss: Loss) -> f64 {
    let mut total = 0.0;
    for (s, row) in rows.iter().enumerate() {
        let fit: f64 = row.iter().zip(theta).map(|(a, b)| a * b).sum();
        let r = targets[s] - fit;
        total += match loss {
            Loss::Squared => r * r,
            Loss::Absolute => r.abs(),
        };
    }
    total
}

/// Brute-force reference: minimizes the unpenalized history loss over a
/// simplex lattice with the given resolution. Exponential in the number of
/// controls — intended for validating the solvers at small sizes.
pub fn grid_min_loss(
    n: usize,
    targets: &[f64],
    rows: &[Vec<f64>],
    resolution: f64,
    loss: Loss,
) -> Result<(Vec<f64>, f64)> {
    validate_history(n, targets, rows, None)?;
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::Invalid(format!("grid resolution must be in (0, 1], got {resolution}")));
    }
    let steps = (1.0 / resolution).round() as usize;
    let mut best = (vec![1.0 / n as f64; n], f64::INFINITY);
    let mut point = vec![0.0; n];
    fn recurse(
        coord: usize,
        remaining: usize,
        steps: usize,
        n: usize,
        point: &mut Vec<f64>,
        targets: &[f64],
        rows: &[Vec<f64>],
        loss: Loss,
        best: &mut (Vec<f64>, f64),
    ) {
        if coord == n - 1 {
            point[coord] = remaining as f64 / steps as f64;
            let value = history_loss(targets, rows, point, loss);
            if value < best.1 {
                *best = (point.clone(), value);
            }
            return;
        }
        for k in 0..=remaining {
            point[coord] = k as f64 / steps as f64;
            recurse(coord + 1, remaining - k, steps, n, point, targets, rows, loss, best);
        }
    }
    recurse(0, steps, steps, n, &mut point, targets, rows, loss, &mut best);
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn degenerate_exact_fit_histories_solve_cleanly() {
        // Short histories admit a continuum of exact fits; only the tiny
        // tie-break term separates them, so first-order steps crawl. These
        // instances previously hit the iteration cap and now exit through
        // the direct face solve.
        let targets = [0.5872462282458513, -0.8305636848914772];
        let rows = vec![
            vec![
                0.7649413697150216,
                -0.8649383595961471,
                0.6195353460704103,
                0.5716400897137801,
                0.18785145111425727,
            ],
            vec![
                -0.6594192323637424,
                0.43477888973006684,
                0.47378191600595865,
                0.5063917780672251,
                -0.4094971234388449,
            ],
        ];
        let (theta0, theta) =
            solve_affine_ls(5, &targets, &rows, None, None, DEFAULT_TOLERANCE).unwrap();
        for (tgt, row) in targets.iter().zip(&rows) {
            let pred = theta0 + theta.iter().zip(row).map(|(a, b)| a * b).sum::<f64>();
            assert_abs_diff_eq!(pred, tgt, epsilon = 1e-6);
        }
        assert_abs_diff_eq!(theta.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
        assert!(theta.iter().all(|v| *v >= -1e-12));

        let single_target = [0.45257241417981775];
        let single_row = vec![vec![
            0.32442446596953745,
            0.4737874848414554,
            -0.5793360493496305,
            0.37730118149571346,
        ]];
        let theta = solve_constrained_ls(
            4,
            &single_target,
            &single_row,
            &LsOptions::default(),
        )
        .unwrap();
        let pred: f64 = theta.iter().zip(&single_row[0]).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(pred, single_target[0], epsilon = 1e-8);
    }

    fn random_history(rng: &mut ChaCha8Rng, n: usize, t: usize) -> (Vec<f64>, Vec<Vec<f64>>) {
        let targets = (0..t).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
        let rows = (0..t)
            .map(|_| (0..n).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect())
            .collect();
        (targets, rows)
    }

    #[test]
    fn projection_hand_values() {
        let p = project_simplex(&[1.2, 0.2]).unwrap();
        assert_abs_diff_eq!(p[0], 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 0.0, epsilon = 1e-15);
        let p = project_simplex(&[0.3, 0.3, 0.3]).unwrap();
        for v in &p {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        assert_eq!(project_simplex(&[5.0]).unwrap(), vec![1.0]);
        assert!(project_simplex(&[f64::NAN, 0.0]).is_err());
        assert!(project_simplex(&[]).is_err());
    }

    #[test]
    fn projection_beats_random_feasible_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let n = rng.gen_range(1..6);
            let v: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 6.0 - 3.0).collect();
            let p = project_simplex(&v).unwrap();
            assert_abs_diff_eq!(p.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
            assert!(p.iter().all(|&x| x >= 0.0));
            let dist_p: f64 = v.iter().zip(&p).map(|(a, b)| (a - b) * (a - b)).sum();
            for _ in 0..50 {
                let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>()).collect();
                let total: f64 = raw.iter().sum();
                let z: Vec<f64> = raw.iter().map(|r| r / total).collect();
                let dist_z: f64 = v.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
                assert!(dist_p <= dist_z + 1e-9);
            }
        }
    }

    #[test]
    fn ls_matches_grid_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..25 {
            let n = 1 + trial % 3;
            let t = 1 + trial % 8;
            let (targets, rows) = random_history(&mut rng, n, t);
            let theta = solve_constrained_ls(n, &targets, &rows, &LsOptions::default()).unwrap();
            let solver_loss = history_loss(&targets, &rows, &theta, Loss::Squared);
            let (_, grid_loss) = grid_min_loss(n, &targets, &rows, 1e-3, Loss::Squared).unwrap();
            assert!(
                solver_loss <= grid_loss + 1e-5,
                "trial {trial}: solver {solver_loss} vs grid {grid_loss}"
            );
        }
    }

    #[test]
    fn empty_history_defaults() {
        let theta = solve_constrained_ls(3, &[], &[], &LsOptions::default()).unwrap();
        assert_eq!(theta, vec![1.0 / 3.0; 3]);
        let theta = solve_constrained_ls(
            2,
            &[],
            &[],
            &LsOptions { penalty: PenaltySpec::Entropy { eta: Some(0.1) }, ..Default::default() },
        )
        .unwrap();
        assert_eq!(theta, vec![0.5, 0.5]);
        let (intercept, theta) = solve_affine_ls(4, &[], &[], None, None, 0.0).unwrap();
        assert_eq!(intercept, 0.0);
        assert_eq!(theta, vec![0.25; 4]);
        assert!(solve_constrained_ls(0, &[], &[], &LsOptions::default()).is_err());
    }

    #[test]
    fn single_control_is_pinned() {
        let theta = solve_constrained_ls(1, &[0.4], &[vec![-0.9]], &LsOptions::default()).unwrap();
        assert_eq!(theta, vec![1.0]);
    }

    #[test]
    fn tie_breaks_to_minimum_norm() {
        let theta =
            solve_constrained_ls(2, &[0.5], &[vec![0.5, 0.5]], &LsOptions::default()).unwrap();
        assert_abs_diff_eq!(theta[0], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(theta[1], 0.5, epsilon = 1e-6);
    }

    #[test]
    fn sample_weight_scale_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..20 {
            let (targets, rows) = random_history(&mut rng, 4, 12);
            let w: Vec<f64> = (0..12).map(|_| rng.gen::<f64>() + 0.1).collect();
            let scaled: Vec<f64> = w.iter().map(|x| 17.0 * x).collect();
            let a = solve_constrained_ls(
                4,
                &targets,
                &rows,
                &LsOptions { sample_weights: Some(&w), ..Default::default() },
            )
            .unwrap();
            let b = solve_constrained_ls(
                4,
                &targets,
                &rows,
                &LsOptions { sample_weights: Some(&scaled), ..Default::default() },
            )
            .unwrap();
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() <= 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn warm_start_agrees_with_cold_start() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..20 {
            let (targets, rows) = random_history(&mut rng, 5, 30);
            let cold = solve_constrained_ls(5, &targets, &rows, &LsOptions::default()).unwrap();
            let warm_point: Vec<f64> = {
                let raw: Vec<f64> = (0..5).map(|_| rng.gen::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|r| r / s).collect()
            };
            let warm = solve_constrained_ls(
                5,
                &targets,
                &rows,
                &LsOptions { warm_start: Some(&warm_point), ..Default::default() },
            )
            .unwrap();
            let lc = history_loss(&targets, &rows, &cold, Loss::Squared);
            let lw = history_loss(&targets, &rows, &warm, Loss::Squared);
            assert!((lc - lw).abs() <= 1e-9, "cold {lc} vs warm {lw}");
        }
    }

    #[test]
    fn affine_intercept_clips_at_two() {
        // Constant controls at 0, targets at 5: the best feasible intercept is 2.
        let targets = vec![5.0; 4];
        let rows = vec![vec![0.0, 0.0]; 4];
        let (intercept, theta) = solve_affine_ls(2, &targets, &rows, None, None, 0.0).unwrap();
        assert_abs_diff_eq!(intercept, 2.0, epsilon = 1e-8);
        assert_abs_diff_eq!(theta.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn affine_recovers_shifted_combination() {
        // targets = 0.5 + 0.25·y1 + 0.75·y2 exactly.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let rows: Vec<Vec<f64>> =
            (0..20).map(|_| vec![rng.gen::<f64>() * 2.0 - 1.0, rng.gen::<f64>() * 2.0 - 1.0]).collect();
        let targets: Vec<f64> = rows.iter().map(|r| 0.5 + 0.25 * r[0] + 0.75 * r[1]).collect();
        let (intercept, theta) = solve_affine_ls(2, &targets, &rows, None, None, 0.0).unwrap();
        assert_abs_diff_eq!(intercept, 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(theta[0], 0.25, epsilon = 1e-6);
        assert_abs_diff_eq!(theta[1], 0.75, epsilon = 1e-6);
    }

    #[test]
    fn penalty_ranges() {
        let uniform = vec![0.25; 4];
        let (v, k) = penalty_value_and_range(&PenaltySpec::Entropy { eta: None }, 4, &uniform).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(k, 4.0_f64.ln(), epsilon = 1e-12);
        let (v, k) = penalty_value_and_range(&PenaltySpec::Ridge { eta: None }, 4, &uniform).unwrap();
        assert_abs_diff_eq!(v, 0.5 * 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(k, 0.5 * (1.0 - 0.25), epsilon = 1e-12);
        // Quadratic with H = I, X = I, x = 0 is exactly the ridge penalty.
        let spec = PenaltySpec::Quadratic {
            h: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            x: vec![0.0, 0.0],
            x_mat: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            eta: None,
        };
        let (v, k) = penalty_value_and_range(&spec, 2, &[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(v, 0.25, epsilon = 1e-9);
        assert_abs_diff_eq!(k, 0.5 - 0.25, epsilon = 1e-7);
    }

    #[test]
    fn quadratic_penalty_rejects_bad_matrices() {
        let not_psd = PenaltySpec::Quadratic {
            h: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            x: vec![0.0, 0.0],
            x_mat: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            eta: None,
        };
        assert!(CompiledPenalty::compile(&not_psd, 2).is_err());
        let singular = PenaltySpec::Quadratic {
            h: vec![vec![1.0]],
            x: vec![0.0],
            x_mat: vec![vec![1.0, 1.0]],
            eta: None,
        };
        assert!(CompiledPenalty::compile(&singular, 2).is_err());
    }

    #[test]
    fn default_eta_values() {
        let eta = default_eta(&PenaltySpec::Entropy { eta: None }, 4, 100).unwrap();
        assert_abs_diff_eq!(eta, (4.0_f64.ln() / 100.0).sqrt(), epsilon = 1e-12);
        assert_abs_diff_eq!(eta, 0.117_741, epsilon = 1e-6);
        let eta = default_eta(&PenaltySpec::Ridge { eta: None }, 5, 100).unwrap();
        assert_abs_diff_eq!(eta, 1.0 / (2000.0_f64).sqrt(), epsilon = 1e-12);
        assert!(default_eta(&PenaltySpec::None, 5, 100).is_err());
    }

    #[test]
    fn penalized_solution_pulls_toward_penalty_minimizer() {
        // Data wants the first vertex; a strong entropy penalty pulls interior.
        let targets = vec![1.0; 3];
        let rows = vec![vec![1.0, -1.0]; 3];
        let free = solve_constrained_ls(2, &targets, &rows, &LsOptions::default()).unwrap();
        assert_abs_diff_eq!(free[0], 1.0, epsilon = 1e-6);
        let tight = solve_constrained_ls(
            2,
            &targets,
            &rows,
            &LsOptions {
                penalty: PenaltySpec::Entropy { eta: Some(1e-3) },
                ..Default::default()
            },
        )
        .unwrap();
        assert!(tight[0] < 0.6, "strong penalty should pull near uniform, got {tight:?}");
        assert!(tight[0] > 0.5, "data should still tilt the fit, got {tight:?}");
    }

    #[test]
    fn ftrl_objective_matches_half_loss_form() {
        // Minimizing Σ(·)² + (2/η)Φ must equal minimizing Σ½(·)² + (1/η)Φ on a grid.
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        let (targets, rows) = random_history(&mut rng, 2, 6);
        let eta = 0.3;
        let theta = solve_constrained_ls(
            2,
            &targets,
            &rows,
            &LsOptions { penalty: PenaltySpec::Ridge { eta: Some(eta) }, ..Default::default() },
        )
        .unwrap();
        let objective = |th: &[f64]| {
            0.5 * history_loss(&targets, &rows, th, Loss::Squared)
                + (1.0 / eta) * 0.5 * th.iter().map(|x| x * x).sum::<f64>()
        };
        let at_solution = objective(&theta);
        for k in 0..=1000 {
            let s = k as f64 / 1000.0;
            assert!(at_solution <= objective(&[s, 1.0 - s]) + 1e-8);
        }
    }
}
