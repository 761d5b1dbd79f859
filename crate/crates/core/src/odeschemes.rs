//! Deterministic time stepping: Euler (both directions), explicit Runge-Kutta
//! tableaus, explicit linear multistep methods, the two-step recursion with a
//! per-step coefficient `k` used by LM networks, and zero-stability tools.

use std::fmt;

use nalgebra::Complex;

use crate::dyncore::{ensure_finite, Matrix, State, Trajectory, VectorField};
use crate::error::{Error, Result};

/// `u + dt * f(u, t)`.
pub fn forward_euler_step(f: &dyn VectorField, u: &State, t: f64, dt: f64) -> Result<State> {
    check_dt(dt)?;
    let next = u + f.eval(u, t) * dt;
    ensure_finite(&next)?;
    Ok(next)
}

fn check_dt(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(Error::contract(format!("step size must be positive and finite, got {dt}")))
    }
}

/// Nonlinear-solve settings for [`backward_euler_step`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImplicitSolve {
    pub tol: f64,
    pub max_iter: usize,
    /// Relaxation of the fixed-point iteration used when no Jacobian exists.
    pub damping: f64,
}

impl Default for ImplicitSolve {
    fn default() -> Self {
        ImplicitSolve { tol: 1e-10, max_iter: 50, damping: 0.5 }
    }
}

/// Solves `v = u + dt * f(v, t + dt)` for `v`.
///
/// Newton's method is used when the field has a Jacobian, otherwise a damped
/// fixed-point iteration `v <- (1 - w) v + w (u + dt f(v))`.
pub fn backward_euler_step(
    f: &dyn VectorField,
    u: &State,
    t: f64,
    dt: f64,
    solve: ImplicitSolve,
) -> Result<State> {
    check_dt(dt)?;
    if solve.tol <= 0.0 {
        return Err(Error::contract("implicit solve tolerance must be positive"));
    }
    let t1 = t + dt;
    let residual = |v: &State| v - u - f.eval(v, t1) * dt;

    let mut v = u.clone();
    let mut r = residual(&v);
    let mut iterations = 0;
    while r.norm() > solve.tol && iterations < solve.max_iter {
        match f.jacobian(&v, t1) {
            Some(jac) => {
                let d = v.len();
                let system = Matrix::identity(d, d) - jac * dt;
                let delta = system.lu().solve(&r).ok_or(Error::Convergence {
                    residual: r.norm(),
                    iterations,
                })?;
                v -= delta;
            }
            None => {
                let target = u + f.eval(&v, t1) * dt;
                v = &v * (1.0 - solve.damping) + target * solve.damping;
            }
        }
        ensure_finite(&v)?;
        r = residual(&v);
        iterations += 1;
    }
    let res = r.norm();
    if res > solve.tol {
        return Err(Error::Convergence { residual: res, iterations });
    }
    Ok(v)
}

/// Result of a truncated Neumann-series application.
#[derive(Debug, Clone, PartialEq)]
pub struct NeumannApply {
    pub value: State,
    /// Power-iteration estimate of the spectral radius of `dt * A`.
    pub spectral_radius: f64,
    /// Set when the radius estimate lies in `[0.95, 1)`; the series still
    /// converges but slowly.
    pub borderline: bool,
}

/// Spectral radius estimate from `iterations` normalized power iterations,
/// taking the mean log growth rate over the second half so rotating
/// (complex) dominant pairs are handled too.
pub fn spectral_radius_estimate(m: &Matrix, iterations: usize) -> f64 {
    let d = m.nrows();
    let mut x = State::from_fn(d, |i, _| 1.0 + 0.1 * i as f64);
    x /= x.norm();
    let burn = iterations / 2;
    let mut log_growth = 0.0;
    let mut counted = 0;
    for i in 0..iterations {
        let y = m * &x;
        let g = y.norm();
        if g == 0.0 {
            return 0.0;
        }
        if i >= burn {
            log_growth += g.ln();
            counted += 1;
        }
        x = y / g;
    }
    (log_growth / counted.max(1) as f64).exp()
}

/// Induced 2-norm (largest singular value).
pub fn operator_norm(m: &Matrix) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// `sum_{j=0..=order} (dt A)^j u`, the truncated expansion of
/// `(I - dt A)^{-1} u`.
///
/// The truncation error is at most `|dt A|^(m+1) |u| / (1 - |dt A|)`
/// (see [`neumann_error_bound`]).
pub fn neumann_inverse_apply(a: &Matrix, dt: f64, order: usize, u: &State) -> Result<NeumannApply> {
    if a.nrows() != a.ncols() || a.nrows() != u.len() {
        return Err(Error::dim(format!(
            "neumann series: matrix {}x{} with state of length {}",
            a.nrows(),
            a.ncols(),
            u.len()
        )));
    }
    let m = a * dt;
    let rho = spectral_radius_estimate(&m, 100);
    if rho >= 1.0 {
        return Err(Error::Divergence { spectral_radius: rho });
    }
    let mut term = u.clone();
    let mut acc = u.clone();
    for _ in 0..order {
        term = &m * term;
        acc += &term;
    }
    ensure_finite(&acc)?;
    Ok(NeumannApply { value: acc, spectral_radius: rho, borderline: rho >= 0.95 })
}

/// `|dt A|^(m+1) |u| / (1 - |dt A|)` for a contraction norm below one.
pub fn neumann_error_bound(op_norm: f64, order: usize, u_norm: f64) -> f64 {
    op_norm.powi(order as i32 + 1) * u_norm / (1.0 - op_norm)
}

/// Explicit Butcher tableau.
#[derive(Debug, Clone, PartialEq)]
pub struct RkTableau {
    a: Matrix,
    b: Vec<f64>,
    c: Vec<f64>,
}

impl RkTableau {
    pub fn new(a: Matrix, b: Vec<f64>, c: Vec<f64>) -> Result<Self> {
        let s = b.len();
        if s == 0 || a.nrows() != s || a.ncols() != s || c.len() != s {
            return Err(Error::dim(format!(
                "tableau: a is {}x{}, b has {}, c has {}",
                a.nrows(),
                a.ncols(),
                b.len(),
                c.len()
            )));
        }
        for i in 0..s {
            for j in i..s {
                if a[(i, j)] != 0.0 {
                    return Err(Error::contract("only explicit (strictly lower triangular) tableaus"));
                }
            }
        }
        if (b.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::contract("tableau weights must sum to one"));
        }
        Ok(RkTableau { a, b, c })
    }

    /// One-stage tableau reproducing forward Euler.
    pub fn euler() -> Self {
        RkTableau { a: Matrix::zeros(1, 1), b: vec![1.0], c: vec![0.0] }
    }

    /// Heun's two-stage method: predictor `u + dt f(u)`, corrector averaging
    /// both slopes.
    pub fn rk2() -> Self {
        RkTableau {
            a: Matrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]),
            b: vec![0.5, 0.5],
            c: vec![0.0, 1.0],
        }
    }

    /// Classical fourth-order method.
    pub fn rk4() -> Self {
        #[rustfmt::skip]
        let a = Matrix::from_row_slice(4, 4, &[
            0.0, 0.0, 0.0, 0.0,
            0.5, 0.0, 0.0, 0.0,
            0.0, 0.5, 0.0, 0.0,
            0.0, 0.0, 1.0, 0.0,
        ]);
        RkTableau { a, b: vec![1.0 / 6.0, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0], c: vec![0.0, 0.5, 0.5, 1.0] }
    }

    pub fn stages(&self) -> usize {
        self.b.len()
    }
}

/// One explicit Runge-Kutta step.
pub fn explicit_rk_step(tab: &RkTableau, f: &dyn VectorField, u: &State, t: f64, dt: f64) -> Result<State> {
    check_dt(dt)?;
    let s = tab.stages();
    let mut slopes: Vec<State> = Vec::with_capacity(s);
    for i in 0..s {
        let mut stage = u.clone();
        for (j, k) in slopes.iter().enumerate() {
            let aij = tab.a[(i, j)];
            if aij != 0.0 {
                stage += k * (dt * aij);
            }
        }
        ensure_finite(&stage)?;
        slopes.push(f.eval(&stage, t + tab.c[i] * dt));
    }
    let mut next = u.clone();
    for (bj, k) in tab.b.iter().zip(&slopes) {
        if *bj != 0.0 {
            next += k * (dt * bj);
        }
    }
    ensure_finite(&next)?;
    Ok(next)
}

/// Coefficients of a k-step linear multistep method
/// `sum_{j=0..=k} alpha_j u_{n+1-j} = dt * sum_{j=0..=k} beta_j f(u_{n+1-j})`.
///
/// `alpha_0` and `beta_0` belong to the unknown `u_{n+1}`, so the method is
/// explicit exactly when `beta_0 == 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeCoefficients {
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl SchemeCoefficients {
    pub fn new(alpha: Vec<f64>, beta: Vec<f64>) -> Result<Self> {
        if alpha.len() < 2 || alpha.len() != beta.len() {
            return Err(Error::dim(format!(
                "multistep coefficients need k + 1 >= 2 alphas and as many betas, got {} and {}",
                alpha.len(),
                beta.len()
            )));
        }
        if alpha[0] == 0.0 {
            return Err(Error::contract("alpha_0 must be non-zero"));
        }
        if let Some(j) = (0..alpha.len()).find(|&j| alpha[j].abs() + beta[j].abs() == 0.0) {
            return Err(Error::contract(format!("|alpha_{j}| + |beta_{j}| must be non-zero")));
        }
        Ok(SchemeCoefficients { alpha, beta })
    }

    /// Explicit method from alphas and the betas of the known history
    /// (`f(u_n), f(u_{n-1}), ...`).
    pub fn explicit(alpha: Vec<f64>, history_beta: Vec<f64>) -> Result<Self> {
        let mut beta = Vec::with_capacity(history_beta.len() + 1);
        beta.push(0.0);
        beta.extend(history_beta);
        Self::new(alpha, beta)
    }

    pub fn forward_euler() -> Self {
        Self::explicit(vec![1.0, -1.0], vec![1.0]).expect("valid coefficients")
    }

    pub fn adams_bashforth2() -> Self {
        Self::explicit(vec![1.0, -1.0, 0.0], vec![1.5, -0.5]).expect("valid coefficients")
    }

    pub fn steps(&self) -> usize {
        self.alpha.len() - 1
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn is_explicit(&self) -> bool {
        self.beta[0] == 0.0
    }

    /// Roots of the first characteristic polynomial
    /// `rho(z) = sum_j alpha_j z^(k-j)`.
    pub fn characteristic_roots(&self) -> Vec<Complex<f64>> {
        let k = self.steps();
        let mut companion = Matrix::zeros(k, k);
        for j in 0..k {
            companion[(0, j)] = -self.alpha[j + 1] / self.alpha[0];
        }
        for i in 1..k {
            companion[(i, i - 1)] = 1.0;
        }
        companion.complex_eigenvalues().iter().copied().collect()
    }

    /// Root condition: every root in the closed unit disk, unit-modulus
    /// roots simple. `tol` absorbs eigenvalue roundoff.
    pub fn is_zero_stable(&self, tol: f64) -> bool {
        let roots = self.characteristic_roots();
        roots.iter().enumerate().all(|(i, z)| {
            let r = z.norm();
            if r > 1.0 + tol {
                return false;
            }
            if (r - 1.0).abs() <= tol {
                return roots
                    .iter()
                    .enumerate()
                    .all(|(j, w)| i == j || (z - w).norm() > tol.sqrt());
            }
            true
        })
    }
}

/// One step of an explicit multistep method. `history` holds the last `k`
/// `(t, u)` pairs, oldest first; the new state is for `t_n + dt`.
pub fn lmm_step(
    coeffs: &SchemeCoefficients,
    f: &dyn VectorField,
    history: &[(f64, State)],
    dt: f64,
) -> Result<State> {
    check_dt(dt)?;
    if !coeffs.is_explicit() {
        return Err(Error::contract("lmm_step needs an explicit method (beta_0 = 0)"));
    }
    let k = coeffs.steps();
    if history.len() < k {
        return Err(Error::contract(format!(
            "{k}-step method needs {k} history states, got {}",
            history.len()
        )));
    }
    let recent = &history[history.len() - k..];
    let mut acc = State::zeros(recent[k - 1].1.len());
    for j in 1..=k {
        let (tj, uj) = &recent[k - j];
        let (a, b) = (coeffs.alpha[j], coeffs.beta[j]);
        if a != 0.0 {
            acc -= uj * a;
        }
        if b != 0.0 {
            acc += f.eval(uj, *tj) * (dt * b);
        }
    }
    if coeffs.alpha[0] != 1.0 {
        acc /= coeffs.alpha[0];
    }
    ensure_finite(&acc)?;
    Ok(acc)
}

/// `(1 - k) u_n + k u_prev + dt * f_val`. Networks call this with `dt = 1`
/// so the residual branch absorbs the step size.
pub fn lm_architecture_step(k: f64, u_n: &State, u_prev: &State, f_val: &State, dt: f64) -> Result<State> {
    if u_n.len() != u_prev.len() || u_n.len() != f_val.len() {
        return Err(Error::dim(format!(
            "lm step: u_n {}, u_prev {}, f {}",
            u_n.len(),
            u_prev.len(),
            f_val.len()
        )));
    }
    let next = u_n * (1.0 - k) + u_prev * k + f_val * dt;
    ensure_finite(&next)?;
    Ok(next)
}

/// Roots of `z^2 - (1 - k) z - k = (z - 1)(z + k)` and the root-condition
/// verdict for the two-step recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharacteristicRoots {
    pub roots: [Complex<f64>; 2],
    /// Root condition holds: `|k| <= 1` and `k != -1` (at `k = -1` the root 1
    /// is double).
    pub zero_stable: bool,
    /// `|k| == 1`: a second root on the unit circle.
    pub on_boundary: bool,
}

pub fn characteristic_roots(k: f64) -> CharacteristicRoots {
    CharacteristicRoots {
        roots: [Complex::new(1.0, 0.0), Complex::new(-k, 0.0)],
        zero_stable: k.abs() <= 1.0 && k != -1.0,
        on_boundary: k.abs() == 1.0,
    }
}

/// Per-layer `k_n` values and their stability audit.
#[derive(Debug, Clone, PartialEq)]
pub struct LmStepParams {
    pub k: Vec<f64>,
}

/// Outcome of checking learned `k_n` against the interval `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct KAudit {
    /// `(layer, k)` with `|k| > 1`; layers count from 1.
    pub outside: Vec<(usize, f64)>,
    /// `(layer, k)` with `|k| == 1`.
    pub boundary: Vec<(usize, f64)>,
    /// `(layer, k)` where the root condition fails (includes `k = -1`).
    pub not_zero_stable: Vec<(usize, f64)>,
}

impl LmStepParams {
    pub fn audit(&self) -> KAudit {
        let mut audit = KAudit::default();
        for (i, &k) in self.k.iter().enumerate() {
            let layer = i + 1;
            let roots = characteristic_roots(k);
            if k.abs() > 1.0 || !k.is_finite() {
                audit.outside.push((layer, k));
            }
            if roots.on_boundary {
                audit.boundary.push((layer, k));
            }
            if !roots.zero_stable {
                audit.not_zero_stable.push((layer, k));
            }
        }
        audit
    }
}

/// Time-stepping schemes understood by [`integrate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Scheme {
    ForwardEuler,
    BackwardEuler(ImplicitSolve),
    Rk2,
    Rk4,
    Ab2,
    /// Two-step LM recursion with a constant coefficient `k`.
    Lm { k: f64 },
    Rk(RkTableau),
    Lmm(SchemeCoefficients),
}

impl Scheme {
    pub const NAMES: [&'static str; 6] = ["forward_euler", "backward_euler", "rk2", "rk4", "ab2", "lm"];

    /// Parses a scheme name; `lm` needs its coefficient.
    pub fn from_name(name: &str, lm_k: Option<f64>) -> Result<Self> {
        Ok(match name {
            "forward_euler" => Scheme::ForwardEuler,
            "backward_euler" => Scheme::BackwardEuler(ImplicitSolve::default()),
            "rk2" => Scheme::Rk2,
            "rk4" => Scheme::Rk4,
            "ab2" => Scheme::Ab2,
            "lm" => Scheme::Lm {
                k: lm_k.ok_or_else(|| Error::config("scheme `lm` requires `lm_k`"))?,
            },
            other => {
                return Err(Error::config(format!(
                    "unknown scheme `{other}` (valid schemes: {})",
                    Scheme::NAMES.join(", ")
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::ForwardEuler => "forward_euler",
            Scheme::BackwardEuler(_) => "backward_euler",
            Scheme::Rk2 => "rk2",
            Scheme::Rk4 => "rk4",
            Scheme::Ab2 => "ab2",
            Scheme::Lm { .. } => "lm",
            Scheme::Rk(_) => "rk",
            Scheme::Lmm(_) => "lmm",
        }
    }

    /// Number of past states a step consumes.
    pub fn steps(&self) -> usize {
        match self {
            Scheme::Ab2 | Scheme::Lm { .. } => 2,
            Scheme::Lmm(c) => c.steps(),
            _ => 1,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Lm { k } => write!(f, "lm(k={k})"),
            other => f.write_str(other.name()),
        }
    }
}

/// Largest number of steps a single [`integrate`] call may take.
pub const STEP_BUDGET: usize = 50_000_000;

/// `f / (1 + k)`: the leading-order dynamics of the LM recursion.
struct Rescaled<'a> {
    f: &'a dyn VectorField,
    factor: f64,
}

impl VectorField for Rescaled<'_> {
    fn dim(&self) -> usize {
        self.f.dim()
    }
    fn eval(&self, u: &State, t: f64) -> State {
        self.f.eval(u, t) * self.factor
    }
}

/// `ceil(span / dt)`, tolerant of ratios like 10.000000000000002 that come
/// from decimal step sizes.
pub(crate) fn uniform_steps(span: f64, dt: f64) -> usize {
    (((span / dt) * (1.0 - 1e-12)).ceil() as usize).max(1)
}

/// Integrates from `t0` to `t_end` in `N = ceil((t_end - t0) / dt)` uniform
/// steps of size `(t_end - t0) / N`.
///
/// Two-step methods take their first step with RK2. For the LM recursion
/// that first step integrates `f / (1 + k)`, the field it is consistent with.
pub fn integrate(
    scheme: &Scheme,
    f: &dyn VectorField,
    u0: &State,
    t0: f64,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    check_dt(dt)?;
    if u0.len() != f.dim() {
        return Err(Error::dim(format!("u0 has length {}, field dimension {}", u0.len(), f.dim())));
    }
    ensure_finite(u0)?;
    let mut traj = Trajectory::new(t0, u0.clone());
    if t_end < t0 {
        return Err(Error::contract(format!("end time {t_end} precedes start time {t0}")));
    }
    if t_end == t0 {
        return Ok(traj);
    }
    let span = t_end - t0;
    let ratio = span / dt;
    if ratio > STEP_BUDGET as f64 {
        return Err(Error::config(format!("{ratio:.0} steps exceed the budget of {STEP_BUDGET}")));
    }
    let n = uniform_steps(span, dt);
    let h = span / n as f64;
    let time = |i: usize| if i == n { t_end } else { t0 + i as f64 * h };

    let lm_field;
    let bootstrap: Option<(&dyn VectorField, RkTableau)> = match scheme {
        Scheme::Ab2 => Some((f, RkTableau::rk2())),
        Scheme::Lmm(c) if c.steps() == 2 => Some((f, RkTableau::rk2())),
        Scheme::Lmm(_) => Some((f, RkTableau::rk4())),
        Scheme::Lm { k } => {
            if 1.0 + k == 0.0 {
                return Err(Error::config("LM scheme with k = -1 has no consistent dynamics"));
            }
            lm_field = Rescaled { f, factor: 1.0 / (1.0 + k) };
            Some((&lm_field, RkTableau::rk2()))
        }
        _ => None,
    };
    if let Scheme::Lmm(c) = scheme {
        if !c.is_explicit() {
            return Err(Error::contract("integrate supports explicit multistep methods only"));
        }
    }

    let ab2 = SchemeCoefficients::adams_bashforth2();
    let rk2 = RkTableau::rk2();
    let rk4 = RkTableau::rk4();
    let mut history: Vec<(f64, State)> = vec![(t0, u0.clone())];

    for i in 0..n {
        let t = time(i);
        let u = &history[history.len() - 1].1;
        let steps = scheme.steps();
        let next = if history.len() < steps {
            let (field, tab) = bootstrap.as_ref().expect("multistep schemes carry a bootstrap");
            explicit_rk_step(tab, *field, u, t, h)
        } else {
            match scheme {
                Scheme::ForwardEuler => forward_euler_step(f, u, t, h),
                Scheme::BackwardEuler(solve) => backward_euler_step(f, u, t, h, *solve),
                Scheme::Rk2 => explicit_rk_step(&rk2, f, u, t, h),
                Scheme::Rk4 => explicit_rk_step(&rk4, f, u, t, h),
                Scheme::Rk(tab) => explicit_rk_step(tab, f, u, t, h),
                Scheme::Ab2 => lmm_step(&ab2, f, &history, h),
                Scheme::Lmm(c) => lmm_step(c, f, &history, h),
                Scheme::Lm { k } => {
                    let prev = &history[history.len() - 2].1;
                    let fv = f.eval(u, t);
                    lm_architecture_step(*k, u, prev, &fv, h)
                }
            }
        }
        .map_err(|e| e.at_step(i + 1))?;
        traj.push(time(i + 1), next.clone())?;
        history.push((time(i + 1), next));
        if history.len() > steps.max(1) {
            history.remove(0);
        }
    }
    Ok(traj)
}

/// State at `t_end` only.
pub fn integrate_final(
    scheme: &Scheme,
    f: &dyn VectorField,
    u0: &State,
    t0: f64,
    t_end: f64,
    dt: f64,
) -> Result<State> {
    Ok(integrate(scheme, f, u0, t0, t_end, dt)?.last().1.clone())
}
