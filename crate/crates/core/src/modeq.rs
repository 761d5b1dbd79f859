//! Order-of-accuracy measurements against reduced modified equations.
//!
//! Forward Euler solves `u' + (dt/2) u'' = f` to second order, and the LM
//! recursion solves `(1 + k) u' + (1 - k)(dt/2) u'' = f` to second order. Both
//! second-order equations are reduced to first order by substituting the
//! leading-order acceleration `u'' ~ J_f f` (scaled by the leading-order time
//! rescaling for LM), which needs no initial velocity.

use std::sync::Arc;

use rayon::prelude::*;

use crate::dyncore::{Matrix, State, TestProblem, VectorField};
use crate::error::{Error, Result};
use crate::odeschemes::{integrate_final, Scheme};

/// Which scheme's modified equation to reduce.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ModifiedKind {
    ForwardEuler,
    Lm { k: f64 },
}

/// `u -> a f(u) - b J_f(u) f(u)` with scheme-dependent `a`, `b`.
#[derive(Clone)]
pub struct ModifiedField {
    f: Arc<dyn VectorField>,
    drift_scale: f64,
    correction: f64,
}

impl ModifiedField {
    /// Coefficients `(a, b)` of `a f - b J f`.
    pub fn coefficients(&self) -> (f64, f64) {
        (self.drift_scale, self.correction)
    }
}

impl std::fmt::Debug for ModifiedField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ModifiedField")
            .field("drift_scale", &self.drift_scale)
            .field("correction", &self.correction)
            .finish()
    }
}

impl VectorField for ModifiedField {
    fn dim(&self) -> usize {
        self.f.dim()
    }

    fn eval(&self, u: &State, t: f64) -> State {
        let fu = self.f.eval(u, t);
        let jac = self.f.jacobian(u, t).expect("checked at construction");
        let jf = jac * &fu;
        fu * self.drift_scale - jf * self.correction
    }
}

/// First-order reduction of the modified equation of `kind` at step `dt`.
///
/// * forward Euler: `f - (dt/2) J f`
/// * LM(k): `f / (1+k) - dt (1-k) / (2 (1+k)^3) J f`
pub fn reduced_modified_field(f: Arc<dyn VectorField>, dt: f64, kind: ModifiedKind) -> Result<ModifiedField> {
    let probe = State::zeros(f.dim());
    if f.jacobian(&probe, 0.0).is_none() {
        return Err(Error::contract("modified-field reduction needs a Jacobian"));
    }
    let (drift_scale, correction) = match kind {
        ModifiedKind::ForwardEuler => (1.0, dt / 2.0),
        ModifiedKind::Lm { k } => {
            let s = 1.0 + k;
            if s == 0.0 {
                return Err(Error::SingularReduction { k });
            }
            (1.0 / s, dt * (1.0 - k) / (2.0 * s * s * s))
        }
    };
    Ok(ModifiedField { f, drift_scale, correction })
}

/// What the stepper's solution is compared against.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Reference {
    /// The problem's closed-form solution.
    Exact,
    /// The original field, integrated with fine RK4.
    Original,
    /// The reduced modified field for each step size, integrated with fine RK4.
    Modified(ModifiedKind),
}

/// Least-squares line through `(x, y)` points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y = slope x + intercept`. Needs two distinct `x`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return None;
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs.iter().zip(ys).map(|(x, y)| (y - slope * x - intercept).powi(2)).sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Some(LineFit { slope, intercept, r_squared })
}

/// Fits `log y = slope log x + c`.
pub fn fit_loglog(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    fit_line(&lx, &ly)
}

/// Minimum R^2 for a slope to be trusted.
pub const MIN_R_SQUARED: f64 = 0.99;

/// Errors at the horizon per step size, with the fitted convergence slope.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    pub dts: Vec<f64>,
    pub errors: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl OrderReport {
    /// `false` when the log-log fit is too poor to quote a slope.
    pub fn reliable(&self) -> bool {
        self.r_squared >= MIN_R_SQUARED
    }
}

/// `start * ratio^i` for `i in 0..count`.
pub fn geometric_grid(start: f64, ratio: f64, count: usize) -> Vec<f64> {
    (0..count).map(|i| start * ratio.powi(i as i32)).collect()
}

/// `2^-lo, ..., 2^-hi`.
pub fn dyadic_grid(lo: i32, hi: i32) -> Vec<f64> {
    (lo..=hi).map(|e| 2f64.powi(-e)).collect()
}

fn check_grid(dts: &[f64]) -> Result<()> {
    if dts.len() < 4 {
        return Err(Error::contract(format!("order estimation needs >= 4 step sizes, got {}", dts.len())));
    }
    if dts.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
        return Err(Error::contract("step sizes must be positive and finite"));
    }
    let ratio = dts[1] / dts[0];
    let geometric = dts
        .windows(2)
        .all(|w| ((w[1] / w[0]) / ratio - 1.0).abs() <= 1e-9);
    if !geometric || ratio == 1.0 {
        return Err(Error::contract("step sizes must be geometrically spaced"));
    }
    Ok(())
}

/// Solution of `reference` at `horizon` for step size `dt` of the stepper.
pub fn reference_solution(
    reference: Reference,
    problem: &TestProblem,
    dt: f64,
    ref_dt: f64,
    horizon: f64,
) -> Result<State> {
    let field: Arc<dyn VectorField> = problem.field.clone();
    match reference {
        Reference::Exact => Ok(problem.exact(horizon)),
        Reference::Original => integrate_final(&Scheme::Rk4, &*field, &problem.u0, 0.0, horizon, ref_dt),
        Reference::Modified(kind) => {
            let m = reduced_modified_field(field, dt, kind)?;
            integrate_final(&Scheme::Rk4, &m, &problem.u0, 0.0, horizon, ref_dt)
        }
    }
}

/// Runs `scheme` on `problem` for each step size and fits the slope of
/// `log |u_scheme(T) - u_ref(T)|` against `log dt`. Fine references use RK4
/// at `min(dts) / 100`.
pub fn estimate_order(
    scheme: &Scheme,
    reference: Reference,
    problem: &TestProblem,
    dts: &[f64],
    horizon: f64,
) -> Result<OrderReport> {
    check_grid(dts)?;
    let ref_dt = dts.iter().copied().fold(f64::INFINITY, f64::min) / 100.0;
    let field: Arc<dyn VectorField> = problem.field.clone();
    let errors: Vec<f64> = dts
        .par_iter()
        .map(|&dt| -> Result<f64> {
            let approx = integrate_final(scheme, &*field, &problem.u0, 0.0, horizon, dt)
                .map_err(|e| e.with_dt(dt))?;
            let exact = reference_solution(reference, problem, dt, ref_dt, horizon)
                .map_err(|e| e.with_dt(dt))?;
            Ok((approx - exact).norm())
        })
        .collect::<Result<_>>()?;
    if let Some(i) = errors.iter().position(|&e| !(e > 0.0)) {
        return Err(Error::contract(format!(
            "error at dt = {} is {}; slope fit needs strictly positive errors",
            dts[i], errors[i]
        )));
    }
    let fit = fit_loglog(dts, &errors).expect("grid has distinct step sizes");
    Ok(OrderReport {
        dts: dts.to_vec(),
        errors,
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
    })
}

/// Potential `g(u_n)` along a run of `scheme` on a gradient-flow problem;
/// used to compare how fast LM(k < 0) and forward Euler descend. Reported,
/// not judged.
pub fn descent_curve(scheme: &Scheme, problem: &TestProblem, dt: f64, steps: usize) -> Result<Vec<f64>> {
    let horizon = dt * steps as f64;
    let traj = crate::odeschemes::integrate(scheme, &*problem.field, &problem.u0, 0.0, horizon, dt)?;
    Ok(traj.states().iter().map(|u| problem.potential(u)).collect())
}

/// `J_f f` for a field with a Jacobian; exposed for tests of the reduction.
pub fn jacobian_times_field(f: &dyn VectorField, u: &State, t: f64) -> Option<State> {
    let jac: Matrix = f.jacobian(u, t)?;
    Some(jac * f.eval(u, t))
}
