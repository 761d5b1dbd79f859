//! Ito simulation and the stochastic block rules.
//!
//! Noise is scalar: one increment per step multiplies the diffusion vector,
//! matching the one-draw-per-block rules of shake-shake and stochastic depth.
//! Training a network with these rules is read as a stochastic control
//! problem, minimising `E[L(X_T)]` plus a running regulariser over the
//! parameters; no control solver is provided here.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::dyncore::{ensure_finite, FnField, LabRng, SeedSource, State, VectorField};
use crate::error::{Error, Result};
use crate::modeq::fit_loglog;
use crate::odeschemes::uniform_steps;

/// Law of the increment replacing the Brownian step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IncrementKind {
    Gaussian,
    TwoPoint,
    Uniform,
    /// Deterministic `sqrt(dt)`; fails the moment condition.
    ConstantShift,
}

impl IncrementKind {
    pub const ALL: [IncrementKind; 4] =
        [IncrementKind::Gaussian, IncrementKind::TwoPoint, IncrementKind::Uniform, IncrementKind::ConstantShift];

    pub fn name(self) -> &'static str {
        match self {
            IncrementKind::Gaussian => "gaussian",
            IncrementKind::TwoPoint => "two_point",
            IncrementKind::Uniform => "uniform",
            IncrementKind::ConstantShift => "constant_shift",
        }
    }
}

impl fmt::Display for IncrementKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IncrementKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        IncrementKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config(format!("unknown increment kind '{s}' (expected gaussian, two_point, uniform, constant_shift)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IncrementDistribution {
    pub kind: IncrementKind,
    pub dt: f64,
}

impl IncrementDistribution {
    pub fn new(kind: IncrementKind, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::contract(format!("increment step must be positive, got {dt}")));
        }
        Ok(IncrementDistribution { kind, dt })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let s = self.dt.sqrt();
        match self.kind {
            IncrementKind::Gaussian => {
                let z: f64 = StandardNormal.sample(rng);
                s * z
            }
            IncrementKind::TwoPoint => {
                if rng.random::<bool>() {
                    s
                } else {
                    -s
                }
            }
            IncrementKind::Uniform => {
                let a = (3.0 * self.dt).sqrt();
                rng.random_range(-a..=a)
            }
            IncrementKind::ConstantShift => s,
        }
    }
}

pub fn sample_increment<R: Rng + ?Sized>(dist: &IncrementDistribution, rng: &mut R) -> f64 {
    dist.sample(rng)
}

/// Moment defects `|E dW|`, `|E dW^3|`, `|E dW^2 - dt|` and the verdict at `K = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentCheck {
    pub first: f64,
    pub third: f64,
    pub second_gap: f64,
    pub pass: bool,
}

pub const MOMENT_K: f64 = 1.0;

/// Closed-form moments. Symmetric laws scaled to variance `dt` have exactly
/// zero defects.
pub fn moment_condition_check(dist: &IncrementDistribution) -> MomentCheck {
    let dt = dist.dt;
    let (first, third, second_gap) = match dist.kind {
        IncrementKind::Gaussian | IncrementKind::TwoPoint | IncrementKind::Uniform => (0.0, 0.0, 0.0),
        IncrementKind::ConstantShift => (dt.sqrt(), dt.powf(1.5), 0.0),
    };
    let bound = MOMENT_K * dt * dt;
    let pass = first <= bound && third <= bound && second_gap <= bound;
    MomentCheck { first, third, second_gap, pass }
}

/// Functional of the terminal state, applied to the first coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TestFunction {
    Identity,
    Square,
}

impl TestFunction {
    pub fn apply(self, x: &State) -> f64 {
        match self {
            TestFunction::Identity => x[0],
            TestFunction::Square => x[0] * x[0],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TestFunction::Identity => "identity",
            TestFunction::Square => "square",
        }
    }
}

impl FromStr for TestFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(TestFunction::Identity),
            "square" => Ok(TestFunction::Square),
            _ => Err(Error::config(format!("unknown test function '{s}' (expected identity, square)"))),
        }
    }
}

pub type Diffusion = Arc<dyn Fn(&State, f64) -> State + Send + Sync>;
pub type Expectation = Arc<dyn Fn(TestFunction, f64) -> Option<f64> + Send + Sync>;

/// `dX = f(X, t) dt + g(X, t) dB` with scalar `B`.
#[derive(Clone)]
pub struct SdeProblem {
    pub drift: Arc<dyn VectorField>,
    pub diffusion: Diffusion,
    pub x0: State,
    pub horizon: f64,
    pub expectation: Option<Expectation>,
}

impl fmt::Debug for SdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeProblem")
            .field("dim", &self.drift.dim())
            .field("x0", &self.x0)
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl SdeProblem {
    pub fn new(drift: Arc<dyn VectorField>, diffusion: Diffusion, x0: State, horizon: f64) -> Result<Self> {
        if x0.len() != drift.dim() {
            return Err(Error::dim(format!("x0 has length {}, drift dimension {}", x0.len(), drift.dim())));
        }
        let g0 = diffusion(&x0, 0.0);
        if g0.len() != x0.len() {
            return Err(Error::dim(format!("diffusion returns length {}, expected {}", g0.len(), x0.len())));
        }
        if !(horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::contract(format!("horizon must be finite and non-negative, got {horizon}")));
        }
        Ok(SdeProblem { drift, diffusion, x0, horizon, expectation: None })
    }

    pub fn with_expectation(mut self, e: Expectation) -> Self {
        self.expectation = Some(e);
        self
    }

    pub fn analytic(&self, phi: TestFunction) -> Option<f64> {
        self.expectation.as_ref().and_then(|e| e(phi, self.horizon))
    }
}

/// Geometric Brownian motion `dX = mu X dt + sigma X dB` in one dimension.
pub fn gbm(mu: f64, sigma: f64, x0: f64, horizon: f64) -> Result<SdeProblem> {
    let drift = FnField::new(1, move |x: &State, _| x * mu)
        .with_jacobian(move |_, _| crate::dyncore::Matrix::from_element(1, 1, mu));
    let diffusion: Diffusion = Arc::new(move |x: &State, _| x * sigma);
    let expectation: Expectation = Arc::new(move |phi, t| {
        Some(match phi {
            TestFunction::Identity => x0 * (mu * t).exp(),
            TestFunction::Square => x0 * x0 * ((2.0 * mu + sigma * sigma) * t).exp(),
        })
    });
    Ok(SdeProblem::new(Arc::new(drift), diffusion, State::from_element(1, x0), horizon)?.with_expectation(expectation))
}

/// `X + f dt + g dw`. With zero diffusion this is the forward Euler step.
pub fn euler_maruyama_step(prob: &SdeProblem, x: &State, t: f64, dt: f64, dw: f64) -> Result<State> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::contract(format!("step size must be positive and finite, got {dt}")));
    }
    let next = x + prob.drift.eval(x, t) * dt + (prob.diffusion)(x, t) * dw;
    ensure_finite(&next)?;
    Ok(next)
}

/// Monte Carlo estimate with its 95% normal half-width.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub half_width: f64,
}

pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq)]
pub struct WeakErrorReport {
    pub kind: IncrementKind,
    pub paths: usize,
    pub dts: Vec<f64>,
    pub estimates: Vec<Estimate>,
    pub analytic: f64,
    /// Least-squares slope of `log |bias|` against `log dt` over the step
    /// sizes whose bias exceeds the half-width; `None` with fewer than two.
    pub slope: Option<f64>,
}

impl WeakErrorReport {
    pub fn biases(&self) -> Vec<f64> {
        self.estimates.iter().map(|e| (e.mean - self.analytic).abs()).collect()
    }

    pub fn resolvable(&self) -> Vec<bool> {
        self.estimates.iter().map(|e| (e.mean - self.analytic).abs() > e.half_width).collect()
    }

    pub fn covers(&self, i: usize) -> bool {
        !self.resolvable()[i]
    }

    /// Every bias is inside its confidence interval.
    pub fn inconclusive(&self) -> bool {
        self.resolvable().iter().all(|r| !r)
    }

    pub fn meets_precision(&self, tolerance: f64) -> bool {
        self.paths >= 100_000 || self.estimates.iter().all(|e| e.half_width <= tolerance)
    }
}

const CHUNK: usize = 4096;

/// Gaussian increments on nested grids are aggregated from the finest grid so
/// all step sizes see the same Brownian path.
fn nested_factors(counts: &[usize]) -> Option<(usize, Vec<usize>)> {
    let fine = *counts.iter().max()?;
    counts.iter().map(|&n| (fine % n == 0).then(|| fine / n)).collect::<Option<Vec<_>>>().map(|f| (fine, f))
}

fn simulate_path(
    prob: &SdeProblem,
    kind: IncrementKind,
    counts: &[usize],
    nested: Option<&(usize, Vec<usize>)>,
    rng: &mut LabRng,
    phi: TestFunction,
    buf: &mut Vec<f64>,
) -> Result<Vec<f64>> {
    let t_end = prob.horizon;
    let run = |n: usize, incs: &mut dyn FnMut() -> f64| -> Result<f64> {
        let h = t_end / n as f64;
        let mut x = prob.x0.clone();
        for i in 0..n {
            let dw = incs();
            x = euler_maruyama_step(prob, &x, i as f64 * h, h, dw).map_err(|e| e.at_step(i).with_dt(h))?;
        }
        Ok(phi.apply(&x))
    };
    match (kind, nested) {
        (IncrementKind::Gaussian, Some((fine, factors))) => {
            let dist = IncrementDistribution::new(kind, t_end / *fine as f64)?;
            buf.clear();
            buf.extend((0..*fine).map(|_| dist.sample(rng)));
            counts
                .iter()
                .zip(factors)
                .map(|(&n, &r)| {
                    let mut i = 0;
                    run(n, &mut || {
                        let s: f64 = buf[i..i + r].iter().sum();
                        i += r;
                        s
                    })
                })
                .collect()
        }
        _ => counts
            .iter()
            .map(|&n| {
                let dist = IncrementDistribution::new(kind, t_end / n as f64)?;
                run(n, &mut || dist.sample(rng))
            })
            .collect(),
    }
}

/// Simulates `paths` Euler-Maruyama paths per step size with increments of
/// `kind` and compares `E[phi(X_T)]` to the analytic value. Path `i` draws
/// from its own stream, so results do not depend on thread scheduling.
pub fn weak_error_sweep(
    prob: &SdeProblem,
    kind: IncrementKind,
    phi: TestFunction,
    dts: &[f64],
    paths: usize,
    seed: u64,
) -> Result<WeakErrorReport> {
    let analytic = prob
        .analytic(phi)
        .ok_or_else(|| Error::contract(format!("no analytic expectation for {}", phi.name())))?;
    if paths < 2 {
        return Err(Error::config(format!("paths must be at least 2, got {paths}")));
    }
    if dts.is_empty() || dts.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
        return Err(Error::contract("step sizes must be positive and finite"));
    }
    if !(prob.horizon > 0.0) {
        return Err(Error::contract("weak sweep needs a positive horizon"));
    }
    let counts: Vec<usize> = dts.iter().map(|&h| uniform_steps(prob.horizon, h)).collect();
    let nested = nested_factors(&counts);
    let seeds = SeedSource::new(seed);
    let stream = format!("sde/{}", kind.name());
    let m = dts.len();

    let chunks: Vec<(Vec<f64>, Vec<f64>)> = (0..paths.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| -> Result<(Vec<f64>, Vec<f64>)> {
            let mut sum = vec![0.0; m];
            let mut sq = vec![0.0; m];
            let mut buf = Vec::new();
            for p in c * CHUNK..((c + 1) * CHUNK).min(paths) {
                let mut rng = seeds.substream(&stream, p as u64);
                let vals = simulate_path(prob, kind, &counts, nested.as_ref(), &mut rng, phi, &mut buf)?;
                for (j, v) in vals.into_iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
            }
            Ok((sum, sq))
        })
        .collect::<Result<_>>()?;

    let n = paths as f64;
    let estimates: Vec<Estimate> = (0..m)
        .map(|j| {
            let s: f64 = chunks.iter().map(|c| c.0[j]).sum();
            let q: f64 = chunks.iter().map(|c| c.1[j]).sum();
            let mean = s / n;
            let var = ((q - n * mean * mean) / (n - 1.0)).max(0.0);
            Estimate { mean, half_width: Z95 * (var / n).sqrt() }
        })
        .collect();

    let mut report = WeakErrorReport { kind, paths, dts: dts.to_vec(), estimates, analytic, slope: None };
    let (xs, ys): (Vec<f64>, Vec<f64>) = report
        .dts
        .iter()
        .zip(report.biases())
        .zip(report.resolvable())
        .filter(|(_, r)| *r)
        .map(|((&h, b), _)| (h, b))
        .unzip();
    report.slope = fit_loglog(&xs, &ys).map(|f| f.slope);
    Ok(report)
}

/// Per-step-size comparison of two independent weak sweeps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Agreement {
    pub dt: f64,
    pub first: Estimate,
    pub second: Estimate,
    pub joint_half_width: f64,
}

impl Agreement {
    pub fn agree(&self) -> bool {
        (self.first.mean - self.second.mean).abs() <= self.joint_half_width
    }
}

/// Joint 95% interval `1.96 sqrt(se_a^2 + se_b^2)` for each step size.
pub fn compare_sweeps(a: &WeakErrorReport, b: &WeakErrorReport) -> Result<Vec<Agreement>> {
    if a.dts != b.dts {
        return Err(Error::contract("sweeps use different step sizes"));
    }
    Ok(a.dts
        .iter()
        .zip(a.estimates.iter().zip(&b.estimates))
        .map(|(&dt, (&first, &second))| Agreement {
            dt,
            first,
            second,
            joint_half_width: first.half_width.hypot(second.half_width),
        })
        .collect())
}

fn check_same_dim(a: &State, b: &State, what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim(format!("{what}: lengths {} and {}", a.len(), b.len())));
    }
    Ok(())
}

/// `X + (dt/2 + sqrt(dt)(eta - 1/2)) f1 + (dt/2 + sqrt(dt)(1/2 - eta)) f2`.
pub fn shake_shake_step(f1: &State, f2: &State, x: &State, dt: f64, eta: f64) -> Result<State> {
    check_same_dim(f1, x, "shake-shake branch")?;
    check_same_dim(f2, x, "shake-shake branch")?;
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::contract(format!("shake-shake eta must lie in [0, 1], got {eta}")));
    }
    let s = dt.sqrt();
    let a = dt / 2.0 + s * (eta - 0.5);
    let b = dt / 2.0 + s * (0.5 - eta);
    Ok(x + f1 * a + f2 * b)
}

/// `X + (dt p + sqrt(dt)(eta - p)) f`, which is `X + eta f` at `dt = 1`.
pub fn stochastic_depth_step(f: &State, x: &State, dt: f64, p: f64, eta: f64) -> Result<State> {
    check_same_dim(f, x, "stochastic-depth branch")?;
    if eta != 0.0 && eta != 1.0 {
        return Err(Error::contract(format!("stochastic-depth eta must be 0 or 1, got {eta}")));
    }
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::contract(format!("survival probability must lie in (0, 1), got {p}")));
    }
    let c = if dt == 1.0 { eta } else { dt * p + dt.sqrt() * (eta - p) };
    Ok(x + f * c)
}

/// `(2 + g) X_n - (1 + g) X_{n-1} + eta f`.
pub fn stochastic_lm_step(x_n: &State, x_prev: &State, f: &State, g: f64, eta: f64) -> Result<State> {
    check_same_dim(x_prev, x_n, "stochastic LM history")?;
    check_same_dim(f, x_n, "stochastic LM branch")?;
    Ok(x_n * (2.0 + g) - x_prev * (1.0 + g) + f * eta)
}
