//! Dense state primitives, vector fields, trajectories, reproducible RNG
//! streams and the canonical test problems with closed-form solutions.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// The dynamical variable `u`: a dense real vector of dimension `d >= 1`.
pub type State = DVector<f64>;
/// Dense real matrix, used for linear operators and Jacobians.
pub type Matrix = DMatrix<f64>;

/// Fails with an overflow error if any entry is NaN or infinite.
pub fn ensure_finite(u: &State) -> Result<()> {
    if u.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Overflow { step: None, dt: None })
    }
}

/// A right-hand side `f(u, t)` for `u' = f(u, t)`.
pub trait VectorField: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, u: &State, t: f64) -> State;

    /// Exact Jacobian `df/du`, when the field knows it.
    fn jacobian(&self, _u: &State, _t: f64) -> Option<Matrix> {
        None
    }
}

impl<F: VectorField + ?Sized> VectorField for Arc<F> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, u: &State, t: f64) -> State {
        (**self).eval(u, t)
    }
    fn jacobian(&self, u: &State, t: f64) -> Option<Matrix> {
        (**self).jacobian(u, t)
    }
}

impl<F: VectorField + ?Sized> VectorField for &F {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, u: &State, t: f64) -> State {
        (**self).eval(u, t)
    }
    fn jacobian(&self, u: &State, t: f64) -> Option<Matrix> {
        (**self).jacobian(u, t)
    }
}

/// `u -> A u`.
#[derive(Debug, Clone)]
pub struct LinearField {
    a: Matrix,
}

impl LinearField {
    pub fn matrix(&self) -> &Matrix {
        &self.a
    }
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.a.nrows()
    }
    fn eval(&self, u: &State, _t: f64) -> State {
        &self.a * u
    }
    fn jacobian(&self, _u: &State, _t: f64) -> Option<Matrix> {
        Some(self.a.clone())
    }
}

/// Builds the linear field `u -> A u`. `A` must be square and finite.
pub fn linear_field(a: Matrix) -> Result<LinearField> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::dim(format!(
            "linear field needs a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::contract("linear field matrix has non-finite entries"));
    }
    Ok(LinearField { a })
}

type EvalFn = dyn Fn(&State, f64) -> State + Send + Sync;
type JacFn = dyn Fn(&State, f64) -> Matrix + Send + Sync;

/// A vector field backed by closures.
#[derive(Clone)]
pub struct FnField {
    dim: usize,
    eval: Arc<EvalFn>,
    jac: Option<Arc<JacFn>>,
}

impl FnField {
    pub fn new(dim: usize, eval: impl Fn(&State, f64) -> State + Send + Sync + 'static) -> Self {
        FnField { dim, eval: Arc::new(eval), jac: None }
    }

    pub fn with_jacobian(
        mut self,
        jac: impl Fn(&State, f64) -> Matrix + Send + Sync + 'static,
    ) -> Self {
        self.jac = Some(Arc::new(jac));
        self
    }
}

impl fmt::Debug for FnField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnField")
            .field("dim", &self.dim)
            .field("jacobian", &self.jac.is_some())
            .finish()
    }
}

impl VectorField for FnField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn eval(&self, u: &State, t: f64) -> State {
        (self.eval)(u, t)
    }
    fn jacobian(&self, u: &State, t: f64) -> Option<Matrix> {
        self.jac.as_ref().map(|j| j(u, t))
    }
}

/// Central finite-difference Jacobian with per-coordinate step
/// `h = 1e-6 * max(1, |x_i|)`.
pub fn finite_difference_jacobian(field: &dyn VectorField, u: &State, t: f64) -> Matrix {
    let d = u.len();
    let mut jac = Matrix::zeros(field.dim(), d);
    for i in 0..d {
        let h = 1e-6 * u[i].abs().max(1.0);
        let mut up = u.clone();
        let mut down = u.clone();
        up[i] += h;
        down[i] -= h;
        let col = (field.eval(&up, t) - field.eval(&down, t)) / (2.0 * h);
        jac.set_column(i, &col);
    }
    jac
}

/// Largest `|J - J_fd| / max(1, |J|)` over all entries, or `None` when the
/// field carries no Jacobian.
pub fn jacobian_check(field: &dyn VectorField, u: &State, t: f64) -> Option<f64> {
    let exact = field.jacobian(u, t)?;
    let approx = finite_difference_jacobian(field, u, t);
    Some(
        exact
            .iter()
            .zip(approx.iter())
            .map(|(a, b)| (a - b).abs() / a.abs().max(1.0))
            .fold(0.0, f64::max),
    )
}

/// Times and states of an integration run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<State>,
}

impl Trajectory {
    pub fn new(t0: f64, u0: State) -> Self {
        Trajectory { times: vec![t0], states: vec![u0] }
    }

    pub fn push(&mut self, t: f64, u: State) -> Result<()> {
        let last_t = *self.times.last().expect("trajectory is never empty");
        if t <= last_t {
            return Err(Error::contract(format!(
                "trajectory times must increase strictly ({t} after {last_t})"
            )));
        }
        if u.len() != self.states[0].len() {
            return Err(Error::dim(format!(
                "trajectory state of dimension {} appended to dimension {}",
                u.len(),
                self.states[0].len()
            )));
        }
        self.times.push(t);
        self.states.push(u);
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn last(&self) -> (f64, &State) {
        let n = self.times.len() - 1;
        (self.times[n], &self.states[n])
    }
}

/// Names of the bundled test problems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    /// `u' = -u`.
    ExpDecay,
    /// Planar rotation `u' = [[0, 1], [-1, 0]] u`.
    Harmonic,
    /// Gradient flow of `g(u) = u^T Q u / 2` with a fixed SPD `Q`.
    QuadraticGradFlow,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 3] =
        [ProblemKind::ExpDecay, ProblemKind::Harmonic, ProblemKind::QuadraticGradFlow];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::ExpDecay => "exp_decay",
            ProblemKind::Harmonic => "harmonic",
            ProblemKind::QuadraticGradFlow => "quadratic_gradflow",
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemKind::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            Error::config(format!(
                "unknown problem `{s}` (expected one of: exp_decay, harmonic, quadratic_gradflow)"
            ))
        })
    }
}

/// SPD matrix of the quadratic gradient flow.
pub fn gradflow_matrix() -> Matrix {
    Matrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])
}

/// An autonomous linear ODE together with its exact solution.
#[derive(Clone)]
pub struct TestProblem {
    pub kind: ProblemKind,
    pub field: Arc<LinearField>,
    pub u0: State,
    pub horizon: f64,
    eigen: Option<SymmetricEigen<f64, nalgebra::Dyn>>,
}

impl fmt::Debug for TestProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TestProblem")
            .field("kind", &self.kind)
            .field("u0", &self.u0.as_slice())
            .field("horizon", &self.horizon)
            .finish()
    }
}

impl TestProblem {
    /// Replaces the initial condition (exp_decay accepts any dimension).
    pub fn with_initial(mut self, u0: State) -> Result<Self> {
        match self.kind {
            ProblemKind::ExpDecay => {
                if u0.is_empty() {
                    return Err(Error::dim("initial state must have dimension >= 1"));
                }
                self.field = Arc::new(linear_field(-Matrix::identity(u0.len(), u0.len()))?);
            }
            _ if u0.len() != self.u0.len() => {
                return Err(Error::dim(format!(
                    "{} needs a state of dimension {}, got {}",
                    self.kind,
                    self.u0.len(),
                    u0.len()
                )))
            }
            _ => {}
        }
        ensure_finite(&u0)?;
        self.u0 = u0;
        Ok(self)
    }

    pub fn with_horizon(mut self, horizon: f64) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn dim(&self) -> usize {
        self.u0.len()
    }

    /// Closed-form solution at time `t` started from `u0` at time 0.
    pub fn exact(&self, t: f64) -> State {
        if t == 0.0 {
            return self.u0.clone();
        }
        match self.kind {
            ProblemKind::ExpDecay => &self.u0 * (-t).exp(),
            ProblemKind::Harmonic => {
                let (s, c) = t.sin_cos();
                State::from_vec(vec![
                    c * self.u0[0] + s * self.u0[1],
                    -s * self.u0[0] + c * self.u0[1],
                ])
            }
            ProblemKind::QuadraticGradFlow => {
                let eig = self.eigen.as_ref().expect("gradient flow carries its eigensystem");
                let v = &eig.eigenvectors;
                let mut coeff = v.transpose() * &self.u0;
                for (c, lambda) in coeff.iter_mut().zip(eig.eigenvalues.iter()) {
                    *c *= (-lambda * t).exp();
                }
                v * coeff
            }
        }
    }

    /// `g(u) = u^T Q u / 2` for the gradient flow; `|u|^2 / 2` otherwise.
    pub fn potential(&self, u: &State) -> f64 {
        match self.kind {
            ProblemKind::QuadraticGradFlow => 0.5 * u.dot(&(gradflow_matrix() * u)),
            _ => 0.5 * u.norm_squared(),
        }
    }
}

/// Builds one of the bundled problems with its default initial condition and
/// horizon `T = 1`.
pub fn make_test_problem(kind: ProblemKind) -> TestProblem {
    let (a, u0, eigen) = match kind {
        ProblemKind::ExpDecay => (-Matrix::identity(1, 1), State::from_vec(vec![1.0]), None),
        ProblemKind::Harmonic => (
            Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            State::from_vec(vec![1.0, 0.0]),
            None,
        ),
        ProblemKind::QuadraticGradFlow => {
            let q = gradflow_matrix();
            let eig = SymmetricEigen::new(q.clone());
            (-q, State::from_vec(vec![1.0, 1.0]), Some(eig))
        }
    };
    TestProblem {
        kind,
        field: Arc::new(linear_field(a).expect("bundled matrices are square")),
        u0,
        horizon: 1.0,
        eigen,
    }
}

/// Looks a problem up by name.
pub fn make_test_problem_named(name: &str) -> Result<TestProblem> {
    Ok(make_test_problem(name.parse()?))
}

/// Generator used for every random draw in the crate.
pub type LabRng = ChaCha8Rng;

/// Seeded source of independent, named random streams.
///
/// Each stream is keyed by `(seed, name, index)` through SHA-256, so the draws
/// of one stream never depend on how much another stream was consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedSource {
    seed: u64,
}

impl SeedSource {
    pub fn new(seed: u64) -> Self {
        SeedSource { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, name: &str) -> LabRng {
        self.substream(name, 0)
    }

    pub fn substream(&self, name: &str, index: u64) -> LabRng {
        let mut hasher = Sha256::new();
        hasher.update(b"odenet-stream");
        hasher.update(self.seed.to_le_bytes());
        hasher.update((name.len() as u64).to_le_bytes());
        hasher.update(name.as_bytes());
        hasher.update(index.to_le_bytes());
        let digest = hasher.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        LabRng::from_seed(key)
    }
}
