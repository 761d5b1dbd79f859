//! Residual architectures as one-step schemes on a width-`d` feature state.
//!
//! | kind        | block update                                      | scheme        |
//! |-------------|---------------------------------------------------|---------------|
//! | `resnet`    | `u + F(u)`                                        | forward Euler |
//! | `lm_resnet` | `(1 - k) u_n + k u_{n-1} + F(u_n)`                | LM two-step   |
//! | `polynet`   | `u + F(u) + F(F(u)) + ...` (m terms)              | series solve  |
//! | `fractal2`  | `k1 u + k2 (k3 u + f1(u)) + f2(k3 u + f1(u))`     | RK2-like      |
//! | `revnet`    | `X' = X + f(Y)`, `Y' = Y + g(X')`                 | symplectic    |
//!
//! `F` is the pre-activation branch `W2 relu(W1 relu(u) + b1) + b2`. Inputs are
//! lifted to width `d` by a linear map and read out by a linear classifier.
//! Batches are tensors with one sample per column.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{NodeId, ParamStore, Tape, Tensor};
use crate::dyncore::LabRng;
use crate::error::{Error, Result};
use crate::odeschemes::LmStepParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchKind {
    Resnet,
    LmResnet,
    Polynet { m: usize },
    Fractal2,
    Revnet,
}

impl ArchKind {
    pub const NAMES: [&'static str; 5] = ["resnet", "lm_resnet", "polynet(m)", "fractal2", "revnet"];

    pub fn is_lm(self) -> bool {
        self == ArchKind::LmResnet
    }

    /// Kinds with a second branch per block regardless of `NetworkSpec::dual_branch`.
    fn always_dual(self) -> bool {
        matches!(self, ArchKind::Fractal2 | ArchKind::Revnet)
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArchKind::Resnet => f.write_str("resnet"),
            ArchKind::LmResnet => f.write_str("lm_resnet"),
            ArchKind::Polynet { m } => write!(f, "polynet({m})"),
            ArchKind::Fractal2 => f.write_str("fractal2"),
            ArchKind::Revnet => f.write_str("revnet"),
        }
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    /// Accepts the display names; bare `polynet` means `polynet(2)`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config(format!("unknown architecture '{s}' (expected one of {})", Self::NAMES.join(", ")));
        match s {
            "resnet" => Ok(ArchKind::Resnet),
            "lm_resnet" => Ok(ArchKind::LmResnet),
            "polynet" => Ok(ArchKind::Polynet { m: 2 }),
            "fractal2" => Ok(ArchKind::Fractal2),
            "revnet" => Ok(ArchKind::Revnet),
            _ => {
                let m = s
                    .strip_prefix("polynet(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|m| m.parse::<usize>().ok())
                    .ok_or_else(bad)?;
                Ok(ArchKind::Polynet { m })
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkSpec {
    pub kind: ArchKind,
    pub depth: usize,
    pub width: usize,
    pub input_dim: usize,
    pub classes: usize,
    /// Uniform range for the LM coefficients `k_n`.
    pub k_init: (f64, f64),
    /// Second residual branch per block, needed by shake-shake.
    pub dual_branch: bool,
}

pub const DEFAULT_K_INIT: (f64, f64) = (-0.1, 0.0);

impl NetworkSpec {
    pub fn new(kind: ArchKind, depth: usize, width: usize, input_dim: usize, classes: usize) -> Self {
        NetworkSpec { kind, depth, width, input_dim, classes, k_init: DEFAULT_K_INIT, dual_branch: false }
    }

    pub fn with_dual_branch(mut self) -> Self {
        self.dual_branch = true;
        self
    }

    pub fn with_k_init(mut self, lo: f64, hi: f64) -> Self {
        self.k_init = (lo, hi);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.input_dim == 0 {
            return Err(Error::config("width and input_dim must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::config(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.kind == ArchKind::Revnet && self.width % 2 != 0 {
            return Err(Error::config(format!("revnet needs an even width, got {}", self.width)));
        }
        if let ArchKind::Polynet { m } = self.kind {
            if m == 0 {
                return Err(Error::config("polynet order must be at least 1"));
            }
        }
        let (lo, hi) = self.k_init;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config(format!("k_init range [{lo}, {hi}] is invalid")));
        }
        Ok(())
    }

    fn has_second_branch(&self) -> bool {
        self.dual_branch || self.kind.always_dual()
    }

    fn branch_width(&self) -> usize {
        if self.kind == ArchKind::Revnet {
            self.width / 2
        } else {
            self.width
        }
    }
}

/// Name of parameter `what` of block `l` (1-based).
pub fn block_param(l: usize, what: &str) -> String {
    format!("block{l}.{what}")
}

fn branch_prefix(l: usize, second: bool) -> String {
    if second {
        format!("block{l}.g")
    } else {
        format!("block{l}")
    }
}

/// Drop probabilities `(l / L)(1 - p_L)` for blocks `l = 1..L`.
#[derive(Debug, Clone, PartialEq)]
pub struct DropSchedule {
    pub depth: usize,
    pub p_l: f64,
    pub drop: Vec<f64>,
}

impl DropSchedule {
    pub fn new(depth: usize, p_l: f64) -> Result<Self> {
        if !(p_l > 0.0 && p_l <= 1.0) {
            return Err(Error::config(format!("p_L must lie in (0, 1], got {p_l}")));
        }
        let drop = (1..=depth).map(|l| (l as f64 / depth as f64) * (1.0 - p_l)).collect();
        Ok(DropSchedule { depth, p_l, drop })
    }

    /// Survival probability of block `l` (1-based).
    pub fn survival(&self, l: usize) -> f64 {
        1.0 - self.drop[l - 1]
    }
}

/// Stochastic training rule applied block by block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Policy {
    StochasticDepth { p_l: f64 },
    ShakeShake,
}

impl Policy {
    pub fn check(&self, spec: &NetworkSpec) -> Result<()> {
        match self {
            Policy::StochasticDepth { p_l } => {
                DropSchedule::new(spec.depth, *p_l)?;
                if spec.kind == ArchKind::Fractal2 {
                    return Err(Error::config("stochastic depth is not defined for fractal2 blocks"));
                }
            }
            Policy::ShakeShake => {
                if !matches!(spec.kind, ArchKind::Resnet | ArchKind::LmResnet) {
                    return Err(Error::config(format!("shake-shake needs resnet or lm_resnet, got {}", spec.kind)));
                }
                if !spec.dual_branch {
                    return Err(Error::config("shake-shake needs dual_branch = true"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode<'a> {
    Train,
    /// Deterministic pass. With `expectation` set, each branch is replaced
    /// by its mean under that policy.
    Eval { expectation: Option<&'a Policy> },
}

/// States after each block, for diagnostics and inversion.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub lifted: NodeId,
    pub states: Vec<NodeId>,
    /// History `u_{n-1}` fed to each LM block; empty for other kinds.
    pub history: Vec<NodeId>,
    /// Per-block draws of the training policy; empty without one.
    pub draws: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forward {
    pub logits: NodeId,
    pub cache: ForwardCache,
}

/// Structural edits used by the block-drop probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    None,
    /// Block `l` (1-based) passes its input through unchanged.
    DropBlock(usize),
    /// The learned lift is replaced by zero-padding of the raw input.
    IdentityLift,
}

/// `W2 relu(W1 relu(u) + b1) + b2` with the parameters under `prefix`.
pub fn residual_branch(tape: &mut Tape, params: &ParamStore, prefix: &str, u: NodeId) -> Result<NodeId> {
    let w1 = tape.param(params, &format!("{prefix}.w1"))?;
    let b1 = tape.param(params, &format!("{prefix}.b1"))?;
    let w2 = tape.param(params, &format!("{prefix}.w2"))?;
    let b2 = tape.param(params, &format!("{prefix}.b2"))?;
    let a = tape.relu(u);
    let h = tape.affine(w1, a, b1)?;
    let h = tape.relu(h);
    tape.affine(w2, h, b2)
}

/// What the policy does to one block.
#[derive(Debug, Clone, Copy)]
struct BlockRule {
    /// `None`: branch added as is; `Some(0)`: branch dropped.
    scale: Option<f64>,
    /// Weight of the first of two branches.
    eta: f64,
}

fn block_rules(
    spec: &NetworkSpec,
    mode: Mode<'_>,
    policy: Option<&Policy>,
    mut rng: Option<&mut LabRng>,
    draws: &mut Vec<f64>,
) -> Result<Vec<BlockRule>> {
    let active = match mode {
        Mode::Train => policy,
        Mode::Eval { expectation } => {
            if policy.is_some() {
                return Err(Error::contract("eval mode takes no policy; pass it as the expectation instead"));
            }
            expectation
        }
    };
    if let Some(p) = active {
        p.check(spec)?;
    }
    let training = matches!(mode, Mode::Train) && policy.is_some();
    if training && rng.is_none() {
        return Err(Error::contract("a training policy needs a random stream"));
    }
    let schedule = match active {
        Some(Policy::StochasticDepth { p_l }) => Some(DropSchedule::new(spec.depth, *p_l)?),
        _ => None,
    };
    let mut rules = Vec::with_capacity(spec.depth);
    for l in 1..=spec.depth {
        let mut rule = BlockRule { scale: None, eta: 0.5 };
        match active {
            Some(Policy::StochasticDepth { .. }) => {
                let survive = schedule.as_ref().expect("built above").survival(l);
                if training {
                    let draw: f64 = rng.as_deref_mut().expect("checked above").random();
                    let eta = if draw < survive { 1.0 } else { 0.0 };
                    draws.push(eta);
                    if eta == 0.0 {
                        rule.scale = Some(0.0);
                    }
                } else if survive != 1.0 {
                    rule.scale = Some(survive);
                }
            }
            Some(Policy::ShakeShake) => {
                if training {
                    let eta: f64 = rng.as_deref_mut().expect("checked above").random();
                    draws.push(eta);
                    rule.eta = eta;
                }
            }
            None => {}
        }
        rules.push(rule);
    }
    Ok(rules)
}

/// Combined residual term of block `l`, or `None` if it is dropped.
fn block_branch(
    tape: &mut Tape,
    spec: &NetworkSpec,
    params: &ParamStore,
    l: usize,
    u: NodeId,
    rule: BlockRule,
) -> Result<Option<NodeId>> {
    if rule.scale == Some(0.0) {
        return Ok(None);
    }
    let mut b = match spec.kind {
        ArchKind::Polynet { m } => {
            let prefix = branch_prefix(l, false);
            let mut cur = residual_branch(tape, params, &prefix, u)?;
            let mut acc = cur;
            for _ in 1..m {
                cur = residual_branch(tape, params, &prefix, cur)?;
                acc = tape.add(acc, cur)?;
            }
            acc
        }
        _ if spec.dual_branch => {
            let f1 = residual_branch(tape, params, &branch_prefix(l, false), u)?;
            let f2 = residual_branch(tape, params, &branch_prefix(l, true), u)?;
            let a = tape.scale(rule.eta, f1);
            let c = tape.scale(1.0 - rule.eta, f2);
            tape.add(a, c)?
        }
        _ => residual_branch(tape, params, &branch_prefix(l, false), u)?,
    };
    if let Some(s) = rule.scale {
        b = tape.scale(s, b);
    }
    Ok(Some(b))
}

fn lift(tape: &mut Tape, spec: &NetworkSpec, params: &ParamStore, x: &Tensor, ablation: Ablation) -> Result<NodeId> {
    if x.nrows() != spec.input_dim {
        return Err(Error::dim(format!("input has {} features, network expects {}", x.nrows(), spec.input_dim)));
    }
    if ablation == Ablation::IdentityLift {
        let mut u = Tensor::zeros(spec.width, x.ncols());
        let r = spec.width.min(spec.input_dim);
        u.rows_mut(0, r).copy_from(&x.rows(0, r));
        return Ok(tape.constant(u));
    }
    let w = tape.param(params, "lift.w")?;
    let b = tape.param(params, "lift.b")?;
    let xin = tape.constant(x.clone());
    tape.affine(w, xin, b)
}

fn forward_impl(
    tape: &mut Tape,
    spec: &NetworkSpec,
    params: &ParamStore,
    x: &Tensor,
    mode: Mode<'_>,
    policy: Option<&Policy>,
    rng: Option<&mut LabRng>,
    ablation: Ablation,
) -> Result<Forward> {
    spec.validate()?;
    let mut draws = Vec::new();
    let rules = block_rules(spec, mode, policy, rng, &mut draws)?;
    let lifted = lift(tape, spec, params, x, ablation)?;
    let mut u = lifted;
    let mut prev = lifted;
    let mut states = Vec::with_capacity(spec.depth);
    let mut history = Vec::new();
    let half = spec.width / 2;

    for (i, rule) in rules.into_iter().enumerate() {
        let l = i + 1;
        if ablation == Ablation::DropBlock(l) {
            if spec.kind.is_lm() {
                history.push(prev);
            }
            prev = u;
            states.push(u);
            continue;
        }
        let next = match spec.kind {
            ArchKind::Resnet | ArchKind::Polynet { .. } => match block_branch(tape, spec, params, l, u, rule)? {
                Some(b) => tape.add(u, b)?,
                None => u,
            },
            ArchKind::LmResnet => {
                history.push(prev);
                let k = tape.param(params, &block_param(l, "k"))?;
                let one = tape.constant(Tensor::from_element(1, 1, 1.0));
                let one_minus_k = tape.sub(one, k)?;
                let a = tape.scale_by(one_minus_k, u)?;
                let c = tape.scale_by(k, prev)?;
                let base = tape.add(a, c)?;
                match block_branch(tape, spec, params, l, u, rule)? {
                    Some(b) => tape.add(base, b)?,
                    None => base,
                }
            }
            ArchKind::Fractal2 => {
                let k1 = tape.param(params, &block_param(l, "k1"))?;
                let k2 = tape.param(params, &block_param(l, "k2"))?;
                let k3 = tape.param(params, &block_param(l, "k3"))?;
                let f1 = residual_branch(tape, params, &branch_prefix(l, false), u)?;
                let k3u = tape.scale_by(k3, u)?;
                let inner = tape.add(k3u, f1)?;
                let f2 = residual_branch(tape, params, &branch_prefix(l, true), inner)?;
                let t1 = tape.scale_by(k1, u)?;
                let t2 = tape.scale_by(k2, inner)?;
                let s = tape.add(t1, t2)?;
                tape.add(s, f2)?
            }
            ArchKind::Revnet => {
                let xh = tape.rows(u, 0, half)?;
                let yh = tape.rows(u, half, half)?;
                if rule.scale == Some(0.0) {
                    u
                } else {
                    let mut f = residual_branch(tape, params, &branch_prefix(l, false), yh)?;
                    if let Some(s) = rule.scale {
                        f = tape.scale(s, f);
                    }
                    let x1 = tape.add(xh, f)?;
                    let mut g = residual_branch(tape, params, &branch_prefix(l, true), x1)?;
                    if let Some(s) = rule.scale {
                        g = tape.scale(s, g);
                    }
                    let y1 = tape.add(yh, g)?;
                    tape.vstack(x1, y1)?
                }
            }
        };
        prev = u;
        u = next;
        states.push(u);
    }

    let hw = tape.param(params, "head.w")?;
    let hb = tape.param(params, "head.b")?;
    let logits = tape.affine(hw, u, hb)?;
    Ok(Forward { logits, cache: ForwardCache { lifted, states, history, draws } })
}

/// Records the network on `tape` for the batch `x` (features by samples).
///
/// In [`Mode::Train`], `policy` draws one value per block from `rng`:
/// stochastic depth keeps block `l` with probability `1 - (l/L)(1 - p_L)`,
/// shake-shake mixes two branches with `eta ~ U(0, 1)`. For LM blocks the
/// dropped form is `(2 + g) u_n - (1 + g) u_{n-1} + eta F(u_n)` with
/// `g = -1 - k_n`, written in terms of `k_n`.
pub fn network_forward(
    tape: &mut Tape,
    spec: &NetworkSpec,
    params: &ParamStore,
    x: &Tensor,
    mode: Mode<'_>,
    policy: Option<&Policy>,
    rng: Option<&mut LabRng>,
) -> Result<Forward> {
    forward_impl(tape, spec, params, x, mode, policy, rng, Ablation::None)
}

/// Eval-mode logits of an edited network.
pub fn ablated_logits(spec: &NetworkSpec, params: &ParamStore, x: &Tensor, ablation: Ablation) -> Result<Tensor> {
    if let Ablation::DropBlock(l) = ablation {
        if l == 0 || l > spec.depth {
            return Err(Error::contract(format!("block {l} does not exist in a depth-{} network", spec.depth)));
        }
    }
    let mut tape = Tape::new();
    let f = forward_impl(&mut tape, spec, params, x, Mode::Eval { expectation: None }, None, None, ablation)?;
    Ok(tape.value(f.logits).clone())
}

/// Mean cross-entropy of the network on `(x, labels)`.
pub fn network_loss(
    tape: &mut Tape,
    spec: &NetworkSpec,
    params: &ParamStore,
    x: &Tensor,
    labels: &[usize],
    mode: Mode<'_>,
    policy: Option<&Policy>,
    rng: Option<&mut LabRng>,
) -> Result<NodeId> {
    let f = network_forward(tape, spec, params, x, mode, policy, rng)?;
    tape.softmax_cross_entropy(f.logits, labels)
}

fn he_normal(rng: &mut LabRng, rows: usize, cols: usize) -> Tensor {
    let normal = Normal::new(0.0, (2.0 / cols as f64).sqrt()).expect("positive std");
    Tensor::from_fn(rows, cols, |_, _| normal.sample(rng))
}

fn insert_branch(store: &mut ParamStore, rng: &mut LabRng, prefix: &str, width: usize) {
    store.insert(format!("{prefix}.w1"), he_normal(rng, width, width));
    store.insert(format!("{prefix}.b1"), Tensor::zeros(width, 1));
    store.insert(format!("{prefix}.w2"), he_normal(rng, width, width));
    store.insert(format!("{prefix}.b2"), Tensor::zeros(width, 1));
}

/// He-normal weights (`std = sqrt(2 / fan_in)`), zero biases, `k_n` uniform on
/// `spec.k_init`, fractal gains one half. Scalar gains are exempt from weight
/// decay.
pub fn init_params(spec: &NetworkSpec, rng: &mut LabRng) -> Result<ParamStore> {
    spec.validate()?;
    let mut store = ParamStore::new();
    let d = spec.width;
    store.insert("lift.w", he_normal(rng, d, spec.input_dim));
    store.insert("lift.b", Tensor::zeros(d, 1));
    let bw = spec.branch_width();
    for l in 1..=spec.depth {
        insert_branch(&mut store, rng, &branch_prefix(l, false), bw);
        if spec.has_second_branch() {
            insert_branch(&mut store, rng, &branch_prefix(l, true), bw);
        }
        match spec.kind {
            ArchKind::LmResnet => {
                let (lo, hi) = spec.k_init;
                let k = if lo == hi { lo } else { rng.random_range(lo..=hi) };
                store.insert_no_decay(block_param(l, "k"), Tensor::from_element(1, 1, k));
            }
            ArchKind::Fractal2 => {
                for g in ["k1", "k2", "k3"] {
                    store.insert_no_decay(block_param(l, g), Tensor::from_element(1, 1, 0.5));
                }
            }
            _ => {}
        }
    }
    store.insert("head.w", he_normal(rng, spec.classes, d));
    store.insert("head.b", Tensor::zeros(spec.classes, 1));
    Ok(store)
}

/// Learned `k_1..k_L` of an LM network.
pub fn lm_coefficients(spec: &NetworkSpec, params: &ParamStore) -> Result<LmStepParams> {
    if !spec.kind.is_lm() {
        return Err(Error::contract(format!("{} has no LM coefficients", spec.kind)));
    }
    let k = (1..=spec.depth)
        .map(|l| {
            params
                .get(&block_param(l, "k"))
                .map(|t| t[(0, 0)])
                .ok_or_else(|| Error::contract(format!("missing {}", block_param(l, "k"))))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LmStepParams { k })
}

/// Branch value without a tape.
pub fn branch_value(params: &ParamStore, prefix: &str, u: &Tensor) -> Result<Tensor> {
    let mut tape = Tape::new();
    let un = tape.constant(u.clone());
    let out = residual_branch(&mut tape, params, prefix, un)?;
    Ok(tape.value(out).clone())
}

/// One RevNet block forward on the halves `(x, y)`.
pub fn revnet_block(params: &ParamStore, l: usize, x: &Tensor, y: &Tensor) -> Result<(Tensor, Tensor)> {
    let x1 = x + branch_value(params, &branch_prefix(l, false), y)?;
    let y1 = y + branch_value(params, &branch_prefix(l, true), &x1)?;
    Ok((x1, y1))
}

/// `Y_n = Y_{n+1} - g(X_{n+1})`, then `X_n = X_{n+1} - f(Y_n)`.
pub fn revnet_inverse(params: &ParamStore, l: usize, x1: &Tensor, y1: &Tensor) -> Result<(Tensor, Tensor)> {
    if x1.shape() != y1.shape() {
        return Err(Error::dim(format!("revnet halves {:?} and {:?}", x1.shape(), y1.shape())));
    }
    let y = y1 - branch_value(params, &branch_prefix(l, true), x1)?;
    let x = x1 - branch_value(params, &branch_prefix(l, false), &y)?;
    Ok((x, y))
}

/// Recovers the lifted state from the output of the last block.
pub fn revnet_reconstruct(spec: &NetworkSpec, params: &ParamStore, u: &Tensor) -> Result<Tensor> {
    if spec.kind != ArchKind::Revnet {
        return Err(Error::contract(format!("{} is not reversible", spec.kind)));
    }
    let h = spec.width / 2;
    if u.nrows() != spec.width {
        return Err(Error::dim(format!("state has {} rows, width is {}", u.nrows(), spec.width)));
    }
    let mut x = u.rows(0, h).into_owned();
    let mut y = u.rows(h, h).into_owned();
    for l in (1..=spec.depth).rev() {
        (x, y) = revnet_inverse(params, l, &x, &y)?;
    }
    let mut out = Tensor::zeros(spec.width, u.ncols());
    out.rows_mut(0, h).copy_from(&x);
    out.rows_mut(h, h).copy_from(&y);
    Ok(out)
}

pub const CHECKPOINT_HEADER: &str = "odenet-params 1";

/// Writes `params` as text: a header line, then one line per tensor
/// `name rows cols decay|nodecay bits...` with each entry as the 16-digit hex
/// of its IEEE-754 bits in column-major order. Momentum buffers are not saved.
pub fn write_checkpoint<W: Write>(params: &ParamStore, mut out: W) -> Result<()> {
    writeln!(out, "{CHECKPOINT_HEADER}")?;
    for (name, t) in params.iter() {
        let decay = if params.is_decayed(name) { "decay" } else { "nodecay" };
        write!(out, "{name} {} {} {decay}", t.nrows(), t.ncols())?;
        for v in t.iter() {
            write!(out, " {:016x}", v.to_bits())?;
        }
        writeln!(out)?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    let mut lines = input.lines();
    let parse = |line: usize, message: String| Error::Parse { line, message };
    let header = lines.next().transpose()?;
    if header.as_deref().map(str::trim_end) != Some(CHECKPOINT_HEADER) {
        return Err(parse(1, format!("expected header '{CHECKPOINT_HEADER}'")));
    }
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_ascii_whitespace();
        let name = fields.next().expect("non-empty line");
        let dims: Vec<usize> = fields
            .by_ref()
            .take(2)
            .map(|f| f.parse().map_err(|_| parse(lineno, format!("bad dimension '{f}'"))))
            .collect::<Result<_>>()?;
        if dims.len() != 2 {
            return Err(parse(lineno, "missing dimensions".into()));
        }
        let decay = match fields.next() {
            Some("decay") => true,
            Some("nodecay") => false,
            other => return Err(parse(lineno, format!("expected decay|nodecay, got {other:?}"))),
        };
        let values: Vec<f64> = fields
            .map(|f| {
                u64::from_str_radix(f, 16)
                    .map(f64::from_bits)
                    .map_err(|_| parse(lineno, format!("bad value '{f}'")))
            })
            .collect::<Result<_>>()?;
        if values.len() != dims[0] * dims[1] {
            return Err(parse(lineno, format!("{name}: expected {} values, got {}", dims[0] * dims[1], values.len())));
        }
        if store.contains(name) {
            return Err(parse(lineno, format!("duplicate tensor '{name}'")));
        }
        let t = Tensor::from_column_slice(dims[0], dims[1], &values);
        if decay {
            store.insert(name, t);
        } else {
            store.insert_no_decay(name, t);
        }
    }
    Ok(store)
}

pub fn save_checkpoint(params: &ParamStore, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_checkpoint(params, &mut buf)?;
    std::fs::write(path, buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<ParamStore> {
    let file = std::fs::File::open(path)?;
    read_checkpoint(std::io::BufReader::new(file))
}
