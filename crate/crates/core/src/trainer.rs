//! Data, optimisation and the training loop.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::archblocks::{
    ablated_logits, init_params, lm_coefficients, network_forward, network_loss, Ablation, Mode, NetworkSpec, Policy,
};
use crate::autodiff::{Gradients, ParamStore, Tape, Tensor};
use crate::dyncore::{LabRng, SeedSource};
use crate::error::{Error, Result};
use crate::odeschemes::KAudit;

pub use crate::archblocks::DropSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Features stored one sample per column.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: Split,
}

impl Dataset {
    pub fn new(features: Tensor, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        if features.ncols() != labels.len() {
            return Err(Error::dim(format!("{} samples but {} labels", features.ncols(), labels.len())));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("features contain non-finite values"));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::contract(format!("label {l} outside [0, {classes})")));
        }
        Ok(Dataset { features, labels, classes, split })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.nrows()
    }

    /// Columns `idx` as a batch.
    pub fn batch(&self, idx: &[usize]) -> (Tensor, Vec<usize>) {
        let x = self.features.select_columns(idx);
        (x, idx.iter().map(|&i| self.labels[i]).collect())
    }

    fn subset(&self, idx: &[usize], split: Split) -> Dataset {
        let (features, labels) = self.batch(idx);
        Dataset { features, labels, classes: self.classes, split }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Synthetic {
    TwoMoons,
    Circles,
    Spirals,
    Blobs,
}

impl Synthetic {
    pub const ALL: [Synthetic; 4] = [Synthetic::TwoMoons, Synthetic::Circles, Synthetic::Spirals, Synthetic::Blobs];

    pub fn name(self) -> &'static str {
        match self {
            Synthetic::TwoMoons => "two_moons",
            Synthetic::Circles => "circles",
            Synthetic::Spirals => "spirals",
            Synthetic::Blobs => "blobs",
        }
    }

    pub fn classes(self) -> usize {
        if self == Synthetic::Blobs {
            3
        } else {
            2
        }
    }
}

impl fmt::Display for Synthetic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Synthetic {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Synthetic::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::config(format!("unknown dataset '{s}' (expected two_moons, circles, spirals, blobs)")))
    }
}

/// Noise-free point of class `c` at curve parameter `t` in `[0, 1)`.
fn clean_point(task: Synthetic, c: usize, t: f64) -> [f64; 2] {
    use std::f64::consts::PI;
    match task {
        Synthetic::TwoMoons => {
            let a = PI * t;
            if c == 0 {
                [a.cos(), a.sin()]
            } else {
                [1.0 - a.cos(), 0.5 - a.sin()]
            }
        }
        Synthetic::Circles => {
            let r = if c == 0 { 1.0 } else { 0.5 };
            let a = 2.0 * PI * t;
            [r * a.cos(), r * a.sin()]
        }
        // Two turns per arm; arms of the two classes are offset by half a
        // turn, so neighbouring arms along any ray are 0.9 apart.
        Synthetic::Spirals => {
            let r = 0.4 + 3.6 * t;
            let a = 4.0 * PI * t + c as f64 * PI;
            [r * a.cos(), r * a.sin()]
        }
        Synthetic::Blobs => {
            let a = 2.0 * PI * c as f64 / 3.0;
            [2.0 * a.cos(), 2.0 * a.sin()]
        }
    }
}

pub const TRAIN_FRACTION: f64 = 0.8;

/// Balanced classes, Gaussian noise of standard deviation `noise`, shuffled
/// and split 80/20. Deterministic in `seed`.
pub fn make_synthetic(task: Synthetic, n: usize, noise: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if n < 32 {
        return Err(Error::config(format!("synthetic datasets need n >= 32, got {n}")));
    }
    if !(noise >= 0.0 && noise.is_finite()) {
        return Err(Error::config(format!("noise must be finite and non-negative, got {noise}")));
    }
    let mut rng = SeedSource::new(seed).stream(&format!("data/{}", task.name()));
    let classes = task.classes();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut features = Tensor::zeros(2, n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % classes;
        let t: f64 = rng.random();
        let p = clean_point(task, c, t);
        for (j, v) in p.into_iter().enumerate() {
            let e: f64 = normal.sample(&mut rng);
            features[(j, i)] = v + noise * e;
        }
        labels.push(c);
    }
    let all = Dataset::new(features, labels, classes, Split::Train)?;
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng);
    let n_train = (n as f64 * TRAIN_FRACTION).round() as usize;
    Ok((all.subset(&idx[..n_train], Split::Train), all.subset(&idx[n_train..], Split::Test)))
}

/// Which CSV column holds the class label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LabelColumn {
    Name(String),
    Index(usize),
}

impl fmt::Display for LabelColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LabelColumn::Name(n) => write!(f, "'{n}'"),
            LabelColumn::Index(i) => write!(f, "#{i}"),
        }
    }
}

/// Reads a numeric table. A first row with any non-numeric cell is taken as
/// the header. Labels must be non-negative integers; the class count is
/// `max(label) + 1` unless `classes` is given. Values are returned as read.
pub fn load_csv(path: &Path, label: &LabelColumn, classes: Option<usize>) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_path(path).map_err(csv_error)?;
    let mut rows: Vec<(usize, csv::StringRecord)> = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec[0].trim().is_empty() {
            continue;
        }
        rows.push((line, rec));
    }
    let Some((first_line, first)) = rows.first().cloned() else {
        return Err(Error::Parse { line: 1, message: "empty file".into() });
    };
    let header = first.iter().any(|c| c.trim().parse::<f64>().is_err());
    let width = first.len();
    let label_idx = match label {
        LabelColumn::Index(i) if *i < width => *i,
        LabelColumn::Name(name) if header => first
            .iter()
            .position(|c| c.trim() == name)
            .ok_or_else(|| Error::Parse { line: first_line, message: format!("label column {label} not found in header") })?,
        _ => {
            return Err(Error::Parse { line: first_line, message: format!("label column {label} not found") });
        }
    };
    let body = if header { &rows[1..] } else { &rows[..] };
    let p = width - 1;
    let mut values = Vec::with_capacity(body.len() * p);
    let mut labels = Vec::with_capacity(body.len());
    for (line, rec) in body {
        if rec.len() != width {
            return Err(Error::Parse { line: *line, message: format!("expected {width} fields, found {}", rec.len()) });
        }
        for (j, cell) in rec.iter().enumerate() {
            let cell = cell.trim();
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::Parse { line: *line, message: format!("non-numeric cell '{cell}' in column {j}") })?;
            if j == label_idx {
                if v < 0.0 || v.fract() != 0.0 {
                    return Err(Error::Parse { line: *line, message: format!("label {cell} is not a non-negative integer") });
                }
                let l = v as usize;
                if classes.is_some_and(|c| l >= c) {
                    return Err(Error::Parse {
                        line: *line,
                        message: format!("label {l} outside [0, {})", classes.unwrap_or_default()),
                    });
                }
                labels.push(l);
            } else {
                values.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Parse { line: first_line, message: "no data rows".into() });
    }
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    let features = Tensor::from_column_slice(p, labels.len(), &values);
    Dataset::new(features, labels, classes, Split::Train)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse { line, message: format!("{other:?}") },
    }
}

/// Per-feature mean and standard deviation of a training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(train: &Dataset) -> Self {
        let n = train.len().max(1) as f64;
        let (mean, std) = train
            .features
            .row_iter()
            .map(|r| {
                let m = r.sum() / n;
                let v = r.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
                (m, if v > 0.0 { v.sqrt() } else { 1.0 })
            })
            .unzip();
        Standardizer { mean, std }
    }

    pub fn apply(&self, data: &mut Dataset) {
        for (i, mut row) in data.features.row_iter_mut().enumerate() {
            row.apply(|x| *x = (*x - self.mean[i]) / self.std[i]);
        }
    }
}

/// Seeded 80/20 split, standardised with training statistics.
pub fn split_and_standardize(data: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    if data.len() < 2 {
        return Err(Error::contract("need at least two samples to split"));
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(&mut SeedSource::new(seed).stream("split"));
    let n_train = ((data.len() as f64 * TRAIN_FRACTION).round() as usize).clamp(1, data.len() - 1);
    let mut train = data.subset(&idx[..n_train], Split::Train);
    let mut test = data.subset(&idx[n_train..], Split::Test);
    let s = Standardizer::fit(&train);
    s.apply(&mut train);
    s.apply(&mut test);
    Ok((train, test))
}

/// `v <- momentum v + g + wd p`, `p <- p - lr v`. Parameters marked no-decay
/// (the scalar gains) skip the `wd p` term. Parameters without a gradient
/// are treated as having gradient zero.
pub fn sgd_update(params: &mut ParamStore, grads: &Gradients, lr: f64, momentum: f64, weight_decay: f64) -> Result<()> {
    if let Some((name, _)) = grads.iter().find(|(n, _)| !params.contains(n)) {
        return Err(Error::contract(format!("gradient for unknown parameter `{name}`")));
    }
    let names: Vec<String> = params.names().map(String::from).collect();
    for name in names {
        let wd = if params.is_decayed(&name) { weight_decay } else { 0.0 };
        let g = grads.get(&name);
        let (p, v) = params.param_and_velocity_mut(&name).expect("name from the store");
        if let Some(g) = g {
            if g.shape() != p.shape() {
                return Err(Error::dim(format!("gradient of `{name}` has shape {:?}, parameter {:?}", g.shape(), p.shape())));
            }
        }
        *v *= momentum;
        if let Some(g) = g {
            *v += g;
        }
        if wd != 0.0 {
            *v += &*p * wd;
        }
        *p -= &*v * lr;
    }
    Ok(())
}

pub const DEFAULT_LR: f64 = 0.01;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub spec: NetworkSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Epochs at whose start the learning rate is multiplied by `lr_factor`.
    pub lr_decay_epochs: Vec<usize>,
    pub lr_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub policy: Option<Policy>,
}

impl TrainConfig {
    /// Defaults: lr 0.01 divided by 10 at 50% and 75% of the epochs, momentum
    /// 0.9, weight decay 1e-4, batch 32. Without normalisation layers an
    /// initial rate of 0.1 diverges in the first epoch.
    pub fn new(spec: NetworkSpec, epochs: usize, seed: u64) -> Self {
        TrainConfig {
            spec,
            epochs,
            batch_size: 32,
            lr: DEFAULT_LR,
            lr_decay_epochs: default_decay_epochs(epochs),
            lr_factor: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed,
            policy: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!("weight decay must be non-negative, got {}", self.weight_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be positive"));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor.is_finite()) {
            return Err(Error::config(format!("lr factor must be positive, got {}", self.lr_factor)));
        }
        if let Some(p) = &self.policy {
            p.check(&self.spec)?;
        }
        Ok(())
    }

    /// Learning rate used during epoch `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.lr_decay_epochs.iter().filter(|&&e| e > 0 && e <= epoch).count();
        self.lr * self.lr_factor.powi(drops as i32)
    }
}

/// First epochs of the second and last quarter-blocks: `E/2 + 1`, `3E/4 + 1`.
pub fn default_decay_epochs(epochs: usize) -> Vec<usize> {
    [epochs / 2, 3 * epochs / 4].into_iter().filter(|&e| e > 0).map(|e| e + 1).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
}

/// Loss and accuracy of a deterministic eval-mode pass. With `expectation`,
/// branches are scaled to their mean under that policy.
pub fn evaluate(spec: &NetworkSpec, params: &ParamStore, data: &Dataset, expectation: Option<&Policy>) -> Result<Metrics> {
    if data.is_empty() {
        return Err(Error::contract("cannot evaluate on an empty dataset"));
    }
    let mut tape = Tape::new();
    let f = network_forward(&mut tape, spec, params, &data.features, Mode::Eval { expectation }, None, None)?;
    let logits = tape.value(f.logits).clone();
    let loss = tape.softmax_cross_entropy(f.logits, &data.labels)?;
    Ok(Metrics { loss: tape.scalar(loss), accuracy: accuracy(&logits, &data.labels) })
}

/// Fraction of columns whose first maximal logit is at the label.
pub fn accuracy(logits: &Tensor, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = logits.column_iter().zip(labels).filter(|(c, &l)| c.imax() == l).count();
    hits as f64 / labels.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train: Metrics,
    pub test: Metrics,
}

/// Configuration as recorded in a run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub kind: String,
    pub depth: usize,
    pub width: usize,
    pub input_dim: usize,
    pub classes: usize,
    pub k_init: (f64, f64),
    pub dual_branch: bool,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_epochs: Vec<usize>,
    pub lr_factor: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub policy: String,
    pub p_l: Option<f64>,
}

impl From<&TrainConfig> for ConfigEcho {
    fn from(c: &TrainConfig) -> Self {
        let (policy, p_l) = match c.policy {
            None => ("none".to_string(), None),
            Some(Policy::StochasticDepth { p_l }) => ("stochastic_depth".to_string(), Some(p_l)),
            Some(Policy::ShakeShake) => ("shake_shake".to_string(), None),
        };
        ConfigEcho {
            kind: c.spec.kind.to_string(),
            depth: c.spec.depth,
            width: c.spec.width,
            input_dim: c.spec.input_dim,
            classes: c.spec.classes,
            k_init: c.spec.k_init,
            dual_branch: c.spec.dual_branch,
            epochs: c.epochs,
            batch_size: c.batch_size,
            lr: c.lr,
            lr_decay_epochs: c.lr_decay_epochs.clone(),
            lr_factor: c.lr_factor,
            momentum: c.momentum,
            weight_decay: c.weight_decay,
            policy,
            p_l,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub epoch: usize,
    /// `None` when the loss was not a finite number.
    pub loss: Option<f64>,
}

pub const TRAIN_RUN_SCHEMA: &str = "odenet-trainrun/1";

/// Record of one training run. `wall_clock_seconds` is kept out of the JSON
/// so identical runs produce identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub schema: String,
    pub seed: u64,
    pub config: ConfigEcho,
    /// Metrics of the initial parameters (epoch 0).
    pub initial: EpochRecord,
    /// One record per completed epoch.
    pub epochs: Vec<EpochRecord>,
    /// Metrics after the last completed epoch (initial ones if none ran).
    pub final_metrics: EpochRecord,
    /// Learned `k_1..k_L` for LM networks.
    pub k: Option<Vec<f64>>,
    pub k_audit: Option<KAudit>,
    pub failure: Option<Failure>,
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

impl TrainRun {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data serialises");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), message: e.to_string() })
    }
}

/// Outcome of [`train_detailed`]: the run record and the final parameters.
#[derive(Debug, Clone)]
pub struct Trained {
    pub run: TrainRun,
    pub params: ParamStore,
}

/// Runs the full loop and returns the record even when training diverges;
/// the record's `failure` field then names the epoch.
pub fn train_detailed(config: &TrainConfig, train: &Dataset, test: &Dataset) -> Result<Trained> {
    config.validate()?;
    let spec = &config.spec;
    for d in [train, test] {
        if d.dim() != spec.input_dim || d.classes > spec.classes {
            return Err(Error::config(format!(
                "dataset has {} features and {} classes, network expects {} and {}",
                d.dim(),
                d.classes,
                spec.input_dim,
                spec.classes
            )));
        }
    }
    if train.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    let start = std::time::Instant::now();
    let seeds = SeedSource::new(config.seed);
    let mut params = init_params(spec, &mut seeds.stream("init"))?;
    let mut shuffle = seeds.stream("shuffle");
    let mut noise: LabRng = seeds.stream("dropout");
    let policy = config.policy.as_ref();

    let initial_train = evaluate(spec, &params, train, policy)?;
    let initial_test = evaluate(spec, &params, test, policy)?;
    let initial = EpochRecord { epoch: 0, lr: config.lr_at(0), train: initial_train, test: initial_test };
    let mut last = initial.clone();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut failure = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    'outer: for epoch in 1..=config.epochs {
        let lr = config.lr_at(epoch);
        order.shuffle(&mut shuffle);
        for chunk in order.chunks(config.batch_size) {
            let (x, y) = train.batch(chunk);
            let mut tape = Tape::new();
            let loss = network_loss(&mut tape, spec, &params, &x, &y, Mode::Train, policy, Some(&mut noise))?;
            let value = tape.scalar(loss);
            if !value.is_finite() {
                failure = Some(Failure { epoch, loss: None });
                break 'outer;
            }
            let grads = tape.backward(loss)?;
            sgd_update(&mut params, &grads, lr, config.momentum, config.weight_decay)?;
        }
        let rec = EpochRecord {
            epoch,
            lr,
            train: evaluate(spec, &params, train, policy)?,
            test: evaluate(spec, &params, test, policy)?,
        };
        if !rec.train.loss.is_finite() {
            failure = Some(Failure { epoch, loss: None });
            break;
        }
        last = rec.clone();
        epochs.push(rec);
    }

    let (k, k_audit) = if spec.kind.is_lm() {
        let ks = lm_coefficients(spec, &params)?;
        let audit = ks.audit();
        (Some(ks.k), Some(audit))
    } else {
        (None, None)
    };
    let run = TrainRun {
        schema: TRAIN_RUN_SCHEMA.to_string(),
        seed: config.seed,
        config: ConfigEcho::from(config),
        initial,
        epochs,
        final_metrics: last,
        k,
        k_audit,
        failure,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    Ok(Trained { run, params })
}

/// Trains and fails with [`Error::Training`] if the loss stops being finite.
pub fn train(config: &TrainConfig, train_set: &Dataset, test_set: &Dataset) -> Result<TrainRun> {
    let t = train_detailed(config, train_set, test_set)?;
    match &t.run.failure {
        Some(f) => Err(Error::Training { epoch: f.epoch, loss: f.loss.unwrap_or(f64::NAN) }),
        None => Ok(t.run),
    }
}

/// Test accuracy after structural edits of a trained network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDropReport {
    pub baseline: f64,
    /// Accuracy with block `l` removed, for `l = 1..L`.
    pub dropped: Vec<f64>,
    /// Accuracy with the learned lift replaced by zero-padding.
    pub without_lift: f64,
}

impl BlockDropReport {
    /// Every single-block removal costs strictly less accuracy than removing the lift.
    pub fn blocks_less_critical_than_lift(&self) -> bool {
        let lift_cost = self.baseline - self.without_lift;
        self.dropped.iter().all(|a| self.baseline - a < lift_cost)
    }
}

pub fn block_drop_probe(spec: &NetworkSpec, params: &ParamStore, data: &Dataset) -> Result<BlockDropReport> {
    let acc = |ab| -> Result<f64> { Ok(accuracy(&ablated_logits(spec, params, &data.features, ab)?, &data.labels)) };
    Ok(BlockDropReport {
        baseline: acc(Ablation::None)?,
        dropped: (1..=spec.depth).map(|l| acc(Ablation::DropBlock(l))).collect::<Result<_>>()?,
        without_lift: acc(Ablation::IdentityLift)?,
    })
}
