use std::path::Path;

use odenet::archblocks::{save_checkpoint, ArchKind, NetworkSpec, Policy};
use odenet::trainer::{
    load_csv, make_synthetic, split_and_standardize, train_detailed, Dataset, LabelColumn, Synthetic, TrainConfig,
    TrainRun, Trained,
};

use crate::config::TrainSection;
use crate::output::{num, write_text, Table};
use crate::{keyed, LabError, Outcome};

/// Train and test splits described by `s`. Synthetic data comes from
/// `data_seed`; CSV data is split with `data_seed` and standardised.
pub fn datasets(s: &TrainSection, key: &str) -> Result<(Dataset, Dataset), LabError> {
    if s.dataset == "csv" {
        let path = s
            .csv_path
            .as_ref()
            .ok_or_else(|| LabError::Config(format!("{key}.csv_path: required when dataset = \"csv\"")))?;
        let label = match s.label.parse::<usize>() {
            Ok(i) => LabelColumn::Index(i),
            Err(_) => LabelColumn::Name(s.label.clone()),
        };
        let all = load_csv(path, &label, None).map_err(|e| LabError::from(e).at(&format!("{key}.csv_path")))?;
        keyed(key, split_and_standardize(&all, s.data_seed))
    } else {
        let task: Synthetic = keyed(&format!("{key}.dataset"), s.dataset.parse())?;
        keyed(&format!("{key}.n"), make_synthetic(task, s.n, s.noise, s.data_seed))
    }
}

pub fn policy(s: &TrainSection, key: &str) -> Result<Option<Policy>, LabError> {
    match s.policy.as_str() {
        "none" => Ok(None),
        "stochastic_depth" => Ok(Some(Policy::StochasticDepth { p_l: s.p_l })),
        "shake_shake" => Ok(Some(Policy::ShakeShake)),
        other => Err(LabError::Config(format!(
            "{key}.policy: unknown policy '{other}' (expected none, stochastic_depth, shake_shake)"
        ))),
    }
}

/// Training configuration for `s` with the given seed, sized to the data.
pub fn train_config(s: &TrainSection, seed: u64, data: &Dataset, key: &str) -> Result<TrainConfig, LabError> {
    let kind: ArchKind = keyed(&format!("{key}.kind"), s.kind.parse())?;
    let mut spec =
        NetworkSpec::new(kind, s.depth, s.width, data.dim(), data.classes).with_k_init(s.k_init[0], s.k_init[1]);
    if s.dual_branch {
        spec = spec.with_dual_branch();
    }
    let mut c = TrainConfig::new(spec, s.epochs, seed);
    c.batch_size = s.batch_size;
    c.lr = s.lr;
    if let Some(d) = &s.lr_decay_epochs {
        c.lr_decay_epochs = d.clone();
    }
    c.lr_factor = s.lr_factor;
    c.momentum = s.momentum;
    c.weight_decay = s.weight_decay;
    c.policy = policy(s, key)?;
    keyed(key, c.validate())?;
    Ok(c)
}

/// Trains one network; divergence is recorded in the run, not returned.
pub fn train_section(s: &TrainSection, seed: u64, key: &str) -> Result<Trained, LabError> {
    let (train, test) = datasets(s, key)?;
    let config = train_config(s, seed, &train, key)?;
    keyed(key, train_detailed(&config, &train, &test))
}

/// `epoch,train_loss,train_acc,test_loss,test_acc`, starting at epoch 0.
pub fn curves(run: &TrainRun) -> Table {
    let mut t = Table::new(["epoch", "train_loss", "train_acc", "test_loss", "test_acc"]);
    for r in std::iter::once(&run.initial).chain(&run.epochs) {
        t.push([r.epoch.to_string(), num(r.train.loss), num(r.train.accuracy), num(r.test.loss), num(r.test.accuracy)]);
    }
    t
}

/// `layer,k_value` for LM networks.
pub fn k_table(run: &TrainRun) -> Option<Table> {
    run.k.as_ref().map(|ks| {
        let mut t = Table::new(["layer", "k_value"]);
        for (i, k) in ks.iter().enumerate() {
            t.push([(i + 1).to_string(), num(*k)]);
        }
        t
    })
}

/// Writes `run.json`, `curves.csv`, `params.ckpt`, `timing.txt` and, for LM
/// networks, `k.csv` into `dir`.
pub fn write_outputs(t: &Trained, dir: &Path) -> Result<(), LabError> {
    std::fs::create_dir_all(dir).map_err(|e| LabError::Io(format!("{}: {e}", dir.display())))?;
    write_text(&dir.join("run.json"), &t.run.to_json())?;
    curves(&t.run).write(&dir.join("curves.csv"))?;
    if let Some(k) = k_table(&t.run) {
        k.write(&dir.join("k.csv"))?;
    }
    save_checkpoint(&t.params, &dir.join("params.ckpt")).map_err(LabError::from)?;
    write_text(&dir.join("timing.txt"), &format!("wall_clock_seconds = {}\n", t.run.wall_clock_seconds))
}

pub fn failure_message(run: &TrainRun) -> Option<String> {
    run.failure.as_ref().map(|f| match f.loss {
        Some(l) => format!("training diverged at epoch {} (loss {l})", f.epoch),
        None => format!("training diverged at epoch {} (non-finite loss)", f.epoch),
    })
}

pub fn run(s: &TrainSection, seed: u64, out: &Path) -> Result<Outcome, LabError> {
    let t = train_section(s, seed, "train")?;
    write_outputs(&t, out)?;
    if let Some(m) = failure_message(&t.run) {
        return Err(LabError::Numerical(format!("{m}; partial record in {}", out.join("run.json").display())));
    }
    let f = &t.run.final_metrics;
    let mut summary = format!(
        "{} seed {}: test accuracy {:.4}, test loss {:.4} after {} epochs -> {}",
        t.run.config.kind,
        seed,
        f.test.accuracy,
        f.test.loss,
        f.epoch,
        out.display()
    );
    if let Some(a) = &t.run.k_audit {
        if !a.outside.is_empty() {
            summary.push_str(&format!("; {} k_n outside [-1, 1]", a.outside.len()));
        }
    }
    Ok(Outcome { summary, flag: None })
}
