use std::collections::BTreeSet;
use std::path::Path;

use rayon::prelude::*;

use odenet::trainer::{TrainRun, Trained};

use super::train::{self, failure_message, train_section};
use crate::config::{CompareConfig, TrainSection};
use crate::output::{num, Table};
use crate::{LabError, Outcome};

#[derive(Debug, Clone)]
pub struct GroupResult {
    pub name: String,
    /// One run per seed, in ascending seed order.
    pub runs: Vec<TrainRun>,
}

impl GroupResult {
    pub fn accuracies(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.final_metrics.test.accuracy).collect()
    }
}

#[derive(Debug, Clone)]
pub struct CompareResult {
    pub seeds: Vec<u64>,
    pub groups: Vec<GroupResult>,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 { xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

impl CompareResult {
    /// Per-seed accuracy of group `g` minus that of the first group.
    pub fn deltas(&self, g: usize) -> Vec<f64> {
        let base = self.groups[0].accuracies();
        self.groups[g].accuracies().iter().zip(base).map(|(a, b)| a - b).collect()
    }

    pub fn group(&self, name: &str) -> Option<&GroupResult> {
        self.groups.iter().find(|g| g.name == name)
    }

    /// `seed`, each group's final test accuracy, then each later group's
    /// delta against the first.
    pub fn per_seed_table(&self) -> Table {
        let first = &self.groups[0].name;
        let mut header = vec!["seed".to_string()];
        header.extend(self.groups.iter().map(|g| format!("{}_test_acc", g.name)));
        header.extend(self.groups[1..].iter().map(|g| format!("delta_{}_vs_{first}", g.name)));
        let mut t = Table::new(header);
        let accs: Vec<Vec<f64>> = self.groups.iter().map(GroupResult::accuracies).collect();
        let deltas: Vec<Vec<f64>> = (1..self.groups.len()).map(|g| self.deltas(g)).collect();
        for (i, seed) in self.seeds.iter().enumerate() {
            let mut row = vec![seed.to_string()];
            row.extend(accs.iter().map(|a| num(a[i])));
            row.extend(deltas.iter().map(|d| num(d[i])));
            t.push(row);
        }
        t
    }

    /// `group,n,mean_test_acc,std_test_acc,mean_delta,std_delta`; the delta
    /// columns are empty for the first group.
    pub fn summary_table(&self) -> Table {
        let mut t = Table::new(["group", "n", "mean_test_acc", "std_test_acc", "mean_delta", "std_delta"]);
        for (g, group) in self.groups.iter().enumerate() {
            let (m, s) = mean_std(&group.accuracies());
            let mut row = vec![group.name.clone(), group.runs.len().to_string(), num(m), num(s)];
            if g > 0 {
                let (dm, ds) = mean_std(&self.deltas(g));
                row.extend([num(dm), num(ds)]);
            }
            t.push(row);
        }
        t
    }

    /// `group,seed,layer,k_value,status` for every learned `k_n`; status is
    /// `inside`, `boundary` (|k| = 1) or `outside` (|k| > 1).
    pub fn k_audit_table(&self) -> Table {
        let mut t = Table::new(["group", "seed", "layer", "k_value", "status"]);
        for g in &self.groups {
            for r in &g.runs {
                let (Some(ks), Some(audit)) = (&r.k, &r.k_audit) else { continue };
                for (i, k) in ks.iter().enumerate() {
                    let layer = i + 1;
                    let status = if audit.outside.iter().any(|(l, _)| *l == layer) {
                        "outside"
                    } else if audit.boundary.iter().any(|(l, _)| *l == layer) {
                        "boundary"
                    } else {
                        "inside"
                    };
                    t.push([g.name.clone(), r.seed.to_string(), layer.to_string(), num(*k), status.to_string()]);
                }
            }
        }
        t
    }

    pub fn k_outside(&self) -> usize {
        self.groups
            .iter()
            .flat_map(|g| &g.runs)
            .filter_map(|r| r.k_audit.as_ref())
            .map(|a| a.outside.len())
            .sum()
    }
}

fn safe_name(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '+')
}

/// Validated groups with their resolved sections, and the shared seed list.
pub fn plan(c: &CompareConfig) -> Result<(Vec<(String, TrainSection)>, Vec<u64>), LabError> {
    if c.groups.len() < 2 {
        return Err(LabError::Config(format!("compare.groups: need at least 2 groups, got {}", c.groups.len())));
    }
    let seeds: BTreeSet<u64> = c.seeds.iter().copied().collect();
    if seeds.len() != c.seeds.len() {
        return Err(LabError::Config("compare.seeds: duplicate seeds".into()));
    }
    if seeds.len() < 3 {
        return Err(LabError::Config(format!("compare.seeds: need at least 3 seeds, got {}", seeds.len())));
    }
    let mut names = BTreeSet::new();
    let mut groups = Vec::new();
    for (i, g) in c.groups.iter().enumerate() {
        let key = format!("compare.groups[{i}]");
        if !safe_name(&g.name) {
            return Err(LabError::Config(format!(
                "{key}.name: '{}' must be non-empty and use only letters, digits, '_', '-', '+'",
                g.name
            )));
        }
        if !names.insert(g.name.clone()) {
            return Err(LabError::Config(format!("{key}.name: duplicate group '{}'", g.name)));
        }
        if let Some(own) = &g.seeds {
            let own: BTreeSet<u64> = own.iter().copied().collect();
            if own != seeds {
                return Err(LabError::Config(format!(
                    "{key}.seeds: seed set {own:?} does not match compare.seeds {seeds:?}; paired comparison needs identical seeds"
                )));
            }
        }
        let section = g.apply(&c.base);
        // Fail on bad settings before any training starts.
        let (train, _) = train::datasets(&section, &key)?;
        train::train_config(&section, 0, &train, &key)?;
        groups.push((g.name.clone(), section));
    }
    Ok((groups, seeds.into_iter().collect()))
}

/// Trains every (group, seed) pair concurrently; results are ordered by
/// group, then seed.
pub fn compare(c: &CompareConfig) -> Result<(CompareResult, Vec<Vec<Trained>>), LabError> {
    let (groups, seeds) = plan(c)?;
    let jobs: Vec<(usize, u64)> = (0..groups.len()).flat_map(|g| seeds.iter().map(move |&s| (g, s))).collect();
    let trained: Vec<Trained> = jobs
        .par_iter()
        .map(|&(g, seed)| train_section(&groups[g].1, seed, &format!("compare.groups[{g}]")))
        .collect::<Result<_, _>>()?;
    let mut per_group: Vec<Vec<Trained>> = (0..groups.len()).map(|_| Vec::new()).collect();
    for ((g, _), t) in jobs.iter().zip(trained) {
        per_group[*g].push(t);
    }
    let result = CompareResult {
        seeds,
        groups: groups
            .iter()
            .zip(&per_group)
            .map(|((name, _), ts)| GroupResult { name: name.clone(), runs: ts.iter().map(|t| t.run.clone()).collect() })
            .collect(),
    };
    Ok((result, per_group))
}

/// Writes `compare.csv`, `summary.csv`, `k_audit.csv` and every run under
/// `runs/<group>/seed_<seed>/`.
pub fn write_outputs(result: &CompareResult, trained: &[Vec<Trained>], out: &Path) -> Result<(), LabError> {
    for (g, ts) in result.groups.iter().zip(trained) {
        for t in ts {
            train::write_outputs(t, &out.join("runs").join(&g.name).join(format!("seed_{}", t.run.seed)))?;
        }
    }
    result.per_seed_table().write(&out.join("compare.csv"))?;
    result.summary_table().write(&out.join("summary.csv"))?;
    result.k_audit_table().write(&out.join("k_audit.csv"))
}

pub fn run(c: &CompareConfig, out: &Path) -> Result<Outcome, LabError> {
    let (result, trained) = compare(c)?;
    write_outputs(&result, &trained, out)?;
    let failures: Vec<String> = result
        .groups
        .iter()
        .flat_map(|g| g.runs.iter().filter_map(move |r| failure_message(r).map(|m| format!("{} seed {}: {m}", g.name, r.seed))))
        .collect();
    if !failures.is_empty() {
        return Err(LabError::Numerical(failures.join("; ")));
    }
    let mut summary = String::new();
    for g in &result.groups {
        let (m, s) = mean_std(&g.accuracies());
        summary.push_str(&format!("{}: test accuracy {:.4} +- {:.4}\n", g.name, m, s));
    }
    summary.push_str(&format!("{} k_n outside [-1, 1]; tables in {}", result.k_outside(), out.display()));
    Ok(Outcome { summary, flag: None })
}
