//! Experiment configuration files (TOML). Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::LabError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory; `--out` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub integrate: Option<IntegrateConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<OrderConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weak: Option<WeakConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareConfig>,
}

fn default_t_end() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrateConfig {
    pub problem: String,
    pub scheme: String,
    pub dt: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    /// LM coefficient for `scheme = "lm"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    /// Overrides the problem's default initial condition.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub u0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderConfig {
    pub problem: String,
    pub scheme: String,
    /// `exact`, `original` or `modified`.
    #[serde(default = "default_reference")]
    pub reference: String,
    pub dts: Vec<f64>,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
}

fn default_reference() -> String {
    "exact".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeakConfig {
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_x0")]
    pub x0: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
    #[serde(default = "default_increment")]
    pub increment: String,
    /// Second increment law run side by side for the agreement columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compare_with: Option<String>,
    #[serde(default = "default_phi")]
    pub phi: String,
    pub dts: Vec<f64>,
    pub paths: usize,
}

fn default_mu() -> f64 {
    0.5
}
fn default_sigma() -> f64 {
    0.2
}
fn default_x0() -> f64 {
    1.0
}
fn default_increment() -> String {
    "gaussian".into()
}
fn default_phi() -> String {
    "identity".into()
}

/// Data source plus network and optimiser settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default = "default_dataset")]
    pub dataset: String,
    /// CSV file used when `dataset = "csv"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
    #[serde(default = "default_label")]
    pub label: String,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_noise")]
    pub noise: f64,
    #[serde(default)]
    pub data_seed: u64,
    #[serde(default = "default_kind")]
    pub kind: String,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_width")]
    pub width: usize,
    #[serde(default = "default_k_init")]
    pub k_init: [f64; 2],
    #[serde(default)]
    pub dual_branch: bool,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    /// Defaults to the epochs after 50% and 75% of training.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_decay_epochs: Option<Vec<usize>>,
    #[serde(default = "default_lr_factor")]
    pub lr_factor: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_wd")]
    pub weight_decay: f64,
    /// `none`, `stochastic_depth` or `shake_shake`.
    #[serde(default = "default_policy")]
    pub policy: String,
    #[serde(default = "default_p_l")]
    pub p_l: f64,
}

fn default_dataset() -> String {
    "spirals".into()
}
fn default_label() -> String {
    "label".into()
}
fn default_n() -> usize {
    2000
}
fn default_noise() -> f64 {
    0.1
}
fn default_kind() -> String {
    "resnet".into()
}
fn default_depth() -> usize {
    6
}
fn default_width() -> usize {
    16
}
fn default_k_init() -> [f64; 2] {
    [odenet::archblocks::DEFAULT_K_INIT.0, odenet::archblocks::DEFAULT_K_INIT.1]
}
fn default_epochs() -> usize {
    200
}
fn default_batch() -> usize {
    32
}
fn default_lr() -> f64 {
    odenet::trainer::DEFAULT_LR
}
fn default_lr_factor() -> f64 {
    0.1
}
fn default_momentum() -> f64 {
    0.9
}
fn default_wd() -> f64 {
    1e-4
}
fn default_policy() -> String {
    "none".into()
}
fn default_p_l() -> f64 {
    0.5
}

impl Default for TrainSection {
    fn default() -> Self {
        toml::from_str("").expect("every field has a default")
    }
}

/// Optional per-group overrides of the shared `[compare.base]` section.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_branch: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    /// Defaults to `compare.seeds`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub base: TrainSection,
    pub groups: Vec<GroupConfig>,
}

impl GroupConfig {
    pub fn apply(&self, base: &TrainSection) -> TrainSection {
        let mut t = base.clone();
        if let Some(v) = &self.kind {
            t.kind = v.clone();
        }
        if let Some(v) = &self.policy {
            t.policy = v.clone();
        }
        if let Some(v) = self.p_l {
            t.p_l = v;
        }
        if let Some(v) = self.depth {
            t.depth = v;
        }
        if let Some(v) = self.width {
            t.width = v;
        }
        if let Some(v) = self.dual_branch {
            t.dual_branch = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        t
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, LabError> {
        toml::from_str(text).map_err(|e| LabError::Config(e.to_string().trim_end().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            LabError::Config(m) => LabError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The configuration with all defaults filled in, as TOML.
    pub fn resolved(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let e = ExperimentConfig::parse("[integrate]\nproblem='exp_decay'\nscheme='rk4'\ndt=0.1\nstep=3\n").unwrap_err();
        assert!(matches!(&e, LabError::Config(m) if m.contains("step")), "{e:?}");
        assert!(ExperimentConfig::parse("seeed = 1").is_err());
    }

    #[test]
    fn defaults_fill_in_and_round_trip() {
        let c = ExperimentConfig::parse("seed = 4\n[train]\nkind = 'lm_resnet'\n").unwrap();
        let t = c.train.as_ref().unwrap();
        assert_eq!((t.depth, t.width, t.batch_size), (6, 16, 32));
        assert_eq!(t.k_init, [-0.1, 0.0]);
        let again = ExperimentConfig::parse(&c.resolved()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn group_overrides() {
        let base = TrainSection::default();
        let g = GroupConfig { name: "x".into(), kind: Some("lm_resnet".into()), p_l: Some(0.8), ..Default::default() };
        let t = g.apply(&base);
        assert_eq!(t.kind, "lm_resnet");
        assert_eq!(t.p_l, 0.8);
        assert_eq!(t.depth, base.depth);
    }
}
