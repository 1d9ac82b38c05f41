//! Run configuration. Values resolve as defaults ← TOML file ← `key=value`
//! overrides, and the fully resolved config is written next to every run.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::SplitStrategy;
use crate::error::{Error, Result};
use crate::objective::Penalty;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub partition: PartitionConfig,
    pub preprocess: PreprocessConfig,
    pub augment: AugmentConfig,
    pub encoder: EncoderConfig,
    pub udm: UdmConfig,
    pub ufm: UfmConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub strategy: SplitStrategy,
    /// train / val / test fractions for the inter strategy.
    pub ratios: [f64; 3],
    /// Allowed deviation of each set's positive ratio from the global ratio.
    pub tolerance: f64,
    /// train / test / val clip counts for the intra strategy.
    pub intra_counts: [usize; 3],
    pub seed: u64,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        PartitionConfig {
            strategy: SplitStrategy::Inter,
            ratios: [0.65, 0.15, 0.2],
            tolerance: 0.10,
            intra_counts: [888, 121, 111],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeightNorm {
    Segments,
    Trunk,
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PreprocessConfig {
    /// Median-filter window in seconds; 0 disables smoothing.
    pub median_window_s: f64,
    pub center: bool,
    pub align_trunk: bool,
    pub height_norm: HeightNorm,
    pub drop_facial: bool,
    /// Minimum trunk length / height accepted as non-degenerate.
    pub epsilon: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            median_window_s: 0.5,
            center: true,
            align_trunk: true,
            height_norm: HeightNorm::Segments,
            drop_facial: true,
            epsilon: 1e-8,
        }
    }
}

impl PreprocessConfig {
    pub fn disabled() -> Self {
        PreprocessConfig {
            median_window_s: 0.0,
            center: false,
            align_trunk: false,
            height_norm: HeightNorm::Off,
            drop_facial: false,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub apply_probability: f64,
    pub mirror: f64,
    pub time_reverse: f64,
    pub noise: f64,
    pub scale: f64,
    pub magnitude_warp: f64,
    pub time_warp: f64,
    pub noise_std_fraction: f64,
    pub scale_range: [f64; 2],
    pub warp_knots: usize,
    pub warp_std: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: true,
            apply_probability: 0.8,
            mirror: 0.5,
            time_reverse: 0.5,
            noise: 1.0,
            scale: 1.0,
            magnitude_warp: 0.5,
            time_warp: 0.5,
            noise_std_fraction: 1.0 / 3.0,
            scale_range: [0.35, 1.65],
            warp_knots: 4,
            warp_std: 0.2,
        }
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.apply_probability,
            self.mirror,
            self.time_reverse,
            self.noise,
            self.scale,
            self.magnitude_warp,
            self.time_warp,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config("augment probabilities must lie in [0, 1]".into()));
        }
        if !(self.scale_range[0] < self.scale_range[1]) {
            return Err(Error::Config("augment.scale_range must have low < high".into()));
        }
        if self.warp_knots < 2 {
            return Err(Error::Config("augment.warp_knots must be ≥ 2".into()));
        }
        if !(self.warp_std >= 0.0 && self.noise_std_fraction >= 0.0) {
            return Err(Error::Config("augment std values must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Registered encoder plug-in.
    pub name: String,
    pub widths: Vec<usize>,
    pub strides: Vec<usize>,
    /// Temporal kernel length; 0 disables temporal convolution.
    pub kernel: usize,
    pub embedding_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            name: "graph-temporal".into(),
            widths: vec![16, 32, 32, 64],
            strides: vec![2, 2, 2, 2],
            kernel: 5,
            embedding_dim: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UdmConfig {
    #[serde(rename = "T_train")]
    pub t_train: usize,
    #[serde(rename = "T_eval")]
    pub t_eval: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub dropout: f64,
    /// Hidden widths of f_e and f_a.
    pub hidden: Vec<usize>,
    /// Hidden width of f_σ.
    pub sigma_hidden: usize,
}

impl Default for UdmConfig {
    fn default() -> Self {
        UdmConfig {
            t_train: 10,
            t_eval: 100,
            n: 100,
            dropout: 0.5,
            hidden: vec![128, 64],
            sigma_hidden: 16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FusionMode {
    #[serde(rename = "ufm")]
    Ufm,
    #[serde(rename = "none")]
    None,
    #[serde(rename = "upr-style")]
    UprStyle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UfmConfig {
    pub mode: FusionMode,
    pub dropout: f64,
    /// Refinement output width and classifier hidden width.
    pub widths: [usize; 2],
    /// Weights (w_e, w_a) of the weighted-sum refinement used by `upr-style`.
    pub upr_weights: [f64; 2],
}

impl Default for UfmConfig {
    fn default() -> Self {
        UfmConfig {
            mode: FusionMode::Ufm,
            dropout: 0.5,
            widths: [256, 64],
            upr_weights: [0.5, 0.5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub lambda0: f64,
    pub lambda1: f64,
    pub penalty: Penalty,
    pub use_l_mu: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda0: 1.0,
            lambda1: 1.0,
            penalty: Penalty::Exp,
            use_l_mu: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub warmup_epochs: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
    pub batch_size: usize,
    /// Weight initialisation and batch shuffling.
    pub seed: u64,
    /// Dropout masks in every head.
    pub dropout_seed: u64,
    /// Reparameterisation draws of the MC integration.
    pub mc_seed: u64,
    pub augment_seed: u64,
    /// Noise draws averaged per level by the noise probe.
    pub probe_draws: usize,
    /// Re-estimate head batch-norm statistics on the clean training clips at
    /// the end of every epoch.
    pub recalibrate_bn: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            warmup_epochs: 5,
            base_lr: 0.05,
            momentum: 0.9,
            weight_decay: 0.001,
            milestones: vec![50, 75],
            gamma: 0.1,
            batch_size: 8,
            seed: 0,
            dropout_seed: 1,
            mc_seed: 2,
            augment_seed: 3,
            probe_draws: 10,
            recalibrate_bn: true,
        }
    }
}

impl TrainConfig {
    /// Epoch-level learning rate: linear warmup to `base_lr`, then ×`gamma` at
    /// each milestone. Epochs are 0-based.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.warmup_epochs {
            return self.base_lr * (epoch + 1) as f64 / self.warmup_epochs as f64;
        }
        let decays = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.base_lr * self.gamma.powi(decays as i32)
    }
}

/// Every accepted key path with its default, for `--help`.
pub fn key_listing() -> String {
    let value = toml::Value::try_from(Config::default()).expect("defaults serialise");
    let mut lines = Vec::new();
    flatten("", &value, &mut lines);
    lines.join("\n")
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("  {prefix} = {other}")),
    }
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        let t = &self.train;
        if t.epochs == 0 || t.batch_size == 0 {
            return Err(Error::Config("train.epochs and train.batch_size must be ≥ 1".into()));
        }
        if !(t.base_lr > 0.0 && t.gamma > 0.0 && t.momentum >= 0.0 && t.weight_decay >= 0.0) {
            return Err(Error::Config("learning-rate parameters must be positive".into()));
        }
        if t.warmup_epochs == 0 {
            return Err(Error::Config("train.warmup_epochs must be ≥ 1".into()));
        }
        let mut prev = t.warmup_epochs;
        for &m in &t.milestones {
            if m <= prev || m > t.epochs {
                return Err(Error::Config(format!(
                    "milestones {:?} must increase after warmup ({}) and not exceed epochs ({})",
                    t.milestones, t.warmup_epochs, t.epochs
                )));
            }
            prev = m;
        }
        if self.udm.t_train < 2 || self.udm.t_eval < 2 || self.udm.n < 1 {
            return Err(Error::Config("udm.T_train, udm.T_eval must be ≥ 2 and udm.N ≥ 1".into()));
        }
        for (name, rate) in [("udm.dropout", self.udm.dropout), ("ufm.dropout", self.ufm.dropout)] {
            if !(0.0..=1.0).contains(&rate) {
                return Err(Error::Config(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.loss.lambda0 < 0.0 || self.loss.lambda1 < 0.0 {
            return Err(Error::Config("loss.lambda0 and loss.lambda1 must be ≥ 0".into()));
        }
        let e = &self.encoder;
        if e.embedding_dim == 0 || e.widths.is_empty() || e.widths.len() != e.strides.len() {
            return Err(Error::Config(
                "encoder.widths and encoder.strides must be non-empty and equally long".into(),
            ));
        }
        if e.strides.contains(&0) || e.widths.contains(&0) {
            return Err(Error::Config("encoder widths and strides must be ≥ 1".into()));
        }
        if self.udm.hidden.contains(&0) || self.udm.sigma_hidden == 0 || self.ufm.widths.contains(&0) {
            return Err(Error::Config("head widths must be ≥ 1".into()));
        }
        if self.preprocess.median_window_s < 0.0 {
            return Err(Error::Config("preprocess.median_window_s must be ≥ 0".into()));
        }
        self.augment.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Self::resolve(Some(text), &[])
    }

    /// Layers `file` (TOML text) and `overrides` (`key.path=value`) over the
    /// defaults. Override values are parsed as TOML and fall back to strings.
    pub fn resolve(file: Option<&str>, overrides: &[String]) -> Result<Self> {
        let mut root = toml::Value::try_from(Config::default()).expect("defaults serialise");
        if let Some(text) = file {
            let parsed: toml::Table =
                toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
            merge(&mut root, toml::Value::Table(parsed));
        }
        for item in overrides {
            let (key, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{item}` is not key=value")))?;
            set_path(&mut root, key.trim(), parse_scalar(raw.trim()))?;
        }
        let cfg: Config = root
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                Self::resolve(Some(&text), overrides)
            }
            None => Self::resolve(None, overrides),
        }
    }
}

fn parse_scalar(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").unwrap_or(toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn merge(base: &mut toml::Value, incoming: toml::Value) {
    match (base, incoming) {
        (toml::Value::Table(b), toml::Value::Table(i)) => {
            for (k, v) in i {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(root: &mut toml::Value, key: &str, value: toml::Value) -> Result<()> {
    let mut parts = key.split('.').peekable();
    let mut cur = root;
    while let Some(part) = parts.next() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("`{key}` does not name a config value")))?;
        if parts.peek().is_none() {
            if !table.contains_key(part) {
                return Err(Error::Config(format!("unknown config key `{key}`")));
            }
            table.insert(part.to_string(), value);
            return Ok(());
        }
        cur = table
            .get_mut(part)
            .ok_or_else(|| Error::Config(format!("unknown config key `{key}`")))?;
    }
    Err(Error::Config("empty config key".into()))
}
