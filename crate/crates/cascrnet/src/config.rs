//! Flat `key = value` run configuration: trivially parseable, diff-friendly,
//! and round-trippable. Unknown keys are rejected so typos never pass silently.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::model::{AsppConfig, ModelConfig};
use crate::train::TrainConfig;

/// Ordered key=value pairs parsed from UTF-8 text with `#` comments.
#[derive(Clone, Debug, Default)]
pub struct KvFile {
    pairs: Vec<(String, String)>,
}

impl KvFile {
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs: Vec<(String, String)> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "line {}: expected 'key = value', got '{raw}'",
                    i + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if pairs.iter().any(|(k, _)| k == &key) {
                return Err(Error::config(format!("line {}: duplicate key '{key}'", i + 1)));
            }
            pairs.push((key, value));
        }
        Ok(KvFile { pairs })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.pairs
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.pairs.iter().map(|(k, _)| k.as_str())
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(format!("key '{key}': cannot parse value '{value}'")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::config(format!(
            "key '{key}': expected true or false, got '{value}'"
        ))),
    }
}

fn parse_usize_list(key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split(',')
        .map(|s| parse_value::<usize>(key, s.trim()))
        .collect()
}

fn join_list(values: &[usize]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

/// How focal α class weights are chosen at training time.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClassWeightMode {
    /// Inverse-frequency weights computed from the training manifest.
    Auto,
    /// Unit weights.
    None,
}

/// Everything one run needs: model, training, data locations, output
/// directory. The `--data`, `--out`, and `--seed` CLI flags override the
/// corresponding keys.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub class_weights: ClassWeightMode,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub train_manifest: String,
    pub val_manifest: String,
    /// `FxK`: parameter-count smoke config for a single dense layer.
    pub toy_dense: Option<(usize, usize)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::small();
        let train = TrainConfig::default();
        RunConfig {
            seed: 42,
            model,
            train,
            class_weights: ClassWeightMode::Auto,
            data_dir: None,
            out_dir: None,
            train_manifest: "train.csv".to_string(),
            val_manifest: "val.csv".to_string(),
            toy_dense: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let kv = KvFile::parse(text)?;
        let mut cfg = RunConfig::default();
        for key in kv.keys() {
            let value = kv.get(key).expect("key exists");
            cfg.apply(key, value)?;
        }
        // One seed drives the whole run.
        cfg.model.seed = cfg.seed;
        cfg.train.seed = cfg.seed;
        Ok(cfg)
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.model.seed = seed;
        self.train.seed = seed;
    }

    fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_value(key, value)?,
            "model.input_hw" => self.model.input_hw = parse_value(key, value)?,
            "model.stem_channels" => self.model.stem_channels = parse_value(key, value)?,
            "model.stage_channels" => self.model.stage_channels = parse_usize_list(key, value)?,
            "model.scr_dilation" => self.model.scr_dilation = parse_value(key, value)?,
            "model.aspp_branch_channels" => {
                self.model.aspp.branch_channels = parse_value(key, value)?
            }
            "model.aspp_dilation_rates" => {
                self.model.aspp.dilation_rates = parse_usize_list(key, value)?
            }
            "model.aspp_image_pool" => {
                self.model.aspp.include_image_pool = parse_bool(key, value)?
            }
            "model.aspp_project_channels" => {
                self.model.aspp.project_channels = parse_value(key, value)?
            }
            "model.toy_dense" => {
                let Some((f, k)) = value.split_once('x') else {
                    return Err(Error::config(format!(
                        "key '{key}': expected FxK (e.g. 4x3), got '{value}'"
                    )));
                };
                self.toy_dense = Some((parse_value(key, f.trim())?, parse_value(key, k.trim())?));
            }
            "train.epochs" => self.train.epochs = parse_value(key, value)?,
            "train.batch_size" => self.train.batch_size = parse_value(key, value)?,
            "train.focal_gamma" => self.train.focal.gamma = parse_value(key, value)?,
            "train.class_weights" => {
                self.class_weights = match value {
                    "auto" => ClassWeightMode::Auto,
                    "none" => ClassWeightMode::None,
                    _ => {
                        return Err(Error::config(format!(
                            "key '{key}': expected auto or none, got '{value}'"
                        )))
                    }
                }
            }
            "train.lr" => self.train.adam.lr = parse_value(key, value)?,
            "train.beta1" => self.train.adam.beta1 = parse_value(key, value)?,
            "train.beta2" => self.train.adam.beta2 = parse_value(key, value)?,
            "train.adam_eps" => self.train.adam.eps = parse_value(key, value)?,
            "train.patience" => self.train.patience = parse_value(key, value)?,
            "train.min_delta" => self.train.min_delta = parse_value(key, value)?,
            "train.min_lr" => self.train.min_lr = parse_value(key, value)?,
            "train.checkpoint_cadence" => {
                self.train.checkpoint_cadence = parse_value(key, value)?
            }
            "train.hflip" => self.train.hflip = parse_bool(key, value)?,
            "data.dir" => self.data_dir = Some(PathBuf::from(value)),
            "data.train_manifest" => self.train_manifest = value.to_string(),
            "data.val_manifest" => self.val_manifest = value.to_string(),
            "out.dir" => self.out_dir = Some(PathBuf::from(value)),
            _ => return Err(Error::config(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Fully resolved text form: every key materialized, fixed order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push('\n');
        // The run-level `seed` key covers the model seed.
        for line in model_to_kv(&self.model).lines() {
            if !line.starts_with("model.seed") {
                out.push_str(line);
                out.push('\n');
            }
        }
        if let Some((f, k)) = self.toy_dense {
            out.push_str(&format!("model.toy_dense = {f}x{k}\n"));
        }
        out.push('\n');
        out.push_str(&format!("train.epochs = {}\n", self.train.epochs));
        out.push_str(&format!("train.batch_size = {}\n", self.train.batch_size));
        out.push_str(&format!("train.focal_gamma = {}\n", self.train.focal.gamma));
        out.push_str(&format!(
            "train.class_weights = {}\n",
            match self.class_weights {
                ClassWeightMode::Auto => "auto",
                ClassWeightMode::None => "none",
            }
        ));
        out.push_str(&format!("train.lr = {}\n", self.train.adam.lr));
        out.push_str(&format!("train.beta1 = {}\n", self.train.adam.beta1));
        out.push_str(&format!("train.beta2 = {}\n", self.train.adam.beta2));
        out.push_str(&format!("train.adam_eps = {}\n", self.train.adam.eps));
        out.push_str(&format!("train.patience = {}\n", self.train.patience));
        out.push_str(&format!("train.min_delta = {}\n", self.train.min_delta));
        out.push_str(&format!("train.min_lr = {}\n", self.train.min_lr));
        out.push_str(&format!(
            "train.checkpoint_cadence = {}\n",
            self.train.checkpoint_cadence
        ));
        out.push_str(&format!("train.hflip = {}\n", self.train.hflip));
        out.push('\n');
        if let Some(dir) = &self.data_dir {
            out.push_str(&format!("data.dir = {}\n", dir.display()));
        }
        out.push_str(&format!("data.train_manifest = {}\n", self.train_manifest));
        out.push_str(&format!("data.val_manifest = {}\n", self.val_manifest));
        if let Some(dir) = &self.out_dir {
            out.push_str(&format!("out.dir = {}\n", dir.display()));
        }
        out
    }
}

/// Model section as flat keys (also the checkpoint `model.txt` format).
pub fn model_to_kv(cfg: &ModelConfig) -> String {
    let mut out = String::new();
    out.push_str(&format!("model.input_hw = {}\n", cfg.input_hw));
    out.push_str(&format!("model.stem_channels = {}\n", cfg.stem_channels));
    out.push_str(&format!(
        "model.stage_channels = {}\n",
        join_list(&cfg.stage_channels)
    ));
    out.push_str(&format!("model.scr_dilation = {}\n", cfg.scr_dilation));
    out.push_str(&format!(
        "model.aspp_branch_channels = {}\n",
        cfg.aspp.branch_channels
    ));
    out.push_str(&format!(
        "model.aspp_dilation_rates = {}\n",
        join_list(&cfg.aspp.dilation_rates)
    ));
    out.push_str(&format!(
        "model.aspp_image_pool = {}\n",
        cfg.aspp.include_image_pool
    ));
    out.push_str(&format!(
        "model.aspp_project_channels = {}\n",
        cfg.aspp.project_channels
    ));
    out.push_str(&format!("model.seed = {}\n", cfg.seed));
    out
}

/// Parses a checkpoint `model.txt` back into a config.
pub fn model_from_kv(text: &str) -> Result<ModelConfig> {
    let kv = KvFile::parse(text)?;
    let mut cfg = ModelConfig {
        input_hw: 0,
        stem_channels: 0,
        stage_channels: Vec::new(),
        scr_dilation: 2,
        aspp: AsppConfig::default(),
        seed: 0,
    };
    for key in kv.keys() {
        let value = kv.get(key).expect("key exists");
        match key {
            "model.input_hw" => cfg.input_hw = parse_value(key, value)?,
            "model.stem_channels" => cfg.stem_channels = parse_value(key, value)?,
            "model.stage_channels" => cfg.stage_channels = parse_usize_list(key, value)?,
            "model.scr_dilation" => cfg.scr_dilation = parse_value(key, value)?,
            "model.aspp_branch_channels" => cfg.aspp.branch_channels = parse_value(key, value)?,
            "model.aspp_dilation_rates" => {
                cfg.aspp.dilation_rates = parse_usize_list(key, value)?
            }
            "model.aspp_image_pool" => cfg.aspp.include_image_pool = parse_bool(key, value)?,
            "model.aspp_project_channels" => {
                cfg.aspp.project_channels = parse_value(key, value)?
            }
            "model.seed" => cfg.seed = parse_value(key, value)?,
            _ => return Err(Error::config(format!("unknown key '{key}' in model config"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
