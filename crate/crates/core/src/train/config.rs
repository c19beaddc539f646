use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}")]
    BadValue { key: String, value: String },
    #[error("{0}")]
    Invalid(&'static str),
    #[error("cannot read configuration: {0}")]
    Io(String),
}

/// Hyperparameters of one training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the student CTC loss.
    pub lambda1: f64,
    /// Weight of the teacher-to-student distillation loss.
    pub lambda2: f64,
    pub kd_temperature: f64,
    /// Weight of the teacher's own CTC loss.
    pub teacher_ctc_weight: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Keep teacher parameters fixed even when its CTC weight is positive.
    pub freeze_teacher: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 0.5,
            kd_temperature: 2.0,
            teacher_ctc_weight: 1.0,
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            epochs: 10,
            batch_size: 8,
            seed: 0,
            freeze_teacher: false,
        }
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or(ConfigError::Syntax { line: i + 1 })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl TrainConfig {
    /// Whether the teacher head is evaluated at all. With no distillation
    /// weight the teacher cannot influence the student, so it is skipped.
    pub fn teacher_active(&self) -> bool {
        self.lambda2 > 0.0
    }

    /// Whether teacher parameters receive updates.
    pub fn teacher_trainable(&self) -> bool {
        self.teacher_active() && self.teacher_ctc_weight > 0.0 && !self.freeze_teacher
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let reals = [
            self.lambda1,
            self.lambda2,
            self.kd_temperature,
            self.teacher_ctc_weight,
            self.learning_rate,
            self.beta1,
            self.beta2,
            self.eps,
            self.weight_decay,
        ];
        if !reals.iter().all(|v| v.is_finite()) {
            return Err(ConfigError::Invalid("all real-valued settings must be finite"));
        }
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.teacher_ctc_weight < 0.0 || self.weight_decay < 0.0 {
            return Err(ConfigError::Invalid("loss weights and weight_decay must be >= 0"));
        }
        if self.lambda1 + self.lambda2 <= 0.0 {
            return Err(ConfigError::Invalid("lambda1 + lambda2 must be > 0"));
        }
        if self.kd_temperature <= 0.0 || self.learning_rate <= 0.0 || self.eps <= 0.0 {
            return Err(ConfigError::Invalid("kd_temperature, learning_rate and eps must be > 0"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || self.beta1 == 0.0 || self.beta2 == 0.0 {
            return Err(ConfigError::Invalid("beta1 and beta2 must lie in (0, 1)"));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(ConfigError::Invalid("epochs and batch_size must be >= 1"));
        }
        Ok(())
    }

    /// Overrides one field by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        fn p<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
            value.parse().map_err(|_| ConfigError::BadValue { key: key.into(), value: value.into() })
        }
        match key {
            "lambda1" => self.lambda1 = p(key, value)?,
            "lambda2" => self.lambda2 = p(key, value)?,
            "kd_temperature" => self.kd_temperature = p(key, value)?,
            "teacher_ctc_weight" => self.teacher_ctc_weight = p(key, value)?,
            "learning_rate" => self.learning_rate = p(key, value)?,
            "beta1" => self.beta1 = p(key, value)?,
            "beta2" => self.beta2 = p(key, value)?,
            "eps" => self.eps = p(key, value)?,
            "weight_decay" => self.weight_decay = p(key, value)?,
            "epochs" => self.epochs = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            "seed" => self.seed = p(key, value)?,
            "freeze_teacher" => self.freeze_teacher = p(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Defaults overridden by every pair in `text`.
    pub fn from_kv_text(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = Self::default();
        for (k, v) in parse_kv(text)? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(e.to_string()))?;
        Self::from_kv_text(&text)
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("lambda1".into(), self.lambda1.to_string()),
            ("lambda2".into(), self.lambda2.to_string()),
            ("kd_temperature".into(), self.kd_temperature.to_string()),
            ("teacher_ctc_weight".into(), self.teacher_ctc_weight.to_string()),
            ("learning_rate".into(), self.learning_rate.to_string()),
            ("beta1".into(), self.beta1.to_string()),
            ("beta2".into(), self.beta2.to_string()),
            ("eps".into(), self.eps.to_string()),
            ("weight_decay".into(), self.weight_decay.to_string()),
            ("epochs".into(), self.epochs.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("freeze_teacher".into(), self.freeze_teacher.to_string()),
        ]
    }

    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_pairs() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}
