//! Flat `key = value` run configuration with `#` comments.

use std::fs;
use std::path::{Path, PathBuf};

use deepcross::data::FieldSpec;
use deepcross::explain::{DEFAULT_EPSILON, DEFAULT_TOP_K};
use deepcross::model::ModelConfig;
use deepcross::{Error, Result, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Long-format dataset.
    pub data: Option<PathBuf>,
    pub fields: Vec<FieldSpec>,
    pub label: String,
    /// Entity column of wide input files; the first column when unset.
    pub entity_column: Option<String>,
    /// Fraction of entities in the training split.
    pub train_ratio: f64,
    pub time_span: usize,
    pub dim: usize,
    pub rank_widths: Vec<usize>,
    /// Temporal window; unset means 3, shrunk to the largest odd value <= T.
    pub window: Option<usize>,
    pub hidden: usize,
    pub classes: usize,
    pub q: f64,
    pub lambda: f64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub epsilon: f64,
    pub top_k: usize,
    /// Five indicator columns for the Z-Score baseline.
    pub zscore_fields: Vec<String>,
    pub lr_l1: f64,
    pub lr_epochs: usize,
    pub lr_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let model = train.model;
        Self {
            data: None,
            fields: Vec::new(),
            label: "label".into(),
            entity_column: None,
            train_ratio: 0.7,
            time_span: model.time_span,
            dim: model.dim,
            rank_widths: model.rank_widths,
            window: None,
            hidden: model.hidden,
            classes: model.classes,
            q: train.q,
            lambda: train.lambda,
            lr: train.lr,
            epochs: train.epochs,
            batch_size: train.batch_size,
            seed: train.seed,
            epsilon: DEFAULT_EPSILON,
            top_k: DEFAULT_TOP_K,
            zscore_fields: Vec::new(),
            lr_l1: 1e-3,
            lr_epochs: 200,
            lr_rate: 0.01,
        }
    }
}

fn bad(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.to_string(),
        msg: msg.into(),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| bad(key, format!("cannot parse `{v}`")))
}

fn list(v: &str) -> impl Iterator<Item = &str> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty())
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::parse(&text)?;
        // relative dataset paths resolve against the config file
        if let (Some(data), Some(dir)) = (&cfg.data, path.parent()) {
            if data.is_relative() {
                cfg.data = Some(dir.join(data));
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(bad(line, format!("line {} is not `key = value`", n + 1)));
            };
            c.set(key.trim(), value.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "data" => self.data = Some(PathBuf::from(v)),
            "fields" => self.fields = list(v).map(FieldSpec::parse).collect::<Result<_>>().map_err(|e| bad(key, e.to_string()))?,
            "label" => self.label = v.to_string(),
            "entity_column" => self.entity_column = Some(v.to_string()),
            "train_ratio" => self.train_ratio = parse_num(key, v)?,
            "T" => self.time_span = parse_num(key, v)?,
            "d" => self.dim = parse_num(key, v)?,
            "rank_widths" => self.rank_widths = list(v).map(|w| parse_num(key, w)).collect::<Result<_>>()?,
            "s" => self.window = Some(parse_num(key, v)?),
            "h" => self.hidden = parse_num(key, v)?,
            "k" => self.classes = parse_num(key, v)?,
            "q" => self.q = parse_num(key, v)?,
            "lambda" => self.lambda = parse_num(key, v)?,
            "lr" => self.lr = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "epsilon" => self.epsilon = parse_num(key, v)?,
            "K" => self.top_k = parse_num(key, v)?,
            "zscore_fields" => self.zscore_fields = list(v).map(String::from).collect(),
            "lr_l1" => self.lr_l1 = parse_num(key, v)?,
            "lr_epochs" => self.lr_epochs = parse_num(key, v)?,
            "lr_rate" => self.lr_rate = parse_num(key, v)?,
            _ => return Err(bad(key, "unknown key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config()?.validate()?;
        if !(self.train_ratio > 0.0 && self.train_ratio < 1.0) {
            return Err(bad("train_ratio", "must be in (0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(bad("epsilon", "must be positive"));
        }
        if self.top_k == 0 {
            return Err(bad("K", "must be positive"));
        }
        if !self.zscore_fields.is_empty() && self.zscore_fields.len() != 5 {
            return Err(bad("zscore_fields", format!("need exactly 5 columns, got {}", self.zscore_fields.len())));
        }
        if !(self.lr_l1 >= 0.0) || !(self.lr_rate >= 0.0) {
            return Err(bad("lr_l1", "baseline rates must be nonnegative"));
        }
        let mut names: Vec<&str> = self.fields.iter().map(|f| f.name.as_str()).collect();
        names.sort_unstable();
        if let Some(w) = names.windows(2).find(|w| w[0] == w[1]) {
            return Err(bad("fields", format!("duplicate field `{}`", w[0])));
        }
        Ok(())
    }

    /// The explicit window, or the default rule.
    pub fn effective_window(&self) -> usize {
        self.window.unwrap_or_else(|| {
            let cap = if self.time_span % 2 == 1 { self.time_span } else { self.time_span.saturating_sub(1) };
            3.min(cap.max(1))
        })
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            time_span: self.time_span,
            dim: self.dim,
            rank_widths: self.rank_widths.clone(),
            window: self.effective_window(),
            hidden: self.hidden,
            classes: self.classes,
        }
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            model: self.model_config(),
            q: self.q,
            lambda: self.lambda,
            lr: self.lr,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
        })
    }
}
