use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::featsel::Threshold;
use crate::model::ModelConfig;
use crate::training::TrainConfig;

/// Everything a pipeline run needs. Parsed from a `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub data_files: Vec<PathBuf>,
    /// `None` uses the built-in packet schema.
    pub schema: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub train: TrainConfig,
    pub fine_tune: TrainConfig,
    pub embedding_dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    pub mlp_hidden_factors: Vec<f64>,
    pub feature_selection: bool,
    pub force_include: Vec<String>,
    pub selection_threshold: Threshold,
    pub forest_trees: usize,
    pub forest_max_depth: Option<usize>,
    pub selection_cap: usize,
    /// Share of every cached split actually used, sampled per class.
    pub fraction: f64,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let arch = ModelConfig::new(Vec::new(), 0);
        Self {
            data_files: Vec::new(),
            schema: None,
            output_dir: PathBuf::from("itct-out"),
            train: TrainConfig::default(),
            fine_tune: TrainConfig::fine_tune(),
            embedding_dim: arch.embedding_dim,
            n_blocks: arch.n_blocks,
            n_heads: arch.n_heads,
            mlp_hidden_factors: arch.mlp_hidden_factors,
            feature_selection: false,
            force_include: vec!["protocol".to_string()],
            selection_threshold: Threshold::Mean,
            forest_trees: 100,
            forest_max_depth: None,
            selection_cap: 500_000,
            fraction: 1.0,
            seed: 0,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {value:?}"))),
    }
}

fn parse_list(value: &str) -> Vec<String> {
    value
        .trim_matches(|c| c == '[' || c == ']')
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl PipelineConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Parses `key = value` lines (`#` starts a comment). Relative paths are
    /// resolved against `base`. Unknown keys are rejected.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut cfg = Self::default();
        let resolve = |v: &str| {
            let p = PathBuf::from(v);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("config line {}: expected `key = value`", i + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let t = &mut cfg.train;
            let ft = &mut cfg.fine_tune;
            match key {
                "data_files" => cfg.data_files = parse_list(value).iter().map(|v| resolve(v)).collect(),
                "schema" => cfg.schema = Some(resolve(value)),
                "output_dir" => cfg.output_dir = resolve(value),
                "learning_rate" => t.learning_rate = parse_num(key, value)?,
                "weight_decay" => t.weight_decay = parse_num(key, value)?,
                "dropout_rate" => t.dropout = parse_num(key, value)?,
                "batch_size" => t.batch_size = parse_num(key, value)?,
                "number_of_epochs" => t.epochs = parse_num(key, value)?,
                "beta_1" => t.beta1 = parse_num(key, value)?,
                "beta_2" => t.beta2 = parse_num(key, value)?,
                "epsilon" => t.eps = parse_num(key, value)?,
                "callback" => t.callback_enabled = parse_bool(key, value)?,
                "patience" => t.patience = parse_num(key, value)?,
                "number_of_transformer_blocks" => cfg.n_blocks = parse_num(key, value)?,
                "number_of_attention_heads" => cfg.n_heads = parse_num(key, value)?,
                "embedding_dimensions" => cfg.embedding_dim = parse_num(key, value)?,
                "mlp_hidden_units_factors" => {
                    cfg.mlp_hidden_factors = parse_list(value)
                        .iter()
                        .map(|v| parse_num(key, v))
                        .collect::<Result<_>>()?
                }
                "feature_selection" => cfg.feature_selection = parse_bool(key, value)?,
                "force_include" => cfg.force_include = parse_list(value),
                "selection_threshold" => cfg.selection_threshold = value.parse()?,
                "forest_trees" => cfg.forest_trees = parse_num(key, value)?,
                "forest_max_depth" => {
                    cfg.forest_max_depth = match value {
                        "none" | "" => None,
                        v => Some(parse_num(key, v)?),
                    }
                }
                "selection_cap" => cfg.selection_cap = parse_num(key, value)?,
                "fraction" => cfg.fraction = parse_num(key, value)?,
                "seed" => cfg.seed = parse_num(key, value)?,
                "fine_tune_learning_rate" => ft.learning_rate = parse_num(key, value)?,
                "fine_tune_epochs" => ft.epochs = parse_num(key, value)?,
                "fine_tune_batch_size" => ft.batch_size = parse_num(key, value)?,
                "fine_tune_weight_decay" => ft.weight_decay = parse_num(key, value)?,
                "fine_tune_dropout_rate" => ft.dropout = parse_num(key, value)?,
                "fine_tune_callback" => ft.callback_enabled = parse_bool(key, value)?,
                _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
            }
        }
        cfg.set_seed(cfg.seed);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets the run seed, which also seeds training and fine-tuning.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.train.seed = seed;
        self.fine_tune.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::Config(format!(
                "fraction must be in (0, 1], got {}",
                self.fraction
            )));
        }
        if self.forest_trees == 0 {
            return Err(Error::Config("forest_trees must be at least 1".into()));
        }
        if self.selection_cap == 0 {
            return Err(Error::Config("selection_cap must be at least 1".into()));
        }
        Ok(())
    }

    /// Architecture for the given input layout.
    pub fn model_config(&self, vocab_sizes: Vec<usize>, n_continuous: usize) -> ModelConfig {
        ModelConfig {
            embedding_dim: self.embedding_dim,
            n_blocks: self.n_blocks,
            n_heads: self.n_heads,
            mlp_hidden_factors: self.mlp_hidden_factors.clone(),
            dropout: self.train.dropout,
            ..ModelConfig::new(vocab_sizes, n_continuous)
        }
    }

    /// The fully resolved configuration in the same `key = value` syntax.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let ft = &self.fine_tune;
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("writing to a String");
        kv(
            "data_files",
            join(&self.data_files.iter().map(|p| p.display()).collect::<Vec<_>>()),
        );
        if let Some(schema) = &self.schema {
            kv("schema", schema.display().to_string());
        }
        kv("output_dir", self.output_dir.display().to_string());
        kv("learning_rate", t.learning_rate.to_string());
        kv("weight_decay", t.weight_decay.to_string());
        kv("dropout_rate", t.dropout.to_string());
        kv("batch_size", t.batch_size.to_string());
        kv("number_of_epochs", t.epochs.to_string());
        kv("number_of_transformer_blocks", self.n_blocks.to_string());
        kv("number_of_attention_heads", self.n_heads.to_string());
        kv("embedding_dimensions", self.embedding_dim.to_string());
        kv(
            "mlp_hidden_units_factors",
            format!("[{}]", join(&self.mlp_hidden_factors)),
        );
        kv("beta_1", t.beta1.to_string());
        kv("beta_2", t.beta2.to_string());
        kv("epsilon", t.eps.to_string());
        kv("callback", t.callback_enabled.to_string());
        kv("patience", t.patience.to_string());
        kv("feature_selection", self.feature_selection.to_string());
        kv("force_include", join(&self.force_include));
        kv("selection_threshold", self.selection_threshold.to_string());
        kv("forest_trees", self.forest_trees.to_string());
        kv(
            "forest_max_depth",
            self.forest_max_depth.map_or("none".to_string(), |d| d.to_string()),
        );
        kv("selection_cap", self.selection_cap.to_string());
        kv("fraction", self.fraction.to_string());
        kv("seed", self.seed.to_string());
        kv("fine_tune_learning_rate", ft.learning_rate.to_string());
        kv("fine_tune_epochs", ft.epochs.to_string());
        kv("fine_tune_batch_size", ft.batch_size.to_string());
        kv("fine_tune_weight_decay", ft.weight_decay.to_string());
        kv("fine_tune_dropout_rate", ft.dropout.to_string());
        kv("fine_tune_callback", ft.callback_enabled.to_string());
        s
    }
}
