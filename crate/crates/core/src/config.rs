//! Training hyperparameters and the `key = value` config file format.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which objective the trainer runs.
///
/// `Ev` trains all three embedding sets (word, context clue, subword).
/// `Sg` is the skipgram baseline (word vectors plus target vectors stored in
/// the clue slot). `Ft` is the subword-sum baseline (word and subword
/// vectors only).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Ev,
    Sg,
    Ft,
}

impl Mode {
    pub fn tag(self) -> u8 {
        match self {
            Mode::Ev => 0,
            Mode::Sg => 1,
            Mode::Ft => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Mode> {
        match tag {
            0 => Some(Mode::Ev),
            1 => Some(Mode::Sg),
            2 => Some(Mode::Ft),
            _ => None,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Mode::Ev => "ev",
            Mode::Sg => "sg",
            Mode::Ft => "ft",
        };
        f.write_str(s)
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s.to_ascii_lowercase().as_str() {
            "ev" => Ok(Mode::Ev),
            "sg" => Ok(Mode::Sg),
            "ft" => Ok(Mode::Ft),
            other => Err(Error::InvalidConfig(format!(
                "unknown mode '{other}' (expected ev, sg, or ft)"
            ))),
        }
    }
}

/// All training hyperparameters, with their standard defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    /// Embedding dimensionality.
    pub dim: usize,
    /// Minimum corpus frequency for a token to enter the vocabulary.
    pub min_count: u64,
    /// Rejection threshold for subsampling overly frequent words.
    pub subsample_threshold: f64,
    /// Maximum skipgram window radius; the per-target radius is drawn
    /// uniformly from 1..=max_window.
    pub max_window: usize,
    /// Fixed context-clue window radius (tokens before and after).
    pub clue_window: usize,
    /// Negative samples per pair.
    pub negatives: usize,
    /// Training epochs.
    pub epochs: usize,
    /// Initial learning rate.
    pub lr0: f64,
    /// Floor of the linearly decaying learning rate.
    pub lr_min: f64,
    /// Smallest character n-gram length.
    pub n_min: usize,
    /// Largest character n-gram length.
    pub n_max: usize,
    /// An n-gram is kept only if it occurs in at least this many distinct
    /// vocabulary words (whole-word tokens are exempt).
    pub min_gram_words: usize,
    /// Training objective.
    pub mode: Mode,
    /// Worker threads. Determinism is guaranteed only with workers = 1.
    pub workers: usize,
    /// RNG seed.
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            dim: 300,
            min_count: 100,
            subsample_threshold: 1e-4,
            max_window: 5,
            clue_window: 3,
            negatives: 5,
            epochs: 5,
            lr0: 0.025,
            lr_min: 0.0001,
            n_min: 3,
            n_max: 5,
            min_gram_words: 3,
            mode: Mode::Ev,
            workers: 1,
            seed: 1,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        fn require(cond: bool, msg: &str) -> Result<()> {
            if cond {
                Ok(())
            } else {
                Err(Error::InvalidConfig(msg.to_string()))
            }
        }
        require(self.dim >= 1, "dim must be >= 1")?;
        require(self.min_count >= 1, "min_count must be >= 1")?;
        require(
            self.subsample_threshold > 0.0,
            "subsample_threshold must be > 0",
        )?;
        require(self.max_window >= 1, "max_window must be >= 1")?;
        require(self.clue_window >= 1, "clue_window must be >= 1")?;
        require(self.negatives >= 1, "negatives must be >= 1")?;
        require(self.epochs >= 1, "epochs must be >= 1")?;
        require(self.lr0 > 0.0, "lr0 must be > 0")?;
        require(self.lr_min > 0.0, "lr_min must be > 0")?;
        require(self.lr_min <= self.lr0, "lr_min must be <= lr0")?;
        require(self.n_min >= 1, "n_min must be >= 1")?;
        require(self.n_min <= self.n_max, "n_min must be <= n_max")?;
        require(self.min_gram_words >= 1, "min_gram_words must be >= 1")?;
        require(self.workers >= 1, "workers must be >= 1")?;
        Ok(())
    }

    /// Render as `key = value` lines, one per field.
    pub fn to_kv_text(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("dim", self.dim.to_string());
        push("min_count", self.min_count.to_string());
        push("subsample_threshold", self.subsample_threshold.to_string());
        push("max_window", self.max_window.to_string());
        push("clue_window", self.clue_window.to_string());
        push("negatives", self.negatives.to_string());
        push("epochs", self.epochs.to_string());
        push("lr0", self.lr0.to_string());
        push("lr_min", self.lr_min.to_string());
        push("n_min", self.n_min.to_string());
        push("n_max", self.n_max.to_string());
        push("min_gram_words", self.min_gram_words.to_string());
        push("mode", self.mode.to_string());
        push("workers", self.workers.to_string());
        push("seed", self.seed.to_string());
        out
    }

    /// Parse `key = value` lines. `#` starts a comment; blank lines are
    /// ignored. Unset keys keep their defaults; unknown keys are an error.
    pub fn from_kv_text(text: &str) -> Result<TrainingConfig> {
        let mut config = TrainingConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(pos) => &raw[..pos],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(Error::ConfigParse {
                line: idx + 1,
                message: "expected 'key = value'".to_string(),
            })?;
            let key = key.trim();
            let value = value.trim();
            config.set_field(key, value).map_err(|e| Error::ConfigParse {
                line: idx + 1,
                message: e.to_string(),
            })?;
        }
        Ok(config)
    }

    pub fn set_field(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::InvalidConfig(format!("invalid value '{value}' for key '{key}'"))
            })
        }
        match key {
            "dim" => self.dim = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "subsample_threshold" => self.subsample_threshold = parse(key, value)?,
            "max_window" => self.max_window = parse(key, value)?,
            "clue_window" => self.clue_window = parse(key, value)?,
            "negatives" => self.negatives = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "lr0" => self.lr0 = parse(key, value)?,
            "lr_min" => self.lr_min = parse(key, value)?,
            "n_min" => self.n_min = parse(key, value)?,
            "n_max" => self.n_max = parse(key, value)?,
            "min_gram_words" => self.min_gram_words = parse(key, value)?,
            "mode" => self.mode = value.parse()?,
            "workers" => self.workers = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            other => {
                return Err(Error::InvalidConfig(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }
}
