//! Pipeline configuration read from `key=value` files with dotted sections.
//!
//! ```text
//! # comment
//! paths.train=data/train.conll
//! gen.hidden_size=64
//! tagger.dropout=0.1
//! augment.top_m=2
//! seeds=1,2,3,4,5
//! ```

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::seq2seq::GenConfig;
use crate::tagger::TaggerConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("unknown config key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {message}")]
    BadValue {
        key: String,
        value: String,
        message: String,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub vectors: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentOptions {
    /// Hypotheses kept per rank request.
    pub top_m: usize,
    /// Drop generations whose placeholders differ from the source frame.
    pub enforce_frame_match: bool,
    /// Re-realise training utterances instead of generating new ones.
    pub no_seq2seq: bool,
    pub no_ranks: bool,
    pub no_filter: bool,
    /// Share of translation pairs held out for generator dev perplexity.
    pub dev_fraction: f64,
    /// Seeds surface realisation and the generator dev split.
    pub seed: u64,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            top_m: 1,
            enforce_frame_match: false,
            no_seq2seq: false,
            no_ranks: false,
            no_filter: false,
            dev_fraction: 0.1,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub gen: GenConfig,
    pub tagger: TaggerConfig,
    pub augment: AugmentOptions,
    /// Tagger seeds; scores are averaged over them.
    pub seeds: Vec<u64>,
    /// Dropout rates tried per seed; the best dev F1 wins. Empty uses `tagger.dropout`.
    pub dropout_grid: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            gen: GenConfig::default(),
            tagger: TaggerConfig::default(),
            augment: AugmentOptions::default(),
            seeds: vec![1, 2, 3, 4, 5],
            dropout_grid: Vec::new(),
        }
    }
}

pub fn parse_seed_list(s: &str) -> Result<Vec<u64>, ConfigError> {
    parse_list(s).map_err(|message| ConfigError::BadValue {
        key: "seeds".into(),
        value: s.into(),
        message,
    })
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| format!("{p:?}: {e}")))
        .collect()
}

/// Interprets a raw value as a JSON scalar where possible, else as a string.
fn scalar(raw: &str) -> Value {
    match serde_json::from_str::<Value>(raw) {
        Ok(v @ (Value::Number(_) | Value::Bool(_) | Value::Null)) => v,
        _ => Value::String(raw.to_string()),
    }
}

fn set_field<T: Serialize + DeserializeOwned>(
    target: &mut T,
    section: &str,
    field: &str,
    raw: &str,
) -> Result<(), ConfigError> {
    let key = format!("{section}.{field}");
    let Value::Object(mut obj) = serde_json::to_value(&*target).expect("config serializes") else {
        unreachable!("config sections are structs")
    };
    if !obj.contains_key(field) {
        return Err(ConfigError::UnknownKey(key));
    }
    obj.insert(field.to_string(), scalar(raw));
    *target = serde_json::from_value(Value::Object(obj)).map_err(|e| ConfigError::BadValue {
        key,
        value: raw.into(),
        message: e.to_string(),
    })?;
    Ok(())
}

impl PipelineConfig {
    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<(), ConfigError> {
        let raw = raw.trim();
        match key.trim().split_once('.') {
            Some(("paths", f)) => set_field(&mut self.paths, "paths", f, raw),
            Some(("gen", f)) => set_field(&mut self.gen, "gen", f, raw),
            Some(("tagger", f)) => set_field(&mut self.tagger, "tagger", f, raw),
            Some(("augment", f)) => set_field(&mut self.augment, "augment", f, raw),
            None if key.trim() == "seeds" => {
                self.seeds = parse_seed_list(raw)?;
                Ok(())
            }
            None if key.trim() == "dropout_grid" => {
                self.dropout_grid = parse_list(raw).map_err(|message| ConfigError::BadValue {
                    key: key.into(),
                    value: raw.into(),
                    message,
                })?;
                Ok(())
            }
            _ => Err(ConfigError::UnknownKey(key.trim().into())),
        }
    }

    /// Applies an `key=value` assignment string.
    pub fn set_assignment(&mut self, assignment: &str) -> Result<(), ConfigError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| ConfigError::Invalid(format!("expected key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut config = PipelineConfig::default();
        config.apply(text)?;
        Ok(config)
    }

    /// Layers the settings in `text` over the current values.
    pub fn apply(&mut self, text: &str) -> Result<(), ConfigError> {
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
                line: idx + 1,
                message: format!("expected key=value, got {line:?}"),
            })?;
            self.set(k, v).map_err(|e| ConfigError::Syntax {
                line: idx + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text)
    }

    /// Effective tagger settings, with the vector path taken from `paths`.
    pub fn tagger_config(&self) -> TaggerConfig {
        let mut t = self.tagger.clone();
        if self.paths.vectors.is_some() {
            t.pretrained_vectors_path = self.paths.vectors.clone();
        }
        t
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seeds.is_empty() {
            return Err(ConfigError::Invalid("seed list is empty".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(ConfigError::Invalid("seeds must be distinct".into()));
        }
        if self.augment.top_m == 0 {
            return Err(ConfigError::Invalid("augment.top_m must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.augment.dev_fraction) {
            return Err(ConfigError::Invalid("augment.dev_fraction must lie in [0, 1)".into()));
        }
        if let Some(d) = self.dropout_grid.iter().find(|d| !(0.0..1.0).contains(*d)) {
            return Err(ConfigError::Invalid(format!("dropout {d} outside [0, 1)")));
        }
        self.gen.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.tagger
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(())
    }

    /// Renders every setting as `key=value` lines that [`PipelineConfig::parse`] accepts.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let sections: [(&str, Value); 4] = [
            ("paths", serde_json::to_value(&self.paths).expect("serializes")),
            ("gen", serde_json::to_value(&self.gen).expect("serializes")),
            ("tagger", serde_json::to_value(&self.tagger).expect("serializes")),
            ("augment", serde_json::to_value(&self.augment).expect("serializes")),
        ];
        for (name, value) in sections {
            let Value::Object(obj) = value else { continue };
            for (k, v) in obj {
                match v {
                    Value::String(s) => out.push_str(&format!("{name}.{k}={s}\n")),
                    other => out.push_str(&format!("{name}.{k}={other}\n")),
                }
            }
        }
        let join = |xs: Vec<String>| xs.join(",");
        out.push_str(&format!(
            "seeds={}\n",
            join(self.seeds.iter().map(u64::to_string).collect())
        ));
        out.push_str(&format!(
            "dropout_grid={}\n",
            join(self.dropout_grid.iter().map(f64::to_string).collect())
        ));
        out
    }
}
