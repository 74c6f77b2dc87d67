//! Flat key/value run configuration (TOML syntax, no tables).
//!
//! Keys are exactly the [`TrainConfig`] and [`SearchSpace`] field names.
//! Every value can also be given as text through [`RunConfig::set`], which is
//! how command-line flags override file values.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::train::{Rank, SearchSpace, TrainConfig};

pub const KEYS: &[&str] = &[
    "model_kind",
    "rank",
    "learning_rate",
    "dropout_rate",
    "batch_size",
    "max_epochs",
    "patience",
    "squared",
    "seed",
    "rank_choices",
    "lr_min",
    "lr_max",
    "dropout_min",
    "dropout_max",
    "trials",
];

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub search: SearchSpace,
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse '{value}'")))
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut config = RunConfig::default();
        config.merge_toml_str(text)?;
        Ok(config)
    }

    pub fn merge_toml_str(&mut self, text: &str) -> Result<()> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::config("<file>", e.message().to_string()))?;
        for (key, value) in &table {
            let text = match value {
                toml::Value::String(s) => s.clone(),
                toml::Value::Integer(i) => i.to_string(),
                toml::Value::Float(f) => f.to_string(),
                toml::Value::Boolean(b) => b.to_string(),
                toml::Value::Array(items) => {
                    let mut parts = Vec::with_capacity(items.len());
                    for item in items {
                        match item {
                            toml::Value::String(s) => parts.push(s.clone()),
                            toml::Value::Integer(i) => parts.push(i.to_string()),
                            _ => {
                                return Err(Error::config(
                                    key,
                                    "array items must be integers or strings",
                                ))
                            }
                        }
                    }
                    parts.join(",")
                }
                _ => return Err(Error::config(key, "nested values are not allowed")),
            };
            self.set(key, &text)?;
        }
        Ok(())
    }

    /// Sets one key from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        let s = &mut self.search;
        match key {
            "model_kind" => t.model_kind = value.trim().parse()?,
            "rank" => t.rank = value.parse()?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "dropout_rate" => t.dropout_rate = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "max_epochs" => t.max_epochs = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "squared" => {
                t.squared = match value.trim() {
                    "default" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "seed" => t.seed = parse(key, value)?,
            "rank_choices" => {
                s.rank_choices = value
                    .split(',')
                    .filter(|p| !p.trim().is_empty())
                    .map(|p| {
                        p.parse::<Rank>()
                            .map_err(|_| Error::config(key, format!("bad rank '{p}'")))
                    })
                    .collect::<Result<_>>()?
            }
            "lr_min" => s.lr_min = parse(key, value)?,
            "lr_max" => s.lr_max = parse(key, value)?,
            "dropout_min" => s.dropout_min = parse(key, value)?,
            "dropout_max" => s.dropout_max = parse(key, value)?,
            "trials" => s.trials = parse(key, value)?,
            other => return Err(Error::config(other, "unknown configuration key")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.search.validate()
    }

    /// All keys in canonical order, as a TOML document.
    pub fn to_toml(&self) -> String {
        let t = &self.train;
        let s = &self.search;
        let mut out = String::new();
        let _ = writeln!(out, "model_kind = \"{}\"", t.model_kind);
        match t.rank {
            Rank::Full => out.push_str("rank = \"full\"\n"),
            Rank::Fixed(r) => {
                let _ = writeln!(out, "rank = {r}");
            }
        }
        let _ = writeln!(out, "learning_rate = {:?}", t.learning_rate);
        let _ = writeln!(out, "dropout_rate = {:?}", t.dropout_rate);
        let _ = writeln!(out, "batch_size = {}", t.batch_size);
        let _ = writeln!(out, "max_epochs = {}", t.max_epochs);
        let _ = writeln!(out, "patience = {}", t.patience);
        match t.squared {
            Some(b) => {
                let _ = writeln!(out, "squared = {b}");
            }
            None => out.push_str("squared = \"default\"\n"),
        }
        let _ = writeln!(out, "seed = {}", t.seed);
        let ranks: Vec<String> = s
            .rank_choices
            .iter()
            .map(|r| match r {
                Rank::Full => "\"full\"".to_string(),
                Rank::Fixed(v) => v.to_string(),
            })
            .collect();
        let _ = writeln!(out, "rank_choices = [{}]", ranks.join(", "));
        let _ = writeln!(out, "lr_min = {:?}", s.lr_min);
        let _ = writeln!(out, "lr_max = {:?}", s.lr_max);
        let _ = writeln!(out, "dropout_min = {:?}", s.dropout_min);
        let _ = writeln!(out, "dropout_max = {:?}", s.dropout_max);
        let _ = writeln!(out, "trials = {}", s.trials);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::ModelKind;

    #[test]
    fn reads_flat_keys() {
        let text = r#"
model_kind = "perceptron"
rank = 16
learning_rate = 0.01
squared = true
rank_choices = [32, "full"]
trials = 4
"#;
        let c = RunConfig::from_toml_str(text).unwrap();
        assert_eq!(c.train.model_kind, ModelKind::Perceptron);
        assert_eq!(c.train.rank, Rank::Fixed(16));
        assert_eq!(c.train.learning_rate, 0.01);
        assert_eq!(c.train.squared, Some(true));
        assert_eq!(c.train.batch_size, 64);
        assert_eq!(c.search.rank_choices, vec![Rank::Fixed(32), Rank::Full]);
        assert_eq!(c.search.trials, 4);
    }

    #[test]
    fn errors_name_the_key() {
        match RunConfig::from_toml_str("learnig_rate = 0.1") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "learnig_rate"),
            other => panic!("unexpected {other:?}"),
        }
        match RunConfig::from_toml_str("batch_size = \"many\"") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "batch_size"),
            other => panic!("unexpected {other:?}"),
        }
        match RunConfig::from_toml_str("[section]\nx = 1") {
            Err(Error::Config { key, .. }) => assert_eq!(key, "section"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn flags_override_file_values() {
        let mut c = RunConfig::from_toml_str("learning_rate = 0.01\nseed = 3").unwrap();
        c.set("learning_rate", "0.5").unwrap();
        assert_eq!(c.train.learning_rate, 0.5);
        assert_eq!(c.train.seed, 3);
    }

    #[test]
    fn canonical_form_round_trips() {
        let mut c = RunConfig::default();
        c.set("rank", "24").unwrap();
        c.set("squared", "false").unwrap();
        c.set("lr_max", "0.02").unwrap();
        let again = RunConfig::from_toml_str(&c.to_toml()).unwrap();
        assert_eq!(again, c);
        let defaults = RunConfig::from_toml_str(&RunConfig::default().to_toml()).unwrap();
        assert_eq!(defaults, RunConfig::default());
        assert!(KEYS
            .iter()
            .all(|k| c.to_toml().contains(&format!("{k} = "))));
    }
}
