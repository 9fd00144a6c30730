//! Pipeline configuration: `key = value` lines plus command-line overrides.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::embed::{KgeConfig, KgeKind};
use crate::error::{Error, Result};
use crate::eval::EvalConfig;
use crate::model::TrainingConfig;
use crate::rules::Strategy;
use crate::weights::PretrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub dataset: String,
    pub kg: PathBuf,
    pub ratings: PathBuf,
    /// Optional `item<TAB>entity` file; items are their own entity labels
    /// otherwise.
    pub item_map: Option<PathBuf>,
    pub workspace: PathBuf,
    /// Shared content-addressed artifact store; `<workspace>/cache` if unset.
    pub cache: Option<PathBuf>,
    pub seed: u64,
    pub train_fraction: f64,
    pub max_rule_len: usize,
    /// `None` keeps every mined rule.
    pub num_rules: Option<usize>,
    pub mine_pair_cap: Option<usize>,
    pub strategy: Strategy,
    pub cwa_grounding_cap: usize,
    pub pretrain: bool,
    pub runs: usize,
    pub kge: KgeConfig,
    pub pretrain_cfg: PretrainConfig,
    pub train: TrainingConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            dataset: "custom".into(),
            kg: PathBuf::from("kg_final.txt"),
            ratings: PathBuf::from("ratings_final.txt"),
            item_map: None,
            workspace: PathBuf::from("workspace"),
            cache: None,
            seed: 0,
            train_fraction: 0.6,
            max_rule_len: 3,
            num_rules: Some(30),
            mine_pair_cap: None,
            strategy: Strategy::RotatE,
            cwa_grounding_cap: 1_000_000,
            pretrain: true,
            runs: 5,
            kge: KgeConfig::default(),
            pretrain_cfg: PretrainConfig::default(),
            train: TrainingConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("invalid value `{value}` for `{key}`"))),
    }
}

fn parse_limit(key: &str, value: &str) -> Result<Option<usize>> {
    if value == "all" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn limit_text(v: Option<usize>) -> String {
    v.map_or_else(|| "all".to_string(), |n| n.to_string())
}

/// Splits `key = value` text into pairs; `#` starts a comment.
pub fn parse_pairs(text: &str, origin: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("{origin}:{}: expected `key = value`", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl PipelineConfig {
    /// Configuration with the learning-rate and batch-size defaults of the
    /// named dataset.
    pub fn for_dataset(name: &str) -> Self {
        let mut cfg = PipelineConfig {
            dataset: name.to_string(),
            ..Default::default()
        };
        if name.eq_ignore_ascii_case("lastfm") {
            cfg.train.learning_rate = 0.05;
            cfg.train.batch_size = 128;
        }
        cfg
    }

    /// Builds a configuration from `key = value` pairs, later pairs winning.
    /// Relative paths are resolved against `base`.
    pub fn from_pairs(pairs: &[(String, String)], base: &Path) -> Result<Self> {
        let dataset = pairs
            .iter()
            .rev()
            .find(|(k, _)| k == "dataset")
            .map_or("custom", |(_, v)| v.as_str());
        let mut cfg = PipelineConfig::for_dataset(dataset);
        for (k, v) in pairs {
            cfg.set(k, v)?;
        }
        for p in [&mut cfg.kg, &mut cfg.ratings, &mut cfg.workspace] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        for p in [&mut cfg.item_map, &mut cfg.cache].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a configuration file and applies `overrides` on top.
    pub fn load(path: impl AsRef<Path>, overrides: &[(String, String)]) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read configuration {}: {e}", path.display())))?;
        let mut pairs = parse_pairs(&text, &path.display().to_string())?;
        pairs.extend_from_slice(overrides);
        let base = path.parent().unwrap_or(Path::new("."));
        PipelineConfig::from_pairs(&pairs, base)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "dataset" => self.dataset = v.to_string(),
            "kg" => self.kg = PathBuf::from(v),
            "ratings" => self.ratings = PathBuf::from(v),
            "item_map" => self.item_map = (!v.is_empty()).then(|| PathBuf::from(v)),
            "workspace" => self.workspace = PathBuf::from(v),
            "cache" => self.cache = (!v.is_empty()).then(|| PathBuf::from(v)),
            "seed" => self.seed = parse(key, v)?,
            "train_fraction" => self.train_fraction = parse(key, v)?,
            "max_rule_len" => self.max_rule_len = parse(key, v)?,
            "num_rules" => self.num_rules = parse_limit(key, v)?,
            "mine.pair_cap" => self.mine_pair_cap = parse_limit(key, v)?,
            "strategy" => {
                self.strategy = v.parse()?;
                if self.strategy == Strategy::None {
                    return Err(Error::Config("strategy must be cwa, rotate or transe".into()));
                }
            }
            "cwa.grounding_cap" => self.cwa_grounding_cap = parse(key, v)?,
            "pretrain" => self.pretrain = parse_bool(key, v)?,
            "runs" => self.runs = parse(key, v)?,
            "embed.dim" => self.kge.dim = parse(key, v)?,
            "embed.negatives" => self.kge.negatives = parse(key, v)?,
            "embed.margin" => self.kge.margin = parse(key, v)?,
            "embed.learning_rate" => self.kge.learning_rate = parse(key, v)?,
            "embed.steps" => self.kge.steps = parse(key, v)?,
            "embed.batch_size" => self.kge.batch_size = parse(key, v)?,
            "embed.temperature" => self.kge.adversarial_temperature = parse(key, v)?,
            "pretrain.learning_rate" => self.pretrain_cfg.learning_rate = parse(key, v)?,
            "pretrain.batch_size" => self.pretrain_cfg.batch_size = parse(key, v)?,
            "pretrain.lambda" => self.pretrain_cfg.lambda = parse(key, v)?,
            "pretrain.max_epochs" => self.pretrain_cfg.max_epochs = parse(key, v)?,
            "train.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "train.batch_size" => self.train.batch_size = parse(key, v)?,
            "train.mu" => self.train.mu = parse(key, v)?,
            "train.max_epochs" => self.train.max_epochs = parse(key, v)?,
            "train.patience" => self.train.patience = parse(key, v)?,
            "train.fanout" => self.train.fanout = parse(key, v)?,
            "train.dim" => self.train.dim = parse(key, v)?,
            "train.mask_target" => self.train.mask_target = parse_bool(key, v)?,
            "eval.repeats" => self.eval.repeats = parse(key, v)?,
            "eval.negatives" => self.eval.topk_negatives = parse(key, v)?,
            "eval.threshold" => self.eval.threshold = parse(key, v)?,
            "eval.ks" => {
                self.eval.ks = v
                    .split(',')
                    .map(|k| parse(key, k.trim()))
                    .collect::<Result<Vec<usize>>>()?
            }
            _ => return Err(Error::Config(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction <= 0.6) {
            return Err(Error::Config(format!(
                "train_fraction must lie in (0, 0.6], got {}",
                self.train_fraction
            )));
        }
        if !(2..=crate::model::MAX_DEPTH).contains(&self.max_rule_len) {
            return Err(Error::Config(format!(
                "max_rule_len must be between 2 and {}",
                crate::model::MAX_DEPTH
            )));
        }
        if self.num_rules == Some(0) || self.runs == 0 || self.eval.repeats == 0 {
            return Err(Error::Config("num_rules, runs and eval.repeats must be positive".into()));
        }
        if self.eval.ks.is_empty() || self.eval.ks.contains(&0) {
            return Err(Error::Config("eval.ks must list positive cut-offs".into()));
        }
        Ok(())
    }

    pub fn kge_kind(&self) -> Option<KgeKind> {
        match self.strategy {
            Strategy::RotatE => Some(KgeKind::RotatE),
            Strategy::TransE => Some(KgeKind::TransE),
            _ => None,
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache.clone().unwrap_or_else(|| self.workspace.join("cache"))
    }

    /// Every resolved setting as `key = value` lines, in a fixed order.
    pub fn entries(&self) -> BTreeMap<&'static str, String> {
        let mut m = BTreeMap::new();
        m.insert("dataset", self.dataset.clone());
        m.insert("kg", self.kg.display().to_string());
        m.insert("ratings", self.ratings.display().to_string());
        m.insert(
            "item_map",
            self.item_map.as_ref().map_or(String::new(), |p| p.display().to_string()),
        );
        m.insert("seed", self.seed.to_string());
        m.insert("train_fraction", self.train_fraction.to_string());
        m.insert("max_rule_len", self.max_rule_len.to_string());
        m.insert("num_rules", limit_text(self.num_rules));
        m.insert("mine.pair_cap", limit_text(self.mine_pair_cap));
        m.insert("strategy", self.strategy.to_string());
        m.insert("cwa.grounding_cap", self.cwa_grounding_cap.to_string());
        m.insert("pretrain", self.pretrain.to_string());
        m.insert("runs", self.runs.to_string());
        m.insert("embed.dim", self.kge.dim.to_string());
        m.insert("embed.negatives", self.kge.negatives.to_string());
        m.insert("embed.margin", self.kge.margin.to_string());
        m.insert("embed.learning_rate", self.kge.learning_rate.to_string());
        m.insert("embed.steps", self.kge.steps.to_string());
        m.insert("embed.batch_size", self.kge.batch_size.to_string());
        m.insert("embed.temperature", self.kge.adversarial_temperature.to_string());
        m.insert("pretrain.learning_rate", self.pretrain_cfg.learning_rate.to_string());
        m.insert("pretrain.batch_size", self.pretrain_cfg.batch_size.to_string());
        m.insert("pretrain.lambda", self.pretrain_cfg.lambda.to_string());
        m.insert("pretrain.max_epochs", self.pretrain_cfg.max_epochs.to_string());
        m.insert("train.learning_rate", self.train.learning_rate.to_string());
        m.insert("train.batch_size", self.train.batch_size.to_string());
        m.insert("train.mu", self.train.mu.to_string());
        m.insert("train.max_epochs", self.train.max_epochs.to_string());
        m.insert("train.patience", self.train.patience.to_string());
        m.insert("train.fanout", self.train.fanout.to_string());
        m.insert("train.dim", self.train.dim.to_string());
        m.insert("train.mask_target", self.train.mask_target.to_string());
        m.insert("eval.repeats", self.eval.repeats.to_string());
        m.insert("eval.negatives", self.eval.topk_negatives.to_string());
        m.insert("eval.threshold", self.eval.threshold.to_string());
        m.insert(
            "eval.ks",
            self.eval.ks.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        );
        m
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_and_overrides() {
        let pairs = parse_pairs("dataset = lastfm\nstrategy = cwa # comment\n\nnum_rules = all\n", "cfg").unwrap();
        let cfg = PipelineConfig::from_pairs(&pairs, Path::new("/data")).unwrap();
        assert_eq!(cfg.train.learning_rate, 0.05);
        assert_eq!(cfg.train.batch_size, 128);
        assert_eq!(cfg.strategy, Strategy::Cwa);
        assert_eq!(cfg.num_rules, None);
        assert_eq!(cfg.kg, PathBuf::from("/data/kg_final.txt"));

        let mut pairs = pairs;
        pairs.push(("train.learning_rate".into(), "0.01".into()));
        let cfg = PipelineConfig::from_pairs(&pairs, Path::new("/")).unwrap();
        assert_eq!(cfg.train.learning_rate, 0.01);

        let other = PipelineConfig::for_dataset("movielens");
        assert_eq!(other.train.learning_rate, 0.0005);
        assert_eq!(other.train.batch_size, 64);
    }

    #[test]
    fn rejects_bad_input() {
        let bad = |text: &str| PipelineConfig::from_pairs(&parse_pairs(text, "cfg").unwrap(), Path::new("."));
        assert!(matches!(bad("strategy = amie"), Err(Error::Config(_))));
        assert!(matches!(bad("strategy = none"), Err(Error::Config(_))));
        assert!(matches!(bad("colour = red"), Err(Error::Config(_))));
        assert!(matches!(bad("seed = -1"), Err(Error::Config(_))));
        assert!(matches!(bad("max_rule_len = 5"), Err(Error::Config(_))));
        assert!(matches!(bad("train_fraction = 0.7"), Err(Error::Config(_))));
        assert!(parse_pairs("no equals sign", "cfg").is_err());
    }

    #[test]
    fn text_round_trip() {
        let start = [("dataset".to_string(), "lastfm".to_string())];
        let cfg = PipelineConfig::from_pairs(&start, Path::new("/d")).unwrap();
        let pairs = parse_pairs(&cfg.to_text(), "cfg").unwrap();
        let back = PipelineConfig::from_pairs(&pairs, Path::new("/elsewhere")).unwrap();
        assert_eq!(back.to_text(), cfg.to_text());
    }
}
