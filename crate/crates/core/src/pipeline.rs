//! Stage orchestration: each stage writes fixed-name artifacts into the
//! workspace plus a `<stage>.stamp` holding the hash of everything it was
//! computed from. Finished artifacts are also copied into a
//! content-addressed cache so that runs sharing a prefix of settings (for
//! example the settings of an ablation sweep) reuse them.

use std::cell::OnceCell;
use std::fmt::{self, Write as _};
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::info;
use sha2::{Digest, Sha256};

use crate::config::PipelineConfig;
use crate::dataset::{self, ctr_set, sample_ctr_negatives, DatasetSplit, InteractionSet, PositiveIndex};
use crate::embed::{self, EmbeddingModel, KgeConfig};
use crate::error::{Error, Result};
use crate::eval::{self, EvalConfig, EvalReport};
use crate::kg::{merge_interactions, AugmentedGraph, ItemMap, KnowledgeGraph};
use crate::model::{self, RgRecModel, TrainingConfig};
use crate::rules::{self, MiningConfig, RuleSet, Strategy};
use crate::seed;
use crate::weights::{self, PretrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Stage {
    Ingest,
    Mine,
    Embed,
    ScoreRules,
    Pretrain,
    Train,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Mine,
        Stage::Embed,
        Stage::ScoreRules,
        Stage::Pretrain,
        Stage::Train,
        Stage::Evaluate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Mine => "mine",
            Stage::Embed => "embed",
            Stage::ScoreRules => "score-rules",
            Stage::Pretrain => "pretrain",
            Stage::Train => "train",
            Stage::Evaluate => "evaluate",
        }
    }

    fn upstream(self, cfg: &PipelineConfig) -> Vec<Stage> {
        match self {
            Stage::Ingest => vec![],
            Stage::Mine | Stage::Embed => vec![Stage::Ingest],
            Stage::ScoreRules if cfg.kge_kind().is_some() => vec![Stage::Ingest, Stage::Mine, Stage::Embed],
            Stage::ScoreRules => vec![Stage::Ingest, Stage::Mine],
            Stage::Pretrain => vec![Stage::Ingest, Stage::ScoreRules],
            Stage::Train => vec![Stage::Ingest, Stage::ScoreRules, Stage::Pretrain],
            Stage::Evaluate => vec![Stage::Ingest, Stage::Train],
        }
    }

    fn outputs(self, cfg: &PipelineConfig) -> Vec<String> {
        match self {
            Stage::Ingest => ["train", "valid", "test"]
                .iter()
                .map(|p| format!("split.{p}.idx"))
                .collect(),
            Stage::Mine => vec![MINED.into()],
            Stage::Embed => vec![embedding_file(cfg)],
            Stage::ScoreRules => vec![RANKED.into()],
            Stage::Pretrain if cfg.pretrain => vec![WEIGHTS.into(), FEATURES.into()],
            Stage::Pretrain => vec![WEIGHTS.into()],
            Stage::Train => vec![MODEL.into()],
            Stage::Evaluate => vec![REPORT.into()],
        }
    }

    /// Configuration keys the stage's result depends on.
    fn settings(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &["seed", "train_fraction"],
            Stage::Mine => &["seed", "max_rule_len", "mine.pair_cap"],
            Stage::Embed => &["seed", "strategy", "embed."],
            Stage::ScoreRules => &["strategy", "num_rules", "cwa.grounding_cap"],
            Stage::Pretrain => &["seed", "pretrain"],
            Stage::Train => &["seed", "train."],
            Stage::Evaluate => &["seed", "eval."],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

const MINED: &str = "rules.mined.tsv";
const RANKED: &str = "rules.ranked.tsv";
const WEIGHTS: &str = "weights.tsv";
const FEATURES: &str = "features.bin";
const MODEL: &str = "model.bin";
const REPORT: &str = "report.txt";

fn embedding_file(cfg: &PipelineConfig) -> String {
    match cfg.kge_kind() {
        Some(k) => format!("embedding.{k}.bin"),
        None => "embedding.none.bin".into(),
    }
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn copy(from: &Path, to: &Path) -> Result<()> {
    fs::copy(from, to).map(|_| ()).map_err(|e| Error::io(from, e))
}

/// Reads the `item<TAB>entity` mapping file.
pub fn load_item_map(path: &Path) -> Result<ItemMap> {
    let text = read_text(path)?;
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        let [item, entity] = fields.as_slice() else {
            return Err(Error::parse(path, i + 1, "expected item and entity"));
        };
        pairs.push((item.to_string(), entity.to_string()));
    }
    Ok(ItemMap::from_pairs(pairs))
}

/// Knowledge graph, interactions and item map of a dataset directory in the
/// `kg_final.txt` / `ratings_final.txt` layout (or any configured paths).
pub struct Dataset {
    pub kg: KnowledgeGraph,
    pub data: InteractionSet,
    pub item_map: ItemMap,
}

impl Dataset {
    pub fn load(kg: &Path, ratings: &Path, item_map: Option<&Path>) -> Result<Self> {
        let item_map = match item_map {
            Some(p) => load_item_map(p)?,
            None => ItemMap::identity(),
        };
        Ok(Dataset {
            kg: KnowledgeGraph::from_file(kg)?,
            data: dataset::load_interactions(ratings)?,
            item_map,
        })
    }
}

struct SplitData {
    split: DatasetSplit,
    graph: AugmentedGraph,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Freshness {
    Fresh,
    Missing,
    Stale,
}

/// One configured pipeline over one workspace.
pub struct Pipeline {
    cfg: PipelineConfig,
    input_hash: OnceCell<String>,
    dataset: OnceCell<Dataset>,
    exclusion: OnceCell<PositiveIndex>,
    split: OnceCell<SplitData>,
}

impl Pipeline {
    pub fn new(cfg: PipelineConfig) -> Result<Self> {
        fs::create_dir_all(&cfg.workspace).map_err(|e| Error::io(&cfg.workspace, e))?;
        Ok(Pipeline {
            cfg,
            input_hash: OnceCell::new(),
            dataset: OnceCell::new(),
            exclusion: OnceCell::new(),
            split: OnceCell::new(),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.cfg.workspace.join(name)
    }

    fn stamp(&self, stage: Stage) -> PathBuf {
        self.path(&format!("{stage}.stamp"))
    }

    /// Digest of the raw input files.
    pub fn input_hash(&self) -> Result<&str> {
        if let Some(h) = self.input_hash.get() {
            return Ok(h);
        }
        let mut h = Sha256::new();
        let mut files = vec![&self.cfg.kg, &self.cfg.ratings];
        files.extend(&self.cfg.item_map);
        for f in files {
            h.update(sha256_file(f)?.as_bytes());
        }
        Ok(self.input_hash.get_or_init(|| hex::encode(h.finalize())))
    }

    /// Hash identifying the artifacts of `stage` under the current inputs
    /// and configuration.
    pub fn key(&self, stage: Stage) -> Result<String> {
        let mut h = Sha256::new();
        h.update(b"rgrec-artifacts-1\n");
        h.update(stage.name().as_bytes());
        for (k, v) in self.cfg.entries() {
            if stage.settings().iter().any(|s| k == *s || (s.ends_with('.') && k.starts_with(s))) {
                h.update(format!("\n{k}={v}").as_bytes());
            }
        }
        if stage == Stage::Ingest {
            h.update(self.input_hash()?.as_bytes());
        }
        for up in stage.upstream(&self.cfg) {
            h.update(self.key(up)?.as_bytes());
        }
        Ok(hex::encode(h.finalize()))
    }

    pub fn freshness(&self, stage: Stage) -> Result<Freshness> {
        let outputs_present = stage.outputs(&self.cfg).iter().all(|o| self.path(o).is_file());
        let stamp = self.stamp(stage);
        if !outputs_present || !stamp.is_file() {
            return Ok(Freshness::Missing);
        }
        if read_text(&stamp)?.trim() == self.key(stage)? {
            Ok(Freshness::Fresh)
        } else {
            Ok(Freshness::Stale)
        }
    }

    /// Brings `stage` up to date. With `deps`, out-of-date upstream stages
    /// are recomputed first; without, they must already be fresh.
    pub fn run(&self, stage: Stage, deps: bool) -> Result<()> {
        if stage == Stage::Embed && self.cfg.kge_kind().is_none() {
            return Err(Error::Config("the embed stage needs strategy rotate or transe".into()));
        }
        if self.freshness(stage)? == Freshness::Fresh {
            info!("{stage}: up to date");
            return Ok(());
        }
        for up in stage.upstream(&self.cfg) {
            if deps {
                self.run(up, true)?;
                continue;
            }
            match self.freshness(up)? {
                Freshness::Fresh => {}
                Freshness::Missing => {
                    return Err(Error::MissingArtifact(format!(
                        "stage `{up}` has no output in {}; run it first or drop --no-deps",
                        self.cfg.workspace.display()
                    )))
                }
                Freshness::Stale => {
                    return Err(Error::StaleArtifact(format!(
                        "the output of stage `{up}` was built from other inputs or settings; rerun it or drop --no-deps"
                    )))
                }
            }
        }
        let key = self.key(stage)?;
        let stamp = self.stamp(stage);
        if stamp.exists() {
            fs::remove_file(&stamp).map_err(|e| Error::io(&stamp, e))?;
        }
        if !self.restore(stage, &key)? {
            info!("{stage}: computing");
            self.compute(stage)?;
            self.store(stage, &key)?;
        }
        write_text(&stamp, &format!("{key}\n"))
    }

    fn cache_entry(&self, stage: Stage, key: &str) -> PathBuf {
        self.cfg.cache_dir().join(format!("{stage}-{key}"))
    }

    fn restore(&self, stage: Stage, key: &str) -> Result<bool> {
        let dir = self.cache_entry(stage, key);
        let outputs = stage.outputs(&self.cfg);
        if !outputs.iter().all(|o| dir.join(o).is_file()) {
            return Ok(false);
        }
        for o in &outputs {
            copy(&dir.join(o), &self.path(o))?;
        }
        info!("{stage}: restored from cache");
        Ok(true)
    }

    fn store(&self, stage: Stage, key: &str) -> Result<()> {
        let dir = self.cache_entry(stage, key);
        let tmp = dir.with_extension("partial");
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        for o in stage.outputs(&self.cfg) {
            copy(&self.path(&o), &tmp.join(&o))?;
        }
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::rename(&tmp, &dir).map_err(|e| Error::io(&dir, e))
    }

    fn dataset(&self) -> Result<&Dataset> {
        if let Some(d) = self.dataset.get() {
            return Ok(d);
        }
        let d = Dataset::load(&self.cfg.kg, &self.cfg.ratings, self.cfg.item_map.as_deref())?;
        info!(
            "loaded {} triples over {} entities and {} interactions",
            d.kg.triples().len() / 2,
            d.kg.num_entities(),
            d.data.len()
        );
        Ok(self.dataset.get_or_init(|| d))
    }

    fn exclusion(&self) -> Result<&PositiveIndex> {
        if let Some(x) = self.exclusion.get() {
            return Ok(x);
        }
        let x = PositiveIndex::new(&self.dataset()?.data);
        Ok(self.exclusion.get_or_init(|| x))
    }

    fn split_data(&self) -> Result<&SplitData> {
        if let Some(s) = self.split.get() {
            return Ok(s);
        }
        let d = self.dataset()?;
        let split = DatasetSplit::read_manifest(&d.data, &self.cfg.workspace)?;
        let graph = merge_interactions(&d.kg, &split.train, &d.item_map)?;
        Ok(self.split.get_or_init(|| SplitData { split, graph }))
    }

    fn sub_seed(&self, name: &str) -> u64 {
        seed::derive(self.cfg.seed, &[seed::tag(name)])
    }

    fn compute(&self, stage: Stage) -> Result<()> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Mine => self.mine(),
            Stage::Embed => self.embed(),
            Stage::ScoreRules => self.score_rules(),
            Stage::Pretrain => self.pretrain(),
            Stage::Train => self.train(),
            Stage::Evaluate => self.evaluate().map(|_| ()),
        }
    }

    fn ingest(&self) -> Result<()> {
        let d = self.dataset()?;
        let split = dataset::split_with_train_fraction(&d.data, self.sub_seed("split"), self.cfg.train_fraction);
        info!(
            "split into {} train, {} validation and {} test records",
            split.train.len(),
            split.valid.len(),
            split.test.len()
        );
        split.write_manifest(&self.cfg.workspace)
    }

    fn mine(&self) -> Result<()> {
        let s = self.split_data()?;
        let rules = rules::mine_rules(
            &s.graph,
            &MiningConfig {
                max_len: self.cfg.max_rule_len,
                pair_cap: self.cfg.mine_pair_cap,
                seed: self.sub_seed("mine"),
            },
        )?;
        info!("mined {} rules, lengths {:?}", rules.len(), rules.length_histogram());
        rules.write(self.path(MINED), s.graph.graph())
    }

    fn embed(&self) -> Result<()> {
        let s = self.split_data()?;
        let kind = self.cfg.kge_kind().expect("checked by run");
        let cfg = KgeConfig {
            kind,
            seed: self.sub_seed("embed"),
            ..self.cfg.kge.clone()
        };
        let (model, report) = embed::train_embeddings(s.graph.graph(), &cfg)?;
        info!(
            "{kind}: loss {:.4} over the first tenth of steps, {:.4} over the last",
            report.first_tenth_mean(),
            report.last_tenth_mean()
        );
        model.save(self.path(&embedding_file(&self.cfg)))
    }

    fn score_rules(&self) -> Result<()> {
        let s = self.split_data()?;
        let g = s.graph.graph();
        let mined = RuleSet::read(self.path(MINED), g)?;
        let scored = match self.cfg.strategy {
            Strategy::Cwa => rules::score_cwa(&s.graph, &mined, self.cfg.cwa_grounding_cap),
            _ => {
                let emb = EmbeddingModel::load(self.path(&embedding_file(&self.cfg)))?;
                embed::score_rules(&emb, s.graph.interacts(), &mined)
            }
        };
        let ranked = rules::rank_rules(scored, self.cfg.num_rules.unwrap_or(usize::MAX));
        if ranked.is_empty() {
            return Err(Error::Data("no rule could be scored; the mined rule set is empty".into()));
        }
        info!("kept {} of {} rules", ranked.len(), mined.len());
        ranked.write(self.path(RANKED), g)
    }

    fn ranked_rules(&self) -> Result<RuleSet> {
        RuleSet::read(self.path(RANKED), self.split_data()?.graph.graph())
    }

    fn pretrain(&self) -> Result<()> {
        if !self.cfg.pretrain {
            return write_text(&self.path(WEIGHTS), "# pretrain off\n");
        }
        let s = self.split_data()?;
        let rules = self.ranked_rules()?;
        let positives = s.split.train.with_records(s.split.train.positives().copied().collect());
        let pairs = sample_ctr_negatives(&positives, self.exclusion()?, self.sub_seed("pretrain-pairs"));
        let features = weights::extract_features(&s.graph, pairs.records(), &rules);
        features.save(self.path(FEATURES))?;
        let w = weights::pretrain_weights(
            &features,
            &PretrainConfig {
                seed: self.sub_seed("pretrain"),
                ..self.cfg.pretrain_cfg.clone()
            },
        )?;
        info!("pre-trained rule weights: loss {:.6} after {} epochs", w.final_loss, w.epochs);
        let mut text = format!("# pretrain on\n# epochs {}\n# loss {}\n", w.epochs, w.final_loss);
        for v in &w.w {
            let _ = writeln!(text, "{v}");
        }
        write_text(&self.path(WEIGHTS), &text)
    }

    fn read_weights(&self, expected: usize) -> Result<Option<Vec<f64>>> {
        let path = self.path(WEIGHTS);
        let text = read_text(&path)?;
        if text.starts_with("# pretrain off") {
            return Ok(None);
        }
        let w = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty())
            .map(|(i, l)| {
                l.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::parse(&path, i + 1, "expected a weight"))
            })
            .collect::<Result<Vec<_>>>()?;
        if w.len() != expected {
            return Err(Error::corrupt(&path, format!("{} weights for {expected} rules", w.len())));
        }
        Ok(Some(w))
    }

    fn train(&self) -> Result<()> {
        let s = self.split_data()?;
        let rules = self.ranked_rules()?;
        let w = self.read_weights(rules.len())?;
        let exclusion = self.exclusion()?;
        let train = ctr_set(&s.split.train, exclusion, self.sub_seed("train-pairs"));
        let valid = ctr_set(&s.split.valid, exclusion, self.sub_seed("valid-pairs"));
        let cfg = TrainingConfig {
            seed: self.sub_seed("train"),
            ..self.cfg.train.clone()
        };
        let (model, report) = model::train(&s.graph, &rules, w.as_deref(), train.records(), valid.records(), &cfg)?;
        info!(
            "trained {} epochs, best epoch {}, train loss {:.4} -> {:.4}",
            report.epoch_losses.len(),
            report.best_epoch,
            report.initial_loss,
            report.final_loss
        );
        model.save(self.path(MODEL))
    }

    fn evaluate(&self) -> Result<EvalReport> {
        let s = self.split_data()?;
        let model = RgRecModel::load(self.path(MODEL))?;
        let cfg = EvalConfig {
            seed: self.sub_seed("evaluate"),
            ..self.cfg.eval.clone()
        };
        let report = eval::evaluate(&model, &s.graph, &s.split.test, self.exclusion()?, &cfg)?;
        let mut text = String::from("# rgrec evaluation report\n");
        let _ = writeln!(text, "# inputs {}", self.input_hash()?);
        for st in [Stage::Ingest, Stage::Mine, Stage::ScoreRules, Stage::Pretrain, Stage::Train] {
            let _ = writeln!(text, "# stage {st} {}", self.key(st)?);
        }
        for line in self.cfg.to_text().lines() {
            let _ = writeln!(text, "# config {line}");
        }
        for m in &report.metrics {
            let values: Vec<String> = m.values.iter().map(f64::to_string).collect();
            let _ = writeln!(text, "# values {} {}", m.name, values.join(","));
        }
        text.push('\n');
        text.push_str(&report.table());
        text.push('\n');
        text.push_str(&report.machine());
        write_text(&self.path(REPORT), &text)?;
        Ok(report)
    }

    /// Metric values recorded in the workspace's report.
    pub fn read_report(&self) -> Result<EvalReport> {
        parse_report(&read_text(&self.path(REPORT))?)
    }
}

/// Recovers the per-repeat values from a report file.
pub fn parse_report(text: &str) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for line in text.lines() {
        let Some(rest) = line.strip_prefix("# values ") else {
            continue;
        };
        let (name, values) = rest
            .split_once(' ')
            .ok_or_else(|| Error::Data(format!("malformed report line `{line}`")))?;
        let values = values
            .split(',')
            .map(|v| v.parse::<f64>().map_err(|_| Error::Data(format!("malformed value `{v}`"))))
            .collect::<Result<Vec<_>>>()?;
        report.metrics.push(eval::MetricSummary {
            name: name.to_string(),
            values,
        });
    }
    Ok(report)
}

/// Runs every stage needed for the evaluation report and returns it.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<EvalReport> {
    let p = Pipeline::new(cfg.clone())?;
    p.run(Stage::Evaluate, true)?;
    p.read_report()
}

/// Configuration of repeat `run` of a multi-run experiment: its own seed
/// (so the split, negatives and initialization are redrawn) and workspace,
/// sharing the parent's cache.
pub fn run_config(cfg: &PipelineConfig, run: usize) -> PipelineConfig {
    PipelineConfig {
        seed: seed::derive(cfg.seed, &[seed::tag("run"), run as u64]),
        workspace: cfg.workspace.join(format!("run-{run}")),
        cache: Some(cfg.cache_dir()),
        ..cfg.clone()
    }
}

/// Repeats the whole pipeline `cfg.runs` times; each metric value of the
/// result is one run's mean over its evaluation repeats.
pub fn run_repeated(cfg: &PipelineConfig) -> Result<EvalReport> {
    let mut out = EvalReport::default();
    for r in 0..cfg.runs {
        info!("run {} of {}", r + 1, cfg.runs);
        let report = run_pipeline(&run_config(cfg, r))?;
        let means = EvalReport {
            metrics: report
                .metrics
                .iter()
                .map(|m| eval::MetricSummary {
                    name: m.name.clone(),
                    values: vec![m.mean()],
                })
                .collect(),
        };
        out.merge(&means);
    }
    let mut text = format!("# {} runs\n", cfg.runs);
    for line in cfg.to_text().lines() {
        let _ = writeln!(text, "# config {line}");
    }
    text.push_str(&out.table());
    text.push('\n');
    text.push_str(&out.machine());
    write_text(&cfg.workspace.join("runs.txt"), &text)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Ablation {
    RuleLength,
    RuleCount,
    FilterStrategy,
    NoPretrain,
    ColdStart,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::RuleLength,
        Ablation::RuleCount,
        Ablation::FilterStrategy,
        Ablation::NoPretrain,
        Ablation::ColdStart,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::RuleLength => "rule-length",
            Ablation::RuleCount => "rule-count",
            Ablation::FilterStrategy => "filter-strategy",
            Ablation::NoPretrain => "no-pretrain",
            Ablation::ColdStart => "cold-start",
        }
    }

    /// The swept settings, labelled.
    pub fn settings(self, cfg: &PipelineConfig) -> Vec<(String, PipelineConfig)> {
        let with = |label: String, f: &dyn Fn(&mut PipelineConfig)| {
            let mut c = cfg.clone();
            f(&mut c);
            c.workspace = cfg.workspace.join("ablation").join(self.name()).join(&label);
            c.cache = Some(cfg.cache_dir());
            (label, c)
        };
        match self {
            Ablation::RuleLength => [2, 3, 4]
                .into_iter()
                .map(|i| with(format!("I={i}"), &|c| c.max_rule_len = i))
                .collect(),
            Ablation::RuleCount => [Some(10), Some(30), Some(50), None]
                .into_iter()
                .map(|l| {
                    let label = l.map_or("L=all".to_string(), |l| format!("L={l}"));
                    with(label, &|c| c.num_rules = l)
                })
                .collect(),
            Ablation::FilterStrategy => [Strategy::RotatE, Strategy::TransE, Strategy::Cwa]
                .into_iter()
                .map(|s| with(s.to_string(), &|c| c.strategy = s))
                .collect(),
            Ablation::NoPretrain => [true, false]
                .into_iter()
                .map(|p| {
                    let label = if p { "pretrain" } else { "no-pretrain" };
                    with(label.to_string(), &|c| c.pretrain = p)
                })
                .collect(),
            Ablation::ColdStart => [0.2, 0.4, 0.6]
                .into_iter()
                .map(|f| with(format!("train={f}"), &|c| c.train_fraction = f))
                .collect(),
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub mode: Ablation,
    pub rows: Vec<(String, EvalReport)>,
}

impl AblationReport {
    pub fn table(&self) -> String {
        let names: Vec<&str> = self
            .rows
            .first()
            .map(|(_, r)| r.metrics.iter().map(|m| m.name.as_str()).collect())
            .unwrap_or_default();
        let mut s = format!("{:<16}", self.mode.name());
        for n in &names {
            let _ = write!(s, " {n:>17}");
        }
        s.push('\n');
        for (label, r) in &self.rows {
            let _ = write!(s, "{label:<16}");
            for n in &names {
                let m = r.get(n).expect("same metrics in every row");
                let _ = write!(s, " {:>8.4} ± {:<6.4}", m.mean(), m.std());
            }
            s.push('\n');
        }
        s
    }
}

/// Runs the repeated pipeline for every setting of the sweep and writes
/// `ablation-<mode>.txt` into the workspace.
pub fn run_ablation(cfg: &PipelineConfig, mode: Ablation) -> Result<AblationReport> {
    let mut rows = Vec::new();
    for (label, c) in mode.settings(cfg) {
        info!("{mode}: {label}");
        rows.push((label, run_repeated(&c)?));
    }
    let report = AblationReport { mode, rows };
    fs::create_dir_all(&cfg.workspace).map_err(|e| Error::io(&cfg.workspace, e))?;
    write_text(&cfg.workspace.join(format!("ablation-{mode}.txt")), &report.table())?;
    Ok(report)
}
