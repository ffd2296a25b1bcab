//! End-to-end inference, stage training and the interactive session.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    load_dialogs, load_knowledge, load_labels, Dialog, EntityKey, KnowledgeBase, SnippetRef, Split, Turn,
};
use crate::detector::{ensemble_detect, train_detector_ensemble, DetectorEnsemble, Vote, DEFAULT_THRESHOLD};
use crate::entity_filter::{build_filter, match_entities, CandidateSet, EntityPatterns, FilterConfig};
use crate::error::{Error, Result};
use crate::generator::{build_gen_input, greedy_decode, train_generator, GeneratorConfig, Seq2SeqParams};
use crate::metrics::PredictionRecord;
use crate::neural::{checkpoint, EncoderParams, FocalConfig, TrainConfig, TripletConfig};
use crate::selector::{
    build_embedding_index, rank_by_embedding, train_embedding_encoder, train_ranker_ensemble, two_stage_select,
    Aggregation, Candidates, EmbeddingIndex, MiningLog, RankedList, RankerEnsemble, Stage, TOP_K,
};

/// How knowledge is selected for a detected turn.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SelectionMode {
    /// Entity ranking over filtered candidates, then snippet ranking within the top entity.
    #[default]
    TwoStage,
    /// The knowledge ranker over every snippet.
    AllCandidates,
    /// Nearest snippets under the triplet-trained encoder.
    Embedding,
}

impl SelectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SelectionMode::TwoStage => "two-stage",
            SelectionMode::AllCandidates => "all-candidates",
            SelectionMode::Embedding => "embedding",
        }
    }
}

impl fmt::Display for SelectionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SelectionMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "two-stage" => Ok(SelectionMode::TwoStage),
            "all-candidates" => Ok(SelectionMode::AllCandidates),
            "embedding" => Ok(SelectionMode::Embedding),
            other => Err(format!(
                "unknown mode `{other}` (expected two-stage, all-candidates or embedding)"
            )),
        }
    }
}

/// Everything a run needs. Relative paths are resolved against `data_dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data_dir: PathBuf,
    /// Directory holding the training `logs.json` and `labels.json`.
    pub train_dir: PathBuf,
    /// Directory holding the validation `logs.json` and `labels.json`.
    pub valid_dir: PathBuf,
    pub knowledge: PathBuf,
    /// Dialogs to run inference on.
    pub logs: PathBuf,
    pub model_dir: PathBuf,
    pub filter: FilterConfig,
    pub training: TrainConfig,
    pub focal: FocalConfig,
    pub triplet: TripletConfig,
    pub generator: GeneratorConfig,
    pub threshold: f64,
    pub ensemble_size: usize,
    pub vote: Vote,
    pub aggregation: Aggregation,
    pub mode: SelectionMode,
    /// `false` ranks every entity instead of the filtered candidates.
    pub entity_filter: bool,
    pub top_k: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            data_dir: PathBuf::from("."),
            train_dir: PathBuf::from("train"),
            valid_dir: PathBuf::from("val"),
            knowledge: PathBuf::from("knowledge.json"),
            logs: PathBuf::from("test/logs.json"),
            model_dir: PathBuf::from("models"),
            filter: FilterConfig::default(),
            training: TrainConfig::default(),
            focal: FocalConfig::default(),
            triplet: TripletConfig::default(),
            generator: GeneratorConfig::default(),
            threshold: DEFAULT_THRESHOLD,
            ensemble_size: 5,
            vote: Vote::default(),
            aggregation: Aggregation::default(),
            mode: SelectionMode::default(),
            entity_filter: true,
            top_k: TOP_K,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str, file: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            file: file.to_string(),
            reason: e.to_string(),
        })
    }

    /// Reads a config file; a relative `data_dir` is taken relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::from_json(&text, &path.display().to_string())?;
        if cfg.data_dir.is_relative() {
            let base = path.parent().unwrap_or(Path::new(""));
            cfg.data_dir = base.join(&cfg.data_dir);
        }
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.data_dir.join(p)
        }
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.training.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::invalid("threshold", "must lie in (0, 1)"));
        }
        if self.ensemble_size == 0 || self.ensemble_size.is_multiple_of(2) {
            return Err(Error::invalid("ensemble-size", "must be odd and positive"));
        }
        if self.top_k == 0 {
            return Err(Error::invalid("top-k", "must be at least 1"));
        }
        if self.generator.max_len == 0 {
            return Err(Error::invalid("max-len", "must be positive"));
        }
        self.filter.validate()?;
        self.train_config().validate()?;
        self.focal.validate()?;
        self.triplet.validate()
    }

    pub fn load_knowledge(&self) -> Result<KnowledgeBase> {
        load_knowledge(&self.resolve(&self.knowledge))
    }

    pub fn load_split(&self, dir: &Path) -> Result<Split> {
        let dir = self.resolve(dir);
        let dialogs = load_dialogs(&dir.join("logs.json"))?;
        let labels = load_labels(&dir.join("labels.json"))?;
        Split::new(dialogs, labels)
    }
}

/// A trained model component and its checkpoint file.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Component {
    Detector,
    EntityFilter,
    EntityRanker,
    KnowledgeRanker,
    Embedding,
    Generator,
}

impl Component {
    pub fn name(self) -> &'static str {
        match self {
            Component::Detector => "detector",
            Component::EntityFilter => "entity-filter",
            Component::EntityRanker => "entity-ranker",
            Component::KnowledgeRanker => "knowledge-ranker",
            Component::Embedding => "embedding",
            Component::Generator => "generator",
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            Component::Detector => "detector.json",
            Component::EntityFilter => "entity_filter.json",
            Component::EntityRanker => "entity_ranker.json",
            Component::KnowledgeRanker => "knowledge_ranker.json",
            Component::Embedding => "embedding.json",
            Component::Generator => "generator.json",
        }
    }

    pub fn path(self, model_dir: &Path) -> PathBuf {
        model_dir.join(self.file_name())
    }

    /// Components that inference needs under `cfg`.
    pub fn required(cfg: &PipelineConfig) -> Vec<Component> {
        let mut out = vec![Component::Detector];
        out.extend(Self::selection(cfg));
        out.push(Component::Generator);
        out
    }

    /// Components that knowledge selection needs under `cfg`.
    pub fn selection(cfg: &PipelineConfig) -> Vec<Component> {
        let mut out = Vec::new();
        match cfg.mode {
            SelectionMode::TwoStage => {
                if cfg.entity_filter {
                    out.push(Component::EntityFilter);
                }
                out.extend([Component::EntityRanker, Component::KnowledgeRanker]);
            }
            SelectionMode::AllCandidates => out.push(Component::KnowledgeRanker),
            SelectionMode::Embedding => out.push(Component::Embedding),
        }
        out
    }
}

pub fn save_component<T: Serialize>(model_dir: &Path, c: Component, payload: &T) -> Result<()> {
    checkpoint::save(&c.path(model_dir), c.name(), payload)
}

/// Loads a checkpoint; a missing file is reported with the stage it belongs to.
pub fn load_component<T: serde::de::DeserializeOwned>(model_dir: &Path, c: Component) -> Result<T> {
    let path = c.path(model_dir);
    if !path.exists() {
        return Err(Error::MissingCheckpoint { stage: c.name(), path });
    }
    checkpoint::load(&path, c.name())
}

/// Trained components; the ones a mode does not use may be absent.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelBundle {
    pub detector: Option<DetectorEnsemble<f64>>,
    pub filter: Option<EntityPatterns>,
    pub entity_ranker: Option<RankerEnsemble<f64>>,
    pub knowledge_ranker: Option<RankerEnsemble<f64>>,
    pub embedding: Option<EncoderParams<f64>>,
    pub generator: Option<Seq2SeqParams<f64>>,
}

impl ModelBundle {
    /// Loads what `cfg` requires and applies its vote and aggregation settings.
    pub fn load(model_dir: &Path, cfg: &PipelineConfig) -> Result<Self> {
        Self::load_components(model_dir, cfg, &Component::required(cfg))
    }

    pub fn load_components(model_dir: &Path, cfg: &PipelineConfig, components: &[Component]) -> Result<Self> {
        let mut bundle = ModelBundle::default();
        for &c in components {
            match c {
                Component::Detector => {
                    let mut d: DetectorEnsemble<f64> = load_component(model_dir, c)?;
                    d.vote = cfg.vote;
                    bundle.detector = Some(d);
                }
                Component::EntityFilter => bundle.filter = Some(load_component(model_dir, c)?),
                Component::EntityRanker => {
                    let mut r: RankerEnsemble<f64> = load_component(model_dir, c)?;
                    r.aggregation = cfg.aggregation;
                    bundle.entity_ranker = Some(r);
                }
                Component::KnowledgeRanker => {
                    let mut r: RankerEnsemble<f64> = load_component(model_dir, c)?;
                    r.aggregation = cfg.aggregation;
                    bundle.knowledge_ranker = Some(r);
                }
                Component::Embedding => bundle.embedding = Some(load_component(model_dir, c)?),
                Component::Generator => bundle.generator = Some(load_component(model_dir, c)?),
            }
        }
        Ok(bundle)
    }

    /// Writes every present component.
    pub fn save(&self, model_dir: &Path) -> Result<()> {
        if let Some(d) = &self.detector {
            save_component(model_dir, Component::Detector, d)?;
        }
        if let Some(f) = &self.filter {
            save_component(model_dir, Component::EntityFilter, f)?;
        }
        if let Some(r) = &self.entity_ranker {
            save_component(model_dir, Component::EntityRanker, r)?;
        }
        if let Some(r) = &self.knowledge_ranker {
            save_component(model_dir, Component::KnowledgeRanker, r)?;
        }
        if let Some(e) = &self.embedding {
            save_component(model_dir, Component::Embedding, e)?;
        }
        if let Some(g) = &self.generator {
            save_component(model_dir, Component::Generator, g)?;
        }
        Ok(())
    }
}

pub fn train_detector_stage(cfg: &PipelineConfig, train: &Split, valid: &Split) -> Result<DetectorEnsemble<f64>> {
    let (ens, _) = train_detector_ensemble(
        train,
        valid,
        &cfg.train_config(),
        &cfg.focal,
        cfg.ensemble_size,
        cfg.threshold,
        cfg.vote,
    )?;
    Ok(ens)
}

pub fn build_filter_stage(cfg: &PipelineConfig, train: &Split, kb: &KnowledgeBase) -> Result<EntityPatterns> {
    build_filter(kb, &train.dialogs, &cfg.filter)
}

pub fn train_ranker_stage(
    cfg: &PipelineConfig,
    stage: Stage,
    train: &Split,
    valid: &Split,
    kb: &KnowledgeBase,
    filter: Option<&EntityPatterns>,
) -> Result<RankerEnsemble<f64>> {
    let candidates = match filter {
        Some(p) if cfg.entity_filter => Candidates::Filtered(p),
        _ => Candidates::All,
    };
    let (mut ens, _) = train_ranker_ensemble(
        train,
        valid,
        kb,
        stage,
        candidates,
        &cfg.train_config(),
        &cfg.focal,
        cfg.ensemble_size,
    )?;
    ens.aggregation = cfg.aggregation;
    Ok(ens)
}

pub fn train_embedding_stage(
    cfg: &PipelineConfig,
    train: &Split,
    valid: &Split,
    kb: &KnowledgeBase,
) -> Result<(EncoderParams<f64>, MiningLog)> {
    let (enc, _, log) = train_embedding_encoder(train, valid, kb, &cfg.train_config(), &cfg.triplet)?;
    Ok((enc, log))
}

pub fn train_generator_stage(
    cfg: &PipelineConfig,
    train: &Split,
    valid: &Split,
    kb: &KnowledgeBase,
) -> Result<Seq2SeqParams<f64>> {
    let (params, _) = train_generator(train, valid, kb, &cfg.train_config(), &cfg.generator)?;
    Ok(params)
}

/// Trains every component `cfg` needs for inference.
pub fn train_bundle(cfg: &PipelineConfig, train: &Split, valid: &Split, kb: &KnowledgeBase) -> Result<ModelBundle> {
    cfg.validate()?;
    let mut bundle = ModelBundle::default();
    for c in Component::required(cfg) {
        match c {
            Component::Detector => bundle.detector = Some(train_detector_stage(cfg, train, valid)?),
            Component::EntityFilter => bundle.filter = Some(build_filter_stage(cfg, train, kb)?),
            Component::EntityRanker => {
                bundle.entity_ranker = Some(train_ranker_stage(
                    cfg,
                    Stage::Entity,
                    train,
                    valid,
                    kb,
                    bundle.filter.as_ref(),
                )?)
            }
            Component::KnowledgeRanker => {
                bundle.knowledge_ranker = Some(train_ranker_stage(cfg, Stage::Knowledge, train, valid, kb, None)?)
            }
            Component::Embedding => bundle.embedding = Some(train_embedding_stage(cfg, train, valid, kb)?.0),
            Component::Generator => bundle.generator = Some(train_generator_stage(cfg, train, valid, kb)?),
        }
    }
    Ok(bundle)
}

/// Rankings produced for one turn.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnSelection {
    /// Present in two-stage mode.
    pub entities: Option<RankedList<EntityKey>>,
    pub snippets: RankedList<SnippetRef>,
}

impl TurnSelection {
    /// Entity ranking, derived from the snippet ranking when there is no entity stage.
    pub fn entity_ranking(&self) -> Vec<(EntityKey, f64)> {
        if let Some(e) = &self.entities {
            return e.items().to_vec();
        }
        let mut out: Vec<(EntityKey, f64)> = Vec::new();
        for (r, s) in self.snippets.items() {
            let key = r.entity();
            if !out.iter().any(|(k, _)| *k == key) {
                out.push((key, *s));
            }
        }
        out
    }
}

/// Inference over a loaded bundle.
pub struct Pipeline<'a> {
    bundle: &'a ModelBundle,
    kb: &'a KnowledgeBase,
    cfg: &'a PipelineConfig,
    index: Option<EmbeddingIndex<f64>>,
}

fn require<'b, T>(slot: &'b Option<T>, c: Component, cfg: &PipelineConfig) -> Result<&'b T> {
    slot.as_ref().ok_or_else(|| Error::MissingCheckpoint {
        stage: c.name(),
        path: c.path(&cfg.resolve(&cfg.model_dir)),
    })
}

impl<'a> Pipeline<'a> {
    pub fn new(bundle: &'a ModelBundle, kb: &'a KnowledgeBase, cfg: &'a PipelineConfig) -> Result<Self> {
        Self::with_components(bundle, kb, cfg, &Component::required(cfg))
    }

    /// A pipeline that can only rank knowledge.
    pub fn for_selection(bundle: &'a ModelBundle, kb: &'a KnowledgeBase, cfg: &'a PipelineConfig) -> Result<Self> {
        Self::with_components(bundle, kb, cfg, &Component::selection(cfg))
    }

    fn with_components(
        bundle: &'a ModelBundle,
        kb: &'a KnowledgeBase,
        cfg: &'a PipelineConfig,
        components: &[Component],
    ) -> Result<Self> {
        cfg.validate()?;
        for &c in components {
            let present = match c {
                Component::Detector => bundle.detector.is_some(),
                Component::EntityFilter => bundle.filter.is_some(),
                Component::EntityRanker => bundle.entity_ranker.is_some(),
                Component::KnowledgeRanker => bundle.knowledge_ranker.is_some(),
                Component::Embedding => bundle.embedding.is_some(),
                Component::Generator => bundle.generator.is_some(),
            };
            if !present {
                return Err(Error::MissingCheckpoint {
                    stage: c.name(),
                    path: c.path(&cfg.resolve(&cfg.model_dir)),
                });
            }
        }
        if kb.is_empty() {
            return Err(Error::InvalidData("the knowledge base has no snippets".into()));
        }
        let index = bundle.embedding.as_ref().map(|e| build_embedding_index(kb, e));
        Ok(Pipeline { bundle, kb, cfg, index })
    }

    pub fn detection_probability(&self, dialog: &Dialog) -> Result<f64> {
        Ok(require(&self.bundle.detector, Component::Detector, self.cfg)?.probability(dialog))
    }

    pub fn is_knowledge_seeking(&self, dialog: &Dialog) -> Result<bool> {
        let det = require(&self.bundle.detector, Component::Detector, self.cfg)?;
        Ok(ensemble_detect(det, dialog, self.cfg.threshold))
    }

    fn candidates(&self, dialog: &Dialog) -> Result<CandidateSet> {
        if !self.cfg.entity_filter {
            return Ok(CandidateSet::all(self.kb));
        }
        let patterns = require(&self.bundle.filter, Component::EntityFilter, self.cfg)?;
        let cands = match_entities(dialog, patterns);
        // Fall back to every entity when no candidate owns a snippet.
        if cands.iter().any(|e| self.kb.snippets_of(e).next().is_some()) {
            Ok(cands)
        } else {
            Ok(CandidateSet::all(self.kb))
        }
    }

    pub fn select(&self, dialog: &Dialog, k: usize) -> Result<TurnSelection> {
        match self.cfg.mode {
            SelectionMode::TwoStage => {
                let entity = require(&self.bundle.entity_ranker, Component::EntityRanker, self.cfg)?;
                let knowledge = require(&self.bundle.knowledge_ranker, Component::KnowledgeRanker, self.cfg)?;
                let cands = self.candidates(dialog)?;
                let sel = two_stage_select(entity, knowledge, dialog, &cands, self.kb, k)?;
                Ok(TurnSelection {
                    entities: Some(sel.entities),
                    snippets: sel.snippets,
                })
            }
            SelectionMode::AllCandidates => {
                let knowledge = require(&self.bundle.knowledge_ranker, Component::KnowledgeRanker, self.cfg)?;
                Ok(TurnSelection {
                    entities: None,
                    snippets: knowledge.rank_all_snippets(dialog, self.kb, k)?,
                })
            }
            SelectionMode::Embedding => {
                let index = require(&self.index, Component::Embedding, self.cfg)?;
                Ok(TurnSelection {
                    entities: None,
                    snippets: rank_by_embedding(index, dialog)?.truncate(k),
                })
            }
        }
    }

    pub fn respond(&self, dialog: &Dialog, snippet: &SnippetRef) -> Result<String> {
        let gen = require(&self.bundle.generator, Component::Generator, self.cfg)?;
        let s = self
            .kb
            .snippet(snippet)
            .ok_or_else(|| Error::Invariant(format!("selected snippet {snippet} is not in the knowledge base")))?;
        let input = build_gen_input(dialog, s, &gen.vocab, gen.config.max_source_len);
        Ok(greedy_decode(gen, &input, self.cfg.generator.max_len))
    }

    /// Detection, then selection and generation for positive turns only.
    pub fn predict(&self, dialog: &Dialog) -> Result<PredictionRecord> {
        if !self.is_knowledge_seeking(dialog)? {
            return Ok(PredictionRecord::negative());
        }
        let sel = self.select(dialog, self.cfg.top_k)?;
        let top = sel
            .snippets
            .first()
            .cloned()
            .ok_or_else(|| Error::Invariant("selection returned no snippet".into()))?;
        let response = self.respond(dialog, &top)?;
        Ok(PredictionRecord {
            target: true,
            snippets: sel.snippets.keys(),
            response: Some(response),
        })
    }

    /// One record per dialog, in input order.
    pub fn run(&self, dialogs: &[Dialog]) -> Result<Vec<PredictionRecord>> {
        dialogs.par_iter().map(|d| self.predict(d)).collect()
    }
}

/// Runs inference over `dialogs`. Labels are never consulted.
pub fn run_pipeline(
    dialogs: &[Dialog],
    kb: &KnowledgeBase,
    bundle: &ModelBundle,
    cfg: &PipelineConfig,
) -> Result<Vec<PredictionRecord>> {
    Pipeline::new(bundle, kb, cfg)?.run(dialogs)
}

pub fn predictions_to_json(preds: &[PredictionRecord]) -> String {
    let mut s = serde_json::to_string_pretty(preds).expect("predictions serialize");
    s.push('\n');
    s
}

pub fn parse_predictions(text: &str, file: &str) -> Result<Vec<PredictionRecord>> {
    let values: Vec<serde_json::Value> = serde_json::from_str(text).map_err(|e| Error::Parse {
        file: file.to_string(),
        reason: e.to_string(),
    })?;
    values
        .into_iter()
        .enumerate()
        .map(|(index, v)| {
            let rec: PredictionRecord = serde_json::from_value(v).map_err(|e| Error::Record {
                file: file.to_string(),
                index,
                reason: e.to_string(),
            })?;
            if rec.target != rec.response.is_some() || (!rec.target && !rec.snippets.is_empty()) {
                return Err(Error::Record {
                    file: file.to_string(),
                    index,
                    reason: "a response and knowledge are required exactly when target is true".into(),
                });
            }
            Ok(rec)
        })
        .collect()
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_predictions(&text, &path.display().to_string())
}

pub const CHAT_HELP: &str = "Type an utterance to continue the dialog.\n  :reset  start a new dialog\n  :quit   leave\n  :help   show this text";

/// What the session printed for one user turn.
#[derive(Clone, Debug, PartialEq)]
pub struct TurnReport {
    pub probability: f64,
    pub knowledge_seeking: bool,
    pub entities: Vec<(EntityKey, f64)>,
    pub snippets: Vec<(SnippetRef, f64)>,
    pub response: Option<String>,
}

impl fmt::Display for TurnReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "detection: {:.4} ({})",
            self.probability,
            if self.knowledge_seeking {
                "knowledge-seeking"
            } else {
                "not knowledge-seeking"
            }
        )?;
        writeln!(f, "entities:")?;
        for (k, s) in &self.entities {
            writeln!(f, "  {s:.4}  {k}")?;
        }
        writeln!(f, "snippets:")?;
        for (r, s) in &self.snippets {
            writeln!(f, "  {s:.4}  {r}")?;
        }
        match &self.response {
            Some(r) => write!(f, "system: {r}"),
            None => write!(f, "system: (no knowledge response)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ChatReply {
    Turn(TurnReport),
    Reset,
    Quit,
    Help,
}

/// Single-user dialog state for the interactive loop.
pub struct ChatSession<'a> {
    pipeline: Pipeline<'a>,
    history: Vec<Turn>,
    show: usize,
}

impl<'a> ChatSession<'a> {
    pub fn new(pipeline: Pipeline<'a>) -> Self {
        ChatSession {
            pipeline,
            history: Vec::new(),
            show: 3,
        }
    }

    pub fn history(&self) -> &[Turn] {
        &self.history
    }

    pub fn handle(&mut self, line: &str) -> Result<ChatReply> {
        let line = line.trim();
        match line {
            ":quit" | ":q" => return Ok(ChatReply::Quit),
            ":reset" => {
                self.history.clear();
                return Ok(ChatReply::Reset);
            }
            "" => return Ok(ChatReply::Help),
            l if l.starts_with(':') => return Ok(ChatReply::Help),
            _ => {}
        }
        self.history.push(Turn::user(line));
        let dialog = Dialog::new("chat", self.history.clone())?;
        let probability = self.pipeline.detection_probability(&dialog)?;
        let knowledge_seeking = self.pipeline.is_knowledge_seeking(&dialog)?;
        let sel = self.pipeline.select(&dialog, self.show.max(self.pipeline.cfg.top_k))?;
        let mut entities = sel.entity_ranking();
        entities.truncate(self.show);
        let snippets: Vec<_> = sel.snippets.items().iter().take(self.show).cloned().collect();
        let response = if knowledge_seeking {
            let top = sel.snippets.first().expect("non-empty ranking");
            let r = self.pipeline.respond(&dialog, top)?;
            if !r.trim().is_empty() {
                self.history.push(Turn::system(r.clone()));
            }
            Some(r)
        } else {
            None
        };
        Ok(ChatReply::Turn(TurnReport {
            probability,
            knowledge_seeking,
            entities,
            snippets,
            response,
        }))
    }
}
