//! Dialogs, turn labels and the unstructured knowledge base.
//!
//! File layout (all UTF-8 JSON):
//!
//! * `logs.json`: array of dialogs, each an array of `{"speaker": "U"|"S", "text": ...}`.
//!   The final turn of every dialog is the user turn under prediction.
//! * `labels.json`: one record per dialog, `{"target", "knowledge", "response"}`.
//! * `knowledge.json`: `domain -> entity_id -> {"name", "docs": doc_id -> {"title", "body"}}`.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::{self, Deserializer, MapAccess, Visitor};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

/// Entity id used for domains without named entities (taxi, train).
pub const ANY_ENTITY: &str = "*";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Speaker {
    #[serde(rename = "U")]
    User,
    #[serde(rename = "S")]
    System,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

impl Turn {
    pub fn user(text: impl Into<String>) -> Self {
        Turn {
            speaker: Speaker::User,
            text: text.into(),
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Turn {
            speaker: Speaker::System,
            text: text.into(),
        }
    }
}

/// A dialog history whose last turn is the user utterance under prediction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dialog {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Dialog {
    pub fn new(id: impl Into<String>, turns: Vec<Turn>) -> Result<Self> {
        let dialog = Dialog { id: id.into(), turns };
        dialog.check()?;
        Ok(dialog)
    }

    fn check(&self) -> Result<()> {
        let Some(last) = self.turns.last() else {
            return Err(Error::InvalidData("dialog has no turns".into()));
        };
        if let Some(pos) = self.turns.iter().position(|t| t.text.trim().is_empty()) {
            return Err(Error::InvalidData(format!("turn {pos} has empty text")));
        }
        if last.speaker != Speaker::User {
            return Err(Error::InvalidData("last turn is not a USER turn".into()));
        }
        Ok(())
    }

    /// The current user utterance.
    pub fn last_utterance(&self) -> &str {
        &self.turns[self.turns.len() - 1].text
    }

    /// Up to the last two turns, oldest first.
    pub fn last_two(&self) -> &[Turn] {
        let start = self.turns.len().saturating_sub(2);
        &self.turns[start..]
    }
}

/// Compares ids numerically when both are unsigned integers, lexically otherwise.
fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Accepts either a JSON string or a JSON integer as an identifier.
fn id_from_json<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<String, D::Error> {
    match Value::deserialize(d)? {
        Value::String(s) => Ok(s),
        Value::Number(n) => Ok(n.to_string()),
        other => Err(de::Error::custom(format!("expected string or integer id, got {other}"))),
    }
}

/// `(domain, entity_id)`; entity-less domains use [`ANY_ENTITY`].
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityKey {
    pub domain: String,
    #[serde(deserialize_with = "id_from_json")]
    pub entity_id: String,
}

impl EntityKey {
    pub fn new(domain: impl Into<String>, entity_id: impl Into<String>) -> Self {
        EntityKey {
            domain: domain.into(),
            entity_id: entity_id.into(),
        }
    }

    pub fn is_domain_only(&self) -> bool {
        self.entity_id == ANY_ENTITY
    }
}

impl Ord for EntityKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.domain
            .cmp(&other.domain)
            .then_with(|| natural_cmp(&self.entity_id, &other.entity_id))
    }
}

impl PartialOrd for EntityKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for EntityKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.domain, self.entity_id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SnippetRef {
    pub domain: String,
    #[serde(deserialize_with = "id_from_json")]
    pub entity_id: String,
    #[serde(deserialize_with = "id_from_json")]
    pub doc_id: String,
}

impl SnippetRef {
    pub fn new(domain: impl Into<String>, entity_id: impl Into<String>, doc_id: impl Into<String>) -> Self {
        SnippetRef {
            domain: domain.into(),
            entity_id: entity_id.into(),
            doc_id: doc_id.into(),
        }
    }

    pub fn entity(&self) -> EntityKey {
        EntityKey::new(self.domain.clone(), self.entity_id.clone())
    }
}

impl Ord for SnippetRef {
    fn cmp(&self, other: &Self) -> Ordering {
        self.domain
            .cmp(&other.domain)
            .then_with(|| natural_cmp(&self.entity_id, &other.entity_id))
            .then_with(|| natural_cmp(&self.doc_id, &other.doc_id))
    }
}

impl PartialOrd for SnippetRef {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for SnippetRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.domain, self.entity_id, self.doc_id)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Snippet {
    pub reference: SnippetRef,
    pub entity_name: Option<String>,
    pub question: String,
    pub answer: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct KnowledgeBase {
    snippets: BTreeMap<SnippetRef, Snippet>,
    entities: BTreeMap<EntityKey, Option<String>>,
    by_entity: BTreeMap<EntityKey, Vec<SnippetRef>>,
}

impl KnowledgeBase {
    /// Registers an entity; `name` must be `None` exactly for [`ANY_ENTITY`] ids.
    pub fn add_entity(&mut self, key: EntityKey, name: Option<String>) -> Result<()> {
        match (&name, key.is_domain_only()) {
            (None, false) => {
                return Err(Error::InvalidData(format!("entity {key} has no name")));
            }
            (Some(_), true) => {
                return Err(Error::InvalidData(format!(
                    "domain-level entry {key} must not carry a name"
                )));
            }
            _ => {}
        }
        if self.entities.contains_key(&key) {
            return Err(Error::DuplicateKey(key.to_string()));
        }
        self.by_entity.entry(key.clone()).or_default();
        self.entities.insert(key, name);
        Ok(())
    }

    /// Adds a snippet to an already registered entity.
    pub fn add_snippet(
        &mut self,
        reference: SnippetRef,
        question: impl Into<String>,
        answer: impl Into<String>,
    ) -> Result<()> {
        let (question, answer) = (question.into(), answer.into());
        let key = reference.entity();
        let Some(name) = self.entities.get(&key) else {
            return Err(Error::InvalidData(format!(
                "snippet {reference} belongs to unknown entity {key}"
            )));
        };
        if question.trim().is_empty() || answer.trim().is_empty() {
            return Err(Error::InvalidData(format!(
                "snippet {reference} has an empty question or answer"
            )));
        }
        if self.snippets.contains_key(&reference) {
            return Err(Error::DuplicateKey(reference.to_string()));
        }
        let snippet = Snippet {
            reference: reference.clone(),
            entity_name: name.clone(),
            question,
            answer,
        };
        self.by_entity.entry(key).or_default().push(reference.clone());
        self.snippets.insert(reference, snippet);
        Ok(())
    }

    pub fn snippet(&self, reference: &SnippetRef) -> Option<&Snippet> {
        self.snippets.get(reference)
    }

    pub fn snippets(&self) -> impl Iterator<Item = &Snippet> {
        self.snippets.values()
    }

    /// Snippets owned by `entity`, in key order.
    pub fn snippets_of<'a>(&'a self, entity: &EntityKey) -> impl Iterator<Item = &'a Snippet> {
        self.by_entity
            .get(entity)
            .map(|refs| refs.as_slice())
            .unwrap_or(&[])
            .iter()
            .map(move |r| &self.snippets[r])
    }

    pub fn has_entity(&self, key: &EntityKey) -> bool {
        self.entities.contains_key(key)
    }

    /// Entity name, `None` for domain-level entries or unknown keys.
    pub fn entity_name(&self, key: &EntityKey) -> Option<&str> {
        self.entities.get(key).and_then(|n| n.as_deref())
    }

    /// All entities in key order.
    pub fn entities(&self) -> impl Iterator<Item = (&EntityKey, Option<&str>)> {
        self.entities.iter().map(|(k, n)| (k, n.as_deref()))
    }

    pub fn domain_only_entities(&self) -> impl Iterator<Item = &EntityKey> {
        self.entities.keys().filter(|k| k.is_domain_only())
    }

    pub fn num_entities(&self) -> usize {
        self.entities.len()
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    /// Text shown for an entity in model inputs: its name, or the domain for domain-level entries.
    pub fn entity_label<'a>(&'a self, key: &'a EntityKey) -> &'a str {
        self.entity_name(key).unwrap_or(&key.domain)
    }
}

/// Gold annotation for the final user turn of one dialog.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnLabel {
    pub target: bool,
    #[serde(rename = "knowledge", default, skip_serializing_if = "Vec::is_empty")]
    pub snippets: Vec<SnippetRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
}

impl TurnLabel {
    pub fn negative() -> Self {
        TurnLabel {
            target: false,
            snippets: Vec::new(),
            response: None,
        }
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        if self.target {
            if self.snippets.is_empty() {
                return Err("knowledge-seeking label without knowledge".into());
            }
            if self.response.is_none() {
                return Err("knowledge-seeking label without response".into());
            }
        } else if !self.snippets.is_empty() || self.response.is_some() {
            return Err("non-target label carries knowledge or response".into());
        }
        Ok(())
    }

    /// The gold snippet used for selection metrics (first listed).
    pub fn gold(&self) -> Option<&SnippetRef> {
        self.snippets.first()
    }
}

/// Dialogs with their aligned labels.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Split {
    pub dialogs: Vec<Dialog>,
    pub labels: Vec<TurnLabel>,
}

impl Split {
    pub fn new(dialogs: Vec<Dialog>, labels: Vec<TurnLabel>) -> Result<Self> {
        if dialogs.len() != labels.len() {
            return Err(Error::InvalidData(format!(
                "{} dialogs but {} labels",
                dialogs.len(),
                labels.len()
            )));
        }
        Ok(Split { dialogs, labels })
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Dialog, &TurnLabel)> {
        self.dialogs.iter().zip(&self.labels)
    }

    /// Knowledge-seeking turns with their gold snippet.
    pub fn knowledge_turns(&self) -> impl Iterator<Item = (&Dialog, &TurnLabel, &SnippetRef)> {
        self.iter()
            .filter_map(|(d, l)| l.gold().filter(|_| l.target).map(|g| (d, l, g)))
    }

    pub fn len(&self) -> usize {
        self.dialogs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogs.is_empty()
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn file_label(path: &Path) -> String {
    path.display().to_string()
}

pub fn load_dialogs(path: &Path) -> Result<Vec<Dialog>> {
    parse_dialogs(&read(path)?, &file_label(path))
}

/// Parses the `logs.json` format; `file` is used in error messages.
pub fn parse_dialogs(text: &str, file: &str) -> Result<Vec<Dialog>> {
    let records: Vec<Value> = serde_json::from_str(text).map_err(|e| Error::Parse {
        file: file.into(),
        reason: e.to_string(),
    })?;
    records
        .into_iter()
        .enumerate()
        .map(|(index, record)| {
            let record_err = |reason: String| Error::Record {
                file: file.into(),
                index,
                reason,
            };
            let turns: Vec<Turn> = serde_json::from_value(record).map_err(|e| record_err(e.to_string()))?;
            Dialog::new(index.to_string(), turns).map_err(|e| record_err(e.to_string()))
        })
        .collect()
}

pub fn dialogs_to_json(dialogs: &[Dialog]) -> String {
    let raw: Vec<&Vec<Turn>> = dialogs.iter().map(|d| &d.turns).collect();
    serde_json::to_string_pretty(&raw).expect("dialogs serialize")
}

pub fn load_labels(path: &Path) -> Result<Vec<TurnLabel>> {
    parse_labels(&read(path)?, &file_label(path))
}

pub fn parse_labels(text: &str, file: &str) -> Result<Vec<TurnLabel>> {
    let records: Vec<Value> = serde_json::from_str(text).map_err(|e| Error::Parse {
        file: file.into(),
        reason: e.to_string(),
    })?;
    records
        .into_iter()
        .enumerate()
        .map(|(index, record)| {
            let record_err = |reason: String| Error::Record {
                file: file.into(),
                index,
                reason,
            };
            let label: TurnLabel = serde_json::from_value(record).map_err(|e| record_err(e.to_string()))?;
            label.check().map_err(record_err)?;
            Ok(label)
        })
        .collect()
}

pub fn labels_to_json(labels: &[TurnLabel]) -> String {
    serde_json::to_string_pretty(labels).expect("labels serialize")
}

/// JSON object decoded as ordered entries, rejecting repeated keys.
struct UniqueMap<V>(Vec<(String, V)>);

impl<'de, V: Deserialize<'de>> Deserialize<'de> for UniqueMap<V> {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct MapVisitor<V>(std::marker::PhantomData<V>);

        impl<'de, V: Deserialize<'de>> Visitor<'de> for MapVisitor<V> {
            type Value = UniqueMap<V>;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a JSON object")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> std::result::Result<Self::Value, A::Error> {
                let mut seen = BTreeSet::new();
                let mut entries = Vec::new();
                while let Some((key, value)) = access.next_entry::<String, V>()? {
                    if !seen.insert(key.clone()) {
                        return Err(de::Error::custom(format!("duplicate key `{key}`")));
                    }
                    entries.push((key, value));
                }
                Ok(UniqueMap(entries))
            }
        }

        d.deserialize_map(MapVisitor(std::marker::PhantomData))
    }
}

#[derive(Deserialize, Serialize)]
struct RawDoc {
    title: String,
    body: String,
}

#[derive(Deserialize)]
struct RawEntity {
    name: Option<String>,
    docs: UniqueMap<RawDoc>,
}

pub fn load_knowledge(path: &Path) -> Result<KnowledgeBase> {
    parse_knowledge(&read(path)?, &file_label(path))
}

pub fn parse_knowledge(text: &str, file: &str) -> Result<KnowledgeBase> {
    let raw: UniqueMap<UniqueMap<RawEntity>> = serde_json::from_str(text).map_err(|e| {
        let reason = e.to_string();
        if reason.contains("duplicate key") {
            Error::DuplicateKey(format!("{file}: {reason}"))
        } else {
            Error::Parse {
                file: file.into(),
                reason,
            }
        }
    })?;
    let mut kb = KnowledgeBase::default();
    for (domain, entities) in raw.0 {
        for (entity_id, entity) in entities.0 {
            let key = EntityKey::new(domain.clone(), entity_id.clone());
            kb.add_entity(key, entity.name)?;
            for (doc_id, doc) in entity.docs.0 {
                kb.add_snippet(
                    SnippetRef::new(domain.clone(), entity_id.clone(), doc_id),
                    doc.title,
                    doc.body,
                )?;
            }
        }
    }
    Ok(kb)
}

pub fn knowledge_to_json(kb: &KnowledgeBase) -> String {
    let mut out = serde_json::Map::new();
    for (key, name) in kb.entities() {
        let docs: serde_json::Map<String, Value> = kb
            .snippets_of(key)
            .map(|s| {
                let doc = RawDoc {
                    title: s.question.clone(),
                    body: s.answer.clone(),
                };
                (s.reference.doc_id.clone(), serde_json::to_value(doc).unwrap())
            })
            .collect();
        let domain = out
            .entry(key.domain.clone())
            .or_insert_with(|| Value::Object(Default::default()));
        domain
            .as_object_mut()
            .unwrap()
            .insert(key.entity_id.clone(), serde_json::json!({ "name": name, "docs": docs }));
    }
    serde_json::to_string_pretty(&Value::Object(out)).expect("knowledge serializes")
}

/// Reads `logs.json`, `labels.json` and `knowledge.json` from a directory.
pub fn load_split_dir(dir: &Path) -> Result<(Split, KnowledgeBase)> {
    let dialogs = load_dialogs(&dir.join("logs.json"))?;
    let labels = load_labels(&dir.join("labels.json"))?;
    let kb = load_knowledge(&dir.join("knowledge.json"))?;
    let split = Split::new(dialogs, labels)?;
    Ok((split, kb))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    CountMismatch { dialogs: usize, labels: usize },
    UnresolvableRef { label: usize, reference: String },
    InvariantViolation { label: usize, reason: String },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::CountMismatch { dialogs, labels } => {
                write!(f, "{dialogs} dialogs but {labels} labels")
            }
            Finding::UnresolvableRef { label, reference } => {
                write!(f, "label {label}: {reference} not in knowledge base")
            }
            Finding::InvariantViolation { label, reason } => write!(f, "label {label}: {reason}"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }
}

/// Cross-checks dialogs, labels and knowledge; never fails, only reports.
pub fn validate_split(dialogs: &[Dialog], labels: &[TurnLabel], kb: &KnowledgeBase) -> ValidationReport {
    let mut findings = Vec::new();
    if dialogs.len() != labels.len() {
        findings.push(Finding::CountMismatch {
            dialogs: dialogs.len(),
            labels: labels.len(),
        });
    }
    for (index, label) in labels.iter().enumerate() {
        if let Err(reason) = label.check() {
            findings.push(Finding::InvariantViolation { label: index, reason });
        }
        for reference in &label.snippets {
            if kb.snippet(reference).is_none() {
                findings.push(Finding::UnresolvableRef {
                    label: index,
                    reference: reference.to_string(),
                });
            }
        }
    }
    ValidationReport { findings }
}
