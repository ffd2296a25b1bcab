//! The bundled toy corpus: 14 dialogs, 8 entities, 30 snippets.

use crate::corpus::{parse_dialogs, parse_knowledge, parse_labels, KnowledgeBase, Split};
use crate::error::Result;
use crate::pipeline::PipelineConfig;

pub const LOGS: &str = include_str!("../fixtures/toy/logs.json");
pub const LABELS: &str = include_str!("../fixtures/toy/labels.json");
pub const KNOWLEDGE: &str = include_str!("../fixtures/toy/knowledge.json");
pub const CONFIG: &str = include_str!("../fixtures/toy/pipeline.json");
pub const PREDICTIONS: &str = include_str!("../fixtures/toy/predictions.json");
pub const GOLDEN_METRICS: &str = include_str!("../fixtures/toy/metrics.golden.json");
pub const GOLDEN_FILTER: &str = include_str!("../fixtures/toy/filter.golden.json");
pub const GOLDEN_FILTER_EXACT: &str = include_str!("../fixtures/toy/filter_exact.golden.json");

pub fn split() -> Result<Split> {
    Split::new(
        parse_dialogs(LOGS, "toy/logs.json")?,
        parse_labels(LABELS, "toy/labels.json")?,
    )
}

pub fn knowledge() -> Result<KnowledgeBase> {
    parse_knowledge(KNOWLEDGE, "toy/knowledge.json")
}

/// The fixture's pipeline settings; paths are relative to the fixture directory.
pub fn config() -> Result<PipelineConfig> {
    PipelineConfig::from_json(CONFIG, "toy/pipeline.json")
}

/// Filesystem location of the fixture, for tools that read it from disk.
pub fn dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy")
}
