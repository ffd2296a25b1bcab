//! Token sequences fed to the models.
//!
//! Segments are joined with the reserved separator token, which the tokenizer
//! can never produce from raw text.

use crate::corpus::{Dialog, EntityKey, KnowledgeBase, Snippet};
use crate::textproc::{tokenize, TokenSeq};

pub const SEP_TOKEN: &str = "<sep>";

/// Context window, in tokens, kept from the end of the dialog history.
pub const MAX_CONTEXT_TOKENS: usize = 256;

fn join<'a>(segments: impl IntoIterator<Item = &'a str>) -> TokenSeq {
    let mut out = Vec::new();
    for (i, seg) in segments.into_iter().enumerate() {
        if i > 0 {
            out.push(SEP_TOKEN.to_string());
        }
        out.extend(tokenize(seg).0);
    }
    TokenSeq(out)
}

fn keep_last(mut seq: TokenSeq, n: usize) -> TokenSeq {
    if seq.len() > n {
        seq.0.drain(..seq.len() - n);
    }
    seq
}

/// All turns joined by separators, truncated to the last 256 tokens.
pub fn context_tokens(dialog: &Dialog) -> TokenSeq {
    keep_last(join(dialog.turns.iter().map(|t| t.text.as_str())), MAX_CONTEXT_TOKENS)
}

/// Context ⊕ domain ⊕ entity name (or the domain again for domain-level entries).
pub fn entity_input(dialog: &Dialog, entity: &EntityKey, kb: &KnowledgeBase) -> TokenSeq {
    let mut seq = context_tokens(dialog);
    for seg in [entity.domain.as_str(), kb.entity_label(entity)] {
        seq.0.push(SEP_TOKEN.to_string());
        seq.0.extend(tokenize(seg).0);
    }
    seq
}

/// Last user utterance ⊕ question ⊕ answer.
pub fn snippet_input(dialog: &Dialog, snippet: &Snippet) -> TokenSeq {
    join([
        dialog.last_utterance(),
        snippet.question.as_str(),
        snippet.answer.as_str(),
    ])
}

/// Question ⊕ answer, the text of a snippet on its own.
pub fn snippet_text(snippet: &Snippet) -> TokenSeq {
    join([snippet.question.as_str(), snippet.answer.as_str()])
}

/// Last two turns ⊕ question ⊕ answer ⊕ domain ⊕ entity name.
pub fn generation_source(dialog: &Dialog, snippet: &Snippet) -> TokenSeq {
    let r = &snippet.reference;
    let entity = snippet.entity_name.as_deref().unwrap_or(&r.domain);
    let mut segments: Vec<&str> = dialog.last_two().iter().map(|t| t.text.as_str()).collect();
    segments.extend([
        snippet.question.as_str(),
        snippet.answer.as_str(),
        r.domain.as_str(),
        entity,
    ]);
    join(segments)
}
