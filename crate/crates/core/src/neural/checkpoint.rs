//! Versioned JSON checkpoint container.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT: &str = "kgdial-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Envelope<T> {
    format: String,
    version: u32,
    kind: String,
    payload: T,
}

pub fn to_string<T: Serialize>(kind: &str, payload: &T) -> String {
    let envelope = Envelope {
        format: FORMAT.to_string(),
        version: VERSION,
        kind: kind.to_string(),
        payload,
    };
    serde_json::to_string(&envelope).expect("checkpoint serializes")
}

pub fn from_str<T: DeserializeOwned>(kind: &str, text: &str, path: &Path) -> Result<T> {
    let fail = |reason: String| Error::Checkpoint {
        path: path.to_path_buf(),
        reason,
    };
    let envelope: Envelope<serde_json::Value> = serde_json::from_str(text).map_err(|e| fail(e.to_string()))?;
    if envelope.format != FORMAT {
        return Err(fail(format!("unknown format `{}`", envelope.format)));
    }
    if envelope.version != VERSION {
        return Err(fail(format!("unsupported version {}", envelope.version)));
    }
    if envelope.kind != kind {
        return Err(fail(format!(
            "expected a `{kind}` checkpoint, found `{}`",
            envelope.kind
        )));
    }
    serde_json::from_value(envelope.payload).map_err(|e| fail(e.to_string()))
}

pub fn save<T: Serialize>(path: &Path, kind: &str, payload: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, to_string(kind, payload)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load<T: DeserializeOwned>(path: &Path, kind: &str) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    from_str(kind, &text, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::encoder::{TextClassifier, Vocab};
    use crate::textproc::tokenize;
    use rand::SeedableRng;

    #[test]
    fn classifier_round_trips_bit_exactly() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let vocab = Vocab::build([&tokenize("alpha beta gamma")], 1);
        let model = TextClassifier::<f64>::init(vocab, 8, &mut rng).unwrap();
        let text = to_string("classifier", &model);
        let back: TextClassifier<f64> = from_str("classifier", &text, Path::new("mem")).unwrap();
        assert_eq!(back, model);
        let bits = |m: &TextClassifier<f64>| -> Vec<u64> {
            m.weights
                .encoder
                .embedding
                .values()
                .iter()
                .map(|v| v.to_bits())
                .collect()
        };
        assert_eq!(bits(&back), bits(&model));
        assert!(from_str::<TextClassifier<f64>>("other", &text, Path::new("mem")).is_err());
    }
}
