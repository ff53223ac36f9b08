//! Inference: find ambiguous abbreviations in a sentence and expand each with
//! its trained classifier.

mod persist;
mod registry;

use std::io::Write;
use std::path::PathBuf;

use crate::classifier::{fetch_contextual, ModelInput};
use crate::embedding::{ContextualLayerRecord, ContextualSource};
use crate::error::Result;
use crate::scalar::Scalar;

pub use persist::{
    decode_model, encode_model, load_model, read_model, save_model, save_training_log,
    training_log_path, write_model, MODEL_MAGIC, MODEL_VERSION,
};
pub use registry::{read_manifest, read_vocabulary, write_manifest, ModelRegistry};

#[derive(Debug, Clone, PartialEq)]
pub struct Expansion<T> {
    pub position: usize,
    pub abbreviation: String,
    /// Canonical definition at `label`.
    pub definition: String,
    pub label: usize,
    /// Aligned with the model's label inventory.
    pub probabilities: Vec<T>,
}

/// A vocabulary hit whose model file is absent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skip {
    pub position: usize,
    pub abbreviation: String,
    pub locator: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceExpansions<T> {
    pub expansions: Vec<Expansion<T>>,
    pub skips: Vec<Skip>,
}

/// Positions whose token is in the registry vocabulary, ascending.
pub fn find_ambiguous<T: Scalar, S: AsRef<str>>(
    tokens: &[S],
    registry: &ModelRegistry<T>,
) -> Vec<(usize, String)> {
    tokens
        .iter()
        .enumerate()
        .filter(|(_, t)| registry.contains(t.as_ref()))
        .map(|(i, t)| (i, t.as_ref().to_string()))
        .collect()
}

/// Expands every ambiguous position in token order. Positions whose model
/// file is missing are reported in `skips`.
pub fn expand_sentence<T: Scalar>(
    tokens: &[String],
    registry: &ModelRegistry<T>,
    contextual: Option<&dyn ContextualSource>,
) -> Result<SentenceExpansions<T>> {
    let mut out = SentenceExpansions {
        expansions: Vec::new(),
        skips: Vec::new(),
    };
    let mut record: Option<ContextualLayerRecord> = None;
    for (position, abbreviation) in find_ambiguous(tokens, registry) {
        let Some(model) = registry.get(&abbreviation)? else {
            out.skips.push(Skip {
                locator: registry
                    .locator(&abbreviation)
                    .map(PathBuf::from)
                    .unwrap_or_default(),
                position,
                abbreviation,
            });
            continue;
        };
        if model.provider.needs_contextual() && record.is_none() {
            record = fetch_contextual(model.provider, contextual, tokens)?;
        }
        let input = ModelInput {
            tokens,
            position,
            contextual: if model.provider.needs_contextual() {
                record.as_ref()
            } else {
                None
            },
        };
        let prediction = model.predict(&input)?;
        out.expansions.push(Expansion {
            position,
            abbreviation,
            definition: model.labels[prediction.label].clone(),
            label: prediction.label,
            probabilities: prediction.probabilities,
        });
    }
    Ok(out)
}

pub const EXPANSION_HEADER: &str =
    "#sentence_id\tposition\tabbreviation\tdefinition\tmax_probability\tprobabilities";

pub fn write_expansions<T: Scalar, W: Write>(
    mut w: W,
    sentence_id: &str,
    expansions: &[Expansion<T>],
) -> Result<()> {
    for e in expansions {
        let probs: Vec<String> = e
            .probabilities
            .iter()
            .map(|p| format!("{:.6}", p.to_f64_lossy()))
            .collect();
        writeln!(
            w,
            "{sentence_id}\t{}\t{}\t{}\t{:.6}\t{}",
            e.position,
            e.abbreviation,
            e.definition,
            e.probabilities[e.label].to_f64_lossy(),
            probs.join(",")
        )?;
    }
    Ok(())
}
