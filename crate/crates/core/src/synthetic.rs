//! Seeded synthetic corpora with planted ambiguous abbreviations.
//!
//! Every abstract defines one abbreviation with the `Definition (ABBR)`
//! pattern and then mentions it in sentences carrying a cue word specific to
//! the chosen sense. A matching contextual layer file can be derived from
//! the tokenized sentences.

use std::collections::HashSet;

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::corpus::AbstractRecord;
use crate::dataset::sentence_key;
use crate::embedding::{ContextualLayerRecord, ContextualStore};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSense {
    pub definition: String,
    /// Alternative surface forms used for a fraction of definitions.
    pub variants: Vec<String>,
    pub cues: Vec<String>,
    /// Relative sampling weight.
    pub weight: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedAbbreviation {
    pub abbreviation: String,
    pub senses: Vec<PlantedSense>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub abstracts: usize,
    /// Cue-bearing sentences per abstract after the defining one.
    pub mentions: usize,
    /// Probability that a definition uses a variant surface form.
    pub variant_rate: f64,
    pub seed: u64,
    pub plants: Vec<PlantedAbbreviation>,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            abstracts: 200,
            mentions: 5,
            variant_rate: 0.1,
            seed: 0,
            plants: default_plants(),
        }
    }
}

/// Which abbreviation and sense an abstract was generated with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlantedTruth {
    pub abstract_id: String,
    pub abbreviation: String,
    pub sense: usize,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub records: Vec<AbstractRecord>,
    pub truth: Vec<PlantedTruth>,
}

fn sense(definition: &str, variants: &[&str], cues: &[&str], weight: u32) -> PlantedSense {
    PlantedSense {
        definition: definition.into(),
        variants: variants.iter().map(|s| s.to_string()).collect(),
        cues: cues.iter().map(|s| s.to_string()).collect(),
        weight,
    }
}

/// Three abbreviations with two to four senses each.
pub fn default_plants() -> Vec<PlantedAbbreviation> {
    vec![
        PlantedAbbreviation {
            abbreviation: "ER".into(),
            senses: vec![
                sense(
                    "endoplasmic reticulum",
                    &[],
                    &["chaperone", "misfolded", "unfolded"],
                    3,
                ),
                sense(
                    "emergency room",
                    &["emergency rooms"],
                    &["triage", "ambulance", "admission"],
                    2,
                ),
                sense(
                    "estrogen receptor",
                    &[],
                    &["tamoxifen", "mammary", "ligand"],
                    2,
                ),
            ],
        },
        PlantedAbbreviation {
            abbreviation: "PA".into(),
            senses: vec![
                sense(
                    "pulmonary artery",
                    &["pulmonary arteries"],
                    &["pressure", "catheter", "vascular"],
                    3,
                ),
                sense(
                    "physical activity",
                    &[],
                    &["exercise", "walking", "fitness"],
                    2,
                ),
                sense(
                    "Pseudomonas aeruginosa",
                    &[],
                    &["biofilm", "antibiotic", "colonization"],
                    2,
                ),
                sense(
                    "pantothenic acid",
                    &[],
                    &["vitamin", "coenzyme", "dietary"],
                    1,
                ),
            ],
        },
        PlantedAbbreviation {
            abbreviation: "MS".into(),
            senses: vec![
                sense(
                    "multiple sclerosis",
                    &[],
                    &["demyelination", "lesion", "relapse"],
                    3,
                ),
                sense(
                    "mass spectrometry",
                    &[],
                    &["peptide", "ionization", "spectra"],
                    2,
                ),
            ],
        },
    ]
}

const FILLERS: &[&str] = &[
    "clinical", "cohort", "tissue", "baseline", "patient", "control", "serum", "cell",
];

fn mention(rng: &mut ChaCha8Rng, abbr: &str, cue: &str) -> String {
    let f = FILLERS[rng.gen_range(0..FILLERS.len())];
    match rng.gen_range(0..5) {
        0 => format!("The {abbr} response was linked to {cue} in most {f} samples."),
        1 => format!("Changes in {abbr} were associated with {cue} and {f} markers."),
        2 => format!("{abbr} findings depended on {cue} under {f} conditions."),
        3 => format!("Further {abbr} analysis showed {cue} effects ( P < 0.05 )."),
        _ => format!("In {f} groups, {abbr} status tracked {cue} closely."),
    }
}

pub fn generate(config: &SyntheticConfig) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut records = Vec::with_capacity(config.abstracts);
    let mut truth = Vec::with_capacity(config.abstracts);
    for i in 0..config.abstracts {
        let plant = &config.plants[i % config.plants.len()];
        let weights: Vec<u32> = plant.senses.iter().map(|s| s.weight).collect();
        let k = WeightedIndex::new(&weights)
            .expect("positive weights")
            .sample(&mut rng);
        let chosen = &plant.senses[k];
        let surface = if !chosen.variants.is_empty() && rng.gen_bool(config.variant_rate) {
            chosen.variants.choose(&mut rng).expect("nonempty").clone()
        } else {
            chosen.definition.clone()
        };
        let abbr = &plant.abbreviation;
        let cue = chosen.cues.choose(&mut rng).expect("cues");
        let mut sentences = vec![format!(
            "We examined {surface} ({abbr}) in relation to {cue} outcomes."
        )];
        for _ in 0..config.mentions {
            let cue = chosen.cues.choose(&mut rng).expect("cues");
            sentences.push(mention(&mut rng, abbr, cue));
        }
        let n = rng.gen_range(8..40);
        sentences.insert(
            1,
            format!("Samples were collected from {n} donors (n = {n})."),
        );
        let id = format!("S{i:04}");
        records.push(AbstractRecord {
            id: id.clone(),
            text: sentences.join(" "),
        });
        truth.push(PlantedTruth {
            abstract_id: id,
            abbreviation: abbr.clone(),
            sense: k,
            surface,
        });
    }
    SyntheticCorpus { records, truth }
}

fn token_vector(token: &str, dim: usize, seed: u64) -> Vec<f32> {
    let digest = Sha256::new()
        .chain_update(seed.to_le_bytes())
        .chain_update(token.as_bytes())
        .finalize();
    let mut rng = ChaCha8Rng::from_seed(digest.into());
    (0..dim).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
}

/// Deterministic stand-in for pretrained contextual layers. Layer 0 is a
/// per-token vector, layer 2 the sentence mean, layer 1 their average.
pub fn synthetic_contextual<S: AsRef<[String]>>(
    sentences: &[S],
    dim: usize,
    seed: u64,
) -> Result<ContextualStore> {
    let mut store = ContextualStore::new(dim);
    let mut seen = HashSet::new();
    for s in sentences {
        let tokens = s.as_ref();
        let key = sentence_key(tokens);
        if tokens.is_empty() || !seen.insert(key.clone()) {
            continue;
        }
        let vectors: Vec<Vec<f32>> = tokens.iter().map(|t| token_vector(t, dim, seed)).collect();
        let mean: Vec<f32> = (0..dim)
            .map(|d| vectors.iter().map(|v| v[d]).sum::<f32>() / tokens.len() as f32)
            .collect();
        let mut layers = [Vec::new(), Vec::new(), Vec::new()];
        for v in &vectors {
            layers[0].extend_from_slice(v);
            layers[1].extend(v.iter().zip(&mean).map(|(a, b)| 0.5 * (a + b)));
            layers[2].extend_from_slice(&mean);
        }
        store.insert(ContextualLayerRecord {
            key,
            len: tokens.len(),
            dim,
            layers,
        })?;
    }
    Ok(store)
}
