use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::dataset::{sentence_key, LabeledInstance};
use crate::embedding::{
    bow_vector, embed_static, embed_static_backward, mix_layers, mix_layers_backward,
    ContextualLayerRecord, ContextualSource, EmbeddingSequence, MixingParams, Vocabulary,
};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::metrics::Predictor;
use crate::scalar::{lit, softmax, Scalar};

use super::ffn::{FfnParams, FfnTrace};
use super::lstm::{bilstm_at, bilstm_at_backward, BiLstmParams, PositionTrace};
use super::params::Weights;

/// Which token representation feeds the classifier head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provider {
    /// Bag-of-words counts straight into the FFN.
    Bow,
    /// Trainable lookup table, biLSTM encoder, FFN.
    StaticBiLstm,
    /// Mixed contextual layers at the abbreviation position, FFN.
    ContextualFfn,
    /// Mixed contextual layers, biLSTM encoder, FFN.
    ContextualBiLstm,
}

impl Provider {
    pub const ALL: [Provider; 4] = [
        Provider::Bow,
        Provider::StaticBiLstm,
        Provider::ContextualFfn,
        Provider::ContextualBiLstm,
    ];

    pub fn tag(self) -> u8 {
        match self {
            Provider::Bow => 0,
            Provider::StaticBiLstm => 1,
            Provider::ContextualFfn => 2,
            Provider::ContextualBiLstm => 3,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Provider::ALL.into_iter().find(|p| p.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            Provider::Bow => "bow",
            Provider::StaticBiLstm => "static-bilstm",
            Provider::ContextualFfn => "contextual-ffn",
            Provider::ContextualBiLstm => "contextual-bilstm",
        }
    }

    pub fn needs_contextual(self) -> bool {
        matches!(self, Provider::ContextualFfn | Provider::ContextualBiLstm)
    }

    pub fn needs_vocabulary(self) -> bool {
        matches!(self, Provider::Bow | Provider::StaticBiLstm)
    }

    pub fn has_encoder(self) -> bool {
        matches!(self, Provider::StaticBiLstm | Provider::ContextualBiLstm)
    }
}

impl fmt::Display for Provider {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Provider {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Provider::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown provider {s:?}")))
    }
}

/// Layer sizes that are not implied by the data.
#[derive(Debug, Clone, PartialEq)]
pub struct Architecture {
    pub hidden: usize,
    pub ffn_widths: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden: 64,
            ffn_widths: vec![64],
            embed_dim: 50,
        }
    }
}

/// One abbreviation's classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierModel<T> {
    pub abbreviation: String,
    pub provider: Provider,
    /// Canonical definition per class, in group id order.
    pub labels: Vec<String>,
    pub vocabulary: Option<Vocabulary>,
    pub weights: Weights<T>,
    pub seed: u64,
}

/// Per-sentence input. `contextual` is required by contextual providers.
#[derive(Debug, Clone, Copy)]
pub struct ModelInput<'a> {
    pub tokens: &'a [String],
    pub position: usize,
    pub contextual: Option<&'a ContextualLayerRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub probabilities: Vec<T>,
    pub label: usize,
}

enum ProviderTrace<T> {
    Bow,
    Static {
        ids: Vec<usize>,
        lstm: PositionTrace<T>,
    },
    ContextualFfn {
        len: usize,
        dim: usize,
    },
    ContextualBiLstm {
        lstm: PositionTrace<T>,
    },
}

struct ForwardPass<T> {
    provider: ProviderTrace<T>,
    head: FfnTrace<T>,
}

/// Index of the largest value; ties go to the smaller index.
pub fn argmax<T: Scalar>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

impl<T: Scalar> ClassifierModel<T> {
    /// Fresh model. `input_dim` is the contextual dimension for contextual
    /// providers and ignored otherwise.
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng>(
        abbreviation: &str,
        provider: Provider,
        labels: Vec<String>,
        vocabulary: Option<Vocabulary>,
        input_dim: usize,
        arch: &Architecture,
        seed: u64,
        rng: &mut R,
    ) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Empty("label inventory"));
        }
        if provider.needs_vocabulary() != vocabulary.is_some() {
            return Err(Error::ProviderMismatch(format!(
                "provider {provider} {} a vocabulary",
                if provider.needs_vocabulary() {
                    "requires"
                } else {
                    "does not take"
                }
            )));
        }
        let token_dim = match provider {
            Provider::Bow => vocabulary.as_ref().map_or(0, Vocabulary::len),
            Provider::StaticBiLstm => arch.embed_dim,
            Provider::ContextualFfn | Provider::ContextualBiLstm => input_dim,
        };
        if token_dim == 0 || (provider.has_encoder() && arch.hidden == 0) {
            return Err(Error::Invalid("zero-sized layer".into()));
        }
        let mixing = provider.needs_contextual().then(MixingParams::default);
        let table = (provider == Provider::StaticBiLstm).then(|| {
            let v = vocabulary.as_ref().map_or(0, Vocabulary::len);
            Matrix::uniform(v, arch.embed_dim, 0.1, rng)
        });
        let encoder = provider
            .has_encoder()
            .then(|| BiLstmParams::init(token_dim, arch.hidden, rng));
        let head_in = if provider.has_encoder() {
            2 * arch.hidden
        } else {
            token_dim
        };
        let head = FfnParams::init(head_in, &arch.ffn_widths, labels.len(), rng);
        Ok(ClassifierModel {
            abbreviation: abbreviation.to_string(),
            provider,
            labels,
            vocabulary,
            weights: Weights {
                mixing,
                table,
                encoder,
                head,
            },
            seed,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    /// Checks that the parameter blocks present agree with the provider and
    /// that all dimensions chain.
    pub fn validate(&self) -> Result<()> {
        let w = &self.weights;
        let p = self.provider;
        let ok = w.mixing.is_some() == p.needs_contextual()
            && w.table.is_some() == (p == Provider::StaticBiLstm)
            && w.encoder.is_some() == p.has_encoder()
            && self.vocabulary.is_some() == p.needs_vocabulary();
        if !ok {
            return Err(Error::ProviderMismatch(format!(
                "parameter blocks do not match provider {p}"
            )));
        }
        w.head.validate()?;
        if w.head.classes() != self.labels.len() {
            return Err(Error::Shape(format!(
                "head has {} outputs for {} labels",
                w.head.classes(),
                self.labels.len()
            )));
        }
        let token_dim = match (&w.table, &self.vocabulary) {
            (Some(t), Some(v)) => {
                if t.rows() != v.len() {
                    return Err(Error::Shape(
                        "embedding table rows differ from vocabulary".into(),
                    ));
                }
                Some(t.cols())
            }
            (None, Some(v)) => Some(v.len()),
            _ => None,
        };
        if let Some(e) = &w.encoder {
            let cells_ok = [&e.forward, &e.backward].iter().all(|c| {
                c.w_x.rows() == 4 * c.hidden()
                    && c.bias.len() == 4 * c.hidden()
                    && c.w_h.rows() == 4 * c.hidden()
                    && c.input_dim() == e.input_dim()
                    && c.hidden() == e.hidden()
            });
            if !cells_ok
                || token_dim.is_some_and(|d| d != e.input_dim())
                || w.head.input_dim() != 2 * e.hidden()
            {
                return Err(Error::Shape("encoder dimensions do not chain".into()));
            }
        } else if token_dim.is_some_and(|d| d != w.head.input_dim()) {
            return Err(Error::Shape(
                "head input differs from token dimension".into(),
            ));
        }
        Ok(())
    }

    /// Dimension of the contextual embeddings this model consumes.
    pub fn contextual_dim(&self) -> Option<usize> {
        if !self.provider.needs_contextual() {
            return None;
        }
        Some(match &self.weights.encoder {
            Some(e) => e.input_dim(),
            None => self.weights.head.input_dim(),
        })
    }

    fn check_input(&self, input: &ModelInput<'_>) -> Result<()> {
        if input.position >= input.tokens.len() {
            return Err(Error::PositionOutOfRange {
                position: input.position,
                len: input.tokens.len(),
            });
        }
        if self.provider.needs_contextual() {
            let rec = input.contextual.ok_or_else(|| {
                Error::ProviderMismatch(format!(
                    "provider {} needs contextual embeddings",
                    self.provider
                ))
            })?;
            if rec.len != input.tokens.len() {
                return Err(Error::Shape(format!(
                    "contextual record {} has {} rows for {} tokens",
                    rec.key,
                    rec.len,
                    input.tokens.len()
                )));
            }
            if Some(rec.dim) != self.contextual_dim() {
                return Err(Error::Shape(format!(
                    "contextual dimension {} but model expects {:?}",
                    rec.dim,
                    self.contextual_dim()
                )));
            }
        }
        Ok(())
    }

    fn contextual_sequence<'a>(
        &self,
        input: &ModelInput<'a>,
    ) -> Result<(&'a ContextualLayerRecord, EmbeddingSequence<T>)> {
        let rec = input.contextual.expect("checked");
        let mix = self.weights.mixing.as_ref().expect("validated");
        Ok((rec, mix_layers(rec, mix)?))
    }

    fn forward(&self, input: &ModelInput<'_>) -> Result<ForwardPass<T>> {
        self.check_input(input)?;
        let w = &self.weights;
        let (features, provider) = match self.provider {
            Provider::Bow => {
                let vocab = self.vocabulary.as_ref().expect("validated");
                (bow_vector(input.tokens, vocab), ProviderTrace::Bow)
            }
            Provider::StaticBiLstm => {
                let vocab = self.vocabulary.as_ref().expect("validated");
                let table = w.table.as_ref().expect("validated");
                let (e, ids) = embed_static(input.tokens, vocab, table)?;
                let (h, lstm) =
                    bilstm_at(&e, w.encoder.as_ref().expect("validated"), input.position)?;
                (h, ProviderTrace::Static { ids, lstm })
            }
            Provider::ContextualFfn => {
                let (rec, e) = self.contextual_sequence(input)?;
                (
                    e.row(input.position).to_vec(),
                    ProviderTrace::ContextualFfn {
                        len: rec.len,
                        dim: rec.dim,
                    },
                )
            }
            Provider::ContextualBiLstm => {
                let (_, e) = self.contextual_sequence(input)?;
                let (h, lstm) =
                    bilstm_at(&e, w.encoder.as_ref().expect("validated"), input.position)?;
                (h, ProviderTrace::ContextualBiLstm { lstm })
            }
        };
        Ok(ForwardPass {
            provider,
            head: w.head.forward(&features),
        })
    }

    fn backward(
        &self,
        input: &ModelInput<'_>,
        pass: &ForwardPass<T>,
        d_logits: &[T],
        grads: &mut Weights<T>,
    ) {
        let w = &self.weights;
        let d_features = w.head.backward(&pass.head, d_logits, &mut grads.head);
        let d_mix = |d_e: &Matrix<T>, grads: &mut Weights<T>| {
            let rec = input.contextual.expect("checked");
            let g = mix_layers_backward(rec, w.mixing.as_ref().expect("validated"), d_e);
            let acc = grads.mixing.as_mut().expect("validated");
            for k in 0..3 {
                acc.raw[k] += g.raw[k];
            }
            acc.gamma += g.gamma;
        };
        match &pass.provider {
            ProviderTrace::Bow => {}
            ProviderTrace::Static { ids, lstm } => {
                let enc = w.encoder.as_ref().expect("validated");
                let d_e = bilstm_at_backward(
                    enc,
                    lstm,
                    &d_features,
                    grads.encoder.as_mut().expect("validated"),
                );
                embed_static_backward(ids, &d_e, grads.table.as_mut().expect("validated"));
            }
            ProviderTrace::ContextualFfn { len, dim } => {
                let mut d_e = Matrix::zeros(*len, *dim);
                d_e.row_mut(input.position).copy_from_slice(&d_features);
                d_mix(&d_e, grads);
            }
            ProviderTrace::ContextualBiLstm { lstm } => {
                let enc = w.encoder.as_ref().expect("validated");
                let d_e = bilstm_at_backward(
                    enc,
                    lstm,
                    &d_features,
                    grads.encoder.as_mut().expect("validated"),
                );
                d_mix(&d_e, grads);
            }
        }
    }

    /// Class probabilities for one input.
    pub fn probabilities(&self, input: &ModelInput<'_>) -> Result<Vec<T>> {
        Ok(softmax(&self.forward(input)?.head.logits))
    }

    /// Requires `tokens[position]` to be this model's abbreviation.
    pub fn predict(&self, input: &ModelInput<'_>) -> Result<Prediction<T>> {
        let found = input
            .tokens
            .get(input.position)
            .ok_or(Error::PositionOutOfRange {
                position: input.position,
                len: input.tokens.len(),
            })?;
        if found != &self.abbreviation {
            return Err(Error::AbbreviationMismatch {
                position: input.position,
                expected: self.abbreviation.clone(),
                found: found.clone(),
            });
        }
        let probabilities = self.probabilities(input)?;
        let label = argmax(&probabilities);
        Ok(Prediction {
            probabilities,
            label,
        })
    }

    /// Mean cross-entropy over `batch` and its gradient for every trainable block.
    pub fn loss_and_grads(&self, batch: &[(ModelInput<'_>, usize)]) -> Result<(T, Weights<T>)> {
        if batch.is_empty() {
            return Err(Error::Empty("batch"));
        }
        let k = self.num_classes();
        let mut grads = self.weights.zeros_like();
        let mut total = T::zero();
        let inv_n = T::one() / lit::<T>(batch.len() as f64);
        for (input, label) in batch {
            if *label >= k {
                return Err(Error::LabelOutOfRange {
                    label: *label,
                    classes: k,
                });
            }
            let pass = self.forward(input)?;
            let probs = softmax(&pass.head.logits);
            let loss = -probs[*label].ln();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    key: sentence_key(input.tokens),
                });
            }
            total += loss;
            let d_logits: Vec<T> = probs
                .iter()
                .enumerate()
                .map(|(c, &p)| (if c == *label { p - T::one() } else { p }) * inv_n)
                .collect();
            self.backward(input, &pass, &d_logits, &mut grads);
        }
        Ok((total * inv_n, grads))
    }
}

/// Resolves the contextual record an instance needs, if any.
pub fn fetch_contextual(
    provider: Provider,
    source: Option<&dyn ContextualSource>,
    tokens: &[String],
) -> Result<Option<ContextualLayerRecord>> {
    if !provider.needs_contextual() {
        return Ok(None);
    }
    let source = source.ok_or_else(|| {
        Error::ProviderMismatch(format!(
            "provider {provider} needs a contextual embedding file"
        ))
    })?;
    let key = sentence_key(tokens);
    match source.record(&key)? {
        Some(r) => Ok(Some(r)),
        None => Err(Error::MissingContextual(key)),
    }
}

/// Adapts a model plus its contextual source to the metrics predictor interface.
pub struct ModelPredictor<'a, T> {
    pub model: &'a ClassifierModel<T>,
    pub contextual: Option<&'a dyn ContextualSource>,
}

impl<T: Scalar> Predictor for ModelPredictor<'_, T> {
    fn predict_label(&self, instance: &LabeledInstance) -> Result<usize> {
        let rec = fetch_contextual(self.model.provider, self.contextual, &instance.tokens)?;
        let input = ModelInput {
            tokens: &instance.tokens,
            position: instance.position,
            contextual: rec.as_ref(),
        };
        Ok(self.model.predict(&input)?.label)
    }
}
