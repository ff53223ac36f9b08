use std::collections::HashMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{AbbrevDataset, LabeledInstance};
use crate::embedding::{ContextualLayerRecord, ContextualSource, Vocabulary};
use crate::error::{Error, Result};
use crate::scalar::{lit, Scalar};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::model::{fetch_contextual, Architecture, ClassifierModel, ModelInput, Provider};
use super::params::clip_global_norm;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub arch: Architecture,
    pub adam: AdamConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    /// Global gradient-norm cap; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub vocab_min_count: usize,
    pub vocab_max_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            arch: Architecture::default(),
            adam: AdamConfig::default(),
            batch_size: 32,
            max_epochs: 50,
            patience: 5,
            clip_norm: Some(5.0),
            vocab_min_count: 1,
            vocab_max_size: 20_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_accuracy: f64,
    /// Mean cross-entropy on dev; breaks dev accuracy ties.
    pub dev_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainingLog {
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch\ttrain_loss\tdev_accuracy\tdev_loss\tbest")?;
        for e in &self.epochs {
            writeln!(
                w,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{}",
                e.epoch,
                e.train_loss,
                e.dev_accuracy,
                e.dev_loss,
                u8::from(e.epoch == self.best_epoch)
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel<T> {
    pub model: ClassifierModel<T>,
    pub log: TrainingLog,
}

struct Prepared<'a> {
    instance: &'a LabeledInstance,
    contextual: Option<ContextualLayerRecord>,
}

impl Prepared<'_> {
    fn input(&self) -> ModelInput<'_> {
        ModelInput {
            tokens: &self.instance.tokens,
            position: self.instance.position,
            contextual: self.contextual.as_ref(),
        }
    }
}

fn prepare<'a>(
    instances: &'a [LabeledInstance],
    provider: Provider,
    source: Option<&dyn ContextualSource>,
    cache: &mut HashMap<String, ContextualLayerRecord>,
) -> Result<Vec<Prepared<'a>>> {
    instances
        .iter()
        .map(|instance| {
            let contextual = if provider.needs_contextual() {
                let key = instance.key();
                if let Some(r) = cache.get(&key) {
                    Some(r.clone())
                } else {
                    let r =
                        fetch_contextual(provider, source, &instance.tokens)?.expect("contextual");
                    cache.insert(key, r.clone());
                    Some(r)
                }
            } else {
                None
            };
            Ok(Prepared {
                instance,
                contextual,
            })
        })
        .collect()
}

/// Accuracy and mean cross-entropy.
fn dev_scores<T: Scalar>(model: &ClassifierModel<T>, data: &[Prepared<'_>]) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, f64::INFINITY));
    }
    let mut correct = 0usize;
    let mut loss = 0.0;
    for p in data {
        let pred = model.predict(&p.input())?;
        correct += usize::from(pred.label == p.instance.label);
        loss -= pred.probabilities[p.instance.label].to_f64_lossy().ln();
    }
    let n = data.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

/// Builds a fresh model for `dataset` with the same initialization the trainer uses.
pub fn init_model<T: Scalar>(
    dataset: &AbbrevDataset,
    provider: Provider,
    contextual: Option<&dyn ContextualSource>,
    config: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ClassifierModel<T>> {
    let vocabulary = provider.needs_vocabulary().then(|| {
        Vocabulary::build(
            dataset.train.iter().map(|i| i.tokens.as_slice()),
            config.vocab_min_count,
            config.vocab_max_size,
        )
    });
    let input_dim = match (provider.needs_contextual(), contextual) {
        (true, Some(src)) => src.dim(),
        (true, None) => {
            return Err(Error::ProviderMismatch(format!(
                "provider {provider} needs a contextual embedding file"
            )))
        }
        (false, _) => 0,
    };
    ClassifierModel::init(
        &dataset.abbreviation,
        provider,
        dataset.inventory.canonicals(),
        vocabulary,
        input_dim,
        &config.arch,
        config.seed,
        rng,
    )
}

/// Minibatch Adam on the train split with early stopping on dev accuracy.
/// Returns the parameters of the best dev epoch, ranked by accuracy and then
/// by lower dev loss.
pub fn train_classifier<T: Scalar>(
    dataset: &AbbrevDataset,
    provider: Provider,
    contextual: Option<&dyn ContextualSource>,
    config: &TrainConfig,
) -> Result<TrainedModel<T>> {
    if dataset.train.is_empty() {
        return Err(Error::Empty("train split"));
    }
    if config.batch_size == 0 {
        return Err(Error::Invalid("batch size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model: ClassifierModel<T> =
        init_model(dataset, provider, contextual, config, &mut rng)?;

    let mut cache = HashMap::new();
    let train = prepare(&dataset.train, provider, contextual, &mut cache)?;
    let dev = prepare(&dataset.dev, provider, contextual, &mut cache)?;
    let dev_or_train = if dev.is_empty() { &train } else { &dev };

    let mut adam = AdamState::for_weights(config.adam, &model.weights);
    let mut best_weights = model.weights.clone();
    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    let mut log = TrainingLog::default();
    let mut stale = 0usize;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(ModelInput<'_>, usize)> = chunk
                .iter()
                .map(|&i| (train[i].input(), train[i].instance.label))
                .collect();
            let (loss, mut grads) = model.loss_and_grads(&batch)?;
            if let Some(max) = config.clip_norm {
                clip_global_norm(&mut grads, lit(max));
            }
            adam_step(&mut model.weights, &grads, &mut adam)?;
            loss_sum += loss.to_f64_lossy() * chunk.len() as f64;
        }
        let (dev_accuracy, dev_loss) = dev_scores(&model, dev_or_train)?;
        log.epochs.push(EpochLog {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            dev_accuracy,
            dev_loss,
        });
        // equal accuracy still improves when dev loss drops
        if dev_accuracy > best.0 || (dev_accuracy == best.0 && dev_loss < best.1) {
            best = (dev_accuracy, dev_loss);
            best_weights = model.weights.clone();
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    model.weights = best_weights;
    Ok(TrainedModel { model, log })
}
