use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde_json::{json, Value};

use abbrev_core::atomic::write_atomic;
use abbrev_core::classifier::{
    train_classifier, AdamConfig, Architecture, ModelPredictor, TrainConfig, TrainedModel,
};
use abbrev_core::corpus::{parse_corpus, tokenize_abstract, AbstractRecord};
use abbrev_core::dataset::{
    assemble_datasets, build_datasets, compute_stats, read_instances, write_datasets,
    AbbrevDataset, Split,
};
use abbrev_core::embedding::{ContextualFile, ContextualSource};
use abbrev_core::expansion::{
    expand_sentence, load_model, save_model, save_training_log, write_expansions, write_manifest,
    ModelRegistry, EXPANSION_HEADER,
};
use abbrev_core::extraction::{
    extract_corpus, read_raw_instances, write_raw_instances, RawLabeledInstance,
};
use abbrev_core::grouping::{
    group_corpus, read_inventories, write_inventories, GroupingThresholds, MeshFeatureMap,
};
use abbrev_core::metrics::{
    aggregate, evaluate as score, majority_baseline, write_report_tsv, Evaluation, MetricsReport,
};
use abbrev_core::{Error, LabeledInstance, SenseInventory};

use crate::{
    BuildArgs, CliError, EvaluateArgs, ExpandArgs, ExtractArgs, GroupArgs, StatsArgs, TrainArgs,
};

type Outcome = Result<Value, CliError>;

/// Abbreviation, its evaluation, and the label names for its confusion matrix.
type Scored = (String, Evaluation, Vec<String>);

fn open(path: &Path) -> Result<BufReader<File>, Error> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })
}

/// Errors from reading `path` are reported with the path attached.
fn with_path<T>(path: &Path, r: Result<T, Error>) -> Result<T, Error> {
    r.map_err(|e| match e {
        Error::Parse { line, message } => Error::Parse {
            line,
            message: format!("{}: {message}", path.display()),
        },
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        Error::Io(source) => Error::File {
            path: path.to_path_buf(),
            source,
        },
        other => other,
    })
}

fn read_corpus(path: &Path) -> Result<(Vec<AbstractRecord>, usize), Error> {
    let parsed = with_path(path, parse_corpus(open(path)?))?;
    for e in &parsed.errors {
        eprintln!("warning: {}: {e}", path.display());
    }
    Ok((parsed.records, parsed.errors.len()))
}

fn read_raw(path: &Path) -> Result<Vec<RawLabeledInstance>, Error> {
    with_path(path, read_raw_instances(open(path)?))
}

fn read_inventory_file(path: &Path) -> Result<Vec<SenseInventory>, Error> {
    with_path(path, read_inventories(open(path)?))
}

fn read_instance_file(path: &Path) -> Result<Vec<(Option<Split>, LabeledInstance)>, Error> {
    with_path(path, read_instances(open(path)?))
}

fn read_list(path: &Path) -> Result<HashSet<String>, Error> {
    let mut out = HashSet::new();
    for line in open(path)?.lines() {
        let line = line.map_err(|source| Error::File {
            path: path.to_path_buf(),
            source,
        })?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            out.insert(t.to_string());
        }
    }
    Ok(out)
}

fn open_contextual(path: Option<&PathBuf>) -> Result<Option<ContextualFile>, Error> {
    path.map(|p| with_path(p, ContextualFile::open(p)))
        .transpose()
}

/// File-system-safe stem for an abbreviation.
fn file_stem(abbreviation: &str) -> String {
    abbreviation
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

/// Distinct stems for `abbreviations`, suffixing later collisions with their index.
fn unique_stems(abbreviations: &[&str]) -> Vec<String> {
    let mut used = HashSet::new();
    abbreviations
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let stem = file_stem(a);
            let stem = if used.contains(&stem.to_lowercase()) {
                format!("{stem}-{i}")
            } else {
                stem
            };
            used.insert(stem.to_lowercase());
            stem
        })
        .collect()
}

pub fn extract(a: ExtractArgs) -> Outcome {
    let (records, skipped) = read_corpus(&a.corpus)?;
    let instances = extract_corpus(&records);
    write_atomic(&a.out, |w| write_raw_instances(w, &instances))?;
    let abbreviations: BTreeSet<&str> = instances.iter().map(|i| i.abbreviation.as_str()).collect();
    Ok(json!({
        "command": "extract",
        "abstracts": records.len(),
        "skipped_lines": skipped,
        "instances": instances.len(),
        "abbreviations": abbreviations.len(),
        "out": a.out,
    }))
}

pub fn group(a: GroupArgs) -> Outcome {
    let raw = read_raw(&a.raw)?;
    let mesh = match &a.mesh {
        Some(p) => with_path(p, MeshFeatureMap::read(open(p)?))?,
        None => MeshFeatureMap::new(),
    };
    let thresholds = GroupingThresholds {
        mesh: a.theta_mesh,
        edit: a.theta_edit,
    };
    let inventories = group_corpus(&raw, &mesh, thresholds)?;
    write_atomic(&a.out, |w| write_inventories(w, &inventories))?;
    Ok(json!({
        "command": "group",
        "abbreviations": inventories.len(),
        "groups": inventories.iter().map(SenseInventory::len).sum::<usize>(),
        "theta_mesh": a.theta_mesh,
        "theta_edit": a.theta_edit,
        "out": a.out,
    }))
}

pub fn build(a: BuildArgs) -> Outcome {
    let raw = read_raw(&a.raw)?;
    let inventories = read_inventory_file(&a.inventory)?;
    let allow = a.allow.as_deref().map(read_list).transpose()?;
    let deny = a.deny.as_deref().map(read_list).transpose()?;
    let report = build_datasets(&inventories, &raw, allow.as_ref(), deny.as_ref(), a.seed)?;
    for (abbr, reason) in &report.dropped {
        eprintln!("dropped {abbr}: {reason}");
    }
    for (abbr, n) in &report.too_small {
        eprintln!("dropped {abbr}: only {n} labeled instances");
    }
    let kept: Vec<SenseInventory> = report
        .datasets
        .iter()
        .map(|d| d.inventory.clone())
        .collect();
    write_atomic(&a.out, |w| write_datasets(w, &report.datasets))?;
    write_atomic(&a.inventory_out, |w| write_inventories(w, &kept))?;
    Ok(json!({
        "command": "build",
        "seed": a.seed,
        "kept": report.datasets.len(),
        "dropped": report.dropped.len() + report.too_small.len(),
        "instances": report.datasets.iter().map(AbbrevDataset::len).sum::<usize>(),
        "unmatched": report.unmatched,
        "out": a.out,
        "inventory_out": a.inventory_out,
    }))
}

fn load_datasets(dataset: &Path, inventory: &Path, seed: u64) -> Result<Vec<AbbrevDataset>, Error> {
    let rows = read_instance_file(dataset)?;
    let inventories = read_inventory_file(inventory)?;
    with_path(dataset, assemble_datasets(rows, &inventories, seed))
}

pub fn train(a: TrainArgs) -> Outcome {
    if a.provider.needs_contextual() && a.contextual.is_none() {
        return Err(CliError::Usage(format!(
            "provider {} requires --contextual",
            a.provider
        )));
    }
    let mut datasets = load_datasets(&a.dataset, &a.inventory, a.seed)?;
    if !a.abbreviations.is_empty() {
        let wanted: HashSet<&str> = a.abbreviations.iter().map(String::as_str).collect();
        if let Some(missing) = a
            .abbreviations
            .iter()
            .find(|w| !datasets.iter().any(|d| &d.abbreviation == *w))
        {
            return Err(
                Error::Invalid(format!("abbreviation {missing:?} is not in the dataset")).into(),
            );
        }
        datasets.retain(|d| wanted.contains(d.abbreviation.as_str()));
    }
    let contextual = open_contextual(a.contextual.as_ref())?;
    let source: Option<&dyn ContextualSource> =
        contextual.as_ref().map(|c| c as &dyn ContextualSource);
    let config = TrainConfig {
        arch: Architecture {
            hidden: a.hidden as usize,
            ffn_widths: a.ffn_width.iter().map(|w| w.get()).collect(),
            embed_dim: a.embed_dim as usize,
        },
        adam: AdamConfig {
            lr: a.learning_rate,
            ..AdamConfig::default()
        },
        batch_size: a.batch_size as usize,
        max_epochs: a.max_epochs as usize,
        patience: a.patience as usize,
        clip_norm: (a.clip_norm > 0.0).then_some(a.clip_norm),
        vocab_min_count: a.vocab_min_count,
        vocab_max_size: a.vocab_max_size as usize,
        seed: a.seed,
    };
    std::fs::create_dir_all(&a.out_dir).map_err(|source| Error::File {
        path: a.out_dir.clone(),
        source,
    })?;
    let names: Vec<&str> = datasets.iter().map(|d| d.abbreviation.as_str()).collect();
    let stems = unique_stems(&names);
    let trained: Vec<TrainedModel<f32>> = datasets
        .par_iter()
        .map(|d| train_classifier::<f32>(d, a.provider, source, &config))
        .collect::<Result<_, Error>>()?;

    let mut manifest = Vec::new();
    let mut dev_accuracy = Vec::new();
    for (t, stem) in trained.iter().zip(&stems) {
        let file = format!("{stem}.bin");
        let path = a.out_dir.join(&file);
        save_model(&t.model, &path)?;
        save_training_log(&t.log, &path)?;
        let best = t.log.epochs.iter().find(|e| e.epoch == t.log.best_epoch);
        let acc = best.map_or(0.0, |e| e.dev_accuracy);
        eprintln!(
            "trained {}: best epoch {} of {}, dev accuracy {acc:.4}",
            t.model.abbreviation,
            t.log.best_epoch,
            t.log.epochs.len()
        );
        dev_accuracy.push(acc);
        manifest.push((t.model.abbreviation.clone(), PathBuf::from(file)));
    }
    let manifest_path = a.out_dir.join("manifest.tsv");
    let vocabulary_path = a.out_dir.join("vocabulary.txt");
    write_atomic(&manifest_path, |w| write_manifest(w, &manifest))?;
    write_atomic(&vocabulary_path, |w| {
        for n in names.iter().collect::<BTreeSet<_>>() {
            writeln!(w, "{n}")?;
        }
        Ok(())
    })?;
    let mean_dev = if dev_accuracy.is_empty() {
        0.0
    } else {
        dev_accuracy.iter().sum::<f64>() / dev_accuracy.len() as f64
    };
    Ok(json!({
        "command": "train",
        "provider": a.provider.name(),
        "seed": a.seed,
        "models": trained.len(),
        "mean_dev_accuracy": mean_dev,
        "manifest": manifest_path,
        "vocabulary": vocabulary_path,
    }))
}

fn group_rows(
    rows: Vec<(Option<Split>, LabeledInstance)>,
    keep: impl Fn(Option<Split>) -> bool,
) -> BTreeMap<String, Vec<LabeledInstance>> {
    let mut out: BTreeMap<String, Vec<LabeledInstance>> = BTreeMap::new();
    for (split, inst) in rows {
        if keep(split) {
            out.entry(inst.abbreviation.clone()).or_default().push(inst);
        }
    }
    out
}

fn write_confusion(
    dir: &Path,
    stem: &str,
    eval: &Evaluation,
    labels: &[String],
) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|source| Error::File {
        path: dir.to_path_buf(),
        source,
    })?;
    write_atomic(dir.join(format!("{stem}.confusion.tsv")), |w| {
        eval.confusion.write_tsv(w, labels)
    })
}

pub fn evaluate(a: EvaluateArgs) -> Outcome {
    let rows = read_instance_file(&a.test)?;
    let mut results: Vec<Scored> = Vec::new();
    let mut skipped = Vec::new();

    if a.majority {
        let inventories =
            read_inventory_file(a.inventory.as_deref().expect("clap requires inventory"))?;
        let train = group_rows(rows.clone(), |s| s == Some(Split::Train));
        let test = group_rows(rows, |s| s.is_none() || s == Some(Split::Test));
        for (abbr, instances) in &test {
            let Some(inv) = inventories.iter().find(|i| &i.abbreviation == abbr) else {
                skipped.push(abbr.clone());
                continue;
            };
            let labels: Vec<usize> = train
                .get(abbr)
                .map_or(Vec::new(), |t| t.iter().map(|i| i.label).collect());
            if labels.is_empty() {
                skipped.push(abbr.clone());
                continue;
            }
            let predictor = majority_baseline(&labels)?;
            let eval = score(&predictor, instances, inv.len())?;
            results.push((abbr.clone(), eval, inv.canonicals()));
        }
    } else {
        let model_paths: Vec<PathBuf> = match &a.manifest {
            Some(m) => {
                let base = m.parent().unwrap_or(Path::new(""));
                let map = with_path(m, abbrev_core::expansion::read_manifest(open(m)?, base))?;
                map.into_values().collect()
            }
            None if a.models.is_empty() => {
                return Err(CliError::Usage(
                    "evaluate needs --model, --manifest or --majority".into(),
                ))
            }
            None => a.models.clone(),
        };
        let contextual = open_contextual(a.contextual.as_ref())?;
        let source: Option<&dyn ContextualSource> =
            contextual.as_ref().map(|c| c as &dyn ContextualSource);
        let test = group_rows(rows, |s| s.is_none() || s == Some(Split::Test));
        let models = model_paths
            .iter()
            .map(load_model::<f32>)
            .collect::<Result<Vec<_>, Error>>()?;
        let mut by_abbr = BTreeMap::new();
        for m in models {
            if by_abbr.insert(m.abbreviation.clone(), m).is_some() {
                return Err(Error::Invalid("two models for the same abbreviation".into()).into());
            }
        }
        let scored: Vec<Result<Option<Scored>, Error>> = test
            .par_iter()
            .map(|(abbr, instances)| {
                let Some(model) = by_abbr.get(abbr) else {
                    return Ok(None);
                };
                let predictor = ModelPredictor {
                    model,
                    contextual: source,
                };
                let eval = score(&predictor, instances, model.num_classes())?;
                Ok(Some((abbr.clone(), eval, model.labels.clone())))
            })
            .collect();
        for (r, abbr) in scored.into_iter().zip(test.keys()) {
            match r? {
                Some(x) => results.push(x),
                None => skipped.push(abbr.clone()),
            }
        }
    }
    for abbr in &skipped {
        eprintln!("skipped {abbr}: no model or baseline");
    }
    if results.is_empty() {
        return Err(Error::Empty(
            "evaluation: no abbreviation had both a model and test instances",
        )
        .into());
    }
    let names: Vec<&str> = results.iter().map(|(a, _, _)| a.as_str()).collect();
    let stems = unique_stems(&names);
    if let Some(dir) = &a.confusion_dir {
        for ((_, eval, labels), stem) in results.iter().zip(&stems) {
            write_confusion(dir, stem, eval, labels)?;
        }
    }
    let rows: Vec<(String, MetricsReport)> = results
        .iter()
        .map(|(a, e, _)| (a.clone(), e.report.clone()))
        .collect();
    match &a.out {
        Some(p) => write_atomic(p, |w| write_report_tsv(w, &rows))?,
        None => write_report_tsv(std::io::stdout().lock(), &rows)?,
    }
    let reports: Vec<MetricsReport> = rows.into_iter().map(|(_, r)| r).collect();
    let agg = aggregate(&reports)?;
    Ok(json!({
        "command": "evaluate",
        "baseline": if a.majority { "majority" } else { "model" },
        "abbreviations": reports.len(),
        "skipped": skipped.len(),
        "accuracy": agg.accuracy.mean,
        "macro_f1": agg.macro_f1.mean,
        "kappa": agg.kappa.mean,
    }))
}

pub fn expand(a: ExpandArgs) -> Outcome {
    let mut registry = with_path(
        &a.manifest,
        ModelRegistry::<f32>::open(&a.vocabulary, &a.manifest, a.cache_capacity),
    )?;
    if let Some(p) = a.provider {
        registry = registry.expect_provider(p);
    }
    let contextual = open_contextual(a.contextual.as_ref())?;
    let source: Option<&dyn ContextualSource> =
        contextual.as_ref().map(|c| c as &dyn ContextualSource);
    let (records, skipped_lines) = read_corpus(&a.corpus)?;
    let sentences: Vec<(String, Vec<String>)> = records
        .iter()
        .flat_map(tokenize_abstract)
        .map(|s| (format!("{}:{}", s.abstract_id, s.sentence_index), s.tokens))
        .collect();
    let expanded = sentences
        .par_iter()
        .map(|(_, tokens)| expand_sentence(tokens, &registry, source))
        .collect::<Result<Vec<_>, Error>>()?;
    let mut n_expansions = 0;
    let mut n_skips = 0;
    for ((sid, _), out) in sentences.iter().zip(&expanded) {
        for s in &out.skips {
            eprintln!(
                "skip {sid} position {} {}: no model at {}",
                s.position,
                s.abbreviation,
                s.locator.display()
            );
        }
        n_expansions += out.expansions.len();
        n_skips += out.skips.len();
    }
    write_atomic(&a.out, |w| {
        writeln!(w, "{EXPANSION_HEADER}")?;
        for ((sid, _), out) in sentences.iter().zip(&expanded) {
            write_expansions(&mut *w, sid, &out.expansions)?;
        }
        Ok(())
    })?;
    Ok(json!({
        "command": "expand",
        "abstracts": records.len(),
        "skipped_lines": skipped_lines,
        "sentences": sentences.len(),
        "expansions": n_expansions,
        "skips": n_skips,
        "models_loaded": registry.loads(),
        "out": a.out,
    }))
}

pub fn stats(a: StatsArgs) -> Outcome {
    let datasets = load_datasets(&a.dataset, &a.inventory, 0)?;
    let stats = compute_stats(&datasets)?;
    println!("{stats}");
    if let Some(p) = &a.out {
        write_atomic(p, |w| stats.write_tsv(w))?;
    }
    Ok(json!({
        "command": "stats",
        "abbreviations": stats.n_abbreviations,
        "avg_instances": stats.avg_instances,
        "avg_definitions": stats.avg_definitions,
        "avg_dominant_pct": stats.avg_dominant_pct,
    }))
}
