//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always reach stdout; any failure exits nonzero.

mod common;

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::BufReader;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use abbrev_core::classifier::{
    train_classifier, Architecture, ClassifierModel, ModelInput, ModelPredictor, Provider,
    TrainConfig,
};
use abbrev_core::corpus::parse_corpus;
use abbrev_core::dataset::{build_datasets, sentence_key, split_instances};
use abbrev_core::embedding::{ContextualLayerRecord, Vocabulary};
use abbrev_core::expansion::{decode_model, encode_model, load_model, save_model, ModelRegistry};
use abbrev_core::extraction::extract_corpus;
use abbrev_core::grouping::{
    group_corpus, group_definitions, mesh_similarity, GroupingThresholds, MeshFeatureMap,
};
use abbrev_core::metrics::{
    accuracy, cohens_kappa, evaluate, macro_f1, majority_baseline, ConfusionMatrix,
};
use abbrev_core::synthetic::{generate, SyntheticConfig};
use abbrev_core::{Error, LabeledInstance};

use common::{
    brute_accuracy, brute_kappa, brute_macro_f1, gradient_check, precision_recall, read_hand_labels,
};

const MAJORITY_ACCURACY: f64 = 0.639;
const MAJORITY_MACRO_F1: f64 = 0.195;
const MAJORITY_MACRO_F1_TOL: f64 = 0.0005;
const METRIC_ORACLE_TOL: f64 = 1e-12;
const METRIC_CASES: usize = 1000;
const GRAD_STEP: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-4;
const E2E_MIN_ACCURACY: f64 = 0.95;
const E2E_MIN_KAPPA: f64 = 0.9;
const MESH_TOL: f64 = 1e-12;
const PERSIST_INPUTS: usize = 100;

type Check = fn() -> Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_majority_row() -> Result<String, String> {
    let labels: Vec<usize> = [(0, 639), (1, 58), (2, 58), (3, 245)]
        .into_iter()
        .flat_map(|(l, n)| std::iter::repeat_n(l, n))
        .collect();
    let test: Vec<LabeledInstance> = labels
        .iter()
        .map(|&label| LabeledInstance {
            abbreviation: "DAT".into(),
            tokens: vec!["DAT".into()],
            position: 0,
            label,
        })
        .collect();
    let majority = majority_baseline(&labels).map_err(|e| e.to_string())?;
    let r = evaluate(&majority, &test, 4)
        .map_err(|e| e.to_string())?
        .report;
    ensure(r.accuracy == MAJORITY_ACCURACY, || {
        format!("accuracy {}", r.accuracy)
    })?;
    ensure(
        (r.macro_f1 - MAJORITY_MACRO_F1).abs() <= MAJORITY_MACRO_F1_TOL,
        || format!("macro-F1 {}", r.macro_f1),
    )?;
    ensure(r.kappa == 0.0, || format!("kappa {}", r.kappa))?;
    Ok(format!(
        "accuracy={} macro_f1={:.6} kappa={}",
        r.accuracy, r.macro_f1, r.kappa
    ))
}

fn c2_metric_oracle() -> Result<String, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for case in 0..METRIC_CASES {
        let k = rng.gen_range(1..=6);
        let n = rng.gen_range(1..=500);
        // skewed label distributions reach the degenerate chance-agreement corner
        let tw: Vec<u32> = (0..k)
            .map(|_| rng.gen_range(0..5) * rng.gen_range(0..5) + u32::from(rng.gen_bool(0.2)))
            .collect();
        let pw: Vec<u32> = (0..k)
            .map(|_| rng.gen_range(0..5) * rng.gen_range(0..5) + u32::from(rng.gen_bool(0.2)))
            .collect();
        let draw = |w: &[u32], rng: &mut ChaCha8Rng| -> Vec<usize> {
            match WeightedIndex::new(w) {
                Ok(d) => (0..n).map(|_| d.sample(rng)).collect(),
                Err(_) => vec![0; n],
            }
        };
        let truth = draw(&tw, &mut rng);
        let mut pred = draw(&pw, &mut rng);
        if rng.gen_bool(0.2) {
            // near-perfect predictors
            pred.clone_from(&truth);
            let flips = rng.gen_range(0..3);
            for _ in 0..flips {
                let i = rng.gen_range(0..n);
                pred[i] = rng.gen_range(0..k);
            }
        }
        let cm = ConfusionMatrix::from_pairs(k, truth.iter().copied().zip(pred.iter().copied()))
            .map_err(|e| e.to_string())?;
        let pairs = [
            (accuracy(&cm).unwrap(), brute_accuracy(&truth, &pred)),
            (macro_f1(&cm).unwrap(), brute_macro_f1(&truth, &pred, k)),
            (cohens_kappa(&cm).unwrap(), brute_kappa(&truth, &pred, k)),
        ];
        for (got, want) in pairs {
            let d = (got - want).abs();
            worst = worst.max(d);
            ensure(d <= METRIC_ORACLE_TOL, || {
                format!("case {case}: {got} vs {want}")
            })?;
        }
    }
    Ok(format!("{METRIC_CASES} cases, max abs diff {worst:e}"))
}

fn c3_gradients() -> Result<String, String> {
    let (d, h, k, l) = (2, 3, 2, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sentences: Vec<Vec<String>> = ["ER stress was high", "the ER room triage"]
        .iter()
        .map(|s| s.split(' ').map(str::to_string).collect())
        .collect();
    let records: Vec<ContextualLayerRecord> = sentences
        .iter()
        .map(|s| {
            assert_eq!(s.len(), l);
            let mut layer = || {
                (0..l * d)
                    .map(|_| rng.gen_range(-1.0f32..1.0))
                    .collect::<Vec<_>>()
            };
            ContextualLayerRecord {
                key: sentence_key(s),
                len: l,
                dim: d,
                layers: [layer(), layer(), layer()],
            }
        })
        .collect();
    let arch = Architecture {
        hidden: h,
        ffn_widths: vec![4],
        embed_dim: d,
    };
    let labels = (0..k).map(|i| format!("sense {i}")).collect();
    let mut model = ClassifierModel::<f64>::init(
        "ER",
        Provider::ContextualBiLstm,
        labels,
        None,
        d,
        &arch,
        3,
        &mut rng,
    )
    .map_err(|e| e.to_string())?;
    // move mixing logits and gamma away from their symmetric initial values
    for block in model.weights.blocks_mut() {
        for v in block.iter_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    let batch = vec![
        (
            ModelInput {
                tokens: &sentences[0],
                position: 0,
                contextual: Some(&records[0]),
            },
            0,
        ),
        (
            ModelInput {
                tokens: &sentences[1],
                position: 1,
                contextual: Some(&records[1]),
            },
            1,
        ),
    ];
    let (worst, checked, bad) = gradient_check(&model, &batch, GRAD_STEP, GRAD_REL_TOL);
    ensure(checked == model.weights.num_params(), || {
        "not every parameter checked".into()
    })?;
    ensure(model.weights.mixing.is_some(), || {
        "mixing weights absent".into()
    })?;
    ensure(bad.is_empty(), || {
        format!(
            "{} entries above tolerance, first {:?}",
            bad.len(),
            bad.first()
        )
    })?;
    Ok(format!(
        "{checked} parameters, max relative error {worst:e}"
    ))
}

fn c4_synthetic_end_to_end() -> Result<String, String> {
    let seed = 4;
    let corpus = generate(&SyntheticConfig {
        abstracts: 200,
        seed,
        ..SyntheticConfig::default()
    });
    let raw = extract_corpus(&corpus.records);
    let inventories = group_corpus(&raw, &MeshFeatureMap::new(), GroupingThresholds::default())
        .map_err(|e| e.to_string())?;
    let built = build_datasets(&inventories, &raw, None, None, seed).map_err(|e| e.to_string())?;
    let planted: BTreeSet<&str> = corpus
        .truth
        .iter()
        .map(|t| t.abbreviation.as_str())
        .collect();
    let names: BTreeSet<&str> = built
        .datasets
        .iter()
        .map(|d| d.abbreviation.as_str())
        .collect();
    ensure(names == planted, || {
        format!("datasets {names:?}, planted {planted:?}")
    })?;
    let config = TrainConfig {
        seed,
        ..TrainConfig::default()
    };
    let results: Vec<(String, f64, f64, usize)> = built
        .datasets
        .par_iter()
        .map(|d| {
            let t = train_classifier::<f32>(d, Provider::StaticBiLstm, None, &config)?;
            let predictor = ModelPredictor {
                model: &t.model,
                contextual: None,
            };
            let r = evaluate(&predictor, &d.test, d.num_classes())?.report;
            Ok((d.abbreviation.clone(), r.accuracy, r.kappa, d.num_classes()))
        })
        .collect::<Result<_, Error>>()
        .map_err(|e| e.to_string())?;
    let summary: Vec<String> = results
        .iter()
        .map(|(a, acc, kappa, k)| format!("{a}(K={k}) acc={acc:.3} kappa={kappa:.3}"))
        .collect();
    for (a, acc, kappa, _) in &results {
        ensure(*acc >= E2E_MIN_ACCURACY && *kappa >= E2E_MIN_KAPPA, || {
            format!(
                "{a}: accuracy {acc:.4}, kappa {kappa:.4}; {}",
                summary.join(", ")
            )
        })?;
    }
    Ok(summary.join(", "))
}

fn c5_extraction_fixture() -> Result<String, String> {
    let f = File::open(common::fixture("hand_labeled_corpus.tsv")).map_err(|e| e.to_string())?;
    let parsed = parse_corpus(BufReader::new(f)).map_err(|e| e.to_string())?;
    ensure(
        parsed.records.len() == 50 && parsed.errors.is_empty(),
        || "fixture did not parse to 50 abstracts".into(),
    )?;
    let found: Vec<_> = extract_corpus(&parsed.records)
        .into_iter()
        .map(|r| {
            (
                r.abstract_id,
                r.sentence_index,
                r.abbreviation,
                r.raw_definition,
            )
        })
        .collect();
    let gold = read_hand_labels();
    let (p, r, tp) = precision_recall(&found, &gold);
    ensure(p == 1.0 && r == 1.0, || {
        format!("precision {p}, recall {r}")
    })?;
    Ok(format!(
        "{tp} of {} labeled occurrences, precision={p} recall={r}",
        gold.len()
    ))
}

fn c6_split_rule() -> Result<String, String> {
    for n in [10, 100, 9_999, 10_000, 10_001, 30_000] {
        let held = if n > 10_000 { 1_000 } else { n / 10 };
        let s = split_instances((0..n).collect::<Vec<usize>>(), 6).map_err(|e| e.to_string())?;
        ensure(
            s.dev.len() == held && s.test.len() == held && s.train.len() == n - 2 * held,
            || format!("n={n}: {}/{}/{}", s.train.len(), s.dev.len(), s.test.len()),
        )?;
        let mut all: Vec<usize> = s
            .train
            .iter()
            .chain(&s.dev)
            .chain(&s.test)
            .copied()
            .collect();
        all.sort_unstable();
        ensure(all == (0..n).collect::<Vec<_>>(), || {
            format!("n={n}: not a partition")
        })?;
        let again =
            split_instances((0..n).collect::<Vec<usize>>(), 6).map_err(|e| e.to_string())?;
        ensure(again == s, || format!("n={n}: seed did not reproduce"))?;
    }
    Ok("n in {10, 100, 9999, 10000, 10001, 30000}".into())
}

fn c7_grouping_fixture() -> Result<String, String> {
    let inv = group_definitions(
        "ED",
        ["emergency department", "emergency departments"],
        &MeshFeatureMap::new(),
        GroupingThresholds {
            mesh: 0.5,
            edit: 0.2,
        },
    )
    .map_err(|e| e.to_string())?;
    ensure(inv.len() == 1, || format!("{} groups", inv.len()))?;
    let a: BTreeSet<u32> = [1, 2].into();
    let b: BTreeSet<u32> = (1..=8).collect();
    let s = mesh_similarity(&a, &b);
    ensure((s - 0.5).abs() <= MESH_TOL, || {
        format!("mesh similarity {s}")
    })?;
    Ok(format!("variants merged into 1 group, mesh similarity {s}"))
}

fn c8_persistence() -> Result<String, String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let words = ["cells", "stress", "triage", "tamoxifen", "the", "of"];
    let arch = Architecture {
        hidden: 5,
        ffn_widths: vec![6],
        embed_dim: 4,
    };
    let labels: Vec<String> = [
        "endoplasmic reticulum",
        "emergency room",
        "estrogen receptor",
    ]
    .map(String::from)
    .to_vec();
    let mut rejected = 0;
    for provider in Provider::ALL {
        let vocab = provider
            .needs_vocabulary()
            .then(|| Vocabulary::from_tokens(words.iter().copied().chain(["ER"])));
        let model = ClassifierModel::<f64>::init(
            "ER",
            provider,
            labels.clone(),
            vocab,
            3,
            &arch,
            8,
            &mut rng,
        )
        .map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("{provider}.bin"));
        save_model(&model, &path).map_err(|e| e.to_string())?;
        let loaded: ClassifierModel<f64> = load_model(&path).map_err(|e| e.to_string())?;
        for _ in 0..PERSIST_INPUTS {
            let len = rng.gen_range(1..8);
            let mut tokens: Vec<String> = (0..len)
                .map(|_| words.choose(&mut rng).unwrap().to_string())
                .collect();
            let position = rng.gen_range(0..len);
            tokens[position] = "ER".into();
            let mut layer = || {
                (0..len * 3)
                    .map(|_| rng.gen_range(-1.0f32..1.0))
                    .collect::<Vec<_>>()
            };
            let record = ContextualLayerRecord {
                key: sentence_key(&tokens),
                len,
                dim: 3,
                layers: [layer(), layer(), layer()],
            };
            let input = ModelInput {
                tokens: &tokens,
                position,
                contextual: provider.needs_contextual().then_some(&record),
            };
            let a = model.probabilities(&input).map_err(|e| e.to_string())?;
            let b = loaded.probabilities(&input).map_err(|e| e.to_string())?;
            let same = a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits());
            ensure(same, || {
                format!("{provider}: predictions differ after reload")
            })?;
        }

        let bytes = encode_model(&model).map_err(|e| e.to_string())?;
        let mut corruptions: Vec<Vec<u8>> = (0..bytes.len())
            .step_by(7)
            .map(|n| bytes[..n].to_vec())
            .collect();
        for _ in 0..50 {
            let mut c = bytes.clone();
            let i = rng.gen_range(0..c.len());
            c[i] ^= 1 << rng.gen_range(0..8);
            corruptions.push(c);
        }
        for c in &corruptions {
            ensure(
                matches!(decode_model::<f64>(c), Err(Error::Format { .. })),
                || format!("{provider}: corrupted bytes accepted"),
            )?;
            rejected += 1;
        }
        let bad_path = dir.path().join(format!("{provider}.corrupt.bin"));
        std::fs::write(&bad_path, &corruptions[corruptions.len() - 1])
            .map_err(|e| e.to_string())?;
        let registry =
            ModelRegistry::<f64>::new(["ER"], HashMap::from([("ER".to_string(), bad_path)]), None)
                .map_err(|e| e.to_string())?;
        ensure(
            registry.get("ER").is_err() && registry.cached() == 0,
            || format!("{provider}: registry kept state from a corrupt file"),
        )?;
    }
    Ok(format!(
        "4 providers x {PERSIST_INPUTS} inputs bit-identical, {rejected} corrupted encodings rejected"
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, Duration, Check); 8] = [
        (
            "1 majority row on DAT proportions",
            Duration::from_secs(1),
            c1_majority_row,
        ),
        (
            "2 metric oracle equivalence",
            Duration::from_secs(10),
            c2_metric_oracle,
        ),
        (
            "3 contextual biLSTM gradient check",
            Duration::from_secs(30),
            c3_gradients,
        ),
        (
            "4 synthetic end-to-end",
            Duration::from_secs(300),
            c4_synthetic_end_to_end,
        ),
        (
            "5 extraction on hand-labeled fixture",
            Duration::from_secs(10),
            c5_extraction_fixture,
        ),
        ("6 split rule", Duration::from_secs(10), c6_split_rule),
        (
            "7 grouping fixture",
            Duration::from_secs(1),
            c7_grouping_fixture,
        ),
        ("8 persistence", Duration::from_secs(30), c8_persistence),
    ];
    let mut failures = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let outcome = outcome.and_then(|detail| {
            if elapsed <= budget {
                Ok(detail)
            } else {
                Err(format!("{detail}; over the {budget:?} budget"))
            }
        });
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail} [{elapsed:.2?} of {budget:?}]"),
            Err(why) => {
                failures += 1;
                println!("FAIL criterion {name}: {why} [{elapsed:.2?} of {budget:?}]");
            }
        }
    }
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
