//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library code it is used to check.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use std::path::PathBuf;

use abbrev_core::classifier::{ClassifierModel, ModelInput};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("fixtures")
        .join(name)
}

// ---------------------------------------------------------------------------
// Metrics, computed straight from the label lists.

pub fn brute_accuracy(truth: &[usize], pred: &[usize]) -> f64 {
    let hits = truth.iter().zip(pred).filter(|(t, p)| t == p).count();
    hits as f64 / truth.len() as f64
}

/// Harmonic mean of precision and recall, averaged over all `k` classes.
/// Undefined precision or recall counts as 0.
pub fn brute_macro_f1(truth: &[usize], pred: &[usize], k: usize) -> f64 {
    let mut sum = 0.0;
    for c in 0..k {
        let mut tp = 0usize;
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (&t, &p) in truth.iter().zip(pred) {
            match (t == c, p == c) {
                (true, true) => tp += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp == 0 {
            0.0
        } else {
            tp as f64 / (tp + fp) as f64
        };
        let recall = if tp + fn_ == 0 {
            0.0
        } else {
            tp as f64 / (tp + fn_) as f64
        };
        if precision + recall > 0.0 {
            sum += 2.0 * precision * recall / (precision + recall);
        }
    }
    sum / k as f64
}

/// `(p_o - p_e) / (1 - p_e)` evaluated as an exact fraction of counts.
/// When chance agreement is total the statistic is 1 for perfect agreement and 0 otherwise.
pub fn brute_kappa(truth: &[usize], pred: &[usize], k: usize) -> f64 {
    let n = truth.len() as i128;
    let observed = truth.iter().zip(pred).filter(|(t, p)| t == p).count() as i128;
    let mut chance = 0i128;
    for c in 0..k {
        let rows = truth.iter().filter(|&&t| t == c).count() as i128;
        let cols = pred.iter().filter(|&&p| p == c).count() as i128;
        chance += rows * cols;
    }
    let den = n * n - chance;
    if den == 0 {
        return if observed == n { 1.0 } else { 0.0 };
    }
    (observed * n - chance) as f64 / den as f64
}

// ---------------------------------------------------------------------------
// Definition-span search by exhaustive embedding.

const BOUNDARIES: [&str; 5] = ["(", ")", ",", ";", ":"];

/// True when the abbreviation characters embed, in order, into the
/// space-joined span with the first one at the start of a word. Tries every
/// embedding instead of a greedy scan.
pub fn embeds(span: &[String], abbr: &[char]) -> bool {
    let long: Vec<char> = span.join(" ").to_lowercase().chars().collect();
    fn go(long: &[char], abbr: &[char], from: usize, i: usize) -> bool {
        if i == abbr.len() {
            return true;
        }
        (from..long.len()).any(|p| {
            let starts_word = p == 0 || !long[p - 1].is_alphanumeric();
            long[p] == abbr[i] && (i > 0 || starts_word) && go(long, abbr, p + 1, i + 1)
        })
    }
    go(&long, abbr, 0, 0)
}

/// Number of trailing words in the shortest aligning suffix, if any.
pub fn brute_span(preceding: &[String], abbreviation: &str) -> Option<usize> {
    let abbr: Vec<char> = abbreviation
        .to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric())
        .collect();
    if abbr.is_empty() {
        return None;
    }
    let n = abbreviation.chars().count();
    let limit = (n + 5).min(2 * n);
    for k in 1..=limit.min(preceding.len()) {
        let span = &preceding[preceding.len() - k..];
        let newest = &span[0];
        if BOUNDARIES.contains(&newest.as_str()) || newest == abbreviation {
            return None;
        }
        if embeds(span, &abbr) {
            return Some(k);
        }
    }
    None
}

// ---------------------------------------------------------------------------
// Grouping.

/// Textbook dynamic-programming Levenshtein distance over chars.
pub fn levenshtein_dp(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = (d[i - 1][j] + 1)
                .min(d[i][j - 1] + 1)
                .min(d[i - 1][j - 1] + sub);
        }
    }
    d[a.len()][b.len()]
}

pub fn brute_edit_ratio(a: &str, b: &str) -> f64 {
    let a = a.to_lowercase();
    let b = b.to_lowercase();
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        0.0
    } else {
        levenshtein_dp(&a, &b) as f64 / longest as f64
    }
}

pub fn brute_mesh(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let shared = a.iter().filter(|x| b.contains(*x)).count();
    shared as f64 / ((a.len() * b.len()) as f64).sqrt()
}

/// Connected components by breadth-first search over an explicit edge
/// predicate, as sets of node indices.
pub fn bfs_components(
    n: usize,
    linked: impl Fn(usize, usize) -> bool,
) -> BTreeSet<BTreeSet<usize>> {
    let adj: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i && linked(i.min(j), i.max(j)))
                .collect()
        })
        .collect();
    let mut seen = vec![false; n];
    let mut out = BTreeSet::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([s]);
        seen[s] = true;
        while let Some(v) = queue.pop_front() {
            comp.insert(v);
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        out.insert(comp);
    }
    out
}

// ---------------------------------------------------------------------------
// Central finite differences.

#[derive(Debug)]
pub struct GradientMismatch {
    pub block: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative: f64,
}

/// Relative error with a floor on the denominator so that gradients that are
/// zero up to rounding compare on an absolute scale.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
}

/// Compares every analytic gradient entry against a central difference of
/// the mean batch loss. Returns the largest relative error and the entries
/// above `tolerance`.
pub fn gradient_check(
    model: &ClassifierModel<f64>,
    batch: &[(ModelInput<'_>, usize)],
    step: f64,
    tolerance: f64,
) -> (f64, usize, Vec<GradientMismatch>) {
    let (_, grads) = model.loss_and_grads(batch).expect("analytic gradients");
    let analytic: Vec<Vec<f64>> = grads.blocks().iter().map(|b| b.values.to_vec()).collect();
    let loss = |m: &ClassifierModel<f64>| m.loss_and_grads(batch).expect("loss").0;
    let mut probe = model.clone();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut bad = Vec::new();
    for (block, values) in analytic.iter().enumerate() {
        for (index, &a) in values.iter().enumerate() {
            let original = probe.weights.blocks_mut()[block][index];
            probe.weights.blocks_mut()[block][index] = original + step;
            let plus = loss(&probe);
            probe.weights.blocks_mut()[block][index] = original - step;
            let minus = loss(&probe);
            probe.weights.blocks_mut()[block][index] = original;
            let numeric = (plus - minus) / (2.0 * step);
            let relative = relative_error(a, numeric);
            worst = worst.max(relative);
            checked += 1;
            if relative > tolerance {
                bad.push(GradientMismatch {
                    block,
                    index,
                    analytic: a,
                    numeric,
                    relative,
                });
            }
        }
    }
    (worst, checked, bad)
}

// ---------------------------------------------------------------------------
// Hand-labeled extraction fixture.

/// `(abstract_id, sentence_index, abbreviation, definition)`, one per occurrence.
pub type OccurrenceKey = (String, usize, String, String);

pub fn read_hand_labels() -> Vec<OccurrenceKey> {
    let text = std::fs::read_to_string(fixture("hand_labels.tsv")).expect("hand labels");
    text.lines()
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            assert_eq!(f.len(), 4, "malformed label line {l:?}");
            (
                f[0].to_string(),
                f[1].parse().expect("sentence index"),
                f[2].to_string(),
                f[3].to_string(),
            )
        })
        .collect()
}

fn multiset(keys: &[OccurrenceKey]) -> BTreeMap<&OccurrenceKey, usize> {
    let mut m = BTreeMap::new();
    for k in keys {
        *m.entry(k).or_insert(0) += 1;
    }
    m
}

/// Multiset precision and recall of `found` against `gold`, plus true positives.
pub fn precision_recall(found: &[OccurrenceKey], gold: &[OccurrenceKey]) -> (f64, f64, usize) {
    let f = multiset(found);
    let g = multiset(gold);
    let tp: usize = f
        .iter()
        .map(|(k, &c)| c.min(g.get(k).copied().unwrap_or(0)))
        .sum();
    let precision = if found.is_empty() {
        1.0
    } else {
        tp as f64 / found.len() as f64
    };
    let recall = if gold.is_empty() {
        1.0
    } else {
        tp as f64 / gold.len() as f64
    };
    (precision, recall, tp)
}

/// Rows of `found` missing from `gold` and rows of `gold` missing from `found`.
pub fn label_diff(
    found: &[OccurrenceKey],
    gold: &[OccurrenceKey],
) -> (Vec<OccurrenceKey>, Vec<OccurrenceKey>) {
    let mut g: HashMap<&OccurrenceKey, usize> = HashMap::new();
    for k in gold {
        *g.entry(k).or_default() += 1;
    }
    let mut spurious = Vec::new();
    for k in found {
        match g.get_mut(k) {
            Some(c) if *c > 0 => *c -= 1,
            _ => spurious.push(k.clone()),
        }
    }
    let missed = g
        .into_iter()
        .flat_map(|(k, c)| std::iter::repeat_n(k.clone(), c))
        .collect();
    (spurious, missed)
}
