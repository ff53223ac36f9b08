//! Ambiguity filtering, label attachment and train/dev/test splitting.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::extraction::RawLabeledInstance;
use crate::grouping::SenseInventory;

/// Maximum dominant-sense prevalence for an abbreviation to count as ambiguous.
pub const MAX_DOMINANT_FRACTION: f64 = 0.99;
/// Above this many instances, dev and test are capped at [`LARGE_HELDOUT`] each.
pub const LARGE_THRESHOLD: usize = 10_000;
pub const LARGE_HELDOUT: usize = 1_000;
pub const MIN_SPLIT_INSTANCES: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabeledInstance {
    pub abbreviation: String,
    pub tokens: Vec<String>,
    pub position: usize,
    pub label: usize,
}

/// Stable key of a tokenized sentence: the first 16 hex digits of the
/// SHA-256 of its space-joined tokens. Contextual embedding files are keyed
/// by it.
pub fn sentence_key<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut hasher = Sha256::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            hasher.update(b" ");
        }
        hasher.update(t.as_ref().as_bytes());
    }
    hasher.finalize()[..8]
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

impl LabeledInstance {
    pub fn key(&self) -> String {
        sentence_key(&self.tokens)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DropReason {
    NotAmbiguous,
    DominantTooHigh { fraction: f64 },
    Denied,
}

impl fmt::Display for DropReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DropReason::NotAmbiguous => write!(f, "not ambiguous"),
            DropReason::DominantTooHigh { fraction } => {
                write!(f, "dominant >= 99% ({:.2}%)", fraction * 100.0)
            }
            DropReason::Denied => write!(f, "denylisted"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FilterDecision {
    Keep,
    Drop(DropReason),
}

impl FilterDecision {
    pub fn is_keep(&self) -> bool {
        matches!(self, FilterDecision::Keep)
    }
}

pub fn dominant_fraction(inventory: &SenseInventory) -> f64 {
    let total = inventory.total_count();
    if total == 0 {
        return 1.0;
    }
    let top = inventory.groups.iter().map(|g| g.count).max().unwrap_or(0);
    top as f64 / total as f64
}

/// Keeps an abbreviation with at least two senses whose dominant sense
/// covers under 99% of instances. Allowlisted entries skip the prevalence
/// test; denylisted entries are always dropped.
pub fn ambiguity_filter(
    inventory: &SenseInventory,
    allowlist: Option<&HashSet<String>>,
    denylist: Option<&HashSet<String>>,
) -> FilterDecision {
    let abbr = &inventory.abbreviation;
    if denylist.is_some_and(|d| d.contains(abbr)) {
        return FilterDecision::Drop(DropReason::Denied);
    }
    if inventory.groups.len() < 2 {
        return FilterDecision::Drop(DropReason::NotAmbiguous);
    }
    if allowlist.is_some_and(|a| a.contains(abbr)) {
        return FilterDecision::Keep;
    }
    let fraction = dominant_fraction(inventory);
    if fraction >= MAX_DOMINANT_FRACTION {
        return FilterDecision::Drop(DropReason::DominantTooHigh { fraction });
    }
    FilterDecision::Keep
}

/// `(train, dev, test)` sizes for `n` instances.
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let held = if n > LARGE_THRESHOLD {
        LARGE_HELDOUT
    } else {
        n / 10
    };
    (n - 2 * held, held, held)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Splits<T> {
    pub train: Vec<T>,
    pub dev: Vec<T>,
    pub test: Vec<T>,
}

/// Seeded uniform shuffle, then test and dev are taken from the front.
pub fn split_instances<T>(mut instances: Vec<T>, seed: u64) -> Result<Splits<T>> {
    let n = instances.len();
    if n < MIN_SPLIT_INSTANCES {
        return Err(Error::TooFewInstances(n));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    instances.shuffle(&mut rng);
    let (_, dev_n, test_n) = split_sizes(n);
    let train = instances.split_off(dev_n + test_n);
    let dev = instances.split_off(test_n);
    Ok(Splits {
        train,
        dev,
        test: instances,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Invalid(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AbbrevDataset {
    pub abbreviation: String,
    pub inventory: SenseInventory,
    pub train: Vec<LabeledInstance>,
    pub dev: Vec<LabeledInstance>,
    pub test: Vec<LabeledInstance>,
    pub seed: u64,
}

impl AbbrevDataset {
    pub fn num_classes(&self) -> usize {
        self.inventory.len()
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.dev.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn instances(&self) -> impl Iterator<Item = &LabeledInstance> {
        self.train.iter().chain(&self.dev).chain(&self.test)
    }

    pub fn split(&self, split: Split) -> &[LabeledInstance] {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }

    /// Inventory labels that occur in dev or test but never in train.
    pub fn labels_missing_from_train(&self) -> Vec<usize> {
        let train: BTreeSet<usize> = self.train.iter().map(|i| i.label).collect();
        let held: BTreeSet<usize> = self.dev.iter().chain(&self.test).map(|i| i.label).collect();
        held.difference(&train).copied().collect()
    }

    /// Percentage of instances carrying the most frequent label.
    pub fn dominant_pct(&self) -> f64 {
        let mut counts = vec![0usize; self.num_classes()];
        for i in self.instances() {
            counts[i.label] += 1;
        }
        let top = counts.iter().copied().max().unwrap_or(0);
        100.0 * top as f64 / self.len().max(1) as f64
    }
}

#[derive(Debug)]
pub struct BuiltDataset {
    pub dataset: AbbrevDataset,
    /// Raw instances whose definition is not a member of any group.
    pub unmatched: usize,
}

/// Attaches group labels to the raw instances of one abbreviation, recounts
/// the inventory and splits.
pub fn build_dataset(
    mut inventory: SenseInventory,
    raw: &[RawLabeledInstance],
    seed: u64,
) -> Result<BuiltDataset> {
    let mut unmatched = 0;
    let mut labeled = Vec::new();
    for r in raw
        .iter()
        .filter(|r| r.abbreviation == inventory.abbreviation)
    {
        match inventory.label_of(&r.raw_definition) {
            Some(label) => labeled.push(LabeledInstance {
                abbreviation: r.abbreviation.clone(),
                tokens: r.tokens.clone(),
                position: r.position,
                label,
            }),
            None => unmatched += 1,
        }
    }
    inventory.recount(labeled.iter().map(|i| i.label));
    let splits = split_instances(labeled, seed)?;
    Ok(BuiltDataset {
        dataset: AbbrevDataset {
            abbreviation: inventory.abbreviation.clone(),
            inventory,
            train: splits.train,
            dev: splits.dev,
            test: splits.test,
            seed,
        },
        unmatched,
    })
}

#[derive(Debug, Default)]
pub struct BuildReport {
    pub datasets: Vec<AbbrevDataset>,
    pub dropped: Vec<(String, DropReason)>,
    /// Abbreviations that passed the filter but have too few labeled instances to split.
    pub too_small: Vec<(String, usize)>,
    pub unmatched: usize,
}

/// Filters every inventory and builds a dataset for each survivor, in
/// inventory order.
pub fn build_datasets(
    inventories: &[SenseInventory],
    raw: &[RawLabeledInstance],
    allowlist: Option<&HashSet<String>>,
    denylist: Option<&HashSet<String>>,
    seed: u64,
) -> Result<BuildReport> {
    let mut by_abbr: BTreeMap<&str, Vec<RawLabeledInstance>> = BTreeMap::new();
    for r in raw {
        by_abbr.entry(&r.abbreviation).or_default().push(r.clone());
    }
    let mut report = BuildReport::default();
    for inv in inventories {
        if let FilterDecision::Drop(reason) = ambiguity_filter(inv, allowlist, denylist) {
            report.dropped.push((inv.abbreviation.clone(), reason));
            continue;
        }
        let rows = by_abbr
            .get(inv.abbreviation.as_str())
            .map_or(&[][..], Vec::as_slice);
        match build_dataset(inv.clone(), rows, seed) {
            Ok(built) => {
                report.unmatched += built.unmatched;
                report.datasets.push(built.dataset);
            }
            Err(Error::TooFewInstances(n)) => report.too_small.push((inv.abbreviation.clone(), n)),
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub n_abbreviations: usize,
    pub avg_instances: f64,
    pub avg_definitions: f64,
    pub avg_dominant_pct: f64,
}

pub fn compute_stats(datasets: &[AbbrevDataset]) -> Result<DatasetStats> {
    if datasets.is_empty() {
        return Err(Error::Empty("dataset list"));
    }
    let n = datasets.len() as f64;
    let mean = |f: &dyn Fn(&AbbrevDataset) -> f64| datasets.iter().map(f).sum::<f64>() / n;
    Ok(DatasetStats {
        n_abbreviations: datasets.len(),
        avg_instances: mean(&|d| d.len() as f64),
        avg_definitions: mean(&|d| d.num_classes() as f64),
        avg_dominant_pct: mean(&|d| d.dominant_pct()),
    })
}

impl DatasetStats {
    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "n_abbreviations\tavg_instances\tavg_definitions\tavg_dominant_pct"
        )?;
        writeln!(
            w,
            "{}\t{:.1}\t{:.1}\t{:.1}",
            self.n_abbreviations, self.avg_instances, self.avg_definitions, self.avg_dominant_pct
        )?;
        Ok(())
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<36}{:>10}",
            "# of all abbreviations", self.n_abbreviations
        )?;
        writeln!(
            f,
            "{:<36}{:>10.1}",
            "Average # of instances", self.avg_instances
        )?;
        writeln!(
            f,
            "{:<36}{:>10.1}",
            "Average # of possible definitions", self.avg_definitions
        )?;
        write!(
            f,
            "{:<36}{:>10.1}",
            "Average % of dominant definition", self.avg_dominant_pct
        )
    }
}

pub const DATASET_HEADER: &str = "#split\tabbreviation\tlabel\tposition\ttokens";

fn write_instance<W: Write>(w: &mut W, prefix: Option<Split>, i: &LabeledInstance) -> Result<()> {
    if let Some(split) = prefix {
        write!(w, "{}\t", split.as_str())?;
    }
    writeln!(
        w,
        "{}\t{}\t{}\t{}",
        i.abbreviation,
        i.label,
        i.position,
        i.tokens.join(" ")
    )?;
    Ok(())
}

/// Writes all splits of all datasets, one instance per line with a leading
/// split column.
pub fn write_datasets<W: Write>(mut w: W, datasets: &[AbbrevDataset]) -> Result<()> {
    writeln!(w, "{DATASET_HEADER}")?;
    for d in datasets {
        for split in [Split::Train, Split::Dev, Split::Test] {
            for i in d.split(split) {
                write_instance(&mut w, Some(split), i)?;
            }
        }
    }
    Ok(())
}

/// Writes plain `abbreviation TAB label TAB position TAB tokens` rows.
pub fn write_instances<W: Write>(mut w: W, instances: &[LabeledInstance]) -> Result<()> {
    writeln!(w, "#abbreviation\tlabel\tposition\ttokens")?;
    for i in instances {
        write_instance(&mut w, None, i)?;
    }
    Ok(())
}

/// Reads instance rows with or without a leading split column.
pub fn read_instances<R: BufRead>(r: R) -> Result<Vec<(Option<Split>, LabeledInstance)>> {
    let mut out = Vec::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut f: Vec<&str> = line.split('\t').collect();
        let split = match f.len() {
            4 => None,
            5 => Some(
                f.remove(0)
                    .parse::<Split>()
                    .map_err(|e| Error::parse(line_no, e.to_string()))?,
            ),
            n => {
                return Err(Error::parse(
                    line_no,
                    format!("expected 4 or 5 fields, found {n}"),
                ))
            }
        };
        let label = f[1]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad label {:?}", f[1])))?;
        let position: usize = f[2]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad position {:?}", f[2])))?;
        let tokens: Vec<String> = f[3].split(' ').map(str::to_string).collect();
        if tokens.get(position).map(String::as_str) != Some(f[0]) {
            return Err(Error::parse(
                line_no,
                "token at position does not match abbreviation",
            ));
        }
        out.push((
            split,
            LabeledInstance {
                abbreviation: f[0].to_string(),
                tokens,
                position,
                label,
            },
        ));
    }
    Ok(out)
}

/// Regroups split-tagged rows into per-abbreviation datasets. Rows without
/// a split tag are rejected. Inventory counts are recomputed from the rows.
pub fn assemble_datasets(
    rows: Vec<(Option<Split>, LabeledInstance)>,
    inventories: &[SenseInventory],
    seed: u64,
) -> Result<Vec<AbbrevDataset>> {
    let mut by_abbr: BTreeMap<String, Splits<LabeledInstance>> = BTreeMap::new();
    for (split, inst) in rows {
        let split =
            split.ok_or_else(|| Error::Invalid("instance row without a split column".into()))?;
        let entry = by_abbr
            .entry(inst.abbreviation.clone())
            .or_insert_with(|| Splits {
                train: Vec::new(),
                dev: Vec::new(),
                test: Vec::new(),
            });
        match split {
            Split::Train => entry.train.push(inst),
            Split::Dev => entry.dev.push(inst),
            Split::Test => entry.test.push(inst),
        }
    }
    let mut out = Vec::new();
    for (abbreviation, splits) in by_abbr {
        let mut inventory = inventories
            .iter()
            .find(|inv| inv.abbreviation == abbreviation)
            .cloned()
            .ok_or_else(|| Error::Invalid(format!("no sense inventory for {abbreviation}")))?;
        let k = inventory.len();
        let all = splits.train.iter().chain(&splits.dev).chain(&splits.test);
        if let Some(bad) = all.clone().find(|i| i.label >= k) {
            return Err(Error::LabelOutOfRange {
                label: bad.label,
                classes: k,
            });
        }
        inventory.recount(all.map(|i| i.label));
        out.push(AbbrevDataset {
            abbreviation,
            inventory,
            train: splits.train,
            dev: splits.dev,
            test: splits.test,
            seed,
        });
    }
    Ok(out)
}
