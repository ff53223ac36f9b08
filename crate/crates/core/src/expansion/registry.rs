//! Ambiguous-abbreviation vocabulary plus lazily loaded per-abbreviation models.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use lru::LruCache;

use crate::classifier::{ClassifierModel, Provider};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::persist::load_model;

/// Abbreviation set `A` with a model locator for every member.
///
/// Lookups are safe from many threads. Each abbreviation has its own load
/// lock, so a model is read from disk at most once per cache residency.
pub struct ModelRegistry<T> {
    vocabulary: BTreeSet<String>,
    locators: HashMap<String, PathBuf>,
    expected_provider: Option<Provider>,
    cache: Mutex<LruCache<String, Arc<ClassifierModel<T>>>>,
    flights: HashMap<String, Mutex<()>>,
    loads: AtomicUsize,
}

impl<T: Scalar> ModelRegistry<T> {
    /// Every vocabulary entry needs a locator and every locator a vocabulary
    /// entry. `capacity` of `None` means an unbounded cache.
    pub fn new<I, S>(
        vocabulary: I,
        locators: HashMap<String, PathBuf>,
        capacity: Option<NonZeroUsize>,
    ) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let vocabulary: BTreeSet<String> = vocabulary.into_iter().map(Into::into).collect();
        if let Some(a) = vocabulary.iter().find(|a| !locators.contains_key(*a)) {
            return Err(Error::Invalid(format!(
                "no model locator for abbreviation {a:?}"
            )));
        }
        if let Some(a) = locators.keys().find(|a| !vocabulary.contains(*a)) {
            return Err(Error::Invalid(format!(
                "model locator for {a:?}, which is not in the vocabulary"
            )));
        }
        let cache = match capacity {
            Some(c) => LruCache::new(c),
            None => LruCache::unbounded(),
        };
        Ok(ModelRegistry {
            flights: vocabulary
                .iter()
                .map(|a| (a.clone(), Mutex::new(())))
                .collect(),
            vocabulary,
            locators,
            expected_provider: None,
            cache: Mutex::new(cache),
            loads: AtomicUsize::new(0),
        })
    }

    /// Reads a vocabulary file (one abbreviation per line) and a manifest
    /// (`abbreviation TAB path`). Relative paths resolve against the
    /// manifest's directory.
    pub fn open(
        vocabulary: impl AsRef<Path>,
        manifest: impl AsRef<Path>,
        capacity: Option<NonZeroUsize>,
    ) -> Result<Self> {
        let vocab = read_vocabulary(BufReader::new(open_file(vocabulary.as_ref())?))?;
        let manifest = manifest.as_ref();
        let base = manifest.parent().unwrap_or(Path::new(""));
        let locators = read_manifest(BufReader::new(open_file(manifest)?), base)?;
        ModelRegistry::new(vocab, locators, capacity)
    }

    /// Loaded models whose provider differs from `provider` are rejected.
    pub fn expect_provider(mut self, provider: Provider) -> Self {
        self.expected_provider = Some(provider);
        self
    }

    pub fn contains(&self, token: &str) -> bool {
        self.vocabulary.contains(token)
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = &str> {
        self.vocabulary.iter().map(String::as_str)
    }

    pub fn locator(&self, abbreviation: &str) -> Option<&Path> {
        self.locators.get(abbreviation).map(PathBuf::as_path)
    }

    /// Number of models read from disk so far.
    pub fn loads(&self) -> usize {
        self.loads.load(Ordering::SeqCst)
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    fn cache_get(&self, abbreviation: &str) -> Option<Arc<ClassifierModel<T>>> {
        self.cache
            .lock()
            .expect("cache lock")
            .get(abbreviation)
            .cloned()
    }

    /// Cached or freshly loaded model; `None` when its file does not exist.
    pub fn get(&self, abbreviation: &str) -> Result<Option<Arc<ClassifierModel<T>>>> {
        let (Some(path), Some(flight)) = (
            self.locators.get(abbreviation),
            self.flights.get(abbreviation),
        ) else {
            return Err(Error::Invalid(format!(
                "{abbreviation:?} is not in the vocabulary"
            )));
        };
        if let Some(m) = self.cache_get(abbreviation) {
            return Ok(Some(m));
        }
        let _guard = flight.lock().expect("load lock");
        if let Some(m) = self.cache_get(abbreviation) {
            return Ok(Some(m));
        }
        if !path.exists() {
            return Ok(None);
        }
        self.loads.fetch_add(1, Ordering::SeqCst);
        let model: ClassifierModel<T> = load_model(path)?;
        if model.abbreviation != abbreviation {
            return Err(Error::Invalid(format!(
                "{}: model is for {:?}, expected {abbreviation:?}",
                path.display(),
                model.abbreviation
            )));
        }
        if let Some(p) = self.expected_provider.filter(|&p| p != model.provider) {
            return Err(Error::ProviderMismatch(format!(
                "{}: model provider {} but {p} was requested",
                path.display(),
                model.provider
            )));
        }
        let model = Arc::new(model);
        self.cache
            .lock()
            .expect("cache lock")
            .put(abbreviation.to_string(), Arc::clone(&model));
        Ok(Some(model))
    }
}

fn open_file(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|source| Error::File {
        path: path.to_path_buf(),
        source,
    })
}

/// One abbreviation per line; blank lines and `#` comments are skipped.
pub fn read_vocabulary<R: BufRead>(r: R) -> Result<BTreeSet<String>> {
    let mut out = BTreeSet::new();
    for line in r.lines() {
        let line = line?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            out.insert(t.to_string());
        }
    }
    Ok(out)
}

/// `abbreviation TAB path` rows. Duplicate abbreviations are errors.
pub fn read_manifest<R: BufRead>(r: R, base: &Path) -> Result<HashMap<String, PathBuf>> {
    let mut out = HashMap::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (abbr, path) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(lineno, "expected abbreviation TAB path"))?;
        if abbr.is_empty() || path.is_empty() || path.contains('\t') {
            return Err(Error::parse(lineno, "expected abbreviation TAB path"));
        }
        let path = PathBuf::from(path);
        let path = if path.is_relative() {
            base.join(path)
        } else {
            path
        };
        if out.insert(abbr.to_string(), path).is_some() {
            return Err(Error::parse(
                lineno,
                format!("duplicate manifest entry for {abbr:?}"),
            ));
        }
    }
    Ok(out)
}

/// Manifest rows sorted by abbreviation.
pub fn write_manifest<W: std::io::Write>(mut w: W, entries: &[(String, PathBuf)]) -> Result<()> {
    let mut sorted: Vec<&(String, PathBuf)> = entries.iter().collect();
    sorted.sort();
    for (abbr, path) in sorted {
        writeln!(w, "{abbr}\t{}", path.display())?;
    }
    Ok(())
}
