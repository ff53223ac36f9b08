//! Merging surface variants of a definition into sense groups.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use petgraph::unionfind::UnionFind;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::extraction::RawLabeledInstance;

pub const DEFAULT_THETA_MESH: f64 = 0.5;
pub const DEFAULT_THETA_EDIT: f64 = 0.2;

/// Definition surface → MeSH descriptor ids. Keys are matched after
/// lowercasing and whitespace collapsing.
#[derive(Debug, Clone, Default)]
pub struct MeshFeatureMap {
    map: HashMap<String, BTreeSet<String>>,
}

fn normalize_key(s: &str) -> String {
    s.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

impl MeshFeatureMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert<I, S>(&mut self, surface: &str, descriptors: I)
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.map
            .entry(normalize_key(surface))
            .or_default()
            .extend(descriptors.into_iter().map(Into::into));
    }

    pub fn get(&self, surface: &str) -> Option<&BTreeSet<String>> {
        self.map.get(&normalize_key(surface))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Reads `surface TAB id,id,...` lines. The id field may be empty.
    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let mut map = MeshFeatureMap::new();
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (surface, ids) = match line.split_once('\t') {
                Some((s, ids)) if !ids.contains('\t') => (s, ids),
                _ => {
                    return Err(Error::parse(
                        idx + 1,
                        "expected surface TAB descriptor list",
                    ))
                }
            };
            map.insert(
                surface,
                ids.split(',').map(str::trim).filter(|s| !s.is_empty()),
            );
        }
        Ok(map)
    }
}

/// `|A ∩ B| / sqrt(|A|·|B|)`, defined as 0 when either set is empty.
pub fn mesh_similarity<S: Ord>(a: &BTreeSet<S>, b: &BTreeSet<S>) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let shared = a.intersection(b).count();
    shared as f64 / ((a.len() * b.len()) as f64).sqrt()
}

/// Case-folded Levenshtein distance divided by the longer length.
pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    let a = a.to_lowercase();
    let b = b.to_lowercase();
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    strsim::levenshtein(&a, &b) as f64 / longest as f64
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SenseGroup {
    pub group_id: usize,
    pub canonical: String,
    pub members: BTreeSet<String>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SenseInventory {
    pub abbreviation: String,
    pub groups: Vec<SenseGroup>,
}

impl SenseInventory {
    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn label_of(&self, surface: &str) -> Option<usize> {
        self.groups
            .iter()
            .find(|g| g.members.contains(surface))
            .map(|g| g.group_id)
    }

    pub fn total_count(&self) -> usize {
        self.groups.iter().map(|g| g.count).sum()
    }

    pub fn canonicals(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.canonical.clone()).collect()
    }

    /// Replaces group counts with counts of `labels`. Ids are left untouched.
    pub fn recount<I: IntoIterator<Item = usize>>(&mut self, labels: I) {
        for g in &mut self.groups {
            g.count = 0;
        }
        for label in labels {
            if let Some(g) = self.groups.get_mut(label) {
                g.count += 1;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupingThresholds {
    pub mesh: f64,
    pub edit: f64,
}

impl Default for GroupingThresholds {
    fn default() -> Self {
        GroupingThresholds {
            mesh: DEFAULT_THETA_MESH,
            edit: DEFAULT_THETA_EDIT,
        }
    }
}

/// Connected components over distinct surfaces, linking two surfaces when
/// their MeSH similarity reaches `mesh` or their normalized edit distance is
/// at most `edit`.
pub fn group_definitions<'a, I>(
    abbreviation: &str,
    surfaces: I,
    mesh: &MeshFeatureMap,
    thresholds: GroupingThresholds,
) -> Result<SenseInventory>
where
    I: IntoIterator<Item = &'a str>,
{
    if !(0.0..=1.0).contains(&thresholds.mesh) || !(0.0..=1.0).contains(&thresholds.edit) {
        return Err(Error::Invalid(format!(
            "grouping thresholds must lie in [0, 1], got mesh={} edit={}",
            thresholds.mesh, thresholds.edit
        )));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in surfaces {
        *counts.entry(s).or_default() += 1;
    }
    let distinct: Vec<(&str, usize)> = counts.into_iter().collect();
    let empty = BTreeSet::new();
    let features: Vec<&BTreeSet<String>> = distinct
        .iter()
        .map(|(s, _)| mesh.get(s).unwrap_or(&empty))
        .collect();

    let n = distinct.len();
    let mut uf = UnionFind::<usize>::new(n);
    for i in 0..n {
        for j in i + 1..n {
            // unmapped surfaces rely on edit distance alone
            let mesh_link = !features[i].is_empty()
                && !features[j].is_empty()
                && mesh_similarity(features[i], features[j]) >= thresholds.mesh;
            let linked = mesh_link
                || normalized_edit_distance(distinct[i].0, distinct[j].0) <= thresholds.edit;
            if linked {
                uf.union(i, j);
            }
        }
    }

    let mut components: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        components.entry(uf.find(i)).or_default().push(i);
    }
    let mut groups: Vec<SenseGroup> = components
        .into_values()
        .map(|idx| {
            let canonical = idx
                .iter()
                .map(|&i| distinct[i])
                // most frequent, then lexicographically smallest
                .min_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)))
                .map(|(s, _)| s.to_string())
                .unwrap_or_default();
            SenseGroup {
                group_id: 0,
                canonical,
                members: idx.iter().map(|&i| distinct[i].0.to_string()).collect(),
                count: idx.iter().map(|&i| distinct[i].1).sum(),
            }
        })
        .collect();
    groups.sort_by(|a, b| b.count.cmp(&a.count).then(a.canonical.cmp(&b.canonical)));
    for (id, g) in groups.iter_mut().enumerate() {
        g.group_id = id;
    }
    Ok(SenseInventory {
        abbreviation: abbreviation.to_string(),
        groups,
    })
}

/// Groups the raw definitions of every abbreviation in `raw`, ordered by
/// abbreviation.
pub fn group_corpus(
    raw: &[RawLabeledInstance],
    mesh: &MeshFeatureMap,
    thresholds: GroupingThresholds,
) -> Result<Vec<SenseInventory>> {
    let mut by_abbr: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for r in raw {
        by_abbr
            .entry(&r.abbreviation)
            .or_default()
            .push(&r.raw_definition);
    }
    by_abbr
        .into_par_iter()
        .map(|(abbr, surfaces)| group_definitions(abbr, surfaces, mesh, thresholds))
        .collect()
}

pub const INVENTORY_HEADER: &str = "#abbreviation\tgroup_id\tcanonical\tmembers\tcount";

/// Writes `abbreviation TAB group_id TAB canonical TAB m1|m2|... TAB count`.
pub fn write_inventories<W: Write>(mut w: W, inventories: &[SenseInventory]) -> Result<()> {
    writeln!(w, "{INVENTORY_HEADER}")?;
    for inv in inventories {
        for g in &inv.groups {
            if let Some(bad) = g.members.iter().find(|m| m.contains(['|', '\t', '\n'])) {
                return Err(Error::Invalid(format!(
                    "definition {bad:?} of {} contains a reserved separator",
                    inv.abbreviation
                )));
            }
            let members: Vec<&str> = g.members.iter().map(String::as_str).collect();
            writeln!(
                w,
                "{}\t{}\t{}\t{}\t{}",
                inv.abbreviation,
                g.group_id,
                g.canonical,
                members.join("|"),
                g.count
            )?;
        }
    }
    Ok(())
}

/// Reads inventories written by [`write_inventories`]. The trailing count
/// column is optional and defaults to 0.
pub fn read_inventories<R: BufRead>(r: R) -> Result<Vec<SenseInventory>> {
    let mut by_abbr: BTreeMap<String, Vec<SenseGroup>> = BTreeMap::new();
    for (idx, line) in r.lines().enumerate() {
        let line = line?;
        let line_no = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if !(4..=5).contains(&f.len()) {
            return Err(Error::parse(
                line_no,
                format!("expected 4 or 5 fields, found {}", f.len()),
            ));
        }
        let group_id: usize = f[1]
            .parse()
            .map_err(|_| Error::parse(line_no, format!("bad group id {:?}", f[1])))?;
        let count: usize = match f.get(4) {
            Some(c) => c
                .parse()
                .map_err(|_| Error::parse(line_no, format!("bad count {c:?}")))?,
            None => 0,
        };
        let members: BTreeSet<String> = f[3].split('|').map(str::to_string).collect();
        if !members.contains(f[2]) {
            return Err(Error::parse(
                line_no,
                "canonical definition is not a member",
            ));
        }
        by_abbr
            .entry(f[0].to_string())
            .or_default()
            .push(SenseGroup {
                group_id,
                canonical: f[2].to_string(),
                members,
                count,
            });
    }
    let mut out = Vec::with_capacity(by_abbr.len());
    for (abbreviation, mut groups) in by_abbr {
        groups.sort_by_key(|g| g.group_id);
        if groups.iter().enumerate().any(|(i, g)| g.group_id != i) {
            return Err(Error::Invalid(format!(
                "group ids of {abbreviation} are not contiguous from 0"
            )));
        }
        let mut seen = BTreeSet::new();
        for m in groups.iter().flat_map(|g| &g.members) {
            if !seen.insert(m) {
                return Err(Error::Invalid(format!(
                    "{abbreviation}: {m:?} appears in two groups"
                )));
            }
        }
        out.push(SenseInventory {
            abbreviation,
            groups,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(ids: &[&str]) -> BTreeSet<String> {
        ids.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn mesh_similarity_examples() {
        let a = set(&["D004720", "D012160"]);
        assert_eq!(mesh_similarity(&a, &a), 1.0);
        assert_eq!(mesh_similarity(&set(&["A"]), &set(&["B"])), 0.0);
        let a = set(&["A", "B"]);
        let b = set(&["A", "B", "C", "D", "E", "F", "G", "H"]);
        assert!((mesh_similarity(&a, &b) - 0.5).abs() < 1e-12);
        assert_eq!(mesh_similarity(&set(&[]), &set(&[])), 0.0);
        assert_eq!(mesh_similarity(&set(&[]), &a), 0.0);
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(
            normalized_edit_distance("emergency department", "emergency department"),
            0.0
        );
        let d = normalized_edit_distance("emergency department", "emergency departments");
        assert!((d - 1.0 / 21.0).abs() < 1e-12);
        assert_eq!(normalized_edit_distance("a", ""), 1.0);
        assert_eq!(normalized_edit_distance("", ""), 0.0);
        assert_eq!(normalized_edit_distance("ABC", "abc"), 0.0);
    }

    #[test]
    fn plural_variants_merge() {
        let mut surfaces = vec!["emergency department"; 5];
        surfaces.extend(["emergency departments"; 2]);
        let inv = group_definitions(
            "ED",
            surfaces,
            &MeshFeatureMap::new(),
            GroupingThresholds {
                mesh: 0.5,
                edit: 0.2,
            },
        )
        .unwrap();
        assert_eq!(inv.groups.len(), 1);
        assert_eq!(inv.groups[0].canonical, "emergency department");
        assert_eq!(inv.groups[0].count, 7);
    }

    #[test]
    fn unrelated_surfaces_stay_apart() {
        let inv = group_definitions(
            "ER",
            ["estrogen receptor", "emergency room"],
            &MeshFeatureMap::new(),
            GroupingThresholds::default(),
        )
        .unwrap();
        assert_eq!(inv.groups.len(), 2);
    }

    #[test]
    fn mesh_overlap_links_dissimilar_strings() {
        let mut mesh = MeshFeatureMap::new();
        mesh.insert("heart attack", ["D009203"]);
        mesh.insert("Myocardial  infarction", ["D009203"]);
        let inv = group_definitions(
            "MI",
            [
                "heart attack",
                "myocardial infarction",
                "mitral insufficiency",
            ],
            &mesh,
            GroupingThresholds::default(),
        )
        .unwrap();
        assert_eq!(inv.groups.len(), 2);
        assert_eq!(inv.groups[0].members.len(), 2);
    }

    #[test]
    fn group_ids_follow_count_then_name() {
        let inv = group_definitions(
            "X",
            ["beta", "alpha", "gamma", "gamma"],
            &MeshFeatureMap::new(),
            GroupingThresholds {
                mesh: 1.0,
                edit: 0.0,
            },
        )
        .unwrap();
        let names: Vec<&str> = inv.groups.iter().map(|g| g.canonical.as_str()).collect();
        assert_eq!(names, vec!["gamma", "alpha", "beta"]);
    }

    #[test]
    fn rejects_bad_thresholds() {
        assert!(group_definitions(
            "X",
            ["a"],
            &MeshFeatureMap::new(),
            GroupingThresholds {
                mesh: 1.5,
                edit: 0.2
            }
        )
        .is_err());
    }

    #[test]
    fn mesh_map_parsing() {
        let map = MeshFeatureMap::read("Estrogen Receptor\tD011960, D004967\nfoo\t\n".as_bytes())
            .unwrap();
        assert_eq!(map.get("estrogen   receptor").unwrap().len(), 2);
        assert!(map.get("foo").unwrap().is_empty());
        assert!(MeshFeatureMap::read("no tab here\n".as_bytes()).is_err());
    }

    #[test]
    fn inventory_tsv_round_trip() {
        let inv = group_definitions(
            "ED",
            [
                "emergency department",
                "emergency departments",
                "erectile dysfunction",
            ],
            &MeshFeatureMap::new(),
            GroupingThresholds::default(),
        )
        .unwrap();
        let mut buf = Vec::new();
        write_inventories(&mut buf, std::slice::from_ref(&inv)).unwrap();
        assert_eq!(read_inventories(&buf[..]).unwrap(), vec![inv]);
    }

    proptest! {
        #[test]
        fn similarity_is_symmetric_and_bounded(
            a in proptest::collection::btree_set(0u8..12, 0..8),
            b in proptest::collection::btree_set(0u8..12, 0..8),
        ) {
            let s = mesh_similarity(&a, &b);
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s, mesh_similarity(&b, &a));
            prop_assert_eq!(s == 1.0, !a.is_empty() && a == b);
        }

        #[test]
        fn edit_distance_is_symmetric_and_bounded(a in "[a-dA-D ]{0,12}", b in "[a-dA-D ]{0,12}") {
            let d = normalized_edit_distance(&a, &b);
            prop_assert!((0.0..=1.0).contains(&d));
            prop_assert_eq!(d, normalized_edit_distance(&b, &a));
            prop_assert_eq!(d == 0.0, a.to_lowercase() == b.to_lowercase());
        }

        #[test]
        fn grouping_is_a_partition_independent_of_order(
            surfaces in proptest::collection::vec("[a-c]{1,6}", 1..12),
            edit in 0.0f64..1.0,
        ) {
            let thresholds = GroupingThresholds { mesh: 0.5, edit };
            let mesh = MeshFeatureMap::new();
            let inv = group_definitions("X", surfaces.iter().map(String::as_str), &mesh, thresholds).unwrap();
            let mut reversed = surfaces.clone();
            reversed.reverse();
            let inv2 = group_definitions("X", reversed.iter().map(String::as_str), &mesh, thresholds).unwrap();
            prop_assert_eq!(&inv, &inv2);

            let distinct: BTreeSet<String> = surfaces.iter().cloned().collect();
            let mut union = BTreeSet::new();
            for g in &inv.groups {
                for m in &g.members {
                    prop_assert!(union.insert(m.clone()));
                }
                prop_assert!(g.members.contains(&g.canonical));
            }
            prop_assert_eq!(union, distinct);
            prop_assert_eq!(inv.total_count(), surfaces.len());
        }
    }
}
