use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::bands::BAND_NAMES;
use super::patch::Domain;
use crate::error::{Error, Result};
use crate::seed::rng_for;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
}

impl Splits {
    pub fn get(&self, split: Split) -> &[String] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }
}

/// Split and domain bookkeeping for one dataset.
///
/// Serialized as pretty-printed JSON; all maps are ordered so the same
/// inputs always produce the same bytes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub label_vocabulary: Vec<String>,
    pub channel_order: Vec<String>,
    pub split_seed: u64,
    pub split_ratios: [f64; 3],
    pub total_patches: usize,
    pub splits: Splits,
    pub domain_of: BTreeMap<String, Domain>,
    pub excluded: Vec<String>,
    /// Patch tensor store, relative to the manifest's directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub store: Option<String>,
}

impl DatasetManifest {
    pub fn domain_count(&self, domain: Domain) -> usize {
        self.domain_of.values().filter(|d| **d == domain).count()
    }

    /// Ids of `split` in `domain`, in split order.
    pub fn ids(&self, split: Split, domain: Domain) -> Vec<String> {
        self.splits
            .get(split)
            .iter()
            .filter(|id| self.domain_of.get(*id) == Some(&domain))
            .cloned()
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)
            .map_err(|e| Error::ParseError(format!("{}: {e}", path.display())))?;
        m.validate()?;
        Ok(m)
    }

    /// Checks split disjointness and the exclusion invariant.
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for id in self.splits.train.iter().chain(&self.splits.val).chain(&self.splits.test) {
            if !seen.insert(id) {
                return Err(Error::ParseError(format!("patch {id} appears in more than one split")));
            }
            if !self.domain_of.contains_key(id) {
                return Err(Error::ParseError(format!("patch {id} has no domain")));
            }
        }
        if let Some(x) = self.excluded.iter().find(|x| seen.contains(x)) {
            return Err(Error::ParseError(format!("excluded patch {x} appears in a split")));
        }
        Ok(())
    }
}

pub fn validate_ratios(r: [f64; 3]) -> Result<()> {
    let sum: f64 = r.iter().sum();
    if r.iter().any(|v| !(0.0..=1.0).contains(v)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::ValidationError {
            key: "split_ratios".into(),
            reason: format!("{r:?} must be nonnegative and sum to 1"),
        });
    }
    Ok(())
}

/// Shuffles `ids` with a seeded stream and cuts it by `ratios`.
fn split_domain(mut ids: Vec<String>, seed: u64, domain: Domain, ratios: [f64; 3]) -> [Vec<String>; 3] {
    ids.sort();
    let mut rng = rng_for(seed, &format!("split/{}", domain.as_str()));
    ids.shuffle(&mut rng);
    let n = ids.len();
    let n_train = (n as f64 * ratios[0]).round() as usize;
    let n_val = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);
    let test = ids.split_off(n_train + n_val);
    let val = ids.split_off(n_train);
    [ids, val, test]
}

/// Builds a manifest from in-memory id lists. Snow listing wins over
/// cloudy listing; every listed id must be among `all_ids`.
pub fn manifest_from_ids(
    all_ids: &[String],
    cloudy: &[String],
    snow: &[String],
    vocabulary: &[String],
    split_seed: u64,
    split_ratios: [f64; 3],
) -> Result<DatasetManifest> {
    validate_ratios(split_ratios)?;
    let all: BTreeSet<&str> = all_ids.iter().map(String::as_str).collect();
    for id in cloudy.iter().chain(snow) {
        if !all.contains(id.as_str()) {
            return Err(Error::UnknownPatchInList(id.clone()));
        }
    }
    let snow: BTreeSet<&str> = snow.iter().map(String::as_str).collect();
    let cloudy: BTreeSet<&str> = cloudy.iter().map(String::as_str).collect();

    let mut domain_of = BTreeMap::new();
    let mut excluded = Vec::new();
    let (mut cloudy_ids, mut clear_ids) = (Vec::new(), Vec::new());
    for id in &all {
        if snow.contains(id) {
            excluded.push(id.to_string());
        } else if cloudy.contains(id) {
            domain_of.insert(id.to_string(), Domain::Cloudy);
            cloudy_ids.push(id.to_string());
        } else {
            domain_of.insert(id.to_string(), Domain::Clear);
            clear_ids.push(id.to_string());
        }
    }

    let mut splits = Splits::default();
    for (domain, ids) in [(Domain::Cloudy, cloudy_ids), (Domain::Clear, clear_ids)] {
        let [tr, va, te] = split_domain(ids, split_seed, domain, split_ratios);
        splits.train.extend(tr);
        splits.val.extend(va);
        splits.test.extend(te);
    }
    for s in [&mut splits.train, &mut splits.val, &mut splits.test] {
        s.sort();
    }

    Ok(DatasetManifest {
        format_version: MANIFEST_VERSION,
        label_vocabulary: vocabulary.to_vec(),
        channel_order: BAND_NAMES.iter().map(|s| s.to_string()).collect(),
        split_seed,
        split_ratios,
        total_patches: all.len(),
        splits,
        domain_of,
        excluded,
        store: None,
    })
}

/// Reads a patch-id list: one id per line, optional trailing columns after
/// a comma are ignored, blank lines skipped.
pub fn read_id_list(path: &Path) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.split(',').next().unwrap_or("").trim())
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Builds a manifest over every patch directory under `root`.
pub fn build_manifest(
    root: &Path,
    cloudy_list: &Path,
    snow_list: &Path,
    vocabulary: &[String],
    split_seed: u64,
    split_ratios: [f64; 3],
) -> Result<DatasetManifest> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            if let Some(name) = entry.file_name().to_str() {
                ids.push(name.to_string());
            }
        }
    }
    ids.sort();
    manifest_from_ids(
        &ids,
        &read_id_list(cloudy_list)?,
        &read_id_list(snow_list)?,
        vocabulary,
        split_seed,
        split_ratios,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const RATIOS: [f64; 3] = [0.8, 0.1, 0.1];

    fn ids(n: usize, prefix: &str) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i:06}")).collect()
    }

    #[test]
    fn toy_root_counts() {
        let tmp = tempfile::tempdir().unwrap();
        for i in 0..10 {
            std::fs::create_dir(tmp.path().join(format!("p{i}"))).unwrap();
        }
        std::fs::write(tmp.path().join("cloudy.txt"), "p1\np4\n").unwrap();
        std::fs::write(tmp.path().join("snow.txt"), "p7\n").unwrap();
        // list files are not directories, so they are not patches
        let m = build_manifest(
            tmp.path(),
            &tmp.path().join("cloudy.txt"),
            &tmp.path().join("snow.txt"),
            &[],
            3,
            RATIOS,
        )
        .unwrap();
        assert_eq!(m.domain_count(Domain::Cloudy), 2);
        assert_eq!(m.domain_count(Domain::Clear), 7);
        assert_eq!(m.excluded, vec!["p7".to_string()]);
        let in_splits = m.splits.train.len() + m.splits.val.len() + m.splits.test.len();
        assert_eq!(in_splits, 9);
        m.validate().unwrap();
    }

    #[test]
    fn unknown_list_entry() {
        let all = ids(5, "p");
        let r = manifest_from_ids(&all, &["nope".into()], &[], &[], 0, RATIOS);
        assert!(matches!(r, Err(Error::UnknownPatchInList(id)) if id == "nope"));
    }

    #[test]
    fn archive_scale_breakdown() {
        let all = ids(590_326, "S2_");
        let cloudy: Vec<String> = all[..9_280].to_vec();
        let snow: Vec<String> = all[9_280..9_280 + 61_707].to_vec();
        let m = manifest_from_ids(&all, &cloudy, &snow, &[], 42, RATIOS).unwrap();
        assert_eq!(m.total_patches, 590_326);
        assert_eq!(m.domain_count(Domain::Cloudy), 9_280);
        assert_eq!(m.domain_count(Domain::Clear), 519_339);
        assert_eq!(m.excluded.len(), 61_707);
        assert_eq!(m.ids(Split::Train, Domain::Cloudy).len(), 7_424);
    }

    #[test]
    fn same_seed_same_bytes() {
        let all = ids(200, "p");
        let cloudy = all[..30].to_vec();
        let a = manifest_from_ids(&all, &cloudy, &[], &[], 9, RATIOS).unwrap();
        let b = manifest_from_ids(&all, &cloudy, &[], &[], 9, RATIOS).unwrap();
        let c = manifest_from_ids(&all, &cloudy, &[], &[], 10, RATIOS).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert_ne!(a.splits, c.splits);
        let tmp = tempfile::tempdir().unwrap();
        let p = tmp.path().join("m.json");
        a.save(&p).unwrap();
        assert_eq!(DatasetManifest::load(&p).unwrap(), a);
    }

    #[test]
    fn bad_ratios() {
        let all = ids(3, "p");
        assert!(matches!(
            manifest_from_ids(&all, &[], &[], &[], 0, [0.5, 0.5, 0.5]),
            Err(Error::ValidationError { .. })
        ));
    }

    proptest! {
        #[test]
        fn splits_partition_non_excluded(n in 1usize..120, nc in 0usize..40, ns in 0usize..20, seed in 0u64..1000) {
            let all = ids(n, "p");
            let nc = nc.min(n);
            let ns = ns.min(n - nc);
            let cloudy = all[..nc].to_vec();
            let snow = all[nc..nc + ns].to_vec();
            let m = manifest_from_ids(&all, &cloudy, &snow, &[], seed, RATIOS).unwrap();
            m.validate().unwrap();
            let mut union: Vec<String> = m.splits.train.iter().chain(&m.splits.val).chain(&m.splits.test).cloned().collect();
            union.sort();
            let expected: Vec<String> = all[..nc].iter().chain(&all[nc + ns..]).cloned().collect();
            prop_assert_eq!(union, expected);
        }
    }
}
