//! Candidate universe construction: stratified sampling of exemplar subsets
//! over the training clusters.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embed::ClusterAssignment;
use crate::error::{Error, Result};
use crate::seeded;

/// A size-k subset of exemplar ids in prompt order.
///
/// Two subsets are equal iff their canonical (sorted) keys are equal; prompt
/// order is preserved separately because in-context output is sensitive to it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExemplarSubset {
    member_ids: Vec<u32>,
    canonical_key: Vec<u32>,
}

impl ExemplarSubset {
    pub fn new(member_ids: Vec<u32>) -> Result<Self> {
        if member_ids.is_empty() {
            return Err(Error::validation("subset must have at least one member"));
        }
        let distinct: BTreeSet<u32> = member_ids.iter().copied().collect();
        if distinct.len() != member_ids.len() {
            return Err(Error::validation(format!(
                "subset has repeated members: {member_ids:?}"
            )));
        }
        let mut canonical_key = member_ids.clone();
        canonical_key.sort_unstable();
        Ok(ExemplarSubset {
            member_ids,
            canonical_key,
        })
    }

    /// Member ids in prompt order.
    pub fn members(&self) -> &[u32] {
        &self.member_ids
    }

    /// Sorted id tuple identifying the subset.
    pub fn key(&self) -> &[u32] {
        &self.canonical_key
    }

    pub fn len(&self) -> usize {
        self.member_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.member_ids.is_empty()
    }

    pub fn contains(&self, id: u32) -> bool {
        self.canonical_key.binary_search(&id).is_ok()
    }
}

impl PartialEq for ExemplarSubset {
    fn eq(&self, other: &Self) -> bool {
        self.canonical_key == other.canonical_key
    }
}

impl Eq for ExemplarSubset {}

impl std::hash::Hash for ExemplarSubset {
    fn hash<H: std::hash::Hasher>(&self, state: &mut H) {
        self.canonical_key.hash(state);
    }
}

/// How a universe was built; echoed into run artifacts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniverseProvenance {
    pub k: usize,
    pub universe_size: usize,
    pub seed: u64,
    pub cluster_fingerprint: String,
}

/// The downsampled pool of candidate subsets the bandit explores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateUniverse {
    subsets: Vec<ExemplarSubset>,
    provenance: UniverseProvenance,
}

impl CandidateUniverse {
    pub fn new(subsets: Vec<ExemplarSubset>, provenance: UniverseProvenance) -> Result<Self> {
        let mut seen: BTreeSet<&[u32]> = BTreeSet::new();
        for s in &subsets {
            if !seen.insert(s.key()) {
                return Err(Error::validation(format!(
                    "duplicate subset in universe: {:?}",
                    s.key()
                )));
            }
        }
        Ok(CandidateUniverse {
            subsets,
            provenance,
        })
    }

    pub fn subsets(&self) -> &[ExemplarSubset] {
        &self.subsets
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn subset(&self, index: usize) -> &ExemplarSubset {
        &self.subsets[index]
    }

    pub fn provenance(&self) -> &UniverseProvenance {
        &self.provenance
    }

    /// All exemplar ids appearing anywhere in the universe, ascending.
    pub fn active_ids(&self) -> Vec<u32> {
        let set: BTreeSet<u32> = self
            .subsets
            .iter()
            .flat_map(|s| s.members().iter().copied())
            .collect();
        set.into_iter().collect()
    }

    /// Persist as a line-delimited file: a provenance header line, then one
    /// subset per line as train ids in prompt order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let p = &self.provenance;
        let mut out = format!(
            "# universe k={} size={} seed={} clusters={}\n",
            p.k, p.universe_size, p.seed, p.cluster_fingerprint
        );
        for subset in &self.subsets {
            let line: Vec<String> = subset.members().iter().map(|id| id.to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::data(path, 1, "empty universe file"))?;
        let provenance = parse_header(header)
            .ok_or_else(|| Error::data(path, 1, "bad universe header"))?;
        let mut subsets = Vec::new();
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let ids: std::result::Result<Vec<u32>, _> =
                line.split_whitespace().map(str::parse).collect();
            let ids =
                ids.map_err(|e| Error::data(path, idx + 1, format!("bad subset line: {e}")))?;
            subsets.push(
                ExemplarSubset::new(ids)
                    .map_err(|e| Error::data(path, idx + 1, e.to_string()))?,
            );
        }
        CandidateUniverse::new(subsets, provenance)
    }
}

fn parse_header(line: &str) -> Option<UniverseProvenance> {
    let rest = line.strip_prefix("# universe ")?;
    let mut k = None;
    let mut size = None;
    let mut seed = None;
    let mut clusters = None;
    for field in rest.split_whitespace() {
        let (key, value) = field.split_once('=')?;
        match key {
            "k" => k = value.parse().ok(),
            "size" => size = value.parse().ok(),
            "seed" => seed = value.parse().ok(),
            "clusters" => clusters = Some(value.to_string()),
            _ => return None,
        }
    }
    Some(UniverseProvenance {
        k: k?,
        universe_size: size?,
        seed: seed?,
        cluster_fingerprint: clusters?,
    })
}

/// Number of distinct one-per-cluster combinations, saturating.
fn combination_count(cluster_sizes: &[usize]) -> u128 {
    let mut total: u128 = 1;
    for &s in cluster_sizes {
        total = total.saturating_mul(s as u128);
    }
    total
}

/// Draw `universe_size` distinct subsets, one uniform exemplar per cluster in
/// cluster-index order. Duplicates (by canonical key) are rejected and
/// redrawn, up to 1000 * universe_size attempts.
pub fn sample_universe(
    clusters: &ClusterAssignment,
    universe_size: usize,
    seed: u64,
) -> Result<CandidateUniverse> {
    let k = clusters.k();
    let members: Vec<Vec<u32>> = (0..k).map(|c| clusters.members(c)).collect();
    if let Some(empty) = members.iter().position(|m| m.is_empty()) {
        return Err(Error::validation(format!("cluster {empty} is empty")));
    }
    if universe_size == 0 {
        return Err(Error::validation("universe size must be >= 1"));
    }
    let sizes: Vec<usize> = members.iter().map(Vec::len).collect();
    let distinct = combination_count(&sizes);
    if (universe_size as u128) > distinct {
        return Err(Error::validation(format!(
            "universe size {universe_size} exceeds the {distinct} distinct one-per-cluster combinations"
        )));
    }

    let mut rng = seeded::rng(seed);
    let mut seen: BTreeSet<Vec<u32>> = BTreeSet::new();
    let mut subsets = Vec::with_capacity(universe_size);
    let mut attempts = 0usize;
    let attempt_budget = 1000 * universe_size;
    while subsets.len() < universe_size {
        if attempts >= attempt_budget {
            return Err(Error::validation(format!(
                "gave up sampling distinct subsets after {attempt_budget} attempts"
            )));
        }
        attempts += 1;
        let draw: Vec<u32> = members
            .iter()
            .map(|m| m[rng.gen_range(0..m.len())])
            .collect();
        let subset = ExemplarSubset::new(draw)?;
        if seen.insert(subset.key().to_vec()) {
            subsets.push(subset);
        }
    }

    CandidateUniverse::new(
        subsets,
        UniverseProvenance {
            k,
            universe_size,
            seed,
            cluster_fingerprint: clusters.fingerprint(),
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{kmeans, EmbeddingStore};
    use rand::Rng;

    fn blobby_clusters(n_per_cluster: usize, k: usize, seed: u64) -> ClusterAssignment {
        let mut rng = seeded::rng(seed);
        let mut store = EmbeddingStore::new(2).unwrap();
        let mut id = 0u32;
        for c in 0..k {
            let angle = c as f32 * std::f32::consts::TAU / k as f32;
            for _ in 0..n_per_cluster {
                let v = vec![
                    100.0 * angle.cos() + rng.gen_range(-0.1..0.1),
                    100.0 * angle.sin() + rng.gen_range(-0.1..0.1),
                ];
                store.insert_train(id, v).unwrap();
                id += 1;
            }
        }
        let ids: Vec<u32> = (0..id).collect();
        kmeans(&ids, &store, k, seed, 100).unwrap()
    }

    #[test]
    fn subset_equality_ignores_prompt_order() {
        let a = ExemplarSubset::new(vec![3, 1, 2]).unwrap();
        let b = ExemplarSubset::new(vec![1, 2, 3]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.key(), &[1, 2, 3]);
        assert_eq!(a.members(), &[3, 1, 2]);
    }

    #[test]
    fn subset_rejects_repeats() {
        assert!(ExemplarSubset::new(vec![1, 1, 2]).is_err());
    }

    #[test]
    fn universe_is_stratified_distinct_and_deterministic() {
        let clusters = blobby_clusters(8, 5, 17);
        let a = sample_universe(&clusters, 40, 7).unwrap();
        let b = sample_universe(&clusters, 40, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
        let mut keys = BTreeSet::new();
        for subset in a.subsets() {
            assert_eq!(subset.len(), 5);
            assert!(keys.insert(subset.key().to_vec()));
            // Exactly one member per cluster, in cluster-index order.
            for (slot, &id) in subset.members().iter().enumerate() {
                assert_eq!(clusters.cluster_of(id).unwrap(), slot);
            }
        }
    }

    #[test]
    fn singleton_clusters_force_unique_subset() {
        let clusters = blobby_clusters(1, 3, 5);
        let u = sample_universe(&clusters, 1, 0).unwrap();
        assert_eq!(u.len(), 1);
        let err = sample_universe(&clusters, 2, 0).unwrap_err();
        assert!(err.to_string().contains("distinct"));
    }

    #[test]
    fn active_ids_are_sorted_union() {
        let subsets = vec![
            ExemplarSubset::new(vec![5, 1]).unwrap(),
            ExemplarSubset::new(vec![2, 5]).unwrap(),
        ];
        let u = CandidateUniverse::new(
            subsets,
            UniverseProvenance {
                k: 2,
                universe_size: 2,
                seed: 0,
                cluster_fingerprint: "test".into(),
            },
        )
        .unwrap();
        assert_eq!(u.active_ids(), vec![1, 2, 5]);
    }

    #[test]
    fn universe_file_round_trip() {
        let clusters = blobby_clusters(6, 4, 23);
        let u = sample_universe(&clusters, 12, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("universe.txt");
        u.save(&path).unwrap();
        let loaded = CandidateUniverse::load(&path).unwrap();
        assert_eq!(u, loaded);
    }

    #[test]
    fn duplicate_subsets_rejected_at_construction() {
        let subsets = vec![
            ExemplarSubset::new(vec![1, 2]).unwrap(),
            ExemplarSubset::new(vec![2, 1]).unwrap(),
        ];
        assert!(CandidateUniverse::new(
            subsets,
            UniverseProvenance {
                k: 2,
                universe_size: 2,
                seed: 0,
                cluster_fingerprint: "x".into(),
            }
        )
        .is_err());
    }
}
