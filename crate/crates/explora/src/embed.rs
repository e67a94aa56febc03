//! Embedding ingestion, cosine similarity features, and k-means clustering.
//!
//! Vectors are produced externally (any sentence encoder works) and ingested
//! from a binary file, keeping the engine model-agnostic. Similarity features
//! are cosines between exemplar-question vectors and validation-question
//! vectors; the per-exemplar aggregate is the row mean.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::seeded;

/// Default Lloyd-iteration cap for [`kmeans`].
pub const DEFAULT_KMEANS_MAX_ITERS: usize = 100;

const MAGIC: &[u8; 8] = b"EXPVEC1\0";
const TAG_TRAIN: u32 = 0;
const TAG_VALIDATION: u32 = 1;

/// Dense embedding vectors for train and validation questions, keyed by id.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStore {
    dim: usize,
    train: BTreeMap<u32, Vec<f32>>,
    validation: BTreeMap<u32, Vec<f32>>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("embedding dim must be >= 1"));
        }
        Ok(EmbeddingStore {
            dim,
            train: BTreeMap::new(),
            validation: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.validation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_vector(&self, id: u32, vector: &[f32]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::validation(format!(
                "vector for id {id} has length {}, store dim is {}",
                vector.len(),
                self.dim
            )));
        }
        if vector.iter().all(|&v| v == 0.0) {
            return Err(Error::validation(format!("vector for id {id} is all-zero")));
        }
        Ok(())
    }

    pub fn insert_train(&mut self, id: u32, vector: Vec<f32>) -> Result<()> {
        self.check_vector(id, &vector)?;
        self.train.insert(id, vector);
        Ok(())
    }

    pub fn insert_validation(&mut self, id: u32, vector: Vec<f32>) -> Result<()> {
        self.check_vector(id, &vector)?;
        self.validation.insert(id, vector);
        Ok(())
    }

    pub fn train_vector(&self, id: u32) -> Result<&[f32]> {
        self.train
            .get(&id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::validation(format!("missing embedding for train id {id}")))
    }

    pub fn validation_vector(&self, id: u32) -> Result<&[f32]> {
        self.validation
            .get(&id)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::validation(format!("missing embedding for validation id {id}")))
    }

    /// Check every train id in `0..n` and validation id in `0..m` is present.
    pub fn validate_coverage(&self, n: usize, m: usize) -> Result<()> {
        for id in 0..n as u32 {
            if !self.train.contains_key(&id) {
                return Err(Error::validation(format!(
                    "embedding store does not cover train id {id} (declared n={n})"
                )));
            }
        }
        for id in 0..m as u32 {
            if !self.validation.contains_key(&id) {
                return Err(Error::validation(format!(
                    "embedding store does not cover validation id {id} (declared m={m})"
                )));
            }
        }
        Ok(())
    }

    /// Write the store in the `EXPVEC1` binary format (little-endian).
    ///
    /// Layout: 8-byte magic, u32 dim, u32 count, then `count` records of
    /// (u32 split tag, u32 id, dim * f32). Records are sorted by (tag, id).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let count = self.train.len() + self.validation.len();
        let mut bytes = Vec::with_capacity(16 + count * (8 + self.dim * 4));
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&(self.dim as u32).to_le_bytes());
        bytes.extend_from_slice(&(count as u32).to_le_bytes());
        for (tag, map) in [(TAG_TRAIN, &self.train), (TAG_VALIDATION, &self.validation)] {
            for (id, vector) in map {
                bytes.extend_from_slice(&tag.to_le_bytes());
                bytes.extend_from_slice(&id.to_le_bytes());
                for v in vector {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let fail = |msg: &str| Error::data(path, 0, msg.to_string());
        if bytes.len() < 16 {
            return Err(fail("truncated header"));
        }
        if &bytes[..8] != MAGIC {
            return Err(fail("bad magic (expected EXPVEC1)"));
        }
        let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let count = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
        if dim == 0 {
            return Err(fail("dim must be >= 1"));
        }
        let record_len = 8 + dim * 4;
        let expected = 16 + count * record_len;
        if bytes.len() < expected {
            return Err(fail("truncated payload"));
        }
        if bytes.len() > expected {
            return Err(fail("trailing bytes after declared records (dim mismatch?)"));
        }
        let mut store = EmbeddingStore::new(dim)?;
        for r in 0..count {
            let at = 16 + r * record_len;
            let tag = u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
            let id = u32::from_le_bytes(bytes[at + 4..at + 8].try_into().unwrap());
            let mut vector = Vec::with_capacity(dim);
            for d in 0..dim {
                let v = at + 8 + d * 4;
                vector.push(f32::from_le_bytes(bytes[v..v + 4].try_into().unwrap()));
            }
            match tag {
                TAG_TRAIN => store.insert_train(id, vector)?,
                TAG_VALIDATION => store.insert_validation(id, vector)?,
                other => {
                    return Err(fail(&format!("unknown split tag {other} in record {r}")));
                }
            }
        }
        Ok(store)
    }
}

/// Cosine similarity, accumulated in f64 and clamped to [-1, 1].
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::validation(format!(
            "cosine length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for i in 0..a.len() {
        let (x, y) = (a[i] as f64, b[i] as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::validation("cosine of zero-norm vector"));
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// The n x m cosine matrix between train and validation questions, plus the
/// per-exemplar row means.
#[derive(Debug, Clone)]
pub struct SimilarityFeatures {
    train_ids: Vec<u32>,
    validation_ids: Vec<u32>,
    rows: Vec<Vec<f64>>,
    means: Vec<f64>,
    row_of: BTreeMap<u32, usize>,
}

impl SimilarityFeatures {
    pub fn train_ids(&self) -> &[u32] {
        &self.train_ids
    }

    pub fn validation_ids(&self) -> &[u32] {
        &self.validation_ids
    }

    pub fn validation_count(&self) -> usize {
        self.validation_ids.len()
    }

    /// Full similarity row for a train id, ordered like `validation_ids`.
    pub fn row(&self, train_id: u32) -> Result<&[f64]> {
        let idx = self.row_index(train_id)?;
        Ok(&self.rows[idx])
    }

    /// The aggregate e_i for a train id.
    pub fn mean(&self, train_id: u32) -> Result<f64> {
        let idx = self.row_index(train_id)?;
        Ok(self.means[idx])
    }

    fn row_index(&self, train_id: u32) -> Result<usize> {
        self.row_of
            .get(&train_id)
            .copied()
            .ok_or_else(|| Error::validation(format!("no features for train id {train_id}")))
    }

    /// Hex fingerprint over dims and matrix bytes, for artifact provenance.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.train_ids.len() as u64).to_le_bytes());
        hasher.update((self.validation_ids.len() as u64).to_le_bytes());
        for row in &self.rows {
            for v in row {
                hasher.update(v.to_le_bytes());
            }
        }
        hex(&hasher.finalize()[..8])
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Build the similarity features for the given id sets.
pub fn build_features(
    train_ids: &[u32],
    validation_ids: &[u32],
    store: &EmbeddingStore,
) -> Result<SimilarityFeatures> {
    let m = validation_ids.len();
    if m == 0 {
        return Err(Error::validation("need at least one validation example"));
    }
    let mut rows = Vec::with_capacity(train_ids.len());
    let mut means = Vec::with_capacity(train_ids.len());
    let mut row_of = BTreeMap::new();
    for (idx, &i) in train_ids.iter().enumerate() {
        let a = store.train_vector(i)?;
        let mut row = Vec::with_capacity(m);
        for &j in validation_ids {
            let b = store.validation_vector(j)?;
            row.push(cosine(a, b)?);
        }
        // Fixed ascending-j accumulation keeps means identical across runs.
        let mut sum = 0.0f64;
        for v in &row {
            sum += v;
        }
        means.push(sum / m as f64);
        rows.push(row);
        row_of.insert(i, idx);
    }
    Ok(SimilarityFeatures {
        train_ids: train_ids.to_vec(),
        validation_ids: validation_ids.to_vec(),
        rows,
        means,
        row_of,
    })
}

/// A hard partition of the training pool into k non-empty clusters.
#[derive(Debug, Clone)]
pub struct ClusterAssignment {
    k: usize,
    ids: Vec<u32>,
    assignment: Vec<usize>,
    centroids: Vec<Vec<f64>>,
    objective_trace: Vec<f64>,
}

impl ClusterAssignment {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn cluster_of(&self, id: u32) -> Result<usize> {
        let idx = self
            .ids
            .iter()
            .position(|&i| i == id)
            .ok_or_else(|| Error::validation(format!("id {id} not clustered")))?;
        Ok(self.assignment[idx])
    }

    /// Member ids of a cluster, ascending.
    pub fn members(&self, cluster: usize) -> Vec<u32> {
        self.ids
            .iter()
            .zip(&self.assignment)
            .filter(|(_, &c)| c == cluster)
            .map(|(&id, _)| id)
            .collect()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    /// Sum of squared distances to assigned centroids after each Lloyd
    /// iteration; non-increasing.
    pub fn objective_trace(&self) -> &[f64] {
        &self.objective_trace
    }

    /// Stable hex fingerprint of (k, assignment), for universe provenance.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        hasher.update((self.k as u64).to_le_bytes());
        for (id, c) in self.ids.iter().zip(&self.assignment) {
            hasher.update(id.to_le_bytes());
            hasher.update((*c as u64).to_le_bytes());
        }
        hex(&hasher.finalize()[..8])
    }
}

fn squared_distance(point: &[f32], centroid: &[f64]) -> f64 {
    let mut sum = 0.0;
    for (p, c) in point.iter().zip(centroid) {
        let d = *p as f64 - c;
        sum += d * d;
    }
    sum
}

fn mean_point(points: &[&[f32]], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0f64; dim];
    for p in points {
        for (o, v) in out.iter_mut().zip(p.iter()) {
            *o += *v as f64;
        }
    }
    for o in &mut out {
        *o /= points.len() as f64;
    }
    out
}

/// Lloyd's k-means with seeded k-means++ initialization.
///
/// Deterministic given (store, k, seed): ties in assignment go to the lowest
/// centroid index, and empty clusters are repaired by moving the point
/// farthest from its current centroid (lowest id on ties).
pub fn kmeans(
    train_ids: &[u32],
    store: &EmbeddingStore,
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<ClusterAssignment> {
    let n = train_ids.len();
    if k < 1 {
        return Err(Error::validation("k must be >= 1"));
    }
    if k > n {
        return Err(Error::validation(format!("k={k} exceeds pool size n={n}")));
    }
    let points: Vec<&[f32]> = train_ids
        .iter()
        .map(|&id| store.train_vector(id))
        .collect::<Result<_>>()?;
    let dim = store.dim();

    // k-means++ seeding: next center drawn with probability proportional to
    // squared distance from the nearest chosen center.
    let mut rng = seeded::rng(seed);
    let mut centroids: Vec<Vec<f64>> = Vec::with_capacity(k);
    let first = rand::Rng::gen_range(&mut rng, 0..n);
    centroids.push(points[first].iter().map(|&v| v as f64).collect());
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rand::Rng::gen_range(&mut rng, 0.0..1.0) * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            // All remaining points coincide with a center; take the first
            // index not yet used as a center.
            (0..n)
                .find(|&i| {
                    !centroids
                        .iter()
                        .any(|c| squared_distance(points[i], c) == 0.0)
                })
                .unwrap_or(centroids.len())
        };
        centroids.push(points[pick].iter().map(|&v| v as f64).collect());
        for (i, p) in points.iter().enumerate() {
            let d = squared_distance(p, centroids.last().unwrap());
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    let mut objective_trace = Vec::new();
    for _ in 0..max_iters.max(1) {
        // Assignment step; ties to the lowest centroid index.
        let mut next = vec![0usize; n];
        for (i, p) in points.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = squared_distance(p, &centroids[0]);
            for (c, centroid) in centroids.iter().enumerate().skip(1) {
                let d = squared_distance(p, centroid);
                if d < best_d {
                    best = c;
                    best_d = d;
                }
            }
            next[i] = best;
        }

        // Repair empty clusters: donate the globally farthest point from a
        // cluster that can spare one.
        loop {
            let mut sizes = vec![0usize; k];
            for &c in &next {
                sizes[c] += 1;
            }
            let Some(empty) = sizes.iter().position(|&s| s == 0) else {
                break;
            };
            let mut donor: Option<(usize, f64)> = None;
            for (i, p) in points.iter().enumerate() {
                if sizes[next[i]] < 2 {
                    continue;
                }
                let d = squared_distance(p, &centroids[next[i]]);
                let better = match donor {
                    None => true,
                    Some((_, best)) => d > best,
                };
                if better {
                    donor = Some((i, d));
                }
            }
            let (point_idx, _) = donor
                .ok_or_else(|| Error::validation("cannot repair empty cluster: all singletons"))?;
            next[point_idx] = empty;
        }

        let converged = next == assignment && !objective_trace.is_empty();
        assignment = next;

        // Update step: centroid = mean of members (ascending id order).
        for c in 0..k {
            let members: Vec<&[f32]> = (0..n)
                .filter(|&i| assignment[i] == c)
                .map(|i| points[i])
                .collect();
            centroids[c] = mean_point(&members, dim);
        }

        let objective: f64 = (0..n)
            .map(|i| squared_distance(points[i], &centroids[assignment[i]]))
            .sum();
        objective_trace.push(objective);
        if converged {
            break;
        }
    }

    Ok(ClusterAssignment {
        k,
        ids: train_ids.to_vec(),
        assignment,
        centroids,
        objective_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn unit_vector(rng: &mut rand_chacha::ChaCha8Rng, dim: usize) -> Vec<f32> {
        loop {
            let v: Vec<f32> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm: f32 = v.iter().map(|x| x * x).sum::<f32>().sqrt();
            if norm > 1e-3 {
                return v.iter().map(|x| x / norm).collect();
            }
        }
    }

    #[test]
    fn cosine_known_values() {
        assert_eq!(cosine(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let c = cosine(&[1.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
    }

    #[test]
    fn cosine_rejects_bad_inputs() {
        assert!(cosine(&[1.0], &[1.0, 2.0]).is_err());
        assert!(cosine(&[0.0, 0.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn features_match_scalar_cosines() {
        let mut rng = seeded::rng(11);
        let mut store = EmbeddingStore::new(6).unwrap();
        for i in 0..5 {
            store.insert_train(i, unit_vector(&mut rng, 6)).unwrap();
        }
        for j in 0..3 {
            store
                .insert_validation(j, unit_vector(&mut rng, 6))
                .unwrap();
        }
        let train: Vec<u32> = (0..5).collect();
        let val: Vec<u32> = (0..3).collect();
        let features = build_features(&train, &val, &store).unwrap();
        for &i in &train {
            let row = features.row(i).unwrap();
            let mut sum = 0.0;
            for (jx, &j) in val.iter().enumerate() {
                let expect =
                    cosine(store.train_vector(i).unwrap(), store.validation_vector(j).unwrap())
                        .unwrap();
                assert!((row[jx] - expect).abs() < 1e-15);
                sum += expect;
            }
            assert!((features.mean(i).unwrap() - sum / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_vectors_give_unit_feature() {
        let mut store = EmbeddingStore::new(3).unwrap();
        store.insert_train(0, vec![0.3, 0.4, 0.5]).unwrap();
        store.insert_validation(0, vec![0.3, 0.4, 0.5]).unwrap();
        let f = build_features(&[0], &[0], &store).unwrap();
        assert_eq!(f.row(0).unwrap(), &[1.0]);
        assert_eq!(f.mean(0).unwrap(), 1.0);
    }

    #[test]
    fn orthogonal_vectors_give_zero_features() {
        let mut store = EmbeddingStore::new(2).unwrap();
        store.insert_train(0, vec![1.0, 0.0]).unwrap();
        store.insert_train(1, vec![1.0, 0.0]).unwrap();
        store.insert_validation(0, vec![0.0, 1.0]).unwrap();
        store.insert_validation(1, vec![0.0, 2.0]).unwrap();
        let f = build_features(&[0, 1], &[0, 1], &store).unwrap();
        assert_eq!(f.row(0).unwrap(), &[0.0, 0.0]);
        assert_eq!(f.mean(1).unwrap(), 0.0);
    }

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let mut rng = seeded::rng(3);
        let mut store = EmbeddingStore::new(4).unwrap();
        for i in 0..3 {
            store.insert_train(i, unit_vector(&mut rng, 4)).unwrap();
        }
        store.insert_validation(0, unit_vector(&mut rng, 4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vectors.bin");
        store.save(&path).unwrap();
        let loaded = EmbeddingStore::load(&path).unwrap();
        assert_eq!(store, loaded);
    }

    #[test]
    fn wrong_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"NOTMAGIC\x01\x00\x00\x00\x00\x00\x00\x00").unwrap();
        let err = EmbeddingStore::load(&path).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn truncated_payload_rejected() {
        let mut store = EmbeddingStore::new(4).unwrap();
        store.insert_train(0, vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trunc.bin");
        store.save(&path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 2]).unwrap();
        assert!(EmbeddingStore::load(&path).is_err());
    }

    #[test]
    fn coverage_error_names_missing_id() {
        let mut store = EmbeddingStore::new(2).unwrap();
        store.insert_train(0, vec![1.0, 0.0]).unwrap();
        store.insert_train(1, vec![0.0, 1.0]).unwrap();
        let err = store.validate_coverage(3, 0).unwrap_err();
        assert!(err.to_string().contains("train id 2"));
    }

    #[test]
    fn kmeans_single_cluster_uses_mean() {
        let mut store = EmbeddingStore::new(2).unwrap();
        store.insert_train(0, vec![1.0, 0.0]).unwrap();
        store.insert_train(1, vec![0.0, 1.0]).unwrap();
        let clusters = kmeans(&[0, 1], &store, 1, 0, 50).unwrap();
        assert_eq!(clusters.members(0), vec![0, 1]);
        let c = &clusters.centroids()[0];
        assert!((c[0] - 0.5).abs() < 1e-12 && (c[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kmeans_k_equals_n_gives_singletons() {
        let mut store = EmbeddingStore::new(2).unwrap();
        store.insert_train(0, vec![1.0, 0.0]).unwrap();
        store.insert_train(1, vec![0.0, 1.0]).unwrap();
        store.insert_train(2, vec![-1.0, 0.0]).unwrap();
        let clusters = kmeans(&[0, 1, 2], &store, 3, 4, 50).unwrap();
        for c in 0..3 {
            assert_eq!(clusters.members(c).len(), 1);
        }
    }

    #[test]
    fn kmeans_recovers_separated_blobs() {
        for seed in 0..10u64 {
            let mut rng = seeded::rng(1000 + seed);
            let mut store = EmbeddingStore::new(3).unwrap();
            // Two tight blobs far apart relative to their spread.
            for i in 0..10u32 {
                let v = vec![
                    100.0 + rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    1.0,
                ];
                store.insert_train(i, v).unwrap();
            }
            for i in 10..20u32 {
                let v = vec![
                    -100.0 + rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    1.0,
                ];
                store.insert_train(i, v).unwrap();
            }
            let ids: Vec<u32> = (0..20).collect();
            let clusters = kmeans(&ids, &store, 2, seed, 100).unwrap();
            let first = clusters.cluster_of(0).unwrap();
            for i in 0..10 {
                assert_eq!(clusters.cluster_of(i).unwrap(), first, "seed {seed}");
            }
            for i in 10..20 {
                assert_ne!(clusters.cluster_of(i).unwrap(), first, "seed {seed}");
            }
            // Every point sits nearer its own centroid than the other one.
            for &id in &ids {
                let p = store.train_vector(id).unwrap();
                let own = clusters.cluster_of(id).unwrap();
                let d_own = squared_distance(p, &clusters.centroids()[own]);
                let d_other = squared_distance(p, &clusters.centroids()[1 - own]);
                assert!(d_own <= d_other);
            }
        }
    }

    #[test]
    fn kmeans_objective_non_increasing() {
        let mut rng = seeded::rng(9);
        let mut store = EmbeddingStore::new(5).unwrap();
        for i in 0..40 {
            store.insert_train(i, unit_vector(&mut rng, 5)).unwrap();
        }
        let ids: Vec<u32> = (0..40).collect();
        let clusters = kmeans(&ids, &store, 5, 2, 100).unwrap();
        let trace = clusters.objective_trace();
        assert!(!trace.is_empty());
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "objective rose: {:?}", w);
        }
    }

    #[test]
    fn kmeans_is_deterministic() {
        let mut rng = seeded::rng(21);
        let mut store = EmbeddingStore::new(4).unwrap();
        for i in 0..30 {
            store.insert_train(i, unit_vector(&mut rng, 4)).unwrap();
        }
        let ids: Vec<u32> = (0..30).collect();
        let a = kmeans(&ids, &store, 4, 7, 100).unwrap();
        let b = kmeans(&ids, &store, 4, 7, 100).unwrap();
        assert_eq!(a.assignment, b.assignment);
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn kmeans_rejects_bad_k() {
        let mut store = EmbeddingStore::new(2).unwrap();
        store.insert_train(0, vec![1.0, 0.0]).unwrap();
        assert!(kmeans(&[0], &store, 0, 0, 10).is_err());
        assert!(kmeans(&[0], &store, 2, 0, 10).is_err());
    }

    proptest! {
        #[test]
        fn cosine_symmetric_and_scale_invariant(
            a in proptest::collection::vec(-10.0f32..10.0, 4),
            b in proptest::collection::vec(-10.0f32..10.0, 4),
            scale_exp in -3i32..8,
        ) {
            prop_assume!(a.iter().any(|&v| v.abs() > 1e-3));
            prop_assume!(b.iter().any(|&v| v.abs() > 1e-3));
            let ab = cosine(&a, &b).unwrap();
            let ba = cosine(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-12);
            // Power-of-two scales are exact in f32, so invariance is tight.
            let scale = (scale_exp as f64).exp2() as f32;
            let scaled: Vec<f32> = a.iter().map(|&v| v * scale).collect();
            let sab = cosine(&scaled, &b).unwrap();
            prop_assert!((ab - sab).abs() < 1e-12);
            prop_assert!((-1.0..=1.0).contains(&ab));
        }
    }
}
