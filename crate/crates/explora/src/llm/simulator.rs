//! Deterministic simulated backend.
//!
//! Stands in for a real LLM in tests and desk runs: each candidate subset
//! gets a hidden linear score against every validation question, and the
//! subset answers correctly exactly when its score clears a per-question
//! quantile threshold. Subset losses are therefore known in closed form,
//! which is what downstream brute-force oracles check against.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{build_prompt, DecodeParams, GenerationBackend, PromptSpec};
use crate::corpus::{Exemplar, TestExample, ValidationExample};
use crate::embed::SimilarityFeatures;
use crate::error::{Error, Result};
use crate::pool::CandidateUniverse;
use crate::seeded;

/// Seed and threshold quantile for the linear simulator. The hidden weight
/// vector is reproducible from the seed alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulatedBackendConfig {
    pub seed: u64,
    pub threshold_quantile: f64,
}

impl Default for SimulatedBackendConfig {
    fn default() -> Self {
        SimulatedBackendConfig {
            seed: 0,
            threshold_quantile: 0.5,
        }
    }
}

/// How the simulator decides correctness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimulatorMode {
    /// Hidden linear score vs per-question quantile threshold.
    Linear,
    /// Every recognized prompt is answered with its gold answer.
    AlwaysCorrect,
    /// Every recognized prompt is answered wrongly.
    NeverCorrect,
}

/// Draw the hidden weight vector for a pool of `n` exemplars.
pub fn draw_hidden_weights(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = seeded::rng(seed);
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

pub struct SimulatedBackend {
    name: String,
    mode: SimulatorMode,
    seed: u64,
    quantile: f64,
    beta: Vec<f64>,
    /// prompt hash -> (universe index, validation index), selection phase.
    scored_prompts: HashMap<String, (usize, usize)>,
    /// [universe index][validation index].
    scores: Vec<Vec<f64>>,
    /// Per-validation-question thresholds, fixed at construction.
    thresholds: Vec<f64>,
    /// (rendered query, gold), for prompts outside the scored registry.
    queries: Vec<(String, String)>,
}

impl SimulatedBackend {
    /// Linear simulator over a universe, with weights drawn from the seed.
    pub fn linear(
        config: SimulatedBackendConfig,
        features: &SimilarityFeatures,
        universe: &CandidateUniverse,
        validation: &[ValidationExample],
        exemplars: &[Exemplar],
        spec: &PromptSpec,
    ) -> Result<Self> {
        let beta = draw_hidden_weights(config.seed, exemplars.len());
        let name = format!("sim-linear-s{}-q{}", config.seed, config.threshold_quantile);
        Self::linear_with_weights(
            name,
            config.seed,
            beta,
            config.threshold_quantile,
            features,
            universe,
            validation,
            exemplars,
            spec,
        )
    }

    /// Linear simulator with explicit weights (tests plant these).
    #[allow(clippy::too_many_arguments)]
    pub fn linear_with_weights(
        name: String,
        seed: u64,
        beta: Vec<f64>,
        quantile: f64,
        features: &SimilarityFeatures,
        universe: &CandidateUniverse,
        validation: &[ValidationExample],
        exemplars: &[Exemplar],
        spec: &PromptSpec,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&quantile) || quantile <= 0.0 {
            return Err(Error::validation(format!(
                "threshold quantile must lie in (0,1), got {quantile}"
            )));
        }
        if beta.len() < exemplars.len() {
            return Err(Error::validation(format!(
                "hidden weights cover {} ids, pool has {}",
                beta.len(),
                exemplars.len()
            )));
        }
        let m = validation.len();
        let mut scores = Vec::with_capacity(universe.len());
        for subset in universe.subsets() {
            let mut row = Vec::with_capacity(m);
            for j in 0..m {
                let mut score = 0.0f64;
                for &i in subset.key() {
                    let feature_row = features.row(i)?;
                    score += beta[i as usize] * feature_row[j];
                }
                row.push(score);
            }
            scores.push(row);
        }
        let thresholds = (0..m)
            .map(|j| {
                let mut column: Vec<f64> = scores.iter().map(|row| row[j]).collect();
                column.sort_by(|a, b| a.partial_cmp(b).unwrap());
                // Rank-based quantile: index floor(q * count), clamped.
                let idx = ((quantile * column.len() as f64).floor() as usize)
                    .min(column.len() - 1);
                column[idx]
            })
            .collect();

        let mut scored_prompts = HashMap::new();
        for (s, subset) in universe.subsets().iter().enumerate() {
            for (j, example) in validation.iter().enumerate() {
                let prompt =
                    build_prompt(std::slice::from_ref(subset), &example.input, exemplars, spec)?;
                scored_prompts.insert(super::sha256_hex(prompt.as_bytes()), (s, j));
            }
        }
        let queries = validation
            .iter()
            .map(|v| (spec.render_query(&v.input), v.gold.clone()))
            .collect();

        Ok(SimulatedBackend {
            name,
            mode: SimulatorMode::Linear,
            seed,
            quantile,
            beta,
            scored_prompts,
            scores,
            thresholds,
            queries,
        })
    }

    fn fixed(mode: SimulatorMode, name: &str, validation: &[ValidationExample], spec: &PromptSpec) -> Self {
        SimulatedBackend {
            name: name.to_string(),
            mode,
            seed: 0,
            quantile: 0.5,
            beta: Vec::new(),
            scored_prompts: HashMap::new(),
            scores: Vec::new(),
            thresholds: Vec::new(),
            queries: validation
                .iter()
                .map(|v| (spec.render_query(&v.input), v.gold.clone()))
                .collect(),
        }
    }

    /// A simulator that answers every recognized prompt correctly.
    pub fn always_correct(validation: &[ValidationExample], spec: &PromptSpec) -> Self {
        Self::fixed(SimulatorMode::AlwaysCorrect, "sim-echo", validation, spec)
    }

    /// A simulator that answers every recognized prompt wrongly.
    pub fn never_correct(validation: &[ValidationExample], spec: &PromptSpec) -> Self {
        Self::fixed(SimulatorMode::NeverCorrect, "sim-never", validation, spec)
    }

    /// Make test queries recognizable. In linear mode their correctness is a
    /// deterministic coin in (seed, prompt).
    pub fn register_test_examples(&mut self, tests: &[TestExample], spec: &PromptSpec) {
        for t in tests {
            self.queries.push((spec.render_query(&t.input), t.gold.clone()));
        }
    }

    pub fn mode(&self) -> SimulatorMode {
        self.mode
    }

    pub fn hidden_weights(&self) -> &[f64] {
        &self.beta
    }

    pub fn threshold(&self, validation_index: usize) -> f64 {
        self.thresholds[validation_index]
    }

    pub fn score(&self, universe_index: usize, validation_index: usize) -> f64 {
        self.scores[universe_index][validation_index]
    }

    /// Closed-form loss of a universe subset: the fraction of validation
    /// questions whose threshold its score misses.
    pub fn true_loss(&self, universe_index: usize) -> f64 {
        let row = &self.scores[universe_index];
        let wrong = row
            .iter()
            .zip(&self.thresholds)
            .filter(|(score, tau)| *score < *tau)
            .count();
        wrong as f64 / row.len() as f64
    }

    fn respond(gold: &str, correct: bool) -> String {
        if correct {
            format!("The answer is {gold}")
        } else {
            // Appending "+1" to the gold text guarantees a metric mismatch
            // whatever the gold looks like.
            format!("The answer is {gold}+1")
        }
    }

    fn coin(&self, prompt: &str) -> bool {
        let mut hasher = Sha256::new();
        hasher.update(self.seed.to_le_bytes());
        hasher.update(prompt.as_bytes());
        hasher.finalize()[0] & 1 == 0
    }

    /// Longest registered rendered query that terminates this prompt.
    fn match_query(&self, prompt: &str) -> Option<&(String, String)> {
        self.queries
            .iter()
            .filter(|(q, _)| prompt.ends_with(q.as_str()))
            .max_by_key(|(q, _)| q.len())
    }
}

impl GenerationBackend for SimulatedBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, prompt: &str, _params: &DecodeParams, _sample_index: u32) -> Result<String> {
        if self.mode == SimulatorMode::Linear {
            if let Some(&(s, j)) = self.scored_prompts.get(&super::sha256_hex(prompt.as_bytes())) {
                let correct = self.scores[s][j] >= self.thresholds[j];
                let gold = &self.queries[j].1;
                return Ok(Self::respond(gold, correct));
            }
        }
        let Some((_, gold)) = self.match_query(prompt) else {
            return Err(Error::validation(
                "prompt not covered by simulator registry (missing feature coverage?)",
            ));
        };
        let correct = match self.mode {
            SimulatorMode::AlwaysCorrect => true,
            SimulatorMode::NeverCorrect => false,
            SimulatorMode::Linear => self.coin(prompt),
        };
        Ok(Self::respond(gold, correct))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{build_features, EmbeddingStore};
    use crate::pool::{CandidateUniverse, ExemplarSubset, UniverseProvenance};

    fn tiny_world() -> (
        Vec<Exemplar>,
        Vec<ValidationExample>,
        SimilarityFeatures,
        CandidateUniverse,
        PromptSpec,
    ) {
        let exemplars: Vec<Exemplar> = (0..4)
            .map(|i| Exemplar {
                id: i,
                question: format!("q{i}"),
                rationale: format!("r{i}"),
                answer: format!("{i}"),
            })
            .collect();
        let validation: Vec<ValidationExample> = (0..2)
            .map(|j| ValidationExample {
                id: j,
                input: format!("v{j}"),
                gold: format!("g{j}"),
            })
            .collect();
        let mut store = EmbeddingStore::new(2).unwrap();
        store.insert_train(0, vec![1.0, 0.0]).unwrap();
        store.insert_train(1, vec![0.0, 1.0]).unwrap();
        store.insert_train(2, vec![1.0, 1.0]).unwrap();
        store.insert_train(3, vec![1.0, -1.0]).unwrap();
        store.insert_validation(0, vec![1.0, 0.2]).unwrap();
        store.insert_validation(1, vec![0.3, 1.0]).unwrap();
        let features = build_features(&[0, 1, 2, 3], &[0, 1], &store).unwrap();
        let subsets = vec![
            ExemplarSubset::new(vec![0, 1]).unwrap(),
            ExemplarSubset::new(vec![2, 3]).unwrap(),
            ExemplarSubset::new(vec![0, 3]).unwrap(),
        ];
        let universe = CandidateUniverse::new(
            subsets,
            UniverseProvenance {
                k: 2,
                universe_size: 3,
                seed: 0,
                cluster_fingerprint: "t".into(),
            },
        )
        .unwrap();
        (exemplars, validation, features, universe, PromptSpec::default())
    }

    #[test]
    fn zero_weights_make_every_subset_lossless() {
        let (exemplars, validation, features, universe, spec) = tiny_world();
        let sim = SimulatedBackend::linear_with_weights(
            "sim-test".into(),
            0,
            vec![0.0; 4],
            0.5,
            &features,
            &universe,
            &validation,
            &exemplars,
            &spec,
        )
        .unwrap();
        for s in 0..universe.len() {
            assert_eq!(sim.true_loss(s), 0.0);
        }
    }

    #[test]
    fn threshold_splits_two_subsets() {
        // Scores 1.0 and -1.0 at quantile 0.5: only the high scorer passes.
        let (exemplars, validation, _, _, spec) = tiny_world();
        let mut store = EmbeddingStore::new(2).unwrap();
        store.insert_train(0, vec![1.0, 0.0]).unwrap();
        store.insert_train(1, vec![-1.0, 0.0]).unwrap();
        store.insert_train(2, vec![0.0, 1.0]).unwrap();
        store.insert_train(3, vec![0.0, -1.0]).unwrap();
        store.insert_validation(0, vec![1.0, 0.0]).unwrap();
        let features = build_features(&[0, 1, 2, 3], &[0], &store).unwrap();
        let universe = CandidateUniverse::new(
            vec![
                ExemplarSubset::new(vec![0]).unwrap(),
                ExemplarSubset::new(vec![1]).unwrap(),
            ],
            UniverseProvenance {
                k: 1,
                universe_size: 2,
                seed: 0,
                cluster_fingerprint: "t".into(),
            },
        )
        .unwrap();
        let validation = &validation[..1];
        let sim = SimulatedBackend::linear_with_weights(
            "sim-test".into(),
            0,
            vec![1.0, 1.0, 0.0, 0.0],
            0.5,
            &features,
            &universe,
            validation,
            &exemplars,
            &spec,
        )
        .unwrap();
        assert_eq!(sim.score(0, 0), 1.0);
        assert_eq!(sim.score(1, 0), -1.0);
        assert_eq!(sim.true_loss(0), 0.0);
        assert_eq!(sim.true_loss(1), 1.0);
    }

    #[test]
    fn scored_prompts_answer_gold_or_wrong() {
        let (exemplars, validation, features, universe, spec) = tiny_world();
        let sim = SimulatedBackend::linear(
            SimulatedBackendConfig {
                seed: 5,
                threshold_quantile: 0.5,
            },
            &features,
            &universe,
            &validation,
            &exemplars,
            &spec,
        )
        .unwrap();
        let params = DecodeParams::default();
        for (s, subset) in universe.subsets().iter().enumerate() {
            for (j, v) in validation.iter().enumerate() {
                let prompt =
                    build_prompt(std::slice::from_ref(subset), &v.input, &exemplars, &spec)
                        .unwrap();
                let response = sim.generate(&prompt, &params, 0).unwrap();
                let expect_correct = sim.score(s, j) >= sim.threshold(j);
                assert_eq!(
                    response,
                    if expect_correct {
                        format!("The answer is {}", v.gold)
                    } else {
                        format!("The answer is {}+1", v.gold)
                    }
                );
            }
        }
    }

    #[test]
    fn fixed_modes_and_unknown_prompts() {
        let (exemplars, validation, _, _, spec) = tiny_world();
        let echo = SimulatedBackend::always_correct(&validation, &spec);
        let never = SimulatedBackend::never_correct(&validation, &spec);
        let subset = ExemplarSubset::new(vec![0, 1]).unwrap();
        let prompt =
            build_prompt(std::slice::from_ref(&subset), &validation[1].input, &exemplars, &spec)
                .unwrap();
        let params = DecodeParams::default();
        assert_eq!(
            echo.generate(&prompt, &params, 0).unwrap(),
            "The answer is g1"
        );
        assert_eq!(
            never.generate(&prompt, &params, 0).unwrap(),
            "The answer is g1+1"
        );
        assert!(echo.generate("unrelated text", &params, 0).is_err());
    }

    #[test]
    fn test_queries_are_deterministic_coins() {
        let (exemplars, validation, features, universe, spec) = tiny_world();
        let mut sim = SimulatedBackend::linear(
            SimulatedBackendConfig {
                seed: 9,
                threshold_quantile: 0.5,
            },
            &features,
            &universe,
            &validation,
            &exemplars,
            &spec,
        )
        .unwrap();
        let tests = vec![TestExample {
            id: 0,
            input: "t0".into(),
            gold: "42".into(),
        }];
        sim.register_test_examples(&tests, &spec);
        let subset = ExemplarSubset::new(vec![0, 1]).unwrap();
        let prompt =
            build_prompt(std::slice::from_ref(&subset), "t0", &exemplars, &spec).unwrap();
        let params = DecodeParams::default();
        let a = sim.generate(&prompt, &params, 0).unwrap();
        let b = sim.generate(&prompt, &params, 0).unwrap();
        assert_eq!(a, b);
        assert!(a == "The answer is 42" || a == "The answer is 42+1");
    }

    #[test]
    fn hidden_weights_reproducible_from_seed() {
        let a = draw_hidden_weights(7, 10);
        let b = draw_hidden_weights(7, 10);
        assert_eq!(a, b);
        assert_ne!(a, draw_hidden_weights(8, 10));
    }
}
