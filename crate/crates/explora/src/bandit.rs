//! The exploration loop: measure subset losses frugally, fit the linear
//! scorer, and swap the worst in-set subset for the best out-of-set subset
//! each round.

use std::collections::BTreeMap;

use rand::RngCore;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::{Exemplar, Metric, ValidationExample};
use crate::embed::SimilarityFeatures;
use crate::error::{Error, Result};
use crate::llm::{
    build_prompt, decode_regex, generate_cached, CallCounter, DecodeParams, GenerationBackend,
    PromptSpec, ResponseCache,
};
use crate::pool::{CandidateUniverse, ExemplarSubset};
use crate::score::{approximation_error, fit_alpha, sigma, LossObservation, ScorerParams};
use crate::seeded;

/// Loop sizes and seeds for a selection run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditConfig {
    /// l: size of the low-loss set kept across rounds.
    pub low_loss_size: usize,
    /// l': negatives sampled per round from the out-set.
    pub negatives_per_round: usize,
    /// T: maximum exploration rounds.
    pub max_rounds: usize,
    pub seed: u64,
    /// Stop when the approximation error changes less than this between rounds.
    pub stop_tolerance: f64,
    pub ridge: f64,
    /// Fit on every observation made so far instead of only the current
    /// round's in-set and negatives.
    pub cumulative_fit: bool,
}

impl Default for BanditConfig {
    fn default() -> Self {
        BanditConfig {
            low_loss_size: 10,
            negatives_per_round: 5,
            max_rounds: 10,
            seed: 0,
            stop_tolerance: 1e-6,
            ridge: crate::score::DEFAULT_RIDGE,
            cumulative_fit: false,
        }
    }
}

impl BanditConfig {
    pub fn validate(&self, universe_size: usize) -> Result<()> {
        if self.low_loss_size < 1 {
            return Err(Error::validation("low_loss_size must be >= 1"));
        }
        if self.max_rounds < 1 {
            return Err(Error::validation("max_rounds must be >= 1"));
        }
        if self.low_loss_size + self.negatives_per_round > universe_size {
            return Err(Error::validation(format!(
                "low_loss_size {} + negatives_per_round {} exceeds universe size {universe_size}",
                self.low_loss_size, self.negatives_per_round
            )));
        }
        if self.stop_tolerance < 0.0 {
            return Err(Error::validation("stop_tolerance must be >= 0"));
        }
        Ok(())
    }
}

/// Everything needed to turn a subset into a measured loss.
pub struct EvalContext<'a> {
    pub exemplars: &'a [Exemplar],
    pub prompt_spec: &'a PromptSpec,
    pub backend: &'a dyn GenerationBackend,
    pub cache: &'a ResponseCache,
    pub counter: &'a CallCounter,
    pub decode: DecodeParams,
    pub pattern: Regex,
    pub metric: Metric,
    /// Bounded fan-out for the per-validation-example calls.
    pub max_inflight: usize,
}

fn annotate_validation(err: Error, id: u32) -> Error {
    match err {
        Error::Backend {
            backend,
            prompt_hash,
            msg,
        } => Error::Backend {
            backend,
            prompt_hash,
            msg: format!("validation id {id}: {msg}"),
        },
        other => Error::validation(format!("validation id {id}: {other}")),
    }
}

/// Measure one subset's validation loss: the fraction of validation examples
/// whose decoded answer misses the gold under the configured metric.
///
/// Generation always uses a single sample here; self-consistency is an
/// evaluation-time variant, and call accounting assumes one call per
/// (subset, validation example). The result does not depend on completion
/// order: bits are aggregated by ascending validation index.
pub fn subset_loss(
    ctx: &EvalContext,
    subset: &ExemplarSubset,
    validation: &[ValidationExample],
) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::validation("subset_loss needs validation examples"));
    }
    let single = ctx.decode.clone().with_samples(1);
    let worker = |example: &ValidationExample| -> Result<bool> {
        let prompt = build_prompt(
            std::slice::from_ref(subset),
            &example.input,
            ctx.exemplars,
            ctx.prompt_spec,
        )?;
        let responses = generate_cached(ctx.backend, ctx.cache, ctx.counter, &prompt, &single)?;
        let decoded = decode_regex(&responses[0], &ctx.pattern);
        Ok(ctx.metric.score(&decoded, &example.gold))
    };

    let workers = ctx.max_inflight.clamp(1, validation.len());
    let bits: Vec<Result<bool>> = if workers > 1 {
        let mut slots: Vec<Option<Result<bool>>> = (0..validation.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let worker = &worker;
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    scope.spawn(move || {
                        validation
                            .iter()
                            .enumerate()
                            .filter(|(j, _)| j % workers == w)
                            .map(|(j, v)| (j, worker(v)))
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            for handle in handles {
                for (j, bit) in handle.join().expect("loss worker panicked") {
                    slots[j] = Some(bit);
                }
            }
        });
        slots.into_iter().map(|s| s.unwrap()).collect()
    } else {
        validation.iter().map(worker).collect()
    };

    let mut wrong = 0usize;
    for (j, bit) in bits.into_iter().enumerate() {
        match bit {
            Ok(true) => {}
            Ok(false) => wrong += 1,
            Err(e) => return Err(annotate_validation(e, validation[j].id)),
        }
    }
    Ok(wrong as f64 / validation.len() as f64)
}

/// One executed swap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwapEvent {
    pub round: usize,
    /// Universe index removed from the in-set.
    pub removed: usize,
    /// Universe index added from the out-set.
    pub added: usize,
    pub sigma_removed: f64,
    pub sigma_added: f64,
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// Hit the round cap T.
    MaxRounds,
    /// Approximation error unchanged between rounds within tolerance.
    ApproxErrorConverged,
    /// Two consecutive rounds proposed no swap.
    NoSwapTwice,
    /// The out-set was empty; nothing to explore.
    NothingToExplore,
}

/// Per-round diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundDiag {
    pub round: usize,
    pub approx_error: f64,
    pub swap: Option<SwapEvent>,
    pub calls: crate::llm::CallSnapshot,
}

/// Final state of a selection run.
#[derive(Debug, Clone)]
pub struct SelectionState {
    pub rounds_run: usize,
    pub in_set: Vec<usize>,
    /// Canonical key -> measured loss; write-once per key.
    pub loss_cache: BTreeMap<Vec<u32>, f64>,
    pub scorer: ScorerParams,
    pub swap_log: Vec<SwapEvent>,
    pub rounds: Vec<RoundDiag>,
    pub approx_errors: Vec<f64>,
    pub stop_reason: StopReason,
}

/// A subset with its universe position and measured loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSubset {
    pub universe_index: usize,
    pub member_ids: Vec<u32>,
    pub measured_loss: f64,
}

pub struct SelectionOutcome {
    /// The final low-loss set, ascending universe index, losses measured.
    pub final_set: Vec<RankedSubset>,
    pub state: SelectionState,
}

fn measure_if_needed(
    ctx: &EvalContext,
    universe: &CandidateUniverse,
    validation: &[ValidationExample],
    loss_cache: &mut BTreeMap<Vec<u32>, f64>,
    index: usize,
) -> Result<f64> {
    let subset = universe.subset(index);
    if let Some(&loss) = loss_cache.get(subset.key()) {
        return Ok(loss);
    }
    let loss = subset_loss(ctx, subset, validation)?;
    loss_cache.insert(subset.key().to_vec(), loss);
    Ok(loss)
}

/// Run the selection loop.
///
/// Start from a seeded random in-set of size l. Each round: sample l'
/// negatives from the out-set, measure any unmeasured losses (the loss cache
/// is write-once, so a subset is never evaluated twice), fit the scorer on
/// the round's observations, then swap the highest-scored in-set subset for
/// the lowest-scored out-set subset when the latter scores strictly lower.
/// Stops at the round cap, when the approximation error stalls within
/// tolerance, or after two consecutive swap-free rounds.
pub fn explora_run(
    ctx: &EvalContext,
    universe: &CandidateUniverse,
    features: &SimilarityFeatures,
    validation: &[ValidationExample],
    config: &BanditConfig,
) -> Result<SelectionOutcome> {
    config.validate(universe.len())?;

    // Independent seeded streams for the three random choices.
    let mut master = seeded::rng(config.seed);
    let init_seed = master.next_u64();
    let alpha_seed = master.next_u64();
    let negatives_seed = master.next_u64();

    let mut in_set =
        seeded::sample_without_replacement(init_seed, universe.len(), config.low_loss_size);
    in_set.sort_unstable();

    let n = ctx.exemplars.len();
    let active = universe.active_ids();
    let mut scorer = ScorerParams::init(n, &active, config.ridge, alpha_seed)?;
    let mut negatives_rng = seeded::rng(negatives_seed);

    let mut loss_cache: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    let mut measured_order: Vec<usize> = Vec::new();
    let mut swap_log = Vec::new();
    let mut rounds = Vec::new();
    let mut approx_errors: Vec<f64> = Vec::new();
    let mut no_swap_streak = 0usize;
    let mut stop_reason = StopReason::MaxRounds;
    let mut rounds_run = 0usize;

    for round in 0..config.max_rounds {
        rounds_run = round + 1;
        let out_set: Vec<usize> = (0..universe.len())
            .filter(|i| in_set.binary_search(i).is_err())
            .collect();

        let negatives: Vec<usize> = if out_set.is_empty() || config.negatives_per_round == 0 {
            Vec::new()
        } else {
            let picks = seeded::sample_without_replacement_with(
                &mut negatives_rng,
                out_set.len(),
                config.negatives_per_round.min(out_set.len()),
            );
            picks.into_iter().map(|p| out_set[p]).collect()
        };

        for &idx in in_set.iter().chain(&negatives) {
            let fresh = !loss_cache.contains_key(universe.subset(idx).key());
            measure_if_needed(ctx, universe, validation, &mut loss_cache, idx)?;
            if fresh {
                measured_order.push(idx);
            }
        }

        let observation_indices: Vec<usize> = if config.cumulative_fit {
            measured_order.clone()
        } else {
            in_set.iter().copied().chain(negatives.clone()).collect()
        };
        let observations: Vec<LossObservation> = observation_indices
            .iter()
            .map(|&idx| {
                let subset = universe.subset(idx);
                LossObservation::new(subset.clone(), loss_cache[subset.key()])
            })
            .collect::<Result<_>>()?;

        scorer = fit_alpha(&observations, features, config.ridge, &scorer)?;
        let approx_error = approximation_error(&scorer, &observations, features)?;

        let swap = if out_set.is_empty() {
            None
        } else {
            // Ascending scans with strict comparisons break ties toward the
            // lowest universe index.
            let mut best_out = out_set[0];
            let mut best_out_sigma = sigma(&scorer, universe.subset(best_out), features)?;
            for &idx in &out_set[1..] {
                let s = sigma(&scorer, universe.subset(idx), features)?;
                if s < best_out_sigma {
                    best_out = idx;
                    best_out_sigma = s;
                }
            }
            let mut worst_in = in_set[0];
            let mut worst_in_sigma = sigma(&scorer, universe.subset(worst_in), features)?;
            for &idx in &in_set[1..] {
                let s = sigma(&scorer, universe.subset(idx), features)?;
                if s > worst_in_sigma {
                    worst_in = idx;
                    worst_in_sigma = s;
                }
            }
            if best_out_sigma < worst_in_sigma {
                Some(SwapEvent {
                    round,
                    removed: worst_in,
                    added: best_out,
                    sigma_removed: worst_in_sigma,
                    sigma_added: best_out_sigma,
                })
            } else {
                None
            }
        };

        if let Some(event) = swap {
            let pos = in_set.binary_search(&event.removed).expect("removed not in set");
            in_set.remove(pos);
            let pos = in_set.binary_search(&event.added).unwrap_err();
            in_set.insert(pos, event.added);
            swap_log.push(event);
            no_swap_streak = 0;
        } else {
            no_swap_streak += 1;
        }

        approx_errors.push(approx_error);
        rounds.push(RoundDiag {
            round,
            approx_error,
            swap,
            calls: ctx.counter.snapshot(),
        });

        if out_set.is_empty() {
            stop_reason = StopReason::NothingToExplore;
            break;
        }
        if approx_errors.len() >= 2 {
            let delta = (approx_errors[approx_errors.len() - 1]
                - approx_errors[approx_errors.len() - 2])
                .abs();
            if delta < config.stop_tolerance {
                stop_reason = StopReason::ApproxErrorConverged;
                break;
            }
        }
        if round + 1 == config.max_rounds {
            stop_reason = StopReason::MaxRounds;
            break;
        }
        if no_swap_streak >= 2 {
            stop_reason = StopReason::NoSwapTwice;
            break;
        }
    }

    // A swap in the final round can leave the newcomer unmeasured.
    for &idx in &in_set {
        measure_if_needed(ctx, universe, validation, &mut loss_cache, idx)?;
    }

    let final_set: Vec<RankedSubset> = in_set
        .iter()
        .map(|&idx| {
            let subset = universe.subset(idx);
            RankedSubset {
                universe_index: idx,
                member_ids: subset.members().to_vec(),
                measured_loss: loss_cache[subset.key()],
            }
        })
        .collect();

    Ok(SelectionOutcome {
        final_set,
        state: SelectionState {
            rounds_run,
            in_set,
            loss_cache,
            scorer,
            swap_log,
            rounds,
            approx_errors,
            stop_reason,
        },
    })
}

/// Exhaustive baseline: measure every universe subset and rank ascending by
/// (loss, universe index).
pub struct BruteForceOutcome {
    /// Every subset, ranked.
    pub ranked: Vec<RankedSubset>,
    /// The l lowest.
    pub top: Vec<RankedSubset>,
    /// The single minimum-loss subset.
    pub best: RankedSubset,
}

pub fn brute_force_top_l(
    ctx: &EvalContext,
    universe: &CandidateUniverse,
    validation: &[ValidationExample],
    l: usize,
) -> Result<BruteForceOutcome> {
    if universe.is_empty() {
        return Err(Error::validation("universe is empty"));
    }
    if l > universe.len() {
        return Err(Error::validation(format!(
            "l={l} exceeds universe size {}",
            universe.len()
        )));
    }
    let mut loss_cache = BTreeMap::new();
    let mut ranked: Vec<RankedSubset> = (0..universe.len())
        .map(|idx| {
            let loss = measure_if_needed(ctx, universe, validation, &mut loss_cache, idx)?;
            Ok(RankedSubset {
                universe_index: idx,
                member_ids: universe.subset(idx).members().to_vec(),
                measured_loss: loss,
            })
        })
        .collect::<Result<_>>()?;
    ranked.sort_by(|a, b| {
        a.measured_loss
            .partial_cmp(&b.measured_loss)
            .unwrap()
            .then(a.universe_index.cmp(&b.universe_index))
    });
    let top = ranked[..l].to_vec();
    let best = ranked[0].clone();
    Ok(BruteForceOutcome { ranked, top, best })
}

/// Single-fit ablation: measure every universe subset, fit the scorer once
/// on all observations, and return the subset the fitted model scores lowest
/// (ties to the lowest universe index).
pub struct NoExplorationOutcome {
    pub chosen: RankedSubset,
    pub scorer: ScorerParams,
    /// Modeled loss per universe subset.
    pub predictions: Vec<f64>,
}

pub fn no_exploration_fit(
    ctx: &EvalContext,
    universe: &CandidateUniverse,
    features: &SimilarityFeatures,
    validation: &[ValidationExample],
    ridge: f64,
    seed: u64,
) -> Result<NoExplorationOutcome> {
    if universe.is_empty() {
        return Err(Error::validation("universe is empty"));
    }
    let mut loss_cache = BTreeMap::new();
    let mut observations = Vec::with_capacity(universe.len());
    for idx in 0..universe.len() {
        let loss = measure_if_needed(ctx, universe, validation, &mut loss_cache, idx)?;
        observations.push(LossObservation::new(universe.subset(idx).clone(), loss)?);
    }
    let init = ScorerParams::init(ctx.exemplars.len(), &universe.active_ids(), ridge, seed)?;
    let scorer = fit_alpha(&observations, features, ridge, &init)?;
    let predictions: Vec<f64> = (0..universe.len())
        .map(|idx| sigma(&scorer, universe.subset(idx), features))
        .collect::<Result<_>>()?;
    let mut chosen_idx = 0usize;
    for (idx, &p) in predictions.iter().enumerate().skip(1) {
        if p < predictions[chosen_idx] {
            chosen_idx = idx;
        }
    }
    let chosen = RankedSubset {
        universe_index: chosen_idx,
        member_ids: universe.subset(chosen_idx).members().to_vec(),
        measured_loss: loss_cache[universe.subset(chosen_idx).key()],
    };
    Ok(NoExplorationOutcome {
        chosen,
        scorer,
        predictions,
    })
}
