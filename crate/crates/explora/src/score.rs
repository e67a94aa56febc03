//! The linear subset-loss model and its least-squares fit.
//!
//! A subset's score is the sum of per-exemplar weights times the exemplar's
//! aggregate similarity to the validation questions. Fitting minimizes the
//! squared gap to measured losses plus a small ridge term; with ~15 rows
//! against up to a couple hundred active weights the ridge is what keeps the
//! system well-posed.

use std::collections::BTreeSet;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embed::SimilarityFeatures;
use crate::error::{Error, Result};
use crate::pool::ExemplarSubset;
use crate::seeded;

pub const DEFAULT_RIDGE: f64 = 1e-3;

/// The weight vector of the loss model.
///
/// Weights outside `active_ids` (the ids appearing anywhere in the candidate
/// universe) are pinned to zero through both initialization and fitting.
/// Weights may go negative; nothing clamps them.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScorerParams {
    alpha: Vec<f64>,
    active_ids: Vec<u32>,
    pub ridge: f64,
    pub init_seed: u64,
}

impl ScorerParams {
    /// Gaussian-initialized weights over the active ids (ascending order of
    /// id, so the draw is reproducible).
    pub fn init(n: usize, active_ids: &[u32], ridge: f64, init_seed: u64) -> Result<Self> {
        if ridge < 0.0 {
            return Err(Error::validation("ridge must be >= 0"));
        }
        let distinct: BTreeSet<u32> = active_ids.iter().copied().collect();
        if let Some(&max) = distinct.iter().next_back() {
            if max as usize >= n {
                return Err(Error::validation(format!(
                    "active id {max} out of range for pool size {n}"
                )));
            }
        }
        let mut rng = seeded::rng(init_seed);
        let mut alpha = vec![0.0f64; n];
        for &id in &distinct {
            alpha[id as usize] = rng.sample(StandardNormal);
        }
        Ok(ScorerParams {
            alpha,
            active_ids: distinct.into_iter().collect(),
            ridge,
            init_seed,
        })
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn active_ids(&self) -> &[u32] {
        &self.active_ids
    }

    pub fn weight(&self, id: u32) -> f64 {
        self.alpha[id as usize]
    }

    fn with_alpha(&self, alpha: Vec<f64>) -> Self {
        ScorerParams {
            alpha,
            active_ids: self.active_ids.clone(),
            ridge: self.ridge,
            init_seed: self.init_seed,
        }
    }
}

/// One measured (subset, validation loss) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossObservation {
    pub subset: ExemplarSubset,
    pub measured_loss: f64,
}

impl LossObservation {
    pub fn new(subset: ExemplarSubset, measured_loss: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&measured_loss) {
            return Err(Error::validation(format!(
                "measured loss {measured_loss} outside [0,1]"
            )));
        }
        Ok(LossObservation {
            subset,
            measured_loss,
        })
    }
}

/// Evaluate the model on one subset: the weighted sum of aggregate
/// similarities over the subset's members (ascending id order, so the
/// accumulation is reproducible).
pub fn sigma(
    params: &ScorerParams,
    subset: &ExemplarSubset,
    features: &SimilarityFeatures,
) -> Result<f64> {
    let mut total = 0.0f64;
    for &id in subset.key() {
        if id as usize >= params.alpha.len() {
            return Err(Error::validation(format!(
                "subset id {id} out of range for weight vector of length {}",
                params.alpha.len()
            )));
        }
        total += params.alpha[id as usize] * features.mean(id)?;
    }
    Ok(total)
}

/// Solve A x = b for symmetric positive-definite A via Cholesky.
/// A is row-major p x p. Fails if A is not positive definite.
fn cholesky_solve(a: &[f64], b: &[f64], p: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0f64; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut sum = a[i * p + j];
            for k in 0..j {
                sum -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if sum <= 0.0 {
                    return None;
                }
                l[i * p + i] = sum.sqrt();
            } else {
                l[i * p + j] = sum / l[j * p + j];
            }
        }
    }
    // Forward then back substitution.
    let mut y = vec![0.0f64; p];
    for i in 0..p {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * p + k] * y[k];
        }
        y[i] = sum / l[i * p + i];
    }
    let mut x = vec![0.0f64; p];
    for i in (0..p).rev() {
        let mut sum = y[i];
        for k in i + 1..p {
            sum -= l[k * p + i] * x[k];
        }
        x[i] = sum / l[i * p + i];
    }
    Some(x)
}

/// Fit the weights to measured losses by ridge-regularized least squares on
/// the active coordinates, via the normal equations.
///
/// The design row for a subset has the member's aggregate similarity at each
/// member coordinate and zero elsewhere. The solve is exact, so the returned
/// params minimize the objective regardless of the init point; `init` fixes
/// the active set, ridge weight, and the zero pattern.
pub fn fit_alpha(
    observations: &[LossObservation],
    features: &SimilarityFeatures,
    ridge: f64,
    init: &ScorerParams,
) -> Result<ScorerParams> {
    if observations.is_empty() {
        return Err(Error::validation("fit needs at least one observation"));
    }
    if ridge < 0.0 {
        return Err(Error::validation("ridge must be >= 0"));
    }
    let active = &init.active_ids;
    let p = active.len();
    let col_of = |id: u32| active.binary_search(&id).ok();

    // Design matrix, row per observation.
    let mut design = vec![vec![0.0f64; p]; observations.len()];
    let mut targets = vec![0.0f64; observations.len()];
    for (r, obs) in observations.iter().enumerate() {
        targets[r] = obs.measured_loss;
        for &id in obs.subset.key() {
            let Some(c) = col_of(id) else {
                return Err(Error::validation(format!(
                    "observation contains id {id} outside the active set"
                )));
            };
            design[r][c] = features.mean(id)?;
        }
    }

    // Normal equations: (X^T X + ridge I) w = X^T y.
    let mut gram = vec![0.0f64; p * p];
    let mut rhs = vec![0.0f64; p];
    for row in 0..observations.len() {
        let x = &design[row];
        for i in 0..p {
            if x[i] == 0.0 {
                continue;
            }
            rhs[i] += x[i] * targets[row];
            for j in 0..p {
                gram[i * p + j] += x[i] * x[j];
            }
        }
    }
    for i in 0..p {
        gram[i * p + i] += ridge;
    }

    let weights = cholesky_solve(&gram, &rhs, p).ok_or_else(|| {
        Error::validation(
            "normal equations are singular (rank-deficient design with ridge=0); use ridge > 0",
        )
    })?;

    let mut alpha = vec![0.0f64; init.alpha.len()];
    for (c, &id) in active.iter().enumerate() {
        alpha[id as usize] = weights[c];
    }
    Ok(init.with_alpha(alpha))
}

/// The data term of the fitting objective: summed squared gaps between
/// measured and modeled losses.
pub fn approximation_error(
    params: &ScorerParams,
    observations: &[LossObservation],
    features: &SimilarityFeatures,
) -> Result<f64> {
    if observations.is_empty() {
        return Err(Error::validation("need at least one observation"));
    }
    let mut total = 0.0f64;
    for obs in observations {
        let predicted = sigma(params, &obs.subset, features)?;
        let gap = obs.measured_loss - predicted;
        total += gap * gap;
    }
    Ok(total)
}

/// Full fitting objective (data term plus ridge penalty on active weights).
pub fn ridge_objective(
    params: &ScorerParams,
    observations: &[LossObservation],
    features: &SimilarityFeatures,
    ridge: f64,
) -> Result<f64> {
    let mut penalty = 0.0f64;
    for &id in &params.active_ids {
        let w = params.alpha[id as usize];
        penalty += w * w;
    }
    Ok(approximation_error(params, observations, features)? + ridge * penalty)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::{build_features, EmbeddingStore, SimilarityFeatures};
    use rand::Rng;

    fn random_features(n: u32, m: u32, seed: u64) -> SimilarityFeatures {
        let mut rng = seeded::rng(seed);
        let dim = 6;
        let mut store = EmbeddingStore::new(dim).unwrap();
        let mut vector = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f32> {
            (0..dim).map(|_| rng.gen_range(0.1..1.0)).collect()
        };
        for i in 0..n {
            store.insert_train(i, vector(&mut rng)).unwrap();
        }
        for j in 0..m {
            store.insert_validation(j, vector(&mut rng)).unwrap();
        }
        let train: Vec<u32> = (0..n).collect();
        let val: Vec<u32> = (0..m).collect();
        build_features(&train, &val, &store).unwrap()
    }

    #[test]
    fn zero_weights_score_zero() {
        let features = random_features(6, 3, 1);
        let params = ScorerParams {
            alpha: vec![0.0; 6],
            active_ids: vec![0, 1, 2, 3, 4, 5],
            ridge: DEFAULT_RIDGE,
            init_seed: 0,
        };
        let subset = ExemplarSubset::new(vec![0, 2, 4]).unwrap();
        assert_eq!(sigma(&params, &subset, &features).unwrap(), 0.0);
    }

    #[test]
    fn constant_similarity_row_scores_the_weight() {
        let mut store = EmbeddingStore::new(2).unwrap();
        store.insert_train(0, vec![1.0, 0.0]).unwrap();
        store.insert_validation(0, vec![1.0, 0.0]).unwrap();
        store.insert_validation(1, vec![2.0, 0.0]).unwrap();
        let features = build_features(&[0], &[0, 1], &store).unwrap();
        let params = ScorerParams {
            alpha: vec![0.5],
            active_ids: vec![0],
            ridge: DEFAULT_RIDGE,
            init_seed: 0,
        };
        let subset = ExemplarSubset::new(vec![0]).unwrap();
        assert!((sigma(&params, &subset, &features).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn aggregate_form_matches_double_sum() {
        let features = random_features(12, 5, 3);
        let mut rng = seeded::rng(4);
        for _ in 0..200 {
            let mut ids: Vec<u32> = (0..12).collect();
            seeded::shuffle(&mut rng, &mut ids);
            ids.truncate(5);
            let subset = ExemplarSubset::new(ids).unwrap();
            let alpha: Vec<f64> = (0..12).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let params = ScorerParams {
                alpha: alpha.clone(),
                active_ids: (0..12).collect(),
                ridge: DEFAULT_RIDGE,
                init_seed: 0,
            };
            let aggregate = sigma(&params, &subset, &features).unwrap();
            // Independent evaluation through the full similarity matrix.
            let m = features.validation_count();
            let mut double_sum = 0.0f64;
            for j in 0..m {
                for &i in subset.key() {
                    double_sum += alpha[i as usize] * features.row(i).unwrap()[j];
                }
            }
            double_sum /= m as f64;
            assert!((aggregate - double_sum).abs() < 1e-12);
        }
    }

    #[test]
    fn init_zeroes_inactive_ids_and_is_seeded() {
        let a = ScorerParams::init(10, &[1, 3, 5], DEFAULT_RIDGE, 42).unwrap();
        let b = ScorerParams::init(10, &[1, 3, 5], DEFAULT_RIDGE, 42).unwrap();
        assert_eq!(a.alpha(), b.alpha());
        for id in [0u32, 2, 4, 6, 7, 8, 9] {
            assert_eq!(a.weight(id), 0.0);
        }
        for id in [1u32, 3, 5] {
            assert_ne!(a.weight(id), 0.0);
        }
    }

    #[test]
    fn planted_weights_are_recovered() {
        let features = random_features(10, 4, 7);
        let mut rng = seeded::rng(8);
        let planted: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..0.05)).collect();
        // Singleton subsets give a full-column-rank design; extra random
        // subsets add rows.
        let mut observations = Vec::new();
        let mut subsets: Vec<ExemplarSubset> = (0..10u32)
            .map(|i| ExemplarSubset::new(vec![i]).unwrap())
            .collect();
        for _ in 0..6 {
            let mut ids: Vec<u32> = (0..10).collect();
            seeded::shuffle(&mut rng, &mut ids);
            ids.truncate(3);
            subsets.push(ExemplarSubset::new(ids).unwrap());
        }
        for subset in &subsets {
            let mut loss = 0.0;
            for &i in subset.key() {
                loss += planted[i as usize] * features.mean(i).unwrap();
            }
            observations.push(LossObservation::new(subset.clone(), loss).unwrap());
        }
        let init = ScorerParams::init(10, &(0..10).collect::<Vec<_>>(), 1e-10, 5).unwrap();
        let fitted = fit_alpha(&observations, &features, 1e-10, &init).unwrap();
        let mut sse = 0.0;
        for obs in &observations {
            let gap = obs.measured_loss - sigma(&fitted, &obs.subset, &features).unwrap();
            sse += gap * gap;
        }
        let rmse = (sse / observations.len() as f64).sqrt();
        assert!(rmse <= 1e-6, "rmse {rmse}");
    }

    #[test]
    fn single_zero_loss_observation_fits_to_zero() {
        let features = random_features(4, 3, 2);
        let subset = ExemplarSubset::new(vec![0, 2]).unwrap();
        let obs = vec![LossObservation::new(subset.clone(), 0.0).unwrap()];
        let init = ScorerParams::init(4, &[0, 1, 2, 3], DEFAULT_RIDGE, 1).unwrap();
        let init_objective =
            ridge_objective(&init, &obs, &features, DEFAULT_RIDGE).unwrap();
        let fitted = fit_alpha(&obs, &features, DEFAULT_RIDGE, &init).unwrap();
        let fitted_objective =
            ridge_objective(&fitted, &obs, &features, DEFAULT_RIDGE).unwrap();
        assert!(fitted_objective <= init_objective);
        // Target 0 with a ridge penalty pulls every weight to exactly 0.
        assert!(sigma(&fitted, &subset, &features).unwrap().abs() < 1e-12);
        assert!(
            approximation_error(&fitted, &obs, &features).unwrap()
                <= approximation_error(
                    &init.with_alpha(vec![0.0; 4]),
                    &obs,
                    &features
                )
                .unwrap()
                    + 1e-15
        );
    }

    #[test]
    fn identical_rows_shrink_toward_target() {
        let features = random_features(5, 3, 6);
        let subset = ExemplarSubset::new(vec![1, 3]).unwrap();
        let ridge = 0.05;
        let copies = 4;
        let obs: Vec<LossObservation> = (0..copies)
            .map(|_| LossObservation::new(subset.clone(), 0.5).unwrap())
            .collect();
        let init = ScorerParams::init(5, &[0, 1, 2, 3, 4], ridge, 2).unwrap();
        let fitted = fit_alpha(&obs, &features, ridge, &init).unwrap();
        let predicted = sigma(&fitted, &subset, &features).unwrap();
        // Closed form for repeated identical rows x: prediction is
        // 0.5 * c |x|^2 / (c |x|^2 + ridge).
        let norm2: f64 = subset
            .key()
            .iter()
            .map(|&i| features.mean(i).unwrap().powi(2))
            .sum();
        let expected = 0.5 * copies as f64 * norm2 / (copies as f64 * norm2 + ridge);
        assert!((predicted - expected).abs() < 1e-9, "{predicted} vs {expected}");
        assert!(predicted < 0.5);
        // And the shrinkage vanishes as ridge goes to zero.
        let loose = fit_alpha(&obs, &features, 1e-12, &init).unwrap();
        assert!((sigma(&loose, &subset, &features).unwrap() - 0.5).abs() < 1e-6);
    }

    #[test]
    fn inactive_ids_stay_zero_through_fit() {
        let features = random_features(8, 3, 9);
        let active = vec![1u32, 2, 5];
        let subset = ExemplarSubset::new(vec![1, 5]).unwrap();
        let obs = vec![LossObservation::new(subset, 0.4).unwrap()];
        let init = ScorerParams::init(8, &active, DEFAULT_RIDGE, 3).unwrap();
        let fitted = fit_alpha(&obs, &features, DEFAULT_RIDGE, &init).unwrap();
        for id in [0u32, 3, 4, 6, 7] {
            assert_eq!(fitted.weight(id), 0.0);
        }
    }

    #[test]
    fn singular_system_without_ridge_is_reported() {
        let features = random_features(6, 3, 10);
        // Two distinct observations cannot pin six weights without ridge.
        let obs = vec![
            LossObservation::new(ExemplarSubset::new(vec![0, 1]).unwrap(), 0.2).unwrap(),
            LossObservation::new(ExemplarSubset::new(vec![2, 3]).unwrap(), 0.8).unwrap(),
        ];
        let init = ScorerParams::init(6, &(0..6).collect::<Vec<_>>(), 0.0, 4).unwrap();
        let err = fit_alpha(&obs, &features, 0.0, &init).unwrap_err();
        assert!(err.to_string().contains("ridge"));
    }

    #[test]
    fn refit_on_same_observations_does_not_increase_error() {
        let features = random_features(9, 4, 11);
        let mut rng = seeded::rng(12);
        let obs: Vec<LossObservation> = (0..7)
            .map(|_| {
                let mut ids: Vec<u32> = (0..9).collect();
                seeded::shuffle(&mut rng, &mut ids);
                ids.truncate(3);
                LossObservation::new(
                    ExemplarSubset::new(ids).unwrap(),
                    rng.gen_range(0.0..1.0),
                )
                .unwrap()
            })
            .collect();
        let init = ScorerParams::init(9, &(0..9).collect::<Vec<_>>(), DEFAULT_RIDGE, 6).unwrap();
        let first = fit_alpha(&obs, &features, DEFAULT_RIDGE, &init).unwrap();
        let e1 = approximation_error(&first, &obs, &features).unwrap();
        let second = fit_alpha(&obs, &features, DEFAULT_RIDGE, &first).unwrap();
        let e2 = approximation_error(&second, &obs, &features).unwrap();
        assert!(e2 <= e1 + 1e-12);
        let e_init = approximation_error(&init, &obs, &features).unwrap();
        assert!(e1 <= e_init + 1e-12);
    }

    #[test]
    fn approximation_error_arithmetic() {
        let features = random_features(3, 2, 13);
        let subset = ExemplarSubset::new(vec![0]).unwrap();
        let zero = ScorerParams {
            alpha: vec![0.0; 3],
            active_ids: vec![0, 1, 2],
            ridge: DEFAULT_RIDGE,
            init_seed: 0,
        };
        let obs = vec![LossObservation::new(subset, 0.3).unwrap()];
        let err = approximation_error(&zero, &obs, &features).unwrap();
        assert!((err - 0.09).abs() < 1e-15);
    }

    #[test]
    fn observation_rejects_out_of_range_loss() {
        let subset = ExemplarSubset::new(vec![0]).unwrap();
        assert!(LossObservation::new(subset.clone(), -0.1).is_err());
        assert!(LossObservation::new(subset, 1.1).is_err());
    }
}
