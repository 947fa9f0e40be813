//! Robust mean estimators for the screening phase and robust aggregation
//! rules for the warm-up phase.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::sym_eigen;
use crate::problem::{
    apply_message_attack, local_objective, minibatch_gradient, sample_batch, AttackSpec,
    NodeDataset,
};
use crate::rng::{stream, StreamKind};
use crate::topology::UndirectedGraph;

/// Robust location estimators for neighbor gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RobustMeanEstimator {
    CoordinateMedian,
    TrimmedMean { fraction: f64 },
    Filtering { eps: f64 },
}

impl RobustMeanEstimator {
    pub fn validate(&self) -> Result<()> {
        match self {
            RobustMeanEstimator::CoordinateMedian => Ok(()),
            RobustMeanEstimator::TrimmedMean { fraction } => {
                if (0.0..0.5).contains(fraction) {
                    Ok(())
                } else {
                    Err(Error::Config(format!("trim fraction {fraction} outside [0, 0.5)")))
                }
            }
            RobustMeanEstimator::Filtering { eps } => {
                if (0.0..0.5).contains(eps) {
                    Ok(())
                } else {
                    Err(Error::Config(format!("filtering eps {eps} outside [0, 0.5)")))
                }
            }
        }
    }

    pub fn estimate(&self, vectors: &[Array1<f64>]) -> Result<Array1<f64>> {
        self.validate()?;
        match self {
            RobustMeanEstimator::CoordinateMedian => coordinate_median(vectors),
            RobustMeanEstimator::TrimmedMean { fraction } => trimmed_mean(vectors, *fraction),
            RobustMeanEstimator::Filtering { eps } => filtering_mean(vectors, *eps),
        }
    }
}

fn median_of_sorted(values: &[f64]) -> f64 {
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Per-coordinate median; even counts take the midpoint of the two central
/// values.
pub fn coordinate_median(vectors: &[Array1<f64>]) -> Result<Array1<f64>> {
    if vectors.is_empty() {
        return Err(Error::Detection("median of an empty set".into()));
    }
    let d = vectors[0].len();
    let mut out = Array1::zeros(d);
    let mut column = vec![0.0; vectors.len()];
    for k in 0..d {
        for (j, v) in vectors.iter().enumerate() {
            column[j] = v[k];
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        out[k] = median_of_sorted(&column);
    }
    Ok(out)
}

/// Per-coordinate mean after dropping `⌊fraction·n⌋` values from each end.
pub fn trimmed_mean(vectors: &[Array1<f64>], fraction: f64) -> Result<Array1<f64>> {
    if vectors.is_empty() {
        return Err(Error::Detection("trimmed mean of an empty set".into()));
    }
    if !(0.0..0.5).contains(&fraction) {
        return Err(Error::Config(format!("trim fraction {fraction} outside [0, 0.5)")));
    }
    let n = vectors.len();
    let cut = (fraction * n as f64).floor() as usize;
    if 2 * cut >= n {
        return Err(Error::Detection("trimming removes every value".into()));
    }
    let d = vectors[0].len();
    let mut out = Array1::zeros(d);
    let mut column = vec![0.0; n];
    for k in 0..d {
        for (j, v) in vectors.iter().enumerate() {
            column[j] = v[k];
        }
        column.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
        let kept = &column[cut..n - cut];
        out[k] = kept.iter().sum::<f64>() / kept.len() as f64;
    }
    Ok(out)
}

/// Weighted spectral filtering: repeatedly downweight the points with the
/// largest squared projection on the top covariance direction until the top
/// eigenvalue stops decreasing by more than 1% or `⌈eps·n⌉ + 1` rounds have
/// run. Returns the final weighted mean.
///
/// Inputs are sorted canonically first so the result is permutation
/// invariant at the bit level.
pub fn filtering_mean(vectors: &[Array1<f64>], eps: f64) -> Result<Array1<f64>> {
    if vectors.len() < 2 {
        return Err(Error::Detection("filtering needs at least two points".into()));
    }
    if !(0.0..0.5).contains(&eps) {
        return Err(Error::Config(format!("filtering eps {eps} outside [0, 0.5)")));
    }
    let mut pts: Vec<Array1<f64>> = vectors.to_vec();
    pts.sort_by(|a, b| {
        for (x, y) in a.iter().zip(b.iter()) {
            match x.partial_cmp(y).unwrap_or(Ordering::Equal) {
                Ordering::Equal => continue,
                other => return other,
            }
        }
        Ordering::Equal
    });
    let n = pts.len();
    let d = pts[0].len();

    let weighted_mean = |w: &[f64]| -> Array1<f64> {
        let total: f64 = w.iter().sum();
        let mut mu = Array1::<f64>::zeros(d);
        for (wi, p) in w.iter().zip(&pts) {
            mu = mu + p.mapv(|x| x * wi);
        }
        mu.mapv(|x| x / total)
    };

    if eps == 0.0 {
        return Ok(weighted_mean(&vec![1.0; n]));
    }

    let rounds = (eps * n as f64).ceil() as usize + 1;
    let mut w = vec![1.0; n];
    let mut prev_top: Option<f64> = None;
    for _ in 0..rounds {
        let mu = weighted_mean(&w);
        let total: f64 = w.iter().sum();
        let mut cov = Array2::<f64>::zeros((d, d));
        for (wi, p) in w.iter().zip(&pts) {
            let c = p - &mu;
            for a in 0..d {
                for b in 0..d {
                    cov[[a, b]] += wi * c[a] * c[b];
                }
            }
        }
        cov.mapv_inplace(|x| x / total);
        let (vals, vecs) = sym_eigen(&cov.view());
        let top = vals[0];
        if top <= 1e-30 {
            break; // already concentrated
        }
        if let Some(prev) = prev_top {
            if top > prev * 0.99 {
                break; // less than 1% decrease
            }
        }
        prev_top = Some(top);
        let dir = vecs.column(0).to_owned();
        let taus: Vec<f64> = pts
            .iter()
            .map(|p| {
                let proj = (p - &mu).dot(&dir);
                proj * proj
            })
            .collect();
        let tau_max = taus.iter().cloned().fold(0.0f64, f64::max);
        if tau_max <= 0.0 {
            break;
        }
        for (wi, tau) in w.iter_mut().zip(&taus) {
            *wi *= 1.0 - tau / tau_max;
        }
        if w.iter().sum::<f64>() <= 1e-12 {
            break;
        }
    }
    Ok(weighted_mean(&w))
}

/// Aggregation rules available during the warm-up phase. All are simplified
/// single-loop variants sharing one contract: given the node's own parameter
/// and its neighbors' messages, produce a robust center.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WarmupRule {
    /// Iteratively move the center by the average clipped difference.
    CenteredClip { tau: f64, rounds: usize },
    /// Drop the `b` neighbors farthest from the running mean, one at a time,
    /// then average self with the rest.
    IosRemove { b: usize },
    /// Keep neighbors within a decaying distance budget of self, average
    /// with self. Defaults `gamma = 1.0`, `lambda = 0.99` are implementation
    /// choices, exposed in config.
    BalanceDecay { gamma: f64, lambda: f64 },
    /// Keep the `b` closest neighbors whose reported loss is no worse than
    /// self, average with self.
    UbarSelect { b: usize },
}

impl WarmupRule {
    pub fn validate(&self) -> Result<()> {
        match self {
            WarmupRule::CenteredClip { tau, rounds } => {
                if *tau <= 0.0 {
                    return Err(Error::Config("clip radius must be positive".into()));
                }
                if *rounds == 0 {
                    return Err(Error::Config("clip rounds must be positive".into()));
                }
            }
            WarmupRule::BalanceDecay { gamma, lambda } => {
                if *gamma <= 0.0 || *lambda <= 0.0 {
                    return Err(Error::Config("decay parameters must be positive".into()));
                }
            }
            WarmupRule::IosRemove { .. } | WarmupRule::UbarSelect { .. } => {}
        }
        Ok(())
    }
}

/// Side information passed to [`warmup_aggregate`].
#[derive(Debug, Clone, Default)]
pub struct AggregateContext {
    /// Warm-up iteration counter (drives decaying budgets).
    pub iteration: usize,
    /// The node's own current loss, when the rule needs one.
    pub self_loss: Option<f64>,
    /// Reported losses aligned with the neighbor list.
    pub neighbor_losses: Option<Vec<f64>>,
}

fn l2(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Apply one warm-up aggregation rule. `neighbors` excludes the node itself;
/// rules that average "with self" add `self_theta` explicitly. Ties in the
/// distance-based rules break toward the lower neighbor index.
pub fn warmup_aggregate(
    rule: &WarmupRule,
    self_theta: &Array1<f64>,
    neighbors: &[Array1<f64>],
    ctx: &AggregateContext,
) -> Result<Array1<f64>> {
    rule.validate()?;
    if neighbors.is_empty() {
        return Err(Error::Warmup("aggregation with an empty neighbor list".into()));
    }
    let d = self_theta.len();
    match rule {
        WarmupRule::CenteredClip { tau, rounds } => {
            let mut center = self_theta.clone();
            for _ in 0..*rounds {
                let mut pull = Array1::<f64>::zeros(d);
                for th in neighbors {
                    let diff = th - &center;
                    let norm = l2(&diff);
                    let clipped = if norm > *tau { diff.mapv(|x| x * (tau / norm)) } else { diff };
                    pull = pull + clipped;
                }
                center = center + pull.mapv(|x| x / neighbors.len() as f64);
            }
            Ok(center)
        }
        WarmupRule::IosRemove { b } => {
            if *b >= neighbors.len() {
                return Err(Error::Warmup(format!(
                    "cannot remove {b} of {} neighbors",
                    neighbors.len()
                )));
            }
            // Pool = self + neighbors; self (index 0) is never removable.
            let mut pool: Vec<&Array1<f64>> = Vec::with_capacity(neighbors.len() + 1);
            pool.push(self_theta);
            pool.extend(neighbors.iter());
            let mut alive: Vec<usize> = (0..pool.len()).collect();
            for _ in 0..*b {
                let mut mean = Array1::<f64>::zeros(d);
                for &i in &alive {
                    mean = mean + pool[i];
                }
                mean.mapv_inplace(|x| x / alive.len() as f64);
                let (far_pos, _) = alive
                    .iter()
                    .enumerate()
                    .skip(1) // keep self
                    .map(|(pos, &i)| {
                        let diff = pool[i] - &mean;
                        (pos, diff.dot(&diff))
                    })
                    .max_by(|a, b| {
                        a.1.partial_cmp(&b.1).unwrap_or(Ordering::Equal).then(b.0.cmp(&a.0))
                    })
                    .expect("alive set keeps self plus at least one neighbor");
                alive.remove(far_pos);
            }
            let mut mean = Array1::<f64>::zeros(d);
            for &i in &alive {
                mean = mean + pool[i];
            }
            Ok(mean.mapv(|x| x / alive.len() as f64))
        }
        WarmupRule::BalanceDecay { gamma, lambda } => {
            let budget = gamma * lambda.powi(ctx.iteration as i32) * l2(self_theta).max(1e-12);
            let mut acc = self_theta.clone();
            let mut count = 1usize;
            for th in neighbors {
                if l2(&(th - self_theta)) <= budget {
                    acc = acc + th;
                    count += 1;
                }
            }
            Ok(acc.mapv(|x| x / count as f64))
        }
        WarmupRule::UbarSelect { b } => {
            if *b >= neighbors.len() {
                return Err(Error::Warmup(format!(
                    "cannot select {b} of {} neighbors",
                    neighbors.len()
                )));
            }
            let losses = ctx
                .neighbor_losses
                .as_ref()
                .ok_or_else(|| Error::Warmup("ubar rule needs neighbor losses".into()))?;
            let self_loss = ctx
                .self_loss
                .ok_or_else(|| Error::Warmup("ubar rule needs the node's own loss".into()))?;
            if losses.len() != neighbors.len() {
                return Err(Error::Warmup("loss list does not match neighbor list".into()));
            }
            let mut by_distance: Vec<usize> = (0..neighbors.len()).collect();
            by_distance.sort_by(|&i, &j| {
                let di = l2(&(&neighbors[i] - self_theta));
                let dj = l2(&(&neighbors[j] - self_theta));
                di.partial_cmp(&dj).unwrap_or(Ordering::Equal).then(i.cmp(&j))
            });
            let mut acc = self_theta.clone();
            let mut count = 1usize;
            for &i in by_distance.iter().take(*b) {
                if losses[i] <= self_loss {
                    acc = acc + &neighbors[i];
                    count += 1;
                }
            }
            Ok(acc.mapv(|x| x / count as f64))
        }
    }
}

/// Result of the warm-up phase.
#[derive(Debug, Clone)]
pub struct WarmupOutcome {
    /// Final parameter of every node (normal and Byzantine).
    pub thetas: Vec<Array1<f64>>,
    /// Per-iteration consensus error over the normal nodes:
    /// `Σ_{j∈G} ‖θ_j − θ̄_G‖²`, one entry per completed round.
    pub consensus_trace: Vec<f64>,
}

/// Run the warm-up phase for `k0` synchronous rounds.
///
/// Normal nodes aggregate neighbor messages with `rule` and take a
/// stochastic gradient step on their warm-up split. Byzantine behavior
/// depends on the attack: data-level attackers run plain local SGD on their
/// own contaminated split (their parameters drift toward the contaminated
/// model, which is exactly the disturbance they transmit), while
/// message-level attackers forge the transmitted parameter vector each
/// round.
#[allow(clippy::too_many_arguments)]
pub fn run_warmup(
    graph: &UndirectedGraph,
    datasets: &[NodeDataset],
    init: &[Array1<f64>],
    rule: &WarmupRule,
    attack: &AttackSpec,
    eta: f64,
    k0: usize,
    batch: usize,
    seed: u64,
) -> Result<WarmupOutcome> {
    rule.validate()?;
    let m = graph.node_count();
    if datasets.len() != m || init.len() != m {
        return Err(Error::Warmup("warm-up inputs disagree on node count".into()));
    }
    if batch == 0 {
        return Err(Error::Warmup("warm-up batch size must be positive".into()));
    }
    let byz: BTreeSet<usize> =
        datasets.iter().filter(|d| d.is_byzantine).map(|d| d.node_id).collect();
    let mut thetas: Vec<Array1<f64>> = init.to_vec();
    let mut trace = Vec::with_capacity(k0);
    let neighbor_lists: Vec<Vec<usize>> = (0..m).map(|i| graph.neighbors(i)).collect();

    for k in 0..k0 {
        // Messages for this round.
        let messages: Vec<Array1<f64>> = if attack.is_message_level() && !byz.is_empty() {
            let mut rng = stream(seed, StreamKind::MessageAttackRound, k as u64);
            apply_message_attack(attack, &thetas, &byz, &mut rng)
                .map_err(|e| Error::Warmup(e.to_string()))?
        } else {
            thetas.clone()
        };

        let losses: Option<Vec<f64>> = if matches!(rule, WarmupRule::UbarSelect { .. }) {
            Some(
                (0..m)
                    .map(|i| {
                        let idx = &datasets[i].warmup_indices;
                        let sub = NodeDataset {
                            node_id: i,
                            xs: datasets[i].xs.select(ndarray::Axis(0), idx),
                            ys: idx.iter().map(|&u| datasets[i].ys[u]).collect(),
                            is_byzantine: datasets[i].is_byzantine,
                            warmup_indices: Vec::new(),
                            identification_indices: Vec::new(),
                        };
                        local_objective(&messages[i], &sub)
                    })
                    .collect(),
            )
        } else {
            None
        };

        let updated: Vec<Result<Array1<f64>>> = exec::map_indexed(m, |i| {
            let mut rng =
                stream(seed, StreamKind::WarmupBatch, crate::rng::node_round_index(i, k));
            let batch_idx = sample_batch(&datasets[i].warmup_indices, batch, &mut rng);
            let grad = minibatch_gradient(&thetas[i], &datasets[i], &batch_idx)
                .map_err(|e| Error::Warmup(e.to_string()))?;

            if byz.contains(&i) {
                if attack.is_message_level() {
                    // State is the forged message; local gradient still moves it.
                    return Ok(&messages[i] - &grad.vector.mapv(|x| x * eta));
                }
                // Data-level attacker: plain local SGD on contaminated data.
                return Ok(&thetas[i] - &grad.vector.mapv(|x| x * eta));
            }

            let ctx = AggregateContext {
                iteration: k,
                self_loss: losses.as_ref().map(|l| l[i]),
                neighbor_losses: losses
                    .as_ref()
                    .map(|l| neighbor_lists[i].iter().map(|&j| l[j]).collect()),
            };
            let neighbor_msgs: Vec<Array1<f64>> =
                neighbor_lists[i].iter().map(|&j| messages[j].clone()).collect();
            let agg = warmup_aggregate(rule, &thetas[i], &neighbor_msgs, &ctx)?;
            Ok(agg - grad.vector.mapv(|x| x * eta))
        });
        let mut next = Vec::with_capacity(m);
        for r in updated {
            next.push(r?);
        }
        thetas = next;
        trace.push(normal_consensus_error(&thetas, &byz));
    }

    Ok(WarmupOutcome { thetas, consensus_trace: trace })
}

/// `Σ_{j∈G} ‖θ_j − θ̄_G‖²` over the normal nodes.
pub fn normal_consensus_error(thetas: &[Array1<f64>], byz: &BTreeSet<usize>) -> f64 {
    let normal: Vec<&Array1<f64>> =
        thetas.iter().enumerate().filter(|(i, _)| !byz.contains(i)).map(|(_, t)| t).collect();
    if normal.is_empty() {
        return 0.0;
    }
    let d = normal[0].len();
    let mut mean = Array1::<f64>::zeros(d);
    for t in &normal {
        mean = mean + *t;
    }
    mean.mapv_inplace(|x| x / normal.len() as f64);
    normal
        .iter()
        .map(|t| {
            let diff = *t - &mean;
            diff.dot(&diff)
        })
        .sum()
}

/// Default warm-up step size for `k0` rounds. The `0.1` constant is a
/// calibration choice; the scaling in `1/√k0` is what matters.
pub fn default_warmup_step(k0: usize) -> f64 {
    0.1 / (k0.max(1) as f64).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{generate_network_data, LinearTask};
    use crate::topology::gen_erdos_renyi;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn vecs(rows: &[&[f64]]) -> Vec<Array1<f64>> {
        rows.iter().map(|r| Array1::from(r.to_vec())).collect()
    }

    #[test]
    fn median_odd_and_even() {
        let odd = vecs(&[&[1.0, 5.0], &[2.0, 4.0], &[3.0, 3.0]]);
        let m = coordinate_median(&odd).unwrap();
        assert_eq!(m, Array1::from(vec![2.0, 4.0]));
        let even = vecs(&[&[0.0, 0.0], &[2.0, 2.0]]);
        let m = coordinate_median(&even).unwrap();
        assert_eq!(m, Array1::from(vec![1.0, 1.0]));
    }

    #[test]
    fn median_ignores_one_wild_outlier() {
        let mut rng = stream(4, StreamKind::DataGen, 0);
        let mut pts: Vec<Array1<f64>> = (0..99)
            .map(|_| Array1::from_shape_fn(3, |_| rng.random::<f64>() * 2.0 - 1.0))
            .collect();
        let mut lo = Array1::from_elem(3, f64::INFINITY);
        let mut hi = Array1::from_elem(3, f64::NEG_INFINITY);
        for p in &pts {
            for k in 0..3 {
                lo[k] = lo[k].min(p[k]);
                hi[k] = hi[k].max(p[k]);
            }
        }
        pts.push(Array1::from_elem(3, 1e6));
        let m = coordinate_median(&pts).unwrap();
        for k in 0..3 {
            assert!(m[k] >= lo[k] && m[k] <= hi[k]);
        }
    }

    #[test]
    fn filtering_identical_points() {
        let pts = vecs(&[&[2.0, -1.0], &[2.0, -1.0], &[2.0, -1.0]]);
        for eps in [0.0, 0.1, 0.4] {
            let m = filtering_mean(&pts, eps).unwrap();
            assert_abs_diff_eq!(m[0], 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(m[1], -1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn filtering_eps_zero_is_sample_mean() {
        let pts = vecs(&[&[1.0, 0.0], &[3.0, 2.0], &[5.0, 4.0]]);
        let m = filtering_mean(&pts, 0.0).unwrap();
        assert_abs_diff_eq!(m[0], 3.0, epsilon = 1e-14);
        assert_abs_diff_eq!(m[1], 2.0, epsilon = 1e-14);
    }

    #[test]
    fn filtering_beats_naive_mean_under_outliers() {
        // 50 clean Gaussian points, 5 planted far along e1; the filtered mean
        // should land closer to the true center than the naive mean in at
        // least 95 of 100 trials.
        let d = 10;
        let mut wins = 0;
        for trial in 0..100u64 {
            let mut rng = stream(trial, StreamKind::DataGen, 0);
            let mu = Array1::from_shape_fn(d, |_| rng.random::<f64>() * 2.0 - 1.0);
            let mut pts: Vec<Array1<f64>> = (0..50)
                .map(|_| {
                    &mu + &Array1::from_shape_fn(d, |_| {
                        rand_distr::Distribution::<f64>::sample(
                            &rand_distr::StandardNormal,
                            &mut rng,
                        )
                    })
                })
                .collect();
            for _ in 0..5 {
                let mut out = mu.clone();
                out[0] += 100.0;
                pts.push(out);
            }
            let naive = {
                let mut s = Array1::<f64>::zeros(d);
                for p in &pts {
                    s = s + p;
                }
                s.mapv(|x| x / pts.len() as f64)
            };
            let filtered = filtering_mean(&pts, 0.1).unwrap();
            let err = |v: &Array1<f64>| {
                let diff = v - &mu;
                diff.dot(&diff).sqrt()
            };
            if err(&filtered) < err(&naive) {
                wins += 1;
            }
        }
        assert!(wins >= 95, "filtering beat the mean in only {wins}/100 trials");
    }

    #[test]
    fn filtering_breakdown_sanity() {
        // With at most ⌊eps·n⌋ planted outliers the filtered mean stays within
        // ten robust standard deviations of the clean center.
        let d = 6;
        for trial in 0..20u64 {
            let mut rng = stream(100 + trial, StreamKind::DataGen, 1);
            let mut pts: Vec<Array1<f64>> = (0..40)
                .map(|_| {
                    Array1::from_shape_fn(d, |_| {
                        rand_distr::Distribution::<f64>::sample(
                            &rand_distr::StandardNormal,
                            &mut rng,
                        )
                    })
                })
                .collect();
            for _ in 0..4 {
                pts.push(Array1::from_elem(d, 500.0));
            }
            let filtered = filtering_mean(&pts, 0.1).unwrap();
            let norm = filtered.dot(&filtered).sqrt();
            assert!(norm <= 10.0, "trial {trial}: filtered mean {norm} from center");
        }
    }

    #[test]
    fn estimators_permutation_invariant() {
        let mut rng = stream(8, StreamKind::DataGen, 2);
        let pts: Vec<Array1<f64>> =
            (0..9).map(|_| Array1::from_shape_fn(4, |_| rng.random::<f64>())).collect();
        let mut shuffled = pts.clone();
        shuffled.reverse();
        shuffled.swap(0, 3);
        for est in [
            RobustMeanEstimator::CoordinateMedian,
            RobustMeanEstimator::TrimmedMean { fraction: 0.2 },
            RobustMeanEstimator::Filtering { eps: 0.2 },
        ] {
            let a = est.estimate(&pts).unwrap();
            let b = est.estimate(&shuffled).unwrap();
            for k in 0..4 {
                assert_eq!(a[k].to_bits(), b[k].to_bits(), "{est:?} coord {k}");
            }
        }
    }

    #[test]
    fn estimators_translation_equivariant() {
        let mut rng = stream(9, StreamKind::DataGen, 3);
        let pts: Vec<Array1<f64>> =
            (0..8).map(|_| Array1::from_shape_fn(3, |_| rng.random::<f64>())).collect();
        let shift = Array1::from(vec![2.5, -1.0, 0.25]);
        let shifted: Vec<Array1<f64>> = pts.iter().map(|p| p + &shift).collect();
        for (est, tol) in [
            (RobustMeanEstimator::CoordinateMedian, 1e-12),
            (RobustMeanEstimator::TrimmedMean { fraction: 0.125 }, 1e-12),
            (RobustMeanEstimator::Filtering { eps: 0.125 }, 1e-8),
        ] {
            let base = est.estimate(&pts).unwrap();
            let moved = est.estimate(&shifted).unwrap();
            for k in 0..3 {
                assert_abs_diff_eq!(moved[k], base[k] + shift[k], epsilon = tol);
            }
        }
    }

    #[test]
    fn aggregate_consensus_fixed_point() {
        let v = Array1::from(vec![1.0, -2.0]);
        let neighbors = vec![v.clone(), v.clone(), v.clone()];
        let ctx = AggregateContext {
            iteration: 0,
            self_loss: Some(1.0),
            neighbor_losses: Some(vec![1.0, 1.0, 1.0]),
        };
        for rule in [
            WarmupRule::CenteredClip { tau: 0.5, rounds: 3 },
            WarmupRule::IosRemove { b: 1 },
            WarmupRule::BalanceDecay { gamma: 1.0, lambda: 0.99 },
            WarmupRule::UbarSelect { b: 2 },
        ] {
            let out = warmup_aggregate(&rule, &v, &neighbors, &ctx).unwrap();
            for k in 0..2 {
                assert_abs_diff_eq!(out[k], v[k], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn centered_clip_unbounded_radius_is_plain_average() {
        let neighbors = vecs(&[&[1.0], &[2.0], &[6.0]]);
        let out = warmup_aggregate(
            &WarmupRule::CenteredClip { tau: f64::INFINITY, rounds: 1 },
            &Array1::from(vec![0.0]),
            &neighbors,
            &AggregateContext::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(out[0], 3.0, epsilon = 1e-12);
    }

    #[test]
    fn ios_remove_drops_farthest_then_averages_with_self() {
        let neighbors = vecs(&[&[0.0], &[0.1], &[0.2], &[100.0]]);
        let out = warmup_aggregate(
            &WarmupRule::IosRemove { b: 1 },
            &Array1::from(vec![0.0]),
            &neighbors,
            &AggregateContext::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(out[0], 0.075, epsilon = 1e-12);
    }

    #[test]
    fn rules_reject_removing_too_many() {
        let neighbors = vecs(&[&[1.0], &[2.0]]);
        let ctx = AggregateContext {
            iteration: 0,
            self_loss: Some(0.0),
            neighbor_losses: Some(vec![0.0, 0.0]),
        };
        assert!(warmup_aggregate(
            &WarmupRule::IosRemove { b: 2 },
            &Array1::from(vec![0.0]),
            &neighbors,
            &ctx
        )
        .is_err());
        assert!(warmup_aggregate(
            &WarmupRule::UbarSelect { b: 2 },
            &Array1::from(vec![0.0]),
            &neighbors,
            &ctx
        )
        .is_err());
    }

    #[test]
    fn consensus_contracts_without_gradients() {
        // Zero step size, no Byzantine nodes: repeated aggregation shrinks the
        // maximum pairwise distance monotonically for clipping (finite and
        // unbounded radius).
        let g = gen_erdos_renyi(10, 0.6, 3).unwrap();
        assert!(g.is_connected());
        let task = LinearTask::new(4, 1.0).unwrap();
        let datasets =
            generate_network_data(&task, 10, 12, &BTreeSet::new(), &AttackSpec::None, 3).unwrap();
        for tau in [0.7, f64::INFINITY] {
            let mut rng = stream(10, StreamKind::DataGen, 9);
            let init: Vec<Array1<f64>> =
                (0..10).map(|_| Array1::from_shape_fn(4, |_| rng.random::<f64>() * 4.0)).collect();
            let out = run_warmup(
                &g,
                &datasets,
                &init,
                &WarmupRule::CenteredClip { tau, rounds: 1 },
                &AttackSpec::None,
                0.0,
                25,
                1,
                5,
            )
            .unwrap();
            let spread = |ts: &[Array1<f64>]| -> f64 {
                let mut worst = 0.0f64;
                for i in 0..ts.len() {
                    for j in (i + 1)..ts.len() {
                        let diff = &ts[i] - &ts[j];
                        worst = worst.max(diff.dot(&diff).sqrt());
                    }
                }
                worst
            };
            // Replay the trajectory to observe the spread at every round.
            let mut current = init.clone();
            let mut spreads = vec![spread(&current)];
            for _ in 0..25 {
                let step = run_warmup(
                    &g,
                    &datasets,
                    &current,
                    &WarmupRule::CenteredClip { tau, rounds: 1 },
                    &AttackSpec::None,
                    0.0,
                    1,
                    1,
                    5,
                )
                .unwrap();
                current = step.thetas;
                spreads.push(spread(&current));
            }
            for w in spreads.windows(2) {
                assert!(w[1] <= w[0] * (1.0 + 1e-12), "spread rose: {} -> {}", w[0], w[1]);
            }
            let _ = out;
        }
    }

    #[test]
    fn warmup_zero_rounds_returns_init() {
        let g = gen_erdos_renyi(6, 0.8, 1).unwrap();
        let task = LinearTask::new(3, 1.0).unwrap();
        let datasets =
            generate_network_data(&task, 6, 10, &BTreeSet::new(), &AttackSpec::None, 2).unwrap();
        let init: Vec<Array1<f64>> = (0..6).map(|_| Array1::from_elem(3, 0.5)).collect();
        let out = run_warmup(
            &g,
            &datasets,
            &init,
            &WarmupRule::CenteredClip { tau: 1.0, rounds: 1 },
            &AttackSpec::None,
            0.1,
            0,
            2,
            5,
        )
        .unwrap();
        assert_eq!(out.thetas, init);
        assert!(out.consensus_trace.is_empty());
    }

    #[test]
    fn plain_dsgd_reaches_consensus_on_tiny_task() {
        // No Byzantine nodes, unbounded clip = plain averaging: after enough
        // rounds the normal consensus error is tiny.
        let g = gen_erdos_renyi(6, 0.9, 4).unwrap();
        assert!(g.is_connected());
        let task = LinearTask::new(2, 0.3).unwrap();
        let mut datasets =
            generate_network_data(&task, 6, 40, &BTreeSet::new(), &AttackSpec::None, 11).unwrap();
        for ds in &mut datasets {
            crate::problem::split_dataset(ds, 10, 11).unwrap();
        }
        let init: Vec<Array1<f64>> = (0..6).map(|_| Array1::zeros(2)).collect();
        let k0 = 2500;
        let out = run_warmup(
            &g,
            &datasets,
            &init,
            &WarmupRule::CenteredClip { tau: f64::INFINITY, rounds: 1 },
            &AttackSpec::None,
            0.5 / (k0 as f64).sqrt(),
            k0,
            10,
            11,
        )
        .unwrap();
        let last = *out.consensus_trace.last().unwrap();
        assert!(last < 1e-3, "consensus error {last}");
    }
}
