//! Neighbor screening: sample-splitting score statistics, data-driven
//! thresholding, pruning decisions, and the false-discovery/sure-detection
//! report.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::sym_eigen;
use crate::problem::{apply_message_attack, minibatch_gradient, AttackSpec, NodeDataset};
use crate::rng::{stream, StreamKind};
use crate::robust::RobustMeanEstimator;
use crate::topology::UndirectedGraph;

/// Choice of the bilinear-form matrix used by the score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OmegaSpec {
    Identity,
    /// Projector onto the leading principal directions of the neighbors'
    /// first-half gradients capturing at least `variance_fraction` of the
    /// total variance.
    PcaProjection { variance_fraction: f64 },
}

impl OmegaSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            OmegaSpec::Identity => Ok(()),
            OmegaSpec::PcaProjection { variance_fraction } => {
                if *variance_fraction > 0.0 && *variance_fraction <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::Config(format!(
                        "variance fraction {variance_fraction} outside (0, 1]"
                    )))
                }
            }
        }
    }
}

/// Build the score matrix from the neighbors' first-half gradients only, so
/// independence from the second halves is preserved. Degenerate inputs fall
/// back to the identity with a logged warning.
pub fn build_omega(spec: &OmegaSpec, first_half_grads: &[Array1<f64>]) -> Result<Array2<f64>> {
    spec.validate()?;
    match spec {
        OmegaSpec::Identity => {
            let d = first_half_grads
                .first()
                .map(|g| g.len())
                .ok_or_else(|| Error::Detection("omega needs at least one gradient".into()))?;
            Ok(Array2::eye(d))
        }
        OmegaSpec::PcaProjection { variance_fraction } => {
            if first_half_grads.len() < 2 {
                return Err(Error::Detection("projection omega needs at least two gradients".into()));
            }
            let d = first_half_grads[0].len();
            let n = first_half_grads.len();
            let mut mean = Array1::<f64>::zeros(d);
            for g in first_half_grads {
                mean = mean + g;
            }
            mean.mapv_inplace(|x| x / n as f64);
            let mut cov = Array2::<f64>::zeros((d, d));
            for g in first_half_grads {
                let c = g - &mean;
                for a in 0..d {
                    for b in 0..d {
                        cov[[a, b]] += c[a] * c[b];
                    }
                }
            }
            cov.mapv_inplace(|x| x / (n as f64 - 1.0));
            let (vals, vecs) = sym_eigen(&cov.view());
            let total: f64 = vals.iter().filter(|&&v| v > 0.0).sum();
            if total <= 1e-30 {
                log::warn!("degenerate neighbor gradients; falling back to identity omega");
                return Ok(Array2::eye(d));
            }
            let mut acc = 0.0;
            let mut rank = 0;
            for &v in vals.iter() {
                if v <= 0.0 {
                    break;
                }
                acc += v;
                rank += 1;
                if acc / total >= *variance_fraction {
                    break;
                }
            }
            let rank = rank.max(1);
            let mut proj = Array2::<f64>::zeros((d, d));
            for r in 0..rank {
                let u = vecs.column(r);
                for a in 0..d {
                    for b in 0..d {
                        proj[[a, b]] += u[a] * u[b];
                    }
                }
            }
            Ok(proj)
        }
    }
}

/// Bilinear score `(g1 − ĝ)ᵀ Ω (g2 − ĝ)`.
pub fn score(
    g1: &Array1<f64>,
    g2: &Array1<f64>,
    g_hat: &Array1<f64>,
    omega: &Array2<f64>,
) -> f64 {
    let a = g1 - g_hat;
    let b = g2 - g_hat;
    a.dot(&omega.dot(&b))
}

/// Data-driven threshold: the smallest candidate `r > 0` at which the
/// negative-tail count over the positive-tail count falls to `alpha`.
///
/// Candidates are the distinct score magnitudes plus a sentinel above the
/// maximum; both counting functions are step functions that change only at
/// those points. Returns `(R, detected indices)`; an empty detection set
/// reports `R = +∞`.
pub fn threshold(scores: &[f64], alpha: f64) -> Result<(f64, Vec<usize>)> {
    if !(0.0..1.0).contains(&alpha) || alpha == 0.0 {
        return Err(Error::Config(format!("alpha {alpha} outside (0, 1)")));
    }
    if scores.is_empty() {
        return Ok((f64::INFINITY, Vec::new()));
    }
    let mut grid: Vec<f64> = scores.iter().map(|s| s.abs()).filter(|&a| a > 0.0).collect();
    grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
    grid.dedup();
    let sentinel = grid.last().copied().unwrap_or(0.0) + 1.0;
    grid.push(sentinel);

    let mut chosen = f64::INFINITY;
    for &r in &grid {
        let neg = scores.iter().filter(|&&s| s <= -r).count();
        let pos = scores.iter().filter(|&&s| s >= r).count();
        if (neg as f64) / (pos.max(1) as f64) <= alpha {
            chosen = r;
            break;
        }
    }
    let detected: Vec<usize> = scores
        .iter()
        .enumerate()
        .filter(|(_, &s)| s >= chosen)
        .map(|(i, _)| i)
        .collect();
    if detected.is_empty() {
        return Ok((f64::INFINITY, detected));
    }
    Ok((chosen, detected))
}

/// Detection settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionConfig {
    pub estimator: RobustMeanEstimator,
    pub omega: OmegaSpec,
    pub alpha: f64,
    /// Whether the node's own first-half gradient joins the robust-mean
    /// input. On by default; exposed for ablation.
    #[serde(default = "default_include_self")]
    pub include_self: bool,
}

fn default_include_self() -> bool {
    true
}

impl DetectionConfig {
    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        self.omega.validate()?;
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

/// Screening outcome at one normal node.
#[derive(Debug, Clone)]
pub struct NodeDetection {
    pub node: usize,
    /// Data-driven threshold; `+∞` when nothing was flagged.
    pub threshold: f64,
    pub identified: BTreeSet<usize>,
    pub fdp: f64,
    pub sure_detection: bool,
}

/// Per-pair score row for the CSV dump.
#[derive(Debug, Clone)]
pub struct ScoreRow {
    pub node: usize,
    pub neighbor: usize,
    pub score: f64,
    pub threshold: f64,
    pub detected: bool,
    pub truth_byzantine: bool,
}

/// Full detection report over the network.
#[derive(Debug, Clone)]
pub struct DetectionReport {
    pub rows: Vec<ScoreRow>,
    pub per_node: Vec<NodeDetection>,
    /// `FDP` averaged over normal nodes.
    pub averaged_fdp: f64,
    /// Fraction of normal nodes whose true Byzantine neighbors were all
    /// flagged.
    pub averaged_pa: f64,
}

/// Gradient pair transmitted by each node during screening.
#[derive(Debug, Clone)]
pub struct GradientPair {
    pub first: Array1<f64>,
    pub second: Array1<f64>,
}

/// Compute every node's transmitted gradient pair: split the identification
/// set into two equal sub-batches, evaluate the local gradient at the node's
/// own parameter on each half, then apply any message-level attack (both
/// halves forged identically).
pub fn gradient_pairs(
    datasets: &[NodeDataset],
    thetas: &[Array1<f64>],
    attack: &AttackSpec,
    byz_ids: &BTreeSet<usize>,
    seed: u64,
) -> Result<Vec<GradientPair>> {
    let m = datasets.len();
    if thetas.len() != m {
        return Err(Error::Detection("parameter list does not match datasets".into()));
    }
    let mut pairs = Vec::with_capacity(m);
    for (i, ds) in datasets.iter().enumerate() {
        if ds.identification_indices.is_empty() || ds.identification_indices.len() % 2 != 0 {
            return Err(Error::Detection(format!(
                "node {i} has no usable identification split"
            )));
        }
        let mut rng = stream(seed, StreamKind::DetectSplit, i as u64);
        let mut idx = ds.identification_indices.clone();
        idx.shuffle(&mut rng);
        let half = idx.len() / 2;
        let g1 = minibatch_gradient(&thetas[i], ds, &idx[..half])
            .map_err(|e| Error::Detection(e.to_string()))?;
        let g2 = minibatch_gradient(&thetas[i], ds, &idx[half..])
            .map_err(|e| Error::Detection(e.to_string()))?;
        pairs.push(GradientPair { first: g1.vector, second: g2.vector });
    }

    if attack.is_message_level() && !byz_ids.is_empty() {
        let mut rng = stream(seed, StreamKind::MessageAttackDetect, 0);
        let firsts: Vec<Array1<f64>> = pairs.iter().map(|p| p.first.clone()).collect();
        let attacked = apply_message_attack(attack, &firsts, byz_ids, &mut rng)
            .map_err(|e| Error::Detection(e.to_string()))?;
        for &b in byz_ids {
            pairs[b].first = attacked[b].clone();
            pairs[b].second = attacked[b].clone();
        }
    }
    Ok(pairs)
}

/// Run the screening phase. Every node transmits its gradient pair; each
/// normal node builds a robust center from its neighborhood's first halves,
/// scores every proper neighbor, thresholds, and flags. Byzantine nodes'
/// own score rows are not produced (they do not follow the protocol).
pub fn detect(
    graph: &UndirectedGraph,
    datasets: &[NodeDataset],
    thetas: &[Array1<f64>],
    attack: &AttackSpec,
    cfg: &DetectionConfig,
    byz_ids: &BTreeSet<usize>,
    seed: u64,
) -> Result<DetectionReport> {
    cfg.validate()?;
    let m = graph.node_count();
    if datasets.len() != m || thetas.len() != m {
        return Err(Error::Detection("detection inputs disagree on node count".into()));
    }
    let pairs = gradient_pairs(datasets, thetas, attack, byz_ids, seed)?;
    let normal: Vec<usize> = (0..m).filter(|i| !byz_ids.contains(i)).collect();

    let per_node: Vec<Result<(NodeDetection, Vec<ScoreRow>)>> =
        exec::map_indexed(normal.len(), |ni| {
            let i = normal[ni];
            let neighbors = graph.neighbors(i);
            if neighbors.is_empty() {
                // Isolated node: nothing to score.
                return Ok((
                    NodeDetection {
                        node: i,
                        threshold: f64::INFINITY,
                        identified: BTreeSet::new(),
                        fdp: 0.0,
                        sure_detection: true,
                    },
                    Vec::new(),
                ));
            }
            let mut estimator_input: Vec<Array1<f64>> =
                neighbors.iter().map(|&j| pairs[j].first.clone()).collect();
            if cfg.include_self {
                estimator_input.push(pairs[i].first.clone());
            }
            let g_hat = cfg
                .estimator
                .estimate(&estimator_input)
                .map_err(|e| Error::Detection(e.to_string()))?;
            let omega = build_omega(&cfg.omega, &estimator_input)?;
            let scores: Vec<f64> = neighbors
                .iter()
                .map(|&j| score(&pairs[j].first, &pairs[j].second, &g_hat, &omega))
                .collect();
            let (r, detected_pos) = threshold(&scores, cfg.alpha)?;
            let identified: BTreeSet<usize> =
                detected_pos.iter().map(|&p| neighbors[p]).collect();
            let false_count = identified.iter().filter(|j| !byz_ids.contains(j)).count();
            let fdp = false_count as f64 / identified.len().max(1) as f64;
            let true_byz: BTreeSet<usize> =
                neighbors.iter().copied().filter(|j| byz_ids.contains(j)).collect();
            let sure = true_byz.is_subset(&identified);
            let rows: Vec<ScoreRow> = neighbors
                .iter()
                .zip(&scores)
                .map(|(&j, &s)| ScoreRow {
                    node: i,
                    neighbor: j,
                    score: s,
                    threshold: r,
                    detected: identified.contains(&j),
                    truth_byzantine: byz_ids.contains(&j),
                })
                .collect();
            Ok((
                NodeDetection { node: i, threshold: r, identified, fdp, sure_detection: sure },
                rows,
            ))
        });

    let mut nodes = Vec::with_capacity(normal.len());
    let mut rows = Vec::new();
    for item in per_node {
        let (node, mut node_rows) = item?;
        rows.append(&mut node_rows);
        nodes.push(node);
    }
    let count = nodes.len().max(1) as f64;
    let averaged_fdp = nodes.iter().map(|n| n.fdp).sum::<f64>() / count;
    let averaged_pa =
        nodes.iter().filter(|n| n.sure_detection).count() as f64 / count;
    Ok(DetectionReport { rows, per_node: nodes, averaged_fdp, averaged_pa })
}

/// What Byzantine nodes do with their own in-arcs after screening.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ByzPrunePolicy {
    /// Keep every in-arc (default).
    KeepAll,
    /// Drop every non-self in-arc.
    DropAll,
}

/// Convert a detection report into per-node in-arc removal sets. Normal
/// nodes cut the arcs from their identified sets; Byzantine nodes act per
/// policy.
pub fn prune_decisions(
    report: &DetectionReport,
    graph: &UndirectedGraph,
    byz_ids: &BTreeSet<usize>,
    policy: ByzPrunePolicy,
) -> Vec<BTreeSet<usize>> {
    let m = graph.node_count();
    let mut removals = vec![BTreeSet::new(); m];
    for node in &report.per_node {
        removals[node.node] = node.identified.clone();
    }
    if policy == ByzPrunePolicy::DropAll {
        for &b in byz_ids {
            removals[b] = graph.neighbors(b).into_iter().collect();
        }
    }
    removals
}
