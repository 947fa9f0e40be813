//! Synthetic decentralized linear-regression task: data generation under a
//! contamination model, loss/gradient oracles, dataset splitting, and
//! message-level attacks.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::solve_spd;
use crate::rng::{stream, StreamKind};

/// Ground-truth linear model: the first `⌊0.1 d⌋` coefficients are one, the
/// rest zero; additive Gaussian noise on the response.
#[derive(Debug, Clone)]
pub struct LinearTask {
    pub d: usize,
    pub theta_star: Array1<f64>,
    pub noise_std: f64,
}

impl LinearTask {
    pub fn new(d: usize, noise_std: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        if noise_std < 0.0 {
            return Err(Error::Config("noise std must be nonnegative".into()));
        }
        let s = d / 10;
        let theta_star = Array1::from_shape_fn(d, |i| if i < s { 1.0 } else { 0.0 });
        Ok(Self { d, theta_star, noise_std })
    }

    /// Number of leading unit coefficients.
    pub fn support_size(&self) -> usize {
        self.d / 10
    }
}

/// Byzantine behavior, applied either when data is generated or when
/// messages leave the node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttackSpec {
    /// Responses on Byzantine nodes follow a corrupted coefficient vector
    /// `(mu_c · 1_{⌊s_r d⌋}, 0, …)` instead of the ground truth.
    Param { mu_c: f64, s_r: f64 },
    /// Covariates replaced by `scale·x + shift·v` for a shared random unit
    /// vector `v`, responses offset by `bias`.
    Data {
        #[serde(default = "default_data_scale")]
        scale: f64,
        #[serde(default = "default_data_shift")]
        shift: f64,
        #[serde(default = "default_data_bias")]
        bias: f64,
    },
    /// Outgoing gradients replaced by `0.5·ḡ + ε` with noise scaled by the
    /// coordinatewise std of the normal gradients.
    Grad {
        #[serde(default = "default_grad_scale")]
        noise_scale: f64,
    },
    /// Outgoing gradients replaced by `−a·ḡ` (inner-product manipulation).
    Ipm { a: f64 },
    /// No Byzantine behavior at all; useful for clean baselines.
    None,
}

fn default_data_scale() -> f64 {
    0.8
}
fn default_data_shift() -> f64 {
    3.0
}
fn default_data_bias() -> f64 {
    1.0
}
fn default_grad_scale() -> f64 {
    20.0
}

impl AttackSpec {
    /// True when the attack contaminates the local dataset at generation
    /// time (the node then follows its own data honestly).
    pub fn is_data_level(&self) -> bool {
        matches!(self, AttackSpec::Param { .. } | AttackSpec::Data { .. })
    }

    /// True when the attack intercepts outgoing messages.
    pub fn is_message_level(&self) -> bool {
        matches!(self, AttackSpec::Grad { .. } | AttackSpec::Ipm { .. })
    }

    /// Corrupted coefficient vector for the parameter attack.
    pub fn corrupted_theta(&self, d: usize) -> Option<Array1<f64>> {
        match self {
            AttackSpec::Param { mu_c, s_r } => {
                let s = ((s_r * d as f64).floor() as usize).min(d);
                Some(Array1::from_shape_fn(d, |i| if i < s { *mu_c } else { 0.0 }))
            }
            _ => None,
        }
    }
}

/// One node's local samples plus its warm-up/identification split.
#[derive(Debug, Clone)]
pub struct NodeDataset {
    pub node_id: usize,
    /// Covariates, one sample per row.
    pub xs: Array2<f64>,
    pub ys: Array1<f64>,
    pub is_byzantine: bool,
    pub warmup_indices: Vec<usize>,
    pub identification_indices: Vec<usize>,
}

impl NodeDataset {
    pub fn len(&self) -> usize {
        self.ys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ys.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.xs.ncols()
    }
}

/// Mini-batch stochastic gradient together with the batch size it came from.
#[derive(Debug, Clone)]
pub struct GradientBatch {
    pub vector: Array1<f64>,
    pub batch_size: usize,
}

/// Sample every node's local dataset. Normal nodes draw from the common
/// clean distribution; Byzantine nodes draw according to the attack (or from
/// the clean distribution for message-level attacks, which corrupt messages
/// rather than data).
pub fn generate_network_data(
    task: &LinearTask,
    m: usize,
    n_per_node: usize,
    byz_ids: &BTreeSet<usize>,
    attack: &AttackSpec,
    seed: u64,
) -> Result<Vec<NodeDataset>> {
    if byz_ids.iter().any(|&b| b >= m) {
        return Err(Error::Data("Byzantine id out of range".into()));
    }
    if 2 * byz_ids.len() >= m {
        return Err(Error::Data(format!(
            "{} Byzantine nodes among {m} violates the minority requirement",
            byz_ids.len()
        )));
    }
    if n_per_node == 0 {
        return Err(Error::Data("per-node sample count must be positive".into()));
    }

    // Run-level attack constant: the shared covariate-shift direction.
    let v_shared: Option<Array1<f64>> = match attack {
        AttackSpec::Data { .. } => {
            let mut rng = stream(seed, StreamKind::AttackShared, 0);
            let mut v = Array1::from_shape_fn(task.d, |_| rng.random::<f64>());
            let norm = v.dot(&v).sqrt();
            if norm > 0.0 {
                v.mapv_inplace(|x| x / norm);
            }
            Some(v)
        }
        _ => None,
    };
    let theta_c = attack.corrupted_theta(task.d);

    let mut out = Vec::with_capacity(m);
    for node in 0..m {
        let mut rng = stream(seed, StreamKind::DataGen, node as u64);
        let byz = byz_ids.contains(&node);
        let mut xs = Array2::zeros((n_per_node, task.d));
        let mut ys = Array1::zeros(n_per_node);
        for u in 0..n_per_node {
            // Fixed draw order per sample: d covariates then one noise value.
            let x = Array1::from_shape_fn(task.d, |_| {
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            });
            let eps: f64 =
                task.noise_std * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng);
            let (x_final, y) = match (byz, attack) {
                (true, AttackSpec::Param { .. }) => {
                    let y = x.dot(theta_c.as_ref().unwrap()) + eps;
                    (x, y)
                }
                (true, AttackSpec::Data { scale, shift, bias }) => {
                    let v = v_shared.as_ref().unwrap();
                    let y = x.dot(&task.theta_star) + eps + bias;
                    let shifted = Array1::from_shape_fn(task.d, |k| scale * x[k] + shift * v[k]);
                    (shifted, y)
                }
                _ => {
                    let y = x.dot(&task.theta_star) + eps;
                    (x, y)
                }
            };
            xs.row_mut(u).assign(&x_final);
            ys[u] = y;
        }
        out.push(NodeDataset {
            node_id: node,
            xs,
            ys,
            is_byzantine: byz,
            warmup_indices: (0..n_per_node).collect(),
            identification_indices: Vec::new(),
        });
    }
    Ok(out)
}

/// Squared-loss sample gradient averaged over `indices`:
/// `(1/|ξ|) Σ x (xᵀθ − y)`.
pub fn minibatch_gradient(
    theta: &Array1<f64>,
    data: &NodeDataset,
    indices: &[usize],
) -> Result<GradientBatch> {
    if indices.is_empty() {
        return Err(Error::Data("empty mini-batch".into()));
    }
    let d = data.dim();
    let mut g = Array1::zeros(d);
    for &u in indices {
        if u >= data.len() {
            return Err(Error::Data(format!("sample index {u} out of range")));
        }
        let x = data.xs.row(u);
        let r = x.dot(theta) - data.ys[u];
        for k in 0..d {
            g[k] += x[k] * r;
        }
    }
    g.mapv_inplace(|v| v / indices.len() as f64);
    Ok(GradientBatch { vector: g, batch_size: indices.len() })
}

/// Uniformly random disjoint split into a warm-up set and an identification
/// set of size `n` (even). Deterministic under `seed`.
pub fn split_dataset(data: &mut NodeDataset, n: usize, seed: u64) -> Result<()> {
    if n % 2 != 0 {
        return Err(Error::Data(format!("identification size {n} must be even")));
    }
    if n >= data.len() {
        return Err(Error::Data(format!(
            "identification size {n} must leave room for warm-up (N={})",
            data.len()
        )));
    }
    let mut rng = stream(seed, StreamKind::Split, data.node_id as u64);
    let mut all: Vec<usize> = (0..data.len()).collect();
    all.shuffle(&mut rng);
    let mut ident: Vec<usize> = all[..n].to_vec();
    let mut warm: Vec<usize> = all[n..].to_vec();
    ident.sort_unstable();
    warm.sort_unstable();
    data.identification_indices = ident;
    data.warmup_indices = warm;
    Ok(())
}

/// Replace Byzantine outgoing messages according to a message-level attack.
/// `messages` is indexed by node id; normal entries pass through untouched.
pub fn apply_message_attack(
    attack: &AttackSpec,
    messages: &[Array1<f64>],
    byz_ids: &BTreeSet<usize>,
    rng: &mut impl Rng,
) -> Result<Vec<Array1<f64>>> {
    if !attack.is_message_level() {
        return Err(Error::Data(
            "apply_message_attack called with a data-level attack".into(),
        ));
    }
    if messages.is_empty() {
        return Ok(Vec::new());
    }
    let d = messages[0].len();
    let normal: Vec<&Array1<f64>> = messages
        .iter()
        .enumerate()
        .filter(|(i, _)| !byz_ids.contains(i))
        .map(|(_, g)| g)
        .collect();
    if normal.is_empty() {
        return Err(Error::Data("message attack needs at least one normal node".into()));
    }
    let mut mean = Array1::<f64>::zeros(d);
    for g in &normal {
        mean = mean + *g;
    }
    mean.mapv_inplace(|v| v / normal.len() as f64);

    let mut out = messages.to_vec();
    match attack {
        AttackSpec::Ipm { a } => {
            let forged = mean.mapv(|v| -a * v);
            for &b in byz_ids {
                out[b] = forged.clone();
            }
        }
        AttackSpec::Grad { noise_scale } => {
            // Coordinatewise std over the normal messages.
            let mut var = Array1::<f64>::zeros(d);
            for g in &normal {
                for k in 0..d {
                    let dvk = g[k] - mean[k];
                    var[k] += dvk * dvk;
                }
            }
            var.mapv_inplace(|v| v / normal.len() as f64);
            let std = var.mapv(f64::sqrt);
            // One shared center draw, then per-node noise around it.
            let nu = Array1::from_shape_fn(d, |k| {
                let s: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
                noise_scale * std[k] * s
            });
            for &b in byz_ids {
                let eps = Array1::from_shape_fn(d, |k| {
                    let s: f64 =
                        <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng);
                    nu[k] + std[k] * s
                });
                out[b] = 0.5 * &mean + eps;
            }
        }
        _ => unreachable!(),
    }
    Ok(out)
}

/// Empirical risk of one node: `(1/2N) Σ (y − xᵀθ)²`.
pub fn local_objective(theta: &Array1<f64>, data: &NodeDataset) -> f64 {
    let mut total = 0.0;
    for u in 0..data.len() {
        let r = data.ys[u] - data.xs.row(u).dot(theta);
        total += r * r;
    }
    total / (2.0 * data.len() as f64)
}

/// Empirical risk averaged over the normal nodes.
pub fn global_objective(theta: &Array1<f64>, datasets: &[NodeDataset]) -> Result<f64> {
    let normal: Vec<&NodeDataset> = datasets.iter().filter(|d| !d.is_byzantine).collect();
    if normal.is_empty() {
        return Err(Error::Data("global objective needs at least one normal node".into()));
    }
    Ok(normal.iter().map(|d| local_objective(theta, d)).sum::<f64>() / normal.len() as f64)
}

/// Exact gradient of the averaged normal empirical risk.
pub fn global_gradient(theta: &Array1<f64>, datasets: &[NodeDataset]) -> Result<Array1<f64>> {
    let normal: Vec<&NodeDataset> = datasets.iter().filter(|d| !d.is_byzantine).collect();
    if normal.is_empty() {
        return Err(Error::Data("global gradient needs at least one normal node".into()));
    }
    let d = normal[0].dim();
    let mut g = Array1::zeros(d);
    for ds in &normal {
        let all: Vec<usize> = (0..ds.len()).collect();
        g = g + minibatch_gradient(theta, ds, &all)?.vector;
    }
    g.mapv_inplace(|v| v / normal.len() as f64);
    Ok(g)
}

/// Reference point for the optimality gap: the exact minimizer of the pooled
/// normal empirical risk, solved by normal equations.
#[derive(Debug, Clone)]
pub struct GapReference {
    pub theta_hat: Array1<f64>,
    pub f_min: f64,
}

pub fn gap_reference(datasets: &[NodeDataset]) -> Result<GapReference> {
    let normal: Vec<&NodeDataset> = datasets.iter().filter(|d| !d.is_byzantine).collect();
    if normal.is_empty() {
        return Err(Error::Data("gap reference needs at least one normal node".into()));
    }
    let d = normal[0].dim();
    let mut gram = Array2::<f64>::zeros((d, d));
    let mut rhs = Array1::<f64>::zeros(d);
    for ds in &normal {
        let scale = 1.0 / ds.len() as f64;
        for u in 0..ds.len() {
            let x = ds.xs.row(u);
            for a in 0..d {
                rhs[a] += scale * x[a] * ds.ys[u];
                for b in 0..d {
                    gram[[a, b]] += scale * x[a] * x[b];
                }
            }
        }
    }
    let inv_m = 1.0 / normal.len() as f64;
    gram.mapv_inplace(|v| v * inv_m);
    rhs.mapv_inplace(|v| v * inv_m);
    let theta_hat = solve_spd(&gram.view(), &rhs)?;
    let f_min = normal.iter().map(|ds| local_objective(&theta_hat, ds)).sum::<f64>()
        / normal.len() as f64;
    Ok(GapReference { theta_hat, f_min })
}

/// `f(θ) − f(θ̂*)`; nonnegative up to solver precision.
pub fn optimality_gap(
    theta: &Array1<f64>,
    datasets: &[NodeDataset],
    reference: &GapReference,
) -> Result<f64> {
    Ok(global_objective(theta, datasets)? - reference.f_min)
}

/// Draw `batch` indices uniformly with replacement from `pool`.
pub fn sample_batch(pool: &[usize], batch: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..batch).map(|_| pool[rng.random_range(0..pool.len())]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn toy_task(d: usize) -> LinearTask {
        LinearTask::new(d, 1.0).unwrap()
    }

    #[test]
    fn theta_star_shape() {
        let t = toy_task(30);
        assert_eq!(t.support_size(), 3);
        for i in 0..30 {
            assert_eq!(t.theta_star[i], if i < 3 { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn param_attack_uses_corrupted_theta() {
        let attack = AttackSpec::Param { mu_c: 5.0, s_r: 0.1 };
        let th = attack.corrupted_theta(30).unwrap();
        for i in 0..30 {
            assert_eq!(th[i], if i < 3 { 5.0 } else { 0.0 });
        }
    }

    #[test]
    fn empty_byzantine_set_draws_all_clean() {
        let t = toy_task(10);
        let data =
            generate_network_data(&t, 6, 20, &BTreeSet::new(), &AttackSpec::None, 3).unwrap();
        assert_eq!(data.len(), 6);
        assert!(data.iter().all(|d| !d.is_byzantine));
    }

    #[test]
    fn rejects_byzantine_majority() {
        let t = toy_task(10);
        let byz: BTreeSet<usize> = [0, 1, 2].into_iter().collect();
        assert!(generate_network_data(&t, 6, 20, &byz, &AttackSpec::None, 3).is_err());
    }

    #[test]
    fn data_attack_covariate_mean_matches_shift() {
        // Byzantine covariates are scale·x + shift·v, so their mean over many
        // samples approaches shift·v.
        let t = toy_task(8);
        let byz: BTreeSet<usize> = [0].into_iter().collect();
        let attack = AttackSpec::Data { scale: 0.8, shift: 3.0, bias: 1.0 };
        let n = 10_000;
        let data = generate_network_data(&t, 3, n, &byz, &attack, 99).unwrap();
        // Reconstruct the shared direction from the same stream.
        let mut rng = stream(99, StreamKind::AttackShared, 0);
        let mut v = Array1::from_shape_fn(8, |_| rng.random::<f64>());
        let norm = v.dot(&v).sqrt();
        v.mapv_inplace(|x| x / norm);

        let mut mean = Array1::<f64>::zeros(8);
        for u in 0..n {
            mean = mean + data[0].xs.row(u);
        }
        mean.mapv_inplace(|x| x / n as f64);
        let se = 0.8 / (n as f64).sqrt(); // per-coordinate std of scale·x
        for k in 0..8 {
            assert!(
                (mean[k] - 3.0 * v[k]).abs() <= 5.0 * se,
                "coordinate {k}: {} vs {}",
                mean[k],
                3.0 * v[k]
            );
        }
    }

    #[test]
    fn gradient_vanishes_at_batch_minimizer() {
        let t = toy_task(4);
        let data = generate_network_data(&t, 2, 60, &BTreeSet::new(), &AttackSpec::None, 5)
            .unwrap()
            .remove(0);
        let idx: Vec<usize> = (0..30).collect();
        // Normal-equations solve restricted to the batch.
        let mut gram = Array2::<f64>::zeros((4, 4));
        let mut rhs = Array1::<f64>::zeros(4);
        for &u in &idx {
            let x = data.xs.row(u);
            for a in 0..4 {
                rhs[a] += x[a] * data.ys[u];
                for b in 0..4 {
                    gram[[a, b]] += x[a] * x[b];
                }
            }
        }
        let theta = solve_spd(&gram.view(), &rhs).unwrap();
        let g = minibatch_gradient(&theta, &data, &idx).unwrap();
        let norm = g.vector.dot(&g.vector).sqrt();
        assert!(norm <= 1e-10, "gradient norm {norm}");
    }

    #[test]
    fn single_sample_gradient_at_zero() {
        let t = toy_task(3);
        let data = generate_network_data(&t, 2, 5, &BTreeSet::new(), &AttackSpec::None, 1)
            .unwrap()
            .remove(0);
        let theta = Array1::zeros(3);
        let g = minibatch_gradient(&theta, &data, &[2]).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(g.vector[k], -data.ys[2] * data.xs[[2, k]], epsilon = 1e-15);
        }
    }

    #[test]
    fn full_batch_gradient_is_mean_of_per_sample() {
        let t = toy_task(5);
        let data = generate_network_data(&t, 2, 12, &BTreeSet::new(), &AttackSpec::None, 2)
            .unwrap()
            .remove(0);
        let theta = Array1::from_elem(5, 0.3);
        let all: Vec<usize> = (0..12).collect();
        let g = minibatch_gradient(&theta, &data, &all).unwrap();
        let mut acc = Array1::<f64>::zeros(5);
        for u in 0..12 {
            acc = acc + minibatch_gradient(&theta, &data, &[u]).unwrap().vector;
        }
        acc.mapv_inplace(|v| v / 12.0);
        for k in 0..5 {
            assert_abs_diff_eq!(g.vector[k], acc[k], epsilon = 1e-12);
        }
    }

    #[test]
    fn empty_batch_rejected() {
        let t = toy_task(3);
        let data = generate_network_data(&t, 2, 5, &BTreeSet::new(), &AttackSpec::None, 1)
            .unwrap()
            .remove(0);
        assert!(minibatch_gradient(&Array1::zeros(3), &data, &[]).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let t = toy_task(6);
        let mut a = generate_network_data(&t, 2, 100, &BTreeSet::new(), &AttackSpec::None, 7)
            .unwrap()
            .remove(1);
        let mut b = a.clone();
        split_dataset(&mut a, 50, 13).unwrap();
        split_dataset(&mut b, 50, 13).unwrap();
        assert_eq!(a.identification_indices, b.identification_indices);
        assert_eq!(a.warmup_indices, b.warmup_indices);
        assert_eq!(a.identification_indices.len(), 50);
        assert_eq!(a.warmup_indices.len(), 50);
        let mut merged = a.identification_indices.clone();
        merged.extend(&a.warmup_indices);
        merged.sort_unstable();
        assert_eq!(merged, (0..100).collect::<Vec<_>>());
    }

    #[test]
    fn split_boundary_and_odd_n() {
        let t = toy_task(4);
        let mut d = generate_network_data(&t, 2, 10, &BTreeSet::new(), &AttackSpec::None, 7)
            .unwrap()
            .remove(0);
        assert!(split_dataset(&mut d, 9, 0).is_err());
        assert!(split_dataset(&mut d, 10, 0).is_err());
        split_dataset(&mut d, 8, 0).unwrap();
        assert_eq!(d.warmup_indices.len(), 2);
    }

    #[test]
    fn ipm_attack_replaces_byzantine_messages() {
        let msgs = vec![
            Array1::from(vec![1.0, 0.0]),
            Array1::from(vec![1.0, 2.0]),
            Array1::from(vec![5.0, 5.0]),
        ];
        let byz: BTreeSet<usize> = [2].into_iter().collect();
        let mut rng = stream(0, StreamKind::MessageAttackDetect, 0);
        let out =
            apply_message_attack(&AttackSpec::Ipm { a: 1.0 }, &msgs, &byz, &mut rng).unwrap();
        assert_abs_diff_eq!(out[2][0], -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out[2][1], -1.0, epsilon = 1e-15);
        assert_eq!(out[0], msgs[0]);
        assert_eq!(out[1], msgs[1]);
    }

    #[test]
    fn ipm_scaling() {
        let msgs = vec![Array1::from(vec![1.0, 0.0]), Array1::from(vec![0.0, 0.0])];
        let byz: BTreeSet<usize> = [1].into_iter().collect();
        let mut rng = stream(0, StreamKind::MessageAttackDetect, 0);
        let out =
            apply_message_attack(&AttackSpec::Ipm { a: 2.0 }, &msgs, &byz, &mut rng).unwrap();
        assert_abs_diff_eq!(out[1][0], -2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1][1], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn message_attack_without_byzantines_is_identity() {
        let msgs = vec![Array1::from(vec![1.0]), Array1::from(vec![2.0])];
        let mut rng = stream(0, StreamKind::MessageAttackDetect, 0);
        let out =
            apply_message_attack(&AttackSpec::Ipm { a: 1.0 }, &msgs, &BTreeSet::new(), &mut rng)
                .unwrap();
        assert_eq!(out, msgs);
    }

    #[test]
    fn message_attack_rejects_data_level() {
        let msgs = vec![Array1::from(vec![1.0])];
        let mut rng = stream(0, StreamKind::MessageAttackDetect, 0);
        assert!(apply_message_attack(
            &AttackSpec::Param { mu_c: 5.0, s_r: 0.5 },
            &msgs,
            &BTreeSet::new(),
            &mut rng
        )
        .is_err());
    }

    #[test]
    fn gap_is_zero_at_reference_and_nonnegative() {
        let t = toy_task(6);
        let data = generate_network_data(&t, 4, 50, &BTreeSet::new(), &AttackSpec::None, 22)
            .unwrap();
        let reference = gap_reference(&data).unwrap();
        let at_ref = optimality_gap(&reference.theta_hat, &data, &reference).unwrap();
        assert!(at_ref.abs() <= 1e-12, "gap at minimizer {at_ref}");
        let mut rng = stream(5, StreamKind::DataGen, 0);
        for _ in 0..10 {
            let theta = Array1::from_shape_fn(6, |_| rng.random::<f64>() * 4.0 - 2.0);
            assert!(optimality_gap(&theta, &data, &reference).unwrap() >= -1e-12);
        }
    }

    #[test]
    fn gap_matches_direct_quadratic_on_toy() {
        // d=2 dataset small enough to hand-evaluate the quadratic.
        let t = LinearTask::new(2, 0.5).unwrap();
        let data = generate_network_data(&t, 2, 30, &BTreeSet::new(), &AttackSpec::None, 8)
            .unwrap();
        let reference = gap_reference(&data).unwrap();
        let zero = Array1::zeros(2);
        let gap = optimality_gap(&zero, &data, &reference).unwrap();
        let direct = global_objective(&zero, &data).unwrap()
            - global_objective(&reference.theta_hat, &data).unwrap();
        assert_abs_diff_eq!(gap, direct, epsilon = 1e-12);
        assert!(gap > 0.0);
    }

    #[test]
    fn same_seed_gives_bitwise_identical_datasets() {
        let t = toy_task(12);
        let byz: BTreeSet<usize> = [1].into_iter().collect();
        let attack = AttackSpec::Param { mu_c: 5.0, s_r: 0.3 };
        let a = generate_network_data(&t, 5, 40, &byz, &attack, 77).unwrap();
        let b = generate_network_data(&t, 5, 40, &byz, &attack, 77).unwrap();
        for (da, db) in a.iter().zip(&b) {
            assert_eq!(da.xs, db.xs);
            assert_eq!(da.ys, db.ys);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        // Central differences of the batch loss at random points.
        let t = toy_task(7);
        let data = generate_network_data(&t, 2, 40, &BTreeSet::new(), &AttackSpec::None, 31)
            .unwrap()
            .remove(0);
        let mut rng = stream(6, StreamKind::DataGen, 1);
        for trial in 0..20 {
            let theta = Array1::from_shape_fn(7, |_| rng.random::<f64>() * 2.0 - 1.0);
            let batch: Vec<usize> = (0..(5 + trial % 10)).collect();
            let g = minibatch_gradient(&theta, &data, &batch).unwrap().vector;
            let h = 1e-5;
            for k in 0..7 {
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += h;
                tm[k] -= h;
                let loss = |th: &Array1<f64>| -> f64 {
                    batch
                        .iter()
                        .map(|&u| {
                            let r = data.ys[u] - data.xs.row(u).dot(th);
                            r * r
                        })
                        .sum::<f64>()
                        / (2.0 * batch.len() as f64)
                };
                let fd = (loss(&tp) - loss(&tm)) / (2.0 * h);
                let denom = g[k].abs().max(1.0);
                assert!(
                    (fd - g[k]).abs() / denom <= 1e-6,
                    "trial {trial} coord {k}: fd {fd} vs {}",
                    g[k]
                );
            }
        }
    }

    #[test]
    fn heterogeneity_shrinks_with_sample_size() {
        // max_i ‖∇f_i(θ*) − ∇f(θ*)‖² scales like 1/N: doubling N should
        // roughly halve the average over repeated draws.
        let t = toy_task(10);
        let trials = 60;
        let average_max_dev = |n: usize| -> f64 {
            let mut total = 0.0;
            for s in 0..trials {
                let data = generate_network_data(
                    &t,
                    6,
                    n,
                    &BTreeSet::new(),
                    &AttackSpec::None,
                    1000 + s as u64 * 31 + n as u64,
                )
                .unwrap();
                let gbar = global_gradient(&t.theta_star, &data).unwrap();
                let mut worst = 0.0f64;
                for ds in &data {
                    let all: Vec<usize> = (0..ds.len()).collect();
                    let gi = minibatch_gradient(&t.theta_star, ds, &all).unwrap().vector;
                    let diff = &gi - &gbar;
                    worst = worst.max(diff.dot(&diff));
                }
                total += worst;
            }
            total / trials as f64
        };
        let at_n = average_max_dev(50);
        let at_2n = average_max_dev(100);
        let ratio = at_n / at_2n;
        assert!(
            (1.2..=2.8).contains(&ratio),
            "heterogeneity ratio {ratio} outside [1.2, 2.8]"
        );
    }
}
