//! Rescaled decentralized SGD over the pruned row-stochastic network:
//! dominant-eigenvector tracking, the per-node update, and convergence
//! metrics.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::spectral_norm;
use crate::problem::{
    apply_message_attack, global_gradient, minibatch_gradient, optimality_gap, sample_batch,
    AttackSpec, GapReference, NodeDataset,
};
use crate::rng::{node_round_index, stream, StreamKind};
use crate::topology::{MixingMatrix, SpectralProfile};

/// Per-node optimizer state: parameter vectors plus the eigenvector-tracking
/// auxiliary vectors (one row of a power of the mixing matrix each).
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub thetas: Vec<Array1<f64>>,
    /// `ys[i]` has length `m`; entry `i` is the rescaling divisor.
    pub ys: Vec<Array1<f64>>,
    pub k: usize,
}

/// `Y0 = W^{t0}`, handed out row by row.
pub fn init_y(w: &MixingMatrix, t0: usize) -> Vec<Array1<f64>> {
    let m = w.dim();
    let mut power = Array2::eye(m);
    for _ in 0..t0.max(1) {
        power = power.dot(&w.view());
    }
    (0..m).map(|i| power.row(i).to_owned()).collect()
}

/// `sup_k ‖Diag(A^k)⁻¹‖₂` estimated over `horizon` powers (the sequence
/// converges once `A^k` approaches its rank-one limit).
pub fn diag_inverse_sup(a: &Array2<f64>, horizon: usize) -> f64 {
    let n = a.nrows();
    let mut power = Array2::<f64>::eye(n);
    let mut sup = 1.0f64;
    for _ in 0..horizon {
        power = power.dot(a);
        let min_diag = (0..n).map(|i| power[[i, i]]).fold(f64::INFINITY, f64::min);
        if min_diag <= 0.0 {
            return f64::INFINITY;
        }
        sup = sup.max(1.0 / min_diag);
    }
    sup
}

/// Default tracking warm-start exponent, from the estimated contraction
/// profile of the sub-block, clamped to `[1, 50]`.
pub fn default_t0(profile: &SpectralProfile, w_sup: f64, m_g: usize) -> usize {
    let v1_norm_sq = profile.v1.dot(&profile.v1);
    let arg = m_g as f64 / (48.0 * profile.c_const.powi(2) * w_sup.powi(4) * v1_norm_sq);
    if !(arg.is_finite() && arg > 0.0) {
        return 1;
    }
    let denom = 2.0 * profile.rho.ln();
    if denom >= 0.0 {
        return 1;
    }
    let t0 = (arg.ln() / denom).ceil();
    (t0.max(1.0).min(50.0)) as usize
}

/// One synchronous round: refresh every `y`, then every `θ`. The divisor is
/// the freshly updated `[y_i]_i`. Nodes on the closed component must keep a
/// positive divisor (a tiny one signals a structural problem and is a hard
/// error); stray nodes outside the component fall back to a pure consensus
/// step once their divisor underflows, since nothing on the component
/// listens to them.
pub fn step(
    state: &OptimizerState,
    w: &MixingMatrix,
    gradients: &[Array1<f64>],
    eta: f64,
    scc: &BTreeSet<usize>,
) -> Result<OptimizerState> {
    let m = w.dim();
    if state.thetas.len() != m || state.ys.len() != m || gradients.len() != m {
        return Err(Error::Optimization("state size does not match the network".into()));
    }
    let new_ys: Vec<Array1<f64>> = exec::map_indexed(m, |i| {
        let mut acc = Array1::<f64>::zeros(m);
        for j in 0..m {
            let wij = w.get(i, j);
            if wij != 0.0 {
                acc.scaled_add(wij, &state.ys[j]);
            }
        }
        acc
    });
    for &i in scc {
        if new_ys[i][i] <= 1e-12 {
            return Err(Error::Optimization(format!(
                "tracking divisor underflow at component node {i} (y_ii = {:.3e}); \
                 the sub-block is not irreducible or the node set is wrong",
                new_ys[i][i]
            )));
        }
    }
    let d = state.thetas[0].len();
    let new_thetas: Vec<Array1<f64>> = exec::map_indexed(m, |i| {
        let mut mixed = Array1::<f64>::zeros(d);
        for j in 0..m {
            let wij = w.get(i, j);
            if wij != 0.0 {
                mixed.scaled_add(wij, &state.thetas[j]);
            }
        }
        let divisor = new_ys[i][i];
        if divisor > 1e-12 {
            mixed.scaled_add(-eta / divisor, &gradients[i]);
        }
        mixed
    });
    Ok(OptimizerState { thetas: new_thetas, ys: new_ys, k: state.k + 1 })
}

/// One row of the per-iteration metrics stream.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRow {
    pub k: usize,
    pub eta: f64,
    pub gap: f64,
    pub grad_norm_bar: f64,
    pub grad_norm_tilde: f64,
    pub consensus_mk: f64,
    pub tracking_residual: f64,
}

#[derive(Debug, Clone, Default)]
pub struct RunMetrics {
    pub rows: Vec<MetricsRow>,
}

impl RunMetrics {
    pub fn final_row(&self) -> Option<&MetricsRow> {
        self.rows.last()
    }

    /// `(1/K) Σ_k ‖∇f(θ̃_k)‖²` over the recorded iterations.
    pub fn mean_sq_grad_tilde(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.grad_norm_tilde * r.grad_norm_tilde).sum::<f64>()
            / self.rows.len() as f64
    }

    /// `(1/K) Σ_k M_k` over the recorded iterations.
    pub fn mean_consensus(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.consensus_mk).sum::<f64>() / self.rows.len() as f64
    }
}

/// Weighted and plain averages over the component.
pub fn component_averages(
    thetas: &[Array1<f64>],
    scc: &[usize],
    v1: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let d = thetas[0].len();
    let mut tilde = Array1::<f64>::zeros(d);
    let mut bar = Array1::<f64>::zeros(d);
    for (pos, &i) in scc.iter().enumerate() {
        tilde.scaled_add(v1[pos], &thetas[i]);
        bar.scaled_add(1.0, &thetas[i]);
    }
    bar.mapv_inplace(|x| x / scc.len() as f64);
    (tilde, bar)
}

/// Metrics at the current state. `f` and the gap are evaluated over the
/// normal datasets; consensus and the tracking residual over the component.
pub fn compute_metrics(
    state: &OptimizerState,
    scc: &[usize],
    v1: &Array1<f64>,
    datasets: &[NodeDataset],
    gap_ref: &GapReference,
    eta: f64,
) -> Result<MetricsRow> {
    let (tilde, bar) = component_averages(&state.thetas, scc, v1);
    let gap = optimality_gap(&tilde, datasets, gap_ref)?;
    let gb = global_gradient(&bar, datasets)?;
    let gt = global_gradient(&tilde, datasets)?;
    let consensus = scc
        .iter()
        .map(|&i| {
            let diff = &tilde - &state.thetas[i];
            diff.dot(&diff)
        })
        .sum::<f64>()
        / scc.len() as f64;
    let y_block = Array2::from_shape_fn((scc.len(), scc.len()), |(a, b)| {
        state.ys[scc[a]][scc[b]]
    });
    let limit = Array2::from_shape_fn((scc.len(), scc.len()), |(_, b)| v1[b]);
    let residual = spectral_norm(&(&y_block - &limit).view());
    Ok(MetricsRow {
        k: state.k,
        eta,
        gap,
        grad_norm_bar: gb.dot(&gb).sqrt(),
        grad_norm_tilde: gt.dot(&gt).sqrt(),
        consensus_mk: consensus,
        tracking_residual: residual,
    })
}

/// Settings for the optimization phase.
#[derive(Debug, Clone)]
pub struct OptimizationSettings {
    pub iterations: usize,
    pub batch: usize,
    /// Explicit step size; `None` uses `1/√(m_g K)`.
    pub eta: Option<f64>,
    pub t0: usize,
}

/// Run `K` synchronous rounds of rescaled decentralized SGD over the full
/// pruned network. Nodes outside the closed component keep sending messages,
/// but no component node has weight on them. Metrics are recorded at the
/// initial point and after every round (`K+1` rows).
#[allow(clippy::too_many_arguments)]
pub fn run_optimization(
    w: &MixingMatrix,
    scc: &[usize],
    profile: &SpectralProfile,
    datasets: &[NodeDataset],
    init_thetas: &[Array1<f64>],
    attack: &AttackSpec,
    byz_ids: &BTreeSet<usize>,
    settings: &OptimizationSettings,
    gap_ref: &GapReference,
    seed: u64,
) -> Result<(RunMetrics, OptimizerState)> {
    let m = w.dim();
    if scc.is_empty() {
        return Err(Error::Optimization(
            "no closed strongly connected component; review the detection output".into(),
        ));
    }
    if datasets.len() != m || init_thetas.len() != m {
        return Err(Error::Optimization("optimization inputs disagree on node count".into()));
    }
    if settings.batch == 0 {
        return Err(Error::Optimization("batch size must be positive".into()));
    }
    let m_g = scc.len();
    let eta = settings.eta.unwrap_or(1.0 / ((m_g * settings.iterations.max(1)) as f64).sqrt());
    let scc_set: BTreeSet<usize> = scc.iter().copied().collect();

    let mut state = OptimizerState {
        thetas: init_thetas.to_vec(),
        ys: init_y(w, settings.t0),
        k: 0,
    };
    let mut metrics = RunMetrics::default();
    metrics.rows.push(compute_metrics(&state, scc, &profile.v1, datasets, gap_ref, eta)?);

    for k in 0..settings.iterations {
        let gradients: Vec<Array1<f64>> = {
            let raw: Vec<Result<Array1<f64>>> = exec::map_indexed(m, |i| {
                let mut rng = stream(seed, StreamKind::OptBatch, node_round_index(i, k));
                let pool: Vec<usize> = (0..datasets[i].len()).collect();
                let batch_idx = sample_batch(&pool, settings.batch, &mut rng);
                Ok(minibatch_gradient(&state.thetas[i], &datasets[i], &batch_idx)
                    .map_err(|e| Error::Optimization(e.to_string()))?
                    .vector)
            });
            let mut clean = Vec::with_capacity(m);
            for r in raw {
                clean.push(r?);
            }
            if attack.is_message_level() && !byz_ids.is_empty() {
                let mut rng = stream(seed, StreamKind::MessageAttackOpt, k as u64);
                apply_message_attack(attack, &clean, byz_ids, &mut rng)
                    .map_err(|e| Error::Optimization(e.to_string()))?
            } else {
                clean
            }
        };
        state = step(&state, w, &gradients, eta, &scc_set)?;
        metrics.rows.push(compute_metrics(&state, scc, &profile.v1, datasets, gap_ref, eta)?);
    }
    Ok((metrics, state))
}
