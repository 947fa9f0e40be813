//! End-to-end orchestration: warm-up, screening, pruning, spectral profile,
//! optimization — plus parameter sweeps and the Monte Carlo connectivity
//! study.

use std::collections::BTreeSet;
use std::path::Path;

use ndarray::Array1;
use serde::Serialize;

use crate::config::{apply_axis, RunConfig, SweepAxis, SweepSpec};
use crate::csvio;
use crate::detect::{detect, prune_decisions, DetectionReport};
use crate::error::{Error, Result};
use crate::exec;
use crate::optim::{
    default_t0, diag_inverse_sup, run_optimization, OptimizationSettings, OptimizerState,
    RunMetrics,
};
use crate::problem::{
    gap_reference, generate_network_data, split_dataset, GapReference, LinearTask, NodeDataset,
};
use crate::rng::{replication_seed, stream, StreamKind};
use crate::robust::{run_warmup, WarmupOutcome};
use crate::topology::{
    connectivity_constant, gen_erdos_renyi, largest_closed_scc, metropolis_weights, prune_digraph,
    prune_and_reweight, spectral_profile, MixingMatrix, SpectralProfile, UndirectedGraph,
};

/// Everything sampled before the first optimization round: topology, mixing
/// weights, datasets with splits, and the gap reference.
pub struct PreparedNetwork {
    pub graph: UndirectedGraph,
    pub weights: MixingMatrix,
    pub datasets: Vec<NodeDataset>,
    pub byz_ids: BTreeSet<usize>,
    pub graph_retries: usize,
    pub gap_ref: GapReference,
    pub task: LinearTask,
}

/// Draw the Byzantine set: `⌊rho·m⌋` distinct nodes.
pub fn select_byzantine(m: usize, rho: f64, seed: u64) -> BTreeSet<usize> {
    let count = (rho * m as f64).floor() as usize;
    let mut ids: Vec<usize> = (0..m).collect();
    let mut rng = stream(seed, StreamKind::ByzSelect, 0);
    use rand::seq::SliceRandom;
    ids.shuffle(&mut rng);
    ids.into_iter().take(count).collect()
}

/// Build the network and data. The communication graph must be connected
/// and its normal-node sub-graph connected; violations are resampled with
/// the next seed, up to twenty attempts.
pub fn prepare(cfg: &RunConfig) -> Result<PreparedNetwork> {
    cfg.validate()?;
    let m = cfg.topology.m;
    let byz_ids = select_byzantine(m, cfg.byzantine.rho, cfg.seed);
    let normal: Vec<usize> = (0..m).filter(|i| !byz_ids.contains(i)).collect();

    let mut graph = None;
    let mut retries = 0usize;
    for attempt in 0..20u64 {
        let candidate = gen_erdos_renyi(m, cfg.topology.p, cfg.seed.wrapping_add(attempt))?;
        if candidate.is_connected() && candidate.subgraph_connected(&normal) {
            graph = Some(candidate);
            retries = attempt as usize;
            break;
        }
    }
    let graph = graph.ok_or_else(|| {
        Error::Topology(
            "no connected graph with a connected normal sub-graph in 20 attempts; \
             raise p or lower rho"
                .into(),
        )
    })?;
    if retries > 0 {
        log::info!("resampled the topology {retries} time(s) to meet connectivity");
    }

    let task = LinearTask::new(cfg.task.d, cfg.task.noise_std)?;
    let mut datasets = generate_network_data(
        &task,
        m,
        cfg.task.n_per_node,
        &byz_ids,
        &cfg.byzantine.attack,
        cfg.seed,
    )?;
    for ds in datasets.iter_mut() {
        split_dataset(ds, cfg.detection.n, cfg.seed)?;
    }
    let gap_ref = gap_reference(&datasets)?;
    let weights = metropolis_weights(&graph);
    Ok(PreparedNetwork { graph, weights, datasets, byz_ids, graph_retries: retries, gap_ref, task })
}

/// Warm-up phase from the all-zeros initial point.
pub fn warmup_phase(cfg: &RunConfig, prep: &PreparedNetwork) -> Result<WarmupOutcome> {
    let init: Vec<Array1<f64>> =
        (0..cfg.topology.m).map(|_| Array1::zeros(cfg.task.d)).collect();
    run_warmup(
        &prep.graph,
        &prep.datasets,
        &init,
        &cfg.warmup.rule,
        &cfg.byzantine.attack,
        cfg.warmup.step_size(),
        cfg.warmup.k0,
        cfg.warmup.batch,
        cfg.seed,
    )
}

/// Screening phase on the warm-up output.
pub fn detection_phase(
    cfg: &RunConfig,
    prep: &PreparedNetwork,
    thetas: &[Array1<f64>],
) -> Result<DetectionReport> {
    detect(
        &prep.graph,
        &prep.datasets,
        thetas,
        &cfg.byzantine.attack,
        &cfg.detection_config(),
        &prep.byz_ids,
        cfg.seed,
    )
}

/// Result of one full pipeline run.
pub struct PipelineOutcome {
    pub config: RunConfig,
    pub byz_ids: BTreeSet<usize>,
    pub graph_retries: usize,
    pub warmup_trace: Vec<f64>,
    pub report: DetectionReport,
    pub scc: Vec<usize>,
    pub profile: SpectralProfile,
    pub t0: usize,
    pub metrics: RunMetrics,
    pub final_state: OptimizerState,
}

impl PipelineOutcome {
    pub fn final_gap(&self) -> f64 {
        self.metrics.final_row().map(|r| r.gap).unwrap_or(f64::NAN)
    }
}

/// Run the whole pipeline in phase order: warm-up, screening, pruning and
/// reweighting, spectral profile of the closed component, optimization.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineOutcome> {
    let prep = prepare(cfg)?;
    let warm = warmup_phase(cfg, &prep)?;
    let report = detection_phase(cfg, &prep, &warm.thetas)?;

    let removals = prune_decisions(
        &report,
        &prep.graph,
        &prep.byz_ids,
        cfg.byzantine.prune_policy,
    );
    let (digraph, pruned) = prune_and_reweight(&prep.weights, &prep.graph, &removals)?;
    let scc = largest_closed_scc(&digraph).ok_or_else(|| {
        Error::Optimization(
            "the pruned graph has no closed maximal component; review the detection output".into(),
        )
    })?;

    let block = pruned.restrict(&scc);
    let profile = spectral_profile(&block.view())?;
    let w_sup = diag_inverse_sup(&block, 200);
    let t0 = if cfg.optimization.t0_override > 0 {
        cfg.optimization.t0_override
    } else {
        default_t0(&profile, w_sup, scc.len())
    };

    let settings = OptimizationSettings {
        iterations: cfg.optimization.k_iters,
        batch: cfg.optimization.batch,
        eta: (cfg.optimization.eta_override > 0.0).then_some(cfg.optimization.eta_override),
        t0,
    };
    let (metrics, final_state) = run_optimization(
        &pruned,
        &scc,
        &profile,
        &prep.datasets,
        &warm.thetas,
        &cfg.byzantine.attack,
        &prep.byz_ids,
        &settings,
        &prep.gap_ref,
        cfg.seed,
    )?;

    Ok(PipelineOutcome {
        config: cfg.clone(),
        byz_ids: prep.byz_ids,
        graph_retries: prep.graph_retries,
        warmup_trace: warm.consensus_trace,
        report,
        scc,
        profile,
        t0,
        metrics,
        final_state,
    })
}

#[derive(Serialize)]
struct Manifest<'a> {
    version: &'static str,
    seed: u64,
    config: &'a RunConfig,
    graph_retries: usize,
    byzantine_nodes: Vec<usize>,
    scc: &'a [usize],
    t0: usize,
    rho_estimate: f64,
    averaged_fdp: f64,
    averaged_pa: f64,
    final_gap: f64,
    final_grad_norm_bar: f64,
    final_grad_norm_tilde: f64,
}

/// Write `detection.csv`, `metrics.csv`, `scc.txt`, and `run.json` into
/// `dir`. Deterministic byte-for-byte given the same outcome.
pub fn write_outputs(outcome: &PipelineOutcome, dir: &Path) -> Result<()> {
    csvio::write_file(&dir.join("detection.csv"), &csvio::detection_csv(&outcome.report))?;
    csvio::write_file(&dir.join("metrics.csv"), &csvio::metrics_csv(&outcome.metrics))?;
    let mut scc_text = String::new();
    for i in &outcome.scc {
        scc_text.push_str(&format!("{i}\n"));
    }
    csvio::write_file(&dir.join("scc.txt"), &scc_text)?;

    let last = outcome.metrics.final_row();
    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION"),
        seed: outcome.config.seed,
        config: &outcome.config,
        graph_retries: outcome.graph_retries,
        byzantine_nodes: outcome.byz_ids.iter().copied().collect(),
        scc: &outcome.scc,
        t0: outcome.t0,
        rho_estimate: outcome.profile.rho,
        averaged_fdp: outcome.report.averaged_fdp,
        averaged_pa: outcome.report.averaged_pa,
        final_gap: last.map(|r| r.gap).unwrap_or(f64::NAN),
        final_grad_norm_bar: last.map(|r| r.grad_norm_bar).unwrap_or(f64::NAN),
        final_grad_norm_tilde: last.map(|r| r.grad_norm_tilde).unwrap_or(f64::NAN),
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Io(std::io::Error::other(e)))?;
    csvio::write_file(&dir.join("run.json"), &json)?;
    Ok(())
}

/// Optional per-node dataset dump for reproducibility audits.
pub fn dump_datasets(datasets: &[NodeDataset], dir: &Path) -> Result<()> {
    for ds in datasets {
        let name = format!("node_{:04}.csv", ds.node_id);
        csvio::write_file(&dir.join(name), &csvio::dataset_csv(ds))?;
    }
    Ok(())
}

/// One sweep cell result.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub seed: u64,
    pub averaged_fdp: f64,
    pub averaged_pa: f64,
    pub final_gap: f64,
    pub final_grad_norm_bar: f64,
    pub final_grad_norm_tilde: f64,
}

#[derive(Debug, Default)]
pub struct SweepOutcome {
    pub rows: Vec<SweepRow>,
    /// `(value, replication, message)` for cells that failed; completed rows
    /// are always preserved.
    pub failures: Vec<(f64, usize, String)>,
}

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::SR => "s_r",
        SweepAxis::Rho => "rho",
        SweepAxis::Alpha => "alpha",
        SweepAxis::K => "k",
    }
}

/// One pipeline per (value, replication); replications get independent
/// derived seeds. Failed cells are recorded, not fatal.
pub fn sweep(cfg: &RunConfig, spec: &SweepSpec) -> Result<SweepOutcome> {
    spec.validate()?;
    let cells: Vec<(f64, usize)> = spec
        .values
        .iter()
        .flat_map(|&v| (0..spec.replications).map(move |r| (v, r)))
        .collect();
    let results: Vec<std::result::Result<SweepRow, (f64, usize, String)>> =
        exec::map_indexed(cells.len(), |idx| {
            let (value, rep) = cells[idx];
            let run = (|| -> Result<SweepRow> {
                let mut cell_cfg = apply_axis(cfg, spec.axis, value)?;
                cell_cfg.seed = replication_seed(cfg.seed, rep as u64);
                let outcome = run_pipeline(&cell_cfg)?;
                let last = outcome.metrics.final_row();
                Ok(SweepRow {
                    axis: axis_name(spec.axis).to_string(),
                    value,
                    seed: cell_cfg.seed,
                    averaged_fdp: outcome.report.averaged_fdp,
                    averaged_pa: outcome.report.averaged_pa,
                    final_gap: last.map(|r| r.gap).unwrap_or(f64::NAN),
                    final_grad_norm_bar: last.map(|r| r.grad_norm_bar).unwrap_or(f64::NAN),
                    final_grad_norm_tilde: last.map(|r| r.grad_norm_tilde).unwrap_or(f64::NAN),
                })
            })();
            run.map_err(|e| (value, rep, e.to_string()))
        });
    let mut outcome = SweepOutcome::default();
    for r in results {
        match r {
            Ok(row) => outcome.rows.push(row),
            Err(fail) => outcome.failures.push(fail),
        }
    }
    Ok(outcome)
}

/// Long-format sweep CSV.
pub fn sweep_csv(outcome: &SweepOutcome) -> String {
    let mut out = String::from(
        "axis,value,seed,avg_fdp,avg_pa,final_gap,final_grad_norm_bar,final_grad_norm_tilde\n",
    );
    for r in &outcome.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.axis,
            csvio::fmt_f64(r.value),
            r.seed,
            csvio::fmt_f64(r.averaged_fdp),
            csvio::fmt_f64(r.averaged_pa),
            csvio::fmt_f64(r.final_gap),
            csvio::fmt_f64(r.final_grad_norm_bar),
            csvio::fmt_f64(r.final_grad_norm_tilde),
        ));
    }
    out
}

/// In-arc removal behavior for the pure-graph connectivity study.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RemovalModel {
    /// No arcs removed.
    None,
    /// Every normal node drops all of its in-arcs.
    DropAllNormalInArcs,
    /// Every normal node drops exactly its true Byzantine in-arcs.
    ExactDetection,
}

impl std::str::FromStr for RemovalModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(RemovalModel::None),
            "drop-all" => Ok(RemovalModel::DropAllNormalInArcs),
            "exact" | "exact-detection" => Ok(RemovalModel::ExactDetection),
            other => Err(Error::Config(format!(
                "unknown removal model {other:?} (expected none, drop-all, or exact)"
            ))),
        }
    }
}

/// Connectivity study result: the Monte Carlo estimate next to the analytic
/// constants.
#[derive(Debug, Clone, Serialize)]
pub struct ConnectivityReport {
    pub trials: usize,
    pub successes: usize,
    pub probability: f64,
    /// `m·p − log m`.
    pub c_mp: f64,
    /// `m·p·(1 − rho − δ) − log m` at the reporting default `δ = 0.1`.
    pub c_mp_delta: f64,
}

/// Monte Carlo over fresh graph and Byzantine-set draws: the fraction of
/// trials in which the normal nodes form the closed maximal component of
/// the pruned graph.
pub fn connectivity_study(
    m: usize,
    p: f64,
    rho: f64,
    model: RemovalModel,
    trials: usize,
    seed: u64,
) -> Result<ConnectivityReport> {
    if trials == 0 {
        return Err(Error::Config("connectivity study needs at least one trial".into()));
    }
    if !(0.0..0.5).contains(&rho) {
        return Err(Error::Config(format!("byzantine fraction {rho} outside [0, 0.5)")));
    }
    let outcomes: Vec<Result<bool>> = exec::map_indexed(trials, |t| {
        let trial_seed = replication_seed(seed, t as u64);
        let graph = gen_erdos_renyi(m, p, trial_seed)?;
        let byz = select_byzantine(m, rho, trial_seed);
        let normal: Vec<usize> = (0..m).filter(|i| !byz.contains(i)).collect();
        let mut removals = vec![BTreeSet::new(); m];
        match model {
            RemovalModel::None => {}
            RemovalModel::DropAllNormalInArcs => {
                for &i in &normal {
                    removals[i] = graph.neighbors(i).into_iter().collect();
                }
            }
            RemovalModel::ExactDetection => {
                for &i in &normal {
                    removals[i] =
                        graph.neighbors(i).into_iter().filter(|j| byz.contains(j)).collect();
                }
            }
        }
        let pruned = prune_digraph(&graph, &removals)?;
        Ok(largest_closed_scc(&pruned).as_deref() == Some(normal.as_slice()))
    });
    let mut successes = 0usize;
    for o in outcomes {
        if o? {
            successes += 1;
        }
    }
    Ok(ConnectivityReport {
        trials,
        successes,
        probability: successes as f64 / trials as f64,
        c_mp: connectivity_constant(m as f64, p, 0.0, 0.0)?,
        c_mp_delta: connectivity_constant(m as f64, p, rho, 0.1)?,
    })
}

/// Connectivity under the pipeline's actual screening: each trial draws a
/// fresh network and data, runs warm-up plus detection, prunes, and checks
/// that the normal nodes form the closed maximal component.
pub fn connectivity_with_detection(
    cfg: &RunConfig,
    trials: usize,
) -> Result<ConnectivityReport> {
    if trials == 0 {
        return Err(Error::Config("connectivity study needs at least one trial".into()));
    }
    let outcomes: Vec<Result<bool>> = exec::map_indexed(trials, |t| {
        let mut trial_cfg = cfg.clone();
        trial_cfg.seed = replication_seed(cfg.seed, t as u64);
        let prep = prepare(&trial_cfg)?;
        let warm = warmup_phase(&trial_cfg, &prep)?;
        let report = detection_phase(&trial_cfg, &prep, &warm.thetas)?;
        let removals = prune_decisions(
            &report,
            &prep.graph,
            &prep.byz_ids,
            trial_cfg.byzantine.prune_policy,
        );
        let pruned = prune_digraph(&prep.graph, &removals)?;
        let normal: Vec<usize> =
            (0..trial_cfg.topology.m).filter(|i| !prep.byz_ids.contains(i)).collect();
        Ok(largest_closed_scc(&pruned).as_deref() == Some(normal.as_slice()))
    });
    let mut successes = 0usize;
    for o in outcomes {
        if o? {
            successes += 1;
        }
    }
    Ok(ConnectivityReport {
        trials,
        successes,
        probability: successes as f64 / trials as f64,
        c_mp: connectivity_constant(cfg.topology.m as f64, cfg.topology.p, 0.0, 0.0)?,
        c_mp_delta: connectivity_constant(
            cfg.topology.m as f64,
            cfg.topology.p,
            cfg.byzantine.rho,
            0.1,
        )?,
    })
}

/// Connectivity CSV (single row).
pub fn connectivity_csv(report: &ConnectivityReport) -> String {
    format!(
        "trials,successes,probability,c_mp,c_mp_delta\n{},{},{},{},{}\n",
        report.trials,
        report.successes,
        csvio::fmt_f64(report.probability),
        csvio::fmt_f64(report.c_mp),
        csvio::fmt_f64(report.c_mp_delta),
    )
}
