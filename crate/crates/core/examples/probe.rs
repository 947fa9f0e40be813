// Scratch probe (deleted before delivery): inspect score distributions.
use byzsim::config::RunConfig;
use byzsim::harness::{prepare, warmup_phase, detection_phase};
use byzsim::problem::AttackSpec;
use byzsim::robust::normal_consensus_error;

fn main() {
    let mut cfg = RunConfig::desk_default();
    cfg.seed = 0;
    cfg.byzantine.attack = AttackSpec::Param { mu_c: 5.0, s_r: 0.5 };
    let prep = prepare(&cfg).unwrap();
    let warm = warmup_phase(&cfg, &prep).unwrap();
    println!("consensus err (normals) final: {:.5e}", normal_consensus_error(&warm.thetas, &prep.byz_ids));
    // distance of each theta from normal mean
    let normals: Vec<usize> = (0..50).filter(|i| !prep.byz_ids.contains(i)).collect();
    let d = 30;
    let mut mean = ndarray::Array1::<f64>::zeros(d);
    for &i in &normals { mean = mean + &warm.thetas[i]; }
    mean.mapv_inplace(|x| x / normals.len() as f64);
    let mut devs: Vec<f64> = normals.iter().map(|&i| { let df = &warm.thetas[i] - &mean; df.dot(&df).sqrt() }).collect();
    devs.sort_by(|a,b| a.partial_cmp(b).unwrap());
    println!("normal |theta - mean|: min={:.4} med={:.4} max={:.4}", devs[0], devs[devs.len()/2], devs[devs.len()-1]);
    let err_star = { let df = &mean - &prep.task.theta_star; df.dot(&df).sqrt() };
    println!("|thetabar - theta*| = {err_star:.4}");
    for &b in prep.byz_ids.iter().take(3) {
        let df = &warm.thetas[b] - &mean;
        println!("byz {b}: |theta_b - mean| = {:.3}", df.dot(&df).sqrt());
    }

    let report = detection_phase(&cfg, &prep, &warm.thetas).unwrap();
    // node 0 (or first normal) score breakdown
    let node = report.per_node[0].node;
    let mut nulls = Vec::new();
    let mut byzs = Vec::new();
    for r in &report.rows {
        if r.node == node {
            if r.truth_byzantine { byzs.push(r.score) } else { nulls.push(r.score) }
        }
    }
    nulls.sort_by(|a,b| a.partial_cmp(b).unwrap());
    println!("node {node}: R = {:.4}", report.per_node[0].threshold);
    println!("  null scores: {:?}", nulls.iter().map(|s| (s*1000.0).round()/1000.0).collect::<Vec<_>>());
    println!("  byz scores:  {:?}", byzs.iter().map(|s| (s*100.0).round()/100.0).collect::<Vec<_>>());
    println!("run: avgFDP={:.3} avgPa={:.3}", report.averaged_fdp, report.averaged_pa);
}
