//! The single-artifact subcommands: simulate, fit, estimate, subgroups.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use edpgp::config::RunConfig;
use edpgp::diag::quantile_type7;
use edpgp::draws::{read_all, DrawRecord, DrawWriter, StoreHeader};
use edpgp::gcomp::{ceac, icer, ite_summary, summarize_nmb};
use edpgp::sampler::{run_mcmc, SamplerReport};
use edpgp::sim::{save_truth, simulate as run_simulation, DgpConfig};
use edpgp::subgroups::{
    dsi, export_graph, mode_partition, CoClusterAccum, CoClusterMatrix,
};
use edpgp::{Error, Result};

use crate::{EstimateArgs, FitArgs, SimulateArgs, SubgroupsArgs};

pub fn simulate(args: SimulateArgs) -> Result<()> {
    let cfg = DgpConfig {
        n: args.n,
        p_c: args.pc,
        p_delta: args.pdelta,
        kappa: args.kappa,
        seed: args.seed,
    };
    let out = run_simulation(&cfg)?;
    let comments = vec![format!(
        "simulated: n={} p_c={} p_delta={} kappa={} seed={}",
        args.n, args.pc, args.pdelta, args.kappa, args.seed
    )];
    edpgp::save_dataset(&args.out, &out.data, &comments)?;
    let truth_path = args
        .truth_out
        .unwrap_or_else(|| sibling_with_suffix(&args.out, ".truth.csv"));
    save_truth(&truth_path, &out.truth)?;
    let censored =
        out.data.subjects().iter().filter(|s| s.delta == 0).count() as f64 / out.data.n() as f64;
    println!(
        "wrote {} subjects to {} (censored fraction {:.3}); latent truth in {}",
        out.data.n(),
        args.out.display(),
        censored,
        truth_path.display()
    );
    Ok(())
}

fn sibling_with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}{suffix}"))
}

/// Config resolution order: file, then --set pairs in order, then the
/// dedicated override flags.
fn resolve_config(
    config: &Option<PathBuf>,
    set: &[String],
    seed: Option<u64>,
    iters: Option<usize>,
    burnin: Option<usize>,
    thin: Option<usize>,
) -> Result<RunConfig> {
    let mut cfg = match config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    for pair in set {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got '{pair}'")))?;
        cfg.set(key.trim(), value.trim())?;
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(iters) = iters {
        cfg.iters = iters;
    }
    if let Some(burnin) = burnin {
        cfg.burnin = burnin;
    }
    if let Some(thin) = thin {
        cfg.thin = thin;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_rate(rate: Option<f64>) -> String {
    match rate {
        Some(r) => format!("{r:.3}"),
        None => "-".to_string(),
    }
}

pub fn fit(args: FitArgs) -> Result<()> {
    if args.chains == 0 {
        return Err(Error::config("chains must be at least 1"));
    }
    let cfg = resolve_config(&args.config, &args.set, args.seed, args.iters, args.burnin, args.thin)?;
    let data = edpgp::load_dataset(&args.data, cfg.cost_model)?;

    // Chain c runs with seed + c; chain 0's header describes the store.
    let chain_cfgs: Vec<RunConfig> = (0..args.chains)
        .map(|c| RunConfig { seed: cfg.seed.wrapping_add(c as u64), ..cfg.clone() })
        .collect();
    let results: Vec<Result<(StoreHeader, Vec<DrawRecord>, SamplerReport)>> = if args.chains == 1 {
        vec![run_mcmc(&data, &chain_cfgs[0])]
    } else {
        crate::eval::worker_pool()?
            .install(|| {
                use rayon::prelude::*;
                chain_cfgs.par_iter().map(|c| run_mcmc(&data, c)).collect()
            })
    };
    let mut chains = Vec::with_capacity(results.len());
    for r in results {
        chains.push(r?);
    }

    let mut header = chains[0].0.clone();
    header.seed = cfg.seed;
    let mut writer = DrawWriter::create(&args.out, &header)?;
    for (_, records, _) in &chains {
        for record in records {
            writer.write_draw(record)?;
        }
    }
    let total = writer.draws_written();
    writer.finish()?;

    for (c, (_, _, report)) in chains.iter().enumerate() {
        let theta: Vec<String> = report.theta_accept.iter().copied().map(fmt_rate).collect();
        let hazard: Vec<String> = report.hazard_c_accept.iter().copied().map(fmt_rate).collect();
        println!(
            "chain {c}: retained {} of {} iterations; clusters {}; accept theta [{}] hazard [{}] alpha {}{}",
            report.retained,
            report.iters,
            report.final_clusters,
            theta.join(", "),
            hazard.join(", "),
            fmt_rate(report.alpha_theta_accept),
            if report.ols_fallback { "; note: OLS centering fell back to null" } else { "" }
        );
    }
    println!("wrote {total} draws to {}", args.out.display());
    Ok(())
}

fn provenance(header: &StoreHeader, kappa: f64, draws: usize) -> Vec<String> {
    let echo: Vec<String> =
        header.config.iter().map(|(k, v)| format!("{k}={v}")).collect();
    vec![
        format!("kappa={kappa} draws={draws} n={} seed={}", header.data.n(), header.seed),
        format!("fit config: {}", echo.join(" ")),
    ]
}

fn create_csv(dir: &Path, name: &str, comments: &[String], header: &str) -> Result<BufWriter<File>> {
    let mut out = BufWriter::new(File::create(dir.join(name))?);
    for c in comments {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "{header}")?;
    Ok(out)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn estimate(args: EstimateArgs) -> Result<()> {
    let (header, records) = read_all(&args.draws)?;
    if records.is_empty() {
        return Err(Error::validation("draw store holds no draws"));
    }
    let kappa = args.kappa.unwrap_or(header.kappa);
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(Error::validation(format!("kappa must be finite and nonnegative, got {kappa}")));
    }
    std::fs::create_dir_all(&args.out_dir)?;
    let note = provenance(&header, kappa, records.len());
    let dir = &args.out_dir;

    // Per-draw net benefit at the requested willingness-to-pay.
    let psis: Vec<f64> = records.iter().map(|r| r.psi_at(kappa)).collect();
    let mut out = create_csv(dir, "nmb_draws.csv", &note, "m,iter,psi")?;
    for (m, (r, psi)) in records.iter().zip(&psis).enumerate() {
        writeln!(out, "{m},{},{psi}", r.iter)?;
    }
    out.flush()?;

    let nmb = summarize_nmb(&psis);
    let mut out = create_csv(dir, "nmb.csv", &note, "kappa,mean,lo95,hi95")?;
    writeln!(out, "{kappa},{},{},{}", nmb.mean, nmb.lo95, nmb.hi95)?;
    out.flush()?;

    let contrasts: Vec<(f64, f64)> = records.iter().map(|r| r.contrast()).collect();
    let curve = ceac(&contrasts, &header.kappa_grid);
    let mut out = create_csv(dir, "ceac.csv", &note, "kappa,prob")?;
    for (k, p) in curve.kappa.iter().zip(&curve.prob) {
        writeln!(out, "{k},{p}")?;
    }
    out.flush()?;

    let ratio = icer(&contrasts);
    let mut out = create_csv(dir, "icer_draws.csv", &note, "m,iter,icer")?;
    for (m, (r, v)) in records.iter().zip(&ratio.per_draw).enumerate() {
        writeln!(out, "{m},{},{}", r.iter, fmt_opt(*v))?;
    }
    out.flush()?;
    let mut out = create_csv(dir, "icer.csv", &note, "flagged,total,mean,lo95,hi95")?;
    let (mean, lo, hi) = match &ratio.summary {
        Some(s) => (Some(s.mean), Some(s.lo95), Some(s.hi95)),
        None => (None, None, None),
    };
    writeln!(
        out,
        "{},{},{},{},{}",
        ratio.flagged,
        records.len(),
        fmt_opt(mean),
        fmt_opt(lo),
        fmt_opt(hi)
    )?;
    out.flush()?;

    let psi_i: Vec<Vec<f64>> = records.iter().map(|r| r.psi_i_at(kappa)).collect();
    let ites = ite_summary(&psi_i);
    let mut out = create_csv(dir, "ite.csv", &note, "i,mean,lo95,hi95")?;
    for (i, s) in ites.iter().enumerate() {
        writeln!(out, "{i},{},{},{}", s.mean, s.lo95, s.hi95)?;
    }
    out.flush()?;

    // Pointwise posterior of the baseline hazard level per interval.
    let mut out = create_csv(
        dir,
        "hazard_summary.csv",
        &note,
        "v,tau_lo,tau_hi,lambda_mean,lambda_lo95,lambda_hi95",
    )?;
    for v in 0..header.grid.v() {
        let level: Vec<f64> = records.iter().map(|r| r.lambda[v]).collect();
        let mean = level.iter().sum::<f64>() / level.len() as f64;
        let mut sorted = level;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        writeln!(
            out,
            "{v},{},{},{mean},{},{}",
            header.grid.lower(v),
            header.grid.upper(v),
            quantile_type7(&sorted, 0.025),
            quantile_type7(&sorted, 0.975)
        )?;
    }
    out.flush()?;

    println!(
        "estimates for {} draws at kappa={kappa}: mean net benefit {:.4} [{:.4}, {:.4}]; {} of {} ICER draws flagged; wrote 7 files to {}",
        records.len(),
        nmb.mean,
        nmb.lo95,
        nmb.hi95,
        ratio.flagged,
        records.len(),
        dir.display()
    );
    Ok(())
}

fn write_lower_triangle(dir: &Path, name: &str, note: &[String], p: &CoClusterMatrix) -> Result<()> {
    let mut out = BufWriter::new(File::create(dir.join(name))?);
    for c in note {
        writeln!(out, "# {c}")?;
    }
    writeln!(out, "# dense lower triangle: row i holds P(i,0..=i)")?;
    for i in 0..p.n() {
        let row: Vec<String> = (0..=i).map(|j| p.get(i, j).to_string()).collect();
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()?;
    Ok(())
}

pub fn subgroups(args: SubgroupsArgs) -> Result<()> {
    let (header, records) = read_all(&args.draws)?;
    if records.is_empty() {
        return Err(Error::validation("draw store holds no draws"));
    }
    let kappa = args.kappa.unwrap_or(header.kappa);
    std::fs::create_dir_all(&args.out_dir)?;
    let dir = &args.out_dir;
    let note = provenance(&header, kappa, records.len());
    let n = header.data.n();

    let mut joint = CoClusterAccum::new(n);
    let mut outer = CoClusterAccum::new_outer(n);
    for r in &records {
        joint.add_draw(&r.assign);
        outer.add_draw(&r.assign);
    }
    let p = joint.finish();
    let p_outer = outer.finish();
    write_lower_triangle(dir, "coclust.csv", &note, &p)?;
    write_lower_triangle(dir, "coclust_outer.csv", &note, &p_outer)?;

    let assigns: Vec<Vec<(usize, usize)>> = records.iter().map(|r| r.assign.clone()).collect();
    let mode = mode_partition(&assigns, &p);
    let mode_assign = &assigns[mode];
    let mut out = create_csv(dir, "mode_partition.csv", &note, "i,j,k")?;
    for (i, (j, k)) in mode_assign.iter().enumerate() {
        writeln!(out, "{i},{j},{k}")?;
    }
    out.flush()?;

    let psi_i: Vec<Vec<f64>> = records.iter().map(|r| r.psi_i_at(kappa)).collect();
    let psis: Vec<f64> = records.iter().map(|r| r.psi_at(kappa)).collect();
    let het = dsi(&psi_i, &assigns, &psis);
    let mut dsi_note = note.clone();
    dsi_note.push(format!("draws with undefined index: {}", het.missing));
    let mut out = create_csv(dir, "dsi_draws.csv", &dsi_note, "m,dsi,dsi_weighted_center")?;
    for (m, d) in het.per_draw.iter().enumerate() {
        writeln!(out, "{m},{},{}", fmt_opt(d.dsi), fmt_opt(d.dsi_weighted_center))?;
    }
    out.flush()?;

    let psi_mean: Vec<f64> = (0..n)
        .map(|i| psi_i.iter().map(|row| row[i]).sum::<f64>() / psi_i.len() as f64)
        .collect();
    let (nodes, edges) = export_graph(&p, args.threshold, mode_assign, &psi_mean)?;
    let mut out = create_csv(dir, "graph_nodes.csv", &note, "i,j,k,psi_mean")?;
    for node in &nodes {
        writeln!(out, "{},{},{},{}", node.id, node.cluster.0, node.cluster.1, node.psi_mean)?;
    }
    out.flush()?;
    let mut out = create_csv(dir, "graph_edges.csv", &note, "i,j,p")?;
    for e in &edges {
        writeln!(out, "{},{},{}", e.i, e.j, e.weight)?;
    }
    out.flush()?;

    // Covariate profile of the representative partition's clusters.
    let mut clusters: Vec<(usize, usize)> = mode_assign.to_vec();
    clusters.sort_unstable();
    clusters.dedup();
    let q = header.data.q();
    let l_cols = (1..=q).map(|j| format!(",l{j}_mean")).collect::<String>();
    let mut out = create_csv(
        dir,
        "cluster_profile.csv",
        &note,
        &format!("j,k,size,a_mean{l_cols},psi_mean"),
    )?;
    for &(j, k) in &clusters {
        let members: Vec<usize> =
            (0..n).filter(|&i| mode_assign[i] == (j, k)).collect();
        let m = members.len() as f64;
        let a_mean =
            members.iter().map(|&i| f64::from(header.data.subject(i).a)).sum::<f64>() / m;
        let l_means: Vec<String> = (0..q)
            .map(|c| {
                (members.iter().map(|&i| header.data.subject(i).l[c]).sum::<f64>() / m)
                    .to_string()
            })
            .collect();
        let psi_c = members.iter().map(|&i| psi_mean[i]).sum::<f64>() / m;
        let l_part = if q == 0 { String::new() } else { format!(",{}", l_means.join(",")) };
        writeln!(out, "{j},{k},{},{a_mean}{l_part},{psi_c}", members.len())?;
    }
    out.flush()?;

    let dsi_mean = {
        let defined: Vec<f64> = het.per_draw.iter().filter_map(|d| d.dsi).collect();
        if defined.is_empty() {
            f64::NAN
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        }
    };
    println!(
        "subgroups over {} draws: representative draw {mode} with {} clusters, mean DSI {:.3} ({} undefined), {} graph edges above {}; wrote 8 files to {}",
        records.len(),
        clusters.len(),
        dsi_mean,
        het.missing,
        edges.len(),
        args.threshold,
        dir.display()
    );
    Ok(())
}
