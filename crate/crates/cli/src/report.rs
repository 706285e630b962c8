//! Artifact inspection (`summarize`) and tidy plot-data extraction
//! (`plot-data`). Both sniff/consume artifacts written by the sibling
//! subcommands; neither mutates anything.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use edpgp::draws::{read_all, DrawReader};
use edpgp::gcomp::{ite_summary, summarize_nmb};
use edpgp::hazard::prior_predictive_draws;
use edpgp::subgroups::{dsi, mode_partition, CoClusterAccum};
use edpgp::{load_dataset, CostModel, Error, Result};

use crate::{PlotDataArgs, SummarizeArgs};

fn first_data_line(path: &Path) -> Result<String> {
    let reader = BufReader::new(File::open(path)?);
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() && !line.starts_with('#') {
            return Ok(line);
        }
    }
    Err(Error::validation(format!("{} is empty", path.display())))
}

pub fn summarize(args: SummarizeArgs) -> Result<()> {
    let path = &args.input;
    let first = first_data_line(path)?;
    if first.trim_start().starts_with('{') {
        return summarize_store(path);
    }
    if first.starts_with("y,t,delta,a") {
        return summarize_dataset(path);
    }
    if first == "i,c,death,censor" {
        return summarize_truth(path);
    }
    if first.contains(',') {
        return summarize_csv(path);
    }
    Err(Error::validation(format!(
        "{}: unrecognized artifact (not a draw store, dataset, truth sidecar, or CSV)",
        path.display()
    )))
}

fn summarize_store(path: &Path) -> Result<()> {
    let mut reader = DrawReader::open(path)?;
    let header = reader.header().clone();
    let mut draws = 0usize;
    let mut iter_lo = usize::MAX;
    let mut iter_hi = 0usize;
    let mut psis = Vec::new();
    let mut last_clusters = 0usize;
    for record in &mut reader {
        let record = record?;
        draws += 1;
        iter_lo = iter_lo.min(record.iter);
        iter_hi = iter_hi.max(record.iter);
        psis.push(record.psi_at(header.kappa));
        let mut c: Vec<(usize, usize)> = record.assign.clone();
        c.sort_unstable();
        c.dedup();
        last_clusters = c.len();
    }
    println!("draw store: {}", path.display());
    println!(
        "  data: n={} covariates={} (intercept column {})",
        header.data.n(),
        header.data.q(),
        if header.add_intercept { "included" } else { "absent" }
    );
    println!(
        "  hazard grid: {} intervals to horizon {:.6}; b={} xi={}",
        header.grid.v(),
        header.grid.horizon(),
        header.b,
        header.xi
    );
    println!("  seed {}; cost model {:?}; kappa {}", header.seed, header.cost_model, header.kappa);
    let echo: Vec<String> = header.config.iter().map(|(k, v)| format!("{k}={v}")).collect();
    println!("  config: {}", echo.join(" "));
    if draws == 0 {
        println!("  no retained draws");
    } else {
        let s = summarize_nmb(&psis);
        println!(
            "  {draws} retained draws spanning iterations {iter_lo}..={iter_hi}; last draw has {last_clusters} clusters"
        );
        println!(
            "  net benefit at kappa={}: mean {:.4}, 95% interval [{:.4}, {:.4}]",
            header.kappa, s.mean, s.lo95, s.hi95
        );
    }
    Ok(())
}

fn summarize_dataset(path: &Path) -> Result<()> {
    let data = load_dataset(path, CostModel::Gaussian)?;
    let n = data.n() as f64;
    let events = data.subjects().iter().filter(|s| s.delta == 1).count();
    let treated = data.subjects().iter().filter(|s| s.a == 1).count();
    let t_max = data.subjects().iter().map(|s| s.t).fold(f64::NEG_INFINITY, f64::max);
    let y_mean = data.subjects().iter().map(|s| s.y).sum::<f64>() / n;
    println!("dataset: {}", path.display());
    println!("  n={} covariates={}", data.n(), data.q());
    println!(
        "  treated {} ({:.1}%), events {} ({:.1}%), censored {} ({:.1}%)",
        treated,
        100.0 * treated as f64 / n,
        events,
        100.0 * events as f64 / n,
        data.n() - events,
        100.0 * (data.n() - events) as f64 / n
    );
    println!("  max follow-up {t_max:.6}; mean cost {y_mean:.4}");
    Ok(())
}

fn summarize_truth(path: &Path) -> Result<()> {
    let truth = edpgp::sim::load_truth(path)?;
    let n = truth.len() as f64;
    let class1 = truth.iter().filter(|r| r.c == 1).count();
    let censored = truth.iter().filter(|r| r.censor < r.death).count();
    println!("latent-truth sidecar: {}", path.display());
    println!("  n={} latent class 1: {} ({:.1}%)", truth.len(), class1, 100.0 * class1 as f64 / n);
    println!(
        "  censor-before-death {} ({:.1}%) before thinning",
        censored,
        100.0 * censored as f64 / n
    );
    Ok(())
}

fn summarize_csv(path: &Path) -> Result<()> {
    let reader = BufReader::new(File::open(path)?);
    let mut comments = Vec::new();
    let mut header: Option<Vec<String>> = None;
    let mut rows = 0usize;
    // Per-column running (count, sum, min, max) over parsable numeric cells.
    let mut stats: Vec<(usize, f64, f64, f64)> = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.starts_with('#') {
            comments.push(line);
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        match &header {
            None => {
                header = Some(fields.iter().map(|s| s.to_string()).collect());
                stats = vec![(0, 0.0, f64::INFINITY, f64::NEG_INFINITY); fields.len()];
            }
            Some(_) => {
                rows += 1;
                for (j, f) in fields.iter().enumerate().take(stats.len()) {
                    if let Ok(v) = f.parse::<f64>() {
                        let s = &mut stats[j];
                        s.0 += 1;
                        s.1 += v;
                        s.2 = s.2.min(v);
                        s.3 = s.3.max(v);
                    }
                }
            }
        }
    }
    let header = header.ok_or_else(|| Error::validation(format!("{} has no header row", path.display())))?;
    println!("csv table: {}", path.display());
    for c in &comments {
        println!("  {c}");
    }
    println!("  {} columns, {rows} rows", header.len());
    for (name, (count, sum, min, max)) in header.iter().zip(&stats) {
        if *count > 0 {
            println!(
                "  {name}: {count} numeric values, mean {:.6}, range [{:.6}, {:.6}]",
                sum / *count as f64,
                min,
                max
            );
        } else {
            println!("  {name}: non-numeric");
        }
    }
    Ok(())
}

fn out_writer(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn plot_data(args: PlotDataArgs) -> Result<()> {
    match args.kind.as_str() {
        "dsi" => plot_dsi(&args),
        "prior-hazard" => plot_prior_hazard(&args),
        "ite" => plot_ite(&args),
        "predictive" => plot_predictive(&args),
        other => Err(Error::config(format!(
            "unknown plot kind '{other}' (expected dsi, prior-hazard, ite, or predictive)"
        ))),
    }
}

fn plot_dsi(args: &PlotDataArgs) -> Result<()> {
    let (header, records) = read_all(&args.draws)?;
    if records.is_empty() {
        return Err(Error::validation("draw store holds no draws"));
    }
    let kappa = args.kappa.unwrap_or(header.kappa);
    let assigns: Vec<Vec<(usize, usize)>> = records.iter().map(|r| r.assign.clone()).collect();
    let psi_i: Vec<Vec<f64>> = records.iter().map(|r| r.psi_i_at(kappa)).collect();
    let psis: Vec<f64> = records.iter().map(|r| r.psi_at(kappa)).collect();
    let het = dsi(&psi_i, &assigns, &psis);
    let mut out = out_writer(&args.out)?;
    writeln!(out, "# heterogeneity index per draw at kappa={kappa}; one histogram-ready column")?;
    writeln!(out, "# draws={} undefined_skipped={}", records.len(), het.missing)?;
    writeln!(out, "dsi")?;
    for d in &het.per_draw {
        if let Some(v) = d.dsi {
            writeln!(out, "{v}")?;
        }
    }
    out.flush()?;
    println!(
        "wrote {} index values ({} undefined draws skipped) to {}",
        records.len() - het.missing,
        het.missing,
        args.out.display()
    );
    Ok(())
}

fn plot_prior_hazard(args: &PlotDataArgs) -> Result<()> {
    if args.paths == 0 {
        return Err(Error::config("paths must be at least 1"));
    }
    let reader = DrawReader::open(&args.draws)?;
    let header = reader.header().clone();
    // Offset keeps these diagnostics draws off the sampler's own stream.
    let seed = args.seed.unwrap_or(header.seed ^ 0x70a7_85e6);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let paths = prior_predictive_draws(&header.lambda_star, header.b, header.xi, args.paths, &mut rng)?;
    let mut out = out_writer(&args.out)?;
    writeln!(
        out,
        "# {} forward-simulated prior baseline-hazard paths on the fitted grid (seed {seed})",
        args.paths
    )?;
    writeln!(out, "# two rows per interval bound the step: (lower, lambda) then (upper, lambda)")?;
    writeln!(out, "path,t,lambda")?;
    for (p, path) in paths.iter().enumerate() {
        for (v, lam) in path.iter().enumerate() {
            writeln!(out, "{p},{},{lam}", header.grid.lower(v))?;
            writeln!(out, "{p},{},{lam}", header.grid.upper(v))?;
        }
    }
    out.flush()?;
    println!(
        "wrote {} prior hazard paths over {} intervals to {}",
        args.paths,
        header.grid.v(),
        args.out.display()
    );
    Ok(())
}

fn plot_ite(args: &PlotDataArgs) -> Result<()> {
    let (header, records) = read_all(&args.draws)?;
    if records.is_empty() {
        return Err(Error::validation("draw store holds no draws"));
    }
    let kappa = args.kappa.unwrap_or(header.kappa);
    let psi_i: Vec<Vec<f64>> = records.iter().map(|r| r.psi_i_at(kappa)).collect();
    let summaries = ite_summary(&psi_i);

    let n = header.data.n();
    let mut accum = CoClusterAccum::new(n);
    for r in &records {
        accum.add_draw(&r.assign);
    }
    let p = accum.finish();
    let assigns: Vec<Vec<(usize, usize)>> = records.iter().map(|r| r.assign.clone()).collect();
    let mode = &records[mode_partition(&assigns, &p)].assign;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| summaries[a].mean.partial_cmp(&summaries[b].mean).expect("finite means"));
    let mut out = out_writer(&args.out)?;
    writeln!(out, "# per-subject treatment effects at kappa={kappa}, sorted by posterior mean")?;
    writeln!(out, "# cluster columns (j,k) come from the representative partition")?;
    writeln!(out, "rank,i,mean,lo95,hi95,j,k")?;
    for (rank, &i) in order.iter().enumerate() {
        let s = &summaries[i];
        writeln!(out, "{rank},{i},{},{},{},{},{}", s.mean, s.lo95, s.hi95, mode[i].0, mode[i].1)?;
    }
    out.flush()?;
    println!("wrote {} subject-effect rows to {}", n, args.out.display());
    Ok(())
}

fn plot_predictive(args: &PlotDataArgs) -> Result<()> {
    let (header, records) = read_all(&args.draws)?;
    if records.is_empty() {
        return Err(Error::validation("draw store holds no draws"));
    }
    let seed = args.seed.unwrap_or(header.seed ^ 0x9e37_79b9);
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let q = header.data.q();
    let mut out = out_writer(&args.out)?;
    writeln!(
        out,
        "# posterior predictive survival times: one draw per (retained iteration, subject), observed arm (seed {seed})"
    )?;
    writeln!(out, "# covariates are fitting-scale; event=0 marks survival past the grid horizon")?;
    write!(out, "m,i,a")?;
    for j in 1..=q {
        write!(out, ",l{j}")?;
    }
    writeln!(out, ",t,event")?;
    let horizon = header.grid.horizon();
    let mut rows = 0usize;
    for (m, record) in records.iter().enumerate() {
        let curve = record.curve(&header.grid);
        for (i, s) in header.data.subjects().iter().enumerate() {
            let eta = record.surv_params_of(i).eta(s.a, &s.l);
            let (t, event) = match curve.sample_time(eta, &mut rng) {
                Some(t) => (t, 1),
                None => (horizon, 0),
            };
            write!(out, "{m},{i},{}", s.a)?;
            for v in &s.l {
                write!(out, ",{v}")?;
            }
            writeln!(out, ",{t},{event}")?;
            rows += 1;
        }
    }
    out.flush()?;
    println!("wrote {rows} predictive rows to {}", args.out.display());
    Ok(())
}
