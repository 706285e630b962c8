//! Repeated-simulation evaluation: per setting, R independent
//! simulate → fit → estimate replicates scored against the Monte-Carlo
//! oracle for the same generating process.
//!
//! Aggregates in report.csv are recomputed from the persisted
//! replicates.csv rows, never from in-memory state, so the two files can
//! only disagree if the disk copy was edited.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use edpgp::config::RunConfig;
use edpgp::gcomp::summarize_nmb;
use edpgp::sampler::run_mcmc;
use edpgp::sim::{oracle_truth, simulate, DgpConfig, OracleTruth};
use edpgp::{Error, Result};

use crate::EvaluateArgs;

/// Builds the rayon pool, honoring EDPGP_WORKERS when set.
pub fn worker_pool() -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(raw) = std::env::var("EDPGP_WORKERS") {
        let workers: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&w| w > 0)
            .ok_or_else(|| {
                Error::config(format!("EDPGP_WORKERS must be a positive integer, got '{raw}'"))
            })?;
        builder = builder.num_threads(workers);
    }
    builder
        .build()
        .map_err(|e| Error::config(format!("cannot build worker pool: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Setting {
    name: &'static str,
    p_c: f64,
    p_delta: f64,
}

const SETTINGS: [Setting; 4] = [
    Setting { name: "parametric-low", p_c: 0.0, p_delta: 0.1 },
    Setting { name: "parametric-high", p_c: 0.0, p_delta: 0.4 },
    Setting { name: "bimodal-low", p_c: 0.5, p_delta: 0.1 },
    Setting { name: "bimodal-high", p_c: 0.5, p_delta: 0.4 },
];

fn parse_settings(raw: &str) -> Result<Vec<Setting>> {
    let mut out = Vec::new();
    for token in raw.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let s = SETTINGS
            .iter()
            .find(|s| s.name == token)
            .ok_or_else(|| {
                Error::config(format!(
                    "unknown setting '{token}' (expected one of {})",
                    SETTINGS.map(|s| s.name).join(", ")
                ))
            })?;
        if out.contains(s) {
            return Err(Error::config(format!("setting '{token}' listed twice")));
        }
        out.push(*s);
    }
    if out.is_empty() {
        return Err(Error::config("no settings requested"));
    }
    Ok(out)
}

struct RepOutcome {
    r: usize,
    sim_seed: u64,
    fit_seed: u64,
    /// Err carries a comma/newline-free failure description.
    result: std::result::Result<(f64, f64, f64), String>,
}

fn run_replicate(
    setting: Setting,
    r: usize,
    base_seed: u64,
    args: &EvaluateArgs,
    fit_template: &RunConfig,
) -> RepOutcome {
    let sim_seed = base_seed + 2 * r as u64;
    let fit_seed = base_seed + 2 * r as u64 + 1;
    let result = (|| -> Result<(f64, f64, f64)> {
        let sim_cfg = DgpConfig {
            n: args.n,
            p_c: setting.p_c,
            p_delta: setting.p_delta,
            kappa: args.kappa,
            seed: sim_seed,
        };
        let data = simulate(&sim_cfg)?.data;
        let cfg = RunConfig { seed: fit_seed, ..fit_template.clone() };
        let (_, records, _) = run_mcmc(&data, &cfg)?;
        let psis: Vec<f64> = records.iter().map(|rec| rec.psi_at(args.kappa)).collect();
        let s = summarize_nmb(&psis);
        Ok((s.mean, s.lo95, s.hi95))
    })();
    RepOutcome {
        r,
        sim_seed,
        fit_seed,
        result: result.map_err(|e| e.to_string().replace(['\n', ','], ";")),
    }
}

/// One parsed row of replicates.csv; the aggregation source of truth.
struct PersistedRep {
    setting: String,
    ok: bool,
    rel_bias: f64,
    covered: bool,
    width: f64,
}

fn parse_replicates(path: &Path) -> Result<Vec<PersistedRep>> {
    let loc = |line: usize| format!("{}:{line}", path.display());
    let reader = BufReader::new(File::open(path)?);
    let mut rows = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.starts_with('#') || line.starts_with("setting,") || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 14 {
            return Err(Error::parse(loc(idx + 1), format!("expected 14 fields, got {}", fields.len())));
        }
        let num = |j: usize, name: &str| -> Result<f64> {
            fields[j]
                .parse()
                .map_err(|_| Error::parse(loc(idx + 1), format!("bad {name} '{}'", fields[j])))
        };
        let ok = match fields[4] {
            "ok" => true,
            "fail" => false,
            other => return Err(Error::parse(loc(idx + 1), format!("bad status '{other}'"))),
        };
        rows.push(PersistedRep {
            setting: fields[0].to_string(),
            ok,
            rel_bias: if ok { num(9, "rel_bias")? } else { f64::NAN },
            covered: ok && fields[11] == "1",
            width: if ok { num(12, "width")? } else { f64::NAN },
        });
    }
    Ok(rows)
}

struct SettingAggregate {
    completed: usize,
    excluded: usize,
    mean_rel_bias: f64,
    mean_abs_rel_bias: f64,
    coverage: f64,
    mean_width: f64,
}

fn aggregate(rows: &[PersistedRep], name: &str) -> SettingAggregate {
    let ok: Vec<&PersistedRep> = rows.iter().filter(|r| r.setting == name && r.ok).collect();
    let excluded = rows.iter().filter(|r| r.setting == name && !r.ok).count();
    let m = ok.len() as f64;
    SettingAggregate {
        completed: ok.len(),
        excluded,
        mean_rel_bias: ok.iter().map(|r| r.rel_bias).sum::<f64>() / m,
        mean_abs_rel_bias: ok.iter().map(|r| r.rel_bias.abs()).sum::<f64>() / m,
        coverage: ok.iter().filter(|r| r.covered).count() as f64 / m,
        mean_width: ok.iter().map(|r| r.width).sum::<f64>() / m,
    }
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    if args.replicates < 2 {
        return Err(Error::config("evaluate needs at least 2 replicates"));
    }
    let settings = parse_settings(&args.settings)?;

    // The cost mean of the generating process has a free intercept, so the
    // fitted cost model must carry one too.
    let mut fit_template = RunConfig {
        iters: args.iters,
        burnin: args.burnin,
        thin: args.thin,
        seed: args.seed,
        kappa: args.kappa,
        add_intercept: true,
        ..RunConfig::default()
    };
    for pair in &args.set {
        let (key, value) = pair
            .split_once('=')
            .ok_or_else(|| Error::config(format!("--set expects KEY=VALUE, got '{pair}'")))?;
        fit_template.set(key.trim(), value.trim())?;
    }
    fit_template.validate()?;

    std::fs::create_dir_all(&args.out_dir)?;
    let pool = worker_pool()?;

    let rep_path = args.out_dir.join("replicates.csv");
    let mut rep_out = BufWriter::new(File::create(&rep_path)?);
    let echo: Vec<String> =
        fit_template.echo().iter().map(|(k, v)| format!("{k}={v}")).collect();
    writeln!(
        rep_out,
        "# replicates={} n={} kappa={} seed={} oracle_reps={}",
        args.replicates, args.n, args.kappa, args.seed, args.oracle_reps
    )?;
    writeln!(rep_out, "# fit config: {}", echo.join(" "))?;
    writeln!(
        rep_out,
        "setting,r,sim_seed,fit_seed,status,psi_true,psi_hat,lo95,hi95,rel_bias,abs_rel_bias,covered,width,error"
    )?;

    let mut oracles: Vec<OracleTruth> = Vec::with_capacity(settings.len());
    for (idx, setting) in settings.iter().enumerate() {
        let oracle_cfg = DgpConfig {
            n: args.n,
            p_c: setting.p_c,
            p_delta: setting.p_delta,
            kappa: args.kappa,
            seed: args.seed,
        };
        let oracle = oracle_truth(&oracle_cfg, args.oracle_reps)?;
        println!(
            "{}: oracle truth {:.6} (MC-SE {:.6}) from {} replications",
            setting.name, oracle.psi, oracle.psi_se, oracle.reps
        );

        let base_seed = args.seed + 1_000_000 * (idx as u64 + 1);
        let outcomes: Vec<RepOutcome> = pool.install(|| {
            use rayon::prelude::*;
            (0..args.replicates)
                .into_par_iter()
                .map(|r| run_replicate(*setting, r, base_seed, &args, &fit_template))
                .collect()
        });

        for o in &outcomes {
            match &o.result {
                Ok((psi_hat, lo, hi)) => {
                    let rel_bias = (psi_hat - oracle.psi) / oracle.psi.abs();
                    let covered = (*lo <= oracle.psi && oracle.psi <= *hi) as u8;
                    writeln!(
                        rep_out,
                        "{},{},{},{},ok,{},{psi_hat},{lo},{hi},{rel_bias},{},{covered},{},",
                        setting.name,
                        o.r,
                        o.sim_seed,
                        o.fit_seed,
                        oracle.psi,
                        rel_bias.abs(),
                        hi - lo
                    )?;
                }
                Err(msg) => {
                    writeln!(
                        rep_out,
                        "{},{},{},{},fail,{},,,,,,,,{msg}",
                        setting.name, o.r, o.sim_seed, o.fit_seed, oracle.psi
                    )?;
                }
            }
        }
        rep_out.flush()?;
        oracles.push(oracle);
    }
    drop(rep_out);

    // Aggregate strictly from the persisted rows.
    let rows = parse_replicates(&rep_path)?;
    let report_path = args.out_dir.join("report.csv");
    let mut report = BufWriter::new(File::create(&report_path)?);
    writeln!(report, "# aggregated from {}", rep_path.display())?;
    writeln!(
        report,
        "setting,p_c,p_delta,requested,completed,excluded,excluded_flag,psi_true,psi_true_se,mean_rel_bias,mean_abs_rel_bias,coverage,mean_width"
    )?;
    for (setting, oracle) in settings.iter().zip(&oracles) {
        let agg = aggregate(&rows, setting.name);
        if agg.completed == 0 {
            return Err(Error::numeric(
                "evaluate",
                format!("every replicate of {} failed", setting.name),
            ));
        }
        let flagged = agg.excluded as f64 > 0.05 * args.replicates as f64;
        writeln!(
            report,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            setting.name,
            setting.p_c,
            setting.p_delta,
            args.replicates,
            agg.completed,
            agg.excluded,
            u8::from(flagged),
            oracle.psi,
            oracle.psi_se,
            agg.mean_rel_bias,
            agg.mean_abs_rel_bias,
            agg.coverage,
            agg.mean_width
        )?;
        println!(
            "{}: {} of {} replicates completed{}; mean rel bias {:+.4}, mean |rel bias| {:.4}, coverage {:.3}, mean width {:.4}",
            setting.name,
            agg.completed,
            args.replicates,
            if flagged {
                format!(" ({} EXCLUDED, above the 5% flag line)", agg.excluded)
            } else if agg.excluded > 0 {
                format!(" ({} excluded)", agg.excluded)
            } else {
                String::new()
            },
            agg.mean_rel_bias,
            agg.mean_abs_rel_bias,
            agg.coverage,
            agg.mean_width
        );
    }
    report.flush()?;
    println!("wrote {} and {}", rep_path.display(), report_path.display());
    Ok(())
}
