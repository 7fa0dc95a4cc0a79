//! Subcommand implementations: seeded replicate orchestration, output-file
//! layout, and the run manifest.
//!
//! Replicate `i` always uses `derive_seed(base_seed, i)`; auxiliary
//! simulations inside a check (SDE ensembles, coalescent chains) use
//! distinct derived bases. Worker threads only compute: all files are
//! written by the calling thread in replicate order, so parallel and
//! serial execution of the same manifest produce identical bytes.

use std::fmt::Write as _;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::coalescent::{duality_gap, simulate_block_counts, DualityReport, LambdaMeasure};
use crate::config::RunConfig;
use crate::moran::{run_trajectory, MoranError, MoranTrajectory, RunOptions};
use crate::params::{check_assumptions, derive_scalings, DerivedScalings, ModelParams};
use crate::sde::{marginal_ensemble, simulate_sde, SdeConfig};
use crate::seed::{derive_seed, splitmix64};
use crate::stats::{
    family_size_tail_check, martingale_diagnostic, moran_vs_sde_trend, tau_spacing_check,
    ComparisonReport, TrendEnsemble,
};

/// Environment variable naming the default output root.
pub const OUT_ROOT_ENV: &str = "WAVEFRONT_SIM_OUT";

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Moran(#[from] MoranError),
    #[error(transparent)]
    Params(#[from] crate::params::ParamsError),
    #[error(transparent)]
    Sde(#[from] crate::sde::SdeError),
    #[error(transparent)]
    Coalescent(#[from] crate::coalescent::CoalescentError),
    #[error(transparent)]
    Stats(#[from] crate::stats::StatsError),
    #[error("unknown check name {0:?}")]
    UnknownCheck(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Written once per run directory; enough to replay the exact command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: RunConfig,
    pub extra_args: Value,
    pub base_seed: u64,
    pub replicates: u64,
    pub threads: usize,
    pub out_dir: String,
    pub tool_version: String,
    pub wall_clock_secs: f64,
}

pub fn effective_threads(requested: usize) -> usize {
    if requested > 0 {
        requested
    } else {
        std::thread::available_parallelism()
            .unwrap_or(NonZeroUsize::new(1).unwrap())
            .get()
    }
}

/// Run `f(0..total)` over a fixed-size worker pool; results come back in
/// index order regardless of scheduling.
pub fn run_indexed<T, E, F>(total: u64, threads: usize, f: F) -> Result<Vec<T>, E>
where
    T: Send,
    E: Send,
    F: Fn(u64) -> Result<T, E> + Sync,
{
    let threads = effective_threads(threads).min(total.max(1) as usize);
    let next = AtomicU64::new(0);
    let slots: Vec<Mutex<Option<Result<T, E>>>> =
        (0..total).map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= total {
                    break;
                }
                let out = f(i);
                *slots[i as usize].lock().unwrap() = Some(out);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().unwrap().expect("worker filled slot"))
        .collect()
}

/// Engine options for a resolved config: the early-window constants come
/// from the config when given, otherwise from the horizon-derived default.
pub fn run_options(cfg: &RunConfig, scalings: &DerivedScalings) -> RunOptions {
    let mut opts = RunOptions::for_model(&cfg.params, scalings);
    opts.early_c1 = cfg.early_c1;
    if let Some(c2) = cfg.early_c2 {
        opts.early_c2 = c2;
    }
    opts
}

/// Run a replicate ensemble of trajectories.
pub fn moran_ensemble(
    params: &ModelParams,
    scalings: &DerivedScalings,
    opts: &RunOptions,
    base_seed: u64,
    replicates: u64,
    threads: usize,
) -> Result<Vec<MoranTrajectory>, MoranError> {
    run_indexed(replicates, threads, |i| {
        run_trajectory(params, scalings, opts, derive_seed(base_seed, i))
    })
}

/// Resolve the output root: explicit flag, then the environment variable,
/// then `./runs`.
pub fn out_root(flag: Option<&Path>) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Ok(env) = std::env::var(OUT_ROOT_ENV) {
        if !env.is_empty() {
            return PathBuf::from(env);
        }
    }
    PathBuf::from("runs")
}

/// Create `<root>/run-<timestamp>-<seedhash>`, suffixing on collision.
pub fn make_run_dir(root: &Path, seed: u64) -> std::io::Result<PathBuf> {
    let secs = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let hash = splitmix64(seed) >> 32;
    std::fs::create_dir_all(root)?;
    for attempt in 0u32.. {
        let name = if attempt == 0 {
            format!("run-{secs}-{hash:08x}")
        } else {
            format!("run-{secs}-{hash:08x}-{attempt}")
        };
        let dir = root.join(name);
        match std::fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(e),
        }
    }
    unreachable!()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Combined registry CSV across replicates.
pub fn registry_csv(trajectories: &[MoranTrajectory]) -> String {
    let mut out = String::from("replicate,j,tau_j,q_j,m_at_tau,s_j,y_obs_j\n");
    for (i, traj) in trajectories.iter().enumerate() {
        for r in traj.registry.records() {
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{},{}",
                r.j,
                r.tau,
                r.q,
                r.m_at_tau,
                fmt_opt(r.s_family),
                fmt_opt(r.y_obs),
            );
        }
    }
    out
}

/// Single-trajectory registry CSV.
pub fn single_registry_csv(traj: &MoranTrajectory) -> String {
    let mut out = String::from("j,tau_j,q_j,m_at_tau,s_j,y_obs_j\n");
    for r in traj.registry.records() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.j,
            r.tau,
            r.q,
            r.m_at_tau,
            fmt_opt(r.s_family),
            fmt_opt(r.y_obs),
        );
    }
    out
}

pub fn ypath_csv(traj: &MoranTrajectory) -> String {
    let mut out = String::from("t_rescaled,y_value\n");
    for (t, y) in &traj.y_path {
        let _ = writeln!(out, "{t},{y}");
    }
    out
}

fn write_manifest(
    dir: &Path,
    subcommand: &str,
    cfg: &RunConfig,
    extra: Value,
    threads: usize,
    started: Instant,
) -> Result<(), RunnerError> {
    let manifest = RunManifest {
        subcommand: subcommand.to_string(),
        config: cfg.clone(),
        extra_args: extra,
        base_seed: cfg.seed,
        replicates: cfg.replicates,
        threads,
        out_dir: dir.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_clock_secs: started.elapsed().as_secs_f64(),
    };
    std::fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// `simulate-moran`: run the replicate ensemble and persist per-replicate
/// observable paths, per-replicate summaries, and the combined registry.
pub fn cmd_simulate_moran(
    cfg: &RunConfig,
    threads: usize,
    out: &Path,
) -> Result<PathBuf, RunnerError> {
    let started = Instant::now();
    let scalings = derive_scalings(&cfg.params)?;
    let opts = run_options(cfg, &scalings);
    let trajectories = moran_ensemble(
        &cfg.params,
        &scalings,
        &opts,
        cfg.seed,
        cfg.replicates,
        threads,
    )?;
    let dir = make_run_dir(out, cfg.seed)?;
    for (i, traj) in trajectories.iter().enumerate() {
        std::fs::write(dir.join(format!("ypath-{i:03}.csv")), ypath_csv(traj))?;
        std::fs::write(
            dir.join(format!("registry-{i:03}.csv")),
            single_registry_csv(traj),
        )?;
        let summary = json!({
            "replicate": i,
            "seed": traj.seed,
            "j2": traj.j2,
            "event_counts": traj.event_counts,
            "params": cfg.params,
            "scalings": scalings,
            "early_c1": opts.early_c1,
            "early_c2": opts.early_c2,
        });
        std::fs::write(
            dir.join(format!("summary-{i:03}.json")),
            serde_json::to_string_pretty(&summary)?,
        )?;
    }
    std::fs::write(dir.join("registry.csv"), registry_csv(&trajectories))?;
    write_manifest(&dir, "simulate-moran", cfg, json!({}), threads, started)?;
    Ok(dir)
}

/// Checkpoint times for the SDE ensemble export.
fn sde_checkpoints(cfg: &RunConfig, list: &[f64]) -> Vec<f64> {
    if list.is_empty() {
        vec![cfg.params.t_end - 2.0]
    } else {
        list.to_vec()
    }
}

const MAX_PATH_FILES: usize = 32;

/// `simulate-sde`: the limit process on `[0, T-2]` (its clock starts at the
/// finite-N rescaled time 2) from `y0 = y_N`.
pub fn cmd_simulate_sde(
    cfg: &RunConfig,
    checkpoints: &[f64],
    threads: usize,
    out: &Path,
) -> Result<PathBuf, RunnerError> {
    let started = Instant::now();
    let scalings = derive_scalings(&cfg.params)?;
    let sde_cfg = SdeConfig {
        alpha: cfg.params.alpha,
        y0: scalings.y_n,
        t_end: cfg.params.t_end - 2.0,
        p_min: cfg.p_min,
    };
    let times = sde_checkpoints(cfg, checkpoints);
    let rows = run_indexed(cfg.replicates, threads, |i| {
        marginal_ensemble(&sde_cfg, &times, 1, derive_seed(cfg.seed, i))
            .map(|mut v| v.pop().unwrap())
    })?;
    let dir = make_run_dir(out, cfg.seed)?;
    for i in 0..cfg.replicates.min(MAX_PATH_FILES as u64) {
        let path = simulate_sde(&sde_cfg, derive_seed(cfg.seed, i))?;
        let mut csv = String::from("t,y\n");
        for (t, y) in &path.points {
            let _ = writeln!(csv, "{t},{y}");
        }
        std::fs::write(dir.join(format!("path-{i:03}.csv")), csv)?;
    }
    let mut csv = String::from("replicate");
    for t in &times {
        let _ = write!(csv, ",y_at_{t}");
    }
    csv.push('\n');
    for (i, row) in rows.iter().enumerate() {
        let _ = write!(csv, "{i}");
        for v in row {
            let _ = write!(csv, ",{v}");
        }
        csv.push('\n');
    }
    std::fs::write(dir.join("ensemble.csv"), csv)?;
    write_manifest(
        &dir,
        "simulate-sde",
        cfg,
        json!({"checkpoints": times, "sde": sde_cfg}),
        threads,
        started,
    )?;
    Ok(dir)
}

/// `simulate-coalescent`: block-count chains from k0.
pub fn cmd_simulate_coalescent(
    cfg: &RunConfig,
    k0: u64,
    measure: LambdaMeasure,
    threads: usize,
    out: &Path,
) -> Result<PathBuf, RunnerError> {
    let started = Instant::now();
    let t_end = cfg.params.t_end - 2.0;
    let finals = run_indexed::<_, RunnerError, _>(cfg.replicates, threads, |i| {
        let path = simulate_block_counts(k0, t_end, measure, derive_seed(cfg.seed, i));
        Ok(path.points.last().unwrap().1)
    })?;
    let dir = make_run_dir(out, cfg.seed)?;
    for i in 0..cfg.replicates.min(MAX_PATH_FILES as u64) {
        let path = simulate_block_counts(k0, t_end, measure, derive_seed(cfg.seed, i));
        let mut csv = String::from("t,k\n");
        for (t, k) in &path.points {
            let _ = writeln!(csv, "{t},{k}");
        }
        std::fs::write(dir.join(format!("blocks-{i:03}.csv")), csv)?;
    }
    let mut csv = String::from("replicate,k_final\n");
    for (i, k) in finals.iter().enumerate() {
        let _ = writeln!(csv, "{i},{k}");
    }
    std::fs::write(dir.join("ensemble.csv"), csv)?;
    write_manifest(
        &dir,
        "simulate-coalescent",
        cfg,
        json!({"k0": k0, "measure": measure.to_string(), "t_end": t_end}),
        threads,
        started,
    )?;
    Ok(dir)
}

/// Arguments of `check` beyond the shared config.
#[derive(Debug, Clone)]
pub struct CheckArgs {
    pub which: String,
    /// Duality: moment order.
    pub k: u64,
    /// Duality: evaluation time.
    pub t: f64,
    /// Trend: population sizes.
    pub n_list: Vec<u64>,
    /// Trend: rescaled checkpoint times.
    pub t_list: Vec<f64>,
    /// Trend: SDE-side replicate count.
    pub sde_replicates: u64,
    /// Family-size: minimum pooled observations.
    pub min_observations: usize,
    /// Martingale: target type (defaults to the first mid-window row).
    pub j: Option<u32>,
}

impl Default for CheckArgs {
    fn default() -> Self {
        CheckArgs {
            which: String::new(),
            k: 2,
            t: 1.0,
            n_list: vec![10_000, 100_000],
            t_list: vec![3.0, 4.0],
            sde_replicates: 30_000,
            min_observations: 1_000,
            j: None,
        }
    }
}

impl From<&DualityReport> for ComparisonReport {
    fn from(r: &DualityReport) -> Self {
        ComparisonReport {
            name: "duality".to_string(),
            inputs: json!({"k": r.k, "y": r.y, "t": r.t, "replicates": r.replicates}),
            statistic: r.gap,
            threshold: 3.0 * r.combined_se,
            pass: r.pass,
            details: vec![json!({
                "moment_sde": r.moment_sde,
                "se_sde": r.se_sde,
                "moment_coalescent": r.moment_coalescent,
                "se_coalescent": r.se_coalescent,
            })],
        }
    }
}

/// Pool `(q_j, S_j)` entries from mid-window rows of an ensemble.
pub fn pooled_family_entries(
    trajectories: &[MoranTrajectory],
    scalings: &DerivedScalings,
    t_end: f64,
) -> Vec<(f64, f64)> {
    let lo = 2.0 * scalings.a_n;
    let hi = (t_end - 1.0) * scalings.a_n;
    let mut entries = Vec::new();
    for traj in trajectories {
        for r in traj.registry.records() {
            if r.tau >= lo && r.tau <= hi {
                if let Some(s) = r.s_family {
                    entries.push((r.q, s));
                }
            }
        }
    }
    entries
}

/// Default martingale target: the first row crossing after rescaled time 2.1
/// (safely past the marking point, with room for several more crossings
/// before the horizon).
pub fn default_martingale_j(traj: &MoranTrajectory, scalings: &DerivedScalings) -> Option<u32> {
    traj.registry
        .records()
        .iter()
        .find(|r| r.tau >= 2.1 * scalings.a_n)
        .map(|r| r.j)
}

/// Build the trend ensembles and row of SDE samples for the given config.
pub fn trend_inputs(
    cfg: &RunConfig,
    args: &CheckArgs,
    threads: usize,
) -> Result<(Vec<TrendEnsemble>, Vec<Vec<f64>>), RunnerError> {
    let mut ensembles = Vec::new();
    let mut scalings_ref = None;
    for (ni, &n) in args.n_list.iter().enumerate() {
        let mut params = cfg.params;
        params.n = n;
        let scalings = derive_scalings(&params)?;
        let opts = run_options(cfg, &scalings);
        let base = derive_seed(cfg.seed, 1_000_000 + ni as u64);
        let trajs = moran_ensemble(&params, &scalings, &opts, base, cfg.replicates, threads)?;
        let samples: Vec<Vec<f64>> = args
            .t_list
            .iter()
            .map(|&t| {
                trajs
                    .iter()
                    .filter_map(|traj| traj.y_at(t))
                    .collect::<Vec<f64>>()
            })
            .collect();
        ensembles.push(TrendEnsemble { n, samples });
        scalings_ref = Some(scalings);
    }
    let scalings = scalings_ref.expect("at least one N");
    let sde_cfg = SdeConfig {
        alpha: cfg.params.alpha,
        y0: scalings.y_n,
        t_end: cfg.params.t_end - 2.0,
        p_min: cfg.p_min,
    };
    let times: Vec<f64> = args.t_list.iter().map(|t| t - 2.0).collect();
    let sde_base = derive_seed(cfg.seed, 2_000_000);
    let rows = run_indexed(args.sde_replicates, threads, |i| {
        marginal_ensemble(&sde_cfg, &times, 1, derive_seed(sde_base, i)).map(|mut v| v.pop().unwrap())
    })?;
    let sde_samples: Vec<Vec<f64>> = (0..times.len())
        .map(|c| rows.iter().map(|r| r[c]).collect())
        .collect();
    Ok((ensembles, sde_samples))
}

/// Run one named check, returning its reports.
pub fn run_check(
    cfg: &RunConfig,
    args: &CheckArgs,
    threads: usize,
) -> Result<Vec<ComparisonReport>, RunnerError> {
    let scalings = derive_scalings(&cfg.params)?;
    let opts = run_options(cfg, &scalings);
    match args.which.as_str() {
        "duality" => {
            let report = duality_gap(
                args.k,
                cfg.params.y,
                args.t,
                cfg.params.alpha,
                cfg.replicates,
                cfg.p_min,
                LambdaMeasure::BolthausenSznitman,
                cfg.seed,
            )?;
            let mut out = ComparisonReport::from(&report);
            // Full moment-level record alongside the pass/fail summary.
            out.details.push(serde_json::to_value(&report)?);
            Ok(vec![out])
        }
        "tau-spacing" => {
            let traj = run_trajectory(&cfg.params, &scalings, &opts, derive_seed(cfg.seed, 0))?;
            let report = tau_spacing_check(
                traj.registry.records(),
                scalings.a_n,
                2.0 * scalings.a_n,
                (cfg.params.t_end - 1.0) * scalings.a_n,
                10,
            )?;
            Ok(vec![report])
        }
        "family-size" => {
            let trajs = moran_ensemble(
                &cfg.params,
                &scalings,
                &opts,
                cfg.seed,
                cfg.replicates,
                threads,
            )?;
            let entries = pooled_family_entries(&trajs, &scalings, cfg.params.t_end);
            let grid: Vec<f64> = vec![0.2, 0.4, 0.6, 0.8];
            let report = family_size_tail_check(&entries, &grid, args.min_observations, 0.3)?;
            Ok(vec![report])
        }
        "martingale" => {
            let trajs = moran_ensemble(
                &cfg.params,
                &scalings,
                &opts,
                cfg.seed,
                cfg.replicates,
                threads,
            )?;
            let j = args
                .j
                .or_else(|| default_martingale_j(&trajs[0], &scalings))
                .unwrap_or(1);
            let report = martingale_diagnostic(&trajs, j, 5, cfg.params.mu, cfg.params.s)?;
            Ok(vec![report])
        }
        "trend" => {
            let (ensembles, sde_samples) = trend_inputs(cfg, args, threads)?;
            let report = moran_vs_sde_trend(
                &ensembles,
                &sde_samples,
                &args.t_list,
                200,
                derive_seed(cfg.seed, 3_000_000),
            )?;
            Ok(vec![report])
        }
        "assumptions" => {
            let rep = check_assumptions(&cfg.params)?;
            let mut details = vec![json!({
                "a1_value": rep.a1_value,
                "a2_value": rep.a2_value,
                "a3_value": rep.a3_value,
            })];
            for w in &rep.warnings {
                details.push(json!({ "warning": w }));
            }
            Ok(vec![ComparisonReport {
                name: "assumptions".to_string(),
                inputs: json!({"params": cfg.params}),
                statistic: rep.a3_value,
                threshold: 0.1,
                pass: rep.a3_value <= 0.1,
                details,
            }])
        }
        other => Err(RunnerError::UnknownCheck(other.to_string())),
    }
}

/// `check`: run the named check, write its reports, return (dir, all_pass).
pub fn cmd_check(
    cfg: &RunConfig,
    args: &CheckArgs,
    threads: usize,
    out: &Path,
) -> Result<(PathBuf, bool), RunnerError> {
    let started = Instant::now();
    let reports = run_check(cfg, args, threads)?;
    let dir = make_run_dir(out, cfg.seed)?;
    let mut all_pass = true;
    for report in &reports {
        all_pass &= report.pass;
        std::fs::write(
            dir.join(format!("report-{}.json", report.name)),
            serde_json::to_string_pretty(report)?,
        )?;
        std::fs::write(
            dir.join(format!("report-{}-details.csv", report.name)),
            report.details_csv(),
        )?;
    }
    write_manifest(
        &dir,
        "check",
        cfg,
        json!({
            "which": args.which,
            "k": args.k,
            "t": args.t,
            "n_list": args.n_list,
            "t_list": args.t_list,
        }),
        threads,
        started,
    )?;
    Ok((dir, all_pass))
}
