use std::time::Instant;
use wavefront_sim::moran::*;
use wavefront_sim::params::*;
use wavefront_sim::stats::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let seed: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let c2: Option<f64> = args.get(2).and_then(|s| s.parse().ok());
    let params = ModelParams { n: 1_000_000, mu: 1e-4, s: 0.01, alpha: 1.0, y: 0.3, t_end: 5.0 };
    let scalings = derive_scalings(&params).unwrap();
    let mut opts = RunOptions::for_model(&params, &scalings);
    if let Some(c2) = c2 { opts.early_c2 = c2; }
    println!("k_N={:.3} a_N={:.1} ceil={} y_N={} early_c2={:.2} cap={}",
        scalings.k_n, scalings.a_n, scalings.ceil_s_over_mu, scalings.y_n, opts.early_c2, opts.type_cap);
    let start = Instant::now();
    let traj = run_trajectory(&params, &scalings, &opts, seed).unwrap();
    let dt = start.elapsed().as_secs_f64();
    let ev = traj.event_counts;
    println!("run: {:.1}s, {} events = {:.1}M ev/s, j2={}, taus={}, checkpoints={}",
        dt, ev.total, ev.total as f64/dt/1e6, traj.j2, traj.registry.len(), traj.checkpoints.len());
    println!("counts {:?}", ev);
    // tau spacing in the mid window
    let lo = 2.0*scalings.a_n; let hi = 4.0*scalings.a_n;
    match tau_spacing_check(traj.registry.records(), scalings.a_n, lo, hi, 10) {
        Ok(rep) => println!("tau-spacing: stat={:.4} pass={} last_detail={}", rep.statistic, rep.pass, rep.details.last().unwrap()),
        Err(e) => println!("tau-spacing err: {e}"),
    }
    // family-size entries
    let mut entries = Vec::new();
    for r in traj.registry.records() {
        if r.tau >= lo && r.tau <= hi {
            if let Some(s) = r.s_family { entries.push((r.q, s)); }
        }
    }
    println!("mid-window rows: {} ; q range {:?}..{:?}", entries.len(),
        entries.iter().map(|e| e.0).fold(f64::INFINITY, f64::min),
        entries.iter().map(|e| e.0).fold(0.0, f64::max));
    let mean_s: f64 = entries.iter().map(|e| e.1).sum::<f64>() / entries.len().max(1) as f64;
    println!("mean S = {:.3}; S values: {:?}", mean_s, entries.iter().map(|e| (e.1*100.0).round()/100.0).collect::<Vec<_>>());
    println!("y path: {:?}", traj.y_path.iter().map(|&(t,y)| (((t*100.0).round())/100.0, ((y*100.0).round())/100.0)).collect::<Vec<_>>());
}
