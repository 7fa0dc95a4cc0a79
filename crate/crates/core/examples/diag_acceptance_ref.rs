//! Mirrors the acceptance suite's shared reference ensemble and prints the
//! statistics criteria 1/5/6/9 will see, so frozen constants match.
use wavefront_sim::moran::*;
use wavefront_sim::params::*;
use wavefront_sim::runner::{moran_ensemble, pooled_family_entries};
use wavefront_sim::stats::*;

const SUITE_SEED: u64 = 0xACCE97;
const REPS: u64 = 24;
const FAMILY_EARLY_C2: f64 = 0.0;

fn main() {
    let params = ModelParams {
        n: 1_000_000,
        mu: 1e-4,
        s: 0.01,
        alpha: 1.0,
        y: 0.3,
        t_end: 5.0,
    };
    let scalings = derive_scalings(&params).unwrap();
    let mut opts = RunOptions::for_model(&params, &scalings);
    opts.early_c2 = FAMILY_EARLY_C2;
    let t0 = std::time::Instant::now();
    let trajs = moran_ensemble(&params, &scalings, &opts, SUITE_SEED, REPS, 0).unwrap();
    println!("ensemble of {REPS} in {:.0}s", t0.elapsed().as_secs_f64());

    // Criterion 5: pooled tau spacing
    let t_lo = 2.0 * scalings.a_n;
    let t_hi = 4.0 * scalings.a_n;
    let mut ratios = Vec::new();
    for traj in &trajs {
        for w in traj.registry.records().windows(2) {
            if w[1].j == w[0].j + 1 && w[0].tau >= t_lo && w[0].tau <= t_hi {
                ratios.push(w[0].q * (w[1].tau - w[0].tau) / scalings.a_n);
            }
        }
    }
    ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = ratios[ratios.len() / 2];
    let inside = ratios.iter().filter(|r| (0.8..=1.2).contains(*r)).count() as f64
        / ratios.len() as f64;
    println!(
        "C5 tau-spacing: median {median:.4} over {} pairs, fraction inside [0.8,1.2] = {inside:.3}",
        ratios.len()
    );

    // Criterion 6: family-size tail
    let entries = pooled_family_entries(&trajs, &scalings, params.t_end);
    println!("C6 pooled obs: {}", entries.len());
    let mut hist = [0u32; 6];
    for (_, s) in &entries {
        let b = if *s <= 0.0 {
            0
        } else {
            ((s * 5.0).floor() as usize + 1).min(5)
        };
        hist[b] += 1;
    }
    println!("C6 S-hist [S=0, (0,.2], (.2,.4], (.4,.6], (.6,.8], (.8,1]]: {hist:?}");
    for y in [0.2, 0.4, 0.6, 0.8] {
        let est: f64 = entries
            .iter()
            .filter(|(_, s)| *s > y)
            .map(|(q, _)| q)
            .sum::<f64>()
            / entries.len() as f64;
        let target = 1.0 / y - 1.0;
        println!(
            "C6 y={y}: estimate {est:.3} target {target:.3} rel_dev {:+.1}%",
            (est / target - 1.0) * 100.0
        );
    }
    let q_mean = entries.iter().map(|(q, _)| q).sum::<f64>() / entries.len() as f64;
    println!("C6 mean q = {q_mean:.2}");

    // Criterion 9 (1e6 rung): observable samples at t = 3, 4
    for t in [3.0, 4.0] {
        let vals: Vec<f64> = trajs.iter().filter_map(|tr| tr.y_at(t)).collect();
        let (mean, se) = moment_with_se(&vals, 1).unwrap();
        let fixed = vals.iter().filter(|v| **v == 0.0 || **v == 1.0).count();
        println!(
            "C9 t={t}: n={} mean {mean:.3} se {se:.3} absorbed {fixed}",
            vals.len()
        );
    }
    // Criterion 1: event counts + clamps
    let ev = trajs[0].event_counts;
    println!("C1 replicate 0: {ev:?}");
}
