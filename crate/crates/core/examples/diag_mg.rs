use wavefront_sim::moran::*;
use wavefront_sim::params::*;
use wavefront_sim::runner::{default_martingale_j, moran_ensemble};
use wavefront_sim::seed::derive_seed;
use wavefront_sim::stats::martingale_values;

fn main() {
    let params = ModelParams { n: 10_000, mu: 5e-4, s: 0.05, alpha: 1.0, y: 0.3, t_end: 5.0 };
    let scalings = derive_scalings(&params).unwrap();
    let opts = RunOptions::for_model(&params, &scalings);
    let trajs = moran_ensemble(&params, &scalings, &opts, derive_seed(778, 0), 100, 0).unwrap();
    let j = default_martingale_j(&trajs[0], &scalings).unwrap();
    println!("chosen j = {j} (tau {:.2} a_N)", trajs[0].registry.record(j).unwrap().tau / scalings.a_n);
    let mut missing_rows = 0;
    let mut disorder = 0;
    let mut no_cp = 0;
    let mut ok = 0;
    for tr in &trajs {
        let have_rows = (0..=5).all(|r| tr.registry.has(j + r));
        if !have_rows { missing_rows += 1; continue; }
        let taus: Vec<f64> = (0..=5).map(|r| tr.registry.record(j + r).unwrap().tau).collect();
        if taus.windows(2).any(|w| w[1] <= w[0]) { disorder += 1; continue; }
        if martingale_values(tr, j, 5, params.mu, params.s).is_some() { ok += 1; } else { no_cp += 1; }
    }
    println!("of 100: ok {ok}, missing rows {missing_rows}, disordered {disorder}, other {no_cp}");
    // Which rows do trajectories reach?
    let mut max_disp = [0u32; 24];
    for tr in &trajs {
        let m = tr.registry.max_j().unwrap();
        max_disp[(m as usize).min(23)] += 1;
    }
    println!("max_j distribution (index=j): {:?}", max_disp);
    let tau_j_dist: Vec<f64> = trajs.iter().filter_map(|tr| tr.registry.record(j).map(|r| r.tau / scalings.a_n)).collect();
    println!("tau_j/a_N over reps: min {:?} max {:?}",
        tau_j_dist.iter().cloned().fold(f64::INFINITY, f64::min),
        tau_j_dist.iter().cloned().fold(0.0, f64::max));
}
