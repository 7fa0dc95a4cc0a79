use wavefront_sim::moran::*;
use wavefront_sim::params::*;
use wavefront_sim::runner::{default_martingale_j, moran_ensemble};
use wavefront_sim::seed::derive_seed;
use wavefront_sim::stats::{martingale_diagnostic, moment_with_se};

fn main() {
    // Criterion-7 shape: alpha = 0 => E[Y-observable] = y_N exactly.
    let params = ModelParams { n: 10_000, mu: 5e-4, s: 0.05, alpha: 0.0, y: 0.3, t_end: 4.2 };
    let scalings = derive_scalings(&params).unwrap();
    let opts = RunOptions::for_model(&params, &scalings);
    let trajs = moran_ensemble(&params, &scalings, &opts, derive_seed(777, 0), 64, 0).unwrap();
    for t in [3.0, 4.0] {
        let vals: Vec<f64> = trajs.iter().filter_map(|tr| tr.y_at(t)).collect();
        let (mean, se) = moment_with_se(&vals, 1).unwrap();
        println!("neutral t={t}: mean {mean:.4} (y_N {}), z = {:.2}", scalings.y_n, (mean - scalings.y_n) / se);
    }
    // Criterion-8 shape: Z_j ensemble mean ~ 0.
    let params = ModelParams { n: 10_000, mu: 5e-4, s: 0.05, alpha: 1.0, y: 0.3, t_end: 5.0 };
    let scalings = derive_scalings(&params).unwrap();
    let opts = RunOptions::for_model(&params, &scalings);
    let trajs = moran_ensemble(&params, &scalings, &opts, derive_seed(778, 0), 300, 0).unwrap();
    let j = default_martingale_j(&trajs[0], &scalings).unwrap();
    let rep = martingale_diagnostic(&trajs, j, 5, params.mu, params.s).unwrap();
    println!("martingale j={j}: worst |mean|/se = {:.2}, pass={}", rep.statistic, rep.pass);
    for d in &rep.details {
        println!("  {}", d);
    }
}
