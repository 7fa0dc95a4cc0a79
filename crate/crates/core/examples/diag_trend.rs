//! Mirrors the acceptance suite's criterion-9 ladder rungs below the
//! reference, plus the SDE ensemble, printing the KS distances.
use wavefront_sim::moran::*;
use wavefront_sim::params::*;
use wavefront_sim::runner::moran_ensemble;
use wavefront_sim::sde::{marginal_ensemble, SdeConfig};
use wavefront_sim::seed::derive_seed;
use wavefront_sim::stats::*;

const SUITE_SEED: u64 = 0xACCE97;

fn main() {
    let t_list = [3.0, 4.0];
    let ladder: [(u64, f64, f64, u64); 2] = [(10_000, 0.05, 5e-4, 192), (100_000, 0.02, 2e-4, 48)];
    let mut ensembles = Vec::new();
    for (idx, (n, s, mu, reps)) in ladder.into_iter().enumerate() {
        let params = ModelParams {
            n,
            mu,
            s,
            alpha: 1.0,
            y: 0.3,
            t_end: 5.0,
        };
        let scalings = derive_scalings(&params).unwrap();
        let opts = RunOptions::for_model(&params, &scalings);
        let t0 = std::time::Instant::now();
        let trajs = moran_ensemble(
            &params,
            &scalings,
            &opts,
            derive_seed(SUITE_SEED, 90 + idx as u64),
            reps,
            0,
        )
        .unwrap();
        println!("N={n}: {reps} reps in {:.0}s", t0.elapsed().as_secs_f64());
        let samples: Vec<Vec<f64>> = t_list
            .iter()
            .map(|&t| trajs.iter().filter_map(|tr| tr.y_at(t)).collect())
            .collect();
        for (c, t) in t_list.iter().enumerate() {
            let vals = &samples[c];
            let absorbed = vals.iter().filter(|v| **v == 0.0 || **v == 1.0).count();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            println!("  t={t}: n={} mean {mean:.3} absorbed {absorbed}", vals.len());
        }
        ensembles.push(TrendEnsemble { n, samples });
    }

    let sde_cfg = SdeConfig {
        alpha: 1.0,
        y0: 0.3,
        t_end: 2.0,
        p_min: 1e-4,
    };
    let times: Vec<f64> = t_list.iter().map(|t| t - 2.0).collect();
    let t0 = std::time::Instant::now();
    let rows = marginal_ensemble(&sde_cfg, &times, 30_000, derive_seed(SUITE_SEED, 99)).unwrap();
    println!("SDE 30k in {:.0}s", t0.elapsed().as_secs_f64());
    let sde_samples: Vec<Vec<f64>> = (0..times.len())
        .map(|c| rows.iter().map(|r| r[c]).collect())
        .collect();
    for (c, t) in t_list.iter().enumerate() {
        let vals = &sde_samples[c];
        let absorbed = vals.iter().filter(|v| **v == 0.0 || **v == 1.0).count();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        println!(
            "SDE t={t}: mean {mean:.3} absorbed fraction {:.3}",
            absorbed as f64 / vals.len() as f64
        );
    }

    let rep = moran_vs_sde_trend(
        &ensembles,
        &sde_samples,
        &t_list,
        200,
        derive_seed(SUITE_SEED, 100),
    )
    .unwrap();
    println!(
        "trend over the two lower rungs: statistic {:.3} pass {}",
        rep.statistic, rep.pass
    );
    for d in &rep.details {
        println!("  {d}");
    }
}
