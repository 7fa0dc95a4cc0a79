use wavefront_sim::moran::*;
use wavefront_sim::params::*;
use wavefront_sim::seed::derive_seed;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let reps: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(24);
    // Surrogate: k_N = 3 like the reference, threshold 32 instead of 100.
    let params = ModelParams { n: 31_623, mu: 3.1623e-4, s: 0.01, alpha: 1.0, y: 0.3, t_end: 5.0 };
    let scalings = derive_scalings(&params).unwrap();
    println!("surrogate: k_N={:.3} a_N={:.1} ceil={}", scalings.k_n, scalings.a_n, scalings.ceil_s_over_mu);
    let grid = [0.2, 0.4, 0.6, 0.8];
    for c2 in [-1.0f64, 0.0, 1.0, 2.0, 3.0] {
        let mut opts = RunOptions::for_model(&params, &scalings);
        opts.early_c2 = c2;
        let mut entries: Vec<(f64, f64)> = Vec::new();
        let mut ratios: Vec<f64> = Vec::new();
        for i in 0..reps {
            let traj = run_trajectory(&params, &scalings, &opts, derive_seed(1000 + c2 as i64 as u64, i)).unwrap();
            let lo = 2.0 * scalings.a_n;
            let hi = 4.0 * scalings.a_n;
            let recs = traj.registry.records();
            for w in recs.windows(2) {
                if w[0].tau >= lo && w[0].tau <= hi && w[1].j == w[0].j + 1 {
                    ratios.push(w[0].q * (w[1].tau - w[0].tau) / scalings.a_n);
                }
            }
            for r in recs {
                if r.tau >= lo && r.tau <= hi {
                    if let Some(s) = r.s_family { entries.push((r.q, s)); }
                }
            }
        }
        let n = entries.len() as f64;
        let mut line = format!("c2={c2:+.0}: obs={n:4.0} ");
        for y in grid {
            let est: f64 = entries.iter().filter(|(_, s)| *s > y).map(|(q, _)| q).sum::<f64>() / n;
            let target = 1.0 / y - 1.0;
            line += &format!(" y={y}: {est:5.2} vs {target:5.2} ({:+4.0}%)", (est / target - 1.0) * 100.0);
        }
        ratios.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let med = ratios[ratios.len() / 2];
        println!("{line}  | tau-spacing median {med:.3} over {} pairs", ratios.len());
    }
}
