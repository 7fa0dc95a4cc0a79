use std::time::Instant;
use wavefront_sim::moran::*;
use wavefront_sim::params::*;
use wavefront_sim::seed::rng_from_seed;

fn main() {
    let params = ModelParams { n: 1_000_000, mu: 1e-4, s: 0.01, alpha: 1.0, y: 0.3, t_end: 5.0 };
    let scalings = derive_scalings(&params).unwrap();
    let opts = RunOptions::for_model(&params, &scalings);
    let mut state = init_population(&params, &scalings);
    let mut registry = TauRegistry::new();
    let mut counts = EventCounts::default();
    let mut rng = rng_from_seed(7);
    record_tau(&state, &mut registry, &params, &scalings, &opts, 0).unwrap();
    // Warm up to a realistic wave shape: run 0.6 a_N of events.
    let horizon = 0.6 * scalings.a_n;
    while state.clock() < horizon {
        step_event(&mut state, &mut registry, &params, &scalings, &opts, &mut counts, &mut rng).unwrap();
    }
    println!("warmed to t={:.0}, window [{}, {}], taus {}", state.clock(), state.lo_type(), state.hi_type(), registry.len());
    let n_events: u64 = 100_000_000;
    let start = Instant::now();
    for _ in 0..n_events {
        step_event(&mut state, &mut registry, &params, &scalings, &opts, &mut counts, &mut rng).unwrap();
    }
    let dt = start.elapsed().as_secs_f64();
    println!("{:.1}M events/s, window now [{}, {}]", n_events as f64 / dt / 1e6, state.lo_type(), state.hi_type());
}
