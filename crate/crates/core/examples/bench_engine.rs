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
    let n_events: u64 = 100_000_000;
    let start = Instant::now();
    for _ in 0..n_events {
        step_event(&mut state, &mut registry, &params, &scalings, &opts, &mut counts, &mut rng).unwrap();
    }
    let dt = start.elapsed().as_secs_f64();
    println!("{} events in {:.2}s = {:.1}M events/s", n_events, dt, n_events as f64 / dt / 1e6);
    println!("clock reached {:.1} (2aN = {:.1}), taus: {}, hi type {}", state.clock(), 2.0*scalings.a_n, registry.len(), state.hi_type());
    println!("counts: {:?}", counts);
}
