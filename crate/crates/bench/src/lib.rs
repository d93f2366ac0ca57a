//! Inputs shared by the benchmarks in `benches/`.

use aflsim_core::events::SimEvent;
use aflsim_core::{parse_scenario, run_scenario, ClientProfile, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

/// `n` measured, idle client profiles with spread-out statistics.
pub fn measured_profiles(n: usize, seed: u64) -> Vec<ClientProfile> {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut p = ClientProfile::new(i as u32, r.random_range(10..2000), r.random_range(0.1..2.0), 3);
            p.last_aggregate_rms = Some(r.random_range(1.0..500.0));
            p.staleness_history = (0..r.random_range(0..8)).map(|_| r.random_range(0..20)).collect();
            p.latency_history = (0..4).map(|_| r.random_range(0.1..2.0)).collect();
            p
        })
        .collect()
}

/// A loss pool: `n` benign values near 1 and a few outliers near 9.
pub fn loss_pool(n: usize, seed: u64) -> Vec<f64> {
    let mut r = ChaCha20Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            if i % 20 == 0 {
                r.random_range(8.0..10.0)
            } else {
                r.random_range(0.9..1.1)
            }
        })
        .collect()
}

/// A small pace-mode scenario, cheap enough to run per iteration.
pub fn small_scenario() -> ScenarioConfig {
    parse_scenario(
        "n_clients = 20\nconcurrency = 5\nhorizon = 5.0\nseed = 1\n\
         [task]\nsamples = 2000\nholdout = 200\n\
         [latency]\njitter = 0.0",
    )
    .expect("valid scenario")
}

/// Event log of a longer pace run, for the verifiers.
pub fn pace_log() -> Vec<SimEvent> {
    let cfg = parse_scenario(
        "n_clients = 50\nconcurrency = 20\nhorizon = 40.0\nseed = 2\n\
         [task]\nkind = \"linear_regression\"\ndim = 4\nsamples = 2000\nholdout = 100\n\
         [training]\neta = 0.005\nlocal_steps = 1\n\
         [latency]\njitter = 0.0",
    )
    .expect("valid scenario");
    run_scenario(&cfg).expect("run completes").log
}
