use aflsim_core::analysis::{verify_lemma1, verify_thm1};
use aflsim_core::engine::scenario_partition;
use aflsim_core::events::{encode_log, parse_log};
use aflsim_core::{metrics_summary, parse_scenario, run_scenario, EventKind};
use proptest::prelude::*;

fn pace_scenario(n: usize, c: usize, b: usize, a: f64, seed: u64) -> String {
    format!(
        "n_clients = {n}\nconcurrency = {c}\nseed = {seed}\nhorizon = 5.0\n\
[aggregation]\nmode = \"pace\"\nb = {b}\n\
[latency]\nzipf_a = {a}\njitter = 0.0\nprofile_noise = 0.0\n\
[task]\nkind = \"linear_regression\"\ndim = 3\nsamples = 200\nholdout = 50\n\
[training]\neta = 0.005\nlocal_steps = 2\n"
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn accurate_profiles_keep_staleness_within_b(
        n in 2usize..16,
        c_frac in 0.0f64..1.0,
        b_frac in 0.0f64..1.0,
        a in 0.5f64..2.0,
        seed in 0u64..1000,
    ) {
        let c = 2 + ((n - 2) as f64 * c_frac) as usize;
        let b = 2 + ((c - 2) as f64 * b_frac) as usize;
        let cfg = parse_scenario(&pace_scenario(n, c, b, a, seed)).unwrap();
        let out = run_scenario(&cfg).unwrap();
        let thm = verify_thm1(&out.log, b as u32).unwrap();
        prop_assert!(thm.pass, "m={} b={} spans={:?}", thm.max_count, b, thm.violating_spans);
        let lemma = verify_lemma1(&out.log, cfg.tick).unwrap();
        prop_assert!(lemma.is_empty(), "{lemma:?}");

        let summary = metrics_summary(&out.log, None);
        prop_assert!(summary.max_staleness.unwrap_or(0) <= b as u64);
    }

    #[test]
    fn encoded_logs_decode_to_the_same_events(seed in 0u64..500) {
        let cfg = parse_scenario(&pace_scenario(6, 3, 2, 1.2, seed)).unwrap();
        let out = run_scenario(&cfg).unwrap();
        let text = encode_log(&out.log);
        let back = parse_log(&text).unwrap();
        prop_assert_eq!(&back, &out.log);
        prop_assert_eq!(encode_log(&back), text);
    }
}

#[test]
fn resolved_echo_reruns_identically() {
    let cfg = parse_scenario("n_clients = 12\nconcurrency = 4\nhorizon = 4.0\nseed = 3\npolicy = \"oort\"").unwrap();
    let echo = parse_scenario(&cfg.to_toml()).unwrap();
    assert_eq!(echo, cfg);
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&echo).unwrap();
    assert_eq!(encode_log(&a.log), encode_log(&b.log));
}

#[test]
fn exported_partition_matches_client_data() {
    let cfg = parse_scenario("n_clients = 7\nhorizon = 0.0\nseed = 21\n[task]\nsamples = 500\ncorrupt_fraction = 0.3")
        .unwrap();
    let (parts, labels) = scenario_partition(&cfg).unwrap();
    assert_eq!(labels.len(), 500);
    let out = run_scenario(&cfg).unwrap();
    for (members, world) in parts.iter().zip(&out.clients) {
        assert_eq!(members.len(), world.data.len());
    }
    let mut all: Vec<usize> = parts.concat();
    all.sort_unstable();
    assert_eq!(all, (0..500).collect::<Vec<_>>());
}

#[test]
fn every_selection_uses_the_current_version() {
    let cfg = parse_scenario("n_clients = 10\nconcurrency = 5\nhorizon = 6.0\nseed = 8").unwrap();
    let out = run_scenario(&cfg).unwrap();
    let mut version = 0;
    for e in &out.log {
        match &e.kind {
            EventKind::Aggregated { version: v, .. } => version = *v,
            EventKind::Selected { base_version, .. } => assert_eq!(*base_version, version),
            _ => {}
        }
    }
}
