//! Simulated estimates against closed forms and the exact chain.

use approx::assert_abs_diff_eq;
use chanagg::ctmc::{analyze, OracleConfig};
use chanagg::metrics::Metric;
use chanagg::policy::PolicyKind;
use chanagg::runner::{run, RunOptions, RunReport};
use chanagg::scenario::parse_scenario;

fn mean(r: &RunReport, m: Metric) -> f64 {
    let s = r.summary.iter().find(|s| s.metric == m).unwrap();
    s.mean
}

fn single_slot(extra_policy: &str, lambda: f64, horizon: u32) -> String {
    format!(
        "[spectrum]\nchannels = 1\nslots_per_channel = 1\n\
         [class.a]\narrival_rate = {lambda}\nservice_rate = 1\n\
         [policy]\n{extra_policy}\n\
         [sim]\nhorizon = {horizon}\nreplications = 6\nseed = 21\n"
    )
}

#[test]
fn near_infinite_buffer_gives_mm1_queue_length() {
    // M/M/1 at load 1/2: mean number waiting is rho^2 / (1 - rho).
    let rho: f64 = 0.5;
    let text = single_slot("kind = IBS_Q\nq1_max = 40\nq2_max = 0\ndeadline = inf", rho, 40_000);
    let r = run(&parse_scenario(&text).unwrap(), &RunOptions::default()).unwrap();
    assert_abs_diff_eq!(mean(&r, Metric::MeanQueueLength), rho * rho / (1.0 - rho), epsilon = 0.03);
    assert_eq!(mean(&r, Metric::Blocking), 0.0);
}

#[test]
fn loss_free_capacity_equals_arrival_rate() {
    let text = "
        [spectrum]
        channels = 6
        slots_per_channel = 4
        [class.a]
        arrival_rate = 2
        service_rate = 1
        [policy]
        kind = IBS
        [sim]
        horizon = 20000
        replications = 4
    ";
    let r = run(&parse_scenario(text).unwrap(), &RunOptions::default()).unwrap();
    // 24 servers at 2 erlangs: blocking is below 1e-15.
    assert_abs_diff_eq!(mean(&r, Metric::Capacity), 2.0, epsilon = 0.03);
}

#[test]
fn erlang_loss_with_several_slots() {
    // Erlang B via the standard recursion B(n) = a B(n-1) / (n + a B(n-1)).
    let a = 2.5;
    let b = (1..=4).fold(1.0, |b, n| a * b / (n as f64 + a * b));
    let text = format!(
        "[spectrum]\nchannels = 2\nslots_per_channel = 2\n\
         [class.a]\narrival_rate = {a}\nservice_rate = 1\n\
         [policy]\nkind = IBS\n[sim]\nhorizon = 40000\nreplications = 6\n"
    );
    let sc = parse_scenario(&text).unwrap();
    let exact = analyze(&OracleConfig::from_sim_config(&sc.to_sim_config(None).unwrap()).unwrap()).unwrap();
    assert_abs_diff_eq!(exact.blocking, b, epsilon = 1e-12);
    let r = run(&sc, &RunOptions::default()).unwrap();
    assert_abs_diff_eq!(mean(&r, Metric::Blocking), b, epsilon = 0.01);
}

#[test]
fn elastic_policy_matches_exact_chain() {
    let text = "
        [spectrum]
        channels = 1
        slots_per_channel = 4
        [class.a]
        arrival_rate = 1.5
        service_rate = 0.8
        theta_min = 1
        theta_max = 3
        [policy]
        kind = RBS_Q
        q1_max = 2
        q2_max = 0
        deadline = 2
        exp_deadline = true
        [sim]
        horizon = 30000
        warmup = 100
        replications = 6
        seed = 3
    ";
    let sc = parse_scenario(text).unwrap();
    let exact = analyze(&OracleConfig::from_sim_config(&sc.to_sim_config(None).unwrap()).unwrap()).unwrap();
    let r = run(&sc, &RunOptions::default()).unwrap();
    assert_abs_diff_eq!(mean(&r, Metric::Blocking), exact.blocking, epsilon = 0.01);
    assert_abs_diff_eq!(mean(&r, Metric::ForcedTermination), exact.forced_termination, epsilon = 0.01);
    assert_abs_diff_eq!(mean(&r, Metric::Capacity), exact.capacity, epsilon = 0.02 * exact.capacity);
    assert_abs_diff_eq!(mean(&r, Metric::MeanQueueLength), exact.mean_queue_length, epsilon = 0.02);
}

#[test]
fn preempted_loss_system_matches_exact_chain() {
    let text = "
        [spectrum]
        channels = 3
        slots_per_channel = 1
        [traffic]
        pu_arrival_rate = 0.7
        pu_service_rate = 1.2
        [class.a]
        arrival_rate = 1.4
        service_rate = 1
        [policy]
        kind = IBS
        [sim]
        horizon = 30000
        replications = 6
        seed = 8
    ";
    let sc = parse_scenario(text).unwrap();
    let opts = RunOptions {
        policies: vec![PolicyKind::Ibs],
        ..Default::default()
    };
    let exact = analyze(&OracleConfig::from_sim_config(&sc.to_sim_config(None).unwrap()).unwrap()).unwrap();
    let r = run(&sc, &opts).unwrap();
    assert!(exact.forced_termination > 0.01);
    assert_abs_diff_eq!(mean(&r, Metric::Blocking), exact.blocking, epsilon = 0.01);
    assert_abs_diff_eq!(mean(&r, Metric::ForcedTermination), exact.forced_termination, epsilon = 0.01);
}
