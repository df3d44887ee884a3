use chanagg::metrics::Metric;
use chanagg::policy::PolicyKind;
use chanagg::scenario::{parse_scenario, Scenario};
use chanagg::sim::Simulation;
use proptest::prelude::*;

#[derive(Debug, Clone)]
struct Case {
    channels: u32,
    slots: u32,
    pu_rate: f64,
    snr_rate: f64,
    classes: Vec<(f64, f64, u32, u32)>,
    q1: u32,
    q2: u32,
    deadline: Option<f64>,
    exp_deadline: bool,
    strict_hol: bool,
}

fn case() -> impl Strategy<Value = Case> {
    (
        1u32..=4,
        1u32..=3,
        prop_oneof![Just(0.0), 0.05f64..1.5],
        prop_oneof![Just(0.0), 0.05f64..1.0],
        prop::collection::vec((0.2f64..4.0, 0.2f64..2.0, 1u32..=2, 0u32..=2), 1..=3),
        0u32..=3,
        0u32..=3,
        prop::option::of(0.2f64..5.0),
        any::<bool>(),
        any::<bool>(),
    )
        .prop_map(
            |(channels, slots, pu_rate, snr_rate, classes, q1, q2, deadline, exp_deadline, strict_hol)| Case {
                channels,
                slots,
                pu_rate,
                snr_rate,
                classes,
                q1,
                q2,
                deadline,
                exp_deadline,
                strict_hol,
            },
        )
}

fn scenario(c: &Case) -> Scenario {
    let total = c.channels * c.slots;
    let mut text = format!(
        "[spectrum]\nchannels = {}\nslots_per_channel = {}\n\
         [traffic]\npu_arrival_rate = {}\nsnr_rate = {}\n",
        c.channels, c.slots, c.pu_rate, c.snr_rate
    );
    for (i, (lambda, mu, min, extra)) in c.classes.iter().enumerate() {
        let min = (*min).min(total);
        let max = (min + extra).min(total);
        text += &format!(
            "[class.c{i}]\narrival_rate = {lambda}\nservice_rate = {mu}\ntheta_min = {min}\ntheta_max = {max}\n"
        );
    }
    let deadline = c.deadline.map_or("inf".to_string(), |d| d.to_string());
    text += &format!(
        "[policy]\nkind = RBS_Q\nq1_max = {}\nq2_max = {}\ndeadline = {deadline}\n\
         exp_deadline = {}\nstrict_hol = {}\n[sim]\nhorizon = 150\nwarmup = 10\n",
        c.q1, c.q2, c.exp_deadline, c.strict_hol
    );
    parse_scenario(&text).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn every_policy_conserves_users(c in case(), seed in 0u64..1000) {
        let sc = scenario(&c);
        for kind in PolicyKind::ALL {
            let cfg = sc.to_sim_config(Some(kind)).unwrap();
            let out = Simulation::new(cfg, seed).unwrap().audit_every_event(true).run().unwrap();
            let k = &out.counters;
            prop_assert!(k.partition_holds(), "{kind}: {k:?}");
            prop_assert_eq!(k.su_forced_terminated, k.preemption_drops + k.timeout_drops);
            prop_assert!(k.pu_blocked <= k.pu_arrivals);
            if let (Some(pa), Some(pb)) = (Metric::Access.of(k), Metric::Blocking.of(k)) {
                prop_assert!((pa + pb - 1.0).abs() <= 1e-12);
                prop_assert!((0.0..=1.0).contains(&pb));
            }
            if !kind.has_queue() {
                prop_assert_eq!(k.queue_occupancy_integral, 0.0);
                prop_assert_eq!(k.timeout_drops, 0);
            }
            if c.pu_rate == 0.0 {
                prop_assert_eq!(k.preemption_drops, 0);
            }
        }
    }

    #[test]
    fn same_seed_same_trace(c in case(), seed in 0u64..1000) {
        let cfg = scenario(&c).to_sim_config(None).unwrap();
        let a = Simulation::new(cfg.clone(), seed).unwrap().record_decisions().run().unwrap();
        let b = Simulation::new(cfg, seed).unwrap().record_decisions().run().unwrap();
        prop_assert_eq!(a.trace_hash, b.trace_hash);
        prop_assert_eq!(a.decisions, b.decisions);
        prop_assert_eq!(a.counters, b.counters);
    }

    #[test]
    fn zero_buffers_reduce_to_baseline(c in case(), seed in 0u64..1000) {
        let mut sc = scenario(&c);
        sc.set("policy.q_max", "0").unwrap();
        for (queued, plain) in [(PolicyKind::IbsQ, PolicyKind::Ibs), (PolicyKind::RbsQ, PolicyKind::Rbs)] {
            let run = |k| {
                let cfg = sc.to_sim_config(Some(k)).unwrap();
                Simulation::new(cfg, seed).unwrap().record_decisions().run().unwrap()
            };
            let (a, b) = (run(queued), run(plain));
            prop_assert_eq!(a.decisions, b.decisions);
            prop_assert_eq!(a.counters, b.counters);
        }
    }
}
