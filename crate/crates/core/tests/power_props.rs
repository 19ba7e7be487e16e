use codec_energy::energy::integrate_power;
use codec_energy::power::{
    counter_delta, sample_session, CounterReading, DomainKind, PowerSample, PowerTrace, ReplayProvider, StopSignal,
    SyntheticProgram, SyntheticProvider,
};
use proptest::prelude::*;

fn reading(energy_uj: u64, max_range_uj: u64) -> CounterReading {
    CounterReading {
        energy_uj,
        max_range_uj,
        domain: DomainKind::Package,
        t_us: 0,
    }
}

fn program() -> impl Strategy<Value = SyntheticProgram> {
    prop_oneof![
        (1.0..300.0f64).prop_map(|watts| SyntheticProgram::Constant { watts }),
        (1.0..300.0f64, 1.0..300.0f64, 100.0..5000.0f64)
            .prop_map(|(from_w, to_w, duration_ms)| SyntheticProgram::Ramp { from_w, to_w, duration_ms }),
        (1.0..300.0f64, 1.0..300.0f64, 0.0..3000.0f64)
            .prop_map(|(before_w, after_w, at_ms)| SyntheticProgram::Step { before_w, after_w, at_ms }),
        (1.0..300.0f64, 1.0..300.0f64, 50.0..700.0f64)
            .prop_map(|(a_w, b_w, half_period_ms)| SyntheticProgram::Alternating { a_w, b_w, half_period_ms }),
    ]
}

proptest! {
    #[test]
    fn counter_delta_within_range(max in 1u64..(1u64 << 40), prev_frac in 0.0..1.0f64, d_frac in 0.0..1.0f64) {
        let prev = ((max as f64 * prev_frac) as u64).min(max - 1);
        let d = ((max as f64 * d_frac) as u64).min(max - 1);
        let next = (prev + d) % max;
        let delta = counter_delta(&reading(prev, max), &reading(next, max)).unwrap();
        prop_assert!(delta <= max);
        prop_assert_eq!(delta, d);
    }

    #[test]
    fn replay_round_trip_energy(
        watts in prop::collection::vec(0.5..250.0f64, 3..60),
        interval in prop::sample::select(vec![10u64, 20, 25, 50, 100]),
    ) {
        let samples: Vec<_> = watts.iter().enumerate().map(|(i, &w)| PowerSample::new(i as f64 * 100.0, w, 0.0)).collect();
        let source = PowerTrace::new(samples, 100.0).unwrap();
        let expected = integrate_power(&source).unwrap();
        let mut replay = ReplayProvider::new(source).unwrap();
        let trace = sample_session(&mut replay, interval, &StopSignal::new()).unwrap();
        let got = integrate_power(&trace).unwrap();
        prop_assert!((got - expected).abs() <= 0.01 * expected, "got {got}, expected {expected}");
    }

    #[test]
    fn sampled_energy_is_integer_counter_total(
        prog in program(),
        interval in prop::sample::select(vec![10u64, 20, 100, 250]),
        limit_ms in 500u32..4000,
        start_ms in 0u32..2000,
    ) {
        let (limit_ms, start_ms) = (limit_ms as f64, start_ms as f64);
        let mut p = SyntheticProvider::new(prog.clone()).starting_at(start_ms).with_limit_ms(start_ms + limit_ms);
        let trace = sample_session(&mut p, interval, &StopSignal::new()).unwrap();
        let mut total_uj = 0u64;
        let mut prev_end = trace.start_ms;
        for s in &trace.samples {
            let dt_ms = 2.0 * (s.t_ms - prev_end);
            prev_end += dt_ms;
            let uj = s.pkg_w * dt_ms * 1000.0;
            prop_assert!((uj - uj.round()).abs() < 1e-6 * uj.max(1.0), "non-integer delta {uj}");
            total_uj += uj.round() as u64;
        }
        prop_assert!((prev_end - trace.end_ms).abs() < 1e-6);
        prop_assert!((trace.end_ms - limit_ms).abs() < 1e-6);
        let to_uj = |j: f64| (j * 1e6).round() as u64;
        let end_ms = start_ms + trace.end_ms;
        prop_assert_eq!(total_uj, to_uj(prog.energy_j(end_ms)) - to_uj(prog.energy_j(start_ms)));
    }
}
