use std::collections::BTreeSet;
use std::f64::consts::PI;

use gridprobe_core::grid_sim::physics::phase_to_sequence;
use gridprobe_core::grid_sim::*;
use num_complex::Complex64;

const CYCLE: usize = 128;

/// One-cycle DFT at the fundamental, as an RMS phasor.
fn phasor(x: &[f32], start: usize) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for n in 0..CYCLE {
        let ang = -2.0 * PI * n as f64 / CYCLE as f64;
        acc += Complex64::from_polar(x[start + n] as f64, ang);
    }
    acc * (2f64.sqrt() / CYCLE as f64)
}

fn rms(x: &[f32]) -> f64 {
    (x.iter().map(|&v| (v as f64).powi(2)).sum::<f64>() / x.len() as f64).sqrt()
}

/// DC offset decays within a couple of milliseconds so single-cycle
/// phasors after inception are clean.
fn fast_dc() -> GridConfig {
    GridConfig {
        dc_time_constant_s: Bounds::new(0.001, 0.0015),
        fault_duration_s: Bounds::new(0.15, 0.2),
        ..GridConfig::default()
    }
}

fn row(ep: &Episode, c: usize) -> Vec<f32> {
    ep.signals.row(c).to_vec()
}

fn phase_currents(ep: &Episode, layout: &ChannelLayout, relay: usize, start: usize) -> [Complex64; 3] {
    Phase::ALL.map(|p| phasor(&row(ep, layout.channel(relay, Quantity::Current, p).unwrap()), start))
}

fn phase_voltages(ep: &Episode, layout: &ChannelLayout, relay: usize, start: usize) -> [Complex64; 3] {
    Phase::ALL.map(|p| phasor(&row(ep, layout.channel(relay, Quantity::Voltage, p).unwrap()), start))
}

#[test]
fn three_phase_fault_is_balanced() {
    let layout = build_channel_layout();
    let cfg = fast_dc();
    for seed in 0..6 {
        for line in 1..=LINE_COUNT {
            let ep = synthesize_episode(&cfg, &layout, FaultType::ABC, line, 0.1 + 0.13 * seed as f64, seed).unwrap();
            let start = ep.inception_sample() + 3 * CYCLE;
            let (lo, hi) = layout.line_ends(line);
            for sub in [lo, hi] {
                let relay = layout.terminal_relay(line, sub).unwrap();
                let pre = phase_currents(&ep, &layout, relay, ep.inception_sample() - 2 * CYCLE);
                let post = phase_currents(&ep, &layout, relay, start);
                for p in 0..3 {
                    assert!(post[p].norm() > 2.0 * pre[p].norm(), "phase {p} not elevated");
                }
                let [zero, pos, neg] = phase_to_sequence(post);
                assert!(zero.norm() < 0.01 * pos.norm(), "zero sequence {zero} vs {pos}");
                assert!(neg.norm() < 0.01 * pos.norm(), "negative sequence {neg} vs {pos}");
            }
        }
    }
}

#[test]
fn single_phase_faults_leave_healthy_phases_alone() {
    let layout = build_channel_layout();
    let cfg = GridConfig::default();
    for (i, fault) in [FaultType::AG, FaultType::BG, FaultType::CG].into_iter().enumerate() {
        let faulted = fault.phases()[0];
        for seed in 0..5u64 {
            let line = 1 + (seed as usize + i) % LINE_COUNT;
            let ep = synthesize_episode(&cfg, &layout, fault, line, 0.2 + 0.15 * seed as f64, seed * 7 + 1).unwrap();
            let inc = ep.inception_sample();
            let clear = ep.clearing_sample();
            for relay in 1..=RELAY_COUNT {
                for p in Phase::ALL {
                    let x = row(&ep, layout.channel(relay, Quantity::Current, p).unwrap());
                    let before = rms(&x[inc - 2 * CYCLE..inc]);
                    let after = rms(&x[inc..inc + 2 * CYCLE.min(clear - inc)]);
                    if p == faulted {
                        if layout.relay_line(relay) == line {
                            assert!(after > 2.0 * before, "{fault} relay {relay}: faulted phase not elevated");
                        }
                    } else {
                        let rel = (after - before).abs() / before;
                        assert!(rel < 0.10, "{fault} relay {relay} phase {p}: {rel}");
                    }
                }
            }
        }
    }
}

/// Faulted-loop impedance seen by the relay at the lower-numbered end.
fn loop_impedance(fault: FaultType, v: [Complex64; 3], i: [Complex64; 3], k0: f64) -> f64 {
    let ph: Vec<usize> = fault.phases().iter().map(|p| p.index()).collect();
    match fault.shape().unwrap() {
        FaultShape::SingleLineGround => {
            let i0 = (i[0] + i[1] + i[2]) / 3.0;
            (v[ph[0]] / (i[ph[0]] + i0 * (k0 - 1.0))).norm()
        }
        FaultShape::ThreePhase => (v[0] / i[0]).norm(),
        _ => ((v[ph[0]] - v[ph[1]]) / (i[ph[0]] - i[ph[1]])).norm(),
    }
}

#[test]
fn apparent_impedance_grows_with_distance() {
    let layout = build_channel_layout();
    let cfg = fast_dc();
    for fault in FaultType::SHORT_CIRCUITS {
        for seed in 0..4u64 {
            let line = 1 + (seed as usize) % LINE_COUNT;
            let (lo, _) = layout.line_ends(line);
            let relay = layout.terminal_relay(line, lo).unwrap();
            let mut last = 0.0;
            for loc in [0.1, 0.3, 0.5, 0.7, 0.9] {
                let ep = synthesize_episode(&cfg, &layout, fault, line, loc, 100 + seed).unwrap();
                let start = ep.inception_sample() + 3 * CYCLE;
                let z = loop_impedance(
                    fault,
                    phase_voltages(&ep, &layout, relay, start),
                    phase_currents(&ep, &layout, relay, start),
                    ep.randomization.k0,
                );
                assert!(z > last, "{fault} seed {seed} loc {loc}: |Z| {z} not above {last}");
                last = z;
            }
        }
    }
}

#[test]
fn pre_fault_energy_sits_at_the_fundamental() {
    let layout = build_channel_layout();
    let eps = generate_dataset(&GridConfig::default(), &layout, 6, 11).unwrap();
    for ep in &eps {
        let end = ep.inception_sample() - (0.002 * ep.sample_rate).ceil() as usize;
        let cycles = (end / CYCLE).min(8);
        assert!(cycles >= 2);
        let start = end - cycles * CYCLE;
        for c in 0..CHANNEL_COUNT {
            let x = &ep.signals.row(c).to_vec()[start..end];
            let total: f64 = x.iter().map(|&v| (v as f64).powi(2)).sum();
            let mut acc = Complex64::new(0.0, 0.0);
            for (n, &v) in x.iter().enumerate() {
                acc += Complex64::from_polar(v as f64, -2.0 * PI * n as f64 / CYCLE as f64);
            }
            // energy of the fitted fundamental sinusoid
            let amp = 2.0 * acc.norm() / x.len() as f64;
            let fundamental = amp * amp / 2.0 * x.len() as f64;
            assert!(fundamental / total >= 0.99, "episode {} channel {c}: {}", ep.episode_id, fundamental / total);
        }
    }
}

#[test]
fn fault_type_histogram_is_uniform() {
    let n = 1000u64;
    let mut counts = [0u64; CLASS_COUNT];
    let mut lines = [0u64; LINE_COUNT];
    for id in 0..n {
        let plan = plan_episode(5, id);
        counts[plan.fault_type.index()] += 1;
        lines[plan.line - 1] += 1;
        assert!((LOC_MIN..=LOC_MAX).contains(&plan.location_frac));
    }
    assert_eq!(counts[FaultType::NoFault.index()], 0);
    let p = 0.1;
    let expected = n as f64 * p;
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let mut chi2 = 0.0;
    for &c in &counts[1..] {
        assert!((c as f64 - expected).abs() <= 3.0 * sigma, "count {c}");
        chi2 += (c as f64 - expected).powi(2) / expected;
    }
    // 99.9th percentile of chi-square with 9 degrees of freedom
    assert!(chi2 < 27.877, "chi-square {chi2}");
    for &l in &lines {
        assert!((l as f64 - 250.0).abs() <= 3.0 * (1000.0f64 * 0.25 * 0.75).sqrt());
    }

    // the generator really uses the planned metadata
    let layout = build_channel_layout();
    let eps = generate_dataset(&GridConfig::default(), &layout, 12, 5).unwrap();
    for ep in &eps {
        let plan = plan_episode(5, ep.episode_id);
        assert_eq!((ep.fault_type, ep.faulted_line, ep.location_frac, ep.seed), (plan.fault_type, plan.line, plan.location_frac, plan.seed));
    }
}

#[test]
fn ten_episodes_have_distinct_seeds_and_valid_invariants() {
    let layout = build_channel_layout();
    let eps = generate_dataset(&GridConfig::default(), &layout, 10, 1).unwrap();
    assert_eq!(eps.len(), 10);
    let seeds: BTreeSet<u64> = eps.iter().map(|e| e.seed).collect();
    assert_eq!(seeds.len(), 10);
    for (i, ep) in eps.iter().enumerate() {
        assert_eq!(ep.episode_id, i as u64);
        ep.validate().unwrap();
        assert_eq!(ep.signals.dim(), (48, 6400));
        assert!(ep.signals.iter().all(|v| v.is_finite()));
        // the crop never needs clamping at either end
        assert!(ep.t_inception >= CROP_HALF_WIDTH_S && ep.t_inception + CROP_HALF_WIDTH_S <= 1.0);
    }
    assert!(generate_dataset(&GridConfig::default(), &layout, 0, 1).is_err());
}

#[test]
fn parallel_generation_matches_sequential() {
    let layout = build_channel_layout();
    let cfg = GridConfig::default();
    let par = generate_dataset(&cfg, &layout, 9, 42).unwrap();
    let seq = generate_dataset_sequential(&cfg, &layout, 9, 42).unwrap();
    assert_eq!(par, seq);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let threaded = pool.install(|| generate_dataset(&cfg, &layout, 9, 42).unwrap());
    assert_eq!(threaded, seq);
}

#[test]
fn identical_seed_gives_identical_episode() {
    let layout = build_channel_layout();
    let cfg = GridConfig::default();
    let a = synthesize_episode(&cfg, &layout, FaultType::BCG, 3, 0.42, 77).unwrap();
    let b = synthesize_episode(&cfg, &layout, FaultType::BCG, 3, 0.42, 77).unwrap();
    assert_eq!(a, b);
    assert!(synthesize_episode(&cfg, &layout, FaultType::NoFault, 1, 0.5, 1).is_err());
    assert!(synthesize_episode(&cfg, &layout, FaultType::AG, 5, 0.5, 1).is_err());
    assert!(synthesize_episode(&cfg, &layout, FaultType::AG, 1, 1.5, 1).is_err());
}
