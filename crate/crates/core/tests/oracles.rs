//! Hand-computed and brute-force oracles for derived quantities.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use chargescope::behavior::detect_fluctuation;
use chargescope::classification::{capacity_loss, relative_dispersion};
use chargescope::config::AnalysisConfig;
use chargescope::domain::{BatterySample, Charger, FuelGauge, Health, Screen, Technique};
use chargescope::ingestion::{group_by_user, parse_samples, InputFormat, TimeUnit};
use chargescope::pipeline::{analyze_user, build_profiles};
use chargescope::segmentation::segment_user;
use chargescope::synthgen::{generate_trace, TraceSpec};

fn sample(user: &str, t: f64, soc: u8) -> BatterySample {
    BatterySample {
        timestamp: t,
        user_id: Arc::from(user),
        model: Arc::from("m"),
        soc,
        voltage_mv: 3900,
        temperature_c: 30.0,
        health: Health::Good,
        charger: Charger::Ac,
        charging: true,
        screen: Screen::Off,
    }
}

#[test]
fn capacity_loss_hand_summed() {
    // mean 4120, 80 mV short of 4200
    assert_eq!(capacity_loss(&[4100.0, 4140.0, 4120.0], 4200.0).unwrap(), 8.0);
    assert_eq!(capacity_loss(&[4300.0], 4350.0).unwrap(), 5.0);
    assert_eq!(capacity_loss(&[4400.0, 4380.0], 4350.0).unwrap(), 0.0);
    assert!(capacity_loss(&[], 4200.0).is_err());
}

#[test]
fn dispersion_hand_computed() {
    let values: Vec<f64> = (1..=20).map(f64::from).collect();
    // q1 = 5.75, q3 = 15.25, median = 10.5
    let d = relative_dispersion(&values).unwrap();
    assert!((d - 9.5 / 10.5).abs() < 1e-12);
    assert_eq!(relative_dispersion(&[60.0; 30]), Some(0.0));
    assert_eq!(relative_dispersion(&[0.0; 5]), None);
}

#[test]
fn dedup_matches_set_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let users = ["a", "b", "c"];
    let mut text = String::new();
    let mut expected: Vec<(String, f64, u8)> = Vec::new();
    for _ in 0..1000 {
        let user = users[rng.random_range(0..3)];
        let t = f64::from(rng.random_range(0..200u32)) * 60.0;
        let soc: u8 = rng.random_range(40..45);
        text.push_str(&format!(
            r#"{{"time":{t},"user":"{user}","model":"m","soc":{soc},"voltage_mv":3900,"temp_c":30,"health":"good","charger":"ac","charging":true,"screen":"off"}}"#
        ));
        text.push('\n');
        expected.push((user.to_string(), t, soc));
    }
    let parsed = parse_samples(text.as_bytes(), InputFormat::Jsonl, TimeUnit::Seconds).unwrap();
    assert_eq!(parsed.samples.len(), 1000);
    let groups = group_by_user(parsed.samples);

    for user in users {
        let want: BTreeSet<(u64, u8)> = expected
            .iter()
            .filter(|(u, _, _)| u == user)
            .map(|(_, t, s)| (*t as u64, *s))
            .collect();
        let got: Vec<(u64, u8)> = groups[user].iter().map(|s| (s.timestamp as u64, s.soc)).collect();
        // BTreeSet iteration is (time, soc) ordered; the grouping keeps
        // first-arrival order among equal timestamps, so compare as sets and
        // check time order separately.
        assert_eq!(got.len(), want.len(), "user {user}");
        assert_eq!(got.iter().copied().collect::<BTreeSet<_>>(), want);
        assert!(got.windows(2).all(|w| w[0].0 <= w[1].0));
    }
}

#[test]
fn segmentation_matches_threshold_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..300 {
        let mut t = 0.0;
        let mut soc: u8 = 20;
        let samples: Vec<_> = (0..rng.random_range(2..60))
            .map(|_| {
                t += f64::from(rng.random_range(30..3000u32));
                soc = (i32::from(soc) + rng.random_range(-2..=4)).clamp(0, 100) as u8;
                sample("u", t, soc)
            })
            .collect();
        for thr in [0.03, 0.07] {
            // An event closes after every step whose rate is at or below thr.
            let mut boundaries = Vec::new();
            for (i, w) in samples.windows(2).enumerate() {
                let gain = f64::from(w[1].soc) - f64::from(w[0].soc);
                let secs_per_pct_at_1c = 36.0;
                let rate = if gain > 0.0 { secs_per_pct_at_1c * gain / (w[1].timestamp - w[0].timestamp) } else { 0.0 };
                if rate <= thr {
                    boundaries.push(i);
                }
            }
            let events = segment_user(&samples, thr);
            let mut got = Vec::new();
            let mut offset = 0;
            for ev in &events {
                offset += ev.steps.len();
                if ev.closed {
                    got.push(offset - 1);
                }
            }
            assert_eq!(got, boundaries);
            let open_tail = usize::from(boundaries.last().is_none_or(|b| b + 2 < samples.len()));
            assert_eq!(events.len(), boundaries.len() + open_tail);
        }
    }
}

#[test]
fn fluctuation_matches_constructed_bounces() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..500 {
        let level: u8 = rng.random_range(10..90);
        let moves: u32 = rng.random_range(1..12);
        let mut socs = vec![level - 6, level - 4, level - 2, level];
        let mut cur = level;
        for _ in 0..moves {
            cur = if cur == level { level + 1 } else { level };
            for _ in 0..rng.random_range(1..4) {
                socs.push(cur);
            }
        }
        socs.push(cur + 2);
        socs.push(cur + 4);
        let samples: Vec<_> = socs
            .iter()
            .enumerate()
            .map(|(i, &s)| sample("u", 60.0 * i as f64, s))
            .collect();
        // 5 up 6 down 5 up 6 is three moves and two reversals.
        let reversals = moves - 1;
        let found = detect_fluctuation(&samples, 2);
        if reversals >= 2 {
            assert_eq!(found.len(), 1, "{socs:?}");
            assert_eq!((found[0].soc_low, found[0].soc_high), (level, level + 1));
            assert_eq!(found[0].repetitions, reversals);
        } else {
            assert!(found.is_empty(), "{socs:?}");
        }
    }
}

fn profile(spec: &TraceSpec) -> chargescope::pipeline::ProfileResult {
    let cfg = AnalysisConfig::default().finalize().unwrap();
    let trace = generate_trace(spec).unwrap();
    let analysis = analyze_user(trace.samples, &cfg).unwrap();
    build_profiles([&analysis], &cfg).remove(0)
}

#[test]
fn synthetic_dlc_loss_round_trip() {
    let spec = TraceSpec {
        capacity_loss_pct: 10.0,
        ..TraceSpec::new(Technique::Dlc, FuelGauge::CoulombCounter)
    };
    let r = profile(&spec);
    assert_eq!(r.profile.technique, Technique::Dlc);
    // 10% loss leaves the final voltage 100 mV under 4350.
    assert_eq!(r.profile.final_voltage_mean, Some(4250.0));
    assert_eq!(r.profile.capacity_loss_pct, Some(10.0));
}

#[test]
fn synthetic_pulse_shows_reversals() {
    let r = profile(&TraceSpec::new(Technique::FastPulse, FuelGauge::CoulombCounter));
    assert_eq!(r.profile.technique, Technique::FastPulse);
    assert!(r.evidence.technique.pulse.reversals >= 4);
    let r = profile(&TraceSpec::new(Technique::CcCv, FuelGauge::CoulombCounter));
    assert_eq!(r.evidence.technique.pulse.reversals, 0);
}
