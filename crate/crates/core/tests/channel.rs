mod common;

use common::brute::brute_hits;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use v2x_bcast_ack::channel::{
    classify_los, pathloss_db, pathloss_los_db, pathloss_nlos_db, shadowing_sample, thermal_noise_dbm,
};
use v2x_bcast_ack::geometry::Vec2;
use v2x_bcast_ack::scenario::{RoadLayout, ScenarioConfig};
use v2x_bcast_ack::{LinkCondition, RadioConfig};

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v.sqrt())
}

#[test]
fn shadowing_sample_moments() {
    let cfg = RadioConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (cond, sigma) in [
        (LinkCondition::Los, cfg.shadowing_sigma_los_db),
        (LinkCondition::Nlos, cfg.shadowing_sigma_nlos_db),
    ] {
        let xs: Vec<f64> = (0..200_000).map(|_| shadowing_sample(&mut rng, cond, &cfg)).collect();
        let (m, s) = moments(&xs);
        // Five standard errors on the mean, 2 % on the deviation.
        assert!(m.abs() < 5.0 * sigma / (xs.len() as f64).sqrt(), "{cond:?} mean {m}");
        assert!((s / sigma - 1.0).abs() < 0.02, "{cond:?} std {s}");
    }
    let off = RadioConfig { shadowing_enabled: false, ..cfg };
    assert_eq!(shadowing_sample(&mut rng, LinkCondition::Nlos, &off), 0.0);
}

#[test]
fn noise_floor() {
    let cfg = RadioConfig::default();
    assert!((cfg.noise_floor_dbm() + 95.0).abs() <= 0.01);
    // kTB at 290 K over 10 MHz is -104 dBm.
    let ktb = 10.0 * (1.380_649e-23_f64 * 290.0 * 10e6 / 1e-3).log10();
    assert!((thermal_noise_dbm(10e6, 9.0) - (ktb + 9.0)).abs() < 0.03);
}

#[test]
fn los_classifier_matches_brute_force() {
    let layout = RoadLayout::from_config(&ScenarioConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut nlos = 0;
    for i in 0..10_000 {
        // Half the pairs on the streets, half anywhere.
        let mut point = |on_street: bool| loop {
            let p = Vec2::new(rng.random_range(-150.0..150.0), rng.random_range(-150.0..150.0));
            if !on_street || layout.on_street(p) {
                break p;
            }
        };
        let a = point(i % 2 == 0);
        let b = point(i % 2 == 0);
        let want = if layout.blocks.iter().any(|r| brute_hits(r, a, b)) {
            LinkCondition::Nlos
        } else {
            LinkCondition::Los
        };
        assert_eq!(classify_los(a, b, &layout), want, "{a:?} -> {b:?}");
        nlos += usize::from(want == LinkCondition::Nlos);
    }
    assert!(nlos > 1000 && nlos < 9000, "{nlos}");
}

#[test]
fn pathloss_shape() {
    // Doubling distance adds 22.7 log10(2) in LOS.
    let d = pathloss_los_db(80.0, 5.9) - pathloss_los_db(40.0, 5.9);
    assert!((d - 22.7 * 2f64.log10()).abs() < 1e-9);
    assert!((pathloss_los_db(1.0, 5.0) - 41.0).abs() < 1e-12);
    // NLOS is symmetric in the two legs and lossier than LOS over the same path length.
    assert_eq!(pathloss_nlos_db(30.0, 50.0, 5.9), pathloss_nlos_db(50.0, 30.0, 5.9));
    assert!(pathloss_nlos_db(30.0, 50.0, 5.9) > pathloss_los_db(80.0, 5.9));
    let a = Vec2::new(-13.0, -2.5);
    let b = Vec2::new(-2.5, 60.0);
    assert!(pathloss_db(a, b, LinkCondition::Nlos, 5.9, 3.0) > pathloss_db(a, b, LinkCondition::Los, 5.9, 3.0));
    let near = pathloss_db(a, a, LinkCondition::Los, 5.9, 3.0);
    assert!((near - pathloss_los_db(3.0, 5.9)).abs() < 1e-12);
}
