mod common;

use common::golden::{detections, emissions, expected, k, B};
use v2x_bcast_ack::cps::{CpmGenerator, CpsConfig};

#[test]
fn scripted_history_matches_hand_derivation() {
    assert_eq!(emissions().unwrap(), expected());
}

#[test]
fn carried_state_is_the_state_at_generation() {
    let mut g = CpmGenerator::new(5, CpsConfig::default());
    let station = k(-13.0, -2.5, 0.0, 0.0);
    for step in 0..=27u32 {
        let t = f64::from(step) * 0.1;
        g.update(detections(step, t));
        if let Some(cpm) = g.generate(t, station) {
            for poc in &cpm.pocs {
                let live = g.object(poc.object_id).unwrap();
                assert_eq!(poc.kinematics, live.kinematics);
            }
            assert_eq!(cpm.station, station);
        }
    }
    let b = g.object(B).unwrap();
    assert!((b.snapshot().unwrap().position.x - 6.0 * 0.7).abs() < 1e-9);
}
