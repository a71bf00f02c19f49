//! Ten seconds of scripted perception fed to one generator at 10 Hz.

use v2x_bcast_ack::cps::{CpmGenerator, CpsConfig};
use v2x_bcast_ack::geometry::Vec2;
use v2x_bcast_ack::scenario::{Kinematics, NodeId, ObjectClass, PerceivedObject};

pub const A: NodeId = 1; // parked car, age rule only
pub const B: NodeId = 2; // 6 m/s car, position rule
pub const C: NodeId = 3; // speed step at 5.5 s
pub const D: NodeId = 4; // heading step at 7.2 s
pub const P: NodeId = 10; // pedestrian, 3.0 s to 4.6 s
pub const Q: NodeId = 11; // pedestrian, 4.2 s to 6.0 s

pub fn k(x: f64, y: f64, speed: f64, heading: f64) -> Kinematics {
    Kinematics { position: Vec2::new(x, y), speed, heading_deg: heading }
}

pub fn detections(step: u32, t: f64) -> Vec<PerceivedObject> {
    let mut out = Vec::new();
    let mut add = |id, class, kin| out.push(PerceivedObject::new(id, class, kin, t));
    if step < 80 {
        add(A, ObjectClass::Vehicle, k(0.0, 0.0, 0.0, 0.0));
    }
    if (20..50).contains(&step) {
        add(B, ObjectClass::Vehicle, k(6.0 * (t - 2.0), 20.0, 6.0, 0.0));
    }
    if (50..80).contains(&step) {
        let speed = if step < 55 { 10.0 } else { 10.6 };
        add(C, ObjectClass::Vehicle, k(0.0, -20.0, speed, 270.0));
        let heading = if step < 72 { 90.0 } else { 95.0 };
        add(D, ObjectClass::Vehicle, k(0.0, -30.0, 0.0, heading));
    }
    if (30..46).contains(&step) {
        add(P, ObjectClass::Vru, k(-10.0 + 1.4 * (t - 3.0), 12.0, 1.4, 0.0));
    }
    if (42..60).contains(&step) {
        add(Q, ObjectClass::Vru, k(10.0 - 1.4 * (t - 4.2), 12.0, 1.4, 180.0));
    }
    out
}

/// (step, object ids, sensor info) for every CPM, derived by hand.
pub const EXPECTED: &[(u32, &[NodeId], bool)] = &[
    (0, &[A], true),
    (10, &[A], true),
    (20, &[A, B], true),
    (27, &[B], false),
    (30, &[A, P], true),
    (34, &[B], false),
    (35, &[P], false),
    (40, &[A, P], true),
    (41, &[B], false),
    (42, &[P, Q], false),
    (47, &[Q], false),
    (48, &[B], false),
    (50, &[A, C, D], true),
    (52, &[Q], false),
    (55, &[C], false),
    (57, &[Q], false),
    (60, &[A, D], true),
    (65, &[C], false),
    (70, &[A, D], true),
    (72, &[D], false),
    (75, &[C], false),
    (85, &[], true),
    (95, &[], true),
];

/// Runs the script and returns (step, sorted object ids, sensor info) per
/// CPM, checking size and sequence numbering on the way.
pub fn emissions() -> Result<Vec<(u32, Vec<NodeId>, bool)>, String> {
    let mut g = CpmGenerator::new(99, CpsConfig::default());
    let station = k(-13.0, -2.5, 0.0, 0.0);
    let mut got = Vec::new();
    for step in 0..100u32 {
        let t = f64::from(step) * 0.1;
        g.update(detections(step, t));
        if let Some(cpm) = g.generate(t, station) {
            let mut ids: Vec<NodeId> = cpm.pocs.iter().map(|p| p.object_id).collect();
            ids.sort_unstable();
            let size = 121 + 35 * ids.len() as u32 + if cpm.sensor_info { 35 } else { 0 };
            if cpm.total_size() != size {
                return Err(format!("size {} at step {step}, expected {size}", cpm.total_size()));
            }
            if cpm.pkt_id.seq as usize != got.len() || (cpm.generation_time - t).abs() > 1e-12 {
                return Err(format!("bad id or time at step {step}"));
            }
            got.push((step, ids, cpm.sensor_info));
        }
    }
    Ok(got)
}

pub fn expected() -> Vec<(u32, Vec<NodeId>, bool)> {
    EXPECTED.iter().map(|(s, ids, si)| (*s, ids.to_vec(), *si)).collect()
}
