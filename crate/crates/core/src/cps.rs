//! Collective Perception Service: CPM generation rules, payload assembly and
//! the context logic that decides when a CPM must be acknowledged and by whom.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::mac::{AckTag, V2xPktId};
use crate::scenario::{Kinematics, NodeId, NodeKind, ObjectClass, PerceivedObject};

/// Slack for comparing elapsed times built from repeated 0.1 s steps.
const TIME_EPS: f64 = 1e-6;

/// Placement of the acknowledgement search window relative to the critical distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrWindow {
    /// `[cd, cd + cr]`, upstream of the braking point.
    #[default]
    Upstream,
    /// `[cd - cr/2, cd + cr/2]`.
    Centered,
    /// `[cd - cr, cd]`, toward the intersection.
    Downstream,
}

impl CrWindow {
    pub fn bounds(self, cd: f64, cr: f64) -> (f64, f64) {
        match self {
            CrWindow::Upstream => (cd, cd + cr),
            CrWindow::Centered => (cd - cr / 2.0, cd + cr / 2.0),
            CrWindow::Downstream => (cd - cr, cd),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpsConfig {
    pub reaction_time_s: f64,
    pub critical_range_m: f64,
    pub emergency_decel_mps2: f64,
    pub window: CrWindow,
    pub gen_period_s: f64,
    pub vru_period_s: f64,
    pub object_period_s: f64,
    pub position_threshold_m: f64,
    pub speed_threshold_mps: f64,
    pub heading_threshold_deg: f64,
    pub sensor_info_period_s: f64,
    pub header_bytes: u32,
    pub poc_bytes: u32,
    pub sensor_info_bytes: u32,
}

impl Default for CpsConfig {
    fn default() -> Self {
        Self {
            reaction_time_s: 1.0,
            critical_range_m: 40.0,
            emergency_decel_mps2: 8.0,
            window: CrWindow::Upstream,
            gen_period_s: 0.1,
            vru_period_s: 0.5,
            object_period_s: 1.0,
            position_threshold_m: 4.0,
            speed_threshold_mps: 0.5,
            heading_threshold_deg: 4.0,
            sensor_info_period_s: 1.0,
            header_bytes: 121,
            poc_bytes: 35,
            sensor_info_bytes: 35,
        }
    }
}

/// Perceived Object Container: one object's state as carried in a CPM.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Poc {
    pub object_id: NodeId,
    pub class: ObjectClass,
    pub kinematics: Kinematics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CpmMessage {
    pub pkt_id: V2xPktId,
    pub generation_time: f64,
    pub station: Kinematics,
    pub pocs: Vec<Poc>,
    pub sensor_info: bool,
    pub header_bytes: u32,
    pub poc_bytes: u32,
    pub sensor_info_bytes: u32,
}

impl CpmMessage {
    pub fn total_size(&self) -> u32 {
        let info = if self.sensor_info { self.sensor_info_bytes } else { 0 };
        self.header_bytes + self.poc_bytes * self.pocs.len() as u32 + info
    }

    pub fn contains_vru(&self) -> bool {
        self.pocs.iter().any(|p| p.class == ObjectClass::Vru)
    }

    pub fn vrus(&self) -> impl Iterator<Item = &Poc> {
        self.pocs.iter().filter(|p| p.class == ObjectClass::Vru)
    }

    /// A message with `pocs` vehicle POCs and default container sizes.
    pub fn for_test(pkt_id: V2xPktId, pocs: usize) -> Self {
        let cfg = CpsConfig::default();
        let k = Kinematics {
            position: Default::default(),
            speed: 0.0,
            heading_deg: 0.0,
        };
        Self {
            pkt_id,
            generation_time: 0.0,
            station: k,
            pocs: (0..pocs)
                .map(|i| Poc {
                    object_id: i as NodeId,
                    class: ObjectClass::Vehicle,
                    kinematics: k,
                })
                .collect(),
            sensor_info: false,
            header_bytes: cfg.header_bytes,
            poc_bytes: cfg.poc_bytes,
            sensor_info_bytes: cfg.sensor_info_bytes,
        }
    }
}

/// Per-vehicle CPM generator holding the object table and rule timers.
#[derive(Debug, Clone)]
pub struct CpmGenerator {
    node: NodeId,
    cfg: CpsConfig,
    objects: BTreeMap<NodeId, PerceivedObject>,
    next_seq: u32,
    last_cpm_at: Option<f64>,
    last_sensor_info_at: Option<f64>,
}

impl CpmGenerator {
    pub fn new(node: NodeId, cfg: CpsConfig) -> Self {
        Self {
            node,
            cfg,
            objects: BTreeMap::new(),
            next_seq: 0,
            last_cpm_at: None,
            last_sensor_info_at: None,
        }
    }

    pub fn objects(&self) -> impl Iterator<Item = &PerceivedObject> {
        self.objects.values()
    }

    pub fn object(&self, id: NodeId) -> Option<&PerceivedObject> {
        self.objects.get(&id)
    }

    pub fn last_sensor_info_at(&self) -> Option<f64> {
        self.last_sensor_info_at
    }

    /// Replaces the object table with the current detections, keeping the
    /// inclusion history of objects that are still perceived.
    pub fn update(&mut self, detections: Vec<PerceivedObject>) {
        let mut next = BTreeMap::new();
        for det in detections {
            let obj = match self.objects.remove(&det.object_id) {
                Some(mut known) => {
                    known.kinematics = det.kinematics;
                    known.class = det.class;
                    known
                }
                None => det,
            };
            next.insert(obj.object_id, obj);
        }
        self.objects = next;
    }

    fn elapsed_at_least(t: f64, since: Option<f64>, period: f64) -> bool {
        since.is_none_or(|s| t - s >= period - TIME_EPS)
    }

    fn non_vru_due(&self, o: &PerceivedObject, t: f64) -> bool {
        let c = &self.cfg;
        o.last_included_at().is_none()
            || o.position_delta().is_some_and(|d| d > c.position_threshold_m)
            || o.speed_delta().is_some_and(|d| d > c.speed_threshold_mps)
            || o.heading_delta().is_some_and(|d| d > c.heading_threshold_deg)
            || Self::elapsed_at_least(t, o.last_included_at(), c.object_period_s)
    }

    /// One generation check. Returns the CPM to send, if any rule fires.
    pub fn generate(&mut self, t: f64, station: Kinematics) -> Option<CpmMessage> {
        let vru_due = self.objects.values().any(|o| {
            o.class == ObjectClass::Vru
                && Self::elapsed_at_least(t, o.last_included_at(), self.cfg.vru_period_s)
        });
        let included: Vec<NodeId> = self
            .objects
            .values()
            .filter(|o| match o.class {
                ObjectClass::Vru => vru_due || o.last_included_at().is_none(),
                ObjectClass::Vehicle => self.non_vru_due(o, t),
            })
            .map(|o| o.object_id)
            .collect();

        if included.is_empty()
            && !Self::elapsed_at_least(t, self.last_cpm_at, self.cfg.object_period_s)
        {
            return None;
        }

        let sensor_info = Self::elapsed_at_least(t, self.last_sensor_info_at, self.cfg.sensor_info_period_s);
        if sensor_info {
            self.last_sensor_info_at = Some(t);
        }
        let mut pocs = Vec::with_capacity(included.len());
        for id in included {
            let o = self.objects.get_mut(&id).expect("included object exists");
            o.mark_included(t);
            pocs.push(Poc {
                object_id: o.object_id,
                class: o.class,
                kinematics: o.kinematics,
            });
        }
        self.last_cpm_at = Some(t);
        let pkt_id = V2xPktId::new(self.node, self.next_seq);
        self.next_seq += 1;
        Some(CpmMessage {
            pkt_id,
            generation_time: t,
            station,
            pocs,
            sensor_info,
            header_bytes: self.cfg.header_bytes,
            poc_bytes: self.cfg.poc_bytes,
            sensor_info_bytes: self.cfg.sensor_info_bytes,
        })
    }
}

/// Reaction plus braking distance under uniform deceleration.
pub fn critical_distance(speed_mps: f64, reaction_time_s: f64, max_decel_mps2: f64) -> f64 {
    speed_mps * reaction_time_s + speed_mps * speed_mps / (2.0 * max_decel_mps2)
}

/// Only stopped (queued) vehicles request acknowledgements, and only for
/// CPMs that carry at least one VRU.
pub fn should_request_ack(cpm: &CpmMessage, sender: NodeKind) -> bool {
    sender == NodeKind::VehicleHorizontal && cpm.contains_vru()
}

/// Picks the candidate inside the search window whose distance to the
/// crosswalk is closest to `cd`. Ties go to the lower node id.
pub fn select_ack_target(candidates: &[(NodeId, f64)], cd: f64, cr: f64, window: CrWindow) -> Option<NodeId> {
    let (lo, hi) = window.bounds(cd, cr);
    candidates
        .iter()
        .filter(|(_, d)| *d >= lo && *d <= hi)
        .min_by(|a, b| {
            (a.1 - cd)
                .abs()
                .total_cmp(&(b.1 - cd).abs())
                .then(a.0.cmp(&b.0))
        })
        .map(|(id, _)| *id)
}

pub fn build_tag(cpm: &CpmMessage, target: NodeId) -> AckTag {
    AckTag::new(cpm.pkt_id, target)
}
