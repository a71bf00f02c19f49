//! Urban intersection world model: road layout, mobility and sensing.
//!
//! Coordinates put the intersection centre at the origin. The vertical street
//! runs along the y axis and the horizontal street along the x axis, both
//! `street_half_width_m` wide on each side of their axis. Vertical-lane
//! vehicles drive south (heading 270°) through the crosswalk on the northern
//! edge of the intersection; the horizontal queue waits eastbound at the stop
//! line west of the intersection.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::geometry::{heading_delta_deg, Rect, Vec2};

pub type NodeId = u32;

const HEADING_SOUTH: f64 = 270.0;
const HEADING_EAST: f64 = 0.0;
const HEADING_WEST: f64 = 180.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub vehicle_speed_mps: f64,
    pub density_veh_per_km: f64,
    /// Minimum time headway between consecutive vertical-lane arrivals.
    pub min_headway_s: f64,
    /// Distance before the crosswalk at which vertical vehicles enter.
    pub entry_distance_m: f64,
    /// Distance past the crosswalk at which vertical vehicles leave.
    pub exit_distance_m: f64,
    pub queue_size: u32,
    pub queue_spacing_m: f64,
    /// Gap between the street edge and the first queued vehicle.
    pub stop_line_offset_m: f64,
    pub pedestrian_mean_interarrival_s: f64,
    pub pedestrian_speed_mps: f64,
    pub sensor_range_m: f64,
    pub street_half_width_m: f64,
    pub lane_offset_m: f64,
    /// Crosswalk distance beyond the northern street edge of the horizontal street.
    pub crosswalk_offset_m: f64,
    pub area_half_extent_m: f64,
    pub mobility_step_s: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            vehicle_speed_mps: 20.0,
            density_veh_per_km: 50.0,
            min_headway_s: 0.5,
            entry_distance_m: 500.0,
            exit_distance_m: 200.0,
            queue_size: 10,
            queue_spacing_m: 5.0,
            stop_line_offset_m: 3.0,
            pedestrian_mean_interarrival_s: 10.0,
            pedestrian_speed_mps: 1.4,
            sensor_range_m: 65.0,
            street_half_width_m: 10.0,
            lane_offset_m: 2.5,
            crosswalk_offset_m: 2.0,
            area_half_extent_m: 1000.0,
            mobility_step_s: 0.01,
        }
    }
}

impl ScenarioConfig {
    /// Mean vertical-lane arrival interval: 1 / (density × speed).
    pub fn mean_spawn_interval_s(&self) -> Option<f64> {
        let flow = self.density_veh_per_km / 1000.0 * self.vehicle_speed_mps;
        (flow > 0.0).then(|| 1.0 / flow)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoadLayout {
    pub street_half_width: f64,
    /// x of the southbound lane centre on the vertical street.
    pub vertical_lane_x: f64,
    /// y of the eastbound lane centre on the horizontal street.
    pub horizontal_lane_y: f64,
    pub crosswalk: Vec2,
    pub blocks: [Rect; 4],
}

impl RoadLayout {
    pub fn from_config(cfg: &ScenarioConfig) -> Self {
        let hw = cfg.street_half_width_m;
        let e = cfg.area_half_extent_m;
        let blocks = [
            Rect::new(Vec2::new(hw, hw), Vec2::new(e, e)),
            Rect::new(Vec2::new(-e, hw), Vec2::new(-hw, e)),
            Rect::new(Vec2::new(-e, -e), Vec2::new(-hw, -hw)),
            Rect::new(Vec2::new(hw, -e), Vec2::new(e, -hw)),
        ];
        Self {
            street_half_width: hw,
            vertical_lane_x: -cfg.lane_offset_m,
            horizontal_lane_y: -cfg.lane_offset_m,
            crosswalk: Vec2::new(0.0, hw + cfg.crosswalk_offset_m),
            blocks,
        }
    }

    pub fn vertical_corridor(&self, extent: f64) -> Rect {
        Rect::new(
            Vec2::new(-self.street_half_width, -extent),
            Vec2::new(self.street_half_width, extent),
        )
    }

    pub fn horizontal_corridor(&self, extent: f64) -> Rect {
        Rect::new(
            Vec2::new(-extent, -self.street_half_width),
            Vec2::new(extent, self.street_half_width),
        )
    }

    /// True iff `p` lies on one of the two streets.
    pub fn on_street(&self, p: Vec2) -> bool {
        p.x.abs() <= self.street_half_width || p.y.abs() <= self.street_half_width
    }

    /// Line of sight between two points: no building block is crossed.
    pub fn line_of_sight(&self, a: Vec2, b: Vec2) -> bool {
        !self.blocks.iter().any(|r| r.intersects_segment(a, b))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NodeKind {
    VehicleVertical,
    VehicleHorizontal,
    Pedestrian,
}

impl NodeKind {
    pub fn is_vehicle(self) -> bool {
        !matches!(self, NodeKind::Pedestrian)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kinematics {
    pub position: Vec2,
    pub speed: f64,
    pub heading_deg: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeState {
    pub id: NodeId,
    pub kind: NodeKind,
    pub position: Vec2,
    pub speed: f64,
    pub heading_deg: f64,
    /// Signed distance to the crosswalk; positive before crossing.
    pub distance_to_crosswalk: f64,
    pub spawned_at: f64,
}

impl NodeState {
    pub fn kinematics(&self) -> Kinematics {
        Kinematics {
            position: self.position,
            speed: self.speed,
            heading_deg: self.heading_deg,
        }
    }

    fn velocity(&self) -> Vec2 {
        Vec2::from_heading(self.heading_deg) * self.speed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectClass {
    Vru,
    Vehicle,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Inclusion {
    at: f64,
    snapshot: Kinematics,
}

/// A sensed object track together with its CPM inclusion history.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceivedObject {
    pub object_id: NodeId,
    pub class: ObjectClass,
    pub kinematics: Kinematics,
    pub first_detected_at: f64,
    inclusion: Option<Inclusion>,
}

impl PerceivedObject {
    pub fn new(object_id: NodeId, class: ObjectClass, kinematics: Kinematics, t: f64) -> Self {
        Self {
            object_id,
            class,
            kinematics,
            first_detected_at: t,
            inclusion: None,
        }
    }

    pub fn last_included_at(&self) -> Option<f64> {
        self.inclusion.map(|i| i.at)
    }

    pub fn snapshot(&self) -> Option<Kinematics> {
        self.inclusion.map(|i| i.snapshot)
    }

    /// Records inclusion in a CPM at `t`; time and snapshot change together.
    pub fn mark_included(&mut self, t: f64) {
        self.inclusion = Some(Inclusion {
            at: t,
            snapshot: self.kinematics,
        });
    }

    pub fn position_delta(&self) -> Option<f64> {
        self.snapshot().map(|s| s.position.distance(self.kinematics.position))
    }

    pub fn speed_delta(&self) -> Option<f64> {
        self.snapshot().map(|s| (s.speed - self.kinematics.speed).abs())
    }

    pub fn heading_delta(&self) -> Option<f64> {
        self.snapshot()
            .map(|s| heading_delta_deg(s.heading_deg, self.kinematics.heading_deg))
    }
}

/// Mutable world state: nodes, arrival processes and geometry.
#[derive(Debug, Clone)]
pub struct Scenario {
    cfg: ScenarioConfig,
    layout: RoadLayout,
    nodes: BTreeMap<NodeId, NodeState>,
    next_id: NodeId,
    next_vehicle_at: Option<f64>,
    next_pedestrian_at: Option<f64>,
    now: f64,
}

impl Scenario {
    /// Builds the world at t = 0: the static horizontal queue plus a vertical
    /// lane pre-filled with the same headway process used for arrivals.
    pub fn new<R: Rng>(cfg: ScenarioConfig, rng: &mut R) -> Self {
        let layout = RoadLayout::from_config(&cfg);
        let mut s = Self {
            cfg,
            layout,
            nodes: BTreeMap::new(),
            next_id: 0,
            next_vehicle_at: None,
            next_pedestrian_at: None,
            now: 0.0,
        };
        let front_x = -(s.cfg.street_half_width_m + s.cfg.stop_line_offset_m);
        for i in 0..s.cfg.queue_size {
            let x = front_x - f64::from(i) * s.cfg.queue_spacing_m;
            let position = Vec2::new(x, s.layout.horizontal_lane_y);
            s.insert(NodeKind::VehicleHorizontal, position, 0.0, HEADING_EAST, 0.0);
        }
        if s.cfg.mean_spawn_interval_s().is_some() {
            let v = s.cfg.vehicle_speed_mps;
            let mut d = -s.cfg.exit_distance_m + s.headway(rng) * v;
            while d <= s.cfg.entry_distance_m {
                let p = s.vertical_position(d);
                s.insert(NodeKind::VehicleVertical, p, v, HEADING_SOUTH, 0.0);
                d += s.headway(rng) * v;
            }
            // The gap to the first arrival continues the last sampled headway.
            let gap_to_entry = (d - s.cfg.entry_distance_m) / v;
            s.next_vehicle_at = Some(gap_to_entry);
        }
        if s.cfg.pedestrian_mean_interarrival_s > 0.0 {
            s.next_pedestrian_at = Some(s.pedestrian_gap(rng));
        }
        s
    }

    pub fn config(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn layout(&self) -> &RoadLayout {
        &self.layout
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeState> {
        self.nodes.values()
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeState> {
        self.nodes.get(&id)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn vertical_vehicles(&self) -> impl Iterator<Item = &NodeState> {
        self.nodes
            .values()
            .filter(|n| n.kind == NodeKind::VehicleVertical)
    }

    pub fn pedestrians(&self) -> impl Iterator<Item = &NodeState> {
        self.nodes.values().filter(|n| n.kind == NodeKind::Pedestrian)
    }

    pub fn queued_vehicles(&self) -> impl Iterator<Item = &NodeState> {
        self.nodes
            .values()
            .filter(|n| n.kind == NodeKind::VehicleHorizontal)
    }

    fn vertical_position(&self, distance_to_crosswalk: f64) -> Vec2 {
        Vec2::new(
            self.layout.vertical_lane_x,
            self.layout.crosswalk.y + distance_to_crosswalk,
        )
    }

    fn headway<R: Rng>(&self, rng: &mut R) -> f64 {
        let mean = self
            .cfg
            .mean_spawn_interval_s()
            .expect("headway requested with zero flow");
        let floor = self.cfg.min_headway_s.min(mean);
        let excess = mean - floor;
        if excess <= 0.0 {
            floor
        } else {
            floor + Exp::new(1.0 / excess).expect("positive rate").sample(rng)
        }
    }

    fn pedestrian_gap<R: Rng>(&self, rng: &mut R) -> f64 {
        Exp::new(1.0 / self.cfg.pedestrian_mean_interarrival_s)
            .expect("positive rate")
            .sample(rng)
    }

    fn insert(&mut self, kind: NodeKind, position: Vec2, speed: f64, heading_deg: f64, t: f64) -> NodeId {
        let id = self.next_id;
        self.next_id += 1;
        let distance_to_crosswalk = self.distance_to_crosswalk(kind, position);
        self.nodes.insert(
            id,
            NodeState {
                id,
                kind,
                position,
                speed,
                heading_deg,
                distance_to_crosswalk,
                spawned_at: t,
            },
        );
        id
    }

    fn distance_to_crosswalk(&self, kind: NodeKind, p: Vec2) -> f64 {
        match kind {
            NodeKind::VehicleVertical => p.y - self.layout.crosswalk.y,
            _ => p.distance(self.layout.crosswalk),
        }
    }

    /// Spawns every vertical vehicle and pedestrian whose arrival time is
    /// `<= t`, placing late spawns where they would be at `t`.
    pub fn spawn_traffic<R: Rng>(&mut self, rng: &mut R, t: f64) -> Vec<NodeState> {
        let mut spawned = Vec::new();
        while let Some(at) = self.next_vehicle_at.filter(|at| *at <= t) {
            let v = self.cfg.vehicle_speed_mps;
            let d = self.cfg.entry_distance_m - v * (t - at);
            let p = self.vertical_position(d);
            let id = self.insert(NodeKind::VehicleVertical, p, v, HEADING_SOUTH, at);
            spawned.push(self.nodes[&id].clone());
            self.next_vehicle_at = Some(at + self.headway(rng));
        }
        while let Some(at) = self.next_pedestrian_at.filter(|at| *at <= t) {
            let hw = self.cfg.street_half_width_m;
            let eastbound = rng.random_bool(0.5);
            let (x0, heading) = if eastbound { (-hw, HEADING_EAST) } else { (hw, HEADING_WEST) };
            let walked = self.cfg.pedestrian_speed_mps * (t - at);
            let x = if eastbound { x0 + walked } else { x0 - walked };
            let p = Vec2::new(x, self.layout.crosswalk.y);
            let id = self.insert(NodeKind::Pedestrian, p, self.cfg.pedestrian_speed_mps, heading, at);
            spawned.push(self.nodes[&id].clone());
            self.next_pedestrian_at = Some(at + self.pedestrian_gap(rng));
        }
        spawned
    }

    /// Moves every node by `dt` and removes nodes that left the area.
    /// Returns the ids removed.
    pub fn advance(&mut self, dt: f64) -> Vec<NodeId> {
        assert!(dt > 0.0, "advance requires dt > 0, got {dt}");
        self.now += dt;
        let hw = self.cfg.street_half_width_m;
        let exit = -self.cfg.exit_distance_m;
        let crosswalk = self.layout.crosswalk;
        let mut removed = Vec::new();
        for n in self.nodes.values_mut() {
            if n.speed == 0.0 {
                continue;
            }
            n.position = n.position + n.velocity() * dt;
            match n.kind {
                NodeKind::VehicleVertical => {
                    n.distance_to_crosswalk = n.position.y - crosswalk.y;
                }
                _ => n.distance_to_crosswalk = n.position.distance(crosswalk),
            }
        }
        for n in self.nodes.values() {
            let gone = match n.kind {
                NodeKind::VehicleVertical => n.distance_to_crosswalk < exit,
                NodeKind::Pedestrian => n.position.x.abs() > hw,
                NodeKind::VehicleHorizontal => false,
            };
            if gone {
                removed.push(n.id);
            }
        }
        for id in &removed {
            self.nodes.remove(id);
        }
        removed
    }

    /// Objects currently perceived by `observer`.
    ///
    /// Pedestrians are only seen by queued vehicles whose forward view is not
    /// shadowed by another queued vehicle standing between them and the
    /// pedestrian; vehicles are seen by any vehicle within range and LOS.
    pub fn sense(&self, observer: NodeId, t: f64) -> Vec<PerceivedObject> {
        let Some(obs) = self.nodes.get(&observer) else {
            return Vec::new();
        };
        if !obs.kind.is_vehicle() {
            return Vec::new();
        }
        let range = self.cfg.sensor_range_m;
        let mut out = Vec::new();
        for other in self.nodes.values() {
            if other.id == observer || other.position.distance(obs.position) > range {
                continue;
            }
            if !self.layout.line_of_sight(obs.position, other.position) {
                continue;
            }
            let class = match other.kind {
                NodeKind::Pedestrian => {
                    if obs.kind != NodeKind::VehicleHorizontal || self.front_shadowed(obs, other.position) {
                        continue;
                    }
                    ObjectClass::Vru
                }
                _ => ObjectClass::Vehicle,
            };
            out.push(PerceivedObject::new(other.id, class, other.kinematics(), t));
        }
        out
    }

    fn front_shadowed(&self, obs: &NodeState, target: Vec2) -> bool {
        self.queued_vehicles().any(|q| {
            q.id != obs.id
                && (q.position.y - obs.position.y).abs() < 1e-9
                && q.position.x > obs.position.x
                && q.position.x < target.x
        })
    }

    /// True iff some queued vehicle currently perceives pedestrian `ped`.
    pub fn pedestrian_perceived(&self, ped: NodeId) -> bool {
        let Some(p) = self.nodes.get(&ped) else {
            return false;
        };
        self.queued_vehicles().any(|q| {
            q.position.distance(p.position) <= self.cfg.sensor_range_m
                && self.layout.line_of_sight(q.position, p.position)
                && !self.front_shadowed(q, p.position)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RngStreams;

    fn quiet_config() -> ScenarioConfig {
        ScenarioConfig {
            density_veh_per_km: 0.0,
            pedestrian_mean_interarrival_s: 0.0,
            ..ScenarioConfig::default()
        }
    }

    fn world(cfg: ScenarioConfig) -> Scenario {
        Scenario::new(cfg, &mut RngStreams::new(1).stream("spawn"))
    }

    fn place(s: &mut Scenario, kind: NodeKind, p: Vec2, speed: f64, heading: f64) -> NodeId {
        s.insert(kind, p, speed, heading, 0.0)
    }

    #[test]
    fn spawn_interval_from_density_and_speed() {
        let cfg = ScenarioConfig::default();
        assert!((cfg.mean_spawn_interval_s().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_density_never_spawns_vertical_vehicles() {
        let mut s = world(quiet_config());
        let mut rng = RngStreams::new(1).stream("spawn");
        for k in 1..=1000 {
            s.spawn_traffic(&mut rng, k as f64 * 0.1);
        }
        assert_eq!(s.vertical_vehicles().count(), 0);
    }

    #[test]
    fn queue_is_static_from_t0() {
        let mut s = world(ScenarioConfig { queue_size: 10, ..quiet_config() });
        let before: Vec<_> = s.queued_vehicles().map(|n| n.position).collect();
        assert_eq!(before.len(), 10);
        s.advance(5.0);
        let after: Vec<_> = s.queued_vehicles().map(|n| n.position).collect();
        assert_eq!(before, after);
        assert!(s.queued_vehicles().all(|n| n.speed == 0.0));
    }

    #[test]
    fn vertical_vehicle_kinematics() {
        let mut s = world(quiet_config());
        let p = s.vertical_position(100.0);
        let id = place(&mut s, NodeKind::VehicleVertical, p, 20.0, HEADING_SOUTH);
        s.advance(1.0);
        assert!((s.node(id).unwrap().distance_to_crosswalk - 80.0).abs() < 1e-9);
    }

    #[test]
    fn pedestrian_walks_and_vehicle_past_exit_is_removed() {
        let mut s = world(ScenarioConfig { exit_distance_m: 0.0, ..quiet_config() });
        let ped = place(&mut s, NodeKind::Pedestrian, Vec2::new(-5.0, 12.0), 1.4, HEADING_EAST);
        let p = s.vertical_position(-10.0);
        let car = place(&mut s, NodeKind::VehicleVertical, p, 20.0, HEADING_SOUTH);
        let removed = s.advance(1.0);
        assert_eq!(removed, vec![car]);
        assert!((s.node(ped).unwrap().position.x - -3.6).abs() < 1e-9);
    }

    #[test]
    fn front_queued_vehicle_detects_pedestrian_others_do_not() {
        let mut s = world(quiet_config());
        let ped = place(&mut s, NodeKind::Pedestrian, Vec2::new(-2.0, 12.0), 1.4, HEADING_EAST);
        let queue: Vec<_> = s.queued_vehicles().map(|n| n.id).collect();
        let front = queue[0];
        let second = queue[1];
        let sees = |s: &Scenario, o| s.sense(o, 0.0).iter().any(|p| p.object_id == ped);
        assert!(sees(&s, front));
        assert!(!sees(&s, second));
        assert!(s.pedestrian_perceived(ped));

        let p = s.vertical_position(40.0);
        let v = place(&mut s, NodeKind::VehicleVertical, p, 20.0, HEADING_SOUTH);
        assert!(!sees(&s, v));
        // The vertical vehicle still perceives vehicles in range.
        let p2 = s.vertical_position(60.0);
        let v2 = place(&mut s, NodeKind::VehicleVertical, p2, 20.0, HEADING_SOUTH);
        assert!(s.sense(v, 0.0).iter().any(|o| o.object_id == v2 && o.class == ObjectClass::Vehicle));
    }

    #[test]
    fn at_most_one_queued_vehicle_sees_each_pedestrian() {
        let mut s = world(quiet_config());
        let queue: Vec<_> = s.queued_vehicles().map(|n| n.id).collect();
        for i in 0..=40 {
            let x = -10.0 + 0.5 * f64::from(i);
            let ped = place(&mut s, NodeKind::Pedestrian, Vec2::new(x, 12.0), 1.4, HEADING_EAST);
            let seers = queue
                .iter()
                .filter(|q| s.sense(**q, 0.0).iter().any(|o| o.object_id == ped))
                .count();
            assert!(seers <= 1, "pedestrian at x={x} seen by {seers}");
            s.nodes.remove(&ped);
        }
    }

    #[test]
    fn long_run_density_matches_configuration() {
        let cfg = ScenarioConfig::default();
        let mut rng = RngStreams::new(11).stream("spawn");
        let mut s = Scenario::new(cfg.clone(), &mut rng);
        let lane_km = (cfg.entry_distance_m + cfg.exit_distance_m) / 1000.0;
        let dt = cfg.mobility_step_s * 10.0;
        let mut samples = Vec::new();
        let mut t = 0.0;
        for k in 1..=2000 {
            t = f64::from(k) * dt;
            s.spawn_traffic(&mut rng, t);
            s.advance(dt);
            if k % 10 == 0 {
                samples.push(s.vertical_vehicles().count() as f64 / lane_km);
            }
        }
        assert!((t - 200.0).abs() < 1e-6);
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        assert!((mean - 50.0).abs() <= 0.15 * 50.0, "mean density {mean}");
    }

    #[test]
    fn inclusion_updates_time_and_snapshot_together() {
        let k = Kinematics { position: Vec2::new(1.0, 2.0), speed: 3.0, heading_deg: 10.0 };
        let mut o = PerceivedObject::new(4, ObjectClass::Vehicle, k, 0.0);
        assert_eq!(o.last_included_at(), None);
        assert_eq!(o.snapshot(), None);
        o.mark_included(0.3);
        o.kinematics.position = Vec2::new(5.0, 5.0);
        assert_eq!(o.last_included_at(), Some(0.3));
        assert_eq!(o.snapshot().unwrap().position, Vec2::new(1.0, 2.0));
        assert!((o.position_delta().unwrap() - 5.0).abs() < 1e-12);
    }
}
