//! One simulation run: the world, the shared radio medium, per-vehicle MAC
//! and CPM generator, and the metric collectors.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::rc::Rc;

use log::{debug, trace};
use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::channel::{dbm_to_mw, frame_outcome_mw, LinkBudget, Outcome};
use crate::config::ExperimentConfig;
use crate::cps::{build_tag, critical_distance, select_ack_target, should_request_ack, CpmGenerator, CpmMessage};
use crate::engine::{EventHandle, RngStreams, ScheduleError, Scheduler, SimRng, SimTime};
use crate::mac::{AckReport, AckResult, AckTag, Frame, FrameKind, Mac, MacContext, MacEvent, MacStats, V2xPktId};
use crate::metrics::{
    cr_reception_ratio, duplicate_curve, object_awareness_ratio, AwarenessWindow, CrrResult, DupBin, Interval,
    IntervalRecorder, OarBin, ReceptionSample, VehiclePass,
};
use crate::scenario::{NodeId, NodeKind, Scenario};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("scheduling failed at t={now}: {source}")]
    Schedule {
        now: SimTime,
        #[source]
        source: ScheduleError,
    },
}

#[derive(Debug, Clone)]
enum Event {
    Mobility,
    CpmCheck(NodeId),
    Mac(NodeId, MacEvent),
    TxEnd(u64),
}

/// Side effects requested by a MAC during one call, applied afterwards.
#[derive(Debug)]
enum Effect {
    Transmit(NodeId, Frame, SimTime),
    Reception(NodeId, Frame, u32),
    Deliver(NodeId, Frame),
    Report(NodeId, AckReport),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct RunStats {
    pub events: u64,
    pub vehicles_spawned: u64,
    pub pedestrians_spawned: u64,
    pub cpm_generated: u64,
    pub cpm_tagged: u64,
    pub cpm_tx: u64,
    pub bar_tx: u64,
    pub ack_tx: u64,
    pub queue_drops: u64,
    pub response_drops: u64,
    pub ack_success: u64,
    pub ack_failure: u64,
    pub ack_aborted: u64,
    pub cpm_receptions: u64,
    pub duplicate_receptions: u64,
    /// Duplicates according to the receivers' own id logs.
    pub log_duplicates: u64,
}

impl RunStats {
    fn absorb_mac(&mut self, s: MacStats) {
        self.cpm_tx += s.cpm_tx;
        self.bar_tx += s.bar_tx;
        self.ack_tx += s.ack_tx;
        self.queue_drops += s.queue_drops;
        self.response_drops += s.response_drops;
    }
}

/// One line of the MAC trace.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRecord {
    pub node: NodeId,
    pub role: &'static str,
    pub kind: FrameKind,
    pub pkt_id: V2xPktId,
    pub peer: Option<NodeId>,
    pub t_start: f64,
    pub t_end: f64,
    pub outcome: &'static str,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub crr: CrrResult,
    pub oar: Vec<OarBin>,
    pub dup: Vec<DupBin>,
    pub samples: Vec<ReceptionSample>,
    pub windows: Vec<AwarenessWindow>,
    pub stats: RunStats,
    pub trace: Vec<TraceRecord>,
}

struct Station {
    mac: Mac,
    gen: CpmGenerator,
}

#[derive(Debug, Clone, Copy)]
struct Rx {
    tx: u64,
    signal_mw: f64,
    max_interference_mw: f64,
    corrupted: bool,
}

#[derive(Debug, Default)]
struct Radio {
    incoming: Vec<(u64, f64)>,
    receiving: Vec<Rx>,
    transmitting: bool,
    /// Energy detection on signals from other nodes.
    sensed_busy: bool,
}

impl Radio {
    fn total_mw(&self) -> f64 {
        self.incoming.iter().map(|(_, p)| p).sum()
    }
}

struct ActiveTx {
    src: NodeId,
    frame: Frame,
    start: SimTime,
}

struct Rngs {
    shadowing: SimRng,
    backoff: SimRng,
    phase: SimRng,
    traffic: SimRng,
}

/// Acknowledgement target search parameters.
#[derive(Debug, Clone, Copy)]
struct TargetWindow {
    cd: f64,
    cr: f64,
    window: crate::cps::CrWindow,
}

impl TargetWindow {
    fn select(&self, scenario: &Scenario) -> Option<NodeId> {
        let candidates: Vec<(NodeId, f64)> = scenario
            .vertical_vehicles()
            .map(|n| (n.id, n.distance_to_crosswalk))
            .collect();
        select_ack_target(&candidates, self.cd, self.cr, self.window)
    }
}

struct Ctx<'a> {
    node: NodeId,
    sched: &'a mut Scheduler<Event>,
    busy: bool,
    backoff: &'a mut SimRng,
    effects: &'a mut VecDeque<Effect>,
    scenario: &'a Scenario,
    target: TargetWindow,
}

impl MacContext for Ctx<'_> {
    fn now(&self) -> SimTime {
        self.sched.now()
    }

    fn schedule(&mut self, delay: SimTime, event: MacEvent) -> EventHandle {
        // Delays come from validated positive timing constants.
        self.sched
            .schedule_in(delay, Event::Mac(self.node, event))
            .expect("MAC delays are finite and non-negative")
    }

    fn cancel(&mut self, handle: EventHandle) {
        self.sched.cancel(handle);
    }

    fn medium_busy(&self) -> bool {
        self.busy
    }

    fn backoff_draw(&mut self, cw: u32) -> u32 {
        self.backoff.random_range(0..=cw)
    }

    fn transmit(&mut self, frame: Frame, airtime: SimTime) {
        self.effects.push_back(Effect::Transmit(self.node, frame, airtime));
    }

    fn reception(&mut self, frame: &Frame, count: u32) {
        self.effects.push_back(Effect::Reception(self.node, frame.clone(), count));
    }

    fn deliver(&mut self, frame: &Frame) {
        self.effects.push_back(Effect::Deliver(self.node, frame.clone()));
    }

    fn report(&mut self, report: AckReport) {
        self.effects.push_back(Effect::Report(self.node, report));
    }

    fn retarget(&mut self, _tag: &AckTag) -> Option<NodeId> {
        self.target.select(self.scenario)
    }
}

/// Awareness bookkeeping for the current window.
#[derive(Default)]
struct WindowState {
    start: Option<f64>,
    ticks: u32,
    /// (receiver, pedestrian) -> (distance sum, samples)
    acc: BTreeMap<(NodeId, NodeId), (f64, u32)>,
    hits: BTreeSet<(NodeId, NodeId)>,
}

pub struct Simulation {
    cfg: ExperimentConfig,
    seed: u64,
    sched: Scheduler<Event>,
    scenario: Scenario,
    stations: BTreeMap<NodeId, Station>,
    radios: BTreeMap<NodeId, Radio>,
    active: BTreeMap<u64, ActiveTx>,
    next_tx: u64,
    noise_mw: f64,
    ed_mw: f64,
    rngs: Rngs,
    effects: VecDeque<Effect>,
    target: TargetWindow,
    stats: RunStats,
    samples: Vec<ReceptionSample>,
    passes: Vec<VehiclePass>,
    perception: IntervalRecorder,
    ped_perceived_since: BTreeMap<NodeId, f64>,
    window: WindowState,
    windows: Vec<AwarenessWindow>,
    trace: Option<Vec<TraceRecord>>,
}

impl Simulation {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self, SimError> {
        let streams = RngStreams::new(seed);
        let mut traffic = streams.stream("traffic");
        let scenario = Scenario::new(cfg.scenario.clone(), &mut traffic);
        let cd = critical_distance(
            cfg.scenario.vehicle_speed_mps,
            cfg.cps.reaction_time_s,
            cfg.cps.emergency_decel_mps2,
        );
        let mut sim = Self {
            cfg: cfg.clone(),
            seed,
            sched: Scheduler::new(),
            scenario,
            stations: BTreeMap::new(),
            radios: BTreeMap::new(),
            active: BTreeMap::new(),
            next_tx: 0,
            noise_mw: dbm_to_mw(cfg.radio.noise_floor_dbm()),
            ed_mw: dbm_to_mw(cfg.radio.energy_detection_dbm),
            rngs: Rngs {
                shadowing: streams.stream("shadowing"),
                backoff: streams.stream("backoff"),
                phase: streams.stream("cpm-phase"),
                traffic,
            },
            effects: VecDeque::new(),
            target: TargetWindow {
                cd,
                cr: cfg.cps.critical_range_m,
                window: cfg.cps.window,
            },
            stats: RunStats::default(),
            samples: Vec::new(),
            passes: Vec::new(),
            perception: IntervalRecorder::default(),
            ped_perceived_since: BTreeMap::new(),
            window: WindowState::default(),
            windows: Vec::new(),
            trace: cfg.run.trace.then(Vec::new),
        };
        let initial: Vec<_> = sim.scenario.nodes().map(|n| (n.id, n.kind)).collect();
        for (id, kind) in initial {
            sim.add_node(id, kind)?;
        }
        sim.schedule(0.0, Event::Mobility)?;
        Ok(sim)
    }

    fn schedule(&mut self, time: SimTime, ev: Event) -> Result<EventHandle, SimError> {
        let now = self.sched.now();
        self.sched
            .schedule(time, ev)
            .map_err(|source| SimError::Schedule { now, source })
    }

    fn add_node(&mut self, id: NodeId, kind: NodeKind) -> Result<(), SimError> {
        match kind {
            NodeKind::Pedestrian => {
                self.stats.pedestrians_spawned += 1;
                return Ok(());
            }
            NodeKind::VehicleVertical => {
                self.stats.vehicles_spawned += 1;
                let n = self.scenario.node(id).expect("node just added");
                let speed = n.speed;
                self.passes.push(VehiclePass {
                    id,
                    time_at_crosswalk: self.sched.now() + n.distance_to_crosswalk / speed,
                    speed,
                });
            }
            NodeKind::VehicleHorizontal => {}
        }
        let mac = Mac::new(id, self.cfg.mac.clone(), self.cfg.radio.data_rate_mbps);
        let gen = CpmGenerator::new(id, self.cfg.cps.clone());
        self.stations.insert(id, Station { mac, gen });
        self.radios.insert(id, Radio::default());
        let phase = self.rngs.phase.random_range(0.0..self.cfg.cps.gen_period_s);
        self.schedule(self.sched.now() + phase, Event::CpmCheck(id))?;
        Ok(())
    }

    fn remove_node(&mut self, id: NodeId) {
        if let Some(st) = self.stations.remove(&id) {
            self.stats.absorb_mac(st.mac.stats());
            self.stats.log_duplicates += st.mac.received().duplicates();
        }
        self.radios.remove(&id);
        self.ped_perceived_since.remove(&id);
    }

    pub fn run(mut self) -> Result<RunOutput, SimError> {
        let end = self.cfg.run.duration_s;
        while let Some((_, ev)) = self.sched.pop_until(end) {
            self.stats.events += 1;
            self.handle(ev)?;
        }
        Ok(self.finish())
    }

    fn handle(&mut self, ev: Event) -> Result<(), SimError> {
        match ev {
            Event::Mobility => self.on_mobility()?,
            Event::CpmCheck(id) => self.on_cpm_check(id)?,
            Event::Mac(id, ev) => {
                self.with_mac(id, |mac, ctx| mac.on_event(ctx, ev));
                self.drain_effects()?;
            }
            Event::TxEnd(tx) => self.end_tx(tx)?,
        }
        Ok(())
    }

    fn with_mac<F: FnOnce(&mut Mac, &mut Ctx<'_>)>(&mut self, node: NodeId, f: F) {
        let Some(st) = self.stations.get_mut(&node) else {
            return;
        };
        let busy = self
            .radios
            .get(&node)
            .is_some_and(|r| r.sensed_busy || r.transmitting);
        let mut ctx = Ctx {
            node,
            sched: &mut self.sched,
            busy,
            backoff: &mut self.rngs.backoff,
            effects: &mut self.effects,
            scenario: &self.scenario,
            target: self.target,
        };
        f(&mut st.mac, &mut ctx);
    }

    fn drain_effects(&mut self) -> Result<(), SimError> {
        while let Some(effect) = self.effects.pop_front() {
            match effect {
                Effect::Transmit(node, frame, airtime) => self.start_tx(node, frame, airtime)?,
                Effect::Reception(node, frame, count) => self.on_cpm_reception(node, &frame, count),
                Effect::Deliver(node, frame) => self.on_deliver(node, &frame),
                Effect::Report(node, report) => {
                    debug!("node {node} ack report {:?}", report);
                    match report.result {
                        AckResult::Success => self.stats.ack_success += 1,
                        AckResult::Failure => self.stats.ack_failure += 1,
                        AckResult::Aborted => self.stats.ack_aborted += 1,
                    }
                }
            }
        }
        Ok(())
    }

    fn on_mobility(&mut self) -> Result<(), SimError> {
        let dt = self.cfg.scenario.mobility_step_s;
        let now = self.sched.now();
        if now > 0.0 {
            for id in self.scenario.advance(dt) {
                self.remove_node(id);
            }
        }
        let spawned = self.scenario.spawn_traffic(&mut self.rngs.traffic, now);
        for n in spawned {
            self.add_node(n.id, n.kind)?;
        }
        self.observe(now);
        self.schedule(now + dt, Event::Mobility)?;
        Ok(())
    }

    /// Samples perception state and advances awareness windows.
    fn observe(&mut self, now: f64) {
        let peds: Vec<NodeId> = self.scenario.pedestrians().map(|p| p.id).collect();
        let mut any = false;
        for ped in peds {
            if self.scenario.pedestrian_perceived(ped) {
                any = true;
                self.ped_perceived_since.entry(ped).or_insert(now);
            } else {
                self.ped_perceived_since.remove(&ped);
            }
        }
        self.perception.sample(now, any);

        let (warmup, length) = (self.cfg.run.warmup_s, self.cfg.run.awareness_window_s);
        let eps = 1e-6;
        if now < warmup - eps {
            return;
        }
        match self.window.start {
            None => {
                self.window.start = Some(now);
                self.accumulate();
            }
            Some(start) => {
                self.accumulate();
                if now - start >= length - eps {
                    self.close_window(start, now);
                    self.window.start = Some(now);
                    self.accumulate();
                }
            }
        }
    }

    fn accumulate(&mut self) {
        self.window.ticks += 1;
        for &ped in self.ped_perceived_since.keys() {
            let Some(p) = self.scenario.node(ped) else { continue };
            for v in self.scenario.vertical_vehicles() {
                if v.distance_to_crosswalk <= 0.0 {
                    continue;
                }
                let e = self.window.acc.entry((v.id, ped)).or_default();
                e.0 += v.position.distance(p.position);
                e.1 += 1;
            }
        }
    }

    fn close_window(&mut self, start: f64, end: f64) {
        let ticks = self.window.ticks;
        let eps = 1e-6;
        let acc = std::mem::take(&mut self.window.acc);
        for ((rx, ped), (sum, n)) in acc {
            if n != ticks {
                continue;
            }
            let Some(&since) = self.ped_perceived_since.get(&ped) else { continue };
            if since > start + eps {
                continue;
            }
            self.windows.push(AwarenessWindow {
                receiver: rx,
                pedestrian: ped,
                start,
                length: end - start,
                success: self.window.hits.contains(&(rx, ped)),
                mean_distance: sum / f64::from(n),
            });
        }
        self.window.hits.clear();
        self.window.ticks = 0;
    }

    fn on_cpm_check(&mut self, id: NodeId) -> Result<(), SimError> {
        let Some(node) = self.scenario.node(id) else {
            return Ok(());
        };
        let now = self.sched.now();
        let kind = node.kind;
        let station = node.kinematics();
        let detections = self.scenario.sense(id, now);
        let Some(st) = self.stations.get_mut(&id) else {
            return Ok(());
        };
        st.gen.update(detections);
        if let Some(msg) = st.gen.generate(now, station) {
            self.stats.cpm_generated += 1;
            let tag = if self.cfg.mac.counter_retx > 0 && should_request_ack(&msg, kind) {
                self.target.select(&self.scenario).map(|rx| build_tag(&msg, rx))
            } else {
                None
            };
            if tag.is_some() {
                self.stats.cpm_tagged += 1;
            }
            trace!("t={now:.4} node {id} cpm {} pocs={} tag={:?}", msg.pkt_id, msg.pocs.len(), tag);
            let frame = Frame::cpm(Rc::new(msg), tag);
            self.with_mac(id, |mac, ctx| mac.submit(ctx, frame));
            self.drain_effects()?;
        }
        self.schedule(now + self.cfg.cps.gen_period_s, Event::CpmCheck(id))?;
        Ok(())
    }

    fn start_tx(&mut self, src: NodeId, frame: Frame, airtime: SimTime) -> Result<(), SimError> {
        let now = self.sched.now();
        let tx = self.next_tx;
        self.next_tx += 1;
        let Some(src_pos) = self.scenario.node(src).map(|n| n.position) else {
            return Ok(());
        };
        if let Some(r) = self.radios.get_mut(&src) {
            r.transmitting = true;
            for rx in &mut r.receiving {
                rx.corrupted = true;
            }
        }
        let layout = self.scenario.layout();
        let mut became_busy = Vec::new();
        for (&id, radio) in self.radios.iter_mut() {
            if id == src {
                continue;
            }
            let Some(pos) = self.scenario.node(id).map(|n| n.position) else { continue };
            let (link, _) = LinkBudget::evaluate(src_pos, pos, layout, &self.cfg.radio, &mut self.rngs.shadowing);
            let mw = dbm_to_mw(link.rx_power_dbm());
            radio.incoming.push((tx, mw));
            let total = radio.total_mw();
            for r in &mut radio.receiving {
                r.max_interference_mw = r.max_interference_mw.max(total - r.signal_mw);
            }
            if !radio.transmitting && link.rx_power_dbm() >= self.cfg.radio.sensitivity_dbm {
                radio.receiving.push(Rx {
                    tx,
                    signal_mw: mw,
                    max_interference_mw: total - mw,
                    corrupted: false,
                });
            }
            let busy = total >= self.ed_mw;
            if busy && !radio.sensed_busy {
                became_busy.push(id);
            }
            radio.sensed_busy = busy;
        }
        self.active.insert(tx, ActiveTx { src, frame, start: now });
        self.schedule(now + airtime, Event::TxEnd(tx))?;
        for id in became_busy {
            self.with_mac(id, |mac, ctx| mac.on_medium_busy(ctx));
        }
        Ok(())
    }

    fn end_tx(&mut self, tx: u64) -> Result<(), SimError> {
        let now = self.sched.now();
        let Some(active) = self.active.remove(&tx) else {
            return Ok(());
        };
        let frame = active.frame;
        if let Some(r) = self.radios.get_mut(&active.src) {
            r.transmitting = false;
        }
        let mut delivered = Vec::new();
        let mut became_idle = Vec::new();
        for (&id, radio) in self.radios.iter_mut() {
            let Some(i) = radio.incoming.iter().position(|(t, _)| *t == tx) else { continue };
            radio.incoming.remove(i);
            let ok = match radio.receiving.iter().position(|r| r.tx == tx) {
                Some(j) => {
                    let rx = radio.receiving.remove(j);
                    !rx.corrupted
                        && frame_outcome_mw(rx.signal_mw, self.noise_mw, rx.max_interference_mw, &self.cfg.radio)
                            == Outcome::Received
                }
                None => false,
            };
            if frame.addressed_to(id) {
                if ok {
                    delivered.push(id);
                }
                if let Some(t) = self.trace.as_mut() {
                    if frame.kind != FrameKind::Cpm || ok {
                        t.push(TraceRecord {
                            node: id,
                            role: "rx",
                            kind: frame.kind,
                            pkt_id: frame.pkt_id,
                            peer: Some(active.src),
                            t_start: active.start,
                            t_end: now,
                            outcome: if ok { "received" } else { "lost" },
                        });
                    }
                }
            }
            let busy = radio.total_mw() >= self.ed_mw;
            if radio.incoming.is_empty() {
                radio.receiving.clear();
            }
            if radio.sensed_busy && !busy {
                became_idle.push(id);
            }
            radio.sensed_busy = busy;
        }
        if let Some(t) = self.trace.as_mut() {
            t.push(TraceRecord {
                node: active.src,
                role: "tx",
                kind: frame.kind,
                pkt_id: frame.pkt_id,
                peer: match frame.dst {
                    crate::mac::Destination::Broadcast => None,
                    crate::mac::Destination::Node(n) => Some(n),
                },
                t_start: active.start,
                t_end: now,
                outcome: "sent",
            });
        }
        self.with_mac(active.src, |mac, ctx| mac.on_tx_complete(ctx, &frame));
        self.drain_effects()?;
        for id in delivered {
            self.with_mac(id, |mac, ctx| mac.on_receive(ctx, &frame));
            self.drain_effects()?;
        }
        for id in became_idle {
            self.with_mac(id, |mac, ctx| mac.on_medium_idle(ctx));
            self.drain_effects()?;
        }
        Ok(())
    }

    fn on_cpm_reception(&mut self, node: NodeId, frame: &Frame, count: u32) {
        self.stats.cpm_receptions += 1;
        if count > 1 {
            self.stats.duplicate_receptions += 1;
        }
        let Some(msg) = frame.payload.as_deref() else { return };
        let Some(rx) = self.scenario.node(node) else { return };
        let vru = msg.contains_vru();
        let keep = self.cfg.run.record_all_receptions || (vru && rx.kind == NodeKind::VehicleVertical);
        if !keep || self.sched.now() < self.cfg.run.warmup_s {
            return;
        }
        let ped_d = nearest_vru_distance(msg, rx.position, &self.scenario);
        self.samples.push(ReceptionSample {
            time: self.sched.now(),
            receiver: node,
            receiver_kind: rx.kind,
            pkt_id: frame.pkt_id,
            contains_vru: vru,
            receiver_distance: rx.distance_to_crosswalk,
            pedestrian_distance: ped_d,
            is_duplicate: count > 1,
        });
    }

    fn on_deliver(&mut self, node: NodeId, frame: &Frame) {
        let Some(msg) = frame.payload.as_deref() else { return };
        if self.window.start.is_none() {
            return;
        }
        for poc in msg.vrus() {
            self.window.hits.insert((node, poc.object_id));
        }
    }

    fn finish(mut self) -> RunOutput {
        let end = self.sched.now();
        for st in self.stations.values() {
            self.stats.absorb_mac(st.mac.stats());
            self.stats.log_duplicates += st.mac.received().duplicates();
        }
        let perception: Vec<Interval> = std::mem::take(&mut self.perception).finish(end);
        let run = &self.cfg.run;
        let (lo, hi) = self.cfg.cps.window.bounds(self.target.cd, self.target.cr);
        let crr = cr_reception_ratio(&self.samples, &self.passes, &perception, (lo, hi), (run.warmup_s, run.duration_s));
        let oar = object_awareness_ratio(&self.windows, run.bin_width_m);
        let dup = duplicate_curve(&self.samples, run.bin_width_m);
        debug!("seed {} finished: {:?}", self.seed, self.stats);
        RunOutput {
            seed: self.seed,
            crr,
            oar,
            dup,
            samples: self.samples,
            windows: self.windows,
            stats: self.stats,
            trace: self.trace.unwrap_or_default(),
        }
    }
}

/// Distance from `at` to the closest VRU carried in `msg`, using the
/// pedestrian's current position when it still exists.
fn nearest_vru_distance(msg: &CpmMessage, at: crate::geometry::Vec2, scenario: &Scenario) -> Option<f64> {
    msg.vrus()
        .map(|poc| {
            let p = scenario
                .node(poc.object_id)
                .map(|n| n.position)
                .unwrap_or(poc.kinematics.position);
            p.distance(at)
        })
        .min_by(f64::total_cmp)
}

/// Runs one seed to completion.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> Result<RunOutput, SimError> {
    Simulation::new(cfg, seed)?.run()
}
