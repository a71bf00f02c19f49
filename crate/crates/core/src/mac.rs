//! CSMA/CA medium access and the broadcast acknowledgement procedure.
//!
//! A tagged CPM is copied when submitted. After it goes on air the MAC
//! contends again for a Broadcast ACK Request (BAR) addressed to the tagged
//! receiver, then waits for the ACK. A NACK or a timer expiry retransmits the
//! saved copy (which is followed by a new BAR) until `counter_retx`
//! retransmissions are used up.
//!
//! The MAC never touches the event queue or medium directly; everything goes
//! through [`MacContext`], which the simulator and the test drivers implement.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::rc::Rc;

use log::debug;
use serde::{Deserialize, Serialize};

use crate::cps::CpmMessage;
use crate::engine::{EventHandle, SimTime};
use crate::scenario::NodeId;

pub mod scripted;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MacConfig {
    pub counter_retx: u32,
    pub slot_s: f64,
    pub sifs_s: f64,
    pub aifsn: u32,
    pub cw_min: u32,
    /// Preamble plus PLCP header duration.
    pub phy_overhead_s: f64,
    pub bar_bytes: u32,
    pub ack_bytes: u32,
    pub ack_timeout_s: f64,
    pub queue_capacity: usize,
}

impl Default for MacConfig {
    fn default() -> Self {
        Self {
            counter_retx: 3,
            slot_s: 13e-6,
            sifs_s: 32e-6,
            aifsn: 2,
            cw_min: 15,
            phy_overhead_s: 40e-6,
            bar_bytes: 20,
            ack_bytes: 14,
            ack_timeout_s: 2e-3,
            queue_capacity: 16,
        }
    }
}

impl MacConfig {
    pub fn aifs_s(&self) -> f64 {
        self.sifs_s + f64::from(self.aifsn) * self.slot_s
    }

    pub fn airtime_s(&self, bytes: u32, rate_mbps: f64) -> f64 {
        self.phy_overhead_s + 8.0 * f64::from(bytes) / (rate_mbps * 1e6)
    }
}

/// Globally unique broadcast message id: (source node, per-source sequence).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct V2xPktId {
    pub source: NodeId,
    pub seq: u32,
}

impl V2xPktId {
    pub fn new(source: NodeId, seq: u32) -> Self {
        Self { source, seq }
    }
}

impl fmt::Display for V2xPktId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.source, self.seq)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FrameKind {
    Cpm,
    Bar,
    Ack,
}

impl fmt::Display for FrameKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FrameKind::Cpm => "cpm",
            FrameKind::Bar => "bar",
            FrameKind::Ack => "ack",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AckFlag {
    Ack,
    Nack,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Destination {
    Broadcast,
    Node(NodeId),
}

/// Cross-layer request to acknowledge one broadcast message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct AckTag {
    v2x_pkt_id: V2xPktId,
    rx_id: NodeId,
}

impl AckTag {
    pub fn new(v2x_pkt_id: V2xPktId, rx_id: NodeId) -> Self {
        Self { v2x_pkt_id, rx_id }
    }

    pub fn v2x_pkt_id(&self) -> V2xPktId {
        self.v2x_pkt_id
    }

    pub fn rx_id(&self) -> NodeId {
        self.rx_id
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub kind: FrameKind,
    pub pkt_id: V2xPktId,
    pub src: NodeId,
    pub dst: Destination,
    pub size_bytes: u32,
    pub ack_flag: Option<AckFlag>,
    pub tag: Option<AckTag>,
    pub payload: Option<Rc<CpmMessage>>,
}

impl Frame {
    pub fn cpm(msg: Rc<CpmMessage>, tag: Option<AckTag>) -> Self {
        Self {
            kind: FrameKind::Cpm,
            pkt_id: msg.pkt_id,
            src: msg.pkt_id.source,
            dst: Destination::Broadcast,
            size_bytes: msg.total_size(),
            ack_flag: None,
            tag,
            payload: Some(msg),
        }
    }

    pub fn bar(src: NodeId, tag: AckTag, size_bytes: u32) -> Self {
        Self {
            kind: FrameKind::Bar,
            pkt_id: tag.v2x_pkt_id(),
            src,
            dst: Destination::Node(tag.rx_id()),
            size_bytes,
            ack_flag: None,
            tag: None,
            payload: None,
        }
    }

    pub fn ack(src: NodeId, dst: NodeId, pkt_id: V2xPktId, flag: AckFlag, size_bytes: u32) -> Self {
        Self {
            kind: FrameKind::Ack,
            pkt_id,
            src,
            dst: Destination::Node(dst),
            size_bytes,
            ack_flag: Some(flag),
            tag: None,
            payload: None,
        }
    }

    pub fn addressed_to(&self, node: NodeId) -> bool {
        match self.dst {
            Destination::Broadcast => true,
            Destination::Node(n) => n == node,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckPhase {
    Idle,
    AwaitingAck { timer: EventHandle },
}

/// Saved copy and retransmission budget of the live tagged message.
#[derive(Debug, Clone)]
pub struct AckAttemptState {
    saved_copy: Frame,
    remaining_retx: u32,
    transmissions: u32,
    phase: AckPhase,
}

impl AckAttemptState {
    fn new(saved_copy: Frame, counter_retx: u32) -> Self {
        Self {
            saved_copy,
            remaining_retx: counter_retx,
            transmissions: 1,
            phase: AckPhase::Idle,
        }
    }

    pub fn pkt_id(&self) -> V2xPktId {
        self.saved_copy.pkt_id
    }

    pub fn remaining_retx(&self) -> u32 {
        self.remaining_retx
    }

    pub fn phase(&self) -> AckPhase {
        self.phase
    }

    pub fn timer(&self) -> Option<EventHandle> {
        match self.phase {
            AckPhase::Idle => None,
            AckPhase::AwaitingAck { timer } => Some(timer),
        }
    }

    fn tag(&self) -> AckTag {
        self.saved_copy.tag.expect("saved copy is always tagged")
    }
}

/// Ids of received broadcast messages with per-id reception counts.
#[derive(Debug, Clone, Default)]
pub struct ReceivedIdLog {
    counts: HashMap<V2xPktId, u32>,
}

impl ReceivedIdLog {
    /// Records one reception; returns the updated count for the id.
    pub fn record(&mut self, id: V2xPktId) -> u32 {
        let c = self.counts.entry(id).or_insert(0);
        *c += 1;
        *c
    }

    pub fn contains(&self, id: V2xPktId) -> bool {
        self.counts.contains_key(&id)
    }

    pub fn count(&self, id: V2xPktId) -> u32 {
        self.counts.get(&id).copied().unwrap_or(0)
    }

    pub fn unique(&self) -> usize {
        self.counts.len()
    }

    pub fn receptions(&self) -> u64 {
        self.counts.values().map(|c| u64::from(*c)).sum()
    }

    pub fn duplicates(&self) -> u64 {
        self.receptions() - self.unique() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AckResult {
    Success,
    Failure,
    Aborted,
}

/// Outcome of one acknowledged broadcast, reported to the application.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AckReport {
    pub pkt_id: V2xPktId,
    pub result: AckResult,
    pub transmissions: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum MacEvent {
    BackoffDone,
    AckTimeout(V2xPktId),
    SendResponse(Frame),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MacStats {
    pub cpm_tx: u64,
    pub bar_tx: u64,
    pub ack_tx: u64,
    pub queue_drops: u64,
    pub response_drops: u64,
}

/// Services the MAC needs from its environment.
pub trait MacContext {
    fn now(&self) -> SimTime;
    fn schedule(&mut self, delay: SimTime, event: MacEvent) -> EventHandle;
    fn cancel(&mut self, handle: EventHandle);
    /// Energy-detection state of the medium at this node, own transmission included.
    fn medium_busy(&self) -> bool;
    /// Uniform backoff draw in `0..=cw`.
    fn backoff_draw(&mut self, cw: u32) -> u32;
    fn transmit(&mut self, frame: Frame, airtime: SimTime);
    /// Every successful CPM reception, with the running count for its id.
    fn reception(&mut self, frame: &Frame, count: u32);
    /// First reception of a CPM id, passed up-stack.
    fn deliver(&mut self, frame: &Frame);
    fn report(&mut self, report: AckReport);
    /// Re-selects the addressed receiver before a retransmission.
    fn retarget(&mut self, tag: &AckTag) -> Option<NodeId>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Access {
    Idle,
    Deferring { slots: u32 },
    Counting { slots: u32, started: SimTime, handle: EventHandle },
}

#[derive(Debug, Clone)]
pub struct Mac {
    id: NodeId,
    cfg: MacConfig,
    rate_mbps: f64,
    queue: VecDeque<Frame>,
    access: Access,
    transmitting: Option<FrameKind>,
    attempt: Option<AckAttemptState>,
    received: ReceivedIdLog,
    stats: MacStats,
}

impl Mac {
    pub fn new(id: NodeId, cfg: MacConfig, rate_mbps: f64) -> Self {
        Self {
            id,
            cfg,
            rate_mbps,
            queue: VecDeque::new(),
            access: Access::Idle,
            transmitting: None,
            attempt: None,
            received: ReceivedIdLog::default(),
            stats: MacStats::default(),
        }
    }

    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn config(&self) -> &MacConfig {
        &self.cfg
    }

    pub fn stats(&self) -> MacStats {
        self.stats
    }

    pub fn received(&self) -> &ReceivedIdLog {
        &self.received
    }

    pub fn attempt(&self) -> Option<&AckAttemptState> {
        self.attempt.as_ref()
    }

    pub fn queue_len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_transmitting(&self) -> bool {
        self.transmitting.is_some()
    }

    pub fn airtime_s(&self, bytes: u32) -> f64 {
        self.cfg.airtime_s(bytes, self.rate_mbps)
    }

    /// Hands a frame to the MAC. A tagged CPM opens a new acknowledgement
    /// attempt, aborting any attempt still in progress.
    pub fn submit(&mut self, ctx: &mut dyn MacContext, frame: Frame) {
        if frame.kind == FrameKind::Cpm && frame.tag.is_some() {
            if let Some(old) = self.attempt.take() {
                self.abort(ctx, old);
            }
            self.attempt = Some(AckAttemptState::new(frame.clone(), self.cfg.counter_retx));
        }
        self.queue.push_back(frame);
        if self.queue.len() > self.cfg.queue_capacity {
            let dropped = self.queue.pop_front().expect("non-empty queue");
            self.stats.queue_drops += 1;
            debug!(
                "node {} queue overflow at t={:.6}: dropped {} {}",
                self.id,
                ctx.now(),
                dropped.kind,
                dropped.pkt_id
            );
        }
        self.kick(ctx);
    }

    fn abort(&mut self, ctx: &mut dyn MacContext, old: AckAttemptState) {
        if let Some(timer) = old.timer() {
            ctx.cancel(timer);
        }
        let id = old.pkt_id();
        self.queue
            .retain(|f| !(f.pkt_id == id && matches!(f.kind, FrameKind::Cpm | FrameKind::Bar)));
        ctx.report(AckReport {
            pkt_id: id,
            result: AckResult::Aborted,
            transmissions: old.transmissions,
        });
    }

    /// Starts contention for the head-of-line frame if the MAC is free.
    fn kick(&mut self, ctx: &mut dyn MacContext) {
        if self.transmitting.is_some() || self.access != Access::Idle || self.queue.is_empty() {
            return;
        }
        let slots = ctx.backoff_draw(self.cfg.cw_min);
        if ctx.medium_busy() {
            self.access = Access::Deferring { slots };
        } else {
            self.start_counting(ctx, slots);
        }
    }

    fn start_counting(&mut self, ctx: &mut dyn MacContext, slots: u32) {
        let delay = self.cfg.aifs_s() + f64::from(slots) * self.cfg.slot_s;
        let handle = ctx.schedule(delay, MacEvent::BackoffDone);
        self.access = Access::Counting {
            slots,
            started: ctx.now(),
            handle,
        };
    }

    fn freeze(&mut self, ctx: &mut dyn MacContext) {
        if let Access::Counting { slots, started, handle } = self.access {
            let due = started + self.cfg.aifs_s() + f64::from(slots) * self.cfg.slot_s;
            if due - ctx.now() < 1e-9 {
                // Countdown ends in this instant: too late to sense, the frame goes out.
                return;
            }
            ctx.cancel(handle);
            let elapsed = ctx.now() - started - self.cfg.aifs_s();
            let consumed = if elapsed > 0.0 {
                // Tolerance absorbs float error at exact slot boundaries.
                ((elapsed / self.cfg.slot_s + 1e-6).floor() as u32).min(slots)
            } else {
                0
            };
            self.access = Access::Deferring { slots: slots - consumed };
        }
    }

    pub fn on_medium_busy(&mut self, ctx: &mut dyn MacContext) {
        self.freeze(ctx);
    }

    pub fn on_medium_idle(&mut self, ctx: &mut dyn MacContext) {
        if self.transmitting.is_some() {
            return;
        }
        if let Access::Deferring { slots } = self.access {
            self.start_counting(ctx, slots);
        }
    }

    pub fn on_event(&mut self, ctx: &mut dyn MacContext, event: MacEvent) {
        match event {
            MacEvent::BackoffDone => self.on_backoff_done(ctx),
            MacEvent::AckTimeout(id) => self.resolve_ack(ctx, id, None),
            MacEvent::SendResponse(frame) => self.on_send_response(ctx, frame),
        }
    }

    fn on_backoff_done(&mut self, ctx: &mut dyn MacContext) {
        if !matches!(self.access, Access::Counting { .. }) {
            return;
        }
        if self.transmitting.is_some() {
            self.access = Access::Deferring { slots: 0 };
            return;
        }
        self.access = Access::Idle;
        if let Some(frame) = self.queue.pop_front() {
            self.start_tx(ctx, frame);
        }
    }

    fn start_tx(&mut self, ctx: &mut dyn MacContext, frame: Frame) {
        match frame.kind {
            FrameKind::Cpm => self.stats.cpm_tx += 1,
            FrameKind::Bar => self.stats.bar_tx += 1,
            FrameKind::Ack => self.stats.ack_tx += 1,
        }
        self.freeze(ctx);
        self.transmitting = Some(frame.kind);
        let airtime = self.airtime_s(frame.size_bytes);
        ctx.transmit(frame, airtime);
    }

    fn on_send_response(&mut self, ctx: &mut dyn MacContext, frame: Frame) {
        if self.transmitting.is_some() {
            self.stats.response_drops += 1;
            debug!("node {} busy transmitting; ACK for {} dropped", self.id, frame.pkt_id);
            return;
        }
        self.start_tx(ctx, frame);
    }

    /// Own transmission finished.
    pub fn on_tx_complete(&mut self, ctx: &mut dyn MacContext, frame: &Frame) {
        self.transmitting = None;
        let live = self
            .attempt
            .as_ref()
            .is_some_and(|a| a.pkt_id() == frame.pkt_id && a.phase == AckPhase::Idle);
        match frame.kind {
            FrameKind::Cpm if frame.tag.is_some() && live => {
                let tag = self.attempt.as_ref().expect("live attempt").tag();
                self.queue.push_front(Frame::bar(self.id, tag, self.cfg.bar_bytes));
            }
            FrameKind::Bar if live => {
                let timer = ctx.schedule(self.cfg.ack_timeout_s, MacEvent::AckTimeout(frame.pkt_id));
                self.attempt.as_mut().expect("live attempt").phase = AckPhase::AwaitingAck { timer };
            }
            _ => {}
        }
        if ctx.medium_busy() {
            // Another transmission overlapped ours; wait for the medium.
            if self.access == Access::Idle && !self.queue.is_empty() {
                let slots = ctx.backoff_draw(self.cfg.cw_min);
                self.access = Access::Deferring { slots };
            }
        } else if let Access::Deferring { slots } = self.access {
            self.start_counting(ctx, slots);
        } else {
            self.kick(ctx);
        }
    }

    /// Successful reception of a frame (broadcast or addressed to this node).
    pub fn on_receive(&mut self, ctx: &mut dyn MacContext, frame: &Frame) {
        if !frame.addressed_to(self.id) {
            return;
        }
        match frame.kind {
            FrameKind::Cpm => {
                let count = self.received.record(frame.pkt_id);
                ctx.reception(frame, count);
                if count == 1 {
                    ctx.deliver(frame);
                }
            }
            FrameKind::Bar => {
                let flag = if self.received.contains(frame.pkt_id) {
                    AckFlag::Ack
                } else {
                    AckFlag::Nack
                };
                let ack = Frame::ack(self.id, frame.src, frame.pkt_id, flag, self.cfg.ack_bytes);
                ctx.schedule(self.cfg.sifs_s, MacEvent::SendResponse(ack));
            }
            FrameKind::Ack => {
                self.resolve_ack(ctx, frame.pkt_id, frame.ack_flag);
            }
        }
    }

    /// ACK/NACK arrival (`Some(flag)`) or timer expiry (`None`).
    fn resolve_ack(&mut self, ctx: &mut dyn MacContext, id: V2xPktId, flag: Option<AckFlag>) {
        let Some(state) = self.attempt.as_mut() else {
            return;
        };
        let AckPhase::AwaitingAck { timer } = state.phase else {
            return;
        };
        if state.pkt_id() != id {
            return;
        }
        if flag.is_some() {
            ctx.cancel(timer);
        }
        state.phase = AckPhase::Idle;
        if flag == Some(AckFlag::Ack) {
            let report = AckReport {
                pkt_id: id,
                result: AckResult::Success,
                transmissions: state.transmissions,
            };
            self.attempt = None;
            ctx.report(report);
            return;
        }
        if state.remaining_retx == 0 {
            let report = AckReport {
                pkt_id: id,
                result: AckResult::Failure,
                transmissions: state.transmissions,
            };
            self.attempt = None;
            ctx.report(report);
            return;
        }
        state.remaining_retx -= 1;
        state.transmissions += 1;
        let old = state.tag();
        let rx = ctx.retarget(&old).unwrap_or(old.rx_id());
        let state = self.attempt.as_mut().expect("live attempt");
        state.saved_copy.tag = Some(AckTag::new(id, rx));
        let copy = state.saved_copy.clone();
        self.queue.push_front(copy);
        self.kick(ctx);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cps::CpmMessage;

    fn cpm(src: NodeId, seq: u32, bytes_pocs: usize) -> Rc<CpmMessage> {
        Rc::new(CpmMessage::for_test(V2xPktId::new(src, seq), bytes_pocs))
    }

    #[test]
    fn timing_constants() {
        let cfg = MacConfig::default();
        assert!((cfg.aifs_s() - 58e-6).abs() < 1e-12);
        assert!((cfg.airtime_s(350, 6.0) - 506.666_666e-6).abs() < 1e-9);
    }

    #[test]
    fn received_id_log_counts() {
        let mut log = ReceivedIdLog::default();
        let a = V2xPktId::new(1, 9);
        assert_eq!(log.record(a), 1);
        assert_eq!(log.record(a), 2);
        assert_eq!(log.record(V2xPktId::new(2, 9)), 1);
        assert_eq!(log.duplicates(), 1);
        assert_eq!(log.unique(), 2);
        assert!(log.contains(a));
        assert_eq!(log.count(V2xPktId::new(5, 5)), 0);
    }

    #[test]
    fn frame_addressing() {
        let m = cpm(1, 0, 2);
        let f = Frame::cpm(m, None);
        assert!(f.addressed_to(7));
        let tag = AckTag::new(f.pkt_id, 7);
        let bar = Frame::bar(1, tag, 20);
        assert!(bar.addressed_to(7) && !bar.addressed_to(8));
        assert_eq!(bar.pkt_id, f.pkt_id);
        let ack = Frame::ack(7, 1, bar.pkt_id, AckFlag::Ack, 14);
        assert_eq!(ack.pkt_id, bar.pkt_id);
        assert_eq!(ack.dst, Destination::Node(1));
    }
}
