//! Two-node driver that runs the real [`Mac`] over a scripted lossy link.
//!
//! Node 0 sends one tagged CPM to node 1. Whether each frame reaches its peer
//! is decided by a loss script indexed by the attempt number (the number of
//! CPM transmissions so far, minus one), so every combination of CPM, BAR and
//! ACK losses can be replayed deterministically.

use std::rc::Rc;

use crate::cps::CpmMessage;
use crate::engine::{EventHandle, Scheduler, SimTime};
use crate::scenario::NodeId;

use super::{AckReport, AckTag, Frame, FrameKind, Mac, MacConfig, MacContext, MacEvent, V2xPktId};

/// Losses for one attempt: whether the CPM, the BAR and the ACK are dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AttemptLoss {
    pub cpm: bool,
    pub bar: bool,
    pub ack: bool,
}

impl AttemptLoss {
    /// Decodes the low three bits: CPM, BAR, ACK.
    pub fn from_bits(bits: u32) -> Self {
        Self {
            cpm: bits & 1 != 0,
            bar: bits & 2 != 0,
            ack: bits & 4 != 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedOutcome {
    pub cpm_tx: u64,
    pub bar_tx: u64,
    pub ack_tx: u64,
    pub report: Option<AckReport>,
    /// Times the receiver got the CPM id.
    pub receptions: u32,
    pub deliveries: u32,
}

impl ScriptedOutcome {
    pub fn duplicates(&self) -> u32 {
        self.receptions.saturating_sub(1)
    }
}

#[derive(Debug)]
enum LinkEvent {
    Mac(usize, MacEvent),
    TxEnd(usize, Frame),
}

struct Ctx<'a> {
    node: usize,
    sched: &'a mut Scheduler<LinkEvent>,
    busy: bool,
    tx: &'a mut Option<(usize, Frame, SimTime)>,
    reports: &'a mut Vec<AckReport>,
    receptions: &'a mut u32,
    deliveries: &'a mut u32,
}

impl MacContext for Ctx<'_> {
    fn now(&self) -> SimTime {
        self.sched.now()
    }

    fn schedule(&mut self, delay: SimTime, event: MacEvent) -> EventHandle {
        self.sched
            .schedule_in(delay, LinkEvent::Mac(self.node, event))
            .expect("non-negative delay")
    }

    fn cancel(&mut self, handle: EventHandle) {
        self.sched.cancel(handle);
    }

    fn medium_busy(&self) -> bool {
        self.busy
    }

    fn backoff_draw(&mut self, _cw: u32) -> u32 {
        0
    }

    fn transmit(&mut self, frame: Frame, airtime: SimTime) {
        *self.tx = Some((self.node, frame, airtime));
    }

    fn reception(&mut self, _frame: &Frame, _count: u32) {
        *self.receptions += 1;
    }

    fn deliver(&mut self, _frame: &Frame) {
        *self.deliveries += 1;
    }

    fn report(&mut self, report: AckReport) {
        self.reports.push(report);
    }

    fn retarget(&mut self, tag: &AckTag) -> Option<NodeId> {
        Some(tag.rx_id())
    }
}

/// Runs one tagged CPM from node 0 to node 1 under `losses` (one entry per
/// attempt; missing entries mean no loss).
pub fn run_scripted(counter_retx: u32, losses: &[AttemptLoss]) -> ScriptedOutcome {
    let cfg = MacConfig {
        counter_retx,
        ..MacConfig::default()
    };
    let mut macs = [Mac::new(0, cfg.clone(), 6.0), Mac::new(1, cfg, 6.0)];
    let mut sched: Scheduler<LinkEvent> = Scheduler::new();
    let mut on_air: Option<(usize, Frame, SimTime)> = None;
    let mut reports = Vec::new();
    let mut receptions = 0u32;
    let mut deliveries = 0u32;

    let msg = Rc::new(CpmMessage::for_test(V2xPktId::new(0, 0), 3));
    let tag = AckTag::new(msg.pkt_id, 1);

    macro_rules! with_ctx {
        ($node:expr, $busy:expr, |$mac:ident, $ctx:ident| $body:expr) => {{
            let mut $ctx = Ctx {
                node: $node,
                sched: &mut sched,
                busy: $busy,
                tx: &mut on_air,
                reports: &mut reports,
                receptions: &mut receptions,
                deliveries: &mut deliveries,
            };
            let $mac = &mut macs[$node];
            $body;
        }};
    }

    with_ctx!(0, false, |mac, ctx| mac.submit(&mut ctx, Frame::cpm(msg.clone(), Some(tag))));

    let mut transmitting: Option<usize> = None;
    loop {
        if let Some((node, frame, airtime)) = on_air.take() {
            transmitting = Some(node);
            let peer = 1 - node;
            with_ctx!(peer, true, |mac, ctx| mac.on_medium_busy(&mut ctx));
            sched
                .schedule_in(airtime, LinkEvent::TxEnd(node, frame))
                .expect("positive airtime");
        }
        let Some((_, ev)) = sched.pop_until(f64::INFINITY) else {
            break;
        };
        match ev {
            LinkEvent::Mac(node, ev) => {
                let busy = transmitting.is_some();
                with_ctx!(node, busy, |mac, ctx| mac.on_event(&mut ctx, ev));
            }
            LinkEvent::TxEnd(node, frame) => {
                transmitting = None;
                let attempt = macs[0].stats().cpm_tx.saturating_sub(1) as usize;
                let loss = losses.get(attempt).copied().unwrap_or_default();
                let lost = match frame.kind {
                    FrameKind::Cpm => loss.cpm,
                    FrameKind::Bar => loss.bar,
                    FrameKind::Ack => loss.ack,
                };
                with_ctx!(node, false, |mac, ctx| mac.on_tx_complete(&mut ctx, &frame));
                let peer = 1 - node;
                if !lost {
                    with_ctx!(peer, false, |mac, ctx| mac.on_receive(&mut ctx, &frame));
                }
                if on_air.is_none() {
                    with_ctx!(peer, false, |mac, ctx| mac.on_medium_idle(&mut ctx));
                }
            }
        }
    }

    let s = macs[0].stats();
    let r = macs[1].stats();
    ScriptedOutcome {
        cpm_tx: s.cpm_tx,
        bar_tx: s.bar_tx,
        ack_tx: r.ack_tx,
        report: reports.last().copied(),
        receptions,
        deliveries,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mac::AckResult;

    #[test]
    fn lossless_single_exchange() {
        let o = run_scripted(3, &[]);
        assert_eq!((o.cpm_tx, o.bar_tx, o.ack_tx), (1, 1, 1));
        assert_eq!(o.report.unwrap().result, AckResult::Success);
        assert_eq!(o.receptions, 1);
        assert_eq!(o.deliveries, 1);
    }

    #[test]
    fn lost_cpm_is_nacked_then_retransmitted() {
        let lost_cpm = AttemptLoss { cpm: true, ..AttemptLoss::default() };
        let o = run_scripted(3, &[lost_cpm]);
        assert_eq!(o.cpm_tx, 2);
        assert_eq!(o.bar_tx, 2);
        assert_eq!(o.report.unwrap().result, AckResult::Success);
        assert_eq!(o.report.unwrap().transmissions, 2);
        assert_eq!(o.duplicates(), 0);
    }

    #[test]
    fn all_acks_lost_exhausts_budget() {
        let lost_ack = AttemptLoss { ack: true, ..AttemptLoss::default() };
        let o = run_scripted(3, &[lost_ack; 4]);
        assert_eq!(o.cpm_tx, 4);
        assert_eq!(o.bar_tx, 4);
        assert_eq!(o.report.unwrap().result, AckResult::Failure);
        assert_eq!(o.receptions, 4);
        assert_eq!(o.deliveries, 1);
        assert_eq!(o.duplicates(), 3);
    }
}
