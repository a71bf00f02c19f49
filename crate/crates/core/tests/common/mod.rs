//! Reference models shared by the integration tests.

#![allow(dead_code)]

pub mod brute;
pub mod golden;

use v2x_bcast_ack::mac::scripted::{run_scripted, AttemptLoss};
use v2x_bcast_ack::AckResult;

/// What the acknowledged-broadcast protocol should produce for one loss script.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Expected {
    pub cpm_tx: u64,
    pub bar_tx: u64,
    pub ack_tx: u64,
    pub success: bool,
    pub transmissions: u32,
    pub duplicates: u32,
}

/// Straight-line replay of the protocol: send, request, answer, decide.
pub fn reference(counter_retx: u32, losses: &[AttemptLoss]) -> Expected {
    let mut e = Expected {
        cpm_tx: 0,
        bar_tx: 0,
        ack_tx: 0,
        success: false,
        transmissions: 0,
        duplicates: 0,
    };
    let mut copies_received = 0u32;
    for attempt in 0..=counter_retx {
        let loss = losses.get(attempt as usize).copied().unwrap_or_default();
        e.cpm_tx += 1;
        e.transmissions = attempt + 1;
        if !loss.cpm {
            copies_received += 1;
        }
        e.bar_tx += 1;
        let mut acked = false;
        if !loss.bar {
            e.ack_tx += 1;
            // The receiver answers ACK once it holds any copy, NACK otherwise.
            acked = !loss.ack && copies_received > 0;
        }
        if acked {
            e.success = true;
            break;
        }
    }
    e.duplicates = copies_received.saturating_sub(1);
    e
}

/// All `8^attempts` loss scripts.
pub fn all_patterns(attempts: u32) -> impl Iterator<Item = Vec<AttemptLoss>> {
    (0..8u32.pow(attempts)).map(move |code| {
        (0..attempts)
            .map(|k| AttemptLoss::from_bits((code >> (3 * k)) & 7))
            .collect()
    })
}

/// Compares the real MAC against [`reference`] on every pattern for one
/// budget. Returns the number of patterns checked and the mismatches.
pub fn oracle_mismatches(counter_retx: u32) -> (usize, Vec<String>) {
    let mut bad = Vec::new();
    let mut n = 0;
    for pattern in all_patterns(counter_retx + 1) {
        n += 1;
        let want = reference(counter_retx, &pattern);
        let got = run_scripted(counter_retx, &pattern);
        let Some(report) = got.report else {
            bad.push(format!("{pattern:?}: no report"));
            continue;
        };
        let same = got.cpm_tx == want.cpm_tx
            && got.bar_tx == want.bar_tx
            && got.ack_tx == want.ack_tx
            && (report.result == AckResult::Success) == want.success
            && report.result != AckResult::Aborted
            && report.transmissions == want.transmissions
            && got.duplicates() == want.duplicates;
        if !same {
            bad.push(format!("{pattern:?}: got {got:?}, want {want:?}"));
        }
    }
    (n, bad)
}
