//! Evaluation metrics: reception in the critical range, object awareness
//! ratio per distance bin, and duplicate CPM receptions per distance bin.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::mac::V2xPktId;
use crate::scenario::{NodeId, NodeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReceptionSample {
    pub time: f64,
    pub receiver: NodeId,
    pub receiver_kind: NodeKind,
    pub pkt_id: V2xPktId,
    pub contains_vru: bool,
    pub receiver_distance: f64,
    /// Distance to the nearest pedestrian carried in the CPM.
    pub pedestrian_distance: Option<f64>,
    pub is_duplicate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AwarenessWindow {
    pub receiver: NodeId,
    pub pedestrian: NodeId,
    pub start: f64,
    pub length: f64,
    pub success: bool,
    pub mean_distance: f64,
}

/// Constant-speed pass of a vertical-lane vehicle through the crosswalk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehiclePass {
    pub id: NodeId,
    pub time_at_crosswalk: f64,
    pub speed: f64,
}

impl VehiclePass {
    pub fn time_at_distance(&self, distance: f64) -> f64 {
        self.time_at_crosswalk - distance / self.speed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn covers(&self, a: f64, b: f64) -> bool {
        self.start <= a && self.end >= b
    }
}

/// Builds closed intervals from a sampled boolean signal.
#[derive(Debug, Clone, Default)]
pub struct IntervalRecorder {
    open: Option<f64>,
    closed: Vec<Interval>,
}

impl IntervalRecorder {
    pub fn sample(&mut self, t: f64, active: bool) {
        match (self.open, active) {
            (None, true) => self.open = Some(t),
            (Some(start), false) => {
                self.closed.push(Interval { start, end: t });
                self.open = None;
            }
            _ => {}
        }
    }

    pub fn active_since(&self) -> Option<f64> {
        self.open
    }

    pub fn finish(mut self, t: f64) -> Vec<Interval> {
        if let Some(start) = self.open.take() {
            self.closed.push(Interval { start, end: t });
        }
        self.closed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrrResult {
    pub eligible: u32,
    pub informed: u32,
}

impl CrrResult {
    /// Percentage of eligible vehicles informed; `None` without eligible vehicles.
    pub fn percent(&self) -> Option<f64> {
        (self.eligible > 0).then(|| 100.0 * f64::from(self.informed) / f64::from(self.eligible))
    }
}

/// Fraction of vertical-lane vehicles that received at least one VRU-bearing
/// CPM while inside the distance window `[lo, hi]`, over vehicles that fully
/// traversed the window within `span` while a pedestrian was perceived the
/// whole time.
pub fn cr_reception_ratio(
    samples: &[ReceptionSample],
    passes: &[VehiclePass],
    perception: &[Interval],
    window: (f64, f64),
    span: (f64, f64),
) -> CrrResult {
    let (lo, hi) = window;
    let mut vru_rx: BTreeMap<NodeId, Vec<f64>> = BTreeMap::new();
    for s in samples.iter().filter(|s| s.contains_vru) {
        vru_rx.entry(s.receiver).or_default().push(s.time);
    }
    let mut result = CrrResult { eligible: 0, informed: 0 };
    for p in passes {
        let t_in = p.time_at_distance(hi);
        let t_out = p.time_at_distance(lo);
        if t_in < span.0 || t_out > span.1 {
            continue;
        }
        if !perception.iter().any(|iv| iv.covers(t_in, t_out)) {
            continue;
        }
        result.eligible += 1;
        let informed = vru_rx
            .get(&p.id)
            .is_some_and(|ts| ts.iter().any(|t| *t >= t_in && *t <= t_out));
        if informed {
            result.informed += 1;
        }
    }
    result
}

/// Centre of the bin containing `d` for bins centred on multiples of `width`.
pub fn bin_center(d: f64, width: f64) -> f64 {
    (d / width).round() * width
}

fn bin_key(d: f64, width: f64) -> i64 {
    (d / width).round() as i64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OarBin {
    pub center: f64,
    pub windows: u32,
    pub successes: u32,
}

impl OarBin {
    pub fn ratio(&self) -> f64 {
        f64::from(self.successes) / f64::from(self.windows)
    }
}

/// Per-bin success fraction of awareness windows. Empty bins are absent.
pub fn object_awareness_ratio(windows: &[AwarenessWindow], bin_width: f64) -> Vec<OarBin> {
    let mut bins: BTreeMap<i64, (u32, u32)> = BTreeMap::new();
    for w in windows {
        let e = bins.entry(bin_key(w.mean_distance, bin_width)).or_default();
        e.0 += 1;
        e.1 += u32::from(w.success);
    }
    bins.into_iter()
        .map(|(k, (n, s))| OarBin {
            center: k as f64 * bin_width,
            windows: n,
            successes: s,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DupBin {
    pub center: f64,
    pub receivers: u32,
    pub duplicates: u32,
}

impl DupBin {
    pub fn mean(&self) -> f64 {
        f64::from(self.duplicates) / f64::from(self.receivers)
    }
}

/// Mean duplicate receptions of VRU-bearing CPMs per vertical-lane receiver,
/// binned by distance to the referenced pedestrian.
pub fn duplicate_curve(samples: &[ReceptionSample], bin_width: f64) -> Vec<DupBin> {
    let mut bins: BTreeMap<i64, (BTreeSet<NodeId>, u32)> = BTreeMap::new();
    for s in samples {
        if !s.contains_vru || s.receiver_kind != NodeKind::VehicleVertical {
            continue;
        }
        let Some(d) = s.pedestrian_distance else { continue };
        let e = bins.entry(bin_key(d, bin_width)).or_default();
        e.0.insert(s.receiver);
        e.1 += u32::from(s.is_duplicate);
    }
    bins.into_iter()
        .map(|(k, (rx, dup))| DupBin {
            center: k as f64 * bin_width,
            receivers: rx.len() as u32,
            duplicates: dup,
        })
        .collect()
}

/// Formats like C's `%.6g`: six significant digits, trailing zeros trimmed.
pub fn fmt_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let exp = x.abs().log10().floor() as i32;
    // Rounding can carry into the next decade (e.g. 999999.5).
    let sci = format!("{:.5e}", x);
    let (mant, e) = sci.split_once('e').expect("scientific format");
    let e: i32 = e.parse().expect("exponent");
    let exp = if e != exp { e } else { exp };
    if !(-4..6).contains(&exp) {
        let mant = trim_zeros(mant);
        let sign = if exp < 0 { '-' } else { '+' };
        return format!("{mant}e{sign}{:02}", exp.abs());
    }
    let decimals = (5 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_g6).unwrap_or_else(|| "NA".into())
}

pub const RECEPTIONS_HEADER: &str =
    "time,receiver,receiver_kind,pkt_source,pkt_seq,contains_vru,receiver_distance,pedestrian_distance,is_duplicate";
pub const OAR_HEADER: &str = "bin_center,windows,successes,ratio";
pub const CRR_HEADER: &str = "rt,counter_retx,eligible,informed,percent";
pub const DUP_HEADER: &str = "bin_center,receivers,mean_duplicates";

fn kind_label(k: NodeKind) -> &'static str {
    match k {
        NodeKind::VehicleVertical => "vehicle-vertical",
        NodeKind::VehicleHorizontal => "vehicle-horizontal",
        NodeKind::Pedestrian => "pedestrian",
    }
}

pub fn write_receptions<W: Write>(mut w: W, samples: &[ReceptionSample]) -> io::Result<()> {
    writeln!(w, "{RECEPTIONS_HEADER}")?;
    for s in samples {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{}",
            fmt_g6(s.time),
            s.receiver,
            kind_label(s.receiver_kind),
            s.pkt_id.source,
            s.pkt_id.seq,
            u8::from(s.contains_vru),
            fmt_g6(s.receiver_distance),
            opt(s.pedestrian_distance),
            u8::from(s.is_duplicate)
        )?;
    }
    Ok(())
}

pub fn write_oar<W: Write>(mut w: W, bins: &[OarBin]) -> io::Result<()> {
    writeln!(w, "{OAR_HEADER}")?;
    for b in bins {
        writeln!(w, "{},{},{},{}", fmt_g6(b.center), b.windows, b.successes, fmt_g6(b.ratio()))?;
    }
    Ok(())
}

pub fn write_crr<W: Write>(mut w: W, rt: f64, counter_retx: u32, r: &CrrResult) -> io::Result<()> {
    writeln!(w, "{CRR_HEADER}")?;
    writeln!(
        w,
        "{},{},{},{},{}",
        fmt_g6(rt),
        counter_retx,
        r.eligible,
        r.informed,
        opt(r.percent())
    )
}

pub fn write_dup<W: Write>(mut w: W, bins: &[DupBin]) -> io::Result<()> {
    writeln!(w, "{DUP_HEADER}")?;
    for b in bins {
        writeln!(w, "{},{},{}", fmt_g6(b.center), b.receivers, fmt_g6(b.mean()))?;
    }
    Ok(())
}

/// Arithmetic mean and sample standard deviation (zero for a single value).
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Some((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((mean, var.sqrt()))
}
