//! Seed batches, parameter sweeps, result files and aggregation.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::metrics::{self, fmt_g6, mean_std, CrrResult, DupBin, OarBin};
use crate::sim::{run_seed, RunOutput, RunStats, TraceRecord};

/// Sweepable parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    Rt,
    CounterRetx,
}

impl FromStr for Axis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rt" => Ok(Axis::Rt),
            "counter-retx" | "counter_retx" => Ok(Axis::CounterRetx),
            other => bail!("unknown sweep axis `{other}` (expected `rt` or `counter-retx`)"),
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::Rt => "rt",
            Axis::CounterRetx => "counter-retx",
        })
    }
}

impl Axis {
    pub fn apply(self, cfg: &mut ExperimentConfig, value: f64) -> Result<()> {
        match self {
            Axis::Rt => {
                if !(value.is_finite() && value > 0.0) {
                    bail!("rt value must be > 0, got {value}");
                }
                cfg.cps.reaction_time_s = value;
            }
            Axis::CounterRetx => {
                if value < 0.0 || value.fract() != 0.0 || value > f64::from(u32::MAX) {
                    bail!("counter-retx value must be a non-negative integer, got {value}");
                }
                cfg.mac.counter_retx = value as u32;
            }
        }
        Ok(())
    }
}

/// Parses a comma-separated value list.
pub fn parse_values(s: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("bad value `{v}`")))
        .collect::<Result<_>>()?;
    if values.is_empty() {
        bail!("empty value list");
    }
    Ok(values)
}

/// Per-seed metric values, without the bulky sample logs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub crr: CrrResult,
    pub oar: Vec<OarBin>,
    pub dup: Vec<DupBin>,
    pub stats: RunStats,
}

impl From<&RunOutput> for SeedResult {
    fn from(o: &RunOutput) -> Self {
        Self {
            seed: o.seed,
            crr: o.crr,
            oar: o.oar.clone(),
            dup: o.dup.clone(),
            stats: o.stats,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub metric: &'static str,
    pub bin_center: Option<f64>,
    pub seeds: usize,
    pub mean: f64,
    pub std: f64,
}

/// Mean and sample std across seeds. CRR uses the seeds where it is
/// defined; per-bin curves use the seeds that populated the bin.
pub fn aggregate(results: &[SeedResult], width: f64) -> Vec<AggregateRow> {
    let mut rows = Vec::new();
    let crr: Vec<f64> = results.iter().filter_map(|r| r.crr.percent()).collect();
    if let Some((mean, std)) = mean_std(&crr) {
        rows.push(AggregateRow { metric: "crr", bin_center: None, seeds: crr.len(), mean, std });
    }
    let mut push_bins = |metric: &'static str, bins: BTreeMap<i64, Vec<f64>>, width: f64| {
        for (k, v) in bins {
            let (mean, std) = mean_std(&v).expect("non-empty bin");
            rows.push(AggregateRow {
                metric,
                bin_center: Some(k as f64 * width),
                seeds: v.len(),
                mean,
                std,
            });
        }
    };
    let mut oar: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    let mut dup: BTreeMap<i64, Vec<f64>> = BTreeMap::new();
    for r in results {
        for b in &r.oar {
            oar.entry(key(b.center, width)).or_default().push(b.ratio());
        }
        for b in &r.dup {
            dup.entry(key(b.center, width)).or_default().push(b.mean());
        }
    }
    push_bins("oar", oar, width);
    push_bins("dup", dup, width);
    rows
}

fn key(center: f64, width: f64) -> i64 {
    (center / width).round() as i64
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    config_hash: String,
    seed: u64,
    version: &'static str,
    config: &'a ExperimentConfig,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

/// Fails early if `dir` cannot be created or written.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let probe = dir.join(".write-probe");
    File::create(&probe).with_context(|| format!("output directory {} is not writable", dir.display()))?;
    fs::remove_file(&probe).ok();
    Ok(())
}

/// Writes the four metric files, the manifest and optionally the MAC trace.
pub fn write_run(dir: &Path, cfg: &ExperimentConfig, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let mut w = create(&dir.join("receptions.csv"))?;
    metrics::write_receptions(&mut w, &out.samples)?;
    w.flush()?;
    let mut w = create(&dir.join("oar.csv"))?;
    metrics::write_oar(&mut w, &out.oar)?;
    w.flush()?;
    let mut w = create(&dir.join("crr.csv"))?;
    metrics::write_crr(&mut w, cfg.cps.reaction_time_s, cfg.mac.counter_retx, &out.crr)?;
    w.flush()?;
    let mut w = create(&dir.join("dup.csv"))?;
    metrics::write_dup(&mut w, &out.dup)?;
    w.flush()?;
    if cfg.run.trace {
        let mut w = create(&dir.join("mac_trace.csv"))?;
        write_trace(&mut w, &out.trace)?;
        w.flush()?;
    }
    let manifest = Manifest {
        config_hash: cfg.hash(),
        seed: out.seed,
        version: env!("CARGO_PKG_VERSION"),
        config: cfg,
    };
    let mut w = create(&dir.join("manifest.json"))?;
    serde_json::to_writer_pretty(&mut w, &manifest)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

pub fn write_trace<W: Write>(mut w: W, records: &[TraceRecord]) -> std::io::Result<()> {
    writeln!(w, "node,role,kind,pkt_source,pkt_seq,peer,t_start,t_end,outcome")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{:.9},{:.9},{}",
            r.node,
            r.role,
            r.kind,
            r.pkt_id.source,
            r.pkt_id.seq,
            r.peer.map(|p| p.to_string()).unwrap_or_else(|| "NA".into()),
            r.t_start,
            r.t_end,
            r.outcome
        )?;
    }
    Ok(())
}

/// Runs every configured seed (in parallel) and returns the results in seed order.
pub fn run_batch(cfg: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    cfg.run
        .seeds
        .par_iter()
        .map(|&seed| run_seed(cfg, seed).with_context(|| format!("seed {seed}")))
        .collect()
}

/// Runs the batch and writes `seed-<n>/` directories plus `summary.csv` under `out`.
pub fn run_to_dir(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SeedResult>> {
    ensure_writable(out)?;
    let outputs = run_batch(cfg)?;
    for o in &outputs {
        write_run(&out.join(format!("seed-{}", o.seed)), cfg, o)?;
    }
    let results: Vec<SeedResult> = outputs.iter().map(SeedResult::from).collect();
    let point = SweepPoint::of(cfg);
    let mut w = create(&out.join("summary.csv"))?;
    write_sweep_rows(&mut w, &[(point, aggregate(&results, cfg.run.bin_width_m))])?;
    w.flush()?;
    Ok(results)
}

/// Coordinates of one sweep point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub rt: f64,
    pub counter_retx: u32,
}

impl SweepPoint {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        Self { rt: cfg.cps.reaction_time_s, counter_retx: cfg.mac.counter_retx }
    }

    fn dir_name(&self) -> String {
        format!("rt-{}_retx-{}", fmt_g6(self.rt), self.counter_retx)
    }
}

pub const SWEEP_HEADER: &str = "rt,counter_retx,metric,bin_center,seeds,mean,std";

pub fn write_sweep_rows<W: Write>(mut w: W, points: &[(SweepPoint, Vec<AggregateRow>)]) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for (p, rows) in points {
        for r in rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                fmt_g6(p.rt),
                p.counter_retx,
                r.metric,
                r.bin_center.map(fmt_g6).unwrap_or_else(|| "NA".into()),
                r.seeds,
                fmt_g6(r.mean),
                fmt_g6(r.std)
            )?;
        }
    }
    Ok(())
}

/// Cartesian product of the axis values applied to `base`.
pub fn sweep_configs(base: &ExperimentConfig, axes: &[(Axis, Vec<f64>)]) -> Result<Vec<ExperimentConfig>> {
    let mut configs = vec![base.clone()];
    for (axis, values) in axes {
        if values.is_empty() {
            bail!("no values given for axis {axis}");
        }
        let mut next = Vec::with_capacity(configs.len() * values.len());
        for c in &configs {
            for &v in values {
                let mut c = c.clone();
                axis.apply(&mut c, v)?;
                c.validate()?;
                next.push(c);
            }
        }
        configs = next;
    }
    Ok(configs)
}

/// Runs every sweep point and writes per-point directories plus `sweep.csv`.
pub fn sweep_to_dir(base: &ExperimentConfig, axes: &[(Axis, Vec<f64>)], out: &Path) -> Result<PathBuf> {
    ensure_writable(out)?;
    let mut points = Vec::new();
    for cfg in sweep_configs(base, axes)? {
        let point = SweepPoint::of(&cfg);
        log::info!("sweep point rt={} counter_retx={}", point.rt, point.counter_retx);
        let results = run_to_dir(&cfg, &out.join(point.dir_name()))?;
        points.push((point, aggregate(&results, cfg.run.bin_width_m)));
    }
    let path = out.join("sweep.csv");
    let mut w = create(&path)?;
    write_sweep_rows(&mut w, &points)?;
    w.flush()?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed_result(seed: u64, crr: (u32, u32), oar: &[(f64, u32, u32)]) -> SeedResult {
        SeedResult {
            seed,
            crr: CrrResult { eligible: crr.0, informed: crr.1 },
            oar: oar
                .iter()
                .map(|&(center, windows, successes)| OarBin { center, windows, successes })
                .collect(),
            dup: Vec::new(),
            stats: RunStats::default(),
        }
    }

    #[test]
    fn aggregate_means_match_per_seed_values() {
        let rs = [
            seed_result(1, (10, 5), &[(40.0, 4, 2), (50.0, 2, 2)]),
            seed_result(2, (0, 0), &[(50.0, 4, 1)]),
            seed_result(3, (4, 4), &[]),
        ];
        let rows = aggregate(&rs, 10.0);
        let crr = rows.iter().find(|r| r.metric == "crr").unwrap();
        assert_eq!(crr.seeds, 2);
        assert_eq!(crr.mean, 75.0);
        let b50 = rows.iter().find(|r| r.metric == "oar" && r.bin_center == Some(50.0)).unwrap();
        assert_eq!(b50.seeds, 2);
        assert!((b50.mean - 0.625).abs() < 1e-12);
    }

    #[test]
    fn sweep_is_cartesian() {
        let base = ExperimentConfig::default();
        let cfgs = sweep_configs(
            &base,
            &[(Axis::Rt, vec![0.75, 1.0, 1.25]), (Axis::CounterRetx, vec![0.0, 3.0])],
        )
        .unwrap();
        assert_eq!(cfgs.len(), 6);
        assert_eq!(cfgs[1].cps.reaction_time_s, 0.75);
        assert_eq!(cfgs[1].mac.counter_retx, 3);
        assert!(sweep_configs(&base, &[(Axis::CounterRetx, vec![1.5])]).is_err());
    }

    #[test]
    fn axis_and_values_parse() {
        assert_eq!("rt".parse::<Axis>().unwrap(), Axis::Rt);
        assert_eq!("counter-retx".parse::<Axis>().unwrap(), Axis::CounterRetx);
        assert!("speed".parse::<Axis>().is_err());
        assert_eq!(parse_values("0.75, 1,1.25").unwrap(), vec![0.75, 1.0, 1.25]);
        assert!(parse_values("a").is_err());
    }
}
