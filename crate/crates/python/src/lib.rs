//! Python bindings.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::{json, Value};

use v2x_bcast_ack::channel::{self, LinkCondition};
use v2x_bcast_ack::config::ExperimentConfig;
use v2x_bcast_ack::cps::{self, CpsConfig, CrWindow};
use v2x_bcast_ack::geometry::Vec2;
use v2x_bcast_ack::mac::scripted::{self, AttemptLoss};
use v2x_bcast_ack::scenario::{Kinematics, NodeId, ObjectClass, PerceivedObject};
use v2x_bcast_ack::sim;

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => b.into_pyobject(py)?.to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => n.as_f64().unwrap_or(f64::NAN).into_pyobject(py)?.into_any(),
        },
        Value::String(s) => s.into_pyobject(py)?.into_any(),
        Value::Array(a) => {
            let l = PyList::empty(py);
            for x in a {
                l.append(to_py(py, x)?)?;
            }
            l.into_any()
        }
        Value::Object(o) => {
            let d = PyDict::new(py);
            for (k, x) in o {
                d.set_item(k, to_py(py, x)?)?;
            }
            d.into_any()
        }
    })
}

fn parse_config(config_json: Option<&str>) -> PyResult<ExperimentConfig> {
    match config_json {
        None => Ok(ExperimentConfig::default()),
        Some(text) => ExperimentConfig::from_json(text).map_err(|e| PyValueError::new_err(e.to_string())),
    }
}

fn parse_window(name: &str) -> PyResult<CrWindow> {
    match name {
        "upstream" => Ok(CrWindow::Upstream),
        "centered" => Ok(CrWindow::Centered),
        "downstream" => Ok(CrWindow::Downstream),
        other => Err(PyValueError::new_err(format!("unknown window `{other}`"))),
    }
}

fn parse_class(name: &str) -> PyResult<ObjectClass> {
    match name {
        "vru" => Ok(ObjectClass::Vru),
        "vehicle" => Ok(ObjectClass::Vehicle),
        other => Err(PyValueError::new_err(format!("unknown object class `{other}`"))),
    }
}

/// Default configuration as a JSON string.
#[pyfunction]
fn default_config() -> String {
    ExperimentConfig::default().to_json()
}

/// Parses and validates a JSON config; returns it with defaults filled in.
#[pyfunction]
fn validate_config(config_json: &str) -> PyResult<String> {
    Ok(parse_config(Some(config_json))?.to_json())
}

/// Runs one seed and returns its metrics and counters as a dict.
#[pyfunction]
#[pyo3(signature = (config_json=None, seed=1))]
fn run_simulation<'py>(py: Python<'py>, config_json: Option<&str>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let cfg = parse_config(config_json)?;
    let out = py
        .detach(|| sim::run_seed(&cfg, seed))
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let oar: Vec<Value> = out
        .oar
        .iter()
        .map(|b| json!({"bin_center": b.center, "windows": b.windows, "successes": b.successes, "ratio": b.ratio()}))
        .collect();
    let dup: Vec<Value> = out
        .dup
        .iter()
        .map(|b| json!({"bin_center": b.center, "receivers": b.receivers, "mean_duplicates": b.mean()}))
        .collect();
    let v = json!({
        "seed": out.seed,
        "config_hash": cfg.hash(),
        "crr": {
            "eligible": out.crr.eligible,
            "informed": out.crr.informed,
            "percent": out.crr.percent(),
        },
        "oar": oar,
        "dup": dup,
        "receptions": out.samples.len(),
        "stats": serde_json::to_value(out.stats).map_err(|e| PyRuntimeError::new_err(e.to_string()))?,
    });
    to_py(py, &v)
}

/// Reaction plus braking distance in metres.
#[pyfunction]
fn critical_distance(speed_mps: f64, reaction_time_s: f64, max_decel_mps2: f64) -> f64 {
    cps::critical_distance(speed_mps, reaction_time_s, max_decel_mps2)
}

/// Picks the acknowledging vehicle from `(id, distance)` pairs.
#[pyfunction]
#[pyo3(signature = (candidates, cd, cr, window="upstream"))]
fn select_ack_target(candidates: Vec<(NodeId, f64)>, cd: f64, cr: f64, window: &str) -> PyResult<Option<NodeId>> {
    Ok(cps::select_ack_target(&candidates, cd, cr, parse_window(window)?))
}

/// Pathloss in dB between two points. `los=None` classifies the link on the
/// default road layout.
#[pyfunction]
#[pyo3(signature = (a, b, los=None, carrier_ghz=5.9, min_distance_m=3.0))]
fn pathloss_db(a: (f64, f64), b: (f64, f64), los: Option<bool>, carrier_ghz: f64, min_distance_m: f64) -> f64 {
    let (a, b) = (Vec2::new(a.0, a.1), Vec2::new(b.0, b.1));
    let cond = match los {
        Some(true) => LinkCondition::Los,
        Some(false) => LinkCondition::Nlos,
        None => {
            let layout = v2x_bcast_ack::scenario::RoadLayout::from_config(&Default::default());
            channel::classify_los(a, b, &layout)
        }
    };
    channel::pathloss_db(a, b, cond, carrier_ghz, min_distance_m)
}

#[pyfunction]
#[pyo3(signature = (bandwidth_hz=10e6, noise_figure_db=9.0))]
fn noise_floor_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    channel::thermal_noise_dbm(bandwidth_hz, noise_figure_db)
}

/// Replays one acknowledged CPM over a scripted link. `losses` holds one
/// `(cpm_lost, bar_lost, ack_lost)` tuple per attempt.
#[pyfunction]
fn run_scripted_mac<'py>(py: Python<'py>, counter_retx: u32, losses: Vec<(bool, bool, bool)>) -> PyResult<Bound<'py, PyAny>> {
    let script: Vec<AttemptLoss> = losses
        .into_iter()
        .map(|(cpm, bar, ack)| AttemptLoss { cpm, bar, ack })
        .collect();
    let o = scripted::run_scripted(counter_retx, &script);
    let v = json!({
        "cpm_tx": o.cpm_tx,
        "bar_tx": o.bar_tx,
        "ack_tx": o.ack_tx,
        "result": o.report.map(|r| serde_json::to_value(r.result).unwrap_or(Value::Null)),
        "transmissions": o.report.map(|r| r.transmissions),
        "receptions": o.receptions,
        "duplicates": o.duplicates(),
    });
    to_py(py, &v)
}

/// CPM generation rules for one station.
#[pyclass(name = "CpmGenerator")]
struct PyCpmGenerator {
    inner: cps::CpmGenerator,
}

#[pymethods]
impl PyCpmGenerator {
    #[new]
    #[pyo3(signature = (node=0, cps_json=None))]
    fn new(node: NodeId, cps_json: Option<&str>) -> PyResult<Self> {
        let cfg: CpsConfig = match cps_json {
            None => CpsConfig::default(),
            Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string()))?,
        };
        Ok(Self { inner: cps::CpmGenerator::new(node, cfg) })
    }

    /// Replaces the object table. Each detection is
    /// `(id, "vru" | "vehicle", x, y, speed, heading_deg)`.
    fn update(&mut self, t: f64, detections: Vec<(NodeId, String, f64, f64, f64, f64)>) -> PyResult<()> {
        let dets = detections
            .into_iter()
            .map(|(id, class, x, y, speed, heading)| {
                let k = Kinematics { position: Vec2::new(x, y), speed, heading_deg: heading };
                Ok(PerceivedObject::new(id, parse_class(&class)?, k, t))
            })
            .collect::<PyResult<Vec<_>>>()?;
        self.inner.update(dets);
        Ok(())
    }

    /// Runs one generation check. Returns a dict for the emitted CPM or None.
    #[pyo3(signature = (t, station=(0.0, 0.0, 0.0, 0.0)))]
    fn generate<'py>(&mut self, py: Python<'py>, t: f64, station: (f64, f64, f64, f64)) -> PyResult<Option<Bound<'py, PyAny>>> {
        let k = Kinematics {
            position: Vec2::new(station.0, station.1),
            speed: station.2,
            heading_deg: station.3,
        };
        let Some(cpm) = self.inner.generate(t, k) else {
            return Ok(None);
        };
        let objects: Vec<Value> = cpm
            .pocs
            .iter()
            .map(|p| json!({"id": p.object_id, "class": p.class, "x": p.kinematics.position.x, "y": p.kinematics.position.y}))
            .collect();
        let v = json!({
            "source": cpm.pkt_id.source,
            "seq": cpm.pkt_id.seq,
            "time": cpm.generation_time,
            "objects": objects,
            "sensor_info": cpm.sensor_info,
            "size_bytes": cpm.total_size(),
            "contains_vru": cpm.contains_vru(),
        });
        to_py(py, &v).map(Some)
    }
}

#[pymodule]
fn v2xsim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_simulation, m)?)?;
    m.add_function(wrap_pyfunction!(critical_distance, m)?)?;
    m.add_function(wrap_pyfunction!(select_ack_target, m)?)?;
    m.add_function(wrap_pyfunction!(pathloss_db, m)?)?;
    m.add_function(wrap_pyfunction!(noise_floor_dbm, m)?)?;
    m.add_function(wrap_pyfunction!(run_scripted_mac, m)?)?;
    m.add_class::<PyCpmGenerator>()?;
    Ok(())
}
