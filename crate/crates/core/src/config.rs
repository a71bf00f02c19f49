//! Experiment configuration: one JSON file with `scenario`, `radio`, `mac`,
//! `cps` and `run` sections. Every field has a default; unknown keys are
//! rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::channel::RadioConfig;
use crate::cps::CpsConfig;
use crate::mac::MacConfig;
use crate::scenario::ScenarioConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config key `{key}`: {message}")]
    Parse { key: String, message: String },
    #[error("invalid value for `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub duration_s: f64,
    /// Metrics ignore everything before this time.
    pub warmup_s: f64,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    /// Write `mac_trace.csv` per run.
    pub trace: bool,
    /// Keep every CPM reception in `receptions.csv`, not only VRU-bearing
    /// receptions at vertical-lane vehicles.
    pub record_all_receptions: bool,
    pub awareness_window_s: f64,
    pub bin_width_m: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            duration_s: 200.0,
            warmup_s: 20.0,
            seeds: (1..=20).collect(),
            output_dir: PathBuf::from("results"),
            trace: false,
            record_all_receptions: false,
            awareness_window_s: 0.5,
            bin_width_m: 10.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: ScenarioConfig,
    pub radio: RadioConfig,
    pub mac: MacConfig,
    pub cps: CpsConfig,
    pub run: RunConfig,
}

fn positive(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ConfigError::Invalid { field, message: format!("must be > 0, got {v}") })
    }
}

fn non_negative(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(ConfigError::Invalid { field, message: format!("must be >= 0, got {v}") })
    }
}

fn finite(field: &'static str, v: f64) -> Result<(), ConfigError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ConfigError::Invalid { field, message: format!("must be finite, got {v}") })
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| ConfigError::Parse {
            key: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let digest = Sha256::digest(canonical.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.scenario;
        positive("scenario.vehicle_speed_mps", s.vehicle_speed_mps)?;
        non_negative("scenario.density_veh_per_km", s.density_veh_per_km)?;
        non_negative("scenario.min_headway_s", s.min_headway_s)?;
        positive("scenario.entry_distance_m", s.entry_distance_m)?;
        non_negative("scenario.exit_distance_m", s.exit_distance_m)?;
        positive("scenario.queue_spacing_m", s.queue_spacing_m)?;
        non_negative("scenario.stop_line_offset_m", s.stop_line_offset_m)?;
        non_negative("scenario.pedestrian_mean_interarrival_s", s.pedestrian_mean_interarrival_s)?;
        positive("scenario.pedestrian_speed_mps", s.pedestrian_speed_mps)?;
        positive("scenario.sensor_range_m", s.sensor_range_m)?;
        positive("scenario.street_half_width_m", s.street_half_width_m)?;
        non_negative("scenario.lane_offset_m", s.lane_offset_m)?;
        non_negative("scenario.crosswalk_offset_m", s.crosswalk_offset_m)?;
        positive("scenario.area_half_extent_m", s.area_half_extent_m)?;
        positive("scenario.mobility_step_s", s.mobility_step_s)?;
        if s.lane_offset_m >= s.street_half_width_m {
            return Err(ConfigError::Invalid {
                field: "scenario.lane_offset_m",
                message: "lane must lie inside the street".into(),
            });
        }

        let r = &self.radio;
        finite("radio.tx_power_dbm", r.tx_power_dbm)?;
        finite("radio.tx_antenna_gain_dbi", r.tx_antenna_gain_dbi)?;
        finite("radio.rx_antenna_gain_dbi", r.rx_antenna_gain_dbi)?;
        positive("radio.carrier_ghz", r.carrier_ghz)?;
        positive("radio.bandwidth_hz", r.bandwidth_hz)?;
        non_negative("radio.noise_figure_db", r.noise_figure_db)?;
        positive("radio.data_rate_mbps", r.data_rate_mbps)?;
        finite("radio.sensitivity_dbm", r.sensitivity_dbm)?;
        finite("radio.sinr_threshold_db", r.sinr_threshold_db)?;
        finite("radio.energy_detection_dbm", r.energy_detection_dbm)?;
        non_negative("radio.shadowing_sigma_los_db", r.shadowing_sigma_los_db)?;
        non_negative("radio.shadowing_sigma_nlos_db", r.shadowing_sigma_nlos_db)?;
        positive("radio.min_distance_m", r.min_distance_m)?;

        let m = &self.mac;
        positive("mac.slot_s", m.slot_s)?;
        positive("mac.sifs_s", m.sifs_s)?;
        non_negative("mac.phy_overhead_s", m.phy_overhead_s)?;
        positive("mac.ack_timeout_s", m.ack_timeout_s)?;
        if m.bar_bytes == 0 || m.ack_bytes == 0 {
            return Err(ConfigError::Invalid {
                field: "mac.bar_bytes",
                message: "control frames need a non-zero size".into(),
            });
        }
        if m.queue_capacity == 0 {
            return Err(ConfigError::Invalid { field: "mac.queue_capacity", message: "must be >= 1".into() });
        }

        let c = &self.cps;
        positive("cps.reaction_time_s", c.reaction_time_s)?;
        positive("cps.critical_range_m", c.critical_range_m)?;
        positive("cps.emergency_decel_mps2", c.emergency_decel_mps2)?;
        positive("cps.gen_period_s", c.gen_period_s)?;
        positive("cps.vru_period_s", c.vru_period_s)?;
        positive("cps.object_period_s", c.object_period_s)?;
        non_negative("cps.position_threshold_m", c.position_threshold_m)?;
        non_negative("cps.speed_threshold_mps", c.speed_threshold_mps)?;
        non_negative("cps.heading_threshold_deg", c.heading_threshold_deg)?;
        positive("cps.sensor_info_period_s", c.sensor_info_period_s)?;

        let run = &self.run;
        positive("run.duration_s", run.duration_s)?;
        non_negative("run.warmup_s", run.warmup_s)?;
        if run.warmup_s >= run.duration_s {
            return Err(ConfigError::Invalid {
                field: "run.warmup_s",
                message: format!("must be shorter than run.duration_s ({})", run.duration_s),
            });
        }
        if run.seeds.is_empty() {
            return Err(ConfigError::Invalid { field: "run.seeds", message: "at least one seed required".into() });
        }
        positive("run.awareness_window_s", run.awareness_window_s)?;
        positive("run.bin_width_m", run.bin_width_m)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), cfg);
    }

    #[test]
    fn unknown_key_is_named() {
        let err = ExperimentConfig::from_json(r#"{"mac": {"counter_retxx": 2}}"#).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mac"), "{msg}");
        assert!(msg.contains("counter_retxx"), "{msg}");
    }

    #[test]
    fn negative_density_names_field() {
        let err = ExperimentConfig::from_json(r#"{"scenario": {"density_veh_per_km": -5}}"#).unwrap_err();
        assert!(err.to_string().contains("scenario.density_veh_per_km"), "{err}");
    }

    #[test]
    fn hash_tracks_values() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.cps.reaction_time_s = 0.75;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 64);
    }
}
