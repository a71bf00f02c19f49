//! Radio propagation and frame reception.
//!
//! Pathloss follows the WINNER+ B1 street-canyon model in the V2V form used
//! by 3GPP TR 36.885: a log-distance LOS law and, around a corner, the
//! Manhattan-grid NLOS law over the two perpendicular street legs.
//! Shadowing is i.i.d. log-normal per (transmission, link).

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::scenario::RoadLayout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadioConfig {
    pub tx_power_dbm: f64,
    pub tx_antenna_gain_dbi: f64,
    pub rx_antenna_gain_dbi: f64,
    pub carrier_ghz: f64,
    pub bandwidth_hz: f64,
    pub noise_figure_db: f64,
    pub data_rate_mbps: f64,
    pub sensitivity_dbm: f64,
    pub sinr_threshold_db: f64,
    pub energy_detection_dbm: f64,
    pub shadowing_enabled: bool,
    pub shadowing_sigma_los_db: f64,
    pub shadowing_sigma_nlos_db: f64,
    pub min_distance_m: f64,
}

impl Default for RadioConfig {
    fn default() -> Self {
        Self {
            tx_power_dbm: 23.0,
            tx_antenna_gain_dbi: 0.0,
            rx_antenna_gain_dbi: 0.0,
            carrier_ghz: 5.9,
            bandwidth_hz: 10e6,
            noise_figure_db: 9.0,
            data_rate_mbps: 6.0,
            sensitivity_dbm: -73.0,
            sinr_threshold_db: 5.0,
            energy_detection_dbm: -85.0,
            shadowing_enabled: true,
            shadowing_sigma_los_db: 3.0,
            shadowing_sigma_nlos_db: 4.0,
            min_distance_m: 3.0,
        }
    }
}

impl RadioConfig {
    pub fn noise_floor_dbm(&self) -> f64 {
        thermal_noise_dbm(self.bandwidth_hz, self.noise_figure_db)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LinkCondition {
    Los,
    Nlos,
}

/// NLOS iff the segment between the two points crosses a building block.
pub fn classify_los(a: Vec2, b: Vec2, layout: &RoadLayout) -> LinkCondition {
    if layout.line_of_sight(a, b) {
        LinkCondition::Los
    } else {
        LinkCondition::Nlos
    }
}

pub fn pathloss_los_db(distance_m: f64, carrier_ghz: f64) -> f64 {
    22.7 * distance_m.log10() + 41.0 + 20.0 * (carrier_ghz / 5.0).log10()
}

fn manhattan_leg_db(dk: f64, dl: f64, carrier_ghz: f64) -> f64 {
    let nj = (2.8 - 0.0024 * dk).max(1.84);
    pathloss_los_db(dk, carrier_ghz) + 20.0 - 12.5 * nj + 10.0 * nj * dl.log10()
        + 3.0 * (carrier_ghz / 5.0).log10()
}

/// Manhattan-grid NLOS pathloss over the two perpendicular street legs.
pub fn pathloss_nlos_db(leg_a_m: f64, leg_b_m: f64, carrier_ghz: f64) -> f64 {
    manhattan_leg_db(leg_a_m, leg_b_m, carrier_ghz).min(manhattan_leg_db(leg_b_m, leg_a_m, carrier_ghz))
}

/// Pathloss between two positions under the given condition. Distances below
/// `min_distance_m` are clamped.
pub fn pathloss_db(a: Vec2, b: Vec2, condition: LinkCondition, carrier_ghz: f64, min_distance_m: f64) -> f64 {
    match condition {
        LinkCondition::Los => pathloss_los_db(a.distance(b).max(min_distance_m), carrier_ghz),
        LinkCondition::Nlos => {
            let d = b - a;
            pathloss_nlos_db(
                d.x.abs().max(min_distance_m),
                d.y.abs().max(min_distance_m),
                carrier_ghz,
            )
        }
    }
}

pub fn shadowing_sample<R: Rng>(rng: &mut R, condition: LinkCondition, cfg: &RadioConfig) -> f64 {
    if !cfg.shadowing_enabled {
        return 0.0;
    }
    let sigma = match condition {
        LinkCondition::Los => cfg.shadowing_sigma_los_db,
        LinkCondition::Nlos => cfg.shadowing_sigma_nlos_db,
    };
    Normal::new(0.0, sigma).expect("finite sigma").sample(rng)
}

/// Thermal noise over `bandwidth_hz` plus the receiver noise figure.
pub fn thermal_noise_dbm(bandwidth_hz: f64, noise_figure_db: f64) -> f64 {
    -174.0 + 10.0 * bandwidth_hz.log10() + noise_figure_db
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkBudget {
    pub tx_power_dbm: f64,
    pub tx_gain_dbi: f64,
    pub rx_gain_dbi: f64,
    pub pathloss_db: f64,
    pub shadowing_db: f64,
    rx_power_dbm: f64,
}

impl LinkBudget {
    pub fn new(tx_power_dbm: f64, tx_gain_dbi: f64, rx_gain_dbi: f64, pathloss_db: f64, shadowing_db: f64) -> Self {
        let rx_power_dbm = Self::combine(tx_power_dbm, tx_gain_dbi, rx_gain_dbi, pathloss_db, shadowing_db);
        Self {
            tx_power_dbm,
            tx_gain_dbi,
            rx_gain_dbi,
            pathloss_db,
            shadowing_db,
            rx_power_dbm,
        }
    }

    fn combine(tx: f64, gt: f64, gr: f64, pl: f64, sh: f64) -> f64 {
        tx + gt + gr - pl - sh
    }

    pub fn rx_power_dbm(&self) -> f64 {
        self.rx_power_dbm
    }

    /// Recomputes the received power from the stored components.
    pub fn reconstruct_rx_power_dbm(&self) -> f64 {
        Self::combine(
            self.tx_power_dbm,
            self.tx_gain_dbi,
            self.rx_gain_dbi,
            self.pathloss_db,
            self.shadowing_db,
        )
    }

    /// Full link evaluation between two positions, drawing shadowing from `rng`.
    pub fn evaluate<R: Rng>(a: Vec2, b: Vec2, layout: &RoadLayout, cfg: &RadioConfig, rng: &mut R) -> (Self, LinkCondition) {
        let condition = classify_los(a, b, layout);
        let pl = pathloss_db(a, b, condition, cfg.carrier_ghz, cfg.min_distance_m);
        let sh = shadowing_sample(rng, condition, cfg);
        (
            Self::new(cfg.tx_power_dbm, cfg.tx_antenna_gain_dbi, cfg.rx_antenna_gain_dbi, pl, sh),
            condition,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ReceptionContext {
    pub noise_floor_dbm: f64,
    pub interferers_dbm: Vec<f64>,
}

impl ReceptionContext {
    pub fn new(noise_floor_dbm: f64) -> Self {
        Self {
            noise_floor_dbm,
            interferers_dbm: Vec::new(),
        }
    }

    pub fn noise_plus_interference_mw(&self) -> f64 {
        dbm_to_mw(self.noise_floor_dbm) + self.interferers_dbm.iter().map(|p| dbm_to_mw(*p)).sum::<f64>()
    }

    pub fn sinr_db(&self, rx_power_dbm: f64) -> f64 {
        rx_power_dbm - mw_to_dbm(self.noise_plus_interference_mw())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Received,
    Lost,
}

/// Reception decision given the worst interference seen during the frame.
pub fn frame_outcome(rx_power_dbm: f64, ctx: &ReceptionContext, cfg: &RadioConfig) -> Outcome {
    if rx_power_dbm >= cfg.sensitivity_dbm && ctx.sinr_db(rx_power_dbm) >= cfg.sinr_threshold_db {
        Outcome::Received
    } else {
        Outcome::Lost
    }
}

/// Same decision as [`frame_outcome`] with powers already in mW.
pub fn frame_outcome_mw(rx_mw: f64, noise_mw: f64, max_interference_mw: f64, cfg: &RadioConfig) -> Outcome {
    let sinr_db = mw_to_dbm(rx_mw) - mw_to_dbm(noise_mw + max_interference_mw);
    if mw_to_dbm(rx_mw) >= cfg.sensitivity_dbm && sinr_db >= cfg.sinr_threshold_db {
        Outcome::Received
    } else {
        Outcome::Lost
    }
}

/// Energy detection: busy iff aggregate in-band power reaches the threshold.
pub fn carrier_sensed(total_power_dbm: f64, threshold_dbm: f64) -> bool {
    total_power_dbm >= threshold_dbm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::RngStreams;
    use crate::scenario::ScenarioConfig;

    fn layout() -> RoadLayout {
        RoadLayout::from_config(&ScenarioConfig::default())
    }

    #[test]
    fn los_pathloss_reference_points() {
        // 22.7·log10(d) + 41 + 20·log10(5.9/5), evaluated independently.
        let offset = 20.0 * (5.9f64 / 5.0).log10();
        assert!((pathloss_los_db(10.0, 5.9) - (22.7 + 41.0 + offset)).abs() < 1e-12);
        assert!((pathloss_los_db(10.0, 5.9) - 65.1).abs() < 0.05);
        assert!((pathloss_los_db(100.0, 5.9) - 87.8).abs() < 0.05);
        assert!(pathloss_los_db(200.0, 5.9) > pathloss_los_db(100.0, 5.9));
    }

    #[test]
    fn nlos_is_symmetric_and_worse_than_los() {
        let a = pathloss_nlos_db(13.0, 70.0, 5.9);
        let b = pathloss_nlos_db(70.0, 13.0, 5.9);
        assert_eq!(a, b);
        assert!(a > pathloss_los_db(83.0, 5.9));
    }

    #[test]
    fn distance_clamped_below_min() {
        let p = Vec2::new(0.0, 0.0);
        let q = Vec2::new(0.0, 0.5);
        assert_eq!(
            pathloss_db(p, q, LinkCondition::Los, 5.9, 3.0),
            pathloss_los_db(3.0, 5.9)
        );
    }

    #[test]
    fn los_classification_examples() {
        let l = layout();
        let a = Vec2::new(l.vertical_lane_x, 100.0);
        let b = Vec2::new(l.vertical_lane_x, 300.0);
        assert_eq!(classify_los(a, b, &l), LinkCondition::Los);
        // Vertical vehicle 80 m from the intersection, queued vehicle 30 m from it.
        let v = Vec2::new(l.vertical_lane_x, 80.0);
        let q = Vec2::new(-30.0, l.horizontal_lane_y);
        assert_eq!(classify_los(v, q, &l), LinkCondition::Nlos);
        // Vertical vehicle inside the intersection box.
        let inside = Vec2::new(l.vertical_lane_x, 5.0);
        assert_eq!(classify_los(inside, q, &l), LinkCondition::Los);
    }

    #[test]
    fn noise_floor_from_bandwidth_and_figure() {
        let n = RadioConfig::default().noise_floor_dbm();
        assert!((n - -95.0).abs() < 0.01, "{n}");
    }

    #[test]
    fn outcome_examples() {
        let cfg = RadioConfig::default();
        let ctx = ReceptionContext::new(cfg.noise_floor_dbm());
        assert!((ctx.sinr_db(-60.0) - 35.0).abs() < 0.01);
        assert_eq!(frame_outcome(-60.0, &ctx, &cfg), Outcome::Received);
        assert_eq!(frame_outcome(cfg.sensitivity_dbm - 0.1, &ctx, &cfg), Outcome::Lost);
        let jammed = ReceptionContext {
            noise_floor_dbm: cfg.noise_floor_dbm(),
            interferers_dbm: vec![-60.0],
        };
        assert!(jammed.sinr_db(-60.0).abs() < 0.01);
        assert_eq!(frame_outcome(-60.0, &jammed, &cfg), Outcome::Lost);
        let noise = dbm_to_mw(cfg.noise_floor_dbm());
        assert_eq!(frame_outcome_mw(dbm_to_mw(-60.0), noise, dbm_to_mw(-60.0), &cfg), Outcome::Lost);
        assert_eq!(frame_outcome_mw(dbm_to_mw(-60.0), noise, 0.0, &cfg), Outcome::Received);
    }

    #[test]
    fn carrier_sense_threshold_inclusive() {
        assert!(carrier_sensed(-80.0, -85.0));
        assert!(!carrier_sensed(-90.0, -85.0));
        assert!(carrier_sensed(-85.0, -85.0));
    }

    #[test]
    fn shadowing_disabled_is_zero() {
        let cfg = RadioConfig { shadowing_enabled: false, ..RadioConfig::default() };
        let mut rng = RngStreams::new(3).stream("shadowing");
        assert_eq!(shadowing_sample(&mut rng, LinkCondition::Nlos, &cfg), 0.0);
    }

    #[test]
    fn deterministic_step_without_shadowing() {
        let cfg = RadioConfig { shadowing_enabled: false, ..RadioConfig::default() };
        let l = layout();
        let ctx = ReceptionContext::new(cfg.noise_floor_dbm());
        let mut rng = RngStreams::new(3).stream("shadowing");
        let mut last = Outcome::Received;
        let mut flips = 0;
        for d in (5..3000).step_by(5) {
            let a = Vec2::new(l.vertical_lane_x, 0.0);
            let b = Vec2::new(l.vertical_lane_x, d as f64);
            let (lb, _) = LinkBudget::evaluate(a, b, &l, &cfg, &mut rng);
            let o = frame_outcome(lb.rx_power_dbm(), &ctx, &cfg);
            if o != last {
                flips += 1;
                last = o;
            }
        }
        assert_eq!(flips, 1);
        assert_eq!(last, Outcome::Lost);
    }

    proptest::proptest! {
        #[test]
        fn link_budget_reconstructs_bit_for_bit(
            tx in -10.0f64..40.0, gt in -5.0f64..10.0, gr in -5.0f64..10.0,
            pl in 30.0f64..160.0, sh in -20.0f64..20.0,
        ) {
            let lb = LinkBudget::new(tx, gt, gr, pl, sh);
            proptest::prop_assert_eq!(lb.rx_power_dbm().to_bits(), lb.reconstruct_rx_power_dbm().to_bits());
            proptest::prop_assert_eq!(lb.rx_power_dbm(), tx + gt + gr - pl - sh);
        }

        #[test]
        fn sinr_matches_linear_sum(rx in -100.0f64..-30.0, i1 in -110.0f64..-50.0, i2 in -110.0f64..-50.0) {
            let ctx = ReceptionContext { noise_floor_dbm: -95.0, interferers_dbm: vec![i1, i2] };
            let lin = dbm_to_mw(-95.0) + dbm_to_mw(i1) + dbm_to_mw(i2);
            proptest::prop_assert!((ctx.sinr_db(rx) - (rx - 10.0 * lin.log10())).abs() < 1e-9);
        }
    }
}
