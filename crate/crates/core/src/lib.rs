//! Discrete-event simulator for context-based acknowledgement of broadcast
//! Collective Perception Messages at an urban intersection.

pub mod channel;
pub mod config;
pub mod cps;
pub mod engine;
pub mod experiment;
pub mod geometry;
pub mod mac;
pub mod metrics;
pub mod scenario;
pub mod sim;

pub use channel::{LinkCondition, RadioConfig};
pub use cps::{critical_distance, select_ack_target, CpmGenerator, CpmMessage, CpsConfig, CrWindow};
pub use engine::{RngStreams, Scheduler, SimTime};
pub use mac::{AckResult, Mac, MacConfig, V2xPktId};
pub use scenario::{NodeId, NodeKind, Scenario, ScenarioConfig};
