//! Scenario harness: scripted runs against the relay (in process or over
//! the network), an independent audibility oracle, a transcript leak
//! scanner and a seeded privacy fuzzer.

use thiserror::Error;

pub mod fuzz;
pub mod leak;
pub mod oracle;
pub mod runner;
pub mod scenario;
pub mod transcript;

pub use fuzz::{check_scenario, fuzz, generate_scenario, shrink, FuzzBounds, FuzzFailure, FuzzSummary};
pub use leak::{leak_scan, noninterference_violations, LeakReport, LeakRule, Violation};
pub use oracle::{oracle_recipients, OracleError, OracleState, OracleUser};
pub use runner::{run_in_process, run_in_process_observed, run_live, run_scenario, Mode, StepView};
pub use scenario::{Scenario, ScriptAction, ScriptOp};
pub use transcript::{ChannelEvent, ChannelHistory, ChannelOp, DeliveryRecord, RunOutput, Transcript};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    ScenarioInvalid(String),
    #[error("connection failed: {0}")]
    ConnectionFailed(String),
}
