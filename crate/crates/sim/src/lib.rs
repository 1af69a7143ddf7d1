//! Deterministic simulation of many moving MQTTg clients against one broker.
//!
//! [`run_scenario`] drives the real broker and client engines over an
//! in-memory transport on a simulated clock. [`oracle_expected_deliveries`]
//! recomputes the routing log from the scenario alone, with its own topic
//! matcher and containment test, so the two can be compared exactly.

pub mod file;
pub mod harness;
pub mod metrics;
pub mod oracle;
pub mod scenario;
pub mod trajectory;

use std::fmt;

use mqttg::broker::Verdict;
use mqttg::codec::QoS;

pub use harness::{run_scenario, run_with, Run, SimOptions};
pub use metrics::{Metrics, CSV_HEADER};
pub use oracle::{compare, oracle_expected_deliveries, Expected};
pub use scenario::{ClientSpec, Movement, PublishSpec, RandomShape, Scenario, ScenarioError};

/// One routing decision for one (message, subscriber) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub time_ms: u64,
    pub publisher: String,
    pub topic: String,
    pub subscriber: String,
    pub qos: QoS,
    pub verdict: Verdict,
    /// Encoded size of the outbound packet. Not part of log equality
    /// against the oracle.
    pub encoded_len: usize,
}

impl LogEntry {
    /// The fields the oracle predicts.
    pub fn key(&self) -> (u64, &str, &str, &str, QoS, Verdict) {
        (
            self.time_ms,
            &self.publisher,
            &self.topic,
            &self.subscriber,
            self.qos,
            self.verdict,
        )
    }
}

impl fmt::Display for LogEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} ROUTE {} {} {} {}",
            self.time_ms, self.publisher, self.topic, self.subscriber, self.verdict
        )
    }
}
