//! Delivery counts and the bytes-saved proxy for energy.

use std::fmt::Write as _;

use mqttg::broker::Verdict;

use crate::harness::Transmission;
use crate::LogEntry;

/// Column order of [`Metrics::csv`].
pub const CSV_HEADER: &str = "published,forwarded,suppressed_by_subscriber_fence,\
suppressed_by_publisher_fence,bytes_on_wire,delivery_bytes,bytes_saved,savings_ratio,wire_savings_ratio";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Metrics {
    /// Publishes issued by the scenario.
    pub published: u64,
    pub forwarded: u64,
    pub suppressed_by_subscriber_fence: u64,
    pub suppressed_by_publisher_fence: u64,
    /// Bytes of every packet put on the wire in either direction, setup
    /// included.
    pub bytes_on_wire: u64,
    /// Encoded size of forwarded deliveries.
    pub delivery_bytes: u64,
    /// Encoded size of the deliveries that fences suppressed.
    pub bytes_saved: u64,
}

impl Metrics {
    pub fn from_run(published: u64, log: &[LogEntry], wire: &[Transmission]) -> Self {
        let mut m = Metrics {
            published,
            bytes_on_wire: wire.iter().map(|t| t.len as u64).sum(),
            ..Metrics::default()
        };
        for e in log {
            let len = e.encoded_len as u64;
            match e.verdict {
                Verdict::Forwarded => {
                    m.forwarded += 1;
                    m.delivery_bytes += len;
                }
                Verdict::SuppressedBySubscriberFence => {
                    m.suppressed_by_subscriber_fence += 1;
                    m.bytes_saved += len;
                }
                Verdict::SuppressedByPublisherFence => {
                    m.suppressed_by_publisher_fence += 1;
                    m.bytes_saved += len;
                }
            }
        }
        m
    }

    pub fn suppressed(&self) -> u64 {
        self.suppressed_by_subscriber_fence + self.suppressed_by_publisher_fence
    }

    /// (message, subscriber) pairs that matched by topic.
    pub fn candidates(&self) -> u64 {
        self.forwarded + self.suppressed()
    }

    /// Share of candidate delivery bytes that were not sent.
    pub fn savings_ratio(&self) -> f64 {
        ratio(self.bytes_saved, self.delivery_bytes + self.bytes_saved)
    }

    /// Bytes saved relative to all traffic actually sent.
    pub fn wire_savings_ratio(&self) -> f64 {
        ratio(self.bytes_saved, self.bytes_on_wire)
    }

    pub fn csv(&self) -> String {
        format!(
            "{CSV_HEADER}\n{},{},{},{},{},{},{},{:.6},{:.6}\n",
            self.published,
            self.forwarded,
            self.suppressed_by_subscriber_fence,
            self.suppressed_by_publisher_fence,
            self.bytes_on_wire,
            self.delivery_bytes,
            self.bytes_saved,
            self.savings_ratio(),
            self.wire_savings_ratio()
        )
    }

    pub fn report(&self) -> String {
        let mut s = String::new();
        let rows: [(&str, String); 9] = [
            ("published", self.published.to_string()),
            ("forwarded", self.forwarded.to_string()),
            (
                "suppressed_by_subscriber_fence",
                self.suppressed_by_subscriber_fence.to_string(),
            ),
            (
                "suppressed_by_publisher_fence",
                self.suppressed_by_publisher_fence.to_string(),
            ),
            ("bytes_on_wire", self.bytes_on_wire.to_string()),
            ("delivery_bytes", self.delivery_bytes.to_string()),
            ("bytes_saved", self.bytes_saved.to_string()),
            ("savings_ratio", format!("{:.4}", self.savings_ratio())),
            (
                "wire_savings_ratio",
                format!("{:.4}", self.wire_savings_ratio()),
            ),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k:<32}{v}");
        }
        s
    }
}

fn ratio(a: u64, b: u64) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}
