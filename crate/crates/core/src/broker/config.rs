use std::net::SocketAddr;
use std::time::Duration;

use thiserror::Error;

use crate::codec::Mode;

use super::UnknownLocationPolicy;

pub const DEFAULT_PORT: u16 = 1883;

#[derive(Debug, Clone, PartialEq)]
pub struct BrokerConfig {
    pub listen: SocketAddr,
    /// Upper bound on the keep-alive the broker enforces; a client asking for
    /// 0 or more than this is held to this value.
    pub max_keep_alive: u16,
    pub retransmit_timeout: Duration,
    pub unknown_location: UnknownLocationPolicy,
    /// Reject geolocation-bearing packets as plain MQTT 3.1.1 would.
    pub strict: bool,
}

impl Default for BrokerConfig {
    fn default() -> Self {
        BrokerConfig {
            listen: SocketAddr::from(([0, 0, 0, 0], DEFAULT_PORT)),
            max_keep_alive: u16::MAX,
            retransmit_timeout: Duration::from_secs(5),
            unknown_location: UnknownLocationPolicy::FailOpen,
            strict: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for {key}: {value:?}")]
    BadValue {
        line: usize,
        key: String,
        value: String,
    },
}

fn parse_bool(v: &str) -> Option<bool> {
    match v {
        "true" | "yes" | "on" | "1" => Some(true),
        "false" | "no" | "off" | "0" => Some(false),
        _ => None,
    }
}

impl BrokerConfig {
    pub fn codec_mode(&self) -> Mode {
        if self.strict {
            Mode::Strict311
        } else {
            Mode::Extended
        }
    }

    /// Parses `key = value` lines on top of the defaults. `#` starts a
    /// comment.
    ///
    /// Keys: `listen`, `max_keep_alive`, `retransmit_timeout_ms`,
    /// `fence_fail_closed`, `strict`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = BrokerConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, value) = content
                .split_once('=')
                .ok_or(ConfigError::Syntax { line })?;
            cfg.set(line, key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    fn set(&mut self, line: usize, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            line,
            key: key.to_owned(),
            value: value.to_owned(),
        };
        match key {
            "listen" => self.listen = value.parse().map_err(|_| bad())?,
            "max_keep_alive" => self.max_keep_alive = value.parse().map_err(|_| bad())?,
            "retransmit_timeout_ms" => {
                self.retransmit_timeout = Duration::from_millis(value.parse().map_err(|_| bad())?)
            }
            "fence_fail_closed" => {
                self.unknown_location = if parse_bool(value).ok_or_else(bad)? {
                    UnknownLocationPolicy::FailClosed
                } else {
                    UnknownLocationPolicy::FailOpen
                }
            }
            "strict" => self.strict = parse_bool(value).ok_or_else(bad)?,
            _ => {
                return Err(ConfigError::UnknownKey {
                    line,
                    key: key.to_owned(),
                })
            }
        }
        Ok(())
    }
}
