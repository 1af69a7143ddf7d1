//! `$SYSg` topic namespace: geofence submission from clients to the broker.
//!
//! Fence payload layout, numerics little-endian like the geolocation block:
//!
//! ```text
//! version u8 (=1) | mode u8 (0 static, 1 dynamic) | vertex_count u16
//! vertex_count x ( latitude f64 | longitude f64 )
//! ```

use thiserror::Error;

use crate::geometry::{FenceMode, GeometryError, Point};
use crate::Geofence;

pub const SYSG_PREFIX: &str = "$SYSg/";
pub const FENCE_SET_TOPIC: &str = "$SYSg/geofence/set";
pub const FENCE_CLEAR_TOPIC: &str = "$SYSg/geofence/clear";
pub const FENCE_PAYLOAD_VERSION: u8 = 1;

const HEADER_LEN: usize = 4;
const VERTEX_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SysgError {
    #[error("fence payload too short: {0} bytes")]
    Truncated(usize),
    #[error("unsupported fence payload version {0}")]
    Version(u8),
    #[error("unknown fence mode {0}")]
    Mode(u8),
    #[error("fence payload length {actual} does not match {count} vertices")]
    Length { count: usize, actual: usize },
    #[error("too many vertices: {0}")]
    TooManyVertices(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("unknown $SYSg topic {0:?}")]
    UnknownTopic(String),
}

pub fn is_sysg_topic(topic: &str) -> bool {
    topic.starts_with(SYSG_PREFIX)
}

/// Encodes a fence for `$SYSg/geofence/set`. The fence is validated first.
pub fn encode_fence(fence: &Geofence) -> Result<Vec<u8>, SysgError> {
    fence.validate()?;
    let count = u16::try_from(fence.vertices.len())
        .map_err(|_| SysgError::TooManyVertices(fence.vertices.len()))?;
    let mut out = Vec::with_capacity(HEADER_LEN + VERTEX_LEN * fence.vertices.len());
    out.push(FENCE_PAYLOAD_VERSION);
    out.push(match fence.mode {
        FenceMode::Static => 0,
        FenceMode::Dynamic => 1,
    });
    out.extend_from_slice(&count.to_le_bytes());
    for v in &fence.vertices {
        out.extend_from_slice(&v.latitude.to_le_bytes());
        out.extend_from_slice(&v.longitude.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_fence(payload: &[u8]) -> Result<Geofence, SysgError> {
    if payload.len() < HEADER_LEN {
        return Err(SysgError::Truncated(payload.len()));
    }
    if payload[0] != FENCE_PAYLOAD_VERSION {
        return Err(SysgError::Version(payload[0]));
    }
    let mode = match payload[1] {
        0 => FenceMode::Static,
        1 => FenceMode::Dynamic,
        m => return Err(SysgError::Mode(m)),
    };
    let count = u16::from_le_bytes([payload[2], payload[3]]) as usize;
    if payload.len() != HEADER_LEN + count * VERTEX_LEN {
        return Err(SysgError::Length {
            count,
            actual: payload.len(),
        });
    }
    let f64_at = |at: usize| {
        let mut b = [0u8; 8];
        b.copy_from_slice(&payload[at..at + 8]);
        f64::from_le_bytes(b)
    };
    let vertices = (0..count)
        .map(|i| {
            let at = HEADER_LEN + i * VERTEX_LEN;
            Point::new(f64_at(at), f64_at(at + 8))
        })
        .collect();
    let fence = Geofence::new(mode, vertices);
    fence.validate()?;
    Ok(fence)
}
