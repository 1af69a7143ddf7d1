//! MQTT 3.1.1 extended with geolocation.
//!
//! Client-origin packets may carry a 21-byte geolocation block. The broker
//! keeps each client's last known location and can suppress deliveries that
//! fall outside polygon geofences, which clients register over the `$SYSg`
//! topic namespace.
//!
//! - [`codec`]: bit-exact wire encoding, byte-compatible with 3.1.1 when no
//!   geolocation is present.
//! - [`geometry`]: polygon fences and point-in-polygon, generic over the
//!   float type.
//! - [`broker`]: the routing engine and its TCP transport.
//! - [`client`]: the client protocol engine, location providers and a
//!   blocking TCP client.

pub mod broker;
pub mod client;
pub mod codec;
pub mod geometry;
pub mod packet_id;
pub mod sysg;
pub mod time;
pub mod topic;

pub use time::Timestamp;

/// Location in degrees, double precision.
pub type GeoPoint = geometry::Point<f64>;
/// Polygon fence in degrees, double precision.
pub type Geofence = geometry::Fence<f64>;
/// Single-precision point, for memory-constrained callers.
pub type GeoPoint32 = geometry::Point<f32>;
pub type Geofence32 = geometry::Fence<f32>;
