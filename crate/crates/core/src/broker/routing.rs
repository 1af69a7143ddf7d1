//! Fence-filtered routing decisions.

use std::fmt;

use crate::codec::{GeolocationBlock, Packet, QoS};
use crate::geometry::{point_in_polygon, resolve_fence, GeometryError};
use crate::{GeoPoint, Geofence};

/// What to do when a fence check needs a location nobody has reported.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnknownLocationPolicy {
    /// The check passes.
    #[default]
    FailOpen,
    /// The check fails and the delivery is suppressed.
    FailClosed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Forwarded,
    SuppressedBySubscriberFence,
    SuppressedByPublisherFence,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Forwarded => "FORWARDED",
            Verdict::SuppressedBySubscriberFence => "SUPPRESSED_BY_SUBSCRIBER_FENCE",
            Verdict::SuppressedByPublisherFence => "SUPPRESSED_BY_PUBLISHER_FENCE",
        }
    }

    pub fn is_suppressed(self) -> bool {
        self != Verdict::Forwarded
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "FORWARDED" => Ok(Verdict::Forwarded),
            "SUPPRESSED_BY_SUBSCRIBER_FENCE" => Ok(Verdict::SuppressedBySubscriberFence),
            "SUPPRESSED_BY_PUBLISHER_FENCE" => Ok(Verdict::SuppressedByPublisherFence),
            other => Err(format!("unknown verdict {other:?}")),
        }
    }
}

/// Routing outcome for one (message, subscriber) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub subscriber_id: String,
    /// Outbound QoS, after downgrading to the subscription's QoS.
    pub qos: QoS,
    pub verdict: Verdict,
    /// Present iff `verdict` is `Forwarded`.
    pub packet: Option<Packet>,
    /// Encoded size of the outbound packet, or of the packet that would
    /// have been sent for a suppressed delivery.
    pub encoded_len: usize,
}

/// One line of the routing log.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RouteRecord {
    pub publisher: String,
    pub topic: String,
    pub subscriber: String,
    pub qos: QoS,
    pub verdict: Verdict,
    /// Encoded size of the (possibly suppressed) outbound packet.
    pub encoded_len: usize,
}

impl fmt::Display for RouteRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ROUTE {} {} {} {}",
            self.publisher, self.topic, self.subscriber, self.verdict
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetainedMessage {
    pub topic: String,
    pub payload: Vec<u8>,
    pub qos: QoS,
    pub publisher_id: String,
    /// Location used for fence checks on replay.
    pub origin_location: Option<GeolocationBlock>,
    /// Geolocation block the original message carried, forwarded to
    /// geo-capable subscribers.
    pub geolocation: Option<GeolocationBlock>,
}

/// A fence together with the location of the client that owns it.
#[derive(Debug, Clone, Copy)]
pub struct FenceOwner<'a> {
    pub fence: Option<&'a Geofence>,
    pub location: Option<GeoPoint>,
}

/// Whether `point` satisfies `owner`'s fence. Vacuously true without a fence.
pub fn within_fence(
    owner: FenceOwner<'_>,
    point: Option<GeoPoint>,
    policy: UnknownLocationPolicy,
) -> bool {
    let Some(fence) = owner.fence else {
        return true;
    };
    let unknown = policy == UnknownLocationPolicy::FailOpen;
    let polygon = match resolve_fence(fence, owner.location) {
        Ok(p) => p,
        Err(GeometryError::NoAnchor) => return unknown,
        Err(_) => return false,
    };
    match point {
        Some(p) => point_in_polygon(p, &polygon).unwrap_or(false),
        None => unknown,
    }
}

/// Both fence checks: the message origin must lie in the subscriber's fence,
/// and the subscriber must lie in the publisher's fence.
pub fn fence_verdict(
    subscriber: FenceOwner<'_>,
    publisher: FenceOwner<'_>,
    origin: Option<GeoPoint>,
    policy: UnknownLocationPolicy,
) -> Verdict {
    if !within_fence(subscriber, origin, policy) {
        Verdict::SuppressedBySubscriberFence
    } else if !within_fence(publisher, subscriber.location, policy) {
        Verdict::SuppressedByPublisherFence
    } else {
        Verdict::Forwarded
    }
}
