use std::collections::{BTreeMap, BTreeSet};

use crate::codec::{GeolocationBlock, Publish, QoS, Will};
use crate::packet_id::PacketIds;
use crate::topic::topic_matches;
use crate::{GeoPoint, Geofence, Timestamp};

use super::ConnectionId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubscriptionEntry {
    pub filter: String,
    pub qos: QoS,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocationRecord {
    pub block: GeolocationBlock,
    pub updated_at: Timestamp,
}

impl LocationRecord {
    pub fn point(&self) -> GeoPoint {
        GeoPoint::from(&self.block)
    }
}

/// Acknowledgement an outbound flight is waiting for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Stage {
    Ack,
    Rec,
    Comp,
}

/// Outbound QoS 1/2 message awaiting acknowledgement from the subscriber.
#[derive(Debug, Clone)]
pub(crate) struct Flight {
    pub publish: Publish,
    pub stage: Stage,
    /// `None` while queued for an offline persistent session.
    pub sent_at: Option<Timestamp>,
}

/// Broker-side state for one client identifier.
#[derive(Debug, Clone)]
pub struct ClientSession {
    pub client_id: String,
    pub clean_session: bool,
    pub connection: Option<ConnectionId>,
    pub subscriptions: Vec<SubscriptionEntry>,
    pub last_location: Option<LocationRecord>,
    pub fence: Option<Geofence>,
    pub geo_capable: bool,
    pub keep_alive: u16,
    pub(crate) will: Option<Will>,
    pub(crate) outbound: BTreeMap<u16, Flight>,
    pub(crate) inbound_qos2: BTreeSet<u16>,
    ids: PacketIds,
}

impl ClientSession {
    pub fn new(client_id: impl Into<String>) -> Self {
        ClientSession {
            client_id: client_id.into(),
            clean_session: true,
            connection: None,
            subscriptions: Vec::new(),
            last_location: None,
            fence: None,
            geo_capable: false,
            keep_alive: 0,
            will: None,
            outbound: BTreeMap::new(),
            inbound_qos2: BTreeSet::new(),
            ids: PacketIds::new(),
        }
    }

    pub fn is_online(&self) -> bool {
        self.connection.is_some()
    }

    /// Records `block` as the last known location. The timestamp never moves
    /// backwards.
    pub fn update_last_location(&mut self, block: GeolocationBlock, now: Timestamp) {
        let updated_at = match self.last_location {
            Some(prev) if prev.updated_at > now => prev.updated_at,
            _ => now,
        };
        self.last_location = Some(LocationRecord { block, updated_at });
        self.geo_capable = true;
    }

    pub fn last_point(&self) -> Option<GeoPoint> {
        self.last_location.map(|l| l.point())
    }

    /// Adds or replaces the subscription for `filter`.
    pub fn subscribe(&mut self, filter: &str, qos: QoS) {
        match self.subscriptions.iter_mut().find(|s| s.filter == filter) {
            Some(existing) => existing.qos = qos,
            None => self.subscriptions.push(SubscriptionEntry {
                filter: filter.to_owned(),
                qos,
            }),
        }
    }

    pub fn unsubscribe(&mut self, filter: &str) {
        self.subscriptions.retain(|s| s.filter != filter);
    }

    /// Highest granted QoS among subscriptions matching `topic`.
    pub fn matching_qos(&self, topic: &str) -> Option<QoS> {
        self.subscriptions
            .iter()
            .filter(|s| topic_matches(&s.filter, topic))
            .map(|s| s.qos)
            .max()
    }

    pub fn inflight_count(&self) -> usize {
        self.outbound.len()
    }

    pub(crate) fn allocate_id(&mut self) -> Option<u16> {
        let outbound = &self.outbound;
        self.ids.allocate(|id| outbound.contains_key(&id))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn last_location_last_writer_wins() {
        let mut s = ClientSession::new("c");
        assert!(!s.geo_capable);
        let a = GeolocationBlock::new(1.0, 2.0, 3.0);
        let b = GeolocationBlock::new(4.0, 5.0, 6.0);
        s.update_last_location(a, Timestamp::from_millis(10));
        assert!(s.geo_capable);
        assert_eq!(s.last_location.unwrap().block, a);
        s.update_last_location(b, Timestamp::from_millis(20));
        assert_eq!(s.last_location.unwrap().block, b);
        assert_eq!(
            s.last_location.unwrap().updated_at,
            Timestamp::from_millis(20)
        );
        s.update_last_location(a, Timestamp::from_millis(5));
        assert_eq!(s.last_location.unwrap().block, a);
        assert_eq!(
            s.last_location.unwrap().updated_at,
            Timestamp::from_millis(20)
        );
    }

    #[test]
    fn overlapping_subscriptions_take_max_qos() {
        let mut s = ClientSession::new("c");
        s.subscribe("a/+", QoS::AtMostOnce);
        s.subscribe("a/#", QoS::ExactlyOnce);
        assert_eq!(s.matching_qos("a/b"), Some(QoS::ExactlyOnce));
        s.subscribe("a/#", QoS::AtLeastOnce);
        assert_eq!(s.subscriptions.len(), 2);
        assert_eq!(s.matching_qos("a/b"), Some(QoS::AtLeastOnce));
        s.unsubscribe("a/#");
        assert_eq!(s.matching_qos("a/b"), Some(QoS::AtMostOnce));
        assert_eq!(s.matching_qos("b"), None);
    }
}
