use crate::codec::GeolocationBlock;

/// Source of the client's current position. Consulted once per outbound
/// packet, and only while location sharing is enabled.
pub trait LocationProvider {
    fn current(&mut self) -> Option<GeolocationBlock>;
}

impl<P: LocationProvider + ?Sized> LocationProvider for Box<P> {
    fn current(&mut self) -> Option<GeolocationBlock> {
        (**self).current()
    }
}

/// Never has a fix.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoLocation;

impl LocationProvider for NoLocation {
    fn current(&mut self) -> Option<GeolocationBlock> {
        None
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FixedLocation(pub GeolocationBlock);

impl LocationProvider for FixedLocation {
    fn current(&mut self) -> Option<GeolocationBlock> {
        Some(self.0)
    }
}

/// Walks through a list of positions, one per query, then stays on the
/// last one.
#[derive(Debug, Clone)]
pub struct ScriptedPath {
    points: Vec<GeolocationBlock>,
    next: usize,
}

impl ScriptedPath {
    pub fn new(points: Vec<GeolocationBlock>) -> Self {
        ScriptedPath { points, next: 0 }
    }
}

impl LocationProvider for ScriptedPath {
    fn current(&mut self) -> Option<GeolocationBlock> {
        let p = self.points.get(self.next).or(self.points.last()).copied();
        if self.next < self.points.len() {
            self.next += 1;
        }
        p
    }
}
