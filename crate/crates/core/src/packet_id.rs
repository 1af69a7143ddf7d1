/// Wrapping 1..=65535 packet identifier counter that skips identifiers still
/// in flight.
#[derive(Debug, Clone, Default)]
pub struct PacketIds {
    last: u16,
}

impl PacketIds {
    pub fn new() -> Self {
        PacketIds::default()
    }

    /// Next free identifier, or `None` when all 65535 are in use.
    pub fn allocate(&mut self, in_use: impl Fn(u16) -> bool) -> Option<u16> {
        let mut id = self.last;
        for _ in 0..u16::MAX {
            id = if id == u16::MAX { 1 } else { id + 1 };
            if !in_use(id) {
                self.last = id;
                return Some(id);
            }
        }
        None
    }
}
