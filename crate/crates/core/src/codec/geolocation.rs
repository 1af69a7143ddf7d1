use super::CodecError;

/// Serialized size of a geolocation block: version, latitude, longitude, elevation.
pub const GEOLOCATION_BLOCK_LEN: usize = 21;

/// The block version this implementation produces.
pub const GEOLOCATION_VERSION: u8 = 1;

/// Client position carried between the variable header and the payload.
///
/// Numeric fields are IEEE-754 and travel little-endian on the wire, unlike
/// the big-endian integers of the surrounding MQTT framing.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GeolocationBlock {
    pub version: u8,
    /// Degrees.
    pub latitude: f64,
    /// Degrees.
    pub longitude: f64,
    /// Metres.
    pub elevation: f32,
}

impl GeolocationBlock {
    pub fn new(latitude: f64, longitude: f64, elevation: f32) -> Self {
        GeolocationBlock {
            version: GEOLOCATION_VERSION,
            latitude,
            longitude,
            elevation,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.latitude.is_finite() && self.longitude.is_finite() && self.elevation.is_finite()
    }

    /// Blocks with any other version decode fine but are flagged by tooling.
    pub fn is_current_version(&self) -> bool {
        self.version == GEOLOCATION_VERSION
    }

    pub(crate) fn write(&self, out: &mut Vec<u8>) -> Result<(), CodecError> {
        if !self.is_finite() {
            return Err(CodecError::InvalidGeolocation);
        }
        out.push(self.version);
        out.extend_from_slice(&self.latitude.to_le_bytes());
        out.extend_from_slice(&self.longitude.to_le_bytes());
        out.extend_from_slice(&self.elevation.to_le_bytes());
        Ok(())
    }

    pub(crate) fn read(bytes: &[u8], allow_non_finite: bool) -> Result<Self, CodecError> {
        if bytes.len() < GEOLOCATION_BLOCK_LEN {
            return Err(CodecError::Truncated);
        }
        let f64_at = |at: usize| {
            let mut b = [0u8; 8];
            b.copy_from_slice(&bytes[at..at + 8]);
            f64::from_le_bytes(b)
        };
        let mut elev = [0u8; 4];
        elev.copy_from_slice(&bytes[17..21]);
        let block = GeolocationBlock {
            version: bytes[0],
            latitude: f64_at(1),
            longitude: f64_at(9),
            elevation: f32::from_le_bytes(elev),
        };
        if !allow_non_finite && !block.is_finite() {
            return Err(CodecError::InvalidGeolocation);
        }
        Ok(block)
    }
}

/// Serializes `b` into exactly [`GEOLOCATION_BLOCK_LEN`] bytes.
pub fn encode_geolocation_block(
    b: &GeolocationBlock,
) -> Result<[u8; GEOLOCATION_BLOCK_LEN], CodecError> {
    let mut v = Vec::with_capacity(GEOLOCATION_BLOCK_LEN);
    b.write(&mut v)?;
    let mut out = [0u8; GEOLOCATION_BLOCK_LEN];
    out.copy_from_slice(&v);
    Ok(out)
}

/// Parses a block from the first 21 bytes of `bytes`, rejecting non-finite
/// coordinates.
pub fn decode_geolocation_block(bytes: &[u8]) -> Result<GeolocationBlock, CodecError> {
    GeolocationBlock::read(bytes, false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Independent little-endian serializer: pull bytes out of the IEEE bit
    // pattern least significant first.
    fn le_bytes_of_bits(bits: u64, width: usize) -> Vec<u8> {
        (0..width)
            .map(|i| ((bits >> (8 * i)) & 0xFF) as u8)
            .collect()
    }

    fn oracle(b: &GeolocationBlock) -> Vec<u8> {
        let mut v = vec![b.version];
        v.extend(le_bytes_of_bits(b.latitude.to_bits(), 8));
        v.extend(le_bytes_of_bits(b.longitude.to_bits(), 8));
        v.extend(le_bytes_of_bits(u64::from(b.elevation.to_bits()), 4));
        v
    }

    #[test]
    fn zero_block() {
        let enc = encode_geolocation_block(&GeolocationBlock::new(0.0, 0.0, 0.0)).unwrap();
        let mut expected = [0u8; 21];
        expected[0] = 0x01;
        assert_eq!(enc, expected);
    }

    #[test]
    fn brandon_vector() {
        let b = GeolocationBlock::new(49.8483, -99.9501, 409.0);
        let enc = encode_geolocation_block(&b).unwrap();
        assert_eq!(enc.to_vec(), oracle(&b));
        // frozen from the oracle above
        let frozen = [
            0x01, 0x31, 0x99, 0x2a, 0x18, 0x95, 0xec, 0x48, 0x40, 0x7f, 0xfb, 0x3a, 0x70, 0xce,
            0xfc, 0x58, 0xc0, 0x00, 0x80, 0xcc, 0x43,
        ];
        assert_eq!(enc, frozen);
        assert_eq!(decode_geolocation_block(&frozen).unwrap(), b);
    }

    #[test]
    fn truncated() {
        assert_eq!(
            decode_geolocation_block(&[0u8; 20]),
            Err(CodecError::Truncated)
        );
    }

    #[test]
    fn non_finite() {
        let b = GeolocationBlock::new(f64::NAN, 0.0, 0.0);
        assert_eq!(
            encode_geolocation_block(&b),
            Err(CodecError::InvalidGeolocation)
        );
        let mut raw = oracle(&GeolocationBlock::new(1.0, f64::INFINITY, 0.0));
        assert_eq!(
            decode_geolocation_block(&raw),
            Err(CodecError::InvalidGeolocation)
        );
        raw[0] = 7;
        let permissive = GeolocationBlock::read(&raw, true).unwrap();
        assert!(permissive.longitude.is_infinite());
        assert!(!permissive.is_current_version());
    }

    proptest! {
        #[test]
        fn round_trip(version in any::<u8>(),
                      lat in -90.0f64..=90.0,
                      lon in -180.0f64..=180.0,
                      elev in -500.0f32..9000.0) {
            let b = GeolocationBlock { version, latitude: lat, longitude: lon, elevation: elev };
            let enc = encode_geolocation_block(&b).unwrap();
            prop_assert_eq!(enc.len(), GEOLOCATION_BLOCK_LEN);
            prop_assert_eq!(enc.to_vec(), oracle(&b));
            prop_assert_eq!(decode_geolocation_block(&enc).unwrap(), b);
        }
    }
}
