//! Remaining-length variable byte integer.

use super::CodecError;

/// Largest value representable in four MBI bytes.
pub const MAX_REMAINING_LENGTH: u32 = 268_435_455;

/// Encodes `value` as a minimal-length variable byte integer.
pub fn encode_mbi(value: u32) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(4);
    write_mbi(value, &mut out)?;
    Ok(out)
}

pub(crate) fn write_mbi(value: u32, out: &mut Vec<u8>) -> Result<(), CodecError> {
    if value > MAX_REMAINING_LENGTH {
        return Err(CodecError::Range {
            what: "remaining length",
            value: u64::from(value),
            max: u64::from(MAX_REMAINING_LENGTH),
        });
    }
    let mut x = value;
    loop {
        let mut byte = (x % 128) as u8;
        x /= 128;
        if x > 0 {
            byte |= 0x80;
        }
        out.push(byte);
        if x == 0 {
            return Ok(());
        }
    }
}

/// Number of bytes `encode_mbi(value)` produces. `value` must be in range.
pub fn mbi_len(value: u32) -> usize {
    match value {
        0..=127 => 1,
        128..=16_383 => 2,
        16_384..=2_097_151 => 3,
        _ => 4,
    }
}

/// Decodes a variable byte integer from the front of `bytes`, returning the
/// value and the number of bytes consumed.
pub fn decode_mbi(bytes: &[u8]) -> Result<(u32, usize), CodecError> {
    let mut value: u32 = 0;
    let mut multiplier: u32 = 1;
    for i in 0..4 {
        let byte = *bytes.get(i).ok_or(CodecError::Truncated)?;
        value += u32::from(byte & 0x7F) * multiplier;
        if byte & 0x80 == 0 {
            return Ok((value, i + 1));
        }
        multiplier *= 128;
    }
    Err(CodecError::MalformedLength)
}
