use super::CodecError;

/// Encodes a string as a 2-byte big-endian length prefix followed by its
/// UTF-8 bytes.
pub fn encode_utf8_field(s: &str) -> Result<Vec<u8>, CodecError> {
    let mut out = Vec::with_capacity(s.len() + 2);
    write_utf8(s, &mut out)?;
    Ok(out)
}

pub(crate) fn write_utf8(s: &str, out: &mut Vec<u8>) -> Result<(), CodecError> {
    write_binary(s.as_bytes(), out)
}

pub(crate) fn write_binary(data: &[u8], out: &mut Vec<u8>) -> Result<(), CodecError> {
    let len = u16::try_from(data.len()).map_err(|_| CodecError::Range {
        what: "length-prefixed field",
        value: data.len() as u64,
        max: u64::from(u16::MAX),
    })?;
    out.extend_from_slice(&len.to_be_bytes());
    out.extend_from_slice(data);
    Ok(())
}

/// Bounds-checked cursor over a packet body.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.remaining() < n {
            return Err(CodecError::Truncated);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn rest(&mut self) -> &'a [u8] {
        let s = &self.buf[self.pos..];
        self.pos = self.buf.len();
        s
    }

    pub fn u8(&mut self) -> Result<u8, CodecError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, CodecError> {
        let b = self.take(2)?;
        Ok(u16::from_be_bytes([b[0], b[1]]))
    }

    pub fn binary(&mut self) -> Result<&'a [u8], CodecError> {
        let len = self.u16()? as usize;
        self.take(len)
    }

    pub fn utf8(&mut self) -> Result<String, CodecError> {
        let bytes = self.binary()?;
        let s = std::str::from_utf8(bytes)
            .map_err(|_| CodecError::protocol("string is not valid UTF-8"))?;
        if s.contains('\0') {
            return Err(CodecError::protocol("string contains U+0000"));
        }
        Ok(s.to_owned())
    }
}
