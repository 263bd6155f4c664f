//! Minimal big-endian, length-prefixed byte codec used by every wire format
//! in the crate. All multi-byte integers are big-endian; variable fields are
//! prefixed with a u32 length.

/// Hard cap on any single variable-length field.
pub const MAX_FIELD: usize = 1 << 24;

#[derive(Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    pub fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_be_bytes());
    }

    /// Fixed-width field, no length prefix.
    pub fn bytes_fixed(&mut self, v: &[u8]) {
        self.buf.extend_from_slice(v);
    }

    /// u32-length-prefixed field.
    pub fn bytes_var(&mut self, v: &[u8]) {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn is_empty(&self) -> bool {
        self.remaining() == 0
    }

    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        if self.remaining() < n {
            return None;
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Some(s)
    }

    pub fn u8(&mut self) -> Option<u8> {
        self.take(1).map(|s| s[0])
    }

    pub fn u32(&mut self) -> Option<u32> {
        self.take(4).map(|s| u32::from_be_bytes(s.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Option<u64> {
        self.take(8).map(|s| u64::from_be_bytes(s.try_into().unwrap()))
    }

    pub fn bytes_fixed<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N).map(|s| s.try_into().unwrap())
    }

    pub fn bytes_slice(&mut self, n: usize) -> Option<&'a [u8]> {
        self.take(n)
    }

    pub fn bytes_var(&mut self) -> Option<&'a [u8]> {
        let n = self.u32()? as usize;
        if n > MAX_FIELD {
            return None;
        }
        self.take(n)
    }
}
