//! Checksummed container shared by the dataset and checkpoint files.
//!
//! ```text
//! offset  size  field
//! 0       4     magic
//! 4       2     version (u16 LE)
//! 6       2     flags (u16 LE)
//! 8       8     total file length in bytes (u64 LE)
//! 16      32    SHA-256 of bytes [0, 16) followed by bytes [48, EOF)
//! 48      ...   body
//! ```
//!
//! All integers and floats are little-endian; floats are IEEE-754 binary64.

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub(crate) const HEADER_LEN: usize = 48;

pub(crate) fn checksum(bytes: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(&bytes[..16]);
    h.update(&bytes[HEADER_LEN..]);
    h.finalize().into()
}

pub(crate) fn seal(magic: [u8; 4], version: u16, flags: u16, body: &[u8]) -> Vec<u8> {
    let total = HEADER_LEN + body.len();
    let mut out = Vec::with_capacity(total);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&version.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(total as u64).to_le_bytes());
    out.extend_from_slice(&[0u8; 32]);
    out.extend_from_slice(body);
    let sum = checksum(&out);
    out[16..48].copy_from_slice(&sum);
    out
}

pub(crate) struct Opened<'a> {
    pub version: u16,
    pub flags: u16,
    pub body: &'a [u8],
}

/// Validates magic, version, length and checksum, in that order.
pub(crate) fn open(bytes: &[u8], magic: [u8; 4], max_version: u16) -> Result<Opened<'_>> {
    if bytes.len() < 8 {
        return Err(Error::Truncated { needed: HEADER_LEN, found: bytes.len() });
    }
    if bytes[..4] != magic {
        return Err(Error::BadMagic { expected: magic });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version == 0 || version > max_version {
        return Err(Error::UnsupportedVersion { found: version, supported: max_version });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { needed: HEADER_LEN, found: bytes.len() });
    }
    let flags = u16::from_le_bytes([bytes[6], bytes[7]]);
    let declared = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let stored: [u8; 32] = bytes[16..48].try_into().unwrap();
    if checksum(bytes) != stored {
        if (bytes.len() as u64) < declared {
            return Err(Error::Truncated { needed: declared as usize, found: bytes.len() });
        }
        return Err(Error::ChecksumMismatch);
    }
    if declared != bytes.len() as u64 {
        return Err(Error::Format(format!(
            "declared length {declared} does not match {} bytes",
            bytes.len()
        )));
    }
    Ok(Opened { version, flags, body: &bytes[HEADER_LEN..] })
}

#[derive(Default)]
pub(crate) struct Writer(pub Vec<u8>);

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    pub fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    pub fn bytes(&mut self, v: &[u8]) {
        self.0.extend_from_slice(v);
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Truncated {
                needed: HEADER_LEN + self.pos + n,
                found: HEADER_LEN + self.buf.len(),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().unwrap())
    }
    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
    pub fn finish(&self) -> Result<()> {
        if self.pos == self.buf.len() {
            Ok(())
        } else {
            Err(Error::Format(format!("{} trailing bytes", self.buf.len() - self.pos)))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seal_open_and_corruption() {
        let body = b"hello body".to_vec();
        let bytes = seal(*b"TEST", 1, 3, &body);
        let o = open(&bytes, *b"TEST", 1).unwrap();
        assert_eq!((o.version, o.flags, o.body), (1, 3, &body[..]));

        let mut flipped = bytes.clone();
        flipped[HEADER_LEN + 2] ^= 0x10;
        assert!(matches!(open(&flipped, *b"TEST", 1), Err(Error::ChecksumMismatch)));

        let mut flag_flip = bytes.clone();
        flag_flip[6] ^= 1;
        assert!(matches!(open(&flag_flip, *b"TEST", 1), Err(Error::ChecksumMismatch)));

        assert!(matches!(
            open(&bytes[..bytes.len() - 3], *b"TEST", 1),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(open(&bytes, *b"NOPE", 1), Err(Error::BadMagic { .. })));
        let v2 = seal(*b"TEST", 2, 0, &body);
        assert!(matches!(
            open(&v2, *b"TEST", 1),
            Err(Error::UnsupportedVersion { found: 2, supported: 1 })
        ));
    }
}
