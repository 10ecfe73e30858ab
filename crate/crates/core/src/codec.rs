//! Canonical byte encoding.
//!
//! Every field is written in a fixed order. Integers are big-endian and
//! fixed-width; variable-length fields carry a `u32` big-endian length prefix;
//! optional fields carry a one-byte presence flag (`0` absent, `1` present).
//! The same writer produces the bytes that attestations cover, so digests are
//! stable across implementations that follow the layout.

use thiserror::Error;

use crate::model::{PartyId, RequestId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unexpected end of input at byte {0}")]
    Truncated(usize),
    #[error("invalid tag {tag} at byte {at}")]
    BadTag { tag: u8, at: usize },
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("bad magic")]
    BadMagic,
    #[error("invalid utf-8 string")]
    Utf8,
}

#[derive(Debug, Default, Clone)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Writer::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(v.len() as u32);
        self.buf.extend_from_slice(v);
        self
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn opt_u64(&mut self, v: Option<u64>) -> &mut Self {
        match v {
            None => self.u8(0),
            Some(x) => self.u8(1).u64(x),
        }
    }

    pub fn party(&mut self, p: PartyId) -> &mut Self {
        self.u32(p.0)
    }

    pub fn request(&mut self, r: &RequestId) -> &mut Self {
        self.raw(&r.0)
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
        Reader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() - self.pos < n {
            return Err(DecodeError::Truncated(self.pos));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.u32()? as usize;
        self.take(len)
    }

    pub fn string(&mut self) -> Result<String, DecodeError> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| DecodeError::Utf8)
    }

    pub fn array32(&mut self) -> Result<[u8; 32], DecodeError> {
        Ok(self.take(32)?.try_into().unwrap())
    }

    pub fn opt_u64(&mut self) -> Result<Option<u64>, DecodeError> {
        let at = self.pos;
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.u64()?)),
            tag => Err(DecodeError::BadTag { tag, at }),
        }
    }

    pub fn party(&mut self) -> Result<PartyId, DecodeError> {
        Ok(PartyId(self.u32()?))
    }

    pub fn request(&mut self) -> Result<RequestId, DecodeError> {
        Ok(RequestId(self.array32()?))
    }

    pub fn expect(&mut self, magic: &[u8]) -> Result<(), DecodeError> {
        match self.take(magic.len()) {
            Ok(got) if got == magic => Ok(()),
            _ => Err(DecodeError::BadMagic),
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.buf.len() - self.pos {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_fixed() {
        let mut w = Writer::new();
        w.u8(1).u32(2).opt_u64(None).opt_u64(Some(3)).str("ab");
        assert_eq!(
            w.finish(),
            vec![1, 0, 0, 0, 2, 0, 1, 0, 0, 0, 0, 0, 0, 0, 3, 0, 0, 0, 2, b'a', b'b']
        );
    }

    #[test]
    fn truncated_and_trailing_input_is_rejected() {
        let mut r = Reader::new(&[0, 0, 0, 5, 1]);
        assert_eq!(r.bytes(), Err(DecodeError::Truncated(4)));
        let mut r = Reader::new(&[2, 9]);
        assert!(matches!(
            r.opt_u64(),
            Err(DecodeError::BadTag { tag: 2, at: 0 })
        ));
        let mut r = Reader::new(&[1, 2]);
        r.u8().unwrap();
        assert_eq!(r.finish(), Err(DecodeError::Trailing(1)));
    }
}
