//! Length-prefixed frames.
//!
//! ```text
//! u32 BE   payload length (bytes after this field, at most 64 MiB)
//! u8       frame type
//! varint   header length (unsigned LEB128)
//! [u8]     header, UTF-8 structured text (JSON)
//! repeated until the payload ends:
//!   u32 BE section length
//!   [u8]   section bytes
//! ```
//!
//! A frame with an empty header and no sections is 6 bytes on the wire.

use std::io::{self, Read, Write};

use thiserror::Error;

pub const MAX_PAYLOAD: usize = 64 * 1024 * 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    SdmQuery = 0x01,
    SdmResponse = 0x02,
    EpDeploy = 0x03,
    EpAck = 0x04,
    EpOutput = 0x05,
    Error = 0x7F,
}

impl FrameType {
    pub const ALL: [FrameType; 6] = [
        FrameType::SdmQuery,
        FrameType::SdmResponse,
        FrameType::EpDeploy,
        FrameType::EpAck,
        FrameType::EpOutput,
        FrameType::Error,
    ];
}

impl TryFrom<u8> for FrameType {
    type Error = FrameError;

    fn try_from(b: u8) -> Result<Self, FrameError> {
        FrameType::ALL
            .into_iter()
            .find(|t| *t as u8 == b)
            .ok_or(FrameError::UnknownType(b))
    }
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error("truncated frame: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("unknown frame type 0x{0:02x}")]
    UnknownType(u8),
    #[error("frame payload of {0} bytes exceeds the 64 MiB cap")]
    TooLarge(usize),
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub kind: FrameType,
    pub header: String,
    pub sections: Vec<Vec<u8>>,
}

fn varint_len(mut v: usize) -> usize {
    let mut n = 1;
    while v >= 0x80 {
        v >>= 7;
        n += 1;
    }
    n
}

fn put_varint(out: &mut Vec<u8>, mut v: usize) {
    while v >= 0x80 {
        out.push((v as u8 & 0x7F) | 0x80);
        v >>= 7;
    }
    out.push(v as u8);
}

fn get_varint(buf: &[u8]) -> Result<(usize, usize), FrameError> {
    let mut v: usize = 0;
    for (i, &b) in buf.iter().enumerate().take(5) {
        v |= usize::from(b & 0x7F) << (7 * i);
        if b & 0x80 == 0 {
            return Ok((v, i + 1));
        }
    }
    Err(FrameError::Malformed("bad header length varint".into()))
}

impl Frame {
    pub fn new(kind: FrameType, header: impl Into<String>, sections: Vec<Vec<u8>>) -> Self {
        Frame {
            kind,
            header: header.into(),
            sections,
        }
    }

    pub fn empty(kind: FrameType) -> Self {
        Frame::new(kind, String::new(), Vec::new())
    }

    pub fn payload_len(&self) -> usize {
        1 + varint_len(self.header.len()) + self.header.len() + self.sections.iter().map(|s| 4 + s.len()).sum::<usize>()
    }

    pub fn encode(&self) -> Result<Vec<u8>, FrameError> {
        let len = self.payload_len();
        if len > MAX_PAYLOAD {
            return Err(FrameError::TooLarge(len));
        }
        let mut out = Vec::with_capacity(4 + len);
        out.extend_from_slice(&(len as u32).to_be_bytes());
        out.push(self.kind as u8);
        put_varint(&mut out, self.header.len());
        out.extend_from_slice(self.header.as_bytes());
        for s in &self.sections {
            out.extend_from_slice(&(s.len() as u32).to_be_bytes());
            out.extend_from_slice(s);
        }
        Ok(out)
    }

    /// Decodes the frame at the start of `buf`, returning it with the number
    /// of bytes it occupied. Bytes past the declared length are left alone.
    pub fn decode(buf: &[u8]) -> Result<(Frame, usize), FrameError> {
        if buf.len() < 4 {
            return Err(FrameError::Truncated {
                needed: 4,
                available: buf.len(),
            });
        }
        let len = u32::from_be_bytes(buf[..4].try_into().unwrap()) as usize;
        if len > MAX_PAYLOAD {
            return Err(FrameError::TooLarge(len));
        }
        if buf.len() - 4 < len {
            return Err(FrameError::Truncated {
                needed: 4 + len,
                available: buf.len(),
            });
        }
        let frame = Frame::decode_payload(&buf[4..4 + len])?;
        Ok((frame, 4 + len))
    }

    fn decode_payload(p: &[u8]) -> Result<Frame, FrameError> {
        let (&kind, rest) = p
            .split_first()
            .ok_or_else(|| FrameError::LengthMismatch("empty payload".into()))?;
        let kind = FrameType::try_from(kind)?;
        let (hlen, used) = get_varint(rest)?;
        let rest = &rest[used..];
        if hlen > rest.len() {
            return Err(FrameError::LengthMismatch(format!(
                "header declares {hlen} bytes, {} remain",
                rest.len()
            )));
        }
        let header = std::str::from_utf8(&rest[..hlen])
            .map_err(|e| FrameError::Malformed(format!("header is not UTF-8: {e}")))?
            .to_owned();
        let mut rest = &rest[hlen..];
        let mut sections = Vec::new();
        while !rest.is_empty() {
            if rest.len() < 4 {
                return Err(FrameError::LengthMismatch(format!(
                    "{} stray bytes after sections",
                    rest.len()
                )));
            }
            let n = u32::from_be_bytes(rest[..4].try_into().unwrap()) as usize;
            rest = &rest[4..];
            if n > rest.len() {
                return Err(FrameError::LengthMismatch(format!(
                    "section declares {n} bytes, {} remain",
                    rest.len()
                )));
            }
            sections.push(rest[..n].to_vec());
            rest = &rest[n..];
        }
        Ok(Frame { kind, header, sections })
    }
}

/// Reads exactly one frame from a stream.
pub fn read_frame(r: &mut impl Read) -> Result<Frame, FrameError> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let n = u32::from_be_bytes(len) as usize;
    if n > MAX_PAYLOAD {
        return Err(FrameError::TooLarge(n));
    }
    let mut payload = vec![0u8; n];
    r.read_exact(&mut payload).map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => FrameError::Truncated {
            needed: 4 + n,
            available: 0,
        },
        _ => FrameError::Io(e),
    })?;
    Frame::decode_payload(&payload)
}

pub fn write_frame(w: &mut impl Write, f: &Frame) -> Result<(), FrameError> {
    w.write_all(&f.encode()?)?;
    w.flush()?;
    Ok(())
}
