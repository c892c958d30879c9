//! Binary wire format for eigenspace messages.
//!
//! All integers and floats are little-endian:
//!
//! | offset | size  | field                                         |
//! |--------|-------|-----------------------------------------------|
//! | 0      | 4     | magic `"DPCA"`                                |
//! | 4      | 2     | version, currently 1                          |
//! | 6      | 2     | message type (1 uplink, 2 downlink)           |
//! | 8      | 4     | machine id                                    |
//! | 12     | 4     | `p`                                           |
//! | 16     | 4     | `k`                                           |
//! | 20     | 8·p·k | basis entries, binary64, column-major         |
//! | …      | 4     | CRC-32 (IEEE) of the basis-entry bytes        |
//!
//! Decoding re-checks orthonormality of the received basis.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, OrthonormalBasis};

pub const MAGIC: [u8; 4] = *b"DPCA";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 20;
/// Upper bound on `p * k` accepted from the wire.
pub const MAX_SCALARS: usize = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageType {
    /// Worker to coordinator: a local eigenspace estimate.
    Uplink = 1,
    /// Coordinator to worker: the aggregated basis.
    Downlink = 2,
}

impl MessageType {
    fn from_u16(v: u16) -> Result<Self> {
        match v {
            1 => Ok(MessageType::Uplink),
            2 => Ok(MessageType::Downlink),
            other => Err(Error::Wire(format!("unknown message type {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub msg_type: MessageType,
    pub machine_id: u32,
    pub basis: OrthonormalBasis,
}

pub fn encode(frame: &Frame) -> Vec<u8> {
    let cols = frame.basis.columns();
    let (p, k) = cols.shape();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * p * k + 4);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(frame.msg_type as u16).to_le_bytes());
    out.extend_from_slice(&frame.machine_id.to_le_bytes());
    out.extend_from_slice(&(p as u32).to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    for v in cols.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out[HEADER_LEN..]);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Header {
    msg_type: MessageType,
    machine_id: u32,
    p: usize,
    k: usize,
}

fn parse_header(h: &[u8]) -> Result<Header> {
    if h[0..4] != MAGIC {
        return Err(Error::Wire("bad magic".into()));
    }
    let version = u16::from_le_bytes([h[4], h[5]]);
    if version != VERSION {
        return Err(Error::Wire(format!("unsupported version {version}")));
    }
    let msg_type = MessageType::from_u16(u16::from_le_bytes([h[6], h[7]]))?;
    let word = |o: usize| u32::from_le_bytes([h[o], h[o + 1], h[o + 2], h[o + 3]]);
    let (p, k) = (word(12) as usize, word(16) as usize);
    if k == 0 || k > p || p.saturating_mul(k) > MAX_SCALARS {
        return Err(Error::Wire(format!("implausible basis shape {p}x{k}")));
    }
    Ok(Header {
        msg_type,
        machine_id: word(8),
        p,
        k,
    })
}

fn parse_body(header: Header, body: &[u8]) -> Result<Frame> {
    let n = header.p * header.k;
    let (payload, crc) = body.split_at(8 * n);
    let expected = u32::from_le_bytes([crc[0], crc[1], crc[2], crc[3]]);
    if crc32fast::hash(payload) != expected {
        return Err(Error::Wire("checksum mismatch".into()));
    }
    let values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let basis = OrthonormalBasis::new(DenseMatrix::from_col_major(header.p, header.k, values)?)?;
    Ok(Frame {
        msg_type: header.msg_type,
        machine_id: header.machine_id,
        basis,
    })
}

pub fn decode(bytes: &[u8]) -> Result<Frame> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Wire(format!("truncated header ({} bytes)", bytes.len())));
    }
    let header = parse_header(&bytes[..HEADER_LEN])?;
    let body_len = 8 * header.p * header.k + 4;
    if bytes.len() != HEADER_LEN + body_len {
        return Err(Error::Wire(format!(
            "frame length {} does not match declared shape {}x{}",
            bytes.len(),
            header.p,
            header.k
        )));
    }
    parse_body(header, &bytes[HEADER_LEN..])
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> Result<()> {
    w.write_all(&encode(frame))?;
    w.flush()?;
    Ok(())
}

pub fn read_frame<R: Read>(r: &mut R) -> Result<Frame> {
    let mut header = [0u8; HEADER_LEN];
    r.read_exact(&mut header)?;
    let h = parse_header(&header)?;
    let mut body = vec![0u8; 8 * h.p * h.k + 4];
    r.read_exact(&mut body)?;
    parse_body(h, &body)
}
