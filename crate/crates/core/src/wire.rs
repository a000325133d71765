//! Bit-exact bundle serialization.
//!
//! Layout of a bundle image:
//!
//! ```text
//! primary   := 0x06 flags:sdnv dst:eid src:eid creation_ts:sdnv creation_seq:sdnv lifetime:sdnv
//! eid       := len:sdnv utf8-bytes
//! block     := type:u8 flags:sdnv len:sdnv body
//! bundle    := primary [integrity] [age] extension* payload
//! ```
//!
//! Block flag bit 0 marks the last block, bit 1 is discard-if-unprocessable.
//! Only the payload block, which always comes last on encode, carries bit 0.

use thiserror::Error;

use crate::integrity::{Coverage, IntegrityBlock, SuiteId};
use crate::model::{Bundle, EndpointId, ExtensionBlock};

pub const BUNDLE_VERSION: u8 = 0x06;

pub const BLOCK_PAYLOAD: u8 = 1;
pub const BLOCK_AGE: u8 = 10;
pub const BLOCK_INTEGRITY: u8 = 13;

pub const FLAG_LAST_BLOCK: u64 = 0b01;
pub const FLAG_DISCARD_IF_UNPROCESSABLE: u64 = 0b10;

/// Longest SDNV that can carry a 64-bit value.
pub const SDNV_MAX_LEN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SdnvError {
    #[error("sdnv truncated: continuation bit set on final available byte")]
    Truncated,
    #[error("sdnv overflows 64 bits")]
    Overflow,
    #[error("sdnv is not minimally encoded")]
    NonMinimal,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("unsupported bundle version {0:#04x}")]
    BadVersion(u8),
    #[error("bundle image truncated")]
    Truncated,
    #[error("{0} trailing bytes after the last block")]
    TrailingGarbage(usize),
    #[error("bundle has no payload block")]
    MissingPayload,
    #[error("block type {0} appears more than once")]
    DuplicateSingletonBlock(u8),
    #[error("malformed sdnv: {0}")]
    Sdnv(SdnvError),
    #[error("invalid endpoint id")]
    InvalidEndpoint,
    #[error("lifetime must be positive")]
    ZeroLifetime,
    #[error("malformed body in block type {0}")]
    MalformedBlock(u8),
}

impl From<SdnvError> for DecodeError {
    fn from(e: SdnvError) -> Self {
        match e {
            SdnvError::Truncated => DecodeError::Truncated,
            other => DecodeError::Sdnv(other),
        }
    }
}

pub fn encode_sdnv(value: u64) -> Vec<u8> {
    let mut out = Vec::with_capacity(SDNV_MAX_LEN);
    write_sdnv(&mut out, value);
    out
}

/// Appends the minimal SDNV encoding of `value` to `out`.
pub fn write_sdnv(out: &mut Vec<u8>, value: u64) {
    let groups = sdnv_len(value);
    for i in (0..groups).rev() {
        let group = ((value >> (7 * i)) & 0x7f) as u8;
        let cont = if i == 0 { 0 } else { 0x80 };
        out.push(group | cont);
    }
}

/// Number of bytes in the minimal encoding of `value`.
pub fn sdnv_len(value: u64) -> usize {
    let bits = 64 - value.leading_zeros() as usize;
    bits.div_ceil(7).max(1)
}

/// Decodes one SDNV from the front of `bytes`, returning the value and the
/// number of bytes consumed. Bytes after the terminating group are ignored.
pub fn decode_sdnv(bytes: &[u8]) -> Result<(u64, usize), SdnvError> {
    if bytes.first() == Some(&0x80) {
        return Err(SdnvError::NonMinimal);
    }
    let mut value: u64 = 0;
    for (i, &b) in bytes.iter().enumerate() {
        if i == SDNV_MAX_LEN {
            return Err(SdnvError::Overflow);
        }
        if value >> 57 != 0 {
            return Err(SdnvError::Overflow);
        }
        value = (value << 7) | u64::from(b & 0x7f);
        if b & 0x80 == 0 {
            return Ok((value, i + 1));
        }
    }
    Err(SdnvError::Truncated)
}

fn write_bytes(out: &mut Vec<u8>, bytes: &[u8]) {
    write_sdnv(out, bytes.len() as u64);
    out.extend_from_slice(bytes);
}

fn write_block(out: &mut Vec<u8>, block_type: u8, flags: u64, body: &[u8]) {
    out.push(block_type);
    write_sdnv(out, flags);
    write_bytes(out, body);
}

/// Appends the immutable primary fields (everything after the version byte
/// and processing flags) in wire form. Shared with integrity coverage.
pub fn write_primary_fields(out: &mut Vec<u8>, bundle: &Bundle) {
    write_bytes(out, bundle.destination.as_str().as_bytes());
    write_bytes(out, bundle.source.as_str().as_bytes());
    write_sdnv(out, bundle.creation_ts);
    write_sdnv(out, bundle.creation_seq);
    write_sdnv(out, bundle.lifetime);
}

pub fn encode_age_body(age_ms: u64) -> Vec<u8> {
    encode_sdnv(age_ms)
}

pub fn encode_integrity_body(block: &IntegrityBlock) -> Vec<u8> {
    let mut body = Vec::with_capacity(3 + block.result().len());
    write_sdnv(&mut body, u64::from(block.suite().code()));
    write_sdnv(&mut body, u64::from(block.coverage().bits()));
    write_bytes(&mut body, block.result());
    body
}

pub fn encode_bundle(bundle: &Bundle) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + bundle.payload.len());
    out.push(BUNDLE_VERSION);
    write_sdnv(&mut out, bundle.processing_flags);
    write_primary_fields(&mut out, bundle);

    if let Some(block) = &bundle.integrity {
        write_block(&mut out, BLOCK_INTEGRITY, 0, &encode_integrity_body(block));
    }
    if let Some(age_ms) = bundle.age_ms {
        write_block(&mut out, BLOCK_AGE, 0, &encode_age_body(age_ms));
    }
    for ext in &bundle.extensions {
        write_block(
            &mut out,
            ext.block_type,
            ext.flags & !FLAG_LAST_BLOCK,
            &ext.body,
        );
    }
    write_block(&mut out, BLOCK_PAYLOAD, FLAG_LAST_BLOCK, &bundle.payload);
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    fn u8(&mut self) -> Result<u8, DecodeError> {
        let b = *self.buf.get(self.pos).ok_or(DecodeError::Truncated)?;
        self.pos += 1;
        Ok(b)
    }

    fn sdnv(&mut self) -> Result<u64, DecodeError> {
        let (v, n) = decode_sdnv(&self.buf[self.pos..])?;
        self.pos += n;
        Ok(v)
    }

    fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let len = self.sdnv()?;
        if len > self.remaining() as u64 {
            return Err(DecodeError::Truncated);
        }
        let start = self.pos;
        self.pos += len as usize;
        Ok(&self.buf[start..self.pos])
    }

    fn eid(&mut self) -> Result<EndpointId, DecodeError> {
        let raw = self.bytes()?;
        let text = std::str::from_utf8(raw).map_err(|_| DecodeError::InvalidEndpoint)?;
        EndpointId::parse(text).map_err(|_| DecodeError::InvalidEndpoint)
    }
}

fn decode_whole_sdnv(body: &[u8], block_type: u8) -> Result<u64, DecodeError> {
    match decode_sdnv(body) {
        Ok((v, n)) if n == body.len() => Ok(v),
        _ => Err(DecodeError::MalformedBlock(block_type)),
    }
}

pub fn decode_integrity_body(body: &[u8]) -> Result<IntegrityBlock, DecodeError> {
    let bad = DecodeError::MalformedBlock(BLOCK_INTEGRITY);
    let mut r = Reader { buf: body, pos: 0 };
    let suite = r.sdnv().map_err(|_| bad.clone())?;
    let coverage = r.sdnv().map_err(|_| bad.clone())?;
    let result = r.bytes().map_err(|_| bad.clone())?;
    if r.remaining() != 0 {
        return Err(bad);
    }
    let suite = u8::try_from(suite)
        .ok()
        .and_then(SuiteId::from_code)
        .ok_or(bad.clone())?;
    let coverage = u8::try_from(coverage)
        .ok()
        .and_then(Coverage::from_bits)
        .ok_or(bad.clone())?;
    IntegrityBlock::from_parts(suite, coverage, result.to_vec()).ok_or(bad)
}

/// Parses a bundle image. Never panics; every malformed input maps to a
/// [`DecodeError`].
pub fn decode_bundle(bytes: &[u8]) -> Result<Bundle, DecodeError> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let version = r.u8()?;
    if version != BUNDLE_VERSION {
        return Err(DecodeError::BadVersion(version));
    }
    let processing_flags = r.sdnv()?;
    let destination = r.eid()?;
    let source = r.eid()?;
    let creation_ts = r.sdnv()?;
    let creation_seq = r.sdnv()?;
    let lifetime = r.sdnv()?;
    if lifetime == 0 {
        return Err(DecodeError::ZeroLifetime);
    }

    let mut payload = None;
    let mut age_ms = None;
    let mut integrity = None;
    let mut extensions = Vec::new();
    loop {
        let block_type = r.u8()?;
        let flags = r.sdnv()?;
        let body = r.bytes()?;
        match block_type {
            BLOCK_PAYLOAD => {
                if payload.replace(body.to_vec()).is_some() {
                    return Err(DecodeError::DuplicateSingletonBlock(block_type));
                }
            }
            BLOCK_AGE => {
                let v = decode_whole_sdnv(body, block_type)?;
                if age_ms.replace(v).is_some() {
                    return Err(DecodeError::DuplicateSingletonBlock(block_type));
                }
            }
            BLOCK_INTEGRITY => {
                let block = decode_integrity_body(body)?;
                if integrity.replace(block).is_some() {
                    return Err(DecodeError::DuplicateSingletonBlock(block_type));
                }
            }
            other => extensions.push(ExtensionBlock {
                block_type: other,
                flags: flags & !FLAG_LAST_BLOCK,
                body: body.to_vec(),
            }),
        }
        if flags & FLAG_LAST_BLOCK != 0 {
            break;
        }
    }
    if r.remaining() != 0 {
        return Err(DecodeError::TrailingGarbage(r.remaining()));
    }
    let payload = payload.ok_or(DecodeError::MissingPayload)?;

    Ok(Bundle {
        processing_flags,
        destination,
        source,
        creation_ts,
        creation_seq,
        lifetime,
        age_ms,
        integrity,
        extensions,
        payload,
    })
}

/// Byte offset of the payload body within an encoded image. The payload is
/// always the final block, so its body occupies the last `payload.len()`
/// bytes.
pub fn payload_offset(image_len: usize, payload_len: usize) -> usize {
    image_len - payload_len
}
