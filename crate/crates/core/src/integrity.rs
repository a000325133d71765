//! Integrity blocks and verification policy.
//!
//! One block format carries either suite: a keyless CRC-32 that gives
//! error detection only, or HMAC-SHA256 that additionally needs a shared
//! key. The block never covers itself.

use hmac::{Hmac, KeyInit, Mac};
use serde::{Deserialize, Serialize};
use sha2::Sha256;
use thiserror::Error;

use crate::model::Bundle;
use crate::wire;

type HmacSha256 = Hmac<Sha256>;

pub const CRC32_RESULT_LEN: usize = 4;
pub const HMAC_SHA256_RESULT_LEN: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum IntegrityError {
    #[error("coverage selects no bytes")]
    EmptyCoverage,
    #[error("suite requires a key")]
    KeyRequired,
    #[error("bundle already carries an integrity block")]
    AlreadyProtected,
    #[error("unknown suite id {0}")]
    UnknownSuite(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SuiteId {
    /// Plain CRC-32 over the covered bytes, no key.
    Crc32ReliabilityOnly,
    HmacSha256,
}

impl SuiteId {
    pub fn code(self) -> u8 {
        match self {
            SuiteId::Crc32ReliabilityOnly => 1,
            SuiteId::HmacSha256 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(SuiteId::Crc32ReliabilityOnly),
            2 => Some(SuiteId::HmacSha256),
            _ => None,
        }
    }

    pub fn result_len(self) -> usize {
        match self {
            SuiteId::Crc32ReliabilityOnly => CRC32_RESULT_LEN,
            SuiteId::HmacSha256 => HMAC_SHA256_RESULT_LEN,
        }
    }
}

/// Which parts of the bundle an integrity block protects.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Coverage(u8);

impl Coverage {
    pub const PRIMARY: Coverage = Coverage(0b01);
    pub const PAYLOAD: Coverage = Coverage(0b10);
    pub const BOTH: Coverage = Coverage(0b11);

    pub fn from_bits(bits: u8) -> Option<Self> {
        (bits != 0 && bits & !0b11 == 0).then_some(Coverage(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }

    pub fn primary(self) -> bool {
        self.0 & 0b01 != 0
    }

    pub fn payload(self) -> bool {
        self.0 & 0b10 != 0
    }
}

impl TryFrom<u8> for Coverage {
    type Error = IntegrityError;
    fn try_from(bits: u8) -> Result<Self, Self::Error> {
        Coverage::from_bits(bits).ok_or(IntegrityError::EmptyCoverage)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntegrityBlock {
    suite: SuiteId,
    coverage: Coverage,
    result: Vec<u8>,
}

impl IntegrityBlock {
    /// Returns `None` when the result length does not match the suite.
    pub fn from_parts(suite: SuiteId, coverage: Coverage, result: Vec<u8>) -> Option<Self> {
        (result.len() == suite.result_len()).then_some(IntegrityBlock {
            suite,
            coverage,
            result,
        })
    }

    pub fn suite(&self) -> SuiteId {
        self.suite
    }

    pub fn coverage(&self) -> Coverage {
        self.coverage
    }

    pub fn result(&self) -> &[u8] {
        &self.result
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VerificationMode {
    /// No check at all; corruption is invisible.
    None,
    /// Accept either suite, as long as the recomputation matches.
    Reliability,
    /// Require a matching HMAC-SHA256 block.
    Authenticated,
}

impl VerificationMode {
    pub fn as_str(self) -> &'static str {
        match self {
            VerificationMode::None => "none",
            VerificationMode::Reliability => "reliability",
            VerificationMode::Authenticated => "authenticated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(VerificationMode::None),
            "reliability" => Some(VerificationMode::Reliability),
            "authenticated" => Some(VerificationMode::Authenticated),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VerificationPolicy {
    mode: VerificationMode,
    key: Option<Vec<u8>>,
}

impl VerificationPolicy {
    pub fn none() -> Self {
        VerificationPolicy {
            mode: VerificationMode::None,
            key: None,
        }
    }

    pub fn reliability(key: Option<Vec<u8>>) -> Self {
        VerificationPolicy {
            mode: VerificationMode::Reliability,
            key,
        }
    }

    pub fn authenticated(key: Vec<u8>) -> Self {
        VerificationPolicy {
            mode: VerificationMode::Authenticated,
            key: Some(key),
        }
    }

    pub fn new(mode: VerificationMode, key: Option<Vec<u8>>) -> Result<Self, IntegrityError> {
        if mode == VerificationMode::Authenticated && key.is_none() {
            return Err(IntegrityError::KeyRequired);
        }
        Ok(VerificationPolicy { mode, key })
    }

    pub fn mode(&self) -> VerificationMode {
        self.mode
    }

    pub fn key(&self) -> Option<&[u8]> {
        self.key.as_deref()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Pass,
    FailMismatch,
    FailAbsent,
    Skipped,
}

impl Verdict {
    pub fn is_failure(self) -> bool {
        matches!(self, Verdict::FailMismatch | Verdict::FailAbsent)
    }
}

/// The exact bytes a block with `coverage` protects: the immutable primary
/// fields in wire form, then the raw payload.
pub fn coverage_bytes(bundle: &Bundle, coverage: Coverage) -> Vec<u8> {
    let mut out = Vec::new();
    if coverage.primary() {
        wire::write_primary_fields(&mut out, bundle);
    }
    if coverage.payload() {
        out.extend_from_slice(&bundle.payload);
    }
    out
}

const CRC32_POLY_REFLECTED: u32 = 0xEDB8_8320;

const CRC32_TABLE: [u32; 256] = {
    let mut table = [0u32; 256];
    let mut i = 0;
    while i < 256 {
        let mut c = i as u32;
        let mut k = 0;
        while k < 8 {
            c = if c & 1 != 0 {
                (c >> 1) ^ CRC32_POLY_REFLECTED
            } else {
                c >> 1
            };
            k += 1;
        }
        table[i] = c;
        i += 1;
    }
    table
};

/// CRC-32/ISO-HDLC: polynomial 0x04C11DB7, reflected, init and xorout
/// 0xFFFFFFFF.
pub fn crc32(data: &[u8]) -> u32 {
    let mut crc = 0xFFFF_FFFFu32;
    for &b in data {
        crc = CRC32_TABLE[((crc ^ u32::from(b)) & 0xff) as usize] ^ (crc >> 8);
    }
    crc ^ 0xFFFF_FFFF
}

pub fn hmac_sha256(key: &[u8], data: &[u8]) -> [u8; HMAC_SHA256_RESULT_LEN] {
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts keys of any length");
    mac.update(data);
    mac.finalize().into_bytes().into()
}

fn hmac_matches(key: &[u8], data: &[u8], expected: &[u8]) -> bool {
    let mut mac = HmacSha256::new_from_slice(key).expect("hmac accepts keys of any length");
    mac.update(data);
    mac.verify_slice(expected).is_ok()
}

pub fn compute_result(
    suite: SuiteId,
    data: &[u8],
    key: Option<&[u8]>,
) -> Result<Vec<u8>, IntegrityError> {
    match suite {
        SuiteId::Crc32ReliabilityOnly => Ok(crc32(data).to_be_bytes().to_vec()),
        SuiteId::HmacSha256 => {
            let key = key.ok_or(IntegrityError::KeyRequired)?;
            Ok(hmac_sha256(key, data).to_vec())
        }
    }
}

pub fn attach_integrity(
    bundle: &Bundle,
    suite: SuiteId,
    coverage: Coverage,
    key: Option<&[u8]>,
) -> Result<Bundle, IntegrityError> {
    if bundle.integrity.is_some() {
        return Err(IntegrityError::AlreadyProtected);
    }
    let result = compute_result(suite, &coverage_bytes(bundle, coverage), key)?;
    let mut out = bundle.clone();
    out.integrity = Some(IntegrityBlock {
        suite,
        coverage,
        result,
    });
    Ok(out)
}

fn recompute_matches(bundle: &Bundle, block: &IntegrityBlock, key: Option<&[u8]>) -> bool {
    let data = coverage_bytes(bundle, block.coverage);
    match block.suite {
        SuiteId::Crc32ReliabilityOnly => crc32(&data).to_be_bytes()[..] == block.result[..],
        SuiteId::HmacSha256 => match key {
            Some(key) => hmac_matches(key, &data, &block.result),
            None => false,
        },
    }
}

pub fn verify(bundle: &Bundle, policy: &VerificationPolicy) -> Verdict {
    match policy.mode {
        VerificationMode::None => Verdict::Skipped,
        VerificationMode::Reliability => match &bundle.integrity {
            None => Verdict::FailAbsent,
            Some(block) if recompute_matches(bundle, block, policy.key()) => Verdict::Pass,
            Some(_) => Verdict::FailMismatch,
        },
        VerificationMode::Authenticated => match &bundle.integrity {
            Some(block) if block.suite == SuiteId::HmacSha256 => {
                if recompute_matches(bundle, block, policy.key()) {
                    Verdict::Pass
                } else {
                    Verdict::FailMismatch
                }
            }
            _ => Verdict::FailAbsent,
        },
    }
}
