//! Convergence-layer adapters and fault injection.
//!
//! Both adapters frame each bundle image as a 4-byte big-endian length
//! followed by the image. Neither inspects bundle content: a bit-flipped
//! payload is delivered upward exactly as received.
//!
//! Fault injection works on the serialized image, so a flip may land in a
//! header (usually a decode error downstream) or in the payload (silent
//! corruption unless an integrity block catches it).

use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest bundle image a frame may carry.
pub const MAX_FRAME_LEN: usize = 1 << 24;
pub const FRAME_HEADER_LEN: usize = 4;
pub const DEFAULT_PORT: u16 = 4556;

#[derive(Debug, Error)]
pub enum ClaError {
    #[error("link is down")]
    LinkDown,
    #[error("frame of {0} bytes exceeds the {MAX_FRAME_LEN}-byte limit")]
    FrameTooLarge(usize),
    #[error("bad frame: {0}")]
    BadFrame(String),
    #[error("no frame queued")]
    Idle,
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FaultModelError {
    #[error("transit_ber {0} outside [0, 1)")]
    TransitBer(f64),
    #[error("storage_corrupt_prob {0} outside [0, 1]")]
    StorageProb(f64),
    #[error("storage_flip_bits must be at least 1")]
    FlipBits,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultModel {
    /// Independent per-bit flip probability on the wire.
    pub transit_ber: f64,
    /// Chance, per queued bundle per dispatch cycle, that storage corrupts it.
    pub storage_corrupt_prob: f64,
    /// Distinct bits flipped by one storage corruption.
    pub storage_flip_bits: u32,
    pub rng_seed: u64,
}

impl FaultModel {
    pub fn clean(rng_seed: u64) -> Self {
        FaultModel {
            transit_ber: 0.0,
            storage_corrupt_prob: 0.0,
            storage_flip_bits: 1,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<(), FaultModelError> {
        if !(0.0..1.0).contains(&self.transit_ber) {
            return Err(FaultModelError::TransitBer(self.transit_ber));
        }
        if !(0.0..=1.0).contains(&self.storage_corrupt_prob) {
            return Err(FaultModelError::StorageProb(self.storage_corrupt_prob));
        }
        if self.storage_flip_bits == 0 {
            return Err(FaultModelError::FlipBits);
        }
        Ok(())
    }

    pub fn is_clean(&self) -> bool {
        self.transit_ber == 0.0 && self.storage_corrupt_prob == 0.0
    }
}

/// splitmix64 finalizer over a pair, used to derive independent generator
/// seeds from a base seed and a stream key.
pub fn derive_seed(base: u64, key: u64) -> u64 {
    let mut z = base
        ^ key
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn flip_bit(bytes: &mut [u8], bit: usize) {
    bytes[bit / 8] ^= 0x80 >> (bit % 8);
}

/// Flips each bit independently with probability `ber`; returns the number
/// of flips.
///
/// Bits are visited from the end of the buffer backwards and the gaps
/// between flips are drawn geometrically, so the cost scales with the
/// number of flips and two images sharing a suffix (the payload block is
/// always last) see the same flips in that suffix for the same generator
/// state.
pub fn corrupt_transit_in_place<R: RngCore + ?Sized>(
    bytes: &mut [u8],
    ber: f64,
    rng: &mut R,
) -> usize {
    assert!((0.0..1.0).contains(&ber), "ber must be in [0, 1)");
    if ber == 0.0 || bytes.is_empty() {
        return 0;
    }
    let nbits = bytes.len() as u64 * 8;
    let log_q = (-ber).ln_1p();
    let mut from_end: u64 = 0;
    let mut flips = 0;
    loop {
        let u: f64 = 1.0 - rng.random::<f64>(); // (0, 1]
        let gap = (u.ln() / log_q).floor();
        if !gap.is_finite() || gap >= (nbits - from_end) as f64 {
            break;
        }
        from_end += gap as u64;
        flip_bit(bytes, (nbits - 1 - from_end) as usize);
        flips += 1;
        from_end += 1;
        if from_end >= nbits {
            break;
        }
    }
    flips
}

pub fn corrupt_transit<R: RngCore + ?Sized>(bytes: &[u8], ber: f64, rng: &mut R) -> Vec<u8> {
    let mut out = bytes.to_vec();
    corrupt_transit_in_place(&mut out, ber, rng);
    out
}

/// With probability `storage_corrupt_prob`, flips `storage_flip_bits`
/// distinct uniformly chosen bits. Returns the number of bits flipped.
pub fn corrupt_storage_in_place<R: RngCore + ?Sized>(
    bytes: &mut [u8],
    model: &FaultModel,
    rng: &mut R,
) -> usize {
    if model.storage_corrupt_prob == 0.0 || bytes.is_empty() {
        return 0;
    }
    if rng.random::<f64>() >= model.storage_corrupt_prob {
        return 0;
    }
    let nbits = bytes.len() * 8;
    let count = (model.storage_flip_bits as usize).min(nbits);
    for bit in rand::seq::index::sample(rng, nbits, count) {
        flip_bit(bytes, bit);
    }
    count
}

pub fn corrupt_storage<R: RngCore + ?Sized>(
    bytes: &[u8],
    model: &FaultModel,
    rng: &mut R,
) -> Vec<u8> {
    let mut out = bytes.to_vec();
    corrupt_storage_in_place(&mut out, model, rng);
    out
}

pub fn encode_frame(bundle_bytes: &[u8]) -> Result<Vec<u8>, ClaError> {
    if bundle_bytes.len() > MAX_FRAME_LEN {
        return Err(ClaError::FrameTooLarge(bundle_bytes.len()));
    }
    let mut out = Vec::with_capacity(FRAME_HEADER_LEN + bundle_bytes.len());
    out.extend_from_slice(&(bundle_bytes.len() as u32).to_be_bytes());
    out.extend_from_slice(bundle_bytes);
    Ok(out)
}

pub fn write_frame<W: Write>(w: &mut W, bundle_bytes: &[u8]) -> Result<usize, ClaError> {
    let frame = encode_frame(bundle_bytes)?;
    w.write_all(&frame).map_err(map_io)?;
    w.flush().map_err(map_io)?;
    Ok(frame.len())
}

fn map_io(e: io::Error) -> ClaError {
    match e.kind() {
        io::ErrorKind::BrokenPipe
        | io::ErrorKind::ConnectionReset
        | io::ErrorKind::ConnectionAborted
        | io::ErrorKind::NotConnected => ClaError::LinkDown,
        _ => ClaError::Io(e),
    }
}

/// Reads until `buf` is full; returns how many bytes arrived before EOF.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<usize, ClaError> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) => break,
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
            Err(e) => return Err(map_io(e)),
        }
    }
    Ok(got)
}

/// Reads one frame. A clean end of stream between frames is `LinkDown`; a
/// stream that ends inside a frame, or declares an impossible length, is
/// `BadFrame`.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Vec<u8>, ClaError> {
    let mut header = [0u8; FRAME_HEADER_LEN];
    match read_full(r, &mut header)? {
        0 => return Err(ClaError::LinkDown),
        FRAME_HEADER_LEN => {}
        n => {
            return Err(ClaError::BadFrame(format!(
                "stream ended after {n} header bytes"
            )))
        }
    }
    let len = u32::from_be_bytes(header) as usize;
    if len > MAX_FRAME_LEN {
        return Err(ClaError::BadFrame(format!(
            "declared length {len} exceeds limit"
        )));
    }
    let mut body = vec![0u8; len];
    let got = read_full(r, &mut body)?;
    if got != len {
        return Err(ClaError::BadFrame(format!(
            "declared {len} bytes, stream ended after {got}"
        )));
    }
    Ok(body)
}

/// A convergence-layer link carrying whole bundle images.
pub trait ConvergenceLayer {
    /// Sends one bundle image; returns the number of bytes put on the wire.
    fn send(&mut self, bundle_bytes: &[u8]) -> Result<usize, ClaError>;
    /// Returns exactly one frame's bundle bytes.
    fn recv(&mut self) -> Result<Vec<u8>, ClaError>;
    fn close(&mut self);
}

/// Length-prefixed framing over TCP. Adds no checks of its own and injects
/// no faults; integrity is whatever TCP provides.
#[derive(Debug)]
pub struct TcpLink {
    stream: Option<TcpStream>,
}

impl TcpLink {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, ClaError> {
        let stream = TcpStream::connect(addr).map_err(|_| ClaError::LinkDown)?;
        stream.set_nodelay(true).ok();
        Ok(TcpLink {
            stream: Some(stream),
        })
    }

    pub fn from_stream(stream: TcpStream) -> Self {
        stream.set_nodelay(true).ok();
        TcpLink {
            stream: Some(stream),
        }
    }

    pub fn is_up(&self) -> bool {
        self.stream.is_some()
    }

    fn stream(&mut self) -> Result<&mut TcpStream, ClaError> {
        self.stream.as_mut().ok_or(ClaError::LinkDown)
    }
}

impl ConvergenceLayer for TcpLink {
    fn send(&mut self, bundle_bytes: &[u8]) -> Result<usize, ClaError> {
        let res = write_frame(self.stream()?, bundle_bytes);
        if matches!(res, Err(ClaError::LinkDown)) {
            self.stream = None;
        }
        res
    }

    fn recv(&mut self) -> Result<Vec<u8>, ClaError> {
        read_frame(self.stream()?)
    }

    fn close(&mut self) {
        if let Some(s) = self.stream.take() {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

/// In-memory link that applies a [`FaultModel`]'s transit errors to every
/// image it carries.
#[derive(Debug)]
pub struct SimLink {
    model: FaultModel,
    rng: ChaCha8Rng,
    wire: VecDeque<Vec<u8>>,
    up: bool,
}

impl SimLink {
    pub fn new(model: FaultModel) -> Self {
        let rng = seeded_rng(model.rng_seed);
        SimLink {
            model,
            rng,
            wire: VecDeque::new(),
            up: true,
        }
    }

    pub fn model(&self) -> &FaultModel {
        &self.model
    }

    pub fn open(&mut self) {
        self.up = true;
    }

    /// Sends using a generator derived from the link seed and `key` rather
    /// than the link's running generator, so the same image sent under the
    /// same key always sees the same errors.
    pub fn send_keyed(&mut self, bundle_bytes: &[u8], key: u64) -> Result<usize, ClaError> {
        let mut rng = seeded_rng(derive_seed(self.model.rng_seed, key));
        self.send_with(bundle_bytes, &mut rng)
    }

    fn send_with(&mut self, bundle_bytes: &[u8], rng: &mut ChaCha8Rng) -> Result<usize, ClaError> {
        if !self.up {
            return Err(ClaError::LinkDown);
        }
        let mut image = bundle_bytes.to_vec();
        corrupt_transit_in_place(&mut image, self.model.transit_ber, rng);
        let frame = encode_frame(&image)?;
        let n = frame.len();
        self.wire.push_back(frame);
        Ok(n)
    }

    pub fn pending(&self) -> usize {
        self.wire.len()
    }
}

impl ConvergenceLayer for SimLink {
    fn send(&mut self, bundle_bytes: &[u8]) -> Result<usize, ClaError> {
        let mut rng = self.rng.clone();
        let res = self.send_with(bundle_bytes, &mut rng);
        self.rng = rng;
        res
    }

    fn recv(&mut self) -> Result<Vec<u8>, ClaError> {
        match self.wire.pop_front() {
            Some(frame) => read_frame(&mut frame.as_slice()),
            None if self.up => Err(ClaError::Idle),
            None => Err(ClaError::LinkDown),
        }
    }

    fn close(&mut self) {
        self.up = false;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    #[test]
    fn framing_arithmetic() {
        let mut out = Vec::new();
        assert_eq!(write_frame(&mut out, &[7u8; 10]).unwrap(), 14);
        assert_eq!(&out[..4], &[0, 0, 0, 10]);
        assert_eq!(read_frame(&mut Cursor::new(out)).unwrap(), vec![7u8; 10]);
    }

    #[test]
    fn frame_limits() {
        assert!(matches!(
            encode_frame(&vec![0u8; MAX_FRAME_LEN + 1]),
            Err(ClaError::FrameTooLarge(_))
        ));
        assert_eq!(
            encode_frame(&vec![0u8; MAX_FRAME_LEN]).unwrap().len(),
            MAX_FRAME_LEN + 4
        );
        let huge = ((MAX_FRAME_LEN + 1) as u32).to_be_bytes();
        assert!(matches!(
            read_frame(&mut Cursor::new(huge)),
            Err(ClaError::BadFrame(_))
        ));
    }

    #[test]
    fn truncated_stream_is_bad_frame() {
        let frame = encode_frame(b"hello world").unwrap();
        for cut in 1..frame.len() {
            assert!(
                matches!(
                    read_frame(&mut Cursor::new(&frame[..cut])),
                    Err(ClaError::BadFrame(_))
                ),
                "cut {cut}"
            );
        }
        assert!(matches!(
            read_frame(&mut Cursor::new(&[][..])),
            Err(ClaError::LinkDown)
        ));
    }

    #[test]
    fn zero_ber_is_identity() {
        let data: Vec<u8> = (0..=255).collect();
        let mut rng = seeded_rng(1);
        assert_eq!(corrupt_transit(&data, 0.0, &mut rng), data);
        assert_eq!(
            corrupt_storage(&data, &FaultModel::clean(1), &mut rng),
            data
        );
    }

    #[test]
    fn transit_is_deterministic_per_seed() {
        let data = vec![0u8; 4096];
        let a = corrupt_transit(&data, 1e-3, &mut seeded_rng(42));
        let b = corrupt_transit(&data, 1e-3, &mut seeded_rng(42));
        assert_eq!(a, b);
        assert_ne!(a, data);
        assert_ne!(a, corrupt_transit(&data, 1e-3, &mut seeded_rng(43)));
    }

    #[test]
    fn shared_suffix_sees_same_flips() {
        let tail = vec![0u8; 2000];
        let short = [vec![1u8; 10], tail.clone()].concat();
        let long = [vec![2u8; 30], tail].concat();
        let a = corrupt_transit(&short, 1e-3, &mut seeded_rng(9));
        let b = corrupt_transit(&long, 1e-3, &mut seeded_rng(9));
        assert_eq!(a[10..], b[30..]);
    }

    #[test]
    fn storage_flips_exact_count() {
        let model = FaultModel {
            storage_corrupt_prob: 1.0,
            storage_flip_bits: 1,
            ..FaultModel::clean(0)
        };
        let data = vec![0x5au8; 64];
        let mut rng = seeded_rng(3);
        for _ in 0..100 {
            let out = corrupt_storage(&data, &model, &mut rng);
            let dist: u32 = out
                .iter()
                .zip(&data)
                .map(|(a, b)| (a ^ b).count_ones())
                .sum();
            assert_eq!(dist, 1);
        }
        let model = FaultModel {
            storage_flip_bits: 7,
            ..model
        };
        let out = corrupt_storage(&data, &model, &mut rng);
        let dist: u32 = out
            .iter()
            .zip(&data)
            .map(|(a, b)| (a ^ b).count_ones())
            .sum();
        assert_eq!(dist, 7);
    }

    #[test]
    fn fault_model_validation() {
        assert!(FaultModel::clean(0).validate().is_ok());
        assert!(FaultModel {
            transit_ber: 1.0,
            ..FaultModel::clean(0)
        }
        .validate()
        .is_err());
        assert!(FaultModel {
            storage_corrupt_prob: 1.5,
            ..FaultModel::clean(0)
        }
        .validate()
        .is_err());
        assert!(FaultModel {
            storage_flip_bits: 0,
            ..FaultModel::clean(0)
        }
        .validate()
        .is_err());
    }

    #[test]
    fn sim_link_transparent_without_faults() {
        let mut link = SimLink::new(FaultModel::clean(5));
        let img: Vec<u8> = (0..1000u32).map(|i| (i * 7) as u8).collect();
        assert_eq!(link.send(&img).unwrap(), img.len() + 4);
        assert_eq!(link.recv().unwrap(), img);
        assert!(matches!(link.recv(), Err(ClaError::Idle)));
        link.close();
        assert!(matches!(link.send(&img), Err(ClaError::LinkDown)));
        assert!(matches!(link.recv(), Err(ClaError::LinkDown)));
    }

    #[test]
    fn sim_link_delivers_corruption_unchanged() {
        let model = FaultModel {
            transit_ber: 0.01,
            ..FaultModel::clean(11)
        };
        let mut link = SimLink::new(model.clone());
        let img = vec![0u8; 1000];
        link.send_keyed(&img, 77).unwrap();
        let got = link.recv().unwrap();
        assert_eq!(got.len(), img.len());
        assert_eq!(
            got,
            corrupt_transit(&img, 0.01, &mut seeded_rng(derive_seed(11, 77)))
        );
        assert_ne!(got, img);
    }
}
