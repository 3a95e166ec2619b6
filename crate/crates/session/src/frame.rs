//! Binary frame layout.
//!
//! All integers little-endian:
//!
//! ```text
//! offset size field
//!      0    4 magic "NCAF"
//!      4    1 version (1)
//!      5    1 encoding: 0 = raw cell bytes, 1 = run-length
//!      6    2 reserved, zero
//!      8    8 session id
//!     16    8 step counter
//!     24    8 sequence number
//!     32    2 height
//!     34    2 width
//!     36    4 payload length in bytes
//!     40    . payload
//! ```
//!
//! One cell is one byte: bit 7 legality, bits 4..=6 aliveness level, bits 0..=3 argmax class.
//! Level 0 means dead (α at or below the alive threshold); levels 1..=7 quantize α in (threshold, 1].
//! Illegal cells are always `0x00`. A run-length payload is a sequence of `(u16 count, cell byte)`
//! triples; the encoder picks whichever encoding is shorter.

use geonca::{BoolGrid, CellGrid, Scalar};
use thiserror::Error;

pub const FRAME_MAGIC: &[u8; 4] = b"NCAF";
pub const FRAME_VERSION: u8 = 1;
pub const HEADER_LEN: usize = 40;
pub const MAX_CLASSES: usize = 16;

const ENC_RAW: u8 = 0;
const ENC_RLE: u8 = 1;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame is truncated")]
    Truncated,
    #[error("bad frame magic or version")]
    BadHeader,
    #[error("unknown payload encoding {0}")]
    BadEncoding(u8),
    #[error("payload decodes to {got} cells, expected {want}")]
    CellCount { got: usize, want: usize },
    #[error("run of length zero")]
    EmptyRun,
}

/// Decoded view of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellView {
    pub legal: bool,
    /// 0 when dead.
    pub level: u8,
    pub class: u8,
}

impl CellView {
    pub fn from_byte(b: u8) -> Self {
        Self {
            legal: b & 0x80 != 0,
            level: (b >> 4) & 0x07,
            class: b & 0x0F,
        }
    }

    pub fn to_byte(self) -> u8 {
        if !self.legal {
            return 0;
        }
        0x80 | ((self.level & 0x07) << 4) | (self.class & 0x0F)
    }

    pub fn alive(self) -> bool {
        self.level > 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub session: u64,
    pub step: u64,
    pub seq: u64,
    pub height: u16,
    pub width: u16,
    /// Row-major cell bytes, `height · width` of them.
    pub cells: Vec<u8>,
}

/// Aliveness level of `alpha` given the alive threshold.
pub fn alive_level(alpha: f64, threshold: f64) -> u8 {
    if !(alpha > threshold) {
        return 0;
    }
    let t = ((alpha.min(1.0) - threshold) / (1.0 - threshold)).clamp(0.0, 1.0);
    1 + (t * 6.0).round() as u8
}

/// Packs the displayable part of `grid` into one byte per cell.
pub fn pack_cells<S: Scalar>(grid: &CellGrid<S>, legality: &BoolGrid, threshold: f64) -> Vec<u8> {
    let k = grid.layout().k();
    assert!(k <= MAX_CLASSES, "frames hold at most {MAX_CLASSES} classes");
    let mut out = Vec::with_capacity(grid.cells());
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            if !legality.get(r, c) {
                out.push(0);
                continue;
            }
            let logits = grid.logits(r, c);
            let class = (1..k).fold(0, |b, j| if logits[j] > logits[b] { j } else { b });
            let view = CellView {
                legal: true,
                level: alive_level(grid.alpha(r, c).as_f64(), threshold),
                class: class as u8,
            };
            out.push(view.to_byte());
        }
    }
    out
}

pub fn rle_encode(cells: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < cells.len() {
        let b = cells[i];
        let mut n = 1;
        while i + n < cells.len() && cells[i + n] == b && n < u16::MAX as usize {
            n += 1;
        }
        out.extend_from_slice(&(n as u16).to_le_bytes());
        out.push(b);
        i += n;
    }
    out
}

pub fn rle_decode(payload: &[u8], expected: usize) -> Result<Vec<u8>, FrameError> {
    if payload.len() % 3 != 0 {
        return Err(FrameError::Truncated);
    }
    let mut out = Vec::with_capacity(expected);
    for run in payload.chunks_exact(3) {
        let n = u16::from_le_bytes([run[0], run[1]]) as usize;
        if n == 0 {
            return Err(FrameError::EmptyRun);
        }
        if out.len() + n > expected {
            return Err(FrameError::CellCount { got: out.len() + n, want: expected });
        }
        out.extend(std::iter::repeat_n(run[2], n));
    }
    if out.len() != expected {
        return Err(FrameError::CellCount { got: out.len(), want: expected });
    }
    Ok(out)
}

impl Frame {
    pub fn cell(&self, r: usize, c: usize) -> CellView {
        CellView::from_byte(self.cells[r * self.width as usize + c])
    }

    pub fn encode(&self) -> Vec<u8> {
        debug_assert_eq!(self.cells.len(), self.height as usize * self.width as usize);
        let rle = rle_encode(&self.cells);
        let (encoding, payload) = if rle.len() < self.cells.len() {
            (ENC_RLE, rle)
        } else {
            (ENC_RAW, self.cells.clone())
        };
        let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
        out.extend_from_slice(FRAME_MAGIC);
        out.push(FRAME_VERSION);
        out.push(encoding);
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&self.session.to_le_bytes());
        out.extend_from_slice(&self.step.to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&payload);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, FrameError> {
        if bytes.len() < HEADER_LEN {
            return Err(FrameError::Truncated);
        }
        if &bytes[..4] != FRAME_MAGIC || bytes[4] != FRAME_VERSION {
            return Err(FrameError::BadHeader);
        }
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().expect("8 bytes"));
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
        let (height, width) = (u16_at(32), u16_at(34));
        let len = u32::from_le_bytes(bytes[36..40].try_into().expect("4 bytes")) as usize;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != len {
            return Err(FrameError::Truncated);
        }
        let expected = height as usize * width as usize;
        let cells = match bytes[5] {
            ENC_RAW if payload.len() == expected => payload.to_vec(),
            ENC_RAW => return Err(FrameError::CellCount { got: payload.len(), want: expected }),
            ENC_RLE => rle_decode(payload, expected)?,
            e => return Err(FrameError::BadEncoding(e)),
        };
        Ok(Self {
            session: u64_at(8),
            step: u64_at(16),
            seq: u64_at(24),
            height,
            width,
            cells,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn levels_cover_the_range() {
        assert_eq!(alive_level(0.05, 0.1), 0);
        assert_eq!(alive_level(0.1, 0.1), 0);
        assert_eq!(alive_level(1.0, 0.1), 7);
        assert_eq!(alive_level(25.0, 0.1), 7);
        assert_eq!(alive_level(f64::NAN, 0.1), 0);
        assert!(alive_level(0.11, 0.1) >= 1);
    }

    #[test]
    fn uniform_map_compresses_to_one_run() {
        let f = Frame { session: 3, step: 9, seq: 2, height: 80, width: 80, cells: vec![0x80; 6400] };
        let bytes = f.encode();
        assert_eq!(bytes.len(), HEADER_LEN + 3);
        assert_eq!(Frame::decode(&bytes).unwrap(), f);
    }

    #[test]
    fn corrupt_frames_are_rejected() {
        let f = Frame { session: 1, step: 1, seq: 1, height: 2, width: 2, cells: vec![0x81, 0x92, 0, 0x83] };
        let bytes = f.encode();
        assert_eq!(Frame::decode(&bytes[..10]), Err(FrameError::Truncated));
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert_eq!(Frame::decode(&bad), Err(FrameError::BadHeader));
        let mut bad = bytes.clone();
        bad[5] = 7;
        assert_eq!(Frame::decode(&bad), Err(FrameError::BadEncoding(7)));
        assert!(rle_decode(&[0, 0, 1], 0).is_err());
        assert!(rle_decode(&[5, 0, 1], 4).is_err());
    }

    proptest! {
        #[test]
        fn encode_then_decode_is_identity(
            (h, w, cells) in (1u16..40, 1u16..40).prop_flat_map(|(h, w)| {
                let cell = prop_oneof![Just(0u8), (0u8..8, 0u8..16).prop_map(|(l, c)| 0x80 | (l << 4) | c)];
                (Just(h), Just(w), prop::collection::vec(cell, h as usize * w as usize))
            }),
            session in any::<u64>(), step in any::<u64>(), seq in any::<u64>(),
        ) {
            let f = Frame { session, step, seq, height: h, width: w, cells };
            let bytes = f.encode();
            prop_assert!(bytes.len() <= HEADER_LEN + f.cells.len());
            prop_assert!(f.cells.len() <= 2 * h as usize * w as usize);
            prop_assert_eq!(Frame::decode(&bytes).unwrap(), f);
        }

        #[test]
        fn cell_byte_round_trips(legal in any::<bool>(), level in 0u8..8, class in 0u8..16) {
            let v = CellView { legal, level, class };
            let back = CellView::from_byte(v.to_byte());
            if legal {
                prop_assert_eq!(back, v);
            } else {
                prop_assert!(!back.legal && !back.alive());
            }
        }
    }
}
