//! Fiducial glyph codec for synthetic sensitive "plaques".
//!
//! A plaque payload (≤ 16 chars over A–Z, 0–9, space) is rendered as a square
//! cell grid that is machine-decodable from imagery, so extraction ground
//! truth is deterministic. Layout, in cells:
//!
//! - 2-cell white quiet border around a 26×26 marker;
//! - 4×4 solid finder squares at the marker corners: top-left, top-right and
//!   bottom-left always, bottom-right only for FACE-kind glyphs;
//! - a one-cell white gap ring between the finders and the payload grid;
//! - a 16×16 payload grid holding the message bits.
//!
//! The message is `kind(1) | len(5) | chars(16×6) | crc8(8)` = 110 bits,
//! stored twice in row-major order (the second copy gives the decoder a
//! fallback when a few cells are corrupted); remaining cells are zero.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const CHARSET: &[u8; 37] = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789 ";
pub const MAX_PAYLOAD_LEN: usize = 16;

pub const QUIET_CELLS: usize = 2;
pub const MARKER_CELLS: usize = 26;
pub const GLYPH_CELLS: usize = MARKER_CELLS + 2 * QUIET_CELLS;
pub const FINDER_CELLS: usize = 4;
pub const PAYLOAD_OFFSET: usize = 5;
pub const PAYLOAD_CELLS: usize = 16;
pub const MESSAGE_BITS: usize = 110;

/// Which detector class a plaque stands in for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PlaqueKind {
    Text,
    Face,
}

/// Cell bitmap of a whole glyph including the quiet border; `true` is dark.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlyphBitmap {
    pub cells: Vec<bool>,
    pub size: usize,
}

impl GlyphBitmap {
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.size + col]
    }
}

fn char_code(c: u8) -> Option<u8> {
    CHARSET.iter().position(|&x| x == c).map(|i| i as u8)
}

pub fn validate_payload(payload: &str) -> Result<()> {
    if payload.is_empty() {
        return Err(Error::InvalidInput(
            "plaque payload must be non-empty".into(),
        ));
    }
    if payload.len() > MAX_PAYLOAD_LEN {
        return Err(Error::InvalidInput(format!(
            "plaque payload longer than {MAX_PAYLOAD_LEN} characters"
        )));
    }
    for &b in payload.as_bytes() {
        if char_code(b).is_none() {
            return Err(Error::InvalidInput(format!(
                "character {:?} outside plaque charset",
                b as char
            )));
        }
    }
    Ok(())
}

fn crc8(bytes: &[u8]) -> u8 {
    // CRC-8/ATM, poly 0x07.
    let mut crc = 0u8;
    for &b in bytes {
        crc ^= b;
        for _ in 0..8 {
            crc = if crc & 0x80 != 0 {
                (crc << 1) ^ 0x07
            } else {
                crc << 1
            };
        }
    }
    crc
}

fn message_bits(payload: &str, kind: PlaqueKind) -> [bool; MESSAGE_BITS] {
    let codes: Vec<u8> = payload
        .as_bytes()
        .iter()
        .map(|&b| char_code(b).unwrap())
        .collect();
    let mut crc_input = vec![match kind {
        PlaqueKind::Text => 0u8,
        PlaqueKind::Face => 1u8,
    }];
    crc_input.push(codes.len() as u8);
    crc_input.extend_from_slice(&codes);
    let crc = crc8(&crc_input);

    let mut bits = [false; MESSAGE_BITS];
    let mut pos = 0;
    let push = |value: u32, nbits: usize, bits: &mut [bool; MESSAGE_BITS], pos: &mut usize| {
        for i in (0..nbits).rev() {
            bits[*pos] = (value >> i) & 1 == 1;
            *pos += 1;
        }
    };
    push(crc_input[0] as u32, 1, &mut bits, &mut pos);
    push(codes.len() as u32, 5, &mut bits, &mut pos);
    for slot in 0..MAX_PAYLOAD_LEN {
        let code = codes.get(slot).copied().unwrap_or(0);
        push(code as u32, 6, &mut bits, &mut pos);
    }
    push(crc as u32, 8, &mut bits, &mut pos);
    debug_assert_eq!(pos, MESSAGE_BITS);
    bits
}

fn bits_to_message(bits: &[bool]) -> Option<(String, PlaqueKind)> {
    let mut pos = 0;
    let mut take = |nbits: usize| {
        let mut v = 0u32;
        for _ in 0..nbits {
            v = (v << 1) | bits[pos] as u32;
            pos += 1;
        }
        v
    };
    let kind_bit = take(1) as u8;
    let len = take(5) as usize;
    if len == 0 || len > MAX_PAYLOAD_LEN {
        return None;
    }
    let mut codes = Vec::with_capacity(MAX_PAYLOAD_LEN);
    for _ in 0..MAX_PAYLOAD_LEN {
        codes.push(take(6) as u8);
    }
    let crc = take(8) as u8;
    // Slots past the payload must be zero-padded.
    if codes[len..].iter().any(|&c| c != 0) {
        return None;
    }
    if codes[..len].iter().any(|&c| c as usize >= CHARSET.len()) {
        return None;
    }
    let mut crc_input = vec![kind_bit, len as u8];
    crc_input.extend_from_slice(&codes[..len]);
    if crc8(&crc_input) != crc {
        return None;
    }
    let payload: String = codes[..len]
        .iter()
        .map(|&c| CHARSET[c as usize] as char)
        .collect();
    let kind = if kind_bit == 1 {
        PlaqueKind::Face
    } else {
        PlaqueKind::Text
    };
    Some((payload, kind))
}

/// True when marker cell `(row, col)` lies inside a finder square for `kind`.
pub fn is_finder_cell(row: usize, col: usize, kind: PlaqueKind) -> bool {
    let lo = |v: usize| v < FINDER_CELLS;
    let hi = |v: usize| v >= MARKER_CELLS - FINDER_CELLS;
    (lo(row) && lo(col))
        || (lo(row) && hi(col))
        || (hi(row) && lo(col))
        || (kind == PlaqueKind::Face && hi(row) && hi(col))
}

/// Center of a finder square in marker-cell coordinates, `(row, col)`.
pub fn finder_center(corner: FinderCorner) -> (f64, f64) {
    let lo = FINDER_CELLS as f64 / 2.0;
    let hi = MARKER_CELLS as f64 - FINDER_CELLS as f64 / 2.0;
    match corner {
        FinderCorner::TopLeft => (lo, lo),
        FinderCorner::TopRight => (lo, hi),
        FinderCorner::BottomLeft => (hi, lo),
        FinderCorner::BottomRight => (hi, hi),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FinderCorner {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
}

/// Encode a payload into a full glyph bitmap (quiet border included).
pub fn encode_plaque(payload: &str, kind: PlaqueKind) -> Result<GlyphBitmap> {
    validate_payload(payload)?;
    let bits = message_bits(payload, kind);
    let mut cells = vec![false; GLYPH_CELLS * GLYPH_CELLS];
    for row in 0..MARKER_CELLS {
        for col in 0..MARKER_CELLS {
            let dark = if is_finder_cell(row, col, kind) {
                true
            } else if (PAYLOAD_OFFSET..PAYLOAD_OFFSET + PAYLOAD_CELLS).contains(&row)
                && (PAYLOAD_OFFSET..PAYLOAD_OFFSET + PAYLOAD_CELLS).contains(&col)
            {
                let idx = (row - PAYLOAD_OFFSET) * PAYLOAD_CELLS + (col - PAYLOAD_OFFSET);
                if idx < MESSAGE_BITS {
                    bits[idx]
                } else if idx < 2 * MESSAGE_BITS {
                    bits[idx - MESSAGE_BITS]
                } else {
                    false
                }
            } else {
                false
            };
            cells[(row + QUIET_CELLS) * GLYPH_CELLS + col + QUIET_CELLS] = dark;
        }
    }
    Ok(GlyphBitmap {
        cells,
        size: GLYPH_CELLS,
    })
}

/// A merged decode is accepted only when re-encoding it reproduces the
/// sampled payload grid up to this many cell mismatches. A genuine glyph
/// read disagrees with its own re-encoding only at the corrupted cells (a
/// handful); a checksum collision decoded out of garbage disagrees at about
/// half of the 256 cells, so this check rejects collisions outright.
const MERGE_MISMATCH_LIMIT: usize = 20;

fn payload_mismatches(cells: &[bool], payload: &str, kind: PlaqueKind) -> usize {
    let bits = message_bits(payload, kind);
    (0..PAYLOAD_CELLS * PAYLOAD_CELLS)
        .filter(|&i| {
            let expected = if i < MESSAGE_BITS {
                bits[i]
            } else if i < 2 * MESSAGE_BITS {
                bits[i - MESSAGE_BITS]
            } else {
                false
            };
            cells[i] != expected
        })
        .count()
}

/// Decode a 16×16 payload-cell grid, accepting only a checksum-clean read of
/// one of the two message copies.
pub fn decode_payload_cells_exact(cells: &[bool]) -> Option<(String, PlaqueKind)> {
    assert_eq!(cells.len(), PAYLOAD_CELLS * PAYLOAD_CELLS);
    bits_to_message(&cells[..MESSAGE_BITS])
        .or_else(|| bits_to_message(&cells[MESSAGE_BITS..2 * MESSAGE_BITS]))
}

/// Decode a 16×16 payload-cell grid (row-major, `true` = dark).
///
/// Tries the primary message copy, then the redundant copy, then merged
/// readings: the copies occupy different physical cells, so a locally
/// corrupted cell flips a bit in only one copy. Enumerating the bits where
/// the copies disagree (smallest correction first) and checksum-validating
/// each merge recovers messages neither copy carries cleanly. The search is
/// bounded (at most seven corrected bits per copy, fourteen disagreements
/// total) because an unbounded one mostly manufactures checksum collisions
/// on garbled glyphs; callers that cannot tolerate even a rare collision
/// should use [`decode_payload_cells_exact`].
pub fn decode_payload_cells(cells: &[bool]) -> Option<(String, PlaqueKind)> {
    if let Some(m) = decode_payload_cells_exact(cells) {
        return Some(m);
    }
    let a = &cells[..MESSAGE_BITS];
    let b = &cells[MESSAGE_BITS..2 * MESSAGE_BITS];
    let disagree: Vec<usize> = (0..MESSAGE_BITS).filter(|&i| a[i] != b[i]).collect();
    let d = disagree.len();
    if d == 0 || d > 14 {
        return None;
    }
    let mut masks: Vec<u32> = (1..1u32 << d)
        .filter(|m| m.count_ones() <= 7 && d as u32 - m.count_ones() <= 7)
        .collect();
    masks.sort_by_key(|m| m.count_ones());
    let mut merged = a.to_vec();
    for mask in masks {
        for (j, &pos) in disagree.iter().enumerate() {
            merged[pos] = if mask >> j & 1 == 1 { b[pos] } else { a[pos] };
        }
        if let Some((payload, kind)) = bits_to_message(&merged) {
            if payload_mismatches(cells, &payload, kind) <= MERGE_MISMATCH_LIMIT {
                return Some((payload, kind));
            }
        }
    }
    None
}

/// Decode a full glyph bitmap (exact cells, as produced by [`encode_plaque`]).
pub fn decode_plaque(bitmap: &GlyphBitmap) -> Option<(String, PlaqueKind)> {
    let mut payload_cells = Vec::with_capacity(PAYLOAD_CELLS * PAYLOAD_CELLS);
    for row in 0..PAYLOAD_CELLS {
        for col in 0..PAYLOAD_CELLS {
            payload_cells.push(bitmap.get(
                row + PAYLOAD_OFFSET + QUIET_CELLS,
                col + PAYLOAD_OFFSET + QUIET_CELLS,
            ));
        }
    }
    decode_payload_cells(&payload_cells)
}
