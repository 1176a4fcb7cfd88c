//! 64-bit block-mean perceptual hash and Hamming-distance change detection.
//!
//! The image is converted to luma, area-resampled to 256x256 and split into
//! an 8x8 grid of 32x32 blocks. A bit is set when the block mean is strictly
//! greater than the median of the 64 block means. Bits are stored row-major
//! with block (0, 0) in the most significant bit.
//!
//! Every resampled cell has the same area, so block means are compared as
//! exact integer sums and the hash never depends on float rounding.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{luma_milli, NormalizedImage};

const RESIZE: usize = 256;
const GRID: usize = 8;
const BLOCK: usize = RESIZE / GRID;

/// Minimum Hamming distance that counts as a visual change.
pub const CHANGE_THRESHOLD: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PerceptualHash {
    pub bits: u64,
    pub source_dims: (usize, usize),
}

impl PerceptualHash {
    pub fn from_bits(bits: u64) -> Self {
        Self {
            bits,
            source_dims: (NormalizedImage::WIDTH, NormalizedImage::HEIGHT),
        }
    }

    /// Bit for block `(row, col)` of the 8x8 grid.
    pub fn bit(&self, row: usize, col: usize) -> bool {
        let idx = row * GRID + col;
        self.bits >> (63 - idx) & 1 == 1
    }

    pub fn to_hex(&self) -> String {
        format!("{:016x}", self.bits)
    }
}

impl fmt::Display for PerceptualHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:016x}", self.bits)
    }
}

impl FromStr for PerceptualHash {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() != 16 || !s.bytes().all(|b| b.is_ascii_hexdigit()) {
            return Err(Error::invalid(format!("hash must be 16 hex characters, got {s:?}")));
        }
        let bits = u64::from_str_radix(s, 16).map_err(|e| Error::invalid(e.to_string()))?;
        Ok(Self::from_bits(bits))
    }
}

/// Number of differing bits, always in `0..=64`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct HashDistance(pub u32);

/// Unnormalized luma sums of the 64 blocks, row-major.
///
/// Each of the 256x256 cells is `sum(weight * luma_milli)` over its source
/// footprint; all cells share the same total weight.
pub fn block_sums(luma: &[u32], width: usize, height: usize) -> [u64; 64] {
    assert_eq!(luma.len(), width * height);
    let xs = cell_spans(width);
    let ys = cell_spans(height);

    // Horizontal pass per source row, reduced straight into block columns.
    let mut sums = [0u64; 64];
    let mut row_cells = vec![0u64; RESIZE];
    for (cy, (ystart, yweights)) in ys.iter().enumerate() {
        let by = cy / BLOCK;
        for (k, &wy) in yweights.iter().enumerate() {
            let row = &luma[(ystart + k) * width..(ystart + k + 1) * width];
            for (cx, (xstart, xweights)) in xs.iter().enumerate() {
                let mut acc = 0u64;
                for (j, &wx) in xweights.iter().enumerate() {
                    acc += wx * row[xstart + j] as u64;
                }
                row_cells[cx] = acc;
            }
            for (cx, &v) in row_cells.iter().enumerate() {
                sums[by * GRID + cx / BLOCK] += wy * v;
            }
        }
    }
    sums
}

fn cell_spans(src: usize) -> Vec<(usize, Vec<u64>)> {
    let (src64, dst64) = (src as u64, RESIZE as u64);
    (0..dst64)
        .map(|o| {
            let lo = o * src64;
            let hi = lo + src64;
            let first = lo / dst64;
            let last = (hi - 1) / dst64;
            let w = (first..=last)
                .map(|i| ((i + 1) * dst64).min(hi) - (i * dst64).max(lo))
                .collect();
            (first as usize, w)
        })
        .collect()
}

/// Hash bits from block sums: set iff strictly above the median.
pub fn bits_from_block_sums(sums: &[u64; 64]) -> u64 {
    let mut sorted = *sums;
    sorted.sort_unstable();
    // median = (s[31] + s[32]) / 2; compare 2*b against the pair sum.
    let twice_median = sorted[31] as u128 + sorted[32] as u128;
    sums.iter().enumerate().fold(0u64, |acc, (i, &b)| {
        if 2 * b as u128 > twice_median {
            acc | 1 << (63 - i)
        } else {
            acc
        }
    })
}

pub fn compute_phash(img: &NormalizedImage) -> PerceptualHash {
    let luma: Vec<u32> = img.pixels().chunks_exact(3).map(luma_milli).collect();
    let sums = block_sums(&luma, img.width(), img.height());
    PerceptualHash {
        bits: bits_from_block_sums(&sums),
        source_dims: (img.width(), img.height()),
    }
}

pub fn hamming_distance(a: &PerceptualHash, b: &PerceptualHash) -> HashDistance {
    HashDistance((a.bits ^ b.bits).count_ones())
}

/// Whether a distance is large enough to require fresh inference.
pub fn is_significant_change(d: HashDistance) -> bool {
    d.0 >= CHANGE_THRESHOLD
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{normalize_screenshot, RawScreenshot};

    fn canvas(f: impl Fn(usize, usize) -> [u8; 3]) -> NormalizedImage {
        let mut px = Vec::with_capacity(960 * 540 * 3);
        for y in 0..540 {
            for x in 0..960 {
                px.extend_from_slice(&f(x, y));
            }
        }
        NormalizedImage::from_canvas(px).unwrap()
    }

    #[test]
    fn uniform_gray_hashes_to_zero() {
        let img = normalize_screenshot(&RawScreenshot::filled(1920, 1080, [128, 128, 128]).unwrap())
            .unwrap();
        assert_eq!(compute_phash(&img).bits, 0);
        assert_eq!(compute_phash(&img).to_hex(), "0000000000000000");
    }

    #[test]
    fn top_white_bottom_black() {
        let img = canvas(|_, y| if y < 270 { [255; 3] } else { [0; 3] });
        let h = compute_phash(&img);
        assert_eq!(h.bits.count_ones(), 32);
        assert_eq!(h.bits, 0xFFFF_FFFF_0000_0000);
        assert!(h.bit(3, 7) && !h.bit(4, 0));
    }

    #[test]
    fn hamming_examples() {
        let h = PerceptualHash::from_bits(0x1234_5678_9abc_def0);
        assert_eq!(hamming_distance(&h, &h), HashDistance(0));
        assert_eq!(hamming_distance(&h, &PerceptualHash::from_bits(!h.bits)), HashDistance(64));
        assert_eq!(
            hamming_distance(&PerceptualHash::from_bits(0xFF), &PerceptualHash::from_bits(0)),
            HashDistance(8)
        );
    }

    #[test]
    fn change_threshold() {
        assert!(!is_significant_change(HashDistance(0)));
        assert!(!is_significant_change(HashDistance(4)));
        assert!(is_significant_change(HashDistance(5)));
    }

    #[test]
    fn hex_round_trip() {
        let h = PerceptualHash::from_bits(0x00ab_cdef_0012_3456);
        assert_eq!(h.to_string(), "00abcdef00123456");
        assert_eq!("00abcdef00123456".parse::<PerceptualHash>().unwrap(), h);
        assert!("xyz".parse::<PerceptualHash>().is_err());
        assert!("00abcdef0012345".parse::<PerceptualHash>().is_err());
    }
}
