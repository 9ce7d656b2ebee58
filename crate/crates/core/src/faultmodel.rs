//! Stuck-at fault maps over the weight buffer and per-cell fault patterns.
//!
//! A buffer has `rows × cols` cells of `bitwidth` bits each. Every bit is
//! either healthy, stuck-at-0 (SA0) or stuck-at-1 (SA1). The two polarities
//! are kept as separate per-cell bit masks, so `sa0[i] & sa1[i] == 0` for
//! every cell `i`.
//!
//! Random generation draws one ChaCha8 substream per buffer row: the stream
//! is `ChaCha8Rng::seed_from_u64(seed)` with `set_stream(row)`. Within a row,
//! cells are visited left to right and bits LSB first; for every bit one
//! `next_u64` is drawn and the bit is faulty iff `(u >> 11) * 2^-53 < rate`.
//! A faulty bit draws one more `next_u64`; its lowest bit selects SA1 (1) or
//! SA0 (0).

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{FaqError, Result};
use crate::numfmt::{check_bitwidth, decode_twos_complement, width_mask, Code};

/// Ternary digit of a fault pattern.
pub const NO_FAULT: u8 = 0;
pub const STUCK_AT_0: u8 = 1;
pub const STUCK_AT_1: u8 = 2;

/// Defect configuration of one memory cell.
///
/// Digit `j` describes bit `j` (LSB first); the pattern index is
/// `Σ digit[j] · 3^j`, so index 0 is the fault-free cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FaultPattern {
    bitwidth: u32,
    sa0: u16,
    sa1: u16,
}

impl FaultPattern {
    pub fn new(sa0: u16, sa1: u16, bitwidth: u32) -> Result<Self> {
        check_bitwidth(bitwidth)?;
        let m = width_mask(bitwidth) as u16;
        if sa0 & sa1 != 0 {
            return Err(FaqError::Validation(format!(
                "bit(s) {:#x} stuck at both polarities",
                sa0 & sa1
            )));
        }
        if (sa0 | sa1) & !m != 0 {
            return Err(FaqError::Validation(format!(
                "fault bits beyond bitwidth {bitwidth}"
            )));
        }
        Ok(FaultPattern { bitwidth, sa0, sa1 })
    }

    pub fn fault_free(bitwidth: u32) -> Self {
        FaultPattern {
            bitwidth,
            sa0: 0,
            sa1: 0,
        }
    }

    /// Pattern with a single stuck bit.
    pub fn single(bit: u32, polarity: u8, bitwidth: u32) -> Result<Self> {
        if bit >= bitwidth {
            return Err(FaqError::Index(format!("bit {bit} >= bitwidth {bitwidth}")));
        }
        match polarity {
            STUCK_AT_0 => Self::new(1 << bit, 0, bitwidth),
            STUCK_AT_1 => Self::new(0, 1 << bit, bitwidth),
            d => Err(FaqError::Validation(format!("polarity digit {d} is not 1 or 2"))),
        }
    }

    pub fn from_digits(digits: &[u8]) -> Result<Self> {
        let bitwidth = digits.len() as u32;
        check_bitwidth(bitwidth)?;
        let (mut sa0, mut sa1) = (0u16, 0u16);
        for (j, &d) in digits.iter().enumerate() {
            match d {
                NO_FAULT => {}
                STUCK_AT_0 => sa0 |= 1 << j,
                STUCK_AT_1 => sa1 |= 1 << j,
                _ => return Err(FaqError::Validation(format!("ternary digit {d} at {j}"))),
            }
        }
        Ok(FaultPattern { bitwidth, sa0, sa1 })
    }

    pub fn from_index(index: u32, bitwidth: u32) -> Result<Self> {
        check_bitwidth(bitwidth)?;
        if index as u64 >= pattern_count(bitwidth) {
            return Err(FaqError::Index(format!(
                "pattern index {index} >= 3^{bitwidth}"
            )));
        }
        let (mut sa0, mut sa1) = (0u16, 0u16);
        let mut rest = index;
        for j in 0..bitwidth {
            match rest % 3 {
                1 => sa0 |= 1 << j,
                2 => sa1 |= 1 << j,
                _ => {}
            }
            rest /= 3;
        }
        Ok(FaultPattern { bitwidth, sa0, sa1 })
    }

    pub fn bitwidth(&self) -> u32 {
        self.bitwidth
    }

    pub fn sa0_mask(&self) -> u16 {
        self.sa0
    }

    pub fn sa1_mask(&self) -> u16 {
        self.sa1
    }

    pub fn is_fault_free(&self) -> bool {
        self.sa0 == 0 && self.sa1 == 0
    }

    pub fn digits(&self) -> Vec<u8> {
        (0..self.bitwidth)
            .map(|j| {
                if self.sa0 >> j & 1 == 1 {
                    STUCK_AT_0
                } else if self.sa1 >> j & 1 == 1 {
                    STUCK_AT_1
                } else {
                    NO_FAULT
                }
            })
            .collect()
    }

    pub fn index(&self) -> u32 {
        ternary_index(self.sa0, self.sa1, self.bitwidth)
    }
}

/// Number of distinct fault patterns, `3^bitwidth`.
pub fn pattern_count(bitwidth: u32) -> u64 {
    3u64.pow(bitwidth)
}

#[inline]
fn ternary_index(sa0: u16, sa1: u16, bitwidth: u32) -> u32 {
    let mut index = 0u32;
    for j in (0..bitwidth).rev() {
        let digit = if sa0 >> j & 1 == 1 {
            1
        } else if sa1 >> j & 1 == 1 {
            2
        } else {
            0
        };
        index = index * 3 + digit;
    }
    index
}

/// Value read back from a cell with `pattern` after storing `code`.
#[inline]
pub fn apply_faults(code: Code, pattern: &FaultPattern) -> Code {
    let bits = (code as i32 as u32) & width_mask(pattern.bitwidth);
    let read = (bits & !(pattern.sa0 as u32)) | pattern.sa1 as u32;
    decode_twos_complement(read, pattern.bitwidth) as Code
}

/// Stuck-at state of a whole weight buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct FaultMap {
    rows: usize,
    cols: usize,
    bitwidth: u32,
    sa0: Vec<u16>,
    sa1: Vec<u16>,
    seed: u64,
    fault_rate: f64,
}

impl FaultMap {
    /// Map with no faults at all.
    pub fn clear(rows: usize, cols: usize, bitwidth: u32) -> Result<Self> {
        Self::from_planes(rows, cols, bitwidth, vec![0; rows * cols], vec![0; rows * cols], 0, 0.0)
    }

    /// Assemble a map from per-cell masks, validating the plane invariants.
    pub fn from_planes(
        rows: usize,
        cols: usize,
        bitwidth: u32,
        sa0: Vec<u16>,
        sa1: Vec<u16>,
        seed: u64,
        fault_rate: f64,
    ) -> Result<Self> {
        check_bitwidth(bitwidth)?;
        if rows == 0 || cols == 0 {
            return Err(FaqError::Config("fault map needs at least one cell".into()));
        }
        let cells = rows
            .checked_mul(cols)
            .ok_or_else(|| FaqError::Capacity("fault map too large".into()))?;
        if sa0.len() != cells || sa1.len() != cells {
            return Err(FaqError::Shape(format!(
                "planes hold {}/{} cells, expected {cells}",
                sa0.len(),
                sa1.len()
            )));
        }
        if !(0.0..=1.0).contains(&fault_rate) {
            return Err(FaqError::Validation(format!("fault rate {fault_rate} outside [0, 1]")));
        }
        let m = width_mask(bitwidth) as u16;
        for (i, (&a, &b)) in sa0.iter().zip(&sa1).enumerate() {
            if a & b != 0 {
                return Err(FaqError::Validation(format!(
                    "cell ({}, {}) has bits stuck at both polarities",
                    i / cols,
                    i % cols
                )));
            }
            if (a | b) & !m != 0 {
                return Err(FaqError::Validation(format!(
                    "cell ({}, {}) has fault bits beyond bitwidth",
                    i / cols,
                    i % cols
                )));
            }
        }
        Ok(FaultMap {
            rows,
            cols,
            bitwidth,
            sa0,
            sa1,
            seed,
            fault_rate,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bitwidth(&self) -> u32 {
        self.bitwidth
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn fault_rate(&self) -> f64 {
        self.fault_rate
    }

    /// Per-cell stuck-at-0 masks, row-major.
    pub fn sa0_plane(&self) -> &[u16] {
        &self.sa0
    }

    pub fn sa1_plane(&self) -> &[u16] {
        &self.sa1
    }

    /// Set a single stuck bit. Clears the opposite polarity at that bit.
    pub fn set_fault(&mut self, row: usize, col: usize, bit: u32, polarity: u8) -> Result<()> {
        let i = self.cell(row, col)?;
        if bit >= self.bitwidth {
            return Err(FaqError::Index(format!("bit {bit} >= bitwidth {}", self.bitwidth)));
        }
        let b = 1u16 << bit;
        match polarity {
            NO_FAULT => {
                self.sa0[i] &= !b;
                self.sa1[i] &= !b;
            }
            STUCK_AT_0 => {
                self.sa0[i] |= b;
                self.sa1[i] &= !b;
            }
            STUCK_AT_1 => {
                self.sa1[i] |= b;
                self.sa0[i] &= !b;
            }
            d => return Err(FaqError::Validation(format!("polarity digit {d}"))),
        }
        Ok(())
    }

    fn cell(&self, row: usize, col: usize) -> Result<usize> {
        if row >= self.rows || col >= self.cols {
            return Err(FaqError::Index(format!(
                "cell ({row}, {col}) outside {}x{} buffer",
                self.rows, self.cols
            )));
        }
        Ok(row * self.cols + col)
    }

    pub fn pattern_at(&self, row: usize, col: usize) -> Result<FaultPattern> {
        let i = self.cell(row, col)?;
        Ok(FaultPattern {
            bitwidth: self.bitwidth,
            sa0: self.sa0[i],
            sa1: self.sa1[i],
        })
    }

    /// Ternary pattern index of every cell, row-major.
    pub fn pattern_indices(&self) -> Vec<u32> {
        let b = self.bitwidth;
        self.sa0
            .par_iter()
            .zip(self.sa1.par_iter())
            .map(|(&a, &s)| ternary_index(a, s, b))
            .collect()
    }

    pub fn faulty_cells(&self) -> usize {
        self.sa0
            .iter()
            .zip(&self.sa1)
            .filter(|(&a, &b)| a | b != 0)
            .count()
    }
}

/// Random fault map with independent per-bit faults and equiprobable polarity.
pub fn generate_fault_map(
    rows: usize,
    cols: usize,
    bitwidth: u32,
    fault_rate: f64,
    seed: u64,
) -> Result<FaultMap> {
    check_bitwidth(bitwidth)?;
    if !(0.0..=1.0).contains(&fault_rate) {
        return Err(FaqError::Validation(format!("fault rate {fault_rate} outside [0, 1]")));
    }
    if rows == 0 || cols == 0 {
        return Err(FaqError::Config("fault map needs at least one cell".into()));
    }
    let planes: Vec<(Vec<u16>, Vec<u16>)> = (0..rows)
        .into_par_iter()
        .map(|row| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(row as u64);
            let mut sa0 = vec![0u16; cols];
            let mut sa1 = vec![0u16; cols];
            for col in 0..cols {
                for bit in 0..bitwidth {
                    let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
                    if u < fault_rate {
                        if rng.next_u64() & 1 == 1 {
                            sa1[col] |= 1 << bit;
                        } else {
                            sa0[col] |= 1 << bit;
                        }
                    }
                }
            }
            (sa0, sa1)
        })
        .collect();
    let mut sa0 = Vec::with_capacity(rows * cols);
    let mut sa1 = Vec::with_capacity(rows * cols);
    for (a, b) in planes {
        sa0.extend(a);
        sa1.extend(b);
    }
    Ok(FaultMap {
        rows,
        cols,
        bitwidth,
        sa0,
        sa1,
        seed,
        fault_rate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct BitCounts {
    pub sa0: u64,
    pub sa1: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FaultStats {
    pub total_bits: u64,
    pub faulty_bits: u64,
    pub sa0_bits: u64,
    pub sa1_bits: u64,
    /// Faulty bits / total bits.
    pub rate: f64,
    /// SA1 share of the faulty bits; 0 when there are none.
    pub sa1_fraction: f64,
    /// Counts per bit position, LSB first.
    pub per_bit: Vec<BitCounts>,
}

pub fn fault_statistics(map: &FaultMap) -> FaultStats {
    let mut per_bit = vec![BitCounts::default(); map.bitwidth as usize];
    for (&a, &b) in map.sa0.iter().zip(&map.sa1) {
        if a | b == 0 {
            continue;
        }
        for (j, counts) in per_bit.iter_mut().enumerate() {
            counts.sa0 += (a >> j & 1) as u64;
            counts.sa1 += (b >> j & 1) as u64;
        }
    }
    let sa0_bits: u64 = per_bit.iter().map(|c| c.sa0).sum();
    let sa1_bits: u64 = per_bit.iter().map(|c| c.sa1).sum();
    let total_bits = (map.rows * map.cols) as u64 * map.bitwidth as u64;
    let faulty_bits = sa0_bits + sa1_bits;
    FaultStats {
        total_bits,
        faulty_bits,
        sa0_bits,
        sa1_bits,
        rate: faulty_bits as f64 / total_bits as f64,
        sa1_fraction: if faulty_bits == 0 {
            0.0
        } else {
            sa1_bits as f64 / faulty_bits as f64
        },
        per_bit,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numfmt::{max_code, min_code};

    #[test]
    fn fig6_examples() {
        let sa1_bit6 = FaultPattern::single(6, STUCK_AT_1, 8).unwrap();
        assert_eq!(apply_faults(23, &sa1_bit6), 87);
        let sa0_bit6 = FaultPattern::single(6, STUCK_AT_0, 8).unwrap();
        assert_eq!(apply_faults(-37, &sa0_bit6), -101);
        let clear = FaultPattern::fault_free(8);
        for v in -128..=127 {
            assert_eq!(apply_faults(v, &clear), v);
        }
    }

    #[test]
    fn pattern_index_examples() {
        let mut map = FaultMap::clear(4, 4, 8).unwrap();
        assert_eq!(map.pattern_at(1, 2).unwrap().index(), 0);
        map.set_fault(1, 2, 6, STUCK_AT_1).unwrap();
        let p = map.pattern_at(1, 2).unwrap();
        assert_eq!(p.digits(), vec![0, 0, 0, 0, 0, 0, 2, 0]);
        assert_eq!(p.index(), 1458);
        map.set_fault(3, 3, 0, STUCK_AT_0).unwrap();
        map.set_fault(3, 3, 1, STUCK_AT_1).unwrap();
        assert_eq!(map.pattern_at(3, 3).unwrap().index(), 7);
        assert!(matches!(map.pattern_at(4, 0), Err(FaqError::Index(_))));
        assert_eq!(map.pattern_indices()[15], 7);
    }

    #[test]
    fn index_digit_round_trip() {
        for b in [2u32, 3, 5] {
            for i in 0..pattern_count(b) as u32 {
                let p = FaultPattern::from_index(i, b).unwrap();
                assert_eq!(p.index(), i);
                assert_eq!(FaultPattern::from_digits(&p.digits()).unwrap(), p);
            }
        }
        assert!(FaultPattern::from_index(6561, 8).is_err());
        assert!(FaultPattern::new(1, 1, 8).is_err());
    }

    #[test]
    fn apply_faults_idempotent_exhaustive() {
        for b in 2..=6u32 {
            for i in 0..pattern_count(b) as u32 {
                let p = FaultPattern::from_index(i, b).unwrap();
                for v in min_code(b)..=max_code(b) {
                    let once = apply_faults(v as Code, &p);
                    assert_eq!(apply_faults(once, &p), once);
                }
            }
        }
    }

    #[test]
    fn rate_extremes() {
        let m = generate_fault_map(256, 256, 8, 0.0, 11).unwrap();
        assert_eq!(m.faulty_cells(), 0);
        assert_eq!(fault_statistics(&m).rate, 0.0);

        let m = generate_fault_map(256, 256, 8, 1.0, 11).unwrap();
        let s = fault_statistics(&m);
        assert_eq!(s.rate, 1.0);
        // split within 4 sigma of one half
        let sigma = (0.25 / s.faulty_bits as f64).sqrt();
        assert!((s.sa1_fraction - 0.5).abs() < 4.0 * sigma);
        for (&a, &b) in m.sa0_plane().iter().zip(m.sa1_plane()) {
            assert_eq!(a | b, 0xff);
            assert_eq!(a & b, 0);
        }
    }

    #[test]
    fn rate_within_binomial_bounds() {
        let n = 256.0 * 256.0 * 8.0;
        for (p, seed) in [(0.04, 1u64), (0.1, 2)] {
            let s = fault_statistics(&generate_fault_map(256, 256, 8, p, seed).unwrap());
            let sigma = (n * p * (1.0 - p)).sqrt();
            assert!((s.faulty_bits as f64 - n * p).abs() <= 3.0 * sigma, "p={p}");
        }
        let s = fault_statistics(&generate_fault_map(256, 256, 8, 0.1, 99).unwrap());
        assert!((0.0975..=0.1025).contains(&s.rate));
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_fault_map(64, 32, 8, 0.05, 7).unwrap();
        let b = generate_fault_map(64, 32, 8, 0.05, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_fault_map(64, 32, 8, 0.05, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn from_planes_rejects_overlap() {
        let r = FaultMap::from_planes(1, 2, 8, vec![0, 4], vec![0, 4], 0, 0.1);
        assert!(matches!(r, Err(FaqError::Validation(_))));
    }
}
