//! Nearest-reproducible-value lookup table.
//!
//! For every fault pattern the table stores, for each representable value,
//! the closest value that a cell with that pattern reads back unchanged.
//! Rows are indexed by ternary pattern index, columns by `value + 2^(b-1)`,
//! and the table is stored flat, pattern-major.

use rayon::prelude::*;

use crate::error::{FaqError, Result};
use crate::faultmodel::{pattern_count, FaultPattern};
use crate::numfmt::{check_bitwidth, max_code, min_code, Code, QuantSpec};

/// Largest bitwidth for which a table may be built (3^12 · 2^12 entries).
pub const MAX_LUT_BITWIDTH: u32 = 12;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LookupTable {
    bitwidth: u32,
    entries: Vec<Code>,
}

impl LookupTable {
    /// Wrap a flat entry vector, checking every table invariant.
    pub fn from_entries(bitwidth: u32, entries: Vec<Code>) -> Result<Self> {
        check_lut_bitwidth(bitwidth)?;
        let expected = table_len(bitwidth);
        if entries.len() != expected {
            return Err(FaqError::Shape(format!(
                "lookup table has {} entries, expected {expected}",
                entries.len()
            )));
        }
        let table = LookupTable { bitwidth, entries };
        table.validate()?;
        Ok(table)
    }

    fn validate(&self) -> Result<()> {
        let width = self.width();
        let lo = min_code(self.bitwidth);
        for (v, &e) in self.entries[..width].iter().enumerate() {
            if e as i32 != lo + v as i32 {
                return Err(FaqError::Validation(format!(
                    "fault-free row is not the identity at value {}",
                    lo + v as i32
                )));
            }
        }
        self.entries
            .par_chunks(width)
            .enumerate()
            .try_for_each(|(index, row)| {
                let pattern = FaultPattern::from_index(index as u32, self.bitwidth)?;
                for &e in row {
                    if mask_value(e as i32, &pattern) != e as i32 {
                        return Err(FaqError::Validation(format!(
                            "entry {e} of pattern {index} is not reproducible"
                        )));
                    }
                }
                Ok(())
            })
    }

    pub fn bitwidth(&self) -> u32 {
        self.bitwidth
    }

    /// Number of values per row, `2^bitwidth`.
    pub fn width(&self) -> usize {
        1 << self.bitwidth
    }

    pub fn patterns(&self) -> usize {
        self.entries.len() / self.width()
    }

    pub fn entries(&self) -> &[Code] {
        &self.entries
    }

    pub fn row(&self, pattern_index: u32) -> Result<&[Code]> {
        let w = self.width();
        let start = pattern_index as usize * w;
        self.entries
            .get(start..start + w)
            .ok_or_else(|| FaqError::Index(format!("pattern index {pattern_index} out of table")))
    }

    /// Nearest value reproducible under `pattern_index` to `value`.
    pub fn nearest_valid(&self, pattern_index: u32, value: Code) -> Result<Code> {
        let lo = min_code(self.bitwidth);
        let hi = max_code(self.bitwidth);
        if (value as i32) < lo || (value as i32) > hi {
            return Err(FaqError::Index(format!(
                "value {value} outside {lo}..={hi}"
            )));
        }
        if pattern_index as usize >= self.patterns() {
            return Err(FaqError::Index(format!(
                "pattern index {pattern_index} >= {}",
                self.patterns()
            )));
        }
        Ok(self.get(pattern_index, value))
    }

    /// Unchecked-argument variant of [`nearest_valid`](Self::nearest_valid);
    /// panics on out-of-range input.
    #[inline]
    pub fn get(&self, pattern_index: u32, value: Code) -> Code {
        let offset = (value as i32 - min_code(self.bitwidth)) as usize;
        self.entries[pattern_index as usize * self.width() + offset]
    }
}

fn check_lut_bitwidth(bitwidth: u32) -> Result<()> {
    check_bitwidth(bitwidth)?;
    if bitwidth > MAX_LUT_BITWIDTH {
        return Err(FaqError::Capacity(format!(
            "a {bitwidth}-bit table needs 3^{bitwidth}·2^{bitwidth} entries; at most {MAX_LUT_BITWIDTH} bits supported"
        )));
    }
    Ok(())
}

pub fn table_len(bitwidth: u32) -> usize {
    pattern_count(bitwidth) as usize * (1usize << bitwidth)
}

// Masking done on sign-extended words rather than through numfmt, so the
// table and the oracle below do not share the decode path.
#[inline]
fn mask_value(value: i32, pattern: &FaultPattern) -> i32 {
    let shift = 32 - pattern.bitwidth();
    let word = (value as u32 & !(pattern.sa0_mask() as u32)) | pattern.sa1_mask() as u32;
    ((word << shift) as i32) >> shift
}

/// Values a cell with `pattern` reproduces correctly, ascending.
pub fn reachable_set(pattern: &FaultPattern) -> Vec<Code> {
    let b = pattern.bitwidth();
    let mut values: Vec<Code> = (min_code(b)..=max_code(b))
        .map(|v| mask_value(v, pattern) as Code)
        .collect();
    values.sort_unstable();
    values.dedup();
    values
}

fn fill_row(row: &mut [Code], pattern: &FaultPattern) {
    let reachable = reachable_set(pattern);
    let lo = min_code(pattern.bitwidth());
    let mut k = 0;
    for (offset, slot) in row.iter_mut().enumerate() {
        let v = lo + offset as i32;
        // advance while the next candidate is strictly closer; equal distance
        // keeps the smaller value
        while k + 1 < reachable.len()
            && (reachable[k + 1] as i32 - v).abs() < (reachable[k] as i32 - v).abs()
        {
            k += 1;
        }
        *slot = reachable[k];
    }
}

/// Build the full table, rows computed in parallel.
pub fn build_lut(spec: &QuantSpec) -> Result<LookupTable> {
    build(spec, true)
}

/// Build the full table on the calling thread only.
pub fn build_lut_sequential(spec: &QuantSpec) -> Result<LookupTable> {
    build(spec, false)
}

fn build(spec: &QuantSpec, parallel: bool) -> Result<LookupTable> {
    let b = spec.bitwidth;
    check_lut_bitwidth(b)?;
    let width = 1usize << b;
    let mut entries = vec![0 as Code; table_len(b)];
    let fill = |(index, row): (usize, &mut [Code])| {
        let pattern = FaultPattern::from_index(index as u32, b).expect("index below 3^b");
        fill_row(row, &pattern);
    };
    if parallel {
        entries.par_chunks_mut(width).enumerate().for_each(fill);
    } else {
        entries.chunks_mut(width).enumerate().for_each(fill);
    }
    Ok(LookupTable {
        bitwidth: b,
        entries,
    })
}

/// Brute-force reference for table entries.
///
/// Enumerates every code through [`crate::faultmodel::apply_faults`], keeps the
/// fixed points and scans them linearly. Shares no code with [`build_lut`].
pub mod oracle {
    use crate::faultmodel::{apply_faults, FaultPattern};
    use crate::numfmt::{max_code, min_code, Code};

    pub fn oracle_nearest(pattern: &FaultPattern, value: Code) -> Code {
        let b = pattern.bitwidth();
        let mut best: Option<(i32, Code)> = None;
        for u in min_code(b)..=max_code(b) {
            let u = u as Code;
            if apply_faults(u, pattern) != u {
                continue;
            }
            let d = (u as i32 - value as i32).abs();
            match best {
                Some((bd, _)) if bd <= d => {}
                _ => best = Some((d, u)),
            }
        }
        best.expect("every pattern reproduces at least one value").1
    }

    pub fn oracle_fixed_points(pattern: &FaultPattern) -> Vec<Code> {
        let b = pattern.bitwidth();
        (min_code(b)..=max_code(b))
            .map(|u| u as Code)
            .filter(|&u| apply_faults(u, pattern) == u)
            .collect()
    }
}

pub use oracle::oracle_nearest;
