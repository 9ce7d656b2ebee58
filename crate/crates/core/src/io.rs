//! Binary file formats and dataset ingestion.
//!
//! Every binary file starts with the same header, all integers little-endian:
//!
//! | offset | size | field                                  |
//! |--------|------|----------------------------------------|
//! | 0      | 4    | magic (`FQFM`, `FQLT`, `FQMD`, `FQEM`) |
//! | 4      | 2    | version (u16, currently 1)             |
//! | 6      | 2    | bitwidth (u16)                         |
//! | 8      | 4·k  | payload dims (u32 each, k per magic)   |
//! | 8+4·k  | 4    | CRC-32 (IEEE) of the preceding bytes    |
//!
//! The payload layouts are documented on the `encode_*` functions and in
//! `docs/FORMATS.md`. Files are written to a temporary sibling and renamed
//! into place, so a failed save never leaves a partial file behind.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, SyntheticSpec};
use crate::error::{FaqError, Result};
use crate::faultmodel::{pattern_count, FaultMap};
use crate::lut::{table_len, LookupTable};
use crate::mapper::{DataflowConfig, ErrorMask, LayerMask};
use crate::model::{Layer, LayerSpec, QuantizedModel, WeightTensor};
use crate::numfmt::{check_bitwidth, Code, QuantSpec, Rounding, ScaleFactor};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const VERSION: u16 = 1;
pub const MAGIC_FAULT_MAP: [u8; 4] = *b"FQFM";
pub const MAGIC_LUT: [u8; 4] = *b"FQLT";
pub const MAGIC_MODEL: [u8; 4] = *b"FQMD";
pub const MAGIC_MASK: [u8; 4] = *b"FQEM";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileHeader {
    pub magic: [u8; 4],
    pub version: u16,
    pub bitwidth: u16,
    pub dims: Vec<u32>,
}

fn dims_for(magic: &[u8; 4]) -> Option<usize> {
    match magic {
        m if m == &MAGIC_FAULT_MAP => Some(2),
        m if m == &MAGIC_LUT => Some(2),
        m if m == &MAGIC_MODEL => Some(2),
        m if m == &MAGIC_MASK => Some(1),
        _ => None,
    }
}

impl FileHeader {
    /// Encoded size including the trailing checksum.
    pub fn len(&self) -> usize {
        12 + 4 * self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn write(&self, out: &mut Vec<u8>) {
        let start = out.len();
        out.extend_from_slice(&self.magic);
        out.extend_from_slice(&self.version.to_le_bytes());
        out.extend_from_slice(&self.bitwidth.to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        let crc = crc32fast::hash(&out[start..]);
        out.extend_from_slice(&crc.to_le_bytes());
    }

    fn read(r: &mut Reader<'_>, expected: [u8; 4]) -> Result<Self> {
        let start = r.pos;
        let magic: [u8; 4] = r.take(4)?.try_into().unwrap();
        if magic != expected {
            return Err(r.err(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(&expected)
            )));
        }
        let version = r.u16()?;
        let bitwidth = r.u16()?;
        let n = dims_for(&magic).expect("known magic");
        let dims = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let computed = crc32fast::hash(&r.buf[start..r.pos]);
        let stored = r.u32()?;
        if stored != computed {
            return Err(r.err(format!(
                "header checksum {stored:#010x} does not match {computed:#010x}"
            )));
        }
        if version != VERSION {
            return Err(r.err(format!("unsupported version {version}")));
        }
        check_bitwidth(bitwidth as u32).map_err(|e| r.err(e.to_string()))?;
        Ok(FileHeader {
            magic,
            version,
            bitwidth,
            dims,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    fn err(&self, message: impl Into<String>) -> FaqError {
        FaqError::format(format!("{} byte {}", self.what, self.pos), message)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(self.err(format!(
                "truncated: need {n} bytes, {} left",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return Err(self.err(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

/// Write `bytes` to `path` via a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(&dir).map_err(|e| FaqError::io(&dir, e))?;
    tmp.write_all(bytes).map_err(|e| FaqError::io(path, e))?;
    tmp.persist(path).map_err(|e| FaqError::io(path, e.error))?;
    Ok(())
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| FaqError::io(path, e))
}

// ---------------------------------------------------------------- fault map

fn plane_bytes(cells: usize, bitwidth: u32) -> usize {
    (cells * bitwidth as usize).div_ceil(8)
}

fn pack_plane(plane: &[u16], bitwidth: u32) -> Vec<u8> {
    let mut out = vec![0u8; plane_bytes(plane.len(), bitwidth)];
    for (cell, &mask) in plane.iter().enumerate() {
        if mask == 0 {
            continue;
        }
        for j in 0..bitwidth as usize {
            if mask >> j & 1 == 1 {
                let k = cell * bitwidth as usize + j;
                out[k / 8] |= 1 << (k % 8);
            }
        }
    }
    out
}

fn unpack_plane(bytes: &[u8], cells: usize, bitwidth: u32) -> Result<Vec<u16>> {
    let b = bitwidth as usize;
    let used = cells * b;
    if !used.is_multiple_of(8) && bytes[used / 8] >> (used % 8) != 0 {
        return Err(FaqError::format("fault map plane", "non-zero padding bits"));
    }
    Ok((0..cells)
        .map(|cell| {
            let mut mask = 0u16;
            for j in 0..b {
                let k = cell * b + j;
                if bytes[k / 8] >> (k % 8) & 1 == 1 {
                    mask |= 1 << j;
                }
            }
            mask
        })
        .collect())
}

/// Header dims `[rows, cols]`; payload `fault_rate: f64`, `seed: u64`, then
/// the SA0 plane and the SA1 plane. A plane holds `rows·cols·bitwidth` bits,
/// bit `(row·cols + col)·bitwidth + j` for bit `j` of a cell, packed LSB
/// first within each byte and zero-padded to a whole byte.
pub fn encode_fault_map(map: &FaultMap) -> Vec<u8> {
    let mut out = Vec::new();
    FileHeader {
        magic: MAGIC_FAULT_MAP,
        version: VERSION,
        bitwidth: map.bitwidth() as u16,
        dims: vec![map.rows() as u32, map.cols() as u32],
    }
    .write(&mut out);
    out.extend_from_slice(&map.fault_rate().to_le_bytes());
    out.extend_from_slice(&map.seed().to_le_bytes());
    out.extend(pack_plane(map.sa0_plane(), map.bitwidth()));
    out.extend(pack_plane(map.sa1_plane(), map.bitwidth()));
    out
}

pub fn decode_fault_map(bytes: &[u8]) -> Result<FaultMap> {
    let mut r = Reader::new(bytes, "fault map");
    let h = FileHeader::read(&mut r, MAGIC_FAULT_MAP)?;
    let (rows, cols) = (h.dims[0] as usize, h.dims[1] as usize);
    let b = h.bitwidth as u32;
    let rate = r.f64()?;
    let seed = r.u64()?;
    let n = plane_bytes(rows * cols, b);
    let sa0 = unpack_plane(r.take(n)?, rows * cols, b)?;
    let sa1 = unpack_plane(r.take(n)?, rows * cols, b)?;
    r.finish()?;
    FaultMap::from_planes(rows, cols, b, sa0, sa1, seed, rate)
}

pub fn save_fault_map(path: &Path, map: &FaultMap) -> Result<()> {
    write_atomic(path, &encode_fault_map(map))
}

pub fn load_fault_map(path: &Path) -> Result<FaultMap> {
    decode_fault_map(&read_file(path)?)
}

// --------------------------------------------------------------------- LUT

/// Header dims `[3^b, 2^b]`; payload all entries as i16, pattern-major.
pub fn encode_lut(lut: &LookupTable) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 2 * lut.entries().len());
    FileHeader {
        magic: MAGIC_LUT,
        version: VERSION,
        bitwidth: lut.bitwidth() as u16,
        dims: vec![lut.patterns() as u32, lut.width() as u32],
    }
    .write(&mut out);
    for &e in lut.entries() {
        out.extend_from_slice(&e.to_le_bytes());
    }
    out
}

pub fn decode_lut(bytes: &[u8]) -> Result<LookupTable> {
    let mut r = Reader::new(bytes, "lookup table");
    let h = FileHeader::read(&mut r, MAGIC_LUT)?;
    let b = h.bitwidth as u32;
    if b > crate::lut::MAX_LUT_BITWIDTH
        || h.dims[0] as u64 != pattern_count(b)
        || h.dims[1] as u64 != 1u64 << b
    {
        return Err(r.err(format!("dims {:?} do not match bitwidth {b}", h.dims)));
    }
    let n = table_len(b);
    let raw = r.take(2 * n)?;
    r.finish()?;
    let entries = raw
        .chunks_exact(2)
        .map(|c| i16::from_le_bytes([c[0], c[1]]))
        .collect();
    LookupTable::from_entries(b, entries)
}

pub fn save_lut(path: &Path, lut: &LookupTable) -> Result<()> {
    write_atomic(path, &encode_lut(lut))
}

pub fn load_lut(path: &Path) -> Result<LookupTable> {
    decode_lut(&read_file(path)?)
}

// ------------------------------------------------------------------- model

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    bitwidth: u32,
    rounding: Rounding,
    input_shape: Vec<usize>,
    #[serde(default)]
    baseline_accuracy: Option<f64>,
    layers: Vec<ManifestLayer>,
    #[serde(default)]
    activation_scales: Vec<ManifestScale>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestLayer {
    #[serde(flatten)]
    spec: LayerSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight_scale: Option<ManifestScale>,
    #[serde(default)]
    has_bias: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestScale {
    scale: f64,
    tensor_id: String,
}

fn code_bytes(bitwidth: u32) -> usize {
    if bitwidth <= 8 {
        1
    } else {
        2
    }
}

/// Header dims `[manifest_len, blob_len]`; payload a UTF-8 JSON manifest
/// (layer kinds and shapes, weight and activation scales, bias flags) and a
/// blob holding, for each weighted layer in order, its codes (i8 when
/// bitwidth ≤ 8, else i16) followed by its bias as f64 when present.
pub fn encode_model<T: Scalar>(model: &QuantizedModel<T>) -> Result<Vec<u8>> {
    model.validate()?;
    let b = model.bitwidth();
    let mut blob = Vec::new();
    let mut layers = Vec::new();
    for layer in &model.layers {
        let mut entry = ManifestLayer {
            spec: layer.spec.clone(),
            weight_scale: None,
            has_bias: false,
        };
        if let Some(w) = &layer.weights {
            entry.weight_scale = Some(ManifestScale {
                scale: w.scale.scale.to_f64_lossy(),
                tensor_id: w.scale.tensor_id.clone(),
            });
            for &c in &w.codes {
                if code_bytes(b) == 1 {
                    blob.push(c as i8 as u8);
                } else {
                    blob.extend_from_slice(&c.to_le_bytes());
                }
            }
            if let Some(bias) = &w.bias {
                entry.has_bias = true;
                for &x in bias {
                    blob.extend_from_slice(&x.to_f64_lossy().to_le_bytes());
                }
            }
        }
        layers.push(entry);
    }
    let manifest = Manifest {
        bitwidth: b,
        rounding: model.quant.rounding,
        input_shape: model.input_shape.clone(),
        baseline_accuracy: model.baseline_accuracy,
        layers,
        activation_scales: model
            .activation_scales
            .iter()
            .map(|s| ManifestScale {
                scale: s.scale.to_f64_lossy(),
                tensor_id: s.tensor_id.clone(),
            })
            .collect(),
    };
    let text = serde_json::to_vec_pretty(&manifest)
        .map_err(|e| FaqError::Validation(format!("manifest: {e}")))?;
    let mut out = Vec::new();
    FileHeader {
        magic: MAGIC_MODEL,
        version: VERSION,
        bitwidth: b as u16,
        dims: vec![text.len() as u32, blob.len() as u32],
    }
    .write(&mut out);
    out.extend(text);
    out.extend(blob);
    Ok(out)
}

pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<QuantizedModel<T>> {
    let mut r = Reader::new(bytes, "model");
    let h = FileHeader::read(&mut r, MAGIC_MODEL)?;
    let text = r.take(h.dims[0] as usize)?;
    let manifest: Manifest = serde_json::from_slice(text)
        .map_err(|e| FaqError::format(format!("model manifest line {}", e.line()), e.to_string()))?;
    if manifest.bitwidth != h.bitwidth as u32 {
        return Err(FaqError::format(
            "model manifest",
            format!("bitwidth {} disagrees with header {}", manifest.bitwidth, h.bitwidth),
        ));
    }
    let blob_len = h.dims[1] as usize;
    let blob = r.take(blob_len)?;
    r.finish()?;
    let mut br = Reader::new(blob, "model blob");
    let b = manifest.bitwidth;
    let scale = |s: &ManifestScale| -> Result<ScaleFactor<T>> {
        ScaleFactor::new(T::of(s.scale), s.tensor_id.clone())
    };
    let mut layers = Vec::new();
    for entry in &manifest.layers {
        let weights = match (&entry.weight_scale, entry.spec.is_weighted()) {
            (Some(s), true) => {
                let n = entry.spec.weight_count();
                let codes = if code_bytes(b) == 1 {
                    br.take(n)?.iter().map(|&x| x as i8 as Code).collect()
                } else {
                    br.take(2 * n)?
                        .chunks_exact(2)
                        .map(|c| i16::from_le_bytes([c[0], c[1]]))
                        .collect()
                };
                let bias = if entry.has_bias {
                    let mut v = Vec::with_capacity(entry.spec.bias_len());
                    for _ in 0..entry.spec.bias_len() {
                        v.push(T::of(br.f64()?));
                    }
                    Some(v)
                } else {
                    None
                };
                Some(WeightTensor {
                    codes,
                    scale: scale(s)?,
                    bias,
                })
            }
            (None, false) => None,
            _ => {
                return Err(FaqError::format(
                    "model manifest",
                    format!("layer {:?} has inconsistent weight metadata", entry.spec),
                ))
            }
        };
        layers.push(Layer {
            spec: entry.spec.clone(),
            weights,
        });
    }
    br.finish()?;
    let model = QuantizedModel {
        quant: QuantSpec {
            bitwidth: b,
            rounding: manifest.rounding,
        },
        input_shape: manifest.input_shape,
        layers,
        activation_scales: manifest
            .activation_scales
            .iter()
            .map(scale)
            .collect::<Result<_>>()?,
        baseline_accuracy: manifest.baseline_accuracy,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model<T: Scalar>(path: &Path, model: &QuantizedModel<T>) -> Result<()> {
    write_atomic(path, &encode_model(model)?)
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<QuantizedModel<T>> {
    decode_model(&read_file(path)?)
}

// -------------------------------------------------------------- error mask

/// Header dims `[layer_count]`; payload `fault_rate: f64`, `fault_seed: u64`,
/// `buffer_rows: u32`, `buffer_cols: u32`, `pfll: u8`, then per layer
/// `layer: u32`, `count: u32` and `count` pattern indices as u32.
pub fn encode_mask(mask: &ErrorMask) -> Vec<u8> {
    let mut out = Vec::new();
    FileHeader {
        magic: MAGIC_MASK,
        version: VERSION,
        bitwidth: mask.config.bitwidth as u16,
        dims: vec![mask.layers.len() as u32],
    }
    .write(&mut out);
    out.extend_from_slice(&mask.fault_rate.to_le_bytes());
    out.extend_from_slice(&mask.fault_seed.to_le_bytes());
    out.extend_from_slice(&(mask.config.buffer_rows as u32).to_le_bytes());
    out.extend_from_slice(&(mask.config.buffer_cols as u32).to_le_bytes());
    out.push(mask.config.pfll as u8);
    for m in &mask.layers {
        out.extend_from_slice(&(m.layer as u32).to_le_bytes());
        out.extend_from_slice(&(m.patterns.len() as u32).to_le_bytes());
        for &p in &m.patterns {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    out
}

pub fn decode_mask(bytes: &[u8]) -> Result<ErrorMask> {
    let mut r = Reader::new(bytes, "error mask");
    let h = FileHeader::read(&mut r, MAGIC_MASK)?;
    let bitwidth = h.bitwidth as u32;
    let fault_rate = r.f64()?;
    if !(0.0..=1.0).contains(&fault_rate) {
        return Err(r.err(format!("fault rate {fault_rate} outside [0, 1]")));
    }
    let fault_seed = r.u64()?;
    let buffer_rows = r.u32()? as usize;
    let buffer_cols = r.u32()? as usize;
    let pfll = match r.u8()? {
        0 => false,
        1 => true,
        x => return Err(r.err(format!("pfll flag {x}"))),
    };
    let config = DataflowConfig {
        buffer_rows,
        buffer_cols,
        bitwidth,
        pfll,
    };
    config.validate().map_err(|e| r.err(e.to_string()))?;
    let limit = pattern_count(bitwidth);
    let mut layers = Vec::new();
    for _ in 0..h.dims[0] {
        let layer = r.u32()? as usize;
        let count = r.u32()? as usize;
        let raw = r.take(count.checked_mul(4).ok_or_else(|| r.err("count overflow"))?)?;
        let patterns: Vec<u32> = raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if let Some(&p) = patterns.iter().find(|&&p| p as u64 >= limit) {
            return Err(r.err(format!("pattern index {p} >= 3^{bitwidth}")));
        }
        layers.push(LayerMask { layer, patterns });
    }
    r.finish()?;
    Ok(ErrorMask {
        config,
        fault_seed,
        fault_rate,
        layers,
    })
}

pub fn save_mask(path: &Path, mask: &ErrorMask) -> Result<()> {
    write_atomic(path, &encode_mask(mask))
}

pub fn load_mask(path: &Path) -> Result<ErrorMask> {
    decode_mask(&read_file(path)?)
}

// ---------------------------------------------------------------- datasets

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetFormat {
    /// IDX image file (u8, `[n, h, w]` or `[n, c, h, w]`) plus a label file.
    Idx { labels: PathBuf },
    /// `label,x1,x2,…` rows; an optional non-numeric header row is skipped.
    /// Samples take `shape` when given, else `[D]`.
    Csv { shape: Option<Vec<usize>> },
    /// TOML [`SyntheticSpec`].
    Synthetic,
}

pub fn load_dataset<T: Scalar>(path: &Path, format: &DatasetFormat) -> Result<Dataset<T>> {
    match format {
        DatasetFormat::Idx { labels } => load_idx(path, labels),
        DatasetFormat::Csv { shape } => {
            let text = fs::read_to_string(path).map_err(|e| FaqError::io(path, e))?;
            parse_csv(&text, shape.as_deref())
        }
        DatasetFormat::Synthetic => load_synthetic_spec(path)?.generate(),
    }
}

pub fn load_synthetic_spec(path: &Path) -> Result<SyntheticSpec> {
    let text = fs::read_to_string(path).map_err(|e| FaqError::io(path, e))?;
    toml::from_str(&text).map_err(|e| FaqError::format(path.display().to_string(), e.to_string()))
}

fn read_idx<'a>(bytes: &'a [u8], what: &'static str) -> Result<(Vec<usize>, &'a [u8])> {
    let mut r = Reader::new(bytes, what);
    let magic = r.take(4)?;
    if magic[0] != 0 || magic[1] != 0 || magic[2] != 0x08 {
        return Err(FaqError::format(
            format!("{what} byte 0"),
            format!("IDX magic {magic:02x?} is not an unsigned-byte array"),
        ));
    }
    let ndims = magic[3] as usize;
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        dims.push(u32::from_be_bytes(r.take(4)?.try_into().unwrap()) as usize);
    }
    let n: usize = dims.iter().product();
    let data = r.take(n)?;
    r.finish()?;
    Ok((dims, data))
}

fn load_idx<T: Scalar>(images: &Path, labels: &Path) -> Result<Dataset<T>> {
    let ib = read_file(images)?;
    let lb = read_file(labels)?;
    let (idims, pixels) = read_idx(&ib, "idx images")?;
    let (ldims, lab) = read_idx(&lb, "idx labels")?;
    let shape = match idims.as_slice() {
        [n, h, w] => vec![*n, 1, *h, *w],
        [_, _, _, _] => idims.clone(),
        other => {
            return Err(FaqError::format("idx images", format!("unsupported dims {other:?}")))
        }
    };
    if ldims.len() != 1 || ldims[0] != shape[0] {
        return Err(FaqError::format(
            "idx labels",
            format!("{ldims:?} labels for {} images", shape[0]),
        ));
    }
    let labels: Vec<usize> = lab.iter().map(|&l| l as usize).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let data = pixels.iter().map(|&p| T::of(p as f64 / 255.0)).collect();
    Dataset::new(Tensor::new(shape, data)?, labels, classes)
}

/// Parse CSV rows `label,x1,…`. Features are divided by 255 when any
/// exceeds 1, so raw 8-bit pixel rows land in `[0, 1]`.
pub fn parse_csv<T: Scalar>(text: &str, shape: Option<&[usize]>) -> Result<Dataset<T>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut labels = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    let mut width = None;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| FaqError::format(format!("csv line {line}"), e.to_string()))?;
        if rec.is_empty() || (rec.len() == 1 && rec[0].is_empty()) {
            continue;
        }
        let label = match rec[0].parse::<usize>() {
            Ok(l) => l,
            Err(_) if i == 0 => continue,
            Err(_) => {
                return Err(FaqError::format(
                    format!("csv line {line}"),
                    format!("label '{}' is not a non-negative integer", &rec[0]),
                ))
            }
        };
        let w = rec.len() - 1;
        if w == 0 || *width.get_or_insert(w) != w {
            return Err(FaqError::format(
                format!("csv line {line}"),
                format!("{w} features, expected {}", width.unwrap_or(0)),
            ));
        }
        for (j, field) in rec.iter().skip(1).enumerate() {
            let v: f64 = field.parse().map_err(|_| {
                FaqError::format(format!("csv line {line} column {}", j + 2), format!("'{field}' is not a number"))
            })?;
            if !v.is_finite() {
                return Err(FaqError::format(format!("csv line {line} column {}", j + 2), "non-finite value"));
            }
            values.push(v);
        }
        labels.push(label);
    }
    let width = width.ok_or_else(|| FaqError::Input("csv contains no records".into()))?;
    let sample_shape = match shape {
        Some(s) if s.iter().product::<usize>() == width => s.to_vec(),
        Some(s) => {
            return Err(FaqError::Shape(format!("shape {s:?} does not hold {width} features")))
        }
        None => vec![width],
    };
    let divisor = if values.iter().any(|&v| v > 1.0) { 255.0 } else { 1.0 };
    let data = values.iter().map(|&v| T::of(v / divisor)).collect();
    let classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut full = vec![labels.len()];
    full.extend(sample_shape);
    Dataset::new(Tensor::new(full, data)?, labels, classes)
}
