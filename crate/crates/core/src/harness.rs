//! Experiment flow: fault-map generation, masking, conversion and
//! evaluation over grids of fault rates, seeds and mitigation modes.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{FaqError, Result};
use crate::faq::{faq_convert, inject, weight_error_metrics};
use crate::faultmodel::{generate_fault_map, FaultMap};
use crate::io::{load_dataset, DatasetFormat};
use crate::lut::LookupTable;
use crate::mapper::{build_error_mask, DataflowConfig};
use crate::model::QuantizedModel;
use crate::nn::{evaluate, retrain_with_faq, RetrainConfig};
use crate::scalar::Scalar;

/// Independent random streams derived from one experiment seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedStream {
    FaultMap = 1,
    Data = 2,
    Init = 3,
}

/// `splitmix64(seed ^ (stream · 0x9E3779B97F4A7C15))`.
pub fn derive_seed(seed: u64, stream: SeedStream) -> u64 {
    let mut z = seed ^ (stream as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    /// Fault-free baseline.
    None,
    /// Faulty reads, no mitigation.
    Inject,
    Faq,
    /// FAQ with first and last weighted layers in fault-free memory.
    FaqPfll,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::None, Mode::Inject, Mode::Faq, Mode::FaqPfll];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::Inject => "inject",
            Mode::Faq => "faq",
            Mode::FaqPfll => "faq-pfll",
        }
    }

    pub fn needs_lut(&self) -> bool {
        matches!(self, Mode::Faq | Mode::FaqPfll)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = FaqError;

    fn from_str(s: &str) -> Result<Self> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| FaqError::Usage(format!("unknown mode '{s}' (none|inject|faq|faq-pfll)")))
    }
}

/// Outcome of one (model, fault map, mode) evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeResult<T> {
    /// Weights as read by the accelerator.
    pub model: QuantizedModel<T>,
    pub accuracy: f64,
    pub weight_mse: f64,
    /// Wall time of mask generation, milliseconds.
    pub mask_ms: f64,
    /// Wall time of FAQ conversion, milliseconds (0 for modes without it).
    pub convert_ms: f64,
}

/// Model as read from `map` under `mode`, without evaluating it.
pub fn apply_mode<T: Scalar>(
    model: &QuantizedModel<T>,
    map: &FaultMap,
    lut: Option<&LookupTable>,
    buffer: &DataflowConfig,
    mode: Mode,
) -> Result<(QuantizedModel<T>, f64, f64)> {
    if mode == Mode::None {
        return Ok((model.clone(), 0.0, 0.0));
    }
    let cfg = DataflowConfig {
        pfll: mode == Mode::FaqPfll,
        bitwidth: model.bitwidth(),
        ..*buffer
    };
    let t = Instant::now();
    let mask = build_error_mask(model, map, &cfg)?;
    let mask_ms = t.elapsed().as_secs_f64() * 1e3;
    if mode == Mode::Inject {
        return Ok((inject(model, &mask)?, mask_ms, 0.0));
    }
    let lut = lut.ok_or_else(|| FaqError::Usage(format!("mode {mode} needs a lookup table")))?;
    let t = Instant::now();
    let converted = faq_convert(model, &mask, lut)?;
    let convert_ms = t.elapsed().as_secs_f64() * 1e3;
    Ok((inject(&converted, &mask)?, mask_ms, convert_ms))
}

pub fn run_mode<T: Scalar>(
    model: &QuantizedModel<T>,
    dataset: &Dataset<T>,
    map: &FaultMap,
    lut: Option<&LookupTable>,
    buffer: &DataflowConfig,
    mode: Mode,
) -> Result<ModeResult<T>> {
    let (read, mask_ms, convert_ms) = apply_mode(model, map, lut, buffer, mode)?;
    let accuracy = evaluate(&read, dataset)?;
    let weight_mse = weight_error_metrics(model, &read)?.mse;
    Ok(ModeResult {
        model: read,
        accuracy,
        weight_mse,
        mask_ms,
        convert_ms,
    })
}

/// Where and how to read a dataset. Relative paths resolve against the
/// directory of the config file that names them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRef {
    pub path: PathBuf,
    /// `synthetic` (TOML spec), `csv` or `idx`.
    #[serde(default = "default_format")]
    pub format: String,
    #[serde(default)]
    pub labels: Option<PathBuf>,
    #[serde(default)]
    pub shape: Option<Vec<usize>>,
}

fn default_format() -> String {
    "synthetic".into()
}

impl DatasetRef {
    pub fn from_path(path: impl Into<PathBuf>) -> Self {
        let path = path.into();
        let format = match path.extension().and_then(|e| e.to_str()) {
            Some("csv") => "csv",
            Some("idx") | Some("ubyte") => "idx",
            _ => "synthetic",
        };
        DatasetRef {
            path,
            format: format.into(),
            labels: None,
            shape: None,
        }
    }

    pub fn resolve(&self, base: &Path) -> Self {
        DatasetRef {
            path: base.join(&self.path),
            labels: self.labels.as_ref().map(|l| base.join(l)),
            ..self.clone()
        }
    }

    pub fn load<T: Scalar>(&self) -> Result<Dataset<T>> {
        let format = match self.format.as_str() {
            "synthetic" => DatasetFormat::Synthetic,
            "csv" => DatasetFormat::Csv {
                shape: self.shape.clone(),
            },
            "idx" => DatasetFormat::Idx {
                labels: self
                    .labels
                    .clone()
                    .ok_or_else(|| FaqError::Usage("idx datasets need a labels path".into()))?,
            },
            other => return Err(FaqError::Usage(format!("dataset format '{other}'"))),
        };
        load_dataset(&self.path, &format)
    }
}

fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_modes() -> Vec<Mode> {
    vec![Mode::Inject, Mode::Faq]
}

fn default_buffer() -> usize {
    256
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub fault_rates: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_modes")]
    pub modes: Vec<Mode>,
    pub model: PathBuf,
    pub dataset: DatasetRef,
    /// Lookup table file; built in memory when absent.
    #[serde(default)]
    pub lut: Option<PathBuf>,
    pub output: PathBuf,
    /// Summary CSV; defaults to `<output stem>_summary.csv`.
    #[serde(default)]
    pub summary: Option<PathBuf>,
    #[serde(default = "default_buffer")]
    pub buffer_rows: usize,
    #[serde(default = "default_buffer")]
    pub buffer_cols: usize,
    /// Write measured conversion times; when false `convert_ms` is 0 and
    /// reruns produce byte-identical CSVs.
    #[serde(default = "default_true")]
    pub record_timing: bool,
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: SweepConfig = toml::from_str(text).map_err(|e| FaqError::Usage(format!("sweep config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fault_rates.is_empty() {
            return Err(FaqError::Usage("sweep config field 'fault_rates' is empty".into()));
        }
        if let Some(r) = self.fault_rates.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(FaqError::Usage(format!(
                "sweep config field 'fault_rates' holds {r}, outside [0, 1]"
            )));
        }
        if self.seeds.is_empty() {
            return Err(FaqError::Usage("sweep config field 'seeds' is empty".into()));
        }
        if self.modes.is_empty() {
            return Err(FaqError::Usage("sweep config field 'modes' is empty".into()));
        }
        if self.buffer_rows == 0 || self.buffer_cols == 0 {
            return Err(FaqError::Usage("sweep config field 'buffer_rows'/'buffer_cols' must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Resolve relative paths against `base`.
    pub fn resolve(mut self, base: &Path) -> Self {
        self.model = base.join(&self.model);
        self.dataset = self.dataset.resolve(base);
        self.lut = self.lut.map(|l| base.join(l));
        self.output = base.join(&self.output);
        self.summary = self.summary.map(|s| base.join(s));
        self
    }

    pub fn summary_path(&self) -> PathBuf {
        self.summary.clone().unwrap_or_else(|| {
            let stem = self.output.file_stem().and_then(|s| s.to_str()).unwrap_or("sweep");
            self.output.with_file_name(format!("{stem}_summary.csv"))
        })
    }

    pub fn buffer(&self, bitwidth: u32) -> DataflowConfig {
        DataflowConfig {
            buffer_rows: self.buffer_rows,
            buffer_cols: self.buffer_cols,
            bitwidth,
            pfll: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub rate: f64,
    pub seed: u64,
    pub mode: Mode,
    pub accuracy: f64,
    pub weight_mse: f64,
    pub convert_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub rate: f64,
    pub mode: Mode,
    pub runs: usize,
    pub mean_accuracy: f64,
    pub min_accuracy: f64,
    pub max_accuracy: f64,
    pub mean_weight_mse: f64,
}

/// One row per (rate, seed, mode), in config order regardless of scheduling.
/// The fault map of seed `s` is generated from `derive_seed(s, FaultMap)`.
pub fn run_sweep<T: Scalar>(
    cfg: &SweepConfig,
    model: &QuantizedModel<T>,
    dataset: &Dataset<T>,
    lut: Option<&LookupTable>,
) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if cfg.modes.iter().any(Mode::needs_lut) && lut.is_none() {
        return Err(FaqError::Usage("sweep modes need a lookup table".into()));
    }
    let buffer = cfg.buffer(model.bitwidth());
    let cells: Vec<(f64, u64)> = cfg
        .fault_rates
        .iter()
        .flat_map(|&r| cfg.seeds.iter().map(move |&s| (r, s)))
        .collect();
    let groups = cells
        .par_iter()
        .map(|&(rate, seed)| {
            let map = generate_fault_map(
                buffer.buffer_rows,
                buffer.buffer_cols,
                model.bitwidth(),
                rate,
                derive_seed(seed, SeedStream::FaultMap),
            )?;
            cfg.modes
                .iter()
                .map(|&mode| {
                    let r = run_mode(model, dataset, &map, lut, &buffer, mode)?;
                    Ok(SweepRow {
                        rate,
                        seed,
                        mode,
                        accuracy: r.accuracy,
                        weight_mse: r.weight_mse,
                        convert_ms: if cfg.record_timing { r.convert_ms } else { 0.0 },
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(groups.into_iter().flatten().collect())
}

/// Mean/min/max accuracy per (rate, mode), ordered by first appearance.
pub fn summarize(rows: &[SweepRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(f64, Mode)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|&(rate, mode)| rate == r.rate && mode == r.mode) {
            keys.push((r.rate, r.mode));
        }
    }
    keys.into_iter()
        .map(|(rate, mode)| {
            let group: Vec<&SweepRow> = rows.iter().filter(|r| r.rate == rate && r.mode == mode).collect();
            let n = group.len() as f64;
            SummaryRow {
                rate,
                mode,
                runs: group.len(),
                mean_accuracy: group.iter().map(|r| r.accuracy).sum::<f64>() / n,
                min_accuracy: group.iter().map(|r| r.accuracy).fold(f64::INFINITY, f64::min),
                max_accuracy: group.iter().map(|r| r.accuracy).fold(f64::NEG_INFINITY, f64::max),
                mean_weight_mse: group.iter().map(|r| r.weight_mse).sum::<f64>() / n,
            }
        })
        .collect()
}

pub fn to_csv<R: Serialize>(rows: &[R]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| FaqError::Validation(format!("csv: {e}")))?;
    }
    w.into_inner().map_err(|e| FaqError::Validation(format!("csv: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrainRunConfig {
    pub model: PathBuf,
    pub train: DatasetRef,
    /// Accuracy is traced on this set; defaults to the training set.
    #[serde(default)]
    pub eval: Option<DatasetRef>,
    /// Fault map file; when absent one is generated from `fault_rate`/`seed`.
    #[serde(default)]
    pub faultmap: Option<PathBuf>,
    #[serde(default)]
    pub fault_rate: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lut: Option<PathBuf>,
    pub epochs: usize,
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_buffer")]
    pub buffer_rows: usize,
    #[serde(default = "default_buffer")]
    pub buffer_cols: usize,
    pub output: PathBuf,
    /// Optional path for the retrained (stored-code) model.
    #[serde(default)]
    pub model_out: Option<PathBuf>,
}

fn default_batch() -> usize {
    16
}

impl RetrainRunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RetrainRunConfig =
            toml::from_str(text).map_err(|e| FaqError::Usage(format!("retrain config: {e}")))?;
        if cfg.faultmap.is_none() && cfg.fault_rate.is_none() {
            return Err(FaqError::Usage(
                "retrain config needs field 'faultmap' or 'fault_rate'".into(),
            ));
        }
        if let Some(r) = cfg.fault_rate {
            if !(0.0..=1.0).contains(&r) {
                return Err(FaqError::Usage(format!("retrain config field 'fault_rate' = {r}")));
            }
        }
        Ok(cfg)
    }

    pub fn resolve(mut self, base: &Path) -> Self {
        self.model = base.join(&self.model);
        self.train = self.train.resolve(base);
        self.eval = self.eval.map(|e| e.resolve(base));
        self.faultmap = self.faultmap.map(|f| base.join(f));
        self.lut = self.lut.map(|l| base.join(l));
        self.output = base.join(&self.output);
        self.model_out = self.model_out.map(|m| base.join(m));
        self
    }

    pub fn retrain_config(&self, use_faq: bool) -> RetrainConfig {
        RetrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            seed: derive_seed(self.seed, SeedStream::Init),
            use_faq,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub accuracy: f64,
}

/// Retrain `model` against `map` and return the per-epoch accuracy trace.
#[allow(clippy::too_many_arguments)]
pub fn run_retrain<T: Scalar>(
    model: &QuantizedModel<T>,
    map: &FaultMap,
    lut: &LookupTable,
    train: &Dataset<T>,
    eval: &Dataset<T>,
    buffer: &DataflowConfig,
    cfg: &RetrainConfig,
) -> Result<(QuantizedModel<T>, Vec<EpochRow>)> {
    let mask = build_error_mask(model, map, buffer)?;
    let out = retrain_with_faq(model, &mask, lut, train, eval, cfg)?;
    let rows = out
        .trace
        .iter()
        .enumerate()
        .map(|(epoch, &accuracy)| EpochRow { epoch, accuracy })
        .collect();
    Ok((out.model, rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_streams_differ() {
        let a = derive_seed(7, SeedStream::FaultMap);
        let b = derive_seed(7, SeedStream::Data);
        let c = derive_seed(7, SeedStream::Init);
        assert!(a != b && b != c && a != c);
        assert_eq!(a, derive_seed(7, SeedStream::FaultMap));
    }

    #[test]
    fn mode_names() {
        for m in Mode::ALL {
            assert_eq!(m.as_str().parse::<Mode>().unwrap(), m);
        }
        assert!(matches!("fap".parse::<Mode>(), Err(FaqError::Usage(_))));
    }

    #[test]
    fn sweep_config_validation_names_field() {
        let base = r#"
            model = "m.bin"
            output = "out.csv"
            dataset = { path = "d.toml" }
        "#;
        let ok = SweepConfig::from_toml(&format!("fault_rates = [0.01, 0.1]\n{base}")).unwrap();
        assert_eq!(ok.seeds.len(), 5);
        assert_eq!(ok.summary_path(), PathBuf::from("out_summary.csv"));
        let e = SweepConfig::from_toml(&format!("fault_rates = []\n{base}")).unwrap_err();
        assert!(e.to_string().contains("fault_rates"), "{e}");
        let e = SweepConfig::from_toml(&format!("fault_rates = [1.5]\n{base}")).unwrap_err();
        assert!(e.to_string().contains("fault_rates"), "{e}");
        let e = SweepConfig::from_toml(&format!("fault_rates = [0.1]\nseeds = []\n{base}")).unwrap_err();
        assert!(e.to_string().contains("seeds"), "{e}");
        let e = SweepConfig::from_toml(&format!("fault_rates = [0.1]\nmodes = [\"x\"]\n{base}")).unwrap_err();
        assert!(matches!(e, FaqError::Usage(_)));
    }

    #[test]
    fn summary_bounds() {
        let rows: Vec<SweepRow> = (0..6)
            .map(|i| SweepRow {
                rate: 0.1,
                seed: i,
                mode: if i % 2 == 0 { Mode::Faq } else { Mode::Inject },
                accuracy: 0.1 * i as f64,
                weight_mse: 1.0,
                convert_ms: 0.0,
            })
            .collect();
        let s = summarize(&rows);
        assert_eq!(s.len(), 2);
        for r in &s {
            assert_eq!(r.runs, 3);
            assert!(r.min_accuracy <= r.mean_accuracy && r.mean_accuracy <= r.max_accuracy);
        }
    }
}
