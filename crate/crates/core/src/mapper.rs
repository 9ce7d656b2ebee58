//! Weight-stationary placement of model weights onto the weight buffer.
//!
//! Each conv filter / FC neuron occupies one column of a logical matrix
//! whose rows are the filter's fan-in (channel, kernel row, kernel column
//! order). The logical matrix is cut into `buffer_rows × buffer_cols` blocks
//! that are loaded one after another into the same physical buffer, so the
//! weight at logical `(r, c)` always lives in cell
//! `(r mod buffer_rows, c mod buffer_cols)`. Partial blocks are aligned to
//! the top-left corner of the buffer.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{FaqError, Result};
use crate::faultmodel::FaultMap;
use crate::model::{LayerSpec, QuantizedModel};
use crate::numfmt::check_bitwidth;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataflowConfig {
    pub buffer_rows: usize,
    pub buffer_cols: usize,
    pub bitwidth: u32,
    /// Protect the first and last weighted layers (run them from fault-free memory).
    pub pfll: bool,
}

impl Default for DataflowConfig {
    fn default() -> Self {
        DataflowConfig {
            buffer_rows: 256,
            buffer_cols: 256,
            bitwidth: 8,
            pfll: false,
        }
    }
}

impl DataflowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.buffer_rows == 0 || self.buffer_cols == 0 {
            return Err(FaqError::Config("buffer dimensions must be at least 1".into()));
        }
        check_bitwidth(self.bitwidth)
    }
}

/// Logical weight matrix of one conv/FC layer: `rows` = fan-in, `cols` =
/// filters or neurons. Weight `flat` (in storage order) sits at
/// `(flat % rows, flat / rows)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatrixLayout {
    pub rows: usize,
    pub cols: usize,
}

impl MatrixLayout {
    #[inline]
    pub fn coord(&self, flat: usize) -> (usize, usize) {
        (flat % self.rows, flat / self.rows)
    }

    #[inline]
    pub fn flat(&self, r: usize, c: usize) -> usize {
        c * self.rows + r
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn layer_to_matrix(spec: &LayerSpec) -> Result<MatrixLayout> {
    match *spec {
        LayerSpec::Conv2d {
            in_channels,
            out_channels,
            kernel,
            ..
        } => Ok(MatrixLayout {
            rows: in_channels * kernel.0 * kernel.1,
            cols: out_channels,
        }),
        LayerSpec::Fc {
            in_features,
            out_features,
        } => Ok(MatrixLayout {
            rows: in_features,
            cols: out_features,
        }),
        ref other => Err(FaqError::Kind(format!("{other:?} has no weight matrix"))),
    }
}

/// Matrix cell of conv weight `(filter, channel, kernel_row, kernel_col)`.
pub fn conv_weight_cell(
    spec: &LayerSpec,
    filter: usize,
    channel: usize,
    kernel_row: usize,
    kernel_col: usize,
) -> Result<(usize, usize)> {
    match *spec {
        LayerSpec::Conv2d { kernel, .. } => Ok((
            channel * kernel.0 * kernel.1 + kernel_row * kernel.1 + kernel_col,
            filter,
        )),
        ref other => Err(FaqError::Kind(format!("{other:?} is not a convolution"))),
    }
}

#[inline]
pub fn map_to_memory(r: usize, c: usize, config: &DataflowConfig) -> (usize, usize) {
    (r % config.buffer_rows, c % config.buffer_cols)
}

/// Pattern indices of one weighted layer, in weight storage order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerMask {
    /// Position of the layer in `QuantizedModel::layers`.
    pub layer: usize,
    pub patterns: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMask {
    pub config: DataflowConfig,
    pub fault_seed: u64,
    pub fault_rate: f64,
    pub layers: Vec<LayerMask>,
}

impl ErrorMask {
    /// All-zero mask for a model.
    pub fn fault_free<T: Scalar>(model: &QuantizedModel<T>, config: DataflowConfig) -> Self {
        ErrorMask {
            config,
            fault_seed: 0,
            fault_rate: 0.0,
            layers: model
                .weighted_layer_indices()
                .into_iter()
                .map(|i| LayerMask {
                    layer: i,
                    patterns: vec![0; model.layers[i].spec.weight_count()],
                })
                .collect(),
        }
    }

    pub fn for_layer(&self, layer: usize) -> Option<&LayerMask> {
        self.layers.iter().find(|m| m.layer == layer)
    }

    pub fn distinct_patterns(&self) -> usize {
        let mut all: Vec<u32> = self.layers.iter().flat_map(|m| m.patterns.iter().copied()).collect();
        all.sort_unstable();
        all.dedup();
        all.len()
    }

    /// Check the mask lines up with `model` (same weighted layers and sizes).
    pub fn check_against<T: Scalar>(&self, model: &QuantizedModel<T>) -> Result<()> {
        let weighted = model.weighted_layer_indices();
        if weighted.len() != self.layers.len() {
            return Err(FaqError::Config(format!(
                "mask covers {} layers, model has {} weighted layers",
                self.layers.len(),
                weighted.len()
            )));
        }
        for (&i, m) in weighted.iter().zip(&self.layers) {
            let n = model.layers[i].spec.weight_count();
            if m.layer != i || m.patterns.len() != n {
                return Err(FaqError::Config(format!(
                    "mask entry for layer {} ({} patterns) does not match layer {i} ({n} weights)",
                    m.layer,
                    m.patterns.len()
                )));
            }
        }
        Ok(())
    }
}

/// Fault pattern index of every model weight under `config`'s placement.
pub fn build_error_mask<T: Scalar>(
    model: &QuantizedModel<T>,
    map: &FaultMap,
    config: &DataflowConfig,
) -> Result<ErrorMask> {
    config.validate()?;
    if map.bitwidth() != model.bitwidth() || config.bitwidth != model.bitwidth() {
        return Err(FaqError::Config(format!(
            "bitwidth mismatch: map {}, model {}, config {}",
            map.bitwidth(),
            model.bitwidth(),
            config.bitwidth
        )));
    }
    if map.rows() != config.buffer_rows || map.cols() != config.buffer_cols {
        return Err(FaqError::Config(format!(
            "fault map is {}x{}, buffer is {}x{}",
            map.rows(),
            map.cols(),
            config.buffer_rows,
            config.buffer_cols
        )));
    }
    let cell_patterns = map.pattern_indices();
    let weighted = model.weighted_layer_indices();
    let first = weighted.first().copied();
    let last = weighted.last().copied();
    let layers = weighted
        .par_iter()
        .map(|&i| {
            let spec = &model.layers[i].spec;
            let layout = layer_to_matrix(spec)?;
            let protected = config.pfll && (Some(i) == first || Some(i) == last);
            let patterns = if protected {
                vec![0; layout.len()]
            } else {
                (0..layout.len())
                    .map(|flat| {
                        let (r, c) = layout.coord(flat);
                        let (row, col) = map_to_memory(r, c, config);
                        cell_patterns[row * config.buffer_cols + col]
                    })
                    .collect()
            };
            Ok(LayerMask { layer: i, patterns })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorMask {
        config: *config,
        fault_seed: map.seed(),
        fault_rate: map.fault_rate(),
        layers,
    })
}

/// Tab-separated placement of every weight, blocks visited row-major over
/// the block grid and cells row-major inside each block.
///
/// Columns: layer, weight index, matrix row, matrix column, block row,
/// block column, buffer row, buffer column.
pub fn write_mapping_trace<T: Scalar, W: Write>(
    model: &QuantizedModel<T>,
    config: &DataflowConfig,
    out: &mut W,
) -> Result<()> {
    config.validate()?;
    let io = |e| FaqError::io("<trace>", e);
    writeln!(out, "layer\tweight\tr\tc\tblock_r\tblock_c\tbuf_r\tbuf_c").map_err(io)?;
    for i in model.weighted_layer_indices() {
        let layout = layer_to_matrix(&model.layers[i].spec)?;
        let block_rows = layout.rows.div_ceil(config.buffer_rows);
        let block_cols = layout.cols.div_ceil(config.buffer_cols);
        for br in 0..block_rows {
            for bc in 0..block_cols {
                let r_end = ((br + 1) * config.buffer_rows).min(layout.rows);
                let c_end = ((bc + 1) * config.buffer_cols).min(layout.cols);
                for r in br * config.buffer_rows..r_end {
                    for c in bc * config.buffer_cols..c_end {
                        let (mr, mc) = map_to_memory(r, c, config);
                        writeln!(
                            out,
                            "{i}\t{}\t{r}\t{c}\t{br}\t{bc}\t{mr}\t{mc}",
                            layout.flat(r, c)
                        )
                        .map_err(io)?;
                    }
                }
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::faultmodel::{generate_fault_map, FaultPattern, STUCK_AT_1};
    use crate::model::{Layer, WeightTensor};
    use crate::numfmt::{QuantSpec, ScaleFactor};

    fn fc_model(dims: &[usize]) -> QuantizedModel<f64> {
        let mut layers = Vec::new();
        for w in dims.windows(2) {
            let spec = LayerSpec::Fc {
                in_features: w[0],
                out_features: w[1],
            };
            layers.push(Layer {
                weights: Some(WeightTensor {
                    codes: vec![1; spec.weight_count()],
                    scale: ScaleFactor::new(0.1, "w").unwrap(),
                    bias: None,
                }),
                spec,
            });
            layers.push(Layer {
                spec: LayerSpec::Relu,
                weights: None,
            });
        }
        QuantizedModel {
            quant: QuantSpec::default(),
            input_shape: vec![dims[0]],
            layers,
            activation_scales: vec![],
            baseline_accuracy: None,
        }
    }

    #[test]
    fn matrix_dimensions() {
        let conv = LayerSpec::Conv2d {
            in_channels: 3,
            out_channels: 64,
            kernel: (3, 3),
            stride: 1,
            padding: 1,
        };
        assert_eq!(layer_to_matrix(&conv).unwrap(), MatrixLayout { rows: 27, cols: 64 });
        let fc = LayerSpec::Fc {
            in_features: 512,
            out_features: 10,
        };
        assert_eq!(layer_to_matrix(&fc).unwrap(), MatrixLayout { rows: 512, cols: 10 });
        assert!(matches!(layer_to_matrix(&LayerSpec::Relu), Err(FaqError::Kind(_))));
    }

    #[test]
    fn conv_flattening_order() {
        let conv = LayerSpec::Conv2d {
            in_channels: 2,
            out_channels: 8,
            kernel: (3, 3),
            stride: 1,
            padding: 0,
        };
        assert_eq!(conv_weight_cell(&conv, 5, 1, 2, 0).unwrap(), (15, 5));
        // storage index of (k=5, c=1, r=2, s=0) maps to the same cell
        let layout = layer_to_matrix(&conv).unwrap();
        let flat = ((5 * 2 + 1) * 3 + 2) * 3;
        assert_eq!(layout.coord(flat), (15, 5));
        assert_eq!(layout.flat(15, 5), flat);
    }

    #[test]
    fn modular_placement() {
        let cfg = DataflowConfig::default();
        assert_eq!(map_to_memory(43, 10, &cfg), (43, 10));
        assert_eq!(map_to_memory(299, 10, &cfg), (43, 10));
        assert_eq!(map_to_memory(256, 256, &cfg), (0, 0));
    }

    #[test]
    fn fault_free_map_gives_zero_mask() {
        let model = fc_model(&[300, 40, 10]);
        let map = FaultMap::clear(256, 256, 8).unwrap();
        let mask = build_error_mask(&model, &map, &DataflowConfig::default()).unwrap();
        assert!(mask.layers.iter().all(|m| m.patterns.iter().all(|&p| p == 0)));
        assert_eq!(mask, ErrorMask::fault_free(&model, DataflowConfig::default()));
    }

    #[test]
    fn single_fault_hits_four_weights() {
        let spec = LayerSpec::Fc {
            in_features: 300,
            out_features: 300,
        };
        let model = QuantizedModel {
            quant: QuantSpec::default(),
            input_shape: vec![300],
            layers: vec![Layer {
                weights: Some(WeightTensor {
                    codes: vec![0; 90_000],
                    scale: ScaleFactor::new(1.0f64, "w").unwrap(),
                    bias: None,
                }),
                spec: spec.clone(),
            }],
            activation_scales: vec![],
            baseline_accuracy: None,
        };
        let mut map = FaultMap::clear(256, 256, 8).unwrap();
        map.set_fault(0, 0, 6, STUCK_AT_1).unwrap();
        let mask = build_error_mask(&model, &map, &DataflowConfig::default()).unwrap();
        let layout = layer_to_matrix(&spec).unwrap();
        let hit: Vec<(usize, usize)> = mask.layers[0]
            .patterns
            .iter()
            .enumerate()
            .filter(|(_, &p)| p != 0)
            .map(|(flat, &p)| {
                assert_eq!(p, 1458);
                layout.coord(flat)
            })
            .collect();
        let mut hit = hit;
        hit.sort();
        assert_eq!(hit, vec![(0, 0), (0, 256), (256, 0), (256, 256)]);
    }

    #[test]
    fn pfll_protects_first_and_last() {
        let model = fc_model(&[64, 32, 32, 10]);
        let map = generate_fault_map(256, 256, 8, 0.2, 3).unwrap();
        let plain = build_error_mask(&model, &map, &DataflowConfig::default()).unwrap();
        let cfg = DataflowConfig {
            pfll: true,
            ..Default::default()
        };
        let prot = build_error_mask(&model, &map, &cfg).unwrap();
        assert!(prot.layers[0].patterns.iter().all(|&p| p == 0));
        assert!(prot.layers[2].patterns.iter().all(|&p| p == 0));
        assert_eq!(prot.layers[1], plain.layers[1]);
        assert!(plain.layers[0].patterns.iter().any(|&p| p != 0));
    }

    #[test]
    fn mask_matches_map_and_bounds() {
        let model = fc_model(&[600, 300, 10]);
        let map = generate_fault_map(256, 256, 8, 0.01, 5).unwrap();
        let cfg = DataflowConfig::default();
        let mask = build_error_mask(&model, &map, &cfg).unwrap();
        assert_eq!(mask, build_error_mask(&model, &map, &cfg).unwrap());
        assert!(mask.distinct_patterns() <= map.faulty_cells() + 1);
        for m in &mask.layers {
            let layout = layer_to_matrix(&model.layers[m.layer].spec).unwrap();
            for flat in (0..m.patterns.len()).step_by(97) {
                let (r, c) = layout.coord(flat);
                let (br, bc) = map_to_memory(r, c, &cfg);
                let p = map.pattern_at(br, bc).unwrap();
                assert_eq!(m.patterns[flat], p.index());
                assert_eq!(FaultPattern::from_index(m.patterns[flat], 8).unwrap(), p);
            }
        }
    }

    #[test]
    fn mismatched_bitwidth_rejected() {
        let model = fc_model(&[4, 2]);
        let map = FaultMap::clear(256, 256, 4).unwrap();
        assert!(matches!(
            build_error_mask(&model, &map, &DataflowConfig::default()),
            Err(FaqError::Config(_))
        ));
    }

    #[test]
    fn trace_lists_every_weight_once() {
        let model = fc_model(&[5, 3]);
        let cfg = DataflowConfig {
            buffer_rows: 2,
            buffer_cols: 2,
            ..Default::default()
        };
        let mut buf = Vec::new();
        write_mapping_trace(&model, &cfg, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(lines.len(), 15);
        assert_eq!(lines[0], "0\t0\t0\t0\t0\t0\t0\t0");
        assert!(lines.contains(&"0\t14\t4\t2\t2\t1\t0\t0"));
    }
}
