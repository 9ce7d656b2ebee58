use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use faqsim::harness::{
    self, derive_seed, run_retrain, run_sweep, summarize, to_csv, DatasetRef, Mode, RetrainRunConfig,
    SeedStream, SweepConfig,
};
use faqsim::io::{self, write_atomic};
use faqsim::mapper::{build_error_mask, write_mapping_trace, DataflowConfig};
use faqsim::nn::{self, Architecture, TrainConfig};
use faqsim::{build_lut, fault_statistics, generate_fault_map, FaqError, LookupTable, QuantSpec, Real};

#[derive(Parser)]
#[command(name = "faqsim", version, about = "Fault-aware quantization for stuck-at faulty weight memory")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the nearest-reproducible-value lookup table.
    GenLut {
        #[arg(long, default_value_t = 8)]
        bitwidth: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a random stuck-at fault map.
    GenFaultmap {
        #[arg(long, default_value_t = 256)]
        rows: usize,
        #[arg(long, default_value_t = 256)]
        cols: usize,
        #[arg(long, default_value_t = 8)]
        bitwidth: u32,
        #[arg(long)]
        rate: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the error mask of a model under a fault map.
    GenMask {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        faultmap: PathBuf,
        #[arg(long)]
        pfll: bool,
        #[arg(long)]
        out: PathBuf,
        /// Also dump the weight-to-cell placement as TSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Convert a quantized model into its fault-aware variant.
    Convert {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        faultmap: PathBuf,
        #[arg(long)]
        lut: PathBuf,
        #[arg(long)]
        pfll: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a model, optionally read through a fault map.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        data: DatasetArgs,
        #[arg(long)]
        faultmap: Option<PathBuf>,
        #[arg(long)]
        lut: Option<PathBuf>,
        #[arg(long, default_value = "none")]
        mode: String,
    },
    /// Accuracy over fault rates × seeds × modes; writes per-run and summary CSVs.
    Sweep {
        #[arg(long)]
        config: PathBuf,
    },
    /// Fault-aware retraining; writes a per-epoch accuracy CSV.
    Retrain {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, conflicts_with = "without_faq")]
        with_faq: bool,
        #[arg(long)]
        without_faq: bool,
    },
    /// Train and quantize a fixture network.
    Train {
        #[command(flatten)]
        data: DatasetArgs,
        /// mlp2 or smallcnn
        #[arg(long, default_value = "mlp2")]
        arch: String,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 16)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        bitwidth: u32,
        /// Dataset whose accuracy is stored as the baseline (default: training set).
        #[arg(long)]
        eval_dataset: Option<PathBuf>,
        /// Record activation scales from the training set.
        #[arg(long)]
        calibrate: bool,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct DatasetArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// synthetic, csv or idx (default: from the file extension)
    #[arg(long)]
    format: Option<String>,
    /// Label file for idx datasets.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Per-sample shape for csv data, e.g. 1,28,28
    #[arg(long, value_delimiter = ',')]
    shape: Option<Vec<usize>>,
}

impl DatasetArgs {
    fn to_ref(&self) -> DatasetRef {
        let mut r = DatasetRef::from_path(&self.dataset);
        if let Some(f) = &self.format {
            r.format = f.clone();
        }
        r.labels = self.labels.clone();
        r.shape = self.shape.clone();
        r
    }
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn read_config(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_lut_checked(path: &Path, bitwidth: u32) -> Result<LookupTable> {
    let lut = io::load_lut(path)?;
    if lut.bitwidth() != bitwidth {
        bail!(FaqError::Usage(format!(
            "lookup table is {}-bit, model is {bitwidth}-bit",
            lut.bitwidth()
        )));
    }
    Ok(lut)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenLut { bitwidth, out } => {
            let spec = QuantSpec::new(bitwidth)?;
            let t = Instant::now();
            let lut = build_lut(&spec)?;
            let build = t.elapsed();
            io::save_lut(&out, &lut)?;
            println!(
                "lut bitwidth={bitwidth} patterns={} entries={} build_ms={:.3}",
                lut.patterns(),
                lut.entries().len(),
                build.as_secs_f64() * 1e3
            );
        }
        Cmd::GenFaultmap {
            rows,
            cols,
            bitwidth,
            rate,
            seed,
            out,
        } => {
            if !(0.0..=1.0).contains(&rate) {
                bail!(FaqError::Usage(format!("--rate {rate} outside [0, 1]")));
            }
            let map = generate_fault_map(rows, cols, bitwidth, rate, seed)?;
            io::save_fault_map(&out, &map)?;
            let s = fault_statistics(&map);
            println!(
                "faultmap {rows}x{cols}x{bitwidth} rate={rate} seed={seed} faulty_bits={} empirical_rate={:.6} sa0={} sa1={}",
                s.faulty_bits, s.rate, s.sa0_bits, s.sa1_bits
            );
        }
        Cmd::GenMask {
            model,
            faultmap,
            pfll,
            out,
            trace,
        } => {
            let model = io::load_model::<Real>(&model)?;
            let map = io::load_fault_map(&faultmap)?;
            let cfg = DataflowConfig {
                buffer_rows: map.rows(),
                buffer_cols: map.cols(),
                bitwidth: model.bitwidth(),
                pfll,
            };
            let mask = build_error_mask(&model, &map, &cfg)?;
            io::save_mask(&out, &mask)?;
            if let Some(path) = trace {
                let mut buf = Vec::new();
                write_mapping_trace(&model, &cfg, &mut buf)?;
                write_atomic(&path, &buf)?;
            }
            println!(
                "mask layers={} distinct_patterns={}",
                mask.layers.len(),
                mask.distinct_patterns()
            );
        }
        Cmd::Convert {
            model,
            faultmap,
            lut,
            pfll,
            out,
        } => {
            let model = io::load_model::<Real>(&model)?;
            let map = io::load_fault_map(&faultmap)?;
            let lut = load_lut_checked(&lut, model.bitwidth())?;
            let cfg = DataflowConfig {
                buffer_rows: map.rows(),
                buffer_cols: map.cols(),
                bitwidth: model.bitwidth(),
                pfll,
            };
            let t = Instant::now();
            let mask = build_error_mask(&model, &map, &cfg)?;
            let mask_s = t.elapsed().as_secs_f64();
            let t = Instant::now();
            let converted = faqsim::faq_convert(&model, &mask, &lut)?;
            let convert_s = t.elapsed().as_secs_f64();
            io::save_model(&out, &converted)?;
            let n = model.weight_count();
            println!(
                "converted weights={n} mask_ms={:.3} convert_ms={:.3} weights_per_s={:.0}",
                mask_s * 1e3,
                convert_s * 1e3,
                n as f64 / convert_s.max(1e-9)
            );
        }
        Cmd::Eval {
            model,
            data,
            faultmap,
            lut,
            mode,
        } => {
            let mode: Mode = mode.parse()?;
            let model = io::load_model::<Real>(&model)?;
            let dataset = data.to_ref().load::<Real>()?;
            let accuracy = match (mode, faultmap) {
                (Mode::None, _) => nn::evaluate(&model, &dataset)?,
                (_, None) => bail!(FaqError::Usage(format!("mode {mode} needs --faultmap"))),
                (_, Some(fm)) => {
                    if mode.needs_lut() && lut.is_none() {
                        bail!(FaqError::Usage(format!("mode {mode} needs --lut")));
                    }
                    let map = io::load_fault_map(&fm)?;
                    let lut = lut.map(|p| load_lut_checked(&p, model.bitwidth())).transpose()?;
                    let buffer = DataflowConfig {
                        buffer_rows: map.rows(),
                        buffer_cols: map.cols(),
                        bitwidth: model.bitwidth(),
                        pfll: false,
                    };
                    harness::run_mode(&model, &dataset, &map, lut.as_ref(), &buffer, mode)?.accuracy
                }
            };
            println!("accuracy {accuracy:.6} mode {mode} samples {}", dataset.len());
        }
        Cmd::Sweep { config } => {
            let cfg = SweepConfig::from_toml(&read_config(&config)?)?.resolve(&config_dir(&config));
            let model = io::load_model::<Real>(&cfg.model)?;
            let dataset = cfg.dataset.load::<Real>()?;
            let lut = if cfg.modes.iter().any(Mode::needs_lut) {
                Some(match &cfg.lut {
                    Some(p) => load_lut_checked(p, model.bitwidth())?,
                    None => build_lut(&model.quant)?,
                })
            } else {
                None
            };
            let rows = run_sweep(&cfg, &model, &dataset, lut.as_ref())?;
            let summary = summarize(&rows);
            write_atomic(&cfg.output, &to_csv(&rows)?)?;
            write_atomic(&cfg.summary_path(), &to_csv(&summary)?)?;
            for s in &summary {
                println!(
                    "rate={} mode={} mean={:.4} min={:.4} max={:.4}",
                    s.rate, s.mode, s.mean_accuracy, s.min_accuracy, s.max_accuracy
                );
            }
        }
        Cmd::Retrain {
            config,
            with_faq,
            without_faq,
        } => {
            if with_faq == without_faq {
                bail!(FaqError::Usage("pass exactly one of --with-faq / --without-faq".into()));
            }
            let cfg = RetrainRunConfig::from_toml(&read_config(&config)?)?.resolve(&config_dir(&config));
            let model = io::load_model::<Real>(&cfg.model)?;
            let train = cfg.train.load::<Real>()?;
            let eval = match &cfg.eval {
                Some(e) => e.load::<Real>()?,
                None => train.clone(),
            };
            let map = match (&cfg.faultmap, cfg.fault_rate) {
                (Some(p), _) => io::load_fault_map(p)?,
                (None, Some(rate)) => generate_fault_map(
                    cfg.buffer_rows,
                    cfg.buffer_cols,
                    model.bitwidth(),
                    rate,
                    derive_seed(cfg.seed, SeedStream::FaultMap),
                )?,
                (None, None) => unreachable!("validated by from_toml"),
            };
            let lut = match &cfg.lut {
                Some(p) => load_lut_checked(p, model.bitwidth())?,
                None => build_lut(&model.quant)?,
            };
            let buffer = DataflowConfig {
                buffer_rows: map.rows(),
                buffer_cols: map.cols(),
                bitwidth: model.bitwidth(),
                pfll: false,
            };
            let (retrained, rows) = run_retrain(
                &model,
                &map,
                &lut,
                &train,
                &eval,
                &buffer,
                &cfg.retrain_config(with_faq),
            )?;
            write_atomic(&cfg.output, &to_csv(&rows)?)?;
            if let Some(p) = &cfg.model_out {
                io::save_model(p, &retrained)?;
            }
            for r in &rows {
                println!("epoch {} accuracy {:.6}", r.epoch, r.accuracy);
            }
        }
        Cmd::Train {
            data,
            arch,
            epochs,
            lr,
            batch,
            seed,
            bitwidth,
            eval_dataset,
            calibrate,
            out,
        } => {
            let arch: Architecture = arch.parse()?;
            let dataset = data.to_ref().load::<Real>()?;
            let cfg = TrainConfig {
                epochs,
                learning_rate: lr,
                batch_size: batch,
                seed: derive_seed(seed, SeedStream::Init),
                quant: QuantSpec::new(bitwidth)?,
            };
            let mut model = nn::train_fixture(&dataset, &arch, &cfg)?;
            if let Some(path) = eval_dataset {
                let eval = DatasetRef::from_path(path).load::<Real>()?;
                model.baseline_accuracy = Some(nn::evaluate(&model, &eval)?);
            }
            if calibrate {
                model.activation_scales = nn::calibrate_activation_scales(&model, &dataset.inputs)?;
            }
            io::save_model(&out, &model)?;
            println!(
                "trained weights={} baseline_accuracy={:.6}",
                model.weight_count(),
                model.baseline_accuracy.unwrap_or(f64::NAN)
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    if let Some(n) = std::env::var("FAQSIM_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<FaqError>() {
                Some(FaqError::Usage(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
