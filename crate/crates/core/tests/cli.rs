use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use faqsim::io;
use tempfile::TempDir;

fn faqsim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_faqsim"))
        .args(args)
        .env("FAQSIM_THREADS", "2")
        .output()
        .expect("spawn faqsim")
}

fn ok(args: &[&str]) -> String {
    let out = faqsim(args);
    assert!(
        out.status.success(),
        "faqsim {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Workspace {
    dir: TempDir,
}

impl Workspace {
    /// Trains a small MLP on a synthetic set and writes a LUT and fault map.
    fn new() -> Self {
        let ws = Workspace {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(
            ws.path("data.toml"),
            "classes = 4\nsamples_per_class = 20\nshape = [6]\nnoise = 0.2\nseed = 3\n",
        )
        .unwrap();
        ok(&[
            "train", "--dataset", p(&ws.path("data.toml")), "--arch", "mlp2", "--epochs", "8", "--seed", "1",
            "--out", p(&ws.path("model.fqm")),
        ]);
        ok(&["gen-lut", "--bitwidth", "8", "--out", p(&ws.path("lut.fql"))]);
        ok(&[
            "gen-faultmap", "--rate", "0.1", "--seed", "4", "--out", p(&ws.path("map.fqf")),
        ]);
        ws
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn accuracy(stdout: &str) -> f64 {
    stdout.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn gen_lut_small_and_capacity_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("lut4.fql");
    ok(&["gen-lut", "--bitwidth", "4", "--out", p(&out)]);
    let lut = io::decode_lut(&fs::read(&out).unwrap()).unwrap();
    assert_eq!(lut.bitwidth(), 4);
    assert_eq!(lut.patterns(), 81);

    let big = dir.path().join("lut13.fql");
    let res = faqsim(&["gen-lut", "--bitwidth", "13", "--out", p(&big)]);
    assert!(!res.status.success());
    assert!(String::from_utf8_lossy(&res.stderr).contains("capacity"));
    assert!(!big.exists());
}

#[test]
fn gen_faultmap_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.fqf");
    let b = dir.path().join("b.fqf");
    let zero = dir.path().join("zero.fqf");
    for out in [&a, &b] {
        ok(&["gen-faultmap", "--rows", "64", "--cols", "32", "--rate", "0.05", "--seed", "9", "--out", p(out)]);
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    ok(&["gen-faultmap", "--rate", "0", "--seed", "9", "--out", p(&zero)]);
    let map = io::decode_fault_map(&fs::read(&zero).unwrap()).unwrap();
    assert_eq!(map.faulty_cells(), 0);
}

#[test]
fn convert_eval_and_usage_errors() {
    let ws = Workspace::new();
    let model = ws.path("model.fqm");

    // fault-free map leaves every weight untouched
    let clean = ws.path("clean.fqf");
    ok(&["gen-faultmap", "--rate", "0", "--seed", "1", "--out", p(&clean)]);
    let same = ws.path("same.fqm");
    let stdout = ok(&[
        "convert", "--model", p(&model), "--faultmap", p(&clean), "--lut", p(&ws.path("lut.fql")), "--out", p(&same),
    ]);
    assert!(stdout.contains("weights_per_s"));
    let before: faqsim::Model = io::decode_model(&fs::read(&model).unwrap()).unwrap();
    let after: faqsim::Model = io::decode_model(&fs::read(&same).unwrap()).unwrap();
    for (x, y) in before.layers.iter().zip(&after.layers) {
        assert_eq!(x.weights.as_ref().map(|w| &w.codes), y.weights.as_ref().map(|w| &w.codes));
    }

    let pfll = ws.path("pfll.fqm");
    ok(&[
        "convert", "--model", p(&model), "--faultmap", p(&ws.path("map.fqf")), "--lut", p(&ws.path("lut.fql")),
        "--pfll", "--out", p(&pfll),
    ]);
    let converted: faqsim::Model = io::decode_model(&fs::read(&pfll).unwrap()).unwrap();
    let weighted = before.weighted_layer_indices();
    for i in [weighted[0], *weighted.last().unwrap()] {
        assert_eq!(before.layers[i].weights, converted.layers[i].weights);
    }

    // mode none reproduces the stored baseline
    let data = ws.path("data.toml");
    let none = accuracy(&ok(&["eval", "--model", p(&model), "--dataset", p(&data), "--mode", "none"]));
    assert_eq!(Some(none), before.baseline_accuracy.map(|a| (a * 1e6).round() / 1e6));

    let faq = accuracy(&ok(&[
        "eval", "--model", p(&model), "--dataset", p(&data), "--mode", "faq", "--faultmap", p(&ws.path("map.fqf")),
        "--lut", p(&ws.path("lut.fql")),
    ]));
    assert!((0.0..=1.0).contains(&faq));

    let res = faqsim(&[
        "eval", "--model", p(&model), "--dataset", p(&data), "--mode", "faq", "--faultmap", p(&ws.path("map.fqf")),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("--lut"));

    let res = faqsim(&["eval", "--model", p(&model), "--dataset", p(&data), "--mode", "inject"]);
    assert_eq!(res.status.code(), Some(2));
}

#[test]
fn corrupted_file_is_reported() {
    let ws = Workspace::new();
    let map = ws.path("map.fqf");
    let mut bytes = fs::read(&map).unwrap();
    bytes[6] ^= 1;
    fs::write(&map, bytes).unwrap();
    let res = faqsim(&[
        "convert", "--model", p(&ws.path("model.fqm")), "--faultmap", p(&map), "--lut", p(&ws.path("lut.fql")),
        "--out", p(&ws.path("x.fqm")),
    ]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("byte"));
}

fn sweep_config(ws: &Workspace, output: &str, record_timing: bool) -> PathBuf {
    let cfg = ws.path(&format!("{output}.toml"));
    fs::write(
        &cfg,
        format!(
            "fault_rates = [0.01, 0.1]\nseeds = [0, 1, 2]\nmodes = [\"inject\", \"faq\"]\n\
             model = {:?}\nlut = {:?}\noutput = {:?}\nrecord_timing = {record_timing}\n\
             [dataset]\npath = {:?}\n",
            p(&ws.path("model.fqm")),
            p(&ws.path("lut.fql")),
            p(&ws.path(&format!("{output}.csv"))),
            p(&ws.path("data.toml")),
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn sweep_rows_summary_and_reproducibility() {
    let ws = Workspace::new();
    let cfg = sweep_config(&ws, "a", false);
    ok(&["sweep", "--config", p(&cfg)]);
    let first = fs::read(ws.path("a.csv")).unwrap();
    let mut rows = csv::Reader::from_reader(first.as_slice());
    let headers = rows.headers().unwrap().clone();
    assert_eq!(
        headers.iter().collect::<Vec<_>>(),
        ["rate", "seed", "mode", "accuracy", "weight_mse", "convert_ms"]
    );
    assert_eq!(rows.records().count(), 12);

    ok(&["sweep", "--config", p(&cfg)]);
    assert_eq!(fs::read(ws.path("a.csv")).unwrap(), first);

    let mut summary = csv::Reader::from_path(ws.path("a_summary.csv")).unwrap();
    let h = summary.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|x| x == name).unwrap();
    let mut n = 0;
    for r in summary.records() {
        let r = r.unwrap();
        let f = |name: &str| r[col(name)].parse::<f64>().unwrap();
        assert!(f("min_accuracy") <= f("mean_accuracy") && f("mean_accuracy") <= f("max_accuracy"));
        assert_eq!(f("runs"), 3.0);
        n += 1;
    }
    assert_eq!(n, 4);

    let bad = ws.path("bad.toml");
    fs::write(&bad, "fault_rates = [1.5]\nmodel = \"m\"\noutput = \"o.csv\"\n[dataset]\npath = \"d.toml\"\n").unwrap();
    let res = faqsim(&["sweep", "--config", p(&bad)]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("fault_rates"));
}

fn retrain_config(ws: &Workspace, epochs: usize) -> PathBuf {
    let cfg = ws.path(&format!("retrain{epochs}.toml"));
    fs::write(
        &cfg,
        format!(
            "model = {:?}\nfaultmap = {:?}\nlut = {:?}\nepochs = {epochs}\nlearning_rate = 0.02\n\
             output = {:?}\nmodel_out = {:?}\n[train]\npath = {:?}\n",
            p(&ws.path("model.fqm")),
            p(&ws.path("map.fqf")),
            p(&ws.path("lut.fql")),
            p(&ws.path(&format!("trace{epochs}.csv"))),
            p(&ws.path(&format!("retrained{epochs}.fqm"))),
            p(&ws.path("data.toml")),
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn retrain_trace_and_zero_epochs() {
    let ws = Workspace::new();
    ok(&["retrain", "--config", p(&retrain_config(&ws, 3)), "--with-faq"]);
    let trace = csv::Reader::from_path(ws.path("trace3.csv")).unwrap().into_records().count();
    assert_eq!(trace, 4);

    // zero epochs with FAQ equals plain conversion followed by evaluation
    ok(&["retrain", "--config", p(&retrain_config(&ws, 0)), "--with-faq"]);
    let mut rows = csv::Reader::from_path(ws.path("trace0.csv")).unwrap();
    let recs: Vec<_> = rows.records().map(|r| r.unwrap()).collect();
    assert_eq!(recs.len(), 1);
    let traced: f64 = recs[0][1].parse().unwrap();
    let faq = accuracy(&ok(&[
        "eval", "--model", p(&ws.path("model.fqm")), "--dataset", p(&ws.path("data.toml")), "--mode", "faq",
        "--faultmap", p(&ws.path("map.fqf")), "--lut", p(&ws.path("lut.fql")),
    ]));
    assert!((traced - faq).abs() < 1e-6, "{traced} vs {faq}");

    let res = faqsim(&["retrain", "--config", p(&retrain_config(&ws, 1))]);
    assert_eq!(res.status.code(), Some(2));
}
