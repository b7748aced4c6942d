use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bitvi_cli::run::{plateau_onset, RunMetrics};
use bitvi_cli::ExperimentConfig;
use serde_json::{json, Value};

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn schema() -> jsonschema::Validator {
    let s: Value = serde_json::from_str(&fs::read_to_string(configs_dir().join("schema.json")).unwrap()).unwrap();
    jsonschema::validator_for(&s).unwrap()
}

fn shipped_configs() -> Vec<(String, Value)> {
    let mut out: Vec<(String, Value)> = fs::read_dir(configs_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "json") && !p.ends_with("schema.json"))
        .map(|p| {
            let v = serde_json::from_str(&fs::read_to_string(&p).unwrap()).unwrap();
            (p.file_name().unwrap().to_string_lossy().into_owned(), v)
        })
        .collect();
    out.sort_by(|a, b| a.0.cmp(&b.0));
    out
}

fn bitvi(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_bitvi"));
    cmd.args(args).env_remove("BITVI_THREADS");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn write_config(dir: &Path, name: &str, v: &Value) -> String {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p.to_string_lossy().into_owned()
}

fn metrics(dir: &Path) -> RunMetrics {
    RunMetrics::from_json(&fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

fn quick_density(target: Value, format: &str, steps: usize) -> Value {
    json!({
        "experiment": "fit_density",
        "target": target,
        "posterior": {"format": format},
        "train": {"mc_samples": 64, "learning_rate": 0.05, "max_steps": steps},
        "eval": {"kl_samples": 20000, "grid_resolution": 64}
    })
}

#[test]
fn shipped_configs_match_schema_and_parse() {
    let schema = schema();
    let configs = shipped_configs();
    assert!(configs.len() >= 9);
    for (name, v) in configs {
        let errors: Vec<String> = schema.iter_errors(&v).map(|e| e.to_string()).collect();
        assert!(errors.is_empty(), "{name}: {errors:?}");
        let cfg = ExperimentConfig::from_json(&v.to_string()).unwrap_or_else(|e| panic!("{name}: {e}"));
        // The resolved copy, with every default filled in, is valid too.
        let resolved = cfg.resolve(Some("out".into()), Some(7)).unwrap();
        let rv: Value = serde_json::from_str(&resolved.to_json()).unwrap();
        assert!(schema.is_valid(&rv), "{name} resolved");
        assert_eq!(ExperimentConfig::from_json(&resolved.to_json()).unwrap(), resolved);
    }
}

#[test]
fn schema_and_parser_reject_the_same_mistakes() {
    let schema = schema();
    let base = quick_density(json!({"name": "gmm1d"}), "s2i5f", 10);
    assert!(schema.is_valid(&base));
    let mut bad = Vec::new();
    let mut v = base.clone();
    v["learning_rate"] = json!(0.1);
    bad.push(v);
    let mut v = base.clone();
    v["train"]["lr"] = json!(0.1);
    bad.push(v);
    let mut v = base.clone();
    v["posterior"]["format"] = json!("q2i5f");
    bad.push(v);
    let mut v = base.clone();
    v["target"]["sd"] = json!(1.0);
    bad.push(v);
    let mut v = base.clone();
    v.as_object_mut().unwrap().remove("target");
    bad.push(v);
    let mut v = base.clone();
    v["experiment"] = json!("fit_everything");
    bad.push(v);
    let mut v = base.clone();
    v["train"]["mc_samples"] = json!(0);
    bad.push(v);
    for v in bad {
        assert!(!schema.is_valid(&v), "schema accepted {v}");
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err(), "parser accepted {v}");
    }
}

#[test]
fn fit_uniform_target_and_rerun_identically() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = quick_density(json!({"name": "uniform", "ranges": [[-2.0, 2.0]]}), "s1i4f", 300);
    let path = write_config(dir.path(), "uniform.json", &cfg);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = bitvi(&["fit", "--config", &path, "--out", out.to_str().unwrap(), "--seed", "3"], &[]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "metrics.json",
        "posterior.json",
        "resolved_config.json",
        "trace.jsonl",
        "target_grid.csv",
        "posterior_grid.csv",
    ] {
        assert!(a.join(f).is_file(), "{f}");
    }
    let ma = fs::read(a.join("metrics.json")).unwrap();
    assert_eq!(ma, fs::read(b.join("metrics.json")).unwrap());
    let RunMetrics::FitDensity(m) = metrics(&a) else { panic!() };
    assert!((m.entropy - 4f64.ln()).abs() < 0.01, "{}", m.entropy);
    assert!(m.reverse_kl.unwrap() < 0.01);

    let resolved: Value = serde_json::from_slice(&fs::read(a.join("resolved_config.json")).unwrap()).unwrap();
    assert_eq!(resolved["seed"], 3);
    assert_eq!(resolved["train"]["seed"], 3);
    assert_eq!(resolved["train"]["adam"]["beta2"], 0.999);

    // The resolved config alone reproduces the run.
    let c = bitvi(&["fit", "--config", a.join("resolved_config.json").to_str().unwrap(), "--out", dir.path().join("c").to_str().unwrap()], &[]);
    assert!(c.status.success());
    assert_eq!(ma, fs::read(dir.path().join("c/metrics.json")).unwrap());
}

fn distinct(csv: &str) -> usize {
    let mut v: Vec<u64> = csv
        .lines()
        .skip(1)
        .map(|l| l.rsplit(',').next().unwrap().parse::<f64>().unwrap().to_bits())
        .collect();
    v.sort_unstable();
    v.dedup();
    v.len()
}

#[test]
fn coarse_and_fine_grids_differ_in_block_structure() {
    let dir = tempfile::tempdir().unwrap();
    let mut counts = Vec::new();
    for f in ["s2i1f", "s2i5f"] {
        let mut cfg = quick_density(json!({"name": "gmm1d"}), f, 200);
        cfg["eval"]["grid_resolution"] = json!(512);
        let path = write_config(dir.path(), &format!("{f}.json"), &cfg);
        let out = dir.path().join(f);
        assert!(bitvi(&["fit", "--config", &path, "--out", out.to_str().unwrap()], &[]).status.success());
        let grid = fs::read_to_string(out.join("posterior_grid.csv")).unwrap();
        assert!(grid.starts_with("x,density\n"));
        assert_eq!(grid.lines().count(), 513);
        counts.push(distinct(&grid));
    }
    assert!(counts[0] <= 16, "{counts:?}");
    assert!(counts[1] > 64, "{counts:?}");
}

#[test]
fn joint_fit_writes_two_dimensional_grids() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = quick_density(json!({"name": "two_modal_gaussian"}), "s2i1f", 100);
    cfg["posterior"]["family"] = json!("joint");
    cfg["posterior"]["axis_order"] = json!([1, 0]);
    let path = write_config(dir.path(), "joint.json", &cfg);
    let out = dir.path().join("run");
    let o = bitvi(&["fit", "--config", &path, "--out", out.to_str().unwrap(), "--threads", "1"], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let grid = fs::read_to_string(out.join("posterior_grid.csv")).unwrap();
    assert!(grid.starts_with("x,y,density\n"));
    assert_eq!(grid.lines().count(), 64 * 64 + 1);
    let RunMetrics::FitDensity(m) = metrics(&out) else { panic!() };
    assert_eq!(m.num_params, 2 * ((1 << 8) - 1));
    let posterior = fs::read_to_string(out.join("posterior.json")).unwrap();
    assert!(bitvi::Posterior::from_json(&posterior).is_ok());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let code = |o: Output| o.status.code().unwrap();

    assert_eq!(code(bitvi(&["fit", "--config", "/nonexistent/config.json", "--out", out], &[])), 4);

    let mut bad = quick_density(json!({"name": "gmm1d"}), "s2i5f", 10);
    bad["train"]["typo"] = json!(1);
    let p = write_config(dir.path(), "bad.json", &bad);
    let o = bitvi(&["fit", "--config", &p, "--out", out], &[]);
    assert!(String::from_utf8_lossy(&o.stderr).contains("typo"));
    assert_eq!(code(o), 2);

    let good = write_config(dir.path(), "good.json", &quick_density(json!({"name": "gmm1d"}), "s2i5f", 10));
    assert_eq!(code(bitvi(&["ablate-bits", "--config", &good, "--out", out], &[])), 2);
    assert_eq!(code(bitvi(&["fit", "--config", &good], &[])), 2);
    assert_eq!(code(bitvi(&["fit", "--config", &good, "--out", out], &[("BITVI_THREADS", "0")])), 2);
    assert_eq!(code(bitvi(&["fit", "--config", &good, "--out", out], &[("BITVI_THREADS", "1")])), 0);

    // A NaN feature poisons the log-likelihood on the first step.
    let mut csv = String::from("x1,y\n");
    for i in 0..8 {
        csv.push_str(&format!("{},{}\n", if i == 3 { "NaN".into() } else { i.to_string() }, i % 2));
    }
    let data = dir.path().join("nan.csv");
    fs::write(&data, csv).unwrap();
    let data = data.to_str().unwrap();
    let nan = json!({
        "experiment": "fit_bnn",
        "dataset": {"name": "csv", "train": data, "val": data, "test": data},
        "model": {"input": 1, "hidden": [2, 2]},
        "posterior": {"format": "s1i3f"},
        "train": {"mc_samples": 2, "max_steps": 5}
    });
    let p = write_config(dir.path(), "nan.json", &nan);
    let nan_out = dir.path().join("nan");
    assert_eq!(code(bitvi(&["fit", "--config", &p, "--out", nan_out.to_str().unwrap()], &[])), 3);
    assert!(nan_out.join("trace.jsonl").is_file());
    assert!(!nan_out.join("metrics.json").exists());

    let chop = write_config(dir.path(), "chop.json", &json!({"experiment": "chop", "artifact": "/nonexistent/run"}));
    assert_eq!(code(bitvi(&["chop", "--config", &chop, "--out", out], &[])), 4);
}

#[test]
fn bnn_fit_then_chop() {
    let dir = tempfile::tempdir().unwrap();
    let fit = json!({
        "experiment": "fit_bnn",
        "seed": 1,
        "dataset": {"name": "banana_clf", "n_train": 128, "n_val": 32, "n_test": 64},
        "model": {"input": 2, "hidden": [4, 4], "layernorm_affine": false},
        "posterior": {"format": "s0i7f", "smoothing": {"c": 0.001}},
        "batch_size": 32,
        "train": {"mc_samples": 8, "learning_rate": 0.01, "max_steps": 50, "quantize": true},
        "eval": {"predictive_samples": 16, "grid_resolution": 10}
    });
    let p = write_config(dir.path(), "fit.json", &fit);
    let run = dir.path().join("run");
    let o = bitvi(&["fit", "--config", &p, "--out", run.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["train.csv", "test.csv", "predictive_grid.csv", "posterior.json", "trace.jsonl"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let grid = fs::read_to_string(run.join("predictive_grid.csv")).unwrap();
    assert!(grid.starts_with("x,y,p\n"));
    assert_eq!(grid.lines().count(), 101);
    assert_eq!(fs::read_to_string(run.join("test.csv")).unwrap().lines().count(), 65);
    let RunMetrics::FitBnn(trained) = metrics(&run) else { panic!() };

    let chop = json!({
        "experiment": "chop",
        "seed": 1,
        "artifact": run,
        "precisions": [8, 6, 4, 2],
        "eval": {"predictive_samples": 16, "grid_resolution": 10}
    });
    let p = write_config(dir.path(), "chop.json", &chop);
    let out = dir.path().join("chop");
    let o = bitvi(&["chop", "--config", &p, "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let RunMetrics::Chop(m) = metrics(&out) else { panic!() };
    // Chopping to the trained precision changes nothing.
    assert_eq!(m.rows[0].bits, 8);
    assert_eq!(m.rows[0].nlpd, trained.test.nlpd);
    assert_eq!(m.rows[0].accuracy, trained.test.accuracy);
    assert_eq!(m.spot_checked.len(), 10);
    assert!(m.prefix_mass_max_error < 1e-12);
    for bits in [8, 6, 4, 2] {
        assert!(out.join(format!("grid_{bits}bit.csv")).is_file());
    }
    let table = fs::read_to_string(out.join("chop_metrics.csv")).unwrap();
    assert!(table.starts_with("bits,frac_bits,nlpd,accuracy,ece\n"));
    assert_eq!(table.lines().count(), 5);

    let too_fine = write_config(dir.path(), "fine.json", &json!({"experiment": "chop", "artifact": run, "precisions": [9]}));
    assert_eq!(bitvi(&["chop", "--config", &too_fine, "--out", out.to_str().unwrap()], &[]).status.code(), Some(2));
}

#[test]
fn broad_targets_give_flat_entropy_curves() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = json!({
        "experiment": "ablate_bits",
        "sigmas": [5.0],
        "bits": [2, 4, 6],
        "train": {"mc_samples": 64, "learning_rate": 0.05, "final_learning_rate": 0.005, "max_steps": 300}
    });
    let p = write_config(dir.path(), "ablate.json", &cfg);
    let out = dir.path().join("ablate");
    let o = bitvi(&["ablate-bits", "--config", &p, "--out", out.to_str().unwrap()], &[]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let RunMetrics::AblateBits(m) = metrics(&out) else { panic!() };
    let h = &m.per_sigma[0].entropies;
    assert!(h.iter().all(|v| v.abs() < 0.01), "{h:?}");
    let csv = fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert!(csv.starts_with("sigma,bits,entropy\n"));
    assert_eq!(csv.lines().count(), 4);
    assert_eq!(plateau_onset(&m.bits, h, 1e-2), Some(2));
}
