use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use spectro_core::config::RunConfig;

fn spectro(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spectro"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env_remove("SPECTRO_CHECKPOINT_DIR")
        .output()
        .expect("binary runs")
}

fn summary(o: &Output) -> Value {
    let text = String::from_utf8_lossy(&o.stdout);
    let line = text.lines().last().unwrap_or_else(|| panic!("no stdout; stderr: {}", String::from_utf8_lossy(&o.stderr)));
    serde_json::from_str(line).expect("summary line is JSON")
}

fn ok(out: &Path, args: &[&str]) -> Value {
    let o = spectro(out, args);
    assert!(
        o.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    let v = summary(&o);
    assert_eq!(v["status"], "ok");
    v
}

/// Data, an untrained VQ-VAE, the store and two untrained priors.
fn pipeline(out: &Path) {
    ok(out, &["synth-data", "--n-notes", "12"]);
    let v = ok(out, &["train-vqvae", "--steps", "0"]);
    assert_eq!(v["result"]["steps"], 0);
    assert!(v["result"].get("loss").is_none());
    assert!(out.join("checkpoints/vqvae.spnn").exists());
    let v = ok(out, &["extract-codemaps"]);
    assert_eq!(v["result"]["records"], 12);
    ok(out, &["train-prior", "--level", "top", "--steps", "0"]);
    ok(out, &["train-prior", "--level", "bottom", "--steps", "0"]);
}

#[test]
fn help_documents_exit_codes() {
    let o = Command::new(env!("CARGO_BIN_EXE_spectro")).arg("--help").output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    for needle in ["Exit codes", "3  invalid configuration", "metrics.jsonl", "train-prior", "serve"] {
        assert!(text.contains(needle), "help lacks {needle}");
    }
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(spectro(dir.path(), &["--bogus"]).status.code(), Some(2));
    assert_eq!(spectro(dir.path(), &["train-prior", "--level", "middle"]).status.code(), Some(2));
    assert_eq!(spectro(dir.path(), &["sample", "--pitch", "60"]).status.code(), Some(2));
}

#[test]
fn config_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let mut cfg: Value = serde_json::from_str(&RunConfig::toy().to_json()).unwrap();
    cfg["surprise"] = Value::Bool(true);
    std::fs::write(&bad, cfg.to_string()).unwrap();
    let o = spectro(dir.path(), &["--config", bad.to_str().unwrap(), "synth-data"]);
    assert_eq!(o.status.code(), Some(3));
    assert_eq!(summary(&o)["exit_code"], 3);

    let o = spectro(dir.path(), &["--profile", "huge", "synth-data"]);
    assert_eq!(o.status.code(), Some(3));

    let mut cfg: Value = serde_json::from_str(&RunConfig::toy().to_json()).unwrap();
    cfg["dsp"]["n_fft"] = 500.into();
    std::fs::write(&bad, cfg.to_string()).unwrap();
    let o = spectro(dir.path(), &["--config", bad.to_str().unwrap(), "synth-data"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn missing_inputs_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(spectro(d, &["--config", "/no/such.json", "synth-data"]).status.code(), Some(4));
    assert_eq!(spectro(d, &["train-vqvae", "--steps", "0"]).status.code(), Some(4));
    assert_eq!(spectro(d, &["extract-codemaps"]).status.code(), Some(4));
    assert_eq!(spectro(d, &["train-prior", "--level", "top", "--steps", "0"]).status.code(), Some(4));
    let o = spectro(d, &["sample", "--pitch", "60", "--instrument", "0"]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("vqvae"));
}

#[test]
fn corrupt_checkpoint_exits_5() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth-data", "--n-notes", "4"]);
    ok(d, &["train-vqvae", "--steps", "0"]);
    let ckpt = d.join("checkpoints/vqvae.spnn");
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&ckpt, bytes).unwrap();
    assert_eq!(spectro(d, &["extract-codemaps"]).status.code(), Some(5));

    std::fs::create_dir_all(d.join("stores")).unwrap();
    std::fs::write(d.join("stores/codemaps.spin"), b"SPIN but not really").unwrap();
    assert_eq!(spectro(d, &["train-prior", "--level", "top"]).status.code(), Some(5));
}

#[test]
fn effective_config_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let v = ok(dir.path(), &["--seed", "99", "synth-data", "--n-notes", "3"]);
    let text = v["config"].to_string();
    let cfg = RunConfig::from_json(&text).unwrap();
    let mut expected = RunConfig::toy();
    expected.seed = 99;
    expected.data.n_notes = 3;
    assert_eq!(cfg, expected);

    // Feeding the printed config back reproduces it exactly.
    let path = dir.path().join("effective.json");
    std::fs::write(&path, &text).unwrap();
    let again = ok(dir.path(), &["--config", path.to_str().unwrap(), "synth-data"]);
    assert_eq!(RunConfig::from_json(&again["config"].to_string()).unwrap(), cfg);
}

#[test]
fn synth_data_is_nsynth_layout() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth-data", "--n-notes", "5"]);
    let meta: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("data/examples.json")).unwrap()).unwrap();
    let meta = meta.as_object().unwrap();
    assert_eq!(meta.len(), 5);
    for (name, entry) in meta {
        assert!(dir.path().join(format!("data/audio/{name}.wav")).exists());
        let pitch = entry["pitch"].as_u64().unwrap();
        assert!((48..=72).contains(&pitch));
        assert!(entry["instrument_family_str"].is_string());
    }
}

#[test]
fn full_pipeline_sample_inpaint_render() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    pipeline(d);

    let a = d.join("a.wav");
    let b = d.join("b.wav");
    let c = d.join("c.wav");
    let args = |p: &Path| {
        vec![
            "sample".to_string(),
            "--pitch".into(),
            "60".into(),
            "--instrument".into(),
            "brassy".into(),
            "--output".into(),
            p.to_str().unwrap().to_string(),
        ]
    };
    let run = |extra: &[&str], p: &Path| {
        let mut v: Vec<String> = extra.iter().map(|s| s.to_string()).collect();
        v.extend(args(p));
        let refs: Vec<&str> = v.iter().map(String::as_str).collect();
        ok(d, &refs)
    };
    let s = run(&["--seed", "5"], &a);
    run(&["--seed", "5"], &b);
    run(&["--seed", "6"], &c);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(
        std::fs::read(a.with_extension("json")).unwrap(),
        std::fs::read(b.with_extension("json")).unwrap()
    );
    assert_ne!(
        std::fs::read(a.with_extension("json")).unwrap(),
        std::fs::read(c.with_extension("json")).unwrap()
    );
    let dsp = RunConfig::toy().dsp;
    let expected = dsp.note_samples() as f64 / dsp.sample_rate as f64;
    let hop = dsp.hop as f64 / dsp.sample_rate as f64;
    assert!((s["result"]["duration_secs"].as_f64().unwrap() - expected).abs() <= hop);

    let codes: Value = serde_json::from_str(&std::fs::read_to_string(a.with_extension("json")).unwrap()).unwrap();
    assert_eq!(codes["instrument"], 2);
    let top = codes["top"].as_array().unwrap();
    assert_eq!((top.len(), top[0].as_array().unwrap().len()), (8, 2));

    let inp = d.join("inp.wav");
    ok(
        d,
        &[
            "inpaint", "--codes", a.with_extension("json").to_str().unwrap(), "--level", "top", "--freq-start", "0",
            "--freq-end", "4", "--time-start", "0", "--time-end", "2", "--pitch", "60", "--instrument", "2",
            "--output", inp.to_str().unwrap(),
        ],
    );
    let new: Value = serde_json::from_str(&std::fs::read_to_string(inp.with_extension("json")).unwrap()).unwrap();
    assert_eq!(new["top"].as_array().unwrap()[4..], top[4..]);

    let r = d.join("r.wav");
    let v = ok(d, &["render", "--codes", inp.with_extension("json").to_str().unwrap(), "--output", r.to_str().unwrap()]);
    assert_eq!(v["result"]["pitch"], 60);
    assert_eq!(std::fs::read(&r).unwrap(), std::fs::read(&inp).unwrap());

    // Bad region and bad labels are request errors.
    let o = spectro(
        d,
        &[
            "inpaint", "--codes", a.with_extension("json").to_str().unwrap(), "--level", "top", "--freq-start", "3",
            "--freq-end", "3", "--time-start", "0", "--time-end", "2", "--pitch", "60", "--instrument", "0",
            "--output", inp.to_str().unwrap(),
        ],
    );
    assert_eq!(o.status.code(), Some(7));
    let o = spectro(d, &["sample", "--pitch", "60", "--instrument", "kazoo"]);
    assert_eq!(o.status.code(), Some(7));
    let o = spectro(d, &["sample", "--pitch", "60", "--instrument", "0", "--top-p", "0"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn short_training_logs_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["synth-data", "--n-notes", "8"]);
    let v = ok(d, &["train-vqvae", "--steps", "3"]);
    assert!(v["result"]["loss"].as_f64().unwrap().is_finite());
    ok(d, &["extract-codemaps"]);
    let v = ok(d, &["train-prior", "--level", "top", "--steps", "2"]);
    assert!(v["result"]["nll"].as_f64().unwrap().is_finite());
    let lines: Vec<Value> = std::fs::read_to_string(d.join("metrics.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[0]["stage"], "vqvae");
    assert_eq!(lines[4]["stage"], "prior_top");
    assert_eq!(lines[4]["step"], 2);
}
