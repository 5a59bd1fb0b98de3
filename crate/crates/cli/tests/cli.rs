use std::path::Path;
use std::process::{Command, Output};

use ecgkit::taskout::{validate_output, TaskOutput};
use ecgkit::wfdb::{encode_annotations, write_record, Annotation, AnnotationSet, EcgRecord};
use serde_json::{json, Value};
use tempfile::TempDir;

fn ecgkit(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ecgkit")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json_out(o: &Output) -> Value {
    assert!(o.status.success(), "failed: {}", stderr(o));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Two-lead 250 Hz record with values on the 1/200 mV grid, plus three beat annotations.
fn sample_record(dir: &Path, name: &str, leads: usize) {
    let signal: Vec<Vec<f64>> = (0..leads)
        .map(|l| (0..2500).map(|i| ((i * 7 + l * 13) % 400) as f64 / 200.0 - 1.0).collect())
        .collect();
    let names: Vec<String> = (0..leads).map(|i| format!("L{i}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    write_record(&EcgRecord::new(name, 250.0, &names, 200.0, signal).unwrap(), dir).unwrap();
    let beat = |sample, symbol: &str, code| Annotation {
        sample,
        symbol: symbol.into(),
        code,
        subtype: 0,
        chan: 0,
        num: 0,
        aux: None,
    };
    let set = AnnotationSet { entries: vec![beat(200, "N", 1), beat(400, "N", 1), beat(600, "V", 5)] };
    std::fs::write(dir.join(format!("{name}.atr")), encode_annotations(&set).unwrap()).unwrap();
}

fn write_json(dir: &Path, name: &str, v: &Value) -> String {
    let path = dir.join(name);
    std::fs::write(&path, serde_json::to_string(v).unwrap()).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn inspect_reports_header_and_annotations() {
    let dir = TempDir::new().unwrap();
    sample_record(dir.path(), "rec", 2);
    let rec = dir.path().join("rec");
    let table = ecgkit(&["inspect", "--record", p(&rec)]);
    assert!(table.status.success());
    let text = stdout(&table);
    assert!(text.contains("n_sig     2") && text.contains("250 Hz") && text.contains("duration  10.000 s"), "{text}");

    let v = json_out(&ecgkit(&["inspect", "--record", p(&rec), "--format", "json"]));
    assert_eq!(v["n_sig"], 2);
    assert_eq!(v["sig_len"], 2500);
    assert_eq!(v["fs"], 250.0);
    assert_eq!(v["annotations"]["total"], 3);
    assert_eq!(v["annotations"]["symbols"], json!([{"symbol": "N", "count": 2}, {"symbol": "V", "count": 1}]));
}

#[test]
fn missing_record_exits_two() {
    let dir = TempDir::new().unwrap();
    let o = ecgkit(&["inspect", "--record", p(&dir.path().join("nope"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("not found"));
}

#[test]
fn unknown_flag_is_rejected() {
    let o = ecgkit(&["synth", "--preset", "tiny-crnn", "--bogus"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn identity_preprocess_round_trips_bytes() {
    let dir = TempDir::new().unwrap();
    sample_record(dir.path(), "rec", 2);
    let cfg = write_json(dir.path(), "id.json", &json!({"stages": []}));
    let out_dir = dir.path().join("out");
    let o = ecgkit(&["preprocess", "--record", p(&dir.path().join("rec")), "--config", &cfg, "--out", p(&out_dir.join("rec"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = std::fs::read(dir.path().join("rec.dat")).unwrap();
    let b = std::fs::read(out_dir.join("rec.dat")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn preprocess_to_container_then_augment() {
    let dir = TempDir::new().unwrap();
    sample_record(dir.path(), "rec", 2);
    let cfg = write_json(
        dir.path(),
        "pre.json",
        &json!({"stages": [{"type": "bandpass_butter", "low": 0.5, "high": 45.0, "order": 2}, {"type": "normalize", "kind": "zscore"}]}),
    );
    let batch = dir.path().join("b.ecgw");
    let o = ecgkit(&["preprocess", "--record", p(&dir.path().join("rec")), "--config", &cfg, "--out", p(&batch), "--format", "json"]);
    let v = json_out(&o);
    assert_eq!(v["timings"].as_array().unwrap().len(), 2);
    assert_eq!(v["sig_len"], 2500);

    let aug = write_json(
        dir.path(),
        "aug.json",
        &json!({"stages": [{"type": "gaussian_noise", "prob": 1.0, "sigma_rel": 0.1}, {"type": "random_flip", "prob": 0.5}]}),
    );
    let run = |seed: &str, out: &str| {
        let o = ecgkit(&["augment", "--batch", p(&batch), "--config", &aug, "--seed", seed, "--out", p(&dir.path().join(out)), "-q"]);
        assert!(o.status.success(), "{}", stderr(&o));
        std::fs::read(dir.path().join(out)).unwrap()
    };
    let (a1, a2, a3) = (run("7", "a1.ecgw"), run("7", "a2.ecgw"), run("8", "a3.ecgw"));
    assert_eq!(a1, a2);
    assert_ne!(a1, a3);

    let id = write_json(dir.path(), "id.json", &json!({"stages": []}));
    let o = ecgkit(&["augment", "--batch", p(&batch), "--config", &id, "--seed", "1", "--out", p(&dir.path().join("id.ecgw"))]);
    assert!(o.status.success());
    assert_eq!(std::fs::read(&batch).unwrap(), std::fs::read(dir.path().join("id.ecgw")).unwrap());

    let o = ecgkit(&["augment", "--batch", p(&batch), "--config", &aug, "--out", p(&dir.path().join("x.ecgw"))]);
    assert_eq!(o.status.code(), Some(2), "augment without --seed");
}

#[test]
fn malformed_config_names_the_stage() {
    let dir = TempDir::new().unwrap();
    sample_record(dir.path(), "rec", 1);
    let rec = dir.path().join("rec");
    let unknown = write_json(dir.path(), "u.json", &json!({"stages": [{"type": "detrend_median"}, {"type": "wavelet"}]}));
    let o = ecgkit(&["preprocess", "--record", p(&rec), "--config", &unknown, "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stage 1"), "{}", stderr(&o));

    let invalid = write_json(dir.path(), "i.json", &json!({"stages": [{"type": "bandpass_butter", "low": 30.0, "high": 5.0, "order": 2}]}));
    let o = ecgkit(&["preprocess", "--record", p(&rec), "--config", &invalid, "--out", p(&dir.path().join("o"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stage 0"), "{}", stderr(&o));

    let aug = write_json(dir.path(), "a.json", &json!({"stages": [{"type": "mixup"}, {"type": "gaussian_noise", "prob": 2.0, "sigma_rel": 0.1}]}));
    let batch = dir.path().join("b.ecgw");
    std::fs::write(&batch, b"unused").unwrap();
    let o = ecgkit(&["augment", "--batch", p(&batch), "--config", &aug, "--seed", "1", "--out", p(&dir.path().join("o.ecgw"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stage 1"), "{}", stderr(&o));
}

#[test]
fn tiny_crnn_matches_hand_count() {
    // stem conv 12*16*7 = 1344, bn 32 + 32 running
    // block 16->16 k3: 768 + 768 conv, 2 bn of 32 + 32 running
    // se 16/4: 2*16*4 + 4 + 16 = 148
    // block 16->32 k3 s2: 1536 + 3072 conv, 1x1 shortcut 512, 3 bn of 64 + 64 running
    // se 32/4: 2*32*8 + 8 + 32 = 552
    // bilstm 32->16: 2 * 4 * (16*32 + 16*16 + 32) = 6400
    // linear 32->9: 297
    let v = json_out(&ecgkit(&["synth", "--preset", "tiny-crnn", "--format", "json"]));
    let trainable = 1344 + 32 + (768 + 768 + 64) + 148 + (1536 + 3072 + 512 + 192) + 552 + 6400 + 297;
    let running = 32 + 64 + 192;
    assert_eq!(trainable, 15685);
    assert_eq!(v["totals"]["trainable"], trainable);
    assert_eq!(v["totals"]["non_trainable"], running);
    assert_eq!(v["totals"]["params"], trainable + running);
    let out = v["layers"].as_array().unwrap().last().unwrap();
    assert_eq!((out["out_channels"].clone(), out["out_len"].clone()), (json!(9), json!(1)));
}

#[test]
fn every_preset_synthesizes() {
    for preset in ["tiny-crnn", "tiny-unet", "tiny-qrs-cnn", "tiny-rr-lstm"] {
        let o = ecgkit(&["synth", "--preset", preset]);
        assert!(o.status.success(), "{preset}: {}", stderr(&o));
        assert!(stdout(&o).contains("total params"));
    }
    assert_eq!(ecgkit(&["synth", "--preset", "huge"]).status.code(), Some(2));
}

#[test]
fn synth_reports_symbolic_lengths_without_input_len() {
    let dir = TempDir::new().unwrap();
    let cfg = write_json(
        dir.path(),
        "a.json",
        &json!({"name": "a", "fs": 250, "in_channels": 1, "layers": [
            {"type": "conv1d", "in_ch": 1, "out_ch": 4, "kernel": 5, "padding": "valid"},
            {"type": "max_pool", "kernel": 2}
        ]}),
    );
    let v = json_out(&ecgkit(&["synth", "--config", &cfg, "--format", "json"]));
    assert!(v["layers"][1]["out_len"].is_string());
    let v = json_out(&ecgkit(&["synth", "--config", &cfg, "--input-len", "100", "--format", "json"]));
    assert_eq!(v["layers"][1]["out_len"], 48);
    let o = ecgkit(&["synth", "--config", &cfg, "--input-len", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn infer_on_record_and_batch() {
    let dir = TempDir::new().unwrap();
    sample_record(dir.path(), "rec", 1);
    let rec = dir.path().join("rec");
    let w = dir.path().join("w.ecgw");
    assert_eq!(ecgkit(&["synth", "--preset", "tiny-qrs-cnn", "--weights-out", p(&w)]).status.code(), Some(2), "needs seed");
    let o = ecgkit(&["synth", "--preset", "tiny-qrs-cnn", "--weights-out", p(&w), "--seed", "3", "-q"]);
    assert!(o.status.success(), "{}", stderr(&o));

    let run = || ecgkit(&["infer", "--preset", "tiny-qrs-cnn", "--weights", p(&w), "--record", p(&rec), "--classes", "bg,qrs"]);
    let (a, b) = (run(), run());
    assert!(a.status.success(), "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let out: TaskOutput = serde_json::from_slice(&a.stdout).unwrap();
    validate_output(&out).unwrap();
    let TaskOutput::Segmentation(seg) = out else { panic!("expected segmentation") };
    assert_eq!(seg.mask.unwrap()[0].len(), 2500);

    // batch input from preprocess gives the same answer for an identity config
    let id = write_json(dir.path(), "id.json", &json!({"stages": []}));
    let batch = dir.path().join("b.ecgw");
    assert!(ecgkit(&["preprocess", "--record", p(&rec), "--config", &id, "--out", p(&batch), "-q"]).status.success());
    let c = ecgkit(&["infer", "--preset", "tiny-qrs-cnn", "--weights", p(&w), "--batch", p(&batch), "--classes", "bg,qrs"]);
    assert_eq!(a.stdout, c.stdout);
}

#[test]
fn infer_mismatches_exit_three() {
    let dir = TempDir::new().unwrap();
    sample_record(dir.path(), "rec2", 2);
    let w = dir.path().join("w.ecgw");
    assert!(ecgkit(&["synth", "--preset", "tiny-qrs-cnn", "--weights-out", p(&w), "--seed", "1", "-q"]).status.success());
    let o = ecgkit(&["infer", "--preset", "tiny-qrs-cnn", "--weights", p(&w), "--record", p(&dir.path().join("rec2"))]);
    assert_eq!(o.status.code(), Some(3), "two leads into a one-lead model: {}", stderr(&o));

    let w2 = dir.path().join("w2.ecgw");
    assert!(ecgkit(&["synth", "--preset", "tiny-unet", "--weights-out", p(&w2), "--seed", "1", "-q"]).status.success());
    sample_record(dir.path(), "rec1", 1);
    let o = ecgkit(&["infer", "--preset", "tiny-qrs-cnn", "--weights", p(&w2), "--record", p(&dir.path().join("rec1"))]);
    assert_eq!(o.status.code(), Some(3), "weights of another model: {}", stderr(&o));

    let o = ecgkit(&["infer", "--preset", "tiny-qrs-cnn", "--weights", p(&dir.path().join("none.ecgw")), "--record", p(&dir.path().join("rec1"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn infer_classification_output() {
    let dir = TempDir::new().unwrap();
    let cfg = write_json(
        dir.path(),
        "cls.json",
        &json!({"name": "cls", "fs": 250, "in_channels": 1, "family": {
            "pattern": "crnn", "stem": {"out_ch": 4, "kernel": 5, "stride": 2},
            "stages": [{"blocks": 1, "ch": 4, "kernel": 3}],
            "head": {"num_classes": 3, "activation": "sigmoid"}
        }}),
    );
    sample_record(dir.path(), "rec", 1);
    let w = dir.path().join("w.ecgw");
    assert!(ecgkit(&["synth", "--config", &cfg, "--weights-out", p(&w), "--seed", "5", "-q"]).status.success());
    let out = dir.path().join("out.json");
    let o = ecgkit(&["infer", "--config", &cfg, "--weights", p(&w), "--record", p(&dir.path().join("rec")), "--out", p(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let parsed: TaskOutput = serde_json::from_str(&std::fs::read_to_string(&out).unwrap()).unwrap();
    validate_output(&parsed).unwrap();
    let TaskOutput::Classification(c) = parsed else { panic!("expected classification") };
    let (prob, pred) = (c.prob.unwrap(), c.pred.unwrap());
    assert_eq!(prob.len(), 1);
    for (p, b) in prob[0].iter().zip(&pred[0]) {
        assert_eq!(*b, u8::from(*p >= 0.5));
    }

    // the output scores against itself through eval
    let v = json_out(&ecgkit(&["eval", "--task", "cls", "--pred", p(&out), "--truth", p(&out), "--format", "json"]));
    assert_eq!(v["accuracy"], 1.0);
}

#[test]
fn eval_fixtures() {
    let dir = TempDir::new().unwrap();
    let peaks = write_json(
        dir.path(),
        "peaks.json",
        &json!({"task": "rpeaks", "peaks": [[300, 500, 700], [260, 900]], "fs": 500.0, "record_len": [1000, 1200]}),
    );
    let v = json_out(&ecgkit(&["eval", "--task", "qrs", "--pred", &peaks, "--truth", &peaks, "--format", "json"]));
    assert_eq!(v["score"], 1.0);

    let shifted = write_json(dir.path(), "shift.json", &json!({"peaks": [[300, 500, 700], [260, 960]]}));
    let v = json_out(&ecgkit(&["eval", "--task", "qrs", "--pred", &shifted, "--truth", &peaks, "--format", "json"]));
    assert_eq!(v["score"], 0.5);

    let csv = dir.path().join("w.csv");
    std::fs::write(&csv, "x,A,B,N\nA,1,0.5,0\nB,0.5,1,0\nN,0,0,1\n").unwrap();
    let labels = write_json(dir.path(), "labels.json", &json!([["A"], ["B", "A"], ["N"]]));
    let v = json_out(&ecgkit(&[
        "eval", "--task", "challenge", "--pred", &labels, "--truth", &labels, "--weights-csv", p(&csv), "--normal-class", "N", "--format", "json",
    ]));
    assert_eq!(v["score"], 1.0);
    let o = ecgkit(&["eval", "--task", "challenge", "--pred", &labels, "--truth", &labels]);
    assert_eq!(o.status.code(), Some(2), "missing weights csv");

    let waves = write_json(
        dir.path(),
        "waves.json",
        &json!({"p": {"onsets": [10], "offsets": [40]}, "qrs": {"onsets": [60], "offsets": [90]}, "t": {"onsets": [120], "offsets": [200]}}),
    );
    let o = ecgkit(&["eval", "--task", "delin", "--pred", &waves, "--truth", &waves, "--fs", "500"]);
    assert_eq!(o.status.code(), Some(2), "delin needs --tol-s");
    let v = json_out(&ecgkit(&["eval", "--task", "delin", "--pred", &waves, "--truth", &waves, "--fs", "500", "--tol-s", "0.15", "--format", "json"]));
    assert_eq!(v["macro_f1"], 1.0);

    let garbage = write_json(dir.path(), "g.json", &json!({"task": "rpeaks", "peaks": "no"}));
    let o = ecgkit(&["eval", "--task", "qrs", "--pred", &garbage, "--truth", &peaks]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn selftest_subset_runs() {
    let o = ecgkit(&["selftest", "--only", "3,8"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.lines().filter(|l| l.starts_with("[PASS]")).count(), 2, "{text}");
    assert_eq!(ecgkit(&["selftest", "--only", "11"]).status.code(), Some(2));
}

#[test]
fn shipped_configs_run() {
    let dir = TempDir::new().unwrap();
    sample_record(dir.path(), "rec", 2);
    let configs = concat!(env!("CARGO_MANIFEST_DIR"), "/configs");
    let batch = dir.path().join("b.ecgw");
    let pre = format!("{configs}/preprocess-bandpass-zscore.json");
    let o = ecgkit(&["preprocess", "--record", p(&dir.path().join("rec")), "--config", &pre, "--out", p(&batch), "-q"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let aug = format!("{configs}/augment-classification.json");
    let o = ecgkit(&["augment", "--batch", p(&batch), "--config", &aug, "--seed", "2", "--out", p(&dir.path().join("a.ecgw")), "-q"]);
    assert!(o.status.success(), "{}", stderr(&o));
}
