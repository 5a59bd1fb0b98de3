use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ecgkit::archsynth::{infer_shapes, ArchConfig};
use ecgkit::augment::{AugmentConfig, AugmentStage};
use ecgkit::inferengine::{init_weights, load_weights, run_graph, save_weights, InferError, Tensor};
use ecgkit::metrics::{challenge_score, delineation_metrics, prf1, qrs_score, ScoreWeights, Waves};
use ecgkit::selftest;
use ecgkit::sigproc::{PreprocConfig, PreprocManager, PreprocStage};
use ecgkit::taskout::{ClassificationOutput, RPeaksOutput, SegmentationOutput, TaskOutput};
use ecgkit::wfdb::{parse_annotations, read_record, standard_symbol_table, write_record, AnnotationMode, EcgRecord};
use ndarray::Array2;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::batchio::{self, BatchFile};
use crate::{
    data_err, user_err, Classify, Cli, CmdResult, Command, EvalTask, Failure, Format, Global, ModelArgs,
    EXIT_FAILED_CHECKS,
};

const PRESETS: [(&str, &str); 4] = [
    ("tiny-crnn", include_str!("../presets/tiny-crnn.json")),
    ("tiny-unet", include_str!("../presets/tiny-unet.json")),
    ("tiny-qrs-cnn", include_str!("../presets/tiny-qrs-cnn.json")),
    ("tiny-rr-lstm", include_str!("../presets/tiny-rr-lstm.json")),
];

pub fn run(cli: Cli) -> CmdResult<()> {
    let g = &cli.global;
    match cli.command {
        Command::Inspect { record, ann } => inspect(g, &record, ann.as_deref()),
        Command::Preprocess { record, config, out, gain } => preprocess(g, &record, &config, &out, gain),
        Command::Augment { batch, config, out } => augment(g, &batch, &config, &out),
        Command::Synth { model, input_len, weights_out } => synth(g, &model, input_len, weights_out.as_deref()),
        Command::Infer { model, weights, record, batch, classes, threshold, out } => {
            infer(g, &model, &weights, record.as_deref(), batch.as_deref(), classes, threshold, out.as_deref())
        }
        Command::Eval { task, pred, truth, weights_csv, normal_class, tol_s, edge_s, fs, record_len } => {
            let opts = EvalOpts { weights_csv, normal_class, tol_s, edge_s, fs, record_len };
            eval(g, task, &pred, &truth, &opts)
        }
        Command::Selftest { only } => run_selftest(g, only),
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) ends the process quietly.
fn out(text: &str) -> CmdResult<()> {
    let mut stdout = std::io::stdout().lock();
    match stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()) {
        Err(e) if e.kind() == std::io::ErrorKind::BrokenPipe => std::process::exit(0),
        r => r.data(),
    }
}

fn emit<T: Serialize>(g: &Global, value: &T, table: impl FnOnce() -> String) -> CmdResult<()> {
    match g.format {
        Format::Json => out(&(serde_json::to_string_pretty(value).data()? + "\n")),
        Format::Table => out(&table()),
    }
}

fn note(g: &Global, msg: impl std::fmt::Display) {
    if !g.quiet {
        eprintln!("{msg}");
    }
}

fn read_text(path: &Path) -> CmdResult<String> {
    std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display())).user()
}

fn read_bytes(path: &Path) -> CmdResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display())).user()
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CmdResult<()> {
    std::fs::write(path, bytes).map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display())).user()
}

fn require_seed(g: &Global, why: &str) -> CmdResult<u64> {
    match g.seed {
        Some(s) => Ok(s),
        None => user_err(format!("--seed is required {why}")),
    }
}

/// Splits DIR/NAME (a trailing `.hea` is accepted) and checks the header exists.
fn record_location(record: &Path) -> CmdResult<(PathBuf, String)> {
    let name = match record.file_name().and_then(|n| n.to_str()) {
        Some(n) => n.strip_suffix(".hea").unwrap_or(n).to_string(),
        None => return user_err(format!("{} does not name a record", record.display())),
    };
    let dir = match record.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    if !dir.join(format!("{name}.hea")).is_file() {
        return user_err(format!("record {} not found (no {name}.hea in {})", record.display(), dir.display()));
    }
    Ok((dir, name))
}

fn load_record(record: &Path) -> CmdResult<EcgRecord> {
    let (dir, name) = record_location(record)?;
    read_record(&dir, &name).data()
}

/// Parses `{"stages": [...]}`-style configs stage by stage so errors name the stage index.
fn parse_staged<C: DeserializeOwned, S: DeserializeOwned>(text: &str) -> CmdResult<C> {
    let value: Value = serde_json::from_str(text).map_err(|e| anyhow::anyhow!("config is not valid JSON: {e}")).user()?;
    if let Some(stages) = value.get("stages").and_then(Value::as_array) {
        for (i, s) in stages.iter().enumerate() {
            if let Err(e) = serde_json::from_value::<S>(s.clone()) {
                return user_err(format!("stage {i}: {e}"));
            }
        }
    }
    serde_json::from_value(value).map_err(|e| anyhow::anyhow!("config: {e}")).user()
}

// ---------------------------------------------------------------- inspect

#[derive(Serialize)]
struct LeadSummary {
    name: String,
    format: String,
    gain: f64,
    baseline: i32,
    units: String,
}

#[derive(Serialize)]
struct AnnotationSummary {
    extension: String,
    total: usize,
    symbols: Vec<SymbolCount>,
}

#[derive(Serialize)]
struct SymbolCount {
    symbol: String,
    count: usize,
}

#[derive(Serialize)]
struct RecordSummary {
    name: String,
    fs: f64,
    n_sig: usize,
    sig_len: usize,
    duration_s: f64,
    leads: Vec<LeadSummary>,
    annotations: Option<AnnotationSummary>,
}

fn inspect(g: &Global, record: &Path, ann: Option<&str>) -> CmdResult<()> {
    let (dir, name) = record_location(record)?;
    let rec = read_record(&dir, &name).data()?;
    let h = &rec.header;
    let ext = match ann {
        Some(e) => Some(e.to_string()),
        None => dir.join(format!("{name}.atr")).is_file().then(|| "atr".to_string()),
    };
    let annotations = match ext {
        Some(ext) => {
            let raw = read_bytes(&dir.join(format!("{name}.{ext}")))?;
            let set = parse_annotations(&raw, &standard_symbol_table(), AnnotationMode::Lenient).data()?;
            Some(AnnotationSummary { extension: ext, total: set.len(), symbols: set.symbol_counts().into_iter().map(|(symbol, count)| SymbolCount { symbol, count }).collect() })
        }
        None => None,
    };
    let summary = RecordSummary {
        name: h.record_name.clone(),
        fs: h.fs,
        n_sig: h.n_sig,
        sig_len: h.sig_len,
        duration_s: h.sig_len as f64 / h.fs,
        leads: h
            .leads
            .iter()
            .map(|l| LeadSummary {
                name: l.lead_name.clone(),
                format: format!("{:?}", l.fmt),
                gain: l.gain,
                baseline: l.baseline,
                units: l.units.clone(),
            })
            .collect(),
        annotations,
    };
    emit(g, &summary, || {
        let mut s = format!(
            "record    {}\nfs        {} Hz\nn_sig     {}\nsig_len   {}\nduration  {:.3} s\n",
            summary.name, summary.fs, summary.n_sig, summary.sig_len, summary.duration_s
        );
        for (i, l) in summary.leads.iter().enumerate() {
            s.push_str(&format!("lead {i}    {} ({}, gain {}, baseline {}, {})\n", l.name, l.format, l.gain, l.baseline, l.units));
        }
        if let Some(a) = &summary.annotations {
            s.push_str(&format!("annotations ({}) {}\n", a.extension, a.total));
            for c in &a.symbols {
                s.push_str(&format!("  {:<4} {}\n", c.symbol, c.count));
            }
        }
        s
    })
}

// ---------------------------------------------------------------- preprocess

#[derive(Serialize)]
struct StageTiming {
    stage: String,
    ms: f64,
}

#[derive(Serialize)]
struct PreprocessSummary {
    out: String,
    fs: f64,
    n_sig: usize,
    sig_len: usize,
    timings: Vec<StageTiming>,
}

fn preprocess(g: &Global, record: &Path, config: &Path, out: &Path, gain: Option<f64>) -> CmdResult<()> {
    let cfg: PreprocConfig = parse_staged::<PreprocConfig, PreprocStage>(&read_text(config)?)?;
    cfg.validate().user()?;
    let seed = if cfg.random_order { Some(require_seed(g, "when random_order is set")?) } else { g.seed };
    let rec = load_record(record)?;
    let fs = rec.header.fs;
    let (l, t) = (rec.n_leads(), rec.len());
    let sig = Array2::from_shape_vec((l, t), rec.signal.iter().flatten().copied().collect()).data()?;
    let manager = PreprocManager::from_config(&cfg).user()?;
    let mut timings = Vec::new();
    let (clean, fs_out) = manager
        .run_with(sig, fs, seed, |name, d| timings.push(StageTiming { stage: name.to_string(), ms: d.as_secs_f64() * 1e3 }))
        .data()?;
    for tm in &timings {
        note(g, format!("{:<20} {:>9.3} ms", tm.stage, tm.ms));
    }
    let lead_names: Vec<&str> = rec.header.leads.iter().map(|l| l.lead_name.as_str()).collect();
    if out.extension().is_some_and(|e| e == "ecgw") {
        let meta = json!({ "record": rec.header.record_name, "leads": lead_names });
        let file = batchio::from_signal(clean.clone(), fs_out, meta).data()?;
        write_bytes(out, &batchio::encode(&file).data()?)?;
    } else {
        let name = out.file_name().and_then(|n| n.to_str()).map(str::to_string);
        let Some(name) = name else { return user_err(format!("{} does not name a record", out.display())) };
        let dir = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir).user()?;
        let gain = gain.unwrap_or_else(|| rec.header.leads.first().map_or(200.0, |l| l.gain));
        let rows: Vec<Vec<f64>> = clean.rows().into_iter().map(|r| r.to_vec()).collect();
        let out_rec = EcgRecord::new(name, fs_out, &lead_names, gain, rows).data()?;
        write_record(&out_rec, dir).data()?;
    }
    let summary = PreprocessSummary { out: out.display().to_string(), fs: fs_out, n_sig: clean.nrows(), sig_len: clean.ncols(), timings };
    emit(g, &summary, || format!("wrote {} ({} leads x {} samples at {} Hz)\n", summary.out, summary.n_sig, summary.sig_len, summary.fs))
}

// ---------------------------------------------------------------- augment

fn augment(g: &Global, batch: &Path, config: &Path, out: &Path) -> CmdResult<()> {
    let cfg: AugmentConfig = parse_staged::<AugmentConfig, AugmentStage>(&read_text(config)?)?;
    cfg.validate().user()?;
    let seed = require_seed(g, "for augment")?;
    let file = batchio::decode(&read_bytes(batch)?).data()?;
    let start = Instant::now();
    let augmented = ecgkit::augment::run_augment(&file.batch, &cfg, seed).data()?;
    note(g, format!("augmented {} samples through {} stages in {:.3} ms", augmented.batch_size(), cfg.stages.len(), start.elapsed().as_secs_f64() * 1e3));
    let out_file = BatchFile { batch: augmented, has_labels: file.has_labels, meta: file.meta };
    write_bytes(out, &batchio::encode(&out_file).data()?)?;
    let b = &out_file.batch;
    let summary = json!({ "out": out.display().to_string(), "batch": b.batch_size(), "leads": b.n_leads(), "len": b.len(), "seed": seed });
    emit(g, &summary, || format!("wrote {} ({} x {} x {})\n", out.display(), b.batch_size(), b.n_leads(), b.len()))
}

// ---------------------------------------------------------------- synth

fn load_model(model: &ModelArgs) -> CmdResult<ArchConfig> {
    let text = match (&model.config, &model.preset) {
        (Some(path), _) => read_text(path)?,
        (None, Some(name)) => match PRESETS.iter().find(|(n, _)| n == name) {
            Some((_, text)) => text.to_string(),
            None => {
                let names: Vec<&str> = PRESETS.iter().map(|(n, _)| *n).collect();
                return user_err(format!("unknown preset {name:?}; available: {}", names.join(", ")));
            }
        },
        (None, None) => return user_err("one of --config and --preset is required"),
    };
    let cfg = ArchConfig::from_json(&text).user()?;
    cfg.expanded_layers().user()?;
    Ok(cfg)
}

fn synth(g: &Global, model: &ModelArgs, input_len: Option<usize>, weights_out: Option<&Path>) -> CmdResult<()> {
    let cfg = load_model(model)?;
    let report = infer_shapes(&cfg, input_len).user()?;
    if let Some(path) = weights_out {
        let seed = require_seed(g, "to initialize weights")?;
        let w = init_weights(&cfg, seed).user()?;
        save_weights(&w, path).user()?;
        note(g, format!("wrote {} weights to {}", w.element_count(), path.display()));
    }
    emit(g, &report, || report.to_table())
}

// ---------------------------------------------------------------- infer

fn infer_err(e: InferError) -> Failure {
    match e {
        InferError::Io(_) => Failure { code: crate::EXIT_USER, error: e.into() },
        _ => Failure { code: crate::EXIT_DATA, error: e.into() },
    }
}

#[allow(clippy::too_many_arguments)]
fn infer(
    g: &Global,
    model: &ModelArgs,
    weights: &Path,
    record: Option<&Path>,
    batch: Option<&Path>,
    classes: Option<Vec<String>>,
    threshold: f64,
    out_path: Option<&Path>,
) -> CmdResult<()> {
    let cfg = load_model(model)?;
    if !weights.is_file() {
        return user_err(format!("weights file {} not found", weights.display()));
    }
    let bundle = load_weights(weights).map_err(infer_err)?;
    let (signals, fs) = match (record, batch) {
        (Some(r), _) => {
            let rec = load_record(r)?;
            let (l, t) = (rec.n_leads(), rec.len());
            let data: Vec<f32> = rec.signal.iter().flatten().map(|&v| v as f32).collect();
            (Tensor::new(vec![1, l, t], data).map_err(infer_err)?, rec.header.fs)
        }
        (None, Some(b)) => {
            let file = batchio::decode(&read_bytes(b)?).data()?;
            let s = &file.batch.signals;
            let data: Vec<f32> = s.iter().map(|&v| v as f32).collect();
            (Tensor::new(s.shape().to_vec(), data).map_err(infer_err)?, file.batch.fs)
        }
        (None, None) => return user_err("one of --record and --batch is required"),
    };
    if (fs - cfg.fs).abs() > 1e-9 * cfg.fs.abs().max(1.0) {
        return data_err(format!("input is sampled at {fs} Hz, model expects {} Hz", cfg.fs));
    }
    let start = Instant::now();
    let y = run_graph(&cfg, &bundle, &signals).map_err(infer_err)?;
    note(g, format!("forward pass {:?} -> {:?} in {:.3} ms", signals.shape(), y.shape(), start.elapsed().as_secs_f64() * 1e3));
    let k = *y.shape().last().unwrap_or(&0);
    let classes = match classes {
        Some(c) if c.len() != k => return user_err(format!("{} class names given, model has {k} outputs", c.len())),
        Some(c) => c,
        None => (0..k).map(|i| i.to_string()).collect(),
    };
    let data = y.data();
    let output = match *y.shape() {
        [b, _] => {
            let prob: Vec<Vec<f64>> = (0..b).map(|i| data[i * k..(i + 1) * k].iter().map(|&v| v as f64).collect()).collect();
            TaskOutput::Classification(ClassificationOutput::from_prob(classes, prob, vec![threshold; k]).data()?)
        }
        [b, t, _] => {
            let prob = (0..b)
                .map(|i| (0..t).map(|j| data[(i * t + j) * k..(i * t + j + 1) * k].iter().map(|&v| v as f64).collect()).collect())
                .collect();
            TaskOutput::Segmentation(SegmentationOutput::from_prob(classes, prob))
        }
        ref s => return data_err(format!("unexpected model output shape {s:?}")),
    };
    let text = serde_json::to_string_pretty(&output).data()?;
    match out_path {
        Some(p) => write_bytes(p, text.as_bytes()),
        None => out(&(text + "\n")),
    }
}

// ---------------------------------------------------------------- eval

struct EvalOpts {
    weights_csv: Option<PathBuf>,
    normal_class: String,
    tol_s: Option<f64>,
    edge_s: f64,
    fs: Option<f64>,
    record_len: Option<usize>,
}

fn read_json(path: &Path) -> CmdResult<Value> {
    serde_json::from_str(&read_text(path)?).map_err(|e| anyhow::anyhow!("{}: {e}", path.display())).data()
}

fn from_json<T: DeserializeOwned>(v: Value, path: &Path, what: &str) -> CmdResult<T> {
    serde_json::from_value(v).map_err(|e| anyhow::anyhow!("{} is not {what}: {e}", path.display())).data()
}

/// Binary label matrix from a classification TaskOutput or a bare `[[0, 1, ...], ...]`.
fn label_matrix(path: &Path) -> CmdResult<Vec<Vec<u8>>> {
    let v = read_json(path)?;
    if v.is_array() {
        return from_json(v, path, "a binary label matrix");
    }
    match from_json::<TaskOutput>(v, path, "a classification output")? {
        TaskOutput::Classification(ClassificationOutput { pred: Some(p), .. }) => Ok(p),
        _ => data_err(format!("{} holds no classification `pred`", path.display())),
    }
}

/// Label sets from a classification TaskOutput (classes + pred) or a bare `[["a", "b"], ...]`.
fn label_sets(path: &Path) -> CmdResult<Vec<Vec<String>>> {
    let v = read_json(path)?;
    if v.is_array() {
        return from_json(v, path, "a list of label sets");
    }
    match from_json::<TaskOutput>(v, path, "a classification output")? {
        TaskOutput::Classification(ClassificationOutput { classes: Some(c), pred: Some(p), .. }) => Ok(p
            .iter()
            .map(|row| row.iter().zip(&c).filter(|(&b, _)| b == 1).map(|(_, n)| n.clone()).collect())
            .collect()),
        _ => data_err(format!("{} needs `classes` and `pred`", path.display())),
    }
}

fn rpeaks(path: &Path) -> CmdResult<RPeaksOutput> {
    let v = read_json(path)?;
    if v.get("task").is_some() {
        match from_json::<TaskOutput>(v, path, "an rpeaks output")? {
            TaskOutput::Rpeaks(r) => Ok(r),
            _ => data_err(format!("{} is not an rpeaks output", path.display())),
        }
    } else {
        from_json(v, path, "an rpeaks output")
    }
}

fn eval(g: &Global, task: EvalTask, pred: &Path, truth: &Path, o: &EvalOpts) -> CmdResult<()> {
    match task {
        EvalTask::Cls => {
            let r = prf1(&label_matrix(pred)?, &label_matrix(truth)?).data()?;
            emit(g, &r, || {
                let mut s = format!("{:<8} {:>6} {:>6} {:>6} {:>9} {:>9} {:>9}\n", "class", "tp", "fp", "fn", "precision", "recall", "f1");
                for (i, c) in r.per_class.iter().enumerate() {
                    s.push_str(&format!("{i:<8} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4}\n", c.tp, c.fp, c.fn_, c.precision, c.recall, c.f1));
                }
                let m = &r.micro;
                s.push_str(&format!("{:<8} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4}\n", "micro", m.tp, m.fp, m.fn_, m.precision, m.recall, m.f1));
                s.push_str(&format!("{:<8} {:>6} {:>6} {:>6} {:>9.4} {:>9.4} {:>9.4}\n", "macro", "", "", "", r.macro_precision, r.macro_recall, r.macro_f1));
                s.push_str(&format!("subset accuracy {:.4}\n", r.accuracy));
                s
            })
        }
        EvalTask::Qrs => {
            let (p, t) = (rpeaks(pred)?, rpeaks(truth)?);
            let Some(fs) = t.fs.or(p.fs).or(o.fs) else { return user_err("sampling frequency unknown; pass --fs") };
            let truth_peaks = t.peaks.unwrap_or_default();
            let pred_peaks = p.peaks.unwrap_or_default();
            let lens = match (t.record_len, o.record_len) {
                (Some(l), _) => l,
                (None, Some(l)) => vec![l; truth_peaks.len()],
                (None, None) => return user_err("record lengths unknown; pass --record-len"),
            };
            let r = qrs_score(&pred_peaks, &truth_peaks, &lens, fs, o.tol_s.unwrap_or(0.075), o.edge_s).data()?;
            emit(g, &r, || {
                let mut s = format!("{:<8} {:>6} {:>6} {:>6} {:>6}\n", "record", "tp", "fp", "fn", "score");
                for (i, rec) in r.records.iter().enumerate() {
                    s.push_str(&format!("{i:<8} {:>6} {:>6} {:>6} {:>6}\n", rec.tp, rec.fp, rec.fn_, rec.score));
                }
                s.push_str(&format!("score {:.4}\n", r.score));
                s
            })
        }
        EvalTask::Delin => {
            let Some(tol) = o.tol_s else { return user_err("--tol-s is required for delin") };
            let Some(fs) = o.fs else { return user_err("--fs is required for delin") };
            let p: Waves = from_json(read_json(pred)?, pred, "a wave boundary set")?;
            let t: Waves = from_json(read_json(truth)?, truth, "a wave boundary set")?;
            let r = delineation_metrics(&p, &t, fs, tol).data()?;
            emit(g, &r, || {
                let mut s = format!("{:<5} {:>5} {:>5} {:>5} {:>7} {:>7} {:>7} {:>9} {:>9}\n", "wave", "tp", "fp", "fn", "se", "ppv", "f1", "mean ms", "std ms");
                for (n, w) in [("P", r.p), ("QRS", r.qrs), ("T", r.t)] {
                    s.push_str(&format!(
                        "{n:<5} {:>5} {:>5} {:>5} {:>7.4} {:>7.4} {:>7.4} {:>9.3} {:>9.3}\n",
                        w.tp, w.fp, w.fn_, w.se, w.ppv, w.f1, w.mean_error_ms, w.std_error_ms
                    ));
                }
                s.push_str(&format!("macro f1 {:.4}\n", r.macro_f1));
                s
            })
        }
        EvalTask::Challenge => {
            let Some(csv) = &o.weights_csv else { return user_err("--weights-csv is required for challenge") };
            let weights = ScoreWeights::from_csv(&read_text(csv)?, &o.normal_class).user()?;
            let r = challenge_score(&label_sets(truth)?, &label_sets(pred)?, &weights).data()?;
            emit(g, &r, || {
                format!("observed {:.6}\ncorrect  {:.6}\ninactive {:.6}\nscore    {:.6}\n", r.observed, r.correct, r.inactive, r.score)
            })
        }
    }
}

// ---------------------------------------------------------------- selftest

fn run_selftest(g: &Global, only: Option<Vec<usize>>) -> CmdResult<()> {
    let n = selftest::CHECKS.len();
    let ids = only.unwrap_or_else(|| (1..=n).collect());
    if let Some(bad) = ids.iter().find(|&&i| i == 0 || i > n) {
        return user_err(format!("no check {bad}; checks are numbered 1-{n}"));
    }
    let mut outcomes = Vec::new();
    for id in ids {
        let o = selftest::run_check(id);
        if g.format == Format::Table {
            out(&(o.line() + "\n"))?;
        }
        outcomes.push(o);
    }
    if g.format == Format::Json {
        out(&(serde_json::to_string_pretty(&outcomes).data()? + "\n"))?;
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(Failure { code: EXIT_FAILED_CHECKS, error: anyhow::anyhow!("{failed} of {} checks failed", outcomes.len()) });
    }
    note(g, format!("all {} checks passed", outcomes.len()));
    Ok(())
}
