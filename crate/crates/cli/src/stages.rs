use std::collections::{BTreeMap, HashMap};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use linerec::dataset::{clean_manifest_file, split, write_manifest, CharDict, RecordStore, SplitSpec, DEFAULT_RATIO};
use linerec::eval::{
    char_frequencies, compare, evaluate_records, format_predictions, stratify, EvalReport, PredictionRecord, Scheme,
    StrataInput, DEFAULT_PARTIAL_THRESHOLD,
};
use linerec::infer::{compare_checkpoints, predict_batch, preprocess_bytes, ComparisonJson, LoadedModel, PredictionJson};
use linerec::model::{init_params, Checkpoint, ImageBatch};
use linerec::synth::{generate_corpus, read_meta_file, write_meta_file, DegradationMeta, DegradationProfile};
use linerec::train::{parse_kv, train};
use linerec::{TrainConfig, LINE_HEIGHT, LINE_WIDTH};
use linerec_server::ServiceConfig;
use log::{info, warn};

use crate::cli;
use crate::error::StageError;

pub const STORE_FILE: &str = "lines.ocrs";
pub const DICT_FILE: &str = "dict.txt";
pub const SPLIT_FILE: &str = "split.json";
pub const META_FILE: &str = "meta.jsonl";
pub const FREQ_FILE: &str = "char_freq.json";
pub const MODEL_FILE: &str = "model.ocrm";

/// Values from `--config`, looked up by long flag name.
struct Settings {
    values: BTreeMap<String, String>,
}

impl Settings {
    fn load(common: &cli::Common, allowed: &[&str]) -> Result<Self, StageError> {
        let mut values = BTreeMap::new();
        if let Some(path) = &common.config {
            let text = std::fs::read_to_string(path).map_err(|e| StageError::io(path, e))?;
            for (k, v) in parse_kv(&text)? {
                let k = k.replace('-', "_");
                if k != "seed" && k != "out" && !allowed.contains(&k.as_str()) {
                    return Err(StageError::new("CONFIG", format!("unknown key {k:?} in {}", path.display())));
                }
                values.insert(k, v);
            }
        }
        Ok(Self { values })
    }

    fn get<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, StageError> {
        if flag.is_some() {
            return Ok(flag);
        }
        self.values
            .get(key)
            .map(|v| v.parse().map_err(|_| StageError::new("CONFIG", format!("bad value {v:?} for {key}"))))
            .transpose()
    }

    fn seed(&self, common: &cli::Common) -> Result<u64, StageError> {
        Ok(self.get(common.seed, "seed")?.unwrap_or(0))
    }

    fn out(&self, common: &cli::Common) -> Result<PathBuf, StageError> {
        let out = self.get(common.out.clone(), "out")?.unwrap_or_else(|| PathBuf::from("."));
        std::fs::create_dir_all(&out).map_err(|e| StageError::io(&out, e))?;
        Ok(out)
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), StageError> {
    std::fs::write(path, contents).map_err(|e| StageError::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>, StageError> {
    std::fs::read(path).map_err(|e| StageError::io(path, e))
}

fn to_json<T: serde::Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report types serialize");
    s.push('\n');
    s
}

pub fn gen_data(args: cli::GenData) -> Result<(), StageError> {
    let s = Settings::load(&args.common, &["alphabet", "count", "profile"])?;
    let alphabet = s.get(args.alphabet, "alphabet")?.unwrap_or(20);
    let count = s.get(args.count, "count")?.unwrap_or(2000);
    let profile = s.get(args.profile, "profile")?.unwrap_or(DegradationProfile::Clean);
    let seed = s.seed(&args.common)?;
    let out = s.out(&args.common)?;
    let corpus = generate_corpus(alphabet, count, seed, profile)?;
    corpus.write_to(&out)?;
    let alphabet_text: String = corpus.alphabet.iter().map(|c| format!("{c}\n")).collect();
    write(&out.join("alphabet.txt"), alphabet_text)?;
    println!("wrote {count} {profile} lines over {alphabet} characters to {}", out.display());
    Ok(())
}

fn parse_ratio(text: &str) -> Result<(u32, u32), StageError> {
    let bad = || StageError::new("CONFIG", format!("ratio {text:?} must look like 10:1"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    Ok((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?))
}

pub fn build_dataset(args: cli::BuildDataset) -> Result<(), StageError> {
    let s = Settings::load(&args.common, &["images", "dict", "meta", "ratio"])?;
    let seed = s.seed(&args.common)?;
    let out = s.out(&args.common)?;
    let manifest_dir = args.manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let root = s.get(args.images, "images")?.unwrap_or_else(|| manifest_dir.clone());
    let ratio = match s.get(args.ratio, "ratio")? {
        Some(r) => parse_ratio(&r)?,
        None => DEFAULT_RATIO,
    };

    let cleaned = clean_manifest_file(&args.manifest, &root)?;
    write_manifest(&out.join("cleaned.txt"), &cleaned.kept).map_err(|e| StageError::io(&out, e))?;
    let rejected: String = cleaned
        .rejected
        .iter()
        .map(|r| format!("{}\t{}\t{}\n", r.line, r.reason.code(), r.content))
        .collect();
    write(&out.join("rejected.tsv"), rejected)?;
    if cleaned.kept.is_empty() {
        return Err(StageError::new("EMPTY_DATASET", "no manifest entries survived cleaning"));
    }

    let dict = match s.get(args.dict, "dict")? {
        Some(path) => {
            let dict = CharDict::load(&path)?;
            for e in &cleaned.kept {
                if let Err(err) = dict.encode(&e.label) {
                    return Err(StageError::new("DICT_MISMATCH", format!("{}: {err}", e.path)));
                }
            }
            dict
        }
        None => CharDict::from_labels(cleaned.kept.iter().map(|e| e.label.as_str()))?,
    };
    dict.save(&out.join(DICT_FILE))?;

    let store = RecordStore::pack(&cleaned.kept, &root, &out.join(STORE_FILE))?;
    let spec = split(&store.keys(), ratio, seed);
    write(&out.join(SPLIT_FILE), to_json(&spec))?;

    let labels: HashMap<&str, &str> = cleaned.kept.iter().map(|e| (e.path.as_str(), e.label.as_str())).collect();
    let freq = char_frequencies(spec.train_ids.iter().map(|id| labels[id.as_str()]));
    write(&out.join(FREQ_FILE), to_json(&freq))?;

    let meta_path = s.get(args.meta, "meta")?.or_else(|| Some(manifest_dir.join(META_FILE)).filter(|p| p.exists()));
    if let Some(path) = meta_path {
        let meta = read_meta_file(&path)?;
        let kept: Vec<(String, DegradationMeta)> =
            meta.into_iter().filter(|(id, _)| labels.contains_key(id.as_str())).collect();
        write_meta_file(&out.join(META_FILE), &kept)?;
    }
    println!(
        "kept {} rejected {}; dictionary {} chars; split {} train / {} val",
        cleaned.kept.len(),
        cleaned.rejected.len(),
        dict.len(),
        spec.train_ids.len(),
        spec.val_ids.len()
    );
    Ok(())
}

/// Everything build-dataset leaves behind.
struct Dataset {
    store: RecordStore,
    dict: CharDict,
    split: SplitSpec,
    meta: Option<HashMap<String, DegradationMeta>>,
    frequencies: Option<BTreeMap<char, u64>>,
}

impl Dataset {
    fn open(dir: &Path) -> Result<Self, StageError> {
        let store = RecordStore::open(&dir.join(STORE_FILE))?;
        let dict = CharDict::load(&dir.join(DICT_FILE))?;
        let split_path = dir.join(SPLIT_FILE);
        let split = serde_json::from_slice(&read(&split_path)?)
            .map_err(|e| StageError::new("SPLIT", format!("{}: {e}", split_path.display())))?;
        let meta_path = dir.join(META_FILE);
        let meta = if meta_path.exists() { Some(read_meta_file(&meta_path)?.into_iter().collect()) } else { None };
        let freq_path = dir.join(FREQ_FILE);
        let frequencies = if freq_path.exists() {
            Some(
                serde_json::from_slice(&read(&freq_path)?)
                    .map_err(|e| StageError::new("DATASET", format!("{}: {e}", freq_path.display())))?,
            )
        } else {
            None
        };
        Ok(Self { store, dict, split, meta, frequencies })
    }

    fn ids(&self, which: &str) -> Result<Vec<String>, StageError> {
        Ok(match which {
            "val" => self.split.val_ids.clone(),
            "train" => self.split.train_ids.clone(),
            "all" => self.store.keys(),
            other => return Err(StageError::new("CONFIG", format!("split must be val, train or all, not {other:?}"))),
        })
    }
}

pub fn train_stage(args: cli::Train) -> Result<(), StageError> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.common.config {
        let text = std::fs::read_to_string(path).map_err(|e| StageError::io(path, e))?;
        for (k, v) in parse_kv(&text)? {
            if k != "out" {
                cfg.set(&k.replace('-', "_"), &v)?;
            }
        }
    }
    if let Some(seed) = args.common.seed {
        cfg.seed = seed;
    }
    let overrides: [(&str, Option<String>); 7] = [
        ("epochs", args.epochs.map(|v| v.to_string())),
        ("batch_size", args.batch_size.map(|v| v.to_string())),
        ("learning_rate", args.learning_rate.map(|v| v.to_string())),
        ("lambda1", args.lambda1.map(|v| v.to_string())),
        ("lambda2", args.lambda2.map(|v| v.to_string())),
        ("kd_temperature", args.kd_temperature.map(|v| v.to_string())),
        ("teacher_ctc_weight", args.teacher_ctc_weight.map(|v| v.to_string())),
    ];
    for (k, v) in overrides {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    if args.freeze_teacher {
        cfg.freeze_teacher = true;
    }
    cfg.validate()?;
    let out = args.common.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out).map_err(|e| StageError::io(&out, e))?;

    let ds = Dataset::open(&args.dataset)?;
    let mut metadata = cfg.to_pairs();
    let init = match &args.init {
        Some(path) => {
            let model = LoadedModel::load(path)?;
            if model.checkpoint.dict != ds.dict {
                return Err(StageError::new("DICT_MISMATCH", "initial checkpoint was trained with a different dictionary"));
            }
            metadata.push(("init_digest".into(), model.digest.clone()));
            model.checkpoint.params
        }
        None => init_params(ds.dict.len(), cfg.seed),
    };
    info!("training on {} lines, validating on {}", ds.split.train_ids.len(), ds.split.val_ids.len());
    let outcome = train(&ds.store, &ds.split, &ds.dict, &cfg, init)?;
    if let Some(last) = outcome.epochs.last().and_then(|e| e.val_exact) {
        metadata.push(("val_exact".into(), last.to_string()));
    }
    let ckpt = Checkpoint::new(ds.dict.clone(), outcome.params)?.with_metadata(metadata);
    ckpt.save(&out.join(MODEL_FILE))?;
    write(&out.join("loss.csv"), outcome.trace.to_csv())?;
    write(&out.join("epochs.json"), to_json(&outcome.epochs))?;
    write(&out.join("train_config.txt"), cfg.to_kv_text())?;
    if !outcome.infeasible.is_empty() {
        warn!("{} samples were skipped every epoch", outcome.infeasible.len());
    }
    match outcome.epochs.last().and_then(|e| e.val_exact) {
        Some(acc) => println!("trained {} epochs; validation exact accuracy {:.2}%", cfg.epochs, acc * 100.0),
        None => println!("trained {} epochs", cfg.epochs),
    }
    Ok(())
}

fn predict_ids(model: &LoadedModel, ds: &Dataset, ids: &[String]) -> Result<Vec<PredictionRecord>, StageError> {
    let mut out = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(32) {
        let mut data = Vec::with_capacity(chunk.len() * 3 * LINE_HEIGHT * LINE_WIDTH);
        for id in chunk {
            let rec = ds.store.get(id).ok_or_else(|| StageError::new("UNKNOWN_RECORD", id.clone()))?;
            data.extend(preprocess_bytes(&rec.image)?.tensor);
        }
        let batch = ImageBatch::new(chunk.len(), LINE_HEIGHT, LINE_WIDTH, data)
            .map_err(|e| StageError::new("INFERENCE", e.to_string()))?;
        let preds = predict_batch(&model.checkpoint.params, model.dict(), &batch)?;
        out.extend(chunk.iter().zip(&preds).map(|(id, p)| PredictionRecord::from_prediction(id.clone(), p)));
    }
    Ok(out)
}

fn evaluate_model(model: &LoadedModel, ds: &Dataset, which: &str, threshold: usize) -> Result<(EvalReport, Vec<PredictionRecord>), StageError> {
    let ids = ds.ids(which)?;
    if model.dict() != &ds.dict {
        warn!("checkpoint dictionary differs from the dataset dictionary");
    }
    let preds = predict_ids(model, ds, &ids)?;
    let truths: Vec<String> = ids.iter().map(|id| ds.store.get(id).expect("ids come from the store").label.clone()).collect();
    let mut report = evaluate_records(&preds, &truths, threshold)?;
    let predicted: Vec<String> = preds.iter().map(|p| p.text.clone()).collect();
    let meta: Option<Vec<DegradationMeta>> =
        ds.meta.as_ref().and_then(|m| ids.iter().map(|id| m.get(id).copied()).collect());
    let input = StrataInput {
        ground_truths: &truths,
        predicted: &predicted,
        meta: meta.as_deref(),
        frequencies: ds.frequencies.as_ref(),
    };
    for scheme in Scheme::ALL {
        match stratify(&input, scheme) {
            Ok(s) => report.strata.push(s),
            Err(e) => info!("skipping {} strata: {e}", scheme.name()),
        }
    }
    Ok((report, preds))
}

pub fn eval_stage(args: cli::Eval) -> Result<(), StageError> {
    let s = Settings::load(&args.common, &["split", "partial_threshold"])?;
    let out = s.out(&args.common)?;
    let which = s.get(args.split, "split")?.unwrap_or_else(|| "val".into());
    let threshold = s.get(args.partial_threshold, "partial_threshold")?.unwrap_or(DEFAULT_PARTIAL_THRESHOLD);
    let model = LoadedModel::load(&args.checkpoint)?;
    let ds = Dataset::open(&args.dataset)?;
    let (report, preds) = evaluate_model(&model, &ds, &which, threshold)?;
    write(&out.join("predictions.tsv"), format_predictions(&preds))?;
    write(&out.join("report.json"), to_json(&report))?;
    let table = report.render_table();
    write(&out.join("report.txt"), &table)?;
    print!("{table}");
    Ok(())
}

pub fn infer_stage(args: cli::Infer) -> Result<(), StageError> {
    let s = Settings::load(&args.common, &[])?;
    let out = s.out(&args.common)?;
    let model = LoadedModel::load(&args.checkpoint)?;
    let bytes = read(&args.image)?;
    let pred = model.recognize_bytes(&bytes)?;
    let mut json = PredictionJson::from(&pred);
    // Timing varies run to run; the file copy stays reproducible.
    println!("{}", serde_json::to_string(&json).expect("prediction serializes"));
    json.elapsed_ms = 0.0;
    write(&out.join("prediction.json"), to_json(&json))?;
    Ok(())
}

pub fn compare_stage(args: cli::Compare) -> Result<(), StageError> {
    let s = Settings::load(&args.common, &["split"])?;
    let out = s.out(&args.common)?;
    let load_report = |path: &PathBuf| -> Result<EvalReport, StageError> {
        serde_json::from_slice(&read(path)?).map_err(|e| StageError::new("REPORT", format!("{}: {e}", path.display())))
    };
    let (before, after) = match (&args.before, &args.after, &args.baseline, &args.finetuned) {
        (Some(b), Some(a), _, _) => (load_report(b)?, load_report(a)?),
        (_, _, Some(b), Some(f)) => {
            let base = LoadedModel::load(b)?;
            let tuned = LoadedModel::load(f)?;
            if let Some(image) = &args.image {
                let result = compare_checkpoints(&read(image)?, &base, &tuned)?;
                let mut json = ComparisonJson::from(&result);
                let table = format!(
                    "{:<10}  {:<12}  {}\n{:<10}  {:<12}  {:.1}%\n{:<10}  {:<12}  {:.1}%\n",
                    "Model",
                    "Text",
                    "Confidence",
                    "baseline",
                    json.baseline.text,
                    json.baseline.confidence * 100.0,
                    "finetuned",
                    json.finetuned.text,
                    json.finetuned.confidence * 100.0
                );
                json.elapsed_ms = 0.0;
                json.baseline.elapsed_ms = 0.0;
                json.finetuned.elapsed_ms = 0.0;
                write(&out.join("comparison.json"), to_json(&json))?;
                write(&out.join("comparison.txt"), &table)?;
                print!("{table}");
                return Ok(());
            }
            let Some(dir) = &args.dataset else {
                return Err(StageError::new("USAGE", "--baseline/--finetuned need --dataset or --image"));
            };
            if base.dict() != tuned.dict() {
                return Err(StageError::new("DICT_MISMATCH", "checkpoints use different dictionaries"));
            }
            let ds = Dataset::open(dir)?;
            let which = s.get(args.split.clone(), "split")?.unwrap_or_else(|| "val".into());
            let (rb, _) = evaluate_model(&base, &ds, &which, DEFAULT_PARTIAL_THRESHOLD)?;
            let (ra, _) = evaluate_model(&tuned, &ds, &which, DEFAULT_PARTIAL_THRESHOLD)?;
            write(&out.join("before.json"), to_json(&rb))?;
            write(&out.join("after.json"), to_json(&ra))?;
            (rb, ra)
        }
        _ => return Err(StageError::new("USAGE", "give --before/--after reports or --baseline/--finetuned checkpoints")),
    };
    let report = compare(&before, &after)?;
    write(&out.join("comparison.json"), to_json(&report))?;
    let table = report.render_table();
    write(&out.join("comparison.txt"), &table)?;
    print!("{table}");
    Ok(())
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
}

pub fn serve_stage(args: cli::Serve) -> Result<(), StageError> {
    let s = Settings::load(&args.common, &["bind", "max_upload_bytes", "timeout_secs", "cors_origin", "static_dir"])?;
    let mut cfg = ServiceConfig::new(args.baseline.clone(), args.finetuned.clone());
    if let Some(bind) = s.get(args.bind, "bind")? {
        cfg.bind = SocketAddr::from_str(&bind).map_err(|_| StageError::new("CONFIG", format!("bad bind address {bind:?}")))?;
    }
    if let Some(n) = s.get(args.max_upload_bytes, "max_upload_bytes")? {
        cfg.max_upload_bytes = n;
    }
    if let Some(t) = s.get(args.timeout_secs, "timeout_secs")? {
        cfg.request_timeout = Duration::from_secs(t);
    }
    if let Some(o) = s.get(args.cors_origin, "cors_origin")? {
        cfg.cors_origin = o;
    }
    cfg.static_dir = s.get(args.static_dir, "static_dir")?;
    let out = match s.get(args.common.out.clone(), "out")? {
        Some(dir) => {
            std::fs::create_dir_all(&dir).map_err(|e| StageError::io(&dir, e))?;
            Some(dir)
        }
        None => None,
    };
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| StageError::new("SERVER", e.to_string()))?;
    runtime.block_on(linerec_server::serve(cfg, shutdown_signal(), move |addr| {
        println!("listening on http://{addr}");
        if let Some(dir) = &out {
            let _ = std::fs::write(dir.join("serve_addr.txt"), format!("{addr}\n"));
        }
    }))?;
    Ok(())
}
