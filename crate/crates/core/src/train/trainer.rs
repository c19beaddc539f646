use std::fmt::Write as _;

use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{distill_loss, AdamW, TrainConfig, TrainError};
use crate::ctc::{ctc_loss_grad, min_frames};
use crate::dataset::{CharDict, RecordStore, SplitSpec};
use crate::infer::{fit_line, normalize_chw, predict_batch};
use crate::model::{backward, forward_branches, ImageBatch, ModelParams, ParamGroup};
use crate::rng::{self, stream};
use crate::{LINE_HEIGHT, LINE_WIDTH};

/// One logged optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub total: f64,
    pub ctc: f64,
    pub kd: f64,
    /// Teacher CTC loss, already weighted by `teacher_ctc_weight`.
    pub teacher: f64,
    pub skipped: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTrace {
    pub records: Vec<LossRecord>,
}

impl LossTrace {
    pub const CSV_HEADER: &'static str = "step,total,ctc,kd,teacher,skipped";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            let _ = writeln!(out, "{},{},{},{},{},{}", r.step, r.total, r.ctc, r.kd, r.teacher, r.skipped);
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines();
        if lines.next() != Some(Self::CSV_HEADER) {
            return Err("missing loss trace header".into());
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            let bad = || format!("line {}: malformed row", i + 2);
            if f.len() != 6 {
                return Err(bad());
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
            records.push(LossRecord {
                step: f[0].parse().map_err(|_| bad())?,
                total: num(f[1])?,
                ctc: num(f[2])?,
                kd: num(f[3])?,
                teacher: num(f[4])?,
                skipped: f[5].parse().map_err(|_| bad())?,
            });
        }
        Ok(Self { records })
    }

    pub fn total_skipped(&self) -> usize {
        self.records.iter().map(|r| r.skipped).sum()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub mean_total: f64,
    pub mean_ctc: f64,
    /// `None` when the validation split is empty.
    pub val_exact: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams<f32>,
    pub trace: LossTrace,
    pub epochs: Vec<EpochSummary>,
    /// Samples whose label cannot fit the frame count; skipped every epoch.
    pub infeasible: Vec<String>,
}

/// A decoded, fitted training line kept as 8-bit RGB to bound memory.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedSample {
    pub key: String,
    pub text: String,
    pub label: Vec<u32>,
    /// `LINE_HEIGHT x LINE_WIDTH x 3`, row-major.
    pub rgb: Vec<u8>,
    pub aspect_broken: bool,
}

impl PreparedSample {
    pub fn tensor(&self) -> Vec<f32> {
        normalize_chw(&self.rgb, LINE_HEIGHT, LINE_WIDTH)
    }
}

/// Decodes and fits the named records. Labels must be covered by `dict`.
pub fn prepare_samples(store: &RecordStore, ids: &[String], dict: &CharDict) -> Result<Vec<PreparedSample>, TrainError> {
    ids.iter()
        .map(|id| {
            let rec = store.get(id).ok_or_else(|| TrainError::UnknownRecord(id.clone()))?;
            let label = dict
                .encode(&rec.label)
                .map_err(|e| TrainError::DictMismatch(format!("label of {id:?}: {e}")))?;
            let img = image::load_from_memory(&rec.image)
                .map_err(|e| TrainError::BadRecord { key: id.clone(), reason: e.to_string() })?
                .to_rgb8();
            let (fitted, aspect_broken) = fit_line(&img);
            Ok(PreparedSample { key: id.clone(), text: rec.label.clone(), label, rgb: fitted.into_raw(), aspect_broken })
        })
        .collect()
}

fn stack(samples: &[&PreparedSample]) -> Result<ImageBatch<f32>, TrainError> {
    let mut data = Vec::with_capacity(samples.len() * 3 * LINE_HEIGHT * LINE_WIDTH);
    for s in samples {
        data.extend(s.tensor());
    }
    Ok(ImageBatch::new(samples.len(), LINE_HEIGHT, LINE_WIDTH, data)?)
}

/// Fraction of samples whose greedy decoding equals the label.
pub fn evaluate_exact(params: &ModelParams<f32>, dict: &CharDict, samples: &[PreparedSample]) -> Result<f64, TrainError> {
    if samples.is_empty() {
        return Ok(0.0);
    }
    let mut hits = 0usize;
    for chunk in samples.chunks(32) {
        let refs: Vec<&PreparedSample> = chunk.iter().collect();
        let preds = predict_batch(params, dict, &stack(&refs)?)?;
        hits += preds.iter().zip(chunk).filter(|(p, s)| p.text == s.text).count();
    }
    Ok(hits as f64 / samples.len() as f64)
}

/// Trains `init` on the split's training records with the combined
/// objective and returns the final parameters with the loss trace.
pub fn train(
    store: &RecordStore,
    split: &SplitSpec,
    dict: &CharDict,
    config: &TrainConfig,
    init: ModelParams<f32>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if init.arch().classes != dict.num_classes() {
        return Err(TrainError::DictMismatch(format!(
            "model has {} classes, dictionary needs {}",
            init.arch().classes,
            dict.num_classes()
        )));
    }
    if split.train_ids.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    let train_set = prepare_samples(store, &split.train_ids, dict)?;
    let val_set = prepare_samples(store, &split.val_ids, dict)?;
    train_prepared(&train_set, &val_set, dict, config, init)
}

/// [`train`] over already decoded samples.
pub fn train_prepared(
    train_set: &[PreparedSample],
    val_set: &[PreparedSample],
    dict: &CharDict,
    config: &TrainConfig,
    init: ModelParams<f32>,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(TrainError::EmptyTrainSet);
    }
    if init.arch().classes != dict.num_classes() {
        return Err(TrainError::DictMismatch("model head does not match dictionary".into()));
    }
    let frames = LINE_WIDTH / 4;
    let feasible: Vec<bool> = train_set.iter().map(|s| !s.label.is_empty() && min_frames(&s.label) <= frames).collect();
    let infeasible: Vec<String> =
        train_set.iter().zip(&feasible).filter(|(_, ok)| !**ok).map(|(s, _)| s.key.clone()).collect();
    if !infeasible.is_empty() {
        warn!("{} training samples have labels too long for {frames} frames and will be skipped", infeasible.len());
    }

    let mut params = init;
    let mut opt = AdamW::new(params.len());
    let classes = params.arch().classes;
    let with_teacher = config.teacher_active();
    let teacher_trainable = config.teacher_trainable();
    let layout = params.layout().clone();
    let mut ranges = vec![layout.group_range(ParamGroup::Backbone), layout.group_range(ParamGroup::Student)];
    if teacher_trainable {
        ranges.push(layout.group_range(ParamGroup::Teacher));
    }

    let mut trace = LossTrace::default();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::derived(config.seed, stream::SHUFFLE, epoch as u64));
        let (mut sum_total, mut sum_ctc, mut batches) = (0.0, 0.0, 0usize);
        for chunk in order.chunks(config.batch_size) {
            step += 1;
            let used: Vec<&PreparedSample> = chunk.iter().filter(|&&i| feasible[i]).map(|&i| &train_set[i]).collect();
            let skipped = chunk.len() - used.len();
            if used.is_empty() {
                trace.records.push(LossRecord { step, total: 0.0, ctc: 0.0, kd: 0.0, teacher: 0.0, skipped });
                continue;
            }
            let batch = stack(&used)?;
            let fwd = forward_branches(&params, &batch, with_teacher)?;
            let per = frames * classes;
            let scale = 1.0 / used.len() as f64;
            let mut d_student = vec![0f32; used.len() * per];
            let mut d_teacher = vec![0f32; used.len() * per];
            let (mut ctc_sum, mut kd_sum, mut teacher_sum) = (0.0, 0.0, 0.0);
            for (i, s) in used.iter().enumerate() {
                let student = fwd.student_frame_logits(i);
                let ctc = ctc_loss_grad(&student, &s.label)?;
                ctc_sum += ctc.loss;
                let ds = &mut d_student[i * per..(i + 1) * per];
                for (d, g) in ds.iter_mut().zip(&ctc.grad) {
                    *d = (config.lambda1 * scale * g) as f32;
                }
                if let Some(teacher) = fwd.teacher_frame_logits(i) {
                    let kd = distill_loss(&student, &teacher, config.kd_temperature)?;
                    kd_sum += kd.value;
                    for (d, g) in ds.iter_mut().zip(&kd.student_grad) {
                        *d += (config.lambda2 * scale * g) as f32;
                    }
                    let tc = ctc_loss_grad(&teacher, &s.label)?;
                    teacher_sum += tc.loss;
                    if teacher_trainable {
                        let dt = &mut d_teacher[i * per..(i + 1) * per];
                        for (d, g) in dt.iter_mut().zip(&tc.grad) {
                            *d = (config.teacher_ctc_weight * scale * g) as f32;
                        }
                    }
                }
            }
            let ctc = ctc_sum * scale;
            let kd = kd_sum * scale;
            let teacher = config.teacher_ctc_weight * teacher_sum * scale;
            let total = config.lambda1 * ctc + config.lambda2 * kd;
            trace.records.push(LossRecord { step, total, ctc, kd, teacher, skipped });
            let grads = backward(&params, &fwd, &d_student, teacher_trainable.then_some(&d_teacher[..]))?;
            opt.step_ranges(params.values_mut(), grads.values(), &ranges, config)?;
            sum_total += total;
            sum_ctc += ctc;
            batches += 1;
        }
        let val_exact = if val_set.is_empty() { None } else { Some(evaluate_exact(&params, dict, val_set)?) };
        let n = batches.max(1) as f64;
        let summary = EpochSummary { epoch: epoch + 1, mean_total: sum_total / n, mean_ctc: sum_ctc / n, val_exact };
        match summary.val_exact {
            Some(acc) => info!(
                "epoch {}/{}: loss {:.4} ctc {:.4} val exact {:.2}%",
                summary.epoch,
                config.epochs,
                summary.mean_total,
                summary.mean_ctc,
                acc * 100.0
            ),
            None => info!("epoch {}/{}: loss {:.4} ctc {:.4}", summary.epoch, config.epochs, summary.mean_total, summary.mean_ctc),
        }
        epochs.push(summary);
    }
    Ok(TrainOutcome { params, trace, epochs, infeasible })
}
