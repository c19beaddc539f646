//! Recognition of arbitrary line images with the student branch only.

use std::path::Path;
use std::time::{Duration, Instant};

use image::imageops::{self, FilterType};
use image::{DynamicImage, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::ctc::{greedy_decode, CtcError, Prediction};
use crate::dataset::CharDict;
use crate::model::{forward_branches, Checkpoint, CheckpointError, ImageBatch, ModelError, ModelParams};
use crate::{LINE_HEIGHT, LINE_WIDTH};

#[derive(Debug, Error)]
pub enum InferError {
    #[error("image could not be decoded: {0}")]
    UndecodableImage(String),
    #[error("checkpoints use different dictionaries")]
    DictMismatch,
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ctc(#[from] CtcError),
}

/// A line image ready for the network.
#[derive(Clone, Debug, PartialEq)]
pub struct Preprocessed {
    /// `3 x LINE_HEIGHT x LINE_WIDTH`, values in `[-1, 1]`.
    pub tensor: Vec<f32>,
    /// The line was wider than the canvas after height scaling and had to
    /// be squeezed.
    pub aspect_broken: bool,
    pub source_width: u32,
    pub source_height: u32,
}

/// Scales to the line height keeping aspect, then pads right with white or
/// squeezes to the line width. Returns the fitted image and whether the
/// aspect ratio had to be broken.
pub fn fit_line(img: &RgbImage) -> (RgbImage, bool) {
    let (w, h) = img.dimensions();
    let (tw, th) = (LINE_WIDTH as u32, LINE_HEIGHT as u32);
    if (w, h) == (tw, th) {
        return (img.clone(), false);
    }
    let scaled_w = ((w as f64 * th as f64 / h as f64).round() as u32).max(1);
    if scaled_w > tw {
        return (imageops::resize(img, tw, th, FilterType::Triangle), true);
    }
    let scaled = if (scaled_w, th) == (w, h) { img.clone() } else { imageops::resize(img, scaled_w, th, FilterType::Triangle) };
    let mut canvas = RgbImage::from_pixel(tw, th, Rgb([255, 255, 255]));
    imageops::replace(&mut canvas, &scaled, 0, 0);
    (canvas, false)
}

/// Interleaved 8-bit RGB to planar `[-1, 1]`.
pub fn normalize_chw(rgb: &[u8], height: usize, width: usize) -> Vec<f32> {
    let plane = height * width;
    let mut out = vec![0f32; 3 * plane];
    for (i, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            out[c * plane + i] = px[c] as f32 / 127.5 - 1.0;
        }
    }
    out
}

pub fn preprocess(img: &DynamicImage) -> Preprocessed {
    let rgb = img.to_rgb8();
    let (fitted, aspect_broken) = fit_line(&rgb);
    Preprocessed {
        tensor: normalize_chw(fitted.as_raw(), LINE_HEIGHT, LINE_WIDTH),
        aspect_broken,
        source_width: rgb.width(),
        source_height: rgb.height(),
    }
}

/// Decodes PNG or JPEG bytes and preprocesses them.
pub fn preprocess_bytes(bytes: &[u8]) -> Result<Preprocessed, InferError> {
    let img = image::load_from_memory(bytes).map_err(|e| InferError::UndecodableImage(e.to_string()))?;
    if img.width() == 0 || img.height() == 0 {
        return Err(InferError::UndecodableImage("empty image".into()));
    }
    Ok(preprocess(&img))
}

/// Student-only forward pass and greedy decoding for every image in a batch.
pub fn predict_batch(
    params: &ModelParams<f32>,
    dict: &CharDict,
    batch: &ImageBatch<f32>,
) -> Result<Vec<Prediction>, InferError> {
    let trace = forward_branches(params, batch, false)?;
    (0..batch.n).map(|i| Ok(greedy_decode(&trace.student_frame_logits(i), dict)?)).collect()
}

/// An immutable checkpoint ready to serve requests.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub checkpoint: Checkpoint,
    /// Hex SHA-256 of the checkpoint bytes.
    pub digest: String,
}

impl LoadedModel {
    pub fn load(path: &Path) -> Result<Self, InferError> {
        let bytes = std::fs::read(path)
            .map_err(|source| CheckpointError::Io { path: path.into(), source })?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, InferError> {
        let checkpoint = Checkpoint::from_bytes(bytes)?;
        Ok(Self { checkpoint, digest: hex::encode(Sha256::digest(bytes)) })
    }

    pub fn from_checkpoint(checkpoint: Checkpoint) -> Self {
        let digest = hex::encode(Sha256::digest(checkpoint.to_bytes()));
        Self { checkpoint, digest }
    }

    pub fn dict(&self) -> &CharDict {
        &self.checkpoint.dict
    }

    pub fn recognize(&self, input: &Preprocessed) -> Result<Prediction, InferError> {
        let start = Instant::now();
        let batch = ImageBatch::new(1, LINE_HEIGHT, LINE_WIDTH, input.tensor.clone())?;
        let mut pred = predict_batch(&self.checkpoint.params, &self.checkpoint.dict, &batch)?
            .pop()
            .expect("one prediction per image");
        pred.aspect_broken = input.aspect_broken;
        pred.elapsed = start.elapsed();
        Ok(pred)
    }

    pub fn recognize_bytes(&self, bytes: &[u8]) -> Result<Prediction, InferError> {
        self.recognize(&preprocess_bytes(bytes)?)
    }
}

/// Wire form of a [`Prediction`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionJson {
    pub text: String,
    pub confidence: f64,
    pub per_char: Vec<CharProbJson>,
    pub aspect_broken: bool,
    pub elapsed_ms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharProbJson {
    pub ch: String,
    pub p: f64,
}

impl From<&Prediction> for PredictionJson {
    fn from(p: &Prediction) -> Self {
        Self {
            text: p.text.clone(),
            confidence: p.confidence,
            per_char: p.per_char.iter().map(|c| CharProbJson { ch: c.ch.to_string(), p: c.p }).collect(),
            aspect_broken: p.aspect_broken,
            elapsed_ms: p.elapsed.as_secs_f64() * 1000.0,
        }
    }
}

/// Two predictions computed from one preprocessed tensor.
#[derive(Clone, Debug)]
pub struct ComparisonResult {
    pub baseline: Prediction,
    pub finetuned: Prediction,
    /// Hex SHA-256 of the input bytes.
    pub input_digest: String,
    pub elapsed: Duration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonJson {
    pub input_digest: String,
    pub baseline: PredictionJson,
    pub finetuned: PredictionJson,
    pub elapsed_ms: f64,
}

impl From<&ComparisonResult> for ComparisonJson {
    fn from(c: &ComparisonResult) -> Self {
        Self {
            input_digest: c.input_digest.clone(),
            baseline: (&c.baseline).into(),
            finetuned: (&c.finetuned).into(),
            elapsed_ms: c.elapsed.as_secs_f64() * 1000.0,
        }
    }
}

pub fn input_digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn compare_checkpoints(
    image_bytes: &[u8],
    baseline: &LoadedModel,
    finetuned: &LoadedModel,
) -> Result<ComparisonResult, InferError> {
    if baseline.dict() != finetuned.dict() {
        return Err(InferError::DictMismatch);
    }
    let start = Instant::now();
    let input = preprocess_bytes(image_bytes)?;
    let b = baseline.recognize(&input)?;
    let f = finetuned.recognize(&input)?;
    Ok(ComparisonResult { baseline: b, finetuned: f, input_digest: input_digest(image_bytes), elapsed: start.elapsed() })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gray(w: u32, h: u32, v: u8) -> RgbImage {
        RgbImage::from_pixel(w, h, Rgb([v, v, v]))
    }

    #[test]
    fn exact_size_is_identity_geometry() {
        let mut img = gray(280, 32, 10);
        img.put_pixel(3, 4, Rgb([200, 100, 0]));
        let (out, broken) = fit_line(&img);
        assert_eq!(out, img);
        assert!(!broken);
        let t = normalize_chw(out.as_raw(), 32, 280);
        assert_eq!(t[4 * 280 + 3], 200.0 / 127.5 - 1.0);
    }

    #[test]
    fn proportional_and_wide_inputs() {
        let (out, broken) = fit_line(&gray(140, 16, 0));
        assert_eq!(out.dimensions(), (280, 32));
        assert!(!broken);
        assert!(out.pixels().all(|p| p.0 == [0, 0, 0]));

        let (out, broken) = fit_line(&gray(1000, 32, 0));
        assert_eq!(out.dimensions(), (280, 32));
        assert!(broken);
    }

    #[test]
    fn narrow_input_is_padded_white() {
        let (out, broken) = fit_line(&gray(50, 32, 0));
        assert!(!broken);
        assert_eq!(out.get_pixel(10, 10).0, [0, 0, 0]);
        assert_eq!(out.get_pixel(200, 10).0, [255, 255, 255]);
        let p = preprocess(&DynamicImage::ImageRgb8(gray(50, 32, 0)));
        assert_eq!(p.tensor.len(), 3 * 32 * 280);
        assert!(p.tensor.iter().all(|v| (-1.0..=1.0).contains(v)));
        assert_eq!(p.tensor[200], 1.0);
    }

    #[test]
    fn undecodable_bytes() {
        assert!(matches!(preprocess_bytes(b"not an image"), Err(InferError::UndecodableImage(_))));
    }
}
