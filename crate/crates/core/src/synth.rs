//! Procedural synthetic text lines.
//!
//! Glyphs are random stroke sets seeded by character code point, so the same
//! character always looks the same across corpora. Lines are rasterized
//! left-to-right into a 32 x 280 strip and then degraded (shear, stretch,
//! blur, stripes, contrast loss, noise) according to a [`DegradationMeta`].

use std::fmt;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{write_manifest, CharDict, ManifestEntry};
use crate::rng::{self, stream};
use crate::{CHANNELS, LINE_HEIGHT, LINE_WIDTH};

/// Longest label a single line may carry.
pub const MAX_LABEL_CHARS: usize = 10;
/// Glyph seed shared by every corpus so characters keep their shapes.
pub const DEFAULT_GLYPH_SEED: u64 = 0x006c_696e_6572_6563;
/// First code point of generated alphabets (CJK Unified Ideographs).
pub const ALPHABET_START: u32 = 0x4E00;

const CELL_HEIGHT: f64 = 20.0;
const CELL_WIDTH: f64 = 20.0;
const CELL_TOP: f64 = 6.0;
const ADVANCE: f64 = 24.0;
const MARGIN: f64 = 4.0;
const INK_LEVEL: f64 = 0.08;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("character {0:?} is not in the generating alphabet")]
    UnknownCharacter(char),
    #[error("label is empty")]
    EmptyLabel,
    #[error("label has {0} characters, at most {MAX_LABEL_CHARS} allowed")]
    LabelTooLong(usize),
    #[error("invalid degradation parameters: {0}")]
    InvalidDegradation(&'static str),
    #[error("alphabet size {0} outside supported range")]
    AlphabetSize(usize),
    #[error("corpus count must be at least 1")]
    EmptyCorpus,
    #[error("unknown degradation profile {0:?}")]
    UnknownProfile(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image encoding failed: {0}")]
    Encode(#[from] image::ImageError),
}

/// A line segment inside the unit glyph cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stroke {
    pub from: [f64; 2],
    pub to: [f64; 2],
    /// Stroke width as a fraction of the cell height.
    pub thickness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlyphSpec {
    pub char_id: u32,
    pub strokes: Vec<Stroke>,
}

/// Builds the stroke set for one character. Pure in `(char_id, glyph_seed)`.
pub fn make_glyph(char_id: u32, glyph_seed: u64) -> GlyphSpec {
    let mut rng = rng::derived(glyph_seed, stream::GLYPH, char_id as u64);
    let n = rng.random_range(3..=8);
    let mut strokes = Vec::with_capacity(n);
    for _ in 0..n {
        // Mostly horizontal and vertical bars with some free diagonals,
        // loosely like brush strokes.
        let (from, to) = match rng.random_range(0..5) {
            0 | 1 => {
                let y = rng.random_range(0.05..0.95);
                let x0 = rng.random_range(0.0..0.5);
                let x1 = rng.random_range(x0 + 0.3..1.0);
                ([x0, y], [x1, y + rng.random_range(-0.08..0.08)])
            }
            2 | 3 => {
                let x = rng.random_range(0.05..0.95);
                let y0 = rng.random_range(0.0..0.5);
                let y1 = rng.random_range(y0 + 0.3..1.0);
                ([x, y0], [x + rng.random_range(-0.08..0.08), y1])
            }
            _ => (
                [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
                [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
            ),
        };
        let clamp = |p: [f64; 2]| [p[0].clamp(0.0, 1.0), p[1].clamp(0.0, 1.0)];
        strokes.push(Stroke { from: clamp(from), to: clamp(to), thickness: rng.random_range(0.07..0.12) });
    }
    GlyphSpec { char_id, strokes }
}

/// Degradations applied to one rendered line, recorded exactly as used.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DegradationMeta {
    pub blur_sigma: f64,
    pub noise_std: f64,
    pub shear_deg: f64,
    pub stretch_factor: f64,
    pub stripe_count: u32,
    pub contrast: f64,
}

impl Default for DegradationMeta {
    fn default() -> Self {
        Self::CLEAN
    }
}

impl DegradationMeta {
    pub const CLEAN: Self = Self {
        blur_sigma: 0.0,
        noise_std: 0.0,
        shear_deg: 0.0,
        stretch_factor: 1.0,
        stripe_count: 0,
        contrast: 1.0,
    };

    pub fn validate(&self) -> Result<(), SynthError> {
        let finite = [self.blur_sigma, self.noise_std, self.shear_deg, self.stretch_factor, self.contrast];
        if !finite.iter().all(|v| v.is_finite()) {
            return Err(SynthError::InvalidDegradation("non-finite value"));
        }
        if self.blur_sigma < 0.0 {
            return Err(SynthError::InvalidDegradation("blur_sigma must be >= 0"));
        }
        if !(0.0..=1.0).contains(&self.noise_std) {
            return Err(SynthError::InvalidDegradation("noise_std must be in [0, 1]"));
        }
        if self.shear_deg.abs() >= 60.0 {
            return Err(SynthError::InvalidDegradation("shear_deg must be within (-60, 60)"));
        }
        if self.stretch_factor <= 0.0 || self.contrast <= 0.0 {
            return Err(SynthError::InvalidDegradation("stretch_factor and contrast must be > 0"));
        }
        Ok(())
    }
}

/// Named degradation presets.
///
/// | preset | blur sigma | noise std | shear (deg) | stretch | stripes | contrast |
/// |--------|------------|-----------|-------------|---------|---------|----------|
/// | clean  | 0          | 0         | 0           | 1       | 0       | 1        |
/// | light  | 0 - 0.8    | 0 - 0.04  | +-4         | 0.9-1.1 | 0       | 0.8 - 1  |
/// | heavy  | 1.2 - 2.0  | 0.08-0.18 | +-14        | 0.75-1.25 | 1 - 4 | 0.45-0.75 |
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegradationProfile {
    Clean,
    Light,
    Heavy,
}

impl DegradationProfile {
    pub fn sample<R: Rng>(self, rng: &mut R) -> DegradationMeta {
        match self {
            DegradationProfile::Clean => DegradationMeta::CLEAN,
            DegradationProfile::Light => DegradationMeta {
                blur_sigma: rng.random_range(0.0..0.8),
                noise_std: rng.random_range(0.0..0.04),
                shear_deg: rng.random_range(-4.0..4.0),
                stretch_factor: rng.random_range(0.9..1.1),
                stripe_count: 0,
                contrast: rng.random_range(0.8..1.0),
            },
            DegradationProfile::Heavy => DegradationMeta {
                blur_sigma: rng.random_range(1.2..2.0),
                noise_std: rng.random_range(0.08..0.18),
                shear_deg: rng.random_range(-14.0..14.0),
                stretch_factor: rng.random_range(0.75..1.25),
                stripe_count: rng.random_range(1..=4),
                contrast: rng.random_range(0.45..0.75),
            },
        }
    }
}

impl fmt::Display for DegradationProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DegradationProfile::Clean => "clean",
            DegradationProfile::Light => "light",
            DegradationProfile::Heavy => "heavy",
        })
    }
}

impl FromStr for DegradationProfile {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "clean" => Ok(DegradationProfile::Clean),
            "light" => Ok(DegradationProfile::Light),
            "heavy" => Ok(DegradationProfile::Heavy),
            other => Err(SynthError::UnknownProfile(other.to_string())),
        }
    }
}

/// One rendered text line: 32 rows x 280 columns x RGB, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LineSample {
    pub id: String,
    pub pixels: Vec<u8>,
    pub label: String,
    pub meta: DegradationMeta,
}

impl LineSample {
    pub fn to_image(&self) -> image::RgbImage {
        image::RgbImage::from_raw(LINE_WIDTH as u32, LINE_HEIGHT as u32, self.pixels.clone())
            .expect("line buffer has fixed dimensions")
    }

    pub fn png_bytes(&self) -> Result<Vec<u8>, SynthError> {
        let mut out = Vec::new();
        self.to_image()
            .write_to(&mut std::io::Cursor::new(&mut out), image::ImageFormat::Png)?;
        Ok(out)
    }
}

/// `count` characters starting at [`ALPHABET_START`].
pub fn alphabet(size: usize) -> Vec<char> {
    (0..size as u32).filter_map(|k| char::from_u32(ALPHABET_START + k)).collect()
}

/// Rasterizes `label` and applies the degradations in `meta`.
pub fn render_line(label: &str, dict: &CharDict, meta: &DegradationMeta, seed: u64) -> Result<LineSample, SynthError> {
    render_line_with_glyphs(label, dict, meta, seed, DEFAULT_GLYPH_SEED)
}

pub fn render_line_with_glyphs(
    label: &str,
    dict: &CharDict,
    meta: &DegradationMeta,
    seed: u64,
    glyph_seed: u64,
) -> Result<LineSample, SynthError> {
    let chars: Vec<char> = label.chars().collect();
    if chars.is_empty() {
        return Err(SynthError::EmptyLabel);
    }
    if chars.len() > MAX_LABEL_CHARS {
        return Err(SynthError::LabelTooLong(chars.len()));
    }
    if let Some(&c) = chars.iter().find(|&&c| !dict.contains(c)) {
        return Err(SynthError::UnknownCharacter(c));
    }
    meta.validate()?;

    let mut rng = rng::derived(seed, stream::RENDER, 0);
    let mut ink = vec![0.0f64; LINE_HEIGHT * LINE_WIDTH];

    // Glyph placement is affine (stretch, shear, then horizontal fit), so
    // strokes stay straight segments and are rasterized once.
    let shear = meta.shear_deg.to_radians().tan();
    let mid = LINE_HEIGHT as f64 / 2.0;
    let lean = shear.abs() * mid;
    let advance = ADVANCE * meta.stretch_factor;
    let needed = 2.0 * MARGIN + 2.0 * lean + chars.len() as f64 * advance;
    let fit = ((LINE_WIDTH as f64 - 1.0) / needed).min(1.0);
    let place = |glyph_index: usize, p: [f64; 2]| -> [f64; 2] {
        let y = CELL_TOP + p[1] * CELL_HEIGHT;
        let x = MARGIN + lean + glyph_index as f64 * advance + p[0] * CELL_WIDTH * meta.stretch_factor;
        [(x + shear * (y - mid)) * fit, y]
    };
    for (i, &c) in chars.iter().enumerate() {
        let glyph = make_glyph(c as u32, glyph_seed);
        for s in &glyph.strokes {
            draw_segment(&mut ink, place(i, s.from), place(i, s.to), s.thickness * CELL_HEIGHT);
        }
    }

    if meta.blur_sigma > 0.0 {
        gaussian_blur(&mut ink, LINE_WIDTH, LINE_HEIGHT, meta.blur_sigma);
    }
    for _ in 0..meta.stripe_count {
        let x0 = rng.random_range(0..LINE_WIDTH);
        let width = rng.random_range(2..=5);
        let strength = rng.random_range(0.25..0.55);
        for y in 0..LINE_HEIGHT {
            for x in x0..(x0 + width).min(LINE_WIDTH) {
                let v = &mut ink[y * LINE_WIDTH + x];
                *v = v.max(strength);
            }
        }
    }

    let background = rng.random_range(0.90..0.97);
    let tint = [1.0, rng.random_range(0.97..1.0), rng.random_range(0.92..0.98)];
    let noise = (meta.noise_std > 0.0).then(|| Normal::new(0.0, meta.noise_std).expect("validated std"));
    let mut pixels = Vec::with_capacity(LINE_HEIGHT * LINE_WIDTH * CHANNELS);
    for &v in &ink {
        let coverage = (v * meta.contrast).clamp(0.0, 1.0);
        let base = background + (INK_LEVEL - background) * coverage;
        for t in tint {
            let mut value = base * t;
            if let Some(n) = &noise {
                value += n.sample(&mut rng);
            }
            pixels.push((value * 255.0).round().clamp(0.0, 255.0) as u8);
        }
    }

    Ok(LineSample { id: format!("line-{seed:016x}"), pixels, label: label.to_string(), meta: *meta })
}

fn draw_segment(ink: &mut [f64], a: [f64; 2], b: [f64; 2], width: f64) {
    let half = width / 2.0;
    let reach = half + 1.0;
    let x_lo = (a[0].min(b[0]) - reach).floor().max(0.0) as usize;
    let x_hi = ((a[0].max(b[0]) + reach).ceil() as usize).min(LINE_WIDTH);
    let y_lo = (a[1].min(b[1]) - reach).floor().max(0.0) as usize;
    let y_hi = ((a[1].max(b[1]) + reach).ceil() as usize).min(LINE_HEIGHT);
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    for y in y_lo..y_hi {
        for x in x_lo..x_hi {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = if len2 > 0.0 { (((px - a[0]) * dx + (py - a[1]) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
            let (cx, cy) = (a[0] + t * dx - px, a[1] + t * dy - py);
            let coverage = (half + 0.5 - (cx * cx + cy * cy).sqrt()).clamp(0.0, 1.0);
            let v = &mut ink[y * LINE_WIDTH + x];
            *v = v.max(coverage);
        }
    }
}

fn gaussian_blur(buf: &mut [f64], width: usize, height: usize, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    let clamp = |v: isize, hi: usize| v.clamp(0, hi as isize - 1) as usize;

    let mut tmp = vec![0.0; buf.len()];
    for y in 0..height {
        for x in 0..width {
            tmp[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * buf[y * width + clamp(x as isize + k as isize - radius, width)])
                .sum();
        }
    }
    for y in 0..height {
        for x in 0..width {
            buf[y * width + x] = kernel
                .iter()
                .enumerate()
                .map(|(k, w)| w * tmp[clamp(y as isize + k as isize - radius, height) * width + x])
                .sum();
        }
    }
}

/// Line length in `[1, 10]`: one plus a Binomial(9, 4.3/9) draw, mean 5.3.
fn sample_label_len<R: Rng>(rng: &mut R) -> usize {
    let extra = Binomial::new((MAX_LABEL_CHARS - 1) as u64, 4.3 / 9.0).expect("valid binomial");
    1 + extra.sample(rng) as usize
}

/// A generated corpus together with its manifest.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub alphabet: Vec<char>,
    pub profile: DegradationProfile,
    pub samples: Vec<LineSample>,
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    id: String,
    #[serde(flatten)]
    meta: DegradationMeta,
}

impl Corpus {
    /// Manifest path of a sample, relative to the corpus root.
    pub fn image_path(id: &str) -> String {
        format!("images/{id}.png")
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.samples.iter().map(|s| ManifestEntry::new(Self::image_path(&s.id), s.label.clone())).collect()
    }

    /// `image_path<TAB>label` lines, LF terminated.
    pub fn manifest_text(&self) -> String {
        self.manifest().iter().map(|e| format!("{e}\n")).collect()
    }

    /// Writes `images/*.png`, `labels.txt` and `meta.jsonl` under `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<(), SynthError> {
        std::fs::create_dir_all(dir.join("images"))?;
        let encoded: Vec<Result<(String, Vec<u8>), SynthError>> =
            self.samples.par_iter().map(|s| Ok((Self::image_path(&s.id), s.png_bytes()?))).collect();
        for item in encoded {
            let (rel, bytes) = item?;
            std::fs::write(dir.join(rel), bytes)?;
        }
        write_manifest(&dir.join("labels.txt"), &self.manifest())?;
        let meta: Vec<(String, DegradationMeta)> =
            self.samples.iter().map(|s| (Self::image_path(&s.id), s.meta)).collect();
        write_meta_file(&dir.join("meta.jsonl"), &meta)
    }
}

/// Writes `(manifest path, meta)` pairs as one JSON object per line.
pub fn write_meta_file(path: &Path, entries: &[(String, DegradationMeta)]) -> Result<(), SynthError> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for (id, meta) in entries {
        let line = MetaLine { id: id.clone(), meta: *meta };
        writeln!(out, "{}", serde_json::to_string(&line).expect("meta serializes"))?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a `meta.jsonl` sidecar into `(manifest path, meta)` pairs.
pub fn read_meta_file(path: &Path) -> Result<Vec<(String, DegradationMeta)>, SynthError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let m: MetaLine = serde_json::from_str(l)
                .map_err(|e| SynthError::Io(std::io::Error::new(std::io::ErrorKind::InvalidData, e)))?;
            Ok((m.id, m.meta))
        })
        .collect()
}

/// Generates `count` labelled lines. Sample `i` depends only on
/// `(seed, i)`, so generation order does not matter.
pub fn generate_corpus(
    alphabet_size: usize,
    count: usize,
    seed: u64,
    profile: DegradationProfile,
) -> Result<Corpus, SynthError> {
    if !(2..=20_000).contains(&alphabet_size) {
        return Err(SynthError::AlphabetSize(alphabet_size));
    }
    if count == 0 {
        return Err(SynthError::EmptyCorpus);
    }
    let chars = alphabet(alphabet_size);
    let dict = CharDict::from_chars(chars.iter().copied()).expect("generated alphabet is unique");
    let samples = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::derived(seed, stream::SAMPLE, i as u64);
            let len = sample_label_len(&mut rng);
            let label: String = (0..len).map(|_| chars[rng.random_range(0..chars.len())]).collect();
            let meta = profile.sample(&mut rng);
            let render_seed = rng.random::<u64>();
            let mut sample = render_line(&label, &dict, &meta, render_seed)?;
            sample.id = format!("{i:06}");
            Ok(sample)
        })
        .collect::<Result<Vec<_>, SynthError>>()?;
    Ok(Corpus { alphabet: chars, profile, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dict_ab() -> CharDict {
        CharDict::from_chars(['a', 'b']).unwrap()
    }

    #[test]
    fn glyph_is_deterministic_and_bounded() {
        assert_eq!(make_glyph(5, 42), make_glyph(5, 42));
        assert_ne!(make_glyph(5, 42).strokes, make_glyph(6, 42).strokes);
        for id in 0..500 {
            let g = make_glyph(id, 42);
            assert!((3..=8).contains(&g.strokes.len()));
            for s in &g.strokes {
                for p in [s.from, s.to] {
                    assert!((0.0..=1.0).contains(&p[0]) && (0.0..=1.0).contains(&p[1]));
                }
            }
        }
    }

    #[test]
    fn clean_render_is_repeatable() {
        let a = render_line("ab", &dict_ab(), &DegradationMeta::CLEAN, 3).unwrap();
        let b = render_line("ab", &dict_ab(), &DegradationMeta::CLEAN, 3).unwrap();
        assert_eq!(a.pixels, b.pixels);
        assert_eq!(a.pixels.len(), 32 * 280 * 3);
        assert_eq!(a.meta, DegradationMeta::CLEAN);
    }

    #[test]
    fn blur_changes_pixels() {
        let clean = render_line("ab", &dict_ab(), &DegradationMeta::CLEAN, 3).unwrap();
        let meta = DegradationMeta { blur_sigma: 2.0, ..DegradationMeta::CLEAN };
        let blurred = render_line("ab", &dict_ab(), &meta, 3).unwrap();
        let mad: f64 = clean
            .pixels
            .iter()
            .zip(&blurred.pixels)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum::<f64>()
            / clean.pixels.len() as f64;
        assert!(mad > 0.0);
        assert_eq!(blurred.meta, meta);
    }

    #[test]
    fn label_preconditions() {
        let d = dict_ab();
        assert!(matches!(render_line("", &d, &DegradationMeta::CLEAN, 0), Err(SynthError::EmptyLabel)));
        assert!(matches!(
            render_line("abababababa", &d, &DegradationMeta::CLEAN, 0),
            Err(SynthError::LabelTooLong(11))
        ));
        assert!(matches!(render_line("az", &d, &DegradationMeta::CLEAN, 0), Err(SynthError::UnknownCharacter('z'))));
        let bad = DegradationMeta { blur_sigma: f64::NAN, ..DegradationMeta::CLEAN };
        assert!(render_line("a", &d, &bad, 0).is_err());
    }

    #[test]
    fn every_glyph_leaves_ink() {
        let chars = alphabet(476);
        let dict = CharDict::from_chars(chars.iter().copied()).unwrap();
        for &c in &chars {
            let line = render_line(&c.to_string(), &dict, &DegradationMeta::CLEAN, 1).unwrap();
            let darkest = line.pixels.iter().copied().min().unwrap();
            assert!(darkest < 128, "glyph {c:?} rendered blank");
        }
    }

    #[test]
    fn long_stretched_line_fits_width() {
        let chars = alphabet(4);
        let dict = CharDict::from_chars(chars.iter().copied()).unwrap();
        let label: String = chars.iter().cycle().take(10).collect();
        let meta = DegradationMeta { stretch_factor: 1.3, shear_deg: 12.0, ..DegradationMeta::CLEAN };
        let line = render_line(&label, &dict, &meta, 9).unwrap();
        assert_eq!(line.pixels.len(), LINE_HEIGHT * LINE_WIDTH * CHANNELS);
        // Last column stays background: nothing was clipped.
        let last_col_min = (0..LINE_HEIGHT).map(|y| line.pixels[(y * LINE_WIDTH + LINE_WIDTH - 1) * 3]).min().unwrap();
        assert!(last_col_min > 200);
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = generate_corpus(20, 50, 7, DegradationProfile::Heavy).unwrap();
        let b = generate_corpus(20, 50, 7, DegradationProfile::Heavy).unwrap();
        assert_eq!(a.manifest_text(), b.manifest_text());
        assert!(a.samples.iter().zip(&b.samples).all(|(x, y)| x == y));
        for line in a.manifest_text().lines() {
            assert_eq!(line.matches('\t').count(), 1);
        }
    }

    #[test]
    fn profile_names_round_trip() {
        for p in [DegradationProfile::Clean, DegradationProfile::Light, DegradationProfile::Heavy] {
            assert_eq!(p.to_string().parse::<DegradationProfile>().unwrap(), p);
        }
        assert!("banana".parse::<DegradationProfile>().is_err());
    }
}
