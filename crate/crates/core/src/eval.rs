//! Accuracy and confidence metrics, stratified error analysis and
//! before/after comparison tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ctc::Prediction;
use crate::synth::DegradationMeta;

#[derive(Clone, Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("{predictions} predictions for {truths} ground truths")]
    LengthMismatch { predictions: usize, truths: usize },
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("missing metadata: {0}")]
    MissingMetadata(&'static str),
    #[error("reports cover {before} and {after} samples")]
    SampleCountMismatch { before: usize, after: usize },
    #[error("prediction file line {line}: expected id<TAB>text<TAB>confidence")]
    BadPredictionLine { line: usize },
    #[error("unknown stratification scheme {0:?}")]
    UnknownScheme(String),
}

/// Levenshtein distance over Unicode scalar values.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// One line of a prediction file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub text: String,
    pub confidence: f64,
}

impl PredictionRecord {
    pub fn from_prediction(id: impl Into<String>, p: &Prediction) -> Self {
        Self { id: id.into(), text: p.text.clone(), confidence: p.confidence }
    }
}

pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRecord>, EvalError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let bad = EvalError::BadPredictionLine { line: i + 1 };
            let l = l.strip_suffix('\r').unwrap_or(l);
            let mut parts = l.split('\t');
            let (Some(id), Some(text), Some(conf), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
                return Err(bad);
            };
            let confidence: f64 = conf.trim().parse().map_err(|_| bad.clone())?;
            if !(0.0..=1.0).contains(&confidence) {
                return Err(bad);
            }
            Ok(PredictionRecord { id: id.to_string(), text: text.to_string(), confidence })
        })
        .collect()
}

pub fn format_predictions(records: &[PredictionRecord]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = writeln!(out, "{}\t{}\t{}", r.id, r.text, r.confidence);
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub name: String,
    pub n: usize,
    pub exact_accuracy: f64,
}

/// Per-bucket exact accuracy under one scheme. Buckets partition the
/// evaluated samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stratification {
    pub scheme: String,
    pub strata: Vec<Stratum>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_samples: usize,
    pub exact_accuracy: f64,
    pub partial_accuracy: f64,
    pub avg_confidence: f64,
    pub total_recognized_chars: u64,
    /// Maximum edit distance still counted as a partial match.
    pub partial_threshold: usize,
    #[serde(default)]
    pub strata: Vec<Stratification>,
}

pub const DEFAULT_PARTIAL_THRESHOLD: usize = 1;

pub fn evaluate(predictions: &[Prediction], ground_truths: &[String]) -> Result<EvalReport, EvalError> {
    let recs: Vec<PredictionRecord> =
        predictions.iter().enumerate().map(|(i, p)| PredictionRecord::from_prediction(i.to_string(), p)).collect();
    evaluate_records(&recs, ground_truths, DEFAULT_PARTIAL_THRESHOLD)
}

pub fn evaluate_records(
    predictions: &[PredictionRecord],
    ground_truths: &[String],
    partial_threshold: usize,
) -> Result<EvalReport, EvalError> {
    if predictions.len() != ground_truths.len() {
        return Err(EvalError::LengthMismatch { predictions: predictions.len(), truths: ground_truths.len() });
    }
    if predictions.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = predictions.len();
    let (mut exact, mut partial, mut conf, mut chars) = (0usize, 0usize, 0.0, 0u64);
    for (p, gt) in predictions.iter().zip(ground_truths) {
        if p.text == *gt {
            exact += 1;
        }
        if edit_distance(&p.text, gt) <= partial_threshold {
            partial += 1;
        }
        conf += p.confidence;
        chars += p.text.chars().count() as u64;
    }
    Ok(EvalReport {
        n_samples: n,
        exact_accuracy: exact as f64 / n as f64,
        partial_accuracy: partial as f64 / n as f64,
        avg_confidence: conf / n as f64,
        total_recognized_chars: chars,
        partial_threshold,
        strata: Vec::new(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Blur,
    Noise,
    CharRarity,
    LabelLength,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Blur, Scheme::Noise, Scheme::CharRarity, Scheme::LabelLength];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::Blur => "blur",
            Scheme::Noise => "noise",
            Scheme::CharRarity => "char_rarity",
            Scheme::LabelLength => "label_length",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| EvalError::UnknownScheme(s.to_string()))
    }
}

/// Inputs for [`stratify`]; optional parts are required only by the
/// schemes that use them.
pub struct StrataInput<'a> {
    pub ground_truths: &'a [String],
    pub predicted: &'a [String],
    pub meta: Option<&'a [DegradationMeta]>,
    /// Character counts over the training labels.
    pub frequencies: Option<&'a BTreeMap<char, u64>>,
}

pub fn char_frequencies<'a, I: IntoIterator<Item = &'a str>>(labels: I) -> BTreeMap<char, u64> {
    let mut out = BTreeMap::new();
    for l in labels {
        for c in l.chars() {
            *out.entry(c).or_insert(0) += 1;
        }
    }
    out
}

fn bucket_by(names: &[&str], keys: &[usize], hits: &[bool]) -> Vec<Stratum> {
    names
        .iter()
        .enumerate()
        .map(|(b, name)| {
            let members: Vec<bool> = keys.iter().zip(hits).filter(|(k, _)| **k == b).map(|(_, h)| *h).collect();
            let n = members.len();
            let ok = members.iter().filter(|h| **h).count();
            Stratum { name: name.to_string(), n, exact_accuracy: if n == 0 { 0.0 } else { ok as f64 / n as f64 } }
        })
        .collect()
}

fn three_way(v: f64, upper: f64) -> usize {
    if v <= 0.0 {
        0
    } else if v <= upper {
        1
    } else {
        2
    }
}

pub fn stratify(input: &StrataInput, scheme: Scheme) -> Result<Stratification, EvalError> {
    let n = input.ground_truths.len();
    if input.predicted.len() != n {
        return Err(EvalError::LengthMismatch { predictions: input.predicted.len(), truths: n });
    }
    let hits: Vec<bool> = input.predicted.iter().zip(input.ground_truths).map(|(p, g)| p == g).collect();
    let meta = || match input.meta {
        Some(m) if m.len() == n => Ok(m),
        _ => Err(EvalError::MissingMetadata("degradation metadata for every sample")),
    };
    let strata = match scheme {
        Scheme::Blur => {
            let keys: Vec<usize> = meta()?.iter().map(|m| three_way(m.blur_sigma, 1.0)).collect();
            bucket_by(&["sigma=0", "0<sigma<=1", "sigma>1"], &keys, &hits)
        }
        Scheme::Noise => {
            let keys: Vec<usize> = meta()?.iter().map(|m| three_way(m.noise_std, 0.05)).collect();
            bucket_by(&["noise=0", "0<noise<=0.05", "noise>0.05"], &keys, &hits)
        }
        Scheme::CharRarity => {
            let freq = input.frequencies.ok_or(EvalError::MissingMetadata("training character frequencies"))?;
            let mut counts: Vec<u64> = freq.values().copied().collect();
            counts.sort_unstable();
            let q = |f: f64| counts.get(((counts.len() as f64 - 1.0) * f).round() as usize).copied().unwrap_or(0);
            let cuts = [q(0.25), q(0.5), q(0.75)];
            let keys: Vec<usize> = input
                .ground_truths
                .iter()
                .map(|g| {
                    let min = g.chars().map(|c| freq.get(&c).copied().unwrap_or(0)).min().unwrap_or(0);
                    cuts.iter().filter(|&&c| min > c).count()
                })
                .collect();
            bucket_by(&["q1_rarest", "q2", "q3", "q4_common"], &keys, &hits)
        }
        Scheme::LabelLength => {
            let keys: Vec<usize> = input
                .ground_truths
                .iter()
                .map(|g| match g.chars().count() {
                    0..=3 => 0,
                    4..=6 => 1,
                    7..=10 => 2,
                    _ => 3,
                })
                .collect();
            bucket_by(&["len<=3", "len4-6", "len7-10", "len>10"], &keys, &hits)
        }
    };
    Ok(Stratification { scheme: scheme.name().to_string(), strata })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub exact_accuracy: f64,
    pub partial_accuracy: f64,
    pub avg_confidence: f64,
    pub total_recognized_chars: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub before: EvalReport,
    pub after: EvalReport,
    pub deltas: MetricDeltas,
}

pub fn compare(before: &EvalReport, after: &EvalReport) -> Result<ComparisonReport, EvalError> {
    if before.n_samples != after.n_samples {
        return Err(EvalError::SampleCountMismatch { before: before.n_samples, after: after.n_samples });
    }
    let deltas = MetricDeltas {
        exact_accuracy: after.exact_accuracy - before.exact_accuracy,
        partial_accuracy: after.partial_accuracy - before.partial_accuracy,
        avg_confidence: after.avg_confidence - before.avg_confidence,
        total_recognized_chars: after.total_recognized_chars as i64 - before.total_recognized_chars as i64,
    };
    Ok(ComparisonReport { before: before.clone(), after: after.clone(), deltas })
}

fn pct(v: f64) -> String {
    format!("{:.1}%", v * 100.0)
}

fn signed_pct(v: f64) -> String {
    let s = format!("{:.1}", v * 100.0);
    if s.starts_with('-') {
        format!("{s}%")
    } else {
        format!("+{s}%")
    }
}

/// `4865` -> `4,865`.
pub fn group_thousands(v: i64) -> String {
    let digits = v.unsigned_abs().to_string();
    let mut out = String::new();
    for (i, c) in digits.chars().enumerate() {
        if i > 0 && (digits.len() - i).is_multiple_of(3) {
            out.push(',');
        }
        out.push(c);
    }
    if v < 0 {
        format!("-{out}")
    } else {
        out
    }
}

impl ComparisonReport {
    /// Aligned plain-text table: metric, before, after, signed delta.
    pub fn render_table(&self) -> String {
        let (b, a, d) = (&self.before, &self.after, &self.deltas);
        let chars_delta = if d.total_recognized_chars >= 0 {
            format!("+{}", group_thousands(d.total_recognized_chars))
        } else {
            group_thousands(d.total_recognized_chars)
        };
        let rows = [
            ["Metric".to_string(), "Before".into(), "After".into(), "Delta".into()],
            ["Exact Accuracy".into(), pct(b.exact_accuracy), pct(a.exact_accuracy), signed_pct(d.exact_accuracy)],
            ["Partial Accuracy".into(), pct(b.partial_accuracy), pct(a.partial_accuracy), signed_pct(d.partial_accuracy)],
            ["Average Confidence".into(), pct(b.avg_confidence), pct(a.avg_confidence), signed_pct(d.avg_confidence)],
            [
                "Total Recognized Characters".into(),
                group_thousands(b.total_recognized_chars as i64),
                group_thousands(a.total_recognized_chars as i64),
                chars_delta,
            ],
        ];
        let width = |c: usize| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0);
        let w = [width(0), width(1), width(2), width(3)];
        let mut out = String::new();
        for r in &rows {
            let _ = writeln!(out, "{:<w0$}  {:>w1$}  {:>w2$}  {:>w3$}", r[0], r[1], r[2], r[3], w0 = w[0], w1 = w[1], w2 = w[2], w3 = w[3]);
        }
        out
    }
}

impl EvalReport {
    /// Two-column table of this report's metrics followed by its strata.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<28}  {:>8}", "Samples", self.n_samples);
        let _ = writeln!(out, "{:<28}  {:>8}", "Exact Accuracy", pct(self.exact_accuracy));
        let _ = writeln!(out, "{:<28}  {:>8}", "Partial Accuracy", pct(self.partial_accuracy));
        let _ = writeln!(out, "{:<28}  {:>8}", "Average Confidence", pct(self.avg_confidence));
        let _ = writeln!(out, "{:<28}  {:>8}", "Total Recognized Characters", group_thousands(self.total_recognized_chars as i64));
        for s in &self.strata {
            let _ = writeln!(out, "\n[{}]", s.scheme);
            for b in &s.strata {
                let _ = writeln!(out, "  {:<16} n={:<6} exact={}", b.name, b.n, pct(b.exact_accuracy));
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(text: &str, confidence: f64) -> PredictionRecord {
        PredictionRecord { id: String::new(), text: text.into(), confidence }
    }

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(edit_distance("abc", "abc"), 0);
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("a", ""), 1);
        assert_eq!(edit_distance("", ""), 0);
        assert_eq!(edit_distance("一二三", "一三"), 1);
    }

    #[test]
    fn evaluate_examples() {
        let r = evaluate_records(&[rec("ab", 1.0), rec("cd", 1.0)], &strings(&["ab", "cd"]), 1).unwrap();
        assert_eq!((r.exact_accuracy, r.partial_accuracy, r.avg_confidence), (1.0, 1.0, 1.0));

        let preds = [rec("abc", 0.9), rec("def", 0.8), rec("gxi", 0.7), rec("xyz", 0.6)];
        let r = evaluate_records(&preds, &strings(&["abc", "def", "ghi", "jkl"]), 1).unwrap();
        assert_eq!((r.exact_accuracy, r.partial_accuracy), (0.5, 0.75));
        assert_eq!(r.total_recognized_chars, 12);

        let r = evaluate_records(&[rec("ab", 0.5), rec("cde", 0.5)], &strings(&["x", "y"]), 1).unwrap();
        assert_eq!(r.total_recognized_chars, 5);
    }

    #[test]
    fn evaluate_errors() {
        assert_eq!(evaluate_records(&[], &[], 1), Err(EvalError::EmptyInput));
        assert!(matches!(evaluate_records(&[rec("a", 1.0)], &[], 1), Err(EvalError::LengthMismatch { .. })));
    }

    #[test]
    fn prediction_file_round_trip() {
        let recs = vec![
            PredictionRecord { id: "000001".into(), text: "一二".into(), confidence: 0.5 },
            PredictionRecord { id: "000002".into(), text: String::new(), confidence: 0.0 },
        ];
        assert_eq!(parse_predictions(&format_predictions(&recs)).unwrap(), recs);
        assert_eq!(parse_predictions("a\tb"), Err(EvalError::BadPredictionLine { line: 1 }));
        assert_eq!(parse_predictions("a\tb\t1.5"), Err(EvalError::BadPredictionLine { line: 1 }));
    }

    #[test]
    fn strata_partition_and_missing_metadata() {
        let gts = strings(&["ab", "abcde", "abcdefgh", "a"]);
        let preds = strings(&["ab", "abcdx", "abcdefgh", "b"]);
        let meta = vec![DegradationMeta::CLEAN; 4];
        let input = StrataInput { ground_truths: &gts, predicted: &preds, meta: Some(&meta), frequencies: None };
        let blur = stratify(&input, Scheme::Blur).unwrap();
        assert_eq!(blur.strata[0].n, 4);
        assert_eq!(blur.strata[0].exact_accuracy, 0.5);
        let len = stratify(&input, Scheme::LabelLength).unwrap();
        assert_eq!(len.strata.iter().map(|s| s.n).sum::<usize>(), 4);
        assert_eq!(stratify(&input, Scheme::CharRarity), Err(EvalError::MissingMetadata("training character frequencies")));
        let freq = char_frequencies(gts.iter().map(|s| s.as_str()));
        let input = StrataInput { frequencies: Some(&freq), meta: None, ..input };
        assert_eq!(stratify(&input, Scheme::CharRarity).unwrap().strata.iter().map(|s| s.n).sum::<usize>(), 4);
        assert!(matches!(stratify(&input, Scheme::Noise), Err(EvalError::MissingMetadata(_))));
    }

    fn report(exact: f64, partial: f64, conf: f64, chars: u64) -> EvalReport {
        EvalReport {
            n_samples: 1000,
            exact_accuracy: exact,
            partial_accuracy: partial,
            avg_confidence: conf,
            total_recognized_chars: chars,
            partial_threshold: 1,
            strata: Vec::new(),
        }
    }

    #[test]
    fn comparison_table_formatting() {
        let before = report(0.375, 0.582, 0.813, 4865);
        let after = report(0.5, 0.703, 0.911, 5311);
        let c = compare(&before, &after).unwrap();
        assert_eq!(c.deltas.total_recognized_chars, 446);
        let table = c.render_table();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines.len(), 5);
        for (line, cells) in lines[1..].iter().zip([
            ["Exact Accuracy", "37.5%", "50.0%", "+12.5%"],
            ["Partial Accuracy", "58.2%", "70.3%", "+12.1%"],
            ["Average Confidence", "81.3%", "91.1%", "+9.8%"],
            ["Total Recognized Characters", "4,865", "5,311", "+446"],
        ]) {
            assert!(line.starts_with(cells[0]), "{line}");
            let tail: Vec<&str> = line[cells[0].len()..].split_whitespace().collect();
            assert_eq!(tail, cells[1..].to_vec());
        }
        let widths: Vec<usize> = lines.iter().map(|l| l.chars().count()).collect();
        assert!(widths.iter().all(|w| *w == widths[0]));
    }

    #[test]
    fn compare_rules() {
        let r = report(0.5, 0.6, 0.7, 10);
        let c = compare(&r, &r).unwrap();
        assert_eq!(c.deltas, MetricDeltas { exact_accuracy: 0.0, partial_accuracy: 0.0, avg_confidence: 0.0, total_recognized_chars: 0 });
        let mut other = r.clone();
        other.n_samples = 3;
        assert_eq!(compare(&r, &other), Err(EvalError::SampleCountMismatch { before: 1000, after: 3 }));
        assert_eq!(group_thousands(1234567), "1,234,567");
        assert_eq!(group_thousands(-12), "-12");
    }
}
