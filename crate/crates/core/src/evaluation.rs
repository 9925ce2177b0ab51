//! Frame-level AUC-ROC / AP, boundary precision-recall and annotation ingestion.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("labels need at least one positive and one negative frame")]
    DegenerateLabels,
    #[error("scores and labels differ in length ({scores} vs {labels})")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("score at frame {0} is not finite")]
    NonFiniteScore(usize),
    #[error("line {line}: {message}")]
    ParseError { line: u64, message: String },
    #[error("video {video}: ranges [{a_start},{a_end}) and [{b_start},{b_end}) overlap")]
    OverlappingRanges {
        video: String,
        a_start: usize,
        a_end: usize,
        b_start: usize,
        b_end: usize,
    },
    #[error("video {video}: range [{start},{end}) lies outside [0,{total})")]
    RangeOutOfBounds {
        video: String,
        start: usize,
        end: usize,
        total: usize,
    },
    #[error("no annotation for video {0}")]
    MissingAnnotation(String),
    #[error("video {video}: {found} frame scores but {expected} annotated frames")]
    FrameCountMismatch {
        video: String,
        expected: usize,
        found: usize,
    },
    #[error("cannot read annotations: {0}")]
    Io(#[from] std::io::Error),
}

fn check_inputs(scores: &[f64], labels: &[bool]) -> Result<(usize, usize), EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch {
            scores: scores.len(),
            labels: labels.len(),
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(EvalError::NonFiniteScore(i));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    Ok((positives, labels.len() - positives))
}

/// Indices sorted by score, grouped into runs of equal score.
fn tie_groups(scores: &[f64], descending: bool) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        let c = scores[a].total_cmp(&scores[b]);
        if descending {
            c.reverse()
        } else {
            c
        }
    });
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for i in order {
        match groups.last_mut() {
            Some(g) if scores[g[0]] == scores[i] => g.push(i),
            _ => groups.push(vec![i]),
        }
    }
    groups
}

/// Probability that a random positive frame outscores a random negative one,
/// with ties worth half.
pub fn auc_roc(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(EvalError::DegenerateLabels);
    }
    // Twice the Mann-Whitney U, kept integral.
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    for group in tie_groups(scores, false) {
        let p = group.iter().filter(|&&i| labels[i]).count() as u128;
        let n = group.len() as u128 - p;
        twice_u += p * (2 * neg_below + n);
        neg_below += n;
    }
    Ok(twice_u as f64 / (2 * pos as u128 * neg as u128) as f64)
}

/// `Σ (R_k − R_{k−1}) · P_k` over distinct-score thresholds, highest first.
pub fn average_precision(scores: &[f64], labels: &[bool]) -> Result<f64, EvalError> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(EvalError::DegenerateLabels);
    }
    let mut ap = 0.0;
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    for group in tie_groups(scores, true) {
        tp += group.iter().filter(|&&i| labels[i]).count();
        seen += group.len();
        let precision = tp as f64 / seen as f64;
        let recall = tp as f64 / pos as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
    }
    Ok(ap)
}

/// `(fpr, tpr)` after each distinct-score threshold, highest first, starting at `(0, 0)`.
pub fn roc_points(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>, EvalError> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(EvalError::DegenerateLabels);
    }
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    for group in tie_groups(scores, true) {
        let p = group.iter().filter(|&&i| labels[i]).count();
        tp += p;
        fp += group.len() - p;
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_counts(matched: usize, predicted: usize, truth: usize) -> Self {
        let precision = if predicted == 0 {
            1.0
        } else {
            matched as f64 / predicted as f64
        };
        let recall = if truth == 0 {
            1.0
        } else {
            matched as f64 / truth as f64
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }
}

/// Number of predictions matched one-to-one to truth indices within `tolerance`.
///
/// Each prediction, in order, takes the nearest still-unmatched truth index
/// (the earlier one on ties).
pub fn match_boundaries(predicted: &[usize], truth: &[usize], tolerance: usize) -> usize {
    let mut used = vec![false; truth.len()];
    let mut matched = 0;
    for &p in predicted {
        let best = (0..truth.len())
            .filter(|&j| !used[j] && p.abs_diff(truth[j]) <= tolerance)
            .min_by_key(|&j| p.abs_diff(truth[j]));
        if let Some(j) = best {
            used[j] = true;
            matched += 1;
        }
    }
    matched
}

/// Boundary precision, recall and F1. An empty prediction scores precision 1;
/// an empty truth set scores recall 1.
pub fn boundary_prf(predicted: &[usize], truth: &[usize], tolerance: usize) -> Prf {
    let matched = match_boundaries(predicted, truth, tolerance);
    Prf::from_counts(matched, predicted.len(), truth.len())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub video_id: String,
    pub total_frames: usize,
    /// Sorted, disjoint `[start, end)` ranges.
    pub anomalous_ranges: Vec<(usize, usize)>,
}

impl GroundTruth {
    pub fn labels(&self) -> Vec<bool> {
        let mut labels = vec![false; self.total_frames];
        for &(s, e) in &self.anomalous_ranges {
            labels[s..e].iter_mut().for_each(|l| *l = true);
        }
        labels
    }
}

fn parse_field(
    record: &csv::StringRecord,
    idx: usize,
    line: u64,
    name: &str,
) -> Result<usize, EvalError> {
    let raw = record.get(idx).unwrap_or_default();
    raw.parse().map_err(|_| EvalError::ParseError {
        line,
        message: format!("{name} must be a non-negative integer, got {raw:?}"),
    })
}

/// Parses `video_id,total_frames[,start,end]` rows. A leading header row is
/// skipped and rows repeat per range. Touching ranges are merged.
pub fn parse_annotations<R: std::io::Read>(
    reader: R,
) -> Result<BTreeMap<String, GroundTruth>, EvalError> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let mut videos: BTreeMap<String, GroundTruth> = BTreeMap::new();
    for (n, record) in csv.records().enumerate() {
        let record = record.map_err(|e| EvalError::ParseError {
            line: e.position().map_or(n as u64 + 1, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(n as u64 + 1, |p| p.line());
        if record.iter().all(str::is_empty) {
            continue;
        }
        if n == 0 && record.get(0) == Some("video_id") {
            continue;
        }
        if record.len() != 2 && record.len() != 4 {
            return Err(EvalError::ParseError {
                line,
                message: format!("expected 2 or 4 fields, found {}", record.len()),
            });
        }
        let video = record[0].to_string();
        if video.is_empty() {
            return Err(EvalError::ParseError {
                line,
                message: "empty video id".into(),
            });
        }
        let total = parse_field(&record, 1, line, "total_frames")?;
        let entry = videos.entry(video.clone()).or_insert_with(|| GroundTruth {
            video_id: video.clone(),
            total_frames: total,
            anomalous_ranges: Vec::new(),
        });
        if entry.total_frames != total {
            return Err(EvalError::ParseError {
                line,
                message: format!(
                    "video {video} declared with {total} frames, earlier rows say {}",
                    entry.total_frames
                ),
            });
        }
        if record.len() == 4 {
            let start = parse_field(&record, 2, line, "start")?;
            let end = parse_field(&record, 3, line, "end")?;
            if start >= end {
                return Err(EvalError::ParseError {
                    line,
                    message: format!("empty or inverted range [{start},{end})"),
                });
            }
            if end > total {
                return Err(EvalError::RangeOutOfBounds {
                    video,
                    start,
                    end,
                    total,
                });
            }
            entry.anomalous_ranges.push((start, end));
        }
    }
    for truth in videos.values_mut() {
        normalize_ranges(truth)?;
    }
    Ok(videos)
}

fn normalize_ranges(truth: &mut GroundTruth) -> Result<(), EvalError> {
    truth.anomalous_ranges.sort_unstable();
    let mut merged: Vec<(usize, usize)> = Vec::with_capacity(truth.anomalous_ranges.len());
    for &(s, e) in &truth.anomalous_ranges {
        match merged.last_mut() {
            Some(last) if s < last.1 => {
                return Err(EvalError::OverlappingRanges {
                    video: truth.video_id.clone(),
                    a_start: last.0,
                    a_end: last.1,
                    b_start: s,
                    b_end: e,
                })
            }
            Some(last) if s == last.1 => last.1 = e,
            _ => merged.push((s, e)),
        }
    }
    truth.anomalous_ranges = merged;
    Ok(())
}

pub fn read_annotations(
    path: impl AsRef<Path>,
) -> Result<BTreeMap<String, GroundTruth>, EvalError> {
    parse_annotations(std::fs::File::open(path)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    /// `None` when the video has only one label class.
    pub auc: Option<f64>,
    pub ap: Option<f64>,
    pub n_frames: usize,
    pub n_positive: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub auc: f64,
    pub ap: f64,
    pub n_frames: usize,
    pub n_positive: usize,
    pub per_video: BTreeMap<String, VideoMetrics>,
}

/// Corpus AUC/AP over the concatenation of every video's frames, plus per-video numbers.
pub fn evaluate_corpus<'a>(
    results: impl IntoIterator<Item = (&'a str, &'a [f64])>,
    truth: &BTreeMap<String, GroundTruth>,
) -> Result<MetricReport, EvalError> {
    let mut all_scores = Vec::new();
    let mut all_labels = Vec::new();
    let mut per_video = BTreeMap::new();
    for (video, scores) in results {
        let gt = truth
            .get(video)
            .ok_or_else(|| EvalError::MissingAnnotation(video.to_string()))?;
        if gt.total_frames != scores.len() {
            return Err(EvalError::FrameCountMismatch {
                video: video.to_string(),
                expected: gt.total_frames,
                found: scores.len(),
            });
        }
        let labels = gt.labels();
        let n_positive = labels.iter().filter(|&&l| l).count();
        per_video.insert(
            video.to_string(),
            VideoMetrics {
                auc: auc_roc(scores, &labels).ok(),
                ap: average_precision(scores, &labels).ok(),
                n_frames: scores.len(),
                n_positive,
            },
        );
        all_scores.extend_from_slice(scores);
        all_labels.extend(labels);
    }
    Ok(MetricReport {
        auc: auc_roc(&all_scores, &all_labels)?,
        ap: average_precision(&all_scores, &all_labels)?,
        n_frames: all_scores.len(),
        n_positive: all_labels.iter().filter(|&&l| l).count(),
        per_video,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bits(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&b| b == 1).collect()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc(&[0.2, 0.8], &bits(&[0, 1])).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.8, 0.2], &bits(&[0, 1])).unwrap(), 0.0);
        assert_eq!(
            auc_roc(&[0.1, 0.4, 0.35, 0.8], &bits(&[0, 0, 1, 1])).unwrap(),
            0.75
        );
        assert_eq!(auc_roc(&[0.5, 0.5], &bits(&[0, 1])).unwrap(), 0.5);
    }

    #[test]
    fn degenerate_labels() {
        assert!(matches!(
            auc_roc(&[0.1, 0.2], &bits(&[0, 0])),
            Err(EvalError::DegenerateLabels)
        ));
        assert!(matches!(
            auc_roc(&[0.1, 0.2], &bits(&[1, 1])),
            Err(EvalError::DegenerateLabels)
        ));
        assert!(matches!(
            average_precision(&[0.1, 0.2], &bits(&[0, 0])),
            Err(EvalError::DegenerateLabels)
        ));
        assert_eq!(average_precision(&[0.1, 0.2], &bits(&[1, 1])).unwrap(), 1.0);
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&[0.9, 0.1], &bits(&[1, 0])).unwrap(), 1.0);
        assert_eq!(average_precision(&[0.9, 0.1], &bits(&[0, 1])).unwrap(), 0.5);
        let ap = average_precision(&[0.9, 0.8, 0.7], &bits(&[1, 0, 1])).unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn tied_scores_form_one_threshold() {
        // One threshold holding everything: precision 1/2 at recall 1.
        assert_eq!(average_precision(&[0.3, 0.3], &bits(&[1, 0])).unwrap(), 0.5);
    }

    #[test]
    fn roc_points_end_at_one() {
        let pts = roc_points(&[0.1, 0.4, 0.35, 0.8], &bits(&[0, 0, 1, 1])).unwrap();
        assert_eq!(pts.first(), Some(&(0.0, 0.0)));
        assert_eq!(pts.last(), Some(&(1.0, 1.0)));
        assert_eq!(pts.len(), 5);
    }

    #[test]
    fn prf_examples() {
        let one = Prf {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        };
        assert_eq!(boundary_prf(&[100, 300], &[100, 300], 30), one);
        assert_eq!(boundary_prf(&[], &[], 30), one);
        assert_eq!(
            boundary_prf(&[], &[100], 30),
            Prf {
                precision: 1.0,
                recall: 0.0,
                f1: 0.0
            }
        );
        assert_eq!(boundary_prf(&[98], &[100], 30), one);
        let p = boundary_prf(&[98, 140], &[100], 30);
        assert_eq!((p.precision, p.recall), (0.5, 1.0));
    }

    #[test]
    fn matching_is_one_to_one() {
        assert_eq!(match_boundaries(&[99, 101], &[100], 30), 1);
        assert_eq!(match_boundaries(&[110, 95], &[100, 120], 30), 2);
    }

    fn parse(text: &str) -> Result<BTreeMap<String, GroundTruth>, EvalError> {
        parse_annotations(text.as_bytes())
    }

    #[test]
    fn annotation_rows() {
        let gt = parse("v1,300,100,200\nv2,500\n").unwrap();
        assert_eq!(gt["v1"].anomalous_ranges, vec![(100, 200)]);
        assert_eq!(gt["v1"].total_frames, 300);
        assert!(gt["v2"].anomalous_ranges.is_empty());
        assert_eq!(gt["v2"].total_frames, 500);
    }

    #[test]
    fn annotation_header_and_merging() {
        let gt = parse("video_id,total_frames,start,end\nv,100,50,60\nv,100,10,20\nv,100,20,30\n")
            .unwrap();
        assert_eq!(gt["v"].anomalous_ranges, vec![(10, 30), (50, 60)]);
        let labels = gt["v"].labels();
        assert_eq!(labels.iter().filter(|&&l| l).count(), 30);
    }

    #[test]
    fn annotation_errors() {
        assert!(matches!(
            parse("v3,100,50,150"),
            Err(EvalError::RangeOutOfBounds { .. })
        ));
        assert!(matches!(
            parse("v,100,10,30\nv,100,20,40"),
            Err(EvalError::OverlappingRanges { .. })
        ));
        match parse("v,100\nw,abc\n") {
            Err(EvalError::ParseError { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            parse("v,100,5"),
            Err(EvalError::ParseError { line: 1, .. })
        ));
    }

    #[test]
    fn corpus_concatenates_frames() {
        let gt = parse("a,2,1,2\nb,2\n").unwrap();
        let a = [0.1, 0.4];
        let b = [0.35, 0.8];
        let report = evaluate_corpus([("a", &a[..]), ("b", &b[..])], &gt).unwrap();
        assert_eq!(report.n_frames, 4);
        assert_eq!(report.n_positive, 1);
        // Positive 0.4 beats 0.1 and 0.35, loses to 0.8.
        assert!((report.auc - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(report.per_video["a"].auc, Some(1.0));
        assert_eq!(report.per_video["b"].auc, None);
    }

    #[test]
    fn all_normal_corpus_is_degenerate() {
        let gt = parse("a,2\n").unwrap();
        let a = [0.1, 0.4];
        assert!(matches!(
            evaluate_corpus([("a", &a[..])], &gt),
            Err(EvalError::DegenerateLabels)
        ));
    }
}
