//! Multi-label evaluation: mAP and thresholded precision/recall/F1.

use serde::{Deserialize, Serialize};

use crate::error::{input, Error, Result};
use crate::overlap::LabelVector;

/// Labels are predicted positive when the score strictly exceeds this.
pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Scores for `N` samples over `C` classes, with ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionSet {
    scores: Vec<Vec<f64>>,
    truths: Vec<LabelVector>,
    num_classes: usize,
}

impl PredictionSet {
    pub fn new(scores: Vec<Vec<f64>>, truths: Vec<LabelVector>) -> Result<Self> {
        if scores.len() != truths.len() {
            return input(format!("{} score rows but {} label vectors", scores.len(), truths.len()));
        }
        let Some(first) = truths.first() else {
            return input("empty prediction set");
        };
        let c = first.len();
        if scores.iter().any(|s| s.len() != c) || truths.iter().any(|t| t.len() != c) {
            return input(format!("every row must have {c} classes"));
        }
        if scores.iter().flatten().any(|s| !(0.0..=1.0).contains(s)) {
            return input("scores must be finite and in [0,1]");
        }
        Ok(Self { scores, truths, num_classes: c })
    }

    pub fn num_samples(&self) -> usize {
        self.scores.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn class_scores(&self, k: usize) -> Vec<f64> {
        self.scores.iter().map(|s| s[k]).collect()
    }

    pub fn class_truths(&self, k: usize) -> Vec<bool> {
        self.truths.iter().map(|t| t.get(k)).collect()
    }
}

/// Mean over positive samples of precision at their rank, ranking by
/// descending score with ties kept in input order. `None` when there are
/// no positives.
pub fn average_precision(scores: &[f64], truths: &[bool]) -> Result<Option<f64>> {
    if scores.len() != truths.len() {
        return input(format!("{} scores but {} truths", scores.len(), truths.len()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if truths[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok((hits > 0).then(|| sum / hits as f64))
}

/// Unweighted mean AP over classes with at least one positive.
pub fn map_score(preds: &PredictionSet) -> Result<f64> {
    let aps = class_aps(preds)?;
    let present: Vec<f64> = aps.into_iter().flatten().collect();
    if present.is_empty() {
        return input("no class has a positive sample");
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

fn class_aps(preds: &PredictionSet) -> Result<Vec<Option<f64>>> {
    (0..preds.num_classes()).map(|k| average_precision(&preds.class_scores(k), &preds.class_truths(k))).collect()
}

/// `2PR/(P+R)`, or 0 when both are 0.
pub fn f1(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

/// `num/den`, or 1 when nothing was counted.
fn ratio_or_one(num: usize, den: usize) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metrics {
    pub map: f64,
    pub cp: f64,
    pub cr: f64,
    pub cf1: f64,
    pub op: f64,
    #[serde(rename = "or")]
    pub or_: f64,
    pub of1: f64,
}

impl Metrics {
    pub const KEYS: [&'static str; 7] = ["map", "cp", "cr", "cf1", "op", "or", "of1"];

    pub fn values(&self) -> [f64; 7] {
        [self.map, self.cp, self.cr, self.cf1, self.op, self.or_, self.of1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassMetrics {
    /// Absent when the class has no positives.
    pub ap: Option<f64>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub metrics: Metrics,
    pub per_class: Vec<ClassMetrics>,
}

/// Thresholded metrics. A class with no predicted positives has precision
/// 1, and one with no actual positives has recall 1; the pooled versions
/// follow the same rule. CF1 and OF1 are harmonic means of the averaged
/// precision and recall.
pub fn pr_f1_report(preds: &PredictionSet, threshold: f64) -> Result<MetricsReport> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return input(format!("threshold {threshold} outside (0,1)"));
    }
    let aps = class_aps(preds)?;
    let map = map_score(preds)?;
    let (mut tp_all, mut pred_all, mut pos_all) = (0, 0, 0);
    let mut per_class = Vec::with_capacity(preds.num_classes());
    for (k, ap) in aps.into_iter().enumerate() {
        let (mut tp, mut predicted, mut positive) = (0, 0, 0);
        for (s, t) in preds.scores.iter().zip(&preds.truths) {
            let p = s[k] > threshold;
            let y = t.get(k);
            tp += usize::from(p && y);
            predicted += usize::from(p);
            positive += usize::from(y);
        }
        tp_all += tp;
        pred_all += predicted;
        pos_all += positive;
        let precision = ratio_or_one(tp, predicted);
        let recall = ratio_or_one(tp, positive);
        per_class.push(ClassMetrics { ap, precision, recall, f1: f1(precision, recall), support: positive });
    }
    let c = per_class.len() as f64;
    let cp = per_class.iter().map(|m| m.precision).sum::<f64>() / c;
    let cr = per_class.iter().map(|m| m.recall).sum::<f64>() / c;
    let op = ratio_or_one(tp_all, pred_all);
    let or_ = ratio_or_one(tp_all, pos_all);
    let metrics = Metrics { map, cp, cr, cf1: f1(cp, cr), op, or_, of1: f1(op, or_) };
    Ok(MetricsReport { metrics, per_class })
}

/// The on-disk report: provenance plus metrics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportDocument {
    pub config_hash: String,
    pub seed: u64,
    pub threshold: f64,
    pub metrics: Metrics,
    pub per_class: Vec<ClassMetrics>,
}

impl ReportDocument {
    pub fn new(report: &MetricsReport, config_hash: &str, seed: u64, threshold: f64) -> Self {
        Self {
            config_hash: config_hash.to_string(),
            seed,
            threshold,
            metrics: report.metrics,
            per_class: report.per_class.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Parses and range-checks a report.
    pub fn parse(text: &str) -> Result<Self> {
        let doc: Self =
            serde_json::from_str(text).map_err(|e| Error::Format { kind: "report", msg: e.to_string() })?;
        let in_unit = |v: f64| (0.0..=1.0).contains(&v);
        let class_ok = doc
            .per_class
            .iter()
            .all(|c| c.ap.is_none_or(in_unit) && in_unit(c.precision) && in_unit(c.recall) && in_unit(c.f1));
        if !doc.metrics.values().into_iter().all(in_unit) || !class_ok {
            return Err(Error::Format { kind: "report", msg: "metric outside [0,1]".into() });
        }
        Ok(doc)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lv(bits: &[u8]) -> LabelVector {
        LabelVector::new(bits.to_vec()).unwrap()
    }

    #[test]
    fn hand_ranked_ap() {
        let ap = average_precision(&[0.9, 0.8, 0.1], &[true, false, true]).unwrap().unwrap();
        assert!((ap - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[0.2], &[true]).unwrap(), Some(1.0));
        assert_eq!(average_precision(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap(), Some(1.0));
        assert_eq!(average_precision(&[0.5, 0.4], &[false, false]).unwrap(), None);
    }

    #[test]
    fn ties_keep_input_order() {
        assert_eq!(average_precision(&[0.5, 0.5], &[true, false]).unwrap(), Some(1.0));
        assert_eq!(average_precision(&[0.5, 0.5], &[false, true]).unwrap(), Some(0.5));
    }

    #[test]
    fn map_averages_present_classes() {
        let p = PredictionSet::new(
            vec![vec![0.9, 0.2, 0.1], vec![0.1, 0.8, 0.3]],
            vec![lv(&[1, 0, 0]), lv(&[0, 0, 0])],
        )
        .unwrap();
        assert_eq!(map_score(&p).unwrap(), 1.0);
        let p = PredictionSet::new(
            vec![vec![0.9, 0.9], vec![0.1, 0.8]],
            vec![lv(&[1, 0]), lv(&[0, 1])],
        )
        .unwrap();
        assert_eq!(map_score(&p).unwrap(), 0.75);
        let none = PredictionSet::new(vec![vec![0.3]], vec![lv(&[0])]).unwrap();
        assert!(map_score(&none).is_err());
    }

    #[test]
    fn perfect_predictions_score_one_everywhere() {
        let truths = vec![lv(&[1, 0, 1]), lv(&[0, 1, 0]), lv(&[1, 1, 0])];
        let scores = truths.iter().map(|t| t.bits().iter().map(|b| f64::from(*b)).collect()).collect();
        let r = pr_f1_report(&PredictionSet::new(scores, truths).unwrap(), 0.5).unwrap();
        assert_eq!(r.metrics.values(), [1.0; 7]);
    }

    #[test]
    fn zero_scores_give_zero_recall() {
        let truths = vec![lv(&[1, 0]), lv(&[0, 1])];
        let r = pr_f1_report(&PredictionSet::new(vec![vec![0.0; 2]; 2], truths).unwrap(), 0.5).unwrap();
        assert_eq!(r.metrics.or_, 0.0);
        assert_eq!(r.metrics.of1, 0.0);
    }

    #[test]
    fn hand_confusion_fixture() {
        // class 0: tp 1, fp 1, fn 0; class 1: tp 1, fp 0, fn 1
        let p = PredictionSet::new(
            vec![vec![0.9, 0.7], vec![0.6, 0.5], vec![0.2, 0.1]],
            vec![lv(&[1, 1]), lv(&[0, 1]), lv(&[0, 0])],
        )
        .unwrap();
        let r = pr_f1_report(&p, 0.5).unwrap();
        assert_eq!(r.per_class[0].precision, 0.5);
        assert_eq!(r.per_class[0].recall, 1.0);
        assert_eq!(r.per_class[1].precision, 1.0);
        assert_eq!(r.per_class[1].recall, 0.5);
        assert_eq!(r.metrics.cp, 0.75);
        assert_eq!(r.metrics.cr, 0.75);
        assert_eq!(r.metrics.op, 2.0 / 3.0);
        assert_eq!(r.metrics.or_, 2.0 / 3.0);
        assert!((r.metrics.of1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn threshold_is_strict() {
        let p = PredictionSet::new(vec![vec![0.5]], vec![lv(&[1])]).unwrap();
        assert_eq!(pr_f1_report(&p, 0.5).unwrap().metrics.or_, 0.0);
        assert!(pr_f1_report(&p, 1.0).is_err());
    }

    #[test]
    fn report_json_has_fixed_keys_and_round_trips() {
        let p = PredictionSet::new(vec![vec![0.9, 0.3], vec![0.2, 0.6]], vec![lv(&[1, 0]), lv(&[1, 1])]).unwrap();
        let r = pr_f1_report(&p, 0.5).unwrap();
        let doc = ReportDocument::new(&r, "h", 3, 0.5);
        let text = doc.to_json();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        let mut keys: Vec<&str> = v["metrics"].as_object().unwrap().keys().map(String::as_str).collect();
        keys.sort_unstable();
        let mut want = Metrics::KEYS.to_vec();
        want.sort_unstable();
        assert_eq!(keys, want);
        assert_eq!(ReportDocument::parse(&text).unwrap(), doc);
        assert!(ReportDocument::parse(&text.replace("\"map\"", "\"mAP\"")).is_err());
    }
}
