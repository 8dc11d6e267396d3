//! Evaluation metrics: confusion matrices (raw and row-normalized), per-class
//! and macro precision/recall/F1, average and balanced accuracy, one-vs-rest
//! ROC curves with Mann–Whitney AUC, and report rendering (text, CSV, SVG).

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// K×K counts; rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfusionMatrix {
    pub k: usize,
    counts: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    pub fn from_labels(pred: &[usize], truth: &[usize], k: usize) -> Result<Self> {
        if pred.len() != truth.len() {
            return Err(Error::contract(format!(
                "prediction/label length mismatch: {} vs {}",
                pred.len(),
                truth.len()
            )));
        }
        let mut cm = ConfusionMatrix::new(k);
        for (i, (&p, &t)) in pred.iter().zip(truth.iter()).enumerate() {
            if p >= k || t >= k {
                return Err(Error::contract(format!(
                    "label out of range [0,{k}) at sample {i}: pred {p}, true {t}"
                )));
            }
            cm.counts[t * k + p] += 1;
        }
        Ok(cm)
    }

    pub fn count(&self, truth: usize, pred: usize) -> usize {
        self.counts[truth * self.k + pred]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn row_sum(&self, truth: usize) -> usize {
        (0..self.k).map(|p| self.count(truth, p)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> usize {
        (0..self.k).map(|t| self.count(t, pred)).sum()
    }

    pub fn diagonal_sum(&self) -> usize {
        (0..self.k).map(|c| self.count(c, c)).sum()
    }

    /// Row-normalized form: each nonzero row sums to 1, all-zero rows stay zero.
    pub fn normalized(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.k * self.k];
        for t in 0..self.k {
            let rs = self.row_sum(t);
            if rs == 0 {
                continue;
            }
            for p in 0..self.k {
                out[t * self.k + p] = self.count(t, p) as f64 / rs as f64;
            }
        }
        out
    }
}

/// Precision, recall, F1 for one class; 0/0 cells resolve to 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassPrf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class precision/recall/F1 plus their unweighted macro averages.
pub fn per_class_prf(cm: &ConfusionMatrix) -> (Vec<ClassPrf>, ClassPrf) {
    let mut per = Vec::with_capacity(cm.k);
    for c in 0..cm.k {
        let precision = ratio(cm.count(c, c), cm.col_sum(c));
        let recall = ratio(cm.count(c, c), cm.row_sum(c));
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per.push(ClassPrf {
            precision,
            recall,
            f1,
        });
    }
    let k = cm.k as f64;
    let macro_avg = ClassPrf {
        precision: per.iter().map(|m| m.precision).sum::<f64>() / k,
        recall: per.iter().map(|m| m.recall).sum::<f64>() / k,
        f1: per.iter().map(|m| m.f1).sum::<f64>() / k,
    };
    (per, macro_avg)
}

/// Mean of per-class recalls. Classes with no true samples are excluded and
/// reported in the warnings; a matrix with no populated rows is an error.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> Result<(f64, Vec<String>)> {
    let mut sum = 0.0;
    let mut present = 0usize;
    let mut warnings = Vec::new();
    for c in 0..cm.k {
        let rs = cm.row_sum(c);
        if rs == 0 {
            warnings.push(format!("class {c} has no true samples; excluded from balanced accuracy"));
            continue;
        }
        sum += cm.count(c, c) as f64 / rs as f64;
        present += 1;
    }
    if present == 0 {
        return Err(Error::contract("confusion matrix has no populated rows".to_string()));
    }
    Ok((sum / present as f64, warnings))
}

/// One class's ROC curve from a descending threshold sweep, plus its AUC.
/// Points begin at (0,0), end at (1,1), and are non-decreasing in both
/// coordinates.
#[derive(Clone, Debug)]
pub struct RocCurve {
    pub class: usize,
    /// (false-positive rate, true-positive rate) per distinct threshold.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

/// One-vs-rest ROC/AUC for N×K probability scores.
///
/// AUC is the Mann–Whitney rank statistic: the probability that a random
/// positive outscores a random negative, with ties credited 0.5. Classes
/// absent from the truth (or covering every sample) are skipped with a
/// warning; the mean is unweighted over the computed classes.
pub fn roc_auc_ovr(
    scores: &Tensor<f64>,
    truth: &[usize],
) -> Result<(Vec<Option<RocCurve>>, f64, Vec<String>)> {
    let (n, k) = scores.dims2()?;
    if truth.len() != n {
        return Err(Error::contract(format!(
            "got {} labels for {n} score rows",
            truth.len()
        )));
    }
    for row in 0..n {
        let sum: f64 = scores.data()[row * k..(row + 1) * k].iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::contract(format!(
                "score row {row} sums to {sum}, expected 1 within 1e-6"
            )));
        }
    }

    let mut curves: Vec<Option<RocCurve>> = Vec::with_capacity(k);
    let mut warnings = Vec::new();
    let mut auc_sum = 0.0;
    let mut auc_count = 0usize;

    for class in 0..k {
        let positives = truth.iter().filter(|&&t| t == class).count();
        let negatives = n - positives;
        if positives == 0 {
            warnings.push(format!("class {class} absent from truth; AUC skipped"));
            curves.push(None);
            continue;
        }
        if negatives == 0 {
            warnings.push(format!("class {class} covers every sample; AUC skipped"));
            curves.push(None);
            continue;
        }
        let column: Vec<f64> = (0..n).map(|row| scores.data()[row * k + class]).collect();
        let labels: Vec<bool> = truth.iter().map(|&t| t == class).collect();
        let auc = mann_whitney_auc(&column, &labels);
        let points = roc_points(&column, &labels);
        curves.push(Some(RocCurve { class, points, auc }));
        auc_sum += auc;
        auc_count += 1;
    }

    if auc_count == 0 {
        return Err(Error::contract("no class had both positives and negatives".to_string()));
    }
    Ok((curves, auc_sum / auc_count as f64, warnings))
}

/// Rank-based Mann–Whitney AUC with average ranks over ties.
fn mann_whitney_auc(scores: &[f64], positive: &[bool]) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = n as f64 - n_pos;
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // 1-based ranks i+1 ..= j, averaged across the tie group.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if positive[idx] {
                rank_sum_pos += avg_rank;
            }
        }
        i = j;
    }
    (rank_sum_pos - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg)
}

/// Threshold sweep over distinct scores, descending. Tie groups advance TP and
/// FP together, which makes trapezoidal integration of the curve agree with
/// the 0.5-credit rank statistic.
fn roc_points(scores: &[f64], positive: &[bool]) -> Vec<(f64, f64)> {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let n_pos = positive.iter().filter(|&&p| p).count() as f64;
    let n_neg = n as f64 - n_pos;
    let mut points = vec![(0.0, 0.0)];
    let mut tp = 0usize;
    let mut fp = 0usize;
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j < n && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..j] {
            if positive[idx] {
                tp += 1;
            } else {
                fp += 1;
            }
        }
        points.push((fp as f64 / n_neg, tp as f64 / n_pos));
        i = j;
    }
    points
}

/// Everything the evaluation table needs for one model run.
#[derive(Clone, Debug)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassPrf>,
    pub per_class_auc: Vec<Option<f64>>,
    pub curves: Vec<Option<RocCurve>>,
    /// Overall top-1 accuracy (fraction of correct predictions).
    pub avg_accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// Unweighted mean AUC over classes present in the truth.
    pub mean_auc: f64,
    /// Mean of per-class recalls.
    pub balanced_accuracy: f64,
    pub n: usize,
    pub warnings: Vec<String>,
}

/// Assembles the full report from argmax predictions, truth, and probability
/// scores.
pub fn metrics_report(
    pred: &[usize],
    truth: &[usize],
    scores: &Tensor<f64>,
    k: usize,
) -> Result<MetricsReport> {
    let confusion = ConfusionMatrix::from_labels(pred, truth, k)?;
    let (per_class, macro_avg) = per_class_prf(&confusion);
    let (bal_acc, mut warnings) = balanced_accuracy(&confusion)?;
    let (curves, mean_auc, auc_warnings) = roc_auc_ovr(scores, truth)?;
    warnings.extend(auc_warnings);
    let per_class_auc = curves
        .iter()
        .map(|c| c.as_ref().map(|c| c.auc))
        .collect();
    Ok(MetricsReport {
        avg_accuracy: ratio(confusion.diagonal_sum(), confusion.total()),
        macro_precision: macro_avg.precision,
        macro_recall: macro_avg.recall,
        macro_f1: macro_avg.f1,
        mean_auc,
        balanced_accuracy: bal_acc,
        n: truth.len(),
        confusion,
        per_class,
        per_class_auc,
        curves,
        warnings,
    })
}

pub const REPORT_CSV_HEADER: &str = "model,avg_acc,avg_prec,avg_auc,avg_recall,avg_f1,bal_acc,n";

/// One CSV row per model run, columns in the standard table order.
pub fn render_report_csv(model_name: &str, report: &MetricsReport) -> String {
    format!(
        "{REPORT_CSV_HEADER}\n{},{},{},{},{},{},{},{}\n",
        model_name,
        report.avg_accuracy,
        report.macro_precision,
        report.mean_auc,
        report.macro_recall,
        report.macro_f1,
        report.balanced_accuracy,
        report.n
    )
}

/// Fixed-width text table in the same column order, plus the per-class block
/// and the row-normalized confusion matrix.
pub fn render_report_text(model_name: &str, report: &MetricsReport, class_names: &[&str]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<16} {:>8} {:>9} {:>8} {:>10} {:>8} {:>8} {:>6}\n",
        "model", "avg_acc", "avg_prec", "avg_auc", "avg_recall", "avg_f1", "bal_acc", "n"
    ));
    out.push_str(&format!(
        "{:<16} {:>8.4} {:>9.4} {:>8.4} {:>10.4} {:>8.4} {:>8.4} {:>6}\n",
        model_name,
        report.avg_accuracy,
        report.macro_precision,
        report.mean_auc,
        report.macro_recall,
        report.macro_f1,
        report.balanced_accuracy,
        report.n
    ));
    out.push('\n');
    out.push_str(&format!(
        "{:<18} {:>9} {:>8} {:>8} {:>8}\n",
        "class", "precision", "recall", "f1", "auc"
    ));
    for (c, prf) in report.per_class.iter().enumerate() {
        let name = class_names.get(c).copied().unwrap_or("?");
        let auc = match report.per_class_auc[c] {
            Some(a) => format!("{a:.4}"),
            None => "-".to_string(),
        };
        out.push_str(&format!(
            "{:<18} {:>9.4} {:>8.4} {:>8.4} {:>8}\n",
            name, prf.precision, prf.recall, prf.f1, auc
        ));
    }
    out.push('\n');
    out.push_str("normalized confusion matrix (rows = true):\n");
    let norm = report.confusion.normalized();
    for t in 0..report.confusion.k {
        let row: Vec<String> = (0..report.confusion.k)
            .map(|p| format!("{:.3}", norm[t * report.confusion.k + p]))
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    if !report.warnings.is_empty() {
        out.push('\n');
        for w in &report.warnings {
            out.push_str(&format!("warning: {w}\n"));
        }
    }
    out
}

/// ROC CSV: `class,fpr,tpr`, one row per curve point.
pub fn render_roc_csv(curves: &[Option<RocCurve>], class_names: &[&str]) -> String {
    let mut out = String::from("class,fpr,tpr\n");
    for curve in curves.iter().flatten() {
        let name = class_names.get(curve.class).copied().unwrap_or("?");
        for &(fpr, tpr) in &curve.points {
            out.push_str(&format!("{name},{fpr},{tpr}\n"));
        }
    }
    out
}

const ROC_COLORS: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// 640×640 SVG: unit axes, the chance diagonal, and one labeled polyline per
/// computed class.
pub fn render_roc_svg(curves: &[Option<RocCurve>], class_names: &[&str]) -> String {
    const SIZE: f64 = 640.0;
    const MARGIN: f64 = 60.0;
    let span = SIZE - 2.0 * MARGIN;
    let px = |v: f64| MARGIN + v * span;
    let py = |v: f64| SIZE - MARGIN - v * span;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SIZE} {SIZE}\" \
         width=\"{SIZE}\" height=\"{SIZE}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{span}\" height=\"{span}\" \
         fill=\"none\" stroke=\"#333333\"/>\n"
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\">false positive rate</text>\n",
        SIZE / 2.0,
        SIZE - MARGIN / 3.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" font-size=\"14\" text-anchor=\"middle\" \
         transform=\"rotate(-90 {} {})\">true positive rate</text>\n",
        MARGIN / 3.0,
        SIZE / 2.0,
        MARGIN / 3.0,
        SIZE / 2.0
    ));
    // Chance diagonal.
    svg.push_str(&format!(
        "  <polyline points=\"{},{} {},{}\" fill=\"none\" stroke=\"#999999\" \
         stroke-dasharray=\"6,4\"/>\n",
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    ));

    let mut legend_y = MARGIN + 10.0;
    for curve in curves.iter().flatten() {
        let name = class_names.get(curve.class).copied().unwrap_or("?");
        let color = ROC_COLORS[curve.class % ROC_COLORS.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|&(f, t)| format!("{:.2},{:.2}", px(f), py(t)))
            .collect();
        svg.push_str(&format!(
            "  <polyline id=\"roc-{}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" \
             stroke-width=\"1.5\"/>\n",
            name.replace(' ', "-"),
            pts.join(" ")
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{legend_y}\" font-size=\"12\" fill=\"{color}\">{name} \
             (AUC {:.3})</text>\n",
            px(1.0) - 170.0,
            curve.auc
        ));
        legend_y += 16.0;
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confusion_matrix_from_enumerated_samples() {
        // preds [0,1,1], trues [0,0,1] → [[1,1],[0,1]]
        let cm = ConfusionMatrix::from_labels(&[0, 1, 1], &[0, 0, 1], 2).unwrap();
        assert_eq!(cm.count(0, 0), 1);
        assert_eq!(cm.count(0, 1), 1);
        assert_eq!(cm.count(1, 0), 0);
        assert_eq!(cm.count(1, 1), 1);
        assert_eq!(cm.total(), 3);

        let norm = cm.normalized();
        assert_eq!(norm, vec![0.5, 0.5, 0.0, 1.0]);
    }

    #[test]
    fn perfect_predictions_are_diagonal() {
        let labels = [0usize, 1, 2, 2, 1, 0];
        let cm = ConfusionMatrix::from_labels(&labels, &labels, 3).unwrap();
        assert_eq!(cm.diagonal_sum(), 6);
        let (per, macro_avg) = per_class_prf(&cm);
        assert!(per.iter().all(|m| m.precision == 1.0 && m.recall == 1.0 && m.f1 == 1.0));
        assert_eq!(macro_avg.f1, 1.0);
        assert_eq!(balanced_accuracy(&cm).unwrap().0, 1.0);
    }

    #[test]
    fn prf_hand_example() {
        // cm [[1,1],[0,2]] → recalls (0.5, 1.0), precisions (1.0, 2/3),
        // F1 (2/3, 0.8), balanced accuracy 0.75.
        let cm = ConfusionMatrix::from_labels(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(cm.count(0, 0), 1);
        assert_eq!(cm.count(0, 1), 1);
        assert_eq!(cm.count(1, 1), 2);
        let (per, _) = per_class_prf(&cm);
        assert_eq!(per[0].recall, 0.5);
        assert_eq!(per[1].recall, 1.0);
        assert_eq!(per[0].precision, 1.0);
        assert!((per[1].precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((per[0].f1 - 2.0 / 3.0).abs() < 1e-12);
        assert!((per[1].f1 - 0.8).abs() < 1e-12);
        assert_eq!(balanced_accuracy(&cm).unwrap().0, 0.75);
    }

    #[test]
    fn degenerate_class_resolves_to_zero() {
        // Class 2 never predicted and never true → P=R=F1=0.
        let cm = ConfusionMatrix::from_labels(&[0, 1], &[0, 1], 3).unwrap();
        let (per, _) = per_class_prf(&cm);
        assert_eq!(per[2], ClassPrf { precision: 0.0, recall: 0.0, f1: 0.0 });
        let (bal, warnings) = balanced_accuracy(&cm).unwrap();
        assert_eq!(bal, 1.0);
        assert_eq!(warnings.len(), 1);
    }

    fn scores_binary(pos: &[f64], neg: &[f64]) -> (Tensor<f64>, Vec<usize>) {
        let n = pos.len() + neg.len();
        let mut data = Vec::with_capacity(n * 2);
        let mut truth = Vec::with_capacity(n);
        for &p in pos {
            data.push(p);
            data.push(1.0 - p);
            truth.push(0);
        }
        for &p in neg {
            data.push(p);
            data.push(1.0 - p);
            truth.push(1);
        }
        (Tensor::new(vec![n, 2], data).unwrap(), truth)
    }

    #[test]
    fn auc_perfect_separation() {
        let (scores, truth) = scores_binary(&[0.9, 0.8], &[0.4, 0.1]);
        let (curves, _, _) = roc_auc_ovr(&scores, &truth).unwrap();
        let c0 = curves[0].as_ref().unwrap();
        assert_eq!(c0.auc, 1.0);
        assert!(c0.points.contains(&(0.0, 1.0)));
        assert_eq!(c0.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(c0.points.last(), Some(&(1.0, 1.0)));
    }

    #[test]
    fn auc_all_ties_is_half() {
        let (scores, truth) = scores_binary(&[0.5, 0.5], &[0.5, 0.5, 0.5]);
        let (curves, mean, _) = roc_auc_ovr(&scores, &truth).unwrap();
        assert_eq!(curves[0].as_ref().unwrap().auc, 0.5);
        assert_eq!(mean, 0.5);
    }

    #[test]
    fn auc_three_quarters_from_pair_enumeration() {
        // positives {0.8, 0.3}, negatives {0.5, 0.1}: 3 of 4 pairs concordant.
        let (scores, truth) = scores_binary(&[0.8, 0.3], &[0.5, 0.1]);
        let (curves, _, _) = roc_auc_ovr(&scores, &truth).unwrap();
        assert_eq!(curves[0].as_ref().unwrap().auc, 0.75);
    }

    #[test]
    fn auc_rejects_bad_score_rows() {
        let scores = Tensor::new(vec![1, 2], vec![0.7, 0.7]).unwrap();
        let err = roc_auc_ovr(&scores, &[0]).unwrap_err();
        assert!(err.to_string().contains("row 0"));
    }

    #[test]
    fn absent_class_is_skipped_with_warning() {
        let scores = Tensor::new(
            vec![3, 3],
            vec![0.8, 0.1, 0.1, 0.2, 0.7, 0.1, 0.3, 0.6, 0.1],
        )
        .unwrap();
        let truth = vec![0usize, 1, 1];
        let (curves, _, warnings) = roc_auc_ovr(&scores, &truth).unwrap();
        assert!(curves[2].is_none());
        assert!(warnings.iter().any(|w| w.contains("class 2")));
    }

    #[test]
    fn curve_is_monotone_and_anchored() {
        let (scores, truth) = scores_binary(&[0.9, 0.5, 0.5, 0.2], &[0.7, 0.5, 0.3, 0.1, 0.05]);
        let (curves, _, _) = roc_auc_ovr(&scores, &truth).unwrap();
        let c = curves[0].as_ref().unwrap();
        assert_eq!(c.points.first(), Some(&(0.0, 0.0)));
        assert_eq!(c.points.last(), Some(&(1.0, 1.0)));
        for w in c.points.windows(2) {
            assert!(w[1].0 >= w[0].0 && w[1].1 >= w[0].1);
        }
    }

    #[test]
    fn report_renderers_have_contracted_shape() {
        let pred = [0usize, 0, 1, 1];
        let truth = [0usize, 0, 1, 1];
        let scores = Tensor::new(
            vec![4, 2],
            vec![0.9, 0.1, 0.8, 0.2, 0.2, 0.8, 0.1, 0.9],
        )
        .unwrap();
        let report = metrics_report(&pred, &truth, &scores, 2).unwrap();
        assert_eq!(report.avg_accuracy, 1.0);
        assert_eq!(report.balanced_accuracy, 1.0);
        assert_eq!(report.mean_auc, 1.0);

        let csv = render_report_csv("toy", &report);
        assert!(csv.starts_with(REPORT_CSV_HEADER));
        assert!(csv.contains("toy,1,1,1,1,1,1,4"));

        let text = render_report_text("toy", &report, &["a", "b"]);
        assert!(text.contains("1.0000"));

        let roc_csv = render_roc_csv(&report.curves, &["a", "b"]);
        assert!(roc_csv.starts_with("class,fpr,tpr\n"));
        assert!(roc_csv.contains("a,0,1\n"));

        let svg = render_roc_svg(&report.curves, &["a", "b"]);
        assert_eq!(svg.matches("<polyline").count(), 3); // 2 classes + diagonal
        assert!(svg.contains("viewBox=\"0 0 640 640\""));
    }
}
