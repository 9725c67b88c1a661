//! Classification metrics, ROC analysis and report files.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::argmax;

fn check_pair(pred: &[usize], gold: &[usize]) -> Result<()> {
    if pred.len() != gold.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} gold labels",
            pred.len(),
            gold.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Contract("no predictions to score".into()));
    }
    Ok(())
}

pub fn accuracy(pred: &[usize], gold: &[usize]) -> Result<f64> {
    check_pair(pred, gold)?;
    let right = pred.iter().zip(gold).filter(|(p, g)| p == g).count();
    Ok(right as f64 / gold.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

/// One-vs-rest precision, recall and F1 for every class. Undefined ratios
/// are 0.
pub fn per_class(pred: &[usize], gold: &[usize], n_classes: usize) -> Result<Vec<ClassCounts>> {
    check_pair(pred, gold)?;
    if let Some(&l) = pred.iter().chain(gold).find(|&&l| l >= n_classes) {
        return Err(Error::Contract(format!("label {l} outside {n_classes} classes")));
    }
    let mut tp = vec![0usize; n_classes];
    let mut pp = vec![0usize; n_classes];
    let mut gp = vec![0usize; n_classes];
    for (&p, &g) in pred.iter().zip(gold) {
        pp[p] += 1;
        gp[g] += 1;
        if p == g {
            tp[p] += 1;
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok((0..n_classes)
        .map(|c| {
            let precision = ratio(tp[c], pp[c]);
            let recall = ratio(tp[c], gp[c]);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassCounts {
                precision,
                recall,
                f1,
                support: gp[c],
            }
        })
        .collect())
}

/// Unweighted mean F1 over all `n_classes`, absent classes counting 0.
pub fn macro_f1(pred: &[usize], gold: &[usize], n_classes: usize) -> Result<f64> {
    let per = per_class(pred, gold, n_classes)?;
    Ok(per.iter().map(|c| c.f1).sum::<f64>() / n_classes as f64)
}

/// ROC points from `(0, 0)` to `(1, 1)`, lowering the threshold through
/// the distinct scores; equal scores move together.
pub fn roc_curve(scores: &[f64], gold: &[bool]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != gold.len() {
        return Err(Error::Contract(format!("{} scores for {} labels", scores.len(), gold.len())));
    }
    let pos = gold.iter().filter(|&&g| g).count();
    let neg = gold.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::UndefinedAuc(format!(
            "need positives and negatives, got {pos} and {neg}"
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("NaN score".into()));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < idx.len() {
        let s = scores[idx[i]];
        while i < idx.len() && scores[idx[i]] == s {
            if gold[idx[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
    }
    Ok(points)
}

/// Trapezoidal area under a ROC polyline.
pub fn auc_from_points(points: &[(f64, f64)]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
        .sum()
}

pub fn roc_auc(scores: &[f64], gold: &[bool]) -> Result<f64> {
    Ok(auc_from_points(&roc_curve(scores, gold)?))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: usize,
    pub sense: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
    /// Missing when the test set lacks positives or negatives.
    pub auc: Option<f64>,
    pub roc: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermReport {
    pub term: String,
    pub n_samples: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Mean of the defined per-class AUCs.
    pub macro_auc: Option<f64>,
    pub classes: Vec<ClassReport>,
}

/// Scores one term from per-sample class probabilities.
pub fn evaluate_term(term: &str, senses: &[String], probs: &[Vec<f64>], gold: &[usize]) -> Result<TermReport> {
    let n = senses.len();
    if probs.len() != gold.len() {
        return Err(Error::Contract(format!("{} score rows for {} samples", probs.len(), gold.len())));
    }
    if let Some(row) = probs.iter().find(|r| r.len() != n) {
        return Err(Error::Contract(format!("score row of {} for {n} senses", row.len())));
    }
    let mut present = gold.to_vec();
    present.sort_unstable();
    present.dedup();
    if present.len() < 2 {
        return Err(Error::Data(format!("test set of {term} covers fewer than two senses")));
    }
    let pred: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let counts = per_class(&pred, gold, n)?;
    let mut classes = Vec::with_capacity(n);
    for (c, k) in counts.iter().enumerate() {
        let scores: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        let is_c: Vec<bool> = gold.iter().map(|&g| g == c).collect();
        let (auc, roc) = match roc_curve(&scores, &is_c) {
            Ok(points) => (Some(auc_from_points(&points)), points),
            Err(Error::UndefinedAuc(why)) => {
                log::warn!("{term} sense {c}: AUC undefined ({why}); excluded from the macro mean");
                (None, Vec::new())
            }
            Err(e) => return Err(e),
        };
        classes.push(ClassReport {
            class: c,
            sense: senses[c].clone(),
            precision: k.precision,
            recall: k.recall,
            f1: k.f1,
            support: k.support,
            auc,
            roc,
        });
    }
    let aucs: Vec<f64> = classes.iter().filter_map(|c| c.auc).collect();
    Ok(TermReport {
        term: term.to_string(),
        n_samples: gold.len(),
        accuracy: accuracy(&pred, gold)?,
        macro_f1: macro_f1(&pred, gold, n)?,
        macro_auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
        classes,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: String,
    pub terms: Vec<TermReport>,
    pub mean_accuracy: f64,
    pub mean_macro_f1: f64,
    /// Mean per-term AUC over terms where it is defined.
    pub mean_auc: Option<f64>,
}

pub fn aggregate(variant: &str, terms: Vec<TermReport>) -> Result<EvalReport> {
    if terms.is_empty() {
        return Err(Error::Data("no term reports to aggregate".into()));
    }
    let n = terms.len() as f64;
    let aucs: Vec<f64> = terms.iter().filter_map(|t| t.macro_auc).collect();
    Ok(EvalReport {
        variant: variant.to_string(),
        mean_accuracy: terms.iter().map(|t| t.accuracy).sum::<f64>() / n,
        mean_macro_f1: terms.iter().map(|t| t.macro_f1).sum::<f64>() / n,
        mean_auc: (!aucs.is_empty()).then(|| aucs.iter().sum::<f64>() / aucs.len() as f64),
        terms,
    })
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EvalReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        write(path, &(serde_json::to_string_pretty(self)? + "\n"))
    }

    /// `term,accuracy,macro_f1,macro_auc` with a final `mean` row.
    pub fn summary_csv(&self) -> String {
        let mut out = String::from("term,accuracy,macro_f1,macro_auc\n");
        for t in &self.terms {
            let _ = writeln!(out, "{},{},{},{}", t.term, t.accuracy, t.macro_f1, opt(t.macro_auc));
        }
        let _ = writeln!(
            out,
            "mean,{},{},{}",
            self.mean_accuracy,
            self.mean_macro_f1,
            opt(self.mean_auc)
        );
        out
    }

    /// Writes `report.json`, `summary.csv`, `roc/<term>_<class>.csv` and
    /// `plots/<term>.svg` under `dir`.
    pub fn write_all(&self, dir: &Path) -> Result<()> {
        self.write_json(&dir.join("report.json"))?;
        write(&dir.join("summary.csv"), &self.summary_csv())?;
        for t in &self.terms {
            for c in &t.classes {
                let mut csv = String::from("fpr,tpr\n");
                for (x, y) in &c.roc {
                    let _ = writeln!(csv, "{x},{y}");
                }
                write(&dir.join("roc").join(format!("{}_{}.csv", t.term, c.class)), &csv)?;
            }
            write(&dir.join("plots").join(format!("{}.svg", t.term)), &roc_svg(t))?;
        }
        Ok(())
    }
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// ROC plot with unit axes and one polyline per class.
pub fn roc_svg(t: &TermReport) -> String {
    let (size, pad) = (300.0, 40.0);
    let px = |x: f64| pad + x * size;
    let py = |y: f64| pad + (1.0 - y) * size;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{w}" viewBox="0 0 {w} {w}">"#,
        w = size + 2.0 * pad
    );
    let _ = writeln!(
        s,
        r#"<rect x="{pad}" y="{pad}" width="{size}" height="{size}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#999" stroke-dasharray="4 4"/>"##,
        px(0.0),
        py(0.0),
        px(1.0),
        py(1.0)
    );
    for v in [0.0, 0.5, 1.0] {
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="middle">{v}</text>"#, px(v), py(0.0) + 14.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">{v}</text>"#, px(0.0) - 4.0, py(v) + 3.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#, px(0.5), pad - 12.0, t.term);
    for (i, c) in t.classes.iter().filter(|c| !c.roc.is_empty()).enumerate() {
        let pts: Vec<String> = c.roc.iter().map(|&(x, y)| format!("{:.4},{:.4}", px(x), py(y))).collect();
        let color = COLORS[i % COLORS.len()];
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-size="10" fill="{color}">class {} (AUC {:.3})</text>"#,
            px(0.55),
            py(0.05) - 12.0 * i as f64,
            c.class,
            c.auc.unwrap_or(f64::NAN)
        );
    }
    s.push_str("</svg>\n");
    s
}
