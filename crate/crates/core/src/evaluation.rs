//! Confusion matrices, accuracy, two-sided Fisher exact tests between
//! conditions, and report files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::learning::CvResult;
use crate::manifest::Class;

/// Counts indexed `[truth][prediction]`, class order (O, N).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix2 {
    pub counts: [[u64; 2]; 2],
}

fn class_index(c: Class) -> usize {
    match c {
        Class::Osteoporotic => 0,
        Class::Neoplastic => 1,
    }
}

impl ConfusionMatrix2 {
    pub fn new(counts: [[u64; 2]; 2]) -> Self {
        ConfusionMatrix2 { counts }
    }

    pub fn from_labels(truth: &[Class], predicted: &[Class]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Evaluation(format!(
                "{} truth labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::Evaluation("no predictions".into()));
        }
        let mut counts = [[0u64; 2]; 2];
        for (&t, &p) in truth.iter().zip(predicted) {
            counts[class_index(t)][class_index(p)] += 1;
        }
        Ok(ConfusionMatrix2 { counts })
    }

    /// Same as [`from_labels`](Self::from_labels) on "O"/"N" codes.
    pub fn from_codes(truth: &[&str], predicted: &[&str]) -> Result<Self> {
        let parse = |s: &&str| Class::from_code(s).ok_or_else(|| Error::Evaluation(format!("unknown label {s:?}")));
        let t = truth.iter().map(parse).collect::<Result<Vec<_>>>()?;
        let p = predicted.iter().map(parse).collect::<Result<Vec<_>>>()?;
        ConfusionMatrix2::from_labels(&t, &p)
    }

    pub fn row_totals(&self) -> [u64; 2] {
        [self.counts[0][0] + self.counts[0][1], self.counts[1][0] + self.counts[1][1]]
    }

    pub fn column_totals(&self) -> [u64; 2] {
        [self.counts[0][0] + self.counts[1][0], self.counts[0][1] + self.counts[1][1]]
    }

    pub fn total(&self) -> u64 {
        self.row_totals().iter().sum()
    }

    pub fn correct(&self) -> u64 {
        self.counts[0][0] + self.counts[1][1]
    }

    pub fn misclassifications(&self) -> u64 {
        self.counts[0][1] + self.counts[1][0]
    }

    pub fn accuracy(&self) -> Result<f64> {
        match self.total() {
            0 => Err(Error::Evaluation("empty confusion matrix".into())),
            n => Ok(self.correct() as f64 / n as f64),
        }
    }
}

fn ln_factorials(n: u64) -> Vec<f64> {
    let mut t = Vec::with_capacity(n as usize + 1);
    t.push(0.0);
    let mut acc = 0.0f64;
    for i in 1..=n {
        acc += (i as f64).ln();
        t.push(acc);
    }
    t
}

/// Two-sided Fisher exact test: the total probability of all tables with the
/// observed margins that are no more likely than the observed one (relative
/// slack 1e-7 for ties). A zero margin gives 1.
pub fn fisher_exact_two_sided(table: [[u64; 2]; 2]) -> f64 {
    let [[a, b], [c, d]] = table;
    let (r1, r2, c1) = (a + b, c + d, a + c);
    let n = r1 + r2;
    if r1 == 0 || r2 == 0 || c1 == 0 || c1 == n {
        return 1.0;
    }
    let lf = ln_factorials(n);
    let fixed = lf[r1 as usize] + lf[r2 as usize] + lf[c1 as usize] + lf[(n - c1) as usize] - lf[n as usize];
    let ln_p = |x: u64| {
        fixed
            - lf[x as usize]
            - lf[(r1 - x) as usize]
            - lf[(c1 - x) as usize]
            - lf[(r2 + x - c1) as usize]
    };
    let lo = c1.saturating_sub(r2);
    let hi = r1.min(c1);
    let observed = ln_p(a);
    let cutoff = observed + 1e-7f64.ln_1p();
    let p: f64 = (lo..=hi).map(ln_p).filter(|&l| l <= cutoff).map(f64::exp).sum();
    p.min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub name: String,
    pub matrix: ConfusionMatrix2,
    pub accuracy: f64,
    pub misclassifications: u64,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairComparison {
    pub a: String,
    pub b: String,
    /// `[[correct_a, wrong_a], [correct_b, wrong_b]]`.
    pub table: [[u64; 2]; 2],
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub conditions: Vec<ConditionSummary>,
    pub comparisons: Vec<PairComparison>,
    pub metadata: BTreeMap<String, String>,
}

/// Summaries and pairwise Fisher tests for named confusion matrices.
pub fn compare_matrices(named: &[(String, ConfusionMatrix2)]) -> Result<ComparisonReport> {
    let mut conditions = Vec::new();
    for (name, m) in named {
        conditions.push(ConditionSummary {
            name: name.clone(),
            matrix: *m,
            accuracy: m.accuracy()?,
            misclassifications: m.misclassifications(),
            n: m.total(),
        });
    }
    let mut comparisons = Vec::new();
    for i in 0..conditions.len() {
        for j in i + 1..conditions.len() {
            let (a, b) = (&conditions[i], &conditions[j]);
            let table = [
                [a.matrix.correct(), a.misclassifications],
                [b.matrix.correct(), b.misclassifications],
            ];
            comparisons.push(PairComparison {
                a: a.name.clone(),
                b: b.name.clone(),
                table,
                p_value: fisher_exact_two_sided(table),
            });
        }
    }
    Ok(ComparisonReport {
        conditions,
        comparisons,
        metadata: BTreeMap::new(),
    })
}

/// Compares cross-validation results that cover the same instances.
pub fn compare(results: &[CvResult]) -> Result<ComparisonReport> {
    if let Some(first) = results.first() {
        let idx: Vec<usize> = first.predictions.iter().map(|p| p.index).collect();
        for r in &results[1..] {
            if r.ids != first.ids || r.predictions.iter().map(|p| p.index).ne(idx.iter().copied()) {
                return Err(Error::Evaluation(format!(
                    "conditions {} and {} cover different instances",
                    first.condition, r.condition
                )));
            }
        }
    }
    let named: Vec<(String, ConfusionMatrix2)> =
        results.iter().map(|r| (r.condition.name().to_string(), r.confusion)).collect();
    compare_matrices(&named)
}

fn title(name: &str) -> String {
    let mut c = name.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Table-style grid: truth in rows, prediction in columns.
pub fn format_grid(name: &str, m: &ConfusionMatrix2) -> String {
    let [r0, r1] = m.row_totals();
    let [c0, c1] = m.column_totals();
    format!(
        "{}\tO\tN\tTotal\nO\t{}\t{}\t{}\nN\t{}\t{}\t{}\nTotal\t{}\t{}\t{}\n",
        title(name),
        m.counts[0][0],
        m.counts[0][1],
        r0,
        m.counts[1][0],
        m.counts[1][1],
        r1,
        c0,
        c1,
        m.total()
    )
}

pub fn format_report(report: &ComparisonReport) -> String {
    let mut s = String::new();
    for c in &report.conditions {
        s.push_str(&format_grid(&c.name, &c.matrix));
        s.push('\n');
    }
    s.push_str("condition\taccuracy\tmisclassifications\tn\n");
    for c in &report.conditions {
        let _ = writeln!(s, "{}\t{:.3}\t{}\t{}", c.name, c.accuracy, c.misclassifications, c.n);
    }
    if !report.comparisons.is_empty() {
        s.push_str("\npair\tfisher_p\n");
        for p in &report.comparisons {
            let _ = writeln!(s, "{} vs {}\t{:.4e}", p.a, p.b, p.p_value);
        }
    }
    if !report.metadata.is_empty() {
        s.push('\n');
        for (k, v) in &report.metadata {
            let _ = writeln!(s, "{k}: {v}");
        }
    }
    s
}

fn metrics_csv(report: &ComparisonReport) -> String {
    let mut s = String::from("condition,accuracy,misclassifications,n\n");
    for c in &report.conditions {
        let _ = writeln!(s, "{},{},{},{}", c.name, c.accuracy, c.misclassifications, c.n);
    }
    s
}

fn comparisons_csv(report: &ComparisonReport) -> String {
    let mut s = String::from("pair,p_value\n");
    for p in &report.comparisons {
        let _ = writeln!(s, "{} vs {},{}", p.a, p.b, p.p_value);
    }
    s
}

/// Confusion-matrix heatmap; cell shade is the row-normalized fraction.
pub fn heatmap_svg(name: &str, m: &ConfusionMatrix2) -> String {
    let rows = m.row_totals();
    let mut s = String::new();
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"260\" height=\"240\" font-family=\"sans-serif\" font-size=\"14\">"
    );
    let _ = writeln!(s, "<text x=\"130\" y=\"20\" text-anchor=\"middle\">{}</text>", title(name));
    let labels = ["O", "N"];
    for (j, l) in labels.iter().enumerate() {
        let _ = writeln!(s, "<text x=\"{}\" y=\"45\" text-anchor=\"middle\">{l}</text>", 100 + 80 * j);
        let _ = writeln!(s, "<text x=\"40\" y=\"{}\" text-anchor=\"middle\">{l}</text>", 95 + 80 * j);
    }
    for i in 0..2 {
        for j in 0..2 {
            let frac = if rows[i] > 0 {
                m.counts[i][j] as f64 / rows[i] as f64
            } else {
                0.0
            };
            let shade = 255 - (frac * 200.0).round() as u8;
            let (x, y) = (60 + 80 * j, 55 + 80 * i);
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"80\" height=\"80\" fill=\"rgb({shade},{shade},255)\" stroke=\"black\"/>"
            );
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
                x + 40,
                y + 45,
                m.counts[i][j]
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `metrics.csv`, `comparisons.csv`, `report.txt` and, with `svg`,
/// one `confusion_<condition>.svg` per condition. Nothing is written when
/// the report holds no predictions.
pub fn emit_report(report: &ComparisonReport, out_dir: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    if report.conditions.is_empty() || report.conditions.iter().any(|c| c.n == 0) {
        return Err(Error::Evaluation("no predictions to report".into()));
    }
    let mut files = vec![
        (out_dir.join("metrics.csv"), metrics_csv(report)),
        (out_dir.join("comparisons.csv"), comparisons_csv(report)),
        (out_dir.join("report.txt"), format_report(report)),
    ];
    if svg {
        for c in &report.conditions {
            files.push((out_dir.join(format!("confusion_{}.svg", c.name)), heatmap_svg(&c.name, &c.matrix)));
        }
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    for (path, text) in &files {
        fs::write(path, text).map_err(|e| Error::io(path, e))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}

/// The published confusion matrices (measured, longitudinal, combined).
pub fn reference_matrices() -> [(String, ConfusionMatrix2); 3] {
    [
        ("measured".into(), ConfusionMatrix2::new([[392, 98], [33, 172]])),
        ("longitudinal".into(), ConfusionMatrix2::new([[345, 145], [88, 117]])),
        ("combined".into(), ConfusionMatrix2::new([[399, 91], [34, 171]])),
    ]
}

/// One published number recomputed from the published confusion matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct PaperCheck {
    pub name: String,
    pub value: f64,
    pub expected: String,
    pub pass: bool,
}

/// Recomputes accuracies, misclassification counts and Fisher p-values from
/// [`reference_matrices`] and checks them against the published values.
pub fn paper_checks() -> Result<(ComparisonReport, Vec<PaperCheck>)> {
    let report = compare_matrices(&reference_matrices())?;
    let mut checks = Vec::new();
    for (c, published) in report.conditions.iter().zip([0.812, 0.665, 0.820]) {
        let rounded = (c.accuracy * 1000.0).round() / 1000.0;
        checks.push(PaperCheck {
            name: format!("accuracy {}", c.name),
            value: c.accuracy,
            expected: format!("{published:.3} +- 0.0005 after rounding"),
            pass: (rounded - published).abs() <= 0.0005,
        });
    }
    for (c, published) in report.conditions.iter().zip([131u64, 233, 125]) {
        checks.push(PaperCheck {
            name: format!("misclassifications {}", c.name),
            value: c.misclassifications as f64,
            expected: published.to_string(),
            pass: c.misclassifications == published,
        });
    }
    for p in &report.comparisons {
        let (expected, pass) = if p.a == "measured" && p.b == "combined" {
            ("0.665 +- 0.02".to_string(), (p.p_value - 0.665).abs() <= 0.02)
        } else {
            ("< 1e-3".to_string(), p.p_value < 1e-3)
        };
        checks.push(PaperCheck {
            name: format!("fisher p {} vs {}", p.a, p.b),
            value: p.p_value,
            expected,
            pass,
        });
    }
    Ok((report, checks))
}
