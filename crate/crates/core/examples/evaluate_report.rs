//! Metrics report from hand-made predictions: confusion matrix, per-class
//! precision/recall/F1, averages and one-vs-rest PR curves.
//!
//! ```text
//! cargo run --release --example evaluate_report -- [output dir]
//! ```

use pedcnn::metrics::build_report;
use pedcnn::seed::rng;
use rand::Rng;

fn main() -> pedcnn::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map_or_else(|| std::env::temp_dir().join("pedcnn_report"), Into::into);
    let mut r = rng(3);
    // Skewed class mix; scores lean toward the true class with noise.
    let weights = [40, 25, 6, 60, 30, 9];
    let mut y_true = Vec::new();
    let mut scores = Vec::new();
    for (c, &n) in weights.iter().enumerate() {
        for _ in 0..n {
            let mut row: Vec<f64> = (0..6).map(|_| r.random::<f64>()).collect();
            row[c] += r.random_range(0.0..1.2);
            let sum: f64 = row.iter().sum();
            row.iter_mut().for_each(|v| *v /= sum);
            y_true.push(c);
            scores.push(row);
        }
    }
    let report = build_report(8, &scores, &y_true)?;
    println!(
        "accuracy {:.4}  macro PR-AUC {:.4}",
        report.accuracy, report.pr_auc_macro
    );
    println!(
        "{:<16} {:>9} {:>9} {:>9} {:>8} {:>8}",
        "class", "precision", "recall", "f1", "support", "AP"
    );
    for (m, ap) in report.per_class.iter().zip(&report.pr_auc_per_class) {
        let ap = ap.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>8} {ap:>8}",
            m.class, m.metrics.precision, m.metrics.recall, m.metrics.f1, m.metrics.support
        );
    }
    println!("confusion matrix (rows: truth)");
    for row in &report.confusion_matrix {
        println!("  {}", row.iter().map(|v| format!("{v:>4}")).collect::<String>());
    }
    report.write(&out, "report")?;
    println!("wrote {}/report.json and report_pr.csv", out.display());
    Ok(())
}
