//! ROC curve, AUC and the Kolmogorov-Smirnov statistic for a score vector.

use fl_lrbc::metrics::{format_ks, format_xy, ks, roc_auc, scored};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let scores = [0.92, 0.81, 0.77, 0.64, 0.64, 0.51, 0.43, 0.38, 0.22, 0.10];
    let labels = [1, 1, 0, 1, 0, 1, 0, 0, 0, 0];
    let samples = scored(&scores, &labels)?;

    let roc = roc_auc(&samples)?;
    println!("AUC {:.4}", roc.auc);
    print!("{}", format_xy(&roc.curve, "fpr tpr"));

    let k = ks(&samples)?;
    println!("KS {:.4} at threshold {}", k.statistic, k.argmax_threshold);
    print!("{}", format_ks(&k));
    Ok(())
}
