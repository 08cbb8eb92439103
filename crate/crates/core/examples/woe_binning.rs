//! Fit WOE bins for a numeric and a categorical variable, then screen by IV.

use fl_lrbc::dataio::Column;
use fl_lrbc::woe::{fit_bins, screen, DEFAULT_IV_THRESHOLD};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let n = 5000;
    let mut income = Vec::with_capacity(n);
    let mut region = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let x: f64 = rng.gen_range(0.0..1.0);
        let r = ["north", "south", "east"][rng.gen_range(0..3)];
        let risk = 0.5 - 0.35 * x + if r == "south" { 0.1 } else { 0.0 };
        labels.push(u8::from(rng.gen::<f64>() < risk));
        income.push((rng.gen::<f64>() > 0.05).then_some(20_000.0 + 80_000.0 * x));
        region.push(Some(r.to_string()));
    }

    let tables = vec![
        fit_bins("income", &Column::Numeric(income), &labels, 5)?,
        fit_bins("region", &Column::Categorical(region), &labels, 5)?,
    ];
    for t in &tables {
        println!(
            "{} (IV {:.4}, missing {:.1}%)",
            t.variable,
            t.iv,
            100.0 * t.missing_rate
        );
        for b in &t.bins {
            println!(
                "  {:<60} bad {:>5} good {:>5} woe {:>8.4}",
                format!("{:?}", b.definition),
                b.bad_count,
                b.good_count,
                b.woe
            );
        }
    }
    println!(
        "kept at IV > {DEFAULT_IV_THRESHOLD}: {:?}",
        screen(&tables, DEFAULT_IV_THRESHOLD)
    );
    Ok(())
}
