// Threshold selection at a fixed false detection rate and the derived error rates.
//
// Usage: `cargo run --example metrics_protocol`

use std::error::Error;

use dnetpad::metrics::{d_prime, histogram, relative_decrease, select_threshold, tdr_at_fdr};

fn main() -> Result<(), Box<dyn Error>> {
    let bonafide = [0.1, 0.2, 0.3, 0.4, 0.5];
    let attacks = [0.45, 0.6, 0.7];

    let threshold = select_threshold(&bonafide, 0.2)?;
    println!("threshold at 20% FDR: {threshold}");

    let op = tdr_at_fdr(&bonafide, &attacks, 0.2)?;
    println!("TDR {:.4}  APCER {:.4}  BPCER {:.4}", op.tdr, 1.0 - op.tdr, op.realized_fdr);

    let strict = tdr_at_fdr(&bonafide, &attacks, 0.0)?;
    println!("at 0% FDR the threshold moves above every bonafide score: {} (TDR {:.4})", strict.threshold, strict.tdr);

    let d = d_prime(&bonafide, &attacks)?;
    println!("d-prime {:.4}", d.value);

    println!("bonafide histogram (5 bins): {:?}", histogram(&bonafide, 5)?);
    println!("relative decrease 96.26 -> 52.33: {:.2}%", relative_decrease(96.26, 52.33)?);
    Ok(())
}
