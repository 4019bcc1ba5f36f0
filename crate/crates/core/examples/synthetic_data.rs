//! The default synthetic benchmark: split sizes, event layout, and a few
//! values around each injected anomaly.

use anomaly_transformer::data::{generate, SynthSpec};

fn main() -> anomaly_transformer::Result<()> {
    let spec = SynthSpec::desk_default(0);
    let splits = generate(&spec)?;
    println!(
        "train {} / val {} / test {} points, {} anomalous ({:.2}%)",
        splits.train.len(),
        splits.val.len(),
        splits.test.len(),
        spec.anomaly_points(),
        100.0 * spec.anomaly_ratio()
    );
    let test = splits.test.channel(0);
    for e in &spec.events {
        let lo = e.start.saturating_sub(2);
        let hi = (e.end() + 2).min(test.len());
        let vals: Vec<String> = test[lo..hi].iter().map(|v| format!("{:+.2}", v)).collect();
        println!("{:<16} {:>5}..{:<5} {}", format!("{:?}", e.kind), e.start, e.end(), vals.join(" "));
    }
    Ok(())
}
