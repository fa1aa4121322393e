//! Build long-tailed training splits from one balanced synthetic source and show
//! how the exponential decay profile and the many/medium/few grouping interact.
//!
//! Run with `cargo run --example build_longtailed`.

use concutmix::dataset::{build_longtailed, make_synthetic_source, SyntheticSpec};
use concutmix::metrics::GroupSpec;

fn main() -> concutmix::Result<()> {
    let spec = SyntheticSpec {
        num_classes: 10,
        per_class: 500,
        width: 8,
        height: 8,
        channels: 3,
        class_separation: 4.0,
        seed: 0,
    };
    let source = make_synthetic_source(&spec)?;
    println!(
        "balanced source: {} samples, {} per class\n",
        source.len(),
        spec.per_class
    );

    let groups = GroupSpec::default();
    for factor in [10.0, 100.0] {
        let split = build_longtailed(&source, factor, spec.seed)?;
        let census = split.census()?;
        println!(
            "imbalance factor {factor}: {} samples, head/tail = {:.0}",
            census.total(),
            census.imbalance_factor()
        );
        for (class, &count) in census.counts().iter().enumerate() {
            let bar = "#".repeat(count / 10);
            println!("  class {class}: {count:4} {:?} {bar}", groups.group_of(count));
        }
        println!();
    }
    Ok(())
}
