//! Reliability diagram data: bin predictions by confidence, compare each bin's
//! accuracy to its mean confidence, and roll the gaps into one calibration number.
//!
//! Bins where the bar (accuracy) falls short of the diagonal (confidence) are
//! overconfident; the expected calibration error is the count-weighted mean gap,
//! scaled to percent.

use concutmix::dataset::{build_longtailed, make_synthetic_source, make_synthetic_val, SyntheticSpec};
use concutmix::trainer::{evaluate_model, train, TrainConfig};

fn main() -> concutmix::Result<()> {
    let spec = SyntheticSpec {
        num_classes: 5,
        per_class: 100,
        width: 6,
        height: 6,
        channels: 1,
        class_separation: 3.0,
        seed: 11,
    };
    let train_split = build_longtailed(&make_synthetic_source(&spec)?, 20.0, 11)?;
    let val_split = make_synthetic_val(&spec, 40)?;

    let config = TrainConfig {
        epochs: 6,
        batch_size: 16,
        lr: 0.03,
        conv1_channels: 4,
        conv2_channels: 8,
        proj_hidden: 16,
        proj_dim: 8,
        seed: 11,
        ..TrainConfig::default()
    };
    let out = train(&config, &train_split, &val_split)?;

    let (report, cal) = evaluate_model(
        &out.model,
        &out.head,
        &val_split,
        &out.census,
        &config.group_spec,
        10,
        64,
    )?;
    println!("top-1 {:.4}, ece {:.2}\n", report.top1, cal.ece);

    println!("confidence bin    count  conf    acc");
    for bin in &cal.bins {
        if bin.count == 0 {
            continue;
        }
        let bar = "#".repeat((bin.accuracy * 30.0).round() as usize);
        println!(
            "({:.2}, {:.2}]  {:7}  {:.3}  {:.3}  {bar}",
            bin.lo, bin.hi, bin.count, bin.confidence, bin.accuracy
        );
    }
    Ok(())
}
