//! Run a small paired ablation grid in-process: rectification off (omega 0)
//! against two strengths of it, all three cells trained on the identical dataset
//! and seed so the comparison is never confounded by data draws.
//!
//! Outputs land in a temp directory; the printed grid.csv is the comparison
//! table. Cells run in parallel (capped by the CCMX_THREADS env var).

use std::fs;

use concutmix::experiment::{run_grid, DatasetSource, GridRequest, SyntheticSource};
use concutmix::trainer::TrainConfig;

fn main() -> anyhow::Result<()> {
    let out = std::env::temp_dir().join("ccmx_ablation_grid");
    let _ = fs::remove_dir_all(&out);

    let request = GridRequest {
        name: "omega-sweep".into(),
        dataset: DatasetSource::Synthetic(SyntheticSource {
            num_classes: 5,
            per_class: 80,
            width: 6,
            height: 6,
            channels: 1,
            class_separation: 4.0,
            imbalance_factor: 20.0,
            val_per_class: 20,
            seed: 3,
        }),
        config: TrainConfig {
            epochs: 4,
            batch_size: 16,
            conv1_channels: 4,
            conv2_channels: 8,
            proj_hidden: 16,
            proj_dim: 8,
            seed: 3,
            ..TrainConfig::default()
        },
        topk: vec![],
        omega: vec![0.0, 0.01, 0.1],
        activation: vec![],
        metric: vec![],
        fg_sampler: vec![],
        bg_sampler: vec![],
        max_cells: 16,
    };

    let summary = run_grid(&request, &out)?;
    println!("ran {} cells ({} failed) in {}\n", summary.cells, summary.failed, out.display());
    print!("{}", fs::read_to_string(out.join("grid.csv"))?);
    println!("\nper-cell details: {}/cell_000/{{metrics.csv,summary.json}}", out.display());
    Ok(())
}
