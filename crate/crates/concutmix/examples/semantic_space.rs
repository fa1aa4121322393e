//! Train the contrastive semantic space alone and watch embeddings organize
//! around their class prototypes.
//!
//! The loss pulls each sample's unit embedding toward its learnable class
//! prototype and pushes it from the others. After a few hundred steps each
//! class's mean embedding is nearest its own prototype, which is the property
//! that later makes prototypes usable as class centers for label construction.

use concutmix::dataset::{make_synthetic_source, Sampler, SamplerKind, SyntheticSpec};
use concutmix::image::Image;
use concutmix::nn::SgdMomentum;
use concutmix::semantic::{train_semantic_step, BackboneKind, ModelConfig, SemanticModel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> concutmix::Result<()> {
    let spec = SyntheticSpec {
        num_classes: 4,
        per_class: 40,
        width: 6,
        height: 6,
        channels: 1,
        class_separation: 6.0,
        seed: 5,
    };
    let data = make_synthetic_source(&spec)?;

    let config = ModelConfig {
        width: spec.width,
        height: spec.height,
        channels: spec.channels,
        num_classes: spec.num_classes,
        backbone: BackboneKind::Mlp,
        conv1_channels: 4,
        conv2_channels: 8,
        mlp_hidden: 32,
        proj_hidden: 16,
        proj_dim: 8,
        temperature: 0.1,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut model = SemanticModel::new(&config, &mut rng)?;
    let mut opt = SgdMomentum::new(0.9, &model.tensor_sizes());

    let sampler = Sampler::new(SamplerKind::Balanced, &data)?;
    for step in 0..300 {
        let idx: Vec<usize> = (0..16).map(|_| sampler.next_index(&mut rng)).collect();
        let images: Vec<&Image> = idx.iter().map(|&i| data.image(i)).collect();
        let labels: Vec<usize> = idx.iter().map(|&i| data.label(i)).collect();
        let loss = train_semantic_step(&mut model, &images, &labels, &mut opt, 0.05, 1.0)?;
        if step % 75 == 0 {
            println!("step {step:3}: contrastive loss {loss:.4}");
        }
    }

    // Distance from each class's mean embedding to every prototype.
    let protos = model.normalized_prototypes();
    let d = config.proj_dim;
    println!("\nmean-embedding -> prototype distances (rows: class, cols: prototype)");
    for class in 0..spec.num_classes {
        let idx = data.class_indices(class);
        let images: Vec<&Image> = idx.iter().map(|&i| data.image(i)).collect();
        let (_, normalized) = model.embed(&images)?;
        let mut mean = vec![0.0f64; d];
        for row in normalized.chunks(d) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / idx.len() as f64;
            }
        }
        print!("  class {class}:");
        for p in 0..spec.num_classes {
            let dist: f64 = mean
                .iter()
                .zip(&protos[p * d..(p + 1) * d])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let marker = if p == class { "*" } else { " " };
            print!(" {dist:.3}{marker}");
        }
        println!();
    }
    println!("(* marks the class's own prototype; it should hold the row minimum)");
    Ok(())
}
