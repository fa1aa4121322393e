//! Walk one mixed sample through the whole label pipeline by hand: similarity to
//! class centers, the sparse semantic label, the confidence weight, and the final
//! rectified label.
//!
//! The scenario: a cut-and-paste image mixing class 0 (60% of pixels) onto class 1
//! (40%), where the embedding actually sits closest to class 2's center. The area
//! label cannot see that; the semantic label can, and the confidence decides how
//! much of it to trust.

use concutmix::dataset::ClassCensus;
use concutmix::rectify::{
    confidence, default_omega, effective_count, rectify, semantic_label, similarity,
    CountActivation, SimilarityMetric,
};

fn main() -> concutmix::Result<()> {
    // Four classes with unit-vector centers in a 4-d space; the sample's embedding
    // leans toward class 2 with a touch of class 0.
    let centers = vec![
        1.0, 0.0, 0.0, 0.0, // class 0
        0.0, 1.0, 0.0, 0.0, // class 1
        0.0, 0.0, 1.0, 0.0, // class 2
        0.0, 0.0, 0.0, 1.0, // class 3
    ];
    let embedding = [0.35, 0.05, 0.93, 0.05];
    let (fg, bg, lambda) = (0usize, 1usize, 0.6f64);

    let sims = similarity(&embedding, &centers, SimilarityMetric::ReciprocalEuclidean)?;
    println!("similarities: {sims:.4?}");

    // Support size 3: room for the nearest center (class 2) plus both mixed
    // sources, which are always forced into the support.
    let k = 3;
    let sem = semantic_label(&sims, k, fg, bg, true)?;
    println!("semantic label (top-{k}, sources forced in): {sem:.4?}");

    // How much to trust it: the blend weight grows with the effective number of
    // training samples behind the mix.
    let census = ClassCensus::new(vec![500, 180, 65, 23])?;
    let n_eff = effective_count(lambda, census.counts()[fg], census.counts()[bg])?;
    let omega = default_omega(4);
    let gamma = confidence(n_eff, &census, omega, CountActivation::Log)?;
    println!("effective count {n_eff:.1}, omega {omega}, gamma {gamma:.5}");

    let area = [lambda, 1.0 - lambda, 0.0, 0.0];
    let label = rectify(&area, &sem, gamma)?;
    println!("area label:      {area:.4?}");
    println!("rectified label: {label:.4?}");

    // A heavier gamma shows the pull toward the semantic view more clearly.
    let label_strong = rectify(&area, &sem, 0.5)?;
    println!("with gamma 0.5:  {label_strong:.4?}");
    Ok(())
}
