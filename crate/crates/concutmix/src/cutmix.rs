//! CutMix synthesis: paste a rectangular patch of a foreground image onto a
//! background image and carry an area-proportional soft label.
//!
//! The patch targets area `lambda_raw * W * H` with the image's aspect ratio
//! (side lengths `W*sqrt(lambda_raw)` by `H*sqrt(lambda_raw)`), centered uniformly
//! over the image and clipped to bounds. The *effective* mixing ratio is recomputed
//! from the clipped box; that value feeds both the area label and downstream
//! effective-count bookkeeping, so a corner-clipped patch never over-claims mass.

use rand::Rng;

use crate::error::{Error, Result};
use crate::image::Image;

/// Half-open pixel rectangle: columns `x0..x1`, rows `y0..y1`. Always non-empty
/// and inside the image it was sampled for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MixBox {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl MixBox {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    /// Fraction of an `width x height` image covered by this box. Consumers must
    /// use this exact value as the mixing ratio so label mass and pixel mass agree.
    pub fn coverage(&self, width: usize, height: usize) -> f64 {
        self.area() as f64 / (width * height) as f64
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x0 && x < self.x1 && y >= self.y0 && y < self.y1
    }
}

/// Deterministic core of [`sample_box`]: build the clipped box for a given center.
fn place_box(width: usize, height: usize, lambda_raw: f64, cx: usize, cy: usize) -> MixBox {
    let scale = lambda_raw.sqrt();
    // Round to the nearest pixel count but never collapse to an empty patch.
    let bw = ((width as f64 * scale).round() as i64).clamp(1, width as i64);
    let bh = ((height as f64 * scale).round() as i64).clamp(1, height as i64);
    let x0 = (cx as i64 - bw / 2).clamp(0, width as i64);
    let x1 = (cx as i64 - bw / 2 + bw).clamp(0, width as i64);
    let y0 = (cy as i64 - bh / 2).clamp(0, height as i64);
    let y1 = (cy as i64 - bh / 2 + bh).clamp(0, height as i64);
    debug_assert!(x0 < x1 && y0 < y1);
    MixBox { x0: x0 as usize, y0: y0 as usize, x1: x1 as usize, y1: y1 as usize }
}

/// Sample a patch rectangle for an `width x height` image. `lambda_raw` must lie in
/// the open interval (0, 1); the caller draws it (resampling exact endpoint hits).
pub fn sample_box<R: Rng>(width: usize, height: usize, lambda_raw: f64, rng: &mut R) -> Result<MixBox> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidConfig("box target image must be non-empty".into()));
    }
    if !lambda_raw.is_finite() || lambda_raw <= 0.0 || lambda_raw >= 1.0 {
        return Err(Error::InvalidConfig(format!(
            "lambda_raw must lie in the open interval (0, 1), got {lambda_raw}"
        )));
    }
    let cx = rng.random_range(0..width);
    let cy = rng.random_range(0..height);
    Ok(place_box(width, height, lambda_raw, cx, cy))
}

/// Draw a mixing ratio uniformly from the open interval (0, 1), resampling the
/// (measure-zero) exact endpoints.
pub fn sample_lambda<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let lambda: f64 = rng.random();
        if lambda > 0.0 && lambda < 1.0 {
            return lambda;
        }
    }
}

/// A CutMix output: the pasted image, its area-proportional soft label, and the
/// bookkeeping needed for label rectification.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub image: Image,
    /// Soft label: `lambda` at the foreground class, `1 - lambda` at the background
    /// class (a single 1.0 entry when they coincide).
    pub area_label: Vec<f64>,
    /// Effective mixing ratio, recomputed from the clipped box.
    pub lambda: f64,
    pub fg_class: usize,
    pub bg_class: usize,
}

/// Paste `foreground` pixels inside `patch` onto `background` and build the
/// area-proportional label over `num_classes` classes.
pub fn mix(
    foreground: &Image,
    fg_class: usize,
    background: &Image,
    bg_class: usize,
    patch: &MixBox,
    num_classes: usize,
) -> Result<SyntheticSample> {
    if !foreground.same_shape(background) {
        return Err(Error::ShapeMismatch(format!(
            "foreground {:?} vs background {:?}",
            foreground.shape(),
            background.shape()
        )));
    }
    for (class, what) in [(fg_class, "foreground"), (bg_class, "background")] {
        if class >= num_classes {
            let _ = what;
            return Err(Error::ClassOutOfRange { class, num_classes });
        }
    }
    let (width, height, channels) = foreground.shape();
    if patch.x1 > width || patch.y1 > height || patch.x0 >= patch.x1 || patch.y0 >= patch.y1 {
        return Err(Error::InvalidConfig(format!(
            "patch {patch:?} does not fit a {width}x{height} image"
        )));
    }

    let mut image = background.clone();
    for y in patch.y0..patch.y1 {
        for x in patch.x0..patch.x1 {
            for c in 0..channels {
                image.set(x, y, c, foreground.get(x, y, c));
            }
        }
    }

    let lambda = patch.coverage(width, height);
    let mut area_label = vec![0.0; num_classes];
    if fg_class == bg_class {
        area_label[fg_class] = 1.0;
    } else {
        area_label[fg_class] = lambda;
        area_label[bg_class] = 1.0 - lambda;
    }
    Ok(SyntheticSample { image, area_label, lambda, fg_class, bg_class })
}
