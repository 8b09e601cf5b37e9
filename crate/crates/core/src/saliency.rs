//! Vanilla-gradient saliency: the gradient of the sigmoid output with
//! respect to input pixels, reduced over channels by max |g|.
//!
//! Gradients are taken of the normalized (0-1) output, not of years. The two
//! differ by the constant factor 90, which cancels after normalization.

use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};

use crate::autodiff::Graph;
use crate::dataset::Region;
use crate::error::{Error, Result};
use crate::network::GraphModel;
use crate::real::Real;
use crate::tensor::Tensor;

/// Guards the denominator of [`region_saliency_ratio`].
pub const RATIO_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub height: usize,
    pub width: usize,
    /// Row-major, all ≥ 0.
    pub values: Vec<f64>,
    /// Maximum before normalization.
    pub raw_max: f64,
    /// Identifier of the image the map was computed for.
    pub source: Option<String>,
}

impl SaliencyMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }
}

/// d(output) / d(input) for a single image of shape 1×C×H×W.
pub fn input_gradient<T: Real, M: GraphModel<T>>(model: &M, image: &Tensor<T>) -> Result<Tensor<T>> {
    let [c, h, w] = model.input_dims();
    if image.shape() != [1, c, h, w] {
        return Err(Error::shape("input_gradient", image.shape(), &[1, c, h, w]));
    }
    let mut graph = Graph::new();
    let input = graph.leaf(image.clone());
    let output = model.record(&mut graph, input)?;
    let mut grads = graph.backward(output)?;
    Ok(grads.take(input))
}

/// Max over channels of |grad| at every pixel.
pub fn saliency_map<T: Real>(grad: &Tensor<T>) -> Result<SaliencyMap> {
    let [n, c, h, w] = grad.dims4("saliency_map")?;
    if n != 1 {
        return Err(Error::invalid("saliency_map", format!("expected batch of 1, got {n}")));
    }
    let data = grad.data();
    let mut values = vec![0.0f64; h * w];
    for ch in 0..c {
        for (v, g) in values.iter_mut().zip(&data[ch * h * w..(ch + 1) * h * w]) {
            *v = v.max(g.as_f64().abs());
        }
    }
    let raw_max = values.iter().copied().fold(0.0, f64::max);
    Ok(SaliencyMap {
        height: h,
        width: w,
        values,
        raw_max,
        source: None,
    })
}

/// Scales values into [0, 1] by the current maximum. Zero maps are returned
/// unchanged; `raw_max` is preserved.
pub fn normalize_map(mut map: SaliencyMap) -> SaliencyMap {
    let max = map.values.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        for v in &mut map.values {
            *v /= max;
        }
    }
    map
}

/// Blue (low) to red (high).
fn colormap(v: f64) -> [f64; 3] {
    let v = v.clamp(0.0, 1.0);
    [255.0 * v, 0.0, 255.0 * (1.0 - v)]
}

/// Grayscale `image` (1×H×W, values in [0, 1]) blended half-and-half with
/// the colormapped saliency. Pass a normalized map.
pub fn overlay<T: Real>(image: &Tensor<T>, map: &SaliencyMap) -> Result<RgbImage> {
    let shape = image.shape();
    if shape.len() != 3 || shape[0] != 1 || shape[1] != map.height || shape[2] != map.width {
        return Err(Error::shape("overlay", shape, &[1, map.height, map.width]));
    }
    let mut out = RgbImage::new(map.width as u32, map.height as u32);
    for (i, (px, &s)) in image.data().iter().zip(&map.values).enumerate() {
        let gray = 255.0 * px.as_f64().clamp(0.0, 1.0);
        let color = colormap(s);
        let blend = |k: usize| (0.5 * gray + 0.5 * color[k]).round() as u8;
        out.put_pixel(
            (i % map.width) as u32,
            (i / map.width) as u32,
            Rgb([blend(0), blend(1), blend(2)]),
        );
    }
    Ok(out)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    let mut buf = std::io::Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)
        .map_err(|e| Error::invalid("encode_png", e.to_string()))?;
    Ok(buf.into_inner())
}

pub fn save_overlay(img: &RgbImage, path: &Path) -> Result<()> {
    std::fs::write(path, encode_png(img)?).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Mean saliency inside `region` over the mean outside it (floored at
/// [`RATIO_EPSILON`]).
pub fn region_saliency_ratio(map: &SaliencyMap, region: &Region) -> Result<f64> {
    if !region.fits(map.height, map.width) {
        return Err(Error::invalid(
            "region_saliency_ratio",
            format!(
                "region {region} is empty or outside the {}×{} map",
                map.height, map.width
            ),
        ));
    }
    let inside_n = region.area();
    let outside_n = map.height * map.width - inside_n;
    if outside_n == 0 {
        return Err(Error::invalid("region_saliency_ratio", "region covers the whole map"));
    }
    let (mut inside, mut outside) = (0.0, 0.0);
    for row in 0..map.height {
        for col in 0..map.width {
            let v = map.get(row, col);
            if region.contains(row, col) {
                inside += v;
            } else {
                outside += v;
            }
        }
    }
    Ok((inside / inside_n as f64) / (outside / outside_n as f64).max(RATIO_EPSILON))
}
