use std::path::Path;

use image::{DynamicImage, ImageReader};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Reads an 8-bit PNG or PGM (plain or binary), collapses colour to the mean
/// of R, G and B, scales to [0, 1] and resizes bilinearly to `target`
/// (H, W). Returns a 1×H×W tensor.
pub fn load_image<T: Real>(path: &Path, target: (usize, usize)) -> Result<Tensor<T>> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let (w, h, gray) = decode_image(&bytes).map_err(|reason| Error::Image {
        path: path.to_path_buf(),
        reason,
    })?;
    let resized = resize_bilinear(&gray, h, w, target.0, target.1);
    Ok(Tensor::from_parts(
        vec![1, target.0, target.1],
        resized.into_iter().map(T::from_f64_lossy).collect(),
    ))
}

/// Decodes image bytes into (width, height, luminance in [0, 1]).
pub fn decode_image(bytes: &[u8]) -> std::result::Result<(usize, usize, Vec<f64>), String> {
    let decoded = ImageReader::new(std::io::Cursor::new(bytes))
        .with_guessed_format()
        .map_err(|e| e.to_string())?
        .decode()
        .map_err(|e| e.to_string())?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);
    let gray = match decoded {
        DynamicImage::ImageLuma8(img) => img.into_raw().into_iter().map(|v| f64::from(v) / 255.0).collect(),
        other => other
            .to_rgb8()
            .pixels()
            .map(|p| (f64::from(p[0]) + f64::from(p[1]) + f64::from(p[2])) / 3.0 / 255.0)
            .collect(),
    };
    Ok((w, h, gray))
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    if (h, w) == (out_h, out_w) {
        return src.to_vec();
    }
    let coords = |out: usize, input: usize| -> Vec<(usize, usize, f64)> {
        let scale = input as f64 / out as f64;
        (0..out)
            .map(|i| {
                let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(input - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let ys = coords(out_h, h);
    let xs = coords(out_w, w);
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let mut out = Vec::with_capacity(out_h * out_w);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            let top = lerp(src[y0 * w + x0], src[y0 * w + x1], fx);
            let bottom = lerp(src[y1 * w + x0], src[y1 * w + x1], fx);
            out.push(lerp(top, bottom, fy));
        }
    }
    out
}

/// Binary (P5) 8-bit PGM of a row-major grid with values in [0, 1].
pub fn encode_pgm(values: &[f64], h: usize, w: usize) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}
