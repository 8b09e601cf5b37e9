use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{LabeledImage, MetadataRecord, ViewPosition, MAX_AGE_YEARS};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Half-open pixel rectangle `[row0, row1) × [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Region {
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
}

impl Region {
    pub fn new(row0: usize, col0: usize, row1: usize, col1: usize) -> Self {
        Region { row0, col0, row1, col1 }
    }

    pub fn area(&self) -> usize {
        self.row1.saturating_sub(self.row0) * self.col1.saturating_sub(self.col0)
    }

    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.row0..self.row1).contains(&row) && (self.col0..self.col1).contains(&col)
    }

    pub fn fits(&self, height: usize, width: usize) -> bool {
        self.row0 < self.row1 && self.col0 < self.col1 && self.row1 <= height && self.col1 <= width
    }
}

/// `r0,c0,r1,c1`, the region manifest format.
impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.row0, self.col0, self.row1, self.col1)
    }
}

impl FromStr for Region {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(',').map(str::trim).collect();
        let bad = || Error::invalid("region", format!("expected \"r0,c0,r1,c1\", got {s:?}"));
        if parts.len() != 4 {
            return Err(bad());
        }
        let mut v = [0usize; 4];
        for (slot, p) in v.iter_mut().zip(&parts) {
            *slot = p.parse().map_err(|_| bad())?;
        }
        Ok(Region::new(v[0], v[1], v[2], v[3]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Images are `image_size × image_size`.
    pub image_size: usize,
    pub n_samples: usize,
    pub noise_sigma: f64,
    pub signal_region: Region,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let s = self.image_size;
        if s == 0 || self.n_samples == 0 {
            return Err(Error::invalid("synthetic", "image_size and n_samples must be positive"));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::invalid(
                "synthetic",
                "noise_sigma must be finite and nonnegative",
            ));
        }
        let r = self.signal_region;
        if !r.fits(s, s) {
            return Err(Error::invalid(
                "synthetic",
                format!("signal region {r} must be nonempty and lie within {s}×{s}"),
            ));
        }
        if r.area() * 4 > s * s {
            return Err(Error::invalid(
                "synthetic",
                format!(
                    "signal region area {} exceeds a quarter of the image ({})",
                    r.area(),
                    s * s / 4
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset<T> {
    pub images: Vec<LabeledImage<T>>,
    pub region: Region,
    pub image_size: usize,
}

/// Intensity inside the signal region for a given age.
pub(crate) fn region_intensity(age_years: f64) -> f64 {
    0.1 + 0.8 * (age_years / MAX_AGE_YEARS)
}

/// Draws `n_samples` ages uniformly from [0, 90] and renders each as a
/// noisy mid-grey image whose signal region brightness encodes the age.
pub fn generate_synthetic<T: Real>(spec: &SyntheticSpec) -> Result<SyntheticDataset<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::invalid("synthetic", e.to_string()))?;
    let s = spec.image_size;
    let region = spec.signal_region;

    let mut images = Vec::with_capacity(spec.n_samples);
    for i in 0..spec.n_samples {
        let age = rng.random::<f64>() * MAX_AGE_YEARS;
        let inside = region_intensity(age);
        let mut pixels = Vec::with_capacity(s * s);
        for row in 0..s {
            for col in 0..s {
                let base = if region.contains(row, col) { inside } else { 0.5 };
                let eps = if spec.noise_sigma > 0.0 {
                    noise.sample(&mut rng)
                } else {
                    0.0
                };
                pixels.push(T::from_f64_lossy((base + eps).clamp(0.0, 1.0)));
            }
        }
        let tensor = Tensor::from_parts(vec![1, s, s], pixels);
        images.push(LabeledImage::new(synthetic_name(i), tensor, age, None)?);
    }
    Ok(SyntheticDataset {
        images,
        region,
        image_size: s,
    })
}

pub(crate) fn synthetic_name(i: usize) -> String {
    format!("synth_{i:06}.pgm")
}

impl<T: Real> SyntheticDataset<T> {
    /// Metadata rows for exporting the dataset. Ages are rounded to whole
    /// years, the resolution of the CSV schema; every row is tagged PA.
    pub fn records(&self) -> Vec<MetadataRecord> {
        self.images
            .iter()
            .enumerate()
            .map(|(i, img)| MetadataRecord {
                image_index: img.id.clone(),
                finding_labels: "No Finding".into(),
                follow_up: 0,
                patient_id: format!("{:08}", i + 1),
                patient_age: img.age_years.round() as u32,
                patient_gender: if i % 2 == 0 { "M" } else { "F" }.into(),
                view_position: ViewPosition::PA,
                width: self.image_size as u32,
                height: self.image_size as u32,
                pixel_spacing_x: 0.143,
                pixel_spacing_y: 0.143,
            })
            .collect()
    }
}
