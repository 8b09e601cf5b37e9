//! Data ingestion: metadata CSV, view filtering, age cleaning and
//! normalization, train/validation split, image loading, and the seeded
//! synthetic dataset used as a desk-scale stand-in for radiographs.

mod image_io;
mod metadata;
mod split;
mod synthetic;

pub use image_io::{decode_image, encode_pgm, load_image, resize_bilinear};
pub use metadata::{
    filter_view, parse_metadata, remove_age_outliers, write_metadata, MetadataRecord, ViewPosition, ViewSelector,
    METADATA_COLUMNS,
};
pub use split::{split, Split, SplitKey};
pub use synthetic::{generate_synthetic, Region, SyntheticDataset, SyntheticSpec};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Ages above this are dropped as outliers; it is also the normalization divisor.
pub const MAX_AGE_YEARS: f64 = 90.0;

/// Maps an age in [0, 90] years to [0, 1].
pub fn normalize_age(age_years: f64) -> Result<f64> {
    if !(0.0..=MAX_AGE_YEARS).contains(&age_years) {
        return Err(Error::invalid(
            "normalize_age",
            format!("age {age_years} outside [0, {MAX_AGE_YEARS}]"),
        ));
    }
    Ok(age_years / MAX_AGE_YEARS)
}

/// Maps a normalized value in [0, 1] back to years.
pub fn denormalize_age(y: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::invalid("denormalize_age", format!("value {y} outside [0, 1]")));
    }
    Ok(y * MAX_AGE_YEARS)
}

/// One training/evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage<T> {
    /// Image file name (synthetic samples get a generated one).
    pub id: String,
    /// 1×H×W, values in [0, 1].
    pub pixels: Tensor<T>,
    pub age_years: f64,
    /// Always `age_years / 90`.
    pub age_normalized: f64,
    /// Source metadata; absent for synthetic samples.
    pub record: Option<MetadataRecord>,
}

impl<T: Real> LabeledImage<T> {
    pub fn new(
        id: impl Into<String>,
        pixels: Tensor<T>,
        age_years: f64,
        record: Option<MetadataRecord>,
    ) -> Result<Self> {
        let age_normalized = normalize_age(age_years)?;
        Ok(LabeledImage {
            id: id.into(),
            pixels,
            age_years,
            age_normalized,
            record,
        })
    }

    pub fn from_record(record: MetadataRecord, pixels: Tensor<T>) -> Result<Self> {
        Self::new(
            record.image_index.clone(),
            pixels,
            f64::from(record.patient_age),
            Some(record),
        )
    }
}

impl<T> SplitKey for LabeledImage<T> {
    fn image_key(&self) -> &str {
        &self.id
    }

    fn group_key(&self) -> &str {
        self.record.as_ref().map_or(&self.id, |r| &r.patient_id)
    }
}

pub type SplitDataset<T> = Split<LabeledImage<T>>;

/// Stacks the pixels of `items` into an N×1×H×W batch.
pub fn stack_pixels<T: Real>(items: &[&LabeledImage<T>]) -> Result<Tensor<T>> {
    let pixels: Vec<&Tensor<T>> = items.iter().map(|i| &i.pixels).collect();
    Tensor::stack(&pixels)
}
