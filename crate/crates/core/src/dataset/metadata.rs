use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column names of the metadata CSV, in the order they are written.
pub const METADATA_COLUMNS: [&str; 11] = [
    "Image Index",
    "Finding Labels",
    "Follow-up #",
    "Patient ID",
    "Patient Age",
    "Patient Gender",
    "View Position",
    "OriginalImageWidth",
    "OriginalImageHeight",
    "OriginalImagePixelSpacing_x",
    "OriginalImagePixelSpacing_y",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViewPosition {
    PA,
    AP,
    #[serde(rename = "OTHER")]
    Other,
}

impl ViewPosition {
    /// Anything other than PA or AP (case-insensitive) is `Other`.
    pub fn parse(s: &str) -> Self {
        match s.trim().to_ascii_uppercase().as_str() {
            "PA" => ViewPosition::PA,
            "AP" => ViewPosition::AP,
            _ => ViewPosition::Other,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ViewPosition::PA => "PA",
            ViewPosition::AP => "AP",
            ViewPosition::Other => "OTHER",
        }
    }
}

/// Which views an experiment uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ViewSelector {
    PA,
    AP,
    #[serde(rename = "BOTH")]
    Both,
}

impl ViewSelector {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "PA" => Some(ViewSelector::PA),
            "AP" => Some(ViewSelector::AP),
            "BOTH" | "PA+AP" => Some(ViewSelector::Both),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ViewSelector::PA => "PA",
            ViewSelector::AP => "AP",
            ViewSelector::Both => "BOTH",
        }
    }

    pub fn accepts(self, view: ViewPosition) -> bool {
        matches!(
            (self, view),
            (ViewSelector::PA, ViewPosition::PA)
                | (ViewSelector::AP, ViewPosition::AP)
                | (ViewSelector::Both, ViewPosition::PA | ViewPosition::AP)
        )
    }
}

/// One row of the metadata CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct MetadataRecord {
    pub image_index: String,
    pub finding_labels: String,
    pub follow_up: u32,
    pub patient_id: String,
    pub patient_age: u32,
    pub patient_gender: String,
    pub view_position: ViewPosition,
    pub width: u32,
    pub height: u32,
    pub pixel_spacing_x: f64,
    pub pixel_spacing_y: f64,
}

impl super::SplitKey for MetadataRecord {
    fn image_key(&self) -> &str {
        &self.image_index
    }

    fn group_key(&self) -> &str {
        &self.patient_id
    }
}

fn parse_field<V: std::str::FromStr>(raw: &str, column: &str, row: usize) -> Result<V> {
    raw.trim().parse().map_err(|_| Error::MalformedRow {
        row,
        reason: format!("column \"{column}\": cannot parse {raw:?}"),
    })
}

/// Parses metadata CSV text. Columns may appear in any order; extra columns
/// are ignored. Row numbers in errors count data rows from 1.
pub fn parse_metadata(csv_text: &str) -> Result<Vec<MetadataRecord>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::Headers)
        .from_reader(csv_text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::MalformedRow {
            row: 0,
            reason: format!("header: {e}"),
        })?
        .clone();
    let mut index = [0usize; METADATA_COLUMNS.len()];
    for (slot, name) in index.iter_mut().zip(METADATA_COLUMNS) {
        *slot = headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| Error::MalformedRow {
            row: row_no,
            reason: e.to_string(),
        })?;
        let field = |k: usize| row.get(index[k]).unwrap_or("");
        let image_index = field(0).trim().to_string();
        if image_index.is_empty() {
            return Err(Error::MalformedRow {
                row: row_no,
                reason: "empty \"Image Index\"".into(),
            });
        }
        let width: u32 = parse_field(field(7), METADATA_COLUMNS[7], row_no)?;
        let height: u32 = parse_field(field(8), METADATA_COLUMNS[8], row_no)?;
        if width == 0 || height == 0 {
            return Err(Error::MalformedRow {
                row: row_no,
                reason: "image dimensions must be positive".into(),
            });
        }
        records.push(MetadataRecord {
            image_index,
            finding_labels: field(1).to_string(),
            follow_up: parse_field(field(2), METADATA_COLUMNS[2], row_no)?,
            patient_id: field(3).trim().to_string(),
            patient_age: parse_field(field(4), METADATA_COLUMNS[4], row_no)?,
            patient_gender: field(5).trim().to_string(),
            view_position: ViewPosition::parse(field(6)),
            width,
            height,
            pixel_spacing_x: parse_field(field(9), METADATA_COLUMNS[9], row_no)?,
            pixel_spacing_y: parse_field(field(10), METADATA_COLUMNS[10], row_no)?,
        });
    }
    Ok(records)
}

/// Serializes records with the canonical header.
pub fn write_metadata(records: &[MetadataRecord]) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    writer.write_record(METADATA_COLUMNS).expect("write to Vec");
    for r in records {
        writer
            .write_record([
                r.image_index.clone(),
                r.finding_labels.clone(),
                r.follow_up.to_string(),
                r.patient_id.clone(),
                r.patient_age.to_string(),
                r.patient_gender.clone(),
                r.view_position.as_str().to_string(),
                r.width.to_string(),
                r.height.to_string(),
                r.pixel_spacing_x.to_string(),
                r.pixel_spacing_y.to_string(),
            ])
            .expect("write to Vec");
    }
    String::from_utf8(writer.into_inner().expect("flush Vec")).expect("csv output is UTF-8")
}

/// Keeps the records whose view the selector accepts. `Other` views are
/// always dropped.
pub fn filter_view(records: Vec<MetadataRecord>, selector: ViewSelector) -> Vec<MetadataRecord> {
    records
        .into_iter()
        .filter(|r| selector.accepts(r.view_position))
        .collect()
}

/// Drops records strictly older than `max_age` (90 itself is kept).
pub fn remove_age_outliers(records: Vec<MetadataRecord>, max_age: f64) -> Vec<MetadataRecord> {
    records
        .into_iter()
        .filter(|r| f64::from(r.patient_age) <= max_age)
        .collect()
}
