//! CSV and JSON landmark files.
//!
//! CSV: header `image_id,vertebra,corner,x,y`, one row per landmark, rows
//! grouped by image, vertebrae 0..=16 ascending and corners in TL,TR,BL,BR
//! order. CSV carries no pixel spacing; images read from CSV get 1.0 mm/px.
//!
//! JSON: an array of `{image_id, pixel_spacing_mm, landmarks}` objects where
//! `landmarks` holds 68 `[x, y]` pairs in the same vertebra-major order.
//!
//! Serialization is canonical: reading a file we wrote and writing it again
//! yields the same bytes.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::LandmarkError;
use crate::landmarks::{Corner, Point, SpineLandmarks, CORNERS_PER_VERTEBRA, LANDMARK_COUNT};

pub const CSV_HEADER: [&str; 5] = ["image_id", "vertebra", "corner", "x", "y"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LandmarkFormat {
    Csv,
    Json,
}

impl LandmarkFormat {
    /// Guesses from the file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "csv" => Some(LandmarkFormat::Csv),
            "json" => Some(LandmarkFormat::Json),
            _ => None,
        }
    }
}

pub fn parse_landmarks<R: Read>(
    mut source: R,
    format: LandmarkFormat,
) -> Result<Vec<SpineLandmarks>, LandmarkError> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    if bytes.iter().all(u8::is_ascii_whitespace) {
        return Ok(Vec::new());
    }
    match format {
        LandmarkFormat::Csv => parse_csv(&bytes),
        LandmarkFormat::Json => parse_json(&bytes),
    }
}

pub fn serialize_landmarks<W: Write>(
    images: &[SpineLandmarks],
    format: LandmarkFormat,
    sink: W,
) -> std::io::Result<()> {
    match format {
        LandmarkFormat::Csv => write_csv(images, sink),
        LandmarkFormat::Json => write_json(images, sink),
    }
}

pub fn landmarks_to_string(images: &[SpineLandmarks], format: LandmarkFormat) -> String {
    let mut buf = Vec::new();
    serialize_landmarks(images, format, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("serializer emits UTF-8")
}

pub fn read_landmark_file(path: &Path, format: LandmarkFormat) -> Result<Vec<SpineLandmarks>, LandmarkError> {
    parse_landmarks(std::fs::File::open(path)?, format)
}

struct PendingImage {
    image_id: String,
    points: Vec<Point>,
}

impl PendingImage {
    fn finish(self) -> Result<SpineLandmarks, LandmarkError> {
        if self.points.len() != LANDMARK_COUNT {
            return Err(LandmarkError::Structure {
                message: format!(
                    "expected {LANDMARK_COUNT} landmarks, found {}",
                    self.points.len()
                ),
                image_id: self.image_id,
            });
        }
        SpineLandmarks::from_points(self.image_id, &self.points, 1.0)
    }
}

fn parse_csv(bytes: &[u8]) -> Result<Vec<SpineLandmarks>, LandmarkError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(bytes);
    let header = reader.headers().map_err(|e| csv_error(&e))?.clone();
    if header.iter().map(str::trim).ne(CSV_HEADER) {
        return Err(LandmarkError::Parse {
            line: 1,
            message: format!("expected header {}", CSV_HEADER.join(",")),
        });
    }

    let mut images = Vec::new();
    let mut seen = HashSet::new();
    let mut current: Option<PendingImage> = None;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(&e))?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| LandmarkError::Parse { line, message };
        if record.len() != CSV_HEADER.len() {
            return Err(bad(format!("expected 5 fields, found {}", record.len())));
        }
        let image_id = &record[0];
        let vertebra: usize = record[1]
            .trim()
            .parse()
            .map_err(|_| bad(format!("invalid vertebra index {:?}", &record[1])))?;
        let corner = Corner::parse(record[2].trim())
            .ok_or_else(|| bad(format!("invalid corner {:?}", &record[2])))?;
        let x = parse_coord(&record[3]).ok_or_else(|| bad(format!("invalid x {:?}", &record[3])))?;
        let y = parse_coord(&record[4]).ok_or_else(|| bad(format!("invalid y {:?}", &record[4])))?;
        if !(x.is_finite() && y.is_finite()) {
            return Err(LandmarkError::Value {
                image_id: image_id.to_string(),
                message: format!("line {line}: non-finite coordinate"),
            });
        }

        if current.as_ref().is_some_and(|c| c.image_id != image_id) {
            images.push(current.take().unwrap().finish()?);
        }
        let pending = match current.as_mut() {
            Some(p) => p,
            None => {
                if !seen.insert(image_id.to_string()) {
                    return Err(LandmarkError::Structure {
                        image_id: image_id.to_string(),
                        message: format!("line {line}: rows for this image are not contiguous"),
                    });
                }
                current.insert(PendingImage {
                    image_id: image_id.to_string(),
                    points: Vec::with_capacity(LANDMARK_COUNT),
                })
            }
        };
        let n = pending.points.len();
        if n == LANDMARK_COUNT {
            return Err(LandmarkError::Structure {
                image_id: image_id.to_string(),
                message: format!("line {line}: more than {LANDMARK_COUNT} landmarks"),
            });
        }
        let expected = (n / CORNERS_PER_VERTEBRA, Corner::ALL[n % CORNERS_PER_VERTEBRA]);
        if (vertebra, corner) != expected {
            return Err(bad(format!(
                "expected vertebra {} corner {}, found vertebra {vertebra} corner {corner}",
                expected.0, expected.1
            )));
        }
        pending.points.push(Point::new(x, y));
    }
    if let Some(p) = current {
        images.push(p.finish()?);
    }
    Ok(images)
}

fn parse_coord(field: &str) -> Option<f64> {
    field.trim().parse().ok()
}

fn csv_error(e: &csv::Error) -> LandmarkError {
    LandmarkError::Parse {
        line: e.position().map_or(0, |p| p.line()),
        message: e.to_string(),
    }
}

fn write_csv<W: Write>(images: &[SpineLandmarks], sink: W) -> std::io::Result<()> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(sink);
    writer.write_record(CSV_HEADER)?;
    for image in images {
        for (v, vert) in image.vertebrae.iter().enumerate() {
            for corner in Corner::ALL {
                let p = vert.corner(corner);
                writer.write_record([
                    image.image_id.as_str(),
                    &v.to_string(),
                    corner.as_str(),
                    &p.x.to_string(),
                    &p.y.to_string(),
                ])?;
            }
        }
    }
    writer.flush()
}

fn default_spacing() -> f64 {
    1.0
}

#[derive(Serialize, Deserialize)]
struct JsonImage {
    image_id: String,
    #[serde(default = "default_spacing")]
    pixel_spacing_mm: f64,
    landmarks: Vec<[f64; 2]>,
}

fn parse_json(bytes: &[u8]) -> Result<Vec<SpineLandmarks>, LandmarkError> {
    let records: Vec<JsonImage> = serde_json::from_slice(bytes).map_err(|e| LandmarkError::Parse {
        line: e.line() as u64,
        message: e.to_string(),
    })?;
    let mut seen = HashSet::new();
    records
        .into_iter()
        .map(|r| {
            if !seen.insert(r.image_id.clone()) {
                return Err(LandmarkError::Structure {
                    image_id: r.image_id,
                    message: "duplicate image id".into(),
                });
            }
            let points: Vec<Point> = r.landmarks.iter().map(|&[x, y]| Point::new(x, y)).collect();
            SpineLandmarks::from_points(r.image_id, &points, r.pixel_spacing_mm)
        })
        .collect()
}

fn write_json<W: Write>(images: &[SpineLandmarks], mut sink: W) -> std::io::Result<()> {
    let records: Vec<JsonImage> = images
        .iter()
        .map(|sl| JsonImage {
            image_id: sl.image_id.clone(),
            pixel_spacing_mm: sl.pixel_spacing_mm,
            landmarks: sl.points().iter().map(|p| [p.x, p.y]).collect(),
        })
        .collect();
    serde_json::to_writer_pretty(&mut sink, &records)?;
    sink.write_all(b"\n")
}
