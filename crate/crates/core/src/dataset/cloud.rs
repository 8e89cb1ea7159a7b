//! Point clouds as CSV: header `x,y,z` or `x,y,z,intensity`, one point per line.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, RecordError, RecordErrorKind, Result};
use crate::geometry::{Point3, PointCloud};

pub fn encode_point_cloud(c: &PointCloud) -> String {
    let mut out = String::new();
    match c.intensity() {
        None => {
            out.push_str("x,y,z\n");
            for p in c.points() {
                let _ = writeln!(out, "{},{},{}", p.x, p.y, p.z);
            }
        }
        Some(intensity) => {
            out.push_str("x,y,z,intensity\n");
            for (p, i) in c.points().iter().zip(intensity) {
                let _ = writeln!(out, "{},{},{},{}", p.x, p.y, p.z, i);
            }
        }
    }
    out
}

fn record_err(line: usize, kind: RecordErrorKind) -> Error {
    RecordError { line, kind }.into()
}

pub fn decode_point_cloud(text: &str) -> Result<PointCloud> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| record_err(1, RecordErrorKind::Malformed(e.to_string())))?
        .clone();
    let with_intensity = match headers.iter().collect::<Vec<_>>().as_slice() {
        ["x", "y", "z"] => false,
        ["x", "y", "z", "intensity"] => true,
        other => {
            return Err(record_err(
                1,
                RecordErrorKind::Malformed(format!("header {other:?}, expected x,y,z[,intensity]")),
            ))
        }
    };

    let mut points = Vec::new();
    let mut intensity = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            record_err(line, RecordErrorKind::Malformed(e.to_string()))
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let mut fields = record.iter().map(|f| {
            f.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| {
                    record_err(
                        line,
                        RecordErrorKind::Malformed(format!("`{f}` is not a finite number")),
                    )
                })
        });
        let mut next = || fields.next().expect("csv enforces field count");
        points.push(Point3::new(next()?, next()?, next()?));
        if with_intensity {
            let i = next()?;
            if !(0.0..=1.0).contains(&i) {
                return Err(record_err(
                    line,
                    RecordErrorKind::OutOfRange {
                        field: "intensity".into(),
                        value: i,
                    },
                ));
            }
            intensity.push(i);
        }
    }
    if with_intensity {
        PointCloud::with_intensity(points, intensity)
    } else {
        PointCloud::new(points)
    }
}

pub fn write_point_cloud(path: &Path, c: &PointCloud) -> Result<()> {
    std::fs::write(path, encode_point_cloud(c)).map_err(|e| Error::io(path, e))
}

pub fn read_point_cloud(path: &Path) -> Result<PointCloud> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    decode_point_cloud(&text)
}
