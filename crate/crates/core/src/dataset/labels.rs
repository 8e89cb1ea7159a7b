//! Newline-delimited JSON labels and detections.
//!
//! Ground truth: `{"image_id","class","x_min","y_min","x_max","y_max"[,"distance_m"]}`.
//! Detections carry an extra `"confidence"`. Unknown keys are ignored.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, RecordError, RecordErrorKind, Result};
use crate::metrics::{Box2D, Detection, DetectionSet, GroundTruth, GroundTruthSet};

/// Flat label record; `image_id` is omitted when embedded in a manifest entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_id: Option<String>,
    pub class: String,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance_m: Option<f64>,
}

impl LabelRecord {
    pub fn from_ground_truth(g: &GroundTruth, with_image_id: bool) -> Self {
        Self {
            image_id: with_image_id.then(|| g.image_id.clone()),
            class: g.bbox.class.clone(),
            x_min: g.bbox.x_min,
            y_min: g.bbox.y_min,
            x_max: g.bbox.x_max,
            y_max: g.bbox.y_max,
            distance_m: g.distance_m,
        }
    }

    pub fn to_ground_truth(&self, image_id: &str) -> Result<GroundTruth> {
        let bbox = Box2D::new(
            self.x_min,
            self.y_min,
            self.x_max,
            self.y_max,
            self.class.clone(),
        )?;
        Ok(GroundTruth {
            image_id: image_id.to_string(),
            bbox,
            distance_m: self.distance_m,
        })
    }
}

#[derive(Serialize)]
struct DetectionRecord<'a> {
    image_id: &'a str,
    class: &'a str,
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    confidence: f64,
}

fn err(line: usize, kind: RecordErrorKind) -> Error {
    RecordError { line, kind }.into()
}

fn required<'a>(obj: &'a Map<String, Value>, key: &str, line: usize) -> Result<&'a Value> {
    obj.get(key)
        .ok_or_else(|| err(line, RecordErrorKind::MissingKey(key.to_string())))
}

fn number(obj: &Map<String, Value>, key: &str, line: usize) -> Result<f64> {
    required(obj, key, line)?.as_f64().ok_or_else(|| {
        err(
            line,
            RecordErrorKind::Malformed(format!("`{key}` is not a number")),
        )
    })
}

fn string(obj: &Map<String, Value>, key: &str, line: usize) -> Result<String> {
    match required(obj, key, line)?.as_str() {
        Some(s) if !s.is_empty() => Ok(s.to_string()),
        _ => Err(err(
            line,
            RecordErrorKind::Malformed(format!("`{key}` is not a non-empty string")),
        )),
    }
}

fn parse_box(obj: &Map<String, Value>, line: usize) -> Result<Box2D> {
    let class = string(obj, "class", line)?;
    let [x_min, y_min, x_max, y_max] =
        ["x_min", "y_min", "x_max", "y_max"].map(|k| number(obj, k, line));
    let b = Box2D {
        x_min: x_min?,
        y_min: y_min?,
        x_max: x_max?,
        y_max: y_max?,
        class,
    };
    b.validate().map_err(|_| {
        err(
            line,
            RecordErrorKind::Invariant(format!(
                "box needs x_min < x_max and y_min < y_max, got ({}, {}, {}, {})",
                b.x_min, b.y_min, b.x_max, b.y_max
            )),
        )
    })?;
    Ok(b)
}

fn objects(text: &str) -> impl Iterator<Item = Result<(usize, Map<String, Value>)>> + '_ {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            match serde_json::from_str::<Value>(l) {
                Ok(Value::Object(obj)) => Ok((line, obj)),
                Ok(_) => Err(err(
                    line,
                    RecordErrorKind::Malformed("expected a JSON object".into()),
                )),
                Err(e) => Err(err(line, RecordErrorKind::Malformed(e.to_string()))),
            }
        })
}

pub fn decode_labels(text: &str) -> Result<GroundTruthSet> {
    let mut boxes = Vec::new();
    for item in objects(text) {
        let (line, obj) = item?;
        let image_id = string(&obj, "image_id", line)?;
        let bbox = parse_box(&obj, line)?;
        let distance_m = match obj.get("distance_m") {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_f64().ok_or_else(|| {
                err(
                    line,
                    RecordErrorKind::Malformed("`distance_m` is not a number".into()),
                )
            })?),
        };
        if let Some(d) = distance_m {
            if !(d >= 0.0 && d.is_finite()) {
                return Err(err(
                    line,
                    RecordErrorKind::OutOfRange {
                        field: "distance_m".into(),
                        value: d,
                    },
                ));
            }
        }
        boxes.push(GroundTruth {
            image_id,
            bbox,
            distance_m,
        });
    }
    Ok(GroundTruthSet { boxes })
}

pub fn decode_detections(text: &str) -> Result<DetectionSet> {
    let mut detections = Vec::new();
    for item in objects(text) {
        let (line, obj) = item?;
        let image_id = string(&obj, "image_id", line)?;
        let bbox = parse_box(&obj, line)?;
        let confidence = number(&obj, "confidence", line)?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(err(
                line,
                RecordErrorKind::OutOfRange {
                    field: "confidence".into(),
                    value: confidence,
                },
            ));
        }
        detections.push(Detection {
            image_id,
            bbox,
            confidence,
        });
    }
    Ok(DetectionSet { detections })
}

pub fn encode_labels(gts: &GroundTruthSet) -> String {
    let mut out = String::new();
    for g in &gts.boxes {
        out.push_str(
            &serde_json::to_string(&LabelRecord::from_ground_truth(g, true)).expect("plain record"),
        );
        out.push('\n');
    }
    out
}

pub fn encode_detections(dets: &DetectionSet) -> String {
    let mut out = String::new();
    for d in &dets.detections {
        let rec = DetectionRecord {
            image_id: &d.image_id,
            class: &d.bbox.class,
            x_min: d.bbox.x_min,
            y_min: d.bbox.y_min,
            x_max: d.bbox.x_max,
            y_max: d.bbox.y_max,
            confidence: d.confidence,
        };
        out.push_str(&serde_json::to_string(&rec).expect("plain record"));
        out.push('\n');
    }
    out
}

pub fn write_labels(path: &Path, gts: &GroundTruthSet) -> Result<()> {
    std::fs::write(path, encode_labels(gts)).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<GroundTruthSet> {
    decode_labels(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

pub fn write_detections(path: &Path, dets: &DetectionSet) -> Result<()> {
    std::fs::write(path, encode_detections(dets)).map_err(|e| Error::io(path, e))
}

pub fn read_detections(path: &Path) -> Result<DetectionSet> {
    decode_detections(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_labels() -> GroundTruthSet {
        let g = |id: &str, x: f64, d: Option<f64>| GroundTruth {
            image_id: id.into(),
            bbox: Box2D::new(x, 1.25, x + 10.5, 20.0, "vehicle").unwrap(),
            distance_m: d,
        };
        GroundTruthSet {
            boxes: vec![g("a", 0.1, Some(12.345)), g("b", 3.0, None)],
        }
    }

    #[test]
    fn labels_round_trip() {
        let gts = sample_labels();
        assert_eq!(decode_labels(&encode_labels(&gts)).unwrap(), gts);
    }

    #[test]
    fn detections_round_trip_and_ignore_unknown_keys() {
        let dets = DetectionSet::oracle(&sample_labels());
        assert_eq!(decode_detections(&encode_detections(&dets)).unwrap(), dets);
        let text = r#"{"image_id":"a","class":"vehicle","x_min":0,"y_min":0,"x_max":1,"y_max":1,"confidence":0.5,"extra":[1]}"#;
        assert_eq!(decode_detections(text).unwrap().detections.len(), 1);
    }

    #[test]
    fn missing_key_names_key_and_line() {
        let text =
            "\n{\"image_id\":\"a\",\"class\":\"vehicle\",\"x_min\":0,\"y_min\":0,\"x_max\":1}\n";
        let e = decode_labels(text).unwrap_err();
        assert!(
            matches!(&e, Error::Record(RecordError { line: 2, kind: RecordErrorKind::MissingKey(k) }) if k == "y_max"),
            "{e}"
        );
    }

    #[test]
    fn confidence_out_of_range() {
        let text = r#"{"image_id":"a","class":"vehicle","x_min":0,"y_min":0,"x_max":1,"y_max":1,"confidence":1.5}"#;
        assert!(matches!(
            decode_detections(text),
            Err(Error::Record(RecordError {
                line: 1,
                kind: RecordErrorKind::OutOfRange { .. }
            }))
        ));
    }

    #[test]
    fn inverted_box_is_invariant_error() {
        let text = r#"{"image_id":"a","class":"vehicle","x_min":5,"y_min":0,"x_max":5,"y_max":1}"#;
        assert!(matches!(
            decode_labels(text),
            Err(Error::Record(RecordError {
                line: 1,
                kind: RecordErrorKind::Invariant(_)
            }))
        ));
    }

    #[test]
    fn empty_image_id_rejected() {
        let text = r#"{"image_id":"","class":"vehicle","x_min":0,"y_min":0,"x_max":1,"y_max":1}"#;
        assert!(decode_labels(text).is_err());
    }
}
