//! Labeled boxes and detections, stored as one JSON record per line.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Box7DoF, CartesianVec3};

/// Flat on-disk record shared by labels and detections.
#[derive(Serialize, Deserialize)]
struct Record {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame: Option<u64>,
    class: String,
    cx: f64,
    cy: f64,
    cz: f64,
    l: f64,
    w: f64,
    h: f64,
    yaw: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

impl Record {
    fn new(frame: Option<u64>, class: &str, b: &Box7DoF, score: Option<f64>) -> Self {
        Self {
            frame,
            class: class.to_owned(),
            cx: b.center.x,
            cy: b.center.y,
            cz: b.center.z,
            l: b.length,
            w: b.width,
            h: b.height,
            yaw: b.yaw,
            score,
        }
    }

    fn bbox(&self) -> Result<Box7DoF> {
        Box7DoF::new(CartesianVec3::new(self.cx, self.cy, self.cz), self.l, self.w, self.h, self.yaw)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Label {
    pub class: String,
    pub bbox: Box7DoF,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub class: String,
    pub bbox: Box7DoF,
    pub score: f64,
}

impl From<&Detection> for Label {
    fn from(d: &Detection) -> Self {
        Self {
            class: d.class.clone(),
            bbox: d.bbox,
        }
    }
}

fn parse_lines(text: &str) -> impl Iterator<Item = (usize, Result<Record>)> + '_ {
    text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()).map(|(i, l)| {
        (
            i + 1,
            serde_json::from_str::<Record>(l).map_err(|e| Error::Format(format!("line {}: {e}", i + 1))),
        )
    })
}

pub fn labels_to_string(labels: &[Label]) -> String {
    let mut out = String::new();
    for l in labels {
        out.push_str(&serde_json::to_string(&Record::new(None, &l.class, &l.bbox, None)).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn labels_from_str(text: &str) -> Result<Vec<Label>> {
    parse_lines(text)
        .map(|(_, r)| {
            let r = r?;
            Ok(Label {
                bbox: r.bbox()?,
                class: r.class,
            })
        })
        .collect()
}

pub fn write_labels(path: impl AsRef<Path>, labels: &[Label]) -> Result<()> {
    std::fs::write(path, labels_to_string(labels))?;
    Ok(())
}

pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<Label>> {
    labels_from_str(&std::fs::read_to_string(path)?)
}

/// Writes `(frame, detection)` pairs.
pub fn write_detections<'a, W: Write>(mut out: W, dets: impl IntoIterator<Item = (u64, &'a Detection)>) -> Result<()> {
    for (frame, d) in dets {
        serde_json::to_writer(&mut out, &Record::new(Some(frame), &d.class, &d.bbox, Some(d.score)))
            .map_err(|e| Error::Format(e.to_string()))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads detections back as `(frame, detection)` pairs.
pub fn read_detections<R: BufRead>(input: R) -> Result<Vec<(u64, Detection)>> {
    let text = std::io::read_to_string(input)?;
    parse_lines(&text)
        .map(|(line, r)| {
            let r = r?;
            let frame = r.frame.ok_or_else(|| Error::Format(format!("line {line}: missing frame")))?;
            let score = r.score.ok_or_else(|| Error::Format(format!("line {line}: missing score")))?;
            Ok((
                frame,
                Detection {
                    bbox: r.bbox()?,
                    class: r.class,
                    score,
                },
            ))
        })
        .collect()
}
