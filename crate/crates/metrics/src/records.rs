//! JSON-lines annotation format, one object per line:
//! `{"image": str, "class": int, "cx": f, "cy": f, "w": f, "h": f, "conf": f?}`
//! with `conf` present for detections and absent for ground truth.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use detectlab_loss::BBox;
use serde::{Deserialize, Serialize};

use crate::error::{MetricsError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnRecord {
    pub image: String,
    pub class: usize,
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conf: Option<f64>,
}

/// A scored box prediction on one image.
#[derive(Debug, Clone)]
pub struct Detection {
    pub image: String,
    pub class: usize,
    pub bbox: BBox,
    pub confidence: f64,
}

/// An annotated box on one image.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub image: String,
    pub class: usize,
    pub bbox: BBox,
}

impl AnnRecord {
    pub fn from_detection(d: &Detection) -> Self {
        AnnRecord {
            image: d.image.clone(),
            class: d.class,
            cx: d.bbox.cx,
            cy: d.bbox.cy,
            w: d.bbox.w,
            h: d.bbox.h,
            conf: Some(d.confidence),
        }
    }

    pub fn from_ground_truth(g: &GroundTruth) -> Self {
        AnnRecord {
            image: g.image.clone(),
            class: g.class,
            cx: g.bbox.cx,
            cy: g.bbox.cy,
            w: g.bbox.w,
            h: g.bbox.h,
            conf: None,
        }
    }

    pub fn into_detection(self) -> Result<Detection> {
        let conf = self
            .conf
            .ok_or_else(|| MetricsError::arg("conf", "detection record missing confidence"))?;
        if !(0.0..=1.0).contains(&conf) {
            return Err(MetricsError::arg(
                "conf",
                format!("confidence {conf} outside [0, 1]"),
            ));
        }
        Ok(Detection {
            bbox: BBox::new(self.cx, self.cy, self.w, self.h)?,
            image: self.image,
            class: self.class,
            confidence: conf,
        })
    }

    pub fn into_ground_truth(self) -> Result<GroundTruth> {
        if self.conf.is_some() {
            return Err(MetricsError::arg(
                "conf",
                "ground-truth record must not carry a confidence",
            ));
        }
        Ok(GroundTruth {
            bbox: BBox::new(self.cx, self.cy, self.w, self.h)?,
            image: self.image,
            class: self.class,
        })
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<AnnRecord>> {
    let f = File::open(path)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnRecord =
            serde_json::from_str(&line).map_err(|e| MetricsError::InvalidRecord {
                line: i + 1,
                why: e.to_string(),
            })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records(records: &[AnnRecord], path: impl AsRef<Path>) -> Result<()> {
    let f = File::create(path)?;
    let mut w = BufWriter::new(f);
    for rec in records {
        serde_json::to_writer(&mut w, rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_detections(path: impl AsRef<Path>) -> Result<Vec<Detection>> {
    read_records(path)?
        .into_iter()
        .map(AnnRecord::into_detection)
        .collect()
}

pub fn read_ground_truths(path: impl AsRef<Path>) -> Result<Vec<GroundTruth>> {
    read_records(path)?
        .into_iter()
        .map(AnnRecord::into_ground_truth)
        .collect()
}
