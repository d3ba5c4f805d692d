//! Labeled raster datasets and their binary file format.
//!
//! Layout, little-endian: magic `GRDS1`, width `u32`, height `u32`, record
//! count `u64`, then per record the RGB raster bytes, `x_g` (2 × f64), `v_g`
//! (f64), the vehicle pose (position xyz, attitude quaternion wxyz; 7 × f64)
//! and the scene id (`u64`).

use std::io::{Read, Write};

use crate::camera::ImagePoint;
use crate::error::{invalid, Error, Result};
use crate::expert::Label;
use crate::geometry::QuadState;
use crate::render::Raster;

pub const DATASET_MAGIC: &[u8; 5] = b"GRDS1";

const HEADER_LEN: usize = 5 + 4 + 4 + 8;
const TAIL_LEN: usize = 3 * 8 + 7 * 8 + 8;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub raster: Raster,
    pub x_g: ImagePoint,
    pub v_g: f64,
    /// Position xyz then attitude quaternion wxyz.
    pub pose: [f64; 7],
    pub scene_id: u64,
}

impl Sample {
    pub fn new(raster: Raster, label: &Label, state: &QuadState, scene_id: u64) -> Self {
        let q = state.attitude.quaternion();
        let p = state.position;
        Self {
            raster,
            x_g: label.x_g,
            v_g: label.v_g,
            pose: [p.x, p.y, p.z, q.w, q.i, q.j, q.k],
            scene_id,
        }
    }

    pub fn label(&self) -> Label {
        Label {
            x_g: self.x_g,
            v_g: self.v_g,
            valid: true,
        }
    }

    fn labels_in_range(&self) -> bool {
        self.x_g.iter().all(|c| (-1.0..=1.0).contains(c)) && (0.0..=1.0).contains(&self.v_g)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub width: u32,
    pub height: u32,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: Sample) -> Result<()> {
        if sample.raster.width != self.width || sample.raster.height != self.height {
            return Err(invalid("sample raster does not match dataset dimensions"));
        }
        if !sample.labels_in_range() {
            return Err(invalid("sample label out of range"));
        }
        self.samples.push(sample);
        Ok(())
    }

    /// `(raster, label)` pairs for training and evaluation.
    pub fn pairs(&self) -> Vec<(&Raster, Label)> {
        self.samples.iter().map(|s| (&s.raster, s.label())).collect()
    }

    fn record_len(&self) -> usize {
        (self.width * self.height * Raster::CHANNELS) as usize + TAIL_LEN
    }

    pub fn write(&self, mut w: impl Write) -> Result<()> {
        w.write_all(DATASET_MAGIC)?;
        w.write_all(&self.width.to_le_bytes())?;
        w.write_all(&self.height.to_le_bytes())?;
        w.write_all(&(self.samples.len() as u64).to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.record_len());
        for s in &self.samples {
            buf.clear();
            buf.extend_from_slice(&s.raster.pixels);
            for v in [s.x_g.x, s.x_g.y, s.v_g].iter().chain(&s.pose) {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            buf.extend_from_slice(&s.scene_id.to_le_bytes());
            w.write_all(&buf)?;
        }
        Ok(())
    }

    /// Reads a whole dataset; the byte length must match the record count.
    pub fn read(mut r: impl Read) -> Result<Self> {
        let bad = |m: String| Error::Format(format!("dataset: {m}"));
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < HEADER_LEN || &bytes[..5] != DATASET_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes"));
        let (width, height) = (u32_at(5), u32_at(9));
        let count = u64::from_le_bytes(bytes[13..21].try_into().expect("8 bytes"));
        let mut ds = Dataset::new(width, height);
        let rec = ds.record_len();
        let body = &bytes[HEADER_LEN..];
        if (body.len() as u128) != count as u128 * rec as u128 {
            return Err(bad(format!(
                "{count} records need {} bytes, found {}",
                count as u128 * rec as u128,
                body.len()
            )));
        }
        let px = rec - TAIL_LEN;
        for chunk in body.chunks_exact(rec) {
            let f = |i: usize| f64::from_le_bytes(chunk[px + 8 * i..px + 8 * i + 8].try_into().expect("8 bytes"));
            let sample = Sample {
                raster: Raster::from_pixels(width, height, chunk[..px].to_vec())?,
                x_g: ImagePoint::new(f(0), f(1)),
                v_g: f(2),
                pose: std::array::from_fn(|i| f(3 + i)),
                scene_id: u64::from_le_bytes(chunk[rec - 8..].try_into().expect("8 bytes")),
            };
            if !sample.labels_in_range() || sample.pose.iter().any(|v| !v.is_finite()) {
                return Err(bad("record label out of range or non-finite pose".into()));
            }
            ds.samples.push(sample);
        }
        Ok(ds)
    }
}
