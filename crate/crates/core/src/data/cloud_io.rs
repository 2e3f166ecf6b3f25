//! `XPC1` binary clouds and the whitespace text format.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! "XPC1" version N Dim C label_mode      u32 each after the magic
//! coords   N·Dim f32, row-major
//! features N·C   f32, row-major
//! labels   label_mode 0: nothing, 1: one u32, 2: N u32
//! ```
//!
//! The text format starts with a header line `N Dim C label_mode`, with the
//! cloud label as an optional fifth token when `label_mode` is 1. Each of the
//! next N lines holds Dim coordinates, C features and, for `label_mode` 2,
//! the point label.

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"XPC1";
pub const VERSION: u32 = 1;

/// How labels are stored alongside a cloud.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelMode {
    None = 0,
    PerCloud = 1,
    PerPoint = 2,
}

impl LabelMode {
    pub fn of(cloud: &PointSet) -> Self {
        if cloud.point_labels.is_some() {
            LabelMode::PerPoint
        } else if cloud.cloud_label.is_some() {
            LabelMode::PerCloud
        } else {
            LabelMode::None
        }
    }

    fn from_u32(v: u32) -> Option<Self> {
        match v {
            0 => Some(LabelMode::None),
            1 => Some(LabelMode::PerCloud),
            2 => Some(LabelMode::PerPoint),
            _ => None,
        }
    }
}

/// Serializes a cloud. Per-point labels take precedence over the cloud label.
pub fn encode(cloud: &PointSet) -> Vec<u8> {
    let mode = LabelMode::of(cloud);
    let mut out = Vec::with_capacity(24 + cloud.coords().len() * 4);
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        cloud.len() as u32,
        cloud.dim() as u32,
        cloud.channels() as u32,
        mode as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &v in cloud.coords() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    if let Some(f) = cloud.features() {
        for &v in f.data() {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    match mode {
        LabelMode::None => {}
        LabelMode::PerCloud => out.extend_from_slice(&(cloud.cloud_label.unwrap() as u32).to_le_bytes()),
        LabelMode::PerPoint => {
            for &l in cloud.point_labels.as_ref().unwrap() {
                out.extend_from_slice(&(l as u32).to_le_bytes());
            }
        }
    }
    out
}

/// Parses either format; the binary one is recognised by its magic.
pub fn decode(bytes: &[u8]) -> Result<PointSet> {
    if bytes.starts_with(MAGIC) {
        decode_binary(bytes)
    } else if bytes.first().is_some_and(u8::is_ascii_digit) {
        decode_text(bytes)
    } else {
        Err(Error::Format {
            offset: 0,
            message: "bad magic, expected XPC1 or a text header".into(),
        })
    }
}

pub fn write_cloud(path: &Path, cloud: &PointSet) -> Result<()> {
    std::fs::write(path, encode(cloud))?;
    Ok(())
}

pub fn read_cloud(path: &Path) -> Result<PointSet> {
    decode(&std::fs::read(path)?)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn word(&mut self, what: &str) -> Result<[u8; 4]> {
        let Some(chunk) = self.bytes.get(self.pos..self.pos + 4) else {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("truncated while reading {what}"),
            });
        };
        self.pos += 4;
        Ok(chunk.try_into().unwrap())
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        self.word(what).map(u32::from_le_bytes)
    }

    fn f32s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let need = n.checked_mul(4).filter(|b| self.pos + b <= self.bytes.len());
        if need.is_none() {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("truncated while reading {what}: {n} values expected"),
            });
        }
        (0..n).map(|_| self.word(what).map(|w| f32::from_le_bytes(w) as f64)).collect()
    }
}

fn decode_binary(bytes: &[u8]) -> Result<PointSet> {
    let mut c = Cursor { bytes, pos: 4 };
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported version {version}"),
        });
    }
    let n = c.u32("point count")? as usize;
    let dim = c.u32("dimension")? as usize;
    let channels = c.u32("channel count")? as usize;
    let mode_at = c.pos;
    let mode = LabelMode::from_u32(c.u32("label mode")?).ok_or_else(|| Error::Format {
        offset: mode_at,
        message: "label mode must be 0, 1 or 2".into(),
    })?;
    if n == 0 || dim == 0 {
        return Err(Error::Format {
            offset: 8,
            message: "point count and dimension must be positive".into(),
        });
    }
    let coords = c.f32s(n * dim, "coordinates")?;
    let features = c.f32s(n * channels, "features")?;
    let mut cloud = PointSet::new(dim, coords)?;
    if channels > 0 {
        cloud = cloud.with_features(Tensor::new(&[n, channels], features)?)?;
    }
    match mode {
        LabelMode::None => {}
        LabelMode::PerCloud => cloud.cloud_label = Some(c.u32("cloud label")? as usize),
        LabelMode::PerPoint => {
            let labels = (0..n).map(|_| c.u32("point labels").map(|v| v as usize)).collect::<Result<Vec<_>>>()?;
            cloud = cloud.with_point_labels(labels)?;
        }
    }
    if c.pos != bytes.len() {
        return Err(Error::Format {
            offset: c.pos,
            message: "trailing bytes after cloud".into(),
        });
    }
    Ok(cloud)
}

fn decode_text(bytes: &[u8]) -> Result<PointSet> {
    let text = std::str::from_utf8(bytes).map_err(|e| Error::Format {
        offset: e.valid_up_to(),
        message: "text cloud is not UTF-8".into(),
    })?;
    let mut lines = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        if !line.trim().is_empty() {
            lines.push((offset, line.trim()));
        }
        offset += line.len();
    }
    let bad = |at: usize, message: String| Error::Format { offset: at, message };
    let parse_all = |at: usize, line: &str| -> Result<Vec<f64>> {
        line.split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| bad(at, format!("cannot parse number {t:?}"))))
            .collect()
    };
    let (h_at, header) = *lines.first().ok_or_else(|| bad(0, "empty text cloud".into()))?;
    let head: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse::<usize>().map_err(|_| bad(h_at, format!("bad header token {t:?}"))))
        .collect::<Result<_>>()?;
    if !(4..=5).contains(&head.len()) {
        return Err(bad(h_at, "header must be `N Dim C label_mode [cloud_label]`".into()));
    }
    let (n, dim, channels) = (head[0], head[1], head[2]);
    let mode = LabelMode::from_u32(head[3] as u32).ok_or_else(|| bad(h_at, "label mode must be 0, 1 or 2".into()))?;
    if n == 0 || dim == 0 {
        return Err(bad(h_at, "point count and dimension must be positive".into()));
    }
    if lines.len() != n + 1 {
        let at = lines.get(n + 1).map_or(bytes.len(), |l| l.0);
        return Err(bad(at, format!("expected {n} point lines, found {}", lines.len() - 1)));
    }
    let width = dim + channels + usize::from(mode == LabelMode::PerPoint);
    let mut coords = Vec::with_capacity(n * dim);
    let mut features = Vec::with_capacity(n * channels);
    let mut labels = Vec::new();
    for &(at, line) in &lines[1..] {
        let vals = parse_all(at, line)?;
        if vals.len() != width {
            return Err(bad(at, format!("expected {width} values, found {}", vals.len())));
        }
        coords.extend_from_slice(&vals[..dim]);
        features.extend_from_slice(&vals[dim..dim + channels]);
        if mode == LabelMode::PerPoint {
            let l = vals[width - 1];
            if l < 0.0 || l.fract() != 0.0 {
                return Err(bad(at, format!("point label {l} is not a non-negative integer")));
            }
            labels.push(l as usize);
        }
    }
    let mut cloud = PointSet::new(dim, coords)?;
    if channels > 0 {
        cloud = cloud.with_features(Tensor::new(&[n, channels], features)?)?;
    }
    match mode {
        LabelMode::None => {}
        LabelMode::PerCloud => {
            cloud.cloud_label = Some(*head.get(4).ok_or_else(|| bad(h_at, "label mode 1 needs a cloud label token".into()))?)
        }
        LabelMode::PerPoint => cloud = cloud.with_point_labels(labels)?,
    }
    Ok(cloud)
}
