//! Text landmark tracks: a `# width,height,fps[,mean_face]` header, then one
//! `frame_index,x0,y0,...,x67,y67` line per frame in pixel coordinates.

use std::fmt::Write as _;
use std::path::Path;

use super::{LandmarkFrame, LandmarkSequence, FRAME_DIM};
use crate::error::{Error, Result};

const MEAN_FACE_FLAG: &str = "mean_face";

#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkFile {
    pub width: f64,
    pub height: f64,
    pub fps: f64,
    pub mean_face: bool,
    /// Pixel coordinates of the source frame.
    pub frames: Vec<LandmarkFrame>,
}

impl LandmarkFile {
    pub fn to_sequence(&self) -> Result<LandmarkSequence> {
        LandmarkSequence::new(self.frames.clone(), self.fps)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Format("empty landmark file".into()))?;
        let header = header
            .trim()
            .strip_prefix('#')
            .ok_or_else(|| Error::Format("missing `# width,height,fps` header".into()))?;
        let fields: Vec<&str> = header.split(',').map(str::trim).collect();
        let (dims, mean_face) = match fields.as_slice() {
            [w, h, f] => ([*w, *h, *f], false),
            [w, h, f, flag] if *flag == MEAN_FACE_FLAG => ([*w, *h, *f], true),
            _ => {
                return Err(Error::Format(format!(
                    "bad header `#{header}` (expected width,height,fps)"
                )))
            }
        };
        let mut nums = [0.0; 3];
        for (n, s) in nums.iter_mut().zip(dims) {
            *n = s
                .parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0 && v.is_finite())
                .ok_or_else(|| Error::Format(format!("bad header value `{s}`")))?;
        }

        let mut frames = Vec::new();
        for (lineno, line) in lines {
            if line.trim_start().starts_with('#') {
                continue;
            }
            let mut parts = line.split(',').map(str::trim);
            let index: usize = parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format(format!("line {}: bad frame index", lineno + 1)))?;
            if index != frames.len() {
                return Err(Error::Format(format!(
                    "line {}: frame index {index}, expected {}",
                    lineno + 1,
                    frames.len()
                )));
            }
            let values = parts
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Format(format!("line {}: {e}", lineno + 1)))?;
            if values.len() != FRAME_DIM {
                return Err(Error::Format(format!(
                    "line {}: {} coordinates, expected {FRAME_DIM}",
                    lineno + 1,
                    values.len()
                )));
            }
            frames.push(LandmarkFrame::from_flat(&values)?);
        }
        if frames.is_empty() {
            return Err(Error::Format("landmark file has no frames".into()));
        }
        Ok(LandmarkFile {
            width: nums[0],
            height: nums[1],
            fps: nums[2],
            mean_face,
            frames,
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("# {},{},{}", self.width, self.height, self.fps);
        if self.mean_face {
            out.push(',');
            out.push_str(MEAN_FACE_FLAG);
        }
        out.push('\n');
        for (i, f) in self.frames.iter().enumerate() {
            write!(out, "{i}").unwrap();
            for v in f.to_flat() {
                write!(out, ",{v}").unwrap();
            }
            out.push('\n');
        }
        out
    }
}

pub fn read_landmark_file(path: &Path) -> Result<LandmarkFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    LandmarkFile::parse(&text).map_err(|e| match e {
        Error::Format(msg) => Error::Format(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_landmark_file(path: &Path, file: &LandmarkFile) -> Result<()> {
    std::fs::write(path, file.to_text()).map_err(|e| Error::io(path, e))
}
