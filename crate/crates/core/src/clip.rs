//! Video volumes and their value-range conventions.
//!
//! Every stage works on a `T×C×H×W` volume of `f64` intensities stored
//! frame-major, then channel, row, column. Nominal range is `[0, 1]`; values
//! outside it are allowed until [`VideoClip::clamp_unit`] is called.

use crate::error::{Error, Result};

pub const MIN_SIDE: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Shape {
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Shape {
    pub fn new(frames: usize, channels: usize, height: usize, width: usize) -> Self {
        Self {
            frames,
            channels,
            height,
            width,
        }
    }

    pub fn len(&self) -> usize {
        self.frames * self.channels * self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn frame_len(&self) -> usize {
        self.channels * self.plane_len()
    }

    pub fn index(&self, t: usize, c: usize, y: usize, x: usize) -> usize {
        ((t * self.channels + c) * self.height + y) * self.width + x
    }

    /// Offset of plane `(t, c)`.
    pub fn plane_offset(&self, t: usize, c: usize) -> usize {
        (t * self.channels + c) * self.plane_len()
    }

    /// Checks the constraints every clip must satisfy.
    pub fn validate_clip(&self) -> Result<()> {
        if self.frames < 1 {
            return Err(Error::shape("clip needs at least one frame"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::shape(format!(
                "clip must have 1 or 3 channels, got {}",
                self.channels
            )));
        }
        if self.height < MIN_SIDE || self.width < MIN_SIDE {
            return Err(Error::shape(format!(
                "clip frames must be at least {MIN_SIDE}x{MIN_SIDE}, got {}x{}",
                self.height, self.width
            )));
        }
        Ok(())
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.frames, self.channels, self.height, self.width
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoClip {
    shape: Shape,
    data: Vec<f64>,
    frame_rate: Option<f64>,
    clamped: bool,
}

impl VideoClip {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Self> {
        shape.validate_clip()?;
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "buffer of {} values does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            frame_rate: None,
            clamped: false,
        })
    }

    pub fn filled(shape: Shape, value: f64) -> Result<Self> {
        Self::new(shape, vec![value; shape.len()])
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(shape.len());
        for t in 0..shape.frames {
            for c in 0..shape.channels {
                for y in 0..shape.height {
                    for x in 0..shape.width {
                        data.push(f(t, c, y, x));
                    }
                }
            }
        }
        Self::new(shape, data)
    }

    pub fn with_frame_rate(mut self, fps: Option<f64>) -> Self {
        self.frame_rate = fps;
        self
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.clamped = false;
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn frame_rate(&self) -> Option<f64> {
        self.frame_rate
    }

    pub fn is_clamped(&self) -> bool {
        self.clamped
    }

    pub fn get(&self, t: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.index(t, c, y, x)]
    }

    pub fn plane(&self, t: usize, c: usize) -> &[f64] {
        let off = self.shape.plane_offset(t, c);
        &self.data[off..off + self.shape.plane_len()]
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        let n = self.shape.frame_len();
        &self.data[t * n..(t + 1) * n]
    }

    /// Maps every element into `[0, 1]` and marks the clip clamped.
    pub fn clamp_unit(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self.clamped = true;
        self
    }

    /// Elementwise `self + other`.
    pub fn add_map(&self, other: &[f64]) -> Result<Self> {
        if other.len() != self.data.len() {
            return Err(Error::shape(format!(
                "cannot add {} values to clip of shape {}",
                other.len(),
                self.shape
            )));
        }
        let data = self.data.iter().zip(other).map(|(a, b)| a + b).collect();
        Ok(Self {
            shape: self.shape,
            data,
            frame_rate: self.frame_rate,
            clamped: false,
        })
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
            frame_rate: self.frame_rate,
            clamped: false,
        }
    }

    /// Sub-volume of `frames` frames starting at `t0` and an `h×w` window at `(y0, x0)`.
    pub fn crop(&self, t0: usize, frames: usize, y0: usize, x0: usize, h: usize, w: usize) -> Result<Self> {
        let s = self.shape;
        if t0 + frames > s.frames || y0 + h > s.height || x0 + w > s.width {
            return Err(Error::shape(format!(
                "crop t{t0}+{frames} y{y0}+{h} x{x0}+{w} exceeds clip {s}"
            )));
        }
        let out = Shape::new(frames, s.channels, h, w);
        let mut data = Vec::with_capacity(out.len());
        for t in t0..t0 + frames {
            for c in 0..s.channels {
                for y in y0..y0 + h {
                    let row = s.index(t, c, y, x0);
                    data.extend_from_slice(&self.data[row..row + w]);
                }
            }
        }
        Ok(Self::new(out, data)?.with_frame_rate(self.frame_rate))
    }

    /// Same clip with `channels` channels: gray is replicated to RGB, RGB is averaged to gray.
    pub fn with_channels(&self, channels: usize) -> Result<Self> {
        let s = self.shape;
        if channels == s.channels {
            return Ok(self.clone());
        }
        let out = Shape::new(s.frames, channels, s.height, s.width);
        let clip = match (s.channels, channels) {
            (1, 3) => Self::from_fn(out, |t, _, y, x| self.get(t, 0, y, x))?,
            (3, 1) => Self::from_fn(out, |t, _, y, x| {
                (self.get(t, 0, y, x) + self.get(t, 1, y, x) + self.get(t, 2, y, x)) / 3.0
            })?,
            _ => {
                return Err(Error::shape(format!(
                    "cannot convert {} channels to {channels}",
                    s.channels
                )))
            }
        };
        Ok(clip.with_frame_rate(self.frame_rate))
    }

    /// Concatenates clips of matching frame shape along time.
    pub fn concat_frames(clips: &[VideoClip]) -> Result<Self> {
        let first = clips.first().ok_or_else(|| Error::shape("no clips to concatenate"))?;
        let s = first.shape;
        let mut data = Vec::new();
        let mut frames = 0;
        for clip in clips {
            let o = clip.shape;
            if (o.channels, o.height, o.width) != (s.channels, s.height, s.width) {
                return Err(Error::shape(format!("frame shape {o} does not match {s}")));
            }
            frames += o.frames;
            data.extend_from_slice(&clip.data);
        }
        Self::new(Shape::new(frames, s.channels, s.height, s.width), data)
    }

    /// Quantizes to 8 bits with `round(v·255)` after clamping.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| encode_u8(v)).collect()
    }

    /// Inverse of [`VideoClip::to_u8`]: `value / 255`.
    pub fn from_u8(shape: Shape, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| decode_u8(b)).collect();
        let mut clip = Self::new(shape, data)?;
        clip.clamped = true;
        Ok(clip)
    }
}

pub fn encode_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn decode_u8(b: u8) -> f64 {
    f64::from(b) / 255.0
}
