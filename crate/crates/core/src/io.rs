//! Frame-directory clips and offset-encoded noise maps on disk.
//!
//! A clip is a directory of PNG frames read in lexicographic order and written
//! as `frame_000000.png`, `frame_000001.png`, ... Pixel values are 8-bit and
//! map to `[0, 1]` by `value / 255`. Noise maps are written as 16-bit PNGs
//! holding `round((n + 0.5) · 65535)`.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageBuffer, Luma, Rgb};

use crate::clip::{decode_u8, encode_u8, Shape, VideoClip};
use crate::error::{Error, Result};

pub const OFFSET_SCALE: f64 = 65535.0;

pub fn frame_name(index: usize) -> String {
    format!("frame_{index:06}.png")
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::data(path, "not a file path"))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::data(dir, format!("cannot read clip directory: {e}")))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        return Err(Error::data(dir, "no PNG frames found"));
    }
    Ok(files)
}

/// Sorted sub-directories of `root`; each one is a clip.
pub fn list_clip_dirs(root: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(root).map_err(|e| Error::data(root, format!("cannot read directory: {e}")))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() {
            dirs.push(path);
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::data(root, "no clip directories found"));
    }
    Ok(dirs)
}

/// Directory name used as a clip identifier.
pub fn clip_id(dir: &Path) -> String {
    dir.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| dir.display().to_string())
}

fn decode_frame(path: &Path) -> Result<(usize, usize, usize, Vec<u8>)> {
    let img = image::open(path).map_err(|e| Error::data(path, format!("cannot decode PNG: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    Ok(if img.color().has_color() {
        (3, h, w, img.to_rgb8().into_raw())
    } else {
        (1, h, w, img.to_luma8().into_raw())
    })
}

/// Reads every PNG frame of `dir`. Frames must agree in size and colour mode.
pub fn read_clip(dir: &Path) -> Result<VideoClip> {
    let files = png_files(dir)?;
    let mut data = Vec::new();
    let mut dims = None;
    for path in &files {
        let (c, h, w, raw) = decode_frame(path)?;
        match dims {
            None => dims = Some((c, h, w)),
            Some(d) if d != (c, h, w) => {
                return Err(Error::data(
                    path,
                    format!("frame is {c}x{h}x{w}, earlier frames are {}x{}x{}", d.0, d.1, d.2),
                ))
            }
            _ => {}
        }
        let plane = h * w;
        for ch in 0..c {
            data.extend((0..plane).map(|i| decode_u8(raw[i * c + ch])));
        }
    }
    let (c, h, w) = dims.expect("at least one frame");
    VideoClip::new(Shape::new(files.len(), c, h, w), data).map_err(|e| Error::data(dir, e.to_string()))
}

fn interleave<T: Copy>(plane_major: &[T], channels: usize) -> Vec<T> {
    let plane = plane_major.len() / channels;
    let mut out = Vec::with_capacity(plane_major.len());
    for i in 0..plane {
        for c in 0..channels {
            out.push(plane_major[c * plane + i]);
        }
    }
    out
}

fn save_image(path: &Path, img: DynamicImage) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::data(path, format!("cannot write PNG: {e}")))
}

/// Writes `clip` as 8-bit frames (values clamped then rounded).
pub fn write_clip(clip: &VideoClip, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let s = clip.shape();
    for t in 0..s.frames {
        let bytes: Vec<u8> = clip.frame(t).iter().map(|&v| encode_u8(v)).collect();
        let raw = interleave(&bytes, s.channels);
        let (w, h) = (s.width as u32, s.height as u32);
        let img = if s.channels == 1 {
            DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(w, h, raw).expect("buffer size"))
        } else {
            DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(w, h, raw).expect("buffer size"))
        };
        save_image(&dir.join(frame_name(t)), img)?;
    }
    Ok(())
}

pub fn encode_offset(n: f64) -> u16 {
    ((n + 0.5) * OFFSET_SCALE).round().clamp(0.0, OFFSET_SCALE) as u16
}

pub fn decode_offset(v: u16) -> f64 {
    v as f64 / OFFSET_SCALE - 0.5
}

/// Writes a signed map in `[-0.5, 0.5]` as 16-bit offset frames.
pub fn write_offset_map(shape: Shape, values: &[f64], dir: &Path) -> Result<()> {
    if values.len() != shape.len() {
        return Err(Error::shape(format!("{} values for shape {shape}", values.len())));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let fl = shape.frame_len();
    for t in 0..shape.frames {
        let words: Vec<u16> = values[t * fl..(t + 1) * fl].iter().map(|&n| encode_offset(n)).collect();
        let raw = interleave(&words, shape.channels);
        let (w, h) = (shape.width as u32, shape.height as u32);
        let img = if shape.channels == 1 {
            DynamicImage::ImageLuma16(ImageBuffer::<Luma<u16>, _>::from_raw(w, h, raw).expect("buffer size"))
        } else {
            DynamicImage::ImageRgb16(ImageBuffer::<Rgb<u16>, _>::from_raw(w, h, raw).expect("buffer size"))
        };
        save_image(&dir.join(frame_name(t)), img)?;
    }
    Ok(())
}

/// Reads frames written by [`write_offset_map`].
pub fn read_offset_map(dir: &Path) -> Result<(Shape, Vec<f64>)> {
    let files = png_files(dir)?;
    let mut values = Vec::new();
    let mut dims = None;
    for path in &files {
        let img = image::open(path).map_err(|e| Error::data(path, format!("cannot decode PNG: {e}")))?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        let (c, raw) = if img.color().has_color() {
            (3, img.to_rgb16().into_raw())
        } else {
            (1, img.to_luma16().into_raw())
        };
        if dims.is_some_and(|d| d != (c, h, w)) {
            return Err(Error::data(path, "frame size differs from earlier frames"));
        }
        dims = Some((c, h, w));
        for ch in 0..c {
            values.extend((0..h * w).map(|i| decode_offset(raw[i * c + ch])));
        }
    }
    let (c, h, w) = dims.expect("at least one frame");
    Ok((Shape::new(files.len(), c, h, w), values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_round_trip_gray_and_rgb() {
        let dir = tempfile::tempdir().unwrap();
        for channels in [1, 3] {
            let clip = VideoClip::from_fn(Shape::new(3, channels, 8, 12), |t, c, y, x| {
                ((t * 31 + c * 7 + y * 12 + x) % 256) as f64 / 255.0
            })
            .unwrap();
            let d = dir.path().join(format!("c{channels}"));
            write_clip(&clip, &d).unwrap();
            assert!(d.join("frame_000002.png").exists());
            let back = read_clip(&d).unwrap();
            assert_eq!(back.shape(), clip.shape());
            assert_eq!(back.data(), clip.data());
        }
    }

    #[test]
    fn frames_are_read_in_lexicographic_order() {
        let dir = tempfile::tempdir().unwrap();
        let frame = |v: f64| VideoClip::filled(Shape::new(1, 1, 8, 8), v).unwrap();
        for (name, v) in [("b", 0.2), ("a", 0.6), ("c", 1.0)] {
            let tmp = dir.path().join(format!("tmp_{name}"));
            write_clip(&frame(v), &tmp).unwrap();
            fs::rename(tmp.join(frame_name(0)), dir.path().join(format!("{name}.png"))).unwrap();
        }
        let clip = read_clip(dir.path()).unwrap();
        let firsts: Vec<f64> = (0..3).map(|t| clip.get(t, 0, 0, 0)).collect();
        assert_eq!(firsts, vec![decode_u8(153), decode_u8(51), 1.0]);
    }

    #[test]
    fn missing_or_empty_directories_are_data_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(read_clip(&dir.path().join("nope")), Err(Error::Data { .. })));
        assert!(matches!(read_clip(dir.path()), Err(Error::Data { .. })));
        assert!(matches!(list_clip_dirs(dir.path()), Err(Error::Data { .. })));
    }

    #[test]
    fn offset_codec() {
        assert_eq!(encode_offset(0.0), 32768);
        assert_eq!(encode_offset(-0.5), 0);
        assert_eq!(encode_offset(0.7), 65535);
        for n in [-0.3, -0.01, 0.0, 0.123] {
            assert!((decode_offset(encode_offset(n)) - n).abs() <= 0.5 / OFFSET_SCALE + 1e-12);
        }
        let dir = tempfile::tempdir().unwrap();
        let shape = Shape::new(2, 3, 8, 8);
        let values: Vec<f64> = (0..shape.len()).map(|i| (i as f64 / shape.len() as f64) - 0.5).collect();
        write_offset_map(shape, &values, dir.path()).unwrap();
        let (s, back) = read_offset_map(dir.path()).unwrap();
        assert_eq!(s, shape);
        for (a, b) in values.iter().zip(&back) {
            assert!((a - b).abs() <= 0.5 / OFFSET_SCALE + 1e-12);
        }
    }

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.json");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(fs::read(&p).unwrap(), b"two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
