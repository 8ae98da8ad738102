//! 16-bit PNG depth maps and key-value intrinsics files.

use std::collections::HashMap;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::verification::{CameraIntrinsics, DepthImage};

fn image_err(path: &Path, msg: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        msg: msg.to_string(),
    }
}

/// Raw 16-bit counts of a single-channel PNG, row-major.
pub fn read_depth_raw(path: impl AsRef<Path>) -> Result<(usize, usize, Vec<u16>)> {
    let path = path.as_ref();
    let img = image::open(path).map_err(|e| image_err(path, e))?;
    match img {
        DynamicImage::ImageLuma16(buf) => {
            let (w, h) = buf.dimensions();
            Ok((w as usize, h as usize, buf.into_raw()))
        }
        other => Err(image_err(
            path,
            format!("expected a 16-bit single-channel image, found {:?}", other.color()),
        )),
    }
}

pub fn write_depth_raw(path: impl AsRef<Path>, width: usize, height: usize, raw: Vec<u16>) -> Result<()> {
    let path = path.as_ref();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> = ImageBuffer::from_raw(width as u32, height as u32, raw)
        .ok_or_else(|| image_err(path, "pixel count does not match dimensions"))?;
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| image_err(path, e))
}

/// Depth in mm is `raw × depth_scale`; zero stays missing.
pub fn load_depth_png(path: impl AsRef<Path>, depth_scale: f64) -> Result<DepthImage> {
    if !(depth_scale > 0.0) {
        return Err(Error::InvalidParam("depth_scale must be positive".into()));
    }
    let (w, h, raw) = read_depth_raw(path)?;
    DepthImage::from_data(w, h, raw.into_iter().map(|r| r as f64 * depth_scale).collect())
}

/// Quantizes depth to `round(mm / depth_scale)` counts. Values beyond the
/// 16-bit range are an error.
pub fn save_depth_png(path: impl AsRef<Path>, depth: &DepthImage, depth_scale: f64) -> Result<()> {
    let path = path.as_ref();
    if !(depth_scale > 0.0) {
        return Err(Error::InvalidParam("depth_scale must be positive".into()));
    }
    let raw = depth
        .data
        .iter()
        .map(|d| {
            let r = (d / depth_scale).round();
            if r > u16::MAX as f64 {
                Err(image_err(path, format!("depth {d} mm overflows 16 bits at scale {depth_scale}")))
            } else {
                Ok(r as u16)
            }
        })
        .collect::<Result<Vec<u16>>>()?;
    write_depth_raw(path, depth.width, depth.height, raw)
}

/// Parses `key: value` or `key = value` lines; `#` starts a comment.
/// Requires fx, fy, cx, cy, width and height.
pub fn parse_intrinsics(text: &str) -> Result<CameraIntrinsics> {
    let mut kv = HashMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once([':', '=']) else {
            return Err(Error::Intrinsics(format!("line {}: expected 'key: value'", n + 1)));
        };
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| Error::Intrinsics(format!("line {}: '{}' is not a number", n + 1, v.trim())))?;
        kv.insert(k.trim().to_ascii_lowercase(), v);
    }
    let get = |k: &str| {
        kv.get(k)
            .copied()
            .ok_or_else(|| Error::Intrinsics(format!("missing key '{k}'")))
    };
    let dim = |k: &str| -> Result<usize> {
        let v = get(k)?;
        if v >= 1.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::Intrinsics(format!("'{k}' must be a positive integer")))
        }
    };
    let cam = CameraIntrinsics {
        fx: get("fx")?,
        fy: get("fy")?,
        cx: get("cx")?,
        cy: get("cy")?,
        width: dim("width")?,
        height: dim("height")?,
    };
    cam.validate()?;
    Ok(cam)
}

pub fn format_intrinsics(cam: &CameraIntrinsics) -> String {
    format!(
        "fx: {}\nfy: {}\ncx: {}\ncy: {}\nwidth: {}\nheight: {}\n",
        cam.fx, cam.fy, cam.cx, cam.cy, cam.width, cam.height
    )
}

pub fn load_intrinsics(path: impl AsRef<Path>) -> Result<CameraIntrinsics> {
    parse_intrinsics(&std::fs::read_to_string(path)?)
}

pub fn save_intrinsics(path: impl AsRef<Path>, cam: &CameraIntrinsics) -> Result<()> {
    std::fs::write(path, format_intrinsics(cam))?;
    Ok(())
}

/// Depth image plus matching intrinsics.
pub fn load_depth(
    path: impl AsRef<Path>,
    depth_scale: f64,
    intrinsics_path: impl AsRef<Path>,
) -> Result<(DepthImage, CameraIntrinsics)> {
    let cam = load_intrinsics(intrinsics_path)?;
    let depth = load_depth_png(&path, depth_scale)?;
    if !depth.matches(&cam) {
        return Err(image_err(
            path.as_ref(),
            format!(
                "image is {}×{} but intrinsics say {}×{}",
                depth.width, depth.height, cam.width, cam.height
            ),
        ));
    }
    Ok((depth, cam))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scaling_and_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        write_depth_raw(&p, 3, 2, vec![10000, 0, 1, 65535, 0, 20]).unwrap();
        let d = load_depth_png(&p, 0.1).unwrap();
        assert_eq!(d.get(0, 0), 1000.0);
        assert_eq!(d.get(1, 0), 0.0);
        assert_eq!(d.measured_count(), 4);
        write_depth_raw(&p, 2, 2, vec![0; 4]).unwrap();
        assert_eq!(load_depth_png(&p, 0.1).unwrap().measured_count(), 0);
    }

    #[test]
    fn raw_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let raw: Vec<u16> = (0..64 * 48).map(|i| (i * 7919 % 65536) as u16).collect();
        write_depth_raw(&p, 64, 48, raw.clone()).unwrap();
        assert_eq!(read_depth_raw(&p).unwrap(), (64, 48, raw.clone()));
        let d = load_depth_png(&p, 0.1).unwrap();
        save_depth_png(&p, &d, 0.1).unwrap();
        assert_eq!(read_depth_raw(&p).unwrap().2, raw);
    }

    #[test]
    fn eight_bit_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d8.png");
        image::GrayImage::new(4, 4).save(&p).unwrap();
        assert!(matches!(load_depth_png(&p, 0.1), Err(Error::Image { .. })));
    }

    #[test]
    fn intrinsics_parsing() {
        let cam = parse_intrinsics("# kinect\nfx: 572.4\nfy = 573.6\ncx: 325.3\ncy: 242\nwidth: 640\nheight: 480\n").unwrap();
        assert_eq!(cam.fy, 573.6);
        assert_eq!(cam.height, 480);
        assert_eq!(parse_intrinsics(&format_intrinsics(&cam)).unwrap(), cam);
        let err = parse_intrinsics("fx: 1\nfy: 1\ncx: 1\ncy: 1\nwidth: 4\n").unwrap_err();
        assert!(err.to_string().contains("height"));
        assert!(parse_intrinsics("fx 1").is_err());
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.png");
        let k = dir.path().join("k.txt");
        write_depth_raw(&p, 4, 4, vec![1; 16]).unwrap();
        std::fs::write(&k, "fx: 1\nfy: 1\ncx: 1\ncy: 1\nwidth: 4\nheight: 3\n").unwrap();
        assert!(load_depth(&p, 0.1, &k).is_err());
        std::fs::write(&k, "fx: 1\nfy: 1\ncx: 1\ncy: 1\nwidth: 4\nheight: 4\n").unwrap();
        assert_eq!(load_depth(&p, 0.1, &k).unwrap().0.get(3, 3), 0.1);
    }
}
