//! Media file formats.
//!
//! - `.tns`: lossless float media, a single named tensor record (name
//!   "media/image" or "media/video", shape [F, H, W, C]).
//! - `.ppm`: binary PPM (P6), 8-bit export of a single frame.
//! - video directory: numbered `frame_000.ppm` files plus a one-line
//!   `meta.txt` containing `F H W`.

use std::fs;
use std::path::Path;

use crate::codec::{Media, MediaKind, CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::{read_named_tensor, write_named_tensor, RecordReader, Tensor};

fn media_record_name(kind: MediaKind) -> &'static str {
    match kind {
        MediaKind::Image => "media/image",
        MediaKind::Video => "media/video",
    }
}

pub fn save_tns(media: &Media, path: &Path) -> Result<()> {
    let t = Tensor::new(
        vec![media.frames, media.height, media.width, CHANNELS],
        media.data().to_vec(),
    )?;
    let mut buf = Vec::new();
    write_named_tensor(&mut buf, media_record_name(media.kind), &t);
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_tns(path: &Path) -> Result<Media> {
    let buf = fs::read(path)?;
    let mut r = RecordReader::new(&buf);
    let rec = read_named_tensor::<f32>(&mut r)?;
    let kind = match rec.name.as_str() {
        "media/image" => MediaKind::Image,
        "media/video" => MediaKind::Video,
        other => {
            return Err(Error::Contract(format!(
                "{} is not a media tensor (record name '{other}')",
                path.display()
            )))
        }
    };
    let s = rec.tensor.shape();
    if s.len() != 4 || s[3] != CHANNELS {
        return Err(Error::Dimension(format!(
            "media tensor in {} has shape {s:?}, expected [F, H, W, 3]",
            path.display()
        )));
    }
    Media::new(kind, s[0], s[1], s[2], rec.tensor.data().to_vec())
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// One frame as binary PPM (P6).
pub fn save_ppm_frame(media: &Media, frame: usize, path: &Path) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", media.width, media.height).into_bytes();
    for y in 0..media.height {
        for x in 0..media.width {
            let px = media.pixel(frame, y, x);
            out.push(quantize(px[0]));
            out.push(quantize(px[1]));
            out.push(quantize(px[2]));
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_ppm(path: &Path) -> Result<Media> {
    let buf = fs::read(path)?;
    let bad = |what: &str| Error::Contract(format!("{}: malformed PPM ({what})", path.display()));
    // Header: "P6" <ws> width <ws> height <ws> maxval <single ws> raster.
    let mut fields = Vec::new();
    let mut pos = 0usize;
    while fields.len() < 4 && pos < buf.len() {
        while pos < buf.len() && buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < buf.len() && buf[pos] == b'#' {
            while pos < buf.len() && buf[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < buf.len() && !buf[pos].is_ascii_whitespace() {
            pos += 1;
        }
        fields.push(String::from_utf8_lossy(&buf[start..pos]).to_string());
    }
    if fields.len() < 4 || fields[0] != "P6" {
        return Err(bad("header"));
    }
    let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
    let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
    let maxval: usize = fields[3].parse().map_err(|_| bad("maxval"))?;
    if maxval != 255 {
        return Err(bad("maxval must be 255"));
    }
    pos += 1; // single whitespace after maxval
    let need = w * h * CHANNELS;
    if buf.len() < pos + need {
        return Err(bad("truncated raster"));
    }
    let data: Vec<f32> = buf[pos..pos + need]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    Media::new(MediaKind::Image, 1, h, w, data)
}

/// Video export: numbered PPM frames plus `meta.txt` with "F H W".
pub fn save_video_dir(media: &Media, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for f in 0..media.frames {
        save_ppm_frame(media, f, &dir.join(format!("frame_{f:03}.ppm")))?;
    }
    fs::write(
        dir.join("meta.txt"),
        format!("{} {} {}\n", media.frames, media.height, media.width),
    )?;
    Ok(())
}

pub fn load_video_dir(dir: &Path) -> Result<Media> {
    let meta = fs::read_to_string(dir.join("meta.txt"))?;
    let nums: Vec<usize> = meta
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Contract(format!("{}: malformed meta.txt", dir.display())))?;
    if nums.len() != 3 {
        return Err(Error::Contract(format!(
            "{}: meta.txt must contain 'F H W'",
            dir.display()
        )));
    }
    let (frames, h, w) = (nums[0], nums[1], nums[2]);
    let mut data = Vec::with_capacity(frames * h * w * CHANNELS);
    for f in 0..frames {
        let img = load_ppm(&dir.join(format!("frame_{f:03}.ppm")))?;
        if img.height != h || img.width != w {
            return Err(Error::Dimension(format!(
                "frame {f} is {}x{}, meta says {}x{}",
                img.height, img.width, h, w
            )));
        }
        data.extend_from_slice(img.data());
    }
    Media::new(MediaKind::Video, frames, h, w, data)
}

/// Load media by path shape: directory = video dir, `.tns` = float media,
/// `.ppm` = 8-bit image.
pub fn load_media(path: &Path) -> Result<Media> {
    if path.is_dir() {
        return load_video_dir(path);
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("tns") => load_tns(path),
        Some("ppm") => load_ppm(path),
        _ => Err(Error::Contract(format!(
            "{}: unknown media format (expected .tns, .ppm, or a video directory)",
            path.display()
        ))),
    }
}

/// Save media: videos become `<path>/` directories with frames + meta plus a
/// lossless `<path>.tns`; images become `<path>.ppm` + `<path>.tns`.
pub fn save_media(media: &Media, path_stem: &Path) -> Result<()> {
    let tns = path_stem.with_extension("tns");
    if let Some(parent) = tns.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    save_tns(media, &tns)?;
    match media.kind {
        MediaKind::Image => save_ppm_frame(media, 0, &path_stem.with_extension("ppm"))?,
        MediaKind::Video => save_video_dir(media, path_stem)?,
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use rand::Rng;

    fn rand_media(kind: MediaKind, frames: usize) -> Media {
        let mut rng = derive_rng(77, "mediaio");
        let data: Vec<f32> = (0..frames * 8 * 6 * CHANNELS).map(|_| rng.gen()).collect();
        Media::new(kind, frames, 8, 6, data).unwrap()
    }

    #[test]
    fn tns_roundtrip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let m = rand_media(MediaKind::Video, 3);
        let p = dir.path().join("v.tns");
        save_tns(&m, &p).unwrap();
        let back = load_tns(&p).unwrap();
        assert!(m.bit_eq(&back));
    }

    #[test]
    fn ppm_roundtrip_is_8bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let m = rand_media(MediaKind::Image, 1);
        let p = dir.path().join("i.ppm");
        save_ppm_frame(&m, 0, &p).unwrap();
        let back = load_ppm(&p).unwrap();
        for (a, b) in m.data().iter().zip(back.data().iter()) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
    }

    #[test]
    fn video_dir_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let m = rand_media(MediaKind::Video, 4);
        let p = dir.path().join("vid");
        save_video_dir(&m, &p).unwrap();
        let back = load_video_dir(&p).unwrap();
        assert_eq!(back.frames, 4);
        assert_eq!((back.height, back.width), (8, 6));
    }
}
