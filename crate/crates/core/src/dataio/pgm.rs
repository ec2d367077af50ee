use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::quantizer::Video;

use super::fsutil::{read_file, write_atomic};

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:06}.pgm")
}

/// Encodes one binary P5 image.
pub fn encode_pgm(pixels: &[u8], h: usize, w: usize) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary P5 image with maxval 255. Returns `(pixels, h, w)`.
pub fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<(Vec<u8>, usize, usize)> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(path, "truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    if fields[0] != "P5" {
        return Err(Error::format(path, format!("expected P5 magic, found {:?}", fields[0])));
    }
    let num = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(path, format!("bad {what} {s:?}")))
    };
    let w = num(&fields[1], "width")?;
    let h = num(&fields[2], "height")?;
    let maxval = num(&fields[3], "maxval")?;
    if maxval > 255 {
        return Err(Error::format(path, format!("16-bit PGM (maxval {maxval}) is not supported")));
    }
    if maxval != 255 {
        return Err(Error::format(path, format!("maxval must be 255, found {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = w * h;
    if w == 0 || h == 0 {
        return Err(Error::format(path, "zero image dimension"));
    }
    if bytes.len() < pos + need {
        return Err(Error::format(
            path,
            format!("raster truncated: {} of {need} bytes", bytes.len().saturating_sub(pos)),
        ));
    }
    Ok((bytes[pos..pos + need].to_vec(), h, w))
}

/// Loads `frame_%06d.pgm` files from `dir` in index order. Numbering must be
/// contiguous from zero.
pub fn load_pgm_sequence(dir: &Path) -> Result<Video> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut indices = Vec::new();
    for e in entries {
        let e = e.map_err(|e| Error::io(dir, e))?;
        let name = e.file_name().to_string_lossy().into_owned();
        if let Some(num) = name.strip_prefix("frame_").and_then(|s| s.strip_suffix(".pgm")) {
            if num.len() == 6 && num.bytes().all(|b| b.is_ascii_digit()) {
                indices.push(num.parse::<usize>().unwrap());
            }
        }
    }
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(Error::format(dir, "no frame_NNNNNN.pgm files"));
    }
    for (expect, &got) in indices.iter().enumerate() {
        if got != expect {
            return Err(Error::format(
                dir,
                format!("gap in frame numbering: frame index {expect} is missing"),
            ));
        }
    }
    let mut pixels = Vec::new();
    let mut dims = None;
    for &i in &indices {
        let p: PathBuf = dir.join(frame_file_name(i));
        let (px, h, w) = decode_pgm(&p, &read_file(&p)?)?;
        match dims {
            None => dims = Some((h, w)),
            Some(d) if d != (h, w) => {
                return Err(Error::format(
                    &p,
                    format!("frame is {h}x{w} but earlier frames are {}x{}", d.0, d.1),
                ))
            }
            _ => {}
        }
        pixels.extend(px.into_iter().map(f32::from));
    }
    let (h, w) = dims.unwrap();
    Video::new(indices.len(), h, w, pixels)
}

/// Maps a pixel value (already on the 0–255 scale) to a byte, rounding and
/// clamping.
pub fn to_byte(v: f32) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Writes every frame of `video`, un-normalized by its `norm_std`, as
/// `dir/frame_%06d.pgm`.
pub fn save_pgm_sequence(video: &Video, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let px = video.denormalized();
    let fl = video.frame_len();
    let mut paths = Vec::with_capacity(video.t);
    for t in 0..video.t {
        let bytes: Vec<u8> = px[t * fl..(t + 1) * fl].iter().map(|&v| to_byte(v)).collect();
        let p = dir.join(frame_file_name(t));
        write_atomic(&p, &encode_pgm(&bytes, video.h, video.w))?;
        paths.push(p);
    }
    Ok(paths)
}

/// Writes a single 0–255 image.
pub fn save_pgm(path: &Path, pixels: &[f32], h: usize, w: usize) -> Result<()> {
    if pixels.len() != h * w {
        return Err(Error::dim(format!("{} pixels for a {h}x{w} image", pixels.len())));
    }
    let bytes: Vec<u8> = pixels.iter().map(|&v| to_byte(v)).collect();
    write_atomic(path, &encode_pgm(&bytes, h, w))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(t: usize, h: usize, w: usize) -> Video {
        Video::new(t, h, w, (0..t * h * w).map(|i| (i * 7 % 256) as f32).collect()).unwrap()
    }

    #[test]
    fn three_frames_round_trip() {
        let d = tempfile::tempdir().unwrap();
        let v = video(3, 5, 6);
        save_pgm_sequence(&v, d.path()).unwrap();
        let back = load_pgm_sequence(d.path()).unwrap();
        assert_eq!(back.t, 3);
        assert_eq!(back.pixels, v.pixels);
        let raw = fs::read(d.path().join("frame_000001.pgm")).unwrap();
        assert_eq!(&raw[..11], b"P5\n6 5\n255\n");
        assert_eq!(raw.len(), 11 + 30);
    }

    #[test]
    fn gap_names_missing_index() {
        let d = tempfile::tempdir().unwrap();
        let img = encode_pgm(&[0; 4], 2, 2);
        fs::write(d.path().join("frame_000000.pgm"), &img).unwrap();
        fs::write(d.path().join("frame_000002.pgm"), &img).unwrap();
        let e = load_pgm_sequence(d.path()).unwrap_err();
        assert!(matches!(e, Error::Format { .. }));
        assert!(e.to_string().contains("index 1"), "{e}");
    }

    #[test]
    fn inconsistent_dims_rejected() {
        let d = tempfile::tempdir().unwrap();
        fs::write(d.path().join("frame_000000.pgm"), encode_pgm(&[0; 4], 2, 2)).unwrap();
        fs::write(d.path().join("frame_000001.pgm"), encode_pgm(&[0; 6], 2, 3)).unwrap();
        assert!(matches!(load_pgm_sequence(d.path()), Err(Error::Format { .. })));
    }

    #[test]
    fn sixteen_bit_rejected() {
        let mut b = b"P5\n1 1\n65535\n".to_vec();
        b.extend_from_slice(&[0, 0]);
        let e = decode_pgm(Path::new("x.pgm"), &b).unwrap_err();
        assert!(e.to_string().contains("16-bit"));
    }

    #[test]
    fn constant_frame_and_clamping() {
        let d = tempfile::tempdir().unwrap();
        let v = Video::new(1, 2, 2, vec![128.0; 4]).unwrap();
        save_pgm_sequence(&v, d.path()).unwrap();
        let raw = fs::read(d.path().join("frame_000000.pgm")).unwrap();
        assert!(raw[raw.len() - 4..].iter().all(|&b| b == 128));
        // 3.0 · 100 = 300 after un-normalization
        let hot = Video::with_norm(1, 1, 2, vec![3.0, -1.0], 100.0).unwrap();
        save_pgm_sequence(&hot, d.path()).unwrap();
        let raw = fs::read(d.path().join("frame_000000.pgm")).unwrap();
        assert_eq!(&raw[raw.len() - 2..], &[255, 0]);
    }

    #[test]
    fn header_comments_are_skipped() {
        let mut b = b"P5\n# made by hand\n2 1\n255\n".to_vec();
        b.extend_from_slice(&[9, 10]);
        assert_eq!(decode_pgm(Path::new("x"), &b).unwrap(), (vec![9, 10], 1, 2));
    }
}
