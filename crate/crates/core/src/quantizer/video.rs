use crate::error::{Error, Result};

/// Grayscale video, `T × H × W` row-major. `norm_std` is the standard
/// deviation that was divided out during preprocessing (1 for raw video).
#[derive(Clone, Debug, PartialEq)]
pub struct Video {
    pub t: usize,
    pub h: usize,
    pub w: usize,
    pub pixels: Vec<f32>,
    pub norm_std: f64,
}

impl Video {
    pub fn new(t: usize, h: usize, w: usize, pixels: Vec<f32>) -> Result<Self> {
        Self::with_norm(t, h, w, pixels, 1.0)
    }

    pub fn with_norm(t: usize, h: usize, w: usize, pixels: Vec<f32>, norm_std: f64) -> Result<Self> {
        if t == 0 || h == 0 || w == 0 {
            return Err(Error::dim(format!("empty video {t}x{h}x{w}")));
        }
        if pixels.len() != t * h * w {
            return Err(Error::dim(format!(
                "{} pixels for a {t}x{h}x{w} video",
                pixels.len()
            )));
        }
        if let Some(i) = pixels.iter().position(|p| !p.is_finite()) {
            return Err(Error::Numeric(format!("non-finite pixel at flat index {i}")));
        }
        if !(norm_std.is_finite() && norm_std > 0.0) {
            return Err(Error::Numeric(format!("invalid norm_std {norm_std}")));
        }
        Ok(Video {
            t,
            h,
            w,
            pixels,
            norm_std,
        })
    }

    pub fn frame_len(&self) -> usize {
        self.h * self.w
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.pixels[t * self.frame_len()..(t + 1) * self.frame_len()]
    }

    /// Frames `[start, end)` as a new video with the same normalization.
    pub fn slice_frames(&self, start: usize, end: usize) -> Result<Video> {
        if start >= end || end > self.t {
            return Err(Error::dim(format!(
                "frame range {start}..{end} outside 0..{}",
                self.t
            )));
        }
        Video::with_norm(
            end - start,
            self.h,
            self.w,
            self.pixels[start * self.frame_len()..end * self.frame_len()].to_vec(),
            self.norm_std,
        )
    }

    /// Pixel values mapped back to the 0–255 scale (unclamped).
    pub fn denormalized(&self) -> Vec<f32> {
        let s = self.norm_std;
        self.pixels.iter().map(|&p| (p as f64 * s) as f32).collect()
    }
}

/// Crops `frame` (`h × w`) to the region starting at `(dy, dx)`.
pub fn crop_frame(frame: &[f32], h: usize, w: usize, dy: usize, dx: usize) -> (Vec<f32>, usize, usize) {
    let (ch, cw) = (h.saturating_sub(dy), w.saturating_sub(dx));
    let mut out = Vec::with_capacity(ch * cw);
    for y in dy..h {
        out.extend_from_slice(&frame[y * w + dx..(y + 1) * w]);
    }
    (out, ch, cw)
}

/// Divides every pixel by the standard deviation of the whole video. No mean
/// is subtracted.
pub fn preprocess(raw: &Video) -> Result<Video> {
    let n = raw.pixels.len() as f64;
    let mean = raw.pixels.iter().map(|&p| p as f64).sum::<f64>() / n;
    let var = raw
        .pixels
        .iter()
        .map(|&p| {
            let d = p as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    let std = var.sqrt();
    if !(std > 0.0) {
        return Err(Error::Degenerate(
            "video has zero standard deviation (constant pixels)".into(),
        ));
    }
    let pixels = raw
        .pixels
        .iter()
        .map(|&p| (p as f64 / std) as f32)
        .collect();
    Video::with_norm(raw.t, raw.h, raw.w, pixels, std * raw.norm_std)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pop_std(xs: &[f32]) -> f64 {
        let n = xs.len() as f64;
        let m = xs.iter().map(|&x| x as f64).sum::<f64>() / n;
        (xs.iter().map(|&x| (x as f64 - m).powi(2)).sum::<f64>() / n).sqrt()
    }

    #[test]
    fn output_has_unit_std() {
        // values ±50 around 100 → std exactly 50
        let px: Vec<f32> = (0..64).map(|i| if i % 2 == 0 { 50.0 } else { 150.0 }).collect();
        let v = Video::new(1, 8, 8, px).unwrap();
        let p = preprocess(&v).unwrap();
        assert!((p.norm_std - 50.0).abs() < 1e-9);
        assert!((pop_std(&p.pixels) - 1.0).abs() < 1e-6);
    }

    #[test]
    fn constant_video_is_degenerate() {
        let v = Video::new(2, 4, 4, vec![17.0; 32]).unwrap();
        assert!(matches!(preprocess(&v), Err(Error::Degenerate(_))));
    }

    #[test]
    fn matches_direct_division() {
        let px = vec![0.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0];
        let v = Video::new(2, 2, 2, px.clone()).unwrap();
        let std = pop_std(&px);
        let p = preprocess(&v).unwrap();
        for (a, b) in p.pixels.iter().zip(&px) {
            assert_eq!(*a, (*b as f64 / std) as f32);
        }
    }

    #[test]
    fn crop_offsets() {
        let f: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let (c, h, w) = crop_frame(&f, 3, 4, 1, 2);
        assert_eq!((h, w), (2, 2));
        assert_eq!(c, vec![6.0, 7.0, 10.0, 11.0]);
    }
}
