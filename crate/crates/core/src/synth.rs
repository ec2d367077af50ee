//! Deterministic synthetic videos with known dynamics. Pixels are integers in
//! 0–255; translating kinds wrap around the frame.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::DetRng;
use crate::quantizer::Video;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SynthKind {
    TranslateBar,
    TranslateTexture,
    BounceBlob,
    RotateGrating,
    Static,
    TwoSpeed,
}

impl SynthKind {
    pub const ALL: [SynthKind; 6] = [
        SynthKind::TranslateBar,
        SynthKind::TranslateTexture,
        SynthKind::BounceBlob,
        SynthKind::RotateGrating,
        SynthKind::Static,
        SynthKind::TwoSpeed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SynthKind::TranslateBar => "translate_bar",
            SynthKind::TranslateTexture => "translate_texture",
            SynthKind::BounceBlob => "bounce_blob",
            SynthKind::RotateGrating => "rotate_grating",
            SynthKind::Static => "static",
            SynthKind::TwoSpeed => "two_speed",
        }
    }

    fn translates(self) -> bool {
        matches!(self, SynthKind::TranslateBar | SynthKind::TranslateTexture | SynthKind::TwoSpeed)
    }
}

impl FromStr for SynthKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SynthKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown synthetic video kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub kind: SynthKind,
    pub h: usize,
    pub w: usize,
    pub t: usize,
    /// Pixels per frame. Positive moves right (or, for the grating, turns
    /// counter-clockwise by `velocity · π/64` per frame).
    pub velocity: i64,
    pub seed: u64,
    /// When set, translations must move by whole patches of this size and
    /// the frame width must be a multiple of it.
    pub patch_exact: Option<usize>,
}

impl SynthSpec {
    pub fn new(kind: SynthKind, h: usize, w: usize, t: usize, velocity: i64, seed: u64) -> Self {
        SynthSpec {
            kind,
            h,
            w,
            t,
            velocity,
            seed,
            patch_exact: None,
        }
    }

    pub fn patch_exact(mut self, patch: usize) -> Self {
        self.patch_exact = Some(patch);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.h < 16 || self.w < 16 {
            return Err(Error::contract(format!(
                "synthetic frames must be at least 16x16, got {}x{}",
                self.h, self.w
            )));
        }
        if self.t < 2 {
            return Err(Error::contract("synthetic videos need at least 2 frames"));
        }
        if let (Some(p), true) = (self.patch_exact, self.kind.translates()) {
            if p == 0 || self.velocity % p as i64 != 0 || self.w % p != 0 {
                return Err(Error::contract(format!(
                    "patch-exact translation needs velocity and width divisible by {p} (velocity {}, width {})",
                    self.velocity, self.w
                )));
            }
        }
        Ok(())
    }
}

/// Seeded uniform noise box-blurred with wrap-around, stretched to 20–235.
fn texture(h: usize, w: usize, radius: usize, rng: &mut DetRng) -> Vec<f64> {
    let noise: Vec<f64> = (0..h * w).map(|_| rng.gen::<f64>()).collect();
    let r = radius as isize;
    let blur = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for d in -r..=r {
                    let (yy, xx) = if horizontal {
                        (y, (x as isize + d).rem_euclid(w as isize) as usize)
                    } else {
                        ((y as isize + d).rem_euclid(h as isize) as usize, x)
                    };
                    s += src[yy * w + xx];
                }
                out[y * w + x] = s / (2 * r + 1) as f64;
            }
        }
        out
    };
    let t = blur(&blur(&noise, true), false);
    let (lo, hi) = t.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-12);
    t.iter().map(|&v| 20.0 + 215.0 * (v - lo) / span).collect()
}

fn shift_x(src: &[f64], h: usize, w: usize, dx: i64) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            let sx = (x as i64 - dx).rem_euclid(w as i64) as usize;
            out[y * w + x] = src[y * w + sx];
        }
    }
    out
}

fn bar(h: usize, w: usize, x0: i64, width: usize, fg: f64, bg: f64) -> Vec<f64> {
    let mut out = vec![bg; h * w];
    for y in 0..h {
        for k in 0..width as i64 {
            let x = (x0 + k).rem_euclid(w as i64) as usize;
            out[y * w + x] = fg;
        }
    }
    out
}

/// Generates the video described by `spec`.
pub fn synth_video(spec: &SynthSpec) -> Result<Video> {
    spec.validate()?;
    let (h, w, t) = (spec.h, spec.w, spec.t);
    let mut rng = DetRng::new(spec.seed).split(spec.kind.name());
    let mut pixels = Vec::with_capacity(t * h * w);
    match spec.kind {
        SynthKind::TranslateBar => {
            let x0 = rng.gen_range(0..w) as i64;
            let x0 = spec.patch_exact.map_or(x0, |p| x0 / p as i64 * p as i64);
            let width = spec.patch_exact.unwrap_or(8);
            for f in 0..t {
                pixels.extend(bar(h, w, x0 + spec.velocity * f as i64, width, 220.0, 30.0));
            }
        }
        SynthKind::TranslateTexture => {
            let base = texture(h, w, 3, &mut rng);
            for f in 0..t {
                pixels.extend(shift_x(&base, h, w, spec.velocity * f as i64));
            }
        }
        SynthKind::Static => {
            let base = texture(h, w, 3, &mut rng);
            for _ in 0..t {
                pixels.extend_from_slice(&base);
            }
        }
        SynthKind::BounceBlob => {
            let sigma = (h.min(w) as f64 / 8.0).max(2.0);
            let (mut cy, mut cx) = (rng.gen_range(sigma..h as f64 - sigma), rng.gen_range(sigma..w as f64 - sigma));
            let speed = spec.velocity as f64;
            let angle = rng.gen_range(0.0..2.0 * PI);
            let (mut vy, mut vx) = (speed * angle.sin(), speed * angle.cos());
            for _ in 0..t {
                for y in 0..h {
                    for x in 0..w {
                        let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                        pixels.push(30.0 + 200.0 * (-d2 / (2.0 * sigma * sigma)).exp());
                    }
                }
                cy += vy;
                cx += vx;
                let (ymax, xmax) = ((h - 1) as f64, (w - 1) as f64);
                if cy < 0.0 || cy > ymax {
                    vy = -vy;
                    cy = if cy < 0.0 { -cy } else { 2.0 * ymax - cy };
                }
                if cx < 0.0 || cx > xmax {
                    vx = -vx;
                    cx = if cx < 0.0 { -cx } else { 2.0 * xmax - cx };
                }
            }
        }
        SynthKind::RotateGrating => {
            let period = rng.gen_range(8.0..16.0);
            let theta0 = rng.gen_range(0.0..PI);
            for f in 0..t {
                let th = theta0 + spec.velocity as f64 * f as f64 * PI / 64.0;
                let (s, c) = th.sin_cos();
                let (my, mx) = (h as f64 / 2.0, w as f64 / 2.0);
                for y in 0..h {
                    for x in 0..w {
                        let u = (x as f64 - mx) * c + (y as f64 - my) * s;
                        pixels.push(127.5 + 100.0 * (2.0 * PI * u / period).sin());
                    }
                }
            }
        }
        SynthKind::TwoSpeed => {
            // a fast bar in the upper half, a slow one in the lower half
            let p = spec.patch_exact.unwrap_or(1) as i64;
            let slow = (spec.velocity / 8 / p * p).max(p);
            let x_fast = rng.gen_range(0..w) as i64 / p * p;
            let x_slow = rng.gen_range(0..w) as i64 / p * p;
            let width = spec.patch_exact.unwrap_or(8);
            for f in 0..t {
                let a = bar(h, w, x_fast + spec.velocity * f as i64, width, 220.0, 30.0);
                let b = bar(h, w, x_slow + slow * f as i64, width, 160.0, 30.0);
                for y in 0..h {
                    let src = if y < h / 2 { &a } else { &b };
                    pixels.extend_from_slice(&src[y * w..(y + 1) * w]);
                }
            }
        }
    }
    Video::new(t, h, w, pixels.into_iter().map(|v| v.round().clamp(0.0, 255.0) as f32).collect())
}
