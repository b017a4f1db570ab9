use std::str::FromStr;

use diffcore::random::rng;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{HsdaError, Result};
use crate::features::kinematics::SignalMatrix;
use crate::features::render::RgbCanvas;
use crate::ingest::{standardize, StrokeSequence};

pub const MAX_ROTATION_DEG: f64 = 15.0;
pub const NOISE_STD: f64 = 0.01;
pub const SCALE_RANGE: (f64, f64) = (0.9, 1.1);
pub const WARP_FRACTION: f64 = 0.1;
pub const SLICE_FRACTION: f64 = 0.9;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentOp {
    Rotate,
    Noise,
    Scale,
    WindowWarp,
    WindowSlice,
}

impl AugmentOp {
    pub const ALL: [AugmentOp; 5] = [
        AugmentOp::Rotate,
        AugmentOp::Noise,
        AugmentOp::Scale,
        AugmentOp::WindowWarp,
        AugmentOp::WindowSlice,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AugmentOp::Rotate => "rotate",
            AugmentOp::Noise => "noise",
            AugmentOp::Scale => "scale",
            AugmentOp::WindowWarp => "window_warp",
            AugmentOp::WindowSlice => "window_slice",
        }
    }
}

impl FromStr for AugmentOp {
    type Err = HsdaError;
    fn from_str(s: &str) -> Result<Self> {
        AugmentOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| HsdaError::Config(format!("unknown augmentation {s:?}")))
    }
}

/// Concrete parameters of one augmentation draw.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Transform {
    Rotate { degrees: f64 },
    Noise { seed: u64 },
    Scale { factor: f64 },
    WindowWarp { start: f64, factor: f64 },
    WindowSlice { start: f64 },
}

impl Transform {
    /// Draws the parameters for `op`. `start` values are fractions of the
    /// admissible start range.
    pub fn sample(op: AugmentOp, seed: u64) -> Transform {
        let mut r = rng(seed, 0xa0 + op as u64);
        match op {
            AugmentOp::Rotate => Transform::Rotate {
                degrees: r.random_range(-MAX_ROTATION_DEG..=MAX_ROTATION_DEG),
            },
            AugmentOp::Noise => Transform::Noise { seed: r.random() },
            AugmentOp::Scale => Transform::Scale {
                factor: r.random_range(SCALE_RANGE.0..=SCALE_RANGE.1),
            },
            AugmentOp::WindowWarp => Transform::WindowWarp {
                start: r.random(),
                factor: if r.random_bool(0.5) { 0.5 } else { 2.0 },
            },
            AugmentOp::WindowSlice => Transform::WindowSlice { start: r.random() },
        }
    }
}

pub trait Augment: Sized {
    fn apply(&self, tf: Transform) -> Result<Self>;

    fn augment(&self, op: AugmentOp, seed: u64) -> Result<Self> {
        self.apply(Transform::sample(op, seed))
    }
}

fn gaussian(seed: u64, n: usize, std: f64) -> Vec<f64> {
    let mut r = rng(seed, 0xb1);
    (0..n)
        .map(|_| {
            let z: f64 = r.sample(StandardNormal);
            z * std
        })
        .collect()
}

/// Linear resampling of `v` at fractional indices.
pub fn resample_at(v: &[f64], pos: &[f64]) -> Vec<f64> {
    let last = v.len() - 1;
    pos.iter()
        .map(|&p| {
            let p = p.clamp(0.0, last as f64);
            let i = (p.floor() as usize).min(last);
            let f = p - i as f64;
            if f == 0.0 || i == last {
                v[i]
            } else {
                v[i] * (1.0 - f) + v[i + 1] * f
            }
        })
        .collect()
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// Source positions for a window warp of a length-`n` axis. A window of
/// `WARP_FRACTION·n` samples is resized by `factor` and the whole axis is
/// resampled back to `n`.
pub fn warp_positions(n: usize, start_frac: f64, factor: f64) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    let w = ((WARP_FRACTION * n as f64).round() as usize).clamp(1, n - 1);
    let s = ((n - w) as f64 * start_frac).floor() as usize;
    let e = s + w;
    let mut src: Vec<f64> = (0..s).map(|i| i as f64).collect();
    let new_w = ((w as f64 * factor).round() as usize).max(1);
    let span_end = if e < n { e as f64 } else { (n - 1) as f64 };
    for k in 0..new_w {
        src.push(s as f64 + (span_end - s as f64) * k as f64 / new_w as f64);
    }
    src.extend((e..n).map(|i| i as f64));
    let idx = linspace(0.0, (src.len() - 1) as f64, n);
    resample_at(&src, &idx)
}

/// Source positions of a contiguous `SLICE_FRACTION` crop stretched back to
/// length `n`.
pub fn slice_positions(n: usize, start_frac: f64) -> Vec<f64> {
    if n < 2 {
        return vec![0.0; n];
    }
    let len = ((SLICE_FRACTION * n as f64).round() as usize).clamp(2, n);
    let s = ((n - len) as f64 * start_frac).floor();
    linspace(s, s + (len - 1) as f64, n)
}

fn time_positions(n: usize, tf: Transform) -> Option<Vec<f64>> {
    match tf {
        Transform::WindowWarp { start, factor } => Some(warp_positions(n, start, factor)),
        Transform::WindowSlice { start } => Some(slice_positions(n, start)),
        _ => None,
    }
}

fn rotate_scale(x: &mut [f64], y: &mut [f64], degrees: f64, factor: f64) {
    let n = x.len().max(1) as f64;
    let cx = x.iter().sum::<f64>() / n;
    let cy = y.iter().sum::<f64>() / n;
    let (s, c) = degrees.to_radians().sin_cos();
    for (u, v) in x.iter_mut().zip(y.iter_mut()) {
        let (dx, dy) = (*u - cx, *v - cy);
        *u = cx + factor * (c * dx - s * dy);
        *v = cy + factor * (s * dx + c * dy);
    }
}

impl Augment for StrokeSequence {
    fn apply(&self, tf: Transform) -> Result<Self> {
        match tf {
            Transform::Rotate { degrees: 0.0 } | Transform::Scale { factor: 1.0 } => Ok(self.clone()),
            Transform::Rotate { degrees } => self.geometric(degrees, 1.0),
            Transform::Scale { factor } => self.geometric(0.0, factor),
            Transform::Noise { seed } => {
                let n = self.len();
                let z = gaussian(seed, 3 * n, NOISE_STD);
                let mut out = self.clone();
                for (i, ch) in [&mut out.x, &mut out.y, &mut out.p].into_iter().enumerate() {
                    ch.iter_mut().zip(&z[i * n..]).for_each(|(v, e)| *v += e);
                }
                Ok(out)
            }
            Transform::WindowWarp { .. } | Transform::WindowSlice { .. } => {
                let pos = time_positions(self.len(), tf).expect("time transform");
                let mut out = self.clone();
                for ch in [&mut out.x, &mut out.y, &mut out.p] {
                    *ch = resample_at(ch, &pos);
                }
                Ok(out)
            }
        }
    }
}

impl StrokeSequence {
    fn geometric(&self, degrees: f64, factor: f64) -> Result<Self> {
        let (mut x, mut y) = (self.raw_x(), self.raw_y());
        rotate_scale(&mut x, &mut y, degrees, factor);
        let mut raw = self.to_raw();
        for (s, (u, v)) in raw.samples.iter_mut().zip(x.into_iter().zip(y)) {
            s.x = Some(u);
            s.y = Some(v);
        }
        let mut out = standardize(&raw)?;
        out.p = self.p.clone();
        out.stats[2] = self.stats[2];
        Ok(out)
    }
}

impl Augment for SignalMatrix {
    fn apply(&self, tf: Transform) -> Result<Self> {
        let mut out = self.clone();
        match tf {
            Transform::Rotate { .. } | Transform::Scale { .. } if self.n_channels() < 2 => {
                Err(HsdaError::Config("rotation and scaling need x and y channels".into()))
            }
            Transform::Rotate { degrees } => {
                let (x, rest) = out.rows.split_at_mut(1);
                rotate_scale(&mut x[0], &mut rest[0], degrees, 1.0);
                Ok(out)
            }
            Transform::Scale { factor } => {
                let (x, rest) = out.rows.split_at_mut(1);
                rotate_scale(&mut x[0], &mut rest[0], 0.0, factor);
                Ok(out)
            }
            Transform::Noise { seed } => {
                let t = self.len();
                let z = gaussian(seed, self.n_channels() * t, NOISE_STD);
                for (i, row) in out.rows.iter_mut().enumerate() {
                    row.iter_mut().zip(&z[i * t..]).for_each(|(v, e)| *v += e);
                }
                Ok(out)
            }
            Transform::WindowWarp { .. } | Transform::WindowSlice { .. } => {
                let pos = time_positions(self.len(), tf).expect("time transform");
                for row in out.rows.iter_mut() {
                    *row = resample_at(row, &pos);
                }
                Ok(out)
            }
        }
    }
}

impl Augment for RgbCanvas {
    fn apply(&self, tf: Transform) -> Result<Self> {
        match tf {
            Transform::Rotate { degrees } => Ok(self.resample(degrees, 1.0)),
            Transform::Scale { factor } => Ok(self.resample(0.0, factor)),
            Transform::Noise { seed } => {
                let n = self.size * self.size;
                let z = gaussian(seed, 3 * n, NOISE_STD);
                let mut out = self.clone();
                for r in 0..self.size {
                    for c in 0..self.size {
                        if !self.is_lit(r, c) {
                            continue;
                        }
                        for ch in 0..3 {
                            let i = self.index(ch, r, c);
                            out.data[i] = (self.data[i] + z[i] as f32).clamp(1e-3, 1.0);
                        }
                    }
                }
                Ok(out)
            }
            Transform::WindowWarp { .. } | Transform::WindowSlice { .. } => Err(HsdaError::Config(
                "time-axis augmentation does not apply to images; augment the stroke before rendering".into(),
            )),
        }
    }
}

impl RgbCanvas {
    /// Nearest-neighbour rotation and scaling about the image centre.
    fn resample(&self, degrees: f64, factor: f64) -> RgbCanvas {
        if degrees == 0.0 && factor == 1.0 {
            return self.clone();
        }
        let n = self.size;
        let centre = (n - 1) as f64 / 2.0;
        let (s, c) = degrees.to_radians().sin_cos();
        let mut out = RgbCanvas::blank(n);
        for r in 0..n {
            for col in 0..n {
                let (dx, dy) = ((col as f64 - centre) / factor, (r as f64 - centre) / factor);
                let sx = (centre + c * dx + s * dy).round();
                let sy = (centre - s * dx + c * dy).round();
                if sx < 0.0 || sy < 0.0 || sx >= n as f64 || sy >= n as f64 {
                    continue;
                }
                let (sx, sy) = (sx as usize, sy as usize);
                for ch in 0..3 {
                    let i = out.index(ch, r, col);
                    out.data[i] = self.get(ch, sy, sx);
                }
            }
        }
        out
    }
}
