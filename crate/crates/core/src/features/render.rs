use std::path::Path;

use crate::error::{io_err, HsdaError, Result};
use crate::features::kinematics::{check_times, kinematics_unchecked, MIN_SAMPLES};
use crate::ingest::StrokeSequence;

pub const DEFAULT_SIZE: usize = 128;
pub const MARGIN: usize = 4;
pub const COLOUR_FLOOR: f64 = 0.1;

/// Square RGB image stored channel-major (3×H×W) with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct RgbCanvas {
    pub size: usize,
    pub data: Vec<f32>,
}

impl RgbCanvas {
    pub fn blank(size: usize) -> Self {
        RgbCanvas {
            size,
            data: vec![0.0; 3 * size * size],
        }
    }

    #[inline]
    pub fn index(&self, c: usize, row: usize, col: usize) -> usize {
        (c * self.size + row) * self.size + col
    }

    pub fn get(&self, c: usize, row: usize, col: usize) -> f32 {
        self.data[self.index(c, row, col)]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [f32; 3]) {
        for (c, v) in rgb.into_iter().enumerate() {
            let i = self.index(c, row, col);
            self.data[i] = v;
        }
    }

    pub fn is_lit(&self, row: usize, col: usize) -> bool {
        (0..3).any(|c| self.get(c, row, col) > 0.0)
    }

    pub fn lit_pixels(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.size {
            for c in 0..self.size {
                if self.is_lit(r, c) {
                    out.push((r, c));
                }
            }
        }
        out
    }

    /// Binary PPM (P6, maxval 255).
    pub fn to_ppm(&self) -> Vec<u8> {
        let n = self.size;
        let mut out = format!("P6\n{n} {n}\n255\n").into_bytes();
        for r in 0..n {
            for c in 0..n {
                for ch in 0..3 {
                    out.push((self.get(ch, r, c).clamp(0.0, 1.0) * 255.0).round() as u8);
                }
            }
        }
        out
    }

    pub fn from_ppm(bytes: &[u8]) -> Result<RgbCanvas> {
        let bad = |msg: &str| HsdaError::Parse {
            line: 1,
            msg: format!("ppm: {msg}"),
        };
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
        }
        pos += 1;
        if fields[0] != "P6" || fields[3] != "255" {
            return Err(bad("expected P6 with maxval 255"));
        }
        let w: usize = fields[1].parse().map_err(|_| bad("width"))?;
        let h: usize = fields[2].parse().map_err(|_| bad("height"))?;
        if w != h {
            return Err(bad("canvas must be square"));
        }
        let px = bytes.get(pos..pos + 3 * w * h).ok_or_else(|| bad("truncated pixels"))?;
        let mut canvas = RgbCanvas::blank(w);
        for r in 0..h {
            for c in 0..w {
                for ch in 0..3 {
                    let i = canvas.index(ch, r, c);
                    canvas.data[i] = px[(r * w + c) * 3 + ch] as f32 / 255.0;
                }
            }
        }
        Ok(canvas)
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ppm()).map_err(io_err(path))
    }
}

/// Min-max normalisation onto [COLOUR_FLOOR, 1]; a constant channel maps to 1.
pub fn normalise_colour(v: &[f64]) -> Vec<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    v.iter()
        .map(|&x| {
            if span > 0.0 && span.is_finite() {
                COLOUR_FLOOR + (1.0 - COLOUR_FLOOR) * (x - lo) / span
            } else {
                1.0
            }
        })
        .collect()
}

/// Integer grid points of the segment from `a` to `b`, endpoints included.
pub fn bresenham(a: (i64, i64), b: (i64, i64)) -> Vec<(i64, i64)> {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    let mut out = Vec::with_capacity((dx - dy) as usize + 1);
    loop {
        out.push((x, y));
        if x == b.0 && y == b.1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
    out
}

/// Maps raw coordinates into pixel space, preserving aspect ratio and
/// centring the bounding box inside the margin.
fn to_pixels(x: &[f64], y: &[f64], size: usize) -> Vec<(f64, f64)> {
    let (x0, x1) = x.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (y0, y1) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let extent = (x1 - x0).max(y1 - y0);
    let inner = (size - 1 - 2 * MARGIN) as f64;
    let centre = (size - 1) as f64 / 2.0;
    if extent <= 0.0 {
        log::warn!("degenerate bounding box; rendering a single pixel");
        return vec![(centre, centre); x.len()];
    }
    let scale = inner / extent;
    let (cx, cy) = ((x0 + x1) / 2.0, (y0 + y1) / 2.0);
    x.iter()
        .zip(y)
        .map(|(&u, &v)| (centre + (u - cx) * scale, centre + (v - cy) * scale))
        .collect()
}

/// Renders the on-paper trajectory as an RGB image whose channels encode
/// pressure rate, acceleration and angular speed.
pub fn render_image(s: &StrokeSequence, size: usize) -> Result<RgbCanvas> {
    if size < 2 * MARGIN + 2 {
        return Err(HsdaError::Config(format!("canvas size {size} too small")));
    }
    if s.is_empty() {
        return Err(HsdaError::EmptyInput("stroke sequence".into()));
    }
    let n = s.len();
    if n >= MIN_SAMPLES {
        check_times(&s.t)?;
    } else if s.t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(HsdaError::Ordering { index: 1 });
    }
    let (x, y, p) = (s.raw_x(), s.raw_y(), s.raw_p());
    let colours: Vec<[f32; 3]> = if n >= 2 {
        let k = kinematics_unchecked(&s.t, &x, &y, &p);
        let (r, g, b) = (
            normalise_colour(&k.pressure_rate),
            normalise_colour(&k.acceleration),
            normalise_colour(&k.angular_speed),
        );
        (0..n).map(|i| [r[i] as f32, g[i] as f32, b[i] as f32]).collect()
    } else {
        vec![[1.0; 3]]
    };
    let pix = to_pixels(&x, &y, size);
    let down = s.pen_down();
    let grid: Vec<(i64, i64)> = pix.iter().map(|&(u, v)| (u.round() as i64, v.round() as i64)).collect();

    let mut canvas = RgbCanvas::blank(size);
    let mut plot = |(col, row): (i64, i64), rgb: [f32; 3]| {
        if (0..size as i64).contains(&col) && (0..size as i64).contains(&row) {
            canvas.set_pixel(row as usize, col as usize, rgb);
        }
    };
    for i in 0..n {
        if !down[i] {
            continue;
        }
        let joined = i + 1 < n && down[i + 1];
        if !joined {
            plot(grid[i], colours[i]);
            continue;
        }
        let (a, b) = (pix[i], pix[i + 1]);
        for q in bresenham(grid[i], grid[i + 1]) {
            let (qx, qy) = (q.0 as f64, q.1 as f64);
            let da = (qx - a.0).powi(2) + (qy - a.1).powi(2);
            let db = (qx - b.0).powi(2) + (qy - b.1).powi(2);
            plot(q, if da <= db { colours[i] } else { colours[i + 1] });
        }
    }
    Ok(canvas)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bresenham_endpoints_and_connectivity() {
        let pts = bresenham((0, 0), (5, 2));
        assert_eq!(pts.first(), Some(&(0, 0)));
        assert_eq!(pts.last(), Some(&(5, 2)));
        for w in pts.windows(2) {
            assert!((w[1].0 - w[0].0).abs() <= 1 && (w[1].1 - w[0].1).abs() <= 1);
        }
        assert_eq!(bresenham((3, 3), (3, 3)), vec![(3, 3)]);
    }

    #[test]
    fn ppm_round_trip() {
        let mut c = RgbCanvas::blank(10);
        c.set_pixel(2, 3, [1.0, 0.2, 0.6]);
        let back = RgbCanvas::from_ppm(&c.to_ppm()).unwrap();
        assert_eq!(back.size, 10);
        assert!((back.get(1, 2, 3) - 0.2).abs() < 1.0 / 255.0);
        assert_eq!(back.get(0, 0, 0), 0.0);
    }

    #[test]
    fn colour_floor() {
        assert_eq!(normalise_colour(&[2.0, 2.0]), vec![1.0, 1.0]);
        let v = normalise_colour(&[0.0, 5.0, 10.0]);
        for (a, b) in v.iter().zip([0.1, 0.55, 1.0]) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
