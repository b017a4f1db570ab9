use std::f64::consts::PI;

use crate::error::{HsdaError, Result};
use crate::ingest::{zscore, StrokeSequence};

pub const CHANNEL_NAMES: [&str; 9] = [
    "x",
    "y",
    "p",
    "speed",
    "acceleration",
    "jerk",
    "pressure_rate",
    "curvature",
    "angular_speed",
];

pub const MIN_SAMPLES: usize = 5;
const CURVATURE_FLOOR: f64 = 1e-8;

/// N named channels × T timesteps, each row z-scored.
#[derive(Clone, Debug, PartialEq)]
pub struct SignalMatrix {
    pub channel_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub sampling_rate: f64,
}

impl SignalMatrix {
    pub fn n_channels(&self) -> usize {
        self.rows.len()
    }

    pub fn len(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, name: &str) -> Option<&[f64]> {
        let i = self.channel_names.iter().position(|n| n == name)?;
        Some(&self.rows[i])
    }

    /// Channel-major values, N×T.
    pub fn flat(&self) -> Vec<f64> {
        self.rows.iter().flatten().copied().collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.channel_names.join(",");
        out.push('\n');
        for t in 0..self.len() {
            let line: Vec<String> = self.rows.iter().map(|r| format!("{:.6}", r[t])).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, sampling_rate: f64) -> Result<SignalMatrix> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines
            .next()
            .ok_or_else(|| HsdaError::EmptyInput("signal csv".into()))?;
        let channel_names: Vec<String> = header.split(',').map(|s| s.trim().to_string()).collect();
        let mut rows = vec![Vec::new(); channel_names.len()];
        for (i, line) in lines {
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != channel_names.len() {
                return Err(HsdaError::Parse {
                    line: i + 1,
                    msg: format!("expected {} fields", channel_names.len()),
                });
            }
            for (row, f) in rows.iter_mut().zip(fields) {
                row.push(f.trim().parse::<f64>().map_err(|e| HsdaError::Parse {
                    line: i + 1,
                    msg: e.to_string(),
                })?);
            }
        }
        Ok(SignalMatrix {
            channel_names,
            rows,
            sampling_rate,
        })
    }
}

/// Derivative on a non-uniform grid: centred in the interior, one-sided at
/// the two ends.
pub fn derivative(v: &[f64], t: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|i| {
            let (a, b) = if i == 0 {
                (0, 1)
            } else if i == n - 1 {
                (n - 2, n - 1)
            } else {
                (i - 1, i + 1)
            };
            (v[b] - v[a]) / (t[b] - t[a])
        })
        .collect()
}

/// Removes 2π jumps so consecutive angles differ by at most π.
pub fn unwrap_angles(theta: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = Vec::with_capacity(theta.len());
    let mut offset = 0.0f64;
    for (i, &a) in theta.iter().enumerate() {
        if i > 0 {
            let d = a + offset - out[i - 1];
            if d > PI {
                offset -= 2.0 * PI * ((d + PI) / (2.0 * PI)).floor();
            } else if d < -PI {
                offset += 2.0 * PI * ((-d + PI) / (2.0 * PI)).floor();
            }
        }
        out.push(a + offset);
    }
    out
}

/// Kinematic channels in original units (time in seconds).
#[derive(Clone, Debug)]
pub struct Kinematics {
    pub speed: Vec<f64>,
    pub acceleration: Vec<f64>,
    pub jerk: Vec<f64>,
    pub pressure_rate: Vec<f64>,
    pub curvature: Vec<f64>,
    pub angular_speed: Vec<f64>,
}

pub(crate) fn check_times(t: &[f64]) -> Result<()> {
    if t.len() < MIN_SAMPLES {
        return Err(HsdaError::TooShort {
            len: t.len(),
            min: MIN_SAMPLES,
        });
    }
    match t.windows(2).position(|w| w[1] <= w[0]) {
        Some(i) => Err(HsdaError::Ordering { index: i + 1 }),
        None => Ok(()),
    }
}

/// Kinematics of a trajectory given in raw units with `t_ms` in milliseconds.
pub fn kinematics(t_ms: &[f64], x: &[f64], y: &[f64], p: &[f64]) -> Result<Kinematics> {
    check_times(t_ms)?;
    Ok(kinematics_unchecked(t_ms, x, y, p))
}

/// As [`kinematics`] without the length and ordering checks; needs at least
/// two samples with distinct times.
pub(crate) fn kinematics_unchecked(t_ms: &[f64], x: &[f64], y: &[f64], p: &[f64]) -> Kinematics {
    let t: Vec<f64> = t_ms.iter().map(|v| v / 1000.0).collect();
    let dx = derivative(x, &t);
    let dy = derivative(y, &t);
    let ddx = derivative(&dx, &t);
    let ddy = derivative(&dy, &t);
    let speed: Vec<f64> = dx.iter().zip(&dy).map(|(a, b)| a.hypot(*b)).collect();
    let acceleration = derivative(&speed, &t);
    let jerk = derivative(&acceleration, &t);
    let pressure_rate = derivative(p, &t);
    let curvature = (0..t.len())
        .map(|i| {
            let den = (dx[i] * dx[i] + dy[i] * dy[i]).powf(1.5).max(CURVATURE_FLOOR);
            (dx[i] * ddy[i] - dy[i] * ddx[i]) / den
        })
        .collect();
    let theta: Vec<f64> = dx.iter().zip(&dy).map(|(a, b)| b.atan2(*a)).collect();
    let angular_speed = derivative(&unwrap_angles(&theta), &t);
    Kinematics {
        speed,
        acceleration,
        jerk,
        pressure_rate,
        curvature,
        angular_speed,
    }
}

pub fn kinematics_of(s: &StrokeSequence) -> Result<Kinematics> {
    kinematics(&s.t, &s.raw_x(), &s.raw_y(), &s.raw_p())
}

/// Builds the nine-channel signal matrix: standardised x, y, p followed by
/// the six standardised kinematic channels.
pub fn kinematic_features(s: &StrokeSequence) -> Result<SignalMatrix> {
    let k = kinematics_of(s)?;
    let mut rows = vec![s.x.clone(), s.y.clone(), s.p.clone()];
    for ch in [
        &k.speed,
        &k.acceleration,
        &k.jerk,
        &k.pressure_rate,
        &k.curvature,
        &k.angular_speed,
    ] {
        rows.push(zscore(ch).0);
    }
    if rows.iter().flatten().any(|v| !v.is_finite()) {
        return Err(HsdaError::NonFinite {
            what: format!("kinematics for subject {} task {}", s.subject_id, s.task_id),
        });
    }
    let mut dt: Vec<f64> = s.t.windows(2).map(|w| w[1] - w[0]).collect();
    dt.sort_by(f64::total_cmp);
    Ok(SignalMatrix {
        channel_names: CHANNEL_NAMES.iter().map(|s| s.to_string()).collect(),
        rows,
        sampling_rate: 1000.0 / dt[dt.len() / 2],
    })
}
