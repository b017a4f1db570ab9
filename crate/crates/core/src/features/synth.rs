//! Labelled toy handwriting. Healthy traces are smooth cursive loops with
//! slowly varying pressure; the impaired class adds amplitude-modulated
//! 8–12 Hz tremor and brief pressure drops.

use std::f64::consts::PI;

use diffcore::random::rng;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{HsdaError, Result};
use crate::ingest::{standardize, Label, RawRecord, RawSample, StrokeSequence};

pub const SAMPLE_RATE: f64 = 200.0;
pub const DURATION_S: (f64, f64) = (2.0, 4.0);
pub const TREMOR_HZ: (f64, f64) = (8.0, 12.0);

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthOptions {
    pub task_id: u8,
    pub tremor_amplitude: (f64, f64),
    pub sensor_noise: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            task_id: 1,
            tremor_amplitude: (10.0, 20.0),
            sensor_noise: 0.005,
        }
    }
}

fn gauss(r: &mut ChaCha8Rng) -> f64 {
    r.sample(StandardNormal)
}

fn trace(r: &mut ChaCha8Rng, label: Label, opts: &SynthOptions) -> Vec<RawSample> {
    let dur = r.random_range(DURATION_S.0..DURATION_S.1);
    let n = (dur * SAMPLE_RATE) as usize;
    // Cursive loops: a rotating ellipse carried forward by a drift slower
    // than the loop speed, so the pen never stops.
    let w = 2.0 * PI * r.random_range(0.8..1.5);
    let (rx, ry) = (r.random_range(400.0..800.0), r.random_range(400.0..800.0));
    let drift = r.random_range(0.2..0.5) * rx * w;
    let phase = r.random_range(0.0..2.0 * PI);
    let (cx, cy) = (3000.0 + r.random_range(-500.0..500.0), 4000.0 + r.random_range(-500.0..500.0));
    let (p_base, p_amp, p_freq, p_phase) = (
        r.random_range(500.0..700.0),
        r.random_range(80.0..150.0),
        r.random_range(0.2..0.5),
        r.random_range(0.0..2.0 * PI),
    );

    let tremor = (label == Label::Ad).then(|| {
        (
            r.random_range(opts.tremor_amplitude.0..opts.tremor_amplitude.1),
            r.random_range(TREMOR_HZ.0..TREMOR_HZ.1),
            r.random_range(0.3..1.0),
            r.random_range(0.0..2.0 * PI),
            r.random_range(0.0..2.0 * PI),
        )
    });
    let mut drop = vec![1.0; n];
    if label == Label::Ad {
        for _ in 0..r.random_range(3..=8) {
            let start = r.random_range(0..n);
            let len = r.random_range(4..=10);
            let depth = r.random_range(0.6..0.8);
            for d in drop.iter_mut().skip(start).take(len) {
                *d = depth;
            }
        }
    }

    (0..n)
        .map(|i| {
            let t = i as f64 / SAMPLE_RATE;
            let mut x = cx + drift * t + rx * (w * t + phase).cos();
            let mut y = cy + ry * (w * t + phase).sin();
            if let Some((amp, f, f_am, ph_x, ph_y)) = tremor {
                let env = amp * (1.0 + 0.5 * (2.0 * PI * f_am * t).sin());
                x += env * (2.0 * PI * f * t + ph_x).sin();
                y += env * (2.0 * PI * f * t + ph_y).sin();
            }
            x += opts.sensor_noise * gauss(r);
            y += opts.sensor_noise * gauss(r);
            let p = (p_base + p_amp * (2.0 * PI * p_freq * t + p_phase).sin()) * drop[i] + opts.sensor_noise * gauss(r);
            RawSample::dense(i as f64 * 1000.0 / SAMPLE_RATE, x, y, p.max(1.0))
        })
        .collect()
}

/// `2·n_per_class` raw records, alternating HC and AD subjects.
pub fn synth_records(n_per_class: usize, seed: u64, opts: &SynthOptions) -> Result<Vec<RawRecord>> {
    if n_per_class == 0 {
        return Err(HsdaError::Config("n_per_class must be at least 1".into()));
    }
    Ok((0..2 * n_per_class)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Hc } else { Label::Ad };
            let mut r = rng(seed, 1000 + i as u64);
            RawRecord {
                subject_id: format!("S{:03}", i + 1),
                task_id: opts.task_id,
                label,
                samples: trace(&mut r, label, opts),
            }
        })
        .collect())
}

pub fn synth_generate(n_per_class: usize, seed: u64) -> Result<Vec<(StrokeSequence, Label)>> {
    synth_records(n_per_class, seed, &SynthOptions::default())?
        .iter()
        .map(|r| Ok((standardize(r)?, r.label)))
        .collect()
}
