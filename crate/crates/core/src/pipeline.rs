//! From cleaned recordings to model inputs.

use diffcore::Tensor;

use crate::error::Result;
use crate::features::{kinematic_features, render_image, RgbCanvas, SignalMatrix};
use crate::ingest::{clean_all, CleanOptions, Cleaned, Dropped, RawRecord, StrokeSequence};
use crate::loss::Templates;
use crate::model::{ModelConfig, Network};
use crate::train::{Sample, TrainConfig, Trained};

pub fn signal_tensor(m: &SignalMatrix) -> Result<Tensor<f32>> {
    Ok(Tensor::new(
        &[m.n_channels(), m.len()],
        m.flat().into_iter().map(|v| v as f32).collect(),
    )?)
}

pub fn image_tensor(c: &RgbCanvas) -> Result<Tensor<f32>> {
    Ok(Tensor::new(&[3, c.size, c.size], c.data.clone())?)
}

pub fn sample_id(s: &StrokeSequence) -> String {
    format!("{}_{}", s.subject_id, s.task_id)
}

pub fn build_sample(s: &StrokeSequence, canvas: usize) -> Result<Sample> {
    let signal = kinematic_features(s)?;
    let image = render_image(s, canvas)?;
    Ok(Sample {
        id: sample_id(s),
        label: s.label.index(),
        image: image_tensor(&image)?,
        signal: signal_tensor(&signal)?,
    })
}

/// Cleans raw records and turns the salvageable ones into samples.
pub fn prepare(records: Vec<RawRecord>, opts: &CleanOptions, canvas: usize) -> Result<(Vec<Sample>, Vec<Cleaned>, Vec<Dropped>)> {
    let (cleaned, dropped) = clean_all(records, opts);
    let samples = cleaned
        .iter()
        .map(|c| build_sample(&c.sequence, canvas))
        .collect::<Result<Vec<_>>>()?;
    Ok((samples, cleaned, dropped))
}

/// Network layout plus its initial trainable state for `cfg.seed`.
pub fn initial_state(model: &ModelConfig, cfg: &TrainConfig) -> Result<(Network, Trained)> {
    let (net, params) = Network::build(model, cfg.seed, false)?;
    let mut templates = Templates::init(model.d, cfg.seed);
    templates.alpha = cfg.alpha;
    Ok((net, Trained { params, templates }))
}
