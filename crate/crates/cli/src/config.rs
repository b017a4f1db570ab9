//! Run configuration: every setting of a command in one `key = value` file.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use hsda::error::io_err;
use hsda::features::SynthOptions;
use hsda::ingest::{CleanOptions, RawFormat};
use hsda::kv::{self, Entry};
use hsda::model::ModelConfig;
use hsda::train::TrainConfig;
use hsda::{HsdaError, Result};

/// File name of the serialized configuration in every output directory.
pub const FILE_NAME: &str = "run_config.txt";

/// Model size preset applied before any model key.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Scale {
    #[default]
    Full,
    Toy,
}

impl Scale {
    pub fn model(self) -> ModelConfig {
        match self {
            Scale::Full => ModelConfig::default(),
            Scale::Toy => ModelConfig::toy(),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Full => "full",
            Scale::Toy => "toy",
        })
    }
}

impl FromStr for Scale {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "full" => Ok(Scale::Full),
            "toy" => Ok(Scale::Toy),
            other => Err(format!("unknown scale {other:?}")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub scale: Scale,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub clean: CleanOptions,
    pub synth: SynthOptions,
    pub synth_n: usize,
    pub render_size: usize,
    /// Task to keep when loading data; 0 keeps every task.
    pub task: u8,
    pub raw_format: RawFormat,
    pub input: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scale: Scale::Full,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            clean: CleanOptions::default(),
            synth: SynthOptions::default(),
            synth_n: 20,
            render_size: 128,
            task: 0,
            raw_format: RawFormat::CsvV1,
            input: String::new(),
        }
    }
}

impl RunConfig {
    fn apply_own(&mut self, e: &Entry) -> Result<bool> {
        match e.key.as_str() {
            "scale" => self.scale = kv::value(e)?,
            "z_max" => self.clean.z_max = kv::value(e)?,
            "drop_pen_up" => self.clean.drop_pen_up = kv::value(e)?,
            "synth_n" => self.synth_n = kv::value(e)?,
            "synth_task" => self.synth.task_id = kv::value(e)?,
            "tremor_min" => self.synth.tremor_amplitude.0 = kv::value(e)?,
            "tremor_max" => self.synth.tremor_amplitude.1 = kv::value(e)?,
            "sensor_noise" => self.synth.sensor_noise = kv::value(e)?,
            "render_size" => self.render_size = kv::value(e)?,
            "task" => self.task = kv::value(e)?,
            "raw_format" => self.raw_format = kv::value(e)?,
            "input" => self.input = e.value.clone(),
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Applies one entry to whichever section owns the key.
    pub fn apply(&mut self, e: &Entry) -> Result<()> {
        if self.apply_own(e)? || self.model.apply(e)? || self.train.apply(e)? {
            return Ok(());
        }
        Err(HsdaError::Config(format!("line {}: unknown key {:?}", e.line, e.key)))
    }

    /// Parses a configuration file. `scale` picks the model preset first,
    /// wherever it appears; the remaining keys then override it.
    pub fn from_text(text: &str) -> Result<RunConfig> {
        let entries = kv::parse(text)?;
        let mut cfg = RunConfig::default();
        if let Some(e) = entries.iter().rev().find(|e| e.key == "scale") {
            cfg.scale = kv::value(e)?;
            cfg.model = cfg.scale.model();
        }
        for e in entries.iter().filter(|e| e.key != "scale") {
            cfg.apply(e)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        RunConfig::from_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.clean.z_max.is_nan() || self.clean.z_max <= 0.0 {
            return Err(HsdaError::Config("z_max must be positive".into()));
        }
        if self.render_size < 8 {
            return Err(HsdaError::Config("render_size must be at least 8".into()));
        }
        if self.synth_n == 0 {
            return Err(HsdaError::Config("synth_n must be positive".into()));
        }
        let (lo, hi) = self.synth.tremor_amplitude;
        if !(0.0 <= lo && lo <= hi) || self.synth.sensor_noise < 0.0 {
            return Err(HsdaError::Config("need 0 <= tremor_min <= tremor_max and sensor_noise >= 0".into()));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = vec![("scale", self.scale.to_string())];
        out.extend(self.model.to_pairs());
        out.extend(self.train.to_pairs());
        out.extend([
            ("z_max", self.clean.z_max.to_string()),
            ("drop_pen_up", self.clean.drop_pen_up.to_string()),
            ("synth_n", self.synth_n.to_string()),
            ("synth_task", self.synth.task_id.to_string()),
            ("tremor_min", self.synth.tremor_amplitude.0.to_string()),
            ("tremor_max", self.synth.tremor_amplitude.1.to_string()),
            ("sensor_noise", self.synth.sensor_noise.to_string()),
            ("render_size", self.render_size.to_string()),
            ("task", self.task.to_string()),
            ("raw_format", self.raw_format.to_string()),
            ("input", self.input.clone()),
        ]);
        out
    }

    pub fn to_text(&self) -> String {
        kv::render(&self.to_pairs())
    }

    /// Writes the configuration into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let path = dir.join(FILE_NAME);
        std::fs::write(&path, self.to_text()).map_err(io_err(&path))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn scale_applies_before_overrides() {
        let cfg = RunConfig::from_text("d = 32\nscale = toy\n").unwrap();
        assert_eq!(cfg.model.d, 32);
        assert_eq!(cfg.model.canvas, ModelConfig::toy().canvas);
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(matches!(RunConfig::from_text("learning_rate = 0.1"), Err(HsdaError::Config(_))));
    }
}
