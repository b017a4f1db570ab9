use crate::error::{HsdaError, Result};
use crate::kv::{self, Entry};
use crate::model::params::InitScheme;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Token width of the first stage.
    pub d: usize,
    pub stages: usize,
    pub blocks_per_stage: usize,
    pub heads: usize,
    /// Width added to every token by each multi-scale fusion step.
    pub d_prime: usize,
    /// Channels of the last two stem convolutions.
    pub stem_channels: usize,
    /// Output channels of the first two stem convolutions.
    pub stem_widths: [usize; 2],
    pub signal_hidden: usize,
    /// Length every signal channel is pooled to before embedding.
    pub pool_len: usize,
    pub canvas: usize,
    pub n_channels: usize,
    pub n_classes: usize,
    pub ffn_mult: usize,
    pub multiscale: bool,
    pub ln_eps: f64,
    pub init: InitScheme,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 128,
            stages: 4,
            blocks_per_stage: 1,
            heads: 2,
            d_prime: 64,
            stem_channels: 128,
            stem_widths: [32, 64],
            signal_hidden: 2048,
            pool_len: 64,
            canvas: 128,
            n_channels: 9,
            n_classes: 2,
            ffn_mult: 4,
            multiscale: true,
            ln_eps: 1e-5,
            init: InitScheme::Truncated,
        }
    }
}

impl ModelConfig {
    /// Small configuration used for gradient checks and desk-scale runs.
    pub fn toy() -> Self {
        ModelConfig {
            d: 16,
            d_prime: 8,
            heads: 2,
            stem_channels: 8,
            stem_widths: [4, 8],
            signal_hidden: 32,
            pool_len: 16,
            canvas: 16,
            stages: 2,
            init: InitScheme::FanIn,
            ..ModelConfig::default()
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.n_channels + 1
    }

    /// Token width inside stage `l` (zero-based).
    pub fn stage_width(&self, l: usize) -> usize {
        if self.multiscale {
            self.d + l * self.d_prime
        } else {
            self.d
        }
    }

    pub fn final_width(&self) -> usize {
        self.stage_width(self.stages - 1)
    }

    /// Side length of the stem feature map.
    pub fn map_size(&self) -> usize {
        self.canvas / 8
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HsdaError::Config(m));
        let positive = [
            ("d", self.d),
            ("stages", self.stages),
            ("blocks_per_stage", self.blocks_per_stage),
            ("heads", self.heads),
            ("d_prime", self.d_prime),
            ("stem_channels", self.stem_channels),
            ("stem_widths", self.stem_widths[0].min(self.stem_widths[1])),
            ("signal_hidden", self.signal_hidden),
            ("pool_len", self.pool_len),
            ("n_channels", self.n_channels),
            ("n_classes", self.n_classes),
            ("ffn_mult", self.ffn_mult),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return bad(format!("{k} must be positive"));
        }
        if self.canvas == 0 || !self.canvas.is_multiple_of(8) {
            return bad(format!("canvas size {} is not a positive multiple of 8", self.canvas));
        }
        for l in 0..self.stages {
            let w = self.stage_width(l);
            if !w.is_multiple_of(self.heads) {
                return bad(format!("stage {} width {w} not divisible by {} heads", l + 1, self.heads));
            }
        }
        if self.multiscale {
            let mut t = self.pool_len;
            for l in 0..self.stages - 1 {
                if t < 2 {
                    return bad(format!("signal map too short for stage {} (length {t})", l + 2));
                }
                t /= 2;
            }
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("d", self.d.to_string()),
            ("stages", self.stages.to_string()),
            ("blocks_per_stage", self.blocks_per_stage.to_string()),
            ("heads", self.heads.to_string()),
            ("d_prime", self.d_prime.to_string()),
            ("stem_channels", self.stem_channels.to_string()),
            ("stem_widths", format!("{},{}", self.stem_widths[0], self.stem_widths[1])),
            ("signal_hidden", self.signal_hidden.to_string()),
            ("pool_len", self.pool_len.to_string()),
            ("canvas", self.canvas.to_string()),
            ("n_channels", self.n_channels.to_string()),
            ("n_classes", self.n_classes.to_string()),
            ("ffn_mult", self.ffn_mult.to_string()),
            ("multiscale", self.multiscale.to_string()),
            ("ln_eps", self.ln_eps.to_string()),
            ("init", self.init.to_string()),
        ]
    }

    /// Applies one entry; returns false when the key is not a model key.
    pub fn apply(&mut self, e: &Entry) -> Result<bool> {
        match e.key.as_str() {
            "d" => self.d = kv::value(e)?,
            "stages" => self.stages = kv::value(e)?,
            "blocks_per_stage" => self.blocks_per_stage = kv::value(e)?,
            "heads" => self.heads = kv::value(e)?,
            "d_prime" => self.d_prime = kv::value(e)?,
            "stem_channels" => self.stem_channels = kv::value(e)?,
            "stem_widths" => {
                let parts: Vec<&str> = e.value.split(',').collect();
                let [a, b] = parts[..] else {
                    return Err(HsdaError::Parse {
                        line: e.line,
                        msg: "stem_widths needs two comma-separated values".into(),
                    });
                };
                let parse = |s: &str| {
                    s.trim().parse::<usize>().map_err(|_| HsdaError::Parse {
                        line: e.line,
                        msg: format!("invalid stem width {s:?}"),
                    })
                };
                self.stem_widths = [parse(a)?, parse(b)?];
            }
            "signal_hidden" => self.signal_hidden = kv::value(e)?,
            "pool_len" => self.pool_len = kv::value(e)?,
            "canvas" => self.canvas = kv::value(e)?,
            "n_channels" => self.n_channels = kv::value(e)?,
            "n_classes" => self.n_classes = kv::value(e)?,
            "ffn_mult" => self.ffn_mult = kv::value(e)?,
            "multiscale" => self.multiscale = kv::value(e)?,
            "ln_eps" => self.ln_eps = kv::value(e)?,
            "init" => self.init = kv::value(e)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn from_kv(text: &str) -> Result<ModelConfig> {
        let mut cfg = ModelConfig::default();
        for e in kv::parse(text)? {
            if !cfg.apply(&e)? {
                return Err(HsdaError::Parse {
                    line: e.line,
                    msg: format!("unknown model key {:?}", e.key),
                });
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        kv::render(&self.to_pairs())
    }
}
