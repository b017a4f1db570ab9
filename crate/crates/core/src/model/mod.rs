//! The hybrid similarity/difference attention network.

pub mod config;
pub mod layers;
pub mod params;

use diffcore::{Real, Tape, Tensor, Var};

pub use config::ModelConfig;
pub use layers::{GateMode, HeadTrace};
pub use params::{Builder, InitScheme, ParamId, ParamStore};

use crate::error::{HsdaError, Result};
use layers::{HybridBlock, Linear, Norm, Rfm1d, Rfm2d, SignalEmbed, Stem};

#[derive(Clone, Debug)]
pub struct Stage {
    pub blocks: Vec<HybridBlock>,
    pub fusion: Option<(Rfm2d, Rfm1d)>,
}

#[derive(Clone, Debug)]
pub struct Head {
    pub norm: Norm,
    pub feature: Linear,
    pub classifier: Linear,
}

/// Layer layout of the network; parameter values live in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct Network {
    pub cfg: ModelConfig,
    pub stem: Stem,
    pub signal: SignalEmbed,
    pub stages: Vec<Stage>,
    pub head: Head,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct ForwardOptions {
    pub gate: GateMode,
    pub trace: bool,
}

/// Per-sample outputs. `feature` is the penultimate 1×d vector.
#[derive(Clone, Debug)]
pub struct Output {
    pub logits: Var,
    pub feature: Var,
    pub tokens: Vec<Var>,
    pub heads: Vec<HeadTrace>,
}

impl Network {
    /// Builds the layout and initial parameters. With `randomise_all`, every
    /// parameter (including zero- and one-initialised ones) is drawn at
    /// random.
    pub fn build(cfg: &ModelConfig, seed: u64, randomise_all: bool) -> Result<(Network, ParamStore<f32>)> {
        cfg.validate()?;
        let mut b = Builder::new(seed, randomise_all).with_scheme(cfg.init);
        let eps = cfg.ln_eps;
        let stem = Stem::new(&mut b, cfg.stem_widths, cfg.stem_channels, cfg.map_size(), cfg.d, eps);
        let signal = SignalEmbed::new(&mut b, cfg.pool_len, cfg.signal_hidden, cfg.d, eps);
        let mut side = cfg.map_size();
        let mut len = cfg.pool_len;
        let mut stages = Vec::with_capacity(cfg.stages);
        for l in 0..cfg.stages {
            let w = cfg.stage_width(l);
            stages.push(b.scoped(format!("stage{l}"), |b| {
                let blocks = (0..cfg.blocks_per_stage)
                    .map(|i| HybridBlock::new(b, &format!("block{i}"), w, cfg.heads, cfg.n_tokens(), cfg.ffn_mult, eps))
                    .collect();
                let fusion = (cfg.multiscale && l + 1 < cfg.stages).then(|| {
                    side = side.div_ceil(2);
                    len /= 2;
                    (
                        Rfm2d::new(b, "rfm2d", cfg.stem_channels, side, cfg.d_prime),
                        Rfm1d::new(b, "rfm1d", cfg.n_channels, len, cfg.d_prime),
                    )
                });
                Stage { blocks, fusion }
            }));
        }
        let wf = cfg.final_width();
        let head = b.scoped("head", |b| Head {
            norm: Norm::new(b, "norm", wf, eps),
            feature: Linear::new(b, "feature", wf, cfg.d, true),
            classifier: Linear::new(b, "classifier", cfg.d, cfg.n_classes, true),
        });
        let net = Network {
            cfg: cfg.clone(),
            stem,
            signal,
            stages,
            head,
        };
        Ok((net, b.finish()))
    }

    /// One sample: `img` is 3×S×S, `sig` is N×T.
    pub fn forward<T: Real>(
        &self,
        t: &mut Tape<T>,
        p: &[Var],
        img: Var,
        sig: Var,
        opts: ForwardOptions,
    ) -> Result<Output> {
        let cfg = &self.cfg;
        let s = cfg.canvas;
        if t.shape(img) != [3, s, s] {
            return Err(HsdaError::Config(format!(
                "image shape {:?}, expected [3, {s}, {s}]",
                t.shape(img)
            )));
        }
        match t.shape(sig) {
            &[n, _] if n == cfg.n_channels => {}
            other => {
                return Err(HsdaError::Config(format!(
                    "signal shape {other:?}, expected {} channels",
                    cfg.n_channels
                )))
            }
        }
        let (img_tok, mut map2d) = self.stem.forward(t, p, img)?;
        let (sig_tok, mut map1d) = self.signal.forward(t, p, sig)?;
        let mut x = t.concat(&[img_tok, sig_tok], 0)?;
        let mut tokens = Vec::new();
        let mut heads = Vec::new();
        for (l, stage) in self.stages.iter().enumerate() {
            let expect = [cfg.n_tokens(), cfg.stage_width(l)];
            if t.shape(x) != expect {
                return Err(HsdaError::Config(format!(
                    "stage {}: tokens {:?}, expected {expect:?}",
                    l + 1,
                    t.shape(x)
                )));
            }
            for block in &stage.blocks {
                x = block.forward(t, p, x, opts.gate, &mut heads)?;
            }
            if let Some((rfm2d, rfm1d)) = &stage.fusion {
                let (m2, z_img) = rfm2d.forward(t, p, map2d)?;
                let (m1, z_sig) = rfm1d.forward(t, p, map1d)?;
                map2d = m2;
                map1d = m1;
                let z = t.concat(&[z_img, z_sig], 0)?;
                x = t.concat(&[x, z], 1)?;
            }
            if opts.trace {
                tokens.push(x);
            }
        }
        let h = self.head.norm.forward(t, p, x)?;
        let pooled = t.mean_rows(h)?;
        let f = self.head.feature.forward(t, p, pooled)?;
        let feature = t.gelu(f)?;
        let logits = self.head.classifier.forward(t, p, feature)?;
        if !opts.trace {
            heads.clear();
        }
        Ok(Output {
            logits,
            feature,
            tokens,
            heads,
        })
    }
}

/// Runs one forward pass on plain tensors and returns softmax
/// probabilities and the feature vector.
pub fn predict(
    net: &Network,
    params: &ParamStore<f32>,
    img: &Tensor<f32>,
    sig: &Tensor<f32>,
) -> Result<(Vec<f32>, Vec<f32>)> {
    let mut t = Tape::new();
    let p = params.bind_constant(&mut t);
    let (i, s) = (t.constant(img.clone()), t.constant(sig.clone()));
    let out = net.forward(&mut t, &p, i, s, ForwardOptions::default())?;
    let probs = t.softmax_rows(out.logits)?;
    Ok((t.value(probs).data().to_vec(), t.value(out.feature).data().to_vec()))
}

