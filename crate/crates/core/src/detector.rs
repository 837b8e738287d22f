//! Base action detector: a clip goes in, class logits and a localization map come out.
//!
//! The reference network is a small volumetric encoder-decoder. Anything that
//! implements [`ActionDetector`] can stand in for it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, Conv3d, Linear, ParameterSet};
use crate::tensor::{Scalar, Tensor};
use crate::types::{LocalizationMap, ModelOutput, VideoClip};

pub(crate) const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub num_classes: usize,
    pub clip_len: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Encoder widths, one per resolution level.
    pub widths: Vec<usize>,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { num_classes: 6, clip_len: 8, height: 32, width: 32, channels: 3, widths: vec![8, 16, 32], seed: 0 }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config("data.num_classes", "need at least 2 classes"));
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            return Err(Error::config("model.widths", "need at least one non-zero width"));
        }
        if self.clip_len < 2 {
            return Err(Error::config("aug.clip_len", "need at least 2 frames"));
        }
        if self.channels != 1 && self.channels != 3 {
            return Err(Error::config("model.channels", "expected 1 or 3"));
        }
        let unit = 1usize << self.widths.len();
        if !self.height.is_multiple_of(unit) || !self.width.is_multiple_of(unit) {
            return Err(Error::config(
                "model.widths",
                format!("height {} and width {} must be divisible by 2^depth = {unit}", self.height, self.width),
            ));
        }
        Ok(())
    }
}

/// Graph nodes produced by one detector forward pass over a batch.
pub struct HeadOutputs<'g, T> {
    /// `N×K`
    pub class_logits: Var<'g, T>,
    /// `N×1×T×H×W`, pre-squash
    pub loc_logits: Var<'g, T>,
    /// `N×1×T×H×W`, in `[0, 1]`
    pub loc_map: Var<'g, T>,
}

/// A detector usable by the trainer.
pub trait ActionDetector {
    fn config(&self) -> &DetectorConfig;

    /// Deterministic initialization from the configured seed.
    fn init_params<T: Scalar>(&self) -> ParameterSet<T>;

    /// Forward pass over `clips` shaped `N×C×T×H×W`.
    fn forward_graph<'g, T: Scalar>(&self, params: &Bound<'g, T>, clips: Var<'g, T>) -> HeadOutputs<'g, T>;

    /// Evaluation-mode forward for a batch of clips.
    fn forward_batch<T: Scalar>(&self, params: &ParameterSet<T>, clips: &[&VideoClip]) -> Result<Vec<ModelOutput>> {
        let cfg = self.config();
        for c in clips {
            let want = [cfg.clip_len, cfg.height, cfg.width, cfg.channels];
            if c.dims() != want {
                return Err(Error::shape(&want, &c.dims()));
            }
        }
        if clips.is_empty() {
            return Ok(Vec::new());
        }
        let g = Graph::new();
        let p = params.bind(&g, false);
        let x = g.constant(clips_to_tensor(clips));
        let out = self.forward_graph(&p, x);
        Ok(outputs_from(&out.class_logits.value(), &out.loc_map.value()))
    }

    fn forward<T: Scalar>(&self, params: &ParameterSet<T>, clip: &VideoClip) -> Result<ModelOutput> {
        Ok(self.forward_batch(params, &[clip])?.remove(0))
    }
}

/// Splits batched head values into per-clip outputs.
pub(crate) fn outputs_from<T: Scalar>(logits: &Tensor<T>, maps: &Tensor<T>) -> Vec<ModelOutput> {
    let n = logits.shape()[0];
    let s = maps.shape();
    let (t, h, w) = (s[2], s[3], s[4]);
    let k = logits.shape()[1];
    (0..n)
        .map(|i| {
            let class_logits = logits.data()[i * k..(i + 1) * k].iter().map(|v| v.as_f64()).collect();
            let vals = maps.data()[i * t * h * w..(i + 1) * t * h * w].iter().map(|v| v.as_f64() as f32).collect();
            ModelOutput { class_logits, loc_map: LocalizationMap::new(t, h, w, vals).expect("squashed map in range") }
        })
        .collect()
}

/// Packs `F×H×W×C` clips into an `N×C×F×H×W` tensor.
pub fn clips_to_tensor<T: Scalar>(clips: &[&VideoClip]) -> Tensor<T> {
    let [f, h, w, c] = clips[0].dims();
    let vol = f * h * w;
    let mut data = vec![T::zero(); clips.len() * c * vol];
    for (n, clip) in clips.iter().enumerate() {
        let src = clip.data();
        let base = n * c * vol;
        for p in 0..vol {
            for ch in 0..c {
                data[base + ch * vol + p] = T::lit(src[p * c + ch] as f64);
            }
        }
    }
    Tensor::from_vec(vec![clips.len(), c, f, h, w], data)
}

/// Packs localization maps into an `N×1×F×H×W` tensor.
pub fn maps_to_tensor<T: Scalar>(maps: &[&LocalizationMap]) -> Tensor<T> {
    let [f, h, w] = maps[0].dims();
    let data = maps.iter().flat_map(|m| m.values().iter().map(|&v| T::lit(v as f64))).collect();
    Tensor::from_vec(vec![maps.len(), 1, f, h, w], data)
}

/// Reference volumetric encoder-decoder detector.
#[derive(Debug, Clone)]
pub struct ConvDetector {
    config: DetectorConfig,
    stem: Conv3d,
    down: Vec<(Conv3d, Conv3d)>,
    up: Vec<Conv3d>,
    loc_head: Conv3d,
    cls_head: Linear,
}

impl ConvDetector {
    pub fn new(config: DetectorConfig) -> Result<Self> {
        config.validate()?;
        let w = &config.widths;
        let k3 = [3, 3, 3];
        let stem = Conv3d::new("enc0", config.channels, w[0], k3, [1, 1, 1]);
        let down = (1..w.len())
            .map(|i| {
                (
                    Conv3d::new(format!("enc{i}.down"), w[i - 1], w[i], k3, [2, 2, 2]),
                    Conv3d::new(format!("enc{i}.conv"), w[i], w[i], k3, [1, 1, 1]),
                )
            })
            .collect();
        // Decoder level i fuses the upsampled level i+1 with skip i. Full resolution
        // uses a pointwise fusion to keep the widest activations cheap.
        let up = (0..w.len() - 1)
            .map(|i| {
                let kernel = if i == 0 { [1, 1, 1] } else { k3 };
                Conv3d::new(format!("dec{i}"), w[i + 1] + w[i], w[i], kernel, [1, 1, 1])
            })
            .collect();
        let loc_head = Conv3d::new("loc_head", w[0], 1, [1, 1, 1], [1, 1, 1]);
        let cls_head = Linear { name: "cls_head".into(), input: *w.last().unwrap(), output: config.num_classes };
        Ok(Self { config, stem, down, up, loc_head, cls_head })
    }

    pub fn depth(&self) -> usize {
        self.config.widths.len()
    }
}

impl ActionDetector for ConvDetector {
    fn config(&self) -> &DetectorConfig {
        &self.config
    }

    fn init_params<T: Scalar>(&self) -> ParameterSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut p = ParameterSet::new();
        self.stem.init(&mut rng, &mut p);
        for (a, b) in &self.down {
            a.init(&mut rng, &mut p);
            b.init(&mut rng, &mut p);
        }
        for c in &self.up {
            c.init(&mut rng, &mut p);
        }
        self.loc_head.init(&mut rng, &mut p);
        // Foreground is sparse; start the map near background.
        let bias = p.get_mut(&self.loc_head.bias_name()).expect("loc bias");
        bias.data_mut()[0] = T::lit(-2.0);
        self.cls_head.init(&mut rng, &mut p);
        p
    }

    fn forward_graph<'g, T: Scalar>(&self, p: &Bound<'g, T>, clips: Var<'g, T>) -> HeadOutputs<'g, T> {
        let act = |v: Var<'g, T>| v.leaky_relu(LEAKY_SLOPE);
        let mut skips = vec![act(self.stem.apply(p, clips))];
        for (down, conv) in &self.down {
            let x = act(down.apply(p, *skips.last().unwrap()));
            skips.push(act(conv.apply(p, x)));
        }
        let bottleneck = *skips.last().unwrap();
        let class_logits = self.cls_head.apply(p, bottleneck.global_avg_pool());
        let mut x = bottleneck;
        for i in (0..self.up.len()).rev() {
            let skip = skips[i];
            let s = skip.shape();
            let up = x.resize3d([s[2], s[3], s[4]]);
            x = act(self.up[i].apply(p, up.concat(skip)));
        }
        let loc_logits = self.loc_head.apply(p, x);
        let loc_map = loc_logits.sigmoid();
        HeadOutputs { class_logits, loc_logits, loc_map }
    }
}
