//! Error Recovery network: a class-agnostic U-shaped volumetric encoder-decoder that
//! maps a raw localization map to a refined one.
//!
//! It sees nothing but the map. Callers must hand it a detached map so that
//! refinement losses never reach the base detector.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::detector::{maps_to_tensor, LEAKY_SLOPE};
use crate::error::{Error, Result};
use crate::params::{Bound, Conv3d, ParameterSet};
use crate::tensor::Scalar;
use crate::types::LocalizationMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EoRVariant {
    /// 3×3×3 kernels, 2×2×2 pooling.
    Volumetric,
    /// 1×3×3 kernels, 1×2×2 pooling: frames are refined independently.
    Planar,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EoRConfig {
    pub channels: Vec<usize>,
    pub variant: EoRVariant,
    /// Zero-pad inputs whose extents are not multiples of the pooling factor.
    pub pad_inputs: bool,
    pub seed: u64,
}

impl Default for EoRConfig {
    fn default() -> Self {
        Self { channels: vec![16, 32, 64, 128], variant: EoRVariant::Volumetric, pad_inputs: true, seed: 0 }
    }
}

impl EoRConfig {
    pub fn depth(&self) -> usize {
        self.channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.contains(&0) {
            return Err(Error::config("eor.channels", "need at least one non-zero width"));
        }
        Ok(())
    }
}

/// Two stacked convolutions with activations.
#[derive(Debug, Clone)]
struct DoubleConv {
    first: Conv3d,
    second: Conv3d,
}

impl DoubleConv {
    fn new(name: &str, cin: usize, mid: usize, cout: usize, kernel: [usize; 3]) -> Self {
        Self {
            first: Conv3d::new(format!("{name}.conv1"), cin, mid, kernel, [1, 1, 1]),
            second: Conv3d::new(format!("{name}.conv2"), mid, cout, kernel, [1, 1, 1]),
        }
    }

    fn apply<'g, T: Scalar>(&self, p: &Bound<'g, T>, x: Var<'g, T>) -> Var<'g, T> {
        let x = self.first.apply(p, x).leaky_relu(LEAKY_SLOPE);
        self.second.apply(p, x).leaky_relu(LEAKY_SLOPE)
    }
}

/// Refinement outputs on the graph.
pub struct Refined<'g, T> {
    pub logits: Var<'g, T>,
    pub map: Var<'g, T>,
}

#[derive(Debug, Clone)]
pub struct ErrorRecovery {
    config: EoRConfig,
    encoders: Vec<DoubleConv>,
    decoders: Vec<DoubleConv>,
    head: Conv3d,
    kernel: [usize; 3],
    pool: [usize; 3],
}

impl ErrorRecovery {
    pub fn new(config: EoRConfig) -> Result<Self> {
        config.validate()?;
        let (kernel, pool) = match config.variant {
            EoRVariant::Volumetric => ([3, 3, 3], [2, 2, 2]),
            EoRVariant::Planar => ([1, 3, 3], [1, 2, 2]),
        };
        let ch = &config.channels;
        let encoders = ch
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let cin = if i == 0 { 1 } else { ch[i - 1] };
                DoubleConv::new(&format!("enc{i}"), cin, (c / 2).max(cin), c, kernel)
            })
            .collect();
        let decoders = (0..ch.len() - 1)
            .map(|i| DoubleConv::new(&format!("dec{i}"), ch[i + 1] + ch[i], ch[i], ch[i], kernel))
            .collect();
        let head = Conv3d::new("head", ch[0], 1, [1, 1, 1], [1, 1, 1]);
        Ok(Self { config, encoders, decoders, head, kernel, pool })
    }

    pub fn config(&self) -> &EoRConfig {
        &self.config
    }

    /// Extent multiple every input axis must satisfy before pooling.
    pub fn required_multiple(&self) -> [usize; 3] {
        let levels = self.config.depth() as u32 - 1;
        self.pool.map(|p| p.pow(levels))
    }

    pub fn kernel(&self) -> [usize; 3] {
        self.kernel
    }

    pub fn init_params<T: Scalar>(&self) -> ParameterSet<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        let mut p = ParameterSet::new();
        for block in self.encoders.iter().chain(&self.decoders) {
            block.first.init(&mut rng, &mut p);
            block.second.init(&mut rng, &mut p);
        }
        self.head.init(&mut rng, &mut p);
        p
    }

    /// Refines `raw` shaped `N×1×T×H×W`.
    pub fn forward_graph<'g, T: Scalar>(&self, p: &Bound<'g, T>, raw: Var<'g, T>) -> Result<Refined<'g, T>> {
        let s = raw.shape();
        if s.len() != 5 || s[1] != 1 {
            return Err(Error::InvalidInput(format!("error recovery expects N×1×T×H×W input, got {s:?}")));
        }
        let dims = [s[2], s[3], s[4]];
        let mult = self.required_multiple();
        let (before, after) = padding_for(dims, mult);
        let needs_pad = before.iter().chain(&after).any(|&v| v > 0);
        if needs_pad && !self.config.pad_inputs {
            return Err(Error::InvalidInput(format!(
                "map extents {dims:?} must be multiples of {mult:?}; zero-pad to {:?} or enable eor.pad_inputs",
                [0, 1, 2].map(|a| dims[a] + before[a] + after[a])
            )));
        }
        let x = if needs_pad { raw.pad3d(before, after) } else { raw };
        let mut skips = Vec::with_capacity(self.encoders.len());
        let mut h = x;
        for (i, enc) in self.encoders.iter().enumerate() {
            if i > 0 {
                h = h.max_pool3d(self.pool);
            }
            h = enc.apply(p, h);
            skips.push(h);
        }
        for i in (0..self.decoders.len()).rev() {
            let skip = skips[i];
            let ss = skip.shape();
            let up = h.resize3d([ss[2], ss[3], ss[4]]);
            h = self.decoders[i].apply(p, up.concat(skip));
        }
        let mut logits = self.head.apply(p, h);
        if needs_pad {
            logits = logits.crop3d(before, dims);
        }
        Ok(Refined { logits, map: logits.sigmoid() })
    }

    /// Evaluation-mode refinement of a single map.
    pub fn forward<T: Scalar>(&self, params: &ParameterSet<T>, raw: &LocalizationMap) -> Result<LocalizationMap> {
        let g = Graph::new();
        let p = params.bind(&g, false);
        let x = g.constant(maps_to_tensor::<T>(&[raw]));
        let out = self.forward_graph(&p, x)?;
        let vals = out.map.value().data().iter().map(|v| v.as_f64() as f32).collect();
        let [t, h, w] = raw.dims();
        LocalizationMap::new(t, h, w, vals)
    }
}

fn padding_for(dims: [usize; 3], mult: [usize; 3]) -> ([usize; 3], [usize; 3]) {
    let mut before = [0; 3];
    let mut after = [0; 3];
    for a in 0..3 {
        let total = dims[a].div_ceil(mult[a]) * mult[a] - dims[a];
        before[a] = total / 2;
        after[a] = total - before[a];
    }
    (before, after)
}
