//! VGG-like feature extractors for PAN and LR-HSI.
//!
//! Three stages of [conv3x3 -> ReLU -> conv3x3 -> ReLU] with taps after
//! each stage; 2x2 average pooling followed by a channel-widening conv
//! halves the spatial size between stages. The
//! taps land at full, half, and quarter resolution (scales x4, x2, x1
//! relative to the LR cube's x4 target).

use rand::Rng;

use super::layers::Conv2d;
use crate::tensor::{Tensor, TensorError};

/// Per-scale feature maps; `x4` is at full input resolution.
pub struct FeatureTaps {
    pub x4: Tensor,
    pub x2: Tensor,
    pub x1: Tensor,
}

impl FeatureTaps {
    pub fn at_scale(&self, scale_idx: usize) -> &Tensor {
        match scale_idx {
            0 => &self.x1,
            1 => &self.x2,
            _ => &self.x4,
        }
    }
}

pub struct FeatureExtractor {
    stages: Vec<(Conv2d, Conv2d)>,
    downs: Vec<Conv2d>,
}

impl FeatureExtractor {
    pub fn new(rng: &mut impl Rng, in_channels: usize, channels: [usize; 3]) -> FeatureExtractor {
        let mut stages = Vec::new();
        let mut downs = Vec::new();
        let mut prev = in_channels;
        for (i, &ch) in channels.iter().enumerate() {
            stages.push((
                Conv2d::new(rng, prev, ch, 3, 1, 1),
                Conv2d::new(rng, ch, ch, 3, 1, 1),
            ));
            if i + 1 < channels.len() {
                downs.push(Conv2d::new(rng, ch, channels[i + 1], 3, 1, 1));
                prev = channels[i + 1];
            }
        }
        FeatureExtractor { stages, downs }
    }

    pub fn forward(&self, x: &Tensor) -> Result<FeatureTaps, TensorError> {
        let mut taps = Vec::with_capacity(3);
        let mut h = x.clone();
        for (i, (c1, c2)) in self.stages.iter().enumerate() {
            let t = c2.forward(&c1.forward(&h)?.relu())?.relu();
            taps.push(t.clone());
            if i < self.downs.len() {
                h = self.downs[i].forward(&t.avg_pool2()?)?.relu();
            }
        }
        let x1 = taps.pop().unwrap();
        let x2 = taps.pop().unwrap();
        let x4 = taps.pop().unwrap();
        Ok(FeatureTaps { x4, x2, x1 })
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<(String, Tensor)>) {
        for (i, (c1, c2)) in self.stages.iter().enumerate() {
            c1.collect_params(&format!("{prefix}.stage{i}.conv1"), out);
            c2.collect_params(&format!("{prefix}.stage{i}.conv2"), out);
        }
        for (i, d) in self.downs.iter().enumerate() {
            d.collect_params(&format!("{prefix}.down{i}"), out);
        }
    }
}
