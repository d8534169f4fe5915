//! ResNet-50: conv 7×7/2 (64) → BN → ReLU → maxpool 3/2 → bottleneck stages
//! [3, 4, 6, 3] → global average pool → dense.

use rand::Rng;

use super::bottleneck::{Bottleneck, BottleneckConfig};
use super::forward::Forward;
use super::layers::{pool_out_shape, BatchNorm2d, Conv2d, Dense};
use super::model::LayerSummary;
use super::param::ParamStore;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Var;

pub const STEM_CHANNELS: usize = 64;
pub const STAGE_DEPTHS: [usize; 4] = [3, 4, 6, 3];
pub const STAGE_OUT: [usize; 4] = [256, 512, 1024, 2048];

/// The sixteen block configurations, stage by stage.
pub fn resnet50_blocks() -> Vec<BottleneckConfig> {
    let mut blocks = Vec::new();
    let mut in_c = STEM_CHANNELS;
    for (stage, (&depth, &out)) in STAGE_DEPTHS.iter().zip(&STAGE_OUT).enumerate() {
        for i in 0..depth {
            let first = i == 0;
            blocks.push(BottleneckConfig {
                in_channels: in_c,
                mid_channels: out / 4,
                out_channels: out,
                stride: if first && stage > 0 { 2 } else { 1 },
                projection: first,
            });
            in_c = out;
        }
    }
    blocks
}

#[derive(Clone, Debug)]
pub struct ResNet {
    stem: Conv2d,
    stem_bn: BatchNorm2d,
    blocks: Vec<(String, Bottleneck)>,
    fc: Dense,
}

impl ResNet {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        in_channels: usize,
        blocks: &[BottleneckConfig],
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let stem = Conv2d::new(
            store,
            "conv1",
            in_channels,
            STEM_CHANNELS,
            7,
            2,
            3,
            false,
            rng,
        );
        let stem_bn = BatchNorm2d::new(store, "bn1", STEM_CHANNELS);
        let names = block_names(blocks.len());
        let blocks = blocks
            .iter()
            .zip(names)
            .map(|(cfg, name)| Ok((name.clone(), Bottleneck::new(store, &name, *cfg, rng)?)))
            .collect::<Result<Vec<_>>>()?;
        let width = blocks
            .last()
            .map_or(STEM_CHANNELS, |(_, b)| b.config.out_channels);
        let fc = Dense::new(store, "fc", width, num_classes, rng);
        Ok(ResNet {
            stem,
            stem_bn,
            blocks,
            fc,
        })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let y = self.stem.forward(f, x)?;
        let y = self.stem_bn.forward(f, y)?;
        let y = f.tape.relu(y);
        let mut y = f.tape.maxpool2d(y, 3, 2)?;
        for (_, block) in &self.blocks {
            y = block.forward(f, y)?;
        }
        let y = f.tape.global_avg_pool(y)?;
        self.fc.forward(f, y)
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn summary(&self, input: [usize; 3]) -> Result<Vec<LayerSummary>> {
        let mut rows = Vec::new();
        let mut shape = self.stem.out_shape(input)?;
        rows.push(LayerSummary::new(
            "conv1+bn1",
            &shape,
            self.stem.param_count() + self.stem_bn.param_count(),
        ));
        shape = pool_out_shape(shape, 3, 2)?;
        rows.push(LayerSummary::new("maxpool", &shape, 0));
        for (name, block) in &self.blocks {
            let cfg = block.config;
            let h = (shape[1] - 1) / cfg.stride + 1;
            let w = (shape[2] - 1) / cfg.stride + 1;
            shape = [cfg.out_channels, h, w];
            rows.push(LayerSummary::new(name, &shape, block.param_count()));
        }
        rows.push(LayerSummary::new("global_avg_pool", &[shape[0]], 0));
        rows.push(LayerSummary::new(
            "fc",
            &[self.fc.out_features],
            self.fc.param_count(),
        ));
        Ok(rows)
    }
}

/// `layer{stage}.{index}` names following the stage depths.
fn block_names(count: usize) -> Vec<String> {
    let mut names = Vec::with_capacity(count);
    'outer: for (stage, &depth) in STAGE_DEPTHS.iter().enumerate() {
        for i in 0..depth {
            if names.len() == count {
                break 'outer;
            }
            names.push(format!("layer{}.{}", stage + 1, i));
        }
    }
    while names.len() < count {
        names.push(format!("block{}", names.len()));
    }
    names
}
