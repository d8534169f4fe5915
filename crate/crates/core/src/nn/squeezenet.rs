//! SqueezeNet v1.0 with a two-class 1×1 classifier.
//!
//! conv 7×7/2 (96) → maxpool 3/2 → fire2..fire4 → maxpool 3/2 → fire5..fire8
//! → maxpool 3/2 → fire9 → dropout 0.5 → conv 1×1 (classes) → global average
//! pool. The optional simple bypass adds identity shortcuts around fire3,
//! fire5, fire7 and fire9.

use rand::Rng;

use super::fire::{Fire, FireConfig};
use super::forward::Forward;
use super::layers::{pool_out_shape, uniform_std, Conv2d};
use super::model::LayerSummary;
use super::param::ParamStore;
use crate::error::Result;
use crate::scalar::Scalar;
use crate::tensor::Var;

pub const STEM_CHANNELS: usize = 96;
pub const DROPOUT: f64 = 0.5;
/// Standard deviation of the final 1x1 convolution weights.
pub const CLASSIFIER_STD: f64 = 0.01;

/// fire2 through fire9.
pub const FIRES: [FireConfig; 8] = [
    FireConfig::new(96, 16, 64, 64),
    FireConfig::new(128, 16, 64, 64),
    FireConfig::new(128, 32, 128, 128),
    FireConfig::new(256, 32, 128, 128),
    FireConfig::new(256, 48, 192, 192),
    FireConfig::new(384, 48, 192, 192),
    FireConfig::new(384, 64, 256, 256),
    FireConfig::new(512, 64, 256, 256),
];

/// Fires (by position in [`FIRES`]) followed by a max pool.
const POOL_AFTER: [usize; 2] = [2, 6];
/// Fires (by position) wrapped by the simple bypass.
const BYPASSED: [usize; 4] = [1, 3, 5, 7];

#[derive(Clone, Debug)]
pub struct SqueezeNet {
    stem: Conv2d,
    fires: Vec<Fire>,
    classifier: Conv2d,
    simple_bypass: bool,
}

impl SqueezeNet {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        in_channels: usize,
        fires: &[FireConfig],
        num_classes: usize,
        simple_bypass: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let stem = Conv2d::new(
            store,
            "conv1",
            in_channels,
            STEM_CHANNELS,
            7,
            2,
            0,
            true,
            rng,
        );
        let fires = fires
            .iter()
            .enumerate()
            .map(|(i, cfg)| Fire::new(store, &format!("fire{}", i + 2), *cfg, rng))
            .collect::<Result<Vec<_>>>()?;
        let last = fires
            .last()
            .map_or(STEM_CHANNELS, |f| f.config.out_channels());
        let classifier = Conv2d::new(store, "conv10", last, num_classes, 1, 1, 0, true, rng);
        // small classifier weights keep the initial loss near ln(classes)
        let w = uniform_std::<T, R>(&[num_classes, last, 1, 1], CLASSIFIER_STD, rng);
        store
            .param_mut(classifier.weight)
            .value_mut()
            .copy_from_slice(w.data());
        Ok(SqueezeNet {
            stem,
            fires,
            classifier,
            simple_bypass,
        })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let y = self.stem.forward(f, x)?;
        let y = f.tape.relu(y);
        let mut y = f.tape.maxpool2d(y, 3, 2)?;
        for (i, fire) in self.fires.iter().enumerate() {
            let out = fire.forward(f, y)?;
            y = if self.simple_bypass && BYPASSED.contains(&i) {
                f.tape.add(out, y)?
            } else {
                out
            };
            if POOL_AFTER.contains(&i) {
                y = f.tape.maxpool2d(y, 3, 2)?;
            }
        }
        let y = f.dropout(y, DROPOUT)?;
        let y = self.classifier.forward(f, y)?;
        f.tape.global_avg_pool(y)
    }

    pub fn summary(&self, input: [usize; 3]) -> Result<Vec<LayerSummary>> {
        let mut rows = Vec::new();
        let mut shape = self.stem.out_shape(input)?;
        rows.push(LayerSummary::new("conv1", &shape, self.stem.param_count()));
        shape = pool_out_shape(shape, 3, 2)?;
        rows.push(LayerSummary::new("maxpool1", &shape, 0));
        for (i, fire) in self.fires.iter().enumerate() {
            shape = [fire.config.out_channels(), shape[1], shape[2]];
            let name = if self.simple_bypass && BYPASSED.contains(&i) {
                format!("fire{} (+bypass)", i + 2)
            } else {
                format!("fire{}", i + 2)
            };
            rows.push(LayerSummary::new(&name, &shape, fire.param_count()));
            if POOL_AFTER.contains(&i) {
                shape = pool_out_shape(shape, 3, 2)?;
                rows.push(LayerSummary::new(&format!("maxpool{}", i + 2), &shape, 0));
            }
        }
        rows.push(LayerSummary::new("dropout", &shape, 0));
        shape = self.classifier.out_shape(shape)?;
        rows.push(LayerSummary::new(
            "conv10",
            &shape,
            self.classifier.param_count(),
        ));
        rows.push(LayerSummary::new("global_avg_pool", &[shape[0]], 0));
        Ok(rows)
    }
}
