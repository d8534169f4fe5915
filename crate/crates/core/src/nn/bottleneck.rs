//! ResNet bottleneck block: 1×1 reduce, 3×3 (carrying the stride), 1×1
//! expand, each followed by batch norm, added to an identity or projected
//! shortcut and passed through ReLU.

use rand::Rng;

use super::forward::Forward;
use super::layers::{BatchNorm2d, Conv2d};
use super::param::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BottleneckConfig {
    pub in_channels: usize,
    pub mid_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub projection: bool,
}

impl BottleneckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.mid_channels == 0 || self.out_channels == 0 {
            return Err(Error::Config(format!(
                "bottleneck dims must be positive: {self:?}"
            )));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::Config(format!(
                "bottleneck stride {} not in {{1, 2}}",
                self.stride
            )));
        }
        if !self.projection && (self.in_channels != self.out_channels || self.stride != 1) {
            return Err(Error::shape(
                "bottleneck",
                format!(
                    "identity shortcut cannot map {} channels at stride {} onto {} channels",
                    self.in_channels, self.stride, self.out_channels
                ),
            ));
        }
        Ok(())
    }

    /// Convolution weights only, no normalization terms.
    pub fn conv_weight_count(&self) -> usize {
        let (i, m, o) = (self.in_channels, self.mid_channels, self.out_channels);
        i * m + m * m * 9 + m * o + if self.projection { i * o } else { 0 }
    }

    /// Convolution weights plus batch-norm gamma and beta.
    pub fn param_count(&self) -> usize {
        let bn = 2 * (2 * self.mid_channels + self.out_channels)
            + if self.projection {
                2 * self.out_channels
            } else {
                0
            };
        self.conv_weight_count() + bn
    }
}

#[derive(Clone, Debug)]
pub struct Bottleneck {
    pub config: BottleneckConfig,
    conv1: Conv2d,
    bn1: BatchNorm2d,
    conv2: Conv2d,
    bn2: BatchNorm2d,
    conv3: Conv2d,
    bn3: BatchNorm2d,
    shortcut: Option<(Conv2d, BatchNorm2d)>,
}

impl Bottleneck {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: BottleneckConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let BottleneckConfig {
            in_channels: i,
            mid_channels: m,
            out_channels: o,
            stride,
            projection,
        } = config;
        let conv1 = Conv2d::new(store, &format!("{name}.conv1"), i, m, 1, 1, 0, false, rng);
        let bn1 = BatchNorm2d::new(store, &format!("{name}.bn1"), m);
        let conv2 = Conv2d::new(
            store,
            &format!("{name}.conv2"),
            m,
            m,
            3,
            stride,
            1,
            false,
            rng,
        );
        let bn2 = BatchNorm2d::new(store, &format!("{name}.bn2"), m);
        let conv3 = Conv2d::new(store, &format!("{name}.conv3"), m, o, 1, 1, 0, false, rng);
        let bn3 = BatchNorm2d::new(store, &format!("{name}.bn3"), o);
        let shortcut = projection.then(|| {
            (
                Conv2d::new(
                    store,
                    &format!("{name}.downsample.conv"),
                    i,
                    o,
                    1,
                    stride,
                    0,
                    false,
                    rng,
                ),
                BatchNorm2d::new(store, &format!("{name}.downsample.bn"), o),
            )
        });
        Ok(Bottleneck {
            config,
            conv1,
            bn1,
            conv2,
            bn2,
            conv3,
            bn3,
            shortcut,
        })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let c = f.tape.shape(x).get(1).copied().unwrap_or(0);
        if c != self.config.in_channels {
            return Err(Error::shape(
                "bottleneck",
                format!(
                    "input has {c} channels, block expects {}",
                    self.config.in_channels
                ),
            ));
        }
        let y = self.conv1.forward(f, x)?;
        let y = self.bn1.forward(f, y)?;
        let y = f.tape.relu(y);
        let y = self.conv2.forward(f, y)?;
        let y = self.bn2.forward(f, y)?;
        let y = f.tape.relu(y);
        let y = self.conv3.forward(f, y)?;
        let branch = self.bn3.forward(f, y)?;
        let short = match &self.shortcut {
            Some((conv, bn)) => {
                let s = conv.forward(f, x)?;
                bn.forward(f, s)?
            }
            None => x,
        };
        let sum = f.tape.add(branch, short)?;
        Ok(f.tape.relu(sum))
    }

    pub fn param_count(&self) -> usize {
        let mut n = self.conv1.param_count()
            + self.bn1.param_count()
            + self.conv2.param_count()
            + self.bn2.param_count()
            + self.conv3.param_count()
            + self.bn3.param_count();
        if let Some((c, b)) = &self.shortcut {
            n += c.param_count() + b.param_count();
        }
        n
    }

    /// Convolution weight tensors of the residual branch (not the shortcut).
    pub fn branch_weights(&self) -> [super::ParamId; 3] {
        [
            self.conv1.weight(),
            self.conv2.weight(),
            self.conv3.weight(),
        ]
    }
}
