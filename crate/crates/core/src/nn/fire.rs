//! SqueezeNet fire module: a 1×1 squeeze convolution feeding parallel 1×1
//! and 3×3 expand convolutions whose outputs are concatenated.

use rand::Rng;

use super::forward::Forward;
use super::layers::Conv2d;
use super::param::ParamStore;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Var;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FireConfig {
    pub in_channels: usize,
    pub squeeze_1x1: usize,
    pub expand_1x1: usize,
    pub expand_3x3: usize,
}

impl FireConfig {
    pub const fn new(in_channels: usize, squeeze: usize, e1: usize, e3: usize) -> Self {
        FireConfig {
            in_channels,
            squeeze_1x1: squeeze,
            expand_1x1: e1,
            expand_3x3: e3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.in_channels,
            self.squeeze_1x1,
            self.expand_1x1,
            self.expand_3x3,
        ];
        if dims.contains(&0) {
            return Err(Error::Config(format!(
                "fire module dims must be positive: {self:?}"
            )));
        }
        if self.squeeze_1x1 >= self.out_channels() {
            return Err(Error::Config(format!(
                "squeeze width {} must be below expand width {}",
                self.squeeze_1x1,
                self.out_channels()
            )));
        }
        Ok(())
    }

    pub fn out_channels(&self) -> usize {
        self.expand_1x1 + self.expand_3x3
    }

    /// Weights and biases of the three convolutions.
    pub fn param_count(&self) -> usize {
        let s = self.squeeze_1x1;
        (self.in_channels * s + s)
            + (s * self.expand_1x1 + self.expand_1x1)
            + (s * 9 * self.expand_3x3 + self.expand_3x3)
    }
}

#[derive(Clone, Debug)]
pub struct Fire {
    pub config: FireConfig,
    squeeze: Conv2d,
    expand1: Conv2d,
    expand3: Conv2d,
}

impl Fire {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        config: FireConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let FireConfig {
            in_channels,
            squeeze_1x1: s,
            expand_1x1: e1,
            expand_3x3: e3,
        } = config;
        Ok(Fire {
            config,
            squeeze: Conv2d::new(
                store,
                &format!("{name}.squeeze1x1"),
                in_channels,
                s,
                1,
                1,
                0,
                true,
                rng,
            ),
            expand1: Conv2d::new(
                store,
                &format!("{name}.expand1x1"),
                s,
                e1,
                1,
                1,
                0,
                true,
                rng,
            ),
            expand3: Conv2d::new(
                store,
                &format!("{name}.expand3x3"),
                s,
                e3,
                3,
                1,
                1,
                true,
                rng,
            ),
        })
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let c = f.tape.shape(x).get(1).copied().unwrap_or(0);
        if c != self.config.in_channels {
            return Err(Error::shape(
                "fire",
                format!(
                    "input has {c} channels, module expects {}",
                    self.config.in_channels
                ),
            ));
        }
        let s = self.squeeze.forward(f, x)?;
        let s = f.tape.relu(s);
        let a = self.expand1.forward(f, s)?;
        let a = f.tape.relu(a);
        let b = self.expand3.forward(f, s)?;
        let b = f.tape.relu(b);
        f.tape.concat_channels(a, b)
    }

    pub fn param_count(&self) -> usize {
        self.squeeze.param_count() + self.expand1.param_count() + self.expand3.param_count()
    }
}
