use rand::Rng;

use super::forward::Forward;
use super::param::{BufferId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{conv_out_dim, RunningStats, Tensor, Var};

/// He-uniform weights: `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`.
pub fn he_uniform<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| T::of(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// Zero-mean uniform weights with standard deviation `std`.
pub fn uniform_std<T: Scalar, R: Rng + ?Sized>(
    shape: &[usize],
    std: f64,
    rng: &mut R,
) -> Tensor<T> {
    let bound = std * 3f64.sqrt();
    let numel: usize = shape.iter().product();
    let data = (0..numel)
        .map(|_| T::of(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::from_parts(shape.to_vec(), data)
}

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub(crate) weight: ParamId,
    pub(crate) bias: Option<ParamId>,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let w = he_uniform(&[out_channels, in_channels, kernel, kernel], fan_in, rng);
        let weight = store.add(format!("{name}.weight"), w);
        let bias = bias.then(|| {
            store.add(
                format!("{name}.bias"),
                Tensor::from_parts(vec![out_channels], vec![T::zero(); out_channels]),
            )
        });
        Conv2d {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight,
            bias,
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = f.param(self.weight);
        let b = self.bias.map(|b| f.param(b));
        f.tape.conv2d(x, w, b, self.stride, self.padding)
    }

    pub fn param_count(&self) -> usize {
        self.out_channels * self.in_channels * self.kernel * self.kernel
            + if self.bias.is_some() {
                self.out_channels
            } else {
                0
            }
    }

    /// Output `[C, H, W]` for an input `[in_channels, H, W]`.
    pub fn out_shape(&self, [c, h, w]: [usize; 3]) -> Result<[usize; 3]> {
        if c != self.in_channels {
            return Err(Error::shape(
                "conv2d",
                format!("input has {c} channels, layer expects {}", self.in_channels),
            ));
        }
        match (
            conv_out_dim(h, self.kernel, self.stride, self.padding),
            conv_out_dim(w, self.kernel, self.stride, self.padding),
        ) {
            (Some(ho), Some(wo)) => Ok([self.out_channels, ho, wo]),
            _ => Err(Error::shape(
                "conv2d",
                format!("kernel does not fit {h}x{w} input"),
            )),
        }
    }

    pub fn weight(&self) -> ParamId {
        self.weight
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub channels: usize,
    pub(crate) gamma: ParamId,
    pub(crate) beta: ParamId,
    pub(crate) stats: BufferId,
}

impl BatchNorm2d {
    /// gamma = 1, beta = 0.
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, channels: usize) -> Self {
        let gamma = store.add(
            format!("{name}.gamma"),
            Tensor::from_parts(vec![channels], vec![T::one(); channels]),
        );
        let beta = store.add(
            format!("{name}.beta"),
            Tensor::from_parts(vec![channels], vec![T::zero(); channels]),
        );
        let stats = store.add_buffer(name, RunningStats::new(channels));
        BatchNorm2d {
            channels,
            gamma,
            beta,
            stats,
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        f.batch_norm(x, self.gamma, self.beta, self.stats)
    }

    pub fn param_count(&self) -> usize {
        2 * self.channels
    }
}

#[derive(Clone, Debug)]
pub struct Dense {
    pub in_features: usize,
    pub out_features: usize,
    pub(crate) weight: ParamId,
    pub(crate) bias: ParamId,
}

impl Dense {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut R,
    ) -> Self {
        let w = he_uniform(&[in_features, out_features], in_features, rng);
        let weight = store.add(format!("{name}.weight"), w);
        let bias = store.add(
            format!("{name}.bias"),
            Tensor::from_parts(vec![out_features], vec![T::zero(); out_features]),
        );
        Dense {
            in_features,
            out_features,
            weight,
            bias,
        }
    }

    pub fn forward<T: Scalar>(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (f.param(self.weight), f.param(self.bias));
        f.tape.dense(x, w, Some(b))
    }

    pub fn param_count(&self) -> usize {
        self.in_features * self.out_features + self.out_features
    }
}

/// Max-pool output shape without padding.
pub fn pool_out_shape([c, h, w]: [usize; 3], k: usize, stride: usize) -> Result<[usize; 3]> {
    match (conv_out_dim(h, k, stride, 0), conv_out_dim(w, k, stride, 0)) {
        (Some(ho), Some(wo)) => Ok([c, ho, wo]),
        _ => Err(Error::shape(
            "maxpool2d",
            format!("window {k} exceeds {h}x{w}"),
        )),
    }
}
