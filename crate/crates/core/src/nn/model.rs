use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::bottleneck::BottleneckConfig;
use super::fire::FireConfig;
use super::forward::{Forward, Mode};
use super::param::ParamStore;
use super::resnet::{resnet50_blocks, ResNet, STEM_CHANNELS as RESNET_STEM};
use super::squeezenet::{SqueezeNet, FIRES, STEM_CHANNELS as SQUEEZE_STEM};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{softmax_rows, Tensor, Var};

pub const INPUT_SHAPE: [usize; 3] = [3, 64, 64];
pub const NUM_CLASSES: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Architecture {
    SqueezeNet,
    /// SqueezeNet with identity shortcuts around fire3/5/7/9.
    SqueezeNetBypass,
    ResNet50,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [
        Architecture::SqueezeNet,
        Architecture::SqueezeNetBypass,
        Architecture::ResNet50,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Architecture::SqueezeNet => "squeezenet",
            Architecture::SqueezeNetBypass => "squeezenet-bypass",
            Architecture::ResNet50 => "resnet50",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Architecture::ALL
            .into_iter()
            .find(|a| a.id() == s)
            .ok_or_else(|| {
                let valid: Vec<&str> = Architecture::ALL.iter().map(|a| a.id()).collect();
                Error::Config(format!(
                    "unknown architecture {s:?}; valid: {}",
                    valid.join(", ")
                ))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Blocks {
    Fire(Vec<FireConfig>),
    Bottleneck(Vec<BottleneckConfig>),
}

/// Declarative description of a network: what to build, not the weights.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelSpec {
    pub arch: Architecture,
    /// `[C, H, W]`.
    pub input_shape: [usize; 3],
    pub num_classes: usize,
    pub blocks: Blocks,
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let blocks = match arch {
            Architecture::SqueezeNet | Architecture::SqueezeNetBypass => {
                Blocks::Fire(FIRES.to_vec())
            }
            Architecture::ResNet50 => Blocks::Bottleneck(resnet50_blocks()),
        };
        ModelSpec {
            arch,
            input_shape: INPUT_SHAPE,
            num_classes: NUM_CLASSES,
            blocks,
            seed,
        }
    }

    pub fn squeezenet(seed: u64) -> Self {
        ModelSpec::new(Architecture::SqueezeNet, seed)
    }

    pub fn resnet50(seed: u64) -> Self {
        ModelSpec::new(Architecture::ResNet50, seed)
    }

    /// Checks that block channel counts chain from the stem to the head.
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("need at least two classes".into()));
        }
        let mut channels = match (&self.blocks, self.arch) {
            (Blocks::Fire(_), Architecture::SqueezeNet | Architecture::SqueezeNetBypass) => {
                SQUEEZE_STEM
            }
            (Blocks::Bottleneck(_), Architecture::ResNet50) => RESNET_STEM,
            _ => {
                return Err(Error::Config(format!(
                    "block kind does not match architecture {}",
                    self.arch
                )))
            }
        };
        match &self.blocks {
            Blocks::Fire(fires) => {
                for (i, f) in fires.iter().enumerate() {
                    f.validate()?;
                    if f.in_channels != channels {
                        return Err(Error::Config(format!(
                            "fire{} expects {} channels but receives {channels}",
                            i + 2,
                            f.in_channels
                        )));
                    }
                    channels = f.out_channels();
                }
            }
            Blocks::Bottleneck(blocks) => {
                for (i, b) in blocks.iter().enumerate() {
                    b.validate()?;
                    if b.in_channels != channels {
                        return Err(Error::Config(format!(
                            "block {i} expects {} channels but receives {channels}",
                            b.in_channels
                        )));
                    }
                    channels = b.out_channels;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerSummary {
    pub name: String,
    pub output_shape: Vec<usize>,
    pub params: usize,
}

impl LayerSummary {
    pub(crate) fn new(name: &str, shape: &[usize], params: usize) -> Self {
        LayerSummary {
            name: name.to_string(),
            output_shape: shape.to_vec(),
            params,
        }
    }
}

#[derive(Clone, Debug)]
enum Network {
    SqueezeNet(SqueezeNet),
    ResNet(ResNet),
}

/// A materialized network: topology plus its parameters.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    spec: ModelSpec,
    store: ParamStore<T>,
    net: Network,
}

impl<T: Scalar> Model<T> {
    /// Builds and initializes the network; the same spec always yields
    /// bitwise-identical parameters.
    pub fn from_spec(spec: &ModelSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut store = ParamStore::new();
        let in_c = spec.input_shape[0];
        let net = match &spec.blocks {
            Blocks::Fire(fires) => Network::SqueezeNet(SqueezeNet::new(
                &mut store,
                in_c,
                fires,
                spec.num_classes,
                spec.arch == Architecture::SqueezeNetBypass,
                &mut rng,
            )?),
            Blocks::Bottleneck(blocks) => Network::ResNet(ResNet::new(
                &mut store,
                in_c,
                blocks,
                spec.num_classes,
                &mut rng,
            )?),
        };
        Ok(Model {
            spec: spec.clone(),
            store,
            net,
        })
    }

    pub fn build(arch: Architecture, seed: u64) -> Result<Self> {
        Model::from_spec(&ModelSpec::new(arch, seed))
    }

    pub fn arch(&self) -> Architecture {
        self.spec.arch
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn store(&self) -> &ParamStore<T> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.param_count()
    }

    /// `[N, C, H, W]` image batch to `[N, classes]` logits.
    pub fn forward(&self, f: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let shape = f.tape.shape(x);
        if shape.len() != 4 || shape[1..] != self.spec.input_shape {
            return Err(Error::shape(
                "model",
                format!(
                    "expected input [N, {}, {}, {}], got {shape:?}",
                    self.spec.input_shape[0], self.spec.input_shape[1], self.spec.input_shape[2]
                ),
            ));
        }
        match &self.net {
            Network::SqueezeNet(n) => n.forward(f, x),
            Network::ResNet(n) => n.forward(f, x),
        }
    }

    /// Evaluation-mode logits without gradient tracking.
    pub fn logits(&self, batch: Tensor<T>) -> Result<Tensor<T>> {
        let mut f = Forward::new(&self.store, Mode::Eval, 0);
        let x = f.input(batch);
        let y = self.forward(&mut f, x)?;
        Ok(f.tape.value(y).clone())
    }

    /// Evaluation-mode class probabilities, `[N, classes]`.
    pub fn predict_proba(&self, batch: Tensor<T>) -> Result<Tensor<T>> {
        let logits = self.logits(batch)?;
        let k = logits.shape()[1];
        let probs = softmax_rows(logits.data(), k);
        Tensor::new(logits.shape(), probs)
    }

    /// Per-layer output shapes (for the configured input) and parameter
    /// counts.
    pub fn summary(&self) -> Result<Vec<LayerSummary>> {
        match &self.net {
            Network::SqueezeNet(n) => n.summary(self.spec.input_shape),
            Network::ResNet(n) => n.summary(self.spec.input_shape),
        }
    }

    pub fn bottleneck_count(&self) -> usize {
        match &self.net {
            Network::SqueezeNet(_) => 0,
            Network::ResNet(n) => n.block_count(),
        }
    }
}

pub fn build_squeezenet<T: Scalar>(seed: u64) -> Result<Model<T>> {
    Model::build(Architecture::SqueezeNet, seed)
}

pub fn build_resnet50<T: Scalar>(seed: u64) -> Result<Model<T>> {
    Model::build(Architecture::ResNet50, seed)
}

pub fn param_count<T: Scalar>(model: &Model<T>) -> usize {
    model.param_count()
}
