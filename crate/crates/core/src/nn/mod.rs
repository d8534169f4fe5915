//! Layers and the two network builders.

mod bottleneck;
mod fire;
mod forward;
mod layers;
mod model;
mod param;
mod resnet;
mod squeezenet;

pub use bottleneck::{Bottleneck, BottleneckConfig};
pub use fire::{Fire, FireConfig};
pub use forward::{Forward, Mode};
pub use layers::{he_uniform, BatchNorm2d, Conv2d, Dense};
pub use model::{
    build_resnet50, build_squeezenet, param_count, Architecture, Blocks, LayerSummary, Model,
    ModelSpec, INPUT_SHAPE, NUM_CLASSES,
};
pub use param::{Buffer, BufferId, Param, ParamId, ParamStore};
pub use resnet::{resnet50_blocks, ResNet, STAGE_DEPTHS};
pub use squeezenet::{SqueezeNet, FIRES};
