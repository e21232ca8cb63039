pub mod checkpoint;
pub mod config;
pub mod layers;
pub mod model;
pub mod params;
pub mod plain;

pub use config::{Activation, ModelConfig, ModelMode, Nonlinearity, NormOrder};
pub use layers::ChannelTensor;
pub use model::{Forward, Model};
pub use params::{ModelParams, Param, ParamId};
