//! Tensor-Train compressed recurrent networks.

pub mod bench;
pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod optim;
pub mod params;
pub mod rnn_cells;
pub mod tasks;
pub mod tensor_core;
pub mod train;
pub mod tt_format;
pub mod tt_linear;

pub use error::{Error, Result};
pub use params::Parameterized;
pub use tensor_core::{linear_to_multi, multi_to_linear, ModeDims, MultiIndex};
pub use tt_format::{glorot_init, glorot_sigma, tt_param_count, TtMatrix, TtSpec};
pub use tt_linear::{LinearGrads, LinearMap, WeightGrad};
pub use rnn_cells::{bptt, unroll, Cell, CellDescription, CellGrads, CellKind, GruParams, Parameterization, SrnnParams};
pub use optim::{clip_global_norm, Adam, AdamConfig};
pub use config::TrainConfig;
pub use tasks::{count_cell_params, ModelReport, SequenceModel};
