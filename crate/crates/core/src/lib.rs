//! STDC networks for real-time semantic segmentation.
//!
//! * [`ops`]: tensor operators (convolution, batch norm, pooling, resize)
//! * [`backbone`]: STDC modules and the STDC1/STDC2 networks
//! * [`seg`]: the STDC-Seg decoder
//! * [`detail`]: detail ground-truth generation and the detail head
//! * [`losses`]: dice + BCE detail loss with analytic gradients
//! * [`analyzer`]: parameter, MAC and receptive-field accounting
//! * [`io`], [`config`]: weight files, PNG images/labels, config files

pub mod analyzer;
pub mod backbone;
pub mod config;
pub mod detail;
pub mod error;
pub mod graph;
pub mod io;
pub mod losses;
pub mod ops;
pub mod seg;
pub mod tensor;
pub mod weights;

pub use analyzer::{layer_cost, network_cost, receptive_field, CostReport, LayerKind, RfState};
pub use backbone::{Features, NetConfig, StageSpec, StdcModuleSpec, StdcNet};
pub use config::ConfigFile;
pub use detail::{generate_detail_gt, laplacian_response, DetailConfig, DetailGt, LabelMap};
pub use error::{Error, Result};
pub use losses::{bce_loss, detail_loss, dice_loss, grad_check, LossValue};
pub use ops::{BatchNormParams, ConvSpec};
pub use seg::{InferOptions, SegConfig, SegNet, SegOutput};
pub use tensor::{Shape, Tensor};
pub use weights::{Schema, WeightStore};
