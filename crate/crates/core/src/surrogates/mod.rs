//! Differentiable surrogate channels mapping a normalized drive sequence to
//! the predicted normalized power, sample-aligned and causal.

mod cat;
mod hyper;
mod layout;
mod lstm;
mod model;
mod tdnn;
mod volterra;

pub use hyper::{ModelHyper, ModelKind};
pub use layout::{Init, ParamSpec};
pub use model::{
    init_model, layout, load_checkpoint, save_checkpoint, CheckpointMeta, Param, SurrogateModel,
};
pub use volterra::regressors as volterra_regressors;
