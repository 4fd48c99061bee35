//! Minimal dense-tensor reverse-mode autodiff, MLP blocks, hypersphere
//! projection, Adam, and the checkpoint format. Everything downstream (the
//! representation losses, the critics, the actors) is built on this module.

mod adam;
mod checkpoint;
mod graph;
pub mod kernels;
mod mlp;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use checkpoint::Checkpoint;
pub use graph::{Graph, Var};
pub use mlp::{
    forward_mlp, forward_mlp_eager, init_mlp_params, sphere_project, Activation, MlpSpec,
    OutputTransform,
};
pub use tensor::{hard_copy_targets, ParamStore, Tensor};
