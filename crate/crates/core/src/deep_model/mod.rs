//! Two-layer (and deeper) concatenated kernel models.

mod mlmkl;
mod model;
mod problem;
mod stack;

pub use mlmkl::mlmkl_equivalence_check;
pub use model::{fit_two_layer, TwoLayerModel};
pub use problem::{inner_eval, Evaluation, Mode, TwoLayerObjective, TwoLayerProblem};
pub use stack::{
    deep_kernel_eval, fit_layer_stack, objective_general_l, InnerLayer, LayerStack, Loss, FD_STEP, INDICATOR_TOL,
};
