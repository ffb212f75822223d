//! Closed-form weights: interaction heads, gating and decrementing FFNs,
//! and the assembled kernel-regression network.

mod gating;
mod interaction;
mod kernel;
pub mod lemmas;
mod verify;

pub use gating::{build_decrement_ffn, build_gating_ffn, gate_weights, GateSide};
pub use interaction::{
    build_interaction_head, interaction_constant, min_separation, InteractionRequest, MAX_CONSTANT,
};
pub use kernel::{
    build, build_kernel_transformer, pow2_ceil, BuiltConstants, KernelParams, KernelTransformer,
    StageBounds,
};
pub use verify::{
    clipped_heads, diagnose, expected_stages, verify_equivalence, Equivalence, ExpectedStages,
    StageFailure,
};
