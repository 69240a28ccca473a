//! Tape-based reverse-mode autodiff and the layers built on it.

pub mod adam;
pub mod check;
pub mod checkpoint;
pub mod layers;
pub mod store;
pub mod tape;
pub mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::CheckpointError;
pub use layers::{
    categorical_probs, categorical_straight_through, gru_init, gru_step, linear, mode_rows_one_hot,
    one_hot, pick_from_row, sample_rows_one_hot, Act, Draw, MlpDef,
};
pub use store::{normal_sample, Ctx, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::{Scalar, Tensor};
