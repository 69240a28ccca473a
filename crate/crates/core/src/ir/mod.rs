//! Textual LLVM IR parsing and Autophase feature extraction.

pub mod autophase;
pub mod parser;

pub use autophase::{
    extract_autophase, instruction_count, AutophaseFeatures, FEATURE_COUNT, FEATURE_NAMES,
};
pub use parser::{parse_ir, BasicBlock, Instruction, IrFunction, IrModule, ParseError};
