#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod engine;
pub mod exec;
pub mod iwa;
pub mod losses;
pub mod report;
pub mod scalar_math;
pub mod sparse;
pub mod surrogate;
pub mod sweep;
pub mod verify;
