//! Compiler and simulator for a small int8 deep-learning accelerator.
//!
//! The accelerator is a configurable array of processing elements with a
//! register-file interface: a host writes operand registers, then issues one
//! of a fixed set of opcodes (convolution, depthwise convolution, matrix
//! multiply, pooling, element-wise lanes, requantize, DMA). This crate takes
//! a quantized network graph and
//!
//! 1. partitions it into accelerator subgraphs and CPU-fallback nodes
//!    ([`partition`]),
//! 2. plans SRAM usage, tiling convolutions along output channels when a
//!    layer does not fit ([`plan`]),
//! 3. generates per-subgraph command streams ([`codegen`]), and
//! 4. prices and executes those streams on a functional simulator with a
//!    per-issue cycle model ([`sim`]).
//!
//! [`interp`] is the scalar reference the device is tested against, and
//! [`artifact`] ties the stages together into a compiled on-disk bundle the
//! `dlac` binary consumes.

pub mod arith;
pub mod artifact;
pub mod codegen;
pub mod error;
pub mod fixtures;
pub mod graph;
pub mod interp;
pub mod isa;
pub mod model;
pub mod partition;
pub mod plan;
pub mod report;
pub mod sim;

pub use error::{Error, ErrorClass, Result};
