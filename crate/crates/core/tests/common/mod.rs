#![allow(dead_code)]

pub mod gen;
pub mod kernel_checks;
pub mod oracles;
