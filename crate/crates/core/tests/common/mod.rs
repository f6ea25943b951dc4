#![allow(dead_code)]

pub mod dft;
pub mod fit;
pub mod fixtures;
pub mod quad;
pub mod raymarch;
pub mod spectral;
pub mod stats;
