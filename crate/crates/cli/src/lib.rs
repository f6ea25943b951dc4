//! Command-line tools and the HTTP authoring service for Gabor fields.

pub mod commands;
pub mod service;
pub mod session;
pub mod views;
