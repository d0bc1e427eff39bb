//! Extract-then-rerank reader for Cloze-style comprehension, built on a
//! small reverse-mode autodiff engine.

pub mod autodiff;
pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod data;
pub mod encoders;
pub mod error;
pub mod extractor;
pub mod micro;
pub mod model;
pub mod optim;
pub mod reasoner;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
