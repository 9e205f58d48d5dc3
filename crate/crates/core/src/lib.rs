//! Face-region expression analysis.
//!
//! Small CNN classifiers trained on whole faces or on landmark-defined face
//! regions, a DenseNet-BC visualizer whose class activation maps localize
//! the areas each emotion relies on, and the evaluation protocol comparing
//! regions against each other.
//!
//! Everything runs on CPU with a self-contained reverse-mode engine
//! ([`autodiff::Graph`]) over rank-4 [`tensor::Tensor`]s.

pub mod autodiff;
pub mod cam;
pub mod conv;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod imaging;
pub mod layers;
pub mod models;
pub mod params;
pub mod regions;
pub mod tensor;
pub mod training;

pub use autodiff::{Graph, Var};
pub use error::{Error, Result};
pub use params::{ParamId, ParamStore, Parameter};
pub use tensor::{Element, Shape, Tensor};
