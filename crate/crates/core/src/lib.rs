pub mod autodiff;
pub mod checkpoint;
pub mod conllu;
pub mod eisner;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod trainer;

pub use error::{Error, Result};
