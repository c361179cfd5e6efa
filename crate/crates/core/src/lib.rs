pub mod catalog;
pub mod composition;
pub mod dectree;
pub mod error;
pub mod gen;
pub mod markov;
pub mod numerics;
pub mod qwalk;
pub mod reflection;
pub mod transducer;

pub use error::{Error, Result};
