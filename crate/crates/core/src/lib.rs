//! Bayesian hazard and intensity estimation with kernel mixtures of
//! completely random measures.

pub mod cli;
pub mod config;
pub mod crm;
pub mod data;
pub mod error;
pub mod kernel;
pub mod levy;
pub mod partition;
pub mod posterior;
pub mod quadrature;
pub mod samplers;
pub mod special;
pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/partitions.md")]
    mod partitions {}
    #[doc = include_str!("../../../book/src/levy-families.md")]
    mod levy_families {}
    #[doc = include_str!("../../../book/src/kernels-and-data.md")]
    mod kernels_and_data {}
    #[doc = include_str!("../../../book/src/posterior.md")]
    mod posterior {}
    #[doc = include_str!("../../../book/src/samplers.md")]
    mod samplers {}
    #[doc = include_str!("../../../book/src/crm.md")]
    mod crm {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
