pub mod autodiff;
pub mod baselines;
pub mod channel;
pub mod codec;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod radiomap;
pub mod rng;
pub mod training;

pub use error::{Error, Result};

// The guide's code blocks run as doctests, one module per chapter.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/maps.md")]
    mod maps {}
    #[doc = include_str!("../../../book/src/knowledge.md")]
    mod knowledge {}
    #[doc = include_str!("../../../book/src/codec.md")]
    mod codec {}
    #[doc = include_str!("../../../book/src/link.md")]
    mod link {}
    #[doc = include_str!("../../../book/src/experiments.md")]
    mod experiments {}
}
