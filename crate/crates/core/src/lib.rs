//! Federated linear stochastic approximation (FedLSA).
//!
//! [`engine`] runs the algorithm and its multiplier-bootstrap replicates on
//! counter-based noise streams. [`covariance`] computes the asymptotic and
//! finite-round covariances, [`inference`] builds confidence intervals and
//! [`diagnostics`] checks rates and bias bounds against simulation.
//! The guide in `book/` walks through each piece.

pub mod engine;
pub mod error;
pub mod linalg;
pub mod model;
pub mod schedule;
pub mod covariance;
pub mod diagnostics;
pub mod inference;
pub mod environments;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/systems.md")]
    mod systems {}
    #[doc = include_str!("../../../book/src/running.md")]
    mod running {}
    #[doc = include_str!("../../../book/src/covariance.md")]
    mod covariance {}
    #[doc = include_str!("../../../book/src/inference.md")]
    mod inference {}
    #[doc = include_str!("../../../book/src/diagnostics.md")]
    mod diagnostics {}
}
