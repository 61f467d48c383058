//! Linear-quadratic-Gaussian games and team problems with finitely many
//! agents coupled through a weighted state average.
//!
//! The crate solves the Riccati systems that decouple the optimality
//! conditions, turns them into decentralized feedback laws, simulates the
//! closed-loop population and checks the results numerically.

pub mod consensus;
pub mod error;
pub mod figures;
pub mod io;
pub mod linalg;
pub mod model;
pub mod riccati;
pub mod simulate;
pub mod synthesis;
pub mod verify;

pub use error::{Error, Result};
pub use nalgebra;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/riccati.md")]
    mod riccati {}
    #[doc = include_str!("../../../book/src/strategies.md")]
    mod strategies {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/verification.md")]
    mod verification {}
    #[doc = include_str!("../../../book/src/consensus.md")]
    mod consensus {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
