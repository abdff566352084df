//! Noisy broadcast networks on random planar graphs and the machinery that
//! reduces parity protocols on them to read-once noisy decision trees.
//!
//! The modules build on each other roughly in this order:
//! [`noise`] (bit noise and random streams), [`planar`] (networks and
//! decompositions), [`protocol`] (protocols, exact and sampled execution),
//! [`advantage`] (the advantage functional and bound evaluators), [`tree`]
//! (decision trees and rearrangement), [`reductions`] (protocol to tree) and
//! [`harness`] (experiments and CSV output).

pub mod advantage;
pub mod harness;
pub mod instances;
pub mod noise;
pub mod planar;
pub mod protocol;
pub mod reductions;
pub mod tree;

use thiserror::Error;

/// Any error raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Noise(#[from] noise::NoiseError),
    #[error(transparent)]
    Planar(#[from] planar::PlanarError),
    #[error(transparent)]
    Protocol(#[from] protocol::ProtocolError),
    #[error(transparent)]
    Advantage(#[from] advantage::AdvantageError),
    #[error(transparent)]
    Tree(#[from] tree::TreeError),
    #[error(transparent)]
    Reduction(#[from] reductions::ReductionError),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
