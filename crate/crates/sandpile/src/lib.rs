//! Laboratory for the Abelian sandpile growth model on Z^d (d = 2 or 3):
//! chip-firing stabilization with odometer tracking, discrete fundamental
//! solutions of the lattice Laplacian, and weak-* convergence diagnostics
//! for the rescaled pile.

pub mod analysis;
pub mod error;
pub mod green;
pub mod lattice;
pub mod leastaction;
pub mod render;
pub mod sfield;
pub mod stabilize;
pub mod verify;

pub use error::Error;

pub type Result<T> = std::result::Result<T, Error>;
