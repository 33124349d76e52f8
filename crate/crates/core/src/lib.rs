//! Numerical Fatou selections, Lyapunov convexity, Walrasian equilibria with
//! budget truncation, and Galerkin truncations of function-space economies.

pub mod agent_space;
pub mod economy;
pub mod error;
pub mod fatou;
pub mod galerkin;
pub mod pipeline;
pub mod set_analysis;
pub mod solver;

pub use error::{Error, Result};
