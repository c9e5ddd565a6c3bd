//! Simulation-free fidelity estimation for chaotic quantum circuits from the
//! top-ranked measured bitstrings.

pub mod error;
pub mod estimator;
pub mod io;
pub mod noise;
pub mod orderstat;
pub mod quad;
pub mod simulator;
pub mod special;

pub use error::{Error, Result};
pub use orderstat::{Dims, MomentSet, PdfForm, RankPdf};
