//! Measurements on the perturbed return map: Lyapunov spectra, entropy
//! proxies, rotation numbers and tube confinement.
//!
//! Entropy is only ever reported as a finite-time Lyapunov proxy, together
//! with the threshold and sample counts it was computed with.

pub mod entropy;
pub mod frequency;
pub mod lyapunov;
pub mod tube;

pub use entropy::{entropy_estimate, EntropyEstimate, EntropyRegion, EntropySettings};
pub use frequency::{frequency_scan, FrequencyScan, ScanLine};
pub use lyapunov::{lyapunov_spectrum, LyapunovReport, SectionReturn, SliceReturn, TangentMap};
pub use tube::{tube_confinement, TubeRegion, TubeReport, TubeSettings};

pub use crate::linalg::symplecticity_defect;
