//! Landscape and transfer analyses over trained experts.

pub mod bound;
pub mod ksweep;
pub mod landscape;
pub mod lmc;
pub mod shift;
pub mod stats;
pub mod svg;

pub use bound::{quad_bound_check, BoundReport, QuadraticTaskPair};
pub use ksweep::k_sweep;
pub use landscape::{landscape_2d, Landscape, PlaneBasis};
pub use lmc::{barrier, lmc_scan, transfer_correlation, LmcCurve, TransferReport};
pub use shift::{shift_eval, ShiftMatrix};
