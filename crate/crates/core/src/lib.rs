//! Reachable sets of controlled ODEs `x' = f(x) + g(t)` under norm-bounded
//! control, and the intensity of attraction: how large the control bound `r`
//! can get while the reachable set of an attractor stays inside a compact
//! subset of its basin. Built on a fixed-grid set-valued Euler scheme with
//! certified over- and witness-backed under-approximations, plus
//! attractor-block verification and continuation under field perturbations.

pub mod continuation;
pub mod field;
pub mod flow;
pub mod geometry;
pub mod intensity;
pub mod reach;

pub use continuation::{ContinuationError, ContinuationReport, SemicontinuityReport};
pub use field::{FieldError, VectorFieldSpec};
pub use geometry::{Aabb, CellSet, GeometryError, GridSpec, NormSpec};
pub use intensity::{IntensityBracket, IntensityError, ScanPoint};
pub use reach::{BlockReport, ReachResult};
