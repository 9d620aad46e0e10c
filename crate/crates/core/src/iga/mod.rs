//! NURBS geometry and isogeometric collocation.

mod collocation;
mod knots;
mod surface;

pub use collocation::CollocationSpace;
pub use knots::KnotVector;
pub use surface::{BasisEval, NurbsSurface, SurfacePoint};
