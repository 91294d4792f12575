//! Decentralized reference governor for cascade linear systems with
//! step-indexed constraint tightening.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar to `f64`.

pub mod config;
pub mod geometry;
pub mod governor;
pub mod model;
pub mod numerics;
pub mod rhop;
pub mod scalar;
pub mod sets;
pub mod sim;
pub mod verify;

pub use scalar::Real;

pub type Polytope64 = geometry::Polytope<f64>;
pub type SetExpr64 = geometry::SetExpr<f64>;
pub type CascadeModel64 = model::CascadeModel<f64>;
pub type ClosedLoopCascade64 = model::ClosedLoopCascade<f64>;
pub type ClosedLoopSubsystem64 = model::ClosedLoopSubsystem<f64>;
pub type SetSuite64 = sets::SetSuite<f64>;
pub type Governor64 = governor::Governor<f64>;
pub type RhopContext64 = rhop::RhopContext<f64>;
pub type Qp64 = rhop::Qp<f64>;
