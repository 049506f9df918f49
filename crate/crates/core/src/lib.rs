//! Finite-horizon abstractions of networks of coupled single-integrator agents.
//!
//! The pipeline runs in stages: a [`scenario::Scenario`] is loaded, a reach
//! tube and dynamics bounds are computed ([`reach`]), a space-time
//! discretization is solved and certified ([`discretization`]), every agent
//! gets a cell decomposition ([`grid`]), and the [`abstraction`] module builds
//! the individual and product transition systems on top. [`validation`]
//! replays transitions and paths on the continuous closed loop.
//!
//! All numerical code is generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! aliases below fix the scalar type.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::type_complexity)]

pub mod abstraction;
pub mod discretization;
pub mod dynamics;
pub mod error;
pub mod field;
pub mod geometry;
pub mod grid;
pub mod persistence;
pub mod pipeline;
pub mod reach;
pub mod scalar;
pub mod scenario;
pub mod validation;

pub use error::{Error, ErrorClass};
pub use scalar::Scalar;

pub type Point64 = geometry::Point<f64>;
pub type Ball64 = geometry::Ball<f64>;
pub type Aabb64 = geometry::Aabb<f64>;
pub type Scenario64 = scenario::Scenario<f64>;
pub type ReachTube64 = reach::ReachTube<f64>;
pub type Discretization64 = discretization::SpaceTimeDiscretization<f64>;
pub type CellDecomposition64 = grid::CellDecomposition<f64>;
pub type Setup64 = pipeline::Setup<f64>;
pub type Abstraction64 = abstraction::Abstraction<f64>;

pub type Point32 = geometry::Point<f32>;
pub type Scenario32 = scenario::Scenario<f32>;
pub type ReachTube32 = reach::ReachTube<f32>;
pub type Discretization32 = discretization::SpaceTimeDiscretization<f32>;
pub type Setup32 = pipeline::Setup<f32>;
pub type Abstraction32 = abstraction::Abstraction<f32>;
