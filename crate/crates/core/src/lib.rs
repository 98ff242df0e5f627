//! Proportionally fair spatial Aloha in Poisson bipole networks.
//!
//! Each transmitter picks its medium-access probability (MAP) from what it
//! knows of the receivers around it, described by a stopping set. The crate
//! solves for those MAPs ([`solver`]), evaluates the law of the typical
//! node's MAP and its mean utility semi-analytically ([`analytic`]), and
//! checks both against Monte Carlo simulation of finite networks
//! ([`sim`]).

pub mod analytic;
pub mod error;
pub mod model;
pub mod numerics;
pub mod sim;
pub mod solver;
pub mod stopping;

pub use error::{Error, Result};
pub use model::{MapAssignment, ModelParams, NetworkRealization, Point};
pub use solver::{closed_form_empty, solve_finite_window, solve_map, SolveResult};
pub use stopping::{local_view, LocalView, StoppingSetSpec};
