//! Neural-network control of affine nonlinear plants with Lyapunov guarantees.
//!
//! The pipeline: solve the contractive one-step-ahead problem at each grid
//! state with a neural optimization machine ([`nom`]), collect the solutions
//! into a dataset ([`dataset`]), distill them into a feedforward controller
//! ([`neural`]), then check closed-loop behaviour ([`simloop`]) against the
//! estimated tracking bound ([`bounds`]).

pub mod bounds;
pub mod dataset;
pub mod error;
pub mod neural;
pub mod nom;
pub mod ocp;
pub mod oracle;
pub mod plant;
pub mod rng;
pub mod simloop;

pub use error::{Error, Result};
