//! Dynamic discrete choice replacement models with group-local interaction
//! effects.
//!
//! The per-unit dynamic program is solved by logsum value function iteration
//! over a dense lexicographic state space. Because interactions are confined
//! to fixed groups with group-local transitions and additively separable
//! payoffs, the joint Bellman operator is block diagonal and the joint value
//! function is the sum of group-level values; [`oracle`] checks that identity
//! against a brute-force solve on the Cartesian product space.
//!
//! Estimation is full-information maximum likelihood by nested fixed point
//! ([`estimate`]), with asymptotic and cage-block bootstrap inference.
//! [`counterfactual`] forward-simulates groups with endogenous neighbor
//! feedback under common random numbers.

pub mod bellman;
pub mod config;
pub mod counterfactual;
pub mod engine;
pub mod error;
pub mod estimate;
pub mod kernel;
pub mod oracle;
pub mod panel;
pub mod statespace;
pub mod synth;
pub mod transitions;

pub use bellman::{solve_vfi, FlowTables, SolveResult, StructuralParams, VfiOptions};
pub use error::{Error, Result};
pub use kernel::{Action, ControlledKernel, KernelPair};
pub use panel::{Panel, PanelRow, Topology};
pub use statespace::{Binning, StateId, StateSpace, StateSpec, UnitState};
