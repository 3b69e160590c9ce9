//! Lip-field damage simulator for 2D plane-strain quasi-brittle fracture.
//!
//! Damage is a per-element field interpolated linearly on a triangulation of
//! the element centroids and constrained to be 1/l-Lipschitz. Each load step
//! alternates a displacement solve at fixed damage with a convex damage
//! update restricted to the patches where the local update and its
//! Lipschitz envelopes disagree.

pub mod cli;
pub mod conic;
pub mod driver;
pub mod equilibrium;
pub mod lipfield;
pub mod material;
pub mod mesh;
pub mod meshgen;

pub use driver::{run_simulation, run_with_mesh, Simulation, SimulationConfig, StepRecord};
pub use equilibrium::{ConstraintSet, Solution};
pub use lipfield::{BoundsPair, DamageField, Patch};
pub use material::{MaterialParams, Strain2D};
pub use mesh::{build_lip_mesh, edge_graph, read_mesh, EdgeGraph, FeMesh, LipMesh};
