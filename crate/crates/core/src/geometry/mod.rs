//! Octree, near and interaction fields, and directional cones.

pub mod cones;
pub mod tree;

pub use cones::{cone_direction, cone_of_direction, enclosing_cone, ConeId};
pub use tree::{build_tree, Cube, Interaction, Level, Regime, Tree, TreeFlags};
