//! Hierarchical deep double Q-routing.
//!
//! Nodes are organised into nested groups. Paths are assembled top-down: at
//! each level where source and destination differ, the leader of the
//! enclosing group picks an inter-group link with a learned Q-function.

pub mod agent;
pub mod harness;
pub mod netstate;
pub mod neural;
pub mod replay;
pub mod routing;
pub mod topology;
