//! Maximize the flexibility index of a DC-approximated power grid: the scale
//! of a parametric uncertainty region whose every point is manageable by
//! recourse controls (phase-shifter law, a single bus merge, proportional
//! load redistribution). The top-level problem is an existence-constrained
//! semi-infinite program solved by adaptive discretization with restriction
//! of the right-hand side.

pub mod esip;
pub mod formulation;
pub mod grid;
pub mod milp;
pub mod oracle;
pub mod region;
pub mod subproblems;
