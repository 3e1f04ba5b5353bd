//! Stochastic symbolic execution.

mod explore;
mod expr;
mod interval;
mod measure;
mod region;
mod step;

pub use explore::{explore, BranchMap, ExploreConfig, Leaf, LeafKind, StuckSnapshot};
pub use expr::{eval_product, grad_product, Affine, Expr};
pub use interval::{expr_interval, prim_interval, refute_constraints, refutes, Interval};
pub use measure::{
    boundary_mass, descend_to_interior, draw_interior, estimate_region_measure, guided_interior, guided_interior_points, is_interior, near_boundary, random_point,
    sample_interior_points, sample_region_interior, InputBox, MeasureEstimate,
};
pub use region::{Constraint, Region, Rel};
pub use step::{instantiate, symbolic_step, SymbolicConfiguration};
