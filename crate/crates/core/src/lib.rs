pub mod corpus;
pub mod diff;
pub mod inference;
pub mod interp;
pub mod lang;
pub mod primitives;
pub mod rng;
pub mod scalar;
pub mod symbolic;

use sha2::{Digest, Sha256};

pub use diff::{check_differentiability, DiffConfig, DiffReport};
pub use inference::{importance_sample, trace_mh, Histogram, MhConfig, PosteriorSample};
pub use interp::{replay, run_sampling, value_of, weight_of, Outcome, RunOutcome, Trace};
pub use lang::{parse, Term, Type, TypedProgram};
pub use symbolic::{explore, BranchMap, ExploreConfig};

/// Forward-mode dual numbers over `f64`, the scalar used for gradients.
pub type Dual64 = scalar::Dual<f64>;

/// Version tag carried by every JSON document.
pub const SCHEMA: &str = "spcf-kit/1";

/// Hex SHA-256 of the printed program.
pub fn program_hash(prog: &lang::TypedProgram) -> String {
    let digest = Sha256::digest(lang::print(&prog.term).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}
