//! Ground-truth references: a dense simplex, the mixed-integer encoding with
//! its LP and Planet relaxations, and exact minimization by enumerating
//! activation regions.

mod encoding;
mod enumerate;
mod simplex;

pub use encoding::{
    check_split_equivalence, encode_milp, lp_relaxation_bound, planet_bound, MilpEncoding,
    RelaxationMode,
};
pub use enumerate::{
    enumerate_regions, exact_min, exact_min_where, region_min, ExactMin, Region, ENUMERATION_CAP,
};
pub use simplex::{simplex_solve, Constraint, LinearProgram, LpSolution, LpStatus, Sense};
