//! Exact tools for generalized Collatz maps: residue-guarded affine maps,
//! their orbits and first-return maps, Cuntz-Krieger style conditions, and
//! finite truncations of the associated operators.
//!
//! ```
//! use collatz_lab::{collatz, orbit};
//! use num_bigint::BigUint;
//!
//! let rec = orbit(&collatz(), &BigUint::from(27u32), 200);
//! assert_eq!(rec.index_of_one(), Some(111));
//! ```

pub mod conditions;
pub mod dynamics;
pub mod families;
pub mod map;
pub mod operator;
pub mod orbit;
pub mod report;
pub mod residue;

pub use conditions::{
    ck_for_section, cuntz_krieger_condition, image_section, is_aperiodic, itinerary, residue_image,
    separating_condition, CKMatrix, Itinerary, WitnessTable,
};
pub use dynamics::{
    check_reduction_necessary, check_reduction_sufficient, classes, equivalent, return_time, verify_convergence,
    DomainError, EquivalenceVerdict, FirstReturnMap,
};
pub use families::{collatz, identity, qx1, section_3xd, section_collatz, section_mersenne, section_q5, three_x_d, PresetName};
pub use map::{AffineBranch, GCMap, MapError};
pub use operator::{
    build_branch_ops, build_section_ops, build_t, reachable_span, BasisWindow, RelationReport, TruncatedOperator,
};
pub use orbit::{orbit, Dynamics, OrbitOutcome, OrbitRecord};
pub use report::{Status, SCHEMA_VERSION};
pub use residue::{section_pair_from_toml, ResidueSet, Section};

// Book chapters compile and run as doc-tests so they stay in sync.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/maps.md")]
    struct Maps;
    #[doc = include_str!("../../../book/src/classes.md")]
    struct Classes;
    #[doc = include_str!("../../../book/src/sections.md")]
    struct Sections;
    #[doc = include_str!("../../../book/src/conditions.md")]
    struct Conditions;
    #[doc = include_str!("../../../book/src/operators.md")]
    struct Operators;
}
