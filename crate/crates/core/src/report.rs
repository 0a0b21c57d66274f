//! Shared report vocabulary and serialization helpers.

use num_bigint::BigUint;
use serde::{Serialize, Serializer};

/// Version stamped on every machine-readable report.
pub const SCHEMA_VERSION: u32 = 1;

/// Three-valued verdict. Ordered so that `max` gives the combined status.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "camelCase")]
pub enum Status {
    Pass,
    Inconclusive,
    Fail,
}

impl Status {
    pub fn from_counts(failures: usize, inconclusive: usize) -> Self {
        if failures > 0 {
            Status::Fail
        } else if inconclusive > 0 {
            Status::Inconclusive
        } else {
            Status::Pass
        }
    }

    pub fn and(self, other: Status) -> Status {
        self.max(other)
    }

    pub fn is_pass(self) -> bool {
        self == Status::Pass
    }
}

impl FromIterator<Status> for Status {
    fn from_iter<I: IntoIterator<Item = Status>>(iter: I) -> Self {
        iter.into_iter().fold(Status::Pass, Status::and)
    }
}

pub(crate) fn big<S: Serializer>(v: &BigUint, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_str_radix(10))
}

pub(crate) fn big_vec<S: Serializer>(v: &[BigUint], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(v.iter().map(|b| b.to_str_radix(10)))
}
