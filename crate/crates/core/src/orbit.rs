//! Orbit iteration with exact cycle detection.

use std::collections::HashMap;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use serde::Serialize;

use crate::map::GCMap;

/// A discrete dynamical system on (a subset of) the positive integers.
///
/// Implemented by [`GCMap`] and by first-return maps, so orbit, equivalence,
/// and itinerary code is shared between them.
pub trait Dynamics {
    fn label(&self) -> String;

    /// One step from `x`. `None` means the step itself could not be evaluated
    /// within its internal budget (only derived maps ever return `None`).
    fn step(&self, x: &BigUint) -> Option<BigUint>;

    /// Fixed-width step. The default goes through [`Dynamics::step`].
    fn step_small(&self, x: u64) -> SmallStep {
        match self.step(&BigUint::from(x)) {
            None => SmallStep::Inconclusive,
            Some(v) => v.to_u64().map_or(SmallStep::Overflow, SmallStep::Value),
        }
    }

    fn in_domain(&self, x: &BigUint) -> bool;

    fn in_domain_small(&self, x: u64) -> bool {
        self.in_domain(&BigUint::from(x))
    }

    /// 1-based index of the partition piece containing `x`.
    fn piece(&self, x: &BigUint) -> usize;

    fn piece_count(&self) -> usize;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SmallStep {
    Value(u64),
    /// The exact result exceeds `u64`; callers fall back to big integers.
    Overflow,
    Inconclusive,
}

impl Dynamics for GCMap {
    fn label(&self) -> String {
        self.name().to_owned()
    }

    fn step(&self, x: &BigUint) -> Option<BigUint> {
        Some(self.apply(x))
    }

    #[inline]
    fn step_small(&self, x: u64) -> SmallStep {
        self.apply_u64(x).map_or(SmallStep::Overflow, SmallStep::Value)
    }

    fn in_domain(&self, x: &BigUint) -> bool {
        x.bits() > 0
    }

    fn in_domain_small(&self, x: u64) -> bool {
        x > 0
    }

    fn piece(&self, x: &BigUint) -> usize {
        self.branch_of(x).index()
    }

    fn piece_count(&self) -> usize {
        self.k()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum OrbitOutcome {
    #[serde(rename_all = "camelCase")]
    EnteredCycle {
        entry_index: usize,
        #[serde(serialize_with = "crate::report::big_vec")]
        cycle: Vec<BigUint>,
    },
    FuelExhausted { fuel: u64 },
}

/// A computed orbit prefix `x, f(x), f²(x), …` and how it ended.
///
/// The prefix never repeats a value. When a cycle was found, `cycle` is the
/// tail of the prefix starting at `entry_index`, and applying the map to the
/// last prefix entry gives `prefix[entry_index]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct OrbitRecord {
    #[serde(serialize_with = "crate::report::big")]
    pub start: BigUint,
    #[serde(serialize_with = "crate::report::big_vec")]
    pub prefix: Vec<BigUint>,
    pub outcome: OrbitOutcome,
}

impl OrbitRecord {
    pub fn cycle(&self) -> Option<&[BigUint]> {
        match &self.outcome {
            OrbitOutcome::EnteredCycle { cycle, .. } => Some(cycle),
            OrbitOutcome::FuelExhausted { .. } => None,
        }
    }

    pub fn entry_index(&self) -> Option<usize> {
        match self.outcome {
            OrbitOutcome::EnteredCycle { entry_index, .. } => Some(entry_index),
            OrbitOutcome::FuelExhausted { .. } => None,
        }
    }

    /// The cycle rotated to start at its least element.
    pub fn cycle_canonical(&self) -> Option<Vec<BigUint>> {
        self.cycle().map(canonical_rotation)
    }

    /// True when the start value lies on its own cycle.
    pub fn is_periodic(&self) -> bool {
        self.entry_index() == Some(0)
    }

    /// First index at which the orbit takes the value 1.
    pub fn index_of_one(&self) -> Option<usize> {
        self.prefix.iter().position(|v| v.is_one())
    }

    pub fn position(&self, v: &BigUint) -> Option<usize> {
        self.prefix.iter().position(|p| p == v)
    }

    pub fn is_complete(&self) -> bool {
        self.cycle().is_some()
    }
}

pub(crate) fn canonical_rotation(cycle: &[BigUint]) -> Vec<BigUint> {
    let (min_at, _) = cycle
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.cmp(b.1))
        .expect("cycles are nonempty");
    cycle[min_at..].iter().chain(&cycle[..min_at]).cloned().collect()
}

/// Iterates `map` from `start`, applying it at most `fuel` times.
pub fn orbit<D: Dynamics + ?Sized>(map: &D, start: &BigUint, fuel: u64) -> OrbitRecord {
    let mut prefix = vec![start.clone()];
    let mut seen: HashMap<BigUint, usize> = HashMap::from([(start.clone(), 0)]);
    let mut current = start.clone();
    for _ in 0..fuel {
        let Some(next) = map.step(&current) else {
            break;
        };
        if let Some(&entry_index) = seen.get(&next) {
            let cycle = prefix[entry_index..].to_vec();
            return OrbitRecord {
                start: start.clone(),
                prefix,
                outcome: OrbitOutcome::EnteredCycle { entry_index, cycle },
            };
        }
        seen.insert(next.clone(), prefix.len());
        prefix.push(next.clone());
        current = next;
    }
    OrbitRecord { start: start.clone(), prefix, outcome: OrbitOutcome::FuelExhausted { fuel } }
}
