//! Orbit equivalence, class partitions over finite windows, first-return
//! maps on sections, and the reductions between a map and its first-return
//! map.

use std::collections::{BTreeSet, HashMap, HashSet};

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};
use serde::Serialize;

use crate::map::GCMap;
use crate::orbit::{canonical_rotation, orbit, Dynamics, OrbitRecord, SmallStep};
use crate::report::Status;
use crate::residue::Section;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DomainError {
    #[error("{value} is not in the section")]
    NotInSection { value: String },
    #[error("inputs must be positive integers")]
    NotPositive,
}

/// Outcome of comparing two forward orbits.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", rename_all = "camelCase")]
pub enum EquivalenceVerdict {
    /// `f^k(x) = f^l(y) = meet`, with `(k + l, k)` lexicographically minimal.
    Related {
        k: usize,
        l: usize,
        #[serde(serialize_with = "crate::report::big")]
        meet: BigUint,
    },
    /// Both orbits closed up into cycles, and the cycles are disjoint.
    #[serde(rename_all = "camelCase")]
    Unrelated {
        #[serde(serialize_with = "crate::report::big_vec")]
        cycle_x: Vec<BigUint>,
        #[serde(serialize_with = "crate::report::big_vec")]
        cycle_y: Vec<BigUint>,
    },
    #[serde(rename_all = "camelCase")]
    Inconclusive { fuel_spent: u64 },
}

impl EquivalenceVerdict {
    pub fn is_related(&self) -> bool {
        matches!(self, EquivalenceVerdict::Related { .. })
    }
}

/// Decides `x ∼ y` from fuel-bounded evidence.
pub fn equivalent<D: Dynamics + ?Sized>(map: &D, x: &BigUint, y: &BigUint, fuel: u64) -> EquivalenceVerdict {
    let ox = orbit(map, x, fuel);
    let oy = orbit(map, y, fuel);
    equivalent_from_orbits(&ox, &oy)
}

pub fn equivalent_from_orbits(ox: &OrbitRecord, oy: &OrbitRecord) -> EquivalenceVerdict {
    let mut index_y: HashMap<&BigUint, usize> = HashMap::new();
    for (i, v) in oy.prefix.iter().enumerate() {
        index_y.entry(v).or_insert(i);
    }
    let best = ox
        .prefix
        .iter()
        .enumerate()
        .filter_map(|(k, v)| index_y.get(v).map(|&l| (k + l, k, l)))
        .min();
    if let Some((_, k, l)) = best {
        return EquivalenceVerdict::Related { k, l, meet: ox.prefix[k].clone() };
    }
    match (ox.cycle(), oy.cycle()) {
        (Some(cx), Some(cy)) => {
            let sx: HashSet<&BigUint> = cx.iter().collect();
            debug_assert!(cy.iter().all(|v| !sx.contains(v)));
            EquivalenceVerdict::Unrelated { cycle_x: canonical_rotation(cx), cycle_y: canonical_rotation(cy) }
        }
        _ => EquivalenceVerdict::Inconclusive {
            fuel_spent: (ox.prefix.len() + oy.prefix.len()).saturating_sub(2) as u64,
        },
    }
}

struct UnionFind {
    parent: Vec<u32>,
    rank: Vec<u8>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n as u32).collect(), rank: vec![0; n] }
    }

    fn push(&mut self) -> usize {
        self.parent.push(self.parent.len() as u32);
        self.rank.push(0);
        self.parent.len() - 1
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] as usize != i {
            let p = self.parent[i] as usize;
            self.parent[i] = self.parent[p];
            i = p;
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (a, b) = (self.find(a), self.find(b));
        if a == b {
            return;
        }
        match self.rank[a].cmp(&self.rank[b]) {
            std::cmp::Ordering::Less => self.parent[a] = b as u32,
            std::cmp::Ordering::Greater => self.parent[b] = a as u32,
            std::cmp::Ordering::Equal => {
                self.parent[b] = a as u32;
                self.rank[a] += 1;
            }
        }
    }
}

#[derive(Clone, Debug)]
enum Cur {
    Small(u64),
    Big(BigUint),
}

impl Cur {
    fn to_big(&self) -> BigUint {
        match self {
            Cur::Small(v) => BigUint::from(*v),
            Cur::Big(b) => b.clone(),
        }
    }

    fn small(&self) -> Option<u64> {
        match self {
            Cur::Small(v) => Some(*v),
            Cur::Big(_) => None,
        }
    }
}

#[inline]
fn advance<D: Dynamics + ?Sized>(map: &D, cur: &Cur) -> Option<Cur> {
    match cur {
        Cur::Small(x) => match map.step_small(*x) {
            SmallStep::Value(v) => Some(Cur::Small(v)),
            SmallStep::Overflow => map.step(&BigUint::from(*x)).map(Cur::Big),
            SmallStep::Inconclusive => None,
        },
        Cur::Big(b) => map.step(b).map(|v| match v.to_u64() {
            Some(s) => Cur::Small(s),
            None => Cur::Big(v),
        }),
    }
}

/// One equivalence class found inside a window.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassSummary {
    pub representative: u64,
    pub size: usize,
    /// Terminal cycle, rotated to its least element; empty when no member's
    /// orbit closed up within the fuel.
    #[serde(serialize_with = "crate::report::big_vec")]
    pub cycle: Vec<BigUint>,
    pub resolved: bool,
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ClassesReport {
    pub map: String,
    pub window: u64,
    pub fuel: u64,
    pub domain_size: usize,
    pub class_count: usize,
    pub classes: Vec<ClassSummary>,
    /// Members whose class has no certified terminal cycle.
    pub inconclusive: Vec<u64>,
    #[serde(skip)]
    members: Vec<u64>,
    #[serde(skip)]
    assignment: Vec<u32>,
}

impl ClassesReport {
    /// Index into `classes` of the class containing `n`.
    pub fn class_of(&self, n: u64) -> Option<usize> {
        self.members.binary_search(&n).ok().map(|i| self.assignment[i] as usize)
    }

    pub fn members_of(&self, class: usize) -> impl Iterator<Item = u64> + '_ {
        self.members
            .iter()
            .zip(&self.assignment)
            .filter(move |(_, &c)| c as usize == class)
            .map(|(&n, _)| n)
    }

    pub fn status(&self) -> Status {
        Status::from_counts(0, self.inconclusive.len())
    }
}

/// Partitions the domain members of `1..=window` by `∼`, using only
/// fuel-bounded evidence.
///
/// Each member's orbit is followed until it meets an already-settled member,
/// closes into a cycle, or runs out of fuel. Members met along the way are
/// merged with it; members of a cycle are merged through that cycle. Orbits
/// that leave the window are followed outside it, so no merge is guessed.
pub fn classes<D: Dynamics + ?Sized>(map: &D, window: u64, fuel: u64) -> ClassesReport {
    let members: Vec<u64> = (1..=window).filter(|&n| map.in_domain_small(n)).collect();
    let mut slot = vec![u32::MAX; window as usize + 1];
    for (i, &n) in members.iter().enumerate() {
        slot[n as usize] = i as u32;
    }
    let mut uf = UnionFind::new(members.len());
    let mut settled = vec![false; members.len()];
    let mut cycle_nodes: HashMap<BigUint, usize> = HashMap::new();
    let mut cycle_of_node: HashMap<usize, Vec<BigUint>> = HashMap::new();

    let in_window = |c: &Cur| c.small().filter(|&v| v <= window).map(|v| slot[v as usize]).filter(|&s| s != u32::MAX);

    for (i, &n) in members.iter().enumerate() {
        if settled[i] {
            continue;
        }
        let mut path: Vec<Cur> = vec![Cur::Small(n)];
        let mut seen_small: HashMap<u64, usize> = HashMap::from([(n, 0)]);
        let mut seen_big: HashMap<BigUint, usize> = HashMap::new();
        let mut touched: Vec<usize> = vec![i];
        let mut resolved = false;
        let mut cur = Cur::Small(n);
        for _ in 0..fuel {
            let Some(next) = advance(map, &cur) else { break };
            if let Some(s) = in_window(&next) {
                uf.union(i, s as usize);
                if settled[s as usize] {
                    resolved = true;
                    break;
                }
                touched.push(s as usize);
            }
            let repeat = match &next {
                Cur::Small(v) => seen_small.get(v).copied(),
                Cur::Big(b) => seen_big.get(b).copied(),
            };
            if let Some(entry) = repeat {
                let cycle: Vec<BigUint> = path[entry..].iter().map(Cur::to_big).collect();
                let cycle = canonical_rotation(&cycle);
                let node = *cycle_nodes.entry(cycle[0].clone()).or_insert_with(|| uf.push());
                cycle_of_node.entry(node).or_insert(cycle);
                uf.union(i, node);
                resolved = true;
                break;
            }
            match &next {
                Cur::Small(v) => seen_small.insert(*v, path.len()),
                Cur::Big(b) => seen_big.insert(b.clone(), path.len()),
            };
            path.push(next.clone());
            cur = next;
        }
        if resolved {
            for t in touched {
                settled[t] = true;
            }
        }
    }

    // A class is resolved when it contains a cycle node.
    let mut root_cycle: HashMap<usize, Vec<BigUint>> = HashMap::new();
    for (&node, cycle) in &cycle_of_node {
        let root = uf.find(node);
        root_cycle.insert(root, cycle.clone());
    }
    let mut root_class: HashMap<usize, u32> = HashMap::new();
    let mut classes: Vec<ClassSummary> = Vec::new();
    let mut assignment = Vec::with_capacity(members.len());
    let mut inconclusive = Vec::new();
    for (i, &n) in members.iter().enumerate() {
        let root = uf.find(i);
        let class = *root_class.entry(root).or_insert_with(|| {
            let cycle = root_cycle.get(&root).cloned();
            classes.push(ClassSummary {
                representative: n,
                size: 0,
                resolved: cycle.is_some(),
                cycle: cycle.unwrap_or_default(),
            });
            (classes.len() - 1) as u32
        });
        classes[class as usize].size += 1;
        if !classes[class as usize].resolved {
            inconclusive.push(n);
        }
        assignment.push(class);
    }
    ClassesReport {
        map: map.label(),
        window,
        fuel,
        domain_size: members.len(),
        class_count: classes.len(),
        classes,
        inconclusive,
        members,
        assignment,
    }
}

/// A first return `τ(x)`, `P(x) = f^τ(x)`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SectionReturn {
    pub tau: u64,
    #[serde(serialize_with = "crate::report::big")]
    pub value: BigUint,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ReturnOutcome {
    Returned(SectionReturn),
    /// No return within the fuel; the point may lie outside the domain of `P`.
    Inconclusive { fuel: u64 },
}

impl ReturnOutcome {
    pub fn value(&self) -> Option<&BigUint> {
        match self {
            ReturnOutcome::Returned(r) => Some(&r.value),
            ReturnOutcome::Inconclusive { .. } => None,
        }
    }
}

/// Least `τ ≥ 1` with `f^τ(x) ∈ Σ`, searched up to `fuel` steps.
pub fn return_time<D: Dynamics + ?Sized>(
    map: &D,
    sigma: &Section,
    x: &BigUint,
    fuel: u64,
) -> Result<ReturnOutcome, DomainError> {
    if !sigma.contains_big(x) {
        return Err(DomainError::NotInSection { value: x.to_string() });
    }
    Ok(first_hit(map, sigma, x, fuel))
}

fn first_hit<D: Dynamics + ?Sized>(map: &D, sigma: &Section, x: &BigUint, fuel: u64) -> ReturnOutcome {
    let mut cur = match x.to_u64() {
        Some(s) => Cur::Small(s),
        None => Cur::Big(x.clone()),
    };
    for tau in 1..=fuel {
        let Some(next) = advance(map, &cur) else { break };
        let hit = match &next {
            Cur::Small(v) => sigma.contains(*v),
            Cur::Big(b) => sigma.contains_big(b),
        };
        if hit {
            return ReturnOutcome::Returned(SectionReturn { tau, value: next.to_big() });
        }
        cur = next;
    }
    ReturnOutcome::Inconclusive { fuel }
}

/// The first-return map `P` of a [`GCMap`] on a section `Σ`.
///
/// Every evaluation of `P` gets its own budget of `fuel` map steps. The
/// section may be split into pieces (for example `N₁`, `N₂`) so that
/// itineraries of `P` can be coded.
#[derive(Clone, Debug)]
pub struct FirstReturnMap {
    map: GCMap,
    section: Section,
    pieces: Vec<Section>,
    fuel: u64,
}

impl FirstReturnMap {
    pub fn new(map: GCMap, section: Section, fuel: u64) -> Self {
        Self { pieces: vec![section.clone()], map, section, fuel }
    }

    /// A first-return map on `N₁ ∪ N₂` with pieces `N₁`, `N₂`.
    pub fn on_pair(map: GCMap, n1: &Section, n2: &Section, fuel: u64) -> Self {
        let section = n1.union(n2).expect("section moduli stay small");
        Self { map, section, pieces: vec![n1.clone(), n2.clone()], fuel }
    }

    pub fn map(&self) -> &GCMap {
        &self.map
    }

    pub fn section(&self) -> &Section {
        &self.section
    }

    pub fn pieces(&self) -> &[Section] {
        &self.pieces
    }

    pub fn fuel(&self) -> u64 {
        self.fuel
    }

    pub fn return_time(&self, x: &BigUint) -> Result<ReturnOutcome, DomainError> {
        return_time(&self.map, &self.section, x, self.fuel)
    }

    /// `P(x)`; `Ok(None)` when the return search ran out of fuel.
    pub fn eval(&self, x: &BigUint) -> Result<Option<BigUint>, DomainError> {
        Ok(self.return_time(x)?.value().cloned())
    }

    pub fn eval_u64(&self, x: u64) -> Result<Option<u64>, DomainError> {
        Ok(self.eval(&BigUint::from(x))?.and_then(|v| v.to_u64()))
    }
}

impl Dynamics for FirstReturnMap {
    fn label(&self) -> String {
        format!("first-return({})", self.map.name())
    }

    fn step(&self, x: &BigUint) -> Option<BigUint> {
        first_hit(&self.map, &self.section, x, self.fuel).value().cloned()
    }

    fn in_domain(&self, x: &BigUint) -> bool {
        self.section.contains_big(x)
    }

    fn in_domain_small(&self, x: u64) -> bool {
        self.section.contains(x)
    }

    fn piece(&self, x: &BigUint) -> usize {
        self.pieces
            .iter()
            .position(|p| p.contains_big(x))
            .map(|i| i + 1)
            .unwrap_or_else(|| panic!("{x} is outside the section"))
    }

    fn piece_count(&self) -> usize {
        self.pieces.len()
    }
}

/// Outcome of checking that every orbit in a window meets a section.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct MeetsSectionReport {
    pub window: u64,
    pub fuel: u64,
    pub checked: u64,
    pub passed: u64,
    /// Orbits that closed into a cycle disjoint from the section.
    pub failures: Vec<u64>,
    pub inconclusive: Vec<u64>,
    pub status: Status,
}

/// Checks, on `1..=window`, that every orbit has an element in `Σ`.
pub fn check_reduction_sufficient(map: &GCMap, sigma: &Section, window: u64, fuel: u64) -> MeetsSectionReport {
    let mut failures = Vec::new();
    let mut inconclusive = Vec::new();
    let mut passed = 0;
    for x in 1..=window {
        match meets_section(map, sigma, x, fuel) {
            Some(true) => passed += 1,
            Some(false) => failures.push(x),
            None => inconclusive.push(x),
        }
    }
    let status = Status::from_counts(failures.len(), inconclusive.len());
    MeetsSectionReport { window, fuel, checked: window, passed, failures, inconclusive, status }
}

/// `Some(true)` if the orbit of `x` meets `Σ`, `Some(false)` if it closed
/// into a cycle without meeting it, `None` if the fuel ran out first.
fn meets_section(map: &GCMap, sigma: &Section, x: u64, fuel: u64) -> Option<bool> {
    if sigma.contains(x) {
        return Some(true);
    }
    let mut seen: HashSet<BigUint> = HashSet::new();
    let mut cur = BigUint::from(x);
    for _ in 0..fuel {
        seen.insert(cur.clone());
        cur = map.apply(&cur);
        if sigma.contains_big(&cur) {
            return Some(true);
        }
        if seen.contains(&cur) {
            return Some(false);
        }
    }
    None
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PeriodicPointReport {
    #[serde(serialize_with = "crate::report::big")]
    pub point: BigUint,
    pub periodic: bool,
    /// `orb(x₀; f)`, rotated to start at `x₀` when periodic.
    #[serde(serialize_with = "crate::report::big_vec")]
    pub orbit_f: Vec<BigUint>,
    /// `orb(x₀; f) ∩ Σ`, ascending.
    #[serde(serialize_with = "crate::report::big_vec")]
    pub orbit_f_in_section: Vec<BigUint>,
    /// `orb(x₀; P)`, ascending.
    #[serde(serialize_with = "crate::report::big_vec")]
    pub orbit_p: Vec<BigUint>,
    pub status: Status,
}

/// Checks that `x₀ ∈ Σ` is periodic and that `orb(x₀;P) = orb(x₀;f) ∩ Σ`.
pub fn check_reduction_necessary(
    map: &GCMap,
    sigma: &Section,
    x0: &BigUint,
    fuel: u64,
) -> Result<PeriodicPointReport, DomainError> {
    if !sigma.contains_big(x0) {
        return Err(DomainError::NotInSection { value: x0.to_string() });
    }
    let of = orbit(map, x0, fuel);
    let periodic = of.is_periodic();
    let in_section: BTreeSet<BigUint> = of.prefix.iter().filter(|v| sigma.contains_big(v)).cloned().collect();
    let p = FirstReturnMap::new(map.clone(), sigma.clone(), fuel);
    let op = orbit(&p, x0, fuel);
    let orbit_p: BTreeSet<BigUint> = op.prefix.iter().cloned().collect();
    let status = if !periodic {
        if of.is_complete() {
            Status::Fail
        } else {
            Status::Inconclusive
        }
    } else if !op.is_complete() {
        Status::Inconclusive
    } else if orbit_p == in_section {
        Status::Pass
    } else {
        Status::Fail
    };
    Ok(PeriodicPointReport {
        point: x0.clone(),
        periodic,
        orbit_f: of.prefix,
        orbit_f_in_section: in_section.into_iter().collect(),
        orbit_p: orbit_p.into_iter().collect(),
        status,
    })
}

/// Exhaustive check that every start in `1..=limit` reaches the cycle
/// through 1.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ConvergenceReport {
    pub map: String,
    pub limit: u64,
    #[serde(serialize_with = "crate::report::big_vec")]
    pub target_cycle: Vec<BigUint>,
    pub verified: u64,
    /// Starts whose orbit closes into a cycle other than the target.
    pub failures: Vec<u64>,
    pub inconclusive: Vec<u64>,
    /// Largest value met along the way.
    #[serde(serialize_with = "crate::report::big")]
    pub peak: BigUint,
    pub status: Status,
}

/// Verifies that every `n ≤ limit` reaches the cycle containing the orbit
/// of 1, by following each orbit only until it drops below its start (all
/// smaller starts having been checked) or hits the target cycle. Work is
/// split across `threads` contiguous shards; the report does not depend on
/// the thread count.
pub fn verify_convergence(map: &GCMap, limit: u64, fuel: u64, threads: usize) -> ConvergenceReport {
    let one = orbit(map, &BigUint::one(), 1 << 20);
    let target_cycle = one.cycle_canonical().unwrap_or_default();
    // values of 1's orbit all reach the target cycle too
    let reached: HashSet<u64> = one.prefix.iter().filter_map(|v| v.to_u64()).collect();
    let threads = threads.max(1) as u64;
    let chunk = limit.div_ceil(threads).max(1);

    let shard = |lo: u64, hi: u64| {
        let mut out = Shard::default();
        for n in lo..=hi {
            let outcome = match descend(map, n, fuel, &reached, &mut out.peak) {
                Descent::OutOfFuel => classify_stuck(map, n, fuel, &target_cycle),
                d => d,
            };
            match outcome {
                Descent::Verified => out.verified += 1,
                Descent::OtherCycle => out.failures.push(n),
                Descent::OutOfFuel => out.inconclusive.push(n),
            }
        }
        out
    };
    let shards: Vec<Shard> = if threads == 1 || limit < 2 {
        vec![shard(1, limit)]
    } else {
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..threads)
                .map(|t| (1 + t * chunk, ((t + 1) * chunk).min(limit)))
                .filter(|(lo, hi)| lo <= hi)
                .map(|(lo, hi)| s.spawn(move || shard(lo, hi)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("shard panicked")).collect()
        })
    };
    let mut total = Shard::default();
    for s in shards {
        total.verified += s.verified;
        total.failures.extend(s.failures);
        total.inconclusive.extend(s.inconclusive);
        total.peak = total.peak.max(s.peak);
    }
    let status = Status::from_counts(total.failures.len(), total.inconclusive.len());
    ConvergenceReport {
        map: map.name().to_owned(),
        limit,
        target_cycle,
        verified: total.verified,
        failures: total.failures,
        inconclusive: total.inconclusive,
        peak: total.peak,
        status,
    }
}

#[derive(Default)]
struct Shard {
    verified: u64,
    failures: Vec<u64>,
    inconclusive: Vec<u64>,
    peak: BigUint,
}

enum Descent {
    Verified,
    OtherCycle,
    OutOfFuel,
}

fn descend(map: &GCMap, n: u64, fuel: u64, reached: &HashSet<u64>, peak: &mut BigUint) -> Descent {
    if reached.contains(&n) {
        return Descent::Verified;
    }
    let mut x = n;
    let mut local_peak = n;
    for spent in 0..fuel {
        match map.apply_u64(x) {
            Some(v) => {
                if v < n || reached.contains(&v) {
                    if BigUint::from(local_peak) > *peak {
                        *peak = BigUint::from(local_peak);
                    }
                    return Descent::Verified;
                }
                if v == n {
                    return Descent::OtherCycle;
                }
                local_peak = local_peak.max(v);
                x = v;
            }
            None => return descend_big(map, n, BigUint::from(x), fuel - spent, peak),
        }
    }
    Descent::OutOfFuel
}

/// Full orbit with cycle detection for starts that never dropped below
/// themselves.
fn classify_stuck(map: &GCMap, n: u64, fuel: u64, target: &[BigUint]) -> Descent {
    let rec = orbit(map, &BigUint::from(n), fuel);
    match rec.cycle() {
        Some(c) if c.iter().any(|v| target.contains(v)) => Descent::Verified,
        Some(_) => Descent::OtherCycle,
        None => Descent::OutOfFuel,
    }
}

fn descend_big(map: &GCMap, n: u64, start: BigUint, fuel: u64, peak: &mut BigUint) -> Descent {
    let bound = BigUint::from(n);
    let mut x = start;
    for _ in 0..fuel {
        x = map.apply(&x);
        if x > *peak {
            *peak = x.clone();
        }
        if x < bound {
            return Descent::Verified;
        }
        if x == bound {
            return Descent::OtherCycle;
        }
    }
    Descent::OutOfFuel
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{collatz, identity, qx1, section_collatz};

    fn b(n: u64) -> BigUint {
        BigUint::from(n)
    }

    #[test]
    fn five_and_thirteen_meet_at_five() {
        // (k + l, k) minimal: f^0(5) = f^4(13) = 5
        let v = equivalent(&collatz(), &b(5), &b(13), 100);
        assert_eq!(v, EquivalenceVerdict::Related { k: 0, l: 4, meet: b(5) });
    }

    #[test]
    fn meeting_inside_the_cycle_uses_first_visits() {
        assert_eq!(equivalent(&collatz(), &b(1), &b(2), 10), EquivalenceVerdict::Related { k: 0, l: 1, meet: b(1) });
    }

    #[test]
    fn reflexive_verdict() {
        assert_eq!(
            equivalent(&collatz(), &b(7), &b(7), 1),
            EquivalenceVerdict::Related { k: 0, l: 0, meet: b(7) }
        );
    }

    #[test]
    fn five_x_plus_one_has_disjoint_cycles() {
        let v = equivalent(&qx1(5).unwrap(), &b(1), &b(13), 1000);
        let EquivalenceVerdict::Unrelated { cycle_x, cycle_y } = v else { panic!("{v:?}") };
        assert_eq!(cycle_x, [1u64, 6, 3, 16, 8, 4, 2].map(b).to_vec());
        assert_eq!(cycle_y.len(), 10);
        assert_eq!(cycle_y[0], b(13));
    }

    #[test]
    fn short_fuel_is_inconclusive() {
        let v = equivalent(&collatz(), &b(27), &b(1), 5);
        assert!(matches!(v, EquivalenceVerdict::Inconclusive { .. }));
    }

    #[test]
    fn identity_classes_are_singletons() {
        let r = classes(&identity(), 100, 10);
        assert_eq!(r.class_count, 100);
        assert!(r.classes.iter().all(|c| c.size == 1 && c.resolved));
    }

    #[test]
    fn collatz_window_is_one_class() {
        let r = classes(&collatz(), 10_000, 10_000);
        assert_eq!(r.class_count, 1);
        assert!(r.inconclusive.is_empty());
        assert_eq!(r.classes[0].cycle, vec![b(1), b(4), b(2)]);
    }

    #[test]
    fn five_x_plus_one_window_splits() {
        let f = qx1(5).unwrap();
        let r = classes(&f, 20, 10_000);
        assert!(r.class_count >= 2);
        assert_ne!(r.class_of(1), r.class_of(13));
        assert_eq!(r.class_of(5), r.class_of(13));
    }

    #[test]
    fn return_times_on_collatz_section() {
        let (n1, n2) = section_collatz();
        let sigma = n1.union(&n2).unwrap();
        let f = collatz();
        let ret = |x| return_time(&f, &sigma, &b(x), 100).unwrap();
        assert_eq!(ret(5), ReturnOutcome::Returned(SectionReturn { tau: 1, value: b(16) }));
        assert_eq!(ret(4), ReturnOutcome::Returned(SectionReturn { tau: 2, value: b(1) }));
        assert_eq!(ret(16), ReturnOutcome::Returned(SectionReturn { tau: 2, value: b(4) }));
        assert!(matches!(return_time(&f, &sigma, &b(8), 100), Err(DomainError::NotInSection { .. })));
    }

    #[test]
    fn first_return_map_values_and_orbit() {
        let (n1, n2) = section_collatz();
        let p = FirstReturnMap::on_pair(collatz(), &n1, &n2, 1000);
        for n in n1.members_up_to(200) {
            assert_eq!(p.eval_u64(n).unwrap(), Some(3 * n + 1));
        }
        assert_eq!(p.eval_u64(52).unwrap(), Some(13));
        let rec = orbit(&p, &b(1), 10);
        assert_eq!(rec.cycle().unwrap(), &[b(1), b(4)]);
        assert_eq!(p.piece(&b(4)), 2);
    }

    #[test]
    fn reduction_sufficient_on_collatz() {
        let (n1, n2) = section_collatz();
        let sigma = n1.union(&n2).unwrap();
        let r = check_reduction_sufficient(&collatz(), &sigma, 10_000, 10_000);
        assert_eq!(r.status, Status::Pass);
        assert_eq!(r.passed, 10_000);
        let empty = Section::finite([]);
        let r = check_reduction_sufficient(&collatz(), &empty, 10, 100);
        assert_eq!(r.failures, (1..=10).collect::<Vec<_>>());
        assert_eq!(r.status, Status::Fail);
    }

    #[test]
    fn reduction_necessary_on_collatz() {
        let (n1, n2) = section_collatz();
        let sigma = n1.union(&n2).unwrap();
        let r = check_reduction_necessary(&collatz(), &sigma, &b(1), 100).unwrap();
        assert_eq!(r.status, Status::Pass);
        assert_eq!(r.orbit_p, vec![b(1), b(4)]);
        let r = check_reduction_necessary(&collatz(), &sigma, &b(5), 100).unwrap();
        assert!(!r.periodic);
        assert_eq!(r.status, Status::Fail);
        assert!(check_reduction_necessary(&collatz(), &sigma, &b(2), 100).is_err());
    }

    #[test]
    fn convergence_matches_direct_iteration() {
        let f = collatz();
        let r = verify_convergence(&f, 5_000, 100_000, 1);
        assert_eq!((r.verified, r.status), (5_000, Status::Pass));
        // oracle: full iteration to 1 for each start
        for n in 1..=5_000u64 {
            assert!(orbit(&f, &b(n), 1_000).index_of_one().is_some());
        }
        let sharded = verify_convergence(&f, 5_000, 100_000, 4);
        assert_eq!((sharded.verified, sharded.peak.clone()), (r.verified, r.peak.clone()));
    }

    #[test]
    fn convergence_flags_foreign_cycles() {
        // 5x+1: 5 and 13 close into the 13-cycle; 7 has no known fate
        let r = verify_convergence(&qx1(5).unwrap(), 20, 1_000, 1);
        assert!(r.failures.contains(&13));
        assert!(r.failures.contains(&5));
        assert!(r.inconclusive.contains(&7));
        assert_eq!(r.status, Status::Fail);
    }
}
