//! Finite unions of residue classes on the positive integers, and sections
//! built from them.

use std::collections::{BTreeSet, HashSet};
use std::fmt;

use num_bigint::BigUint;
use num_integer::Integer;
use num_traits::ToPrimitive;
use serde::Deserialize;

/// Upper bound on the number of residues a refinement may materialize.
const MAX_MATERIALIZED: u64 = 1 << 26;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ResidueError {
    #[error("modulus must be positive")]
    ZeroModulus,
    #[error("residue {residue} is not below modulus {modulus}")]
    ResidueOutOfRange { residue: u64, modulus: u64 },
    #[error("modulus {target} is not a multiple of {modulus}")]
    NotARefinement { modulus: u64, target: u64 },
    #[error("refinement to modulus {0} is too large to materialize")]
    TooLarge(u128),
}

/// A set of positive integers described by residues modulo a single modulus.
///
/// Equality is set equality: `{1} mod 2` equals `{1, 3} mod 4`.
#[derive(Clone, Debug)]
pub struct ResidueSet {
    modulus: u64,
    residues: Vec<u64>,
}

impl ResidueSet {
    pub fn new(modulus: u64, residues: impl IntoIterator<Item = u64>) -> Result<Self, ResidueError> {
        if modulus == 0 {
            return Err(ResidueError::ZeroModulus);
        }
        let mut residues: Vec<u64> = residues.into_iter().collect();
        if let Some(&bad) = residues.iter().find(|&&r| r >= modulus) {
            return Err(ResidueError::ResidueOutOfRange { residue: bad, modulus });
        }
        residues.sort_unstable();
        residues.dedup();
        Ok(Self { modulus, residues })
    }

    /// Every positive integer.
    pub fn all() -> Self {
        Self { modulus: 1, residues: vec![0] }
    }

    pub fn empty() -> Self {
        Self { modulus: 1, residues: Vec::new() }
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn residues(&self) -> &[u64] {
        &self.residues
    }

    pub fn len(&self) -> usize {
        self.residues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residues.is_empty()
    }

    pub fn is_everything(&self) -> bool {
        self.residues.len() as u64 == self.modulus
    }

    pub fn contains_residue(&self, r: u64) -> bool {
        self.residues.binary_search(&r).is_ok()
    }

    pub fn contains(&self, n: u64) -> bool {
        self.contains_residue(n % self.modulus)
    }

    pub fn contains_big(&self, n: &BigUint) -> bool {
        let r = (n % self.modulus).to_u64().expect("remainder below a u64 modulus");
        self.contains_residue(r)
    }

    /// Smallest positive integer in the class of `r`.
    pub fn least_member(&self, r: u64) -> u64 {
        if r == 0 {
            self.modulus
        } else {
            r
        }
    }

    /// Re-expresses the same set at a multiple of the current modulus.
    pub fn lift(&self, target: u64) -> Result<Self, ResidueError> {
        if target == 0 {
            return Err(ResidueError::ZeroModulus);
        }
        if target % self.modulus != 0 {
            return Err(ResidueError::NotARefinement { modulus: self.modulus, target });
        }
        let copies = target / self.modulus;
        let count = copies as u128 * self.residues.len() as u128;
        if count > MAX_MATERIALIZED as u128 {
            return Err(ResidueError::TooLarge(target as u128));
        }
        let mut residues = Vec::with_capacity(count as usize);
        for i in 0..copies {
            for &r in &self.residues {
                residues.push(r + i * self.modulus);
            }
        }
        residues.sort_unstable();
        Ok(Self { modulus: target, residues })
    }

    fn common_modulus(&self, other: &Self) -> Result<u64, ResidueError> {
        let l = (self.modulus as u128).lcm(&(other.modulus as u128));
        u64::try_from(l).map_err(|_| ResidueError::TooLarge(l))
    }

    fn combine(
        &self,
        other: &Self,
        keep: impl Fn(bool, bool) -> bool,
    ) -> Result<Self, ResidueError> {
        let m = self.common_modulus(other)?;
        if m > MAX_MATERIALIZED {
            return Err(ResidueError::TooLarge(m as u128));
        }
        let residues = (0..m)
            .filter(|&r| keep(self.contains(r), other.contains(r)))
            .collect();
        Ok(Self { modulus: m, residues }.reduce())
    }

    pub fn union(&self, other: &Self) -> Result<Self, ResidueError> {
        self.combine(other, |a, b| a || b)
    }

    pub fn intersection(&self, other: &Self) -> Result<Self, ResidueError> {
        self.combine(other, |a, b| a && b)
    }

    pub fn difference(&self, other: &Self) -> Result<Self, ResidueError> {
        self.combine(other, |a, b| a && !b)
    }

    pub fn complement(&self) -> Self {
        let residues = (0..self.modulus).filter(|r| !self.contains_residue(*r)).collect();
        Self { modulus: self.modulus, residues }
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        match self.difference(other) {
            Ok(d) => d.is_empty(),
            Err(_) => false,
        }
    }

    /// The same set written at the smallest modulus that describes it.
    pub fn reduce(&self) -> Self {
        if self.residues.is_empty() {
            return Self::empty();
        }
        for d in divisors(self.modulus) {
            if d == self.modulus {
                break;
            }
            let projected: HashSet<u64> = self.residues.iter().map(|r| r % d).collect();
            if projected.len() as u64 * (self.modulus / d) == self.residues.len() as u64 {
                let mut residues: Vec<u64> = projected.into_iter().collect();
                residues.sort_unstable();
                return Self { modulus: d, residues };
            }
        }
        self.clone()
    }

    /// Members in `1..=limit`, ascending.
    pub fn members_up_to(&self, limit: u64) -> impl Iterator<Item = u64> + '_ {
        (1..=limit).filter(move |&n| self.contains(n))
    }
}

impl PartialEq for ResidueSet {
    fn eq(&self, other: &Self) -> bool {
        let (a, b) = (self.reduce(), other.reduce());
        a.modulus == b.modulus && a.residues == b.residues
    }
}

impl Eq for ResidueSet {}

impl fmt::Display for ResidueSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, r) in self.residues.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{r}")?;
        }
        write!(f, "}} mod {}", self.modulus)
    }
}

/// All divisors of `n`, ascending.
pub(crate) fn divisors(n: u64) -> Vec<u64> {
    let mut small = Vec::new();
    let mut large = Vec::new();
    let mut d = 1u64;
    while d * d <= n {
        if n % d == 0 {
            small.push(d);
            if d != n / d {
                large.push(n / d);
            }
        }
        d += 1;
    }
    small.extend(large.into_iter().rev());
    small
}

/// A membership predicate on the positive integers: a residue set with
/// finitely many elements removed and finitely many added.
///
/// Images of residue classes under affine maps are residue classes missing
/// a few small elements, which is why exclusions exist at all.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Section {
    classes: ResidueSet,
    excluded: BTreeSet<u64>,
    extra: BTreeSet<u64>,
}

impl Section {
    pub fn new(classes: ResidueSet, excluded: BTreeSet<u64>, extra: BTreeSet<u64>) -> Self {
        let excluded = excluded.into_iter().filter(|&n| n >= 1 && classes.contains(n)).collect();
        let extra = extra.into_iter().filter(|&n| n >= 1 && !classes.contains(n)).collect();
        Self { classes, excluded, extra }
    }

    pub fn finite(members: impl IntoIterator<Item = u64>) -> Self {
        Self::new(ResidueSet::empty(), BTreeSet::new(), members.into_iter().collect())
    }

    pub fn classes(&self) -> &ResidueSet {
        &self.classes
    }

    pub fn excluded(&self) -> &BTreeSet<u64> {
        &self.excluded
    }

    pub fn extra(&self) -> &BTreeSet<u64> {
        &self.extra
    }

    /// True when the section is exactly a residue set.
    pub fn is_pure(&self) -> bool {
        self.excluded.is_empty() && self.extra.is_empty()
    }

    pub fn contains(&self, n: u64) -> bool {
        n >= 1
            && if self.classes.contains(n) {
                !self.excluded.contains(&n)
            } else {
                self.extra.contains(&n)
            }
    }

    pub fn contains_big(&self, n: &BigUint) -> bool {
        match n.to_u64() {
            Some(small) => self.contains(small),
            None => self.classes.contains_big(n),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty() && self.extra.is_empty()
    }

    pub fn union(&self, other: &Section) -> Result<Section, ResidueError> {
        let classes = self.classes.union(&other.classes)?;
        let excluded = self
            .excluded
            .iter()
            .chain(&other.excluded)
            .copied()
            .filter(|&n| !self.contains(n) && !other.contains(n))
            .collect();
        let extra = self.extra.iter().chain(&other.extra).copied().collect();
        Ok(Section::new(classes, excluded, extra))
    }

    pub fn members_up_to(&self, limit: u64) -> impl Iterator<Item = u64> + '_ {
        (1..=limit).filter(move |&n| self.contains(n))
    }
}

impl From<ResidueSet> for Section {
    fn from(classes: ResidueSet) -> Self {
        Section::new(classes, BTreeSet::new(), BTreeSet::new())
    }
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.classes)?;
        if !self.excluded.is_empty() {
            write!(f, " minus {:?}", self.excluded)?;
        }
        if !self.extra.is_empty() {
            write!(f, " plus {:?}", self.extra)?;
        }
        Ok(())
    }
}

/// On-disk shape of a residue set or section.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct SectionFile {
    modulus: u64,
    #[serde(default)]
    residues: Vec<u64>,
    #[serde(default)]
    exclude: Vec<u64>,
    #[serde(default)]
    include: Vec<u64>,
}

impl SectionFile {
    pub(crate) fn into_section(self) -> Result<Section, ResidueError> {
        let classes = ResidueSet::new(self.modulus, self.residues)?;
        Ok(Section::new(
            classes,
            self.exclude.into_iter().collect(),
            self.include.into_iter().collect(),
        ))
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SectionPairFile {
    n1: SectionFile,
    n2: SectionFile,
}

#[derive(Debug, thiserror::Error)]
pub enum SectionFileError {
    #[error("cannot parse section file: {0}")]
    Parse(String),
    #[error(transparent)]
    Residue(#[from] ResidueError),
}

/// Reads a section pair: tables `[n1]` and `[n2]`, each with `modulus`,
/// `residues`, and optional `exclude` / `include` lists.
pub fn section_pair_from_toml(text: &str) -> Result<(Section, Section), SectionFileError> {
    let file: SectionPairFile = toml::from_str(text).map_err(|e| SectionFileError::Parse(e.to_string()))?;
    Ok((file.n1.into_section()?, file.n2.into_section()?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_input() {
        assert_eq!(ResidueSet::new(0, [0]).unwrap_err(), ResidueError::ZeroModulus);
        assert!(matches!(
            ResidueSet::new(6, [1, 6]),
            Err(ResidueError::ResidueOutOfRange { residue: 6, modulus: 6 })
        ));
    }

    #[test]
    fn lift_and_reduce_preserve_the_set() {
        let n1 = ResidueSet::new(6, [1, 5]).unwrap();
        let at18 = n1.lift(18).unwrap();
        assert_eq!(at18.residues(), &[1, 5, 7, 11, 13, 17]);
        assert_eq!(at18.reduce().modulus(), 6);
        assert_eq!(at18, n1);
        assert!(n1.lift(10).is_err());
    }

    #[test]
    fn set_algebra() {
        let odd = ResidueSet::new(2, [1]).unwrap();
        let not3 = ResidueSet::new(3, [1, 2]).unwrap();
        let n1 = odd.intersection(&not3).unwrap();
        assert_eq!(n1, ResidueSet::new(6, [1, 5]).unwrap());
        assert!(n1.is_subset(&odd));
        assert!(!odd.is_subset(&n1));
        assert!(odd.union(&odd.complement()).unwrap().is_everything());
        assert_eq!(odd.difference(&odd).unwrap(), ResidueSet::empty());
    }

    #[test]
    fn reduction_picks_the_smallest_modulus() {
        let s = ResidueSet::new(18, [4, 10, 16]).unwrap();
        let r = s.reduce();
        assert_eq!((r.modulus(), r.residues()), (6, &[4][..]));
        let everything = ResidueSet::new(12, 0..12).unwrap().reduce();
        assert_eq!(everything.modulus(), 1);
    }

    #[test]
    fn section_membership_with_exceptions() {
        let classes = ResidueSet::new(18, [2, 8]).unwrap();
        let s = Section::new(classes, [2].into(), [3].into());
        assert!(!s.contains(2));
        assert!(s.contains(8));
        assert!(s.contains(20));
        assert!(s.contains(3));
        assert!(!s.contains(0));
        assert!(s.contains_big(&BigUint::from(20u32)));
        assert!(!s.is_pure());
    }

    #[test]
    fn divisors_are_sorted() {
        assert_eq!(divisors(18), vec![1, 2, 3, 6, 9, 18]);
        assert_eq!(divisors(1), vec![1]);
    }

    #[test]
    fn section_pair_file() {
        let text = "[n1]\nmodulus = 6\nresidues = [1, 5]\n\n[n2]\nmodulus = 18\nresidues = [2, 8]\nexclude = [2]\n";
        let (n1, n2) = section_pair_from_toml(text).unwrap();
        assert!(n1.contains(5) && !n2.contains(2) && n2.contains(8));
        assert!(section_pair_from_toml("[n1]\nmodulus = 6\nresidues = [1]\nextra = 3\n[n2]\nmodulus = 2\n").is_err());
    }
}
