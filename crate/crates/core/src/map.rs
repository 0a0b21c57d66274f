//! Residue-guarded piecewise-affine maps on the positive integers.
//!
//! A [`GCMap`] is a list of branches `n ↦ (a·n + b)/c`, each guarded by a set
//! of residues modulo the map's modulus `M`. When the guards partition the
//! residues mod `M` and every branch is injective, the map satisfies the
//! bounded condition: every integer has at most `k` preimages.

use std::fmt;
use std::path::Path;

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::residue::{ResidueError, ResidueSet};

#[derive(Debug, thiserror::Error)]
pub enum MapError {
    #[error("a map needs at least one branch")]
    NoBranches,
    #[error("branch {0}: divisor must be positive")]
    ZeroDivisor(usize),
    #[error("branch {branch}: {source}")]
    Guard { branch: usize, source: ResidueError },
    #[error("combined modulus {0} is too large")]
    ModulusTooLarge(u128),
    #[error("branch {0} is constant, so its preimages are unbounded")]
    ConstantBranch(usize),
    #[error("cannot parse map definition: {0}")]
    Parse(String),
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// One affine piece `n ↦ (mul·n + add)/div` on the members of `guard`.
#[derive(Clone, Debug)]
pub struct AffineBranch {
    index: usize,
    guard: ResidueSet,
    mul: u64,
    add: i64,
    div: u64,
}

impl AffineBranch {
    pub fn new(guard: ResidueSet, mul: u64, add: i64, div: u64) -> Self {
        Self { index: 0, guard, mul, add, div }
    }

    /// 1-based label of the branch within its map.
    pub fn index(&self) -> usize {
        self.index
    }

    pub fn guard(&self) -> &ResidueSet {
        &self.guard
    }

    pub fn mul(&self) -> u64 {
        self.mul
    }

    pub fn add(&self) -> i64 {
        self.add
    }

    pub fn div(&self) -> u64 {
        self.div
    }

    /// `(a·n + b)/c` with exact big-integer arithmetic; `None` if the result
    /// is not a positive integer.
    pub fn eval(&self, n: &BigUint) -> Option<BigUint> {
        let num = BigInt::from(n.clone()) * self.mul + self.add;
        let (q, r) = num.div_rem(&BigInt::from(self.div));
        if !r.is_zero() || q.sign() != Sign::Plus {
            return None;
        }
        q.to_biguint()
    }

    /// Fixed-width evaluation; `None` on overflow or a non-positive result.
    pub fn eval_u64(&self, n: u64) -> Option<u64> {
        let prod = (self.mul as u128).checked_mul(n as u128)?;
        let num = if self.add >= 0 {
            prod.checked_add(self.add as u128)?
        } else {
            prod.checked_sub(self.add.unsigned_abs() as u128)?
        };
        let q = num / self.div as u128;
        if q == 0 {
            return None;
        }
        u64::try_from(q).ok()
    }

    /// Solutions `m ≥ 1` of `(a·m + b)/c = n` that lie in the guard.
    fn solve(&self, n: &BigUint) -> Result<Option<BigUint>, MapError> {
        if self.mul == 0 {
            return Err(MapError::ConstantBranch(self.index));
        }
        let num = BigInt::from(n.clone()) * self.div - self.add;
        if num.sign() != Sign::Plus {
            return Ok(None);
        }
        let (m, r) = num.div_rem(&BigInt::from(self.mul));
        if !r.is_zero() {
            return Ok(None);
        }
        let m = m.to_biguint().expect("positive");
        Ok((!m.is_zero() && self.guard.contains_big(&m)).then_some(m))
    }
}

/// A generalized Collatz-type map.
#[derive(Clone, Debug)]
pub struct GCMap {
    name: String,
    modulus: u64,
    branches: Vec<AffineBranch>,
    // branch position for each residue mod `modulus`; u32::MAX where uncovered
    lookup: Vec<u32>,
}

impl GCMap {
    /// Builds a map, normalizing every guard to the least common multiple of
    /// the guard moduli. Partition and injectivity are *not* enforced here;
    /// see [`GCMap::validate`].
    pub fn new(name: impl Into<String>, branches: Vec<AffineBranch>) -> Result<Self, MapError> {
        if branches.is_empty() {
            return Err(MapError::NoBranches);
        }
        let mut modulus: u128 = 1;
        for (i, b) in branches.iter().enumerate() {
            if b.div == 0 {
                return Err(MapError::ZeroDivisor(i + 1));
            }
            modulus = modulus.lcm(&(b.guard.modulus() as u128));
        }
        let modulus = u64::try_from(modulus)
            .ok()
            .filter(|&m| m <= 1 << 24)
            .ok_or(MapError::ModulusTooLarge(modulus))?;
        let mut out = Vec::with_capacity(branches.len());
        let mut lookup = vec![u32::MAX; modulus as usize];
        for (i, mut b) in branches.into_iter().enumerate() {
            b.index = i + 1;
            b.guard = b
                .guard
                .lift(modulus)
                .map_err(|source| MapError::Guard { branch: i + 1, source })?;
            for &r in b.guard.residues() {
                if lookup[r as usize] == u32::MAX {
                    lookup[r as usize] = i as u32;
                }
            }
            out.push(b);
        }
        Ok(Self { name: name.into(), modulus, branches: out, lookup })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn modulus(&self) -> u64 {
        self.modulus
    }

    pub fn branches(&self) -> &[AffineBranch] {
        &self.branches
    }

    /// Number of branches, `k`.
    pub fn k(&self) -> usize {
        self.branches.len()
    }

    /// The branch whose guard contains `residue` (first one, if guards overlap).
    pub fn branch_for_residue(&self, residue: u64) -> Option<&AffineBranch> {
        match self.lookup[(residue % self.modulus) as usize] {
            u32::MAX => None,
            i => Some(&self.branches[i as usize]),
        }
    }

    pub fn branch_of(&self, n: &BigUint) -> &AffineBranch {
        let r = (n % self.modulus).to_u64().expect("remainder below modulus");
        self.branch_for_residue(r)
            .unwrap_or_else(|| panic!("residue {r} mod {} has no branch", self.modulus))
    }

    pub fn branch_of_u64(&self, n: u64) -> &AffineBranch {
        self.branch_for_residue(n % self.modulus)
            .unwrap_or_else(|| panic!("residue {} mod {} has no branch", n % self.modulus, self.modulus))
    }

    /// One application of the map.
    ///
    /// # Panics
    ///
    /// If `n` is zero or the map does not pass [`GCMap::validate`] at `n`.
    pub fn apply(&self, n: &BigUint) -> BigUint {
        assert!(!n.is_zero(), "maps act on positive integers");
        let branch = self.branch_of(n);
        branch
            .eval(n)
            .unwrap_or_else(|| panic!("branch {} does not map {n} to a positive integer", branch.index))
    }

    /// Fixed-width fast path; `None` when the result does not fit in a `u64`.
    #[inline]
    pub fn apply_u64(&self, n: u64) -> Option<u64> {
        debug_assert!(n > 0);
        self.branch_of_u64(n).eval_u64(n)
    }

    /// Every `m ≥ 1` with `apply(m) = n`, ascending. At most one per branch.
    pub fn preimage(&self, n: &BigUint) -> Result<Vec<BigUint>, MapError> {
        let mut out = Vec::with_capacity(self.branches.len());
        for b in &self.branches {
            if let Some(m) = b.solve(n)? {
                if b.eval(&m).as_ref() == Some(n) && self.branch_of(&m).index == b.index {
                    out.push(m);
                }
            }
        }
        out.sort();
        out.dedup();
        Ok(out)
    }

    /// Preimages within one branch only.
    pub fn branch_preimage(&self, branch: usize, n: &BigUint) -> Result<Option<BigUint>, MapError> {
        let b = &self.branches[branch - 1];
        Ok(b.solve(n)?.filter(|m| b.eval(m).as_ref() == Some(n) && self.branch_of(m).index == branch))
    }

    /// Checks the bounded condition and the well-definedness of every branch.
    pub fn validate(&self) -> BoundedConditionReport {
        let mut checks = Vec::new();
        let m = self.modulus;

        let mut overlap = None;
        let mut uncovered = None;
        for r in 0..m {
            let hits = self.branches.iter().filter(|b| b.guard.contains_residue(r)).count();
            if hits > 1 && overlap.is_none() {
                overlap = Some(r);
            }
            if hits == 0 && uncovered.is_none() {
                uncovered = Some(r);
            }
        }
        checks.push(Check::new(CheckKind::GuardsDisjoint, None, overlap));
        checks.push(Check::new(CheckKind::GuardsCover, None, uncovered));

        for b in &self.branches {
            let l = m.lcm(&b.div);
            let classes = b.guard.lift(l).expect("lcm of a u64 modulus and divisor");
            let mut not_divisible = None;
            let mut not_positive = None;
            for &r in classes.residues() {
                let least = classes.least_member(r);
                let num = b.mul as i128 * least as i128 + b.add as i128;
                if num.rem_euclid(b.div as i128) != 0 {
                    not_divisible.get_or_insert(r);
                } else if num / (b.div as i128) < 1 {
                    // a ≥ 1 makes the branch increasing, so the least member decides
                    not_positive.get_or_insert(least);
                }
            }
            checks.push(Check::new(CheckKind::Divisibility, Some(b.index), not_divisible));
            checks.push(Check::new(CheckKind::Positivity, Some(b.index), not_positive));
            let not_injective = if b.mul == 0 && !b.guard.is_empty() {
                Some(b.guard.least_member(b.guard.residues()[0]))
            } else {
                None
            };
            checks.push(Check::new(CheckKind::Injectivity, Some(b.index), not_injective));
        }
        BoundedConditionReport { map: self.name.clone(), modulus: m, k: self.k(), checks }
    }

    /// Parses the TOML map format:
    ///
    /// ```toml
    /// modulus = 2
    /// [[branch]]
    /// residues = [1]
    /// a = 3
    /// b = 1
    /// c = 1
    /// ```
    pub fn from_toml(name: impl Into<String>, text: &str) -> Result<Self, MapError> {
        let file: MapFile = toml::from_str(text).map_err(|e| MapError::Parse(e.to_string()))?;
        let mut branches = Vec::with_capacity(file.branch.len());
        for (i, b) in file.branch.into_iter().enumerate() {
            let guard = ResidueSet::new(file.modulus, b.residues)
                .map_err(|source| MapError::Guard { branch: i + 1, source })?;
            branches.push(AffineBranch::new(guard, b.a, b.b, b.c));
        }
        GCMap::new(name, branches)
    }

    pub fn from_file(path: &Path) -> Result<Self, MapError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| MapError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(path.display().to_string(), &text)
    }

    /// True when both maps act identically on every residue class.
    pub fn same_action(&self, other: &GCMap) -> bool {
        let m = self.modulus.lcm(&other.modulus);
        (0..m).all(|r| {
            match (self.branch_for_residue(r % self.modulus), other.branch_for_residue(r % other.modulus)) {
                (Some(a), Some(b)) => {
                    // compare on two members of the class; affine maps agreeing at two points agree
                    let first = if r == 0 { m } else { r };
                    [first, first + m].iter().all(|&n| a.eval_u64(n) == b.eval_u64(n))
                }
                (None, None) => true,
                _ => false,
            }
        })
    }
}

impl fmt::Display for GCMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} (modulus {}, k = {})", self.name, self.modulus, self.k())?;
        for b in &self.branches {
            writeln!(f, "  X{}: n in {} -> ({}n {:+})/{}", b.index, b.guard.reduce(), b.mul, b.add, b.div)?;
        }
        Ok(())
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MapFile {
    modulus: u64,
    branch: Vec<BranchFile>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct BranchFile {
    residues: Vec<u64>,
    a: u64,
    b: i64,
    c: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    GuardsDisjoint,
    GuardsCover,
    Divisibility,
    Positivity,
    Injectivity,
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct Check {
    pub kind: CheckKind,
    pub branch: Option<usize>,
    pub passed: bool,
    /// Offending residue (or least offending member for positivity/injectivity).
    pub counterexample: Option<u64>,
}

impl Check {
    fn new(kind: CheckKind, branch: Option<usize>, counterexample: Option<u64>) -> Self {
        Self { kind, branch, passed: counterexample.is_none(), counterexample }
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct BoundedConditionReport {
    pub map: String,
    pub modulus: u64,
    pub k: usize,
    pub checks: Vec<Check>,
}

impl BoundedConditionReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.passed)
    }
}
