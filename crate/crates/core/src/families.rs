//! Preset maps and sections: Collatz, `qx+1`, `3x+d`, Mersenne, plus the
//! modular identities their sections rest on.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use num_bigint::BigUint;
use num_integer::Integer;
use serde::Serialize;

use crate::conditions::{image_section, residue_image, WitnessTable};
use crate::dynamics::{check_reduction_necessary, check_reduction_sufficient, MeetsSectionReport, PeriodicPointReport};
use crate::map::{AffineBranch, GCMap};
use crate::report::Status;
use crate::residue::{ResidueSet, Section};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FamilyError {
    #[error("parameter must be odd and positive, got {0}")]
    NotOddPositive(u64),
    #[error("Mersenne sections need k > 2 (use the collatz preset for k = 2), got {0}")]
    MersenneTooSmall(u32),
    #[error("Mersenne exponent {0} is too large")]
    MersenneTooLarge(u32),
    #[error("unknown preset {0:?}; expected collatz, identity, qx1:<q>, 3xd:<d> or mersenne:<k>")]
    UnknownPreset(String),
    #[error("section construction failed: {0}")]
    Construction(String),
}

fn odd_even(name: String, mul: u64, add: i64) -> GCMap {
    let odd = AffineBranch::new(ResidueSet::new(2, [1]).expect("valid"), mul, add, 1);
    let even = AffineBranch::new(ResidueSet::new(2, [0]).expect("valid"), 1, 0, 2);
    GCMap::new(name, vec![odd, even]).expect("valid two-branch map")
}

fn check_odd(v: u64) -> Result<(), FamilyError> {
    if v == 0 || v % 2 == 0 {
        Err(FamilyError::NotOddPositive(v))
    } else {
        Ok(())
    }
}

/// `3n+1` on odd `n`, `n/2` on even `n`.
pub fn collatz() -> GCMap {
    odd_even("collatz".into(), 3, 1)
}

/// `qn+1` on odd `n`, `n/2` on even `n`.
pub fn qx1(q: u64) -> Result<GCMap, FamilyError> {
    check_odd(q)?;
    if q > i64::MAX as u64 / 4 {
        return Err(FamilyError::NotOddPositive(q));
    }
    Ok(odd_even(format!("qx1:{q}"), q, 1))
}

/// `3n+d` on odd `n`, `n/2` on even `n`.
pub fn three_x_d(d: u64) -> Result<GCMap, FamilyError> {
    check_odd(d)?;
    let add = i64::try_from(d).map_err(|_| FamilyError::NotOddPositive(d))?;
    Ok(odd_even(format!("3xd:{d}"), 3, add))
}

/// The one-branch identity map, a negative control for class computations.
pub fn identity() -> GCMap {
    GCMap::new("identity", vec![AffineBranch::new(ResidueSet::all(), 1, 0, 1)]).expect("valid")
}

fn pure(modulus: u64, residues: &[u64]) -> Section {
    Section::from(ResidueSet::new(modulus, residues.iter().copied()).expect("valid residues"))
}

/// `N₁ = {1,5} mod 6`, `N₂ = {4,16} mod 18`.
pub fn section_collatz() -> (Section, Section) {
    (pure(6, &[1, 5]), pure(18, &[4, 16]))
}

/// `N₁ = {1,3,7,9} mod 10`, `N₂ = {6,16,36,46} mod 50` for `5n+1`.
pub fn section_q5() -> (Section, Section) {
    (pure(10, &[1, 3, 7, 9]), pure(50, &[6, 16, 36, 46]))
}

/// Least multiplier exponents for the Collatz section, one per class mod 18.
pub fn collatz_witnesses() -> WitnessTable {
    let exponents = [(1, 2), (4, 2), (13, 2), (5, 3), (7, 4), (16, 4), (11, 1), (17, 1)].into_iter().collect();
    WitnessTable { modulus: 18, exponents }
}

/// `q = 2^k − 1` with `k > 2`.
pub fn mersenne_q(k: u32) -> Result<u64, FamilyError> {
    if k <= 2 {
        return Err(FamilyError::MersenneTooSmall(k));
    }
    if k > 10 {
        return Err(FamilyError::MersenneTooLarge(k));
    }
    Ok((1u64 << k) - 1)
}

/// `N₁ = {n odd : 2n ≡ 2^l (mod 2q²) for some l ≥ 1}`, found by walking the
/// powers of 2 mod `2q²`; `N₂ = f_q(N₁)`.
pub fn section_mersenne(k: u32) -> Result<(Section, Section), FamilyError> {
    let q = mersenne_q(k)?;
    let modulus = 2 * q * q;
    let mut powers = BTreeSet::new();
    let mut p = 2 % modulus;
    while powers.insert(p) {
        p = p * 2 % modulus;
    }
    let n1 = ResidueSet::new(modulus, (1..modulus).step_by(2).filter(|&r| powers.contains(&(2 * r % modulus))))
        .map_err(|e| FamilyError::Construction(e.to_string()))?;
    let n2 = residue_image(&qx1(q)?, &n1).map_err(|e| FamilyError::Construction(e.to_string()))?;
    Ok((Section::from(n1), Section::from(n2)))
}

/// 3-adic valuation.
fn v3(mut d: u64) -> u32 {
    let mut k = 0;
    while d % 3 == 0 {
        d /= 3;
        k += 1;
    }
    k
}

/// `N₁ = {3^k, 5·3^k} mod 6·3^k` with `k = v₃(d)`, and `N₂` the shifted
/// classes `{n + d : n ≡ 3·3^k, 15·3^k (mod 18·3^k)}`. Members of those
/// classes not exceeding `d` are excluded.
pub fn section_3xd(d: u64) -> Result<(Section, Section), FamilyError> {
    check_odd(d)?;
    let t = 3u64.pow(v3(d));
    let n1 = pure(6 * t, &[t, 5 * t]);
    let m2 = 18 * t;
    let classes = ResidueSet::new(m2, [(3 * t + d) % m2, (15 * t + d) % m2])
        .map_err(|e| FamilyError::Construction(e.to_string()))?;
    let excluded = (1..=d).filter(|&x| classes.contains(x)).collect();
    Ok((n1, Section::new(classes, excluded, BTreeSet::new())))
}

/// The exact image of a section's first piece, for comparison with a stated `N₂`.
pub fn image_of_n1(map: &GCMap, n1: &Section) -> Result<Section, FamilyError> {
    image_section(map, n1.classes()).map_err(|e| FamilyError::Construction(e.to_string()))
}

/// A named map with its section, witnesses and periodic point, if any.
#[derive(Clone, Debug)]
pub struct Preset {
    pub map: GCMap,
    pub section: Option<(Section, Section)>,
    pub witnesses: Option<WitnessTable>,
    /// A periodic point of the map lying in the section.
    pub periodic_point: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PresetName {
    Collatz,
    Identity,
    Qx1(u64),
    ThreeXD(u64),
    Mersenne(u32),
}

impl FromStr for PresetName {
    type Err = FamilyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let unknown = || FamilyError::UnknownPreset(s.to_owned());
        match s.split_once(':') {
            None if s == "collatz" => Ok(PresetName::Collatz),
            None if s == "identity" => Ok(PresetName::Identity),
            Some(("qx1", q)) => q.parse().map(PresetName::Qx1).map_err(|_| unknown()),
            Some(("3xd", d)) => d.parse().map(PresetName::ThreeXD).map_err(|_| unknown()),
            Some(("mersenne", k)) => k.parse().map(PresetName::Mersenne).map_err(|_| unknown()),
            _ => Err(unknown()),
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PresetName::Collatz => write!(f, "collatz"),
            PresetName::Identity => write!(f, "identity"),
            PresetName::Qx1(q) => write!(f, "qx1:{q}"),
            PresetName::ThreeXD(d) => write!(f, "3xd:{d}"),
            PresetName::Mersenne(k) => write!(f, "mersenne:{k}"),
        }
    }
}

impl PresetName {
    pub fn build(self) -> Result<Preset, FamilyError> {
        let generated = |sec: &(Section, Section)| {
            WitnessTable::generate(&sec.0, &sec.1).map_err(|e| FamilyError::Construction(e.to_string()))
        };
        let with_section = |map: GCMap, section: (Section, Section), witnesses: Option<WitnessTable>, point| {
            let witnesses = match witnesses {
                Some(w) => w,
                None => generated(&section)?,
            };
            Ok(Preset { map, section: Some(section), witnesses: Some(witnesses), periodic_point: point })
        };
        match self {
            PresetName::Collatz | PresetName::Qx1(3) => {
                let map = if self == PresetName::Collatz { collatz() } else { qx1(3)? };
                with_section(map, section_collatz(), Some(collatz_witnesses()), 1)
            }
            PresetName::Identity => Ok(Preset { map: identity(), section: None, witnesses: None, periodic_point: 1 }),
            PresetName::Qx1(5) => with_section(qx1(5)?, section_q5(), None, 1),
            PresetName::Qx1(q) => {
                let map = qx1(q)?;
                let k = (q + 1).trailing_zeros();
                if (q + 1).is_power_of_two() && k > 2 && k <= 10 {
                    with_section(map, section_mersenne(k)?, None, 1)
                } else {
                    Ok(Preset { map, section: None, witnesses: None, periodic_point: 1 })
                }
            }
            PresetName::Mersenne(k) => {
                let q = mersenne_q(k)?;
                with_section(qx1(q)?.with_name(self.to_string()), section_mersenne(k)?, None, 1)
            }
            PresetName::ThreeXD(d) => with_section(three_x_d(d)?, section_3xd(d)?, None, d),
        }
    }
}

/// One family of congruences and the instances where it failed.
#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CongruenceCheck {
    pub identity: String,
    pub instances: u64,
    pub failures: Vec<CongruenceFailure>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct CongruenceFailure {
    pub k: Option<u32>,
    pub l: Option<u64>,
    pub m: Option<u64>,
    pub lhs: u64,
    pub rhs: u64,
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ModularReport {
    pub subject: String,
    pub checks: Vec<CongruenceCheck>,
    pub status: Status,
}

impl ModularReport {
    fn new(subject: String, checks: Vec<CongruenceCheck>) -> Self {
        let status = if checks.iter().all(|c| c.failures.is_empty()) { Status::Pass } else { Status::Fail };
        Self { subject, checks, status }
    }
}

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    (a as u128 * b as u128 % m as u128) as u64
}

fn pow_mod(base: u64, exp: u64, m: u64) -> u64 {
    BigUint::from(base).modpow(&BigUint::from(exp), &BigUint::from(m)).try_into().expect("below modulus")
}

/// Multiplicative order of `a` modulo `m`, for `gcd(a, m) = 1`.
pub fn multiplicative_order(a: u64, m: u64) -> Option<u64> {
    if a.gcd(&m) != 1 {
        return None;
    }
    let mut v = a % m;
    let mut n = 1;
    while v != 1 % m {
        v = mul_mod(v, a, m);
        n += 1;
    }
    Some(n)
}

/// `{n mod 50 : gcd(n,10) = 2} = {2^κ mod 50 : 1 ≤ κ ≤ 20}` and the order
/// of 2 mod 25 is 20.
pub fn verify_q5_group() -> ModularReport {
    let left: BTreeSet<u64> = (0..50).filter(|n: &u64| n.gcd(&10) == 2).collect();
    let right: BTreeSet<u64> = (1..=20).map(|e| pow_mod(2, e, 50)).collect();
    let mut set_check = CongruenceCheck { identity: "gcd-2 residues mod 50 are the powers of 2".into(), instances: 1, failures: vec![] };
    for &v in left.symmetric_difference(&right) {
        set_check.failures.push(CongruenceFailure { k: None, l: None, m: None, lhs: v, rhs: 0 });
    }
    let order = multiplicative_order(2, 25).unwrap_or(0);
    let mut order_check = CongruenceCheck { identity: "order of 2 mod 25 is 20".into(), instances: 1, failures: vec![] };
    if order != 20 {
        order_check.failures.push(CongruenceFailure { k: None, l: None, m: None, lhs: order, rhs: 20 });
    }
    let mut size_check = CongruenceCheck { identity: "20 residues mod 50 with gcd 2".into(), instances: 1, failures: vec![] };
    if left.len() != 20 {
        size_check.failures.push(CongruenceFailure { k: None, l: None, m: None, lhs: left.len() as u64, rhs: 20 });
    }
    ModularReport::new("q=5".into(), vec![set_check, order_check, size_check])
}

/// The congruences behind the Mersenne section for `q = 2^k − 1`, modulo
/// `2q²`, checked for every `l` and `m` up to `q`.
pub fn verify_mersenne_identities(k: u32) -> Result<ModularReport, FamilyError> {
    let q = mersenne_q(k)?;
    let m2 = 2 * q * q;
    let base = 1 + q;
    let fail = |l: Option<u64>, m: Option<u64>, lhs, rhs| CongruenceFailure { k: Some(k), l, m, lhs, rhs };

    let mut fixed = CongruenceCheck { identity: "(1+q)^(1+q) = 1+q".into(), instances: 1, failures: vec![] };
    let lhs = pow_mod(base, base, m2);
    if lhs != base % m2 {
        fixed.failures.push(fail(Some(base), None, lhs, base % m2));
    }

    let powers: Vec<u64> = (1..=q).map(|l| pow_mod(base, l, m2)).collect();
    let mut distinct = CongruenceCheck { identity: "(1+q)^l distinct for 1 <= l <= q".into(), instances: q, failures: vec![] };
    let mut first_at = std::collections::HashMap::new();
    for (i, &v) in powers.iter().enumerate() {
        let l = i as u64 + 1;
        if let Some(&earlier) = first_at.get(&v) {
            distinct.failures.push(fail(Some(l), Some(earlier), v, v));
        } else {
            first_at.insert(v, l);
        }
    }

    let odd_multiples: BTreeSet<u64> = (0..q).map(|i| (1 + (2 * i + 1) * q) % m2).collect();
    let power_set: BTreeSet<u64> = powers.iter().copied().collect();
    let mut closed = CongruenceCheck {
        identity: "{(1+q)^l} = {1+q, 1+3q, ..., 1+(2q-1)q}".into(),
        instances: q,
        failures: vec![],
    };
    for &v in power_set.symmetric_difference(&odd_multiples) {
        closed.failures.push(fail(None, None, v, v));
    }

    let mut doubled = CongruenceCheck { identity: "2(1+q)^(2m) = 2+4mq".into(), instances: q, failures: vec![] };
    for m in 1..=q {
        let lhs = mul_mod(2, pow_mod(base, 2 * m, m2), m2);
        let rhs = ((2 + 4 * m as u128 * q as u128) % m2 as u128) as u64;
        if lhs != rhs {
            doubled.failures.push(fail(None, Some(m), lhs, rhs));
        }
    }
    Ok(ModularReport::new(format!("mersenne:{k}"), vec![fixed, distinct, closed, doubled]))
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct OrbitMeetsSectionReport {
    pub k: u32,
    pub meets: MeetsSectionReport,
    pub periodic_point: PeriodicPointReport,
    pub status: Status,
}

/// Every orbit from `1..=window` meets the Mersenne section, and the
/// `P`-orbit of 1 is the `f_q`-orbit of 1 cut down to the section.
pub fn verify_mersenne_orbit_meets_section(k: u32, window: u64, fuel: u64) -> Result<OrbitMeetsSectionReport, FamilyError> {
    let q = mersenne_q(k)?;
    let map = qx1(q)?;
    let (n1, n2) = section_mersenne(k)?;
    let sigma = n1.union(&n2).map_err(|e| FamilyError::Construction(e.to_string()))?;
    let meets = check_reduction_sufficient(&map, &sigma, window, fuel);
    let periodic_point = check_reduction_necessary(&map, &sigma, &BigUint::from(1u32), fuel)
        .map_err(|e| FamilyError::Construction(e.to_string()))?;
    let status = meets.status.and(periodic_point.status);
    Ok(OrbitMeetsSectionReport { k, meets, periodic_point, status })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conditions::ck_for_section;

    #[test]
    fn maps_coincide_and_validate() {
        assert!(collatz().same_action(&qx1(3).unwrap()));
        assert!(collatz().same_action(&three_x_d(1).unwrap()));
        assert_eq!(qx1(5).unwrap().apply_u64(1), Some(6));
        assert_eq!(three_x_d(5).unwrap().apply_u64(5), Some(20));
        for f in [collatz(), identity(), qx1(5).unwrap(), qx1(7).unwrap(), three_x_d(9).unwrap()] {
            assert!(f.validate().passed(), "{}", f.name());
        }
        assert_eq!(qx1(4).unwrap_err(), FamilyError::NotOddPositive(4));
        assert_eq!(three_x_d(0).unwrap_err(), FamilyError::NotOddPositive(0));
    }

    #[test]
    fn collatz_section() {
        let (n1, n2) = section_collatz();
        assert!(n1.contains(5) && n2.contains(16) && !n1.contains(8) && !n2.contains(8));
        assert_eq!(n1.classes().lift(18).unwrap().residues(), &[1, 5, 7, 11, 13, 17]);
        assert_eq!(image_of_n1(&collatz(), &n1).unwrap(), n2);
    }

    #[test]
    fn q5_section() {
        let (n1, n2) = section_q5();
        let f = qx1(5).unwrap();
        assert!(n1.contains(13));
        assert_eq!(image_of_n1(&f, &n1).unwrap(), n2);
        for n in n1.members_up_to(10_000) {
            assert!(n2.contains(f.apply_u64(n).unwrap()), "{n}");
        }
    }

    #[test]
    fn mersenne_sections() {
        let (n1, _) = section_mersenne(3).unwrap();
        assert!(n1.contains(1));
        for n in (1..1000).filter(|n| n % 14 == 1) {
            assert!(n1.contains(n), "{n}");
        }
        // oracle: odd n below 98 with 2n a power of two mod 98
        let brute: Vec<u64> =
            (1..98).filter(|&n| n % 2 == 1 && (1..200).any(|l| pow_mod(2, l, 98) == 2 * n % 98)).collect();
        assert_eq!(n1.classes().lift(98).unwrap().residues(), &brute[..]);
        assert_eq!(section_mersenne(2).unwrap_err(), FamilyError::MersenneTooSmall(2));
    }

    #[test]
    fn three_x_d_sections_match_images() {
        assert_eq!(section_3xd(1).unwrap(), section_collatz());
        let (n1, _) = section_3xd(5).unwrap();
        assert!(n1.contains(5));
        let (n1, n2) = section_3xd(9).unwrap();
        assert_eq!(n1.classes(), &ResidueSet::new(54, [9, 45]).unwrap());
        assert!(n1.contains(9));
        for d in [1, 3, 5, 7, 9, 11, 15, 27, 45, 81] {
            let (n1, n2s) = section_3xd(d).unwrap();
            assert_eq!(image_of_n1(&three_x_d(d).unwrap(), &n1).unwrap(), n2s, "d={d}");
        }
        assert!(n2.contains(36) && !n2.contains(9));
    }

    #[test]
    fn presets_parse_and_build() {
        for (s, name) in [
            ("collatz", PresetName::Collatz),
            ("qx1:5", PresetName::Qx1(5)),
            ("3xd:9", PresetName::ThreeXD(9)),
            ("mersenne:4", PresetName::Mersenne(4)),
        ] {
            assert_eq!(s.parse::<PresetName>().unwrap(), name);
            assert_eq!(name.to_string(), s);
        }
        assert!("qx1".parse::<PresetName>().is_err());
        assert!("foo:3".parse::<PresetName>().is_err());
        assert!(PresetName::Mersenne(2).build().is_err());
        assert!(PresetName::Qx1(7).build().unwrap().section.is_some());
        assert!(PresetName::Qx1(9).build().unwrap().section.is_none());
    }

    #[test]
    fn every_preset_section_passes_ck() {
        for name in ["collatz", "qx1:5", "mersenne:3", "mersenne:4", "3xd:1", "3xd:3", "3xd:5", "3xd:9"] {
            let p: Preset = name.parse::<PresetName>().unwrap().build().unwrap();
            assert!(p.map.validate().passed());
            let (n1, n2) = p.section.unwrap();
            let r = ck_for_section(&p.map, &n1, &n2, &p.witnesses.unwrap(), 3_000, 10_000).unwrap();
            assert_eq!(r.status, Status::Pass, "{name}: {r:#?}");
        }
    }

    #[test]
    fn modular_identities() {
        assert_eq!(pow_mod(8, 8, 98), 8);
        assert_eq!(pow_mod(16, 16, 450), 16);
        assert_eq!((1..=7).map(|l| pow_mod(8, l, 98)).collect::<BTreeSet<_>>().len(), 7);
        for k in 3..=6 {
            let r = verify_mersenne_identities(k).unwrap();
            assert_eq!(r.status, Status::Pass, "{r:#?}");
        }
        assert_eq!(verify_q5_group().status, Status::Pass);
        assert_eq!(multiplicative_order(2, 25), Some(20));
    }

    #[test]
    fn mersenne_orbits_meet_section() {
        let r = verify_mersenne_orbit_meets_section(3, 200, 10_000).unwrap();
        assert_ne!(r.status, Status::Fail);
        assert!(r.meets.failures.is_empty());
        assert_eq!(r.periodic_point.status, Status::Pass);
    }
}
