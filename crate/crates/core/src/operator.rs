//! Finite truncations of the operators `T`, `T_i`, `S_i` on the span of
//! `{e_n}`, with exact integer arithmetic and exactness tracking.
//!
//! A truncated column is *exact* when it equals the corresponding column of
//! the infinite operator, i.e. nothing in it was cut off by the window; rows
//! likewise. Products and sums propagate these flags, and identities are only
//! compared on columns that are exact on both sides.

use std::collections::{BTreeSet, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::sync::Arc;

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use crate::conditions::{image_section, separating_condition, Itinerary};
use crate::dynamics::{classes, DomainError, FirstReturnMap};
use crate::families::collatz;
use crate::map::GCMap;
use crate::report::Status;
use crate::residue::Section;

/// Sorted, distinct positive basis labels `n` of the vectors `e_n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BasisWindow {
    elements: Vec<u64>,
    position: HashMap<u64, u32>,
}

impl BasisWindow {
    pub fn new(elements: impl IntoIterator<Item = u64>) -> Result<Self, DomainError> {
        let set: BTreeSet<u64> = elements.into_iter().collect();
        if set.contains(&0) {
            return Err(DomainError::NotPositive);
        }
        let elements: Vec<u64> = set.into_iter().collect();
        let position = elements.iter().enumerate().map(|(i, &n)| (n, i as u32)).collect();
        Ok(Self { elements, position })
    }

    /// `{1, …, limit}`.
    pub fn range(limit: u64) -> Self {
        Self::new(1..=limit).expect("positive labels")
    }

    /// `Σ ∩ [1, limit]`.
    pub fn from_section(section: &Section, limit: u64) -> Self {
        Self::new(section.members_up_to(limit)).expect("positive labels")
    }

    pub fn elements(&self) -> &[u64] {
        &self.elements
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn contains(&self, n: u64) -> bool {
        self.position.contains_key(&n)
    }

    pub fn position(&self, n: u64) -> Option<usize> {
        self.position.get(&n).map(|&p| p as usize)
    }

    pub fn label(&self, pos: usize) -> u64 {
        self.elements[pos]
    }
}

type Column = Vec<(u32, i64)>;

/// A sparse integer matrix on a [`BasisWindow`], stored by columns, with a
/// per-index flag saying whether the column (row) is the true one.
#[derive(Clone, Debug)]
pub struct TruncatedOperator {
    window: Arc<BasisWindow>,
    cols: Vec<Column>,
    col_exact: Vec<bool>,
    row_exact: Vec<bool>,
}

impl TruncatedOperator {
    pub fn zero(window: &Arc<BasisWindow>) -> Self {
        let n = window.len();
        Self { window: window.clone(), cols: vec![Vec::new(); n], col_exact: vec![true; n], row_exact: vec![true; n] }
    }

    pub fn identity(window: &Arc<BasisWindow>) -> Self {
        Self::diagonal(window, |_| true)
    }

    /// Projection onto the `e_n` with `keep(n)`.
    pub fn diagonal(window: &Arc<BasisWindow>, keep: impl Fn(u64) -> bool) -> Self {
        let mut op = Self::zero(window);
        for (p, &n) in window.elements.iter().enumerate() {
            if keep(n) {
                op.cols[p].push((p as u32, 1));
            }
        }
        op
    }

    pub fn window(&self) -> &Arc<BasisWindow> {
        &self.window
    }

    /// The `(row, col)` entry, by labels; 0 off the window.
    pub fn entry(&self, row: u64, col: u64) -> i64 {
        let (Some(r), Some(c)) = (self.window.position(row), self.window.position(col)) else {
            return 0;
        };
        self.cols[c].iter().find(|e| e.0 as usize == r).map_or(0, |e| e.1)
    }

    /// Nonzero entries of column `col` as `(row label, value)`.
    pub fn column(&self, col: u64) -> Vec<(u64, i64)> {
        self.window
            .position(col)
            .map(|c| self.cols[c].iter().map(|&(r, v)| (self.window.label(r as usize), v)).collect())
            .unwrap_or_default()
    }

    pub fn column_is_exact(&self, col: u64) -> bool {
        self.window.position(col).is_some_and(|c| self.col_exact[c])
    }

    pub fn row_is_exact(&self, row: u64) -> bool {
        self.window.position(row).is_some_and(|r| self.row_exact[r])
    }

    /// Labels whose column and row are both exact.
    pub fn interior(&self) -> Vec<u64> {
        (0..self.window.len())
            .filter(|&p| self.col_exact[p] && self.row_exact[p])
            .map(|p| self.window.label(p))
            .collect()
    }

    pub fn nnz(&self) -> usize {
        self.cols.iter().map(Vec::len).sum()
    }

    /// Overwrites one entry; the exactness flags are left alone.
    pub fn set_entry(&mut self, row: u64, col: u64, value: i64) {
        let r = self.window.position(row).expect("row in window") as u32;
        let c = self.window.position(col).expect("column in window");
        let column = &mut self.cols[c];
        column.retain(|e| e.0 != r);
        if value != 0 {
            column.push((r, value));
            column.sort_unstable();
        }
    }

    fn rows(&self) -> Vec<Vec<u32>> {
        let mut rows = vec![Vec::new(); self.window.len()];
        for (c, col) in self.cols.iter().enumerate() {
            for &(r, _) in col {
                rows[r as usize].push(c as u32);
            }
        }
        rows
    }

    /// Transpose, which is the adjoint for real matrices.
    pub fn adjoint(&self) -> Self {
        let mut cols: Vec<Column> = vec![Vec::new(); self.window.len()];
        for (c, col) in self.cols.iter().enumerate() {
            for &(r, v) in col {
                cols[r as usize].push((c as u32, v));
            }
        }
        Self {
            window: self.window.clone(),
            cols,
            col_exact: self.row_exact.clone(),
            row_exact: self.col_exact.clone(),
        }
    }

    fn same_window(&self, other: &Self) {
        assert!(
            Arc::ptr_eq(&self.window, &other.window) || self.window == other.window,
            "operators live on different windows"
        );
    }

    /// `self · rhs`.
    ///
    /// Column `p` of the product is exact when column `p` of `rhs` is exact
    /// and so is every column of `self` it touches; rows dually.
    pub fn mul(&self, rhs: &Self) -> Self {
        self.same_window(rhs);
        let n = self.window.len();
        let mut cols = Vec::with_capacity(n);
        let mut col_exact = Vec::with_capacity(n);
        for p in 0..n {
            let mut col: Column = Vec::new();
            for &(q, v) in &rhs.cols[p] {
                col.extend(self.cols[q as usize].iter().map(|&(r, w)| (r, v * w)));
            }
            cols.push(merge(col));
            col_exact.push(rhs.col_exact[p] && rhs.cols[p].iter().all(|&(q, _)| self.col_exact[q as usize]));
        }
        let rows = self.rows();
        let row_exact = (0..n)
            .map(|r| self.row_exact[r] && rows[r].iter().all(|&q| rhs.row_exact[q as usize]))
            .collect();
        Self { window: self.window.clone(), cols, col_exact, row_exact }
    }

    fn combine(&self, rhs: &Self, sign: i64) -> Self {
        self.same_window(rhs);
        let cols = self
            .cols
            .iter()
            .zip(&rhs.cols)
            .map(|(a, b)| merge(a.iter().copied().chain(b.iter().map(|&(r, v)| (r, sign * v))).collect()))
            .collect();
        let and = |x: &[bool], y: &[bool]| x.iter().zip(y).map(|(a, b)| *a && *b).collect();
        Self {
            window: self.window.clone(),
            cols,
            col_exact: and(&self.col_exact, &rhs.col_exact),
            row_exact: and(&self.row_exact, &rhs.row_exact),
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        self.combine(rhs, 1)
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.combine(rhs, -1)
    }

    /// Sparse triplet dump: a header line `# labels nnz`, then one
    /// `row col value` line per nonzero entry, by basis label, column-major.
    pub fn to_triplets(&self) -> String {
        let mut out = format!("# {} {}\n", self.window.len(), self.nnz());
        for (c, col) in self.cols.iter().enumerate() {
            for &(r, v) in col {
                let _ = writeln!(out, "{} {} {}", self.window.label(r as usize), self.window.label(c), v);
            }
        }
        out
    }

    /// Exact entrywise equality with `other` on columns exact in both.
    pub fn agrees_with(&self, other: &Self) -> bool {
        let check = check_identity("agree", self, other);
        check.mismatches == 0
    }
}

fn merge(mut col: Column) -> Column {
    col.sort_unstable_by_key(|e| e.0);
    let mut out: Column = Vec::with_capacity(col.len());
    for (r, v) in col {
        match out.last_mut() {
            Some(last) if last.0 == r => last.1 += v,
            _ => out.push((r, v)),
        }
    }
    out.retain(|e| e.1 != 0);
    out
}

/// All `(branch index, m)` with `f(m) = n`; `None` if a constant branch makes
/// the preimage infinite.
fn preimages_u64(map: &GCMap, n: u64) -> Option<Vec<(usize, u64)>> {
    let mut out = Vec::new();
    for b in map.branches() {
        if b.mul() == 0 {
            if b.add() >= 0 && b.add() as u64 / b.div() == n && b.add() as u64 % b.div() == 0 {
                return None;
            }
            continue;
        }
        let num = n as i128 * b.div() as i128 - b.add() as i128;
        if num <= 0 || num % b.mul() as i128 != 0 {
            continue;
        }
        let Ok(m) = u64::try_from(num / b.mul() as i128) else { continue };
        if b.guard().contains(m) {
            out.push((b.index(), m));
        }
    }
    Some(out)
}

fn map_op(map: &GCMap, window: &Arc<BasisWindow>, branch: Option<usize>) -> TruncatedOperator {
    let mut op = TruncatedOperator::zero(window);
    for (p, &n) in window.elements.iter().enumerate() {
        let b = map.branch_of_u64(n);
        if branch.is_none_or(|i| i == b.index()) {
            let image = b.eval_u64(n).and_then(|v| window.position(v));
            match image {
                Some(r) => op.cols[p].push((r as u32, 1)),
                None => op.col_exact[p] = false,
            }
        }
        op.row_exact[p] = match preimages_u64(map, n) {
            None => false,
            Some(pre) => pre.iter().filter(|(i, _)| branch.is_none_or(|j| j == *i)).all(|&(_, m)| window.contains(m)),
        };
    }
    op
}

/// `T e_n = e_{f(n)}`, truncated to the window.
pub fn build_t(map: &GCMap, window: &BasisWindow) -> TruncatedOperator {
    map_op(map, &Arc::new(window.clone()), None)
}

/// `T_i e_n = e_{f(n)}` for `n` in the guard of branch `i`, else 0.
pub fn build_branch_ops(map: &GCMap, window: &BasisWindow) -> Vec<TruncatedOperator> {
    let window = Arc::new(window.clone());
    (1..=map.k()).map(|i| map_op(map, &window, Some(i))).collect()
}

/// `T₁`, `T₂` from the first-return map on `N₁ ∪ N₂`, and `S₁ = T₁*T₂*`,
/// `S₂ = T₂*`.
#[derive(Clone, Debug)]
pub struct SectionOps {
    pub t1: TruncatedOperator,
    pub t2: TruncatedOperator,
    pub s1: TruncatedOperator,
    pub s2: TruncatedOperator,
    /// Columns where `P` ran out of fuel.
    pub inconclusive: Vec<u64>,
}

/// Builds the section operators on a window inside `N₁ ∪ N₂`.
///
/// Rows of `T₁` are exact when `f(N₁) ⊆ N₁ ∪ N₂`, since then `P = f` on
/// `N₁`. Rows of `T₂` use that a return from `N₂` is a run of halvings:
/// the only candidate preimage of `n` is `2^κ·n` for the least `κ ≥ 1` with
/// `2^κ·n` in the section, and it counts when it lies in `N₂` and returns to
/// `n`.
pub fn build_section_ops(
    map: &GCMap,
    n1: &Section,
    n2: &Section,
    window: &BasisWindow,
    fuel: u64,
) -> Result<SectionOps, DomainError> {
    let p = FirstReturnMap::on_pair(map.clone(), n1, n2, fuel);
    let sigma = p.section();
    if let Some(&bad) = window.elements.iter().find(|&&n| !sigma.contains(n)) {
        return Err(DomainError::NotInSection { value: bad.to_string() });
    }
    let window = Arc::new(window.clone());
    let t1_rows_known = n1.is_pure()
        && image_section(map, n1.classes()).is_ok_and(|img| section_within(&img, sigma));

    let mut t1 = TruncatedOperator::zero(&window);
    let mut t2 = TruncatedOperator::zero(&window);
    let mut inconclusive = Vec::new();
    for (pos, &n) in window.elements.iter().enumerate() {
        let op = if n1.contains(n) { &mut t1 } else { &mut t2 };
        match p.eval_u64(n)? {
            None => {
                op.col_exact[pos] = false;
                inconclusive.push(n);
            }
            Some(v) => match window.position(v) {
                Some(r) => op.cols[pos].push((r as u32, 1)),
                None => op.col_exact[pos] = false,
            },
        }

        t1.row_exact[pos] = t1_rows_known
            && preimages_u64(map, n)
                .is_some_and(|pre| pre.iter().filter(|(_, m)| n1.contains(*m)).all(|&(_, m)| window.contains(m)));

        t2.row_exact[pos] = match (1..64).map(|k| n.checked_shl(k).filter(|m| m >> k == n)).find(|m| {
            m.is_none_or(|m| sigma.contains(m))
        }) {
            Some(Some(m)) if n2.contains(m) => window.contains(m) && p.eval_u64(m)? == Some(n),
            Some(Some(_)) => true,
            _ => false,
        };
    }
    let s2 = t2.adjoint();
    let s1 = t1.adjoint().mul(&s2);
    Ok(SectionOps { t1, t2, s1, s2, inconclusive })
}

/// Sufficient test for `a ⊆ b`.
fn section_within(a: &Section, b: &Section) -> bool {
    let Ok(joined) = a.classes().union(b.classes()) else { return false };
    joined == *b.classes()
        && b.excluded().iter().all(|&e| !a.contains(e))
        && a.extra().iter().all(|&e| b.contains(e))
}

/// One mismatching entry of an identity `lhs = rhs`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct EntryWitness {
    pub row: u64,
    pub col: u64,
    pub expected: i64,
    pub actual: i64,
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct IdentityCheck {
    pub identity: String,
    /// Columns exact on both sides, where the identity was compared.
    pub checked: usize,
    pub skipped: usize,
    pub mismatches: usize,
    /// The first few mismatches.
    pub witnesses: Vec<EntryWitness>,
    pub status: Status,
}

const MAX_WITNESSES: usize = 8;

pub fn check_identity(name: &str, lhs: &TruncatedOperator, rhs: &TruncatedOperator) -> IdentityCheck {
    lhs.same_window(rhs);
    let w = &lhs.window;
    let mut check = IdentityCheck {
        identity: name.to_owned(),
        checked: 0,
        skipped: 0,
        mismatches: 0,
        witnesses: Vec::new(),
        status: Status::Pass,
    };
    for p in 0..w.len() {
        if !(lhs.col_exact[p] && rhs.col_exact[p]) {
            check.skipped += 1;
            continue;
        }
        check.checked += 1;
        let diff = merge(lhs.cols[p].iter().copied().chain(rhs.cols[p].iter().map(|&(r, v)| (r, -v))).collect());
        for (r, _) in diff {
            check.mismatches += 1;
            if check.witnesses.len() < MAX_WITNESSES {
                let (row, col) = (w.label(r as usize), w.label(p));
                check.witnesses.push(EntryWitness {
                    row,
                    col,
                    expected: rhs.entry(row, col),
                    actual: lhs.entry(row, col),
                });
            }
        }
    }
    check.status = if check.mismatches > 0 {
        Status::Fail
    } else if check.checked == 0 {
        Status::Inconclusive
    } else {
        Status::Pass
    };
    check
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct RelationReport {
    pub window_size: usize,
    pub identities: Vec<IdentityCheck>,
    pub status: Status,
}

impl RelationReport {
    fn new(window_size: usize, identities: Vec<IdentityCheck>) -> Self {
        let status = identities.iter().map(|c| c.status).collect();
        Self { window_size, identities, status }
    }

    pub fn get(&self, identity: &str) -> Option<&IdentityCheck> {
        self.identities.iter().find(|c| c.identity == identity)
    }
}

/// `T_i*T_i` is the projection onto the guard of branch `i`, these sum to
/// the identity, and `Σ T_i = T`.
pub fn verify_branch_relations(map: &GCMap, ops: &[TruncatedOperator]) -> RelationReport {
    let window = ops[0].window.clone();
    let id = TruncatedOperator::identity(&window);
    let mut checks = Vec::new();
    let mut sum_proj = TruncatedOperator::zero(&window);
    let mut sum = TruncatedOperator::zero(&window);
    for (i, t) in ops.iter().enumerate() {
        let guard = map.branches()[i].guard();
        let proj = TruncatedOperator::diagonal(&window, |n| guard.contains(n));
        let tt = t.adjoint().mul(t);
        checks.push(check_identity(&format!("T{0}*T{0} = P_X{0}", i + 1), &tt, &proj));
        sum_proj = sum_proj.add(&tt);
        sum = sum.add(t);
    }
    checks.push(check_identity("sum Ti*Ti = I", &sum_proj, &id));
    let t = map_op(map, &window, None);
    checks.push(check_identity("sum Ti = T", &sum, &t));
    RelationReport::new(window.len(), checks)
}

/// The Cuntz relations for `S₁, S₂` and `T₂*T₂T₁ = T₁`.
pub fn verify_section_relations(ops: &SectionOps, n1: &Section) -> RelationReport {
    let window = ops.t1.window.clone();
    let id = TruncatedOperator::identity(&window);
    let zero = TruncatedOperator::zero(&window);
    let p1 = TruncatedOperator::diagonal(&window, |n| n1.contains(n));
    let p2 = TruncatedOperator::diagonal(&window, |n| !n1.contains(n));
    let (s1, s2) = (&ops.s1, &ops.s2);
    let (s1a, s2a) = (s1.adjoint(), s2.adjoint());
    let r1 = s1.mul(&s1a);
    let r2 = s2.mul(&s2a);
    let checks = vec![
        check_identity("S1*S1 = I", &s1a.mul(s1), &id),
        check_identity("S2*S2 = I", &s2a.mul(s2), &id),
        check_identity("S1S1* = P_N1", &r1, &p1),
        check_identity("S2S2* = P_N2", &r2, &p2),
        check_identity("S1S1* + S2S2* = I", &r1.add(&r2), &id),
        check_identity("S1*S2 = 0", &s1a.mul(s2), &zero),
        check_identity("S2*S1 = 0", &s2a.mul(s1), &zero),
        check_identity("T2*T2T1 = T1", &ops.t2.adjoint().mul(&ops.t2).mul(&ops.t1), &ops.t1),
    ];
    RelationReport::new(window.len(), checks)
}

/// Undirected index graph: `n ~ m` when some operator or its adjoint moves
/// `e_n` onto a multiple of `e_m`.
pub struct SpanGraph {
    window: Arc<BasisWindow>,
    adj: Vec<Vec<u32>>,
}

impl SpanGraph {
    pub fn new(ops: &[TruncatedOperator]) -> Self {
        let window = ops[0].window.clone();
        let mut adj: Vec<Vec<u32>> = vec![Vec::new(); window.len()];
        for op in ops {
            op.same_window(&ops[0]);
            for (c, col) in op.cols.iter().enumerate() {
                for &(r, _) in col {
                    adj[c].push(r);
                    adj[r as usize].push(c as u32);
                }
            }
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        Self { window, adj }
    }

    /// Breadth-first closure of `{start}` under words of length ≤ `depth`.
    pub fn reach(&self, start: u64, depth: usize) -> Result<SpanSet, DomainError> {
        let s = self.window.position(start).ok_or(DomainError::NotInSection { value: start.to_string() })?;
        let mut dist = HashMap::from([(s as u32, 0usize)]);
        let mut queue = VecDeque::from([s as u32]);
        let mut saturated = true;
        while let Some(v) = queue.pop_front() {
            let d = dist[&v];
            for &w in &self.adj[v as usize] {
                if dist.contains_key(&w) {
                    continue;
                }
                if d == depth {
                    saturated = false;
                    continue;
                }
                dist.insert(w, d + 1);
                queue.push_back(w);
            }
        }
        let members = dist.keys().map(|&p| self.window.label(p as usize)).collect();
        Ok(SpanSet { start, depth, members, saturated })
    }
}

/// Indices reachable as nonzero coordinates of `W e_start` over words `W`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SpanSet {
    pub start: u64,
    pub depth: usize,
    pub members: BTreeSet<u64>,
    /// True when a larger depth would add nothing.
    pub saturated: bool,
}

pub fn reachable_span(ops: &[TruncatedOperator], start: u64, depth: usize) -> Result<SpanSet, DomainError> {
    SpanGraph::new(ops).reach(start, depth)
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SpanClassReport {
    pub map: String,
    pub window: u64,
    pub starts: u64,
    /// `(start, m)`: `m` is in the span of `start` but not in its class.
    pub subset_violations: Vec<(u64, u64)>,
    /// `(start, m)`: `m` is certified equivalent inside the window but was
    /// not reached.
    pub equality_violations: Vec<(u64, u64)>,
    /// Class members outside the certified sub-window that the span missed.
    pub boundary_members: u64,
    pub certified_members: u64,
    pub status: Status,
}

/// Where the in-window forward chain of each index ends: the least element
/// of its cycle, or `None` if it leaves the window.
fn in_window_sinks(t: &TruncatedOperator) -> Vec<Option<u32>> {
    let n = t.window.len();
    let next = |p: usize| -> Option<usize> { t.cols[p].first().map(|e| e.0 as usize) };
    let mut sink: Vec<Option<Option<u32>>> = vec![None; n];
    let mut on_path = vec![false; n];
    for s in 0..n {
        if sink[s].is_some() {
            continue;
        }
        let mut path = vec![s];
        on_path[s] = true;
        let result = loop {
            let v = *path.last().expect("nonempty");
            match next(v) {
                None => break None,
                Some(w) if on_path[w] => {
                    let at = path.iter().position(|&x| x == w).expect("on path");
                    let least = path[at..].iter().map(|&x| x as u32).min().expect("nonempty");
                    for &x in &path[at..] {
                        sink[x] = Some(Some(least));
                    }
                    path.truncate(at);
                    break Some(least);
                }
                Some(w) => match sink[w] {
                    Some(s) => break s,
                    None => {
                        on_path[w] = true;
                        path.push(w);
                    }
                },
            }
        };
        for x in path {
            sink[x] = Some(result);
            on_path[x] = false;
        }
        on_path.iter_mut().for_each(|b| *b = false);
    }
    sink.into_iter().map(|s| s.expect("all visited")).collect()
}

/// Compares `reachable_span` of the branch operators on `[1, window]` with
/// the `∼`-classes, for each start in `1..=starts`.
///
/// Spans must lie inside classes. A class member is certified when its
/// forward chain and the start's both stay in the window and end in the same
/// cycle; certified members must be reached.
pub fn span_vs_class(map: &GCMap, window: u64, starts: u64, fuel: u64, depth: usize) -> SpanClassReport {
    let w = BasisWindow::range(window);
    let ops = build_branch_ops(map, &w);
    let graph = SpanGraph::new(&ops);
    let t = map_op(map, &ops[0].window, None);
    let sinks = in_window_sinks(&t);
    let report = classes(map, window, fuel);
    let class_of: Vec<Option<usize>> = (1..=window).map(|n| report.class_of(n)).collect();
    let mut by_class: HashMap<usize, Vec<u64>> = HashMap::new();
    for n in 1..=window {
        if let Some(c) = class_of[n as usize - 1] {
            by_class.entry(c).or_default().push(n);
        }
    }

    let mut out = SpanClassReport {
        map: map.name().to_owned(),
        window,
        starts: 0,
        subset_violations: Vec::new(),
        equality_violations: Vec::new(),
        boundary_members: 0,
        certified_members: 0,
        status: Status::Pass,
    };
    // saturated spans are connected components, shared by their members
    let mut component: HashMap<u64, Arc<HashSet<u64>>> = HashMap::new();
    for s in 1..=starts.min(window) {
        out.starts += 1;
        let span = match component.get(&s) {
            Some(c) => c.clone(),
            None => {
                let span = graph.reach(s, depth).expect("start in window");
                let set: Arc<HashSet<u64>> = Arc::new(span.members.iter().copied().collect());
                if span.saturated {
                    for &m in &span.members {
                        component.insert(m, set.clone());
                    }
                }
                set
            }
        };
        let cls = class_of[s as usize - 1];
        for &m in span.iter() {
            if class_of[m as usize - 1] != cls {
                out.subset_violations.push((s, m));
            }
        }
        let sink = sinks[s as usize - 1];
        for &m in cls.and_then(|c| by_class.get(&c)).map_or(&[][..], Vec::as_slice) {
            let certified = sink.is_some() && sinks[m as usize - 1] == sink;
            if certified {
                out.certified_members += 1;
                if !span.contains(&m) {
                    out.equality_violations.push((s, m));
                }
            } else if !span.contains(&m) {
                out.boundary_members += 1;
            }
        }
    }
    out.status = Status::from_counts(out.subset_violations.len() + out.equality_violations.len(), 0);
    out
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct DescentReport {
    pub limit: u64,
    /// Odd `n ≡ 1 (mod 4)` with `1 < n ≤ limit`.
    pub checked: u64,
    pub counterexamples: Vec<u64>,
    /// `T₂²T₁e₁ = e₁`.
    pub fixed_vector: bool,
    /// Window on which `T₂²T₁` was formed as a matrix product.
    pub matrix_window: u64,
    /// Odd `n` where the product's column disagrees with the arithmetic.
    pub matrix_mismatches: Vec<u64>,
    pub scope: &'static str,
    pub status: Status,
}

const MATRIX_DESCENT_LIMIT: u64 = 20_000;

/// For the Collatz map: `T₂²T₁e_n` is nonzero exactly for odd `n ≡ 1 (mod 4)`,
/// then equals `e_{(3n+1)/4}` with `(3n+1)/4 < n` unless `n = 1`.
pub fn descent_check(limit: u64) -> DescentReport {
    let mut checked = 0;
    let mut counterexamples = Vec::new();
    for n in (5..=limit).step_by(4) {
        checked += 1;
        let v = 3 * n as u128 + 1;
        if v % 4 != 0 || v / 4 == 0 || v / 4 >= n as u128 {
            counterexamples.push(n);
        }
    }
    for n in (3..=limit).step_by(4) {
        if (3 * n as u128 + 1) % 4 == 0 {
            counterexamples.push(n);
        }
    }

    let m = limit.min(MATRIX_DESCENT_LIMIT);
    let w = BasisWindow::range(3 * m + 1);
    let ops = build_branch_ops(&collatz(), &w);
    let word = ops[1].mul(&ops[1]).mul(&ops[0]);
    let fixed_vector = word.column_is_exact(1) && word.column(1) == vec![(1, 1)];
    let mut matrix_mismatches = Vec::new();
    for n in (1..=m).step_by(2) {
        let expected = if n % 4 == 1 { vec![((3 * n + 1) / 4, 1)] } else { vec![] };
        if !word.column_is_exact(n) || word.column(n) != expected {
            matrix_mismatches.push(n);
        }
    }
    let status = Status::from_counts(
        counterexamples.len() + matrix_mismatches.len() + usize::from(!fixed_vector),
        0,
    );
    DescentReport {
        limit,
        checked,
        counterexamples,
        fixed_vector,
        matrix_window: 3 * m + 1,
        matrix_mismatches,
        scope: "finitistic core: fixed vector and descent inequality",
        status,
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SeparatingWordReport {
    pub map: String,
    pub point: u64,
    pub word: Itinerary,
    pub aperiodic: bool,
    /// `T_I e_x = e_x`.
    pub fixes_point: bool,
    /// `j` in `1..n` with `T_I e_{f^j(x)} ≠ 0`.
    pub orbit_failures: Vec<usize>,
    /// Sampled `y ∼ x`, `y ≠ x`, with `T_I^m e_y = 0` for some `m`.
    pub contracted: u64,
    /// Sampled `y` with `T_I^m e_y = e_x`.
    pub forced_equality_failures: Vec<u64>,
    /// Sampled `y` that left the window or survived the power bound.
    pub inconclusive: Vec<u64>,
    pub scope: &'static str,
    pub status: Status,
}

const CONTRACTION_POWER_BOUND: usize = 256;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SeparatingWordError {
    #[error("{0} has no period within the fuel")]
    NotPeriodic(u64),
    #[error("{0} is outside the window")]
    OutsideWindow(u64),
}

/// Forms `T_I = T_{i_n}⋯T_{i_1}` from the itinerary of the periodic point
/// `x` and checks that it fixes `e_x`, kills the rest of the orbit, and sends
/// sampled equivalent `e_y` to 0 under some power.
pub fn separating_word_check(
    map: &GCMap,
    x: u64,
    window: u64,
    fuel: u64,
    samples: usize,
) -> Result<SeparatingWordReport, SeparatingWordError> {
    if x > window || x == 0 {
        return Err(SeparatingWordError::OutsideWindow(x));
    }
    let sep = separating_condition(map, &BigUint::from(x), fuel).map_err(|_| SeparatingWordError::NotPeriodic(x))?;
    let w = BasisWindow::range(window);
    let ops = build_branch_ops(map, &w);
    let mut t_word = TruncatedOperator::identity(ops[0].window());
    for &i in sep.word.letters() {
        t_word = ops[i - 1].mul(&t_word);
    }
    let fixes_point = t_word.column_is_exact(x) && t_word.column(x) == vec![(x, 1)];
    let mut orbit_failures = Vec::new();
    let mut y = x;
    for j in 1..sep.period {
        y = map.apply_u64(y).expect("periodic orbit of a small point");
        if !(t_word.column_is_exact(y) && t_word.column(y).is_empty()) {
            orbit_failures.push(j);
        }
    }

    let report = classes(map, window, fuel);
    let cls = report.class_of(x);
    let mut contracted = 0;
    let mut forced_equality_failures = Vec::new();
    let mut inconclusive = Vec::new();
    let ys: Vec<u64> = cls.map(|c| report.members_of(c).filter(|&y| y != x).take(samples).collect()).unwrap_or_default();
    for y in ys {
        let mut v = y;
        let mut outcome = None;
        for _ in 0..CONTRACTION_POWER_BOUND {
            if !t_word.column_is_exact(v) {
                break;
            }
            match t_word.column(v).as_slice() {
                [] => {
                    outcome = Some(true);
                    break;
                }
                [(r, 1)] => v = *r,
                _ => break,
            }
            if v == x {
                outcome = Some(false);
                break;
            }
        }
        match outcome {
            Some(true) => contracted += 1,
            Some(false) => forced_equality_failures.push(y),
            None => inconclusive.push(y),
        }
    }
    let failures = usize::from(!fixes_point) + orbit_failures.len() + forced_equality_failures.len();
    let status = Status::from_counts(failures, inconclusive.len());
    Ok(SeparatingWordReport {
        map: map.name().to_owned(),
        point: x,
        word: sep.word,
        aperiodic: sep.aperiodic,
        fixes_point,
        orbit_failures,
        contracted,
        forced_equality_failures,
        inconclusive,
        scope: "finitistic core: fixed vector, annihilation, contraction",
        status,
    })
}

fn ratio_str<S: Serializer>(v: &BigRational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_string())
}

/// `‖Tv‖² / ‖v‖²` for a finitely supported `v`, exactly; `None` if `v` is
/// zero or touches a column cut by the window.
pub fn norm_ratio(op: &TruncatedOperator, v: &[(u64, BigRational)]) -> Option<BigRational> {
    let mut image: HashMap<u64, BigRational> = HashMap::new();
    let mut norm_v = BigRational::zero();
    for (n, a) in v {
        if !op.column_is_exact(*n) {
            return None;
        }
        norm_v += a * a;
        for (r, e) in op.column(*n) {
            *image.entry(r).or_insert_with(BigRational::zero) += a * BigRational::from_integer(BigInt::from(e));
        }
    }
    if norm_v.is_zero() {
        return None;
    }
    let norm_tv: BigRational = image.values().map(|a| a * a).sum();
    Some(norm_tv / norm_v)
}

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct NormReport {
    pub map: String,
    pub k: usize,
    pub window: u64,
    pub trials: u64,
    pub seed: u64,
    #[serde(serialize_with = "ratio_str")]
    pub max_ratio: BigRational,
    /// Trials with `‖Tv‖² > k‖v‖²`.
    pub violations: Vec<u64>,
    /// Sum of the basis vectors over the full preimage of the least index
    /// with `k` preimages, all inside the window.
    pub extremal_support: Vec<u64>,
    #[serde(serialize_with = "ratio_str")]
    pub extremal_ratio: BigRational,
    pub status: Status,
}

/// Checks `‖Tv‖² ≤ k‖v‖²` on seeded random rational vectors supported on
/// exact columns of `T` on `[1, window]`.
pub fn norm_bound_check(map: &GCMap, window: u64, trials: u64, seed: u64) -> NormReport {
    let w = BasisWindow::range(window);
    let t = build_t(map, &w);
    let k = map.k();
    let bound = BigRational::from_integer(BigInt::from(k));
    let support: Vec<u64> = w.elements().iter().copied().filter(|&n| t.column_is_exact(n)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_ratio = BigRational::zero();
    let mut violations = Vec::new();
    for trial in 0..trials {
        if support.is_empty() {
            break;
        }
        let size = rng.random_range(1..=8usize.min(support.len()));
        let mut v = Vec::with_capacity(size);
        for _ in 0..size {
            let n = support[rng.random_range(0..support.len())];
            let num: i64 = rng.random_range(-20..=20);
            let den: i64 = rng.random_range(1..=10);
            v.push((n, BigRational::new(BigInt::from(num), BigInt::from(den))));
        }
        // repeated indices add up
        let mut summed: HashMap<u64, BigRational> = HashMap::new();
        for (n, a) in v {
            *summed.entry(n).or_insert_with(BigRational::zero) += a;
        }
        let mut v: Vec<(u64, BigRational)> = summed.into_iter().collect();
        v.sort_by_key(|e| e.0);
        if let Some(r) = norm_ratio(&t, &v) {
            if r > bound {
                violations.push(trial);
            }
            if r > max_ratio {
                max_ratio = r;
            }
        }
    }

    let mut extremal_support = Vec::new();
    let mut extremal_ratio = BigRational::zero();
    for &n in w.elements() {
        let Some(pre) = preimages_u64(map, n) else { continue };
        if pre.len() == k && pre.iter().all(|&(_, m)| t.column_is_exact(m)) {
            extremal_support = pre.iter().map(|&(_, m)| m).collect();
            extremal_support.sort_unstable();
            let v: Vec<_> = extremal_support.iter().map(|&m| (m, BigRational::one())).collect();
            extremal_ratio = norm_ratio(&t, &v).unwrap_or_default();
            break;
        }
    }
    if extremal_ratio > max_ratio {
        max_ratio = extremal_ratio.clone();
    }
    let status = if !violations.is_empty() || max_ratio.is_negative() { Status::Fail } else { Status::Pass };
    NormReport {
        map: map.name().to_owned(),
        k,
        window,
        trials,
        seed,
        max_ratio,
        violations,
        extremal_support,
        extremal_ratio,
        status,
    }
}

/// `Some(v)` if `v` is an integer ratio; for report rendering.
pub fn ratio_as_integer(r: &BigRational) -> Option<i64> {
    r.is_integer().then(|| r.to_integer().to_i64()).flatten()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::families::{identity, qx1, section_collatz};

    fn rat(n: i64) -> BigRational {
        BigRational::from_integer(BigInt::from(n))
    }

    #[test]
    fn build_t_small_window() {
        let t = build_t(&collatz(), &BasisWindow::range(8));
        assert!(t.column(3).is_empty());
        assert!(!t.column_is_exact(3));
        assert!(!t.interior().contains(&3));
        assert_eq!(t.column(6), vec![(3, 1)]);
        assert!(t.nnz() <= 8);
        // preimages of 1 are {2}
        assert_eq!(t.adjoint().column(1), vec![(2, 1)]);
    }

    #[test]
    fn branch_ops_split_t() {
        let f = collatz();
        let ops = build_branch_ops(&f, &BasisWindow::range(20));
        assert_eq!(ops[0].column(5), vec![(16, 1)]);
        assert!(ops[1].column(5).is_empty());
        assert_eq!(ops[1].column(16), vec![(8, 1)]);
        let sum = ops[0].add(&ops[1]);
        let t = build_t(&f, &BasisWindow::range(20));
        assert_eq!(sum.cols, t.cols);
        let r = verify_branch_relations(&f, &ops);
        assert_eq!(r.status, Status::Pass, "{r:#?}");
    }

    #[test]
    fn odd_projection_on_interior() {
        let f = collatz();
        let ops = build_branch_ops(&f, &BasisWindow::range(100));
        let tt = ops[0].adjoint().mul(&ops[0]);
        for n in 1..=100 {
            if tt.column_is_exact(n) {
                let expected = if n % 2 == 1 { vec![(n, 1)] } else { vec![] };
                assert_eq!(tt.column(n), expected, "{n}");
            }
        }
        assert!(tt.column_is_exact(31) && !tt.column_is_exact(35));
    }

    #[test]
    fn adjoint_is_an_involution_and_products_follow_flags() {
        let t = build_t(&collatz(), &BasisWindow::range(50));
        let tt = t.adjoint().adjoint();
        assert_eq!((tt.cols.clone(), tt.col_exact.clone(), tt.row_exact.clone()), (t.cols.clone(), t.col_exact.clone(), t.row_exact.clone()));
        // (TT*)(n,n) counts in-window preimages
        let g = t.mul(&t.adjoint());
        for n in 1..=50u64 {
            let count = preimages_u64(&collatz(), n).unwrap().iter().filter(|e| e.1 <= 50).count() as i64;
            assert_eq!(g.entry(n, n), count, "{n}");
        }
    }

    #[test]
    fn section_ops_examples() {
        let (n1, n2) = section_collatz();
        let sigma = n1.union(&n2).unwrap();
        let w = BasisWindow::from_section(&sigma, 200);
        let ops = build_section_ops(&collatz(), &n1, &n2, &w, 1_000).unwrap();
        assert_eq!(ops.t1.column(5), vec![(16, 1)]);
        assert_eq!(ops.t2.column(4), vec![(1, 1)]);
        assert_eq!(ops.s2.cols, ops.t2.adjoint().cols);
        assert!(ops.inconclusive.is_empty());
        let r = verify_section_relations(&ops, &n1);
        assert_eq!(r.status, Status::Pass, "{r:#?}");
        assert!(build_section_ops(&collatz(), &n1, &n2, &BasisWindow::range(5), 100).is_err());
    }

    #[test]
    fn section_row_flags_match_brute_force() {
        // oracle: P-preimages computed by evaluating P on a much larger window
        let (n1, n2) = section_collatz();
        let f = collatz();
        let sigma = n1.union(&n2).unwrap();
        let w = BasisWindow::from_section(&sigma, 300);
        let ops = build_section_ops(&f, &n1, &n2, &w, 1_000).unwrap();
        let p = FirstReturnMap::on_pair(f.clone(), &n1, &n2, 1_000);
        let mut pre: HashMap<u64, Vec<u64>> = HashMap::new();
        for m in sigma.members_up_to(300 * 4096) {
            if let Ok(Some(v)) = p.eval_u64(m) {
                if v <= 300 {
                    pre.entry(v).or_default().push(m);
                }
            }
        }
        for &n in w.elements() {
            let all = pre.get(&n).cloned().unwrap_or_default();
            for (op, piece) in [(&ops.t1, &n1), (&ops.t2, &n2)] {
                if op.row_is_exact(n) {
                    let mine: Vec<u64> = op.adjoint().column(n).into_iter().map(|e| e.0).collect();
                    let truth: Vec<u64> = all.iter().copied().filter(|&m| piece.contains(m)).collect();
                    assert_eq!(mine, truth, "row {n}");
                }
            }
        }
    }

    #[test]
    fn corrupted_entry_is_named() {
        let (n1, n2) = section_collatz();
        let sigma = n1.union(&n2).unwrap();
        let w = BasisWindow::from_section(&sigma, 200);
        let mut ops = build_section_ops(&collatz(), &n1, &n2, &w, 1_000).unwrap();
        ops.t1.set_entry(16, 5, 0);
        ops.t1.set_entry(7, 5, 1);
        let r = verify_section_relations(&ops, &n1);
        let bad = r.get("T2*T2T1 = T1").unwrap();
        assert_eq!(bad.status, Status::Fail);
        assert!(bad.witnesses.iter().any(|w| w.col == 5), "{bad:#?}");
    }

    #[test]
    fn spans() {
        let f = collatz();
        let ops = vec![build_t(&f, &BasisWindow::range(20))];
        let span = reachable_span(&ops, 1, 100).unwrap();
        assert!(span.members.contains(&5) && span.members.contains(&3));
        assert!(span.saturated);
        let span0 = reachable_span(&ops, 1, 0).unwrap();
        assert_eq!(span0.members, BTreeSet::from([1]));
        assert!(reachable_span(&ops, 21, 3).is_err());
        // oracle: undirected BFS over n -> f(n) restricted to the window
        let mut seen = BTreeSet::from([1u64]);
        let mut stack = vec![1u64];
        while let Some(v) = stack.pop() {
            let mut nbrs: Vec<u64> = (1..=20).filter(|&m| f.apply_u64(m) == Some(v)).collect();
            nbrs.extend(f.apply_u64(v).filter(|&x| x <= 20));
            for w in nbrs {
                if seen.insert(w) {
                    stack.push(w);
                }
            }
        }
        assert_eq!(span.members, seen);
    }

    #[test]
    fn span_class_comparison() {
        let r = span_vs_class(&collatz(), 1000, 100, 10_000, 1000);
        assert_eq!(r.status, Status::Pass, "{r:#?}");
        assert!(r.certified_members > 0);
        let r = span_vs_class(&identity(), 50, 50, 100, 10);
        assert_eq!(r.status, Status::Pass);
        assert_eq!(r.certified_members, 50);
        let f5 = qx1(5).unwrap();
        let ops = build_branch_ops(&f5, &BasisWindow::range(500));
        let a = reachable_span(&ops, 1, 500).unwrap();
        let b = reachable_span(&ops, 13, 500).unwrap();
        assert!(a.members.is_disjoint(&b.members));
    }

    #[test]
    fn descent() {
        let r = descent_check(10_000);
        assert_eq!(r.status, Status::Pass, "{r:#?}");
        assert!(r.fixed_vector);
        assert_eq!(r.checked, (10_000 - 5) / 4 + 1);
    }

    #[test]
    fn separating_words() {
        let r = separating_word_check(&collatz(), 1, 2_000, 10_000, 200).unwrap();
        assert_eq!(r.word.letters(), &[1, 2, 2]);
        assert!(r.fixes_point && r.orbit_failures.is_empty());
        assert!(r.forced_equality_failures.is_empty() && r.contracted > 0);
        let ops = build_branch_ops(&collatz(), &BasisWindow::range(20));
        let word = ops[1].mul(&ops[1]).mul(&ops[0]);
        assert!(word.column(4).is_empty() && word.column(2).is_empty());
        let r = separating_word_check(&qx1(5).unwrap(), 1, 500, 10_000, 50).unwrap();
        assert_eq!(r.word.letters(), &[1, 2, 1, 2, 2, 2, 2]);
        assert!(r.fixes_point);
    }

    #[test]
    fn norms() {
        let f = collatz();
        let t = build_t(&f, &BasisWindow::range(100));
        assert_eq!(norm_ratio(&t, &[(5, rat(1)), (32, rat(1))]), Some(rat(2)));
        assert_eq!(norm_ratio(&t, &[(7, rat(3))]), Some(rat(1)));
        let r = norm_bound_check(&f, 200, 500, 0);
        assert_eq!(r.status, Status::Pass);
        assert_eq!(r.max_ratio, rat(2));
        let again = norm_bound_check(&f, 200, 500, 0);
        assert_eq!(again.max_ratio, r.max_ratio);
        let r = norm_bound_check(&identity(), 50, 100, 3);
        assert_eq!(r.max_ratio, rat(1));
    }

    #[test]
    fn triplet_dump() {
        let t = build_t(&collatz(), &BasisWindow::range(4));
        assert_eq!(t.to_triplets(), "# 4 3\n4 1 1\n1 2 1\n2 4 1\n");
    }
}
