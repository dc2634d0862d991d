//! Communication matrices, collusion patterns and the server grouping problem.
//!
//! Servers are 0-based internally. [`ServerSet`] renders 1-based so that
//! printed output lines up with the usual DB1..DBN labelling.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest server count accepted by the exact grouping search.
pub const MAX_EXACT_SERVERS: usize = 12;

/// Hard limit imposed by the bitmask representation of [`ServerSet`].
pub const MAX_SERVERS: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TopologyError {
    #[error("server count {0} must be between 2 and {MAX_SERVERS}")]
    BadServerCount(usize),
    #[error("server index {index} is out of range 1..={n}")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("link {0} is empty")]
    EmptyLink(usize),
    #[error("exact grouping search supports at most {MAX_EXACT_SERVERS} servers, got {0}")]
    TooManyServers(usize),
    #[error("invalid grouping: {0}")]
    InvalidGrouping(String),
    #[error("collusion parameter T must be at least 1")]
    BadCollusionParameter,
}

/// A set of servers stored as a bitmask (bit `i` is server `i`, 0-based).
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct ServerSet(u64);

impl ServerSet {
    pub const EMPTY: ServerSet = ServerSet(0);

    pub fn from_bits(bits: u64) -> Self {
        ServerSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn singleton(i: usize) -> Self {
        ServerSet(1 << i)
    }

    /// All servers `0..n`.
    pub fn full(n: usize) -> Self {
        if n >= 64 {
            ServerSet(u64::MAX)
        } else {
            ServerSet((1u64 << n) - 1)
        }
    }

    pub fn from_indices<I: IntoIterator<Item = usize>>(indices: I) -> Self {
        ServerSet(indices.into_iter().fold(0, |acc, i| acc | (1 << i)))
    }

    /// Builds a set from 1-based indices, checking them against `n`.
    pub fn from_one_based(indices: &[usize], n: usize) -> Result<Self, TopologyError> {
        let mut bits = 0u64;
        for &i in indices {
            if i == 0 || i > n {
                return Err(TopologyError::IndexOutOfRange { index: i, n });
            }
            bits |= 1 << (i - 1);
        }
        Ok(ServerSet(bits))
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn contains(self, i: usize) -> bool {
        i < 64 && self.0 & (1 << i) != 0
    }

    pub fn is_subset_of(self, other: ServerSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn is_disjoint(self, other: ServerSet) -> bool {
        self.0 & other.0 == 0
    }

    pub fn union(self, other: ServerSet) -> Self {
        ServerSet(self.0 | other.0)
    }

    pub fn intersection(self, other: ServerSet) -> Self {
        ServerSet(self.0 & other.0)
    }

    pub fn difference(self, other: ServerSet) -> Self {
        ServerSet(self.0 & !other.0)
    }

    pub fn insert(&mut self, i: usize) {
        self.0 |= 1 << i;
    }

    /// Smallest member, if any.
    pub fn first(self) -> Option<usize> {
        (self.0 != 0).then(|| self.0.trailing_zeros() as usize)
    }

    /// Members in increasing order (0-based).
    pub fn iter(self) -> impl Iterator<Item = usize> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let i = bits.trailing_zeros() as usize;
                bits &= bits - 1;
                Some(i)
            }
        })
    }

    pub fn to_vec(self) -> Vec<usize> {
        self.iter().collect()
    }

    pub fn to_one_based(self) -> Vec<usize> {
        self.iter().map(|i| i + 1).collect()
    }
}

impl fmt::Display for ServerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.iter().map(|i| (i + 1).to_string()).collect();
        write!(f, "{{{}}}", parts.join(","))
    }
}

impl fmt::Debug for ServerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

impl Serialize for ServerSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_one_based().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ServerSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = Vec::<usize>::deserialize(d)?;
        ServerSet::from_one_based(&v, MAX_SERVERS).map_err(serde::de::Error::custom)
    }
}

/// The communication matrix `B_X`: each link is one column, i.e. one set of
/// servers that pool their stored data.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CommMatrix {
    n_servers: usize,
    links: Vec<ServerSet>,
}

impl CommMatrix {
    pub fn new(n_servers: usize, links: Vec<ServerSet>) -> Result<Self, TopologyError> {
        if !(2..=MAX_SERVERS).contains(&n_servers) {
            return Err(TopologyError::BadServerCount(n_servers));
        }
        let all = ServerSet::full(n_servers);
        for (i, l) in links.iter().enumerate() {
            if l.is_empty() {
                return Err(TopologyError::EmptyLink(i));
            }
            if let Some(bad) = l.difference(all).first() {
                return Err(TopologyError::IndexOutOfRange { index: bad + 1, n: n_servers });
            }
        }
        Ok(CommMatrix { n_servers, links })
    }

    /// Convenience constructor from 1-based index lists.
    pub fn from_one_based(n_servers: usize, links: &[Vec<usize>]) -> Result<Self, TopologyError> {
        if !(2..=MAX_SERVERS).contains(&n_servers) {
            return Err(TopologyError::BadServerCount(n_servers));
        }
        let mut sets = Vec::with_capacity(links.len());
        for (i, l) in links.iter().enumerate() {
            if l.is_empty() {
                return Err(TopologyError::EmptyLink(i));
            }
            sets.push(ServerSet::from_one_based(l, n_servers)?);
        }
        Self::new(n_servers, sets)
    }

    pub fn n_servers(&self) -> usize {
        self.n_servers
    }

    pub fn links(&self) -> &[ServerSet] {
        &self.links
    }

    /// `M`, the number of columns.
    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    /// The 0/1 matrix itself, `N x M`.
    pub fn to_matrix(&self) -> Vec<Vec<u8>> {
        (0..self.n_servers)
            .map(|n| self.links.iter().map(|l| u8::from(l.contains(n))).collect())
            .collect()
    }

    /// True iff `set` lies entirely inside some link.
    pub fn covered_by_link(&self, set: ServerSet) -> bool {
        self.links.iter().any(|&l| set.is_subset_of(l))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkViolation {
    DuplicateLink { first: usize, second: usize },
    LinkTooSmall { link: usize, size: usize },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LinkWarning {
    /// `link` is a proper subset of `superset` and carries no extra constraint.
    RedundantSubset { link: usize, superset: usize },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<LinkViolation>,
    pub warnings: Vec<LinkWarning>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks link cardinalities and duplicates, and flags links that are
/// subsets of other links.
pub fn validate(cm: &CommMatrix) -> ValidationReport {
    let mut report = ValidationReport::default();
    let links = cm.links();
    for (i, l) in links.iter().enumerate() {
        if l.len() < 2 {
            report.violations.push(LinkViolation::LinkTooSmall { link: i, size: l.len() });
        }
        for (j, other) in links.iter().enumerate().skip(i + 1) {
            if l == other {
                report.violations.push(LinkViolation::DuplicateLink { first: i, second: j });
            }
        }
    }
    for (i, l) in links.iter().enumerate() {
        if let Some(j) = links.iter().position(|o| o != l && l.is_subset_of(*o)) {
            report.warnings.push(LinkWarning::RedundantSubset { link: i, superset: j });
        }
    }
    report
}

/// `Ω_i`: the number of links of cardinality exactly `i`.
pub fn omega(cm: &CommMatrix, i: usize) -> usize {
    cm.links().iter().filter(|l| l.len() == i).count()
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// The scheme-existence condition `C(N, x) - Ω_x ≠ 0`.
pub fn feasibility(cm: &CommMatrix, x: usize) -> bool {
    binomial(cm.n_servers(), x) != omega(cm, x) as u128
}

/// `λ`: the largest number of links that avoid a single server.
pub fn lambda_max(cm: &CommMatrix) -> usize {
    (0..cm.n_servers())
        .map(|n| cm.links().iter().filter(|l| !l.contains(n)).count())
        .max()
        .unwrap_or(0)
}

/// Query-sharing coalitions. Singletons are implicit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CollusionPattern {
    sets: Vec<ServerSet>,
    t: usize,
}

impl CollusionPattern {
    pub fn new(n_servers: usize, sets: Vec<ServerSet>, t: usize) -> Result<Self, TopologyError> {
        if t == 0 {
            return Err(TopologyError::BadCollusionParameter);
        }
        let all = ServerSet::full(n_servers);
        for s in &sets {
            if let Some(bad) = s.difference(all).first() {
                return Err(TopologyError::IndexOutOfRange { index: bad + 1, n: n_servers });
            }
        }
        Ok(CollusionPattern { sets, t })
    }

    /// No collusion: every server alone, `T = 1`.
    pub fn none() -> Self {
        CollusionPattern { sets: Vec::new(), t: 1 }
    }

    pub fn sets(&self) -> &[ServerSet] {
        &self.sets
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Every coalition the user must protect against, singletons first.
    pub fn coalitions(&self, n_servers: usize) -> Vec<ServerSet> {
        let mut out: Vec<ServerSet> = (0..n_servers).map(ServerSet::singleton).collect();
        for &s in &self.sets {
            if !out.contains(&s) {
                out.push(s);
            }
        }
        out
    }
}

/// A set of disjoint server groups; servers in no group are listed in `ungrouped`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct Grouping {
    n_servers: usize,
    groups: Vec<ServerSet>,
    ungrouped: ServerSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GroupingViolation {
    Overlap { first: usize, second: usize },
    TooSmall { group: usize },
    InsideLink { group: usize, link: usize },
}

impl fmt::Display for GroupingViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupingViolation::Overlap { first, second } => {
                write!(f, "groups {} and {} overlap", first + 1, second + 1)
            }
            GroupingViolation::TooSmall { group } => write!(f, "group {} has fewer than two servers", group + 1),
            GroupingViolation::InsideLink { group, link } => {
                write!(f, "group {} lies inside link {}", group + 1, link + 1)
            }
        }
    }
}

impl Grouping {
    /// Builds a grouping in canonical order (groups sorted by smallest member).
    /// Rejects overlapping groups and empty groups.
    pub fn new(n_servers: usize, mut groups: Vec<ServerSet>) -> Result<Self, TopologyError> {
        let all = ServerSet::full(n_servers);
        let mut seen = ServerSet::EMPTY;
        for g in &groups {
            if g.is_empty() {
                return Err(TopologyError::InvalidGrouping("empty group".into()));
            }
            if let Some(bad) = g.difference(all).first() {
                return Err(TopologyError::IndexOutOfRange { index: bad + 1, n: n_servers });
            }
            if !seen.is_disjoint(*g) {
                return Err(TopologyError::InvalidGrouping(format!("group {g} overlaps another group")));
            }
            seen = seen.union(*g);
        }
        groups.sort_by_key(|g| g.first());
        Ok(Grouping { n_servers, groups, ungrouped: all.difference(seen) })
    }

    pub fn from_one_based(n_servers: usize, groups: &[Vec<usize>]) -> Result<Self, TopologyError> {
        let sets = groups
            .iter()
            .map(|g| ServerSet::from_one_based(g, n_servers))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(n_servers, sets)
    }

    pub fn n_servers(&self) -> usize {
        self.n_servers
    }

    pub fn groups(&self) -> &[ServerSet] {
        &self.groups
    }

    pub fn ungrouped(&self) -> ServerSet {
        self.ungrouped
    }

    /// `g`.
    pub fn g(&self) -> usize {
        self.groups.len()
    }

    /// Group sizes `M_i`.
    pub fn sizes(&self) -> Vec<usize> {
        self.groups.iter().map(|g| g.len()).collect()
    }

    /// `Σ M_i`, the number of servers that take part in retrieval.
    pub fn effective_servers(&self) -> usize {
        self.groups.iter().map(|g| g.len()).sum()
    }

    pub fn group_of(&self, server: usize) -> Option<usize> {
        self.groups.iter().position(|g| g.contains(server))
    }

    /// Lists every violated grouping constraint for the given links.
    pub fn violations(&self, cm: &CommMatrix) -> Vec<GroupingViolation> {
        let mut out = Vec::new();
        for (i, g) in self.groups.iter().enumerate() {
            for (j, h) in self.groups.iter().enumerate().skip(i + 1) {
                if !g.is_disjoint(*h) {
                    out.push(GroupingViolation::Overlap { first: i, second: j });
                }
            }
            if g.len() < 2 {
                out.push(GroupingViolation::TooSmall { group: i });
            }
            for (l, link) in cm.links().iter().enumerate() {
                if g.is_subset_of(*link) {
                    out.push(GroupingViolation::InsideLink { group: i, link: l });
                }
            }
        }
        out
    }

    pub fn is_feasible(&self, cm: &CommMatrix) -> bool {
        self.violations(cm).is_empty()
    }
}

impl fmt::Display for Grouping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for g in &self.groups {
            write!(f, "{g}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GroupingSolution {
    pub g: usize,
    pub optima: Vec<Grouping>,
}

impl GroupingSolution {
    pub fn is_feasible(&self) -> bool {
        self.g > 0
    }

    /// The first optimum in canonical order.
    pub fn first(&self) -> Option<&Grouping> {
        self.optima.first()
    }
}

struct Search<'a> {
    n: usize,
    links: &'a [ServerSet],
    groups: Vec<ServerSet>,
    best: usize,
    optima: Vec<Vec<ServerSet>>,
}

impl Search<'_> {
    fn upper_bound(&self, next: usize) -> usize {
        let full = self.groups.iter().filter(|g| g.len() >= 2).count();
        let singles = self.groups.len() - full;
        let remaining = self.n - next;
        let filled = singles.min(remaining);
        full + filled + (remaining - filled) / 2
    }

    fn descend(&mut self, next: usize) {
        let singles = self.groups.iter().filter(|g| g.len() == 1).count();
        if singles > self.n - next {
            return;
        }
        if next == self.n {
            self.leaf();
            return;
        }
        if self.upper_bound(next) < self.best {
            return;
        }
        // A group that stays inside a link even with every unplaced server added is dead.
        let unplaced = ((1u64 << self.n) - 1) & !((1u64 << next) - 1);
        if self
            .groups
            .iter()
            .any(|g| self.links.iter().any(|l| (g.bits() | unplaced) & !l.bits() == 0))
        {
            return;
        }
        // Server `next` joins an existing group, starts a new one, or stays out.
        for i in 0..self.groups.len() {
            self.groups[i].insert(next);
            self.descend(next + 1);
            self.groups[i] = ServerSet::from_bits(self.groups[i].bits() & !(1 << next));
        }
        self.groups.push(ServerSet::singleton(next));
        self.descend(next + 1);
        self.groups.pop();
        self.descend(next + 1);
    }

    fn leaf(&mut self) {
        if self.groups.iter().any(|g| g.len() < 2) {
            return;
        }
        if self.groups.iter().any(|g| self.links.iter().any(|l| g.is_subset_of(*l))) {
            return;
        }
        let g = self.groups.len();
        if g > self.best {
            self.best = g;
            self.optima.clear();
        }
        if g == self.best && g > 0 {
            self.optima.push(self.groups.clone());
        }
    }
}

/// Largest number of disjoint groups, by dynamic programming over server subsets.
fn max_groups(n: usize, links: &[ServerSet]) -> usize {
    let full = (1u64 << n) - 1;
    let allowed = |block: u64| block.count_ones() >= 2 && links.iter().all(|l| block & !l.bits() != 0);
    let mut best = vec![0usize; 1 << n];
    for mask in 1..=full {
        // The lowest server either stays out or joins a block with some of the rest.
        let low = mask & mask.wrapping_neg();
        let rest = mask & !low;
        let mut b = best[rest as usize];
        let mut sub = rest;
        while sub != 0 {
            let block = sub | low;
            if allowed(block) {
                b = b.max(1 + best[(rest & !sub) as usize]);
            }
            sub = (sub - 1) & rest;
        }
        best[mask as usize] = b;
    }
    best[full as usize]
}

/// Exact search for every grouping that maximises the number of groups.
///
/// Groups must be disjoint, have at least two members and must not fit inside
/// any single link. Servers may stay ungrouped. Optima come back in canonical
/// order; `g = 0` with no optima means no feasible grouping exists.
pub fn solve_grouping(cm: &CommMatrix) -> Result<GroupingSolution, TopologyError> {
    let n = cm.n_servers();
    if n > MAX_EXACT_SERVERS {
        return Err(TopologyError::TooManyServers(n));
    }
    let target = max_groups(n, cm.links());
    if target == 0 {
        return Ok(GroupingSolution { g: 0, optima: Vec::new() });
    }
    let mut search = Search { n, links: cm.links(), groups: Vec::new(), best: target, optima: Vec::new() };
    search.descend(0);
    assert!(!search.optima.is_empty(), "packing bound {target} not attained");
    let mut optima: Vec<Grouping> = search
        .optima
        .into_iter()
        .map(|gs| Grouping::new(n, gs).expect("search only yields disjoint groups"))
        .collect();
    optima.sort_by(|a, b| a.groups.cmp(&b.groups).then(a.ungrouped.cmp(&b.ungrouped)));
    optima.dedup();
    Ok(GroupingSolution { g: search.best, optima })
}
