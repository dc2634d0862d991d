//! Closed-form rates, bounds and storage-download regions in exact rationals.
//!
//! Regions live in the `(α, β)` plane: `α` is storage per database normalised
//! by `KL`, `β` is download per database normalised by `L`.

use std::cmp::Ordering;
use std::fmt;

use num_rational::Ratio;
use num_traits::{One, Signed, Zero};
use serde::{Serialize, Serializer};
use thiserror::Error;

use crate::topology::{lambda_max, solve_grouping, CollusionPattern, CommMatrix, Grouping};

/// Exact rational number in lowest terms with positive denominator.
pub type Rational = Ratio<i128>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("parameter {name} must be at least {min}, got {value}")]
    ParameterTooSmall { name: &'static str, value: usize, min: usize },
    #[error("link of size {link_size} is not smaller than N = {n}")]
    LinkCoversAllServers { link_size: usize, n: usize },
    #[error("the communication matrix has no links")]
    NoLinks,
    #[error("grouping has no groups")]
    EmptyGrouping,
    #[error("inequality {0} has a zero normal vector")]
    DegenerateInequality(String),
    #[error("the uniform form needs equal group sizes")]
    NonUniformGroups,
}

pub fn rat(n: i128, d: i128) -> Rational {
    Rational::new(n, d)
}

pub fn int(n: i128) -> Rational {
    Rational::from_integer(n)
}

/// Formats as `p/q`, or `p` when the denominator is 1.
pub fn fmt_rational(r: &Rational) -> String {
    r.to_string()
}

/// Lossy conversion for plotting output only.
pub fn to_f64(r: &Rational) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Parses `p/q`, `p`, or a decimal literal such as `0.75`.
pub fn parse_rational(s: &str) -> Option<Rational> {
    let s = s.trim();
    if let Some((n, d)) = s.split_once('/') {
        let d: i128 = d.trim().parse().ok()?;
        if d == 0 {
            return None;
        }
        return Some(rat(n.trim().parse().ok()?, d));
    }
    if let Some((whole, frac)) = s.split_once('.') {
        let neg = whole.starts_with('-');
        let digits = frac.len() as u32;
        let scale = 10i128.checked_pow(digits)?;
        let w: i128 = if whole.is_empty() || whole == "-" { 0 } else { whole.parse().ok()? };
        let f: i128 = if frac.is_empty() { 0 } else { frac.parse().ok()? };
        let num = w.abs() * scale + f;
        return Some(rat(if neg { -num } else { num }, scale));
    }
    s.parse().ok().map(int)
}

fn serialize_rational<S: Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&fmt_rational(r))
}

fn require(name: &'static str, value: usize, min: usize) -> Result<(), AnalysisError> {
    if value < min {
        Err(AnalysisError::ParameterTooSmall { name, value, min })
    } else {
        Ok(())
    }
}

fn geometric_sum(ratio: Rational, from: u32, to_exclusive: u32) -> Rational {
    (from..to_exclusive).fold(Rational::zero(), |acc, j| acc + ratio.pow(j as i32))
}

/// Capacity of `T`-colluding PIR with `g` replicated servers and `k` messages:
/// `(1 + T/g + ... + (T/g)^(k-1))^-1`.
pub fn c_tpir(t: usize, g: usize, k: usize) -> Result<Rational, AnalysisError> {
    require("T", t, 1)?;
    require("g", g, 1)?;
    require("K", k, 1)?;
    Ok(geometric_sum(rat(t as i128, g as i128), 0, k as u32).recip())
}

/// `c_tpir` with `T = 1`.
pub fn c_pir(n: usize, k: usize) -> Result<Rational, AnalysisError> {
    c_tpir(1, n, k)
}

/// `ζ_{K,T}(X) = Σ_{j=1}^{K-1} (T / (N - |X|))^j`.
pub fn zeta(k: usize, t: usize, n: usize, link_size: usize) -> Result<Rational, AnalysisError> {
    require("K", k, 1)?;
    if link_size >= n {
        return Err(AnalysisError::LinkCoversAllServers { link_size, n });
    }
    Ok(geometric_sum(rat(t as i128, (n - link_size) as i128), 1, k as u32))
}

/// Rate of grouped retrieval: `(g / Σ M_i) · C_TPIR(T, g, K)`.
pub fn achievable_rate(grouping: &Grouping, t: usize, k: usize) -> Result<Rational, AnalysisError> {
    let g = grouping.g();
    if g == 0 {
        return Err(AnalysisError::EmptyGrouping);
    }
    let total = grouping.effective_servers() as i128;
    Ok(rat(g as i128, total) * c_tpir(t, g, k)?)
}

/// `λ / (M + Σ_i ζ_{K,T}(X_i))`.
pub fn rate_upper_bound(cm: &CommMatrix, k: usize, t: usize) -> Result<Rational, AnalysisError> {
    if cm.n_links() == 0 {
        return Err(AnalysisError::NoLinks);
    }
    let n = cm.n_servers();
    let mut denom = int(cm.n_links() as i128);
    for l in cm.links() {
        denom += zeta(k, t, n, l.len())?;
    }
    Ok(int(lambda_max(cm) as i128) / denom)
}

/// `a·α + b·β ≥ c`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Inequality {
    #[serde(serialize_with = "serialize_rational")]
    pub a: Rational,
    #[serde(serialize_with = "serialize_rational")]
    pub b: Rational,
    #[serde(serialize_with = "serialize_rational")]
    pub c: Rational,
    pub label: String,
}

impl Inequality {
    pub fn new(a: Rational, b: Rational, c: Rational, label: impl Into<String>) -> Result<Self, AnalysisError> {
        let label = label.into();
        if a.is_zero() && b.is_zero() {
            return Err(AnalysisError::DegenerateInequality(label));
        }
        Ok(Inequality { a, b, c, label })
    }

    fn known(a: Rational, b: Rational, c: Rational, label: &str) -> Self {
        Self::new(a, b, c, label).expect("constant inequality has a nonzero normal")
    }

    pub fn alpha_nonneg() -> Self {
        Self::known(int(1), int(0), int(0), "alpha>=0")
    }

    pub fn beta_nonneg() -> Self {
        Self::known(int(0), int(1), int(0), "beta>=0")
    }

    pub fn lhs(&self, p: &Point) -> Rational {
        self.a * p.alpha + self.b * p.beta
    }

    /// `lhs - c`; nonnegative iff the point satisfies the inequality.
    pub fn slack(&self, p: &Point) -> Rational {
        self.lhs(p) - self.c
    }

    pub fn holds(&self, p: &Point) -> bool {
        !self.slack(p).is_negative()
    }

    /// Same half-plane after scaling by a positive factor.
    pub fn same_halfplane(&self, other: &Inequality) -> bool {
        let lhs = [self.a, self.b, self.c];
        let rhs = [other.a, other.b, other.c];
        let Some(i) = lhs.iter().position(|x| !x.is_zero()) else {
            return false;
        };
        if rhs[i].is_zero() {
            return false;
        }
        let scale = rhs[i] / lhs[i];
        scale.is_positive() && lhs.iter().zip(&rhs).all(|(x, y)| *x * scale == *y)
    }
}

impl fmt::Display for Inequality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let term = |coef: &Rational, var: &str| -> Option<String> {
            if coef.is_zero() {
                None
            } else if coef.is_one() {
                Some(var.to_string())
            } else {
                Some(format!("{coef}{var}"))
            }
        };
        let parts: Vec<String> = [term(&self.a, "α"), term(&self.b, "β")].into_iter().flatten().collect();
        write!(f, "{} >= {}", parts.join(" + "), self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Point {
    #[serde(serialize_with = "serialize_rational")]
    pub alpha: Rational,
    #[serde(serialize_with = "serialize_rational")]
    pub beta: Rational,
}

impl Point {
    pub fn new(alpha: Rational, beta: Rational) -> Self {
        Point { alpha, beta }
    }
}

impl PartialOrd for Point {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Point {
    fn cmp(&self, other: &Self) -> Ordering {
        self.alpha.cmp(&other.alpha).then(self.beta.cmp(&other.beta))
    }
}

impl fmt::Display for Point {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.alpha, self.beta)
    }
}

/// Direction of an unbounded edge, scaled so its largest coordinate is 1.
pub type Ray = Point;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub label: String,
    pub inequality: String,
    #[serde(serialize_with = "serialize_rational")]
    pub slack: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", content = "violations", rename_all = "snake_case")]
pub enum Membership {
    Inside,
    Violates(Vec<Violation>),
}

impl Membership {
    pub fn is_inside(&self) -> bool {
        matches!(self, Membership::Inside)
    }
}

pub fn point_membership(p: &Point, region: &[Inequality]) -> Membership {
    let violations: Vec<Violation> = region
        .iter()
        .filter(|ineq| !ineq.holds(p))
        .map(|ineq| Violation { label: ineq.label.clone(), inequality: ineq.to_string(), slack: ineq.slack(p) })
        .collect();
    if violations.is_empty() {
        Membership::Inside
    } else {
        Membership::Violates(violations)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VertexEnumeration {
    pub vertices: Vec<Point>,
    pub rays: Vec<Ray>,
    pub empty: bool,
}

fn intersect(p: &Inequality, q: &Inequality) -> Option<Point> {
    let det = p.a * q.b - p.b * q.a;
    if det.is_zero() {
        return None;
    }
    let alpha = (p.c * q.b - p.b * q.c) / det;
    let beta = (p.a * q.c - p.c * q.a) / det;
    Some(Point::new(alpha, beta))
}

fn normalize_direction(x: Rational, y: Rational) -> Option<Ray> {
    let m = x.abs().max(y.abs());
    (!m.is_zero()).then(|| Point::new(x / m, y / m))
}

fn in_recession_cone(d: &Ray, ineqs: &[Inequality]) -> bool {
    ineqs.iter().all(|i| !(i.a * d.alpha + i.b * d.beta).is_negative())
}

/// Feasibility when every normal is parallel: reduce to an interval on the
/// common normal direction.
fn parallel_family_feasible(ineqs: &[Inequality]) -> bool {
    let base = &ineqs[0];
    let (na, nb) = (base.a, base.b);
    let mut lower: Option<Rational> = None;
    let mut upper: Option<Rational> = None;
    for i in ineqs {
        // i.normal = s * (na, nb)
        let s = if !na.is_zero() { i.a / na } else { i.b / nb };
        let bound = i.c / s;
        if s.is_positive() {
            lower = Some(lower.map_or(bound, |l: Rational| l.max(bound)));
        } else {
            upper = Some(upper.map_or(bound, |u: Rational| u.min(bound)));
        }
    }
    match (lower, upper) {
        (Some(l), Some(u)) => l <= u,
        _ => true,
    }
}

fn all_parallel(ineqs: &[Inequality]) -> bool {
    ineqs.windows(2).all(|w| (w[0].a * w[1].b - w[0].b * w[1].a).is_zero())
}

/// Vertices of `{x : every inequality holds}` by pairwise intersection, plus
/// the extreme rays of its recession cone.
pub fn region_vertices(ineqs: &[Inequality]) -> VertexEnumeration {
    let mut vertices = Vec::new();
    for i in 0..ineqs.len() {
        for j in i + 1..ineqs.len() {
            if let Some(p) = intersect(&ineqs[i], &ineqs[j]) {
                if ineqs.iter().all(|k| k.holds(&p)) {
                    vertices.push(p);
                }
            }
        }
    }
    vertices.sort();
    vertices.dedup();

    let empty = if !vertices.is_empty() || ineqs.is_empty() {
        false
    } else if all_parallel(ineqs) {
        !parallel_family_feasible(ineqs)
    } else {
        // Two non-parallel lines meet; with no feasible intersection the
        // region has no vertex. A nonempty region without vertices must
        // contain a line, which needs all normals parallel.
        true
    };

    let mut rays = Vec::new();
    if !empty {
        for i in ineqs {
            for (x, y) in [(-i.b, i.a), (i.b, -i.a)] {
                if let Some(d) = normalize_direction(x, y) {
                    if in_recession_cone(&d, ineqs) {
                        rays.push(d);
                    }
                }
            }
        }
        if ineqs.is_empty() {
            rays = vec![
                Point::new(int(1), int(0)),
                Point::new(int(0), int(1)),
                Point::new(int(-1), int(0)),
                Point::new(int(0), int(-1)),
            ];
        }
        rays.sort();
        rays.dedup();
    }
    VertexEnumeration { vertices, rays, empty }
}

/// True iff `target` holds on every point of the region cut out by `given`.
///
/// `given` should describe a pointed region (for instance by including the
/// nonnegativity constraints); otherwise the answer is conservative.
pub fn is_redundant(target: &Inequality, given: &[Inequality]) -> bool {
    let en = region_vertices(given);
    if en.empty {
        return true;
    }
    if en.vertices.is_empty() {
        return false;
    }
    let rays_ok = en.rays.iter().all(|d| !(target.a * d.alpha + target.b * d.beta).is_negative());
    rays_ok && en.vertices.iter().all(|v| target.holds(v))
}

/// Inequalities together with their vertex description. `α ≥ 0` and `β ≥ 0`
/// are always part of the region.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RateRegion {
    pub inequalities: Vec<Inequality>,
    pub vertices: Vec<Point>,
    pub rays: Vec<Ray>,
}

impl RateRegion {
    pub fn new(inequalities: Vec<Inequality>) -> Self {
        let mut all = inequalities.clone();
        all.push(Inequality::alpha_nonneg());
        all.push(Inequality::beta_nonneg());
        let en = region_vertices(&all);
        RateRegion { inequalities, vertices: en.vertices, rays: en.rays }
    }

    /// Explicit inequalities plus nonnegativity.
    pub fn with_nonnegativity(&self) -> Vec<Inequality> {
        let mut all = self.inequalities.clone();
        all.push(Inequality::alpha_nonneg());
        all.push(Inequality::beta_nonneg());
        all
    }

    pub fn contains(&self, p: &Point) -> Membership {
        point_membership(p, &self.with_nonnegativity())
    }

    /// Labels of explicit inequalities implied by the others (with nonnegativity).
    pub fn redundant_labels(&self) -> Vec<String> {
        let all = self.with_nonnegativity();
        self.inequalities
            .iter()
            .enumerate()
            .filter(|(i, ineq)| {
                let others: Vec<Inequality> =
                    all.iter().enumerate().filter(|(j, _)| j != i).map(|(_, x)| x.clone()).collect();
                is_redundant(ineq, &others)
            })
            .map(|(_, ineq)| ineq.label.clone())
            .collect()
    }
}

/// The three-inequality outer bound for `N = 4`, two disjoint pair links, `K = 2`.
pub fn theorem1_region() -> RateRegion {
    RateRegion::new(vec![
        Inequality::known(int(0), int(1), rat(3, 4), "t1.1"),
        Inequality::known(int(1), int(2), int(2), "t1.2"),
        Inequality::known(int(1), int(6), int(3), "t1.3"),
    ])
}

/// For each group `ℓ`: `(Σ_{i≠ℓ} M_i)·α + M_ℓ·β ≥ K·(1 + Σ_{i≠ℓ} M_i − (g−1))`.
pub fn theorem2_inequalities(sizes: &[usize], k: usize) -> Result<Vec<Inequality>, AnalysisError> {
    require("g", sizes.len(), 2)?;
    require("K", k, 1)?;
    for &m in sizes {
        require("M_i", m, 2)?;
    }
    let g = sizes.len() as i128;
    let total: usize = sizes.iter().sum();
    Ok(sizes
        .iter()
        .enumerate()
        .map(|(l, &m_l)| {
            let others = (total - m_l) as i128;
            Inequality::known(
                int(others),
                int(m_l as i128),
                int(k as i128 * (1 + others - (g - 1))),
                &format!("t2.{}", l + 1),
            )
        })
        .collect())
}

/// Same bound written with `N = Σ M_i`: `(N − M_ℓ)α + M_ℓβ ≥ K(1 + (N − M_ℓ) − (g−1))`.
pub fn total_form_inequalities(n: usize, sizes: &[usize], k: usize) -> Result<Vec<Inequality>, AnalysisError> {
    require("g", sizes.len(), 2)?;
    require("K", k, 1)?;
    for &m in sizes {
        require("M_i", m, 2)?;
    }
    let g = sizes.len() as i128;
    let n = n as i128;
    Ok(sizes
        .iter()
        .enumerate()
        .map(|(l, &m_l)| {
            let m_l = m_l as i128;
            Inequality::known(int(n - m_l), int(m_l), int(k as i128 * (1 + (n - m_l) - (g - 1))), &format!("total.{}", l + 1))
        })
        .collect())
}

/// Uniform groups of size `d`: `d(g−1)α + dβ ≥ K(1 + (d−1)(g−1))`.
pub fn uniform_inequality(d: usize, g: usize, k: usize) -> Result<Inequality, AnalysisError> {
    require("d", d, 2)?;
    require("g", g, 2)?;
    require("K", k, 1)?;
    let (d, g, k) = (d as i128, g as i128, k as i128);
    Ok(Inequality::known(int(d * (g - 1)), int(d), int(k * (1 + (d - 1) * (g - 1))), "uniform"))
}

/// Removes inequalities describing the same half-plane as an earlier one.
pub fn dedup_inequalities(ineqs: Vec<Inequality>) -> Vec<Inequality> {
    let mut out: Vec<Inequality> = Vec::new();
    for i in ineqs {
        if !out.iter().any(|o| o.same_halfplane(&i)) {
            out.push(i);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CapacityCondition {
    /// The grouping does not achieve the optimum group count.
    GroupingNotOptimal { g: usize, optimal_g: usize },
    /// `λ / M ≠ g / Σ M_i`.
    LambdaRatio {
        #[serde(serialize_with = "serialize_rational")]
        lambda_over_m: Rational,
        #[serde(serialize_with = "serialize_rational")]
        g_over_total: Rational,
    },
    /// Some link does not have exactly `N − g` members.
    LinkSize { link: usize, size: usize, expected: usize },
    /// The collusion sets are not exactly the groups.
    CollusionShape,
    NoLinks,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CapacityOutcome {
    Capacity {
        #[serde(serialize_with = "serialize_rational")]
        value: Rational,
        /// The set function `η_K` is taken to be `ζ_{K,1}`.
        eta_is_zeta: bool,
    },
    ConditionsNotMet { failed: Vec<CapacityCondition> },
}

impl CapacityOutcome {
    pub fn value(&self) -> Option<Rational> {
        match self {
            CapacityOutcome::Capacity { value, .. } => Some(*value),
            CapacityOutcome::ConditionsNotMet { .. } => None,
        }
    }
}

/// Capacity `(λ/M)·C_PIR(g, K)` when collusion is exactly the groups and the
/// link structure is balanced; otherwise the failed hypotheses.
pub fn theorem4_capacity(cm: &CommMatrix, grouping: &Grouping, k: usize) -> Result<CapacityOutcome, AnalysisError> {
    require("K", k, 1)?;
    let mut failed = Vec::new();
    if cm.n_links() == 0 {
        failed.push(CapacityCondition::NoLinks);
        return Ok(CapacityOutcome::ConditionsNotMet { failed });
    }
    if grouping.g() == 0 {
        return Err(AnalysisError::EmptyGrouping);
    }
    let optimal_g = solve_grouping(cm).map(|s| s.g).unwrap_or(grouping.g());
    if grouping.g() != optimal_g || !grouping.is_feasible(cm) {
        failed.push(CapacityCondition::GroupingNotOptimal { g: grouping.g(), optimal_g });
    }
    let n = cm.n_servers();
    let g = grouping.g();
    let lambda_over_m = rat(lambda_max(cm) as i128, cm.n_links() as i128);
    let g_over_total = rat(g as i128, grouping.effective_servers() as i128);
    if lambda_over_m != g_over_total {
        failed.push(CapacityCondition::LambdaRatio { lambda_over_m, g_over_total });
    }
    for (i, l) in cm.links().iter().enumerate() {
        if l.len() + g != n {
            failed.push(CapacityCondition::LinkSize { link: i, size: l.len(), expected: n.saturating_sub(g) });
        }
    }
    if !failed.is_empty() {
        return Ok(CapacityOutcome::ConditionsNotMet { failed });
    }
    let value = lambda_over_m * c_pir(g, k)?;
    // Same value through the ζ form λ / (M (1 + ζ_{K,1}(X_1))).
    let via_zeta = lambda_over_m / (int(1) + zeta(k, 1, n, cm.links()[0].len())?);
    debug_assert_eq!(value, via_zeta);
    Ok(CapacityOutcome::Capacity { value, eta_is_zeta: true })
}

/// As [`theorem4_capacity`], additionally requiring the collusion sets to be
/// the groups themselves.
pub fn capacity_with_collusion(
    cm: &CommMatrix,
    grouping: &Grouping,
    collusion: &CollusionPattern,
    k: usize,
) -> Result<CapacityOutcome, AnalysisError> {
    let mut sets = collusion.sets().to_vec();
    sets.sort();
    let mut groups = grouping.groups().to_vec();
    groups.sort();
    let out = theorem4_capacity(cm, grouping, k)?;
    if sets == groups && collusion.t() == 1 {
        return Ok(out);
    }
    let mut failed = match out {
        CapacityOutcome::ConditionsNotMet { failed } => failed,
        CapacityOutcome::Capacity { .. } => Vec::new(),
    };
    failed.push(CapacityCondition::CollusionShape);
    Ok(CapacityOutcome::ConditionsNotMet { failed })
}
