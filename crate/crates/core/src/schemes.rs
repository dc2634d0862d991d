//! Storage layouts and retrieval plans.
//!
//! Two constructions are provided:
//!
//! * [`ReducedScheme`]: four servers, two messages of four symbols, two
//!   communicating pairs. Each server stores six cells; a padded server's
//!   group partner holds the matching pads. Cells `a2+b2` and `a4+b4` (and
//!   their cross-group analogues) are merged, which is where the 6/8 storage
//!   comes from.
//! * [`GroupedScheme`]: any feasible grouping. Each group acts as one virtual
//!   server holding an additively padded replica, and the virtual servers run
//!   the iterative `g`-server, `K`-message replicated retrieval with
//!   `L = g^K` and one random symbol permutation per message.
//!
//! Every layout is linear: a cell is a coefficient vector over the message
//! symbols followed by the noise symbols. Message symbol `j` of message `k`
//! has index `k·L + j`.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{rat, Rational};
use crate::galois::{FMatrix, Field};
use crate::topology::{CommMatrix, Grouping, ServerSet};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchemeError {
    #[error("message index {theta} out of range for K = {k}")]
    BadTheta { theta: usize, k: usize },
    #[error("this construction needs {0}")]
    Unsupported(String),
    #[error("group {0} has fewer than two servers")]
    GroupTooSmall(ServerSet),
    #[error("at least two groups are needed, got {0}")]
    TooFewGroups(usize),
    #[error("message length L = g^K = {0} is too large")]
    MessageTooLong(u128),
    #[error("server {server} returned {got} symbols, plan expects {expected}")]
    AnswerLength { server: usize, got: usize, expected: usize },
    #[error("expected answers from {expected} servers, got {got}")]
    ServerCount { expected: usize, got: usize },
    #[error("symbol {0} of the desired message cannot be recovered from this plan")]
    NotDecodable(usize),
    #[error("pad holder {holder} answers {got} symbols but its group's padded server answers {expected}")]
    PadMismatch { holder: usize, got: usize, expected: usize },
}

/// Sparse coefficient vector: sorted `(index, coefficient)` pairs with nonzero coefficients.
pub type Combination = Vec<(usize, u64)>;

fn combine(field: Field, into: &mut BTreeMap<usize, u64>, terms: &[(usize, u64)], scale: u64) {
    for &(i, c) in terms {
        let e = into.entry(i).or_insert(0);
        *e = field.add(*e, field.mul(c, scale));
    }
}

/// Evaluates a sparse combination against dense values.
#[inline]
pub fn evaluate(field: Field, combo: &[(usize, u64)], values: &[u64]) -> u64 {
    combo.iter().fold(0, |acc, &(i, c)| field.add(acc, field.mul(c, values[i])))
}

/// Which message symbol (or share of one) a noise symbol pads.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NoiseLabel {
    pub group: usize,
    pub message: usize,
    pub symbol: usize,
    pub share: usize,
}

impl fmt::Display for NoiseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "N{}({},{})", self.group + 1, self.message + 1, self.symbol + 1)?;
        if self.share > 0 {
            write!(f, "#{}", self.share + 1)?;
        }
        Ok(())
    }
}

/// A padded server together with the servers holding its pads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PadGroup {
    pub padded: usize,
    pub holders: Vec<usize>,
}

impl PadGroup {
    pub fn members(&self) -> ServerSet {
        ServerSet::from_indices(std::iter::once(self.padded).chain(self.holders.iter().copied()))
    }
}

/// Linear storage code: per-server cells over messages ++ noise.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StorageLayout {
    #[serde(serialize_with = "serialize_field")]
    field: Field,
    n_servers: usize,
    k_messages: usize,
    l_symbols: usize,
    noise: Vec<NoiseLabel>,
    groups: Vec<PadGroup>,
    servers: Vec<Vec<Combination>>,
}

fn serialize_field<S: serde::Serializer>(f: &Field, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_u64(f.q())
}

impl StorageLayout {
    pub fn new(
        field: Field,
        k_messages: usize,
        l_symbols: usize,
        noise: Vec<NoiseLabel>,
        groups: Vec<PadGroup>,
        servers: Vec<Vec<Combination>>,
    ) -> Self {
        StorageLayout { field, n_servers: servers.len(), k_messages, l_symbols, noise, groups, servers }
    }

    pub fn field(&self) -> Field {
        self.field
    }

    pub fn n_servers(&self) -> usize {
        self.n_servers
    }

    pub fn k_messages(&self) -> usize {
        self.k_messages
    }

    pub fn l_symbols(&self) -> usize {
        self.l_symbols
    }

    pub fn message_dim(&self) -> usize {
        self.k_messages * self.l_symbols
    }

    pub fn noise_dim(&self) -> usize {
        self.noise.len()
    }

    pub fn total_dim(&self) -> usize {
        self.message_dim() + self.noise_dim()
    }

    pub fn noise_labels(&self) -> &[NoiseLabel] {
        &self.noise
    }

    pub fn pad_groups(&self) -> &[PadGroup] {
        &self.groups
    }

    pub fn cells(&self, server: usize) -> &[Combination] {
        &self.servers[server]
    }

    pub fn message_index(&self, message: usize, symbol: usize) -> usize {
        message * self.l_symbols + symbol
    }

    /// Dense coefficient matrix of the given servers' cells, rows in server order.
    pub fn joint_matrix(&self, servers: ServerSet) -> FMatrix {
        let mut m = FMatrix::with_cols(self.field, self.total_dim());
        for s in servers.iter().filter(|&s| s < self.n_servers) {
            for cell in &self.servers[s] {
                let mut row = vec![0; self.total_dim()];
                for &(i, c) in cell {
                    row[i] = c;
                }
                m.push_row(&row);
            }
        }
        m
    }

    pub fn server_matrix(&self, server: usize) -> FMatrix {
        self.joint_matrix(ServerSet::singleton(server))
    }

    /// Message-coefficient block and noise-coefficient block of a server set.
    pub fn split_blocks(&self, servers: ServerSet) -> (FMatrix, FMatrix) {
        let m = self.joint_matrix(servers);
        (m.column_block(0, self.message_dim()), m.column_block(self.message_dim(), self.total_dim()))
    }

    /// Stored values of one server given `messages ++ noise`.
    pub fn evaluate_server(&self, server: usize, values: &[u64]) -> Vec<u64> {
        self.servers[server].iter().map(|c| evaluate(self.field, c, values)).collect()
    }

    /// For every pad group and member: does the member's noise lie in the span
    /// of the other members' noise? This is the statement that, given all
    /// messages, the rest of the group determines the member's storage.
    pub fn group_determinism(&self) -> Vec<(usize, usize, bool)> {
        let mut out = Vec::new();
        for (gi, g) in self.groups.iter().enumerate() {
            let members = g.members();
            for m in members.iter() {
                let (_, own) = self.split_blocks(ServerSet::singleton(m));
                let (_, rest) = self.split_blocks(members.difference(ServerSet::singleton(m)));
                let holds = crate::galois::column_space_contains(&own.transpose(), &rest.transpose())
                    .expect("both blocks span the noise columns");
                out.push((gi, m, holds));
            }
        }
        out
    }

    /// Symbolic rendering of one cell, e.g. `a1+b1+N1(1,1)+N1(2,1)` for K = 2.
    pub fn describe_cell(&self, server: usize, cell: usize) -> String {
        let mut parts = Vec::new();
        for &(i, c) in &self.servers[server][cell] {
            let name = if i < self.message_dim() {
                let (k, j) = (i / self.l_symbols, i % self.l_symbols);
                if self.k_messages <= 26 {
                    format!("{}{}", (b'a' + k as u8) as char, j + 1)
                } else {
                    format!("w{},{}", k + 1, j + 1)
                }
            } else {
                self.noise[i - self.message_dim()].to_string()
            };
            parts.push(if c == 1 { name } else { format!("{c}*{name}") });
        }
        if parts.is_empty() {
            "0".into()
        } else {
            parts.join("+")
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("layout serialises")
    }
}

/// One term of a reconstruction recipe: `coeff · answer[server][index]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct AnswerTerm {
    pub server: usize,
    pub index: usize,
    pub coeff: u64,
}

/// What each server returns and how the user recombines the answers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QueryPlan {
    pub theta: usize,
    pub randomness: u64,
    /// Per server, one combination over that server's cells per answer symbol.
    pub responses: Vec<Vec<Combination>>,
    /// Per desired symbol, the answer combination that yields it.
    pub recipe: Vec<Vec<AnswerTerm>>,
}

impl QueryPlan {
    /// Number of answer symbols each server returns.
    pub fn download_counts(&self) -> Vec<usize> {
        self.responses.iter().map(Vec::len).collect()
    }

    pub fn total_download(&self) -> usize {
        self.responses.iter().map(Vec::len).sum()
    }

    /// The answer of one server computed from its own stored cells only.
    pub fn answer(&self, field: Field, server: usize, cells: &[u64]) -> Vec<u64> {
        self.responses[server].iter().map(|r| evaluate(field, r, cells)).collect()
    }

    /// Checks answer dimensions against the plan.
    pub fn check_answers(&self, answers: &[Vec<u64>]) -> Result<(), SchemeError> {
        if answers.len() != self.responses.len() {
            return Err(SchemeError::ServerCount { expected: self.responses.len(), got: answers.len() });
        }
        for (s, (a, r)) in answers.iter().zip(&self.responses).enumerate() {
            if a.len() != r.len() {
                return Err(SchemeError::AnswerLength { server: s, got: a.len(), expected: r.len() });
            }
        }
        Ok(())
    }

    /// Applies the recipe.
    pub fn reconstruct(&self, field: Field, answers: &[Vec<u64>]) -> Result<Vec<u64>, SchemeError> {
        self.check_answers(answers)?;
        Ok(self
            .recipe
            .iter()
            .map(|terms| {
                terms
                    .iter()
                    .fold(0, |acc, t| field.add(acc, field.mul(t.coeff, answers[t.server][t.index])))
            })
            .collect())
    }

    /// Canonical per-server query descriptor: responses with the leading
    /// coefficient scaled to one, sorted.
    pub fn descriptor(&self, field: Field, server: usize) -> Vec<Combination> {
        let mut out: Vec<Combination> = self.responses[server]
            .iter()
            .filter(|r| !r.is_empty())
            .map(|r| {
                let inv = field.inv(r[0].1).expect("combinations have nonzero coefficients");
                r.iter().map(|&(i, c)| (i, field.mul(c, inv))).collect()
            })
            .collect();
        out.sort();
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("plan serialises")
    }
}

/// Derives the reconstruction recipe for a padded layout: cancel pads inside
/// each pad group, then express each desired symbol as a combination of the
/// pad-free answers.
pub fn derive_recipe(
    layout: &StorageLayout,
    responses: &[Vec<Combination>],
    theta: usize,
) -> Result<Vec<Vec<AnswerTerm>>, SchemeError> {
    let field = layout.field();
    let md = layout.message_dim();
    struct Clean {
        terms: BTreeMap<(usize, usize), u64>,
        message: BTreeMap<usize, u64>,
    }
    let mut clean = Vec::new();
    for g in layout.pad_groups() {
        let expected = responses[g.padded].len();
        for &h in &g.holders {
            if responses[h].len() != expected {
                return Err(SchemeError::PadMismatch { holder: h, got: responses[h].len(), expected });
            }
        }
        for (i, resp) in responses[g.padded].iter().enumerate() {
            let mut terms = BTreeMap::new();
            terms.insert((g.padded, i), 1);
            for &h in &g.holders {
                terms.insert((h, i), field.neg(1));
            }
            let mut message = BTreeMap::new();
            for &(cell, c) in resp {
                let msg_part: Vec<(usize, u64)> =
                    layout.cells(g.padded)[cell].iter().copied().filter(|&(x, _)| x < md).collect();
                combine(field, &mut message, &msg_part, c);
            }
            message.retain(|_, c| *c != 0);
            clean.push(Clean { terms, message });
        }
    }

    // Solve C^T y = e_{θL+j}, C = message content of the clean answers.
    let mut ct = FMatrix::zeros(field, md, clean.len());
    for (ci, c) in clean.iter().enumerate() {
        for (&sym, &v) in &c.message {
            ct.set(sym, ci, v);
        }
    }
    let l = layout.l_symbols();
    let mut rhs = FMatrix::zeros(field, md, l);
    for j in 0..l {
        rhs.set(layout.message_index(theta, j), j, 1);
    }
    let solution = ct.solve(&rhs).expect("dimensions agree");
    let Some(y) = solution else {
        // identify the first symbol that cannot be reached
        for j in 0..l {
            let mut e = FMatrix::zeros(field, md, 1);
            e.set(layout.message_index(theta, j), 0, 1);
            if ct.solve(&e).expect("dimensions agree").is_none() {
                return Err(SchemeError::NotDecodable(j));
            }
        }
        return Err(SchemeError::NotDecodable(0));
    };
    Ok((0..l)
        .map(|j| {
            let mut acc: BTreeMap<(usize, usize), u64> = BTreeMap::new();
            for (ci, c) in clean.iter().enumerate() {
                let w = y.get(ci, j);
                if w == 0 {
                    continue;
                }
                for (key, v) in &c.terms {
                    let e = acc.entry(*key).or_insert(0);
                    *e = field.add(*e, field.mul(w, *v));
                }
            }
            acc.into_iter()
                .filter(|&(_, v)| v != 0)
                .map(|((server, index), coeff)| AnswerTerm { server, index, coeff })
                .collect()
        })
        .collect())
}

/// A storage code plus its retrieval plans.
pub trait Scheme: Send + Sync {
    fn name(&self) -> &'static str;

    fn layout(&self) -> &StorageLayout;

    /// Size of the randomness space, when it fits in a `u64`. Randomness
    /// values are `0..count`.
    fn randomness_count(&self) -> Option<u64>;

    fn plan(&self, theta: usize, randomness: u64) -> Result<QueryPlan, SchemeError>;

    fn decode(&self, plan: &QueryPlan, answers: &[Vec<u64>]) -> Result<Vec<u64>, SchemeError> {
        plan.reconstruct(self.layout().field(), answers)
    }
}

/// Which of the two equiprobable retrieval tables to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Coin {
    First,
    Second,
}

impl Coin {
    pub fn from_randomness(r: u64) -> Self {
        if r.is_multiple_of(2) {
            Coin::First
        } else {
            Coin::Second
        }
    }

    pub fn as_randomness(self) -> u64 {
        match self {
            Coin::First => 0,
            Coin::Second => 1,
        }
    }

    /// `1` or `2`.
    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Coin::First),
            2 => Some(Coin::Second),
            _ => None,
        }
    }
}

// Roles: 0 = DB1, 1 = DB2 (padded), 2 = DB3, 3 = DB4 (pad holders).
// Each cell lists the (message, symbol) pairs it sums, 0-based.
const DB1_CELLS: [&[(usize, usize)]; 6] =
    [&[(0, 0)], &[(0, 2)], &[(1, 0)], &[(1, 2)], &[(0, 1), (1, 1)], &[(0, 3), (1, 3)]];
const DB2_CELLS: [&[(usize, usize)]; 6] =
    [&[(0, 1)], &[(0, 3)], &[(1, 1)], &[(1, 3)], &[(0, 0), (1, 2)], &[(0, 2), (1, 0)]];

/// Cells returned by DB1 (and DB3) / DB2 (and DB4), indexed `[coin][theta]`.
const DB1_TABLE: [[[usize; 3]; 2]; 2] = [[[0, 2, 4], [0, 2, 4]], [[1, 3, 5], [1, 3, 5]]];
const DB2_TABLE: [[[usize; 3]; 2]; 2] = [[[1, 2, 5], [0, 3, 4]], [[0, 3, 4], [1, 2, 5]]];

const REDUCED_K: usize = 2;
const REDUCED_L: usize = 4;

/// The six-cells-per-server scheme for four servers and two messages.
#[derive(Debug, Clone)]
pub struct ReducedScheme {
    roles: [usize; 4],
    layout: StorageLayout,
    fixed_coin: Option<Coin>,
}

fn reduced_layout(field: Field, roles: [usize; 4]) -> StorageLayout {
    let md = REDUCED_K * REDUCED_L;
    let noise_index = |g: usize, k: usize, j: usize| md + g * md + k * REDUCED_L + j;
    let mut noise = Vec::new();
    for g in 0..2 {
        for k in 0..REDUCED_K {
            for j in 0..REDUCED_L {
                noise.push(NoiseLabel { group: g, message: k, symbol: j, share: 0 });
            }
        }
    }
    let build = |cells: &[&[(usize, usize)]; 6], g: usize, padded: bool| -> Vec<Combination> {
        cells
            .iter()
            .map(|terms| {
                let mut c: Combination = Vec::new();
                if padded {
                    c.extend(terms.iter().map(|&(k, j)| (k * REDUCED_L + j, 1)));
                }
                c.extend(terms.iter().map(|&(k, j)| (noise_index(g, k, j), 1)));
                c.sort();
                c
            })
            .collect()
    };
    let mut servers = vec![Vec::new(); 4];
    servers[roles[0]] = build(&DB1_CELLS, 0, true);
    servers[roles[1]] = build(&DB2_CELLS, 1, true);
    servers[roles[2]] = build(&DB1_CELLS, 0, false);
    servers[roles[3]] = build(&DB2_CELLS, 1, false);
    let groups = vec![
        PadGroup { padded: roles[0], holders: vec![roles[2]] },
        PadGroup { padded: roles[1], holders: vec![roles[3]] },
    ];
    StorageLayout::new(field, REDUCED_K, REDUCED_L, noise, groups, servers)
}

/// The reduced-storage layout with DB1..DB4 on servers 0..3.
pub fn encode_reduced_n4k2(field: Field) -> StorageLayout {
    reduced_layout(field, [0, 1, 2, 3])
}

fn check_theta(theta: usize, k: usize) -> Result<(), SchemeError> {
    if theta >= k {
        Err(SchemeError::BadTheta { theta, k })
    } else {
        Ok(())
    }
}

impl ReducedScheme {
    /// DB1..DB4 on servers 0..3: links {1,2},{3,4}, groups {1,3},{2,4}.
    pub fn new(field: Field) -> Self {
        ReducedScheme { roles: [0, 1, 2, 3], layout: encode_reduced_n4k2(field), fixed_coin: None }
    }

    /// Places the construction on an arbitrary pair-link topology.
    ///
    /// The links must be two disjoint pairs and the grouping must pair each
    /// member of the first link with a member of the second.
    pub fn for_topology(field: Field, cm: &CommMatrix, grouping: &Grouping) -> Result<Self, SchemeError> {
        let links = cm.links();
        let shape_ok = cm.n_servers() == 4
            && links.len() == 2
            && links.iter().all(|l| l.len() == 2)
            && links[0].is_disjoint(links[1]);
        if !shape_ok {
            return Err(SchemeError::Unsupported("N = 4 with two disjoint pair links".into()));
        }
        if grouping.g() != 2 || !grouping.is_feasible(cm) || grouping.groups().iter().any(|g| g.len() != 2) {
            return Err(SchemeError::Unsupported("a grouping of two pairs across the links".into()));
        }
        let first = links[0].to_vec();
        let partner = |s: usize| {
            let g = grouping.groups()[grouping.group_of(s).expect("all servers grouped")];
            g.difference(ServerSet::singleton(s)).first().expect("pair")
        };
        let roles = [first[0], first[1], partner(first[0]), partner(first[1])];
        Ok(ReducedScheme { roles, layout: reduced_layout(field, roles), fixed_coin: None })
    }

    /// Always uses the same table. The resulting plans leak `θ`.
    pub fn with_fixed_coin(mut self, coin: Coin) -> Self {
        self.fixed_coin = Some(coin);
        self
    }

    /// Physical server playing DB1..DB4.
    pub fn roles(&self) -> [usize; 4] {
        self.roles
    }

    pub fn plan_with_coin(&self, theta: usize, coin: Coin) -> Result<QueryPlan, SchemeError> {
        check_theta(theta, REDUCED_K)?;
        let c = match coin {
            Coin::First => 0,
            Coin::Second => 1,
        };
        let pick = |cells: &[usize; 3]| -> Vec<Combination> { cells.iter().map(|&i| vec![(i, 1)]).collect() };
        let mut responses = vec![Vec::new(); 4];
        responses[self.roles[0]] = pick(&DB1_TABLE[c][theta]);
        responses[self.roles[2]] = pick(&DB1_TABLE[c][theta]);
        responses[self.roles[1]] = pick(&DB2_TABLE[c][theta]);
        responses[self.roles[3]] = pick(&DB2_TABLE[c][theta]);
        let recipe = derive_recipe(&self.layout, &responses, theta)?;
        Ok(QueryPlan { theta, randomness: coin.as_randomness(), responses, recipe })
    }
}

impl Scheme for ReducedScheme {
    fn name(&self) -> &'static str {
        "reduced_n4k2"
    }

    fn layout(&self) -> &StorageLayout {
        &self.layout
    }

    fn randomness_count(&self) -> Option<u64> {
        Some(2)
    }

    fn plan(&self, theta: usize, randomness: u64) -> Result<QueryPlan, SchemeError> {
        let coin = self.fixed_coin.unwrap_or(Coin::from_randomness(randomness));
        let mut plan = self.plan_with_coin(theta, coin)?;
        plan.randomness = randomness;
        Ok(plan)
    }
}

/// Table plan for DB1..DB4 = servers 0..3.
pub fn plan_reduced_n4k2(theta: usize, coin: Coin) -> Result<QueryPlan, SchemeError> {
    ReducedScheme::new(Field::binary()).plan_with_coin(theta, coin)
}

/// Decodes the desired message from the four servers' answers.
pub fn decode_reduced_n4k2(
    field: Field,
    theta: usize,
    coin: Coin,
    answers: &[Vec<u64>],
) -> Result<Vec<u64>, SchemeError> {
    ReducedScheme::new(field).plan_with_coin(theta, coin)?.reconstruct(field, answers)
}

const MAX_GROUPED_L: u128 = 1 << 12;

/// Grouped one-time-pad storage with virtual-server retrieval.
#[derive(Debug, Clone)]
pub struct GroupedScheme {
    grouping: Grouping,
    layout: StorageLayout,
}

/// `L = g^K`, checked against a size cap.
pub fn grouped_message_length(g: usize, k: usize) -> Result<usize, SchemeError> {
    let l = (g as u128).checked_pow(k as u32).unwrap_or(u128::MAX);
    if l > MAX_GROUPED_L {
        return Err(SchemeError::MessageTooLong(l));
    }
    Ok(l as usize)
}

/// Stores, in each group, every padded symbol at the smallest member and the
/// pads (split additively when the group has more than two members) at the rest.
pub fn encode_grouped(grouping: &Grouping, k: usize, field: Field) -> Result<StorageLayout, SchemeError> {
    let g = grouping.g();
    if g < 2 {
        return Err(SchemeError::TooFewGroups(g));
    }
    if k == 0 {
        return Err(SchemeError::Unsupported("at least one message".into()));
    }
    for &grp in grouping.groups() {
        if grp.len() < 2 {
            return Err(SchemeError::GroupTooSmall(grp));
        }
    }
    let l = grouped_message_length(g, k)?;
    let md = k * l;
    let mut noise = Vec::new();
    let mut servers = vec![Vec::new(); grouping.n_servers()];
    let mut pad_groups = Vec::new();
    for (gi, grp) in grouping.groups().iter().enumerate() {
        let members = grp.to_vec();
        let padded = members[0];
        let holders = members[1..].to_vec();
        let shares = holders.len();
        let base = md + noise.len();
        for kk in 0..k {
            for j in 0..l {
                for s in 0..shares {
                    noise.push(NoiseLabel { group: gi, message: kk, symbol: j, share: s });
                }
            }
        }
        let share_index = |sym: usize, s: usize| base + sym * shares + s;
        servers[padded] = (0..md)
            .map(|sym| {
                let mut c = vec![(sym, 1)];
                c.extend((0..shares).map(|s| (share_index(sym, s), 1)));
                c
            })
            .collect();
        for (s, &h) in holders.iter().enumerate() {
            servers[h] = (0..md).map(|sym| vec![(share_index(sym, s), 1)]).collect();
        }
        pad_groups.push(PadGroup { padded, holders });
    }
    Ok(StorageLayout::new(field, k, l, noise, pad_groups, servers))
}

/// One summand of a virtual query: `(message, position)` before permutation.
type VirtualSymbol = (usize, usize);

/// The iterative replicated-server query structure for `g` servers and `k`
/// messages, `L = g^k`, in unpermuted positions. Returns, per virtual server,
/// the list of requested sums.
pub fn virtual_queries(g: usize, k: usize, theta: usize) -> Vec<Vec<Vec<VirtualSymbol>>> {
    let mut next = vec![0usize; k];
    let mut fresh = |m: usize| {
        let p = next[m];
        next[m] += 1;
        (m, p)
    };
    let mut queries: Vec<Vec<Vec<VirtualSymbol>>> = vec![Vec::new(); g];
    // side[server][subset mask] = undesired-only sums from the previous round
    let mut side: Vec<HashMap<u32, Vec<Vec<VirtualSymbol>>>> = vec![HashMap::new(); g];
    for r in 1..=k {
        let subsets: Vec<u32> = {
            let mut v: Vec<u32> = (0u32..(1 << k)).filter(|m| m.count_ones() as usize == r).collect();
            v.sort_by_key(|m| (0..k).filter(|i| m & (1 << i) != 0).collect::<Vec<_>>());
            v
        };
        let mut new_side: Vec<HashMap<u32, Vec<Vec<VirtualSymbol>>>> = vec![HashMap::new(); g];
        for (n, query) in queries.iter_mut().enumerate() {
            for &s in &subsets {
                if s & (1 << theta) != 0 {
                    if r == 1 {
                        query.push(vec![fresh(theta)]);
                        continue;
                    }
                    let rest = s & !(1 << theta);
                    for (other, side_info) in side.iter().enumerate() {
                        if other == n {
                            continue;
                        }
                        for sum in side_info.get(&rest).into_iter().flatten() {
                            let mut q = vec![fresh(theta)];
                            q.extend(sum.iter().copied());
                            q.sort();
                            query.push(q);
                        }
                    }
                } else {
                    let count = (g - 1).pow(r as u32 - 1);
                    for _ in 0..count {
                        let q: Vec<VirtualSymbol> = (0..k).filter(|m| s & (1 << m) != 0).map(&mut fresh).collect();
                        new_side[n].entry(s).or_default().push(q.clone());
                        query.push(q);
                    }
                }
            }
        }
        side = new_side;
    }
    queries
}

fn factorial(n: usize) -> Option<u64> {
    (1..=n as u64).try_fold(1u64, |acc, x| acc.checked_mul(x))
}

fn nth_permutation(l: usize, mut index: u64) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..l).collect();
    let mut out = Vec::with_capacity(l);
    for i in (1..=l).rev() {
        let f = factorial(i - 1).expect("caller checked the range");
        let pos = (index / f) as usize;
        index %= f;
        out.push(pool.remove(pos));
    }
    out
}

/// Number of distinct permutation tuples, if it fits in a `u64`.
pub fn permutation_space(l: usize, k: usize) -> Option<u64> {
    let f = factorial(l)?;
    (0..k).try_fold(1u64, |acc, _| acc.checked_mul(f))
}

/// One permutation of `0..l` per message. Seeds below [`permutation_space`]
/// index the permutation tuples bijectively (mixed-radix Lehmer code); larger
/// spaces fall back to a seeded shuffle.
pub fn permutations_from_seed(l: usize, k: usize, seed: u64) -> Vec<Vec<usize>> {
    match (permutation_space(l, k), factorial(l)) {
        (Some(space), Some(f)) => {
            let mut s = seed % space;
            (0..k)
                .map(|_| {
                    let idx = s % f;
                    s /= f;
                    nth_permutation(l, idx)
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..k)
                .map(|_| {
                    let mut p: Vec<usize> = (0..l).collect();
                    p.shuffle(&mut rng);
                    p
                })
                .collect()
        }
    }
}

impl GroupedScheme {
    pub fn new(grouping: &Grouping, k: usize, field: Field) -> Result<Self, SchemeError> {
        let layout = encode_grouped(grouping, k, field)?;
        Ok(GroupedScheme { grouping: grouping.clone(), layout })
    }

    pub fn grouping(&self) -> &Grouping {
        &self.grouping
    }

    /// Plan for explicit permutations (one per message).
    pub fn plan_with_permutations(
        &self,
        theta: usize,
        perms: &[Vec<usize>],
        randomness: u64,
    ) -> Result<QueryPlan, SchemeError> {
        let k = self.layout.k_messages();
        let l = self.layout.l_symbols();
        check_theta(theta, k)?;
        let vq = virtual_queries(self.grouping.g(), k, theta);
        let mut responses = vec![Vec::new(); self.layout.n_servers()];
        for (v, pg) in self.layout.pad_groups().iter().enumerate() {
            let materialised: Vec<Combination> = vq[v]
                .iter()
                .map(|sum| {
                    let mut c: Combination = sum.iter().map(|&(m, p)| (m * l + perms[m][p], 1)).collect();
                    c.sort();
                    c
                })
                .collect();
            for s in pg.members().iter() {
                // Every member's cell `i` holds (a share of) the pad of symbol `i`.
                responses[s] = materialised.clone();
            }
        }
        let recipe = derive_recipe(&self.layout, &responses, theta)?;
        Ok(QueryPlan { theta, randomness, responses, recipe })
    }
}

impl Scheme for GroupedScheme {
    fn name(&self) -> &'static str {
        "grouped"
    }

    fn layout(&self) -> &StorageLayout {
        &self.layout
    }

    fn randomness_count(&self) -> Option<u64> {
        permutation_space(self.layout.l_symbols(), self.layout.k_messages())
    }

    fn plan(&self, theta: usize, randomness: u64) -> Result<QueryPlan, SchemeError> {
        let perms = permutations_from_seed(self.layout.l_symbols(), self.layout.k_messages(), randomness);
        self.plan_with_permutations(theta, &perms, randomness)
    }
}

pub fn plan_grouped(
    grouping: &Grouping,
    k: usize,
    theta: usize,
    perm_seed: u64,
    field: Field,
) -> Result<QueryPlan, SchemeError> {
    GroupedScheme::new(grouping, k, field)?.plan(theta, perm_seed)
}

pub fn decode_grouped(
    grouping: &Grouping,
    k: usize,
    theta: usize,
    perm_seed: u64,
    field: Field,
    answers: &[Vec<u64>],
) -> Result<Vec<u64>, SchemeError> {
    let scheme = GroupedScheme::new(grouping, k, field)?;
    let plan = scheme.plan(theta, perm_seed)?;
    scheme.decode(&plan, answers)
}

/// Storage in symbols (rank of each server's coefficient matrix) and the
/// normalised overheads.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StorageProfile {
    pub symbols: Vec<usize>,
    #[serde(serialize_with = "serialize_rationals")]
    pub per_server: Vec<Rational>,
    #[serde(serialize_with = "serialize_rationals")]
    pub per_group: Vec<Rational>,
    #[serde(serialize_with = "serialize_rational")]
    pub average: Rational,
    #[serde(serialize_with = "serialize_rational")]
    pub average_effective: Rational,
}

fn serialize_rational<S: serde::Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

fn serialize_rationals<S: serde::Serializer>(r: &[Rational], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(r.iter().map(|x| x.to_string()))
}

/// `α_i = rank(S_i)/(KL)`, `α_{G} = Σ_{i∈G} α_i`, `α = Σ rank(S_i)/(NKL)`.
/// `average_effective` divides by the number of servers in groups instead of `N`.
pub fn storage_profile(layout: &StorageLayout) -> StorageProfile {
    let n = layout.n_servers();
    let kl = layout.message_dim() as i128;
    let symbols: Vec<usize> = (0..n).map(|s| layout.server_matrix(s).rank()).collect();
    let norm = |x: i128, d: i128| if d == 0 { rat(0, 1) } else { rat(x, d) };
    let per_server: Vec<Rational> = symbols.iter().map(|&r| norm(r as i128, kl)).collect();
    let per_group = layout
        .pad_groups()
        .iter()
        .map(|g| g.members().iter().map(|m| per_server[m]).sum())
        .collect();
    let total: i128 = symbols.iter().map(|&s| s as i128).sum();
    let effective: i128 = layout.pad_groups().iter().map(|g| g.members().len() as i128).sum();
    StorageProfile {
        average: norm(total, n as i128 * kl),
        average_effective: norm(total, effective * kl),
        symbols,
        per_server,
        per_group,
    }
}
