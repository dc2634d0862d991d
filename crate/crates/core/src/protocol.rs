//! In-process retrieval sessions and cost measurement.
//!
//! Servers are pure functions of their stored cells and their query; there is
//! no transport.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use serde::Serialize;
use thiserror::Error;

use crate::analysis::{rat, Rational};
use crate::galois::{Field, FieldError};
use crate::schemes::{storage_profile, Coin, Combination, GroupedScheme, QueryPlan, ReducedScheme, Scheme, SchemeError};
use crate::topology::{solve_grouping, CollusionPattern, CommMatrix, Grouping, TopologyError};

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error("no feasible grouping exists for this topology")]
    Infeasible,
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("{what}: expected {expected}, got {got}")]
    Dimension { what: &'static str, expected: usize, got: usize },
    #[error("no transcripts to measure")]
    NoTranscripts,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeKind {
    ReducedN4k2,
    Grouped,
}

impl SchemeKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "reduced_n4k2" => Some(SchemeKind::ReducedN4k2),
            "grouped" => Some(SchemeKind::Grouped),
            _ => None,
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchemeKind::ReducedN4k2 => "reduced_n4k2",
            SchemeKind::Grouped => "grouped",
        })
    }
}

#[derive(Debug, Clone)]
pub enum GroupingChoice {
    Solve,
    Explicit(Grouping),
}

/// A validated topology together with the scheme that serves it.
#[derive(Clone)]
pub struct Scenario {
    comm: CommMatrix,
    collusion: CollusionPattern,
    kind: SchemeKind,
    grouping: Grouping,
    scheme: Arc<dyn Scheme>,
}

impl fmt::Debug for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Scenario")
            .field("comm", &self.comm)
            .field("kind", &self.kind)
            .field("grouping", &self.grouping.to_string())
            .finish()
    }
}

impl Scenario {
    pub fn new(
        k: usize,
        field: Field,
        comm: CommMatrix,
        collusion: CollusionPattern,
        kind: SchemeKind,
        grouping: GroupingChoice,
    ) -> Result<Self, ProtocolError> {
        let candidates = match grouping {
            GroupingChoice::Explicit(g) => {
                if g.n_servers() != comm.n_servers() {
                    return Err(ProtocolError::Invalid(format!(
                        "grouping is over {} servers, topology has {}",
                        g.n_servers(),
                        comm.n_servers()
                    )));
                }
                let v = g.violations(&comm);
                if let Some(first) = v.first() {
                    return Err(ProtocolError::Invalid(format!("grouping {g}: {first}")));
                }
                vec![g]
            }
            GroupingChoice::Solve => {
                let sol = solve_grouping(&comm)?;
                if !sol.is_feasible() {
                    return Err(ProtocolError::Infeasible);
                }
                sol.optima
            }
        };
        let mut last_err = None;
        for g in candidates {
            let built: Result<Arc<dyn Scheme>, SchemeError> = match kind {
                SchemeKind::ReducedN4k2 => {
                    if k != 2 {
                        return Err(ProtocolError::Invalid(format!("reduced_n4k2 needs k = 2, got {k}")));
                    }
                    ReducedScheme::for_topology(field, &comm, &g).map(|s| Arc::new(s) as Arc<dyn Scheme>)
                }
                SchemeKind::Grouped => GroupedScheme::new(&g, k, field).map(|s| Arc::new(s) as Arc<dyn Scheme>),
            };
            match built {
                Ok(scheme) => return Ok(Scenario { comm, collusion, kind, grouping: g, scheme }),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.map(ProtocolError::from).unwrap_or(ProtocolError::Infeasible))
    }

    /// Four servers, links {1,2},{3,4}, the reduced scheme.
    pub fn reduced_example(field: Field) -> Self {
        let cm = CommMatrix::from_one_based(4, &[vec![1, 2], vec![3, 4]]).expect("valid links");
        Scenario::new(2, field, cm, CollusionPattern::none(), SchemeKind::ReducedN4k2, GroupingChoice::Solve)
            .expect("valid scenario")
    }

    /// Same topology with the grouped scheme.
    pub fn grouped_example(field: Field, k: usize) -> Self {
        let cm = CommMatrix::from_one_based(4, &[vec![1, 2], vec![3, 4]]).expect("valid links");
        Scenario::new(k, field, cm, CollusionPattern::none(), SchemeKind::Grouped, GroupingChoice::Solve)
            .expect("valid scenario")
    }

    /// Replaces the reduced scheme's coin with a constant.
    pub fn with_fixed_coin(mut self, coin: Coin) -> Result<Self, ProtocolError> {
        if self.kind != SchemeKind::ReducedN4k2 {
            return Err(ProtocolError::Invalid("a fixed coin only applies to reduced_n4k2".into()));
        }
        let s = ReducedScheme::for_topology(self.field(), &self.comm, &self.grouping)?.with_fixed_coin(coin);
        self.scheme = Arc::new(s);
        Ok(self)
    }

    /// Replaces the scheme, e.g. with an instrumented or corrupted variant.
    pub fn with_scheme(mut self, scheme: Arc<dyn Scheme>) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn n_servers(&self) -> usize {
        self.comm.n_servers()
    }

    pub fn k_messages(&self) -> usize {
        self.scheme.layout().k_messages()
    }

    pub fn l_symbols(&self) -> usize {
        self.scheme.layout().l_symbols()
    }

    pub fn field(&self) -> Field {
        self.scheme.layout().field()
    }

    pub fn comm(&self) -> &CommMatrix {
        &self.comm
    }

    pub fn collusion(&self) -> &CollusionPattern {
        &self.collusion
    }

    pub fn kind(&self) -> SchemeKind {
        self.kind
    }

    pub fn grouping(&self) -> &Grouping {
        &self.grouping
    }

    pub fn scheme(&self) -> &dyn Scheme {
        self.scheme.as_ref()
    }

    pub fn scheme_arc(&self) -> Arc<dyn Scheme> {
        Arc::clone(&self.scheme)
    }

    /// Uniform message and noise values.
    pub fn random_inputs<R: Rng>(&self, rng: &mut R) -> (Vec<Vec<u64>>, Vec<u64>) {
        let q = self.field().q();
        let messages =
            (0..self.k_messages()).map(|_| (0..self.l_symbols()).map(|_| rng.gen_range(0..q)).collect()).collect();
        let noise = (0..self.scheme.layout().noise_dim()).map(|_| rng.gen_range(0..q)).collect();
        (messages, noise)
    }
}

/// Everything observed in one retrieval.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Transcript {
    pub theta: usize,
    pub randomness: u64,
    pub queries: Vec<Vec<Combination>>,
    pub answers: Vec<Vec<u64>>,
    pub decoded: Vec<u64>,
    pub downloads: Vec<usize>,
}

impl Transcript {
    pub fn total_download(&self) -> usize {
        self.downloads.iter().sum()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("transcript serialises")
    }
}

/// Flattens `messages ++ noise` after dimension and range checks.
pub fn assemble_values(sc: &Scenario, messages: &[Vec<u64>], noise: &[u64]) -> Result<Vec<u64>, ProtocolError> {
    let layout = sc.scheme().layout();
    if messages.len() != layout.k_messages() {
        return Err(ProtocolError::Dimension { what: "messages", expected: layout.k_messages(), got: messages.len() });
    }
    let mut values = Vec::with_capacity(layout.total_dim());
    for m in messages {
        if m.len() != layout.l_symbols() {
            return Err(ProtocolError::Dimension { what: "message length", expected: layout.l_symbols(), got: m.len() });
        }
        for &v in m {
            values.push(layout.field().check(v)?);
        }
    }
    if noise.len() != layout.noise_dim() {
        return Err(ProtocolError::Dimension { what: "noise", expected: layout.noise_dim(), got: noise.len() });
    }
    for &v in noise {
        values.push(layout.field().check(v)?);
    }
    Ok(values)
}

/// Stored cells of every server.
pub fn encode_storage(sc: &Scenario, values: &[u64]) -> Vec<Vec<u64>> {
    let layout = sc.scheme().layout();
    (0..layout.n_servers()).map(|s| layout.evaluate_server(s, values)).collect()
}

/// Runs a session from already-encoded storage. Each server's answer is
/// computed from its own cells and its own query only.
pub fn run_with_storage(
    sc: &Scenario,
    theta: usize,
    storage: &[Vec<u64>],
    randomness: u64,
) -> Result<Transcript, ProtocolError> {
    let plan = sc.scheme().plan(theta, randomness)?;
    run_plan(sc, &plan, storage)
}

pub fn run_plan(sc: &Scenario, plan: &QueryPlan, storage: &[Vec<u64>]) -> Result<Transcript, ProtocolError> {
    let field = sc.field();
    if storage.len() != sc.n_servers() {
        return Err(ProtocolError::Dimension { what: "servers", expected: sc.n_servers(), got: storage.len() });
    }
    let answers: Vec<Vec<u64>> = storage.iter().enumerate().map(|(s, cells)| plan.answer(field, s, cells)).collect();
    let decoded = sc.scheme().decode(plan, &answers)?;
    Ok(Transcript {
        theta: plan.theta,
        randomness: plan.randomness,
        queries: (0..sc.n_servers()).map(|s| plan.descriptor(field, s)).collect(),
        downloads: answers.iter().map(Vec::len).collect(),
        answers,
        decoded,
    })
}

/// Encodes, queries, answers and decodes.
pub fn run_session(
    sc: &Scenario,
    theta: usize,
    messages: &[Vec<u64>],
    noise: &[u64],
    randomness: u64,
) -> Result<Transcript, ProtocolError> {
    if theta >= sc.k_messages() {
        return Err(SchemeError::BadTheta { theta, k: sc.k_messages() }.into());
    }
    let values = assemble_values(sc, messages, noise)?;
    let storage = encode_storage(sc, &values);
    run_with_storage(sc, theta, &storage, randomness)
}

/// Measured storage, download and rate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Measurement {
    #[serde(serialize_with = "ser")]
    pub alpha: Rational,
    #[serde(serialize_with = "ser")]
    pub beta: Rational,
    #[serde(serialize_with = "ser")]
    pub rate: Rational,
    /// `1/(N·R)`; equals `beta` when every server's download is constant.
    #[serde(serialize_with = "ser")]
    pub beta_from_rate: Rational,
    /// Averages over grouped servers only.
    #[serde(serialize_with = "ser")]
    pub alpha_effective: Rational,
    #[serde(serialize_with = "ser")]
    pub beta_effective: Rational,
    pub sessions: usize,
}

fn ser<S: serde::Serializer>(r: &Rational, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&r.to_string())
}

impl Measurement {
    pub fn identity_holds(&self) -> bool {
        self.beta == self.beta_from_rate
    }
}

/// `β_i` = max answer length over sessions / L; `β` = mean of `β_i` over
/// all N servers; `R` = L / mean total download.
pub fn measure(sc: &Scenario, transcripts: &[Transcript]) -> Result<Measurement, ProtocolError> {
    if transcripts.is_empty() {
        return Err(ProtocolError::NoTranscripts);
    }
    let n = sc.n_servers();
    let l = sc.l_symbols() as i128;
    for t in transcripts {
        if t.downloads.len() != n {
            return Err(ProtocolError::Dimension { what: "transcript servers", expected: n, got: t.downloads.len() });
        }
    }
    let profile = storage_profile(sc.scheme().layout());
    let max_per_server: Vec<i128> =
        (0..n).map(|s| transcripts.iter().map(|t| t.downloads[s] as i128).max().unwrap_or(0)).collect();
    let beta_sum: i128 = max_per_server.iter().sum();
    let total: i128 = transcripts.iter().map(|t| t.total_download() as i128).sum();
    let sessions = transcripts.len() as i128;
    if total == 0 {
        return Err(ProtocolError::Invalid("no symbols were downloaded".into()));
    }
    let rate = rat(l * sessions, total);
    let effective = sc.grouping().effective_servers() as i128;
    Ok(Measurement {
        alpha: profile.average,
        beta: rat(beta_sum, n as i128 * l),
        rate,
        beta_from_rate: (rat(n as i128, 1) * rate).recip(),
        alpha_effective: profile.average_effective,
        beta_effective: rat(beta_sum, effective.max(1) * l),
        sessions: transcripts.len(),
    })
}
