//! Scenario files.
//!
//! ```json
//! {"n": 4, "k": 2, "q": 2, "links": [[1,2],[3,4]],
//!  "collusion": [[1,3],[2,4]], "scheme": "reduced_n4k2", "grouping": "solve"}
//! ```
//!
//! Servers are 1-based. `q` defaults to 2, `scheme` to `grouped`, `grouping`
//! to `solve`, `collusion` to none.

use std::fmt;
use std::path::Path;

use axpir_core::galois::Field;
use axpir_core::protocol::{GroupingChoice, ProtocolError, Scenario, SchemeKind};
use axpir_core::topology::{validate, CollusionPattern, CommMatrix, Grouping, LinkViolation};
use serde_json::{Map, Value};

const KEYS: [&str; 7] = ["n", "k", "q", "links", "collusion", "scheme", "grouping"];

/// A rejected scenario file, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "scenario field `{}`: {}", self.field, self.message)
    }
}

impl std::error::Error for FieldError {}

fn err(field: &str, message: impl Into<String>) -> FieldError {
    FieldError { field: field.into(), message: message.into() }
}

#[derive(Debug, Clone)]
pub struct ScenarioFile {
    pub n: usize,
    pub k: usize,
    pub field: Field,
    pub comm: CommMatrix,
    pub collusion: Option<CollusionPattern>,
    pub scheme: SchemeKind,
    pub grouping: GroupingChoice,
    pub warnings: Vec<String>,
}

fn get_usize(obj: &Map<String, Value>, key: &str, default: Option<usize>) -> Result<usize, FieldError> {
    match obj.get(key) {
        None => default.ok_or_else(|| err(key, "missing")),
        Some(v) => v
            .as_u64()
            .map(|x| x as usize)
            .ok_or_else(|| err(key, format!("expected a non-negative integer, got {v}"))),
    }
}

fn get_sets(value: &Value, key: &str) -> Result<Vec<Vec<usize>>, FieldError> {
    let outer = value.as_array().ok_or_else(|| err(key, "expected a list of server lists"))?;
    outer
        .iter()
        .enumerate()
        .map(|(i, inner)| {
            let inner = inner.as_array().ok_or_else(|| err(key, format!("entry {} is not a list", i + 1)))?;
            inner
                .iter()
                .map(|x| {
                    x.as_u64()
                        .map(|v| v as usize)
                        .ok_or_else(|| err(key, format!("entry {} contains a non-integer {x}", i + 1)))
                })
                .collect()
        })
        .collect()
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self, FieldError> {
        let text = std::fs::read_to_string(path).map_err(|e| err("<file>", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, FieldError> {
        let value: Value = serde_json::from_str(text).map_err(|e| err("<json>", e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| err("<json>", "top level must be an object"))?;
        if let Some(unknown) = obj.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(err(unknown, "unknown field"));
        }

        let n = get_usize(obj, "n", None)?;
        if n < 2 {
            return Err(err("n", format!("need at least 2 servers, got {n}")));
        }
        let k = get_usize(obj, "k", None)?;
        if k == 0 {
            return Err(err("k", "need at least one message"));
        }
        let q = get_usize(obj, "q", Some(2))?;
        let field = Field::new(q as u64).map_err(|e| err("q", e.to_string()))?;

        let links = get_sets(obj.get("links").ok_or_else(|| err("links", "missing"))?, "links")?;
        let comm = CommMatrix::from_one_based(n, &links).map_err(|e| err("links", e.to_string()))?;
        let report = validate(&comm);
        if let Some(v) = report.violations.first() {
            let msg = match v {
                LinkViolation::DuplicateLink { first, second } => {
                    format!("links {} and {} are identical", first + 1, second + 1)
                }
                LinkViolation::LinkTooSmall { link, size } => {
                    format!("link {} has {size} server(s); a link needs at least 2", link + 1)
                }
            };
            return Err(err("links", msg));
        }
        let warnings = report
            .warnings
            .iter()
            .map(|w| match w {
                axpir_core::topology::LinkWarning::RedundantSubset { link, superset } => {
                    format!("link {} is contained in link {}", link + 1, superset + 1)
                }
            })
            .collect();

        let collusion = match obj.get("collusion") {
            None | Some(Value::Null) => None,
            Some(v) => {
                let sets = get_sets(v, "collusion")?;
                let sets = sets
                    .iter()
                    .map(|s| axpir_core::topology::ServerSet::from_one_based(s, n))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| err("collusion", e.to_string()))?;
                Some(CollusionPattern::new(n, sets, 1).map_err(|e| err("collusion", e.to_string()))?)
            }
        };

        let scheme = match obj.get("scheme") {
            None => SchemeKind::Grouped,
            Some(Value::String(s)) => SchemeKind::parse(s)
                .ok_or_else(|| err("scheme", format!("unknown scheme {s:?}; use \"reduced_n4k2\" or \"grouped\"")))?,
            Some(v) => return Err(err("scheme", format!("expected a string, got {v}"))),
        };
        if scheme == SchemeKind::ReducedN4k2 {
            if n != 4 {
                return Err(err("n", "reduced_n4k2 needs n = 4"));
            }
            if k != 2 {
                return Err(err("k", "reduced_n4k2 needs k = 2"));
            }
            let pairs = comm.n_links() == 2
                && comm.links().iter().all(|l| l.len() == 2)
                && comm.links()[0].is_disjoint(comm.links()[1]);
            if !pairs {
                return Err(err("links", "reduced_n4k2 needs two disjoint pair links"));
            }
        }

        let grouping = match obj.get("grouping") {
            None => GroupingChoice::Solve,
            Some(Value::String(s)) if s == "solve" => GroupingChoice::Solve,
            Some(Value::String(s)) => return Err(err("grouping", format!("expected \"solve\" or a list, got {s:?}"))),
            Some(v) => {
                let sets = get_sets(v, "grouping")?;
                let g = Grouping::from_one_based(n, &sets).map_err(|e| err("grouping", e.to_string()))?;
                if let Some(first) = g.violations(&comm).first() {
                    return Err(err("grouping", first.to_string()));
                }
                GroupingChoice::Explicit(g)
            }
        };

        Ok(ScenarioFile { n, k, field, comm, collusion, scheme, grouping, warnings })
    }

    pub fn collusion_pattern(&self) -> CollusionPattern {
        self.collusion.clone().unwrap_or_else(CollusionPattern::none)
    }

    pub fn build(&self) -> Result<Scenario, ProtocolError> {
        Scenario::new(self.k, self.field, self.comm.clone(), self.collusion_pattern(), self.scheme, self.grouping.clone())
    }
}
