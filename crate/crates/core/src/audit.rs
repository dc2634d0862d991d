//! Verification of correctness, query privacy, query/message independence and
//! storage security.
//!
//! Exhaustive checks enumerate every reachable input and report exact
//! statistics. Sampled checks never report [`Verdict::Pass`]; the best they can
//! say is [`Verdict::NoViolationFound`].
//!
//! Correctness enumeration uses the fact that answers, and hence decoding, are
//! functions of the stored cells only. Noise enters the storage through a
//! noise block `B`; every vector of `{B z}` is reached by some `z` supported on
//! the pivot columns of `B`, so enumerating those `z` covers all reachable
//! storage states. When that space is too large the same reduction is applied
//! per plan to the noise block of the answers.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::analysis::{point_membership, rat, Inequality, Membership, Point, Rational};
use crate::galois::{FMatrix, Field};
use crate::protocol::{run_session, ProtocolError, Scenario};
use crate::schemes::{evaluate, Combination, QueryPlan, Scheme, SchemeError, StorageLayout};
use crate::topology::ServerSet;

/// Elementary evaluations an exhaustive check may perform.
pub const ENUMERATION_BUDGET: u128 = 100_000_000;

/// Plans a privacy check may enumerate.
pub const PLAN_BUDGET: u128 = 1_000_000;

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("exhaustive enumeration needs {needed} evaluations, budget is {budget}")]
    BudgetExceeded { needed: u128, budget: u128 },
    #[error("the randomness space is too large to enumerate; request sampling")]
    RandomnessTooLarge,
    #[error("coalition {coalition} is not a subset of the {n} servers")]
    BadCoalition { coalition: ServerSet, n: usize },
    #[error(transparent)]
    Scheme(#[from] SchemeError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    NoViolationFound,
    /// Conflicting results across inequality sets; not an implementation error.
    Finding,
}

impl Verdict {
    pub fn is_failure(self) -> bool {
        self == Verdict::Fail
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::NoViolationFound => "no violation found",
            Verdict::Finding => "finding",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditMode {
    Exhaustive,
    Sampled,
    Rank,
    Both,
    Exact,
}

impl fmt::Display for AuditMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuditMode::Exhaustive => "exhaustive",
            AuditMode::Sampled => "sampled",
            AuditMode::Rank => "rank",
            AuditMode::Both => "both",
            AuditMode::Exact => "exact",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub check: String,
    pub verdict: Verdict,
    pub statistic: String,
    pub mode: AuditMode,
    pub enumeration_size: u128,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<Value>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub details: BTreeMap<String, String>,
}

impl AuditReport {
    fn new(check: impl Into<String>, verdict: Verdict, statistic: impl Into<String>, mode: AuditMode) -> Self {
        AuditReport {
            check: check.into(),
            verdict,
            statistic: statistic.into(),
            mode,
            enumeration_size: 0,
            witness: None,
            details: BTreeMap::new(),
        }
    }

    fn with_size(mut self, n: u128) -> Self {
        self.enumeration_size = n;
        self
    }

    fn with_witness(mut self, w: Value) -> Self {
        self.witness = Some(w);
        self
    }

    fn detail(mut self, k: &str, v: impl Into<String>) -> Self {
        self.details.insert(k.into(), v.into());
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("report serialises")
    }
}

/// Aligned plain-text table.
pub fn render_table(reports: &[AuditReport]) -> String {
    let header = ["check", "verdict", "mode", "enumerated", "statistic"];
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            [
                r.check.clone(),
                r.verdict.to_string(),
                r.mode.to_string(),
                r.enumeration_size.to_string(),
                r.statistic.clone(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, c) in widths.iter_mut().zip(row) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = vec![line(&header.map(String::from))];
    out.push(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  "));
    out.extend(rows.iter().map(|r| line(r)));
    out.join("\n") + "\n"
}

fn pow_u128(base: u64, exp: usize) -> u128 {
    (0..exp).try_fold(1u128, |acc, _| acc.checked_mul(base as u128)).unwrap_or(u128::MAX)
}

/// Pivot columns (noise-relative indices) of a noise block.
fn noise_pivots(noise_block: &FMatrix) -> Vec<usize> {
    let (_, pivots) = noise_block.rref();
    pivots
}

/// Every answer of every server as a combination over messages ++ noise.
pub fn compile_answers(layout: &StorageLayout, plan: &QueryPlan) -> Vec<Vec<Combination>> {
    let field = layout.field();
    plan.responses
        .iter()
        .enumerate()
        .map(|(s, resp)| {
            resp.iter()
                .map(|r| {
                    let mut acc: BTreeMap<usize, u64> = BTreeMap::new();
                    for &(cell, c) in r {
                        for &(i, v) in &layout.cells(s)[cell] {
                            let e = acc.entry(i).or_insert(0);
                            *e = field.add(*e, field.mul(c, v));
                        }
                    }
                    acc.into_iter().filter(|&(_, v)| v != 0).collect()
                })
                .collect()
        })
        .collect()
}

fn answer_noise_block(layout: &StorageLayout, compiled: &[Vec<Combination>]) -> FMatrix {
    let md = layout.message_dim();
    let mut m = FMatrix::with_cols(layout.field(), layout.noise_dim());
    for row in compiled.iter().flatten() {
        let mut dense = vec![0; layout.noise_dim()];
        for &(i, c) in row {
            if i >= md {
                dense[i - md] = c;
            }
        }
        m.push_row(&dense);
    }
    m
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectnessMode {
    Exhaustive,
    Sampled { samples: u64, seed: u64 },
}

fn split_values(layout: &StorageLayout, x: &[u64]) -> (Vec<Vec<u64>>, Vec<u64>) {
    let l = layout.l_symbols();
    let md = layout.message_dim();
    ((0..layout.k_messages()).map(|k| x[k * l..(k + 1) * l].to_vec()).collect(), x[md..].to_vec())
}

fn correctness_witness(layout: &StorageLayout, theta: usize, randomness: u64, x: &[u64], decoded: Value) -> Value {
    let (messages, noise) = split_values(layout, x);
    json!({
        "theta": theta + 1,
        "randomness": randomness,
        "messages": messages,
        "noise": noise,
        "decoded": decoded,
        "expected": messages[theta],
    })
}

/// Decoding returns the desired message for every input.
pub fn audit_correctness(sc: &Scenario, mode: CorrectnessMode) -> Result<AuditReport, AuditError> {
    match mode {
        CorrectnessMode::Exhaustive => correctness_exhaustive(sc.scheme()),
        CorrectnessMode::Sampled { samples, seed } => correctness_sampled(sc, samples, seed),
    }
}

/// Exhaustive correctness for any scheme, including instrumented ones.
pub fn correctness_exhaustive(scheme: &dyn Scheme) -> Result<AuditReport, AuditError> {
    let layout = scheme.layout();
    let field = layout.field();
    let q = field.q();
    let k = layout.k_messages();
    let l = layout.l_symbols();
    let md = layout.message_dim();
    let count = scheme.randomness_count().ok_or(AuditError::RandomnessTooLarge)?;
    let per_plan_budget = ENUMERATION_BUDGET;
    if (count as u128) * (k as u128) > PLAN_BUDGET {
        return Err(AuditError::RandomnessTooLarge);
    }

    let (_, storage_noise) = layout.split_blocks(ServerSet::full(layout.n_servers()));
    let storage_pivots = noise_pivots(&storage_noise);
    let storage_level = pow_u128(q, md + storage_pivots.len()).saturating_mul(count as u128 * k as u128);

    struct Job {
        theta: usize,
        randomness: u64,
        plan: QueryPlan,
        compiled: Vec<Vec<Combination>>,
        pivots: Vec<usize>,
    }
    let mut jobs = Vec::new();
    let mut total: u128 = 0;
    let level = if storage_level <= per_plan_budget { "storage" } else { "answer" };
    for theta in 0..k {
        for r in 0..count {
            let plan = scheme.plan(theta, r)?;
            let compiled = compile_answers(layout, &plan);
            let pivots = if level == "storage" {
                storage_pivots.clone()
            } else {
                noise_pivots(&answer_noise_block(layout, &compiled))
            };
            total = total.saturating_add(pow_u128(q, md + pivots.len()));
            if total > ENUMERATION_BUDGET {
                return Err(AuditError::BudgetExceeded { needed: total.max(storage_level), budget: ENUMERATION_BUDGET });
            }
            jobs.push(Job { theta, randomness: r, plan, compiled, pivots });
        }
    }

    let mut checked: u128 = 0;
    let mut answers: Vec<Vec<u64>> = Vec::new();
    for job in &jobs {
        let vars: Vec<usize> = (0..md).chain(job.pivots.iter().map(|p| md + p)).collect();
        let mut x = vec![0u64; layout.total_dim()];
        answers.clear();
        answers.extend(job.compiled.iter().map(|rows| vec![0u64; rows.len()]));
        loop {
            for (a, rows) in answers.iter_mut().zip(&job.compiled) {
                for (slot, row) in a.iter_mut().zip(rows) {
                    *slot = evaluate(field, row, &x);
                }
            }
            checked += 1;
            let expected = &x[job.theta * l..(job.theta + 1) * l];
            match scheme.decode(&job.plan, &answers) {
                Ok(d) if d == expected => {}
                Ok(d) => {
                    let w = correctness_witness(layout, job.theta, job.randomness, &x, json!(d));
                    return Ok(AuditReport::new("correctness", Verdict::Fail, format!("failed after {checked} cases"), AuditMode::Exhaustive)
                        .with_size(checked)
                        .with_witness(w));
                }
                Err(e) => {
                    let w = correctness_witness(layout, job.theta, job.randomness, &x, json!(e.to_string()));
                    return Ok(AuditReport::new("correctness", Verdict::Fail, format!("decode error after {checked} cases"), AuditMode::Exhaustive)
                        .with_size(checked)
                        .with_witness(w));
                }
            }
            // odometer over the enumerated coordinates
            let mut i = 0;
            while i < vars.len() {
                let v = &mut x[vars[i]];
                *v += 1;
                if *v < q {
                    break;
                }
                *v = 0;
                i += 1;
            }
            if i == vars.len() {
                break;
            }
        }
    }
    Ok(AuditReport::new("correctness", Verdict::Pass, "0 failures", AuditMode::Exhaustive)
        .with_size(checked)
        .detail("pad_classes", level)
        .detail("plans", jobs.len().to_string()))
}

fn correctness_sampled(sc: &Scenario, samples: u64, seed: u64) -> Result<AuditReport, AuditError> {
    let scheme = sc.scheme();
    let layout = scheme.layout();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut plans: HashMap<(usize, u64), QueryPlan> = HashMap::new();
    for i in 0..samples {
        let theta = rng.gen_range(0..sc.k_messages());
        let r = match scheme.randomness_count() {
            Some(c) => rng.gen_range(0..c),
            None => rng.gen(),
        };
        let (m, z) = sc.random_inputs(&mut rng);
        let plan = match plans.get(&(theta, r)) {
            Some(p) => p.clone(),
            None => {
                let p = scheme.plan(theta, r)?;
                if plans.len() < 4096 {
                    plans.insert((theta, r), p.clone());
                }
                p
            }
        };
        let values = crate::protocol::assemble_values(sc, &m, &z)?;
        let storage = crate::protocol::encode_storage(sc, &values);
        let ok = match crate::protocol::run_plan(sc, &plan, &storage) {
            Ok(t) => t.decoded == m[theta],
            Err(_) => false,
        };
        if !ok {
            let decoded = run_session(sc, theta, &m, &z, r).map(|t| json!(t.decoded)).unwrap_or_else(|e| json!(e.to_string()));
            let w = correctness_witness(layout, theta, r, &values, decoded);
            return Ok(AuditReport::new("correctness", Verdict::Fail, format!("failed at sample {}", i + 1), AuditMode::Sampled)
                .with_size(i as u128 + 1)
                .with_witness(w));
        }
    }
    Ok(AuditReport::new("correctness", Verdict::NoViolationFound, format!("0 failures in {samples} samples"), AuditMode::Sampled)
        .with_size(samples as u128)
        .detail("seed", seed.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampling {
    pub samples: u64,
    pub seed: u64,
}

type Descriptor = Vec<Vec<Combination>>;

/// Term counts of each query combination, sorted per server.
type Shape = Vec<Vec<usize>>;

fn shape_of(d: &Descriptor) -> Shape {
    d.iter()
        .map(|q| {
            let mut v: Vec<usize> = q.iter().map(|c| c.len()).collect();
            v.sort_unstable();
            v
        })
        .collect()
}

fn empirical_tv<K: std::hash::Hash + Eq>(a: &HashMap<K, u64>, b: &HashMap<K, u64>, samples: u64) -> f64 {
    let mut sum: u64 = 0;
    for (key, &ca) in a {
        sum += ca.abs_diff(b.get(key).copied().unwrap_or(0));
    }
    for (key, &cb) in b {
        if !a.contains_key(key) {
            sum += cb;
        }
    }
    sum as f64 / (2 * samples) as f64
}

/// A value seen often under one index and never under another is evidence of
/// leakage; anything else is consistent with privacy.
const SUPPORT_EVIDENCE: u64 = 30;

fn unmatched_support<'a, K: std::hash::Hash + Eq + Ord>(a: &'a HashMap<K, u64>, b: &HashMap<K, u64>) -> Option<(&'a K, u64)> {
    a.iter()
        .filter(|(key, &c)| c >= SUPPORT_EVIDENCE && !b.contains_key(*key))
        .min_by(|x, y| x.0.cmp(y.0))
        .map(|(key, &c)| (key, c))
}

fn coalition_descriptor(field: Field, plan: &QueryPlan, coalition: ServerSet) -> Descriptor {
    coalition.iter().map(|s| plan.descriptor(field, s)).collect()
}

fn descriptor_json(coalition: ServerSet, d: &Descriptor) -> Value {
    let per: serde_json::Map<String, Value> = coalition
        .iter()
        .zip(d)
        .map(|(s, q)| ((s + 1).to_string(), json!(q)))
        .collect();
    Value::Object(per)
}

/// Total variation distance between the query distributions seen by a
/// coalition under different desired indices.
pub fn audit_privacy(sc: &Scenario, coalition: ServerSet, sampling: Option<Sampling>) -> Result<AuditReport, AuditError> {
    privacy_for_scheme(sc.scheme(), coalition, sampling)
}

pub fn privacy_for_scheme(
    scheme: &dyn Scheme,
    coalition: ServerSet,
    sampling: Option<Sampling>,
) -> Result<AuditReport, AuditError> {
    let layout = scheme.layout();
    let n = layout.n_servers();
    if coalition.is_empty() || !coalition.is_subset_of(ServerSet::full(n)) {
        return Err(AuditError::BadCoalition { coalition, n });
    }
    let field = layout.field();
    let k = layout.k_messages();
    let check = format!("privacy {coalition}");
    let enumerable = scheme.randomness_count().filter(|&c| (c as u128) * (k as u128) <= PLAN_BUDGET);

    match (enumerable, sampling) {
        (Some(count), _) => {
            let mut hist: Vec<HashMap<Descriptor, u64>> = vec![HashMap::new(); k];
            for (theta, h) in hist.iter_mut().enumerate() {
                for r in 0..count {
                    let plan = scheme.plan(theta, r)?;
                    *h.entry(coalition_descriptor(field, &plan, coalition)).or_insert(0) += 1;
                }
            }
            let mut worst = (rat(0, 1), 0, 0);
            let mut witness = None;
            for a in 0..k {
                for b in a + 1..k {
                    let mut keys: Vec<&Descriptor> = hist[a].keys().chain(hist[b].keys()).collect();
                    keys.sort();
                    keys.dedup();
                    let mut sum = rat(0, 1);
                    let mut top: Option<(&Descriptor, Rational)> = None;
                    for key in keys {
                        let pa = rat(*hist[a].get(key).unwrap_or(&0) as i128, count as i128);
                        let pb = rat(*hist[b].get(key).unwrap_or(&0) as i128, count as i128);
                        let d = if pa > pb { pa - pb } else { pb - pa };
                        if d > rat(0, 1) && top.as_ref().is_none_or(|(_, t)| d > *t) {
                            top = Some((key, d));
                        }
                        sum += d;
                    }
                    let tv = sum / rat(2, 1);
                    if tv > worst.0 {
                        worst = (tv, a, b);
                        witness = top.map(|(key, _)| {
                            json!({
                                "theta_a": a + 1,
                                "theta_b": b + 1,
                                "query": descriptor_json(coalition, key),
                                "count_a": hist[a].get(key).copied().unwrap_or(0),
                                "count_b": hist[b].get(key).copied().unwrap_or(0),
                                "randomness_count": count,
                            })
                        });
                    }
                }
            }
            let verdict = if worst.0 == rat(0, 1) { Verdict::Pass } else { Verdict::Fail };
            let mut report = AuditReport::new(check, verdict, format!("TV = {}", worst.0), AuditMode::Exhaustive)
                .with_size(count as u128 * k as u128)
                .detail("tv", worst.0.to_string());
            if let Some(w) = witness {
                report = report.with_witness(w);
            }
            Ok(report)
        }
        (None, Some(Sampling { samples, seed })) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut hist: Vec<HashMap<Descriptor, u64>> = vec![HashMap::new(); k];
            let mut shapes: Vec<HashMap<Shape, u64>> = vec![HashMap::new(); k];
            for theta in 0..k {
                for _ in 0..samples {
                    let r = match scheme.randomness_count() {
                        Some(c) => rng.gen_range(0..c),
                        None => rng.gen(),
                    };
                    let plan = scheme.plan(theta, r)?;
                    let d = coalition_descriptor(field, &plan, coalition);
                    *shapes[theta].entry(shape_of(&d)).or_insert(0) += 1;
                    *hist[theta].entry(d).or_insert(0) += 1;
                }
            }
            let mut full_tv = 0.0f64;
            let mut shape_tv = 0.0f64;
            let mut witness = None;
            for a in 0..k {
                for b in 0..k {
                    if a < b {
                        full_tv = full_tv.max(empirical_tv(&hist[a], &hist[b], samples));
                        shape_tv = shape_tv.max(empirical_tv(&shapes[a], &shapes[b], samples));
                    }
                    if a == b || witness.is_some() {
                        continue;
                    }
                    if let Some((key, c)) = unmatched_support(&hist[a], &hist[b]) {
                        witness = Some(json!({
                            "theta_a": a + 1,
                            "theta_b": b + 1,
                            "query": descriptor_json(coalition, key),
                            "count_a": c,
                            "count_b": 0,
                            "seed": seed,
                        }));
                    } else if let Some((key, c)) = unmatched_support(&shapes[a], &shapes[b]) {
                        witness = Some(json!({
                            "theta_a": a + 1,
                            "theta_b": b + 1,
                            "query_shape": key,
                            "count_a": c,
                            "count_b": 0,
                            "seed": seed,
                        }));
                    }
                }
            }
            let distinct = hist.iter().map(|h| h.len()).max().unwrap_or(0);
            let statistic = if distinct as u64 * 2 > samples {
                format!("shape TV = {shape_tv:.6}; full support sparse ({distinct} distinct in {samples})")
            } else {
                format!("empirical TV = {full_tv:.6}, shape TV = {shape_tv:.6}")
            };
            let verdict = if witness.is_some() { Verdict::Fail } else { Verdict::NoViolationFound };
            let mut report = AuditReport::new(check, verdict, statistic, AuditMode::Sampled)
                .with_size(samples as u128 * k as u128)
                .detail("seed", seed.to_string())
                .detail("empirical_tv", format!("{full_tv:.6}"))
                .detail("shape_tv", format!("{shape_tv:.6}"))
                .detail("distinct", distinct.to_string());
            if let Some(w) = witness {
                report = report.with_witness(w);
            }
            Ok(report)
        }
        (None, None) => Err(AuditError::RandomnessTooLarge),
    }
}

/// Runs one retrieval and returns each server's query descriptor.
pub type SessionRunner<'a> = dyn FnMut(usize, &[Vec<u64>], &[u64], u64) -> Result<Vec<Vec<Combination>>, AuditError> + 'a;

/// Queries must not change when only message or noise values change.
pub fn audit_query_message_independence(sc: &Scenario, trials: usize, seed: u64) -> Result<AuditReport, AuditError> {
    let mut runner = |theta: usize, m: &[Vec<u64>], z: &[u64], r: u64| {
        run_session(sc, theta, m, z, r).map(|t| t.queries).map_err(AuditError::from)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inputs: Vec<(Vec<Vec<u64>>, Vec<u64>)> = (0..trials.max(2)).map(|_| sc.random_inputs(&mut rng)).collect();
    let randomness: Vec<u64> = match sc.scheme().randomness_count() {
        Some(c) if c <= 16 => (0..c).collect(),
        Some(c) => (0..16).map(|_| rng.gen_range(0..c)).collect(),
        None => (0..16).map(|_| rng.gen()).collect(),
    };
    independence_with_runner(sc.k_messages(), &randomness, &inputs, &mut runner)
}

/// Generic form used with instrumented runners.
pub fn independence_with_runner(
    k: usize,
    randomness: &[u64],
    inputs: &[(Vec<Vec<u64>>, Vec<u64>)],
    runner: &mut SessionRunner<'_>,
) -> Result<AuditReport, AuditError> {
    let mut checked = 0u128;
    for theta in 0..k {
        for &r in randomness {
            let (m0, z0) = &inputs[0];
            let reference = runner(theta, m0, z0, r)?;
            for (i, (m, z)) in inputs.iter().enumerate().skip(1) {
                checked += 1;
                if runner(theta, m, z, r)? != reference {
                    let w = json!({
                        "theta": theta + 1,
                        "randomness": r,
                        "messages_a": m0,
                        "noise_a": z0,
                        "messages_b": m,
                        "noise_b": z,
                        "input_index": i,
                    });
                    return Ok(AuditReport::new(
                        "independence",
                        Verdict::Fail,
                        "queries changed with message values",
                        AuditMode::Sampled,
                    )
                    .with_size(checked)
                    .with_witness(w));
                }
            }
        }
    }
    Ok(AuditReport::new(
        "independence",
        Verdict::Pass,
        "plans take only (θ, randomness); queries unchanged under input perturbation",
        AuditMode::Sampled,
    )
    .with_size(checked))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecurityMode {
    Rank,
    Exhaustive,
    Both,
}

/// Rank criterion: the message block's columns lie in the noise block's
/// column space. Returns the verdict and, when insecure, a combination of
/// stored cells whose noise cancels.
pub fn security_rank(layout: &StorageLayout, link: ServerSet) -> (bool, Option<Value>) {
    let (a, b) = layout.split_blocks(link);
    if b.rows() == 0 {
        let secure = a.is_zero();
        return (secure, None);
    }
    let secure = crate::galois::column_space_contains(&a, &b).expect("blocks share their row count");
    if secure {
        return (true, None);
    }
    let field = layout.field();
    let rows = b.rows();
    let mut aug = b.hconcat(&FMatrix::identity(field, rows)).expect("same rows");
    aug.rref_in_place();
    let cells: Vec<(usize, usize)> = link
        .iter()
        .filter(|&s| s < layout.n_servers())
        .flat_map(|s| (0..layout.cells(s).len()).map(move |c| (s, c)))
        .collect();
    for r in 0..rows {
        if (0..b.cols()).any(|c| aug.get(r, c) != 0) {
            continue;
        }
        let y: Vec<u64> = (b.cols()..aug.cols()).map(|c| aug.get(r, c)).collect();
        let reveals: Vec<(usize, u64)> = (0..a.cols())
            .map(|col| (col, (0..rows).fold(0, |acc, i| field.add(acc, field.mul(y[i], a.get(i, col))))))
            .filter(|&(_, v)| v != 0)
            .collect();
        if !reveals.is_empty() {
            let combo: Vec<Value> = y
                .iter()
                .enumerate()
                .filter(|&(_, &v)| v != 0)
                .map(|(i, &v)| json!({"server": cells[i].0 + 1, "cell": cells[i].1 + 1, "coeff": v}))
                .collect();
            let msg: Vec<Value> = reveals
                .iter()
                .map(|&(col, v)| {
                    let (k, j) = (col / layout.l_symbols(), col % layout.l_symbols());
                    json!({"message": k + 1, "symbol": j + 1, "coeff": v})
                })
                .collect();
            return (false, Some(json!({"combination": combo, "reveals": msg})));
        }
    }
    (false, None)
}

fn encode_state(values: &[u64], q: u64) -> u128 {
    values.iter().fold(0u128, |acc, &v| acc * q as u128 + v as u128)
}

/// Brute force: the multiset of joint storage states over all noise values is
/// the same for every message assignment.
pub fn security_exhaustive(layout: &StorageLayout, link: ServerSet) -> Result<(bool, u128, Option<Value>), AuditError> {
    let field = layout.field();
    let q = field.q();
    let md = layout.message_dim();
    let servers: Vec<usize> = link.iter().filter(|&s| s < layout.n_servers()).collect();
    let cells: Vec<&Combination> = servers.iter().flat_map(|&s| layout.cells(s).iter()).collect();
    let mut msg_vars: Vec<usize> = Vec::new();
    let mut noise_vars: Vec<usize> = Vec::new();
    for c in &cells {
        for &(i, _) in c.iter() {
            if i < md {
                msg_vars.push(i);
            } else {
                noise_vars.push(i);
            }
        }
    }
    msg_vars.sort();
    msg_vars.dedup();
    noise_vars.sort();
    noise_vars.dedup();
    let states = pow_u128(q, msg_vars.len() + noise_vars.len());
    let bits_needed = (cells.len() as f64) * (q as f64).log2();
    if states > ENUMERATION_BUDGET || bits_needed > 127.0 {
        return Err(AuditError::BudgetExceeded { needed: states, budget: ENUMERATION_BUDGET });
    }
    let mut x = vec![0u64; layout.total_dim()];
    let mut buf = vec![0u64; cells.len()];
    let step = |x: &mut [u64], vars: &[usize]| -> bool {
        for &v in vars {
            x[v] += 1;
            if x[v] < q {
                return true;
            }
            x[v] = 0;
        }
        false
    };
    let mut multiset = |x: &mut Vec<u64>| -> Vec<u128> {
        let mut out = Vec::new();
        for &v in &noise_vars {
            x[v] = 0;
        }
        loop {
            for (b, c) in buf.iter_mut().zip(&cells) {
                *b = evaluate(field, c, x);
            }
            out.push(encode_state(&buf, q));
            if !step(x, &noise_vars) {
                break;
            }
        }
        out.sort_unstable();
        out
    };
    let baseline = multiset(&mut x);
    let mut enumerated = baseline.len() as u128;
    loop {
        if !step(&mut x, &msg_vars) {
            break;
        }
        let current = multiset(&mut x);
        enumerated += current.len() as u128;
        if current != baseline {
            let messages: Vec<Value> = msg_vars
                .iter()
                .filter(|&&i| x[i] != 0)
                .map(|&i| json!({"message": i / layout.l_symbols() + 1, "symbol": i % layout.l_symbols() + 1, "value": x[i]}))
                .collect();
            return Ok((false, enumerated, Some(json!({"nonzero_message_symbols": messages}))));
        }
    }
    Ok((true, enumerated, None))
}

fn secure_word(b: bool) -> &'static str {
    if b {
        "secure"
    } else {
        "insecure"
    }
}

/// Whether the joint storage of `link` reveals nothing about the messages.
pub fn audit_security(layout: &StorageLayout, link: ServerSet, mode: SecurityMode) -> Result<AuditReport, AuditError> {
    let n = layout.n_servers();
    if link.is_empty() || !link.is_subset_of(ServerSet::full(n)) {
        return Err(AuditError::BadCoalition { coalition: link, n });
    }
    let check = format!("security {link}");
    let verdict = |secure: bool| if secure { Verdict::Pass } else { Verdict::Fail };
    match mode {
        SecurityMode::Rank => {
            let (secure, w) = security_rank(layout, link);
            let mut r = AuditReport::new(check, verdict(secure), secure_word(secure), AuditMode::Rank)
                .with_size(1)
                .detail("rank", secure_word(secure));
            if let Some(w) = w {
                r = r.with_witness(w);
            }
            Ok(r)
        }
        SecurityMode::Exhaustive => {
            let (secure, size, w) = security_exhaustive(layout, link)?;
            let mut r = AuditReport::new(check, verdict(secure), secure_word(secure), AuditMode::Exhaustive)
                .with_size(size)
                .detail("exhaustive", secure_word(secure));
            if let Some(w) = w {
                r = r.with_witness(w);
            }
            Ok(r)
        }
        SecurityMode::Both => {
            let (rank, rw) = security_rank(layout, link);
            let (exh, size, ew) = security_exhaustive(layout, link)?;
            let agree = rank == exh;
            let v = if agree { verdict(rank) } else { Verdict::Fail };
            let stat = format!(
                "rank: {}, exhaustive: {}, {}",
                secure_word(rank),
                secure_word(exh),
                if agree { "agree" } else { "DISAGREE" }
            );
            let mut r = AuditReport::new(check, v, stat, AuditMode::Both)
                .with_size(size)
                .detail("rank", secure_word(rank))
                .detail("exhaustive", secure_word(exh))
                .detail("agree", agree.to_string());
            if let Some(w) = rw.or(ew) {
                r = r.with_witness(w);
            }
            Ok(r)
        }
    }
}

/// Membership of a point in several labelled inequality sets. Mixed results
/// are reported as [`Verdict::Finding`].
pub fn audit_region_point(point: &Point, sets: &[(String, Vec<Inequality>)]) -> AuditReport {
    let mut inside = Vec::new();
    let mut outside = Vec::new();
    let mut per_set = serde_json::Map::new();
    for (name, ineqs) in sets {
        match point_membership(point, ineqs) {
            Membership::Inside => {
                inside.push(name.clone());
                per_set.insert(name.clone(), json!("inside"));
            }
            Membership::Violates(v) => {
                let shown: Vec<String> = v.iter().map(|x| format!("{}, slack {}", x.inequality, x.slack)).collect();
                outside.push(format!("{name} ({})", shown.join("; ")));
                per_set.insert(
                    name.clone(),
                    json!(v
                        .iter()
                        .map(|x| json!({"label": x.label, "inequality": x.inequality.to_string(), "slack": x.slack.to_string()}))
                        .collect::<Vec<_>>()),
                );
            }
        }
    }
    let verdict = match (inside.is_empty(), outside.is_empty()) {
        (_, true) => Verdict::Pass,
        (true, false) => Verdict::Fail,
        (false, false) => Verdict::Finding,
    };
    let statistic = match verdict {
        Verdict::Finding => format!(
            "consistency finding: inside {} but violates {}",
            inside.join(", "),
            outside.join(", ")
        ),
        Verdict::Pass => format!("inside {}", inside.join(", ")),
        _ => format!("violates {}", outside.join(", ")),
    };
    let mut report = AuditReport::new(format!("region {point}"), verdict, statistic, AuditMode::Exact)
        .with_size(sets.len() as u128);
    if !outside.is_empty() {
        report = report.with_witness(json!({"point": [point.alpha.to_string(), point.beta.to_string()], "sets": per_set}));
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{theorem1_region, theorem2_inequalities};
    use crate::schemes::{encode_reduced_n4k2, Coin, ReducedScheme};
    use std::sync::Arc;

    fn set(v: &[usize]) -> ServerSet {
        ServerSet::from_indices(v.iter().map(|i| i - 1))
    }

    /// Answers a neighbouring cell at one server.
    struct OffByOne(ReducedScheme);

    impl Scheme for OffByOne {
        fn name(&self) -> &'static str {
            "off_by_one"
        }
        fn layout(&self) -> &StorageLayout {
            self.0.layout()
        }
        fn randomness_count(&self) -> Option<u64> {
            self.0.randomness_count()
        }
        fn plan(&self, theta: usize, r: u64) -> Result<QueryPlan, SchemeError> {
            let mut p = self.0.plan(theta, r)?;
            let cell = &mut p.responses[1][0][0].0;
            *cell = (*cell + 1) % 6;
            Ok(p)
        }
    }

    #[test]
    fn reduced_correctness_exhaustive() {
        let sc = Scenario::reduced_example(Field::binary());
        let r = audit_correctness(&sc, CorrectnessMode::Exhaustive).unwrap();
        assert_eq!(r.verdict, Verdict::Pass);
        assert_eq!(r.enumeration_size, 1 << 22);
        assert_eq!(r.details["pad_classes"], "storage");
    }

    #[test]
    fn corrupted_plan_fails_with_reproducible_witness() {
        let sc = Scenario::reduced_example(Field::binary());
        let bad = Arc::new(OffByOne(ReducedScheme::new(Field::binary())));
        let r = correctness_exhaustive(bad.as_ref()).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        let w = r.witness.unwrap();
        let theta = w["theta"].as_u64().unwrap() as usize - 1;
        let randomness = w["randomness"].as_u64().unwrap();
        let m: Vec<Vec<u64>> = serde_json::from_value(w["messages"].clone()).unwrap();
        let z: Vec<u64> = serde_json::from_value(w["noise"].clone()).unwrap();
        let bad_sc = sc.with_scheme(bad);
        let t = run_session(&bad_sc, theta, &m, &z, randomness).unwrap();
        assert_ne!(t.decoded, m[theta]);
    }

    #[test]
    fn grouped_correctness_sampled() {
        let sc = Scenario::grouped_example(Field::new(3).unwrap(), 2);
        let r = audit_correctness(&sc, CorrectnessMode::Sampled { samples: 2000, seed: 1 }).unwrap();
        assert_eq!(r.verdict, Verdict::NoViolationFound);
    }

    #[test]
    fn budget_is_enforced() {
        let sc = Scenario::grouped_example(Field::new(5).unwrap(), 2);
        assert!(matches!(
            audit_correctness(&sc, CorrectnessMode::Exhaustive),
            Err(AuditError::BudgetExceeded { .. })
        ));
    }

    #[test]
    fn reduced_privacy() {
        let sc = Scenario::reduced_example(Field::binary());
        for c in [vec![1], vec![2], vec![3], vec![4], vec![1, 3], vec![2, 4]] {
            let r = audit_privacy(&sc, set(&c), None).unwrap();
            assert_eq!(r.verdict, Verdict::Pass, "{c:?}");
            assert_eq!(r.details["tv"], "0");
        }
        let r = audit_privacy(&sc, set(&[1, 2]), None).unwrap();
        assert_eq!(r.details["tv"], "1");
        let fixed = sc.with_fixed_coin(Coin::First).unwrap();
        let r = audit_privacy(&fixed, set(&[2]), None).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.details["tv"], "1");
        assert!(r.witness.is_some());
        let r = audit_privacy(&fixed, set(&[1]), None).unwrap();
        assert_eq!(r.details["tv"], "0");
    }

    #[test]
    fn grouped_privacy_exhaustive() {
        let sc = Scenario::grouped_example(Field::binary(), 2);
        for s in 0..4 {
            let r = audit_privacy(&sc, ServerSet::singleton(s), None).unwrap();
            assert_eq!(r.verdict, Verdict::Pass);
            assert_eq!(r.enumeration_size, 1152);
        }
    }

    #[test]
    fn large_randomness_needs_sampling() {
        let sc = Scenario::grouped_example(Field::binary(), 3);
        assert!(matches!(audit_privacy(&sc, set(&[1]), None), Err(AuditError::RandomnessTooLarge)));
        let r = audit_privacy(&sc, set(&[1]), Some(Sampling { samples: 200, seed: 3 })).unwrap();
        assert_eq!(r.verdict, Verdict::NoViolationFound);
    }

    /// Reduced scheme with the coin fixed but an unbounded randomness space.
    struct Unbounded(ReducedScheme);

    impl Scheme for Unbounded {
        fn name(&self) -> &'static str {
            "unbounded"
        }
        fn layout(&self) -> &StorageLayout {
            self.0.layout()
        }
        fn randomness_count(&self) -> Option<u64> {
            None
        }
        fn plan(&self, theta: usize, _r: u64) -> Result<QueryPlan, SchemeError> {
            self.0.plan_with_coin(theta, Coin::First)
        }
    }

    #[test]
    fn sampled_privacy_catches_a_fixed_coin() {
        let leaky = Unbounded(ReducedScheme::new(Field::binary()));
        let r = privacy_for_scheme(&leaky, set(&[2]), Some(Sampling { samples: 100, seed: 1 })).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
        assert_eq!(r.details["empirical_tv"], "1.000000");
        assert!(r.witness.is_some());
        let r = privacy_for_scheme(&leaky, set(&[1]), Some(Sampling { samples: 100, seed: 1 })).unwrap();
        assert_eq!(r.verdict, Verdict::NoViolationFound);
    }

    #[test]
    fn independence() {
        for sc in [Scenario::reduced_example(Field::binary()), Scenario::grouped_example(Field::new(3).unwrap(), 2)] {
            let r = audit_query_message_independence(&sc, 4, 9).unwrap();
            assert_eq!(r.verdict, Verdict::Pass);
        }
        let sc = Scenario::reduced_example(Field::binary());
        let mut leaky = |theta: usize, m: &[Vec<u64>], z: &[u64], r: u64| -> Result<_, AuditError> {
            let t = run_session(&sc, theta, m, z, r ^ m[0][0])?;
            Ok(t.queries)
        };
        let inputs = vec![
            (vec![vec![0; 4], vec![0; 4]], vec![0; 16]),
            (vec![vec![1, 0, 0, 0], vec![0; 4]], vec![0; 16]),
        ];
        let r = independence_with_runner(2, &[0, 1], &inputs, &mut leaky).unwrap();
        assert_eq!(r.verdict, Verdict::Fail);
    }

    #[test]
    fn security_modes_agree() {
        let layout = encode_reduced_n4k2(Field::binary());
        for (link, secure) in [(vec![1, 2], true), (vec![3, 4], true), (vec![1, 3], false), (vec![2, 4], false)] {
            let r = audit_security(&layout, set(&link), SecurityMode::Both).unwrap();
            assert_eq!(r.details["agree"], "true");
            assert_eq!(r.passed(), secure, "{link:?}");
        }
        let r = audit_security(&layout, set(&[1, 3]), SecurityMode::Rank).unwrap();
        let w = r.witness.unwrap();
        assert!(!w["reveals"].as_array().unwrap().is_empty());
    }

    #[test]
    fn cleartext_layout_is_insecure() {
        let f = Field::binary();
        let servers = vec![vec![vec![(0, 1)], vec![(1, 1)]], vec![vec![(0, 1), (1, 1)]]];
        let layout = StorageLayout::new(f, 1, 2, vec![], vec![], servers);
        for s in 0..2 {
            let r = audit_security(&layout, ServerSet::singleton(s), SecurityMode::Both).unwrap();
            assert_eq!(r.verdict, Verdict::Fail);
            assert_eq!(r.details["agree"], "true");
        }
    }

    #[test]
    fn region_points() {
        let t1 = ("t1".to_string(), theorem1_region().with_nonnegativity());
        let t2 = ("t2".to_string(), theorem2_inequalities(&[2, 2], 2).unwrap());
        let p = Point::new(rat(3, 4), rat(3, 4));
        assert_eq!(audit_region_point(&p, std::slice::from_ref(&t1)).verdict, Verdict::Pass);
        let r = audit_region_point(&p, &[t1.clone(), t2]);
        assert_eq!(r.verdict, Verdict::Finding);
        assert!(r.statistic.contains("consistency finding"));
        assert_eq!(audit_region_point(&Point::new(rat(1, 1), rat(3, 4)), &[t1]).verdict, Verdict::Pass);
    }

    #[test]
    fn report_json_and_table() {
        let r = AuditReport::new("x", Verdict::Pass, "ok", AuditMode::Rank);
        let j = r.to_json();
        assert_eq!(j["verdict"], "pass");
        assert!(j.get("witness").is_none());
        let t = render_table(&[r]);
        assert!(t.starts_with("check"));
    }
}
