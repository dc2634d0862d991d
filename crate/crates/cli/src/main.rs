use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicBool, Ordering};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use axpir_core::analysis::{
    achievable_rate, total_form_inequalities, uniform_inequality, dedup_inequalities, parse_rational,
    rate_upper_bound, region_vertices, theorem1_region, theorem2_inequalities, theorem4_capacity,
    capacity_with_collusion, to_f64, CapacityCondition, CapacityOutcome, Inequality, Point, RateRegion,
    Rational,
};
use axpir_core::audit::{
    audit_correctness, audit_privacy, audit_query_message_independence, audit_region_point, audit_security,
    render_table, AuditError, AuditReport, CorrectnessMode, Sampling, SecurityMode, Verdict,
};
use axpir_core::protocol::{measure, run_session, ProtocolError, Scenario};
use axpir_core::schemes::Coin;
use axpir_core::topology::{binomial, feasibility, omega, solve_grouping, ServerSet};

mod scenario;

use scenario::ScenarioFile;

static STDOUT_CLOSED: AtomicBool = AtomicBool::new(false);

/// Writes to stdout; once the reader has gone away further output is dropped.
fn emit(bytes: &[u8]) {
    if STDOUT_CLOSED.load(Ordering::Relaxed) {
        return;
    }
    let mut out = std::io::stdout().lock();
    if out.write_all(bytes).and_then(|_| out.flush()).is_err() {
        STDOUT_CLOSED.store(true, Ordering::Relaxed);
    }
}

macro_rules! outln {
    () => {
        emit(b"\n")
    };
    ($($arg:tt)*) => {
        emit(format!("{}\n", format_args!($($arg)*)).as_bytes())
    };
}

#[derive(Debug, Parser)]
#[command(name = "axpir", version, about = "Private retrieval with grouped, partially communicating servers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimal server groupings for a topology.
    Group(GroupArgs),
    /// Achievable rate, upper bound and capacity.
    Rates(RatesArgs),
    /// Storage/download outer-bound regions and their vertices.
    Region(RegionArgs),
    /// Run retrieval sessions and measure (alpha, beta, R).
    Simulate(SimulateArgs),
    /// Audit correctness, privacy, security and query independence.
    Verify(VerifyArgs),
}

#[derive(Debug, Args)]
struct GroupArgs {
    file: PathBuf,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RatesArgs {
    file: PathBuf,
    /// Six-decimal approximations instead of exact fractions.
    #[arg(long)]
    float: bool,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RegionArgs {
    /// Scenario file supplying group sizes and K.
    file: Option<PathBuf>,
    /// Comma-separated: t1, t2, total, uniform.
    #[arg(long, value_delimiter = ',', default_value = "t1")]
    theorems: Vec<String>,
    /// Group sizes, e.g. 2,2.
    #[arg(long, value_delimiter = ',')]
    sizes: Option<Vec<usize>>,
    /// Number of messages.
    #[arg(long)]
    k: Option<usize>,
    /// Total servers for `total`; defaults to the sum of the group sizes.
    #[arg(long)]
    n: Option<usize>,
    /// Extra points to test, as alpha,beta (fractions allowed).
    #[arg(long = "point")]
    points: Vec<String>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Six-decimal values instead of fractions.
    #[arg(long)]
    float: bool,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    file: PathBuf,
    /// Desired message, 1-based. Cycles through all messages when omitted.
    #[arg(long)]
    theta: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    sessions: usize,
    /// Write every transcript as JSON.
    #[arg(long)]
    dump_transcript: Option<PathBuf>,
    #[arg(long)]
    json: Option<PathBuf>,
    #[arg(long)]
    float: bool,
    /// Always use the given retrieval table (1 or 2); reduced scheme only.
    #[arg(long)]
    fix_coin: Option<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Check {
    Correctness,
    Privacy,
    Security,
    Independence,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Exhaustive,
    Sample,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    file: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "correctness,privacy,security,independence")]
    checks: Vec<Check>,
    #[arg(long, value_enum, default_value_t = Mode::Exhaustive)]
    mode: Mode,
    /// Samples per sampled check.
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    fix_coin: Option<u8>,
    #[arg(long)]
    json: Option<PathBuf>,
}

/// Exit status: 1 for failed audits or infeasible topologies, 2 for bad input.
#[derive(Debug)]
enum Outcome {
    Ok,
    Failed,
}

/// Bad flags or input; exit status 2.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Usage(msg.into()).into()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Group(a) => cmd_group(a),
        Command::Rates(a) => cmd_rates(a),
        Command::Region(a) => cmd_region(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Verify(a) => cmd_verify(a),
    };
    match result {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let is_usage = e.downcast_ref::<Usage>().is_some() || e.downcast_ref::<scenario::FieldError>().is_some();
            ExitCode::from(if is_usage { 2 } else { 1 })
        }
    }
}

fn load(path: &Path) -> Result<ScenarioFile> {
    let file = ScenarioFile::load(path)?;
    for w in &file.warnings {
        eprintln!("warning: {w}");
    }
    Ok(file)
}

/// Builds the scenario; infeasible topologies are reported, other failures are usage errors.
fn build(file: &ScenarioFile) -> Result<Option<Scenario>> {
    match file.build() {
        Ok(sc) => Ok(Some(sc)),
        Err(ProtocolError::Infeasible) => {
            outln!("g=0 (infeasible)");
            Ok(None)
        }
        Err(e) => Err(usage(e.to_string())),
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn show(r: &Rational, float: bool) -> String {
    if float {
        format!("{:.6}", to_f64(r))
    } else {
        r.to_string()
    }
}

fn cmd_group(args: GroupArgs) -> Result<Outcome> {
    let file = load(&args.file)?;
    let sol = solve_grouping(&file.comm).map_err(|e| usage(e.to_string()))?;
    if sol.g == 0 {
        outln!("g=0 (infeasible)");
    } else {
        let shown: Vec<String> = sol.optima.iter().map(|g| g.to_string()).collect();
        outln!("g={}: {}", sol.g, shown.join(" | "));
    }
    if let Some(path) = &args.json {
        let optima: Vec<Vec<Vec<usize>>> =
            sol.optima.iter().map(|g| g.groups().iter().map(|s| s.to_one_based()).collect()).collect();
        write_json(path, &json!({"g": sol.g, "optima": optima}))?;
    }
    Ok(if sol.g == 0 { Outcome::Failed } else { Outcome::Ok })
}

fn describe_condition(c: &CapacityCondition) -> String {
    match c {
        CapacityCondition::GroupingNotOptimal { g, optimal_g } => format!("grouping has g={g}, optimum is {optimal_g}"),
        CapacityCondition::LambdaRatio { lambda_over_m, g_over_total } => {
            format!("λ/M = {lambda_over_m} ≠ g/ΣM = {g_over_total}")
        }
        CapacityCondition::LinkSize { link, size, expected } => {
            format!("link {} has {size} servers, N − g = {expected}", link + 1)
        }
        CapacityCondition::CollusionShape => "collusion sets are not the groups".into(),
        CapacityCondition::NoLinks => "no links".into(),
    }
}

fn cmd_rates(args: RatesArgs) -> Result<Outcome> {
    let file = load(&args.file)?;
    let sol = solve_grouping(&file.comm).map_err(|e| usage(e.to_string()))?;
    let grouping = match &file.grouping {
        axpir_core::protocol::GroupingChoice::Explicit(g) => Some(g.clone()),
        axpir_core::protocol::GroupingChoice::Solve => sol.first().cloned(),
    };
    let t = file.collusion.as_ref().map(|c| c.t()).unwrap_or(1);
    let mut rows: Vec<(String, String)> = Vec::new();
    let mut failed = false;

    match &grouping {
        Some(g) => {
            rows.push(("grouping".into(), format!("g={} {g}", g.g())));
            let a = achievable_rate(g, t, file.k).map_err(|e| usage(e.to_string()))?;
            rows.push(("achievable".into(), show(&a, args.float)));
        }
        None => {
            rows.push(("grouping".into(), "g=0 (infeasible)".into()));
            rows.push(("achievable".into(), "n/a".into()));
            failed = true;
        }
    }
    match rate_upper_bound(&file.comm, file.k, t) {
        Ok(u) => rows.push(("upper".into(), show(&u, args.float))),
        Err(e) => rows.push(("upper".into(), format!("n/a ({e})"))),
    }
    match &grouping {
        Some(g) => {
            let outcome = match &file.collusion {
                Some(c) => capacity_with_collusion(&file.comm, g, c, file.k),
                None => theorem4_capacity(&file.comm, g, file.k),
            }
            .map_err(|e| usage(e.to_string()))?;
            match outcome {
                CapacityOutcome::Capacity { value, eta_is_zeta } => {
                    rows.push(("capacity".into(), show(&value, args.float)));
                    if eta_is_zeta {
                        rows.push(("capacity_note".into(), "eta evaluated as zeta".into()));
                    }
                }
                CapacityOutcome::ConditionsNotMet { failed } => {
                    let why: Vec<String> = failed.iter().map(describe_condition).collect();
                    rows.push(("capacity".into(), format!("conditions not met: {}", why.join("; "))));
                }
            }
        }
        None => rows.push(("capacity".into(), "n/a".into())),
    }
    let mut sizes: Vec<usize> = file.comm.links().iter().map(|l| l.len()).collect();
    sizes.sort();
    sizes.dedup();
    let feasible = sizes.iter().all(|&x| feasibility(&file.comm, x));
    let detail: Vec<String> = sizes
        .iter()
        .map(|&x| format!("x={x}: C({},{x})={}, Ω={}", file.n, binomial(file.n, x), omega(&file.comm, x)))
        .collect();
    rows.push((
        "feasible".into(),
        if detail.is_empty() { "yes".to_string() } else { format!("{} ({})", yn(feasible), detail.join(", ")) },
    ));

    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in &rows {
        outln!("{k:<width$}  {v}");
    }
    if let Some(path) = &args.csv {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["quantity", "value"])?;
        for (k, v) in &rows {
            w.write_record([k, v])?;
        }
        w.flush()?;
    }
    if let Some(path) = &args.json {
        let obj: serde_json::Map<String, serde_json::Value> =
            rows.iter().map(|(k, v)| (k.clone(), json!(v))).collect();
        write_json(path, &serde_json::Value::Object(obj))?;
    }
    Ok(if failed { Outcome::Failed } else { Outcome::Ok })
}

fn yn(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}

fn parse_point(s: &str) -> Result<Point> {
    let (a, b) = s.split_once(',').ok_or_else(|| usage(format!("point {s:?}: expected alpha,beta")))?;
    let a = parse_rational(a).ok_or_else(|| usage(format!("point {s:?}: bad alpha")))?;
    let b = parse_rational(b).ok_or_else(|| usage(format!("point {s:?}: bad beta")))?;
    Ok(Point::new(a, b))
}

fn cmd_region(args: RegionArgs) -> Result<Outcome> {
    let (mut sizes, mut k) = (vec![2, 2], 2);
    if let Some(path) = &args.file {
        let file = load(path)?;
        let sc = build(&file)?.ok_or_else(|| usage("the topology has no feasible grouping"))?;
        sizes = sc.grouping().sizes();
        k = file.k;
    }
    if let Some(s) = &args.sizes {
        sizes = s.clone();
    }
    if let Some(kk) = args.k {
        k = kk;
    }
    let n = args.n.unwrap_or_else(|| sizes.iter().sum());

    let mut sets: Vec<(String, Vec<Inequality>)> = Vec::new();
    for name in &args.theorems {
        let ineqs = match name.as_str() {
            "t1" => theorem1_region().inequalities,
            "t2" => dedup_inequalities(theorem2_inequalities(&sizes, k).map_err(|e| usage(e.to_string()))?),
            "total" => dedup_inequalities(total_form_inequalities(n, &sizes, k).map_err(|e| usage(e.to_string()))?),
            "uniform" => {
                let d = sizes[0];
                if sizes.iter().any(|&s| s != d) {
                    return Err(usage("uniform needs equal group sizes"));
                }
                vec![uniform_inequality(d, sizes.len(), k).map_err(|e| usage(e.to_string()))?]
            }
            other => return Err(usage(format!("unknown theorem set {other:?}; use t1, t2, total, uniform"))),
        };
        sets.push((name.clone(), ineqs));
    }

    let all: Vec<Inequality> = sets.iter().flat_map(|(_, v)| v.iter().cloned()).collect();
    let region = RateRegion::new(all.clone());
    let en = region_vertices(&region.with_nonnegativity());

    let mut out: Vec<u8> = Vec::new();
    {
        let mut w = csv::WriterBuilder::new().flexible(true).from_writer(&mut out);
        w.write_record(["kind", "a", "b", "c", "label"])?;
        for i in &all {
            w.write_record(["inequality", &show(&i.a, args.float), &show(&i.b, args.float), &show(&i.c, args.float), &i.label])?;
        }
        w.write_record(["kind", "alpha", "beta"])?;
        for v in &en.vertices {
            w.write_record(["vertex", &show(&v.alpha, args.float), &show(&v.beta, args.float)])?;
        }
        for r in &en.rays {
            w.write_record(["ray", &show(&r.alpha, args.float), &show(&r.beta, args.float)])?;
        }
        w.flush()?;
    }
    match &args.csv {
        Some(path) => std::fs::write(path, &out).with_context(|| format!("writing {}", path.display()))?,
        None => emit(&out),
    }

    if en.empty {
        outln!("region: empty");
    }
    let vs: Vec<String> = en.vertices.iter().map(|v| v.to_string()).collect();
    outln!("vertices: {}", vs.join(" "));
    let rs: Vec<String> = en.rays.iter().map(|v| v.to_string()).collect();
    outln!("rays: {}", rs.join(" "));
    for label in region.redundant_labels() {
        let i = all.iter().find(|i| i.label == label).expect("label from the same list");
        outln!("redundant: {label} ({i}) is implied by the other inequalities");
    }

    let mut points = vec![
        Point::new(Rational::new(3, 4), Rational::new(3, 4)),
        Point::new(Rational::from_integer(1), Rational::new(3, 4)),
    ];
    for p in &args.points {
        points.push(parse_point(p)?);
    }
    let labelled: Vec<(String, Vec<Inequality>)> = sets
        .iter()
        .map(|(name, v)| {
            let mut v = v.clone();
            v.push(Inequality::alpha_nonneg());
            v.push(Inequality::beta_nonneg());
            (name.clone(), v)
        })
        .collect();
    for p in &points {
        let report = audit_region_point(p, &labelled);
        match report.verdict {
            Verdict::Finding => outln!("conflict: {p} {}", report.statistic),
            _ => outln!("point {p}: {}", report.statistic),
        }
    }
    Ok(Outcome::Ok)
}

fn coin(n: Option<u8>) -> Result<Option<Coin>> {
    n.map(|c| Coin::from_number(c).ok_or_else(|| usage(format!("--fix-coin must be 1 or 2, got {c}")))).transpose()
}

fn scenario_with_coin(file: &ScenarioFile, fix: Option<u8>) -> Result<Option<Scenario>> {
    let Some(sc) = build(file)? else { return Ok(None) };
    match coin(fix)? {
        Some(c) => Ok(Some(sc.with_fixed_coin(c).map_err(|e| usage(e.to_string()))?)),
        None => Ok(Some(sc)),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<Outcome> {
    let file = load(&args.file)?;
    let Some(sc) = scenario_with_coin(&file, args.fix_coin)? else { return Ok(Outcome::Failed) };
    if let Some(t) = args.theta {
        if t == 0 || t > sc.k_messages() {
            return Err(usage(format!("--theta must be in 1..={}, got {t}", sc.k_messages())));
        }
    }
    if args.sessions == 0 {
        return Err(usage("--sessions must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut transcripts = Vec::with_capacity(args.sessions);
    let mut correct = 0;
    for i in 0..args.sessions {
        let theta = args.theta.map(|t| t - 1).unwrap_or(i % sc.k_messages());
        let randomness = match sc.scheme().randomness_count() {
            Some(c) => rng.gen_range(0..c),
            None => rng.gen(),
        };
        let (m, z) = sc.random_inputs(&mut rng);
        let t = run_session(&sc, theta, &m, &z, randomness)?;
        if t.decoded == m[theta] {
            correct += 1;
        }
        transcripts.push(t);
    }
    let meas = measure(&sc, &transcripts)?;
    let f = args.float;
    outln!("(alpha, beta, R) = ({}, {}, {})", show(&meas.alpha, f), show(&meas.beta, f), show(&meas.rate, f));
    outln!("scheme      {}", sc.kind());
    outln!("grouping    {}", sc.grouping());
    outln!("L           {}", sc.l_symbols());
    outln!("sessions    {}", meas.sessions);
    outln!("1/(N R)     {} ({})", show(&meas.beta_from_rate, f), if meas.identity_holds() { "equals beta" } else { "differs from beta" });
    if sc.grouping().effective_servers() != sc.n_servers() {
        outln!(
            "grouped-only alpha, beta: {}, {}",
            show(&meas.alpha_effective, f),
            show(&meas.beta_effective, f)
        );
    }
    outln!("decoded     {correct}/{} correct", args.sessions);
    if let Some(path) = &args.dump_transcript {
        let ts: Vec<serde_json::Value> = transcripts.iter().map(|t| t.to_json()).collect();
        write_json(path, &serde_json::Value::Array(ts))?;
    }
    if let Some(path) = &args.json {
        write_json(path, &serde_json::to_value(&meas)?)?;
    }
    Ok(if correct == args.sessions { Outcome::Ok } else { Outcome::Failed })
}

fn audit_error(e: AuditError) -> anyhow::Error {
    match e {
        AuditError::BudgetExceeded { .. } | AuditError::RandomnessTooLarge | AuditError::BadCoalition { .. } => {
            usage(format!("{e}; rerun with --mode sample"))
        }
        other => other.into(),
    }
}

fn cmd_verify(args: VerifyArgs) -> Result<Outcome> {
    let file = load(&args.file)?;
    let Some(sc) = scenario_with_coin(&file, args.fix_coin)? else { return Ok(Outcome::Failed) };
    let sampling = Sampling { samples: args.samples, seed: args.seed };
    let mut reports: Vec<AuditReport> = Vec::new();
    let mut checks = args.checks.clone();
    checks.dedup();
    for check in checks {
        match check {
            Check::Correctness => {
                let mode = match args.mode {
                    Mode::Exhaustive => CorrectnessMode::Exhaustive,
                    Mode::Sample => CorrectnessMode::Sampled { samples: args.samples, seed: args.seed },
                };
                reports.push(audit_correctness(&sc, mode).map_err(audit_error)?);
            }
            Check::Privacy => {
                for coalition in sc.collusion().coalitions(sc.n_servers()) {
                    let r = match args.mode {
                        Mode::Exhaustive => audit_privacy(&sc, coalition, None),
                        Mode::Sample => audit_privacy(&sc, coalition, Some(sampling)),
                    };
                    reports.push(r.map_err(audit_error)?);
                }
            }
            Check::Security => {
                let covered = sc.comm().links().iter().fold(ServerSet::EMPTY, |acc, l| acc.union(*l));
                let mut targets: Vec<ServerSet> = sc.comm().links().to_vec();
                targets.extend(ServerSet::full(sc.n_servers()).difference(covered).iter().map(ServerSet::singleton));
                for link in targets {
                    let layout = sc.scheme().layout();
                    let r = match args.mode {
                        Mode::Exhaustive => match audit_security(layout, link, SecurityMode::Both) {
                            Err(AuditError::BudgetExceeded { .. }) => audit_security(layout, link, SecurityMode::Rank),
                            other => other,
                        },
                        Mode::Sample => audit_security(layout, link, SecurityMode::Rank),
                    };
                    reports.push(r.map_err(audit_error)?);
                }
            }
            Check::Independence => {
                reports.push(audit_query_message_independence(&sc, 8, args.seed).map_err(audit_error)?);
            }
        }
    }
    emit(render_table(&reports).as_bytes());
    for r in reports.iter().filter(|r| r.verdict == Verdict::Fail) {
        if let Some(w) = &r.witness {
            outln!("witness for {}: {}", r.check, serde_json::to_string(w)?);
        }
    }
    let failed = reports.iter().any(|r| r.verdict.is_failure());
    let proven = reports.iter().all(|r| r.verdict == Verdict::Pass);
    outln!(
        "{}",
        match (failed, proven) {
            (true, _) => "result: FAIL",
            (false, true) => "result: all checks passed",
            (false, false) => "result: no violation found (sampled checks are evidence, not proof)",
        }
    );
    if let Some(path) = &args.json {
        let all: Vec<serde_json::Value> = reports.iter().map(|r| r.to_json()).collect();
        write_json(path, &json!({"failed": failed, "reports": all}))?;
    }
    Ok(if failed { Outcome::Failed } else { Outcome::Ok })
}
