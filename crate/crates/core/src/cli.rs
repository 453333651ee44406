//! Driver logic behind the `homotopy` binary: running registry problems,
//! writing traces and summaries, and the hypothesis report.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::domain::{sample_boundary, DomainSpec};
use crate::flow::{gronwall_monitor, integrate, ContinuationOutcome, OutcomeKind, Trace};
use crate::frontends::{
    check_boundary_conditions, inverse_map, solve_fixed_point, BoundaryConditionReport,
    FixedPointResult, FrontendError,
};
use crate::oracle::{
    compare_jacobian, estimate_growth_constant, probe_coercivity, DEFAULT_SEED,
    UNBOUNDED_SAMPLING_HALF_WIDTH,
};
use crate::problem::{validate_problem, Violation, DERIVATIVE_AGREEMENT_TOL};
use crate::registry::{ExpectedOutcome, ProblemKind, ProblemRegistryEntry, ProblemSpec, Registry};
use crate::Vector;

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNEXPECTED: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

const JACOBIAN_SAMPLES: usize = 200;
const COERCIVITY_RADII: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];
const COERCIVITY_SAMPLES: usize = 64;
const GROWTH_SAMPLES: usize = 2000;
const BOUNDARY_SAMPLES: usize = 64;

/// The JSON summary of one run. Non-finite numbers are stored as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub problem: String,
    pub kind: ProblemKind,
    pub expected_outcome: Option<ExpectedOutcome>,
    /// `fixed`, `boundary_eigenpair` or `failed` for fixed-point problems;
    /// `solved` or `failed` for inverse problems; the flow outcome for raw
    /// homotopies; `invalid` or `error` when nothing was integrated.
    pub outcome: String,
    pub flow_outcome: Option<OutcomeKind>,
    pub matches_expected: bool,
    pub x_hat: Option<Vec<f64>>,
    pub residual: Option<f64>,
    pub tau: Option<f64>,
    pub xi: Option<Vec<f64>>,
    pub eigen_residual: Option<f64>,
    pub t_end: Option<f64>,
    pub condition: Option<f64>,
    pub divergence_norm: Option<f64>,
    pub failure: Option<String>,
    pub steps: usize,
    pub max_drift: Option<f64>,
    pub gronwall_k_hat: Option<f64>,
    pub gronwall_envelope_ok: Option<bool>,
    pub escape_check: Option<BoundaryConditionReport>,
    pub violations: Vec<Violation>,
    pub seed: u64,
    pub config: SolverConfig,
}

/// Everything a run produced, including what the summary flattens.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub summary: RunSummary,
    pub outcome: Option<ContinuationOutcome>,
    pub trace: Option<Trace>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn finite_vec(x: &Vector) -> Option<Vec<f64>> {
    x.iter()
        .all(|v| v.is_finite())
        .then(|| x.as_slice().to_vec())
}

fn expected_for(kind: OutcomeKind) -> Option<ExpectedOutcome> {
    match kind {
        OutcomeKind::InteriorZero => Some(ExpectedOutcome::InteriorZero),
        OutcomeKind::BoundaryApproach => Some(ExpectedOutcome::BoundaryApproach),
        OutcomeKind::SingularJacobian => Some(ExpectedOutcome::Singular),
        OutcomeKind::Divergence => Some(ExpectedOutcome::Divergence),
        OutcomeKind::StepFailure => None,
    }
}

impl RunSummary {
    fn blank(entry: &ProblemRegistryEntry, cfg: &SolverConfig) -> Self {
        Self {
            problem: entry.name.to_string(),
            kind: entry.kind,
            expected_outcome: entry.expected_outcome,
            outcome: "error".into(),
            flow_outcome: None,
            matches_expected: false,
            x_hat: None,
            residual: None,
            tau: None,
            xi: None,
            eigen_residual: None,
            t_end: None,
            condition: None,
            divergence_norm: None,
            failure: None,
            steps: 0,
            max_drift: None,
            gronwall_k_hat: None,
            gronwall_envelope_ok: None,
            escape_check: None,
            violations: Vec::new(),
            seed: DEFAULT_SEED,
            config: *cfg,
        }
    }

    fn absorb_flow(&mut self, trace: &Trace, outcome: &ContinuationOutcome) {
        self.flow_outcome = Some(outcome.kind());
        self.steps = trace.states.len().saturating_sub(1);
        self.t_end = trace.last().and_then(|s| finite(s.t));
        self.max_drift = finite(trace.max_residual());
        let g = gronwall_monitor(trace);
        self.gronwall_k_hat = finite(g.k_hat);
        self.gronwall_envelope_ok = Some(g.envelope_ok);
        match outcome {
            ContinuationOutcome::InteriorZero { x1, residual } => {
                self.x_hat = finite_vec(x1);
                self.residual = finite(*residual);
            }
            ContinuationOutcome::BoundaryApproach {
                tau,
                x_near,
                residual,
                ..
            } => {
                self.tau = finite(*tau);
                self.xi = finite_vec(x_near);
                self.residual = finite(*residual);
            }
            ContinuationOutcome::SingularJacobian { t, x, condition } => {
                self.t_end = finite(*t);
                self.xi = None;
                self.x_hat = None;
                self.condition = finite(*condition);
                self.failure = Some(format!(
                    "singular Jacobian at t = {t} near x = {:?}",
                    x.as_slice()
                ));
            }
            ContinuationOutcome::StepFailure { t, reason } => {
                self.t_end = finite(*t);
                self.failure = Some(reason.clone());
            }
            ContinuationOutcome::Divergence { t, norm } => {
                self.t_end = finite(*t);
                self.divergence_norm = finite(*norm);
            }
        }
    }
}

/// Runs one registry entry without touching the filesystem.
pub fn execute(entry: &ProblemRegistryEntry, cfg: &SolverConfig) -> RunRecord {
    let mut summary = RunSummary::blank(entry, cfg);
    let spec = (entry.build)();
    let mut achieved: Option<ExpectedOutcome> = None;
    let mut record_outcome = None;
    let mut record_trace = None;
    match spec {
        ProblemSpec::FixedPoint(fp) => match solve_fixed_point(&fp, cfg) {
            Ok(solve) => {
                summary.absorb_flow(&solve.trace, &solve.outcome);
                summary.outcome = solve.result.label().to_string();
                summary.escape_check = solve.escape_check.clone();
                match &solve.result {
                    FixedPointResult::Fixed { x_hat, residual } => {
                        summary.x_hat = finite_vec(x_hat);
                        summary.residual = finite(*residual);
                        achieved = Some(ExpectedOutcome::InteriorZero);
                    }
                    FixedPointResult::BoundaryEigenpair {
                        tau,
                        xi,
                        eigen_residual,
                    } => {
                        summary.tau = finite(*tau);
                        summary.xi = finite_vec(xi);
                        summary.eigen_residual = finite(*eigen_residual);
                        achieved = Some(ExpectedOutcome::BoundaryApproach);
                    }
                    FixedPointResult::Failed(o) => {
                        // an end point that failed the a-posteriori check is
                        // not a success of any kind
                        achieved = match o.kind() {
                            OutcomeKind::InteriorZero | OutcomeKind::BoundaryApproach => None,
                            k => expected_for(k),
                        };
                    }
                }
                record_outcome = Some(solve.outcome);
                record_trace = Some(solve.trace);
            }
            Err(e) => fail(&mut summary, e),
        },
        ProblemSpec::Inverse(ip) => match inverse_map(&ip, cfg) {
            Ok(solve) => {
                summary.absorb_flow(&solve.trace, &solve.outcome);
                summary.outcome = "solved".into();
                summary.x_hat = finite_vec(&solve.x);
                summary.residual = finite(solve.residual);
                achieved = Some(ExpectedOutcome::InteriorZero);
                record_outcome = Some(solve.outcome);
                record_trace = Some(solve.trace);
            }
            Err(FrontendError::SolveFailed { outcome, trace }) => {
                summary.absorb_flow(&trace, &outcome);
                summary.outcome = "failed".into();
                achieved = match outcome.kind() {
                    OutcomeKind::InteriorZero => None,
                    k => expected_for(k),
                };
                record_outcome = Some(*outcome);
                record_trace = Some(*trace);
            }
            Err(e) => fail(&mut summary, e),
        },
        ProblemSpec::Raw { problem, x0 } => {
            let report = validate_problem(&problem, &x0, cfg);
            if !report.is_clean() {
                summary.outcome = "invalid".into();
                summary.violations = report.violations;
            } else {
                match integrate(&problem, &x0, cfg) {
                    Ok((trace, outcome)) => {
                        summary.absorb_flow(&trace, &outcome);
                        summary.outcome = outcome.kind().as_str().to_string();
                        achieved = expected_for(outcome.kind());
                        record_outcome = Some(outcome);
                        record_trace = Some(trace);
                    }
                    Err(e) => summary.failure = Some(e.to_string()),
                }
            }
        }
    }
    summary.matches_expected = achieved.is_some() && achieved == entry.expected_outcome;
    RunRecord {
        summary,
        outcome: record_outcome,
        trace: record_trace,
    }
}

fn fail(summary: &mut RunSummary, e: FrontendError) {
    match e {
        FrontendError::Invalid(report) => {
            summary.outcome = "invalid".into();
            summary.violations = report.violations;
        }
        other => summary.failure = Some(other.to_string()),
    }
}

/// A float with 17 significant digits, or `null`.
fn json_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".into()
    }
}

/// One JSON object per accepted state.
pub fn write_trace_jsonl(trace: &Trace, out: &mut impl Write) -> io::Result<()> {
    for (step, s) in trace.states.iter().enumerate() {
        let mut line = String::with_capacity(128);
        let xs: Vec<String> = s.x.iter().map(|&v| json_float(v)).collect();
        let kinds: Vec<&str> = trace.events_at(s.t).map(|e| e.kind.as_str()).collect();
        let event = if kinds.is_empty() {
            "null".to_string()
        } else {
            serde_json::to_string(&kinds.join(",")).expect("string serializes")
        };
        let _ = write!(
            line,
            "{{\"step\":{step},\"t\":{},\"x\":[{}],\"residual\":{},\"step_size\":{},\"event\":{event}}}",
            json_float(s.t),
            xs.join(","),
            json_float(s.residual),
            json_float(s.step_size),
        );
        writeln!(out, "{line}")?;
    }
    Ok(())
}

pub fn summary_to_json(summary: &RunSummary) -> String {
    let mut text = serde_json::to_string_pretty(summary).expect("summary serializes");
    text.push('\n');
    text
}

fn write_outputs(
    record: &RunRecord,
    trace_path: Option<&Path>,
    summary_path: Option<&Path>,
) -> io::Result<()> {
    if let Some(path) = trace_path {
        let mut buf = Vec::new();
        if let Some(trace) = &record.trace {
            write_trace_jsonl(trace, &mut buf)?;
        }
        fs::write(path, buf)?;
    }
    if let Some(path) = summary_path {
        fs::write(path, summary_to_json(&record.summary))?;
    }
    Ok(())
}

fn load_config(cfg_path: Option<&Path>, err: &mut dyn Write) -> Option<SolverConfig> {
    match cfg_path {
        None => Some(SolverConfig::default()),
        Some(path) => match SolverConfig::from_json_file(path) {
            Ok(cfg) => Some(cfg),
            Err(e) => {
                let _ = writeln!(err, "error: {e}");
                None
            }
        },
    }
}

fn lookup<'r>(
    registry: &'r Registry,
    name: &str,
    err: &mut dyn Write,
) -> Option<&'r ProblemRegistryEntry> {
    let entry = registry.get(name);
    if entry.is_none() {
        let _ = writeln!(
            err,
            "error: unknown problem '{name}'; registered problems: {}",
            registry.names().join(", ")
        );
    }
    entry
}

fn exit_for(summary: &RunSummary) -> i32 {
    if summary.matches_expected {
        EXIT_OK
    } else {
        EXIT_UNEXPECTED
    }
}

fn status_line(summary: &RunSummary) -> String {
    let expected = summary
        .expected_outcome
        .map_or_else(|| "-".to_string(), |e| e.to_string());
    format!(
        "{}: {} (expected {expected}){}",
        summary.problem,
        summary.outcome,
        if summary.matches_expected {
            ""
        } else {
            " UNEXPECTED"
        }
    )
}

/// `run --problem NAME`.
pub fn run_problem(
    registry: &Registry,
    name: &str,
    cfg_path: Option<&Path>,
    trace_path: Option<&Path>,
    summary_path: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let Some(entry) = lookup(registry, name, err) else {
        return EXIT_USAGE;
    };
    let Some(cfg) = load_config(cfg_path, err) else {
        return EXIT_USAGE;
    };
    let record = execute(entry, &cfg);
    if let Err(e) = write_outputs(&record, trace_path, summary_path) {
        let _ = writeln!(err, "error: {e}");
        return EXIT_USAGE;
    }
    let _ = writeln!(out, "{}", status_line(&record.summary));
    exit_for(&record.summary)
}

/// `run --all`: every entry in parallel, writing `NAME.summary.json` and
/// `NAME.trace.jsonl` into `out_dir`.
///
/// Exits 0 when every entry that declares an expected outcome meets it.
pub fn run_all(
    registry: &Registry,
    cfg_path: Option<&Path>,
    out_dir: &Path,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let Some(cfg) = load_config(cfg_path, err) else {
        return EXIT_USAGE;
    };
    if let Err(e) = fs::create_dir_all(out_dir) {
        let _ = writeln!(err, "error: {}: {e}", out_dir.display());
        return EXIT_USAGE;
    }
    let results: Vec<(RunSummary, io::Result<()>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = registry
            .entries()
            .iter()
            .map(|entry| {
                let cfg = &cfg;
                scope.spawn(move || {
                    let record = execute(entry, cfg);
                    let trace_path = out_dir.join(format!("{}.trace.jsonl", entry.name));
                    let summary_path = out_dir.join(format!("{}.summary.json", entry.name));
                    let written = write_outputs(&record, Some(&trace_path), Some(&summary_path));
                    (record.summary, written)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("problem run panicked"))
            .collect()
    });
    let mut code = EXIT_OK;
    for (summary, written) in &results {
        if let Err(e) = written {
            let _ = writeln!(err, "error: {}: {e}", summary.problem);
            return EXIT_USAGE;
        }
        let _ = writeln!(out, "{}", status_line(summary));
        if summary.expected_outcome.is_some() && !summary.matches_expected {
            code = EXIT_UNEXPECTED;
        }
    }
    code
}

/// One line per entry: name, kind, expected outcome.
pub fn list_problems(registry: &Registry) -> String {
    let mut text = String::new();
    for e in registry.entries() {
        let expected = e
            .expected_outcome
            .map_or_else(|| "-".to_string(), |o| o.to_string());
        let _ = writeln!(text, "{}\t{}\t{expected}", e.name, e.kind);
    }
    text
}

fn sampling_region(domain: &DomainSpec, n: usize) -> DomainSpec {
    if domain.is_bounded() {
        domain.clone()
    } else {
        DomainSpec::open_box(
            Vector::from_element(n, -UNBOUNDED_SAMPLING_HALF_WIDTH),
            Vector::from_element(n, UNBOUNDED_SAMPLING_HALF_WIDTH),
        )
    }
}

/// `check --problem NAME`: the hypothesis report.
///
/// Exits 0 iff validation is clean and the derivative comparison is within
/// the agreement tolerance.
pub fn check_problem(
    registry: &Registry,
    name: &str,
    cfg_path: Option<&Path>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let Some(entry) = lookup(registry, name, err) else {
        return EXIT_USAGE;
    };
    let Some(cfg) = load_config(cfg_path, err) else {
        return EXIT_USAGE;
    };
    let spec = (entry.build)();
    let (p, x0) = match spec.homotopy() {
        Ok(pair) => pair,
        Err(e) => {
            let _ = writeln!(out, "{}: cannot build homotopy: {e}", entry.name);
            return EXIT_UNEXPECTED;
        }
    };
    let mut report = String::new();
    let _ = writeln!(
        report,
        "problem {} ({}, n = {}, m = {}, domain {}, derivative {:?})",
        entry.name,
        entry.kind,
        p.dim_x(),
        p.dim_y(),
        p.domain().label(),
        p.derivative_mode()
    );

    let validation = validate_problem(&p, &x0, &cfg);
    if validation.is_clean() {
        let _ = writeln!(report, "validation: clean");
    } else {
        let _ = writeln!(
            report,
            "validation: {} violation(s)",
            validation.violations.len()
        );
        for v in &validation.violations {
            let _ = writeln!(report, "  {:?}: {}", v.kind, v.detail);
        }
    }

    let jac_err = compare_jacobian(&p, JACOBIAN_SAMPLES, cfg.fd_step);
    let jac_ok = jac_err <= DERIVATIVE_AGREEMENT_TOL;
    let _ = writeln!(
        report,
        "jacobian comparison: max relative error {jac_err:.3e} over {JACOBIAN_SAMPLES} samples ({})",
        if jac_ok { "ok" } else { "MISMATCH" }
    );

    let coercivity = probe_coercivity(&p, &COERCIVITY_RADII, COERCIVITY_SAMPLES, DEFAULT_SEED);
    let _ = writeln!(
        report,
        "coercivity probe (sampled, seed {}): {}",
        coercivity.seed,
        if coercivity.pass {
            "growing"
        } else {
            "not observed"
        }
    );
    for (t, row) in coercivity.times.iter().zip(&coercivity.minima) {
        let cells: Vec<String> = row.iter().map(|m| format!("{m:.3e}")).collect();
        let _ = writeln!(
            report,
            "  t = {t:.2}: min |F| on radii {:?} = [{}]",
            coercivity.radii,
            cells.join(", ")
        );
    }

    let region = sampling_region(p.domain(), p.dim_x());
    match estimate_growth_constant(&p, &region, GROWTH_SAMPLES, DEFAULT_SEED, &cfg) {
        Ok(g) => {
            let _ = writeln!(
                report,
                "growth constant (sampled over {}): K_hat = {:.6e}, {} evaluated, {} singular",
                region.label(),
                g.k_hat,
                g.evaluated,
                g.singular_samples
            );
        }
        Err(e) => {
            let _ = writeln!(report, "growth constant: {e}");
        }
    }

    if let ProblemSpec::FixedPoint(fp) = &spec {
        if let Some(samples) = sample_boundary(&fp.domain, BOUNDARY_SAMPLES, DEFAULT_SEED) {
            match check_boundary_conditions(fp, &samples, cfg.boundary_epsilon) {
                Ok(b) => {
                    let counts: Vec<usize> = (0..4)
                        .map(|i| {
                            b.points
                                .iter()
                                .filter(|c| [c.cond1, c.cond2, c.cond3, c.cond4][i])
                                .count()
                        })
                        .collect();
                    let _ = writeln!(
                        report,
                        "boundary conditions on {} samples: cond1..cond4 hold at {:?}; every sample satisfies one: {}; max |f| = {:.6e}",
                        b.points.len(),
                        counts,
                        b.all_points_satisfy_some,
                        b.max_image_norm
                    );
                }
                Err(e) => {
                    let _ = writeln!(report, "boundary conditions: {e}");
                }
            }
        } else {
            let _ = writeln!(
                report,
                "boundary conditions: domain {} has no sampler",
                fp.domain.label()
            );
        }
    }

    let _ = out.write_all(report.as_bytes());
    if validation.is_clean() && jac_ok {
        EXIT_OK
    } else {
        EXIT_UNEXPECTED
    }
}

/// Default output directory for `run --all`.
pub fn default_out_dir() -> PathBuf {
    PathBuf::from("homotopy-out")
}
