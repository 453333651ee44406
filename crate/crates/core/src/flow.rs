//! Path following along the Davidenko flow `ẋ = a(t,x) = −S(t,x)·F_t(t,x)`.
//!
//! Along an exact solution `F(t, x(t))` is constant, so a start with
//! `F(0, x0) = 0` stays on the zero set. The discrete trajectory uses a
//! Dormand–Prince 5(4) predictor with PI step control; each accepted step is
//! projected back onto `F(t, ·) = 0` by Newton iterations with the same right
//! inverse.
//!
//! A run ends in one of five ways (see [`ContinuationOutcome`]): an interior
//! zero at `t = 1`, a boundary approach at some `τ ≤ 1`, or one of three
//! breakdowns of the hypotheses that make the flow well defined.

use serde::{Deserialize, Serialize};

use crate::config::SolverConfig;
use crate::error::{EvalError, FlowError, RightInverseError};
use crate::problem::HomotopyProblem;
use crate::right_inverse::RightInverse;
use crate::Vector;

/// Upper clamp on the step in `t`.
pub const MAX_STEP: f64 = 0.1;
const INITIAL_STEP: f64 = 0.01;
const SAFETY: f64 = 0.9;
const PI_BETA: f64 = 0.04;
const PI_ALPHA: f64 = 0.2 - 0.75 * PI_BETA;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 10.0;
/// Conditions above `condition_max / NEAR_SINGULAR_FACTOR` shrink the step.
const NEAR_SINGULAR_FACTOR: f64 = 100.0;
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryState {
    pub t: f64,
    pub x: Vector,
    /// `‖F(t, x)‖`
    pub residual: f64,
    /// The step that produced this state (the initial step guess for `t = 0`).
    pub step_size: f64,
    /// `‖a(t, x)‖`, infinite where `F_x` is numerically singular.
    pub tangent_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    Start,
    CorrectorRetry,
    SingularStage,
    NearSingular,
    EndpointSnap,
    BoundaryLocated,
    Terminated,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Start => "start",
            Self::CorrectorRetry => "corrector-retry",
            Self::SingularStage => "singular-stage",
            Self::NearSingular => "near-singular",
            Self::EndpointSnap => "endpoint-snap",
            Self::BoundaryLocated => "boundary-located",
            Self::Terminated => "terminated",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t: f64,
    pub kind: EventKind,
    pub detail: String,
}

/// Every accepted state of a run, in increasing `t`, plus notable events.
///
/// Events are stamped with the `t` of the state current when they occurred.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub states: Vec<TrajectoryState>,
    pub events: Vec<TraceEvent>,
    /// `max ‖a‖ / (‖x‖ + 1)` over the states.
    pub growth_constant_estimate: f64,
}

impl Trace {
    fn event(&mut self, t: f64, kind: EventKind, detail: impl Into<String>) {
        self.events.push(TraceEvent {
            t,
            kind,
            detail: detail.into(),
        });
    }

    /// Events stamped with exactly this `t`.
    pub fn events_at(&self, t: f64) -> impl Iterator<Item = &TraceEvent> {
        self.events.iter().filter(move |e| e.t == t)
    }

    pub fn last(&self) -> Option<&TrajectoryState> {
        self.states.last()
    }

    pub fn max_residual(&self) -> f64 {
        self.states.iter().map(|s| s.residual).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeKind {
    InteriorZero,
    BoundaryApproach,
    SingularJacobian,
    StepFailure,
    Divergence,
}

impl OutcomeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::InteriorZero => "interior_zero",
            Self::BoundaryApproach => "boundary_approach",
            Self::SingularJacobian => "singular_jacobian",
            Self::StepFailure => "step_failure",
            Self::Divergence => "divergence",
        }
    }
}

/// How a continuation run ended.
#[derive(Debug, Clone, PartialEq)]
pub enum ContinuationOutcome {
    /// `t` reached 1 at an interior point with `‖F(1, x1)‖` within tolerance.
    InteriorZero {
        x1: Vector,
        residual: f64,
    },
    /// The path came within `boundary_epsilon` of `∂D` at `t = tau`, with
    /// `F(tau, x_near) ≈ 0`.
    BoundaryApproach {
        tau: f64,
        x_near: Vector,
        residual: f64,
        boundary_distance: f64,
    },
    SingularJacobian {
        t: f64,
        x: Vector,
        condition: f64,
    },
    StepFailure {
        t: f64,
        reason: String,
    },
    /// `‖x‖` exceeded `1 / min_step`.
    Divergence {
        t: f64,
        norm: f64,
    },
}

impl ContinuationOutcome {
    pub fn kind(&self) -> OutcomeKind {
        match self {
            Self::InteriorZero { .. } => OutcomeKind::InteriorZero,
            Self::BoundaryApproach { .. } => OutcomeKind::BoundaryApproach,
            Self::SingularJacobian { .. } => OutcomeKind::SingularJacobian,
            Self::StepFailure { .. } => OutcomeKind::StepFailure,
            Self::Divergence { .. } => OutcomeKind::Divergence,
        }
    }
}

fn singular(t: f64, e: RightInverseError) -> FlowError {
    match e {
        RightInverseError::SingularJacobian { condition } => {
            FlowError::SingularJacobian { t, condition }
        }
        other => FlowError::InvalidStart(other.to_string()),
    }
}

/// `a(t,x)` together with the condition estimate of `F_x(t,x)`.
fn tangent_with_condition(
    p: &HomotopyProblem,
    t: f64,
    x: &Vector,
    cfg: &SolverConfig,
) -> Result<(Vector, f64), FlowError> {
    let fx = p.eval_fx(t, x)?;
    let ft = p.eval_ft(t, x)?;
    let s = RightInverse::factor(&fx, cfg.condition_max).map_err(|e| singular(t, e))?;
    let a = -s.apply(&ft).map_err(|e| singular(t, e))?;
    if a.iter().any(|v| !v.is_finite()) {
        return Err(EvalError::NonFinite { what: "tangent" }.into());
    }
    Ok((a, s.condition()))
}

/// The tangent `a(t,x) = −S(t,x)·F_t(t,x)`, minimum-norm when `F_x` is wide.
pub fn tangent_field(
    p: &HomotopyProblem,
    t: f64,
    x: &Vector,
    cfg: &SolverConfig,
) -> Result<Vector, FlowError> {
    tangent_with_condition(p, t, x, cfg).map(|(a, _)| a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Correction {
    pub x: Vector,
    pub residual: f64,
    pub iterations: usize,
}

fn correct(
    p: &HomotopyProblem,
    t: f64,
    x: &Vector,
    cfg: &SolverConfig,
    confine: bool,
) -> Result<Correction, FlowError> {
    let mut x = x.clone();
    let mut r = p.eval_f(t, &x)?;
    let mut norm = r.norm();
    if norm <= cfg.drift_tol {
        return Ok(Correction {
            x,
            residual: norm,
            iterations: 0,
        });
    }
    for it in 1..=cfg.corrector_max_iters {
        let fx = p.eval_fx(t, &x)?;
        let s = RightInverse::factor(&fx, cfg.condition_max).map_err(|e| singular(t, e))?;
        x -= s.apply(&r).map_err(|e| singular(t, e))?;
        if confine && !p.domain().contains(&x) {
            return Err(FlowError::LeftDomain { t });
        }
        r = p.eval_f(t, &x)?;
        norm = r.norm();
        if norm <= cfg.drift_tol {
            return Ok(Correction {
                x,
                residual: norm,
                iterations: it,
            });
        }
    }
    Err(FlowError::CorrectorDivergence {
        iterations: cfg.corrector_max_iters,
        residual: norm,
    })
}

/// Further Newton iterations at `t = 1`, kept while the residual strictly
/// drops and the iterate stays clear of the boundary. Sharpens end points on
/// double roots, where `drift_tol` only pins `x` to about its square root.
fn polish_endpoint(p: &HomotopyProblem, c: Correction, cfg: &SolverConfig) -> Correction {
    let domain = p.domain();
    let mut best = c;
    for _ in 0..cfg.corrector_max_iters {
        if best.residual == 0.0 {
            break;
        }
        let Ok(r) = p.eval_f(1.0, &best.x) else { break };
        let Ok(fx) = p.eval_fx(1.0, &best.x) else {
            break;
        };
        let Ok(s) = RightInverse::factor(&fx, cfg.condition_max) else {
            break;
        };
        let Ok(dx) = s.apply(&r) else { break };
        let cand = &best.x - dx;
        if !domain.contains(&cand) || domain.boundary_distance(&cand) <= cfg.boundary_epsilon {
            break;
        }
        match p.residual(1.0, &cand) {
            Ok(rc) if rc < best.residual => {
                best = Correction {
                    x: cand,
                    residual: rc,
                    iterations: best.iterations + 1,
                }
            }
            _ => break,
        }
    }
    best
}

/// Newton projection `x ← x − S(t,x)·F(t,x)` onto `F(t, ·) = 0`.
///
/// Returns the input unchanged when it already satisfies `drift_tol`. Fails
/// if the budget runs out or an iterate leaves the domain.
pub fn newton_correct(
    p: &HomotopyProblem,
    t: f64,
    x: &Vector,
    cfg: &SolverConfig,
) -> Result<Correction, FlowError> {
    correct(p, t, x, cfg, true)
}

/// Terminal classification of a state, or `None` if the run should go on.
///
/// Precedence: boundary proximity, then `t = 1`, then divergence.
pub fn classify_termination(
    state: &TrajectoryState,
    p: &HomotopyProblem,
    cfg: &SolverConfig,
) -> Option<ContinuationOutcome> {
    let domain = p.domain();
    let distance = domain.boundary_distance(&state.x);
    if distance <= cfg.boundary_epsilon {
        return Some(ContinuationOutcome::BoundaryApproach {
            tau: state.t,
            x_near: state.x.clone(),
            residual: state.residual,
            boundary_distance: distance,
        });
    }
    if state.t >= 1.0 {
        if !domain.contains(&state.x) {
            return Some(ContinuationOutcome::StepFailure {
                t: state.t,
                reason: "final state lies outside the domain".into(),
            });
        }
        if state.residual <= cfg.zero_radius {
            return Some(ContinuationOutcome::InteriorZero {
                x1: state.x.clone(),
                residual: state.residual,
            });
        }
        return Some(ContinuationOutcome::StepFailure {
            t: state.t,
            reason: format!(
                "residual {:e} at t = 1 exceeds zero_radius {:e}",
                state.residual, cfg.zero_radius
            ),
        });
    }
    let norm = state.x.norm();
    if norm > 1.0 / cfg.min_step {
        return Some(ContinuationOutcome::Divergence { t: state.t, norm });
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GronwallReport {
    pub k_hat: f64,
    pub envelope_ok: bool,
    pub first_violation: Option<f64>,
}

const ENVELOPE_SLACK: f64 = 1e-9;

/// Checks `‖x(t)‖ ≤ (‖x(0)‖ + 1)·e^{K t} − 1` along the trace with `K` the
/// largest observed `‖a‖ / (‖x‖ + 1)`.
pub fn gronwall_monitor(trace: &Trace) -> GronwallReport {
    let k_hat = trace_growth_constant(trace);
    gronwall_check(trace, k_hat)
}

/// The envelope check for a claimed growth constant `k`.
pub fn gronwall_check(trace: &Trace, k: f64) -> GronwallReport {
    let Some(first) = trace.states.first() else {
        return GronwallReport {
            k_hat: k,
            envelope_ok: true,
            first_violation: None,
        };
    };
    let x0 = first.x.norm();
    let t0 = first.t;
    let first_violation = trace
        .states
        .iter()
        .find(|s| s.x.norm() > gronwall_envelope(x0, k, s.t - t0) + ENVELOPE_SLACK)
        .map(|s| s.t);
    GronwallReport {
        k_hat: k,
        envelope_ok: first_violation.is_none(),
        first_violation,
    }
}

/// `(‖x0‖ + 1)·e^{K t} − 1`
pub fn gronwall_envelope(x0_norm: f64, k: f64, t: f64) -> f64 {
    if t <= 0.0 {
        return x0_norm;
    }
    (x0_norm + 1.0) * (k * t).exp() - 1.0
}

fn trace_growth_constant(trace: &Trace) -> f64 {
    trace
        .states
        .iter()
        .map(|s| s.tangent_norm / (s.x.norm() + 1.0))
        .fold(0.0, f64::max)
}

// Dormand–Prince 5(4)
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Prediction {
    x: Vector,
    error_ratio: f64,
    max_condition: f64,
}

enum StageFailure {
    Singular(f64),
    NonFinite,
    Fault(FlowError),
}

fn predict(
    p: &HomotopyProblem,
    t: f64,
    x: &Vector,
    k1: &Vector,
    h: f64,
    cfg: &SolverConfig,
) -> Result<Prediction, StageFailure> {
    let mut k: Vec<Vector> = Vec::with_capacity(7);
    k.push(k1.clone());
    let mut max_condition: f64 = 1.0;
    let mut x5 = x.clone();
    for stage in 1..7 {
        let mut xs = x.clone();
        for (j, kj) in k.iter().enumerate() {
            let coef = A[stage][j];
            if coef != 0.0 {
                xs.axpy(h * coef, kj, 1.0);
            }
        }
        if stage == 6 {
            x5 = xs.clone();
        }
        let ts = if stage >= 5 { t + h } else { t + C[stage] * h };
        match tangent_with_condition(p, ts.min(1.0), &xs, cfg) {
            Ok((ks, cond)) => {
                max_condition = max_condition.max(cond);
                k.push(ks);
            }
            Err(FlowError::SingularJacobian { condition, .. }) => {
                return Err(StageFailure::Singular(condition))
            }
            Err(FlowError::Eval(EvalError::NonFinite { .. })) => {
                return Err(StageFailure::NonFinite)
            }
            Err(e) => return Err(StageFailure::Fault(e)),
        }
    }
    let mut err = Vector::zeros(x.len());
    for (ki, ei) in k.iter().zip(E.iter()) {
        if *ei != 0.0 {
            err.axpy(h * ei, ki, 1.0);
        }
    }
    let scale = cfg.step_abs_tol + cfg.step_rel_tol * x.norm().max(x5.norm());
    Ok(Prediction {
        error_ratio: err.norm() / scale,
        x: x5,
        max_condition,
    })
}

/// One uncontrolled predictor step of size `h` followed by correction at
/// `t + h`, without domain confinement.
fn advance(
    p: &HomotopyProblem,
    t: f64,
    x: &Vector,
    k1: &Vector,
    h: f64,
    cfg: &SolverConfig,
) -> Option<Correction> {
    let pred = predict(p, t, x, k1, h, cfg).ok()?;
    correct(p, (t + h).min(1.0), &pred.x, cfg, false).ok()
}

struct Run<'a> {
    p: &'a HomotopyProblem,
    cfg: &'a SolverConfig,
    trace: Trace,
}

impl Run<'_> {
    fn push_state(&mut self, t: f64, x: Vector, residual: f64, step_size: f64, tangent_norm: f64) {
        self.trace.states.push(TrajectoryState {
            t,
            x,
            residual,
            step_size,
            tangent_norm,
        });
    }

    fn tangent_norm_or_inf(&self, t: f64, x: &Vector) -> f64 {
        tangent_field(self.p, t, x, self.cfg)
            .map(|a| a.norm())
            .unwrap_or(f64::INFINITY)
    }

    fn finish(mut self, outcome: ContinuationOutcome) -> (Trace, ContinuationOutcome) {
        self.trace.growth_constant_estimate = trace_growth_constant(&self.trace);
        let t = self.trace.last().map_or(0.0, |s| s.t);
        self.trace
            .event(t, EventKind::Terminated, outcome.kind().as_str());
        (self.trace, outcome)
    }

    /// Bisects on the step length for a corrected point within
    /// `boundary_epsilon` of `∂D`, between an interior start and a step that
    /// reached or crossed the boundary.
    fn locate_boundary(
        &self,
        t: f64,
        x: &Vector,
        k1: &Vector,
        h: f64,
        at_h: Option<Correction>,
    ) -> Option<(f64, Correction)> {
        let eps = self.cfg.boundary_epsilon;
        let domain = self.p.domain();
        let near = |c: &Correction| domain.boundary_distance(&c.x) <= eps;
        if let Some(c) = at_h.as_ref().filter(|c| near(c)) {
            if domain.contains(&c.x) {
                return Some((h, c.clone()));
            }
        }
        let (mut lo, mut hi) = (0.0, h);
        let mut best_hi = at_h.filter(|c| near(c));
        for _ in 0..MAX_BISECTIONS {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            match advance(self.p, t, x, k1, mid, self.cfg) {
                Some(c) => {
                    let g = domain.signed_distance(&c.x);
                    if g > eps {
                        lo = mid;
                    } else if g >= 0.0 && domain.contains(&c.x) {
                        return Some((mid, c));
                    } else {
                        if near(&c) {
                            best_hi = Some(c);
                        } else {
                            best_hi = None;
                        }
                        hi = mid;
                    }
                }
                None => {
                    best_hi = None;
                    hi = mid;
                }
            }
        }
        best_hi.map(|c| (hi, c))
    }
}

/// Continues the zero `x0` of `F(0, ·)` towards `t = 1`.
///
/// Fails only on evaluator faults or an unusable start; every numerical
/// ending is an outcome.
pub fn integrate(
    p: &HomotopyProblem,
    x0: &Vector,
    cfg: &SolverConfig,
) -> Result<(Trace, ContinuationOutcome), FlowError> {
    cfg.validate()?;
    if x0.len() != p.dim_x() {
        return Err(FlowError::InvalidStart(format!(
            "x0 has length {}, expected {}",
            x0.len(),
            p.dim_x()
        )));
    }
    let domain = p.domain();
    if !domain.contains(x0) || domain.boundary_distance(x0) <= cfg.boundary_epsilon {
        return Err(FlowError::InvalidStart(
            "x0 must lie in the domain, farther than boundary_epsilon from its boundary".into(),
        ));
    }
    let r0 = p.residual(0.0, x0)?;
    if r0 > cfg.drift_tol {
        return Err(FlowError::InvalidStart(format!(
            "‖F(0, x0)‖ = {r0:e} exceeds drift_tol"
        )));
    }

    let mut run = Run {
        p,
        cfg,
        trace: Trace::default(),
    };
    let near_singular = cfg.condition_max / NEAR_SINGULAR_FACTOR;
    let mut t = 0.0;
    let mut x = x0.clone();
    let mut h = INITIAL_STEP.clamp(cfg.min_step, MAX_STEP);

    let (mut a, mut condition) = match tangent_with_condition(p, 0.0, x0, cfg) {
        Ok(v) => v,
        Err(FlowError::SingularJacobian { condition, .. }) => {
            run.push_state(0.0, x.clone(), r0, h, f64::INFINITY);
            run.trace.event(0.0, EventKind::Start, "");
            return Ok(run.finish(ContinuationOutcome::SingularJacobian {
                t: 0.0,
                x,
                condition,
            }));
        }
        Err(e) => return Err(e),
    };
    run.push_state(0.0, x.clone(), r0, h, a.norm());
    run.trace.event(0.0, EventKind::Start, "");

    let mut err_prev: f64 = 1e-4;
    let mut attempts = 0usize;

    loop {
        if let Some(outcome) = classify_termination(run.trace.last().expect("nonempty"), p, cfg) {
            return Ok(run.finish(outcome));
        }
        if attempts >= cfg.max_steps {
            return Ok(run.finish(ContinuationOutcome::StepFailure {
                t,
                reason: format!("max_steps = {} exhausted", cfg.max_steps),
            }));
        }
        attempts += 1;

        let remaining = 1.0 - t;
        let h_try = h.clamp(cfg.min_step, MAX_STEP).min(remaining);
        let final_step = h_try >= remaining;
        let t_new = if final_step { 1.0 } else { t + h_try };

        // Ok(Some(h_next)) shrinks and retries; Ok(None) means accepted
        let rejected: Option<f64> = match predict(p, t, &x, &a, h_try, cfg) {
            Err(StageFailure::Fault(e)) => return Err(e),
            Err(StageFailure::Singular(c)) => {
                condition = condition.max(c);
                run.trace.event(
                    t,
                    EventKind::SingularStage,
                    format!("h = {h_try:e}, condition {c:e}"),
                );
                Some(h_try * 0.5)
            }
            Err(StageFailure::NonFinite) => Some(h_try * 0.5),
            Ok(pred) if pred.error_ratio > 1.0 || !pred.error_ratio.is_finite() => {
                let fac = if pred.error_ratio.is_finite() {
                    (SAFETY * pred.error_ratio.powf(-0.2)).clamp(FAC_MIN, 1.0)
                } else {
                    FAC_MIN
                };
                Some(h_try * fac)
            }
            Ok(pred) => match correct(p, t_new, &pred.x, cfg, false) {
                Err(FlowError::Eval(EvalError::Shape { .. })) => {
                    return Err(correct(p, t_new, &pred.x, cfg, false).unwrap_err())
                }
                Err(e) => {
                    run.trace.event(t, EventKind::CorrectorRetry, e.to_string());
                    if let FlowError::SingularJacobian { condition: c, .. } = e {
                        condition = condition.max(c);
                    }
                    Some(h_try * 0.5)
                }
                Ok(corr) => {
                    let corr =
                        if t_new >= 1.0 && domain.signed_distance(&corr.x) > cfg.boundary_epsilon {
                            polish_endpoint(p, corr, cfg)
                        } else {
                            corr
                        };
                    let g = domain.signed_distance(&corr.x);
                    if g <= cfg.boundary_epsilon {
                        return Ok(match run.locate_boundary(t, &x, &a, h_try, Some(corr)) {
                            Some((theta, c)) => {
                                let tau = if final_step && theta >= h_try {
                                    1.0
                                } else {
                                    t + theta
                                };
                                let tn = run.tangent_norm_or_inf(tau, &c.x);
                                run.push_state(tau, c.x.clone(), c.residual, theta, tn);
                                run.trace.event(
                                    tau,
                                    EventKind::BoundaryLocated,
                                    format!("distance {:e}", domain.boundary_distance(&c.x)),
                                );
                                let outcome = classify_termination(
                                    run.trace.last().expect("nonempty"),
                                    p,
                                    cfg,
                                )
                                .expect("boundary state is terminal");
                                run.finish(outcome)
                            }
                            None => run.finish(ContinuationOutcome::StepFailure {
                                t,
                                reason: "could not localize the boundary crossing".into(),
                            }),
                        });
                    }
                    let tangent = tangent_with_condition(p, t_new, &corr.x, cfg);
                    let (tangent_norm, next) = match tangent {
                        Ok((a_new, c)) => (a_new.norm(), Some((a_new, c))),
                        Err(FlowError::SingularJacobian { condition: c, .. }) => {
                            if t_new < 1.0 {
                                run.push_state(
                                    t_new,
                                    corr.x.clone(),
                                    corr.residual,
                                    h_try,
                                    f64::INFINITY,
                                );
                                return Ok(run.finish(ContinuationOutcome::SingularJacobian {
                                    t: t_new,
                                    x: corr.x,
                                    condition: c,
                                }));
                            }
                            (f64::INFINITY, None)
                        }
                        Err(FlowError::Eval(EvalError::NonFinite { .. })) if t_new >= 1.0 => {
                            (f64::INFINITY, None)
                        }
                        Err(e) => return Err(e),
                    };
                    run.push_state(t_new, corr.x.clone(), corr.residual, h_try, tangent_norm);
                    t = t_new;
                    x = corr.x;
                    if let Some((a_new, c)) = next {
                        a = a_new;
                        condition = c.max(pred.max_condition);
                    }
                    let err = pred.error_ratio;
                    let fac = if err == 0.0 {
                        FAC_MAX
                    } else {
                        (SAFETY * err.powf(-PI_ALPHA) * err_prev.powf(PI_BETA))
                            .clamp(FAC_MIN, FAC_MAX)
                    };
                    err_prev = err.max(1e-4);
                    h = h_try * fac;
                    if condition > near_singular {
                        run.trace.event(
                            t,
                            EventKind::NearSingular,
                            format!("condition {condition:e}"),
                        );
                        h = h.min(0.5 * h_try);
                    }
                    None
                }
            },
        };

        let Some(h_next) = rejected else { continue };
        if h_next >= cfg.min_step {
            h = h_next;
            continue;
        }

        // The step controller stalled. Near t = 1 the limit x(t → 1) exists
        // under linear growth; try to reach it with the corrector alone.
        if remaining <= cfg.min_step.sqrt() {
            if let Ok(c) = correct(p, 1.0, &x, cfg, false) {
                let c = if domain.signed_distance(&c.x) > cfg.boundary_epsilon {
                    polish_endpoint(p, c, cfg)
                } else {
                    c
                };
                let tn = run.tangent_norm_or_inf(1.0, &c.x);
                run.push_state(1.0, c.x.clone(), c.residual, remaining, tn);
                run.trace
                    .event(1.0, EventKind::EndpointSnap, format!("from t = {t}"));
                t = 1.0;
                x = c.x;
                continue;
            }
        }
        let outcome = if condition > near_singular {
            ContinuationOutcome::SingularJacobian {
                t,
                x: x.clone(),
                condition,
            }
        } else {
            ContinuationOutcome::StepFailure {
                t,
                reason: format!("step size fell below min_step = {:e}", cfg.min_step),
            }
        };
        return Ok(run.finish(outcome));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::DomainSpec;
    use crate::problem::{
        make_fixed_point_homotopy, make_inverse_homotopy, FixedPointProblem,
        InverseFunctionProblem, Jacobian,
    };
    use crate::Matrix;

    fn v(xs: &[f64]) -> Vector {
        Vector::from_column_slice(xs)
    }

    fn scalar_fp(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        df: impl Fn(f64) -> f64 + Send + Sync + 'static,
        domain: DomainSpec,
    ) -> HomotopyProblem {
        make_fixed_point_homotopy(&FixedPointProblem::new(
            1,
            move |x| x.map(&f),
            Jacobian::analytic(move |x| Matrix::from_element(1, 1, df(x[0]))),
            domain,
        ))
        .unwrap()
    }

    fn bisect(g: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        for _ in 0..200 {
            let m = 0.5 * (a + b);
            if (g(m) < 0.0) == (g(a) < 0.0) {
                a = m
            } else {
                b = m
            }
        }
        0.5 * (a + b)
    }

    #[test]
    fn tangent_examples() {
        let cfg = SolverConfig::default();
        let c = v(&[0.3, -0.2]);
        let cc = c.clone();
        let p = make_fixed_point_homotopy(&FixedPointProblem::new(
            2,
            move |_| cc.clone(),
            Jacobian::analytic(|_| Matrix::zeros(2, 2)),
            DomainSpec::WholeSpace,
        ))
        .unwrap();
        for (t, x) in [(0.0, v(&[0.0, 0.0])), (0.7, v(&[5.0, -1.0]))] {
            assert!((tangent_field(&p, t, &x, &cfg).unwrap() - &c).norm() < 1e-15);
        }

        let cubic = make_inverse_homotopy(&InverseFunctionProblem::new(
            1,
            |x| x.map(|s| s * s * s + s),
            Jacobian::analytic(|x| Matrix::from_element(1, 1, 3.0 * x[0] * x[0] + 1.0)),
            v(&[2.0]),
        ))
        .unwrap();
        assert_eq!(
            tangent_field(&cubic, 0.0, &v(&[0.0]), &cfg).unwrap()[0],
            2.0
        );

        let p = scalar_fp(f64::cos, |s| -s.sin(), DomainSpec::WholeSpace);
        let a = tangent_field(&p, 0.5, &v(&[0.5]), &cfg).unwrap()[0];
        let closed = 0.5f64.cos() / (1.0 + 0.5 * 0.5f64.sin());
        assert!((a - closed).abs() < 1e-15);
        assert!((a - 0.70789).abs() < 1e-5);
        // independent route: finite-difference F_t, F_x and a scalar solve
        let h = 1e-6;
        let f = |t: f64, x: f64| x - t * x.cos();
        let ft = (f(0.5 + h, 0.5) - f(0.5 - h, 0.5)) / (2.0 * h);
        let fx = (f(0.5, 0.5 + h) - f(0.5, 0.5 - h)) / (2.0 * h);
        assert!((a + ft / fx).abs() < 1e-8);
    }

    #[test]
    fn tangent_is_minimum_norm_for_wide_jacobian() {
        let p = HomotopyProblem::new(
            2,
            1,
            |t, x: &Vector| v(&[x.norm_squared() - (1.0 + t).powi(2)]),
            |t, _| v(&[-2.0 * (1.0 + t)]),
            |_, x| Matrix::from_row_slice(1, 2, &[2.0 * x[0], 2.0 * x[1]]),
            DomainSpec::WholeSpace,
        )
        .unwrap();
        let x = v(&[0.6, 0.8]);
        let a = tangent_field(&p, 0.0, &x, &SolverConfig::default()).unwrap();
        // radial: a = (1+t) x / ‖x‖²
        assert!((a - &x).norm() < 1e-14);
    }

    #[test]
    fn newton_examples() {
        let cfg = SolverConfig::default();
        let linear = HomotopyProblem::new(
            1,
            1,
            |_, x| x.map(|s| s - 0.5),
            |_, _| v(&[0.0]),
            |_, _| Matrix::identity(1, 1),
            DomainSpec::WholeSpace,
        )
        .unwrap();
        let c = newton_correct(&linear, 0.3, &v(&[0.6]), &cfg).unwrap();
        assert_eq!(c.iterations, 1);
        assert!((c.x[0] - 0.5).abs() < 1e-15);

        let square = HomotopyProblem::new(
            1,
            1,
            |_, x| x.map(|s| s * s - 4.0),
            |_, _| v(&[0.0]),
            |_, x| Matrix::from_element(1, 1, 2.0 * x[0]),
            DomainSpec::WholeSpace,
        )
        .unwrap();
        // oracle: plain scalar Newton from 2.1
        let mut s = 2.1f64;
        let mut oracle_iters = 0;
        while (s * s - 4.0).abs() > cfg.drift_tol {
            s -= (s * s - 4.0) / (2.0 * s);
            oracle_iters += 1;
        }
        let c = newton_correct(&square, 1.0, &v(&[2.1]), &cfg).unwrap();
        assert!(c.iterations <= 3 && c.iterations == oracle_iters);
        assert!((c.x[0] - 2.0).abs() < 1e-10 && c.residual <= cfg.drift_tol);

        let already = v(&[2.0]);
        let c = newton_correct(&square, 1.0, &already, &cfg).unwrap();
        assert_eq!(c.iterations, 0);
        assert_eq!(c.x, already);
    }

    #[test]
    fn newton_failures() {
        let cfg = SolverConfig {
            corrector_max_iters: 2,
            ..SolverConfig::default()
        };
        let square = HomotopyProblem::new(
            1,
            1,
            |_, x| x.map(|s| s * s - 4.0),
            |_, _| v(&[0.0]),
            |_, x| Matrix::from_element(1, 1, 2.0 * x[0]),
            DomainSpec::ball(v(&[0.0]), 10.0),
        )
        .unwrap();
        assert!(matches!(
            newton_correct(&square, 1.0, &v(&[9.0]), &cfg),
            Err(FlowError::CorrectorDivergence { .. })
        ));
        assert!(matches!(
            newton_correct(&square, 1.0, &v(&[0.1]), &SolverConfig::default()),
            Err(FlowError::LeftDomain { .. })
        ));
        let flat = HomotopyProblem::new(
            2,
            2,
            |_, x| v(&[x[0] * x[0] + 1.0, x[1]]),
            |_, _| Vector::zeros(2),
            |_, x| Matrix::from_row_slice(2, 2, &[2.0 * x[0], 0.0, 0.0, 1.0]),
            DomainSpec::WholeSpace,
        )
        .unwrap();
        assert!(matches!(
            newton_correct(&flat, 1.0, &v(&[0.0, 0.0]), &SolverConfig::default()),
            Err(FlowError::SingularJacobian { .. })
        ));
    }

    fn check_trace_invariants(p: &HomotopyProblem, trace: &Trace, cfg: &SolverConfig) {
        assert_eq!(trace.states[0].t, 0.0);
        for w in trace.states.windows(2) {
            assert!(w[1].t > w[0].t);
        }
        let last = trace.states.len() - 1;
        for (i, s) in trace.states.iter().enumerate() {
            assert!(s.residual <= cfg.drift_tol, "state {i}: {}", s.residual);
            let recomputed = p.residual(s.t, &s.x).unwrap();
            assert!((recomputed - s.residual).abs() <= 1e-12);
            let inside = p.domain().contains(&s.x);
            assert!(
                inside || (i == last && p.domain().boundary_distance(&s.x) <= cfg.boundary_epsilon)
            );
            if let Ok(a) = tangent_field(p, s.t, &s.x, cfg) {
                let ft = p.eval_ft(s.t, &s.x).unwrap();
                let fx = p.eval_fx(s.t, &s.x).unwrap();
                assert!((fx * &a + &ft).norm() <= 1e-8 * (1.0 + ft.norm()));
                assert!((a.norm() - s.tangent_norm).abs() <= 1e-12 * (1.0 + s.tangent_norm));
            }
        }
        for w in trace.events.windows(2) {
            assert!(w[1].t >= w[0].t);
        }
    }

    #[test]
    fn constant_map_is_followed_exactly() {
        let cfg = SolverConfig::default();
        let p = scalar_fp(|_| 0.7, |_| 0.0, DomainSpec::WholeSpace);
        let (trace, outcome) = integrate(&p, &v(&[0.0]), &cfg).unwrap();
        match outcome {
            ContinuationOutcome::InteriorZero { x1, residual } => {
                assert!((x1[0] - 0.7).abs() < 1e-14);
                assert!(residual <= cfg.drift_tol);
            }
            other => panic!("{other:?}"),
        }
        for s in &trace.states {
            assert!((s.x[0] - 0.7 * s.t).abs() < 1e-14);
        }
        check_trace_invariants(&p, &trace, &cfg);
        let g = gronwall_monitor(&trace);
        assert!((g.k_hat - 0.7).abs() < 1e-12);
        assert!(g.envelope_ok);
    }

    #[test]
    fn escape_reaches_boundary_at_two_thirds() {
        let cfg = SolverConfig::default();
        let p = scalar_fp(|s| s + 0.5, |_| 1.0, DomainSpec::ball(v(&[0.0]), 1.0));
        let (trace, outcome) = integrate(&p, &v(&[0.0]), &cfg).unwrap();
        let ContinuationOutcome::BoundaryApproach {
            tau,
            x_near,
            boundary_distance,
            residual,
        } = outcome
        else {
            panic!("{outcome:?}")
        };
        // closed form x(t) = 0.5 t / (1 − t) meets x = 1 at t = 2/3
        assert!((tau - 2.0 / 3.0).abs() < 1e-3);
        assert!((x_near[0] - 1.0).abs() < 1e-3);
        assert!(boundary_distance <= cfg.boundary_epsilon);
        assert!(residual <= cfg.drift_tol);
        for s in &trace.states {
            assert!((s.x[0] - 0.5 * s.t / (1.0 - s.t)).abs() < 1e-7);
        }
        check_trace_invariants(&p, &trace, &cfg);
        assert!(gronwall_monitor(&trace).envelope_ok);
    }

    #[test]
    fn cos_fixed_point() {
        let cfg = SolverConfig::default();
        let p = scalar_fp(f64::cos, |s| -s.sin(), DomainSpec::WholeSpace);
        let (trace, outcome) = integrate(&p, &v(&[0.0]), &cfg).unwrap();
        let oracle = bisect(|s| s - s.cos(), 0.0, 1.0);
        let ContinuationOutcome::InteriorZero { x1, .. } = outcome else {
            panic!("{outcome:?}")
        };
        assert!((x1[0] - oracle).abs() < 1e-9);
        assert!((x1[0] - 0.7390851332).abs() < 1e-9);
        check_trace_invariants(&p, &trace, &cfg);
    }

    #[test]
    fn singular_start_is_reported() {
        let p = HomotopyProblem::new(
            2,
            2,
            |t, x| v(&[x[0] * x[0], x[1] - t]),
            |_, _| v(&[0.0, -1.0]),
            |_, x| Matrix::from_row_slice(2, 2, &[2.0 * x[0], 0.0, 0.0, 1.0]),
            DomainSpec::WholeSpace,
        )
        .unwrap();
        let (_, outcome) = integrate(&p, &Vector::zeros(2), &SolverConfig::default()).unwrap();
        assert!(matches!(outcome, ContinuationOutcome::SingularJacobian { t, .. } if t == 0.0));
    }

    #[test]
    fn superlinear_growth_diverges() {
        // F = 2 − 2/√x − 4t, so x(t) = (1 − 2t)⁻²
        let p = HomotopyProblem::new(
            1,
            1,
            |t, x| x.map(|s| 2.0 - 2.0 / s.sqrt() - 4.0 * t),
            |_, _| v(&[-4.0]),
            |_, x| Matrix::from_element(1, 1, x[0].powf(-1.5)),
            DomainSpec::custom(|x| x[0] > 0.0, |x| x[0].abs()),
        )
        .unwrap();
        let cfg = SolverConfig::default();
        let (trace, outcome) = integrate(&p, &v(&[1.0]), &cfg).unwrap();
        let ContinuationOutcome::Divergence { t, norm } = outcome else {
            panic!("{outcome:?}")
        };
        assert!(norm > 1.0 / cfg.min_step);
        assert!(t < 0.5 && t > 0.49);
        check_trace_invariants(&p, &trace, &cfg);
    }

    #[test]
    fn double_root_reaches_the_tangency() {
        let cfg = SolverConfig::default();
        let p = scalar_fp(|s| s * s + 0.25, |s| 2.0 * s, DomainSpec::WholeSpace);
        let (trace, outcome) = integrate(&p, &v(&[0.0]), &cfg).unwrap();
        match &outcome {
            ContinuationOutcome::InteriorZero { x1, .. } => assert!((x1[0] - 0.5).abs() <= 1e-3),
            ContinuationOutcome::SingularJacobian { t, .. } => assert!(*t >= 0.99),
            other => panic!("{other:?}"),
        }
        check_trace_invariants(&p, &trace, &cfg);
    }

    #[test]
    fn classification_precedence() {
        let cfg = SolverConfig::default();
        let p = scalar_fp(|s| s + 0.5, |_| 1.0, DomainSpec::ball(v(&[0.0]), 1.0));
        let state = |t: f64, x: f64, residual: f64| TrajectoryState {
            t,
            x: v(&[x]),
            residual,
            step_size: 0.01,
            tangent_norm: 1.0,
        };
        assert!(matches!(
            classify_termination(&state(1.0, 0.2, 1e-12), &p, &cfg),
            Some(ContinuationOutcome::InteriorZero { .. })
        ));
        assert!(matches!(
            classify_termination(&state(0.66, 1.0 - 1e-9, 1e-12), &p, &cfg),
            Some(ContinuationOutcome::BoundaryApproach { tau, .. }) if tau == 0.66
        ));
        assert!(matches!(
            classify_termination(&state(1.0, 1.0 - 1e-7, 1e-12), &p, &cfg),
            Some(ContinuationOutcome::BoundaryApproach { tau, .. }) if tau == 1.0
        ));
        assert!(classify_termination(&state(0.5, 0.2, 1e-12), &p, &cfg).is_none());
        let whole = scalar_fp(|s| s, |_| 1.0, DomainSpec::WholeSpace);
        assert!(matches!(
            classify_termination(&state(0.5, 2e12, 0.0), &whole, &cfg),
            Some(ContinuationOutcome::Divergence { .. })
        ));
    }

    #[test]
    fn gronwall_examples() {
        assert!((gronwall_envelope(0.0, 1.0, 1.0) - 1.718_281_828_459_045).abs() < 1e-15);
        let synthetic = Trace {
            states: (0..=10)
                .map(|i| {
                    let t = i as f64 / 10.0;
                    TrajectoryState {
                        t,
                        x: v(&[(3.0 * t).exp() - 1.0]),
                        residual: 0.0,
                        step_size: 0.1,
                        tangent_norm: 3.0 * (3.0 * t).exp(),
                    }
                })
                .collect(),
            ..Trace::default()
        };
        let claimed = gronwall_check(&synthetic, 1.0);
        assert!(!claimed.envelope_ok);
        assert_eq!(claimed.first_violation, Some(0.1));
        let own = gronwall_monitor(&synthetic);
        assert!((own.k_hat - 3.0).abs() < 1e-12);
        assert!(own.envelope_ok);
    }

    #[test]
    fn rejects_bad_start() {
        let cfg = SolverConfig::default();
        let p = scalar_fp(f64::cos, |s| -s.sin(), DomainSpec::WholeSpace);
        assert!(matches!(
            integrate(&p, &v(&[0.5]), &cfg),
            Err(FlowError::InvalidStart(_))
        ));
        assert!(matches!(
            integrate(&p, &v(&[0.0, 0.0]), &cfg),
            Err(FlowError::InvalidStart(_))
        ));
    }
}
