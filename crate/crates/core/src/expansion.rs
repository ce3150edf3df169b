//! Growing a certified boundary with a barrier-filtered virtual velocity.
//!
//! Control points move as single integrators. A hand-crafted reference velocity pushes
//! each point outward and evens out the spacing, and a QP keeps every certified
//! segment margin (and optionally the containment slack) nonnegative.

use rayon::prelude::*;

use crate::curve::{BoundaryState, Spacing, CENTRIPETAL};
use crate::dynamics::{StateBox, SystemModel};
use crate::error::{Error, Result};
use crate::feasibility::{certify_segment_with, containment_margin, fd_step, segment_gradient, CertifyOptions, SegmentCertificate};
use crate::geom::Vec2;
use crate::ode::rk4_step;
use crate::qp::{QpProblem, QpSolver, QpStatus};
use crate::scalar::{lit, Real};

/// How the first boundary is built.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialSet<T> {
    /// Level set `x^T P x = level` about `center`.
    Ellipse { p: [[T; 2]; 2], level: T, n: usize, spacing: Spacing, center: Vec2<T> },
    Circle { center: Vec2<T>, radius: T, n: usize },
    Points(Vec<Vec2<T>>),
}

impl<T: Real> InitialSet<T> {
    pub fn build(&self, beta: T) -> Result<BoundaryState<T>> {
        match self {
            InitialSet::Ellipse { p, level, n, spacing, center } => {
                Ok(BoundaryState::ellipse(*p, *level, *n, *spacing, beta)?.translated(*center))
            }
            InitialSet::Circle { center, radius, n } => BoundaryState::circle(*center, *radius, *n, beta),
            InitialSet::Points(points) => BoundaryState::new(points.clone(), beta),
        }
    }

    pub fn len(&self) -> usize {
        match self {
            InitialSet::Ellipse { n, .. } | InitialSet::Circle { n, .. } => *n,
            InitialSet::Points(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpansionConfig<T> {
    pub k_n: T,
    pub k_c: T,
    /// Slope of the linear class-K function.
    pub gamma: T,
    pub dt: T,
    pub max_steps: usize,
    /// Stop once the largest control point speed falls below this value.
    pub convergence_tol: T,
    /// `Q = q_weight * I`.
    pub q_weight: T,
    pub beta: T,
    pub certify: CertifyOptions,
    pub init: InitialSet<T>,
    /// State constraint box the boundary must stay inside; `None` disables the check.
    pub safe_box: Option<StateBox<T>>,
    pub enforce_containment: bool,
    /// Segments whose containment slack falls below this value get a QP row.
    pub containment_band: T,
    pub max_halvings: usize,
    /// Rejected trial steps that may add cut rows before the step size is halved.
    pub max_cut_rounds: usize,
    /// Iterations allowed for lifting an unverifiable initial boundary; 0 disables it.
    pub repair_iterations: usize,
    /// Keep a boundary copy every this many accepted steps; 0 disables snapshots.
    pub snapshot_every: usize,
}

impl<T: Real> Default for ExpansionConfig<T> {
    fn default() -> Self {
        Self {
            k_n: T::one(),
            k_c: T::one(),
            gamma: T::one(),
            dt: lit(0.01),
            max_steps: 100_000,
            convergence_tol: lit(1e-4),
            q_weight: T::one(),
            beta: lit(CENTRIPETAL),
            certify: CertifyOptions::default(),
            init: InitialSet::Ellipse {
                p: [[T::one(), lit(0.5)], [lit(0.5), T::one()]],
                level: lit(0.3),
                n: 50,
                spacing: Spacing::Angle,
                center: Vec2::zero(),
            },
            safe_box: None,
            enforce_containment: true,
            containment_band: lit(0.01),
            max_halvings: 6,
            max_cut_rounds: 8,
            repair_iterations: 0,
            snapshot_every: 0,
        }
    }
}

impl<T: Real> ExpansionConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("k_n", self.k_n),
            ("k_c", self.k_c),
            ("gamma", self.gamma),
            ("dt", self.dt),
            ("q_weight", self.q_weight),
        ];
        for (name, v) in positive {
            if !(v >= T::zero()) || !v.is_finite() {
                return Err(Error::Contract(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        for (name, v) in [("gamma", self.gamma), ("dt", self.dt), ("q_weight", self.q_weight)] {
            if !(v > T::zero()) {
                return Err(Error::Contract(format!("{name} must be positive, got {v}")));
            }
        }
        if self.init.len() < 4 {
            return Err(Error::InvalidBoundary(format!("need at least 4 control points, got {}", self.init.len())));
        }
        Ok(())
    }
}

/// Outcome of certifying one segment.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentOutcome<T> {
    Certified(SegmentCertificate<T>),
    Degenerate { index: usize, reason: String },
}

impl<T: Real> SegmentOutcome<T> {
    pub fn margin(&self) -> T {
        match self {
            SegmentOutcome::Certified(c) => c.margin,
            SegmentOutcome::Degenerate { .. } => T::neg_infinity(),
        }
    }

    pub fn certificate(&self) -> Option<&SegmentCertificate<T>> {
        match self {
            SegmentOutcome::Certified(c) => Some(c),
            SegmentOutcome::Degenerate { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationReport<T> {
    pub segments: Vec<SegmentOutcome<T>>,
    pub all_pass: bool,
    pub min_margin: T,
    pub failing_segments: Vec<usize>,
}

impl<T: Real> VerificationReport<T> {
    fn from_outcomes(segments: Vec<SegmentOutcome<T>>) -> Self {
        let failing_segments: Vec<usize> = segments.iter().enumerate().filter(|(_, s)| !(s.margin() >= T::zero())).map(|(i, _)| i).collect();
        let min_margin = segments.iter().map(SegmentOutcome::margin).fold(T::infinity(), T::min);
        Self { all_pass: failing_segments.is_empty(), min_margin, failing_segments, segments }
    }

    /// One line per failing segment, for diagnostics.
    pub fn describe_failures(&self) -> String {
        self.failing_segments
            .iter()
            .map(|&i| match &self.segments[i] {
                SegmentOutcome::Certified(c) => format!("segment {i}: margin {}", c.margin),
                SegmentOutcome::Degenerate { reason, .. } => format!("segment {i}: {reason}"),
            })
            .collect::<Vec<_>>()
            .join("; ")
    }
}

fn outcome<T: Real>(index: usize, r: Result<SegmentCertificate<T>>) -> SegmentOutcome<T> {
    match r {
        Ok(c) => SegmentOutcome::Certified(c),
        Err(e) => SegmentOutcome::Degenerate { index, reason: e.to_string() },
    }
}

/// Certifies every segment; degenerate segments count as failures.
pub fn verify<T: Real>(system: &SystemModel<T>, boundary: &BoundaryState<T>) -> VerificationReport<T> {
    verify_with(system, boundary, &CertifyOptions::default())
}

pub fn verify_with<T: Real>(system: &SystemModel<T>, boundary: &BoundaryState<T>, options: &CertifyOptions) -> VerificationReport<T> {
    let segments = (0..boundary.len())
        .into_par_iter()
        .map(|i| outcome(i, boundary.segment(i).and_then(|s| certify_segment_with(system, &s, options))))
        .collect();
    VerificationReport::from_outcomes(segments)
}

/// Whether every segment box lies inside `safe_box`.
pub fn containment_check<T: Real>(boundary: &BoundaryState<T>, safe_box: &StateBox<T>) -> bool {
    boundary.segments().all(|s| s.map(|s| containment_margin(&s, safe_box) >= T::zero()).unwrap_or(false))
}

/// Outward push plus spacing correction for every control point, stacked as `[x1, y1, ...]`.
pub fn reference_input<T: Real>(boundary: &BoundaryState<T>, k_n: T, k_c: T) -> Result<Vec<T>> {
    let pts = boundary.points();
    let n = pts.len();
    let half: T = lit(0.5);
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let prev = pts[(i + n - 1) % n];
        let next = pts[(i + 1) % n];
        let chord = next - prev;
        let unit = chord.normalized().ok_or_else(|| Error::DegenerateSegment {
            index: i,
            reason: "neighbouring control points coincide".into(),
        })?;
        let outward = unit.perp_cw();
        let mid = (prev + next) * half;
        let proj = prev + unit * (pts[i] - prev).dot(unit);
        let eta = outward * k_n + (mid - proj) * k_c;
        out.push(eta.x);
        out.push(eta.y);
    }
    Ok(out)
}

/// Filtered velocity for one boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SafeInput<T> {
    pub eta: Vec<T>,
    pub report: VerificationReport<T>,
    pub status: QpStatus,
    pub kkt_residual: T,
    /// Largest violation of the QP rows at the returned velocity.
    pub constraint_violation: T,
    pub containment_rows: usize,
}

/// Solves the barrier QP `min (eta - eta_ref)^T Q (eta - eta_ref)` subject to
/// `grad m_i . eta >= -gamma m_i` for every segment margin `m_i`.
pub fn safe_input<T: Real>(system: &SystemModel<T>, boundary: &BoundaryState<T>, config: &ExpansionConfig<T>) -> Result<SafeInput<T>> {
    safe_input_with_cuts(system, boundary, config, &[])
}

/// Which certified quantity a cut constrains.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CutKind {
    Margin,
    Containment,
}

/// Extra gradient row for one segment, taken at a rejected trial boundary.
///
/// The margin is only piecewise smooth; a gradient sampled on the far side of a kink
/// captures the slope the single central difference missed.
#[derive(Debug, Clone, PartialEq)]
pub struct Cut<T> {
    pub kind: CutKind,
    pub segment: usize,
    pub gradient: Vec<T>,
}

/// [`safe_input`] with additional cut rows `cut . eta >= -gamma * value(segment)`.
pub fn safe_input_with_cuts<T: Real>(system: &SystemModel<T>, boundary: &BoundaryState<T>, config: &ExpansionConfig<T>, cuts: &[Cut<T>]) -> Result<SafeInput<T>> {
    let n2 = 2 * boundary.len();
    let eta_ref = reference_input(boundary, config.k_n, config.k_c)?;
    let h = fd_step(boundary);
    let rows: Vec<(SegmentCertificate<T>, Vec<T>)> = (0..boundary.len())
        .into_par_iter()
        .map(|i| -> Result<_> {
            let cert = certify_segment_with(system, &boundary.segment(i)?, &config.certify)?;
            let grad = segment_gradient(boundary, i, h, |seg| Ok(certify_segment_with(system, seg, &config.certify)?.margin))?;
            Ok((cert, grad))
        })
        .collect::<Result<_>>()?;

    let containment: Vec<(T, Vec<T>)> = match (&config.safe_box, config.enforce_containment) {
        (Some(safe), true) => (0..boundary.len())
            .into_par_iter()
            .map(|i| -> Result<Option<(T, Vec<T>)>> {
                let c = containment_margin(&boundary.segment(i)?, safe);
                if c >= config.containment_band {
                    return Ok(None);
                }
                let grad = segment_gradient(boundary, i, h, |seg| Ok(containment_margin(seg, safe)))?;
                Ok(Some((c, grad)))
            })
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect(),
        _ => Vec::new(),
    };

    let w = config.q_weight + config.q_weight;
    let mut problem = QpProblem::diagonal(&vec![w; n2], eta_ref.iter().map(|&e| -w * e).collect())?;
    for (cert, grad) in &rows {
        problem.add_inequality(grad.clone(), -config.gamma * cert.margin)?;
    }
    for (c, grad) in &containment {
        problem.add_inequality(grad.clone(), -config.gamma * *c)?;
    }
    for cut in cuts {
        let value = match cut.kind {
            CutKind::Margin => rows[cut.segment].0.margin,
            CutKind::Containment => match &config.safe_box {
                Some(safe) => containment_margin(&boundary.segment(cut.segment)?, safe),
                None => continue,
            },
        };
        problem.add_inequality(cut.gradient.clone(), -config.gamma * value)?;
    }
    let sol = QpSolver::new(Default::default()).solve(&problem)?;
    let eta = match sol.status {
        QpStatus::Optimal => sol.z_star,
        _ => Vec::new(),
    };
    let constraint_violation = if eta.is_empty() {
        T::infinity()
    } else {
        (0..problem.num_constraints())
            .map(|k| {
                let (a, b) = problem.constraint(k);
                b - a.iter().zip(&eta).map(|(&x, &y)| x * y).sum::<T>()
            })
            .fold(T::zero(), T::max)
    };
    let report = VerificationReport::from_outcomes(rows.into_iter().map(|(c, _)| SegmentOutcome::Certified(c)).collect());
    Ok(SafeInput { eta, report, status: sol.status, kkt_residual: sol.kkt_residual, constraint_violation, containment_rows: containment.len() })
}

/// One RK4 step of the set state under `eta_fn`.
pub fn step_rk4<T, F>(boundary: &BoundaryState<T>, mut eta_fn: F, dt: T) -> Result<BoundaryState<T>>
where
    T: Real,
    F: FnMut(&BoundaryState<T>) -> Result<Vec<T>>,
{
    let beta = boundary.beta();
    let y = rk4_step(&boundary.to_flat(), dt, |s| {
        let b = BoundaryState::from_flat(s, beta)?;
        eta_fn(&b)
    })?;
    BoundaryState::from_flat(&y, beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpansionStatus {
    /// Largest control point speed fell below the tolerance.
    Converged,
    MaxSteps,
    /// Step-size halvings were exhausted; the last verified boundary is returned.
    ConvergedByFallback,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow<T> {
    pub step: usize,
    pub area: T,
    pub min_margin: T,
    pub dt: T,
}

/// Solver statistics over a whole run.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QpStats<T> {
    pub solves: usize,
    pub infeasible: usize,
    pub max_kkt_residual: T,
    pub max_constraint_violation: T,
}

#[derive(Debug, Clone)]
pub struct ExpansionResult<T> {
    pub boundary: BoundaryState<T>,
    pub initial: BoundaryState<T>,
    pub report: VerificationReport<T>,
    pub trace: Vec<TraceRow<T>>,
    pub snapshots: Vec<(usize, BoundaryState<T>)>,
    pub status: ExpansionStatus,
    pub steps: usize,
    pub rollbacks: usize,
    pub qp: QpStats<T>,
}

/// Area samples per segment used in traces.
const AREA_SAMPLES: usize = 16;

fn accepted<T: Real>(system: &SystemModel<T>, b: &BoundaryState<T>, config: &ExpansionConfig<T>) -> Option<VerificationReport<T>> {
    if config.enforce_containment {
        if let Some(safe) = &config.safe_box {
            if !containment_check(b, safe) {
                return None;
            }
        }
    }
    let report = verify_with(system, b, &config.certify);
    report.all_pass.then_some(report)
}

/// Cuts for every segment of `trial` that failed its margin or containment check.
fn rejection_cuts<T: Real>(system: &SystemModel<T>, current: &BoundaryState<T>, trial: &BoundaryState<T>, config: &ExpansionConfig<T>) -> Result<Vec<Cut<T>>> {
    let h = fd_step(current);
    let report = verify_with(system, trial, &config.certify);
    let mut cuts = Vec::new();
    for &i in &report.failing_segments {
        if let Ok(gradient) = segment_gradient(trial, i, h, |seg| Ok(certify_segment_with(system, seg, &config.certify)?.margin)) {
            cuts.push(Cut { kind: CutKind::Margin, segment: i, gradient });
        }
    }
    if let (Some(safe), true) = (&config.safe_box, config.enforce_containment) {
        for i in 0..trial.len() {
            let seg = trial.segment(i)?;
            if containment_margin(&seg, safe) < T::zero() {
                let gradient = segment_gradient(trial, i, h, |seg| Ok(containment_margin(seg, safe)))?;
                cuts.push(Cut { kind: CutKind::Containment, segment: i, gradient });
            }
        }
    }
    Ok(cuts)
}

/// Expands from the configured initial set, repairing it first when enabled.
pub fn expand<T: Real>(system: &SystemModel<T>, config: &ExpansionConfig<T>) -> Result<ExpansionResult<T>> {
    config.validate()?;
    let mut init = config.init.build(config.beta)?;
    if config.repair_iterations > 0 && !verify_with(system, &init, &config.certify).all_pass {
        init = repair(system, &init, &RepairOptions { max_iter: config.repair_iterations, ..Default::default() }, &config.certify)?;
    }
    expand_from(system, init, config, |_| {})
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RepairOptions<T> {
    /// Margin every segment is pushed toward.
    pub target: T,
    /// Largest control point displacement norm per iteration.
    pub step: T,
    pub max_iter: usize,
}

impl<T: Real> Default for RepairOptions<T> {
    fn default() -> Self {
        Self { target: lit(0.02), step: lit(0.01), max_iter: 2000 }
    }
}

/// Moves control points along the smallest displacement that lifts every margin to
/// the target, until the boundary verifies with at least half the target margin.
pub fn repair<T: Real>(system: &SystemModel<T>, boundary: &BoundaryState<T>, options: &RepairOptions<T>, certify: &CertifyOptions) -> Result<BoundaryState<T>> {
    let mut b = boundary.clone();
    let half: T = lit(0.5);
    for _ in 0..options.max_iter {
        let report = verify_with(system, &b, certify);
        if report.all_pass && report.min_margin >= options.target * half {
            return Ok(b);
        }
        if report.segments.iter().any(|s| s.certificate().is_none()) {
            return Err(Error::InitUnverifiable(format!("repair hit a degenerate boundary: {}", report.describe_failures())));
        }
        let h = fd_step(&b);
        let grads = (0..b.len())
            .into_par_iter()
            .map(|i| segment_gradient(&b, i, h, |seg| Ok(certify_segment_with(system, seg, certify)?.margin)))
            .collect::<Result<Vec<_>>>()?;
        let n2 = 2 * b.len();
        let mut problem = QpProblem::diagonal(&vec![T::one(); n2], vec![T::zero(); n2])?;
        for (outcome, g) in report.segments.iter().zip(grads) {
            problem.add_inequality(g, options.target - outcome.margin())?;
        }
        let sol = QpSolver::new(Default::default()).solve(&problem)?;
        if sol.status != QpStatus::Optimal {
            break;
        }
        let norm = sol.z_star.iter().map(|&v| v * v).sum::<T>().sqrt();
        let scale = if norm > options.step { options.step / norm } else { T::one() };
        let flat: Vec<T> = b.to_flat().iter().zip(&sol.z_star).map(|(&x, &e)| x + scale * e).collect();
        b = BoundaryState::from_flat(&flat, b.beta())?;
    }
    let report = verify_with(system, &b, certify);
    Err(Error::InitUnverifiable(format!(
        "repair did not reach a verified boundary (min margin {}): {}",
        report.min_margin,
        report.describe_failures()
    )))
}

/// Expands from `initial`, calling `observer` after every accepted step.
pub fn expand_from<T, O>(system: &SystemModel<T>, initial: BoundaryState<T>, config: &ExpansionConfig<T>, mut observer: O) -> Result<ExpansionResult<T>>
where
    T: Real,
    O: FnMut(&TraceRow<T>),
{
    config.validate()?;
    let report = verify_with(system, &initial, &config.certify);
    if !report.all_pass {
        return Err(Error::InitUnverifiable(report.describe_failures()));
    }
    if let (Some(safe), true) = (&config.safe_box, config.enforce_containment) {
        if !containment_check(&initial, safe) {
            return Err(Error::InitUnverifiable("initial boundary leaves the state constraint box".into()));
        }
    }

    let mut current = initial.clone();
    let mut current_report = report;
    let mut dt = config.dt;
    let mut halvings = 0;
    let mut rollbacks = 0;
    let mut stats = QpStats { solves: 0, infeasible: 0, max_kkt_residual: T::zero(), max_constraint_violation: T::zero() };
    let row0 = TraceRow { step: 0, area: current.area(AREA_SAMPLES)?, min_margin: current_report.min_margin, dt };
    observer(&row0);
    let mut trace = vec![row0];
    let mut snapshots = Vec::new();
    let mut status = ExpansionStatus::MaxSteps;
    let mut steps = 0;

    let mut first_cache: Option<SafeInput<T>> = None;
    let mut cuts: Vec<Cut<T>> = Vec::new();
    let mut cut_rounds = 0;
    let record = |s: &SafeInput<T>, stats: &mut QpStats<T>| {
        stats.solves += 1;
        if s.status == QpStatus::Optimal {
            stats.max_kkt_residual = stats.max_kkt_residual.max(s.kkt_residual);
            stats.max_constraint_violation = stats.max_constraint_violation.max(s.constraint_violation);
        } else {
            stats.infeasible += 1;
        }
    };

    while steps < config.max_steps {
        let first = match first_cache.take() {
            Some(f) => f,
            None => {
                let f = safe_input_with_cuts(system, &current, config, &cuts)?;
                record(&f, &mut stats);
                if f.status == QpStatus::Optimal {
                    let speed = f.eta.chunks_exact(2).map(|c| c[0].hypot(c[1])).fold(T::zero(), T::max);
                    if speed < config.convergence_tol {
                        status = ExpansionStatus::Converged;
                        steps += 1;
                        break;
                    }
                }
                f
            }
        };

        let candidate = if first.status == QpStatus::Optimal {
            let mut stage = 0;
            step_rk4(
                &current,
                |b| {
                    stage += 1;
                    if stage == 1 {
                        return Ok(first.eta.clone());
                    }
                    let s = safe_input_with_cuts(system, b, config, &cuts)?;
                    record(&s, &mut stats);
                    match s.status {
                        QpStatus::Optimal => Ok(s.eta),
                        _ => Err(Error::Contract("stage QP infeasible".into())),
                    }
                },
                dt,
            )
            .ok()
        } else {
            None
        };

        let verdict = candidate.map(|b| {
            let r = accepted(system, &b, config);
            (b, r)
        });
        match verdict {
            Some((b, Some(r))) => {
                steps += 1;
                current = b;
                current_report = r;
                cuts.clear();
                cut_rounds = 0;
                let row = TraceRow { step: steps, area: current.area(AREA_SAMPLES)?, min_margin: current_report.min_margin, dt };
                observer(&row);
                trace.push(row);
                if config.snapshot_every > 0 && steps % config.snapshot_every == 0 {
                    snapshots.push((steps, current.clone()));
                }
            }
            rejected => {
                rollbacks += 1;
                if first.status != QpStatus::Optimal {
                    status = ExpansionStatus::ConvergedByFallback;
                    break;
                }
                let new_cuts = match &rejected {
                    Some((b, None)) if cut_rounds < config.max_cut_rounds => rejection_cuts(system, &current, b, config)?,
                    _ => Vec::new(),
                };
                if new_cuts.is_empty() {
                    if halvings >= config.max_halvings {
                        status = ExpansionStatus::ConvergedByFallback;
                        break;
                    }
                    halvings += 1;
                    dt = dt * lit(0.5);
                    first_cache = Some(first);
                } else {
                    cut_rounds += 1;
                    cuts.extend(new_cuts);
                }
            }
        }
    }

    Ok(ExpansionResult {
        boundary: current,
        initial,
        report: current_report,
        trace,
        snapshots,
        status,
        steps,
        rollbacks,
        qp: stats,
    })
}
