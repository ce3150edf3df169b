//! Acceptance criteria 1 through 10, one test each.
//!
//! Every test prints a single `criterion N ... PASS|FAIL` line to stderr, bypassing the
//! capture of the test harness. Tests hold a common lock so their runtimes are measured
//! one at a time, and the long expansion runs are shared between criteria.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safeset::curve::{segment_box, Segment, Spacing};
use safeset::dynamics::StateBox;
use safeset::expansion::{expand, ExpansionConfig, ExpansionResult, InitialSet};
use safeset::feasibility::{b_star, grad_margin_with_step, fd_step, lp_lipschitz, solve_box_lp};
use safeset::kernel::{analytic_contains, analytic_di_kernel_area, kernel_contains, viability_kernel};
use safeset::qp::{QpOptions, QpProblem, QpSolver, QpStatus};
use safeset::safety_filter::{simulate_batch, FilterConfig, SafetyFilter, SeededRun};
use safeset::{BoundaryState, Error, SystemModel, Vec2};

const DENSE: usize = 1000;
const SEED: u64 = 2024;

fn serial() -> MutexGuard<'static, ()> {
    static LOCK: Mutex<()> = Mutex::new(());
    LOCK.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(id: u32, name: &str, pass: bool, elapsed: Duration, detail: &str) -> bool {
    let line = format!(
        "criterion {id:>2} [{name}]: {} ({:.2} s) {detail}\n",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stderr().write_all(line.as_bytes());
    pass
}

fn v(x: f64, y: f64) -> Vec2<f64> {
    Vec2::new(x, y)
}

fn di() -> SystemModel<f64> {
    SystemModel::double_integrator(1.0).unwrap()
}

fn pendulum() -> SystemModel<f64> {
    SystemModel::inverted_pendulum(Default::default()).unwrap()
}

fn pendulum_box() -> StateBox<f64> {
    StateBox::new(v(-FRAC_PI_2, -2.0), v(FRAC_PI_2, 2.0)).unwrap()
}

fn corner_min(c: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
    (0..1usize << c.len())
        .map(|mask| (0..c.len()).map(|i| c[i] * if mask >> i & 1 == 1 { hi[i] } else { lo[i] }).sum::<f64>())
        .fold(f64::INFINITY, f64::min)
}

fn random_box(rng: &mut ChaCha8Rng, l: usize) -> (Vec<f64>, Vec<f64>) {
    let lo: Vec<f64> = (0..l).map(|_| rng.gen_range(-3.0..1.0)).collect();
    let hi = lo.iter().map(|x| x + rng.gen_range(0.0..3.0)).collect();
    (lo, hi)
}

fn expansion_config(n: usize, safe_box: StateBox<f64>) -> ExpansionConfig<f64> {
    let mut cfg = ExpansionConfig::default();
    cfg.init = InitialSet::Ellipse { p: [[1.0, 0.5], [0.5, 1.0]], level: 0.3, n, spacing: Spacing::Angle, center: Vec2::zero() };
    cfg.safe_box = Some(safe_box);
    cfg.repair_iterations = 2000;
    cfg.snapshot_every = 1;
    cfg
}

struct Run {
    n: usize,
    outcome: Result<ExpansionResult<f64>, Error>,
    elapsed: Duration,
}

impl Run {
    /// Every boundary the loop accepted, starting with the initial one.
    fn accepted(&self) -> Vec<&BoundaryState<f64>> {
        match &self.outcome {
            Ok(r) => std::iter::once(&r.initial).chain(r.snapshots.iter().map(|s| &s.1)).collect(),
            Err(_) => Vec::new(),
        }
    }

    fn area(&self) -> Option<f64> {
        self.outcome.as_ref().ok().map(|r| r.boundary.area(64).unwrap())
    }
}

fn di_runs() -> &'static [Run] {
    static RUNS: OnceLock<Vec<Run>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let safe = StateBox::new(v(-1.0, f64::NEG_INFINITY), v(1.0, f64::INFINITY)).unwrap();
        [10, 20, 50]
            .into_iter()
            .map(|n| {
                let start = Instant::now();
                let outcome = expand(&di(), &expansion_config(n, safe));
                Run { n, outcome, elapsed: start.elapsed() }
            })
            .collect()
    })
}

struct PendulumRun {
    result: ExpansionResult<f64>,
    elapsed: Duration,
}

fn pendulum_run() -> &'static PendulumRun {
    static RUN: OnceLock<PendulumRun> = OnceLock::new();
    RUN.get_or_init(|| {
        let start = Instant::now();
        let mut cfg = expansion_config(50, pendulum_box());
        cfg.snapshot_every = 0;
        let result = expand(&pendulum(), &cfg).expect("pendulum expansion");
        PendulumRun { result, elapsed: start.elapsed() }
    })
}

struct FilterRuns {
    runs: Vec<SeededRun<f64>>,
    elapsed: Duration,
}

fn filter_runs() -> &'static FilterRuns {
    static RUNS: OnceLock<FilterRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let boundary = &di_runs()[2].outcome.as_ref().expect("N=50 expansion").boundary;
        let start = Instant::now();
        let filter = SafetyFilter::new(boundary, di(), FilterConfig::default()).unwrap();
        let runs = simulate_batch(&filter, 100, SEED, 10.0, 1e-3).unwrap();
        FilterRuns { runs, elapsed: start.elapsed() }
    })
}

#[test]
fn criterion_01_lp_oracle() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let l = rng.gen_range(1..=4);
        let (lo, hi) = random_box(&mut rng, l);
        let c: Vec<f64> = (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let sol = solve_box_lp(&c, &lo, &hi).unwrap();
        let direct: f64 = c.iter().zip(&sol.minimizer).map(|(a, b)| a * b).sum();
        worst = worst.max((sol.value - corner_min(&c, &lo, &hi)).abs()).max((direct - sol.value).abs());
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-12 && elapsed < Duration::from_secs(1);
    assert!(report(1, "LP oracle equivalence", pass, elapsed, &format!("max |value - corner min| = {worst:.2e}")));
}

#[test]
fn criterion_02_lp_lipschitz() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 2);
    let mut violations = 0;
    let mut tightest = 0.0f64;
    for _ in 0..10_000 {
        let l = rng.gen_range(1..=4);
        let (lo, hi) = random_box(&mut rng, l);
        let c: Vec<f64> = (0..l).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let d: Vec<f64> = c.iter().map(|x| x + rng.gen_range(-0.5..0.5)).collect();
        let gap = (solve_box_lp(&c, &lo, &hi).unwrap().value - solve_box_lp(&d, &lo, &hi).unwrap().value).abs();
        let dist = c.iter().zip(&d).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let bound = lp_lipschitz(&lo, &hi).unwrap() * dist;
        if gap > bound * (1.0 + 1e-12) + 1e-15 {
            violations += 1;
        }
        if bound > 0.0 {
            tightest = tightest.max(gap / bound);
        }
    }
    let elapsed = start.elapsed();
    let pass = violations == 0 && elapsed < Duration::from_secs(5);
    assert!(report(2, "LP Lipschitz bound", pass, elapsed, &format!("{violations} violations, largest gap/bound {tightest:.4}")));
}

#[test]
fn criterion_03_curve_contracts() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 3);
    let (mut endpoint, mut continuity, mut escapes) = (0.0f64, 0.0f64, 0usize);
    let mut segments = 0;
    while segments < 1000 {
        let pts: [Vec2<f64>; 4] = std::array::from_fn(|_| v(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)));
        let beta = rng.gen_range(0.0..1.0);
        let Ok(seg) = Segment::new(0, pts, beta) else { continue };
        if (0..3).any(|k| pts[k].distance(pts[k + 1]) < 1e-3) {
            continue;
        }
        segments += 1;
        endpoint = endpoint
            .max((seg.eval(seg.t_start()).unwrap().point - pts[1]).norm())
            .max((seg.eval(seg.t_end()).unwrap().point - pts[2]).norm());
        let bx = segment_box(&seg);
        escapes += (0..200).filter(|&k| !bx.contains(seg.point_at_fraction(k as f64 / 199.0))).count();
    }
    for _ in 0..200 {
        let n = rng.gen_range(5..14);
        let pts = (0..n)
            .map(|k| {
                let a = 2.0 * PI * (k as f64 + rng.gen_range(-0.3..0.3)) / n as f64;
                let r = rng.gen_range(0.5..1.5);
                v(r * a.cos(), r * a.sin())
            })
            .collect();
        let Ok(b) = BoundaryState::new(pts, rng.gen_range(0.0..1.0)) else { continue };
        for i in 0..n {
            let (a, c) = (b.segment(i).unwrap(), b.segment((i + 1) % n).unwrap());
            let (da, dc) = (a.eval(a.t_end()).unwrap().d1, c.eval(c.t_start()).unwrap().d1);
            continuity = continuity.max((da - dc).norm() / da.norm().max(dc.norm()).max(1e-300));
        }
    }
    let elapsed = start.elapsed();
    let pass = endpoint <= 1e-12 && continuity <= 1e-9 && escapes == 0 && elapsed < Duration::from_secs(10);
    assert!(report(
        3,
        "curve contracts",
        pass,
        elapsed,
        &format!("endpoint error {endpoint:.2e}, relative C1 jump {continuity:.2e}, {escapes} samples outside boxes")
    ));
}

#[test]
fn criterion_04_certificate_soundness() {
    let _guard = serial();
    let runs = di_runs();
    let start = Instant::now();
    let sys = di();
    let mut min_b = f64::INFINITY;
    let mut summary = Vec::new();
    for run in runs {
        let boundaries = run.accepted();
        let worst = boundaries
            .iter()
            .flat_map(|b| b.segments())
            .map(|seg| {
                let seg = seg.unwrap();
                (0..DENSE)
                    .map(|k| {
                        let cp = seg.at_fraction(k as f64 / (DENSE - 1) as f64);
                        let normal = cp.d1.normalized().expect("regular segment").perp();
                        b_star(&sys, cp.point, normal).unwrap().0
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .fold(f64::INFINITY, f64::min);
        min_b = min_b.min(worst);
        summary.push(if boundaries.is_empty() {
            format!("N={}: no accepted boundary", run.n)
        } else {
            format!("N={}: {} boundaries, min b* {worst:.3e}", run.n, boundaries.len())
        });
    }
    let elapsed = start.elapsed();
    let pass = min_b >= -1e-9 && elapsed < Duration::from_secs(120);
    assert!(report(4, "certificate soundness", pass, elapsed, &summary.join("; ")));
}

#[test]
fn criterion_05_control_point_count() {
    let _guard = serial();
    let runs = di_runs();
    let elapsed: Duration = runs.iter().map(|r| r.elapsed).sum();
    let mut detail = Vec::new();
    let mut pass = elapsed < Duration::from_secs(300);
    for run in runs {
        match &run.outcome {
            Ok(r) => {
                let (fraction, inside) = analytic_contains(&r.boundary, DENSE).unwrap();
                pass &= inside;
                detail.push(format!(
                    "N={}: area {:.4} ({:?}, {} steps, {:.0}% of samples in kernel)",
                    run.n,
                    run.area().unwrap(),
                    r.status,
                    r.steps,
                    100.0 * fraction
                ));
            }
            Err(e) => {
                pass = false;
                detail.push(format!("N={}: no expansion ({e})", run.n));
            }
        }
    }
    let areas: Vec<Option<f64>> = runs.iter().map(Run::area).collect();
    for w in areas.windows(2) {
        pass &= matches!((w[0], w[1]), (Some(a), Some(b)) if b >= 1.01 * a);
    }
    if let Some(a) = areas[2] {
        detail.push(format!("N=50 area / kernel area {:.3}", a / analytic_di_kernel_area::<f64>()));
    }
    assert!(report(5, "area grows with control points", pass, elapsed, &detail.join("; ")));
}

#[test]
fn criterion_06_pendulum() {
    let _guard = serial();
    let run = pendulum_run();
    let start = Instant::now();
    let sys = pendulum();
    let verified = safeset::verify(&sys, &run.result.boundary).all_pass;
    let kernel = viability_kernel(&sys, &pendulum_box(), (200, 200), 21, 0.05).unwrap();
    let (fraction, ok) = kernel_contains(&kernel, &run.result.boundary, 1).unwrap();
    let elapsed = run.elapsed + start.elapsed();
    let area = run.result.boundary.area(64).unwrap();
    let pass = verified && ok && elapsed < Duration::from_secs(600);
    assert!(report(
        6,
        "pendulum expansion inside grid kernel",
        pass,
        elapsed,
        &format!(
            "{:?} after {} steps, verified {verified}, area {area:.3} vs kernel {:.3}, {:.1}% of samples in kernel cells",
            run.result.status,
            run.result.steps,
            kernel.area(),
            100.0 * fraction
        )
    ));
}

#[test]
fn criterion_07_closed_loop() {
    let _guard = serial();
    let sims = filter_runs();
    let rows = sims.runs.iter().flat_map(|r| &r.rows);
    let (mut min_h, mut max_delta) = (f64::INFINITY, 0.0f64);
    let mut boundary_steps = 0;
    for row in rows {
        min_h = min_h.min(row.h);
        if row.h <= 1e-3 {
            boundary_steps += 1;
            max_delta = max_delta.max(row.delta);
        }
    }
    let pass = min_h >= -1e-3 && max_delta <= 1e-6 && sims.elapsed < Duration::from_secs(120);
    assert!(report(
        7,
        "closed-loop safety",
        pass,
        sims.elapsed,
        &format!("min h {min_h:.3e}; max slack {max_delta:.3e} over {boundary_steps} steps with h <= 1e-3")
    ));
}

#[test]
fn criterion_08_gradient_consistency() {
    let _guard = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 8);
    let sys = di();
    let (mut richardson, mut null_dir) = (0.0f64, 0.0f64);
    let mut pairs = 0;
    while pairs < 100 {
        // jittered, tilted ellipses like the boundaries the expansion loop produces
        let n = rng.gen_range(8..40);
        let (ax, ay, tilt) = (rng.gen_range(0.2..1.0), rng.gen_range(0.3..2.0), rng.gen_range(0.0..PI));
        let center = v(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3));
        let pts = (0..n)
            .map(|k| {
                let a = 2.0 * PI * (k as f64 + rng.gen_range(-0.15..0.15)) / n as f64;
                let r = rng.gen_range(0.9..1.1);
                let (x, y) = (r * ax * a.cos(), r * ay * a.sin());
                center + v(x * tilt.cos() - y * tilt.sin(), x * tilt.sin() + y * tilt.cos())
            })
            .collect();
        let Ok(b) = BoundaryState::new(pts, 0.5) else { continue };
        let i = rng.gen_range(0..n);
        let h = fd_step(&b);
        let (Ok(g1), Ok(g2)) = (grad_margin_with_step(&sys, &b, i, h), grad_margin_with_step(&sys, &b, i, 0.5 * h)) else { continue };
        pairs += 1;
        let diff = g1.iter().zip(&g2).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt();
        let norm = g2.iter().map(|a| a * a).sum::<f64>().sqrt();
        richardson = richardson.max(diff / norm.max(1e-12));
        null_dir = null_dir.max(g1.chunks_exact(2).map(|c| c[0]).sum::<f64>().abs());
    }
    let elapsed = start.elapsed();
    let pass = richardson <= 1e-4 && null_dir <= 1e-6 && elapsed < Duration::from_secs(30);
    assert!(report(
        8,
        "gradient consistency",
        pass,
        elapsed,
        &format!("max relative h vs h/2 change {richardson:.2e}, max translation derivative {null_dir:.2e}")
    ));
}

fn random_pd_problem(rng: &mut ChaCha8Rng) -> (QpProblem<f64>, Vec<f64>) {
    let n = rng.gen_range(2..=6);
    let m = rng.gen_range(1..=8);
    let factor: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let h = (0..n)
        .map(|i| (0..n).map(|j| (0..n).map(|k| factor[k][i] * factor[k][j]).sum::<f64>() + if i == j { 0.1 } else { 0.0 }).collect())
        .collect();
    let q = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    let anchor: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut p = QpProblem::new(h, q).unwrap();
    for _ in 0..m {
        let a: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b = a.iter().zip(&anchor).map(|(x, y)| x * y).sum::<f64>() - rng.gen_range(0.0..1.0);
        p.add_inequality(a, b).unwrap();
    }
    (p, anchor)
}

/// Uniform point on a random ray from the interior anchor, cut at the polytope boundary.
fn feasible_point(rng: &mut ChaCha8Rng, p: &QpProblem<f64>, anchor: &[f64]) -> Vec<f64> {
    let d: Vec<f64> = anchor.iter().map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut reach = 3.0f64;
    for k in 0..p.num_constraints() {
        let (a, b) = p.constraint(k);
        let rate: f64 = a.iter().zip(&d).map(|(x, y)| x * y).sum();
        let slack = a.iter().zip(anchor).map(|(x, y)| x * y).sum::<f64>() - b;
        if rate < 0.0 {
            reach = reach.min(slack / -rate);
        }
    }
    let t = rng.gen_range(0.0..1.0) * reach;
    anchor.iter().zip(&d).map(|(x, y)| x + t * y).collect()
}

#[test]
fn criterion_09_qp_certificates() {
    let _guard = serial();
    let mut worst_kkt = 0.0f64;
    let mut infeasible_rejections = 0;
    for run in di_runs() {
        if let Ok(r) = &run.outcome {
            worst_kkt = worst_kkt.max(r.qp.max_kkt_residual);
            infeasible_rejections += r.qp.infeasible;
        }
    }
    let pend = &pendulum_run().result.qp;
    worst_kkt = worst_kkt.max(pend.max_kkt_residual);
    infeasible_rejections += pend.infeasible;
    let filter_kkt = filter_runs().runs.iter().flat_map(|r| &r.rows).map(|row| row.qp_residual).fold(0.0, f64::max);
    worst_kkt = worst_kkt.max(filter_kkt);

    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED + 9);
    let mut solver = QpSolver::new(QpOptions::default());
    let (mut beaten, mut random_kkt) = (0usize, 0.0f64);
    for _ in 0..1000 {
        let (p, anchor) = random_pd_problem(&mut rng);
        let sol = solver.solve(&p).unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        random_kkt = random_kkt.max(sol.kkt_residual);
        let best = p.objective(&sol.z_star);
        for _ in 0..1000 {
            let z = feasible_point(&mut rng, &p, &anchor);
            if p.objective(&z) < best - 1e-9 * (1.0 + best.abs()) {
                beaten += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let pass = worst_kkt <= 1e-8 && random_kkt <= 1e-8 && beaten == 0 && elapsed < Duration::from_secs(30);
    assert!(report(
        9,
        "QP certificates",
        pass,
        elapsed,
        &format!(
            "max KKT residual in runs 5-7 {worst_kkt:.2e} ({infeasible_rejections} infeasible solves rolled back), random QPs {random_kkt:.2e}, {beaten} feasible points beat the optimum"
        )
    ));
}

#[test]
fn criterion_10_kernel_oracle() {
    let _guard = serial();
    let start = Instant::now();
    let safe = StateBox::new(v(-1.0, -2.5), v(1.0, 2.5)).unwrap();
    let kernel = viability_kernel(&di(), &safe, (200, 200), 21, 0.05).unwrap();
    let cmp = safeset::kernel::compare_with_analytic(&kernel);
    let elapsed = start.elapsed();
    let pass = cmp.fraction <= 0.02 && cmp.far_disagreements == 0 && elapsed < Duration::from_secs(60);
    assert!(report(
        10,
        "kernel oracle self-check",
        pass,
        elapsed,
        &format!(
            "{} disagreeing cells ({:.2}%), {} away from the analytic boundary, grid area {:.4} vs {:.4}",
            cmp.disagreements,
            100.0 * cmp.fraction,
            cmp.far_disagreements,
            kernel.area(),
            analytic_di_kernel_area::<f64>()
        )
    ));
}
