//! Subcommands. Each returns the process exit code or an error that maps to one.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use safeset::expansion::{containment_check, expand, verify_with, VerificationReport};
use safeset::io;
use safeset::kernel::{kernel_contains, viability_kernel};
use safeset::safety_filter::{sdf_grid, simulate_batch, SafetyFilter, SignedDistance};
use safeset::{BoundaryState, StateBox, Vec2};

use crate::{exit, read_text, CliError, RunConfig};

/// Threshold on the signed distance below which a trajectory counts as unsafe.
pub const SAFETY_TOLERANCE: f64 = 1e-3;

fn out_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn io_err(path: &Path) -> impl Fn(safeset::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

fn write_boundary(path: &Path, b: &BoundaryState<f64>) -> Result<(), CliError> {
    io::write_boundary(create(path)?, b).map_err(io_err(path))
}

/// Loads a boundary CSV; unreadable content is a data error.
pub fn load_boundary(path: &Path, beta: f64) -> Result<BoundaryState<f64>, CliError> {
    let text = read_text(path)?;
    io::read_boundary(text.as_bytes(), beta).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn print_report(report: &VerificationReport<f64>) {
    for s in &report.segments {
        match s.certificate() {
            Some(c) => println!("segment {:>3}  margin {:+.6e}  b* {:+.6e}  L_b {:.6e}", c.index, c.margin, c.b_star, c.l_b_tau),
            None => println!("segment {:>3}  degenerate", report.segments.iter().position(|x| x == s).unwrap_or(0)),
        }
    }
}

pub fn cmd_expand(cfg: &RunConfig, out: &Path) -> Result<u8, CliError> {
    let system = cfg.system_model()?;
    let ecfg = cfg.expansion_config()?;
    out_dir(out)?;
    let result = expand(&system, &ecfg)?;
    write_boundary(&out.join("initial.csv"), &result.initial)?;
    write_boundary(&out.join("boundary.csv"), &result.boundary)?;
    let trace = out.join("trace.csv");
    io::write_trace(create(&trace)?, &result.trace).map_err(io_err(&trace))?;
    if !result.snapshots.is_empty() {
        let dir = out.join("snapshots");
        out_dir(&dir)?;
        for (step, b) in &result.snapshots {
            write_boundary(&dir.join(format!("boundary_{step:06}.csv")), b)?;
        }
    }
    let report = verify_with(&system, &result.boundary, &ecfg.certify);
    let report_path = out.join("report.csv");
    io::write_report(create(&report_path)?, &report, system.input_dim()).map_err(io_err(&report_path))?;

    let contained = ecfg.safe_box.as_ref().map_or(true, |b| containment_check(&result.boundary, b));
    let first = result.trace.first().map_or(f64::NAN, |r| r.area);
    let last = result.trace.last().map_or(f64::NAN, |r| r.area);
    println!("status {:?} after {} steps ({} rollbacks)", result.status, result.steps, result.rollbacks);
    println!("area {first:.6} -> {last:.6}");
    println!("min margin {:.6e}, contained {contained}", report.min_margin);
    println!(
        "qp solves {} (infeasible {}), max kkt residual {:.3e}",
        result.qp.solves, result.qp.infeasible, result.qp.max_kkt_residual
    );
    Ok(if report.all_pass && contained { exit::OK } else { exit::VERIFY_FAILED })
}

pub fn cmd_verify(cfg: &RunConfig, boundary: &Path, out: Option<&Path>) -> Result<u8, CliError> {
    let system = cfg.system_model()?;
    let b = load_boundary(boundary, cfg.curve.beta)?;
    let report = verify_with(&system, &b, &cfg.certify_options());
    print_report(&report);
    if let Some(out) = out {
        out_dir(out)?;
        let path = out.join("report.csv");
        io::write_report(create(&path)?, &report, system.input_dim()).map_err(io_err(&path))?;
    }
    let contained = cfg.safe_box()?.map_or(true, |s| containment_check(&b, &s));
    if !report.all_pass {
        println!("FAIL: segments {}", report.describe_failures());
    }
    if !contained {
        println!("FAIL: boundary leaves the safe set box");
    }
    if report.all_pass && contained {
        println!("PASS: min margin {:.6e}", report.min_margin);
        Ok(exit::OK)
    } else {
        Ok(exit::VERIFY_FAILED)
    }
}

pub fn cmd_simulate(cfg: &RunConfig, boundary: &Path, out: &Path, seed: Option<u64>) -> Result<u8, CliError> {
    let system = cfg.system_model()?;
    let b = load_boundary(boundary, cfg.curve.beta)?;
    let report = verify_with(&system, &b, &cfg.certify_options());
    if !report.all_pass {
        return Err(CliError::Precondition(format!("boundary does not verify: {}", report.describe_failures())));
    }
    let f = &cfg.filter;
    let filter = SafetyFilter::new(&b, system, cfg.filter_config())?;
    let runs = simulate_batch(&filter, f.trajectories, seed.unwrap_or(f.seed), f.horizon, f.dt_sim)?;
    out_dir(out)?;
    let mut min_h = f64::INFINITY;
    let mut max_delta = 0.0f64;
    for run in &runs {
        let path = out.join(format!("trajectory_{:04}.csv", run.index));
        io::write_trajectory(create(&path)?, &run.rows).map_err(io_err(&path))?;
        for r in &run.rows {
            min_h = min_h.min(r.h);
            if r.h <= SAFETY_TOLERANCE {
                max_delta = max_delta.max(r.delta);
            }
        }
    }
    println!("{} trajectories, min h {min_h:.6e}, max slack near the boundary {max_delta:.3e}", runs.len());
    Ok(if min_h >= -SAFETY_TOLERANCE { exit::OK } else { exit::VERIFY_FAILED })
}

pub fn cmd_kernel(cfg: &RunConfig, out: &Path, boundary: Option<&Path>) -> Result<u8, CliError> {
    let system = cfg.system_model()?;
    let k = &cfg.kernel;
    let grid = viability_kernel(&system, &cfg.kernel_box()?, (k.resolution[0], k.resolution[1]), k.input_samples, k.dt_k)?;
    out_dir(out)?;
    let path = out.join("kernel.csv");
    io::write_kernel(create(&path)?, &grid).map_err(io_err(&path))?;
    println!("kernel area {:.6} ({} of {} cells, {} sweeps)", grid.area(), grid.member_count(), grid.nx * grid.ny, grid.counts.len() - 1);
    if let Some(bpath) = boundary {
        let b = load_boundary(bpath, cfg.curve.beta)?;
        let (fraction, ok) = kernel_contains(&grid, &b, 1)?;
        println!("boundary inside kernel: ok = {ok}, fraction {fraction:.4}");
    }
    Ok(exit::OK)
}

fn padded_bounds(sdf: &SignedDistance<f64>) -> StateBox<f64> {
    let b = sdf.bounds();
    let pad = Vec2::new(0.25 * b.width(0), 0.25 * b.width(1));
    StateBox { lower: b.lower - pad, upper: b.upper + pad }
}

pub fn cmd_sdf(cfg: &RunConfig, boundary: &Path, out: &Path) -> Result<u8, CliError> {
    let b = load_boundary(boundary, cfg.curve.beta)?;
    let sdf = SignedDistance::new(&b, cfg.filter.samples_per_segment)?;
    let region = match (cfg.sdf.lower, cfg.sdf.upper) {
        (Some(lo), Some(hi)) => StateBox::new(Vec2::new(lo[0], lo[1]), Vec2::new(hi[0], hi[1]))?,
        _ => padded_bounds(&sdf),
    };
    out_dir(out)?;
    let grid = sdf_grid(&sdf, &region, cfg.sdf.resolution[0], cfg.sdf.resolution[1]);
    let path = out.join("sdf.csv");
    io::write_sdf_grid(create(&path)?, &grid).map_err(io_err(&path))?;
    let at_points: Vec<(Vec2<f64>, f64)> = b.points().iter().map(|&p| (p, sdf.query(p).h)).collect();
    let path = out.join("sdf_control_points.csv");
    io::write_sdf_grid(create(&path)?, &at_points).map_err(io_err(&path))?;
    let worst = at_points.iter().map(|p| p.1.abs()).fold(0.0, f64::max);
    println!("{} grid values, max |h| at control points {worst:.3e}", grid.len());
    Ok(exit::OK)
}

/// Runs a subcommand and reports errors on stderr.
pub fn finish(result: Result<u8, CliError>) -> u8 {
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(std::io::stderr(), "error: {e}");
            e.exit_code()
        }
    }
}

/// Output directory default when `--out` is absent.
pub fn default_out() -> PathBuf {
    PathBuf::from("out")
}
